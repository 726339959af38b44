//! Diffusive rescaling of paths, the diffusivity estimate and the whitening
//! map `D`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::Point;
use crate::par::map_indices;
use crate::rng::{Domain, StreamId};
use crate::walk::{simulate_stream, WalkPath};

/// The polygonal path `t -> X(nt)/sqrt(n)` (possibly after a linear map),
/// stored by its `n + 1` knots.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPath {
    n: usize,
    dim: usize,
    knots: Vec<f64>,
}

impl ScaledPath {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knot(&self, k: usize) -> &[f64] {
        &self.knots[k * self.dim..(k + 1) * self.dim]
    }

    pub fn knot_value(&self, k: usize, axis: usize) -> f64 {
        self.knots[k * self.dim + axis]
    }

    /// Value at `t in [0, 1]`:
    /// `(X(floor(nt)) + (nt - floor(nt)) (X(floor(nt)+1) - X(floor(nt)))) / sqrt(n)`.
    pub fn value(&self, t: f64, out: &mut [f64]) {
        let s = (t.clamp(0.0, 1.0)) * self.n as f64;
        let k = (s.floor() as usize).min(self.n);
        let frac = s - k as f64;
        let a = self.knot(k);
        if k == self.n || frac == 0.0 {
            out[..self.dim].copy_from_slice(a);
            return;
        }
        let b = self.knot(k + 1);
        for i in 0..self.dim {
            out[i] = a[i] + frac * (b[i] - a[i]);
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value(t, &mut out);
        out
    }

    /// Apply a linear map to every knot.
    pub fn transformed(&self, map: &WhiteningMap) -> ScaledPath {
        let mut knots = vec![0.0; self.knots.len()];
        for k in 0..=self.n {
            map.apply_into(self.knot(k), &mut knots[k * self.dim..(k + 1) * self.dim]);
        }
        ScaledPath {
            n: self.n,
            dim: self.dim,
            knots,
        }
    }
}

/// `Z^n` of a path with `n >= 1` steps.
pub fn rescale(path: &WalkPath) -> Result<ScaledPath> {
    let n = path.steps();
    if n == 0 {
        return Err(Error::InvalidParameter("rescaling needs a path with n >= 1 steps".into()));
    }
    let dim = path.dim();
    let inv = 1.0 / (n as f64).sqrt();
    let mut knots = Vec::with_capacity((n + 1) * dim);
    for k in 0..=n {
        knots.extend((0..dim).map(|i| path.coord(k, i) as f64 * inv));
    }
    Ok(ScaledPath { n, dim, knots })
}

/// `D Z^n`.
pub fn rescale_whitened(path: &WalkPath, map: &WhiteningMap) -> Result<ScaledPath> {
    Ok(rescale(path)?.transformed(map))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityEstimate {
    pub sigma_hat: Vec<Vec<f64>>,
    pub n_used: usize,
    pub replicas: u64,
    /// Block-jackknife standard error of each entry.
    pub stderr: Vec<Vec<f64>>,
}

pub const JACKKNIFE_BLOCKS: usize = 50;
pub const EIGEN_FLOOR: f64 = 1e-9;

impl DiffusivityEstimate {
    pub fn dim(&self) -> usize {
        self.sigma_hat.len()
    }

    /// A known matrix with zero errors, for supplying `Sigma` directly.
    pub fn exact(sigma: Vec<Vec<f64>>) -> Self {
        let d = sigma.len();
        Self {
            sigma_hat: sigma,
            n_used: 0,
            replicas: 0,
            stderr: vec![vec![0.0; d]; d],
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.sigma_hat[i][j])
    }
}

fn covariance(samples: &[f64], d: usize, skip: Option<std::ops::Range<usize>>) -> DMatrix<f64> {
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    let rows = samples.len() / d;
    let kept = |r: usize| skip.as_ref().map_or(true, |s| !s.contains(&r));
    for r in (0..rows).filter(|&r| kept(r)) {
        for i in 0..d {
            mean[i] += samples[r * d + i];
        }
        count += 1;
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut c = DMatrix::zeros(d, d);
    for r in (0..rows).filter(|&r| kept(r)) {
        let x = &samples[r * d..(r + 1) * d];
        for i in 0..d {
            for j in 0..=i {
                c[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            c[(i, j)] /= (count - 1) as f64;
            c[(j, i)] = c[(i, j)];
        }
    }
    c
}

/// Sample covariance of `X(n)/sqrt(n)` over `replicas` quenched walks from
/// the origin, with block-jackknife standard errors.
pub fn estimate_sigma(env: &Environment, n: usize, replicas: u64, seed: u64) -> Result<DiffusivityEstimate> {
    if n < 100 || replicas < 1000 {
        return Err(Error::InvalidParameter(format!(
            "estimate_sigma needs n >= 100 and replicas >= 1000, got n = {n}, replicas = {replicas}"
        )));
    }
    let d = env.dimension();
    let base = StreamId::new(seed, Domain::Sigma, 0);
    let inv = 1.0 / (n as f64).sqrt();
    let ends = map_indices(0..replicas, |i| simulate_stream(env, Point::origin(d), n, base.with_index(i)).last());
    let samples: Vec<f64> = ends
        .iter()
        .flat_map(|p| (0..d).map(move |i| p.get(i) as f64 * inv))
        .collect();
    estimate_from_samples(&samples, d, n)
}

/// Covariance estimate from flat `d`-vectors (already rescaled).
pub fn estimate_from_samples(samples: &[f64], d: usize, n_used: usize) -> Result<DiffusivityEstimate> {
    let rows = samples.len() / d;
    if rows < 2 * JACKKNIFE_BLOCKS {
        return Err(Error::InvalidParameter(format!("{rows} samples are too few for a covariance estimate")));
    }
    let full = covariance(samples, d, None);
    let eig = SymmetricEigen::new(full.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > EIGEN_FLOOR) {
        return Err(Error::IllConditioned(format!(
            "smallest eigenvalue of the covariance estimate is {min:e}; increase n or the replica count"
        )));
    }
    let g = JACKKNIFE_BLOCKS;
    let block = rows / g;
    let leave_out: Vec<DMatrix<f64>> = (0..g)
        .map(|b| {
            let end = if b + 1 == g { rows } else { (b + 1) * block };
            covariance(samples, d, Some(b * block..end))
        })
        .collect();
    let mut stderr = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let m = leave_out.iter().map(|c| c[(i, j)]).sum::<f64>() / g as f64;
            let v = leave_out.iter().map(|c| (c[(i, j)] - m).powi(2)).sum::<f64>();
            stderr[i][j] = (v * (g - 1) as f64 / g as f64).sqrt();
        }
    }
    Ok(DiffusivityEstimate {
        sigma_hat: (0..d).map(|i| (0..d).map(|j| full[(i, j)]).collect()).collect(),
        n_used,
        replicas: rows as u64,
        stderr,
    })
}

/// `D` with `D Sigma D^T = I`, lower triangular with positive diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiteningMap {
    pub d: Vec<Vec<f64>>,
    pub source: DiffusivityEstimate,
}

/// `D = L^{-1}` for the Cholesky factor `Sigma = L L^T`.
pub fn build_whitening(estimate: &DiffusivityEstimate) -> Result<WhiteningMap> {
    let dim = estimate.dim();
    let m = estimate.matrix();
    if (0..dim).any(|i| (0..dim).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * (1.0 + m[(i, j)].abs()))) {
        return Err(Error::Factorization("covariance estimate is not symmetric".into()));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Factorization("covariance estimate is not positive definite".into()))?;
    let l = chol.l();
    let inv = l
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or_else(|| Error::Factorization("Cholesky factor is singular".into()))?;
    let mut d = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            d[i][j] = inv[(i, j)];
        }
    }
    Ok(WhiteningMap {
        d,
        source: estimate.clone(),
    })
}

impl WhiteningMap {
    pub fn identity(dim: usize) -> Self {
        let eye: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| f64::from(i == j)).collect()).collect();
        Self {
            d: eye.clone(),
            source: DiffusivityEstimate::exact(eye),
        }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.d.iter().enumerate() {
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }

    /// `D Sigma D^T` for the source estimate.
    pub fn whitened_covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        let dm = DMatrix::from_fn(n, n, |i, j| self.d[i][j]);
        &dm * self.source.matrix() * dm.transpose()
    }

    /// Text block with every entry to 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_rows = |rows: &[Vec<f64>]| {
            rows.iter()
                .map(|r| r.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
        };
        s.push_str("sigma_hat:\n");
        for r in fmt_rows(&self.source.sigma_hat) {
            s.push_str("  ");
            s.push_str(&r);
            s.push('\n');
        }
        s.push_str("D:\n");
        for r in fmt_rows(&self.d) {
            s.push_str("  ");
            s.push_str(&r);
            s.push('\n');
        }
        s
    }
}

/// `sigma_1 = D e_1 . e_1`.
pub fn sigma1(map: &WhiteningMap) -> f64 {
    map.d[0][0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(points: &[[i64; 2]]) -> WalkPath {
        let pts: Vec<Point> = points.iter().map(|p| Point::new(p).unwrap()).collect();
        WalkPath::from_points(&pts).unwrap()
    }

    #[test]
    fn knots_and_midpoints() {
        let p = path(&[[0, 0], [1, 0], [1, 1], [2, 1]]);
        let z = rescale(&p).unwrap();
        let r = 3f64.sqrt();
        assert_eq!(z.at(1.0 / 3.0), vec![1.0 / r, 0.0]);
        let mid = z.at(2.5 / 3.0);
        assert!((mid[0] - 1.5 / r).abs() < 1e-15 && (mid[1] - 1.0 / r).abs() < 1e-15);
        assert_eq!(z.at(1.0), vec![2.0 / r, 1.0 / r]);
    }

    #[test]
    fn zero_path() {
        let z = rescale(&WalkPath::new(Point::origin(2))).err();
        assert!(z.is_some());
        let p = path(&[[0, 0], [1, 0], [0, 0]]);
        let z = rescale(&p).unwrap();
        assert_eq!(z.at(1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn whitening_identity_and_scalar() {
        let est = DiffusivityEstimate::exact(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = build_whitening(&est).unwrap();
        assert_eq!(w.d, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(sigma1(&w), 1.0);
        let est = DiffusivityEstimate::exact(vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        let w = build_whitening(&est).unwrap();
        assert!((sigma1(&w) - 2f64.sqrt()).abs() < 1e-15);
        assert!((w.d[1][1] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn whitening_random_spd() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.1, 0.8, 0.4, 0.5, -0.1, 1.2]);
        let s = &a * a.transpose();
        let est = DiffusivityEstimate::exact((0..3).map(|i| (0..3).map(|j| s[(i, j)]).collect()).collect());
        let w = build_whitening(&est).unwrap();
        let id = w.whitened_covariance();
        for i in 0..3 {
            for j in 0..3 {
                assert!((id[(i, j)] - f64::from(i == j)).abs() < 1e-10);
            }
        }
        assert!(w.d[0][1] == 0.0 && w.d[0][2] == 0.0 && w.d[0][0] > 0.0);
    }

    #[test]
    fn not_positive_definite() {
        let est = DiffusivityEstimate::exact(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(build_whitening(&est), Err(Error::Factorization(_))));
    }

    #[test]
    fn degenerate_samples_are_ill_conditioned() {
        let samples: Vec<f64> = (0..400).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(estimate_from_samples(&samples, 2, 100), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn text_block_digits() {
        let w = WhiteningMap::identity(2);
        let t = w.to_text();
        assert!(t.contains("1.0000000000000000e0"));
    }
}
