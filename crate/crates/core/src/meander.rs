//! The limit law: Brownian meander in the first coordinate, independent
//! standard Brownian motion in the others.
//!
//! Densities follow the absorbed heat kernel
//! `g(t, x1, x2) = (2 pi t)^{-1/2} (exp(-(x2-x1)^2/2t) - exp(-(x1+x2)^2/2t))`
//! and the meander transition density
//! `q(t1, x1; t2, x2) = g(t2-t1, x1, x2) N~(x2/sqrt(1-t2)) / N~(x1/sqrt(1-t1))`,
//! with `q(0, 0; t, x) = t^{-3/2} x exp(-x^2/2t) N~(x/sqrt(1-t))`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{simpson, simpson_truncated, Quad, SimpsonOptions, TRUNCATION_SIGMAS};
use crate::report::Table;

/// `N~(v) = (2/pi)^{1/2} int_0^v exp(-u^2/2) du = erf(v / sqrt 2)`.
pub fn tilde_n(v: f64) -> Result<f64> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::Domain(format!("N~ needs v >= 0, got {v}")));
    }
    Ok(tilde_n_unchecked(v))
}

#[inline]
fn tilde_n_unchecked(v: f64) -> f64 {
    if v == f64::INFINITY {
        1.0
    } else {
        libm::erf(v * FRAC_1_SQRT_2)
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `N~(x / sqrt(1 - t))`, equal to 1 at `t = 1`.
#[inline]
fn tilde_n_at(t: f64, x: f64) -> f64 {
    if t >= 1.0 {
        1.0
    } else {
        tilde_n_unchecked(x / (1.0 - t).sqrt())
    }
}

#[inline]
fn g_unchecked(t: f64, x1: f64, x2: f64) -> f64 {
    let d = x2 - x1;
    (-d * d / (2.0 * t)).exp() * -(-2.0 * x1 * x2 / t).exp_m1() / (2.0 * PI * t).sqrt()
}

/// Heat kernel of Brownian motion killed at 0.
pub fn g_kernel(t: f64, x1: f64, x2: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("g needs t > 0, got {t}")));
    }
    if !(x1 >= 0.0 && x2 >= 0.0) {
        return Err(Error::Domain(format!("g needs x1, x2 >= 0, got ({x1}, {x2})")));
    }
    Ok(g_unchecked(t, x1, x2))
}

#[inline]
fn density_from_origin_unchecked(t: f64, x: f64) -> f64 {
    t.powf(-1.5) * x * (-x * x / (2.0 * t)).exp() * tilde_n_at(t, x)
}

/// `q(0, 0; t, x)`: density of the meander at time `t`.
pub fn meander_density_from_origin(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} must lie in (0, 1]")));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("x = {x} must be >= 0")));
    }
    Ok(density_from_origin_unchecked(t, x))
}

/// A transition density evaluation `q(t1, x1; t2, x2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanderKernelQuery {
    pub t1: f64,
    pub x1: f64,
    pub t2: f64,
    pub x2: f64,
}

#[inline]
fn transition_unchecked(t1: f64, x1: f64, t2: f64, x2: f64) -> f64 {
    g_unchecked(t2 - t1, x1, x2) * tilde_n_at(t2, x2) / tilde_n_at(t1, x1)
}

pub fn meander_density(q: &MeanderKernelQuery) -> Result<f64> {
    let MeanderKernelQuery { t1, x1, t2, x2 } = *q;
    if !(t1 >= 0.0 && t1 < t2 && t2 <= 1.0) {
        return Err(Error::Domain(format!("times must satisfy 0 <= t1 < t2 <= 1, got ({t1}, {t2})")));
    }
    if !(x1 >= 0.0 && x2 >= 0.0) {
        return Err(Error::Domain(format!("positions must be >= 0, got ({x1}, {x2})")));
    }
    if t1 == 0.0 {
        if x1 != 0.0 {
            return Err(Error::Domain("the meander starts at 0: t1 = 0 needs x1 = 0".into()));
        }
        return meander_density_from_origin(t2, x2);
    }
    if x1 == 0.0 {
        return Err(Error::SingularQuery(format!(
            "N~(x1/sqrt(1-t1)) vanishes at x1 = 0, t1 = {t1}"
        )));
    }
    Ok(transition_unchecked(t1, x1, t2, x2))
}

/// Both sides of the Chapman-Kolmogorov identity through the intermediate
/// time `s`: `(q(t1, x1; t2, x2), int_0^inf q(t1, x1; s, z) q(s, z; t2, x2) dz)`.
pub fn chapman_kolmogorov(q: &MeanderKernelQuery, s: f64, opts: &SimpsonOptions) -> Result<(f64, f64)> {
    let direct = meander_density(q)?;
    if !(s > q.t1 && s < q.t2) {
        return Err(Error::Domain(format!("s = {s} must lie strictly between t1 and t2")));
    }
    let MeanderKernelQuery { t1, x1, t2, x2 } = *q;
    let left = |z: f64| {
        if t1 == 0.0 {
            density_from_origin_unchecked(s, z)
        } else {
            transition_unchecked(t1, x1, s, z)
        }
    };
    // beyond 12 standard deviations of either Gaussian factor the integrand is below 1e-30
    let upper = x1.max(x2) + 12.0 * (s - t1).max(t2 - s).sqrt();
    let integral = simpson(
        |z| if z <= 0.0 { 0.0 } else { left(z) * transition_unchecked(s, z, t2, x2) },
        0.0,
        upper,
        opts,
    )?;
    Ok((direct, integral.value))
}

/// `P[W+(1) > u_1, B_i(1) > u_i for i >= 2]` for the product limit law;
/// `u.len()` is the dimension.
pub fn endpoint_survival(u: &[f64]) -> Result<f64> {
    let Some((&u1, rest)) = u.split_first() else {
        return Err(Error::InvalidParameter("empty threshold vector".into()));
    };
    if !(u1 >= 0.0) {
        return Err(Error::Domain(format!("u1 = {u1} must be >= 0")));
    }
    Ok((-0.5 * u1 * u1).exp() * rest.iter().map(|&ui| normal_cdf(-ui)).product::<f64>())
}

fn check_box(a: f64, b: f64) -> Result<()> {
    if a.is_nan() || b.is_nan() || !(a < b) {
        return Err(Error::Domain(format!("box ({a}, {b}] must have a < b")));
    }
    Ok(())
}

/// `P[W+(t) <= u]` by quadrature, truncated `TRUNCATION_SIGMAS` scale units
/// above 0.
pub fn meander_cdf(t: f64, u: f64, opts: &SimpsonOptions) -> Result<Quad> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} must lie in (0, 1]")));
    }
    if !(u > 0.0) {
        if u == 0.0 {
            return Ok(Quad {
                value: 0.0,
                error: 0.0,
                intervals: 0,
                truncation: 0.0,
            });
        }
        return Err(Error::Domain(format!("u = {u} must be >= 0")));
    }
    let cutoff = (TRUNCATION_SIGMAS + 1.0) * t.sqrt();
    simpson_truncated(
        |x| density_from_origin_unchecked(t, x),
        0.0,
        u,
        cutoff,
        // int_c^inf t^{-3/2} x exp(-x^2/2t) dx
        |c| (-c * c / (2.0 * t)).exp() / t.sqrt(),
        opts,
    )
}

/// `P[W+(t) <= u1] * prod_j P[B_j(t) in (a_j, b_j]]`.
pub fn single_time_box_probability(t: f64, u1: f64, boxes: &[(f64, f64)]) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} must lie in (0, 1]")));
    }
    if !(u1 > 0.0) {
        return Err(Error::Domain(format!("u1 = {u1} must be > 0")));
    }
    let first = meander_cdf(t, u1, &SimpsonOptions::default())?.value;
    let mut p = first;
    for &(a, b) in boxes {
        check_box(a, b)?;
        p *= normal_cdf(b / t.sqrt()) - normal_cdf(a / t.sqrt());
    }
    Ok(p)
}

/// Event `{W+(t_i) <= u_i, B_j(t_i) in (a_ij, b_ij] for all i, j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FddQuery {
    pub times: Vec<f64>,
    /// First-coordinate upper bounds; `f64::INFINITY` for no constraint.
    pub upper: Vec<f64>,
    /// `boxes[i][j]` constrains coordinate `j + 2` at time `times[i]`.
    pub boxes: Vec<Vec<(f64, f64)>>,
}

pub const MAX_FDD_ORDER: usize = 3;

impl FddQuery {
    pub fn single(t: f64, u1: f64, boxes: Vec<(f64, f64)>) -> Self {
        Self {
            times: vec![t],
            upper: vec![u1],
            boxes: vec![boxes],
        }
    }

    pub fn order(&self) -> usize {
        self.times.len()
    }

    /// Dimension of the process the query refers to.
    pub fn dim(&self) -> usize {
        self.boxes.first().map_or(1, |b| b.len() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.times.len();
        if k == 0 {
            return Err(Error::InvalidParameter("FDD query without times".into()));
        }
        if k > MAX_FDD_ORDER {
            return Err(Error::Unsupported(format!(
                "FDD order {k} exceeds the supported maximum of {MAX_FDD_ORDER}"
            )));
        }
        if self.upper.len() != k || self.boxes.len() != k {
            return Err(Error::InvalidParameter("times, upper and boxes must have equal lengths".into()));
        }
        let mut prev = 0.0;
        for &t in &self.times {
            if !(t > prev && t <= 1.0) {
                return Err(Error::Domain(format!("times must satisfy 0 < t_1 < ... <= 1, got {:?}", self.times)));
            }
            prev = t;
        }
        for &u in &self.upper {
            if !(u > 0.0) {
                return Err(Error::Domain(format!("u = {u} must be > 0")));
            }
        }
        let width = self.boxes[0].len();
        for b in &self.boxes {
            if b.len() != width {
                return Err(Error::InvalidParameter("every time needs the same number of boxes".into()));
            }
            for &(lo, hi) in b {
                check_box(lo, hi)?;
            }
        }
        Ok(())
    }

    /// Whether a `d`-vector sequence `values[i]` (one per time) lies in the
    /// event.
    pub fn contains(&self, values: &[&[f64]]) -> bool {
        values.iter().enumerate().all(|(i, v)| {
            v[0] <= self.upper[i]
                && self.boxes[i]
                    .iter()
                    .enumerate()
                    .all(|(j, &(a, b))| v[j + 1] > a && v[j + 1] <= b)
        })
    }
}

struct Chain<'a> {
    q: &'a FddQuery,
    opts: SimpsonOptions,
}

impl Chain<'_> {
    /// `P[W+(t_i) <= u_i for i > level | W+(t_level) = x]`, `level >= 1`
    /// counted from 1.
    fn meander_rest(&self, level: usize, x: f64) -> Result<f64> {
        let k = self.q.order();
        if level == k {
            return Ok(1.0);
        }
        let t1 = self.q.times[level - 1];
        let t2 = self.q.times[level];
        let u = self.q.upper[level];
        let s = t2 - t1;
        if level + 1 == k {
            if t2 >= 1.0 {
                // closed form of int_0^u g(s, x, y) dy
                let r = s.sqrt();
                let mass = if u.is_finite() {
                    normal_cdf((u - x) / r) - normal_cdf(-x / r) - normal_cdf((u + x) / r) + normal_cdf(x / r)
                } else {
                    tilde_n_unchecked(x / r)
                };
                return Ok((mass / tilde_n_at(t1, x)).min(1.0));
            }
            if u == f64::INFINITY {
                return Ok(1.0);
            }
        }
        let cutoff = x + TRUNCATION_SIGMAS * s.sqrt();
        let mut err = None;
        let q = simpson_truncated(
            |y| {
                let w = transition_unchecked(t1, x, t2, y);
                if w == 0.0 || err.is_some() {
                    return 0.0;
                }
                match self.meander_rest(level + 1, y) {
                    Ok(v) => w * v,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            },
            0.0,
            u,
            cutoff,
            |_| 0.0,
            &self.opts,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(q.value.clamp(0.0, 1.0))
    }

    fn meander_part(&self) -> Result<f64> {
        let t = self.q.times[0];
        let u = self.q.upper[0];
        if self.q.order() == 1 {
            return Ok(meander_cdf(t, u, &self.opts)?.value);
        }
        let cutoff = (TRUNCATION_SIGMAS + 1.0) * t.sqrt();
        let mut err = None;
        let q = simpson_truncated(
            |x| {
                let w = density_from_origin_unchecked(t, x);
                if w == 0.0 || err.is_some() {
                    return 0.0;
                }
                match self.meander_rest(1, x) {
                    Ok(v) => w * v,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            },
            0.0,
            u,
            cutoff,
            |_| 0.0,
            &self.opts,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(q.value.clamp(0.0, 1.0))
    }

    /// `P[B(t_i) in box_i for i > level | B(t_level) = x]` for one transverse
    /// coordinate; `level = 0` means `B(0) = 0`.
    fn gauss_rest(&self, coord: usize, level: usize, x: f64) -> Result<f64> {
        let k = self.q.order();
        if level == k {
            return Ok(1.0);
        }
        let t0 = if level == 0 { 0.0 } else { self.q.times[level - 1] };
        let s = self.q.times[level] - t0;
        let r = s.sqrt();
        let (a, b) = self.q.boxes[level][coord];
        if level + 1 == k {
            return Ok(normal_cdf((b - x) / r) - normal_cdf((a - x) / r));
        }
        let lo = a.max(x - TRUNCATION_SIGMAS * r);
        let hi = b.min(x + TRUNCATION_SIGMAS * r);
        if lo >= hi {
            return Ok(0.0);
        }
        let mut err = None;
        let q = simpson(
            |y| {
                if err.is_some() {
                    return 0.0;
                }
                match self.gauss_rest(coord, level + 1, y) {
                    Ok(v) => normal_pdf((y - x) / r) / r * v,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            },
            lo,
            hi,
            &self.opts,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(q.value.clamp(0.0, 1.0))
    }
}

/// Probability of an FDD event under the product law, by nested adaptive
/// quadrature. Supports up to `MAX_FDD_ORDER` times.
pub fn fdd_probability(query: &FddQuery) -> Result<f64> {
    fdd_probability_with(query, &SimpsonOptions::default())
}

pub fn fdd_probability_with(query: &FddQuery, opts: &SimpsonOptions) -> Result<f64> {
    query.validate()?;
    let chain = Chain { q: query, opts: *opts };
    let mut p = chain.meander_part()?;
    for j in 0..query.boxes[0].len() {
        p *= chain.gauss_rest(j, 0, 0.0)?;
    }
    Ok(p)
}

/// `u -> P[W+(t) <= u]` tabulated once and evaluated by cubic Hermite
/// interpolation, using the density as the derivative.
#[derive(Clone, Debug)]
pub struct MeanderMarginalCdf {
    t: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MeanderMarginalCdf {
    pub const CELLS: usize = 4096;

    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("t = {t} must lie in (0, 1]")));
        }
        let top = (TRUNCATION_SIGMAS + 1.0) * t.sqrt();
        let step = top / Self::CELLS as f64;
        let opts = SimpsonOptions {
            tol: 1e-13,
            initial_panels: 2,
            ..SimpsonOptions::default()
        };
        let mut values = Vec::with_capacity(Self::CELLS + 1);
        let mut slopes = Vec::with_capacity(Self::CELLS + 1);
        let mut acc = 0.0;
        values.push(0.0);
        slopes.push(0.0);
        for i in 1..=Self::CELLS {
            let (a, b) = ((i - 1) as f64 * step, i as f64 * step);
            acc += simpson(|x| density_from_origin_unchecked(t, x), a, b, &opts)?.value;
            values.push(acc);
            slopes.push(density_from_origin_unchecked(t, b));
        }
        Ok(Self { t, step, values, slopes })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn cdf(&self, u: f64) -> f64 {
        if !(u > 0.0) {
            return 0.0;
        }
        let pos = u / self.step;
        let i = pos.floor() as usize;
        if i >= Self::CELLS {
            return 1.0;
        }
        let s = pos - i as f64;
        let h = self.step;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1;
        v.clamp(0.0, 1.0)
    }
}

/// One meander path on the grid `i / (m - 1)`, `i = 0..m`, exact at the grid
/// points.
///
/// Steps follow the meander transition `g(t - s, x, y) N~_t(y) / N~_s(x)`
/// by rejection: a Gaussian proposal is kept with the probability that the
/// bridge between `x` and `y` avoids 0, then with probability `N~_t(y)`.
/// The mean number of proposals per path is `O(m)`.
pub fn sample_meander<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("meander resolution m = {m} must be >= 2")));
    }
    let dt = 1.0 / (m - 1) as f64;
    let sd = dt.sqrt();
    let mut out = Vec::with_capacity(m);
    out.push(0.0);
    // from the origin the proposal is the Rayleigh density y / t exp(-y^2 / 2t)
    let t = dt;
    let first = loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let y = (-2.0 * t * u.ln()).sqrt();
        if rng.random::<f64>() < tilde_n_at(t, y) {
            break y;
        }
    };
    out.push(first);
    for i in 2..m {
        let t = if i + 1 == m { 1.0 } else { i as f64 * dt };
        let x = out[i - 1];
        let y = loop {
            let z: f64 = rng.sample(StandardNormal);
            let y = x + sd * z;
            if y <= 0.0 {
                continue;
            }
            let avoid = -(-2.0 * x * y / dt).exp_m1();
            if rng.random::<f64>() < avoid * tilde_n_at(t, y) {
                break y;
            }
        };
        out.push(y);
    }
    Ok(out)
}

/// A discretized `d`-dimensional path on the grid `i / (m - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    dim: usize,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn from_components(components: &[Vec<f64>]) -> Result<Self> {
        let dim = components.len();
        let m = components.first().map_or(0, Vec::len);
        if dim == 0 || components.iter().any(|c| c.len() != m) {
            return Err(Error::InvalidParameter("components must be non-empty and of equal length".into()));
        }
        let mut values = vec![0.0; m * dim];
        for (i, c) in components.iter().enumerate() {
            for (k, v) in c.iter().enumerate() {
                values[k * dim + i] = *v;
            }
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn value(&self, k: usize, axis: usize) -> f64 {
        self.values[k * self.dim + axis]
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.len() - 1)
    }
}

/// Brownian meander in the first coordinate, independent standard Brownian
/// motions in the remaining `d - 1`.
pub fn product_law_sampler<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<SampledPath> {
    if d < 1 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut comps = Vec::with_capacity(d);
    comps.push(sample_meander(m, rng)?);
    let sd = (1.0 / (m - 1) as f64).sqrt();
    for _ in 1..d {
        let mut c = Vec::with_capacity(m);
        let mut x = 0.0;
        c.push(0.0);
        for _ in 1..m {
            let z: f64 = rng.sample(StandardNormal);
            x += sd * z;
            c.push(x);
        }
        comps.push(c);
    }
    SampledPath::from_components(&comps)
}

/// `t,x,value` rows of the meander density `q(0, 0; t, x)`.
pub fn density_table(times: &[f64], xs: &[f64]) -> Result<Table> {
    let mut table = Table::new(["t", "x", "value"]);
    for &t in times {
        for &x in xs {
            table.push(vec![t, x, meander_density_from_origin(t, x)?]);
        }
    }
    Ok(table)
}

/// `t,x,value` rows of the meander CDF `P[W+(t) <= x]`.
pub fn cdf_table(times: &[f64], xs: &[f64]) -> Result<Table> {
    let mut table = Table::new(["t", "x", "value"]);
    for &t in times {
        let cdf = MeanderMarginalCdf::new(t)?;
        for &x in xs {
            table.push(vec![t, x, cdf.cdf(x)]);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamId};

    /// Closed form of `P[W+(t) <= u]`, used only to check the quadrature.
    fn cdf_closed(t: f64, u: f64) -> f64 {
        let first = if t >= 1.0 { 1.0 } else { tilde_n_unchecked(u / (t * (1.0 - t)).sqrt()) };
        first - (-u * u / (2.0 * t)).exp() / t.sqrt() * tilde_n_at(t, u)
    }

    #[test]
    fn tilde_n_values() {
        assert_eq!(tilde_n(0.0).unwrap(), 0.0);
        assert_eq!(tilde_n(f64::INFINITY).unwrap(), 1.0);
        assert!((tilde_n(1.0).unwrap() - 0.682_689_492_137_085_9).abs() < 1e-12);
        assert!(tilde_n(-0.1).is_err());
    }

    #[test]
    fn g_values() {
        let v = g_kernel(1.0, 1.0, 1.0).unwrap();
        let expect = (1.0 - (-2.0f64).exp()) / (2.0 * PI).sqrt();
        assert!((v - expect).abs() < 1e-12);
        assert!((expect - 0.344_951_313_888_244_7).abs() < 1e-12);
        assert_eq!(g_kernel(0.3, 0.7, 0.0).unwrap(), 0.0);
        assert_eq!(g_kernel(0.3, 0.7, 1.1).unwrap(), g_kernel(0.3, 1.1, 0.7).unwrap());
        assert!(g_kernel(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rayleigh_at_time_one() {
        for x in [0.1, 0.5, 1.0, 2.5] {
            let v = meander_density_from_origin(1.0, x).unwrap();
            assert!((v - x * (-x * x / 2.0).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn quadrature_cdf_matches_closed_form() {
        for t in [0.1, 0.25, 0.5, 0.75, 1.0] {
            let table = MeanderMarginalCdf::new(t).unwrap();
            for u in [0.05, 0.3, 0.7, 1.0, 1.9, 3.0] {
                let exact = cdf_closed(t, u);
                let q = meander_cdf(t, u, &SimpsonOptions::default()).unwrap().value;
                assert!((q - exact).abs() < 1e-9, "t={t} u={u}: {q} vs {exact}");
                assert!((table.cdf(u) - exact).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_and_domain_queries() {
        let q = MeanderKernelQuery { t1: 0.3, x1: 0.0, t2: 0.5, x2: 1.0 };
        assert!(matches!(meander_density(&q), Err(Error::SingularQuery(_))));
        let q = MeanderKernelQuery { t1: 0.5, x1: 1.0, t2: 0.5, x2: 1.0 };
        assert!(matches!(meander_density(&q), Err(Error::Domain(_))));
        let q = MeanderKernelQuery { t1: 0.5, x1: 1.0, t2: 1.0, x2: 0.4 };
        assert!(meander_density(&q).unwrap().is_finite());
        let q = MeanderKernelQuery { t1: 0.0, x1: 0.0, t2: 0.4, x2: 0.4 };
        assert_eq!(meander_density(&q).unwrap(), meander_density_from_origin(0.4, 0.4).unwrap());
    }

    #[test]
    fn endpoint_survival_values() {
        assert_eq!(endpoint_survival(&[0.0, f64::NEG_INFINITY]).unwrap(), 1.0);
        let v = endpoint_survival(&[1.0, 0.0]).unwrap();
        assert!((v - 0.303_265_3).abs() < 1e-7);
        assert!(endpoint_survival(&[-0.1, 0.0]).is_err());
    }

    #[test]
    fn fdd_consistency() {
        let box1 = vec![(-1.0, 1.0)];
        let single = single_time_box_probability(0.5, 1.0, &box1).unwrap();
        let k1 = fdd_probability(&FddQuery::single(0.5, 1.0, box1.clone())).unwrap();
        assert!((single - k1).abs() < 1e-10);
        assert!(single > 0.0 && single < 1.0);
        let marg = FddQuery {
            times: vec![0.5, 1.0],
            upper: vec![1.0, f64::INFINITY],
            boxes: vec![box1.clone(), vec![(f64::NEG_INFINITY, f64::INFINITY)]],
        };
        assert!((fdd_probability(&marg).unwrap() - k1).abs() < 1e-8);
        let marg = FddQuery {
            times: vec![0.5, 0.8],
            upper: vec![1.0, f64::INFINITY],
            boxes: vec![box1, vec![(f64::NEG_INFINITY, f64::INFINITY)]],
        };
        assert!((fdd_probability(&marg).unwrap() - k1).abs() < 1e-8);
        let four = FddQuery {
            times: vec![0.2, 0.4, 0.6, 0.8],
            upper: vec![1.0; 4],
            boxes: vec![vec![]; 4],
        };
        assert!(matches!(fdd_probability(&four), Err(Error::Unsupported(_))));
    }

    #[test]
    fn meander_sample_shape() {
        let mut rng = StreamId::new(3, Domain::Meander, 0).rng();
        for _ in 0..50 {
            let p = sample_meander(65, &mut rng).unwrap();
            assert_eq!(p.len(), 65);
            assert_eq!(p[0], 0.0);
            assert!(p[1..].iter().all(|&v| v >= 0.0));
        }
        assert!(sample_meander(1, &mut rng).is_err());
    }

    #[test]
    fn sampled_marginals_match_quadrature() {
        use crate::verify::ks::ks_test;
        // the sampler is exact on its grid, so coarse grids are fine
        let mut rng = StreamId::new(11, Domain::Meander, 0).rng();
        let paths: Vec<Vec<f64>> = (0..20_000).map(|_| sample_meander(11, &mut rng).unwrap()).collect();
        let mid: Vec<f64> = paths.iter().map(|p| p[3]).collect();
        let cdf = MeanderMarginalCdf::new(0.3).unwrap();
        let r = ks_test(&mid, |u| cdf.cdf(u), "meander at 0.3").unwrap();
        assert!(r.p_value > 0.001, "{r:?}");
        let end: Vec<f64> = paths.iter().map(|p| p[10]).collect();
        let r = ks_test(&end, |u| 1.0 - (-0.5 * u * u).exp(), "rayleigh").unwrap();
        assert!(r.p_value > 0.001, "{r:?}");
    }
}
