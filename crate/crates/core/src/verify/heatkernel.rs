//! Gaussian envelopes of exact `n`-step transition probabilities.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::kernel::{exact_kernel_with, KernelOptions};
use crate::lattice::Point;
use crate::report::{CheckBundle, CheckResult, Table};

/// Affine envelopes `a_lo + b_lo r <= log(p n^{d/2}) <= a_up + b_up r` in
/// `r = |y|_1^2 / n`, reported as
/// `C1 = exp(a_up), C2 = -b_up, C3 = exp(a_lo), C4 = -b_lo`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub points: usize,
}

impl EnvelopeFit {
    pub fn is_finite(&self) -> bool {
        [self.c1, self.c2, self.c3, self.c4].iter().all(|v| v.is_finite()) && self.c1 > 0.0 && self.c3 > 0.0
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Upper convex hull of points sorted by x (ties keep the largest y).
fn upper_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        if let Some(last) = hull.last() {
            if last.0 == p.0 {
                if p.1 > last.1 {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// The hull edge above (or below) `x`, as `(intercept, slope)`.
fn supporting_line(hull: &[(f64, f64)], x: f64) -> (f64, f64) {
    if hull.len() == 1 {
        return (hull[0].1, 0.0);
    }
    let i = hull
        .windows(2)
        .position(|w| x <= w[1].0)
        .unwrap_or(hull.len() - 2);
    let (a, b) = (hull[i], hull[i + 1]);
    let slope = (b.1 - a.1) / (b.0 - a.0);
    (a.1 - slope * a.0, slope)
}

/// Tightest envelopes in the sense of least mean gap: each line supports
/// the hull at the mean abscissa.
pub fn fit_envelopes(points: &[(f64, f64)]) -> Result<EnvelopeFit> {
    if points.len() < 2 {
        return Err(Error::Data("envelope fit needs at least two points".into()));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Data("non-finite point in envelope fit".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let up = upper_hull(&pts);
    let flipped: Vec<(f64, f64)> = {
        let mut f: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, -p.1)).collect();
        f.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        f
    };
    let lo = upper_hull(&flipped);
    let (a_up, b_up) = supporting_line(&up, mean);
    let (a_lo, b_lo) = supporting_line(&lo, mean);
    Ok(EnvelopeFit {
        c1: a_up.exp(),
        c2: -b_up,
        c3: (-a_lo).exp(),
        c4: b_lo,
        points: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelRun {
    pub n: usize,
    /// Largest mass found at a site of the wrong parity.
    pub off_parity_mass: f64,
    /// Sites with `|y|_1 <= n` of the right parity that got no mass.
    pub missing_sites: usize,
    pub fit: EnvelopeFit,
}

fn l1_ball_sites(d: usize, n: i64) -> usize {
    // sites with |y|_1 <= n and |y|_1 = n mod 2, counted by radius
    let mut count = 0usize;
    let mut by_radius = vec![0usize; (n + 1) as usize];
    // number of points on the l1 sphere of radius r in Z^d
    for r in 0..=n {
        let mut s = 0usize;
        for k in 0..=d.min(r as usize) {
            // 2^k C(d, k) C(r - 1, k - 1)
            let ck = binom(d as u64, k as u64) * binom((r - 1).max(0) as u64, (k as u64).saturating_sub(1));
            if r == 0 {
                s = 1;
                break;
            }
            if k == 0 {
                continue;
            }
            s += (1usize << k) * ck as usize;
        }
        by_radius[r as usize] = s;
    }
    for r in (n % 2..=n).step_by(2) {
        count += by_radius[r as usize];
    }
    count
}

fn binom(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let mut r = 1u64;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Exact kernels from the origin for every `n`, per-`n` and pooled envelope
/// fits, and the parity and support checks.
pub fn heatkernel_envelope(env: &Environment, n_values: &[usize], opts: &KernelOptions) -> Result<(Vec<HeatKernelRun>, CheckBundle)> {
    let started = Instant::now();
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::InvalidParameter("n_values must be non-empty and positive".into()));
    }
    let d = env.dimension();
    let origin = Point::origin(d);
    let mut runs = Vec::new();
    let mut pooled = Vec::new();
    let mut points_table = Table::new(["n", "r", "log_p_scaled"]);
    for &n in n_values {
        let table = exact_kernel_with(env, origin, n, None, opts)?;
        let scale = (n as f64).powf(d as f64 / 2.0);
        let mut off_parity: f64 = 0.0;
        let mut pts = Vec::new();
        let mut positive = 0usize;
        for (y, p) in table.entries() {
            let r1 = y.l1_norm();
            if (r1 - n as i64).rem_euclid(2) != 0 {
                off_parity = off_parity.max(*p);
                continue;
            }
            if *p > 0.0 && r1 <= n as i64 {
                positive += 1;
                let r = (r1 * r1) as f64 / n as f64;
                let l = (p * scale).ln();
                pts.push((r, l));
                points_table.push(vec![n as f64, r, l]);
            }
        }
        let fit = fit_envelopes(&pts)?;
        pooled.extend(pts);
        runs.push(HeatKernelRun {
            n,
            off_parity_mass: off_parity,
            missing_sites: l1_ball_sites(d, n as i64).saturating_sub(positive),
            fit,
        });
    }
    let pooled_fit = fit_envelopes(&pooled)?;
    let mut fits = Table::new(["n", "c1", "c2", "c3", "c4"]);
    for r in &runs {
        fits.push(vec![r.n as f64, r.fit.c1, r.fit.c2, r.fit.c3, r.fit.c4]);
    }
    fits.push(vec![0.0, pooled_fit.c1, pooled_fit.c2, pooled_fit.c3, pooled_fit.c4]);
    let elapsed = started.elapsed().as_secs_f64();
    let params = json!({ "n_values": n_values, "manifest": env.manifest() });
    let parity = runs.iter().map(|r| r.off_parity_mass).fold(0.0, f64::max);
    let missing: usize = runs.iter().map(|r| r.missing_sites).sum();
    let shapes_ok = runs.iter().map(|r| &r.fit).chain(std::iter::once(&pooled_fit)).all(|f| f.is_finite() && f.c2 > 0.0 && f.c4 >= f.c2);
    let mut bundle = CheckBundle::default();
    bundle.checks.push(
        CheckResult::new("heatkernel.parity", params.clone(), parity, parity == 0.0)
            .with_detail("largest mass off the parity class")
            .with_runtime(elapsed),
    );
    bundle.checks.push(
        CheckResult::new("heatkernel.support", params.clone(), missing as f64, missing == 0)
            .with_detail("sites with |y|_1 <= n of matching parity and zero mass")
            .with_runtime(elapsed),
    );
    bundle.checks.push(
        CheckResult::new("heatkernel.envelope", params, pooled_fit.c2, shapes_ok)
            .with_detail(format!(
                "pooled C1={:.4} C2={:.4} C3={:.3e} C4={:.4}; need finite, C2 > 0, C4 >= C2 for every n",
                pooled_fit.c1, pooled_fit.c2, pooled_fit.c3, pooled_fit.c4
            ))
            .with_runtime(elapsed),
    );
    bundle.tables.insert("envelope_points".into(), points_table);
    bundle.tables.insert("envelope_fit".into(), fits);
    Ok((runs, bundle))
}
