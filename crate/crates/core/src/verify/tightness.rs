//! Modulus of continuity of the rescaled conditioned walk.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conditioning::rejection_sample;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::meander::product_law_sampler;
use crate::par::map_indices;
use crate::report::{CheckBundle, CheckResult, Proportion, Table};
use crate::rng::{derive_seed, Domain, StreamId};
use crate::scaling::rescale_whitened;
use crate::verify::WhiteningSource;

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `w(delta) = sup_{|t-s| <= delta} |f(t) - f(s)|` for the polygon through
/// `knots` (flat, `dim` per knot) at times `k / (m - 1)`.
///
/// On each pair of linear pieces `|f(t) - f(s)|` is convex, so the supremum
/// is attained at knot pairs or at a knot paired with the point `delta` away.
pub fn modulus_of_continuity(knots: &[f64], dim: usize, delta: f64) -> f64 {
    let m = knots.len() / dim;
    if m < 2 || delta <= 0.0 {
        return 0.0;
    }
    let knot = |k: usize| &knots[k * dim..(k + 1) * dim];
    let span = delta * (m - 1) as f64;
    let whole = (span.floor() as usize).min(m - 1);
    let frac = span - span.floor();
    let mut best: f64 = 0.0;
    let mut p = vec![0.0; dim];
    for i in 0..m {
        let a = knot(i);
        for j in i + 1..=(i + whole).min(m - 1) {
            best = best.max(dist(a, knot(j)));
        }
        if frac > 0.0 && whole < m - 1 {
            // point at i + span, and at i - span
            for dir in [1i64, -1] {
                let base = i as i64 + dir * whole as i64;
                let next = base + dir;
                if base < 0 || next < 0 || next as usize >= m || base as usize >= m {
                    continue;
                }
                let (b, c) = (knot(base as usize), knot(next as usize));
                for k in 0..dim {
                    p[k] = b[k] + frac * (c[k] - b[k]);
                }
                best = best.max(dist(a, &p));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TightnessParams {
    pub n_schedule: Vec<usize>,
    pub deltas: Vec<f64>,
    pub eps_hat: f64,
    pub samples: usize,
    /// Product-law paths on the same grid; 0 skips the comparison.
    pub reference_samples: usize,
    pub budget: Option<u64>,
    pub whitening: WhiteningSource,
}

impl Default for TightnessParams {
    fn default() -> Self {
        Self {
            n_schedule: vec![400],
            deltas: vec![0.2, 0.1, 0.05],
            eps_hat: 1.0,
            samples: 20_000,
            reference_samples: 20_000,
            budget: None,
            whitening: WhiteningSource::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    /// Walk length; for reference rows the number of grid steps.
    pub n: usize,
    pub delta: f64,
    pub exceedance: Proportion,
    pub median: f64,
    pub q90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub eps_hat: f64,
    pub rows: Vec<TightnessRow>,
    pub reference: Vec<TightnessRow>,
    /// Every evaluated path had `w` non-decreasing in `delta`.
    pub monotone_paths: bool,
    pub runtime_s: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Rows for one path set; `moduli[p][i]` belongs to `deltas[i]`.
fn rows_for(n: usize, deltas: &[f64], moduli: &[Vec<f64>], eps_hat: f64) -> Vec<TightnessRow> {
    deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let mut w: Vec<f64> = moduli.iter().map(|m| m[i]).collect();
            w.sort_by(f64::total_cmp);
            let hits = w.iter().filter(|&&x| x >= eps_hat).count() as u64;
            TightnessRow {
                n,
                delta,
                exceedance: Proportion::new(hits, w.len() as u64),
                median: quantile(&w, 0.5),
                q90: quantile(&w, 0.9),
            }
        })
        .collect()
}

fn is_monotone(deltas: &[f64], w: &[f64]) -> bool {
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[a].total_cmp(&deltas[b]));
    order.windows(2).all(|p| w[p[0]] <= w[p[1]])
}

/// Exceedance rates `P[w_{DZ^n}(delta) >= eps_hat]` under `Q^n` for every
/// `n` in the schedule and `delta` in the grid, and the same statistic on
/// product-law paths with `n + 1` grid points for the largest `n`.
pub fn tightness_check(env: &Environment, params: &TightnessParams, seed: u64) -> Result<TightnessReport> {
    let started = Instant::now();
    if params.n_schedule.is_empty() || params.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n_schedule must be non-empty and increasing".into()));
    }
    if params.deltas.is_empty() || params.deltas.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::InvalidParameter("deltas must be non-empty and lie in (0, 1]".into()));
    }
    let whitening = params.whitening.resolve(env, seed)?;
    let mut rows = Vec::new();
    let mut monotone = true;
    for &n in &params.n_schedule {
        let set = rejection_sample(env, n, params.samples, params.budget, derive_seed(seed, n as u64))?;
        if let Some(w) = set.warning {
            return Err(Error::Budget(w));
        }
        let mut moduli = Vec::with_capacity(set.paths.len());
        for path in &set.paths {
            let z = rescale_whitened(path, &whitening)?;
            let knots: Vec<f64> = (0..=n).flat_map(|k| z.knot(k).to_vec()).collect();
            let w: Vec<f64> = params.deltas.iter().map(|&d| modulus_of_continuity(&knots, z.dim(), d)).collect();
            monotone &= is_monotone(&params.deltas, &w);
            moduli.push(w);
        }
        rows.extend(rows_for(n, &params.deltas, &moduli, params.eps_hat));
    }
    let mut reference = Vec::new();
    if params.reference_samples > 0 {
        let n = *params.n_schedule.last().expect("non-empty schedule");
        let d = env.dimension();
        let base = StreamId::new(seed, Domain::Reference, 0);
        let moduli = map_indices(0..params.reference_samples as u64, |i| {
            let mut rng = base.with_index(i).rng();
            let path = product_law_sampler(d, n + 1, &mut rng)?;
            let knots: Vec<f64> = (0..path.len()).flat_map(|k| path.point(k).to_vec()).collect();
            Ok(params.deltas.iter().map(|&dl| modulus_of_continuity(&knots, d, dl)).collect::<Vec<f64>>())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for w in &moduli {
            monotone &= is_monotone(&params.deltas, w);
        }
        reference = rows_for(n, &params.deltas, &moduli, params.eps_hat);
    }
    Ok(TightnessReport {
        eps_hat: params.eps_hat,
        rows,
        reference,
        monotone_paths: monotone,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

impl TightnessReport {
    /// Rows of the largest `n`, sorted by decreasing `delta`.
    fn top_rows<'a>(rows: &'a [TightnessRow]) -> Vec<&'a TightnessRow> {
        let n = rows.iter().map(|r| r.n).max().unwrap_or(0);
        let mut top: Vec<&TightnessRow> = rows.iter().filter(|r| r.n == n).collect();
        top.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        top
    }

    /// Whether each smaller `delta` has a lower exceedance rate with the
    /// `sigmas`-standard-error bands separated.
    pub fn decreasing(&self, sigmas: f64) -> bool {
        Self::top_rows(&self.rows).windows(2).all(|w| {
            let (big, small) = (&w[0].exceedance, &w[1].exceedance);
            small.estimate() + sigmas * small.stderr() < big.estimate() - sigmas * big.stderr()
        })
    }

    /// Largest `|r - r_ref| / sqrt(se^2 + se_ref^2)` over the grid.
    pub fn reference_z(&self) -> Option<f64> {
        if self.reference.is_empty() {
            return None;
        }
        let top = Self::top_rows(&self.rows);
        let mut worst: f64 = 0.0;
        for r in &self.reference {
            let row = top.iter().find(|x| x.delta == r.delta)?;
            let se = (row.exceedance.stderr().powi(2) + r.exceedance.stderr().powi(2)).sqrt();
            worst = worst.max((row.exceedance.estimate() - r.exceedance.estimate()).abs() / se);
        }
        Some(worst)
    }

    /// `n,delta,exceedance,stderr`; reference rows are in a second table.
    pub fn table(rows: &[TightnessRow]) -> Table {
        let mut t = Table::new(["n", "delta", "exceedance", "stderr"]);
        for r in rows {
            t.push(vec![r.n as f64, r.delta, r.exceedance.estimate(), r.exceedance.stderr()]);
        }
        t
    }

    pub fn bundle(&self) -> CheckBundle {
        let params = json!({ "eps_hat": self.eps_hat });
        let mut b = CheckBundle::default();
        b.checks.push(
            CheckResult::new("tightness.monotone_in_delta", params.clone(), f64::from(u8::from(self.monotone_paths)), self.monotone_paths)
                .with_detail("w(delta) non-decreasing in delta on every path")
                .with_runtime(self.runtime_s),
        );
        let top = Self::top_rows(&self.rows);
        let rates: Vec<String> = top
            .iter()
            .map(|r| format!("{}:{:.4}+-{:.4}", r.delta, r.exceedance.estimate(), r.exceedance.stderr()))
            .collect();
        let dec = self.decreasing(2.0);
        b.checks.push(
            CheckResult::new("tightness.decreasing", params.clone(), top.last().map_or(f64::NAN, |r| r.exceedance.estimate()), dec)
                .with_detail(format!("exceedance by delta {}", rates.join(" ")))
                .with_runtime(self.runtime_s),
        );
        if let Some(z) = self.reference_z() {
            let refs: Vec<String> = Self::top_rows(&self.reference)
                .iter()
                .map(|r| format!("{}:{:.4}", r.delta, r.exceedance.estimate()))
                .collect();
            b.checks.push(
                CheckResult::new("tightness.reference", params, z, z <= 3.0)
                    .with_reference(3.0)
                    .with_detail(format!("max z-score vs product law; reference {}", refs.join(" ")))
                    .with_runtime(self.runtime_s),
            );
        }
        b.tables.insert("tightness".into(), Self::table(&self.rows));
        if !self.reference.is_empty() {
            b.tables.insert("tightness_reference".into(), Self::table(&self.reference));
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(knots: &[f64], delta: f64) -> f64 {
        // dense evaluation of the 1-d polygon
        let m = knots.len();
        let f = |t: f64| {
            let s = t * (m - 1) as f64;
            let k = (s.floor() as usize).min(m - 2);
            knots[k] + (s - k as f64) * (knots[k + 1] - knots[k])
        };
        let grid = 2000;
        let mut best: f64 = 0.0;
        for i in 0..=grid {
            let s = i as f64 / grid as f64;
            for j in i..=grid {
                let t = j as f64 / grid as f64;
                if t - s > delta + 1e-12 {
                    break;
                }
                best = best.max((f(t) - f(s)).abs());
            }
        }
        best
    }

    #[test]
    fn matches_dense_evaluation() {
        let knots = [0.0, 1.0, -0.5, 0.25, 2.0, 1.5];
        for delta in [0.1, 0.2, 0.33, 0.5, 1.0] {
            let exact = modulus_of_continuity(&knots, 1, delta);
            let dense = brute(&knots, delta);
            assert!(exact >= dense - 1e-12, "delta {delta}");
            assert!(exact - dense < 5e-3, "delta {delta}: {exact} vs {dense}");
        }
    }

    #[test]
    fn whole_interval_is_oscillation() {
        let knots = [0.0, 3.0, -1.0, 0.5];
        assert_eq!(modulus_of_continuity(&knots, 1, 1.0), 4.0);
    }

    #[test]
    fn monotone_in_delta() {
        let knots: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let mut prev = 0.0;
        for k in 1..=40 {
            let w = modulus_of_continuity(&knots, 2, k as f64 / 40.0);
            assert!(w >= prev);
            prev = w;
        }
    }
}
