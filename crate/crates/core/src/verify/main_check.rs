//! Distributional checks of the conditioned, whitened, rescaled walk against
//! the meander times Brownian motion product law.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conditioning::{rejection_sample, ConditionedSampleSet};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::meander::{fdd_probability, normal_cdf, FddQuery, MeanderMarginalCdf};
use crate::report::{CheckBundle, CheckResult, Proportion};
use crate::rng::{Domain, StreamId};
use crate::scaling::WhiteningMap;
use crate::verify::ks::{ks_on, EcdfTable, KsReference};
use crate::verify::WhiteningSource;

/// Conditioned paths together with the whitening map applied to them.
pub struct ConditionedEnsemble {
    pub samples: ConditionedSampleSet,
    pub whitening: WhiteningMap,
    pub seed: u64,
}

/// `D (X(nt) + U) / sqrt(n)` for every path and time, with `U` uniform on
/// `[-1/2, 1/2]^d` when dequantized.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub times: Vec<f64>,
    pub dim: usize,
    values: Vec<f64>,
}

impl Marginals {
    pub fn count(&self) -> usize {
        self.values.len() / (self.dim * self.times.len())
    }

    pub fn get(&self, path: usize, time: usize) -> &[f64] {
        let at = (path * self.times.len() + time) * self.dim;
        &self.values[at..at + self.dim]
    }

    /// Coordinate `axis` at time index `time` over all paths.
    pub fn column(&self, time: usize, axis: usize) -> Vec<f64> {
        (0..self.count()).map(|p| self.get(p, time)[axis]).collect()
    }
}

impl ConditionedEnsemble {
    /// Draw `count` paths of `Q^n` or fail with a budget error.
    pub fn sample(
        env: &Environment,
        n: usize,
        count: usize,
        budget: Option<u64>,
        whitening: &WhiteningSource,
        seed: u64,
    ) -> Result<Self> {
        let whitening = whitening.resolve(env, seed)?;
        let samples = rejection_sample(env, n, count, budget, seed)?;
        if let Some(w) = &samples.warning {
            return Err(Error::Budget(w.clone()));
        }
        Ok(Self {
            samples,
            whitening,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.n
    }

    pub fn marginals(&self, times: &[f64], dequantize: bool) -> Result<Marginals> {
        for &t in times {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Domain(format!("marginal time {t} must lie in (0, 1]")));
            }
        }
        let n = self.n();
        let d = self.samples.manifest.dimension;
        let inv = 1.0 / (n as f64).sqrt();
        let base = StreamId::new(self.seed, Domain::Dequantize, 0);
        let mut values = Vec::with_capacity(self.samples.paths.len() * times.len() * d);
        let mut raw = vec![0.0; d];
        let mut out = vec![0.0; d];
        for (i, path) in self.samples.paths.iter().enumerate() {
            let mut rng = base.with_index(i as u64).rng();
            for &t in times {
                let s = t * n as f64;
                let k = (s.floor() as usize).min(n);
                let frac = s - k as f64;
                for (j, r) in raw.iter_mut().enumerate() {
                    let a = path.coord(k, j) as f64;
                    *r = if k < n { a + frac * (path.coord(k + 1, j) as f64 - a) } else { a };
                    if dequantize {
                        *r += rng.random::<f64>() - 0.5;
                    }
                    *r *= inv;
                }
                self.whitening.apply_into(&raw, &mut out);
                values.extend_from_slice(&out);
            }
        }
        Ok(Marginals {
            times: times.to_vec(),
            dim: d,
            values,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MainCheckParams {
    pub n: usize,
    pub samples: usize,
    pub budget: Option<u64>,
    pub level: f64,
    pub correlation_bound: f64,
    /// Times below 1 whose marginals are also tested.
    pub extra_times: Vec<f64>,
    pub dequantize: bool,
    pub whitening: WhiteningSource,
}

impl Default for MainCheckParams {
    fn default() -> Self {
        Self {
            n: 400,
            samples: 20_000,
            budget: None,
            level: 0.01,
            correlation_bound: 0.03,
            extra_times: Vec::new(),
            dequantize: true,
            whitening: WhiteningSource::default(),
        }
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

const CURVE_POINTS: usize = 512;

/// KS of the first coordinate against the meander marginal and of each
/// transverse coordinate against `N(0, t)` at time 1 and at `extra_times`,
/// plus the cross-correlations at time 1.
pub fn main_checks_on(ens: &ConditionedEnsemble, params: &MainCheckParams) -> Result<CheckBundle> {
    let started = Instant::now();
    let mut times = vec![1.0];
    times.extend(params.extra_times.iter().copied().filter(|&t| t < 1.0));
    let marg = ens.marginals(&times, params.dequantize)?;
    let d = marg.dim;
    let mut bundle = CheckBundle::default();
    let common = json!({
        "n": ens.n(),
        "samples": marg.count(),
        "acceptance_rate": ens.samples.acceptance_rate,
        "level": params.level,
        "dequantize": params.dequantize,
    });
    for (ti, &t) in times.iter().enumerate() {
        let tag = if t == 1.0 { String::new() } else { format!(".t={t}") };
        let first = EcdfTable::new(marg.column(ti, 0))?;
        let ks = if t == 1.0 {
            let r = ks_on(&first, |u| KsReference::Rayleigh.cdf(u), KsReference::Rayleigh.name());
            bundle.tables.insert(
                "ecdf_meander".into(),
                first.curve(|u| KsReference::Rayleigh.cdf(u), CURVE_POINTS),
            );
            r
        } else {
            let cdf = MeanderMarginalCdf::new(t)?;
            let r = ks_on(&first, |u| cdf.cdf(u), &format!("meander marginal at t = {t}"));
            bundle
                .tables
                .insert(format!("ecdf_meander{tag}"), first.curve(|u| cdf.cdf(u), CURVE_POINTS));
            r
        };
        bundle.checks.push(
            CheckResult::new(format!("main.first_coordinate{tag}"), common.clone(), ks.statistic, ks.p_value > params.level)
                .with_p_value(ks.p_value)
                .with_reference(params.level)
                .with_detail(format!("KS vs {}", ks.reference)),
        );
        let sd = t.sqrt();
        for j in 1..d {
            let col = EcdfTable::new(marg.column(ti, j))?;
            let ks = ks_on(&col, |u| normal_cdf(u / sd), "N(0, t)");
            let name = if d == 2 { format!("main.transverse{tag}") } else { format!("main.transverse.x{}{tag}", j + 1) };
            if t == 1.0 && j == 1 {
                bundle
                    .tables
                    .insert("ecdf_transverse".into(), col.curve(|u| normal_cdf(u / sd), CURVE_POINTS));
            }
            bundle.checks.push(
                CheckResult::new(name, common.clone(), ks.statistic, ks.p_value > params.level)
                    .with_p_value(ks.p_value)
                    .with_reference(params.level)
                    .with_detail(format!("KS vs N(0, {t})")),
            );
        }
    }
    let first = marg.column(0, 0);
    let mut worst: f64 = 0.0;
    for j in 1..d {
        worst = worst.max(correlation(&first, &marg.column(0, j)).abs());
    }
    bundle.checks.push(
        CheckResult::new("main.correlation", common, worst, worst < params.correlation_bound)
            .with_reference(params.correlation_bound)
            .with_detail("max |corr(Z_1(1), Z_j(1))| over j >= 2"),
    );
    let elapsed = started.elapsed().as_secs_f64();
    for c in &mut bundle.checks {
        c.runtime_s = elapsed;
    }
    Ok(bundle)
}

pub fn main_theorem_check(env: &Environment, params: &MainCheckParams, seed: u64) -> Result<CheckBundle> {
    let started = Instant::now();
    let ens = ConditionedEnsemble::sample(env, params.n, params.samples, params.budget, &params.whitening, seed)?;
    let mut bundle = main_checks_on(&ens, params)?;
    let elapsed = started.elapsed().as_secs_f64();
    for c in &mut bundle.checks {
        c.runtime_s = elapsed;
    }
    Ok(bundle)
}

/// Empirical probability of the FDD event against its quadrature value,
/// passing within `sigmas` binomial standard errors.
pub fn fdd_check_on(ens: &ConditionedEnsemble, query: &FddQuery, dequantize: bool, sigmas: f64) -> Result<CheckResult> {
    let started = Instant::now();
    query.validate()?;
    if query.dim() != ens.samples.manifest.dimension {
        return Err(Error::InvalidParameter(format!(
            "query is {}-dimensional, walk is {}-dimensional",
            query.dim(),
            ens.samples.manifest.dimension
        )));
    }
    let exact = fdd_probability(query)?;
    let marg = ens.marginals(&query.times, dequantize)?;
    let hits = (0..marg.count())
        .filter(|&p| {
            let pts: Vec<&[f64]> = (0..query.order()).map(|t| marg.get(p, t)).collect();
            query.contains(&pts)
        })
        .count();
    let prop = Proportion::new(hits as u64, marg.count() as u64);
    let err = prop.stderr();
    let diff = (prop.estimate() - exact).abs();
    Ok(CheckResult::new(
        format!("fdd.k={}", query.order()),
        json!({ "n": ens.n(), "samples": marg.count(), "query": query }),
        prop.estimate(),
        diff <= sigmas * err,
    )
    .with_err(err)
    .with_reference(exact)
    .with_detail(format!("|empirical - quadrature| = {diff:.5} vs {sigmas} stderr"))
    .with_runtime(started.elapsed().as_secs_f64()))
}

pub fn fdd_check(env: &Environment, params: &MainCheckParams, query: &FddQuery, seed: u64) -> Result<CheckBundle> {
    let started = Instant::now();
    let ens = ConditionedEnsemble::sample(env, params.n, params.samples, params.budget, &params.whitening, seed)?;
    let mut c = fdd_check_on(&ens, query, params.dequantize, 3.0)?;
    c.runtime_s = started.elapsed().as_secs_f64();
    Ok(CheckBundle {
        checks: vec![c],
        ..CheckBundle::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_whiten_and_scale() {
        let env = Environment::constant(2).unwrap();
        let ens = ConditionedEnsemble::sample(
            &env,
            16,
            50,
            None,
            &WhiteningSource::Given {
                sigma: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            },
            3,
        )
        .unwrap();
        let m = ens.marginals(&[0.5, 1.0], false).unwrap();
        assert_eq!(m.count(), 50);
        let p = &ens.samples.paths[7];
        let v = m.get(7, 1);
        assert!((v[0] - 2f64.sqrt() * p.coord(16, 0) as f64 / 4.0).abs() < 1e-12);
        assert!(m.column(0, 0).iter().all(|&x| x > 0.0));
    }

    #[test]
    fn wide_event_is_nearly_certain() {
        let env = Environment::constant(2).unwrap();
        let src = WhiteningSource::Given {
            sigma: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
        };
        let ens = ConditionedEnsemble::sample(&env, 64, 400, None, &src, 5).unwrap();
        let q = FddQuery::single(1.0, 50.0, vec![(-50.0, 50.0)]);
        let c = fdd_check_on(&ens, &q, true, 3.0).unwrap();
        assert_eq!(c.statistic, 1.0);
        assert!(c.pass);
    }

    #[test]
    fn correlation_of_identical_columns() {
        let a = [1.0, 2.0, 4.0, 3.0];
        assert!((correlation(&a, &a) - 1.0).abs() < 1e-15);
    }
}
