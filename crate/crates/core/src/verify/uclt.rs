//! Uniformity of the central limit theorem over starting points.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{Point, MAX_DIM};
use crate::par::map_indices;
use crate::report::{CheckBundle, CheckResult, Proportion, Table};
use crate::rng::{derive_seed, Domain, StreamId};
use crate::scaling::DiffusivityEstimate;
use crate::verify::WhiteningSource;
use crate::walk::Walker;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UcltFunctional {
    /// `E[Z_1(1)]`.
    EndpointMean,
    /// `P[sup_t |Z(t)|_inf <= c]`.
    SupNormAtMost { c: f64 },
    /// `E[Z_1(1)^2]`.
    EndpointSecondMoment,
}

impl UcltFunctional {
    /// `E[F(W_Sigma)]`. The sup-norm value assumes `Sigma` diagonal and uses
    /// the series for the exit time of `[-a, a]`.
    pub fn limit(&self, sigma: &DiffusivityEstimate) -> f64 {
        match *self {
            UcltFunctional::EndpointMean => 0.0,
            UcltFunctional::EndpointSecondMoment => sigma.sigma_hat[0][0],
            UcltFunctional::SupNormAtMost { c } => {
                (0..sigma.dim()).map(|i| bm_stays_within(c / sigma.sigma_hat[i][i].sqrt())).product()
            }
        }
    }
}

/// `P[sup_{t <= 1} |B(t)| <= a]` for standard Brownian motion.
pub fn bm_stays_within(a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..1000 {
        let j = (2 * k + 1) as f64;
        let term = (-PI * PI * j * j / (8.0 * a * a)).exp() / j;
        s += if k % 2 == 0 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (4.0 / PI * s).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcltParams {
    pub h: f64,
    /// Grid points per axis in `[-H sqrt n, H sqrt n]`.
    pub grid_per_axis: usize,
    pub n_values: Vec<usize>,
    pub replicas: u64,
    pub functional: UcltFunctional,
    pub sigma: WhiteningSource,
}

impl Default for UcltParams {
    fn default() -> Self {
        Self {
            h: 1.0,
            grid_per_axis: 3,
            n_values: vec![400, 1600],
            replicas: 20_000,
            functional: UcltFunctional::SupNormAtMost { c: 1.0 },
            sigma: WhiteningSource::Estimate {
                n: 1600,
                replicas: 100_000,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcltRow {
    pub n: usize,
    pub start: Point,
    pub estimate: f64,
    pub stderr: f64,
    pub deviation: f64,
}

/// Start points `round(H sqrt(n) g)` for `g` on the grid `{-1, .., 1}^d`.
pub fn start_grid(d: usize, n: usize, h: f64, per_axis: usize) -> Vec<Point> {
    let r = h * (n as f64).sqrt();
    let levels: Vec<i64> = if per_axis == 1 {
        vec![0]
    } else {
        (0..per_axis)
            .map(|i| (-r + 2.0 * r * i as f64 / (per_axis - 1) as f64).round() as i64)
            .collect()
    };
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut c = [0i64; MAX_DIM];
            for slot in c.iter_mut().take(d) {
                *slot = levels[idx % per_axis];
                idx /= per_axis;
            }
            Point::new(&c[..d]).expect("dimension checked")
        })
        .collect()
}

/// Value of the functional on one walk of `n` steps in `env` from the origin.
fn evaluate(env: &Environment, n: usize, f: UcltFunctional, stream: StreamId) -> f64 {
    let mut rng = stream.rng();
    let d = env.dimension();
    let mut walker = Walker::new(env, Point::origin(d));
    let scale = (n as f64).sqrt();
    match f {
        UcltFunctional::SupNormAtMost { c } => {
            let bound = c * scale;
            for _ in 0..n {
                let x = walker.step(&mut rng);
                if x.linf_norm() as f64 > bound {
                    return 0.0;
                }
            }
            1.0
        }
        UcltFunctional::EndpointMean | UcltFunctional::EndpointSecondMoment => {
            for _ in 0..n {
                walker.step(&mut rng);
            }
            let z = walker.position().get(0) as f64 / scale;
            if f == UcltFunctional::EndpointMean {
                z
            } else {
                z * z
            }
        }
    }
}

/// For each `n`, estimates `E_{theta_x omega}[F(Z^n)]` at every grid start and
/// the largest deviation from the limit value; passes when the maximal
/// deviation decreases along the schedule.
pub fn uclt_check(env: &Environment, params: &UcltParams, seed: u64) -> Result<CheckBundle> {
    let started = Instant::now();
    if params.n_values.len() < 2 || params.n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n_values needs at least two increasing entries".into()));
    }
    if params.replicas < 2 || params.grid_per_axis == 0 || !(params.h >= 0.0) {
        return Err(Error::InvalidParameter("need replicas >= 2, grid_per_axis >= 1, h >= 0".into()));
    }
    let d = env.dimension();
    let sigma = params.sigma.estimate(env, seed)?;
    let limit = params.functional.limit(&sigma);
    let mut rows = Vec::new();
    let mut max_dev = Vec::new();
    for &n in &params.n_values {
        let mut worst: f64 = 0.0;
        for (si, x) in start_grid(d, n, params.h, params.grid_per_axis).into_iter().enumerate() {
            let shifted = env.shift(x);
            let base = StreamId::new(derive_seed(seed, (n as u64) << 16 | si as u64), Domain::Walk, 0);
            let values = map_indices(0..params.replicas, |i| evaluate(&shifted, n, params.functional, base.with_index(i)));
            let m = values.len() as f64;
            let mean = values.iter().sum::<f64>() / m;
            let stderr = match params.functional {
                UcltFunctional::SupNormAtMost { .. } => {
                    let hits = values.iter().filter(|&&v| v > 0.5).count() as u64;
                    Proportion::new(hits, params.replicas).stderr()
                }
                _ => (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt(),
            };
            let deviation = (mean - limit).abs();
            worst = worst.max(deviation);
            rows.push(UcltRow {
                n,
                start: x,
                estimate: mean,
                stderr,
                deviation,
            });
        }
        max_dev.push(worst);
    }
    let pass = max_dev.windows(2).all(|w| w[1] < w[0]);
    let detail = params
        .n_values
        .iter()
        .zip(&max_dev)
        .map(|(n, v)| format!("n={n}: {v:.5}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut table = Table::new(
        ["n".to_string(), "estimate".into(), "stderr".into(), "deviation".into()]
            .into_iter()
            .chain((1..=d).map(|i| format!("x{i}"))),
    );
    for r in &rows {
        let mut row = vec![r.n as f64, r.estimate, r.stderr, r.deviation];
        row.extend(r.start.as_slice().iter().map(|&c| c as f64));
        table.push(row);
    }
    let mut bundle = CheckBundle::default();
    bundle.checks.push(
        CheckResult::new(
            "uclt.max_deviation_decreases",
            json!({ "params": params, "sigma_hat": sigma.sigma_hat }),
            *max_dev.last().expect("two n values"),
            pass,
        )
        .with_reference(limit)
        .with_detail(format!("max deviation {detail}"))
        .with_runtime(started.elapsed().as_secs_f64()),
    );
    bundle.tables.insert("uclt".into(), table);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_series() {
        // reflection-principle form: sum_k (-1)^k [Phi((2k+1)a) - Phi((2k-1)a)]
        use crate::meander::normal_cdf;
        for a in [0.5, 1.0, 1.5, 3.0] {
            let alt: f64 = (-40i32..=40)
                .map(|k| {
                    let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                    s * (normal_cdf((2 * k + 1) as f64 * a) - normal_cdf((2 * k - 1) as f64 * a))
                })
                .sum();
            assert!((bm_stays_within(a) - alt).abs() < 1e-12, "a = {a}");
        }
        assert!(bm_stays_within(6.0) > 1.0 - 1e-6);
        assert_eq!(bm_stays_within(0.0), 0.0);
    }

    #[test]
    fn grid_shape() {
        let g = start_grid(2, 400, 1.0, 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&Point::new(&[-20, 20]).unwrap()));
        assert!(g.contains(&Point::origin(2)));
    }

    #[test]
    fn constant_environment_is_start_independent() {
        let env = Environment::constant(2).unwrap();
        let params = UcltParams {
            n_values: vec![16, 64],
            replicas: 2000,
            functional: UcltFunctional::EndpointMean,
            sigma: WhiteningSource::Given {
                sigma: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            },
            ..UcltParams::default()
        };
        let b = uclt_check(&env, &params, 1).unwrap();
        let t = b.table("uclt").unwrap();
        for row in &t.rows {
            // every start estimates the same centred mean
            assert!(row[1].abs() < 4.0 * row[2], "{row:?}");
        }
    }
}
