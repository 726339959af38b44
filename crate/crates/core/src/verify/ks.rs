//! One-sample Kolmogorov-Smirnov test.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meander::normal_cdf;
use crate::par::map_indices;
use crate::report::Table;
use crate::rng::{Domain, StreamId};

pub const MIN_SAMPLES: usize = 10;

/// Sorted samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EcdfTable {
    values: Vec<f64>,
}

impl EcdfTable {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("empty sample".into()));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Data(format!("sample {i} is NaN")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// Accepts only data that is already sorted.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("empty sample".into()));
        }
        for (i, w) in values.windows(2).enumerate() {
            if w[0].is_nan() || w[1].is_nan() || w[0] > w[1] {
                return Err(Error::Data(format!("samples unsorted or NaN at index {i}")));
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    /// `u,ecdf,reference_cdf` at `points` evenly spaced sample quantiles.
    pub fn curve<F: Fn(f64) -> f64>(&self, reference: F, points: usize) -> Table {
        let mut t = Table::new(["u", "ecdf", "reference_cdf"]);
        let n = self.len();
        let points = points.clamp(1, n);
        for j in 0..points {
            let i = if points == 1 { n - 1 } else { j * (n - 1) / (points - 1) };
            let u = self.values[i];
            t.push(vec![u, self.eval(u), reference(u)]);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup_x |F_n(x) - F(x)|`.
    pub statistic: f64,
    pub count: usize,
    pub p_value: f64,
    pub reference: String,
}

/// Asymptotic Kolmogorov tail `P[K > lambda] = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_p_value(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // the alternating series converges slowly here; the tail is 1 to
        // double precision anyway
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// KS statistic of a sorted sample.
pub fn ks_statistic<F: Fn(f64) -> f64>(ecdf: &EcdfTable, cdf: F) -> f64 {
    let n = ecdf.len() as f64;
    let mut d: f64 = 0.0;
    let v = ecdf.values();
    let mut i = 0;
    while i < v.len() {
        // ties: the ECDF jumps once over the whole run
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    d.clamp(0.0, 1.0)
}

pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, reference: &str) -> Result<KsResult> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Data(format!(
            "KS needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let ecdf = EcdfTable::new(samples.to_vec())?;
    Ok(ks_on(&ecdf, cdf, reference))
}

pub fn ks_on<F: Fn(f64) -> f64>(ecdf: &EcdfTable, cdf: F, reference: &str) -> KsResult {
    let statistic = ks_statistic(ecdf, cdf);
    let n = ecdf.len();
    KsResult {
        statistic,
        count: n,
        p_value: kolmogorov_p_value((n as f64).sqrt() * statistic),
        reference: reference.to_string(),
    }
}

/// Reference laws of the KS checks in the main-theorem test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsReference {
    /// `1 - exp(-u^2/2)`: meander at time 1.
    Rayleigh,
    /// Standard normal.
    Gaussian,
}

impl KsReference {
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            KsReference::Rayleigh => {
                if u <= 0.0 {
                    0.0
                } else {
                    -(-0.5 * u * u).exp_m1()
                }
            }
            KsReference::Gaussian => normal_cdf(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            KsReference::Rayleigh => {
                let u: f64 = rng.random();
                (-2.0 * (1.0 - u).ln()).sqrt()
            }
            KsReference::Gaussian => rng.sample(StandardNormal),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KsReference::Rayleigh => "1 - exp(-u^2/2)",
            KsReference::Gaussian => "standard normal",
        }
    }
}

/// Rejection count of the KS test at `level` when fed `samples` draws from
/// its own reference, over `seeds` independent seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub reference: KsReference,
    pub samples: usize,
    pub seeds: u64,
    pub level: f64,
    pub rejections: u64,
}

impl NullCalibration {
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.seeds as f64
    }
}

pub fn null_calibration(reference: KsReference, samples: usize, seeds: u64, level: f64, seed: u64) -> Result<NullCalibration> {
    let base = StreamId::new(seed, Domain::Calibration, 0);
    let p = map_indices(0..seeds, |s| {
        let mut rng = base.with_index(s).rng();
        let xs: Vec<f64> = (0..samples).map(|_| reference.sample(&mut rng)).collect();
        ks_test(&xs, |u| reference.cdf(u), reference.name()).map(|r| r.p_value)
    });
    let mut rejections = 0;
    for r in p {
        if r? < level {
            rejections += 1;
        }
    }
    Ok(NullCalibration {
        reference,
        samples,
        seeds,
        level,
        rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let n = samples.len() as f64;
        let mut d: f64 = 0.0;
        for &x in samples {
            let below = samples.iter().filter(|&&y| y < x).count() as f64 / n;
            let at = samples.iter().filter(|&&y| y <= x).count() as f64 / n;
            d = d.max((cdf(x) - below).abs()).max((at - cdf(x)).abs());
        }
        d
    }

    #[test]
    fn statistic_matches_brute_force() {
        let mut rng = StreamId::new(1, Domain::Misc, 0).rng();
        for _ in 0..20 {
            let xs: Vec<f64> = (0..37).map(|_| (rng.random::<f64>() * 8.0).floor() / 8.0).collect();
            let e = EcdfTable::new(xs.clone()).unwrap();
            let s = ks_statistic(&e, |u: f64| u.clamp(0.0, 1.0));
            assert!((s - brute(&xs, |u: f64| u.clamp(0.0, 1.0))).abs() < 1e-15);
        }
    }

    #[test]
    fn p_value_landmarks() {
        assert!((kolmogorov_p_value(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_p_value(1.6276) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_p_value(0.0), 1.0);
    }

    #[test]
    fn power_against_shift() {
        let mut rng = StreamId::new(2, Domain::Misc, 0).rng();
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() + 0.5).collect();
        let r = ks_test(&xs, |u: f64| u.clamp(0.0, 1.0), "uniform").unwrap();
        assert!(r.p_value < 1e-6);
        assert!((0.0..=1.0).contains(&r.statistic));
    }

    #[test]
    fn uniform_null_calibration() {
        let base = StreamId::new(3, Domain::Calibration, 0);
        let mut pass = 0;
        for s in 0..100 {
            let mut rng = base.with_index(s).rng();
            let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
            if ks_test(&xs, |u: f64| u.clamp(0.0, 1.0), "uniform").unwrap().p_value > 0.01 {
                pass += 1;
            }
        }
        assert!(pass >= 98, "{pass}/100");
    }

    #[test]
    fn bad_input() {
        assert!(ks_test(&[0.1; 5], |u| u, "u").is_err());
        let mut xs = vec![0.5; 20];
        xs[3] = f64::NAN;
        assert!(matches!(ks_test(&xs, |u| u, "u"), Err(Error::Data(_))));
        assert!(EcdfTable::from_sorted(vec![0.3, 0.2]).is_err());
    }
}
