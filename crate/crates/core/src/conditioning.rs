//! The walk conditioned on `Lambda_n = {X_1(k) > 0 for k = 1..n}`: rejection
//! sampling, exact survival probabilities and conditioned endpoint laws, and an
//! exact backward sampler for small `n`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, EnvironmentManifest};
use crate::error::{Error, Result};
use crate::kernel::{exact_kernel_with, KernelOptions, KernelTable, LatticeBox, Propagator};
use crate::lattice::{Point, MAX_DIM};
use crate::par::map_indices;
use crate::report::{csv_writer, Proportion};
use crate::rng::{Domain, StreamId};
use crate::walk::{TargetSet, WalkPath, Walker};

/// Raw attempts allowed per requested sample when no budget is given.
pub const DEFAULT_BUDGET_FACTOR: u64 = 10_000;

const BATCH: u64 = 4096;

/// The absorbing set `{x_1 <= 0}` whose avoidance defines `Lambda_n`.
pub fn lower_half_space() -> TargetSet {
    TargetSet::HalfSpaceAtMost { axis: 0, level: 0 }
}

/// Paths drawn from the conditioned law `Q^n`.
#[derive(Clone, Debug)]
pub struct ConditionedSampleSet {
    pub manifest: EnvironmentManifest,
    pub n: usize,
    pub seed: u64,
    pub paths: Vec<WalkPath>,
    pub raw_attempts: u64,
    pub acceptance_rate: f64,
    /// Set when the budget ran out before `target_count` acceptances.
    pub warning: Option<String>,
}

impl ConditionedSampleSet {
    /// Acceptance as a binomial proportion over the raw attempts.
    pub fn acceptance(&self) -> Proportion {
        Proportion::new(self.paths.len() as u64, self.raw_attempts)
    }

    /// CSV of accepted paths: `path,time,x1..xd`, or only the endpoints
    /// (`path,x1..xd`) when `endpoints_only`.
    pub fn write_csv<W: Write>(&self, out: W, endpoints_only: bool) -> Result<()> {
        let d = self.manifest.dimension;
        let mut w = csv_writer(out);
        let mut header = vec!["path".to_string()];
        if !endpoints_only {
            header.push("time".into());
        }
        header.extend((1..=d).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (id, path) in self.paths.iter().enumerate() {
            let times = if endpoints_only { path.steps()..=path.steps() } else { 0..=path.steps() };
            for k in times {
                let mut row = vec![id.to_string()];
                if !endpoints_only {
                    row.push(k.to_string());
                }
                row.extend((0..d).map(|i| path.coord(k, i).to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One rejection attempt: the full path if it stays in `{x_1 > 0}` during
/// times `1..=n`.
fn attempt(env: &Environment, n: usize, stream: StreamId) -> Option<WalkPath> {
    let mut rng = stream.rng();
    let start = Point::origin(env.dimension());
    let mut walker = Walker::new(env, start);
    let mut path = WalkPath::with_capacity(start, n);
    for _ in 0..n {
        let x = walker.step(&mut rng);
        if x.get(0) <= 0 {
            return None;
        }
        path.push(x);
    }
    Some(path)
}

/// Draw `target_count` independent paths from `Q^n` by simulating the quenched
/// walk from the origin and keeping those in `Lambda_n`. Attempt `i` uses
/// stream `(seed, Conditioning, i)` and acceptances are kept in attempt order,
/// so the result does not depend on the worker count. Stops early with a
/// partial set (and a warning) when `budget` raw attempts are used up.
pub fn rejection_sample(
    env: &Environment,
    n: usize,
    target_count: usize,
    budget: Option<u64>,
    seed: u64,
) -> Result<ConditionedSampleSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("conditioning needs n >= 1".into()));
    }
    let budget = budget.unwrap_or(DEFAULT_BUDGET_FACTOR.saturating_mul(target_count as u64));
    let base = StreamId::new(seed, Domain::Conditioning, 0);
    let mut paths = Vec::with_capacity(target_count);
    let mut used = 0u64;
    while paths.len() < target_count && used < budget {
        let end = (used + BATCH).min(budget);
        let batch = map_indices(used..end, |i| attempt(env, n, base.with_index(i)));
        for res in batch {
            used += 1;
            if let Some(p) = res {
                paths.push(p);
                if paths.len() == target_count {
                    break;
                }
            }
        }
    }
    let warning = (paths.len() < target_count).then(|| {
        format!(
            "budget of {budget} attempts exhausted with {} of {target_count} acceptances",
            paths.len()
        )
    });
    Ok(ConditionedSampleSet {
        manifest: env.manifest(),
        n,
        seed,
        acceptance_rate: if used == 0 { 0.0 } else { paths.len() as f64 / used as f64 },
        raw_attempts: used,
        paths,
        warning,
    })
}

/// Window holding every site reachable in `n` steps from the origin, with the
/// absorbing layer `x_1 = -1` included.
fn survival_window(d: usize, n: usize) -> LatticeBox {
    let n = n as i64;
    let mut lo = Point::origin(d);
    let mut hi = Point::origin(d);
    lo.set(0, -1);
    hi.set(0, n.max(1));
    for i in 1..d {
        lo.set(i, -n);
        hi.set(i, n);
    }
    LatticeBox { lo, hi }
}

/// `P[Lambda_n]` by exact kernel iteration.
pub fn exact_survival(env: &Environment, n: usize) -> Result<f64> {
    let curve = exact_survival_curve(env, n, &KernelOptions::default())?;
    Ok(curve.points.last().map(|p| p.probability).unwrap_or(1.0))
}

/// Survival probabilities `P[Lambda_k]`, `k = 1..=n_max`.
pub fn exact_survival_curve(env: &Environment, n_max: usize, opts: &KernelOptions) -> Result<SurvivalCurve> {
    let half = lower_half_space();
    let mut prop = Propagator::new(env, survival_window(env.dimension(), n_max), &[&half], opts)?;
    prop.reset(Point::origin(env.dimension()))?;
    let mut points = Vec::with_capacity(n_max);
    for k in 1..=n_max {
        prop.step()?;
        points.push(SurvivalPoint {
            n: k,
            probability: prop.total_mass(),
            stderr: 0.0,
            method: SurvivalMethod::Exact,
        });
    }
    Ok(SurvivalCurve { points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalMethod {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub n: usize,
    pub probability: f64,
    pub stderr: f64,
    pub method: SurvivalMethod,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub points: Vec<SurvivalPoint>,
}

impl SurvivalCurve {
    pub fn at(&self, n: usize) -> Option<&SurvivalPoint> {
        self.points.iter().find(|p| p.n == n)
    }

    /// Least-squares slope of `log P[Lambda_n]` against `log n` over the given
    /// horizons.
    pub fn log_log_slope(&self, horizons: &[usize]) -> Option<f64> {
        let pts: Vec<(f64, f64)> = horizons
            .iter()
            .filter_map(|&n| self.at(n))
            .map(|p| ((p.n as f64).ln(), p.probability.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// CSV `n,p,stderr,method`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["n", "p", "stderr", "method"])?;
        for p in &self.points {
            let method = match p.method {
                SurvivalMethod::Exact => "exact",
                SurvivalMethod::MonteCarlo => "monte_carlo",
            };
            w.write_record([p.n.to_string(), p.probability.to_string(), p.stderr.to_string(), method.into()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Monte Carlo estimate of `P[Lambda_k]` for every `k <= n_max` from
/// `replicas` unconditioned walks.
pub fn estimated_survival_curve(env: &Environment, n_max: usize, replicas: u64, seed: u64) -> SurvivalCurve {
    let base = StreamId::new(seed, Domain::Conditioning, 0);
    let start = Point::origin(env.dimension());
    let lifetimes = map_indices(0..replicas, |i| {
        let mut rng = base.with_index(i).rng();
        let mut walker = Walker::new(env, start);
        for k in 1..=n_max {
            if walker.step(&mut rng).get(0) <= 0 {
                return k - 1;
            }
        }
        n_max
    });
    let mut alive = vec![0u64; n_max + 1];
    for l in lifetimes {
        alive[l] += 1;
    }
    // alive[k] = number surviving exactly k steps; accumulate from the top
    let mut surviving = 0u64;
    let mut points = vec![];
    for k in (1..=n_max).rev() {
        surviving += alive[k];
        let p = Proportion::new(surviving, replicas);
        points.push(SurvivalPoint {
            n: k,
            probability: p.estimate(),
            stderr: p.stderr(),
            method: SurvivalMethod::MonteCarlo,
        });
    }
    points.reverse();
    SurvivalCurve { points }
}

/// Law of `X(n)` under `Q^n`: the absorbed kernel divided by `P[Lambda_n]`.
pub fn exact_conditioned_endpoint(env: &Environment, n: usize) -> Result<KernelTable> {
    exact_conditioned_endpoint_with(env, n, &KernelOptions::default())
}

pub fn exact_conditioned_endpoint_with(env: &Environment, n: usize, opts: &KernelOptions) -> Result<KernelTable> {
    if n == 0 {
        return Err(Error::InvalidParameter("conditioning needs n >= 1".into()));
    }
    let half = lower_half_space();
    let table = exact_kernel_with(env, Point::origin(env.dimension()), n, Some(&half), opts)?;
    let z = table.total_mass();
    Ok(table.normalized(z))
}

/// `(P[Lambda_floor(nt)] / P[Lambda_n], t^{-1/2})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRatio {
    pub ratio: f64,
    pub reference: f64,
    /// Delta-method standard error; 0 for exact ratios.
    pub stderr: f64,
    pub method: SurvivalMethod,
}

/// Compare the survival ratio with its limit. Exact when the kernel window
/// fits under `opts.cell_cap`, otherwise estimated from `mc_replicas` walks.
pub fn survival_ratio_check(
    env: &Environment,
    n: usize,
    t: f64,
    opts: &KernelOptions,
    mc_replicas: u64,
    seed: u64,
) -> Result<SurvivalRatio> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("t = {t} must lie in (0, 1]")));
    }
    let m = (n as f64 * t).floor() as usize;
    if m < 1 {
        return Err(Error::InvalidParameter(format!("floor(n t) = {m} < 1")));
    }
    let reference = t.powf(-0.5);
    if m == n {
        return Ok(SurvivalRatio {
            ratio: 1.0,
            reference,
            stderr: 0.0,
            method: SurvivalMethod::Exact,
        });
    }
    match exact_survival_curve(env, n, opts) {
        Ok(curve) => {
            let pm = curve.at(m).expect("m <= n").probability;
            let pn = curve.at(n).expect("n in curve").probability;
            Ok(SurvivalRatio {
                ratio: pm / pn,
                reference,
                stderr: 0.0,
                method: SurvivalMethod::Exact,
            })
        }
        Err(Error::Resource(_)) => {
            let curve = estimated_survival_curve(env, n, mc_replicas, seed);
            let pm = curve.at(m).expect("m <= n");
            let pn = curve.at(n).expect("n in curve");
            if pn.probability == 0.0 {
                return Err(Error::Budget(format!("no walk survived {n} steps out of {mc_replicas}")));
            }
            // Lambda_n is contained in Lambda_m, so the ratio is 1 / P[Lambda_n | Lambda_m]
            let cond = Proportion::new(
                (pn.probability * mc_replicas as f64).round() as u64,
                (pm.probability * mc_replicas as f64).round() as u64,
            );
            let ratio = 1.0 / cond.estimate();
            Ok(SurvivalRatio {
                ratio,
                reference,
                stderr: ratio * ratio * cond.stderr(),
                method: SurvivalMethod::MonteCarlo,
            })
        }
        Err(e) => Err(e),
    }
}

/// The two conditional hitting statistics of a conditioned sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub eps: f64,
    /// `N = floor(eps sqrt n)`.
    pub level: i64,
    /// `Q^n[tau_{N} > eps^{1/2} n]`.
    pub p_slow: Proportion,
    /// `Q^n[max_{i>=2} sup_{j <= tau_{N}} |X_i(j)| > eps^{-1/2} N]`.
    pub p_transversal: Proportion,
}

/// Estimate the slow-progress and transversal-fluctuation probabilities from
/// paths of `Q^n`. A path that never reaches `{N}_1` counts as slow, and its
/// transversal supremum is taken over the whole horizon.
pub fn conditional_hitting_stats(samples: &ConditionedSampleSet, eps: f64) -> Result<HittingStats> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must lie in (0, 1]")));
    }
    let n = samples.n;
    let level = (eps * (n as f64).sqrt()).floor() as i64;
    if level < 1 {
        return Err(Error::InvalidParameter(format!(
            "N = floor(eps sqrt n) = {level}; need N >= 1"
        )));
    }
    let time_limit = eps.sqrt() * n as f64;
    let width = level as f64 / eps.sqrt();
    let mut slow = 0u64;
    let mut wide = 0u64;
    for path in &samples.paths {
        let tau = (0..=path.steps()).find(|&k| path.coord(k, 0) == level);
        if tau.map_or(true, |t| t as f64 > time_limit) {
            slow += 1;
        }
        let upto = tau.unwrap_or(path.steps());
        let sup = (0..=upto)
            .flat_map(|k| (1..path.dim()).map(move |i| (k, i)))
            .map(|(k, i)| path.coord(k, i).abs())
            .max()
            .unwrap_or(0);
        if sup as f64 > width {
            wide += 1;
        }
    }
    let total = samples.paths.len() as u64;
    Ok(HittingStats {
        eps,
        level,
        p_slow: Proportion::new(slow, total),
        p_transversal: Proportion::new(wide, total),
    })
}

/// Exact sampler of `Q^n` from backward survival tables
/// `h_r(x) = P^x[X_1 > 0 during the next r steps]`.
pub struct ExactConditionedSampler {
    prop: Propagator,
    tables: Vec<Vec<f64>>,
    n: usize,
    start_idx: usize,
    dim: usize,
}

impl ExactConditionedSampler {
    pub fn new(env: &Environment, n: usize, opts: &KernelOptions) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("conditioning needs n >= 1".into()));
        }
        let half = lower_half_space();
        let prop = Propagator::new(env, survival_window(env.dimension(), n), &[&half], opts)?;
        let cells = prop.cell_count();
        if cells.saturating_mul(n + 1) > opts.cell_cap {
            return Err(Error::Resource(format!(
                "{} backward tables of {cells} cells exceed the cap of {}",
                n + 1,
                opts.cell_cap
            )));
        }
        let mut tables = Vec::with_capacity(n + 1);
        let mut h0 = vec![0.0; cells];
        for (idx, h) in h0.iter_mut().enumerate() {
            let p = prop.point_of(idx);
            if !prop.is_absorbed(idx) && survival_window(env.dimension(), n).contains(&p) {
                *h = 1.0;
            }
        }
        tables.push(h0);
        for r in 1..=n {
            let mut out = vec![0.0; cells];
            prop.apply_backward(&tables[r - 1], &mut out);
            tables.push(out);
        }
        let start_idx = prop.index_of(&Point::origin(env.dimension()))?;
        Ok(Self {
            prop,
            tables,
            n,
            start_idx,
            dim: env.dimension(),
        })
    }

    /// `P[Lambda_n]` read off the backward tables.
    pub fn survival(&self) -> f64 {
        self.tables[self.n][self.start_idx]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WalkPath {
        let mut idx = self.start_idx;
        let mut path = WalkPath::with_capacity(self.prop.point_of(idx), self.n);
        let mut nb = [(0usize, 0.0f64); 2 * MAX_DIM];
        for k in 0..self.n {
            let r = self.n - k;
            self.prop.neighbours(idx, &mut nb[..2 * self.dim]);
            let h = &self.tables[r - 1];
            let weights: Vec<f64> = nb[..2 * self.dim]
                .iter()
                .map(|&(j, p)| if self.prop.is_absorbed(j) { 0.0 } else { p * h[j] })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = nb[0].0;
            for (w, &(j, _)) in weights.iter().zip(&nb[..2 * self.dim]) {
                if *w > 0.0 {
                    pick = j;
                    if u < *w {
                        break;
                    }
                    u -= w;
                }
            }
            idx = pick;
            path.push(self.prop.point_of(idx));
        }
        path
    }
}
