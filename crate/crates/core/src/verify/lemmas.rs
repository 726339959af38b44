//! Probability-bound probes for the hitting and confinement lemmas.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conditioning::{conditional_hitting_stats, rejection_sample};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::kernel::{exact_hitting_split, KernelOptions, LatticeBox, Propagator};
use crate::lattice::{Point, MAX_DIM};
use crate::par::map_indices;
use crate::report::{CheckBundle, CheckResult, Proportion, Table};
use crate::rng::{derive_seed, Domain, StreamId};
use crate::walk::{TargetSet, Walker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// Strip exit: `sup_x P^x[tau_{H1 u H2} > delta^2 n] <~ h / delta`.
    Lem0i,
    /// Ball confinement: `P^x[tau_A <= delta^2 n] <~ delta / h`.
    Lem0ii,
    /// Progress before backstep: `inf_{y in {l}_1} P^y[tau_{(v+1)l} < tau_0] >= C`.
    Lem1,
    /// Slow hitting of `{N}_1` under `Q^n`.
    Lem2,
    /// Transversal fluctuations before `tau_{N}` under `Q^n`.
    Lem3,
}

impl LemmaId {
    pub const ALL: [LemmaId; 5] = [LemmaId::Lem0i, LemmaId::Lem0ii, LemmaId::Lem1, LemmaId::Lem2, LemmaId::Lem3];

    pub fn name(&self) -> &'static str {
        match self {
            LemmaId::Lem0i => "lem0i",
            LemmaId::Lem0ii => "lem0ii",
            LemmaId::Lem1 => "lem1",
            LemmaId::Lem2 => "lem2",
            LemmaId::Lem3 => "lem3",
        }
    }
}

impl std::str::FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown lemma {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaParams {
    /// Horizon scale for the strip and ball probes.
    pub n: usize,
    pub h_values: Vec<f64>,
    /// Strip probe: `delta` values, each the double of the previous.
    pub deltas: Vec<f64>,
    /// Ball probe: `delta / h` ratios, each the double of the previous.
    pub ball_ratios: Vec<f64>,
    pub v: f64,
    pub l_values: Vec<i64>,
    /// Transverse start offsets per `l`, spread over `[-l, l]`.
    pub starts_per_l: usize,
    pub replicas: u64,
    /// Conditioned probes.
    pub cond_n: usize,
    pub cond_samples: usize,
    pub eps_values: Vec<f64>,
    pub budget: Option<u64>,
    pub kernel: KernelOptions,
}

impl Default for LemmaParams {
    fn default() -> Self {
        Self {
            n: 400,
            h_values: vec![0.25, 0.5],
            deltas: vec![0.25, 0.5, 1.0],
            ball_ratios: vec![0.25, 0.5, 1.0],
            v: 1.0,
            l_values: vec![4, 8, 16, 32],
            starts_per_l: 5,
            replicas: 4000,
            cond_n: 400,
            cond_samples: 20_000,
            eps_values: vec![0.8, 0.4, 0.2],
            budget: None,
            kernel: KernelOptions::default(),
        }
    }
}

fn doubling(values: &[f64], what: &str) -> Result<()> {
    if values.len() < 2 || values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!("{what} needs at least two positive values")));
    }
    if values.windows(2).any(|w| (w[1] - 2.0 * w[0]).abs() > 1e-12 * w[1]) {
        return Err(Error::InvalidParameter(format!("{what} must double from one entry to the next")));
    }
    Ok(())
}

const EXACT_TOL: f64 = 1e-12;

/// `sup` over starts in the strip `0 < x_1 < w`, `|x_i| <= T` of
/// `P^x[tau > T]`, by backward recursion on the window
/// `x_1 in [0, w]`, `|x_i| <= 2T`.
fn strip_survival_sup(env: &Environment, w: i64, t: usize, opts: &KernelOptions) -> Result<f64> {
    let d = env.dimension();
    let side = 2 * t as i64;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    hi[0] = w;
    for i in 1..d {
        lo[i] = -side;
        hi[i] = side;
    }
    let window = LatticeBox::new(Point::new(&lo[..d])?, Point::new(&hi[..d])?)?;
    let h1 = TargetSet::Hyperplane { axis: 0, level: 0 };
    let h2 = TargetSet::Hyperplane { axis: 0, level: w };
    let walls = TargetSet::Union(vec![h1, h2]);
    let prop = Propagator::new(env, window, &[&walls], opts)?;
    let len = prop.cell_count();
    let mut u = vec![0.0; len];
    let mut next = vec![0.0; len];
    // u_0 = 1 on the free cells of the window; padding stays 0
    for (idx, slot) in u.iter_mut().enumerate() {
        let x = prop.point_of(idx);
        if window.contains(&x) && !prop.is_absorbed(idx) {
            *slot = 1.0;
        }
    }
    for _ in 0..t {
        prop.apply_backward(&u, &mut next);
        std::mem::swap(&mut u, &mut next);
    }
    let mut sup: f64 = 0.0;
    for (idx, &val) in u.iter().enumerate() {
        let x = prop.point_of(idx);
        let inner = x.get(0) > 0 && x.get(0) < w && (1..d).all(|i| x.get(i).abs() <= t as i64);
        if inner && window.contains(&x) {
            sup = sup.max(val);
        }
    }
    Ok(sup)
}

/// `P^0[tau_A <= T]` for `A = {y : |y|_1 > r}`.
fn ball_exit(env: &Environment, r: i64, t: usize, opts: &KernelOptions) -> Result<f64> {
    let d = env.dimension();
    let outside = TargetSet::BallComplement {
        center: Point::origin(d),
        radius: r,
    };
    let mut prop = Propagator::new(env, LatticeBox::around(Point::origin(d), r + 1), &[&outside], opts)?;
    prop.reset(Point::origin(d))?;
    for _ in 0..t {
        prop.step()?;
    }
    Ok(prop.killed()[0])
}

fn lem0i(env: &Environment, p: &LemmaParams) -> Result<CheckBundle> {
    doubling(&p.deltas, "deltas")?;
    let sqrt_n = (p.n as f64).sqrt();
    let mut table = Table::new(["h", "delta", "w", "steps", "probability", "p_delta_over_h"]);
    let mut ok = true;
    let mut compared = 0;
    let mut c5: f64 = 0.0;
    for &h in &p.h_values {
        let w = (h * sqrt_n).floor() as i64;
        if w < 2 {
            return Err(Error::InvalidParameter(format!("strip width floor(h sqrt n) = {w} < 2")));
        }
        let mut prev: Option<(f64, f64)> = None;
        for &delta in &p.deltas {
            let t = (delta * delta * p.n as f64).round() as usize;
            let prob = strip_survival_sup(env, w, t.max(1), &p.kernel)?;
            c5 = c5.max(prob * delta / h);
            table.push(vec![h, delta, w as f64, t as f64, prob, prob * delta / h]);
            if let Some((d0, p0)) = prev {
                // only where the bound h / delta is informative
                if h / d0 <= 1.0 {
                    compared += 1;
                    ok &= prob <= 0.5 * p0 + EXACT_TOL;
                }
            }
            prev = Some((delta, prob));
        }
    }
    let mut b = CheckBundle::default();
    b.checks.push(
        CheckResult::new("lemma.lem0i", json!({ "n": p.n, "h": p.h_values, "deltas": p.deltas }), c5, ok && compared > 0)
            .with_detail(format!(
                "doubling delta at least halves the exact strip survival on {compared} pairs with h <= delta; max p delta / h = {c5:.4}"
            )),
    );
    b.tables.insert("lem0i".into(), table);
    Ok(b)
}

fn lem0ii(env: &Environment, p: &LemmaParams) -> Result<CheckBundle> {
    doubling(&p.ball_ratios, "ball_ratios")?;
    let sqrt_n = (p.n as f64).sqrt();
    let mut table = Table::new(["h", "delta", "radius", "steps", "probability", "p_h_over_delta"]);
    let mut ok = true;
    let mut compared = 0;
    let mut c6: f64 = 0.0;
    for &h in &p.h_values {
        let r = (h * sqrt_n).floor() as i64;
        if r < 1 {
            return Err(Error::InvalidParameter("need h sqrt n >= 1".into()));
        }
        let mut prev: Option<f64> = None;
        for &ratio in &p.ball_ratios {
            let delta = ratio * h;
            let t = (delta * delta * p.n as f64).round() as usize;
            let prob = ball_exit(env, r, t, &p.kernel)?;
            c6 = c6.max(prob / ratio);
            table.push(vec![h, delta, r as f64, t as f64, prob, prob / ratio]);
            if let (Some(p0), true) = (prev, ratio <= 1.0) {
                compared += 1;
                // p(delta / 2) <= p(delta) / 2, read from the smaller ratio upward
                ok &= p0 <= 0.5 * prob + EXACT_TOL;
            }
            prev = Some(prob);
        }
    }
    let mut b = CheckBundle::default();
    b.checks.push(
        CheckResult::new(
            "lemma.lem0ii",
            json!({ "n": p.n, "h": p.h_values, "ball_ratios": p.ball_ratios }),
            c6,
            ok && compared > 0,
        )
        .with_detail(format!(
            "halving delta at least halves the exact early-exit probability on {compared} pairs with delta <= h; max p h / delta = {c6:.4}"
        )),
    );
    b.tables.insert("lem0ii".into(), table);
    Ok(b)
}

/// Transverse offsets spread evenly over `[-l, l]`.
fn transverse_offsets(l: i64, count: usize) -> Vec<i64> {
    if count <= 1 {
        return vec![0];
    }
    let mut v: Vec<i64> = (0..count)
        .map(|i| (-l as f64 + 2.0 * l as f64 * i as f64 / (count - 1) as f64).round() as i64)
        .collect();
    v.dedup();
    v
}

fn start_at(d: usize, l: i64, y2: i64) -> Result<Point> {
    let mut c = [0i64; MAX_DIM];
    c[0] = l;
    if d > 1 {
        c[1] = y2;
    }
    Point::new(&c[..d])
}

/// One walk from `start` until `x_1` hits `0` or `top`; true on `top`.
fn reaches_top(env: &Environment, start: Point, top: i64, stream: StreamId) -> bool {
    let mut rng = stream.rng();
    let mut walker = Walker::new(env, start);
    loop {
        let x1 = walker.step(&mut rng).get(0);
        if x1 == top {
            return true;
        }
        if x1 == 0 {
            return false;
        }
    }
}

fn lem1_estimates(env: &Environment, p: &LemmaParams, seed: u64) -> Result<Vec<(i64, i64, Proportion)>> {
    if !(p.v > 0.0) || p.l_values.iter().any(|&l| l < 1) || p.l_values.is_empty() {
        return Err(Error::InvalidParameter("lem1 requires v > 0 and l >= 1".into()));
    }
    if p.replicas < 2 {
        return Err(Error::InvalidParameter("lem1 requires replicas >= 2".into()));
    }
    let d = env.dimension();
    let mut out = Vec::new();
    for &l in &p.l_values {
        let top = ((p.v + 1.0) * l as f64).floor() as i64;
        if top <= l {
            return Err(Error::InvalidParameter(format!("(v + 1) l = {top} does not exceed l = {l}")));
        }
        for (j, y2) in transverse_offsets(l, p.starts_per_l).into_iter().enumerate() {
            let start = start_at(d, l, y2)?;
            let base = StreamId::new(derive_seed(seed, (l as u64) << 16 | j as u64), Domain::Probe, 0);
            let hits = map_indices(0..p.replicas, |i| reaches_top(env, start, top, base.with_index(i)));
            let k = hits.iter().filter(|&&b| b).count() as u64;
            out.push((l, y2, Proportion::new(k, p.replicas)));
        }
    }
    Ok(out)
}

/// Exact `P^start[tau_top < tau_0]`, iterated until the leftover mass is
/// below `1e-10` or the window side is reached in steps.
pub fn exact_progress_probability(env: &Environment, start: Point, top: i64, opts: &KernelOptions) -> Result<f64> {
    let d = env.dimension();
    let side = 16 * top * top;
    let max_steps = side as usize;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    hi[0] = top;
    for i in 1..d {
        lo[i] = start.get(i) - side;
        hi[i] = start.get(i) + side;
    }
    let window = LatticeBox::new(Point::new(&lo[..d])?, Point::new(&hi[..d])?)?;
    let split = exact_hitting_split(
        env,
        start,
        window,
        &TargetSet::Hyperplane { axis: 0, level: top },
        &TargetSet::Hyperplane { axis: 0, level: 0 },
        max_steps,
        1e-10,
        opts,
    )?;
    if split.remaining >= 1e-6 {
        return Err(Error::Resource(format!("{} mass left after {} steps", split.remaining, split.steps)));
    }
    Ok(split.first)
}

fn lem1(env: &Environment, p: &LemmaParams, seed: u64) -> Result<CheckBundle> {
    let rows = lem1_estimates(env, p, seed)?;
    let mut table = Table::new(["l", "y2", "probability", "stderr"]);
    let mut lower = f64::INFINITY;
    for (l, y2, prop) in &rows {
        table.push(vec![*l as f64, *y2 as f64, prop.estimate(), prop.stderr()]);
        lower = lower.min(prop.estimate() - 2.0 * prop.stderr());
    }
    let inf = rows.iter().map(|r| r.2.estimate()).fold(f64::INFINITY, f64::min);
    let mut b = CheckBundle::default();
    b.checks.push(
        CheckResult::new(
            "lemma.lem1",
            json!({ "v": p.v, "l": p.l_values, "starts_per_l": p.starts_per_l, "replicas": p.replicas }),
            inf,
            lower > 0.05,
        )
        .with_err(inf - lower)
        .with_detail(format!("inf over starts {inf:.4}; inf of (p - 2 se) = {lower:.4} must exceed 0.05")),
    );
    b.tables.insert("lem1".into(), table);
    Ok(b)
}

fn conditioned(env: &Environment, p: &LemmaParams, seed: u64, which: LemmaId) -> Result<CheckBundle> {
    if p.eps_values.len() < 2 || p.eps_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("eps_values must decrease and have at least two entries".into()));
    }
    let samples = rejection_sample(env, p.cond_n, p.cond_samples, p.budget, derive_seed(seed, 0xC0D))?;
    if let Some(w) = &samples.warning {
        return Err(Error::Budget(w.clone()));
    }
    let stats = p
        .eps_values
        .iter()
        .map(|&e| conditional_hitting_stats(&samples, e))
        .collect::<Result<Vec<_>>>()?;
    let pick = |s: &crate::conditioning::HittingStats| if which == LemmaId::Lem2 { s.p_slow } else { s.p_transversal };
    let mut table = Table::new(["eps", "level", "probability", "stderr"]);
    for s in &stats {
        let q = pick(s);
        table.push(vec![s.eps, s.level as f64, q.estimate(), q.stderr()]);
    }
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for w in stats.windows(2) {
        let (a, b) = (pick(&w[0]), pick(&w[1]));
        let slack = 2.0 * (a.stderr().powi(2) + b.stderr().powi(2)).sqrt();
        let rise = b.estimate() - a.estimate();
        worst = worst.max(rise - slack);
        ok &= rise <= slack;
    }
    let values = stats.iter().map(|s| format!("{:.4}", pick(s).estimate())).collect::<Vec<_>>().join(" > ");
    let name = which.name();
    let mut b = CheckBundle::default();
    b.checks.push(
        CheckResult::new(
            format!("lemma.{name}"),
            json!({ "n": p.cond_n, "samples": p.cond_samples, "eps": p.eps_values }),
            pick(stats.last().expect("two eps values")).estimate(),
            ok,
        )
        .with_detail(format!("estimates along eps {values}; largest rise beyond 2 se {worst:.4}")),
    );
    b.tables.insert(name.into(), table);
    Ok(b)
}

/// Runs one lemma probe and returns its check and table.
pub fn lemma_probe(env: &Environment, id: LemmaId, params: &LemmaParams, seed: u64) -> Result<CheckBundle> {
    let started = Instant::now();
    let mut b = match id {
        LemmaId::Lem0i => lem0i(env, params)?,
        LemmaId::Lem0ii => lem0ii(env, params)?,
        LemmaId::Lem1 => lem1(env, params, seed)?,
        LemmaId::Lem2 | LemmaId::Lem3 => conditioned(env, params, seed, id)?,
    };
    let elapsed = started.elapsed().as_secs_f64();
    for c in &mut b.checks {
        c.runtime_s = elapsed;
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_one_step() {
        // width 2: from x_1 = 1 every move along e_1 is absorbed
        let env = Environment::constant(2).unwrap();
        let s = strip_survival_sup(&env, 2, 1, &KernelOptions::default()).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        let s3 = strip_survival_sup(&env, 2, 3, &KernelOptions::default()).unwrap();
        assert!((s3 - 0.125).abs() < 1e-15);
    }

    #[test]
    fn ball_first_exit() {
        // radius 1: the first step stays inside, the second can leave
        let env = Environment::constant(2).unwrap();
        let o = KernelOptions::default();
        assert_eq!(ball_exit(&env, 1, 1, &o).unwrap(), 0.0);
        assert!(ball_exit(&env, 1, 2, &o).unwrap() > 0.0);
    }

    #[test]
    fn progress_is_one_half_by_symmetry() {
        let env = Environment::constant(2).unwrap();
        let p = exact_progress_probability(&env, Point::new(&[4, 0]).unwrap(), 8, &KernelOptions::default()).unwrap();
        assert!((p - 0.5).abs() < 1e-8, "{p}");
    }

    #[test]
    fn monte_carlo_matches_exact_at_small_l() {
        let env = Environment::iid_uniform(2, 0.5, 7).unwrap();
        let params = LemmaParams {
            l_values: vec![4],
            starts_per_l: 3,
            replicas: 4000,
            ..LemmaParams::default()
        };
        for (l, y2, prop) in lem1_estimates(&env, &params, 3).unwrap() {
            let exact = exact_progress_probability(&env, start_at(2, l, y2).unwrap(), 2 * l, &params.kernel).unwrap();
            assert!((prop.estimate() - exact).abs() < 3.0 * prop.stderr(), "y2 = {y2}: {} vs {exact}", prop.estimate());
        }
    }

    #[test]
    fn parameter_validation() {
        let env = Environment::constant(2).unwrap();
        let bad = LemmaParams {
            v: 0.0,
            ..LemmaParams::default()
        };
        assert!(lemma_probe(&env, LemmaId::Lem1, &bad, 1).is_err());
        let bad = LemmaParams {
            deltas: vec![0.25, 0.4],
            ..LemmaParams::default()
        };
        assert!(lemma_probe(&env, LemmaId::Lem0i, &bad, 1).is_err());
        assert_eq!("lem0ii".parse::<LemmaId>().unwrap(), LemmaId::Lem0ii);
    }

    #[test]
    fn exact_probes_pass_on_constant_environment() {
        let env = Environment::constant(2).unwrap();
        let p = LemmaParams::default();
        assert!(lemma_probe(&env, LemmaId::Lem0i, &p, 0).unwrap().all_pass());
        assert!(lemma_probe(&env, LemmaId::Lem0ii, &p, 0).unwrap().all_pass());
    }
}
