//! One function per experiment kind.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use condwalk::conditioning::{exact_survival_curve, rejection_sample};
use condwalk::kernel::KernelOptions;
use condwalk::meander::{cdf_table, density_table, FddQuery};
use condwalk::report::{csv_writer, CheckBundle};
use condwalk::rng::{Domain, StreamId};
use condwalk::scaling::{build_whitening, estimate_sigma};
use condwalk::verify::main_check::{fdd_check_on, main_checks_on};
use condwalk::verify::{
    heatkernel_envelope, lemma_probe, tightness_check, uclt_check, ConditionedEnsemble, LemmaId, LemmaParams,
    MainCheckParams, TightnessParams, UcltParams, WhiteningSource,
};
use condwalk::walk::simulate_stream;
use condwalk::{Environment, Error, Point, Result};

/// What an experiment produced, before it is written out.
#[derive(Default)]
pub struct Outcome {
    pub bundle: CheckBundle,
    pub result: Value,
    /// Extra files (name, contents) besides the report and tables.
    pub files: Vec<(String, Vec<u8>)>,
}

fn start_point(env: &Environment, start: &Option<Vec<i64>>) -> Result<Point> {
    match start {
        None => Ok(Point::origin(env.dimension())),
        Some(c) if c.len() == env.dimension() => Point::new(c),
        Some(c) => Err(Error::InvalidParameter(format!(
            "start has {} coordinates, the environment has dimension {}",
            c.len(),
            env.dimension()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub n: usize,
    pub paths: u64,
    /// Start point; the origin when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<i64>>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            n: 100,
            paths: 10,
            start: None,
        }
    }
}

pub fn simulate(env: &Environment, p: &SimulateParams, seed: u64) -> Result<Outcome> {
    let start = start_point(env, &p.start)?;
    let base = StreamId::new(seed, Domain::Walk, 0);
    let paths: Vec<_> = (0..p.paths)
        .into_par_iter()
        .map(|i| simulate_stream(env, start, p.n, base.with_index(i)))
        .collect();
    let d = env.dimension();
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        let mut header = vec!["path".to_string(), "time".into()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (id, path) in paths.iter().enumerate() {
            for k in 0..=path.steps() {
                let mut row = vec![id.to_string(), k.to_string()];
                row.extend((0..d).map(|i| path.coord(k, i).to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
    }
    let stayed = paths.iter().filter(|p| p.stays_positive()).count();
    Ok(Outcome {
        result: json!({ "paths": paths.len(), "stayed_positive": stayed }),
        files: vec![("paths.csv".into(), buf)],
        ..Outcome::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionParams {
    pub n: usize,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    pub endpoints_only: bool,
    /// Also write the exact survival curve `P[Lambda_k]`, `k <= n`.
    pub survival: bool,
}

impl Default for ConditionParams {
    fn default() -> Self {
        Self {
            n: 100,
            samples: 1000,
            budget: None,
            endpoints_only: false,
            survival: false,
        }
    }
}

pub fn condition(env: &Environment, p: &ConditionParams, seed: u64) -> Result<Outcome> {
    let set = rejection_sample(env, p.n, p.samples, p.budget, seed)?;
    if let Some(w) = set.warning {
        return Err(Error::Budget(w));
    }
    let mut buf = Vec::new();
    set.write_csv(&mut buf, p.endpoints_only)?;
    let mut files = vec![("samples.csv".to_string(), buf)];
    if p.survival {
        let curve = exact_survival_curve(env, p.n, &KernelOptions::default())?;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        files.push(("survival.csv".into(), buf));
    }
    let acc = set.acceptance();
    Ok(Outcome {
        result: json!({
            "accepted": set.paths.len(),
            "raw_attempts": set.raw_attempts,
            "acceptance_rate": set.acceptance_rate,
            "acceptance_stderr": acc.stderr(),
        }),
        files,
        ..Outcome::default()
    })
}

pub fn verify_main(env: &Environment, p: &MainCheckParams, seed: u64) -> Result<Outcome> {
    let ens = ConditionedEnsemble::sample(env, p.n, p.samples, p.budget, &p.whitening, seed)?;
    let bundle = main_checks_on(&ens, p)?;
    Ok(Outcome {
        result: json!({
            "acceptance_rate": ens.samples.acceptance_rate,
            "raw_attempts": ens.samples.raw_attempts,
            "whitening": ens.whitening.d,
        }),
        bundle,
        files: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FddParams {
    pub n: usize,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    pub dequantize: bool,
    /// Pass when the estimate is within this many standard errors.
    pub sigmas: f64,
    pub whitening: WhiteningSource,
    /// Defaults to `{W+(1/2) <= 1, |B_j(1/2)| <= 1}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<FddQuery>,
}

impl Default for FddParams {
    fn default() -> Self {
        let m = MainCheckParams::default();
        Self {
            n: m.n,
            samples: m.samples,
            budget: None,
            dequantize: true,
            sigmas: 3.0,
            whitening: m.whitening,
            query: None,
        }
    }
}

pub fn verify_fdd(env: &Environment, p: &FddParams, seed: u64) -> Result<Outcome> {
    let query = p
        .query
        .clone()
        .unwrap_or_else(|| FddQuery::single(0.5, 1.0, vec![(-1.0, 1.0); env.dimension() - 1]));
    if query.dim() != env.dimension() {
        return Err(Error::InvalidParameter(format!(
            "query has dimension {}, the environment {}",
            query.dim(),
            env.dimension()
        )));
    }
    query.validate()?;
    let ens = ConditionedEnsemble::sample(env, p.n, p.samples, p.budget, &p.whitening, seed)?;
    let check = fdd_check_on(&ens, &query, p.dequantize, p.sigmas)?;
    Ok(Outcome {
        result: json!({ "query": query, "acceptance_rate": ens.samples.acceptance_rate }),
        bundle: CheckBundle {
            checks: vec![check],
            ..CheckBundle::default()
        },
        files: Vec::new(),
    })
}

pub fn verify_uclt(env: &Environment, p: &UcltParams, seed: u64) -> Result<Outcome> {
    Ok(Outcome {
        bundle: uclt_check(env, p, seed)?,
        ..Outcome::default()
    })
}

pub fn verify_tightness(env: &Environment, p: &TightnessParams, seed: u64) -> Result<Outcome> {
    let report = tightness_check(env, p, seed)?;
    Ok(Outcome {
        bundle: report.bundle(),
        result: json!({
            "eps_hat": report.eps_hat,
            "rows": report.rows,
            "reference": report.reference,
            "monotone_paths": report.monotone_paths,
        }),
        files: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatkernelParams {
    pub n_values: Vec<usize>,
    pub kernel: KernelOptions,
}

impl Default for HeatkernelParams {
    fn default() -> Self {
        Self {
            n_values: vec![20, 40, 60],
            kernel: KernelOptions::default(),
        }
    }
}

pub fn verify_heatkernel(env: &Environment, p: &HeatkernelParams) -> Result<Outcome> {
    let (runs, bundle) = heatkernel_envelope(env, &p.n_values, &p.kernel)?;
    Ok(Outcome {
        bundle,
        result: json!({ "runs": runs }),
        files: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmasParams {
    pub lemmas: Vec<LemmaId>,
    pub probe: LemmaParams,
}

impl Default for LemmasParams {
    fn default() -> Self {
        Self {
            lemmas: LemmaId::ALL.to_vec(),
            probe: LemmaParams::default(),
        }
    }
}

pub fn verify_lemmas(env: &Environment, p: &LemmasParams, seed: u64) -> Result<Outcome> {
    if p.lemmas.is_empty() {
        return Err(Error::InvalidParameter("no lemmas selected".into()));
    }
    let mut bundle = CheckBundle::default();
    for &id in &p.lemmas {
        bundle.merge(lemma_probe(env, id, &p.probe, seed)?);
    }
    Ok(Outcome {
        bundle,
        ..Outcome::default()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanderQuantity {
    Density,
    Cdf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanderTableParams {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub quantity: MeanderQuantity,
}

impl Default for MeanderTableParams {
    fn default() -> Self {
        Self {
            times: vec![0.25, 0.5, 0.75, 1.0],
            xs: (1..=40).map(|i| 0.1 * i as f64).collect(),
            quantity: MeanderQuantity::Density,
        }
    }
}

pub fn meander_table(p: &MeanderTableParams) -> Result<Outcome> {
    let (name, table) = match p.quantity {
        MeanderQuantity::Density => ("meander_density", density_table(&p.times, &p.xs)?),
        MeanderQuantity::Cdf => ("meander_cdf", cdf_table(&p.times, &p.xs)?),
    };
    let mut bundle = CheckBundle::default();
    bundle.tables.insert(name.into(), table);
    Ok(Outcome {
        bundle,
        ..Outcome::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaParams {
    pub n: usize,
    pub replicas: u64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self {
            n: 400,
            replicas: 100_000,
        }
    }
}

pub fn sigma_estimate(env: &Environment, p: &SigmaParams, seed: u64) -> Result<Outcome> {
    let estimate = estimate_sigma(env, p.n, p.replicas, seed)?;
    let map = build_whitening(&estimate)?;
    Ok(Outcome {
        result: json!({ "estimate": estimate, "whitening": map.d }),
        files: vec![("whitening.txt".into(), map.to_text().into_bytes())],
        ..Outcome::default()
    })
}
