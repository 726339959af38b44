//! Acceptance run: every criterion prints one PASS/FAIL line; the process
//! exits non-zero when any criterion fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use condwalk::conditioning::{exact_conditioned_endpoint, exact_survival_curve, rejection_sample};
use condwalk::kernel::KernelOptions;
use condwalk::meander::{chapman_kolmogorov, meander_cdf, FddQuery, MeanderKernelQuery};
use condwalk::quadrature::SimpsonOptions;
use condwalk::report::CheckBundle;
use condwalk::verify::main_check::{fdd_check_on, main_checks_on};
use condwalk::verify::{
    heatkernel_envelope, lemma_probe, null_calibration, tightness_check, uclt_check, ConditionedEnsemble, KsReference,
    LemmaId, LemmaParams, MainCheckParams, TightnessParams, UcltParams,
};
use condwalk::{Environment, Point, Result};

const SEED: u64 = 20_260_101;

fn iid_env() -> Environment {
    Environment::iid_uniform(2, 0.5, 7).expect("valid environment")
}

fn constant_env() -> Environment {
    Environment::constant(2).expect("valid environment")
}

struct Outcome {
    pass: bool,
    summary: String,
}

fn check_lines(b: &CheckBundle) -> String {
    b.checks
        .iter()
        .map(|c| c.summary_line())
        .collect::<Vec<_>>()
        .join("\n        ")
}

fn with_limit(mut o: Outcome, elapsed: f64, limit: Option<f64>) -> Outcome {
    if let Some(l) = limit {
        if elapsed > l {
            o.pass = false;
            o.summary.push_str(&format!("; runtime {elapsed:.1}s over the {l:.0}s limit"));
        }
    }
    o
}

fn tv_distance(env: &Environment, n: usize, count: usize, seed: u64) -> Result<f64> {
    let exact = exact_conditioned_endpoint(env, n)?;
    let samples = rejection_sample(env, n, count, None, seed)?;
    let mut counts: HashMap<Point, u64> = HashMap::new();
    for p in &samples.paths {
        *counts.entry(p.last()).or_default() += 1;
    }
    let total = samples.paths.len() as f64;
    let mut tv = 0.0;
    for (y, p) in exact.entries() {
        tv += (counts.remove(y).unwrap_or(0) as f64 / total - p).abs();
    }
    // sampled endpoints the exact law does not charge
    tv += counts.values().map(|&c| c as f64 / total).sum::<f64>();
    Ok(0.5 * tv)
}

fn oracle_equivalence() -> Result<Outcome> {
    let c = tv_distance(&constant_env(), 12, 100_000, SEED)?;
    let i = tv_distance(&iid_env(), 12, 100_000, SEED + 1)?;
    Ok(Outcome {
        pass: c < 0.02 && i < 0.02,
        summary: format!("TV at n=12: constant {c:.4}, iid {i:.4} (need < 0.02)"),
    })
}

fn meander_analytics() -> Result<Outcome> {
    let opts = SimpsonOptions::default();
    let mut mass_err: f64 = 0.0;
    for t in [0.1, 0.25, 0.5, 0.75, 1.0] {
        let q = meander_cdf(t, f64::INFINITY, &opts)?;
        mass_err = mass_err.max((q.value - 1.0).abs() + q.truncation);
    }
    let mut ck_err: f64 = 0.0;
    let mut points = 0;
    for (t1, s, t2) in [(0.1, 0.4, 0.7), (0.2, 0.5, 1.0), (0.5, 0.7, 0.9)] {
        for x1 in [0.3, 1.0, 2.0] {
            for x2 in [0.2, 0.8, 1.5] {
                let (direct, through) = chapman_kolmogorov(&MeanderKernelQuery { t1, x1, t2, x2 }, s, &opts)?;
                ck_err = ck_err.max((direct - through).abs());
                points += 1;
            }
        }
    }
    Ok(Outcome {
        pass: mass_err < 1e-8 && ck_err < 1e-6,
        summary: format!("max |mass - 1| = {mass_err:.2e} (< 1e-8); max Chapman-Kolmogorov gap over {points} points = {ck_err:.2e} (< 1e-6)"),
    })
}

fn main_theorem(ens: &ConditionedEnsemble) -> Result<Outcome> {
    let b = main_checks_on(ens, &MainCheckParams::default())?;
    Ok(Outcome {
        pass: b.all_pass(),
        summary: format!(
            "n={}, {} samples, acceptance {:.4}\n        {}",
            ens.n(),
            ens.samples.paths.len(),
            ens.samples.acceptance_rate,
            check_lines(&b)
        ),
    })
}

fn single_time(ens: &ConditionedEnsemble) -> Result<Outcome> {
    let q = FddQuery::single(0.5, 1.0, vec![(-1.0, 1.0)]);
    let c = fdd_check_on(ens, &q, true, 3.0)?;
    Ok(Outcome {
        pass: c.pass,
        summary: format!(
            "box probability {:.5} +- {:.5} vs quadrature {:.5}",
            c.statistic,
            c.err.unwrap_or(f64::NAN),
            c.reference.unwrap_or(f64::NAN)
        ),
    })
}

fn survival() -> Result<Outcome> {
    let curve = exact_survival_curve(&constant_env(), 128, &KernelOptions::default())?;
    let p = |n: usize| curve.at(n).expect("n within the curve").probability;
    let ratio = p(16) / p(64);
    let slope = curve.log_log_slope(&[16, 32, 64, 128]).unwrap_or(f64::NAN);
    let rel = (ratio - 2.0).abs() / 2.0;
    Ok(Outcome {
        pass: rel <= 0.15 && (-0.65..=-0.35).contains(&slope),
        summary: format!("P16/P64 = {ratio:.4} ({:.1}% from 2); log-log slope {slope:.4} (need [-0.65, -0.35])", 100.0 * rel),
    })
}

fn heat_kernel() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, env) in [("constant", constant_env()), ("iid", iid_env())] {
        let (_, b) = heatkernel_envelope(&env, &[20, 40, 60], &KernelOptions::default())?;
        pass &= b.all_pass();
        parts.push(format!("{name}:\n        {}", check_lines(&b)));
    }
    Ok(Outcome {
        pass,
        summary: parts.join("\n      "),
    })
}

fn tightness() -> Result<Outcome> {
    let report = tightness_check(&constant_env(), &TightnessParams::default(), SEED + 7)?;
    let b = report.bundle();
    Ok(Outcome {
        pass: b.all_pass(),
        summary: check_lines(&b),
    })
}

fn uclt() -> Result<Outcome> {
    let b = uclt_check(&iid_env(), &UcltParams::default(), SEED + 8)?;
    Ok(Outcome {
        pass: b.all_pass(),
        summary: check_lines(&b),
    })
}

fn lemmas() -> Result<Outcome> {
    let env = constant_env();
    let params = LemmaParams::default();
    let mut all = CheckBundle::default();
    for id in LemmaId::ALL {
        all.merge(lemma_probe(&env, id, &params, SEED + 9)?);
    }
    Ok(Outcome {
        pass: all.all_pass(),
        summary: check_lines(&all),
    })
}

fn calibration() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in [KsReference::Rayleigh, KsReference::Gaussian] {
        let c = null_calibration(r, 20_000, 100, 0.01, SEED + 10)?;
        pass &= c.rate() <= 0.02;
        parts.push(format!("{}: {} / {} rejections", r.name(), c.rejections, c.seeds));
    }
    Ok(Outcome {
        pass,
        summary: format!("{} at the 1% level (need rate <= 2%)", parts.join(", ")),
    })
}

/// The conditioned ensemble shared by the marginal and single-time criteria.
fn ensemble() -> Result<&'static ConditionedEnsemble> {
    static ENSEMBLE: OnceLock<std::result::Result<ConditionedEnsemble, String>> = OnceLock::new();
    ENSEMBLE
        .get_or_init(|| {
            let p = MainCheckParams::default();
            ConditionedEnsemble::sample(&constant_env(), p.n, p.samples, p.budget, &p.whitening, SEED + 3).map_err(|e| e.to_string())
        })
        .as_ref()
        .map_err(|e| condwalk::Error::Data(e.clone()))
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Option<f64>);
    let criteria: [Criterion; 10] = [
        (1, "oracle equivalence", Some(120.0)),
        (2, "meander analytics", Some(30.0)),
        (3, "main theorem marginals", Some(900.0)),
        (4, "single-time box law", None),
        (5, "survival ratio", Some(300.0)),
        (6, "heat-kernel envelopes", Some(300.0)),
        (7, "tightness trend", None),
        (8, "uclt uniformity", None),
        (9, "lemma probes", None),
        (10, "null calibration", None),
    ];
    let mut failures = 0;
    for (id, name, limit) in criteria {
        let started = Instant::now();
        let result = match id {
            1 => oracle_equivalence(),
            2 => meander_analytics(),
            3 => ensemble().and_then(main_theorem),
            4 => ensemble().and_then(single_time),
            5 => survival(),
            6 => heat_kernel(),
            7 => tightness(),
            8 => uclt(),
            9 => lemmas(),
            _ => calibration(),
        };
        let elapsed = started.elapsed().as_secs_f64();
        let outcome = match result {
            Ok(o) => with_limit(o, elapsed, limit),
            Err(e) => Outcome {
                pass: false,
                summary: format!("error: {e}"),
            },
        };
        if !outcome.pass {
            failures += 1;
        }
        println!(
            "{} [{id:>2}] {name} ({elapsed:.1}s): {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.summary
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
