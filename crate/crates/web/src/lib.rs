//! Browser bindings for the demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the numerics can be
//! tested natively.

use wasm_bindgen::prelude::*;

use condwalk::conditioning::{exact_survival_curve, rejection_sample};
use condwalk::kernel::KernelOptions;
use condwalk::meander::meander_density_from_origin;
use condwalk::{Environment, Error, Result};

/// Longest walk the page may request; exact survival is cubic in `n`.
pub const MAX_STEPS: usize = 400;

fn environment(kappa: f64, iid: bool, seed: u64) -> Result<Environment> {
    if iid {
        Environment::iid_uniform(2, kappa, seed)
    } else {
        Environment::constant(2)
    }
}

fn check_steps(n: usize) -> Result<()> {
    if n == 0 || n > MAX_STEPS {
        return Err(Error::InvalidParameter(format!("n must lie in 1..={MAX_STEPS}, got {n}")));
    }
    Ok(())
}

/// `q(0, 0; t, x)` at `points` evenly spaced `x` in `(0, x_max]`.
pub fn density_curve(t: f64, x_max: f64, points: usize) -> Result<Vec<f64>> {
    if !(x_max > 0.0) || points == 0 {
        return Err(Error::InvalidParameter("need x_max > 0 and points >= 1".into()));
    }
    (1..=points)
        .map(|i| meander_density_from_origin(t, x_max * i as f64 / points as f64))
        .collect()
}

/// One path of the walk conditioned on `{x_1 > 0}` for `n` steps, as
/// interleaved `x1, x2` coordinates of the `n + 1` visited sites.
pub fn conditioned_path(n: usize, kappa: f64, iid: bool, env_seed: u64, seed: u64) -> Result<Vec<i32>> {
    check_steps(n)?;
    let env = environment(kappa, iid, env_seed)?;
    let set = rejection_sample(&env, n, 1, Some(1_000_000), seed)?;
    let path = set
        .paths
        .first()
        .ok_or_else(|| Error::Budget(set.warning.unwrap_or_default()))?;
    Ok(path.points().flat_map(|p| [p.get(0) as i32, p.get(1) as i32]).collect())
}

/// Exact `P[Lambda_k]` for `k = 1..=n`.
pub fn survival(n: usize, kappa: f64, iid: bool, env_seed: u64) -> Result<Vec<f64>> {
    check_steps(n)?;
    let env = environment(kappa, iid, env_seed)?;
    let curve = exact_survival_curve(&env, n, &KernelOptions::default())?;
    Ok(curve.points.iter().map(|p| p.probability).collect())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = densityCurve)]
pub fn density_curve_js(t: f64, x_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    density_curve(t, x_max, points).map_err(js)
}

#[wasm_bindgen(js_name = conditionedPath)]
pub fn conditioned_path_js(n: usize, kappa: f64, iid: bool, env_seed: u32, seed: u32) -> Result<Vec<i32>, JsError> {
    conditioned_path(n, kappa, iid, env_seed.into(), seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = survivalCurve)]
pub fn survival_js(n: usize, kappa: f64, iid: bool, env_seed: u32) -> Result<Vec<f64>, JsError> {
    survival(n, kappa, iid, env_seed.into()).map_err(js)
}
