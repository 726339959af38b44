//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_INTERVALS: usize = 1 << 16;
/// Infinite limits are cut this many scale units past the bulk of the mass.
pub const TRUNCATION_SIGMAS: f64 = 8.0;

/// Value of an integral with the bookkeeping needed to judge it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quad {
    pub value: f64,
    /// Sum of the per-interval Richardson error estimates.
    pub error: f64,
    pub intervals: usize,
    /// Bound on the mass discarded by truncating an infinite limit.
    pub truncation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimpsonOptions {
    pub tol: f64,
    pub max_intervals: usize,
    /// Panels the range is split into before adapting, so narrow peaks are
    /// not missed by the first coarse estimate.
    pub initial_panels: usize,
}

impl Default for SimpsonOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_intervals: MAX_INTERVALS,
            initial_panels: 16,
        }
    }
}

impl SimpsonOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
}

/// `int_a^b f` to absolute tolerance `opts.tol`.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: &SimpsonOptions) -> Result<Quad> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("simpson needs finite limits, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quad {
            value: 0.0,
            error: 0.0,
            intervals: 0,
            truncation: 0.0,
        });
    }
    let panels = opts.initial_panels.max(1);
    let width = (b - a) / panels as f64;
    let mut stack = Vec::with_capacity(64);
    let mut fa = f(a);
    for i in 0..panels {
        let lo = a + width * i as f64;
        let hi = if i + 1 == panels { b } else { lo + width };
        let fm = f(0.5 * (lo + hi));
        let fb = f(hi);
        stack.push(Panel {
            a: lo,
            b: hi,
            fa,
            fm,
            fb,
            whole: (hi - lo) / 6.0 * (fa + 4.0 * fm + fb),
            tol: opts.tol / panels as f64,
        });
        fa = fb;
    }
    let mut value = 0.0;
    let mut error = 0.0;
    let mut intervals = panels;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let flm = f(0.5 * (p.a + m));
        let frm = f(0.5 * (m + p.b));
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
        let delta = left + right - p.whole;
        if delta.abs() <= 15.0 * p.tol || m <= p.a || m >= p.b {
            value += left + right + delta / 15.0;
            error += delta.abs() / 15.0;
            continue;
        }
        intervals += 1;
        if intervals > opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "no convergence on [{a}, {b}] within {} intervals",
                opts.max_intervals
            )));
        }
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol: 0.5 * p.tol,
        });
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
            tol: 0.5 * p.tol,
        });
    }
    if !value.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(Quad {
        value,
        error,
        intervals,
        truncation: 0.0,
    })
}

/// `int_a^b f` where `b` may be infinite: the range is cut at `cutoff` and
/// `tail(cutoff)` is recorded as the truncation bound.
pub fn simpson_truncated<F, T>(f: F, a: f64, b: f64, cutoff: f64, tail: T, opts: &SimpsonOptions) -> Result<Quad>
where
    F: FnMut(f64) -> f64,
    T: Fn(f64) -> f64,
{
    if b <= cutoff {
        return simpson(f, a, b, opts);
    }
    let mut q = simpson(f, a, cutoff.max(a), opts)?;
    q.truncation = tail(cutoff.max(a));
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = simpson(|x| x * x * x - x, 0.0, 2.0, &SimpsonOptions::default()).unwrap();
        assert!((q.value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_mass() {
        let opts = SimpsonOptions::default();
        let q = simpson(|x| (-0.5 * x * x).exp(), -8.0, 8.0, &opts).unwrap();
        assert!((q.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn narrow_peak() {
        let s = 1e-3;
        let q = simpson(|x| (-0.5 * ((x - 0.3) / s).powi(2)).exp(), 0.0, 1.0, &SimpsonOptions::default()).unwrap();
        assert!((q.value - s * (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn interval_cap() {
        let opts = SimpsonOptions {
            tol: 1e-15,
            max_intervals: 20,
            initial_panels: 4,
        };
        assert!(matches!(
            simpson(|x: f64| x.sqrt(), 0.0, 1.0, &opts),
            Err(Error::Quadrature(_))
        ));
    }

    #[test]
    fn truncation_is_recorded() {
        let q = simpson_truncated(
            |x: f64| (-x).exp(),
            0.0,
            f64::INFINITY,
            40.0,
            |c: f64| (-c).exp(),
            &SimpsonOptions::default(),
        )
        .unwrap();
        assert!((q.value - 1.0).abs() < 1e-9);
        assert!(q.truncation > 0.0 && q.truncation < 1e-17);
    }
}
