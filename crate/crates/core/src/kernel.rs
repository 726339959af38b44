//! Exact finite-window transition kernels.
//!
//! Mass functions live on a dense box of lattice sites padded by one layer of
//! permanently empty cells, so the neighbour lookups of the update never need
//! bounds checks. One step is the pull form of the kernel,
//!
//! ```text
//! next(y) = sum over neighbours x of y of  omega_{x,y} * mass(x) / pi_x
//! ```
//!
//! restricted to the bounding box of the current support grown by one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{Point, MAX_DIM};
use crate::walk::TargetSet;

pub const DEFAULT_CELL_CAP: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOptions {
    /// Largest number of lattice sites a window may hold.
    pub cell_cap: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            cell_cap: DEFAULT_CELL_CAP,
        }
    }
}

/// An axis-aligned box `lo..=hi` of lattice sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeBox {
    pub lo: Point,
    pub hi: Point,
}

impl LatticeBox {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if lo.dim() != hi.dim() || (0..lo.dim()).any(|i| lo.get(i) > hi.get(i)) {
            return Err(Error::InvalidParameter(format!("empty box {lo}..{hi}")));
        }
        Ok(Self { lo, hi })
    }

    /// The cube of half-width `radius` around `center`.
    pub fn around(center: Point, radius: i64) -> Self {
        let mut lo = center;
        let mut hi = center;
        for i in 0..center.dim() {
            lo.set(i, center.get(i) - radius);
            hi.set(i, center.get(i) + radius);
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn cells(&self) -> Option<usize> {
        (0..self.dim()).try_fold(1usize, |acc, i| {
            let w = usize::try_from(self.hi.get(i) - self.lo.get(i) + 1).ok()?;
            acc.checked_mul(w)
        })
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim()).all(|i| x.get(i) >= self.lo.get(i) && x.get(i) <= self.hi.get(i))
    }
}

/// Dense storage layout of a padded box. Axis 0 is contiguous.
#[derive(Clone, Debug)]
struct Layout {
    dim: usize,
    /// Lattice coordinate of padded index 0 on each axis.
    origin: [i64; MAX_DIM],
    extent: [usize; MAX_DIM],
    stride: [usize; MAX_DIM],
    len: usize,
}

impl Layout {
    fn padded(window: &LatticeBox) -> Self {
        let dim = window.dim();
        let mut origin = [0; MAX_DIM];
        let mut extent = [1; MAX_DIM];
        let mut stride = [0; MAX_DIM];
        let mut len = 1;
        for i in 0..dim {
            origin[i] = window.lo.get(i) - 1;
            extent[i] = (window.hi.get(i) - window.lo.get(i) + 3) as usize;
            stride[i] = len;
            len *= extent[i];
        }
        Self {
            dim,
            origin,
            extent,
            stride,
            len,
        }
    }

    #[inline]
    fn index(&self, x: &Point) -> usize {
        (0..self.dim)
            .map(|i| (x.get(i) - self.origin[i]) as usize * self.stride[i])
            .sum()
    }

    fn point(&self, mut idx: usize) -> Point {
        let mut p = Point::origin(self.dim);
        for i in (0..self.dim).rev() {
            let c = idx / self.stride[i];
            idx -= c * self.stride[i];
            p.set(i, self.origin[i] + c as i64);
        }
        p
    }

    /// Calls `f(first_index, row_len)` for every axis-0 row of `region`.
    fn for_each_row(&self, region: &Region, mut f: impl FnMut(usize, usize)) {
        let row_len = region.hi[0] - region.lo[0] + 1;
        let mut cur = region.lo;
        loop {
            let base: usize = (0..self.dim).map(|i| cur[i] * self.stride[i]).sum();
            f(base, row_len);
            let mut axis = 1;
            loop {
                if axis >= self.dim {
                    return;
                }
                if cur[axis] < region.hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = region.lo[axis];
                axis += 1;
            }
        }
    }
}

/// Box of padded indices (per-axis, inclusive).
#[derive(Clone, Copy, Debug)]
struct Region {
    lo: [usize; MAX_DIM],
    hi: [usize; MAX_DIM],
}

/// Repeated application of the quenched kernel on a fixed window, with
/// optional killing of mass that lands in tagged absorbing sets.
pub(crate) struct Propagator {
    layout: Layout,
    /// Conductance of the edge from each site along `+e_axis`, `dim` per cell.
    omega: Vec<f64>,
    inv_pi: Vec<f64>,
    /// 0 = free, k >= 1 = absorbed into class k.
    tags: Vec<u8>,
    classes: usize,
    mass: Vec<f64>,
    next: Vec<f64>,
    rho: Vec<f64>,
    active: Option<Region>,
    /// Real (unpadded) cells of the window as a padded-index region.
    inner: Region,
    killed: Vec<f64>,
    steps: usize,
}

impl Propagator {
    pub(crate) fn new(
        env: &Environment,
        window: LatticeBox,
        absorbing: &[&TargetSet],
        opts: &KernelOptions,
    ) -> Result<Self> {
        let d = env.dimension();
        if window.dim() != d {
            return Err(Error::InvalidParameter("window dimension mismatch".into()));
        }
        if absorbing.len() > u8::MAX as usize {
            return Err(Error::InvalidParameter("too many absorbing classes".into()));
        }
        window.cells().filter(|c| *c <= opts.cell_cap).ok_or_else(|| {
            Error::Resource(format!(
                "window {}..{} exceeds the cap of {} cells",
                window.lo, window.hi, opts.cell_cap
            ))
        })?;
        let layout = Layout::padded(&window);
        let len = layout.len;
        let mut inner = Region {
            lo: [0; MAX_DIM],
            hi: [0; MAX_DIM],
        };
        for i in 0..d {
            inner.lo[i] = 1;
            inner.hi[i] = layout.extent[i] - 2;
        }
        let mut omega = vec![0.0; len * d];
        let mut inv_pi = vec![0.0; len];
        let mut tags = vec![0u8; len];
        let compiled: Vec<_> = absorbing.iter().map(|t| t.compile()).collect();
        layout.for_each_row(&inner, |base, row| {
            for idx in base..base + row {
                let x = layout.point(idx);
                let mut pi = 0.0;
                for axis in 0..d {
                    let w = env.omega_positive(x, axis);
                    omega[idx * d + axis] = w;
                    pi += w + env.omega(x, axis, -1);
                }
                inv_pi[idx] = 1.0 / pi;
                if let Some(k) = compiled.iter().position(|t| t.contains(&x)) {
                    tags[idx] = (k + 1) as u8;
                }
            }
        });
        Ok(Self {
            layout,
            omega,
            inv_pi,
            tags,
            classes: absorbing.len(),
            mass: vec![0.0; len],
            next: vec![0.0; len],
            rho: vec![0.0; len],
            active: None,
            inner,
            killed: vec![0.0; absorbing.len()],
            steps: 0,
        })
    }

    /// Put unit mass at `start`. Absorption does not apply at time 0.
    pub(crate) fn reset(&mut self, start: Point) -> Result<()> {
        if let Some(a) = self.active {
            let (mass, layout) = (&mut self.mass, &self.layout);
            layout.for_each_row(&a, |b, r| mass[b..b + r].fill(0.0));
        }
        let idx = self.checked_index(&start)?;
        self.mass[idx] = 1.0;
        let mut region = Region {
            lo: [0; MAX_DIM],
            hi: [0; MAX_DIM],
        };
        for i in 0..self.layout.dim {
            let c = (start.get(i) - self.layout.origin[i]) as usize;
            region.lo[i] = c;
            region.hi[i] = c;
        }
        self.active = Some(region);
        self.killed.iter_mut().for_each(|k| *k = 0.0);
        self.steps = 0;
        Ok(())
    }

    fn checked_index(&self, x: &Point) -> Result<usize> {
        let inside = (0..self.layout.dim).all(|i| {
            let c = x.get(i) - self.layout.origin[i];
            c >= 1 && (c as usize) <= self.layout.extent[i] - 2
        });
        if !inside {
            return Err(Error::InvalidParameter(format!("{x} lies outside the kernel window")));
        }
        Ok(self.layout.index(x))
    }

    pub(crate) fn steps(&self) -> usize {
        self.steps
    }

    pub(crate) fn killed(&self) -> &[f64] {
        &self.killed
    }

    /// Advance one step. Fails if mass would leave the window.
    pub(crate) fn step(&mut self) -> Result<()> {
        let d = self.layout.dim;
        let Some(active) = self.active else {
            return Ok(());
        };
        for i in 0..d {
            if active.lo[i] <= self.inner.lo[i] || active.hi[i] >= self.inner.hi[i] {
                // support touches the window edge: the next step could leave it
                let mut edge_mass = false;
                self.layout.for_each_row(&active, |b, r| {
                    for idx in b..b + r {
                        if self.mass[idx] != 0.0 && self.on_edge(idx) {
                            edge_mass = true;
                        }
                    }
                });
                if edge_mass {
                    return Err(Error::Resource(format!(
                        "support reached the window boundary after {} steps",
                        self.steps
                    )));
                }
                break;
            }
        }
        let layout = &self.layout;
        {
            let (rho, mass, inv_pi) = (&mut self.rho, &self.mass, &self.inv_pi);
            layout.for_each_row(&active, |b, r| {
                for idx in b..b + r {
                    rho[idx] = mass[idx] * inv_pi[idx];
                }
            });
        }
        let mut grown = active;
        for i in 0..d {
            grown.lo[i] = (active.lo[i] - 1).max(self.inner.lo[i]);
            grown.hi[i] = (active.hi[i] + 1).min(self.inner.hi[i]);
        }
        {
            let (next, rho, omega, stride) = (&mut self.next, &self.rho, &self.omega, &layout.stride);
            layout.for_each_row(&grown, |b, r| {
                for idx in b..b + r {
                    let mut s = 0.0;
                    for axis in 0..d {
                        let st = stride[axis];
                        s += omega[(idx - st) * d + axis] * rho[idx - st] + omega[idx * d + axis] * rho[idx + st];
                    }
                    next[idx] = s;
                }
            });
        }
        {
            let (rho, mass) = (&mut self.rho, &mut self.mass);
            layout.for_each_row(&active, |b, r| {
                rho[b..b + r].fill(0.0);
                mass[b..b + r].fill(0.0);
            });
        }
        std::mem::swap(&mut self.mass, &mut self.next);
        if self.classes > 0 {
            let (mass, tags, killed) = (&mut self.mass, &self.tags, &mut self.killed);
            layout.for_each_row(&grown, |b, r| {
                for idx in b..b + r {
                    let t = tags[idx];
                    if t != 0 {
                        killed[t as usize - 1] += mass[idx];
                        mass[idx] = 0.0;
                    }
                }
            });
        }
        self.active = self.shrink(grown);
        self.steps += 1;
        Ok(())
    }

    fn on_edge(&self, idx: usize) -> bool {
        let p = self.layout.point(idx);
        (0..self.layout.dim).any(|i| {
            let c = (p.get(i) - self.layout.origin[i]) as usize;
            c <= self.inner.lo[i] || c >= self.inner.hi[i]
        })
    }

    /// Bounding box of the non-zero mass inside `region`.
    fn shrink(&self, region: Region) -> Option<Region> {
        let d = self.layout.dim;
        let mut lo = [usize::MAX; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        let mut any = false;
        let layout = &self.layout;
        layout.for_each_row(&region, |b, r| {
            let row = &self.mass[b..b + r];
            let Some(first) = row.iter().position(|m| *m != 0.0) else {
                return;
            };
            let last = row.iter().rposition(|m| *m != 0.0).unwrap_or(first);
            any = true;
            let p = layout.point(b);
            let c0 = (p.get(0) - layout.origin[0]) as usize;
            lo[0] = lo[0].min(c0 + first);
            hi[0] = hi[0].max(c0 + last);
            for i in 1..d {
                let c = (p.get(i) - layout.origin[i]) as usize;
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
        });
        any.then_some(Region { lo, hi })
    }

    pub(crate) fn total_mass(&self) -> f64 {
        let mut s = 0.0;
        if let Some(a) = self.active {
            self.layout.for_each_row(&a, |b, r| s += self.mass[b..b + r].iter().sum::<f64>());
        }
        s
    }

    /// Non-zero masses with their sites.
    pub(crate) fn support(&self) -> Vec<(Point, f64)> {
        let mut out = Vec::new();
        if let Some(a) = self.active {
            self.layout.for_each_row(&a, |b, r| {
                for idx in b..b + r {
                    if self.mass[idx] != 0.0 {
                        out.push((self.layout.point(idx), self.mass[idx]));
                    }
                }
            });
        }
        out
    }

    /// `out(x) = sum_y p(x, y) h(y)` over the free sites `y`, for every free
    /// site `x` of the window; absorbed sites get 0. Used by backward
    /// recursions for survival functions.
    pub(crate) fn apply_backward(&self, h: &[f64], out: &mut [f64]) {
        let d = self.layout.dim;
        let layout = &self.layout;
        let stride = &layout.stride;
        layout.for_each_row(&self.inner, |b, r| {
            for idx in b..b + r {
                let mut s = 0.0;
                for axis in 0..d {
                    let st = stride[axis];
                    s += free_value(&self.tags, idx + st, h) * self.omega[idx * d + axis]
                        + free_value(&self.tags, idx - st, h) * self.omega[(idx - st) * d + axis];
                }
                out[idx] = s * self.inv_pi[idx];
            }
        });
    }

    pub(crate) fn cell_count(&self) -> usize {
        self.layout.len
    }

    pub(crate) fn index_of(&self, x: &Point) -> Result<usize> {
        self.checked_index(x)
    }

    pub(crate) fn is_absorbed(&self, idx: usize) -> bool {
        self.tags[idx] != 0
    }

    /// Transition probabilities from the cell `idx` to its `2d` neighbours,
    /// ordered `+e_1, -e_1, ...`, as (neighbour index, probability).
    pub(crate) fn neighbours(&self, idx: usize, out: &mut [(usize, f64)]) {
        let d = self.layout.dim;
        for axis in 0..d {
            let st = self.layout.stride[axis];
            out[2 * axis] = (idx + st, self.omega[idx * d + axis] * self.inv_pi[idx]);
            out[2 * axis + 1] = (idx - st, self.omega[(idx - st) * d + axis] * self.inv_pi[idx]);
        }
    }

    pub(crate) fn point_of(&self, idx: usize) -> Point {
        self.layout.point(idx)
    }
}

#[inline]
fn free_value(tags: &[u8], idx: usize, h: &[f64]) -> f64 {
    if tags[idx] == 0 {
        h[idx]
    } else {
        0.0
    }
}

/// The law of `X(n)` from a fixed start, possibly killed on an absorbing set.
#[derive(Clone, Debug)]
pub struct KernelTable {
    start: Point,
    steps: usize,
    window: LatticeBox,
    masses: Vec<(Point, f64)>,
    killed: f64,
}

impl KernelTable {
    pub fn start(&self) -> Point {
        self.start
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn window(&self) -> LatticeBox {
        self.window
    }

    /// Mass at `y` (0 off the support).
    pub fn mass(&self, y: &Point) -> f64 {
        self.masses
            .binary_search_by(|(p, _)| p.as_slice().cmp(y.as_slice()))
            .map(|i| self.masses[i].1)
            .unwrap_or(0.0)
    }

    /// Non-zero masses, sorted lexicographically by site.
    pub fn entries(&self) -> &[(Point, f64)] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().map(|(_, m)| m).sum()
    }

    /// Mass killed by the absorbing set during the `n` steps.
    pub fn absorbed_mass(&self) -> f64 {
        self.killed
    }

    /// Divide every mass by `z`.
    pub fn normalized(mut self, z: f64) -> Self {
        for (_, m) in &mut self.masses {
            *m /= z;
        }
        self
    }

    /// Second moment matrix `sum_y m(y) (y - start)(y - start)^T`.
    pub fn second_moments(&self) -> Vec<Vec<f64>> {
        let d = self.start.dim();
        let mut out = vec![vec![0.0; d]; d];
        for (y, m) in &self.masses {
            let z = *y - self.start;
            for i in 0..d {
                for j in 0..d {
                    out[i][j] += m * (z.get(i) * z.get(j)) as f64;
                }
            }
        }
        out
    }

    /// CSV with header `y1,...,yd,mass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.start.dim();
        let mut w = crate::report::csv_writer(out);
        let mut header: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
        header.push("mass".into());
        w.write_record(&header)?;
        for (y, m) in &self.masses {
            let mut row: Vec<String> = y.as_slice().iter().map(|c| c.to_string()).collect();
            row.push(m.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn exact_kernel(env: &Environment, start: Point, n: usize, absorbing: Option<&TargetSet>) -> Result<KernelTable> {
    exact_kernel_with(env, start, n, absorbing, &KernelOptions::default())
}

/// Exact `n`-step mass function from `start`, killing mass that lands in
/// `absorbing` after each move. The window is the cube of half-width `n`.
pub fn exact_kernel_with(
    env: &Environment,
    start: Point,
    n: usize,
    absorbing: Option<&TargetSet>,
    opts: &KernelOptions,
) -> Result<KernelTable> {
    let window = LatticeBox::around(start, n as i64);
    let sets: Vec<&TargetSet> = absorbing.into_iter().collect();
    let mut prop = Propagator::new(env, window, &sets, opts)?;
    prop.reset(start)?;
    for _ in 0..n {
        prop.step()?;
    }
    let mut masses = prop.support();
    masses.sort_by(|a, b| a.0.as_slice().cmp(b.0.as_slice()));
    Ok(KernelTable {
        start,
        steps: n,
        window,
        masses,
        killed: prop.killed().iter().sum(),
    })
}

/// Outcome of running the walk until it hits one of two disjoint sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingSplit {
    /// `P[tau_first < tau_second]` accumulated exactly.
    pub first: f64,
    pub second: f64,
    /// Mass that has hit neither set when iteration stopped.
    pub remaining: f64,
    pub steps: usize,
}

/// Exact probabilities that the walk started at `start` enters `first` before
/// `second` (both checked from time 1 on), iterating until the surviving mass
/// is below `tol` or `max_steps` is reached. Mass leaving `window` is an error.
pub fn exact_hitting_split(
    env: &Environment,
    start: Point,
    window: LatticeBox,
    first: &TargetSet,
    second: &TargetSet,
    max_steps: usize,
    tol: f64,
    opts: &KernelOptions,
) -> Result<HittingSplit> {
    let mut prop = Propagator::new(env, window, &[first, second], opts)?;
    prop.reset(start)?;
    let mut remaining = 1.0;
    while prop.steps() < max_steps {
        prop.step()?;
        remaining = prop.total_mass();
        if remaining < tol {
            break;
        }
    }
    Ok(HittingSplit {
        first: prop.killed()[0],
        second: prop.killed()[1],
        remaining,
        steps: prop.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn one_step_constant() {
        let env = Environment::constant(2).unwrap();
        let k = exact_kernel(&env, Point::origin(2), 1, None).unwrap();
        assert_eq!(k.entries().len(), 4);
        for (_, m) in k.entries() {
            assert_eq!(*m, 0.25);
        }
        assert_eq!(k.mass(&p(&[1, 0])), 0.25);
        assert_eq!(k.mass(&p(&[1, 1])), 0.0);
    }

    #[test]
    fn two_step_return() {
        let env = Environment::constant(2).unwrap();
        let k = exact_kernel(&env, Point::origin(2), 2, None).unwrap();
        assert!((k.mass(&Point::origin(2)) - 0.25).abs() < 1e-15);
        assert!((k.mass(&p(&[1, 1])) - 0.125).abs() < 1e-15);
        assert!((k.mass(&p(&[2, 0])) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn conservation_and_parity() {
        let env = Environment::iid_uniform(2, 0.5, 3).unwrap();
        let start = p(&[5, -2]);
        let k = exact_kernel(&env, start, 15, None).unwrap();
        assert!((k.total_mass() - 1.0).abs() < 1e-10);
        for (y, m) in k.entries() {
            assert!(*m > 0.0);
            assert_eq!((y.l1_distance(&start) - 15).rem_euclid(2), 0);
            assert!(y.l1_distance(&start) <= 15);
        }
    }

    #[test]
    fn absorption_kills_after_move() {
        let env = Environment::constant(2).unwrap();
        let half = TargetSet::HalfSpaceAtMost { axis: 0, level: 0 };
        let k = exact_kernel(&env, Point::origin(2), 1, Some(&half)).unwrap();
        assert_eq!(k.total_mass(), 0.25);
        assert_eq!(k.absorbed_mass(), 0.75);
        let k2 = exact_kernel(&env, Point::origin(2), 2, Some(&half)).unwrap();
        assert!((k2.total_mass() - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        let env = Environment::constant(2).unwrap();
        let opts = KernelOptions { cell_cap: 100 };
        assert!(matches!(
            exact_kernel_with(&env, Point::origin(2), 10, None, &opts),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn leaving_the_window_is_detected() {
        let env = Environment::constant(2).unwrap();
        let window = LatticeBox::around(Point::origin(2), 3);
        let far = TargetSet::Hyperplane { axis: 0, level: 100 };
        let other = TargetSet::Hyperplane { axis: 0, level: -100 };
        let r = exact_hitting_split(&env, Point::origin(2), window, &far, &other, 10, 0.0, &KernelOptions::default());
        assert!(matches!(r, Err(Error::Resource(_))));
    }

    #[test]
    fn gambler_ruin_split() {
        // first coordinate is a lazy simple walk: P[hit 8 before 0 | start 4] = 1/2
        let env = Environment::constant(2).unwrap();
        let window = LatticeBox::new(p(&[0, -3000]), p(&[8, 3000])).unwrap();
        let top = TargetSet::Hyperplane { axis: 0, level: 8 };
        let bottom = TargetSet::Hyperplane { axis: 0, level: 0 };
        let s = exact_hitting_split(&env, p(&[4, 0]), window, &top, &bottom, 3000, 1e-13, &KernelOptions::default())
            .unwrap();
        assert!(s.remaining < 1e-13);
        assert!((s.first - 0.5).abs() < 1e-12, "{s:?}");
        assert!((s.first + s.second + s.remaining - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let env = Environment::constant(2).unwrap();
        let k = exact_kernel(&env, Point::origin(2), 1, None).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("y1,y2,mass\n-1,0,0.25\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
