//! The quenched random walk: transition kernel, path simulation and hitting
//! times.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{Point, MAX_DIM};
use crate::rng::StreamId;

/// A lattice trajectory `X(0), ..., X(n)`, stored flat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkPath {
    dim: usize,
    coords: Vec<i64>,
}

impl WalkPath {
    pub fn new(start: Point) -> Self {
        Self {
            dim: start.dim(),
            coords: start.as_slice().to_vec(),
        }
    }

    pub fn with_capacity(start: Point, steps: usize) -> Self {
        let mut coords = Vec::with_capacity((steps + 1) * start.dim());
        coords.extend_from_slice(start.as_slice());
        Self { dim: start.dim(), coords }
    }

    /// Build from explicit positions, checking that consecutive points are
    /// nearest neighbours.
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let (first, rest) = points
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty path".into()))?;
        let mut path = Self::with_capacity(*first, rest.len());
        for p in rest {
            if path.last().neighbour_axis(p).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "{} -> {p} is not a nearest-neighbour step",
                    path.last()
                )));
            }
            path.push(*p);
        }
        Ok(path)
    }

    #[inline]
    pub(crate) fn push(&mut self, p: Point) {
        self.coords.extend_from_slice(p.as_slice());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.coords.len() / self.dim - 1
    }

    pub fn start(&self) -> Point {
        self.point(0)
    }

    pub fn last(&self) -> Point {
        self.point(self.steps())
    }

    #[inline]
    pub fn point(&self, k: usize) -> Point {
        Point::new(&self.coords[k * self.dim..(k + 1) * self.dim]).expect("stored dimension is valid")
    }

    #[inline]
    pub fn coord(&self, k: usize, axis: usize) -> i64 {
        self.coords[k * self.dim + axis]
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..=self.steps()).map(move |k| self.point(k))
    }

    /// Whether `X_1(k) > 0` for all `k = 1..=n`.
    pub fn stays_positive(&self) -> bool {
        (1..=self.steps()).all(|k| self.coord(k, 0) > 0)
    }

    /// CSV with header `time,x1,...,xd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = crate::report::csv_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for k in 0..=self.steps() {
            let mut row = vec![k.to_string()];
            row.extend((0..self.dim).map(|i| self.coord(k, i).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lattice sets whose hitting times are needed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSet {
    /// `{x : x_axis = level}`.
    Hyperplane { axis: usize, level: i64 },
    /// `{x : x_axis <= level}`; nearest-neighbour walks enter it through
    /// `{x_axis = level}` when started above.
    HalfSpaceAtMost { axis: usize, level: i64 },
    Union(Vec<TargetSet>),
    /// `{x : ||x - center||_1 > radius}`.
    BallComplement { center: Point, radius: i64 },
    Points(Vec<Point>),
}

impl TargetSet {
    /// The hyperplane at real height `l` on `axis`, rounded toward zero.
    pub fn hyperplane_at(axis: usize, l: f64) -> Self {
        TargetSet::Hyperplane {
            axis,
            level: l.trunc() as i64,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            TargetSet::Hyperplane { axis, level } => x.get(*axis) == *level,
            TargetSet::HalfSpaceAtMost { axis, level } => x.get(*axis) <= *level,
            TargetSet::Union(parts) => parts.iter().any(|t| t.contains(x)),
            TargetSet::BallComplement { center, radius } => x.l1_distance(center) > *radius,
            TargetSet::Points(pts) => pts.contains(x),
        }
    }

    /// A membership test that is cheap for large explicit point lists.
    pub fn compile(&self) -> CompiledTarget<'_> {
        let points = match self {
            TargetSet::Points(pts) if pts.len() > 16 => Some(pts.iter().copied().collect()),
            _ => None,
        };
        CompiledTarget { set: self, points }
    }
}

pub struct CompiledTarget<'a> {
    set: &'a TargetSet,
    points: Option<HashSet<Point>>,
}

impl CompiledTarget<'_> {
    #[inline]
    pub fn contains(&self, x: &Point) -> bool {
        match &self.points {
            Some(set) => set.contains(x),
            None => self.set.contains(x),
        }
    }
}

/// The `2d` neighbours of `x` with their transition probabilities
/// `omega_{x,y} / pi_x`, ordered `+e_1, -e_1, +e_2, ...`.
pub fn step_distribution(env: &Environment, x: Point) -> Vec<(Point, f64)> {
    let d = env.dimension();
    let mut out = Vec::with_capacity(2 * d);
    for axis in 0..d {
        for sign in [1, -1] {
            out.push((x.step(axis, sign), env.omega(x, axis, sign)));
        }
    }
    let pi: f64 = out.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut out {
        *w /= pi;
    }
    out
}

/// Incremental sampler of the quenched walk.
pub struct Walker<'a> {
    env: &'a Environment,
    pos: Point,
    homogeneous: bool,
}

impl<'a> Walker<'a> {
    pub fn new(env: &'a Environment, start: Point) -> Self {
        assert_eq!(start.dim(), env.dimension(), "dimension mismatch");
        Self {
            env,
            pos: start,
            homogeneous: env.is_homogeneous(),
        }
    }

    #[inline]
    pub fn position(&self) -> Point {
        self.pos
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Point {
        let d = self.env.dimension();
        let dir = if self.homogeneous {
            rng.random_range(0..2 * d)
        } else {
            let mut w = [0f64; 2 * MAX_DIM];
            let mut total = 0.0;
            for axis in 0..d {
                w[2 * axis] = self.env.omega(self.pos, axis, 1);
                w[2 * axis + 1] = self.env.omega(self.pos, axis, -1);
                total += w[2 * axis] + w[2 * axis + 1];
            }
            let mut u = rng.random::<f64>() * total;
            let mut dir = 2 * d - 1;
            for (i, wi) in w[..2 * d].iter().enumerate() {
                if u < *wi {
                    dir = i;
                    break;
                }
                u -= wi;
            }
            dir
        };
        let sign = if dir % 2 == 0 { 1 } else { -1 };
        self.pos = self.pos.step(dir / 2, sign);
        self.pos
    }
}

/// Sample `n` steps of the quenched walk started at `start`.
pub fn simulate<R: Rng + ?Sized>(env: &Environment, start: Point, n: usize, rng: &mut R) -> WalkPath {
    let mut path = WalkPath::with_capacity(start, n);
    let mut walker = Walker::new(env, start);
    for _ in 0..n {
        path.push(walker.step(rng));
    }
    path
}

/// [`simulate`] driven by a named counter-based stream.
pub fn simulate_stream(env: &Environment, start: Point, n: usize, stream: StreamId) -> WalkPath {
    simulate(env, start, n, &mut stream.rng())
}

/// First `k` (`k >= 1` when `strict_positive_start`) with `X(k)` in `target`.
pub fn hitting_time(path: &WalkPath, target: &TargetSet, strict_positive_start: bool) -> Option<usize> {
    let target = target.compile();
    let from = usize::from(strict_positive_start);
    (from..=path.steps()).find(|&k| target.contains(&path.point(k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Generator;
    use crate::rng::Domain;

    fn p(c: &[i64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn constant_step_distribution_is_uniform() {
        let env = Environment::constant(2).unwrap();
        let dist = step_distribution(&env, Point::origin(2));
        assert_eq!(dist.len(), 4);
        for (_, pr) in &dist {
            assert_eq!(*pr, 0.25);
        }
    }

    #[test]
    fn detailed_balance_and_normalisation() {
        let env = Environment::iid_uniform(3, 0.5, 11).unwrap();
        for x in [p(&[0, 0, 0]), p(&[4, -3, 9]), p(&[-100, 7, 2])] {
            let dist = step_distribution(&env, x);
            assert_eq!(dist.len(), 6);
            let s: f64 = dist.iter().map(|(_, q)| q).sum();
            assert!((s - 1.0).abs() < 1e-12);
            for (y, pxy) in &dist {
                let back = step_distribution(&env, *y);
                let pyx = back.iter().find(|(z, _)| z == &x).unwrap().1;
                let lhs = env.pi(x) * pxy;
                let rhs = env.pi(*y) * pyx;
                assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0));
            }
        }
    }

    #[test]
    fn zero_step_walk() {
        let env = Environment::constant(2).unwrap();
        let path = simulate_stream(&env, p(&[2, 3]), 0, StreamId::new(1, Domain::Walk, 0));
        assert_eq!(path.steps(), 0);
        assert_eq!(path.start(), p(&[2, 3]));
    }

    #[test]
    fn simulated_paths_are_nearest_neighbour_and_reproducible() {
        let env = Environment::new(2, 0.5, Generator::IidTwoPoint { p: 0.5, lo: 0.6, hi: 1.5 }, 5).unwrap();
        let s = StreamId::new(3, Domain::Walk, 17);
        let a = simulate_stream(&env, Point::origin(2), 500, s);
        let b = simulate_stream(&env, Point::origin(2), 500, s);
        assert_eq!(a, b);
        let pts: Vec<Point> = a.points().collect();
        assert!(WalkPath::from_points(&pts).is_ok());
        assert_ne!(a, simulate_stream(&env, Point::origin(2), 500, s.with_index(18)));
    }

    #[test]
    fn hitting_times() {
        let path = WalkPath::from_points(&[p(&[0, 0]), p(&[1, 0]), p(&[0, 0]), p(&[0, 1])]).unwrap();
        let origin = TargetSet::Points(vec![p(&[0, 0])]);
        assert_eq!(hitting_time(&path, &origin, false), Some(0));
        assert_eq!(hitting_time(&path, &origin, true), Some(2));
        let far = TargetSet::Hyperplane { axis: 0, level: 5 };
        assert_eq!(hitting_time(&path, &far, false), None);
        let ball = TargetSet::BallComplement { center: Point::origin(2), radius: 0 };
        assert_eq!(hitting_time(&path, &ball, false), Some(1));
        let u = TargetSet::Union(vec![far, TargetSet::Hyperplane { axis: 1, level: 1 }]);
        assert_eq!(hitting_time(&path, &u, false), Some(3));
    }

    #[test]
    fn rejects_broken_paths() {
        assert!(WalkPath::from_points(&[p(&[0, 0]), p(&[1, 1])]).is_err());
        assert!(WalkPath::from_points(&[]).is_err());
    }

    #[test]
    fn csv_export() {
        let path = WalkPath::from_points(&[p(&[0, 0]), p(&[1, 0])]).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,x1,x2\n0,0,0\n1,1,0\n");
    }
}
