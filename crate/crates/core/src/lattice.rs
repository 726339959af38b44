//! Points and nearest-neighbour edges of the integer lattice.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension. Points are stored inline so that the
/// hot simulation loops never allocate.
pub const MAX_DIM: usize = 8;

/// A point of `Z^d` with `2 <= d <= MAX_DIM` (dimension one is accepted for
/// building blocks such as coordinate projections, but environments refuse it).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point {
    coords: [i64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[i64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidParameter(format!(
                "point dimension {} outside 1..={MAX_DIM}",
                coords.len()
            )));
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    /// Panics if `dim` is zero or exceeds [`MAX_DIM`].
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self {
            coords: [0; MAX_DIM],
            dim: dim as u8,
        }
    }

    /// The unit vector `sign * e_axis`.
    pub fn unit(dim: usize, axis: usize, sign: i64) -> Self {
        let mut p = Self::origin(dim);
        p.coords[axis] = sign;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn as_slice(&self) -> &[i64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> i64 {
        debug_assert!(axis < self.dim());
        self.coords[axis]
    }

    #[inline]
    pub fn set(&mut self, axis: usize, value: i64) {
        debug_assert!(axis < self.dim());
        self.coords[axis] = value;
    }

    /// The neighbour `self + sign * e_axis`.
    #[inline]
    pub fn step(&self, axis: usize, sign: i64) -> Self {
        let mut p = *self;
        p.coords[axis] += sign;
        p
    }

    pub fn l1_norm(&self) -> i64 {
        self.as_slice().iter().map(|c| c.abs()).sum()
    }

    pub fn linf_norm(&self) -> i64 {
        self.as_slice().iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l1_distance(&self, other: &Self) -> i64 {
        (*self - *other).l1_norm()
    }

    /// If `other` is a nearest neighbour, the axis along which they differ and
    /// the sign of `other - self` on that axis.
    pub fn neighbour_axis(&self, other: &Self) -> Option<(usize, i64)> {
        if self.dim != other.dim {
            return None;
        }
        let mut found = None;
        for axis in 0..self.dim() {
            let diff = other.coords[axis] - self.coords[axis];
            match diff {
                0 => {}
                1 | -1 if found.is_none() => found = Some((axis, diff)),
                _ => return None,
            }
        }
        found
    }
}

impl Add for Point {
    type Output = Point;
    fn add(mut self, rhs: Point) -> Point {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for i in 0..self.dim() {
            self.coords[i] += rhs.coords[i];
        }
        self
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(mut self, rhs: Point) -> Point {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for i in 0..self.dim() {
            self.coords[i] -= rhs.coords[i];
        }
        self
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(mut self) -> Point {
        for i in 0..self.dim() {
            self.coords[i] = -self.coords[i];
        }
        self
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.as_slice().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

/// An unordered nearest-neighbour pair, stored with the lexicographically
/// smaller endpoint first.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct EdgeId {
    a: Point,
    b: Point,
}

impl EdgeId {
    pub fn new(x: Point, y: Point) -> Result<Self> {
        if x.neighbour_axis(&y).is_none() {
            return Err(Error::InvalidEdge(format!("{x} and {y} are not nearest neighbours")));
        }
        let (a, b) = if x.as_slice() <= y.as_slice() { (x, y) } else { (y, x) };
        Ok(Self { a, b })
    }

    /// The edge from `base` to `base + e_axis`; always valid.
    #[inline]
    pub fn positive(base: Point, axis: usize) -> Self {
        Self {
            a: base,
            b: base.step(axis, 1),
        }
    }

    #[inline]
    pub fn endpoint_a(&self) -> Point {
        self.a
    }

    #[inline]
    pub fn endpoint_b(&self) -> Point {
        self.b
    }

    /// Axis along which the endpoints differ.
    #[inline]
    pub fn axis(&self) -> usize {
        self.a.neighbour_axis(&self.b).map(|(axis, _)| axis).unwrap_or(0)
    }

    pub fn translated(&self, by: Point) -> Self {
        Self {
            a: self.a + by,
            b: self.b + by,
        }
    }
}
