//! Quenched conductance fields.
//!
//! Conductances are never stored. The conductance of an edge is a pure
//! function of `(seed, generator, edge)`: the canonical edge (lower endpoint
//! `a`, axis `i` with `b = a + e_i`) is encoded by zig-zag packing each
//! coordinate of `a`, the words are absorbed into a splitmix64 chain keyed by
//! the seed and the axis, and the top 53 bits of the result are mapped to a
//! uniform variate in (0, 1). Only integer arithmetic happens before the final
//! mantissa conversion, so regenerated fields are bit-identical across
//! platforms. That mapping is what manifest format `condwalk-env-1` denotes.

use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EdgeId, Point, MAX_DIM};
use crate::rng::{mix64, unit_open, GOLDEN_GAMMA};

pub const FORMAT_VERSION: &str = "condwalk-env-1";
pub const DEFAULT_KAPPA: f64 = 0.5;

/// Law of the conductance field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Every edge carries `value`.
    Constant { value: f64 },
    /// Independent Uniform(kappa, 1/kappa) conductances.
    IidUniform {},
    /// Independent conductances equal to `hi` with probability `p`, else `lo`.
    IidTwoPoint { p: f64, lo: f64, hi: f64 },
    /// Deterministic pattern: the edge from `a` along axis `i` gets
    /// `pattern[(a_1 + ... + a_d + i + phase) mod len]`, with the phase drawn
    /// from the seed.
    Periodic { pattern: Vec<f64> },
}

impl Generator {
    /// Mean and variance of a single conductance, when the law is random.
    pub fn iid_moments(&self, kappa: f64) -> Option<(f64, f64)> {
        match *self {
            Generator::IidUniform {} => {
                let (a, b) = (kappa, 1.0 / kappa);
                Some(((a + b) / 2.0, (b - a).powi(2) / 12.0))
            }
            Generator::IidTwoPoint { p, lo, hi } => {
                Some((p * hi + (1.0 - p) * lo, p * (1.0 - p) * (hi - lo).powi(2)))
            }
            _ => None,
        }
    }

    fn validate(&self, kappa: f64) -> Result<()> {
        let inside = |w: f64| w > kappa && w < 1.0 / kappa;
        let bad = |what: String| Err(Error::InvalidParameter(what));
        match self {
            Generator::Constant { value } if !inside(*value) => bad(format!(
                "constant conductance {value} outside ({kappa}, {})",
                1.0 / kappa
            )),
            Generator::IidTwoPoint { p, lo, hi } => {
                if !(0.0..=1.0).contains(p) {
                    bad(format!("two-point probability {p} outside [0, 1]"))
                } else if !(inside(*lo) && inside(*hi)) || lo > hi {
                    bad(format!("two-point values ({lo}, {hi}) must satisfy kappa < lo <= hi < 1/kappa"))
                } else {
                    Ok(())
                }
            }
            Generator::Periodic { pattern } => {
                if pattern.is_empty() {
                    bad("periodic pattern is empty".into())
                } else if let Some(w) = pattern.iter().find(|w| !inside(**w)) {
                    bad(format!("periodic value {w} outside ({kappa}, {})", 1.0 / kappa))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// A fixed realisation of the random environment, possibly viewed from a
/// shifted origin. Cheap to clone.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    dimension: usize,
    kappa: f64,
    generator: Arc<Generator>,
    seed: u64,
    offset: Point,
    key: u64,
    phase: u64,
}

impl Environment {
    pub fn new(dimension: usize, kappa: f64, generator: Generator, seed: u64) -> Result<Self> {
        validate_dimension(dimension).map_err(Error::InvalidParameter)?;
        validate_kappa(kappa).map_err(Error::InvalidParameter)?;
        generator.validate(kappa)?;
        let key = mix64(seed ^ GOLDEN_GAMMA);
        let phase = match &generator {
            Generator::Periodic { pattern } => mix64(key) % pattern.len() as u64,
            _ => 0,
        };
        Ok(Self {
            dimension,
            kappa,
            generator: Arc::new(generator),
            seed,
            offset: Point::origin(dimension),
            key,
            phase,
        })
    }

    /// Homogeneous environment with unit conductances.
    pub fn constant(dimension: usize) -> Result<Self> {
        Self::new(dimension, DEFAULT_KAPPA, Generator::Constant { value: 1.0 }, 0)
    }

    pub fn iid_uniform(dimension: usize, kappa: f64, seed: u64) -> Result<Self> {
        Self::new(dimension, kappa, Generator::IidUniform {}, seed)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offset(&self) -> Point {
        self.offset
    }

    pub fn is_homogeneous(&self) -> bool {
        match &*self.generator {
            Generator::Constant { .. } => true,
            Generator::Periodic { pattern } => pattern.iter().all(|w| *w == pattern[0]),
            _ => false,
        }
    }

    /// Conductance of an edge.
    pub fn conductance(&self, edge: &EdgeId) -> f64 {
        self.omega_positive(edge.endpoint_a(), edge.axis())
    }

    /// Conductance between two points; fails unless they are nearest neighbours.
    pub fn conductance_between(&self, x: Point, y: Point) -> Result<f64> {
        Ok(self.conductance(&EdgeId::new(x, y)?))
    }

    /// Conductance of the edge `{base, base + e_axis}` in this (shifted) view.
    #[inline]
    pub fn omega_positive(&self, base: Point, axis: usize) -> f64 {
        debug_assert_eq!(base.dim(), self.dimension);
        let mut a = base;
        for i in 0..self.dimension {
            a.set(i, a.get(i) + self.offset.get(i));
        }
        match &*self.generator {
            Generator::Constant { value } => *value,
            Generator::IidUniform {} => {
                let u = unit_open(self.edge_hash(&a, axis));
                let (lo, hi) = (self.kappa, 1.0 / self.kappa);
                let w = lo + (hi - lo) * u;
                // rounding can land on the endpoints for extreme u
                w.clamp(lo.next_up(), hi.next_down())
            }
            Generator::IidTwoPoint { p, lo, hi } => {
                if unit_open(self.edge_hash(&a, axis)) < *p {
                    *hi
                } else {
                    *lo
                }
            }
            Generator::Periodic { pattern } => {
                let len = pattern.len() as i64;
                let s: i64 = a.as_slice().iter().sum::<i64>() + axis as i64 + self.phase as i64;
                pattern[s.rem_euclid(len) as usize]
            }
        }
    }

    /// Conductance of the edge `{x, x + sign * e_axis}`.
    #[inline]
    pub fn omega(&self, x: Point, axis: usize, sign: i64) -> f64 {
        if sign > 0 {
            self.omega_positive(x, axis)
        } else {
            self.omega_positive(x.step(axis, -1), axis)
        }
    }

    #[inline]
    fn edge_hash(&self, a: &Point, axis: usize) -> u64 {
        let mut h = mix64(self.key ^ (axis as u64 + 1).wrapping_mul(GOLDEN_GAMMA));
        for &c in a.as_slice() {
            h = mix64(h ^ zigzag(c)).wrapping_add(GOLDEN_GAMMA);
        }
        mix64(h)
    }

    /// The reversible measure: sum of conductances of the `2d` incident edges.
    pub fn pi(&self, x: Point) -> f64 {
        (0..self.dimension)
            .map(|axis| self.omega(x, axis, 1) + self.omega(x, axis, -1))
            .sum()
    }

    /// The environment seen from `x`: conductances of `shift(x)` on `(a, b)`
    /// equal those of `self` on `(a + x, b + x)`.
    pub fn shift(&self, x: Point) -> Self {
        assert_eq!(x.dim(), self.dimension, "dimension mismatch");
        let mut env = self.clone();
        env.offset = self.offset + x;
        env
    }

    pub fn manifest(&self) -> EnvironmentManifest {
        let offset = (self.offset != Point::origin(self.dimension)).then(|| self.offset.as_slice().to_vec());
        EnvironmentManifest {
            format_version: FORMAT_VERSION.to_string(),
            dimension: self.dimension,
            kappa: self.kappa,
            seed: self.seed,
            offset,
            generator: (*self.generator).clone(),
        }
    }

    pub fn from_manifest(m: &EnvironmentManifest) -> Result<Self> {
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "format_version {:?} is not supported (expected {FORMAT_VERSION:?})",
                m.format_version
            )));
        }
        let env = Self::new(m.dimension, m.kappa, m.generator.clone(), m.seed)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        match &m.offset {
            None => Ok(env),
            Some(off) if off.len() == m.dimension => Ok(env.shift(Point::new(off)?)),
            Some(off) => Err(Error::Manifest(format!(
                "offset has {} coordinates, dimension is {}",
                off.len(),
                m.dimension
            ))),
        }
    }
}

#[inline]
fn zigzag(c: i64) -> u64 {
    ((c << 1) ^ (c >> 63)) as u64
}

fn validate_dimension(d: usize) -> std::result::Result<(), String> {
    if d < 2 {
        Err(format!("dimension {d} < 2: the half-space conditioning needs d >= 2"))
    } else if d > MAX_DIM {
        Err(format!("dimension {d} exceeds the supported maximum {MAX_DIM}"))
    } else {
        Ok(())
    }
}

fn validate_kappa(k: f64) -> std::result::Result<(), String> {
    if k > 0.0 && k < 1.0 {
        Ok(())
    } else {
        Err(format!("kappa = {k} must lie in (0, 1)"))
    }
}

/// Serialized description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentManifest {
    pub format_version: String,
    #[serde(deserialize_with = "de_dimension")]
    pub dimension: usize,
    #[serde(deserialize_with = "de_kappa")]
    pub kappa: f64,
    #[serde(with = "decimal_u64")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<i64>>,
    pub generator: Generator,
}

impl EnvironmentManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Parse a key/value manifest. Errors carry the offending line.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Manifest(e.to_string()))
    }
}

fn de_dimension<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    let v = usize::deserialize(d)?;
    validate_dimension(v).map_err(serde::de::Error::custom)?;
    Ok(v)
}

fn de_kappa<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    validate_kappa(v).map_err(serde::de::Error::custom)?;
    Ok(v)
}

/// Seeds are written as decimal strings: TOML integers are signed 64-bit.
pub mod decimal_u64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(i) if i >= 0 => Ok(i as u64),
            Repr::Int(i) => Err(de::Error::custom(format!("seed {i} is negative"))),
            Repr::Str(s) => s
                .trim()
                .parse()
                .map_err(|_| de::Error::custom(format!("seed {s:?} is not a decimal u64"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn constant_conductance_and_pi() {
        let env = Environment::constant(2).unwrap();
        let e = EdgeId::new(p(&[0, 0]), p(&[1, 0])).unwrap();
        assert_eq!(env.conductance(&e), 1.0);
        assert_eq!(env.pi(Point::origin(2)), 4.0);
        let env3 = Environment::new(3, 0.5, Generator::Constant { value: 1.5 }, 1).unwrap();
        assert_eq!(env3.pi(p(&[5, -2, 7])), 9.0);
    }

    #[test]
    fn iid_values_repeat_and_respect_ellipticity() {
        let env = Environment::iid_uniform(2, 0.5, 42).unwrap();
        let e = EdgeId::new(p(&[3, 4]), p(&[3, 5])).unwrap();
        let w = env.conductance(&e);
        assert_eq!(w, env.conductance(&e));
        assert_eq!(w, env.conductance_between(p(&[3, 5]), p(&[3, 4])).unwrap());
        assert!(w > 0.5 && w < 2.0);
        let pi = env.pi(p(&[3, 4]));
        assert!(pi > 2.0 && pi < 8.0);
    }

    #[test]
    fn different_seeds_differ() {
        let a = Environment::iid_uniform(2, 0.5, 1).unwrap();
        let b = Environment::iid_uniform(2, 0.5, 2).unwrap();
        let diffs = (0..100)
            .filter(|&i| a.omega_positive(p(&[i, 0]), 0) != b.omega_positive(p(&[i, 0]), 0))
            .count();
        assert!(diffs > 95);
    }

    #[test]
    fn invalid_edge_is_rejected() {
        let env = Environment::constant(2).unwrap();
        assert!(matches!(
            env.conductance_between(p(&[0, 0]), p(&[1, 1])),
            Err(Error::InvalidEdge(_))
        ));
    }

    #[test]
    fn construction_validates() {
        assert!(Environment::new(1, 0.5, Generator::IidUniform {}, 0).is_err());
        assert!(Environment::new(2, 1.0, Generator::IidUniform {}, 0).is_err());
        assert!(Environment::new(2, 0.0, Generator::IidUniform {}, 0).is_err());
        assert!(Environment::new(2, 0.5, Generator::Constant { value: 2.0 }, 0).is_err());
        assert!(Environment::new(2, 0.5, Generator::Periodic { pattern: vec![] }, 0).is_err());
        let tp = Generator::IidTwoPoint { p: 0.3, lo: 0.6, hi: 1.8 };
        assert!(Environment::new(2, 0.5, tp, 0).is_ok());
    }

    #[test]
    fn shift_composes() {
        let env = Environment::iid_uniform(2, 0.5, 9).unwrap();
        let x = p(&[3, -1]);
        let y = p(&[-7, 2]);
        let e = EdgeId::new(p(&[1, 1]), p(&[1, 2])).unwrap();
        assert_eq!(env.shift(Point::origin(2)).conductance(&e), env.conductance(&e));
        assert_eq!(env.shift(x).shift(y).conductance(&e), env.shift(x + y).conductance(&e));
        assert_eq!(env.shift(x).conductance(&e), env.conductance(&e.translated(x)));
    }

    #[test]
    fn periodic_pattern() {
        let env = Environment::new(2, 0.5, Generator::Periodic { pattern: vec![0.8, 1.2] }, 3).unwrap();
        let w0 = env.omega_positive(p(&[0, 0]), 0);
        let w1 = env.omega_positive(p(&[1, 0]), 0);
        assert_ne!(w0, w1);
        assert_eq!(w0, env.omega_positive(p(&[2, 0]), 0));
        assert_eq!(env.shift(p(&[2, 2])).omega_positive(p(&[0, 0]), 0), w0);
    }

    #[test]
    fn manifest_round_trip_text() {
        let env = Environment::new(3, 0.4, Generator::IidTwoPoint { p: 0.25, lo: 0.5, hi: 2.0 }, u64::MAX - 5)
            .unwrap()
            .shift(p(&[1, 2, 3]));
        let text = env.manifest().to_toml();
        let back = Environment::from_manifest(&EnvironmentManifest::from_toml_str(&text).unwrap()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn manifest_rejections() {
        let good = Environment::iid_uniform(2, 0.5, 7).unwrap().manifest().to_toml();
        let err = EnvironmentManifest::from_toml_str(&good.replace("kappa = 0.5", "kappa = 1.5")).unwrap_err();
        assert!(err.to_string().contains("kappa"), "{err}");
        assert!(err.to_string().contains("line"), "{err}");
        assert!(EnvironmentManifest::from_toml_str(&good.replace("dimension = 2", "dimension = 1")).is_err());
        let bad_version = good.replace(FORMAT_VERSION, "condwalk-env-0");
        let m = EnvironmentManifest::from_toml_str(&bad_version).unwrap();
        assert!(Environment::from_manifest(&m).is_err());
        assert!(EnvironmentManifest::from_toml_str("dimension = 2").is_err());
        assert!(EnvironmentManifest::from_toml_str(&format!("{good}\nbogus = 1\n")).is_err());
    }
}
