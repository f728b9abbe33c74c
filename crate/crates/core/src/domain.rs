//! Coordinate boxes and seeded sampling inside them.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Closed interval `[lo, hi]`; either end may be infinite. Serialised as a
/// two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Interval {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> [f64; 2] {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    /// Uniform sample; unbounded ends are clipped to `[-1, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lo = if self.lo.is_finite() { self.lo } else { -1.0f64.min(self.hi - 2.0) };
        let hi = if self.hi.is_finite() { self.hi } else { 1.0f64.max(lo + 2.0) };
        rng.random_range(lo..=hi)
    }
}

/// Product box over the temporal and spatial coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub t: Vec<Interval>,
    pub x: Vec<Interval>,
}

impl DomainBox {
    pub fn unbounded(p: usize, n: usize) -> DomainBox {
        DomainBox {
            t: vec![Interval::UNBOUNDED; p],
            x: vec![Interval::UNBOUNDED; n],
        }
    }

    pub fn cube(p: usize, n: usize, lo: f64, hi: f64) -> DomainBox {
        DomainBox {
            t: vec![Interval::new(lo, hi); p],
            x: vec![Interval::new(lo, hi); n],
        }
    }

    pub fn contains(&self, t: &[f64], x: &[f64]) -> bool {
        t.len() == self.t.len()
            && x.len() == self.x.len()
            && self.t.iter().zip(t).all(|(i, v)| i.contains(*v))
            && self.x.iter().zip(x).all(|(i, v)| i.contains(*v))
    }

    pub fn intersect(&self, other: &DomainBox) -> DomainBox {
        DomainBox {
            t: self.t.iter().zip(&other.t).map(|(a, b)| a.intersect(b)).collect(),
            x: self.x.iter().zip(&other.x).map(|(a, b)| a.intersect(b)).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let t = self.t.iter().map(|i| i.sample(rng)).collect();
        let x = self.x.iter().map(|i| i.sample(rng)).collect();
        (t, x)
    }
}
