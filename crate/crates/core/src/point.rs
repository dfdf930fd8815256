//! Small fixed-capacity point type for states in R^d, d <= 3.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

pub const MAX_DIM: usize = 3;

/// A point of R^d with d <= 3. Copyable; coordinates beyond `dim` are zero.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    dim: u8,
    xs: [f64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        assert!(
            !coords.is_empty() && coords.len() <= MAX_DIM,
            "point dimension must be 1..=3, got {}",
            coords.len()
        );
        let mut xs = [0.0; MAX_DIM];
        xs[..coords.len()].copy_from_slice(coords);
        Point {
            dim: coords.len() as u8,
            xs,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Point::new(&[x])
    }

    pub fn zeros(dim: usize) -> Self {
        Point::new(&vec![0.0; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.xs[..self.dim as usize]
    }

    /// First coordinate; the natural accessor for 1-D states.
    #[inline]
    pub fn x(&self) -> f64 {
        self.xs[0]
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.coords().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn dot(&self, other: &Point) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Point {
        let mut out = *self;
        for i in 0..self.dim() {
            out.xs[i] = f(self.xs[i]);
        }
        out
    }

    pub fn set(&mut self, i: usize, v: f64) {
        assert!(i < self.dim());
        self.xs[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords()[i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        for i in 0..self.dim() {
            out.xs[i] += rhs.xs[i];
        }
        out
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        for i in 0..self.dim() {
            out.xs[i] -= rhs.xs[i];
        }
        out
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        self.map(|c| c * s)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Point{:?}", self.coords())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_norms() {
        let a = Point::new(&[3.0, 4.0]);
        let b = Point::new(&[0.0, 0.0]);
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.dist(&b), 5.0);
        assert_eq!((a - b).coords(), &[3.0, 4.0]);
        assert_eq!((a * 2.0).coords(), &[6.0, 8.0]);
        assert_eq!(Point::scalar(2.5).x(), 2.5);
    }
}
