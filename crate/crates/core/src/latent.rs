//! Fixed-dimension real vectors used for every state, noise draw and
//! velocity in the crate.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Default)]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(values: Vec<f64>) -> Self {
        Latent(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Latent(vec![0.0; dim])
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Latent(values.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            })
        }
    }

    pub fn dot(&self, other: &Latent) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Latent) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, s: f64) -> Latent {
        Latent(self.0.iter().map(|v| v * s).collect())
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Latent) -> Latent {
        debug_assert_eq!(self.dim(), other.dim());
        Latent(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    pub fn max_abs_diff(&self, other: &Latent) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Arithmetic mean of a nonempty set of equal-dimension latents,
    /// accumulated in index order.
    pub fn mean<'a, I>(items: I) -> Option<Latent>
    where
        I: IntoIterator<Item = &'a Latent>,
    {
        let mut iter = items.into_iter();
        let mut acc = iter.next()?.clone();
        let mut n = 1usize;
        for item in iter {
            acc += item;
            n += 1;
        }
        Some(acc.scale(1.0 / n as f64))
    }
}

impl fmt::Debug for Latent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Latent").field(&self.0).finish()
    }
}

impl From<Vec<f64>> for Latent {
    fn from(v: Vec<f64>) -> Self {
        Latent(v)
    }
}

impl<const N: usize> From<[f64; N]> for Latent {
    fn from(v: [f64; N]) -> Self {
        Latent(v.to_vec())
    }
}

impl Index<usize> for Latent {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Latent {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add<&Latent> for &Latent {
    type Output = Latent;
    fn add(self, rhs: &Latent) -> Latent {
        debug_assert_eq!(self.dim(), rhs.dim());
        Latent(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub<&Latent> for &Latent {
    type Output = Latent;
    fn sub(self, rhs: &Latent) -> Latent {
        debug_assert_eq!(self.dim(), rhs.dim());
        Latent(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Add for Latent {
    type Output = Latent;
    fn add(self, rhs: Latent) -> Latent {
        &self + &rhs
    }
}

impl Sub for Latent {
    type Output = Latent;
    fn sub(self, rhs: Latent) -> Latent {
        &self - &rhs
    }
}

impl Mul<f64> for &Latent {
    type Output = Latent;
    fn mul(self, s: f64) -> Latent {
        self.scale(s)
    }
}

impl Mul<f64> for Latent {
    type Output = Latent;
    fn mul(self, s: f64) -> Latent {
        self.scale(s)
    }
}

impl Neg for &Latent {
    type Output = Latent;
    fn neg(self) -> Latent {
        self.scale(-1.0)
    }
}

impl AddAssign<&Latent> for Latent {
    fn add_assign(&mut self, rhs: &Latent) {
        debug_assert_eq!(self.dim(), rhs.dim());
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a += b;
        }
    }
}

impl SubAssign<&Latent> for Latent {
    fn sub_assign(&mut self, rhs: &Latent) {
        debug_assert_eq!(self.dim(), rhs.dim());
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a -= b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = Latent::from([1.0, 2.0]);
        let b = Latent::from([3.0, -1.0]);
        assert_eq!(&a + &b, Latent::from([4.0, 1.0]));
        assert_eq!(&a - &b, Latent::from([-2.0, 3.0]));
        assert_eq!(a.axpy(2.0, &b), Latent::from([7.0, 0.0]));
        assert_eq!(a.dot(&b), 1.0);
        assert_eq!(Latent::from([3.0, 4.0]).norm(), 5.0);
    }

    #[test]
    fn mean_of_items() {
        let items = [Latent::from([0.0, 2.0]), Latent::from([2.0, 4.0])];
        assert_eq!(Latent::mean(&items).unwrap(), Latent::from([1.0, 3.0]));
        assert!(Latent::mean(std::iter::empty()).is_none());
    }

    #[test]
    fn dim_check() {
        assert!(Latent::zeros(3).check_dim(3).is_ok());
        assert!(matches!(
            Latent::zeros(3).check_dim(2),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }
}
