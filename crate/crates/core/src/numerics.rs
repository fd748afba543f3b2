//! Dense parameter vectors and the reductions the optimizers are built on.
//!
//! Every public constructor and operation checks that its output is finite;
//! a NaN or infinity is reported as [`Error::NonFinite`] instead of being
//! carried forward. Reductions run in ascending index order with no pairwise
//! or parallel splitting so that results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use crate::math;
use crate::{Error, Result};

/// Flat `f64` vector holding model coordinates, gradients and moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        check_finite(&values, "parameter vector")?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vectors have positive dimension");
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("parameter vector"));
        }
        Self::new(vec![value; dim])
    }

    /// Wraps values already known to be finite and non-empty.
    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    fn checked(values: Vec<f64>, what: &'static str) -> Result<Self> {
        check_finite(&values, what)?;
        Ok(Self { values })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.values.iter()
    }

    fn same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: self.dim(),
                found: other.dim(),
            })
        }
    }

    fn zip_with(&self, other: &Self, what: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_dim(other)?;
        let out = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::checked(out, what)
    }

    fn map(&self, what: &'static str, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::checked(self.values.iter().map(|&a| f(a)).collect(), what)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map("scale", |a| a * c)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.zip_with(other, "axpy", |a, b| a + c * b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// Elementwise square root; negative entries are a domain error.
    pub fn sqrt(&self) -> Result<Self> {
        if self.values.iter().any(|&a| a < 0.0) {
            return Err(Error::NonFinite("sqrt of negative entry"));
        }
        self.map("sqrt", math::sqrt)
    }

    /// `self / (denom + eps)` elementwise, with `eps` added after any square
    /// root the caller took.
    pub fn div_eps(&self, denom: &Self, eps: f64) -> Result<Self> {
        self.zip_with(denom, "div_eps", |a, b| a / (b + eps))
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.same_dim(other)?;
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(Error::NonFinite("dot"))
        }
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_dim(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, math::abs(a - b))))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Euclidean norm with ascending-index accumulation.
///
/// Entries are rescaled by the largest magnitude first, so vectors whose
/// squares would overflow still produce a finite norm.
pub fn l2_norm(values: &[f64]) -> f64 {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let mut acc = 0.0;
    for v in values {
        let r = v / scale;
        acc += r * r;
    }
    scale * math::sqrt(acc)
}

/// Checked norm of a raw slice: non-finite input is an error.
pub fn l2_norm_checked(values: &[f64]) -> Result<f64> {
    check_finite(values, "l2_norm")?;
    Ok(l2_norm(values))
}

/// `Σ w_i v_i / Σ w_i`, accumulated in list order.
pub fn weighted_average(vs: &[&ParamVector], ws: &[f64]) -> Result<ParamVector> {
    if vs.is_empty() {
        return Err(Error::Empty("weighted_average inputs"));
    }
    if vs.len() != ws.len() {
        return Err(Error::Shape {
            expected: vs.len(),
            found: ws.len(),
        });
    }
    if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let dim = vs[0].dim();
    let mut total = 0.0;
    for w in ws {
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mut acc = vec![0.0; dim];
    for (v, &w) in vs.iter().zip(ws) {
        if v.dim() != dim {
            return Err(Error::Shape {
                expected: dim,
                found: v.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += w * x;
        }
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    ParamVector::checked(acc, "weighted_average")
}

/// Scalar counterpart of [`weighted_average`].
pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> Result<f64> {
    if xs.len() != ws.len() {
        return Err(Error::Shape {
            expected: xs.len(),
            found: ws.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::Empty("weighted_mean inputs"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, w) in xs.iter().zip(ws) {
        num += w * x;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let out = num / den;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite("weighted_mean"))
    }
}
