//! Centralized objectives for the Adam / N-step accumulated Adam experiments.

use alloc::vec::Vec;

use crate::models::{self, Batch, ModelSpec};
use crate::{Error, Result};

pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient at `x` into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

/// `f(x) = ½ Σ c_i (x_i − x*_i)²` with positive curvatures `c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalQuadratic {
    curvature: Vec<f64>,
    optimum: Vec<f64>,
}

impl DiagonalQuadratic {
    pub fn new(curvature: Vec<f64>, optimum: Vec<f64>) -> Result<Self> {
        if curvature.len() != optimum.len() {
            return Err(Error::Shape {
                expected: curvature.len(),
                found: optimum.len(),
            });
        }
        if curvature.is_empty() {
            return Err(Error::Empty("quadratic"));
        }
        if curvature.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("curvatures must be positive"));
        }
        Ok(Self { curvature, optimum })
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    /// Largest curvature, i.e. the smoothness constant.
    pub fn lipschitz(&self) -> f64 {
        self.curvature.iter().fold(0.0, |m, c| f64::max(m, *c))
    }
}

impl Objective for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, ci), oi) in x.iter().zip(&self.curvature).zip(&self.optimum) {
            let d = xi - oi;
            acc += ci * d * d;
        }
        0.5 * acc
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (((g, xi), ci), oi) in out.iter_mut().zip(x).zip(&self.curvature).zip(&self.optimum) {
            *g = ci * (xi - oi);
        }
    }
}

/// Full-batch cross-entropy of a model on fixed data.
#[derive(Debug, Clone)]
pub struct ModelObjective<'a> {
    pub spec: ModelSpec,
    pub data: &'a Batch,
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn value(&self, x: &[f64]) -> f64 {
        models::evaluate(&self.spec, x, self.data, None, None)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        models::evaluate(&self.spec, x, self.data, None, Some(out));
    }
}
