use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic quadratic law `Q(G) = (λ/2)(tr G)² + μ|sym G|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicLaw {
    pub lambda: f64,
    pub mu: f64,
}

impl IsotropicLaw {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !(lambda >= 0.0) || !(3.0 * lambda + 2.0 * mu > 0.0) || !lambda.is_finite() || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "isotropic law needs mu > 0 and lambda >= 0 (got lambda = {lambda}, mu = {mu})"
            )));
        }
        Ok(IsotropicLaw { lambda, mu })
    }

    /// The symmetric pairing `(λ/2) tr G tr G' + μ sym G · sym G'`, so that
    /// `pair(G, G) = Q(G)`.
    pub fn pair(&self, a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let sa = (a + a.transpose()) * 0.5;
        let sb = (b + b.transpose()) * 0.5;
        0.5 * self.lambda * a.trace() * b.trace() + self.mu * sa.dot(&sb)
    }

    pub fn energy(&self, a: &Matrix3<f64>) -> f64 {
        self.pair(a, a)
    }
}
