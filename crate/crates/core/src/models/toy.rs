use super::ForwardModel;
use crate::error::{Error, Result};
use crate::numerics::linalg::Matrix;

/// `G(z) = Az + τ F(z)` with `F(z)_i = z_i e^{−z_i²}`.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub tau: f64,
    a: Matrix,
}

impl ToyModel {
    pub fn new(s: usize, tau: f64) -> Result<Self> {
        Self::with_matrix(Matrix::identity(s), tau)
    }

    pub fn with_matrix(a: Matrix, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::config(format!(
                "model.tau must be a finite value >= 0, got {tau}"
            )));
        }
        if !a.is_square() {
            return Err(Error::Dimension {
                context: "toy model matrix",
                expected: a.rows(),
                got: a.cols(),
            });
        }
        Ok(Self { tau, a })
    }

    /// The lower-bound constant `(1 + τ)⁻²`.
    pub fn delta(&self) -> f64 {
        (1.0 + self.tau).powi(-2)
    }
}

impl ForwardModel for ToyModel {
    fn input_dim(&self) -> usize {
        self.a.cols()
    }

    fn output_dim(&self) -> usize {
        self.a.rows()
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.a.mul_vec(z)?;
        for (gi, &zi) in g.iter_mut().zip(z) {
            *gi += self.tau * zi * (-zi * zi).exp();
        }
        Ok(g)
    }

    fn jacobian(&self, z: &[f64]) -> Option<Result<Matrix>> {
        let mut j = self.a.clone();
        for (i, &zi) in z.iter().enumerate() {
            j[(i, i)] += self.tau * (1.0 - 2.0 * zi * zi) * (-zi * zi).exp();
        }
        Some(Ok(j))
    }

    fn weighted_hessian(&self, z: &[f64], w: &[f64]) -> Option<Result<Matrix>> {
        let d: Vec<f64> = z
            .iter()
            .zip(w)
            .map(|(&zi, &wi)| wi * self.tau * (4.0 * zi.powi(3) - 6.0 * zi) * (-zi * zi).exp())
            .collect();
        Some(Ok(Matrix::from_diag(&d)))
    }
}
