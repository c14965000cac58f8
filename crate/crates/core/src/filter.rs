//! EKF kernels over the full network state: prediction, sequential scalar
//! updates with an explicit measurement value, and scalar updates with the
//! set-valued knowledge that a censored measurement stayed near a reference
//! prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Control, DynamicsModel, MeasurementModel, ModelError};
use crate::stats::{truncated_moments, StatsError, TruncationWindow};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("innovation variance {0} is not positive")]
    NonPositiveInnovation(f64),
    #[error("event-trigger threshold must be non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("expected {expected} controls, got {got}")]
    ControlCount { expected: usize, got: usize },
    #[error("belief became non-finite")]
    NonFinite,
}

/// Mean and covariance of the full network state held by one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub k: usize,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(cov.nrows(), mean.len());
        assert_eq!(cov.ncols(), mean.len());
        Self { mean, cov, k: 0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    pub fn symmetrize(&mut self) {
        let n = self.cov.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = avg;
                self.cov[(j, i)] = avg;
            }
        }
    }

    /// Largest asymmetry `|P_ij - P_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).amax()
    }

    /// Smallest eigenvalue of the (symmetrized) covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    fn ensure_finite(&self) -> Result<(), FilterError> {
        if self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FilterError::NonFinite)
        }
    }
}

/// Propagates the belief one step: mean through the nonlinear dynamics, and
/// `P <- A P A^T + Q` with `A` the block-diagonal Jacobian at the prior mean.
pub fn predict(
    belief: &mut GaussianBelief,
    dynamics: &DynamicsModel,
    controls: &[Control],
) -> Result<(), FilterError> {
    let d = dynamics.state_dim();
    let robots = belief.dim() / d;
    if controls.len() != robots {
        return Err(FilterError::ControlCount {
            expected: robots,
            got: controls.len(),
        });
    }
    let n = belief.dim();
    let mut a = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    let noise = dynamics.process_noise();
    for (robot, &control) in controls.iter().enumerate() {
        let o = robot * d;
        let block = belief.mean.rows(o, d).clone_owned();
        let jac = dynamics.jacobian(block.as_slice(), control);
        let next = dynamics.propagate(block.as_slice(), control);
        a.view_mut((o, o), (d, d)).copy_from(&jac);
        q.view_mut((o, o), (d, d)).copy_from(&noise);
        belief.mean.rows_mut(o, d).copy_from_slice(&next);
    }
    belief.cov = &a * &belief.cov * a.transpose() + q;
    belief.symmetrize();
    belief.k += 1;
    belief.ensure_finite()
}

/// Sequential scalar Kalman update with measured value `y`.
pub fn fuse_explicit_scalar(
    belief: &mut GaussianBelief,
    model: &MeasurementModel,
    y: f64,
) -> Result<(), FilterError> {
    let c = model.jacobian(&belief.mean)?;
    let innovation = model.residual(y, model.predict(&belief.mean)?);
    let pc = &belief.cov * &c;
    let s = c.dot(&pc) + model.variance;
    if !(s > 0.0) {
        return Err(FilterError::NonPositiveInnovation(s));
    }
    belief.mean.axpy(innovation / s, &pc, 1.0);
    belief.cov.ger(-1.0 / s, &pc, &pc, 1.0);
    belief.symmetrize();
    belief.ensure_finite()
}

/// Intermediate quantities of one set-valued update.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitUpdateContext {
    /// `h(working mean) - h(prior mean)`.
    pub mu: f64,
    /// Innovation variance under the prior covariance.
    pub innovation_var: f64,
    /// `h(reference mean) - h(prior mean)`.
    pub alpha: f64,
    pub mean_shift: f64,
    pub variance_factor: f64,
    pub gain: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImplicitOutcome {
    Applied(ImplicitUpdateContext),
    /// The window carried no usable probability mass; the belief is unchanged.
    Skipped(StatsError),
}

/// Fuses the knowledge that a censored measurement satisfied
/// `|y - h(ref_mean)| <= delta`.
///
/// `prior` is the belief predicted to this step before any measurement fusion;
/// `belief` is the working posterior being updated.
pub fn fuse_implicit_scalar(
    belief: &mut GaussianBelief,
    prior: &GaussianBelief,
    ref_mean: &DVector<f64>,
    model: &MeasurementModel,
    delta: f64,
) -> Result<ImplicitOutcome, FilterError> {
    if !(delta >= 0.0) {
        return Err(FilterError::InvalidThreshold(delta));
    }
    let prior_prediction = model.predict(&prior.mean)?;
    let mu = model.residual(model.predict(&belief.mean)?, prior_prediction);
    let alpha = model.residual(model.predict(ref_mean)?, prior_prediction);

    let c = model.jacobian(&belief.mean)?;
    let innovation_var = c.dot(&(&prior.cov * &c)) + model.variance;
    if !(innovation_var > 0.0) {
        return Err(FilterError::NonPositiveInnovation(innovation_var));
    }

    let window = match TruncationWindow::new(-delta + alpha - mu, delta + alpha - mu) {
        Ok(w) => w,
        Err(e) => return Ok(ImplicitOutcome::Skipped(e)),
    };
    let moments = match truncated_moments(0.0, innovation_var, window) {
        Ok(m) => m,
        Err(e) => return Ok(ImplicitOutcome::Skipped(e)),
    };

    let pc = &belief.cov * &c;
    let s = c.dot(&pc) + model.variance;
    if !(s > 0.0) {
        return Err(FilterError::NonPositiveInnovation(s));
    }
    let gain = &pc / s;
    belief.mean.axpy(moments.mean_shift, &gain, 1.0);
    belief.cov.ger(-moments.variance_factor / s, &pc, &pc, 1.0);
    belief.symmetrize();
    belief.ensure_finite()?;
    Ok(ImplicitOutcome::Applied(ImplicitUpdateContext {
        mu,
        innovation_var,
        alpha,
        mean_shift: moments.mean_shift,
        variance_factor: moments.variance_factor,
        gain,
    }))
}
