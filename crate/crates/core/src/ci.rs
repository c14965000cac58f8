//! Covariance Intersection fusion, its trigger rule, and the threshold
//! balancing dynamics that let well-connected robots trigger more often on
//! behalf of poorly connected ones.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::GaussianBelief;
use crate::models::RobotId;

/// Added to the diagonal when a covariance fails to factorize.
pub const REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CiError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("covariance is not invertible even after regularization")]
    SingularCovariance,
    #[error("preference weights must be non-negative")]
    NegativeWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub tau_goal: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    /// Width at which the golden-section search on `omega` stops.
    pub tolerance: f64,
    /// Whether `tau` follows the balancing dynamics or stays at `tau_goal`.
    pub adaptive: bool,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            tau_goal: 5.0,
            epsilon1: 0.1,
            epsilon2: 0.01,
            tolerance: 1e-6,
            adaptive: false,
        }
    }
}

/// Per-agent trigger bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiState {
    pub tau: f64,
    pub trigger_count: u64,
    pub step_count: u64,
    /// Last trigger rate heard from each neighbor.
    pub neighbor_rates: BTreeMap<RobotId, f64>,
}

impl CiState {
    pub fn new(tau_goal: f64, neighbors: impl IntoIterator<Item = RobotId>) -> Self {
        Self {
            tau: tau_goal,
            trigger_count: 0,
            step_count: 0,
            neighbor_rates: neighbors.into_iter().map(|j| (j, 0.0)).collect(),
        }
    }

    /// Fraction of steps so far in which this agent triggered.
    pub fn rate(&self) -> f64 {
        if self.step_count == 0 {
            0.0
        } else {
            self.trigger_count as f64 / self.step_count as f64
        }
    }

    pub fn record_step(&mut self, triggered: bool) {
        self.step_count += 1;
        if triggered {
            self.trigger_count += 1;
        }
    }
}

/// `sum_m alpha_m P_mm`, i.e. `trace(P diag(alpha))`.
pub fn weighted_trace(p: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<f64, CiError> {
    if p.nrows() != alpha.len() || p.ncols() != alpha.len() {
        return Err(CiError::DimensionMismatch {
            left: p.nrows(),
            right: alpha.len(),
        });
    }
    Ok(p.diagonal().dot(alpha))
}

pub fn ci_trigger(state: &CiState, p: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<bool, CiError> {
    Ok(weighted_trace(p, alpha)? > state.tau)
}

/// One step of the balancing dynamics, using the neighbor rates stored in
/// `state`. The threshold never rises above `tau_goal`.
pub fn update_tau(state: &mut CiState, cfg: &CiConfig) {
    if !cfg.adaptive {
        state.tau = cfg.tau_goal;
        return;
    }
    let own = state.rate();
    let disagreement: f64 = state.neighbor_rates.values().map(|r| own - r).sum();
    let next = state.tau + cfg.epsilon1 * disagreement + cfg.epsilon2 * (cfg.tau_goal - state.tau);
    state.tau = next.min(cfg.tau_goal);
}

fn factorize(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, CiError> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let n = m.nrows();
    Cholesky::new(m + DMatrix::identity(n, n) * REGULARIZATION).ok_or(CiError::SingularCovariance)
}

fn information(p: &DMatrix<f64>) -> Result<DMatrix<f64>, CiError> {
    Ok(factorize(p.clone())?.inverse())
}

/// Golden-section search for a minimum of a unimodal `f` on `[lo, hi]`.
/// Returns the best point seen, including both end points.
pub fn golden_section_minimize<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64), CiError>
where
    F: FnMut(f64) -> Result<f64, CiError>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x)?;
        if fx < best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}

/// Fuses two beliefs with unknown cross-correlation. `omega` weights the
/// information of `a` and is chosen to minimize the `alpha`-weighted trace of
/// the fused covariance.
pub fn ci_fuse(
    a: &GaussianBelief,
    b: &GaussianBelief,
    alpha: &DVector<f64>,
    tol: f64,
) -> Result<(GaussianBelief, f64), CiError> {
    if a.dim() != b.dim() {
        return Err(CiError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if alpha.len() != a.dim() {
        return Err(CiError::DimensionMismatch {
            left: a.dim(),
            right: alpha.len(),
        });
    }
    if alpha.iter().any(|&w| w < 0.0) {
        return Err(CiError::NegativeWeight);
    }
    let info_a = information(&a.cov)?;
    let info_b = information(&b.cov)?;
    let blend = |omega: f64| &info_a * omega + &info_b * (1.0 - omega);
    let objective = |omega: f64| -> Result<f64, CiError> {
        let fused = factorize(blend(omega))?.inverse();
        Ok(fused.diagonal().dot(alpha))
    };

    let (omega, best) = golden_section_minimize(objective, 0.0, 1.0, tol)?;
    debug_assert!(
        (0..=32).all(|i| objective(i as f64 / 32.0).map_or(true, |v| best <= v + 1e-9 * (1.0 + v.abs()))),
        "golden-section optimum {best} at omega={omega} beaten on the grid"
    );

    let fused_info = blend(omega);
    let cov = factorize(fused_info)?.inverse();
    let weighted_means = &info_a * &a.mean * omega + &info_b * &b.mean * (1.0 - omega);
    let mean = &cov * weighted_means;
    let mut fused = GaussianBelief {
        mean,
        cov,
        k: a.k,
    };
    fused.symmetrize();
    Ok((fused, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::ci_oracle;
    use crate::testing::random::spd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn belief(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianBelief {
        GaussianBelief::new(DVector::from_vec(mean), cov)
    }

    #[test]
    fn weighted_trace_cases() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        assert_eq!(weighted_trace(&p, &DVector::from_element(2, 1.0)).unwrap(), 5.0);
        assert_eq!(weighted_trace(&p, &DVector::from_vec(vec![0.0, 1.0])).unwrap(), 3.0);
        assert!(matches!(
            weighted_trace(&p, &DVector::from_element(3, 1.0)),
            Err(CiError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weighted_trace_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..8 {
            let p = spd(&mut rng, dim);
            let alpha = DVector::from_fn(dim, |_, _| rng.random_range(0.0..2.0));
            let dense = (&p * DMatrix::from_diagonal(&alpha)).trace();
            assert!((weighted_trace(&p, &alpha).unwrap() - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_inputs_are_fixed_points() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = belief(vec![1.0, -1.0], p);
        let (fused, _) = ci_fuse(&a, &a, &DVector::from_element(2, 1.0), 1e-6).unwrap();
        assert!((fused.mean - &a.mean).amax() < 1e-12);
        assert!((fused.cov - &a.cov).amax() < 1e-12);
    }

    #[test]
    fn dominant_input_wins_at_the_boundary() {
        let a = belief(vec![0.0, 0.0], DMatrix::identity(2, 2));
        let b = belief(vec![0.0, 0.0], DMatrix::identity(2, 2) * 10.0);
        let (fused, omega) = ci_fuse(&a, &b, &DVector::from_element(2, 1.0), 1e-6).unwrap();
        assert_eq!(omega, 1.0);
        assert!((fused.cov - &a.cov).amax() < 1e-12);
    }

    #[test]
    fn matches_grid_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let dim = rng.random_range(2..6);
            let pa = spd(&mut rng, dim);
            let pb = spd(&mut rng, dim);
            let alpha = DVector::from_element(dim, 1.0);
            let a = belief(vec![0.0; dim], pa.clone());
            let b = belief(vec![1.0; dim], pb.clone());
            let (fused, omega) = ci_fuse(&a, &b, &alpha, 1e-6).unwrap();
            let (grid_omega, grid_value) = ci_oracle::grid_minimizer(&pa, &pb, &alpha, 10_000);
            assert!((omega - grid_omega).abs() <= 2e-4, "{omega} vs {grid_omega}");
            let value = weighted_trace(&fused.cov, &alpha).unwrap();
            assert!(value <= grid_value + 1e-8, "{value} vs {grid_value}");
            let residual = fused.cov.clone().try_inverse().unwrap()
                - (pa.try_inverse().unwrap() * omega + pb.try_inverse().unwrap() * (1.0 - omega));
            assert!(residual.amax() < 1e-8);
        }
    }

    #[test]
    fn fusion_never_worse_than_either_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let dim = rng.random_range(2..7);
            let alpha = DVector::from_fn(dim, |_, _| rng.random_range(0.0..1.0));
            let a = belief(vec![0.0; dim], spd(&mut rng, dim));
            let b = belief(vec![0.0; dim], spd(&mut rng, dim));
            let (fused, _) = ci_fuse(&a, &b, &alpha, 1e-6).unwrap();
            let value = weighted_trace(&fused.cov, &alpha).unwrap();
            let bound = weighted_trace(&a.cov, &alpha)
                .unwrap()
                .min(weighted_trace(&b.cov, &alpha).unwrap());
            assert!(value <= bound + 1e-9);
        }
    }

    #[test]
    fn singular_covariance_is_reported() {
        let a = belief(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let b = belief(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert_eq!(
            ci_fuse(&a, &b, &DVector::from_element(2, 1.0), 1e-6).unwrap_err(),
            CiError::SingularCovariance
        );
    }

    #[test]
    fn trigger_is_strict() {
        let state = CiState::new(5.0, []);
        let ones = DVector::from_element(2, 1.0);
        let p = |t: f64| DMatrix::from_diagonal(&DVector::from_vec(vec![t / 2.0, t / 2.0]));
        assert!(ci_trigger(&state, &p(5.1), &ones).unwrap());
        assert!(!ci_trigger(&state, &p(5.0), &ones).unwrap());
        // Zero weight on a growing block never triggers.
        let mut big = p(1.0);
        big[(1, 1)] = 1e9;
        assert!(!ci_trigger(&state, &big, &DVector::from_vec(vec![1.0, 0.0])).unwrap());
    }

    #[test]
    fn tau_dynamics() {
        let cfg = CiConfig {
            adaptive: true,
            ..CiConfig::default()
        };
        assert_eq!((cfg.epsilon1, cfg.epsilon2), (0.1, 0.01));

        // Equal rates at the goal: fixed point.
        let mut s = CiState::new(5.0, [1, 2]);
        s.trigger_count = 3;
        s.step_count = 10;
        s.neighbor_rates.insert(1, 0.3);
        s.neighbor_rates.insert(2, 0.3);
        update_tau(&mut s, &cfg);
        assert!((s.tau - 5.0).abs() < 1e-15);

        // Triggering less than every neighbor lowers the threshold.
        let mut s = CiState::new(5.0, [1, 2]);
        s.step_count = 10;
        s.neighbor_rates.insert(1, 0.5);
        s.neighbor_rates.insert(2, 0.2);
        update_tau(&mut s, &cfg);
        assert!((s.tau - (5.0 - 0.1 * 0.7)).abs() < 1e-12);

        // Triggering more raises it, but never past the goal.
        let mut s = CiState::new(5.0, [1]);
        s.trigger_count = 10;
        s.step_count = 10;
        update_tau(&mut s, &cfg);
        assert_eq!(s.tau, 5.0);
    }

    #[test]
    fn golden_section_finds_interior_minimum() {
        let (x, fx) = golden_section_minimize(|x| Ok((x - 0.3).powi(2)), 0.0, 1.0, 1e-8).unwrap();
        assert!((x - 0.3).abs() < 1e-7);
        assert!(fx < 1e-13);
    }
}
