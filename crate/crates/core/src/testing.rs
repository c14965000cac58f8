//! Independent reference computations used by tests only.
//!
//! Nothing in here shares code with the production paths it checks: moments
//! come from adaptive quadrature instead of closed forms, and the CI optimum
//! from a dense grid with plain LU inversion instead of golden section with
//! Cholesky factorizations.

pub mod quadrature {
    use std::f64::consts::PI;

    // Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];

    fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
        let center = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let fc = f(center);
        let mut kronrod = fc * WGK[7];
        let mut gauss = fc * WG[3];
        for (j, &x) in XGK.iter().take(7).enumerate() {
            let dx = half * x;
            let sum = f(center - dx) + f(center + dx);
            kronrod += WGK[j] * sum;
            if j % 2 == 1 {
                gauss += WG[j / 2] * sum;
            }
        }
        (kronrod * half, ((kronrod - gauss) * half).abs())
    }

    /// Adaptive Gauss-Kronrod integration of `f` over a finite interval.
    pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
            let (value, err) = gk15(f, a, b);
            if err <= tol || err <= 64.0 * f64::EPSILON * value.abs() || depth == 0 {
                return value;
            }
            let mid = 0.5 * (a + b);
            recurse(f, a, mid, tol, depth - 1) + recurse(f, mid, b, tol, depth - 1)
        }
        recurse(f, a, b, tol, 30)
    }

    #[derive(Debug, Clone, Copy)]
    pub struct QuadratureMoments {
        pub mass: f64,
        pub mean: f64,
        pub variance: f64,
    }

    /// Mass, mean and variance of `N(mu, var)` restricted to `[lower, upper]`.
    /// Infinite bounds are clipped 40 standard deviations out.
    pub fn truncated_moments_by_quadrature(
        mu: f64,
        var: f64,
        lower: f64,
        upper: f64,
    ) -> QuadratureMoments {
        let sigma = var.sqrt();
        let a = ((lower - mu) / sigma).max(-40.0);
        let b = ((upper - mu) / sigma).min(40.0);
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        // Integrate around the window centre so the second moment is computed
        // without cancellation, then shift back.
        let c = 0.5 * (a + b);
        let m0 = integrate(&pdf, a, b, 1e-17);
        let m1 = integrate(&|z: f64| (z - c) * pdf(z), a, b, 1e-17);
        let m2 = integrate(&|z: f64| (z - c) * (z - c) * pdf(z), a, b, 1e-17);
        let mean_std = m1 / m0;
        QuadratureMoments {
            mass: m0,
            mean: mu + sigma * (c + mean_std),
            variance: var * (m2 / m0 - mean_std * mean_std),
        }
    }
}

pub mod ci_oracle {
    use nalgebra::{DMatrix, DVector};

    /// Weighted trace of the CI covariance at `omega`, by LU inversion and a
    /// dense product with `diag(alpha)`.
    pub fn objective(pa: &DMatrix<f64>, pb: &DMatrix<f64>, alpha: &DVector<f64>, omega: f64) -> f64 {
        let ia = pa.clone().try_inverse().expect("invertible");
        let ib = pb.clone().try_inverse().expect("invertible");
        objective_from_information(&ia, &ib, alpha, omega)
    }

    fn objective_from_information(
        ia: &DMatrix<f64>,
        ib: &DMatrix<f64>,
        alpha: &DVector<f64>,
        omega: f64,
    ) -> f64 {
        let fused = (ia * omega + ib * (1.0 - omega))
            .try_inverse()
            .expect("invertible");
        (fused * DMatrix::from_diagonal(alpha)).trace()
    }

    /// Grid minimizer of the CI objective with the given number of intervals.
    pub fn grid_minimizer(
        pa: &DMatrix<f64>,
        pb: &DMatrix<f64>,
        alpha: &DVector<f64>,
        intervals: usize,
    ) -> (f64, f64) {
        let ia = pa.clone().try_inverse().expect("invertible");
        let ib = pb.clone().try_inverse().expect("invertible");
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=intervals {
            let omega = i as f64 / intervals as f64;
            let value = objective_from_information(&ia, &ib, alpha, omega);
            if value < best.1 {
                best = (omega, value);
            }
        }
        best
    }
}

pub mod random {
    use nalgebra::DMatrix;
    use rand::Rng;

    /// Random symmetric positive definite matrix with eigenvalues bounded away
    /// from zero.
    pub fn spd<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let scale = rng.random_range(0.2..5.0);
        (&m * m.transpose()) * scale + DMatrix::identity(dim, dim) * rng.random_range(0.05..1.0)
    }
}
