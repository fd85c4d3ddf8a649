//! Scalar variance recursion and its large-system fixed point.
//!
//! For binary signatures every BP variance message at time `t` takes the
//! same value, so the variance dynamics collapse to the scalar pair
//!
//! ```text
//! λ̂(t)   = σ² + ((K−1)/N) / λ(t)
//! λ(t+1) = 1  + ((N−1)/N) / λ̂(t),        λ(0) = 1.
//! ```
//!
//! As `N → ∞` with `K/N = α` the fixed point is `(1+Λ, 1/Λ)` where `Λ` is the
//! positive root of `1/Λ = σ² + α/(1+Λ)`.

use serde::Serialize;

use crate::{Error, Result, Scalar};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// `λ̂ = σ² + ((K−1)/N)/λ`.
#[inline]
pub fn chip_variance_step<T: Scalar>(lambda: T, users: usize, chips: usize, sigma2: T) -> T {
    sigma2 + T::of_usize(users - 1) / T::of_usize(chips) / lambda
}

/// `λ = 1 + ((N−1)/N)/λ̂`.
#[inline]
pub fn user_variance_step<T: Scalar>(lambda_hat: T, chips: usize) -> T {
    T::one() + T::of_usize(chips - 1) / T::of_usize(chips) / lambda_hat
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarVarianceTrajectory<T> {
    /// `λ(0), λ(1), …`
    pub lambda: Vec<T>,
    /// `λ̂(0), λ̂(1), …`, same length as `lambda`.
    pub lambda_hat: Vec<T>,
    pub users: usize,
    pub chips: usize,
    pub converged: bool,
}

impl<T: Scalar> ScalarVarianceTrajectory<T> {
    pub fn steps(&self) -> usize {
        self.lambda.len() - 1
    }

    pub fn final_lambda(&self) -> T {
        *self.lambda.last().expect("trajectory is never empty")
    }

    pub fn final_lambda_hat(&self) -> T {
        *self.lambda_hat.last().expect("trajectory is never empty")
    }
}

pub fn scalar_variance_recursion<T: Scalar>(
    users: usize,
    chips: usize,
    sigma: T,
    t_max: usize,
    tol: T,
) -> Result<ScalarVarianceTrajectory<T>> {
    if users == 0 || chips == 0 {
        return Err(Error::Dimension(format!("K={users}, N={chips}")));
    }
    if !(sigma >= T::zero()) {
        return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let sigma2 = sigma * sigma;
    let mut lambda = vec![T::one()];
    let mut lambda_hat = vec![chip_variance_step(T::one(), users, chips, sigma2)];
    let mut converged = false;
    for _ in 0..t_max {
        let prev = *lambda.last().unwrap();
        let next = user_variance_step(*lambda_hat.last().unwrap(), chips);
        lambda.push(next);
        lambda_hat.push(chip_variance_step(next, users, chips, sigma2));
        if (next - prev).abs() <= tol {
            converged = true;
            break;
        }
    }
    Ok(ScalarVarianceTrajectory {
        lambda,
        lambda_hat,
        users,
        chips,
        converged,
    })
}

/// Converged `(λ^∞, λ̂^∞)` for a finite system, with the default tolerances.
pub fn finite_fixed_point<T: Scalar>(users: usize, chips: usize, sigma: T) -> Result<(T, T)> {
    let tol = T::lit(DEFAULT_TOL).max(T::lit(16.0) * T::epsilon());
    let traj = scalar_variance_recursion(users, chips, sigma, DEFAULT_MAX_STEPS, tol)?;
    Ok((traj.final_lambda(), traj.final_lambda_hat()))
}

fn check_asymptotic_args<T: Scalar>(alpha: T, sigma: T) -> Result<()> {
    if !(alpha >= T::zero()) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    if sigma == T::zero() {
        return Err(Error::Diverged {
            alpha: alpha.as_f64(),
            sigma: 0.0,
        });
    }
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

/// Positive root `Λ` of `σ²Λ² + (σ² + α − 1)Λ − 1 = 0`, i.e. of
/// `1/Λ = σ² + α/(1+Λ)`.
pub fn tse_hanly_lambda<T: Scalar>(alpha: T, sigma: T) -> Result<T> {
    check_asymptotic_args(alpha, sigma)?;
    let s2 = sigma * sigma;
    let b = s2 + alpha - T::one();
    let disc = (b * b + T::lit(4.0) * s2).sqrt();
    // pick the cancellation-free form of the root
    let mut root = if b > T::zero() {
        T::lit(2.0) / (b + disc)
    } else {
        (disc - b) / (T::lit(2.0) * s2)
    };
    // one Newton polish on the quadratic
    let f = s2 * root * root + b * root - T::one();
    let df = T::lit(2.0) * s2 * root + b;
    if df != T::zero() {
        root = root - f / df;
    }
    Ok(root)
}

/// `√α Λ/(1+Λ)`: the per-iteration rescaling of the distance to the fixed point.
pub fn contraction_factor<T: Scalar>(alpha: T, sigma: T) -> Result<T> {
    let lam = tse_hanly_lambda(alpha, sigma)?;
    Ok(alpha.sqrt() * lam / (T::one() + lam))
}

/// Iterations per e-folding of the distance to the fixed point,
/// `t* = −1/log(√α Λ/(1+Λ))`.
pub fn t_star<T: Scalar>(alpha: T, sigma: T) -> Result<T> {
    if !(alpha > T::zero()) {
        return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    let c = contraction_factor(alpha, sigma)?;
    if c >= T::one() {
        return Err(Error::NonContractive {
            alpha: alpha.as_f64(),
            sigma: sigma.as_f64(),
            factor: c.as_f64(),
        });
    }
    Ok(-T::one() / c.ln())
}

/// `⌈t* · ln(Δ/δ)⌉`: iterations to shrink an initial distance `Δ` down to `δ`.
pub fn iterations_for_precision<T: Scalar>(alpha: T, sigma: T, delta: T, initial: T) -> Result<usize> {
    if !(delta > T::zero() && delta < initial) {
        return Err(Error::Parameter(format!(
            "need 0 < delta < Delta, got delta={delta}, Delta={initial}"
        )));
    }
    let ts = t_star(alpha, sigma)?;
    let n = (ts * (initial / delta).ln()).ceil();
    Ok(n.to_usize().unwrap_or(usize::MAX))
}

/// Large-system summary for one `(α, σ)` point.
#[derive(Debug, Clone, Copy, Serialize)]
#[allow(non_snake_case)]
pub struct FixedPointReport<T> {
    pub Lambda: T,
    pub lambda_inf: T,
    pub lambda_hat_inf: T,
    /// `None` when the contraction factor is `>= 1`.
    pub t_star: Option<T>,
    pub asymptotic_mse: T,
    pub alpha: T,
    pub sigma: T,
}

impl<T: Scalar> FixedPointReport<T> {
    pub fn new(alpha: T, sigma: T) -> Result<Self> {
        let lam = tse_hanly_lambda(alpha, sigma)?;
        let t_star = match t_star(alpha, sigma) {
            Ok(t) => Some(t),
            Err(Error::NonContractive { .. }) => None,
            // alpha = 0: no interference, the rate is degenerate
            Err(Error::Parameter(_)) if alpha == T::zero() => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            Lambda: lam,
            lambda_inf: T::one() + lam,
            lambda_hat_inf: T::one() / lam,
            t_star,
            asymptotic_mse: T::one() / (T::one() + lam),
            alpha,
            sigma,
        })
    }

    /// `1/Λ − σ² − α/(1+Λ)`.
    pub fn residual(&self) -> T {
        T::one() / self.Lambda - self.sigma * self.sigma - self.alpha / (T::one() + self.Lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent route: iterate Λ ← 1/(σ² + α/(1+Λ)) from Λ = 1.
    fn lambda_by_iteration(alpha: f64, sigma: f64) -> f64 {
        let mut lam = 1.0f64;
        for _ in 0..1_000_000 {
            let next = 1.0 / (sigma * sigma + alpha / (1.0 + lam));
            if (next - lam).abs() <= 1e-14 * next.max(1.0) {
                return next;
            }
            lam = next;
        }
        lam
    }

    #[test]
    fn interference_free_limit() {
        for sigma in [0.1f64, 0.5, 2.0] {
            let lam = tse_hanly_lambda(0.0, sigma).unwrap();
            assert!((lam - 1.0 / (sigma * sigma)).abs() <= 1e-12 * lam);
        }
    }

    #[test]
    fn frozen_lambda_values() {
        // fixed-point iteration oracle: 50.9625..., 9.5124...
        let a = tse_hanly_lambda(0.5, 0.1).unwrap();
        let b = tse_hanly_lambda(1.0, 0.1).unwrap();
        assert!((a - lambda_by_iteration(0.5, 0.1)).abs() < 1e-10);
        assert!((b - lambda_by_iteration(1.0, 0.1)).abs() < 1e-10);
        assert!((a - 50.96).abs() < 0.005, "{a}");
        assert!((b - 9.51).abs() < 0.005, "{b}");
    }

    #[test]
    fn noiseless_asymptotics_rejected() {
        assert!(matches!(tse_hanly_lambda(1.5, 0.0), Err(Error::Diverged { .. })));
        assert!(matches!(tse_hanly_lambda(0.5, 0.0), Err(Error::Diverged { .. })));
        assert!(matches!(tse_hanly_lambda(-0.5, 0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_user_recursion_closed_form() {
        let sigma = 0.3;
        let n = 7;
        let tr = scalar_variance_recursion(1, n, sigma, 50, 1e-14).unwrap();
        assert_eq!(tr.lambda[0], 1.0);
        for &lh in &tr.lambda_hat {
            assert_eq!(lh, sigma * sigma);
        }
        let want = 1.0 + (n as f64 - 1.0) / n as f64 / (sigma * sigma);
        assert!((tr.lambda[1] - want).abs() < 1e-13);
        assert!(tr.converged);
    }

    #[test]
    fn recursion_starts_at_one() {
        let tr = scalar_variance_recursion(30, 40, 0.0, 10, 1e-12).unwrap();
        assert_eq!(tr.lambda[0], 1.0);
        assert_eq!(tr.lambda.len(), tr.lambda_hat.len());
    }

    #[test]
    fn large_system_proxy_reaches_lambda() {
        let n = 1_000_000;
        let tr = scalar_variance_recursion(n, n, 0.1f64, DEFAULT_MAX_STEPS, 1e-13).unwrap();
        let lam: f64 = tse_hanly_lambda(1.0, 0.1).unwrap();
        assert!(tr.converged);
        assert!((tr.final_lambda() - (1.0 + lam)).abs() < 1e-4);
        assert!((tr.final_lambda_hat() - 1.0 / lam).abs() < 1e-4);
    }

    #[test]
    fn t_star_rejects_non_contractive() {
        // αΛ/(1+Λ) = 1 − σ²Λ, so the factor is below 1 for every σ > 0; it
        // only reaches 1 in floating point, at α = 1 with vanishing noise
        assert!(matches!(t_star(1.0, 1e-20), Err(Error::NonContractive { .. })));
        assert!(FixedPointReport::<f64>::new(1.0, 1e-20).unwrap().t_star.is_none());
        assert!(contraction_factor(4.0f64, 0.05).unwrap() < 1.0);
    }

    #[test]
    fn iteration_counts() {
        let ts: f64 = t_star(0.5, 0.1).unwrap();
        let d = 2.0;
        assert_eq!(
            iterations_for_precision(0.5, 0.1, d / std::f64::consts::E, d).unwrap(),
            ts.ceil() as usize
        );
        let e2 = std::f64::consts::E.powi(2);
        assert_eq!(iterations_for_precision(0.5, 0.1, 1.0, e2).unwrap(), 6);
        assert_eq!(iterations_for_precision(1.0, 0.1, 0.1, 1.0).unwrap(), 24);
        assert!(iterations_for_precision(1.0, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn report_fields_consistent() {
        let r = FixedPointReport::<f64>::new(0.5, 0.1).unwrap();
        assert!(r.residual().abs() <= 1e-12);
        assert_eq!(r.lambda_inf, 1.0 + r.Lambda);
        assert!((r.asymptotic_mse - 1.0 / 51.9625).abs() < 1e-5);
    }

    #[test]
    fn f32_lambda_close_to_f64() {
        let a = tse_hanly_lambda(0.5f32, 0.2f32).unwrap() as f64;
        let b = tse_hanly_lambda(0.5f64, 0.2f64).unwrap();
        assert!((a - b).abs() / b < 1e-5);
    }

    proptest! {
        #[test]
        fn residual_vanishes(alpha in 0.0f64..4.0, sigma in 0.05f64..3.0) {
            let lam = tse_hanly_lambda(alpha, sigma).unwrap();
            prop_assert!(lam > 0.0);
            let res = 1.0 / lam - sigma * sigma - alpha / (1.0 + lam);
            prop_assert!(res.abs() <= 1e-12, "residual {}", res);
        }

        #[test]
        fn closed_form_matches_iteration(alpha in 0.0f64..2.0, sigma in 0.1f64..2.0) {
            let lam = tse_hanly_lambda(alpha, sigma).unwrap();
            let it = lambda_by_iteration(alpha, sigma);
            prop_assert!((lam - it).abs() <= 1e-10 * lam.max(1.0));
        }

        #[test]
        fn contraction_below_one_with_noise(alpha in 0.01f64..4.0, sigma in 0.01f64..3.0) {
            let c = contraction_factor(alpha, sigma).unwrap();
            prop_assert!(c > 0.0 && c < 1.0, "factor {}", c);
        }

        #[test]
        fn recursion_is_monotone(k in 1usize..60, n in 1usize..60, sigma in 0.0f64..1.5) {
            let tr = scalar_variance_recursion(k, n, sigma, DEFAULT_MAX_STEPS, 1e-13).unwrap();
            prop_assert!(tr.converged);
            for w in tr.lambda.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            // λ̂ = σ² + c/λ moves opposite to λ; the product λλ̂ = σ²λ + c grows
            for w in tr.lambda_hat.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            let prod: Vec<f64> = tr.lambda.iter().zip(&tr.lambda_hat).map(|(a, b)| a * b).collect();
            for w in prod.windows(2) {
                prop_assert!(w[1] >= w[0] * (1.0 - 1e-15));
            }
        }
    }
}
