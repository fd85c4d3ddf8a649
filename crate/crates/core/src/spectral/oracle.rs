use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::bp::BpRunReport;
use crate::linalg::Cholesky;
use crate::sysmodel::SystemInstance;
use crate::{Error, Result, Scalar};

/// Gaussian posterior of the symbols given `y`.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorOracle<T> {
    /// `x̂(y) = (σ²I + S̃ᵀS̃)⁻¹ S̃ᵀ y`
    pub mean: Array1<T>,
    /// `vᵢ = [(I + S̃ᵀS̃/σ²)⁻¹]ᵢᵢ`
    pub variance_diag: Array1<T>,
    pub sigma: T,
    pub users: usize,
    pub chips: usize,
    /// `‖(σ²I + S̃ᵀS̃) x̂ − S̃ᵀy‖_∞` of the solve.
    pub residual: T,
}

/// MMSE estimate and exact posterior variances by Cholesky factorization.
pub fn mmse_solve<T: Scalar>(instance: &SystemInstance<T>) -> Result<PosteriorOracle<T>> {
    let sig = instance.signatures();
    let (k, n) = (sig.users(), sig.chips());
    let s = sig.entries();
    let sigma2 = instance.noise_std() * instance.noise_std();
    let mut gram: Array2<T> = s.t().dot(s) / T::of_usize(n);
    for i in 0..k {
        gram[[i, i]] = gram[[i, i]] + sigma2;
    }
    let rhs = sig.correlate(instance.received().view());
    let chol = Cholesky::factor(gram.view())?;
    let mean = chol.solve(rhs.view());
    let residual = (gram.dot(&mean) - &rhs)
        .iter()
        .fold(T::zero(), |m, v| m.max(v.abs()));
    // σ² [(σ²I + S̃ᵀS̃)⁻¹]ᵢᵢ = [(I + S̃ᵀS̃/σ²)⁻¹]ᵢᵢ
    let variance_diag = chol.inverse_diagonal() * sigma2;
    Ok(PosteriorOracle {
        mean,
        variance_diag,
        sigma: instance.noise_std(),
        users: k,
        chips: n,
        residual,
    })
}

/// Gap between BP's fixed-point variances `1/Lᵢ` and the exact `vᵢ`.
#[derive(Debug, Clone, Serialize)]
pub struct DiscrepancyStat<T> {
    /// `δᵢ = 1/Lᵢ − vᵢ`
    pub delta: Array1<T>,
    /// `(1/K) Σ δᵢ²`
    pub d: T,
}

pub fn discrepancy_d<T: Scalar>(
    bp_report: &BpRunReport<T>,
    oracle: &PosteriorOracle<T>,
) -> Result<DiscrepancyStat<T>> {
    if !bp_report.converged {
        return Err(Error::Parameter(
            "discrepancy needs a converged BP run".into(),
        ));
    }
    let l = &bp_report.estimate.l;
    if l.len() != oracle.variance_diag.len() {
        return Err(Error::Dimension(format!(
            "BP run has {} users, oracle has {}",
            l.len(),
            oracle.variance_diag.len()
        )));
    }
    let delta = Array1::from_iter(
        l.iter()
            .zip(oracle.variance_diag.iter())
            .map(|(&li, &vi)| T::one() / li - vi),
    );
    let d = delta.iter().map(|&x| x * x).sum::<T>() / T::of_usize(delta.len());
    Ok(DiscrepancyStat { delta, d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{run_bp, BpConfig};
    use crate::sysmodel::{generate_instance, SignatureDistribution, SignatureMatrix};
    use ndarray::array;

    #[test]
    fn scalar_posterior() {
        let sigma: f64 = 0.6;
        let sig = SignatureMatrix::from_entries(array![[1.0]]).unwrap();
        let inst = SystemInstance::from_parts(sig, array![0.8], array![0.3], sigma, 0).unwrap();
        let o = mmse_solve(&inst).unwrap();
        let s2 = sigma * sigma;
        assert!((o.mean[0] - inst.received()[0] / (s2 + 1.0)).abs() < 1e-15);
        assert!((o.variance_diag[0] - s2 / (s2 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_input_gives_zero_mean() {
        let sig = SignatureMatrix::from_entries(array![[1.0, -1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let zero = SystemInstance::from_parts(sig.clone(), array![0.0, 0.0], array![0.0, 0.0, 0.0], 0.4, 0).unwrap();
        let other = SystemInstance::from_parts(sig, array![1.0, 2.0], array![0.1, 0.0, -0.1], 0.4, 0).unwrap();
        let a = mmse_solve(&zero).unwrap();
        let b = mmse_solve(&other).unwrap();
        assert!(a.mean.iter().all(|&v| v == 0.0));
        assert_eq!(a.variance_diag, b.variance_diag);
    }

    #[test]
    fn noiseless_rank_deficient_is_singular() {
        // two identical users, no noise
        let sig = SignatureMatrix::from_entries(array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let inst = SystemInstance::from_parts(sig, array![1.0, 0.0], array![0.0, 0.0], 0.0, 0).unwrap();
        assert!(matches!(mmse_solve(&inst), Err(Error::Singular { .. })));
    }

    #[test]
    fn variances_in_unit_interval_and_residual_small() {
        for seed in 0..5 {
            let inst = generate_instance::<f64>(30, 40, SignatureDistribution::Binary, 0.3, seed).unwrap();
            let o = mmse_solve(&inst).unwrap();
            assert!(o.variance_diag.iter().all(|&v| v > 0.0 && v <= 1.0));
            let ymax = inst.received().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(o.residual <= 1e-10 * (1.0 + ymax));
        }
    }

    #[test]
    fn discrepancy_nonnegative_and_needs_convergence() {
        let inst = generate_instance::<f64>(10, 20, SignatureDistribution::Binary, 0.3, 1).unwrap();
        let o = mmse_solve(&inst).unwrap();
        let done = run_bp(&inst, &BpConfig::new(1e-10, 500), None).unwrap();
        let stat = discrepancy_d(&done, &o).unwrap();
        assert!(stat.d >= 0.0);
        let early = run_bp(&inst, &BpConfig::new(1e-10, 1), None).unwrap();
        assert!(discrepancy_d(&early, &o).is_err());
    }

    #[test]
    fn single_user_variance_gap_shrinks_with_chips() {
        // K = 1: BP gives 1/L = 1/(1 + 1/σ²) exactly as the posterior does
        let mut gaps = Vec::new();
        for n in [4usize, 64, 1024] {
            let inst = generate_instance::<f64>(1, n, SignatureDistribution::Binary, 0.5, 2).unwrap();
            let o = mmse_solve(&inst).unwrap();
            let r = run_bp(&inst, &BpConfig::new(1e-12, 100), None).unwrap();
            gaps.push(discrepancy_d(&r, &o).unwrap().delta[0].abs());
        }
        assert!(gaps.iter().all(|&g| g < 1e-12), "{gaps:?}");
    }
}
