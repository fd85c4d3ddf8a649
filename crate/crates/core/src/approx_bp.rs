//! Approximate BP: belief propagation reduced to vertex quantities.
//!
//! Writing each edge message as a vertex value plus an `O(N^{-1/2})`
//! correction and eliminating the correction leaves two vectors, `G` on the
//! users and `Ĝ` on the chips. One iteration `t → t+1` is
//!
//! ```text
//! G^(t+1) = G^(t) / (λ(t) λ̂(t)) + (1/λ̂(t)) S̃ᵀ Ĝ^(t)
//! Ĝ^(t+1) = y + α / (λ(t+1) λ̂(t)) · Ĝ^(t) − (1/λ(t+1)) S̃ G^(t+1)
//! ```
//!
//! with `S̃ = S/√N`, starting from `G^(0) = 0`, `Ĝ^(0) = y`. `G` is updated
//! first and the fresh value feeds the `Ĝ` update. The scalars come from the
//! finite-size variance recursion in [`crate::fixedpoint`], stepped in lockstep
//! with the same arithmetic. Only binary signatures are supported.

use ndarray::Array1;

use crate::bp::{record, BpRunReport, MarginalEstimate};
use crate::fixedpoint::{chip_variance_step, finite_fixed_point, user_variance_step};
use crate::sysmodel::SystemInstance;
use crate::{opcount, Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct VertexState<T> {
    /// User aggregates `G^(t)`, length `K`.
    pub g: Array1<T>,
    /// Chip aggregates `Ĝ^(t)`, length `N`.
    pub g_hat: Array1<T>,
    pub iteration: usize,
    /// `λ(t)`
    pub lambda_t: T,
    /// `λ̂(t)`
    pub lambda_hat_t: T,
    /// `λ̂(t−1)`; absent at `t = 0`.
    pub lambda_hat_prev: Option<T>,
}

fn require_binary<T: Scalar>(instance: &SystemInstance<T>) -> Result<()> {
    if instance.signatures().is_binary() {
        Ok(())
    } else {
        Err(Error::UnsupportedDistribution)
    }
}

pub fn abp_init<T: Scalar>(instance: &SystemInstance<T>) -> Result<VertexState<T>> {
    require_binary(instance)?;
    let sigma2 = instance.noise_std() * instance.noise_std();
    let lambda = T::one();
    Ok(VertexState {
        g: Array1::zeros(instance.users()),
        g_hat: instance.received().clone(),
        iteration: 0,
        lambda_t: lambda,
        lambda_hat_t: chip_variance_step(lambda, instance.users(), instance.chips(), sigma2),
        lambda_hat_prev: None,
    })
}

pub fn abp_iterate<T: Scalar>(state: &VertexState<T>, instance: &SystemInstance<T>) -> Result<VertexState<T>> {
    require_binary(instance)?;
    let sig = instance.signatures();
    let (k, n) = (sig.users(), sig.chips());
    if state.g.len() != k || state.g_hat.len() != n {
        return Err(Error::Dimension(format!(
            "state has |G|={}, |Ĝ|={} for K={k}, N={n}",
            state.g.len(),
            state.g_hat.len()
        )));
    }
    let sigma2 = instance.noise_std() * instance.noise_std();
    let lam = state.lambda_t;
    let lam_hat = state.lambda_hat_t;
    let lam_next = user_variance_step(lam_hat, n);

    let g = &state.g / (lam * lam_hat) + sig.correlate(state.g_hat.view()) / lam_hat;
    let onsager = instance.alpha() / (lam_next * lam_hat);
    let g_hat = instance.received() + &(&state.g_hat * onsager) - sig.spread(g.view()) / lam_next;
    opcount::add(2 * n * k);

    let next = VertexState {
        g,
        g_hat,
        iteration: state.iteration + 1,
        lambda_t: lam_next,
        lambda_hat_t: chip_variance_step(lam_next, k, n, sigma2),
        lambda_hat_prev: Some(lam_hat),
    };
    if let Some(i) = next.g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalDivergence {
            user: i,
            chip: 0,
            iteration: next.iteration,
        });
    }
    if let Some(a) = next.g_hat.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalDivergence {
            user: 0,
            chip: a,
            iteration: next.iteration,
        });
    }
    Ok(next)
}

fn max_change<T: Scalar>(a: &VertexState<T>, b: &VertexState<T>) -> T {
    let d = |x: &Array1<T>, y: &Array1<T>| {
        x.iter()
            .zip(y.iter())
            .fold(T::zero(), |m, (p, q)| m.max((*p - *q).abs()))
    };
    d(&a.g, &b.g).max(d(&a.g_hat, &b.g_hat))
}

/// Runs approximate BP to a max-norm change of `tol` on `(G, Ĝ)`.
///
/// History entries use `G^(t)/λ(t)`; the final estimate divides by the
/// converged finite-size `λ^∞` instead.
pub fn run_abp<T: Scalar>(
    instance: &SystemInstance<T>,
    tol: T,
    t_max: usize,
    reference: Option<&Array1<T>>,
) -> Result<BpRunReport<T>> {
    if !(tol > T::zero()) {
        return Err(Error::Parameter(format!("tol must be > 0, got {tol}")));
    }
    let mut state = abp_init(instance)?;
    let (lambda_inf, _) = finite_fixed_point(instance.users(), instance.chips(), instance.noise_std())?;
    let mut history = Vec::with_capacity(t_max.min(4096) + 1);
    let mut converged = false;
    let mut last_change = T::infinity();
    while state.iteration < t_max {
        let next = abp_iterate(&state, instance)?;
        last_change = max_change(&next, &state);
        state = next;
        let x_hat = &state.g / state.lambda_t;
        history.push(record(instance, state.iteration, x_hat.view(), reference));
        if last_change <= tol {
            converged = true;
            break;
        }
    }
    let estimate = MarginalEstimate {
        l: Array1::from_elem(instance.users(), lambda_inf),
        g: state.g,
        iteration: state.iteration,
    };
    Ok(BpRunReport {
        estimate,
        iterations_used: state.iteration,
        converged,
        last_change,
        history,
    })
}

/// Max-norm residual of the stationarity conditions for a given scalar pair:
///
/// ```text
/// G = G/(λλ̂) + S̃ᵀĜ/λ̂
/// Ĝ = y + α Ĝ/(λλ̂) − S̃G/λ
/// ```
pub fn fixed_point_residual_with<T: Scalar>(
    state: &VertexState<T>,
    instance: &SystemInstance<T>,
    lambda: T,
    lambda_hat: T,
) -> T {
    let sig = instance.signatures();
    let prod = lambda * lambda_hat;
    let r_user = &state.g - &(&state.g / prod) - sig.correlate(state.g_hat.view()) / lambda_hat;
    let r_chip = &state.g_hat
        - instance.received()
        - &(&state.g_hat * (instance.alpha() / prod))
        + sig.spread(state.g.view()) / lambda;
    r_user
        .iter()
        .chain(r_chip.iter())
        .fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Residual of the large-system conditions, `λ = 1+Λ`, `λ̂ = 1/Λ`:
///
/// ```text
/// G = (Λ/(1+Λ)) G + Λ S̃ᵀĜ
/// Ĝ = (αΛ/(1+Λ)) Ĝ + y − S̃G/(1+Λ)
/// ```
#[allow(non_snake_case)]
pub fn fixed_point_residual<T: Scalar>(state: &VertexState<T>, instance: &SystemInstance<T>, Lambda: T) -> T {
    fixed_point_residual_with(state, instance, T::one() + Lambda, T::one() / Lambda)
}
