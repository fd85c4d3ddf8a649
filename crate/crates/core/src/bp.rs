//! Edge-message belief propagation on the complete bipartite user/chip graph.
//!
//! Users send `(λ_{i→a}, γ_{i→a})` to chips and chips answer with
//! `(λ̂_{a→i}, γ̂_{a→i})`:
//!
//! ```text
//! λ̂_{a→i} = σ² + (1/N)  Σ_{k≠i} s²_{ka} / λ_{k→a}
//! γ̂_{a→i} = y_a − (1/√N) Σ_{k≠i} s_{ka} γ_{k→a} / λ_{k→a}
//! λ_{i→a} = 1  + (1/N)  Σ_{b≠a} s²_{ib} / λ̂_{b→i}
//! γ_{i→a} =      (1/√N) Σ_{b≠a} s_{ib} γ̂_{b→i} / λ̂_{b→i}
//! ```
//!
//! Each exclusive sum is computed as the full vertex sum minus the edge's own
//! term, so one iteration costs `O(NK)`. The schedule is synchronous: an
//! [`EdgeMessages`] value at iteration `t` holds `λ^(t), γ^(t)` together with
//! the chip messages `λ̂^(t), γ̂^(t)` computed from them.
//!
//! All four message families are `K × N` arrays indexed by edge `(i, a)`,
//! whichever direction the message travels.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::Serialize;

use crate::fixedpoint::{chip_variance_step, t_star, user_variance_step};
use crate::sysmodel::SystemInstance;
use crate::{opcount, Error, Result, Scalar};

pub const DEFAULT_TOL: f64 = 1e-10;

/// How variance messages are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceUpdate {
    /// Scalar recursion for binary signatures, per-edge sums otherwise.
    #[default]
    Auto,
    /// Always evaluate the per-edge sums.
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessages<T> {
    /// `λ_{i→a}`, shape `K × N`.
    pub lambda: Array2<T>,
    /// `γ_{i→a}`, shape `K × N`.
    pub gamma: Array2<T>,
    /// `λ̂_{a→i}` at `[i, a]`, shape `K × N`.
    pub lambda_hat: Array2<T>,
    /// `γ̂_{a→i}` at `[i, a]`, shape `K × N`.
    pub gamma_hat: Array2<T>,
    pub iteration: usize,
}

impl<T: Scalar> EdgeMessages<T> {
    /// Largest absolute difference over all four message families.
    pub fn max_change(&self, other: &Self) -> T {
        let d = |a: &Array2<T>, b: &Array2<T>| match (a.as_slice(), b.as_slice()) {
            (Some(x), Some(y)) if x.len() == y.len() => max_abs_diff(x, y),
            _ => Zip::from(a).and(b).fold(T::zero(), |m, &x, &y| wider(m, (x - y).abs())),
        };
        d(&self.lambda, &other.lambda)
            .max(d(&self.gamma, &other.gamma))
            .max(d(&self.lambda_hat, &other.lambda_hat))
            .max(d(&self.gamma_hat, &other.gamma_hat))
    }
}

/// Gaussian marginal `∝ exp(−L x²/2 + G x)` per user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalEstimate<T> {
    pub g: Array1<T>,
    /// Posterior precisions.
    pub l: Array1<T>,
    pub iteration: usize,
}

impl<T: Scalar> MarginalEstimate<T> {
    /// Posterior means `G/L`.
    pub fn x_hat(&self) -> Array1<T> {
        &self.g / &self.l
    }

    /// Posterior variances `1/L`.
    pub fn variances(&self) -> Array1<T> {
        self.l.mapv(|l| T::one() / l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord<T> {
    pub iter: usize,
    /// `(1/K) Σ (x̂ᵢ − xᵢ)²` against the transmitted symbols.
    pub mse: T,
    /// `‖x̂ − reference‖₂ / √K` when a reference was supplied.
    pub dist_to_reference: Option<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BpRunReport<T> {
    pub estimate: MarginalEstimate<T>,
    /// Update steps taken after initialization.
    pub iterations_used: usize,
    pub converged: bool,
    /// Max-norm change of the last update step (infinite if none was taken).
    pub last_change: T,
    pub history: Vec<IterationRecord<T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BpConfig<T> {
    pub tol: T,
    pub max_iters: usize,
    pub variance: VarianceUpdate,
}

impl<T: Scalar> BpConfig<T> {
    pub fn new(tol: T, max_iters: usize) -> Self {
        Self {
            tol,
            max_iters,
            variance: VarianceUpdate::Auto,
        }
    }

    /// Default tolerance with `40·⌈t*⌉ + 100` iterations, or 1000 when `t*`
    /// is undefined for `(α, σ)`. Finite systems contract more slowly than
    /// `e^{−1/t*}`, hence the margin.
    pub fn for_system(alpha: T, sigma: T) -> Self {
        let max_iters = match t_star(alpha, sigma) {
            Ok(ts) => 40 * ts.ceil().to_usize().unwrap_or(25) + 100,
            Err(_) => 1000,
        };
        Self::new(T::lit(DEFAULT_TOL), max_iters)
    }
}

fn scalar_path<T: Scalar>(instance: &SystemInstance<T>, mode: VarianceUpdate) -> bool {
    mode == VarianceUpdate::Auto && instance.signatures().is_binary()
}

fn check_finite<T: Scalar>(m: &EdgeMessages<T>) -> Result<()> {
    let all_finite = |a: &Array2<T>| match a.as_slice() {
        Some(s) => slice_finite(s),
        None => a.iter().all(|v| v.is_finite()),
    };
    if all_finite(&m.lambda) && all_finite(&m.gamma) && all_finite(&m.lambda_hat) && all_finite(&m.gamma_hat) {
        return Ok(());
    }
    let bad = |a: &Array2<T>| a.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix);
    let found = bad(&m.lambda)
        .or_else(|| bad(&m.gamma))
        .or_else(|| bad(&m.lambda_hat))
        .or_else(|| bad(&m.gamma_hat));
    match found {
        Some((user, chip)) => Err(Error::NumericalDivergence {
            user,
            chip,
            iteration: m.iteration,
        }),
        None => Ok(()),
    }
}

#[inline(always)]
fn mean_term<T: Scalar>(s: T, g: T, l: T, shared_inv: Option<T>) -> T {
    match shared_inv {
        Some(inv) => s * g * inv,
        None => s * g / l,
    }
}

/// Chip half-step: `(λ, γ) → (λ̂, γ̂)`. The exclusive sums run down each
/// chip's column.
fn chip_update<T: Scalar>(
    instance: &SystemInstance<T>,
    lambda: &Array2<T>,
    gamma: &Array2<T>,
    mode: VarianceUpdate,
) -> (Array2<T>, Array2<T>) {
    let sig = instance.signatures();
    let (k, n) = (sig.users(), sig.chips());
    let y = instance.received().as_standard_layout();
    let y = y.as_slice().expect("standard layout");
    let inv_n = T::one() / T::of_usize(n);
    let scale = sig.scale();
    let sigma2 = instance.noise_std() * instance.noise_std();
    let fast = scalar_path(instance, mode);

    let lambda = lambda.as_standard_layout();
    let gamma = gamma.as_standard_layout();
    let (s, lam, gam) = (contiguous(sig.by_user()), contiguous(&lambda), contiguous(&gamma));
    let inv = fast.then(|| T::one() / lam[0]);
    let rows = |i: usize| {
        let r = i * n..(i + 1) * n;
        (&s[r.clone()], &lam[r.clone()], &gam[r])
    };

    let mut mean_col = vec![T::zero(); n];
    let mut var_col = vec![T::zero(); n];
    for i in 0..k {
        let (s_r, l_r, g_r) = rows(i);
        for (((m, &s), &g), &l) in mean_col.iter_mut().zip(s_r).zip(g_r).zip(l_r) {
            *m = *m + mean_term(s, g, l, inv);
        }
        if !fast {
            for ((v, &s), &l) in var_col.iter_mut().zip(s_r).zip(l_r) {
                *v = *v + s * s / l;
            }
        }
    }

    let mut gamma_hat = Vec::with_capacity(k * n);
    let mut lambda_hat = Vec::with_capacity(if fast { 0 } else { k * n });
    for i in 0..k {
        let (s_r, l_r, g_r) = rows(i);
        gamma_hat.extend(
            s_r.iter()
                .zip(g_r)
                .zip(l_r)
                .zip(mean_col.iter().zip(y))
                .map(|(((&s, &g), &l), (&m, &ya))| ya - (m - mean_term(s, g, l, inv)) * scale),
        );
        if !fast {
            lambda_hat.extend(
                s_r.iter()
                    .zip(l_r)
                    .zip(&var_col)
                    .map(|((&s, &l), &v)| sigma2 + (v - s * s / l) * inv_n),
            );
        }
    }
    let lambda_hat = if fast {
        Array2::from_elem((k, n), chip_variance_step(lam[0], k, n, sigma2))
    } else {
        Array2::from_shape_vec((k, n), lambda_hat).expect("shape matches length")
    };
    let gamma_hat = Array2::from_shape_vec((k, n), gamma_hat).expect("shape matches length");
    opcount::add(2 * n * k);
    (lambda_hat, gamma_hat)
}

/// User half-step: `(λ̂, γ̂) → (λ, γ)`. The exclusive sums run along each
/// user's row.
fn user_update<T: Scalar>(
    instance: &SystemInstance<T>,
    lambda_hat: &Array2<T>,
    gamma_hat: &Array2<T>,
    mode: VarianceUpdate,
) -> (Array2<T>, Array2<T>) {
    let sig = instance.signatures();
    let (k, n) = (sig.users(), sig.chips());
    let inv_n = T::one() / T::of_usize(n);
    let scale = sig.scale();
    let fast = scalar_path(instance, mode);

    let lambda_hat = lambda_hat.as_standard_layout();
    let gamma_hat = gamma_hat.as_standard_layout();
    let (s, lam, gam) = (contiguous(sig.by_user()), contiguous(&lambda_hat), contiguous(&gamma_hat));
    let inv = fast.then(|| T::one() / lam[0]);

    let mut gamma = Vec::with_capacity(k * n);
    let mut lambda = Vec::with_capacity(if fast { 0 } else { k * n });
    for i in 0..k {
        let r = i * n..(i + 1) * n;
        let (s_r, l_r, g_r) = (&s[r.clone()], &lam[r.clone()], &gam[r]);
        let total: T = s_r
            .iter()
            .zip(g_r)
            .zip(l_r)
            .map(|((&s, &g), &l)| mean_term(s, g, l, inv))
            .sum();
        gamma.extend(
            s_r.iter()
                .zip(g_r)
                .zip(l_r)
                .map(|((&s, &g), &l)| (total - mean_term(s, g, l, inv)) * scale),
        );
        if !fast {
            let var_total: T = s_r.iter().zip(l_r).map(|(&s, &l)| s * s / l).sum();
            lambda.extend(
                s_r.iter()
                    .zip(l_r)
                    .map(|(&s, &l)| T::one() + (var_total - s * s / l) * inv_n),
            );
        }
    }
    let lambda = if fast {
        Array2::from_elem((k, n), user_variance_step(lam[0], n))
    } else {
        Array2::from_shape_vec((k, n), lambda).expect("shape matches length")
    };
    let gamma = Array2::from_shape_vec((k, n), gamma).expect("shape matches length");
    opcount::add(2 * n * k);
    (lambda, gamma)
}

fn contiguous<S: ndarray::Data>(a: &ndarray::ArrayBase<S, ndarray::Ix2>) -> &[S::Elem] {
    a.as_slice().expect("standard layout")
}

#[allow(clippy::eq_op, clippy::needless_range_loop)]
fn slice_finite<T: Scalar>(x: &[T]) -> bool {
    // v − v is 0 for finite v and NaN otherwise
    let mut lanes = [T::zero(); 8];
    let chunks = x.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for j in 0..8 {
            lanes[j] = lanes[j] + (c[j] - c[j]);
        }
    }
    lanes.iter().all(|v| *v == T::zero()) && rest.iter().all(|v| v.is_finite())
}

/// NaN-propagating maximum.
#[inline]
fn wider<T: Scalar>(m: T, v: T) -> T {
    if v > m || v.is_nan() {
        v
    } else {
        m
    }
}

fn max_abs_diff<T: Scalar>(x: &[T], y: &[T]) -> T {
    // independent lanes so the loop vectorizes
    let mut lanes = [T::zero(); 8];
    // a NaN anywhere makes its lane sum NaN
    let mut sums = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (p, q) in xc.zip(yc) {
        for j in 0..8 {
            let v = (p[j] - q[j]).abs();
            sums[j] = sums[j] + v;
            lanes[j] = if v > lanes[j] { v } else { lanes[j] };
        }
    }
    let mut m = lanes.iter().fold(T::zero(), |m, &v| wider(m, v));
    for (&p, &q) in xr.iter().zip(yr) {
        m = wider(m, (p - q).abs());
    }
    if sums.iter().any(|v| v.is_nan()) {
        T::nan()
    } else {
        m
    }
}

/// `λ ≡ 1`, `γ ≡ 0`, and the chip messages computed from them.
pub fn init_messages<T: Scalar>(instance: &SystemInstance<T>) -> EdgeMessages<T> {
    init_messages_with(instance, VarianceUpdate::Auto)
}

pub fn init_messages_with<T: Scalar>(
    instance: &SystemInstance<T>,
    mode: VarianceUpdate,
) -> EdgeMessages<T> {
    let shape = (instance.users(), instance.chips());
    let lambda = Array2::<T>::ones(shape);
    let gamma = Array2::<T>::zeros(shape);
    let (lambda_hat, gamma_hat) = chip_update(instance, &lambda, &gamma, mode);
    EdgeMessages {
        lambda,
        gamma,
        lambda_hat,
        gamma_hat,
        iteration: 0,
    }
}

fn check_dims<T: Scalar>(m: &EdgeMessages<T>, instance: &SystemInstance<T>) -> Result<()> {
    let (k, n) = (instance.users(), instance.chips());
    if m.lambda.dim() != (k, n)
        || m.gamma.dim() != (k, n)
        || m.lambda_hat.dim() != (k, n)
        || m.gamma_hat.dim() != (k, n)
    {
        return Err(Error::Dimension(format!(
            "messages do not match an instance with K={k}, N={n}"
        )));
    }
    Ok(())
}

/// One synchronous iteration `t → t+1`.
pub fn bp_iterate<T: Scalar>(
    messages: &EdgeMessages<T>,
    instance: &SystemInstance<T>,
) -> Result<EdgeMessages<T>> {
    bp_iterate_with(messages, instance, VarianceUpdate::Auto)
}

pub fn bp_iterate_with<T: Scalar>(
    messages: &EdgeMessages<T>,
    instance: &SystemInstance<T>,
    mode: VarianceUpdate,
) -> Result<EdgeMessages<T>> {
    check_dims(messages, instance)?;
    let (lambda, gamma) = user_update(instance, &messages.lambda_hat, &messages.gamma_hat, mode);
    let (lambda_hat, gamma_hat) = chip_update(instance, &lambda, &gamma, mode);
    let next = EdgeMessages {
        lambda,
        gamma,
        lambda_hat,
        gamma_hat,
        iteration: messages.iteration + 1,
    };
    check_finite(&next)?;
    Ok(next)
}

/// `Gᵢ = (1/√N) Σ_b s_{ib} γ̂_{b→i}/λ̂_{b→i}`, `Lᵢ = 1 + (1/N) Σ_b s²_{ib}/λ̂_{b→i}`,
/// summing over every chip.
pub fn extract_marginals<T: Scalar>(
    messages: &EdgeMessages<T>,
    instance: &SystemInstance<T>,
) -> MarginalEstimate<T> {
    let sig = instance.signatures();
    let (k, n) = (sig.users(), sig.chips());
    let inv_n = T::one() / T::of_usize(n);
    let scale = sig.scale();
    let lambda_hat = messages.lambda_hat.as_standard_layout();
    let gamma_hat = messages.gamma_hat.as_standard_layout();
    let (s, lam, gam) = (contiguous(sig.by_user()), contiguous(&lambda_hat), contiguous(&gamma_hat));
    let mut g = Array1::<T>::zeros(k);
    let mut l = Array1::<T>::zeros(k);
    for i in 0..k {
        let r = i * n..(i + 1) * n;
        let (s_r, l_r, g_r) = (&s[r.clone()], &lam[r.clone()], &gam[r]);
        let gs: T = s_r.iter().zip(g_r).zip(l_r).map(|((&s, &g), &l)| s * g / l).sum();
        let ls: T = s_r.iter().zip(l_r).map(|(&s, &l)| s * s / l).sum();
        g[i] = gs * scale;
        l[i] = T::one() + ls * inv_n;
    }
    opcount::add(n * k);
    MarginalEstimate {
        g,
        l,
        iteration: messages.iteration + 1,
    }
}

pub(crate) fn record<T: Scalar>(
    instance: &SystemInstance<T>,
    iter: usize,
    x_hat: ArrayView1<'_, T>,
    reference: Option<&Array1<T>>,
) -> IterationRecord<T> {
    let k = T::of_usize(instance.users());
    let dist_to_reference = reference.map(|r| {
        let sq: T = r
            .iter()
            .zip(x_hat.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        (sq / k).sqrt()
    });
    IterationRecord {
        iter,
        mse: instance.mse(x_hat),
        dist_to_reference,
    }
}

/// Runs BP until the max-norm message change drops to `config.tol` or
/// `config.max_iters` update steps have been taken.
///
/// History entry `t` (starting at 1) is the estimate after `t − 1` update
/// steps, so the first entry is the matched-filter-like initial estimate.
pub fn run_bp<T: Scalar>(
    instance: &SystemInstance<T>,
    config: &BpConfig<T>,
    reference: Option<&Array1<T>>,
) -> Result<BpRunReport<T>> {
    if !(config.tol > T::zero()) {
        return Err(Error::Parameter(format!("tol must be > 0, got {}", config.tol)));
    }
    if let Some(r) = reference {
        if r.len() != instance.users() {
            return Err(Error::Dimension(format!(
                "reference has {} entries for {} users",
                r.len(),
                instance.users()
            )));
        }
    }
    let mut messages = init_messages_with(instance, config.variance);
    check_finite(&messages)?;
    let mut estimate = extract_marginals(&messages, instance);
    let mut history = vec![record(instance, estimate.iteration, estimate.x_hat().view(), reference)];
    let mut converged = false;
    let mut last_change = T::infinity();
    let mut used = 0;
    while used < config.max_iters {
        let next = bp_iterate_with(&messages, instance, config.variance)?;
        last_change = next.max_change(&messages);
        messages = next;
        used += 1;
        estimate = extract_marginals(&messages, instance);
        history.push(record(instance, estimate.iteration, estimate.x_hat().view(), reference));
        if last_change <= config.tol {
            converged = true;
            break;
        }
    }
    Ok(BpRunReport {
        estimate,
        iterations_used: used,
        converged,
        last_change,
        history,
    })
}

/// Direct evaluation of every exclusive sum, `O(N²K + NK²)` per iteration.
#[cfg(feature = "naive-reference")]
pub mod naive {
    use super::*;

    pub fn bp_iterate_naive<T: Scalar>(
        messages: &EdgeMessages<T>,
        instance: &SystemInstance<T>,
    ) -> Result<EdgeMessages<T>> {
        check_dims(messages, instance)?;
        let sig = instance.signatures();
        let (k, n) = (sig.users(), sig.chips());
        let y = instance.received();
        let inv_n = T::one() / T::of_usize(n);
        let scale = sig.scale();
        let sigma2 = instance.noise_std() * instance.noise_std();

        let mut lambda = Array2::<T>::zeros((k, n));
        let mut gamma = Array2::<T>::zeros((k, n));
        for i in 0..k {
            for a in 0..n {
                let mut vs = T::zero();
                let mut ms = T::zero();
                for b in (0..n).filter(|&b| b != a) {
                    let s = sig.get(i, b);
                    let lh = messages.lambda_hat[[i, b]];
                    vs = vs + s * s / lh;
                    ms = ms + s * messages.gamma_hat[[i, b]] / lh;
                }
                lambda[[i, a]] = T::one() + vs * inv_n;
                gamma[[i, a]] = ms * scale;
                opcount::add(n);
            }
        }
        let mut lambda_hat = Array2::<T>::zeros((k, n));
        let mut gamma_hat = Array2::<T>::zeros((k, n));
        for a in 0..n {
            for i in 0..k {
                let mut vs = T::zero();
                let mut ms = T::zero();
                for kk in (0..k).filter(|&kk| kk != i) {
                    let s = sig.get(kk, a);
                    let l = lambda[[kk, a]];
                    vs = vs + s * s / l;
                    ms = ms + s * gamma[[kk, a]] / l;
                }
                lambda_hat[[i, a]] = sigma2 + vs * inv_n;
                gamma_hat[[i, a]] = y[a] - ms * scale;
                opcount::add(k);
            }
        }
        let next = EdgeMessages {
            lambda,
            gamma,
            lambda_hat,
            gamma_hat,
            iteration: messages.iteration + 1,
        };
        check_finite(&next)?;
        Ok(next)
    }

    /// Initial messages with the chip half-step evaluated directly.
    pub fn init_messages_naive<T: Scalar>(instance: &SystemInstance<T>) -> EdgeMessages<T> {
        let sig = instance.signatures();
        let (k, n) = (sig.users(), sig.chips());
        let y = instance.received();
        let sigma2 = instance.noise_std() * instance.noise_std();
        let inv_n = T::one() / T::of_usize(n);
        let mut lambda_hat = Array2::<T>::zeros((k, n));
        let gamma_hat = Array2::from_shape_fn((k, n), |(_, a)| y[a]);
        for a in 0..n {
            for i in 0..k {
                let vs: T = (0..k)
                    .filter(|&kk| kk != i)
                    .map(|kk| sig.get(kk, a) * sig.get(kk, a))
                    .sum();
                lambda_hat[[i, a]] = sigma2 + vs * inv_n;
            }
        }
        EdgeMessages {
            lambda: Array2::ones((k, n)),
            gamma: Array2::zeros((k, n)),
            lambda_hat,
            gamma_hat,
            iteration: 0,
        }
    }
}
