use ndarray::{Array1, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::fixedpoint::finite_fixed_point;
use crate::rng::{stream_rng, Stream};
use crate::sysmodel::{generate_signatures, SignatureDistribution, SignatureMatrix};
use crate::{Error, Result, Scalar};

/// Largest `NK` for which [`omega_power_trace`] runs.
pub const MAX_TRACE_DIM: usize = 1024;
pub const MAX_TRACE_POWER: usize = 4;

/// Matrix-free view of `Ω` over a signature matrix.
#[derive(Debug, Clone, Copy)]
pub struct OmegaOperator<'a, T> {
    signatures: &'a SignatureMatrix<T>,
}

impl<'a, T: Scalar> OmegaOperator<'a, T> {
    pub fn new(signatures: &'a SignatureMatrix<T>) -> Self {
        Self { signatures }
    }

    pub fn dim(&self) -> usize {
        self.signatures.users() * self.signatures.chips()
    }

    /// Edge index of `(user, chip)`.
    #[inline]
    pub fn index(&self, user: usize, chip: usize) -> usize {
        user * self.signatures.chips() + chip
    }

    /// `(Ωv)_{ia} = Σ_{b≠a} s_{ib} (u_b − s_{ib} v_{ib})` with
    /// `u_b = Σ_k s_{kb} v_{kb}`, which removes the `k = i` and `b = a`
    /// terms of the double sum. `O(NK)`.
    pub fn apply(&self, v: ArrayView1<'_, T>) -> Result<Array1<T>> {
        let sig = self.signatures;
        let (k, n) = (sig.users(), sig.chips());
        if v.len() != k * n {
            return Err(Error::Dimension(format!(
                "Omega acts on vectors of length {}, got {}",
                k * n,
                v.len()
            )));
        }
        let mut chip_sum = vec![T::zero(); n];
        for i in 0..k {
            for b in 0..n {
                chip_sum[b] = chip_sum[b] + sig.get(i, b) * v[i * n + b];
            }
        }
        let mut out = Array1::<T>::zeros(k * n);
        let mut w = vec![T::zero(); n];
        for i in 0..k {
            let mut row = T::zero();
            for b in 0..n {
                let s = sig.get(i, b);
                w[b] = s * (chip_sum[b] - s * v[i * n + b]);
                row = row + w[b];
            }
            for a in 0..n {
                out[i * n + a] = row - w[a];
            }
        }
        Ok(out)
    }
}

/// Power-iteration estimate of `|ζ_max|`, the spectral radius of `Ω`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GrowthEstimate {
    /// Geometric-mean growth `‖Ω v‖/‖v‖` over the second half of the run.
    pub raw: f64,
    /// `raw / (N λ^∞ λ̂^∞)`; values below 1 certify the contraction of the
    /// BP mean-message dynamics.
    pub normalized: f64,
    /// The third-quarter and fourth-quarter growth rates agree to 5%.
    pub confident: bool,
}

/// Estimates `|ζ_max|` from `iters` applications of `Ω` to a random start
/// vector drawn from the probe stream of `seed`. The normalization uses the
/// finite-size variance fixed point at noise level `sigma`.
pub fn spectral_growth_rate<T: Scalar>(
    signatures: &SignatureMatrix<T>,
    sigma: T,
    iters: usize,
    seed: u64,
) -> Result<GrowthEstimate> {
    if iters < 10 {
        return Err(Error::Parameter(format!("need at least 10 iterations, got {iters}")));
    }
    let op = OmegaOperator::new(signatures);
    let mut rng = stream_rng(seed, Stream::Probe);
    let mut v = Array1::from_shape_simple_fn(op.dim(), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    let norm = |x: &Array1<T>| x.iter().map(|&e| e * e).sum::<T>().sqrt();
    let n0 = norm(&v);
    v.mapv_inplace(|e| e / n0);

    let mut log_ratios = Vec::with_capacity(iters);
    for _ in 0..iters {
        let next = op.apply(v.view())?;
        let r = norm(&next);
        if r == T::zero() {
            // nilpotent (e.g. a single user): zero growth
            return Ok(GrowthEstimate {
                raw: 0.0,
                normalized: 0.0,
                confident: true,
            });
        }
        log_ratios.push(r.as_f64().ln());
        v = next.mapv(|e| e / r);
    }
    let mean = |s: &[f64]| (s.iter().sum::<f64>() / s.len() as f64).exp();
    let half = iters / 2;
    let quarter = iters / 4;
    let raw = mean(&log_ratios[half..]);
    let late = mean(&log_ratios[iters - quarter..]);
    let mid = mean(&log_ratios[half..iters - quarter]);
    let confident = ((late - mid) / late).abs() <= 0.05;

    let (lam, lam_hat) = finite_fixed_point(signatures.users(), signatures.chips(), sigma)?;
    let denom = signatures.chips() as f64 * lam.as_f64() * lam_hat.as_f64();
    Ok(GrowthEstimate {
        raw,
        normalized: raw / denom,
        confident,
    })
}

/// `Tr{(Ωᵗ)ᵀ Ωᵗ} = Σ_j ‖Ωᵗ e_j‖²`, one basis vector at a time.
pub fn omega_power_trace<T: Scalar>(signatures: &SignatureMatrix<T>, t: usize) -> Result<f64> {
    let op = OmegaOperator::new(signatures);
    let dim = op.dim();
    if dim > MAX_TRACE_DIM {
        return Err(Error::ResourceLimit(format!(
            "trace needs NK <= {MAX_TRACE_DIM}, got {dim}"
        )));
    }
    if t > MAX_TRACE_POWER {
        return Err(Error::ResourceLimit(format!(
            "trace power limited to {MAX_TRACE_POWER}, got {t}"
        )));
    }
    let mut total = 0.0;
    let mut e = Array1::<T>::zeros(dim);
    for j in 0..dim {
        e.fill(T::zero());
        e[j] = T::one();
        let mut col = e.clone();
        for _ in 0..t {
            col = op.apply(col.view())?;
        }
        total += col.iter().map(|&c| c.as_f64() * c.as_f64()).sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStats {
    pub users: usize,
    pub chips: usize,
    pub power: usize,
    /// Per-trial `Tr{(Ωᵗ)ᵀ Ωᵗ}`.
    pub traces: Vec<f64>,
    /// `N^{2t+2} α^{t+1}`.
    pub reference: f64,
    /// Mean of `trace / reference` over trials.
    pub ratio_mean: f64,
    pub ratio_stderr: f64,
}

/// Monte-Carlo estimate of `E Tr{(Ωᵗ)ᵀ Ωᵗ} / (N^{2t+2} α^{t+1})` over
/// binary signatures drawn from seeds `seed, seed+1, …`.
pub fn trace_check(users: usize, chips: usize, t: usize, trials: usize, seed: u64) -> Result<TraceStats> {
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    if users * chips > MAX_TRACE_DIM || t > MAX_TRACE_POWER {
        return Err(Error::ResourceLimit(format!(
            "trace check limited to NK <= {MAX_TRACE_DIM} and t <= {MAX_TRACE_POWER}, got NK={} t={t}",
            users * chips
        )));
    }
    let traces = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let sig = generate_signatures::<f64>(users, chips, SignatureDistribution::Binary, seed.wrapping_add(trial))?;
            omega_power_trace(&sig, t)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = chips as f64;
    let alpha = users as f64 / n;
    let reference = n.powi(2 * t as i32 + 2) * alpha.powi(t as i32 + 1);
    let ratios: Vec<f64> = traces.iter().map(|tr| tr / reference).collect();
    let m = ratios.len() as f64;
    let ratio_mean = ratios.iter().sum::<f64>() / m;
    let ratio_stderr = if ratios.len() > 1 {
        let var = ratios.iter().map(|r| (r - ratio_mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        f64::NAN
    };
    Ok(TraceStats {
        users,
        chips,
        power: t,
        traces,
        reference,
        ratio_mean,
        ratio_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Ω built entry by entry from its definition.
    fn dense_omega(sig: &SignatureMatrix<f64>) -> Array2<f64> {
        let (k, n) = (sig.users(), sig.chips());
        Array2::from_shape_fn((k * n, k * n), |(row, col)| {
            let (i, a) = (row / n, row % n);
            let (kk, b) = (col / n, col % n);
            if i == kk || a == b {
                0.0
            } else {
                sig.get(i, b) * sig.get(kk, b)
            }
        })
    }

    #[test]
    fn matches_dense_definition_on_basis() {
        for (k, n, seed) in [(2, 2, 1u64), (3, 5, 2), (4, 4, 3)] {
            let sig = generate_signatures::<f64>(k, n, SignatureDistribution::Binary, seed).unwrap();
            let dense = dense_omega(&sig);
            let op = OmegaOperator::new(&sig);
            for j in 0..k * n {
                let mut e = Array1::zeros(k * n);
                e[j] = 1.0;
                let got = op.apply(e.view()).unwrap();
                assert_eq!(got, dense.column(j).to_owned());
            }
        }
    }

    #[test]
    fn zero_vector_and_single_user() {
        let sig = generate_signatures::<f64>(3, 4, SignatureDistribution::Binary, 1).unwrap();
        let op = OmegaOperator::new(&sig);
        assert!(op.apply(Array1::zeros(12).view()).unwrap().iter().all(|&v| v == 0.0));

        let one = generate_signatures::<f64>(1, 6, SignatureDistribution::Binary, 2).unwrap();
        let v = Array1::from_iter((0..6).map(|x| x as f64 - 2.5));
        assert!(OmegaOperator::new(&one).apply(v.view()).unwrap().iter().all(|&x| x == 0.0));
        let g = spectral_growth_rate(&one, 0.2, 20, 1).unwrap();
        assert_eq!(g.raw, 0.0);
        assert_eq!(omega_power_trace(&one, 2).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let sig = generate_signatures::<f64>(2, 3, SignatureDistribution::Binary, 1).unwrap();
        assert!(matches!(
            OmegaOperator::new(&sig).apply(Array1::zeros(5).view()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn first_power_trace_counts_nonzeros() {
        for (k, n, seed) in [(3usize, 4usize, 5u64), (5, 7, 6)] {
            let sig = generate_signatures::<f64>(k, n, SignatureDistribution::Binary, seed).unwrap();
            let want = (n * k * (n - 1) * (k - 1)) as f64;
            assert_eq!(omega_power_trace(&sig, 1).unwrap(), want);
        }
    }

    #[test]
    fn limits_enforced() {
        assert!(matches!(trace_check(40, 40, 1, 1, 0), Err(Error::ResourceLimit(_))));
        assert!(matches!(trace_check(4, 4, 5, 1, 0), Err(Error::ResourceLimit(_))));
        let sig = generate_signatures::<f64>(4, 4, SignatureDistribution::Binary, 1).unwrap();
        assert!(spectral_growth_rate(&sig, 0.2, 5, 1).is_err());
    }

    #[test]
    fn growth_rate_matches_dense_power_iteration() {
        let sig = generate_signatures::<f64>(4, 6, SignatureDistribution::Binary, 4).unwrap();
        let dense = dense_omega(&sig);
        // dense power iteration for the same start vector
        let mut rng = stream_rng(9, Stream::Probe);
        let mut v: Array1<f64> = Array1::from_shape_simple_fn(24, || StandardNormal.sample(&mut rng));
        let n0 = v.dot(&v).sqrt();
        v /= n0;
        let mut logs = Vec::new();
        for _ in 0..40 {
            let next = dense.dot(&v);
            let r = next.dot(&next).sqrt();
            logs.push(r.ln());
            v = next / r;
        }
        let want = (logs[20..].iter().sum::<f64>() / 20.0).exp();
        let got = spectral_growth_rate(&sig, 0.3, 40, 9).unwrap();
        assert!((got.raw - want).abs() < 1e-9 * want);
    }
}
