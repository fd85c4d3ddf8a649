//! Random spread-spectrum system instances.
//!
//! Signatures are stored unscaled (entries `±1` for the binary ensemble); the
//! `1/√N` column normalization is applied explicitly wherever a signature is
//! used. An instance keeps its noise draw, so the received vector can always
//! be re-derived from the stored parts.

use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::{Bernoulli, Distribution};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureDistribution {
    /// `±1` with equal probability.
    #[default]
    Binary,
    /// Zero mean, unit variance Gaussian chips.
    StandardGaussian,
}

/// `N × K` chip signatures; entry `[a, i]` is chip `a` of user `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureMatrix<T> {
    entries: Array2<T>,
    // K × N copy so per-user loops read contiguously
    by_user: Array2<T>,
    distribution: SignatureDistribution,
}

impl<T: Scalar> SignatureMatrix<T> {
    /// Wraps an explicit `N × K` matrix. Binary matrices are recognized by
    /// content, so hand-built `±1` matrices get the binary-only fast paths.
    pub fn from_entries(entries: Array2<T>) -> Result<Self> {
        let (n, k) = entries.dim();
        if n == 0 || k == 0 {
            return Err(Error::Dimension(format!("signature matrix is {n}x{k}")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite signature entry".into()));
        }
        let binary = entries
            .iter()
            .all(|&v| v == T::one() || v == -T::one());
        let distribution = if binary {
            SignatureDistribution::Binary
        } else {
            SignatureDistribution::StandardGaussian
        };
        Ok(Self::assemble(entries, distribution))
    }

    fn assemble(entries: Array2<T>, distribution: SignatureDistribution) -> Self {
        let by_user = entries.t().as_standard_layout().into_owned();
        Self {
            entries,
            by_user,
            distribution,
        }
    }

    /// Builds from per-user columns, `columns[i][a] = s_{ia}`.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("ragged signature columns".into()));
        }
        let entries = Array2::from_shape_fn((n, k), |(a, i)| columns[i][a]);
        Self::from_entries(entries)
    }

    pub fn chips(&self) -> usize {
        self.entries.nrows()
    }

    pub fn users(&self) -> usize {
        self.entries.ncols()
    }

    /// `K / N`.
    pub fn alpha(&self) -> T {
        T::of_usize(self.users()) / T::of_usize(self.chips())
    }

    /// `s_{ia}`, unscaled.
    #[inline]
    pub fn get(&self, user: usize, chip: usize) -> T {
        self.entries[[chip, user]]
    }

    pub fn entries(&self) -> &Array2<T> {
        &self.entries
    }

    /// `Sᵀ` in `K × N` standard layout.
    pub fn by_user(&self) -> &Array2<T> {
        &self.by_user
    }

    pub fn distribution(&self) -> SignatureDistribution {
        self.distribution
    }

    pub fn is_binary(&self) -> bool {
        self.distribution == SignatureDistribution::Binary
    }

    /// `1/√N`.
    pub fn scale(&self) -> T {
        T::one() / T::of_usize(self.chips()).sqrt()
    }

    /// `(1/√N) S v` for a length-`K` vector.
    pub fn spread(&self, v: ArrayView1<'_, T>) -> Array1<T> {
        self.entries.dot(&v) * self.scale()
    }

    /// `(1/√N) Sᵀ u` for a length-`N` vector.
    pub fn correlate(&self, u: ArrayView1<'_, T>) -> Array1<T> {
        self.entries.t().dot(&u) * self.scale()
    }
}

pub fn generate_signatures<T: Scalar>(
    users: usize,
    chips: usize,
    dist: SignatureDistribution,
    seed: u64,
) -> Result<SignatureMatrix<T>> {
    if users == 0 || chips == 0 {
        return Err(Error::Dimension(format!(
            "need at least one user and one chip, got K={users}, N={chips}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Signatures);
    let entries = match dist {
        SignatureDistribution::Binary => {
            let coin = Bernoulli::new(0.5).expect("valid probability");
            Array2::from_shape_simple_fn((chips, users), || {
                if coin.sample(&mut rng) {
                    T::one()
                } else {
                    -T::one()
                }
            })
        }
        SignatureDistribution::StandardGaussian => Array2::from_shape_simple_fn((chips, users), || {
            T::lit(StandardNormal.sample(&mut rng))
        }),
    };
    Ok(SignatureMatrix::assemble(entries, dist))
}

/// One realization of `y = (1/√N) S x + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance<T> {
    signatures: SignatureMatrix<T>,
    symbols: Array1<T>,
    noise: Array1<T>,
    noise_std: T,
    received: Array1<T>,
    seed: u64,
}

impl<T: Scalar> SystemInstance<T> {
    /// Assembles the received vector from its parts.
    pub fn from_parts(
        signatures: SignatureMatrix<T>,
        symbols: Array1<T>,
        noise: Array1<T>,
        noise_std: T,
        seed: u64,
    ) -> Result<Self> {
        if !(noise_std >= T::zero()) {
            return Err(Error::Parameter(format!(
                "noise std must be >= 0, got {noise_std}"
            )));
        }
        if symbols.len() != signatures.users() {
            return Err(Error::Dimension(format!(
                "{} symbols for {} users",
                symbols.len(),
                signatures.users()
            )));
        }
        if noise.len() != signatures.chips() {
            return Err(Error::Dimension(format!(
                "{} noise samples for {} chips",
                noise.len(),
                signatures.chips()
            )));
        }
        let received = signatures.spread(symbols.view()) + &noise;
        Ok(Self {
            signatures,
            symbols,
            noise,
            noise_std,
            received,
            seed,
        })
    }

    pub fn signatures(&self) -> &SignatureMatrix<T> {
        &self.signatures
    }

    pub fn symbols(&self) -> &Array1<T> {
        &self.symbols
    }

    pub fn noise(&self) -> &Array1<T> {
        &self.noise
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }

    pub fn received(&self) -> &Array1<T> {
        &self.received
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn users(&self) -> usize {
        self.signatures.users()
    }

    pub fn chips(&self) -> usize {
        self.signatures.chips()
    }

    pub fn alpha(&self) -> T {
        self.signatures.alpha()
    }

    /// `‖y − (1/√N) S x − w‖_∞`.
    pub fn reconstruction_residual(&self) -> T {
        let clean = self.signatures.spread(self.symbols.view());
        (&self.received - &clean - &self.noise)
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Per-user mean square error of an estimate against the true symbols.
    pub fn mse(&self, estimate: ArrayView1<'_, T>) -> T {
        let k = T::of_usize(self.users());
        self.symbols
            .iter()
            .zip(estimate.iter())
            .map(|(&x, &e)| (e - x) * (e - x))
            .sum::<T>()
            / k
    }
}

pub fn generate_instance<T: Scalar>(
    users: usize,
    chips: usize,
    dist: SignatureDistribution,
    sigma: T,
    seed: u64,
) -> Result<SystemInstance<T>> {
    if !(sigma >= T::zero()) {
        return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let signatures = generate_signatures(users, chips, dist, seed)?;
    let mut sym_rng = stream_rng(seed, Stream::Symbols);
    let symbols = Array1::from_shape_simple_fn(users, || T::lit(StandardNormal.sample(&mut sym_rng)));
    let mut noise_rng = stream_rng(seed, Stream::Noise);
    let noise = Array1::from_shape_simple_fn(chips, || {
        sigma * T::lit(StandardNormal.sample(&mut noise_rng))
    });
    SystemInstance::from_parts(signatures, symbols, noise, sigma, seed)
}

/// Matched-filter statistic `(1/√N) Sᵀ y`.
pub fn matched_filter<T: Scalar>(instance: &SystemInstance<T>) -> Array1<T> {
    instance.signatures.correlate(instance.received.view())
}

/// JSON form of an instance. Signatures are row-major `N × K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct InstanceRecord {
    pub K: usize,
    pub N: usize,
    pub sigma: f64,
    pub seed: u64,
    pub signatures: Vec<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

impl<T: Scalar> SystemInstance<T> {
    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            K: self.users(),
            N: self.chips(),
            sigma: self.noise_std.as_f64(),
            seed: self.seed,
            signatures: self.signatures.entries.iter().map(|v| v.as_f64()).collect(),
            x: self.symbols.iter().map(|v| v.as_f64()).collect(),
            w: self.noise.iter().map(|v| v.as_f64()).collect(),
            y: self.received.iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// Rebuilds an instance and checks the stored `y` against the re-assembled one.
    pub fn from_record(rec: &InstanceRecord) -> Result<Self> {
        if rec.signatures.len() != rec.N * rec.K {
            return Err(Error::Dimension(format!(
                "{} signature entries for N={} K={}",
                rec.signatures.len(),
                rec.N,
                rec.K
            )));
        }
        let entries = Array2::from_shape_vec(
            (rec.N, rec.K),
            rec.signatures.iter().map(|&v| T::lit(v)).collect(),
        )
        .map_err(|e| Error::Dimension(e.to_string()))?;
        let signatures = SignatureMatrix::from_entries(entries)?;
        let to_vec = |v: &[f64]| Array1::from_iter(v.iter().map(|&x| T::lit(x)));
        let inst = Self::from_parts(
            signatures,
            to_vec(&rec.x),
            to_vec(&rec.w),
            T::lit(rec.sigma),
            rec.seed,
        )?;
        if rec.y.len() != inst.chips() {
            return Err(Error::Dimension(format!("{} received samples", rec.y.len())));
        }
        let scale = rec.y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 64.0 * T::epsilon().as_f64() * scale;
        for (a, (&stored, got)) in rec.y.iter().zip(inst.received.iter()).enumerate() {
            if (stored - got.as_f64()).abs() > tol {
                return Err(Error::Inconsistent(format!(
                    "stored y[{a}]={stored} does not match S x/sqrt(N) + w"
                )));
            }
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: InstanceRecord = serde_json::from_str(s)?;
        Self::from_record(&rec)
    }
}
