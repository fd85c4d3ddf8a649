//! Seeded detector comparisons.
//!
//! Trial `j` of a sweep uses seed `base_seed + j` for every noise level, so
//! all sigmas of a trial share signatures and symbols and the noise draw is
//! the same standard-normal vector scaled by `σ`. Trials run on the rayon
//! pool; rows are sorted by `(trial, sigma, detector, iter)` before they are
//! returned, so output does not depend on scheduling.
//!
//! The matched-filter detector reports `(1/√N) Sᵀy / (1 + σ² + (K−1)/N)`,
//! the per-user linear MMSE scaling of the matched statistic.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx_bp::run_abp;
use crate::bp::{run_bp, BpConfig, BpRunReport};
use crate::fixedpoint::{t_star, tse_hanly_lambda};
use crate::spectral::{mmse_solve, PosteriorOracle};
use crate::sysmodel::{generate_instance, matched_filter, SignatureDistribution, SystemInstance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Matched,
    Mmse,
    Bp,
    Abp,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Matched => "matched",
            Detector::Mmse => "mmse",
            Detector::Bp => "bp",
            Detector::Abp => "abp",
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Detector::Bp | Detector::Abp)
    }
}

impl std::str::FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(Detector::Matched),
            "mmse" => Ok(Detector::Mmse),
            "bp" => Ok(Detector::Bp),
            "abp" => Ok(Detector::Abp),
            other => Err(Error::Parameter(format!("unknown detector {other:?}"))),
        }
    }
}

fn default_tol() -> f64 {
    crate::bp::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `K`; may be omitted when `alpha` is given.
    #[serde(default, alias = "K")]
    pub users: Option<usize>,
    /// `N`
    #[serde(alias = "N")]
    pub chips: usize,
    /// Load `K/N`, used when `users` is absent (`K = round(αN)`).
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(rename = "sigma_list", alias = "sigmas")]
    pub sigmas: Vec<f64>,
    pub detectors: Vec<Detector>,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Iteration cap for BP/ABP; defaults per `(α, σ)` from `t*`.
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub distribution: SignatureDistribution,
}

impl ExperimentConfig {
    pub fn new(users: usize, chips: usize, sigmas: Vec<f64>, detectors: Vec<Detector>, trials: usize) -> Self {
        Self {
            users: Some(users),
            chips,
            alpha: None,
            sigmas,
            detectors,
            trials,
            base_seed: 0,
            max_iters: None,
            tol: default_tol(),
            output_path: None,
            distribution: SignatureDistribution::Binary,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolved_users(&self) -> Result<usize> {
        match (self.users, self.alpha) {
            (Some(k), _) => Ok(k),
            (None, Some(a)) if a > 0.0 => Ok((a * self.chips as f64).round() as usize),
            _ => Err(Error::Parameter("config needs users or a positive alpha".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.resolved_users()?;
        if k == 0 || self.chips == 0 {
            return Err(Error::Dimension(format!("K={k}, N={}", self.chips)));
        }
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be >= 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::Parameter("no detectors selected".into()));
        }
        if self.sigmas.is_empty() {
            return Err(Error::Parameter("no noise levels given".into()));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(Error::Parameter(format!("invalid sigma {s}")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn seed_for_trial(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }
}

/// One output line. Direct detectors produce a single row with `iter = 0`;
/// iterative detectors produce one row per recorded iteration, starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trial: usize,
    pub detector: Detector,
    pub sigma: f64,
    pub iter: usize,
    pub mse: Option<f64>,
    pub dist_to_mmse: Option<f64>,
    pub converged: bool,
    /// Seconds spent in the detector for this trial.
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub users: usize,
    pub chips: usize,
    pub sigmas: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn error_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn alpha(&self) -> f64 {
        self.users as f64 / self.chips as f64
    }

    /// Per-trial rows of one detector at one noise level, in iteration order.
    pub fn trajectories(&self, detector: Detector, sigma: f64) -> Vec<Vec<&SweepRow>> {
        let mut by_trial: std::collections::BTreeMap<usize, Vec<&SweepRow>> = Default::default();
        for r in self
            .rows
            .iter()
            .filter(|r| r.detector == detector && r.sigma == sigma)
        {
            by_trial.entry(r.trial).or_default().push(r);
        }
        by_trial.into_values().collect()
    }

    /// Median over trials of `mse` at each iteration; a trial that stopped
    /// early keeps contributing its final value. Error trials are skipped, and
    /// so are non-converged ones when `converged_only` is set.
    pub fn median_mse_curve(&self, detector: Detector, sigma: f64, converged_only: bool) -> Vec<f64> {
        let curves: Vec<Vec<f64>> = self
            .trajectories(detector, sigma)
            .into_iter()
            .filter(|rows| rows.iter().all(|r| r.error.is_none()))
            .filter(|rows| !converged_only || rows.iter().all(|r| r.converged))
            .map(|rows| rows.iter().filter_map(|r| r.mse).collect::<Vec<_>>())
            .filter(|c| !c.is_empty())
            .collect();
        let len = curves.iter().map(Vec::len).max().unwrap_or(0);
        (0..len)
            .map(|t| {
                let vals: Vec<f64> = curves.iter().map(|c| c[t.min(c.len() - 1)]).collect();
                median(&vals)
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    version: &'static str,
    users: usize,
    chips: usize,
    rows: usize,
    error_rows: usize,
}

/// Path of the JSON metadata written next to a CSV file.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV and its JSON sidecar (full config plus crate version).
pub fn write_outputs(result: &SweepResult, config: &ExperimentConfig, csv_path: &Path) -> Result<PathBuf> {
    result.write_csv(csv_path)?;
    let side = sidecar_path(csv_path);
    let meta = Sidecar {
        config,
        version: env!("CARGO_PKG_VERSION"),
        users: result.users,
        chips: result.chips,
        rows: result.rows.len(),
        error_rows: result.error_rows(),
    };
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?)?;
    Ok(side)
}

fn rms_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let k = a.len() as f64;
    (a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / k).sqrt()
}

fn error_row(trial: usize, detector: Detector, sigma: f64, err: &Error) -> SweepRow {
    SweepRow {
        trial,
        detector,
        sigma,
        iter: 0,
        mse: None,
        dist_to_mmse: None,
        converged: false,
        wall_time: 0.0,
        error: Some(err.to_string()),
    }
}

fn iterative_rows(
    trial: usize,
    detector: Detector,
    sigma: f64,
    report: &BpRunReport<f64>,
    wall_time: f64,
) -> Vec<SweepRow> {
    report
        .history
        .iter()
        .map(|h| SweepRow {
            trial,
            detector,
            sigma,
            iter: h.iter,
            mse: Some(h.mse),
            dist_to_mmse: h.dist_to_reference,
            converged: report.converged,
            wall_time,
            error: None,
        })
        .collect()
}

fn run_detector(
    detector: Detector,
    trial: usize,
    sigma: f64,
    instance: &SystemInstance<f64>,
    oracle: &PosteriorOracle<f64>,
    config: &ExperimentConfig,
) -> Vec<SweepRow> {
    let start = Instant::now();
    let k = instance.users();
    let n = instance.chips();
    let direct = |estimate: Array1<f64>, dist: f64| {
        vec![SweepRow {
            trial,
            detector,
            sigma,
            iter: 0,
            mse: Some(instance.mse(estimate.view())),
            dist_to_mmse: Some(dist),
            converged: true,
            wall_time: start.elapsed().as_secs_f64(),
            error: None,
        }]
    };
    match detector {
        Detector::Mmse => direct(oracle.mean.clone(), 0.0),
        Detector::Matched => {
            let scale = 1.0 + sigma * sigma + (k as f64 - 1.0) / n as f64;
            let est = matched_filter(instance) / scale;
            let dist = rms_distance(&est, &oracle.mean);
            direct(est, dist)
        }
        Detector::Bp | Detector::Abp => {
            let alpha = instance.alpha();
            let mut bp_cfg = BpConfig::for_system(alpha, sigma);
            bp_cfg.tol = config.tol;
            if let Some(m) = config.max_iters {
                bp_cfg.max_iters = m;
            }
            let report = if detector == Detector::Bp {
                run_bp(instance, &bp_cfg, Some(&oracle.mean))
            } else {
                run_abp(instance, bp_cfg.tol, bp_cfg.max_iters, Some(&oracle.mean))
            };
            match report {
                Ok(r) => iterative_rows(trial, detector, sigma, &r, start.elapsed().as_secs_f64()),
                Err(e) => vec![error_row(trial, detector, sigma, &e)],
            }
        }
    }
}

fn run_trial(config: &ExperimentConfig, users: usize, trial: usize, sigma: f64) -> Vec<SweepRow> {
    let seed = config.seed_for_trial(trial);
    let instance = match generate_instance(users, config.chips, config.distribution, sigma, seed) {
        Ok(i) => i,
        Err(e) => {
            return config
                .detectors
                .iter()
                .map(|&d| error_row(trial, d, sigma, &e))
                .collect()
        }
    };
    let oracle = match mmse_solve(&instance) {
        Ok(o) => o,
        Err(e) => {
            return config
                .detectors
                .iter()
                .map(|&d| error_row(trial, d, sigma, &e))
                .collect()
        }
    };
    config
        .detectors
        .iter()
        .flat_map(|&d| run_detector(d, trial, sigma, &instance, &oracle, config))
        .collect()
}

/// Runs every detector on every `(trial, sigma)` pair. Detector failures are
/// recorded in the `error` column; only an invalid config is an `Err`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let users = config.resolved_users()?;
    let jobs: Vec<(usize, usize)> = (0..config.trials)
        .flat_map(|t| (0..config.sigmas.len()).map(move |s| (t, s)))
        .collect();
    let mut rows: Vec<(usize, SweepRow)> = jobs
        .par_iter()
        .flat_map_iter(|&(trial, si)| {
            run_trial(config, users, trial, config.sigmas[si])
                .into_iter()
                .map(move |r| (si, r))
        })
        .collect();
    rows.sort_by(|(sa, a), (sb, b)| {
        (a.trial, sa, a.detector, a.iter).cmp(&(b.trial, sb, b.detector, b.iter))
    });
    Ok(SweepResult {
        users,
        chips: config.chips,
        sigmas: config.sigmas.clone(),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Asymptotic per-user MMSE `1/(1+Λ)`.
pub fn theoretical_mse(alpha: f64, sigma: f64) -> Result<f64> {
    Ok(1.0 / (1.0 + tse_hanly_lambda(alpha, sigma)?))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Geometric per-iteration contraction of a decaying distance sequence.
///
/// Skips the first two entries (transient), stops once the distance has
/// fallen eight decades below its start or to `1e-13`, and fits a
/// least-squares line to `log d(t)`. Returns `exp(slope)`, or `None` if fewer
/// than three points remain.
pub fn fit_contraction(distances: &[f64]) -> Option<f64> {
    let d0 = *distances.first()?;
    let floor = (d0 * 1e-8).max(1e-13);
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .enumerate()
        .skip(2)
        .take_while(|(_, &d)| d > floor)
        .map(|(t, &d)| (t as f64, d.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some((sxy / sxx).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub detector: Detector,
    pub sigma: f64,
    pub trials: usize,
    pub converged: usize,
    pub errors: usize,
    pub median_final_mse: f64,
    /// Empty for direct detectors.
    pub median_iterations: Option<f64>,
    /// Median fitted per-iteration contraction of `dist_to_mmse`.
    pub contraction: Option<f64>,
    pub t_star_empirical: Option<f64>,
    pub t_star_theory: Option<f64>,
}

/// Per `(detector, sigma)` aggregates.
pub fn summarize(result: &SweepResult) -> Vec<SummaryRow> {
    let mut detectors: Vec<Detector> = result.rows.iter().map(|r| r.detector).collect();
    detectors.sort();
    detectors.dedup();
    let alpha = result.alpha();
    let mut out = Vec::new();
    for &sigma in &result.sigmas {
        for &det in &detectors {
            let trajs = result.trajectories(det, sigma);
            if trajs.is_empty() {
                continue;
            }
            let ok: Vec<&Vec<&SweepRow>> = trajs
                .iter()
                .filter(|t| t.iter().all(|r| r.error.is_none()))
                .collect();
            let finals: Vec<f64> = ok
                .iter()
                .filter_map(|t| t.last().and_then(|r| r.mse))
                .collect();
            let converged = ok.iter().filter(|t| t.iter().all(|r| r.converged)).count();
            let (median_iterations, contraction) = if det.is_iterative() {
                let iters: Vec<f64> = ok
                    .iter()
                    .filter_map(|t| t.last().map(|r| r.iter as f64))
                    .collect();
                let rates: Vec<f64> = ok
                    .iter()
                    .filter_map(|t| {
                        let d: Vec<f64> = t.iter().filter_map(|r| r.dist_to_mmse).collect();
                        fit_contraction(&d)
                    })
                    .collect();
                let rate = (!rates.is_empty()).then(|| median(&rates));
                (Some(median(&iters)), rate)
            } else {
                (None, None)
            };
            let t_star_empirical = contraction
                .filter(|c| *c > 0.0 && *c < 1.0)
                .map(|c| -1.0 / c.ln());
            let t_star_theory = if det.is_iterative() {
                t_star(alpha, sigma).ok()
            } else {
                None
            };
            out.push(SummaryRow {
                detector: det,
                sigma,
                trials: trajs.len(),
                converged,
                errors: trajs.len() - ok.len(),
                median_final_mse: median(&finals),
                median_iterations,
                contraction,
                t_star_empirical,
                t_star_theory,
            });
        }
    }
    out
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theoretical_mse_values() {
        for sigma in [0.3f64, 1.0] {
            let want = sigma * sigma / (1.0 + sigma * sigma);
            assert!((theoretical_mse(0.0, sigma).unwrap() - want).abs() < 1e-14);
        }
        assert!((theoretical_mse(0.5, 0.1).unwrap() - 0.019244).abs() < 1e-5);
        assert!(theoretical_mse(0.5, 0.0).is_err());
    }

    #[test]
    fn single_mmse_trial() {
        let cfg = ExperimentConfig::new(4, 8, vec![0.3], vec![Detector::Mmse], 1);
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].dist_to_mmse, Some(0.0));
        assert_eq!(res.rows[0].iter, 0);
        let sum = summarize(&res);
        assert_eq!(sum.len(), 1);
        assert!(sum[0].median_iterations.is_none());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(4, 8, vec![0.3], vec![Detector::Bp], 0);
        assert!(cfg.validate().is_err());
        cfg.trials = 1;
        cfg.detectors.clear();
        assert!(cfg.validate().is_err());
        cfg.detectors.push(Detector::Bp);
        cfg.sigmas = vec![-1.0];
        assert!(cfg.validate().is_err());
        cfg.sigmas = vec![0.2];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn alpha_resolves_users() {
        let json = r#"{"N": 40, "alpha": 0.5, "sigma_list": [0.2], "detectors": ["bp"], "trials": 2}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.resolved_users().unwrap(), 20);
        assert_eq!(cfg.tol, 1e-10);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"chips": 4, "bogus": 1}"#).is_err());
    }

    #[test]
    fn detector_errors_become_rows() {
        // ABP rejects Gaussian signatures; the sweep records that per row
        let mut cfg = ExperimentConfig::new(4, 8, vec![0.3], vec![Detector::Abp, Detector::Mmse], 2);
        cfg.distribution = SignatureDistribution::StandardGaussian;
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.error_rows(), 2);
        assert!(res.rows.iter().any(|r| r.detector == Detector::Mmse && r.error.is_none()));
    }

    #[test]
    fn contraction_fit_recovers_geometric_rate() {
        let d: Vec<f64> = (0..40).map(|t| 3.0 * 0.6f64.powi(t)).collect();
        assert!((fit_contraction(&d).unwrap() - 0.6).abs() < 1e-12);
        assert!(fit_contraction(&[1.0, 0.5]).is_none());
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
