use rayon::prelude::*;
use serde::Serialize;

use super::{discrepancy_d, mmse_solve, omega_power_trace, spectral_growth_rate, MAX_TRACE_DIM};
use crate::bp::{run_bp, BpConfig};
use crate::sysmodel::{generate_instance, SignatureDistribution};
use crate::Result;

/// Diagnostics for one binary-signature instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralRow {
    pub seed: u64,
    pub growth_rate_normalized: f64,
    pub growth_confident: bool,
    /// `None` when BP did not converge.
    #[serde(rename = "D")]
    pub d: Option<f64>,
    pub bp_converged: bool,
    /// `Tr{(Ωᵗ)ᵀ Ωᵗ} / (N^{2t+2} α^{t+1})`; `None` above the dense size limit.
    pub trace_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SurveyConfig {
    pub users: usize,
    pub chips: usize,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub power: usize,
    pub growth_iters: usize,
}

pub fn spectral_trial(cfg: &SurveyConfig, seed: u64) -> Result<SpectralRow> {
    let instance = generate_instance::<f64>(cfg.users, cfg.chips, SignatureDistribution::Binary, cfg.sigma, seed)?;
    let growth = spectral_growth_rate(instance.signatures(), cfg.sigma, cfg.growth_iters, seed)?;
    let oracle = mmse_solve(&instance)?;
    let report = run_bp(&instance, &BpConfig::for_system(instance.alpha(), cfg.sigma), None)?;
    let d = if report.converged {
        Some(discrepancy_d(&report, &oracle)?.d)
    } else {
        None
    };
    let trace_ratio = if cfg.users * cfg.chips <= MAX_TRACE_DIM {
        let n = cfg.chips as f64;
        let alpha = instance.alpha();
        let t = cfg.power as i32;
        let tr = omega_power_trace(instance.signatures(), cfg.power)?;
        Some(tr / (n.powi(2 * t + 2) * alpha.powi(t + 1)))
    } else {
        None
    };
    Ok(SpectralRow {
        seed,
        growth_rate_normalized: growth.normalized,
        growth_confident: growth.confident,
        d,
        bp_converged: report.converged,
        trace_ratio,
    })
}

/// Runs `cfg.trials` instances with seeds `seed, seed+1, …` in parallel.
pub fn spectral_survey(cfg: &SurveyConfig) -> Result<Vec<SpectralRow>> {
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|j| spectral_trial(cfg, cfg.seed.wrapping_add(j)))
        .collect()
}
