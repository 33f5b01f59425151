//! Regret normalisation: finite-to-infinite-horizon conversion and the
//! per-step reward constants used to map returns onto `[0, 1]` regret units.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::percentile_linear;

/// Spread added around a degenerate reward distribution when all observed
/// rewards are equal.
pub const DEGENERATE_EPS: f64 = 1e-6;

/// Per-step reward constants `(r_min, r_max)` used for normalisation.
/// `R_min = r_min / (1 - gamma)` and `R_max = r_max / (1 - gamma)` are the
/// corresponding return bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub r_min: f64,
    pub r_max: f64,
}

impl NormConstants {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_max > r_min) {
            return Err(Error::Domain(format!("r_max {r_max} must exceed r_min {r_min}")));
        }
        Ok(Self { r_min, r_max })
    }

    /// Return-scale span `(r_max - r_min) / (1 - gamma)`; regret values are
    /// divided by this to land in normalised units.
    pub fn return_span(&self, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        Ok((self.r_max - self.r_min) / (1.0 - gamma))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma {gamma} outside (0, 1)")));
    }
    Ok(())
}

/// Convert a finite-horizon discounted return into its infinite-horizon
/// extrapolation: `R_inf = R_fin * (1 + gamma^s / (1 - gamma^s))` with `s`
/// the maximum number of episode steps.
pub fn to_infinite_horizon(r_fin: f64, gamma: f64, max_steps: usize) -> Result<f64> {
    check_gamma(gamma)?;
    if max_steps == 0 {
        return Err(Error::Domain("max_steps must be at least 1".into()));
    }
    let g = gamma.powi(max_steps as i32);
    if g >= 1.0 {
        return Err(Error::Domain("gamma^s reached 1".into()));
    }
    Ok(r_fin * (1.0 + g / (1.0 - g)))
}

/// Normalised regret of a finite-horizon return:
/// `(R_max - R_inf) / (R_max - R_min)` after the infinite-horizon
/// conversion. The raw value is returned; reports clip to `[0, 1]`.
pub fn normalize_regret(
    return_finite: f64,
    gamma: f64,
    max_steps: usize,
    r_min_norm: f64,
    r_max_norm: f64,
) -> Result<f64> {
    let nc = NormConstants::new(r_min_norm, r_max_norm)?;
    let r_inf = to_infinite_horizon(return_finite, gamma, max_steps)?;
    let r_max = nc.r_max / (1.0 - gamma);
    let r_min = nc.r_min / (1.0 - gamma);
    Ok((r_max - r_inf) / (r_max - r_min))
}

/// Per-step reward normalisation constants from the offline dataset: the
/// 2.5th and 97.5th percentiles of per-step rewards under the
/// linear-interpolation percentile convention. A degenerate dataset in
/// which every reward is identical returns `(r - eps, r + eps)` with
/// `eps = 1e-6`.
pub fn percentile_norm_constants(ds: &Dataset) -> Result<NormConstants> {
    if ds.is_empty() {
        return Err(Error::Data("cannot derive normalisation constants from an empty dataset".into()));
    }
    let mut rewards = ds.rewards();
    rewards.sort_by(|a, b| a.partial_cmp(b).expect("non-finite reward"));
    let lo = percentile_linear(&rewards, 2.5)?;
    let hi = percentile_linear(&rewards, 97.5)?;
    if hi > lo {
        NormConstants::new(lo, hi)
    } else {
        NormConstants::new(lo - DEGENERATE_EPS, lo + DEGENERATE_EPS)
    }
}
