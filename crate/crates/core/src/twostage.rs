//! Two-stage estimation of CBART-GP with weighted residuals.
//!
//! Stage one fits a GP by maximum likelihood to residuals interpolating
//! between `y - ȳ` (all variation attributed to dependence) and
//! `y - f̂_iid` (none). Stage two refits CBART under each fitted Σ(θ̂) and
//! keeps the weight whose two sums of squares agree best.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbart::{predict_f, run_cbart, CbartConfig, CbartFit};
use crate::covariance::{build_iid_precision, CovarianceModel, Locations};
use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::gp::{fit_gp_mle, krige, GpFit, GpKind};

pub const DEFAULT_WEIGHTS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub w: f64,
    pub gp: GpFit,
    pub ss_eta_w: f64,
    pub ss_eta_cbart: f64,
    pub ss_delta: f64,
    pub cbart_fit: CbartFit,
}

impl WeightRecord {
    pub fn theta_hat(&self) -> &CovarianceModel {
        &self.gp.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub records: Vec<WeightRecord>,
    pub selected_k: usize,
    pub e0: Vec<f64>,
    pub e_iid: Vec<f64>,
    pub iid_fit: CbartFit,
    pub locations: Locations,
    pub y: Vec<f64>,
}

impl TwoStageResult {
    pub fn selected(&self) -> &WeightRecord {
        &self.records[self.selected_k]
    }

    /// Training residuals y - f̂ under the selected model.
    pub fn selected_residuals(&self) -> Vec<f64> {
        let f = &self.selected().cbart_fit.posterior_mean_f;
        self.y.iter().zip(f).map(|(a, b)| a - b).collect()
    }
}

/// `w (y - ȳ) + (1 - w)(y - f̂_iid)`.
pub fn weighted_residuals(y: &[f64], f_iid: &[f64], w: f64) -> Vec<f64> {
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    y.iter()
        .zip(f_iid)
        .map(|(&yi, &fi)| w * (yi - ybar) + (1.0 - w) * (yi - fi))
        .collect()
}

/// Index of the smallest SSΔ. Ties go to the smaller index; records whose
/// GP fit did not converge are used only if none converged.
pub fn select_weight(records: &[WeightRecord]) -> usize {
    let any_converged = records.iter().any(|r| r.gp.converged);
    let mut best: Option<usize> = None;
    for (k, r) in records.iter().enumerate() {
        if any_converged && !r.gp.converged {
            continue;
        }
        if best.is_none_or(|b| r.ss_delta < records[b].ss_delta) {
            best = Some(k);
        }
    }
    best.unwrap_or(0)
}

fn sum_sq(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum()
}

/// CBART conditioned on a fixed error model.
pub fn fit_under_model(
    y: &[f64],
    x: &Covariates,
    locations: &Locations,
    model: &CovarianceModel,
    config: &CbartConfig,
) -> Result<CbartFit> {
    let precision = model.precision(locations)?;
    run_cbart(y, x, &precision, config)
}

/// The iid fit used for `e_CBART(iid)`: σ² sampled, otherwise `config`.
pub fn fit_iid(y: &[f64], x: &Covariates, config: &CbartConfig) -> Result<CbartFit> {
    let cfg = CbartConfig {
        estimate_sigma: true,
        ..config.clone()
    };
    run_cbart(y, x, &build_iid_precision(1.0, y.len())?, &cfg)
}

pub fn run_two_stage(
    y: &[f64],
    x: &Covariates,
    locations: &Locations,
    gp_kind: GpKind,
    weights: &[f64],
    cbart_config: &CbartConfig,
) -> Result<TwoStageResult> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter("weight grid is empty".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::InvalidParameter(format!("weight {w} outside [0, 1]")));
    }
    if locations.len() != y.len() {
        return Err(Error::DimensionMismatch("y and locations differ in length".into()));
    }
    let iid_fit = fit_iid(y, x, cbart_config)?;
    let f_iid = &iid_fit.posterior_mean_f;
    let e0 = weighted_residuals(y, f_iid, 1.0);
    let e_iid = weighted_residuals(y, f_iid, 0.0);

    let records = weights
        .par_iter()
        .enumerate()
        .map(|(k, &w)| {
            let e_w = weighted_residuals(y, f_iid, w);
            let gp = fit_gp_mle(&e_w, gp_kind, locations)?;
            let ss_eta_w = sum_sq(gp.fitted_struct.iter().copied());
            let cfg = CbartConfig {
                estimate_sigma: false,
                chain: cbart_config.chain + 1 + k as u64,
                ..cbart_config.clone()
            };
            let cbart_fit = fit_under_model(y, x, locations, &gp.model, &cfg)?;
            let ss_eta_cbart = sum_sq(y.iter().zip(&cbart_fit.posterior_mean_f).map(|(a, b)| a - b));
            Ok(WeightRecord {
                w,
                gp,
                ss_eta_w,
                ss_eta_cbart,
                ss_delta: (ss_eta_w - ss_eta_cbart).abs(),
                cbart_fit,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let selected_k = select_weight(&records);
    Ok(TwoStageResult {
        records,
        selected_k,
        e0,
        e_iid,
        iid_fit,
        locations: locations.clone(),
        y: y.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub fhat: Vec<f64>,
    pub zhat: Vec<f64>,
    pub yhat: Vec<f64>,
}

/// ŷ* = f̂(x*) + ẑ(s*) under the selected weight.
pub fn predict_y(result: &TwoStageResult, x_new: &Covariates, s_new: &Locations) -> Result<Prediction> {
    if x_new.n() != s_new.len() {
        return Err(Error::DimensionMismatch("new covariates and locations differ in length".into()));
    }
    let rec = result.selected();
    let fhat = predict_f(&rec.cbart_fit, x_new)?;
    let zhat = krige(&rec.gp, &result.selected_residuals(), &result.locations, s_new)?;
    let yhat = fhat.iter().zip(&zhat).map(|(a, b)| a + b).collect();
    Ok(Prediction { fhat, zhat, yhat })
}
