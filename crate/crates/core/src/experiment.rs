//! Seeded replications of the simulation studies.
//!
//! Replicate `r` uses seed `base_seed + r` for both data generation and the
//! MCMC chains, so a single replicate can be rerun in isolation.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbart::{predict_f, CbartConfig};
use crate::covariance::CovarianceModel;
use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::gp::GpKind;
use crate::simgen::{gen_ar1_cubic, gen_spatial, SpatialTheta};
use crate::twostage::{fit_iid, fit_under_model, predict_y, run_two_stage, DEFAULT_WEIGHTS};

pub const THREADS_ENV: &str = "CBARTGP_THREADS";

/// Size the global rayon pool from `CBARTGP_THREADS` if set.
pub fn init_threads_from_env() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// CBART with the true Σ against iid BART on the AR(1) cubic design.
    Fig2,
    /// Two-stage estimation on the AR(1) cubic design with the SSΔ table.
    Sec32,
    /// Two-stage CBART-GP against iid BART, estimation of f.
    Sim1d,
    /// Spatial scenarios: estimation of f and prediction of y*.
    Spatial,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Self::Fig2),
            "sec32" => Ok(Self::Sec32),
            "sim1d" => Ok(Self::Sim1d),
            "spatial" => Ok(Self::Spatial),
            _ => Err(Error::Config(format!("unknown experiment {s:?}"))),
        }
    }
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Sec32 => "sec32",
            Self::Sim1d => "sim1d",
            Self::Spatial => "spatial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateConfig {
    pub experiment: Experiment,
    pub seeds: usize,
    pub base_seed: u64,
    pub cbart: CbartConfig,
    pub weights: Vec<f64>,
    /// 1-D designs.
    pub n: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Spatial designs.
    pub scenario: u8,
    pub n_train: usize,
    pub n_test: usize,
    pub theta: SpatialTheta,
    pub spatial_kind: GpKind,
}

impl ReplicateConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seeds: 20,
            base_seed: 1,
            cbart: CbartConfig::default(),
            weights: DEFAULT_WEIGHTS.to_vec(),
            n: 200,
            rho: 0.8,
            sigma: 0.1,
            scenario: 3,
            n_train: 200,
            n_test: 100,
            theta: SpatialTheta::default(),
            spatial_kind: GpKind::SpatialExp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsRow {
    pub w: f64,
    pub ss_eta_w: f64,
    pub ss_eta_cbart: f64,
    pub ss_delta: f64,
    pub theta_hat: CovarianceModel,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub seed: u64,
    /// Named metrics, e.g. `mse_f_cbart`, `mse_f_bart`.
    pub metrics: BTreeMap<String, f64>,
    pub ss_table: Option<Vec<SsRow>>,
    pub selected_k: Option<usize>,
    pub seconds: f64,
}

impl ReplicateRow {
    pub fn selected(&self) -> Option<&SsRow> {
        Some(&self.ss_table.as_ref()?[self.selected_k?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub config: ReplicateConfig,
    pub rows: Vec<ReplicateRow>,
    /// Mean and median of every metric plus reductions where defined.
    pub summary: BTreeMap<String, f64>,
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Relative reduction (baseline - model) / baseline.
pub fn reduction(model: f64, baseline: f64) -> f64 {
    (baseline - model) / baseline
}

fn chain_config(base: &CbartConfig, seed: u64) -> CbartConfig {
    CbartConfig {
        rng_seed: seed,
        ..base.clone()
    }
}

fn ss_rows(result: &crate::twostage::TwoStageResult) -> Vec<SsRow> {
    result
        .records
        .iter()
        .map(|r| SsRow {
            w: r.w,
            ss_eta_w: r.ss_eta_w,
            ss_eta_cbart: r.ss_eta_cbart,
            ss_delta: r.ss_delta,
            theta_hat: r.gp.model.clone(),
            converged: r.gp.converged,
        })
        .collect()
}

/// Run one replicate with the given seed.
pub fn run_replicate(config: &ReplicateConfig, seed: u64) -> Result<ReplicateRow> {
    let start = std::time::Instant::now();
    let cfg = chain_config(&config.cbart, seed);
    let mut metrics = BTreeMap::new();
    let mut ss_table = None;
    let mut selected_k = None;
    match config.experiment {
        Experiment::Fig2 => {
            let d = gen_ar1_cubic(config.n, config.rho, config.sigma, seed)?;
            let bart = fit_iid(&d.y, &d.x, &CbartConfig { keep_trees: false, ..cfg.clone() })?;
            let cbart = fit_under_model(
                &d.y,
                &d.x,
                &d.locations,
                &d.truth.error_model,
                &CbartConfig {
                    keep_trees: false,
                    chain: cfg.chain + 1,
                    ..cfg
                },
            )?;
            metrics.insert("mse_f_bart".into(), mse(&bart.posterior_mean_f, &d.f_true));
            metrics.insert("mse_f_cbart".into(), mse(&cbart.posterior_mean_f, &d.f_true));
        }
        Experiment::Sec32 | Experiment::Sim1d => {
            let d = gen_ar1_cubic(config.n, config.rho, config.sigma, seed)?;
            let cfg = CbartConfig { keep_trees: false, ..cfg };
            let res = run_two_stage(&d.y, &d.x, &d.locations, GpKind::Ar1, &config.weights, &cfg)?;
            metrics.insert("mse_f_bart".into(), mse(&res.iid_fit.posterior_mean_f, &d.f_true));
            metrics.insert(
                "mse_f_cbart".into(),
                mse(&res.selected().cbart_fit.posterior_mean_f, &d.f_true),
            );
            if let CovarianceModel::Ar1 { rho, sigma } = res.selected().gp.model {
                metrics.insert("rho_hat".into(), rho);
                metrics.insert("sigma_hat".into(), sigma);
            }
            metrics.insert("selected_w".into(), res.selected().w);
            ss_table = Some(ss_rows(&res));
            selected_k = Some(res.selected_k);
        }
        Experiment::Spatial => {
            let d = gen_spatial(config.scenario, config.n_train, config.n_test, config.theta, seed)?;
            let train = d.train_part();
            let test = d
                .test_part()
                .ok_or_else(|| Error::Config("the spatial study needs test points".into()))?;
            let res = run_two_stage(&train.y, &train.x, &train.locations, config.spatial_kind, &config.weights, &cfg)?;
            let f_bart = predict_f(&res.iid_fit, &test.x)?;
            let pred = predict_y(&res, &test.x, &test.locations)?;

            // Prediction baseline: iid BART on (x, s1, s2).
            let with_s = |part: &crate::simgen::DataPart| -> Result<Covariates> {
                let pts = part.locations.points().expect("spatial design");
                let rows: Vec<Vec<f64>> = (0..part.x.n())
                    .map(|i| {
                        let mut r = part.x.row(i).to_vec();
                        r.extend_from_slice(&pts[i]);
                        r
                    })
                    .collect();
                Covariates::from_rows(&rows)
            };
            let bart_xs = fit_iid(
                &train.y,
                &with_s(&train)?,
                &CbartConfig {
                    chain: cfg.chain + 100,
                    ..cfg.clone()
                },
            )?;
            let y_bart = predict_f(&bart_xs, &with_s(&test)?)?;

            metrics.insert("mse_f_bart".into(), mse(&f_bart, &test.f_true));
            metrics.insert("mse_f_cbart".into(), mse(&pred.fhat, &test.f_true));
            metrics.insert("mse_y_bart".into(), mse(&y_bart, &test.y));
            metrics.insert("mse_y_cbart_gp".into(), mse(&pred.yhat, &test.y));
            metrics.insert("selected_w".into(), res.selected().w);
            if let CovarianceModel::SpatialExp { sigma2, phi, tau2 } | CovarianceModel::SpatialMatern { sigma2, phi, tau2, .. } =
                res.selected().gp.model
            {
                metrics.insert("sigma2_hat".into(), sigma2);
                metrics.insert("phi_hat".into(), phi);
                metrics.insert("tau2_hat".into(), tau2);
            }
            ss_table = Some(ss_rows(&res));
            selected_k = Some(res.selected_k);
        }
    }
    Ok(ReplicateRow {
        seed,
        metrics,
        ss_table,
        selected_k,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn summarize(rows: &[ReplicateRow]) -> BTreeMap<String, f64> {
    let mut summary = BTreeMap::new();
    let Some(first) = rows.first() else {
        return summary;
    };
    for key in first.metrics.keys() {
        let v: Vec<f64> = rows.iter().filter_map(|r| r.metrics.get(key).copied()).collect();
        summary.insert(format!("mean_{key}"), v.iter().sum::<f64>() / v.len() as f64);
        summary.insert(format!("median_{key}"), median(&v));
    }
    for (target, model, base) in [
        ("f", "mse_f_cbart", "mse_f_bart"),
        ("y", "mse_y_cbart_gp", "mse_y_bart"),
    ] {
        let red: Vec<f64> = rows
            .iter()
            .filter_map(|r| Some(reduction(*r.metrics.get(model)?, *r.metrics.get(base)?)))
            .collect();
        if !red.is_empty() {
            summary.insert(format!("median_reduction_{target}"), median(&red));
            let (m, b) = (summary[&format!("mean_{model}")], summary[&format!("mean_{base}")]);
            summary.insert(format!("mean_ratio_{target}"), m / b);
        }
    }
    summary
}

pub fn run_replications(config: &ReplicateConfig) -> Result<ReplicateReport> {
    if config.seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let rows = (0..config.seeds as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, config.base_seed + r))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok(ReplicateReport {
        config: config.clone(),
        rows,
        summary,
    })
}

/// Long-format table `seed, metric, value` for box plots.
pub fn write_boxplot_csv(path: &Path, report: &ReplicateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "metric", "value"])?;
    for row in &report.rows {
        for (k, v) in &row.metrics {
            w.write_record([row.seed.to_string(), k.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_reduction() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(reduction(0.5, 2.0), 0.75);
    }

    #[test]
    fn parses_experiment_names() {
        for e in [Experiment::Fig2, Experiment::Sec32, Experiment::Sim1d, Experiment::Spatial] {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("fig3".parse::<Experiment>().is_err());
    }

    #[test]
    fn small_fig2_replicate_is_reproducible() {
        let mut cfg = ReplicateConfig::new(Experiment::Fig2);
        cfg.n = 40;
        cfg.cbart.m = 5;
        cfg.cbart.n_iter = 20;
        cfg.cbart.burn_in = 10;
        let a = run_replicate(&cfg, 3).unwrap();
        let b = run_replicate(&cfg, 3).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics["mse_f_bart"] > 0.0);
    }
}
