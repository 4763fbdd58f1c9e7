use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use cbartgp::cbart::{predict_f, run_cbart, CbartFit};
use cbartgp::covariance::build_iid_precision;
use cbartgp::experiment::{run_replications, write_boxplot_csv, Experiment, ReplicateConfig};
use cbartgp::gp::{krige, GpFit};
use cbartgp::io::{read_data_csv, read_json, write_columns_csv, write_data_csv, write_json, RunManifest};
use cbartgp::simgen::{gen_ar1_cubic, gen_spatial, SimDataset, SpatialTheta};
use cbartgp::twostage::run_two_stage;
use cbartgp::{CovarianceModel, GpKind, Locations};

use crate::{Design, ExperimentArg, FitArgs, FitModel, PredictArgs, ReplicateArgs};

/// Everything `predict` needs from a fit.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: String,
    pub x_names: Vec<String>,
    /// Selected CBART fit; per-iteration draws are not stored.
    pub fit: CbartFit,
    /// Error model used for kriging; `None` or iid means no spatial term.
    pub error_model: Option<CovarianceModel>,
    pub train_locations: Locations,
    pub train_residuals: Vec<f64>,
    /// iid fit on the same covariates, when the model has one.
    pub baseline: Option<CbartFit>,
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn finish(dir: &Path, mut manifest: RunManifest, outputs: &[&str]) -> Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn strip_draws(mut fit: CbartFit) -> CbartFit {
    fit.draws = Vec::new();
    fit
}

fn write_dataset(d: &SimDataset, dir: &Path) -> Result<()> {
    let train = d.train_part();
    write_data_csv(&dir.join("train.csv"), &train.locations, &train.x, &train.y)?;
    match d.test_part() {
        Some(test) => write_data_csv(&dir.join("test.csv"), &test.locations, &test.x, &test.y)?,
        None => {
            let header = match d.locations {
                Locations::Index(_) => "idx,x,y\n",
                Locations::Points(_) => "s1,s2,x,y\n",
            };
            fs::write(dir.join("test.csv"), header)?;
        }
    }
    let split: Vec<f64> = (0..d.n()).map(|i| if d.test.contains(&i) { 1.0 } else { 0.0 }).collect();
    write_columns_csv(
        &dir.join("truth.csv"),
        &d.locations,
        &d.x,
        &[("y", &d.y), ("f_true", &d.f_true), ("eta", &d.eta), ("test", &split)],
    )?;
    Ok(())
}

pub fn simulate(design: Design) -> Result<()> {
    let start = Instant::now();
    let (d, config, common) = match design {
        Design::Ar1 { n, rho, sigma, common } => {
            let d = gen_ar1_cubic(n, rho, sigma, common.seed)?;
            let config = json!({ "design": "ar1", "n": n, "rho": rho, "sigma": sigma });
            (d, config, common)
        }
        Design::Spatial {
            scenario,
            n_train,
            n_test,
            sigma2,
            phi,
            tau2,
            common,
        } => {
            let theta = SpatialTheta { sigma2, phi, tau2 };
            let d = gen_spatial(scenario, n_train, n_test, theta, common.seed)?;
            let config = json!({
                "design": "spatial", "scenario": scenario, "n_train": n_train, "n_test": n_test,
                "sigma2": sigma2, "phi": phi, "tau2": tau2,
            });
            (d, config, common)
        }
    };
    let mut config = config;
    config["error_model"] = serde_json::to_value(&d.truth.error_model)?;
    prepare_dir(&common.out_dir)?;
    write_dataset(&d, &common.out_dir)?;
    let mut manifest = RunManifest::new("simulate", config, common.seed);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    finish(&common.out_dir, manifest, &["train.csv", "test.csv", "truth.csv"])?;
    println!("wrote {} training and {} test rows to {}", d.train.len(), d.test.len(), common.out_dir.display());
    Ok(())
}

fn truth_error_model(spec: &str, data: &Path) -> Result<CovarianceModel> {
    let path = if spec == "truth" {
        data.parent().unwrap_or(Path::new(".")).join("manifest.json")
    } else {
        PathBuf::from(spec)
    };
    let manifest: RunManifest =
        read_json(&path).with_context(|| format!("cannot read simulation manifest {}", path.display()))?;
    let model = manifest
        .config
        .get("error_model")
        .with_context(|| format!("{} has no error_model", path.display()))?;
    Ok(serde_json::from_value(model.clone())?)
}

/// True f for the training rows when a simulation truth file sits next to
/// the data.
fn training_truth(data: &Path, n: usize) -> Option<Vec<f64>> {
    let truth = data.parent().unwrap_or(Path::new(".")).join("truth.csv");
    let mut reader = csv::Reader::from_path(truth).ok()?;
    let headers = reader.headers().ok()?.clone();
    let f_col = headers.iter().position(|h| h == "f_true")?;
    let t_col = headers.iter().position(|h| h == "test")?;
    let mut f = Vec::new();
    for rec in reader.records() {
        let rec = rec.ok()?;
        if rec.get(t_col)?.parse::<f64>().ok()? == 0.0 {
            f.push(rec.get(f_col)?.parse::<f64>().ok()?);
        }
    }
    (f.len() == n).then_some(f)
}

fn default_gp_kind(locations: &Locations) -> GpKind {
    match locations {
        Locations::Index(_) => GpKind::Ar1,
        Locations::Points(_) => GpKind::SpatialExp,
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    let start = Instant::now();
    let table = read_data_csv(&args.data)?;
    let y = table.require_y()?.to_vec();
    let n = y.len();
    let config = args.mcmc.config();
    prepare_dir(&args.out_dir)?;

    let mut fit_json = serde_json::Map::new();
    let model_file = match args.model {
        FitModel::Cbart => {
            let (fit, error_model) = match &args.sigma_inv_from {
                Some(spec) => {
                    let model = truth_error_model(spec, &args.data)?;
                    let precision = model.precision(&table.locations)?;
                    (run_cbart(&y, &table.x, &precision, &config)?, model)
                }
                None => {
                    let cfg = cbartgp::CbartConfig {
                        estimate_sigma: true,
                        ..config.clone()
                    };
                    let fit = run_cbart(&y, &table.x, &build_iid_precision(1.0, n)?, &cfg)?;
                    let s = fit.sigma_mean().unwrap_or(f64::NAN);
                    (fit, CovarianceModel::Iid { sigma2: s * s })
                }
            };
            fit_json.insert("error_model".into(), serde_json::to_value(&error_model)?);
            fit_json.insert("acceptance_rate".into(), json!(fit.acceptance.rate()));
            fit_json.insert("acceptance".into(), serde_json::to_value(fit.acceptance)?);
            fit_json.insert("tau".into(), json!(fit.tau));
            if let Some(s) = fit.sigma_mean() {
                fit_json.insert("sigma_mean".into(), json!(s));
            }
            let residuals = y.iter().zip(&fit.posterior_mean_f).map(|(a, b)| a - b).collect();
            ModelFile {
                model: "cbart".into(),
                x_names: table.x_names.clone(),
                fit: strip_draws(fit),
                error_model: Some(error_model),
                train_locations: table.locations.clone(),
                train_residuals: residuals,
                baseline: None,
            }
        }
        FitModel::Twostage => {
            let kind = args.gp_kind.map(GpKind::from).unwrap_or_else(|| default_gp_kind(&table.locations));
            let result = run_two_stage(&y, &table.x, &table.locations, kind, &args.weights, &config)?;
            let records: Vec<_> = result
                .records
                .iter()
                .map(|r| {
                    json!({
                        "w": r.w,
                        "theta_hat": r.gp.model,
                        "gp_loglik": r.gp.loglik,
                        "gp_converged": r.gp.converged,
                        "ss_eta_w": r.ss_eta_w,
                        "ss_eta_cbart": r.ss_eta_cbart,
                        "ss_delta": r.ss_delta,
                        "acceptance_rate": r.cbart_fit.acceptance.rate(),
                    })
                })
                .collect();
            let k = result.selected_k;
            let interior = k > 0 && k + 1 < result.records.len();
            fit_json.insert("gp_kind".into(), serde_json::to_value(kind)?);
            fit_json.insert("weights".into(), serde_json::to_value(&records)?);
            fit_json.insert("selected_k".into(), json!(k));
            fit_json.insert("selected_w".into(), json!(result.selected().w));
            fit_json.insert("theta_hat".into(), serde_json::to_value(&result.selected().gp.model)?);
            fit_json.insert("interior_minimum".into(), json!(interior));
            fit_json.insert("iid_acceptance_rate".into(), json!(result.iid_fit.acceptance.rate()));
            let unconverged: Vec<f64> = result.records.iter().filter(|r| !r.gp.converged).map(|r| r.w).collect();
            if !unconverged.is_empty() {
                let msg = format!("GP fit did not converge for weights {unconverged:?}");
                eprintln!("warning: {msg}");
                fit_json.insert("warning".into(), json!(msg));
            }

            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(args.out_dir.join("sstable.csv"))?;
            let mut row = vec!["w_k".to_string()];
            row.extend(result.records.iter().map(|r| r.w.to_string()));
            w.write_record(&row)?;
            let mut row = vec!["ss_delta".to_string()];
            row.extend(result.records.iter().map(|r| r.ss_delta.to_string()));
            w.write_record(&row)?;
            w.flush()?;

            let residuals = result.selected_residuals();
            let selected = result.records.into_iter().nth(k).expect("selected index is valid");
            ModelFile {
                model: "twostage".into(),
                x_names: table.x_names.clone(),
                fit: strip_draws(selected.cbart_fit),
                error_model: Some(selected.gp.model),
                train_locations: table.locations.clone(),
                train_residuals: residuals,
                baseline: Some(strip_draws(result.iid_fit)),
            }
        }
    };

    let fhat = &model_file.fit.posterior_mean_f;
    let mut cols: Vec<(&str, &[f64])> = vec![("fhat", fhat)];
    let f_true = training_truth(&args.data, n);
    if let Some(f) = &f_true {
        let mse = cbartgp::experiment::mse(fhat, f);
        fit_json.insert("mse_fhat".into(), json!(mse));
        println!("MSE(fhat) = {mse:.6}");
        cols.push(("f_true", f));
    }
    write_columns_csv(&args.out_dir.join("fhat.csv"), &table.locations, &table.x, &cols)?;
    write_json(&args.out_dir.join("fit.json"), &fit_json)?;
    write_json(&args.out_dir.join("model.json"), &model_file)?;

    let config_json = json!({
        "model": format!("{:?}", args.model).to_lowercase(),
        "data": args.data,
        "sigma_inv_from": args.sigma_inv_from,
        "gp_kind": args.gp_kind.map(|k| format!("{k:?}").to_lowercase()),
        "weights": args.weights,
        "cbart": config,
    });
    let mut manifest = RunManifest::new("fit", config_json, args.mcmc.seed);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    let mut outputs = vec!["fit.json", "fhat.csv", "model.json"];
    if args.model == FitModel::Twostage {
        outputs.push("sstable.csv");
    }
    finish(&args.out_dir, manifest, &outputs)
}

fn kriging_term(model: &ModelFile, new: &Locations) -> Result<Vec<f64>> {
    match &model.error_model {
        None | Some(CovarianceModel::Iid { .. }) => Ok(vec![0.0; new.len()]),
        Some(m) => {
            let gp = GpFit {
                model: m.clone(),
                loglik: f64::NAN,
                fitted_struct: Vec::new(),
                converged: true,
                evaluations: 0,
                start_logliks: Vec::new(),
            };
            Ok(krige(&gp, &model.train_residuals, &model.train_locations, new)?)
        }
    }
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let start = Instant::now();
    let model: ModelFile = read_json(&args.model).with_context(|| format!("cannot read {}", args.model.display()))?;
    let table = read_data_csv(&args.data)?;
    if table.x_names != model.x_names {
        bail!(cbartgp::Error::Schema(format!(
            "covariates {:?} do not match the fitted {:?}",
            table.x_names, model.x_names
        )));
    }
    let fhat = predict_f(&model.fit, &table.x)?;
    let zhat = kriging_term(&model, &table.locations)?;
    let yhat: Vec<f64> = fhat.iter().zip(&zhat).map(|(a, b)| a + b).collect();
    prepare_dir(&args.out_dir)?;
    write_columns_csv(
        &args.out_dir.join("predictions.csv"),
        &table.locations,
        &table.x,
        &[("fhat", &fhat), ("zhat", &zhat), ("yhat", &yhat)],
    )?;

    let mut config = json!({ "model": args.model, "data": args.data });
    if let Some(y) = &table.y {
        let mse = cbartgp::experiment::mse(&yhat, y);
        println!("MSE(yhat) = {mse:.6}");
        config["mse_yhat"] = json!(mse);
        if let Some(base) = &model.baseline {
            let b = cbartgp::experiment::mse(&predict_f(base, &table.x)?, y);
            println!("MSE(yhat) iid BART = {b:.6}");
            config["mse_yhat_iid_bart"] = json!(b);
        }
    }
    let mut manifest = RunManifest::new("predict", config, 0);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    finish(&args.out_dir, manifest, &["predictions.csv"])
}

pub fn replicate(args: ReplicateArgs) -> Result<()> {
    let start = Instant::now();
    let experiment = match args.experiment {
        ExperimentArg::Fig2 => Experiment::Fig2,
        ExperimentArg::Sec32 => Experiment::Sec32,
        ExperimentArg::Sim1d => Experiment::Sim1d,
        ExperimentArg::Spatial => Experiment::Spatial,
    };
    let mut config = ReplicateConfig::new(experiment);
    config.seeds = args.seeds as usize;
    config.base_seed = args.mcmc.seed;
    config.cbart = args.mcmc.config();
    config.weights = args.weights.clone();
    config.scenario = args.scenario;
    if let Some(k) = args.gp_kind {
        config.spatial_kind = k.into();
    }
    let report = run_replications(&config)?;
    prepare_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("report.json"), &report)?;
    write_boxplot_csv(&args.out_dir.join("boxplot.csv"), &report)?;
    let mut outputs = vec!["report.json", "boxplot.csv"];
    if report.rows.iter().any(|r| r.ss_table.is_some()) {
        let mut w = csv::Writer::from_path(args.out_dir.join("sstables.csv"))?;
        w.write_record(["seed", "w", "ss_eta_w", "ss_eta_cbart", "ss_delta", "selected"])?;
        for row in &report.rows {
            for (k, s) in row.ss_table.iter().flatten().enumerate() {
                w.write_record([
                    row.seed.to_string(),
                    s.w.to_string(),
                    s.ss_eta_w.to_string(),
                    s.ss_eta_cbart.to_string(),
                    s.ss_delta.to_string(),
                    (row.selected_k == Some(k)).to_string(),
                ])?;
            }
        }
        w.flush()?;
        outputs.push("sstables.csv");
    }
    for (k, v) in &report.summary {
        println!("{k} = {v:.6}");
    }
    let mut manifest = RunManifest::new(format!("replicate {}", experiment.name()), serde_json::to_value(&config)?, config.base_seed);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    finish(&args.out_dir, manifest, &outputs)
}
