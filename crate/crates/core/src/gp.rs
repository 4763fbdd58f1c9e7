//! Maximum-likelihood Gaussian-process fits to residual vectors and
//! kriging of the structured component.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::covariance::{
    cholesky_logdet, euclidean, factorize_with_jitter, spatial_covariance_matrix, CovarianceModel, Locations,
    MaternNu, PrecisionView,
};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const POS_MIN: f64 = 1e-6;
const POS_MAX: f64 = 1e6;
const RHO_MAX: f64 = 0.999;
const N_STARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpKind {
    Ar1,
    SpatialExp,
    SpatialMatern(MaternNu),
}

impl GpKind {
    pub fn is_spatial(self) -> bool {
        !matches!(self, GpKind::Ar1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFit {
    pub model: CovarianceModel,
    pub loglik: f64,
    /// Structured component: ρ̂ e_{i-1} for AR(1), K(K+τ̂²I)⁻¹e for spatial.
    pub fitted_struct: Vec<f64>,
    pub converged: bool,
    pub evaluations: usize,
    /// Log-likelihood at each multi-start initial point.
    pub start_logliks: Vec<f64>,
}

impl GpFit {
    pub fn precision(&self, locations: &Locations) -> Result<PrecisionView> {
        self.model.precision(locations)
    }
}

/// Zero-mean Gaussian log-likelihood −½(n log 2π + log|Σ| + eᵀΣ⁻¹e).
pub fn gp_loglik(e: &[f64], model: &CovarianceModel, locations: &Locations) -> Result<f64> {
    if locations.len() != e.len() {
        return Err(Error::DimensionMismatch("residuals and locations differ in length".into()));
    }
    let view = model.precision(locations)?;
    Ok(loglik_from_view(e, &view))
}

fn loglik_from_view(e: &[f64], view: &PrecisionView) -> f64 {
    -0.5 * (e.len() as f64 * LN_2PI + view.logdet_sigma() + view.quad_form(e))
}

/// AR(1) log-likelihood in O(n) without building the precision.
fn ar1_loglik(e: &[f64], rho: f64, sigma: f64) -> f64 {
    let mut ss = e[0] * e[0];
    for w in e.windows(2) {
        let d = w[1] - rho * w[0];
        ss += d * d;
    }
    let n = e.len() as f64;
    -0.5 * (n * LN_2PI + 2.0 * n * sigma.ln() + ss / (sigma * sigma))
}

/// Dense spatial likelihood with a cached distance matrix.
struct SpatialObjective<'a> {
    e: &'a [f64],
    dists: DMatrix<f64>,
}

impl<'a> SpatialObjective<'a> {
    fn new(e: &'a [f64], points: &[[f64; 2]]) -> Self {
        let n = points.len();
        Self {
            e,
            dists: DMatrix::from_fn(n, n, |i, j| euclidean(&points[i], &points[j])),
        }
    }

    fn sigma(&self, model: &CovarianceModel) -> DMatrix<f64> {
        let tau2 = model.nugget();
        let mut s = self.dists.map(|d| model.kernel(d));
        for i in 0..s.nrows() {
            s[(i, i)] += tau2;
        }
        s
    }

    fn loglik(&self, model: &CovarianceModel) -> Result<f64> {
        let (chol, _) = factorize_with_jitter(&self.sigma(model))?;
        let e = DVector::from_column_slice(self.e);
        let alpha = chol.solve(&e);
        let n = self.e.len() as f64;
        Ok(-0.5 * (n * LN_2PI + cholesky_logdet(&chol) + e.dot(&alpha)))
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn clamp_log(t: f64) -> f64 {
    t.clamp(POS_MIN.ln(), POS_MAX.ln())
}

fn ar1_from_params(t: &[f64]) -> (f64, f64) {
    let rho = RHO_MAX * sigmoid(t[0]);
    // the box applies to σ²
    let sigma = (0.5 * clamp_log(t[1])).exp();
    (rho, sigma)
}

fn spatial_from_params(kind: GpKind, t: &[f64]) -> CovarianceModel {
    let sigma2 = clamp_log(t[0]).exp();
    let phi = clamp_log(t[1]).exp();
    let tau2 = clamp_log(t[2]).exp();
    match kind {
        GpKind::SpatialMatern(nu) => CovarianceModel::SpatialMatern { sigma2, phi, tau2, nu },
        _ => CovarianceModel::SpatialExp { sigma2, phi, tau2 },
    }
}

fn variance(e: &[f64]) -> f64 {
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Multi-start Nelder–Mead over transformed parameters.
fn multistart(
    initial: Vec<f64>,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64, bool, usize, Vec<f64>) {
    let mut rng = rng::stream(0, rng::STREAM_OPTIMIZER);
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    let mut starts = vec![initial.clone()];
    for _ in 1..N_STARTS {
        starts.push(initial.iter().map(|v| v + jitter.sample(&mut rng)).collect());
    }
    let opts = NelderMeadOptions::default();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = false;
    let mut evals = 0;
    let mut start_values = Vec::with_capacity(N_STARTS);
    for s in &starts {
        start_values.push(-objective(s));
        evals += 1;
        let m = nelder_mead(&mut objective, s, &opts);
        evals += m.evals;
        converged |= m.converged;
        if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (x, v) = best.expect("at least one start");
    (x, -v, converged, evals, start_values)
}

/// Maximum-likelihood fit of a zero-mean GP to residuals `e`.
pub fn fit_gp_mle(e: &[f64], kind: GpKind, locations: &Locations) -> Result<GpFit> {
    let n = e.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 residuals, got {n}")));
    }
    if locations.len() != n {
        return Err(Error::DimensionMismatch("residuals and locations differ in length".into()));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite residual".into()));
    }
    let var = variance(e).max(POS_MIN);
    match kind {
        GpKind::Ar1 => {
            let num: f64 = e.windows(2).map(|w| w[0] * w[1]).sum();
            let den: f64 = e.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
            let r1 = (num / den).clamp(0.01, 0.95);
            let sigma0 = (var * (1.0 - r1 * r1)).sqrt();
            let init = vec![logit(r1 / RHO_MAX), (sigma0 * sigma0).ln()];
            let (x, loglik, converged, evaluations, start_logliks) = multistart(init, |t| {
                let (rho, sigma) = ar1_from_params(t);
                -ar1_loglik(e, rho, sigma)
            });
            let (rho, sigma) = ar1_from_params(&x);
            let mut fitted = vec![0.0; n];
            for i in 1..n {
                fitted[i] = rho * e[i - 1];
            }
            Ok(GpFit {
                model: CovarianceModel::Ar1 { rho, sigma },
                loglik,
                fitted_struct: fitted,
                converged,
                evaluations,
                start_logliks,
            })
        }
        GpKind::SpatialExp | GpKind::SpatialMatern(_) => {
            let points = locations
                .points()
                .ok_or_else(|| Error::UnsupportedLocations("spatial GP needs 2-D points".into()))?;
            let obj = SpatialObjective::new(e, points);
            let max_d = obj.dists.max();
            // small-lag semivariance as a nugget guess
            let cutoff = 0.1 * max_d;
            let (mut gamma, mut pairs) = (0.0, 0usize);
            for i in 0..n {
                for j in (i + 1)..n {
                    if obj.dists[(i, j)] < cutoff {
                        gamma += 0.5 * (e[i] - e[j]).powi(2);
                        pairs += 1;
                    }
                }
            }
            let nugget0 = if pairs > 0 { (gamma / pairs as f64).clamp(0.05 * var, 0.9 * var) } else { 0.25 * var };
            let sill0 = (var - nugget0).max(0.1 * var);
            let range0 = (max_d / 3.0).max(POS_MIN);
            let init = vec![sill0.ln(), range0.ln(), nugget0.ln()];
            let (x, loglik, converged, evaluations, start_logliks) =
                multistart(init, |t| obj.loglik(&spatial_from_params(kind, t)).map_or(f64::INFINITY, |v| -v));
            let model = spatial_from_params(kind, &x);
            let (chol, _) = factorize_with_jitter(&obj.sigma(&model))?;
            let alpha = chol.solve(&DVector::from_column_slice(e));
            let tau2 = model.nugget();
            let fitted = e.iter().zip(alpha.iter()).map(|(v, a)| v - tau2 * a).collect();
            Ok(GpFit {
                model,
                loglik,
                fitted_struct: fitted,
                converged,
                evaluations,
                start_logliks,
            })
        }
    }
}

/// Predict the structured component at new labels from training residuals.
///
/// Spatial models use the simple-kriging mean k*ᵀ(K+τ̂²I)⁻¹e. AR(1) models
/// forecast ρ̂^h e_last past the end of the series and return the one-step
/// value ρ̂ e_{i-1} at training indices.
pub fn krige(fit: &GpFit, residuals: &[f64], train: &Locations, new: &Locations) -> Result<Vec<f64>> {
    if residuals.len() != train.len() {
        return Err(Error::DimensionMismatch("residuals and training locations differ in length".into()));
    }
    match (&fit.model, train, new) {
        (CovarianceModel::Ar1 { rho, .. }, Locations::Index(tr), Locations::Index(nw)) => {
            let last = *tr.iter().max().ok_or_else(|| Error::InvalidParameter("empty training set".into()))?;
            let last_pos = tr.iter().position(|&t| t == last).expect("max is present");
            nw.iter()
                .map(|&t| {
                    if let Some(pos) = tr.iter().position(|&s| s == t) {
                        Ok(if pos == 0 { 0.0 } else { rho * residuals[pos - 1] })
                    } else if t > last {
                        Ok(rho.powi((t - last) as i32) * residuals[last_pos])
                    } else {
                        Err(Error::UnsupportedLocations(format!("index {t} is neither observed nor in the future")))
                    }
                })
                .collect()
        }
        (model, Locations::Points(tr), Locations::Points(nw)) if model.is_spatial() => {
            let (chol, _) = factorize_with_jitter(&spatial_covariance_matrix(model, tr))?;
            let alpha = chol.solve(&DVector::from_column_slice(residuals));
            Ok(nw
                .iter()
                .map(|s| tr.iter().zip(alpha.iter()).map(|(t, a)| model.kernel(euclidean(s, t)) * a).sum())
                .collect())
        }
        _ => Err(Error::UnsupportedLocations("model and location types do not match".into())),
    }
}
