//! Backfitting MCMC for a sum of trees under a fixed error covariance.

mod marginal;

pub use marginal::{
    a_matrix, draw_leaf_means, gram_row, leaf_gram, leaf_posterior, log_marginal, log_marginal_likelihood_ratio,
    log_ratio_from_blocks, marginal_likelihood_ratio, proposed_gram, ConjugateSolve,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

use crate::covariance::{build_iid_precision, PrecisionStorage, PrecisionView};
use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tree::{apply_proposal, build_dummy, propose, CutGrid, DummyDesign, ProposalConfig, ProposalKind, Tree, TreePrior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbartConfig {
    /// Number of trees.
    pub m: usize,
    /// Kept draws.
    pub n_iter: usize,
    /// Discarded draws.
    pub burn_in: usize,
    /// k in τ = (y_max - y_min) / (2k√m).
    pub tau_k: f64,
    /// Explicit leaf-prior standard deviation in units of y; overrides `tau_k`.
    pub tau: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub birth_prob: f64,
    /// Gibbs-update σ² (only with an iid precision).
    pub estimate_sigma: bool,
    /// Degrees of freedom ν of the scaled inverse-χ² prior on σ².
    pub sigma_df: f64,
    /// Prior probability that σ is below the least-squares estimate.
    pub sigma_quantile: f64,
    pub rng_seed: u64,
    /// Chain id; selects the random stream for `rng_seed`.
    pub chain: u64,
    /// Retain every kept ensemble for prediction at new points.
    pub keep_trees: bool,
}

impl Default for CbartConfig {
    fn default() -> Self {
        Self {
            m: 50,
            n_iter: 1000,
            burn_in: 500,
            tau_k: 2.0,
            tau: None,
            alpha: 0.95,
            beta: 2.0,
            birth_prob: 0.5,
            estimate_sigma: false,
            sigma_df: 3.0,
            sigma_quantile: 0.90,
            rng_seed: 0,
            chain: 0,
            keep_trees: true,
        }
    }
}

impl CbartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_iter == 0 {
            return Err(Error::Config("m and n_iter must be at least 1".into()));
        }
        if self.tau_k.is_nan() || self.tau_k <= 0.0 || self.tau.is_some_and(|t| t.is_nan() || t <= 0.0) {
            return Err(Error::Config("leaf prior scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || self.beta < 0.0 {
            return Err(Error::Config("tree prior needs alpha in [0,1], beta >= 0".into()));
        }
        if !(0.0 < self.birth_prob && self.birth_prob < 1.0) {
            return Err(Error::Config("birth_prob must lie in (0,1)".into()));
        }
        if self.estimate_sigma && !(self.sigma_df > 0.0 && 0.0 < self.sigma_quantile && self.sigma_quantile < 1.0) {
            return Err(Error::Config("invalid sigma prior".into()));
        }
        Ok(())
    }
}

/// Move counters of one chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub birth_proposed: u64,
    pub birth_accepted: u64,
    pub death_proposed: u64,
    pub death_accepted: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        let prop = self.birth_proposed + self.death_proposed;
        if prop == 0 {
            0.0
        } else {
            (self.birth_accepted + self.death_accepted) as f64 / prop as f64
        }
    }
}

/// Affine map between y and the internal [-0.5, 0.5] scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn from_range(y: &[f64]) -> Self {
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let scale = if hi > lo { hi - lo } else { 1.0 };
        Self {
            center: 0.5 * (lo + hi),
            scale,
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn backward(&self, v: f64) -> f64 {
        self.center + self.scale * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbartFit {
    /// Kept draws of f at the training points (units of y).
    pub draws: Vec<Vec<f64>>,
    pub posterior_mean_f: Vec<f64>,
    /// Kept ensembles on the internal scale; `None` unless `keep_trees`.
    pub tree_snapshots: Option<Vec<Vec<Tree>>>,
    pub acceptance: AcceptanceStats,
    /// Kept draws of σ (units of y) when σ² was sampled.
    pub sigma_draws: Option<Vec<f64>>,
    pub standardization: Standardization,
    /// Leaf prior standard deviation actually used (units of y).
    pub tau: f64,
}

impl CbartFit {
    pub fn sigma_mean(&self) -> Option<f64> {
        self.sigma_draws
            .as_ref()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
    }
}

/// Sum of per-tree evaluations, in tree order, mapped back to y units.
fn ensemble_value(trees: &[Tree], row: &[f64], std: Standardization) -> f64 {
    let mut s = 0.0;
    for t in trees {
        s += t.eval_row(row);
    }
    std.backward(s)
}

/// Posterior mean of f at new covariate rows.
pub fn predict_f(fit: &CbartFit, x_new: &Covariates) -> Result<Vec<f64>> {
    let snaps = fit.tree_snapshots.as_ref().ok_or(Error::MissingSnapshots)?;
    let need = snaps.iter().flatten().filter_map(Tree::max_var).max();
    if need.is_some_and(|v| v >= x_new.p()) {
        return Err(Error::DimensionMismatch(format!(
            "ensemble splits on variable {} but new data has {} covariates",
            need.unwrap_or(0),
            x_new.p()
        )));
    }
    let mut mean = vec![0.0; x_new.n()];
    for trees in snaps {
        for (i, m) in mean.iter_mut().enumerate() {
            *m += ensemble_value(trees, x_new.row(i), fit.standardization);
        }
    }
    let k = snaps.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    Ok(mean)
}

fn is_iid(precision: &PrecisionView) -> bool {
    match precision.storage() {
        PrecisionStorage::Banded(_) => {
            precision.bandwidth() == Some(0) && (1..precision.n()).all(|i| precision.get(i, i) == precision.get(0, 0))
        }
        PrecisionStorage::Dense(_) => false,
    }
}

/// Residual standard deviation of a least-squares fit of y on [1, X]; the
/// sample standard deviation when there are too few observations.
fn least_squares_sigma(y: &[f64], x: &Covariates) -> f64 {
    let n = y.len();
    let p = x.p();
    if n > p + 1 {
        let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
        let target = DVector::from_column_slice(y);
        if let Ok(beta) = design.clone().svd(true, true).solve(&target, 1e-12) {
            let resid = target - design * beta;
            let s2 = resid.norm_squared() / (n - p - 1) as f64;
            if s2 > 0.0 {
                return s2.sqrt();
            }
        }
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    var.sqrt().max(1e-8)
}

/// Per-chain state of the backfitting sampler; exposed to the crate for
/// tests of the per-tree update.
pub(crate) struct Backfitter<'a> {
    pub(crate) y: Vec<f64>,
    x: &'a Covariates,
    grid: CutGrid,
    precision: PrecisionView,
    /// Σ⁻¹ = precision_scale · `precision`.
    precision_scale: f64,
    tau: f64,
    proposal: ProposalConfig,
    pub(crate) trees: Vec<Tree>,
    designs: Vec<DummyDesign>,
    grams: Vec<DMatrix<f64>>,
    pub(crate) g: Vec<Vec<f64>>,
    pub(crate) fit: Vec<f64>,
    pub(crate) last_residual: Vec<f64>,
    omega: Vec<f64>,
    rng: StreamRng,
    stats: AcceptanceStats,
}

impl<'a> Backfitter<'a> {
    pub(crate) fn new(
        y_std: Vec<f64>,
        x: &'a Covariates,
        precision: PrecisionView,
        precision_scale: f64,
        tau: f64,
        config: &CbartConfig,
    ) -> Result<Self> {
        let n = y_std.len();
        let grid = CutGrid::from_covariates(x);
        let init = y_std.iter().sum::<f64>() / n as f64 / config.m as f64;
        let tree = Tree::root(init);
        let design = build_dummy(&tree, x);
        let gram = leaf_gram(&design, &precision)?;
        let g0 = vec![init; n];
        let mut fit = vec![0.0; n];
        for _ in 0..config.m {
            for (f, g) in fit.iter_mut().zip(&g0) {
                *f += g;
            }
        }
        Ok(Self {
            y: y_std,
            x,
            grid,
            precision,
            precision_scale,
            tau,
            proposal: ProposalConfig {
                birth_prob: config.birth_prob,
                prior: TreePrior {
                    alpha: config.alpha,
                    beta: config.beta,
                },
            },
            trees: vec![tree; config.m],
            designs: vec![design; config.m],
            grams: vec![gram; config.m],
            g: vec![g0; config.m],
            fit,
            last_residual: vec![0.0; n],
            omega: vec![0.0; n],
            rng: rng::stream(config.rng_seed, rng::STREAM_MCMC + config.chain),
            stats: AcceptanceStats::default(),
        })
    }

    /// One Metropolis–Hastings tree move followed by a leaf-mean draw for
    /// tree `j`.
    pub(crate) fn update_tree(&mut self, j: usize) -> Result<()> {
        let n = self.y.len();
        // R_j = Y - Σ_{k≠j} g_k
        for i in 0..n {
            self.last_residual[i] = self.y[i] - (self.fit[i] - self.g[j][i]);
        }
        self.precision.mul_vec_into(&self.last_residual, &mut self.omega);
        if self.precision_scale != 1.0 {
            for w in &mut self.omega {
                *w *= self.precision_scale;
            }
        }

        match propose(&self.trees[j], &self.designs[j], self.x, &self.grid, &self.proposal, &mut self.rng) {
            Ok(prop) => {
                let birth = matches!(prop.kind, ProposalKind::Birth { .. });
                if birth {
                    self.stats.birth_proposed += 1;
                } else {
                    self.stats.death_proposed += 1;
                }
                let gram_new = proposed_gram(&self.grams[j], &prop, &self.precision);
                let log_lik = log_ratio_from_blocks(
                    &self.grams[j],
                    &gram_new,
                    &prop,
                    &self.designs[j],
                    &self.omega,
                    self.tau,
                    self.precision_scale,
                )?;
                let log_alpha = log_lik + prop.log_prior_ratio + prop.log_kernel_ratio;
                let u: f64 = self.rng.random();
                if u.ln() < log_alpha {
                    if birth {
                        self.stats.birth_accepted += 1;
                    } else {
                        self.stats.death_accepted += 1;
                    }
                    apply_proposal(&mut self.trees[j], &mut self.designs[j], prop);
                    self.grams[j] = gram_new;
                }
            }
            Err(Error::NoValidSplit) => self.stats.birth_proposed += 1,
            Err(e) => return Err(e),
        }

        let design = &self.designs[j];
        let sums = design.leaf_sums(&self.omega);
        let a = a_matrix(&self.grams[j], self.tau, self.precision_scale);
        let means = ConjugateSolve::new(a, &sums)?.draw(&mut self.rng);
        self.trees[j].set_leaf_means(&design.leaf_nodes, &means);
        for i in 0..n {
            let new = means[design.assignment[i]];
            self.fit[i] += new - self.g[j][i];
            self.g[j][i] = new;
        }
        Ok(())
    }

    fn sweep(&mut self) -> Result<()> {
        for j in 0..self.trees.len() {
            self.update_tree(j)?;
        }
        // re-sum to stop round-off drift in the running fit
        let n = self.y.len();
        for i in 0..n {
            let mut s = 0.0;
            for g in &self.g {
                s += g[i];
            }
            self.fit[i] = s;
        }
        Ok(())
    }
}

/// Run the CBART sampler for response `y`, covariates `x` and error
/// precision `precision` (all on the scale of y).
pub fn run_cbart(y: &[f64], x: &Covariates, precision: &PrecisionView, config: &CbartConfig) -> Result<CbartFit> {
    config.validate()?;
    let n = y.len();
    if n == 0 || x.n() != n || precision.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {n} entries, X {} rows, precision {}",
            x.n(),
            precision.n()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite response".into()));
    }
    if config.estimate_sigma && !is_iid(precision) {
        return Err(Error::Config("estimate_sigma requires an iid precision".into()));
    }

    let std = Standardization::from_range(y);
    let y_std: Vec<f64> = y.iter().map(|&v| std.forward(v)).collect();
    let tau_std = match config.tau {
        Some(t) => t / std.scale,
        None => 0.5 / (config.tau_k * (config.m as f64).sqrt()),
    };

    // σ² prior λ: P(σ < σ̂) = q under νλ/χ²_ν.
    let (base, mut scale, sigma_prior) = if config.estimate_sigma {
        let sigma_hat = least_squares_sigma(&y_std, x);
        let chi = ChiSquaredDist::new(config.sigma_df).map_err(|e| Error::Config(e.to_string()))?;
        let lambda = sigma_hat * sigma_hat * chi.inverse_cdf(1.0 - config.sigma_quantile) / config.sigma_df;
        (build_iid_precision(1.0, n)?, 1.0 / (sigma_hat * sigma_hat), Some(lambda))
    } else {
        (precision.clone(), std.scale * std.scale, None)
    };

    let mut bf = Backfitter::new(y_std, x, base, scale, tau_std, config)?;
    let keep = config.n_iter;
    let mut draws = Vec::with_capacity(keep);
    let mut snapshots = config.keep_trees.then(|| Vec::with_capacity(keep));
    let mut sigma_draws = config.estimate_sigma.then(|| Vec::with_capacity(keep));
    let chi_post = ChiSquared::new(config.sigma_df + n as f64).map_err(|e| Error::Config(e.to_string()))?;

    for iter in 0..(config.burn_in + config.n_iter) {
        bf.sweep()?;
        if let Some(lambda) = sigma_prior {
            let ssr: f64 = bf.y.iter().zip(&bf.fit).map(|(a, b)| (a - b).powi(2)).sum();
            let sigma2 = (config.sigma_df * lambda + ssr) / chi_post.sample(&mut bf.rng);
            scale = 1.0 / sigma2;
            bf.precision_scale = scale;
        }
        if iter >= config.burn_in {
            let draw: Vec<f64> = (0..n).map(|i| ensemble_value(&bf.trees, x.row(i), std)).collect();
            draws.push(draw);
            if let Some(s) = snapshots.as_mut() {
                s.push(bf.trees.clone());
            }
            if let Some(s) = sigma_draws.as_mut() {
                s.push(std.scale / scale.sqrt());
            }
        }
    }

    let mut posterior_mean_f = vec![0.0; n];
    for d in &draws {
        for (m, v) in posterior_mean_f.iter_mut().zip(d) {
            *m += v;
        }
    }
    for m in &mut posterior_mean_f {
        *m /= keep as f64;
    }

    Ok(CbartFit {
        draws,
        posterior_mean_f,
        tree_snapshots: snapshots,
        acceptance: bf.stats,
        sigma_draws,
        standardization: std,
        tau: tau_std * std.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_ar_precision, build_iid_precision};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> (Vec<f64>, Covariates) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = x.iter().map(|v: &f64| v.powi(3) + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        (y, Covariates::from_column(&x).unwrap())
    }

    fn short() -> CbartConfig {
        CbartConfig {
            m: 10,
            n_iter: 40,
            burn_in: 20,
            rng_seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn backfitting_residual_identity() {
        let (y, x) = toy(60, 1);
        let p = build_ar_precision(0.5, 0.1, 60).unwrap();
        let cfg = short();
        let std = Standardization::from_range(&y);
        let ys: Vec<f64> = y.iter().map(|&v| std.forward(v)).collect();
        let mut bf = Backfitter::new(ys, &x, p, std.scale.powi(2), 0.1, &cfg).unwrap();
        for _ in 0..5 {
            for j in 0..cfg.m {
                bf.update_tree(j).unwrap();
                for i in 0..60 {
                    let total: f64 = bf.g.iter().map(|g| g[i]).sum();
                    let ident = bf.y[i] - total - bf.last_residual[i] + bf.g[j][i];
                    assert!(ident.abs() < 1e-12, "{ident}");
                }
            }
        }
    }

    #[test]
    fn iid_and_uncorrelated_ar1_agree_bitwise() {
        let (y, x) = toy(50, 2);
        let a = run_cbart(&y, &x, &build_iid_precision(0.1 * 0.1, 50).unwrap(), &short()).unwrap();
        let b = run_cbart(&y, &x, &build_ar_precision(0.0, 0.1, 50).unwrap(), &short()).unwrap();
        assert_eq!(a.draws, b.draws);
    }

    #[test]
    fn predict_at_training_points_reproduces_mean() {
        let (y, x) = toy(40, 4);
        let fit = run_cbart(&y, &x, &build_iid_precision(0.01, 40).unwrap(), &short()).unwrap();
        assert_eq!(predict_f(&fit, &x).unwrap(), fit.posterior_mean_f);
    }

    #[test]
    fn predict_without_snapshots_fails() {
        let (y, x) = toy(30, 5);
        let cfg = CbartConfig {
            keep_trees: false,
            ..short()
        };
        let fit = run_cbart(&y, &x, &build_iid_precision(0.01, 30).unwrap(), &cfg).unwrap();
        assert!(matches!(predict_f(&fit, &x), Err(Error::MissingSnapshots)));
    }

    #[test]
    fn constant_ensemble_predicts_constant() {
        let (y, x) = toy(30, 6);
        let fit = CbartFit {
            draws: vec![],
            posterior_mean_f: vec![],
            tree_snapshots: Some(vec![vec![Tree::root(0.25)]]),
            acceptance: AcceptanceStats::default(),
            sigma_draws: None,
            standardization: Standardization { center: 1.0, scale: 2.0 },
            tau: 1.0,
        };
        let _ = y;
        assert!(predict_f(&fit, &x).unwrap().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn sigma_estimation_requires_iid() {
        let (y, x) = toy(30, 7);
        let cfg = CbartConfig {
            estimate_sigma: true,
            ..short()
        };
        let err = run_cbart(&y, &x, &build_ar_precision(0.5, 0.1, 30).unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = run_cbart(&y, &x, &build_iid_precision(0.01, 30).unwrap(), &cfg).unwrap();
        assert_eq!(ok.sigma_draws.unwrap().len(), cfg.n_iter);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let (y, x) = toy(30, 8);
        let err = run_cbart(&y, &x, &build_iid_precision(1.0, 29).unwrap(), &short()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn forced_root_tree_recovers_gls_intercept() {
        let n = 80;
        let (y, x) = toy(n, 9);
        let p = build_ar_precision(0.7, 0.2, n).unwrap();
        let cfg = CbartConfig {
            m: 1,
            alpha: 0.0,
            tau: Some(1e6),
            n_iter: 4000,
            burn_in: 100,
            ..short()
        };
        let fit = run_cbart(&y, &x, &p, &cfg).unwrap();
        let ones = vec![1.0; n];
        let q1 = p.mul_vec(&ones);
        let denom: f64 = q1.iter().sum();
        let gls = q1.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / denom;
        let sd = (1.0 / denom).sqrt();
        let est = fit.posterior_mean_f[0];
        assert!(fit.posterior_mean_f.iter().all(|&v| v == est));
        assert!((est - gls).abs() < 5.0 * sd / (cfg.n_iter as f64).sqrt(), "{est} vs {gls}");
    }
}
