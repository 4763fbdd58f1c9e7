//! Conjugate quantities for a single tree under R ~ N(Dμ, Σ), μ ~ N(0, τ²I).
//!
//! With A = τ⁻²I + DᵀΣ⁻¹D and S = DᵀΣ⁻¹R, the leaf posterior is
//! N(A⁻¹S, A⁻¹) and the marginal likelihood is Gaussian with covariance
//! Σ + τ²DDᵀ. The birth/death ratio is assembled from leaf-level block
//! sums only: entries of DᵀΣ⁻¹D are block sums of Σ⁻¹ over pairs of leaf
//! index sets, and the quadratic term uses the difference of the two
//! inverses after expanding the smaller one to the larger leaf set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{cholesky_logdet, PrecisionView};
use crate::error::{Error, Result};
use crate::tree::{DummyDesign, Proposal, ProposalKind};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A = τ⁻²I + DᵀΣ⁻¹D factorised, with v = A⁻¹DᵀΣ⁻¹R.
#[derive(Debug, Clone)]
pub struct ConjugateSolve {
    pub a: DMatrix<f64>,
    pub v: Vec<f64>,
    pub logdet_a: f64,
    chol: Cholesky<f64, Dyn>,
}

impl ConjugateSolve {
    /// Factorise A and solve for v given leaf sums S = DᵀΣ⁻¹R.
    pub fn new(a: DMatrix<f64>, leaf_sums: &[f64]) -> Result<Self> {
        let chol = Cholesky::new(a.clone())
            .ok_or_else(|| Error::NotPositiveDefinite { attempted: Vec::new() })?;
        let v = chol.solve(&DVector::from_column_slice(leaf_sums)).as_slice().to_vec();
        let logdet_a = cholesky_logdet(&chol);
        Ok(Self { a, v, logdet_a, chol })
    }

    /// One draw from N(v, A⁻¹).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.v.len();
        let z = DVector::from_iterator(b, (0..b).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // A = LLᵀ, so L⁻ᵀz has covariance A⁻¹
        let w = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        self.v.iter().zip(w.iter()).map(|(m, e)| m + e).collect()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// DᵀΣ⁻¹D in one pass over the structural non-zeros of Σ⁻¹: entry (i, j)
/// collects q_hl for h in Ω_i and l in Ω_j.
pub fn leaf_gram(design: &DummyDesign, precision: &PrecisionView) -> Result<DMatrix<f64>> {
    if design.n() != precision.n() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, precision {}",
            design.n(),
            precision.n()
        )));
    }
    let b = design.b();
    let a = &design.assignment;
    let mut g = DMatrix::zeros(b, b);
    for (h, &i) in a.iter().enumerate() {
        precision.for_each_in_row(h, |l, q| g[(i, a[l])] += q);
    }
    Ok(g)
}

/// Row of DᵀΣ⁻¹D for the observation set `members` against every leaf of
/// the design with `assignment` (b leaves). Touches only `members` and
/// their structural neighbours.
pub fn gram_row(precision: &PrecisionView, assignment: &[usize], b: usize, members: &[usize]) -> Vec<f64> {
    let mut row = vec![0.0; b];
    for &h in members {
        precision.for_each_in_row(h, |l, q| row[assignment[l]] += q);
    }
    row
}

/// Gram matrix of the proposed design, obtained from the current one by
/// touching only the affected leaves.
pub fn proposed_gram(
    current: &DMatrix<f64>,
    proposal: &Proposal,
    precision: &PrecisionView,
) -> DMatrix<f64> {
    let j = proposal.leaf_index;
    let design = &proposal.new_design;
    match proposal.kind {
        ProposalKind::Birth { .. } => {
            let b_new = current.nrows() + 1;
            let old_of = |k: usize| if k < j { k } else { k - 1 };
            let left = gram_row(precision, &design.assignment, b_new, &design.omega[j]);
            let right = gram_row(precision, &design.assignment, b_new, &design.omega[j + 1]);
            DMatrix::from_fn(b_new, b_new, |r, c| {
                if r == j {
                    left[c]
                } else if r == j + 1 {
                    right[c]
                } else if c == j {
                    left[r]
                } else if c == j + 1 {
                    right[r]
                } else {
                    current[(old_of(r), old_of(c))]
                }
            })
        }
        ProposalKind::Death => {
            let b_new = current.nrows() - 1;
            let old_of = |k: usize| if k <= j { k } else { k + 1 };
            let merged = |k: usize| current[(j, k)] + current[(j + 1, k)];
            let diag = current[(j, j)] + 2.0 * current[(j, j + 1)] + current[(j + 1, j + 1)];
            DMatrix::from_fn(b_new, b_new, |r, c| {
                if r == j && c == j {
                    diag
                } else if r == j {
                    merged(old_of(c))
                } else if c == j {
                    merged(old_of(r))
                } else {
                    current[(old_of(r), old_of(c))]
                }
            })
        }
    }
}

/// τ⁻²I + scale·G.
pub fn a_matrix(gram: &DMatrix<f64>, tau: f64, scale: f64) -> DMatrix<f64> {
    let mut a = gram * scale;
    let prior = 1.0 / (tau * tau);
    for i in 0..a.nrows() {
        a[(i, i)] += prior;
    }
    a
}

/// log p(R|D^{new}) - log p(R|D^{cur}) from the leaf-level block system.
///
/// `gram_cur` is DᵀΣ₀⁻¹D for the current design, `omega` is Σ⁻¹R with
/// Σ⁻¹ = scale·Σ₀⁻¹ (the caller applies the scale), and `tau` the leaf
/// prior standard deviation.
pub fn log_ratio_from_blocks(
    gram_cur: &DMatrix<f64>,
    gram_new: &DMatrix<f64>,
    proposal: &Proposal,
    current: &DummyDesign,
    omega: &[f64],
    tau: f64,
    scale: f64,
) -> Result<f64> {
    let j = proposal.leaf_index;
    let birth = matches!(proposal.kind, ProposalKind::Birth { .. });
    let (big_gram, small_gram, big_design) = if birth {
        (gram_new, gram_cur, &proposal.new_design)
    } else {
        (gram_cur, gram_new, current)
    };
    let b_big = big_gram.nrows();
    if small_gram.nrows() + 1 != b_big || big_design.b() != b_big || j + 1 >= b_big {
        return Err(Error::DimensionMismatch("proposal does not match the current design".into()));
    }

    // Leaf order with the affected pair moved last: others, j, j+1.
    let big_order: Vec<usize> = (0..b_big).filter(|&k| k != j && k != j + 1).chain([j, j + 1]).collect();
    let small_order: Vec<usize> = (0..b_big - 1).filter(|&k| k != j).chain([j]).collect();
    let permute = |m: &DMatrix<f64>, order: &[usize]| {
        DMatrix::from_fn(order.len(), order.len(), |r, c| m[(order[r], order[c])])
    };
    let a_big = a_matrix(&permute(big_gram, &big_order), tau, scale);
    let a_small = a_matrix(&permute(small_gram, &small_order), tau, scale);

    let sums_natural = big_design.leaf_sums(omega);
    let sums: Vec<f64> = big_order.iter().map(|&k| sums_natural[k]).collect();

    let sol_big = ConjugateSolve::new(a_big, &sums)?;
    let small_sums: Vec<f64> = {
        let mut s = sums[..b_big - 1].to_vec();
        s[b_big - 2] += sums[b_big - 1];
        s
    };
    let sol_small = ConjugateSolve::new(a_small, &small_sums)?;
    let v_big = sol_big.inverse();
    let v_small = sol_small.inverse();

    // Expand the smaller inverse by duplicating its last row and column.
    let last = b_big - 2;
    let v_ex = DMatrix::from_fn(b_big, b_big, |r, c| v_small[(r.min(last), c.min(last))]);
    let b_mat = if birth { &v_big - &v_ex } else { &v_ex - &v_big };

    let mut u = 0.0;
    for r in 0..b_big {
        for c in 0..b_big {
            u += sums[r] * sums[c] * b_mat[(r, c)];
        }
    }

    let (logdet_cur, logdet_new) = if birth {
        (sol_small.logdet_a, sol_big.logdet_a)
    } else {
        (sol_big.logdet_a, sol_small.logdet_a)
    };
    // |Q^{new}|^{1/2}/|Q^{cur}|^{1/2} = τ^{-1} (birth) or τ (death)
    let prior_term = if birth { -tau.ln() } else { tau.ln() };
    Ok(prior_term + 0.5 * (logdet_cur - logdet_new) + 0.5 * u)
}

/// p(R|D^{new}) / p(R|D^{cur}) for a birth or death proposal.
pub fn marginal_likelihood_ratio(
    r: &[f64],
    precision: &PrecisionView,
    current: &DummyDesign,
    proposal: &Proposal,
    tau: f64,
) -> Result<f64> {
    Ok(log_marginal_likelihood_ratio(r, precision, current, proposal, tau)?.exp())
}

/// Log form of [`marginal_likelihood_ratio`].
pub fn log_marginal_likelihood_ratio(
    r: &[f64],
    precision: &PrecisionView,
    current: &DummyDesign,
    proposal: &Proposal,
    tau: f64,
) -> Result<f64> {
    check_dims(r, precision, current)?;
    if proposal.new_design.n() != current.n() {
        return Err(Error::DimensionMismatch("proposal and design disagree on n".into()));
    }
    let omega = precision.mul_vec(r);
    let gram_cur = leaf_gram(current, precision)?;
    let gram_new = proposed_gram(&gram_cur, proposal, precision);
    log_ratio_from_blocks(&gram_cur, &gram_new, proposal, current, &omega, tau, 1.0)
}

fn check_dims(r: &[f64], precision: &PrecisionView, design: &DummyDesign) -> Result<()> {
    if r.len() != precision.n() || design.n() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "R has {} entries, precision {}, design {}",
            r.len(),
            precision.n(),
            design.n()
        )));
    }
    Ok(())
}

/// log p(R|D) with μ̄ = 0 and Q = τ⁻²I.
pub fn log_marginal(r: &[f64], design: &DummyDesign, precision: &PrecisionView, tau: f64) -> Result<f64> {
    check_dims(r, precision, design)?;
    let n = r.len() as f64;
    let b = design.b() as f64;
    let omega = precision.mul_vec(r);
    let sums = design.leaf_sums(&omega);
    let gram = leaf_gram(design, precision)?;
    let sol = ConjugateSolve::new(a_matrix(&gram, tau, 1.0), &sums)?;
    let fitted: f64 = sums.iter().zip(&sol.v).map(|(s, v)| s * v).sum();
    let rqr: f64 = omega.iter().zip(r).map(|(w, x)| w * x).sum();
    Ok(-0.5 * n * LN_2PI - 0.5 * precision.logdet_sigma() - b * tau.ln() - 0.5 * sol.logdet_a + 0.5 * (fitted - rqr))
}

/// Posterior N(A⁻¹DᵀΣ⁻¹R, A⁻¹) of the leaf means, factorised.
pub fn leaf_posterior(r: &[f64], design: &DummyDesign, precision: &PrecisionView, tau: f64) -> Result<ConjugateSolve> {
    check_dims(r, precision, design)?;
    let omega = precision.mul_vec(r);
    let sums = design.leaf_sums(&omega);
    let gram = leaf_gram(design, precision)?;
    ConjugateSolve::new(a_matrix(&gram, tau, 1.0), &sums)
}

/// One draw of μ from its conditional posterior.
pub fn draw_leaf_means<R: Rng + ?Sized>(
    r: &[f64],
    design: &DummyDesign,
    precision: &PrecisionView,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(leaf_posterior(r, design, precision, tau)?.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_ar_precision, build_iid_precision};
    use crate::data::Covariates;
    use crate::tree::{apply_proposal, build_dummy, propose, CutGrid, ProposalConfig, Tree};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_leaf(n: usize) -> DummyDesign {
        build_dummy(&Tree::root(0.0), &Covariates::from_column(&vec![0.0; n]).unwrap())
    }

    #[test]
    fn scalar_marginal() {
        let p = build_iid_precision(1.0, 1).unwrap();
        let lm = log_marginal(&[0.0], &single_leaf(1), &p, 1.0).unwrap();
        assert!((lm - (-0.5 * (4.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((lm + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn vanishing_tau_gives_error_density() {
        let p = build_ar_precision(0.6, 0.8, 4).unwrap();
        let r = [0.3, -0.2, 0.5, 0.1];
        let d = single_leaf(4);
        let lm = log_marginal(&r, &d, &p, 1e-7).unwrap();
        let density = -0.5 * (4.0 * LN_2PI + p.logdet_sigma() + p.quad_form(&r));
        assert!((lm - density).abs() < 1e-6, "{lm} vs {density}");
    }

    #[test]
    fn scalar_posterior() {
        let p = build_iid_precision(1.0, 1).unwrap();
        let post = leaf_posterior(&[3.0], &single_leaf(1), &p, 1.0).unwrap();
        assert!((post.v[0] - 1.5).abs() < 1e-15);
        assert!((post.inverse()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flat_prior_posterior_mean_is_leaf_average() {
        let x = Covariates::from_column(&[0.1, 0.2, 0.6, 0.7, 0.9]).unwrap();
        let mut tree = Tree::root(0.0);
        tree.split_leaf(0, crate::tree::SplitRule { var: 0, cut: 0.5 }, 0.0, 0.0);
        let d = build_dummy(&tree, &x);
        let r = [1.0, 2.0, 4.0, 5.0, 9.0];
        let p = build_iid_precision(1.0, 5).unwrap();
        let post = leaf_posterior(&r, &d, &p, 1e8).unwrap();
        assert!((post.v[0] - 1.5).abs() < 1e-9);
        assert!((post.v[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_rejects_mismatched_dimensions() {
        let x = Covariates::from_column(&[0.1, 0.2, 0.6]).unwrap();
        let tree = Tree::root(0.0);
        let d = build_dummy(&tree, &x);
        let grid = CutGrid::from_covariates(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prop = propose(&tree, &d, &x, &grid, &ProposalConfig::default(), &mut rng).unwrap();
        let p = build_iid_precision(1.0, 4).unwrap();
        assert!(matches!(
            marginal_likelihood_ratio(&[0.0; 4], &p, &d, &prop, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn incremental_gram_matches_fresh() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let x = Covariates::from_rows(&rows).unwrap();
        let grid = CutGrid::from_covariates(&x);
        let p = build_ar_precision(0.7, 0.5, n).unwrap();
        let cfg = ProposalConfig::default();
        let mut tree = Tree::root(0.0);
        let mut design = build_dummy(&tree, &x);
        for _ in 0..30 {
            let prop = propose(&tree, &design, &x, &grid, &cfg, &mut rng).unwrap();
            let cur = leaf_gram(&design, &p).unwrap();
            let inc = proposed_gram(&cur, &prop, &p);
            let fresh = leaf_gram(&prop.new_design, &p).unwrap();
            assert!((inc - &fresh).amax() < 1e-12);
            let d = &prop.new_design;
            for i in 0..d.b() {
                for j in 0..d.b() {
                    let block = crate::covariance::blockwise_precision_sum(&p, &d.omega[i], &d.omega[j]).unwrap();
                    assert!((fresh[(i, j)] - block).abs() < 1e-12);
                }
            }
            apply_proposal(&mut tree, &mut design, prop);
        }
    }
}
