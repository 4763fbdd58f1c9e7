//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p cbartgp --test acceptance`. Pass criterion
//! numbers as arguments (`-- 1 4 9`) to run a subset. The process exits
//! nonzero on a failed criterion only when `CBARTGP_ACCEPTANCE_STRICT=1`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cbartgp::cbart::{leaf_posterior, log_marginal, log_marginal_likelihood_ratio};
use cbartgp::covariance::{build_ar_precision, build_iid_precision};
use cbartgp::experiment::{run_replications, Experiment, ReplicateConfig};
use cbartgp::gp::gp_loglik;
use cbartgp::simgen::{gen_ar1_cubic, spatial_errors, SpatialTheta};
use cbartgp::tree::{
    apply_proposal, build_dummy, propose, propose_death_at, reorder, CutGrid, ProposalConfig, ProposalKind,
};
use cbartgp::{
    fit_gp_mle, run_cbart, CbartConfig, CovarianceModel, Covariates, DummyDesign, GpKind, Locations, MaternNu,
    PrecisionView, Proposal, Tree,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------------------
// random instances

struct Instance {
    x: Covariates,
    tree: Tree,
    design: DummyDesign,
    grid: CutGrid,
    precision: PrecisionView,
    sigma: DMatrix<f64>,
    r: Vec<f64>,
    tau: f64,
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_x(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Covariates {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect();
    Covariates::from_rows(&rows).unwrap()
}

fn birth_only() -> ProposalConfig {
    ProposalConfig {
        birth_prob: 1.0,
        ..ProposalConfig::default()
    }
}

/// Grow by accepted births until `b` leaves or no leaf can split.
fn grow(tree: &mut Tree, design: &mut DummyDesign, x: &Covariates, grid: &CutGrid, b: usize, rng: &mut ChaCha8Rng) {
    while design.b() < b {
        match propose(tree, design, x, grid, &birth_only(), rng) {
            Ok(p) => apply_proposal(tree, design, p),
            Err(_) => break,
        }
    }
}

/// Σ as either AR(1) or a spatial kernel with nugget, with its precision.
fn random_sigma(rng: &mut ChaCha8Rng, n: usize) -> (PrecisionView, DMatrix<f64>) {
    let model = match rng.random_range(0..3) {
        0 => CovarianceModel::Ar1 {
            rho: rng.random_range(0.0..0.95),
            sigma: rng.random_range(0.3..2.0),
        },
        1 => CovarianceModel::SpatialExp {
            sigma2: rng.random_range(0.5..3.0),
            phi: rng.random_range(0.1..1.0),
            tau2: rng.random_range(0.1..1.0),
        },
        _ => CovarianceModel::SpatialMatern {
            sigma2: rng.random_range(0.5..3.0),
            phi: rng.random_range(0.1..1.0),
            tau2: rng.random_range(0.1..1.0),
            nu: MaternNu::ThreeHalves,
        },
    };
    let locations = if matches!(model, CovarianceModel::Ar1 { .. }) {
        Locations::sequence(n)
    } else {
        Locations::Points((0..n).map(|_| [rng.random(), rng.random()]).collect())
    };
    let precision = model.precision(&locations).unwrap();
    let sigma = model.covariance_dense(&locations).unwrap();
    (precision, sigma)
}

fn instance(rng: &mut ChaCha8Rng, max_n: usize, max_b: usize) -> Instance {
    let n = rng.random_range(6..=max_n);
    let x = random_x(rng, n, 2);
    let grid = CutGrid::from_covariates(&x);
    let mut tree = Tree::root(0.0);
    let mut design = build_dummy(&tree, &x);
    let b = rng.random_range(1..=max_b);
    grow(&mut tree, &mut design, &x, &grid, b, rng);
    let (precision, sigma) = random_sigma(rng, n);
    let r = normals(rng, n).into_iter().map(|v| 2.0 * v).collect();
    let tau = rng.random_range(0.2..2.0);
    Instance {
        x,
        tree,
        design,
        grid,
        precision,
        sigma,
        r,
        tau,
    }
}

/// log N(r; 0, Σ + τ²DDᵀ) by a dense Cholesky of the full covariance.
fn dense_log_density(r: &[f64], sigma: &DMatrix<f64>, d: &DMatrix<f64>, tau: f64) -> f64 {
    let n = r.len();
    let cov = sigma + d * d.transpose() * (tau * tau);
    let chol = cov.cholesky().expect("covariance is positive definite");
    let rv = DVector::from_column_slice(r);
    let sol = chol.solve(&rv);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + rv.dot(&sol))
}

fn rel_err_of_exp(log_a: f64, log_b: f64) -> f64 {
    (log_a - log_b).exp_m1().abs()
}

fn birth_of(inst: &Instance, rng: &mut ChaCha8Rng) -> Option<Proposal> {
    propose(&inst.tree, &inst.design, &inst.x, &inst.grid, &birth_only(), rng).ok()
}

fn death_of(inst: &Instance, rng: &mut ChaCha8Rng) -> Option<Proposal> {
    let nogs = inst.tree.nog_ids();
    if nogs.is_empty() {
        return None;
    }
    let node = nogs[rng.random_range(0..nogs.len())];
    propose_death_at(&inst.tree, &inst.design, &inst.x, &inst.grid, &ProposalConfig::default(), node).ok()
}

// ---------------------------------------------------------------------------
// criteria

fn c1_marginal_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let inst = instance(&mut rng, 20, 5);
        let got = log_marginal(&inst.r, &inst.design, &inst.precision, inst.tau).unwrap();
        let want = dense_log_density(&inst.r, &inst.sigma, &inst.design.to_dense(), inst.tau);
        worst = worst.max(rel_err_of_exp(got, want));
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-8 && within(t, 5.0),
        format!("100 instances, max rel err {worst:.2e} (tol 1e-8), {:.2}s (limit 5s)", t.as_secs_f64()),
    )
}

fn ratio_vs_difference(inst: &Instance, p: &Proposal) -> f64 {
    let log_ratio = log_marginal_likelihood_ratio(&inst.r, &inst.precision, &inst.design, p, inst.tau).unwrap();
    let cur = log_marginal(&inst.r, &inst.design, &inst.precision, inst.tau).unwrap();
    let new = log_marginal(&inst.r, &p.new_design, &inst.precision, inst.tau).unwrap();
    rel_err_of_exp(log_ratio, new - cur)
}

fn c2_ratio_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut births, mut deaths) = (0, 0);
    let mut worst: f64 = 0.0;
    while births < 100 || deaths < 100 {
        let inst = instance(&mut rng, 20, 5);
        if births < 100 {
            if let Some(p) = birth_of(&inst, &mut rng) {
                worst = worst.max(ratio_vs_difference(&inst, &p));
                births += 1;
            }
        }
        if deaths < 100 {
            if let Some(p) = death_of(&inst, &mut rng) {
                worst = worst.max(ratio_vs_difference(&inst, &p));
                deaths += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-8 && within(t, 5.0),
        format!(
            "{births} births + {deaths} deaths, max rel err {worst:.2e} (tol 1e-8), {:.2}s (limit 5s)",
            t.as_secs_f64()
        ),
    )
}

/// The design seen after moving observation perm[k] to position k.
fn permute_design(design: &DummyDesign, perm: &[usize]) -> DummyDesign {
    let assignment: Vec<usize> = perm.iter().map(|&i| design.assignment[i]).collect();
    let mut omega = vec![Vec::new(); design.b()];
    for (k, &j) in assignment.iter().enumerate() {
        omega[j].push(k);
    }
    DummyDesign {
        assignment,
        omega,
        leaf_nodes: design.leaf_nodes.clone(),
    }
}

fn c3_reordering_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 50 {
        let inst = instance(&mut rng, 20, 5);
        let proposal = if rng.random::<bool>() {
            death_of(&inst, &mut rng).or_else(|| birth_of(&inst, &mut rng))
        } else {
            birth_of(&inst, &mut rng)
        };
        let Some(p) = proposal else { continue };
        let n = inst.r.len();
        // Alternate between the leaf-contiguous ordering and a uniform shuffle.
        let perm: Vec<usize> = if done % 2 == 0 {
            reorder(&inst.design).perm
        } else {
            let mut v: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            v
        };
        let r_p: Vec<f64> = perm.iter().map(|&i| inst.r[i]).collect();
        let prec_p = inst.precision.permuted(&perm).unwrap();
        let design_p = permute_design(&inst.design, &perm);
        let mut p_p = p.clone();
        p_p.new_design = permute_design(&p.new_design, &perm);
        let a = log_marginal_likelihood_ratio(&inst.r, &inst.precision, &inst.design, &p, inst.tau).unwrap();
        let b = log_marginal_likelihood_ratio(&r_p, &prec_p, &design_p, &p_p, inst.tau).unwrap();
        worst = worst.max(rel_err_of_exp(a, b));
        done += 1;
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-10 && within(t, 5.0),
        format!("50 permutations, max rel err {worst:.2e} (tol 1e-10), {:.2}s (limit 5s)", t.as_secs_f64()),
    )
}

/// Log ratio for iid errors from leaf counts and sums alone.
fn classical_log_ratio(r: &[f64], design: &DummyDesign, p: &Proposal, sigma2: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    let leaf = |members: &[usize]| {
        let n = members.len() as f64;
        let s: f64 = members.iter().map(|&i| r[i]).sum();
        0.5 * (sigma2 / (sigma2 + n * t2)).ln() + t2 * s * s / (2.0 * sigma2 * (sigma2 + n * t2))
    };
    let j = p.leaf_index;
    match p.kind {
        ProposalKind::Birth { .. } => {
            let (l, rr) = (&p.new_design.omega[j], &p.new_design.omega[j + 1]);
            leaf(l) + leaf(rr) - leaf(&design.omega[j])
        }
        ProposalKind::Death => {
            leaf(&p.new_design.omega[j]) - leaf(&design.omega[j]) - leaf(&design.omega[j + 1])
        }
    }
}

fn c4_iid_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let mut inst = instance(&mut rng, 20, 5);
        let sigma2 = rng.random_range(0.1..3.0);
        inst.precision = build_iid_precision(sigma2, inst.r.len()).unwrap();
        let p = if done % 2 == 0 { birth_of(&inst, &mut rng) } else { death_of(&inst, &mut rng) };
        let Some(p) = p else { continue };
        let got = log_marginal_likelihood_ratio(&inst.r, &inst.precision, &inst.design, &p, inst.tau).unwrap();
        let want = classical_log_ratio(&inst.r, &inst.design, &p, sigma2, inst.tau);
        worst = worst.max(rel_err_of_exp(got, want));
        done += 1;
    }

    let d = gen_ar1_cubic(80, 0.0, 0.2, 7).unwrap();
    let config = CbartConfig {
        m: 20,
        n_iter: 200,
        burn_in: 100,
        rng_seed: 11,
        ..CbartConfig::default()
    };
    let iid = run_cbart(&d.y, &d.x, &build_iid_precision(0.2 * 0.2, 80).unwrap(), &config).unwrap();
    let ar = run_cbart(&d.y, &d.x, &build_ar_precision(0.0, 0.2, 80).unwrap(), &config).unwrap();
    let identical = iid.draws.len() == ar.draws.len()
        && iid
            .draws
            .iter()
            .flatten()
            .zip(ar.draws.iter().flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        worst <= 1e-10 && identical,
        format!(
            "100 ratios vs classical formula, max rel err {worst:.2e} (tol 1e-10); rho=0 draws bit-identical: {identical}"
        ),
    )
}

fn c5_leaf_posterior() -> Outcome {
    const DRAWS: usize = 100_000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_z: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..10 {
        let inst = instance(&mut rng, 20, 4);
        let b = inst.design.b();
        // closed form from dense matrices
        let d = inst.design.to_dense();
        let q = inst.sigma.clone().try_inverse().unwrap();
        let a = DMatrix::identity(b, b) / (inst.tau * inst.tau) + d.transpose() * &q * &d;
        let cov = a.clone().try_inverse().unwrap();
        let mean = &cov * d.transpose() * &q * DVector::from_column_slice(&inst.r);

        let post = leaf_posterior(&inst.r, &inst.design, &inst.precision, inst.tau).unwrap();
        let mut sum = DVector::<f64>::zeros(b);
        let mut outer = DMatrix::<f64>::zeros(b, b);
        for _ in 0..DRAWS {
            let v = DVector::from_vec(post.draw(&mut rng)) - &mean;
            sum += &v;
            outer += &v * v.transpose();
        }
        let nd = DRAWS as f64;
        let emp_mean = &sum / nd;
        let emp_cov = &outer / nd - &emp_mean * emp_mean.transpose();
        for i in 0..b {
            let se = (cov[(i, i)] / nd).sqrt();
            worst_z = worst_z.max(emp_mean[i].abs() / se);
            checks += 1;
            for j in 0..=i {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / nd).sqrt();
                worst_z = worst_z.max((emp_cov[(i, j)] - cov[(i, j)]).abs() / se);
                checks += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst_z <= 3.0 && within(t, 30.0),
        format!(
            "10 instances, {checks} moments, max |z| {worst_z:.2} (tol 3), {:.1}s (limit 30s)",
            t.as_secs_f64()
        ),
    )
}

fn c6_fig2() -> Outcome {
    let start = Instant::now();
    let cfg = ReplicateConfig::new(Experiment::Fig2);
    let report = match run_replications(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let (c, b) = (report.summary["mean_mse_f_cbart"], report.summary["mean_mse_f_bart"]);
    let t = start.elapsed();
    outcome(
        c <= 0.5 * b && within(t, 600.0),
        format!(
            "{} seeds, mean MSE(f) CBART {c:.5} vs BART {b:.5}, ratio {:.3} (need <= 0.5), {:.0}s (limit 600s)",
            cfg.seeds,
            c / b,
            t.as_secs_f64()
        ),
    )
}

fn c7_two_stage() -> Outcome {
    let start = Instant::now();
    let cfg = ReplicateConfig::new(Experiment::Sec32);
    let report = match run_replications(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let hits = report
        .rows
        .iter()
        .filter(|r| {
            let rho = r.metrics.get("rho_hat").copied().unwrap_or(f64::NAN);
            let sigma = r.metrics.get("sigma_hat").copied().unwrap_or(f64::NAN);
            (rho - 0.8).abs() <= 0.15 && (sigma - 0.1).abs() <= 0.05
        })
        .count();
    let frac = hits as f64 / report.rows.len() as f64;
    let ws: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:.1}", r.metrics.get("selected_w").copied().unwrap_or(f64::NAN)))
        .collect();
    let t = start.elapsed();
    outcome(
        frac >= 0.8 && within(t, 1800.0),
        format!(
            "{hits}/{} seeds with theta in band ({:.0}%, need >= 80%), selected w [{}], {:.0}s (limit 1800s)",
            report.rows.len(),
            100.0 * frac,
            ws.join(" "),
            t.as_secs_f64()
        ),
    )
}

fn c8_spatial() -> Outcome {
    let start = Instant::now();
    let cfg = ReplicateConfig::new(Experiment::Spatial);
    let report = match run_replications(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let (rf, ry) = (report.summary["median_reduction_f"], report.summary["median_reduction_y"]);
    let t = start.elapsed();
    outcome(
        rf >= 0.20 && ry >= 0.05 && within(t, 3600.0),
        format!(
            "{} seeds, median reduction MSE(f) {:.1}% (need >= 20%), MSE(y*) {:.1}% (need >= 5%), {:.0}s (limit 3600s)",
            report.rows.len(),
            100.0 * rf,
            100.0 * ry,
            t.as_secs_f64()
        ),
    )
}

fn c9_gp_mle() -> Outcome {
    let ar = gen_ar1_cubic(2000, 0.8, 0.1, 9).unwrap();
    let ar_fit = fit_gp_mle(&ar.eta, GpKind::Ar1, &ar.locations).unwrap();
    let CovarianceModel::Ar1 { rho, .. } = ar_fit.model else {
        return outcome(false, "AR1 fit returned a non-AR1 model".into());
    };
    let ar_ok = (rho - 0.8).abs() <= 0.05;

    let theta = SpatialTheta::default();
    let truth = CovarianceModel::SpatialExp {
        sigma2: theta.sigma2,
        phi: theta.phi,
        tau2: theta.tau2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut spatial_ok = true;
    let mut notes = Vec::new();
    for seed in 1..=3u64 {
        let points: Vec<[f64; 2]> = (0..500).map(|_| [rng.random(), rng.random()]).collect();
        let (z, eps) = spatial_errors(&points, theta, seed).unwrap();
        let e: Vec<f64> = z.iter().zip(&eps).map(|(a, b)| a + b).collect();
        let loc = Locations::Points(points);
        let fit = fit_gp_mle(&e, GpKind::SpatialExp, &loc).unwrap();
        let tau2 = fit.model.nugget();
        let at_truth = gp_loglik(&e, &truth, &loc).unwrap();
        let ok = (tau2 - 1.0).abs() <= 0.5 && fit.loglik >= at_truth - 1e-6;
        spatial_ok &= ok;
        notes.push(format!("tau2 {tau2:.3}, loglik gain {:.3}", fit.loglik - at_truth));
    }
    outcome(
        ar_ok && spatial_ok,
        format!("AR1 n=2000 rho_hat {rho:.4} (truth 0.8 +-0.05); spatial n=500: {}", notes.join("; ")),
    )
}

fn c10_ratio_scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let sizes = [1_000usize, 10_000, 100_000];
    let mut costs = Vec::new();
    for &n in &sizes {
        let x = random_x(&mut rng, n, 2);
        let grid = CutGrid::from_covariates(&x);
        let mut tree = Tree::root(0.0);
        let mut design = build_dummy(&tree, &x);
        grow(&mut tree, &mut design, &x, &grid, 4, &mut rng);
        let precision = build_ar_precision(0.8, 0.1, n).unwrap();
        let r = normals(&mut rng, n);
        let proposals: Vec<Proposal> = (0..8)
            .filter_map(|_| propose(&tree, &design, &x, &grid, &ProposalConfig::default(), &mut rng).ok())
            .collect();
        let reps = (2_000_000 / n).max(3);
        let start = Instant::now();
        let mut acc = 0.0;
        for k in 0..reps {
            let p = &proposals[k % proposals.len()];
            acc += log_marginal_likelihood_ratio(&r, &precision, &design, p, 0.5).unwrap();
        }
        std::hint::black_box(acc);
        costs.push(start.elapsed().as_secs_f64() / reps as f64);
    }
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let slope = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    let per: Vec<String> = sizes
        .iter()
        .zip(&costs)
        .map(|(n, c)| format!("n={n}: {:.1}us", c * 1e6))
        .collect();
    outcome(
        slope <= 1.2,
        format!("{}; fitted exponent {slope:.3} (need <= 1.2)", per.join(", ")),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "marginal likelihood vs dense Gaussian density", c1_marginal_oracle),
        (2, "block ratio vs difference of log marginals", c2_ratio_equivalence),
        (3, "ratio invariant under observation reordering", c3_reordering_invariance),
        (4, "iid reduction", c4_iid_reduction),
        (5, "leaf posterior moments", c5_leaf_posterior),
        (6, "CBART with known AR(1) vs iid BART", c6_fig2),
        (7, "two-stage recovery of AR(1) parameters", c7_two_stage),
        (8, "spatial estimation and prediction", c8_spatial),
        (9, "GP maximum likelihood", c9_gp_mle),
        (10, "ratio cost scaling with banded precision", c10_ratio_scaling),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("CBARTGP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let result = run();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] C{id} {name}: {}", result.detail);
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}
