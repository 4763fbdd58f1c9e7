//! Simulation designs: the 1-D AR(1) cubic example, the three spatial
//! scenarios and the five-point tree example.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{factorize_with_jitter, spatial_covariance_matrix, CovarianceModel, Locations};
use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tree::{SplitRule, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// Error model that generated η (for spatial data, the field kernel
    /// plus nugget).
    pub error_model: CovarianceModel,
    pub scenario: Option<u8>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    pub y: Vec<f64>,
    pub x: Covariates,
    pub locations: Locations,
    pub f_true: Vec<f64>,
    /// The error realisation y - f_true.
    pub eta: Vec<f64>,
    pub truth: SimTruth,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Rows of a dataset restricted to one side of the split.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPart {
    pub y: Vec<f64>,
    pub x: Covariates,
    pub locations: Locations,
    pub f_true: Vec<f64>,
}

impl SimDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `None` when `rows` is empty.
    pub fn part(&self, rows: &[usize]) -> Option<DataPart> {
        if rows.is_empty() {
            return None;
        }
        let x_rows: Vec<Vec<f64>> = rows.iter().map(|&i| self.x.row(i).to_vec()).collect();
        let locations = match &self.locations {
            Locations::Index(ix) => Locations::Index(rows.iter().map(|&i| ix[i]).collect()),
            Locations::Points(p) => Locations::Points(rows.iter().map(|&i| p[i]).collect()),
        };
        Some(DataPart {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x: Covariates::from_rows(&x_rows).ok()?,
            locations,
            f_true: rows.iter().map(|&i| self.f_true[i]).collect(),
        })
    }

    pub fn train_part(&self) -> DataPart {
        self.part(&self.train).expect("generators produce a nonempty training split")
    }

    pub fn test_part(&self) -> Option<DataPart> {
        self.part(&self.test)
    }
}

fn normals(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// y_i = x_i³ + η_i with x_i ~ U(-1, 1) sorted ascending and
/// η_i = ρ η_{i-1} + ε_i, η_1 = ε_1, ε_i ~ N(0, σ²).
pub fn gen_ar1_cubic(n: usize, rho: f64, sigma: f64, seed: u64) -> Result<SimDataset> {
    let model = CovarianceModel::Ar1 { rho, sigma };
    model.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut xr = rng::stream(seed, rng::STREAM_COVARIATES);
    let mut x: Vec<f64> = (0..n).map(|_| xr.random_range(-1.0..1.0)).collect();
    x.sort_by(f64::total_cmp);
    let eps = normals(&mut rng::stream(seed, rng::STREAM_INNOVATIONS), n);
    let mut eta = Vec::with_capacity(n);
    let mut prev = 0.0;
    for (i, e) in eps.iter().enumerate() {
        prev = if i == 0 { sigma * e } else { rho * prev + sigma * e };
        eta.push(prev);
    }
    let f_true: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
    let y = f_true.iter().zip(&eta).map(|(f, e)| f + e).collect();
    Ok(SimDataset {
        y,
        x: Covariates::from_column(&x)?,
        locations: Locations::sequence(n),
        f_true,
        eta,
        truth: SimTruth {
            error_model: model,
            scenario: None,
            seed,
        },
        train: (0..n).collect(),
        test: Vec::new(),
    })
}

/// Spatial design parameters {σ², φ, τ²}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialTheta {
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl Default for SpatialTheta {
    fn default() -> Self {
        Self {
            sigma2: 3.0,
            phi: 6.0,
            tau2: 1.0,
        }
    }
}

/// Draw z ~ GP(0, σ² exp(-d/φ)) at `points` plus iid N(0, τ²) noise;
/// returns (z, ε).
pub fn spatial_errors(points: &[[f64; 2]], theta: SpatialTheta, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if theta.sigma2 < 0.0 || theta.tau2 < 0.0 || theta.phi.is_nan() || theta.phi <= 0.0 {
        return Err(Error::InvalidParameter(format!("invalid spatial parameters {theta:?}")));
    }
    let n = points.len();
    let z = if theta.sigma2 > 0.0 {
        let kernel = CovarianceModel::SpatialExp {
            sigma2: theta.sigma2,
            phi: theta.phi,
            tau2: 0.0,
        };
        let (chol, _) = factorize_with_jitter(&spatial_covariance_matrix(&kernel, points))?;
        let u = DVector::from_vec(normals(&mut rng::stream(seed, rng::STREAM_FIELD), n));
        (chol.l() * u).as_slice().to_vec()
    } else {
        vec![0.0; n]
    };
    let tau = theta.tau2.sqrt();
    let eps = normals(&mut rng::stream(seed, rng::STREAM_NUGGET), n)
        .into_iter()
        .map(|e| tau * e)
        .collect();
    Ok((z, eps))
}

/// Spatial scenarios on the unit square with f(x) = x³:
/// 1. x = s₁ + s₂, 2. x = 2u, 3. x = 0.5(s₁ + s₂) + u, with u ~ U(0, 1).
///
/// The first `n_train` rows form the training split.
pub fn gen_spatial(scenario: u8, n_train: usize, n_test: usize, theta: SpatialTheta, seed: u64) -> Result<SimDataset> {
    if !(1..=3).contains(&scenario) {
        return Err(Error::InvalidParameter(format!("unknown scenario {scenario}")));
    }
    let n = n_train + n_test;
    if n_train == 0 {
        return Err(Error::InvalidParameter("n_train must be positive".into()));
    }
    let mut lr = rng::stream(seed, rng::STREAM_LOCATIONS);
    let points: Vec<[f64; 2]> = (0..n).map(|_| [lr.random::<f64>(), lr.random::<f64>()]).collect();
    let mut ur = rng::stream(seed, rng::STREAM_SCENARIO);
    let x: Vec<f64> = points
        .iter()
        .map(|s| match scenario {
            1 => s[0] + s[1],
            2 => 2.0 * ur.random::<f64>(),
            _ => 0.5 * (s[0] + s[1]) + ur.random::<f64>(),
        })
        .collect();
    let (z, eps) = spatial_errors(&points, theta, seed)?;
    let f_true: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
    let eta: Vec<f64> = z.iter().zip(&eps).map(|(a, b)| a + b).collect();
    let y = f_true.iter().zip(&eta).map(|(f, e)| f + e).collect();
    Ok(SimDataset {
        y,
        x: Covariates::from_column(&x)?,
        locations: Locations::Points(points),
        f_true,
        eta,
        truth: SimTruth {
            error_model: CovarianceModel::SpatialExp {
                sigma2: theta.sigma2,
                phi: theta.phi,
                tau2: theta.tau2,
            },
            scenario: Some(scenario),
            seed,
        },
        train: (0..n_train).collect(),
        test: (n_train..n).collect(),
    })
}

/// Five observations and a three-leaf tree with leaf sets
/// {y₂}, {y₃, y₄}, {y₁, y₅} in depth-first order.
pub fn gen_five_point_example() -> (Covariates, Tree) {
    let x = Covariates::from_rows(&[
        vec![0.8, 0.9],
        vec![0.2, 0.5],
        vec![0.7, 0.1],
        vec![0.9, 0.3],
        vec![0.6, 0.7],
    ])
    .expect("fixed rows");
    let mut tree = Tree::root(0.0);
    let root = tree.leaf_ids()[0];
    let (_, right) = tree.split_leaf(root, SplitRule { var: 0, cut: 0.5 }, 0.0, 0.0);
    tree.split_leaf(right, SplitRule { var: 1, cut: 0.4 }, 0.0, 0.0);
    (x, tree)
}
