//! Error covariance models and their precision matrices.
//!
//! Autoregressive models are handled entirely through their banded
//! precision `τ⁻² AᵀA` (A unit lower-triangular with the negated AR
//! coefficients on the sub-diagonals), so they scale to very long series.
//! Spatial models are dense and factorised with a Cholesky decomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness of the Matérn kernel; only the half-integer closed forms are
/// supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

/// A parameterised error covariance Σ(θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceModel {
    /// Σ = σ²I.
    Iid { sigma2: f64 },
    /// η_i = ρ η_{i-1} + ε_i, ε_i ~ N(0, σ²), η_1 = ε_1.
    Ar1 { rho: f64, sigma: f64 },
    /// η_i = Σ_k a_k η_{i-k} + ε_i, ε_i ~ N(0, τ²); the recursion starts
    /// from the available lags only.
    Arp { coeffs: Vec<f64>, tau2: f64 },
    /// Σ_jk = σ² exp(-d_jk / φ) + τ² δ_jk.
    SpatialExp { sigma2: f64, phi: f64, tau2: f64 },
    /// Matérn kernel in distance d_jk plus nugget τ².
    SpatialMatern {
        sigma2: f64,
        phi: f64,
        tau2: f64,
        nu: MaternNu,
    },
}

/// Observation labels: time indices or planar coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locations {
    Index(Vec<usize>),
    Points(Vec<[f64; 2]>),
}

impl Locations {
    /// Consecutive indices 1..=n.
    pub fn sequence(n: usize) -> Self {
        Locations::Index((1..=n).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            Locations::Index(v) => v.len(),
            Locations::Points(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Option<&[[f64; 2]]> {
        match self {
            Locations::Points(p) => Some(p),
            Locations::Index(_) => None,
        }
    }
}

impl CovarianceModel {
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            CovarianceModel::SpatialExp { .. } | CovarianceModel::SpatialMatern { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            CovarianceModel::Iid { sigma2 } => positive("sigma2", *sigma2),
            CovarianceModel::Ar1 { rho, sigma } => {
                if !(0.0..1.0).contains(rho) {
                    return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {rho}")));
                }
                positive("sigma", *sigma)
            }
            CovarianceModel::Arp { coeffs, tau2 } => {
                if coeffs.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite AR coefficient".into()));
                }
                positive("tau2", *tau2)
            }
            CovarianceModel::SpatialExp { sigma2, phi, tau2 }
            | CovarianceModel::SpatialMatern {
                sigma2, phi, tau2, ..
            } => {
                if !(sigma2.is_finite() && *sigma2 >= 0.0) {
                    return Err(Error::InvalidParameter(format!("sigma2 must be non-negative, got {sigma2}")));
                }
                if !(tau2.is_finite() && *tau2 >= 0.0) {
                    return Err(Error::InvalidParameter(format!("tau2 must be non-negative, got {tau2}")));
                }
                positive("phi", *phi)
            }
        }
    }

    /// Spatial kernel (without nugget) at distance `d`.
    pub fn kernel(&self, d: f64) -> f64 {
        match *self {
            CovarianceModel::SpatialExp { sigma2, phi, .. } => sigma2 * (-d / phi).exp(),
            CovarianceModel::SpatialMatern { sigma2, phi, nu, .. } => matern(sigma2, phi, nu, d),
            _ => 0.0,
        }
    }

    pub fn nugget(&self) -> f64 {
        match *self {
            CovarianceModel::SpatialExp { tau2, .. } | CovarianceModel::SpatialMatern { tau2, .. } => tau2,
            _ => 0.0,
        }
    }

    /// Precision view for `n` consecutive (AR/iid) or spatial observations.
    pub fn precision(&self, locations: &Locations) -> Result<PrecisionView> {
        self.validate()?;
        match self {
            CovarianceModel::Iid { sigma2 } => build_iid_precision(*sigma2, locations.len()),
            CovarianceModel::Ar1 { rho, sigma } => build_ar_precision(*rho, *sigma, locations.len()),
            CovarianceModel::Arp { coeffs, tau2 } => build_arp_precision(coeffs, *tau2, locations.len()),
            _ => {
                let points = locations.points().ok_or_else(|| {
                    Error::UnsupportedLocations("spatial covariance needs 2-D points".into())
                })?;
                Ok(build_spatial_covariance(self, points)?.1)
            }
        }
    }

    /// Dense Σ; intended for moderate n (oracles, simulation).
    pub fn covariance_dense(&self, locations: &Locations) -> Result<DMatrix<f64>> {
        self.validate()?;
        let n = locations.len();
        match self {
            CovarianceModel::Iid { sigma2 } => Ok(DMatrix::identity(n, n) * *sigma2),
            CovarianceModel::Ar1 { rho, sigma } => Ok(ar_covariance_dense(&[*rho], sigma * sigma, n)),
            CovarianceModel::Arp { coeffs, tau2 } => Ok(ar_covariance_dense(coeffs, *tau2, n)),
            _ => {
                let points = locations.points().ok_or_else(|| {
                    Error::UnsupportedLocations("spatial covariance needs 2-D points".into())
                })?;
                Ok(spatial_covariance_matrix(self, points))
            }
        }
    }
}

fn matern(sigma2: f64, phi: f64, nu: MaternNu, d: f64) -> f64 {
    match nu {
        MaternNu::Half => sigma2 * (-d / phi).exp(),
        MaternNu::ThreeHalves => {
            let r = 3f64.sqrt() * d / phi;
            sigma2 * (1.0 + r) * (-r).exp()
        }
        MaternNu::FiveHalves => {
            let r = 5f64.sqrt() * d / phi;
            sigma2 * (1.0 + r + r * r / 3.0) * (-r).exp()
        }
    }
}

pub fn euclidean(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Symmetric banded matrix; `diags[d][i]` holds entry (i, i+d).
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    diags: Vec<Vec<f64>>,
}

impl BandedSym {
    pub fn bandwidth(&self) -> usize {
        self.diags.len() - 1
    }

    #[inline]
    fn get(&self, h: usize, l: usize) -> f64 {
        let (lo, hi) = if h <= l { (h, l) } else { (l, h) };
        let d = hi - lo;
        if d < self.diags.len() {
            self.diags[d][lo]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionStorage {
    Banded(BandedSym),
    Dense(DMatrix<f64>),
}

/// Σ⁻¹ together with log|Σ|.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionView {
    storage: PrecisionStorage,
    logdet_sigma: f64,
    n: usize,
    /// Diagonal jitter that was needed to factorise Σ (0 when none).
    jitter: f64,
}

impl PrecisionView {
    /// Wrap a dense, symmetric precision matrix.
    pub fn from_dense(precision: DMatrix<f64>, logdet_sigma: f64) -> Result<Self> {
        let n = precision.nrows();
        if precision.ncols() != n {
            return Err(Error::DimensionMismatch("precision must be square".into()));
        }
        Ok(Self {
            storage: PrecisionStorage::Dense(precision),
            logdet_sigma,
            n,
            jitter: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn logdet_sigma(&self) -> f64 {
        self.logdet_sigma
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn storage(&self) -> &PrecisionStorage {
        &self.storage
    }

    /// Band half-width for banded storage, `None` for dense.
    pub fn bandwidth(&self) -> Option<usize> {
        match &self.storage {
            PrecisionStorage::Banded(b) => Some(b.bandwidth()),
            PrecisionStorage::Dense(_) => None,
        }
    }

    #[inline]
    pub fn get(&self, h: usize, l: usize) -> f64 {
        match &self.storage {
            PrecisionStorage::Banded(b) => b.get(h, l),
            PrecisionStorage::Dense(m) => m[(h, l)],
        }
    }

    /// Visit the structurally non-zero entries (l, q_hl) of row `h`.
    #[inline]
    pub fn for_each_in_row(&self, h: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            PrecisionStorage::Banded(b) => {
                let k = b.bandwidth();
                let lo = h.saturating_sub(k);
                let hi = (h + k).min(self.n - 1);
                for l in lo..=hi {
                    f(l, b.get(h, l));
                }
            }
            PrecisionStorage::Dense(m) => {
                // column-major storage; the matrix is symmetric so column h is row h
                let col = m.column(h);
                for (l, &q) in col.iter().enumerate() {
                    f(l, q);
                }
            }
        }
    }

    /// Σ⁻¹ v.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(v, &mut out);
        out
    }

    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        match &self.storage {
            PrecisionStorage::Banded(b) => {
                for (h, o) in out.iter_mut().enumerate() {
                    *o = b.diags[0][h] * v[h];
                }
                for (d, diag) in b.diags.iter().enumerate().skip(1) {
                    for (i, &q) in diag.iter().enumerate() {
                        out[i] += q * v[i + d];
                        out[i + d] += q * v[i];
                    }
                }
            }
            PrecisionStorage::Dense(m) => {
                for (h, o) in out.iter_mut().enumerate() {
                    let col = m.column(h);
                    let mut acc = 0.0;
                    for (q, x) in col.iter().zip(v) {
                        acc += q * x;
                    }
                    *o = acc;
                }
            }
        }
    }

    /// vᵀ Σ⁻¹ v.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            PrecisionStorage::Dense(m) => m.clone(),
            PrecisionStorage::Banded(_) => DMatrix::from_fn(self.n, self.n, |h, l| self.get(h, l)),
        }
    }

    /// Simultaneous row/column permutation: entry (h, l) of the result is
    /// q_{perm[h], perm[l]}.
    pub fn permuted(&self, perm: &[usize]) -> Result<PrecisionView> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let dense = DMatrix::from_fn(self.n, self.n, |h, l| self.get(perm[h], perm[l]));
        PrecisionView::from_dense(dense, self.logdet_sigma)
    }
}

/// Σ = σ²I, stored as a bandwidth-0 banded precision.
pub fn build_iid_precision(sigma2: f64, n: usize) -> Result<PrecisionView> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(PrecisionView {
        storage: PrecisionStorage::Banded(BandedSym {
            n,
            diags: vec![vec![1.0 / sigma2; n]],
        }),
        logdet_sigma: n as f64 * sigma2.ln(),
        n,
        jitter: 0.0,
    })
}

/// AR(1) precision σ⁻²AᵀA (tridiagonal), log|Σ| = 2n log σ.
pub fn build_ar_precision(rho: f64, sigma: f64, n: usize) -> Result<PrecisionView> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {rho}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    build_arp_precision(&[rho], sigma * sigma, n)
}

/// AR(p) precision τ⁻²AᵀA with bandwidth p, log|Σ| = n log τ².
pub fn build_arp_precision(coeffs: &[f64], tau2: f64, n: usize) -> Result<PrecisionView> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(tau2.is_finite() && tau2 > 0.0) {
        return Err(Error::InvalidParameter(format!("tau2 must be positive, got {tau2}")));
    }
    let p = coeffs.len();
    let k = p.min(n - 1);
    let mut diags: Vec<Vec<f64>> = (0..=k).map(|d| vec![0.0; n - d]).collect();
    // Row i of A has 1 at column i and -a_j at column i-j.
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(p + 1);
    for i in 0..n {
        row.clear();
        row.push((i, 1.0));
        for (j, &a) in coeffs.iter().enumerate() {
            let lag = j + 1;
            if lag <= i {
                row.push((i - lag, -a));
            }
        }
        for &(c1, v1) in &row {
            for &(c2, v2) in &row {
                if c1 <= c2 {
                    diags[c2 - c1][c1] += v1 * v2;
                }
            }
        }
    }
    // each off-diagonal pair was visited once in the (c1 <= c2) half
    let inv_tau2 = 1.0 / tau2;
    for diag in &mut diags {
        for q in diag.iter_mut() {
            *q *= inv_tau2;
        }
    }
    Ok(PrecisionView {
        storage: PrecisionStorage::Banded(BandedSym { n, diags }),
        logdet_sigma: n as f64 * tau2.ln(),
        n,
        jitter: 0.0,
    })
}

/// Σ = τ² A⁻¹A⁻ᵀ built densely by forward substitution.
pub fn ar_covariance_dense(coeffs: &[f64], innovation_var: f64, n: usize) -> DMatrix<f64> {
    // Columns of A⁻¹: solve A x = e_j.
    let mut a_inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let mut v = if i == j { 1.0 } else { 0.0 };
            for (k, &a) in coeffs.iter().enumerate() {
                let lag = k + 1;
                if lag <= i && i - lag >= j {
                    v += a * a_inv[(i - lag, j)];
                }
            }
            a_inv[(i, j)] = v;
        }
    }
    &a_inv * a_inv.transpose() * innovation_var
}

pub fn spatial_covariance_matrix(model: &CovarianceModel, points: &[[f64; 2]]) -> DMatrix<f64> {
    let n = points.len();
    let tau2 = model.nugget();
    DMatrix::from_fn(n, n, |j, k| {
        let c = model.kernel(euclidean(&points[j], &points[k]));
        if j == k {
            c + tau2
        } else {
            c
        }
    })
}

/// Cholesky with the jitter escalation 1e-10·mean(diag), ×10 per retry,
/// up to 1e-4·mean(diag).
pub fn factorize_with_jitter(sigma: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(sigma.clone()) {
        return Ok((chol, 0.0));
    }
    let n = sigma.nrows();
    let mean_diag = sigma.diagonal().sum() / n.max(1) as f64;
    let mut attempted = Vec::new();
    let mut rel = 1e-10;
    while rel <= 1e-4 * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        attempted.push(jitter);
        let mut m = sigma.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite { attempted })
}

pub fn cholesky_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Dense spatial Σ = K + τ²I and its precision view.
pub fn build_spatial_covariance(
    model: &CovarianceModel,
    points: &[[f64; 2]],
) -> Result<(DMatrix<f64>, PrecisionView)> {
    if !model.is_spatial() {
        return Err(Error::InvalidParameter("build_spatial_covariance needs a spatial model".into()));
    }
    model.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidParameter("no locations".into()));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("non-finite location".into()));
    }
    let sigma = spatial_covariance_matrix(model, points);
    let (chol, jitter) = factorize_with_jitter(&sigma)?;
    let logdet = cholesky_logdet(&chol);
    let mut inv = chol.inverse();
    // symmetrise away round-off so q_hl == q_lh exactly
    let n = inv.nrows();
    for h in 0..n {
        for l in (h + 1)..n {
            let v = 0.5 * (inv[(h, l)] + inv[(l, h)]);
            inv[(h, l)] = v;
            inv[(l, h)] = v;
        }
    }
    let view = PrecisionView {
        storage: PrecisionStorage::Dense(inv),
        logdet_sigma: logdet,
        n,
        jitter,
    };
    Ok((sigma, view))
}

/// Σ_{h∈Ω_i} Σ_{l∈Ω_j} q_hl, skipping structural zeros of banded storage.
pub fn blockwise_precision_sum(view: &PrecisionView, omega_i: &[usize], omega_j: &[usize]) -> Result<f64> {
    let n = view.n();
    if let Some(&bad) = omega_i.iter().chain(omega_j).find(|&&h| h >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n });
    }
    match view.storage() {
        PrecisionStorage::Dense(m) => {
            let mut total = 0.0;
            for &h in omega_i {
                for &l in omega_j {
                    total += m[(h, l)];
                }
            }
            Ok(total)
        }
        PrecisionStorage::Banded(b) => {
            let k = b.bandwidth();
            let sorted;
            let omega_j = if omega_j.windows(2).all(|w| w[0] <= w[1]) {
                omega_j
            } else {
                let mut v = omega_j.to_vec();
                v.sort_unstable();
                sorted = v;
                &sorted[..]
            };
            let mut total = 0.0;
            for &h in omega_i {
                let lo = h.saturating_sub(k);
                let start = omega_j.partition_point(|&l| l < lo);
                for &l in &omega_j[start..] {
                    if l > h + k {
                        break;
                    }
                    total += b.get(h, l);
                }
            }
            Ok(total)
        }
    }
}

/// Cholesky solve helper for dense symmetric positive-definite systems.
pub fn spd_solve(chol: &Cholesky<f64, Dyn>, rhs: &[f64]) -> Vec<f64> {
    chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec()
}
