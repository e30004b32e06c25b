//! Gaussian response layer with conjugate updates.
//!
//! Observations at each coordinate are Gaussian given the latent state,
//! y_{i,t} | U_{i,t}=u ~ N(μ_u, Σ_u). Means carry Normal priors and
//! covariances Inverse-Wishart priors, so both full conditionals are closed
//! form:
//!
//! ```text
//! μ_u | ·  ~  N(Ṽ_u m̃_u, Ṽ_u),   Ṽ_u⁻¹ = n_u Σ_u⁻¹ + V⁻¹,
//!                                  m̃_u  = Σ_u⁻¹ n_u ȳ_u + V⁻¹ m
//! Σ_u | ·  ~  IW(ν + n_u, S + S̃_u),  S̃_u = Σ (y−μ_u)(y−μ_u)' 1(U=u)
//! ```
//!
//! The univariate variant replaces the Inverse-Wishart with an
//! Inverse-Gamma: μ_u | · ~ N(m̃ṽ, ṽ) with ṽ = (n_u/σ²_u + 1/v)⁻¹ and
//! m̃ = n_u ȳ_u/σ²_u + m/v, and σ²_u | · ~ IG(a + n_u/2, b + ½Σ(y−μ_u)²).
//!
//! A state with no assigned observations falls back to its prior, which is
//! the n_u = 0 case of the same formulas.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::graph::NeighborhoodSystem;
use crate::latent::{LatentField, LatentParams};

#[derive(Debug, Error)]
pub enum EmissionError {
    #[error("covariance for state {state} is not symmetric positive definite")]
    NotSpd { state: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numeric failure for state {state}: {msg}")]
    Numeric { state: usize, msg: String },
}

const LN_2PI: f64 = 1.8378770664093453;

/// Per-state Gaussian parameters: a mean vector and an SPD covariance for
/// each of the K states. The univariate model is the d = 1 case.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionParams {
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl EmissionParams {
    pub fn new(means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self, EmissionError> {
        if means.is_empty() || means.len() != covs.len() {
            return Err(EmissionError::DimensionMismatch(
                "need one mean and one covariance per state".to_string(),
            ));
        }
        let d = means[0].len();
        for (state, (mu, cov)) in means.iter().zip(&covs).enumerate() {
            if mu.len() != d || cov.nrows() != d || cov.ncols() != d {
                return Err(EmissionError::DimensionMismatch(format!(
                    "state {state} parameters disagree with dimension {d}"
                )));
            }
            if mu.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
                return Err(EmissionError::NonFinite(format!("state {state} parameters")));
            }
            check_spd(cov, state)?;
        }
        Ok(Self { means, covs })
    }

    /// Univariate constructor from per-state (mean, variance) pairs.
    pub fn univariate(means: Vec<f64>, vars: Vec<f64>) -> Result<Self, EmissionError> {
        let mvec = means.into_iter().map(|m| DVector::from_element(1, m)).collect();
        let cvec = vars
            .into_iter()
            .map(|v| DMatrix::from_element(1, 1, v))
            .collect();
        Self::new(mvec, cvec)
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn d(&self) -> usize {
        self.means[0].len()
    }

    pub fn mean(&self, state: usize) -> &DVector<f64> {
        &self.means[state]
    }

    pub fn cov(&self, state: usize) -> &DMatrix<f64> {
        &self.covs[state]
    }

    pub fn set_mean(&mut self, state: usize, mean: DVector<f64>) {
        assert_eq!(mean.len(), self.d());
        self.means[state] = mean;
    }

    pub fn set_cov(&mut self, state: usize, cov: DMatrix<f64>) -> Result<(), EmissionError> {
        assert_eq!(cov.nrows(), self.d());
        check_spd(&cov, state)?;
        self.covs[state] = cov;
        Ok(())
    }
}

fn check_spd(m: &DMatrix<f64>, state: usize) -> Result<(), EmissionError> {
    let sym_tol = 1e-9 * (1.0 + m.amax());
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > sym_tol {
                return Err(EmissionError::NotSpd { state });
            }
        }
    }
    Cholesky::new(m.clone())
        .map(|_| ())
        .ok_or(EmissionError::NotSpd { state })
}

/// Conjugate priors for the emission layer: Normal/Inverse-Wishart for
/// multivariate responses, Normal/Inverse-Gamma for univariate ones. The
/// same prior is shared by all states.
#[derive(Debug, Clone, PartialEq)]
pub enum EmissionPriors {
    NormalInverseWishart {
        m: DVector<f64>,
        v: DMatrix<f64>,
        nu: f64,
        s: DMatrix<f64>,
    },
    NormalInverseGamma { m: f64, v: f64, a: f64, b: f64 },
}

impl EmissionPriors {
    pub fn normal_inverse_wishart(
        m: DVector<f64>,
        v: DMatrix<f64>,
        nu: f64,
        s: DMatrix<f64>,
    ) -> Result<Self, EmissionError> {
        let d = m.len();
        if v.nrows() != d || s.nrows() != d || !v.is_square() || !s.is_square() {
            return Err(EmissionError::InvalidPrior(
                "prior matrices must be d x d".to_string(),
            ));
        }
        check_spd(&v, usize::MAX).map_err(|_| EmissionError::InvalidPrior("V not SPD".into()))?;
        check_spd(&s, usize::MAX).map_err(|_| EmissionError::InvalidPrior("S not SPD".into()))?;
        if nu <= d as f64 - 1.0 {
            return Err(EmissionError::InvalidPrior(format!(
                "need degrees of freedom > d - 1 = {}",
                d - 1
            )));
        }
        Ok(Self::NormalInverseWishart { m, v, nu, s })
    }

    pub fn normal_inverse_gamma(m: f64, v: f64, a: f64, b: f64) -> Result<Self, EmissionError> {
        if v <= 0.0 || a <= 0.0 || b <= 0.0 {
            return Err(EmissionError::InvalidPrior(
                "need v > 0, a > 0, b > 0".to_string(),
            ));
        }
        Ok(Self::NormalInverseGamma { m, v, a, b })
    }

    /// Minimally informative defaults: for d = 1 the N(0, 1000) mean prior
    /// with IG(2, 1) variance prior, otherwise N(0, 100 I) with IW(ν, S)
    /// where ν = 2(int[(d+1)/2] + 1), S has ν on the diagonal and +ν/2 off
    /// it.
    pub fn default_for_dim(d: usize) -> Self {
        if d == 1 {
            Self::normal_inverse_gamma(0.0, 1000.0, 2.0, 1.0).unwrap()
        } else {
            Self::default_multivariate(d, 1.0)
        }
    }

    /// The multivariate default with an explicit off-diagonal sign for S
    /// (`sign` should be +1 or −1; +1 is the shipped default).
    pub fn default_multivariate(d: usize, sign: f64) -> Self {
        let nu = 2.0 * (d.div_ceil(2) as f64 + 1.0);
        let s = DMatrix::from_fn(d, d, |h, l| if h == l { nu } else { sign * nu / 2.0 });
        Self::normal_inverse_wishart(
            DVector::zeros(d),
            DMatrix::identity(d, d) * 100.0,
            nu,
            s,
        )
        .expect("default prior construction")
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::NormalInverseWishart { m, .. } => m.len(),
            Self::NormalInverseGamma { .. } => 1,
        }
    }

    /// One draw of a full emission parameter set from the prior.
    pub fn sample_params<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> EmissionParams {
        match self {
            Self::NormalInverseWishart { m, v, nu, s } => {
                let chol_v = Cholesky::new(v.clone()).expect("prior V is SPD");
                let means = (0..k).map(|_| sample_mvn(m, &chol_v, rng)).collect();
                let covs = (0..k).map(|_| sample_inverse_wishart(*nu, s, rng)).collect();
                EmissionParams::new(means, covs).expect("prior draw is valid")
            }
            Self::NormalInverseGamma { m, v, a, b } => {
                let means = (0..k)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + v.sqrt() * z
                    })
                    .collect();
                let vars = (0..k).map(|_| sample_inverse_gamma(*a, *b, rng)).collect();
                EmissionParams::univariate(means, vars).expect("prior draw is valid")
            }
        }
    }
}

/// Observed panel: one d-vector per (site, time) coordinate, plus the graph
/// and, for synthetic data, the generating truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<DVector<f64>>,
    n_sites: usize,
    t_len: usize,
    d: usize,
    pub graph: NeighborhoodSystem,
    pub truth: Option<GroundTruth>,
}

/// Generating values recorded alongside synthetic data.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub theta: LatentParams,
    pub emission: EmissionParams,
    pub field: LatentField,
}

impl Dataset {
    /// `y` is site-major: all occasions of site 0 first.
    pub fn new(
        y: Vec<DVector<f64>>,
        n_sites: usize,
        t_len: usize,
        graph: NeighborhoodSystem,
        truth: Option<GroundTruth>,
    ) -> Result<Self, EmissionError> {
        if y.len() != n_sites * t_len || y.is_empty() {
            return Err(EmissionError::DimensionMismatch(format!(
                "expected {} observations, got {}",
                n_sites * t_len,
                y.len()
            )));
        }
        if graph.n_sites() != n_sites {
            return Err(EmissionError::DimensionMismatch(format!(
                "graph has {} sites, data has {}",
                graph.n_sites(),
                n_sites
            )));
        }
        let d = y[0].len();
        for (idx, obs) in y.iter().enumerate() {
            if obs.len() != d {
                return Err(EmissionError::DimensionMismatch(format!(
                    "observation {idx} has dimension {} instead of {d}",
                    obs.len()
                )));
            }
            if obs.iter().any(|v| !v.is_finite()) {
                return Err(EmissionError::NonFinite(format!("observation {idx}")));
            }
        }
        Ok(Self {
            y,
            n_sites,
            t_len,
            d,
            graph,
            truth,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn y(&self, site: usize, time: usize) -> &DVector<f64> {
        &self.y[site * self.t_len + time]
    }

    pub fn observations(&self) -> &[DVector<f64>] {
        &self.y
    }
}

/// Multivariate normal log density log N(y; μ_u, Σ_u), normalizing constant
/// included.
pub fn log_emission(y: &DVector<f64>, state: usize, params: &EmissionParams) -> f64 {
    let chol = Cholesky::new(params.cov(state).clone()).expect("covariance is SPD");
    log_emission_chol(y, params.mean(state), &chol)
}

fn log_emission_chol(y: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = y.len() as f64;
    let diff = y - mean;
    let z = chol.l().solve_lower_triangular(&diff).expect("triangular solve");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * LN_2PI + log_det + z.norm_squared())
}

/// Per-coordinate, per-state emission log likelihoods, laid out as
/// `[(site * T + time) * K + state]`. Factors each covariance once.
pub fn log_likelihood_table(dataset: &Dataset, params: &EmissionParams) -> Vec<f64> {
    let k = params.k();
    let chols: Vec<Cholesky<f64, Dyn>> = (0..k)
        .map(|s| Cholesky::new(params.cov(s).clone()).expect("covariance is SPD"))
        .collect();
    let mut table = Vec::with_capacity(dataset.y.len() * k);
    for obs in &dataset.y {
        for (s, chol) in chols.iter().enumerate() {
            table.push(log_emission_chol(obs, params.mean(s), chol));
        }
    }
    table
}

/// Complete-data log likelihood log p(y | u, μ, Σ).
pub fn log_likelihood(dataset: &Dataset, field: &LatentField, params: &EmissionParams) -> f64 {
    let k = params.k();
    let chols: Vec<Cholesky<f64, Dyn>> = (0..k)
        .map(|s| Cholesky::new(params.cov(s).clone()).expect("covariance is SPD"))
        .collect();
    let mut total = 0.0;
    for i in 0..dataset.n_sites {
        for t in 0..dataset.t_len {
            let s = field.get(i, t);
            total += log_emission_chol(dataset.y(i, t), params.mean(s), &chols[s]);
        }
    }
    total
}

/// Counts, mean and scatter of the observations assigned to one state.
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub n: usize,
    /// Mean of the assigned observations; `None` when the state is empty.
    pub ybar: Option<DVector<f64>>,
    /// Σ (y − center)(y − center)' over the assigned observations.
    pub scatter: DMatrix<f64>,
}

/// Sufficient statistics of `state` with the scatter taken about `center`
/// (pass the current μ_u for the covariance update).
pub fn sufficient_stats(
    dataset: &Dataset,
    field: &LatentField,
    state: usize,
    center: &DVector<f64>,
) -> SuffStats {
    let d = dataset.d();
    let mut n = 0usize;
    let mut sum = DVector::zeros(d);
    let mut scatter = DMatrix::zeros(d, d);
    for i in 0..dataset.n_sites {
        for t in 0..dataset.t_len {
            if field.get(i, t) == state {
                n += 1;
                let y = dataset.y(i, t);
                sum += y;
                let diff = y - center;
                scatter += &diff * diff.transpose();
            }
        }
    }
    let ybar = (n > 0).then(|| sum / n as f64);
    SuffStats { n, ybar, scatter }
}

fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol_cov: &Cholesky<f64, Dyn>,
    rng: &mut R,
) -> DVector<f64> {
    let d = mean.len();
    let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    mean + chol_cov.l() * z
}

/// Draws μ_u from its full conditional N(Ṽ_u m̃_u, Ṽ_u).
pub fn sample_mu<R: Rng + ?Sized>(
    state: usize,
    dataset: &Dataset,
    field: &LatentField,
    sigma_u: &DMatrix<f64>,
    priors: &EmissionPriors,
    rng: &mut R,
) -> Result<DVector<f64>, EmissionError> {
    let (m, v) = match priors {
        EmissionPriors::NormalInverseWishart { m, v, .. } => (m, v),
        EmissionPriors::NormalInverseGamma { .. } => {
            return Err(EmissionError::InvalidPrior(
                "univariate priors require sample_mu_univariate".to_string(),
            ))
        }
    };
    let d = dataset.d();
    let stats = sufficient_stats(dataset, field, state, m);
    let v_inv = Cholesky::new(v.clone())
        .ok_or(EmissionError::InvalidPrior("V not SPD".into()))?
        .inverse();
    let mut precision = v_inv.clone();
    let mut weighted = &v_inv * m;
    if let Some(ybar) = &stats.ybar {
        let sigma_inv = Cholesky::new(sigma_u.clone())
            .ok_or(EmissionError::NotSpd { state })?
            .inverse();
        precision += &sigma_inv * stats.n as f64;
        weighted += &sigma_inv * (ybar * stats.n as f64);
    }
    let chol_p = Cholesky::new(precision).ok_or(EmissionError::Numeric {
        state,
        msg: "posterior precision for the mean is singular".to_string(),
    })?;
    let mean = chol_p.solve(&weighted);
    // z ~ N(0, I) solved against the upper factor gives N(0, precision⁻¹).
    let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let noise = chol_p
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(EmissionError::Numeric {
            state,
            msg: "triangular solve failed".to_string(),
        })?;
    Ok(mean + noise)
}

/// Draws Σ_u from its full conditional IW(ν + n_u, S + S̃_u).
pub fn sample_sigma<R: Rng + ?Sized>(
    state: usize,
    dataset: &Dataset,
    field: &LatentField,
    mu_u: &DVector<f64>,
    priors: &EmissionPriors,
    rng: &mut R,
) -> Result<DMatrix<f64>, EmissionError> {
    let (nu, s) = match priors {
        EmissionPriors::NormalInverseWishart { nu, s, .. } => (*nu, s),
        EmissionPriors::NormalInverseGamma { .. } => {
            return Err(EmissionError::InvalidPrior(
                "univariate priors require sample_sigma_univariate".to_string(),
            ))
        }
    };
    let stats = sufficient_stats(dataset, field, state, mu_u);
    let scale = s + &stats.scatter;
    Ok(sample_inverse_wishart(nu + stats.n as f64, &scale, rng))
}

/// IW(df, scale) via the Bartlett factorization: with scale = M M' and A the
/// Bartlett lower-triangular matrix for df, the draw is G'G for G = A⁻¹ M'.
fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let d = scale.nrows();
    let m = Cholesky::new(scale.clone()).expect("IW scale is SPD");
    let mut bartlett = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(df - i as f64).expect("positive degrees of freedom");
        bartlett[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let g = bartlett
        .solve_lower_triangular(&m.l().transpose())
        .expect("Bartlett factor is invertible");
    g.transpose() * g
}

fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(shape, 1.0 / rate).expect("valid inverse-gamma parameters");
    1.0 / gamma.sample(rng)
}

/// Univariate mean update: μ_u | · ~ N(m̃ṽ, ṽ).
pub fn sample_mu_univariate<R: Rng + ?Sized>(
    state: usize,
    dataset: &Dataset,
    field: &LatentField,
    sigma2_u: f64,
    priors: &EmissionPriors,
    rng: &mut R,
) -> Result<f64, EmissionError> {
    let (m, v) = match priors {
        EmissionPriors::NormalInverseGamma { m, v, .. } => (*m, *v),
        EmissionPriors::NormalInverseWishart { .. } => {
            return Err(EmissionError::InvalidPrior(
                "multivariate priors require sample_mu".to_string(),
            ))
        }
    };
    expect_univariate(dataset)?;
    let center = DVector::from_element(1, m);
    let stats = sufficient_stats(dataset, field, state, &center);
    let n = stats.n as f64;
    let ybar = stats.ybar.map_or(0.0, |y| y[0]);
    let v_tilde = 1.0 / (n / sigma2_u + 1.0 / v);
    let m_tilde = n * ybar / sigma2_u + m / v;
    let z: f64 = rng.sample(StandardNormal);
    Ok(m_tilde * v_tilde + v_tilde.sqrt() * z)
}

/// Univariate variance update: σ²_u | · ~ IG(a + n_u/2, b + ½ Σ (y − μ_u)²).
pub fn sample_sigma_univariate<R: Rng + ?Sized>(
    state: usize,
    dataset: &Dataset,
    field: &LatentField,
    mu_u: f64,
    priors: &EmissionPriors,
    rng: &mut R,
) -> Result<f64, EmissionError> {
    let (a, b) = match priors {
        EmissionPriors::NormalInverseGamma { a, b, .. } => (*a, *b),
        EmissionPriors::NormalInverseWishart { .. } => {
            return Err(EmissionError::InvalidPrior(
                "multivariate priors require sample_sigma".to_string(),
            ))
        }
    };
    expect_univariate(dataset)?;
    let center = DVector::from_element(1, mu_u);
    let stats = sufficient_stats(dataset, field, state, &center);
    let shape = a + stats.n as f64 / 2.0;
    let rate = b + 0.5 * stats.scatter[(0, 0)];
    Ok(sample_inverse_gamma(shape, rate, rng))
}

fn expect_univariate(dataset: &Dataset) -> Result<(), EmissionError> {
    if dataset.d() != 1 {
        return Err(EmissionError::DimensionMismatch(
            "univariate updates need d = 1 data".to_string(),
        ));
    }
    Ok(())
}
