//! Data-generating processes with closed-form population moments.
//!
//! Covariates are Gaussian, `X ~ N(μ, Σ_X)`, so every population moment the
//! targets need follows from Gaussian moment identities. The response is
//!
//! ```text
//! Y = Xᵀb + c·X(1)² + σ·s(X)·ε
//! ```
//!
//! with `s(X) = √(1 + h·X(1)²)` for the heteroskedastic kind and 1 otherwise.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelFamily, ModelIndex};
use crate::error::{Error, Result};
use crate::linalg::cross_mean;
use crate::moments::{population_moments, sample_moments, MomentPair};
use crate::ols::fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DgpKind {
    GaussianLinear,
    MisspecifiedQuadratic,
    Heteroskedastic,
    FixedDesign,
    Ar1Dependent,
}

/// Covariance of the Gaussian covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum DesignCovariance {
    #[default]
    Identity,
    Equicorrelated { rho: f64 },
    Toeplitz { rho: f64 },
    Explicit { matrix: Vec<Vec<f64>> },
}

impl DesignCovariance {
    pub fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            DesignCovariance::Identity => DMatrix::identity(p, p),
            DesignCovariance::Equicorrelated { rho } => {
                DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { *rho })
            }
            DesignCovariance::Toeplitz { rho } => {
                DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
            }
            DesignCovariance::Explicit { matrix } => {
                if matrix.len() != p || matrix.iter().any(|r| r.len() != p) {
                    return Err(Error::arg(format!("explicit design covariance must be {p}×{p}")));
                }
                DMatrix::from_fn(p, p, |i, j| matrix[i][j])
            }
        };
        if m.iter().any(|v| !v.is_finite()) || (&m - m.transpose()).amax() > 1e-12 {
            return Err(Error::arg("design covariance must be finite and symmetric"));
        }
        Ok(m)
    }
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default)]
    pub design: DesignCovariance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Weight `c` of the `X(1)²` term in the response mean.
    #[serde(default)]
    pub quad_weight: f64,
    /// Weight `h` of the heteroskedastic noise scale.
    #[serde(default)]
    pub hetero_weight: f64,
    /// AR(1) coefficient of covariates and noise for the dependent kind.
    #[serde(default)]
    pub ar_rho: f64,
    /// Seed of the frozen design for the fixed-design kind; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_seed: Option<u64>,
    /// Fixed design only: transform `X` so that `XᵀX/n` equals the design
    /// covariance exactly.
    #[serde(default)]
    pub whiten: bool,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, p: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            p,
            seed,
            design: DesignCovariance::Identity,
            covariate_mean: None,
            coefficients: None,
            noise_sd: 1.0,
            quad_weight: 0.0,
            hetero_weight: 0.0,
            ar_rho: 0.0,
            design_seed: None,
            whiten: false,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        self.covariate_mean.as_ref().map_or_else(|| DVector::zeros(self.p), |v| DVector::from_vec(v.clone()))
    }

    pub fn coefficients(&self) -> DVector<f64> {
        self.coefficients.as_ref().map_or_else(|| DVector::zeros(self.p), |v| DVector::from_vec(v.clone()))
    }

    /// The same process with the data seed replaced; the fixed design (if
    /// any) stays frozen at its current design seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, design_seed: Some(self.design_seed.unwrap_or(self.seed)), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return Err(Error::arg("need n ≥ 2 and p ≥ 1"));
        }
        for (name, v) in [("covariateMean", &self.covariate_mean), ("coefficients", &self.coefficients)] {
            if let Some(v) = v {
                if v.len() != self.p {
                    return Err(Error::arg(format!("{name} has length {} but p = {}", v.len(), self.p)));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::arg(format!("{name} must be finite")));
                }
            }
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::arg("noiseSd must be positive"));
        }
        if self.ar_rho.is_nan() || self.ar_rho.abs() >= 1.0 {
            return Err(Error::arg("arRho must satisfy |ρ| < 1"));
        }
        if self.hetero_weight < 0.0 || !self.quad_weight.is_finite() {
            return Err(Error::arg("heteroWeight must be nonnegative and quadWeight finite"));
        }
        let s = self.design.matrix(self.p)?;
        if Cholesky::new(s).is_none() {
            return Err(Error::arg("design covariance must be positive definite"));
        }
        Ok(())
    }
}

/// Population quantities for one process: moments `(Σ_n, Γ_n)` and the
/// response means `E[Y_i]` of the generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationOracle {
    pub moments: MomentPair,
    pub mean_y: DVector<f64>,
    /// Always false here: every supported process has closed-form moments.
    pub approximate: bool,
}

impl PopulationOracle {
    /// `β_{n,M}`, the solution of `Σ_n(M)β = Γ_n(M)`.
    pub fn target(&self, model: &ModelIndex) -> Result<DVector<f64>> {
        Ok(fit(&self.moments, model)?.beta)
    }

    pub fn targets(&self, family: &ModelFamily) -> Result<BTreeMap<ModelIndex, DVector<f64>>> {
        family.iter().map(|m| Ok((m.clone(), self.target(m)?))).collect()
    }
}

/// Mixes a base seed and a stream number into an independent-looking seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, mu: &DVector<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = mu.len();
    let mut x = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = normal(rng);
        }
        let row = l * &z + mu;
        x.row_mut(i).copy_from(&row.transpose());
    }
    x
}

/// Closed-form `(Σ_n, Γ_n)` for Gaussian covariates.
fn gaussian_population(spec: &DgpSpec, s: &DMatrix<f64>) -> Result<MomentPair> {
    let mu = spec.mean();
    let b = spec.coefficients();
    let c = spec.quad_weight;
    let second = s + &mu * mu.transpose();
    let mut gamma = &second * &b;
    // E[X(j)·X(1)²] = μ_j(μ_1² + S_11) + 2μ_1 S_j1
    for j in 0..spec.p {
        gamma[j] += c * (mu[j] * (mu[0] * mu[0] + s[(0, 0)]) + 2.0 * mu[0] * s[(j, 0)]);
    }
    population_moments(second, gamma)
}

fn response(x: &DMatrix<f64>, spec: &DgpSpec, noise: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let b = spec.coefficients();
    let n = x.nrows();
    let mut mean_y = x * &b;
    for i in 0..n {
        mean_y[i] += spec.quad_weight * x[(i, 0)] * x[(i, 0)];
    }
    let hetero = spec.kind == DgpKind::Heteroskedastic || spec.kind == DgpKind::FixedDesign;
    let y = DVector::from_fn(n, |i, _| {
        let scale = if hetero { (1.0 + spec.hetero_weight * x[(i, 0)] * x[(i, 0)]).sqrt() } else { 1.0 };
        mean_y[i] + spec.noise_sd * scale * noise[i]
    });
    (y, mean_y)
}

/// The frozen covariate matrix of a fixed-design process.
pub fn fixed_design_matrix(spec: &DgpSpec) -> Result<DMatrix<f64>> {
    let s = spec.design.matrix(spec.p)?;
    let l = Cholesky::new(s).ok_or_else(|| Error::arg("design covariance must be positive definite"))?.l();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.design_seed.unwrap_or(spec.seed));
    let x = gaussian_rows(&mut rng, spec.n, &spec.mean(), &l);
    if !spec.whiten {
        return Ok(x);
    }
    // X' = X L_S^{-T} Lᵀ gives X'ᵀX'/n = L Lᵀ
    let gram = x.transpose() * &x / spec.n as f64;
    let ls = Cholesky::new(gram)
        .ok_or_else(|| Error::arg("cannot whiten a rank-deficient design; increase n"))?
        .l();
    let ls_inv_t = ls
        .try_inverse()
        .ok_or_else(|| Error::arg("cannot whiten a rank-deficient design"))?
        .transpose();
    Ok(x * ls_inv_t * l.transpose())
}

/// Draws one dataset and returns it with its population oracle.
pub fn generate(spec: &DgpSpec) -> Result<(Dataset, PopulationOracle)> {
    spec.validate()?;
    let n = spec.n;
    let s = spec.design.matrix(spec.p)?;
    let l = Cholesky::new(s.clone()).expect("validated").l();
    let mu = spec.mean();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let x = match spec.kind {
        DgpKind::FixedDesign => fixed_design_matrix(spec)?,
        DgpKind::Ar1Dependent => {
            let rho = spec.ar_rho;
            let innov = (1.0 - rho * rho).sqrt();
            let z = gaussian_rows(&mut rng, n, &DVector::zeros(spec.p), &l);
            let mut u = DMatrix::zeros(n, spec.p);
            u.row_mut(0).copy_from(&z.row(0));
            for i in 1..n {
                let next = u.row(i - 1) * rho + z.row(i) * innov;
                u.row_mut(i).copy_from(&next);
            }
            for i in 0..n {
                for j in 0..spec.p {
                    u[(i, j)] += mu[j];
                }
            }
            u
        }
        _ => gaussian_rows(&mut rng, n, &mu, &l),
    };

    let mut noise: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    if spec.kind == DgpKind::Ar1Dependent {
        let rho = spec.ar_rho;
        let innov = (1.0 - rho * rho).sqrt();
        for i in 1..n {
            noise[i] = rho * noise[i - 1] + innov * noise[i];
        }
    }
    let (y, mean_y) = response(&x, spec, &noise);
    let data = Dataset::new(x, y)?.with_mean_y(mean_y.clone())?;

    let moments = if spec.kind == DgpKind::FixedDesign {
        // the design is the population: Σ_n = Σ̂ bit for bit
        let sigma = sample_moments(&data).sigma().clone();
        let gamma = DVector::from_fn(spec.p, |j, _| {
            cross_mean(&data.x().as_slice()[j * n..(j + 1) * n], mean_y.as_slice())
        });
        population_moments(sigma, gamma)?
    } else {
        gaussian_population(spec, &s)?
    };
    Ok((data, PopulationOracle { moments, mean_y, approximate: false }))
}
