//! Submodel least squares from moment objects, the minimum submodel
//! eigenvalue, the restricted-isometry constant, and the deterministic error
//! bounds that tie sample fits to their population targets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::data::{enumerate_models, ModelIndex};
use crate::error::{Error, Result};
use crate::linalg::{l1_norm, sup_norm, sym_eigenvalues, sym_operator_norm};
use crate::moments::{DeviationPair, MomentPair};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Largest `p` accepted by the exhaustive spectral searches.
pub const MAX_ENUMERATION_P: usize = 20;
/// Largest `k` accepted by the exhaustive spectral searches.
pub const MAX_ENUMERATION_K: usize = 8;

/// Slack allowed when checking the deterministic inequalities.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: ModelIndex,
    #[serde(serialize_with = "ser_vec")]
    pub beta: DVector<f64>,
    #[serde(skip)]
    pub rank: usize,
    pub singular: bool,
    /// Set when the system has no exact solution (a zero Gram block with a
    /// nonzero cross-moment, say); `beta` is then the minimum-norm
    /// least-squares solution.
    #[serde(skip)]
    pub inconsistent: bool,
}

fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

impl FitResult {
    pub fn beta_l1(&self) -> f64 {
        l1_norm(&self.beta)
    }
}

/// Solves `Σ(M)β = Γ(M)` with the default rank tolerance.
pub fn fit(moments: &MomentPair, model: &ModelIndex) -> Result<FitResult> {
    fit_with_tolerance(moments, model, DEFAULT_RANK_TOLERANCE)
}

/// Solves the submodel normal equations through a symmetric eigendecomposition.
///
/// Directions whose eigenvalue is at most `tol · λ_max` are dropped, which
/// yields the minimum-ℓ₂-norm solution when `Σ(M)` is singular.
pub fn fit_with_tolerance(moments: &MomentPair, model: &ModelIndex, tol: f64) -> Result<FitResult> {
    moments.check_model(model)?;
    let s = moments.sigma_sub(model);
    let g = moments.gamma_sub(model);
    let m = model.len();

    if m == 1 {
        let a = s[(0, 0)];
        let ok = a.abs() > 0.0;
        let beta = DVector::from_element(1, if ok { g[0] / a } else { 0.0 });
        return Ok(FitResult {
            model: model.clone(),
            beta,
            rank: usize::from(ok),
            singular: !ok,
            inconsistent: !ok && g[0] != 0.0,
        });
    }

    let eig = SymmetricEigen::new(s);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = tol * lmax;
    let mut beta = DVector::zeros(m);
    let mut rank = 0;
    let mut residual = 0.0_f64;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(i);
        let proj = u.dot(&g);
        if lmax > 0.0 && lam.abs() > cutoff {
            rank += 1;
            beta += u * (proj / lam);
        } else {
            residual = residual.max(proj.abs());
        }
    }
    let gscale = sup_norm(&g).max(f64::MIN_POSITIVE);
    Ok(FitResult {
        model: model.clone(),
        beta,
        rank,
        singular: rank < m,
        inconsistent: rank < m && residual > 1e-8 * gscale,
    })
}

/// `Λ(k)`: the smallest eigenvalue of `Σ(M)` over all models with `|M| ≤ k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectralSummary {
    pub k: usize,
    pub lambda_min: f64,
    pub argmin_model: ModelIndex,
}

fn check_enumeration_limits(p: usize, k: usize) -> Result<()> {
    if k < 1 || k > p {
        return Err(Error::arg(format!("k = {k} must satisfy 1 ≤ k ≤ p = {p}")));
    }
    if p > MAX_ENUMERATION_P || k > MAX_ENUMERATION_K {
        return Err(Error::Capability(format!(
            "exhaustive search over submodels is limited to p ≤ {MAX_ENUMERATION_P} and k ≤ {MAX_ENUMERATION_K} \
             (got p = {p}, k = {k}); try a smaller k"
        )));
    }
    Ok(())
}

/// Exhaustive minimum eigenvalue over submodels; ties go to the first model
/// in canonical order.
pub fn lambda_min_over_models(moments: &MomentPair, k: usize) -> Result<SpectralSummary> {
    let p = moments.p();
    check_enumeration_limits(p, k)?;
    let mut best: Option<(f64, ModelIndex)> = None;
    for model in enumerate_models(p, k)?.members {
        let lam = sym_eigenvalues(&moments.sigma_sub(&model))[0];
        if best.as_ref().is_none_or(|(b, _)| lam < *b) {
            best = Some((lam, model));
        }
    }
    let (lambda_min, argmin_model) = best.expect("family is non-empty");
    Ok(SpectralSummary { k, lambda_min: lambda_min.max(0.0), argmin_model })
}

/// `δ = max_{|M| ≤ k} ‖Σ(M) − I‖_op`.
pub fn rip_constant(moments: &MomentPair, k: usize) -> Result<f64> {
    let p = moments.p();
    check_enumeration_limits(p, k)?;
    let mut delta = 0.0_f64;
    for model in enumerate_models(p, k)?.members {
        let a = moments.sigma_sub(&model) - DMatrix::identity(model.len(), model.len());
        delta = delta.max(sym_operator_norm(&a));
    }
    Ok(delta)
}

/// Outcome of the ℓ₁/ℓ₂ error bounds, which need `k·D^Σ < Λ(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorBound {
    Bound(f64),
    Infeasible,
}

impl ErrorBound {
    pub fn value(self) -> Option<f64> {
        match self {
            ErrorBound::Bound(v) => Some(v),
            ErrorBound::Infeasible => None,
        }
    }
}

fn scaled_error_bound(dev: &DeviationPair, lambda: &SpectralSummary, factor: f64, beta_target_l1: f64) -> ErrorBound {
    let denom = lambda.lambda_min - lambda.k as f64 * dev.d_sigma;
    if denom <= 0.0 {
        return ErrorBound::Infeasible;
    }
    ErrorBound::Bound(factor * (dev.d_gamma + dev.d_sigma * beta_target_l1) / denom)
}

/// `‖β̂_M − β_M‖₁ ≤ |M|(D^Γ + D^Σ‖β_M‖₁) / (Λ(k) − k·D^Σ)`.
pub fn l1_error_bound(dev: &DeviationPair, lambda: &SpectralSummary, model: &ModelIndex, beta_target_l1: f64) -> ErrorBound {
    scaled_error_bound(dev, lambda, model.len() as f64, beta_target_l1)
}

/// The ℓ₂ analogue of [`l1_error_bound`], with `√|M|` in place of `|M|`.
pub fn l2_error_bound(dev: &DeviationPair, lambda: &SpectralSummary, model: &ModelIndex, beta_target_l1: f64) -> ErrorBound {
    scaled_error_bound(dev, lambda, (model.len() as f64).sqrt(), beta_target_l1)
}

/// Fixed-design ℓ₂ bound `√k·D^Γ / Λ(k)`, valid when `D^Σ = 0`.
pub fn fixed_design_l2_bound(d_gamma: f64, lambda: &SpectralSummary) -> ErrorBound {
    if lambda.lambda_min <= 0.0 {
        return ErrorBound::Infeasible;
    }
    ErrorBound::Bound((lambda.k as f64).sqrt() * d_gamma / lambda.lambda_min)
}

/// The deterministic inequality `‖Σ̂(M)(β̂ − β)‖∞ ≤ D^Γ + D^Σ‖β‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Right-hand side with the intercept coefficient left out of `‖β‖₁`;
    /// only set by [`deterministic_bound_check_with_intercept`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs_without_intercept: Option<f64>,
}

/// Evaluates both sides of the deterministic inequality, with deviations
/// taken over the full `p`-dimensional objects.
pub fn deterministic_bound_check(sample: &MomentPair, population: &MomentPair, model: &ModelIndex) -> Result<BoundCheck> {
    deterministic_bound_inner(sample, population, model, None)
}

/// Like [`deterministic_bound_check`], additionally reporting the right-hand
/// side with the coefficient of 0-based covariate `intercept` dropped from the
/// ℓ₁ norm. `holds` refers to the full right-hand side.
pub fn deterministic_bound_check_with_intercept(
    sample: &MomentPair,
    population: &MomentPair,
    model: &ModelIndex,
    intercept: usize,
) -> Result<BoundCheck> {
    deterministic_bound_inner(sample, population, model, Some(intercept))
}

fn deterministic_bound_inner(
    sample: &MomentPair,
    population: &MomentPair,
    model: &ModelIndex,
    intercept: Option<usize>,
) -> Result<BoundCheck> {
    let dev = crate::moments::deviation_stats(sample, population)?;
    let hat = fit(sample, model)?;
    let target = fit(population, model)?;
    let lhs = sup_norm(&(sample.sigma_sub(model) * (&hat.beta - &target.beta)));
    let rhs = dev.d_gamma + dev.d_sigma * target.beta_l1();
    let rhs_without_intercept = intercept.map(|c| {
        let l1: f64 = model
            .indices()
            .iter()
            .zip(target.beta.iter())
            .filter(|(j, _)| **j != c)
            .map(|(_, b)| b.abs())
            .sum();
        dev.d_gamma + dev.d_sigma * l1
    });
    Ok(BoundCheck { lhs, rhs, holds: lhs <= rhs + BOUND_SLACK, rhs_without_intercept })
}
