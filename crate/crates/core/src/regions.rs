//! Confidence regions for submodel targets, their membership tests, volumes,
//! and the associated significance tests.
//!
//! All membership inequalities are inclusive. The lasso-type regions use the
//! single constant `C = cMax` (the quantile of `max(D^Γ, D^Σ)`); the
//! square-root variants use `√C`. The empirical risk is evaluated in moment
//! form, `R(θ) = mean(Y²) − 2θᵀΓ̂(M) + θᵀΣ̂(M)θ`, clamped at zero.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bootstrap::QuantilePair;
use crate::data::ModelIndex;
use crate::error::{Error, Result};
use crate::linalg::{l1_norm, sup_norm, sym_eigenvalues};
use crate::moments::MomentPair;
use crate::ols::{fit, FitResult, DEFAULT_RANK_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RegionKind {
    Finite,
    Dagger,
    Rip,
    LassoFinite,
    LassoDagger,
    SqrtLassoFinite,
    SqrtLassoDagger,
}

impl RegionKind {
    pub const ALL: [RegionKind; 7] = [
        RegionKind::Finite,
        RegionKind::Dagger,
        RegionKind::Rip,
        RegionKind::LassoFinite,
        RegionKind::LassoDagger,
        RegionKind::SqrtLassoFinite,
        RegionKind::SqrtLassoDagger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Finite => "finite",
            RegionKind::Dagger => "dagger",
            RegionKind::Rip => "rip",
            RegionKind::LassoFinite => "lassoFinite",
            RegionKind::LassoDagger => "lassoDagger",
            RegionKind::SqrtLassoFinite => "sqrtLassoFinite",
            RegionKind::SqrtLassoDagger => "sqrtLassoDagger",
        }
    }

    /// Whether membership needs the mean squared response.
    pub fn needs_risk(self) -> bool {
        matches!(
            self,
            RegionKind::LassoFinite | RegionKind::LassoDagger | RegionKind::SqrtLassoFinite | RegionKind::SqrtLassoDagger
        )
    }
}

impl std::fmt::Display for RegionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = RegionKind::ALL.iter().map(|k| k.name()).collect();
                Error::arg(format!("unknown region kind {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// A region for one submodel: the fit it is centered on, the quantiles, and
/// the sample moment blocks its inequality refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub model: ModelIndex,
    pub fit: FitResult,
    pub quantiles: QuantilePair,
    sigma: DMatrix<f64>,
    gamma: DVector<f64>,
    mean_y_sq: Option<f64>,
}

impl RegionSpec {
    /// Builds a region around an existing fit. Lasso-type kinds need
    /// `mean_y_sq`, the sample mean of `Y²`.
    pub fn new(
        kind: RegionKind,
        moments: &MomentPair,
        fit: FitResult,
        quantiles: QuantilePair,
        mean_y_sq: Option<f64>,
    ) -> Result<Self> {
        moments.check_model(&fit.model)?;
        if quantiles.c_gamma < 0.0 || quantiles.c_sigma < 0.0 || quantiles.c_max < 0.0 {
            return Err(Error::arg("quantiles must be nonnegative"));
        }
        if kind.needs_risk() && mean_y_sq.is_none() {
            return Err(Error::arg(format!("region kind {kind} needs the mean squared response")));
        }
        Ok(Self {
            kind,
            model: fit.model.clone(),
            sigma: moments.sigma_sub(&fit.model),
            gamma: moments.gamma_sub(&fit.model),
            fit,
            quantiles,
            mean_y_sq,
        })
    }

    /// Fits the model and builds the region in one step.
    pub fn build(
        kind: RegionKind,
        moments: &MomentPair,
        model: &ModelIndex,
        quantiles: QuantilePair,
        mean_y_sq: Option<f64>,
    ) -> Result<Self> {
        let f = fit(moments, model)?;
        Self::new(kind, moments, f, quantiles, mean_y_sq)
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.fit.beta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    fn check_len(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.model.len() {
            return Err(Error::arg(format!(
                "theta has length {} but model {} has {} coefficients",
                theta.len(),
                self.model,
                self.model.len()
            )));
        }
        Ok(())
    }

    /// `‖Σ̂(M)(β̂ − θ)‖∞`.
    pub fn sup_statistic(&self, theta: &DVector<f64>) -> f64 {
        sup_norm(&(&self.sigma * (&self.fit.beta - theta)))
    }

    /// Empirical least-squares risk of `θ` on the model, from moments.
    pub fn risk(&self, theta: &DVector<f64>) -> Option<f64> {
        let my2 = self.mean_y_sq?;
        let quad = (theta.transpose() * &self.sigma * theta)[(0, 0)];
        Some((my2 - 2.0 * theta.dot(&self.gamma) + quad).max(0.0))
    }

    /// Constant radius of the sup-norm form, where the kind has one.
    pub fn radius(&self) -> Option<f64> {
        let q = &self.quantiles;
        match self.kind {
            RegionKind::Dagger => Some(q.c_gamma + q.c_sigma * self.fit.beta_l1()),
            RegionKind::Rip => Some(q.c_gamma),
            _ => None,
        }
    }

    pub fn contains(&self, theta: &DVector<f64>) -> Result<bool> {
        self.check_len(theta)?;
        let q = &self.quantiles;
        let b1 = self.fit.beta_l1();
        let t1 = l1_norm(theta);
        let c = q.c_max;
        let risks = || {
            let rt = self.risk(theta).expect("checked at construction");
            let rb = self.risk(&self.fit.beta).expect("checked at construction");
            (rt, rb)
        };
        Ok(match self.kind {
            RegionKind::Finite => self.sup_statistic(theta) <= q.c_gamma + q.c_sigma * t1,
            RegionKind::Dagger => self.sup_statistic(theta) <= q.c_gamma + q.c_sigma * b1,
            RegionKind::Rip => sup_norm(&(&self.fit.beta - theta)) <= q.c_gamma,
            RegionKind::LassoFinite => {
                let (rt, rb) = risks();
                rt <= rb + 2.0 * c * (b1 + t1) + c * (b1 * b1 + t1 * t1)
            }
            RegionKind::LassoDagger => {
                let (rt, rb) = risks();
                rt <= rb + 4.0 * c * b1 + 2.0 * c * b1 * b1
            }
            RegionKind::SqrtLassoFinite => {
                let (rt, rb) = risks();
                let sc = c.sqrt();
                rt.sqrt() <= rb.sqrt() + sc * (1.0 + t1) + sc * (1.0 + b1)
            }
            RegionKind::SqrtLassoDagger => {
                let (rt, rb) = risks();
                rt.sqrt() <= rb.sqrt() + 2.0 * c.sqrt() * (1.0 + b1)
            }
        })
    }

    pub fn to_json(&self) -> RegionJson {
        let volume = if self.kind == RegionKind::Dagger {
            dagger_volume(self).ok().and_then(|v| v.volume)
        } else {
            None
        };
        RegionJson {
            kind: self.kind,
            model: self.model.clone(),
            center: self.fit.beta.iter().copied().collect(),
            quantiles: self.quantiles,
            radius: self.radius(),
            volume,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionJson {
    pub kind: RegionKind,
    pub model: ModelIndex,
    pub center: Vec<f64>,
    pub quantiles: QuantilePair,
    pub radius: Option<f64>,
    pub volume: Option<f64>,
}

/// Membership in the intersection of several regions for the same model.
pub fn contains_intersection(regions: &[RegionSpec], theta: &DVector<f64>) -> Result<bool> {
    let Some(first) = regions.first() else {
        return Err(Error::arg("intersection of an empty list of regions"));
    };
    if regions.iter().any(|r| r.model != first.model) {
        return Err(Error::arg("regions in an intersection must share one model"));
    }
    for r in regions {
        if !r.contains(theta)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Lebesgue measure of the dagger region, a parallelepiped
/// `{β̂ + Σ̂(M)⁻¹u : ‖u‖∞ ≤ r}` of volume `(2r)^|M| / |det Σ̂(M)|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VolumeReport {
    pub model: ModelIndex,
    pub radius: f64,
    /// `None` when `Σ̂(M)` is singular and the region is unbounded.
    pub volume: Option<f64>,
    pub det_sigma: f64,
    pub infinite: bool,
}

pub fn dagger_volume(region: &RegionSpec) -> Result<VolumeReport> {
    if region.kind != RegionKind::Dagger {
        return Err(Error::Capability(format!(
            "volume unavailable for kind={}; use simulate --mc-volume",
            region.kind
        )));
    }
    let radius = region.radius().expect("dagger has a radius");
    let ev = sym_eigenvalues(&region.sigma);
    let lmax = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let det: f64 = ev.iter().product();
    let singular = lmax == 0.0 || ev[0].abs() <= DEFAULT_RANK_TOLERANCE * lmax;
    let volume = (!singular).then(|| (2.0 * radius).powi(region.model.len() as i32) / det.abs());
    Ok(VolumeReport { model: region.model.clone(), radius, volume, det_sigma: det, infinite: singular })
}

/// Hit-or-miss volume estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct McVolume {
    pub volume: f64,
    pub standard_error: f64,
    pub points: usize,
    pub box_volume: f64,
}

/// Half-widths of an axis-aligned box around the center that contains the
/// region, or `None` when no finite box is available.
pub fn bounding_half_widths(region: &RegionSpec) -> Option<DVector<f64>> {
    let s = region.model.len();
    match region.kind {
        RegionKind::Rip => Some(DVector::from_element(s, region.quantiles.c_gamma)),
        RegionKind::Dagger => {
            let inv = region.sigma.clone().try_inverse()?;
            let r = region.radius()?;
            Some(DVector::from_iterator(s, inv.row_iter().map(|row| r * row.iter().map(|v| v.abs()).sum::<f64>())))
        }
        RegionKind::Finite => {
            // ‖Σ̂d‖₂ ≥ λmin‖d‖₂ and ‖Σ̂d‖₂ ≤ √s(r† + cΣ√s‖d‖₂) with d = θ − β̂
            let lmin = sym_eigenvalues(&region.sigma)[0];
            let q = &region.quantiles;
            let denom = lmin - s as f64 * q.c_sigma;
            if denom <= 0.0 {
                return None;
            }
            let r_dagger = q.c_gamma + q.c_sigma * region.fit.beta_l1();
            Some(DVector::from_element(s, (s as f64).sqrt() * r_dagger / denom))
        }
        _ => None,
    }
}

/// Monte Carlo volume by uniform sampling in [`bounding_half_widths`].
pub fn mc_volume(region: &RegionSpec, points: usize, seed: u64) -> Result<McVolume> {
    if points == 0 {
        return Err(Error::arg("need at least one Monte Carlo point"));
    }
    let half = bounding_half_widths(region).ok_or_else(|| {
        Error::Capability(format!(
            "no bounded enclosing box for kind={} on model {}; the region may be unbounded",
            region.kind, region.model
        ))
    })?;
    let box_volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = region.center().clone();
    let mut theta = center.clone();
    let mut hits = 0usize;
    for _ in 0..points {
        for j in 0..theta.len() {
            theta[j] = center[j] + half[j] * rng.random_range(-1.0..=1.0);
        }
        if region.contains(&theta)? {
            hits += 1;
        }
    }
    let frac = hits as f64 / points as f64;
    Ok(McVolume {
        volume: frac * box_volume,
        standard_error: box_volume * (frac * (1.0 - frac) / points as f64).sqrt(),
        points,
        box_volume,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestVariant {
    Finite,
    Dagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// Tests `H₀: β_M = 0`.
pub fn significance_test(
    fit: &FitResult,
    moments: &MomentPair,
    quantiles: &QuantilePair,
    variant: TestVariant,
) -> Result<TestResult> {
    test_hypothesis(fit, moments, quantiles, variant, &DVector::zeros(fit.model.len()))
}

/// Tests `H₀: β_M = θ₀` by inverting the finite or dagger region: rejects
/// exactly when `θ₀` lies outside it (up to the boundary itself).
pub fn test_hypothesis(
    fit: &FitResult,
    moments: &MomentPair,
    quantiles: &QuantilePair,
    variant: TestVariant,
    theta0: &DVector<f64>,
) -> Result<TestResult> {
    moments.check_model(&fit.model)?;
    if theta0.len() != fit.model.len() {
        return Err(Error::arg("theta0 length does not match the model"));
    }
    let statistic = sup_norm(&(moments.sigma_sub(&fit.model) * (&fit.beta - theta0)));
    let l1 = match variant {
        TestVariant::Finite => l1_norm(theta0),
        TestVariant::Dagger => fit.beta_l1(),
    };
    let threshold = quantiles.c_gamma + quantiles.c_sigma * l1;
    Ok(TestResult { statistic, threshold, reject: statistic >= threshold })
}

/// Axis-aligned max-|t| box `|β̂(j) − θ(j)| ≤ C·σ(j)/√n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MaxTBox {
    pub model: ModelIndex,
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
}

impl MaxTBox {
    pub fn contains(&self, theta: &DVector<f64>) -> Result<bool> {
        if theta.len() != self.center.len() {
            return Err(Error::arg("theta length does not match the model"));
        }
        Ok(theta
            .iter()
            .zip(&self.center)
            .zip(&self.half_widths)
            .all(|((t, c), h)| (t - c).abs() <= *h))
    }

    pub fn volume(&self) -> f64 {
        self.half_widths.iter().map(|h| 2.0 * h).product()
    }
}

pub fn max_t_region(fit: &FitResult, sigma_diag: &DVector<f64>, c_max_t: f64, n: usize) -> Result<MaxTBox> {
    if sigma_diag.len() != fit.model.len() {
        return Err(Error::arg("sigmaDiag length does not match the model"));
    }
    if sigma_diag.iter().any(|s| s.is_nan() || *s <= 0.0) {
        return Err(Error::arg("sigmaDiag entries must be positive"));
    }
    if c_max_t.is_nan() || c_max_t < 0.0 || n == 0 {
        return Err(Error::arg("need cMaxT ≥ 0 and n ≥ 1"));
    }
    let root_n = (n as f64).sqrt();
    Ok(MaxTBox {
        model: fit.model.clone(),
        center: fit.beta.iter().copied().collect(),
        half_widths: sigma_diag.iter().map(|s| c_max_t * s / root_n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::Provenance;

    fn moments(sigma: DMatrix<f64>, gamma: Vec<f64>) -> MomentPair {
        MomentPair::new(sigma, DVector::from_vec(gamma), Provenance::Sample).unwrap()
    }

    fn full(p: usize) -> ModelIndex {
        ModelIndex::from_zero_based((0..p).collect(), p).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, p: usize) -> (MomentPair, f64) {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let s = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.3;
        let g: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = moments(s, g);
        let b = fit(&m, &full(p)).unwrap().beta;
        // mean Y² at least the explained part, so the risk stays nonnegative
        let my2 = b.dot(m.gamma()) + rng.random_range(0.1..1.0);
        (m, my2)
    }

    #[test]
    fn parse_kinds() {
        for k in RegionKind::ALL {
            assert_eq!(k.name().parse::<RegionKind>().unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.name());
        }
        assert!("bogus".parse::<RegionKind>().is_err());
    }

    #[test]
    fn center_always_belongs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = rng.random_range(1..5);
            let (m, my2) = random_instance(&mut rng, p);
            let q = QuantilePair::fixed(rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
            for kind in RegionKind::ALL {
                let r = RegionSpec::build(kind, &m, &full(p), q, Some(my2)).unwrap();
                assert!(r.contains(&r.center().clone()).unwrap(), "{kind}");
            }
        }
    }

    #[test]
    fn degenerate_quantiles_give_a_point() {
        let m = moments(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), vec![1.0, -1.0]);
        let q = QuantilePair::fixed(0.0, 0.0);
        for kind in RegionKind::ALL {
            let r = RegionSpec::build(kind, &m, &full(2), q, Some(5.0)).unwrap();
            let off = r.center() + DVector::from_vec(vec![1e-3, 0.0]);
            assert!(!r.contains(&off).unwrap(), "{kind}");
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let m = moments(DMatrix::identity(2, 2), vec![1.0, 1.0]);
        let r = RegionSpec::build(RegionKind::Finite, &m, &full(2), QuantilePair::fixed(0.1, 0.1), None).unwrap();
        assert!(r.contains(&DVector::zeros(3)).is_err());
        assert!(RegionSpec::build(RegionKind::LassoFinite, &m, &full(2), QuantilePair::fixed(0.1, 0.1), None).is_err());
    }

    #[test]
    fn dagger_one_dimensional_interval() {
        let m = moments(DMatrix::from_element(1, 1, 2.0), vec![2.0]);
        // radius 0.4 from cGamma alone
        let r = RegionSpec::build(RegionKind::Dagger, &m, &full(1), QuantilePair::fixed(0.4, 0.0), None).unwrap();
        assert_eq!(r.center()[0], 1.0);
        for (t, inside) in [(0.8, true), (1.2, true), (0.79, false), (1.21, false), (1.0, true)] {
            assert_eq!(r.contains(&DVector::from_element(1, t)).unwrap(), inside, "{t}");
        }
    }

    #[test]
    fn rip_boundary_inclusive() {
        let m = moments(DMatrix::identity(2, 2), vec![1.0, 2.0]);
        let r = RegionSpec::build(RegionKind::Rip, &m, &full(2), QuantilePair::fixed(0.5, 0.0), None).unwrap();
        assert!(r.contains(&DVector::from_vec(vec![1.5, 2.0])).unwrap());
        assert!(r.contains(&DVector::from_vec(vec![0.5, 2.5])).unwrap());
        assert!(!r.contains(&DVector::from_vec(vec![1.5001, 2.0])).unwrap());
        let r0 = RegionSpec::build(RegionKind::Rip, &m, &full(2), QuantilePair::fixed(0.0, 0.0), None).unwrap();
        assert!(!r0.contains(&DVector::from_vec(vec![1.0, 2.0 + 1e-12])).unwrap());
    }

    // Independent re-evaluation of each defining inequality from raw inputs.
    fn oracle(kind: RegionKind, s: &DMatrix<f64>, g: &DVector<f64>, my2: f64, b: &DVector<f64>, q: &QuantilePair, t: &DVector<f64>) -> bool {
        let risk = |x: &DVector<f64>| {
            let mut v = my2;
            for i in 0..x.len() {
                v -= 2.0 * x[i] * g[i];
                for j in 0..x.len() {
                    v += x[i] * s[(i, j)] * x[j];
                }
            }
            v.max(0.0)
        };
        let l1 = |x: &DVector<f64>| x.iter().map(|v| v.abs()).sum::<f64>();
        let lhs = (0..b.len())
            .map(|i| (0..b.len()).map(|j| s[(i, j)] * (b[j] - t[j])).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let (bn, tn, c) = (l1(b), l1(t), q.c_max);
        match kind {
            RegionKind::Finite => lhs <= q.c_gamma + q.c_sigma * tn,
            RegionKind::Dagger => lhs <= q.c_gamma + q.c_sigma * bn,
            RegionKind::Rip => (0..b.len()).all(|j| (b[j] - t[j]).abs() <= q.c_gamma),
            RegionKind::LassoFinite => risk(t) <= risk(b) + 2.0 * c * (bn + tn) + c * (bn.powi(2) + tn.powi(2)),
            RegionKind::LassoDagger => risk(t) <= risk(b) + 4.0 * c * bn + 2.0 * c * bn.powi(2),
            RegionKind::SqrtLassoFinite => risk(t).sqrt() <= risk(b).sqrt() + c.sqrt() * (2.0 + tn + bn),
            RegionKind::SqrtLassoDagger => risk(t).sqrt() <= risk(b).sqrt() + 2.0 * c.sqrt() * (1.0 + bn),
        }
    }

    #[test]
    fn membership_matches_independent_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut disagreements = 0;
        let mut inside = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let p = rng.random_range(1..4);
            let (m, my2) = random_instance(&mut rng, p);
            let cg = rng.random_range(0.0..0.5);
            let q = QuantilePair::fixed(cg, rng.random_range(0.0..cg.max(1e-3)));
            let kind = RegionKind::ALL[rng.random_range(0..7)];
            let r = RegionSpec::build(kind, &m, &full(p), q, Some(my2)).unwrap();
            let t = r.center() + DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let got = r.contains(&t).unwrap();
            let want = oracle(kind, m.sigma(), m.gamma(), my2, r.center(), &q, &t);
            // only near-boundary rounding may differ
            if got != want {
                disagreements += 1;
            }
            inside += usize::from(got);
        }
        assert_eq!(disagreements, 0);
        assert!(inside > trials / 10 && inside < trials * 9 / 10);
    }

    #[test]
    fn dagger_inside_finite_when_theta_norm_is_larger() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        for _ in 0..5000 {
            let (m, _) = random_instance(&mut rng, 2);
            let q = QuantilePair::fixed(0.2, 0.1);
            let d = RegionSpec::build(RegionKind::Dagger, &m, &full(2), q, None).unwrap();
            let f = RegionSpec::build(RegionKind::Finite, &m, &full(2), q, None).unwrap();
            let t = d.center() + DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            if l1_norm(&t) >= d.fit.beta_l1() && d.contains(&t).unwrap() {
                assert!(f.contains(&t).unwrap());
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn monotone_in_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3000 {
            let (m, my2) = random_instance(&mut rng, 2);
            let q = QuantilePair::fixed(rng.random_range(0.0..0.2), rng.random_range(0.0..0.2));
            let bigger = QuantilePair::fixed(q.c_gamma * 1.5, q.c_sigma * 1.2);
            let t = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            for kind in RegionKind::ALL {
                let a = RegionSpec::build(kind, &m, &full(2), q, Some(my2)).unwrap();
                let b = RegionSpec::build(kind, &m, &full(2), bigger, Some(my2)).unwrap();
                if a.contains(&t).unwrap() {
                    assert!(b.contains(&t).unwrap(), "{kind}");
                }
            }
        }
    }

    #[test]
    fn fixed_design_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let (m, _) = random_instance(&mut rng, 3);
            let q = QuantilePair::fixed(0.3, 0.0);
            let f = RegionSpec::build(RegionKind::Finite, &m, &full(3), q, None).unwrap();
            let d = RegionSpec::build(RegionKind::Dagger, &m, &full(3), q, None).unwrap();
            let t = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            assert_eq!(f.contains(&t).unwrap(), d.contains(&t).unwrap());
        }
    }

    #[test]
    fn intersection_is_and() {
        let m = moments(DMatrix::identity(2, 2), vec![1.0, 1.0]);
        let q = QuantilePair::fixed(0.3, 0.1);
        let f = RegionSpec::build(RegionKind::Finite, &m, &full(2), q, None).unwrap();
        let d = RegionSpec::build(RegionKind::Dagger, &m, &full(2), q, None).unwrap();
        let rip = RegionSpec::build(RegionKind::Rip, &m, &full(2), QuantilePair::fixed(0.01, 0.0), None).unwrap();
        let c = f.center().clone();
        assert!(contains_intersection(&[f.clone(), d.clone()], &c).unwrap());
        let t = &c + DVector::from_vec(vec![0.2, 0.0]);
        assert!(f.contains(&t).unwrap() && !rip.contains(&t).unwrap());
        assert!(!contains_intersection(&[f.clone(), d, rip], &t).unwrap());
        let other = RegionSpec::build(RegionKind::Finite, &m, &ModelIndex::singleton(0), q, None).unwrap();
        assert!(contains_intersection(&[f, other], &c).is_err());
        assert!(contains_intersection(&[], &c).is_err());
    }

    #[test]
    fn volume_examples() {
        let m = moments(DMatrix::identity(1, 1), vec![0.0]);
        let r = RegionSpec::build(RegionKind::Dagger, &m, &full(1), QuantilePair::fixed(0.5, 0.0), None).unwrap();
        assert_eq!(dagger_volume(&r).unwrap().volume, Some(1.0));
        let m = moments(DMatrix::identity(2, 2), vec![0.0, 0.0]);
        let r = RegionSpec::build(RegionKind::Dagger, &m, &full(2), QuantilePair::fixed(0.3, 0.0), None).unwrap();
        assert!((dagger_volume(&r).unwrap().volume.unwrap() - 0.36).abs() < 1e-15);
        let m = moments(DMatrix::from_element(2, 2, 1.0), vec![1.0, 1.0]);
        let r = RegionSpec::build(RegionKind::Dagger, &m, &full(2), QuantilePair::fixed(0.3, 0.0), None).unwrap();
        let v = dagger_volume(&r).unwrap();
        assert!(v.infinite && v.volume.is_none());
        let f = RegionSpec::build(RegionKind::Finite, &m, &full(2), QuantilePair::fixed(0.3, 0.0), None).unwrap();
        let err = dagger_volume(&f).unwrap_err();
        assert!(err.to_string().contains("volume unavailable for kind=finite; use simulate --mc-volume"));
    }

    #[test]
    fn volume_matches_monte_carlo_2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..5 {
            let (m, _) = random_instance(&mut rng, 2);
            let r = RegionSpec::build(RegionKind::Dagger, &m, &full(2), QuantilePair::fixed(0.2, 0.05), None).unwrap();
            let closed = dagger_volume(&r).unwrap().volume.unwrap();
            let mc = mc_volume(&r, 200_000, i).unwrap();
            assert!((mc.volume / closed - 1.0).abs() < 0.02, "{} vs {closed}", mc.volume);
        }
    }

    #[test]
    fn finite_bounding_box_contains_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let (m, _) = random_instance(&mut rng, 2);
            let r = RegionSpec::build(RegionKind::Finite, &m, &full(2), QuantilePair::fixed(0.1, 0.02), None).unwrap();
            let Some(h) = bounding_half_widths(&r) else { continue };
            // points just outside the box along each axis are outside the region
            for j in 0..2 {
                for sign in [-1.0, 1.0] {
                    let mut t = r.center().clone();
                    t[j] += sign * h[j] * 1.0001;
                    assert!(!r.contains(&t).unwrap());
                }
            }
        }
    }

    #[test]
    fn significance_examples() {
        let m = moments(DMatrix::identity(1, 1), vec![0.6]);
        let f = fit(&m, &full(1)).unwrap();
        let q = QuantilePair::fixed(0.5, 0.1);
        let fin = significance_test(&f, &m, &q, TestVariant::Finite).unwrap();
        assert!(fin.reject && (fin.statistic - 0.6).abs() < 1e-15);
        // 0.6 ≥ 0.5 + 0.1·0.6, so the dagger variant rejects as well
        let dag = significance_test(&f, &m, &q, TestVariant::Dagger).unwrap();
        assert!(dag.reject && (dag.threshold - 0.56).abs() < 1e-15);
        let wider = QuantilePair::fixed(0.5, 0.2);
        assert!(significance_test(&f, &m, &wider, TestVariant::Finite).unwrap().reject);
        let dag = significance_test(&f, &m, &wider, TestVariant::Dagger).unwrap();
        assert!(!dag.reject && (dag.threshold - 0.62).abs() < 1e-15);

        let z = moments(DMatrix::identity(2, 2), vec![0.0, 0.0]);
        let fz = fit(&z, &full(2)).unwrap();
        let t = significance_test(&fz, &z, &QuantilePair::fixed(0.01, 0.0), TestVariant::Finite).unwrap();
        assert_eq!((t.statistic, t.reject), (0.0, false));
    }

    #[test]
    fn finite_rejects_superset_and_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..3000 {
            let p = rng.random_range(1..4);
            let (m, _) = random_instance(&mut rng, p);
            let f = fit(&m, &full(p)).unwrap();
            let q = QuantilePair::fixed(rng.random_range(0.0..0.5), rng.random_range(0.0..0.3));
            let fin = significance_test(&f, &m, &q, TestVariant::Finite).unwrap();
            let dag = significance_test(&f, &m, &q, TestVariant::Dagger).unwrap();
            if dag.reject {
                assert!(fin.reject);
            }
            let theta0 = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
            for (variant, kind) in [(TestVariant::Finite, RegionKind::Finite), (TestVariant::Dagger, RegionKind::Dagger)] {
                let t = test_hypothesis(&f, &m, &q, variant, &theta0).unwrap();
                let r = RegionSpec::new(kind, &m, f.clone(), q, None).unwrap();
                assert_eq!(t.reject, !r.contains(&theta0).unwrap());
            }
        }
    }

    #[test]
    fn max_t_box() {
        let m = moments(DMatrix::identity(3, 3), vec![1.0, 2.0, 3.0]);
        let f = fit(&m, &full(3)).unwrap();
        let b = max_t_region(&f, &DVector::from_element(3, 1.0), 2.0, 4).unwrap();
        assert_eq!(b.half_widths, vec![1.0; 3]);
        assert_eq!(b.volume(), 8.0);
        assert!(b.contains(&DVector::from_vec(vec![2.0, 1.0, 3.5])).unwrap());
        let point = max_t_region(&f, &DVector::from_element(3, 1.0), 0.0, 4).unwrap();
        assert!(!point.contains(&DVector::from_vec(vec![1.0, 2.0, 3.0 + 1e-9])).unwrap());
        assert!(max_t_region(&f, &DVector::from_vec(vec![1.0, 0.0, 1.0]), 1.0, 4).is_err());
    }

    #[test]
    fn region_json() {
        let m = moments(DMatrix::identity(1, 1), vec![1.0]);
        let r = RegionSpec::build(RegionKind::Dagger, &m, &full(1), QuantilePair::fixed(0.5, 0.0), None).unwrap();
        let js = serde_json::to_value(r.to_json()).unwrap();
        assert_eq!(js["kind"], "dagger");
        assert_eq!(js["model"], serde_json::json!([1]));
        assert_eq!(js["radius"], 0.5);
        assert_eq!(js["volume"], 1.0);
    }
}
