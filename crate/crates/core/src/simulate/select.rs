//! Model selectors. Coverage of a post-selection region must hold whatever
//! rule picks the model; these are the rules the experiments exercise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{enumerate_models, Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::moments::{sample_moments, MomentPair};
use crate::ols::{fit, MAX_ENUMERATION_K, MAX_ENUMERATION_P};

/// Picks the first model (canonical order) whose region missed its target,
/// or the first model when all covered. Needs oracle coverage indicators, so
/// it is a simulation device only.
pub fn select_adversarial(covered: &BTreeMap<ModelIndex, bool>) -> Result<ModelIndex> {
    let first = covered.keys().next().ok_or_else(|| Error::arg("no models to select from"))?;
    Ok(covered
        .iter()
        .find(|(_, hit)| !**hit)
        .map_or_else(|| first.clone(), |(m, _)| m.clone()))
}

/// The singleton `{ĵ}` maximizing `|(1/n) Σ X_i(j)(Y_i − E[Y_i])|`; ties go
/// to the smallest index. Needs the response means, so simulation only.
pub fn select_max_correlation(data: &Dataset) -> Result<ModelIndex> {
    let mean_y = data
        .mean_y()
        .ok_or_else(|| Error::Capability("max-correlation selection needs the response means E[Y_i]".into()))?;
    let resid = data.y() - mean_y;
    let n = data.n() as f64;
    let mut best = (f64::NEG_INFINITY, 0);
    for j in 0..data.p() {
        let v = (data.x().column(j).dot(&resid) / n).abs();
        if v > best.0 {
            best = (v, j);
        }
    }
    Ok(ModelIndex::singleton(best.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PracticalMethod {
    ForwardStepwise,
    #[serde(rename = "bestSubsetBIC")]
    BestSubsetBic,
}

/// Residual sum of squares `n(mean Y² − β̂ᵀΓ̂(M))` from moments.
pub fn rss(moments: &MomentPair, mean_y_sq: f64, n: usize, model: &ModelIndex) -> Result<f64> {
    let f = fit(moments, model)?;
    Ok((n as f64 * (mean_y_sq - f.beta.dot(&moments.gamma_sub(model)))).max(0.0))
}

fn bic(rss: f64, n: usize, size: usize) -> f64 {
    let nf = n as f64;
    nf * (rss.max(f64::MIN_POSITIVE) / nf).ln() + size as f64 * nf.ln()
}

pub fn select_practical(data: &Dataset, method: PracticalMethod, k: usize) -> Result<ModelIndex> {
    let m = sample_moments(data);
    let my2 = data.y().dot(data.y()) / data.n() as f64;
    select_practical_from_moments(&m, my2, data.n(), method, k)
}

/// [`select_practical`] from precomputed sample moments.
pub fn select_practical_from_moments(
    moments: &MomentPair,
    mean_y_sq: f64,
    n: usize,
    method: PracticalMethod,
    k: usize,
) -> Result<ModelIndex> {
    let p = moments.p();
    if k < 1 || k > p {
        return Err(Error::arg(format!("k = {k} must satisfy 1 ≤ k ≤ p = {p}")));
    }
    match method {
        PracticalMethod::ForwardStepwise => {
            let mut chosen: Vec<usize> = Vec::new();
            let mut current = f64::INFINITY;
            while chosen.len() < k {
                let mut best: Option<(f64, usize)> = None;
                for j in (0..p).filter(|j| !chosen.contains(j)) {
                    let mut cand = chosen.clone();
                    cand.push(j);
                    let r = rss(moments, mean_y_sq, n, &ModelIndex::from_zero_based(cand, p)?)?;
                    if best.is_none_or(|(b, _)| r < b) {
                        best = Some((r, j));
                    }
                }
                let (r, j) = best.expect("k ≤ p leaves a candidate");
                // stop once adding a covariate no longer reduces the RSS
                if !chosen.is_empty() && r >= current * (1.0 - 1e-12) {
                    break;
                }
                chosen.push(j);
                current = r;
            }
            ModelIndex::from_zero_based(chosen, p)
        }
        PracticalMethod::BestSubsetBic => {
            if p > MAX_ENUMERATION_P || k > MAX_ENUMERATION_K {
                return Err(Error::Capability(format!(
                    "best-subset search is limited to p ≤ {MAX_ENUMERATION_P} and k ≤ {MAX_ENUMERATION_K}; try a smaller k"
                )));
            }
            let mut best: Option<(f64, ModelIndex)> = None;
            for model in enumerate_models(p, k)?.members {
                let score = bic(rss(moments, mean_y_sq, n, &model)?, n, model.len());
                if best.as_ref().is_none_or(|(b, _)| score < *b) {
                    best = Some((score, model));
                }
            }
            Ok(best.expect("non-empty family").1)
        }
    }
}
