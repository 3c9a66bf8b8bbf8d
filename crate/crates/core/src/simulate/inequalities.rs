//! The deterministic inequalities behind every region, checked on a single
//! sample against its population moments:
//!
//! * `‖Σ̂(M)(β̂ − β)‖∞ ≤ D^Γ + D^Σ‖β‖₁`
//! * `‖β̂ − β‖₁ ≤ |M|(D^Γ + D^Σ‖β‖₁)/(Λ(k) − k·D^Σ)` and its ℓ₂ analogue,
//!   when `k·D^Σ < Λ(k)`
//! * `‖β̂ − β‖₂ ≤ √k·D^Γ/Λ(k)` under a fixed design
//! * `‖Σ̂(M) − Σ(M)‖_op ≤ |M|·D^Σ`

use serde::Serialize;

use crate::data::enumerate_models;
use crate::error::Result;
use crate::linalg::{l1_norm, sym_operator_norm};
use crate::moments::{deviation_stats, MomentPair};
use crate::ols::{
    deterministic_bound_check, fit, fixed_design_l2_bound, l1_error_bound, l2_error_bound, lambda_min_over_models,
    BOUND_SLACK,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InequalityTally {
    pub checks: usize,
    pub failures: usize,
    /// Smallest `rhs − lhs` seen.
    pub min_slack: f64,
}

impl InequalityTally {
    fn record(&mut self, lhs: f64, rhs: f64) {
        let slack = rhs - lhs;
        if self.checks == 0 || slack < self.min_slack {
            self.min_slack = slack;
        }
        self.checks += 1;
        if slack < -BOUND_SLACK {
            self.failures += 1;
        }
    }

    pub fn merge(&mut self, other: &InequalityTally) {
        if other.checks == 0 {
            return;
        }
        if self.checks == 0 || other.min_slack < self.min_slack {
            self.min_slack = other.min_slack;
        }
        self.checks += other.checks;
        self.failures += other.failures;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InequalityReport {
    pub sup_norm_bound: InequalityTally,
    pub l1_bound: InequalityTally,
    pub l2_bound: InequalityTally,
    pub fixed_design_l2_bound: InequalityTally,
    pub operator_norm_bound: InequalityTally,
    /// Models skipped by the ℓ₁/ℓ₂ bounds because `k·D^Σ ≥ Λ(k)`.
    pub bound_infeasible: usize,
}

impl InequalityReport {
    pub fn failures(&self) -> usize {
        self.sup_norm_bound.failures
            + self.l1_bound.failures
            + self.l2_bound.failures
            + self.fixed_design_l2_bound.failures
            + self.operator_norm_bound.failures
    }

    pub fn merge(&mut self, other: &InequalityReport) {
        self.sup_norm_bound.merge(&other.sup_norm_bound);
        self.l1_bound.merge(&other.l1_bound);
        self.l2_bound.merge(&other.l2_bound);
        self.fixed_design_l2_bound.merge(&other.fixed_design_l2_bound);
        self.operator_norm_bound.merge(&other.operator_norm_bound);
        self.bound_infeasible += other.bound_infeasible;
    }
}

/// Checks every inequality on every model of size at most `k`.
pub fn check_inequalities(sample: &MomentPair, population: &MomentPair, k: usize) -> Result<InequalityReport> {
    let dev = deviation_stats(sample, population)?;
    let lambda = lambda_min_over_models(population, k)?;
    let mut rep = InequalityReport::default();
    for model in enumerate_models(sample.p(), k)?.members {
        let check = deterministic_bound_check(sample, population, &model)?;
        rep.sup_norm_bound.record(check.lhs, check.rhs);

        let hat = fit(sample, &model)?.beta;
        let target = fit(population, &model)?.beta;
        let err = &hat - &target;
        let target_l1 = l1_norm(&target);
        match (
            l1_error_bound(&dev, &lambda, &model, target_l1).value(),
            l2_error_bound(&dev, &lambda, &model, target_l1).value(),
        ) {
            (Some(b1), Some(b2)) => {
                rep.l1_bound.record(l1_norm(&err), b1);
                rep.l2_bound.record(err.norm(), b2);
            }
            _ => rep.bound_infeasible += 1,
        }
        if dev.d_sigma == 0.0 {
            if let Some(b) = fixed_design_l2_bound(dev.d_gamma, &lambda).value() {
                rep.fixed_design_l2_bound.record(err.norm(), b);
            }
        }
        let diff = sample.sigma_sub(&model) - population.sigma_sub(&model);
        rep.operator_norm_bound.record(sym_operator_norm(&diff), model.len() as f64 * dev.d_sigma);
    }
    Ok(rep)
}
