//! Gaussian multiplier bootstrap for the joint quantiles of the two sup-norm
//! deviation statistics `D^Γ = ‖Γ̂ − Γ‖∞` and `D^Σ = ‖Σ̂ − Σ‖∞`.
//!
//! Replicate `j` computes `S*_j = (1/n) Σ_i e_ij (W_i − W̄)` with `e_ij` iid
//! standard normal. The factor is `1/n`, not `1/√n`, so quantiles of the
//! replicate sup-norms are on the same scale as the deviations themselves and
//! plug into the region inequalities without rescaling.
//!
//! Each replicate draws its multipliers from its own ChaCha stream
//! (`seed`, stream `j`), so results do not depend on how replicates are
//! scheduled across threads.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::moments::{build_w_matrix, WMatrix};

/// Smallest accepted replicate count.
pub const MIN_REPLICATES: usize = 100;

/// Default cap on `B·n·q`, the multiply-add count of one bootstrap run.
pub const DEFAULT_WORK_BUDGET: f64 = 2e11;

/// Replicates evaluated per matrix product.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantilePolicy {
    /// One threshold for both statistics: the order statistic of
    /// `max(sI, sII)`.
    #[default]
    CommonThreshold,
    /// Marginal quantiles at the smallest common level that reaches the
    /// target joint coverage. A heuristic aimed at tighter regions.
    MarginalSearch,
}

impl std::str::FromStr for QuantilePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "common-threshold" => Ok(Self::CommonThreshold),
            "marginal-search" => Ok(Self::MarginalSearch),
            _ => Err(Error::arg(format!(
                "unknown policy {s:?}; expected common-threshold or marginal-search"
            ))),
        }
    }
}

/// Whether the covariates are treated as random or conditioned on.
///
/// Under a fixed design `Σ̂` equals its target, `D^Σ ≡ 0`, and only the
/// `Γ` block is resampled; `cSigma` is then reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    #[default]
    Random,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub policy: QuantilePolicy,
    #[serde(default)]
    pub design: Design,
    #[serde(default = "default_budget")]
    pub work_budget: f64,
}

fn default_budget() -> f64 {
    DEFAULT_WORK_BUDGET
}

impl BootstrapConfig {
    pub fn new(b: usize, alpha: f64, seed: u64) -> Result<Self> {
        let c = Self {
            b,
            alpha,
            seed,
            policy: QuantilePolicy::default(),
            design: Design::default(),
            work_budget: DEFAULT_WORK_BUDGET,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_policy(mut self, policy: QuantilePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_design(mut self, design: Design) -> Self {
        self.design = design;
        self
    }

    pub fn with_work_budget(mut self, budget: f64) -> Self {
        self.work_budget = budget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b < MIN_REPLICATES {
            return Err(Error::arg(format!("B = {} is below the minimum of {MIN_REPLICATES}", self.b)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::arg(format!("alpha = {} must lie strictly between 0 and 1", self.alpha)));
        }
        Ok(())
    }

    /// 1-based index `⌈(1−α)B⌉` of the order statistic used as the quantile.
    pub fn order_index(&self) -> usize {
        order_index(self.b, self.alpha)
    }
}

/// `⌈(1−α)B⌉`, clamped to `1..=B`. The small offset keeps products like
/// `0.95·100` from rounding up to the next integer.
pub fn order_index(b: usize, alpha: f64) -> usize {
    let raw = ((1.0 - alpha) * b as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(b)
}

/// The `⌈(1−α)B⌉`-th smallest value.
pub fn upper_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[order_index(v.len(), alpha) - 1]
}

/// Per-replicate sup-norms of the `Γ` block (`sI`) and the `Σ` block (`sII`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStats {
    #[serde(rename = "sI")]
    pub s_i: Vec<f64>,
    #[serde(rename = "sII")]
    pub s_ii: Vec<f64>,
}

impl ReplicateStats {
    pub fn len(&self) -> usize {
        self.s_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_i.is_empty()
    }

    /// Replicates with `sI ≤ c_gamma` and `sII ≤ c_sigma`.
    pub fn joint_count(&self, c_gamma: f64, c_sigma: f64) -> usize {
        self.s_i
            .iter()
            .zip(&self.s_ii)
            .filter(|(a, b)| **a <= c_gamma && **b <= c_sigma)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuantilePair {
    pub c_gamma: f64,
    pub c_sigma: f64,
    pub c_max: f64,
    pub achieved_coverage: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub policy: QuantilePolicy,
    #[serde(default)]
    pub design: Design,
}

impl QuantilePair {
    /// Quantiles given directly rather than estimated (for tests and for
    /// regions built from externally supplied constants).
    pub fn fixed(c_gamma: f64, c_sigma: f64) -> Self {
        Self {
            c_gamma,
            c_sigma,
            c_max: c_gamma.max(c_sigma),
            achieved_coverage: 1.0,
            alpha: 0.05,
            b: 0,
            seed: 0,
            policy: QuantilePolicy::CommonThreshold,
            design: Design::Random,
        }
    }
}

/// Projected multiply-add count `B·n·q` for a bootstrap run.
pub fn projected_work(w: &WMatrix, config: &BootstrapConfig) -> f64 {
    let q = match config.design {
        Design::Random => w.q(),
        Design::Fixed => w.p(),
    };
    config.b as f64 * w.n() as f64 * q as f64
}

/// Runs the multiplier bootstrap on the product-vector matrix.
pub fn run_replicates(w: &WMatrix, config: &BootstrapConfig) -> Result<ReplicateStats> {
    config.validate()?;
    let projected = projected_work(w, config);
    if projected > config.work_budget {
        return Err(Error::Budget { projected, limit: config.work_budget });
    }
    let n = w.n();
    let p = w.p();
    let q = match config.design {
        Design::Random => w.q(),
        Design::Fixed => p,
    };
    let means = w.column_means();
    // centered and transposed: q × n
    let wct = DMatrix::from_fn(q, n, |c, i| w.rows()[(i, c)] - means[c]);
    let inv_n = 1.0 / n as f64;

    let chunks: Vec<(usize, usize)> = (0..config.b)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(config.b)))
        .collect();
    let parts: Vec<Vec<(f64, f64)>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let blk = end - start;
            let mut e = DMatrix::<f64>::zeros(n, blk);
            for (c, j) in (start..end).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(j as u64);
                for v in e.column_mut(c).iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
            let s = &wct * &e;
            (0..blk)
                .map(|c| {
                    let col = s.column(c);
                    let sup = |r: std::ops::Range<usize>| {
                        r.fold(0.0_f64, |acc, i| acc.max(col[i].abs())) * inv_n
                    };
                    (sup(0..p), sup(p..q))
                })
                .collect()
        })
        .collect();
    let (s_i, s_ii) = parts.into_iter().flatten().unzip();
    Ok(ReplicateStats { s_i, s_ii })
}

/// Turns replicate statistics into quantile thresholds.
pub fn joint_quantiles(stats: &ReplicateStats, config: &BootstrapConfig) -> Result<QuantilePair> {
    config.validate()?;
    let b = stats.len();
    if b == 0 || stats.s_ii.len() != b {
        return Err(Error::arg("replicate statistics are empty or ragged"));
    }
    let idx = order_index(b, config.alpha);
    let maxes: Vec<f64> = stats.s_i.iter().zip(&stats.s_ii).map(|(a, c)| a.max(*c)).collect();
    let mut sorted_max = maxes;
    sorted_max.sort_by(f64::total_cmp);
    let c_max = sorted_max[idx - 1];

    let (c_gamma, c_sigma) = match (config.design, config.policy) {
        (Design::Fixed, _) => (c_max, 0.0),
        (Design::Random, QuantilePolicy::CommonThreshold) => (c_max, c_max),
        (Design::Random, QuantilePolicy::MarginalSearch) => {
            let mut si = stats.s_i.clone();
            let mut sii = stats.s_ii.clone();
            si.sort_by(f64::total_cmp);
            sii.sort_by(f64::total_cmp);
            // joint coverage of the m-th marginal order statistics is
            // nondecreasing in m and equals B at m = B
            let (mut lo, mut hi) = (idx, b);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if stats.joint_count(si[mid - 1], sii[mid - 1]) >= idx {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            (si[lo - 1], sii[lo - 1])
        }
    };
    let achieved_coverage = stats.joint_count(c_gamma, c_sigma) as f64 / b as f64;
    Ok(QuantilePair {
        c_gamma,
        c_sigma,
        c_max,
        achieved_coverage,
        alpha: config.alpha,
        b,
        seed: config.seed,
        policy: config.policy,
        design: config.design,
    })
}

/// Product vectors, replicates and quantiles in one call.
pub fn estimate_quantiles(data: &Dataset, config: &BootstrapConfig) -> Result<QuantilePair> {
    let w = build_w_matrix(data)?;
    let stats = run_replicates(&w, config)?;
    joint_quantiles(&stats, config)
}
