//! Monte Carlo experiments: simultaneous and post-selection coverage, the
//! volume rate of the dagger region, and the comparison with max-|t| boxes
//! on fixed designs.
//!
//! Replications run in parallel; each uses seeds derived from the configured
//! base seeds and its replication number, and results are aggregated in
//! replication order, so reports do not depend on the thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bootstrap::{estimate_quantiles, upper_quantile, BootstrapConfig, Design, QuantilePair};
use crate::data::{enumerate_models, ModelFamily, ModelIndex};
use crate::error::{Error, Result};
use crate::linalg::{principal_submatrix, sym_eigenvalues};
use crate::moments::{deviation_stats, sample_moments, w_columns, DeviationPair};
use crate::ols::fit;
use crate::regions::{dagger_volume, mc_volume, RegionKind, RegionSpec};

use super::dgp::{derive_seed, fixed_design_matrix, generate, DgpKind, DgpSpec};
use super::inequalities::{check_inequalities, InequalityReport};
use super::select::{
    select_adversarial, select_max_correlation, select_practical_from_moments, PracticalMethod,
};

/// Default cap on total bootstrap work `reps·B·n·q` for one experiment.
pub const DEFAULT_EXPERIMENT_BUDGET: f64 = 1e12;

/// A region kind, or the intersection of all listed region kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoverageKind {
    Region(RegionKind),
    Intersection,
}

impl CoverageKind {
    pub fn name(self) -> &'static str {
        match self {
            CoverageKind::Region(k) => k.name(),
            CoverageKind::Intersection => "intersection",
        }
    }
}

impl std::str::FromStr for CoverageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "intersection" {
            Ok(CoverageKind::Intersection)
        } else {
            Ok(CoverageKind::Region(s.parse()?))
        }
    }
}

impl Serialize for CoverageKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CoverageKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExperimentKind {
    #[default]
    Coverage,
    VolumeRate,
    MaxT,
}

fn default_kinds() -> Vec<CoverageKind> {
    vec![CoverageKind::Region(RegionKind::Finite), CoverageKind::Region(RegionKind::Dagger)]
}

fn default_reps() -> usize {
    100
}

fn default_budget() -> f64 {
    DEFAULT_EXPERIMENT_BUDGET
}

/// Experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentKind,
    pub dgp: DgpSpec,
    pub k: usize,
    pub bootstrap: BootstrapConfig,
    #[serde(default = "default_kinds")]
    pub region_kinds: Vec<CoverageKind>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub k_grid: Vec<usize>,
    /// Monte Carlo points for the finite-region volume estimate on the first
    /// replication (coverage experiments only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_volume_points: Option<usize>,
    #[serde(default = "default_budget")]
    pub work_budget: f64,
}

impl ExperimentConfig {
    pub fn coverage(dgp: DgpSpec, k: usize, bootstrap: BootstrapConfig, kinds: Vec<CoverageKind>, reps: usize) -> Self {
        Self {
            experiment: ExperimentKind::Coverage,
            dgp,
            k,
            bootstrap,
            region_kinds: kinds,
            reps,
            n_grid: Vec::new(),
            k_grid: Vec::new(),
            mc_volume_points: None,
            work_budget: DEFAULT_EXPERIMENT_BUDGET,
        }
    }
}

/// A Monte Carlo frequency with its standard error `√(c(1−c)/reps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Frequency {
    pub value: f64,
    pub mc_se: f64,
}

impl Frequency {
    pub fn from_count(hits: usize, reps: usize) -> Self {
        let c = hits as f64 / reps as f64;
        Self { value: c, mc_se: (c * (1.0 - c) / reps as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelCoverage {
    pub model: ModelIndex,
    pub coverage: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct KindReport {
    pub kind: CoverageKind,
    pub simultaneous_coverage: Frequency,
    pub per_model_coverage: Vec<ModelCoverage>,
    pub selector_coverage: BTreeMap<String, Frequency>,
    /// Replications where the adversarial selector's event differed from the
    /// simultaneous event.
    pub adversarial_mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelVolume {
    pub model: ModelIndex,
    /// `None` if any replication produced an unbounded region.
    pub mean_volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct McVolumeEntry {
    pub model: ModelIndex,
    pub volume: Option<f64>,
    pub standard_error: Option<f64>,
    pub unbounded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MeanQuantiles {
    pub c_gamma: f64,
    pub c_sigma: f64,
    pub c_max: f64,
}

/// One row of the per-replication event table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepEvent {
    pub rep: usize,
    pub kind: String,
    pub simultaneous: bool,
    pub adversarial: bool,
    #[serde(rename = "maxCorrelation")]
    pub max_correlation: Option<bool>,
    #[serde(rename = "forwardStepwise")]
    pub forward_stepwise: Option<bool>,
    #[serde(rename = "bestSubsetBIC")]
    pub best_subset_bic: Option<bool>,
    #[serde(rename = "adversarialModel")]
    pub adversarial_model: String,
    #[serde(rename = "dGamma")]
    pub d_gamma: f64,
    #[serde(rename = "dSigma")]
    pub d_sigma: f64,
    #[serde(rename = "cGamma")]
    pub c_gamma: f64,
    #[serde(rename = "cSigma")]
    pub c_sigma: f64,
    #[serde(rename = "cMax")]
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageReport {
    pub experiment: ExperimentKind,
    pub dgp: DgpKind,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub reps: usize,
    pub alpha: f64,
    pub models: usize,
    pub kinds: Vec<KindReport>,
    /// Replications where `D^Γ ≤ cGamma` and `D^Σ ≤ cSigma`.
    pub quantile_coverage: Frequency,
    pub mean_quantiles: MeanQuantiles,
    pub mean_deviations: DeviationPair,
    pub mean_dagger_volume_per_model: Vec<ModelVolume>,
    pub inequalities: InequalityReport,
    pub approximate_oracle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_volume: Option<Vec<McVolumeEntry>>,
    /// Wall-clock time; kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
    #[serde(skip)]
    pub events: Vec<RepEvent>,
}

impl CoverageReport {
    pub fn kind(&self, kind: CoverageKind) -> Option<&KindReport> {
        self.kinds.iter().find(|k| k.kind == kind)
    }
}

/// Writes the per-replication events as CSV.
pub fn write_events_csv<W: Write>(events: &[RepEvent], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in events {
        w.serialize(e).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

fn effective_q(p: usize, design: Design) -> usize {
    match design {
        Design::Random => w_columns(p),
        Design::Fixed => p,
    }
}

fn check_budget(projected: f64, limit: f64) -> Result<()> {
    if projected > limit {
        return Err(Error::Budget { projected, limit });
    }
    Ok(())
}

fn rep_bootstrap(config: &BootstrapConfig, rep: usize) -> BootstrapConfig {
    BootstrapConfig { seed: derive_seed(config.seed, rep as u64), work_budget: f64::INFINITY, ..*config }
}

struct RepOutcome {
    /// `covered[kind][model]`
    covered: Vec<Vec<bool>>,
    /// Family positions picked by max-correlation, forward stepwise, best-subset BIC.
    picks: [Option<usize>; 3],
    dev: DeviationPair,
    quantiles: QuantilePair,
    dagger_volumes: Vec<Option<f64>>,
    inequalities: InequalityReport,
    mc_volume: Option<Vec<McVolumeEntry>>,
}

fn coverage_rep(
    config: &ExperimentConfig,
    family: &ModelFamily,
    region_kinds: &[RegionKind],
    n_kinds: usize,
    rep: usize,
) -> Result<RepOutcome> {
    let spec = config.dgp.with_seed(derive_seed(config.dgp.seed, rep as u64));
    let (data, oracle) = generate(&spec)?;
    let q = estimate_quantiles(&data, &rep_bootstrap(&config.bootstrap, rep))?;
    let sm = sample_moments(&data);
    let my2 = data.y().dot(data.y()) / data.n() as f64;
    let dev = deviation_stats(&sm, &oracle.moments)?;
    let inequalities = check_inequalities(&sm, &oracle.moments, config.k)?;

    let mut covered = vec![vec![false; family.len()]; n_kinds];
    let mut dagger_volumes = Vec::with_capacity(family.len());
    for (mi, model) in family.iter().enumerate() {
        let f = fit(&sm, model)?;
        let target = oracle.target(model)?;
        let mut all = true;
        for (ki, kind) in region_kinds.iter().enumerate() {
            let r = RegionSpec::new(*kind, &sm, f.clone(), q, Some(my2))?;
            let hit = r.contains(&target)?;
            covered[ki][mi] = hit;
            all &= hit;
        }
        if n_kinds > region_kinds.len() {
            covered[n_kinds - 1][mi] = all;
        }
        let dag = RegionSpec::new(RegionKind::Dagger, &sm, f, q, None)?;
        dagger_volumes.push(dagger_volume(&dag)?.volume);
    }

    let position = |m: &ModelIndex| family.members.binary_search(m).ok();
    let p = data.p();
    let picks = [
        select_max_correlation(&data).ok().as_ref().and_then(position),
        select_practical_from_moments(&sm, my2, data.n(), PracticalMethod::ForwardStepwise, config.k)
            .ok()
            .as_ref()
            .and_then(position),
        select_practical_from_moments(&sm, my2, data.n(), PracticalMethod::BestSubsetBic, config.k.min(p))
            .ok()
            .as_ref()
            .and_then(position),
    ];

    let mc = match (rep, config.mc_volume_points) {
        (0, Some(points)) => {
            let mut out = Vec::with_capacity(family.len());
            for (mi, model) in family.iter().enumerate() {
                let r = RegionSpec::build(RegionKind::Finite, &sm, model, q, None)?;
                let entry = match mc_volume(&r, points, derive_seed(config.bootstrap.seed ^ 0x6d63, mi as u64)) {
                    Ok(v) => McVolumeEntry {
                        model: model.clone(),
                        volume: Some(v.volume),
                        standard_error: Some(v.standard_error),
                        unbounded: false,
                    },
                    Err(Error::Capability(_)) => {
                        McVolumeEntry { model: model.clone(), volume: None, standard_error: None, unbounded: true }
                    }
                    Err(e) => return Err(e),
                };
                out.push(entry);
            }
            Some(out)
        }
        _ => None,
    };

    Ok(RepOutcome { covered, picks, dev, quantiles: q, dagger_volumes, inequalities, mc_volume: mc })
}

/// Coverage of every listed region kind over `reps` replications.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<CoverageReport> {
    let start = Instant::now();
    config.dgp.validate()?;
    config.bootstrap.validate()?;
    if config.reps == 0 {
        return Err(Error::arg("reps must be positive"));
    }
    if config.region_kinds.is_empty() {
        return Err(Error::arg("list at least one region kind"));
    }
    let spec = &config.dgp;
    let family = enumerate_models(spec.p, config.k)?;
    let projected = config.reps as f64
        * config.bootstrap.b as f64
        * spec.n as f64
        * effective_q(spec.p, config.bootstrap.design) as f64;
    check_budget(projected, config.work_budget)?;

    let mut region_kinds: Vec<RegionKind> = Vec::new();
    let mut want_intersection = false;
    for k in &config.region_kinds {
        match k {
            CoverageKind::Region(r) if !region_kinds.contains(r) => region_kinds.push(*r),
            CoverageKind::Region(_) => {}
            CoverageKind::Intersection => want_intersection = true,
        }
    }
    if want_intersection && region_kinds.is_empty() {
        return Err(Error::arg("intersection needs at least one other region kind"));
    }
    let mut kinds: Vec<CoverageKind> = region_kinds.iter().map(|k| CoverageKind::Region(*k)).collect();
    if want_intersection {
        kinds.push(CoverageKind::Intersection);
    }
    let n_kinds = kinds.len();

    let outcomes: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|rep| coverage_rep(config, &family, &region_kinds, n_kinds, rep))
        .collect::<Result<_>>()?;

    let reps = config.reps;
    let selector_names = ["maxCorrelation", "forwardStepwise", "bestSubsetBIC"];
    let mut events = Vec::with_capacity(reps * n_kinds);
    let mut kind_reports = Vec::with_capacity(n_kinds);
    for (ki, kind) in kinds.iter().enumerate() {
        let mut per_model = vec![0usize; family.len()];
        let mut simultaneous = 0usize;
        let mut adversarial = 0usize;
        let mut mismatches = 0usize;
        let mut selector_hits = [0usize; 3];
        let mut selector_reps = [0usize; 3];
        for (rep, o) in outcomes.iter().enumerate() {
            let cov = &o.covered[ki];
            for (mi, hit) in cov.iter().enumerate() {
                per_model[mi] += usize::from(*hit);
            }
            let sim = cov.iter().all(|h| *h);
            let map: BTreeMap<ModelIndex, bool> = family.iter().cloned().zip(cov.iter().copied()).collect();
            let adv_model = select_adversarial(&map)?;
            let adv = map[&adv_model];
            simultaneous += usize::from(sim);
            adversarial += usize::from(adv);
            mismatches += usize::from(adv != sim);
            let mut sel = [None; 3];
            for s in 0..3 {
                if let Some(mi) = o.picks[s] {
                    selector_reps[s] += 1;
                    selector_hits[s] += usize::from(cov[mi]);
                    sel[s] = Some(cov[mi]);
                }
            }
            events.push(RepEvent {
                rep,
                kind: kind.name().to_string(),
                simultaneous: sim,
                adversarial: adv,
                max_correlation: sel[0],
                forward_stepwise: sel[1],
                best_subset_bic: sel[2],
                adversarial_model: adv_model.to_string(),
                d_gamma: o.dev.d_gamma,
                d_sigma: o.dev.d_sigma,
                c_gamma: o.quantiles.c_gamma,
                c_sigma: o.quantiles.c_sigma,
                c_max: o.quantiles.c_max,
            });
        }
        let mut selector_coverage = BTreeMap::new();
        selector_coverage.insert("adversarial".to_string(), Frequency::from_count(adversarial, reps));
        for s in 0..3 {
            if selector_reps[s] > 0 {
                selector_coverage
                    .insert(selector_names[s].to_string(), Frequency::from_count(selector_hits[s], selector_reps[s]));
            }
        }
        kind_reports.push(KindReport {
            kind: *kind,
            simultaneous_coverage: Frequency::from_count(simultaneous, reps),
            per_model_coverage: family
                .iter()
                .zip(&per_model)
                .map(|(m, c)| ModelCoverage { model: m.clone(), coverage: Frequency::from_count(*c, reps) })
                .collect(),
            selector_coverage,
            adversarial_mismatches: mismatches,
        });
    }
    // events grouped by replication, then kind
    events.sort_by_key(|e| e.rep);

    let rf = reps as f64;
    let mut mq = MeanQuantiles { c_gamma: 0.0, c_sigma: 0.0, c_max: 0.0 };
    let mut md = DeviationPair { d_gamma: 0.0, d_sigma: 0.0 };
    let mut quantile_hits = 0;
    let mut inequalities = InequalityReport::default();
    let mut vol_sums: Vec<Option<f64>> = vec![Some(0.0); family.len()];
    for o in &outcomes {
        mq.c_gamma += o.quantiles.c_gamma / rf;
        mq.c_sigma += o.quantiles.c_sigma / rf;
        mq.c_max += o.quantiles.c_max / rf;
        md.d_gamma += o.dev.d_gamma / rf;
        md.d_sigma += o.dev.d_sigma / rf;
        quantile_hits += usize::from(o.dev.d_gamma <= o.quantiles.c_gamma && o.dev.d_sigma <= o.quantiles.c_sigma);
        inequalities.merge(&o.inequalities);
        for (acc, v) in vol_sums.iter_mut().zip(&o.dagger_volumes) {
            *acc = match (*acc, v) {
                (Some(a), Some(v)) => Some(a + v / rf),
                _ => None,
            };
        }
    }

    Ok(CoverageReport {
        experiment: ExperimentKind::Coverage,
        dgp: spec.kind,
        n: spec.n,
        p: spec.p,
        k: config.k,
        reps,
        alpha: config.bootstrap.alpha,
        models: family.len(),
        kinds: kind_reports,
        quantile_coverage: Frequency::from_count(quantile_hits, reps),
        mean_quantiles: mq,
        mean_deviations: md,
        mean_dagger_volume_per_model: family
            .iter()
            .zip(vol_sums)
            .map(|(m, v)| ModelVolume { model: m.clone(), mean_volume: v })
            .collect(),
        inequalities,
        approximate_oracle: false,
        mc_volume: outcomes.first().and_then(|o| o.mc_volume.clone()),
        runtime_seconds: start.elapsed().as_secs_f64(),
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VolumeRateRow {
    pub n: usize,
    pub model_size: usize,
    pub mean_volume: f64,
    /// `meanVolume^{1/|M|}`.
    pub per_coordinate: f64,
    pub unbounded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SizeSlope {
    pub model_size: usize,
    /// OLS slope of `log meanVolume^{1/|M|}` on `log n`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VolumeRateReport {
    pub experiment: ExperimentKind,
    pub dgp: DgpKind,
    pub p: usize,
    pub k: usize,
    pub reps: usize,
    pub alpha: f64,
    pub rows: Vec<VolumeRateRow>,
    pub slopes: Vec<SizeSlope>,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean dagger volume per model size along a grid of sample sizes.
pub fn run_volume_rate_experiment(config: &ExperimentConfig) -> Result<VolumeRateReport> {
    let start = Instant::now();
    config.bootstrap.validate()?;
    let grid = &config.n_grid;
    if grid.len() < 2 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("nGrid needs at least two strictly increasing sample sizes"));
    }
    // the grid overrides dgp.n
    for &n in grid {
        DgpSpec { n, ..config.dgp.clone() }.validate()?;
    }
    if config.reps == 0 {
        return Err(Error::arg("reps must be positive"));
    }
    let p = config.dgp.p;
    let family = enumerate_models(p, config.k)?;
    let q = effective_q(p, config.bootstrap.design) as f64;
    let projected: f64 = grid.iter().map(|n| config.reps as f64 * config.bootstrap.b as f64 * *n as f64 * q).sum();
    check_budget(projected, config.work_budget)?;

    let mut rows = Vec::new();
    for (gi, &n) in grid.iter().enumerate() {
        let base = DgpSpec { n, ..config.dgp.clone() };
        let per_rep: Vec<Vec<Option<f64>>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let stream = (gi * config.reps + rep) as u64;
                let spec = base.with_seed(derive_seed(base.seed, stream));
                let (data, _) = generate(&spec)?;
                let qp = estimate_quantiles(&data, &rep_bootstrap(&config.bootstrap, gi * config.reps + rep))?;
                let sm = sample_moments(&data);
                family
                    .iter()
                    .map(|m| Ok(dagger_volume(&RegionSpec::build(RegionKind::Dagger, &sm, m, qp, None)?)?.volume))
                    .collect()
            })
            .collect::<Result<_>>()?;
        for size in 1..=config.k {
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut unbounded = 0usize;
            for vols in &per_rep {
                for (m, v) in family.iter().zip(vols) {
                    if m.len() != size {
                        continue;
                    }
                    match v {
                        Some(v) => {
                            sum += v;
                            count += 1;
                        }
                        None => unbounded += 1,
                    }
                }
            }
            let mean = sum / count.max(1) as f64;
            rows.push(VolumeRateRow {
                n,
                model_size: size,
                mean_volume: mean,
                per_coordinate: mean.powf(1.0 / size as f64),
                unbounded,
            });
        }
    }
    let slopes = (1..=config.k)
        .map(|size| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.model_size == size)
                .map(|r| ((r.n as f64).ln(), r.per_coordinate.ln()))
                .unzip();
            SizeSlope { model_size: size, slope: ols_slope(&x, &y) }
        })
        .collect();
    Ok(VolumeRateReport {
        experiment: ExperimentKind::VolumeRate,
        dgp: config.dgp.kind,
        p,
        k: config.k,
        reps: config.reps,
        alpha: config.bootstrap.alpha,
        rows,
        slopes,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HalfWidths {
    pub max_t: f64,
    pub dagger: f64,
    /// `maxT / dagger`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SizeVolumeRatio {
    pub model_size: usize,
    /// Geometric mean of `vol(max-t) / vol(dagger)` over models and reps.
    pub geometric_mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MaxTRow {
    pub k: usize,
    /// Estimated `(1−α)` quantile of the max-|t| statistic over `𝓜_p(k)`.
    pub c_max_t: f64,
    /// Mean half-widths for the max-correlation selected singleton.
    pub selected: HalfWidths,
    /// Mean half-widths over all singleton models.
    pub singletons: HalfWidths,
    pub volume_ratio_by_size: Vec<SizeVolumeRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MaxTReport {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub alpha: f64,
    pub noise_sd: f64,
    pub mean_c_gamma: f64,
    pub rows: Vec<MaxTRow>,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

struct MaxTModel {
    model: ModelIndex,
    inv: DMatrix<f64>,
    /// `σ_M(j) = σ·√[Σ̂(M)⁻¹]_jj`
    sd: DVector<f64>,
    log_det: f64,
}

/// Max-|t| boxes versus dagger regions on a fixed design with homoskedastic
/// Gaussian noise, where the studentized statistic has known scale.
pub fn run_max_t_comparison(config: &ExperimentConfig) -> Result<MaxTReport> {
    let start = Instant::now();
    let spec = &config.dgp;
    spec.validate()?;
    if spec.kind != DgpKind::FixedDesign || spec.hetero_weight != 0.0 {
        return Err(Error::arg("the max-|t| comparison needs a fixedDesign process with heteroWeight = 0"));
    }
    let boot = BootstrapConfig { design: Design::Fixed, ..config.bootstrap };
    boot.validate()?;
    let mut k_grid = if config.k_grid.is_empty() { (1..=config.k).collect() } else { config.k_grid.clone() };
    k_grid.sort_unstable();
    k_grid.dedup();
    let k_max = *k_grid.last().expect("non-empty");
    if config.reps < 10 {
        return Err(Error::arg("the max-|t| comparison needs at least 10 replications"));
    }
    let projected = config.reps as f64 * boot.b as f64 * spec.n as f64 * spec.p as f64;
    check_budget(projected, config.work_budget)?;

    let p = spec.p;
    let n = spec.n;
    let sigma = spec.noise_sd;
    let family = enumerate_models(p, k_max)?;
    if k_grid[0] == 0 {
        return Err(Error::arg("kGrid entries must be positive"));
    }
    let x = fixed_design_matrix(spec)?;
    let gram = x.transpose() * &x / n as f64;
    let mut models = Vec::with_capacity(family.len());
    for m in family.iter() {
        let s = principal_submatrix(&gram, m.indices());
        let ev = sym_eigenvalues(&s);
        if ev[0] <= 1e-10 * ev[ev.len() - 1] {
            return Err(Error::Validation(format!("design is singular on model {m}")));
        }
        let inv = s.try_inverse().ok_or_else(|| Error::Validation(format!("design is singular on model {m}")))?;
        let sd = DVector::from_fn(m.len(), |j, _| sigma * inv[(j, j)].sqrt());
        models.push(MaxTModel { model: m.clone(), inv, sd, log_det: ev.iter().map(|v| v.ln()).sum() });
    }

    struct Rep {
        t_by_k: Vec<f64>,
        c_gamma: f64,
        radius_scale: f64,
        selected: usize,
    }
    let root_n = (n as f64).sqrt();
    let reps: Vec<Rep> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let (data, oracle) = generate(&spec.with_seed(derive_seed(spec.seed, rep as u64)))?;
            let sm = sample_moments(&data);
            let g = sm.gamma() - oracle.moments.gamma();
            let mut t_by_k = vec![0.0_f64; k_grid.len()];
            for mm in &models {
                let gm = DVector::from_iterator(mm.model.len(), mm.model.indices().iter().map(|&j| g[j]));
                let z = &mm.inv * gm;
                let t = (0..z.len()).fold(0.0_f64, |a, j| a.max(root_n * z[j].abs() / mm.sd[j]));
                for (ki, &k) in k_grid.iter().enumerate() {
                    if mm.model.len() <= k {
                        t_by_k[ki] = t_by_k[ki].max(t);
                    }
                }
            }
            let q = estimate_quantiles(&data, &rep_bootstrap(&boot, rep))?;
            let selected = select_max_correlation(&data)?.indices()[0];
            Ok(Rep { t_by_k, c_gamma: q.c_gamma, radius_scale: q.c_sigma, selected })
        })
        .collect::<Result<_>>()?;

    let rf = reps.len() as f64;
    let mut rows = Vec::with_capacity(k_grid.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        let t: Vec<f64> = reps.iter().map(|r| r.t_by_k[ki]).collect();
        let c = upper_quantile(&t, boot.alpha);
        let max_t_hw = |j: usize| c * sigma / gram[(j, j)].sqrt() / root_n;
        // dagger singleton region |Σ̂_jj(β̂ − θ)| ≤ cΓ + cΣ|β̂|; cΣ is zero here
        let dagger_hw = |r: &Rep, j: usize| (r.c_gamma) / gram[(j, j)] + 0.0 * r.radius_scale;
        let (mut sel_t, mut sel_d, mut all_t, mut all_d) = (0.0, 0.0, 0.0, 0.0);
        for r in &reps {
            sel_t += max_t_hw(r.selected) / rf;
            sel_d += dagger_hw(r, r.selected) / rf;
            for j in 0..p {
                all_t += max_t_hw(j) / (rf * p as f64);
                all_d += dagger_hw(r, j) / (rf * p as f64);
            }
        }
        let mut volume_ratio_by_size = Vec::new();
        for size in 1..=k {
            let mut sum = 0.0;
            let mut count = 0usize;
            for mm in models.iter().filter(|m| m.model.len() == size) {
                let log_max_t: f64 = mm.sd.iter().map(|s| (2.0 * c * s / root_n).ln()).sum();
                for r in &reps {
                    let log_dagger = size as f64 * (2.0 * r.c_gamma).ln() - mm.log_det;
                    sum += log_max_t - log_dagger;
                    count += 1;
                }
            }
            volume_ratio_by_size
                .push(SizeVolumeRatio { model_size: size, geometric_mean_ratio: (sum / count as f64).exp() });
        }
        rows.push(MaxTRow {
            k,
            c_max_t: c,
            selected: HalfWidths { max_t: sel_t, dagger: sel_d, ratio: sel_t / sel_d },
            singletons: HalfWidths { max_t: all_t, dagger: all_d, ratio: all_t / all_d },
            volume_ratio_by_size,
        });
    }
    Ok(MaxTReport {
        experiment: ExperimentKind::MaxT,
        n,
        p,
        reps: config.reps,
        alpha: boot.alpha,
        noise_sd: sigma,
        mean_c_gamma: reps.iter().map(|r| r.c_gamma).sum::<f64>() / rf,
        rows,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum ExperimentReport {
    Coverage(CoverageReport),
    VolumeRate(VolumeRateReport),
    MaxT(MaxTReport),
}

impl ExperimentReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Dispatches on `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(match config.experiment {
        ExperimentKind::Coverage => ExperimentReport::Coverage(run_coverage_experiment(config)?),
        ExperimentKind::VolumeRate => ExperimentReport::VolumeRate(run_volume_rate_experiment(config)?),
        ExperimentKind::MaxT => ExperimentReport::MaxT(run_max_t_comparison(config)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::dgp::DesignCovariance;

    fn small_config(reps: usize) -> ExperimentConfig {
        let mut dgp = DgpSpec::new(DgpKind::GaussianLinear, 80, 3, 5);
        dgp.coefficients = Some(vec![1.0, 0.0, -0.5]);
        let kinds = vec![
            CoverageKind::Region(RegionKind::Finite),
            CoverageKind::Region(RegionKind::Dagger),
            CoverageKind::Region(RegionKind::LassoDagger),
            CoverageKind::Intersection,
        ];
        ExperimentConfig::coverage(dgp, 2, BootstrapConfig::new(200, 0.1, 9).unwrap(), kinds, reps)
    }

    #[test]
    fn config_json() {
        let js = r#"{"dgp":{"kind":"gaussianLinear","n":50,"p":3,"seed":1},"k":2,
            "bootstrap":{"B":200,"alpha":0.1,"seed":4},"regionKinds":["finite","intersection"],"reps":5}"#;
        let c: ExperimentConfig = serde_json::from_str(js).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Coverage);
        assert_eq!(c.region_kinds, vec![CoverageKind::Region(RegionKind::Finite), CoverageKind::Intersection]);
        assert!(serde_json::from_str::<ExperimentConfig>(&js.replace("finite", "nope")).is_err());
    }

    #[test]
    fn report_consistency_and_adversarial_identity() {
        let r = run_coverage_experiment(&small_config(40)).unwrap();
        assert_eq!(r.models, 6);
        assert_eq!(r.events.len(), 40 * 4);
        for k in &r.kinds {
            assert_eq!(k.adversarial_mismatches, 0);
            assert_eq!(k.selector_coverage["adversarial"], k.simultaneous_coverage);
            for m in &k.per_model_coverage {
                assert!(k.simultaneous_coverage.value <= m.coverage.value);
            }
            for f in k.selector_coverage.values() {
                assert!(f.value >= k.simultaneous_coverage.value);
            }
        }
        let inter = r.kind(CoverageKind::Intersection).unwrap();
        for k in &r.kinds {
            assert!(inter.simultaneous_coverage.value <= k.simultaneous_coverage.value);
        }
        assert_eq!(r.inequalities.failures(), 0);
    }

    #[test]
    fn extreme_alpha_drives_coverage_down() {
        let mut c = small_config(20);
        c.bootstrap.alpha = 0.999;
        let r = run_coverage_experiment(&c).unwrap();
        let k = r.kind(CoverageKind::Region(RegionKind::Finite)).unwrap();
        assert!(k.simultaneous_coverage.value <= 0.2);
        for m in &k.per_model_coverage {
            assert!(k.simultaneous_coverage.value <= m.coverage.value);
        }
    }

    #[test]
    fn reproducible_json() {
        let c = small_config(10);
        let a = serde_json::to_string(&run_coverage_experiment(&c).unwrap()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let b = pool.install(|| serde_json::to_string(&run_coverage_experiment(&c).unwrap()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn events_csv_header() {
        let r = run_coverage_experiment(&small_config(3)).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&r.events, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "rep,kind,simultaneous,adversarial,maxCorrelation,forwardStepwise,bestSubsetBIC,adversarialModel,dGamma,dSigma,cGamma,cSigma,cMax\n"
        ));
        assert_eq!(text.lines().count(), 1 + 3 * 4);
    }

    #[test]
    fn budget_guard() {
        let mut c = small_config(10);
        c.work_budget = 1e3;
        assert!(matches!(run_coverage_experiment(&c), Err(Error::Budget { .. })));
    }

    #[test]
    fn mc_volume_on_first_rep() {
        let mut c = small_config(2);
        c.mc_volume_points = Some(2000);
        let r = run_coverage_experiment(&c).unwrap();
        let v = r.mc_volume.unwrap();
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn volume_rate_shrinks() {
        let mut dgp = DgpSpec::new(DgpKind::GaussianLinear, 0, 3, 2);
        dgp.noise_sd = 0.5;
        let mut c = ExperimentConfig::coverage(dgp, 2, BootstrapConfig::new(200, 0.1, 1).unwrap(), vec![], 8);
        c.experiment = ExperimentKind::VolumeRate;
        c.n_grid = vec![100, 400, 1600];
        let r = run_volume_rate_experiment(&c).unwrap();
        for size in 1..=2 {
            let v: Vec<f64> = r.rows.iter().filter(|x| x.model_size == size).map(|x| x.mean_volume).collect();
            assert!(v.windows(2).all(|w| w[1] < w[0]));
        }
        for s in &r.slopes {
            assert!(s.slope < -0.3 && s.slope > -0.7, "{s:?}");
        }
        c.n_grid = vec![400, 100];
        assert!(run_volume_rate_experiment(&c).is_err());
    }

    #[test]
    fn max_t_small() {
        let mut dgp = DgpSpec::new(DgpKind::FixedDesign, 200, 5, 3);
        dgp.whiten = true;
        dgp.design = DesignCovariance::Identity;
        let mut c = ExperimentConfig::coverage(dgp, 3, BootstrapConfig::new(200, 0.1, 2).unwrap(), vec![], 60);
        c.experiment = ExperimentKind::MaxT;
        c.k_grid = vec![1, 3];
        let r = run_max_t_comparison(&c).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows[1].c_max_t >= r.rows[0].c_max_t);
        assert_eq!(r.rows[0].selected.dagger, r.rows[1].selected.dagger);

        let mut bad = c.clone();
        bad.dgp.kind = DgpKind::GaussianLinear;
        assert!(run_max_t_comparison(&bad).is_err());
    }
}
