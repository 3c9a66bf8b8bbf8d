//! Moment objects: the Gram matrix `Σ`, the cross-moment vector `Γ`, the
//! augmented second-moment matrix `Ω`, the per-observation product vectors
//! resampled by the bootstrap, and the sup-norm deviations between two moment
//! pairs.
//!
//! Everything downstream (fits, regions, bounds) depends on the data only
//! through these objects.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::linalg::{cross_mean, max_abs, principal_submatrix, subvector};

/// Relative asymmetry accepted for user-supplied matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Columns with a standard deviation at or below this are treated as constant.
pub const MIN_STANDARD_DEVIATION: f64 = 1e-12;

/// Largest `p` for which the product-vector matrix is built.
pub const MAX_W_COVARIATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sample,
    Population,
    Plugin,
}

/// A Gram matrix and cross-moment vector of matching dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    sigma: DMatrix<f64>,
    gamma: DVector<f64>,
    provenance: Provenance,
}

impl MomentPair {
    /// Validates dimensions, finiteness and symmetry (relative tolerance
    /// [`SYMMETRY_TOLERANCE`]). The matrix is stored exactly as given.
    pub fn new(sigma: DMatrix<f64>, gamma: DVector<f64>, provenance: Provenance) -> Result<Self> {
        let p = gamma.len();
        if p == 0 {
            return Err(Error::arg("moment objects need p ≥ 1"));
        }
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::arg(format!(
                "sigma is {}×{} but gamma has length {p}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("moment objects must be finite"));
        }
        let scale = max_abs(&sigma);
        let asym = max_abs(&(&sigma - sigma.transpose()));
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::arg(format!(
                "sigma is not symmetric: max |σ(j,k) − σ(k,j)| = {asym:.3e} exceeds {SYMMETRY_TOLERANCE:e} relative"
            )));
        }
        Ok(Self { sigma, gamma, provenance })
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `Σ(M)`, the principal submatrix on the model's covariates.
    pub fn sigma_sub(&self, model: &ModelIndex) -> DMatrix<f64> {
        principal_submatrix(&self.sigma, model.indices())
    }

    /// `Γ(M)`.
    pub fn gamma_sub(&self, model: &ModelIndex) -> DVector<f64> {
        subvector(&self.gamma, model.indices())
    }

    pub(crate) fn check_model(&self, model: &ModelIndex) -> Result<()> {
        match model.indices().last() {
            Some(&j) if j < self.p() => Ok(()),
            _ => Err(Error::arg(format!("model {model} is out of range for p = {}", self.p()))),
        }
    }

    pub fn to_json(&self) -> MomentPairJson {
        MomentPairJson {
            sigma: self.sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
            gamma: self.gamma.iter().copied().collect(),
            provenance: self.provenance,
        }
    }

    pub fn from_json(js: &MomentPairJson) -> Result<Self> {
        let p = js.gamma.len();
        if js.sigma.len() != p || js.sigma.iter().any(|r| r.len() != p) {
            return Err(Error::Shape("sigma must be p×p with p = len(gamma)".into()));
        }
        let sigma = DMatrix::from_fn(p, p, |i, j| js.sigma[i][j]);
        Self::new(sigma, DVector::from_vec(js.gamma.clone()), js.provenance)
    }
}

/// `{"sigma":[[…]],"gamma":[…],"provenance":"sample"}`
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MomentPairJson {
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub provenance: Provenance,
}

/// `Ω = (1/n) Σ Z_i Z_iᵀ` with `Z_i = (X_iᵀ, Y_i)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMoments {
    omega: DMatrix<f64>,
}

impl AugmentedMoments {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if omega.nrows() != omega.ncols() || omega.nrows() < 2 {
            return Err(Error::arg("omega must be square of size p+1 ≥ 2"));
        }
        Ok(Self { omega })
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn p(&self) -> usize {
        self.omega.nrows() - 1
    }

    /// The bottom-right entry, the mean squared response.
    pub fn mean_y_squared(&self) -> f64 {
        let p = self.p();
        self.omega[(p, p)]
    }
}

/// Sup-norm estimation errors `(‖Γ̂ − Γ‖∞, ‖Σ̂ − Σ‖∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationPair {
    #[serde(rename = "dGamma")]
    pub d_gamma: f64,
    #[serde(rename = "dSigma")]
    pub d_sigma: f64,
}

impl DeviationPair {
    pub fn max(&self) -> f64 {
        self.d_gamma.max(self.d_sigma)
    }
}

/// Per-observation product vectors, one row per observation.
///
/// Column layout for `q = 2p + p(p−1)/2`: columns `0..p` hold `X_i(j)·Y_i`,
/// the remaining columns hold `X_i(l)·X_i(m)` for `l ≤ m` in lexicographic
/// `(l, m)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct WMatrix {
    rows: DMatrix<f64>,
    p: usize,
}

impl WMatrix {
    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Column means, accumulated in observation order.
    pub fn column_means(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.q(),
            self.rows.column_iter().map(|c| {
                let mut s = 0.0;
                for v in c.iter() {
                    s += v;
                }
                s / self.n() as f64
            }),
        )
    }

    /// The `(l, m)` pair (0-based, `l ≤ m`) behind column `c ≥ p`.
    pub fn sigma_column_pair(&self, c: usize) -> Option<(usize, usize)> {
        sigma_pairs(self.p).nth(c.checked_sub(self.p)?)
    }
}

/// Number of product columns, `2p + p(p−1)/2 = (p² + 3p)/2`.
pub fn w_columns(p: usize) -> usize {
    2 * p + p * (p.saturating_sub(1)) / 2
}

fn sigma_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |l| (l..p).map(move |m| (l, m)))
}

/// Sample moments `Σ̂ = (1/n) Σ X_i X_iᵀ`, `Γ̂ = (1/n) Σ X_i Y_i`.
pub fn sample_moments(data: &Dataset) -> MomentPair {
    let p = data.p();
    let x = data.x();
    let mut sigma = DMatrix::zeros(p, p);
    for l in 0..p {
        for m in l..p {
            let v = cross_mean(x.column(l).as_slice(), x.column(m).as_slice());
            sigma[(l, m)] = v;
            sigma[(m, l)] = v;
        }
    }
    let gamma = DVector::from_iterator(
        p,
        (0..p).map(|j| cross_mean(x.column(j).as_slice(), data.y().as_slice())),
    );
    MomentPair { sigma, gamma, provenance: Provenance::Sample }
}

/// `Ω̂`; its top-left block and last column agree bit-for-bit with
/// [`sample_moments`].
pub fn augmented_moments(data: &Dataset) -> AugmentedMoments {
    let p = data.p();
    let x = data.x();
    let y = data.y().as_slice();
    let n = data.n();
    let col = |j: usize| if j == p { y } else { &x.as_slice()[j * n..(j + 1) * n] };
    let mut omega = DMatrix::zeros(p + 1, p + 1);
    for l in 0..=p {
        for m in l..=p {
            // keep (x, y) argument order identical to sample_moments
            let v = cross_mean(col(l), col(m));
            omega[(l, m)] = v;
            omega[(m, l)] = v;
        }
    }
    AugmentedMoments { omega }
}

/// Sup-norm distances between two moment pairs of the same dimension.
pub fn deviation_stats(sample: &MomentPair, reference: &MomentPair) -> Result<DeviationPair> {
    if sample.p() != reference.p() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            sample.p(),
            reference.p()
        )));
    }
    let d_gamma = sample
        .gamma
        .iter()
        .zip(reference.gamma.iter())
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    let d_sigma = sample
        .sigma
        .iter()
        .zip(reference.sigma.iter())
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    Ok(DeviationPair { d_gamma, d_sigma })
}

/// Builds the `n × q` product-vector matrix.
pub fn build_w_matrix(data: &Dataset) -> Result<WMatrix> {
    let p = data.p();
    if p > MAX_W_COVARIATES {
        return Err(Error::arg(format!(
            "p = {p} exceeds {MAX_W_COVARIATES}; the product matrix would have {} columns",
            w_columns(p)
        )));
    }
    let n = data.n();
    let x = data.x();
    let y = data.y();
    let mut rows = DMatrix::zeros(n, w_columns(p));
    for j in 0..p {
        for i in 0..n {
            rows[(i, j)] = x[(i, j)] * y[i];
        }
    }
    for (c, (l, m)) in sigma_pairs(p).enumerate() {
        for i in 0..n {
            rows[(i, p + c)] = x[(i, l)] * x[(i, m)];
        }
    }
    Ok(WMatrix { rows, p })
}

/// Centers each covariate and the response at its mean and scales it to unit
/// standard deviation (divisor `n`).
///
/// A constant column, such as an intercept, cannot be standardized and is
/// reported by its 1-based index; drop it first.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    let n = data.n() as f64;
    let scale = |col: &[f64], name: &dyn Fn() -> String| -> Result<Vec<f64>> {
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd <= MIN_STANDARD_DEVIATION {
            return Err(Error::Validation(format!(
                "{} has zero variance and cannot be standardized (drop an intercept before standardizing)",
                name()
            )));
        }
        Ok(col.iter().map(|v| (v - mean) / sd).collect())
    };
    let mut x = data.x().clone();
    for j in 0..data.p() {
        let z = scale(data.x().column(j).as_slice(), &|| format!("covariate column {}", j + 1))?;
        x.column_mut(j).copy_from_slice(&z);
    }
    let y = scale(data.y().as_slice(), &|| "the response".to_string())?;
    Dataset::new(x, DVector::from_vec(y))
}

/// Wraps externally estimated moment objects (robust or missing-data
/// estimators, say) so they flow through fits and regions unchanged.
///
/// No positive-semidefiniteness repair is attempted.
pub fn plugin_moments(sigma: DMatrix<f64>, gamma: DVector<f64>) -> Result<MomentPair> {
    MomentPair::new(sigma, gamma, Provenance::Plugin)
}

/// Population-provenance moment pair; used by the simulator's oracles.
pub fn population_moments(sigma: DMatrix<f64>, gamma: DVector<f64>) -> Result<MomentPair> {
    let sym = (&sigma + sigma.transpose()) * 0.5;
    MomentPair::new(sym, gamma, Provenance::Population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut impl Rng, n: usize, p: usize) -> Dataset {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn constant_covariate_moments() {
        let d = Dataset::from_rows(&[vec![1.0], vec![1.0]], vec![2.0, 4.0]).unwrap();
        let m = sample_moments(&d);
        assert_eq!(m.sigma()[(0, 0)], 1.0);
        assert_eq!(m.gamma()[0], 3.0);
    }

    #[test]
    fn identity_rows_moments() {
        let d = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        let m = sample_moments(&d);
        assert_eq!(m.sigma(), &(DMatrix::identity(2, 2) * 0.5));
        assert_eq!(m.gamma().as_slice(), &[0.5, 0.5]);
        assert_eq!(m.sigma(), &m.sigma().transpose());
    }

    #[test]
    fn augmented_rank_one_and_blocks() {
        let d = Dataset::from_rows(&[vec![1.0]], vec![1.0]).unwrap();
        assert_eq!(augmented_moments(&d).omega(), &DMatrix::from_element(2, 2, 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let p = rng.random_range(1..6);
            let d = random_dataset(&mut rng, n, p);
            let s = sample_moments(&d);
            let o = augmented_moments(&d);
            for l in 0..p {
                assert_eq!(o.omega()[(l, p)].to_bits(), s.gamma()[l].to_bits());
                for m in 0..p {
                    assert_eq!(o.omega()[(l, m)].to_bits(), s.sigma()[(l, m)].to_bits());
                }
            }
        }
    }

    #[test]
    fn augmented_matches_triple_loop() {
        let rows = [vec![1.0, -2.0], vec![3.0, 0.0], vec![-1.0, 4.0]];
        let y = [2.0, -1.0, 5.0];
        let d = Dataset::from_rows(&rows, y.to_vec()).unwrap();
        let o = augmented_moments(&d);
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for i in 0..3 {
                    let za = if a == 2 { y[i] } else { rows[i][a] };
                    let zb = if b == 2 { y[i] } else { rows[i][b] };
                    s += za * zb;
                }
                assert!((o.omega()[(a, b)] - s / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deviation_examples() {
        let a = MomentPair::new(DMatrix::identity(3, 3), DVector::from_vec(vec![1.0, 2.0, 3.0]), Provenance::Sample).unwrap();
        assert_eq!(deviation_stats(&a, &a).unwrap(), DeviationPair { d_gamma: 0.0, d_sigma: 0.0 });

        let mut sig = DMatrix::identity(3, 3);
        sig[(0, 2)] = 0.1;
        sig[(2, 0)] = 0.1;
        let b = MomentPair::new(sig, DVector::from_vec(vec![1.0, 2.3, 3.0]), Provenance::Population).unwrap();
        let dev = deviation_stats(&a, &b).unwrap();
        assert!((dev.d_gamma - 0.3).abs() < 1e-15);
        assert!((dev.d_sigma - 0.1).abs() < 1e-15);

        let c = MomentPair::new(DMatrix::identity(2, 2), DVector::zeros(2), Provenance::Sample).unwrap();
        assert!(deviation_stats(&a, &c).is_err());
    }

    #[test]
    fn fixed_design_reference_has_zero_sigma_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dataset(&mut rng, 30, 4);
        let s = sample_moments(&d);
        let r = MomentPair::new(s.sigma().clone(), DVector::zeros(4), Provenance::Population).unwrap();
        assert_eq!(deviation_stats(&s, &r).unwrap().d_sigma, 0.0);
    }

    #[test]
    fn w_matrix_layout() {
        assert_eq!(w_columns(3), 9);
        let d = Dataset::from_rows(&[vec![2.0]], vec![3.0]).unwrap();
        let w = build_w_matrix(&d).unwrap();
        assert_eq!(w.rows().row(0).iter().copied().collect::<Vec<_>>(), vec![6.0, 4.0]);
        for p in 1..=100 {
            assert_eq!(w_columns(p), (p * p + 3 * p) / 2);
        }
        let d = Dataset::from_rows(&[vec![1.0, 2.0, 3.0]], vec![1.0]).unwrap();
        let w = build_w_matrix(&d).unwrap();
        assert_eq!(w.sigma_column_pair(3), Some((0, 0)));
        assert_eq!(w.sigma_column_pair(4), Some((0, 1)));
        assert_eq!(w.sigma_column_pair(8), Some((2, 2)));
        assert_eq!(w.rows()[(0, 7)], 6.0);
    }

    #[test]
    fn w_column_means_reproduce_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let p = rng.random_range(1..7);
            let d = random_dataset(&mut rng, n, p);
            let w = build_w_matrix(&d).unwrap();
            let s = sample_moments(&d);
            let means = w.column_means();
            for j in 0..p {
                assert_eq!(means[j].to_bits(), s.gamma()[j].to_bits());
            }
            for c in p..w.q() {
                let (l, m) = w.sigma_column_pair(c).unwrap();
                assert_eq!(means[c].to_bits(), s.sigma()[(l, m)].to_bits());
            }
        }
    }

    #[test]
    fn standardize_hand_example() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 0.0, 2.0]).unwrap();
        let z = standardize(&d).unwrap();
        let expect = (1.5_f64).sqrt();
        assert!((z.x()[(0, 0)] + expect).abs() < 1e-12);
        assert!(z.x()[(1, 0)].abs() < 1e-12);
        assert!((z.x()[(2, 0)] - expect).abs() < 1e-12);
        // raw sd with divisor n
        let raw_sd = (2.0_f64 / 3.0).sqrt();
        assert!((raw_sd - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0]], vec![1.0, 0.0]).unwrap();
        let err = standardize(&d).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
    }

    #[test]
    fn plugin_wraps_and_validates() {
        assert!(plugin_moments(DMatrix::identity(2, 2), DVector::zeros(2)).is_ok());
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = 0.5;
        assert!(plugin_moments(bad, DVector::zeros(2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_dataset(&mut rng, 20, 3);
        let s = sample_moments(&d);
        let w = plugin_moments(s.sigma().clone(), s.gamma().clone()).unwrap();
        assert_eq!(w.sigma(), s.sigma());
        assert_eq!(w.gamma(), s.gamma());
        assert_eq!(w.provenance(), Provenance::Plugin);
    }

    #[test]
    fn moment_json_shape() {
        let m = MomentPair::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]), Provenance::Sample).unwrap();
        let js = serde_json::to_string(&m.to_json()).unwrap();
        assert_eq!(js, r#"{"sigma":[[1.0,0.0],[0.0,1.0]],"gamma":[1.0,0.0],"provenance":"sample"}"#);
        let back = MomentPair::from_json(&serde_json::from_str(&js).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (2usize..30, 1usize..5).prop_flat_map(|(n, p)| {
            (
                proptest::collection::vec(-5.0f64..5.0, n * p),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
                .prop_map(move |(xs, ys)| {
                    Dataset::new(DMatrix::from_vec(n, p, xs), DVector::from_vec(ys)).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn deviation_bounded_by_augmented_difference(a in arb_dataset(), shift in -1.0f64..1.0) {
            // reference built from a perturbed copy of the same design
            let x2 = a.x().map(|v| v + shift * 0.1);
            let y2 = a.y().map(|v| v - shift);
            let b = Dataset::new(x2, y2).unwrap();
            let dev = deviation_stats(&sample_moments(&a), &sample_moments(&b)).unwrap();
            let diff = max_abs(&(augmented_moments(&a).omega() - augmented_moments(&b).omega()));
            prop_assert!(dev.max() <= diff);
        }

        #[test]
        fn deviation_is_a_metric(a in arb_dataset(), s1 in -1.0f64..1.0, s2 in -1.0f64..1.0) {
            let perturb = |s: f64| {
                let d = Dataset::new(a.x().map(|v| v * (1.0 + 0.1 * s)), a.y().map(|v| v + s)).unwrap();
                sample_moments(&d)
            };
            let (ma, mb, mc) = (sample_moments(&a), perturb(s1), perturb(s2));
            let ab = deviation_stats(&ma, &mb).unwrap();
            let ba = deviation_stats(&mb, &ma).unwrap();
            prop_assert_eq!(ab, ba);
            let bc = deviation_stats(&mb, &mc).unwrap();
            let ac = deviation_stats(&ma, &mc).unwrap();
            prop_assert!(ac.d_gamma <= ab.d_gamma + bc.d_gamma + 1e-12);
            prop_assert!(ac.d_sigma <= ab.d_sigma + bc.d_sigma + 1e-12);
        }

        #[test]
        fn standardize_is_idempotent(a in arb_dataset()) {
            if let Ok(z) = standardize(&a) {
                let zz = standardize(&z).unwrap();
                let n = z.n() as f64;
                for j in 0..z.p() {
                    let col = z.x().column(j);
                    let mean = col.sum() / n;
                    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!(mean.abs() <= 1e-10);
                    prop_assert!((sd - 1.0).abs() <= 1e-10);
                }
                prop_assert!(max_abs(&(zz.x() - z.x())) <= 1e-9);
                prop_assert!((zz.y() - z.y()).amax() <= 1e-9);
            }
        }
    }
}
