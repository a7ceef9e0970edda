//! The moment pipeline: whitening, re-weighted means and re-weighted
//! uncentered covariance with weights `w(y, α) = exp(α‖y‖²)`, and the
//! three candidate normals derived from them.
//!
//! With `α ≤ 0` every weight lies in `(0, 1]`, so the sums need no
//! log-sum-exp stabilization.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, EigenPair, SymMatrix};

/// Exponents for the two re-weighted means and the re-weighted covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        AlphaConfig {
            alpha1: -0.1,
            alpha2: -0.2,
            alpha3: -0.1,
        }
    }
}

impl AlphaConfig {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let cfg = AlphaConfig { alpha1, alpha2, alpha3 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The polynomially small exponents of the sample-complexity analysis:
    /// `-c₁ε⁸²/d`, `-c₂ε⁴²/d`, `-c₃ε²`. Far too small to be useful at
    /// practical sample sizes; reachable for completeness.
    pub fn theoretical(epsilon: f64, dim: usize, c: [f64; 3]) -> Result<Self> {
        let d = dim as f64;
        Self::new(
            -c[0] * epsilon.powi(82) / d,
            -c[1] * epsilon.powi(42) / d,
            -c[2] * epsilon.powi(2),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(a < 0.0) {
                return Err(Error::Config(format!("{name} must be strictly negative, got {a}")));
            }
        }
        if self.alpha1 == self.alpha2 {
            return Err(Error::Config("alpha1 and alpha2 must differ".into()));
        }
        Ok(())
    }
}

/// The affine map `y = inv_sqrt · (x - mean)` fitted to a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub mean: Array1<f64>,
    pub inv_sqrt: SymMatrix,
    /// Inverse of `inv_sqrt`; maps whitened directions back to input space.
    pub sqrt: SymMatrix,
}

impl Whitener {
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let centered = &x - &self.mean;
        centered.dot(&self.inv_sqrt.view())
    }

    /// Normal in input coordinates of the hyperplane whose normal in
    /// whitened coordinates is `direction`: `⟨direction, y⟩ = ⟨W direction, x - m⟩`.
    pub fn direction_to_input(&self, direction: &Array1<f64>) -> Array1<f64> {
        let v = self.inv_sqrt.dot(&direction.view());
        let n = linalg::norm(v.view());
        v / n
    }
}

pub fn whiten(x: ArrayView2<f64>) -> Result<(Array2<f64>, Whitener)> {
    let (n, d) = x.dim();
    if n < d + 1 {
        return Err(Error::InsufficientData(format!("whitening {d} dimensions needs at least {} rows, got {n}", d + 1)));
    }
    let (mean, cov) = linalg::mean_cov(x)?;
    let (sqrt, inv_sqrt) = linalg::sqrt_and_inv_sqrt(&cov, None)?;
    let whitener = Whitener { mean, inv_sqrt, sqrt };
    Ok((whitener.apply(x), whitener))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 || alpha.is_nan() {
        return Err(Error::PositiveAlpha(alpha));
    }
    Ok(())
}

fn weight(alpha: f64) -> impl Fn(&[f64]) -> f64 + Sync {
    move |row: &[f64]| (alpha * row.iter().map(|v| v * v).sum::<f64>()).exp()
}

/// `(1/N) Σ exp(α‖y‖²) y`.
pub fn reweighted_mean(y: ArrayView2<f64>, alpha: f64) -> Result<Array1<f64>> {
    check_alpha(alpha)?;
    let (n, d) = y.dim();
    if n == 0 {
        return Err(Error::InsufficientData("no rows".into()));
    }
    let y = y.as_standard_layout();
    let data = y.as_slice().expect("standard layout");
    Ok(linalg::weighted_row_sum(data, d, weight(alpha)) / n as f64)
}

/// `(1/N) Σ exp(α‖y‖²) y yᵀ`.
pub fn reweighted_uncentered_cov(y: ArrayView2<f64>, alpha: f64) -> Result<SymMatrix> {
    check_alpha(alpha)?;
    let (n, d) = y.dim();
    if n == 0 {
        return Err(Error::InsufficientData("no rows".into()));
    }
    let y = y.as_standard_layout();
    let data = y.as_slice().expect("standard layout");
    let m = linalg::weighted_second_moment(data, d, weight(alpha), None) / n as f64;
    SymMatrix::from_array_upper(&m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Mean1,
    Mean2,
    Cov,
}

impl CandidateKind {
    pub const ORDER: [CandidateKind; 3] = [CandidateKind::Mean1, CandidateKind::Mean2, CandidateKind::Cov];

    pub fn label(self) -> &'static str {
        match self {
            CandidateKind::Mean1 => "mean1",
            CandidateKind::Mean2 => "mean2",
            CandidateKind::Cov => "cov",
        }
    }
}

impl fmt::Display for CandidateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Unit direction, or `None` when the source vector had zero norm.
pub fn unit_or_flag(v: &Array1<f64>) -> Option<Array1<f64>> {
    let n = linalg::norm(v.view());
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub mu_alpha1: Array1<f64>,
    pub mu_alpha2: Array1<f64>,
    pub cov_top: EigenPair,
    /// Second eigenvalue of the re-weighted covariance, for the spectral gap.
    pub cov_second: f64,
    pub whitener: Whitener,
}

impl CandidateSet {
    /// The three directions in fixed order; zero-norm means come back as `None`.
    pub fn directions(&self) -> [(CandidateKind, Option<Array1<f64>>); 3] {
        [
            (CandidateKind::Mean1, unit_or_flag(&self.mu_alpha1)),
            (CandidateKind::Mean2, unit_or_flag(&self.mu_alpha2)),
            (CandidateKind::Cov, unit_or_flag(&self.cov_top.vector)),
        ]
    }

    pub fn spectral_gap(&self) -> f64 {
        self.cov_top.value - self.cov_second
    }
}

/// Whitens `x`, then computes both re-weighted means and the top
/// eigenpair of the re-weighted covariance. Returns the whitened sample too,
/// since the margin scan runs on it.
pub fn candidates_with_data(x: ArrayView2<f64>, cfg: &AlphaConfig) -> Result<(CandidateSet, Array2<f64>)> {
    cfg.validate()?;
    let (y, whitener) = whiten(x)?;
    let mu_alpha1 = reweighted_mean(y.view(), cfg.alpha1)?;
    let mu_alpha2 = reweighted_mean(y.view(), cfg.alpha2)?;
    let sigma = reweighted_uncentered_cov(y.view(), cfg.alpha3)?;
    let mut pairs = linalg::sym_eigen(&sigma)?;
    let cov_second = pairs.get(1).map_or(f64::NAN, |p| p.value);
    let cov_top = pairs.swap_remove(0);
    Ok((
        CandidateSet {
            mu_alpha1,
            mu_alpha2,
            cov_top,
            cov_second,
            whitener,
        },
        y,
    ))
}

pub fn candidates(x: ArrayView2<f64>, cfg: &AlphaConfig) -> Result<CandidateSet> {
    candidates_with_data(x, cfg).map(|(c, _)| c)
}

/// The isotropic-input path: plain sample mean and top eigenpair of the
/// uncentered second-moment matrix, without whitening.
#[derive(Debug, Clone)]
pub struct IsotropicCandidates {
    pub mean: Array1<f64>,
    pub cov_top: EigenPair,
    pub cov_second: f64,
}

pub fn isotropic_candidates(x: ArrayView2<f64>) -> Result<IsotropicCandidates> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 rows, got {n}")));
    }
    let mean = reweighted_mean(x, 0.0)?;
    let second = reweighted_uncentered_cov(x, 0.0)?;
    let mut pairs = linalg::sym_eigen(&second)?;
    let cov_second = pairs.get(1).map_or(f64::NAN, |p| p.value);
    Ok(IsotropicCandidates {
        mean,
        cov_top: pairs.swap_remove(0),
        cov_second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density1d::DensityModel;
    use crate::rng::seeded;
    use crate::sampler::{self, generate, make_instance, AffineMode};
    use ndarray::{array, Axis};

    #[test]
    fn alpha_config_validation() {
        assert!(AlphaConfig::default().validate().is_ok());
        assert!(AlphaConfig::new(-0.1, -0.1, -0.1).is_err());
        assert!(AlphaConfig::new(0.0, -0.2, -0.1).is_err());
        assert!(AlphaConfig::new(-0.1, -0.2, 0.3).is_err());
        let tiny = AlphaConfig::theoretical(0.5, 10, [1.0, 1.0, 1.0]).unwrap();
        assert!(tiny.alpha1 < 0.0 && tiny.alpha1 > -1e-20);
        assert!((tiny.alpha3 + 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_is_plain_mean() {
        let y = array![[1.0, 2.0], [3.0, -1.0], [-2.0, 0.5]];
        let m = reweighted_mean(y.view(), 0.0).unwrap();
        let plain = y.mean_axis(Axis(0)).unwrap();
        assert!((&m - &plain).iter().all(|v| v.abs() < 1e-15));
        let c = reweighted_uncentered_cov(y.view(), 0.0).unwrap();
        let plain = y.t().dot(&y) / 3.0;
        assert!((c.to_array() - plain).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn symmetric_points_cancel() {
        let y = array![[0.3, -1.2, 2.0], [-0.3, 1.2, -2.0]];
        for alpha in [0.0, -0.1, -3.0] {
            assert!(reweighted_mean(y.view(), alpha).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn three_point_hand_evaluation() {
        let y = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0]];
        let m = reweighted_mean(y.view(), -1.0).unwrap();
        assert!(m[0].abs() < 1e-17);
        let expect = 2.0 * (-4.0f64).exp() / 3.0;
        assert!((m[1] - expect).abs() < 1e-15);
        assert!((m[1] - 0.012_210_4).abs() < 1e-7);
    }

    #[test]
    fn single_point_covariance() {
        let y = array![[1.0, 1.0]];
        let c = reweighted_uncentered_cov(y.view(), -2.0).unwrap();
        let w = (-4.0f64).exp();
        for i in 0..2 {
            for j in 0..2 {
                assert!((c.get(i, j) - w).abs() < 1e-17);
            }
        }
    }

    #[test]
    fn positive_alpha_rejected() {
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(reweighted_mean(y.view(), 0.5), Err(Error::PositiveAlpha(_))));
        assert!(matches!(reweighted_uncentered_cov(y.view(), 1e-9), Err(Error::PositiveAlpha(_))));
    }

    #[test]
    fn reweighted_covariance_is_psd() {
        let x = sampler::generate_product(DensityModel::Laplace, 6, 3000, 4);
        let c = reweighted_uncentered_cov(x.view(), -0.3).unwrap();
        let min = linalg::sym_eigen(&c).unwrap().last().unwrap().value;
        assert!(min >= -1e-12);
    }

    #[test]
    fn weights_shrink_as_alpha_decreases() {
        let x = sampler::generate_product(DensityModel::Gaussian, 4, 2000, 6);
        let row_max = x.rows().into_iter().map(|r| linalg::norm(r)).fold(0.0, f64::max);
        let mut prev = f64::INFINITY;
        for alpha in [0.0, -0.05, -0.2, -1.0, -5.0] {
            let m = reweighted_mean(x.view(), alpha).unwrap();
            assert!(linalg::norm(m.view()) <= row_max);
            let trace = reweighted_uncentered_cov(x.view(), alpha).unwrap().trace();
            assert!(trace <= prev);
            prev = trace;
        }
    }

    #[test]
    fn whitening_examples() {
        let x = sampler::generate_product(DensityModel::Gaussian, 5, 10_000, 1);
        let (y, w) = whiten(x.view()).unwrap();
        let mut dev = w.inv_sqrt.to_array();
        for i in 0..5 {
            dev[[i, i]] -= 1.0;
        }
        let dev = SymMatrix::from_array_upper(&dev).unwrap();
        let op = linalg::sym_eigen(&dev).unwrap().iter().map(|p| p.value.abs()).fold(0.0, f64::max);
        assert!(op < 0.1);
        assert!(linalg::norm(w.mean.view()) < 0.1);

        let (mean, cov) = linalg::mean_cov(y.view()).unwrap();
        assert!(mean.iter().all(|v| v.abs() < 1e-10));
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((cov.get(i, j) - e).abs() < 1e-8);
            }
        }
        // already whitened input comes back as the identity covariance
        let (_, again) = linalg::mean_cov(whiten(y.view()).unwrap().0.view()).unwrap();
        assert!((again.to_array() - Array2::<f64>::eye(5)).iter().all(|v| v.abs() < 1e-12));

        let scaled = &x * 3.0;
        let (y3, _) = whiten(scaled.view()).unwrap();
        assert!((&y3 - &y).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn whitening_affine_data_and_stored_map() {
        let inst = make_instance(
            DensityModel::Uniform,
            -0.6,
            0.3,
            7,
            0.05,
            AffineMode::RandomAffine { kappa_max: 10.0 },
            &mut seeded(5),
        )
        .unwrap();
        let data = generate(&inst, 20_000, 2).unwrap();
        let (y, w) = whiten(data.x.view()).unwrap();
        let (_, cov) = linalg::mean_cov(y.view()).unwrap();
        assert!((cov.to_array() - Array2::<f64>::eye(7)).iter().all(|v| v.abs() < 1e-8));
        let again = w.apply(data.x.view());
        assert!((&again - &y).iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn whitening_needs_enough_rows() {
        let x = Array2::<f64>::zeros((3, 3));
        assert!(matches!(whiten(x.view()), Err(Error::InsufficientData(_))));
        let flat = Array2::<f64>::zeros((10, 2));
        assert!(matches!(whiten(flat.view()), Err(Error::DegenerateCovariance(_))));
    }

    #[test]
    fn whitened_mean_is_zero_at_alpha_zero() {
        let x = sampler::generate_product(DensityModel::Uniform, 3, 5000, 8) * 2.0 + 1.0;
        let (y, _) = whiten(x.view()).unwrap();
        let m = reweighted_mean(y.view(), 0.0).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn flagged_zero_mean() {
        assert!(unit_or_flag(&array![0.0, 0.0]).is_none());
        let u = unit_or_flag(&array![3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15);
    }

    fn identity_instance(a: f64, b: f64) -> sampler::MarginInstance {
        make_instance(DensityModel::Gaussian, a, b, 10, 0.01, AffineMode::Identity, &mut seeded(0)).unwrap()
    }

    fn identity_data(a: f64, b: f64, n: usize, seed: u64) -> Array2<f64> {
        generate(&identity_instance(a, b), n, seed).unwrap().x
    }

    fn raw_identity_data(a: f64, b: f64, n: usize, seed: u64) -> Array2<f64> {
        sampler::generate_unstandardized(&identity_instance(a, b), n, seed).unwrap().x
    }

    #[test]
    fn symmetric_band_covariance_finds_normal() {
        let x = identity_data(-0.5, 0.5, 200_000, 1);
        let c = candidates(x.view(), &AlphaConfig::default()).unwrap();
        assert!(c.cov_top.vector[0].abs() >= 0.98, "{}", c.cov_top.vector[0]);
        assert!(c.spectral_gap() > 0.0);
    }

    #[test]
    fn asymmetric_band_mean_finds_normal() {
        let x = identity_data(-2.0, 0.5, 200_000, 2);
        let c = candidates(x.view(), &AlphaConfig::default()).unwrap();
        let best = [&c.mu_alpha1, &c.mu_alpha2]
            .iter()
            .map(|m| (m[0] / linalg::norm(m.view())).abs())
            .fold(0.0, f64::max);
        assert!(best >= 0.95, "{best}");
    }

    #[test]
    fn no_band_has_no_spectral_gap() {
        let x = sampler::generate_product(DensityModel::Gaussian, 10, 200_000, 3);
        let c = candidates(x.view(), &AlphaConfig::default()).unwrap();
        assert!(c.spectral_gap() < 0.02, "{}", c.spectral_gap());
    }

    #[test]
    fn isotropic_path_examples() {
        let n = 100_000;
        let asym = raw_identity_data(0.3, 1.3, n, 4);
        let iso = isotropic_candidates(asym.view()).unwrap();
        assert!(iso.mean[0] < 0.0);

        let sym = raw_identity_data(-0.8, 0.8, n, 5);
        let iso = isotropic_candidates(sym.view()).unwrap();
        assert!(iso.cov_top.value > iso.cov_second);
        assert!(iso.cov_top.vector[0].abs() > 0.9);

        let plain = sampler::generate_product(DensityModel::Gaussian, 10, n, 6);
        let iso = isotropic_candidates(plain.view()).unwrap();
        assert!(linalg::norm(iso.mean.view()) <= 5.0 * (10.0 / n as f64).sqrt());
    }
}
