//! Symmetric, isotropic (zero mean, unit variance) logconcave densities on
//! the line, and the statistics of the same law with a band `[a, b]` cut
//! out of it.
//!
//! The "exponential" family of the experiments is realized as the
//! symmetric Laplace law with scale `1/sqrt(2)`, the unique unit-variance
//! symmetric two-sided exponential.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::quadrature::{self, Quadrature};

/// Half-width of the integration window for the unbounded families.
pub const WINDOW: f64 = 12.0;

/// Laplace tails beyond ±12 still hold ~2e-8 of the mass.
pub const LAPLACE_WINDOW: f64 = 40.0;

/// Largest supported moment order.
pub const MAX_MOMENT: u32 = 8;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const LAPLACE_SCALE: f64 = FRAC_1_SQRT_2;

/// A one-dimensional symmetric isotropic logconcave law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityModel {
    /// Standard normal.
    Gaussian,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    Uniform,
    /// Symmetric Laplace with scale `1/sqrt(2)`.
    Laplace,
}

impl DensityModel {
    pub const ALL: [DensityModel; 3] = [DensityModel::Gaussian, DensityModel::Uniform, DensityModel::Laplace];

    pub fn name(self) -> &'static str {
        match self {
            DensityModel::Gaussian => "gaussian",
            DensityModel::Uniform => "uniform",
            DensityModel::Laplace => "laplace",
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            DensityModel::Gaussian => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            DensityModel::Uniform => {
                if x.abs() <= SQRT_3 {
                    0.5 / SQRT_3
                } else {
                    0.0
                }
            }
            DensityModel::Laplace => (-x.abs() / LAPLACE_SCALE).exp() / (2.0 * LAPLACE_SCALE),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        if x > 0.0 {
            1.0 - self.sf(x)
        } else {
            self.sf(-x)
        }
    }

    /// Survival function `q([x, ∞))`, accurate deep in the right tail.
    pub fn sf(self, x: f64) -> f64 {
        match self {
            DensityModel::Gaussian => 0.5 * erfc(x / SQRT_2),
            DensityModel::Uniform => ((SQRT_3 - x) / (2.0 * SQRT_3)).clamp(0.0, 1.0),
            DensityModel::Laplace => {
                if x >= 0.0 {
                    0.5 * (-x / LAPLACE_SCALE).exp()
                } else {
                    1.0 - 0.5 * (x / LAPLACE_SCALE).exp()
                }
            }
        }
    }

    /// Inverse CDF on the open unit interval.
    pub fn quantile(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile needs p in (0, 1), got {p}")));
        }
        Ok(self.quantile_unchecked(p))
    }

    fn quantile_unchecked(self, p: f64) -> f64 {
        if p > 0.5 {
            return -self.lower_quantile(1.0 - p);
        }
        self.lower_quantile(p)
    }

    // p in (0, 1/2]; the small-probability branch keeps full relative precision.
    fn lower_quantile(self, p: f64) -> f64 {
        match self {
            DensityModel::Gaussian => {
                // erfc_inv alone is good to ~1e-10; Halley steps against the
                // accurate erfc bring the result to a few ulps.
                let mut x = -SQRT_2 * erfc_inv(2.0 * p);
                for _ in 0..2 {
                    let phi = self.pdf(x);
                    if phi == 0.0 {
                        break;
                    }
                    let r = (0.5 * erfc(-x / SQRT_2) - p) / phi;
                    x -= r / (1.0 + 0.5 * x * r);
                }
                x
            }
            DensityModel::Uniform => SQRT_3 * (2.0 * p - 1.0),
            DensityModel::Laplace => LAPLACE_SCALE * (2.0 * p).ln(),
        }
    }

    /// The smallest interval holding all (or, for unbounded families,
    /// all but a negligible amount of) the mass.
    pub fn support(self) -> (f64, f64) {
        match self {
            DensityModel::Uniform => (-SQRT_3, SQRT_3),
            DensityModel::Gaussian => (-WINDOW, WINDOW),
            DensityModel::Laplace => (-LAPLACE_WINDOW, LAPLACE_WINDOW),
        }
    }

    /// Points where the density is not smooth.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            DensityModel::Gaussian => &[],
            DensityModel::Uniform => &[-SQRT_3, SQRT_3],
            DensityModel::Laplace => &[0.0],
        }
    }

    /// `E x^k` over the whole line.
    pub fn raw_moment(self, k: u32) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        match self {
            DensityModel::Gaussian => (1..k).step_by(2).map(f64::from).product(),
            DensityModel::Uniform => SQRT_3.powi(k as i32) / f64::from(k + 1),
            DensityModel::Laplace => (1..=k).map(f64::from).product::<f64>() * LAPLACE_SCALE.powi(k as i32),
        }
    }

    /// `M_k(t) = ∫_t^∞ x^k q(x) dx` in closed form.
    pub fn truncated_moment(self, k: u32, t: f64) -> Result<f64> {
        if k > MAX_MOMENT {
            return Err(Error::Domain(format!("moment order {k} exceeds {MAX_MOMENT}")));
        }
        if t.is_nan() {
            return Err(Error::Domain("cutoff is NaN".into()));
        }
        Ok(self.tail_moment(k, t))
    }

    fn tail_moment(self, k: u32, t: f64) -> f64 {
        if t < 0.0 {
            // ∫_{-∞}^{t} x^k q = (-1)^k M_k(-t)
            let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            return self.raw_moment(k) - sign * self.tail_moment(k, -t);
        }
        match self {
            DensityModel::Gaussian => {
                let phi = self.pdf(t);
                let mut even = self.sf(t);
                let mut odd = phi;
                let mut result = if k == 0 { even } else { odd };
                for j in 2..=k {
                    let next = t.powi(j as i32 - 1) * phi + f64::from(j - 1) * if j % 2 == 0 { even } else { odd };
                    if j % 2 == 0 {
                        even = next;
                    } else {
                        odd = next;
                    }
                    result = next;
                }
                result
            }
            DensityModel::Uniform => {
                if t >= SQRT_3 {
                    return 0.0;
                }
                let kp1 = (k + 1) as i32;
                (SQRT_3.powi(kp1) - t.powi(kp1)) / (f64::from(k + 1) * 2.0 * SQRT_3)
            }
            DensityModel::Laplace => {
                // (1/2) e^{-t/s} Σ_j k!/j! t^j s^{k-j}
                let s = LAPLACE_SCALE;
                let mut term = s.powi(k as i32) * (1..=k).map(f64::from).product::<f64>();
                let mut sum = term;
                for j in 1..=k {
                    term *= t / (s * f64::from(j));
                    sum += term;
                }
                0.5 * (-t / s).exp() * sum
            }
        }
    }

    /// `∫_lo^hi f(x) q(x) dx` by adaptive quadrature, with `lo`/`hi`
    /// clipped to the support and the density's kinks used as breakpoints.
    pub fn expect_over<F: Fn(f64) -> f64>(self, f: F, lo: f64, hi: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
        let (s_lo, s_hi) = self.support();
        let lo = lo.max(s_lo);
        let hi = hi.min(s_hi);
        if hi <= lo {
            return Quadrature {
                value: 0.0,
                abs_error: 0.0,
                intervals: 0,
                converged: true,
            };
        }
        quadrature::integrate_with_breaks(|x| f(x) * self.pdf(x), lo, hi, self.kinks(), abs_tol, rel_tol)
    }

    /// `M_k(t)` by quadrature; the independent route to [`Self::truncated_moment`].
    pub fn truncated_moment_quadrature(self, k: u32, t: f64) -> f64 {
        self.expect_over(|x| x.powi(k as i32), t, f64::INFINITY, quadrature::ABS_TOL, 0.0)
            .value
    }

    /// Draws from the full law.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            DensityModel::Gaussian => rng.sample(StandardNormal),
            DensityModel::Uniform => SQRT_3 * (2.0 * rng.random::<f64>() - 1.0),
            DensityModel::Laplace => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    LAPLACE_SCALE * e
                } else {
                    -LAPLACE_SCALE * e
                }
            }
        }
    }

    /// Draws from the law restricted to `ℝ \ [a, b]` by inverting the CDF
    /// inside whichever tail is picked; never returns a point in `(a, b)`.
    pub fn sample_truncated<R: Rng + ?Sized>(self, band: &BandSpec, rng: &mut R) -> f64 {
        let outside = band.left_tail + band.right_tail;
        let pick: f64 = rng.random();
        let u: f64 = rng.sample(Open01);
        if pick * outside < band.left_tail {
            self.quantile_unchecked(u * band.left_tail).min(band.a)
        } else {
            (-self.quantile_unchecked(u * band.right_tail)).max(band.b)
        }
    }
}

impl fmt::Display for DensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DensityModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(DensityModel::Gaussian),
            "uniform" => Ok(DensityModel::Uniform),
            "laplace" | "exponential" => Ok(DensityModel::Laplace),
            other => Err(Error::Parse(format!("unknown family '{other}'"))),
        }
    }
}

/// A removed interval `[a, b]` and the statistics of `q` restricted to its
/// complement. `a == b` is the empty band (nothing removed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub a: f64,
    pub b: f64,
    pub mass: f64,
    pub left_tail: f64,
    pub right_tail: f64,
    pub mu1: f64,
    pub sigma1_sq: f64,
}

impl BandSpec {
    pub fn new(model: DensityModel, a: f64, b: f64) -> Result<Self> {
        band_stats(model, a, b)
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1_sq.sqrt()
    }

    pub fn outside_mass(&self) -> f64 {
        self.left_tail + self.right_tail
    }

    pub fn is_symmetric(&self) -> bool {
        self.a == -self.b
    }

    pub fn check(&self, epsilon: f64) -> EpsilonCheck {
        let smallest = self.left_tail.min(self.mass).min(self.right_tail);
        EpsilonCheck {
            epsilon,
            satisfied: smallest >= epsilon,
        }
    }

    /// Like [`Self::check`] but reports the first violated condition.
    pub fn require(&self, epsilon: f64) -> Result<()> {
        for (violated, value) in [
            ("left tail mass", self.left_tail),
            ("band mass", self.mass),
            ("right tail mass", self.right_tail),
        ] {
            if value < epsilon {
                return Err(Error::InadmissibleBand {
                    epsilon,
                    violated,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Maps a raw coordinate to the standardized (zero mean, unit variance)
    /// truncated law.
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mu1) / self.sigma1()
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.sigma1() + self.mu1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCheck {
    pub epsilon: f64,
    pub satisfied: bool,
}

pub fn band_stats(model: DensityModel, a: f64, b: f64) -> Result<BandSpec> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::Domain(format!("band needs finite a <= b, got [{a}, {b}]")));
    }
    let left_tail = model.cdf(a);
    let right_tail = model.sf(b);
    let mass = if a >= 0.0 {
        model.sf(a) - right_tail
    } else if b <= 0.0 {
        model.cdf(b) - left_tail
    } else {
        1.0 - left_tail - right_tail
    };
    let outside = left_tail + right_tail;
    if outside <= 1e-12 {
        return Err(Error::DegenerateBand { a, b, mass });
    }
    let first = model.tail_moment(1, b) - model.tail_moment(1, -a);
    let second = model.tail_moment(2, b) + model.tail_moment(2, -a);
    let mu1 = first / outside;
    let sigma1_sq = second / outside - mu1 * mu1;
    Ok(BandSpec {
        a,
        b,
        mass,
        left_tail,
        right_tail,
        mu1,
        sigma1_sq,
    })
}

/// Band of exactly the given mass whose left tail holds `left_tail`.
pub fn band_with_mass(model: DensityModel, left_tail: f64, mass: f64) -> Result<BandSpec> {
    if !(left_tail > 0.0 && mass > 0.0 && left_tail + mass < 1.0) {
        return Err(Error::Domain(format!(
            "left tail {left_tail} and mass {mass} must be positive with sum below 1"
        )));
    }
    let a = model.quantile(left_tail)?;
    let b = model.quantile(left_tail + mass)?;
    band_stats(model, a, b)
}
