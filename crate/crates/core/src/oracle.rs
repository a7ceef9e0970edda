//! Quadrature evaluations of the one-dimensional quantities behind the
//! recovery guarantees, and grid checks that package them as
//! [`LemmaReport`]s.
//!
//! Everything here is deterministic and single-threaded; integrals are
//! taken in raw coordinates over `(-∞, a] ∪ [b, ∞)` with the standardizing
//! map applied inside the integrand.

use serde::{Deserialize, Serialize};

use crate::density1d::{BandSpec, DensityModel};
use crate::error::{Error, Result};
use crate::quadrature;

/// Values of `F` within this distance of zero are skipped when counting sign changes.
pub const SIGN_ZERO_TOL: f64 = 1e-9;
/// Slack allowed in each consecutive step of the moment-ratio decrease.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Agreement required between the assembled and the closed-form `H`.
pub const H_MATCH_TOL: f64 = 1e-9;

// Per-piece tolerance; the two pieces are divided by the outside mass,
// which is at least ε, so this leaves room below 1e-10 overall.
const PIECE_TOL: f64 = 1e-13;
const PIECE_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub verdict: bool,
    pub worst_violation: f64,
    pub tolerance: f64,
}

impl LemmaReport {
    fn new(lemma_id: &str, grid: Vec<f64>, values: Vec<f64>, worst_violation: f64, tolerance: f64) -> Self {
        LemmaReport {
            lemma_id: lemma_id.to_string(),
            grid,
            values,
            verdict: worst_violation <= tolerance,
            worst_violation,
            tolerance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 || alpha.is_nan() {
        return Err(Error::PositiveAlpha(alpha));
    }
    Ok(())
}

/// `E_{q̂}[g(s)]` where `s = (x - μ₁)/σ₁` and `x` follows `q` outside `(a, b)`.
fn truncated_expect<G: Fn(f64) -> f64>(model: DensityModel, band: &BandSpec, g: G) -> f64 {
    let sigma = band.sigma1();
    let h = |x: f64| g((x - band.mu1) / sigma);
    let left = model.expect_over(h, f64::NEG_INFINITY, band.a, PIECE_TOL, PIECE_REL);
    let right = model.expect_over(h, band.b, f64::INFINITY, PIECE_TOL, PIECE_REL);
    (left.value + right.value) / band.outside_mass()
}

/// `E_q[g(x)]` over the full law.
fn full_expect<G: Fn(f64) -> f64>(model: DensityModel, g: G) -> f64 {
    model.expect_over(g, f64::NEG_INFINITY, f64::INFINITY, PIECE_TOL, PIECE_REL).value
}

/// `F(α) = E_{q̂}[e^{αx²} x]` over the standardized truncated law.
pub fn f_alpha(model: DensityModel, band: &BandSpec, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(truncated_expect(model, band, |s| (alpha * s * s).exp() * s))
}

/// `F'(α) = E_{q̂}[e^{αx²} x³]`.
pub fn f_alpha_derivative(model: DensityModel, band: &BandSpec, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(truncated_expect(model, band, |s| (alpha * s * s).exp() * s.powi(3)))
}

/// Sign changes of `F` along `alpha_grid`, ignoring values within
/// [`SIGN_ZERO_TOL`] of zero.
pub fn count_sign_changes_f(model: DensityModel, band: &BandSpec, alpha_grid: &[f64]) -> Result<usize> {
    let values = alpha_grid
        .iter()
        .map(|&a| f_alpha(model, band, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(count_sign_changes(&values))
}

pub fn count_sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values
        .iter()
        .filter(|v| v.abs() > SIGN_ZERO_TOL)
        .map(|&v| v > 0.0)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// `S(α) = E_{q̂}[wx²]·E_q[w] − E_q[wx²]·E_{q̂}[w]` with `w = e^{αx²}`.
pub fn s_alpha(model: DensityModel, band: &BandSpec, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let w = |x: f64| (alpha * x * x).exp();
    let hat_wx2 = truncated_expect(model, band, |s| w(s) * s * s);
    let hat_w = truncated_expect(model, band, w);
    let q_wx2 = full_expect(model, |x| w(x) * x * x);
    let q_w = full_expect(model, w);
    Ok(hat_wx2 * q_w - q_wx2 * hat_w)
}

/// A logconcave law on `[0, ∞)`, given by an unnormalized density. The
/// moment ratio is scale-free, so normalization does not matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfLine {
    HalfGaussian,
    Exponential { gamma: f64 },
    HalfUniform,
}

impl HalfLine {
    /// The restriction of a symmetric law to `[0, ∞)`.
    pub fn folded(model: DensityModel) -> Self {
        match model {
            DensityModel::Gaussian => HalfLine::HalfGaussian,
            DensityModel::Laplace => HalfLine::Exponential {
                gamma: std::f64::consts::SQRT_2,
            },
            DensityModel::Uniform => HalfLine::HalfUniform,
        }
    }

    pub fn name(&self) -> String {
        match self {
            HalfLine::HalfGaussian => "half-gaussian".into(),
            HalfLine::Exponential { gamma } => format!("exponential(gamma={gamma})"),
            HalfLine::HalfUniform => "half-uniform".into(),
        }
    }

    fn density(&self, x: f64) -> f64 {
        match *self {
            HalfLine::HalfGaussian => (-0.5 * x * x).exp(),
            HalfLine::Exponential { gamma } => gamma * (-gamma * x).exp(),
            HalfLine::HalfUniform => 1.0,
        }
    }

    /// Upper limit beyond which the remaining mass is negligible relative
    /// to the mass past `t`.
    fn upper(&self, t: f64) -> f64 {
        match *self {
            HalfLine::HalfGaussian => t + 12.0,
            HalfLine::Exponential { gamma } => t + 50.0 / gamma,
            HalfLine::HalfUniform => 3f64.sqrt(),
        }
    }

    /// `M_k(t) = ∫_t^∞ x^k h(x) dx`, to relative accuracy.
    pub fn tail_moment(&self, k: u32, t: f64) -> f64 {
        let hi = self.upper(t);
        if hi <= t {
            return 0.0;
        }
        quadrature::integrate(|x| x.powi(k as i32) * self.density(x), t, hi, 0.0, 1e-13).value
    }
}

/// `mr(t) = M₀(t)M₄(t)/M₂(t)² − 1`.
pub fn moment_ratio(law: HalfLine, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("moment ratio needs t >= 0, got {t}")));
    }
    if let HalfLine::Exponential { gamma } = law {
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
    }
    let m0 = law.tail_moment(0, t);
    let m2 = law.tail_moment(2, t);
    let m4 = law.tail_moment(4, t);
    if m0 <= 0.0 || m2 <= 0.0 {
        return Err(Error::Domain(format!("no mass beyond t = {t}")));
    }
    Ok(m0 * m4 / (m2 * m2) - 1.0)
}

/// Closed-form `N_k(t) = ∫_t^∞ x^k βe^{−γx} dx` for `k ≤ 4`.
pub fn exp_nk(beta: f64, gamma: f64, k: u32, t: f64) -> Result<f64> {
    if !(beta > 0.0 && gamma > 0.0) {
        return Err(Error::Domain(format!("beta and gamma must be positive, got {beta}, {gamma}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be nonnegative, got {t}")));
    }
    let g = gamma;
    let poly = match k {
        0 => 1.0,
        1 => t + 1.0 / g,
        2 => t * t + 2.0 * t / g + 2.0 / (g * g),
        3 => t.powi(3) + 3.0 * t * t / g + 6.0 * t / (g * g) + 6.0 / g.powi(3),
        4 => t.powi(4) + 4.0 * t.powi(3) / g + 12.0 * t * t / (g * g) + 24.0 * t / g.powi(3) + 24.0 / g.powi(4),
        _ => return Err(Error::Domain(format!("closed forms cover k <= 4, got {k}"))),
    };
    Ok(poly * beta / gamma * (-gamma * t).exp())
}

/// `H(t) = t⁴N₀N₂ + N₂N₄ − 2t²N₀N₄`, assembled from the closed-form `N_k`.
pub fn exp_h(beta: f64, gamma: f64, t: f64) -> Result<f64> {
    let n0 = exp_nk(beta, gamma, 0, t)?;
    let n2 = exp_nk(beta, gamma, 2, t)?;
    let n4 = exp_nk(beta, gamma, 4, t)?;
    Ok(t.powi(4) * n0 * n2 + n2 * n4 - 2.0 * t * t * n0 * n4)
}

/// The simplified form `8β²/γ² e^{−2γt}(t³/γ³ + 6t²/γ⁴ + 12t/γ⁵ + 6/γ⁶)`.
pub fn exp_h_closed(beta: f64, gamma: f64, t: f64) -> f64 {
    let g = gamma;
    8.0 * beta * beta / (g * g)
        * (-2.0 * g * t).exp()
        * (t.powi(3) / g.powi(3) + 6.0 * t * t / g.powi(4) + 12.0 * t / g.powi(5) + 6.0 / g.powi(6))
}

/// Checks `H(t) > 0` and agreement with the simplified form at every grid point.
/// A point contributes its mismatch `|H − closed| / max(1, |closed|)`, or
/// `1 + |H|` when `H ≤ 0`.
pub fn exp_h_positivity(beta: f64, gamma: f64, t_grid: &[f64]) -> Result<LemmaReport> {
    let mut values = Vec::with_capacity(t_grid.len());
    let mut worst = 0.0f64;
    for &t in t_grid {
        let h = exp_h(beta, gamma, t)?;
        let closed = exp_h_closed(beta, gamma, t);
        let mismatch = (h - closed).abs() / closed.abs().max(1.0);
        let violation = if h > 0.0 { mismatch } else { 1.0 + h.abs() };
        worst = worst.max(violation);
        values.push(h);
    }
    Ok(LemmaReport::new("exp-h-positivity", t_grid.to_vec(), values, worst, H_MATCH_TOL))
}

/// Checks that `mr` decreases along a sorted grid. The worst violation is
/// the largest consecutive increase `mr(t_{i+1}) − mr(t_i)`; a single
/// point is vacuously monotone.
pub fn mr_monotonicity(law: HalfLine, t_grid: &[f64]) -> Result<LemmaReport> {
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("t grid must be strictly increasing".into()));
    }
    let values = t_grid.iter().map(|&t| moment_ratio(law, t)).collect::<Result<Vec<_>>>()?;
    let worst = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let worst = if worst.is_finite() { worst } else { 0.0 };
    Ok(LemmaReport::new(
        &format!("mr-monotonicity:{}", law.name()),
        t_grid.to_vec(),
        values,
        worst,
        MONOTONE_SLACK,
    ))
}

/// `F` along a grid of negative α; passes when it changes sign at most once.
pub fn f_root_count(model: DensityModel, band: &BandSpec, alpha_grid: &[f64]) -> Result<LemmaReport> {
    let values = alpha_grid
        .iter()
        .map(|&a| f_alpha(model, band, a))
        .collect::<Result<Vec<_>>>()?;
    let changes = count_sign_changes(&values) as f64;
    Ok(LemmaReport::new(
        &format!("f-sign-changes:{}:({},{})", model, band.a, band.b),
        alpha_grid.to_vec(),
        values,
        changes - 1.0,
        0.0,
    ))
}

/// `S(α) > 0` along a grid of negative α; the violation is `max(−S)`.
pub fn s_positivity(model: DensityModel, band: &BandSpec, alpha_grid: &[f64]) -> Result<LemmaReport> {
    let values = alpha_grid
        .iter()
        .map(|&a| s_alpha(model, band, a))
        .collect::<Result<Vec<_>>>()?;
    let worst = values.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
    Ok(LemmaReport::new(
        &format!("s-positivity:{}:({},{})", model, band.a, band.b),
        alpha_grid.to_vec(),
        values,
        worst,
        0.0,
    ))
}

/// Evenly spaced grid from `lo` to `hi` inclusive with `n` points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
