//! The full catalog of one-dimensional checks, run in one call.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::density1d::{band_stats, band_with_mass, DensityModel};
use crate::error::Result;
use crate::oracle::{self, HalfLine, LemmaReport};

/// Asymmetric bands whose `F` curves are checked for at most one sign change.
pub const ASYMMETRIC_BANDS: [(DensityModel, f64, f64); 12] = [
    (DensityModel::Gaussian, -2.0, 0.5),
    (DensityModel::Gaussian, -1.0, 0.2),
    (DensityModel::Gaussian, 0.3, 1.3),
    (DensityModel::Gaussian, -0.5, 1.5),
    (DensityModel::Uniform, -1.0, 0.2),
    (DensityModel::Uniform, -0.5, 0.9),
    (DensityModel::Uniform, 0.1, 0.8),
    (DensityModel::Uniform, -1.2, -0.3),
    (DensityModel::Laplace, -2.0, 0.5),
    (DensityModel::Laplace, -1.0, 0.2),
    (DensityModel::Laplace, 0.3, 1.3),
    (DensityModel::Laplace, -0.5, 1.5),
];

pub const SYMMETRIC_MASSES: [f64; 3] = [0.1, 0.2, 0.4];

#[derive(Debug, Clone, Serialize)]
pub struct LemmaSummary {
    pub reports: Vec<LemmaReport>,
    pub all_pass: bool,
}

fn zero_report(lemma_id: &str, grid: Vec<f64>, values: Vec<f64>, tolerance: f64) -> LemmaReport {
    let worst = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    LemmaReport {
        lemma_id: lemma_id.to_string(),
        grid,
        values,
        verdict: worst <= tolerance,
        worst_violation: worst,
        tolerance,
    }
}

/// Runs every check; writes `lemmas.json` into `out` when given.
pub fn verify_lemmas(out: Option<&Path>) -> Result<LemmaSummary> {
    let mut reports = Vec::new();

    let t_grid = oracle::linspace(0.0, 5.0, 101);
    for law in [HalfLine::HalfGaussian, HalfLine::Exponential { gamma: 1.0 }] {
        reports.push(oracle::mr_monotonicity(law, &t_grid)?);
    }

    let h_grid = oracle::linspace(0.0, 10.0, 21);
    for (beta, gamma) in [(1.0, 1.0), (2.0, 0.5), (0.5, 3.0)] {
        let mut r = oracle::exp_h_positivity(beta, gamma, &h_grid)?;
        r.lemma_id = format!("{}:beta={beta},gamma={gamma}", r.lemma_id);
        reports.push(r);
    }

    let alpha_grid = oracle::linspace(-0.5, -0.01, 99);
    for (model, a, b) in ASYMMETRIC_BANDS {
        reports.push(oracle::f_root_count(model, &band_stats(model, a, b)?, &alpha_grid)?);
    }

    let s_grid = [-0.5, -0.2, -0.1, -0.05, -0.01];
    for model in DensityModel::ALL {
        for mass in SYMMETRIC_MASSES {
            let band = band_with_mass(model, (1.0 - mass) / 2.0, mass)?;
            let f_values = alpha_grid
                .iter()
                .map(|&a| oracle::f_alpha(model, &band, a))
                .collect::<Result<Vec<_>>>()?;
            reports.push(zero_report(
                &format!("f-symmetric-zero:{model}:mass={mass}"),
                alpha_grid.clone(),
                f_values,
                oracle::SIGN_ZERO_TOL,
            ));
            let mut s = oracle::s_positivity(model, &band, &s_grid)?;
            s.lemma_id = format!("s-positivity:{model}:mass={mass}");
            reports.push(s);
            let s0 = oracle::s_alpha(model, &band, 0.0)?;
            reports.push(zero_report(&format!("s-zero:{model}:mass={mass}"), vec![0.0], vec![s0], 1e-10));
        }
    }

    let all_pass = reports.iter().all(|r| r.verdict);
    let summary = LemmaSummary { reports, all_pass };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("lemmas.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}
