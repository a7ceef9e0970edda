//! Trials and sweeps: run the recovery pipeline on generated instances,
//! write one CSV row per trial plus a per-cell summary and a figure.
//!
//! Every trial seeds itself from `(master seed, cell index, trial index)`,
//! so results do not depend on how trials are scheduled across threads.

pub mod config;
pub mod lemmas;
pub mod record;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::density1d::{band_stats, band_with_mass, DensityModel};
use crate::error::{Error, Result};
use crate::estimator::{candidates_with_data, CandidateKind};
use crate::margin::{select, sin_theta};
use crate::rng::{derive_seed, seeded, stream};
use crate::sampler::{format_f64, generate, make_instance, MarginInstance};

pub use config::{Range, SweepConfig};
pub use lemmas::{verify_lemmas, LemmaSummary};
pub use record::{median, spearman, TrialRecord, SKIPPED_EPSILON, STATUS_OK};
use svg::{Series, PALETTE};

fn blank_record(model: DensityModel, a: f64, b: f64, dim: usize, cfg: &SweepConfig, affine: &str, seed: u64) -> TrialRecord {
    TrialRecord {
        family: model.name().to_string(),
        a,
        b,
        d: dim,
        n: cfg.samples,
        alpha1: cfg.alphas.alpha1,
        alpha2: cfg.alphas.alpha2,
        alpha3: cfg.alphas.alpha3,
        affine_mode: affine.to_string(),
        seed,
        sin_theta_mean1: f64::NAN,
        sin_theta_mean2: f64::NAN,
        sin_theta_cov: f64::NAN,
        sin_theta_selected: f64::NAN,
        selected_kind: None,
        margin_widths: [f64::NAN; 3],
        elapsed_ms: 0,
        status: STATUS_OK.to_string(),
    }
}

/// Generates `n` rows from `instance` (data stream derived from `seed`),
/// runs candidate extraction and selection, and scores every candidate
/// against the true normal in whitened coordinates. Errors become a
/// `failed:` status instead of propagating.
pub fn run_trial(instance: &MarginInstance, n: usize, cfg: &SweepConfig, seed: u64) -> TrialRecord {
    let start = Instant::now();
    let mut rec = blank_record(
        instance.model,
        instance.band.a,
        instance.band.b,
        instance.dim,
        cfg,
        instance.affine_mode.label(),
        seed,
    );
    rec.n = n;
    if let Err(e) = score_trial(instance, n, cfg, seed, &mut rec) {
        rec.status = format!("failed:{}", record::sanitize(&e.to_string()));
    }
    if cfg.timing {
        rec.elapsed_ms = start.elapsed().as_millis() as u64;
    }
    rec
}

fn score_trial(instance: &MarginInstance, n: usize, cfg: &SweepConfig, seed: u64, rec: &mut TrialRecord) -> Result<()> {
    let data = generate(instance, n, derive_seed(seed, &[stream::DATA]))?;
    let (cands, y) = candidates_with_data(data.x.view(), &cfg.alphas)?;
    let selection = select(y.view(), &cands, cfg.min_side_fraction)?;
    let truth = instance.normal_in_whitened(&cands.whitener.sqrt)?;
    for (i, (kind, dir)) in cands.directions().iter().enumerate() {
        let s = match dir {
            Some(d) => sin_theta(truth.view(), d.view())?,
            None => f64::NAN,
        };
        match kind {
            CandidateKind::Mean1 => rec.sin_theta_mean1 = s,
            CandidateKind::Mean2 => rec.sin_theta_mean2 = s,
            CandidateKind::Cov => rec.sin_theta_cov = s,
        }
        rec.margin_widths[i] = selection.report(*kind).map_or(f64::NAN, |r| r.width);
    }
    rec.sin_theta_selected = sin_theta(truth.view(), selection.chosen.view())?;
    rec.selected_kind = Some(selection.kind);
    Ok(())
}

/// One `(family, band, dimension)` setting of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub model: DensityModel,
    pub a: f64,
    pub b: f64,
    pub dim: usize,
}

/// Runs trial `trial` of cell number `cell`. The band is gated by
/// `cfg.epsilon`; inadmissible or degenerate bands yield skipped rows.
pub fn run_cell_trial(cfg: &SweepConfig, cell: &Cell, cell_index: usize, trial: usize) -> TrialRecord {
    let seed = derive_seed(cfg.seed, &[cell_index as u64, trial as u64]);
    let mode = match cfg.affine_mode() {
        Ok(m) => m,
        Err(e) => {
            let mut rec = blank_record(cell.model, cell.a, cell.b, cell.dim, cfg, &cfg.affine, seed);
            rec.status = format!("failed:{}", record::sanitize(&e.to_string()));
            return rec;
        }
    };
    let skipped = |status: &str| {
        let mut rec = blank_record(cell.model, cell.a, cell.b, cell.dim, cfg, mode.label(), seed);
        rec.status = status.to_string();
        rec
    };
    if let Err(Error::DegenerateBand { .. }) = band_stats(cell.model, cell.a, cell.b) {
        return skipped("skipped:degenerate-band");
    }
    let mut rng = seeded(derive_seed(seed, &[stream::INSTANCE]));
    match make_instance(cell.model, cell.a, cell.b, cell.dim, cfg.epsilon, mode, &mut rng) {
        Ok(instance) => run_trial(&instance, cfg.samples, cfg, seed),
        Err(Error::InadmissibleBand { .. }) => skipped(SKIPPED_EPSILON),
        Err(e) => skipped(&format!("failed:{}", record::sanitize(&e.to_string()))),
    }
}

/// All trials of all cells, in `(cell, trial)` order.
pub fn run_cells(cfg: &SweepConfig, cells: &[Cell]) -> Vec<TrialRecord> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    jobs.par_iter()
        .map(|&(c, t)| run_cell_trial(cfg, &cells[c], c, t))
        .collect()
}

fn ok_median<'a>(records: impl Iterator<Item = &'a TrialRecord>, metric: impl Fn(&TrialRecord) -> f64) -> (f64, usize) {
    let vals: Vec<f64> = records.filter(|r| r.is_ok()).map(metric).collect();
    (median(vals.iter().copied()), vals.len())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    record::write_records(records, fs::File::create(path)?)
}

fn summary_csv(header: &str, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut text = format!("{header}\n");
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome<P> {
    pub records: Vec<TrialRecord>,
    pub points: Vec<P>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub a: f64,
    pub b: f64,
    pub median_sin_theta: f64,
    pub ok_trials: usize,
}

/// Every `a < b` pair on the grid, median selected `sin θ` per pair.
pub fn sweep_grid(cfg: &SweepConfig) -> Result<SweepOutcome<GridPoint>> {
    cfg.validate()?;
    let axis = cfg.grid_range().points();
    let mut cells = Vec::new();
    for (i, &a) in axis.iter().enumerate() {
        for &b in &axis[i + 1..] {
            cells.push(Cell { model: cfg.family, a, b, dim: cfg.dim });
        }
    }
    let records = run_cells(cfg, &cells);
    let points: Vec<GridPoint> = cells
        .iter()
        .zip(records.chunks(cfg.trials))
        .map(|(c, recs)| {
            let (m, ok) = ok_median(recs.iter(), |r| r.sin_theta_selected);
            GridPoint { a: c.a, b: c.b, median_sin_theta: m, ok_trials: ok }
        })
        .collect();

    fs::create_dir_all(&cfg.out)?;
    let stem = format!("grid_{}", cfg.family.name());
    let csv = cfg.out.join(format!("{stem}.csv"));
    let summary = cfg.out.join(format!("{stem}_summary.csv"));
    let figure = cfg.out.join(format!("{stem}.svg"));
    write_trials(&csv, &records)?;
    write_text(
        &summary,
        &summary_csv(
            "family,a,b,median_sin_theta,ok_trials",
            points.iter().map(|p| {
                vec![cfg.family.name().into(), format_f64(p.a), format_f64(p.b), format_f64(p.median_sin_theta), p.ok_trials.to_string()]
            }),
        ),
    )?;
    let lookup = |i: usize, j: usize| {
        points
            .iter()
            .find(|p| p.a == axis[i] && p.b == axis[j])
            .map(|p| p.median_sin_theta)
    };
    write_text(
        &figure,
        &svg::heatmap(
            &format!("median sin θ, {} (d={}, N={})", cfg.family, cfg.dim, cfg.samples),
            "b",
            "a",
            &axis,
            &axis,
            lookup,
        ),
    )?;
    Ok(SweepOutcome { records, points, files: vec![csv, summary, figure] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimPoint {
    pub d: usize,
    pub median_sin_theta: f64,
    pub ok_trials: usize,
}

/// Spearman correlation between `d` and the per-`d` median.
pub fn dimension_trend(points: &[DimPoint]) -> f64 {
    let d: Vec<f64> = points.iter().map(|p| p.d as f64).collect();
    let m: Vec<f64> = points.iter().map(|p| p.median_sin_theta).collect();
    spearman(&d, &m)
}

/// Fixed `N`, dimension varied over `cfg.dims`; each dimension pools the
/// trials of every band in [`SweepConfig::dimension_bands`].
pub fn sweep_dimension(cfg: &SweepConfig) -> Result<SweepOutcome<DimPoint>> {
    cfg.validate()?;
    let bands = cfg.dimension_bands();
    let cells: Vec<Cell> = cfg
        .dims
        .iter()
        .flat_map(|&dim| bands.iter().map(move |&(a, b)| (dim, a, b)))
        .map(|(dim, a, b)| Cell { model: cfg.family, a, b, dim })
        .collect();
    let records = run_cells(cfg, &cells);
    let points: Vec<DimPoint> = cfg
        .dims
        .iter()
        .map(|&d| {
            let (m, ok) = ok_median(records.iter().filter(|r| r.d == d), |r| r.sin_theta_selected);
            DimPoint { d, median_sin_theta: m, ok_trials: ok }
        })
        .collect();

    fs::create_dir_all(&cfg.out)?;
    let stem = format!("dim_{}", cfg.family.name());
    let csv = cfg.out.join(format!("{stem}.csv"));
    let summary = cfg.out.join(format!("{stem}_summary.csv"));
    let figure = cfg.out.join(format!("{stem}.svg"));
    write_trials(&csv, &records)?;
    write_text(
        &summary,
        &summary_csv(
            "d,median_sin_theta,ok_trials",
            points.iter().map(|p| vec![p.d.to_string(), format_f64(p.median_sin_theta), p.ok_trials.to_string()]),
        ),
    )?;
    let series = [Series {
        name: "selected".into(),
        points: points.iter().map(|p| (p.d as f64, p.median_sin_theta)).collect(),
        color: PALETTE[0],
        dashed: false,
    }];
    write_text(
        &figure,
        &svg::line_plot(&format!("median sin θ vs d, {} (N={})", cfg.family, cfg.samples), "d", "median sin θ", &series),
    )?;
    Ok(SweepOutcome { records, points, files: vec![csv, summary, figure] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassPoint {
    pub mass: f64,
    pub median_sin_theta: f64,
    pub ok_trials: usize,
}

/// True when the medians never increase as the mass grows.
pub fn mass_trend_non_increasing(points: &[MassPoint]) -> bool {
    let mut sorted = points.to_vec();
    sorted.sort_by(|p, q| p.mass.total_cmp(&q.mass));
    sorted.windows(2).all(|w| w[1].median_sin_theta <= w[0].median_sin_theta)
}

/// Band mass varied over `cfg.masses`. For each mass one band per entry of
/// `cfg.mass_offsets`, placing that share of the outside mass on the left.
pub fn sweep_epsilon(cfg: &SweepConfig) -> Result<SweepOutcome<MassPoint>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut cell_mass = Vec::new();
    for &mass in &cfg.masses {
        for &share in &cfg.mass_offsets {
            let band = band_with_mass(cfg.family, share * (1.0 - mass), mass)?;
            cells.push(Cell { model: cfg.family, a: band.a, b: band.b, dim: cfg.dim });
            cell_mass.push(mass);
        }
    }
    let records = run_cells(cfg, &cells);
    let points: Vec<MassPoint> = cfg
        .masses
        .iter()
        .map(|&mass| {
            let recs = records
                .chunks(cfg.trials)
                .zip(&cell_mass)
                .filter(|(_, &m)| m == mass)
                .flat_map(|(r, _)| r.iter());
            let (m, ok) = ok_median(recs, |r| r.sin_theta_selected);
            MassPoint { mass, median_sin_theta: m, ok_trials: ok }
        })
        .collect();

    fs::create_dir_all(&cfg.out)?;
    let stem = format!("eps_{}", cfg.family.name());
    let csv = cfg.out.join(format!("{stem}.csv"));
    let summary = cfg.out.join(format!("{stem}_summary.csv"));
    let figure = cfg.out.join(format!("{stem}.svg"));
    write_trials(&csv, &records)?;
    write_text(
        &summary,
        &summary_csv(
            "mass,inv_mass,median_sin_theta,ok_trials",
            points.iter().map(|p| {
                vec![format_f64(p.mass), format_f64(1.0 / p.mass), format_f64(p.median_sin_theta), p.ok_trials.to_string()]
            }),
        ),
    )?;
    let series = [Series {
        name: "selected".into(),
        points: points.iter().map(|p| (1.0 / p.mass, p.median_sin_theta)).collect(),
        color: PALETTE[0],
        dashed: false,
    }];
    write_text(
        &figure,
        &svg::line_plot(
            &format!("median sin θ vs 1/mass, {} (d={}, N={})", cfg.family, cfg.dim, cfg.samples),
            "1 / band mass",
            "median sin θ",
            &series,
        ),
    )?;
    Ok(SweepOutcome { records, points, files: vec![csv, summary, figure] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparePoint {
    pub b: f64,
    pub median_best_mean: f64,
    pub median_cov: f64,
    pub median_selected: f64,
    pub ok_trials: usize,
}

/// Left endpoint fixed, right endpoint swept: the better re-weighted mean
/// against the covariance candidate.
pub fn compare_mean_cov(cfg: &SweepConfig) -> Result<SweepOutcome<ComparePoint>> {
    cfg.validate()?;
    let a = cfg.comparison_a();
    let cells: Vec<Cell> = cfg
        .compare_b_range()
        .points()
        .into_iter()
        .filter(|&b| b > a)
        .map(|b| Cell { model: cfg.family, a, b, dim: cfg.dim })
        .collect();
    let records = run_cells(cfg, &cells);
    let points: Vec<ComparePoint> = cells
        .iter()
        .zip(records.chunks(cfg.trials))
        .map(|(c, recs)| {
            let (mean, ok) = ok_median(recs.iter(), TrialRecord::best_mean);
            let (cov, _) = ok_median(recs.iter(), |r| r.sin_theta_cov);
            let (sel, _) = ok_median(recs.iter(), |r| r.sin_theta_selected);
            ComparePoint { b: c.b, median_best_mean: mean, median_cov: cov, median_selected: sel, ok_trials: ok }
        })
        .collect();

    fs::create_dir_all(&cfg.out)?;
    let stem = format!("compare_{}", cfg.family.name());
    let csv = cfg.out.join(format!("{stem}.csv"));
    let summary = cfg.out.join(format!("{stem}_summary.csv"));
    let figure = cfg.out.join(format!("{stem}.svg"));
    write_trials(&csv, &records)?;
    write_text(
        &summary,
        &summary_csv(
            "a,b,median_best_mean,median_cov,median_selected,ok_trials",
            points.iter().map(|p| {
                vec![
                    format_f64(a),
                    format_f64(p.b),
                    format_f64(p.median_best_mean),
                    format_f64(p.median_cov),
                    format_f64(p.median_selected),
                    p.ok_trials.to_string(),
                ]
            }),
        ),
    )?;
    let curve = |name: &str, color, dashed, f: fn(&ComparePoint) -> f64| Series {
        name: name.into(),
        points: points.iter().map(|p| (p.b, f(p))).collect(),
        color,
        dashed,
    };
    let series = [
        curve("best mean", PALETTE[0], true, |p| p.median_best_mean),
        curve("covariance", PALETTE[1], false, |p| p.median_cov),
        curve("selected", PALETTE[2], false, |p| p.median_selected),
    ];
    write_text(
        &figure,
        &svg::line_plot(&format!("median sin θ vs b, {} (a={a})", cfg.family), "b", "median sin θ", &series),
    )?;
    Ok(SweepOutcome { records, points, files: vec![csv, summary, figure] })
}
