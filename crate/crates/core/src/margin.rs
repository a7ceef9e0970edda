//! Max-margin scan along a direction, selection among candidate normals,
//! and the `sin θ` error metric.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{CandidateKind, CandidateSet};
use crate::linalg;

/// Fraction of points that must remain on each side of an admissible gap.
pub const DEFAULT_MIN_SIDE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub direction: Array1<f64>,
    pub gap_lo: f64,
    pub gap_hi: f64,
    pub width: f64,
    pub left_count: usize,
    pub right_count: usize,
}

/// Widest empty interval between consecutive sorted projections, among the
/// splits that leave at least `max(1, ⌈min_side_fraction·N⌉)` points on
/// each side. Ties go to the leftmost gap.
pub fn max_margin(y: ArrayView2<f64>, direction: ArrayView1<f64>, min_side_fraction: f64) -> Result<MarginReport> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("max margin needs at least 2 rows, got {n}")));
    }
    let len = linalg::norm(direction);
    if (len - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("direction must be unit length, got norm {len}")));
    }
    if !(0.0..0.5).contains(&min_side_fraction) {
        return Err(Error::Domain(format!("min_side_fraction must lie in [0, 0.5), got {min_side_fraction}")));
    }
    let mut proj: Vec<f64> = y.dot(&direction).to_vec();
    proj.sort_by(f64::total_cmp);
    gap_scan(&proj, min_side_fraction).map(|(i, width)| MarginReport {
        direction: direction.to_owned(),
        gap_lo: proj[i],
        gap_hi: proj[i + 1],
        width,
        left_count: i + 1,
        right_count: n - i - 1,
    })
}

/// Returns `(i, width)` for the widest admissible gap `sorted[i]..sorted[i+1]`.
fn gap_scan(sorted: &[f64], min_side_fraction: f64) -> Result<(usize, f64)> {
    let n = sorted.len();
    let min_side = ((min_side_fraction * n as f64).ceil() as usize).max(1);
    if 2 * min_side > n {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot keep {min_side} on each side of a gap"
        )));
    }
    let mut best = (min_side - 1, f64::NEG_INFINITY);
    for i in (min_side - 1)..(n - min_side) {
        let w = sorted[i + 1] - sorted[i];
        if w > best.1 {
            best = (i, w);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub chosen: Array1<f64>,
    pub kind: CandidateKind,
    /// One entry per candidate in fixed order; `None` for flagged candidates.
    pub reports: Vec<(CandidateKind, Option<MarginReport>)>,
}

impl Selection {
    pub fn report(&self, kind: CandidateKind) -> Option<&MarginReport> {
        self.reports.iter().find(|(k, _)| *k == kind).and_then(|(_, r)| r.as_ref())
    }
}

/// Picks the candidate whose projection has the widest admissible gap;
/// earlier candidates win ties.
pub fn select_from(
    y: ArrayView2<f64>,
    candidates: &[(CandidateKind, Option<Array1<f64>>)],
    min_side_fraction: f64,
) -> Result<Selection> {
    let mut reports = Vec::with_capacity(candidates.len());
    let mut best: Option<(CandidateKind, f64, Array1<f64>)> = None;
    for (kind, dir) in candidates {
        let report = match dir {
            Some(d) => Some(max_margin(y, d.view(), min_side_fraction)?),
            None => None,
        };
        if let Some(r) = &report {
            if best.as_ref().is_none_or(|(_, w, _)| r.width > *w) {
                best = Some((*kind, r.width, r.direction.clone()));
            }
        }
        reports.push((*kind, report));
    }
    let (kind, _, chosen) = best.ok_or(Error::NoCandidate)?;
    Ok(Selection { chosen, kind, reports })
}

pub fn select(y: ArrayView2<f64>, candidates: &CandidateSet, min_side_fraction: f64) -> Result<Selection> {
    select_from(y, &candidates.directions(), min_side_fraction)
}

/// `sqrt(1 - cos²θ)` between two nonzero vectors; invariant to sign and scale.
pub fn sin_theta(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    let nu = u.dot(&u);
    let nv = v.dot(&v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    if u.len() != v.len() {
        return Err(Error::Domain("vectors differ in length".into()));
    }
    let cos2 = u.dot(&v).powi(2) / (nu * nv);
    Ok((1.0 - cos2).max(0.0).sqrt())
}
