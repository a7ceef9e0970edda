//! One row per trial, and the CSV layout shared by every sweep.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::CandidateKind;
use crate::sampler::format_f64;

pub const HEADER: [&str; 18] = [
    "family",
    "a",
    "b",
    "d",
    "N",
    "alpha1",
    "alpha2",
    "alpha3",
    "affine_mode",
    "seed",
    "sin_theta_mean1",
    "sin_theta_mean2",
    "sin_theta_cov",
    "sin_theta_selected",
    "selected_kind",
    "margin_widths",
    "elapsed_ms",
    "status",
];

pub const STATUS_OK: &str = "ok";
pub const SKIPPED_EPSILON: &str = "skipped:epsilon-check";

/// Outcome of one trial. Skipped and failed trials keep their inputs and
/// carry NaN metrics; `status` says why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub family: String,
    pub a: f64,
    pub b: f64,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub affine_mode: String,
    pub seed: u64,
    pub sin_theta_mean1: f64,
    pub sin_theta_mean2: f64,
    pub sin_theta_cov: f64,
    pub sin_theta_selected: f64,
    pub selected_kind: Option<CandidateKind>,
    /// Max-margin widths of mean1, mean2 and cov, NaN where flagged.
    pub margin_widths: [f64; 3],
    pub elapsed_ms: u64,
    pub status: String,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    pub fn sin_theta(&self, kind: CandidateKind) -> f64 {
        match kind {
            CandidateKind::Mean1 => self.sin_theta_mean1,
            CandidateKind::Mean2 => self.sin_theta_mean2,
            CandidateKind::Cov => self.sin_theta_cov,
        }
    }

    /// The better of the two re-weighted means; NaN only when both are flagged.
    pub fn best_mean(&self) -> f64 {
        self.sin_theta_mean1.min(self.sin_theta_mean2)
    }

    pub fn to_csv_line(&self) -> String {
        let widths: Vec<String> = self.margin_widths.iter().map(|&w| format_f64(w)).collect();
        [
            self.family.clone(),
            format_f64(self.a),
            format_f64(self.b),
            self.d.to_string(),
            self.n.to_string(),
            format_f64(self.alpha1),
            format_f64(self.alpha2),
            format_f64(self.alpha3),
            self.affine_mode.clone(),
            self.seed.to_string(),
            format_f64(self.sin_theta_mean1),
            format_f64(self.sin_theta_mean2),
            format_f64(self.sin_theta_cov),
            format_f64(self.sin_theta_selected),
            self.selected_kind.map_or(String::new(), |k| k.label().to_string()),
            widths.join(";"),
            self.elapsed_ms.to_string(),
            self.status.clone(),
        ]
        .join(",")
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != HEADER.len() {
            return Err(Error::Parse(format!("expected {} fields, got {}", HEADER.len(), fields.len())));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad number '{}'", HEADER[i], fields[i])))
        };
        let u = |i: usize| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad integer '{}'", HEADER[i], fields[i])))
        };
        let widths: Vec<f64> = fields[15]
            .split(';')
            .map(|w| w.parse().map_err(|_| Error::Parse(format!("margin_widths: bad number '{w}'"))))
            .collect::<Result<_>>()?;
        let margin_widths: [f64; 3] = widths
            .try_into()
            .map_err(|_| Error::Parse("margin_widths needs three values".into()))?;
        let selected_kind = match fields[14] {
            "" => None,
            "mean1" => Some(CandidateKind::Mean1),
            "mean2" => Some(CandidateKind::Mean2),
            "cov" => Some(CandidateKind::Cov),
            other => return Err(Error::Parse(format!("unknown selected_kind '{other}'"))),
        };
        Ok(TrialRecord {
            family: fields[0].to_string(),
            a: f(1)?,
            b: f(2)?,
            d: u(3)? as usize,
            n: u(4)? as usize,
            alpha1: f(5)?,
            alpha2: f(6)?,
            alpha3: f(7)?,
            affine_mode: fields[8].to_string(),
            seed: u(9)?,
            sin_theta_mean1: f(10)?,
            sin_theta_mean2: f(11)?,
            sin_theta_cov: f(12)?,
            sin_theta_selected: f(13)?,
            selected_kind,
            margin_widths,
            elapsed_ms: u(16)?,
            status: fields[17].to_string(),
        })
    }
}

/// Makes free text safe for a CSV cell.
pub fn sanitize(text: &str) -> String {
    text.chars()
        .map(|c| if c == ',' || c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

pub fn write_records<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", HEADER.join(","))?;
    for r in records {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))??;
    if header != HEADER.join(",") {
        return Err(Error::Parse(format!("unexpected header '{header}'")));
    }
    lines
        .filter(|l| l.as_ref().map_or(true, |l| !l.is_empty()))
        .map(|l| TrialRecord::from_csv_line(&l?))
        .collect()
}

/// Median of the finite values, or NaN if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Ranks starting at 1, with ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN when either side is constant or the
/// lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
