//! Sweep configuration: defaults, a flat `key=value` file format, and
//! overrides applied in order (defaults, then file, then command line).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::density1d::DensityModel;
use crate::error::{Error, Result};
use crate::estimator::AlphaConfig;
use crate::margin::DEFAULT_MIN_SIDE_FRACTION;
use crate::sampler::{AffineMode, DEFAULT_KAPPA_MAX};

pub const DEFAULT_SAMPLES: usize = 200_000;
pub const DEFAULT_TRIALS: usize = 5;
pub const DEFAULT_DIMS: [usize; 4] = [5, 10, 20, 40];
pub const DEFAULT_MASSES: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];

/// Inclusive arithmetic range `lo, lo + step, …, ≤ hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Range {
    /// Points are computed as `lo + i·step` and rounded to 12 decimals so
    /// that grids such as `-3, -2.75, …` print cleanly.
    pub fn points(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.hi < self.lo {
            return Vec::new();
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| ((self.lo + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub family: DensityModel,
    pub a: f64,
    pub b: f64,
    pub dim: usize,
    pub samples: usize,
    pub trials: usize,
    pub seed: u64,
    pub alphas: AlphaConfig,
    /// `identity`, `rotation` or `random`.
    pub affine: String,
    pub kappa_max: f64,
    pub min_side_fraction: f64,
    /// Gate for admissible bands; cells that fail it become skipped rows.
    pub epsilon: f64,
    pub out: PathBuf,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_step: Option<f64>,
    pub dims: Vec<usize>,
    /// Bands averaged over in the dimension sweep; empty means a built-in catalog.
    pub bands: Vec<(f64, f64)>,
    pub masses: Vec<f64>,
    /// Left-tail share `left / (1 - mass)` for each band in the ε sweep.
    pub mass_offsets: Vec<f64>,
    pub compare_a: Option<f64>,
    pub compare_b_lo: Option<f64>,
    pub compare_b_hi: Option<f64>,
    pub compare_b_step: Option<f64>,
    /// Record wall-clock times; off by default so outputs are byte-stable.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            family: DensityModel::Gaussian,
            a: -0.5,
            b: 0.5,
            dim: 10,
            samples: DEFAULT_SAMPLES,
            trials: DEFAULT_TRIALS,
            seed: 1,
            alphas: AlphaConfig::default(),
            affine: "random".into(),
            kappa_max: DEFAULT_KAPPA_MAX,
            min_side_fraction: DEFAULT_MIN_SIDE_FRACTION,
            epsilon: 0.001,
            out: PathBuf::from("out"),
            grid_lo: None,
            grid_hi: None,
            grid_step: None,
            dims: DEFAULT_DIMS.to_vec(),
            bands: Vec::new(),
            masses: DEFAULT_MASSES.to_vec(),
            mass_offsets: vec![0.5, 0.3, 0.7],
            compare_a: None,
            compare_b_lo: None,
            compare_b_hi: None,
            compare_b_step: None,
            timing: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}='{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bands(value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("band '{pair}' is not of the form a:b")))?;
            Ok((parse("bands", a)?, parse("bands", b)?))
        })
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse {key}='{value}' as a boolean"))),
    }
}

/// Splits `key=value` lines, dropping blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl SweepConfig {
    /// Sets one field; keys use the command-line spelling, with `_` accepted for `-`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "family" => self.family = value.parse()?,
            "a" => self.a = parse(&key, value)?,
            "b" => self.b = parse(&key, value)?,
            "dim" | "d" => self.dim = parse(&key, value)?,
            "samples" | "n" => self.samples = parse(&key, value)?,
            "trials" => self.trials = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "alpha1" => self.alphas.alpha1 = parse(&key, value)?,
            "alpha2" => self.alphas.alpha2 = parse(&key, value)?,
            "alpha3" => self.alphas.alpha3 = parse(&key, value)?,
            "affine" => {
                value.parse::<AffineMode>()?;
                self.affine = value.trim().to_ascii_lowercase();
            }
            "kappa-max" => self.kappa_max = parse(&key, value)?,
            "min-side-fraction" => self.min_side_fraction = parse(&key, value)?,
            "epsilon" => self.epsilon = parse(&key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "grid-lo" => self.grid_lo = Some(parse(&key, value)?),
            "grid-hi" => self.grid_hi = Some(parse(&key, value)?),
            "grid-step" => self.grid_step = Some(parse(&key, value)?),
            "dims" => self.dims = parse_list(&key, value)?,
            "bands" => self.bands = parse_bands(value)?,
            "masses" => self.masses = parse_list(&key, value)?,
            "mass-offsets" => self.mass_offsets = parse_list(&key, value)?,
            "compare-a" => self.compare_a = Some(parse(&key, value)?),
            "compare-b-lo" => self.compare_b_lo = Some(parse(&key, value)?),
            "compare-b-hi" => self.compare_b_hi = Some(parse(&key, value)?),
            "compare-b-step" => self.compare_b_step = Some(parse(&key, value)?),
            "timing" => self.timing = parse_bool(&key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply_pairs<I, K, V>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in pairs {
            self.set(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        cfg.apply_pairs(parse_pairs(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn affine_mode(&self) -> Result<AffineMode> {
        Ok(match self.affine.parse::<AffineMode>()? {
            AffineMode::RandomAffine { .. } => AffineMode::RandomAffine {
                kappa_max: self.kappa_max,
            },
            other => other,
        })
    }

    /// `[-3, 3]` for the unbounded families and `[-1.5, 1.5]` for the uniform, step 0.25.
    pub fn default_grid(&self) -> Range {
        let half = if self.family == DensityModel::Uniform { 1.5 } else { 3.0 };
        Range { lo: -half, hi: half, step: 0.25 }
    }

    pub fn grid_range(&self) -> Range {
        let d = self.default_grid();
        Range {
            lo: self.grid_lo.unwrap_or(d.lo),
            hi: self.grid_hi.unwrap_or(d.hi),
            step: self.grid_step.unwrap_or(d.step),
        }
    }

    pub fn comparison_a(&self) -> f64 {
        self.compare_a
            .unwrap_or(if self.family == DensityModel::Uniform { -0.5 } else { -2.0 })
    }

    pub fn default_compare_b(&self) -> Range {
        if self.family == DensityModel::Uniform {
            Range { lo: -0.4, hi: 0.9, step: 0.1 }
        } else {
            Range { lo: -1.9, hi: 4.0, step: 0.1 }
        }
    }

    pub fn compare_b_range(&self) -> Range {
        let d = self.default_compare_b();
        Range {
            lo: self.compare_b_lo.unwrap_or(d.lo),
            hi: self.compare_b_hi.unwrap_or(d.hi),
            step: self.compare_b_step.unwrap_or(d.step),
        }
    }

    /// Bands averaged over in the dimension sweep.
    pub fn dimension_bands(&self) -> Vec<(f64, f64)> {
        if !self.bands.is_empty() {
            return self.bands.clone();
        }
        match self.family {
            DensityModel::Uniform => vec![(-0.5, 0.5), (-0.8, 0.2), (-0.2, 0.6), (0.0, 0.6)],
            _ => vec![(-0.5, 0.5), (-1.0, 0.5), (-2.0, 0.5), (0.0, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alphas.validate()?;
        self.affine_mode()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.samples < self.dim + 1 {
            return Err(Error::Config(format!("samples must exceed dim, got {}", self.samples)));
        }
        if !(0.0..0.5).contains(&self.min_side_fraction) {
            return Err(Error::Config(format!("min-side-fraction must lie in [0, 0.5), got {}", self.min_side_fraction)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.kappa_max >= 1.0) {
            return Err(Error::Config(format!("kappa-max must be at least 1, got {}", self.kappa_max)));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Config("every entry of dims must be at least 2".into()));
        }
        if self.masses.iter().any(|m| !(*m > 0.0 && *m < 1.0)) {
            return Err(Error::Config("masses must lie in (0, 1)".into()));
        }
        if self.mass_offsets.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("mass-offsets must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let text = "# desk run\nfamily = laplace\ndim=6 # inline\n\nsamples=5000\nalpha2=-0.3\nbands=-1:0.5, 0:1\n";
        let mut cfg = SweepConfig::from_text(text).unwrap();
        assert_eq!(cfg.family, DensityModel::Laplace);
        assert_eq!(cfg.dim, 6);
        assert_eq!(cfg.alphas.alpha2, -0.3);
        assert_eq!(cfg.bands, vec![(-1.0, 0.5), (0.0, 1.0)]);
        cfg.apply_pairs([("dim", "8"), ("min_side_fraction", "0.01")]).unwrap();
        assert_eq!(cfg.dim, 8);
        assert_eq!(cfg.min_side_fraction, 0.01);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SweepConfig::from_text("dim").is_err());
        assert!(SweepConfig::from_text("colour=red").is_err());
        assert!(SweepConfig::from_text("affine=shear").is_err());
        let cfg = SweepConfig::from_text("trials=0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = SweepConfig::from_text("alpha1=0.1").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grids() {
        let g = SweepConfig::default().grid_range().points();
        assert_eq!(g.len(), 25);
        assert_eq!((g[0], g[24]), (-3.0, 3.0));
        assert_eq!(g[1], -2.75);
        let u = SweepConfig::from_text("family=uniform").unwrap();
        assert_eq!(u.grid_range().points().len(), 13);
        assert_eq!(u.comparison_a(), -0.5);
        let b = SweepConfig::default().compare_b_range().points();
        assert_eq!((b[0], *b.last().unwrap()), (-1.9, 4.0));
        let partial = SweepConfig::from_text("grid-step=0.5").unwrap();
        assert_eq!(partial.grid_range().points().len(), 13);
        // the family default applies regardless of key order
        let late = SweepConfig::from_text("grid-step=0.5\nfamily=uniform").unwrap();
        assert_eq!(late.grid_range().points(), vec![-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn kappa_flows_into_mode() {
        let cfg = SweepConfig::from_text("affine=random\nkappa-max=5").unwrap();
        assert_eq!(cfg.affine_mode().unwrap(), AffineMode::RandomAffine { kappa_max: 5.0 });
        let cfg = SweepConfig::from_text("affine=identity").unwrap();
        assert_eq!(cfg.affine_mode().unwrap(), AffineMode::Identity);
    }
}
