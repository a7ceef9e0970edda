//! Problem instances (hidden normal, hidden affine map) and data drawn from
//! the affine product distribution with a margin.
//!
//! A row is `x = A · R · z + shift`, where `z₁` follows the standardized
//! band-truncated law and `z₂..z_d` follow the untruncated law. The hidden
//! normal before the affine map is `u = R e₁`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density1d::{band_stats, BandSpec, DensityModel};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::rng;

pub const DEFAULT_KAPPA_MAX: f64 = 10.0;
pub const DEFAULT_SHIFT_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AffineMode {
    Identity,
    RandomRotation,
    RandomAffine { kappa_max: f64 },
}

impl AffineMode {
    pub fn label(&self) -> &'static str {
        match self {
            AffineMode::Identity => "identity",
            AffineMode::RandomRotation => "rotation",
            AffineMode::RandomAffine { .. } => "random",
        }
    }
}

impl fmt::Display for AffineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AffineMode::RandomAffine { kappa_max } => write!(f, "random(kappa<={kappa_max})"),
            other => f.write_str(other.label()),
        }
    }
}

impl FromStr for AffineMode {
    type Err = Error;

    /// Accepts `identity`, `rotation` and `random`; the latter takes the
    /// default condition-number cap.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(AffineMode::Identity),
            "rotation" => Ok(AffineMode::RandomRotation),
            "random" | "affine" => Ok(AffineMode::RandomAffine {
                kappa_max: DEFAULT_KAPPA_MAX,
            }),
            other => Err(Error::Parse(format!("unknown affine mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceOptions {
    pub shift_scale: f64,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        InstanceOptions {
            shift_scale: DEFAULT_SHIFT_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginInstance {
    pub model: DensityModel,
    pub band: BandSpec,
    pub dim: usize,
    pub epsilon: f64,
    pub affine_mode: AffineMode,
    /// Hidden normal in the pre-affine basis, the first column of `rotation`.
    pub u: Array1<f64>,
    pub rotation: Array2<f64>,
    pub affine: Array2<f64>,
    pub shift: Array1<f64>,
}

pub fn make_instance<R: Rng + ?Sized>(
    model: DensityModel,
    a: f64,
    b: f64,
    dim: usize,
    epsilon: f64,
    affine_mode: AffineMode,
    rng: &mut R,
) -> Result<MarginInstance> {
    make_instance_with(model, a, b, dim, epsilon, affine_mode, InstanceOptions::default(), rng)
}

#[allow(clippy::too_many_arguments)]
pub fn make_instance_with<R: Rng + ?Sized>(
    model: DensityModel,
    a: f64,
    b: f64,
    dim: usize,
    epsilon: f64,
    affine_mode: AffineMode,
    options: InstanceOptions,
    rng: &mut R,
) -> Result<MarginInstance> {
    if dim < 2 {
        return Err(Error::Domain(format!("dimension must be at least 2, got {dim}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let band = band_stats(model, a, b)?;
    band.require(epsilon)?;

    let (rotation, affine, shift) = match affine_mode {
        AffineMode::Identity => (Array2::eye(dim), Array2::eye(dim), Array1::zeros(dim)),
        AffineMode::RandomRotation => (random_rotation(dim, rng), Array2::eye(dim), Array1::zeros(dim)),
        AffineMode::RandomAffine { kappa_max } => {
            if !(kappa_max >= 1.0) {
                return Err(Error::Domain(format!("kappa_max must be at least 1, got {kappa_max}")));
            }
            let rotation = random_rotation(dim, rng);
            let affine = random_affine(dim, kappa_max, rng)?;
            let shift = Array1::from_shape_fn(dim, |_| options.shift_scale * rng.sample::<f64, _>(StandardNormal));
            (rotation, affine, shift)
        }
    };
    let u = rotation.column(0).to_owned();
    Ok(MarginInstance {
        model,
        band,
        dim,
        epsilon,
        affine_mode,
        u,
        rotation,
        affine,
        shift,
    })
}

/// Haar-distributed orthogonal matrix: Gram–Schmidt on a Gaussian matrix
/// (positive diagonal of the triangular factor).
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let g = Array2::from_shape_fn((dim, dim), |_| rng.sample::<f64, _>(StandardNormal));
        let mut q = Array2::<f64>::zeros((dim, dim));
        let mut ok = true;
        for j in 0..dim {
            let mut v = g.column(j).to_owned();
            // two passes of modified Gram–Schmidt keep orthogonality at ulp level
            for _ in 0..2 {
                for k in 0..j {
                    let proj = q.column(k).dot(&v);
                    v.scaled_add(-proj, &q.column(k));
                }
            }
            let n = linalg::norm(v.view());
            if n < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).assign(&(v / n));
        }
        if ok {
            return q;
        }
    }
}

/// Gaussian matrix whose singular values are compressed log-linearly into
/// `[1, kappa_max]` when its condition number exceeds the cap.
fn random_affine<R: Rng + ?Sized>(dim: usize, kappa_max: f64, rng: &mut R) -> Result<Array2<f64>> {
    let g = Array2::from_shape_fn((dim, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let gram = SymMatrix::from_array_upper(&g.t().dot(&g))?;
    let pairs = linalg::sym_eigen(&gram)?;
    let s_max = pairs[0].value.max(0.0).sqrt();
    let s_min = pairs[dim - 1].value.max(0.0).sqrt();
    if s_min > 0.0 && s_max / s_min <= kappa_max {
        return Ok(g);
    }
    if s_min <= 0.0 {
        return Err(Error::NumericalFailure("drew an exactly singular affine map".into()));
    }
    let span = (s_max / s_min).ln();
    // A = G V diag(s'/s) Vᵀ
    let mut scale = Array2::<f64>::zeros((dim, dim));
    for p in &pairs {
        let s = p.value.sqrt();
        let target = (kappa_max.ln() * (s / s_min).ln() / span).exp();
        let f = target / s;
        for i in 0..dim {
            for j in 0..dim {
                scale[[i, j]] += f * p.vector[i] * p.vector[j];
            }
        }
    }
    Ok(g.dot(&scale))
}

impl MarginInstance {
    /// `A · R`, the linear part of the hidden map.
    pub fn mixing(&self) -> Array2<f64> {
        self.affine.dot(&self.rotation)
    }

    /// Maps a data point back to the latent product coordinates `z`.
    pub fn latent(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let centered = &x - &self.shift;
        let pre = linalg::solve(self.affine.view(), centered.view())?;
        Ok(self.rotation.t().dot(&pre))
    }

    /// The margin's normal in input coordinates, `A^{-T} u`, normalized.
    pub fn normal_in_input(&self) -> Result<Array1<f64>> {
        let n = linalg::solve(self.affine.t(), self.u.view())?;
        let len = linalg::norm(n.view());
        Ok(n / len)
    }

    /// The margin's normal after whitening with `y = W (x - m)`, where
    /// `cov_sqrt = W^{-1}`: the direction `W^{-1} A^{-T} u`, normalized.
    pub fn normal_in_whitened(&self, cov_sqrt: &SymMatrix) -> Result<Array1<f64>> {
        let n = cov_sqrt.dot(&self.normal_in_input()?.view());
        let len = linalg::norm(n.view());
        Ok(n / len)
    }
}

/// `N × d` samples plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub seed: u64,
    pub instance: Option<MarginInstance>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, seed: u64, instance: Option<MarginInstance>) -> Result<Self> {
        let (n, d) = x.dim();
        if n < d + 1 {
            return Err(Error::InsufficientData(format!("{n} rows cannot support dimension {d}")));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Parse("dataset contains non-finite values".into()));
        }
        Ok(Dataset { x, seed, instance })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Draws `n` rows. Row `i` uses its own ChaCha stream of `seed`, so the
/// output is identical however the rows are split across threads.
pub fn generate(instance: &MarginInstance, n: usize, seed: u64) -> Result<Dataset> {
    generate_rows(instance, n, seed, true)
}

/// Like [`generate`], but the first latent coordinate is the raw truncated
/// draw rather than its standardization. This is the setting of the
/// no-whitening path, where the restricted coordinate keeps its shifted
/// mean and inflated variance. Rows share streams with [`generate`], so
/// the two outputs differ only through that coordinate.
pub fn generate_unstandardized(instance: &MarginInstance, n: usize, seed: u64) -> Result<Dataset> {
    generate_rows(instance, n, seed, false)
}

fn generate_rows(instance: &MarginInstance, n: usize, seed: u64, standardize: bool) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InsufficientData("cannot generate zero rows".into()));
    }
    let d = instance.dim;
    let identity = instance.affine_mode == AffineMode::Identity;
    let mixing = instance.mixing();
    let shift = instance.shift.as_slice().expect("contiguous").to_vec();
    let mix = mixing.as_standard_layout();
    let mix = mix.as_slice().expect("standard layout");
    let base = rng::seeded(seed);
    let model = instance.model;
    let band = instance.band;

    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(linalg::CHUNK_ROWS * d)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let mut z = vec![0.0; d];
            for (offset, row) in chunk.chunks_exact_mut(d).enumerate() {
                let index = (chunk_idx * linalg::CHUNK_ROWS + offset) as u64;
                let mut r = rng::row_stream(&base, index);
                let draw = model.sample_truncated(&band, &mut r);
                z[0] = if standardize { band.standardize(draw) } else { draw };
                for zk in z.iter_mut().skip(1) {
                    *zk = model.sample(&mut r);
                }
                if identity {
                    row.copy_from_slice(&z);
                } else {
                    for i in 0..d {
                        let m = &mix[i * d..(i + 1) * d];
                        row[i] = shift[i] + m.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        });
    let x = Array2::from_shape_vec((n, d), data).expect("shape matches buffer");
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("generated a non-finite coordinate".into()));
    }
    Ok(Dataset {
        x,
        seed,
        instance: Some(instance.clone()),
    })
}

/// Pure product data, no band removed: `n` rows of i.i.d. `q` coordinates.
pub fn generate_product(model: DensityModel, dim: usize, n: usize, seed: u64) -> Array2<f64> {
    let base = rng::seeded(seed);
    let mut x = Array2::zeros((n, dim));
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let mut r = rng::row_stream(&base, i as u64);
        for v in row.iter_mut() {
            *v = model.sample(&mut r);
        }
    }
    x
}

const BINARY_MAGIC: &[u8; 4] = b"CMDS";
const BINARY_VERSION: u32 = 1;

/// Formats a float with 17 significant digits (exact round trip).
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(x: &Array2<f64>, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Array2<f64>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let d = header.split(',').count();
    for (j, name) in header.split(',').enumerate() {
        if name.trim() != format!("x{j}") {
            return Err(Error::Parse(format!("unexpected header column '{name}'")));
        }
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number '{cell}'", lineno + 2)))?;
            values.push(v);
        }
        if values.len() - before != d {
            return Err(Error::Parse(format!("line {}: expected {d} columns", lineno + 2)));
        }
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, d), values).expect("row lengths checked"))
}

pub fn write_binary<W: Write>(x: &Array2<f64>, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let (n, d) = x.dim();
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&BINARY_VERSION.to_le_bytes())?;
    out.write_all(&(n as u64).to_le_bytes())?;
    out.write_all(&(d as u32).to_le_bytes())?;
    for v in x.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(input: R) -> Result<Array2<f64>> {
    let mut input = BufReader::new(input);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse("bad magic, not a CMDS file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != BINARY_VERSION {
        return Err(Error::Parse(format!("unsupported CMDS version {version}")));
    }
    input.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    input.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut values = Vec::with_capacity(n.saturating_mul(d));
    for _ in 0..n * d {
        input.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    if input.read(&mut b8)? != 0 {
        return Err(Error::Parse("trailing bytes after CMDS payload".into()));
    }
    Ok(Array2::from_shape_vec((n, d), values).expect("length is n*d"))
}

/// Reads a dataset, choosing the format from the file's leading bytes.
pub fn read_dataset(path: &Path) -> Result<Array2<f64>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let is_binary = file.read(&mut magic)? == 4 && &magic == BINARY_MAGIC;
    let file = File::open(path)?;
    if is_binary {
        read_binary(file)
    } else {
        read_csv(file)
    }
}
