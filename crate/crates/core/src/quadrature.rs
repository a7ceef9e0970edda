//! Globally adaptive Gauss–Kronrod (10/21 point) integration.
//!
//! The interval with the largest local error estimate is bisected until the
//! summed estimate drops below `max(abs_tol, rel_tol * |integral|)` or the
//! interval budget is exhausted. The local estimate is the plain
//! `|K21 - G10|` difference, which is pessimistic for smooth integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Default absolute tolerance used throughout the 1-D machinery.
pub const ABS_TOL: f64 = 1e-10;

/// Maximum number of subintervals kept by one adaptive run.
pub const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Piece {}

impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 21-point Kronrod evaluation with its embedded 10-point Gauss estimate.
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    (value, error)
}

/// Integrates `f` over `[a, b]` (either orientation).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    if a == b {
        return Quadrature {
            value: 0.0,
            abs_error: 0.0,
            intervals: 0,
            converged: true,
        };
    }
    if b < a {
        let q = integrate(f, b, a, abs_tol, rel_tol);
        return Quadrature { value: -q.value, ..q };
    }

    let (value, error) = gk21(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value, error });
    let mut total = value;
    let mut total_err = error;

    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < MAX_INTERVALS {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval cannot be split further in floating point
            heap.push(Piece { error: 0.0, ..worst });
            total_err -= worst.error;
            continue;
        }
        let (lv, le) = gk21(&f, worst.a, mid);
        let (rv, re) = gk21(&f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Piece { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Piece { a: mid, b: worst.b, value: rv, error: re });
    }

    // re-sum from the pieces to shed the drift of the running updates
    let mut pieces: Vec<Piece> = heap.into_vec();
    pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value: f64 = pieces.iter().map(|p| p.value).sum();
    let abs_error: f64 = pieces.iter().map(|p| p.error).sum();
    Quadrature {
        value,
        abs_error,
        intervals: pieces.len(),
        converged: abs_error <= abs_tol.max(rel_tol * value.abs()),
    }
}

/// Integrates over `[a, b]` split at the given interior breakpoints, so kinks
/// and support edges always fall on panel boundaries.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let mut cuts: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    cuts.push(a);
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let panels = (cuts.len() - 1).max(1) as f64;
    let mut out = Quadrature {
        value: 0.0,
        abs_error: 0.0,
        intervals: 0,
        converged: true,
    };
    for w in cuts.windows(2) {
        let q = integrate(&f, w[0], w[1], abs_tol / panels, rel_tol);
        out.value += q.value;
        out.abs_error += q.abs_error;
        out.intervals += q.intervals;
        out.converged &= q.converged;
    }
    out
}
