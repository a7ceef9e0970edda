//! Dense symmetric linear algebra for the moment pipeline.
//!
//! Row reductions are split into fixed-size chunks whose partial sums are
//! combined in chunk order, so results do not depend on how many threads
//! rayon happens to use.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Rows per reduction chunk.
pub const CHUNK_ROWS: usize = 2048;

const MAX_SWEEPS: usize = 100;

/// A symmetric matrix. Only the upper triangle is ever written; the lower
/// triangle is mirrored on construction so `get(i, j) == get(j, i)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: Array2<f64>,
}

impl SymMatrix {
    /// Builds from `f(i, j)` evaluated on `i <= j` only.
    pub fn from_upper<F: FnMut(usize, usize) -> f64>(d: usize, mut f: F) -> Self {
        let mut inner = Array2::zeros((d, d));
        for i in 0..d {
            for j in i..d {
                let v = f(i, j);
                inner[[i, j]] = v;
                inner[[j, i]] = v;
            }
        }
        SymMatrix { inner }
    }

    /// Symmetrizes an arbitrary square matrix by reading its upper triangle.
    pub fn from_array_upper(m: &Array2<f64>) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(Error::Domain(format!("matrix is {r}x{c}, not square")));
        }
        Ok(Self::from_upper(r, |i, j| m[[i, j]]))
    }

    pub fn identity(d: usize) -> Self {
        Self::from_upper(d, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        Self::from_upper(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.inner.view()
    }

    pub fn to_array(&self) -> Array2<f64> {
        self.inner.clone()
    }

    pub fn dot(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        self.inner.dot(v)
    }

    pub fn frobenius(&self) -> f64 {
        self.inner.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.inner.diag().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Array1<f64>,
}

/// Sample mean and covariance with `1/N` normalization.
pub fn mean_cov(x: ArrayView2<f64>) -> Result<(Array1<f64>, SymMatrix)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!("mean/covariance need at least 2 rows, got {n}")));
    }
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");

    let sums: Vec<Vec<f64>> = data
        .par_chunks(CHUNK_ROWS * d)
        .map(|chunk| {
            let mut s = vec![0.0; d];
            for row in chunk.chunks_exact(d) {
                for (acc, v) in s.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            s
        })
        .collect();
    let mut mean = Array1::zeros(d);
    for s in &sums {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean /= n as f64;

    let centered = mean.as_slice().expect("contiguous").to_vec();
    let cov = weighted_second_moment(data, d, |_| 1.0, Some(&centered)) / n as f64;
    Ok((mean, SymMatrix::from_array_upper(&cov)?))
}

/// `Σ_j w(row_j) (row_j - c)(row_j - c)ᵀ` over a row-major buffer, upper
/// triangle only, reduced chunk by chunk in a fixed order.
pub(crate) fn weighted_second_moment<W>(data: &[f64], d: usize, weight: W, center: Option<&[f64]>) -> Array2<f64>
where
    W: Fn(&[f64]) -> f64 + Sync,
{
    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK_ROWS * d)
        .map(|chunk| {
            let mut acc = vec![0.0; d * d];
            let mut buf = vec![0.0; d];
            for row in chunk.chunks_exact(d) {
                let w = weight(row);
                match center {
                    Some(c) => {
                        for k in 0..d {
                            buf[k] = row[k] - c[k];
                        }
                    }
                    None => buf.copy_from_slice(row),
                }
                for i in 0..d {
                    let wi = w * buf[i];
                    let out = &mut acc[i * d..(i + 1) * d];
                    for j in i..d {
                        out[j] += wi * buf[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Array2::zeros((d, d));
    for p in &partials {
        for i in 0..d {
            for j in i..d {
                total[[i, j]] += p[i * d + j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            total[[i, j]] = total[[j, i]];
        }
    }
    total
}

/// Full eigendecomposition by cyclic Jacobi sweeps, sorted by value
/// descending. Each eigenvector's largest-magnitude entry is positive.
pub fn sym_eigen(m: &SymMatrix) -> Result<Vec<EigenPair>> {
    if !m.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let d = m.dim();
    let mut a = m.to_array();
    let mut v = Array2::<f64>::eye(d);
    let norm = m.frobenius();

    let off = |a: &Array2<f64>| {
        let mut s = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                s += 2.0 * a[[i, j]] * a[[i, j]];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > 1e-15 * norm && norm > 0.0 {
        if sweeps == MAX_SWEEPS {
            let residual = off(&a);
            if residual > 1e-12 * norm {
                return Err(Error::NumericalFailure(format!(
                    "Jacobi did not converge after {MAX_SWEEPS} sweeps (off-diagonal {residual:e})"
                )));
            }
            break;
        }
        sweeps += 1;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[[p, p]] -= t * apq;
                a[[q, q]] += t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for r in 0..d {
                    if r != p && r != q {
                        let arp = a[[r, p]];
                        let arq = a[[r, q]];
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        a[[r, p]] = new_rp;
                        a[[p, r]] = new_rp;
                        a[[r, q]] = new_rq;
                        a[[q, r]] = new_rq;
                    }
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = c * vrp - s * vrq;
                    v[[r, q]] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut pairs: Vec<EigenPair> = (0..d)
        .map(|k| {
            let mut vector = v.column(k).to_owned();
            let pivot = vector
                .iter()
                .copied()
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if pivot < 0.0 {
                vector.mapv_inplace(|x| -x);
            }
            EigenPair {
                value: a[[k, k]],
                vector,
            }
        })
        .collect();
    pairs.sort_by(|x, y| y.value.total_cmp(&x.value));
    Ok(pairs)
}

pub fn top_eigenpair(m: &SymMatrix) -> Result<EigenPair> {
    Ok(sym_eigen(m)?.swap_remove(0))
}

fn spectral_function<F: Fn(f64) -> f64>(pairs: &[EigenPair], d: usize, f: F) -> SymMatrix {
    let scaled: Vec<(f64, &Array1<f64>)> = pairs.iter().map(|p| (f(p.value), &p.vector)).collect();
    SymMatrix::from_upper(d, |i, j| scaled.iter().map(|(s, v)| s * v[i] * v[j]).sum())
}

/// Floors the spectrum of a PSD matrix; returns the eigenpairs and the floor.
fn psd_spectrum(m: &SymMatrix, floor: Option<f64>) -> Result<(Vec<EigenPair>, f64)> {
    let pairs = sym_eigen(m)?;
    let lmax = pairs.first().map_or(0.0, |p| p.value);
    if lmax.is_nan() || lmax <= 0.0 {
        return Err(Error::DegenerateCovariance(lmax));
    }
    let lmin = pairs.last().map_or(0.0, |p| p.value);
    if lmin < -1e-10 * lmax.max(1.0) {
        return Err(Error::Domain(format!("matrix is not positive semidefinite (eigenvalue {lmin:e})")));
    }
    Ok((pairs, floor.unwrap_or(1e-12 * lmax)))
}

/// `M^{-1/2}` with eigenvalues clamped below at `floor`
/// (default `1e-12 * λ_max`).
pub fn inv_sqrt(m: &SymMatrix, floor: Option<f64>) -> Result<SymMatrix> {
    let (pairs, floor) = psd_spectrum(m, floor)?;
    Ok(spectral_function(&pairs, m.dim(), |l| 1.0 / l.max(floor).sqrt()))
}

/// `(M^{1/2}, M^{-1/2})` from one decomposition, both with the same floor.
pub fn sqrt_and_inv_sqrt(m: &SymMatrix, floor: Option<f64>) -> Result<(SymMatrix, SymMatrix)> {
    let (pairs, floor) = psd_spectrum(m, floor)?;
    let d = m.dim();
    Ok((
        spectral_function(&pairs, d, |l| l.max(floor).sqrt()),
        spectral_function(&pairs, d, |l| 1.0 / l.max(floor).sqrt()),
    ))
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Domain("solve needs a square system".into()));
    }
    let mut lu = a.to_owned();
    let mut x = b.to_owned();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[[i, col]].abs().total_cmp(&lu[[j, col]].abs()))
            .expect("non-empty range");
        if lu[[pivot, col]] == 0.0 {
            return Err(Error::NumericalFailure("singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                lu.swap([pivot, k], [col, k]);
            }
            x.swap(pivot, col);
        }
        for row in (col + 1)..n {
            let factor = lu[[row, col]] / lu[[col, col]];
            if factor != 0.0 {
                for k in col..n {
                    lu[[row, k]] -= factor * lu[[col, k]];
                }
                x[row] -= factor * x[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut s = x[row];
        for k in (row + 1)..n {
            s -= lu[[row, k]] * x[k];
        }
        x[row] = s / lu[[row, row]];
    }
    Ok(x)
}

/// 2-norm condition number `σ_max / σ_min`; infinite when singular.
pub fn condition_number(a: ArrayView2<f64>) -> Result<f64> {
    let gram = a.t().dot(&a);
    let pairs = sym_eigen(&SymMatrix::from_array_upper(&gram)?)?;
    let hi = pairs.first().map_or(0.0, |p| p.value);
    let lo = pairs.last().map_or(0.0, |p| p.value);
    if lo <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Sums a matrix's rows in the same chunked order as [`mean_cov`].
pub(crate) fn weighted_row_sum<W>(data: &[f64], d: usize, weight: W) -> Array1<f64>
where
    W: Fn(&[f64]) -> f64 + Sync,
{
    let partials: Vec<Vec<f64>> = data
        .par_chunks(CHUNK_ROWS * d)
        .map(|chunk| {
            let mut s = vec![0.0; d];
            for row in chunk.chunks_exact(d) {
                let w = weight(row);
                for (acc, v) in s.iter_mut().zip(row) {
                    *acc += w * v;
                }
            }
            s
        })
        .collect();
    let mut total = Array1::zeros(d);
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Transposes a stack of row vectors into a matrix with those rows.
pub fn rows_to_array(rows: &[Array1<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(src);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((d, d), |_| rng.sample(StandardNormal))
    }

    fn random_symmetric(d: usize, seed: u64) -> SymMatrix {
        let a = random_matrix(d, seed);
        SymMatrix::from_upper(d, |i, j| a[[i, j]] + a[[j, i]])
    }

    fn reconstruct(pairs: &[EigenPair], d: usize) -> Array2<f64> {
        let mut out = Array2::zeros((d, d));
        for p in pairs {
            for i in 0..d {
                for j in 0..d {
                    out[[i, j]] += p.value * p.vector[i] * p.vector[j];
                }
            }
        }
        out
    }

    #[test]
    fn mean_cov_hand_example() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        let (mean, cov) = mean_cov(x.view()).unwrap();
        assert_eq!(mean, array![1.0, 1.0]);
        assert_eq!(cov, SymMatrix::identity(2));
    }

    #[test]
    fn mean_cov_repeated_point() {
        let x = Array2::from_shape_fn((5, 3), |(_, j)| j as f64 + 0.5);
        let (_, cov) = mean_cov(x.view()).unwrap();
        assert!(cov.view().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_cov_needs_two_rows() {
        let x = Array2::<f64>::zeros((1, 3));
        assert!(matches!(mean_cov(x.view()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn chunked_reduction_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3 * CHUNK_ROWS + 17;
        let x = Array2::from_shape_fn((n, 4), |_| rng.sample::<f64, _>(StandardNormal) + 2.0);
        let (mean, cov) = mean_cov(x.view()).unwrap();
        let naive_mean = x.mean_axis(Axis(0)).unwrap();
        let centered = &x - &naive_mean;
        let naive_cov = centered.t().dot(&centered) / n as f64;
        for i in 0..4 {
            assert!((mean[i] - naive_mean[i]).abs() < 1e-12);
            for j in 0..4 {
                assert!((cov.get(i, j) - naive_cov[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_diagonal() {
        let pairs = sym_eigen(&SymMatrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(pairs[0].value, 3.0);
        assert_eq!(pairs[1].value, 1.0);
        assert_eq!(pairs[0].vector, array![0.0, 1.0]);
    }

    #[test]
    fn eigen_textbook_two_by_two() {
        let m = SymMatrix::from_upper(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let pairs = sym_eigen(&m).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pairs[0].value - 3.0).abs() < 1e-14);
        assert!((pairs[1].value - 1.0).abs() < 1e-14);
        assert!((pairs[0].vector[0] - r).abs() < 1e-14 && (pairs[0].vector[1] - r).abs() < 1e-14);
        assert!((pairs[1].vector[0].abs() - r).abs() < 1e-14);
        assert!((pairs[1].vector[0] + pairs[1].vector[1]).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        let m = random_symmetric(10, 1);
        let pairs = sym_eigen(&m).unwrap();
        let back = reconstruct(&pairs, 10);
        for i in 0..10 {
            for j in 0..10 {
                assert!((back[[i, j]] - m.get(i, j)).abs() < 1e-9);
            }
            for k in 0..10 {
                let dot = pairs[i].vector.dot(&pairs[k].vector);
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
        let sum: f64 = pairs.iter().map(|p| p.value).sum();
        assert!((sum - m.trace()).abs() < 1e-9 * m.frobenius());
        for w in pairs.windows(2) {
            assert!(w[0].value >= w[1].value);
        }
    }

    #[test]
    fn eigen_residuals_and_determinant() {
        for seed in 0..5 {
            let m = random_symmetric(4, 100 + seed);
            let pairs = sym_eigen(&m).unwrap();
            let op = pairs.iter().map(|p| p.value.abs()).fold(0.0, f64::max);
            for p in &pairs {
                let r = m.dot(&p.vector.view()) - p.value * &p.vector;
                assert!(norm(r.view()) <= 1e-8 * (1.0 + p.value.abs()) * op);
            }
            let product: f64 = pairs.iter().map(|p| p.value).product();
            let det = det4(&m.to_array());
            assert!((product - det).abs() < 1e-9 * det.abs().max(1.0));
        }
    }

    // cofactor expansion, independent of the eigen path
    fn det4(a: &Array2<f64>) -> f64 {
        fn det(a: &[Vec<f64>]) -> f64 {
            if a.len() == 1 {
                return a[0][0];
            }
            (0..a.len())
                .map(|c| {
                    let minor: Vec<Vec<f64>> = a[1..]
                        .iter()
                        .map(|row| row.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, v)| *v).collect())
                        .collect();
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    sign * a[0][c] * det(&minor)
                })
                .sum()
        }
        let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        det(&rows)
    }

    #[test]
    fn eigen_top_pair_matches_power_iteration() {
        for seed in 0..3 {
            let a = random_matrix(20, 40 + seed);
            let spd = SymMatrix::from_array_upper(&a.t().dot(&a)).unwrap();
            let top = top_eigenpair(&spd).unwrap();

            // shifted power iteration: the shift keeps the iteration on the top pair
            let shift = 0.1 * spd.trace() / 20.0;
            let mut v = Array1::from_elem(20, 1.0 / 20f64.sqrt());
            let mut lambda = 0.0;
            for _ in 0..20_000 {
                let w = spd.dot(&v.view()) + shift * &v;
                let n = norm(w.view());
                v = w / n;
                lambda = n - shift;
            }
            let align = v.dot(&top.vector).abs();
            assert!((lambda - top.value).abs() < 1e-7 * top.value, "{lambda} vs {}", top.value);
            assert!((1.0 - align).abs() < 1e-7);
        }
    }

    #[test]
    fn eigen_rejects_nan() {
        let m = SymMatrix::from_upper(2, |i, j| if i == j { f64::NAN } else { 0.0 });
        assert!(sym_eigen(&m).is_err());
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        assert_eq!(inv_sqrt(&SymMatrix::identity(3), None).unwrap(), SymMatrix::identity(3));
        let w = inv_sqrt(&SymMatrix::diag(&[4.0, 9.0]), None).unwrap();
        assert!((w.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((w.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.get(0, 1), 0.0);
    }

    #[test]
    fn inv_sqrt_sandwich_and_commutes() {
        let a = random_matrix(6, 77);
        let m = SymMatrix::from_array_upper(&a.t().dot(&a)).unwrap();
        let w = inv_sqrt(&m, None).unwrap();
        let sandwich = w.view().dot(&m.view()).dot(&w.view());
        let eye = Array2::<f64>::eye(6);
        assert!((&sandwich - &eye).iter().all(|v| v.abs() < 1e-8));
        let comm = w.view().dot(&m.view()) - m.view().dot(&w.view());
        assert!(comm.iter().all(|v| v.abs() <= 1e-9 * m.frobenius()));
        let (root, inv) = sqrt_and_inv_sqrt(&m, None).unwrap();
        assert!((root.view().dot(&inv.view()) - &eye).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn inv_sqrt_degenerate() {
        let zero = SymMatrix::diag(&[0.0, 0.0]);
        assert!(matches!(inv_sqrt(&zero, None), Err(Error::DegenerateCovariance(_))));
        let indefinite = SymMatrix::diag(&[1.0, -1.0]);
        assert!(inv_sqrt(&indefinite, None).is_err());
        // rank-deficient: the null direction is floored, not blown up to infinity
        let w = inv_sqrt(&SymMatrix::diag(&[1.0, 0.0]), None).unwrap();
        assert!((w.get(1, 1) - 1e6).abs() < 1e-3);
    }

    #[test]
    fn solve_and_condition() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = array![1.0, 2.0, 3.0];
        let x = solve(a.view(), b.view()).unwrap();
        assert!((a.dot(&x) - &b).iter().all(|v| v.abs() < 1e-14));
        assert!((condition_number(Array2::<f64>::eye(4).view()).unwrap() - 1.0).abs() < 1e-14);
        let diag = array![[10.0, 0.0], [0.0, 2.0]];
        assert!((condition_number(diag.view()).unwrap() - 5.0).abs() < 1e-12);
        assert!(solve(array![[1.0, 2.0], [2.0, 4.0]].view(), array![1.0, 1.0].view()).is_err());
    }
}
