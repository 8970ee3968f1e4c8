//! Sign-value-independent decomposition.
//!
//! `Z ≈ sign(Z) ⊙ (U Σ Vᵀ)` where `U Σ Vᵀ` is the rank-`r` truncated SVD of
//! the entrywise absolute value `|Z|`. Because the sign matrix carries the
//! sign pattern, the low-rank part only has to model magnitudes, and the
//! rank-1 error is never worse than a rank-1 SVD of `Z` itself.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: it orthogonalizes
//! the columns of the working matrix by plane rotations until every pair is
//! orthogonal to a relative tolerance. Column norms are then the singular
//! values.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100;

/// Elementwise sign of a matrix; `sign(0) = +1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    /// `true` for +1, row-major.
    positive: Vec<bool>,
}

impl SignMatrix {
    pub fn from_bits(rows: usize, cols: usize, positive: Vec<bool>) -> Result<Self> {
        if positive.len() != rows * cols {
            return Err(Error::invalid(format!(
                "sign bitmap has {} entries, expected {rows}x{cols}",
                positive.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            positive,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major `true` = +1 flags.
    pub fn bits(&self) -> &[bool] {
        &self.positive
    }

    /// Entry as `+1` / `-1`.
    pub fn get(&self, i: usize, j: usize) -> i8 {
        if self.positive[i * self.cols + j] {
            1
        } else {
            -1
        }
    }

    /// Hadamard product `self ⊙ m`.
    pub fn apply<T: Scalar>(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        if m.rows() != self.rows || m.cols() != self.cols {
            return Err(Error::invalid(format!(
                "sign matrix is {}x{}, operand is {}x{}",
                self.rows,
                self.cols,
                m.rows(),
                m.cols()
            )));
        }
        let data = m
            .as_slice()
            .iter()
            .zip(&self.positive)
            .map(|(&v, &p)| if p { v } else { -v })
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }
}

/// Truncated SVD factors: `U` is m×r, `V` is n×r, singular values sorted
/// nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors<T> {
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> LowRankFactors<T> {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.rank() {
            return Err(Error::InvalidRank {
                rank: r,
                max: self.rank(),
            });
        }
        Ok(Self {
            u: leading_columns(&self.u, r),
            singular_values: self.singular_values[..r].to_vec(),
            v: leading_columns(&self.v, r),
        })
    }

    /// `U Σ Vᵀ`.
    pub fn product(&self) -> Matrix<T> {
        let (m, n) = self.shape();
        let r = self.rank();
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            for k in 0..r {
                let scaled = self.u[(i, k)] * self.singular_values[k];
                if scaled == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + scaled * self.v[(j, k)];
                }
            }
        }
        out
    }
}

fn leading_columns<T: Scalar>(m: &Matrix<T>, r: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows(), r);
    for i in 0..m.rows() {
        for j in 0..r {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvidFactors<T> {
    pub sign: SignMatrix,
    /// Truncated SVD of `|Z|`.
    pub low_rank: LowRankFactors<T>,
}

impl<T: Scalar> SvidFactors<T> {
    pub fn rank(&self) -> usize {
        self.low_rank.rank()
    }

    pub fn truncate(&self, r: usize) -> Result<Self> {
        Ok(Self {
            sign: self.sign.clone(),
            low_rank: self.low_rank.truncate(r)?,
        })
    }
}

/// Frobenius distance between a matrix and its approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxError<T> {
    pub frobenius: T,
    /// `frobenius² / ‖Z‖²`; zero for an exact match, infinite when `Z = 0`
    /// but the approximation is not.
    pub nmse: T,
}

/// Splits `Z` into its sign matrix and entrywise absolute value.
pub fn sign_split<T: Scalar>(z: &Matrix<T>) -> Result<(SignMatrix, Matrix<T>)> {
    if z.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let positive = z.as_slice().iter().map(|&v| v >= T::zero()).collect();
    let sign = SignMatrix::from_bits(z.rows(), z.cols(), positive)?;
    Ok((sign, z.abs()))
}

/// Leading `r` singular triplets of `a`.
pub fn truncated_svd<T: Scalar>(a: &Matrix<T>, r: usize) -> Result<LowRankFactors<T>> {
    check_rank(a, r)?;
    jacobi_svd(a).truncate(r)
}

/// Sign split followed by a rank-`r` truncated SVD of `|Z|`.
pub fn svid_decompose<T: Scalar>(z: &Matrix<T>, r: usize) -> Result<SvidFactors<T>> {
    check_rank(z, r)?;
    let (sign, magnitude) = sign_split(z)?;
    let low_rank = truncated_svd(&magnitude, r)?;
    Ok(SvidFactors { sign, low_rank })
}

/// `sign ⊙ (U Σ Vᵀ)`.
pub fn reconstruct<T: Scalar>(f: &SvidFactors<T>) -> Result<Matrix<T>> {
    let (m, n) = f.low_rank.shape();
    if f.low_rank.u.cols() != f.rank() || f.low_rank.v.cols() != f.rank() {
        return Err(Error::invalid("factor column counts disagree with rank"));
    }
    if (m, n) != (f.sign.rows(), f.sign.cols()) {
        return Err(Error::invalid(format!(
            "sign matrix is {}x{}, low-rank product is {m}x{n}",
            f.sign.rows(),
            f.sign.cols()
        )));
    }
    f.sign.apply(&f.low_rank.product())
}

pub fn approximation_error<T: Scalar>(z: &Matrix<T>, zhat: &Matrix<T>) -> Result<ApproxError<T>> {
    if !z.same_shape(zhat) {
        return Err(Error::invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            z.rows(),
            z.cols(),
            zhat.rows(),
            zhat.cols()
        )));
    }
    let diff_sq: T = z
        .as_slice()
        .iter()
        .zip(zhat.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let ref_sq: T = z.as_slice().iter().map(|&a| a * a).sum();
    let nmse = if diff_sq == T::zero() {
        T::zero()
    } else if ref_sq == T::zero() {
        T::infinity()
    } else {
        diff_sq / ref_sq
    };
    Ok(ApproxError {
        frobenius: diff_sq.sqrt(),
        nmse,
    })
}

/// Plain truncated SVD of `Z`, the comparison point for the sign split.
pub fn svd_baseline<T: Scalar>(z: &Matrix<T>, r: usize) -> Result<LowRankFactors<T>> {
    truncated_svd(z, r)
}

fn check_rank<T: Scalar>(a: &Matrix<T>, r: usize) -> Result<()> {
    if r == 0 || r > a.min_dim() {
        return Err(Error::InvalidRank {
            rank: r,
            max: a.min_dim(),
        });
    }
    Ok(())
}

/// Thin SVD with `min(m, n)` triplets.
pub fn jacobi_svd<T: Scalar>(a: &Matrix<T>) -> LowRankFactors<T> {
    let transposed = a.rows() < a.cols();
    let work = if transposed { a.transpose() } else { a.clone() };
    let (m, n) = (work.rows(), work.cols());

    // Column-major copies so each rotation touches two contiguous slices.
    let mut w = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = work[(i, j)];
        }
    }
    let mut v = vec![T::zero(); n * n];
    for j in 0..n {
        v[j * n + j] = T::one();
    }

    let tol = T::jacobi_tolerance();
    let two = T::one() + T::one();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (wp, wq) = column_pair(&mut w, m, p, q);
                let (alpha, beta, gamma) = wp.iter().zip(wq.iter()).fold(
                    (T::zero(), T::zero(), T::zero()),
                    |(a, b, g), (&x, &y)| (a + x * x, b + y * y, g + x * y),
                );
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (two * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vp, vq) = column_pair(&mut v, n, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<T> = (0..n)
        .map(|j| w[j * m..(j + 1) * m].iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut left = Matrix::zeros(m, n);
    let mut right = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > T::zero() {
            for i in 0..m {
                left[(i, k)] = w[j * m + i] / s;
            }
            for i in 0..n {
                right[(i, k)] = v[j * n + i];
            }
        }
    }

    if transposed {
        LowRankFactors {
            u: right,
            singular_values: sigma,
            v: left,
        }
    } else {
        LowRankFactors {
            u: left,
            singular_values: sigma,
            v: right,
        }
    }
}

fn column_pair<T>(buf: &mut [T], len: usize, p: usize, q: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    (&mut head[p * len..(p + 1) * len], &mut tail[..len])
}

fn rotate<T: Scalar>(x: &mut [T], y: &mut [T], c: T, s: T) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}
