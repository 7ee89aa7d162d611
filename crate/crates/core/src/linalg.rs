//! Dense real and complex matrix arithmetic plus a deterministic symmetric
//! eigensolver (cyclic Jacobi with fixed pivot order).

use crate::error::{Error, Result};

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} . {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        matmul_into(
            &self.data, &other.data, &mut out.data, self.rows, self.cols, other.cols,
        );
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// C += A * B for row-major slices, a: m x k, b: k x n.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = A * B for row-major slices.
pub fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    c.fill(0.0);
    matmul_acc(a, b, c, m, k, n);
}

/// Dense complex matrix stored as split real/imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::Shape(format!(
                "re/im length {}/{} != {}x{}",
                re.len(),
                im.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.re[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_real(r: &RealMatrix) -> Self {
        Self {
            rows: r.rows,
            cols: r.cols,
            re: r.data.clone(),
            im: vec![0.0; r.data.len()],
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let dre = self
            .re
            .iter()
            .zip(&other.re)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dim = self
            .im
            .iter()
            .zip(&other.im)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        dre.max(dim)
    }
}

/// Complex matrix product lowered to four real products:
/// (A + iB)(X + iY) = (AX - BY) + i(BX + AY).
pub fn complex_matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "complex matmul {}x{} . {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = ComplexMatrix::zeros(m, n);
    let mut tmp = vec![0.0; m * n];
    // real part: A*X - B*Y
    matmul_into(&a.re, &b.re, &mut out.re, m, k, n);
    matmul_into(&a.im, &b.im, &mut tmp, m, k, n);
    for (r, t) in out.re.iter_mut().zip(&tmp) {
        *r -= t;
    }
    // imaginary part: B*X + A*Y
    matmul_into(&a.im, &b.re, &mut out.im, m, k, n);
    matmul_into(&a.re, &b.im, &mut tmp, m, k, n);
    for (r, t) in out.im.iter_mut().zip(&tmp) {
        *r += t;
    }
    Ok(out)
}

/// Entrywise quotient of two complex diagonals: out_i = num_i / den_i.
/// Errors when |den_i| falls at or below the pole guard 1e-12.
pub fn complex_diag_solve_apply(
    num: (&[f64], &[f64]),
    den: (&[f64], &[f64]),
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = num.0.len();
    if num.1.len() != n || den.0.len() != n || den.1.len() != n {
        return Err(Error::Shape("diagonal length mismatch".into()));
    }
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for i in 0..n {
        let (nr, ni) = (num.0[i], num.1[i]);
        let (dr, di) = (den.0[i], den.1[i]);
        let mag = (dr * dr + di * di).sqrt();
        if mag <= 1e-12 {
            return Err(Error::Pole {
                index: i,
                magnitude: mag,
            });
        }
        let denom = dr * dr + di * di;
        out_re[i] = (nr * dr + ni * di) / denom;
        out_im[i] = (ni * dr - nr * di) / denom;
    }
    Ok((out_re, out_im))
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Eigenvalues sorted ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvector i in column i.
    pub eigenvectors: RealMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFFDIAG_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric eigendecomposition by cyclic Jacobi sweeps with fixed pivot
/// order (p < q, row-major). Deterministic: identical input bytes give
/// identical output bytes.
pub fn sym_eigendecompose(m: &RealMatrix) -> Result<EigenResult> {
    if m.rows != m.cols {
        return Err(Error::Shape(format!("non-square {}x{}", m.rows, m.cols)));
    }
    let n = m.rows;
    let mut max_asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if max_asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(max_asym));
    }

    let mut a = m.data.clone();
    let mut v = RealMatrix::identity(n).data;

    let offdiag_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let x = a[i * n + j];
                s += 2.0 * x * x;
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = offdiag_norm(&a);
        if off < JACOBI_OFFDIAG_TOL {
            break;
        }
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                offdiag: off,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // stable rotation computation
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }

    // sort ascending with stable index order for ties
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap().then(i.cmp(&j)));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = RealMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        eigenvalues.push(diag[src]);
        // sign convention: first component with magnitude > 1e-12 is positive
        let mut sign = 1.0;
        for k in 0..n {
            let x = v[k * n + src];
            if x.abs() > 1e-12 {
                if x < 0.0 {
                    sign = -1.0;
                }
                break;
            }
        }
        for k in 0..n {
            vectors.data[k * n + col] = sign * v[k * n + src];
        }
    }

    Ok(EigenResult {
        eigenvalues,
        eigenvectors: vectors,
    })
}

impl EigenResult {
    /// Max-norm of U diag(λ) Uᵀ minus the given matrix.
    pub fn reconstruction_error(&self, input: &RealMatrix) -> f64 {
        let n = self.eigenvalues.len();
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for j in 0..n {
            for i in 0..n {
                scaled.data[i * n + j] *= self.eigenvalues[j];
            }
        }
        let recon = scaled.matmul(&u.transpose()).unwrap();
        recon.max_abs_diff(input)
    }

    /// Max-norm of UᵀU minus the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.eigenvalues.len();
        let gram = self
            .eigenvectors
            .transpose()
            .matmul(&self.eigenvectors)
            .unwrap();
        gram.max_abs_diff(&RealMatrix::identity(n))
    }
}
