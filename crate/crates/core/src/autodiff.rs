//! Reverse-mode differentiation over real matrices, define-by-run.
//!
//! Complex operations are lowered to pairs of real operations; the real and
//! imaginary parts are optimized as independent real leaves. The tape is
//! rebuilt on every forward pass and consumed by a single backward sweep.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::linalg::{matmul_acc, matmul_into};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    DivElem(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    /// Shared square left factor applied to each vertical block of b.
    BatchedLeftMul {
        a: usize,
        b: usize,
        batch: usize,
    },
    /// out[i, j] = a[i, j] * v[i], v recorded as 1 x rows.
    ScaleRows(usize, usize),
    /// out[i, j] = a[i, j] + bias[j], bias recorded as 1 x cols.
    AddRowBcast(usize, usize),
    Relu(usize),
    SumAll(usize),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// A handle into the tape: node id plus shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
}

/// A complex matrix variable as a pair of real variables.
#[derive(Debug, Clone, Copy)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

impl ComplexVar {
    pub fn new(re: Var, im: Var) -> Result<Self> {
        if re.rows != im.rows || re.cols != im.cols {
            return Err(Error::Shape(format!(
                "complex var re {}x{} vs im {}x{}",
                re.rows, re.cols, im.rows, im.cols
            )));
        }
        Ok(Self { re, im })
    }
}

/// Gradient table produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.grads[v.id]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        Var { id, rows, cols }
    }

    pub fn value(&self, v: Var) -> Ref<'_, [f64]> {
        Ref::map(self.nodes.borrow(), |n| n[v.id].value.as_slice())
    }

    /// Differentiable input (parameter) node.
    pub fn leaf(&self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.push(Op::Leaf, rows, cols, value)
    }

    /// Non-differentiable input node; gradient is computed but discarded.
    pub fn constant(&self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "const shape mismatch");
        self.push(Op::Const, rows, cols, value)
    }

    pub fn zeros_const(&self, rows: usize, cols: usize) -> Var {
        self.constant(rows, cols, vec![0.0; rows * cols])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        Ok(())
    }

    fn zip_op(&self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id]
                .value
                .iter()
                .zip(&nodes[b.id].value)
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        self.push(op, a.rows, a.cols, value)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_op(a, b, Op::Add(a.id, b.id), |x, y| x + y))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_op(a, b, Op::Sub(a.id, b.id), |x, y| x - y))
    }

    pub fn mul_elem(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul_elem")?;
        Ok(self.zip_op(a, b, Op::MulElem(a.id, b.id), |x, y| x * y))
    }

    pub fn div_elem(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div_elem")?;
        Ok(self.zip_op(a, b, Op::DivElem(a.id, b.id), |x, y| x / y))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.iter().map(|&x| k * x).collect()
        };
        self.push(Op::Scale(a.id, k), a.rows, a.cols, value)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} . {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let mut value = vec![0.0; a.rows * b.cols];
        {
            let nodes = self.nodes.borrow();
            matmul_into(
                &nodes[a.id].value,
                &nodes[b.id].value,
                &mut value,
                a.rows,
                a.cols,
                b.cols,
            );
        }
        Ok(self.push(Op::Matmul(a.id, b.id), a.rows, b.cols, value))
    }

    /// Applies the square matrix `a` to each of `batch` vertical blocks of
    /// `b`: out_k = a . b_k, where b is (batch * a.rows) x b.cols.
    pub fn batched_left_mul(&self, a: Var, b: Var, batch: usize) -> Result<Var> {
        if a.rows != a.cols || b.rows != batch * a.rows {
            return Err(Error::Shape(format!(
                "batched_left_mul {}x{} . {}x{} (batch {batch})",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let n = a.rows;
        let d = b.cols;
        let mut value = vec![0.0; b.rows * d];
        {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let bv = &nodes[b.id].value;
            for k in 0..batch {
                let r = k * n * d;
                matmul_into(av, &bv[r..r + n * d], &mut value[r..r + n * d], n, n, d);
            }
        }
        Ok(self.push(
            Op::BatchedLeftMul {
                a: a.id,
                b: b.id,
                batch,
            },
            b.rows,
            d,
            value,
        ))
    }

    /// out[i, j] = a[i, j] * v[i]; v is 1 x a.rows.
    pub fn scale_rows(&self, a: Var, v: Var) -> Result<Var> {
        if v.rows != 1 || v.cols != a.rows {
            return Err(Error::Shape(format!(
                "scale_rows: v {}x{} vs a {}x{}",
                v.rows, v.cols, a.rows, a.cols
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let vv = &nodes[v.id].value;
            let mut out = vec![0.0; a.rows * a.cols];
            for i in 0..a.rows {
                for j in 0..a.cols {
                    out[i * a.cols + j] = av[i * a.cols + j] * vv[i];
                }
            }
            out
        };
        Ok(self.push(Op::ScaleRows(a.id, v.id), a.rows, a.cols, value))
    }

    /// out[i, j] = a[i, j] + bias[j]; bias is 1 x a.cols.
    pub fn add_row_bcast(&self, a: Var, bias: Var) -> Result<Var> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(Error::Shape(format!(
                "add_row_bcast: bias {}x{} vs a {}x{}",
                bias.rows, bias.cols, a.rows, a.cols
            )));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let bv = &nodes[bias.id].value;
            let mut out = vec![0.0; a.rows * a.cols];
            for i in 0..a.rows {
                for j in 0..a.cols {
                    out[i * a.cols + j] = av[i * a.cols + j] + bv[j];
                }
            }
            out
        };
        Ok(self.push(Op::AddRowBcast(a.id, bias.id), a.rows, a.cols, value))
    }

    /// Elementwise max(0, x); subgradient at 0 is 0.
    pub fn relu(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.iter().map(|&x| x.max(0.0)).collect()
        };
        self.push(Op::Relu(a.id), a.rows, a.cols, value)
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let s: f64 = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.iter().sum()
        };
        self.push(Op::SumAll(a.id), 1, 1, vec![s])
    }

    // ---- complex lowerings -------------------------------------------------

    pub fn complex_leaf(&self, rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> ComplexVar {
        ComplexVar {
            re: self.leaf(rows, cols, re),
            im: self.leaf(rows, cols, im),
        }
    }

    pub fn complex_constant(
        &self,
        rows: usize,
        cols: usize,
        re: Vec<f64>,
        im: Vec<f64>,
    ) -> ComplexVar {
        ComplexVar {
            re: self.constant(rows, cols, re),
            im: self.constant(rows, cols, im),
        }
    }

    /// (A + iB)(X + iY) = (AX - BY) + i(BX + AY), four real products.
    pub fn complex_matmul(&self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        let re = self.sub(self.matmul(a.re, b.re)?, self.matmul(a.im, b.im)?)?;
        let im = self.add(self.matmul(a.im, b.re)?, self.matmul(a.re, b.im)?)?;
        Ok(ComplexVar { re, im })
    }

    /// Elementwise complex product.
    pub fn complex_mul_elem(&self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        let re = self.sub(self.mul_elem(a.re, b.re)?, self.mul_elem(a.im, b.im)?)?;
        let im = self.add(self.mul_elem(a.im, b.re)?, self.mul_elem(a.re, b.im)?)?;
        Ok(ComplexVar { re, im })
    }

    /// Elementwise complex quotient via the quotient rule on real primitives.
    pub fn complex_div_elem(&self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        let mag = self.add(self.mul_elem(b.re, b.re)?, self.mul_elem(b.im, b.im)?)?;
        let num_re = self.add(self.mul_elem(a.re, b.re)?, self.mul_elem(a.im, b.im)?)?;
        let num_im = self.sub(self.mul_elem(a.im, b.re)?, self.mul_elem(a.re, b.im)?)?;
        Ok(ComplexVar {
            re: self.div_elem(num_re, mag)?,
            im: self.div_elem(num_im, mag)?,
        })
    }

    /// z + conj(z) = 2 Re(z). Gradient flows doubled into z.re, zero into z.im.
    pub fn twice_real(&self, z: ComplexVar) -> Var {
        self.scale(z.re, 2.0)
    }

    /// Per-eigenvalue Möbius map: entry i = (a_i λ_i + b_i) / (c_i λ_i + d_i).
    /// `lambda` is a constant real vector; coefficients are 1 x N complex
    /// variables (already determinant-normalized by the caller). Errors at a
    /// pole: |c_i λ_i + d_i| <= 1e-12.
    pub fn complex_diag_mobius(
        &self,
        lambda: &[f64],
        a: ComplexVar,
        b: ComplexVar,
        c: ComplexVar,
        d: ComplexVar,
    ) -> Result<ComplexVar> {
        let n = lambda.len();
        for cv in [a, b, c, d] {
            if cv.re.rows != 1 || cv.re.cols != n {
                return Err(Error::Shape(format!(
                    "mobius coefficients must be 1x{n}, got {}x{}",
                    cv.re.rows, cv.re.cols
                )));
            }
        }
        let lam = self.constant(1, n, lambda.to_vec());
        let num = ComplexVar {
            re: self.add(self.mul_elem(a.re, lam)?, b.re)?,
            im: self.add(self.mul_elem(a.im, lam)?, b.im)?,
        };
        let den = ComplexVar {
            re: self.add(self.mul_elem(c.re, lam)?, d.re)?,
            im: self.add(self.mul_elem(c.im, lam)?, d.im)?,
        };
        {
            let nodes = self.nodes.borrow();
            let dr = &nodes[den.re.id].value;
            let di = &nodes[den.im.id].value;
            for i in 0..n {
                let mag = (dr[i] * dr[i] + di[i] * di[i]).sqrt();
                if mag <= 1e-12 {
                    return Err(Error::Pole {
                        index: i,
                        magnitude: mag,
                    });
                }
            }
        }
        self.complex_div_elem(num, den)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns the gradient of the loss
    /// with respect to every node; unused leaves have zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.rows != 1 || loss.cols != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.id][0] = 1.0;

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if grads[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            match node.op {
                Op::Leaf | Op::Const => {}
                Op::Add(x, y) => {
                    let g = std::mem::take(&mut grads[id]);
                    for (dst, &gi) in grads[x].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    for (dst, &gi) in grads[y].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    grads[id] = g;
                }
                Op::Sub(x, y) => {
                    let g = std::mem::take(&mut grads[id]);
                    for (dst, &gi) in grads[x].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    for (dst, &gi) in grads[y].iter_mut().zip(&g) {
                        *dst -= gi;
                    }
                    grads[id] = g;
                }
                Op::MulElem(x, y) => {
                    let g = std::mem::take(&mut grads[id]);
                    let (xv, yv) = (&nodes[x].value, &nodes[y].value);
                    for i in 0..g.len() {
                        grads[x][i] += g[i] * yv[i];
                    }
                    for i in 0..g.len() {
                        grads[y][i] += g[i] * xv[i];
                    }
                    grads[id] = g;
                }
                Op::DivElem(x, y) => {
                    let g = std::mem::take(&mut grads[id]);
                    let (xv, yv) = (&nodes[x].value, &nodes[y].value);
                    for i in 0..g.len() {
                        grads[x][i] += g[i] / yv[i];
                    }
                    for i in 0..g.len() {
                        grads[y][i] -= g[i] * xv[i] / (yv[i] * yv[i]);
                    }
                    grads[id] = g;
                }
                Op::Scale(x, k) => {
                    let g = std::mem::take(&mut grads[id]);
                    for (dst, &gi) in grads[x].iter_mut().zip(&g) {
                        *dst += k * gi;
                    }
                    grads[id] = g;
                }
                Op::Matmul(x, y) => {
                    let g = std::mem::take(&mut grads[id]);
                    let (m, k) = (nodes[x].rows, nodes[x].cols);
                    let n = nodes[y].cols;
                    // dX += G Yᵀ, dY += Xᵀ G
                    let yt = transpose(&nodes[y].value, k, n);
                    matmul_acc(&g, &yt, &mut grads[x], m, n, k);
                    let xt = transpose(&nodes[x].value, m, k);
                    matmul_acc(&xt, &g, &mut grads[y], k, m, n);
                    grads[id] = g;
                }
                Op::BatchedLeftMul { a, b, batch } => {
                    let g = std::mem::take(&mut grads[id]);
                    let n = nodes[a].rows;
                    let d = nodes[b].cols;
                    let at = transpose(&nodes[a].value, n, n);
                    let bv = &nodes[b].value;
                    for kb in 0..batch {
                        let r = kb * n * d;
                        // dA += g_k b_kᵀ
                        let bt = transpose(&bv[r..r + n * d], n, d);
                        matmul_acc(&g[r..r + n * d], &bt, &mut grads[a], n, d, n);
                        // db_k += Aᵀ g_k
                        matmul_acc(&at, &g[r..r + n * d], &mut grads[b][r..r + n * d], n, n, d);
                    }
                    grads[id] = g;
                }
                Op::ScaleRows(x, v) => {
                    let g = std::mem::take(&mut grads[id]);
                    let (r, c) = (nodes[x].rows, nodes[x].cols);
                    let (xv, vv) = (&nodes[x].value, &nodes[v].value);
                    for i in 0..r {
                        for j in 0..c {
                            grads[x][i * c + j] += g[i * c + j] * vv[i];
                        }
                    }
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g[i * c + j] * xv[i * c + j];
                        }
                        grads[v][i] += s;
                    }
                    grads[id] = g;
                }
                Op::AddRowBcast(x, bias) => {
                    let g = std::mem::take(&mut grads[id]);
                    let (r, c) = (nodes[x].rows, nodes[x].cols);
                    for (dst, &gi) in grads[x].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                    for j in 0..c {
                        let mut s = 0.0;
                        for i in 0..r {
                            s += g[i * c + j];
                        }
                        grads[bias][j] += s;
                    }
                    grads[id] = g;
                }
                Op::Relu(x) => {
                    let g = std::mem::take(&mut grads[id]);
                    let xv = &nodes[x].value;
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            grads[x][i] += g[i];
                        }
                    }
                    grads[id] = g;
                }
                Op::SumAll(x) => {
                    let g = grads[id][0];
                    for dst in grads[x].iter_mut() {
                        *dst += g;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
