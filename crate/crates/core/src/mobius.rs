//! The Möbius spectral filter, the network block built on it, stacking,
//! initialization, and parameter accounting.
//!
//! A block computes Z = σ(2Re{U Möbius(Λ) Uᵀ X W} + b) where Möbius is the
//! per-eigenvalue map λ ↦ (aλ + b)/(cλ + d) with complex coefficients, one
//! quadruple per eigenvalue index, shared across channels.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ComplexVar, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{decompose, SkeletonTopology, SpectralDecomposition};
use crate::linalg::RealMatrix;

const DET_GUARD: f64 = 1e-12;

/// Per-eigenvalue-index Möbius coefficient diagonals, split re/im.
#[derive(Debug, Clone, PartialEq)]
pub struct MobiusCoefficients {
    pub a_re: Vec<f64>,
    pub a_im: Vec<f64>,
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
    pub c_re: Vec<f64>,
    pub c_im: Vec<f64>,
    pub d_re: Vec<f64>,
    pub d_im: Vec<f64>,
}

impl MobiusCoefficients {
    pub fn len(&self) -> usize {
        self.a_re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_re.is_empty()
    }

    pub fn quad(&self, i: usize) -> (Complex64, Complex64, Complex64, Complex64) {
        (
            Complex64::new(self.a_re[i], self.a_im[i]),
            Complex64::new(self.b_re[i], self.b_im[i]),
            Complex64::new(self.c_re[i], self.c_im[i]),
            Complex64::new(self.d_re[i], self.d_im[i]),
        )
    }

    pub fn determinant(&self, i: usize) -> Complex64 {
        let (a, b, c, d) = self.quad(i);
        a * d - b * c
    }

    /// Principal square roots of the per-index determinants; the scales the
    /// forward pass divides out. Errors on |ad - bc| <= 1e-12.
    pub fn norm_scales(&self) -> Result<Vec<Complex64>> {
        (0..self.len())
            .map(|i| {
                let det = self.determinant(i);
                if det.norm() <= DET_GUARD {
                    Err(Error::DegenerateFilter {
                        index: i,
                        det_magnitude: det.norm(),
                    })
                } else {
                    Ok(det.sqrt())
                }
            })
            .collect()
    }
}

/// Divides each coefficient quadruple by the principal complex square root
/// of its determinant, yielding determinant 1. The filter values are
/// unchanged (the scale cancels in the ratio).
pub fn normalize_coefficients(raw: &MobiusCoefficients) -> Result<MobiusCoefficients> {
    let scales = raw.norm_scales()?;
    let n = raw.len();
    let mut out = raw.clone();
    for i in 0..n {
        let inv = scales[i].inv();
        let (a, b, c, d) = raw.quad(i);
        let (a, b, c, d) = (a * inv, b * inv, c * inv, d * inv);
        out.a_re[i] = a.re;
        out.a_im[i] = a.im;
        out.b_re[i] = b.re;
        out.b_im[i] = b.im;
        out.c_re[i] = c.re;
        out.c_im[i] = c.im;
        out.d_re[i] = d.re;
        out.d_im[i] = d.im;
    }
    Ok(out)
}

/// Evaluates the Möbius map (az + b)/(cz + d).
pub fn mobius_eval(
    a: Complex64,
    b: Complex64,
    c: Complex64,
    d: Complex64,
    z: Complex64,
) -> Complex64 {
    (a * z + b) / (c * z + d)
}

/// The two fixed points of a Möbius map with c != 0.
#[derive(Debug, Clone, Copy)]
pub struct FixedPoints {
    pub gamma1: Complex64,
    pub gamma2: Complex64,
}

/// Solves f(z) = z, i.e. cz² + (d - a)z - b = 0, returning both root
/// branches: γ = (a - d ± sqrt((a - d)² + 4bc)) / (2c).
pub fn mobius_fixed_points(
    index: usize,
    a: Complex64,
    b: Complex64,
    c: Complex64,
    d: Complex64,
) -> Result<FixedPoints> {
    if c.norm() <= 1e-12 {
        return Err(Error::AffineMap {
            index,
            c_magnitude: c.norm(),
        });
    }
    let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
    Ok(FixedPoints {
        gamma1: (a - d + disc) / (2.0 * c),
        gamma2: (a - d - disc) / (2.0 * c),
    })
}

/// One MöbiusGCN block: coefficient diagonals, complex channel-mixing
/// weights, real bias, and the activation flag.
#[derive(Debug, Clone)]
pub struct MobiusBlockParams {
    pub coeffs: MobiusCoefficients,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Row-major in_channels x out_channels, split re/im.
    pub w_re: Vec<f64>,
    pub w_im: Vec<f64>,
    /// One real bias per output channel.
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl MobiusBlockParams {
    pub fn num_parameters(&self) -> usize {
        2 * self.in_channels * self.out_channels + 8 * self.coeffs.len() + self.out_channels
    }
}

/// Tape handles for one block's parameter leaves, in canonical order.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub a: ComplexVar,
    pub b: ComplexVar,
    pub c: ComplexVar,
    pub d: ComplexVar,
    pub w: ComplexVar,
    pub bias: Var,
}

impl BlockVars {
    /// Leaf vars in the canonical parameter order
    /// (a_re, a_im, b_re, b_im, c_re, c_im, d_re, d_im, w_re, w_im, bias).
    pub fn in_param_order(&self) -> [Var; 11] {
        [
            self.a.re, self.a.im, self.b.re, self.b.im, self.c.re, self.c.im, self.d.re,
            self.d.im, self.w.re, self.w.im, self.bias,
        ]
    }
}

/// Leaf handles for a full forward pass.
pub struct ForwardVars {
    pub blocks: Vec<BlockVars>,
    pub output: Var,
}

/// The stacked network plus its shared spectral decomposition.
#[derive(Debug, Clone)]
pub struct MobiusNetwork {
    pub blocks: Vec<MobiusBlockParams>,
    pub decomposition: Arc<SpectralDecomposition>,
    pub topology: SkeletonTopology,
    /// When set, the 2D center of mass is appended to every node's input
    /// features (input width 4 instead of 2).
    pub center_of_mass: bool,
}

/// Channel widths for the standard seven-block configuration: input 2,
/// interior `width`, output 3.
pub fn standard_widths(width: usize) -> Vec<usize> {
    let mut w = vec![2];
    w.extend(std::iter::repeat(width).take(6));
    w.push(3);
    w
}

/// Builds a network with Xavier-initialized weights (variance split evenly
/// between real and imaginary parts) and near-identity Möbius coefficients.
/// Deterministic per seed.
pub fn init_network(topo: &SkeletonTopology, widths: &[usize], seed: u64) -> Result<MobiusNetwork> {
    if widths.len() < 2 {
        return Err(Error::Config("widths needs at least one block".into()));
    }
    let dec = decompose(topo)?;
    let n = dec.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_blocks = widths.len() - 1;
    let mut blocks = Vec::with_capacity(num_blocks);
    for k in 0..num_blocks {
        let (d_in, d_out) = (widths[k], widths[k + 1]);
        let mut eps = || rng.gen_range(-0.01..0.01);
        let mut coeffs = MobiusCoefficients {
            a_re: vec![0.0; n],
            a_im: vec![0.0; n],
            b_re: vec![0.0; n],
            b_im: vec![0.0; n],
            c_re: vec![0.0; n],
            c_im: vec![0.0; n],
            d_re: vec![0.0; n],
            d_im: vec![0.0; n],
        };
        for i in 0..n {
            coeffs.a_re[i] = 1.0 + eps();
            coeffs.a_im[i] = eps();
            coeffs.b_re[i] = eps();
            coeffs.b_im[i] = eps();
            coeffs.c_re[i] = eps();
            coeffs.c_im[i] = eps();
            coeffs.d_re[i] = 1.0 + eps();
            coeffs.d_im[i] = eps();
        }
        // Xavier-uniform limit sqrt(6/(fan_in+fan_out)) for the complex
        // weight; each real part carries half the variance.
        let limit = (3.0 / (d_in + d_out) as f64).sqrt();
        let w_re: Vec<f64> = (0..d_in * d_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let w_im: Vec<f64> = (0..d_in * d_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        blocks.push(MobiusBlockParams {
            coeffs,
            in_channels: d_in,
            out_channels: d_out,
            w_re,
            w_im,
            bias: vec![0.0; d_out],
            relu: k + 1 < num_blocks, // final block: identity activation
        });
    }
    Ok(MobiusNetwork {
        blocks,
        decomposition: dec,
        topology: topo.clone(),
        center_of_mass: false,
    })
}

/// Total count of trainable real scalars.
pub fn count_parameters(net: &MobiusNetwork) -> usize {
    net.blocks.iter().map(|b| b.num_parameters()).sum()
}

impl MobiusNetwork {
    pub fn num_joints(&self) -> usize {
        self.decomposition.num_nodes()
    }

    pub fn input_channels(&self) -> usize {
        self.blocks[0].in_channels
    }

    /// Parameter arrays in canonical order (per block: a_re, a_im, b_re,
    /// b_im, c_re, c_im, d_re, d_im, w_re, w_im, bias).
    pub fn param_arrays(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([
                &b.coeffs.a_re,
                &b.coeffs.a_im,
                &b.coeffs.b_re,
                &b.coeffs.b_im,
                &b.coeffs.c_re,
                &b.coeffs.c_im,
                &b.coeffs.d_re,
                &b.coeffs.d_im,
                &b.w_re,
                &b.w_im,
                &b.bias,
            ]);
        }
        out
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([
                &mut b.coeffs.a_re,
                &mut b.coeffs.a_im,
                &mut b.coeffs.b_re,
                &mut b.coeffs.b_im,
                &mut b.coeffs.c_re,
                &mut b.coeffs.c_im,
                &mut b.coeffs.d_re,
                &mut b.coeffs.d_im,
                &mut b.w_re,
                &mut b.w_im,
                &mut b.bias,
            ]);
        }
        out
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(count_parameters(self));
        for arr in self.param_arrays() {
            flat.extend_from_slice(arr);
        }
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for arr in self.param_arrays_mut() {
            let len = arr.len();
            arr.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    /// Forward pass over a batch of real input signals (each N x d_in),
    /// stacked vertically on one tape. Returns the (B·N) x 3 output and the
    /// parameter leaf handles.
    pub fn forward_batch(&self, tape: &Tape, inputs: &[&RealMatrix]) -> Result<(Var, ForwardVars)> {
        let n = self.num_joints();
        let d_in = self.input_channels();
        let batch = inputs.len();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut stacked = Vec::with_capacity(batch * n * d_in);
        for x in inputs {
            if x.rows != n || x.cols != d_in {
                return Err(Error::Shape(format!(
                    "input {}x{}, expected {}x{}",
                    x.rows, x.cols, n, d_in
                )));
            }
            stacked.extend_from_slice(&x.data);
        }
        let x = tape.constant(batch * n, d_in, stacked);
        self.forward_from(tape, x, batch)
    }

    /// Forward pass from an already-recorded stacked input variable.
    pub fn forward_from(&self, tape: &Tape, x: Var, batch: usize) -> Result<(Var, ForwardVars)> {
        let mut cur = x;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for params in &self.blocks {
            let (out, vars) = block_forward_batched(tape, params, &self.decomposition, cur, batch)?;
            blocks.push(vars);
            cur = out;
        }
        Ok((
            cur,
            ForwardVars {
                blocks,
                output: cur,
            },
        ))
    }

    /// Convenience single-sample inference: N x d_in in, N x 3 out.
    pub fn forward_single(&self, x: &RealMatrix) -> Result<RealMatrix> {
        let tape = Tape::new();
        let (out, _) = self.forward_batch(&tape, &[x])?;
        let values = tape.value(out).to_vec();
        RealMatrix::new(self.num_joints(), 3, values)
    }
}

/// Registers one block's parameters as tape leaves.
fn record_block_leaves(tape: &Tape, params: &MobiusBlockParams) -> BlockVars {
    let n = params.coeffs.len();
    let c = &params.coeffs;
    BlockVars {
        a: tape.complex_leaf(1, n, c.a_re.clone(), c.a_im.clone()),
        b: tape.complex_leaf(1, n, c.b_re.clone(), c.b_im.clone()),
        c: tape.complex_leaf(1, n, c.c_re.clone(), c.c_im.clone()),
        d: tape.complex_leaf(1, n, c.d_re.clone(), c.d_im.clone()),
        w: tape.complex_leaf(
            params.in_channels,
            params.out_channels,
            params.w_re.clone(),
            params.w_im.clone(),
        ),
        bias: tape.leaf(1, params.out_channels, params.bias.clone()),
    }
}

/// Determinant-normalizes the coefficient leaves on the tape. The scales are
/// constants of the current parameter values; because the filter is
/// scale-invariant this leaves both values and gradients of the loss exact.
fn normalize_on_tape(
    tape: &Tape,
    raw: &MobiusCoefficients,
    vars: &BlockVars,
) -> Result<[ComplexVar; 4]> {
    let n = raw.len();
    let scales = raw.norm_scales()?;
    let mut inv_re = Vec::with_capacity(n);
    let mut inv_im = Vec::with_capacity(n);
    for s in scales {
        let inv = s.inv();
        inv_re.push(inv.re);
        inv_im.push(inv.im);
    }
    let inv = tape.complex_constant(1, n, inv_re, inv_im);
    Ok([
        tape.complex_mul_elem(vars.a, inv)?,
        tape.complex_mul_elem(vars.b, inv)?,
        tape.complex_mul_elem(vars.c, inv)?,
        tape.complex_mul_elem(vars.d, inv)?,
    ])
}

/// Builds the complex filter matrix G = U diag(m) Uᵀ = Σ m_i u_i u_iᵀ on the
/// tape from normalized coefficient variables.
fn filter_matrix_on_tape(
    tape: &Tape,
    dec: &SpectralDecomposition,
    norm: &[ComplexVar; 4],
) -> Result<ComplexVar> {
    let n = dec.num_nodes();
    let m = tape.complex_diag_mobius(&dec.eigenvalues, norm[0], norm[1], norm[2], norm[3])?;
    let u = tape.constant(n, n, dec.eigenvectors.data.clone());
    let ut = tape.constant(n, n, dec.eigenvectors.transpose().data);
    let g_re = tape.matmul(u, tape.scale_rows(ut, m.re)?)?;
    let g_im = tape.matmul(u, tape.scale_rows(ut, m.im)?)?;
    ComplexVar::new(g_re, g_im)
}

/// Applies the Möbius spectral filter to a complex signal x (N x d) via the
/// diagonal formulation U (AΛ+B)(CΛ+D)⁻¹ Uᵀ x. Coefficients are
/// determinant-normalized inside.
pub fn mobius_filter_apply(
    tape: &Tape,
    dec: &SpectralDecomposition,
    coeffs: &MobiusCoefficients,
    x: ComplexVar,
) -> Result<ComplexVar> {
    let vars = BlockVars {
        a: tape.complex_leaf(1, coeffs.len(), coeffs.a_re.clone(), coeffs.a_im.clone()),
        b: tape.complex_leaf(1, coeffs.len(), coeffs.b_re.clone(), coeffs.b_im.clone()),
        c: tape.complex_leaf(1, coeffs.len(), coeffs.c_re.clone(), coeffs.c_im.clone()),
        d: tape.complex_leaf(1, coeffs.len(), coeffs.d_re.clone(), coeffs.d_im.clone()),
        w: ComplexVar {
            re: tape.constant(1, 1, vec![1.0]),
            im: tape.constant(1, 1, vec![0.0]),
        },
        bias: tape.constant(1, 1, vec![0.0]),
    };
    mobius_filter_apply_with_vars(tape, dec, coeffs, &vars, x)
}

fn mobius_filter_apply_with_vars(
    tape: &Tape,
    dec: &SpectralDecomposition,
    coeffs: &MobiusCoefficients,
    vars: &BlockVars,
    x: ComplexVar,
) -> Result<ComplexVar> {
    let n = dec.num_nodes();
    if x.re.rows != n {
        return Err(Error::Shape(format!(
            "signal has {} rows, graph has {n} nodes",
            x.re.rows
        )));
    }
    let norm = normalize_on_tape(tape, coeffs, vars)?;
    let g = filter_matrix_on_tape(tape, dec, &norm)?;
    let re = tape.sub(tape.matmul(g.re, x.re)?, tape.matmul(g.im, x.im)?)?;
    let im = tape.add(tape.matmul(g.im, x.re)?, tape.matmul(g.re, x.im)?)?;
    ComplexVar::new(re, im)
}

/// One block over a batch-stacked real input ((B·N) x d_in):
/// Z = σ(2Re{G (X W)} + b). The input is real by construction (each block
/// ends with 2Re), so the complex products need only two real matmuls each.
pub fn block_forward_batched(
    tape: &Tape,
    params: &MobiusBlockParams,
    dec: &SpectralDecomposition,
    x: Var,
    batch: usize,
) -> Result<(Var, BlockVars)> {
    let n = dec.num_nodes();
    if x.rows != batch * n || x.cols != params.in_channels {
        return Err(Error::Shape(format!(
            "block input {}x{}, expected {}x{}",
            x.rows,
            x.cols,
            batch * n,
            params.in_channels
        )));
    }
    let vars = record_block_leaves(tape, params);
    let norm = normalize_on_tape(tape, &params.coeffs, &vars)?;
    let g = filter_matrix_on_tape(tape, dec, &norm)?;
    // Y = X W with real X
    let y_re = tape.matmul(x, vars.w.re)?;
    let y_im = tape.matmul(x, vars.w.im)?;
    // Re{G Y} = G_re Y_re - G_im Y_im, applied per batch block
    let f_re = tape.sub(
        tape.batched_left_mul(g.re, y_re, batch)?,
        tape.batched_left_mul(g.im, y_im, batch)?,
    )?;
    let doubled = tape.scale(f_re, 2.0);
    let biased = tape.add_row_bcast(doubled, vars.bias)?;
    let out = if params.relu { tape.relu(biased) } else { biased };
    Ok((out, vars))
}

/// Single-sample block forward (N x d_in real input).
pub fn block_forward(
    tape: &Tape,
    params: &MobiusBlockParams,
    dec: &SpectralDecomposition,
    x: &RealMatrix,
) -> Result<Var> {
    let xv = tape.constant(x.rows, x.cols, x.data.clone());
    let (out, _) = block_forward_batched(tape, params, dec, xv, 1)?;
    Ok(out)
}

/// Plain (non-tape) evaluation of the filter matrix U diag(m) Uᵀ for
/// inspection and oracles. Uses normalized coefficients.
pub fn filter_matrix_dense(
    dec: &SpectralDecomposition,
    coeffs: &MobiusCoefficients,
) -> Result<crate::linalg::ComplexMatrix> {
    let n = dec.num_nodes();
    let norm = normalize_coefficients(coeffs)?;
    let mut num_re = vec![0.0; n];
    let mut num_im = vec![0.0; n];
    let mut den_re = vec![0.0; n];
    let mut den_im = vec![0.0; n];
    for i in 0..n {
        let lam = dec.eigenvalues[i];
        let (a, b, c, d) = norm.quad(i);
        let nu = a * lam + b;
        let de = c * lam + d;
        num_re[i] = nu.re;
        num_im[i] = nu.im;
        den_re[i] = de.re;
        den_im[i] = de.im;
    }
    let (m_re, m_im) =
        crate::linalg::complex_diag_solve_apply((&num_re, &num_im), (&den_re, &den_im))?;
    // G = Σ m_i u_i u_iᵀ
    let u = &dec.eigenvectors;
    let mut g = crate::linalg::ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for r in 0..n {
            let ur = u.get(r, i);
            for c in 0..n {
                let w = ur * u.get(c, i);
                g.re[r * n + c] += m_re[i] * w;
                g.im[r * n + c] += m_im[i] * w;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SkeletonTopology;

    fn identity_coeffs(n: usize) -> MobiusCoefficients {
        MobiusCoefficients {
            a_re: vec![1.0; n],
            a_im: vec![0.0; n],
            b_re: vec![0.0; n],
            b_im: vec![0.0; n],
            c_re: vec![0.0; n],
            c_im: vec![0.0; n],
            d_re: vec![1.0; n],
            d_im: vec![0.0; n],
        }
    }

    #[test]
    fn normalize_scales_out_determinant() {
        // (2,0,0,2): det 4, sqrt 2 → (1,0,0,1)
        let mut c = identity_coeffs(1);
        c.a_re[0] = 2.0;
        c.d_re[0] = 2.0;
        let n = normalize_coefficients(&c).unwrap();
        assert!((n.a_re[0] - 1.0).abs() < 1e-12);
        assert!((n.d_re[0] - 1.0).abs() < 1e-12);
        assert!((n.determinant(0) - Complex64::new(1.0, 0.0)).norm() < 1e-9);

        // already det 1: unchanged
        let c = identity_coeffs(2);
        let n = normalize_coefficients(&c).unwrap();
        assert_eq!(n, c);
    }

    #[test]
    fn normalize_preserves_filter_values() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(4);
        let n = 3;
        let mut c = identity_coeffs(n);
        for arr in [
            &mut c.a_re, &mut c.a_im, &mut c.b_re, &mut c.b_im, &mut c.c_re, &mut c.c_im,
            &mut c.d_re, &mut c.d_im,
        ] {
            for v in arr.iter_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let norm = normalize_coefficients(&c).unwrap();
        for i in 0..n {
            assert!((norm.determinant(i) - Complex64::new(1.0, 0.0)).norm() < 1e-9);
            let z = Complex64::new(rng.gen_range(0.0..2.0), 0.0);
            let (a, b, cc, d) = c.quad(i);
            let (na, nb, nc, nd) = norm.quad(i);
            let raw = mobius_eval(a, b, cc, d, z);
            let nrm = mobius_eval(na, nb, nc, nd, z);
            assert!((raw - nrm).norm() < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let mut c = identity_coeffs(2);
        // index 1: a=d=1, b=c=1 → det 0
        c.b_re[1] = 1.0;
        c.c_re[1] = 1.0;
        match normalize_coefficients(&c) {
            Err(Error::DegenerateFilter { index: 1, .. }) => {}
            other => panic!("expected degenerate filter at 1, got {other:?}"),
        }
    }

    #[test]
    fn fixed_points_inversion() {
        // f(z) = 1/z: z² = 1 → γ = ±1
        let fp = mobius_fixed_points(
            0,
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        assert!((fp.gamma1 - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((fp.gamma2 - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fixed_points_affine_rejected() {
        match mobius_fixed_points(
            3,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ) {
            Err(Error::AffineMap { index: 3, .. }) => {}
            other => panic!("expected affine-map error, got {other:?}"),
        }
    }

    #[test]
    fn fixed_points_satisfy_residual() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(8);
        for _ in 0..50 {
            let r = |rng: &mut ChaCha8Rng| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (a, b, c, d) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
            if (a * d - b * c).norm() < 1e-3 || c.norm() < 1e-3 {
                continue;
            }
            let fp = mobius_fixed_points(0, a, b, c, d).unwrap();
            for g in [fp.gamma1, fp.gamma2] {
                assert!((mobius_eval(a, b, c, d, g) - g).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn reference_parameter_counts() {
        let topo = SkeletonTopology::default_16_joint();
        let net = init_network(&topo, &standard_widths(64), 0).unwrap();
        assert_eq!(net.blocks.len(), 7);
        assert_eq!(count_parameters(&net), 42_883);
        let net = init_network(&topo, &standard_widths(128), 0).unwrap();
        assert_eq!(count_parameters(&net), 166_787);
    }

    #[test]
    fn single_block_count_formula() {
        // single block 2→3 on a 2-node graph: 2·2·3 + 8·2 + 3 = 31
        let topo =
            SkeletonTopology::new(vec!["a".into(), "b".into()], vec![(0, 1)], 0).unwrap();
        let net = init_network(&topo, &[2, 3], 0).unwrap();
        assert_eq!(count_parameters(&net), 31);
    }

    #[test]
    fn init_deterministic_and_near_identity() {
        let topo = SkeletonTopology::default_16_joint();
        let n1 = init_network(&topo, &standard_widths(64), 9).unwrap();
        let n2 = init_network(&topo, &standard_widths(64), 9).unwrap();
        assert_eq!(n1.flatten_params(), n2.flatten_params());
        for b in &n1.blocks {
            for i in 0..b.coeffs.len() {
                let det = b.coeffs.determinant(i);
                assert!((det.norm() - 1.0).abs() < 0.1);
                assert!(det.norm() > DET_GUARD);
            }
        }
        // initial filter is close to the Laplacian filter
        let g = filter_matrix_dense(&n1.decomposition, &n1.blocks[0].coeffs).unwrap();
        let lap = &n1.decomposition.laplacian;
        let mut max_diff: f64 = 0.0;
        for i in 0..g.re.len() {
            max_diff = max_diff.max((g.re[i] - lap.data[i]).abs()).max(g.im[i].abs());
        }
        assert!(max_diff < 0.1, "initial filter deviates {max_diff}");
    }

    #[test]
    fn network_shapes_and_zero_input() {
        let topo = SkeletonTopology::default_16_joint();
        for width in [64, 128] {
            let net = init_network(&topo, &standard_widths(width), 1).unwrap();
            let x = RealMatrix::zeros(16, 2);
            let y = net.forward_single(&x).unwrap();
            assert_eq!((y.rows, y.cols), (16, 3));
            // zero input, zero biases → zero output
            assert!(y.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn block_zero_input_bias_passthrough() {
        let topo = SkeletonTopology::default_16_joint();
        let dec = decompose(&topo).unwrap();
        let mut params = MobiusBlockParams {
            coeffs: identity_coeffs(16),
            in_channels: 2,
            out_channels: 4,
            w_re: vec![0.1; 8],
            w_im: vec![0.0; 8],
            bias: vec![-1.0, 0.5, 2.0, 0.0],
            relu: true,
        };
        let tape = Tape::new();
        let out = block_forward(&tape, &params, &dec, &RealMatrix::zeros(16, 2)).unwrap();
        let v = tape.value(out);
        for node in 0..16 {
            let row = &v[node * 4..node * 4 + 4];
            assert_eq!(row, &[0.0, 0.5, 2.0, 0.0]); // ReLU(bias) per channel
        }
        // zero bias → zero output
        params.bias = vec![0.0; 4];
        let tape = Tape::new();
        let out = block_forward(&tape, &params, &dec, &RealMatrix::zeros(16, 2)).unwrap();
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }
}
