//! Loss, Adam, plateau LR schedule, normalization, root-centering,
//! test-time bone calibration, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::PoseSample;
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::linalg::RealMatrix;
use crate::mobius::MobiusNetwork;

/// Hyperparameters; defaults follow the reference configuration
/// (Adam at 1e-3, batches of 64, decay 0.5 on validation plateau).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub decay_factor: f64,
    pub plateau_patience: usize,
    /// Relative improvement below which an epoch counts as stale.
    pub plateau_rel_improvement: f64,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Fraction of samples held out for validation (seeded shuffle).
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            decay_factor: 0.5,
            plateau_patience: 5,
            plateau_rel_improvement: 1e-3,
            min_lr: 1e-6,
            max_epochs: 100,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.decay_factor && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay factor {} not in (0, 1)",
                self.decay_factor
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moments, congruent to the network's parameter arrays.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_lens: &[usize]) -> Self {
        Self {
            m: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_network(net: &MobiusNetwork) -> Self {
        let lens: Vec<usize> = net.param_arrays().iter().map(|a| a.len()).collect();
        Self::new(&lens)
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam arrays: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.len() != g.len() {
            return Err(Error::Shape("adam: param/grad length mismatch".into()));
        }
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Learning rate implied by a validation-loss history: halves whenever the
/// best loss has not improved by the relative threshold for
/// `plateau_patience` consecutive epochs, clamped at `min_lr`.
pub fn plateau_scheduler(history: &[f64], config: &TrainConfig) -> f64 {
    let mut lr = config.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for &loss in history {
        if loss < best * (1.0 - config.plateau_rel_improvement) {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr = (lr * config.decay_factor).max(config.min_lr);
                stale = 0;
            }
        }
    }
    lr
}

/// MSE as the sum of squared per-joint errors for one pose pair.
pub fn mse_loss(pred: &RealMatrix, target: &RealMatrix) -> Result<f64> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::Shape(format!(
            "mse {}x{} vs {}x{}",
            pred.rows, pred.cols, target.rows, target.cols
        )));
    }
    Ok(pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// Translates all joints so the root lands exactly at the origin.
pub fn center_on_root(joints3d: &RealMatrix, root_index: usize) -> RealMatrix {
    let mut out = joints3d.clone();
    let root: Vec<f64> = (0..out.cols).map(|c| out.get(root_index, c)).collect();
    for i in 0..out.rows {
        for c in 0..out.cols {
            let v = out.get(i, c) - root[c];
            out.set(i, c, v);
        }
    }
    out
}

/// Input/output normalization captured from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    /// Maps pixel coordinates to roughly [-1, 1]: (p - offset) / scale.
    pub input_offset: [f64; 2],
    pub input_scale: [f64; 2],
    /// Global 3D scale constant (mm); targets are root-centered mm / scale.
    pub output_scale: f64,
    /// Canonical bone length per topology edge (mm), mean over the split.
    pub canonical_bones: Vec<f64>,
}

impl NormalizationStats {
    pub fn from_samples(samples: &[PoseSample], topo: &SkeletonTopology) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("cannot normalize an empty dataset".into()));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for s in samples {
            for j in &s.joints2d {
                for c in 0..2 {
                    min[c] = min[c].min(j[c]);
                    max[c] = max[c].max(j[c]);
                }
            }
        }
        let mut offset = [0.0; 2];
        let mut scale = [1.0; 2];
        for c in 0..2 {
            offset[c] = 0.5 * (min[c] + max[c]);
            scale[c] = (0.5 * (max[c] - min[c])).max(1e-9);
        }
        let mut canonical = vec![0.0; topo.edges.len()];
        for s in samples {
            for (e, &(a, b)) in topo.edges.iter().enumerate() {
                canonical[e] += bone_length(&s.joints3d, a, b);
            }
        }
        for c in canonical.iter_mut() {
            *c /= samples.len() as f64;
        }
        Ok(Self {
            input_offset: offset,
            input_scale: scale,
            output_scale: 1000.0,
            canonical_bones: canonical,
        })
    }

    /// Normalized network input for one sample. With the center-of-mass
    /// option the 2D mean of the normalized joints is appended to every row.
    pub fn network_input(&self, sample: &PoseSample, center_of_mass: bool) -> RealMatrix {
        let n = sample.joints2d.len();
        let cols = if center_of_mass { 4 } else { 2 };
        let mut x = RealMatrix::zeros(n, cols);
        let mut mean = [0.0; 2];
        for (i, j) in sample.joints2d.iter().enumerate() {
            for c in 0..2 {
                let v = (j[c] - self.input_offset[c]) / self.input_scale[c];
                x.set(i, c, v);
                mean[c] += v / n as f64;
            }
        }
        if center_of_mass {
            for i in 0..n {
                x.set(i, 2, mean[0]);
                x.set(i, 3, mean[1]);
            }
        }
        x
    }

    /// Root-centered, scale-normalized 3D target.
    pub fn network_target(&self, sample: &PoseSample, root_index: usize) -> RealMatrix {
        let n = sample.joints3d.len();
        let mut t = RealMatrix::zeros(n, 3);
        for (i, j) in sample.joints3d.iter().enumerate() {
            for c in 0..3 {
                t.set(i, c, j[c]);
            }
        }
        let centered = center_on_root(&t, root_index);
        RealMatrix {
            rows: n,
            cols: 3,
            data: centered.data.iter().map(|v| v / self.output_scale).collect(),
        }
    }

    /// Network output back to root-relative millimeters.
    pub fn denormalize_output(&self, out: &RealMatrix) -> RealMatrix {
        RealMatrix {
            rows: out.rows,
            cols: out.cols,
            data: out.data.iter().map(|v| v * self.output_scale).collect(),
        }
    }
}

fn bone_length(joints3d: &[[f64; 3]], a: usize, b: usize) -> f64 {
    let (pa, pb) = (joints3d[a], joints3d[b]);
    ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt()
}

/// Rescales a root-relative prediction so its total bone length matches the
/// canonical skeleton. Test-time only.
pub fn calibrate_bone_scale(
    pred_mm: &RealMatrix,
    canonical_bones: &[f64],
    topo: &SkeletonTopology,
) -> Result<RealMatrix> {
    let mut pred_total = 0.0;
    for &(a, b) in &topo.edges {
        let mut sq = 0.0;
        for c in 0..3 {
            let d = pred_mm.get(a, c) - pred_mm.get(b, c);
            sq += d * d;
        }
        pred_total += sq.sqrt();
    }
    if pred_total < 1e-9 {
        return Err(Error::DegeneratePose(pred_total));
    }
    let canonical_total: f64 = canonical_bones.iter().sum();
    let s = canonical_total / pred_total;
    Ok(RealMatrix {
        rows: pred_mm.rows,
        cols: pred_mm.cols,
        data: pred_mm.data.iter().map(|v| v * s).collect(),
    })
}

/// One row of the training metrics log.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

impl EpochMetrics {
    /// CSV row with 17-significant-digit floats.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e}",
            self.epoch, self.train_loss, self.val_loss, self.lr
        )
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub stats: NormalizationStats,
}

/// Seeded shuffle split into (train, validation) index sets.
pub fn split_indices(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5711_7da7a);
    idx.shuffle(&mut rng);
    let n_val = ((count as f64) * fraction).floor() as usize;
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Mean training loss over a set of samples without updating parameters.
fn eval_loss(
    net: &MobiusNetwork,
    samples: &[&PoseSample],
    stats: &NormalizationStats,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    // bounded slabs keep tape memory proportional to the slab
    for chunk in samples.chunks(64) {
        let tape = Tape::new();
        let (loss, _) = batch_loss(net, &tape, chunk, stats)?;
        total += tape.value(loss)[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn batch_loss(
    net: &MobiusNetwork,
    tape: &Tape,
    samples: &[&PoseSample],
    stats: &NormalizationStats,
) -> Result<(crate::autodiff::Var, crate::mobius::ForwardVars)> {
    let root = net.topology.root_index;
    let inputs: Vec<RealMatrix> = samples
        .iter()
        .map(|s| stats.network_input(s, net.center_of_mass))
        .collect();
    let refs: Vec<&RealMatrix> = inputs.iter().collect();
    let (out, vars) = net.forward_batch(tape, &refs)?;
    let mut target = Vec::with_capacity(out.rows * 3);
    for s in samples {
        target.extend_from_slice(&stats.network_target(s, root).data);
    }
    let t = tape.constant(out.rows, 3, target);
    let diff = tape.sub(out, t)?;
    let sq = tape.mul_elem(diff, diff)?;
    let sum = tape.sum_all(sq);
    Ok((tape.scale(sum, 1.0 / samples.len() as f64), vars))
}

/// Full training loop: seeded shuffling, mini-batches, Adam, plateau
/// schedule. No data augmentation. Deterministic per seed.
pub fn train(
    net: &mut MobiusNetwork,
    dataset: &[PoseSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let stats = NormalizationStats::from_samples(dataset, &net.topology)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), config.validation_fraction, config.seed);
    let train_set: Vec<&PoseSample> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let val_set: Vec<&PoseSample> = val_idx.iter().map(|&i| &dataset[i]).collect();

    let mut adam = AdamState::for_network(net);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut val_history: Vec<f64> = Vec::new();
    let mut metrics = Vec::with_capacity(config.max_epochs);
    let mut lr = config.learning_rate;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PoseSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let tape = Tape::new();
            let (loss, vars) =
                batch_loss(net, &tape, &batch, &stats).map_err(|e| wrap(batch_no, e))?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(Error::Numerical {
                    batch: batch_no,
                    message: format!("non-finite loss {loss_value}"),
                });
            }
            let grads_table = tape.backward(loss).map_err(|e| wrap(batch_no, e))?;
            // gradients in canonical parameter order
            let mut grads: Vec<Vec<f64>> = Vec::new();
            for bv in &vars.blocks {
                for v in bv.in_param_order() {
                    grads.push(grads_table.wrt(v).to_vec());
                }
            }
            let mut params = net.param_arrays_mut();
            adam_step(&mut params, &grads, &mut adam, lr)?;
            epoch_loss += loss_value * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen.max(1) as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            eval_loss(net, &val_set, &stats)?
        };
        val_history.push(val_loss);
        lr = plateau_scheduler(&val_history, config);
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
    }
    Ok(TrainOutcome { metrics, stats })
}

fn wrap(batch: usize, e: Error) -> Error {
    match e {
        e @ Error::Shape(_) | e @ Error::Config(_) => e,
        other => Error::Numerical {
            batch,
            message: other.to_string(),
        },
    }
}
