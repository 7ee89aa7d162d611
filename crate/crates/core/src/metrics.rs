//! Evaluation protocols: root-aligned MPJPE and 3D PCK at 150 mm.

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::train::center_on_root;

pub const PCK_RADIUS_MM: f64 = 150.0;

/// Aggregate evaluation over a set of pose pairs.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pck_percent: f64,
    pub per_joint_mpjpe: Vec<f64>,
    pub sample_count: usize,
}

impl EvalReport {
    pub fn csv_header(per_joint: bool, num_joints: usize) -> String {
        let mut h = String::from("samples,mpjpe_mm,pck150_percent");
        if per_joint {
            for j in 0..num_joints {
                h.push_str(&format!(",mpjpe_j{j}"));
            }
        }
        h
    }

    pub fn to_csv_row(&self, per_joint: bool) -> String {
        let mut row = format!(
            "{},{:.16e},{:.16e}",
            self.sample_count, self.mpjpe_mm, self.pck_percent
        );
        if per_joint {
            for v in &self.per_joint_mpjpe {
                row.push_str(&format!(",{v:.16e}"));
            }
        }
        row
    }
}

fn check_shapes(pred: &RealMatrix, target: &RealMatrix, root_index: usize) -> Result<()> {
    if pred.rows != target.rows || pred.cols != 3 || target.cols != 3 {
        return Err(Error::Shape(format!(
            "poses {}x{} vs {}x{}",
            pred.rows, pred.cols, target.rows, target.cols
        )));
    }
    if root_index >= pred.rows {
        return Err(Error::Shape(format!("root index {root_index} out of range")));
    }
    Ok(())
}

fn joint_errors(pred: &RealMatrix, target: &RealMatrix, root_index: usize) -> Vec<f64> {
    let p = center_on_root(pred, root_index);
    let t = center_on_root(target, root_index);
    (0..p.rows)
        .map(|i| {
            let mut sq = 0.0;
            for c in 0..3 {
                let d = p.get(i, c) - t.get(i, c);
                sq += d * d;
            }
            sq.sqrt()
        })
        .collect()
}

/// Mean per-joint position error in mm after root alignment, one pose pair.
pub fn mpjpe(pred_mm: &RealMatrix, target_mm: &RealMatrix, root_index: usize) -> Result<f64> {
    check_shapes(pred_mm, target_mm, root_index)?;
    let errs = joint_errors(pred_mm, target_mm, root_index);
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Percentage of joints within the 150 mm radius after root alignment;
/// exactly 150 mm counts as incorrect.
pub fn pck_150(pred_mm: &RealMatrix, target_mm: &RealMatrix, root_index: usize) -> Result<f64> {
    check_shapes(pred_mm, target_mm, root_index)?;
    let errs = joint_errors(pred_mm, target_mm, root_index);
    let correct = errs.iter().filter(|&&e| e < PCK_RADIUS_MM).count();
    Ok(100.0 * correct as f64 / errs.len() as f64)
}

/// Batch evaluation: MPJPE and PCK averaged over samples, plus the
/// per-joint MPJPE breakdown.
pub fn evaluate(
    preds_mm: &[RealMatrix],
    targets_mm: &[RealMatrix],
    root_index: usize,
) -> Result<EvalReport> {
    if preds_mm.len() != targets_mm.len() || preds_mm.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds_mm.len(),
            targets_mm.len()
        )));
    }
    let n_joints = preds_mm[0].rows;
    let mut per_joint = vec![0.0; n_joints];
    let mut mpjpe_sum = 0.0;
    let mut pck_sum = 0.0;
    for (p, t) in preds_mm.iter().zip(targets_mm) {
        check_shapes(p, t, root_index)?;
        let errs = joint_errors(p, t, root_index);
        for (acc, e) in per_joint.iter_mut().zip(&errs) {
            *acc += e;
        }
        mpjpe_sum += errs.iter().sum::<f64>() / errs.len() as f64;
        pck_sum += 100.0 * errs.iter().filter(|&&e| e < PCK_RADIUS_MM).count() as f64
            / errs.len() as f64;
    }
    let count = preds_mm.len();
    for v in per_joint.iter_mut() {
        *v /= count as f64;
    }
    Ok(EvalReport {
        mpjpe_mm: mpjpe_sum / count as f64,
        pck_percent: pck_sum / count as f64,
        per_joint_mpjpe: per_joint,
        sample_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, n: usize) -> RealMatrix {
        RealMatrix::new(n, 3, (0..n * 3).map(|_| rng.gen_range(-800.0..800.0)).collect()).unwrap()
    }

    #[test]
    fn mpjpe_zero_for_equal_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng, 16);
        assert_eq!(mpjpe(&p, &p, 0).unwrap(), 0.0);
        assert_eq!(pck_150(&p, &p, 0).unwrap(), 100.0);
    }

    #[test]
    fn mpjpe_translation_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&mut rng, 16);
        let mut q = p.clone();
        for i in 0..16 {
            for c in 0..3 {
                let v = q.get(i, c) + [311.0, -40.0, 77.5][c];
                q.set(i, c, v);
            }
        }
        assert!(mpjpe(&q, &p, 0).unwrap() < 1e-9);
    }

    #[test]
    fn mpjpe_single_offset_joint() {
        // 16 joints, one non-root joint off by (3,4,0): mean = 5/16
        let t = RealMatrix::zeros(16, 3);
        let mut p = RealMatrix::zeros(16, 3);
        p.set(5, 0, 3.0);
        p.set(5, 1, 4.0);
        assert!((mpjpe(&p, &t, 0).unwrap() - 5.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn pck_beyond_radius() {
        // every non-root joint off by 200mm; the root is pinned to zero
        // error by alignment, so only it counts as correct
        let t = RealMatrix::zeros(4, 3);
        let mut p = RealMatrix::zeros(4, 3);
        for i in 1..4 {
            p.set(i, 0, 200.0);
        }
        assert!((pck_150(&p, &t, 0).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn pck_boundary_is_strict() {
        let t = RealMatrix::zeros(2, 3);
        let mut p = RealMatrix::zeros(2, 3);
        p.set(1, 0, 150.0);
        // exactly 150mm is not correct
        assert_eq!(pck_150(&p, &t, 0).unwrap(), 50.0);
        p.set(1, 0, 149.9999);
        assert_eq!(pck_150(&p, &t, 0).unwrap(), 100.0);
    }

    #[test]
    fn evaluate_matches_scalar_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let preds: Vec<RealMatrix> = (0..20).map(|_| random_pose(&mut rng, 8)).collect();
        let targets: Vec<RealMatrix> = (0..20).map(|_| random_pose(&mut rng, 8)).collect();
        let report = evaluate(&preds, &targets, 2).unwrap();
        // brute-force scalar oracle
        let mut mpjpe_sum = 0.0;
        let mut count_in = 0usize;
        for (p, t) in preds.iter().zip(&targets) {
            let pr = |m: &RealMatrix, i: usize, c: usize| m.get(i, c) - m.get(2, c);
            let mut pose_sum = 0.0;
            for i in 0..8 {
                let mut sq = 0.0;
                for c in 0..3 {
                    let d = pr(p, i, c) - pr(t, i, c);
                    sq += d * d;
                }
                let e = sq.sqrt();
                pose_sum += e;
                if e < 150.0 {
                    count_in += 1;
                }
            }
            mpjpe_sum += pose_sum / 8.0;
        }
        assert!((report.mpjpe_mm - mpjpe_sum / 20.0).abs() < 1e-12);
        assert!((report.pck_percent - 100.0 * count_in as f64 / 160.0).abs() < 1e-12);
        // MPJPE equals the mean of the per-joint breakdown
        let mean_pj: f64 =
            report.per_joint_mpjpe.iter().sum::<f64>() / report.per_joint_mpjpe.len() as f64;
        assert!((report.mpjpe_mm - mean_pj).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = RealMatrix::zeros(4, 3);
        let b = RealMatrix::zeros(5, 3);
        assert!(matches!(mpjpe(&a, &b, 0), Err(Error::Shape(_))));
        assert!(matches!(pck_150(&a, &b, 0), Err(Error::Shape(_))));
    }
}
