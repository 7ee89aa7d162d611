//! Synthetic articulated-pose generation with pinhole camera projection,
//! and the line-delimited pose-sample file format.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;

/// One training/evaluation sample: 2D pixels in, 3D camera-space mm out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub joints2d: Vec<[f64; 2]>,
    pub joints3d: Vec<[f64; 3]>,
    #[serde(default)]
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

/// Pinhole camera; synthetic poses are generated directly in camera space.
#[derive(Debug, Clone)]
pub struct CameraModel {
    /// Focal length, pixels.
    pub focal: f64,
    /// Principal point, pixels.
    pub principal: [f64; 2],
    /// Root placement depth range, mm.
    pub depth_range: (f64, f64),
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal: 1100.0,
            principal: [500.0, 500.0],
            depth_range: (2500.0, 5500.0),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.focal <= 0.0 {
            return Err(Error::Config("focal length must be positive".into()));
        }
        if !(0.0 < self.depth_range.0 && self.depth_range.0 < self.depth_range.1) {
            return Err(Error::Config("depth range must be positive and ordered".into()));
        }
        Ok(())
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.focal * p[0] / p[2] + self.principal[0],
            self.focal * p[1] / p[2] + self.principal[1],
        ]
    }
}

/// Joint-angle perturbation ranges around the base pose, degrees.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub limb_angle_deg: f64,
    pub spine_angle_deg: f64,
    /// Optional Gaussian pixel noise on the 2D inputs (detector error).
    pub noise_px: f64,
    /// Root xy placement half-range, mm.
    pub root_spread: f64,
    /// Poses with any joint depth at or below this are resampled.
    pub min_depth: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            limb_angle_deg: 45.0,
            spine_angle_deg: 20.0,
            noise_px: 0.0,
            root_spread: 300.0,
            min_depth: 500.0,
        }
    }
}

/// Base skeleton: per-joint parent and offset-from-parent (mm), rooted at
/// the topology's root. Bone directions and lengths are deterministic per
/// topology so that every dataset for a topology shares canonical bones.
struct BaseSkeleton {
    /// BFS order with the root first.
    order: Vec<usize>,
    parent: Vec<Option<usize>>,
    offset: Vec<[f64; 3]>,
    is_spine: Vec<bool>,
}

fn base_skeleton(topo: &SkeletonTopology) -> BaseSkeleton {
    let n = topo.num_joints();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &topo.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for nb in adj.iter_mut() {
        nb.sort_unstable();
    }
    let mut parent = vec![None; n];
    let mut order = vec![topo.root_index];
    let mut seen = vec![false; n];
    seen[topo.root_index] = true;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                order.push(w);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(topo.hash() ^ 0xba5e_b0d1);
    let mut offset = vec![[0.0; 3]; n];
    for &j in order.iter().skip(1) {
        let len = rng.gen_range(150.0..450.0);
        // uniform direction via rejection on the unit ball
        let dir = loop {
            let v = [
                rng.gen_range(-1.0f64..1.0),
                rng.gen_range(-1.0f64..1.0),
                rng.gen_range(-1.0f64..1.0),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 0.1 && norm <= 1.0 {
                break [v[0] / norm, v[1] / norm, v[2] / norm];
            }
        };
        offset[j] = [dir[0] * len, dir[1] * len, dir[2] * len];
    }
    let is_spine = topo
        .joint_names
        .iter()
        .map(|name| {
            let n = name.to_ascii_lowercase();
            n.contains("spine") || n.contains("thorax") || n.contains("head")
        })
        .collect();
    BaseSkeleton {
        order,
        parent,
        offset,
        is_spine,
    }
}

fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat_apply3(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn random_unit_axis(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 0.1 && norm <= 1.0 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Generates `count` synthetic poses. Deterministic per seed; each sample
/// uses a seed-derived substream so generation order is immaterial.
pub fn generate_synthetic(
    count: usize,
    topo: &SkeletonTopology,
    camera: &CameraModel,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<Vec<PoseSample>> {
    if count < 1 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    camera.validate()?;
    let base = base_skeleton(topo);
    let n = topo.num_joints();
    let mut samples = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, idx as u64));
        let joints3d = loop {
            let pose = sample_pose(&base, topo, camera, config, n, &mut rng);
            if pose.iter().all(|p| p[2] > config.min_depth) {
                break pose;
            }
        };
        let mut joints2d: Vec<[f64; 2]> = joints3d.iter().map(|&p| camera.project(p)).collect();
        if config.noise_px > 0.0 {
            let normal = Normal::new(0.0, config.noise_px)
                .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
            for j in joints2d.iter_mut() {
                j[0] += normal.sample(&mut rng);
                j[1] += normal.sample(&mut rng);
            }
        }
        samples.push(PoseSample {
            joints2d,
            joints3d,
            meta: SampleMeta {
                subject: Some("synthetic".into()),
                action: Some("random".into()),
                frame: Some(idx.to_string()),
            },
        });
    }
    Ok(samples)
}

fn sample_pose(
    base: &BaseSkeleton,
    topo: &SkeletonTopology,
    camera: &CameraModel,
    config: &GeneratorConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let root = [
        rng.gen_range(-config.root_spread..config.root_spread),
        rng.gen_range(-config.root_spread..config.root_spread),
        rng.gen_range(camera.depth_range.0..camera.depth_range.1),
    ];
    let mut pos = vec![[0.0; 3]; n];
    let mut rot = vec![[[0.0; 3]; 3]; n];
    pos[topo.root_index] = root;
    rot[topo.root_index] = rotation_matrix(random_unit_axis(rng), rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
    for &j in base.order.iter().skip(1) {
        let p = base.parent[j].unwrap();
        let range = if base.is_spine[j] {
            config.spine_angle_deg
        } else {
            config.limb_angle_deg
        }
        .to_radians();
        let local = rotation_matrix(random_unit_axis(rng), rng.gen_range(-range..range));
        rot[j] = mat_mul3(&rot[p], &local);
        let d = mat_apply3(&rot[j], base.offset[j]);
        pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
    }
    pos
}

fn splitmix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9e3779b97f4a7c15)).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Writes samples as line-delimited JSON records.
pub fn write_dataset(samples: &[PoseSample], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s)
            .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a line-delimited dataset, validating joint counts and finiteness.
/// An empty file yields an empty dataset.
pub fn read_dataset(path: &Path, expected_joints: usize) -> Result<Vec<PoseSample>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let n = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: PoseSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n,
            message: e.to_string(),
        })?;
        if sample.joints2d.len() != expected_joints || sample.joints3d.len() != expected_joints {
            return Err(Error::Validation {
                line: n,
                message: format!(
                    "sample has {}/{} joints, topology has {expected_joints}",
                    sample.joints2d.len(),
                    sample.joints3d.len()
                ),
            });
        }
        let finite = sample
            .joints2d
            .iter()
            .flatten()
            .chain(sample.joints3d.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parse {
                line: n,
                message: "non-finite joint coordinate".into(),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo16() -> SkeletonTopology {
        SkeletonTopology::default_16_joint()
    }

    #[test]
    fn generator_deterministic() {
        let topo = topo16();
        let cam = CameraModel::default();
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(10, &topo, &cam, &cfg, 7).unwrap();
        let b = generate_synthetic(10, &topo, &cam, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(10, &topo, &cam, &cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reprojection_consistency() {
        let topo = topo16();
        let cam = CameraModel::default();
        let cfg = GeneratorConfig::default();
        for s in generate_synthetic(25, &topo, &cam, &cfg, 3).unwrap() {
            for (j3, j2) in s.joints3d.iter().zip(&s.joints2d) {
                let p = cam.project(*j3);
                assert!((p[0] - j2[0]).abs() < 1e-9);
                assert!((p[1] - j2[1]).abs() < 1e-9);
                assert!(j3[2] > 0.0);
            }
        }
    }

    #[test]
    fn bone_lengths_are_rigid() {
        let topo = topo16();
        let cam = CameraModel::default();
        let cfg = GeneratorConfig::default();
        let samples = generate_synthetic(10, &topo, &cam, &cfg, 5).unwrap();
        let lengths = |s: &PoseSample| -> Vec<f64> {
            topo.edges
                .iter()
                .map(|&(a, b)| {
                    let (p, q) = (s.joints3d[a], s.joints3d[b]);
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .collect()
        };
        let reference = lengths(&samples[0]);
        for s in &samples[1..] {
            for (a, b) in lengths(s).iter().zip(&reference) {
                assert!((a - b).abs() < 1e-9, "bone length drift {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_count_rejected() {
        let topo = topo16();
        assert!(matches!(
            generate_synthetic(0, &topo, &CameraModel::default(), &GeneratorConfig::default(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dataset_roundtrip_exact() {
        let topo = topo16();
        let samples = generate_synthetic(
            100,
            &topo,
            &CameraModel::default(),
            &GeneratorConfig::default(),
            11,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_dataset(&samples, &path).unwrap();
        let back = read_dataset(&path, 16).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn joint_count_mismatch_names_line() {
        let topo = topo16();
        let mut samples = generate_synthetic(
            3,
            &topo,
            &CameraModel::default(),
            &GeneratorConfig::default(),
            1,
        )
        .unwrap();
        samples[1].joints2d.pop();
        samples[1].joints3d.pop();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        write_dataset(&samples, &path).unwrap();
        match read_dataset(&path, 16) {
            Err(Error::Validation { line: 2, .. }) => {}
            other => panic!("expected validation error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_dataset(&path, 16).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"joints2d\": [[0,0]], not json\n").unwrap();
        match read_dataset(&path, 1) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error at line 1, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.jsonl");
        // JSON has no NaN literal; null fails to parse as f64 already
        std::fs::write(
            &path,
            "{\"joints2d\": [[1e999,0]], \"joints3d\": [[0,0,1]]}\n",
        )
        .unwrap();
        assert!(matches!(read_dataset(&path, 1), Err(Error::Parse { .. })));
    }
}
