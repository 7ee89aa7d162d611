//! Pins the forward pass of a small fixture checkpoint against committed
//! golden outputs, so refactors of the linear algebra or tape cannot drift
//! the numerics silently.
//!
//! Regenerate both fixture files by running this test with
//! `GOLDEN_REGEN=1` in the environment.

use std::path::PathBuf;

use mobiusgcn::checkpoint::{load_checkpoint, save_checkpoint};
use mobiusgcn::linalg::RealMatrix;
use mobiusgcn::mobius::init_network;
use mobiusgcn::train::NormalizationStats;
use mobiusgcn::SkeletonTopology;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_input(n: usize) -> RealMatrix {
    // fixed, irrational-ish input pattern (no RNG: the fixture must stay
    // byte-identical across dependency bumps)
    let data: Vec<f64> = (0..n * 2)
        .map(|i| ((i as f64) * 0.73).sin() * 0.8)
        .collect();
    RealMatrix::new(n, 2, data).unwrap()
}

#[test]
fn forward_pass_matches_golden_file() {
    let topo = SkeletonTopology::default_16_joint();
    let ckpt_path = fixture_dir().join("golden.ckpt");
    let golden_path = fixture_dir().join("golden_output.json");

    if std::env::var("GOLDEN_REGEN").is_ok() {
        std::fs::create_dir_all(fixture_dir()).unwrap();
        let mut net = init_network(&topo, &[2, 8, 8, 3], 2024).unwrap();
        let flat = net.flatten_params();
        let nudged: Vec<f64> = flat
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.03 * ((i as f64) * 1.37).cos())
            .collect();
        net.set_flat_params(&nudged);
        let stats = NormalizationStats {
            input_offset: [500.0, 500.0],
            input_scale: [300.0, 300.0],
            output_scale: 1000.0,
            canonical_bones: (0..topo.edges.len()).map(|i| 180.0 + 10.0 * i as f64).collect(),
        };
        save_checkpoint(&ckpt_path, &net, &stats).unwrap();
        let out = net.forward_single(&fixture_input(topo.num_joints())).unwrap();
        std::fs::write(&golden_path, serde_json::to_string_pretty(&out.data).unwrap()).unwrap();
    }

    let (net, _stats) = load_checkpoint(&ckpt_path, &topo).unwrap();
    let out = net.forward_single(&fixture_input(topo.num_joints())).unwrap();
    let golden: Vec<f64> =
        serde_json::from_str(&std::fs::read_to_string(&golden_path).unwrap()).unwrap();
    assert_eq!(out.data.len(), golden.len());
    for (i, (&g, &o)) in golden.iter().zip(&out.data).enumerate() {
        assert!(
            (g - o).abs() <= 1e-12 * g.abs().max(1.0),
            "output {i} drifted: golden {g} vs {o}"
        );
    }
}
