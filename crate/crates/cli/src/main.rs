use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mobiusgcn::mobius::{mobius_fixed_points, MobiusNetwork};
use mobiusgcn::train::{calibrate_bone_scale, center_on_root, NormalizationStats, TrainConfig};
use mobiusgcn::{
    count_parameters, evaluate, generate_synthetic, init_network, load_checkpoint, standard_widths,
    read_dataset, save_checkpoint, write_dataset, CameraModel, EvalReport, GeneratorConfig,
    PoseSample, RealMatrix, SkeletonTopology,
};

#[derive(Parser)]
#[command(name = "mobiusgcn", about = "Möbius spectral GCN: 2D-to-3D human pose lifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic skeleton dataset
    GenData(GenDataArgs),
    /// Train a network on a dataset file
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Print spectrum and filter diagnostics for a checkpoint
    Inspect(InspectArgs),
    /// Render poses (and optionally predictions) as SVG
    Render(RenderArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples to generate
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian pixel noise applied to the 2D observations
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Topology file; the built-in 16-joint skeleton when omitted
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Output dataset path (line-delimited JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset path
    #[arg(long)]
    data: PathBuf,
    /// Hidden width of the seven-block network
    #[arg(long, default_value_t = 64, value_parser = clap::builder::PossibleValuesParser::new(["64", "128"]).map(|s| s.parse::<usize>().unwrap()))]
    width: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (checkpoint.bin, metrics.csv, manifest.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Where to write the report CSV; stdout summary only when omitted
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxesChoice {
    Xy,
    Xz,
    Yz,
}

impl AxesChoice {
    fn indices(self) -> (usize, usize) {
        match self {
            AxesChoice::Xy => (0, 1),
            AxesChoice::Xz => (0, 2),
            AxesChoice::Yz => (1, 2),
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    /// Overlay model predictions when given
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Orthographic projection plane
    #[arg(long, value_enum, default_value_t = AxesChoice::Xy)]
    axes: AxesChoice,
}

/// Written next to every command's outputs. Wall-clock fields are excluded
/// from any determinism comparison.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    topology_hash: String,
    artifacts: Vec<String>,
    deterministic_mode: bool,
    wall_clock_ms: u128,
}

fn deterministic_mode() -> bool {
    std::env::var("MOBIUS_DETERMINISTIC").map_or(false, |v| v == "1")
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, json).with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(())
}

fn load_topology(path: &Option<PathBuf>) -> anyhow::Result<SkeletonTopology> {
    match path {
        Some(p) => {
            SkeletonTopology::load(p).with_context(|| format!("loading topology {}", p.display()))
        }
        None => Ok(SkeletonTopology::default_16_joint()),
    }
}

/// Usage/config errors exit 1, runtime/numerical errors exit 2.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mobiusgcn::Error>() {
            return match e {
                mobiusgcn::Error::Config(_)
                | mobiusgcn::Error::Topology(_)
                | mobiusgcn::Error::TopologyMismatch { .. }
                | mobiusgcn::Error::Parse { .. }
                | mobiusgcn::Error::Validation { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Render(args) => cmd_render(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

fn cmd_gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    if args.count == 0 {
        bail!(mobiusgcn::Error::Config("--count must be at least 1".into()));
    }
    let topo = load_topology(&args.topology)?;
    let config = GeneratorConfig {
        noise_px: args.noise_px,
        ..GeneratorConfig::default()
    };
    let samples = generate_synthetic(args.count, &topo, &CameraModel::default(), &config, args.seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_dataset(&samples, &args.out)?;
    let manifest = RunManifest {
        command: "gen-data".into(),
        config: serde_json::json!({
            "count": args.count,
            "noise_px": args.noise_px,
            "topology": args.topology.as_ref().map(|p| p.display().to_string()),
        }),
        seed: Some(args.seed),
        topology_hash: format!("{:016x}", topo.hash()),
        artifacts: vec![args.out.display().to_string()],
        deterministic_mode: deterministic_mode(),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    write_manifest(&manifest_sibling(&args.out), &manifest)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn manifest_sibling(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let topo = SkeletonTopology::default_16_joint();
    let dataset = read_dataset(&args.data, topo.num_joints())
        .with_context(|| format!("reading dataset {}", args.data.display()))?;
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        max_epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut net = init_network(&topo, &standard_widths(args.width), args.seed)?;
    println!(
        "training width-{} network ({} parameters) on {} samples",
        args.width,
        count_parameters(&net),
        dataset.len()
    );
    let outcome = mobiusgcn::train(&mut net, &dataset, &config)?;

    std::fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &net, &outcome.stats)?;
    let metrics_path = args.out.join("metrics.csv");
    let mut csv = String::from("epoch,train_loss,val_loss,lr\n");
    for m in &outcome.metrics {
        csv.push_str(&m.to_csv_row());
        csv.push('\n');
    }
    std::fs::write(&metrics_path, csv)?;

    let manifest = RunManifest {
        command: "train".into(),
        config: serde_json::json!({
            "data": args.data.display().to_string(),
            "width": args.width,
            "lr": args.lr,
            "batch": args.batch,
            "epochs": args.epochs,
        }),
        seed: Some(args.seed),
        topology_hash: format!("{:016x}", topo.hash()),
        artifacts: vec![
            ckpt_path.display().to_string(),
            metrics_path.display().to_string(),
        ],
        deterministic_mode: deterministic_mode(),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    write_manifest(&args.out.join("manifest.json"), &manifest)?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "done: epoch {} train_loss {:.6e} val_loss {:.6e}",
            last.epoch, last.train_loss, last.val_loss
        );
    } else {
        println!("done: no epochs run, checkpoint equals init");
    }
    Ok(())
}

/// Root-relative millimeter predictions with bone-length calibration.
fn predict_mm(
    net: &MobiusNetwork,
    stats: &NormalizationStats,
    sample: &PoseSample,
) -> anyhow::Result<RealMatrix> {
    let x = stats.network_input(sample, net.center_of_mass);
    let out = net.forward_single(&x)?;
    let mm = stats.denormalize_output(&out);
    Ok(calibrate_bone_scale(&mm, &stats.canonical_bones, &net.topology)?)
}

fn target_mm(sample: &PoseSample, root_index: usize) -> RealMatrix {
    let n = sample.joints3d.len();
    let mut t = RealMatrix::zeros(n, 3);
    for (i, j) in sample.joints3d.iter().enumerate() {
        for c in 0..3 {
            t.set(i, c, j[c]);
        }
    }
    center_on_root(&t, root_index)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let topo = SkeletonTopology::default_16_joint();
    let (net, stats) = load_checkpoint(&args.checkpoint, &topo)?;
    let dataset = read_dataset(&args.data, topo.num_joints())?;
    if dataset.is_empty() {
        bail!(mobiusgcn::Error::Config("dataset is empty".into()));
    }
    let mut preds = Vec::with_capacity(dataset.len());
    let mut targets = Vec::with_capacity(dataset.len());
    for sample in &dataset {
        preds.push(predict_mm(&net, &stats, sample)?);
        targets.push(target_mm(sample, topo.root_index));
    }
    let report = evaluate(&preds, &targets, topo.root_index)?;
    println!(
        "samples {}  MPJPE {:.3} mm  PCK@150mm {:.2} %",
        report.sample_count, report.mpjpe_mm, report.pck_percent
    );
    if let Some(report_path) = &args.report {
        if let Some(parent) = report_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let csv = format!(
            "{}\n{}\n",
            EvalReport::csv_header(true, topo.num_joints()),
            report.to_csv_row(true)
        );
        std::fs::write(report_path, csv)?;
        let manifest = RunManifest {
            command: "eval".into(),
            config: serde_json::json!({
                "checkpoint": args.checkpoint.display().to_string(),
                "data": args.data.display().to_string(),
            }),
            seed: None,
            topology_hash: format!("{:016x}", topo.hash()),
            artifacts: vec![report_path.display().to_string()],
            deterministic_mode: deterministic_mode(),
            wall_clock_ms: started.elapsed().as_millis(),
        };
        write_manifest(&manifest_sibling(report_path), &manifest)?;
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> anyhow::Result<()> {
    let topo = SkeletonTopology::default_16_joint();
    let (net, _stats) = load_checkpoint(&args.checkpoint, &topo)?;
    let dec = &net.decomposition;
    println!("topology hash {:016x}", topo.hash());
    println!("blocks {}  parameters {}", net.blocks.len(), count_parameters(&net));
    println!("eigenvalues:");
    for (i, lam) in dec.eigenvalues.iter().enumerate() {
        println!("  lambda[{i:2}] = {lam:+.12e}");
    }
    for (k, block) in net.blocks.iter().enumerate() {
        println!("block {k} ({}x{}):", block.in_channels, block.out_channels);
        for i in 0..block.coeffs.len() {
            let (a, b, c, d) = block.coeffs.quad(i);
            let det = block.coeffs.determinant(i);
            let lam = dec.eigenvalues[i];
            let pole_margin = (c * lam + d).norm();
            print!(
                "  idx {i:2}: det {:.6e}{:+.6e}i  pole-margin {:.6e}",
                det.re, det.im, pole_margin
            );
            if c.norm() > 1e-12 {
                match mobius_fixed_points(i, a, b, c, d) {
                    Ok(fp) => print!(
                        "  fixed points {:+.4e}{:+.4e}i, {:+.4e}{:+.4e}i",
                        fp.gamma1.re, fp.gamma1.im, fp.gamma2.re, fp.gamma2.im
                    ),
                    Err(_) => print!("  fixed points: none (affine)"),
                }
            } else {
                print!("  fixed points: none (affine)");
            }
            println!();
        }
    }
    Ok(())
}

/// One orthographically projected skeleton as SVG line elements.
fn svg_skeleton(
    svg: &mut String,
    pose: &RealMatrix,
    topo: &SkeletonTopology,
    axes: (usize, usize),
    color: &str,
    scale: f64,
    cx: f64,
    cy: f64,
) {
    for &(a, b) in &topo.edges {
        let (x1, y1) = (pose.get(a, axes.0), pose.get(a, axes.1));
        let (x2, y2) = (pose.get(b, axes.0), pose.get(b, axes.1));
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            cx + x1 * scale,
            cy - y1 * scale,
            cx + x2 * scale,
            cy - y2 * scale,
        ));
    }
}

fn cmd_render(args: RenderArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let topo = SkeletonTopology::default_16_joint();
    let dataset = read_dataset(&args.data, topo.num_joints())?;
    if dataset.is_empty() {
        bail!(mobiusgcn::Error::Config("dataset is empty".into()));
    }
    let model = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p, &topo)?),
        None => None,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let axes = args.axes.indices();
    const SIZE: f64 = 600.0;
    const SCALE: f64 = 0.25; // mm to px for a roughly 1m pose extent
    let mut artifacts = Vec::new();
    for (i, sample) in dataset.iter().enumerate() {
        let gt = target_mm(sample, topo.root_index);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
        );
        svg_skeleton(&mut svg, &gt, &topo, axes, "#1f77b4", SCALE, SIZE / 2.0, SIZE / 2.0);
        if let Some((net, stats)) = &model {
            let pred = predict_mm(net, stats, sample)?;
            svg_skeleton(&mut svg, &pred, &topo, axes, "#d62728", SCALE, SIZE / 2.0, SIZE / 2.0);
        }
        svg.push_str("</svg>\n");
        let path = args.out_dir.join(format!("pose_{i:04}.svg"));
        std::fs::write(&path, svg)?;
        artifacts.push(path.display().to_string());
    }
    let manifest = RunManifest {
        command: "render".into(),
        config: serde_json::json!({
            "data": args.data.display().to_string(),
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "axes": match args.axes { AxesChoice::Xy => "xy", AxesChoice::Xz => "xz", AxesChoice::Yz => "yz" },
        }),
        seed: None,
        topology_hash: format!("{:016x}", topo.hash()),
        artifacts,
        deterministic_mode: deterministic_mode(),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    write_manifest(&args.out_dir.join("manifest.json"), &manifest)?;
    println!("rendered {} poses to {}", dataset.len(), args.out_dir.display());
    Ok(())
}
