use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use efficientfcn::backbone::{describe_model, describe_resnet101, ModelKind};
use efficientfcn::cost::{count, render_report, sweep_codewords, CountingConvention};
use efficientfcn::gradcheck::GradcheckOptions;
use efficientfcn::harness::{
    self, evaluate_multiscale, export_weightmaps, generate, gradcheck_suite, imageio, load_weights, multiscale_infer,
    save_weights, train_toy, RunConfig, EVAL_SCALES,
};
use efficientfcn::hgd::HgdConfig;
use efficientfcn::model::EfficientFcn;
use efficientfcn::ops;

#[derive(Parser)]
#[command(name = "efcn", version, about = "Holistically-guided decoder toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the toy model on synthetic shapes.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the synthetic set.
    Eval(EvalArgs),
    /// Segment one image.
    Infer(InferArgs),
    /// Count MACs and parameters of a model at a given input size.
    Flops(FlopsArgs),
    /// Total cost as a function of the codeword count.
    SweepCodewords(SweepArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Write the normalized weighting maps for one image.
    ExportWeightmaps(ExportArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    /// Checkpoint path.
    #[arg(long, default_value = "efcn.weights")]
    out: PathBuf,
    /// JSON-lines metric log; stdout when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleArgs {
    /// Comma-separated inference scales.
    #[arg(long, value_delimiter = ',', default_values_t = EVAL_SCALES.to_vec())]
    scales: Vec<f64>,
    /// Also average horizontally mirrored passes.
    #[arg(long)]
    flip: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    scales: ScaleArgs,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Output label image (class index per pixel).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scales: ScaleArgs,
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(h)?, p(w)?))
}

#[derive(Args)]
struct ConventionArgs {
    /// FLOPs reported per multiply-accumulate.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=2))]
    per_mac: u64,
    /// Count batch norm, ReLU, softmax and additions.
    #[arg(long)]
    include_bn: bool,
    /// Count pooling and bilinear resizing.
    #[arg(long)]
    include_pool: bool,
    /// Leave bias vectors out of the parameter count.
    #[arg(long)]
    no_bias: bool,
}

impl ConventionArgs {
    fn convention(&self) -> CountingConvention {
        CountingConvention {
            flops_per_mac: self.per_mac,
            include_bn_relu: self.include_bn,
            include_pool_resize: self.include_pool,
            include_bias: !self.no_bias,
        }
    }
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long, default_value = "512x512", value_parser = parse_hw)]
    input: (usize, usize),
    #[arg(long, default_value_t = 256)]
    codewords: usize,
    #[arg(long, default_value_t = 60)]
    classes: usize,
    #[command(flatten)]
    convention: ConventionArgs,
    /// Print the per-layer table.
    #[arg(long)]
    per_layer: bool,
    /// Emit the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the layer graph as JSON.
    #[arg(long)]
    graph_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![32, 64, 128, 256, 512, 1024])]
    ns: Vec<usize>,
    #[arg(long, default_value = "512x512", value_parser = parse_hw)]
    input: (usize, usize),
    #[arg(long, default_value_t = 60)]
    classes: usize,
    #[command(flatten)]
    convention: ConventionArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Random shapes per op.
    #[arg(long, default_value_t = 20)]
    shapes: usize,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn load_model(cfg: &RunConfig, weights: &PathBuf) -> Result<EfficientFcn<f32>> {
    let mut model = EfficientFcn::new(cfg.model.clone(), cfg.train.seed)?;
    let tensors = load_weights(weights).with_context(|| format!("reading {}", weights.display()))?;
    harness::weights::load_into_store(&mut model.store, &tensors)?;
    Ok(model)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.max_iters {
        cfg.train.max_iters = n;
    }
    if let Some(lr) = a.base_lr {
        cfg.train.base_lr = lr;
    }
    cfg.validate()?;
    let data = generate(&cfg.data)?;
    let mut sink: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let start = Instant::now();
    let out = train_toy(&cfg, &data, Some(&mut *sink))?;
    sink.flush()?;
    save_weights(&harness::weights::store_to_named(&out.model.store), &a.out)?;
    eprintln!(
        "trained {} iters in {:.1}s: pixAcc {:.4}, mIoU {:.4}; weights written to {}",
        cfg.train.max_iters,
        start.elapsed().as_secs_f64(),
        out.final_metrics.pix_acc,
        out.final_metrics.mean_iou,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let model = load_model(&cfg, &a.weights)?;
    let data = generate(&cfg.data)?;
    let m = evaluate_multiscale(&model, &data, cfg.model.hgd.n_classes, &a.scales.scales, a.scales.flip)?;
    if m.all_ignored {
        eprintln!("warning: every pixel is ignored; metrics are zero");
    }
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let model = load_model(&cfg, &a.weights)?;
    let image = imageio::read_image(&a.image)?;
    let probs = multiscale_infer(&model, &image, &a.scales.scales, a.scales.flip)?;
    let s = probs.shape();
    let mask: Vec<u8> = ops::argmax_channels(&probs).into_iter().map(|c| c as u8).collect();
    imageio::write_gray(&a.out, s.w, s.h, mask)?;
    eprintln!("wrote {}x{} mask to {}", s.h, s.w, a.out.display());
    Ok(())
}

fn flops(a: FlopsArgs) -> Result<()> {
    let conv = a.convention.convention();
    let graph = describe_model(a.model, a.input, a.codewords, a.classes)?;
    let report = count(&graph, &conv)?;
    if let Some(p) = &a.graph_out {
        std::fs::write(p, graph.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else if a.per_layer {
        println!("{}", render_report(&report, &graph));
    } else {
        println!(
            "{} @ {}x{}: {:.2} GFLOPs, {:.2} M params",
            a.model.label(),
            a.input.0,
            a.input.1,
            report.gflops(),
            report.mparams()
        );
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let conv = a.convention.convention();
    let base = HgdConfig {
        n_classes: a.classes,
        ..HgdConfig::default()
    };
    let enc = describe_resnet101(a.input, false)?;
    let rows = sweep_codewords(&a.ns, a.input, &base, &enc, &conv)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("{:>6}  {:>10}  {:>8}", "n", "GFLOPs", "delta");
    let mut prev: Option<f64> = None;
    for r in &rows {
        let delta = prev.map(|p| format!("{:.2}", r.gflops - p)).unwrap_or_default();
        println!("{:>6}  {:>10.2}  {:>8}", r.n, r.gflops, delta);
        prev = Some(r.gflops);
    }
    Ok(())
}

fn grad(a: GradcheckArgs) -> Result<()> {
    let opts = GradcheckOptions {
        eps: a.eps,
        tol: a.tol,
        seed: a.seed,
        ..GradcheckOptions::default()
    };
    let rows = gradcheck_suite(a.shapes, opts)?;
    let mut failed = 0;
    for r in &rows {
        println!(
            "{:<20} {:>3} shapes  max rel err {:.3e}  {}",
            r.op,
            r.shapes,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        bail!("{failed} op(s) exceeded tolerance {}", a.tol);
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let model = load_model(&cfg, &a.weights)?;
    let image = imageio::read_image(&a.image)?;
    let idx = export_weightmaps(&model, &image, &a.out_dir)?;
    eprintln!("wrote {} weighting maps to {}", idx.len(), a.out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Infer(a) => infer(a),
        Cmd::Flops(a) => flops(a),
        Cmd::SweepCodewords(a) => sweep(a),
        Cmd::Gradcheck(a) => grad(a),
        Cmd::ExportWeightmaps(a) => export(a),
    }
}
