//! Command implementations behind the `cfkit` binary.
//!
//! Every subcommand writes its human-readable output to the given writer and
//! returns whether it succeeded; files named by `--output` style flags are
//! written directly. [`main_with`] maps the outcome to a process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, bench_latency, count_params, emit_report, run_ablation, AblationResult};
use crate::error::{Error, Result};
use crate::gme::{build_gme_stack, load_image, GmeOptions};
use crate::model::weights::{load_params, save_tensor};
use crate::model::{full_forward, logits_to_mask, Model, ModelConfig};
use crate::verify::{evaluation_point, gradcheck, oracle_sweep, run_invariant_suite, GradCheckCase, OpId, OracleCase};

#[derive(Debug, Parser)]
#[command(name = "cfkit", version, about = "ContextFormer reference kit")]
pub struct Cli {
    /// Seed for weight initialization and random inputs.
    #[arg(long, global = true, env = "CFKIT_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print every node with its kind, output shape and parameter count.
    Inspect(InspectArgs),
    /// Count parameters and MACs and time the forward pass.
    Profile(ProfileArgs),
    /// Segment an image and write a paletted mask.
    Infer(InferArgs),
    /// Compare analytic parameter gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the invariant suites.
    Verify(VerifyArgs),
    /// Parameters and GFLOPs of every row of the component grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Config JSON file or preset name (seg, seg-448, cls, micro).
    pub config: PathBuf,

    /// Input size as `S` or `HxW`, replacing the config's.
    #[arg(long)]
    pub resolution: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TextFormat {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    pub format: TextFormat,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Report format: json or csv.
    #[arg(long, default_value = "json")]
    pub format: String,

    /// Report path; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    #[arg(long, default_value_t = analysis::DEFAULT_WARMUP)]
    pub warmup: usize,

    #[arg(long, default_value_t = analysis::DEFAULT_ITERS)]
    pub iters: usize,

    /// Skip the latency benchmark.
    #[arg(long)]
    pub no_latency: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub config: PathBuf,

    /// PNG or binary PPM image. Its size sets the model resolution.
    #[arg(long)]
    pub image: PathBuf,

    /// CFW1 weight file; random initialization from the seed when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    /// Mask path (binary PPM).
    #[arg(long, short)]
    pub output: PathBuf,

    /// Also dump the raw logits as a one-entry CFW1 file.
    #[arg(long)]
    pub logits: Option<PathBuf>,

    /// Feed RGB only, without the gradient and edge planes.
    #[arg(long)]
    pub no_gme: bool,

    /// Fixed edge threshold on the [0, 1] gradient magnitude instead of Otsu.
    #[arg(long)]
    pub edge_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(default_value = "micro")]
    pub config: PathBuf,

    /// Only check parameters whose name contains one of these.
    #[arg(long)]
    pub filter: Vec<String>,

    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,

    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,

    /// Sampled coordinates per parameter tensor.
    #[arg(long, default_value_t = 32)]
    pub max_coords: usize,

    /// Full JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// tensor, gme, blocks, analysis or all.
    #[arg(long, default_value = "all")]
    pub suite: String,

    /// Also sweep every operator against its naive reference with this many trials.
    #[arg(long)]
    pub oracle_trials: Option<usize>,

    /// Full JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    pub format: TextFormat,
}

/// Parses `S` or `HxW`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("resolution {s:?}: expected S or HxW"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((num(h)?, num(w)?)),
        None => {
            let v = num(s)?;
            Ok((v, v))
        }
    }
}

fn load_config(args: &ModelArgs) -> Result<ModelConfig> {
    let cfg = ModelConfig::load(&args.config)?;
    match &args.resolution {
        Some(r) => {
            let (h, w) = parse_resolution(r)?;
            cfg.with_resolution(h, w)
        }
        None => Ok(cfg),
    }
}

fn config_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::from)
}

/// Runs one parsed invocation. `Ok(false)` means the command ran but its
/// checks failed. `--threads` reaches the latency benchmark here; the
/// binary also sizes the global pool with it.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Inspect(a) => inspect(a, cli.seed, out),
        Command::Profile(a) => profile(a, cli.seed, cli.threads, out),
        Command::Infer(a) => infer(a, cli.seed, out),
        Command::Gradcheck(a) => grad(a, cli.seed, out),
        Command::Verify(a) => verify(a, cli.seed, out),
        Command::Ablate(a) => ablate(a, cli.seed, out),
    }
}

fn inspect(a: &InspectArgs, seed: u64, out: &mut dyn Write) -> Result<bool> {
    let cfg = load_config(&a.model)?;
    let m = Model::build(&cfg, seed)?;
    let report = count_params(&m.graph, &m.params)?;
    match a.format {
        TextFormat::Json => write!(out, "{}", emit_report(&report, "json")?)?,
        TextFormat::Csv => write!(out, "{}", emit_report(&report, "csv")?)?,
        TextFormat::Text => {
            for (node, cost) in m.graph.nodes().iter().zip(&report.nodes) {
                let shape = format!("{:?}", node.shape);
                writeln!(
                    out,
                    "{:<44} {:<14} {:<20} {:>10}",
                    node.name, cost.kind, shape, cost.params
                )?;
                for p in &node.params {
                    let dims = m.params.get(p).map(|e| e.dims.clone()).unwrap_or_default();
                    writeln!(out, "    {p} {dims:?}")?;
                }
            }
            writeln!(
                out,
                "total: {} nodes, {} params, {} buffers",
                report.nodes.len(),
                report.totals.costs.params,
                report.totals.buffers
            )?;
        }
    }
    Ok(true)
}

fn profile(a: &ProfileArgs, seed: u64, threads: usize, out: &mut dyn Write) -> Result<bool> {
    a.format.parse::<analysis::ReportFormat>()?;
    let cfg = load_config(&a.model)?;
    let m = Model::build(&cfg, seed)?;
    let mut report = analysis::profile(&config_name(&a.model.config), &m.graph, &m.params)?;
    if !a.no_latency {
        let shape = m.graph.input_shape();
        let run = bench_latency(&m.graph, &m.params, shape, a.warmup, a.iters, threads, seed)?;
        report.latency = Some(run.record);
    }
    let text = emit_report(&report, &a.format)?;
    match &a.output {
        Some(path) => {
            write_file(path, text.as_bytes())?;
            let t = &report.totals;
            writeln!(
                out,
                "params {} | GMACs {:.4} | wrote {}",
                t.costs.params,
                t.gflops,
                path.display()
            )?;
            if let Some(l) = &report.latency {
                writeln!(
                    out,
                    "latency median {:.3} ms, p90 {:.3} ms over {} runs",
                    l.median_ms, l.p90_ms, l.measure_iters
                )?;
            }
        }
        None => write!(out, "{text}")?,
    }
    Ok(true)
}

fn infer(a: &InferArgs, seed: u64, out: &mut dyn Write) -> Result<bool> {
    let mut cfg = ModelConfig::load(&a.config)?;
    let img = load_image(&a.image)?;
    cfg = cfg.with_resolution(img.height(), img.width())?;
    let mut model = Model::build(&cfg, seed)?;
    if let Some(w) = &a.weights {
        model.params = load_params(&model.params, w)?;
    }
    let channels = if a.no_gme { 3 } else { cfg.input_channels };
    let opts = GmeOptions {
        edge_threshold: a.edge_threshold.or(cfg.edge_threshold),
    };
    let stack = build_gme_stack(&img, channels, &opts)?;
    let logits = full_forward(&model, &stack, cfg.head)?;
    let mask = logits_to_mask(&logits, img.height(), img.width())?;
    mask.to_image().save_ppm(&a.output)?;
    if let Some(path) = &a.logits {
        save_tensor("logits", &logits, path)?;
    }
    let mut counts = vec![0usize; cfg.num_classes];
    for &k in &mask.classes {
        counts[k as usize] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    writeln!(
        out,
        "{}x{} mask, {present} of {} classes present, wrote {}",
        mask.width,
        mask.height,
        cfg.num_classes,
        a.output.display()
    )?;
    Ok(true)
}

fn grad(a: &GradcheckArgs, seed: u64, out: &mut dyn Write) -> Result<bool> {
    let cfg = ModelConfig::load(&a.config)?;
    let m = Model::build(&cfg, seed)?;
    let (params, input) = evaluation_point(&m.graph, &m.params.cast(), seed)?;
    let mut case = GradCheckCase::new(&m.graph, &params, &input);
    case.filter = a.filter.clone();
    case.h = a.step;
    case.tolerance = a.tolerance;
    case.max_coords = a.max_coords;
    case.seed = seed;
    let r = gradcheck(&case)?;
    for c in &r.checked {
        writeln!(
            out,
            "{:<48} {:>4}/{:<7} max rel err {:.2e}",
            c.name, c.sampled, c.len, c.max_rel_err
        )?;
    }
    if let Some(w) = &r.worst {
        writeln!(
            out,
            "worst: {}[{}] analytic {:.6e} numeric {:.6e} rel err {:.2e}",
            w.name, w.index, w.analytic, w.numeric, w.rel_err
        )?;
    }
    writeln!(
        out,
        "{}: {} coordinates in {} tensors, tolerance {:.0e}",
        if r.passed { "PASS" } else { "FAIL" },
        r.coordinates(),
        r.checked.len(),
        r.tolerance
    )?;
    if let Some(path) = &a.report {
        write_file(path, serde_json::to_string_pretty(&r)?.as_bytes())?;
    }
    Ok(r.passed)
}

#[derive(Serialize)]
struct VerifyReport {
    suite: crate::verify::SuiteReport,
    oracle: Option<crate::verify::OracleReport>,
}

fn verify(a: &VerifyArgs, seed: u64, out: &mut dyn Write) -> Result<bool> {
    let suite = run_invariant_suite(&a.suite, seed)?;
    for c in &suite.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        writeln!(out, "{mark} {:<9} {}{}", c.suite, c.name, detail(&c.detail))?;
    }
    let oracle = match a.oracle_trials {
        Some(trials) => {
            let cases: Vec<OracleCase> = OpId::ALL
                .iter()
                .map(|&op| OracleCase {
                    trials,
                    ..OracleCase::new(op, seed)
                })
                .collect();
            let r = oracle_sweep(&cases)?;
            for o in &r.ops {
                let mark = if o.passed { "ok  " } else { "FAIL" };
                writeln!(
                    out,
                    "{mark} oracle    {:?}: worst diff {:.2e} (seed {}, shape {:?})",
                    o.op, o.worst_diff, o.worst_seed, o.worst_shape
                )?;
            }
            Some(r)
        }
        None => None,
    };
    let passed = suite.passed && oracle.as_ref().is_none_or(|o| o.passed);
    let failed = suite.failures().count() + oracle.as_ref().map_or(0, |o| o.failures().count());
    writeln!(out, "{}: {failed} failing", if passed { "PASS" } else { "FAIL" })?;
    if let Some(path) = &a.report {
        let report = VerifyReport { suite, oracle };
        write_file(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(passed)
}

fn detail(d: &str) -> String {
    if d.is_empty() {
        String::new()
    } else {
        format!(" ({d})")
    }
}

fn ablate(a: &AblateArgs, seed: u64, out: &mut dyn Write) -> Result<bool> {
    let base = load_config(&a.model)?;
    let rows = run_ablation(&base, seed)?;
    match a.format {
        TextFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?,
        TextFormat::Csv => write!(out, "{}", ablation_csv(&rows)?)?,
        TextFormat::Text => {
            writeln!(
                out,
                "{:>3}  {:^3} {:^6} {:^6} {:^6} {:^3} {:^3}  {:>10} {:>8}  {:>9} {:>7}",
                "row", "ViT", "dw3x3", "dw1x1", "dwsep", "CA", "GME", "params", "GFLOPs", "published", ""
            )?;
            let mark = |b: bool| if b { "x" } else { "-" };
            for (i, r) in rows.iter().enumerate() {
                let f = r.row.flags();
                writeln!(
                    out,
                    "{:>3}  {:^3} {:^6} {:^6} {:^6} {:^3} {:^3}  {:>9.3}M {:>8.3}  {:>8.2}M {:>7.2}",
                    i + 1,
                    mark(f[0]),
                    mark(f[1]),
                    mark(f[2]),
                    mark(f[3]),
                    mark(f[4]),
                    mark(f[5]),
                    r.params as f64 / 1e6,
                    r.gflops,
                    r.row.published_params_m,
                    r.row.published_gflops
                )?;
            }
        }
    }
    Ok(true)
}

fn ablation_csv(rows: &[AblationResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Usage(format!("csv: {e}"));
    w.write_record([
        "row",
        "vit",
        "dw3x3",
        "dw1x1",
        "dwsep",
        "channel_attention",
        "gme",
        "params",
        "macs",
        "gflops",
        "published_params_m",
        "published_gflops",
    ])
    .map_err(csv_err)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(r.row.flags().iter().map(|b| b.to_string()));
        rec.extend([
            r.params.to_string(),
            r.macs.to_string(),
            format!("{:.6}", r.gflops),
            r.row.published_params_m.to_string(),
            r.row.published_gflops.to_string(),
        ]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses `args`, runs the command against stdout and maps the outcome to an
/// exit code: 0 on success, 1 on failed checks or errors, 2 on bad usage.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.threads > 0 {
        // Fails only when a pool already exists, which then stays in use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}
