use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aegem::config::RunConfig;
use aegem::hsi::{save_cube, synthesize_scene, CubeFormat, Precision, SceneSpec};
use aegem::pipeline::{self, SCENE_CUBE, SUMMARY_CSV};
use aegem::{Error, Result};

#[derive(Parser)]
#[command(name = "aegem", version, about = "Hyperspectral unmixing: autoencoder, elliptical graph GCN and ensemble")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of runs, seeded `seed, seed+1, …`.
    #[arg(long, global = true)]
    repeat: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use ⟨x_i, x_i⟩ in the edge angle numerator.
    #[arg(long, global = true)]
    paper_literal_adjacency: bool,
    /// Skip the GCN sum-to-one renormalization.
    #[arg(long, global = true)]
    paper_literal_asc: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cube with its ground truth.
    Synth(SynthArgs),
    /// Run the whole pipeline.
    Run,
    /// Score a saved run against a ground-truth directory.
    Eval { estimate: PathBuf, truth: PathBuf },
    /// Build and save the elliptical graph only.
    Graph,
    /// Train the autoencoder only.
    Ae,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// dB; omit for a noiseless scene.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    sharpness: Option<f64>,
}

fn threads() -> Result<usize> {
    match std::env::var("AEGEM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("AEGEM_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(repeat) = common.repeat {
        config.repeat = repeat;
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    config.graph.paper_literal_adjacency |= common.paper_literal_adjacency;
    config.gcn.paper_literal_asc |= common.paper_literal_asc;
    config.validate()?;
    Ok(config)
}

fn synth(common: &Common, args: &SynthArgs) -> Result<()> {
    let mut spec = match &common.config {
        Some(_) => load_config(common)?.scene.unwrap_or_default(),
        None => SceneSpec::default(),
    };
    spec.height = args.h.unwrap_or(spec.height);
    spec.width = args.w.unwrap_or(spec.width);
    spec.bands = args.l.unwrap_or(spec.bands);
    spec.endmembers = args.p.unwrap_or(spec.endmembers);
    spec.snr_db = args.snr.unwrap_or(spec.snr_db);
    spec.smoothness = args.smoothness.unwrap_or(spec.smoothness);
    spec.sharpness = args.sharpness.unwrap_or(spec.sharpness);
    spec.seed = common.seed.unwrap_or(spec.seed);
    let (cube, truth) = synthesize_scene(&spec)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("scene"));
    let names: Vec<String> = (0..spec.endmembers).map(|j| format!("em{j}")).collect();
    pipeline::save_truth(&truth, &names, &out)?;
    save_cube(&cube, &out.join(SCENE_CUBE), CubeFormat::Hsb, Precision::F64)?;
    println!("wrote {}x{}x{} scene with {} endmembers to {}", spec.height, spec.width, spec.bands, spec.endmembers, out.display());
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let outcomes = pipeline::run(&config, threads()?)?;
    for o in &outcomes {
        match &o.report {
            Some(r) => print!("{}\n{}", o.dir.display(), r.to_text()),
            None => println!("{}: no ground truth, stopped after the graph stage", o.dir.display()),
        }
    }
    if config.repeat > 1 {
        println!("summary: {}", config.out.join(SUMMARY_CSV).display());
    }
    Ok(())
}

fn eval(common: &Common, estimate: &Path, truth: &Path) -> Result<()> {
    let report = pipeline::evaluate_dir(estimate, truth)?;
    print!("{}", report.to_text());
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        report.write_csv(&out.join(pipeline::METRICS_CSV))?;
    }
    Ok(())
}

fn graph(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let g = pipeline::run_graph(&config, &config.out)?;
    println!("{} centroids, {} edges -> {}", g.centroids.len(), g.edges.len(), config.out.join(pipeline::GRAPH_CSV).display());
    Ok(())
}

fn ae(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let (trained, report) = pipeline::run_autoencoder(&config, &config.out)?;
    println!("final loss {:.6}", trained.loss_history.last().copied().unwrap_or(f64::NAN));
    if let Some(r) = report {
        print!("{}", r.to_text());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(args) => synth(&cli.common, args),
        Command::Run => run(&cli.common),
        Command::Eval { estimate, truth } => eval(&cli.common, estimate, truth),
        Command::Graph => graph(&cli.common),
        Command::Ae => ae(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage_or_io() { 1 } else { 2 })
        }
    }
}
