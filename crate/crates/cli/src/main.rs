//! `geosocial`: command-line driver for the region analytics pipeline.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geosocial::ingest::BBox;
use geosocial::pipeline::{Pipeline, PipelineConfig, Stage};
use geosocial::synth::{generate, SynthConfig};
use geosocial::Error;

#[derive(Parser, Debug)]
#[command(
    name = "geosocial",
    version,
    about = "Social regions and their communication from located mention data"
)]
struct Cli {
    #[command(flatten)]
    opts: PipelineArgs,

    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the pipeline config file; flags win over the file.
#[derive(Args, Debug, Default)]
struct PipelineArgs {
    /// TOML pipeline config
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Input JSONL file; repeat for several
    #[arg(long = "input", short = 'i', global = true)]
    inputs: Vec<PathBuf>,

    /// lon_min,lat_min,lon_max,lat_max
    #[arg(long, global = true, allow_hyphen_values = true)]
    bbox: Option<BBox>,

    /// Grid resolution X (X×X tiles)
    #[arg(long, global = true)]
    grid: Option<u32>,

    #[arg(long, global = true)]
    restarts: Option<u32>,

    #[arg(long, global = true)]
    rank_threshold: Option<f64>,

    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,

    /// Output directory
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    tfidf_top_k: Option<usize>,

    /// Monte-Carlo draws for the rewired null model (0 = off)
    #[arg(long, global = true)]
    null_samples: Option<u32>,

    /// Comma-separated sweep resolutions
    #[arg(long, global = true, value_delimiter = ',')]
    grids: Option<Vec<u32>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse inputs and locate users
    Ingest,
    /// Build the tile mention network
    Network,
    /// Detect communities
    Communities,
    /// Region vocabularies, tf-idf and rank differences
    Vocab,
    /// Inter-community mention flow and its null model
    Flow,
    /// Polarity matrix, self-regard and popularity
    Sentiment,
    /// Community count and modularity across grid resolutions
    Sweep,
    /// Run every stage and write a manifest
    Run,
    /// Write a synthetic corpus with planted regions
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML generator config; defaults to four quadrant regions
    #[arg(long)]
    synth_config: Option<PathBuf>,

    /// Override users per region
    #[arg(long)]
    users: Option<u32>,

    /// Print the default generator config as TOML and exit
    #[arg(long)]
    print_default: bool,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_path(p)?,
            None => PipelineConfig::default(),
        };
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        if let Some(b) = self.bbox {
            cfg.bbox = b;
        }
        if let Some(x) = self.grid {
            cfg.grid = x;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if let Some(t) = self.rank_threshold {
            cfg.rank_threshold = t;
        }
        if let Some(l) = &self.lexicon {
            cfg.lexicon = Some(l.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.tfidf_top_k {
            cfg.tfidf_top_k = k;
        }
        if let Some(n) = self.null_samples {
            cfg.null_samples = n;
        }
        if let Some(g) = &self.grids {
            cfg.sweep_grids = g.clone();
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::SynthConfig(_) | Error::InvalidGrid(_) => 1,
        _ => 2,
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.opts.resolve()?;
    if let Command::Synth(args) = &cli.command {
        return synth(&cfg, cli.opts.seed, args);
    }
    let pipeline = Pipeline::new(cfg)?;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Network => Stage::Network,
        Command::Communities => Stage::Communities,
        Command::Vocab => Stage::Vocab,
        Command::Flow => Stage::Flow,
        Command::Sentiment => Stage::Sentiment,
        Command::Sweep => Stage::Sweep,
        Command::Run => {
            let manifest = pipeline.run()?;
            for d in &manifest.outputs {
                println!("{}  {}", d.sha256, d.path);
            }
            return Ok(());
        }
        Command::Synth(_) => unreachable!("handled above"),
    };
    for f in pipeline.run_stage(stage)? {
        println!("{}", pipeline.output_path(&f).display());
    }
    Ok(())
}

fn synth(cfg: &PipelineConfig, seed: Option<u64>, args: &SynthArgs) -> Result<(), Error> {
    let mut sc = match &args.synth_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::four_regions(cfg.seed),
    };
    if args.print_default {
        print!("{}", sc.to_toml());
        return Ok(());
    }
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    if let Some(u) = args.users {
        for r in &mut sc.regions {
            r.user_count = u;
        }
    }
    let corpus = generate(&sc)?;
    for p in corpus.write_bundle(&cfg.output_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
