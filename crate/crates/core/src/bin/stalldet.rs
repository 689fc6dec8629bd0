use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stalldet::config::PipelineConfig;
use stalldet::pipeline::{self, load_backgrounds, load_category, load_video, VideoInput};
use stalldet::synth::{self, CorpusFormat};
use stalldet::Error;

const EXIT_STAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING_INPUT: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "stalldet", version, about = "Stalled-vehicle detection for traffic-camera frame sequences")]
struct Cli {
    /// JSON config file; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for corpus runs (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Classify lighting and road type; writes <out>/<video>/category.json.
    Sort {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate per-window backgrounds; needs `sort` output.
    Background {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write road masks for persisted backgrounds.
    Mask {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mask directory; defaults to <out>/<video>/masks.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Detect anomalies from persisted backgrounds; writes events and predictions.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions CSV against ground truth.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic 12-video corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 10.0)]
        fps: f64,
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
    },
    /// Every stage over a corpus, then scoring when gt.csv is present.
    RunAll {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    MissingInput(String),
    Stage(&'static str, Error),
}

fn classify(stage: &'static str, e: Error) -> Failure {
    match e {
        Error::Config(m) => Failure::Config(m),
        Error::MissingMetadata(p) | Error::MissingDetections(p) => Failure::MissingInput(p.display().to_string()),
        Error::Io { ref path, ref source } if source.kind() == std::io::ErrorKind::NotFound => {
            Failure::MissingInput(path.display().to_string())
        }
        other => Failure::Stage(stage, other),
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::MissingInput(path.display().to_string()))
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(Failure::MissingInput(p.display().to_string()));
            }
            PipelineConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

/// Runs `f` on each video under `input`, in order.
fn per_video(
    stage: &'static str,
    input: &Path,
    out: &Path,
    mut f: impl FnMut(&VideoInput, &Path) -> stalldet::Result<()>,
) -> Result<(), Failure> {
    require(input)?;
    let dirs = pipeline::discover_videos(input).map_err(|e| classify(stage, e))?;
    for dir in dirs {
        let video = load_video(&dir).map_err(|e| classify(stage, e))?;
        let out_dir = out.join(video.sequence.video_id());
        f(&video, &out_dir).map_err(|e| classify(stage, e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    if cli.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Stage("cli", Error::InvalidParam("no subcommand given".into())));
    };
    match command {
        Command::Sort { input, out } => per_video("sort", &input, &out, |v, o| {
            pipeline::stage_sort(v, &cfg, o).map(drop)
        }),
        Command::Background { input, out } => per_video("background", &input, &out, |v, o| {
            let category = load_category(o)?;
            pipeline::stage_background(v, &category, &cfg, o).map(drop)
        }),
        Command::Mask { input, out, mask_out } => per_video("mask", &input, &out, |v, o| {
            let category = load_category(o)?;
            let backgrounds = load_backgrounds(o)?;
            let dir = match &mask_out {
                Some(m) => m.join(v.sequence.video_id()),
                None => o.join("masks"),
            };
            pipeline::stage_mask(&backgrounds, &category, &cfg, &dir)
        }),
        Command::Detect { input, out } => per_video("detect", &input, &out, |v, o| {
            let category = load_category(o)?;
            let backgrounds = load_backgrounds(o)?;
            pipeline::stage_detect(v, &category, &backgrounds, &cfg, o).map(drop)
        }),
        Command::Score { pred, gt, out } => {
            require(&pred)?;
            require(&gt)?;
            let report = pipeline::stage_score(&pred, &gt, &cfg).map_err(|e| classify("score", e))?;
            match out {
                Some(p) => pipeline::write_score(&report, &p).map_err(|e| classify("score", e))?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
            Ok(())
        }
        Command::Synth {
            out,
            width,
            height,
            fps,
            duration,
        } => {
            let format = CorpusFormat {
                width,
                height,
                fps,
                duration,
            };
            synth::corpus(&synth::standard_presets(), &format, cfg.seed, &out)
                .map(drop)
                .map_err(|e| classify("synth", e))
        }
        Command::RunAll { input, out, mask_out } => {
            require(&input)?;
            let result =
                pipeline::run_all(&input, &out, &cfg, mask_out.as_deref()).map_err(|e| classify("run-all", e))?;
            if let Some(s) = result.score {
                println!(
                    "f1 {:.4}  rmse {:.3}  nrmse {:.4}  s4 {:.4}  (tp {}, fp {}, fn {})",
                    s.f1, s.rmse, s.nrmse, s.s4, s.tp, s.fp, s.fn_
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.command.is_none() && !cli.dump_config {
        use clap::CommandFactory;
        let _ = Cli::command().print_help();
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::MissingInput(p)) => {
            eprintln!("missing input: {p}");
            ExitCode::from(EXIT_MISSING_INPUT)
        }
        Err(Failure::Stage(stage, e)) => {
            eprintln!("stage {stage} failed: {e}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
