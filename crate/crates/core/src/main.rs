use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evcseg::crf::CrfBackend;
use evcseg::evnet::EvNetConfig;
use evcseg::pipeline::{self, PipelineConfig, Settings};
use evcseg::volume::GridTarget;
use evcseg::Result;

#[derive(Parser)]
#[command(name = "evcseg", version, about = "Brain extraction with a multi-scale V-Net and dense CRF refinement")]
struct Cli {
    /// Settings file (key = value lines or JSON); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Skull-strip one volume.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the network-grid probability map.
        #[arg(long)]
        probs_out: Option<PathBuf>,
        /// Transform sidecar path (default: <output>.json).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        no_cleanup: bool,
        /// Pad to 256³ and run at 128³ instead of the desk-scale grid.
        #[arg(long)]
        full_grid: bool,
        #[command(flatten)]
        crf: CrfArgs,
    },
    /// Train a network on <data>/images and <data>/masks.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        output: PathBuf,
        /// Per-epoch loss log (default: <output>.log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_augment: bool,
        /// Use the two-level toy network.
        #[arg(long)]
        toy: bool,
        #[arg(long)]
        full_grid: bool,
    },
    /// CRF refinement of a stored probability map.
    Refine {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Run hole filling and largest-component selection afterwards.
        #[arg(long)]
        cleanup: bool,
        #[command(flatten)]
        crf: CrfArgs,
    },
    /// Compare predicted masks with ground truth (matched by file name).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Directory for cases.jsonl and summary.csv.
        #[arg(long)]
        output: PathBuf,
    },
    /// Write synthetic head phantoms with exact masks.
    Synth {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct CrfArgs {
    #[arg(long)]
    crf_iters: Option<usize>,
    #[arg(long)]
    w_app: Option<f64>,
    #[arg(long)]
    w_smooth: Option<f64>,
    #[arg(long)]
    theta_alpha: Option<f64>,
    #[arg(long)]
    theta_beta: Option<f64>,
    #[arg(long)]
    theta_gamma: Option<f64>,
    #[arg(long, value_parser = ["brute", "filtered"])]
    crf_backend: Option<String>,
}

impl CrfArgs {
    fn apply(&self, s: &mut Settings) -> Result<()> {
        let c = &mut s.crf;
        if let Some(v) = self.crf_iters {
            c.iterations = v;
        }
        if let Some(v) = self.w_app {
            c.w_appearance = v;
        }
        if let Some(v) = self.w_smooth {
            c.w_smoothness = v;
        }
        if let Some(v) = self.theta_alpha {
            c.theta_alpha = v;
        }
        if let Some(v) = self.theta_beta {
            c.theta_beta = v;
        }
        if let Some(v) = self.theta_gamma {
            c.theta_gamma = v;
        }
        if let Some(b) = &self.crf_backend {
            c.backend = b.parse::<CrfBackend>()?;
        }
        c.validate()
    }
}

fn settings(path: Option<&Path>) -> Result<Settings> {
    path.map_or_else(|| Ok(Settings::default()), Settings::load)
}

fn run(cli: Cli) -> Result<()> {
    pipeline::init_threads()?;
    let mut s = settings(cli.config.as_deref())?;
    match cli.command {
        Command::Extract {
            input,
            output,
            checkpoint,
            probs_out,
            sidecar,
            no_cleanup,
            full_grid,
            crf,
        } => {
            crf.apply(&mut s)?;
            let mut cfg = PipelineConfig::new(input, output, checkpoint);
            cfg.evnet = s.evnet_given.then(|| s.evnet.clone());
            cfg.crf = s.crf;
            cfg.cleanup = s.cleanup && !no_cleanup;
            cfg.grid = if full_grid { GridTarget::FULL } else { s.grid };
            cfg.sidecar = sidecar;
            cfg.probs_out = probs_out;
            let out = pipeline::extract(&cfg)?;
            println!(
                "{}: {} foreground voxels (sidecar {})",
                cfg.output.display(),
                out.sidecar.foreground_voxels,
                out.sidecar_path.display()
            );
        }
        Command::Train {
            data,
            output,
            log,
            epochs,
            lr,
            momentum,
            batch_size,
            seed,
            no_augment,
            toy,
            full_grid,
        } => {
            if toy {
                s.evnet = EvNetConfig::toy();
            }
            let t = &mut s.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.lr = lr.unwrap_or(t.lr);
            t.momentum = momentum.unwrap_or(t.momentum);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.seed = seed.unwrap_or(t.seed);
            t.augment &= !no_augment;
            if full_grid {
                s.grid = GridTarget::FULL;
            }
            s.validate()?;
            let out = pipeline::train(&data, &output, log.as_deref(), &s)?;
            match out.report.best_epoch {
                Some(e) => println!("best epoch {e}; checkpoint {}", out.checkpoint.display()),
                None => println!("no epochs run; initial checkpoint {}", out.checkpoint.display()),
            }
        }
        Command::Refine {
            probs,
            image,
            output,
            cleanup,
            crf,
        } => {
            crf.apply(&mut s)?;
            let m = pipeline::refine_files(&probs, &image, &output, &s.crf, cleanup)?;
            println!("{}: {} foreground voxels", output.display(), m.count());
        }
        Command::Eval { pred, truth, output } => {
            let out = pipeline::eval(&pred, &truth, &output)?;
            print!("{}", out.report.summary_csv());
            if !out.report.flagged.is_empty() {
                println!("empty predictions: {:?}", out.report.flagged);
            }
        }
        Command::Synth { n, size, seed, output } => {
            let out = pipeline::synth(n, size, seed, &output)?;
            println!("wrote {} phantoms to {}", out.images.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
