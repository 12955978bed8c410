use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixsr_cli::commands::{
    cmd_bench, cmd_eval, cmd_info, cmd_init, cmd_maps, cmd_prep, cmd_sr, cmd_train, TrainOverrides,
};
use mixsr_cli::{exit_code, EXIT_USAGE};

/// Mixture-of-experts single-image super-resolution.
///
/// Set MIXSR_THREADS to cap the number of worker threads.
#[derive(Parser)]
#[command(name = "mixsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build HR / LR / bicubic triples and a manifest from a folder of images.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the untrained model a config describes.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve one image.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR / SSIM of a model and of bicubic on a dataset, as CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated list.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        scale: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-expert weight maps and the max-label map of one image.
    Maps {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean PSNR and mean upscaling time of several models, as CSV.
    Bench {
        /// Repeat for each model.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a model's architecture and training metadata.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("MIXSR_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| mixsr_cli::UsageError(format!("MIXSR_THREADS=`{v}` is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    configure_threads()?;
    match command {
        Command::Prep { input, out, scale } => {
            let entries = cmd_prep(&input, &out, scale)?;
            let cropped = entries.iter().filter(|e| e.original != e.cropped).count();
            println!(
                "prepared {} images ({cropped} cropped) in {}",
                entries.len(),
                out.display()
            );
        }
        Command::Train { config, seed, out } => {
            let (state, dir) = cmd_train(&config, &TrainOverrides { seed, out }, |r| {
                eprintln!(
                    "iteration {} loss {:.6e} ema {:.6e}",
                    r.iteration, r.loss, r.ema_loss
                )
            })?;
            println!(
                "trained {} iterations; model in {}",
                state.iteration,
                dir.display()
            );
        }
        Command::Init { config, seed, out } => cmd_init(&config, seed, &out)?,
        Command::Sr {
            model,
            input,
            scale,
            out,
        } => {
            let r = cmd_sr(&model, &input, scale, &out)?;
            println!(
                "{}x{} written to {} ({} passes{})",
                r.width,
                r.height,
                out.display(),
                r.passes,
                if r.downsized {
                    ", bicubic downsize"
                } else {
                    ""
                }
            );
        }
        Command::Eval {
            model,
            input,
            scale,
            out,
        } => {
            for r in cmd_eval(&model, &input, &scale, &out)? {
                println!(
                    "x{}: model {:.4} dB / {:.4}, bicubic {:.4} dB / {:.4}",
                    r.model.scale,
                    r.model.mean.psnr,
                    r.model.mean.ssim,
                    r.bicubic.mean.psnr,
                    r.bicubic.mean.ssim
                );
            }
        }
        Command::Maps {
            model,
            input,
            scale,
            out,
        } => {
            for f in cmd_maps(&model, &input, scale, &out)?.files {
                println!("{}", f.display());
            }
        }
        Command::Bench {
            models,
            input,
            scale,
            repeats,
            out,
        } => {
            for r in cmd_bench(&models, &input, scale, repeats, &out)? {
                println!(
                    "{}: {:.4} dB, {:.6} s",
                    r.model, r.mean_psnr, r.mean_seconds
                );
            }
        }
        Command::Info { model } => print!("{}", cmd_info(&model)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
