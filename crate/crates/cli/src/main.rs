use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsimage_cli::commands::{cmd_compress, cmd_decompress, cmd_eval, cmd_fit, cmd_rd_sweep};
use gsimage_cli::{exit, CliError, CliResult, Overrides, RunManifest, Settings};

/// Fit, compress and evaluate images represented as 2D Gaussians.
#[derive(Parser, Debug)]
#[command(name = "gsimage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit Gaussians to an image and write a float checkpoint.
    Fit {
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Quantization-aware fine-tuning of a checkpoint, then encode to .gsi.
    Compress {
        checkpoint: PathBuf,
        /// The image the checkpoint was fitted to.
        #[arg(long)]
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Decode a .gsi and render it to PNG.
    Decompress {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Score the render against this image.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// PSNR / MS-SSIM between two images, plus bpp of an optional stream.
    Eval {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        stream: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Rate-distortion sweep over a directory of images.
    RdSweep {
        dir: PathBuf,
        /// Comma-separated Gaussian counts.
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// TOML file with settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_gaussians: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// l2, l1, ssim, l1+ssim or l2+ssim.
    #[arg(long)]
    loss: Option<String>,
    /// cholesky or rs.
    #[arg(long)]
    factorization: Option<String>,
    /// Fine-tuning steps before encoding.
    #[arg(long)]
    qat_steps: Option<usize>,
    /// Covariance code width.
    #[arg(long)]
    bits: Option<u8>,
    #[arg(long)]
    rvq_stages: Option<usize>,
    #[arg(long)]
    codebook_size: Option<usize>,
    #[arg(long)]
    bitsback: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "GSI_THREADS")]
    threads: Option<usize>,
    /// Print the run manifest to stdout.
    #[arg(long)]
    print_manifest: bool,
}

impl Opts {
    fn settings(&self) -> CliResult<Settings> {
        let o = Overrides {
            num_gaussians: self.num_gaussians,
            steps: self.steps,
            loss: self.loss.clone(),
            factorization: self.factorization.clone(),
            seed: self.seed,
            qat_steps: self.qat_steps,
            bits: self.bits,
            rvq_stages: self.rvq_stages,
            codebook_size: self.codebook_size,
            bitsback: self.bitsback,
        };
        Settings::resolve(self.config.as_deref(), &o)
    }
}

fn run(cli: Cli) -> CliResult<(RunManifest, bool)> {
    let opts = match &cli.command {
        Command::Fit { opts, .. }
        | Command::Compress { opts, .. }
        | Command::Decompress { opts, .. }
        | Command::Eval { opts, .. }
        | Command::RdSweep { opts, .. } => opts.clone(),
    };
    if let Some(n) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let s = opts.settings()?;
    let m = match &cli.command {
        Command::Fit { image, out, .. } => cmd_fit(image, out, &s)?,
        Command::Compress {
            checkpoint, image, out, ..
        } => cmd_compress(checkpoint, image, out, &s)?,
        Command::Decompress {
            input, out, reference, ..
        } => cmd_decompress(input, out, reference.as_deref(), &s)?,
        Command::Eval {
            reference,
            candidate,
            stream,
            ..
        } => cmd_eval(reference, candidate, stream.as_deref(), &s)?,
        Command::RdSweep { dir, counts, out, .. } => cmd_rd_sweep(dir, counts, out, &s)?,
    };
    Ok((m, opts.print_manifest || matches!(cli.command, Command::Eval { .. })))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((m, print)) => {
            if print {
                let _ = writeln!(std::io::stdout(), "{}", m.to_json());
            }
            ExitCode::from(exit::SUCCESS as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
