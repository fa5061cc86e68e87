use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ngsc::config::parse_q_list;
use ngsc::{
    cmd_bdrate, cmd_bitmap, cmd_decode, cmd_encode, cmd_eval, cmd_sweep, cmd_train, format_percent, CliError, Config,
    Overrides, Result,
};

#[derive(Parser)]
#[command(name = "ngsc", version, about = "Variable-rate learned image codec")]
struct Cli {
    /// TOML run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ROI emphasis of the training loss, in [0, 1).
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// ROI weight of the combined PSNR, in (0, 1).
    #[arg(long = "w-roi", global = true)]
    w_roi: Option<f64>,
    /// Divides the full-scale epoch counts.
    #[arg(long = "desk-scale", global = true)]
    desk_scale: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; checkpoints and logs go to --out.
    Train {
        /// Image directory (overrides data.train_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress an image.
    Encode {
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        q: f64,
        /// Grayscale ROI mask of the image's size.
        #[arg(long)]
        roi: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a PNG from a stream.
    Decode {
        stream: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR of reference/reconstruction pairs.
    Eval {
        /// Alternating reference and reconstruction paths.
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        #[arg(long)]
        roi: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RD sweep of a directory over a list of QIndex values.
    Sweep {
        dir: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "q-list")]
        q_list: Option<String>,
        /// Directory of masks named like the images.
        #[arg(long)]
        roi: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// BD-rate of a test RD curve against an anchor.
    Bdrate { anchor: PathBuf, test: PathBuf },
    /// Bit-allocation map of the costliest latent channel.
    Bitmap {
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        q: f64,
        /// Output prefix; writes .pgm and .csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Overrides { seed: cli.seed, alpha: cli.alpha, w_roi: cli.w_roi, desk_scale: cli.desk_scale }.apply(&mut cfg);
    cfg.validate()?;
    match cli.command {
        Command::Train { data, out } => {
            let dir = data
                .or_else(|| cfg.data.train_dir.clone())
                .ok_or_else(|| CliError::Argument("no training directory: pass --data or set data.train_dir".into()))?;
            let report = cmd_train(&cfg, &dir, &out)?;
            let (first, last) = report.smoothed_loss();
            println!("{} steps, smoothed loss {first:.4} -> {last:.4}", report.history.len());
            println!("model: {}", report.model_path.display());
        }
        Command::Encode { image, model, q, roi, out } => {
            let r = cmd_encode(&cfg, &image, q, roi.as_deref(), &model, &out)?;
            println!("{} bytes, {:.4} bpp", r.bytes, r.bpp);
        }
        Command::Decode { stream, model, out } => {
            cmd_decode(&cfg, &stream, &model, &out)?;
            println!("{}", out.display());
        }
        Command::Eval { files, roi, out } => {
            if files.len() % 2 != 0 {
                return Err(CliError::Argument("eval takes reference/reconstruction pairs".into()));
            }
            let pairs: Vec<_> = files.chunks(2).map(|p| (p[0].clone(), p[1].clone())).collect();
            for row in cmd_eval(&cfg, &pairs, roi.as_deref(), out.as_deref())? {
                match (row.psnr_roi, row.psnr_nroi) {
                    (Some(a), Some(b)) => {
                        println!("{}\t{:.4} dB (roi {a:.4}, nroi {b:.4})", row.reconstruction, row.psnr)
                    }
                    _ => println!("{}\t{:.4} dB", row.reconstruction, row.psnr),
                }
            }
        }
        Command::Sweep { dir, model, q_list, roi, out } => {
            let q = match q_list {
                Some(s) => parse_q_list(&s)?,
                None => cfg.eval.q_list.clone(),
            };
            let curve = cmd_sweep(&cfg, &model, &dir, &q, roi.as_deref(), &out)?;
            for p in &curve.points {
                println!("q {:.3}\t{:.4} bpp\t{:.4} dB", p.q.unwrap_or(f64::NAN), p.bpp, p.psnr);
            }
        }
        Command::Bdrate { anchor, test } => println!("{}", format_percent(cmd_bdrate(&anchor, &test)?)),
        Command::Bitmap { image, model, q, out } => {
            let map = cmd_bitmap(&cfg, &image, q, &model, &out)?;
            println!("channel {} ({:.1} bits)", map.channel, map.total_bits());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
