use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use pitchfree_cli::audio::Encoding;
use pitchfree_cli::jobs::{self, AnalyzeConfig, CorpusAction, JobConfig, Method, DEFAULT_RATE};

#[derive(Parser)]
#[command(name = "pitchfree", version, about = "Pitch-free whisper conversion and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert WAV files (a file, a directory, or a manifest) to whispers.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pitch_free")]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_RATE)]
        rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_gain_match: bool,
        #[arg(long, default_value_t = pitchfree::whisperize::DEFAULT_CROSSFADE_MS)]
        crossfade_ms: f64,
        #[arg(long, default_value_t = pitchfree::whisperize::DEFAULT_CUTOFF_HZ)]
        cutoff_hz: f64,
        #[arg(long, default_value_t = pitchfree::whisperize::DEFAULT_NOISE_GAIN)]
        noise_gain: f64,
        #[arg(long, default_value_t = pitchfree::whisperize::DEFAULT_LPC_ORDER)]
        lpc_order: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum, default_value = "pcm16")]
        encoding: Encoding,
    },
    /// Compute VTR, RMS level and optional MCD per utterance.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV of `utterance,reference` pairs enabling MCD.
        #[arg(long)]
        ref_map: Option<PathBuf>,
        #[arg(long)]
        f0_dump: bool,
        #[arg(long)]
        rms: bool,
        #[arg(long)]
        spectrogram: bool,
        #[arg(long, default_value_t = DEFAULT_RATE)]
        rate: u32,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Manifest statistics, speaker splits and whisper/normal pairing.
    Corpus {
        #[arg(value_enum)]
        action: CorpusAction,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<usize> {
    match cli.command {
        Command::Convert {
            input,
            out,
            method,
            rate,
            seed,
            no_gain_match,
            crossfade_ms,
            cutoff_hz,
            noise_gain,
            lpc_order,
            workers,
            encoding,
        } => {
            let job = JobConfig {
                rate,
                seed,
                gain_match: !no_gain_match,
                crossfade_ms,
                cutoff_hz,
                noise_gain,
                lpc_order,
                workers,
                encoding,
                ..JobConfig::new(input, out, method)
            };
            Ok(jobs::cmd_convert(&job)?.failed)
        }
        Command::Analyze {
            input,
            out,
            ref_map,
            f0_dump,
            rms,
            spectrogram,
            rate,
            workers,
        } => {
            let cfg = AnalyzeConfig {
                input,
                output_dir: out,
                ref_map,
                f0_dump,
                rms,
                spectrogram,
                rate,
                workers,
            };
            Ok(jobs::cmd_analyze(&cfg)?.1)
        }
        Command::Corpus {
            action,
            manifest,
            seed,
            out,
        } => {
            jobs::cmd_corpus(action, &manifest, seed, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            error!("{n} file(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
