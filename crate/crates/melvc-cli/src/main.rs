//! Pipeline driver. Exit codes: 0 success, 1 usage error, 2 data/format
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use melvc::audio::{write_wav, Waveform};
use melvc::augment::time_stretch;
use melvc::config::{PipelineConfig, Profile};
use melvc::content::save_bottleneck;
use melvc::dsp::MelSpectrogram;
use melvc::error::Error;
use melvc::eval::mcd;
use melvc::formats::{save_tensor, TensorRecord};
use melvc::pipeline::{
    build_training_examples, copy_synth, load_corpus, prosody_select, run_convert,
    save_conversion_checkpoint, save_vocoder_checkpoint, train_conversion, train_vocoder,
    FeaturePipeline,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Toy,
    Full,
}

#[derive(Parser)]
#[command(name = "melvc", version, about = "Mel-domain voice conversion pipeline")]
struct Cli {
    /// JSON pipeline configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for model init, features, and synthesis sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Model width profile override.
    #[arg(long, global = true)]
    profile: Option<ProfileArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mel features from WAV files into MVF1 tensors.
    Features {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write speed-perturbed copies of WAV files (one per configured factor).
    Augment {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Extract surrogate bottleneck features into MVF1 tensors.
    Bn {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the conversion model on a directory of WAV files.
    TrainConv {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        /// Warm-start from an existing checkpoint.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Train the vocoder on a directory of WAV files.
    TrainVoc {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        steps: u64,
        #[arg(long, default_value_t = 96)]
        window: usize,
    },
    /// Select the medoid prosody utterance and store it in a checkpoint.
    ProsodySelect {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Let speed-perturbed copies participate in the selection.
        #[arg(long)]
        include_augmented: bool,
    },
    /// Convert a source utterance with trained checkpoints.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Directory holding conversion.ckpt and vocoder.ckpt.
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Analysis-resynthesis through the mel-derived LPC filter (no nets).
    Copysynth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Mel-cepstral distortion between two WAV files.
    EvalMcd { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(profile) = cli.profile {
        cfg.profile = match profile {
            ProfileArg::Toy => Profile::Toy,
            ProfileArg::Full => Profile::Full,
        };
    }
    Ok(cfg)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("out")
        .to_string()
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Features { inputs, out_dir } => {
            require_inputs(&inputs)?;
            std::fs::create_dir_all(&out_dir)?;
            let pipe = FeaturePipeline::new(&cfg)?;
            let results: Vec<Result<String, Error>> = inputs
                .par_iter()
                .map(|input| {
                    let (wav, clipped) = pipe.ingest(input)?;
                    let mel = pipe.mel(&wav)?;
                    let out = out_dir.join(format!("{}.mel.mvf", stem_of(input)));
                    save_tensor(&out, &TensorRecord::from_array2_f32(&mel.data))?;
                    Ok(format!(
                        "features in={} out={} frames={} clipped={clipped}",
                        input.display(),
                        out.display(),
                        mel.n_frames()
                    ))
                })
                .collect();
            report_all(results)
        }
        Command::Augment { inputs, out_dir } => {
            require_inputs(&inputs)?;
            std::fs::create_dir_all(&out_dir)?;
            let pipe = FeaturePipeline::new(&cfg)?;
            let speeds = cfg.speeds.clone();
            let results: Vec<Result<String, Error>> = inputs
                .par_iter()
                .map(|input| {
                    let (wav, _) = pipe.ingest(input)?;
                    let mut lines = Vec::new();
                    for &speed in &speeds {
                        let stretched = time_stretch(&wav, speed)?;
                        let out = out_dir.join(format!("{}_sp{:.1}.wav", stem_of(input), speed));
                        write_wav(&out, &stretched)?;
                        lines.push(format!(
                            "augment in={} out={} speed={speed:.1} samples={}",
                            input.display(),
                            out.display(),
                            stretched.len()
                        ));
                    }
                    Ok(lines.join("\n"))
                })
                .collect();
            report_all(results)
        }
        Command::Bn { inputs, out_dir } => {
            require_inputs(&inputs)?;
            std::fs::create_dir_all(&out_dir)?;
            let pipe = FeaturePipeline::new(&cfg)?;
            let results: Vec<Result<String, Error>> = inputs
                .par_iter()
                .map(|input| {
                    let (wav, _) = pipe.ingest(input)?;
                    let mel = pipe.mel(&wav)?;
                    let bn = pipe.bottleneck(&mel)?;
                    let out = out_dir.join(format!("{}.bn.mvf", stem_of(input)));
                    save_bottleneck(&out, &bn)?;
                    Ok(format!(
                        "bn in={} out={} frames={} dim={}",
                        input.display(),
                        out.display(),
                        bn.n_frames(),
                        bn.dim()
                    ))
                })
                .collect();
            report_all(results)
        }
        Command::TrainConv { corpus, out, steps, init_from } => {
            let pipe = FeaturePipeline::new(&cfg)?;
            let corpus = load_corpus(&pipe, &corpus)?;
            let examples = build_training_examples(&pipe, &corpus)?;
            println!(
                "train-conv utterances={} steps={steps} profile={:?}",
                examples.len(),
                cfg.profile
            );
            let t0 = Instant::now();
            let trained = train_conversion(
                &pipe,
                &examples,
                steps,
                init_from.as_deref(),
                |step, stats| {
                    if step % 50 == 0 || step + 1 == steps {
                        println!(
                            "step={step} loss={:.5} l1={:.5} stop_bce={:.5} diag={:.4} wallclock={:.1}",
                            stats.total,
                            stats.l1,
                            stats.stop_bce,
                            stats.diagonality,
                            t0.elapsed().as_secs_f64()
                        );
                    }
                },
                |_| false,
            )?;
            save_conversion_checkpoint(&out, &pipe, &trained.params, trained.steps, None)?;
            if let Some(step) = trained.diverged_at {
                eprintln!(
                    "error: training diverged at step {step}; checkpoint preserved at {}",
                    out.display()
                );
                return Err(Error::Diverged { step, loss: f64::NAN });
            }
            println!(
                "saved {} (l1 {:.5} -> {:.5})",
                out.display(),
                trained.initial.l1,
                trained.last.l1
            );
            Ok(())
        }
        Command::TrainVoc { corpus, out, steps, window } => {
            let pipe = FeaturePipeline::new(&cfg)?;
            let corpus = load_corpus(&pipe, &corpus)?;
            let pairs: Vec<(MelSpectrogram, Waveform)> = corpus
                .iter()
                .map(|item| Ok((pipe.mel(&item.wav)?, item.wav.clone())))
                .collect::<Result<_, Error>>()?;
            println!("train-voc utterances={} steps={steps} window={window}", pairs.len());
            let t0 = Instant::now();
            let trained = train_vocoder(
                &pipe,
                &pairs,
                steps,
                window,
                |step, nll| {
                    println!(
                        "step={step} nll={nll:.5} wallclock={:.1}",
                        t0.elapsed().as_secs_f64()
                    );
                },
                |_| false,
            )?;
            save_vocoder_checkpoint(&out, &pipe, &trained.params, trained.steps)?;
            if let Some(step) = trained.diverged_at {
                eprintln!(
                    "error: training diverged at step {step}; checkpoint preserved at {}",
                    out.display()
                );
                return Err(Error::Diverged { step, loss: f64::NAN });
            }
            println!(
                "saved {} (nll {:.4} -> {:.4})",
                out.display(),
                trained.initial_nll,
                trained.last_nll
            );
            Ok(())
        }
        Command::ProsodySelect { corpus, model, include_augmented } => {
            let mut cfg = cfg;
            if include_augmented {
                cfg.include_augmented_in_medoid = true;
            }
            let pipe = FeaturePipeline::new(&cfg)?;
            let corpus = load_corpus(&pipe, &corpus)?;
            let id = prosody_select(&pipe, &corpus, &model)?;
            println!("prosody-select medoid={id} model={}", model.display());
            Ok(())
        }
        Command::Convert { input, model_dir, output } => {
            let report = run_convert(&cfg, &input, &model_dir, &output, cfg.seed)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "convert in={} out={} duration={:.2}s->{:.2}s frames={}->{} truncated={} mcd_vs_source={:.2}dB synth_rate={:.0}sps",
                input.display(),
                output.display(),
                report.source_duration_s,
                report.output_duration_s,
                report.source_frames,
                report.output_frames,
                report.truncated,
                report.mcd_vs_source_db,
                report.synthesis_samples_per_sec
            );
            Ok(())
        }
        Command::Copysynth { input, output } => {
            let report = copy_synth(&cfg, &input, &output)?;
            println!(
                "copysynth in={} out={} snr={:.1}dB frames={} rate={:.0}sps",
                input.display(),
                output.display(),
                report.snr_db,
                report.frames,
                report.samples_per_sec
            );
            Ok(())
        }
        Command::EvalMcd { a, b } => {
            let pipe = FeaturePipeline::new(&cfg)?;
            let (wa, _) = pipe.ingest(&a)?;
            let (wb, _) = pipe.ingest(&b)?;
            let ma = pipe.mel(&wa)?;
            let mb = pipe.mel(&wb)?;
            let value = mcd(&ma, &mb)?;
            println!("mcd_db={value:.4} frames={}", ma.n_frames().min(mb.n_frames()));
            Ok(())
        }
    }
}

fn require_inputs(inputs: &[PathBuf]) -> Result<(), Error> {
    if inputs.is_empty() {
        return Err(Error::Param("no input files given".to_string()));
    }
    Ok(())
}

fn report_all(results: Vec<Result<String, Error>>) -> Result<(), Error> {
    let mut first_err = None;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) => {
                eprintln!("error: {e}");
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
