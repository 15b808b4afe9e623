use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emodist::io::{Approach, CorpusManifest};
use emodist::metrics::{F1Averaging, KlDirection};
use emodist::par::{Executor, Parallelism, WORKERS_ENV};
use emodist::report::{compare, BaselineFile, EvalReport};
use emodist::run::{evaluate, synthesize, validate, EvalOptions};
use emodist::synth::SynthSpec;
use emodist::{AggregationScope, EmotionSet, Error, NormalizationPolicy};

/// Emotion distributions from model text and token logits, scored against
/// multi-annotator ground truth.
#[derive(Parser)]
#[command(name = "emodist", version, propagate_version = true)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Workers {
    /// Worker threads: 0 = one per core, 1 = sequential.
    #[arg(long, env = WORKERS_ENV, default_value_t = 0)]
    workers: usize,
}

impl Workers {
    fn executor(&self) -> emodist::Result<Executor> {
        Executor::new(Parallelism::from_workers(self.workers))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Score one approach over a corpus and write a report.
    Eval {
        /// Corpus manifest (TOML).
        #[arg(short, long)]
        manifest: PathBuf,
        /// text or token.
        #[arg(long)]
        approach: Option<Approach>,
        /// all-tokens or emotion-word-tokens.
        #[arg(long)]
        scope: Option<AggregationScope>,
        /// paper-division, shift-min-zero or softmax.
        #[arg(long)]
        normalization: Option<NormalizationPolicy>,
        /// Only use records with this prompt id.
        #[arg(long)]
        prompt_id: Option<String>,
        /// gt-to-pred or pred-to-gt.
        #[arg(long)]
        kl_direction: Option<KlDirection>,
        /// KL smoothing constant.
        #[arg(long)]
        epsilon: Option<f64>,
        /// macro or weighted.
        #[arg(long)]
        f1_averaging: Option<F1Averaging>,
        /// Stop at the first malformed record.
        #[arg(long)]
        strict: bool,
        /// Label for this run in comparisons.
        #[arg(long)]
        condition: Option<String>,
        /// Report path; the report goes to stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        workers: Workers,
    },
    /// Put two or more reports side by side.
    Compare {
        /// Report files written by `eval`.
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// TOML file of externally published rows, shown for context.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Condition the improvements are measured against (default: first report).
        #[arg(long)]
        reference: Option<String>,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with known answers.
    Synth {
        /// Generation spec (TOML).
        #[arg(short, long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
    /// Check every file of a corpus without scoring it.
    Validate {
        #[arg(short, long)]
        manifest: PathBuf,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write the built-in prompts as text files.
    Prompts {
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Take the emotion set from this manifest.
        #[arg(short, long)]
        manifest: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> emodist::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        source: e,
    })
}

fn summary(r: &EvalReport) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    let c = &r.corpus;
    format!(
        "{}: KL {} BD {} R2 {} accuracy {} F1 {} | {} utterances, {} excluded ({})",
        r.condition,
        f(c.mean_kl),
        f(c.mean_bd),
        f(c.r2),
        f(c.accuracy),
        f(c.f1),
        c.n_total,
        c.n_excluded,
        c.exclusion_rate.map_or_else(|| "-".to_string(), |v| format!("{:.2}%", v * 100.0)),
    )
}

fn run(cli: Cli) -> emodist::Result<ExitCode> {
    match cli.command {
        Command::Eval {
            manifest,
            approach,
            scope,
            normalization,
            prompt_id,
            kl_direction,
            epsilon,
            f1_averaging,
            strict,
            condition,
            output,
            workers,
        } => {
            let m = CorpusManifest::load(&manifest)?;
            let opts = EvalOptions {
                approach,
                scope,
                normalization,
                prompt_id,
                strict: strict.then_some(true),
                kl_direction,
                epsilon,
                f1_averaging,
                condition,
            };
            let report = evaluate(&m, &opts, &workers.executor()?)?;
            match output {
                Some(path) => {
                    report.write(&path)?;
                    println!("{}", summary(&report));
                }
                None => {
                    print!("{}", report.to_json()?);
                    eprintln!("{}", summary(&report));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            reports,
            baseline,
            reference,
            json,
            csv,
        } => {
            let reports = reports.iter().map(|p| EvalReport::read(p)).collect::<emodist::Result<Vec<_>>>()?;
            let baseline = match baseline {
                Some(p) => BaselineFile::read(&p)?,
                None => Vec::new(),
            };
            let cmp = compare(&reports, &baseline, reference.as_deref())?;
            print!("{}", cmp.to_table());
            if let Some(path) = json {
                let text = serde_json_string(&cmp)?;
                write_text(&path, &text)?;
            }
            if let Some(path) = csv {
                write_text(&path, &cmp.to_csv()?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { spec, out, workers } => {
            let spec = SynthSpec::load(&spec)?;
            let written = synthesize(spec, &out, &workers.executor()?)?;
            println!(
                "wrote {} utterances ({} malformed responses); manifest {}",
                written.n_utterances,
                written.n_malformed,
                written.manifest.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { manifest, json } => {
            let m = CorpusManifest::load(&manifest)?;
            let summary = validate(&m)?;
            if json {
                println!("{}", serde_json_string(&summary)?);
            } else {
                print!("{}", summary.to_text());
            }
            Ok(if summary.total_errors() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Prompts { out, manifest } => {
            let set = match manifest {
                Some(p) => CorpusManifest::load(&p)?.set,
                None => EmotionSet::default(),
            };
            for path in emodist::prompts::export_templates(&out, &set)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> emodist::Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Serialize(e.to_string()))
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
