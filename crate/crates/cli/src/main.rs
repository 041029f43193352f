//! `hzr`: handwritten character recognition from the command line.

mod table;

use std::error::Error;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use hzr_core::data::{DataSource, StrokeSample};
use hzr_core::eval::{comparison_table, evaluate, ComparisonRow};
use hzr_core::infer::{self, DEFAULT_CANDIDATES};
use hzr_core::model::{checkpoint, count_macs, count_params, ModelSpec, Network};
use hzr_core::search::{run_trials, sample_architecture, summarize, write_jsonl, HyperParamSpace};
use hzr_core::train::{curve_csv, metrics_csv, run_learning_curve, train_observed, EpochMetrics, TrainConfig, TrainObserver};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "hzr", version, about = "Compact handwritten character recognition")]
struct Cli {
    /// Machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random architecture and print its spec JSON.
    SampleArch {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        classes: usize,
        /// `default`, `desk`, or a JSON file describing the value sets.
        #[arg(long, default_value = "default")]
        space: String,
    },
    /// Layer table, parameter counts and footprint of a spec.
    Describe {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Train a spec and write a checkpoint.
    Train {
        #[arg(long)]
        spec: PathBuf,
        /// IDX directory, `.jsonl` stroke file, or `glyphs:C=..,m=..,seed=..`.
        #[arg(long)]
        data: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "model.hzr")]
        out: PathBuf,
        /// Per-epoch metrics as CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset's evaluation split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: String,
    },
    /// Rank candidates for one stroke JSON file or raw grayscale image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
        k: usize,
        /// One class name per line.
        #[arg(long)]
        names: Option<PathBuf>,
    },
    /// Error rate against training-set size, with a power-law fit.
    LearningCurve {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,1.0")]
        fractions: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sample, train and rank a batch of architectures.
    Trials {
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long)]
        data: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "default")]
        space: String,
        /// Ranked results, one JSON object per line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP recognition service.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        names: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_spec(path: &Path) -> Result<ModelSpec> {
    Ok(ModelSpec::from_json(&read(path)?)?)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::from_json(&read(p)?)?),
        None => Ok(TrainConfig::default()),
    }
}

fn load_space(name: &str) -> Result<HyperParamSpace> {
    let space = match name {
        "default" => HyperParamSpace::default(),
        "desk" => HyperParamSpace::desk(),
        path => serde_json::from_str(&read(Path::new(path))?)?,
    };
    space.validate()?;
    Ok(space)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Epoch lines on stderr so stdout stays clean.
struct Progress;

impl TrainObserver for Progress {
    fn on_epoch(&mut self, m: &EpochMetrics) {
        eprintln!(
            "epoch {:>3}  loss {:.4}  holdout top-1 {:.2}%  {:.1}s",
            m.epoch,
            m.train_loss,
            100.0 * m.holdout_top1,
            m.wall_time_s
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SampleArch { seed, classes, space } => {
            if classes == 0 {
                return Err("--classes must be at least 1".into());
            }
            let spec = sample_architecture(&load_space(&space)?, seed, classes);
            println!("{}", spec.to_json());
        }
        Command::Describe { spec } => {
            let spec = load_spec(&spec)?;
            let net = Network::<f32>::build(spec.clone(), 0)?;
            let count = count_params(&spec);
            let macs = count_macs(&spec);
            if cli.json {
                print_json(&json!({
                    "spec": spec,
                    "rows": net.summary(),
                    "params": count,
                    "footprint_bytes": count.footprint_bytes(),
                    "macs": macs,
                }))?;
            } else {
                print!("{}", table::describe(net.summary(), &count, macs));
            }
        }
        Command::Train {
            spec,
            data,
            config,
            out,
            metrics,
        } => {
            let spec = load_spec(&spec)?;
            let config = load_config(config.as_deref())?;
            let split = DataSource::parse(&data)?.load_split()?;
            let (train_set, holdout) = split.train.split_holdout();
            let mut net = Network::<f32>::build(spec, config.seed)?;
            let outcome = train_observed(&mut net, &train_set, &holdout, &config, &mut Progress)?;
            checkpoint::save(&net, &out)?;
            if let Some(path) = metrics {
                fs::write(path, metrics_csv(&outcome.metrics))?;
            }
            let report = evaluate(&net, &split.test)?;
            if cli.json {
                print_json(&json!({ "outcome": outcome, "test": report, "checkpoint": out }))?;
            } else {
                println!("kept epoch {} (holdout top-1 {:.2}%)", outcome.best_epoch, 100.0 * outcome.best_holdout_top1);
                print_report("test", &net, &report);
                println!("checkpoint written to {}", out.display());
            }
        }
        Command::Eval { model, data } => {
            let net = checkpoint::load(&model)?;
            let report = evaluate(&net, &DataSource::parse(&data)?.load_eval()?)?;
            if cli.json {
                print_json(&report)?;
            } else {
                print_report(&model.display().to_string(), &net, &report);
            }
        }
        Command::Infer { model, input, k, names } => {
            let net = checkpoint::load(&model)?;
            let names = names.map(|p| read(&p).map(|t| infer::parse_names(&t))).transpose()?;
            let image = if input.extension().is_some_and(|e| e == "json") {
                infer::image_from_strokes(&net, &StrokeSample::from_json(&read(&input)?)?)?
            } else {
                let bytes = fs::read(&input).map_err(|e| format!("{}: {e}", input.display()))?;
                infer::image_from_bytes(&net, &bytes)?
            };
            let candidates = infer::recognize(&net, &image, k, names.as_deref())?;
            if cli.json {
                print_json(&json!({ "candidates": candidates }))?;
            } else {
                for (rank, c) in candidates.iter().enumerate() {
                    let name = c.name.as_deref().map(|n| format!("  {n}")).unwrap_or_default();
                    println!("{:>2}. {:>6}  {:>7.3}%{name}", rank + 1, c.label, 100.0 * c.score);
                }
            }
        }
        Command::LearningCurve {
            spec,
            data,
            fractions,
            config,
            csv,
        } => {
            let spec = load_spec(&spec)?;
            let config = load_config(config.as_deref())?;
            let split = DataSource::parse(&data)?.load_split()?;
            let curve = run_learning_curve(&spec, &split.train, &split.test, &fractions, &config)?;
            if let Some(path) = csv {
                fs::write(path, curve_csv(&curve.points))?;
            }
            if cli.json {
                print_json(&curve)?;
            } else {
                print!("{}", curve_csv(&curve.points));
                match &curve.fit {
                    Some(f) => println!("fit: error ≈ {:.4} · n^{:.3}", f.coefficient(), f.exponent),
                    None => println!("fit: not enough distinct nonzero points"),
                }
            }
        }
        Command::Trials {
            count,
            data,
            config,
            seed,
            space,
            out,
        } => {
            let space = load_space(&space)?;
            let config = load_config(config.as_deref())?;
            let split = DataSource::parse(&data)?.load_split()?;
            let results = run_trials(&space, count, seed, &config, &split, &mut |t| match &t.error {
                None => eprintln!("seed {:>4}  top-1 {:.2}%  {:.1}s", t.seed, 100.0 * t.top1, t.wall_time),
                Some(e) => eprintln!("seed {:>4}  failed: {e}", t.seed),
            })?;
            if let Some(path) = out {
                let mut f = std::io::BufWriter::new(fs::File::create(path)?);
                write_jsonl(&results, &mut f)?;
                f.flush()?;
            }
            let summary = summarize(&results);
            if cli.json {
                print_json(&json!({ "summary": summary, "results": results }))?;
            } else {
                print!("{}", table::trials(&results));
                println!(
                    "{} trials, {} failed, best top-1 {:.2}%, top-10 spread {:.2} points",
                    summary.trials,
                    summary.failures,
                    100.0 * summary.best_top1,
                    100.0 * summary.top10_spread
                );
            }
        }
        Command::Serve { model, port, host, names } => {
            let addr = SocketAddr::new(host, port);
            eprintln!("listening on http://{addr}");
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(hzr_serve::serve(hzr_serve::ServeConfig { model, names, addr }))?;
        }
    }
    Ok(())
}

fn print_report(name: &str, net: &Network<f32>, report: &hzr_core::eval::EvalReport) {
    let footprint = count_params(net.spec()).footprint_bytes();
    print!(
        "{}",
        comparison_table(&[ComparisonRow {
            model: name.to_string(),
            report,
            footprint_bytes: footprint,
        }])
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version print to stdout and exit 0; usage errors exit 2.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
