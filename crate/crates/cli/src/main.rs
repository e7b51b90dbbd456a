use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use robustfair::adversary::{attack_curve, attack_probs};
use robustfair::apxfair::RoundRecord;
use robustfair::data::synthetic::{planted, PlantedConfig};
use robustfair::data::{load_csv, write_csv, Dataset, Schema};
use robustfair::harness::{
    emit_curves, parse_grid, run_experiment, DataSource, ExperimentConfig, TrainConfig,
};
use robustfair::hypothesis::{Classifier, Model};
use robustfair::meta::robust_train_observed;
use robustfair::metrics::{accuracy, gap_mixture, gap_randomized, Notion};

const SCHEMA_FILE: &str = "schema.json";

#[derive(Parser)]
#[command(
    name = "robustfair",
    version,
    about = "Fair classification robust to reweightings of the training sample"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a robust fair ensemble on the data named in a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for model.json, diagnostics.json and schema.json.
        #[arg(long)]
        out: PathBuf,
        /// Write the inner payoff trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Find the most unfair reweighting within an l1 radius.
    Attack {
        #[command(flatten)]
        input: ModelInput,
        #[arg(long)]
        eps: f64,
        /// Witness file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack over a grid of radii and print `eps,violation` rows.
    Curve {
        #[command(flatten)]
        input: ModelInput,
        /// `start:stop:step` or a comma list.
        #[arg(long, default_value = "0:1:0.1")]
        eps_grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full protocol: grid search, baseline, curves and CSVs.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and unweighted fairness gap of a model.
    Evaluate {
        #[command(flatten)]
        input: ModelInput,
    },
    /// Write a planted synthetic dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mean shift of the group-correlated feature.
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON; defaults to schema.json beside the model.
    #[arg(long, conflicts_with_all = ["label", "protected"])]
    schema: Option<PathBuf>,
    #[arg(long, requires = "protected")]
    label: Option<String>,
    #[arg(long, requires = "label")]
    protected: Option<String>,
    #[arg(long, default_value = "dp")]
    notion: Notion,
}

impl ModelInput {
    fn schema(&self) -> Result<Schema> {
        if let (Some(label), Some(protected)) = (&self.label, &self.protected) {
            return Ok(Schema::new(label.clone(), protected.clone()));
        }
        let path = match &self.schema {
            Some(p) => p.clone(),
            None => {
                let beside = self
                    .model
                    .parent()
                    .unwrap_or(Path::new(""))
                    .join(SCHEMA_FILE);
                if !beside.exists() {
                    bail!(
                        "no schema: pass --schema or --label/--protected, or place {SCHEMA_FILE} next to the model"
                    );
                }
                beside
            }
        };
        read_json(&path)
    }

    fn load(&self) -> Result<(Model, Dataset)> {
        let model = Model::load(&self.model)
            .with_context(|| format!("loading model {}", self.model.display()))?;
        let schema = self.schema()?;
        let d = load_csv(&self.data, &schema)
            .with_context(|| format!("loading data {}", self.data.display()))?;
        if model.feature_dim() != d.feature_dim() {
            bail!(
                "model expects {} features but {} has {}",
                model.feature_dim(),
                self.data.display(),
                d.feature_dim()
            );
        }
        Ok((model, d))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes to `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct Witness<'a> {
    epsilon: f64,
    /// Group names, first is the favoured one.
    pair: [&'a str; 2],
    value: f64,
    weights: &'a [f64],
}

#[derive(Serialize)]
struct TraceLine<'a> {
    outer_round: usize,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

#[derive(Serialize)]
struct Evaluation {
    n: usize,
    notion: Notion,
    accuracy: f64,
    /// Gap of the averaged prediction on uniform weights.
    gap: f64,
    /// Mean of member gaps on uniform weights.
    gap_randomized: f64,
    members: usize,
}

fn train(config: &Path, out: &Path, trace: Option<&Path>) -> Result<()> {
    let cfg = TrainConfig::load(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    let d = cfg.data.load().context("loading training data")?;
    let mut sink = trace.map(|p| output(Some(p))).transpose()?;
    let (model, diag) = robust_train_observed(&d, &cfg.meta, |t, run| {
        if let Some(w) = sink.as_mut() {
            for record in &run.trace.records {
                serde_json::to_writer(
                    &mut *w,
                    &TraceLine {
                        outer_round: t,
                        record,
                    },
                )?;
                w.write_all(b"\n").map_err(|source| robustfair::Error::Io {
                    path: trace.unwrap_or(Path::new("")).to_path_buf(),
                    source,
                })?;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = sink {
        w.flush().context("flushing trace")?;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Model::Ensemble(model).save(out.join("model.json"))?;
    write_json(&out.join("diagnostics.json"), &diag)?;
    let schema = match &cfg.data {
        DataSource::Csv { schema, .. } => schema.pinned_to(&d),
        DataSource::Planted(_) => Schema::new("label", "protected").pinned_to(&d),
    };
    write_json(&out.join(SCHEMA_FILE), &schema)?;
    log::info!(
        "trained on {} rows; robust loss {:.4}, unweighted gap {:.4}",
        d.len(),
        diag.final_robust_loss,
        diag.gap_mixture
    );
    Ok(())
}

fn attack(input: &ModelInput, eps: f64, out: Option<&Path>) -> Result<()> {
    let (model, d) = input.load()?;
    let probs = model.predict_probs(&d)?;
    let res = attack_probs(&probs, &d, eps, input.notion)?;
    let names = d.group_names();
    let witness = Witness {
        epsilon: res.epsilon,
        pair: [&names[res.pair.0], &names[res.pair.1]],
        value: res.value,
        weights: &res.weights,
    };
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &witness)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn curve(input: &ModelInput, grid: &str, out: Option<&Path>) -> Result<()> {
    let (model, d) = input.load()?;
    let eps = parse_grid(grid)?;
    let points = attack_curve(&model, &d, &eps, input.notion)?;
    let mut w = output(out)?;
    writeln!(w, "eps,violation")?;
    for (e, v) in points {
        writeln!(w, "{e},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn experiment(config: &Path, out: Option<&Path>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    let report = run_experiment(&cfg)?;
    if report.rows.is_empty() {
        bail!("every seed failed; see the log for details");
    }
    let files = emit_curves(&report.rows, &cfg.out_dir)?;
    write_json(&cfg.out_dir.join("report.json"), &report)?;
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    if !report.failures.is_empty() {
        bail!(
            "{} of {} seeds failed",
            report.failures.len(),
            cfg.seeds.len()
        );
    }
    Ok(())
}

fn evaluate(input: &ModelInput) -> Result<()> {
    let (model, d) = input.load()?;
    let uniform = vec![1.0 / d.len() as f64; d.len()];
    let ensemble = model.clone().into_ensemble();
    let eval = Evaluation {
        n: d.len(),
        notion: input.notion,
        accuracy: accuracy(&model, &d)?,
        gap: gap_mixture(&ensemble, &d, &uniform, input.notion)?,
        gap_randomized: gap_randomized(&ensemble, &d, &uniform, input.notion)?,
        members: ensemble.len(),
    };
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

fn synth(n: usize, seed: u64, shift: Option<f64>, out: &Path) -> Result<()> {
    let mut cfg = PlantedConfig::new(n, seed);
    if let Some(s) = shift {
        cfg.shift = s;
    }
    let d = planted(&cfg)?;
    write_csv(&d, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, trace } => train(&config, &out, trace.as_deref()),
        Command::Attack { input, eps, out } => attack(&input, eps, out.as_deref()),
        Command::Curve {
            input,
            eps_grid,
            out,
        } => curve(&input, &eps_grid, out.as_deref()),
        Command::Experiment { config, out } => experiment(&config, out.as_deref()),
        Command::Evaluate { input } => evaluate(&input),
        Command::Synth {
            n,
            seed,
            shift,
            out,
        } => synth(n, seed, shift, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
