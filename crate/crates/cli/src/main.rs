use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gaws_core::gamlss::Criterion;
use gaws_core::metrics::{overall, summarize};
use gaws_core::model_space::FeedbackLabel;
use gaws_core::pipeline::{
    apply_feedback, benchmark_experiment, detect, fmt17, ingest, load_space, read_labels, read_run,
    score_against_labels, score_one, write_benchmark, write_dataset, write_detection, FamilyEntry,
    PipelineConfig, RANKING_FILE,
};
use gaws_core::presets::experiment_family_names;
use gaws_core::simulation::{build_experiment, ExperimentId, SimConfig};
use gaws_core::GawsError;

/// Exit code for an empty null model space.
const EXIT_DEGENERATE: u8 = 2;
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "gaws", version, about = "Rank anomalous time series in a collection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit every family to every series, build the model space and rank.
    Detect(DetectArgs),
    /// Generate a labelled synthetic collection.
    Simulate(SimulateArgs),
    /// Score rankings against labels, on a dataset or on fresh simulations.
    Benchmark(BenchmarkArgs),
    /// Score new series against a stored model space.
    ScoreOne(ScoreOneArgs),
    /// Record a false positive or false negative in a stored model space.
    Feedback(FeedbackArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CriterionArg {
    Aic,
    Bic,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Aic => Criterion::Aic,
            CriterionArg::Bic => Criterion::Bic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelArg {
    Fp,
    Fn,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Minimum number of series supporting a null family.
    #[arg(long)]
    nmin: Option<usize>,
    /// Target precision for the flagged set.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fitting threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Comma separated family presets, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
}

impl Common {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if self.nmin.is_some() {
            cfg.n_min = self.nmin;
        }
        if self.rho.is_some() {
            cfg.rho = self.rho;
        }
        if let Some(k) = self.top_k {
            cfg.top_k = k;
        }
        if let Some(c) = self.criterion {
            cfg.criterion = c.into();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(f) = &self.families {
            cfg.families = f.iter().map(|n| FamilyEntry::Preset(n.clone())).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// True when neither the flags nor a config file chose the families.
    fn families_unset(&self) -> anyhow::Result<bool> {
        if self.families.is_some() {
            return Ok(false);
        }
        match &self.config {
            None => Ok(true),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
                let table: toml::Table = text.parse().map_err(|e| GawsError::Config(format!("{e}")))?;
                Ok(!table.contains_key("families"))
            }
        }
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with columns series_id,timestamp,value.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for the reports.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    experiment: ExperimentId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_series: usize,
    #[arg(long, default_value_t = 504)]
    n_hours: usize,
    #[arg(long, default_value_t = 10)]
    anomalies: usize,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory (dataset.csv and labels.csv) or dataset CSV.
    #[arg(long, conflicts_with = "experiment")]
    input: Option<PathBuf>,
    /// Labels CSV, when `--input` is a file.
    #[arg(long, requires = "input")]
    labels: Option<PathBuf>,
    /// Simulate this experiment instead of reading a dataset.
    #[arg(long)]
    experiment: Option<ExperimentId>,
    #[arg(long, default_value_t = 3)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    n_series: usize,
    #[arg(long, default_value_t = 504)]
    n_hours: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreOneArgs {
    /// Output directory of an earlier `detect` run.
    #[arg(long)]
    space: PathBuf,
    /// CSV with the new series.
    #[arg(long)]
    input: PathBuf,
    /// Score only this series from the input.
    #[arg(long)]
    series: Option<String>,
    /// Write the scores here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeedbackArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    series: String,
    #[arg(long, value_enum)]
    label: LabelArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<GawsError>().map_or("Error", GawsError::kind);
            let record = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{record}");
            if kind == "DegenerateSpace" {
                ExitCode::from(EXIT_DEGENERATE)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Detect(a) => run_detect(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Benchmark(a) => run_benchmark(a),
        Command::ScoreOne(a) => run_score_one(a),
        Command::Feedback(a) => run_feedback(a),
    }
}

fn run_detect(a: DetectArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.load()?;
    if a.input.is_some() {
        cfg.input = a.input;
    }
    if a.output.is_some() {
        cfg.output = a.output;
    }
    let (Some(input), Some(output)) = (cfg.input.clone(), cfg.output.clone()) else {
        bail!(GawsError::Config("both an input file and an output directory are required".into()));
    };
    let data = ingest(&input).with_context(|| format!("reading {}", input.display()))?;
    let d = detect(&data.series, &data.regressors, &cfg)?;
    write_detection(&d, &cfg, &output).with_context(|| format!("writing {}", output.display()))?;
    println!(
        "ranked {} series, {} anomalous; null families: {}",
        d.ranking.len(),
        d.ranking.iter().filter(|r| r.is_anomalous).count(),
        d.space.null_families.iter().cloned().collect::<Vec<_>>().join(", ")
    );
    for f in &d.failures {
        eprintln!("warning: {} / {} not fitted: {}", f.series_id, f.family, f.error);
    }
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let sim = SimConfig {
        n_series: a.n_series,
        n_hours: a.n_hours,
        n_anomalies: a.anomalies,
        ..SimConfig::default()
    };
    let ds = build_experiment(a.experiment, &sim, a.seed)?;
    write_dataset(&ds, a.seed, a.n_hours, &a.output)?;
    println!(
        "{}: {} series, {} anomalies written to {}",
        a.experiment,
        ds.series.len(),
        ds.anomaly_ids().len(),
        a.output.display()
    );
    Ok(())
}

fn run_benchmark(a: BenchmarkArgs) -> anyhow::Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(input) = &a.input {
        let (data_path, labels_path) = dataset_paths(input, a.labels.as_deref());
        let data = ingest(&data_path).with_context(|| format!("reading {}", data_path.display()))?;
        let labels = read_labels(&labels_path).with_context(|| format!("reading {}", labels_path.display()))?;
        let d = detect(&data.series, &data.regressors, &cfg)?;
        let report = score_against_labels(&d, &labels, cfg.top_k)?;
        if let Some(out) = &a.output {
            write_detection(&d, &cfg, out)?;
            fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
        }
        match report.metrics {
            Some(m) => println!(
                "precision {} recall {} f {} relative_f {} excess_rank {}",
                fmt17(m.precision),
                fmt17(m.recall),
                fmt17(m.f_score),
                fmt17(m.relative_f_score),
                fmt17(m.excess_rank)
            ),
            None => println!("no labelled anomalies; metrics undefined"),
        }
        return Ok(());
    }
    let Some(id) = a.experiment else {
        bail!(GawsError::Config("benchmark needs --input or --experiment".into()));
    };
    if a.common.families_unset()? {
        cfg = cfg.with_family_names(experiment_family_names(id));
    }
    let sim = SimConfig {
        n_series: a.n_series,
        n_hours: a.n_hours,
        ..SimConfig::default()
    };
    let reps = benchmark_experiment(id, &sim, &a.counts, a.replicates, cfg.seed, &cfg)?;
    if let Some(out) = &a.output {
        fs::create_dir_all(out)?;
        write_benchmark(&reps, &out.join("benchmark.csv"))?;
    }
    let reports: Vec<_> = reps.iter().map(|r| r.report.clone()).collect();
    println!("experiment n_anomalies replicates mean_relative_f mean_abs_excess_rank");
    for row in summarize(&reports) {
        println!(
            "{id} {} {} {} {}",
            row.n_anomalies,
            row.replicates,
            fmt17(row.mean_relative_f),
            fmt17(row.mean_abs_excess_rank)
        );
    }
    if let Some((f, e)) = overall(&reports) {
        println!("{id} all {} {} {}", reports.len(), fmt17(f), fmt17(e));
    }
    Ok(())
}

fn dataset_paths(input: &Path, labels: Option<&Path>) -> (PathBuf, PathBuf) {
    if input.is_dir() {
        let l = labels.map_or_else(|| input.join("labels.csv"), Path::to_path_buf);
        (input.join("dataset.csv"), l)
    } else {
        let l = labels.map_or_else(
            || input.with_file_name("labels.csv"),
            Path::to_path_buf,
        );
        (input.to_path_buf(), l)
    }
}

fn run_score_one(a: ScoreOneArgs) -> anyhow::Result<()> {
    let space = load_space(&a.space).with_context(|| format!("loading {}", a.space.display()))?;
    let run = read_run(&a.space).with_context(|| format!("loading {}", a.space.display()))?;
    let data = ingest(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let chosen: Vec<_> = data
        .series
        .iter()
        .filter(|s| a.series.as_ref().is_none_or(|id| &s.id == id))
        .collect();
    if chosen.is_empty() {
        bail!(GawsError::UnknownSeries(a.series.unwrap_or_default()));
    }
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "series_id,score,log_score,alt_score,best_family,is_anomalous")?;
    for s in chosen {
        let r = score_one(&space, s, &data.regressors, &run.config.fit, run.grand_mean)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.series_id,
            fmt17(r.score),
            fmt17(r.log_score),
            fmt17(r.alt_score),
            r.best_family(),
            r.is_anomalous
        )?;
    }
    out.flush()?;
    Ok(())
}

fn run_feedback(a: FeedbackArgs) -> anyhow::Result<()> {
    let label = match a.label {
        LabelArg::Fp => FeedbackLabel::Fp,
        LabelArg::Fn => FeedbackLabel::Fn,
    };
    let space = apply_feedback(&a.space, &a.series, label)?;
    println!(
        "{} recorded for {}; {} anomalous series; {} rewritten",
        match label {
            FeedbackLabel::Fp => "false positive",
            FeedbackLabel::Fn => "false negative",
        },
        a.series,
        space.anomalous_series.len(),
        RANKING_FILE
    );
    Ok(())
}
