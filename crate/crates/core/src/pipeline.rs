//! Batch detection: ingest, fit every (series, family) pair, build the model
//! space, score, rank and write reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::RegressorMatrix;
use crate::distributions::quantile_residuals;
use crate::error::{GawsError, Result};
use crate::gamlss::{fit, Criterion, FitConfig, FittedModel, ModelFamilySpec};
use crate::metrics::{self, MetricsReport};
use crate::model_space::{
    bin_coefficients, construct_model_space, default_n_min, precision_control,
    BinConfig, FeedbackLabel, ModelSpace, ModelSpaceManifest, ScoreRecord, DEFAULT_ALPHA,
};
use crate::presets::{experiment_family_names, preset};
use crate::series::TimeSeriesSample;
use crate::simulation::{build_experiment, ExperimentId, Label, LabeledDataset, SimConfig};
use crate::special::{std_normal_cdf, std_normal_quantile};

/// Version tag written at the top of every output file.
pub const SCHEMA_VERSION: u32 = 1;

pub const RANKING_FILE: &str = "ranking.csv";
pub const MANIFEST_FILE: &str = "model_space.toml";
pub const MODELS_FILE: &str = "models.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const WORM_FILE: &str = "worm.csv";
pub const BINNED_DIR: &str = "binned";
pub const RUN_FILE: &str = "run.toml";

/// Families used when a configuration names none.
pub const DEFAULT_FAMILIES: [&str; 8] = [
    "seasonal-bccg",
    "seasonal-gamma",
    "seasonal-logt",
    "level-pulse",
    "ar",
    "step",
    "rw-drift",
    "scale-trend",
];

/// `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// A family given by preset name or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyEntry {
    Preset(String),
    Custom(ModelFamilySpec),
}

impl FamilyEntry {
    pub fn resolve(&self) -> Result<ModelFamilySpec> {
        match self {
            FamilyEntry::Preset(name) => preset(name),
            FamilyEntry::Custom(spec) => {
                let spec = spec.clone().fill_intercepts();
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub families: Vec<FamilyEntry>,
    pub alpha: f64,
    /// Defaults to `max(5, ⌈0.02 · #series⌉)`.
    pub n_min: Option<usize>,
    pub rho: Option<f64>,
    pub top_k: usize,
    pub criterion: Criterion,
    pub rescale_means: bool,
    pub seed: u64,
    /// Fitting threads; 0 uses every available core.
    pub workers: usize,
    pub fit: FitConfig,
    pub bins: BinConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            output: None,
            families: DEFAULT_FAMILIES
                .iter()
                .map(|s| FamilyEntry::Preset(s.to_string()))
                .collect(),
            alpha: DEFAULT_ALPHA,
            n_min: None,
            rho: None,
            top_k: metrics::DEFAULT_TOP_K,
            criterion: Criterion::Aic,
            rescale_means: true,
            seed: 0,
            workers: 0,
            fit: FitConfig::default(),
            bins: BinConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| GawsError::Config(format!("{}: {e}", path.display())))
    }

    pub fn with_family_names(mut self, names: &[&str]) -> Self {
        self.families = names.iter().map(|s| FamilyEntry::Preset(s.to_string())).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(GawsError::Config("at least one model family is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GawsError::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.n_min == Some(0) {
            return Err(GawsError::Config("n_min must be at least 1".into()));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(GawsError::Config(format!("rho must be in (0, 1), got {rho}")));
            }
        }
        if self.top_k == 0 {
            return Err(GawsError::Config("top_k must be at least 1".into()));
        }
        self.fit.validate()
    }

    pub fn resolved_families(&self) -> Result<Vec<ModelFamilySpec>> {
        let specs: Vec<ModelFamilySpec> = self.families.iter().map(FamilyEntry::resolve).collect::<Result<_>>()?;
        let mut names = BTreeSet::new();
        for s in &specs {
            if !names.insert(s.name.as_str()) {
                return Err(GawsError::Config(format!("family '{}' is listed twice", s.name)));
            }
        }
        Ok(specs)
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            criterion: self.criterion,
            ..self.fit.clone()
        }
    }
}

/// Series on a common grid with the calendar regressors of that grid.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub series: Vec<TimeSeriesSample>,
    pub regressors: RegressorMatrix,
    pub timestamps: Vec<NaiveDateTime>,
    pub step_seconds: i64,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    for f in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads `series_id,timestamp,value` rows onto their union time grid.
pub fn ingest(path: &Path) -> Result<Ingested> {
    let file = fs::File::open(path)?;
    ingest_reader(file)
}

pub fn ingest_reader<R: std::io::Read>(reader: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    if header != ["series_id", "timestamp", "value"] {
        return Err(GawsError::MalformedRow {
            line: 1,
            reason: format!("expected header series_id,timestamp,value, found {}", header.join(",")),
        });
    }
    let mut raw: BTreeMap<String, BTreeMap<NaiveDateTime, Option<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: String| GawsError::MalformedRow { line, reason };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(bad("empty series_id".into()));
        }
        let ts = parse_timestamp(&rec[1]).ok_or_else(|| bad(format!("unparseable timestamp '{}'", &rec[1])))?;
        let value = match &rec[2] {
            "" | "NA" | "NaN" | "nan" => None,
            v => {
                let x: f64 = v.parse().map_err(|_| bad(format!("non-numeric value '{v}'")))?;
                if !x.is_finite() {
                    return Err(bad(format!("non-finite value '{v}'")));
                }
                Some(x)
            }
        };
        if raw.entry(id.clone()).or_default().insert(ts, value).is_some() {
            return Err(bad(format!("duplicate timestamp {ts} for series '{id}'")));
        }
    }
    if raw.is_empty() {
        return Err(GawsError::EmptySeries("<input>".into()));
    }
    for (id, obs) in &raw {
        if obs.values().all(Option::is_none) {
            return Err(GawsError::EmptySeries(id.clone()));
        }
    }

    let stamps: BTreeSet<NaiveDateTime> = raw.values().flat_map(|m| m.keys().copied()).collect();
    let stamps: Vec<NaiveDateTime> = stamps.into_iter().collect();
    let step = if stamps.len() < 2 {
        3600
    } else {
        let gaps: Vec<i64> = stamps.windows(2).map(|w| (w[1] - w[0]).num_seconds()).collect();
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for &g in &gaps {
            *counts.entry(g).or_default() += 1;
        }
        let modal = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&g, _)| g)
            .unwrap_or(3600);
        if modal <= 0 {
            return Err(GawsError::InconsistentFrequency("timestamps do not advance".into()));
        }
        let off = gaps.iter().filter(|&&g| g % modal != 0).count();
        if off as f64 > 0.05 * gaps.len() as f64 {
            return Err(GawsError::InconsistentFrequency(format!(
                "{off} of {} spacings are not multiples of the modal spacing of {modal} s",
                gaps.len()
            )));
        }
        modal
    };
    let start = stamps[0];
    let end = *stamps.last().unwrap_or(&start);
    let n = ((end - start).num_seconds() as f64 / step as f64).round() as usize + 1;
    let slot = |t: NaiveDateTime| ((t - start).num_seconds() as f64 / step as f64).round() as usize;

    let mut series = Vec::with_capacity(raw.len());
    for (id, obs) in raw {
        let mut values = vec![None; n];
        for (t, v) in obs {
            let i = slot(t);
            if values[i].is_some() && v.is_some() {
                return Err(GawsError::InconsistentFrequency(format!(
                    "series '{id}' has two observations in the grid slot at {t}"
                )));
            }
            values[i] = values[i].or(v);
        }
        series.push(TimeSeriesSample::new(id, values));
    }
    let timestamps: Vec<NaiveDateTime> = (0..n).map(|i| start + Duration::seconds(step * i as i64)).collect();
    let regressors = RegressorMatrix {
        time_index: (0..n).collect(),
        hour_of_day: timestamps.iter().map(|t| t.hour() as u8).collect(),
        day_of_week: timestamps.iter().map(|t| t.weekday().number_from_monday() as u8).collect(),
        pulse_indicators: None,
    };
    Ok(Ingested {
        series,
        regressors,
        timestamps,
        step_seconds: step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub series_id: String,
    pub family: String,
    pub error: String,
}

/// Fits every family to every series on `workers` threads. Results are in
/// (series id, family order) regardless of scheduling.
pub fn fit_all(
    series: &[TimeSeriesSample],
    x: &RegressorMatrix,
    families: &[ModelFamilySpec],
    cfg: &FitConfig,
    workers: usize,
) -> Result<(Vec<FittedModel>, Vec<FitFailure>)> {
    let tasks: Vec<(usize, usize)> = (0..series.len())
        .flat_map(|s| (0..families.len()).map(move |f| (s, f)))
        .collect();
    let run = || -> Vec<Result<FittedModel>> {
        tasks
            .par_iter()
            .map(|&(s, f)| fit(&series[s], x, &families[f], cfg))
            .collect()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| GawsError::Config(format!("cannot start {workers} workers: {e}")))?
        .install(run);

    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (&(s, f), r) in tasks.iter().zip(results) {
        match r {
            Ok(m) => models.push(m),
            Err(e) => failures.push(FitFailure {
                series_id: series[s].id.clone(),
                family: families[f].name.clone(),
                error: e.to_string(),
            }),
        }
    }
    let fitted: BTreeSet<&str> = models.iter().map(|m| m.series_id.as_str()).collect();
    if let Some(s) = series.iter().find(|s| !fitted.contains(s.id.as_str())) {
        let why = failures
            .iter()
            .find(|f| f.series_id == s.id)
            .map_or_else(String::new, |f| f.error.clone());
        return Err(GawsError::InvalidArgument(format!(
            "no family could be fitted to series '{}': {why}",
            s.id
        )));
    }
    let order: BTreeMap<&str, usize> = families.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    models.sort_by(|a, b| {
        a.series_id
            .cmp(&b.series_id)
            .then(order[a.family_name()].cmp(&order[b.family_name()]))
    });
    Ok((models, failures))
}

/// Divides each series by its mean and multiplies by the grand mean of all
/// series means. Returns the rescaled series and the factor applied to each.
pub fn rescale_to_grand_mean(series: &[TimeSeriesSample]) -> Result<(Vec<TimeSeriesSample>, Vec<f64>)> {
    let means: Vec<f64> = series
        .iter()
        .map(|s| s.mean().ok_or_else(|| GawsError::EmptySeries(s.id.clone())))
        .collect::<Result<_>>()?;
    let grand = means.iter().sum::<f64>() / means.len().max(1) as f64;
    let factors: Vec<f64> = means
        .iter()
        .map(|&m| if m != 0.0 && grand != 0.0 { grand / m } else { 1.0 })
        .collect();
    Ok((
        series.iter().zip(&factors).map(|(s, &f)| s.scaled(f)).collect(),
        factors,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    pub series_id: String,
    pub scale_factor: f64,
    pub best_family: String,
    pub edf: f64,
    pub loglik: f64,
    pub penalized_nll: f64,
    pub converged: bool,
    pub n_obs: usize,
    /// Kolmogorov–Smirnov distance of the quantile residuals from N(0, 1).
    pub ks_statistic: f64,
}

/// One worm-plot point: a sorted quantile residual against its normal score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WormPoint {
    pub series_id: String,
    pub family: String,
    pub theoretical: f64,
    pub residual: f64,
}

/// Sorted residuals, their normal scores, and the KS distance.
pub fn residual_summary(residuals: &[f64]) -> (Vec<(f64, f64)>, f64) {
    let mut r: Vec<f64> = residuals.iter().copied().filter(|v| v.is_finite()).collect();
    r.sort_by(f64::total_cmp);
    let n = r.len() as f64;
    let mut ks: f64 = 0.0;
    let mut pairs = Vec::with_capacity(r.len());
    for (i, &v) in r.iter().enumerate() {
        let f = std_normal_cdf(v);
        ks = ks.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
        pairs.push((std_normal_quantile((i as f64 + 0.5) / n), v));
    }
    (pairs, ks)
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub space: ModelSpace,
    /// Every series, ranked.
    pub ranking: Vec<ScoreRecord>,
    pub diagnostics: Vec<SeriesDiagnostics>,
    pub worm: Vec<WormPoint>,
    pub failures: Vec<FitFailure>,
    /// Series flagged by the precision rule when `rho` is configured.
    pub flagged: Option<Vec<String>>,
    /// Common mean every series was rescaled to, if rescaling was on.
    pub grand_mean: Option<f64>,
}

impl Detection {
    pub fn ranked_ids(&self) -> Vec<String> {
        self.ranking.iter().map(|r| r.series_id.clone()).collect()
    }
}

/// Runs the whole detection pipeline in memory.
pub fn detect(series: &[TimeSeriesSample], x: &RegressorMatrix, cfg: &PipelineConfig) -> Result<Detection> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(GawsError::EmptySeries("<collection>".into()));
    }
    let families = cfg.resolved_families()?;
    let (work, factors) = if cfg.rescale_means {
        rescale_to_grand_mean(series)?
    } else {
        (series.to_vec(), vec![1.0; series.len()])
    };
    let grand_mean = cfg
        .rescale_means
        .then(|| series.iter().filter_map(TimeSeriesSample::mean).sum::<f64>() / series.len() as f64);
    let (models, failures) = fit_all(&work, x, &families, &cfg.fit_config(), cfg.workers)?;
    let n_min = cfg.n_min.unwrap_or_else(|| default_n_min(series.len()));
    let space = construct_model_space(models, cfg.alpha, n_min)?;
    let ranking = space.ranking()?;
    let flagged = cfg.rho.map(|rho| precision_control(&ranking, rho)).transpose()?;

    let by_id: BTreeMap<&str, (&TimeSeriesSample, f64)> = work
        .iter()
        .zip(&factors)
        .map(|(s, &f)| (s.id.as_str(), (s, f)))
        .collect();
    let mut diagnostics = Vec::with_capacity(series.len());
    let mut worm = Vec::new();
    for id in space.series_ids() {
        let models = space.models_for(id)?;
        let best = models
            .iter()
            .min_by(|a, b| a.penalized_nll.total_cmp(&b.penalized_nll))
            .expect("every series has a model");
        let (sample, factor) = by_id[id.as_str()];
        let residuals: Vec<f64> = match &best.fitted {
            Some(p) => quantile_residuals(&best.spec.distribution()?, &sample.values, p)?
                .into_iter()
                .map(|(_, r)| r)
                .collect(),
            None => Vec::new(),
        };
        let (pairs, ks) = residual_summary(&residuals);
        worm.extend(pairs.into_iter().map(|(theoretical, residual)| WormPoint {
            series_id: id.clone(),
            family: best.family_name().to_string(),
            theoretical,
            residual,
        }));
        diagnostics.push(SeriesDiagnostics {
            series_id: id.clone(),
            scale_factor: factor,
            best_family: best.family_name().to_string(),
            edf: best.edf,
            loglik: best.loglik,
            penalized_nll: best.penalized_nll,
            converged: best.converged,
            n_obs: best.n_obs,
            ks_statistic: ks,
        });
    }
    Ok(Detection {
        space,
        ranking,
        diagnostics,
        worm,
        failures,
        flagged,
        grand_mean,
    })
}

fn create(path: &Path, schema: &str) -> Result<BufWriter<fs::File>> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# gaws {schema} schema v{SCHEMA_VERSION}")?;
    Ok(w)
}

fn csv_writer(path: &Path, schema: &str) -> Result<csv::Writer<BufWriter<fs::File>>> {
    Ok(csv::Writer::from_writer(create(path, schema)?))
}

pub fn write_ranking(ranking: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path, "ranking")?;
    w.write_record(["series_id", "score", "alt_score", "log_score", "rank", "is_anomalous"])?;
    for r in ranking {
        w.write_record([
            r.series_id.clone(),
            fmt17(r.score),
            fmt17(r.alt_score),
            fmt17(r.log_score),
            r.rank.to_string(),
            r.is_anomalous.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Series ids and flags from a written ranking, in rank order.
pub fn read_ranking(path: &Path) -> Result<Vec<(String, f64, bool)>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: &str| GawsError::MalformedRow {
            line,
            reason: reason.to_string(),
        };
        let score = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad score"))?;
        let flag = rec.get(5).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad flag"))?;
        rows.push((rec.get(0).unwrap_or_default().to_string(), score, flag));
    }
    Ok(rows)
}

pub fn write_models(models: &[FittedModel], path: &Path) -> Result<()> {
    let mut w = create(path, "models")?;
    for m in models {
        serde_json::to_writer(&mut w, m)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_models(path: &Path) -> Result<Vec<FittedModel>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_manifest(manifest: &ModelSpaceManifest, path: &Path) -> Result<()> {
    let mut w = create(path, "model-space")?;
    let text = toml::to_string(manifest).map_err(|e| GawsError::Config(e.to_string()))?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<ModelSpaceManifest> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| GawsError::Config(format!("{}: {e}", path.display())))
}

/// Loads a model space written by [`write_detection`].
pub fn load_space(dir: &Path) -> Result<ModelSpace> {
    let models = read_models(&dir.join(MODELS_FILE))?;
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    ModelSpace::from_manifest(models, &manifest)
}

fn write_diagnostics(d: &Detection, dir: &Path) -> Result<()> {
    let mut w = csv_writer(&dir.join(DIAGNOSTICS_FILE), "diagnostics")?;
    w.write_record([
        "series_id",
        "scale_factor",
        "best_family",
        "edf",
        "loglik",
        "penalized_nll",
        "converged",
        "n_obs",
        "ks_statistic",
    ])?;
    for r in &d.diagnostics {
        w.write_record([
            r.series_id.clone(),
            fmt17(r.scale_factor),
            r.best_family.clone(),
            fmt17(r.edf),
            fmt17(r.loglik),
            fmt17(r.penalized_nll),
            r.converged.to_string(),
            r.n_obs.to_string(),
            fmt17(r.ks_statistic),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(WORM_FILE), "worm")?;
    w.write_record(["series_id", "family", "theoretical_quantile", "residual"])?;
    for p in &d.worm {
        w.write_record([p.series_id.clone(), p.family.clone(), fmt17(p.theoretical), fmt17(p.residual)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_binned(space: &ModelSpace, cfg: &BinConfig, dir: &Path) -> Result<()> {
    let dir = dir.join(BINNED_DIR);
    fs::create_dir_all(&dir)?;
    let mut groups: BTreeMap<&str, [Vec<&FittedModel>; 2]> = BTreeMap::new();
    for (i, m) in space.all_models.iter().enumerate() {
        let slot = usize::from(!space.null_models.contains(&i));
        groups.entry(m.family_name()).or_default()[slot].push(m);
    }
    for (family, sets) in groups {
        let mut w = csv_writer(&dir.join(format!("{family}.csv")), "binned")?;
        w.write_record(["space", "position", "bin", "lower", "upper", "count"])?;
        for (label, models) in ["null", "alt"].iter().zip(&sets) {
            if models.is_empty() {
                continue;
            }
            for h in bin_coefficients(models, cfg)?.coefficients {
                for (b, c) in h.counts.iter().enumerate() {
                    w.write_record([
                        label.to_string(),
                        h.position.to_string(),
                        b.to_string(),
                        fmt17(h.edges[b]),
                        fmt17(h.edges[b + 1]),
                        c.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Run-level record written next to the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub n_series: usize,
    pub n_models: usize,
    pub n_anomalous: usize,
    pub grand_mean: Option<f64>,
    pub flagged: Option<Vec<String>>,
    pub failures: Vec<FitFailure>,
    pub config: PipelineConfig,
}

/// Writes every report of a detection run into `dir`.
pub fn write_detection(d: &Detection, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_ranking(&d.ranking, &dir.join(RANKING_FILE))?;
    write_manifest(&d.space.manifest(), &dir.join(MANIFEST_FILE))?;
    write_models(&d.space.all_models, &dir.join(MODELS_FILE))?;
    write_diagnostics(d, dir)?;
    write_binned(&d.space, &cfg.bins, dir)?;
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        n_series: d.ranking.len(),
        n_models: d.space.all_models.len(),
        n_anomalous: d.ranking.iter().filter(|r| r.is_anomalous).count(),
        grand_mean: d.grand_mean,
        flagged: d.flagged.clone(),
        failures: d.failures.clone(),
        config: cfg.clone(),
    };
    let mut w = create(&dir.join(RUN_FILE), "run")?;
    w.write_all(
        toml::to_string(&record)
            .map_err(|e| GawsError::Config(e.to_string()))?
            .as_bytes(),
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_run(dir: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(dir.join(RUN_FILE))?;
    toml::from_str(&text).map_err(|e| GawsError::Config(format!("{}: {e}", RUN_FILE)))
}

/// Fits the families of a stored space to one new series and scores it.
/// The series is rescaled to `target_mean` when given.
pub fn score_one(
    space: &ModelSpace,
    sample: &TimeSeriesSample,
    x: &RegressorMatrix,
    fit_cfg: &FitConfig,
    target_mean: Option<f64>,
) -> Result<ScoreRecord> {
    let sample = match (target_mean, sample.mean()) {
        (Some(t), Some(m)) if m != 0.0 => sample.scaled(t / m),
        (_, None) => return Err(GawsError::EmptySeries(sample.id.clone())),
        _ => sample.clone(),
    };
    let mut specs: BTreeMap<&str, &ModelFamilySpec> = BTreeMap::new();
    for m in &space.all_models {
        specs.entry(m.family_name()).or_insert(&m.spec);
    }
    let cfg = FitConfig {
        criterion: space.criterion,
        ..fit_cfg.clone()
    };
    let models: Vec<FittedModel> = specs.values().filter_map(|s| fit(&sample, x, s, &cfg).ok()).collect();
    if models.is_empty() {
        return Err(GawsError::InvalidArgument(format!(
            "no stored family could be fitted to series '{}'",
            sample.id
        )));
    }
    let refs: Vec<&FittedModel> = models.iter().collect();
    let mut record = space.score_new(&refs)?;
    record.is_anomalous = record.score < space.alpha;
    Ok(record)
}

/// Applies one feedback label to a stored space and rewrites its manifest
/// and ranking.
pub fn apply_feedback(dir: &Path, series_id: &str, label: FeedbackLabel) -> Result<ModelSpace> {
    let mut space = load_space(dir)?;
    space.feedback_update(series_id, label)?;
    write_manifest(&space.manifest(), &dir.join(MANIFEST_FILE))?;
    write_ranking(&space.ranking()?, &dir.join(RANKING_FILE))?;
    Ok(space)
}

/// First timestamp of simulated data, a Monday at midnight.
pub fn simulation_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

/// Regressors matching [`simulation_epoch`] for `n` hourly points.
pub fn simulation_regressors(n: usize) -> RegressorMatrix {
    RegressorMatrix::hourly(n, 1, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub n_series: usize,
    pub n_hours: usize,
    pub n_anomalies: usize,
    pub subspaces: Vec<String>,
    /// Location generators of the normal series.
    pub generator_families: Vec<String>,
    /// Families the experiment is meant to be analysed with.
    pub fitted_families: Vec<String>,
}

/// Writes `dataset.csv`, `labels.csv`, `metadata.jsonl` and `experiment.toml`.
pub fn write_dataset(ds: &LabeledDataset, seed: u64, n_hours: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let epoch = simulation_epoch();
    let mut w = csv_writer(&dir.join("dataset.csv"), "dataset")?;
    w.write_record(["series_id", "timestamp", "value"])?;
    for s in &ds.series {
        for (t, v) in s.values.iter().enumerate() {
            let ts = (epoch + Duration::hours(t as i64)).format("%Y-%m-%dT%H:%M:%S").to_string();
            w.write_record([s.id.clone(), ts, v.map(fmt17).unwrap_or_default()])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("labels.csv"), "labels")?;
    w.write_record(["series_id", "label", "subspace"])?;
    for ((s, l), m) in ds.series.iter().zip(&ds.labels).zip(&ds.metadata) {
        let label = match l {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        };
        w.write_record([s.id.as_str(), label, m.subspace.as_str()])?;
    }
    w.flush()?;

    let mut w = create(&dir.join("metadata.jsonl"), "metadata")?;
    for (s, m) in ds.series.iter().zip(&ds.metadata) {
        serde_json::to_writer(&mut w, &serde_json::json!({ "series_id": s.id, "meta": m }))?;
        writeln!(w)?;
    }
    w.flush()?;

    let kinds: Vec<String> = ds
        .normal_location_kinds()
        .iter()
        .map(|k| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
        .collect();
    let record = ExperimentRecord {
        experiment: ds.experiment,
        seed,
        n_series: ds.series.len(),
        n_hours,
        n_anomalies: ds.anomaly_ids().len(),
        subspaces: ds.subspaces(),
        generator_families: kinds,
        fitted_families: experiment_family_names(ds.experiment).iter().map(|s| s.to_string()).collect(),
    };
    let mut w = create(&dir.join("experiment.toml"), "experiment")?;
    w.write_all(
        toml::to_string(&record)
            .map_err(|e| GawsError::Config(e.to_string()))?
            .as_bytes(),
    )?;
    w.flush()?;
    Ok(())
}

/// Reads `series_id,label[,...]` with labels `normal` or `anomaly`.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let label = match rec.get(1).map(str::trim) {
            Some("normal") => Label::Normal,
            Some("anomaly") => Label::Anomaly,
            other => {
                return Err(GawsError::MalformedRow {
                    line,
                    reason: format!("label must be normal or anomaly, found {other:?}"),
                })
            }
        };
        out.insert(rec.get(0).unwrap_or_default().trim().to_string(), label);
    }
    Ok(out)
}

/// Metrics of a detection against labels covering exactly its series.
pub fn score_against_labels(
    d: &Detection,
    labels: &BTreeMap<String, Label>,
    top_k: usize,
) -> Result<MetricsReport> {
    let ranked = d.ranked_ids();
    let ids: BTreeSet<&String> = ranked.iter().collect();
    if ids.len() != labels.len() || labels.keys().any(|k| !ids.contains(k)) {
        return Err(GawsError::LabelMismatch(format!(
            "{} labelled series, {} ranked series",
            labels.len(),
            ranked.len()
        )));
    }
    let truth: BTreeSet<String> = labels
        .iter()
        .filter(|(_, &l)| l == Label::Anomaly)
        .map(|(k, _)| k.clone())
        .collect();
    metrics::evaluate(&ranked, &truth, top_k.min(ranked.len()))
}

/// One simulated replicate pushed through detection.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub n_anomalies: usize,
    pub report: MetricsReport,
    /// Scores of the injected anomalies.
    pub anomaly_scores: Vec<f64>,
}

/// Detection settings for simulated collections. Unless set explicitly, the
/// family support threshold is the smallest simulated subspace, so a family
/// carried only by injected anomalies cannot pass it.
pub fn benchmark_config(cfg: &PipelineConfig, sim: &SimConfig) -> PipelineConfig {
    PipelineConfig {
        n_min: cfg.n_min.or(Some(sim.min_subspace_size.max(1))),
        ..cfg.clone()
    }
}

/// Simulates one experiment and scores the detection against its labels.
pub fn run_replicate(id: ExperimentId, sim: &SimConfig, seed: u64, cfg: &PipelineConfig) -> Result<Replicate> {
    let ds = build_experiment(id, sim, seed)?;
    let x = simulation_regressors(sim.n_hours);
    let cfg = benchmark_config(cfg, sim);
    let d = detect(&ds.series, &x, &cfg)?;
    let labels: BTreeMap<String, Label> = ds
        .series
        .iter()
        .zip(&ds.labels)
        .map(|(s, &l)| (s.id.clone(), l))
        .collect();
    let report = score_against_labels(&d, &labels, cfg.top_k)?;
    let anomalies: BTreeSet<String> = ds.anomaly_ids().into_iter().collect();
    let anomaly_scores = d
        .ranking
        .iter()
        .filter(|r| anomalies.contains(&r.series_id))
        .map(|r| r.score)
        .collect();
    Ok(Replicate {
        experiment: id,
        seed,
        n_anomalies: report.n_anomalies,
        report,
        anomaly_scores,
    })
}

/// Replicate seed derived from a base seed, anomaly count and replicate index.
pub fn replicate_seed(base: u64, n_anomalies: usize, replicate: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add(n_anomalies as u64 * 1_000)
        .wrapping_add(replicate as u64)
}

/// Runs `replicates` simulations for each anomaly count.
pub fn benchmark_experiment(
    id: ExperimentId,
    sim: &SimConfig,
    counts: &[usize],
    replicates: usize,
    base_seed: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<Replicate>> {
    let mut out = Vec::with_capacity(counts.len() * replicates);
    for &k in counts {
        for r in 0..replicates {
            let sim = SimConfig {
                n_anomalies: k,
                ..sim.clone()
            };
            out.push(run_replicate(id, &sim, replicate_seed(base_seed, k, r), cfg)?);
        }
    }
    Ok(out)
}

pub fn write_benchmark(replicates: &[Replicate], path: &Path) -> Result<()> {
    let mut w = csv_writer(path, "benchmark")?;
    w.write_record([
        "experiment",
        "seed",
        "n_anomalies",
        "precision",
        "recall",
        "f_score",
        "relative_f_score",
        "excess_rank",
    ])?;
    for r in replicates {
        let cells: Vec<String> = match r.report.metrics {
            Some(m) => [m.precision, m.recall, m.f_score, m.relative_f_score, m.excess_rank]
                .iter()
                .map(|&v| fmt17(v))
                .collect(),
            None => vec!["undefined".into(); 5],
        };
        let mut row = vec![r.experiment.to_string(), r.seed.to_string(), r.n_anomalies.to_string()];
        row.extend(cells);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: &[&str]) -> String {
        let mut s = String::from("series_id,timestamp,value\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn hourly(id: &str, n: usize, skip: &[usize]) -> Vec<String> {
        let epoch = simulation_epoch();
        (0..n)
            .filter(|t| !skip.contains(t))
            .map(|t| {
                let ts = (epoch + Duration::hours(t as i64)).format("%Y-%m-%dT%H:%M:%S");
                format!("{id},{ts},{}", 100 + t % 7)
            })
            .collect()
    }

    #[test]
    fn ingest_shared_grid() {
        let mut rows = hourly("a", 504, &[]);
        rows.extend(hourly("b", 504, &[]));
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let got = ingest_reader(csv(&refs).as_bytes()).unwrap();
        assert_eq!(got.series.len(), 2);
        assert!(got.series.iter().all(|s| s.len() == 504 && s.n_obs() == 504));
        assert_eq!(got.step_seconds, 3600);
        assert_eq!(got.regressors, simulation_regressors(504));
    }

    #[test]
    fn ingest_pads_missing_stamps() {
        let mut rows = hourly("a", 100, &[10, 11, 50]);
        rows.extend(hourly("b", 100, &[]));
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let got = ingest_reader(csv(&refs).as_bytes()).unwrap();
        let a = &got.series[0];
        assert_eq!(a.len(), 100);
        assert_eq!(a.n_obs(), 97);
        assert!(a.values[10].is_none() && a.values[11].is_none() && a.values[50].is_none());
    }

    #[test]
    fn ingest_errors() {
        let err = ingest_reader(csv(&["a,2024-01-01T00:00:00,1", "a,2024-01-01T01:00:00,abc"]).as_bytes())
            .unwrap_err();
        match err {
            GawsError::MalformedRow { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let err = ingest_reader(csv(&["a,2024-01-01T00:00:00,", "a,2024-01-01T01:00:00,"]).as_bytes()).unwrap_err();
        assert_eq!(err.kind(), "EmptySeries");
        let err = ingest_reader(csv(&["a,yesterday,1"]).as_bytes()).unwrap_err();
        assert_eq!(err.kind(), "MalformedRow");
        let irregular: Vec<String> = [0, 60, 120, 150, 170, 230, 290, 310]
            .iter()
            .map(|m| {
                let ts = simulation_epoch() + Duration::minutes(*m);
                format!("a,{},1", ts.format("%Y-%m-%dT%H:%M:%S"))
            })
            .collect();
        let refs: Vec<&str> = irregular.iter().map(String::as_str).collect();
        assert_eq!(ingest_reader(csv(&refs).as_bytes()).unwrap_err().kind(), "InconsistentFrequency");
        let dup = ingest_reader(csv(&["a,2024-01-01T00:00:00,1", "a,2024-01-01T00:00:00,2"]).as_bytes());
        assert_eq!(dup.unwrap_err().kind(), "MalformedRow");
        assert!(ingest_reader("id,time,value\n".as_bytes()).is_err());
    }

    #[test]
    fn timestamps_in_several_spellings() {
        for s in ["2024-01-01T05:00:00Z", "2024-01-01 05:00:00", "2024-01-01T05:00", "2024-01-01T07:00:00+02:00"] {
            assert_eq!(parse_timestamp(s).unwrap().hour(), 5, "{s}");
        }
    }

    #[test]
    fn rescaling_preserves_grand_mean() {
        let a = TimeSeriesSample::from_dense("a", &[1.0, 3.0]);
        let b = TimeSeriesSample::from_dense("b", &[10.0, 30.0]);
        let (out, f) = rescale_to_grand_mean(&[a, b]).unwrap();
        assert_eq!(out[0].mean(), Some(11.0));
        assert_eq!(out[1].mean(), Some(11.0));
        assert_eq!(f, vec![5.5, 0.55]);
    }

    #[test]
    fn ks_of_perfect_normal_scores_is_small() {
        let r: Vec<f64> = (0..1000).map(|i| std_normal_quantile((i as f64 + 0.5) / 1000.0)).collect();
        let (pairs, ks) = residual_summary(&r);
        assert!(ks <= 0.5 / 1000.0 + 1e-6, "{ks}");
        assert_eq!(pairs.len(), 1000);
        assert!((pairs[0].0 - pairs[0].1).abs() < 1e-9);
    }

    #[test]
    fn config_parses_presets_and_custom_families() {
        let text = r#"
            alpha = 0.01
            n_min = 3
            criterion = "bic"
            families = ["seasonal-bccg", { name = "flat", family = "normal", terms = { location = [{ kind = "intercept" }] } }]
        "#;
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        let fams = cfg.resolved_families().unwrap();
        assert_eq!(fams.len(), 2);
        assert_eq!(fams[1].name, "flat");
        assert_eq!(cfg.criterion, Criterion::Bic);
        assert!(toml::from_str::<PipelineConfig>("nonsense = 1").is_err());
        let dup = PipelineConfig::default().with_family_names(&["ar", "ar"]);
        assert!(dup.resolved_families().is_err());
    }

    #[test]
    fn formatting_has_seventeen_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt17(f64::NEG_INFINITY), "-inf");
        let back: f64 = fmt17(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }
}
