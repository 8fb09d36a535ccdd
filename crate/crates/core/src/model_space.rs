//! Null and alternative model spaces, Akaike-weight scores and ranking.
//!
//! A series' fitted models are compared through `Δ_M = PNLL_M − min PNLL`
//! and weights `π_M ∝ exp(−Δ_M / 2)`. Its anomaly score is the weight
//! carried by families represented in the null space 𝓜₀.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionFamily, Params};
use crate::error::{GawsError, Result};
use crate::gamlss::{Criterion, FittedModel};

/// Default plausibility and anomaly threshold.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// `max(5, ⌈0.02 · n_series⌉)`.
pub fn default_n_min(n_series: usize) -> usize {
    5.max((0.02 * n_series as f64).ceil() as usize)
}

/// `Δ_M = PNLL_M − min PNLL` over one series' models.
pub fn delta(models: &[&FittedModel]) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| GawsError::InvalidArgument("no models to compare".into()))?;
    if models.iter().any(|m| m.criterion != first.criterion) {
        return Err(GawsError::InvalidArgument(
            "models were scored under different criteria".into(),
        ));
    }
    let pnll: Vec<f64> = models.iter().map(|m| m.penalized_nll).collect();
    delta_from_pnll(&pnll)
}

/// [`delta`] on raw penalized NLL values.
pub fn delta_from_pnll(pnll: &[f64]) -> Result<Vec<f64>> {
    if pnll.is_empty() {
        return Err(GawsError::InvalidArgument("no models to compare".into()));
    }
    if let Some(v) = pnll.iter().find(|v| !v.is_finite()) {
        return Err(GawsError::InvalidArgument(format!("non-finite penalized NLL {v}")));
    }
    let min = pnll.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(pnll.iter().map(|v| v - min).collect())
}

/// Normalized `exp(−Δ/2)`. The minimum Δ is shifted to zero first, so large
/// deltas underflow only the weights that are negligible anyway.
pub fn akaike_weights(deltas: &[f64]) -> Vec<f64> {
    let min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = deltas.iter().map(|d| (-0.5 * (d - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

/// `ln Σ_{null} exp(−Δ/2) − ln Σ_{all} exp(−Δ/2)`; `−∞` when no model is null.
pub fn log_null_weight(deltas: &[f64], null: &[bool]) -> f64 {
    let lse = |it: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = it.collect();
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let num = lse(&mut deltas.iter().zip(null).filter(|(_, &n)| n).map(|(d, _)| -0.5 * d));
    let den = lse(&mut deltas.iter().map(|d| -0.5 * d));
    num - den
}

/// `(π_y, π*_y)` with `π_y` the total weight of null models.
pub fn series_score(weights: &[f64], null: &[bool]) -> (f64, f64) {
    let pi: f64 = weights.iter().zip(null).filter(|(_, &n)| n).map(|(w, _)| w).sum();
    let pi = pi.clamp(0.0, 1.0);
    (pi, 1.0 - pi)
}

/// Per-series scoring result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub series_id: String,
    /// Family names, aligned with the per-model vectors.
    pub families: Vec<String>,
    pub delta_per_model: Vec<f64>,
    pub weight_per_model: Vec<f64>,
    pub null_per_model: Vec<bool>,
    pub score: f64,
    pub alt_score: f64,
    /// `ln π_y`, finite even when `π_y` underflows.
    pub log_score: f64,
    /// 1-based; zero until ranked.
    pub rank: usize,
    pub is_anomalous: bool,
}

impl ScoreRecord {
    /// Scores one series' models against a set of null families.
    pub fn new(models: &[&FittedModel], null_families: &BTreeSet<String>) -> Result<Self> {
        let deltas = delta(models)?;
        let weights = akaike_weights(&deltas);
        let null: Vec<bool> = models
            .iter()
            .map(|m| null_families.contains(m.family_name()))
            .collect();
        let (score, alt_score) = series_score(&weights, &null);
        Ok(ScoreRecord {
            series_id: models[0].series_id.clone(),
            families: models.iter().map(|m| m.family_name().to_string()).collect(),
            log_score: log_null_weight(&deltas, &null),
            delta_per_model: deltas,
            weight_per_model: weights,
            null_per_model: null,
            score,
            alt_score,
            rank: 0,
            is_anomalous: false,
        })
    }

    /// Family of the lowest penalized NLL.
    pub fn best_family(&self) -> &str {
        let i = self
            .delta_per_model
            .iter()
            .position(|&d| d == 0.0)
            .unwrap_or(0);
        &self.families[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeedbackLabel {
    /// Flagged but normal.
    Fp,
    /// Missed anomaly.
    Fn,
}

impl std::str::FromStr for FeedbackLabel {
    type Err = GawsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FP" => Ok(FeedbackLabel::Fp),
            "FN" => Ok(FeedbackLabel::Fn),
            _ => Err(GawsError::Config(format!("unknown feedback label '{s}' (FP or FN)"))),
        }
    }
}

/// `𝓜 = 𝓜₀ ∪ 𝓜ₐ` over all fitted models, with the series partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpace {
    pub all_models: Vec<FittedModel>,
    /// Indices into `all_models`.
    pub null_models: BTreeSet<usize>,
    pub null_families: BTreeSet<String>,
    pub alpha: f64,
    pub n_min: usize,
    pub criterion: Criterion,
    pub anomalous_series: BTreeSet<String>,
    pub normal_series: BTreeSet<String>,
    /// Models passing the per-series plausibility filter.
    plausible: BTreeSet<usize>,
    feedback: BTreeMap<String, FeedbackLabel>,
    by_series: BTreeMap<String, Vec<usize>>,
}

/// Serializable summary of a [`ModelSpace`], without the models themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpaceManifest {
    pub alpha: f64,
    pub n_min: usize,
    pub criterion: Criterion,
    pub n_models: usize,
    pub n_null_models: usize,
    pub null_families: Vec<String>,
    pub anomalous_series: Vec<String>,
    pub normal_series: Vec<String>,
    /// `(series_id, family)` pairs in 𝓜₀.
    pub null_models: Vec<(String, String)>,
    /// `(series_id, family)` pairs passing the plausibility filter.
    pub plausible_models: Vec<(String, String)>,
    #[serde(default)]
    pub feedback: BTreeMap<String, FeedbackLabel>,
}

impl ModelSpace {
    /// Indices of models not in 𝓜₀.
    pub fn alt_models(&self) -> BTreeSet<usize> {
        (0..self.all_models.len())
            .filter(|i| !self.null_models.contains(i))
            .collect()
    }

    pub fn series_ids(&self) -> impl Iterator<Item = &String> {
        self.by_series.keys()
    }

    pub fn models_for(&self, series_id: &str) -> Result<Vec<&FittedModel>> {
        let idx = self
            .by_series
            .get(series_id)
            .ok_or_else(|| GawsError::UnknownSeries(series_id.to_string()))?;
        Ok(idx.iter().map(|&i| &self.all_models[i]).collect())
    }

    pub fn feedback(&self) -> &BTreeMap<String, FeedbackLabel> {
        &self.feedback
    }

    /// Scores every series against the null families, unranked.
    pub fn scores(&self) -> Result<Vec<ScoreRecord>> {
        self.by_series
            .keys()
            .map(|id| ScoreRecord::new(&self.models_for(id)?, &self.null_families))
            .collect()
    }

    /// Ranks every series. Feedback overrides the threshold: `Fn` series are
    /// always flagged and `Fp` series never are.
    pub fn ranking(&self) -> Result<Vec<ScoreRecord>> {
        let mut ranked = classify_and_rank(self.scores()?, self.alpha, None);
        for r in &mut ranked {
            match self.feedback.get(&r.series_id) {
                Some(FeedbackLabel::Fn) => r.is_anomalous = true,
                Some(FeedbackLabel::Fp) => r.is_anomalous = false,
                None => {}
            }
        }
        Ok(ranked)
    }

    /// Scores a series that is not part of the space.
    pub fn score_new(&self, models: &[&FittedModel]) -> Result<ScoreRecord> {
        if models.iter().any(|m| m.criterion != self.criterion) {
            return Err(GawsError::InvalidArgument(
                "models were scored under a different criterion than the space".into(),
            ));
        }
        ScoreRecord::new(models, &self.null_families)
    }

    /// Records analyst feedback and re-establishes the space invariants.
    ///
    /// `Fp` puts the series' best model in 𝓜₀ and exempts its family from the
    /// frequency filter; `Fn` moves all of its models to 𝓜ₐ.
    pub fn feedback_update(&mut self, series_id: &str, label: FeedbackLabel) -> Result<()> {
        if !self.by_series.contains_key(series_id) {
            return Err(GawsError::UnknownSeries(series_id.to_string()));
        }
        let mut next = self.clone();
        next.feedback.insert(series_id.to_string(), label);
        next.rebuild()?;
        *self = next;
        Ok(())
    }

    pub fn manifest(&self) -> ModelSpaceManifest {
        let key = |&i: &usize| {
            let m = &self.all_models[i];
            (m.series_id.clone(), m.family_name().to_string())
        };
        ModelSpaceManifest {
            alpha: self.alpha,
            n_min: self.n_min,
            criterion: self.criterion,
            n_models: self.all_models.len(),
            n_null_models: self.null_models.len(),
            null_families: self.null_families.iter().cloned().collect(),
            anomalous_series: self.anomalous_series.iter().cloned().collect(),
            normal_series: self.normal_series.iter().cloned().collect(),
            null_models: self.null_models.iter().map(key).collect(),
            plausible_models: self.plausible.iter().map(key).collect(),
            feedback: self.feedback.clone(),
        }
    }

    /// Reassembles a space from persisted models and its manifest.
    pub fn from_manifest(all_models: Vec<FittedModel>, manifest: &ModelSpaceManifest) -> Result<Self> {
        let by_series = group_by_series(&all_models)?;
        let index: BTreeMap<(&str, &str), usize> = all_models
            .iter()
            .enumerate()
            .map(|(i, m)| ((m.series_id.as_str(), m.family_name()), i))
            .collect();
        let lookup = |pairs: &[(String, String)]| -> Result<BTreeSet<usize>> {
            pairs
                .iter()
                .map(|(s, f)| {
                    index.get(&(s.as_str(), f.as_str())).copied().ok_or_else(|| {
                        GawsError::Config(format!("manifest names unknown model {s}/{f}"))
                    })
                })
                .collect()
        };
        let space = ModelSpace {
            null_models: lookup(&manifest.null_models)?,
            plausible: lookup(&manifest.plausible_models)?,
            all_models,
            null_families: manifest.null_families.iter().cloned().collect(),
            alpha: manifest.alpha,
            n_min: manifest.n_min,
            criterion: manifest.criterion,
            anomalous_series: manifest.anomalous_series.iter().cloned().collect(),
            normal_series: manifest.normal_series.iter().cloned().collect(),
            feedback: manifest.feedback.clone(),
            by_series,
        };
        space.check_invariants()?;
        Ok(space)
    }

    /// Checks the structural invariants of the space.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(GawsError::DegenerateSpace(msg));
        if self.null_models.iter().any(|&i| i >= self.all_models.len()) {
            return fail("null model index out of range".into());
        }
        for &i in &self.null_models {
            let m = &self.all_models[i];
            if self.anomalous_series.contains(&m.series_id) {
                return fail(format!("null model of anomalous series {}", m.series_id));
            }
            if !self.null_families.contains(m.family_name()) {
                return fail(format!("null model of excluded family {}", m.family_name()));
            }
        }
        let counts = self.family_counts(&self.null_models);
        for f in &self.null_families {
            let exempt = self.whitelist().contains(f);
            if !exempt && counts.get(f).copied().unwrap_or(0) < self.n_min {
                return fail(format!("family {f} has fewer than N_min series in the null space"));
            }
        }
        let covered: BTreeSet<&String> = self.anomalous_series.iter().chain(&self.normal_series).collect();
        if covered.len() != self.by_series.len()
            || self.anomalous_series.intersection(&self.normal_series).next().is_some()
        {
            return fail("series partition is inconsistent".into());
        }
        Ok(())
    }

    fn whitelist(&self) -> BTreeSet<String> {
        self.feedback
            .iter()
            .filter(|(_, &l)| l == FeedbackLabel::Fp)
            .filter_map(|(s, _)| self.best_model(s))
            .map(|i| self.all_models[i].family_name().to_string())
            .collect()
    }

    fn best_model(&self, series_id: &str) -> Option<usize> {
        self.by_series.get(series_id).and_then(|idx| {
            idx.iter().copied().min_by(|&a, &b| {
                self.all_models[a]
                    .penalized_nll
                    .total_cmp(&self.all_models[b].penalized_nll)
            })
        })
    }

    /// Distinct contributing series per family.
    fn family_counts(&self, models: &BTreeSet<usize>) -> BTreeMap<String, usize> {
        let mut seen: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
        for &i in models {
            let m = &self.all_models[i];
            seen.entry(m.family_name().to_string())
                .or_default()
                .insert(m.series_id.as_str());
        }
        seen.into_iter().map(|(f, s)| (f, s.len())).collect()
    }

    /// Applies the family-frequency and score-threshold filters to the
    /// plausible set until neither changes anything.
    fn rebuild(&mut self) -> Result<()> {
        let whitelist = self.whitelist();
        let mut anomalous: BTreeSet<String> = self
            .feedback
            .iter()
            .filter(|(_, &l)| l == FeedbackLabel::Fn)
            .map(|(s, _)| s.clone())
            .collect();
        let mut null = self.plausible.clone();
        for (s, &label) in &self.feedback {
            if label == FeedbackLabel::Fp {
                null.extend(self.best_model(s));
            }
        }
        null.retain(|&i| !anomalous.contains(&self.all_models[i].series_id));

        loop {
            let counts = self.family_counts(&null);
            let families: BTreeSet<String> = counts
                .into_iter()
                .filter(|(f, c)| *c >= self.n_min || whitelist.contains(f))
                .map(|(f, _)| f)
                .collect();
            null.retain(|&i| families.contains(self.all_models[i].family_name()));
            if null.is_empty() {
                return Err(GawsError::DegenerateSpace(format!(
                    "no family is plausible for at least {} series at alpha = {}",
                    self.n_min, self.alpha
                )));
            }
            let mut newly = Vec::new();
            for (id, idx) in &self.by_series {
                if anomalous.contains(id) || self.feedback.get(id) == Some(&FeedbackLabel::Fp) {
                    continue;
                }
                let models: Vec<&FittedModel> = idx.iter().map(|&i| &self.all_models[i]).collect();
                if ScoreRecord::new(&models, &families)?.score < self.alpha {
                    newly.push(id.clone());
                }
            }
            if newly.is_empty() {
                self.null_families = families;
                break;
            }
            anomalous.extend(newly);
            null.retain(|&i| !anomalous.contains(&self.all_models[i].series_id));
        }
        self.null_models = null;
        self.normal_series = self
            .by_series
            .keys()
            .filter(|s| !anomalous.contains(*s))
            .cloned()
            .collect();
        self.anomalous_series = anomalous;
        self.check_invariants()
    }
}

fn group_by_series(models: &[FittedModel]) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut by_series: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (i, m) in models.iter().enumerate() {
        if !seen.insert((m.series_id.as_str(), m.family_name())) {
            return Err(GawsError::InvalidArgument(format!(
                "family {} fitted twice to series {}",
                m.family_name(),
                m.series_id
            )));
        }
        by_series.entry(m.series_id.clone()).or_default().push(i);
    }
    Ok(by_series)
}

/// Three-stage construction: per-series plausibility (`π_M ≥ α`), family
/// frequency (`≥ N_min` distinct series), then removal of series scoring
/// below `α`. The last two stages are repeated until stable.
pub fn construct_model_space(fits: Vec<FittedModel>, alpha: f64, n_min: usize) -> Result<ModelSpace> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GawsError::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if n_min == 0 {
        return Err(GawsError::InvalidArgument("N_min must be at least 1".into()));
    }
    let criterion = fits
        .first()
        .map(|m| m.criterion)
        .ok_or_else(|| GawsError::InvalidArgument("no fitted models".into()))?;
    let by_series = group_by_series(&fits)?;
    let mut plausible = BTreeSet::new();
    for idx in by_series.values() {
        let models: Vec<&FittedModel> = idx.iter().map(|&i| &fits[i]).collect();
        let weights = akaike_weights(&delta(&models)?);
        plausible.extend(idx.iter().zip(&weights).filter(|(_, &w)| w >= alpha).map(|(&i, _)| i));
    }
    if fits.iter().any(|m| m.criterion != criterion) {
        return Err(GawsError::InvalidArgument("models were scored under different criteria".into()));
    }
    let mut space = ModelSpace {
        all_models: fits,
        null_models: BTreeSet::new(),
        null_families: BTreeSet::new(),
        alpha,
        n_min,
        criterion,
        anomalous_series: BTreeSet::new(),
        normal_series: BTreeSet::new(),
        plausible,
        feedback: BTreeMap::new(),
        by_series,
    };
    space.rebuild()?;
    Ok(space)
}

/// Flags `π_y < α` and assigns ranks by ascending score, ties by series id.
/// Scores are compared on the log scale so underflowed weights still order.
/// Returns the `top_k` best-ranked rows, or all rows when `top_k` is `None`.
pub fn classify_and_rank(mut scores: Vec<ScoreRecord>, alpha: f64, top_k: Option<usize>) -> Vec<ScoreRecord> {
    scores.sort_by(|a, b| {
        a.log_score
            .total_cmp(&b.log_score)
            .then_with(|| a.series_id.cmp(&b.series_id))
    });
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
        s.is_anomalous = s.score < alpha;
    }
    if let Some(k) = top_k {
        scores.truncate(k);
    }
    scores
}

/// Series whose alternative score reaches `ρ`.
pub fn precision_control(scores: &[ScoreRecord], rho: f64) -> Result<Vec<String>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(GawsError::InvalidArgument(format!("rho must be in (0, 1), got {rho}")));
    }
    Ok(scores
        .iter()
        .filter(|s| s.alt_score >= rho)
        .map(|s| s.series_id.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub bins: usize,
    /// Fraction of the observed range added on each side.
    pub padding: f64,
    /// Fixed range overriding the observed one.
    pub range: Option<(f64, f64)>,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig {
            bins: 20,
            padding: 0.05,
            range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientHistogram {
    /// Coefficient position within the flattened coefficient vector.
    pub position: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedFamilySummary {
    pub family: String,
    pub n_models: usize,
    pub coefficients: Vec<CoefficientHistogram>,
}

/// Equal-width histogram. Bins are right-closed and the first bin also
/// holds its left edge.
pub fn histogram(values: &[f64], cfg: &BinConfig) -> Result<CoefficientHistogram> {
    if cfg.bins == 0 {
        return Err(GawsError::InvalidArgument("at least one bin is required".into()));
    }
    let (lo, hi) = match cfg.range {
        Some(r) => r,
        None => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo {
                cfg.padding * (hi - lo)
            } else {
                cfg.padding.max(1e-6) * lo.abs().max(1.0)
            };
            (lo - pad, hi + pad)
        }
    };
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(GawsError::InvalidArgument(format!("invalid bin range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / cfg.bins as f64;
    let edges: Vec<f64> = (0..=cfg.bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; cfg.bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let b = edges[1..].partition_point(|&e| e < v).min(cfg.bins - 1);
        counts[b] += 1;
    }
    Ok(CoefficientHistogram {
        position: 0,
        edges,
        counts,
    })
}

/// Per-position histograms of the coefficient vectors of one family. Models
/// with shorter vectors (fewer detected events, lower AR order) contribute
/// only to the positions they have.
pub fn bin_coefficients(models: &[&FittedModel], cfg: &BinConfig) -> Result<BinnedFamilySummary> {
    let first = models
        .first()
        .ok_or_else(|| GawsError::InvalidArgument("no models to bin".into()))?;
    let family = first.family_name().to_string();
    if let Some(m) = models.iter().find(|m| m.family_name() != family) {
        return Err(GawsError::InvalidArgument(format!(
            "cannot bin {} together with {family}",
            m.family_name()
        )));
    }
    let vectors: Vec<Vec<f64>> = models.iter().map(|m| m.flat_coefficients()).collect();
    let width = vectors.iter().map(Vec::len).max().unwrap_or(0);
    let coefficients = (0..width)
        .map(|p| {
            let values: Vec<f64> = vectors.iter().filter_map(|v| v.get(p).copied()).collect();
            let mut h = histogram(&values, cfg)?;
            h.position = p;
            Ok(h)
        })
        .collect::<Result<_>>()?;
    Ok(BinnedFamilySummary {
        family,
        n_models: models.len(),
        coefficients,
    })
}

/// Monte Carlo `E_P[ln p − ln q]` and its standard error.
pub fn kl_divergence_oracle(
    p: (&DistributionFamily, &Params),
    q: (&DistributionFamily, &Params),
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_mc < 2 {
        return Err(GawsError::InvalidArgument("at least two Monte Carlo draws are needed".into()));
    }
    p.0.check_params(p.1)?;
    q.0.check_params(q.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let y = p.0.sample(&mut rng, p.1);
        let lp = p.0.log_density_unchecked(y, p.1);
        let lq = if q.0.check_support(y).is_ok() {
            q.0.log_density_unchecked(y, q.1)
        } else {
            f64::NEG_INFINITY
        };
        diffs.push(lp - lq);
    }
    let n = n_mc as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Mean of per-series divergences of their generating models from the null.
pub fn average_kl(divergences: &[f64]) -> Option<f64> {
    (!divergences.is_empty()).then(|| divergences.iter().sum::<f64>() / divergences.len() as f64)
}
