//! Synthetic BCCG collections built from state-space style location
//! components, with injected composite shape anomalies.
//!
//! Location components are composed on the log scale:
//! `η_μ = ln L_t + (additive components)/L₀ + Σ ln(ratio)` where pulses and
//! level shifts enter as ratios of the level.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionFamily, FamilyId, Params};
use crate::error::{GawsError, Result};
use crate::series::TimeSeriesSample;

/// Daily weights of the weekly cycle, as fractions of the initial level.
pub const WEEKLY_WEIGHTS: [f64; 7] = [0.27, 0.25, 0.24, 0.21, 0.12, -0.52, -0.57];
/// Fourier coefficients `(c₁, c₂)` (sine) and `(d₁, d₂)` (cosine) of the daily cycle.
pub const DAILY_SIN: [f64; 2] = [0.1, -0.2];
pub const DAILY_COS: [f64; 2] = [-0.5, -0.2];

/// Prior ranges for the generators. Closed intervals unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Log-normal location and scale of the coefficient of variation, and its truncation range.
    pub cv_log_location: f64,
    pub cv_log_scale: f64,
    pub cv_range: (f64, f64),
    pub l0_log_location: f64,
    pub l0_log_scale: f64,
    pub l0_range: (f64, f64),
    pub level_alpha: (f64, f64),
    pub gamma: (f64, f64),
    pub pulse_prob: (f64, f64),
    pub pulse_ratio: (f64, f64),
    /// Zero-adjusted Poisson AR order: Poisson mean and probability of zero.
    pub ar_poisson_mean: f64,
    pub ar_zero_prob: f64,
    pub ar_phi: (f64, f64),
    pub drift_ratio: (f64, f64),
    pub step_prob: f64,
    pub step_tau: (usize, usize),
    pub step_down: (f64, f64),
    pub step_up: (f64, f64),
    pub scale: (f64, f64),
    pub shape: (f64, f64),
    pub low_scale: (f64, f64),
    pub low_shape: (f64, f64),
    pub mid_scale: (f64, f64),
    pub mid_shape: (f64, f64),
    pub anomaly_shape: (f64, f64),
    /// Final-to-initial ratio of a linearly increasing scale.
    pub anomaly_scale_growth: (f64, f64),
    /// Random-walk innovation sd of a location anomaly, relative to its
    /// observation scale `σ · L₀`.
    pub anomaly_walk_ratio: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            cv_log_location: 0.05f64.ln(),
            cv_log_scale: 0.25,
            cv_range: (0.05 * (-0.75f64).exp(), 0.05 * 0.75f64.exp()),
            l0_log_location: 500f64.ln(),
            l0_log_scale: 0.1,
            l0_range: (350.0, 650.0),
            level_alpha: (0.0, 0.15),
            gamma: (0.001, 0.1),
            pulse_prob: (0.0, 0.01),
            pulse_ratio: (3.0, 6.0),
            ar_poisson_mean: 0.2,
            ar_zero_prob: 0.75,
            ar_phi: (0.05, 0.25),
            drift_ratio: (0.0001, 0.002),
            step_prob: 0.1,
            step_tau: (50, 450),
            step_down: (0.3, 0.7),
            step_up: (1.4, 2.0),
            scale: (0.05, 0.25),
            shape: (-0.5, 0.2),
            low_scale: (0.05, 0.1),
            low_shape: (-0.3, 0.2),
            mid_scale: (0.1, 0.2),
            mid_shape: (-0.5, -0.25),
            anomaly_shape: (-1.0, -0.5),
            anomaly_scale_growth: (2.5, 4.0),
            anomaly_walk_ratio: 0.6,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (a, b): (f64, f64)) -> f64 {
    if b > a {
        rng.random_range(a..=b)
    } else {
        a
    }
}

fn truncated_lognormal<R: Rng + ?Sized>(
    rng: &mut R,
    location: f64,
    scale: f64,
    (lo, hi): (f64, f64),
) -> f64 {
    let n = Normal::new(location, scale).expect("finite log-normal parameters");
    for _ in 0..10_000 {
        let v = n.sample(rng).exp();
        if v >= lo && v <= hi {
            return v;
        }
    }
    location.exp().clamp(lo, hi)
}

impl Priors {
    pub fn sample_cv<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        truncated_lognormal(rng, self.cv_log_location, self.cv_log_scale, self.cv_range)
    }

    pub fn sample_l0<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        truncated_lognormal(rng, self.l0_log_location, self.l0_log_scale, self.l0_range)
    }

    /// Zero with probability `ar_zero_prob`, otherwise a zero-truncated Poisson draw.
    pub fn sample_ar_order<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.ar_zero_prob {
            return 0;
        }
        let p = Poisson::new(self.ar_poisson_mean).expect("positive Poisson mean");
        loop {
            let k: f64 = p.sample(rng);
            if k >= 1.0 {
                return k as usize;
            }
        }
    }

    /// Level-shift count (0 or 1), onset and ratio.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, f64)> {
        if rng.random::<f64>() >= self.step_prob {
            return None;
        }
        let tau = rng.random_range(self.step_tau.0..=self.step_tau.1);
        let ratio = if rng.random::<bool>() {
            uniform(rng, self.step_down)
        } else {
            uniform(rng, self.step_up)
        };
        Some((tau, ratio))
    }

    /// Innovation standard deviation `sqrt(cv · (1 + L₀))`.
    pub fn noise_sd(cv: f64, l0: f64) -> f64 {
        (cv * (1.0 + l0)).sqrt()
    }
}

fn normal_draws<R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let d = Normal::new(0.0, sd).expect("finite sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// `L_t = L_{t−1} + α ε_t`, starting from `L₀` at `t = 0`.
pub fn gen_local_level<R: Rng + ?Sized>(n: usize, l0: f64, alpha: f64, sigma: f64, rng: &mut R) -> Vec<f64> {
    let eps = normal_draws(rng, n, sigma);
    let mut out = Vec::with_capacity(n);
    let mut level = l0;
    for (t, e) in eps.into_iter().enumerate() {
        if t > 0 {
            level += alpha * e;
        }
        out.push(level);
    }
    out
}

/// Initial daily-cycle state for hour `h`: `L₀ Σ_k c_k sin(2πkh/24) + d_k cos(2πkh/24)`.
pub fn daily_initial(l0: f64, hour: usize) -> f64 {
    (0..2)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * (k + 1) as f64 * hour as f64 / 24.0;
            DAILY_SIN[k] * a.sin() + DAILY_COS[k] * a.cos()
        })
        .sum::<f64>()
        * l0
}

/// Hourly double-seasonal component: a weekly cycle over days (period 7)
/// plus a daily cycle over hours (period 24), each evolving as a seasonal
/// random walk driven by the same innovations.
pub fn gen_double_seasonal<R: Rng + ?Sized>(
    n: usize,
    l0: f64,
    gamma1: f64,
    gamma2: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n < 48 {
        return Err(GawsError::InvalidArgument(format!(
            "double seasonal series needs n >= 48, got {n}"
        )));
    }
    let eps = normal_draws(rng, n, sigma);
    let mut weekly: Vec<f64> = WEEKLY_WEIGHTS.iter().map(|w| w * l0).collect();
    let mut daily: Vec<f64> = (0..24).map(|h| daily_initial(l0, h)).collect();
    let mut out = Vec::with_capacity(n);
    for (t, e) in eps.into_iter().enumerate() {
        let (day, hour) = (t / 24, t % 24);
        if t >= 24 {
            daily[hour] += gamma2 * e;
        }
        if hour == 0 && day >= 7 {
            weekly[day % 7] += gamma1 * e;
        }
        out.push(weekly[day % 7] + daily[hour]);
    }
    Ok(out)
}

/// Pulses `x_t = L_t·r` at Bernoulli(π) times, zero elsewhere.
pub fn gen_random_pulse<R: Rng + ?Sized>(n: usize, prob: f64, level: &[f64], ratio: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|t| {
            if rng.random::<f64>() < prob {
                level[t.min(level.len() - 1)] * ratio
            } else {
                0.0
            }
        })
        .collect()
}

pub const AR_BURN_IN: usize = 100;

/// `x_t = Σ φ_i x_{t−i} + ε_t`, zero-initialized, with a discarded burn-in.
pub fn gen_ar<R: Rng + ?Sized>(n: usize, phi: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let eps = normal_draws(rng, n + AR_BURN_IN, sigma);
    let mut x = vec![0.0; n + AR_BURN_IN];
    for t in 0..x.len() {
        let ar: f64 = phi
            .iter()
            .enumerate()
            .filter(|&(i, _)| t > i)
            .map(|(i, f)| f * x[t - i - 1])
            .sum();
        x[t] = ar + eps[t];
    }
    x.split_off(AR_BURN_IN)
}

/// `x_t = x_{t−1} + b + ε_t` with `x_0 = x0`.
pub fn gen_random_walk_drift<R: Rng + ?Sized>(n: usize, x0: f64, b: f64, sigma: f64, rng: &mut R) -> Vec<f64> {
    let eps = normal_draws(rng, n, sigma);
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for (t, e) in eps.into_iter().enumerate() {
        if t > 0 {
            x += b + e;
        }
        out.push(x);
    }
    out
}

/// `x_t = Σ δ_i 1[τ_i, τ_{i+1})(t) + ε_t`.
pub fn gen_linear_step<R: Rng + ?Sized>(
    n: usize,
    taus: &[usize],
    deltas: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if taus.len() != deltas.len() || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GawsError::InvalidArgument(
            "step onsets must be increasing and match the shifts".into(),
        ));
    }
    let eps = normal_draws(rng, n, sigma);
    Ok((0..n)
        .map(|t| {
            let k = taus.partition_point(|&tau| tau <= t);
            let shift = if k == 0 { 0.0 } else { deltas[k - 1] };
            shift + eps[t]
        })
        .collect())
}

/// Predictors of one path: `ln μ_t`, `σ_t` and `ν_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub log_mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Draws `y_t ~ BCCG(exp(log_mu_t), σ_t, ν_t)` independently.
pub fn compose_path<R: Rng + ?Sized>(spec: &PathSpec, rng: &mut R) -> Result<Vec<f64>> {
    let n = spec.log_mu.len();
    if spec.sigma.len() != n || spec.nu.len() != n {
        return Err(GawsError::InvalidArgument("path components differ in length".into()));
    }
    let fam = DistributionFamily::new(FamilyId::Bccg);
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mu = spec.log_mu[t].exp();
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(GawsError::Domain(format!("non-positive location at t = {t}")));
        }
        let p = Params::new(mu, spec.sigma[t]).with_nu(spec.nu[t]);
        fam.check_params(&p)?;
        out.push(fam.sample(rng, &p));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationKind {
    Constant,
    LocalLevel,
    Seasonal,
    LevelPulse,
    Ar,
    UpShift,
    RandomWalk,
    DownShift,
    Changepoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadLevel {
    Low,
    Mid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Normal,
    Anomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ingredient {
    RandomWalkLocation,
    DownwardShift,
    IncreasingScale,
    ExtremeShape,
}

/// What generated a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub subspace: String,
    pub location: Vec<LocationKind>,
    pub l0: f64,
    pub cv: f64,
    pub sigma: f64,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ingredients: Vec<Ingredient>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
}

impl std::str::FromStr for ExperimentId {
    type Err = GawsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(ExperimentId::E1),
            "E2" => Ok(ExperimentId::E2),
            "E3" => Ok(ExperimentId::E3),
            "E4" => Ok(ExperimentId::E4),
            "E5" => Ok(ExperimentId::E5),
            "E6" => Ok(ExperimentId::E6),
            _ => Err(GawsError::InvalidArgument(format!("unknown experiment '{s}'"))),
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_series: usize,
    pub n_hours: usize,
    pub n_anomalies: usize,
    pub min_subspace_size: usize,
    pub priors: Priors,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_series: 200,
            n_hours: 24 * 21,
            n_anomalies: 10,
            min_subspace_size: 10,
            priors: Priors::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hours % 24 != 0 || self.n_hours < 48 {
            return Err(GawsError::Config(format!(
                "n_hours must be a positive multiple of 24 and at least 48, got {}",
                self.n_hours
            )));
        }
        if !matches!(self.n_anomalies, 1 | 5 | 10) {
            return Err(GawsError::Config(format!(
                "anomaly count must be 1, 5 or 10, got {}",
                self.n_anomalies
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub experiment: ExperimentId,
    pub series: Vec<TimeSeriesSample>,
    pub labels: Vec<Label>,
    pub metadata: Vec<SeriesMeta>,
}

impl LabeledDataset {
    pub fn anomaly_ids(&self) -> Vec<String> {
        self.series
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == Label::Anomaly)
            .map(|(s, _)| s.id.clone())
            .collect()
    }

    /// Location families used by the normal series.
    pub fn normal_location_kinds(&self) -> Vec<LocationKind> {
        let mut kinds: Vec<LocationKind> = self
            .metadata
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == Label::Normal)
            .flat_map(|(m, _)| m.location.iter().copied())
            .collect();
        kinds.sort_by_key(|k| *k as u8);
        kinds.dedup();
        kinds
    }

    pub fn subspaces(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .metadata
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == Label::Normal)
            .map(|(m, _)| m.subspace.clone())
            .collect();
        s.sort();
        s.dedup();
        s
    }
}

/// A normal subspace: location recipe plus scale/shape range.
#[derive(Debug, Clone, Copy)]
struct Subspace {
    location: LocationKind,
    spread: SpreadLevel,
}

impl Subspace {
    fn name(&self) -> String {
        let loc = serde_json::to_value(self.location).expect("enum serializes");
        let spread = serde_json::to_value(self.spread).expect("enum serializes");
        format!("{}-{}", loc.as_str().unwrap_or(""), spread.as_str().unwrap_or(""))
    }
}

fn subspaces(id: ExperimentId) -> Vec<Subspace> {
    use LocationKind as L;
    use SpreadLevel::{Low, Mid};
    let s = |location, spread| Subspace { location, spread };
    match id {
        ExperimentId::E1 => vec![s(L::Seasonal, Low), s(L::Seasonal, Mid)],
        ExperimentId::E2 => vec![
            s(L::Seasonal, Low),
            s(L::Seasonal, Mid),
            s(L::LevelPulse, Low),
            s(L::LevelPulse, Mid),
            s(L::Ar, Low),
            s(L::UpShift, Low),
        ],
        ExperimentId::E3 | ExperimentId::E4 | ExperimentId::E6 => vec![s(L::Constant, Low)],
        ExperimentId::E5 => vec![
            s(L::Seasonal, Low),
            s(L::Seasonal, Mid),
            s(L::LevelPulse, Low),
            s(L::LevelPulse, Mid),
            s(L::Ar, Low),
            s(L::UpShift, Low),
            s(L::LocalLevel, Low),
        ],
    }
}

/// Draws `total` items into `k` groups of at least `min` each, uniformly over the remainder.
fn subspace_sizes<R: Rng + ?Sized>(total: usize, k: usize, min: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k * min > total {
        return Err(GawsError::Config(format!(
            "{total} normal series cannot fill {k} subspaces of at least {min}"
        )));
    }
    let mut sizes = vec![min; k];
    for _ in 0..total - k * min {
        sizes[rng.random_range(0..k)] += 1;
    }
    Ok(sizes)
}

/// Rescales a prior onset range from the 504-hour design to `n` hours.
fn scaled_tau<R: Rng + ?Sized>(priors: &Priors, n: usize, rng: &mut R) -> usize {
    let f = n as f64 / 504.0;
    let lo = ((priors.step_tau.0 as f64 * f).round() as usize).max(1);
    let hi = ((priors.step_tau.1 as f64 * f).round() as usize).clamp(lo, n - 1);
    rng.random_range(lo..=hi)
}

struct Draw {
    log_mu: Vec<f64>,
    l0: f64,
    cv: f64,
}

fn draw_location<R: Rng + ?Sized>(kind: LocationKind, n: usize, p: &Priors, rng: &mut R) -> Result<Draw> {
    let cv = p.sample_cv(rng);
    let l0 = p.sample_l0(rng);
    let sd = Priors::noise_sd(cv, l0);
    let mut log_mu = vec![l0.ln(); n];
    let add = |log_mu: &mut Vec<f64>, x: &[f64]| {
        for (a, v) in log_mu.iter_mut().zip(x) {
            *a += v / l0;
        }
    };
    let set_level = |log_mu: &mut Vec<f64>, level: &[f64]| {
        for (a, v) in log_mu.iter_mut().zip(level) {
            *a = v.max(1e-3 * l0).ln();
        }
    };
    match kind {
        LocationKind::Constant => {}
        LocationKind::LocalLevel => {
            let alpha = uniform(rng, p.level_alpha);
            set_level(&mut log_mu, &gen_local_level(n, l0, alpha, sd, rng));
        }
        LocationKind::Seasonal => {
            let alpha = uniform(rng, p.level_alpha);
            set_level(&mut log_mu, &gen_local_level(n, l0, alpha, sd, rng));
            let (g1, g2) = (uniform(rng, p.gamma), uniform(rng, p.gamma));
            add(&mut log_mu, &gen_double_seasonal(n, l0, g1, g2, sd, rng)?);
        }
        LocationKind::LevelPulse => {
            let alpha = uniform(rng, p.level_alpha);
            let level = gen_local_level(n, l0, alpha, sd, rng);
            set_level(&mut log_mu, &level);
            let prob = uniform(rng, p.pulse_prob);
            let ratio = uniform(rng, p.pulse_ratio);
            let pulses = gen_random_pulse(n, prob, &level, ratio, rng);
            for (t, x) in pulses.iter().enumerate() {
                if *x > 0.0 {
                    log_mu[t] += ratio.ln();
                }
            }
        }
        LocationKind::Ar => {
            let order = p.sample_ar_order(rng);
            let phi: Vec<f64> = (0..order).map(|_| uniform(rng, p.ar_phi)).collect();
            add(&mut log_mu, &gen_ar(n, &phi, sd, rng));
        }
        LocationKind::UpShift | LocationKind::DownShift => {
            let tau = scaled_tau(p, n, rng);
            let ratio = if kind == LocationKind::UpShift {
                uniform(rng, p.step_up)
            } else {
                uniform(rng, p.step_down)
            };
            let x = gen_linear_step(n, &[tau], &[ratio.ln() * l0], sd, rng)?;
            add(&mut log_mu, &x);
        }
        LocationKind::RandomWalk => {
            let walk_sd = p.anomaly_walk_ratio * p.low_scale.1 * l0;
            for (a, v) in log_mu.iter_mut().zip(walk_deviation(n, l0, walk_sd, p, rng)) {
                *a += v;
            }
        }
        LocationKind::Changepoints => {
            let mut taus: Vec<usize> = Vec::new();
            while taus.len() < 3 {
                let t = scaled_tau(p, n, rng);
                if taus.iter().all(|&u| u.abs_diff(t) >= n / 24) {
                    taus.push(t);
                }
            }
            taus.sort_unstable();
            let up = uniform(rng, p.step_up).ln();
            let last = if rng.random::<bool>() {
                uniform(rng, p.step_down)
            } else {
                uniform(rng, p.step_up)
            }
            .ln();
            let x = gen_linear_step(n, &taus, &[up * l0, 0.0, last * l0], sd, rng)?;
            add(&mut log_mu, &x);
        }
    }
    Ok(Draw { log_mu, l0, cv })
}

/// Drifting random walk on the log-location scale.
fn walk_deviation<R: Rng + ?Sized>(n: usize, l0: f64, walk_sd: f64, p: &Priors, rng: &mut R) -> Vec<f64> {
    let b = uniform(rng, p.drift_ratio) * l0;
    gen_random_walk_drift(n, 0.0, b, walk_sd, rng)
        .into_iter()
        .map(|x| x / l0)
        .collect()
}

fn spread<R: Rng + ?Sized>(level: SpreadLevel, p: &Priors, rng: &mut R) -> (f64, f64) {
    match level {
        SpreadLevel::Low => (uniform(rng, p.low_scale), uniform(rng, p.low_shape)),
        SpreadLevel::Mid => (uniform(rng, p.mid_scale), uniform(rng, p.mid_shape)),
    }
}

/// Composite anomalies: each takes a structural ingredient (random-walk
/// location and/or linearly increasing scale), optionally a downward shift
/// and an extreme shape. Each location ingredient is a random convex
/// combination of two independent draws of that ingredient.
pub fn gen_anomalies<R: Rng + ?Sized>(
    k: usize,
    n: usize,
    priors: &Priors,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, SeriesMeta)>> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut ingredients = Vec::new();
        match rng.random_range(0..3) {
            0 => ingredients.push(Ingredient::RandomWalkLocation),
            1 => ingredients.push(Ingredient::IncreasingScale),
            _ => {
                ingredients.push(Ingredient::RandomWalkLocation);
                ingredients.push(Ingredient::IncreasingScale);
            }
        }
        if rng.random::<bool>() {
            ingredients.push(Ingredient::DownwardShift);
        }
        if rng.random::<bool>() {
            ingredients.push(Ingredient::ExtremeShape);
        }
        let has = |i: Ingredient| ingredients.contains(&i);

        let convex = |a: &[f64], b: &[f64], rng: &mut R| -> Vec<f64> {
            let w: f64 = rng.random();
            a.iter().zip(b).map(|(x, y)| w * x + (1.0 - w) * y).collect()
        };

        let (base_sigma, base_nu) = spread(
            if rng.random::<bool>() { SpreadLevel::Low } else { SpreadLevel::Mid },
            priors,
            rng,
        );
        let nu = if has(Ingredient::ExtremeShape) {
            uniform(rng, priors.anomaly_shape)
        } else {
            base_nu
        };
        let (sigma0, growth) = if has(Ingredient::IncreasingScale) {
            (uniform(rng, priors.low_scale), uniform(rng, priors.anomaly_scale_growth))
        } else {
            (base_sigma, 1.0)
        };
        let sigma: Vec<f64> = (0..n)
            .map(|t| sigma0 * (1.0 + (growth - 1.0) * t as f64 / (n - 1) as f64))
            .collect();

        let first = draw_location(LocationKind::Seasonal, n, priors, rng)?;
        let second = draw_location(LocationKind::Seasonal, n, priors, rng)?;
        let (l0, cv) = (first.l0, first.cv);
        let mut log_mu = convex(&first.log_mu, &second.log_mu, rng);
        let mut location = vec![LocationKind::Seasonal];
        if has(Ingredient::RandomWalkLocation) {
            let walk_sd = priors.anomaly_walk_ratio * sigma0 * l0;
            let a = walk_deviation(n, l0, walk_sd, priors, rng);
            let b = walk_deviation(n, l0, walk_sd, priors, rng);
            for (x, v) in log_mu.iter_mut().zip(convex(&a, &b, rng)) {
                *x += v;
            }
            location.push(LocationKind::RandomWalk);
        }
        if has(Ingredient::DownwardShift) {
            let mut shift = || -> Result<Vec<f64>> {
                let d = draw_location(LocationKind::DownShift, n, priors, rng)?;
                let base = d.l0.ln();
                Ok(d.log_mu.iter().map(|v| v - base).collect())
            };
            let (a, b) = (shift()?, shift()?);
            for (x, v) in log_mu.iter_mut().zip(convex(&a, &b, rng)) {
                *x += v;
            }
            location.push(LocationKind::DownShift);
        }
        let y = compose_path(
            &PathSpec {
                log_mu,
                sigma,
                nu: vec![nu; n],
            },
            rng,
        )?;
        out.push((
            y,
            SeriesMeta {
                subspace: "anomaly".into(),
                location,
                l0,
                cv,
                sigma: sigma0,
                nu,
                ingredients,
            },
        ));
    }
    Ok(out)
}

fn changepoint_anomalies<R: Rng + ?Sized>(
    k: usize,
    n: usize,
    priors: &Priors,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, SeriesMeta)>> {
    (0..k)
        .map(|_| {
            let d = draw_location(LocationKind::Changepoints, n, priors, rng)?;
            let (sigma, nu) = spread(SpreadLevel::Low, priors, rng);
            let y = compose_path(
                &PathSpec {
                    log_mu: d.log_mu,
                    sigma: vec![sigma; n],
                    nu: vec![nu; n],
                },
                rng,
            )?;
            Ok((
                y,
                SeriesMeta {
                    subspace: "changepoint-anomaly".into(),
                    location: vec![LocationKind::Changepoints],
                    l0: d.l0,
                    cv: d.cv,
                    sigma,
                    nu,
                    ingredients: Vec::new(),
                },
            ))
        })
        .collect()
}

/// Builds one labelled collection. Series ids are assigned after a random
/// permutation so labels carry no positional information.
pub fn build_experiment(id: ExperimentId, cfg: &SimConfig, seed: u64) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_hours;
    let extra = if id == ExperimentId::E3 { 10 } else { 0 };
    let n_anom = cfg.n_anomalies + extra;
    if n_anom >= cfg.n_series {
        return Err(GawsError::Config("more anomalies than series".into()));
    }
    let spaces = subspaces(id);
    let sizes = subspace_sizes(cfg.n_series - n_anom, spaces.len(), cfg.min_subspace_size, &mut rng)?;

    let mut rows: Vec<(Vec<f64>, Label, SeriesMeta)> = Vec::with_capacity(cfg.n_series);
    for (space, &size) in spaces.iter().zip(&sizes) {
        for _ in 0..size {
            let d = draw_location(space.location, n, &cfg.priors, &mut rng)?;
            let (sigma, nu) = spread(space.spread, &cfg.priors, &mut rng);
            let y = compose_path(
                &PathSpec {
                    log_mu: d.log_mu,
                    sigma: vec![sigma; n],
                    nu: vec![nu; n],
                },
                &mut rng,
            )?;
            rows.push((
                y,
                Label::Normal,
                SeriesMeta {
                    subspace: space.name(),
                    location: vec![space.location],
                    l0: d.l0,
                    cv: d.cv,
                    sigma,
                    nu,
                    ingredients: Vec::new(),
                },
            ));
        }
    }
    for (y, meta) in gen_anomalies(cfg.n_anomalies, n, &cfg.priors, &mut rng)? {
        rows.push((y, Label::Anomaly, meta));
    }
    for (y, meta) in changepoint_anomalies(extra, n, &cfg.priors, &mut rng)? {
        rows.push((y, Label::Anomaly, meta));
    }
    rows.shuffle(&mut rng);

    let width = (cfg.n_series.max(2) - 1).to_string().len();
    let mut series = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut metadata = Vec::with_capacity(rows.len());
    for (i, (y, label, meta)) in rows.into_iter().enumerate() {
        series.push(TimeSeriesSample::from_dense(format!("s{i:0width$}"), &y));
        labels.push(label);
        metadata.push(meta);
    }
    Ok(LabeledDataset {
        experiment: id,
        series,
        labels,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_local_level() {
        assert!(gen_local_level(50, 500.0, 0.0, 5.0, &mut rng(1)).iter().all(|&v| v == 500.0));
        assert!(gen_local_level(50, 500.0, 0.1, 0.0, &mut rng(1)).iter().all(|&v| v == 500.0));
    }

    #[test]
    fn local_level_difference_variance() {
        let (alpha, sigma) = (0.1, 5.0);
        let mut acc = 0.0;
        let reps = 200;
        for r in 0..reps {
            let l = gen_local_level(504, 500.0, alpha, sigma, &mut rng(r));
            let d: Vec<f64> = l.windows(2).map(|w| w[1] - w[0]).collect();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            acc += d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        }
        let var = acc / reps as f64;
        let target = (alpha * sigma).powi(2);
        assert!((var / target - 1.0).abs() < 0.15, "{var} vs {target}");
    }

    #[test]
    fn seasonal_initial_state_and_periodicity() {
        assert!((WEEKLY_WEIGHTS.iter().sum::<f64>()).abs() < 1e-12);
        assert!((daily_initial(1.0, 0) + 0.7).abs() < 1e-15);
        let s = gen_double_seasonal(504, 500.0, 0.0, 0.0, 5.0, &mut rng(2)).unwrap();
        for t in 0..504 - 168 {
            assert!((s[t] - s[t + 168]).abs() < 1e-9);
        }
        assert!((s[0] - 500.0 * (0.27 - 0.7)).abs() < 1e-9);
        assert!(gen_double_seasonal(47, 500.0, 0.0, 0.0, 5.0, &mut rng(2)).is_err());
    }

    #[test]
    fn pulses() {
        let level = vec![100.0; 50];
        assert!(gen_random_pulse(50, 0.0, &level, 4.0, &mut rng(3)).iter().all(|&v| v == 0.0));
        assert!(gen_random_pulse(50, 1.0, &level, 4.0, &mut rng(3)).iter().all(|&v| v == 400.0));
        let level = vec![1.0; 504];
        let mut r = rng(4);
        let total: usize = (0..1000)
            .map(|_| gen_random_pulse(504, 0.01, &level, 3.0, &mut r).iter().filter(|&&v| v > 0.0).count())
            .sum();
        let mean = total as f64 / 1000.0;
        assert!((mean - 5.04).abs() < 0.3, "{mean}");
    }

    #[test]
    fn ar_properties() {
        let x = gen_ar(200, &[], 2.0, &mut rng(5));
        assert_eq!(x.len(), 200);
        assert!(gen_ar(200, &[0.25], 0.0, &mut rng(5)).iter().all(|&v| v == 0.0));
        let x = gen_ar(50_000, &[0.25], 1.0, &mut rng(6));
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        assert!((c1 / c0 - 0.25).abs() < 0.05);
    }

    #[test]
    fn drift_and_steps() {
        let line = gen_random_walk_drift(10, 3.0, 0.5, 0.0, &mut rng(7));
        for (t, v) in line.iter().enumerate() {
            assert!((v - (3.0 + 0.5 * t as f64)).abs() < 1e-12);
        }
        let mut r = rng(8);
        let mean_gain: f64 = (0..1000)
            .map(|_| {
                let w = gen_random_walk_drift(504, 0.0, 0.2, 1.0, &mut r);
                w[503] - w[0]
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean_gain - 503.0 * 0.2).abs() < 4.0 * (503f64).sqrt() / (1000f64).sqrt());

        let s = gen_linear_step(200, &[100], &[200.0], 0.0, &mut rng(9)).unwrap();
        assert!(s[..100].iter().all(|&v| v == 0.0));
        assert!(s[100..].iter().all(|&v| v == 200.0));
        let p = Priors::default();
        let mut r = rng(10);
        let frac = (0..10_000).filter(|_| p.sample_step(&mut r).is_some()).count() as f64 / 10_000.0;
        assert!((frac - 0.1).abs() < 0.01);
    }

    #[test]
    fn composition_concentrates_as_scale_vanishes() {
        let spec = PathSpec {
            log_mu: vec![500f64.ln(); 20],
            sigma: vec![1e-9; 20],
            nu: vec![-0.3; 20],
        };
        let y = compose_path(&spec, &mut rng(11)).unwrap();
        assert!(y.iter().all(|v| (v - 500.0).abs() < 1e-4));
        let bad = PathSpec {
            log_mu: vec![f64::NEG_INFINITY; 3],
            sigma: vec![0.1; 3],
            nu: vec![0.0; 3],
        };
        assert!(compose_path(&bad, &mut rng(11)).is_err());
    }

    #[test]
    fn experiments_have_expected_shape() {
        let cfg = SimConfig::default();
        let e1 = build_experiment(ExperimentId::E1, &cfg, 1).unwrap();
        assert_eq!(e1.series.len(), 200);
        assert_eq!(e1.anomaly_ids().len(), 10);
        assert_eq!(e1.normal_location_kinds(), vec![LocationKind::Seasonal]);
        assert_eq!(e1.subspaces(), vec!["seasonal-low", "seasonal-mid"]);
        let e3 = build_experiment(ExperimentId::E3, &cfg, 1).unwrap();
        assert_eq!(e3.anomaly_ids().len(), 20);
        let e2 = build_experiment(ExperimentId::E2, &SimConfig { n_anomalies: 1, ..cfg.clone() }, 7).unwrap();
        assert_eq!(e2.subspaces().len(), 6);
        assert_eq!(e2.normal_location_kinds().len(), 4);
        for (s, m) in e2.series.iter().zip(&e2.metadata) {
            assert!(s.values.iter().all(|v| v.unwrap() > 0.0));
            if m.subspace != "anomaly" {
                let count = e2.metadata.iter().filter(|o| o.subspace == m.subspace).count();
                assert!(count >= 10);
            }
        }
    }

    #[test]
    fn experiments_are_deterministic() {
        let cfg = SimConfig {
            n_series: 80,
            ..SimConfig::default()
        };
        let a = build_experiment(ExperimentId::E2, &cfg, 3).unwrap();
        let b = build_experiment(ExperimentId::E2, &cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn anomalies_leave_normal_priors() {
        let p = Priors::default();
        let anomalies = gen_anomalies(50, 504, &p, &mut rng(12)).unwrap();
        for (_, m) in anomalies {
            assert!(m.ingredients.iter().any(|i| matches!(
                i,
                Ingredient::RandomWalkLocation | Ingredient::IncreasingScale
            )));
            if m.ingredients.contains(&Ingredient::ExtremeShape) {
                assert!(m.nu <= -0.5);
            }
        }
    }
}
