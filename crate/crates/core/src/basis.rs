//! Basis and penalty matrices for additive predictor terms.
//!
//! All design matrices have one row per point of the common time grid;
//! rows for missing observations are dropped later by the fitter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GawsError, Result};

/// Calendar and index regressors shared by every series on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorMatrix {
    pub time_index: Vec<usize>,
    /// 0..=23
    pub hour_of_day: Vec<u8>,
    /// 1..=7, Monday = 1
    pub day_of_week: Vec<u8>,
    pub pulse_indicators: Option<Vec<usize>>,
}

impl RegressorMatrix {
    /// Hourly grid of `n` points starting at `start_hour` on weekday `start_dow` (1 = Monday).
    pub fn hourly(n: usize, start_dow: u8, start_hour: u8) -> Self {
        let hour_of_day = (0..n)
            .map(|t| ((start_hour as usize + t) % 24) as u8)
            .collect();
        let day_of_week = (0..n)
            .map(|t| {
                let days = (start_hour as usize + t) / 24;
                ((start_dow as usize - 1 + days) % 7 + 1) as u8
            })
            .collect();
        RegressorMatrix {
            time_index: (0..n).collect(),
            hour_of_day,
            day_of_week,
            pulse_indicators: None,
        }
    }

    pub fn len(&self) -> usize {
        self.time_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_index.is_empty()
    }

    pub fn column(&self, input: Regressor) -> Vec<f64> {
        match input {
            Regressor::Time => self.time_index.iter().map(|&t| t as f64).collect(),
            Regressor::HourOfDay => self.hour_of_day.iter().map(|&h| h as f64).collect(),
            // shifted to 0..=6 so it lives on [0, 7)
            Regressor::DayOfWeek => self.day_of_week.iter().map(|&d| (d - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regressor {
    Time,
    HourOfDay,
    DayOfWeek,
}

impl Regressor {
    fn period(self) -> f64 {
        match self {
            Regressor::Time => f64::INFINITY,
            Regressor::HourOfDay => 24.0,
            Regressor::DayOfWeek => 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    Intercept,
    PSplineLinear,
    PSplineCubic,
    CyclicCubic,
    Fourier,
    Ar,
    Pulse,
    Step,
}

/// One additive term of a linear predictor. `lambda: None` selects the
/// smoothing parameter by GCV; `Some(λ)` fixes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisTermSpec {
    Intercept,
    PSplineLinear {
        #[serde(default = "default_trend_knots")]
        num_knots: usize,
        #[serde(default = "one")]
        penalty_order: usize,
        #[serde(default)]
        lambda: Option<f64>,
    },
    PSplineCubic {
        #[serde(default = "default_trend_knots")]
        num_knots: usize,
        #[serde(default = "two")]
        penalty_order: usize,
        #[serde(default)]
        lambda: Option<f64>,
    },
    CyclicCubic {
        input: Regressor,
        /// Defaults to one knot per integer value of the input's period.
        #[serde(default)]
        num_knots: Option<usize>,
        #[serde(default)]
        lambda: Option<f64>,
    },
    Fourier {
        period: f64,
        harmonics: usize,
    },
    /// Lagged link-scale response; the fitter picks the order in `0..=ar_order`.
    Ar {
        ar_order: usize,
    },
    Pulse,
    Step,
}

fn default_trend_knots() -> usize {
    20
}
fn one() -> usize {
    1
}
fn two() -> usize {
    2
}

impl BasisTermSpec {
    pub fn linear_trend(num_knots: usize) -> Self {
        BasisTermSpec::PSplineLinear {
            num_knots,
            penalty_order: 1,
            lambda: None,
        }
    }

    pub fn cubic_trend(num_knots: usize) -> Self {
        BasisTermSpec::PSplineCubic {
            num_knots,
            penalty_order: 2,
            lambda: None,
        }
    }

    pub fn cyclic(input: Regressor) -> Self {
        BasisTermSpec::CyclicCubic {
            input,
            num_knots: None,
            lambda: None,
        }
    }

    pub fn with_lambda(mut self, value: f64) -> Self {
        match &mut self {
            BasisTermSpec::PSplineLinear { lambda, .. }
            | BasisTermSpec::PSplineCubic { lambda, .. }
            | BasisTermSpec::CyclicCubic { lambda, .. } => *lambda = Some(value),
            _ => {}
        }
        self
    }

    pub fn kind(&self) -> TermKind {
        match self {
            BasisTermSpec::Intercept => TermKind::Intercept,
            BasisTermSpec::PSplineLinear { .. } => TermKind::PSplineLinear,
            BasisTermSpec::PSplineCubic { .. } => TermKind::PSplineCubic,
            BasisTermSpec::CyclicCubic { .. } => TermKind::CyclicCubic,
            BasisTermSpec::Fourier { .. } => TermKind::Fourier,
            BasisTermSpec::Ar { .. } => TermKind::Ar,
            BasisTermSpec::Pulse => TermKind::Pulse,
            BasisTermSpec::Step => TermKind::Step,
        }
    }

    pub fn is_penalized(&self) -> bool {
        matches!(
            self,
            BasisTermSpec::PSplineLinear { .. }
                | BasisTermSpec::PSplineCubic { .. }
                | BasisTermSpec::CyclicCubic { .. }
        )
    }

    /// Smooth terms whose span contains the constant function; the fitter
    /// removes that direction so the intercept stays identifiable.
    pub fn needs_centering(&self) -> bool {
        self.is_penalized()
    }

    /// `None` when the term's smoothing parameter is selected by GCV.
    pub fn fixed_lambda(&self) -> Option<f64> {
        match self {
            BasisTermSpec::PSplineLinear { lambda, .. }
            | BasisTermSpec::PSplineCubic { lambda, .. }
            | BasisTermSpec::CyclicCubic { lambda, .. } => *lambda,
            _ => Some(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GawsError::InvalidArgument(m));
        match *self {
            BasisTermSpec::PSplineLinear {
                num_knots,
                penalty_order,
                lambda,
            }
            | BasisTermSpec::PSplineCubic {
                num_knots,
                penalty_order,
                lambda,
            } => {
                if penalty_order < 1 || num_knots < penalty_order + 2 {
                    return bad(format!(
                        "P-spline needs num_knots >= penalty_order + 2 and order >= 1 (knots {num_knots}, order {penalty_order})"
                    ));
                }
                check_lambda(lambda)
            }
            BasisTermSpec::CyclicCubic {
                num_knots, lambda, ..
            } => {
                if matches!(num_knots, Some(k) if k < 3) {
                    return bad("cyclic spline needs at least 3 knots".into());
                }
                check_lambda(lambda)
            }
            BasisTermSpec::Fourier { period, harmonics } => {
                if harmonics < 1 || period <= 1.0 {
                    return bad(format!(
                        "Fourier needs harmonics >= 1 and period > 1 (got {harmonics}, {period})"
                    ));
                }
                Ok(())
            }
            BasisTermSpec::Ar { ar_order } => {
                if ar_order < 1 {
                    return bad("AR order must be >= 1".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn check_lambda(lambda: Option<f64>) -> Result<()> {
    match lambda {
        Some(l) if !(l >= 0.0 && l.is_finite()) => Err(GawsError::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {l}"
        ))),
        _ => Ok(()),
    }
}

/// A term evaluated on a grid: design matrix `B` (N × d) and penalty `G` (d × d).
#[derive(Debug, Clone)]
pub struct BasisRealization {
    pub design: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub term: BasisTermSpec,
}

impl BasisRealization {
    pub fn ncols(&self) -> usize {
        self.design.ncols()
    }
}

/// B-spline design matrix by the Cox–de Boor recursion.
///
/// `breakpoints` are strictly increasing; the knot vector is extended by
/// `degree` knots on each side at the spacing of the adjacent interval, so
/// the basis has `breakpoints.len() - 1 + degree` functions and forms a
/// partition of unity on `[breakpoints[0], breakpoints[last]]`.
pub fn bspline_design(t: &[f64], breakpoints: &[f64], degree: usize) -> Result<DMatrix<f64>> {
    if breakpoints.len() < 2 {
        return Err(GawsError::InvalidArgument(
            "need at least two breakpoints".into(),
        ));
    }
    if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GawsError::InvalidArgument(
            "breakpoints must be strictly increasing".into(),
        ));
    }
    let lo = breakpoints[0];
    let hi = *breakpoints.last().unwrap();
    if let Some(&bad) = t.iter().find(|&&v| !(v >= lo && v <= hi)) {
        return Err(GawsError::Domain(format!(
            "t = {bad} is outside the knot range [{lo}, {hi}]"
        )));
    }

    let nb = breakpoints.len();
    let h_lo = breakpoints[1] - breakpoints[0];
    let h_hi = breakpoints[nb - 1] - breakpoints[nb - 2];
    let mut knots = Vec::with_capacity(nb + 2 * degree);
    knots.extend((1..=degree).rev().map(|i| lo - i as f64 * h_lo));
    knots.extend_from_slice(breakpoints);
    knots.extend((1..=degree).map(|i| hi + i as f64 * h_hi));

    let ncols = nb - 1 + degree;
    let mut out = DMatrix::zeros(t.len(), ncols);
    let mut b = vec![0.0; knots.len() - 1];
    for (row, &x) in t.iter().enumerate() {
        // degree 0: half-open intervals, with the right end folded into the last one
        b.iter_mut().for_each(|v| *v = 0.0);
        let span = if x >= hi {
            degree + nb - 2
        } else {
            degree + breakpoints.partition_point(|&k| k <= x) - 1
        };
        b[span] = 1.0;
        for k in 1..=degree {
            for i in 0..knots.len() - 1 - k {
                let left = if b[i] != 0.0 {
                    (x - knots[i]) / (knots[i + k] - knots[i]) * b[i]
                } else {
                    0.0
                };
                let right = if b[i + 1] != 0.0 {
                    (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) * b[i + 1]
                } else {
                    0.0
                };
                b[i] = left + right;
            }
        }
        for j in 0..ncols {
            out[(row, j)] = b[j];
        }
    }
    Ok(out)
}

/// `DᵀD` for the `order`-th difference matrix `D` on `d` coefficients.
pub fn pspline_penalty(d: usize, order: usize) -> Result<DMatrix<f64>> {
    if order < 1 || d <= order {
        return Err(GawsError::InvalidArgument(format!(
            "difference penalty needs d > order >= 1 (d = {d}, order = {order})"
        )));
    }
    let mut diff = DMatrix::<f64>::identity(d, d);
    for _ in 0..order {
        let r = diff.nrows();
        let next = diff.rows(1, r - 1) - diff.rows(0, r - 1);
        diff = next;
    }
    Ok(diff.transpose() * diff)
}

/// Equally spaced breakpoints over `[lo, hi]`.
pub fn equally_spaced(lo: f64, hi: f64, num_knots: usize) -> Vec<f64> {
    let step = (hi - lo) / (num_knots - 1) as f64;
    let mut knots: Vec<f64> = (0..num_knots).map(|i| lo + i as f64 * step).collect();
    // the endpoint must be exact so the last observation stays in range
    if let Some(last) = knots.last_mut() {
        *last = hi;
    }
    knots
}

/// Cyclic cubic spline with one knot per integer of `period`.
pub fn cyclic_cubic_design(x: &[f64], period: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    cyclic_cubic_design_with_knots(x, period, period.round().max(3.0) as usize)
}

/// Periodic cubic B-splines on `num_knots` equally spaced knots over
/// `[0, period)`, built by folding an open uniform basis modulo the period.
/// The penalty is the circulant second-difference penalty.
pub fn cyclic_cubic_design_with_knots(
    x: &[f64],
    period: f64,
    num_knots: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if num_knots < 3 {
        return Err(GawsError::InvalidArgument(
            "cyclic spline needs at least 3 knots".into(),
        ));
    }
    if let Some(&bad) = x.iter().find(|&&v| !(v >= 0.0 && v < period)) {
        return Err(GawsError::Domain(format!(
            "x = {bad} is outside [0, {period})"
        )));
    }
    let open = bspline_design(x, &equally_spaced(0.0, period, num_knots + 1), 3)?;
    let mut design = DMatrix::zeros(x.len(), num_knots);
    for j in 0..open.ncols() {
        let col = j % num_knots;
        for r in 0..x.len() {
            design[(r, col)] += open[(r, j)];
        }
    }
    let mut diff = DMatrix::zeros(num_knots, num_knots);
    for j in 0..num_knots {
        diff[(j, (j + num_knots - 1) % num_knots)] += 1.0;
        diff[(j, j)] -= 2.0;
        diff[(j, (j + 1) % num_knots)] += 1.0;
    }
    Ok((design, diff.transpose() * &diff))
}

/// Columns `sin(2πkt/period), cos(2πkt/period)` for `k = 1..=harmonics`.
pub fn fourier_design(t: &[f64], period: f64, harmonics: usize) -> Result<DMatrix<f64>> {
    if harmonics < 1 || period <= 1.0 {
        return Err(GawsError::InvalidArgument(format!(
            "Fourier needs harmonics >= 1 and period > 1 (got {harmonics}, {period})"
        )));
    }
    let mut m = DMatrix::zeros(t.len(), 2 * harmonics);
    for (r, &v) in t.iter().enumerate() {
        for k in 1..=harmonics {
            let a = 2.0 * std::f64::consts::PI * k as f64 * v / period;
            m[(r, 2 * (k - 1))] = a.sin();
            m[(r, 2 * (k - 1) + 1)] = a.cos();
        }
    }
    Ok(m)
}

/// One indicator column per pulse time and one per step onset; a step stays
/// on until the next onset or the end of the grid.
pub fn pulse_and_step_design(
    n: usize,
    pulse_times: &[usize],
    step_changepoints: &[usize],
) -> Result<DMatrix<f64>> {
    for set in [pulse_times, step_changepoints] {
        if let Some(&bad) = set.iter().find(|&&i| i >= n) {
            return Err(GawsError::InvalidArgument(format!(
                "event index {bad} outside [0, {n})"
            )));
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(GawsError::InvalidArgument("duplicate event index".into()));
        }
    }
    let mut steps = step_changepoints.to_vec();
    steps.sort_unstable();
    let mut m = DMatrix::zeros(n, pulse_times.len() + steps.len());
    for (j, &p) in pulse_times.iter().enumerate() {
        m[(p, j)] = 1.0;
    }
    for (j, &tau) in steps.iter().enumerate() {
        let end = steps.get(j + 1).copied().unwrap_or(n);
        for r in tau..end {
            m[(r, pulse_times.len() + j)] = 1.0;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    /// Robust z-score threshold on first differences.
    pub pulse_z: f64,
    pub max_changepoints: usize,
    /// Minimum number of observations between changepoints.
    pub min_segment: usize,
    /// Length of the seasonal cycle whose median profile is removed before
    /// the mean-shift scan; `None` disables it.
    pub season: Option<usize>,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            pulse_z: 5.0,
            max_changepoints: 3,
            min_segment: 24,
            season: Some(24),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCandidates {
    pub pulse_times: Vec<usize>,
    pub step_changepoints: Vec<usize>,
}

/// Proposes pulse and step regressors before fitting.
///
/// Pulses are isolated spikes: a first difference into `t` and out of `t`
/// both exceed `pulse_z` robust z-scores with opposite signs. Steps come
/// from greedy binary segmentation of mean shifts, accepting a split when
/// its variance reduction exceeds a BIC penalty `2·ln n` in units of the
/// difference-based noise variance.
pub fn detect_candidate_events(y: &[Option<f64>], cfg: &EventConfig) -> Result<EventCandidates> {
    let obs: Vec<(usize, f64)> = y
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.filter(|v| v.is_finite()).map(|v| (t, v)))
        .collect();
    if obs.len() < 20 {
        return Err(GawsError::InsufficientData {
            needed: 20,
            available: obs.len(),
        });
    }
    let positive = obs.iter().all(|&(_, v)| v > 0.0);
    let x: Vec<f64> = obs
        .iter()
        .map(|&(_, v)| if positive { v.ln() } else { v })
        .collect();

    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let med = median(&diffs);
    let mad = median(&diffs.iter().map(|d| (d - med).abs()).collect::<Vec<_>>());
    let scale = (1.4826 * mad).max(1e-12 * (1.0 + med.abs()));
    let z: Vec<f64> = diffs.iter().map(|d| (d - med) / scale).collect();

    let mut pulse_pos = Vec::new();
    for i in 1..x.len() - 1 {
        let (into, out) = (z[i - 1], z[i]);
        if into.abs() > cfg.pulse_z && out.abs() > cfg.pulse_z && into.signum() != out.signum() {
            pulse_pos.push(i);
        }
    }

    // mean-shift scan on the series with spikes dropped and the seasonal profile removed
    let keep: Vec<usize> = (0..x.len())
        .filter(|i| pulse_pos.binary_search(i).is_err())
        .collect();
    let mut r: Vec<f64> = keep.iter().map(|&i| x[i]).collect();
    if let Some(season) = cfg.season.filter(|&s| s > 1 && obs.len() >= 2 * s) {
        let mut buckets = vec![Vec::new(); season];
        for (k, &i) in keep.iter().enumerate() {
            buckets[obs[i].0 % season].push(r[k]);
        }
        let profile: Vec<f64> = buckets
            .iter()
            .map(|b| if b.is_empty() { 0.0 } else { median(b) })
            .collect();
        for (k, &i) in keep.iter().enumerate() {
            r[k] -= profile[obs[i].0 % season];
        }
    }
    let rd: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();
    let rmed = median(&rd);
    let noise_sd = 1.4826 * median(&rd.iter().map(|d| (d - rmed).abs()).collect::<Vec<_>>())
        / std::f64::consts::SQRT_2;
    let noise_var = noise_sd.powi(2).max(1e-24);
    let threshold = 2.0 * (r.len() as f64).ln() * noise_var;

    let cps = binary_segmentation(&r, cfg.max_changepoints, cfg.min_segment.max(1), threshold);

    let mut pulse_times: Vec<usize> = pulse_pos.iter().map(|&i| obs[i].0).collect();
    pulse_times.sort_unstable();
    let mut step_changepoints: Vec<usize> = cps.iter().map(|&k| obs[keep[k]].0).collect();
    step_changepoints.sort_unstable();
    step_changepoints.dedup();
    Ok(EventCandidates {
        pulse_times,
        step_changepoints,
    })
}

/// Greedy best-first binary segmentation. Returns split positions `k`
/// meaning a new segment starts at `x[k]`.
fn binary_segmentation(
    x: &[f64],
    max_cps: usize,
    min_seg: usize,
    threshold: f64,
) -> Vec<usize> {
    let mut prefix = vec![0.0; x.len() + 1];
    let mut prefix2 = vec![0.0; x.len() + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix2[i + 1] = prefix2[i] + v * v;
    }
    let rss = |a: usize, b: usize| -> f64 {
        let n = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix2[b] - prefix2[a] - s * s / n).max(0.0)
    };
    let best_split = |a: usize, b: usize| -> Option<(f64, usize)> {
        if b - a < 2 * min_seg {
            return None;
        }
        let total = rss(a, b);
        (a + min_seg..=b - min_seg)
            .map(|k| (total - rss(a, k) - rss(k, b), k))
            .fold(None, |acc: Option<(f64, usize)>, c| match acc {
                Some(best) if best.0 >= c.0 => Some(best),
                _ => Some(c),
            })
    };
    let mut segments = vec![(0, x.len())];
    let mut cps = Vec::new();
    while cps.len() < max_cps {
        let candidate = segments
            .iter()
            .enumerate()
            .filter_map(|(i, &(a, b))| best_split(a, b).map(|(g, k)| (g, k, i)))
            .fold(None, |acc: Option<(f64, usize, usize)>, c| match acc {
                Some(best) if best.0 >= c.0 => Some(best),
                _ => Some(c),
            });
        match candidate {
            Some((gain, k, i)) if gain > threshold => {
                let (a, b) = segments.remove(i);
                segments.push((a, k));
                segments.push((k, b));
                cps.push(k);
            }
            _ => break,
        }
    }
    cps.sort_unstable();
    cps
}

pub(crate) fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Evaluates a non-AR, non-event term on the grid.
pub fn realize(term: &BasisTermSpec, x: &RegressorMatrix) -> Result<BasisRealization> {
    term.validate()?;
    let n = x.len();
    let (design, penalty) = match *term {
        BasisTermSpec::Intercept => (DMatrix::from_element(n, 1, 1.0), DMatrix::zeros(1, 1)),
        BasisTermSpec::PSplineLinear {
            num_knots,
            penalty_order,
            ..
        } => trend_basis(x, num_knots, 1, penalty_order)?,
        BasisTermSpec::PSplineCubic {
            num_knots,
            penalty_order,
            ..
        } => trend_basis(x, num_knots, 3, penalty_order)?,
        BasisTermSpec::CyclicCubic {
            input, num_knots, ..
        } => {
            let period = input.period();
            let k = num_knots.unwrap_or(period as usize);
            cyclic_cubic_design_with_knots(&x.column(input), period, k)?
        }
        BasisTermSpec::Fourier { period, harmonics } => {
            let d = fourier_design(&x.column(Regressor::Time), period, harmonics)?;
            let c = d.ncols();
            (d, DMatrix::zeros(c, c))
        }
        BasisTermSpec::Ar { .. } | BasisTermSpec::Pulse | BasisTermSpec::Step => {
            return Err(GawsError::InvalidArgument(format!(
                "{:?} terms depend on the response and are realized by the fitter",
                term.kind()
            )))
        }
    };
    Ok(BasisRealization {
        design,
        penalty,
        term: term.clone(),
    })
}

fn trend_basis(
    x: &RegressorMatrix,
    num_knots: usize,
    degree: usize,
    order: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t = x.column(Regressor::Time);
    let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(GawsError::InvalidArgument(
            "trend term needs at least two distinct time points".into(),
        ));
    }
    let b = bspline_design(&t, &equally_spaced(lo, hi, num_knots), degree)?;
    let g = pspline_penalty(b.ncols(), order)?;
    Ok((b, g))
}

/// Centred lagged link-scale response columns `g(y_{t-k})`, `k = 1..=order`;
/// unavailable lags are set to the column mean (zero after centring).
pub fn ar_design(link_y: &[Option<f64>], order: usize) -> DMatrix<f64> {
    let n = link_y.len();
    let present: Vec<f64> = link_y.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let mut m = DMatrix::zeros(n, order);
    for k in 1..=order {
        for t in k..n {
            if let Some(v) = link_y[t - k] {
                m[(t, k - 1)] = v - mean;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn equally_spaced_ends_exactly_at_the_range_end() {
        for k in 2..100 {
            let knots = equally_spaced(0.0, 503.0, k);
            assert_eq!(knots[0], 0.0);
            assert_eq!(*knots.last().unwrap(), 503.0);
            assert!(knots.windows(2).all(|w| w[1] > w[0]));
        }
        let t: Vec<f64> = (0..504).map(f64::from).collect();
        bspline_design(&t, &equally_spaced(0.0, 503.0, 30), 1).unwrap();
    }

    #[test]
    fn degree_zero_indicator() {
        let b = bspline_design(&[0.5], &[0.0, 1.0, 2.0], 0).unwrap();
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn degree_one_hand_evaluation() {
        // extended knots {-1,0,1,2,3}: hats peaking at 0, 1, 2
        let b = bspline_design(&[0.25], &[0.0, 1.0, 2.0], 1).unwrap();
        let row: Vec<f64> = b.row(0).iter().copied().collect();
        assert_eq!(row.len(), 3);
        assert_relative_eq!(row[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(row[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(row[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cubic_partition_of_unity() {
        let knots = equally_spaced(0.0, 13.0, 14);
        let t: Vec<f64> = (0..=130).map(|i| i as f64 * 0.1).collect();
        let b = bspline_design(&t, &knots, 3).unwrap();
        for r in 0..b.nrows() {
            assert!((b.row(r).sum() - 1.0).abs() < 1e-12);
            assert!(b.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bspline_errors() {
        assert!(bspline_design(&[3.0], &[0.0, 1.0, 2.0], 1).is_err());
        assert!(bspline_design(&[0.5], &[0.0, 1.0, 1.0], 1).is_err());
    }

    #[test]
    fn first_difference_penalty_by_hand() {
        let g = pspline_penalty(3, 1).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(g, expect);
        assert!(pspline_penalty(3, 3).is_err());
    }

    #[test]
    fn penalty_null_spaces() {
        let g = pspline_penalty(5, 2).unwrap();
        let lin = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!((lin.transpose() * &g * &lin)[0], 0.0);
        let g1 = pspline_penalty(8, 1).unwrap();
        let c = DVector::from_element(8, 3.3);
        assert!((c.transpose() * &g1 * &c)[0].abs() < 1e-12);
        assert!(min_eigenvalue(&g) > -1e-10);
        // rank d - order
        let eig = g.clone().symmetric_eigen().eigenvalues;
        assert_eq!(eig.iter().filter(|v| v.abs() > 1e-9).count(), 3);
    }

    #[test]
    fn cyclic_constant_and_continuity() {
        let x: Vec<f64> = (0..7).map(|v| v as f64).collect();
        let (b, g) = cyclic_cubic_design(&x, 7.0).unwrap();
        let ones = DVector::from_element(b.ncols(), 2.5);
        let fitted = &b * &ones;
        assert!(fitted.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!((ones.transpose() * &g * &ones)[0].abs() < 1e-12);
        assert!(min_eigenvalue(&g) > -1e-10);

        let coef = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.1, 0.8, -0.4, 1.7]);
        let eps = 1e-9;
        let (edge, _) = cyclic_cubic_design(&[0.0, 7.0 - 1e-13, eps, 7.0 - eps], 7.0).unwrap();
        let f = &edge * &coef;
        assert!((f[0] - f[1]).abs() < 1e-10);
        // one-sided slopes agree across the wrap
        let right = (f[2] - f[0]) / eps;
        let left = (f[0] - f[3]) / eps;
        assert!((right - left).abs() < 1e-4 * (1.0 + right.abs()));
    }

    #[test]
    fn cyclic_out_of_range() {
        assert!(cyclic_cubic_design(&[24.0], 24.0).is_err());
        assert!(cyclic_cubic_design(&[-1.0], 24.0).is_err());
    }

    #[test]
    fn cyclic_projects_cosine() {
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let (b, _) = cyclic_cubic_design(&x, 24.0).unwrap();
        let target = DVector::from_iterator(
            24,
            x.iter().map(|v| (2.0 * std::f64::consts::PI * v / 24.0).cos()),
        );
        let coef = (b.transpose() * &b)
            .cholesky()
            .unwrap()
            .solve(&(b.transpose() * &target));
        let fitted = &b * coef;
        assert!((fitted - target).amax() < 1e-3);
    }

    #[test]
    fn fourier_rows_and_orthogonality() {
        let b = fourier_design(&[0.0, 6.0], 24.0, 2).unwrap();
        let r0: Vec<f64> = b.row(0).iter().copied().collect();
        assert_relative_eq!(r0[0], 0.0);
        assert_relative_eq!(r0[1], 1.0);
        let r1: Vec<f64> = b.row(1).iter().copied().collect();
        let expect = [1.0, 0.0, 0.0, -1.0];
        for (a, e) in r1.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        let t: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let full = fourier_design(&t, 24.0, 2).unwrap();
        let gram = full.transpose() * &full;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(gram[(i, j)].abs() < 1e-8);
                }
            }
        }
        assert!(fourier_design(&t, 24.0, 0).is_err());
    }

    #[test]
    fn pulse_and_step_columns() {
        let p = pulse_and_step_design(5, &[2], &[]).unwrap();
        assert_eq!(p.column(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = pulse_and_step_design(6, &[], &[3]).unwrap();
        assert_eq!(
            s.column(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(pulse_and_step_design(6, &[], &[]).unwrap().ncols(), 0);
        assert!(pulse_and_step_design(6, &[1, 1], &[]).is_err());
        assert!(pulse_and_step_design(6, &[6], &[]).is_err());
        let two = pulse_and_step_design(6, &[], &[4, 2]).unwrap();
        assert_eq!(two.column(0).sum(), 2.0);
        assert_eq!(two.column(1).sum(), 2.0);
    }

    #[test]
    fn spike_is_detected() {
        let mut y = vec![Some(100.0); 300];
        y[100] = Some(1000.0);
        let ev = detect_candidate_events(&y, &EventConfig::default()).unwrap();
        assert_eq!(ev.pulse_times, vec![100]);
        assert!(ev.step_changepoints.is_empty());
    }

    #[test]
    fn constant_series_has_no_events() {
        let y = vec![Some(7.0); 200];
        let ev = detect_candidate_events(&y, &EventConfig::default()).unwrap();
        assert!(ev.pulse_times.is_empty());
        assert!(ev.step_changepoints.is_empty());
    }

    #[test]
    fn short_series_is_rejected() {
        let y = vec![Some(7.0); 10];
        assert!(detect_candidate_events(&y, &EventConfig::default()).is_err());
    }

    #[test]
    fn seasonal_step_is_located() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.02).unwrap();
        // multiplicative daily cycle with a 30% level shift at t = 240
        let y: Vec<Option<f64>> = (0..504)
            .map(|t| {
                let daily = 0.1 * (2.0 * std::f64::consts::PI * (t % 24) as f64 / 24.0).sin();
                let level = if t >= 240 { 1.3f64.ln() } else { 0.0 };
                Some((100f64.ln() + level + daily + noise.sample(&mut rng)).exp())
            })
            .collect();
        let ev = detect_candidate_events(&y, &EventConfig::default()).unwrap();
        assert_eq!(ev.step_changepoints.len(), 1, "{ev:?}");
        assert!(ev.step_changepoints[0].abs_diff(240) <= 2, "{ev:?}");
        assert!(ev.pulse_times.is_empty());
    }

    proptest::proptest! {
        #[test]
        fn bspline_rows_sum_to_one(
            gaps in proptest::collection::vec(0.1f64..3.0, 2..12),
            degree in 1usize..=3,
            u in proptest::collection::vec(0.0f64..=1.0, 1..40),
        ) {
            let mut knots = vec![0.0];
            for g in &gaps {
                knots.push(knots.last().unwrap() + g);
            }
            let hi = *knots.last().unwrap();
            let t: Vec<f64> = u.iter().map(|v| v * hi).collect();
            let b = bspline_design(&t, &knots, degree).unwrap();
            proptest::prop_assert_eq!(b.ncols(), knots.len() - 1 + degree);
            for r in 0..b.nrows() {
                proptest::prop_assert!((b.row(r).sum() - 1.0).abs() < 1e-12);
                proptest::prop_assert!(b.row(r).iter().all(|&v| v >= -1e-15));
            }
        }

        #[test]
        fn difference_penalties_are_psd_with_polynomial_null_space(d in 4usize..30, order in 1usize..=2) {
            let g = pspline_penalty(d, order).unwrap();
            proptest::prop_assert!(min_eigenvalue(&g) > -1e-9);
            let poly = DVector::from_fn(d, |i, _| if order == 1 { 2.5 } else { 1.0 - 0.5 * i as f64 });
            proptest::prop_assert!((poly.transpose() * &g * &poly)[0].abs() < 1e-9);
            let zero = g.clone().symmetric_eigen().eigenvalues.iter().filter(|v| v.abs() < 1e-9).count();
            proptest::prop_assert_eq!(zero, order);
        }
    }

    #[test]
    fn hourly_calendar() {
        let x = RegressorMatrix::hourly(50, 7, 22);
        assert_eq!(x.hour_of_day[..3], [22, 23, 0]);
        assert_eq!(x.day_of_week[..3], [7, 7, 1]);
    }
}
