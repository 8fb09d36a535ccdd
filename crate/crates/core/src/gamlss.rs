//! Penalized maximum likelihood for distributional regression.
//!
//! Every distribution parameter θ_m has a linear predictor
//! `g_m(θ_m) = Σ_j B_j a_j`. The objective is
//! `ℓ(a) − ½ Σ λ_j a_jᵀ G_j a_j`, maximized by cycling over the parameters
//! (μ, σ, ν, τ) and taking one Fisher-scoring step per parameter per cycle.
//! Each step solves the penalized weighted least-squares system for all of
//! that parameter's terms jointly, which is the fixed point of backfitting,
//! and is step-halved so the objective never decreases.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{
    ar_design, detect_candidate_events, pulse_and_step_design, realize, BasisTermSpec,
    EventCandidates, EventConfig, RegressorMatrix,
};
use crate::distributions::{DistributionFamily, FamilyId, Link, ParamRole, ParameterVector, Params};
use crate::error::{GawsError, Result};
use crate::series::TimeSeriesSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

impl Criterion {
    pub fn penalty(self, edf: f64, n_obs: usize) -> f64 {
        match self {
            Criterion::Aic => 2.0 * edf,
            Criterion::Bic => (n_obs as f64).ln() * edf,
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = GawsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            _ => Err(GawsError::Config(format!("unknown criterion '{s}'"))),
        }
    }
}

/// A distribution family plus additive terms for each of its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFamilySpec {
    pub name: String,
    pub family: FamilyId,
    /// Link overrides; unspecified roles use the family default.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<ParamRole, Link>,
    pub terms: BTreeMap<ParamRole, Vec<BasisTermSpec>>,
}

impl ModelFamilySpec {
    pub fn new(name: impl Into<String>, family: FamilyId) -> Self {
        ModelFamilySpec {
            name: name.into(),
            family,
            links: BTreeMap::new(),
            terms: BTreeMap::new(),
        }
    }

    /// Replaces the terms for `role`.
    pub fn with_terms(mut self, role: ParamRole, terms: Vec<BasisTermSpec>) -> Self {
        self.terms.insert(role, terms);
        self
    }

    /// Gives every family role without terms an intercept.
    pub fn fill_intercepts(mut self) -> Self {
        for &role in self.family.roles() {
            self.terms
                .entry(role)
                .or_insert_with(|| vec![BasisTermSpec::Intercept]);
        }
        self
    }

    pub fn distribution(&self) -> Result<DistributionFamily> {
        let mut d = DistributionFamily::new(self.family);
        for (&role, &link) in &self.links {
            d = d.with_link(role, link)?;
        }
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution()?;
        let roles = self.family.roles();
        for (role, terms) in &self.terms {
            if !roles.contains(role) {
                return Err(GawsError::Config(format!(
                    "{}: family {} has no parameter {}",
                    self.name,
                    self.family,
                    role.name()
                )));
            }
            for t in terms {
                t.validate()?;
                if matches!(
                    t,
                    BasisTermSpec::Ar { .. } | BasisTermSpec::Pulse | BasisTermSpec::Step
                ) && *role != ParamRole::Location
                {
                    return Err(GawsError::Config(format!(
                        "{}: {:?} terms are only supported for the location",
                        self.name,
                        t.kind()
                    )));
                }
            }
        }
        for role in roles {
            if self.terms.get(role).map_or(true, |t| t.is_empty()) {
                return Err(GawsError::Config(format!(
                    "{}: parameter {} has no terms",
                    self.name,
                    role.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub criterion: Criterion,
    pub max_outer_iters: usize,
    /// Convergence threshold on the relative change of the global deviance.
    pub rel_tol: f64,
    pub lambda_grid: Vec<f64>,
    /// Select smoothing parameters by GCV; otherwise unfixed terms use the grid midpoint.
    pub gcv: bool,
    /// Outer cycles during which smoothing parameters may still move.
    pub max_lambda_cycles: usize,
    pub events: EventConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            criterion: Criterion::Aic,
            max_outer_iters: 50,
            rel_tol: 1e-4,
            lambda_grid: (0..=16).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect(),
            gcv: true,
            max_lambda_cycles: 8,
            events: EventConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_outer_iters < 1 {
            return Err(GawsError::Config(
                "rel_tol must be > 0 and max_outer_iters >= 1".into(),
            ));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(GawsError::Config(
                "lambda_grid must be non-empty and strictly positive".into(),
            ));
        }
        Ok(())
    }

    fn grid_midpoint(&self) -> f64 {
        let mut g = self.lambda_grid.clone();
        g.sort_by(f64::total_cmp);
        g[g.len() / 2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTerm {
    pub term: BasisTermSpec,
    /// Coefficients on the term's own (uncentred) basis.
    pub coefficients: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub edf: f64,
    /// Pulse times or step onsets used by event terms.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Penalized log-likelihood after each outer cycle.
    pub trace: Vec<f64>,
    /// First trace index computed with the final smoothing parameters.
    pub lambdas_frozen_at: usize,
    pub outer_iters: usize,
    pub ridge_rescued: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub series_id: String,
    pub spec: ModelFamilySpec,
    pub terms: BTreeMap<ParamRole, Vec<FittedTerm>>,
    pub edf: f64,
    pub loglik: f64,
    pub criterion: Criterion,
    pub penalized_nll: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub diagnostics: FitDiagnostics,
    /// Fitted parameters on the full grid.
    #[serde(skip)]
    pub fitted: Option<ParameterVector>,
}

impl FittedModel {
    pub fn family_name(&self) -> &str {
        &self.spec.name
    }

    /// All coefficients in role then term order.
    pub fn flat_coefficients(&self) -> Vec<f64> {
        self.terms
            .values()
            .flat_map(|ts| ts.iter().flat_map(|t| t.coefficients.iter().copied()))
            .collect()
    }

    pub fn lambdas(&self) -> Vec<(ParamRole, usize, f64)> {
        self.terms
            .iter()
            .flat_map(|(&r, ts)| {
                ts.iter()
                    .enumerate()
                    .filter_map(move |(i, t)| t.lambda.map(|l| (r, i, l)))
            })
            .collect()
    }
}

/// `−2ℓ + 2·edf` (AIC) or `−2ℓ + ln(n_obs)·edf` (BIC).
pub fn penalized_nll(model: &FittedModel, criterion: Criterion) -> f64 {
    penalized_nll_parts(model.loglik, model.edf, model.n_obs, criterion)
}

pub fn penalized_nll_parts(loglik: f64, edf: f64, n_obs: usize, criterion: Criterion) -> f64 {
    -2.0 * loglik + criterion.penalty(edf, n_obs)
}

pub fn edf(model: &FittedModel) -> f64 {
    model.edf
}

/// `tr(B (BᵀWB + λG)⁻¹ BᵀW)` for a single term.
pub fn term_edf(b: &DMatrix<f64>, w: &[f64], g: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let h = weighted_gram(b, w);
    let a = &h + g * lambda;
    let (chol, _) = cholesky_with_rescue(a, "term")?;
    Ok(chol.solve(&h).trace())
}

/// Smoothing parameters chosen by GCV for every penalized term.
pub fn select_lambdas(
    y: &TimeSeriesSample,
    x: &RegressorMatrix,
    spec: &ModelFamilySpec,
    cfg: &FitConfig,
) -> Result<Vec<(ParamRole, usize, f64)>> {
    let cfg = FitConfig {
        gcv: true,
        ..cfg.clone()
    };
    Ok(fit(y, x, spec, &cfg)?.lambdas())
}

/// Fits one series under one model family.
pub fn fit(
    y: &TimeSeriesSample,
    x: &RegressorMatrix,
    spec: &ModelFamilySpec,
    cfg: &FitConfig,
) -> Result<FittedModel> {
    spec.validate()?;
    cfg.validate()?;
    if y.len() != x.len() {
        return Err(GawsError::InvalidArgument(format!(
            "series '{}' has {} points but the grid has {}",
            y.id,
            y.len(),
            x.len()
        )));
    }
    let family = spec.distribution()?;
    for (t, v) in y.observed() {
        if family.check_support(v).is_err() || !v.is_finite() {
            return Err(GawsError::SupportViolation {
                family: family.name(),
                index: t,
                value: v,
            });
        }
    }

    let needs_events = spec
        .terms
        .values()
        .flatten()
        .any(|t| matches!(t, BasisTermSpec::Pulse | BasisTermSpec::Step));
    let events = if needs_events {
        let mut ev = detect_candidate_events(&y.values, &cfg.events)?;
        if let Some(p) = &x.pulse_indicators {
            ev.pulse_times = p.clone();
        }
        ev
    } else {
        EventCandidates::default()
    };

    let max_ar = spec
        .terms
        .values()
        .flatten()
        .filter_map(|t| match t {
            BasisTermSpec::Ar { ar_order } => Some(*ar_order),
            _ => None,
        })
        .max();

    match max_ar {
        None => fit_with_ar(y, x, spec, cfg, &family, &events, 0),
        Some(max) => {
            let mut best: Option<FittedModel> = None;
            for p in 0..=max {
                let m = fit_with_ar(y, x, spec, cfg, &family, &events, p)?;
                if best
                    .as_ref()
                    .map_or(true, |b| m.penalized_nll < b.penalized_nll)
                {
                    best = Some(m);
                }
            }
            Ok(best.expect("at least one AR order"))
        }
    }
}

struct Block {
    term_index: usize,
    start: usize,
    len: usize,
    penalty: Option<DMatrix<f64>>,
    constraint: Option<DMatrix<f64>>,
    lambda: f64,
    select: bool,
    events: Vec<usize>,
}

struct RoleState {
    role: ParamRole,
    link: Link,
    full: DMatrix<f64>,
    x: DMatrix<f64>,
    blocks: Vec<Block>,
    beta: DVector<f64>,
    theta: Vec<f64>,
}

impl RoleState {
    fn penalty_matrix(&self) -> DMatrix<f64> {
        let p = self.x.ncols();
        let mut s = DMatrix::zeros(p, p);
        for b in &self.blocks {
            if let Some(g) = &b.penalty {
                s.view_mut((b.start, b.start), (b.len, b.len))
                    .zip_apply(g, |a, v| *a += b.lambda * v);
            }
        }
        s
    }

    fn penalty_value(&self, beta: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .filter_map(|b| {
                b.penalty.as_ref().map(|g| {
                    let a = beta.rows(b.start, b.len);
                    b.lambda * (a.transpose() * g * a)[0]
                })
            })
            .sum()
    }
}

struct Problem<'a> {
    family: &'a DistributionFamily,
    y: Vec<f64>,
    roles: Vec<RoleState>,
    ridge_rescued: bool,
}

impl Problem<'_> {
    fn params_at(&self, i: usize) -> Params {
        let mut p = Params::new(0.0, 1.0);
        for r in &self.roles {
            p.set(r.role, r.theta[i]);
        }
        p
    }

    fn loglik_with(&self, role_idx: usize, theta: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let mut p = self.params_at(i);
            p.set(self.roles[role_idx].role, theta[i]);
            total += self.family.log_density_unchecked(self.y[i], &p);
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    fn loglik(&self) -> f64 {
        let total: f64 = (0..self.y.len())
            .map(|i| self.family.log_density_unchecked(self.y[i], &self.params_at(i)))
            .sum();
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    fn total_penalty(&self) -> f64 {
        self.roles.iter().map(|r| r.penalty_value(&r.beta)).sum()
    }

    fn objective(&self) -> f64 {
        self.loglik() - 0.5 * self.total_penalty()
    }

    fn theta_for(&self, role_idx: usize, beta: &DVector<f64>) -> Vec<f64> {
        let r = &self.roles[role_idx];
        let eta = &r.x * beta;
        eta.iter().map(|&e| r.link.to_param(e)).collect()
    }

    /// Working response and weights for one role at the current parameters.
    fn working(&self, role_idx: usize) -> (DVector<f64>, Vec<f64>) {
        let r = &self.roles[role_idx];
        let eta = &r.x * &r.beta;
        let mut z = DVector::zeros(self.y.len());
        let mut w = vec![0.0; self.y.len()];
        for i in 0..self.y.len() {
            let (u, wi) = self.family.working_score(r.role, self.y[i], &self.params_at(i));
            w[i] = wi;
            z[i] = eta[i] + u / wi;
        }
        (z, w)
    }

    /// One penalized Fisher-scoring step for a role; returns whether any λ moved.
    fn step(&mut self, role_idx: usize, select: bool, grid: &[f64]) -> Result<bool> {
        let (z, w) = self.working(role_idx);
        let r = &self.roles[role_idx];
        let h = weighted_gram(&r.x, &w);
        let wz = DVector::from_iterator(z.len(), z.iter().zip(&w).map(|(a, b)| a * b));
        let b = r.x.transpose() * &wz;
        let zwz = z.dot(&wz);

        let mut changed = false;
        if select {
            let n = self.y.len() as f64;
            for bi in 0..self.roles[role_idx].blocks.len() {
                if !self.roles[role_idx].blocks[bi].select {
                    continue;
                }
                let mut scores = Vec::with_capacity(grid.len());
                for &lam in grid {
                    let old = self.roles[role_idx].blocks[bi].lambda;
                    self.roles[role_idx].blocks[bi].lambda = lam;
                    let s = self.roles[role_idx].penalty_matrix();
                    self.roles[role_idx].blocks[bi].lambda = old;
                    let v = match (&h + s).cholesky() {
                        Some(chol) => {
                            let beta = chol.solve(&b);
                            let rss = (zwz - 2.0 * beta.dot(&b) + (beta.transpose() * &h * &beta)[0])
                                .max(0.0);
                            let edf = chol.solve(&h).trace();
                            let dof = n - edf;
                            if dof > 0.0 {
                                n * rss / (dof * dof)
                            } else {
                                f64::INFINITY
                            }
                        }
                        None => f64::INFINITY,
                    };
                    scores.push(v);
                }
                let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let chosen = if lo.is_finite() && hi - lo <= 1e-10 * lo.abs().max(1e-300) {
                    let mut sorted = grid.to_vec();
                    sorted.sort_by(f64::total_cmp);
                    sorted[sorted.len() / 2]
                } else {
                    let k = scores
                        .iter()
                        .enumerate()
                        .fold(0, |best, (k, &v)| if v < scores[best] { k } else { best });
                    grid[k]
                };
                let block = &mut self.roles[role_idx].blocks[bi];
                if block.lambda != chosen {
                    block.lambda = chosen;
                    changed = true;
                }
            }
        }

        let r = &self.roles[role_idx];
        let a = &h + r.penalty_matrix();
        let (chol, rescued) = cholesky_with_rescue(a, r.role.name())?;
        self.ridge_rescued |= rescued;
        let target = chol.solve(&b);
        if target.iter().any(|v| !v.is_finite()) {
            return Err(GawsError::SingularSystem(format!(
                "non-finite solution for {}",
                r.role.name()
            )));
        }

        let base_pen: f64 = self
            .roles
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != role_idx)
            .map(|(_, r)| r.penalty_value(&r.beta))
            .sum();
        let r = &self.roles[role_idx];
        let current = self.loglik() - 0.5 * (base_pen + r.penalty_value(&r.beta));
        let start = r.beta.clone();
        let mut s = 1.0;
        for _ in 0..30 {
            let cand = &start + (&target - &start) * s;
            let theta = self.theta_for(role_idx, &cand);
            if theta.iter().all(|v| v.is_finite()) {
                let obj = self.loglik_with(role_idx, &theta)
                    - 0.5 * (base_pen + self.roles[role_idx].penalty_value(&cand));
                if obj >= current {
                    let r = &mut self.roles[role_idx];
                    r.beta = cand;
                    r.theta = theta;
                    break;
                }
            }
            s *= 0.5;
        }
        Ok(changed)
    }

    /// Per-role influence traces at the current parameters: `(role, per-block edf)`.
    fn block_edfs(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.roles.len());
        for (k, r) in self.roles.iter().enumerate() {
            let (_, w) = self.working(k);
            let h = weighted_gram(&r.x, &w);
            let (chol, _) = cholesky_with_rescue(&h + r.penalty_matrix(), r.role.name())?;
            let f = chol.solve(&h);
            out.push(
                r.blocks
                    .iter()
                    .map(|b| (b.start..b.start + b.len).map(|i| f[(i, i)]).sum())
                    .collect(),
            );
        }
        Ok(out)
    }
}

fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
    }
    xw.transpose() * xw
}

fn cholesky_with_rescue(
    a: DMatrix<f64>,
    what: &str,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    if let Some(c) = a.clone().cholesky() {
        return Ok((c, false));
    }
    let p = a.nrows();
    let scale = (a.trace() / p.max(1) as f64).abs().max(1.0);
    let ridged = a + DMatrix::identity(p, p) * (1e-8 * scale);
    ridged
        .cholesky()
        .map(|c| (c, true))
        .ok_or_else(|| GawsError::SingularSystem(what.to_string()))
}

/// Orthonormal basis of the complement of `c` (d × (d−1)), via a Householder reflection.
fn sum_to_zero_basis(c: &DVector<f64>) -> DMatrix<f64> {
    let d = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = if vv > 0.0 {
        DMatrix::identity(d, d) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(d, d)
    };
    h.columns(1, d - 1).into_owned()
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn drop_degenerate_columns(
    design: DMatrix<f64>,
    obs: &[usize],
    events: &[usize],
) -> (DMatrix<f64>, Vec<usize>) {
    let n = obs.len();
    let keep: Vec<usize> = (0..design.ncols())
        .filter(|&j| {
            let s: f64 = obs.iter().map(|&i| design[(i, j)]).sum();
            s > 0.0 && s < n as f64
        })
        .collect();
    let m = DMatrix::from_fn(design.nrows(), keep.len(), |i, j| design[(i, keep[j])]);
    (m, keep.iter().map(|&j| events[j]).collect())
}

fn fit_with_ar(
    y: &TimeSeriesSample,
    x: &RegressorMatrix,
    spec: &ModelFamilySpec,
    cfg: &FitConfig,
    family: &DistributionFamily,
    events: &EventCandidates,
    ar_order: usize,
) -> Result<FittedModel> {
    let obs: Vec<usize> = y.observed().map(|(t, _)| t).collect();
    let yv: Vec<f64> = y.observed().map(|(_, v)| v).collect();
    let n_obs = obs.len();
    let midpoint = cfg.grid_midpoint();

    let mu_link = family.link(ParamRole::Location);
    let link_y: Vec<Option<f64>> = y
        .values
        .iter()
        .map(|v| v.map(|v| if mu_link == Link::Log { v.ln() } else { v }))
        .collect();

    let mut roles = Vec::new();
    for &role in family.roles() {
        let terms = &spec.terms[&role];
        let mut has_constant = terms.iter().any(|t| matches!(t, BasisTermSpec::Intercept));
        let mut cols: Vec<DMatrix<f64>> = Vec::new();
        let mut blocks = Vec::new();
        let mut start = 0;
        for (ti, term) in terms.iter().enumerate() {
            let (design, penalty, constraint, ev) = match term {
                BasisTermSpec::Ar { .. } => {
                    (ar_design(&link_y, ar_order), None, None, Vec::new())
                }
                BasisTermSpec::Pulse => {
                    let d = pulse_and_step_design(x.len(), &events.pulse_times, &[])?;
                    let (d, ev) = drop_degenerate_columns(d, &obs, &events.pulse_times);
                    (d, None, None, ev)
                }
                BasisTermSpec::Step => {
                    let d = pulse_and_step_design(x.len(), &[], &events.step_changepoints)?;
                    let mut steps = events.step_changepoints.clone();
                    steps.sort_unstable();
                    let (d, ev) = drop_degenerate_columns(d, &obs, &steps);
                    (d, None, None, ev)
                }
                _ => {
                    let real = realize(term, x)?;
                    if term.needs_centering() && has_constant {
                        let c = DVector::from_iterator(
                            real.design.ncols(),
                            (0..real.design.ncols())
                                .map(|j| obs.iter().map(|&i| real.design[(i, j)]).sum::<f64>()),
                        );
                        let z = sum_to_zero_basis(&c);
                        let g = z.transpose() * &real.penalty * &z;
                        (&real.design * &z, Some(g), Some(z), Vec::new())
                    } else {
                        if term.needs_centering() {
                            has_constant = true;
                        }
                        let pen = term.is_penalized().then_some(real.penalty);
                        (real.design, pen, None, Vec::new())
                    }
                }
            };
            let len = design.ncols();
            let (lambda, select) = match term.fixed_lambda() {
                Some(l) => (l, false),
                None => (midpoint, cfg.gcv && cfg.lambda_grid.len() > 0),
            };
            blocks.push(Block {
                term_index: ti,
                start,
                len,
                penalty,
                constraint,
                lambda,
                select,
                events: ev,
            });
            start += len;
            cols.push(design);
        }
        let p = start;
        let mut full = DMatrix::zeros(x.len(), p);
        let mut c0 = 0;
        for c in &cols {
            full.view_mut((0, c0), (x.len(), c.ncols())).copy_from(c);
            c0 += c.ncols();
        }
        let xo = select_rows(&full, &obs);
        roles.push(RoleState {
            role,
            link: family.link(role),
            full,
            x: xo,
            blocks,
            beta: DVector::zeros(p),
            theta: vec![0.0; n_obs],
        });
    }

    let total_coefs: usize = roles.iter().map(|r| r.x.ncols()).sum();
    let needed = 30.max(total_coefs + 5);
    if n_obs < needed {
        return Err(GawsError::InsufficientData {
            needed,
            available: n_obs,
        });
    }

    let mut problem = Problem {
        family,
        y: yv,
        roles,
        ridge_rescued: false,
    };
    initialize(&mut problem)?;

    let grid = cfg.lambda_grid.clone();
    let any_select = problem
        .roles
        .iter()
        .any(|r| r.blocks.iter().any(|b| b.select));
    let mut selecting = any_select && cfg.gcv;
    let mut lambdas_frozen_at = if selecting { usize::MAX } else { 0 };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev_dev = -2.0 * problem.loglik();
    let mut iters = 0;
    for cycle in 0..cfg.max_outer_iters {
        iters = cycle + 1;
        let mut changed = false;
        for k in 0..problem.roles.len() {
            changed |= problem.step(k, selecting, &grid)?;
        }
        trace.push(problem.objective());
        let dev = -2.0 * problem.loglik();
        if selecting && (!changed || cycle + 1 >= cfg.max_lambda_cycles) {
            selecting = false;
            lambdas_frozen_at = cycle + 1;
            prev_dev = dev;
            continue;
        }
        if !selecting && (prev_dev - dev).abs() <= cfg.rel_tol * dev.abs().max(1e-8) {
            converged = true;
            break;
        }
        prev_dev = dev;
    }
    if lambdas_frozen_at == usize::MAX {
        lambdas_frozen_at = trace.len();
    }

    let loglik = problem.loglik();
    let block_edfs = problem.block_edfs()?;
    let edf: f64 = block_edfs.iter().flatten().sum();

    let mut fitted = ParameterVector::constant(x.len(), Params::new(0.0, 1.0));
    let mut terms = BTreeMap::new();
    for (r, edfs) in problem.roles.iter().zip(&block_edfs) {
        let eta = &r.full * &r.beta;
        let out = fitted.role_mut(r.role);
        for (t, e) in eta.iter().enumerate() {
            out[t] = r.link.to_param(*e);
        }
        let spec_terms = &spec.terms[&r.role];
        let fitted_terms = r
            .blocks
            .iter()
            .zip(edfs)
            .map(|(b, &e)| {
                let a = r.beta.rows(b.start, b.len).into_owned();
                let coefficients = match &b.constraint {
                    Some(z) => (z * a).iter().copied().collect(),
                    None => a.iter().copied().collect(),
                };
                FittedTerm {
                    term: spec_terms[b.term_index].clone(),
                    coefficients,
                    lambda: b.penalty.as_ref().map(|_| b.lambda),
                    edf: e,
                    events: b.events.clone(),
                }
            })
            .collect();
        terms.insert(r.role, fitted_terms);
    }

    Ok(FittedModel {
        series_id: y.id.clone(),
        spec: spec.clone(),
        terms,
        edf,
        loglik,
        criterion: cfg.criterion,
        penalized_nll: penalized_nll_parts(loglik, edf, n_obs, cfg.criterion),
        converged,
        n_obs,
        diagnostics: FitDiagnostics {
            trace,
            lambdas_frozen_at,
            outer_iters: iters,
            ridge_rescued: problem.ridge_rescued,
        },
        fitted: Some(fitted),
    })
}

/// Location from a penalized least-squares fit of the link-transformed response,
/// scale from the MAD of its residuals, ν = 0 and τ = 10.
fn initialize(problem: &mut Problem<'_>) -> Result<()> {
    let n = problem.y.len();
    let ones = vec![1.0; n];
    let positive = problem.family.id.positive_support();
    let mut resid_scale = 1.0;
    for k in 0..problem.roles.len() {
        let r = &problem.roles[k];
        let target: DVector<f64> = match r.role {
            ParamRole::Location => DVector::from_iterator(
                n,
                problem.y.iter().map(|&v| if r.link == Link::Log { v.ln() } else { v }),
            ),
            ParamRole::Scale => DVector::from_element(n, r.link.to_predictor(resid_scale)?),
            ParamRole::Shape => DVector::from_element(n, r.link.to_predictor(0.0).unwrap_or(0.0)),
            ParamRole::Df => DVector::from_element(n, r.link.to_predictor(10.0)?),
        };
        let h = weighted_gram(&r.x, &ones);
        let (chol, rescued) = cholesky_with_rescue(&h + r.penalty_matrix(), r.role.name())?;
        problem.ridge_rescued |= rescued;
        let beta = chol.solve(&(r.x.transpose() * &target));
        let eta = &r.x * &beta;
        if r.role == ParamRole::Location {
            let log_scale = positive || r.link == Link::Log;
            let resid: Vec<f64> = problem
                .y
                .iter()
                .zip(eta.iter())
                .map(|(&v, &e)| {
                    if log_scale {
                        v.ln() - if r.link == Link::Log { e } else { e.max(1e-300).ln() }
                    } else {
                        v - e
                    }
                })
                .collect();
            let med = crate::basis::median(&resid);
            let mad = crate::basis::median(&resid.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
            let floor = if log_scale {
                1e-3
            } else {
                1e-6 * (1.0 + crate::basis::median(&problem.y).abs())
            };
            resid_scale = (1.4826 * mad).max(floor);
        }
        let theta: Vec<f64> = eta.iter().map(|&e| r.link.to_param(e)).collect();
        let r = &mut problem.roles[k];
        r.beta = beta;
        r.theta = theta;
    }
    if problem.roles[0].theta.iter().any(|v| !v.is_finite()) || !problem.loglik().is_finite() {
        return Err(GawsError::Domain(
            "initial parameters give a non-finite likelihood".into(),
        ));
    }
    Ok(())
}
