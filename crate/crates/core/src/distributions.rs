//! Parametric density families for location, scale, shape and degrees of
//! freedom, with their link functions, Fisher-scoring derivatives, CDFs,
//! samplers, and quantile residuals.
//!
//! Parameterizations:
//!
//! * `Normal(μ, σ)`: mean and standard deviation.
//! * `LogNormal(μ, σ)`: μ is the median, σ the sd of `ln y`.
//! * `Gamma(μ, σ)`: mean μ and coefficient of variation σ (shape `1/σ²`).
//! * `Bccg(μ, σ, ν)`: Box-Cox Cole-Green, written without a truncation
//!   constant. For ν ≠ 0 its total mass on `y > 0` is `Φ(1/(σ|ν|))`, which
//!   is `1` to double precision for the parameter ranges used in practice.
//! * `LogT(μ, σ, τ)`: `ln y = ln μ + σ·T` with `T` Student-t on τ degrees of
//!   freedom.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution as _, Gamma as GammaSampler, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf, StudentsT};

use crate::error::{GawsError, Result};
use crate::special::{
    digamma, ln_gamma, probit_from_tails, std_normal_cdf, std_normal_ln_pdf, std_normal_quantile,
    std_normal_sf, trigamma, LN_SQRT_2PI,
};

/// |ν| below which the BCCG density switches to its ν = 0 (log-normal) form.
const BCCG_NU_ZERO: f64 = 1e-10;

/// Floor for Fisher weights on the predictor scale.
pub const MIN_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyId {
    Normal,
    LogNormal,
    Gamma,
    Bccg,
    LogT,
}

impl FamilyId {
    pub const ALL: [FamilyId; 5] = [
        FamilyId::Normal,
        FamilyId::LogNormal,
        FamilyId::Gamma,
        FamilyId::Bccg,
        FamilyId::LogT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyId::Normal => "normal",
            FamilyId::LogNormal => "lognormal",
            FamilyId::Gamma => "gamma",
            FamilyId::Bccg => "bccg",
            FamilyId::LogT => "logt",
        }
    }

    pub fn roles(self) -> &'static [ParamRole] {
        use ParamRole::*;
        match self {
            FamilyId::Normal | FamilyId::LogNormal | FamilyId::Gamma => &[Location, Scale],
            FamilyId::Bccg => &[Location, Scale, Shape],
            FamilyId::LogT => &[Location, Scale, Df],
        }
    }

    pub fn positive_support(self) -> bool {
        !matches!(self, FamilyId::Normal)
    }

    pub fn default_link(self, role: ParamRole) -> Link {
        match (self, role) {
            (FamilyId::Normal, ParamRole::Location) => Link::Identity,
            (FamilyId::Bccg, ParamRole::Shape) => Link::Identity,
            _ => Link::Log,
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FamilyId {
    type Err = GawsError;

    fn from_str(s: &str) -> Result<Self> {
        FamilyId::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GawsError::Config(format!("unknown distribution family '{s}'")))
    }
}

/// Distribution parameter roles, in fitting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    /// μ
    Location,
    /// σ
    Scale,
    /// ν
    Shape,
    /// τ
    Df,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Location => "mu",
            ParamRole::Scale => "sigma",
            ParamRole::Shape => "nu",
            ParamRole::Df => "tau",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    /// Inverse link: predictor η to parameter θ.
    pub fn to_param(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }

    /// Link: parameter θ to predictor η.
    pub fn to_predictor(self, theta: f64) -> Result<f64> {
        match self {
            Link::Identity => Ok(theta),
            Link::Log if theta > 0.0 && theta.is_finite() => Ok(theta.ln()),
            Link::Log => Err(GawsError::Domain(format!(
                "log link needs a positive parameter, got {theta}"
            ))),
        }
    }

    /// dθ/dη evaluated at θ.
    pub fn dparam_deta(self, theta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => theta,
        }
    }
}

/// Parameter values at a single time point, on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
    pub tau: f64,
}

impl Params {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Params {
            mu,
            sigma,
            nu: 0.0,
            tau: 10.0,
        }
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn get(&self, role: ParamRole) -> f64 {
        match role {
            ParamRole::Location => self.mu,
            ParamRole::Scale => self.sigma,
            ParamRole::Shape => self.nu,
            ParamRole::Df => self.tau,
        }
    }

    pub fn set(&mut self, role: ParamRole, v: f64) {
        match role {
            ParamRole::Location => self.mu = v,
            ParamRole::Scale => self.sigma = v,
            ParamRole::Shape => self.nu = v,
            ParamRole::Df => self.tau = v,
        }
    }
}

/// Time-indexed parameters on the natural scale, one vector per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ParameterVector {
    pub fn constant(n: usize, p: Params) -> Self {
        ParameterVector {
            mu: vec![p.mu; n],
            sigma: vec![p.sigma; n],
            nu: vec![p.nu; n],
            tau: vec![p.tau; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn at(&self, t: usize) -> Params {
        Params {
            mu: self.mu[t],
            sigma: self.sigma[t],
            nu: self.nu[t],
            tau: self.tau[t],
        }
    }

    pub fn role(&self, role: ParamRole) -> &[f64] {
        match role {
            ParamRole::Location => &self.mu,
            ParamRole::Scale => &self.sigma,
            ParamRole::Shape => &self.nu,
            ParamRole::Df => &self.tau,
        }
    }

    pub fn role_mut(&mut self, role: ParamRole) -> &mut Vec<f64> {
        match role {
            ParamRole::Location => &mut self.mu,
            ParamRole::Scale => &mut self.sigma,
            ParamRole::Shape => &mut self.nu,
            ParamRole::Df => &mut self.tau,
        }
    }

    fn check_len(&self) -> Result<()> {
        let n = self.mu.len();
        if self.sigma.len() != n || self.nu.len() != n || self.tau.len() != n {
            return Err(GawsError::InvalidArgument(
                "parameter vectors have unequal lengths".into(),
            ));
        }
        Ok(())
    }
}

/// Score and expected information for one parameter, on the parameter scale.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInfo {
    pub score: f64,
    pub info: f64,
}

/// A distribution family together with its per-role links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFamily {
    pub id: FamilyId,
    links: BTreeMap<ParamRole, Link>,
}

impl DistributionFamily {
    pub fn new(id: FamilyId) -> Self {
        let links = id.roles().iter().map(|&r| (r, id.default_link(r))).collect();
        DistributionFamily { id, links }
    }

    /// Overrides one link. Scale and degrees of freedom must stay on a log link,
    /// and positive-support locations cannot use the identity link.
    pub fn with_link(mut self, role: ParamRole, link: Link) -> Result<Self> {
        if !self.id.roles().contains(&role) {
            return Err(GawsError::InvalidArgument(format!(
                "{} has no {} parameter",
                self.id,
                role.name()
            )));
        }
        let must_be_log = matches!(role, ParamRole::Scale | ParamRole::Df)
            || (role == ParamRole::Location && self.id.positive_support());
        if must_be_log && link != Link::Log {
            return Err(GawsError::InvalidArgument(format!(
                "{} {} requires the log link",
                self.id,
                role.name()
            )));
        }
        self.links.insert(role, link);
        Ok(self)
    }

    pub fn roles(&self) -> &'static [ParamRole] {
        self.id.roles()
    }

    pub fn link(&self, role: ParamRole) -> Link {
        self.links
            .get(&role)
            .copied()
            .unwrap_or_else(|| self.id.default_link(role))
    }

    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    pub fn check_support(&self, y: f64) -> Result<()> {
        let ok = y.is_finite() && (!self.id.positive_support() || y > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GawsError::Domain(format!(
                "y = {y} is outside the support of {}",
                self.id
            )))
        }
    }

    pub fn check_params(&self, p: &Params) -> Result<()> {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(GawsError::Domain(format!("scale must be > 0, got {}", p.sigma)));
        }
        if !p.mu.is_finite() || (self.id.positive_support() && p.mu <= 0.0) {
            return Err(GawsError::Domain(format!(
                "location {} invalid for {}",
                p.mu, self.id
            )));
        }
        if self.id == FamilyId::Bccg && !p.nu.is_finite() {
            return Err(GawsError::Domain("shape must be finite".into()));
        }
        if self.id == FamilyId::LogT && !(p.tau > 0.0 && p.tau.is_finite()) {
            return Err(GawsError::Domain(format!("df must be > 0, got {}", p.tau)));
        }
        Ok(())
    }

    pub fn log_density(&self, y: f64, p: &Params) -> Result<f64> {
        self.check_support(y)?;
        self.check_params(p)?;
        Ok(self.log_density_unchecked(y, p))
    }

    /// Log-density without argument validation; callers guarantee support.
    pub fn log_density_unchecked(&self, y: f64, p: &Params) -> f64 {
        match self.id {
            FamilyId::Normal => {
                let z = (y - p.mu) / p.sigma;
                std_normal_ln_pdf(z) - p.sigma.ln()
            }
            FamilyId::LogNormal => {
                let ly = y.ln();
                let z = (ly - p.mu.ln()) / p.sigma;
                std_normal_ln_pdf(z) - p.sigma.ln() - ly
            }
            FamilyId::Gamma => {
                let k = 1.0 / (p.sigma * p.sigma);
                let r = y / p.mu;
                k * (k * r).ln() - k * r - y.ln() - ln_gamma(k)
            }
            FamilyId::Bccg => {
                let z = bccg_z(y, p.mu, p.sigma, p.nu);
                -LN_SQRT_2PI - p.sigma.ln() + (p.nu - 1.0) * y.ln() - p.nu * p.mu.ln()
                    - 0.5 * z * z
            }
            FamilyId::LogT => {
                let ly = y.ln();
                let x = (ly - p.mu.ln()) / p.sigma;
                student_t_ln_pdf(x, p.tau) - p.sigma.ln() - ly
            }
        }
    }

    /// Score ∂ℓ/∂θ and expected information for `role`, on the parameter scale.
    pub fn score_info(&self, role: ParamRole, y: f64, p: &Params) -> ScoreInfo {
        match (self.id, role) {
            (FamilyId::Normal, ParamRole::Location) => {
                let s2 = p.sigma * p.sigma;
                ScoreInfo {
                    score: (y - p.mu) / s2,
                    info: 1.0 / s2,
                }
            }
            (FamilyId::Normal, ParamRole::Scale) => {
                let z = (y - p.mu) / p.sigma;
                ScoreInfo {
                    score: (z * z - 1.0) / p.sigma,
                    info: 2.0 / (p.sigma * p.sigma),
                }
            }
            (FamilyId::LogNormal, ParamRole::Location) => {
                let s2 = p.sigma * p.sigma;
                let e = y.ln() - p.mu.ln();
                ScoreInfo {
                    score: e / (s2 * p.mu),
                    info: 1.0 / (s2 * p.mu * p.mu),
                }
            }
            (FamilyId::LogNormal, ParamRole::Scale) => {
                let z = (y.ln() - p.mu.ln()) / p.sigma;
                ScoreInfo {
                    score: (z * z - 1.0) / p.sigma,
                    info: 2.0 / (p.sigma * p.sigma),
                }
            }
            (FamilyId::Gamma, ParamRole::Location) => {
                let k = 1.0 / (p.sigma * p.sigma);
                ScoreInfo {
                    score: k * (y - p.mu) / (p.mu * p.mu),
                    info: k / (p.mu * p.mu),
                }
            }
            (FamilyId::Gamma, ParamRole::Scale) => {
                let k = 1.0 / (p.sigma * p.sigma);
                let r = y / p.mu;
                let dl_dk = (k * r).ln() + 1.0 - r - digamma(k);
                let dk_dsigma = -2.0 * k / p.sigma;
                let info_k = trigamma(k) - 1.0 / k;
                ScoreInfo {
                    score: dl_dk * dk_dsigma,
                    info: info_k * dk_dsigma * dk_dsigma,
                }
            }
            (FamilyId::Bccg, ParamRole::Location) => {
                let z = bccg_z(y, p.mu, p.sigma, p.nu);
                ScoreInfo {
                    score: (z / p.sigma + p.nu * (z * z - 1.0)) / p.mu,
                    info: (1.0 + 2.0 * p.nu * p.nu * p.sigma * p.sigma)
                        / (p.mu * p.mu * p.sigma * p.sigma),
                }
            }
            (FamilyId::Bccg, ParamRole::Scale) => {
                let z = bccg_z(y, p.mu, p.sigma, p.nu);
                ScoreInfo {
                    score: (z * z - 1.0) / p.sigma,
                    info: 2.0 / (p.sigma * p.sigma),
                }
            }
            (FamilyId::Bccg, ParamRole::Shape) => ScoreInfo {
                score: bccg_dldnu(y, p.mu, p.sigma, p.nu),
                info: 1.75 * p.sigma * p.sigma,
            },
            (FamilyId::LogT, ParamRole::Location) => {
                let e = y.ln() - p.mu.ln();
                let (s2, t) = (p.sigma * p.sigma, p.tau);
                ScoreInfo {
                    score: (t + 1.0) * e / (t * s2 + e * e) / p.mu,
                    info: (t + 1.0) / ((t + 3.0) * s2 * p.mu * p.mu),
                }
            }
            (FamilyId::LogT, ParamRole::Scale) => {
                let e = y.ln() - p.mu.ln();
                let (s2, t) = (p.sigma * p.sigma, p.tau);
                ScoreInfo {
                    score: -1.0 / p.sigma + (t + 1.0) * e * e / (p.sigma * (t * s2 + e * e)),
                    info: 2.0 * t / ((t + 3.0) * s2),
                }
            }
            (FamilyId::LogT, ParamRole::Df) => {
                let e = y.ln() - p.mu.ln();
                let (s2, t) = (p.sigma * p.sigma, p.tau);
                let q = e * e / (t * s2);
                let score = 0.5
                    * (digamma_half_diff_minus_inv(t) - q.ln_1p()
                        + q / (1.0 + q)
                        + q / (t * (1.0 + q)));
                let info = student_t_df_info(t);
                ScoreInfo {
                    score,
                    info: info.max(0.0),
                }
            }
            _ => ScoreInfo {
                score: 0.0,
                info: 0.0,
            },
        }
    }

    /// Score and weight for `role` on the linear-predictor scale under the family's link.
    pub fn working_score(&self, role: ParamRole, y: f64, p: &Params) -> (f64, f64) {
        let si = self.score_info(role, y, p);
        let d = self.link(role).dparam_deta(p.get(role));
        (si.score * d, (si.info * d * d).max(MIN_WEIGHT))
    }

    /// Lower and upper tail probabilities (F(y), 1 − F(y)).
    fn tails(&self, y: f64, p: &Params) -> (f64, f64) {
        match self.id {
            FamilyId::Normal => {
                let z = (y - p.mu) / p.sigma;
                (std_normal_cdf(z), std_normal_sf(z))
            }
            FamilyId::LogNormal => {
                let z = (y.ln() - p.mu.ln()) / p.sigma;
                (std_normal_cdf(z), std_normal_sf(z))
            }
            FamilyId::Gamma => {
                let k = 1.0 / (p.sigma * p.sigma);
                let g = GammaCdf::new(k, k / p.mu).expect("validated gamma parameters");
                (g.cdf(y), g.sf(y))
            }
            FamilyId::Bccg => {
                let z = bccg_z(y, p.mu, p.sigma, p.nu);
                if p.nu.abs() < BCCG_NU_ZERO {
                    return (std_normal_cdf(z), std_normal_sf(z));
                }
                let b = 1.0 / (p.sigma * p.nu.abs());
                let mass = std_normal_cdf(b);
                if p.nu > 0.0 {
                    // z ranges over (-b, ∞)
                    let upper = std_normal_sf(z) / mass;
                    ((std_normal_cdf(z) - std_normal_sf(b)) / mass, upper)
                } else {
                    // z ranges over (-∞, b)
                    let lower = std_normal_cdf(z) / mass;
                    (lower, (std_normal_cdf(b) - std_normal_cdf(z)) / mass)
                }
            }
            FamilyId::LogT => {
                let x = (y.ln() - p.mu.ln()) / p.sigma;
                let t = StudentsT::new(0.0, 1.0, p.tau).expect("validated t parameters");
                (t.cdf(x), t.sf(x))
            }
        }
    }

    /// CDF of the (normalized) distribution.
    pub fn cdf(&self, y: f64, p: &Params) -> Result<f64> {
        self.check_params(p)?;
        if self.id.positive_support() && y <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.tails(y, p).0)
    }

    /// Total mass of the density as written on its support.
    pub fn density_mass(&self, p: &Params) -> f64 {
        match self.id {
            FamilyId::Bccg if p.nu.abs() >= BCCG_NU_ZERO => {
                std_normal_cdf(1.0 / (p.sigma * p.nu.abs()))
            }
            _ => 1.0,
        }
    }

    /// Φ⁻¹(F(y)), computed from whichever tail is more precise.
    pub fn quantile_residual(&self, y: f64, p: &Params) -> Result<f64> {
        self.check_support(y)?;
        self.check_params(p)?;
        match self.id {
            FamilyId::Normal => return Ok((y - p.mu) / p.sigma),
            FamilyId::LogNormal => return Ok((y.ln() - p.mu.ln()) / p.sigma),
            _ => {}
        }
        let (lo, hi) = self.tails(y, p);
        Ok(probit_from_tails(lo, hi))
    }

    /// Inverse CDF for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64, p: &Params) -> Result<f64> {
        self.check_params(p)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(GawsError::Domain(format!("probability {u} not in (0, 1)")));
        }
        Ok(match self.id {
            FamilyId::Normal => p.mu + p.sigma * std_normal_quantile(u),
            FamilyId::LogNormal => p.mu * (p.sigma * std_normal_quantile(u)).exp(),
            FamilyId::Gamma => {
                let k = 1.0 / (p.sigma * p.sigma);
                GammaCdf::new(k, k / p.mu)
                    .expect("validated gamma parameters")
                    .inverse_cdf(u)
            }
            FamilyId::Bccg => bccg_from_z(bccg_truncated_z(u, p.sigma, p.nu), p),
            FamilyId::LogT => {
                let t = StudentsT::new(0.0, 1.0, p.tau).expect("validated t parameters");
                p.mu * (p.sigma * t.inverse_cdf(u)).exp()
            }
        })
    }

    /// Draws one observation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, p: &Params) -> f64 {
        match self.id {
            FamilyId::Normal => {
                let z: f64 = StandardNormal.sample(rng);
                p.mu + p.sigma * z
            }
            FamilyId::LogNormal => {
                let z: f64 = StandardNormal.sample(rng);
                p.mu * (p.sigma * z).exp()
            }
            FamilyId::Gamma => {
                let k = 1.0 / (p.sigma * p.sigma);
                GammaSampler::new(k, p.mu / k)
                    .expect("validated gamma parameters")
                    .sample(rng)
            }
            FamilyId::Bccg => {
                let b = 1.0 / (p.sigma * p.nu.abs());
                let z = if p.nu.abs() < BCCG_NU_ZERO || b > 8.0 {
                    // truncation point is beyond any attainable draw; rejection never loops long
                    loop {
                        let z: f64 = StandardNormal.sample(rng);
                        if p.nu.abs() < BCCG_NU_ZERO || 1.0 + p.nu * p.sigma * z > 0.0 {
                            break z;
                        }
                    }
                } else {
                    let u: f64 = rng.random_range(f64::EPSILON..1.0);
                    bccg_truncated_z(u, p.sigma, p.nu)
                };
                bccg_from_z(z, p)
            }
            FamilyId::LogT => {
                let t: f64 = StudentT::new(p.tau)
                    .expect("validated t parameters")
                    .sample(rng);
                p.mu * (p.sigma * t).exp()
            }
        }
    }
}

/// Log-density of `family` at `y` (validated).
pub fn log_density(family: &DistributionFamily, y: f64, params: &Params) -> Result<f64> {
    family.log_density(y, params)
}

/// Predictor η to parameter θ under the family's link for `role`.
pub fn apply_link(family: &DistributionFamily, role: ParamRole, eta: f64) -> f64 {
    family.link(role).to_param(eta)
}

/// Parameter θ to predictor η under the family's link for `role`.
pub fn invert_link(family: &DistributionFamily, role: ParamRole, theta: f64) -> Result<f64> {
    family.link(role).to_predictor(theta)
}

/// Deterministic quantile residuals Φ⁻¹(F(y_t)) for every non-missing `y_t`,
/// returned with their time indices.
pub fn quantile_residuals(
    family: &DistributionFamily,
    y: &[Option<f64>],
    params: &ParameterVector,
) -> Result<Vec<(usize, f64)>> {
    params.check_len()?;
    if params.len() != y.len() {
        return Err(GawsError::InvalidArgument(format!(
            "series length {} does not match parameter length {}",
            y.len(),
            params.len()
        )));
    }
    y.iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (t, v)))
        .map(|(t, v)| Ok((t, family.quantile_residual(v, &params.at(t))?)))
        .collect()
}

/// The BCCG z-transform, with the ν = 0 branch `ln(y/μ)/σ`.
pub fn bccg_z(y: f64, mu: f64, sigma: f64, nu: f64) -> f64 {
    let r = (y / mu).ln();
    if nu.abs() < BCCG_NU_ZERO {
        r / sigma
    } else {
        (nu * r).exp_m1() / (nu * sigma)
    }
}

/// ∂ log f / ∂ν for the BCCG density.
fn bccg_dldnu(y: f64, mu: f64, sigma: f64, nu: f64) -> f64 {
    let r = (y / mu).ln();
    let z = bccg_z(y, mu, sigma, nu);
    let dz_dnu = if nu.abs() < 1e-6 {
        // series expansion of d/dν [(e^{νr} − 1)/(νσ)] about ν = 0
        r * r / (2.0 * sigma) + nu * r * r * r / (3.0 * sigma)
    } else {
        (r * (nu * r).exp() / sigma - z) / nu
    };
    r - z * dz_dnu
}

/// z drawn by inverse transform from the normal restricted to the range
/// where `1 + νσz > 0`.
fn bccg_truncated_z(u: f64, sigma: f64, nu: f64) -> f64 {
    if nu.abs() < BCCG_NU_ZERO {
        return std_normal_quantile(u);
    }
    let b = 1.0 / (sigma * nu.abs());
    if nu > 0.0 {
        // (-b, ∞): sample the upper tail mass from the survival side
        let lo = std_normal_sf(b);
        let p = lo + u * (1.0 - lo);
        std_normal_quantile(p)
    } else {
        let hi = std_normal_cdf(b);
        std_normal_quantile(u * hi)
    }
}

fn bccg_from_z(z: f64, p: &Params) -> f64 {
    if p.nu.abs() < BCCG_NU_ZERO {
        p.mu * (p.sigma * z).exp()
    } else {
        let base = (1.0 + p.nu * p.sigma * z).max(f64::MIN_POSITIVE);
        p.mu * (base.ln() / p.nu).exp()
    }
}

/// Above this many degrees of freedom the t-distribution helpers switch to
/// asymptotic series, avoiding cancellation between gamma-function terms.
const LARGE_DF: f64 = 100.0;

/// `lnΓ((τ+1)/2) − lnΓ(τ/2)`.
fn ln_gamma_half_ratio(t: f64) -> f64 {
    if t <= LARGE_DF {
        return ln_gamma((t + 1.0) / 2.0) - ln_gamma(t / 2.0);
    }
    let x = 1.0 / t;
    let x2 = x * x;
    0.5 * (t / 2.0).ln() + x * (-0.25 + x2 * (1.0 / 24.0 + x2 * (-0.05 + x2 * 17.0 / 112.0)))
}

/// `ψ((τ+1)/2) − ψ(τ/2) − 1/τ`.
fn digamma_half_diff_minus_inv(t: f64) -> f64 {
    if t <= LARGE_DF {
        return digamma((t + 1.0) / 2.0) - digamma(t / 2.0) - 1.0 / t;
    }
    let x = 1.0 / t;
    let x2 = x * x;
    x2 * (0.5 + x2 * (-0.25 + x2 * (0.5 - x2 * 17.0 / 8.0)))
}

/// Expected information for τ in the Student-t location-scale family.
fn student_t_df_info(t: f64) -> f64 {
    if t <= LARGE_DF {
        return 0.25 * (trigamma(t / 2.0) - trigamma((t + 1.0) / 2.0))
            - (t + 5.0) / (2.0 * t * (t + 1.0) * (t + 3.0));
    }
    let x = 1.0 / t;
    x.powi(4) * (3.5 + x * (-13.0 + x * (39.5 + x * (-119.0 + x * 363.5))))
}

fn student_t_ln_pdf(x: f64, tau: f64) -> f64 {
    ln_gamma_half_ratio(tau)
        - 0.5 * (tau * std::f64::consts::PI).ln()
        - (tau + 1.0) / 2.0 * (x * x / tau).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fam(id: FamilyId) -> DistributionFamily {
        DistributionFamily::new(id)
    }

    #[test]
    fn student_t_helpers_are_continuous_across_series_switch() {
        for &t in &[LARGE_DF * 0.999_999, LARGE_DF] {
            let exact = ln_gamma((t + 1.0) / 2.0) - ln_gamma(t / 2.0);
            let x = 1.0 / t;
            let series = 0.5 * (t / 2.0).ln() + x * (-0.25 + x * x / 24.0);
            assert!((exact - series).abs() < 1e-9);
        }
        let t = LARGE_DF + 1e-9;
        let exact_info = 0.25 * (trigamma(t / 2.0) - trigamma((t + 1.0) / 2.0))
            - (t + 5.0) / (2.0 * t * (t + 1.0) * (t + 3.0));
        assert_relative_eq!(student_t_df_info(t), exact_info, max_relative = 1e-4);
        let exact_psi = digamma((t + 1.0) / 2.0) - digamma(t / 2.0) - 1.0 / t;
        assert_relative_eq!(digamma_half_diff_minus_inv(t), exact_psi, max_relative = 1e-6);
        // approaches the normal log-density
        let ln_t = student_t_ln_pdf(0.7, 1e15);
        assert!((ln_t - std_normal_ln_pdf(0.7)).abs() < 1e-12);
    }

    #[test]
    fn bccg_at_location_is_standard_normal_peak() {
        let v = fam(FamilyId::Bccg)
            .log_density(1.0, &Params::new(1.0, 1.0).with_nu(0.5))
            .unwrap();
        assert_relative_eq!(v, -0.918_938_533_204_672_8, epsilon = 1e-12);
    }

    #[test]
    fn bccg_nu_zero_is_lognormal() {
        let b = fam(FamilyId::Bccg)
            .log_density(2.0, &Params::new(1.0, 0.5))
            .unwrap();
        let ln = fam(FamilyId::LogNormal)
            .log_density(2.0, &Params::new(1.0, 0.5))
            .unwrap();
        assert_relative_eq!(b, ln, epsilon = 1e-14);
    }

    #[test]
    fn bccg_negative_nu_matches_high_precision_value() {
        // mpmath at 50 digits: -log(sqrt(2π)·0.3) + (−1.4)·log 1.5 − z²/2,
        // z = (1.5^−0.4 − 1)/(−0.4·0.3)
        let v = fam(FamilyId::Bccg)
            .log_density(1.5, &Params::new(1.0, 0.3).with_nu(-0.4))
            .unwrap();
        assert_relative_eq!(v, BCCG_ORACLE_1_5, epsilon = 1e-13);
    }

    // Frozen from an independent 50-digit evaluation; see tests/oracles.py.
    const BCCG_ORACLE_1_5: f64 = -1.060_921_740_093_985_1;

    #[test]
    fn domain_errors() {
        let g = fam(FamilyId::Gamma);
        assert!(g.log_density(-1.0, &Params::new(1.0, 0.2)).is_err());
        assert!(g.log_density(1.0, &Params::new(1.0, 0.0)).is_err());
        assert!(fam(FamilyId::Normal)
            .log_density(-3.0, &Params::new(0.0, -1.0))
            .is_err());
        assert!(fam(FamilyId::Normal)
            .log_density(-3.0, &Params::new(0.0, 1.0))
            .is_ok());
    }

    #[test]
    fn links() {
        let b = fam(FamilyId::Bccg);
        assert_eq!(apply_link(&b, ParamRole::Location, 0.0), 1.0);
        assert_eq!(apply_link(&b, ParamRole::Shape, 3.7), 3.7);
        assert_eq!(
            apply_link(&fam(FamilyId::Normal), ParamRole::Location, 3.7),
            3.7
        );
        let eta = invert_link(&b, ParamRole::Scale, 500.0).unwrap();
        assert_relative_eq!(
            apply_link(&b, ParamRole::Scale, eta),
            500.0,
            max_relative = 1e-12
        );
        assert!(invert_link(&b, ParamRole::Scale, 0.0).is_err());
        assert!(invert_link(&b, ParamRole::Scale, -2.0).is_err());
    }

    #[test]
    fn link_overrides_are_validated() {
        assert!(fam(FamilyId::Normal)
            .with_link(ParamRole::Location, Link::Log)
            .is_ok());
        assert!(fam(FamilyId::Normal)
            .with_link(ParamRole::Scale, Link::Identity)
            .is_err());
        assert!(fam(FamilyId::Gamma)
            .with_link(ParamRole::Shape, Link::Identity)
            .is_err());
    }

    #[test]
    fn residuals_at_location_are_zero() {
        let f = fam(FamilyId::Normal);
        let mu = vec![1.0, -2.0, 3.5, 10.0];
        let y: Vec<Option<f64>> = mu.iter().map(|&m| Some(m)).collect();
        let mut pv = ParameterVector::constant(4, Params::new(0.0, 2.0));
        pv.mu = mu;
        let r = quantile_residuals(&f, &y, &pv).unwrap();
        assert!(r.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn residuals_skip_missing() {
        let f = fam(FamilyId::Gamma);
        let y: Vec<Option<f64>> = (0..10)
            .map(|t| if t == 3 || t == 7 { None } else { Some(1.0 + t as f64) })
            .collect();
        let pv = ParameterVector::constant(10, Params::new(4.0, 0.5));
        let r = quantile_residuals(&f, &y, &pv).unwrap();
        let idx: Vec<usize> = r.iter().map(|&(t, _)| t).collect();
        assert_eq!(idx, vec![0, 1, 2, 4, 5, 6, 8, 9]);
    }

    #[test]
    fn score_matches_finite_difference() {
        let cases = [
            (FamilyId::Normal, 3.0, Params::new(2.0, 1.5)),
            (FamilyId::LogNormal, 3.0, Params::new(2.0, 0.4)),
            (FamilyId::Gamma, 3.0, Params::new(2.0, 0.4)),
            (FamilyId::Bccg, 3.0, Params::new(2.0, 0.3).with_nu(-0.4)),
            (FamilyId::Bccg, 1.3, Params::new(2.0, 0.3).with_nu(0.0)),
            (FamilyId::Bccg, 1.3, Params::new(2.0, 0.3).with_nu(3e-7)),
            (FamilyId::LogT, 3.0, Params::new(2.0, 0.3).with_tau(6.0)),
        ];
        for (id, y, p) in cases {
            let f = fam(id);
            for &role in id.roles() {
                let h = 1e-6 * p.get(role).abs().max(1e-2);
                let mut up = p;
                up.set(role, p.get(role) + h);
                let mut dn = p;
                dn.set(role, p.get(role) - h);
                let num = (f.log_density_unchecked(y, &up) - f.log_density_unchecked(y, &dn))
                    / (2.0 * h);
                let ana = f.score_info(role, y, &p).score;
                assert!(
                    (num - ana).abs() < 1e-5 * (1.0 + ana.abs()),
                    "{id} {role:?}: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn cdf_quantile_round_trip() {
        let cases = [
            (FamilyId::Normal, Params::new(2.0, 1.5)),
            (FamilyId::LogNormal, Params::new(2.0, 0.4)),
            (FamilyId::Gamma, Params::new(2.0, 0.4)),
            (FamilyId::Bccg, Params::new(2.0, 0.3).with_nu(-0.4)),
            (FamilyId::Bccg, Params::new(2.0, 0.3).with_nu(0.8)),
            (FamilyId::LogT, Params::new(2.0, 0.3).with_tau(6.0)),
        ];
        for (id, p) in cases {
            let f = fam(id);
            for &u in &[0.01, 0.2, 0.5, 0.77, 0.99] {
                let y = f.quantile(u, &p).unwrap();
                assert_relative_eq!(f.cdf(y, &p).unwrap(), u, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn samplers_are_seeded() {
        let f = fam(FamilyId::Bccg);
        let p = Params::new(500.0, 0.1).with_nu(-0.3);
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| f.sample(&mut r, &p)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| f.sample(&mut r, &p)).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v > 0.0));
    }
}
