//! Named model families.

use crate::basis::{BasisTermSpec as T, Regressor};
use crate::distributions::{FamilyId, ParamRole};
use crate::error::{GawsError, Result};
use crate::gamlss::ModelFamilySpec;
use crate::simulation::ExperimentId;

/// Knots of the rough location trend used by the random-walk families.
pub const WALK_KNOTS: usize = 84;
/// Fixed smoothing parameter of the random-walk location trend.
pub const WALK_LAMBDA: f64 = 0.1;
/// Knots of the scale trend.
pub const SCALE_TREND_KNOTS: usize = 40;
/// Fixed smoothing parameter of the scale trend.
pub const SCALE_TREND_LAMBDA: f64 = 0.01;

fn seasonal_location() -> Vec<T> {
    vec![
        T::Intercept,
        T::linear_trend(20),
        T::cyclic(Regressor::DayOfWeek),
        T::cyclic(Regressor::HourOfDay),
    ]
}

fn walk_location(seasonal: bool) -> Vec<T> {
    let mut terms = vec![T::Intercept, T::linear_trend(WALK_KNOTS).with_lambda(WALK_LAMBDA)];
    if seasonal {
        terms.push(T::cyclic(Regressor::DayOfWeek));
        terms.push(T::cyclic(Regressor::HourOfDay));
    }
    terms
}

pub const PRESET_NAMES: [&str; 13] = [
    "constant-bccg",
    "seasonal-bccg",
    "seasonal-gamma",
    "seasonal-logt",
    "level-pulse",
    "ar",
    "step",
    "rw-drift",
    "scale-trend",
    "generic-pspline",
    "rw-normal",
    "rw-logt",
    "level-bccg",
];

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<ModelFamilySpec> {
    let loc = ParamRole::Location;
    let spec = match name {
        "constant-bccg" => ModelFamilySpec::new(name, FamilyId::Bccg),
        "level-bccg" => ModelFamilySpec::new(name, FamilyId::Bccg)
            .with_terms(loc, vec![T::Intercept, T::linear_trend(20)]),
        "seasonal-bccg" => ModelFamilySpec::new(name, FamilyId::Bccg).with_terms(loc, seasonal_location()),
        "seasonal-gamma" => ModelFamilySpec::new(name, FamilyId::Gamma).with_terms(loc, seasonal_location()),
        "seasonal-logt" => ModelFamilySpec::new(name, FamilyId::LogT).with_terms(loc, seasonal_location()),
        "level-pulse" => ModelFamilySpec::new(name, FamilyId::Bccg)
            .with_terms(loc, vec![T::Intercept, T::linear_trend(20), T::Pulse]),
        "ar" => ModelFamilySpec::new(name, FamilyId::Bccg)
            .with_terms(loc, vec![T::Intercept, T::linear_trend(20), T::Ar { ar_order: 2 }]),
        "step" => ModelFamilySpec::new(name, FamilyId::Bccg).with_terms(loc, vec![T::Intercept, T::Step]),
        "rw-drift" => ModelFamilySpec::new(name, FamilyId::Bccg).with_terms(loc, walk_location(true)),
        "scale-trend" => ModelFamilySpec::new(name, FamilyId::Bccg)
            .with_terms(loc, seasonal_location())
            .with_terms(
                ParamRole::Scale,
                vec![T::Intercept, T::linear_trend(SCALE_TREND_KNOTS).with_lambda(SCALE_TREND_LAMBDA)],
            ),
        "generic-pspline" => {
            let smooth = vec![T::Intercept, T::cubic_trend(20)];
            ModelFamilySpec::new(name, FamilyId::Bccg)
                .with_terms(loc, smooth.clone())
                .with_terms(ParamRole::Scale, smooth.clone())
                .with_terms(ParamRole::Shape, smooth)
        }
        "rw-normal" => ModelFamilySpec::new(name, FamilyId::Normal).with_terms(loc, walk_location(false)),
        "rw-logt" => ModelFamilySpec::new(name, FamilyId::LogT).with_terms(loc, walk_location(false)),
        _ => {
            return Err(GawsError::Config(format!(
                "unknown family preset '{name}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(spec.fill_intercepts())
}

/// Family names entertained for each experiment.
pub fn experiment_family_names(id: ExperimentId) -> &'static [&'static str] {
    match id {
        ExperimentId::E1 | ExperimentId::E2 | ExperimentId::E3 | ExperimentId::E5 => &[
            "seasonal-bccg",
            "seasonal-gamma",
            "seasonal-logt",
            "level-pulse",
            "ar",
            "step",
            "rw-drift",
            "scale-trend",
        ],
        ExperimentId::E4 => &["constant-bccg", "generic-pspline"],
        ExperimentId::E6 => &["rw-normal", "rw-logt"],
    }
}

pub fn experiment_families(id: ExperimentId) -> Vec<ModelFamilySpec> {
    experiment_family_names(id)
        .iter()
        .map(|n| preset(n).expect("built-in preset"))
        .collect()
}
