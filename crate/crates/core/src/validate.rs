//! Instance validation.

use std::collections::BTreeSet;
use std::fmt;

use crate::measures::check_alignment;
use crate::model::{Instance, ValueFunction};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Warning {
    /// Alignment fails for stakes at the smallest initial stake.
    AlignmentViolated { low: Scalar, high: Scalar, critical_stake: Scalar },
    /// Alignment holds with equality at the smallest initial stake.
    AlignmentBoundary { low: Scalar, high: Scalar },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::AlignmentViolated { low, high, critical_stake } => write!(
                f,
                "value and budget are not aligned between v = {low} and v = {high} for stakes up to {critical_stake}"
            ),
            Warning::AlignmentBoundary { low, high } => {
                write!(f, "value and budget are exactly aligned between v = {low} and v = {high} at the smallest stake")
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_instance(instance: &Instance) -> ValidationReport {
    let mut report = ValidationReport::default();
    let errors = &mut report.errors;
    let n = instance.n();
    if n == 0 {
        errors.push("instance has no players".into());
        return report;
    }

    let mut seen = BTreeSet::new();
    for p in &instance.players {
        if !seen.insert(p.id) {
            errors.push(format!("duplicate player id {}", p.id));
        }
        if p.type_ < Scalar::one() {
            errors.push(format!("player {} has type {} < 1", p.id, p.type_));
        }
        if p.cost.is_negative() {
            errors.push(format!("player {} has negative cost {}", p.id, p.cost));
        }
        match instance.initial_stakes.get(p.id) {
            None => errors.push(format!("player {} has no initial stake", p.id)),
            Some(s) if !s.is_positive() => errors.push(format!("player {} has non-positive stake {}", p.id, s)),
            Some(_) => {}
        }
    }
    for id in instance.initial_stakes.ids() {
        if !seen.contains(&id) {
            errors.push(format!("stake given for unknown player {id}"));
        }
    }
    if !instance.budget.is_positive() {
        errors.push(format!("budget must be positive, got {}", instance.budget));
    }
    let tau = &instance.tau_threshold;
    if !tau.is_positive() || *tau >= Scalar::one() {
        errors.push(format!("tau threshold must lie in (0, 1), got {tau}"));
    }
    match &instance.value_function {
        ValueFunction::Identity => {}
        ValueFunction::Affine { a, .. } => {
            if a.is_negative() {
                errors.push(format!("affine value slope must be non-negative, got {a}"));
            }
        }
        ValueFunction::Table { values } => {
            let mut prev: Option<&Scalar> = None;
            for d in 1..=n as u32 {
                match values.get(&d) {
                    None => errors.push(format!("value table misses decentralization {d}")),
                    Some(v) => {
                        if let Some(p) = prev {
                            if v < p {
                                errors.push(format!("value table decreases at decentralization {d}"));
                            }
                        }
                        prev = Some(v);
                    }
                }
            }
        }
    }

    if report.errors.is_empty() {
        let bound = instance.initial_stakes.values().min().cloned().unwrap_or_else(Scalar::one);
        if let Ok(alignment) = check_alignment(instance, &bound) {
            report.warnings.extend(alignment.violations.into_iter().map(|f| Warning::AlignmentViolated {
                low: f.low_value,
                high: f.high_value,
                critical_stake: f.critical_stake,
            }));
            report
                .warnings
                .extend(alignment.boundary.into_iter().map(|f| Warning::AlignmentBoundary { low: f.low_value, high: f.high_value }));
        }
    }
    report
}
