use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working day or day off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Working,
    Dayoff,
}

/// Which calendar effects the factor evolution carries.
///
/// `None` uses the day-off dummy only; `I` adds the pre-day-off dummy;
/// `II` adds both the pre-day-off and pre-working dummies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    #[default]
    None,
    I,
    II,
}

/// Day types together with the transition dummies driving the factor
/// evolution.
///
/// Each dummy takes value 1 on the day the chain enters its indicator set,
/// -1 on the day it leaves it, and 0 otherwise; the first day is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    pub day_types: Vec<DayType>,
    pub extension: Extension,
    /// Day-off dummy: +1 entering a day off, -1 returning to work.
    pub d: Vec<f64>,
    /// Pre-day-off dummy (working day whose successor is a day off).
    pub d_prime: Vec<f64>,
    /// Pre-working dummy (day off whose successor is a working day).
    pub d_dprime: Vec<f64>,
}

fn transition_dummy(indicator: &[bool]) -> Vec<f64> {
    let t = indicator.len();
    let mut d = vec![0.0; t];
    for i in 1..t {
        d[i] = match (indicator[i], indicator[i - 1]) {
            (true, false) => 1.0,
            (false, true) => -1.0,
            _ => 0.0,
        };
    }
    d
}

/// Builds the calendar dummies for the requested extension level.
pub fn build_calendar(day_types: &[DayType], extension: Extension) -> Result<Calendar> {
    let t = day_types.len();
    if t < 2 {
        return Err(Error::validation("calendar needs at least 2 days"));
    }
    let off: Vec<bool> = day_types.iter().map(|d| *d == DayType::Dayoff).collect();
    let d = transition_dummy(&off);

    // Pre-day-off: working day followed by a day off. The last day has no
    // successor and is never in the set.
    let pre_off: Vec<bool> =
        (0..t).map(|i| !off[i] && i + 1 < t && off[i + 1]).collect();
    // Pre-working: day off followed by a working day.
    let pre_work: Vec<bool> =
        (0..t).map(|i| off[i] && i + 1 < t && !off[i + 1]).collect();

    let d_prime = match extension {
        Extension::None => vec![0.0; t],
        Extension::I | Extension::II => transition_dummy(&pre_off),
    };
    let d_dprime = match extension {
        Extension::None | Extension::I => vec![0.0; t],
        Extension::II => transition_dummy(&pre_work),
    };

    Ok(Calendar { day_types: day_types.to_vec(), extension, d, d_prime, d_dprime })
}

impl Calendar {
    pub fn len(&self) -> usize {
        self.day_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day_types.is_empty()
    }

    /// All-working calendar of length t (every dummy identically zero).
    pub fn all_working(t: usize, extension: Extension) -> Result<Calendar> {
        build_calendar(&vec![DayType::Working; t], extension)
    }
}
