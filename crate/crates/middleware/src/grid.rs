//! Case configurations and their expansion into scenario grids.

use std::collections::BTreeMap;

use fewsim_core::ScenarioSpec;
use serde::{Deserialize, Serialize};

use crate::error::{MiddlewareError, Result};

const DIVISIBILITY_TOL: f64 = 1e-9;

/// Sweep of one adjustable variable, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableAdjustment {
    pub variable: String,
    pub lower_bound_pct: f64,
    pub upper_bound_pct: f64,
    pub step_pct: f64,
}

impl VariableAdjustment {
    pub fn new(variable: &str, lower: f64, upper: f64, step: f64) -> Self {
        VariableAdjustment {
            variable: variable.to_string(),
            lower_bound_pct: lower,
            upper_bound_pct: upper,
            step_pct: step,
        }
    }

    /// Parses `key:lower:upper:step`, or `key:value` for a constant override.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                MiddlewareError::InvalidConfig(format!("`{s}` in `{text}` is not a number"))
            })
        };
        match parts.as_slice() {
            [key, value] => {
                let v = num(value)?;
                Ok(VariableAdjustment::new(key.trim(), v, v, 1.0))
            }
            [key, lower, upper, step] => Ok(VariableAdjustment::new(
                key.trim(),
                num(lower)?,
                num(upper)?,
                num(step)?,
            )),
            _ => Err(MiddlewareError::InvalidConfig(format!(
                "expected key:lower:upper:step or key:value, got `{text}`"
            ))),
        }
    }

    fn is_constant(&self) -> bool {
        self.lower_bound_pct == self.upper_bound_pct
    }

    fn validate(&self) -> Result<()> {
        let key = &self.variable;
        let (lo, hi, step) = (self.lower_bound_pct, self.upper_bound_pct, self.step_pct);
        let invalid = |msg: String| Err(MiddlewareError::InvalidConfig(msg));
        if key.is_empty() {
            return invalid("adjustment with an empty variable key".into());
        }
        if ![lo, hi, step].iter().all(|v| v.is_finite()) {
            return invalid(format!("`{key}`: bounds and step must be finite"));
        }
        if !(step > 0.0) {
            return invalid(format!("`{key}`: step must be positive"));
        }
        if self.is_constant() {
            return Ok(());
        }
        if !(lo <= 0.0 && 0.0 <= hi) {
            return invalid(format!(
                "`{key}`: bounds [{lo}, {hi}] must bracket 0 unless lower equals upper"
            ));
        }
        let n = (hi - lo) / step;
        if (n - n.round()).abs() > DIVISIBILITY_TOL * n.abs().max(1.0) {
            return invalid(format!("`{key}`: step {step} does not divide [{lo}, {hi}]"));
        }
        Ok(())
    }

    /// Grid values in ascending order. Zero is always present for a range
    /// that brackets it.
    pub fn values(&self) -> Vec<f64> {
        if self.is_constant() {
            return vec![snap(self.lower_bound_pct)];
        }
        let n = ((self.upper_bound_pct - self.lower_bound_pct) / self.step_pct).round() as usize;
        let mut values: Vec<f64> = (0..=n)
            .map(|i| snap(self.lower_bound_pct + i as f64 * self.step_pct))
            .collect();
        if !values.contains(&0.0) {
            values.push(0.0);
            values.sort_by(f64::total_cmp);
        }
        values
    }
}

/// Rounds away floating-point residue from stepping (0.1 + 0.2 and friends).
fn snap(v: f64) -> f64 {
    let s = (v * 1e9).round() / 1e9;
    if s == 0.0 {
        0.0
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub case_name: String,
    pub climate_file: String,
    #[serde(default)]
    pub adjustments: Vec<VariableAdjustment>,
}

impl CaseConfig {
    pub fn validate(&self) -> Result<()> {
        validate_case_name(&self.case_name)?;
        if self.climate_file.trim().is_empty() {
            return Err(MiddlewareError::InvalidConfig("climate file is empty".into()));
        }
        for (i, a) in self.adjustments.iter().enumerate() {
            a.validate()?;
            if self.adjustments[..i].iter().any(|b| b.variable == a.variable) {
                return Err(MiddlewareError::InvalidConfig(format!(
                    "`{}` is adjusted twice",
                    a.variable
                )));
            }
        }
        Ok(())
    }

    /// Number of scenarios the grid expands to.
    pub fn grid_size(&self) -> usize {
        let product: usize = self.adjustments.iter().map(|a| a.values().len()).product();
        let has_base = self.adjustments.iter().all(|a| a.values().contains(&0.0));
        product + usize::from(!has_base)
    }
}

/// Case names double as directory names in the store.
pub fn validate_case_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(MiddlewareError::InvalidConfig(format!(
            "case name `{name}` must be 1-64 characters of [A-Za-z0-9_.-] and not start with '.'"
        )))
    }
}

/// One delta in a scenario name: unsigned two-digit percent, `-` prefix for
/// negatives, fractional parts written after a `p`.
fn name_part(v: f64) -> String {
    let sign = if v < 0.0 { "-" } else { "" };
    let a = v.abs();
    let whole = a.trunc();
    let frac = snap(a - whole);
    if frac == 0.0 {
        format!("{sign}{:02}", whole as u64)
    } else {
        let digits = format!("{frac:.9}");
        let digits = digits.trim_start_matches("0.").trim_end_matches('0');
        format!("{sign}{:02}p{digits}", whole as u64)
    }
}

/// `<climate>_<d1><d2>...`, or `<climate>_base` when every delta is zero.
pub fn scenario_name(climate: &str, deltas: &[f64]) -> String {
    if deltas.iter().all(|d| *d == 0.0) {
        return format!("{climate}_base");
    }
    let mut name = format!("{climate}_");
    for d in deltas {
        name.push_str(&name_part(*d));
    }
    name
}

/// Cartesian product of the adjustment values, first adjustment varying
/// slowest. The base scenario appears exactly once; when a constant override
/// keeps it out of the product it is prepended.
pub fn expand_scenario_grid(config: &CaseConfig) -> Result<Vec<ScenarioSpec>> {
    config.validate()?;
    let axes: Vec<Vec<f64>> = config.adjustments.iter().map(|a| a.values()).collect();
    let mut out = Vec::with_capacity(config.grid_size());
    let mut index = vec![0usize; axes.len()];
    loop {
        let point: Vec<f64> = index.iter().zip(&axes).map(|(i, a)| a[*i]).collect();
        let deltas: BTreeMap<String, f64> = config
            .adjustments
            .iter()
            .zip(&point)
            .filter(|(_, v)| **v != 0.0)
            .map(|(a, v)| (a.variable.clone(), *v))
            .collect();
        out.push(ScenarioSpec {
            scenario_name: scenario_name(&config.climate_file, &point),
            climate_file: config.climate_file.clone(),
            deltas,
        });
        // odometer increment, last axis fastest
        let mut k = axes.len();
        loop {
            if k == 0 {
                if !out.iter().any(|s| s.deltas.is_empty()) {
                    out.insert(0, ScenarioSpec::base(&config.climate_file));
                }
                let mut names: Vec<&str> = out.iter().map(|s| s.scenario_name.as_str()).collect();
                names.sort_unstable();
                if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                    return Err(MiddlewareError::InvalidConfig(format!(
                        "grid produces scenario name `{}` twice",
                        w[0]
                    )));
                }
                return Ok(out);
            }
            k -= 1;
            index[k] += 1;
            if index[k] < axes[k].len() {
                break;
            }
            index[k] = 0;
        }
    }
}
