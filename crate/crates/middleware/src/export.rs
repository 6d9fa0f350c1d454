//! CSV exports of a case's annual results and indices.

use std::io::Write;

use fewsim_core::indices::compute_indices;
use serde::Serialize;

use crate::error::Result;
use crate::job::ScenarioStatus;
use crate::query::aggregate_annual;
use crate::service::Middleware;

#[derive(Serialize)]
struct ResultRow<'a> {
    scenario: &'a str,
    branch: &'a str,
    year: i32,
    variable: &'a str,
    value: f64,
    unit: &'a str,
}

#[derive(Serialize)]
struct IndexRow<'a> {
    scenario: &'a str,
    year: i32,
    index: &'a str,
    value: Option<f64>,
    flagged: bool,
}

fn completed(mw: &Middleware, case: &str) -> Result<Vec<String>> {
    Ok(mw
        .status(case)?
        .scenarios
        .into_iter()
        .filter(|p| matches!(p.status, ScenarioStatus::Finished | ScenarioStatus::Reused))
        .map(|p| p.scenario)
        .collect())
}

/// `scenario,branch,year,variable,value,unit` for every annual value.
pub fn write_results_csv(mw: &Middleware, case: &str, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for scenario in completed(mw, case)? {
        let (_, r) = mw.result(Some(case), &scenario)?;
        for (branch, vars) in &r.branches {
            for v in vars {
                for (year, value) in aggregate_annual(r.start(), &v.values, v.kind)? {
                    w.serialize(ResultRow {
                        scenario: &scenario,
                        branch,
                        year,
                        variable: &v.name,
                        value,
                        unit: v.unit.as_str(),
                    })?;
                }
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `scenario,year,index,value,flagged`; undefined indices have an empty value.
pub fn write_indices_csv(mw: &Middleware, case: &str, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for scenario in completed(mw, case)? {
        let (_, r) = mw.result(Some(case), &scenario)?;
        for year in r.horizon.start_year..=r.horizon.end_year {
            let v = compute_indices(&r, year)?;
            for (index, value) in v.entries() {
                w.serialize(IndexRow {
                    scenario: &scenario,
                    year,
                    index,
                    value,
                    flagged: value.is_none(),
                })?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
