//! Read-side views over stored results: annual aggregation, branch series
//! with input/output compositions, cross-scenario comparison and indices.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::str::FromStr;

use fewsim_core::indices::{compute_indices, index_deltas, INDEX_NAMES};
use fewsim_core::scenario::{FlowSeries, Resource, VariableSeries};
use fewsim_core::{CoreError, ScenarioResult, SeriesKind, Unit, YearMonth};
use serde::{Deserialize, Serialize};

use crate::error::{MiddlewareError, Result};
use crate::service::Middleware;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[default]
    Annual,
    Monthly,
}

impl FromStr for Resolution {
    type Err = MiddlewareError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annual" => Ok(Resolution::Annual),
            "monthly" => Ok(Resolution::Monthly),
            other => Err(MiddlewareError::BadRequest(format!(
                "resolution must be `annual` or `monthly`, got `{other}`"
            ))),
        }
    }
}

pub fn parse_resource(s: &str) -> Result<Resource> {
    match s {
        "water" => Ok(Resource::Water),
        "electricity" => Ok(Resource::Electricity),
        "crop" => Ok(Resource::Crop),
        other => Err(MiddlewareError::BadRequest(format!(
            "resource must be one of water, electricity, crop; got `{other}`"
        ))),
    }
}

/// Resource a unit measures, if it is a resource quantity at all.
pub fn unit_resource(unit: Unit) -> Option<Resource> {
    match unit {
        Unit::M3PerMonth => Some(Resource::Water),
        Unit::GwhPerMonth => Some(Resource::Electricity),
        Unit::Tonne | Unit::Hectare => Some(Resource::Crop),
        _ => None,
    }
}

/// Collapses a monthly series to calendar years: flows are summed, every
/// other kind is averaged.
pub fn aggregate_annual(start: YearMonth, values: &[f64], kind: SeriesKind) -> Result<Vec<(i32, f64)>> {
    if start.month != 1 || values.len() % 12 != 0 {
        return Err(MiddlewareError::BadRequest(format!(
            "series starting {start} with {} months does not span whole years",
            values.len()
        )));
    }
    Ok(values
        .chunks(12)
        .enumerate()
        .map(|(i, m)| {
            let sum: f64 = m.iter().sum();
            let v = match kind {
                SeriesKind::Flow => sum,
                _ => sum / 12.0,
            };
            (start.year + i as i32, v)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesView {
    pub name: String,
    pub unit: Unit,
    pub kind: SeriesKind,
    pub points: Vec<TimePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionEntry {
    /// The branch at the other end of the flow.
    pub branch: String,
    pub value: f64,
    pub fraction: f64,
}

/// Flows of one resource crossing a branch boundary in one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub resource: Resource,
    pub unit: Unit,
    pub total: f64,
    pub entries: Vec<CompositionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchView {
    pub case: String,
    pub scenario: String,
    pub branch: String,
    pub resolution: Resolution,
    pub from: i32,
    pub to: i32,
    pub children: Vec<String>,
    pub variables: Vec<SeriesView>,
    /// Per-source breakdown of what flows into the branch.
    pub inputs: Vec<Composition>,
    /// Per-destination breakdown of what leaves the branch.
    pub outputs: Vec<Composition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionView {
    pub case: String,
    pub scenario: String,
    pub branch: String,
    pub year: i32,
    pub inputs: Vec<Composition>,
    pub outputs: Vec<Composition>,
}

fn in_subtree(path: &str, branch: &str) -> bool {
    path == branch
        || (path.len() > branch.len() && path.starts_with(branch) && path.as_bytes()[branch.len()] == b'/')
}

/// Fails with a branch-not-found error (naming the nearest existing
/// ancestor) unless the result holds `branch` or something beneath it.
pub fn check_branch(result: &ScenarioResult, branch: &str) -> Result<()> {
    if result.branches.keys().any(|k| in_subtree(k, branch)) {
        return Ok(());
    }
    let mut hint = None;
    let mut p = branch;
    while let Some((parent, _)) = p.rsplit_once('/') {
        if result.branches.keys().any(|k| in_subtree(k, parent)) {
            hint = Some(parent.to_string());
            break;
        }
        p = parent;
    }
    Err(CoreError::BranchNotFound {
        path: branch.to_string(),
        hint,
    }
    .into())
}

/// Direct children of `branch` present in the result.
pub fn children(result: &ScenarioResult, branch: &str) -> Vec<String> {
    let mut out: Vec<String> = result
        .branches
        .keys()
        .filter(|k| in_subtree(k, branch) && k.as_str() != branch)
        .map(|k| {
            let rest = &k[branch.len() + 1..];
            format!("{branch}/{}", rest.split('/').next().unwrap_or(rest))
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

fn year_range(result: &ScenarioResult, from: Option<i32>, to: Option<i32>) -> Result<RangeInclusive<i32>> {
    let h = result.horizon;
    let from = from.unwrap_or(h.start_year);
    let to = to.unwrap_or(h.end_year);
    h.check_year(from)?;
    h.check_year(to)?;
    if from > to {
        return Err(MiddlewareError::BadRequest(format!("year range {from}..{to} is empty")));
    }
    Ok(from..=to)
}

fn month_slice<'a>(result: &ScenarioResult, values: &'a [f64], years: &RangeInclusive<i32>) -> &'a [f64] {
    let start = ((years.start() - result.horizon.start_year) * 12) as usize;
    let end = ((years.end() - result.horizon.start_year + 1) * 12) as usize;
    &values[start.min(values.len())..end.min(values.len())]
}

/// Input and output compositions of a branch subtree over a year range.
/// Flows internal to the subtree are ignored.
pub fn compositions(
    result: &ScenarioResult,
    branch: &str,
    years: &RangeInclusive<i32>,
    resource: Option<Resource>,
) -> (Vec<Composition>, Vec<Composition>) {
    let wanted = |f: &FlowSeries| resource.is_none_or(|r| r == f.resource);
    let collect = |pick: &dyn Fn(&FlowSeries) -> Option<String>| {
        let mut groups: BTreeMap<(u8, String), (Resource, Unit, f64)> = BTreeMap::new();
        for f in result.flows.iter().filter(|f| wanted(f)) {
            let Some(other) = pick(f) else { continue };
            let v: f64 = month_slice(result, &f.values, years).iter().sum();
            let e = groups
                .entry((f.resource as u8, other))
                .or_insert((f.resource, f.unit, 0.0));
            e.2 += v;
        }
        let mut out: Vec<Composition> = Vec::new();
        for ((_, other), (res, unit, v)) in groups {
            match out.last_mut() {
                Some(c) if c.resource == res => {
                    c.total += v;
                    c.entries.push(CompositionEntry {
                        branch: other,
                        value: v,
                        fraction: 0.0,
                    });
                }
                _ => out.push(Composition {
                    resource: res,
                    unit,
                    total: v,
                    entries: vec![CompositionEntry {
                        branch: other,
                        value: v,
                        fraction: 0.0,
                    }],
                }),
            }
        }
        for c in &mut out {
            let total = c.total;
            for e in &mut c.entries {
                e.fraction = if total > 0.0 { e.value / total } else { 0.0 };
            }
        }
        out
    };
    let inputs = collect(&|f| {
        (in_subtree(&f.to, branch) && !in_subtree(&f.from, branch)).then(|| f.from.clone())
    });
    let outputs = collect(&|f| {
        (in_subtree(&f.from, branch) && !in_subtree(&f.to, branch)).then(|| f.to.clone())
    });
    (inputs, outputs)
}

fn series_view(
    result: &ScenarioResult,
    v: &VariableSeries,
    years: &RangeInclusive<i32>,
    resolution: Resolution,
) -> Result<SeriesView> {
    let months = month_slice(result, &v.values, years);
    let points = match resolution {
        Resolution::Annual => aggregate_annual(YearMonth::new(*years.start(), 1), months, v.kind)?
            .into_iter()
            .map(|(year, value)| TimePoint {
                year,
                month: None,
                value,
            })
            .collect(),
        Resolution::Monthly => months
            .iter()
            .enumerate()
            .map(|(i, &value)| TimePoint {
                year: years.start() + (i / 12) as i32,
                month: Some((i % 12) as u32 + 1),
                value,
            })
            .collect(),
    };
    Ok(SeriesView {
        name: v.name.clone(),
        unit: v.unit,
        kind: v.kind,
        points,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BranchQuery {
    pub branch: String,
    pub from: Option<i32>,
    pub to: Option<i32>,
    pub resource: Option<Resource>,
    pub resolution: Resolution,
}

/// Series of one branch plus its input/output compositions over the range.
pub fn branch_view(case: &str, result: &ScenarioResult, q: &BranchQuery) -> Result<BranchView> {
    check_branch(result, &q.branch)?;
    let years = year_range(result, q.from, q.to)?;
    let variables = result
        .branches
        .get(&q.branch)
        .map(|vars| {
            vars.iter()
                .filter(|v| q.resource.is_none() || unit_resource(v.unit) == q.resource)
                .map(|v| series_view(result, v, &years, q.resolution))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?
        .unwrap_or_default();
    let (inputs, outputs) = compositions(result, &q.branch, &years, q.resource);
    Ok(BranchView {
        case: case.to_string(),
        scenario: result.scenario.scenario_name.clone(),
        branch: q.branch.clone(),
        resolution: q.resolution,
        from: *years.start(),
        to: *years.end(),
        children: children(result, &q.branch),
        variables,
        inputs,
        outputs,
    })
}

pub fn composition_view(
    case: &str,
    result: &ScenarioResult,
    branch: &str,
    year: Option<i32>,
    resource: Option<Resource>,
) -> Result<CompositionView> {
    check_branch(result, branch)?;
    let year = year.unwrap_or(result.horizon.start_year);
    result.horizon.check_year(year)?;
    let (inputs, outputs) = compositions(result, branch, &(year..=year), resource);
    Ok(CompositionView {
        case: case.to_string(),
        scenario: result.scenario.scenario_name.clone(),
        branch: branch.to_string(),
        year,
        inputs,
        outputs,
    })
}

/// `100 (v - b) / |b|`. Undefined when the base is zero and the value is not.
pub fn pct_diff(value: f64, base: f64) -> Option<f64> {
    if base == 0.0 {
        (value == 0.0).then_some(0.0)
    } else {
        Some(100.0 * (value - base) / base.abs())
    }
}

/// Annual value of a variable: first variable of the branch unless named.
fn annual_value(result: &ScenarioResult, branch: &str, variable: Option<&str>, year: i32) -> Option<(String, Unit, f64)> {
    let vars = result.branches.get(branch)?;
    let v = match variable {
        Some(name) => vars.iter().find(|v| v.name == name)?,
        None => vars.first()?,
    };
    let annual = aggregate_annual(result.start(), &v.values, v.kind).ok()?;
    let (_, value) = annual.into_iter().find(|(y, _)| *y == year)?;
    Some((v.name.clone(), v.unit, value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDot {
    pub scenario: String,
    pub value: f64,
    pub pct_diff: Option<f64>,
}

/// One connected-dot row: a branch node and every scenario's difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub branch: String,
    pub variable: String,
    pub unit: Unit,
    pub base_value: f64,
    pub dots: Vec<CompareDot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareView {
    pub base: String,
    pub branch: String,
    pub year: i32,
    pub rows: Vec<CompareRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineLine {
    pub scenario: String,
    pub values: Vec<f64>,
    pub pct_diff: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineView {
    pub base: String,
    pub branch: String,
    pub variable: String,
    pub unit: Unit,
    pub years: Vec<i32>,
    pub base_values: Vec<f64>,
    pub lines: Vec<TimelineLine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    #[default]
    Values,
    Deltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: String,
    pub value: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub case: String,
    pub scenario: String,
    /// Base scenario the deltas are taken against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicesView {
    pub year: i32,
    #[serde(rename = "as")]
    pub mode: IndexMode,
    pub indices: Vec<String>,
    pub rows: Vec<IndexRow>,
}

impl Middleware {
    pub fn branch_view(&self, case: Option<&str>, scenario: &str, q: &BranchQuery) -> Result<BranchView> {
        let (case, r) = self.result(case, scenario)?;
        branch_view(&case, &r, q)
    }

    pub fn composition_view(
        &self,
        case: Option<&str>,
        scenario: &str,
        branch: &str,
        year: Option<i32>,
        resource: Option<Resource>,
    ) -> Result<CompositionView> {
        let (case, r) = self.result(case, scenario)?;
        composition_view(&case, &r, branch, year, resource)
    }

    /// Connected-dot payload: the branch and each direct child, with every
    /// scenario's percent difference from `base` in `year`.
    pub fn compare(
        &self,
        case: Option<&str>,
        base: &str,
        scenarios: &[String],
        branch: &str,
        variable: Option<&str>,
        year: Option<i32>,
    ) -> Result<CompareView> {
        let (_, b) = self.result(case, base)?;
        check_branch(&b, branch)?;
        let year = year.unwrap_or(b.horizon.start_year);
        b.horizon.check_year(year)?;
        let others = scenarios
            .iter()
            .map(|s| self.result(case, s).map(|(_, r)| r))
            .collect::<Result<Vec<_>>>()?;
        let mut nodes = vec![branch.to_string()];
        nodes.extend(children(&b, branch));
        let mut rows = Vec::new();
        for node in nodes {
            let Some((var, unit, base_value)) = annual_value(&b, &node, variable, year) else {
                continue;
            };
            let dots = others
                .iter()
                .map(|r| {
                    let value = annual_value(r, &node, Some(&var), year).map_or(0.0, |x| x.2);
                    CompareDot {
                        scenario: r.scenario.scenario_name.clone(),
                        value,
                        pct_diff: pct_diff(value, base_value),
                    }
                })
                .collect();
            rows.push(CompareRow {
                branch: node,
                variable: var,
                unit,
                base_value,
                dots,
            });
        }
        Ok(CompareView {
            base: base.to_string(),
            branch: branch.to_string(),
            year,
            rows,
        })
    }

    /// Annual series of one branch variable for each scenario, with the
    /// year-by-year percent difference from `base`.
    pub fn compare_timeline(
        &self,
        case: Option<&str>,
        base: &str,
        scenarios: &[String],
        branch: &str,
        variable: Option<&str>,
    ) -> Result<TimelineView> {
        let (_, b) = self.result(case, base)?;
        check_branch(&b, branch)?;
        let pick = |r: &ScenarioResult, name: Option<&str>| -> Result<VariableSeries> {
            let vars = r.branches.get(branch).ok_or_else(|| {
                MiddlewareError::NotFound(format!("variables on branch `{branch}`"))
            })?;
            match name {
                Some(n) => vars.iter().find(|v| v.name == n),
                None => vars.first(),
            }
            .cloned()
            .ok_or_else(|| MiddlewareError::NotFound(format!("variable on branch `{branch}`")))
        };
        let bv = pick(&b, variable)?;
        let base_annual = aggregate_annual(b.start(), &bv.values, bv.kind)?;
        let mut lines = Vec::new();
        for s in scenarios {
            let (_, r) = self.result(case, s)?;
            let v = pick(&r, Some(&bv.name))?;
            let values: Vec<f64> = aggregate_annual(r.start(), &v.values, v.kind)?
                .into_iter()
                .map(|(_, x)| x)
                .collect();
            let pct = values
                .iter()
                .zip(&base_annual)
                .map(|(v, (_, b))| pct_diff(*v, *b))
                .collect();
            lines.push(TimelineLine {
                scenario: s.clone(),
                values,
                pct_diff: pct,
            });
        }
        Ok(TimelineView {
            base: base.to_string(),
            branch: branch.to_string(),
            variable: bv.name,
            unit: bv.unit,
            years: base_annual.iter().map(|(y, _)| *y).collect(),
            base_values: base_annual.iter().map(|(_, v)| *v).collect(),
            lines,
        })
    }

    /// Index vectors (or proportional deltas against each scenario's
    /// `<climate>_base`) for `year`. An empty scenario list means every
    /// completed scenario of `case`.
    pub fn indices(
        &self,
        case: Option<&str>,
        scenarios: &[String],
        year: Option<i32>,
        mode: IndexMode,
    ) -> Result<IndicesView> {
        let names: Vec<String> = if scenarios.is_empty() {
            let c = case.ok_or_else(|| {
                MiddlewareError::BadRequest("give `scenarios` or a `case`".into())
            })?;
            self.status(c)?
                .scenarios
                .iter()
                .filter(|p| matches!(p.status, crate::job::ScenarioStatus::Finished | crate::job::ScenarioStatus::Reused))
                .map(|p| p.scenario.clone())
                .collect()
        } else {
            scenarios.to_vec()
        };
        let mut year_used = year;
        let mut rows = Vec::new();
        for s in &names {
            let (c, r) = self.result(case, s)?;
            let y = *year_used.get_or_insert(r.horizon.start_year);
            let v = compute_indices(&r, y)?;
            let (base, entries) = match mode {
                IndexMode::Values => (
                    None,
                    v.entries()
                        .iter()
                        .map(|(n, x)| IndexEntry {
                            index: n.to_string(),
                            value: *x,
                            flagged: x.is_none(),
                        })
                        .collect(),
                ),
                IndexMode::Deltas => {
                    let base_name = format!("{}_base", r.scenario.climate_file);
                    let (_, br) = self.result(Some(&c), &base_name)?;
                    let bv = compute_indices(&br, y)?;
                    let deltas = index_deltas(&v, &bv)?;
                    (
                        Some(base_name),
                        deltas
                            .into_iter()
                            .map(|d| IndexEntry {
                                index: d.index,
                                value: d.value,
                                flagged: d.flagged,
                            })
                            .collect(),
                    )
                }
            };
            rows.push(IndexRow {
                case: c,
                scenario: s.clone(),
                base,
                entries,
            });
        }
        Ok(IndicesView {
            year: year_used.unwrap_or_default(),
            mode,
            indices: INDEX_NAMES.iter().map(|s| s.to_string()).collect(),
            rows,
        })
    }
}
