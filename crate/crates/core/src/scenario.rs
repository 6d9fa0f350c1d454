//! Scenario inputs (named percentage deltas on adjustable variables) and the
//! per-branch monthly results a run produces.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::branch::{BaseValue, VariableDef};
use crate::energy::{EnergySectorId, EnergySystem, Fuel};
use crate::error::{CoreError, Result};
use crate::series::{Horizon, YearMonth};
use crate::units::{SeriesKind, Unit};
use crate::water::{DemandSector, SourceKind, WaterNetwork};

pub const MUNICIPAL_WUE: &str = "municipal_wue";
pub const HOUSEHOLD_EUE: &str = "household_eue";
pub const IRRIGATION_IE: &str = "irrigation_ie";

/// How a percentage delta acts on its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeverEffect {
    /// `x * (1 - d/100)`
    Reduce,
    /// `x / (1 + d/100)`
    Divide,
    /// `x * (1 + d/100)`
    Scale,
}

impl LeverEffect {
    pub fn factor(self, delta_pct: f64) -> f64 {
        match self {
            LeverEffect::Reduce => 1.0 - delta_pct / 100.0,
            LeverEffect::Divide => 1.0 / (1.0 + delta_pct / 100.0),
            LeverEffect::Scale => 1.0 + delta_pct / 100.0,
        }
    }

    pub fn accepts(self, delta_pct: f64) -> bool {
        let in_range = delta_pct.is_finite() && (-100.0..=100.0).contains(&delta_pct);
        match self {
            LeverEffect::Divide => in_range && delta_pct > -100.0,
            _ => in_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeverTarget {
    MunicipalWue,
    HouseholdEue,
    IrrigationIe,
    SourceAvailability(usize),
    EnergySector(EnergySectorId),
}

#[derive(Debug, Clone)]
pub struct LeverDef {
    /// Branch that owns the variable.
    pub path: String,
    pub variable: VariableDef,
    pub target: LeverTarget,
}

fn lever_var(
    key: String,
    label: String,
    unit: Unit,
    kind: SeriesKind,
    base_value: BaseValue,
    effect: LeverEffect,
) -> VariableDef {
    VariableDef {
        key,
        label,
        unit,
        kind,
        base_value,
        adjustable: true,
        default_delta_pct: 0.0,
        effect: Some(effect),
    }
}

/// Every adjustable variable the engine understands for this network and
/// energy system.
pub fn lever_definitions(network: &WaterNetwork, energy: &EnergySystem) -> Vec<LeverDef> {
    let mut out = Vec::new();
    for (i, s) in network.sources.iter().enumerate() {
        if let crate::water::Availability::Climate { column } = &s.availability {
            out.push(LeverDef {
                path: format!("water/supply/{}", s.id),
                variable: lever_var(
                    format!("{}_availability", s.id.to_lowercase()),
                    format!("{} availability", s.label),
                    Unit::M3PerMonth,
                    SeriesKind::Flow,
                    BaseValue::Series(format!("climate:{column}")),
                    LeverEffect::Scale,
                ),
                target: LeverTarget::SourceAvailability(i),
            });
        }
    }
    if network
        .demands
        .iter()
        .any(|d| d.sector == DemandSector::Municipal)
    {
        out.push(LeverDef {
            path: format!("water/demand/{}", DemandSector::Municipal.slug()),
            variable: lever_var(
                MUNICIPAL_WUE.into(),
                "Municipal water use efficiency".into(),
                Unit::Percent,
                SeriesKind::Intensity,
                BaseValue::Number(0.0),
                LeverEffect::Reduce,
            ),
            target: LeverTarget::MunicipalWue,
        });
    }
    if network
        .demands
        .iter()
        .any(|d| d.sector == DemandSector::Agricultural)
    {
        out.push(LeverDef {
            path: format!("water/demand/{}", DemandSector::Agricultural.slug()),
            variable: lever_var(
                IRRIGATION_IE.into(),
                "Irrigation efficiency".into(),
                Unit::Percent,
                SeriesKind::Intensity,
                BaseValue::Number(0.0),
                LeverEffect::Divide,
            ),
            target: LeverTarget::IrrigationIe,
        });
    }
    for sector in &energy.demand.sectors {
        let path = format!("energy/demand/{}", sector.id.slug());
        if sector.id == EnergySectorId::Residential {
            out.push(LeverDef {
                path,
                variable: lever_var(
                    HOUSEHOLD_EUE.into(),
                    "Household energy use efficiency".into(),
                    Unit::Percent,
                    SeriesKind::Intensity,
                    BaseValue::Number(0.0),
                    LeverEffect::Reduce,
                ),
                target: LeverTarget::HouseholdEue,
            });
        } else {
            out.push(LeverDef {
                path,
                variable: lever_var(
                    format!("{}_energy_demand", sector.id.slug()),
                    format!("{} electricity demand", sector.id.slug()),
                    Unit::GwhPerMonth,
                    SeriesKind::Flow,
                    BaseValue::Number(sector.intensity_gwh_per_unit),
                    LeverEffect::Scale,
                ),
                target: LeverTarget::EnergySector(sector.id),
            });
        }
    }
    out
}

/// Resolved multipliers for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Levers {
    pub wue_pct: f64,
    pub eue_pct: f64,
    pub ie_pct: f64,
    /// Per water source, in network order.
    pub availability_factor: Vec<f64>,
    pub sector_factor: BTreeMap<EnergySectorId, f64>,
}

impl Levers {
    pub fn resolve(
        network: &WaterNetwork,
        energy: &EnergySystem,
        deltas: &BTreeMap<String, f64>,
    ) -> Result<Levers> {
        let defs = lever_definitions(network, energy);
        let mut levers = Levers {
            wue_pct: 0.0,
            eue_pct: 0.0,
            ie_pct: 0.0,
            availability_factor: vec![1.0; network.sources.len()],
            sector_factor: BTreeMap::new(),
        };
        for (key, delta) in deltas {
            let def = defs
                .iter()
                .find(|d| d.variable.key == *key)
                .ok_or_else(|| CoreError::InvalidScenario(format!("`{key}` is not adjustable")))?;
            let effect = def.variable.effect.unwrap_or(LeverEffect::Scale);
            if !effect.accepts(*delta) {
                return Err(CoreError::InvalidScenario(format!(
                    "delta {delta}% for `{key}` is out of bounds"
                )));
            }
            match &def.target {
                LeverTarget::MunicipalWue => levers.wue_pct = *delta,
                LeverTarget::HouseholdEue => levers.eue_pct = *delta,
                LeverTarget::IrrigationIe => levers.ie_pct = *delta,
                LeverTarget::SourceAvailability(i) => {
                    levers.availability_factor[*i] = effect.factor(*delta)
                }
                LeverTarget::EnergySector(id) => {
                    levers.sector_factor.insert(*id, effect.factor(*delta));
                }
            }
        }
        Ok(levers)
    }

    pub fn sector_factor(&self, id: EnergySectorId) -> f64 {
        self.sector_factor.get(&id).copied().unwrap_or(1.0)
    }
}

/// A named assignment of percentage deltas under one climate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_name: String,
    pub climate_file: String,
    #[serde(default)]
    pub deltas: BTreeMap<String, f64>,
}

impl ScenarioSpec {
    pub fn base(climate_file: &str) -> Self {
        ScenarioSpec {
            scenario_name: format!("{climate_file}_base"),
            climate_file: climate_file.to_string(),
            deltas: BTreeMap::new(),
        }
    }

    /// True when every delta is zero.
    pub fn is_base(&self) -> bool {
        self.deltas.values().all(|d| *d == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSeries {
    pub name: String,
    pub unit: Unit,
    pub kind: SeriesKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Water,
    Electricity,
    Crop,
}

/// A monthly flow between two branches, used for composition views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub from: String,
    pub to: String,
    pub resource: Resource,
    pub unit: Unit,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTag {
    pub path: String,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandTag {
    pub path: String,
    pub sector: DemandSector,
    pub district: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTag {
    pub path: String,
    pub fuel: Fuel,
    pub in_area: bool,
}

/// Structural facts needed to interpret a result without the dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub sources: Vec<SourceTag>,
    pub demands: Vec<DemandTag>,
    pub plants: Vec<PlantTag>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingDiagnostics {
    pub scheme: String,
    pub allocator: String,
    pub crop_shares: String,
    /// Evaluations per committed month.
    pub iterations: Vec<u32>,
    /// Relative link change at commit, per month.
    pub residuals: Vec<f64>,
    pub power_plant_water_m3: Vec<f64>,
    pub water_infrastructure_gwh: Vec<f64>,
    /// Set when any month hit the iteration limit.
    pub warning: bool,
    /// Set when crop-share coefficients came from a flagged fit.
    #[serde(default)]
    pub fmlm_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioSpec,
    pub horizon: Horizon,
    /// Branch path -> variables, in the order the engine produced them.
    pub branches: BTreeMap<String, Vec<VariableSeries>>,
    pub flows: Vec<FlowSeries>,
    pub metadata: ResultMetadata,
    pub diagnostics: CouplingDiagnostics,
}

impl ScenarioResult {
    pub fn start(&self) -> YearMonth {
        self.horizon.start()
    }

    pub fn series(&self, branch: &str, variable: &str) -> Option<&VariableSeries> {
        self.branches
            .get(branch)?
            .iter()
            .find(|v| v.name == variable)
    }

    pub fn values(&self, branch: &str, variable: &str) -> Option<&[f64]> {
        self.series(branch, variable).map(|s| s.values.as_slice())
    }

    /// Values for calendar `year` of a monthly vector aligned to the horizon.
    pub fn year_values<'a>(&self, values: &'a [f64], year: i32) -> Option<&'a [f64]> {
        if !self.horizon.contains_year(year) {
            return None;
        }
        let i = ((year - self.horizon.start_year) * 12) as usize;
        values.get(i..i + 12)
    }

    pub fn annual_sum(&self, branch: &str, variable: &str, year: i32) -> Option<f64> {
        let v = self.values(branch, variable)?;
        Some(self.year_values(v, year)?.iter().sum())
    }

    pub fn flows_into<'a>(&'a self, branch: &'a str) -> impl Iterator<Item = &'a FlowSeries> + 'a {
        self.flows.iter().filter(move |f| f.to == branch)
    }

    pub fn flows_from<'a>(&'a self, branch: &'a str) -> impl Iterator<Item = &'a FlowSeries> + 'a {
        self.flows.iter().filter(move |f| f.from == branch)
    }
}
