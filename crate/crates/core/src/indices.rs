//! Sustainability indices per scenario-year.
//!
//! Every index is a ratio of annual totals taken from the result's flows and
//! series. A ratio with a zero denominator is undefined and reported as
//! `None` rather than zero.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scenario::{Resource, ScenarioResult};
use crate::water::{DemandSector, SourceKind};

pub const INDEX_NAMES: [&str; 10] = [
    "regional_gw_reliance",
    "ag_gw_reliance",
    "mi_surface_reliance",
    "district_gw_reliance",
    "district_surface_reliance",
    "renewable_share",
    "import_dependence",
    "ag_water_impact",
    "ag_energy_share",
    "ag_emission_share",
];

const DELTA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterIndices {
    pub regional_gw_reliance: Option<f64>,
    pub ag_gw_reliance: Option<f64>,
    pub mi_surface_reliance: Option<f64>,
    pub district_gw_reliance: Option<f64>,
    pub district_surface_reliance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyIndices {
    pub renewable_share: Option<f64>,
    pub import_dependence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodIndices {
    pub ag_water_impact: Option<f64>,
    pub ag_energy_share: Option<f64>,
    pub ag_emission_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexVector {
    pub year: i32,
    pub water: WaterIndices,
    pub energy: EnergyIndices,
    pub food: FoodIndices,
}

impl IndexVector {
    /// `(name, value)` pairs in the canonical order of [`INDEX_NAMES`].
    pub fn entries(&self) -> [(&'static str, Option<f64>); 10] {
        let w = &self.water;
        let e = &self.energy;
        let f = &self.food;
        [
            (INDEX_NAMES[0], w.regional_gw_reliance),
            (INDEX_NAMES[1], w.ag_gw_reliance),
            (INDEX_NAMES[2], w.mi_surface_reliance),
            (INDEX_NAMES[3], w.district_gw_reliance),
            (INDEX_NAMES[4], w.district_surface_reliance),
            (INDEX_NAMES[5], e.renewable_share),
            (INDEX_NAMES[6], e.import_dependence),
            (INDEX_NAMES[7], f.ag_water_impact),
            (INDEX_NAMES[8], f.ag_energy_share),
            (INDEX_NAMES[9], f.ag_emission_share),
        ]
    }
}

/// `num / den`, undefined when `den` is not positive. Round-off that pushes a
/// subset-over-total ratio a hair past 1 is pulled back.
pub fn ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        let r = num / den;
        Some(if r > 1.0 && r < 1.0 + 1e-12 { 1.0 } else { r })
    } else {
        None
    }
}

/// Annual water deliveries broken down the ways the water indices need.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryTotals {
    pub total: f64,
    pub groundwater: f64,
    pub agricultural: f64,
    pub agricultural_gw: f64,
    pub mi: f64,
    pub mi_surface: f64,
    /// Per district: (delivered, groundwater, surface).
    pub districts: Vec<(String, f64, f64, f64)>,
    /// Per demand sector: (delivered, groundwater).
    pub sectors: Vec<(DemandSector, f64, f64)>,
}

pub fn delivery_totals(result: &ScenarioResult, year: i32) -> Result<DeliveryTotals> {
    result.horizon.check_year(year)?;
    let meta = &result.metadata;
    let mut t = DeliveryTotals::default();
    for f in result.flows.iter().filter(|f| f.resource == Resource::Water) {
        let Some(src) = meta.sources.iter().find(|s| s.path == f.from) else {
            continue;
        };
        let Some(dem) = meta.demands.iter().find(|d| d.path == f.to) else {
            continue;
        };
        let v: f64 = result.year_values(&f.values, year).unwrap_or(&[]).iter().sum();
        let gw = if src.kind == SourceKind::Groundwater { v } else { 0.0 };
        let surface = if src.kind == SourceKind::Surface { v } else { 0.0 };
        t.total += v;
        t.groundwater += gw;
        match t.sectors.iter_mut().find(|(s, _, _)| *s == dem.sector) {
            Some(e) => {
                e.1 += v;
                e.2 += gw;
            }
            None => t.sectors.push((dem.sector, v, gw)),
        }
        if dem.sector == DemandSector::Agricultural {
            t.agricultural += v;
            t.agricultural_gw += gw;
        }
        if matches!(dem.sector, DemandSector::Municipal | DemandSector::Industrial) {
            t.mi += v;
            t.mi_surface += surface;
        }
        if dem.district {
            match t.districts.iter_mut().find(|e| e.0 == dem.path) {
                Some(e) => {
                    e.1 += v;
                    e.2 += gw;
                    e.3 += surface;
                }
                None => t.districts.push((dem.path.clone(), v, gw, surface)),
            }
        }
    }
    Ok(t)
}

/// Delivery-weighted mean of per-district ratios; districts with no
/// deliveries carry no weight.
fn district_weighted(districts: &[(String, f64, f64, f64)], pick: impl Fn(&(String, f64, f64, f64)) -> f64) -> Option<f64> {
    let total: f64 = districts.iter().map(|d| d.1).sum();
    if total <= 0.0 {
        return None;
    }
    let mean: f64 = districts
        .iter()
        .filter(|d| d.1 > 0.0)
        .map(|d| (d.1 / total) * (pick(d) / d.1))
        .sum();
    Some(mean.clamp(0.0, 1.0))
}

fn annual(result: &ScenarioResult, branch: &str, var: &str, year: i32) -> f64 {
    result.annual_sum(branch, var, year).unwrap_or(0.0)
}

pub fn compute_indices(result: &ScenarioResult, year: i32) -> Result<IndexVector> {
    let d = delivery_totals(result, year)?;

    let mut gen_total = 0.0;
    let mut gen_renewable = 0.0;
    let mut gen_imported = 0.0;
    for p in &result.metadata.plants {
        let g = annual(result, &p.path, "generation", year);
        gen_total += g;
        if p.fuel.is_renewable() {
            gen_renewable += g;
        }
        if !p.in_area {
            gen_imported += g;
        }
    }
    let ag_energy = annual(
        result,
        "energy/demand/industrial/water_infrastructure",
        "ag_pumping_energy",
        year,
    );
    let demand_total = annual(result, "energy/demand", "net_demand", year);
    let emissions_total = annual(result, "energy/supply", "emissions", year);
    let ag_energy_share = ratio(ag_energy, demand_total);
    let ag_emission_share = ag_energy_share.and_then(|s| ratio(s * emissions_total, emissions_total));

    Ok(IndexVector {
        year,
        water: WaterIndices {
            regional_gw_reliance: ratio(d.groundwater, d.total),
            ag_gw_reliance: ratio(d.agricultural_gw, d.agricultural),
            mi_surface_reliance: ratio(d.mi_surface, d.mi),
            district_gw_reliance: district_weighted(&d.districts, |e| e.2),
            district_surface_reliance: district_weighted(&d.districts, |e| e.3),
        },
        energy: EnergyIndices {
            renewable_share: ratio(gen_renewable, gen_total),
            import_dependence: ratio(gen_imported, gen_total),
        },
        food: FoodIndices {
            ag_water_impact: ratio(d.agricultural, d.total),
            ag_energy_share,
            ag_emission_share,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDelta {
    pub index: String,
    pub value: Option<f64>,
    /// True when either side is undefined.
    pub flagged: bool,
}

/// Proportional difference of each index from the base vector.
pub fn index_deltas(scenario: &IndexVector, base: &IndexVector) -> Result<Vec<IndexDelta>> {
    if scenario.year != base.year {
        return Err(CoreError::Dimension(format!(
            "index vectors for different years ({} vs {})",
            scenario.year, base.year
        )));
    }
    Ok(scenario
        .entries()
        .iter()
        .zip(base.entries())
        .map(|((name, v), (_, b))| match (v, b) {
            (Some(v), Some(b)) => IndexDelta {
                index: name.to_string(),
                value: Some((v - b) / b.abs().max(DELTA_EPS)),
                flagged: false,
            },
            _ => IndexDelta {
                index: name.to_string(),
                value: None,
                flagged: true,
            },
        })
        .collect())
}
