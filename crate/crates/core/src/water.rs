//! Water demand and priority-based allocation.
//!
//! Demands are served in ascending priority number. Within a priority class
//! every unmet demand requests its next preferred source in rounds; a source
//! that is oversubscribed in a round is shared in proportion to the requests.
//! The residual source (groundwater) is uncapped unless the dataset sets a
//! monthly cap, so unmet demand only appears when it is capped or a demand is
//! not connected to it.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::series::YearMonth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Surface,
    Groundwater,
    Reclaimed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Availability {
    /// Exogenous monthly volume taken from a climate-file column.
    Climate { column: String },
    /// A fraction of the demand of the listed nodes (wastewater return flow).
    ReturnFlow { fraction: f64, of: Vec<String> },
    /// Absorbs whatever the other sources cannot supply.
    Residual {
        #[serde(default)]
        monthly_cap_m3: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterSource {
    pub id: String,
    pub label: String,
    pub kind: SourceKind,
    pub availability: Availability,
}

impl WaterSource {
    pub fn is_residual(&self) -> bool {
        matches!(self.availability, Availability::Residual { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandSector {
    Municipal,
    Agricultural,
    Industrial,
    PowerPlants,
    NativeAmerican,
}

impl DemandSector {
    pub const ALL: [DemandSector; 5] = [
        DemandSector::Municipal,
        DemandSector::Agricultural,
        DemandSector::Industrial,
        DemandSector::PowerPlants,
        DemandSector::NativeAmerican,
    ];

    /// Path segment under `water/demand`.
    pub fn slug(self) -> &'static str {
        match self {
            DemandSector::Municipal => "municipal",
            DemandSector::Agricultural => "agriculture",
            DemandSector::Industrial => "industrial",
            DemandSector::PowerPlants => "power_plants",
            DemandSector::NativeAmerican => "native_american",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DemandSector::Municipal => "Municipal",
            DemandSector::Agricultural => "Agricultural",
            DemandSector::Industrial => "Industrial",
            DemandSector::PowerPlants => "Power plants",
            DemandSector::NativeAmerican => "Native American",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandDriver {
    /// Population x per-capita intensity, with a monthly profile averaging 1.
    PerCapita {
        m3_per_person_month: f64,
        population_share: f64,
        monthly_profile: [f64; 12],
    },
    /// Crop water requirement of an irrigation district.
    Irrigation { district: String },
    /// Cooling water carried over from the energy model.
    PowerPlantLink,
    Fixed { m3: [f64; 12] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandNode {
    pub id: String,
    pub label: String,
    pub sector: DemandSector,
    pub priority: u32,
    /// Source ids in the order they are drawn.
    pub preference: Vec<String>,
    pub driver: DemandDriver,
}

impl DemandNode {
    /// Branch path of this node in the water tree.
    pub fn branch_path(&self) -> String {
        if self.id == self.sector.slug() {
            format!("water/demand/{}", self.sector.slug())
        } else {
            format!("water/demand/{}/{}", self.sector.slug(), self.id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterNetwork {
    pub sources: Vec<WaterSource>,
    pub demands: Vec<DemandNode>,
}

impl WaterNetwork {
    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }

    pub fn demand_index(&self, id: &str) -> Option<usize> {
        self.demands.iter().position(|d| d.id == id)
    }

    pub fn residual_index(&self) -> Option<usize> {
        self.sources.iter().position(WaterSource::is_residual)
    }

    /// Preference list of demand `d` as source indices.
    pub fn preference_indices(&self, d: usize) -> Vec<usize> {
        self.demands[d]
            .preference
            .iter()
            .filter_map(|id| self.source_index(id))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let residuals = self.sources.iter().filter(|s| s.is_residual()).count();
        if residuals != 1 {
            return Err(CoreError::schema(
                "water.sources",
                format!("expected exactly one residual source, found {residuals}"),
            ));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if self.sources[..i].iter().any(|o| o.id == s.id) {
                return Err(CoreError::schema(
                    "water.sources",
                    format!("duplicate source id `{}`", s.id),
                ));
            }
            match &s.availability {
                Availability::ReturnFlow { fraction, of } => {
                    if !(0.0..=1.0).contains(fraction) {
                        return Err(CoreError::schema(
                            format!("water.sources[{}].availability.fraction", s.id),
                            "must be in [0, 1]",
                        ));
                    }
                    for id in of {
                        if self.demand_index(id).is_none() {
                            return Err(CoreError::schema(
                                format!("water.sources[{}].availability.of", s.id),
                                format!("unknown demand `{id}`"),
                            ));
                        }
                    }
                }
                Availability::Residual {
                    monthly_cap_m3: Some(cap),
                } if !(cap.is_finite() && *cap >= 0.0) => {
                    return Err(CoreError::schema(
                        format!("water.sources[{}].availability.monthly_cap_m3", s.id),
                        "must be finite and non-negative",
                    ));
                }
                _ => {}
            }
        }
        for (i, d) in self.demands.iter().enumerate() {
            let field = format!("water.demands[{}]", d.id);
            if self.demands[..i].iter().any(|o| o.id == d.id) {
                return Err(CoreError::schema(field, "duplicate demand id"));
            }
            if d.priority < 1 {
                return Err(CoreError::schema(field + ".priority", "must be >= 1"));
            }
            if d.preference.is_empty() {
                return Err(CoreError::schema(
                    field + ".preference",
                    "demand is not reachable from any source",
                ));
            }
            for id in &d.preference {
                if self.source_index(id).is_none() {
                    return Err(CoreError::schema(
                        field.clone() + ".preference",
                        format!("unknown source `{id}`"),
                    ));
                }
            }
            if let DemandDriver::PerCapita {
                m3_per_person_month,
                population_share,
                ..
            } = &d.driver
            {
                if *m3_per_person_month < 0.0 || !(0.0..=1.0).contains(population_share) {
                    return Err(CoreError::schema(
                        field + ".driver",
                        "intensity must be >= 0 and population share in [0, 1]",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Monthly deliveries from each source to each demand node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    pub month: YearMonth,
    /// `delivered[source][demand]` in m3.
    pub delivered: Vec<Vec<f64>>,
    pub unmet: Vec<f64>,
    pub demand: Vec<f64>,
}

impl AllocationMatrix {
    pub fn source_total(&self, s: usize) -> f64 {
        self.delivered[s].iter().sum()
    }

    pub fn demand_delivered(&self, d: usize) -> f64 {
        self.delivered.iter().map(|row| row[d]).sum()
    }

    pub fn total_delivered(&self) -> f64 {
        self.delivered.iter().flatten().sum()
    }
}

/// Municipal demand: population x intensity, reduced by the water use
/// efficiency gain.
pub fn municipal_demand(population: f64, m3_per_person_month: f64, wue_delta_pct: f64) -> f64 {
    population * m3_per_person_month * (1.0 - wue_delta_pct / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Et0Params {
    /// Extraterrestrial radiation per calendar month, mm/day equivalent.
    pub ra_mm_per_day: [f64; 12],
    /// Mean diurnal temperature range per calendar month.
    pub temp_range_c: [f64; 12],
    pub effective_precip_fraction: f64,
}

/// Hargreaves reference evapotranspiration for a month, in mm.
pub fn hargreaves_et0_mm(params: &Et0Params, month: YearMonth, tmean_c: f64) -> f64 {
    let m = (month.month - 1) as usize;
    let daily = 0.0023
        * params.ra_mm_per_day[m]
        * (tmean_c + 17.8).max(0.0)
        * params.temp_range_c[m].max(0.0).sqrt();
    daily * month.days() as f64
}

/// Net irrigation requirement of one crop in m3/ha, clamped at zero.
pub fn net_requirement_m3_per_ha(kc: f64, et0_mm: f64, effective_precip_mm: f64) -> f64 {
    crate::units::mm_over_ha_to_m3((kc * et0_mm - effective_precip_mm).max(0.0), 1.0)
}

/// Gross withdrawal for a net requirement. Irrigation efficiency gains divide
/// the withdrawal: `net / base_efficiency / (1 + ie/100)`.
pub fn gross_irrigation_m3(net_m3: f64, base_efficiency: f64, ie_delta_pct: f64) -> f64 {
    net_m3 / base_efficiency / (1.0 + ie_delta_pct / 100.0)
}

/// District irrigation demand (m3) for one month given per-crop areas and
/// monthly crop coefficients.
pub fn irrigation_demand(
    areas_ha: &[f64],
    kc: &[f64],
    et0_mm: f64,
    effective_precip_mm: f64,
    base_efficiency: f64,
    ie_delta_pct: f64,
) -> Result<f64> {
    if areas_ha.len() != kc.len() {
        return Err(CoreError::Unknown {
            kind: "crop coefficient",
            name: format!("{} areas for {} coefficients", areas_ha.len(), kc.len()),
        });
    }
    let net: f64 = areas_ha
        .iter()
        .zip(kc)
        .map(|(a, k)| a * net_requirement_m3_per_ha(*k, et0_mm, effective_precip_mm))
        .sum();
    Ok(gross_irrigation_m3(net, base_efficiency, ie_delta_pct))
}

/// Annual production (t) of one crop: potential yield reduced in each month by
/// the unmet fraction, weighted by that month's share of the crop's
/// requirement. With no requirement the year is weighted evenly.
pub fn crop_production(
    area_ha: f64,
    base_yield_t_per_ha: f64,
    yield_index: f64,
    monthly_requirement: &[f64; 12],
    monthly_unmet_fraction: &[f64; 12],
) -> f64 {
    let potential = area_ha * base_yield_t_per_ha * yield_index;
    potential * met_fraction(monthly_requirement, monthly_unmet_fraction)
}

fn met_fraction(requirement: &[f64; 12], unmet: &[f64; 12]) -> f64 {
    let total: f64 = requirement.iter().sum();
    if total <= 0.0 {
        return unmet.iter().map(|u| 1.0 - u).sum::<f64>() / 12.0;
    }
    requirement
        .iter()
        .zip(unmet)
        .map(|(r, u)| r / total * (1.0 - u))
        .sum()
}

/// Portion of an annual production total booked in one month.
pub fn monthly_production_share(requirement: &[f64; 12], month_index: usize, unmet: f64) -> f64 {
    let total: f64 = requirement.iter().sum();
    let weight = if total <= 0.0 {
        1.0 / 12.0
    } else {
        requirement[month_index] / total
    };
    weight * (1.0 - unmet)
}

/// A water allocation rule.
pub trait Allocator: Send + Sync {
    fn name(&self) -> &'static str;

    /// `availability[s]` is `None` for an uncapped residual source.
    fn allocate(
        &self,
        network: &WaterNetwork,
        demands: &[f64],
        availability: &[Option<f64>],
        month: YearMonth,
    ) -> AllocationMatrix;
}

/// How demands sharing a priority split an oversubscribed source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TieRule {
    Proportional,
    DeclarationOrder,
}

/// Greedy by (priority, preference); equal-priority demands share a
/// constrained source in proportion to their requests.
#[derive(Debug, Default, Clone, Copy)]
pub struct PriorityGreedy;

/// Greedy by (priority, preference); equal-priority demands are served one
/// after another in declaration order.
#[derive(Debug, Default, Clone, Copy)]
pub struct PrioritySequential;

impl Allocator for PriorityGreedy {
    fn name(&self) -> &'static str {
        "priority-greedy"
    }

    fn allocate(
        &self,
        network: &WaterNetwork,
        demands: &[f64],
        availability: &[Option<f64>],
        month: YearMonth,
    ) -> AllocationMatrix {
        greedy(network, demands, availability, month, TieRule::Proportional)
    }
}

impl Allocator for PrioritySequential {
    fn name(&self) -> &'static str {
        "priority-sequential"
    }

    fn allocate(
        &self,
        network: &WaterNetwork,
        demands: &[f64],
        availability: &[Option<f64>],
        month: YearMonth,
    ) -> AllocationMatrix {
        greedy(network, demands, availability, month, TieRule::DeclarationOrder)
    }
}

fn greedy(
    network: &WaterNetwork,
    demands: &[f64],
    availability: &[Option<f64>],
    month: YearMonth,
    tie: TieRule,
) -> AllocationMatrix {
    let ns = network.sources.len();
    let nd = network.demands.len();
    let mut delivered = vec![vec![0.0; nd]; ns];
    let mut remaining_supply: Vec<Option<f64>> = availability.to_vec();
    let mut remaining: Vec<f64> = demands.iter().map(|d| d.max(0.0)).collect();
    let prefs: Vec<Vec<usize>> = (0..nd).map(|d| network.preference_indices(d)).collect();

    let mut priorities: Vec<u32> = network.demands.iter().map(|d| d.priority).collect();
    priorities.sort_unstable();
    priorities.dedup();

    for p in priorities {
        let class: Vec<usize> = (0..nd).filter(|&d| network.demands[d].priority == p).collect();
        match tie {
            TieRule::Proportional => serve_proportional(
                &class,
                &prefs,
                &mut remaining,
                &mut remaining_supply,
                &mut delivered,
            ),
            TieRule::DeclarationOrder => {
                for &d in &class {
                    serve_proportional(
                        &[d],
                        &prefs,
                        &mut remaining,
                        &mut remaining_supply,
                        &mut delivered,
                    );
                }
            }
        }
    }

    AllocationMatrix {
        month,
        delivered,
        unmet: remaining,
        demand: demands.iter().map(|d| d.max(0.0)).collect(),
    }
}

fn serve_proportional(
    class: &[usize],
    prefs: &[Vec<usize>],
    remaining: &mut [f64],
    supply: &mut [Option<f64>],
    delivered: &mut [Vec<f64>],
) {
    let rounds = class.iter().map(|&d| prefs[d].len()).max().unwrap_or(0);
    for round in 0..rounds {
        // requests[s] = list of (demand, amount) asking source s this round
        let mut requests: Vec<Vec<(usize, f64)>> = vec![Vec::new(); supply.len()];
        for &d in class {
            if remaining[d] > 0.0 {
                if let Some(&s) = prefs[d].get(round) {
                    requests[s].push((d, remaining[d]));
                }
            }
        }
        for (s, reqs) in requests.iter().enumerate() {
            if reqs.is_empty() {
                continue;
            }
            let asked: f64 = reqs.iter().map(|(_, a)| a).sum();
            let grant_all = match supply[s] {
                None => true,
                Some(avail) => asked <= avail,
            };
            for &(d, amount) in reqs {
                let grant = if grant_all {
                    amount
                } else {
                    let avail = supply[s].unwrap_or(0.0);
                    avail * (amount / asked)
                };
                delivered[s][d] += grant;
                remaining[d] = if grant_all { 0.0 } else { (remaining[d] - grant).max(0.0) };
            }
            if let Some(avail) = supply[s].as_mut() {
                *avail = if grant_all { (*avail - asked).max(0.0) } else { 0.0 };
            }
        }
    }
}
