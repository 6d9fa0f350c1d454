//! Electricity demand, merit-order dispatch and emissions on a monthly step.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::units::{capability_gwh, energy_gwh};
use crate::water::{AllocationMatrix, WaterNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fuel {
    Coal,
    NaturalGas,
    Uranium,
    Solar,
    Wind,
    Hydro,
}

impl Fuel {
    pub fn is_renewable(self) -> bool {
        matches!(self, Fuel::Solar | Fuel::Wind | Fuel::Hydro)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plant {
    pub id: String,
    pub label: String,
    pub in_area: bool,
    pub fuel: Fuel,
    pub capacity_mw: f64,
    pub merit_rank: u32,
    pub emission_factor_t_per_gwh: f64,
    pub water_factor_m3_per_gwh: f64,
}

impl Plant {
    pub fn branch_path(&self) -> String {
        let area = if self.in_area { "in_area" } else { "out_of_area" };
        format!("energy/supply/{area}/{}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantCatalog {
    pub plants: Vec<Plant>,
}

impl PlantCatalog {
    /// Plant indices sorted by merit rank.
    pub fn merit_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.plants.len()).collect();
        order.sort_by_key(|&i| self.plants[i].merit_rank);
        order
    }

    pub fn total_capacity_mw(&self) -> f64 {
        self.plants.iter().map(|p| p.capacity_mw).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.plants.is_empty() {
            return Err(CoreError::schema("energy.plants", "catalog is empty"));
        }
        for (i, p) in self.plants.iter().enumerate() {
            let field = format!("energy.plants[{}]", p.id);
            if self.plants[..i].iter().any(|o| o.id == p.id) {
                return Err(CoreError::schema(field, "duplicate plant id"));
            }
            if self.plants[..i].iter().any(|o| o.merit_rank == p.merit_rank) {
                return Err(CoreError::schema(field + ".merit_rank", "merit ranks must be unique"));
            }
            if !(p.capacity_mw.is_finite() && p.capacity_mw > 0.0) {
                return Err(CoreError::schema(field + ".capacity_mw", "must be > 0"));
            }
            if p.fuel.is_renewable() && p.emission_factor_t_per_gwh != 0.0 {
                return Err(CoreError::schema(
                    field + ".emission_factor_t_per_gwh",
                    "renewable plants must have a zero emission factor",
                ));
            }
            if p.emission_factor_t_per_gwh < 0.0 || p.water_factor_m3_per_gwh < 0.0 {
                return Err(CoreError::schema(field, "factors must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySectorId {
    Residential,
    Commercial,
    Industrial,
}

impl EnergySectorId {
    pub fn slug(self) -> &'static str {
        match self {
            EnergySectorId::Residential => "residential",
            EnergySectorId::Commercial => "commercial",
            EnergySectorId::Industrial => "industrial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Activity {
    /// A share of the climate-file population.
    Population { share: f64 },
    Constant { units: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySector {
    pub id: EnergySectorId,
    pub activity: Activity,
    /// GWh per unit of activity per month.
    pub intensity_gwh_per_unit: f64,
    pub monthly_profile: [f64; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyDemandStructure {
    pub sectors: Vec<EnergySector>,
    /// Electricity per m3 delivered, keyed by water source id.
    pub water_infrastructure_kwh_per_m3: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySystem {
    pub loss_fraction: f64,
    pub reserve_margin: f64,
    pub load_factor: f64,
    pub demand: EnergyDemandStructure,
    pub catalog: PlantCatalog,
}

impl EnergySystem {
    pub fn validate(&self, network: &WaterNetwork) -> Result<()> {
        if !(0.0..1.0).contains(&self.loss_fraction) {
            return Err(CoreError::schema("energy.loss_fraction", "must be in [0, 1)"));
        }
        if self.reserve_margin < 0.0 {
            return Err(CoreError::schema("energy.reserve_margin", "must be >= 0"));
        }
        if !(self.load_factor > 0.0 && self.load_factor <= 1.0) {
            return Err(CoreError::schema("energy.load_factor", "must be in (0, 1]"));
        }
        for s in &self.demand.sectors {
            if s.intensity_gwh_per_unit < 0.0 {
                return Err(CoreError::schema(
                    format!("energy.sectors[{}].intensity_gwh_per_unit", s.id.slug()),
                    "must be >= 0",
                ));
            }
        }
        for (id, v) in &self.demand.water_infrastructure_kwh_per_m3 {
            if network.source_index(id).is_none() {
                return Err(CoreError::schema(
                    "energy.water_infrastructure_kwh_per_m3",
                    format!("unknown water source `{id}`"),
                ));
            }
            if *v < 0.0 {
                return Err(CoreError::schema(
                    format!("energy.water_infrastructure_kwh_per_m3[{id}]"),
                    "must be >= 0",
                ));
            }
        }
        self.catalog.validate()
    }
}

/// Sector electricity demand (GWh) for one month. Only the residential sector
/// responds to the household energy use efficiency gain.
pub fn sector_demand(
    sector: &EnergySector,
    population: f64,
    month_index: usize,
    eue_delta_pct: f64,
) -> f64 {
    let activity = match sector.activity {
        Activity::Population { share } => population * share,
        Activity::Constant { units } => units,
    };
    let base = activity * sector.intensity_gwh_per_unit * sector.monthly_profile[month_index];
    if sector.id == EnergySectorId::Residential {
        base * (1.0 - eue_delta_pct / 100.0)
    } else {
        base
    }
}

/// Electricity (GWh) used by water infrastructure, per source, from the
/// month's deliveries.
pub fn water_infrastructure_demand_by_source(
    allocation: &AllocationMatrix,
    intensities_kwh_per_m3: &[f64],
) -> Vec<f64> {
    intensities_kwh_per_m3
        .iter()
        .enumerate()
        .map(|(s, k)| energy_gwh(allocation.source_total(s), *k))
        .collect()
}

pub fn water_infrastructure_demand(
    allocation: &AllocationMatrix,
    intensities_kwh_per_m3: &[f64],
) -> f64 {
    water_infrastructure_demand_by_source(allocation, intensities_kwh_per_m3)
        .iter()
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub gross_gwh: f64,
    /// Generation per plant, in catalog order.
    pub generation_gwh: Vec<f64>,
    pub unserved_gwh: f64,
    pub implied_peak_mw: f64,
    pub reserve_ok: bool,
}

/// Fills capabilities in the given order until `required` is met.
/// Returns (generation, unserved).
pub fn merit_fill(capabilities: &[f64], order: &[usize], required: f64) -> (Vec<f64>, f64) {
    let mut generation = vec![0.0; capabilities.len()];
    let mut left = required.max(0.0);
    for &i in order {
        if left <= 0.0 {
            break;
        }
        let g = capabilities[i].min(left);
        generation[i] = g;
        left -= g;
    }
    (generation, left.max(0.0))
}

/// Grosses net demand up for losses and dispatches the catalog in merit order.
/// The reserve margin is reported, not enforced.
pub fn dispatch(
    catalog: &PlantCatalog,
    net_demand_gwh: f64,
    loss_fraction: f64,
    reserve_margin: f64,
    load_factor: f64,
    hours: f64,
) -> Dispatch {
    let gross = net_demand_gwh / (1.0 - loss_fraction);
    let capabilities: Vec<f64> = catalog
        .plants
        .iter()
        .map(|p| capability_gwh(p.capacity_mw, hours))
        .collect();
    let (generation, unserved) = merit_fill(&capabilities, &catalog.merit_order(), gross);
    let implied_peak_mw = gross * 1000.0 / (hours * load_factor);
    Dispatch {
        gross_gwh: gross,
        generation_gwh: generation,
        unserved_gwh: unserved,
        implied_peak_mw,
        reserve_ok: catalog.total_capacity_mw() >= implied_peak_mw * (1.0 + reserve_margin),
    }
}

/// Emissions (tCO2) per plant and their total.
pub fn emissions(generation_gwh: &[f64], catalog: &PlantCatalog) -> (Vec<f64>, f64) {
    let per: Vec<f64> = generation_gwh
        .iter()
        .zip(&catalog.plants)
        .map(|(g, p)| g * p.emission_factor_t_per_gwh)
        .collect();
    let total = per.iter().sum();
    (per, total)
}

/// Cooling water (m3) required by in-area generation.
pub fn cooling_water_m3(generation_gwh: &[f64], catalog: &PlantCatalog) -> f64 {
    generation_gwh
        .iter()
        .zip(&catalog.plants)
        .filter(|(_, p)| p.in_area)
        .map(|(g, p)| g * p.water_factor_m3_per_gwh)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::YearMonth;

    fn plant(id: &str, fuel: Fuel, capacity_mw: f64, rank: u32, ef: f64) -> Plant {
        Plant {
            id: id.into(),
            label: id.into(),
            in_area: true,
            fuel,
            capacity_mw,
            merit_rank: rank,
            emission_factor_t_per_gwh: ef,
            water_factor_m3_per_gwh: 0.0,
        }
    }

    fn sector(id: EnergySectorId) -> EnergySector {
        EnergySector {
            id,
            activity: Activity::Population { share: 1.0 },
            intensity_gwh_per_unit: 2e-4,
            monthly_profile: [1.0; 12],
        }
    }

    #[test]
    fn eue_scales_residential_only() {
        let r = sector(EnergySectorId::Residential);
        let c = sector(EnergySectorId::Commercial);
        assert_eq!(sector_demand(&r, 1e6, 0, 0.0), 200.0);
        assert!((sector_demand(&r, 1e6, 0, 20.0) - 160.0).abs() < 1e-9);
        assert_eq!(sector_demand(&c, 1e6, 0, 20.0), 200.0);
        assert_eq!(sector_demand(&r, 0.0, 0, 0.0), 0.0);
    }

    #[test]
    fn wwtp_unit_conversion() {
        let a = AllocationMatrix {
            month: YearMonth::new(2022, 1),
            delivered: vec![vec![1e6]],
            unmet: vec![0.0],
            demand: vec![1e6],
        };
        assert_eq!(water_infrastructure_demand(&a, &[0.5]), 0.5);
        let zero = AllocationMatrix {
            delivered: vec![vec![0.0]],
            ..a
        };
        assert_eq!(water_infrastructure_demand(&zero, &[0.5]), 0.0);
    }

    #[test]
    fn dispatch_zero_demand() {
        let cat = PlantCatalog {
            plants: vec![plant("a", Fuel::Coal, 100.0, 1, 1000.0)],
        };
        let d = dispatch(&cat, 0.0, 0.05, 0.15, 0.55, 720.0);
        assert_eq!(d.generation_gwh, vec![0.0]);
        assert_eq!(d.unserved_gwh, 0.0);
        assert!(d.reserve_ok);
    }

    #[test]
    fn dispatch_hand_example() {
        // 720 h month; 60 GWh capability = 83.33 MW
        let cat = PlantCatalog {
            plants: vec![
                plant("b", Fuel::NaturalGas, 1000.0, 2, 400.0),
                plant("a", Fuel::Coal, 60.0 * 1000.0 / 720.0, 1, 1000.0),
            ],
        };
        let d = dispatch(&cat, 100.0, 0.05, 0.15, 0.55, 720.0);
        assert!((d.gross_gwh - 105.263_157_894_736_84).abs() < 1e-12);
        assert!((d.generation_gwh[1] - 60.0).abs() < 1e-12);
        assert!((d.generation_gwh[0] - 45.263_157_894_736_84).abs() < 1e-9);
        assert_eq!(d.unserved_gwh, 0.0);
    }

    #[test]
    fn dispatch_exhausted_capability() {
        let cat = PlantCatalog {
            plants: vec![plant("a", Fuel::Coal, 50.0 * 1000.0 / 720.0, 1, 1000.0)],
        };
        let d = dispatch(&cat, 100.0, 0.05, 0.15, 0.55, 720.0);
        assert!((d.generation_gwh[0] - 50.0).abs() < 1e-12);
        assert!((d.unserved_gwh - (100.0 / 0.95 - 50.0)).abs() < 1e-9);
        assert!(!d.reserve_ok);
    }

    #[test]
    fn emission_totals() {
        let cat = PlantCatalog {
            plants: vec![
                plant("coal", Fuel::Coal, 10.0, 1, 1000.0),
                plant("pv", Fuel::Solar, 10.0, 2, 0.0),
                plant("gas", Fuel::NaturalGas, 10.0, 3, 400.0),
            ],
        };
        let (per, total) = emissions(&[10.0, 5.0, 2.5], &cat);
        assert_eq!(per, vec![10000.0, 0.0, 1000.0]);
        assert_eq!(total, per.iter().sum::<f64>());
        let (_, zero) = emissions(&[0.0, 7.0, 0.0], &cat);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn cooling_water_ignores_out_of_area() {
        let mut a = plant("a", Fuel::Uranium, 10.0, 1, 0.0);
        a.water_factor_m3_per_gwh = 2000.0;
        let mut b = a.clone();
        b.id = "b".into();
        b.merit_rank = 2;
        b.in_area = false;
        let cat = PlantCatalog { plants: vec![a, b] };
        assert_eq!(cooling_water_m3(&[10.0, 10.0], &cat), 20000.0);
        assert_eq!(cooling_water_m3(&[0.0, 0.0], &cat), 0.0);
    }

    #[test]
    fn catalog_validation() {
        let mut cat = PlantCatalog {
            plants: vec![
                plant("a", Fuel::Coal, 10.0, 1, 1000.0),
                plant("b", Fuel::Solar, 10.0, 1, 0.0),
            ],
        };
        assert!(cat.validate().is_err());
        cat.plants[1].merit_rank = 2;
        assert!(cat.validate().is_ok());
        cat.plants[1].emission_factor_t_per_gwh = 5.0;
        assert!(cat.validate().is_err());
        cat.plants[1].emission_factor_t_per_gwh = 0.0;
        cat.plants[0].capacity_mw = 0.0;
        assert!(cat.validate().is_err());
    }
}
