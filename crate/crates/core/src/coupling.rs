//! Scenario execution: food, then water, then energy each month, exchanging
//! power-plant cooling water and water-infrastructure electricity.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dataset::{StudyAreaDataset, POPULATION, PRECIP, TMEAN};
use crate::energy::{self, Dispatch, EnergySectorId};
use crate::error::{CoreError, Result};
use crate::fmlm::{self, FitOptions, FmlmCoefficients};
use crate::registry;
use crate::scenario::{
    CouplingDiagnostics, DemandTag, FlowSeries, Levers, PlantTag, Resource, ResultMetadata,
    ScenarioResult, ScenarioSpec, SourceTag, VariableSeries,
};
use crate::series::YearMonth;
use crate::units::{SeriesKind, Unit};
use crate::water::{
    self, AllocationMatrix, Allocator, Availability, DemandDriver, DemandSector, SourceKind,
};

/// The two quantities exchanged between the water and energy models.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Links {
    pub power_plant_water_m3: f64,
    pub water_infrastructure_gwh: f64,
}

impl Links {
    /// Largest relative change of either link, scaled by `max(|previous|, 1)`.
    pub fn residual(&self, previous: &Links) -> f64 {
        let rel = |new: f64, old: f64| (new - old).abs() / old.abs().max(1.0);
        rel(self.power_plant_water_m3, previous.power_plant_water_m3).max(rel(
            self.water_infrastructure_gwh,
            previous.water_infrastructure_gwh,
        ))
    }
}

/// Everything computed for one evaluation of a month.
#[derive(Debug, Clone)]
pub struct MonthOutcome {
    pub demand: Vec<f64>,
    pub availability: Vec<Option<f64>>,
    pub allocation: AllocationMatrix,
    pub infrastructure_gwh: Vec<f64>,
    pub sector_gwh: Vec<f64>,
    pub net_gwh: f64,
    pub dispatch: Dispatch,
}

#[derive(Debug, Clone)]
pub struct Coupled {
    pub outcome: MonthOutcome,
    /// Links produced by the committed evaluation; seeds the next month.
    pub links: Links,
    pub iterations: u32,
    pub residual: f64,
    pub warning: bool,
}

pub type Evaluate<'a> = dyn FnMut(Links) -> (MonthOutcome, Links) + 'a;

/// How a month's evaluations are repeated before the month is committed.
pub trait CouplingScheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn couple(
        &self,
        carried: Links,
        max_iterations: u32,
        tolerance: f64,
        evaluate: &mut Evaluate<'_>,
    ) -> Coupled;
}

/// Re-evaluates the month with the latest links until they stop moving.
#[derive(Debug, Default, Clone, Copy)]
pub struct FixedPoint;

impl CouplingScheme for FixedPoint {
    fn name(&self) -> &'static str {
        "fixed-point"
    }

    fn couple(
        &self,
        carried: Links,
        max_iterations: u32,
        tolerance: f64,
        evaluate: &mut Evaluate<'_>,
    ) -> Coupled {
        let mut input = carried;
        let max_iterations = max_iterations.max(1);
        let mut k = 1;
        loop {
            let (outcome, next) = evaluate(input);
            let residual = next.residual(&input);
            if residual < tolerance || k == max_iterations {
                return Coupled {
                    outcome,
                    links: next,
                    iterations: k,
                    residual,
                    warning: residual >= tolerance,
                };
            }
            input = next;
            k += 1;
        }
    }
}

/// Evaluates each month once with the links carried from the previous month.
#[derive(Debug, Default, Clone, Copy)]
pub struct SinglePass;

impl CouplingScheme for SinglePass {
    fn name(&self) -> &'static str {
        "single-pass"
    }

    fn couple(
        &self,
        carried: Links,
        _max_iterations: u32,
        _tolerance: f64,
        evaluate: &mut Evaluate<'_>,
    ) -> Coupled {
        let (outcome, next) = evaluate(carried);
        Coupled {
            outcome,
            residual: next.residual(&carried),
            links: next,
            iterations: 1,
            warning: false,
        }
    }
}

/// Crop-share coefficients plus whether they came from a flagged fit.
#[derive(Debug, Clone)]
pub struct ShareModel {
    pub coefficients: FmlmCoefficients,
    pub warning: bool,
}

pub trait CropShareSource: Send + Sync {
    fn name(&self) -> &'static str;
    fn model(&self, dataset: &StudyAreaDataset) -> Result<ShareModel>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Prefitted;

impl CropShareSource for Prefitted {
    fn name(&self) -> &'static str {
        "prefitted"
    }

    fn model(&self, dataset: &StudyAreaDataset) -> Result<ShareModel> {
        Ok(ShareModel {
            coefficients: dataset.fmlm.clone(),
            warning: false,
        })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FitOnCreate;

impl CropShareSource for FitOnCreate {
    fn name(&self) -> &'static str {
        "fit-on-create"
    }

    fn model(&self, dataset: &StudyAreaDataset) -> Result<ShareModel> {
        let report = fmlm::fmlm_fit(&dataset.share_panel, &FitOptions::default())?;
        let warning = report.warning();
        Ok(ShareModel {
            coefficients: report.coefficients,
            warning,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub coupling: String,
    /// Shorthand for `coupling = "single-pass"`.
    pub single_pass: bool,
    pub allocator: String,
    pub crop_shares: String,
    pub max_iterations: u32,
    pub tolerance: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            coupling: "fixed-point".into(),
            single_pass: false,
            allocator: "priority-greedy".into(),
            crop_shares: "prefitted".into(),
            max_iterations: 10,
            tolerance: 1e-6,
        }
    }
}

impl EngineConfig {
    pub fn scheme_name(&self) -> &str {
        if self.single_pass {
            "single-pass"
        } else {
            &self.coupling
        }
    }
}

/// Runs scenarios against one dataset. Cheap to share between threads.
pub struct Engine {
    dataset: Arc<StudyAreaDataset>,
    config: EngineConfig,
    scheme: Box<dyn CouplingScheme>,
    allocator: Box<dyn Allocator>,
    shares: ShareModel,
    crop_share_source: &'static str,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("dataset", &self.dataset.name)
            .field("config", &self.config)
            .finish()
    }
}

/// Per-month quantities that do not depend on the links.
struct MonthInputs {
    at: YearMonth,
    base_demand: Vec<f64>,
    sector_gwh: Vec<f64>,
    hours: f64,
}

/// Per-year crop state of one district.
struct DistrictYear {
    areas: Vec<f64>,
    /// requirement[crop][month], net m3
    requirement: Vec<[f64; 12]>,
}

impl Engine {
    pub fn new(dataset: Arc<StudyAreaDataset>, config: EngineConfig) -> Result<Engine> {
        let scheme = registry::coupling_schemes().create(config.scheme_name())?;
        let allocator = registry::allocators().create(&config.allocator)?;
        let source = registry::crop_share_sources().create(&config.crop_shares)?;
        if !(config.tolerance > 0.0 && config.tolerance.is_finite()) || config.max_iterations == 0 {
            return Err(CoreError::schema(
                "engine",
                "tolerance must be positive and max_iterations at least 1",
            ));
        }
        let shares = source.model(&dataset)?;
        Ok(Engine {
            dataset,
            config,
            scheme,
            allocator,
            crop_share_source: source.name(),
            shares,
        })
    }

    pub fn dataset(&self) -> &Arc<StudyAreaDataset> {
        &self.dataset
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &FmlmCoefficients {
        &self.shares.coefficients
    }

    /// Runs the coupled models over the full horizon.
    pub fn run(&self, spec: &ScenarioSpec) -> Result<ScenarioResult> {
        self.execute(spec, false)
    }

    /// Runs the water and energy models with both links held at zero.
    pub fn run_standalone(&self, spec: &ScenarioSpec) -> Result<ScenarioResult> {
        self.execute(spec, true)
    }

    fn execute(&self, spec: &ScenarioSpec, standalone: bool) -> Result<ScenarioResult> {
        let ds = &*self.dataset;
        let climate = ds.climate(&spec.climate_file)?;
        let levers = Levers::resolve(&ds.water, &ds.energy, &spec.deltas)?;
        let intensities: Vec<f64> = ds
            .water
            .sources
            .iter()
            .map(|s| {
                ds.energy
                    .demand
                    .water_infrastructure_kwh_per_m3
                    .get(&s.id)
                    .copied()
                    .unwrap_or(0.0)
            })
            .collect();
        let district_node: Vec<usize> = ds
            .districts
            .iter()
            .map(|d| {
                ds.water
                    .demands
                    .iter()
                    .position(|n| n.driver == DemandDriver::Irrigation { district: d.id.clone() })
                    .expect("validated")
            })
            .collect();
        let link_node = ds
            .water
            .demands
            .iter()
            .position(|n| n.driver == DemandDriver::PowerPlantLink);

        let mut rec = Recorder::new(ds, ds.horizon.len_months());
        let mut diagnostics = CouplingDiagnostics {
            scheme: if standalone {
                "standalone".into()
            } else {
                self.scheme.name().into()
            },
            allocator: self.allocator.name().into(),
            crop_shares: self.crop_share_source.into(),
            fmlm_warning: self.shares.warning,
            ..Default::default()
        };
        let mut carried = Links::default();
        let mut m_index = 0usize;

        for year in ds.horizon.start_year..=ds.horizon.end_year {
            let x = climate.fmlm_predictors(&ds.crops, year)?;
            let shares = fmlm::fmlm_predict(&self.shares.coefficients, &x)?;
            let yield_index: Vec<f64> = ds
                .crops
                .iter()
                .map(|c| climate.annual_mean(&crate::dataset::yield_column(&c.id), year))
                .collect::<Result<_>>()?;

            let mut et0 = [0.0; 12];
            let mut peff = [0.0; 12];
            for m in 0..12 {
                let at = YearMonth::new(year, m as u32 + 1);
                et0[m] = water::hargreaves_et0_mm(&ds.et0, at, climate.value(TMEAN, at)?);
                peff[m] = climate.value(PRECIP, at)? * ds.et0.effective_precip_fraction;
            }
            let districts: Vec<DistrictYear> = ds
                .districts
                .iter()
                .map(|d| {
                    let areas = fmlm::project_crop_areas(&shares, &ds.allowed_crops(&d.id), d.cropland_ha);
                    let requirement = ds
                        .crops
                        .iter()
                        .zip(&areas)
                        .map(|(c, a)| {
                            let mut r = [0.0; 12];
                            for m in 0..12 {
                                r[m] = a * water::net_requirement_m3_per_ha(c.kc[m], et0[m], peff[m]);
                            }
                            r
                        })
                        .collect();
                    DistrictYear { areas, requirement }
                })
                .collect();

            for m in 0..12 {
                let at = YearMonth::new(year, m as u32 + 1);
                let population = climate.value(POPULATION, at)?;
                let mut base_demand = vec![0.0; ds.water.demands.len()];
                for (i, node) in ds.water.demands.iter().enumerate() {
                    base_demand[i] = match &node.driver {
                        DemandDriver::PerCapita {
                            m3_per_person_month,
                            population_share,
                            monthly_profile,
                        } => {
                            let wue = if node.sector == DemandSector::Municipal {
                                levers.wue_pct
                            } else {
                                0.0
                            };
                            water::municipal_demand(
                                population * population_share,
                                m3_per_person_month * monthly_profile[m],
                                wue,
                            )
                        }
                        DemandDriver::Irrigation { .. } => {
                            let k = district_node.iter().position(|&n| n == i).expect("validated");
                            let net: f64 = districts[k].requirement.iter().map(|r| r[m]).sum();
                            water::gross_irrigation_m3(net, ds.districts[k].base_efficiency, levers.ie_pct)
                        }
                        DemandDriver::PowerPlantLink => 0.0,
                        DemandDriver::Fixed { m3 } => m3[m],
                    };
                }
                let sector_gwh: Vec<f64> = ds
                    .energy
                    .demand
                    .sectors
                    .iter()
                    .map(|s| energy::sector_demand(s, population, m, levers.eue_pct) * levers.sector_factor(s.id))
                    .collect();
                let inputs = MonthInputs {
                    at,
                    base_demand,
                    sector_gwh,
                    hours: at.hours(),
                };

                let mut evaluate = |links: Links| -> (MonthOutcome, Links) {
                    self.evaluate(&inputs, links, link_node, &levers, &intensities, climate, standalone)
                };
                let coupled = if standalone {
                    SinglePass.couple(Links::default(), 1, self.config.tolerance, &mut evaluate)
                } else {
                    self.scheme.couple(
                        carried,
                        self.config.max_iterations,
                        self.config.tolerance,
                        &mut evaluate,
                    )
                };
                rec.record_month(ds, m_index, m, &coupled.outcome, &districts, &yield_index, &district_node, &intensities);
                diagnostics.iterations.push(coupled.iterations);
                diagnostics.residuals.push(coupled.residual);
                diagnostics.power_plant_water_m3.push(coupled.links.power_plant_water_m3);
                diagnostics.water_infrastructure_gwh.push(coupled.links.water_infrastructure_gwh);
                diagnostics.warning |= coupled.warning;
                carried = if standalone { Links::default() } else { coupled.links };
                m_index += 1;
            }
        }

        let (branches, flows) = rec.finish();
        Ok(ScenarioResult {
            scenario: spec.clone(),
            horizon: ds.horizon,
            branches,
            flows,
            metadata: metadata(ds),
            diagnostics,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        inputs: &MonthInputs,
        links: Links,
        link_node: Option<usize>,
        levers: &Levers,
        intensities: &[f64],
        climate: &crate::dataset::ClimateFile,
        standalone: bool,
    ) -> (MonthOutcome, Links) {
        let ds = &*self.dataset;
        let mut demand = inputs.base_demand.clone();
        if let Some(i) = link_node {
            demand[i] = if standalone { 0.0 } else { links.power_plant_water_m3 };
        }
        let availability: Vec<Option<f64>> = ds
            .water
            .sources
            .iter()
            .enumerate()
            .map(|(s, src)| match &src.availability {
                Availability::Climate { column } => Some(
                    climate.value(column, inputs.at).unwrap_or(0.0) * levers.availability_factor[s],
                ),
                Availability::ReturnFlow { fraction, of } => Some(
                    fraction
                        * of.iter()
                            .filter_map(|id| ds.water.demand_index(id))
                            .map(|d| demand[d])
                            .sum::<f64>(),
                ),
                Availability::Residual { monthly_cap_m3 } => *monthly_cap_m3,
            })
            .collect();
        let allocation = self.allocator.allocate(&ds.water, &demand, &availability, inputs.at);
        let infrastructure_gwh = energy::water_infrastructure_demand_by_source(&allocation, intensities);
        let infra_total: f64 = infrastructure_gwh.iter().sum();
        let net_gwh = inputs.sector_gwh.iter().sum::<f64>() + if standalone { 0.0 } else { infra_total };
        let dispatch = energy::dispatch(
            &ds.energy.catalog,
            net_gwh,
            ds.energy.loss_fraction,
            ds.energy.reserve_margin,
            ds.energy.load_factor,
            inputs.hours,
        );
        let next = Links {
            power_plant_water_m3: energy::cooling_water_m3(&dispatch.generation_gwh, &ds.energy.catalog),
            water_infrastructure_gwh: infra_total,
        };
        (
            MonthOutcome {
                demand,
                availability,
                allocation,
                infrastructure_gwh,
                sector_gwh: inputs.sector_gwh.clone(),
                net_gwh,
                dispatch,
            },
            next,
        )
    }
}

fn metadata(ds: &StudyAreaDataset) -> ResultMetadata {
    ResultMetadata {
        sources: ds
            .water
            .sources
            .iter()
            .map(|s| SourceTag {
                path: format!("water/supply/{}", s.id),
                kind: s.kind,
            })
            .collect(),
        demands: ds
            .water
            .demands
            .iter()
            .map(|d| DemandTag {
                path: d.branch_path(),
                sector: d.sector,
                district: matches!(d.driver, DemandDriver::Irrigation { .. }),
            })
            .collect(),
        plants: ds
            .energy
            .catalog
            .plants
            .iter()
            .map(|p| PlantTag {
                path: p.branch_path(),
                fuel: p.fuel,
                in_area: p.in_area,
            })
            .collect(),
    }
}

type Slot = usize;

struct Slots {
    src_delivered: Vec<Slot>,
    src_available: Vec<Option<Slot>>,
    dem_demand: Vec<Slot>,
    dem_delivered: Vec<Slot>,
    dem_unmet: Vec<Slot>,
    /// Aggregates for sector nodes that have child demand nodes.
    sector_agg: Vec<(DemandSector, [Slot; 3])>,
    water_total: [Slot; 3],
    supply_total: Slot,
    water_root: Slot,
    water_flow: Vec<Vec<Option<Slot>>>,

    district_cropland: Vec<Slot>,
    district_requirement: Vec<Slot>,
    district_production: Vec<Slot>,
    district_crop: Vec<Vec<Option<(Slot, Slot)>>>,
    crop_area: Vec<Slot>,
    crop_production: Vec<Slot>,
    food_root: Slot,
    irrigation_flow: Vec<Slot>,
    crop_flow: Vec<Vec<Option<Slot>>>,

    sector_demand: Vec<(EnergySectorId, Slot)>,
    industrial_process: Option<Slot>,
    infra_total: Slot,
    ag_pumping: Slot,
    infra_source: Vec<Slot>,
    infra_flow: Vec<Slot>,
    net: Slot,
    gross: Slot,
    unserved: Slot,
    reserve_ok: Slot,
    plant_generation: Vec<Slot>,
    plant_emissions: Vec<Slot>,
    plant_cooling: Vec<Option<(Slot, Slot)>>,
    area_generation: [Slot; 2],
    area_emissions: [Slot; 2],
    supply_generation: Slot,
    supply_emissions: Slot,
    energy_root: Slot,
    plant_flow: Vec<Slot>,
}

/// Preallocated output series, addressed by slot.
struct Recorder {
    months: usize,
    vars: Vec<(String, VariableSeries)>,
    flows: Vec<FlowSeries>,
    slots: Option<Slots>,
}

impl Recorder {
    fn new(ds: &StudyAreaDataset, months: usize) -> Recorder {
        let mut r = Recorder {
            months,
            vars: Vec::new(),
            flows: Vec::new(),
            slots: None,
        };
        let slots = r.layout(ds);
        r.slots = Some(slots);
        r
    }

    fn var(&mut self, branch: &str, name: &str, unit: Unit, kind: SeriesKind) -> Slot {
        self.vars.push((
            branch.to_string(),
            VariableSeries {
                name: name.to_string(),
                unit,
                kind,
                values: vec![0.0; self.months],
            },
        ));
        self.vars.len() - 1
    }

    fn flow(&mut self, from: &str, to: &str, resource: Resource, unit: Unit) -> Slot {
        self.flows.push(FlowSeries {
            from: from.to_string(),
            to: to.to_string(),
            resource,
            unit,
            values: vec![0.0; self.months],
        });
        self.flows.len() - 1
    }

    fn layout(&mut self, ds: &StudyAreaDataset) -> Slots {
        use SeriesKind::{Flow, Share, Stock};
        use Unit::{GwhPerMonth as Gwh, Hectare as Ha, M3PerMonth as M3, TCo2PerMonth as Tco2, Tonne};
        let w = &ds.water;

        let mut src_delivered = Vec::new();
        let mut src_available = Vec::new();
        for s in &w.sources {
            let path = format!("water/supply/{}", s.id);
            src_delivered.push(self.var(&path, "delivered", M3, Flow));
            let capped = !matches!(s.availability, Availability::Residual { monthly_cap_m3: None });
            src_available.push(capped.then(|| self.var(&path, "availability", M3, Flow)));
        }
        let mut dem_demand = Vec::new();
        let mut dem_delivered = Vec::new();
        let mut dem_unmet = Vec::new();
        for d in &w.demands {
            let path = d.branch_path();
            dem_delivered.push(self.var(&path, "delivered", M3, Flow));
            dem_demand.push(self.var(&path, "demand", M3, Flow));
            dem_unmet.push(self.var(&path, "unmet", M3, Flow));
        }
        let mut sector_agg = Vec::new();
        for sector in DemandSector::ALL {
            let path = format!("water/demand/{}", sector.slug());
            let has_children = w.demands.iter().any(|d| d.sector == sector && d.branch_path() != path);
            if has_children {
                sector_agg.push((
                    sector,
                    [
                        self.var(&path, "delivered", M3, Flow),
                        self.var(&path, "demand", M3, Flow),
                        self.var(&path, "unmet", M3, Flow),
                    ],
                ));
            }
        }
        let water_total = [
            self.var("water/demand", "delivered", M3, Flow),
            self.var("water/demand", "demand", M3, Flow),
            self.var("water/demand", "unmet", M3, Flow),
        ];
        let supply_total = self.var("water/supply", "delivered", M3, Flow);
        let water_root = self.var("water", "delivered", M3, Flow);
        let mut water_flow = vec![vec![None; w.demands.len()]; w.sources.len()];
        for (d, node) in w.demands.iter().enumerate() {
            for s in w.preference_indices(d) {
                let from = format!("water/supply/{}", w.sources[s].id);
                water_flow[s][d] = Some(self.flow(&from, &node.branch_path(), Resource::Water, M3));
            }
        }

        let mut district_cropland = Vec::new();
        let mut district_requirement = Vec::new();
        let mut district_production = Vec::new();
        let mut district_crop = Vec::new();
        let mut irrigation_flow = Vec::new();
        let mut crop_flow = Vec::new();
        for d in &ds.districts {
            let path = format!("food/districts/{}", d.id);
            district_production.push(self.var(&path, "production", Tonne, Flow));
            district_cropland.push(self.var(&path, "cropland", Ha, Stock));
            district_requirement.push(self.var(&path, "irrigation_requirement", M3, Flow));
            let node = w
                .demands
                .iter()
                .find(|n| n.driver == DemandDriver::Irrigation { district: d.id.clone() })
                .expect("validated");
            irrigation_flow.push(self.flow(&node.branch_path(), &path, Resource::Water, M3));
            let mut per_crop = Vec::new();
            let mut flows = Vec::new();
            for c in &ds.crops {
                if c.allowed_in(&d.id) {
                    let cp = format!("{path}/{}", c.id);
                    let prod = self.var(&cp, "production", Tonne, Flow);
                    let area = self.var(&cp, "area", Ha, Stock);
                    per_crop.push(Some((area, prod)));
                    flows.push(Some(self.flow(&path, &format!("food/crops/{}", c.id), Resource::Crop, Tonne)));
                } else {
                    per_crop.push(None);
                    flows.push(None);
                }
            }
            district_crop.push(per_crop);
            crop_flow.push(flows);
        }
        let mut crop_area = Vec::new();
        let mut crop_production = Vec::new();
        for c in &ds.crops {
            let path = format!("food/crops/{}", c.id);
            crop_production.push(self.var(&path, "production", Tonne, Flow));
            crop_area.push(self.var(&path, "area", Ha, Stock));
        }
        let food_root = self.var("food", "production", Tonne, Flow);

        let mut sector_demand = Vec::new();
        let mut industrial_process = None;
        for s in &ds.energy.demand.sectors {
            let path = format!("energy/demand/{}", s.id.slug());
            sector_demand.push((s.id, self.var(&path, "demand", Gwh, Flow)));
            if s.id == EnergySectorId::Industrial {
                industrial_process = Some(self.var(&path, "process_demand", Gwh, Flow));
            }
        }
        let infra = "energy/demand/industrial/water_infrastructure";
        let infra_total = self.var(infra, "demand", Gwh, Flow);
        let ag_pumping = self.var(infra, "ag_pumping_energy", Gwh, Flow);
        let mut infra_source = Vec::new();
        let mut infra_flow = Vec::new();
        for s in &w.sources {
            let path = format!("{infra}/{}", s.id);
            infra_source.push(self.var(&path, "demand", Gwh, Flow));
            infra_flow.push(self.flow(&path, &format!("water/supply/{}", s.id), Resource::Electricity, Gwh));
        }
        let net = self.var("energy/demand", "net_demand", Gwh, Flow);
        let gross = self.var("energy/demand", "gross_demand", Gwh, Flow);
        let unserved = self.var("energy/demand", "unserved", Gwh, Flow);
        let reserve_ok = self.var("energy/demand", "reserve_ok", Unit::Dimensionless, Share);

        let pp_path = w
            .demands
            .iter()
            .find(|n| n.driver == DemandDriver::PowerPlantLink)
            .map(|n| n.branch_path());
        let mut plant_generation = Vec::new();
        let mut plant_emissions = Vec::new();
        let mut plant_cooling = Vec::new();
        let mut plant_flow = Vec::new();
        for p in &ds.energy.catalog.plants {
            let path = p.branch_path();
            plant_generation.push(self.var(&path, "generation", Gwh, Flow));
            plant_emissions.push(self.var(&path, "emissions", Tco2, Flow));
            plant_cooling.push(match (&pp_path, p.in_area) {
                (Some(pp), true) => Some((
                    self.var(&path, "cooling_water", M3, Flow),
                    self.flow(pp, &path, Resource::Water, M3),
                )),
                _ => None,
            });
            plant_flow.push(self.flow(&path, "energy/demand", Resource::Electricity, Gwh));
        }
        let area_generation = [
            self.var("energy/supply/in_area", "generation", Gwh, Flow),
            self.var("energy/supply/out_of_area", "generation", Gwh, Flow),
        ];
        let area_emissions = [
            self.var("energy/supply/in_area", "emissions", Tco2, Flow),
            self.var("energy/supply/out_of_area", "emissions", Tco2, Flow),
        ];
        let supply_generation = self.var("energy/supply", "generation", Gwh, Flow);
        let supply_emissions = self.var("energy/supply", "emissions", Tco2, Flow);
        let energy_root = self.var("energy", "generation", Gwh, Flow);

        Slots {
            src_delivered,
            src_available,
            dem_demand,
            dem_delivered,
            dem_unmet,
            sector_agg,
            water_total,
            supply_total,
            water_root,
            water_flow,
            district_cropland,
            district_requirement,
            district_production,
            district_crop,
            crop_area,
            crop_production,
            food_root,
            irrigation_flow,
            crop_flow,
            sector_demand,
            industrial_process,
            infra_total,
            ag_pumping,
            infra_source,
            infra_flow,
            net,
            gross,
            unserved,
            reserve_ok,
            plant_generation,
            plant_emissions,
            plant_cooling,
            area_generation,
            area_emissions,
            supply_generation,
            supply_emissions,
            energy_root,
            plant_flow,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record_month(
        &mut self,
        ds: &StudyAreaDataset,
        t: usize,
        m: usize,
        out: &MonthOutcome,
        districts: &[DistrictYear],
        yield_index: &[f64],
        district_node: &[usize],
        intensities: &[f64],
    ) {
        let slots = self.slots.take().expect("layout");
        let w = &ds.water;
        let a = &out.allocation;
        let set = |vars: &mut Vec<(String, VariableSeries)>, slot: Slot, v: f64| vars[slot].1.values[t] = v;
        let vars = &mut self.vars;
        let flows = &mut self.flows;

        for s in 0..w.sources.len() {
            set(vars, slots.src_delivered[s], a.source_total(s));
            if let (Some(slot), Some(v)) = (slots.src_available[s], out.availability[s]) {
                set(vars, slot, v);
            }
        }
        let mut totals = [0.0; 3];
        let mut sector_totals = vec![[0.0; 3]; slots.sector_agg.len()];
        for d in 0..w.demands.len() {
            let vals = [a.demand_delivered(d), a.demand[d], a.unmet[d]];
            set(vars, slots.dem_delivered[d], vals[0]);
            set(vars, slots.dem_demand[d], vals[1]);
            set(vars, slots.dem_unmet[d], vals[2]);
            for k in 0..3 {
                totals[k] += vals[k];
            }
            if let Some(i) = slots.sector_agg.iter().position(|(s, _)| *s == w.demands[d].sector) {
                for k in 0..3 {
                    sector_totals[i][k] += vals[k];
                }
            }
            for s in 0..w.sources.len() {
                if let Some(f) = slots.water_flow[s][d] {
                    flows[f].values[t] = a.delivered[s][d];
                }
            }
        }
        for (i, (_, agg)) in slots.sector_agg.iter().enumerate() {
            for k in 0..3 {
                set(vars, agg[k], sector_totals[i][k]);
            }
        }
        for k in 0..3 {
            set(vars, slots.water_total[k], totals[k]);
        }
        let delivered_total = a.total_delivered();
        set(vars, slots.supply_total, delivered_total);
        set(vars, slots.water_root, delivered_total);

        let mut crop_area = vec![0.0; ds.crops.len()];
        let mut crop_prod = vec![0.0; ds.crops.len()];
        let mut food_total = 0.0;
        for (k, dy) in districts.iter().enumerate() {
            let node = district_node[k];
            let unmet_frac = if a.demand[node] > 0.0 {
                (a.unmet[node] / a.demand[node]).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut district_prod = 0.0;
            let mut district_req = 0.0;
            for (c, crop) in ds.crops.iter().enumerate() {
                district_req += dy.requirement[c][m];
                let potential = dy.areas[c] * crop.base_yield_t_per_ha * yield_index[c];
                let prod = potential * water::monthly_production_share(&dy.requirement[c], m, unmet_frac);
                if let Some((area_slot, prod_slot)) = slots.district_crop[k][c] {
                    set(vars, area_slot, dy.areas[c]);
                    set(vars, prod_slot, prod);
                }
                if let Some(f) = slots.crop_flow[k][c] {
                    flows[f].values[t] = prod;
                }
                crop_area[c] += dy.areas[c];
                crop_prod[c] += prod;
                district_prod += prod;
            }
            set(vars, slots.district_cropland[k], ds.districts[k].cropland_ha);
            set(vars, slots.district_requirement[k], district_req);
            set(vars, slots.district_production[k], district_prod);
            flows[slots.irrigation_flow[k]].values[t] = a.demand_delivered(node);
            food_total += district_prod;
        }
        for c in 0..ds.crops.len() {
            set(vars, slots.crop_area[c], crop_area[c]);
            set(vars, slots.crop_production[c], crop_prod[c]);
        }
        set(vars, slots.food_root, food_total);

        let infra_total: f64 = out.infrastructure_gwh.iter().sum();
        for (i, (id, slot)) in slots.sector_demand.iter().enumerate() {
            let v = if *id == EnergySectorId::Industrial {
                out.sector_gwh[i] + infra_total
            } else {
                out.sector_gwh[i]
            };
            set(vars, *slot, v);
            if *id == EnergySectorId::Industrial {
                if let Some(p) = slots.industrial_process {
                    set(vars, p, out.sector_gwh[i]);
                }
            }
        }
        set(vars, slots.infra_total, infra_total);
        let mut ag_pumping = 0.0;
        for (s, src) in w.sources.iter().enumerate() {
            set(vars, slots.infra_source[s], out.infrastructure_gwh[s]);
            flows[slots.infra_flow[s]].values[t] = out.infrastructure_gwh[s];
            if src.kind == SourceKind::Groundwater {
                let ag: f64 = (0..w.demands.len())
                    .filter(|&d| w.demands[d].sector == DemandSector::Agricultural)
                    .map(|d| a.delivered[s][d])
                    .sum();
                ag_pumping += crate::units::energy_gwh(ag, intensities[s]);
            }
        }
        set(vars, slots.ag_pumping, ag_pumping);
        let disp = &out.dispatch;
        set(vars, slots.net, out.net_gwh);
        set(vars, slots.gross, disp.gross_gwh);
        set(vars, slots.unserved, disp.unserved_gwh);
        set(vars, slots.reserve_ok, if disp.reserve_ok { 1.0 } else { 0.0 });

        let catalog = &ds.energy.catalog;
        let (per_plant_em, total_em) = energy::emissions(&disp.generation_gwh, catalog);
        let cooling_required: Vec<f64> = catalog
            .plants
            .iter()
            .zip(&disp.generation_gwh)
            .map(|(p, g)| if p.in_area { g * p.water_factor_m3_per_gwh } else { 0.0 })
            .collect();
        let cooling_total: f64 = cooling_required.iter().sum();
        let pp_delivered = w
            .demands
            .iter()
            .position(|n| n.driver == DemandDriver::PowerPlantLink)
            .map(|d| a.demand_delivered(d))
            .unwrap_or(0.0);
        let mut area_gen = [0.0; 2];
        let mut area_em = [0.0; 2];
        for (p, plant) in catalog.plants.iter().enumerate() {
            let g = disp.generation_gwh[p];
            set(vars, slots.plant_generation[p], g);
            set(vars, slots.plant_emissions[p], per_plant_em[p]);
            flows[slots.plant_flow[p]].values[t] = g;
            if let Some((cool, flow)) = slots.plant_cooling[p] {
                set(vars, cool, cooling_required[p]);
                flows[flow].values[t] = if cooling_total > 0.0 {
                    pp_delivered * cooling_required[p] / cooling_total
                } else {
                    0.0
                };
            }
            let k = if plant.in_area { 0 } else { 1 };
            area_gen[k] += g;
            area_em[k] += per_plant_em[p];
        }
        for k in 0..2 {
            set(vars, slots.area_generation[k], area_gen[k]);
            set(vars, slots.area_emissions[k], area_em[k]);
        }
        let gen_total: f64 = disp.generation_gwh.iter().sum();
        set(vars, slots.supply_generation, gen_total);
        set(vars, slots.supply_emissions, total_em);
        set(vars, slots.energy_root, gen_total);

        self.slots = Some(slots);
    }

    fn finish(self) -> (std::collections::BTreeMap<String, Vec<VariableSeries>>, Vec<FlowSeries>) {
        let mut branches: std::collections::BTreeMap<String, Vec<VariableSeries>> = Default::default();
        for (branch, var) in self.vars {
            branches.entry(branch).or_default().push(var);
        }
        (branches, self.flows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome_stub() -> MonthOutcome {
        MonthOutcome {
            demand: vec![],
            availability: vec![],
            allocation: AllocationMatrix {
                month: YearMonth::new(2022, 1),
                delivered: vec![],
                unmet: vec![],
                demand: vec![],
            },
            infrastructure_gwh: vec![],
            sector_gwh: vec![],
            net_gwh: 0.0,
            dispatch: Dispatch {
                gross_gwh: 0.0,
                generation_gwh: vec![],
                unserved_gwh: 0.0,
                implied_peak_mw: 0.0,
                reserve_ok: true,
            },
        }
    }

    fn affine(slope: f64, offset: f64) -> impl FnMut(Links) -> (MonthOutcome, Links) {
        move |l: Links| {
            (
                outcome_stub(),
                Links {
                    power_plant_water_m3: offset + slope * l.power_plant_water_m3,
                    water_infrastructure_gwh: 1.0,
                },
            )
        }
    }

    #[test]
    fn fixed_point_converges_on_contraction() {
        let mut f = affine(1e-3, 1000.0);
        let c = FixedPoint.couple(Links::default(), 10, 1e-6, &mut f);
        assert!(!c.warning);
        assert!(c.residual < 1e-6);
        assert_eq!(c.iterations, 3);
        let exact = 1000.0 / (1.0 - 1e-3);
        assert!((c.links.power_plant_water_m3 - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn fixed_point_flags_oscillation() {
        let mut f = affine(-1.0, 1000.0);
        let c = FixedPoint.couple(Links::default(), 10, 1e-6, &mut f);
        assert!(c.warning);
        assert_eq!(c.iterations, 10);
    }

    #[test]
    fn single_pass_evaluates_once_with_carried_links() {
        let mut calls = Vec::new();
        let mut f = |l: Links| {
            calls.push(l);
            (outcome_stub(), Links::default())
        };
        let carried = Links {
            power_plant_water_m3: 5.0,
            water_infrastructure_gwh: 2.0,
        };
        let c = SinglePass.couple(carried, 10, 1e-6, &mut f);
        assert_eq!(c.iterations, 1);
        assert_eq!(calls, [carried]);
    }

    #[test]
    fn residual_is_relative_with_unit_floor() {
        let a = Links {
            power_plant_water_m3: 100.0,
            water_infrastructure_gwh: 0.0,
        };
        let b = Links {
            power_plant_water_m3: 101.0,
            water_infrastructure_gwh: 0.5,
        };
        assert!((b.residual(&a) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_single_pass_alias() {
        let c: EngineConfig = serde_json::from_str(r#"{"single_pass": true}"#).unwrap();
        assert_eq!(c.scheme_name(), "single-pass");
        assert_eq!(EngineConfig::default().scheme_name(), "fixed-point");
    }
}
