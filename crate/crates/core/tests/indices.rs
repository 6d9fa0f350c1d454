use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use fewsim_core::coupling::{Engine, EngineConfig};
use fewsim_core::energy::Fuel;
use fewsim_core::indices::{compute_indices, delivery_totals, index_deltas, ratio, INDEX_NAMES};
use fewsim_core::scenario::{
    CouplingDiagnostics, DemandTag, FlowSeries, PlantTag, Resource, ResultMetadata, ScenarioSpec,
    SourceTag, VariableSeries, MUNICIPAL_WUE,
};
use fewsim_core::water::{DemandSector, SourceKind};
use fewsim_core::{load_bundled, CoreError, Horizon, ScenarioResult, SeriesKind, Unit};

const YEAR: i32 = 2030;

fn january(v: f64) -> Vec<f64> {
    let mut out = vec![0.0; 12];
    out[0] = v;
    out
}

fn flow(from: &str, to: &str, v: f64) -> FlowSeries {
    FlowSeries {
        from: from.into(),
        to: to.into(),
        resource: Resource::Water,
        unit: Unit::M3PerMonth,
        values: january(v),
    }
}

fn series(name: &str, unit: Unit, v: f64) -> VariableSeries {
    VariableSeries {
        name: name.into(),
        unit,
        kind: SeriesKind::Flow,
        values: january(v),
    }
}

/// One year, two sources, one municipal node and one district; plants given
/// as (fuel, in_area, generation).
fn fixture(flows: Vec<FlowSeries>, plants: &[(Fuel, bool, f64)]) -> ScenarioResult {
    let mut branches = BTreeMap::new();
    let mut tags = Vec::new();
    for (i, (fuel, in_area, g)) in plants.iter().enumerate() {
        let path = format!("energy/supply/p{i}");
        branches.insert(path.clone(), vec![series("generation", Unit::GwhPerMonth, *g)]);
        tags.push(PlantTag {
            path,
            fuel: *fuel,
            in_area: *in_area,
        });
    }
    ScenarioResult {
        scenario: ScenarioSpec::base("fixture"),
        horizon: Horizon {
            start_year: YEAR,
            end_year: YEAR,
        },
        branches,
        flows,
        metadata: ResultMetadata {
            sources: vec![
                SourceTag {
                    path: "water/supply/gw".into(),
                    kind: SourceKind::Groundwater,
                },
                SourceTag {
                    path: "water/supply/river".into(),
                    kind: SourceKind::Surface,
                },
            ],
            demands: vec![
                DemandTag {
                    path: "water/demand/municipal".into(),
                    sector: DemandSector::Municipal,
                    district: false,
                },
                DemandTag {
                    path: "water/demand/agriculture/d1".into(),
                    sector: DemandSector::Agricultural,
                    district: true,
                },
            ],
            plants: tags,
        },
        diagnostics: CouplingDiagnostics::default(),
    }
}

#[test]
fn forty_sixty_split_gives_point_four() {
    let r = fixture(
        vec![
            flow("water/supply/gw", "water/demand/municipal", 40.0),
            flow("water/supply/river", "water/demand/municipal", 60.0),
        ],
        &[(Fuel::Coal, true, 1.0)],
    );
    let v = compute_indices(&r, YEAR).unwrap();
    assert_eq!(v.water.regional_gw_reliance, Some(0.4));
    assert_eq!(v.water.mi_surface_reliance, Some(0.6));
    assert_eq!(v.water.ag_gw_reliance, None);
    assert_eq!(v.food.ag_water_impact, Some(0.0));
}

#[test]
fn no_groundwater_means_zero_reliance() {
    let r = fixture(
        vec![flow("water/supply/river", "water/demand/agriculture/d1", 60.0)],
        &[(Fuel::Coal, true, 1.0)],
    );
    let v = compute_indices(&r, YEAR).unwrap();
    assert_eq!(v.water.regional_gw_reliance, Some(0.0));
    assert_eq!(v.water.ag_gw_reliance, Some(0.0));
    assert_eq!(v.water.district_surface_reliance, Some(1.0));
    assert_eq!(v.food.ag_water_impact, Some(1.0));
}

#[test]
fn all_renewable_generation() {
    let r = fixture(
        vec![],
        &[(Fuel::Solar, true, 30.0), (Fuel::Wind, false, 50.0), (Fuel::Hydro, false, 20.0)],
    );
    let v = compute_indices(&r, YEAR).unwrap();
    assert_eq!(v.energy.renewable_share, Some(1.0));
    assert_eq!(v.energy.import_dependence, Some(0.7));
    assert_eq!(v.water.regional_gw_reliance, None);
}

#[test]
fn zero_generation_is_flagged_not_zero() {
    let r = fixture(vec![], &[(Fuel::Coal, true, 0.0)]);
    let v = compute_indices(&r, YEAR).unwrap();
    assert_eq!(v.energy.renewable_share, None);
    assert_eq!(v.food.ag_energy_share, None);
    let deltas = index_deltas(&v, &v).unwrap();
    assert!(deltas.iter().filter(|d| d.flagged).count() >= 3);
}

#[test]
fn year_outside_horizon_is_an_error() {
    let r = fixture(vec![], &[(Fuel::Coal, true, 1.0)]);
    assert!(matches!(
        compute_indices(&r, 2051),
        Err(CoreError::YearOutsideHorizon { .. })
    ));
}

fn engine() -> &'static Engine {
    static E: OnceLock<Engine> = OnceLock::new();
    E.get_or_init(|| Engine::new(Arc::new(load_bundled().unwrap()), EngineConfig::default()).unwrap())
}

#[test]
fn bundled_indices_are_bounded_and_decompose() {
    for climate in ["ssp245", "ssp585"] {
        let r = engine().run(&ScenarioSpec::base(climate)).unwrap();
        for year in 2022..=2050 {
            let v = compute_indices(&r, year).unwrap();
            for (name, value) in v.entries() {
                let value = value.unwrap_or_else(|| panic!("{name} undefined in {year}"));
                assert!((0.0..=1.0).contains(&value), "{name} = {value} in {year}");
            }
            let t = delivery_totals(&r, year).unwrap();
            let weighted: f64 = t
                .sectors
                .iter()
                .map(|(_, delivered, gw)| (delivered / t.total) * (gw / delivered))
                .sum();
            let direct = v.water.regional_gw_reliance.unwrap();
            assert!((weighted - direct).abs() <= 1e-9, "{weighted} vs {direct}");

            let mut fossil = 0.0;
            let mut total = 0.0;
            for p in &r.metadata.plants {
                let g = r.annual_sum(&p.path, "generation", year).unwrap();
                total += g;
                if !p.fuel.is_renewable() {
                    fossil += g;
                }
            }
            let renewable = v.energy.renewable_share.unwrap();
            assert!((renewable + ratio(fossil, total).unwrap() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn higher_wue_never_raises_agricultural_groundwater_reliance() {
    let base = engine().run(&ScenarioSpec::base("ssp245")).unwrap();
    let mut runs = Vec::new();
    for w in [10.0, 20.0, 30.0] {
        let mut s = ScenarioSpec::base("ssp245");
        s.deltas.insert(MUNICIPAL_WUE.into(), w);
        runs.push(engine().run(&s).unwrap());
    }
    let ag = INDEX_NAMES.iter().position(|n| *n == "ag_gw_reliance").unwrap();
    for year in [2025, 2035, 2045, 2050] {
        let b = compute_indices(&base, year).unwrap();
        let mut previous = 0.0;
        for r in &runs {
            let d = index_deltas(&compute_indices(r, year).unwrap(), &b).unwrap();
            let value = d[ag].value.unwrap();
            assert!(value <= previous + 1e-12, "{year}: {value} after {previous}");
            previous = value;
        }
    }
}
