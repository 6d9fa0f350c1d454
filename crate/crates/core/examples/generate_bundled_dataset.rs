//! Regenerates the bundled synthetic Phoenix-area dataset.
//!
//! ```text
//! cargo run -p fewsim-core --example generate_bundled_dataset [out_dir]
//! ```
//!
//! Everything is drawn from a fixed seed, so rerunning reproduces the files
//! byte for byte. The share panel is simulated from known coefficients and
//! then refitted; the fitted coefficients are what ship.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fewsim_core::dataset::{
    predictor_names, price_column, yield_column, ClimateRef, Crop, District, FmlmRef, HistoryRef,
    Manifest, WaterSection,
};
use fewsim_core::energy::{
    Activity, EnergyDemandStructure, EnergySector, EnergySectorId, EnergySystem, Fuel, Plant,
    PlantCatalog,
};
use fewsim_core::fmlm::{fmlm_fit, fmlm_predict, FitOptions, FmlmCoefficients, PanelRow, SharePanel};
use fewsim_core::series::Horizon;
use fewsim_core::water::{
    Availability, DemandDriver, DemandNode, DemandSector, Et0Params, SourceKind, WaterSource,
};

const HISTORY: Horizon = Horizon {
    start_year: 1989,
    end_year: 2021,
};

const TMEAN_CLIM: [f64; 12] = [13.0, 15.0, 18.5, 22.5, 27.5, 32.5, 35.0, 34.5, 31.5, 25.0, 18.0, 13.0];
const PRECIP_CLIM: [f64; 12] = [20.0, 20.0, 22.0, 7.0, 3.0, 1.0, 25.0, 25.0, 17.0, 15.0, 15.0, 22.0];
const CAP_PROFILE: [f64; 12] = [0.80, 0.80, 0.90, 1.00, 1.10, 1.20, 1.20, 1.15, 1.05, 0.95, 0.90, 0.95];
const SRP_PROFILE: [f64; 12] = [0.85, 1.00, 1.35, 1.45, 1.25, 0.95, 0.80, 0.85, 0.85, 0.85, 0.85, 0.95];

struct Pathway {
    name: &'static str,
    warming_per_year: f64,
    precip_trend: f64,
    pop_growth: f64,
    cap_trend: f64,
    srp_trend: f64,
}

const PATHWAYS: [Pathway; 2] = [
    Pathway {
        name: "ssp245",
        warming_per_year: 0.03,
        precip_trend: -0.002,
        pop_growth: 0.012,
        cap_trend: -0.004,
        srp_trend: -0.003,
    },
    Pathway {
        name: "ssp585",
        warming_per_year: 0.06,
        precip_trend: -0.005,
        pop_growth: 0.015,
        cap_trend: -0.008,
        srp_trend: -0.007,
    },
];

fn crops() -> Vec<Crop> {
    let crop = |id: &str, label: &str, kc: [f64; 12], y: f64, excl: &[&str]| Crop {
        id: id.into(),
        label: label.into(),
        kc,
        base_yield_t_per_ha: y,
        exclusive_to: excl.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        crop("alfalfa_hay", "Alfalfa hay", [0.6, 0.7, 0.9, 1.0, 1.05, 1.05, 1.05, 1.0, 1.0, 0.95, 0.8, 0.6], 17.0, &[]),
        crop("barley", "Barley", [0.9, 1.1, 1.15, 0.8, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.3, 0.6], 6.0, &[]),
        crop("upland_cotton", "Upland cotton", [0.1, 0.1, 0.1, 0.3, 0.6, 0.9, 1.15, 1.2, 1.0, 0.6, 0.2, 0.1], 1.6, &["new_magma_idd"]),
        crop("corn", "Corn", [0.1, 0.1, 0.3, 0.6, 1.0, 1.2, 1.1, 0.7, 0.3, 0.1, 0.1, 0.1], 11.0, &[]),
        crop("spring_durum_wheat", "Spring durum wheat", [1.0, 1.15, 1.15, 0.9, 0.4, 0.1, 0.1, 0.1, 0.1, 0.1, 0.3, 0.7], 6.5, &[]),
        crop("vegetables", "Vegetables", [0.9, 0.95, 0.9, 0.7, 0.4, 0.2, 0.2, 0.2, 0.3, 0.6, 0.8, 0.9], 25.0, &[]),
    ]
}

fn districts() -> Vec<District> {
    let srp = ["SRP", "CAP", "groundwater"];
    let cap = ["CAP", "SRP", "groundwater"];
    let cap_only = ["CAP", "groundwater"];
    let gw = ["groundwater"];
    let d = |id: &str, label: &str, ha: f64, eff: f64, pref: &[&str]| District {
        id: id.into(),
        label: label.into(),
        cropland_ha: ha,
        base_efficiency: eff,
        priority: 3,
        preference: pref.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        d("roosevelt_id", "Roosevelt Irrigation District", 14000.0, 0.70, &cap),
        d("roosevelt_wcd", "Roosevelt Water Conservation District", 9000.0, 0.72, &srp),
        d("buckeye_wcdd", "Buckeye Water Conservation and Drainage District", 8000.0, 0.68, &cap_only),
        d("new_magma_idd", "New Magma Irrigation and Drainage District", 7000.0, 0.70, &cap_only),
        d("queen_creek_id", "Queen Creek Irrigation District", 4000.0, 0.75, &cap),
        d("san_tan_id", "San Tan Irrigation District", 3500.0, 0.74, &cap_only),
        d("maricopa_wd", "Maricopa Water District", 9500.0, 0.70, &cap),
        d("tonopah_id", "Tonopah Irrigation District", 5000.0, 0.66, &gw),
        d("arlington_canal", "Arlington Canal Company", 2500.0, 0.65, &gw),
        d("adaman_mwc", "Adaman Mutual Water Company", 3000.0, 0.68, &cap_only),
        d("chandler_heights_cid", "Chandler Heights Citrus Irrigation District", 1500.0, 0.78, &srp),
        d("salt_river_valley", "Salt River Valley Water Users", 8000.0, 0.72, &srp),
    ]
}

fn water_section() -> WaterSection {
    let source = |id: &str, label: &str, kind, availability| WaterSource {
        id: id.into(),
        label: label.into(),
        kind,
        availability,
    };
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    WaterSection {
        sources: vec![
            source("CAP", "Central Arizona Project", SourceKind::Surface, Availability::Climate { column: "inflow_CAP_m3".into() }),
            source("SRP", "Salt River Project", SourceKind::Surface, Availability::Climate { column: "inflow_SRP_m3".into() }),
            source("groundwater", "Groundwater", SourceKind::Groundwater, Availability::Residual { monthly_cap_m3: None }),
            source(
                "WWTP",
                "Wastewater treatment plants",
                SourceKind::Reclaimed,
                Availability::ReturnFlow { fraction: 0.30, of: strings(&["municipal", "native_american"]) },
            ),
        ],
        demands: vec![
            DemandNode {
                id: "municipal".into(),
                label: "Municipal".into(),
                sector: DemandSector::Municipal,
                priority: 1,
                preference: strings(&["SRP", "CAP", "WWTP", "groundwater"]),
                driver: DemandDriver::PerCapita {
                    m3_per_person_month: 17.0,
                    population_share: 1.0,
                    monthly_profile: [0.80, 0.80, 0.90, 1.00, 1.10, 1.20, 1.25, 1.20, 1.10, 1.00, 0.85, 0.80],
                },
            },
            DemandNode {
                id: "native_american".into(),
                label: "Native American communities".into(),
                sector: DemandSector::NativeAmerican,
                priority: 1,
                preference: strings(&["CAP", "groundwater"]),
                driver: DemandDriver::Fixed {
                    m3: [9.0e6, 9.0e6, 11.0e6, 12.5e6, 14.0e6, 15.0e6, 15.0e6, 14.5e6, 13.0e6, 11.5e6, 10.0e6, 9.5e6],
                },
            },
            DemandNode {
                id: "power_plants".into(),
                label: "Power plants".into(),
                sector: DemandSector::PowerPlants,
                priority: 2,
                preference: strings(&["WWTP"]),
                driver: DemandDriver::PowerPlantLink,
            },
            DemandNode {
                id: "industrial".into(),
                label: "Industrial".into(),
                sector: DemandSector::Industrial,
                priority: 2,
                preference: strings(&["CAP", "WWTP", "groundwater"]),
                driver: DemandDriver::PerCapita {
                    m3_per_person_month: 1.4,
                    population_share: 1.0,
                    monthly_profile: [1.0; 12],
                },
            },
            DemandNode {
                id: "other_agriculture".into(),
                label: "Other agriculture".into(),
                sector: DemandSector::Agricultural,
                priority: 3,
                preference: strings(&["CAP", "groundwater"]),
                driver: DemandDriver::Fixed {
                    m3: [3.0e6, 3.5e6, 5.0e6, 7.0e6, 9.0e6, 11.0e6, 11.5e6, 11.0e6, 9.0e6, 6.5e6, 4.0e6, 3.0e6],
                },
            },
        ],
    }
}

fn energy_system() -> EnergySystem {
    let mut plants = Vec::new();
    let mut add = |id: &str, label: &str, in_area: bool, fuel: Fuel, mw: f64, em: f64, water: f64| {
        let rank = plants.len() as u32 + 1;
        plants.push(Plant {
            id: id.into(),
            label: label.into(),
            in_area,
            fuel,
            capacity_mw: mw,
            merit_rank: rank,
            emission_factor_t_per_gwh: em,
            water_factor_m3_per_gwh: water,
        });
    };
    // Listed in merit order; capacities are capacity-factor adjusted.
    add("solar_mesa", "Mesa solar", true, Fuel::Solar, 200.0, 0.0, 80.0);
    add("solar_buckeye", "Buckeye solar", true, Fuel::Solar, 150.0, 0.0, 80.0);
    add("hydro_roosevelt", "Roosevelt dam hydro", true, Fuel::Hydro, 60.0, 0.0, 0.0);
    for (i, mw) in [160.0, 150.0, 150.0, 140.0, 150.0].iter().enumerate() {
        add(&format!("wind_ext_{}", i + 1), &format!("External wind {}", i + 1), false, Fuel::Wind, *mw, 0.0, 0.0);
    }
    for (i, mw) in [120.0, 130.0, 110.0, 120.0].iter().enumerate() {
        add(&format!("solar_ext_{}", i + 1), &format!("External solar {}", i + 1), false, Fuel::Solar, *mw, 0.0, 80.0);
    }
    add("hydro_hoover", "Hoover dam share", false, Fuel::Hydro, 250.0, 0.0, 0.0);
    add("hydro_glen_canyon", "Glen Canyon share", false, Fuel::Hydro, 200.0, 0.0, 0.0);
    add("hydro_davis", "Davis dam share", false, Fuel::Hydro, 80.0, 0.0, 0.0);
    add("palo_verde_share", "Palo Verde nuclear share", true, Fuel::Uranium, 700.0, 0.0, 2600.0);
    for (i, mw) in [260.0, 250.0, 240.0, 250.0].iter().enumerate() {
        add(&format!("coal_ext_{}", i + 1), &format!("External coal {}", i + 1), false, Fuel::Coal, *mw, 1000.0, 2000.0);
    }
    add("gas_cc_santan", "Santan combined cycle", true, Fuel::NaturalGas, 900.0, 370.0, 450.0);
    add("gas_cc_redhawk", "Redhawk combined cycle", true, Fuel::NaturalGas, 800.0, 370.0, 450.0);
    add("gas_cc_west_phoenix", "West Phoenix combined cycle", true, Fuel::NaturalGas, 500.0, 380.0, 450.0);
    for i in 0..7 {
        add(&format!("gas_ext_{}", i + 1), &format!("External gas {}", i + 1), false, Fuel::NaturalGas, 500.0, 400.0, 500.0);
    }
    add("gas_ct_ocotillo", "Ocotillo combustion turbines", true, Fuel::NaturalGas, 300.0, 550.0, 150.0);
    add("gas_ct_agua_fria", "Agua Fria combustion turbines", true, Fuel::NaturalGas, 300.0, 560.0, 150.0);
    for i in 0..4 {
        add(&format!("peaker_ext_{}", i + 1), &format!("External peaker {}", i + 1), false, Fuel::NaturalGas, 350.0, 600.0, 150.0);
    }

    let kwh: BTreeMap<String, f64> = [("CAP", 1.9), ("SRP", 0.15), ("groundwater", 0.85), ("WWTP", 0.4)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    EnergySystem {
        loss_fraction: 0.05,
        reserve_margin: 0.15,
        load_factor: 0.55,
        demand: EnergyDemandStructure {
            sectors: vec![
                EnergySector {
                    id: EnergySectorId::Residential,
                    activity: Activity::Population { share: 1.0 },
                    intensity_gwh_per_unit: 0.00026,
                    monthly_profile: [0.75, 0.70, 0.75, 0.85, 1.05, 1.30, 1.45, 1.45, 1.25, 0.95, 0.75, 0.75],
                },
                EnergySector {
                    id: EnergySectorId::Commercial,
                    activity: Activity::Population { share: 1.0 },
                    intensity_gwh_per_unit: 0.00018,
                    monthly_profile: [0.85, 0.85, 0.90, 0.95, 1.05, 1.15, 1.20, 1.20, 1.10, 0.95, 0.90, 0.90],
                },
                EnergySector {
                    id: EnergySectorId::Industrial,
                    activity: Activity::Constant { units: 1.0 },
                    intensity_gwh_per_unit: 350.0,
                    monthly_profile: [1.0; 12],
                },
            ],
            water_infrastructure_kwh_per_m3: kwh,
        },
        catalog: PlantCatalog { plants },
    }
}

/// Mean-reverting index around a drifting level.
fn ar1_index(rng: &mut ChaCha8Rng, years: usize, drift: f64, phi: f64, sigma: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut dev = 0.0;
    (0..years)
        .map(|t| {
            dev = phi * dev + noise.sample(rng);
            ((1.0 + drift * t as f64) * (1.0 + dev)).max(0.2)
        })
        .collect()
}

struct Block {
    horizon: Horizon,
    columns: Vec<(String, Vec<f64>, usize)>,
}

fn climate_block(
    rng: &mut ChaCha8Rng,
    horizon: Horizon,
    path: &Pathway,
    crops: &[Crop],
    pop_start: f64,
    warming_offset: f64,
) -> Block {
    let years = horizon.years();
    let months = horizon.len_months();
    let t_noise = Normal::new(0.0, 0.6).unwrap();
    let p_noise = Normal::new(0.0, 0.45).unwrap();
    let flow_noise = Normal::new(0.0, 0.05).unwrap();
    let srp_year = Normal::new(0.0, 0.25).unwrap();
    let mut tmean = Vec::with_capacity(months);
    let mut precip = Vec::with_capacity(months);
    let mut pop = Vec::with_capacity(months);
    let mut cap = Vec::with_capacity(months);
    let mut srp = Vec::with_capacity(months);
    for y in 0..years {
        let wet: f64 = srp_year.sample(rng);
        for m in 0..12 {
            let t = y as f64 + m as f64 / 12.0;
            tmean.push(TMEAN_CLIM[m] + warming_offset + path.warming_per_year * t + t_noise.sample(rng));
            let p = PRECIP_CLIM[m] * (1.0 + path.precip_trend * t) * (p_noise.sample(rng) - 0.1f64).exp();
            precip.push(p.max(0.0));
            pop.push((pop_start * (1.0 + path.pop_growth).powf(t)).round());
            let c = 118.0e6 * CAP_PROFILE[m] * (1.0 + path.cap_trend * t) * (1.0 + flow_noise.sample(rng));
            cap.push(c.max(0.0).round());
            let s = 85.0e6 * SRP_PROFILE[m] * (1.0 + path.srp_trend * t) * (wet - 0.03 + 0.5 * flow_noise.sample(rng)).exp();
            srp.push(s.max(0.0).round());
        }
    }
    let mut columns = vec![
        ("tmean_C".to_string(), tmean, 2),
        ("precip_mm".to_string(), precip, 2),
        ("population".to_string(), pop, 0),
        ("inflow_CAP_m3".to_string(), cap, 0),
        ("inflow_SRP_m3".to_string(), srp, 0),
    ];
    for c in crops {
        let annual = ar1_index(rng, years, 0.0, 0.6, 0.12);
        let monthly = annual.iter().flat_map(|v| std::iter::repeat(*v).take(12)).collect();
        columns.push((price_column(&c.id), monthly, 4));
    }
    for c in crops {
        let annual = ar1_index(rng, years, 0.004, 0.5, 0.06);
        let monthly = annual.iter().flat_map(|v| std::iter::repeat(*v).take(12)).collect();
        columns.push((yield_column(&c.id), monthly, 4));
    }
    Block { horizon, columns }
}

fn round_to(v: f64, decimals: usize) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (v * f).round() / f
}

fn write_block(block: &Block) -> String {
    let mut out = String::from("year,month");
    for (name, _, _) in &block.columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, ym) in block.horizon.months().enumerate() {
        write!(out, "{},{}", ym.year, ym.month).unwrap();
        for (_, values, decimals) in &block.columns {
            write!(out, ",{}", round_to(values[i], *decimals)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Annual mean of a written column, matching what the loader computes.
fn annual_mean(block: &Block, name: &str, year: i32) -> f64 {
    let (_, values, decimals) = block.columns.iter().find(|(n, _, _)| n == name).unwrap();
    let i = ((year - block.horizon.start_year) * 12) as usize;
    values[i..i + 12].iter().map(|v| round_to(*v, *decimals)).sum::<f64>() / 12.0
}

fn predictors(block: &Block, crops: &[Crop], year: i32) -> Vec<f64> {
    let mut x = vec![1.0];
    x.extend(crops.iter().map(|c| annual_mean(block, &price_column(&c.id), year - 1)));
    x.extend(crops.iter().map(|c| annual_mean(block, &yield_column(&c.id), year - 1)));
    x.push(annual_mean(block, "tmean_C", year));
    x.push(annual_mean(block, "precip_mm", year) * 12.0 / 100.0);
    x
}

/// Coefficients that reproduce the target shares at typical predictor values.
fn true_coefficients(crops: &[Crop], names: Vec<String>, typical: &[f64]) -> FmlmCoefficients {
    let targets: [f64; 6] = [0.42, 0.07, 0.08, 0.08, 0.10, 0.25];
    let temp_effect = [0.0, -0.10, 0.15, 0.05, -0.08, -0.06];
    let precip_effect = [0.0, 0.10, -0.05, 0.0, 0.12, 0.05];
    let j = crops.len();
    let k = names.len();
    let mut coefs = FmlmCoefficients::zeros(crops.iter().map(|c| c.id.clone()).collect(), names);
    for c in 1..j {
        let row = &mut coefs.betas[c - 1];
        row[1] = -1.0; // base crop price pulls land back to alfalfa
        row[1 + c] += 1.5;
        row[1 + j + c] = 0.8;
        row[k - 2] = temp_effect[c];
        row[k - 1] = precip_effect[c];
        let utility: f64 = row.iter().zip(typical).skip(1).map(|(b, x)| b * x).sum();
        row[0] = (targets[c] / targets[0]).ln() - utility;
    }
    coefs
}

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(fewsim_core::dataset::bundled_dir);
    std::fs::create_dir_all(&out_dir).expect("create output directory");
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let crops = crops();
    let names = predictor_names(&crops);

    let history = climate_block(&mut rng, HISTORY, &PATHWAYS[0], &crops, 2.2e6, -0.9);
    let mut files = vec![("history.csv".to_string(), write_block(&history))];
    for p in &PATHWAYS {
        let block = climate_block(&mut rng, Horizon::CASE_STUDY, p, &crops, 4.75e6, 0.0);
        files.push((format!("{}.csv", p.name), write_block(&block)));
    }

    let years: Vec<i32> = (HISTORY.start_year + 1..=HISTORY.end_year).collect();
    let xs: Vec<Vec<f64>> = years.iter().map(|y| predictors(&history, &crops, *y)).collect();
    let typical: Vec<f64> = (0..names.len())
        .map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / xs.len() as f64)
        .collect();
    let truth = true_coefficients(&crops, names.clone(), &typical);
    let noise = Normal::new(0.0, 0.04).unwrap();
    let mut panel_csv = String::from("district,year");
    for c in &crops {
        panel_csv.push(',');
        panel_csv.push_str(&c.id);
    }
    panel_csv.push('\n');
    let mut rows = Vec::new();
    for (year, x) in years.iter().zip(&xs) {
        let base = fmlm_predict(&truth, x).unwrap();
        let perturbed: Vec<f64> = base.iter().map(|s| s * (noise.sample(&mut rng) as f64).exp()).collect();
        let sum: f64 = perturbed.iter().sum();
        let mut shares: Vec<f64> = perturbed.iter().map(|s| round_to(s / sum, 6)).collect();
        let residual: f64 = 1.0 - shares.iter().sum::<f64>();
        shares[0] = round_to(shares[0] + residual, 6);
        write!(panel_csv, "maricopa,{year}").unwrap();
        for s in &shares {
            write!(panel_csv, ",{s}").unwrap();
        }
        panel_csv.push('\n');
        rows.push(PanelRow {
            district: "maricopa".into(),
            year: *year,
            predictors: x.clone(),
            shares,
        });
    }
    files.push(("share_panel.csv".into(), panel_csv));

    let panel = SharePanel {
        crops: crops.iter().map(|c| c.id.clone()).collect(),
        predictors: names,
        rows,
    };
    let report = fmlm_fit(&panel, &FitOptions::default()).expect("fit share panel");
    eprintln!(
        "fit: iterations={} converged={} gradient={:.3e} ll={:.6}",
        report.iterations, report.converged, report.gradient_norm, report.log_likelihood
    );
    let mut coef_csv = Vec::new();
    report.coefficients.write_csv(&mut coef_csv).unwrap();
    files.push(("fmlm_coefficients.csv".into(), String::from_utf8(coef_csv).unwrap()));

    let manifest = Manifest {
        name: "phoenix_synthetic".into(),
        description: "Synthetic Phoenix-area study region: 4 supply sources, 12 irrigation districts, \
                      6 crops, 9 in-area and 27 out-of-area power plants. Values are illustrative, \
                      not calibrated."
            .into(),
        horizon: Horizon::CASE_STUDY,
        history: HistoryRef {
            file: "history.csv".into(),
            start_year: HISTORY.start_year,
            end_year: HISTORY.end_year,
        },
        climate_files: PATHWAYS
            .iter()
            .map(|p| ClimateRef {
                name: p.name.into(),
                file: format!("{}.csv", p.name),
            })
            .collect(),
        crops,
        districts: districts(),
        et0: Et0Params {
            ra_mm_per_day: [8.0, 10.0, 12.7, 15.0, 16.6, 17.2, 16.9, 15.7, 13.6, 11.0, 8.6, 7.4],
            temp_range_c: [14.0, 14.5, 15.5, 16.5, 17.0, 17.0, 14.0, 13.5, 14.5, 15.5, 15.0, 14.0],
            effective_precip_fraction: 0.7,
        },
        water: water_section(),
        energy: energy_system(),
        fmlm: FmlmRef {
            coefficients_file: "fmlm_coefficients.csv".into(),
            share_panel_file: "share_panel.csv".into(),
        },
    };
    files.push((
        "manifest.json".into(),
        serde_json::to_string_pretty(&manifest).unwrap() + "\n",
    ));

    for (name, content) in files {
        std::fs::write(out_dir.join(&name), content).expect("write dataset file");
        eprintln!("wrote {}", out_dir.join(&name).display());
    }
}
