//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Most criteria read the 36-scenario case-study grid, which is run once
//! through the middleware into a temporary store.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fewsim_core::energy::PlantCatalog;
use fewsim_core::fmlm::{
    fmlm_fit, fmlm_predict, log_likelihood, log_likelihood_gradient, FitOptions, FmlmCoefficients, PanelRow,
    SharePanel,
};
use fewsim_core::indices::{compute_indices, delivery_totals};
use fewsim_core::scenario::{
    CouplingDiagnostics, FlowSeries, PlantTag, Resource, ResultMetadata, VariableSeries, HOUSEHOLD_EUE,
    IRRIGATION_IE, MUNICIPAL_WUE,
};
use fewsim_core::units::capability_gwh;
use fewsim_core::water::{
    Allocator, Availability, DemandDriver, DemandNode, DemandSector, PriorityGreedy, SourceKind, WaterNetwork,
    WaterSource,
};
use fewsim_core::{
    load_bundled, Engine, EngineConfig, Horizon, ScenarioResult, ScenarioSpec, SeriesKind, StudyAreaDataset,
    Unit, YearMonth,
};
use fewsim_middleware::{
    expand_scenario_grid, CaseConfig, JobStatus, Middleware, MiddlewareOptions, VariableAdjustment,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn case_study(name: &str, wue_hi: f64) -> CaseConfig {
    CaseConfig {
        case_name: name.into(),
        climate_file: "ssp245".into(),
        adjustments: vec![
            VariableAdjustment::new(MUNICIPAL_WUE, 0.0, wue_hi, 10.0),
            VariableAdjustment::new(HOUSEHOLD_EUE, 0.0, 20.0, 10.0),
            VariableAdjustment::new(IRRIGATION_IE, 0.0, 20.0, 10.0),
        ],
    }
}

struct Grid {
    dir: tempfile::TempDir,
    dataset: Arc<StudyAreaDataset>,
    engine: Arc<Engine>,
    submit: Duration,
    elapsed: Duration,
    workers: usize,
    status: JobStatus,
    results: Vec<ScenarioResult>,
}

impl Grid {
    fn run() -> Grid {
        let dataset = Arc::new(load_bundled().expect("bundled dataset"));
        let engine = Arc::new(Engine::new(dataset.clone(), EngineConfig::default()).expect("engine"));
        let dir = tempfile::tempdir().expect("tempdir");
        let opts = MiddlewareOptions::new(dir.path());
        let workers = opts.workers;
        let mw = Middleware::open(opts, engine.clone()).expect("middleware");
        let t = Instant::now();
        mw.submit_case(case_study("grid", 30.0)).expect("submit");
        let submit = t.elapsed();
        let job = mw.wait("grid", Duration::from_secs(600)).expect("wait");
        let elapsed = t.elapsed();
        let results = job
            .scenarios
            .iter()
            .filter_map(|p| mw.result(Some("grid"), &p.scenario).ok())
            .map(|(_, r)| (*r).clone())
            .collect();
        Grid {
            dir,
            dataset,
            engine,
            submit,
            elapsed,
            workers,
            status: job.status,
            results,
        }
    }

    fn get(&self, name: &str) -> Result<&ScenarioResult, String> {
        self.results
            .iter()
            .find(|r| r.scenario.scenario_name == name)
            .ok_or_else(|| format!("no result for {name}"))
    }

    fn complete(&self) -> Result<(), String> {
        ensure!(
            self.status == JobStatus::Finished && self.results.len() == 36,
            "grid job {:?} with {} results",
            self.status,
            self.results.len()
        );
        Ok(())
    }
}

fn values<'a>(r: &'a ScenarioResult, branch: &str, var: &str) -> Result<&'a [f64], String> {
    r.values(branch, var)
        .ok_or_else(|| format!("{}: missing {branch}:{var}", r.scenario.scenario_name))
}

// ---- criteria ----

fn grid_protocol() -> Outcome {
    let grid = expand_scenario_grid(&case_study("protocol", 30.0)).map_err(|e| e.to_string())?;
    ensure!(grid.len() == 36, "{} scenarios", grid.len());
    let names: Vec<&str> = grid.iter().map(|s| s.scenario_name.as_str()).collect();
    for want in ["ssp245_101010", "ssp245_201010", "ssp245_301010", "ssp245_base"] {
        ensure!(names.contains(&want), "missing {want}");
    }
    ensure!(names.iter().filter(|n| **n == "ssp245_base").count() == 1, "base not unique");
    let unique: BTreeSet<&str> = names.iter().copied().collect();
    ensure!(unique.len() == 36, "duplicate names");
    Ok("36 scenarios, names exact, base once".into())
}

fn water_mass_balance(g: &Grid) -> Outcome {
    g.complete()?;
    let mut checked = 0usize;
    let mut capped = 0usize;
    for r in &g.results {
        let months = r.horizon.len_months();
        let mut delivered = vec![0.0; months];
        let mut unmet = vec![0.0; months];
        let mut demand = vec![0.0; months];
        for d in &r.metadata.demands {
            let (dv, uv, qv) = (
                values(r, &d.path, "delivered")?,
                values(r, &d.path, "unmet")?,
                values(r, &d.path, "demand")?,
            );
            for m in 0..months {
                delivered[m] += dv[m];
                unmet[m] += uv[m];
                demand[m] += qv[m];
            }
        }
        for m in 0..months {
            let residual = delivered[m] + unmet[m] - demand[m];
            ensure!(
                residual.abs() <= 1e-9 * demand[m].max(1.0),
                "{} month {m}: residual {residual:e}",
                r.scenario.scenario_name
            );
            checked += 1;
        }
        for s in &r.metadata.sources {
            let Some(avail) = r.values(&s.path, "availability") else { continue };
            let used = values(r, &s.path, "delivered")?;
            for m in 0..months {
                ensure!(
                    used[m] <= avail[m] * (1.0 + 1e-9),
                    "{} {} month {m}: {} > {}",
                    r.scenario.scenario_name,
                    s.path,
                    used[m],
                    avail[m]
                );
                capped += 1;
            }
        }
    }
    Ok(format!("{checked} scenario-months balanced, {capped} capped source-months within availability"))
}

/// No plant runs while a plant earlier in merit order has spare capability.
fn merit_audit(catalog: &PlantCatalog, generation: &[f64], hours: f64) -> Result<(), String> {
    let mut spare: Option<usize> = None;
    for i in catalog.merit_order() {
        let g = generation[i];
        if g > 0.0 {
            if let Some(j) = spare {
                return Err(format!(
                    "{} runs while {} has spare capability",
                    catalog.plants[i].id, catalog.plants[j].id
                ));
            }
        }
        if g < capability_gwh(catalog.plants[i].capacity_mw, hours) * (1.0 - 1e-12) {
            spare.get_or_insert(i);
        }
    }
    Ok(())
}

fn energy_balance(g: &Grid) -> Outcome {
    g.complete()?;
    let catalog = &g.dataset.energy.catalog;
    let mut dispatches = 0usize;
    for r in &g.results {
        let name = &r.scenario.scenario_name;
        let net = values(r, "energy/demand", "net_demand")?;
        let unserved = values(r, "energy/demand", "unserved")?;
        let generation = values(r, "energy/supply", "generation")?;
        let plant_series: Vec<&[f64]> = catalog
            .plants
            .iter()
            .map(|p| {
                let tag: &PlantTag = r
                    .metadata
                    .plants
                    .iter()
                    .find(|t| t.path.rsplit('/').next() == Some(p.id.as_str()))
                    .ok_or_else(|| format!("{name}: no series for plant {}", p.id))?;
                values(r, &tag.path, "generation")
            })
            .collect::<Result<_, _>>()?;
        for (m, ym) in r.horizon.months().enumerate() {
            let gross = net[m] / (1.0 - 0.05);
            ensure!(
                rel_close(generation[m] + unserved[m], gross, 1e-9),
                "{name} month {m}: {} + {} vs {gross}",
                generation[m],
                unserved[m]
            );
            let per_plant: Vec<f64> = plant_series.iter().map(|s| s[m]).collect();
            ensure!(
                rel_close(per_plant.iter().sum(), generation[m], 1e-9),
                "{name} month {m}: plant sum differs from total"
            );
            merit_audit(catalog, &per_plant, ym.hours()).map_err(|e| format!("{name} month {m}: {e}"))?;
            dispatches += 1;
        }
    }
    Ok(format!("{dispatches} dispatches balanced and merit-ordered"))
}

fn wue_linearity(g: &Grid) -> Outcome {
    g.complete()?;
    let base = values(g.get("ssp245_base")?, "water/demand/municipal", "delivered")?;
    let mut worst = 0.0f64;
    let mut previous = base.to_vec();
    for w in [10, 20, 30] {
        let name = format!("ssp245_{w}1010");
        let m = values(g.get(&name)?, "water/demand/municipal", "delivered")?;
        let factor = 1.0 - w as f64 / 100.0;
        for (i, (v, b)) in m.iter().zip(base).enumerate() {
            let rel = (v - b * factor).abs() / (b * factor).abs().max(1.0);
            worst = worst.max(rel);
            ensure!(rel <= 1e-9, "{name} month {i}: {v} vs {}", b * factor);
            ensure!(*v < previous[i], "{name} month {i}: not below the previous level");
        }
        previous = m.to_vec();
    }
    Ok(format!("10/20/30% scale by 0.9/0.8/0.7, worst relative error {worst:.1e}"))
}

fn fmlm_coefs(betas: Vec<Vec<f64>>) -> FmlmCoefficients {
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let mut c = FmlmCoefficients::zeros(names("c", betas.len() + 1), names("x", betas[0].len()));
    c.betas = betas;
    c
}

fn synthetic_panel(rng: &mut ChaCha8Rng, rows: usize, truth: &FmlmCoefficients) -> SharePanel {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows = (0..rows)
        .map(|i| {
            let mut x = vec![1.0];
            x.extend((1..truth.num_predictors()).map(|_| normal.sample(rng)));
            let p = fmlm_predict(truth, &x).unwrap();
            let mut counts = vec![0.0; p.len()];
            for _ in 0..200 {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let k = p.iter().position(|pj| {
                    acc += pj;
                    u < acc
                });
                counts[k.unwrap_or(p.len() - 1)] += 1.0;
            }
            PanelRow {
                district: format!("d{}", i % 5),
                year: 1990 + (i / 5) as i32,
                predictors: x,
                shares: counts.iter().map(|c| c / 200.0).collect(),
            }
        })
        .collect();
    SharePanel {
        crops: truth.crops.clone(),
        predictors: truth.predictors.clone(),
        rows,
    }
}

fn fmlm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let truth = fmlm_coefs(vec![vec![0.2, 0.7, -0.4], vec![-0.4, 0.3, 0.6], vec![0.6, -0.5, 0.1]]);
    let panel = synthetic_panel(&mut rng, 300, &truth);
    let spread = Normal::new(0.0, 1.0).unwrap();
    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    for point in 0..20 {
        let mut at = truth.clone();
        for b in at.betas.iter_mut().flatten() {
            *b = spread.sample(&mut rng);
        }
        let grad = log_likelihood_gradient(&panel, &at).map_err(|e| e.to_string())?;
        for r in 0..at.betas.len() {
            for c in 0..at.num_predictors() {
                let (mut up, mut down) = (at.clone(), at.clone());
                up.betas[r][c] += h;
                down.betas[r][c] -= h;
                let fd = (log_likelihood(&panel, &up).unwrap() - log_likelihood(&panel, &down).unwrap()) / (2.0 * h);
                let rel = (grad[r][c] - fd).abs() / grad[r][c].abs().max(fd.abs()).max(1.0);
                worst_grad = worst_grad.max(rel);
                ensure!(rel <= 1e-5, "gradient point {point} [{r}][{c}] rel {rel:e}");
            }
        }
    }

    let truth = fmlm_coefs(vec![vec![0.4, 0.9, -0.6], vec![-0.3, -0.5, 0.8]]);
    let panel = synthetic_panel(&mut rng, 5000, &truth);
    let report = fmlm_fit(&panel, &FitOptions::default()).map_err(|e| e.to_string())?;
    ensure!(report.converged, "fit did not converge");
    let worst_fit = report
        .coefficients
        .betas
        .iter()
        .flatten()
        .zip(truth.betas.iter().flatten())
        .map(|(f, t)| (f - t).abs())
        .fold(0.0, f64::max);
    ensure!(worst_fit <= 0.05, "recovery error {worst_fit}");

    let wide = Normal::new(0.0, 5.0).unwrap();
    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let j = rng.random_range(2..8);
        let k = rng.random_range(1..6);
        let c = fmlm_coefs((0..j - 1).map(|_| (0..k).map(|_| wide.sample(&mut rng)).collect()).collect());
        let x: Vec<f64> = (0..k).map(|_| wide.sample(&mut rng)).collect();
        let s: f64 = fmlm_predict(&c, &x).map_err(|e| e.to_string())?.iter().sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
    }
    ensure!(worst_sum <= 1e-12, "share sum off by {worst_sum:e}");
    Ok(format!(
        "gradient rel {worst_grad:.1e}, recovery {worst_fit:.3}, sum-to-one {worst_sum:.1e}"
    ))
}

fn coupling(g: &Grid) -> Outcome {
    g.complete()?;
    let mut max_iter = 0;
    let mut max_res = 0.0f64;
    for r in &g.results {
        let d = &r.diagnostics;
        ensure!(!d.warning, "{} flagged a coupling warning", r.scenario.scenario_name);
        max_iter = max_iter.max(d.iterations.iter().copied().max().unwrap_or(0));
        max_res = max_res.max(d.residuals.iter().copied().fold(0.0, f64::max));
    }
    ensure!(max_iter <= 10, "{max_iter} iterations");
    ensure!(max_res < 1e-6, "residual {max_res:e}");

    // decoupled limit: zero link factors reduce the coupled run to the
    // standalone models
    let mut ds = (*g.dataset).clone();
    for p in ds.energy.catalog.plants.iter_mut() {
        p.water_factor_m3_per_gwh = 0.0;
    }
    for k in ds.energy.demand.water_infrastructure_kwh_per_m3.values_mut() {
        *k = 0.0;
    }
    let decoupled = Engine::new(Arc::new(ds), EngineConfig::default()).map_err(|e| e.to_string())?;
    let spec = g.get("ssp245_201010")?.scenario.clone();
    let coupled = decoupled.run(&spec).map_err(|e| e.to_string())?;
    let standalone = decoupled.run_standalone(&spec).map_err(|e| e.to_string())?;
    ensure!(
        coupled.branches == standalone.branches && coupled.flows == standalone.flows,
        "decoupled run differs from standalone models"
    );

    for name in ["ssp245_base", "ssp245_302020"] {
        let stored = g.get(name)?;
        let a = g.engine.run(&stored.scenario).map_err(|e| e.to_string())?;
        let b = g.engine.run(&stored.scenario).map_err(|e| e.to_string())?;
        ensure!(a == b && a == *stored, "{name}: rerun not bit-identical");
    }
    Ok(format!(
        "max {max_iter} iterations, max residual {max_res:.1e}, decoupled limit exact, reruns identical"
    ))
}

// 2 sources x 2 demands: the greedy allocation must reach the lexicographic
// optimum (per priority class: class volume, then first-choice volume) over
// every vertex of the feasible polytope.

fn solve4(mut a: [[f64; 5]; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        for r in 0..4 {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..5 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some([a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]])
}

fn vertices(supply: [f64; 2], demand: [f64; 2]) -> Vec<[f64; 4]> {
    let mut rows: Vec<([f64; 4], f64)> = (0..4)
        .map(|i| {
            let mut e = [0.0; 4];
            e[i] = 1.0;
            (e, 0.0)
        })
        .collect();
    rows.push(([1.0, 1.0, 0.0, 0.0], supply[0]));
    rows.push(([0.0, 0.0, 1.0, 1.0], supply[1]));
    rows.push(([1.0, 0.0, 1.0, 0.0], demand[0]));
    rows.push(([0.0, 1.0, 0.0, 1.0], demand[1]));
    let feasible = |x: &[f64; 4]| {
        x.iter().all(|v| *v >= -1e-9)
            && rows[4..]
                .iter()
                .all(|(a, b)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() <= b + 1e-9 * b.max(1.0))
    };
    let mut out = Vec::new();
    for i in 0..8 {
        for j in i + 1..8 {
            for k in j + 1..8 {
                for l in k + 1..8 {
                    let mut m = [[0.0; 5]; 4];
                    for (r, &idx) in [i, j, k, l].iter().enumerate() {
                        m[r][..4].copy_from_slice(&rows[idx].0);
                        m[r][4] = rows[idx].1;
                    }
                    if let Some(x) = solve4(m).filter(|x| feasible(x)) {
                        out.push(x);
                    }
                }
            }
        }
    }
    out
}

fn objective(x: &[f64; 4], priorities: [u32; 2], first: [usize; 2]) -> Vec<f64> {
    let mut classes = priorities.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut v = Vec::new();
    for p in classes {
        let members: Vec<usize> = (0..2).filter(|&d| priorities[d] == p).collect();
        v.push(members.iter().map(|&d| x[d] + x[2 + d]).sum());
        v.push(members.iter().map(|&d| x[first[d] * 2 + d]).sum());
    }
    v
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if !rel_close(*x, *y, 1e-9) {
            return x.total_cmp(y);
        }
    }
    std::cmp::Ordering::Equal
}

fn allocation_oracle() -> Outcome {
    let source = |id: &str, residual: bool| WaterSource {
        id: id.into(),
        label: id.into(),
        kind: if residual { SourceKind::Groundwater } else { SourceKind::Surface },
        availability: if residual {
            Availability::Residual { monthly_cap_m3: None }
        } else {
            Availability::Climate { column: "inflow".into() }
        },
    };
    let node = |id: &str, priority: u32, pref: [&str; 2]| DemandNode {
        id: id.into(),
        label: id.into(),
        sector: DemandSector::Municipal,
        priority,
        preference: pref.iter().map(|s| s.to_string()).collect(),
        driver: DemandDriver::Fixed { m3: [0.0; 12] },
    };
    let orders = [["surface", "gw"], ["gw", "surface"]];
    let month = YearMonth::new(2030, 6);
    let mut instances = 0;
    for s0 in [0.0, 30.0, 80.0, 100.0, 150.0] {
        for s1 in [None, Some(0.0), Some(40.0), Some(120.0)] {
            for d0 in [0.0, 50.0, 80.0] {
                for d1 in [20.0, 50.0, 90.0] {
                    for priorities in [[1, 1], [1, 2], [2, 1]] {
                        for first in [[0, 0], [0, 1], [1, 0], [1, 1]] {
                            let network = WaterNetwork {
                                sources: vec![source("surface", false), source("gw", s1.is_none())],
                                demands: vec![
                                    node("a", priorities[0], orders[first[0]]),
                                    node("b", priorities[1], orders[first[1]]),
                                ],
                            };
                            let m = PriorityGreedy.allocate(&network, &[d0, d1], &[Some(s0), s1], month);
                            let x = [m.delivered[0][0], m.delivered[0][1], m.delivered[1][0], m.delivered[1][1]];
                            let got = objective(&x, priorities, first);
                            let best = vertices([s0, s1.unwrap_or(d0 + d1)], [d0, d1])
                                .iter()
                                .map(|v| objective(v, priorities, first))
                                .max_by(|a, b| lex_cmp(a, b))
                                .ok_or("empty polytope")?;
                            ensure!(
                                lex_cmp(&got, &best).is_eq(),
                                "s=({s0},{s1:?}) d=({d0},{d1}) p={priorities:?}: {got:?} vs {best:?}"
                            );
                            instances += 1;
                        }
                    }
                }
            }
        }
    }
    ensure!(instances >= 200, "only {instances} instances");
    Ok(format!("{instances} instances match the exhaustive optimum"))
}

fn all_renewable_fixture() -> ScenarioResult {
    let year_of = |v: f64| {
        let mut out = vec![0.0; 12];
        out[0] = v;
        out
    };
    let plants = [
        (fewsim_core::energy::Fuel::Solar, true, 30.0),
        (fewsim_core::energy::Fuel::Wind, false, 50.0),
        (fewsim_core::energy::Fuel::Hydro, true, 20.0),
    ];
    let mut branches = std::collections::BTreeMap::new();
    let mut tags = Vec::new();
    for (i, (fuel, in_area, g)) in plants.iter().enumerate() {
        let path = format!("energy/supply/p{i}");
        branches.insert(
            path.clone(),
            vec![VariableSeries {
                name: "generation".into(),
                unit: Unit::GwhPerMonth,
                kind: SeriesKind::Flow,
                values: year_of(*g),
            }],
        );
        tags.push(PlantTag {
            path,
            fuel: *fuel,
            in_area: *in_area,
        });
    }
    ScenarioResult {
        scenario: ScenarioSpec::base("fixture"),
        horizon: Horizon {
            start_year: 2030,
            end_year: 2030,
        },
        branches,
        flows: vec![FlowSeries {
            from: "energy/supply/p0".into(),
            to: "energy/demand".into(),
            resource: Resource::Electricity,
            unit: Unit::GwhPerMonth,
            values: year_of(30.0),
        }],
        metadata: ResultMetadata {
            sources: vec![],
            demands: vec![],
            plants: tags,
        },
        diagnostics: CouplingDiagnostics::default(),
    }
}

fn indices(g: &Grid) -> Outcome {
    g.complete()?;
    let mut defined = 0usize;
    let mut worst = 0.0f64;
    for r in &g.results {
        for year in r.horizon.start_year..=r.horizon.end_year {
            let v = compute_indices(r, year).map_err(|e| e.to_string())?;
            for (name, value) in v.entries() {
                if let Some(x) = value {
                    ensure!(
                        (0.0..=1.0).contains(&x),
                        "{} {year}: {name} = {x}",
                        r.scenario.scenario_name
                    );
                    defined += 1;
                }
            }
            let t = delivery_totals(r, year).map_err(|e| e.to_string())?;
            let weighted: f64 = t
                .sectors
                .iter()
                .filter(|(_, d, _)| *d > 0.0)
                .map(|(_, d, gw)| (d / t.total) * (gw / d))
                .sum();
            let direct = v.water.regional_gw_reliance.ok_or("regional_gw_reliance undefined")?;
            worst = worst.max((weighted - direct).abs());
            ensure!((weighted - direct).abs() <= 1e-9, "decomposition {weighted} vs {direct}");
        }
    }
    let fixture = compute_indices(&all_renewable_fixture(), 2030).map_err(|e| e.to_string())?;
    ensure!(
        fixture.energy.renewable_share == Some(1.0),
        "all-renewable share {:?}",
        fixture.energy.renewable_share
    );
    ensure!(
        fixture.energy.import_dependence == Some(0.5),
        "import dependence {:?}",
        fixture.energy.import_dependence
    );
    Ok(format!(
        "{defined} defined values in [0,1], decomposition error {worst:.1e}, all-renewable share 1"
    ))
}

fn middleware(g: &Grid) -> Outcome {
    g.complete()?;
    ensure!(g.submit < Duration::from_millis(100), "36-scenario submit took {:?}", g.submit);

    // restart: a fresh middleware over the same store reads identical bytes
    // and identical values
    let mw = Middleware::open(MiddlewareOptions::new(g.dir.path()), g.engine.clone()).map_err(|e| e.to_string())?;
    for r in &g.results {
        let (_, back) = mw.result(Some("grid"), &r.scenario.scenario_name).map_err(|e| e.to_string())?;
        ensure!(*back == *r, "{}: reloaded result differs", r.scenario.scenario_name);
        let bits = |x: &ScenarioResult| -> Vec<u64> {
            x.flows.iter().flat_map(|f| f.values.iter().map(|v| v.to_bits())).collect()
        };
        ensure!(bits(&back) == bits(r), "{}: flow bits differ", r.scenario.scenario_name);
    }
    ensure!(mw.runs_executed() == 0, "reopening re-ran scenarios");

    // edit: widening WUE from 20 to 30 runs only the new combinations
    mw.submit_case(case_study("widen", 20.0)).map_err(|e| e.to_string())?;
    let job = mw.wait("widen", Duration::from_secs(600)).map_err(|e| e.to_string())?;
    ensure!(job.status == JobStatus::Finished && job.total == 27, "initial job {:?}", job.status);
    let old: BTreeSet<String> = expand_scenario_grid(&case_study("widen", 20.0))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.scenario_name)
        .collect();
    let new: BTreeSet<String> = expand_scenario_grid(&case_study("widen", 30.0))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.scenario_name)
        .collect();
    let difference = new.difference(&old).count();
    let before = mw.runs_executed();
    mw.edit_case("widen", case_study("widen", 30.0).adjustments, None)
        .map_err(|e| e.to_string())?;
    let job = mw.wait("widen", Duration::from_secs(600)).map_err(|e| e.to_string())?;
    let ran = mw.runs_executed() - before;
    ensure!(job.status == JobStatus::Finished, "edit job {:?}", job.status);
    ensure!(ran == difference, "edit ran {ran}, set difference is {difference}");
    ensure!(job.reused == old.len(), "reused {}", job.reused);
    Ok(format!(
        "submit {:.1} ms, restart bit-exact over 36 results, edit ran {ran} = |new \\ old|",
        g.submit.as_secs_f64() * 1e3
    ))
}

fn performance(g: &Grid) -> Outcome {
    g.complete()?;
    let secs = g.elapsed.as_secs_f64();
    ensure!(secs < 60.0, "grid took {secs:.1} s");
    let months: usize = g.results.iter().map(|r| r.horizon.len_months()).sum();
    Ok(format!(
        "36 x 348 months ({months} scenario-months) in {secs:.2} s on {} workers",
        g.workers
    ))
}

fn main() {
    let mut outcomes: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match &out {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => println!("FAIL  {name}: {why}"),
        }
        outcomes.push((name, out));
    };

    record("grid_protocol", &grid_protocol);
    record("allocation_oracle", &allocation_oracle);
    record("fmlm", &fmlm);
    let grid = Grid::run();
    record("water_mass_balance", &|| water_mass_balance(&grid));
    record("energy_balance", &|| energy_balance(&grid));
    record("wue_linearity", &|| wue_linearity(&grid));
    record("coupling", &|| coupling(&grid));
    record("indices", &|| indices(&grid));
    record("middleware", &|| middleware(&grid));
    record("performance", &|| performance(&grid));

    let failed = outcomes.iter().filter(|(_, o)| o.is_err()).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
