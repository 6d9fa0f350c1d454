//! Asynchronous case execution over a bounded worker pool.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use fewsim_core::scenario::Levers;
use fewsim_core::{Engine, ScenarioResult, ScenarioSpec};

use crate::error::{MiddlewareError, Result};
use crate::grid::{expand_scenario_grid, CaseConfig, VariableAdjustment};
use crate::job::{JobRecord, JobStatus, ScenarioStatus};
use crate::store::{CaseManifest, Store};

/// Something that can simulate one scenario. The engine is the production
/// implementation; tests substitute counting or failing runners.
pub trait ScenarioRunner: Send + Sync {
    fn climate_files(&self) -> Vec<String>;

    /// Cheap validation done at submission time.
    fn check(&self, spec: &ScenarioSpec) -> std::result::Result<(), String>;

    fn run(&self, spec: &ScenarioSpec) -> std::result::Result<ScenarioResult, String>;
}

impl ScenarioRunner for Engine {
    fn climate_files(&self) -> Vec<String> {
        self.dataset().climate_names().into_iter().map(String::from).collect()
    }

    fn check(&self, spec: &ScenarioSpec) -> std::result::Result<(), String> {
        let ds = self.dataset();
        ds.climate(&spec.climate_file).map_err(|e| e.to_string())?;
        Levers::resolve(&ds.water, &ds.energy, &spec.deltas)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn run(&self, spec: &ScenarioSpec) -> std::result::Result<ScenarioResult, String> {
        Engine::run(self, spec).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct MiddlewareOptions {
    pub data_dir: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    pub workers: usize,
    /// Parsed results kept in memory for repeated queries.
    pub cache_capacity: usize,
    /// Re-queue scenarios of jobs interrupted by a previous shutdown.
    pub resume: bool,
}

impl MiddlewareOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        MiddlewareOptions {
            data_dir: data_dir.into(),
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            cache_capacity: 64,
            resume: true,
        }
    }
}

struct Task {
    case: String,
    spec: ScenarioSpec,
}

struct Shared {
    store: Store,
    runner: Arc<dyn ScenarioRunner>,
    cases: Mutex<BTreeMap<String, CaseManifest>>,
    changed: Condvar,
    stopping: AtomicBool,
    runs: AtomicUsize,
    cache: Mutex<HashMap<(String, String), Arc<ScenarioResult>>>,
    cache_capacity: usize,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Case submission, status tracking and result access.
pub struct Middleware {
    shared: Arc<Shared>,
    tx: Option<Sender<Task>>,
    workers: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for Middleware {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Middleware")
            .field("root", &self.shared.store.root())
            .field("workers", &self.workers.len())
            .finish()
    }
}

impl Middleware {
    /// Opens the store, starts the workers and resumes any job that was
    /// interrupted by a previous shutdown.
    pub fn open(options: MiddlewareOptions, runner: Arc<dyn ScenarioRunner>) -> Result<Middleware> {
        let store = Store::open(&options.data_dir)?;
        let mut cases = BTreeMap::new();
        for name in store.case_names()? {
            cases.insert(name.clone(), store.read_manifest(&name)?);
        }
        let shared = Arc::new(Shared {
            store,
            runner,
            cases: Mutex::new(BTreeMap::new()),
            changed: Condvar::new(),
            stopping: AtomicBool::new(false),
            runs: AtomicUsize::new(0),
            cache: Mutex::new(HashMap::new()),
            cache_capacity: options.cache_capacity,
        });
        let (tx, rx) = crossbeam_channel::unbounded::<Task>();
        let workers = (0..options.workers.max(1))
            .map(|i| {
                let shared = shared.clone();
                let rx = rx.clone();
                std::thread::Builder::new()
                    .name(format!("fewsim-worker-{i}"))
                    .spawn(move || worker(shared, rx))
                    .expect("spawn worker")
            })
            .collect();

        let mut resume = Vec::new();
        for (name, m) in cases.iter_mut() {
            if m.job.status.is_terminal() || !options.resume {
                continue;
            }
            m.job.transition(JobStatus::InProgress);
            for p in m.job.scenarios.iter_mut().filter(|p| !p.status.is_done()) {
                if shared.store.has_result(name, &p.scenario) {
                    // written before the manifest caught up
                    p.status = ScenarioStatus::Finished;
                } else {
                    p.status = ScenarioStatus::Queued;
                    let spec = m.scenarios.iter().find(|s| s.scenario_name == p.scenario);
                    resume.extend(spec.map(|s| Task {
                        case: name.clone(),
                        spec: s.clone(),
                    }));
                }
            }
            m.job.refresh();
            shared.store.write_manifest(m)?;
        }
        *lock(&shared.cases) = cases;
        for t in resume {
            tx.send(t).expect("workers alive");
        }
        Ok(Middleware {
            shared,
            tx: Some(tx),
            workers,
        })
    }

    pub fn store(&self) -> &Store {
        &self.shared.store
    }

    pub fn runner(&self) -> &Arc<dyn ScenarioRunner> {
        &self.shared.runner
    }

    /// Scenarios simulated since this instance was opened.
    pub fn runs_executed(&self) -> usize {
        self.shared.runs.load(Ordering::SeqCst)
    }

    fn check_specs(&self, config: &CaseConfig, specs: &[ScenarioSpec]) -> Result<()> {
        let climates = self.shared.runner.climate_files();
        if !climates.contains(&config.climate_file) {
            return Err(MiddlewareError::InvalidConfig(format!(
                "unknown climate file `{}` (available: {})",
                config.climate_file,
                climates.join(", ")
            )));
        }
        for s in specs {
            self.shared
                .runner
                .check(s)
                .map_err(|e| MiddlewareError::InvalidConfig(format!("{}: {e}", s.scenario_name)))?;
        }
        Ok(())
    }

    fn enqueue(&self, case: &str, specs: impl IntoIterator<Item = ScenarioSpec>) {
        let tx = self.tx.as_ref().expect("open middleware");
        for spec in specs {
            tx.send(Task {
                case: case.to_string(),
                spec,
            })
            .expect("workers alive");
        }
    }

    /// Validates, persists and queues a new case. Returns without waiting
    /// for any simulation.
    pub fn submit_case(&self, config: CaseConfig) -> Result<JobRecord> {
        let specs = expand_scenario_grid(&config)?;
        self.check_specs(&config, &specs)?;
        let mut cases = lock(&self.shared.cases);
        if cases.contains_key(&config.case_name) || self.shared.store.case_names()?.contains(&config.case_name) {
            return Err(MiddlewareError::DuplicateCase(config.case_name));
        }
        let names: Vec<String> = specs.iter().map(|s| s.scenario_name.clone()).collect();
        let mut job = JobRecord::new(&config.case_name, &names);
        job.transition(JobStatus::InProgress);
        let manifest = CaseManifest {
            config: config.clone(),
            scenarios: specs.clone(),
            job: job.clone(),
        };
        self.shared.store.write_manifest(&manifest)?;
        cases.insert(config.case_name.clone(), manifest);
        drop(cases);
        self.enqueue(&config.case_name, specs);
        Ok(job)
    }

    /// Replaces a finished case's adjustments (and optionally its climate
    /// file). Results whose scenario is unchanged are kept; the rest of the
    /// old grid is deleted and only new or changed scenarios run.
    pub fn edit_case(
        &self,
        case: &str,
        adjustments: Vec<VariableAdjustment>,
        climate_file: Option<String>,
    ) -> Result<JobRecord> {
        let mut cases = lock(&self.shared.cases);
        let old = cases
            .get(case)
            .ok_or_else(|| MiddlewareError::UnknownCase(case.to_string()))?;
        if !old.job.status.is_terminal() {
            return Err(MiddlewareError::CaseBusy(case.to_string()));
        }
        let config = CaseConfig {
            case_name: case.to_string(),
            climate_file: climate_file.unwrap_or_else(|| old.config.climate_file.clone()),
            adjustments,
        };
        let specs = expand_scenario_grid(&config)?;
        self.check_specs(&config, &specs)?;

        let done: HashSet<&str> = old
            .job
            .scenarios
            .iter()
            .filter(|p| matches!(p.status, ScenarioStatus::Finished | ScenarioStatus::Reused))
            .map(|p| p.scenario.as_str())
            .collect();
        let reusable = |s: &ScenarioSpec| {
            done.contains(s.scenario_name.as_str())
                && old.scenarios.iter().any(|o| o == s)
                && self.shared.store.has_result(case, &s.scenario_name)
        };
        let reuse: HashSet<String> = specs
            .iter()
            .filter(|s| reusable(s))
            .map(|s| s.scenario_name.clone())
            .collect();
        let warnings: HashMap<&str, bool> = old
            .job
            .scenarios
            .iter()
            .map(|p| (p.scenario.as_str(), p.coupling_warning))
            .collect();

        let names: Vec<String> = specs.iter().map(|s| s.scenario_name.clone()).collect();
        let mut job = JobRecord::new(case, &names);
        for p in job.scenarios.iter_mut() {
            if reuse.contains(&p.scenario) {
                p.status = ScenarioStatus::Reused;
                p.coupling_warning = warnings.get(p.scenario.as_str()).copied().unwrap_or(false);
            }
        }
        job.transition(JobStatus::InProgress);
        job.refresh();

        let stale: Vec<String> = old
            .scenarios
            .iter()
            .map(|s| s.scenario_name.clone())
            .filter(|n| !reuse.contains(n))
            .collect();
        for name in &stale {
            self.shared.store.delete_result(case, name)?;
        }
        self.forget_cached(case);
        let to_run: Vec<ScenarioSpec> = specs
            .iter()
            .filter(|s| !reuse.contains(&s.scenario_name))
            .cloned()
            .collect();
        let manifest = CaseManifest {
            config,
            scenarios: specs,
            job: job.clone(),
        };
        self.shared.store.write_manifest(&manifest)?;
        cases.insert(case.to_string(), manifest);
        drop(cases);
        self.shared.changed.notify_all();
        self.enqueue(case, to_run);
        Ok(job)
    }

    pub fn delete_case(&self, case: &str) -> Result<()> {
        let mut cases = lock(&self.shared.cases);
        let m = cases
            .get(case)
            .ok_or_else(|| MiddlewareError::UnknownCase(case.to_string()))?;
        if !m.job.status.is_terminal() {
            return Err(MiddlewareError::CaseBusy(case.to_string()));
        }
        self.shared.store.delete_case(case)?;
        cases.remove(case);
        drop(cases);
        self.forget_cached(case);
        self.shared.changed.notify_all();
        Ok(())
    }

    pub fn cases(&self) -> Vec<CaseManifest> {
        lock(&self.shared.cases).values().cloned().collect()
    }

    pub fn case(&self, case: &str) -> Result<CaseManifest> {
        lock(&self.shared.cases)
            .get(case)
            .cloned()
            .ok_or_else(|| MiddlewareError::UnknownCase(case.to_string()))
    }

    pub fn status(&self, case: &str) -> Result<JobRecord> {
        self.case(case).map(|m| m.job)
    }

    /// Blocks until the case's job is terminal or `timeout` elapses, and
    /// returns the latest record either way.
    pub fn wait(&self, case: &str, timeout: Duration) -> Result<JobRecord> {
        let deadline = Instant::now() + timeout;
        let mut cases = lock(&self.shared.cases);
        loop {
            let job = cases
                .get(case)
                .ok_or_else(|| MiddlewareError::UnknownCase(case.to_string()))?
                .job
                .clone();
            let now = Instant::now();
            if job.status.is_terminal() || now >= deadline {
                return Ok(job);
            }
            cases = self
                .shared
                .changed
                .wait_timeout(cases, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Cases holding a completed result for `scenario`, in name order.
    pub fn cases_with(&self, scenario: &str) -> Vec<String> {
        lock(&self.shared.cases)
            .iter()
            .filter(|(_, m)| {
                m.job.scenarios.iter().any(|p| {
                    p.scenario == scenario
                        && matches!(p.status, ScenarioStatus::Finished | ScenarioStatus::Reused)
                })
            })
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Loads a completed scenario result. Without a case, the first case (by
    /// name) holding that scenario is used.
    pub fn result(&self, case: Option<&str>, scenario: &str) -> Result<(String, Arc<ScenarioResult>)> {
        let case = match case {
            Some(c) => {
                let m = self.case(c)?;
                let p = m
                    .job
                    .scenarios
                    .iter()
                    .find(|p| p.scenario == scenario)
                    .ok_or_else(|| {
                        MiddlewareError::NotFound(format!("scenario `{scenario}` in case `{c}`"))
                    })?;
                if !matches!(p.status, ScenarioStatus::Finished | ScenarioStatus::Reused) {
                    return Err(MiddlewareError::NotFound(format!(
                        "result for scenario `{scenario}` (status {:?})",
                        p.status
                    )));
                }
                c.to_string()
            }
            None => self
                .cases_with(scenario)
                .into_iter()
                .next()
                .ok_or_else(|| MiddlewareError::NotFound(format!("scenario `{scenario}`")))?,
        };
        let key = (case.clone(), scenario.to_string());
        if let Some(r) = lock(&self.shared.cache).get(&key) {
            return Ok((case, r.clone()));
        }
        let r = Arc::new(self.shared.store.read_result(&case, scenario)?);
        let mut cache = lock(&self.shared.cache);
        if cache.len() >= self.shared.cache_capacity {
            cache.clear();
        }
        cache.insert(key, r.clone());
        Ok((case, r))
    }

    fn forget_cached(&self, case: &str) {
        lock(&self.shared.cache).retain(|(c, _), _| c != case);
    }

    /// Stops the workers after their current scenario. Queued scenarios stay
    /// queued in the store and resume on the next [`Middleware::open`].
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.tx.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Middleware {
    fn drop(&mut self) {
        self.stop();
    }
}

fn worker(shared: Arc<Shared>, rx: Receiver<Task>) {
    while let Ok(task) = rx.recv() {
        if shared.stopping.load(Ordering::SeqCst) {
            continue;
        }
        let name = task.spec.scenario_name.clone();
        {
            let mut cases = lock(&shared.cases);
            let Some(p) = cases.get_mut(&task.case).and_then(|m| m.job.progress_mut(&name)) else {
                continue;
            };
            if p.status != ScenarioStatus::Queued {
                continue;
            }
            p.status = ScenarioStatus::Running;
        }

        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| shared.runner.run(&task.spec)))
            .unwrap_or_else(|panic| {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Err(format!("runner panicked: {msg}"))
            });
        shared.runs.fetch_add(1, Ordering::SeqCst);
        let outcome = outcome.and_then(|r| {
            let warning = r.diagnostics.warning;
            shared
                .store
                .write_result_bytes(&task.case, &name, &Store::encode_result(&r))
                .map(|_| warning)
                .map_err(|e| e.to_string())
        });

        let mut cases = lock(&shared.cases);
        if let Some(m) = cases.get_mut(&task.case) {
            if let Some(p) = m.job.progress_mut(&name) {
                match outcome {
                    Ok(warning) => {
                        p.status = ScenarioStatus::Finished;
                        p.coupling_warning = warning;
                    }
                    Err(e) => {
                        p.status = ScenarioStatus::Failed;
                        p.error = Some(e);
                    }
                }
            }
            m.job.refresh();
            if let Err(e) = shared.store.write_manifest(m) {
                eprintln!("fewsim: could not persist job state for `{}`: {e}", task.case);
            }
        }
        drop(cases);
        shared.changed.notify_all();
    }
}
