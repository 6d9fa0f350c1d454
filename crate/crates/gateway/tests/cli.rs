use std::path::Path;
use std::process::{Command, Output};

use fewsim_core::dataset::bundled_dir;
use fewsim_core::fmlm::FmlmCoefficients;
use fewsim_core::load_bundled;

fn fewsim(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewsim"))
        .args(args)
        .env("FEWSIM_DATA_DIR", data_dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fewsim(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(fewsim(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let o = fewsim(dir.path(), &["simulate", "--case", "x", "--climate", "ssp245", "--adjust", "municipal_wue:0:30"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(fewsim(dir.path(), &["simulate", "--climate", "ssp245"]).status.code(), Some(2));
}

#[test]
fn simulate_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let grid = [
        "simulate",
        "--case",
        "demo",
        "--climate",
        "ssp245",
        "--adjust",
        "municipal_wue:0:30:10",
        "--adjust",
        "household_eue:0:20:10",
        "--adjust",
        "irrigation_ie:0:20:10",
    ];
    let o = fewsim(dir.path(), &grid);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("36 of 36"));
    let results = std::fs::read_dir(dir.path().join("cases/demo/scenarios")).unwrap().count();
    assert_eq!(results, 36);

    let o = fewsim(dir.path(), &["export", "--case", "demo", "--indices"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("scenario,year,index,value,flagged"));
    assert_eq!(csv.lines().count(), 1 + 36 * 29 * 10);

    let out = dir.path().join("results.csv");
    let o = fewsim(dir.path(), &["export", "--case", "demo", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("scenario,branch,year,variable,value,unit"));
    assert!(text.lines().any(|l| l.starts_with("ssp245_301010,water/supply/SRP,2050,delivered,")));

    // the case already exists
    let o = fewsim(dir.path(), &grid);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already exists"));

    let o = fewsim(dir.path(), &["export", "--case", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown case"));
}

#[test]
fn unknown_strategy_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fewsim(
        dir.path(),
        &["simulate", "--case", "s", "--climate", "ssp245", "--allocator", "magic"],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("magic") && err.contains("priority-greedy"), "{err}");
}

#[test]
fn single_pass_case_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = fewsim(
        dir.path(),
        &["simulate", "--case", "sp", "--climate", "ssp585", "--coupling", "single-pass", "--adjust", "municipal_wue:15"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("cases/sp/scenarios/ssp585_15.json").is_file());
    assert!(dir.path().join("cases/sp/scenarios/ssp585_base.json").is_file());
}

#[test]
fn validate_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = fewsim(dir.path(), &["validate-dataset", bundled_dir().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 crops"));

    let bad = dir.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    for entry in std::fs::read_dir(bundled_dir()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), bad.join(entry.file_name())).unwrap();
    }
    let manifest = bad.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["crops"] = serde_json::json!([]);
    std::fs::write(&manifest, m.to_string()).unwrap();
    let o = fewsim(dir.path(), &["validate-dataset", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("schema violation at `crops`"), "{err}");

    let o = fewsim(dir.path(), &["validate-dataset", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_fmlm_reproduces_shipped_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("coef.csv");
    let o = fewsim(dir.path(), &["fit-fmlm", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("converged true"));
    let ds = load_bundled().unwrap();
    let crops: Vec<String> = ds.crops.iter().map(|c| c.id.clone()).collect();
    let fitted = FmlmCoefficients::read_csv(std::fs::File::open(&out).unwrap(), &crops).unwrap();
    for (a, b) in fitted.betas.iter().flatten().zip(ds.fmlm.betas.iter().flatten()) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}
