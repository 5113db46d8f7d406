use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn burstshape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_burstshape")).current_dir(root()).env("RUST_LOG", "warn").args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("burstshape-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn every_sample_scenario_runs_and_meets_its_expectations() {
    let mut names: Vec<_> = std::fs::read_dir(root().join("scenarios")).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for sc in names {
        let stem = sc.file_stem().unwrap().to_str().unwrap();
        let out = scratch(stem);
        let o = burstshape(&["run", sc.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{stem}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).lines().count() >= 2, "{stem}");
        assert!(!String::from_utf8_lossy(&o.stderr).contains("FAILED"), "{stem}");
        let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
        assert!(!files.is_empty(), "{stem} wrote nothing");
        std::fs::remove_dir_all(out).unwrap();
    }
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let o = burstshape(&["sweep", "wifi", "--rs", "128k,1M", "--t", "1:10", "--b", "1M:5M"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("technology,r_s_bps,buffer_bytes,interval_s,avg_power_mw"));
    assert_eq!(lines.count(), 2 * 10 * 5);
}

#[test]
fn sweep_rejects_a_bad_range() {
    let o = burstshape(&["sweep", "wifi", "--rs", "1M", "--t", "10:1", "--b", "1M"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_exit_code_follows_expectations() {
    let sc = "scenarios/video-hspa-configs.toml";
    let out = scratch("compare");
    let csv = out.join("rows.csv");
    let o = burstshape(&["compare", sc, "hspa-default", "hspa-nopch", "hspa-legacy-fd", "-o", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    // an expectation that names a profile left out of the comparison cannot hold
    let o = burstshape(&["compare", sc, "hspa-default", "hspa-nopch"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_dir_all(out).unwrap();
}

#[test]
fn profiles_round_trip_through_the_listing() {
    let o = burstshape(&["profiles"]);
    let names: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert!(names.contains(&"lte-drx-long".to_owned()));
    for n in &names {
        let dumped = stdout(&burstshape(&["profiles", n]));
        let shipped = std::fs::read_to_string(root().join("profiles").join(format!("{n}.toml"))).unwrap();
        assert_eq!(dumped, shipped, "{n}");
    }
    assert_eq!(burstshape(&["profiles", "gsm"]).status.code(), Some(2));
}

#[test]
fn unknown_scenario_is_an_error() {
    let o = burstshape(&["run", "scenarios/none.toml"]);
    assert_eq!(o.status.code(), Some(2));
}
