//! End-to-end tests through the eventflow binary: exit codes, subcommand
//! artifacts, and determinism of the synth and run paths.

use std::path::{Path, PathBuf};
use std::process::Output;

use eventflow::geo::write_regions_geojson;
use eventflow::synth::{rect_region, standard_scenario};

fn run_binary(args: &[&str], cwd: &Path) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_eventflow"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

/// Small scenario + config fixture; returns (scenario path, config path).
fn write_fixture(dir: &Path, cohort: usize, seed: u64) -> (PathBuf, PathBuf) {
    let spec = standard_scenario(seed, cohort);
    write_regions_geojson(&spec.regions, &dir.join("regions.geojson")).unwrap();
    write_regions_geojson(
        std::slice::from_ref(&spec.event.corridor),
        &dir.join("corridor.geojson"),
    )
    .unwrap();
    let scenario = format!(
        "\
regions = regions.geojson
corridor = corridor.geojson
seed = {seed}
cohort_size = {cohort}
records_min = 15
records_max = 30
home_fidelity = 0.8
home_sigma_m = 20000
history_days = 90
event_day = 2017-08-21
keywords = eclipse,totality
travel.Z00.Z04 = 1.0
travel.Z01.Z04 = 1.0
travel.Z02.Z05 = 1.0
travel.Z03.Z03 = 1.0
travel.Z04.Z04 = 0.65
travel.Z04.Z03 = 0.175
travel.Z04.Z05 = 0.175
travel.Z05.Z05 = 1.0
travel.Z06.Z03 = 1.0
travel.Z07.Z04 = 1.0
travel.Z08.Z05 = 1.0
"
    );
    let spec_path = dir.join("scenario.conf");
    std::fs::write(&spec_path, scenario).unwrap();
    let config = "\
store = synth/store.ndjson
regions = regions.geojson
corridor = corridor.geojson
keywords = eclipse,totality
window_start = 2017-08-21
window_end = 2017-08-22
grid_max_dim = 256
destinations = Z03,Z04,Z05
";
    let config_path = dir.join("pipeline.conf");
    std::fs::write(&config_path, config).unwrap();
    (spec_path, config_path)
}

fn synth_fixture(dir: &Path, cohort: usize, seed: u64) -> (PathBuf, PathBuf) {
    let (spec_path, config_path) = write_fixture(dir, cohort, seed);
    let out = run_binary(
        &["synth", "--spec", spec_path.to_str().unwrap(), "--out-dir", "synth"],
        dir,
    );
    assert_eq!(exit_code(&out), 0, "synth: {out:?}");
    (spec_path, config_path)
}

#[test]
fn synth_is_deterministic_and_errors_on_missing_regions() {
    let dir = tempfile::tempdir().unwrap();
    let (spec_path, _) = write_fixture(dir.path(), 30, 7);

    for out_dir in ["a", "b"] {
        let out = run_binary(
            &["synth", "--spec", spec_path.to_str().unwrap(), "--out-dir", out_dir],
            dir.path(),
        );
        assert_eq!(exit_code(&out), 0, "{out:?}");
    }
    for file in ["store.ndjson", "ground_truth.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical synth runs");
    }

    // A spec referencing a missing regions file exits 2 and names the path.
    let bad_spec = dir.path().join("bad.conf");
    std::fs::write(
        &bad_spec,
        "regions = nowhere.geojson\ncorridor = corridor.geojson\ncohort_size = 5\nevent_day = 2017-08-21\n",
    )
    .unwrap();
    let out = run_binary(&["synth", "--spec", bad_spec.to_str().unwrap()], dir.path());
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere.geojson"), "stderr: {stderr}");
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path(), 20, 11);

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "store = synth/store.ndjson\nwhat_is_this = 1\n").unwrap();
    for sub in ["run", "filter", "surface"] {
        let mut args = vec![sub, "--config", bad.to_str().unwrap()];
        if sub == "surface" {
            args.extend(["--user", "user00000"]);
        }
        let out = run_binary(&args, dir.path());
        assert_eq!(exit_code(&out), 2, "{sub}: {out:?}");
    }

    // Missing --config is also a usage/config error.
    let out = run_binary(&["run"], dir.path());
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn surface_subcommand_writes_both_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config_path) = synth_fixture(dir.path(), 25, 13);

    let out = run_binary(
        &[
            "surface",
            "--config",
            config_path.to_str().unwrap(),
            "--out-dir",
            "surfaces",
            "--user",
            "user00003",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let fixed = parse_asc(&dir.path().join("surfaces/user00003_fixed.asc"));
    let vb = parse_asc(&dir.path().join("surfaces/user00003_vb.asc"));
    let fixed_max = fixed.iter().copied().fold(0.0f64, f64::max);
    let vb_max = vb.iter().copied().fold(0.0f64, f64::max);
    assert!(
        vb_max <= fixed_max * (1.0 + 1e-9),
        "vb max {vb_max} should not exceed fixed max {fixed_max}"
    );

    // Unknown user exits 3.
    let out = run_binary(
        &[
            "surface",
            "--config",
            config_path.to_str().unwrap(),
            "--out-dir",
            "surfaces",
            "--user",
            "nobody",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn surface_of_single_coordinate_record_is_scale_independent() {
    let dir = tempfile::tempdir().unwrap();
    let regions = eventflow::synth::grid_regions(1, 1, 40.0, -100.0, 2.0, &[1000]);
    write_regions_geojson(&regions, &dir.path().join("regions.geojson")).unwrap();
    let corridor = rect_region("corr", 40.0, 42.0, -100.0, -98.0, 0, None);
    write_regions_geojson(std::slice::from_ref(&corridor), &dir.path().join("corridor.geojson"))
        .unwrap();
    std::fs::write(
        dir.path().join("store.ndjson"),
        "{\"record_id\":\"r1\",\"user_id\":\"solo\",\"timestamp_utc\":1503335760,\"text\":\"eclipse\",\"lat\":41.0,\"lon\":-99.0}\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("conf"),
        "store = store.ndjson\nregions = regions.geojson\ncorridor = corridor.geojson\nwindow_start = 2017-08-21\nwindow_end = 2017-08-22\n",
    )
    .unwrap();
    let out = run_binary(
        &[
            "surface",
            "--config",
            dir.path().join("conf").to_str().unwrap(),
            "--out-dir",
            "s",
            "--user",
            "solo",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let fixed = std::fs::read(dir.path().join("s/solo_fixed.asc")).unwrap();
    let vb = std::fs::read(dir.path().join("s/solo_vb.asc")).unwrap();
    assert_eq!(fixed, vb, "a lone coordinate record has Area_p = 0, so both modes agree");
}

fn parse_asc(path: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(6)
        .flat_map(|l| l.split_whitespace())
        .map(|v| v.parse::<f64>().unwrap())
        .collect()
}

#[test]
fn run_writes_manifest_whose_counts_reconcile() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config_path) = synth_fixture(dir.path(), 40, 17);

    let out = run_binary(
        &["run", "--config", config_path.to_str().unwrap(), "--out-dir", "out"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    let get = |key: &str| -> i64 {
        manifest
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap_or_else(|| panic!("manifest missing {key}"))
            .parse()
            .unwrap()
    };
    assert_eq!(
        get("event_users"),
        get("users_with_history") + get("users_empty_history"),
        "selected users must reconcile with history outcomes"
    );
    assert_eq!(
        get("homes_determined") + get("homes_undetermined"),
        get("event_users")
    );
    assert!(get("filtered_records") > 0);
    assert_eq!(get("malformed_lines"), 0);
    // Every user participates in the event on event day, so every selected
    // user carries history.
    assert_eq!(get("users_empty_history"), 0);

    for file in [
        "filtered.ndjson",
        "users.csv",
        "histories.ndjson",
        "history_stats.csv",
        "homes.csv",
        "hotspots_raw.csv",
        "hotspots_rate.csv",
        "temporal.csv",
        "flows_Z03.csv",
        "flows_Z04.csv",
        "flows_Z05.csv",
    ] {
        assert!(dir.path().join("out").join(file).exists(), "{file} missing");
    }
}

#[test]
fn run_aborts_cleanly_when_no_event_users() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config_path) = synth_fixture(dir.path(), 15, 19);

    // A window before the event matches nothing.
    let config = std::fs::read_to_string(&config_path)
        .unwrap()
        .replace("window_start = 2017-08-21", "window_start = 2016-01-01")
        .replace("window_end = 2017-08-22", "window_end = 2016-01-02");
    let early = dir.path().join("early.conf");
    std::fs::write(&early, config).unwrap();
    let out = run_binary(
        &["run", "--config", early.to_str().unwrap(), "--out-dir", "out-early"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no event users"), "stderr: {stderr}");
    // The filter stage's artifact is retained even though the run aborted.
    assert!(dir.path().join("out-early/filtered.ndjson").exists());
    assert!(!dir.path().join("out-early/manifest.txt").exists());
}

#[test]
fn stage_subcommands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config_path) = synth_fixture(dir.path(), 25, 23);
    let config = config_path.to_str().unwrap();

    for (args, file) in [
        (vec!["filter"], "filtered.ndjson"),
        (vec!["users"], "users.csv"),
        (vec!["histories"], "histories.ndjson"),
        (vec!["stats"], "history_stats.csv"),
        (vec!["infer-home"], "homes.csv"),
        (vec!["hotspot"], "hotspots_rate.csv"),
        (vec!["temporal"], "temporal.csv"),
        (vec!["flows"], "flows_Z04.csv"),
    ] {
        let mut full = args.clone();
        full.extend(["--config", config, "--out-dir", "stage-out"]);
        let out = run_binary(&full, dir.path());
        assert_eq!(exit_code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(
            dir.path().join("stage-out").join(file).exists(),
            "{args:?} did not write {file}"
        );
    }

    // Stage outputs equal the run outputs byte for byte.
    let out = run_binary(&["run", "--config", config, "--out-dir", "run-out"], dir.path());
    assert_eq!(exit_code(&out), 0);
    for file in ["filtered.ndjson", "users.csv", "homes.csv", "temporal.csv"] {
        let stage = std::fs::read(dir.path().join("stage-out").join(file)).unwrap();
        let run = std::fs::read(dir.path().join("run-out").join(file)).unwrap();
        assert_eq!(stage, run, "{file} differs between stage subcommand and run");
    }
}

#[test]
fn compare_flows_detects_redirected_neighbor() {
    let dir = tempfile::tempdir().unwrap();
    // Baseline scenario: Z01 sends most travelers to Z00; event scenario
    // redirects them to Z02/Z03.
    let regions = eventflow::synth::grid_regions(2, 2, 40.0, -100.0, 2.0, &[1_000_000; 4]);
    write_regions_geojson(&regions, &dir.path().join("regions.geojson")).unwrap();
    let corridor = rect_region("corr", 40.0, 44.0, -100.0, -96.0, 0, None);
    write_regions_geojson(std::slice::from_ref(&corridor), &dir.path().join("corridor.geojson"))
        .unwrap();

    let scenario = |name: &str, seed: u64, n1_to_d: f64, others_to_d: f64| -> PathBuf {
        let text = format!(
            "\
regions = regions.geojson
corridor = corridor.geojson
seed = {seed}
cohort_size = 120
records_min = 10
records_max = 20
home_fidelity = 0.85
home_sigma_m = 15000
history_days = 90
event_day = 2017-08-21
keywords = eclipse,totality
travel.Z00.Z00 = 1.0
travel.Z01.Z00 = {n1_to_d}
travel.Z01.Z01 = {n1_stay}
travel.Z02.Z00 = {others_to_d}
travel.Z02.Z02 = {others_stay}
travel.Z03.Z00 = {others_to_d}
travel.Z03.Z03 = {others_stay}
",
            n1_stay = 1.0 - n1_to_d,
            others_stay = 1.0 - others_to_d,
        );
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    };
    let baseline_spec = scenario("baseline.conf", 501, 0.5, 0.2);
    let event_spec = scenario("event.conf", 502, 0.02, 0.45);
    for (spec, out) in [(&baseline_spec, "baseline"), (&event_spec, "event")] {
        let output = run_binary(
            &["synth", "--spec", spec.to_str().unwrap(), "--out-dir", out],
            dir.path(),
        );
        assert_eq!(exit_code(&output), 0, "{output:?}");
    }

    // The baseline period sits two weeks before the event week; shift the
    // baseline store's timestamps there so the window selection has
    // something to find.
    shift_store_times(
        &dir.path().join("baseline/store.ndjson"),
        -14 * 86_400,
    );

    let config = "\
store = event/store.ndjson
baseline_store = baseline/store.ndjson
regions = regions.geojson
corridor = corridor.geojson
keywords = eclipse,totality
window_start = 2017-08-21
window_end = 2017-08-22
baseline_window_start = 2017-08-07
baseline_window_end = 2017-08-08
grid_max_dim = 256
destinations = Z00
";
    let config_path = dir.path().join("compare.conf");
    std::fs::write(&config_path, config).unwrap();
    let out = run_binary(
        &[
            "compare-flows",
            "--config",
            config_path.to_str().unwrap(),
            "--out-dir",
            "cmp",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(dir.path().join("cmp/comparison_Z00.csv")).unwrap();
    let mut z01 = None;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1] == "Z01" {
            z01 = Some((
                fields[2].parse::<f64>().unwrap(),
                fields[3].parse::<f64>().unwrap(),
                fields[5].parse::<u32>().unwrap(),
                fields[6].parse::<u32>().unwrap(),
            ));
        }
    }
    let (share_baseline, share_event, rank_baseline, rank_event) =
        z01.expect("redirected origin Z01 missing from comparison");
    assert!(
        share_event < share_baseline,
        "share should drop: {share_baseline} -> {share_event}"
    );
    assert!(
        rank_event > rank_baseline,
        "rank should drop: {rank_baseline} -> {rank_event}"
    );

    // compare-flows without baseline keys is a config error.
    let (_, plain_config) = write_fixture(dir.path(), 10, 29);
    std::fs::rename(dir.path().join("synth"), dir.path().join("synth-bak")).ok();
    let out = run_binary(
        &["compare-flows", "--config", plain_config.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 2);
}

/// Rewrites timestamp_utc in an NDJSON store by a fixed offset.
fn shift_store_times(path: &Path, offset: i64) {
    let store = eventflow::ingest::RecordStore::open(path).unwrap();
    let shifted: Vec<eventflow::geo::GeoRecord> = store
        .stream()
        .map(|r| {
            let mut r = r.clone();
            r.timestamp_utc += offset;
            r
        })
        .collect();
    eventflow::ingest::RecordStore::from_records(shifted)
        .write_ndjson(path)
        .unwrap();
}

#[test]
fn validate_profiles_reports_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config_path) = synth_fixture(dir.path(), 30, 31);

    // Ground truth supplies profile texts that should agree with the
    // estimates; two users get unmappable or disagreeing text.
    let truth =
        eventflow::synth::GroundTruth::from_csv_path(&dir.path().join("synth/ground_truth.csv"))
            .unwrap();
    let mut gazetteer = String::new();
    for r in ["Z00", "Z01", "Z02", "Z03", "Z04", "Z05", "Z06", "Z07", "Z08"] {
        gazetteer.push_str(&format!("State {r},{r}\n"));
        // Two-letter abbreviation per zone: K0..K8.
        gazetteer.push_str(&format!("K{},{r}\n", &r[1..2]));
    }
    std::fs::write(dir.path().join("gazetteer.csv"), &gazetteer).unwrap();
    let mut profiles = String::new();
    for (i, user) in truth.users.iter().enumerate() {
        let text = match i {
            0 => "somewhere nice".to_string(),
            1 => "United States".to_string(),
            _ => format!("Town, State {}", user.home_region_id),
        };
        profiles.push_str(&format!("{},\"{}\"\n", user.user_id, text));
    }
    std::fs::write(dir.path().join("profiles.csv"), &profiles).unwrap();

    let config = format!(
        "{}gazetteer = gazetteer.csv\nprofiles = profiles.csv\n",
        std::fs::read_to_string(&config_path).unwrap()
    );
    std::fs::write(&config_path, config).unwrap();

    let out = run_binary(
        &[
            "validate-profiles",
            "--config",
            config_path.to_str().unwrap(),
            "--out-dir",
            "profiles-out",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let agreement = std::fs::read_to_string(dir.path().join("profiles-out/agreement.txt")).unwrap();
    let rate: f64 = agreement
        .trim()
        .strip_prefix("agreement_rate = ")
        .unwrap()
        .parse()
        .unwrap();
    // Profiles were built from the truth, so agreement tracks inference
    // accuracy (high, but short histories miss a few homes).
    assert!(rate > 0.8, "agreement rate {rate}");

    // The reported rate reconciles with the per-user match rows.
    let matches =
        std::fs::read_to_string(dir.path().join("profiles-out/profile_matches.csv")).unwrap();
    let mut agree = 0u64;
    let mut comparable = 0u64;
    for line in matches.lines().skip(1) {
        match line.rsplit(',').next() {
            Some("true") => {
                agree += 1;
                comparable += 1;
            }
            Some("false") => comparable += 1,
            _ => {}
        }
    }
    assert!(comparable > 0);
    assert!((rate - agree as f64 / comparable as f64).abs() < 1e-12);
}
