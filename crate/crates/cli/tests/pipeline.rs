//! End-to-end subcommand tests: artifact shapes, determinism, exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn betastacy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betastacy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_scenario(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    fs::write(
        &path,
        format!(
            r#"{{
  "n_per_group": 30,
  "groups": [
    {{"components": [{{"shape": 2.1, "scale": 5.0, "weight": 0.5}},
                     {{"shape": 1.2, "scale": 5.5, "weight": 0.5}}]}},
    {{"components": [{{"shape": 2.1, "scale": 5.0, "weight": 0.5}},
                     {{"shape": 5.3, "scale": 4.75, "weight": 0.5}}]}}
  ],
  "censoring": [{{"rate": 0.05}}, {{"rate": 0.05}}],
  "seed": {seed},
  "horizons": [10.0]
}}"#
        ),
    )
    .unwrap();
    path
}

/// Strips the volatile timestamp line so outputs can be compared bytewise.
fn stable_json(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("generated_at"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn simulate_km_fit_survival_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 11);
    let sim = dir.path().join("sim");
    assert_success(&betastacy(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
    ]));
    let data = sim.join("data.csv");
    let csv = fs::read_to_string(&data).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time,event,group");
    assert_eq!(csv.lines().count(), 61); // header + 30 per group
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["horizons"][0], 10.0);
    assert!(truth["restricted_means"][0][0].as_f64().unwrap() > 0.0);

    let km = dir.path().join("km");
    assert_success(&betastacy(&[
        "km",
        "--data",
        data.to_str().unwrap(),
        "--out",
        km.to_str().unwrap(),
    ]));
    let km_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(km.join("km.json")).unwrap()).unwrap();
    let survival = km_json["curves"][0]["survival"].as_array().unwrap();
    let values: Vec<f64> = survival.iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-12), "KM must be nonincreasing");

    let fit = dir.path().join("fit");
    assert_success(&betastacy(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--simplex-step",
        "0.5",
        "--taus",
        "4.0",
        "--out",
        fit.to_str().unwrap(),
    ]));
    let hyperfit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit.join("hyperfit.json")).unwrap()).unwrap();
    let rows = hyperfit["surface_rows"].as_u64().unwrap() as usize;
    let surface = fs::read_to_string(fit.join("surface.csv")).unwrap();
    assert_eq!(surface.lines().count(), rows + 1, "surface rows must match the grid");
    let best = hyperfit["best_log_likelihood"].as_f64().unwrap();
    for line in surface.lines().skip(1) {
        let loglik: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(loglik <= best + 1e-9);
    }

    let surv = dir.path().join("surv");
    assert_success(&betastacy(&[
        "survival",
        "--data",
        data.to_str().unwrap(),
        "--spec",
        fit.join("best_prior.json").to_str().unwrap(),
        "--out",
        surv.to_str().unwrap(),
    ]));
    let curves: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(surv.join("curves.json")).unwrap()).unwrap();
    for curve in curves["ntr"].as_array().unwrap() {
        let s = curve["survival"].as_array().unwrap();
        assert_eq!(s[0].as_f64().unwrap(), 1.0, "survival starts at 1 at t = 0");
        let vals: Vec<f64> = s.iter().map(|v| v.as_f64().unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    let cmp = dir.path().join("cmp");
    assert_success(&betastacy(&[
        "compare",
        "--data",
        data.to_str().unwrap(),
        "--pi1",
        "0.5,0.25,0.25",
        "--gamma",
        "1",
        "--baseline-rate",
        "0.3",
        "--horizons",
        "8",
        "--moments",
        "4",
        "--refine",
        "128",
        "--tail-c",
        "0",
        "--out",
        cmp.to_str().unwrap(),
    ]));
    let densities: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cmp.join("densities.json")).unwrap()).unwrap();
    let results = densities["results"].as_array().unwrap();
    assert_eq!(results.len(), 1, "one density per horizon");
    let tail = &results[0]["tail"][0];
    assert_eq!(tail["c"], 0.0);
    assert!((tail["prob_sq_exceeds"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let hpd: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cmp.join("hpd.json")).unwrap()).unwrap();
    assert!(hpd["results"][0]["mass"].as_f64().unwrap() >= 0.95);
}

#[test]
fn near_exchangeable_prior_hpd_contains_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 5);
    let sim = dir.path().join("sim");
    assert_success(&betastacy(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
    ]));
    let cmp = dir.path().join("cmp");
    assert_success(&betastacy(&[
        "compare",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--pi1",
        "1,0,0",
        "--horizons",
        "8",
        "--moments",
        "4",
        "--refine",
        "128",
        "--out",
        cmp.to_str().unwrap(),
    ]));
    let hpd: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cmp.join("hpd.json")).unwrap()).unwrap();
    let intervals = hpd["results"][0]["intervals"].as_array().unwrap();
    let lo = intervals[0][0].as_f64().unwrap();
    let hi = intervals.last().unwrap()[1].as_f64().unwrap();
    assert!(lo <= 0.0 && 0.0 <= hi, "exchangeable HPD [{lo}, {hi}] must contain 0");
}

#[test]
fn outputs_are_deterministic_for_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), 23);
    // Two simulate runs with the same seed produce identical datasets.
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_success(&betastacy(&[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        fs::read_to_string(a.join("data.csv")).unwrap(),
        fs::read_to_string(b.join("data.csv")).unwrap()
    );
    assert_eq!(stable_json(&a.join("truth.json")), stable_json(&b.join("truth.json")));

    // Two compare runs over the same input are byte-identical apart from
    // the timestamp.
    let data = a.join("data.csv");
    for out in [&a, &b] {
        assert_success(&betastacy(&[
            "compare",
            "--data",
            data.to_str().unwrap(),
            "--pi1",
            "0.5,0.25,0.25",
            "--horizons",
            "6",
            "--moments",
            "3",
            "--refine",
            "64",
            "--out",
            out.join("cmp").to_str().unwrap(),
        ]));
    }
    assert_eq!(
        stable_json(&a.join("cmp/densities.json")),
        stable_json(&b.join("cmp/densities.json"))
    );
    assert_eq!(stable_json(&a.join("cmp/hpd.json")), stable_json(&b.join("cmp/hpd.json")));
}

#[test]
fn exit_codes_distinguish_config_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    // Missing data file: configuration error.
    let out = betastacy(&[
        "km",
        "--data",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Bad CSV row: configuration error with a line number.
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "time,event,group\n1.0,1,1\n-3.0,1,2\n").unwrap();
    let out = betastacy(&[
        "km",
        "--data",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // --pi2 without --tau: configuration error.
    let good = dir.path().join("good.csv");
    fs::write(&good, "time,event,group\n1.0,1,1\n2.0,0,2\n").unwrap();
    let out = betastacy(&[
        "survival",
        "--data",
        good.to_str().unwrap(),
        "--pi1",
        "0.5,0.25,0.25",
        "--pi2",
        "1,0,0",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Infeasible mesh for the requested moments: numerical failure.
    let out = betastacy(&[
        "compare",
        "--data",
        good.to_str().unwrap(),
        "--pi1",
        "0.5,0.25,0.25",
        "--horizons",
        "2",
        "--moments",
        "2",
        "--refine",
        "64",
        "--mesh-lo",
        "5.0",
        "--mesh-hi",
        "6.0",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn survival_without_data_emits_prior_centering_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("prior");
    // Fully shared score: the prior mean survival is the baseline exactly.
    assert_success(&betastacy(&[
        "survival",
        "--pi1",
        "1,0,0",
        "--gamma",
        "2",
        "--baseline-rate",
        "0.4",
        "--t-max",
        "5",
        "--grid-points",
        "11",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let curves: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("curves.json")).unwrap())
            .unwrap();
    let times = curves["ntr"][0]["times"].as_array().unwrap();
    let survival = curves["ntr"][0]["survival"].as_array().unwrap();
    for (t, s) in times.iter().zip(survival) {
        let want = (-0.4 * t.as_f64().unwrap()).exp();
        assert!((s.as_f64().unwrap() - want).abs() < 1e-12);
    }
    assert!(curves.get("km").is_none() || curves["km"].as_array().is_none_or(|a| a.is_empty()));
}
