use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vibrancy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vibrancy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic inputs plus the generated pipeline config.
fn synth_inputs(dir: &Path, extra: &[&str]) -> PathBuf {
    let input = dir.join("in");
    let mut args = vec![
        "synth",
        "--out",
        s(&input),
        "--seed",
        "5",
        "--sigma",
        "2",
        "--cells",
        "120",
    ];
    args.extend_from_slice(extra);
    let o = vibrancy(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    input
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn chained_subcommands_match_run() {
    let tmp = tempfile::tempdir().unwrap();
    let input = synth_inputs(tmp.path(), &[]);
    // no truth file, so `run` writes exactly what the stage commands write
    let cfg_text = std::fs::read_to_string(input.join("pipeline.toml")).unwrap();
    let cfg_text: String = cfg_text
        .lines()
        .filter(|l| !l.starts_with("truth"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = input.join("no_truth.toml");
    std::fs::write(&cfg, cfg_text).unwrap();

    let run_out = tmp.path().join("run");
    let o = vibrancy(&["run", "--config", s(&cfg), "--out", s(&run_out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let c = tmp.path().join("chain");
    let region = input.join("region.json");
    let steps: Vec<Vec<String>> = vec![
        vec![
            "signatures",
            "--region",
            s(&region),
            "--traffic",
            s(&input.join("traffic.csv")),
            "--app-taxonomy",
            s(&input.join("app_taxonomy.csv")),
            "--day-type",
            "weekday",
            "--out",
            s(&c),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "cluster",
            "--risk",
            s(&c.join("risk.bin")),
            "--region",
            s(&region),
            "--seed",
            "5",
            "--k-min",
            "3",
            "--k-max",
            "10",
            "--out",
            s(&c),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "features",
            "--region",
            s(&region),
            "--pois",
            s(&input.join("pois.csv")),
            "--third-places",
            s(&input.join("third_places.csv")),
            "--labels",
            s(&c.join("labels.csv")),
            "--out",
            s(&c),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "fit",
            "--features",
            s(&c.join("features.csv")),
            "--labels",
            s(&c.join("labels.csv")),
            "--seed",
            "5",
            "--out",
            s(&c),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let o = vibrancy(&args);
        assert_eq!(code(&o), 0, "{}: {}", step[0], String::from_utf8_lossy(&o.stderr));
    }

    let from_run = files(&run_out.join("local/weekday/synthville"));
    let from_chain = files(&c);
    assert_eq!(
        from_run.keys().collect::<Vec<_>>(),
        from_chain.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &from_run {
        assert!(bytes == &from_chain[name], "{name} differs");
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"][0]["chosen_k"], 3);
    assert_eq!(manifest["runs"][0]["kept_seeds"].as_object().unwrap().len(), 8);
}

#[test]
fn missing_traffic_file_is_a_data_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let input = synth_inputs(tmp.path(), &[]);
    std::fs::remove_file(input.join("traffic.csv")).unwrap();
    let o = vibrancy(&[
        "run",
        "--config",
        s(&input.join("pipeline.toml")),
        "--out",
        s(&tmp.path().join("out")),
    ]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ingest"), "{err}");
    assert!(err.contains(s(&input.join("traffic.csv"))), "{err}");
}

#[test]
fn both_day_types_give_two_label_files_and_two_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let input = synth_inputs(tmp.path(), &["--day-type", "weekday", "--day-type", "weekend"]);
    let out = tmp.path().join("out");
    let o = vibrancy(&["run", "--config", s(&input.join("pipeline.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for day in ["weekday", "weekend"] {
        let dir = out.join("local").join(day).join("synthville");
        assert!(dir.join("labels.csv").is_file());
        assert!(dir.join("labels_synthville.geojson").is_file());
        assert!(dir.join("metrics.json").is_file());
    }
    let labels = walk(&out).into_iter().filter(|p| p.ends_with("labels.csv")).count();
    let metrics = walk(&out).into_iter().filter(|p| p.ends_with("metrics.json")).count();
    assert_eq!((labels, metrics), (2, 2));
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn report_rebuilds_tables_from_saved_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let input = synth_inputs(tmp.path(), &[]);
    let out = tmp.path().join("out");
    assert_eq!(
        code(&vibrancy(&[
            "run",
            "--config",
            s(&input.join("pipeline.toml")),
            "--out",
            s(&out)
        ])),
        0
    );
    let dir = out.join("local/weekday/synthville");
    let before = files(&dir);
    std::fs::remove_file(dir.join("coefficients.csv")).unwrap();
    std::fs::remove_file(dir.join("metrics.csv")).unwrap();

    let o = vibrancy(&["report", "--dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("chosen k = 3"), "{stdout}");
    assert!(stdout.contains("adjusted Rand index vs truth: 1.000000"), "{stdout}");
    let after = files(&dir);
    for name in ["coefficients.csv", "metrics.csv"] {
        assert!(after[name] == before[name], "{name} changed");
    }
    assert!(after.contains_key("k_selection.csv"));
}

#[test]
fn exit_codes_by_category() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&vibrancy(&["cluster", "--bogus"])), 1);
    assert_eq!(code(&vibrancy(&["run", "--out", s(tmp.path())])), 1);

    let input = synth_inputs(tmp.path(), &[]);
    let out = tmp.path().join("out");
    let cfg = input.join("pipeline.toml");
    assert_eq!(
        code(&vibrancy(&[
            "run",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--k-min",
            "5",
            "--k-max",
            "4"
        ])),
        1
    );
    assert_eq!(code(&vibrancy(&["run", "--config", s(&cfg), "--out", s(&out)])), 0);

    let manifest = out.join("manifest.json");
    let rerun = tmp.path().join("rerun");
    assert_eq!(
        code(&vibrancy(&[
            "run",
            "--manifest",
            s(&manifest),
            "--out",
            s(&rerun),
            "--seed",
            "3"
        ])),
        1
    );
    let pois = input.join("pois.csv");
    let mut text = std::fs::read_to_string(&pois).unwrap();
    text.push_str("5,5,restaurant,amenity\n");
    std::fs::write(&pois, text).unwrap();
    let o = vibrancy(&["run", "--manifest", s(&manifest), "--out", s(&rerun)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pois.csv"));

    // unpenalized fit on separable covariates runs out of iterations
    let dir = out.join("local/weekday/synthville");
    let o = vibrancy(&[
        "fit",
        "--features",
        s(&dir.join("features.csv")),
        "--labels",
        s(&dir.join("labels.csv")),
        "--lambda",
        "0",
        "--out",
        s(&tmp.path().join("fit")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(tmp.path().join("fit/model.json").is_file());
}

#[test]
fn failed_combination_is_marked_and_others_continue() {
    let tmp = tempfile::tempdir().unwrap();
    let input = synth_inputs(tmp.path(), &[]);
    // weekday-only traffic: the weekend run has nothing to aggregate
    let out = tmp.path().join("out");
    let o = vibrancy(&[
        "run",
        "--config",
        s(&input.join("pipeline.toml")),
        "--out",
        s(&out),
        "--day-type",
        "weekday",
        "--day-type",
        "weekend",
    ]);
    assert_eq!(code(&o), 2);
    assert!(out.join("local/weekend/synthville/FAILED").is_file());
    assert!(out.join("local/weekday/synthville/model.json").is_file());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let statuses: Vec<&str> = manifest["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["status"].as_str().unwrap())
        .collect();
    assert_eq!(statuses, ["ok", "failed"]);
}
