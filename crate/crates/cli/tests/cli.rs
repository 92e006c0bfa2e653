use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_soilscope"));
    c.env_remove("SOILSCOPE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn soilscope")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SCENARIO: &str = "\
start = 2021-03-01
duration_days = 200
cadence_minutes = 15
regimes = 0:0.003; 90:0.002
rains = 30.5:2:3:1; 65.5:2:3:1; 100.5:2:3:1; 135.5:2:3:1; 170.5:2:3:1
random_rains = 8
random_rain_peak_mm = 1.5
noise_sigma = 0.01
seed = 17
";

fn synth(dir: &Path, scenario: &str) -> PathBuf {
    let file = dir.join("scenario.txt");
    fs::write(&file, scenario).unwrap();
    let out = dir.join("data");
    let o = run(&["synth", p(&file), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn summary_count(text: &str, key: &str) -> usize {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .and_then(|v| v.trim().parse().ok())
        .unwrap()
}

#[test]
fn usage_and_data_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["detect", "--bogus", "x.csv"])), 64);
    assert_eq!(code(&run(&["frobnicate"])), 64);

    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), SCENARIO);
    let telemetry = data.join("telemetry.csv");
    let o = run(&["detect", "--method", "bcse", p(&telemetry)]);
    assert_eq!(code(&o), 64);
    let o = run(&["estimate", "--method", "baseline", p(&telemetry)]);
    assert_eq!(code(&o), 64);
    assert_eq!(code(&run(&["detect", "--q", "1.5", p(&telemetry)])), 64);

    let missing = tmp.path().join("nope.csv");
    let o = run(&["estimate", "--out", p(&tmp.path().join("o")), p(&missing)]);
    assert_eq!(code(&o), 65);
    fs::write(tmp.path().join("bad.csv"), "timestamp,power_w\nnot-a-date,1\n").unwrap();
    assert_eq!(code(&run(&["detect", p(&tmp.path().join("bad.csv"))])), 65);
}

#[test]
fn no_valid_candidates_exits_two() {
    let tmp = TempDir::new().unwrap();
    // The only rain falls before any training window could fit.
    let data = synth(
        tmp.path(),
        "duration_days = 25\nrains = 3.5:2:3:1\nseed = 1\n",
    );
    let o = run(&[
        "detect",
        "--out",
        p(&tmp.path().join("out")),
        p(&data.join("telemetry.csv")),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn detect_recovers_injected_cleanings() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), SCENARIO);
    let telemetry = data.join("telemetry.csv");
    let out = tmp.path().join("det");

    let first = run(&["detect", "--w1", "10", "--w2", "5", "--w3", "10", "--out", p(&out), p(&telemetry)]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let text = stdout(&first);
    let valid = summary_count(&text, "candidates") - summary_count(&text, "invalid");
    assert!(valid > 5, "{text}");
    let q = (valid as f64 - 5.5) / (valid as f64 - 1.0);

    let second = run(&[
        "detect", "--w1", "10", "--w2", "5", "--w3", "10", "--q", &q.to_string(), "--out", p(&out), p(&telemetry),
    ]);
    assert_eq!(code(&second), 0);
    assert_eq!(summary_count(&stdout(&second), "detected"), 5);

    let truth: Vec<(String, String)> = fs::read_to_string(data.join("events.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect();
    assert_eq!(truth.len(), 5);
    let detected: Vec<serde_json::Value> = fs::read_to_string(out.join("events.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .filter(|v: &serde_json::Value| v["status"] == "detected")
        .collect();
    let day = |s: &str| s[..10].to_string();
    let near = |a: &str, b: &str| {
        let parse = |s: &str| {
            let d: Vec<i64> = s.split('-').map(|x| x.parse().unwrap()).collect();
            d[0] * 372 + d[1] * 31 + d[2]
        };
        (parse(&day(a)) - parse(&day(b))).abs() <= 1
    };
    let matched = truth
        .iter()
        .filter(|(s, _)| detected.iter().any(|d| near(s, d["start"].as_str().unwrap())))
        .count();
    assert!(matched >= 4, "matched {matched} of 5");
    assert!(out.join("manifest.json").exists());
    assert!(out.join("summary.txt").exists());
}

#[test]
fn estimate_and_evaluate_on_noiseless_data() {
    let tmp = TempDir::new().unwrap();
    let scenario = SCENARIO.replace("noise_sigma = 0.01", "noise_sigma = 0");
    let data = synth(tmp.path(), &scenario);
    let est = tmp.path().join("est");
    let o = run(&[
        "estimate",
        "--method",
        "baseline",
        "--cleanings",
        p(&data.join("events.txt")),
        "--w-train",
        "2",
        "--out",
        p(&est),
        p(&data.join("telemetry.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sr = fs::read_to_string(est.join("sr.csv")).unwrap();
    assert!(sr.starts_with("timestamp,sr_raw,sr_clipped,sr_smoothed,floored_flag\n"));
    let trends = fs::read_to_string(est.join("trends.csv")).unwrap();
    assert!(trends.starts_with("segment_start,segment_end,slope_per_day,intercept,n_points,negative_flag\n"));
    assert_eq!(trends.lines().count(), 1 + 6);

    let o = run(&["evaluate", p(&est.join("sr.csv")), p(&data.join("truth.csv"))]);
    assert_eq!(code(&o), 0);
    let all = stdout(&o);
    let rmse: f64 = all.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(rmse < 0.005, "{all}");
    assert!(all.lines().any(|l| l.starts_with("2021-05,")));

    let o = run(&["evaluate", "--column", "sr_clipped", p(&est.join("sr.csv")), p(&est.join("sr.csv")), "--reference-column", "sr_clipped"]);
    assert_eq!(stdout(&o).lines().nth(1).unwrap().split(',').nth(2).unwrap(), "0");

    let report = tmp.path().join("report");
    let o = run(&[
        "report",
        "--sr",
        p(&est.join("sr.csv")),
        "--trends",
        p(&est.join("trends.csv")),
        "--cleanings",
        p(&data.join("events.txt")),
        "--derate",
        p(&data.join("truth.csv")),
        "--out",
        p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sr_display.csv", "derate_overlay.csv", "event_markers.csv", "trend_lines.csv", "manifest.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn evaluate_constant_offset() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "timestamp,value\n2020-01-01,0.9\n2020-01-02,0.8\n2020-02-01,0.7\n").unwrap();
    fs::write(&b, "date,derate\n2020-01-01,0.91\n2020-01-02,0.81\n2020-02-01,0.71\n").unwrap();
    let o = run(&["evaluate", "--column", "value", p(&a), p(&b)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rmse: f64 = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((rmse - 0.01).abs() < 1e-9, "{text}");
    assert_eq!(text.lines().count(), 4);

    fs::write(&b, "date,derate\n2021-01-01,0.9\n").unwrap();
    assert_eq!(code(&run(&["evaluate", "--column", "value", p(&a), p(&b)])), 65);
}

#[test]
fn config_precedence() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "method = bcse\nq = 0.8\nseed = 3\nmape_gate = 0.1\n").unwrap();
    let show = |extra: &[&str], seed_env: Option<&str>| {
        let mut c = bin();
        c.args(["estimate", "--show-config", "--config", p(&cfg)]).args(extra).arg("unused.csv");
        if let Some(s) = seed_env {
            c.env("SOILSCOPE_SEED", s);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let base = show(&[], None);
    assert!(base.contains("method = bcse\n"));
    assert!(base.contains("w3 = 30\n"));
    assert!(base.contains("q = 0.8\n"));
    assert!(base.contains("seed = 3\n"));
    assert!(show(&[], Some("42")).contains("seed = 42\n"));
    let flagged = show(&["--seed", "7", "--q", "0.95", "--method", "fcse"], Some("42"));
    assert!(flagged.contains("seed = 7\n"));
    assert!(flagged.contains("q = 0.95\n"));
    assert!(flagged.contains("w1 = 10\n"));
    assert!(flagged.contains("mape_gate = 0.1\n"));

    fs::write(&cfg, "colour = blue\n").unwrap();
    let o = run(&["estimate", "--show-config", "--config", p(&cfg), "x.csv"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path(), SCENARIO);
    let out = tmp.path().join("est");
    let estimate = || {
        let o = run(&[
            "estimate",
            "--method",
            "bcse",
            "--cleanings",
            p(&data.join("cleanings_subset.txt")),
            "--out",
            p(&out),
            p(&data.join("telemetry.csv")),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    let events = fs::read_to_string(data.join("events.txt")).unwrap();
    let subset: String = events.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(data.join("cleanings_subset.txt"), subset).unwrap();
    let first = estimate();
    let second = estimate();
    assert_eq!(first.len(), 6);
    assert_eq!(first, second);

    // Same seed through the environment gives the same synthetic data.
    let again = tmp.path().join("again");
    let scen = tmp.path().join("scenario.txt");
    let o = bin()
        .args(["synth", p(&scen), "--out", p(&again)])
        .env("SOILSCOPE_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(again.join("telemetry.csv")).unwrap(),
        fs::read(data.join("telemetry.csv")).unwrap()
    );
}
