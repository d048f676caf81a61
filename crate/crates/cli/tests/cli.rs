use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coverlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coverlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Data rows of a trials.csv as maps from column name to value.
fn rows(path: &Path) -> Vec<Vec<(String, String)>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    lines
        .map(|l| {
            // the distribution label is quoted and contains commas
            let mut fields = Vec::new();
            let mut cur = String::new();
            let mut quoted = false;
            for ch in l.chars() {
                match ch {
                    '"' => quoted = !quoted,
                    ',' if !quoted => fields.push(std::mem::take(&mut cur)),
                    c => cur.push(c),
                }
            }
            fields.push(cur);
            header.iter().cloned().zip(fields).collect()
        })
        .collect()
}

fn field<'a>(row: &'a [(String, String)], name: &str) -> &'a str {
    &row.iter().find(|(k, _)| k == name).unwrap().1
}

const THREE_SEVENTHS: &str = r#"
set = "even-indices"
seeds = [1]
[distribution]
kind = "constant"
q = "3/7"
"#;

#[test]
fn three_sevenths_short_horizon_is_wrong() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", THREE_SEVENTHS);
    let out = dir.path().join("out");
    let o = coverlab(&[
        "run",
        "--config",
        &cfg,
        "--horizon",
        "10000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    // 3/7 = q_56 and 56 is even, but n(56) is far beyond 10^4
    assert_eq!(summary["fraction_stabilized_correct"], 0.0);
    assert_eq!(field(&rows(&out.join("trials.csv"))[0], "truth"), "1");
}

#[test]
fn three_sevenths_past_decision_time_is_right() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", THREE_SEVENTHS);
    let out = dir.path().join("out");
    // n(56) + 10^4
    let o = coverlab(&[
        "run",
        "--config",
        &cfg,
        "--horizon",
        "30840989456",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["fraction_stabilized_correct"], 1.0);
    let r = &rows(&out.join("trials.csv"))[0];
    assert_eq!(field(r, "final_index"), "56");
    assert_eq!(field(r, "index_last_change"), "30840979456");
}

#[test]
fn unknown_set_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "set = \"no-such-set\"\n");
    let out = dir.path().join("out");
    let o = coverlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-set"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "horizn = 5\n");
    let o = coverlab(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fifty_seeds_fifty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = coverlab(&[
        "run",
        "--seeds",
        "1-50",
        "--horizon",
        "20000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rs = rows(&out.join("trials.csv"));
    assert_eq!(rs.len(), 50);
    let seeds: Vec<u64> = rs
        .iter()
        .map(|r| field(r, "seed").parse().unwrap())
        .collect();
    assert_eq!(seeds, (1..=50).collect::<Vec<_>>());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trials"], 50);
    let correct = rs
        .iter()
        .filter(|r| field(r, "stabilized_correct") == "true")
        .count();
    assert_eq!(summary["stabilized_correct"], correct);
}

#[test]
fn runs_are_reproducible_and_threads_do_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for (k, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = Command::new(env!("CARGO_BIN_EXE_coverlab"))
            .args([
                "run",
                "--seeds",
                "1-12",
                "--horizon",
                "20000",
                "--trace",
                "--out",
                out.to_str().unwrap(),
            ])
            .env("COVERLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let text = fs::read_to_string(out.join("trials.csv")).unwrap();
        assert!(text.starts_with("# generated_at_unix="));
        let body = text.split_once('\n').unwrap().1.to_string();
        assert!(body.starts_with("# config={"));
        let summary = fs::read_to_string(out.join("summary.json")).unwrap();
        let trace = fs::read_to_string(out.join("traces").join("seed-5.jsonl")).unwrap();
        bodies.push((body, summary, trace));
    }
    assert_eq!(bodies[0], bodies[1]);
    // n(j) = j^6 <= 20000 for j <= 5
    let decisions: Vec<serde_json::Value> = bodies[0]
        .2
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(decisions.len(), 5);
    assert_eq!(decisions[4]["n"], 15625);
}

#[test]
fn verify_passes_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = coverlab(&["verify", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for name in [
        "radius",
        "measure-bound",
        "summability",
        "round-trip",
        "lil-coverage",
    ] {
        assert!(text.contains(name), "{name} missing from:\n{text}");
    }
    assert!(out.join("verify.txt").exists());
    let cov = fs::read_to_string(out.join("coverage.csv")).unwrap();
    assert!(cov.lines().count() > 1);
}

#[test]
fn injected_radius_fault_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        "[verify]\nunion_k = 50\nsummability_j = 50\ncoverage_seeds = [1, 2]\ncoverage_horizon = 1000\nround_trip_indices = 4\nround_trip_extra = 100\n",
    );
    let clean = coverlab(&["verify", "--config", &cfg]);
    assert!(clean.status.success(), "{}", stdout(&clean));
    let o = coverlab(&["verify", "--config", &cfg, "--fault", "radius"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("radius"), "{}", stderr(&o));
}

const HEADER: &str = "trial_id,seed,distribution,mu,set_name,truth,horizon,mistakes,last_change,final,final_index,index_last_change,stabilized_correct";

#[test]
fn report_on_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trials.csv");
    fs::write(&p, format!("# generated_at_unix=0\n{HEADER}\n1,9,constant(1/2),1/2,even-indices,1,5000,3,729,1,4,729,true\n")).unwrap();
    let out = dir.path().join("rep");
    let o = coverlab(&[
        "report",
        p.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let line = csv.lines().nth(1).unwrap();
    assert_eq!(line, "constant(1/2),even-indices,5000,1,1,1.0,3,729");
}

#[test]
fn report_recomputes_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trials.csv");
    fs::write(
        &p,
        format!(
            "{HEADER}\n\
             1,1,constant(0),0,even-indices,0,100,0,10,0,1,1,true\n\
             2,2,constant(0),0,even-indices,0,100,4,30,1,2,64,false\n\
             3,3,constant(0),0,even-indices,0,100,2,20,0,1,1,true\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("rep");
    // a directory argument resolves to its trials.csv
    let o = coverlab(&[
        "report",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let f: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(f[3], "3");
    assert_eq!(f[4], "2");
    assert!((f[5].parse::<f64>().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(f[6], "4");
    // lower median of 10, 20, 30
    assert_eq!(f[7], "20");
}

#[test]
fn report_without_files_is_a_usage_error() {
    let o = coverlab(&["report"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_on_garbage_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trials.csv");
    fs::write(&p, "a,b\n1,2\n").unwrap();
    let o = coverlab(&["report", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
