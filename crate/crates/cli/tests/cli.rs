use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "test_date,cough,fever,sore_throat,shortness_of_breath,head_ache,corona_result,gender,test_indication";
const GLOBAL_FLAGS: [&str; 4] = ["--seed", "--config", "--out-dir", "--quiet"];

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_testbandit"))
        .env("SOURCE_DATE_EPOCH", "1600000000")
        .args(["--quiet", "--out-dir", out.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) -> String {
    let o = run(dir, &["--seed", "3", "synth", "--n-per-week", "400", "--weeks", "10-16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("cohort.csv").to_str().unwrap().to_string()
}

#[test]
fn help_lists_global_flags_and_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_testbandit")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in GLOBAL_FLAGS {
        assert!(text.contains(flag), "{flag}");
    }
    for sub in ["ingest", "synth", "correlate", "train", "simulate", "sweep", "bootstrap", "report"] {
        assert!(text.contains(sub), "{sub}");
        let o = Command::new(env!("CARGO_BIN_EXE_testbandit")).args([sub, "--help"]).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in GLOBAL_FLAGS {
            assert!(text.contains(flag), "{sub} {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["sweep", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["train", "--cohort", "x.csv", "--weeks", "nope"]).status.code(), Some(1));
}

#[test]
fn ingest_valid_file() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("raw.csv");
    std::fs::write(
        &input,
        format!("{HEADER}\n2020-03-11,1,,0,0,0,negative,female,Contact with confirmed\n2020-03-12,0,1,0,0,0,positive,male,Abroad\n2020-03-16,0,0,0,0,1,negative,,Other\n"),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = run(&out, &["ingest", "--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cohort = std::fs::read_to_string(out.join("cohort.csv")).unwrap();
    assert_eq!(cohort.lines().count(), 4);
    assert_eq!(std::fs::read_to_string(out.join("rejections.tsv")).unwrap(), "");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "ingest");
    assert_eq!(manifest["started"], "2020-09-13T12:26:40Z");
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert_eq!(outputs, ["cohort.csv", "rejections.tsv"]);
}

#[test]
fn ingest_with_bad_rows_still_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("raw.csv");
    std::fs::write(&input, format!("{HEADER}\n2020-03-11,1,0,0,0,0,negative,female,Abroad\nnot-a-date,1,0,0,0,0,negative,female,Abroad\n")).unwrap();
    let o = run(tmp.path(), &["ingest", "--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(tmp.path().join("rejections.tsv")).unwrap();
    assert!(report.starts_with("2\t"), "{report}");
}

#[test]
fn ingest_missing_column_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("raw.csv");
    std::fs::write(&input, "test_date,cough,fever,sore_throat,shortness_of_breath,corona_result,gender,test_indication\n").unwrap();
    let o = run(tmp.path(), &["ingest", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: schema: "), "{err}");
    assert!(err.contains("head_ache"), "{err}");
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["correlate", "--cohort", "/nonexistent/cohort.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: input: "));
}

#[test]
fn sweep_emits_one_row_per_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = synth(tmp.path());
    let o = run(tmp.path(), &["sweep", "--cohort", &cohort, "--fractions", "0.3,0.4,0.5,0.6,0.7", "--ks", "40,80"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "exploration_fraction,recall@40,recall@80");
    assert_eq!(lines.len(), 6);
}

#[test]
fn simulating_on_training_weeks_is_leakage() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = synth(tmp.path());
    let model_dir = tmp.path().join("m");
    let o = run(&model_dir, &["train", "--cohort", &cohort, "--weeks", "10-12", "--kind", "linear"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = model_dir.join("model.txt");
    let o = run(tmp.path(), &["simulate", "--cohort", &cohort, "--model", model.to_str().unwrap(), "--weeks", "12-16"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: leakage: "), "{}", stderr(&o));
    // the default replay window starts after the training weeks
    let o = run(tmp.path(), &["simulate", "--cohort", &cohort, "--model", model.to_str().unwrap(), "--capacity", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().nth(1).unwrap().split(',').next(), Some("13"));
}

#[test]
fn simulate_artifacts_reference_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = synth(tmp.path());
    let config = tmp.path().join("policy.cfg");
    std::fs::write(
        &config,
        "capacity = 60\nexploration_fraction = 0.5\nsampler = thompson\n\n[arm contact]\npredicate = contact_with_confirmed=1\n\n[arm rest]\npredicate = contact_with_confirmed=0\n\n[schedule]\nretrain_every = 1\nkind = linear\n",
    )
    .unwrap();
    let before = std::fs::read(&cohort).unwrap();
    let out = tmp.path().join("sim");
    let o = run(&out, &["--config", config.to_str().unwrap(), "simulate", "--cohort", &cohort]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&cohort).unwrap(), before, "input mutated");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let trace = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(header["manifest_id"], manifest["manifest_id"]);
    let periods: Vec<serde_json::Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).filter(|v: &serde_json::Value| v["type"] == "period").collect();
    assert_eq!(periods.len(), 7);
    assert!(periods.iter().all(|p| p["k_explore"] == 30));
    assert!(!periods[3]["arm_assignments"].as_object().unwrap().is_empty());
    let selections = std::fs::read_to_string(out.join("selections.csv")).unwrap();
    assert_eq!(selections.lines().count(), 1 + 7 * 60);
    for name in ["trace.jsonl", "summary.csv", "selections.csv", "lineage.csv"] {
        assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o["path"] == name), "{name}");
    }
}

#[test]
fn report_writes_the_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = synth(tmp.path());
    let m = tmp.path().join("m");
    assert!(run(&m, &["train", "--cohort", &cohort, "--weeks", "10-11"]).status.success());
    let model = format!("poly2={}", m.join("model.txt").display());
    let out = tmp.path().join("r");
    let o = run(&out, &["report", "--cohort", &cohort, "--model", &model, "--model", "rule", "--ks", "40,80", "--ci-replicates", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in [
        "weekly_distribution.csv",
        "correlation_by_week.csv",
        "correlation_medians.csv",
        "weekly_recall_poly2.csv",
        "weekly_recall_rule.csv",
        "mean_recall.csv",
        "mean_recall_ci.csv",
        "mean_f1.csv",
        "recalls_models.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let curves = std::fs::read_to_string(out.join("recalls_models.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("k,poly2,rule"));
    let weekly = std::fs::read_to_string(out.join("weekly_recall_poly2.csv")).unwrap();
    assert_eq!(weekly.lines().next(), Some("week,recall@40,recall@80,number_of_tests"));
    assert_eq!(weekly.lines().nth(1).unwrap().split(',').next(), Some("12"));
}
