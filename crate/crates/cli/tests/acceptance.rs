//! Acceptance suite. Runs every criterion at its stated tolerance and time
//! budget and prints one line per criterion. Criteria that need the public
//! tested-individuals CSV read its path from `IMOH_CSV` (and optionally a
//! mapping file from `IMOH_MAP`) and are skipped when it is unset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use testbandit::evaluate::{bootstrap_ci, evaluate_ranking, mean, median, weekly_correlations, BootstrapConfig};
use testbandit::policy::{Arm, PolicyConfig, Predicate, Sampler};
use testbandit::records::{load_cohort, periods_in, LabelPolicy, LoadOptions, Period, PeriodUnit, ValueMapping};
use testbandit::scoring::{train, ModelKind, RiskModel, Scorer, TrainConfig};
use testbandit::simulate::{exploration_sweep, labeled_examples, run_replay, train_eval_split_experiment, Schedule, SplitExperiment};
use testbandit::synthgen::{generate_cohort, GeneratorParams};
use testbandit::{seed, Execution};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn weekly(params: &GeneratorParams) -> (testbandit::synthgen::SyntheticCohort, Vec<Period>) {
    let s = generate_cohort(params).expect("valid scenario");
    let p = s.cohort.periods(PeriodUnit::Week, LabelPolicy::ExcludeOther);
    (s, p)
}

fn poly2(periods: &[Period], seed_value: u64) -> RiskModel {
    let cfg = TrainConfig {
        seed: seed_value,
        ..TrainConfig::default()
    };
    train(&labeled_examples(periods), ModelKind::Poly2, &cfg).expect("trainable")
}

fn real_cohort() -> Option<Vec<Period>> {
    let path = std::env::var_os("IMOH_CSV")?;
    let mapping = match std::env::var_os("IMOH_MAP") {
        Some(m) => ValueMapping::load(Path::new(&m)).expect("mapping file"),
        None => ValueMapping::load(&workspace().join("mappings/imoh_hebrew.map")).expect("shipped mapping"),
    };
    let loaded = load_cohort(Path::new(&path), &mapping, &LoadOptions::default()).expect("loadable CSV");
    Some(loaded.cohort.periods(PeriodUnit::Week, LabelPolicy::ExcludeOther))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn c1_real_recall() -> Outcome {
    let Some(periods) = real_cohort() else {
        return Outcome::Skip("IMOH_CSV not set".into());
    };
    let model = poly2(&periods_in(&periods, &(10..=12)), 0);
    let later: Vec<Period> = periods.iter().filter(|p| p.key > 12).cloned().collect();
    let ks = [1000, 2000, 3000, 4000, 5000];
    let report = evaluate_ranking(&later, &model, &ks, 0, Execution::default()).expect("evaluable");
    let r5000 = report.mean_recall(4);
    let reference: [(u32, [f64; 5]); 4] = [
        (13, [0.231, 0.429, 0.623, 0.667, 0.732]),
        (14, [0.267, 0.502, 0.618, 0.689, 0.696]),
        (15, [0.369, 0.565, 0.585, 0.596, 0.609]),
        (16, [0.509, 0.590, 0.608, 0.613, 0.622]),
    ];
    let mut worst: f64 = 0.0;
    for (week, row) in reference {
        let Some(w) = report.weeks.iter().position(|k| *k == week) else {
            return Outcome::Fail(format!("week {week} missing"));
        };
        for (j, expected) in row.iter().enumerate() {
            worst = worst.max((report.cells[w][j].recall - expected).abs());
        }
    }
    let detail = format!("mean recall@5000 {r5000:.3} (CI 0.647-0.683), worst weekly deviation {worst:.3}");
    if (0.647..=0.683).contains(&r5000) && worst <= 0.05 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c2_real_correlations() -> Outcome {
    let Some(periods) = real_cohort() else {
        return Outcome::Skip("IMOH_CSV not set".into());
    };
    let table = weekly_correlations(&periods);
    let order = table.ordering();
    let expected_top = ("contact_with_confirmed", 0.587);
    let expected_bottom = ("other_indication", -0.433);
    let (top, bottom) = (order[0], order[order.len() - 1]);
    let detail = format!("top {} {:.3}, bottom {} {:.3}", top.0, top.1, bottom.0, bottom.1);
    let ok = top.0 == expected_top.0
        && bottom.0 == expected_bottom.0
        && (top.1 - expected_top.1).abs() <= 0.02
        && (bottom.1 - expected_bottom.1).abs() <= 0.02;
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c3_oracle_law() -> Outcome {
    let mut checked = 0;
    for s in 0..3u64 {
        let mut params = GeneratorParams::default_scenario();
        params.n_per_week = 2000;
        params.weeks = 10..=17;
        params.seed = 100 + s;
        let (synth, periods) = weekly(&params);
        let oracle = synth.oracle();
        for k in [1, 50, 137, 400, 1999, 2000, 2500] {
            let policy = PolicyConfig {
                capacity: k,
                ..PolicyConfig::default()
            };
            let schedule = Schedule {
                retrain_every: 0,
                ..Schedule::default()
            };
            let trace = run_replay(&periods, &oracle, &policy, &schedule, None, s).expect("replay");
            for (entry, period) in trace.periods.iter().zip(&periods) {
                let p = period.positives();
                let expected = if p == 0 { 0.0 } else { k.min(p) as f64 / p as f64 };
                if entry.recall != expected {
                    return Outcome::Fail(format!("week {} K={k}: recall {} != {expected}", entry.period, entry.recall));
                }
                checked += 1;
            }
        }
    }
    Outcome::Pass(format!("{checked} (week, K) cells exact"))
}

fn c4_random_baseline() -> Outcome {
    let mut params = GeneratorParams::default_scenario();
    params.n_per_week = 5000;
    params.weeks = 10..=17;
    let (_, periods) = weekly(&params);
    let k = 500;
    let policy = PolicyConfig {
        capacity: k,
        exploration_fraction: 1.0,
        ..PolicyConfig::default()
    };
    let schedule = Schedule {
        retrain_every: 0,
        ..Schedule::default()
    };
    let runs = 100;
    let mut hits = 0usize;
    let mut trials = 0usize;
    let mut run_means = Vec::new();
    for r in 0..runs {
        let trace = run_replay(&periods, &RiskModel::rule_based(), &policy, &schedule, None, seed::derive_indexed(4, "run", r)).expect("replay");
        hits += trace.periods.iter().map(|e| e.hits).sum::<usize>();
        trials += trace.periods.iter().map(|e| e.positives).sum::<usize>();
        run_means.push(trace.mean_recall());
    }
    let n = periods[0].len();
    if periods.iter().any(|p| p.len() != n) {
        return Outcome::Fail("weekly pools differ in size".into());
    }
    let p0 = k as f64 / n as f64;
    // every positive is captured with probability K/N; pooled over runs and weeks
    let half = 1.96 * (p0 * (1.0 - p0) / trials as f64).sqrt();
    let pooled = hits as f64 / trials as f64;
    let grand = mean(&run_means);
    let detail = format!("mean recall {grand:.4}, pooled {pooled:.4}, envelope {:.4}..{:.4}", p0 - half, p0 + half);
    if (pooled - p0).abs() <= half && (grand - p0).abs() <= half {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c5_beats_random() -> Outcome {
    let mut ratios = Vec::new();
    for s in 0..20u64 {
        let mut params = GeneratorParams::default_scenario();
        params.seed = 500 + s;
        let (_, periods) = weekly(&params);
        let model = poly2(&periods_in(&periods, &(10..=12)), s);
        let eval: Vec<Period> = periods.iter().filter(|p| p.key > 12).cloned().collect();
        let n = eval[0].len();
        let k = n / 10;
        let report = evaluate_ranking(&eval, &model, &[k], s, Execution::default()).expect("evaluable");
        ratios.push(report.mean_recall(0) / (k as f64 / n as f64));
    }
    let m = median(&ratios).unwrap();
    let detail = format!("median recall@0.1N / random = {m:.2} (need >= 3)");
    if m >= 3.0 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Order-preserving map of a score onto u64, reversed so that a BTreeMap
/// iterates from the highest score down.
fn descending_key(s: f64) -> u64 {
    let bits = s.to_bits();
    let ascending = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
    !ascending
}

/// Exact full-pool mean weekly recall@K with uniformly random tie order.
fn expected_recall(periods: &[Period], scorer: &dyn Scorer, k: usize) -> f64 {
    let per_week: Vec<f64> = periods
        .iter()
        .map(|p| {
            let positives = p.positives();
            if positives == 0 {
                return 0.0;
            }
            // score level -> (members, positives), descending by score
            let mut levels: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
            for (c, l) in p.candidates.iter().zip(&p.labels) {
                let s = scorer.score(c).unwrap();
                let key = descending_key(s);
                let e = levels.entry(key).or_default();
                e.0 += 1;
                e.1 += usize::from(*l);
            }
            let mut left = k;
            let mut hits = 0.0;
            for (members, pos) in levels.values() {
                if left == 0 {
                    break;
                }
                let take = left.min(*members);
                hits += take as f64 * *pos as f64 / *members as f64;
                left -= take;
            }
            hits / positives as f64
        })
        .collect();
    mean(&per_week)
}

fn c6_bootstrap_coverage() -> Outcome {
    let scorer = RiskModel::rule_based();
    let k = 200;
    let mut covered = 0;
    for r in 0..100u64 {
        let mut params = GeneratorParams::default_scenario();
        params.n_per_week = 2000;
        params.weeks = 10..=13;
        params.seed = 600 + r;
        let (_, periods) = weekly(&params);
        let truth = expected_recall(&periods, &scorer, k);
        let cfg = BootstrapConfig {
            seed: r,
            ..BootstrapConfig::default()
        };
        let ci = bootstrap_ci(&periods, &scorer, k, &cfg).expect("bootstrap");
        if ci.lo <= truth && truth <= ci.hi {
            covered += 1;
        }
    }
    let detail = format!("{covered}/100 intervals cover the exhaustive recall (need >= 85)");
    if covered >= 85 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c7_regime_crossover() -> Outcome {
    let ks = vec![250, 500, 1000, 2000, 3000];
    let mut crossed = 0;
    let mut notes = Vec::new();
    for s in 0..20u64 {
        let mut params = GeneratorParams::regime_shift_scenario();
        params.seed = 700 + s;
        let (_, periods) = weekly(&params);
        let exp = SplitExperiment {
            train_a: 10..=12,
            train_b: 21..=23,
            eval: 24..=26,
            capacities: ks.clone(),
            kind: ModelKind::Poly2,
            train: TrainConfig::default(),
            seed: s,
        };
        let out = train_eval_split_experiment(&periods, &exp).expect("experiment");
        let (first, last) = (out.rows[0], out.rows[out.rows.len() - 1]);
        if first.recall_b > first.recall_a && last.recall_a >= last.recall_b {
            crossed += 1;
        } else if notes.len() < 3 {
            notes.push(format!(
                "seed {s}: K={} A {:.3} B {:.3}, K={} A {:.3} B {:.3}",
                first.k, first.recall_a, first.recall_b, last.k, last.recall_a, last.recall_b
            ));
        }
    }
    let detail = format!("curves cross in {crossed}/20 seeds (need >= 15) {}", notes.join("; "));
    if crossed >= 15 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c8_thompson() -> Outcome {
    let arms = vec![
        Arm::new("high", "contact_with_confirmed=1".parse::<Predicate>().unwrap(), 1.0, 1.0),
        Arm::new("low", "contact_with_confirmed=0".parse::<Predicate>().unwrap(), 1.0, 1.0),
    ];
    let mut shares = Vec::new();
    for s in 0..20u64 {
        let mut params = GeneratorParams::two_arm_scenario();
        params.seed = 800 + s;
        let (_, periods) = weekly(&params);
        let policy = PolicyConfig {
            capacity: 40,
            exploration_fraction: 1.0,
            sampler: Sampler::Thompson,
            arms: arms.clone(),
            ..PolicyConfig::default()
        };
        let schedule = Schedule {
            retrain_every: 0,
            ..Schedule::default()
        };
        let trace = run_replay(&periods, &RiskModel::rule_based(), &policy, &schedule, None, s).expect("replay");
        shares.push(trace.arm_share("high", 10));
    }
    let m = median(&shares).unwrap();
    let detail = format!("median high-arm share after burn-in {m:.3} (need > 0.9)");
    if m > 0.9 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_testbandit"));
    c.env("SOURCE_DATE_EPOCH", "1600000000");
    c
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    files
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let cohort = data.join("cohort.csv");
    let model = root.join("train").join("model.txt");
    let c = cohort.to_str().unwrap();
    let m = model.to_str().unwrap();
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("data", vec!["synth", "--n-per-week", "600", "--weeks", "10-17"]),
        ("ingest", vec!["ingest", "--input", c]),
        ("correlate", vec!["correlate", "--cohort", c]),
        ("train", vec!["train", "--cohort", c, "--weeks", "10-11", "--kind", "poly2"]),
        ("simulate", vec!["simulate", "--cohort", c, "--model", m, "--weeks", "12-17", "--capacity", "80", "--exploration-fraction", "0.4"]),
        ("sweep", vec!["sweep", "--cohort", c, "--model", m, "--weeks", "12-17", "--ks", "60,120", "--runs", "3"]),
        ("bootstrap", vec!["bootstrap", "--cohort", c, "--model", m, "--weeks", "12-17", "--k", "60"]),
        ("report", vec!["report", "--cohort", c, "--model", m, "--weeks", "12-17", "--ks", "60,120"]),
    ];
    for (dir, args) in &steps {
        let out = root.join(dir);
        let run = || {
            bin()
                .args(["--seed", "9", "--quiet", "--out-dir", out.to_str().unwrap()])
                .args(args)
                .output()
                .unwrap()
        };
        let first = run();
        if !first.status.success() {
            return Outcome::Fail(format!("{} failed: {}", args[0], String::from_utf8_lossy(&first.stderr)));
        }
        let a = snapshot(&out);
        let second = run();
        if !second.status.success() {
            return Outcome::Fail(format!("{} rerun failed", args[0]));
        }
        let b = snapshot(&out);
        if a != b || a.is_empty() {
            let differing: Vec<_> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            return Outcome::Fail(format!("{} outputs differ: {differing:?}", args[0]));
        }
    }
    Outcome::Pass(format!("{} subcommands byte-identical across reruns", steps.len()))
}

fn c10_sweep() -> Outcome {
    let fractions = [0.3, 0.4, 0.5, 0.6, 0.7];
    let mut per_seed: Vec<Vec<f64>> = Vec::new();
    for s in 0..20u64 {
        let mut params = GeneratorParams::default_scenario();
        params.seed = 1000 + s;
        let (_, periods) = weekly(&params);
        let model = poly2(&periods_in(&periods, &(10..=12)), s);
        let eval: Vec<Period> = periods.iter().filter(|p| p.key > 12).cloned().collect();
        let table = exploration_sweep(&eval, &model, &fractions, &[500], 1, s, Execution::default()).expect("sweep");
        if table.recall.len() != fractions.len() {
            return Outcome::Fail("sweep table is missing rows".into());
        }
        per_seed.push(table.recall.iter().map(|row| row[0]).collect());
    }
    let medians: Vec<f64> = (0..fractions.len())
        .map(|i| median(&per_seed.iter().map(|r| r[i]).collect::<Vec<_>>()).unwrap())
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);

    // the command-line harness emits one row per fraction for any cohort
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let emitted = (|| {
        let cohort = out.join("cohort.csv");
        let status = bin()
            .args(["--seed", "1", "--quiet", "--out-dir", out.to_str()?, "synth", "--n-per-week", "300", "--weeks", "10-13"])
            .status()
            .ok()?;
        if !status.success() {
            return None;
        }
        let status = bin()
            .args(["--seed", "1", "--quiet", "--out-dir", out.to_str()?, "sweep", "--cohort", cohort.to_str()?, "--model", "rule"])
            .status()
            .ok()?;
        if !status.success() {
            return None;
        }
        let text = std::fs::read_to_string(out.join("sweep.csv")).ok()?;
        let rows: Vec<&str> = text.lines().skip(1).collect();
        let labels: Vec<String> = rows.iter().map(|r| r.split(',').next().unwrap_or("").to_string()).collect();
        Some(labels)
    })();
    let expected: Vec<String> = ["0.3", "0.4", "0.5", "0.6", "0.7"].iter().map(|s| s.to_string()).collect();
    let table_ok = emitted.as_ref() == Some(&expected);
    let detail = format!(
        "median recall by fraction {:?}, CLI table rows {:?}",
        medians.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
        emitted.unwrap_or_default()
    );
    if monotone && table_ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let criteria: [(u32, &str, Check, Duration); 10] = [
        (1, "real-data recall within reference interval", c1_real_recall, Duration::from_secs(300)),
        (2, "real-data feature ordering", c2_real_correlations, Duration::from_secs(300)),
        (3, "oracle ranker law", c3_oracle_law, Duration::from_secs(10)),
        (4, "random baseline law", c4_random_baseline, Duration::from_secs(60)),
        (5, "ranking beats random", c5_beats_random, Duration::from_secs(120)),
        (6, "bootstrap coverage", c6_bootstrap_coverage, Duration::from_secs(300)),
        (7, "regime-shift crossover", c7_regime_crossover, Duration::from_secs(120)),
        (8, "Thompson concentration", c8_thompson, Duration::from_secs(60)),
        (9, "CLI determinism", c9_determinism, Duration::from_secs(60)),
        (10, "exploration sweep", c10_sweep, Duration::from_secs(300)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f.parse() == Ok(id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) if took <= budget => ("PASS", d),
            Outcome::Pass(d) => ("FAIL", format!("{d}; over time budget {budget:?}")),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} criterion {id:>2} ({name}): {detail} [{:.1}s]", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
