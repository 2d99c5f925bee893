use std::ops::RangeInclusive;
use std::path::Path;

use chrono::NaiveDate;
use serde_json::{json, Value};
use testbandit::evaluate::{bootstrap_ci, evaluate_ranking, weekly_correlations, BootstrapConfig, RankingReport};
use testbandit::kv::{parse_list, Document};
use testbandit::policy::{PolicyConfig, RetrainOn, Sampler};
use testbandit::records::{
    load_cohort, parse_week_range, periods_in, write_cohort_csv, Cohort, LabelPolicy, LoadError, LoadOptions, Period, PeriodUnit,
    TestResult, UnknownPolicy, ValueMapping, FEATURE_NAMES,
};
use testbandit::scoring::{train, ClassWeighting, ModelKind, RiskModel, Scorer, TrainConfig};
use testbandit::seed;
use testbandit::simulate::{exploration_sweep, labeled_examples, run_replay, train_config_from, Schedule, SimulationTrace, WarmStart};
use testbandit::synthgen::{generate_cohort, GeneratorParams};
use testbandit::Execution;

use crate::output::{num, opt, timestamp, OutDir, RunHeader, Table};
use crate::{BootstrapArgs, Cli, CliError, CohortArgs, Command, IngestArgs, LabelArg, ModelArgs, ReportArgs, SimulateArgs, SweepArgs, SynthArgs, TrainArgs, UnknownArg};

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    seed: u64,
    seed_given: bool,
    config: Option<Document>,
    out: OutDir,
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = timestamp();
    let subcommand = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Synth(_) => "synth",
        Command::Correlate(_) => "correlate",
        Command::Train(_) => "train",
        Command::Simulate(_) => "simulate",
        Command::Sweep(_) => "sweep",
        Command::Bootstrap(_) => "bootstrap",
        Command::Report(_) => "report",
    };
    let header = RunHeader {
        subcommand: subcommand.into(),
        arguments: std::env::args().skip(1).collect(),
        config: cli.config.as_ref().map(|p| p.display().to_string()),
        seed: cli.seed.unwrap_or(0),
    };
    let config = match &cli.config {
        Some(path) => {
            let text = read_text(path)?;
            Some(Document::parse(&text).map_err(|e| CliError::data("config", format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let mut ctx = Ctx {
        seed: header.seed,
        seed_given: cli.seed.is_some(),
        config,
        out: OutDir::create(&cli.out_dir, header.manifest_id())?,
    };
    if let Some(path) = &cli.config {
        ctx.out.record_input(path);
    }
    match &cli.command {
        Command::Ingest(a) => ingest(&mut ctx, a)?,
        Command::Synth(a) => synth(&mut ctx, a)?,
        Command::Correlate(a) => correlate(&mut ctx, a)?,
        Command::Train(a) => train_cmd(&mut ctx, a)?,
        Command::Simulate(a) => simulate(&mut ctx, a)?,
        Command::Sweep(a) => sweep(&mut ctx, a)?,
        Command::Bootstrap(a) => bootstrap(&mut ctx, a)?,
        Command::Report(a) => report(&mut ctx, a)?,
    }
    ctx.out.finish(&header, &started)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::data("input", format!("cannot read {}: {e}", path.display())))
}

fn load_error(e: LoadError) -> CliError {
    match e {
        LoadError::Io { .. } => CliError::data("input", e.to_string()),
        LoadError::MissingColumn(_) => CliError::data("schema", e.to_string()),
        LoadError::Mapping(_) => CliError::data("mapping", e.to_string()),
        _ => CliError::data("data", e.to_string()),
    }
}

fn week_range(text: &str, flag: &str) -> Result<RangeInclusive<u32>> {
    parse_week_range(text).map_err(|e| CliError::usage(format!("--{flag} {text:?}: {e}")))
}

fn list<T>(text: &str, flag: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let values = parse_list(text).map_err(|e| CliError::usage(format!("--{flag}: {e}")))?;
    if values.is_empty() {
        return Err(CliError::usage(format!("--{flag} is empty")));
    }
    Ok(values)
}

fn mapping(ctx: &mut Ctx, path: Option<&Path>) -> Result<ValueMapping> {
    match path {
        Some(p) => {
            ctx.out.record_input(p);
            ValueMapping::load(p).map_err(load_error)
        }
        None => Ok(ValueMapping::default()),
    }
}

fn label_policy(arg: LabelArg) -> LabelPolicy {
    match arg {
        LabelArg::ExcludeOther => LabelPolicy::ExcludeOther,
        LabelArg::OtherAsNegative => LabelPolicy::OtherAsNegative,
    }
}

fn load(ctx: &mut Ctx, args: &CohortArgs) -> Result<Cohort> {
    let m = mapping(ctx, args.mapping.as_deref())?;
    ctx.out.record_input(&args.cohort);
    let loaded = load_cohort(&args.cohort, &m, &LoadOptions::default()).map_err(load_error)?;
    if !loaded.rejections.is_empty() {
        log::warn!("{}: {} rows rejected; run ingest for the report", args.cohort.display(), loaded.rejections.len());
    }
    if loaded.cohort.is_empty() {
        return Err(CliError::data("data", format!("{} holds no usable records", args.cohort.display())));
    }
    Ok(loaded.cohort)
}

fn load_model(ctx: &mut Ctx, spec: &str) -> Result<RiskModel> {
    if spec == "rule" {
        return Ok(RiskModel::rule_based());
    }
    let path = Path::new(spec);
    ctx.out.record_input(path);
    RiskModel::from_text(&read_text(path)?).map_err(|e| CliError::data("model", format!("{spec}: {e}")))
}

/// Explicit evaluation weeks must not touch a model's training weeks; the
/// default is everything after the latest training week.
fn eval_weeks(cohort: &Cohort, models: &[&RiskModel], weeks: Option<&str>) -> Result<RangeInclusive<u32>> {
    let all = cohort.weeks().ok_or_else(|| CliError::data("data", "empty cohort"))?;
    let range = match weeks {
        Some(text) => week_range(text, "weeks")?,
        None => {
            let after = models.iter().filter_map(|m| m.trained_on()).map(|w| *w.end() + 1).max();
            after.unwrap_or(*all.start()).max(*all.start())..=*all.end()
        }
    };
    for m in models {
        if let Some(t) = m.trained_on() {
            if t.start() <= range.end() && range.start() <= t.end() {
                return Err(CliError::data(
                    "leakage",
                    format!(
                        "model trained on weeks {}-{} cannot be evaluated on weeks {}-{}",
                        t.start(),
                        t.end(),
                        range.start(),
                        range.end()
                    ),
                ));
            }
        }
    }
    if range.start() > range.end() || range.start() > all.end() || range.end() < all.start() {
        return Err(CliError::data(
            "data",
            format!("no cohort weeks in {}-{} (cohort spans {}-{})", range.start(), range.end(), all.start(), all.end()),
        ));
    }
    Ok(range)
}

fn weekly(cohort: &Cohort, labels: LabelArg, range: &RangeInclusive<u32>) -> Result<Vec<Period>> {
    let periods = periods_in(&cohort.periods(PeriodUnit::Week, label_policy(labels)), range);
    if periods.is_empty() {
        return Err(CliError::data("data", format!("no labeled records in weeks {}-{}", range.start(), range.end())));
    }
    Ok(periods)
}

fn parse_window(text: &str) -> Result<(NaiveDate, NaiveDate)> {
    let bad = || CliError::usage(format!("--window {text:?}: expected YYYY-MM-DD:YYYY-MM-DD"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let from = NaiveDate::parse_from_str(a.trim(), "%Y-%m-%d").map_err(|_| bad())?;
    let to = NaiveDate::parse_from_str(b.trim(), "%Y-%m-%d").map_err(|_| bad())?;
    if from > to {
        return Err(bad());
    }
    Ok((from, to))
}

fn cohort_csv(cohort: &Cohort) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_cohort_csv(cohort, &mut buf).map_err(|e| CliError::internal(e.to_string()))?;
    Ok(buf)
}

fn ingest(ctx: &mut Ctx, a: &IngestArgs) -> Result<()> {
    if !a.delimiter.is_ascii() {
        return Err(CliError::usage("--delimiter must be a single ASCII character"));
    }
    let options = LoadOptions {
        delimiter: a.delimiter as u8,
        unknown: match a.unknown {
            UnknownArg::AsAbsent => UnknownPolicy::AsAbsent,
            UnknownArg::Drop => UnknownPolicy::Drop,
        },
        window: a.window.as_deref().map(parse_window).transpose()?,
        ..LoadOptions::default()
    };
    let m = mapping(ctx, a.mapping.as_deref())?;
    ctx.out.record_input(&a.input);
    let loaded = load_cohort(&a.input, &m, &options).map_err(load_error)?;
    ctx.out.write("cohort.csv", &cohort_csv(&loaded.cohort)?)?;
    let mut report = Vec::new();
    loaded.rejections.write_tsv(&mut report).map_err(|e| CliError::internal(e.to_string()))?;
    ctx.out.write("rejections.tsv", &report)?;
    log::info!(
        "read {} rows: {} records, {} rejected -> {}",
        loaded.rows_read,
        loaded.cohort.len(),
        loaded.rejections.len(),
        ctx.out.path("cohort.csv").display()
    );
    Ok(())
}

fn synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    let mut params = match a.scenario.as_str() {
        "default" => GeneratorParams::default_scenario(),
        "regime_shift" => GeneratorParams::regime_shift_scenario(),
        "two_arm" => GeneratorParams::two_arm_scenario(),
        path => {
            ctx.out.record_input(Path::new(path));
            GeneratorParams::parse(&read_text(Path::new(path))?).map_err(|e| CliError::data("scenario", format!("{path}: {e}")))?
        }
    };
    if let Some(n) = a.n_per_week {
        params.n_per_week = n;
    }
    if let Some(w) = &a.weeks {
        params.weeks = week_range(w, "weeks")?;
    }
    if ctx.seed_given {
        params.seed = ctx.seed;
    }
    let s = generate_cohort(&params).map_err(|e| CliError::data("scenario", e.to_string()))?;
    ctx.out.write("cohort.csv", &cohort_csv(&s.cohort)?)?;
    let mut truth = Table::new(&["record_id", "week", "linear_predictor", "latent_utility", "positive"]);
    for r in s.cohort.records() {
        let id = r.record_id as usize;
        truth.row(&[
            r.record_id.to_string(),
            s.cohort.week(r.record_id).unwrap_or_default().to_string(),
            num(s.linear_predictor[id]),
            num(s.latent[id]),
            u8::from(r.result == TestResult::Positive).to_string(),
        ]);
    }
    ctx.out.write("truth.csv", truth.bytes())?;
    log::info!("generated {} records, seed {}", s.cohort.len(), params.seed);
    Ok(())
}

fn distribution_table(cohort: &Cohort) -> Table {
    let mut rows: std::collections::BTreeMap<u32, [usize; 3]> = Default::default();
    for r in cohort.records() {
        let w = cohort.week(r.record_id).unwrap_or_default();
        let slot = match r.result {
            TestResult::Positive => 0,
            TestResult::Negative => 1,
            TestResult::Other => 2,
        };
        rows.entry(w).or_default()[slot] += 1;
    }
    let mut t = Table::new(&["week", "tests", "positive", "negative", "other"]);
    for (w, [p, n, o]) in rows {
        t.row(&[w.to_string(), (p + n + o).to_string(), p.to_string(), n.to_string(), o.to_string()]);
    }
    t
}

fn correlation_tables(periods: &[Period]) -> (Table, Table) {
    let table = weekly_correlations(periods);
    let mut header = vec!["week".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    let mut by_week = Table::new(&header);
    for (w, values) in table.weeks.iter().zip(&table.values) {
        let mut row = vec![w.to_string()];
        row.extend(values.iter().map(|v| opt(*v)));
        by_week.row(&row);
    }
    let mut medians = Table::new(&["rank", "feature", "median_correlation"]);
    for (i, (name, m)) in table.ordering().iter().enumerate() {
        medians.row(&[(i + 1).to_string(), name.to_string(), num(*m)]);
    }
    (by_week, medians)
}

fn correlate(ctx: &mut Ctx, a: &CohortArgs) -> Result<()> {
    let cohort = load(ctx, a)?;
    let periods = cohort.periods(PeriodUnit::Week, label_policy(a.labels));
    let (by_week, medians) = correlation_tables(&periods);
    ctx.out.write("correlations.csv", by_week.bytes())?;
    ctx.out.write("correlation_medians.csv", medians.bytes())?;
    ctx.out.write("weekly_distribution.csv", distribution_table(&cohort).bytes())?;
    Ok(())
}

fn train_config(ctx: &Ctx) -> Result<TrainConfig> {
    match &ctx.config {
        Some(doc) => train_config_from(doc, TrainConfig::default()).map_err(|e| CliError::data("config", e.to_string())),
        None => Ok(TrainConfig::default()),
    }
}

fn train_cmd(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    let kind: ModelKind = a.kind.parse().map_err(|e| CliError::usage(format!("--kind: {e}")))?;
    let weeks = week_range(&a.weeks, "weeks")?;
    let mut cfg = train_config(ctx)?;
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(c) = &a.class_weighting {
        cfg.class_weighting = c.parse::<ClassWeighting>().map_err(|e| CliError::usage(format!("--class-weighting: {e}")))?;
    }
    if cfg.lambda.is_nan() || cfg.lambda <= 0.0 || cfg.epochs == 0 {
        return Err(CliError::usage("--lambda must be > 0 and --epochs >= 1"));
    }
    cfg.seed = seed::derive(ctx.seed, "train");
    let cohort = load(ctx, &a.cohort)?;
    let periods = weekly(&cohort, a.cohort.labels, &weeks)?;
    let model = if kind == ModelKind::RuleBased {
        RiskModel::rule_based()
    } else {
        train(&labeled_examples(&periods), kind, &cfg).map_err(|e| CliError::data("train", e.to_string()))?
    };
    let model = model.with_train_weeks(weeks);
    ctx.out.write("model.txt", model.to_text().as_bytes())?;
    log::info!("trained {} on {} labeled records", model.describe(), periods.iter().map(Period::len).sum::<usize>());
    Ok(())
}

fn policy_config(ctx: &Ctx, a: &SimulateArgs) -> Result<(PolicyConfig, Schedule)> {
    let (mut policy, mut schedule) = match &ctx.config {
        Some(doc) => (
            PolicyConfig::from_document(doc, &[]).map_err(|e| CliError::data("config", e.to_string()))?,
            Schedule::from_document(doc).map_err(|e| CliError::data("config", e.to_string()))?,
        ),
        None => (PolicyConfig::default(), Schedule::default()),
    };
    if let Some(c) = a.capacity {
        policy.capacity = c;
    }
    if let Some(r) = a.exploration_fraction {
        policy.exploration_fraction = r;
    }
    if let Some(s) = &a.sampler {
        policy.sampler = s.parse::<Sampler>().map_err(|e| CliError::usage(format!("--sampler: {e}")))?;
    }
    if let Some(r) = &a.retrain_on {
        policy.retrain_on = r.parse::<RetrainOn>().map_err(|e| CliError::usage(format!("--retrain-on: {e}")))?;
    }
    if let Some(n) = a.retrain_every {
        schedule.retrain_every = n;
    }
    if let Some(p) = &a.period {
        schedule.unit = match p.as_str() {
            "week" => PeriodUnit::Week,
            "day" => PeriodUnit::Day,
            other => return Err(CliError::usage(format!("--period {other:?}: expected week or day"))),
        };
    }
    policy.seed = ctx.seed;
    policy.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok((policy, schedule))
}

fn simulate(ctx: &mut Ctx, a: &SimulateArgs) -> Result<()> {
    let (policy, schedule) = policy_config(ctx, a)?;
    let model = load_model(ctx, &a.model.model)?;
    let cohort = load(ctx, &a.cohort)?;
    let range = eval_weeks(&cohort, &[&model], a.model.weeks.as_deref())?;
    let labels = label_policy(a.cohort.labels);
    let warm = match &a.warm_start_weeks {
        Some(text) => {
            let w = week_range(text, "warm-start-weeks")?;
            if *w.end() >= *range.start() {
                return Err(CliError::data(
                    "leakage",
                    format!("warm-start weeks {}-{} must precede replayed weeks {}-", w.start(), w.end(), range.start()),
                ));
            }
            let mut ws = WarmStart::from_periods(&weekly(&cohort, a.cohort.labels, &w)?, format!("weeks {}-{}", w.start(), w.end()));
            if schedule.unit == PeriodUnit::Day {
                // period keys are days of the year; the week check above already separates them
                ws.through = None;
            }
            Some(ws)
        }
        None => None,
    };
    let replayed: Vec<_> = cohort
        .records()
        .iter()
        .filter(|r| cohort.week(r.record_id).is_some_and(|w| range.contains(&w)))
        .cloned()
        .collect();
    let sub = Cohort::new(replayed).map_err(|e| CliError::data("data", e.to_string()))?;
    let periods = sub.periods(schedule.unit, labels);
    if periods.is_empty() {
        return Err(CliError::data("data", "no labeled records to replay"));
    }
    let trace = run_replay(&periods, &model, &policy, &schedule, warm.as_ref(), ctx.seed).map_err(|e| match e {
        testbandit::simulate::ReplayError::Leakage(d) => CliError::data("leakage", d),
        other => CliError::data("simulate", other.to_string()),
    })?;
    write_trace(ctx, &trace, &model)?;
    log::info!(
        "replayed {} periods, mean recall {:.4}, {} model versions",
        trace.periods.len(),
        trace.mean_recall(),
        trace.lineage.len()
    );
    Ok(())
}

fn write_trace(ctx: &mut Ctx, trace: &SimulationTrace, model: &RiskModel) -> Result<()> {
    let ser = |v: Value| serde_json::to_string(&v).map_err(|e| CliError::internal(e.to_string()));
    let tagged = |kind: &str, v: Value| {
        let mut m = serde_json::Map::new();
        m.insert("type".into(), json!(kind));
        if let Value::Object(o) = v {
            m.extend(o);
        }
        Value::Object(m)
    };
    let mut lines = vec![ser(json!({
        "type": "header",
        "manifest_id": ctx.out.manifest_id,
        "seed": trace.seed,
        "initial_model": model.describe(),
        "policy": trace.policy,
        "schedule": trace.schedule,
    }))?];
    for p in &trace.periods {
        lines.push(ser(tagged("period", serde_json::to_value(p).map_err(|e| CliError::internal(e.to_string()))?))?);
    }
    for v in &trace.lineage {
        lines.push(ser(tagged("model_version", serde_json::to_value(v).map_err(|e| CliError::internal(e.to_string()))?))?);
    }
    let mut text = lines.join("\n");
    text.push('\n');
    ctx.out.write("trace.jsonl", text.as_bytes())?;

    let mut summary = Table::new(&[
        "period", "pool", "positives", "k_exploit", "k_explore", "hits", "recall", "precision", "f1", "model_version", "truncated",
    ]);
    let mut selections = Table::new(&["period", "record_id", "channel", "arm", "score", "positive"]);
    for p in &trace.periods {
        summary.row(&[
            p.period.to_string(),
            p.pool.to_string(),
            p.positives.to_string(),
            p.k_exploit.to_string(),
            p.k_explore.to_string(),
            p.hits.to_string(),
            num(p.recall),
            opt(p.precision),
            num(p.f1),
            p.model_version.to_string(),
            p.truncated.to_string(),
        ]);
        let label: std::collections::HashMap<_, _> = p.revealed.iter().copied().collect();
        for (ids, channel) in [(&p.exploit_ids, "exploit"), (&p.explore_ids, "explore")] {
            for id in ids {
                selections.row(&[
                    p.period.to_string(),
                    id.to_string(),
                    channel.to_string(),
                    p.arm_assignments.get(id).cloned().unwrap_or_default(),
                    p.scores.get(id).map(|s| num(*s)).unwrap_or_default(),
                    u8::from(label[id]).to_string(),
                ]);
            }
        }
    }
    ctx.out.write("summary.csv", summary.bytes())?;
    ctx.out.write("selections.csv", selections.bytes())?;
    let mut lineage = Table::new(&["version", "model", "trained_through", "examples", "positives", "description"]);
    for v in &trace.lineage {
        lineage.row(&[
            v.version.to_string(),
            v.model.clone(),
            v.trained_through.map(|t| t.to_string()).unwrap_or_default(),
            v.examples.to_string(),
            v.positives.to_string(),
            v.description.replace(',', ";"),
        ]);
    }
    ctx.out.write("lineage.csv", lineage.bytes())
}

fn scored_periods(ctx: &mut Ctx, cohort_args: &CohortArgs, model_args: &ModelArgs) -> Result<(RiskModel, Vec<Period>)> {
    let model = load_model(ctx, &model_args.model)?;
    let cohort = load(ctx, cohort_args)?;
    let range = eval_weeks(&cohort, &[&model], model_args.weeks.as_deref())?;
    let periods = weekly(&cohort, cohort_args.labels, &range)?;
    Ok((model, periods))
}

fn k_header(prefix: &str, first: &str, ks: &[usize]) -> Vec<String> {
    std::iter::once(first.to_string()).chain(ks.iter().map(|k| format!("{prefix}@{k}"))).collect()
}

fn sweep(ctx: &mut Ctx, a: &SweepArgs) -> Result<()> {
    let fractions: Vec<f64> = list(&a.fractions, "fractions")?;
    let ks: Vec<usize> = list(&a.ks, "ks")?;
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CliError::usage("--fractions must lie in [0, 1]"));
    }
    if a.runs == 0 {
        return Err(CliError::usage("--runs must be >= 1"));
    }
    let (model, periods) = scored_periods(ctx, &a.cohort, &a.model)?;
    let table = exploration_sweep(&periods, &model, &fractions, &ks, a.runs, seed::derive(ctx.seed, "sweep"), Execution::default())
        .map_err(|e| CliError::data("sweep", e.to_string()))?;
    for (name, prefix, values) in [("sweep.csv", "recall", &table.recall), ("sweep_precision.csv", "precision", &table.precision)] {
        let mut t = Table::new(&k_header(prefix, "exploration_fraction", &ks));
        for (f, row) in fractions.iter().zip(values) {
            let mut r = vec![num(*f)];
            r.extend(row.iter().map(|v| num(*v)));
            t.row(&r);
        }
        ctx.out.write(name, t.bytes())?;
    }
    Ok(())
}

fn bootstrap(ctx: &mut Ctx, a: &BootstrapArgs) -> Result<()> {
    if a.replicates < 2 {
        return Err(CliError::usage("--replicates must be >= 2"));
    }
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::usage("--level must lie in (0, 1)"));
    }
    let (model, periods) = scored_periods(ctx, &a.cohort, &a.model)?;
    let cfg = BootstrapConfig {
        replicates: a.replicates,
        level: a.level,
        seed: seed::derive(ctx.seed, "bootstrap"),
        execution: Execution::default(),
    };
    let r = bootstrap_ci(&periods, &model, a.k, &cfg).map_err(|e| CliError::data("bootstrap", e.to_string()))?;
    let mut t = Table::new(&["model", "k", "level", "mean_recall", "lo", "hi", "replicates", "skipped"]);
    t.row(&[
        model.describe(),
        r.k.to_string(),
        num(r.level),
        num(r.mean),
        num(r.lo),
        num(r.hi),
        r.replicate_means.len().to_string(),
        r.skipped.len().to_string(),
    ]);
    ctx.out.write("bootstrap.csv", t.bytes())?;
    let mut reps = Table::new(&["replicate", "mean_recall"]);
    for (i, m) in r.replicate_means.iter().enumerate() {
        reps.row(&[i.to_string(), num(*m)]);
    }
    ctx.out.write("bootstrap_replicates.csv", reps.bytes())?;
    log::info!("mean recall@{} {:.4}, {:.0}% CI ({:.4}, {:.4})", r.k, r.mean, r.level * 100.0, r.lo, r.hi);
    Ok(())
}

fn model_name(spec: &str) -> (String, String) {
    if let Some((name, path)) = spec.split_once('=') {
        return (name.to_string(), path.to_string());
    }
    let name = Path::new(spec).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
    (name, spec.to_string())
}

fn safe_name(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn report(ctx: &mut Ctx, a: &ReportArgs) -> Result<()> {
    let ks: Vec<usize> = list(&a.ks, "ks")?;
    let specs = if a.models.is_empty() { vec!["rule".to_string()] } else { a.models.clone() };
    let mut models = Vec::new();
    for spec in &specs {
        let (name, path) = model_name(spec);
        if models.iter().any(|(n, _): &(String, RiskModel)| *n == name) {
            return Err(CliError::usage(format!("duplicate model name {name:?}; use NAME=PATH")));
        }
        models.push((name, load_model(ctx, &path)?));
    }
    let cohort = load(ctx, &a.cohort)?;
    let all = cohort.periods(PeriodUnit::Week, label_policy(a.cohort.labels));
    ctx.out.write("weekly_distribution.csv", distribution_table(&cohort).bytes())?;
    let (by_week, medians) = correlation_tables(&all);
    ctx.out.write("correlation_by_week.csv", by_week.bytes())?;
    ctx.out.write("correlation_medians.csv", medians.bytes())?;

    let refs: Vec<&RiskModel> = models.iter().map(|m| &m.1).collect();
    let range = eval_weeks(&cohort, &refs, a.weeks.as_deref())?;
    let periods = weekly(&cohort, a.cohort.labels, &range)?;
    // common tie seeds across models
    let eval_seed = seed::derive(ctx.seed, "eval");
    let reports: Vec<RankingReport> = models
        .iter()
        .map(|(_, m)| evaluate_ranking(&periods, m, &ks, eval_seed, Execution::default()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::data("evaluate", e.to_string()))?;

    let mut mean_recall = Table::new(&k_header("recall", "model", &ks));
    let mut mean_f1 = Table::new(&k_header("f1", "model", &ks));
    let mut mean_precision = Table::new(&k_header("precision", "model", &ks));
    let mut ci = Table::new(&["model", "k", "level", "mean_recall", "lo", "hi"]);
    for ((name, model), rep) in models.iter().zip(&reports) {
        let mut weekly_t = Table::new(&[k_header("recall", "week", &ks), vec!["number_of_tests".to_string()]].concat());
        for (w, (row, pool)) in rep.weeks.iter().zip(rep.cells.iter().zip(&rep.pool_sizes)) {
            let mut r = vec![w.to_string()];
            r.extend(row.iter().map(|c| num(c.recall)));
            r.push(pool.to_string());
            weekly_t.row(&r);
        }
        ctx.out.write(&format!("weekly_recall_{}.csv", safe_name(name)), weekly_t.bytes())?;
        let per_k = |f: &dyn Fn(usize) -> f64| {
            let mut r = vec![name.clone()];
            r.extend((0..ks.len()).map(|i| num(f(i))));
            r
        };
        mean_recall.row(&per_k(&|i| rep.mean_recall(i)));
        mean_f1.row(&per_k(&|i| rep.mean_f1(i)));
        mean_precision.row(&per_k(&|i| rep.mean_precision(i)));
        if a.ci_replicates > 0 {
            for &k in &ks {
                let cfg = BootstrapConfig {
                    replicates: a.ci_replicates,
                    seed: seed::derive(ctx.seed, "bootstrap"),
                    ..BootstrapConfig::default()
                };
                let r = bootstrap_ci(&periods, model, k, &cfg).map_err(|e| CliError::data("bootstrap", e.to_string()))?;
                ci.row(&[name.clone(), k.to_string(), num(r.level), num(r.mean), num(r.lo), num(r.hi)]);
            }
        }
    }
    ctx.out.write("mean_recall.csv", mean_recall.bytes())?;
    ctx.out.write("mean_f1.csv", mean_f1.bytes())?;
    ctx.out.write("mean_precision.csv", mean_precision.bytes())?;
    if a.ci_replicates > 0 {
        ctx.out.write("mean_recall_ci.csv", ci.bytes())?;
    }
    let mut curves = Table::new(&std::iter::once("k".to_string()).chain(models.iter().map(|m| m.0.clone())).collect::<Vec<_>>());
    for (i, k) in ks.iter().enumerate() {
        let mut r = vec![k.to_string()];
        r.extend(reports.iter().map(|rep| num(rep.mean_recall(i))));
        curves.row(&r);
    }
    ctx.out.write("recalls_models.csv", curves.bytes())?;

    if let Some(path) = &a.trace {
        ctx.out.record_input(path);
        let text = read_text(path)?;
        let mut t = Table::new(&["period", "recall", "precision", "f1", "k_explore", "model_version"]);
        for (n, line) in text.lines().enumerate() {
            let v: Value = serde_json::from_str(line).map_err(|e| CliError::data("trace", format!("line {}: {e}", n + 1)))?;
            if v["type"] != "period" {
                continue;
            }
            let field = |k: &str| match &v[k] {
                Value::Null => String::new(),
                other => other.to_string(),
            };
            t.row(&[field("period"), field("recall"), field("precision"), field("f1"), field("k_explore"), field("model_version")]);
        }
        ctx.out.write("trace_recall.csv", t.bytes())?;
    }
    Ok(())
}
