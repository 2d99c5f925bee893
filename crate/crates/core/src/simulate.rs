//! Period-by-period replay of a cohort under a testing policy, plus the
//! offline experiments built on the same pieces: the two-window retraining
//! comparison and the exploration-fraction sweep.
//!
//! In a replay only the labels of selected records are revealed. At the end
//! of a period those labels join the labeled store, arm posteriors are
//! updated and the ranker may be retrained; the next period is scored with
//! the result. Metrics are computed against each period's full ground truth.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::Serialize;
use thiserror::Error;

use crate::evaluate::{mean, AtK};
use crate::kv::{Document, KvError};
use crate::par::Execution;
use crate::policy::{score_pool, select_scored, split_budget, update_arm, Arm, PolicyConfig, PolicyError, RetrainOn, Sampler};
use crate::records::{periods_in, FeatureVector, Period, PeriodUnit, RecordId};
use crate::scoring::{train, ClassWeighting, ModelKind, RiskModel, Scorer, ScoringError, TrainConfig, TrainError};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("no records in week range {0}-{1}")]
    EmptyRange(u32, u32),
    #[error("nothing to replay")]
    NoPeriods,
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// When and how the ranker is retrained during a replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    /// Retrain after every n-th period; 0 never retrains.
    pub retrain_every: usize,
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub unit: PeriodUnit,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            retrain_every: 1,
            kind: ModelKind::Poly2,
            train: TrainConfig::default(),
            unit: PeriodUnit::Week,
        }
    }
}

pub const SCHEDULE_KEYS: [&str; 3] = ["retrain_every", "kind", "period"];
pub const TRAIN_KEYS: [&str; 3] = ["lambda", "epochs", "class_weighting"];

/// Reads `[train]` (lambda, epochs, class_weighting) into `base`.
pub fn train_config_from(doc: &Document, base: TrainConfig) -> Result<TrainConfig, KvError> {
    let Some(section) = doc.section("train") else {
        return Ok(base);
    };
    section.check_keys(&TRAIN_KEYS)?;
    let cfg = TrainConfig {
        lambda: section.parse("lambda")?.unwrap_or(base.lambda),
        epochs: section.parse("epochs")?.unwrap_or(base.epochs),
        seed: base.seed,
        class_weighting: section.parse::<ClassWeighting>("class_weighting")?.unwrap_or(base.class_weighting),
    };
    if cfg.lambda.is_nan() || cfg.lambda <= 0.0 {
        return Err(section.value_error("lambda", "must be > 0"));
    }
    if cfg.epochs == 0 {
        return Err(section.value_error("epochs", "must be >= 1"));
    }
    Ok(cfg)
}

impl Schedule {
    /// Reads `[schedule]` (retrain_every, kind, period = week|day) and `[train]`.
    pub fn from_document(doc: &Document) -> Result<Self, ReplayError> {
        let d = Self::default();
        let train = train_config_from(doc, d.train)?;
        let Some(section) = doc.section("schedule") else {
            return Ok(Self { train, ..d });
        };
        section.check_keys(&SCHEDULE_KEYS)?;
        let kind = section.parse::<ModelKind>("kind")?.unwrap_or(d.kind);
        if kind == ModelKind::RuleBased {
            return Err(ReplayError::Schedule("retraining kind must be linear or poly2".into()));
        }
        let unit = match section.get("period").map(|e| e.value.as_str()) {
            None | Some("week") => PeriodUnit::Week,
            Some("day") => PeriodUnit::Day,
            Some(other) => return Err(ReplayError::Schedule(format!("period {other:?} (week, day)"))),
        };
        Ok(Self {
            retrain_every: section.parse("retrain_every")?.unwrap_or(d.retrain_every),
            kind,
            train,
            unit,
        })
    }
}

/// Labeled data available before the first replayed period.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub examples: Vec<(FeatureVector, bool)>,
    /// Last period key contributing to `examples`.
    pub through: Option<u32>,
    pub description: String,
}

impl WarmStart {
    /// Every label of the given periods.
    pub fn from_periods(periods: &[Period], description: impl Into<String>) -> Self {
        let examples = periods
            .iter()
            .flat_map(|p| p.candidates.iter().zip(&p.labels).map(|(c, l)| (c.features, *l)))
            .collect();
        Self {
            examples,
            through: periods.iter().map(|p| p.key).max(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSnapshot {
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodEntry {
    pub period: u32,
    pub pool: usize,
    pub positives: usize,
    pub k_exploit: usize,
    pub k_explore: usize,
    pub exploit_ids: Vec<RecordId>,
    pub explore_ids: Vec<RecordId>,
    pub arm_assignments: BTreeMap<RecordId, String>,
    /// Posteriors used for this period's exploration.
    pub arms: Vec<ArmSnapshot>,
    /// Labels of the selected records, the only ones revealed.
    pub revealed: Vec<(RecordId, bool)>,
    pub scores: BTreeMap<RecordId, f64>,
    pub truncated: usize,
    pub hits: usize,
    pub recall: f64,
    pub precision: Option<f64>,
    pub f1: f64,
    pub model_version: usize,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelVersion {
    pub version: usize,
    pub model: String,
    /// Last period whose labels are in the training set; `None` for the
    /// initial scorer unless it carries trained weeks.
    pub trained_through: Option<u32>,
    pub examples: usize,
    pub positives: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTrace {
    pub seed: u64,
    pub policy: PolicyConfig,
    pub schedule: Schedule,
    pub periods: Vec<PeriodEntry>,
    pub lineage: Vec<ModelVersion>,
}

impl SimulationTrace {
    pub fn revealed_count(&self) -> usize {
        self.periods.iter().map(|p| p.revealed.len()).sum()
    }

    pub fn selected_count(&self) -> usize {
        self.periods.iter().map(|p| p.exploit_ids.len() + p.explore_ids.len()).sum()
    }

    pub fn mean_recall(&self) -> f64 {
        mean(&self.periods.iter().map(|p| p.recall).collect::<Vec<_>>())
    }

    /// Share of Thompson assignments per arm over `periods[from..]`.
    pub fn arm_share(&self, arm: &str, from: usize) -> f64 {
        let (hit, total) = self.periods.iter().skip(from).fold((0usize, 0usize), |(h, t), p| {
            let h2 = p.arm_assignments.values().filter(|a| *a == arm).count();
            (h + h2, t + p.arm_assignments.len())
        });
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

fn overlaps(a: &RangeInclusive<u32>, key: u32) -> bool {
    a.contains(&key)
}

/// Replays `periods` (sorted by key) under `policy`, starting from `model0`.
///
/// Period `t` uses seed `derive_indexed(seed, "period", key)` for selection and
/// a retraining after it uses `derive_indexed(seed, "train", key)`. A failed
/// retraining (single-class store) keeps the current model and records an
/// event.
pub fn run_replay(
    periods: &[Period],
    model0: &dyn Scorer,
    policy: &PolicyConfig,
    schedule: &Schedule,
    warm_start: Option<&WarmStart>,
    seed_value: u64,
) -> Result<SimulationTrace, ReplayError> {
    policy.validate()?;
    let first = periods.first().ok_or(ReplayError::NoPeriods)?.key;
    if let Some(trained) = model0.trained_on() {
        if schedule.unit == PeriodUnit::Week {
            if let Some(p) = periods.iter().find(|p| overlaps(&trained, p.key)) {
                return Err(ReplayError::Leakage(format!(
                    "initial model was trained on weeks {}-{}, which include replayed week {}",
                    trained.start(),
                    trained.end(),
                    p.key
                )));
            }
        }
    }
    if let Some(w) = warm_start {
        if let Some(through) = w.through {
            if through >= first {
                return Err(ReplayError::Leakage(format!(
                    "warm-start data runs through period {through}, replay starts at {first}"
                )));
            }
        }
    }

    let mut store: Vec<(FeatureVector, bool)> = warm_start.map(|w| w.examples.clone()).unwrap_or_default();
    let mut lineage = vec![ModelVersion {
        version: 0,
        model: model0.describe(),
        trained_through: model0.trained_on().map(|w| *w.end()),
        examples: 0,
        positives: 0,
        description: "initial scorer".into(),
    }];
    let mut current: Option<RiskModel> = None;
    let mut arms: Vec<Arm> = policy.arms.clone();
    let mut entries = Vec::with_capacity(periods.len());

    // a warm start trains before the first period
    if let Some(w) = warm_start {
        if !w.examples.is_empty() {
            let cfg = TrainConfig {
                seed: seed::derive(seed_value, "warm-start"),
                ..schedule.train
            };
            match train(&store, schedule.kind, &cfg) {
                Ok(m) => {
                    lineage.push(ModelVersion {
                        version: 1,
                        model: m.kind.to_string(),
                        trained_through: w.through,
                        examples: store.len(),
                        positives: store.iter().filter(|e| e.1).count(),
                        description: format!("warm start: {}", w.description),
                    });
                    current = Some(m);
                }
                Err(e) => log::warn!("warm-start training failed: {e}"),
            }
        }
    }

    for (index, period) in periods.iter().enumerate() {
        let version = lineage.len() - 1;
        let scorer: &dyn Scorer = match &current {
            Some(m) => m,
            None => model0,
        };
        let scores = score_pool(scorer, &period.candidates, Execution::default())?;
        let period_seed = seed::derive_indexed(seed_value, "period", u64::from(period.key));
        let selection = select_scored(&period.candidates, &scores, policy, &arms, period_seed)?;

        let label_of: BTreeMap<RecordId, (usize, bool)> = period
            .candidates
            .iter()
            .zip(&period.labels)
            .enumerate()
            .map(|(i, (c, l))| (c.id, (i, *l)))
            .collect();
        let revealed: Vec<(RecordId, bool)> = selection.all_ids().map(|id| (id, label_of[&id].1)).collect();
        let hits = revealed.iter().filter(|r| r.1).count();
        let at = AtK::from_counts(selection.len(), hits, selection.len(), period.positives());
        let mut events = Vec::new();
        if at.positives == 0 {
            events.push("no positives in pool; recall reported as 0".to_string());
        }
        if selection.truncated > 0 {
            events.push(format!("exploration truncated by {} slots (arms exhausted)", selection.truncated));
        }

        let snapshot = arms
            .iter()
            .map(|a| ArmSnapshot {
                name: a.name.clone(),
                alpha: a.alpha,
                beta: a.beta,
            })
            .collect();

        // period end: results arrive
        let channel_ids: Vec<RecordId> = match policy.retrain_on {
            RetrainOn::AllLabeled => selection.all_ids().collect(),
            RetrainOn::ExplorationOnly => selection.explore_ids.clone(),
        };
        for id in channel_ids {
            let (i, label) = label_of[&id];
            store.push((period.candidates[i].features, label));
        }
        if policy.sampler == Sampler::Thompson {
            let mut tallies = vec![(0u64, 0u64); arms.len()];
            for (id, arm_name) in &selection.arm_assignments {
                if let Some(a) = arms.iter().position(|a| &a.name == arm_name) {
                    if label_of[id].1 {
                        tallies[a].0 += 1;
                    } else {
                        tallies[a].1 += 1;
                    }
                }
            }
            for (arm, (p, n)) in arms.iter_mut().zip(tallies) {
                *arm = update_arm(arm, p, n);
            }
        }
        let (k_exploit, k_explore) = (selection.exploit_ids.len(), selection.explore_ids.len());
        if schedule.retrain_every > 0 && (index + 1) % schedule.retrain_every == 0 {
            let cfg = TrainConfig {
                seed: seed::derive_indexed(seed_value, "train", u64::from(period.key)),
                ..schedule.train
            };
            match train(&store, schedule.kind, &cfg) {
                Ok(m) => {
                    lineage.push(ModelVersion {
                        version: lineage.len(),
                        model: m.kind.to_string(),
                        trained_through: Some(period.key),
                        examples: store.len(),
                        positives: store.iter().filter(|e| e.1).count(),
                        description: format!("retrained after period {}", period.key),
                    });
                    current = Some(m);
                }
                Err(e) => {
                    log::info!("period {}: retraining skipped: {e}", period.key);
                    events.push(format!("retraining skipped: {e}"));
                }
            }
        }

        entries.push(PeriodEntry {
            period: period.key,
            pool: period.len(),
            positives: at.positives,
            k_exploit,
            k_explore,
            exploit_ids: selection.exploit_ids,
            explore_ids: selection.explore_ids,
            arm_assignments: selection.arm_assignments,
            arms: snapshot,
            revealed,
            scores: selection.scores,
            truncated: selection.truncated,
            hits,
            recall: at.recall,
            precision: at.precision,
            f1: at.f1,
            model_version: version,
            events,
        });
    }

    Ok(SimulationTrace {
        seed: seed_value,
        policy: policy.clone(),
        schedule: schedule.clone(),
        periods: entries,
        lineage,
    })
}

/// Two-window retraining comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitExperiment {
    pub train_a: RangeInclusive<u32>,
    pub train_b: RangeInclusive<u32>,
    pub eval: RangeInclusive<u32>,
    pub capacities: Vec<usize>,
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitRow {
    pub k: usize,
    pub recall_a: f64,
    pub recall_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitOutcome {
    pub model_a: RiskModel,
    pub model_b: RiskModel,
    pub rows: Vec<SplitRow>,
}

fn ranges_overlap(a: &RangeInclusive<u32>, b: &RangeInclusive<u32>) -> bool {
    a.start() <= b.end() && b.start() <= a.end()
}

pub fn labeled_examples(periods: &[Period]) -> Vec<(FeatureVector, bool)> {
    WarmStart::from_periods(periods, "").examples
}

/// Trains one model per window and reports mean weekly recall@K of both on
/// the evaluation window. Both models share the training seed and the
/// evaluation tie seeds.
pub fn train_eval_split_experiment(weekly: &[Period], exp: &SplitExperiment) -> Result<SplitOutcome, ReplayError> {
    for (name, w) in [("A", &exp.train_a), ("B", &exp.train_b)] {
        if ranges_overlap(w, &exp.eval) {
            return Err(ReplayError::Leakage(format!(
                "training window {name} ({}-{}) overlaps evaluation weeks {}-{}",
                w.start(),
                w.end(),
                exp.eval.start(),
                exp.eval.end()
            )));
        }
    }
    let pick = |w: &RangeInclusive<u32>| {
        let ps = periods_in(weekly, w);
        if ps.iter().all(Period::is_empty) {
            Err(ReplayError::EmptyRange(*w.start(), *w.end()))
        } else {
            Ok(ps)
        }
    };
    let (a, b, eval) = (pick(&exp.train_a)?, pick(&exp.train_b)?, pick(&exp.eval)?);
    let cfg = TrainConfig {
        seed: seed::derive(exp.seed, "train"),
        ..exp.train
    };
    let model_a = train(&labeled_examples(&a), exp.kind, &cfg)?.with_train_weeks(exp.train_a.clone());
    let model_b = train(&labeled_examples(&b), exp.kind, &cfg)?.with_train_weeks(exp.train_b.clone());
    let eval_seed = seed::derive(exp.seed, "eval");
    let ra = crate::evaluate::evaluate_ranking(&eval, &model_a, &exp.capacities, eval_seed, Execution::default())
        .map_err(|e| ReplayError::Schedule(e.to_string()))?;
    let rb = crate::evaluate::evaluate_ranking(&eval, &model_b, &exp.capacities, eval_seed, Execution::default())
        .map_err(|e| ReplayError::Schedule(e.to_string()))?;
    let rows = exp
        .capacities
        .iter()
        .enumerate()
        .map(|(i, &k)| SplitRow {
            k,
            recall_a: ra.mean_recall(i),
            recall_b: rb.mean_recall(i),
        })
        .collect();
    Ok(SplitOutcome { model_a, model_b, rows })
}

/// Mean weekly recall for every (exploration fraction, capacity) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub model: String,
    pub fractions: Vec<f64>,
    pub capacities: Vec<usize>,
    /// `recall[fraction][capacity]`, averaged over weeks and runs.
    pub recall: Vec<Vec<f64>>,
    pub precision: Vec<Vec<f64>>,
    pub runs: usize,
}

/// Exploration sweep with uniform exploration: for each fraction rho and
/// capacity C, `floor(rho C)` tests go to a uniform sample outside the top
/// `C - floor(rho C)`. Run `r`, week `w` use seed
/// `derive_indexed(derive_indexed(seed, "sweep", r), "period", w)`, shared
/// across cells.
pub fn exploration_sweep(
    periods: &[Period],
    scorer: &dyn Scorer,
    fractions: &[f64],
    capacities: &[usize],
    runs: usize,
    seed_value: u64,
    exec: Execution,
) -> Result<SweepTable, ReplayError> {
    if periods.is_empty() {
        return Err(ReplayError::NoPeriods);
    }
    if runs == 0 {
        return Err(ReplayError::Schedule("runs must be >= 1".into()));
    }
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(PolicyError::Config(format!("exploration fraction {f} outside [0, 1]")).into());
        }
    }
    let scores: Vec<Vec<f64>> = periods
        .iter()
        .map(|p| score_pool(scorer, &p.candidates, exec))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, usize)> = (0..fractions.len()).flat_map(|i| (0..capacities.len()).map(move |j| (i, j))).collect();
    let results = exec.map_range(cells.len(), |c| {
        let (i, j) = cells[c];
        let policy = PolicyConfig {
            capacity: capacities[j],
            exploration_fraction: fractions[i],
            ..PolicyConfig::default()
        };
        let mut recalls = Vec::new();
        let mut precisions = Vec::new();
        for r in 0..runs {
            let run_seed = seed::derive_indexed(seed_value, "sweep", r as u64);
            for (p, s) in periods.iter().zip(&scores) {
                let sel = select_scored(&p.candidates, s, &policy, &[], seed::derive_indexed(run_seed, "period", u64::from(p.key)))?;
                let chosen: std::collections::HashSet<RecordId> = sel.all_ids().collect();
                let hits = p.candidates.iter().zip(&p.labels).filter(|(c, l)| **l && chosen.contains(&c.id)).count();
                let at = AtK::from_counts(sel.len(), hits, sel.len(), p.positives());
                recalls.push(at.recall);
                precisions.push(at.precision.unwrap_or(0.0));
            }
        }
        Ok::<_, PolicyError>((mean(&recalls), mean(&precisions)))
    });
    let mut recall = vec![vec![0.0; capacities.len()]; fractions.len()];
    let mut precision = recall.clone();
    for (c, res) in results.into_iter().enumerate() {
        let (i, j) = cells[c];
        let (r, p) = res?;
        recall[i][j] = r;
        precision[i][j] = p;
    }
    // keep split_budget in the public contract of the sweep
    debug_assert!(capacities.iter().all(|&c| {
        let (a, b) = split_budget(c, 0.5);
        a + b == c
    }));
    Ok(SweepTable {
        model: scorer.describe(),
        fractions: fractions.to_vec(),
        capacities: capacities.to_vec(),
        recall,
        precision,
        runs,
    })
}
