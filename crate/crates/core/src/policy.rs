//! Per-period testing decisions: split the capacity into an exploitation and
//! an exploration budget, take the top-ranked candidates for the first and
//! fill the second by uniform sampling or batch Thompson sampling over
//! expert-defined arms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::Serialize;
use thiserror::Error;

use crate::kv::{Document, KvError, Section};
use crate::par::Execution;
use crate::records::{feature_index, Candidate, FeatureVector, RecordId, FEATURE_NAMES};
use crate::scoring::{Scorer, ScoringError};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("record {0} is not covered by any exploration arm")]
    Uncovered(RecordId),
    #[error("predicate {0:?}: {1}")]
    Predicate(String, String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Sampler {
    #[default]
    UniformRandom,
    Thompson,
}

impl FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "uniform" | "uniform_random" => Ok(Sampler::UniformRandom),
            "thompson" => Ok(Sampler::Thompson),
            other => Err(format!("unknown sampler {other:?} (uniform, thompson)")),
        }
    }
}

/// Which revealed labels feed retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum RetrainOn {
    #[default]
    AllLabeled,
    /// Only the exploration channel, which is not biased by the ranker.
    ExplorationOnly,
}

impl FromStr for RetrainOn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all_labeled" => Ok(RetrainOn::AllLabeled),
            "exploration_only" => Ok(RetrainOn::ExplorationOnly),
            other => Err(format!("unknown retrain_on {other:?} (all_labeled, exploration_only)")),
        }
    }
}

/// Conjunction of `feature = value` constraints. The empty conjunction
/// matches every candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predicate {
    constraints: Vec<(usize, f64)>,
}

impl Predicate {
    pub fn all() -> Self {
        Self { constraints: Vec::new() }
    }

    pub fn matches(&self, fv: &FeatureVector) -> bool {
        self.constraints.iter().all(|(i, v)| fv.get(*i) == *v)
    }
}

impl FromStr for Predicate {
    type Err = PolicyError;

    /// `contact_with_confirmed=1 & cough=1`, or `*` for everyone.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        if text == "*" || text.is_empty() {
            return Ok(Self::all());
        }
        let err = |detail: String| PolicyError::Predicate(text.to_string(), detail);
        let mut constraints = Vec::new();
        for term in text.split('&') {
            let (name, value) = term.split_once('=').ok_or_else(|| err(format!("term {:?} is not feature=value", term.trim())))?;
            let index = feature_index(name.trim()).ok_or_else(|| err(format!("unknown feature {:?}", name.trim())))?;
            let value = match value.trim() {
                "1" => 1.0,
                "0" => 0.0,
                other => return Err(err(format!("value {other:?} must be 0 or 1"))),
            };
            constraints.push((index, value));
        }
        Ok(Self { constraints })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.constraints.is_empty() {
            return f.write_str("*");
        }
        let terms: Vec<String> = self
            .constraints
            .iter()
            .map(|(i, v)| format!("{}={}", FEATURE_NAMES[*i], *v as u8))
            .collect();
        f.write_str(&terms.join(" & "))
    }
}

/// An exploration arm with its Beta pseudo-counts: the prior in a config,
/// the posterior during a replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arm {
    pub name: String,
    pub predicate: Predicate,
    pub alpha: f64,
    pub beta: f64,
}

impl Arm {
    pub fn new(name: impl Into<String>, predicate: Predicate, alpha: f64, beta: f64) -> Self {
        Self {
            name: name.into(),
            predicate,
            alpha,
            beta,
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Conjugate update with `positives` and `negatives` observed outcomes.
pub fn update_arm(arm: &Arm, positives: u64, negatives: u64) -> Arm {
    Arm {
        alpha: arm.alpha + positives as f64,
        beta: arm.beta + negatives as f64,
        ..arm.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyConfig {
    /// Tests per period.
    pub capacity: usize,
    /// Share of the capacity reserved for exploration, in [0, 1].
    pub exploration_fraction: f64,
    pub sampler: Sampler,
    pub arms: Vec<Arm>,
    pub retrain_on: RetrainOn,
    /// Error instead of leaving candidates no arm covers out of Thompson
    /// exploration.
    pub strict_arms: bool,
    /// Drop exploit picks scoring below this value; their slots go to
    /// exploration.
    pub exploit_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            capacity: 1000,
            exploration_fraction: 0.0,
            sampler: Sampler::UniformRandom,
            arms: Vec::new(),
            retrain_on: RetrainOn::AllLabeled,
            strict_arms: false,
            exploit_threshold: None,
            seed: 0,
        }
    }
}

pub const POLICY_KEYS: [&str; 6] = [
    "capacity",
    "exploration_fraction",
    "sampler",
    "retrain_on",
    "strict_arms",
    "exploit_threshold",
];

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            return Err(PolicyError::Config(format!(
                "exploration_fraction {} outside [0, 1]",
                self.exploration_fraction
            )));
        }
        if self.sampler == Sampler::Thompson && self.arms.is_empty() {
            return Err(PolicyError::Config("thompson sampler needs at least one arm".into()));
        }
        for arm in &self.arms {
            if !(arm.alpha > 0.0 && arm.beta > 0.0) {
                return Err(PolicyError::Config(format!("arm {:?}: alpha and beta must be > 0", arm.name)));
            }
        }
        Ok(())
    }

    /// Reads the top-level policy keys and `[arm <name>]` blocks; other
    /// sections are left to their owners.
    ///
    /// ```text
    /// capacity = 1000
    /// exploration_fraction = 0.3
    /// sampler = thompson
    /// retrain_on = exploration_only
    ///
    /// [arm contact]
    /// predicate = contact_with_confirmed=1
    /// alpha = 1
    /// beta = 1
    /// ```
    pub fn from_document(doc: &Document, allowed_top: &[&str]) -> Result<Self, PolicyError> {
        let top = doc.top();
        let mut keys: Vec<&str> = POLICY_KEYS.to_vec();
        keys.extend_from_slice(allowed_top);
        top.check_keys(&keys)?;
        let d = Self::default();
        let mut arms = Vec::new();
        for section in doc.sections_of("arm") {
            arms.push(parse_arm(section)?);
        }
        let config = Self {
            capacity: top.parse("capacity")?.unwrap_or(d.capacity),
            exploration_fraction: top.parse("exploration_fraction")?.unwrap_or(d.exploration_fraction),
            sampler: top.parse("sampler")?.unwrap_or(d.sampler),
            arms,
            retrain_on: top.parse("retrain_on")?.unwrap_or(d.retrain_on),
            strict_arms: top.parse("strict_arms")?.unwrap_or(d.strict_arms),
            exploit_threshold: top.parse("exploit_threshold")?,
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }
}

fn parse_arm(section: &Section) -> Result<Arm, PolicyError> {
    section.check_keys(&["predicate", "alpha", "beta"])?;
    if section.name.is_empty() {
        return Err(PolicyError::Config("arm block needs a name: [arm <name>]".into()));
    }
    let predicate: String = section.require("predicate")?;
    Ok(Arm {
        name: section.name.clone(),
        predicate: predicate.parse()?,
        alpha: section.parse("alpha")?.unwrap_or(1.0),
        beta: section.parse("beta")?.unwrap_or(1.0),
    })
}

/// `(k_exploit, k_explore)` with `k_explore = floor(rho * C)`. A 1e-9 slack
/// absorbs binary rounding (0.29 * 100 is 28.999..).
pub fn split_budget(capacity: usize, exploration_fraction: f64) -> (usize, usize) {
    let raw = (exploration_fraction * capacity as f64 + 1e-9).floor();
    let k_explore = (raw.max(0.0) as usize).min(capacity);
    (capacity - k_explore, k_explore)
}

/// Indices of `scores` in descending order. Ties are broken by a seeded
/// uniform permutation applied before a stable sort.
pub fn rank_indices(scores: &[f64], tie_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut seed::rng(tie_seed));
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

pub fn score_pool(scorer: &dyn Scorer, pool: &[Candidate], exec: Execution) -> Result<Vec<f64>, ScoringError> {
    exec.map_slice(pool, |c| scorer.score(c)).into_iter().collect()
}

/// Record ids by descending score.
pub fn rank_candidates(scorer: &dyn Scorer, pool: &[Candidate], tie_seed: u64) -> Result<Vec<RecordId>, PolicyError> {
    let scores = score_pool(scorer, pool, Execution::default())?;
    Ok(rank_indices(&scores, tie_seed).into_iter().map(|i| pool[i].id).collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Selection {
    /// In rank order.
    pub exploit_ids: Vec<RecordId>,
    /// In draw order.
    pub explore_ids: Vec<RecordId>,
    /// Thompson only.
    pub arm_assignments: BTreeMap<RecordId, String>,
    pub scores: BTreeMap<RecordId, f64>,
    /// Exploration slots that could not be filled.
    pub truncated: usize,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.exploit_ids.len() + self.explore_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.exploit_ids.iter().chain(&self.explore_ids).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    /// `(pool index, arm index)` per filled slot, in slot order.
    pub picks: Vec<(usize, usize)>,
    pub truncated: usize,
}

/// Batch Thompson sampling: for each of `k` slots, draw one posterior sample
/// per arm that still has an untested member, give the slot to the largest
/// draw and test a uniformly chosen remaining member of that arm. Posteriors
/// stay fixed for the whole period.
pub fn thompson_allocate(arms: &[Arm], k: usize, pool: &[Candidate], remaining: &[usize], rng: &mut seed::Rng) -> Allocation {
    let mut members: Vec<Vec<usize>> = arms
        .iter()
        .map(|arm| {
            let mut m: Vec<usize> = remaining.iter().copied().filter(|&i| arm.predicate.matches(&pool[i].features)).collect();
            m.shuffle(rng);
            m
        })
        .collect();
    let betas: Vec<Beta<f64>> = arms
        .iter()
        .map(|a| Beta::new(a.alpha, a.beta).expect("validated alpha, beta > 0"))
        .collect();
    let mut taken = vec![false; pool.len()];
    let mut out = Allocation::default();
    for slot in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (a, list) in members.iter_mut().enumerate() {
            while list.last().is_some_and(|&i| taken[i]) {
                list.pop();
            }
            if list.is_empty() {
                continue;
            }
            let theta = betas[a].sample(rng);
            if best.is_none_or(|(_, b)| theta > b) {
                best = Some((a, theta));
            }
        }
        let Some((a, _)) = best else {
            out.truncated = k - slot;
            break;
        };
        let i = members[a].pop().expect("non-empty arm");
        taken[i] = true;
        out.picks.push((i, a));
    }
    out
}

/// Selection with the config's own arms and seed.
pub fn select(pool: &[Candidate], scorer: &dyn Scorer, config: &PolicyConfig) -> Result<Selection, PolicyError> {
    select_with_arms(pool, scorer, config, &config.arms, config.seed, Execution::default())
}

/// Selection with explicit arm posteriors and seed.
pub fn select_with_arms(
    pool: &[Candidate],
    scorer: &dyn Scorer,
    config: &PolicyConfig,
    arms: &[Arm],
    seed_value: u64,
    exec: Execution,
) -> Result<Selection, PolicyError> {
    config.validate()?;
    let scores = score_pool(scorer, pool, exec)?;
    select_scored(pool, &scores, config, arms, seed_value)
}

/// Selection from precomputed scores aligned with `pool`.
pub fn select_scored(
    pool: &[Candidate],
    scores: &[f64],
    config: &PolicyConfig,
    arms: &[Arm],
    seed_value: u64,
) -> Result<Selection, PolicyError> {
    let order = rank_indices(scores, seed::derive(seed_value, "rank"));
    let (k_exploit, k_explore) = split_budget(config.capacity, config.exploration_fraction);

    let mut exploit: Vec<usize> = order.iter().copied().take(k_exploit).collect();
    if let Some(threshold) = config.exploit_threshold {
        exploit.retain(|&i| scores[i] >= threshold);
    }
    let k_explore = (k_explore + k_exploit - exploit.len()).min(pool.len() - exploit.len());

    let mut chosen = vec![false; pool.len()];
    exploit.iter().for_each(|&i| chosen[i] = true);
    let remaining: Vec<usize> = (0..pool.len()).filter(|&i| !chosen[i]).collect();

    let mut rng = seed::rng(seed::derive(seed_value, "explore"));
    let mut selection = Selection::default();
    let explore: Vec<usize> = match config.sampler {
        Sampler::UniformRandom => {
            let mut r = remaining;
            let (picked, _) = r.partial_shuffle(&mut rng, k_explore);
            picked.to_vec()
        }
        Sampler::Thompson => {
            if config.strict_arms {
                if let Some(&i) = remaining.iter().find(|&&i| !arms.iter().any(|a| a.predicate.matches(&pool[i].features))) {
                    return Err(PolicyError::Uncovered(pool[i].id));
                }
            }
            let alloc = thompson_allocate(arms, k_explore, pool, &remaining, &mut rng);
            selection.truncated = alloc.truncated;
            for &(i, a) in &alloc.picks {
                selection.arm_assignments.insert(pool[i].id, arms[a].name.clone());
            }
            alloc.picks.iter().map(|(i, _)| *i).collect()
        }
    };

    for &i in exploit.iter().chain(&explore) {
        selection.scores.insert(pool[i].id, scores[i]);
    }
    selection.exploit_ids = exploit.iter().map(|&i| pool[i].id).collect();
    selection.explore_ids = explore.iter().map(|&i| pool[i].id).collect();
    Ok(selection)
}
