//! Capacity metrics (recall, precision and F1 at K), per-week Pearson feature
//! correlations and the week-stratified bootstrap confidence interval.

use std::collections::HashSet;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::par::Execution;
use crate::policy::{rank_indices, score_pool};
use crate::records::{Period, RecordId, BASE_DIM, FEATURE_NAMES};
use crate::scoring::{Scorer, ScoringError};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("selected record {0} is not in the pool")]
    NotInPool(RecordId),
    #[error("precision is undefined for an empty selection")]
    EmptySelection,
    #[error("sequences differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("{0} sequence is constant; correlation undefined")]
    Constant(&'static str),
    #[error("need at least 2 replicates, got {0}")]
    Replicates(usize),
    #[error("only {usable} usable replicates (every week lacked positives in {skipped})")]
    Degenerate { usable: usize, skipped: usize },
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

fn hits(selected: &[RecordId], period: &Period) -> Result<(usize, usize), EvalError> {
    let unique: HashSet<RecordId> = selected.iter().copied().collect();
    let mut found = 0;
    let mut hit = 0;
    for (c, label) in period.candidates.iter().zip(&period.labels) {
        if unique.contains(&c.id) {
            found += 1;
            hit += usize::from(*label);
        }
    }
    if found != unique.len() {
        let pool: HashSet<RecordId> = period.candidates.iter().map(|c| c.id).collect();
        let missing = selected.iter().find(|id| !pool.contains(id)).copied().unwrap_or_default();
        return Err(EvalError::NotInPool(missing));
    }
    Ok((hit, unique.len()))
}

/// Share of the pool's positives among `selected`; 0 for a pool without
/// positives.
pub fn recall_at_k(selected: &[RecordId], period: &Period) -> Result<f64, EvalError> {
    let (hit, _) = hits(selected, period)?;
    let positives = period.positives();
    if positives == 0 {
        log::warn!("period {}: no positives, recall reported as 0", period.key);
        return Ok(0.0);
    }
    Ok(hit as f64 / positives as f64)
}

pub fn precision_at_k(selected: &[RecordId], period: &Period) -> Result<f64, EvalError> {
    let (hit, k) = hits(selected, period)?;
    if k == 0 {
        return Err(EvalError::EmptySelection);
    }
    Ok(hit as f64 / k as f64)
}

/// Harmonic mean, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn f1_at_k(selected: &[RecordId], period: &Period) -> Result<f64, EvalError> {
    Ok(f1_score(precision_at_k(selected, period)?, recall_at_k(selected, period)?))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Length(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(EvalError::TooShort(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::Constant("first"));
    }
    if syy == 0.0 {
        return Err(EvalError::Constant("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Pearson correlation of each feature with the label, per week.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub weeks: Vec<u32>,
    /// `None` where the feature or the label is constant within the week.
    pub values: Vec<[Option<f64>; BASE_DIM]>,
    /// Median over the weeks where the value is defined.
    pub median: [Option<f64>; BASE_DIM],
}

impl CorrelationTable {
    /// Features with a defined median, by descending median.
    pub fn ordering(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = FEATURE_NAMES
            .iter()
            .zip(self.median)
            .filter_map(|(n, m)| m.map(|m| (*n, m)))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

pub fn weekly_correlations(periods: &[Period]) -> CorrelationTable {
    let mut weeks = Vec::with_capacity(periods.len());
    let mut values = Vec::with_capacity(periods.len());
    for p in periods {
        let y: Vec<f64> = p.labels.iter().map(|l| f64::from(u8::from(*l))).collect();
        let mut row = [None; BASE_DIM];
        for (j, slot) in row.iter_mut().enumerate() {
            let x: Vec<f64> = p.candidates.iter().map(|c| c.features.get(j)).collect();
            *slot = pearson(&x, &y).ok();
        }
        weeks.push(p.key);
        values.push(row);
    }
    let mut med = [None; BASE_DIM];
    for (j, slot) in med.iter_mut().enumerate() {
        let defined: Vec<f64> = values.iter().filter_map(|r: &[Option<f64>; BASE_DIM]| r[j]).collect();
        *slot = median(&defined);
    }
    CorrelationTable {
        weeks,
        values,
        median: med,
    }
}

/// Metrics of the top-`k` selection from one ranked pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtK {
    pub k: usize,
    pub hits: usize,
    pub selected: usize,
    pub positives: usize,
    pub recall: f64,
    /// `None` for an empty selection.
    pub precision: Option<f64>,
    pub f1: f64,
}

impl AtK {
    pub fn from_counts(k: usize, hits: usize, selected: usize, positives: usize) -> Self {
        let recall = if positives == 0 { 0.0 } else { hits as f64 / positives as f64 };
        let precision = (selected > 0).then(|| hits as f64 / selected as f64);
        Self {
            k,
            hits,
            selected,
            positives,
            recall,
            precision,
            f1: f1_score(precision.unwrap_or(0.0), recall),
        }
    }
}

/// Top-`k` metrics of `labels` ranked by `scores` with seeded tie-breaking.
pub fn top_k(scores: &[f64], labels: &[bool], k: usize, tie_seed: u64) -> AtK {
    let order = rank_indices(scores, tie_seed);
    let selected = k.min(order.len());
    let hit = order[..selected].iter().filter(|&&i| labels[i]).count();
    AtK::from_counts(k, hit, selected, labels.iter().filter(|l| **l).count())
}

/// Top-K metrics for every (week, K) of a fixed scorer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub model: String,
    pub ks: Vec<usize>,
    pub weeks: Vec<u32>,
    pub pool_sizes: Vec<usize>,
    /// `cells[week][k]`.
    pub cells: Vec<Vec<AtK>>,
}

impl RankingReport {
    pub fn mean_recall(&self, k_index: usize) -> f64 {
        mean(&self.cells.iter().map(|row| row[k_index].recall).collect::<Vec<_>>())
    }

    pub fn mean_f1(&self, k_index: usize) -> f64 {
        mean(&self.cells.iter().map(|row| row[k_index].f1).collect::<Vec<_>>())
    }

    pub fn mean_precision(&self, k_index: usize) -> f64 {
        mean(&self.cells.iter().map(|row| row[k_index].precision.unwrap_or(0.0)).collect::<Vec<_>>())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Scores each week once and reads off top-K metrics for every K. Week `w`
/// uses tie seed `derive_indexed(seed, "rank", w)`.
pub fn evaluate_ranking(
    periods: &[Period],
    scorer: &dyn Scorer,
    ks: &[usize],
    seed_value: u64,
    exec: Execution,
) -> Result<RankingReport, EvalError> {
    let mut cells = Vec::with_capacity(periods.len());
    for p in periods {
        let scores = score_pool(scorer, &p.candidates, exec)?;
        let order = rank_indices(&scores, seed::derive_indexed(seed_value, "rank", u64::from(p.key)));
        let positives = p.positives();
        if positives == 0 {
            log::warn!("week {}: no positives, recall reported as 0", p.key);
        }
        let mut prefix = vec![0usize; order.len() + 1];
        for (n, &i) in order.iter().enumerate() {
            prefix[n + 1] = prefix[n] + usize::from(p.labels[i]);
        }
        cells.push(
            ks.iter()
                .map(|&k| {
                    let selected = k.min(order.len());
                    AtK::from_counts(k, prefix[selected], selected, positives)
                })
                .collect(),
        );
    }
    Ok(RankingReport {
        model: scorer.describe(),
        ks: ks.to_vec(),
        weeks: periods.iter().map(|p| p.key).collect(),
        pool_sizes: periods.iter().map(Period::len).collect(),
        cells,
    })
}

/// Two-sided Student-t interval `mean +- t* s / sqrt(n)` with `n - 1`
/// degrees of freedom.
pub fn t_interval(values: &[f64], level: f64) -> Result<(f64, f64, f64), EvalError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Level(level));
    }
    let n = values.len();
    if n < 2 {
        return Err(EvalError::Replicates(n));
    }
    if values.iter().all(|v| *v == values[0]) {
        // zero spread: the interval collapses to the point, exactly
        return Ok((values[0], values[0], values[0]));
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    let t = dist.inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = t * var.sqrt() / (n as f64).sqrt();
    Ok((m, m - half, m + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 10,
            level: 0.95,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub k: usize,
    pub level: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Mean weekly recall of each usable replicate, by replicate index.
    pub replicate_means: Vec<f64>,
    /// Replicates dropped because no week had a positive.
    pub skipped: Vec<usize>,
}

/// Week-stratified bootstrap of mean weekly recall@K.
///
/// Replicate `r` resamples every week's pool with replacement to its original
/// size using seed `derive_indexed(seed, "bootstrap", r)`, re-ranks it with
/// the fixed scorer and averages recall@K over weeks (weeks without positives
/// count as 0). The interval is [`t_interval`] over the replicate means.
/// Replicates are independent, so parallel and sequential runs agree.
pub fn bootstrap_ci(periods: &[Period], scorer: &dyn Scorer, k: usize, config: &BootstrapConfig) -> Result<BootstrapResult, EvalError> {
    if config.replicates < 2 {
        return Err(EvalError::Replicates(config.replicates));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(EvalError::Level(config.level));
    }
    let scores: Vec<Vec<f64>> = periods
        .iter()
        .map(|p| score_pool(scorer, &p.candidates, config.execution))
        .collect::<Result<_, _>>()?;

    let replicate = |r: usize| -> Option<f64> {
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "bootstrap", r as u64));
        let mut any_positive = false;
        let mut recalls = Vec::with_capacity(periods.len());
        for (p, s) in periods.iter().zip(&scores) {
            let n = p.len();
            if n == 0 {
                recalls.push(0.0);
                continue;
            }
            let picks: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
            let rs: Vec<f64> = picks.iter().map(|&i| s[i]).collect();
            let rl: Vec<bool> = picks.iter().map(|&i| p.labels[i]).collect();
            let tie_seed = rand::Rng::random::<u64>(&mut rng);
            let at = top_k(&rs, &rl, k, tie_seed);
            any_positive |= at.positives > 0;
            recalls.push(at.recall);
        }
        any_positive.then(|| mean(&recalls))
    };
    let outcomes = config.execution.map_range(config.replicates, replicate);

    let mut replicate_means = Vec::new();
    let mut skipped = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Some(m) => replicate_means.push(m),
            None => skipped.push(r),
        }
    }
    if !skipped.is_empty() {
        log::warn!("bootstrap: skipped {} replicates without positives", skipped.len());
    }
    if replicate_means.len() < 2 {
        return Err(EvalError::Degenerate {
            usable: replicate_means.len(),
            skipped: skipped.len(),
        });
    }
    let (mean, lo, hi) = t_interval(&replicate_means, config.level)?;
    Ok(BootstrapResult {
        k,
        level: config.level,
        mean,
        lo,
        hi,
        replicate_means,
        skipped,
    })
}

/// One metric at one capacity across weeks, with an optional interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub model: String,
    pub k: usize,
    pub per_week: Vec<(u32, f64)>,
    pub mean: f64,
    pub interval: Option<(f64, f64)>,
    pub level: Option<f64>,
}

impl MetricReport {
    pub fn recall(report: &RankingReport, k_index: usize, ci: Option<&BootstrapResult>) -> Self {
        Self {
            model: report.model.clone(),
            k: report.ks[k_index],
            per_week: report.weeks.iter().zip(&report.cells).map(|(w, row)| (*w, row[k_index].recall)).collect(),
            mean: report.mean_recall(k_index),
            interval: ci.map(|c| (c.lo, c.hi)),
            level: ci.map(|c| c.level),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{Candidate, FeatureVector, OTHER_INDICATION};

    fn period(labels: &[bool]) -> Period {
        let mut v = [0.0; BASE_DIM];
        v[OTHER_INDICATION] = 1.0;
        let features = FeatureVector::new(v).unwrap();
        Period {
            key: 1,
            candidates: (0..labels.len()).map(|i| Candidate { id: i as RecordId, features }).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn recall_examples() {
        let p = period(&[true, true, true, true, false, false]);
        assert_eq!(recall_at_k(&[0, 1, 2], &p).unwrap(), 0.75);
        assert_eq!(recall_at_k(&[], &p).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[99], &p), Err(EvalError::NotInPool(99)));
        assert_eq!(recall_at_k(&[0], &period(&[false, false])).unwrap(), 0.0);
    }

    #[test]
    fn precision_and_f1() {
        let p = period(&[true, false, true, false]);
        assert_eq!(precision_at_k(&[0, 1], &p).unwrap(), 0.5);
        assert_eq!(precision_at_k(&[], &p), Err(EvalError::EmptySelection));
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        assert_eq!(f1_score(0.0, 0.7), 0.0);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        // precision implied by F1 = 0.455 at recall 0.344: P = F R / (2R - F)
        let p_implied: f64 = 0.455 * 0.344 / (2.0 * 0.344 - 0.455);
        assert!((p_implied - 0.672).abs() < 5e-4);
        assert!((f1_score(0.672, 0.344) - 0.455).abs() < 5e-4);
        assert!((f1_at_k(&[0, 1], &p).unwrap() - f1_score(0.5, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), Err(EvalError::Constant("first")));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(EvalError::TooShort(1)));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(EvalError::Length(2, 1)));
    }

    #[test]
    fn single_week_median() {
        let mut p = period(&[true, false, true, false]);
        let mut v = [0.0; BASE_DIM];
        v[crate::records::CONTACT] = 1.0;
        p.candidates[0].features = FeatureVector::new(v).unwrap();
        let t = weekly_correlations(&[p]);
        assert_eq!(t.median[crate::records::CONTACT], t.values[0][crate::records::CONTACT]);
        // cough is constant in this week
        assert_eq!(t.values[0][crate::records::COUGH], None);
        assert_eq!(t.median[crate::records::COUGH], None);
    }

    #[test]
    fn t_interval_constant_values() {
        let (m, lo, hi) = t_interval(&[0.4; 10], 0.95).unwrap();
        assert_eq!((m, lo, hi), (0.4, 0.4, 0.4));
        assert!(t_interval(&[0.4], 0.95).is_err());
        assert!(t_interval(&[0.4, 0.5], 1.0).is_err());
    }

    #[test]
    fn t_critical_value() {
        // t_{0.975, 9} = 2.262157
        let (m, lo, _) = t_interval(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 0.95).unwrap();
        let s = (10.0f64 * 0.25 / 9.0).sqrt();
        let t = (m - lo) / (s / 10f64.sqrt());
        assert!((t - 2.262157).abs() < 1e-5, "{t}");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
