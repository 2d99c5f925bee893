//! Synthetic cohorts from a planted logistic risk model.
//!
//! Each record's features are drawn independently (the indication one-hot is
//! drawn as one categorical). The label is produced through the latent-utility
//! form of the logistic model: with `u ~ Uniform(0, 1)` the record's latent
//! utility is `eta - logit(u)` and the record is positive iff that utility is
//! positive, which happens with probability `sigmoid(eta)`. The latent utility
//! is kept alongside the cohort so that tests have a ranker that orders every
//! positive above every negative ([`PlantedOracle`]).

use std::ops::RangeInclusive;

use chrono::{NaiveDate, Weekday};
use rand::Rng as _;
use rand_distr::{Distribution, Open01};
use thiserror::Error;

use crate::kv::{Document, KvError, Section};
use crate::records::{
    parse_week_range, Candidate, Cohort, Flag, Gender, Indication, RecordId, TestRecord, TestResult, ABROAD,
    BASE_DIM, CONTACT, FEATURE_NAMES, FEMALE, OTHER_INDICATION, SYMPTOM_COLUMNS,
};
use crate::scoring::{RiskModel, Scorer, ScoringError};
use crate::seed;

/// Log-odds coefficients over the base features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCoefficients {
    pub intercept: f64,
    pub weights: [f64; BASE_DIM],
}

impl RiskCoefficients {
    pub fn linear_predictor(&self, features: &[f64; BASE_DIM]) -> f64 {
        self.intercept + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
    }

    /// The planted predictor as a linear ranker over observed features.
    pub fn as_model(&self) -> RiskModel {
        RiskModel::linear(self.weights.to_vec(), self.intercept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeShift {
    /// First week generated with the alternate coefficients.
    pub week: u32,
    pub coefficients: RiskCoefficients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub n_per_week: usize,
    pub weeks: RangeInclusive<u32>,
    /// ISO week-year the dates fall in.
    pub year: i32,
    /// Bernoulli rate per feature. The three indication entries are the
    /// category probabilities of one draw and must sum to 1.
    pub feature_prevalence: [f64; BASE_DIM],
    pub coefficients: RiskCoefficients,
    pub regime_shift: Option<RegimeShift>,
    /// Per-symptom probability that the observed value is masked to unknown.
    pub unknown_rate: [f64; 5],
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("empty week range {0}..={1}")]
    EmptyWeeks(u32, u32),
    #[error("rate `{name}` = {value} outside [0, 1]")]
    Rate { name: String, value: f64 },
    #[error("indication prevalences sum to {0}, expected 1")]
    Indication(f64),
    #[error("coefficient `{0}` is not finite")]
    Coefficient(String),
    #[error("week {week} is not a valid ISO week of {year}")]
    Week { year: i32, week: u32 },
    #[error(transparent)]
    Kv(#[from] KvError),
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.weeks.is_empty() {
            return Err(ParamsError::EmptyWeeks(*self.weeks.start(), *self.weeks.end()));
        }
        for week in [*self.weeks.start(), *self.weeks.end()] {
            if NaiveDate::from_isoywd_opt(self.year, week, Weekday::Mon).is_none() {
                return Err(ParamsError::Week { year: self.year, week });
            }
        }
        let rates = FEATURE_NAMES
            .iter()
            .map(|n| format!("prevalence.{n}"))
            .zip(self.feature_prevalence)
            .chain(SYMPTOM_COLUMNS.iter().map(|n| format!("unknown_rate.{n}")).zip(self.unknown_rate));
        for (name, value) in rates {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamsError::Rate { name, value });
            }
        }
        let sum = self.feature_prevalence[CONTACT] + self.feature_prevalence[ABROAD] + self.feature_prevalence[OTHER_INDICATION];
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ParamsError::Indication(sum));
        }
        let mut all = vec![("intercept".to_string(), self.coefficients)];
        if let Some(shift) = &self.regime_shift {
            all.push(("regime_shift".to_string(), shift.coefficients));
        }
        for (label, c) in all {
            if !c.intercept.is_finite() {
                return Err(ParamsError::Coefficient(format!("{label}.intercept")));
            }
            if let Some(i) = c.weights.iter().position(|w| !w.is_finite()) {
                return Err(ParamsError::Coefficient(format!("{label}.{}", FEATURE_NAMES[i])));
            }
        }
        Ok(())
    }

    /// Coefficients in force for `week`.
    pub fn coefficients_for(&self, week: u32) -> &RiskCoefficients {
        match &self.regime_shift {
            Some(shift) if week >= shift.week => &shift.coefficients,
            _ => &self.coefficients,
        }
    }

    /// Scenario with the qualitative correlation ordering of the public data:
    /// contact with a confirmed case strongest, headache next, then fever,
    /// cough, sore throat and shortness of breath; abroad and gender near zero;
    /// the `Other` indication strongly negative. About 7% of tests are positive.
    pub fn default_scenario() -> Self {
        Self::parse(DEFAULT_SCENARIO).expect("built-in scenario parses")
    }

    /// Scenario with a regime shift at week 21: a new high-risk group appears
    /// among travelers while contact loses predictive value and untraced
    /// (`Other`) cases become rare.
    pub fn regime_shift_scenario() -> Self {
        Self::parse(REGIME_SHIFT_SCENARIO).expect("built-in scenario parses")
    }

    /// Scenario whose `contact_with_confirmed=1` / `=0` strata have
    /// positivity 0.5 and 0.05.
    pub fn two_arm_scenario() -> Self {
        Self::parse(TWO_ARM_SCENARIO).expect("built-in scenario parses")
    }

    /// Parses a scenario file.
    ///
    /// ```text
    /// n_per_week = 5000
    /// weeks = 10-26
    /// year = 2020          # optional, default 2020
    /// seed = 1             # optional, default 0
    ///
    /// [prevalence]         # every base feature
    /// cough = 0.15
    /// ...
    /// [coefficients]       # intercept plus any base feature, default 0
    /// intercept = -3.1
    /// contact_with_confirmed = 2.5
    /// [unknown_rate]       # optional, any symptom, default 0
    /// fever = 0.1
    /// [regime_shift]       # optional: week plus a full coefficient set
    /// week = 21
    /// intercept = -4
    /// abroad = 4
    /// ```
    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let doc = Document::parse(text)?;
        let top = doc.top();
        top.check_keys(&["n_per_week", "weeks", "year", "seed"])?;
        let weeks_raw: String = top.require("weeks")?;
        let weeks = parse_week_range(&weeks_raw).map_err(|e| top.value_error("weeks", e))?;

        let prevalence = doc.section("prevalence").ok_or_else(|| KvError::Missing {
            section: "scenario".into(),
            key: "[prevalence]".into(),
        })?;
        prevalence.check_keys(&FEATURE_NAMES)?;
        let mut feature_prevalence = [0.0; BASE_DIM];
        for (slot, name) in feature_prevalence.iter_mut().zip(FEATURE_NAMES) {
            *slot = prevalence.require(name)?;
        }

        let coefficients = parse_coefficients(doc.section("coefficients").ok_or_else(|| KvError::Missing {
            section: "scenario".into(),
            key: "[coefficients]".into(),
        })?, &[])?;

        let mut unknown_rate = [0.0; 5];
        if let Some(section) = doc.section("unknown_rate") {
            section.check_keys(&SYMPTOM_COLUMNS)?;
            for (slot, name) in unknown_rate.iter_mut().zip(SYMPTOM_COLUMNS) {
                *slot = section.parse(name)?.unwrap_or(0.0);
            }
        }

        let regime_shift = match doc.section("regime_shift") {
            Some(section) => Some(RegimeShift {
                week: section.require("week")?,
                coefficients: parse_coefficients(section, &["week"])?,
            }),
            None => None,
        };

        let params = Self {
            n_per_week: top.require("n_per_week")?,
            weeks,
            year: top.parse("year")?.unwrap_or(2020),
            feature_prevalence,
            coefficients,
            regime_shift,
            unknown_rate,
            seed: top.parse("seed")?.unwrap_or(0),
        };
        params.validate()?;
        Ok(params)
    }
}

fn parse_coefficients(section: &Section, extra: &[&str]) -> Result<RiskCoefficients, ParamsError> {
    let mut allowed: Vec<&str> = FEATURE_NAMES.to_vec();
    allowed.push("intercept");
    allowed.extend_from_slice(extra);
    section.check_keys(&allowed)?;
    let mut weights = [0.0; BASE_DIM];
    for (slot, name) in weights.iter_mut().zip(FEATURE_NAMES) {
        *slot = section.parse(name)?.unwrap_or(0.0);
    }
    Ok(RiskCoefficients {
        intercept: section.parse("intercept")?.unwrap_or(0.0),
        weights,
    })
}

pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.scn");
pub const REGIME_SHIFT_SCENARIO: &str = include_str!("../../../scenarios/regime_shift.scn");
pub const TWO_ARM_SCENARIO: &str = include_str!("../../../scenarios/two_arm.scn");

/// Ranker that scores each record by its realized latent utility. Every
/// positive outranks every negative.
#[derive(Debug, Clone)]
pub struct PlantedOracle {
    latent: Vec<f64>,
}

impl PlantedOracle {
    pub fn latent(&self, id: RecordId) -> Option<f64> {
        self.latent.get(id as usize).copied()
    }
}

impl Scorer for PlantedOracle {
    fn score(&self, candidate: &Candidate) -> Result<f64, ScoringError> {
        self.latent(candidate.id).ok_or(ScoringError::UnknownRecord(candidate.id))
    }

    fn describe(&self) -> String {
        "planted-oracle".into()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    /// Latent utility indexed by record id. Positive iff the label is.
    pub latent: Vec<f64>,
    /// Linear predictor on the true (unmasked) features, indexed by record id.
    pub linear_predictor: Vec<f64>,
}

impl SyntheticCohort {
    pub fn oracle(&self) -> PlantedOracle {
        PlantedOracle {
            latent: self.latent.clone(),
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Draws a cohort. Single-threaded; fully determined by `params`.
pub fn generate_cohort(params: &GeneratorParams) -> Result<SyntheticCohort, ParamsError> {
    params.validate()?;
    let mut rng = seed::rng(params.seed);
    let prev = &params.feature_prevalence;
    let n_total = params.n_per_week * (params.weeks.clone().count());
    let mut records = Vec::with_capacity(n_total);
    let mut latent = Vec::with_capacity(n_total);
    let mut linear_predictor = Vec::with_capacity(n_total);
    let weekdays = [
        Weekday::Mon,
        Weekday::Tue,
        Weekday::Wed,
        Weekday::Thu,
        Weekday::Fri,
        Weekday::Sat,
        Weekday::Sun,
    ];

    for week in params.weeks.clone() {
        let coefficients = params.coefficients_for(week);
        for _ in 0..params.n_per_week {
            let mut x = [0.0; BASE_DIM];
            for i in 0..5 {
                x[i] = f64::from(u8::from(rng.random::<f64>() < prev[i]));
            }
            let draw: f64 = rng.random();
            let indication = if draw < prev[CONTACT] {
                Indication::ContactWithConfirmed
            } else if draw < prev[CONTACT] + prev[ABROAD] {
                Indication::Abroad
            } else {
                Indication::Other
            };
            match indication {
                Indication::ContactWithConfirmed => x[CONTACT] = 1.0,
                Indication::Abroad => x[ABROAD] = 1.0,
                Indication::Other => x[OTHER_INDICATION] = 1.0,
            }
            x[FEMALE] = f64::from(u8::from(rng.random::<f64>() < prev[FEMALE]));

            let mut symptoms = [Flag::Absent; 5];
            for (i, s) in symptoms.iter_mut().enumerate() {
                let masked = rng.random::<f64>() < params.unknown_rate[i];
                *s = match (masked, x[i] == 1.0) {
                    (true, _) => Flag::Unknown,
                    (false, true) => Flag::Present,
                    (false, false) => Flag::Absent,
                };
            }
            let day = weekdays[rng.random_range(0..7)];
            let eta = coefficients.linear_predictor(&x);
            let u: f64 = Open01.sample(&mut rng);
            let utility = eta - logit(u);

            let record_id = records.len() as RecordId;
            records.push(TestRecord {
                record_id,
                test_date: NaiveDate::from_isoywd_opt(params.year, week, day).expect("validated week"),
                cough: symptoms[0],
                fever: symptoms[1],
                sore_throat: symptoms[2],
                shortness_of_breath: symptoms[3],
                head_ache: symptoms[4],
                gender: if x[FEMALE] == 1.0 { Gender::Female } else { Gender::Male },
                test_indication: indication,
                result: if utility > 0.0 { TestResult::Positive } else { TestResult::Negative },
            });
            latent.push(utility);
            linear_predictor.push(eta);
        }
    }
    let cohort = Cohort::new(records).expect("generated ids are unique and weeks share a year");
    Ok(SyntheticCohort {
        cohort,
        latent,
        linear_predictor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::pearson;
    use crate::records::{LabelPolicy, PeriodUnit};

    fn flat(intercept: f64, n: usize, seed: u64) -> GeneratorParams {
        GeneratorParams {
            n_per_week: n,
            weeks: 12..=12,
            year: 2020,
            feature_prevalence: [0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.2, 0.5, 0.5],
            coefficients: RiskCoefficients {
                intercept,
                weights: [0.0; BASE_DIM],
            },
            regime_shift: None,
            unknown_rate: [0.0; 5],
            seed,
        }
    }

    #[test]
    fn shipped_scenarios_parse() {
        let d = GeneratorParams::default_scenario();
        assert_eq!(d.weeks, 10..=26);
        assert!(d.regime_shift.is_none());
        let r = GeneratorParams::regime_shift_scenario();
        assert_eq!(r.regime_shift.unwrap().week, 21);
        GeneratorParams::two_arm_scenario();
    }

    #[test]
    fn empty_cohort() {
        let s = generate_cohort(&flat(0.0, 0, 1)).unwrap();
        assert!(s.cohort.is_empty());
    }

    #[test]
    fn base_rate_within_binomial_band() {
        // p = 0.1, n = 10_000: mean 1000, sd 30
        let s = generate_cohort(&flat(logit(0.1), 10_000, 3)).unwrap();
        let positives = s.cohort.records().iter().filter(|r| r.result == TestResult::Positive).count() as f64;
        assert!((positives - 1000.0).abs() <= 3.0 * 30.0, "{positives}");
    }

    #[test]
    fn latent_sign_matches_label() {
        let s = generate_cohort(&GeneratorParams::default_scenario()).unwrap();
        for r in s.cohort.records() {
            assert_eq!(s.latent[r.record_id as usize] > 0.0, r.result == TestResult::Positive);
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let p = GeneratorParams::regime_shift_scenario();
        let a = generate_cohort(&p).unwrap();
        let b = generate_cohort(&p).unwrap();
        assert_eq!(a.cohort, b.cohort);
        assert_eq!(a.latent, b.latent);
    }

    #[test]
    fn zero_coefficient_feature_is_uncorrelated() {
        // female has weight 0 in this scenario; 20 seeds at n = 10_000
        for seed in 0..20 {
            let mut p = flat(logit(0.1), 10_000, seed);
            p.coefficients.weights[CONTACT] = 2.0;
            let s = generate_cohort(&p).unwrap();
            let periods = s.cohort.periods(PeriodUnit::Week, LabelPolicy::ExcludeOther);
            let x: Vec<f64> = periods[0].candidates.iter().map(|c| c.features.get(FEMALE)).collect();
            let y: Vec<f64> = periods[0].labels.iter().map(|l| f64::from(u8::from(*l))).collect();
            let r = pearson(&x, &y).unwrap();
            assert!(r.abs() < 0.05, "seed {seed}: r = {r}");
        }
    }

    #[test]
    fn validation() {
        let mut p = flat(0.0, 1, 0);
        p.feature_prevalence[CONTACT] = 0.9;
        assert!(matches!(p.validate(), Err(ParamsError::Indication(_))));
        let mut p = flat(0.0, 1, 0);
        p.unknown_rate[2] = 1.5;
        assert!(matches!(p.validate(), Err(ParamsError::Rate { .. })));
        let mut p = flat(0.0, 1, 0);
        p.weeks = 54..=55;
        assert!(p.validate().is_err());
        assert!(GeneratorParams::parse("n_per_week = 1\nweeks = 3-2\n").is_err());
    }
}
