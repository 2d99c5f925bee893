//! Candidate test records: parsing, validation, featurization and assignment
//! of records to time frames.
//!
//! Weeks are ISO-8601 week numbers (Monday to Sunday, week 1 contains the
//! year's first Thursday). Every week-keyed table in this crate uses that
//! convention.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;
use thiserror::Error;

use crate::kv::{Document, KvError};
use crate::par::Execution;

pub type RecordId = u64;

/// Number of base features.
pub const BASE_DIM: usize = 9;

/// Canonical feature order.
pub const FEATURE_NAMES: [&str; BASE_DIM] = [
    "cough",
    "fever",
    "sore_throat",
    "shortness_of_breath",
    "head_ache",
    "contact_with_confirmed",
    "abroad",
    "other_indication",
    "female",
];

pub const COUGH: usize = 0;
pub const FEVER: usize = 1;
pub const SORE_THROAT: usize = 2;
pub const SHORTNESS_OF_BREATH: usize = 3;
pub const HEAD_ACHE: usize = 4;
pub const CONTACT: usize = 5;
pub const ABROAD: usize = 6;
pub const OTHER_INDICATION: usize = 7;
pub const FEMALE: usize = 8;

/// Columns every input file must carry.
pub const REQUIRED_COLUMNS: [&str; 9] = [
    "test_date",
    "cough",
    "fever",
    "sore_throat",
    "shortness_of_breath",
    "head_ache",
    "corona_result",
    "gender",
    "test_indication",
];

pub const SYMPTOM_COLUMNS: [&str; 5] = [
    "cough",
    "fever",
    "sore_throat",
    "shortness_of_breath",
    "head_ache",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Flag {
    Present,
    Absent,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Indication {
    ContactWithConfirmed,
    Abroad,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TestResult {
    Positive,
    Negative,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TestRecord {
    pub record_id: RecordId,
    pub test_date: NaiveDate,
    pub cough: Flag,
    pub fever: Flag,
    pub sore_throat: Flag,
    pub shortness_of_breath: Flag,
    pub head_ache: Flag,
    pub gender: Gender,
    pub test_indication: Indication,
    pub result: TestResult,
}

impl TestRecord {
    /// Symptoms in canonical feature order.
    pub fn symptoms(&self) -> [Flag; 5] {
        [
            self.cough,
            self.fever,
            self.sore_throat,
            self.shortness_of_breath,
            self.head_ache,
        ]
    }

    pub fn has_unknown_symptom(&self) -> bool {
        self.symptoms().contains(&Flag::Unknown)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("feature {index} has value {value}, expected 0 or 1")]
    NotBinary { index: usize, value: f64 },
    #[error("indication entries sum to {0}, expected exactly one set")]
    Indication(f64),
}

/// Fixed-order binary encoding of a record, see [`FEATURE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureVector([f64; BASE_DIM]);

impl FeatureVector {
    pub fn new(values: [f64; BASE_DIM]) -> Result<Self, FeatureError> {
        for (index, &value) in values.iter().enumerate() {
            if value != 0.0 && value != 1.0 {
                return Err(FeatureError::NotBinary { index, value });
            }
        }
        let onehot = values[CONTACT] + values[ABROAD] + values[OTHER_INDICATION];
        if onehot != 1.0 {
            return Err(FeatureError::Indication(onehot));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64; BASE_DIM] {
        &self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }
}

fn flag_value(flag: Flag) -> f64 {
    match flag {
        Flag::Present => 1.0,
        Flag::Absent | Flag::Unknown => 0.0,
    }
}

/// Encodes a record. Unknown symptoms encode as absent.
pub fn featurize(record: &TestRecord) -> FeatureVector {
    let mut v = [0.0; BASE_DIM];
    for (slot, flag) in v.iter_mut().zip(record.symptoms()) {
        *slot = flag_value(flag);
    }
    match record.test_indication {
        Indication::ContactWithConfirmed => v[CONTACT] = 1.0,
        Indication::Abroad => v[ABROAD] = 1.0,
        Indication::Other => v[OTHER_INDICATION] = 1.0,
    }
    if record.gender == Gender::Female {
        v[FEMALE] = 1.0;
    }
    FeatureVector(v)
}

/// ISO-8601 week number of `date` within its ISO week-year.
pub fn week_of(date: NaiveDate) -> u32 {
    date.iso_week().week()
}

/// Parses `a-b` (inclusive) or a single week `a`.
pub fn parse_week_range(text: &str) -> Result<RangeInclusive<u32>, String> {
    let text = text.trim();
    let (a, b) = text.split_once('-').unwrap_or((text, text));
    let start: u32 = a.trim().parse().map_err(|_| format!("bad week range {text:?}, expected a-b"))?;
    let end: u32 = b.trim().parse().map_err(|_| format!("bad week range {text:?}, expected a-b"))?;
    if start > end {
        return Err(format!("empty week range {text:?}"));
    }
    Ok(start..=end)
}

/// Raw-value vocabulary per field. Lookups are case-insensitive on trimmed
/// values. Empty symptom and gender cells are always `Unknown`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMapping {
    symptom: HashMap<String, Flag>,
    gender: HashMap<String, Gender>,
    indication: HashMap<String, Indication>,
    result: HashMap<String, TestResult>,
}

fn norm(raw: &str) -> String {
    raw.trim().to_lowercase()
}

impl Default for ValueMapping {
    /// English vocabulary of the public tested-individuals file.
    fn default() -> Self {
        let symptom = [
            ("1", Flag::Present),
            ("0", Flag::Absent),
            ("none", Flag::Unknown),
            ("null", Flag::Unknown),
        ];
        let gender = [
            ("female", Gender::Female),
            ("male", Gender::Male),
            ("none", Gender::Unknown),
            ("null", Gender::Unknown),
        ];
        let indication = [
            ("contact with confirmed", Indication::ContactWithConfirmed),
            ("abroad", Indication::Abroad),
            ("other", Indication::Other),
        ];
        let result = [
            ("positive", TestResult::Positive),
            ("negative", TestResult::Negative),
            ("other", TestResult::Other),
        ];
        Self {
            symptom: symptom.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            gender: gender.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            indication: indication.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            result: result.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

fn canonical<T: Copy>(section: &crate::kv::Section, table: &[(&str, T)]) -> Result<HashMap<String, T>, KvError> {
    let mut out = HashMap::new();
    for e in &section.entries {
        let target = norm(&e.value);
        let value = table
            .iter()
            .find(|(name, _)| *name == target)
            .map(|(_, v)| *v)
            .ok_or_else(|| KvError::Value {
                line: e.line,
                key: e.key.clone(),
                detail: format!(
                    "{:?} is not one of {}",
                    e.value,
                    table.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                ),
            })?;
        out.insert(norm(&e.key), value);
    }
    Ok(out)
}

impl ValueMapping {
    /// Parses a mapping file. Each `[field]` section (`symptom`, `gender`,
    /// `test_indication`, `corona_result`) maps raw values to canonical names
    /// and replaces the default vocabulary for that field:
    ///
    /// ```text
    /// [corona_result]
    /// חיובי = positive
    /// שלילי = negative
    /// ```
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let doc = Document::parse(text)?;
        let mut mapping = Self::default();
        if let Some(e) = doc.top().entries.first() {
            return Err(KvError::Unknown {
                line: e.line,
                section: "mapping file (entries must follow a [field] header)".into(),
                key: e.key.clone(),
            });
        }
        for section in doc.sections.iter().skip(1) {
            match section.kind.as_str() {
                "symptom" => {
                    mapping.symptom = canonical(
                        section,
                        &[("present", Flag::Present), ("absent", Flag::Absent), ("unknown", Flag::Unknown)],
                    )?
                }
                "gender" => {
                    mapping.gender = canonical(
                        section,
                        &[("female", Gender::Female), ("male", Gender::Male), ("unknown", Gender::Unknown)],
                    )?
                }
                "test_indication" => {
                    mapping.indication = canonical(
                        section,
                        &[
                            ("contact_with_confirmed", Indication::ContactWithConfirmed),
                            ("abroad", Indication::Abroad),
                            ("other", Indication::Other),
                        ],
                    )?
                }
                "corona_result" => {
                    mapping.result = canonical(
                        section,
                        &[
                            ("positive", TestResult::Positive),
                            ("negative", TestResult::Negative),
                            ("other", TestResult::Other),
                        ],
                    )?
                }
                other => {
                    return Err(KvError::Unknown {
                        line: section.entries.first().map_or(0, |e| e.line),
                        section: "mapping file".into(),
                        key: format!("[{other}]"),
                    })
                }
            }
        }
        Ok(mapping)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(LoadError::Mapping)
    }

    fn symptom(&self, raw: &str) -> Option<Flag> {
        let key = norm(raw);
        if key.is_empty() {
            return Some(Flag::Unknown);
        }
        self.symptom.get(&key).copied()
    }

    fn gender(&self, raw: &str) -> Option<Gender> {
        let key = norm(raw);
        if key.is_empty() {
            return Some(Gender::Unknown);
        }
        self.gender.get(&key).copied()
    }

    fn indication(&self, raw: &str) -> Option<Indication> {
        self.indication.get(&norm(raw)).copied()
    }

    fn result(&self, raw: &str) -> Option<TestResult> {
        self.result.get(&norm(raw)).copied()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unmappable {field} value {value:?}")]
    Unmappable { field: &'static str, value: String },
    #[error("malformed date {0:?}, expected YYYY-MM-DD")]
    Date(String),
    #[error("date {date} outside study window {start}..={end}")]
    OutsideWindow {
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("unknown symptom value (strict mode)")]
    UnknownSymptom,
    #[error("invalid record_id {0:?}")]
    RecordId(String),
    #[error("duplicate record_id {0}")]
    DuplicateId(RecordId),
    #[error("malformed row: {0}")]
    Malformed(String),
}

/// A rejected input row with the parse failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub error: RecordError,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.error)
    }
}

impl std::error::Error for RowError {}

/// How unknown symptom cells are treated on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownPolicy {
    /// Keep the row; unknown encodes as absent.
    #[default]
    AsAbsent,
    /// Reject rows with any unknown symptom.
    Drop,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub unknown: UnknownPolicy,
    pub window: Option<(NaiveDate, NaiveDate)>,
    /// Row parsing runs through this; output is the same either way.
    pub execution: Execution,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            unknown: UnknownPolicy::AsAbsent,
            window: None,
            execution: Execution::default(),
        }
    }
}

fn parse_fields<'a>(
    get: impl Fn(&str) -> Option<&'a str>,
    record_id: RecordId,
    mapping: &ValueMapping,
    options: &LoadOptions,
) -> Result<TestRecord, RecordError> {
    let cell = |name: &str| get(name).ok_or_else(|| RecordError::MissingColumn(name.to_string()));

    let raw_date = cell("test_date")?;
    let test_date = NaiveDate::parse_from_str(raw_date.trim(), "%Y-%m-%d")
        .map_err(|_| RecordError::Date(raw_date.to_string()))?;
    if let Some((start, end)) = options.window {
        if test_date < start || test_date > end {
            return Err(RecordError::OutsideWindow {
                date: test_date,
                start,
                end,
            });
        }
    }

    let mut symptoms = [Flag::Unknown; 5];
    for (slot, name) in symptoms.iter_mut().zip(SYMPTOM_COLUMNS) {
        let raw = cell(name)?;
        *slot = mapping.symptom(raw).ok_or_else(|| RecordError::Unmappable {
            field: name_static(name),
            value: raw.to_string(),
        })?;
    }
    if options.unknown == UnknownPolicy::Drop && symptoms.contains(&Flag::Unknown) {
        return Err(RecordError::UnknownSymptom);
    }

    let raw = cell("corona_result")?;
    let result = mapping.result(raw).ok_or_else(|| RecordError::Unmappable {
        field: "corona_result",
        value: raw.to_string(),
    })?;
    let raw = cell("test_indication")?;
    let test_indication = mapping.indication(raw).ok_or_else(|| RecordError::Unmappable {
        field: "test_indication",
        value: raw.to_string(),
    })?;
    let raw = cell("gender")?;
    let gender = mapping.gender(raw).ok_or_else(|| RecordError::Unmappable {
        field: "gender",
        value: raw.to_string(),
    })?;

    Ok(TestRecord {
        record_id,
        test_date,
        cough: symptoms[0],
        fever: symptoms[1],
        sore_throat: symptoms[2],
        shortness_of_breath: symptoms[3],
        head_ache: symptoms[4],
        gender,
        test_indication,
        result,
    })
}

fn name_static(name: &str) -> &'static str {
    SYMPTOM_COLUMNS
        .iter()
        .find(|n| **n == name)
        .copied()
        .unwrap_or("symptom")
}

/// Parses one row given as column name to raw cell.
pub fn parse_record(
    row: &HashMap<String, String>,
    record_id: RecordId,
    mapping: &ValueMapping,
    options: &LoadOptions,
) -> Result<TestRecord, RecordError> {
    parse_fields(|name| row.get(name).map(String::as_str), record_id, mapping, options)
}

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("duplicate record_id {0}")]
    DuplicateId(RecordId),
    #[error("cohort spans ISO week-years {0} and {1}; week numbers would not be contiguous")]
    MultipleYears(i32, i32),
}

/// Immutable set of records with their week assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    records: Vec<TestRecord>,
    week_index: BTreeMap<RecordId, u32>,
}

impl Cohort {
    pub fn new(records: Vec<TestRecord>) -> Result<Self, CohortError> {
        let mut week_index = BTreeMap::new();
        let mut year: Option<i32> = None;
        for r in &records {
            let y = r.test_date.iso_week().year();
            match year {
                None => year = Some(y),
                Some(prev) if prev != y => return Err(CohortError::MultipleYears(prev.min(y), prev.max(y))),
                _ => {}
            }
            if week_index.insert(r.record_id, week_of(r.test_date)).is_some() {
                return Err(CohortError::DuplicateId(r.record_id));
            }
        }
        Ok(Self { records, week_index })
    }

    pub fn empty() -> Self {
        Self {
            records: Vec::new(),
            week_index: BTreeMap::new(),
        }
    }

    pub fn records(&self) -> &[TestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn week(&self, id: RecordId) -> Option<u32> {
        self.week_index.get(&id).copied()
    }

    pub fn week_index(&self) -> &BTreeMap<RecordId, u32> {
        &self.week_index
    }

    /// Contiguous week span covered by the cohort's dates.
    pub fn weeks(&self) -> Option<RangeInclusive<u32>> {
        let min = self.week_index.values().min()?;
        let max = self.week_index.values().max()?;
        Some(*min..=*max)
    }

    /// Groups records into periods, labeling each candidate per `labels`.
    /// Records whose result is dropped by the label policy are omitted.
    pub fn periods(&self, unit: PeriodUnit, labels: LabelPolicy) -> Vec<Period> {
        let mut by_key: BTreeMap<u32, Period> = BTreeMap::new();
        for r in &self.records {
            let Some(positive) = labels.label(r.result) else {
                continue;
            };
            let key = match unit {
                PeriodUnit::Week => self.week_index[&r.record_id],
                PeriodUnit::Day => r.test_date.ordinal(),
            };
            let p = by_key.entry(key).or_insert_with(|| Period {
                key,
                candidates: Vec::new(),
                labels: Vec::new(),
            });
            p.candidates.push(Candidate {
                id: r.record_id,
                features: featurize(r),
            });
            p.labels.push(positive);
        }
        by_key.into_values().collect()
    }
}

/// Length of a replay / evaluation time frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum PeriodUnit {
    /// ISO week number.
    #[default]
    Week,
    /// Day of year.
    Day,
}

/// Mapping from test result to binary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum LabelPolicy {
    /// `Other` results are left out of training and evaluation.
    #[default]
    ExcludeOther,
    OtherAsNegative,
}

impl LabelPolicy {
    pub fn label(self, result: TestResult) -> Option<bool> {
        match (result, self) {
            (TestResult::Positive, _) => Some(true),
            (TestResult::Negative, _) => Some(false),
            (TestResult::Other, LabelPolicy::ExcludeOther) => None,
            (TestResult::Other, LabelPolicy::OtherAsNegative) => Some(false),
        }
    }
}

/// A record as the policy sees it: identity and features, no label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: RecordId,
    pub features: FeatureVector,
}

/// One time frame's pool with its ground truth, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Period {
    pub key: u32,
    pub candidates: Vec<Candidate>,
    pub labels: Vec<bool>,
}

impl Period {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

/// Periods whose key falls in `range`.
pub fn periods_in(periods: &[Period], range: &RangeInclusive<u32>) -> Vec<Period> {
    periods.iter().filter(|p| range.contains(&p.key)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RejectionReport {
    pub rows: Vec<RowError>,
}

impl RejectionReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One `row_number<TAB>reason` line per rejected row.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.rows {
            writeln!(out, "{}\t{}", r.row, r.error)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header is missing required column `{0}`")]
    MissingColumn(String),
    #[error("malformed delimited text: {0}")]
    Csv(#[from] csv::Error),
    #[error("value mapping: {0}")]
    Mapping(KvError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

#[derive(Debug)]
pub struct Loaded {
    pub cohort: Cohort,
    pub rejections: RejectionReport,
    pub rows_read: usize,
}

/// Reads a delimited file with a header row. Rows that fail to parse are
/// reported and skipped. `record_id` is the 0-based data row index unless the
/// file carries a `record_id` column.
pub fn load_cohort(path: &Path, mapping: &ValueMapping, options: &LoadOptions) -> Result<Loaded, LoadError> {
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_cohort(file, mapping, options)
}

pub fn read_cohort<R: Read>(input: R, mapping: &ValueMapping, options: &LoadOptions) -> Result<Loaded, LoadError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let columns: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    for name in REQUIRED_COLUMNS {
        if !columns.contains_key(name) {
            return Err(LoadError::MissingColumn(name.to_string()));
        }
    }
    let id_column = columns.get("record_id").copied();

    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    let width = headers.len();
    let parsed: Vec<Result<TestRecord, RecordError>> = options.execution.map_range(rows.len(), |i| {
        let row = &rows[i];
        if row.len() != width {
            return Err(RecordError::Malformed(format!(
                "{} fields, header has {width}",
                row.len()
            )));
        }
        let record_id = match id_column {
            Some(c) => row[c]
                .trim()
                .parse::<RecordId>()
                .map_err(|_| RecordError::RecordId(row[c].to_string()))?,
            None => i as RecordId,
        };
        parse_fields(|name| columns.get(name).map(|&c| &row[c]), record_id, mapping, options)
    });

    let mut records = Vec::with_capacity(parsed.len());
    let mut rejections = RejectionReport::default();
    let mut seen = HashSet::new();
    for (i, result) in parsed.into_iter().enumerate() {
        match result {
            Ok(r) if !seen.insert(r.record_id) => rejections.rows.push(RowError {
                row: i + 1,
                error: RecordError::DuplicateId(r.record_id),
            }),
            Ok(r) => records.push(r),
            Err(error) => rejections.rows.push(RowError { row: i + 1, error }),
        }
    }
    Ok(Loaded {
        cohort: Cohort::new(records)?,
        rejections,
        rows_read: rows.len(),
    })
}

fn flag_raw(flag: Flag) -> &'static str {
    match flag {
        Flag::Present => "1",
        Flag::Absent => "0",
        Flag::Unknown => "",
    }
}

/// Writes the cohort in the ingestion schema using the default vocabulary,
/// with a leading `record_id` column so ids survive a reload.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["record_id"];
    header.extend(REQUIRED_COLUMNS);
    w.write_record(&header)?;
    for r in cohort.records() {
        let id = r.record_id.to_string();
        let date = r.test_date.format("%Y-%m-%d").to_string();
        let result = match r.result {
            TestResult::Positive => "positive",
            TestResult::Negative => "negative",
            TestResult::Other => "other",
        };
        let gender = match r.gender {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "",
        };
        let indication = match r.test_indication {
            Indication::ContactWithConfirmed => "Contact with confirmed",
            Indication::Abroad => "Abroad",
            Indication::Other => "Other",
        };
        w.write_record([
            id.as_str(),
            date.as_str(),
            flag_raw(r.cough),
            flag_raw(r.fever),
            flag_raw(r.sore_throat),
            flag_raw(r.shortness_of_breath),
            flag_raw(r.head_ache),
            result,
            gender,
            indication,
        ])?;
    }
    w.flush()?;
    Ok(())
}
