//! Line-oriented `key = value` text format shared by scenario, policy and
//! value-mapping files.
//!
//! ```text
//! # comment
//! capacity = 1000
//!
//! [train]
//! lambda = 0.0001
//!
//! [arm contact]
//! predicate = contact_with_confirmed=1
//! ```
//!
//! A `[kind name]` header opens a section; entries before the first header
//! belong to the unnamed top-level section. Keys and values are trimmed and the
//! value is everything after the first `=`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unterminated section header")]
    Header { line: usize },
    #[error("line {line}: invalid value for `{key}`: {detail}")]
    Value {
        line: usize,
        key: String,
        detail: String,
    },
    #[error("missing required key `{key}` in {section}")]
    Missing { section: String, key: String },
    #[error("line {line}: unknown key `{key}` in {section}")]
    Unknown {
        line: usize,
        section: String,
        key: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    /// First word of the header, empty for the top-level section.
    pub kind: String,
    /// Remainder of the header after the kind.
    pub name: String,
    pub entries: Vec<Entry>,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind.is_empty(), self.name.is_empty()) {
            (true, _) => write!(f, "top-level section"),
            (false, true) => write!(f, "[{}]", self.kind),
            (false, false) => write!(f, "[{} {}]", self.kind, self.name),
        }
    }
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn parse<T>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| KvError::Value {
                line: e.line,
                key: key.to_string(),
                detail: err.to_string(),
            }),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T, KvError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| KvError::Missing {
            section: self.to_string(),
            key: key.to_string(),
        })
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), KvError> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key.as_str())) {
            Some(e) => Err(KvError::Unknown {
                line: e.line,
                section: self.to_string(),
                key: e.key.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn value_error(&self, key: &str, detail: impl Into<String>) -> KvError {
        KvError::Value {
            line: self.get(key).map_or(0, |e| e.line),
            key: key.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut sections = vec![Section::default()];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let inner = rest.strip_suffix(']').ok_or(KvError::Header { line })?.trim();
                let (kind, name) = match inner.split_once(char::is_whitespace) {
                    Some((k, n)) => (k.to_string(), n.trim().to_string()),
                    None => (inner.to_string(), String::new()),
                };
                sections.push(Section {
                    kind,
                    name,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| KvError::Syntax {
                line,
                text: trimmed.to_string(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            }
            sections
                .last_mut()
                .expect("top-level section always present")
                .entries
                .push(Entry {
                    key: key.to_string(),
                    value: value.trim().to_string(),
                    line,
                });
        }
        Ok(Self { sections })
    }

    pub fn top(&self) -> &Section {
        &self.sections[0]
    }

    pub fn section(&self, kind: &str) -> Option<&Section> {
        self.sections.iter().skip(1).find(|s| s.kind == kind)
    }

    pub fn sections_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().skip(1).filter(move |s| s.kind == kind)
    }
}

/// Parses a comma separated list of values.
pub fn parse_list<T>(value: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_entries() {
        let doc = Document::parse(
            "# c\ncapacity = 10\n\n[train]\nlambda=0.5\n[arm high risk]\npredicate = a=1 & b=0\n",
        )
        .unwrap();
        assert_eq!(doc.top().require::<u32>("capacity").unwrap(), 10);
        assert_eq!(doc.section("train").unwrap().require::<f64>("lambda").unwrap(), 0.5);
        let arm = doc.sections_of("arm").next().unwrap();
        assert_eq!(arm.name, "high risk");
        assert_eq!(arm.get("predicate").unwrap().value, "a=1 & b=0");
    }

    #[test]
    fn syntax_errors_carry_line() {
        assert_eq!(
            Document::parse("a = 1\nbogus\n"),
            Err(KvError::Syntax {
                line: 2,
                text: "bogus".into()
            })
        );
        assert_eq!(Document::parse("[open\n"), Err(KvError::Header { line: 1 }));
    }

    #[test]
    fn value_errors() {
        let doc = Document::parse("n = x\n").unwrap();
        assert!(matches!(doc.top().require::<u32>("n"), Err(KvError::Value { line: 1, .. })));
        assert!(matches!(doc.top().require::<u32>("m"), Err(KvError::Missing { .. })));
        assert!(matches!(doc.top().check_keys(&["m"]), Err(KvError::Unknown { .. })));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("0.3, 0.4,0.5").unwrap(), vec![0.3, 0.4, 0.5]);
        assert!(parse_list::<u32>("1,x").is_err());
    }
}
