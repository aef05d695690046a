//! Vulnerability-report mining: keyword classification, exclusion filtering
//! and the provenance table linking rules to annotated root causes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::RuleId;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("annotation file not found: {0}")]
    AnnotationMissing(PathBuf),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportRecord {
    pub id: String,
    pub title: String,
    pub body: String,
    pub labels: Vec<String>,
    pub platforms: Vec<String>,
    /// Set when the issue reproduces without any API argument.
    pub no_input: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VulnCategory {
    Memory,
    Logical,
    Performance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordTaxonomy {
    pub categories: BTreeMap<VulnCategory, Vec<String>>,
}

impl Default for KeywordTaxonomy {
    fn default() -> Self {
        let memory = [
            "buffer overflow",
            "integer overflow",
            "integer underflow",
            "heap buffer overflow",
            "stack overflow",
            "null pointer dereference",
        ];
        let logical = [
            "wrong result",
            "unexpected output",
            "incorrect calculation",
            "inconsistent behavior",
            "unexpected behavior",
            "incorrect logic",
            "wrong calculation",
        ];
        let performance = [
            "slow",
            "high cpu usage",
            "high memory usage",
            "poor performance",
            "slow response time",
            "performance bottleneck",
            "performance optimization",
            "resource usage",
            "race condition",
            "memory leak",
        ];
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        KeywordTaxonomy {
            categories: BTreeMap::from([
                (VulnCategory::Memory, own(&memory)),
                (VulnCategory::Logical, own(&logical)),
                (VulnCategory::Performance, own(&performance)),
            ]),
        }
    }
}

impl KeywordTaxonomy {
    /// Lowercases every keyword and rejects empty ones.
    pub fn normalized(mut self) -> Result<Self, KbError> {
        for words in self.categories.values_mut() {
            for w in words.iter_mut() {
                *w = normalize(w.as_bytes()).into_iter().map(char::from).collect();
                if w.is_empty() {
                    return Err(KbError::Invalid("empty keyword in taxonomy".into()));
                }
            }
        }
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = fs::read_to_string(path).map_err(|source| KbError::Io { path: path.into(), source })?;
        let tax: KeywordTaxonomy = serde_json::from_str(&text).map_err(|e| KbError::Invalid(e.to_string()))?;
        tax.normalized()
    }
}

/// ASCII-lowercase with whitespace runs collapsed to one space.
fn normalize(text: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(text.len());
    let mut pending_space = false;
    for &b in text {
        if b.is_ascii_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(b' ');
                pending_space = false;
            }
            out.push(b.to_ascii_lowercase());
        }
    }
    out
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

/// Categories whose keywords occur in the title or body; empty when the
/// report is unrelated.
pub fn classify(report: &ReportRecord, taxonomy: &KeywordTaxonomy) -> BTreeSet<VulnCategory> {
    let title = normalize(report.title.as_bytes());
    let body = normalize(report.body.as_bytes());
    taxonomy
        .categories
        .iter()
        .filter(|(_, words)| {
            words.iter().any(|w| {
                let w = normalize(w.as_bytes());
                contains(&title, &w) || contains(&body, &w)
            })
        })
        .map(|(c, _)| *c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Unrelated,
    Platform,
    Build,
    External,
    NoInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExclusionPolicy {
    pub platforms: Vec<String>,
    pub build_labels: Vec<String>,
    pub external_libraries: Vec<String>,
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        ExclusionPolicy {
            platforms: own(&["windows", "android", "ios"]),
            build_labels: own(&["build", "configuration", "config", "installation", "packaging"]),
            external_libraries: own(&["torchvision", "torchaudio", "torchtext", "keras-contrib"]),
        }
    }
}

fn label_matches(label: &str, term: &str) -> bool {
    let label = label.to_ascii_lowercase();
    label.split(|c: char| !c.is_ascii_alphanumeric() && c != '-').any(|tok| tok == term)
}

/// Keep (`None`) or drop with the first matching reason.
pub fn apply_exclusions(report: &ReportRecord, policy: &ExclusionPolicy) -> Option<DropReason> {
    let any = |terms: &[String]| {
        report.labels.iter().chain(&report.platforms).any(|l| terms.iter().any(|t| label_matches(l, t)))
    };
    if any(&policy.platforms) {
        Some(DropReason::Platform)
    } else if any(&policy.build_labels) {
        Some(DropReason::Build)
    } else if any(&policy.external_libraries) {
        Some(DropReason::External)
    } else if report.no_input {
        Some(DropReason::NoInput)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriagedReport {
    pub id: String,
    pub categories: BTreeSet<VulnCategory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped: Option<DropReason>,
}

/// Classification followed by exclusion; unrelated reports are dropped.
pub fn triage(
    reports: &[ReportRecord],
    taxonomy: &KeywordTaxonomy,
    policy: &ExclusionPolicy,
) -> Vec<TriagedReport> {
    reports
        .iter()
        .map(|r| {
            let categories = classify(r, taxonomy);
            let dropped = if categories.is_empty() {
                Some(DropReason::Unrelated)
            } else {
                apply_exclusions(r, policy)
            };
            TriagedReport { id: r.id.clone(), categories, dropped }
        })
        .collect()
}

pub fn parse_reports(reader: impl BufRead) -> Result<Vec<ReportRecord>, KbError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| KbError::Schema { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| KbError::Schema { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Report id to manually assigned root cause.
pub type Annotations = BTreeMap<String, String>;

pub fn load_annotations(path: &Path) -> Result<Annotations, KbError> {
    if !path.is_file() {
        return Err(KbError::AnnotationMissing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| KbError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| KbError::Invalid(format!("{}: {e}", path.display())))
}

/// Root cause to the rules that target it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseMap(pub BTreeMap<String, Vec<RuleId>>);

impl Default for RootCauseMap {
    fn default() -> Self {
        use RuleId::*;
        let entries: [(&str, &[RuleId]); 18] = [
            ("shape-mismatch", &[R1]),
            ("dimension-mismatch", &[R2]),
            ("list-indices-mismatch", &[R3]),
            ("list-element-mismatch", &[R4]),
            ("list-length-mismatch", &[R5]),
            ("large-input-tensor", &[R6]),
            ("negative-input-tensor", &[R6]),
            ("nan-input-tensor", &[R6]),
            ("negative-large-input-tensor", &[R7, R8]),
            ("scalar-tensor", &[R9]),
            ("non-scalar-tensor", &[R10]),
            ("large-integer-argument", &[R11]),
            ("negative-integer-argument", &[R11]),
            ("zero-integer-argument", &[R11]),
            ("none-input-argument", &[R11]),
            ("boolean-argument", &[R12]),
            ("invalid-input-string", &[R13]),
            ("large-list-element", &[R14]),
        ];
        RootCauseMap(entries.into_iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect())
    }
}

pub const UNMAPPED: &str = "unmapped";

/// Groups kept report ids by rule. Reports without an annotation, or with a
/// root cause the map does not know, land under `"unmapped"`.
pub fn provenance_table(
    kept: &[ReportRecord],
    annotations: &Annotations,
    map: &RootCauseMap,
) -> BTreeMap<String, Vec<String>> {
    let mut table: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in kept {
        let rules = annotations.get(&r.id).and_then(|cause| map.0.get(&cause.to_ascii_lowercase()));
        match rules {
            Some(rules) if !rules.is_empty() => {
                for rule in rules {
                    table.entry(rule.to_string()).or_default().push(r.id.clone());
                }
            }
            _ => table.entry(UNMAPPED.to_string()).or_default().push(r.id.clone()),
        }
    }
    for ids in table.values_mut() {
        ids.sort();
        ids.dedup();
    }
    table
}
