//! File-backed seed store.
//!
//! Layout under the store root:
//!
//! ```text
//! store/<api_name>.jsonl   one TraceRecord per line, append-only
//! store/index.json         api -> record ids, developer flag, counts per source
//! ```
//!
//! The JSONL files are the source of truth; the index is rebuilt from them on
//! every ingest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::value::{Param, Source, TestInput};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("unknown api `{0}`")]
    UnknownApi(String),
    #[error("seed store not found at {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// One recorded invocation as it is stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub api: String,
    pub params: Vec<Param>,
    pub source: Source,
    #[serde(default)]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    /// Developer-API flag supplied by the harvesting side; when absent the
    /// name-marker rule decides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub developer: Option<bool>,
}

impl TraceRecord {
    pub fn new(api: impl Into<String>, params: Vec<Param>, source: Source) -> Self {
        let mut r = TraceRecord { api: api.into(), params, source, id: String::new(), ts: None, developer: None };
        r.id = r.content_id();
        r
    }

    /// Stable hash of the api name and the canonical parameter serialization.
    pub fn content_id(&self) -> String {
        let canonical = serde_json::to_string(&self.params).expect("params serialize");
        let mut h = Sha256::new();
        h.update(self.api.as_bytes());
        h.update([0]);
        h.update(canonical.as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    pub fn is_developer(&self) -> bool {
        self.developer.unwrap_or_else(|| has_internal_marker(&self.api))
    }

    pub fn to_test_input(&self) -> TestInput {
        TestInput {
            api_name: self.api.clone(),
            params: self.params.clone(),
            source: self.source,
            record_id: self.id.clone(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.api.trim().is_empty() {
            return Err("empty api name".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.params {
            if !names.insert(p.name.as_str()) {
                return Err(format!("duplicate parameter name `{}`", p.name));
            }
        }
        Ok(())
    }
}

/// A dotted path component starting with `_` marks an internal module.
pub fn has_internal_marker(api: &str) -> bool {
    api.split('.').any(|part| part.starts_with('_'))
}

/// Parse a JSONL stream of trace records. Blank lines are skipped; the first
/// malformed line aborts with its 1-based line number.
pub fn parse_records(reader: impl BufRead) -> Result<Vec<TraceRecord>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| StoreError::Schema { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| StoreError::Schema { line: line_no, message: e.to_string() })?;
        rec.validate().map_err(|message| StoreError::Schema { line: line_no, message })?;
        rec.id = rec.content_id();
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub added: usize,
    pub skipped: usize,
    pub apis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApiFilter {
    EndUser,
    Developer,
    All,
}

impl std::str::FromStr for ApiFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "end-user" | "end_user" => Ok(ApiFilter::EndUser),
            "developer" => Ok(ApiFilter::Developer),
            "all" => Ok(ApiFilter::All),
            other => Err(format!("unknown api filter `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub developer: bool,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub apis: BTreeMap<String, IndexEntry>,
    pub sources: BTreeMap<Source, usize>,
}

/// File name for an api: safe characters kept, the rest percent-encoded.
pub fn api_file_name(api: &str) -> String {
    let mut out = String::with_capacity(api.len() + 6);
    for (i, b) in api.bytes().enumerate() {
        let safe = b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && i > 0);
        if safe {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".jsonl");
    out
}

#[derive(Debug, Clone)]
pub struct SeedStore {
    root: PathBuf,
    records: BTreeMap<String, Vec<TraceRecord>>,
}

impl SeedStore {
    /// Open an existing store; fails if the directory is absent.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(StoreError::Missing(root));
        }
        let mut store = SeedStore { root, records: BTreeMap::new() };
        store.load()?;
        Ok(store)
    }

    pub fn open_or_create(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(io_err(root))?;
        Self::open(root)
    }

    /// An in-memory store that is never written to disk.
    pub fn in_memory(records: impl IntoIterator<Item = TraceRecord>) -> Self {
        let mut store = SeedStore { root: PathBuf::new(), records: BTreeMap::new() };
        for mut r in records {
            r.id = r.content_id();
            let list = store.records.entry(r.api.clone()).or_default();
            if !list.iter().any(|x| x.id == r.id) {
                list.push(r);
            }
        }
        store
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn load(&mut self) -> Result<(), StoreError> {
        let entries = fs::read_dir(&self.root).map_err(io_err(&self.root))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let file = File::open(&path).map_err(io_err(&path))?;
            let recs = parse_records(BufReader::new(file)).map_err(|e| match e {
                StoreError::Schema { line, message } => StoreError::Schema {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?;
            for r in recs {
                let list = self.records.entry(r.api.clone()).or_default();
                if !list.iter().any(|x| x.id == r.id) {
                    list.push(r);
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.values().flatten().any(|r| r.id == id)
    }

    /// Deduplicated append of `records`. Nothing is written when the store
    /// has no root (in-memory mode).
    pub fn ingest(
        &mut self,
        records: impl IntoIterator<Item = TraceRecord>,
    ) -> Result<IngestSummary, StoreError> {
        let mut summary = IngestSummary::default();
        let mut seen: BTreeSet<String> =
            self.records.values().flatten().map(|r| r.id.clone()).collect();
        let mut fresh: BTreeMap<String, Vec<TraceRecord>> = BTreeMap::new();
        for mut r in records {
            r.id = r.content_id();
            if seen.insert(r.id.clone()) {
                summary.added += 1;
                fresh.entry(r.api.clone()).or_default().push(r);
            } else {
                summary.skipped += 1;
            }
        }
        let persist = !self.root.as_os_str().is_empty();
        for (api, recs) in fresh {
            if persist {
                let path = self.root.join(api_file_name(&api));
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(io_err(&path))?;
                for r in &recs {
                    let line = serde_json::to_string(r).expect("record serializes");
                    writeln!(f, "{line}").map_err(io_err(&path))?;
                }
            }
            self.records.entry(api).or_default().extend(recs);
        }
        if persist {
            self.write_index()?;
        }
        summary.apis = self.records.len();
        Ok(summary)
    }

    /// Parse `reader` completely, then ingest. A schema error leaves the
    /// store untouched.
    pub fn ingest_reader(&mut self, reader: impl BufRead) -> Result<IngestSummary, StoreError> {
        let recs = parse_records(reader)?;
        self.ingest(recs)
    }

    pub fn index(&self) -> StoreIndex {
        let mut index = StoreIndex::default();
        for (api, recs) in &self.records {
            index.apis.insert(
                api.clone(),
                IndexEntry {
                    file: api_file_name(api),
                    developer: recs.iter().any(TraceRecord::is_developer),
                    ids: recs.iter().map(|r| r.id.clone()).collect(),
                },
            );
            for r in recs {
                *index.sources.entry(r.source).or_default() += 1;
            }
        }
        index
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let path = self.root.join("index.json");
        let text = serde_json::to_string_pretty(&self.index()).expect("index serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn records(&self, api: &str) -> Result<&[TraceRecord], StoreError> {
        self.records
            .get(api)
            .map(Vec::as_slice)
            .ok_or_else(|| StoreError::UnknownApi(api.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A uniformly chosen record for `api`.
    pub fn random_input(&self, api: &str, rng: &mut impl Rng) -> Result<TestInput, StoreError> {
        let recs = self.records(api)?;
        if recs.is_empty() {
            return Err(StoreError::UnknownApi(api.to_string()));
        }
        Ok(recs[rng.gen_range(0..recs.len())].to_test_input())
    }

    /// Sorted api names matching `filter`.
    pub fn list_apis(&self, filter: ApiFilter) -> Vec<String> {
        self.records
            .iter()
            .filter(|(_, recs)| {
                let dev = recs.iter().any(TraceRecord::is_developer);
                match filter {
                    ApiFilter::All => true,
                    ApiFilter::Developer => dev,
                    ApiFilter::EndUser => !dev,
                }
            })
            .map(|(api, _)| api.clone())
            .collect()
    }

    /// Every record as JSONL, in api order then insertion order.
    pub fn export(&self, mut out: impl Write) -> io::Result<()> {
        for r in self.records.values().flatten() {
            writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        Ok(())
    }
}
