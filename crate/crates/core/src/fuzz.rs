//! Fuzzer driver and generator.
//!
//! The driver walks the selected APIs one at a time. Each iteration fetches a
//! random seed for the API and hands it to the generator, which applies every
//! enabled rule to every parameter it fits, producing one case per
//! (rule, target) with exactly that one mutation. Cases run on a bounded
//! worker pool; verdicts are merged in case order, so a campaign is a pure
//! function of its config and master seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codegen::{render, TargetProfile};
use crate::exec::{
    classify, differential, Backend, ExecutionOutcome, ScriptedBackend, SimBackend, Tolerance, Verdict,
};
use crate::rng::StreamKey;
use crate::rules::{apply, pair_candidates, MutationNote, RuleError, RuleId, RuleTable, Signature};
use crate::sim::SimCatalog;
use crate::store::{ApiFilter, SeedStore, StoreError};
use crate::value::{CornerConfig, TestInput};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("executor: {0}")]
    Executor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    /// In-process simulated target; `catalog` overrides the built-in one.
    Simulated {
        #[serde(default)]
        catalog: Option<PathBuf>,
    },
    /// One child process per case: `<runner> [args..] <script>`.
    Scripted {
        runner: PathBuf,
        #[serde(default)]
        runner_args: Vec<String>,
        #[serde(default)]
        keep_artifacts: bool,
        #[serde(default = "default_mem_limit_mb")]
        mem_limit_mb: Option<u64>,
        #[serde(default)]
        env_allow: Option<Vec<String>>,
    },
}

fn default_mem_limit_mb() -> Option<u64> {
    Some(4096)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Seed store directory.
    pub store: PathBuf,
    /// Scratch directory for scripts and per-case working directories.
    pub workdir: PathBuf,
    pub api_filter: ApiFilter,
    /// Exact API names or `prefix*` patterns; empty selects every API.
    pub apis: Vec<String>,
    pub num_iter: u64,
    pub rules: BTreeSet<RuleId>,
    pub corner: CornerConfig,
    pub timeout_secs: f64,
    /// Worker threads; 0 uses one per CPU.
    pub workers: usize,
    pub backend: BackendConfig,
    /// Built-in profile name (`python`, `tensorflow`, `pytorch`) or a path to
    /// a profile JSON file.
    pub profile: String,
    /// Device labels; with two or more, the differential oracle compares
    /// every later device against the first.
    pub devices: Vec<String>,
    pub tolerance: Tolerance,
    pub master_seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            store: PathBuf::from("seeds"),
            workdir: PathBuf::from("work"),
            api_filter: ApiFilter::All,
            apis: Vec::new(),
            num_iter: 1000,
            rules: RuleId::ALL.into_iter().collect(),
            corner: CornerConfig::default(),
            timeout_secs: 30.0,
            workers: 0,
            backend: BackendConfig::Simulated { catalog: None },
            profile: "python".into(),
            devices: vec!["cpu".into(), "gpu".into()],
            tolerance: Tolerance::default(),
            master_seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.num_iter < 1 {
            return Err(CampaignError::Config("num_iter must be at least 1".into()));
        }
        if self.devices.is_empty() {
            return Err(CampaignError::Config("at least one device is required".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(CampaignError::Config("timeout_secs must be positive".into()));
        }
        if !(self.tolerance.rel >= 0.0 && self.tolerance.abs >= 0.0) {
            return Err(CampaignError::Config("tolerances must be non-negative".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Set a dotted key (`backend.runner`, `corner.large_int`, ...) to a
    /// value. The value is parsed as JSON, falling back to a plain string.
    /// Unknown keys are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CampaignError> {
        let mut tree = serde_json::to_value(&*self).map_err(|e| CampaignError::Config(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| CampaignError::Config(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
        *self = serde_json::from_value(tree).map_err(|e| CampaignError::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve_profile(&self) -> Result<TargetProfile, CampaignError> {
        if let Some(p) = TargetProfile::builtin(&self.profile) {
            return Ok(p);
        }
        let text = std::fs::read_to_string(&self.profile)
            .map_err(|e| CampaignError::Config(format!("profile `{}`: {e}", self.profile)))?;
        serde_json::from_str(&text).map_err(|e| CampaignError::Config(format!("profile `{}`: {e}", self.profile)))
    }

    pub fn build_backend(&self) -> Result<Box<dyn Backend>, CampaignError> {
        match &self.backend {
            BackendConfig::Simulated { catalog } => {
                let cat = match catalog {
                    Some(path) => SimCatalog::load(path).map_err(|e| CampaignError::Executor(e.to_string()))?,
                    None => SimCatalog::default(),
                };
                Ok(Box::new(SimBackend::new(cat, self.timeout())))
            }
            BackendConfig::Scripted { runner, runner_args, keep_artifacts, mem_limit_mb, env_allow } => {
                let mut b = ScriptedBackend::new(runner.clone(), self.workdir.clone(), self.timeout());
                b.runner_args = runner_args.clone();
                b.keep_artifacts = *keep_artifacts;
                b.mem_limit = mem_limit_mb.map(|mb| mb << 20);
                if let Some(allow) = env_allow {
                    b.env_allow = allow.clone();
                }
                b.check().map_err(|e| CampaignError::Executor(e.to_string()))?;
                Ok(Box::new(b))
            }
        }
    }

    fn selects(&self, api: &str) -> bool {
        self.apis.is_empty()
            || self.apis.iter().any(|p| match p.strip_suffix('*') {
                Some(prefix) => api.starts_with(prefix),
                None => api == p,
            })
    }
}

/// One mutated input, ready to render and run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCase {
    pub case_id: String,
    pub api_name: String,
    pub seed_id: String,
    pub iteration: u64,
    pub input: TestInput,
    pub notes: Vec<MutationNote>,
}

impl GeneratedCase {
    pub fn rules(&self) -> Vec<RuleId> {
        self.notes.iter().map(|n| n.rule).collect()
    }
}

fn case_id(api: &str, seed_id: &str, notes: &[MutationNote], rng_seed: u64) -> String {
    let mut h = Sha256::new();
    for part in [api.as_bytes(), seed_id.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let trace = serde_json::to_vec(notes).expect("notes serialize");
    h.update((trace.len() as u64).to_le_bytes());
    h.update(&trace);
    h.update(rng_seed.to_le_bytes());
    hex::encode(&h.finalize()[..12])
}

/// All single-mutation cases for one seed: each single-argument rule on
/// every argument it fits, each pairwise rule on one candidate pair. With an
/// empty rule table the seed passes through unchanged as one case.
pub fn fuzz_iteration(
    api_name: &str,
    seed: &TestInput,
    key: StreamKey,
    iteration: u64,
    table: &RuleTable,
    corner: &CornerConfig,
) -> Vec<GeneratedCase> {
    let make = |input: TestInput, notes: Vec<MutationNote>, rng_seed: u64| GeneratedCase {
        case_id: case_id(api_name, &seed.record_id, &notes, rng_seed),
        api_name: api_name.to_string(),
        seed_id: seed.record_id.clone(),
        iteration,
        input,
        notes,
    };
    if table.signatures().next().is_none() {
        return vec![make(seed.clone(), Vec::new(), key.value())];
    }

    let types = seed.signature();
    let mut targets: Vec<(RuleId, Vec<usize>)> = Vec::new();
    for (j, t) in types.iter().enumerate() {
        for &r in table.lookup(Signature::Single(*t)) {
            targets.push((r, vec![j]));
        }
    }
    let mut pairwise: Vec<RuleId> = table
        .signatures()
        .filter(|(s, _)| matches!(s, Signature::Pair(..)))
        .flat_map(|(_, rs)| rs.iter().copied())
        .collect();
    pairwise.sort();
    pairwise.dedup();
    // With several candidate pairs, successive iterations take them in turn.
    for r in pairwise {
        let cands = pair_candidates(r, &types);
        if !cands.is_empty() {
            let (a, b) = cands[(iteration % cands.len() as u64) as usize];
            targets.push((r, vec![a, b]));
        }
    }

    let mut out = Vec::with_capacity(targets.len());
    for (rule, tgt) in targets {
        let mut k = key.child(&rule.to_string());
        for &i in &tgt {
            k = k.child_u64(i as u64);
        }
        match apply(rule, &seed.params, &tgt, k.value(), corner) {
            Ok((params, note)) => {
                let input = TestInput { params, ..seed.clone() };
                out.push(make(input, vec![note], k.value()));
            }
            Err(RuleError::NotApplicable { .. } | RuleError::IllegalKind(_)) => {}
        }
    }
    out
}

/// Dedup key: api, verdict class, signal or exception, top frame.
pub fn fingerprint(api: &str, verdict: &Verdict, top_frame: Option<&str>) -> String {
    let mut h = Sha256::new();
    for part in [api, verdict.class(), &verdict.detail(), top_frame.unwrap_or("")] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Verdict of one case across all configured devices.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub verdict: Verdict,
    pub top_frame: Option<String>,
    pub device: Option<String>,
}

/// Run one case on every device and combine the verdicts: the first crash,
/// hang or infrastructure error wins; otherwise, if every device returned,
/// the differential oracle compares each later device with the first.
pub fn evaluate_case(
    case: &GeneratedCase,
    backend: &dyn Backend,
    profile: &TargetProfile,
    devices: &[String],
    tol: Tolerance,
) -> CaseResult {
    let mut benign: Vec<ExecutionOutcome> = Vec::new();
    let mut invalid: Option<(Verdict, String)> = None;
    for device in devices {
        let script = if backend.needs_script() {
            match render(case, profile, device) {
                Ok(s) => Some(s),
                Err(e) => {
                    return CaseResult {
                        verdict: Verdict::InfraError { reason: e.to_string() },
                        top_frame: None,
                        device: Some(device.clone()),
                    }
                }
            }
        } else {
            None
        };
        let outcome = match backend.execute(case, device, script.as_ref()) {
            Ok(o) => o,
            Err(e) => {
                return CaseResult {
                    verdict: Verdict::InfraError { reason: e.to_string() },
                    top_frame: None,
                    device: Some(device.clone()),
                }
            }
        };
        match classify(&outcome, profile) {
            Verdict::Benign => benign.push(outcome),
            v @ Verdict::InvalidInput { .. } => {
                invalid.get_or_insert((v, device.clone()));
            }
            v => return CaseResult { verdict: v, top_frame: outcome.top_frame(), device: Some(device.clone()) },
        }
    }
    if let Some((verdict, device)) = invalid {
        return CaseResult { verdict, top_frame: None, device: Some(device) };
    }
    if let Some((first, rest)) = benign.split_first() {
        for other in rest {
            match differential(&first.markers.output, &other.markers.output, tol) {
                Ok(Verdict::Benign) => {}
                Ok(v) => return CaseResult { verdict: v, top_frame: None, device: Some(other.device.clone()) },
                Err(e) => {
                    return CaseResult {
                        verdict: Verdict::InfraError { reason: e.to_string() },
                        top_frame: None,
                        device: Some(other.device.clone()),
                    }
                }
            }
        }
    }
    CaseResult { verdict: Verdict::Benign, top_frame: None, device: devices.first().cloned() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub fingerprint: String,
    pub api_name: String,
    pub verdict: Verdict,
    pub top_frame: Option<String>,
    /// Rules applied in the representative case.
    pub attribution: Vec<RuleId>,
    /// Rules applied in any case that hit this fingerprint.
    pub rules_observed: BTreeSet<RuleId>,
    pub representative: GeneratedCase,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApiStats {
    pub cases: u64,
    pub benign: u64,
    pub invalid_input: u64,
    pub crash: u64,
    pub hang: u64,
    pub diff_mismatch: u64,
    pub infra_error: u64,
    pub findings: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub cases: u64,
    /// Unique findings reached by this rule.
    pub findings: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub findings: Vec<Finding>,
    pub per_rule_counts: BTreeMap<RuleId, RuleStats>,
    pub per_api_stats: BTreeMap<String, ApiStats>,
    /// Distinct fingerprints.
    pub unique_findings: usize,
    /// APIs with at least one finding.
    pub apis_with_findings: usize,
    pub wall_time_secs: f64,
}

impl CampaignReport {
    /// 0 when nothing was found, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.findings.is_empty() {
            0
        } else {
            2
        }
    }

    pub fn fingerprints(&self) -> BTreeSet<String> {
        self.findings.iter().map(|f| f.fingerprint.clone()).collect()
    }

    pub fn find_case(&self, case_id: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.representative.case_id == case_id)
    }

    /// Fixed-width summary: findings per rule, then per API.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<6} {:<36} {:>8} {:>9}\n", "rule", "name", "cases", "findings"));
        for (rule, st) in &self.per_rule_counts {
            s.push_str(&format!("{:<6} {:<36} {:>8} {:>9}\n", rule.to_string(), rule.name(), st.cases, st.findings));
        }
        s.push('\n');
        s.push_str(&format!(
            "{:<36} {:>8} {:>7} {:>7} {:>5} {:>5} {:>8}\n",
            "api", "cases", "invalid", "crash", "hang", "diff", "findings"
        ));
        for (api, st) in &self.per_api_stats {
            s.push_str(&format!(
                "{:<36} {:>8} {:>7} {:>7} {:>5} {:>5} {:>8}\n",
                api, st.cases, st.invalid_input, st.crash, st.hang, st.diff_mismatch, st.findings
            ));
        }
        s.push_str(&format!(
            "\n{} unique finding(s) across {} api(s) in {:.2}s\n",
            self.unique_findings, self.apis_with_findings, self.wall_time_secs
        ));
        s
    }
}

/// Generate every case of a campaign, in execution order.
pub fn generate_cases(config: &CampaignConfig, store: &SeedStore) -> Result<Vec<GeneratedCase>, CampaignError> {
    let table = RuleTable::new(&config.rules);
    let root = StreamKey::root(config.master_seed);
    let mut cases = Vec::new();
    for api in store.list_apis(config.api_filter).into_iter().filter(|a| config.selects(a)) {
        let api_key = root.child(&api);
        for it in 0..config.num_iter {
            let key = api_key.child_u64(it);
            let seed = store.random_input(&api, &mut key.child("seed").rng())?;
            cases.extend(fuzz_iteration(&api, &seed, key.child("mutate"), it, &table, &config.corner));
        }
    }
    Ok(cases)
}

/// Run a full campaign against an opened store and backend.
pub fn run_campaign(
    config: &CampaignConfig,
    store: &SeedStore,
    backend: &dyn Backend,
    profile: &TargetProfile,
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let start = Instant::now();
    let cases = generate_cases(config, store)?;
    log::info!("executing {} cases", cases.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CampaignError::Executor(e.to_string()))?;
    let results: Vec<CaseResult> = pool.install(|| {
        use rayon::prelude::*;
        cases
            .par_iter()
            .map(|c| evaluate_case(c, backend, profile, &config.devices, config.tolerance))
            .collect()
    });

    let mut per_api: BTreeMap<String, ApiStats> = BTreeMap::new();
    let mut per_rule: BTreeMap<RuleId, RuleStats> =
        config.rules.iter().map(|r| (*r, RuleStats::default())).collect();
    let mut findings: BTreeMap<String, Finding> = BTreeMap::new();
    for api in store.list_apis(config.api_filter).into_iter().filter(|a| config.selects(a)) {
        per_api.entry(api).or_default();
    }
    for (case, res) in cases.iter().zip(results) {
        let st = per_api.entry(case.api_name.clone()).or_default();
        st.cases += 1;
        for r in case.rules() {
            per_rule.entry(r).or_default().cases += 1;
        }
        match &res.verdict {
            Verdict::Benign => st.benign += 1,
            Verdict::InvalidInput { .. } => st.invalid_input += 1,
            Verdict::Crash { .. } => st.crash += 1,
            Verdict::Hang => st.hang += 1,
            Verdict::DiffMismatch { .. } => st.diff_mismatch += 1,
            Verdict::InfraError { reason } => {
                log::warn!("case {}: {reason}", case.case_id);
                st.infra_error += 1
            }
        }
        if !res.verdict.is_finding() {
            continue;
        }
        let fp = fingerprint(&case.api_name, &res.verdict, res.top_frame.as_deref());
        let f = findings.entry(fp.clone()).or_insert_with(|| Finding {
            fingerprint: fp,
            api_name: case.api_name.clone(),
            verdict: res.verdict.clone(),
            top_frame: res.top_frame.clone(),
            attribution: case.rules(),
            rules_observed: BTreeSet::new(),
            representative: case.clone(),
            count: 0,
        });
        f.count += 1;
        f.rules_observed.extend(case.rules());
    }

    let findings: Vec<Finding> = findings.into_values().collect();
    for f in &findings {
        per_api.entry(f.api_name.clone()).or_default().findings += 1;
        for r in &f.rules_observed {
            per_rule.entry(*r).or_default().findings += 1;
        }
    }
    let apis_with_findings = per_api.values().filter(|s| s.findings > 0).count();
    Ok(CampaignReport {
        config: config.clone(),
        unique_findings: findings.len(),
        apis_with_findings,
        findings,
        per_rule_counts: per_rule,
        per_api_stats: per_api,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Open the store, build the backend and profile, and run.
pub fn run_configured(config: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let store = SeedStore::open(&config.store)?;
    let profile = config.resolve_profile()?;
    let backend = config.build_backend()?;
    run_campaign(config, &store, backend.as_ref(), &profile)
}

/// Regenerate the case with `case_id` from the campaign config.
pub fn find_generated(config: &CampaignConfig, store: &SeedStore, case_id: &str) -> Result<Option<GeneratedCase>, CampaignError> {
    Ok(generate_cases(config, store)?.into_iter().find(|c| c.case_id == case_id))
}
