//! Case execution and outcome classification.
//!
//! Two backends: the simulated one dispatches to [`crate::sim`] in-process
//! and reports planted faults as if the process had died; the scripted one
//! spawns `<runner> <script-path>` per case in a scrubbed, resource-limited
//! child process. Both produce an [`ExecutionOutcome`], which [`classify`]
//! turns into a [`Verdict`].

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{
    parse_markers, MarkerVerdict, OutputBlock, OutputSummary, ParsedMarkers, RenderedCase, TargetProfile,
    OUT_BEGIN, OUT_END, VERDICT_PREFIX,
};
use crate::fuzz::GeneratedCase;
use crate::sim::{FaultKind, SimCatalog, SimError, SimResult};

pub const SIGABRT: i32 = 6;
pub const SIGSEGV: i32 = 11;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("backend could not start: {0}")]
    Infra(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("outputs cannot be compared: {0}")]
    IncomparableOutputs(String),
}

/// How the process ended; exactly one cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", content = "code", rename_all = "kebab-case")]
pub enum Termination {
    Exit(i32),
    Signal(i32),
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub case_id: String,
    pub device: String,
    pub termination: Termination,
    #[serde(with = "lossy_bytes")]
    pub stdout: Vec<u8>,
    #[serde(with = "lossy_bytes")]
    pub stderr: Vec<u8>,
    pub wall_time_ms: u64,
    pub markers: ParsedMarkers,
}

mod lossy_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

impl ExecutionOutcome {
    pub fn timed_out(&self) -> bool {
        self.termination == Termination::TimedOut
    }

    /// First `#0 ...` line of stderr, the conventional top stack frame.
    pub fn top_frame(&self) -> Option<String> {
        String::from_utf8_lossy(&self.stderr)
            .lines()
            .map(str::trim)
            .find(|l| l.starts_with("#0 "))
            .map(String::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "cause", content = "detail", rename_all = "kebab-case")]
pub enum CrashCause {
    Signal(i32),
    RuntimeError(String),
    AbnormalExit(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Crash { cause: CrashCause },
    InvalidInput { exception: String },
    Hang,
    Benign,
    DiffMismatch { max_abs: f64, max_rel: f64 },
    InfraError { reason: String },
}

impl Verdict {
    pub fn class(&self) -> &'static str {
        match self {
            Verdict::Crash { .. } => "crash",
            Verdict::InvalidInput { .. } => "invalid-input",
            Verdict::Hang => "hang",
            Verdict::Benign => "benign",
            Verdict::DiffMismatch { .. } => "diff-mismatch",
            Verdict::InfraError { .. } => "infra-error",
        }
    }

    /// Crashes, hangs and device mismatches are reported; everything else
    /// is noise or bookkeeping.
    pub fn is_finding(&self) -> bool {
        matches!(self, Verdict::Crash { .. } | Verdict::Hang | Verdict::DiffMismatch { .. })
    }

    /// Signal number or exception name, used for deduplication.
    pub fn detail(&self) -> String {
        match self {
            Verdict::Crash { cause: CrashCause::Signal(s) } => format!("signal:{s}"),
            Verdict::Crash { cause: CrashCause::RuntimeError(e) } => format!("exception:{e}"),
            Verdict::Crash { cause: CrashCause::AbnormalExit(c) } => format!("exit:{c}"),
            Verdict::InvalidInput { exception } => format!("exception:{exception}"),
            _ => String::new(),
        }
    }
}

/// Crash oracle. Total over every outcome.
///
/// A signal beats any marker (the process may die after printing OK). A
/// marker-less exit with status 1 is the interpreter failing outside the
/// guarded call (import error, bad runner), which is infrastructure, not a
/// finding.
pub fn classify(outcome: &ExecutionOutcome, profile: &TargetProfile) -> Verdict {
    match outcome.termination {
        Termination::TimedOut => Verdict::Hang,
        Termination::Signal(s) => Verdict::Crash { cause: CrashCause::Signal(s) },
        Termination::Exit(code) => match &outcome.markers.verdict {
            MarkerVerdict::Exc(name) if profile.is_filtered(name) => {
                Verdict::InvalidInput { exception: name.clone() }
            }
            MarkerVerdict::Exc(name) => Verdict::Crash { cause: CrashCause::RuntimeError(name.clone()) },
            MarkerVerdict::Ok if code == 0 => Verdict::Benign,
            MarkerVerdict::Ok => Verdict::Crash { cause: CrashCause::AbnormalExit(code) },
            MarkerVerdict::NoMarker if code == 0 || code == 1 => Verdict::InfraError {
                reason: format!("exit status {code} without a verdict marker"),
            },
            MarkerVerdict::NoMarker => Verdict::Crash { cause: CrashCause::AbnormalExit(code) },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-6, abs: 1e-9 }
    }
}

/// (absolute delta, relative delta, exceeds tolerance) for one element pair.
/// NaN equals NaN; the relative scale is the larger magnitude, which makes
/// the comparison symmetric.
fn element_delta(a: f64, b: f64, tol: Tolerance) -> (f64, f64, bool) {
    if a.is_nan() && b.is_nan() {
        return (0.0, 0.0, false);
    }
    if a.is_nan() || b.is_nan() {
        return (f64::INFINITY, f64::INFINITY, true);
    }
    if a == b {
        return (0.0, 0.0, false);
    }
    let d = (a - b).abs();
    let scale = a.abs().max(b.abs());
    let rel = if scale > 0.0 { d / scale } else { f64::INFINITY };
    let rel = if rel.is_nan() { f64::INFINITY } else { rel };
    let d = if d.is_nan() { f64::INFINITY } else { d };
    (d, rel, d > tol.abs.max(tol.rel * scale))
}

/// Differential oracle over two output summaries.
pub fn differential_summaries(a: &OutputSummary, b: &OutputSummary, tol: Tolerance) -> Verdict {
    let structural = a.shape != b.shape || a.dtype != b.dtype || a.count != b.count || a.head.len() != b.head.len();
    if structural {
        return Verdict::DiffMismatch { max_abs: f64::INFINITY, max_rel: f64::INFINITY };
    }
    let mut pairs: Vec<(f64, f64)> = a.head.iter().copied().zip(b.head.iter().copied()).collect();
    match (a.checksum, b.checksum) {
        (Some(x), Some(y)) => pairs.push((x, y)),
        (None, None) => {}
        _ => return Verdict::DiffMismatch { max_abs: f64::INFINITY, max_rel: f64::INFINITY },
    }
    let (mut max_abs, mut max_rel, mut mismatch) = (0.0f64, 0.0f64, false);
    for (x, y) in pairs {
        let (d, r, bad) = element_delta(x, y, tol);
        max_abs = max_abs.max(d);
        max_rel = max_rel.max(r);
        mismatch |= bad;
    }
    if mismatch {
        Verdict::DiffMismatch { max_abs, max_rel }
    } else {
        Verdict::Benign
    }
}

/// Differential oracle over two captured output blocks.
pub fn differential(a: &OutputBlock, b: &OutputBlock, tol: Tolerance) -> Result<Verdict, DiffError> {
    match (a, b) {
        (OutputBlock::Summary(x), OutputBlock::Summary(y)) => Ok(differential_summaries(x, y, tol)),
        (OutputBlock::Malformed(m), _) | (_, OutputBlock::Malformed(m)) => {
            Err(DiffError::IncomparableOutputs(m.clone()))
        }
        _ => Err(DiffError::IncomparableOutputs("missing output block".into())),
    }
}

pub trait Backend: Send + Sync {
    /// Whether `execute` needs the rendered script.
    fn needs_script(&self) -> bool;

    fn execute(
        &self,
        case: &GeneratedCase,
        device: &str,
        script: Option<&RenderedCase>,
    ) -> Result<ExecutionOutcome, ExecError>;
}

/// In-process backend over a simulated catalog.
#[derive(Debug, Clone)]
pub struct SimBackend {
    pub catalog: SimCatalog,
    pub timeout: Duration,
}

impl SimBackend {
    pub fn new(catalog: SimCatalog, timeout: Duration) -> Self {
        SimBackend { catalog, timeout }
    }
}

impl Backend for SimBackend {
    fn needs_script(&self) -> bool {
        false
    }

    fn execute(
        &self,
        case: &GeneratedCase,
        device: &str,
        _script: Option<&RenderedCase>,
    ) -> Result<ExecutionOutcome, ExecError> {
        let start = Instant::now();
        let result = self.catalog.invoke(&case.input.api_name, &case.input.params, device)?;
        let mut stdout = String::new();
        let mut stderr = String::new();
        let termination = match result {
            SimResult::Output(summary) => {
                stdout.push_str(&format!("{VERDICT_PREFIX}OK\n{OUT_BEGIN}\n{}\n{OUT_END}\n", summary.to_block()));
                Termination::Exit(0)
            }
            SimResult::Raised { exception, message } => {
                stderr.push_str(&format!("{exception}: {message}\n"));
                stdout.push_str(&format!("{VERDICT_PREFIX}EXC:{exception}\n"));
                Termination::Exit(0)
            }
            SimResult::Fault { bug_id, kind, frame } => {
                stderr.push_str(&format!("planted fault {bug_id}\n#0 {frame}\n"));
                match kind {
                    FaultKind::Segfault => Termination::Signal(SIGSEGV),
                    FaultKind::Abort => Termination::Signal(SIGABRT),
                    FaultKind::Hang => Termination::TimedOut,
                    FaultKind::WrongOutput => unreachable!("wrong output is returned as output"),
                }
            }
        };
        let wall_time_ms = if termination == Termination::TimedOut {
            self.timeout.as_millis() as u64
        } else {
            start.elapsed().as_millis() as u64
        };
        let stdout = stdout.into_bytes();
        Ok(ExecutionOutcome {
            case_id: case.case_id.clone(),
            device: device.to_string(),
            termination,
            markers: parse_markers(&stdout),
            stdout,
            stderr: stderr.into_bytes(),
            wall_time_ms,
        })
    }
}

/// Environment variables passed through to scripted children.
pub fn default_env_allowlist() -> Vec<String> {
    ["PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "PYTHONHASHSEED", "VIRTUAL_ENV", "SYSTEMROOT", "TMPDIR"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Child-process backend: `<runner> [runner_args..] <script-path>`.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub runner: PathBuf,
    pub runner_args: Vec<String>,
    pub workdir: PathBuf,
    pub timeout: Duration,
    /// Address-space cap for the child, in bytes.
    pub mem_limit: Option<u64>,
    pub env_allow: Vec<String>,
    /// Bytes kept per stream; the rest is drained and dropped.
    pub max_output: usize,
    pub keep_artifacts: bool,
    /// Try to detach the child from the network (needs a user namespace or
    /// privileges; failure is tolerated).
    pub isolate_network: bool,
}

impl ScriptedBackend {
    pub fn new(runner: impl Into<PathBuf>, workdir: impl Into<PathBuf>, timeout: Duration) -> Self {
        ScriptedBackend {
            runner: runner.into(),
            runner_args: Vec::new(),
            workdir: workdir.into(),
            timeout,
            mem_limit: Some(4 << 30),
            env_allow: default_env_allowlist(),
            max_output: 1 << 20,
            keep_artifacts: false,
            isolate_network: true,
        }
    }

    /// Fails with an infrastructure error when the runner cannot be found or
    /// the work directory cannot be created.
    pub fn check(&self) -> Result<(), ExecError> {
        fs::create_dir_all(&self.workdir)
            .map_err(|e| ExecError::Infra(format!("work dir {}: {e}", self.workdir.display())))?;
        if self.runner.components().count() > 1 {
            if !self.runner.exists() {
                return Err(ExecError::Infra(format!("runner {} not found", self.runner.display())));
            }
        } else if find_in_path(&self.runner).is_none() {
            return Err(ExecError::Infra(format!("runner {} not on PATH", self.runner.display())));
        }
        Ok(())
    }
}

fn find_in_path(name: &Path) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join(name)).find(|p| p.is_file())
}

fn drain_capped(mut r: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

#[cfg(unix)]
fn sandbox(cmd: &mut Command, mem_limit: Option<u64>, isolate_network: bool) {
    use std::os::unix::process::CommandExt;
    // SAFETY: only async-signal-safe libc calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(io::Error::last_os_error());
            }
            if let Some(bytes) = mem_limit {
                let lim = libc::rlimit { rlim_cur: bytes as libc::rlim_t, rlim_max: bytes as libc::rlim_t };
                libc::setrlimit(libc::RLIMIT_AS, &lim);
            }
            // Keep core dumps out of the work directory.
            let zero = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
            libc::setrlimit(libc::RLIMIT_CORE, &zero);
            #[cfg(target_os = "linux")]
            if isolate_network {
                libc::unshare(libc::CLONE_NEWNET);
            }
            #[cfg(not(target_os = "linux"))]
            let _ = isolate_network;
            Ok(())
        });
    }
}

#[cfg(unix)]
fn kill_group(pid: u32) {
    // SAFETY: plain syscall; the child leads its own process group.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

#[cfg(unix)]
fn termination_of(status: std::process::ExitStatus) -> Termination {
    use std::os::unix::process::ExitStatusExt;
    match (status.signal(), status.code()) {
        (Some(s), _) => Termination::Signal(s),
        (None, Some(c)) => Termination::Exit(c),
        (None, None) => Termination::Exit(-1),
    }
}

impl Backend for ScriptedBackend {
    fn needs_script(&self) -> bool {
        true
    }

    fn execute(
        &self,
        case: &GeneratedCase,
        device: &str,
        script: Option<&RenderedCase>,
    ) -> Result<ExecutionOutcome, ExecError> {
        let script = script.ok_or_else(|| ExecError::Infra("scripted backend needs a rendered script".into()))?;
        let script_path = script
            .write_to(&self.workdir)
            .map_err(|e| ExecError::Infra(format!("writing script: {e}")))?;
        let case_dir = self.workdir.join(format!("{}.{}.d", script.case_id, device));
        fs::create_dir_all(&case_dir).map_err(|e| ExecError::Infra(format!("case dir: {e}")))?;
        let script_abs = fs::canonicalize(&script_path)?;

        let mut cmd = Command::new(&self.runner);
        cmd.args(&self.runner_args)
            .arg(&script_abs)
            .current_dir(&case_dir)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for key in &self.env_allow {
            if let Some(v) = std::env::var_os(key) {
                cmd.env(key, v);
            }
        }
        cmd.env("ORION_DEVICE", device);
        #[cfg(unix)]
        sandbox(&mut cmd, self.mem_limit, self.isolate_network);

        let start = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| ExecError::Infra(format!("spawning {}: {e}", self.runner.display())))?;
        let out = drain_capped(child.stdout.take().expect("piped stdout"), self.max_output);
        let err = drain_capped(child.stderr.take().expect("piped stderr"), self.max_output);

        let mut poll = Duration::from_millis(1);
        let termination = loop {
            if let Some(status) = child.try_wait()? {
                break termination_of(status);
            }
            if start.elapsed() >= self.timeout {
                kill_group(child.id());
                let _ = child.kill();
                let _ = child.wait();
                break Termination::TimedOut;
            }
            thread::sleep(poll);
            poll = (poll * 2).min(Duration::from_millis(20));
        };
        // Stragglers in the group would hold the pipes open.
        kill_group(child.id());
        let wall_time_ms = start.elapsed().as_millis() as u64;
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();

        if !self.keep_artifacts {
            let _ = fs::remove_dir_all(&case_dir);
            let _ = fs::remove_file(&script_path);
        }
        Ok(ExecutionOutcome {
            case_id: case.case_id.clone(),
            device: device.to_string(),
            termination,
            markers: parse_markers(&stdout),
            stdout,
            stderr,
            wall_time_ms,
        })
    }
}
