//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Expected values are computed here from first principles (constant tables,
//! set arithmetic, the catalog's declared trigger classes) rather than by
//! calling the library's own helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orion_core::codegen::{parse_markers, OutputSummary, TargetProfile};
use orion_core::exec::{
    classify, differential_summaries, CrashCause, ExecutionOutcome, SimBackend, Termination, Tolerance, Verdict,
};
use orion_core::fuzz::{evaluate_case, run_campaign, CampaignConfig, CampaignReport, GeneratedCase};
use orion_core::kb::{apply_exclusions, classify as classify_report, DropReason, ExclusionPolicy, KeywordTaxonomy, ReportRecord, VulnCategory};
use orion_core::rules::{apply, RuleId};
use orion_core::sim::{FaultKind, SimCatalog};
use orion_core::store::SeedStore;
use orion_core::value::{
    CornerCaseKind as K, CornerConfig, DType, Fill, Param, Scalar, Source, TensorValue, TestInput, Value,
};

// Corner constants, restated.
const LARGE_INT: i64 = 1 << 62;
const LARGE_REAL: f64 = 1e38;
const LARGE_EXTENT: i64 = 1 << 31;
const NEG: i64 = -(1 << 31);
const MASTER_SEED: u64 = 20_240_917;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- inputs

const DTYPES: [DType; 11] = [
    DType::Float16,
    DType::Float32,
    DType::Float64,
    DType::Int8,
    DType::Int16,
    DType::Int32,
    DType::Int64,
    DType::Uint8,
    DType::Bool,
    DType::Complex64,
    DType::String,
];

fn inexact(d: DType) -> bool {
    matches!(d, DType::Float16 | DType::Float32 | DType::Float64 | DType::Complex64)
}

fn rand_tensor(rng: &mut ChaCha8Rng, min_rank: usize, numeric_only: bool) -> TensorValue {
    let rank = rng.gen_range(min_rank..=4);
    let shape = (0..rank).map(|_| rng.gen_range(1..=6)).collect();
    let pool: Vec<DType> = DTYPES.iter().copied().filter(|d| !numeric_only || *d != DType::String).collect();
    let dtype = *pool.choose(rng).unwrap();
    let fill = match dtype {
        DType::String => Fill::Const(Scalar::Str(b"ab".to_vec())),
        DType::Bool => Fill::Const(Scalar::Bool(rng.gen())),
        d if inexact(d) && rng.gen_bool(0.3) => Fill::Uniform { low: -1.0, high: 1.0, seed: rng.gen() },
        d if inexact(d) => Fill::Const(Scalar::Real(rng.gen_range(-10.0..10.0))),
        _ => Fill::Const(Scalar::Int(rng.gen_range(-10..10))),
    };
    TensorValue { fill, shape, dtype }
}

fn rand_int_list(rng: &mut ChaCha8Rng, min_len: usize) -> Vec<Value> {
    (0..rng.gen_range(min_len..=5)).map(|_| Value::int(rng.gen_range(-4..12))).collect()
}

fn rand_mixed_list(rng: &mut ChaCha8Rng) -> Vec<Value> {
    (0..rng.gen_range(1..=5))
        .map(|_| if rng.gen_bool(0.5) { Value::int(rng.gen_range(-9..9)) } else { Value::real(rng.gen_range(-9.0..9.0)) })
        .collect()
}

fn p(name: &str, pos: usize, v: Value) -> Param {
    Param::new(name, pos, v)
}

/// A random argument list and target indices the rule applies to.
fn rule_input(rule: RuleId, rng: &mut ChaCha8Rng) -> (Vec<Param>, Vec<usize>) {
    let t = |rng: &mut ChaCha8Rng, min_rank| Value::Tensor(rand_tensor(rng, min_rank, false));
    match rule {
        RuleId::R1 => (vec![p("a", 0, t(rng, 0)), p("b", 1, t(rng, 0))], vec![0, 1]),
        RuleId::R2 => (vec![p("x", 0, t(rng, 0)), p("axis", 1, Value::int(rng.gen_range(-3..6)))], vec![0, 1]),
        RuleId::R3 => (vec![p("x", 0, t(rng, 0)), p("perm", 1, Value::list(rand_int_list(rng, 0)))], vec![0, 1]),
        RuleId::R4 => (vec![p("x", 0, t(rng, 0)), p("idx", 1, Value::list(rand_int_list(rng, 0)))], vec![0, 1]),
        RuleId::R5 => (
            vec![p("a", 0, Value::list(rand_int_list(rng, 0))), p("b", 1, Value::list(rand_int_list(rng, 0)))],
            vec![0, 1],
        ),
        RuleId::R6 => (vec![p("x", 0, Value::Tensor(rand_tensor(rng, 0, true)))], vec![0]),
        RuleId::R7 | RuleId::R8 => (vec![p("x", 0, t(rng, 1))], vec![0]),
        RuleId::R9 | RuleId::R10 => (vec![p("x", 0, t(rng, 0))], vec![0]),
        RuleId::R11 => {
            let v = if rng.gen_bool(0.5) { Value::int(rng.gen_range(-9..9)) } else { Value::real(rng.gen_range(-9.0..9.0)) };
            (vec![p("n", 0, v)], vec![0])
        }
        RuleId::R12 => (vec![p("flag", 0, Value::boolean(rng.gen()))], vec![0]),
        RuleId::R13 => (vec![p("s", 0, Value::string("hello"))], vec![0]),
        RuleId::R14 => (vec![p("l", 0, Value::list(rand_mixed_list(rng)))], vec![0]),
    }
}

// ------------------------------------------------------------ oracles

fn index_set(t: &TensorValue) -> BTreeSet<i64> {
    let mut s: BTreeSet<i64> = (0..=t.shape.len() as i64).collect();
    s.extend(&t.shape);
    s
}

fn same_real(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

/// Expected element when an element shaped like `template` is replaced.
fn expected_element(kind: K, template_real: bool) -> Option<Value> {
    Some(match (kind, template_real) {
        (K::Large, true) => Value::real(LARGE_REAL),
        (K::Large, false) => Value::int(LARGE_INT),
        (K::Zero, true) => Value::real(0.0),
        (K::Zero, false) => Value::int(0),
        (K::Negative, true) => Value::real(NEG as f64),
        (K::Negative, false) => Value::int(NEG),
        (K::NaN, _) => Value::real(f64::NAN),
        (K::NoneKind, _) => Value::None,
        (K::NonAscii, _) => Value::string("\u{1F600}".repeat(8)),
        (K::Empty, _) => return None,
    })
}

fn value_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Real { value: x }, Value::Real { value: y }) => same_real(*x, *y),
        _ => a == b,
    }
}

fn expected_fill(kind: K, dtype: DType) -> Option<Scalar> {
    let ix = inexact(dtype);
    Some(match kind {
        K::Large if ix => Scalar::Real(LARGE_REAL),
        K::Large => Scalar::Int(LARGE_INT),
        K::Zero if ix => Scalar::Real(0.0),
        K::Zero => Scalar::Int(0),
        K::Negative if ix => Scalar::Real(NEG as f64),
        K::Negative => Scalar::Int(NEG),
        K::NaN if ix => Scalar::Real(f64::NAN),
        _ => return None,
    })
}

fn postcondition(rule: RuleId, before: &[Param], after: &[Param], kind: Option<K>) -> Result<(), String> {
    let tb = |i: usize| before[i].value.as_tensor().unwrap();
    let ta = |i: usize| after[i].value.as_tensor().ok_or("expected tensor".to_string());
    let la = |i: usize| after[i].value.as_list().ok_or("expected list".to_string());
    let lb = |i: usize| before[i].value.as_list().unwrap();
    match rule {
        RuleId::R1 => {
            let (a, b) = (ta(0)?, ta(1)?);
            ensure(a.shape != b.shape, || format!("shapes equal: {:?}", a.shape))
        }
        RuleId::R2 => {
            let v = after[1].value.as_int().ok_or("axis not int")?;
            ensure(!index_set(tb(0)).contains(&v), || format!("{v} inside index set"))
        }
        RuleId::R3 => {
            let l = la(1)?;
            ensure(l.len() != tb(0).shape.len(), || format!("len {} equals rank", l.len()))
        }
        RuleId::R4 => {
            let (old, new, valid) = (lb(1), la(1)?, index_set(tb(0)));
            let bad = |v: &Value| v.as_int().is_some_and(|x| !valid.contains(&x));
            if old.is_empty() {
                ensure(new.len() == 1 && bad(&new[0]), || format!("{new:?}"))
            } else {
                ensure(new.len() == old.len(), || "length changed".into())?;
                let ok = (0..new.len()).any(|i| bad(&new[i]) && (0..new.len()).all(|j| j == i || new[j] == old[j]));
                ensure(ok, || format!("no single out-of-set replacement: {old:?} -> {new:?}"))
            }
        }
        RuleId::R5 => ensure(la(0)?.len() != la(1)?.len(), || "lengths equal".into()),
        RuleId::R6 => {
            let (t0, t1) = (tb(0), ta(0)?);
            let k = kind.ok_or("no kind recorded")?;
            let want = expected_fill(k, t0.dtype).ok_or(format!("kind {k:?} illegal for {:?}", t0.dtype))?;
            let got = match &t1.fill {
                Fill::Const(s) => s.clone(),
                f => return Err(format!("fill not constant: {f:?}")),
            };
            let eq = match (&got, &want) {
                (Scalar::Real(x), Scalar::Real(y)) => same_real(*x, *y),
                _ => got == want,
            };
            ensure(eq && t1.shape == t0.shape && t1.dtype == t0.dtype, || format!("{got:?} != {want:?}"))
        }
        RuleId::R7 | RuleId::R8 => {
            let (t0, t1) = (tb(0), ta(0)?);
            let want = match kind.ok_or("no kind recorded")? {
                K::Large => LARGE_EXTENT,
                K::Zero => 0,
                K::Negative => NEG,
                k => return Err(format!("kind {k:?} is not a shape corner")),
            };
            let idx = if rule == RuleId::R7 { 0 } else { t0.shape.len() - 1 };
            let mut expect = t0.shape.clone();
            expect[idx] = want;
            ensure(t1.shape == expect && t1.fill == t0.fill, || format!("{:?} != {expect:?}", t1.shape))
        }
        RuleId::R9 => {
            let (t0, t1) = (tb(0), ta(0)?);
            ensure(t1.shape.is_empty() && t1.fill == t0.fill && t1.dtype == t0.dtype, || format!("{t1:?}"))
        }
        RuleId::R10 => {
            let t1 = ta(0)?;
            ensure(t1.shape.len() == 2 && t1.shape.iter().all(|e| (2..=8).contains(e)), || format!("{:?}", t1.shape))
        }
        RuleId::R11 => {
            let real = matches!(before[0].value, Value::Real { .. });
            let k = kind.ok_or("no kind recorded")?;
            let want = match k {
                K::Empty => Value::string(""),
                k => expected_element(k, real).unwrap(),
            };
            ensure(value_eq(&after[0].value, &want), || format!("{:?} != {want:?}", after[0].value))
        }
        RuleId::R12 => {
            let want = match kind.ok_or("no kind recorded")? {
                K::Large => LARGE_INT,
                K::Negative => NEG,
                k => return Err(format!("kind {k:?} is not a boolean corner")),
            };
            ensure(after[0].value == Value::int(want), || format!("{:?}", after[0].value))
        }
        RuleId::R13 => {
            let want = match kind.ok_or("no kind recorded")? {
                K::Empty => Value::string(""),
                K::NonAscii => Value::string("\u{1F600}".repeat(8)),
                k => return Err(format!("kind {k:?} is not a string corner")),
            };
            ensure(after[0].value == want, || format!("{:?}", after[0].value))
        }
        RuleId::R14 => {
            let (old, new) = (lb(0), la(0)?);
            let k = kind.ok_or("no kind recorded")?;
            if k == K::Empty {
                return ensure(new.is_empty(), || format!("{new:?}"));
            }
            ensure(new.len() == old.len(), || "length changed".into())?;
            let ok = (0..new.len()).any(|i| {
                let real = matches!(old[i], Value::Real { .. });
                value_eq(&new[i], &expected_element(k, real).unwrap())
                    && (0..new.len()).all(|j| j == i || value_eq(&new[j], &old[j]))
            });
            ensure(ok, || format!("{old:?} -> {new:?} under {k:?}"))
        }
    }
}

fn criterion_rule_postconditions() -> Check {
    const N: usize = 10_000;
    let start = Instant::now();
    let cfg = CornerConfig::default();
    let mut kinds_seen: BTreeMap<RuleId, BTreeSet<K>> = BTreeMap::new();
    for rule in RuleId::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(rule.number() as u64);
        for i in 0..N {
            let (params, targets) = rule_input(rule, &mut rng);
            let (out, note) = apply(rule, &params, &targets, rng.gen(), &cfg)
                .map_err(|e| format!("{rule} application {i}: {e}"))?;
            if let Some(k) = note.kind {
                kinds_seen.entry(rule).or_default().insert(k);
            }
            postcondition(rule, &params, &out, note.kind).map_err(|e| format!("{rule} application {i}: {e}"))?;
        }
    }
    // Every corner rule must exercise its whole kind family.
    let expect: [(RuleId, &[K]); 8] = [
        (RuleId::R6, &[K::Large, K::Zero, K::Negative, K::NaN]),
        (RuleId::R7, &[K::Large, K::Zero, K::Negative]),
        (RuleId::R8, &[K::Large, K::Zero, K::Negative]),
        (RuleId::R11, &[K::Large, K::Zero, K::Negative, K::NaN, K::NoneKind, K::Empty, K::NonAscii]),
        (RuleId::R12, &[K::Large, K::Negative]),
        (RuleId::R13, &[K::Empty, K::NonAscii]),
        (RuleId::R14, &[K::Large, K::Zero, K::Negative, K::NaN, K::NoneKind, K::Empty, K::NonAscii]),
        (RuleId::R9, &[]),
    ];
    for (rule, kinds) in expect {
        let seen = kinds_seen.get(&rule).cloned().unwrap_or_default();
        let want: BTreeSet<K> = kinds.iter().copied().collect();
        ensure(seen == want, || format!("{rule}: kinds {seen:?} != {want:?}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("14 rules x {N} applications, 0 failures, {:.2}s", elapsed.as_secs_f64()))
}

// ------------------------------------------------------------ campaigns

fn sim_store(cat: &SimCatalog) -> SeedStore {
    SeedStore::in_memory(cat.seed_catalog())
}

fn sim_campaign(rules: BTreeSet<RuleId>, num_iter: u64, workers: usize) -> CampaignReport {
    let cat = SimCatalog::default();
    let config = CampaignConfig { rules, num_iter, workers, master_seed: MASTER_SEED, ..CampaignConfig::default() };
    let backend = SimBackend::new(cat.clone(), config.timeout());
    run_campaign(&config, &sim_store(&cat), &backend, &TargetProfile::generic_python()).expect("campaign runs")
}

/// Planted bug ids a report detected, matched from first principles: a crash
/// or hang whose top frame is the bug's frame and whose verdict matches the
/// fault kind, or a device mismatch on the API carrying a wrong-output bug.
/// Findings that match no bug are returned separately.
fn detected(report: &CampaignReport) -> (BTreeSet<String>, Vec<String>) {
    let cat = SimCatalog::default();
    let mut hit = BTreeSet::new();
    let mut stray = Vec::new();
    for f in &report.findings {
        let m = cat.bugs().find(|(api, bug)| {
            api.api_name == f.api_name
                && match (&f.verdict, bug.fault) {
                    (Verdict::Crash { cause: CrashCause::Signal(11) }, FaultKind::Segfault)
                    | (Verdict::Crash { cause: CrashCause::Signal(6) }, FaultKind::Abort)
                    | (Verdict::Hang, FaultKind::Hang) => {
                        f.top_frame.as_deref() == Some(format!("#0 {}", bug.frame).as_str())
                    }
                    (Verdict::DiffMismatch { .. }, FaultKind::WrongOutput) => true,
                    _ => false,
                }
        });
        match m {
            Some((_, bug)) => {
                hit.insert(bug.bug_id.clone());
            }
            None => stray.push(format!("{} {:?}", f.api_name, f.verdict)),
        }
    }
    (hit, stray)
}

fn criterion_detection() -> Check {
    let start = Instant::now();
    let full = sim_campaign(RuleId::ALL.into_iter().collect(), 1000, 0);
    let (hit, stray) = detected(&full);
    let all: BTreeSet<String> = SimCatalog::default().bugs().map(|(_, b)| b.bug_id.clone()).collect();
    ensure(all.len() == 12, || format!("catalog has {} bugs", all.len()))?;
    let missing: Vec<_> = all.difference(&hit).collect();
    ensure(missing.is_empty(), || format!("missed {missing:?}"))?;
    ensure(stray.is_empty(), || format!("findings matching no planted bug: {stray:?}"))?;
    ensure(full.exit_code() == 2, || "exit code should flag findings".into())?;

    let baseline = sim_campaign(BTreeSet::new(), 1000, 0);
    ensure(baseline.findings.is_empty(), || format!("baseline found {}", baseline.findings.len()))?;
    ensure(baseline.exit_code() == 0, || "baseline exit code".into())?;

    // Per-rule table: a row for every rule, every rule exercised, and every
    // rule family with a planted bug credited with a finding.
    for rule in RuleId::ALL {
        let row = full.per_rule_counts.get(&rule).ok_or(format!("no row for {rule}"))?;
        ensure(row.cases > 0, || format!("{rule} generated no cases"))?;
    }
    let families: BTreeSet<RuleId> =
        SimCatalog::default().bugs().flat_map(|(_, b)| b.rule_class.clone()).collect();
    for rule in &families {
        ensure(full.per_rule_counts[rule].findings > 0, || format!("{rule} credited with no finding"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "full: {}/12 bugs ({} findings); baseline: 0 findings; {} rule families credited; {:.1}s",
        hit.len(),
        full.findings.len(),
        families.len(),
        elapsed.as_secs_f64()
    ))
}

fn criterion_ablation() -> Check {
    let cat = SimCatalog::default();
    let mut summary = Vec::new();
    for rule in RuleId::ALL {
        let report = sim_campaign(BTreeSet::from([rule]), 1000, 0);
        let (hit, stray) = detected(&report);
        let want: BTreeSet<String> =
            cat.bugs().filter(|(_, b)| b.rule_class.contains(&rule)).map(|(_, b)| b.bug_id.clone()).collect();
        ensure(stray.is_empty(), || format!("{rule}: stray findings {stray:?}"))?;
        ensure(hit == want, || format!("{rule}: found {hit:?}, expected {want:?}"))?;
        for f in &report.findings {
            ensure(f.attribution == vec![rule], || format!("{rule}: attribution {:?}", f.attribution))?;
        }
        summary.push(format!("{rule}:{}", hit.len()));
    }
    Ok(summary.join(" "))
}

// ------------------------------------------------------------ oracles

fn outcome(termination: Termination, stdout: &str) -> ExecutionOutcome {
    ExecutionOutcome {
        case_id: "fixture".into(),
        device: "cpu".into(),
        termination,
        stdout: stdout.as_bytes().to_vec(),
        stderr: Vec::new(),
        wall_time_ms: 1,
        markers: parse_markers(stdout.as_bytes()),
    }
}

fn criterion_oracle_table() -> Check {
    let ok_block = "ORION::OK\nORION-OUT-BEGIN\nshape=[1]\n[1.0]\nORION-OUT-END\n";
    let fixtures: Vec<(&str, ExecutionOutcome, Verdict)> = vec![
        ("signal kill", outcome(Termination::Signal(11), ""), Verdict::Crash { cause: CrashCause::Signal(11) }),
        ("signal kill after OK", outcome(Termination::Signal(9), ok_block), Verdict::Crash { cause: CrashCause::Signal(9) }),
        ("abort", outcome(Termination::Signal(6), ""), Verdict::Crash { cause: CrashCause::Signal(6) }),
        (
            "filtered ValueError",
            outcome(Termination::Exit(0), "ORION::EXC:ValueError\n"),
            Verdict::InvalidInput { exception: "ValueError".into() },
        ),
        (
            "filtered InvalidArgumentError",
            outcome(Termination::Exit(0), "noise\nORION::EXC:InvalidArgumentError\n"),
            Verdict::InvalidInput { exception: "InvalidArgumentError".into() },
        ),
        (
            "unfiltered exception",
            outcome(Termination::Exit(0), "ORION::EXC:RuntimeError\n"),
            Verdict::Crash { cause: CrashCause::RuntimeError("RuntimeError".into()) },
        ),
        (
            "unfiltered exception",
            outcome(Termination::Exit(0), "ORION::EXC:IndexError\n"),
            Verdict::Crash { cause: CrashCause::RuntimeError("IndexError".into()) },
        ),
        ("timeout", outcome(Termination::TimedOut, ""), Verdict::Hang),
        ("timeout after output", outcome(Termination::TimedOut, ok_block), Verdict::Hang),
        ("clean exit", outcome(Termination::Exit(0), ok_block), Verdict::Benign),
    ];
    let profiles = [TargetProfile::generic_python(), TargetProfile::tensorflow(), TargetProfile::pytorch()];
    let mut n = 0;
    for profile in &profiles {
        for (label, o, want) in &fixtures {
            let got = classify(o, profile);
            ensure(&got == want, || format!("{} / {label}: {got:?} != {want:?}", profile.name))?;
            n += 1;
        }
    }
    Ok(format!("{n}/{n} fixtures across {} profiles", profiles.len()))
}

fn rand_summary(rng: &mut ChaCha8Rng) -> OutputSummary {
    let len = rng.gen_range(0..6);
    let pick = |rng: &mut ChaCha8Rng| match rng.gen_range(0..10) {
        0 => f64::NAN,
        1 => f64::INFINITY,
        2 => f64::NEG_INFINITY,
        3 => 0.0,
        _ => rng.gen_range(-1e3..1e3),
    };
    let head: Vec<f64> = (0..len).map(|_| pick(rng)).collect();
    OutputSummary {
        shape: if rng.gen_bool(0.9) { Some(vec![len as i64]) } else { Some(vec![len as i64, 1]) },
        dtype: Some(if rng.gen_bool(0.95) { "float32" } else { "float64" }.into()),
        count: Some(len as u64),
        checksum: if rng.gen_bool(0.8) { Some(head.iter().filter(|x| x.is_finite()).sum()) } else { None },
        head,
    }
}

/// A copy of `a` with small random perturbations.
fn perturb(a: &OutputSummary, rng: &mut ChaCha8Rng) -> OutputSummary {
    let mut b = a.clone();
    for x in &mut b.head {
        if rng.gen_bool(0.3) {
            *x += x.abs().max(1.0) * [1e-12, 1e-7, 1e-5, 1.0][rng.gen_range(0..4)];
        }
    }
    b
}

fn criterion_differential() -> Check {
    let cat = SimCatalog::default();
    let tol = Tolerance::default();
    let backend = SimBackend::new(cat.clone(), Duration::from_secs(30));
    let profile = TargetProfile::generic_python();
    let devices = vec!["cpu".to_string(), cat.divergent_device.clone()];
    let case = |api: &str, params: Vec<Param>| GeneratedCase {
        case_id: "diff".into(),
        api_name: api.into(),
        seed_id: "s".into(),
        iteration: 0,
        input: TestInput { api_name: api.into(), params, source: Source::Synthetic, record_id: "s".into() },
        notes: Vec::new(),
    };

    // Divergence-planted API, driven into its divergent branch.
    let (_, bug) = cat.bugs().find(|(_, b)| b.fault == FaultKind::WrongOutput).ok_or("no divergence bug")?;
    let api = cat.bugs().find(|(_, b)| b.bug_id == bug.bug_id).unwrap().0;
    let scalar = vec![Param::new(
        "input",
        0,
        Value::Tensor(TensorValue::constant(Scalar::Real(1.0), vec![], DType::Float32)),
    )];
    let r = evaluate_case(&case(&api.api_name, scalar), &backend, &profile, &devices, tol);
    let delta = match r.verdict {
        Verdict::DiffMismatch { max_abs, .. } => max_abs,
        v => return Err(format!("divergent case gave {v:?}")),
    };
    ensure(delta > tol.abs.max(tol.rel * 1.0), || format!("delta {delta} within tolerance"))?;

    // Every shipped seed produces identical output on both devices.
    let mut benign = 0;
    for api in &cat.apis {
        for seed in &api.seeds {
            let r = evaluate_case(&case(&api.api_name, seed.clone()), &backend, &profile, &devices, tol);
            ensure(r.verdict == Verdict::Benign, || format!("{}: {:?}", api.api_name, r.verdict))?;
            benign += 1;
        }
    }

    // Symmetry over random pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut mismatches = 0;
    for i in 0..1000 {
        let a = rand_summary(&mut rng);
        let b = if rng.gen_bool(0.7) { perturb(&a, &mut rng) } else { rand_summary(&mut rng) };
        let tol = Tolerance { rel: [0.0, 1e-6, 1e-3][i % 3], abs: [0.0, 1e-9][i % 2] };
        let (ab, ba) = (differential_summaries(&a, &b, tol), differential_summaries(&b, &a, tol));
        let same = match (&ab, &ba) {
            (Verdict::DiffMismatch { max_abs: x1, max_rel: y1 }, Verdict::DiffMismatch { max_abs: x2, max_rel: y2 }) => {
                same_real(*x1, *x2) && same_real(*y1, *y2)
            }
            _ => ab == ba,
        };
        ensure(same, || format!("pair {i}: {ab:?} vs {ba:?}"))?;
        if matches!(ab, Verdict::DiffMismatch { .. }) {
            mismatches += 1;
        }
        ensure(differential_summaries(&a, &a, tol) == Verdict::Benign, || format!("pair {i}: self mismatch"))?;
    }
    ensure(mismatches > 0 && mismatches < 1000, || format!("degenerate fixture: {mismatches} mismatches"))?;
    Ok(format!(
        "divergent delta {delta:.1e} > tol; {benign} seeds benign; 1000 pairs symmetric ({mismatches} mismatching)"
    ))
}

fn criterion_replay() -> Check {
    let rules: BTreeSet<RuleId> = RuleId::ALL.into_iter().collect();
    let a = sim_campaign(rules.clone(), 200, 0);
    let b = sim_campaign(rules.clone(), 200, 0);
    let c = sim_campaign(rules, 200, 1);
    let bytes = |r: &CampaignReport| {
        let fps: Vec<(String, u64)> = r.findings.iter().map(|f| (f.fingerprint.clone(), f.count)).collect();
        serde_json::to_vec(&fps).unwrap()
    };
    ensure(!a.findings.is_empty(), || "no findings to compare".into())?;
    ensure(bytes(&a) == bytes(&b), || "two identical runs differ".into())?;
    ensure(bytes(&a) == bytes(&c), || "worker count changed the findings".into())?;
    ensure(a.findings == b.findings, || "finding records differ".into())?;
    Ok(format!("{} fingerprints identical across 3 runs (1 and N workers)", a.findings.len()))
}

// ------------------------------------------------------------ kb-ingest

const MEMORY: [&str; 6] = [
    "buffer overflow",
    "integer overflow",
    "integer underflow",
    "heap buffer overflow",
    "stack overflow",
    "null pointer dereference",
];
const LOGICAL: [&str; 7] = [
    "wrong result",
    "unexpected output",
    "incorrect calculation",
    "inconsistent behavior",
    "unexpected behavior",
    "incorrect logic",
    "wrong calculation",
];
const PERFORMANCE: [&str; 10] = [
    "slow",
    "high CPU usage",
    "high memory usage",
    "poor performance",
    "slow response time",
    "performance bottleneck",
    "performance optimization",
    "resource usage",
    "race condition",
    "memory leak",
];

fn report(id: &str, title: &str, body: &str) -> ReportRecord {
    ReportRecord { id: id.into(), title: title.into(), body: body.into(), ..ReportRecord::default() }
}

fn criterion_kb() -> Check {
    let tax = KeywordTaxonomy::default();
    let templates = [
        ("{} when calling the op with a large tensor", ""),
        ("", "Running the snippet below leads to {} on the second call."),
        ("Bug: {}", "see attached log"),
    ];
    let mut n = 0;
    for (cat, words) in [
        (VulnCategory::Memory, &MEMORY[..]),
        (VulnCategory::Logical, &LOGICAL[..]),
        (VulnCategory::Performance, &PERFORMANCE[..]),
    ] {
        for w in words {
            for (i, (t, b)) in templates.iter().enumerate() {
                let upper = if i == 1 { w.to_uppercase() } else { w.to_string() };
                let r = report(&format!("{w}-{i}"), &t.replace("{}", &upper), &b.replace("{}", &upper));
                let got = classify_report(&r, &tax);
                ensure(got == BTreeSet::from([cat]), || format!("`{w}` (template {i}) -> {got:?}"))?;
                n += 1;
            }
        }
    }
    let unrelated = report("u", "Docs typo in README", "The example has a misspelled word.");
    ensure(classify_report(&unrelated, &tax).is_empty(), || "unrelated report classified".into())?;

    let policy = ExclusionPolicy::default();
    let base = |id: &str| report(id, "heap buffer overflow in op", "segfault with a crafted tensor");
    let mut labeled: Vec<(ReportRecord, Option<DropReason>)> = Vec::new();
    for plat in ["Windows", "android", "iOS"] {
        let mut r = base(plat);
        r.platforms = vec![plat.into()];
        labeled.push((r, Some(DropReason::Platform)));
    }
    for label in ["module: build", "configuration", "topic: installation"] {
        let mut r = base(label);
        r.labels = vec![label.into()];
        labeled.push((r, Some(DropReason::Build)));
    }
    for lib in ["torchvision", "module: torchaudio"] {
        let mut r = base(lib);
        r.labels = vec![lib.into()];
        labeled.push((r, Some(DropReason::External)));
    }
    let mut r = base("no-input");
    r.no_input = true;
    labeled.push((r, Some(DropReason::NoInput)));
    for (id, labels, plats) in [
        ("kept-1", vec!["module: nn"], vec!["linux"]),
        ("kept-2", vec!["high priority", "security"], vec![]),
        ("kept-3", vec!["module: rebuild-cache"], vec!["macos"]),
    ] {
        let mut r = base(id);
        r.labels = labels.into_iter().map(String::from).collect();
        r.platforms = plats.into_iter().map(String::from).collect();
        labeled.push((r, None));
    }
    let mut categories = BTreeSet::new();
    for (r, want) in &labeled {
        let got = apply_exclusions(r, &policy);
        ensure(&got == want, || format!("{}: {got:?} != {want:?}", r.id))?;
        if let Some(d) = got {
            categories.insert(d);
        }
    }
    ensure(categories.len() == 4, || format!("exclusion categories exercised: {categories:?}"))?;
    Ok(format!("{n} keyword sentences, 0 false negatives; {} labeled reports, 4 exclusion categories", labeled.len()))
}

// ------------------------------------------------------------ harness

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 7] = [
        ("rule post-conditions", criterion_rule_postconditions),
        ("detection experiment", criterion_detection),
        ("ablation exactness", criterion_ablation),
        ("oracle classification table", criterion_oracle_table),
        ("differential oracle", criterion_differential),
        ("replay determinism", criterion_replay),
        ("kb-ingest classification and exclusion", criterion_kb),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|w| name.contains(w.as_str())) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
