//! The scripted backend against real child processes: a mock Python module
//! whose functions return, raise, hang, or kill the interpreter with a real
//! signal.

use std::fs;
use std::path::Path;
use std::time::Duration;

use orion_core::codegen::{render, TargetProfile};
use orion_core::exec::{classify, Backend, CrashCause, ScriptedBackend, Termination, Verdict};
use orion_core::fuzz::{evaluate_case, GeneratedCase};
use orion_core::value::{DType, Param, Scalar, Source, TensorValue, TestInput, Value};

const MOCK: &str = r#"
import os, signal, time

def ok(x):
    return x

def scale(x):
    return [v * (2.0 if os.environ.get('ORION_DEVICE') == 'gpu' else 1.0) for v in x]

def reject(x):
    raise ValueError('bad argument')

def fail(x):
    raise RuntimeError('internal error')

def segv(x):
    os.kill(os.getpid(), signal.SIGSEGV)

def abort(x):
    os.abort()

def spin(x):
    while True:
        time.sleep(0.01)

def leak_env(x):
    return [1.0 if 'ORION_SECRET_FOR_TEST' in os.environ else 0.0]

def where(x):
    return [1.0 if os.path.basename(os.getcwd()).endswith('.d') else 0.0]
"#;

fn python() -> Option<&'static str> {
    std::process::Command::new("python3").arg("--version").output().ok().map(|_| "python3")
}

fn case(api: &str, params: Vec<Param>) -> GeneratedCase {
    let id = api.replace('.', "_");
    GeneratedCase {
        case_id: id.clone(),
        api_name: api.into(),
        seed_id: "seed".into(),
        iteration: 0,
        input: TestInput { api_name: api.into(), params, source: Source::Synthetic, record_id: "seed".into() },
        notes: Vec::new(),
    }
}

fn ints() -> Vec<Param> {
    vec![Param::new("x", 0, Value::list(vec![Value::real(1.0), Value::real(2.5)]))]
}

fn backend(dir: &Path) -> ScriptedBackend {
    fs::write(dir.join("mockt.py"), MOCK).unwrap();
    // Network isolation stays on: where namespaces are unavailable the
    // request is dropped and the case still runs.
    ScriptedBackend::new("python3", dir, Duration::from_secs(2))
}

fn run(b: &ScriptedBackend, api: &str, params: Vec<Param>) -> (Verdict, Termination) {
    let profile = TargetProfile::generic_python();
    let c = case(api, params);
    let script = render(&c, &profile, "cpu").unwrap();
    let out = b.execute(&c, "cpu", Some(&script)).unwrap();
    (classify(&out, &profile), out.termination)
}

#[test]
fn verdict_classes_from_real_processes() {
    if python().is_none() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let b = backend(dir.path());

    assert_eq!(run(&b, "mockt.ok", ints()).0, Verdict::Benign);
    assert_eq!(run(&b, "mockt.reject", ints()).0, Verdict::InvalidInput { exception: "ValueError".into() });
    assert_eq!(
        run(&b, "mockt.fail", ints()).0,
        Verdict::Crash { cause: CrashCause::RuntimeError("RuntimeError".into()) }
    );
    let (v, t) = run(&b, "mockt.segv", ints());
    assert_eq!(t, Termination::Signal(11));
    assert_eq!(v, Verdict::Crash { cause: CrashCause::Signal(11) });
    let (v, t) = run(&b, "mockt.abort", ints());
    assert_eq!(t, Termination::Signal(6));
    assert_eq!(v, Verdict::Crash { cause: CrashCause::Signal(6) });
    let (v, t) = run(&b, "mockt.spin", ints());
    assert_eq!(t, Termination::TimedOut);
    assert_eq!(v, Verdict::Hang);
}

#[test]
fn tensor_descriptors_render_and_summarize() {
    if python().is_none() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let b = backend(dir.path());
    let t = TensorValue::constant(Scalar::Real(f64::NAN), vec![2, 2], DType::Float32);
    let c = case("mockt.ok", vec![Param::new("x", 0, Value::Tensor(t))]);
    let profile = TargetProfile::generic_python();
    let script = render(&c, &profile, "cpu").unwrap();
    let out = b.execute(&c, "cpu", Some(&script)).unwrap();
    assert_eq!(classify(&out, &profile), Verdict::Benign, "{}", String::from_utf8_lossy(&out.stderr));
    match out.markers.output {
        orion_core::codegen::OutputBlock::Summary(s) => {
            assert_eq!(s.shape, Some(vec![2, 2]));
            assert_eq!(s.head.len(), 4);
            assert!(s.head.iter().all(|x| x.is_nan()));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn differential_across_device_labels() {
    if python().is_none() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let b = backend(dir.path());
    let profile = TargetProfile::generic_python();
    let devices = vec!["cpu".to_string(), "gpu".to_string()];
    let tol = Default::default();
    let same = evaluate_case(&case("mockt.ok", ints()), &b, &profile, &devices, tol);
    assert_eq!(same.verdict, Verdict::Benign);
    let diff = evaluate_case(&case("mockt.scale", ints()), &b, &profile, &devices, tol);
    assert!(matches!(diff.verdict, Verdict::DiffMismatch { .. }), "{:?}", diff.verdict);
}

#[test]
fn environment_is_scrubbed_and_artifacts_removed() {
    if python().is_none() {
        return;
    }
    std::env::set_var("ORION_SECRET_FOR_TEST", "1");
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path());
    let profile = TargetProfile::generic_python();

    let c = case("mockt.leak_env", ints());
    let script = render(&c, &profile, "cpu").unwrap();
    let out = b.execute(&c, "cpu", Some(&script)).unwrap();
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains("[0.0]"), "secret leaked into child: {s}");

    let c = case("mockt.where", ints());
    let script = render(&c, &profile, "cpu").unwrap();
    let out = b.execute(&c, "cpu", Some(&script)).unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("[1.0]"), "not run in per-case dir");

    let leftovers = |d: &Path| {
        fs::read_dir(d).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name() != "mockt.py" && e.file_name() != "__pycache__").count()
    };
    assert_eq!(leftovers(dir.path()), 0);

    b.keep_artifacts = true;
    let out = b.execute(&c, "cpu", Some(&script)).unwrap();
    assert_eq!(out.termination, Termination::Exit(0));
    assert!(dir.path().join(script.file_name()).is_file());
    assert!(dir.path().join(format!("{}.cpu.d", c.case_id)).is_dir());
}

#[test]
fn missing_runner_is_an_infrastructure_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = ScriptedBackend::new("/nonexistent/runner", dir.path(), Duration::from_secs(1));
    assert!(b.check().is_err());
    let profile = TargetProfile::generic_python();
    let c = case("mockt.ok", ints());
    let script = render(&c, &profile, "cpu").unwrap();
    assert!(b.execute(&c, "cpu", Some(&script)).is_err());
    let r = evaluate_case(&c, &b, &profile, &["cpu".to_string()], Default::default());
    assert!(matches!(r.verdict, Verdict::InfraError { .. }));
}
