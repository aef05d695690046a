//! Renders a generated case into a self-contained target-runtime script and
//! parses the marker protocol that script prints.
//!
//! Marker grammar (frozen; shared with the runner shim):
//!
//! ```text
//! ORION::OK                  the call returned
//! ORION::EXC:<TypeName>      the call raised TypeName (script still exits 0)
//! ORION-OUT-BEGIN            start of the output summary block
//! shape=[2,2]                optional key=value lines: shape, dtype, count, checksum
//! [1.0,2.0,nan]              head of the flattened output, at most 64 elements
//! ORION-OUT-END
//! ```
//!
//! A process that dies before printing a verdict line leaves no marker, which
//! is how hard crashes are told apart from in-runtime exceptions.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzz::GeneratedCase;
use crate::value::{DType, Fill, Param, Scalar, Value};

pub const VERDICT_PREFIX: &str = "ORION::";
pub const OUT_BEGIN: &str = "ORION-OUT-BEGIN";
pub const OUT_END: &str = "ORION-OUT-END";
pub const HEAD_LIMIT: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum CodegenError {
    #[error("profile `{profile}` cannot render {kind}")]
    UnrenderableParam { profile: String, kind: String },
}

/// Templates describing how one target runtime builds values and calls APIs.
///
/// Placeholders: `{root_module}` in the preamble; `{device}` in the device
/// block; `{shape}`, `{dtype}`, `{value}` in `tensor_const`; `{shape}`,
/// `{dtype}`, `{low}`, `{high}`, `{seed}` in `tensor_uniform`; `{api}`,
/// `{args}` in `call`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetProfile {
    pub name: String,
    pub preamble: String,
    pub device_block: String,
    #[serde(default)]
    pub device_names: BTreeMap<String, String>,
    pub tensor_const: String,
    #[serde(default)]
    pub tensor_uniform: Option<String>,
    pub dtype_names: BTreeMap<DType, String>,
    pub none_literal: String,
    pub true_literal: String,
    pub false_literal: String,
    pub nan_literal: String,
    pub inf_literal: String,
    pub call: String,
    pub summary_helper: String,
    pub filtered_exceptions: Vec<String>,
}

pub fn default_filtered_exceptions() -> Vec<String> {
    ["ValueError", "InvalidArgumentError", "TypeError", "SyntaxError"]
        .into_iter()
        .map(String::from)
        .collect()
}

const SUMMARY_HELPER: &str = r#"def _orion_num(x):
    if isinstance(x, complex):
        x = x.real
    try:
        x = float(x)
    except Exception:
        return None
    return x

def _orion_flat(r, out, limit):
    if len(out) >= limit or r is None or isinstance(r, (str, bytes)):
        return
    if hasattr(r, 'detach'):
        r = r.detach().cpu().numpy()
    elif hasattr(r, 'numpy') and not isinstance(r, type):
        r = r.numpy()
    if hasattr(r, 'ravel') and hasattr(r, 'tolist'):
        r = r.ravel().tolist()
    elif hasattr(r, 'elements'):
        r = r.elements(limit)
    if isinstance(r, (list, tuple)):
        for x in r:
            _orion_flat(x, out, limit)
            if len(out) >= limit:
                return
        return
    v = _orion_num(r)
    if v is not None:
        out.append(v)

def _orion_fmt(x):
    if x != x:
        return 'nan'
    if x in (float('inf'), float('-inf')):
        return 'inf' if x > 0 else '-inf'
    return repr(x)

def _orion_summary(r):
    first = r[0] if isinstance(r, (list, tuple)) and r and hasattr(r[0], 'shape') else r
    shape = list(getattr(first, 'shape', [len(r)] if isinstance(r, (list, tuple)) else []))
    dtype = str(getattr(first, 'dtype', type(first).__name__))
    head = []
    _orion_flat(r, head, 1 << 20)
    checksum = sum(x for x in head if x == x and abs(x) != float('inf'))
    lines = ['shape=[' + ','.join(str(int(d)) for d in shape) + ']',
             'dtype=' + dtype,
             'count=' + str(len(head)),
             'checksum=' + _orion_fmt(float(checksum)),
             '[' + ','.join(_orion_fmt(x) for x in head[:64]) + ']']
    return '\n'.join(lines)
"#;

const GENERIC_PREAMBLE: &str = r#"import sys
import {root_module}

class _OrionTensor:
    def __init__(self, shape, dtype, value=None, low=None, high=None, seed=None):
        self.shape = list(shape)
        self.dtype = dtype
        self.value = value
        self.low, self.high, self.seed = low, high, seed

    def elements(self, limit):
        n = 1
        for d in self.shape:
            n *= max(int(d), 0)
        fill = self.value if self.low is None else self.low
        return [fill] * min(n, limit)

    def __repr__(self):
        return '_OrionTensor(%r, %r, %r)' % (self.shape, self.dtype, self.value)
"#;

fn dtype_map(f: impl Fn(DType) -> Option<String>) -> BTreeMap<DType, String> {
    DType::ALL.into_iter().filter_map(|d| f(d).map(|n| (d, n))).collect()
}

impl TargetProfile {
    /// Pure-Python target: tensors are descriptor objects, suitable for mock
    /// packages and the runner shim.
    pub fn generic_python() -> Self {
        TargetProfile {
            name: "python".into(),
            preamble: GENERIC_PREAMBLE.into(),
            device_block: "ORION_DEVICE = '{device}'".into(),
            device_names: BTreeMap::new(),
            tensor_const: "_OrionTensor({shape}, '{dtype}', {value})".into(),
            tensor_uniform: Some(
                "_OrionTensor({shape}, '{dtype}', low={low}, high={high}, seed={seed})".into(),
            ),
            dtype_names: dtype_map(|d| Some(d.name().to_string())),
            none_literal: "None".into(),
            true_literal: "True".into(),
            false_literal: "False".into(),
            nan_literal: "float('nan')".into(),
            inf_literal: "float('inf')".into(),
            call: "{api}({args})".into(),
            summary_helper: SUMMARY_HELPER.into(),
            filtered_exceptions: default_filtered_exceptions(),
        }
    }

    pub fn tensorflow() -> Self {
        TargetProfile {
            name: "tensorflow".into(),
            preamble: "import sys\nimport tensorflow as tf\n".into(),
            device_block: "_orion_device_ctx = tf.device('/{device}:0')\n_orion_device_ctx.__enter__()"
                .into(),
            device_names: BTreeMap::from([
                ("cpu".to_string(), "CPU".to_string()),
                ("gpu".to_string(), "GPU".to_string()),
            ]),
            tensor_const: "tf.fill({shape}, tf.constant({value}, dtype=tf.{dtype}))".into(),
            tensor_uniform: Some(
                "tf.cast(tf.random.uniform({shape}, minval={low}, maxval={high}, seed={seed}), tf.{dtype})"
                    .into(),
            ),
            dtype_names: dtype_map(|d| Some(d.name().to_string())),
            none_literal: "None".into(),
            true_literal: "True".into(),
            false_literal: "False".into(),
            nan_literal: "float('nan')".into(),
            inf_literal: "float('inf')".into(),
            call: "{api}({args})".into(),
            summary_helper: SUMMARY_HELPER.into(),
            filtered_exceptions: default_filtered_exceptions(),
        }
    }

    pub fn pytorch() -> Self {
        TargetProfile {
            name: "pytorch".into(),
            preamble: "import sys\nimport torch\n".into(),
            device_block: "_orion_dev = torch.device('{device}')".into(),
            device_names: BTreeMap::from([("gpu".to_string(), "cuda".to_string())]),
            tensor_const: "torch.full({shape}, {value}, dtype=torch.{dtype}, device=_orion_dev)".into(),
            tensor_uniform: Some(
                "(torch.rand({shape}, generator=torch.Generator().manual_seed({seed})) * ({high} - {low}) + {low}).to(torch.{dtype}).to(_orion_dev)"
                    .into(),
            ),
            dtype_names: dtype_map(|d| match d {
                DType::String => None,
                other => Some(other.name().to_string()),
            }),
            none_literal: "None".into(),
            true_literal: "True".into(),
            false_literal: "False".into(),
            nan_literal: "float('nan')".into(),
            inf_literal: "float('inf')".into(),
            call: "{api}({args})".into(),
            summary_helper: SUMMARY_HELPER.into(),
            filtered_exceptions: default_filtered_exceptions(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "python" => Some(Self::generic_python()),
            "tensorflow" => Some(Self::tensorflow()),
            "pytorch" => Some(Self::pytorch()),
            _ => None,
        }
    }

    pub fn is_filtered(&self, exception: &str) -> bool {
        self.filtered_exceptions.iter().any(|e| e == exception)
    }

    fn unrenderable(&self, kind: impl Into<String>) -> CodegenError {
        CodegenError::UnrenderableParam { profile: self.name.clone(), kind: kind.into() }
    }

    fn real(&self, v: f64) -> String {
        if v.is_nan() {
            self.nan_literal.clone()
        } else if v.is_infinite() {
            if v > 0.0 {
                self.inf_literal.clone()
            } else {
                format!("-{}", self.inf_literal)
            }
        } else {
            format!("{v:?}")
        }
    }

    fn scalar(&self, s: &Scalar) -> String {
        match s {
            Scalar::Int(v) => v.to_string(),
            Scalar::Real(v) => self.real(*v),
            Scalar::Bool(b) => if *b { self.true_literal.clone() } else { self.false_literal.clone() },
            Scalar::Str(bytes) => py_literal(bytes),
            Scalar::None => self.none_literal.clone(),
        }
    }

    pub fn render_value(&self, v: &Value) -> Result<String, CodegenError> {
        Ok(match v {
            Value::Tensor(t) => {
                let dtype = self
                    .dtype_names
                    .get(&t.dtype)
                    .ok_or_else(|| self.unrenderable(format!("tensor of dtype {}", t.dtype)))?;
                let shape = format!(
                    "[{}]",
                    t.shape.iter().map(i64::to_string).collect::<Vec<_>>().join(", ")
                );
                match &t.fill {
                    Fill::Const(s) => self
                        .tensor_const
                        .replace("{shape}", &shape)
                        .replace("{dtype}", dtype)
                        .replace("{value}", &self.scalar(s)),
                    Fill::Uniform { low, high, seed } => self
                        .tensor_uniform
                        .as_ref()
                        .ok_or_else(|| self.unrenderable("uniform-filled tensor"))?
                        .replace("{shape}", &shape)
                        .replace("{dtype}", dtype)
                        .replace("{low}", &self.real(*low))
                        .replace("{high}", &self.real(*high))
                        .replace("{seed}", &seed.to_string()),
                }
            }
            Value::Int { value } => value.to_string(),
            Value::Real { value } => self.real(*value),
            Value::Bool { value } => self.scalar(&Scalar::Bool(*value)),
            Value::Str { value } => py_literal(value),
            Value::List { items } => {
                let parts: Result<Vec<String>, _> = items.iter().map(|x| self.render_value(x)).collect();
                format!("[{}]", parts?.join(", "))
            }
            Value::None => self.none_literal.clone(),
        })
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Python literal for a byte string: a `str` literal when the bytes are
/// UTF-8, a `bytes` literal otherwise. Output is pure ASCII.
pub fn py_literal(bytes: &[u8]) -> String {
    let mut out = String::new();
    match std::str::from_utf8(bytes) {
        Ok(text) => {
            out.push('\'');
            for c in text.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '\'' => out.push_str("\\'"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\t' => out.push_str("\\t"),
                    c if (' '..='~').contains(&c) => out.push(c),
                    c if (c as u32) < 0x100 => out.push_str(&format!("\\x{:02x}", c as u32)),
                    c if (c as u32) < 0x10000 => out.push_str(&format!("\\u{:04x}", c as u32)),
                    c => out.push_str(&format!("\\U{:08x}", c as u32)),
                }
            }
            out.push('\'');
        }
        Err(_) => {
            out.push_str("b'");
            for &b in bytes {
                match b {
                    b'\\' => out.push_str("\\\\"),
                    b'\'' => out.push_str("\\'"),
                    b' '..=b'~' => out.push(b as char),
                    _ => out.push_str(&format!("\\x{b:02x}")),
                }
            }
            out.push('\'');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedCase {
    pub case_id: String,
    pub device: String,
    pub script: String,
}

impl RenderedCase {
    pub fn file_name(&self) -> String {
        format!("{}.{}.script", self.case_id, self.device)
    }

    /// Write to `<dir>/<case_id>.<device>.script`.
    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        fs::write(&path, &self.script)?;
        Ok(path)
    }
}

fn render_args(params: &[Param], profile: &TargetProfile) -> Result<(Vec<String>, String), CodegenError> {
    let mut assigns = Vec::with_capacity(params.len());
    let mut positional = Vec::new();
    let mut keyword = Vec::new();
    let mut ordered: Vec<(usize, &Param)> = params.iter().enumerate().collect();
    ordered.sort_by_key(|(i, p)| (p.pos, *i));
    for (i, p) in ordered {
        let var = format!("arg{i}");
        assigns.push(format!("    {var} = {}", profile.render_value(&p.value)?));
        if is_identifier(&p.name) {
            keyword.push(format!("{}={var}", p.name));
        } else {
            positional.push(var);
        }
    }
    positional.extend(keyword);
    Ok((assigns, positional.join(", ")))
}

/// Turn one generated case into a script for `device`.
pub fn render(
    case: &GeneratedCase,
    profile: &TargetProfile,
    device: &str,
) -> Result<RenderedCase, CodegenError> {
    let api = &case.input.api_name;
    let root_module = api.split('.').next().unwrap_or(api);
    let target_device = profile.device_names.get(device).map(String::as_str).unwrap_or(device);
    let (assigns, args) = render_args(&case.input.params, profile)?;
    let call = profile.call.replace("{api}", api).replace("{args}", &args);

    let mut s = String::new();
    s.push_str(&format!("# orion case {} device {}\n", case.case_id, device));
    s.push_str(&profile.preamble.replace("{root_module}", root_module));
    s.push('\n');
    s.push_str(&profile.device_block.replace("{device}", target_device));
    s.push_str("\n\n");
    s.push_str(&profile.summary_helper);
    s.push_str("\ndef _orion_case():\n");
    for a in &assigns {
        s.push_str(a);
        s.push('\n');
    }
    s.push_str(&format!("    return {call}\n\n"));
    s.push_str("try:\n    _orion_result = _orion_case()\n");
    s.push_str("except Exception as _orion_exc:\n");
    s.push_str(&format!(
        "    print('{VERDICT_PREFIX}EXC:' + type(_orion_exc).__name__, flush=True)\n    sys.exit(0)\n"
    ));
    s.push_str(&format!("print('{VERDICT_PREFIX}OK', flush=True)\n"));
    s.push_str(&format!(
        "print('{OUT_BEGIN}\\n' + _orion_summary(_orion_result) + '\\n{OUT_END}', flush=True)\n"
    ));
    Ok(RenderedCase { case_id: case.case_id.clone(), device: device.to_string(), script: s })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "marker", content = "exception", rename_all = "kebab-case")]
pub enum MarkerVerdict {
    Ok,
    Exc(String),
    NoMarker,
}

/// Bounded description of an API output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSummary {
    pub shape: Option<Vec<i64>>,
    pub dtype: Option<String>,
    pub count: Option<u64>,
    pub checksum: Option<f64>,
    pub head: Vec<f64>,
}

impl OutputSummary {
    /// Render in the block grammar (without the begin/end markers).
    pub fn to_block(&self) -> String {
        let fmt = |x: f64| {
            if x.is_nan() {
                "nan".to_string()
            } else if x.is_infinite() {
                if x > 0.0 { "inf".into() } else { "-inf".into() }
            } else {
                format!("{x:?}")
            }
        };
        let mut lines = Vec::new();
        if let Some(shape) = &self.shape {
            let dims: Vec<String> = shape.iter().map(i64::to_string).collect();
            lines.push(format!("shape=[{}]", dims.join(",")));
        }
        if let Some(d) = &self.dtype {
            lines.push(format!("dtype={d}"));
        }
        if let Some(c) = self.count {
            lines.push(format!("count={c}"));
        }
        if let Some(c) = self.checksum {
            lines.push(format!("checksum={}", fmt(c)));
        }
        let head: Vec<String> = self.head.iter().map(|x| fmt(*x)).collect();
        lines.push(format!("[{}]", head.join(",")));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "detail", rename_all = "kebab-case")]
pub enum OutputBlock {
    Absent,
    Malformed(String),
    Summary(OutputSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedMarkers {
    pub verdict: MarkerVerdict,
    pub output: OutputBlock,
}

fn parse_float_list(text: &str) -> Result<Vec<f64>, String> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| format!("not a bracketed list: {text:?}"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|tok| tok.trim().parse::<f64>().map_err(|e| format!("bad element {tok:?}: {e}")))
        .collect()
}

fn parse_block(lines: &[&str]) -> Result<OutputSummary, String> {
    let mut out = OutputSummary::default();
    let mut saw_head = false;
    for line in lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        if line.starts_with('[') {
            out.head = parse_float_list(line)?;
            saw_head = true;
        } else if let Some((key, value)) = line.split_once('=') {
            match key {
                "shape" => {
                    let dims = parse_float_list(value)?;
                    out.shape = Some(dims.into_iter().map(|d| d as i64).collect());
                }
                "dtype" => out.dtype = Some(value.to_string()),
                "count" => out.count = Some(value.parse().map_err(|e| format!("bad count: {e}"))?),
                "checksum" => out.checksum = Some(value.parse().map_err(|e| format!("bad checksum: {e}"))?),
                other => return Err(format!("unknown key {other:?}")),
            }
        } else {
            return Err(format!("unparseable line {line:?}"));
        }
    }
    if !saw_head {
        return Err("missing element list".into());
    }
    Ok(out)
}

/// Extract the last verdict line and the output block that follows it.
/// Total: garbage in gives `NoMarker` / `Absent`, never an error.
pub fn parse_markers(stdout: &[u8]) -> ParsedMarkers {
    let text = String::from_utf8_lossy(stdout);
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();

    let last_verdict = lines
        .iter()
        .enumerate()
        .rev()
        .find(|(_, l)| l.starts_with(VERDICT_PREFIX));
    let (verdict, from) = match last_verdict {
        None => (MarkerVerdict::NoMarker, 0),
        Some((i, line)) => {
            let rest = &line[VERDICT_PREFIX.len()..];
            let v = if rest == "OK" {
                MarkerVerdict::Ok
            } else if let Some(name) = rest.strip_prefix("EXC:") {
                MarkerVerdict::Exc(name.trim().to_string())
            } else {
                MarkerVerdict::NoMarker
            };
            (v, i + 1)
        }
    };

    let output = match lines[from..].iter().position(|l| *l == OUT_BEGIN) {
        None => OutputBlock::Absent,
        Some(b) => {
            let start = from + b + 1;
            match lines[start..].iter().position(|l| *l == OUT_END) {
                None => OutputBlock::Malformed("unterminated output block".into()),
                Some(e) => match parse_block(&lines[start..start + e]) {
                    Ok(summary) => OutputBlock::Summary(summary),
                    Err(msg) => OutputBlock::Malformed(msg),
                },
            }
        }
    };
    ParsedMarkers { verdict, output }
}
