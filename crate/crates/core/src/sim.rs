//! A deterministic in-process API surface with planted vulnerabilities.
//!
//! Each simulated API validates its arguments with a list of guards (which
//! raise filtered exceptions, like a real library's input checks), then
//! checks its planted bugs, then falls back to a benign output computed from
//! the arguments. Every planted bug is reachable by a single mutation from a
//! shipped seed, and only by the rules of its trigger class; the
//! reachability search in the tests enforces both properties.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::OutputSummary;
use crate::rng::rng_from_seed;
use crate::rules::{valid_index_set, RuleId};
use crate::store::TraceRecord;
use crate::value::{DType, Fill, Param, ParamType, Scalar, Source, TensorValue, Value};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown simulated api `{0}`")]
    UnknownApi(String),
    #[error("invalid sim catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    Segfault,
    Abort,
    Hang,
    WrongOutput,
}

/// A decidable, pure condition over an argument list. Indices refer to
/// argument positions in the list; an index that is out of range or points
/// at the wrong kind makes the predicate false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    /// Both tensors have rank >= `min_rank` and their ranks differ by at
    /// least `min_gap`.
    RankGap { a: usize, b: usize, min_gap: usize, min_rank: usize },
    RankBelow { param: usize, min: usize },
    IsScalar { param: usize },
    /// Integer `v` with `rank(tensor) < v < below`.
    IntAboveRank { param: usize, tensor: usize, below: i64 },
    IntAtLeast { param: usize, value: i64 },
    /// List length differs from the tensor's rank; with `nonempty`, an empty
    /// list does not count.
    ListLenNotRank { list: usize, tensor: usize, nonempty: bool },
    /// Some integer element `e` with `0 <= e < below` falls outside
    /// `0..=rank` and the tensor's extents.
    ListElemOutsideIndexSet { list: usize, tensor: usize, below: i64 },
    ListElemAtLeast { list: usize, value: i64 },
    ListLenDiffer { a: usize, b: usize, nonempty: bool },
    FillIsNan { param: usize },
    AnyExtentNegative { param: usize },
    KindIs { param: usize, kind: ParamType },
    KindNotIn { param: usize, kinds: Vec<ParamType> },
    StrNonAscii { param: usize },
    Any { of: Vec<Predicate> },
}

fn tensor(params: &[Param], i: usize) -> Option<&TensorValue> {
    params.get(i).and_then(|p| p.value.as_tensor())
}

fn list(params: &[Param], i: usize) -> Option<&[Value]> {
    params.get(i).and_then(|p| p.value.as_list())
}

fn int(params: &[Param], i: usize) -> Option<i64> {
    params.get(i).and_then(|p| p.value.as_int())
}

impl Predicate {
    pub fn eval(&self, params: &[Param]) -> bool {
        use Predicate::*;
        match self {
            RankGap { a, b, min_gap, min_rank } => match (tensor(params, *a), tensor(params, *b)) {
                (Some(x), Some(y)) => {
                    x.rank() >= *min_rank && y.rank() >= *min_rank && x.rank().abs_diff(y.rank()) >= *min_gap
                }
                _ => false,
            },
            RankBelow { param, min } => tensor(params, *param).is_some_and(|t| t.rank() < *min),
            IsScalar { param } => tensor(params, *param).is_some_and(|t| t.rank() == 0),
            IntAboveRank { param, tensor: t, below } => match (int(params, *param), tensor(params, *t)) {
                (Some(v), Some(t)) => t.rank() >= 1 && v > t.rank() as i64 && v < *below,
                _ => false,
            },
            IntAtLeast { param, value } => int(params, *param).is_some_and(|v| v >= *value),
            ListLenNotRank { list: l, tensor: t, nonempty } => match (list(params, *l), tensor(params, *t)) {
                (Some(l), Some(t)) => l.len() != t.rank() && !(*nonempty && l.is_empty()),
                _ => false,
            },
            ListElemOutsideIndexSet { list: l, tensor: t, below } => {
                match (list(params, *l), tensor(params, *t)) {
                    (Some(l), Some(t)) => {
                        let valid = valid_index_set(t);
                        l.iter()
                            .filter_map(Value::as_int)
                            .any(|e| e >= 0 && e < *below && !valid.contains(&e))
                    }
                    _ => false,
                }
            }
            ListElemAtLeast { list: l, value } => list(params, *l)
                .is_some_and(|l| l.iter().filter_map(Value::as_int).any(|e| e >= *value)),
            ListLenDiffer { a, b, nonempty } => match (list(params, *a), list(params, *b)) {
                (Some(x), Some(y)) => x.len() != y.len() && !(*nonempty && (x.is_empty() || y.is_empty())),
                _ => false,
            },
            FillIsNan { param } => tensor(params, *param).is_some_and(TensorValue::fill_is_nan),
            AnyExtentNegative { param } => tensor(params, *param).is_some_and(|t| t.shape.iter().any(|e| *e < 0)),
            KindIs { param, kind } => params.get(*param).is_some_and(|p| p.value.param_type() == *kind),
            KindNotIn { param, kinds } => {
                params.get(*param).is_some_and(|p| !kinds.contains(&p.value.param_type()))
            }
            StrNonAscii { param } => params
                .get(*param)
                .and_then(|p| p.value.as_str())
                .is_some_and(|s| s.iter().any(|b| !b.is_ascii())),
            Any { of } => of.iter().any(|p| p.eval(params)),
        }
    }
}

/// An input check that raises `raise` (normally a filtered exception name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub when: Predicate,
    pub raise: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBug {
    pub bug_id: String,
    pub trigger: Predicate,
    pub fault: FaultKind,
    /// Rules expected to reach this bug from the shipped seeds.
    pub rule_class: Vec<RuleId>,
    /// Synthetic top stack frame reported with the fault.
    pub frame: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimApiSpec {
    pub api_name: String,
    pub seeds: Vec<Vec<Param>>,
    #[serde(default)]
    pub guards: Vec<Guard>,
    #[serde(default)]
    pub bugs: Vec<PlantedBug>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCatalog {
    pub apis: Vec<SimApiSpec>,
    /// Device label on which wrong-output bugs diverge.
    pub divergent_device: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimResult {
    Output(OutputSummary),
    Raised { exception: String, message: String },
    Fault { bug_id: String, kind: FaultKind, frame: String },
}

fn ftensor(shape: &[i64]) -> Value {
    Value::Tensor(TensorValue::constant(Scalar::Real(1.0), shape.to_vec(), DType::Float32))
}

fn itensor(shape: &[i64], dtype: DType) -> Value {
    Value::Tensor(TensorValue::constant(Scalar::Int(1), shape.to_vec(), dtype))
}

fn ints(v: &[i64]) -> Value {
    Value::list(v.iter().map(|x| Value::int(*x)).collect())
}

fn params(items: Vec<(&str, Value)>) -> Vec<Param> {
    items.into_iter().enumerate().map(|(i, (n, v))| Param::new(n, i, v)).collect()
}

fn guard(when: Predicate, raise: &str, message: &str) -> Guard {
    Guard { when, raise: raise.into(), message: message.into() }
}

fn kind_guard(param: usize, kinds: &[ParamType]) -> Guard {
    guard(Predicate::KindNotIn { param, kinds: kinds.to_vec() }, "TypeError", "unexpected argument type")
}

fn bug(id: &str, trigger: Predicate, fault: FaultKind, class: &[RuleId], frame: &str) -> PlantedBug {
    PlantedBug {
        bug_id: id.into(),
        trigger,
        fault,
        rule_class: class.to_vec(),
        frame: frame.into(),
    }
}

const INT32_LIMIT: i64 = 1 << 31;

impl Default for SimCatalog {
    fn default() -> Self {
        use FaultKind::*;
        use ParamType as T;
        use Predicate::*;
        use RuleId::*;

        let apis = vec![
            SimApiSpec {
                api_name: "sim.linalg.lu_unpack".into(),
                seeds: vec![
                    params(vec![("LU_data", ftensor(&[3, 3])), ("LU_pivots", itensor(&[3, 3], DType::Int32))]),
                    params(vec![("LU_data", ftensor(&[4, 4])), ("LU_pivots", itensor(&[4, 4], DType::Int32))]),
                ],
                guards: vec![kind_guard(0, &[T::Tensor]), kind_guard(1, &[T::Tensor])],
                bugs: vec![bug(
                    "B01-lu-unpack-rank-mismatch",
                    RankGap { a: 0, b: 1, min_gap: 2, min_rank: 1 },
                    Segfault,
                    &[R1],
                    "lu_unpack_batched_kernel (linalg/lu_unpack.cc:118)",
                )],
            },
            SimApiSpec {
                api_name: "sim.math.reduce_sum".into(),
                seeds: vec![params(vec![("input", ftensor(&[4, 4])), ("axis", Value::int(1))])],
                guards: vec![
                    kind_guard(0, &[T::Tensor]),
                    kind_guard(1, &[T::Int]),
                    guard(RankBelow { param: 0, min: 1 }, "InvalidArgumentError", "reduction over a scalar"),
                    guard(IntAtLeast { param: 1, value: INT32_LIMIT }, "InvalidArgumentError", "axis out of int32 range"),
                ],
                bugs: vec![bug(
                    "B02-reduce-sum-axis-oob",
                    IntAboveRank { param: 1, tensor: 0, below: INT32_LIMIT },
                    Segfault,
                    &[R2],
                    "ReduceSumFunctor::operator() (math/reduction_ops.h:87)",
                )],
            },
            SimApiSpec {
                api_name: "sim.array.transpose".into(),
                // Rank-2 seeds only: R10 always yields rank 2, so it cannot
                // reach the length check by accident.
                seeds: vec![
                    params(vec![("a", ftensor(&[2, 3])), ("perm", ints(&[1, 0]))]),
                    params(vec![("a", ftensor(&[4, 5])), ("perm", ints(&[0, 1]))]),
                ],
                guards: vec![
                    kind_guard(0, &[T::Tensor]),
                    kind_guard(1, &[T::List]),
                    guard(RankBelow { param: 0, min: 1 }, "InvalidArgumentError", "transpose of a scalar"),
                ],
                bugs: vec![bug(
                    "B03-transpose-perm-length",
                    ListLenNotRank { list: 1, tensor: 0, nonempty: true },
                    Abort,
                    &[R3],
                    "TransposeOp::Compute check failed: perm.size() == dims (array/transpose_op.cc:143)",
                )],
            },
            SimApiSpec {
                api_name: "sim.array.tile".into(),
                seeds: vec![params(vec![("input", ftensor(&[2, 2])), ("multiples", ints(&[1, 2]))])],
                guards: vec![
                    kind_guard(0, &[T::Tensor]),
                    kind_guard(1, &[T::List]),
                    guard(RankBelow { param: 0, min: 1 }, "InvalidArgumentError", "tile of a scalar"),
                    guard(
                        ListLenNotRank { list: 1, tensor: 0, nonempty: false },
                        "InvalidArgumentError",
                        "multiples length must equal rank",
                    ),
                ],
                bugs: vec![bug(
                    "B04-tile-multiples-stride-overflow",
                    ListElemOutsideIndexSet { list: 1, tensor: 0, below: INT32_LIMIT },
                    Segfault,
                    &[R4],
                    "TileSimple<float> (array/tile_functor_cpu.h:52)",
                )],
            },
            SimApiSpec {
                api_name: "sim.sparse.reshape".into(),
                seeds: vec![params(vec![("input_shape", ints(&[2, 3])), ("new_shape", ints(&[3, 2]))])],
                guards: vec![kind_guard(0, &[T::List]), kind_guard(1, &[T::List])],
                bugs: vec![bug(
                    "B05-sparse-reshape-rank-loop",
                    ListLenDiffer { a: 0, b: 1, nonempty: true },
                    Hang,
                    &[R5],
                    "SparseReshapeOp::Compute (sparse/reshape_op.cc:61)",
                )],
            },
            SimApiSpec {
                api_name: "sim.histogram_fixed_width".into(),
                seeds: vec![params(vec![
                    (
                        "values",
                        Value::Tensor(TensorValue {
                            fill: Fill::Uniform { low: 0.0, high: 10.0, seed: 3 },
                            shape: vec![8],
                            dtype: DType::Float32,
                        }),
                    ),
                    ("nbins", Value::int(5)),
                ])],
                guards: vec![kind_guard(0, &[T::Tensor]), kind_guard(1, &[T::Int])],
                bugs: vec![bug(
                    "B06-histogram-nan-bin-index",
                    FillIsNan { param: 0 },
                    Abort,
                    &[R6],
                    "HistogramFixedWidthFunctor check failed: index >= 0 (histogram_op.cc:74)",
                )],
            },
            SimApiSpec {
                api_name: "sim.zeros_like".into(),
                seeds: vec![params(vec![("input", ftensor(&[3, 4]))])],
                guards: vec![kind_guard(0, &[T::Tensor])],
                bugs: vec![bug(
                    "B07-zeros-like-negative-extent",
                    AnyExtentNegative { param: 0 },
                    Segfault,
                    &[R7, R8],
                    "TensorShape::num_elements (framework/tensor_shape.cc:212)",
                )],
            },
            SimApiSpec {
                api_name: "sim.one_hot".into(),
                seeds: vec![params(vec![("indices", itensor(&[4], DType::Int64)), ("depth", Value::int(3))])],
                guards: vec![kind_guard(0, &[T::Tensor]), kind_guard(1, &[T::Int])],
                bugs: vec![bug(
                    "B08-one-hot-depth-alloc",
                    IntAtLeast { param: 1, value: INT32_LIMIT },
                    Abort,
                    &[R11],
                    "OneHotOp::Compute allocation overflow (array/one_hot_op.cc:96)",
                )],
            },
            SimApiSpec {
                api_name: "sim.unique".into(),
                seeds: vec![params(vec![("x", itensor(&[6], DType::Int32)), ("sorted", Value::boolean(true))])],
                guards: vec![kind_guard(0, &[T::Tensor]), kind_guard(1, &[T::Bool, T::Int])],
                bugs: vec![bug(
                    "B09-unique-sorted-flag-cast",
                    KindIs { param: 1, kind: T::Int },
                    Segfault,
                    &[R12],
                    "unique_dim_cpu_template (native/Unique.cpp:211)",
                )],
            },
            SimApiSpec {
                api_name: "sim.io.decode_raw".into(),
                seeds: vec![params(vec![("bytes", Value::string("abcd"))])],
                guards: vec![kind_guard(0, &[T::Str])],
                bugs: vec![bug(
                    "B10-decode-raw-multibyte",
                    StrNonAscii { param: 0 },
                    Abort,
                    &[R13],
                    "DecodeRawOp::Compute check failed: str.size() % width == 0 (parsing_ops.cc:58)",
                )],
            },
            SimApiSpec {
                api_name: "sim.pad".into(),
                seeds: vec![params(vec![("input", ftensor(&[2, 2])), ("paddings", ints(&[1, 1]))])],
                guards: vec![kind_guard(0, &[T::Tensor]), kind_guard(1, &[T::List])],
                bugs: vec![bug(
                    "B11-pad-large-padding",
                    ListElemAtLeast { list: 1, value: INT32_LIMIT },
                    Abort,
                    &[R14],
                    "PadOp::Compute check failed: size_in_bytes overflow (array/pad_op.cc:102)",
                )],
            },
            SimApiSpec {
                api_name: "sim.math.reduce_mean".into(),
                seeds: vec![params(vec![("input", ftensor(&[2, 3]))])],
                guards: vec![kind_guard(0, &[T::Tensor])],
                bugs: vec![bug(
                    "B12-reduce-mean-scalar-device-divergence",
                    IsScalar { param: 0 },
                    WrongOutput,
                    &[R9],
                    "ReduceMeanGpuKernel (math/reduction_gpu.cu:33)",
                )],
            },
            SimApiSpec {
                api_name: "sim._internal.identity".into(),
                seeds: vec![params(vec![("x", ftensor(&[2])), ("name", Value::string("id"))])],
                guards: vec![kind_guard(0, &[T::Tensor])],
                bugs: vec![],
            },
        ];
        SimCatalog { apis, divergent_device: "gpu".into() }
    }
}

impl SimCatalog {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::Catalog(format!("{}: {e}", path.display())))?;
        let cat: SimCatalog = serde_json::from_str(&text).map_err(|e| SimError::Catalog(e.to_string()))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn empty() -> Self {
        SimCatalog { apis: Vec::new(), divergent_device: "gpu".into() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut names = BTreeSet::new();
        let mut bugs = BTreeSet::new();
        for api in &self.apis {
            if !names.insert(&api.api_name) {
                return Err(SimError::Catalog(format!("duplicate api {}", api.api_name)));
            }
            for b in &api.bugs {
                if !bugs.insert(&b.bug_id) {
                    return Err(SimError::Catalog(format!("duplicate bug id {}", b.bug_id)));
                }
            }
        }
        Ok(())
    }

    /// Keep only the listed bugs (APIs stay, unlisted bugs are removed).
    pub fn with_bugs(mut self, keep: &BTreeSet<String>) -> Self {
        for api in &mut self.apis {
            api.bugs.retain(|b| keep.contains(&b.bug_id));
        }
        self
    }

    pub fn api(&self, name: &str) -> Option<&SimApiSpec> {
        self.apis.iter().find(|a| a.api_name == name)
    }

    pub fn bugs(&self) -> impl Iterator<Item = (&SimApiSpec, &PlantedBug)> {
        self.apis.iter().flat_map(|a| a.bugs.iter().map(move |b| (a, b)))
    }

    pub fn invoke(&self, api_name: &str, params: &[Param], device: &str) -> Result<SimResult, SimError> {
        let api = self.api(api_name).ok_or_else(|| SimError::UnknownApi(api_name.to_string()))?;
        for g in &api.guards {
            if g.when.eval(params) {
                return Ok(SimResult::Raised { exception: g.raise.clone(), message: g.message.clone() });
            }
        }
        let mut diverge = false;
        for b in &api.bugs {
            if !b.trigger.eval(params) {
                continue;
            }
            match b.fault {
                FaultKind::WrongOutput => diverge |= device == self.divergent_device,
                kind => return Ok(SimResult::Fault { bug_id: b.bug_id.clone(), kind, frame: b.frame.clone() }),
            }
        }
        let mut out = benign_output(params);
        if diverge {
            for x in &mut out.head {
                *x += 1e-3;
            }
            out.checksum = out.checksum.map(|c| c + 1e-3 * out.head.len() as f64);
        }
        Ok(SimResult::Output(out))
    }

    /// Every shipped seed as a seed-store record.
    pub fn seed_catalog(&self) -> Vec<TraceRecord> {
        self.apis
            .iter()
            .flat_map(|api| {
                api.seeds.iter().map(move |p| {
                    let mut r = TraceRecord::new(api.api_name.clone(), p.clone(), Source::Synthetic);
                    r.developer = Some(api.api_name.split('.').any(|c| c.starts_with('_')));
                    r
                })
            })
            .collect()
    }
}

fn tensor_head(t: &TensorValue, n: usize) -> Vec<f64> {
    match &t.fill {
        Fill::Const(s) => vec![s.as_f64().unwrap_or(0.0); n],
        Fill::Uniform { low, high, seed } => {
            let mut rng = rng_from_seed(*seed);
            (0..n).map(|_| low + (high - low) * rng.gen::<f64>()).collect()
        }
    }
}

/// Deterministic output summary: the first tensor argument's elements, or
/// the numeric scalars of the argument list when there is no tensor.
pub fn benign_output(params: &[Param]) -> OutputSummary {
    if let Some(t) = params.iter().find_map(|p| p.value.as_tensor()) {
        let count = t.element_count().map(|c| c.min(u64::MAX as u128) as u64);
        let n = count.unwrap_or(0).min(crate::codegen::HEAD_LIMIT as u64) as usize;
        let head = tensor_head(t, n);
        let checksum = head.iter().filter(|x| x.is_finite()).sum();
        return OutputSummary {
            shape: Some(t.shape.clone()),
            dtype: Some(t.dtype.name().to_string()),
            count,
            checksum: Some(checksum),
            head,
        };
    }
    fn flatten(v: &Value, out: &mut Vec<f64>) {
        match v {
            Value::Int { value } => out.push(*value as f64),
            Value::Real { value } => out.push(*value),
            Value::Bool { value } => out.push(if *value { 1.0 } else { 0.0 }),
            Value::Str { value } => out.push(value.len() as f64),
            Value::List { items } => items.iter().for_each(|x| flatten(x, out)),
            Value::Tensor(_) | Value::None => {}
        }
    }
    let mut head = Vec::new();
    params.iter().for_each(|p| flatten(&p.value, &mut head));
    head.truncate(crate::codegen::HEAD_LIMIT);
    let checksum = head.iter().filter(|x| x.is_finite()).sum();
    OutputSummary {
        shape: Some(vec![head.len() as i64]),
        dtype: Some("float64".into()),
        count: Some(head.len() as u64),
        checksum: Some(checksum),
        head,
    }
}
