//! The fourteen mutation rules, grouped in per-type lookup tables.
//!
//! Rules 1-5 are guided: they create a correlated inconsistency between two
//! arguments (two tensor shapes, a tensor and an axis, a tensor and an index
//! list, two lists). Rules 6-14 are corner-case substitutions keyed on the
//! type of a single argument.
//!
//! Every mutator is a pure function of its inputs, the corner constants and a
//! random stream seeded from the `seed` recorded in the [`MutationNote`], so a
//! note is enough to replay the mutation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, CaseRng};
use crate::value::{
    corner_scalar, CornerCaseKind, CornerConfig, DType, Fill, Param, ParamType, Scalar,
    TensorValue, Value, ValueError,
};

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("{rule} not applicable: {reason}")]
    NotApplicable { rule: RuleId, reason: String },
    #[error(transparent)]
    IllegalKind(#[from] ValueError),
}

fn not_applicable(rule: RuleId, reason: impl Into<String>) -> RuleError {
    RuleError::NotApplicable { rule, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
}

impl RuleId {
    pub const ALL: [RuleId; 14] = [
        RuleId::R1,
        RuleId::R2,
        RuleId::R3,
        RuleId::R4,
        RuleId::R5,
        RuleId::R6,
        RuleId::R7,
        RuleId::R8,
        RuleId::R9,
        RuleId::R10,
        RuleId::R11,
        RuleId::R12,
        RuleId::R13,
        RuleId::R14,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn category(self) -> Category {
        if self.number() <= 5 {
            Category::Guided
        } else {
            Category::CornerCase
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleId::R1 => "Tensors Shape Mismatch",
            RuleId::R2 => "Tensor Dimension Mismatch",
            RuleId::R3 => "Tensor List-Indices Mismatch",
            RuleId::R4 => "List Indices Elements Mismatch",
            RuleId::R5 => "List Indices Length Mismatch",
            RuleId::R6 => "Tensor Corner Case Generator Type 1",
            RuleId::R7 => "Tensor Corner Case Generator Type 2",
            RuleId::R8 => "Tensor Corner Case Generator Type 3",
            RuleId::R9 => "Scalar Tensor Corner Case Generator",
            RuleId::R10 => "Non-Scalar Tensor Corner Case Generator",
            RuleId::R11 => "Preemptive Corner Case Generator Type 1",
            RuleId::R12 => "Preemptive Corner Case Generator Type 2",
            RuleId::R13 => "Preemptive Corner Case Generator Type 3",
            RuleId::R14 => "List/Tuple Corner Case Generator",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            RuleId::R1 => "rank-reduce one tensor and rank-expand its partner so their shapes differ",
            RuleId::R2 => "replace an integer companion with a value outside the tensor's ranks and extents",
            RuleId::R3 => "resize an index list so its length differs from the tensor's rank",
            RuleId::R4 => "replace an index-list element with a value outside the tensor's ranks and extents",
            RuleId::R5 => "grow or shrink one of two lists so their lengths differ",
            RuleId::R6 => "replace the tensor fill with a large, zero, negative or NaN value",
            RuleId::R7 => "replace the first shape extent with a large, zero or negative value",
            RuleId::R8 => "replace the last shape extent with a large, zero or negative value",
            RuleId::R9 => "collapse the tensor to a scalar (rank 0)",
            RuleId::R10 => "expand the tensor to a random multi-dimensional shape",
            RuleId::R11 => "replace a numeric argument with a large, zero, negative, NaN, None, empty or non-ASCII value",
            RuleId::R12 => "replace a boolean argument with a large or negative integer",
            RuleId::R13 => "replace a string argument with an empty or non-ASCII string",
            RuleId::R14 => "replace a list element with a corner value, or empty the list",
        }
    }

    pub fn signatures(self) -> Vec<Signature> {
        use ParamType::*;
        match self {
            RuleId::R1 => vec![Signature::Pair(Tensor, Tensor)],
            RuleId::R2 => vec![Signature::Pair(Tensor, Int)],
            RuleId::R3 | RuleId::R4 => vec![Signature::Pair(Tensor, List)],
            RuleId::R5 => vec![Signature::Pair(List, List)],
            RuleId::R6 | RuleId::R7 | RuleId::R8 | RuleId::R9 | RuleId::R10 => {
                vec![Signature::Single(Tensor)]
            }
            RuleId::R11 => vec![Signature::Single(Int), Signature::Single(Real)],
            RuleId::R12 => vec![Signature::Single(Bool)],
            RuleId::R13 => vec![Signature::Single(Str)],
            RuleId::R14 => vec![Signature::Single(List)],
        }
    }

    pub fn is_pairwise(self) -> bool {
        self.category() == Category::Guided
    }

    /// Corner kinds this rule draws from, before dtype legality is applied.
    pub fn corner_kinds(self) -> &'static [CornerCaseKind] {
        use CornerCaseKind::*;
        match self {
            RuleId::R6 => &[Large, Zero, Negative, NaN],
            RuleId::R7 | RuleId::R8 => &[Large, Zero, Negative],
            RuleId::R11 | RuleId::R14 => &CornerCaseKind::ALL,
            RuleId::R12 => &[Large, Negative],
            RuleId::R13 => &[Empty, NonAscii],
            _ => &[],
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.number())
    }
}

impl FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches(['R', 'r']);
        let n: u8 = digits.parse().map_err(|_| format!("not a rule id: `{s}`"))?;
        RuleId::ALL
            .into_iter()
            .find(|r| r.number() == n)
            .ok_or_else(|| format!("no rule R{n} (valid: R1..R14)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Guided,
    #[serde(rename = "corner")]
    CornerCase,
}

/// Parameter-type key of a lookup table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Signature {
    Single(ParamType),
    Pair(ParamType, ParamType),
}

/// One entry of the exported rule catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleInfo {
    pub id: RuleId,
    pub category: Category,
    pub name: String,
    pub applicability: Vec<Vec<ParamType>>,
    pub description: String,
}

pub fn catalog() -> Vec<RuleInfo> {
    RuleId::ALL
        .into_iter()
        .map(|id| RuleInfo {
            id,
            category: id.category(),
            name: id.name().to_string(),
            applicability: id
                .signatures()
                .into_iter()
                .map(|s| match s {
                    Signature::Single(t) => vec![t],
                    Signature::Pair(a, b) => vec![a, b],
                })
                .collect(),
            description: id.description().to_string(),
        })
        .collect()
}

/// Lookup tables: parameter-type signature to the ordered rules for it.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    tables: BTreeMap<Signature, Vec<RuleId>>,
}

impl RuleTable {
    pub fn new(enabled: &BTreeSet<RuleId>) -> Self {
        let mut tables: BTreeMap<Signature, Vec<RuleId>> = BTreeMap::new();
        for id in RuleId::ALL.into_iter().filter(|r| enabled.contains(r)) {
            for sig in id.signatures() {
                tables.entry(sig).or_default().push(id);
            }
        }
        RuleTable { tables }
    }

    pub fn full() -> Self {
        RuleTable::new(&RuleId::ALL.into_iter().collect())
    }

    pub fn lookup(&self, sig: Signature) -> &[RuleId] {
        self.tables.get(&sig).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn signatures(&self) -> impl Iterator<Item = (&Signature, &Vec<RuleId>)> {
        self.tables.iter()
    }

    /// Every rule with at least one applicable target in a parameter list of
    /// the given types, ascending by id.
    pub fn rules_for(&self, types: &[ParamType]) -> Vec<RuleId> {
        let mut out = BTreeSet::new();
        for t in types {
            out.extend(self.lookup(Signature::Single(*t)).iter().copied());
        }
        for (sig, rules) in &self.tables {
            if let Signature::Pair(..) = sig {
                for r in rules {
                    if !pair_candidates(*r, types).is_empty() {
                        out.insert(*r);
                    }
                }
            }
        }
        out.into_iter().collect()
    }
}

/// Rules applicable to a parameter-type signature under the full catalog.
pub fn rules_for(types: &[ParamType]) -> Vec<RuleId> {
    RuleTable::full().rules_for(types)
}

/// Ordered candidate argument pairs for a pairwise rule. Same-type rules pair
/// adjacent arguments of that type; mixed-type rules pair every tensor with
/// every companion, in positional order.
pub fn pair_candidates(rule: RuleId, types: &[ParamType]) -> Vec<(usize, usize)> {
    let of = |t: ParamType| -> Vec<usize> {
        types.iter().enumerate().filter(|(_, x)| **x == t).map(|(i, _)| i).collect()
    };
    let adjacent = |idx: Vec<usize>| idx.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>();
    let cross = |a: Vec<usize>, b: Vec<usize>| {
        a.iter().flat_map(|i| b.iter().map(move |j| (*i, *j))).collect::<Vec<_>>()
    };
    match rule {
        RuleId::R1 => adjacent(of(ParamType::Tensor)),
        RuleId::R5 => adjacent(of(ParamType::List)),
        RuleId::R2 => cross(of(ParamType::Tensor), of(ParamType::Int)),
        RuleId::R3 | RuleId::R4 => cross(of(ParamType::Tensor), of(ParamType::List)),
        _ => Vec::new(),
    }
}

/// Record of one applied mutation; enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationNote {
    pub rule: RuleId,
    /// Indices into the parameter list of the arguments the rule touched.
    pub params: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<CornerCaseKind>,
    pub before: Vec<String>,
    pub after: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisRole {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RankOp {
    Reduce,
    Expand,
}

fn bump(e: i64) -> i64 {
    if e == i64::MAX {
        e - 1
    } else {
        e + 1
    }
}

fn apply_rank_op(t: &mut TensorValue, op: RankOp) {
    match op {
        RankOp::Reduce => {
            t.shape.pop();
        }
        RankOp::Expand => {
            t.shape.push(1);
            let last = t.shape.len() - 1;
            t.shape[last] = bump(t.shape[last]);
        }
    }
}

/// R1: one tensor gets a random rank operation, its partner the opposite one.
pub fn shape_mismatch(
    ti: &TensorValue,
    tj: &TensorValue,
    rng: &mut CaseRng,
) -> (TensorValue, TensorValue) {
    let first = if rng.gen_bool(0.5) { RankOp::Expand } else { RankOp::Reduce };
    let second = match first {
        RankOp::Expand => RankOp::Reduce,
        RankOp::Reduce => RankOp::Expand,
    };
    let (mut a, mut b) = (ti.clone(), tj.clone());
    apply_rank_op(&mut a, first);
    apply_rank_op(&mut b, second);
    if a.shape == b.shape {
        // Unequal input ranks can line up after the swap; push the expanded
        // side's last extent so the shapes still differ.
        let expanded = if first == RankOp::Expand { &mut a } else { &mut b };
        let last = expanded.shape.len() - 1;
        expanded.shape[last] = bump(expanded.shape[last]);
    }
    (a, b)
}

/// Values an index-like argument may legitimately take: `0..=rank` plus
/// every extent.
pub fn valid_index_set(t: &TensorValue) -> BTreeSet<i64> {
    let mut set: BTreeSet<i64> = (0..=t.rank() as i64).collect();
    set.extend(t.shape.iter().copied());
    set
}

fn invalid_index(t: &TensorValue, rng: &mut CaseRng) -> i64 {
    let valid = valid_index_set(t);
    let top = valid.iter().next_back().copied().unwrap_or(0);
    let mut v = top.saturating_add(1 + rng.gen_range(0..8));
    while valid.contains(&v) {
        v = v.wrapping_add(1);
    }
    v
}

/// R2: an integer outside `0..=rank` and the extent set.
pub fn dim_mismatch(t: &TensorValue, _a: i64, rng: &mut CaseRng) -> i64 {
    invalid_index(t, rng)
}

fn filler(list: &[Value]) -> Value {
    list.last().cloned().unwrap_or(Value::int(0))
}

/// R3: resize the list to `rank - 1` or `rank + 1` elements.
pub fn list_indices_mismatch(t: &TensorValue, l: &[Value], rng: &mut CaseRng) -> Vec<Value> {
    let rank = t.rank();
    let target = if rank >= 1 && rng.gen_bool(0.5) { rank - 1 } else { rank + 1 };
    let mut out = l.to_vec();
    let pad = filler(l);
    out.resize(target, pad);
    out
}

/// R4: overwrite one element (or insert one into an empty list) with a value
/// outside the tensor's index set.
pub fn list_elem_mismatch(
    t: &TensorValue,
    l: &[Value],
    rng: &mut CaseRng,
) -> Result<Vec<Value>, RuleError> {
    if l.iter().any(|v| v.as_int().is_none()) {
        return Err(not_applicable(RuleId::R4, "list holds non-integer elements"));
    }
    let bad = Value::int(invalid_index(t, rng));
    let mut out = l.to_vec();
    if out.is_empty() {
        out.push(bad);
    } else {
        let i = rng.gen_range(0..out.len());
        out[i] = bad;
    }
    Ok(out)
}

fn grow_or_shrink(l: &mut Vec<Value>, rng: &mut CaseRng) {
    if !l.is_empty() && rng.gen_bool(0.5) {
        l.pop();
    } else {
        let pad = filler(l);
        l.push(pad);
    }
}

/// R5: perturb the length of one list so the two lengths differ.
pub fn list_len_mismatch(
    li: &[Value],
    lj: &[Value],
    rng: &mut CaseRng,
) -> (Vec<Value>, Vec<Value>) {
    let (mut a, mut b) = (li.to_vec(), lj.to_vec());
    let target = if rng.gen_bool(0.5) { &mut a } else { &mut b };
    grow_or_shrink(target, rng);
    if a.len() == b.len() {
        let pad = filler(&a);
        a.push(pad);
    }
    (a, b)
}

/// R6: replace the fill with the corner value for the tensor's dtype.
pub fn tensor_value_corner(
    t: &TensorValue,
    kind: CornerCaseKind,
    config: &CornerConfig,
) -> Result<TensorValue, RuleError> {
    if !RuleId::R6.corner_kinds().contains(&kind) {
        return Err(not_applicable(RuleId::R6, format!("kind {kind:?} is not a tensor value corner")));
    }
    let fill = corner_scalar(kind, t.dtype, config)?;
    Ok(TensorValue { fill: Fill::Const(fill), shape: t.shape.clone(), dtype: t.dtype })
}

pub fn shape_corner_extent(kind: CornerCaseKind, config: &CornerConfig) -> Option<i64> {
    match kind {
        CornerCaseKind::Large => Some(config.large_extent),
        CornerCaseKind::Zero => Some(0),
        CornerCaseKind::Negative => Some(config.negative_extent),
        _ => None,
    }
}

/// R7 (first axis) / R8 (last axis): replace one extent with a corner extent.
pub fn tensor_shape_corner(
    t: &TensorValue,
    axis: AxisRole,
    kind: CornerCaseKind,
    config: &CornerConfig,
) -> Result<TensorValue, RuleError> {
    let rule = match axis {
        AxisRole::First => RuleId::R7,
        AxisRole::Last => RuleId::R8,
    };
    if t.shape.is_empty() {
        return Err(not_applicable(rule, "scalar tensor has no extents"));
    }
    let extent = shape_corner_extent(kind, config)
        .ok_or_else(|| not_applicable(rule, format!("kind {kind:?} is not a shape corner")))?;
    let mut out = t.clone();
    let idx = match axis {
        AxisRole::First => 0,
        AxisRole::Last => out.shape.len() - 1,
    };
    out.shape[idx] = extent;
    Ok(out)
}

/// R9: rank 0, fill and dtype untouched.
pub fn to_scalar(t: &TensorValue) -> TensorValue {
    TensorValue { fill: t.fill.clone(), shape: Vec::new(), dtype: t.dtype }
}

/// R10: a fresh multi-dimensional shape drawn from the configured ranges.
pub fn from_scalar(t: &TensorValue, rng: &mut CaseRng, config: &CornerConfig) -> TensorValue {
    let (rlo, rhi) = config.expand_rank;
    let rank = rng.gen_range(rlo.max(2)..=rhi.max(rlo).max(2));
    let (elo, ehi) = config.expand_extents;
    let shape = (0..rank).map(|_| rng.gen_range(elo..=ehi.max(elo))).collect();
    TensorValue { fill: t.fill.clone(), shape, dtype: t.dtype }
}

fn element_corner(
    template: Option<&Value>,
    kind: CornerCaseKind,
    config: &CornerConfig,
) -> Value {
    let real = matches!(template, Some(Value::Real { .. }));
    match kind {
        CornerCaseKind::Large if real => Value::real(config.large_real),
        CornerCaseKind::Large => Value::int(config.large_int),
        CornerCaseKind::Zero if real => Value::real(0.0),
        CornerCaseKind::Zero => Value::int(0),
        CornerCaseKind::Negative if real => Value::real(config.negative_int as f64),
        CornerCaseKind::Negative => Value::int(config.negative_int),
        CornerCaseKind::NaN => Value::real(f64::NAN),
        CornerCaseKind::NoneKind => Value::None,
        CornerCaseKind::Empty => Value::string(Vec::new()),
        CornerCaseKind::NonAscii => Value::string(config.non_ascii.clone()),
    }
}

/// R11: type-directed replacement of an int or real argument. `None`, empty
/// and non-ASCII kinds change the argument's type on purpose.
pub fn numeric_arg_corner(
    a: &Value,
    kind: CornerCaseKind,
    config: &CornerConfig,
) -> Result<Value, RuleError> {
    match a {
        Value::Int { .. } | Value::Real { .. } => Ok(element_corner(Some(a), kind, config)),
        other => Err(not_applicable(RuleId::R11, format!("{:?} is not numeric", other.param_type()))),
    }
}

/// R12: a boolean argument becomes a large or negative integer.
pub fn bool_arg_corner(
    a: &Value,
    kind: CornerCaseKind,
    config: &CornerConfig,
) -> Result<Value, RuleError> {
    if !matches!(a, Value::Bool { .. }) {
        return Err(not_applicable(RuleId::R12, "argument is not a boolean"));
    }
    match kind {
        CornerCaseKind::Large => Ok(Value::int(config.large_int)),
        CornerCaseKind::Negative => Ok(Value::int(config.negative_int)),
        other => Err(not_applicable(RuleId::R12, format!("kind {other:?} is not a boolean corner"))),
    }
}

/// R13: empty or non-ASCII string.
pub fn string_arg_corner(
    a: &Value,
    kind: CornerCaseKind,
    config: &CornerConfig,
) -> Result<Value, RuleError> {
    if !matches!(a, Value::Str { .. }) {
        return Err(not_applicable(RuleId::R13, "argument is not a string"));
    }
    match kind {
        CornerCaseKind::Empty => Ok(Value::string(Vec::new())),
        CornerCaseKind::NonAscii => Ok(Value::string(config.non_ascii.clone())),
        other => Err(not_applicable(RuleId::R13, format!("kind {other:?} is not a string corner"))),
    }
}

/// R14: one element becomes the corner value; the `Empty` kind empties the
/// whole list.
pub fn list_corner(
    l: &[Value],
    kind: CornerCaseKind,
    rng: &mut CaseRng,
    config: &CornerConfig,
) -> Result<Vec<Value>, RuleError> {
    if kind == CornerCaseKind::Empty {
        return Ok(Vec::new());
    }
    if l.is_empty() {
        return Err(not_applicable(RuleId::R14, "empty list has no element to replace"));
    }
    let i = rng.gen_range(0..l.len());
    let mut out = l.to_vec();
    out[i] = element_corner(Some(&l[i]), kind, config);
    Ok(out)
}

/// Kinds a corner rule may pick for this argument.
pub fn legal_kinds_for(rule: RuleId, value: &Value) -> Vec<CornerCaseKind> {
    let kinds = rule.corner_kinds();
    match (rule, value) {
        (RuleId::R6, Value::Tensor(t)) => kinds
            .iter()
            .copied()
            .filter(|k| corner_scalar(*k, t.dtype, &CornerConfig::default()).is_ok())
            .collect(),
        (RuleId::R14, Value::List { items }) if items.is_empty() => vec![CornerCaseKind::Empty],
        _ => kinds.to_vec(),
    }
}

fn tensor_arg(rule: RuleId, params: &[Param], idx: usize) -> Result<&TensorValue, RuleError> {
    params
        .get(idx)
        .and_then(|p| p.value.as_tensor())
        .ok_or_else(|| not_applicable(rule, format!("argument {idx} is not a tensor")))
}

fn list_arg(rule: RuleId, params: &[Param], idx: usize) -> Result<&[Value], RuleError> {
    params
        .get(idx)
        .and_then(|p| p.value.as_list())
        .ok_or_else(|| not_applicable(rule, format!("argument {idx} is not a list")))
}

/// Apply `rule` to the arguments at `targets` (one index for corner rules,
/// two for guided rules). The random stream is seeded from `seed`.
pub fn apply(
    rule: RuleId,
    params: &[Param],
    targets: &[usize],
    seed: u64,
    config: &CornerConfig,
) -> Result<(Vec<Param>, MutationNote), RuleError> {
    apply_with_kind(rule, params, targets, seed, None, config)
}

/// Like [`apply`], but a corner rule uses `forced` instead of drawing a kind.
pub fn apply_with_kind(
    rule: RuleId,
    params: &[Param],
    targets: &[usize],
    seed: u64,
    forced: Option<CornerCaseKind>,
    config: &CornerConfig,
) -> Result<(Vec<Param>, MutationNote), RuleError> {
    let want = if rule.is_pairwise() { 2 } else { 1 };
    if targets.len() != want {
        return Err(not_applicable(rule, format!("expects {want} target(s), got {}", targets.len())));
    }
    if targets.iter().any(|&i| i >= params.len()) {
        return Err(not_applicable(rule, "target index out of range"));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = params.to_vec();
    let mut kind = None;
    let (i, j) = (targets[0], targets.get(1).copied().unwrap_or(targets[0]));

    match rule {
        RuleId::R1 => {
            let (a, b) =
                shape_mismatch(tensor_arg(rule, params, i)?, tensor_arg(rule, params, j)?, &mut rng);
            out[i].value = Value::Tensor(a);
            out[j].value = Value::Tensor(b);
        }
        RuleId::R2 => {
            let t = tensor_arg(rule, params, i)?;
            let a = params[j]
                .value
                .as_int()
                .ok_or_else(|| not_applicable(rule, format!("argument {j} is not an integer")))?;
            out[j].value = Value::int(dim_mismatch(t, a, &mut rng));
        }
        RuleId::R3 => {
            let l = list_indices_mismatch(tensor_arg(rule, params, i)?, list_arg(rule, params, j)?, &mut rng);
            out[j].value = Value::list(l);
        }
        RuleId::R4 => {
            let l = list_elem_mismatch(tensor_arg(rule, params, i)?, list_arg(rule, params, j)?, &mut rng)?;
            out[j].value = Value::list(l);
        }
        RuleId::R5 => {
            let (a, b) = list_len_mismatch(list_arg(rule, params, i)?, list_arg(rule, params, j)?, &mut rng);
            out[i].value = Value::list(a);
            out[j].value = Value::list(b);
        }
        RuleId::R9 => {
            out[i].value = Value::Tensor(to_scalar(tensor_arg(rule, params, i)?));
        }
        RuleId::R10 => {
            out[i].value = Value::Tensor(from_scalar(tensor_arg(rule, params, i)?, &mut rng, config));
        }
        _ => {
            let k = match forced {
                Some(k) => k,
                None => *legal_kinds_for(rule, &params[i].value)
                    .choose(&mut rng)
                    .ok_or_else(|| not_applicable(rule, "no legal corner kind for this argument"))?,
            };
            kind = Some(k);
            out[i].value = match rule {
                RuleId::R6 => Value::Tensor(tensor_value_corner(tensor_arg(rule, params, i)?, k, config)?),
                RuleId::R7 => Value::Tensor(tensor_shape_corner(
                    tensor_arg(rule, params, i)?,
                    AxisRole::First,
                    k,
                    config,
                )?),
                RuleId::R8 => Value::Tensor(tensor_shape_corner(
                    tensor_arg(rule, params, i)?,
                    AxisRole::Last,
                    k,
                    config,
                )?),
                RuleId::R11 => numeric_arg_corner(&params[i].value, k, config)?,
                RuleId::R12 => bool_arg_corner(&params[i].value, k, config)?,
                RuleId::R13 => string_arg_corner(&params[i].value, k, config)?,
                RuleId::R14 => Value::list(list_corner(list_arg(rule, params, i)?, k, &mut rng, config)?),
                _ => unreachable!("guided and shape rules handled above"),
            };
        }
    }

    let touched: Vec<usize> = if i == j { vec![i] } else { vec![i, j] };
    let note = MutationNote {
        rule,
        before: touched.iter().map(|&k| params[k].value.summary()).collect(),
        after: touched.iter().map(|&k| out[k].value.summary()).collect(),
        params: touched,
        kind,
        seed,
    };
    Ok((out, note))
}

/// Re-run the mutation described by `note` on the original arguments.
pub fn replay(
    note: &MutationNote,
    params: &[Param],
    config: &CornerConfig,
) -> Result<Vec<Param>, RuleError> {
    apply_with_kind(note.rule, params, &note.params, note.seed, note.kind, config).map(|(p, _)| p)
}

/// The fill scalar of a constant tensor.
pub fn const_fill(t: &TensorValue) -> Option<&Scalar> {
    match &t.fill {
        Fill::Const(s) => Some(s),
        Fill::Uniform { .. } => None,
    }
}

/// Dtypes whose tensors accept at least one R6 kind.
pub fn tensor_corner_dtypes() -> Vec<DType> {
    DType::ALL
        .into_iter()
        .filter(|d| {
            let t = TensorValue::constant(Scalar::Int(0), vec![1], *d);
            !legal_kinds_for(RuleId::R6, &Value::Tensor(t)).is_empty()
        })
        .collect()
}
