//! The value universe shared by every stage of the pipeline: tensors described
//! by a fill descriptor plus shape plus element type, scalar arguments, lists
//! and `None`, together with the corner-case constants used by the mutators.
//!
//! Tensors are never materialized. A [`TensorValue`] records *how* to build the
//! tensor (a constant or a seeded uniform range) and the script renderer
//! expands it on the target side.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ValueError {
    #[error("corner kind {kind:?} is not legal for dtype {dtype}")]
    IllegalKindForType { kind: CornerCaseKind, dtype: DType },
    #[error("serialization error: {0}")]
    Serialization(String),
}

/// Tensor element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float16,
    Float32,
    Float64,
    Int8,
    Int16,
    Int32,
    Int64,
    Uint8,
    Bool,
    Complex64,
    String,
}

impl DType {
    pub const ALL: [DType; 11] = [
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

    pub fn name(self) -> &'static str {
        match self {
            DType::Float16 => "float16",
            DType::Float32 => "float32",
            DType::Float64 => "float64",
            DType::Int8 => "int8",
            DType::Int16 => "int16",
            DType::Int32 => "int32",
            DType::Int64 => "int64",
            DType::Uint8 => "uint8",
            DType::Bool => "bool",
            DType::Complex64 => "complex64",
            DType::String => "string",
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::Float16 | DType::Float32 | DType::Float64)
    }

    /// Float or complex: the kinds that can hold a NaN.
    pub fn is_inexact(self) -> bool {
        self.is_float() || self == DType::Complex64
    }

    pub fn is_string(self) -> bool {
        self == DType::String
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The degenerate-value families the corner-case rules draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerCaseKind {
    Large,
    Zero,
    Negative,
    #[serde(rename = "nan")]
    NaN,
    #[serde(rename = "none")]
    NoneKind,
    Empty,
    NonAscii,
}

impl CornerCaseKind {
    pub const ALL: [CornerCaseKind; 7] = [
        CornerCaseKind::Large,
        CornerCaseKind::Zero,
        CornerCaseKind::Negative,
        CornerCaseKind::NaN,
        CornerCaseKind::NoneKind,
        CornerCaseKind::Empty,
        CornerCaseKind::NonAscii,
    ];

    /// Name of the generator family this kind belongs to.
    pub fn generator(self) -> &'static str {
        match self {
            CornerCaseKind::Large | CornerCaseKind::Zero => "case_x",
            CornerCaseKind::Negative => "case_n",
            CornerCaseKind::NaN => "case_nan",
            CornerCaseKind::NoneKind => "case_none",
            CornerCaseKind::Empty => "case_mt",
            CornerCaseKind::NonAscii => "case_noa",
        }
    }
}

/// Concrete corner-case constants. Every field can be overridden from a
/// campaign config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CornerConfig {
    pub large_int: i64,
    #[serde(with = "float_repr")]
    pub large_real: f64,
    pub large_extent: i64,
    pub negative_int: i64,
    pub negative_extent: i64,
    #[serde(with = "bytes_repr")]
    pub non_ascii: Vec<u8>,
    /// Inclusive extent range used when a scalar tensor is expanded.
    pub expand_extents: (i64, i64),
    /// Inclusive rank range used when a scalar tensor is expanded.
    pub expand_rank: (usize, usize),
}

impl Default for CornerConfig {
    fn default() -> Self {
        CornerConfig {
            large_int: 1 << 62,
            large_real: 1e38,
            large_extent: 1 << 31,
            negative_int: -(1 << 31),
            negative_extent: -(1 << 31),
            non_ascii: "\u{1F600}".repeat(8).into_bytes(),
            expand_extents: (2, 8),
            expand_rank: (2, 2),
        }
    }
}

/// A single element value: the payload of a constant tensor fill or the
/// result of [`corner_scalar`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scalar {
    Int(i64),
    Real(#[serde(with = "float_repr")] f64),
    Bool(bool),
    Str(#[serde(with = "bytes_repr")] Vec<u8>),
    None,
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Real(a), Scalar::Real(b)) => real_eq(*a, *b),
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            (Scalar::Str(a), Scalar::Str(b)) => a == b,
            (Scalar::None, Scalar::None) => true,
            _ => false,
        }
    }
}

impl Scalar {
    pub fn is_nan(&self) -> bool {
        matches!(self, Scalar::Real(v) if v.is_nan())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(v) => Some(*v as f64),
            Scalar::Real(v) => Some(*v),
            Scalar::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Real(v) => write!(f, "{v:?}"),
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Str(s) => write!(f, "{:?}", String::from_utf8_lossy(s)),
            Scalar::None => f.write_str("None"),
        }
    }
}

/// NaN compares equal to NaN; everything else uses IEEE equality.
pub fn real_eq(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

/// How a tensor's elements are produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    Const(Scalar),
    Uniform {
        #[serde(with = "float_repr")]
        low: f64,
        #[serde(with = "float_repr")]
        high: f64,
        seed: u64,
    },
}

impl PartialEq for Fill {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Fill::Const(a), Fill::Const(b)) => a == b,
            (Fill::Uniform { low: l1, high: h1, seed: s1 }, Fill::Uniform { low: l2, high: h2, seed: s2 }) => {
                real_eq(*l1, *l2) && real_eq(*h1, *h2) && s1 == s2
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub fill: Fill,
    pub shape: Vec<i64>,
    pub dtype: DType,
}

impl TensorValue {
    pub fn constant(fill: Scalar, shape: Vec<i64>, dtype: DType) -> Self {
        TensorValue { fill: Fill::Const(fill), shape, dtype }
    }

    pub fn rank(&self) -> usize {
        rank(self)
    }

    /// Product of extents, 0 when any extent is 0. `None` if an extent is
    /// negative or the product overflows.
    pub fn element_count(&self) -> Option<u128> {
        let mut n: u128 = 1;
        for &e in &self.shape {
            if e < 0 {
                return None;
            }
            n = n.checked_mul(e as u128)?;
        }
        Some(n)
    }

    pub fn fill_is_nan(&self) -> bool {
        matches!(&self.fill, Fill::Const(s) if s.is_nan())
    }
}

pub fn rank(t: &TensorValue) -> usize {
    t.shape.len()
}

/// The tagged union of everything an API argument can be.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Value {
    Tensor(TensorValue),
    Int {
        value: i64,
    },
    Real {
        #[serde(with = "float_repr")]
        value: f64,
    },
    Bool {
        value: bool,
    },
    Str {
        #[serde(with = "bytes_repr")]
        value: Vec<u8>,
    },
    List {
        items: Vec<Value>,
    },
    None,
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Tensor(a), Value::Tensor(b)) => a == b,
            (Value::Int { value: a }, Value::Int { value: b }) => a == b,
            (Value::Real { value: a }, Value::Real { value: b }) => real_eq(*a, *b),
            (Value::Bool { value: a }, Value::Bool { value: b }) => a == b,
            (Value::Str { value: a }, Value::Str { value: b }) => a == b,
            (Value::List { items: a }, Value::List { items: b }) => a == b,
            (Value::None, Value::None) => true,
            _ => false,
        }
    }
}

impl Value {
    pub fn int(v: i64) -> Self {
        Value::Int { value: v }
    }

    pub fn real(v: f64) -> Self {
        Value::Real { value: v }
    }

    pub fn boolean(v: bool) -> Self {
        Value::Bool { value: v }
    }

    pub fn string(s: impl Into<Vec<u8>>) -> Self {
        Value::Str { value: s.into() }
    }

    pub fn list(items: Vec<Value>) -> Self {
        Value::List { items }
    }

    pub fn param_type(&self) -> ParamType {
        match self {
            Value::Tensor(_) => ParamType::Tensor,
            Value::Int { .. } => ParamType::Int,
            Value::Real { .. } => ParamType::Real,
            Value::Bool { .. } => ParamType::Bool,
            Value::Str { .. } => ParamType::Str,
            Value::List { .. } => ParamType::List,
            Value::None => ParamType::None,
        }
    }

    pub fn as_tensor(&self) -> Option<&TensorValue> {
        match self {
            Value::Tensor(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int { value } => Some(*value),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List { items } => Some(items),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&[u8]> {
        match self {
            Value::Str { value } => Some(value),
            _ => None,
        }
    }

    pub fn from_scalar(s: Scalar) -> Self {
        match s {
            Scalar::Int(v) => Value::int(v),
            Scalar::Real(v) => Value::real(v),
            Scalar::Bool(v) => Value::boolean(v),
            Scalar::Str(v) => Value::string(v),
            Scalar::None => Value::None,
        }
    }

    /// Short human-readable rendering used in mutation notes and reports.
    pub fn summary(&self) -> String {
        match self {
            Value::Tensor(t) => {
                let fill = match &t.fill {
                    Fill::Const(s) => s.to_string(),
                    Fill::Uniform { low, high, .. } => format!("U({low:?},{high:?})"),
                };
                format!("T<{fill}, {:?}, {}>", t.shape, t.dtype)
            }
            Value::Int { value } => value.to_string(),
            Value::Real { value } => format!("{value:?}"),
            Value::Bool { value } => value.to_string(),
            Value::Str { value } => format!("{:?}", String::from_utf8_lossy(value)),
            Value::List { items } => {
                let inner: Vec<String> = items.iter().map(Value::summary).collect();
                format!("[{}]", inner.join(", "))
            }
            Value::None => "None".to_string(),
        }
    }
}

/// Coarse type of an argument; the key of the rule lookup tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Tensor,
    Int,
    Real,
    Bool,
    Str,
    List,
    None,
}

/// A named, positioned argument of one recorded invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub pos: usize,
    #[serde(flatten)]
    pub value: Value,
}

impl Param {
    pub fn new(name: impl Into<String>, pos: usize, value: Value) -> Self {
        Param { name: name.into(), pos, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Docs,
    Repos,
    DevTests,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Docs, Source::Repos, Source::DevTests, Source::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Source::Docs => "docs",
            Source::Repos => "repos",
            Source::DevTests => "dev-tests",
            Source::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.name() == s)
            .ok_or_else(|| format!("unknown source `{s}`"))
    }
}

/// One concrete invocation of an API: the unit fetched from the seed store
/// and handed to the mutators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInput {
    pub api_name: String,
    pub params: Vec<Param>,
    pub source: Source,
    pub record_id: String,
}

impl TestInput {
    pub fn signature(&self) -> Vec<ParamType> {
        self.params.iter().map(|p| p.value.param_type()).collect()
    }
}

/// The concrete value a corner kind stands for, for an element of `dtype`.
pub fn corner_scalar(
    kind: CornerCaseKind,
    dtype: DType,
    config: &CornerConfig,
) -> Result<Scalar, ValueError> {
    let illegal = || ValueError::IllegalKindForType { kind, dtype };
    match kind {
        CornerCaseKind::Large | CornerCaseKind::Zero | CornerCaseKind::Negative => {
            if dtype.is_string() {
                return Err(illegal());
            }
            let inexact = dtype.is_inexact();
            Ok(match (kind, inexact) {
                (CornerCaseKind::Large, true) => Scalar::Real(config.large_real),
                (CornerCaseKind::Large, false) => Scalar::Int(config.large_int),
                (CornerCaseKind::Zero, true) => Scalar::Real(0.0),
                (CornerCaseKind::Zero, false) => Scalar::Int(0),
                (_, true) => Scalar::Real(config.negative_int as f64),
                (_, false) => Scalar::Int(config.negative_int),
            })
        }
        CornerCaseKind::NaN if dtype.is_inexact() => Ok(Scalar::Real(f64::NAN)),
        CornerCaseKind::NaN => Err(illegal()),
        CornerCaseKind::NoneKind => Ok(Scalar::None),
        CornerCaseKind::Empty if dtype.is_string() => Ok(Scalar::Str(Vec::new())),
        CornerCaseKind::NonAscii if dtype.is_string() => Ok(Scalar::Str(config.non_ascii.clone())),
        CornerCaseKind::Empty | CornerCaseKind::NonAscii => Err(illegal()),
    }
}

/// Corner kinds that [`corner_scalar`] accepts for `dtype`.
pub fn legal_kinds(dtype: DType) -> Vec<CornerCaseKind> {
    CornerCaseKind::ALL
        .into_iter()
        .filter(|k| corner_scalar(*k, dtype, &CornerConfig::default()).is_ok())
        .collect()
}

pub fn to_json(p: &Param) -> Result<String, ValueError> {
    serde_json::to_string(p).map_err(|e| ValueError::Serialization(e.to_string()))
}

pub fn from_json(s: &str) -> Result<Param, ValueError> {
    serde_json::from_str(s).map_err(|e| ValueError::Serialization(e.to_string()))
}

/// Serialize and parse back; the result must equal the input.
pub fn validate_roundtrip(p: &Param) -> Result<Param, ValueError> {
    from_json(&to_json(p)?)
}

/// Reals travel as JSON numbers; the non-finite ones as the strings
/// `"nan"`, `"inf"` and `"-inf"`.
pub(crate) mod float_repr {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_str("nan")
        } else if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    struct FloatVisitor;

    impl Visitor<'_> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"nan\", \"inf\", \"-inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }
}

/// Byte strings travel as JSON strings when they are valid UTF-8 and as
/// `{"hex": "..."}` otherwise.
pub(crate) mod bytes_repr {
    use serde::de::{self, MapAccess, Visitor};
    use serde::ser::SerializeMap;
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(v) {
            Ok(text) => s.serialize_str(text),
            Err(_) => {
                let mut map = s.serialize_map(Some(1))?;
                map.serialize_entry("hex", &hex::encode(v))?;
                map.end()
            }
        }
    }

    struct BytesVisitor;

    impl<'de> Visitor<'de> for BytesVisitor {
        type Value = Vec<u8>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a string or {\"hex\": ...}")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Vec<u8>, E> {
            Ok(v.as_bytes().to_vec())
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Vec<u8>, A::Error> {
            let mut out = None;
            while let Some(key) = map.next_key::<String>()? {
                if key != "hex" {
                    return Err(de::Error::unknown_field(&key, &["hex"]));
                }
                let text: String = map.next_value()?;
                out = Some(hex::decode(text).map_err(de::Error::custom)?);
            }
            out.ok_or_else(|| de::Error::missing_field("hex"))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        d.deserialize_any(BytesVisitor)
    }
}
