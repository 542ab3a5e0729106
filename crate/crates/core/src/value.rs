//! Scalar values, attribute kinds and tuples.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The kind of an attribute or value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    I64,
    F64,
    Str,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::I64 => "i64",
            Kind::F64 => "f64",
            Kind::Str => "str",
        }
    }

    /// Parses a textual value of this kind.
    pub fn parse(self, text: &str) -> Result<Value> {
        match self {
            Kind::I64 => text
                .trim()
                .parse::<i64>()
                .map(Value::I64)
                .map_err(|_| Error::Parse(format!("invalid i64 {text:?}"))),
            Kind::F64 => {
                let v = text
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("invalid f64 {text:?}")))?;
                Ok(Value::float(v))
            }
            Kind::Str => Ok(Value::Str(Arc::from(text))),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i64" => Ok(Kind::I64),
            "f64" => Ok(Kind::F64),
            "str" => Ok(Kind::Str),
            other => Err(Error::Parse(format!("unknown kind {other:?}"))),
        }
    }
}

/// A single attribute value.
///
/// `Eq`, `Ord` and `Hash` give a total order over all values (kinds are
/// ranked `i64 < f64 < str`, floats use `total_cmp`) so values can key
/// ordered and hashed collections. Query semantics never compare across
/// kinds: use [`Value::try_cmp`] for that.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    I64(i64),
    F64(f64),
    Str(Arc<str>),
}

impl Value {
    /// Builds a float value, normalizing `-0.0` to `0.0`.
    pub fn float(v: f64) -> Value {
        Value::F64(if v == 0.0 { 0.0 } else { v })
    }

    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn kind(&self) -> Kind {
        match self {
            Value::I64(_) => Kind::I64,
            Value::F64(_) => Kind::F64,
            Value::Str(_) => Kind::Str,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F64(v) => Some(*v),
            Value::I64(v) => Some(*v as f64),
            Value::Str(_) => None,
        }
    }

    /// Compares two values of the same kind.
    pub fn try_cmp(&self, other: &Value) -> Result<Ordering> {
        match (self, other) {
            (Value::I64(a), Value::I64(b)) => Ok(a.cmp(b)),
            (Value::F64(a), Value::F64(b)) => a
                .partial_cmp(b)
                .ok_or_else(|| Error::TypeMismatch("NaN is not comparable".into())),
            (Value::Str(a), Value::Str(b)) => Ok(a.cmp(b)),
            (a, b) => Err(Error::TypeMismatch(format!(
                "cannot compare {} with {}",
                a.kind(),
                b.kind()
            ))),
        }
    }

    pub fn checked_add(&self, other: &Value) -> Result<Value> {
        arith(self, other, "+", i64::checked_add, |a, b| a + b)
    }

    pub fn checked_sub(&self, other: &Value) -> Result<Value> {
        arith(self, other, "-", i64::checked_sub, |a, b| a - b)
    }

    pub fn checked_mul(&self, other: &Value) -> Result<Value> {
        arith(self, other, "*", i64::checked_mul, |a, b| a * b)
    }

    fn rank(&self) -> u8 {
        match self {
            Value::I64(_) => 0,
            Value::F64(_) => 1,
            Value::Str(_) => 2,
        }
    }
}

fn arith(
    a: &Value,
    b: &Value,
    op: &str,
    int_op: fn(i64, i64) -> Option<i64>,
    float_op: fn(f64, f64) -> f64,
) -> Result<Value> {
    match (a, b) {
        (Value::I64(x), Value::I64(y)) => int_op(*x, *y)
            .map(Value::I64)
            .ok_or_else(|| Error::Overflow(format!("{x} {op} {y}"))),
        (Value::F64(x), Value::F64(y)) => Ok(Value::float(float_op(*x, *y))),
        (x, y) => Err(Error::TypeMismatch(format!(
            "cannot apply {op} to {} and {}",
            x.kind(),
            y.kind()
        ))),
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::I64(a), Value::I64(b)) => a.cmp(b),
            (Value::F64(a), Value::F64(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::I64(v) => {
                state.write_u8(0);
                v.hash(state)
            }
            Value::F64(v) => {
                state.write_u8(1);
                v.to_bits().hash(state)
            }
            Value::Str(v) => {
                state.write_u8(2);
                v.hash(state)
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I64(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v:?}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::I64(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::str(v)
    }
}

/// An ordered list of values matching some schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tuple(pub Vec<Value>);

impl Tuple {
    pub fn new(values: Vec<Value>) -> Self {
        Tuple(values)
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, idx: usize) -> &Value {
        &self.0[idx]
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    /// Concatenation `self ∘ other`.
    pub fn concat(&self, other: &Tuple) -> Tuple {
        let mut values = Vec::with_capacity(self.0.len() + other.0.len());
        values.extend_from_slice(&self.0);
        values.extend_from_slice(&other.0);
        Tuple(values)
    }

    pub fn project(&self, indices: &[usize]) -> Tuple {
        Tuple(indices.iter().map(|&i| self.0[i].clone()).collect())
    }
}

impl fmt::Display for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

/// Builds a tuple from a list of literals, e.g. `tuple![1, "Apple", 2.5]`.
#[macro_export]
macro_rules! tuple {
    ($($v:expr),* $(,)?) => {
        $crate::Tuple::new(vec![$($crate::Value::from($v)),*])
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_kind_comparison_is_an_error() {
        let err = Value::I64(1).try_cmp(&Value::str("a")).unwrap_err();
        assert!(matches!(err, Error::TypeMismatch(_)));
        assert_eq!(Value::I64(1).try_cmp(&Value::I64(2)).unwrap(), Ordering::Less);
    }

    #[test]
    fn int_overflow_is_detected() {
        let err = Value::I64(i64::MAX).checked_add(&Value::I64(1)).unwrap_err();
        assert!(matches!(err, Error::Overflow(_)));
        assert_eq!(Value::I64(1299).checked_mul(&Value::I64(1)).unwrap(), Value::I64(1299));
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(Value::float(-0.0), Value::float(0.0));
        let sum = Value::float(1.0).checked_sub(&Value::float(1.0)).unwrap();
        assert_eq!(sum, Value::float(0.0));
    }
}
