// SPDX-License-Identifier: Apache-2.0

//! Scalar values carried by parameters and ports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datastore::DataRef;

/// Nominal type of a port or parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Integer,
    Float,
    String,
    Boolean,
    #[serde(rename = "dataref")]
    DataRef,
    Any,
}

/// Ports and parameters share one type lattice.
pub type PortType = ValueType;

impl ValueType {
    /// Whether a connection from a port of type `self` may feed a port of type
    /// `target`.
    ///
    /// `any` on either end defers the check to run time. The only implicit
    /// conversion is integer to float.
    pub fn feeds(self, target: ValueType) -> bool {
        target == ValueType::Any
            || self == ValueType::Any
            || self == target
            || (self == ValueType::Integer && target == ValueType::Float)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Integer => "integer",
            ValueType::Float => "float",
            ValueType::String => "string",
            ValueType::Boolean => "boolean",
            ValueType::DataRef => "dataref",
            ValueType::Any => "any",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Value {
    Integer(i64),
    Float(f64),
    String(String),
    Boolean(bool),
    #[serde(rename = "dataref")]
    DataRef(DataRef),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Integer(_) => ValueType::Integer,
            Value::Float(_) => ValueType::Float,
            Value::String(_) => ValueType::String,
            Value::Boolean(_) => ValueType::Boolean,
            Value::DataRef(_) => ValueType::DataRef,
        }
    }

    /// Type check with integer-to-float widening.
    pub fn conforms_to(&self, ty: ValueType) -> bool {
        self.coerce(ty).is_some()
    }

    /// Converts the value to `ty`, widening integers where a float is wanted.
    pub fn coerce(&self, ty: ValueType) -> Option<Value> {
        match (self, ty) {
            (Value::Integer(i), ValueType::Float) => Some(Value::Float(*i as f64)),
            (v, t) if t == ValueType::Any || v.value_type() == t => Some(v.clone()),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_dataref(&self) -> Option<&DataRef> {
        match self {
            Value::DataRef(r) => Some(r),
            _ => None,
        }
    }

    /// Parses command-line text into a value of type `ty`.
    ///
    /// For `any`, the first of integer, float, boolean that parses wins and
    /// everything else is a string. Datarefs cannot be parsed from text alone;
    /// callers resolve hashes against a store.
    pub fn parse_as(text: &str, ty: ValueType) -> Option<Value> {
        match ty {
            ValueType::Integer => text.parse().ok().map(Value::Integer),
            ValueType::Float => text
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(Value::Float),
            ValueType::Boolean => text.parse().ok().map(Value::Boolean),
            ValueType::String => Some(Value::String(text.to_owned())),
            ValueType::DataRef => None,
            ValueType::Any => Some(
                text.parse()
                    .ok()
                    .map(Value::Integer)
                    .or_else(|| {
                        text.parse::<f64>()
                            .ok()
                            .filter(|f| f.is_finite())
                            .map(Value::Float)
                    })
                    .or_else(|| text.parse().ok().map(Value::Boolean))
                    .unwrap_or_else(|| Value::String(text.to_owned())),
            ),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(i) => write!(f, "{i}"),
            // Debug keeps the trailing ".0" and prints the shortest round-trip form.
            Value::Float(x) => write!(f, "{x:?}"),
            Value::String(s) => write!(f, "{s:?}"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::DataRef(r) => write!(f, "dataref:{}", r.content_hash),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn any_is_a_universal_target() {
        for ty in [
            ValueType::Integer,
            ValueType::Float,
            ValueType::String,
            ValueType::Boolean,
            ValueType::DataRef,
        ] {
            assert!(ty.feeds(ValueType::Any));
            assert!(ty.feeds(ty));
        }
        assert!(!ValueType::Float.feeds(ValueType::String));
        assert!(ValueType::Integer.feeds(ValueType::Float));
        assert!(!ValueType::Float.feeds(ValueType::Integer));
    }

    #[test]
    fn conformance_widens_integers_only() {
        assert!(Value::Integer(3).conforms_to(ValueType::Float));
        assert!(!Value::Float(3.0).conforms_to(ValueType::Integer));
        assert!(Value::String("a".into()).conforms_to(ValueType::Any));
        assert!(!Value::Boolean(true).conforms_to(ValueType::String));
        assert_eq!(Value::Integer(2).coerce(ValueType::Float), Some(Value::Float(2.0)));
    }

    #[test]
    fn parse_any_prefers_integers() {
        assert_eq!(Value::parse_as("2", ValueType::Any), Some(Value::Integer(2)));
        assert_eq!(Value::parse_as("2.5", ValueType::Any), Some(Value::Float(2.5)));
        assert_eq!(Value::parse_as("true", ValueType::Any), Some(Value::Boolean(true)));
        assert_eq!(
            Value::parse_as("hello", ValueType::Any),
            Some(Value::String("hello".into()))
        );
        assert_eq!(Value::parse_as("x", ValueType::Float), None);
        assert_eq!(Value::parse_as("inf", ValueType::Float), None);
    }

    #[test]
    fn display_keeps_float_marker() {
        assert_eq!(Value::Float(5.0).to_string(), "5.0");
        assert_eq!(Value::Integer(5).to_string(), "5");
    }

    #[test]
    fn json_shape_is_tagged() {
        let json = serde_json::to_string(&Value::Float(5.0)).unwrap();
        assert_eq!(json, r#"{"type":"float","value":5.0}"#);
        let back: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Value::Float(5.0));
    }
}
