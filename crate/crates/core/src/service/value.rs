//! Typed runtime values and their JSON wire encoding.
//!
//! Wire form: `{"type": "<token>", "data": ...}` where `data` is a number,
//! bool or string for primitives, a base64 string for media blobs, and
//! `{"shape": [...], "values": [...]}` for ndarrays.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

use super::types::{DataType, PrimitiveKind};
use crate::runtime::Ndarray;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Blob(Vec<u8>),
    Array(Ndarray),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("payload does not match type `{0}`")]
    PayloadMismatch(DataType),
    #[error("malformed value encoding: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypedValue {
    dtype: DataType,
    payload: Payload,
}

impl TypedValue {
    pub fn new(dtype: DataType, payload: Payload) -> Result<Self, ValueError> {
        let ok = matches!(
            (&dtype, &payload),
            (DataType::Primitive(PrimitiveKind::Int), Payload::Int(_))
                | (DataType::Primitive(PrimitiveKind::Float), Payload::Float(_))
                | (DataType::Primitive(PrimitiveKind::Bool), Payload::Bool(_))
                | (DataType::Primitive(PrimitiveKind::String), Payload::Str(_))
                | (DataType::Ndarray, Payload::Array(_))
                | (DataType::Media { .. }, Payload::Blob(_))
        );
        if ok {
            Ok(Self { dtype, payload })
        } else {
            Err(ValueError::PayloadMismatch(dtype))
        }
    }

    pub fn int(v: i64) -> Self {
        Self {
            dtype: DataType::Primitive(PrimitiveKind::Int),
            payload: Payload::Int(v),
        }
    }

    pub fn float(v: f64) -> Self {
        Self {
            dtype: DataType::Primitive(PrimitiveKind::Float),
            payload: Payload::Float(v),
        }
    }

    pub fn bool(v: bool) -> Self {
        Self {
            dtype: DataType::Primitive(PrimitiveKind::Bool),
            payload: Payload::Bool(v),
        }
    }

    pub fn string(v: impl Into<String>) -> Self {
        Self {
            dtype: DataType::Primitive(PrimitiveKind::String),
            payload: Payload::Str(v.into()),
        }
    }

    pub fn array(a: Ndarray) -> Self {
        Self {
            dtype: DataType::Ndarray,
            payload: Payload::Array(a),
        }
    }

    /// Media value; panics if `dtype` is not a media type.
    pub fn media(dtype: DataType, bytes: impl Into<Vec<u8>>) -> Self {
        assert!(matches!(dtype, DataType::Media { .. }), "{dtype} is not a media type");
        Self {
            dtype,
            payload: Payload::Blob(bytes.into()),
        }
    }

    pub fn dtype(&self) -> &DataType {
        &self.dtype
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn as_blob(&self) -> Option<&[u8]> {
        match &self.payload {
            Payload::Blob(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.payload {
            Payload::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Text media decoded as UTF-8 (lossy).
    pub fn text(&self) -> Option<String> {
        self.as_blob().map(|b| String::from_utf8_lossy(b).into_owned())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self.payload {
            Payload::Float(v) => Some(v),
            Payload::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&Ndarray> {
        match &self.payload {
            Payload::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn to_wire(&self) -> Value {
        let data = match &self.payload {
            Payload::Int(v) => json!(v),
            Payload::Float(v) => json!(v),
            Payload::Bool(v) => json!(v),
            Payload::Str(s) => json!(s),
            Payload::Blob(b) => json!(BASE64.encode(b)),
            Payload::Array(a) => serde_json::to_value(a).expect("ndarray serializes"),
        };
        json!({ "type": self.dtype.token(), "data": data })
    }

    pub fn from_wire(v: &Value) -> Result<Self, ValueError> {
        let malformed = |m: &str| ValueError::Malformed(m.to_string());
        let obj = v.as_object().ok_or_else(|| malformed("value must be an object"))?;
        let token = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing string field `type`"))?;
        let dtype: DataType = token.parse().map_err(|e| ValueError::Malformed(format!("{e}")))?;
        let data = obj.get("data").ok_or_else(|| malformed("missing field `data`"))?;
        let payload = match &dtype {
            DataType::Primitive(PrimitiveKind::Int) => {
                Payload::Int(data.as_i64().ok_or_else(|| malformed("expected integer data"))?)
            }
            DataType::Primitive(PrimitiveKind::Float) => {
                Payload::Float(data.as_f64().ok_or_else(|| malformed("expected numeric data"))?)
            }
            DataType::Primitive(PrimitiveKind::Bool) => {
                Payload::Bool(data.as_bool().ok_or_else(|| malformed("expected boolean data"))?)
            }
            DataType::Primitive(PrimitiveKind::String) => Payload::Str(
                data.as_str()
                    .ok_or_else(|| malformed("expected string data"))?
                    .to_string(),
            ),
            DataType::Ndarray => {
                Payload::Array(serde_json::from_value(data.clone()).map_err(|e| ValueError::Malformed(e.to_string()))?)
            }
            DataType::Media { .. } => {
                let s = data.as_str().ok_or_else(|| malformed("expected base64 string data"))?;
                Payload::Blob(BASE64.decode(s).map_err(|e| ValueError::Malformed(e.to_string()))?)
            }
        };
        Ok(Self { dtype, payload })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_must_match() {
        assert!(TypedValue::new(DataType::png_img(), Payload::Int(3)).is_err());
        assert!(TypedValue::new(DataType::png_img(), Payload::Blob(vec![1])).is_ok());
        assert!(TypedValue::new(DataType::Ndarray, Payload::Float(1.0)).is_err());
    }

    #[test]
    fn wire_encoding_shapes() {
        let v = TypedValue::media(DataType::png_img(), b"\x89PNG".to_vec());
        assert_eq!(v.to_wire(), json!({"type": "png_img", "data": "iVBORw=="}));
        let a = TypedValue::array(Ndarray::from_vec(vec![1, 2], vec![1.0, 2.5]).unwrap());
        assert_eq!(
            a.to_wire(),
            json!({"type": "ndarray", "data": {"shape": [1, 2], "values": [1.0, 2.5]}})
        );
        for v in [
            v,
            a,
            TypedValue::int(-4),
            TypedValue::string("x"),
            TypedValue::bool(true),
            TypedValue::float(0.25),
        ] {
            assert_eq!(TypedValue::from_wire(&v.to_wire()).unwrap(), v);
        }
    }

    #[test]
    fn malformed_wire_values() {
        for bad in [
            json!(3),
            json!({"type": "png_img"}),
            json!({"type": "banana", "data": 1}),
            json!({"type": "int", "data": "x"}),
            json!({"type": "png_img", "data": "***"}),
            json!({"type": "ndarray", "data": {"shape": [3], "values": [1.0]}}),
        ] {
            assert!(
                matches!(TypedValue::from_wire(&bad), Err(ValueError::Malformed(_))),
                "{bad}"
            );
        }
    }
}
