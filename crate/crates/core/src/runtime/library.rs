//! Built-in primitives.
//!
//! The image/text stubs stand in for the segmentation, style generation,
//! style transfer, classification and translation models of the worked
//! example. They are deterministic byte transforms so pipelines have fixed
//! expected outputs. The `zoomath` package covers every type kind and is
//! used for randomised composition tests.

use super::{nd_fold, nd_map, Ndarray, PrimitiveRegistry};
use crate::service::{DataType, TypedValue};

pub const SEGMENT: &str = "d79e9";
pub const STYLE: &str = "a11ce";
pub const STYLE_TRANSFER: &str = "6f28d";
pub const CLASSIFY: &str = "aa36e";
pub const TRANSLATE: &str = "7f32a";
pub const MATH: &str = "zoomath";

/// Class labels, indexed by the FNV-1a hash of the image bytes.
pub const LABELS: [&str; 8] = ["cat", "dog", "bird", "car", "tree", "house", "boat", "flower"];

pub const EN_FR: [(&str, &str); 8] = [
    ("cat", "chat"),
    ("dog", "chien"),
    ("bird", "oiseau"),
    ("car", "voiture"),
    ("tree", "arbre"),
    ("house", "maison"),
    ("boat", "bateau"),
    ("flower", "fleur"),
];

pub const STYLE_IMAGE: &[u8] = b"\x89PNG\r\n\x1a\nSTYLE:starry-night";

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    bytes
        .iter()
        .fold(0x811c_9dc5u32, |h, &b| (h ^ u32::from(b)).wrapping_mul(0x0100_0193))
}

fn blob(v: &TypedValue) -> Result<&[u8], String> {
    v.as_blob()
        .ok_or_else(|| format!("expected a media blob, got {}", v.dtype()))
}

fn float(v: &TypedValue) -> Result<f64, String> {
    match v.payload() {
        crate::service::Payload::Float(x) => Ok(*x),
        _ => Err(format!("expected float, got {}", v.dtype())),
    }
}

fn int(v: &TypedValue) -> Result<i64, String> {
    match v.payload() {
        crate::service::Payload::Int(x) => Ok(*x),
        _ => Err(format!("expected int, got {}", v.dtype())),
    }
}

fn boolean(v: &TypedValue) -> Result<bool, String> {
    match v.payload() {
        crate::service::Payload::Bool(x) => Ok(*x),
        _ => Err(format!("expected bool, got {}", v.dtype())),
    }
}

fn array(v: &TypedValue) -> Result<&Ndarray, String> {
    v.as_array()
        .ok_or_else(|| format!("expected ndarray, got {}", v.dtype()))
}

fn string(v: &TypedValue) -> Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected string, got {}", v.dtype()))
}

pub fn segment(img: &[u8]) -> Vec<u8> {
    img.iter().map(|b| b.rotate_left(1)).collect()
}

pub fn transfer_style(content: &[u8], style: &[u8]) -> Vec<u8> {
    if style.is_empty() {
        return content.to_vec();
    }
    content.iter().zip(style.iter().cycle()).map(|(c, s)| c ^ s).collect()
}

pub fn classify(img: &[u8]) -> &'static str {
    LABELS[fnv1a32(img) as usize % LABELS.len()]
}

pub fn translate_en_fr(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            EN_FR
                .iter()
                .find(|(en, _)| *en == w)
                .map_or_else(|| format!("[{w}]"), |(_, fr)| (*fr).to_string())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub(super) fn register_all(reg: &mut PrimitiveRegistry) {
    register_use_case(reg);
    register_math(reg);
}

fn register_use_case(reg: &mut PrimitiveRegistry) {
    reg.register(SEGMENT, "seg", "png_img -> png_img", |a| {
        Ok(TypedValue::media(DataType::png_img(), segment(blob(&a[0])?)))
    });
    reg.register(STYLE, "image_gen", "png_img", |_| {
        Ok(TypedValue::media(DataType::png_img(), STYLE_IMAGE))
    });
    reg.register(STYLE_TRANSFER, "run", "png_img -> png_img -> png_img", |a| {
        Ok(TypedValue::media(
            DataType::png_img(),
            transfer_style(blob(&a[0])?, blob(&a[1])?),
        ))
    });
    reg.register(CLASSIFY, "infer", "png_img -> en_text", |a| {
        Ok(TypedValue::media(DataType::en_text(), classify(blob(&a[0])?)))
    });
    reg.register(TRANSLATE, "trans", "en_text -> fr_text", |a| {
        let text = String::from_utf8(blob(&a[0])?.to_vec()).map_err(|e| e.to_string())?;
        Ok(TypedValue::media(DataType::fr_text(), translate_en_fr(&text)))
    });
}

fn register_math(reg: &mut PrimitiveRegistry) {
    reg.register(MATH, "one", "float", |_| Ok(TypedValue::float(1.0)));
    reg.register(MATH, "square", "float -> float", |a| {
        Ok(TypedValue::float(float(&a[0])?.powi(2)))
    });
    reg.register(MATH, "addf", "float -> float -> float", |a| {
        Ok(TypedValue::float(float(&a[0])? + float(&a[1])?))
    });
    reg.register(MATH, "subf", "float -> float -> float", |a| {
        Ok(TypedValue::float(float(&a[0])? - float(&a[1])?))
    });
    reg.register(MATH, "round", "float -> int", |a| {
        let x = float(&a[0])?;
        if x.is_finite() && x.abs() < 9.0e15 {
            Ok(TypedValue::int(x.round() as i64))
        } else {
            Err(format!("cannot round {x}"))
        }
    });
    reg.register(MATH, "to_float", "int -> float", |a| {
        Ok(TypedValue::float(int(&a[0])? as f64))
    });
    reg.register(MATH, "range", "int -> ndarray", |a| {
        let n = int(&a[0])?.unsigned_abs() % 64 + 1;
        Ok(TypedValue::array(
            Ndarray::arange(n as usize).map_err(|e| e.to_string())?,
        ))
    });
    reg.register(MATH, "scale2", "ndarray -> ndarray", |a| {
        Ok(TypedValue::array(nd_map(|x| 2.0 * x, array(&a[0])?)))
    });
    reg.register(MATH, "sum", "ndarray -> float", |a| {
        Ok(TypedValue::float(nd_fold(|s, x| s + x, 0.0, array(&a[0])?)))
    });
    reg.register(MATH, "is_pos", "float -> bool", |a| {
        Ok(TypedValue::bool(float(&a[0])? > 0.0))
    });
    reg.register(MATH, "not", "bool -> bool", |a| Ok(TypedValue::bool(!boolean(&a[0])?)));
    reg.register(MATH, "show", "float -> string", |a| {
        Ok(TypedValue::string(format!("{}", float(&a[0])?)))
    });
    reg.register(MATH, "len", "string -> int", |a| {
        Ok(TypedValue::int(string(&a[0])?.chars().count() as i64))
    });
    reg.register(MATH, "caption", "png_img -> en_text", |a| {
        Ok(TypedValue::media(DataType::en_text(), classify(blob(&a[0])?)))
    });
    reg.register(MATH, "speak", "en_text -> en_voice", |a| {
        Ok(TypedValue::media(DataType::en_voice(), segment(blob(&a[0])?)))
    });
    reg.register(MATH, "to_png", "jpeg_img -> png_img", |a| {
        Ok(TypedValue::media(
            DataType::png_img(),
            blob(&a[0])?.iter().rev().copied().collect::<Vec<u8>>(),
        ))
    });
    reg.register(MATH, "brightness", "png_img -> float", |a| {
        let b = blob(&a[0])?;
        Ok(TypedValue::float(b.iter().map(|&x| f64::from(x)).sum::<f64>()))
    });
}
