//! Media-type lattice and arrow-typed service signatures.
//!
//! Type tokens are whitespace-free so that the arrow grammar stays trivial:
//! primitives (`int`, `float`, `bool`, `string`), `ndarray`, and media types
//! spelled `<subtype>_<base>` where base is one of `img`, `text`, `voice`.
//! Additional media subtypes and legacy aliases can be registered at runtime.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{LazyLock, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeParseError {
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("empty signature")]
    EmptySignature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveKind {
    Int,
    Float,
    Bool,
    String,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [Self::Int, Self::Float, Self::Bool, Self::String];

    fn token(self) -> &'static str {
        match self {
            Self::Int => "int",
            Self::Float => "float",
            Self::Bool => "bool",
            Self::String => "string",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MediaBase {
    Image,
    Text,
    Voice,
}

impl MediaBase {
    pub const ALL: [MediaBase; 3] = [Self::Image, Self::Text, Self::Voice];

    /// Suffix used in type tokens (`png_img`, `en_text`, `fr_voice`).
    pub fn suffix(self) -> &'static str {
        match self {
            Self::Image => "img",
            Self::Text => "text",
            Self::Voice => "voice",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.suffix() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataType {
    Primitive(PrimitiveKind),
    Ndarray,
    Media { base: MediaBase, subtype: String },
}

impl DataType {
    pub fn media(base: MediaBase, subtype: &str) -> Self {
        DataType::Media {
            base,
            subtype: subtype.to_string(),
        }
    }

    pub fn png_img() -> Self {
        Self::media(MediaBase::Image, "png")
    }

    pub fn jpeg_img() -> Self {
        Self::media(MediaBase::Image, "jpeg")
    }

    pub fn en_text() -> Self {
        Self::media(MediaBase::Text, "en")
    }

    pub fn fr_text() -> Self {
        Self::media(MediaBase::Text, "fr")
    }

    pub fn en_voice() -> Self {
        Self::media(MediaBase::Voice, "en")
    }

    pub fn fr_voice() -> Self {
        Self::media(MediaBase::Voice, "fr")
    }

    pub fn token(&self) -> String {
        self.to_string()
    }

    /// Every type currently known to the registry, in a stable order.
    pub fn known() -> Vec<DataType> {
        let mut out: Vec<DataType> = PrimitiveKind::ALL.into_iter().map(DataType::Primitive).collect();
        out.push(DataType::Ndarray);
        let reg = REGISTRY.read().expect("type registry poisoned");
        for (base, subs) in &reg.subtypes {
            for s in subs {
                out.push(DataType::media(*base, s));
            }
        }
        out
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataType::Primitive(k) => f.write_str(k.token()),
            DataType::Ndarray => f.write_str("ndarray"),
            DataType::Media { base, subtype } => write!(f, "{subtype}_{}", base.suffix()),
        }
    }
}

impl FromStr for DataType {
    type Err = TypeParseError;

    fn from_str(token: &str) -> Result<Self, Self::Err> {
        let token = token.trim();
        let unknown = || TypeParseError::UnknownType(token.to_string());
        if let Some(k) = PrimitiveKind::ALL.into_iter().find(|k| k.token() == token) {
            return Ok(DataType::Primitive(k));
        }
        if token == "ndarray" {
            return Ok(DataType::Ndarray);
        }
        let reg = REGISTRY.read().expect("type registry poisoned");
        if let Some(t) = reg.aliases.get(token) {
            return Ok(t.clone());
        }
        let (subtype, suffix) = token.rsplit_once('_').ok_or_else(unknown)?;
        let base = MediaBase::from_suffix(suffix).ok_or_else(unknown)?;
        if reg.subtypes[&base].contains(subtype) {
            Ok(DataType::media(base, subtype))
        } else {
            Err(unknown())
        }
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

struct TypeRegistry {
    subtypes: BTreeMap<MediaBase, BTreeSet<String>>,
    aliases: BTreeMap<String, DataType>,
}

static REGISTRY: LazyLock<RwLock<TypeRegistry>> = LazyLock::new(|| {
    let mut subtypes = BTreeMap::new();
    subtypes.insert(MediaBase::Image, ["png", "jpeg"].map(String::from).into());
    subtypes.insert(MediaBase::Text, ["en", "fr"].map(String::from).into());
    subtypes.insert(MediaBase::Voice, ["en", "fr"].map(String::from).into());
    RwLock::new(TypeRegistry {
        subtypes,
        aliases: BTreeMap::new(),
    })
});

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

/// Adds a media subtype (e.g. `gif` for images, making `gif_img` parseable).
pub fn register_media_subtype(base: MediaBase, subtype: &str) -> Result<DataType, TypeParseError> {
    if !valid_ident(subtype) {
        return Err(TypeParseError::UnknownType(format!("{subtype}_{}", base.suffix())));
    }
    REGISTRY
        .write()
        .expect("type registry poisoned")
        .subtypes
        .get_mut(&base)
        .expect("every base is seeded")
        .insert(subtype.to_string());
    Ok(DataType::media(base, subtype))
}

/// Maps a legacy token (e.g. a bare `image`) onto a concrete type.
/// Bare base names are rejected unless an alias is registered for them.
pub fn register_alias(alias: &str, target: DataType) {
    REGISTRY
        .write()
        .expect("type registry poisoned")
        .aliases
        .insert(alias.to_string(), target);
}

/// Zero or more inputs and exactly one output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceSignature {
    pub inputs: Vec<DataType>,
    pub output: DataType,
}

impl ServiceSignature {
    pub fn new(inputs: Vec<DataType>, output: DataType) -> Self {
        Self { inputs, output }
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }
}

pub fn parse_type_string(s: &str) -> Result<ServiceSignature, TypeParseError> {
    if s.trim().is_empty() {
        return Err(TypeParseError::EmptySignature);
    }
    let mut types = s
        .split("->")
        .map(|tok| {
            let tok = tok.trim();
            if tok.is_empty() {
                Err(TypeParseError::UnknownType(String::new()))
            } else {
                tok.parse::<DataType>()
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let output = types.pop().expect("split yields at least one token");
    Ok(ServiceSignature { inputs: types, output })
}

pub fn format_type_string(sig: &ServiceSignature) -> String {
    sig.inputs
        .iter()
        .chain(std::iter::once(&sig.output))
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}

impl fmt::Display for ServiceSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_type_string(self))
    }
}

impl FromStr for ServiceSignature {
    type Err = TypeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_type_string(s)
    }
}

impl Serialize for ServiceSignature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ServiceSignature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
