//! Fixture packages and program for the worked example: segment an image,
//! restyle it with a generated style image, classify it and translate the
//! label to French.

use std::collections::BTreeMap;

use crate::runtime::{library, PrimitiveRegistry};
use crate::store::{Files, PackageRepo, StoreError, VersionRef};

pub const PROGRAM: &str = r#"(* Image classification *)
let s_img = $ "aa36e" # "infer";;
(* Image segmentation *)
let s_seg = $ "d79e9" # "seg";;
(* Neural style transfer *)
let s_nst = $ "6f28d" # "run";;
(* Translation from English to French *)
let s_trans = $ "7f32a" # "trans";;
(* Alice's image generation service *)
let s_style = $ "a11ce" # "image_gen";;

(* Compose services *)
let s = [s_seg; s_style] $> s_nst $> s_img $> s_trans;;
(* Publish to a new container image *)
let pub = s $@ CONTAINER "alice/image_service:latest";;
"#;

/// Signature of the composed pipeline.
pub const PIPELINE_SIGNATURE: &str = "png_img -> fr_text";

/// A small PNG-tagged payload used as the pipeline input.
pub const SAMPLE_PNG: &[u8] = b"\x89PNG\r\n\x1a\n\x00\x00\x00\rIHDR\x00\x00\x00\x10\x00\x00\x00\x10\x08\x02alice-photo";

const SCRIPT_NOTES: [(&str, &str); 5] = [
    (library::CLASSIFY, "image classification"),
    (library::SEGMENT, "image segmentation"),
    (library::STYLE_TRANSFER, "neural style transfer"),
    (library::TRANSLATE, "english to french translation"),
    (library::STYLE, "style image generation"),
];

/// Package contents for each fixture id: the registry-derived `zoo.json`
/// plus a placeholder script.
pub fn packages() -> Vec<(&'static str, Files)> {
    let reg = PrimitiveRegistry::builtin();
    SCRIPT_NOTES
        .iter()
        .map(|(gid, note)| {
            let mut files = reg.config_for(gid);
            files.insert("service.ml".into(), format!("(* {note} *)\n").into_bytes());
            (*gid, files)
        })
        .chain(std::iter::once((library::MATH, {
            let mut files = reg.config_for(library::MATH);
            files.insert("service.ml".into(), b"(* numeric helpers *)\n".to_vec());
            files
        })))
        .collect()
}

/// Publishes every fixture package into `repo`.
pub fn seed(repo: &dyn PackageRepo) -> Result<BTreeMap<String, VersionRef>, StoreError> {
    packages()
        .into_iter()
        .map(|(gid, files)| Ok((gid.to_string(), repo.publish_package(files, Some(gid), true)?)))
        .collect()
}
