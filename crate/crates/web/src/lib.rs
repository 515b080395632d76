//! Browser bindings: type-check a composition program, run one of its
//! services on a typed-in input, and trace gradient descent.
//!
//! Every export returns a JSON string; failures come back as a thrown
//! JSON string with a `message` field (plus `line`/`col` for program
//! errors). The plain functions are usable natively, which is how they
//! are tested.

use serde_json::{json, Value as Json};
use wasm_bindgen::prelude::*;
use zoo_core::dsl::{self, DslError, Env, EvalError, ParseError, Value};
use zoo_core::runtime::{execute, gradient_descent_trace, GdConfig, Ndarray, PrimitiveRegistry};
use zoo_core::service::{DataType, MediaBase, Payload, PrimitiveKind, Service, TypedValue};
use zoo_core::store::MemoryStore;
use zoo_core::usecase;

/// Longest trace sent back to the page.
const MAX_TRACE_POINTS: usize = 200;

fn fail(message: impl std::fmt::Display) -> Json {
    json!({ "message": message.to_string() })
}

fn program_error(e: &DslError) -> Json {
    let (line, col) = match e {
        DslError::Parse(
            ParseError::SyntaxError { line, col, .. }
            | ParseError::UnterminatedString { line, col }
            | ParseError::UnknownBackendKeyword { line, col, .. },
        ) => (*line, *col),
        DslError::Eval(EvalError { span, .. }) => (span.line, span.col),
    };
    json!({ "message": e.to_string(), "line": line, "col": col })
}

/// Checks `src` against the example packages.
fn checked(src: &str) -> Result<Env, Json> {
    let repo = MemoryStore::new();
    usecase::seed(&repo).map_err(fail)?;
    dsl::check(src, &repo).map_err(|e| program_error(&e))
}

pub fn check_json(src: &str) -> Result<Json, Json> {
    let env = checked(src)?;
    let bindings: Vec<Json> = env
        .iter()
        .map(|(name, v)| {
            let service = match v {
                Value::Service(s) | Value::Planned { service: s, .. } => Some(s),
                _ => None,
            };
            json!({
                "name": name,
                "kind": v.describe(),
                "value": v.to_string(),
                "type": service.map(Service::type_string),
                "runnable": matches!(v, Value::Service(_)),
            })
        })
        .collect();
    Ok(json!({ "bindings": bindings }))
}

/// Turns typed-in text into a value of type `t`. Images are the sample
/// PNG with the text appended, so different text gives a different image.
fn input_value(t: &DataType, text: &str) -> Result<TypedValue, Json> {
    let bad = |what: &str| fail(format!("`{text}` is not a valid {what} for {t}"));
    let text = text.trim();
    Ok(match t {
        DataType::Primitive(PrimitiveKind::Int) => TypedValue::int(text.parse().map_err(|_| bad("integer"))?),
        DataType::Primitive(PrimitiveKind::Float) => TypedValue::float(text.parse().map_err(|_| bad("number"))?),
        DataType::Primitive(PrimitiveKind::Bool) => TypedValue::bool(text.parse().map_err(|_| bad("boolean"))?),
        DataType::Primitive(PrimitiveKind::String) => TypedValue::string(text),
        DataType::Media {
            base: MediaBase::Image, ..
        } => TypedValue::media(t.clone(), [usecase::SAMPLE_PNG, text.as_bytes()].concat()),
        DataType::Media { .. } => TypedValue::media(t.clone(), text.as_bytes()),
        DataType::Ndarray => {
            let xs = text
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("comma-separated list"))?;
            TypedValue::array(Ndarray::vector(xs).map_err(fail)?)
        }
    })
}

fn render(v: &TypedValue) -> String {
    match v.payload() {
        Payload::Blob(b)
            if matches!(
                v.dtype(),
                DataType::Media {
                    base: MediaBase::Text,
                    ..
                }
            ) =>
        {
            String::from_utf8_lossy(b).into_owned()
        }
        Payload::Blob(b) => format!("<{} bytes>", b.len()),
        _ => v.to_wire()["data"].to_string(),
    }
}

/// Runs the service bound to `binding`, one input per `;`-separated
/// field of `inputs`.
pub fn run_json(src: &str, binding: &str, inputs: &str) -> Result<Json, Json> {
    let env = checked(src)?;
    let s = env
        .get(binding)
        .ok_or_else(|| fail(format!("no binding named `{binding}`")))?
        .as_service()
        .ok_or_else(|| fail(format!("`{binding}` is not a service")))?;
    let fields: Vec<&str> = if s.arity() == 0 {
        Vec::new()
    } else {
        inputs.split(';').collect()
    };
    if fields.len() != s.arity() {
        return Err(fail(format!(
            "{} takes {} inputs ({}), got {}",
            s.name(),
            s.arity(),
            s.type_string(),
            fields.len()
        )));
    }
    let args = s
        .inputs()
        .iter()
        .zip(&fields)
        .map(|(t, f)| input_value(t, f))
        .collect::<Result<Vec<_>, _>>()?;
    let out = execute(s, &args, &PrimitiveRegistry::builtin()).map_err(fail)?;
    Ok(json!({ "type": out.dtype().token(), "display": render(&out), "wire": out.to_wire() }))
}

pub fn objective(name: &str) -> Option<fn(f64) -> f64> {
    match name {
        "sin" => Some(f64::sin),
        "cubic" => Some(|x| x * x * x - 2.0 * x * x + 2.0),
        _ => None,
    }
}

pub fn gd_json(name: &str, x0: f64, step: f64) -> Result<Json, Json> {
    let f = objective(name).ok_or_else(|| fail(format!("unknown objective `{name}` (sin or cubic)")))?;
    let cfg = GdConfig {
        max_iters: 200_000,
        ..GdConfig::starting_at(x0).with_step(step)
    };
    let (out, xs) = gradient_descent_trace(f, &cfg);
    let out = out.map_err(fail)?;
    let stride = xs.len().div_ceil(MAX_TRACE_POINTS).max(1);
    let mut trace: Vec<Json> = xs.iter().step_by(stride).map(|&x| json!([x, f(x)])).collect();
    if (xs.len() - 1) % stride != 0 {
        let last = out.x;
        trace.push(json!([last, f(last)]));
    }
    Ok(json!({
        "x": out.x,
        "fx": f(out.x),
        "iterations": out.iterations,
        "converged": out.converged,
        "trace": trace,
    }))
}

fn to_js(r: Result<Json, Json>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn example_program() -> String {
    usecase::PROGRAM.to_string()
}

#[wasm_bindgen]
pub fn check_program(src: &str) -> Result<String, JsValue> {
    to_js(check_json(src))
}

#[wasm_bindgen]
pub fn run_service(src: &str, binding: &str, inputs: &str) -> Result<String, JsValue> {
    to_js(run_json(src, binding, inputs))
}

#[wasm_bindgen]
pub fn gd_trace(objective: &str, x0: f64, step: f64) -> Result<String, JsValue> {
    to_js(gd_json(objective, x0, step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_checks() {
        let v = check_json(usecase::PROGRAM).unwrap();
        let b = v["bindings"].as_array().unwrap();
        let s = b.iter().find(|b| b["name"] == "s").unwrap();
        assert_eq!(s["type"], usecase::PIPELINE_SIGNATURE);
        assert_eq!(s["runnable"], true);
        let p = b.iter().find(|b| b["name"] == "pub").unwrap();
        assert_eq!(p["kind"], "planned deployment");
        assert_eq!(p["runnable"], false);
    }

    #[test]
    fn errors_carry_positions() {
        let src = "let a = $ \"7f32a\" # \"trans\";;\nlet b = $ \"aa36e\" # \"infer\";;\nlet c = a $> b;;";
        let e = check_json(src).unwrap_err();
        assert_eq!((e["line"].as_u64(), e["col"].as_u64()), (Some(3), Some(9)));
        let m = e["message"].as_str().unwrap();
        assert!(m.contains("expected png_img") && m.contains("found fr_text"), "{m}");

        let e = check_json("let a = $ \"x").unwrap_err();
        assert_eq!(e["line"], 1);
    }

    #[test]
    fn runs_translation_and_pipeline() {
        let v = run_json(usecase::PROGRAM, "s_trans", "car").unwrap();
        assert_eq!(v["display"], "voiture");
        assert_eq!(v["type"], "fr_text");

        let v = run_json(usecase::PROGRAM, "s", "holiday photo").unwrap();
        assert_eq!(v["type"], "fr_text");
        assert!(!v["display"].as_str().unwrap().is_empty());

        let v = run_json(usecase::PROGRAM, "s_style", "").unwrap();
        assert_eq!(v["type"], "png_img");
        assert!(run_json(usecase::PROGRAM, "pub", "").is_err());
        assert!(run_json(usecase::PROGRAM, "s_nst", "a").is_err());
    }

    #[test]
    fn input_parsing() {
        assert_eq!(
            input_value(&DataType::Primitive(PrimitiveKind::Int), " 7 ").unwrap(),
            TypedValue::int(7)
        );
        assert!(input_value(&DataType::Primitive(PrimitiveKind::Int), "x").is_err());
        let a = input_value(&DataType::Ndarray, "1, 2,3").unwrap();
        assert_eq!(a.as_array().unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn gd_trace_reaches_known_minima() {
        let v = gd_json("cubic", 4.0, 0.01).unwrap();
        assert!((v["x"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-4);
        let v = gd_json("sin", 5.0, 0.01).unwrap();
        assert!((v["x"].as_f64().unwrap() - 1.5 * std::f64::consts::PI).abs() < 1e-4);
        let trace = v["trace"].as_array().unwrap();
        assert!(trace.len() <= MAX_TRACE_POINTS + 1);
        assert_eq!(trace[0][0], 5.0);
        assert_eq!(trace.last().unwrap()[0], v["x"]);
        assert!(gd_json("tan", 1.0, 0.01).is_err());
        assert!(gd_json("sin", 1.0, -1.0).is_err());
    }
}
