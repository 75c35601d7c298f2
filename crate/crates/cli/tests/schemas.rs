//! Reports emitted by the binary validate against the schemas in `docs/schemas`.
//!
//! The validator covers the keywords those schemas use: `type`, `enum`,
//! `const`, `required`, `properties`, `additionalProperties: false`, `items`,
//! `minItems`, `maxItems`, `minimum`, `maximum`, `oneOf` and local `$ref`.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        other => panic!("unsupported type `{other}`"),
    }
}

fn validate(root: &Value, schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    let s = schema.as_object().expect("schema object");
    if let Some(r) = s.get("$ref") {
        let pointer = r.as_str().unwrap().strip_prefix('#').expect("local reference");
        let target = root.pointer(pointer).unwrap_or_else(|| panic!("dangling {r}"));
        return validate(root, target, v, path, errors);
    }
    let mut fail = |msg: String| errors.push(format!("{path}: {msg}"));
    for key in s.keys() {
        let known = [
            "$schema", "title", "description", "$defs", "type", "enum", "const", "required", "properties",
            "additionalProperties", "items", "minItems", "maxItems", "minimum", "maximum", "oneOf",
        ];
        assert!(known.contains(&key.as_str()), "unsupported keyword `{key}`");
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(name) => type_matches(name, v),
            Value::Array(names) => names.iter().any(|n| type_matches(n.as_str().unwrap(), v)),
            _ => panic!("bad type"),
        };
        if !ok {
            return fail(format!("expected type {t}, found {v}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(v) {
            fail(format!("{v} not in {options:?}"));
        }
    }
    if let Some(c) = s.get("const") {
        if c != v {
            fail(format!("expected {c}, found {v}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if s.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            fail(format!("{x} below minimum"));
        }
        if s.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            fail(format!("{x} above maximum"));
        }
    }
    if let Some(Value::Array(options)) = s.get("oneOf") {
        let matching = options
            .iter()
            .filter(|o| {
                let mut e = Vec::new();
                validate(root, o, v, path, &mut e);
                e.is_empty()
            })
            .count();
        if matching != 1 {
            fail(format!("{matching} oneOf branches match"));
        }
    }
    if let Value::Object(map) = v {
        for r in s.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !map.contains_key(r.as_str().unwrap()) {
                fail(format!("missing {r}"));
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, child) in map {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => validate(root, sub, child, &format!("{path}.{k}"), errors),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{path}: unexpected property `{k}`"))
                }
                None => {}
            }
        }
    }
    if let Value::Array(items) = v {
        let n = items.len() as u64;
        if s.get("minItems").and_then(Value::as_u64).is_some_and(|m| n < m) {
            errors.push(format!("{path}: {n} items, fewer than minItems"));
        }
        if s.get("maxItems").and_then(Value::as_u64).is_some_and(|m| n > m) {
            errors.push(format!("{path}: {n} items, more than maxItems"));
        }
        if let Some(item) = s.get("items") {
            for (i, child) in items.iter().enumerate() {
                validate(root, item, child, &format!("{path}[{i}]"), errors);
            }
        }
    }
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn errors(name: &str, doc: &Value) -> Vec<String> {
    let s = schema(name);
    let mut e = Vec::new();
    validate(&s, &s, doc, "$", &mut e);
    e
}

fn run(args: &[&str]) -> Value {
    let o = Command::new(env!("CARGO_BIN_EXE_epnkit"))
        .args(args)
        .output()
        .expect("spawn epnkit");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn small_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.cfg").to_str().unwrap().to_string()
}

#[test]
fn every_report_matches_its_schema() {
    let cfg = small_config();
    let docs = [
        ("group", run(&["group", "build", "--kind", "octa"])),
        ("audit", run(&["audit", "--points", "24", "--channels", "3"])),
        ("bench", run(&["bench", "--dry", "--kernel-points", "2,4", "--group-neighbors", "2", "--points", "16"])),
        ("pose", run(&["train", "pose", "--config", &cfg])),
        ("cls", run(&["train", "cls", "--config", &cfg])),
    ];
    for (name, doc) in &docs {
        let e = errors(name, doc);
        assert!(e.is_empty(), "{name}: {e:#?}");
    }
}

#[test]
fn validator_rejects_broken_reports() {
    let mut doc = run(&["bench", "--dry", "--kernel-points", "2", "--group-neighbors", "2", "--points", "8"]);
    doc["rows"][0]["naive_macs"] = Value::from(-1);
    doc["group"] = Value::from("dodecahedral");
    doc.as_object_mut().unwrap().remove("pass");
    doc["extra"] = Value::from(1);
    let e = errors("bench", &doc);
    for needle in ["naive_macs", "dodecahedral", "missing \"pass\"", "unexpected property `extra`"] {
        assert!(e.iter().any(|m| m.contains(needle)), "{needle} not reported in {e:#?}");
    }
}
