#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qrshrink"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn qrshrink")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `n` rows with covariates a..f (d, e, f inactive) and response y.
pub fn write_linear_csv(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("a,b,c,d,e,f,y\n");
    for _ in 0..n {
        let x: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e: f64 = StandardNormal.sample(&mut rng);
        let y = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2] + e;
        let row: Vec<String> = x.iter().chain(std::iter::once(&y)).map(|v| format!("{v:.6}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    let p = dir.join("linear.csv");
    std::fs::write(&p, s).unwrap();
    p
}

/// Checks `v` against the subset of JSON Schema used by the shipped
/// schemas: type, enum, required, properties, additionalProperties, items,
/// minItems, maxItems, minimum, maximum, exclusive bounds and local `$ref`.
pub fn validate(schema: &Value, v: &Value) -> Result<(), String> {
    check(schema, schema, v, "$")
}

fn type_ok(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn check(root: &Value, s: &Value, v: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").ok_or_else(|| format!("unsupported $ref {r}"))?;
        return check(root, &root["$defs"][name], v, at);
    }
    match s.get("type") {
        Some(Value::String(t)) if !type_ok(t, v) => return Err(format!("{at}: expected {t}, got {v}")),
        Some(Value::Array(ts)) if !ts.iter().any(|t| type_ok(t.as_str().unwrap_or(""), v)) => {
            return Err(format!("{at}: type not in {ts:?}"))
        }
        _ => {}
    }
    if let Some(Value::Array(opts)) = s.get("enum") {
        if !opts.contains(v) {
            return Err(format!("{at}: {v} not in enum"));
        }
    }
    if let Some(x) = v.as_f64() {
        let bound = |k: &str| s.get(k).and_then(Value::as_f64);
        if bound("minimum").is_some_and(|m| x < m)
            || bound("maximum").is_some_and(|m| x > m)
            || bound("exclusiveMinimum").is_some_and(|m| x <= m)
            || bound("exclusiveMaximum").is_some_and(|m| x >= m)
        {
            return Err(format!("{at}: {x} out of bounds"));
        }
    }
    if let Some(obj) = v.as_object() {
        if let Some(Value::Array(req)) = s.get("required") {
            for k in req {
                if !obj.contains_key(k.as_str().unwrap()) {
                    return Err(format!("{at}: missing {k}"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(ps) => check(root, ps, val, &format!("{at}.{k}"))?,
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let Some(arr) = v.as_array() {
        let n = arr.len() as u64;
        if s.get("minItems").and_then(Value::as_u64).is_some_and(|m| n < m)
            || s.get("maxItems").and_then(Value::as_u64).is_some_and(|m| n > m)
        {
            return Err(format!("{at}: {n} items out of range"));
        }
        if let Some(is) = s.get("items") {
            for (i, e) in arr.iter().enumerate() {
                check(root, is, e, &format!("{at}[{i}]"))?;
            }
        }
    }
    Ok(())
}
