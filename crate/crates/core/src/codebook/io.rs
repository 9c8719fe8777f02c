//! The code16/v1 JSON file format.

use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{check_values, Code16, CodeKind, Params, CODE_LEN};
use crate::error::{Error, Result};

pub const CODE_FORMAT: &str = "code16/v1";

fn render(code: &Code16) -> Result<String> {
    let values: Vec<String> = code.values().iter().map(|v| format!("{v:.16e}")).collect();
    let block_size = code
        .block_size()
        .map_or_else(|| "null".to_string(), |b| b.to_string());
    let params = serde_json::to_string_pretty(code.params())
        .map_err(|e| Error::format(format!("cannot serialize params: {e}")))?
        .replace('\n', "\n  ");
    Ok(format!(
        "{{\n  \"format\": \"{CODE_FORMAT}\",\n  \"kind\": \"{}\",\n  \"block_size\": {block_size},\n  \"values\": [\n    {}\n  ],\n  \"params\": {params}\n}}\n",
        code.kind(),
        values.join(",\n    ")
    ))
}

pub fn code_write(code: &Code16, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render(code)?)?;
    Ok(())
}

fn parse(text: &str) -> Result<Code16> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::format(format!("invalid JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::format("code file must hold a JSON object"))?;
    match obj.get("format").and_then(Value::as_str) {
        Some(CODE_FORMAT) => {}
        Some(other) => {
            return Err(Error::format(format!(
                "unsupported format {other:?}, expected {CODE_FORMAT:?}"
            )))
        }
        None => return Err(Error::format("missing \"format\" field")),
    }
    let kind: CodeKind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::format("missing \"kind\" field"))?
        .parse()
        .map_err(|e: Error| Error::format(e.to_string()))?;
    let block_size = match obj.get("block_size") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .and_then(|b| usize::try_from(b).ok())
                .ok_or_else(|| Error::format(format!("block_size must be an integer, got {v}")))?,
        ),
    };
    let raw = obj
        .get("values")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format("missing \"values\" array"))?;
    let values = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .ok_or_else(|| Error::format(format!("value {} is not a number: {v}", i + 1)))
        })
        .collect::<Result<Vec<f64>>>()?;
    check_values(&values).map_err(Error::Format)?;
    let params: Params = match obj.get("params") {
        None | Some(Value::Null) => Params::new(),
        Some(Value::Object(map)) => map.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Some(v) => return Err(Error::format(format!("params must be an object, got {v}"))),
    };
    let values: [f64; CODE_LEN] = values.try_into().expect("length checked");
    Code16::new(values, kind, block_size, params).map_err(|e| Error::format(e.to_string()))
}

pub fn code_read(path: impl AsRef<Path>) -> Result<Code16> {
    parse(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{nf4_code, Nf4Variant};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nf4.json");
        let code = nf4_code(Nf4Variant::AverageOfQuantile);
        code_write(&code, &path).unwrap();
        let back = code_read(&path).unwrap();
        assert_eq!(back, code);
        for (a, b) in back.values().iter().zip(code.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn awkward_values_survive() {
        let mut v: [f64; 16] = std::array::from_fn(|j| -1.0 + 2.0 * j as f64 / 15.0);
        v[3] = -0.6 + 1e-17 * 3.0;
        v[5] = f64::from_bits(v[5].to_bits() + 1);
        let code = Code16::custom(v).unwrap();
        let back = parse(&render(&code).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(code.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    fn doc(values: &str) -> String {
        format!(
            r#"{{"format":"code16/v1","kind":"custom","block_size":null,"values":[{values}],"params":{{}}}}"#
        )
    }

    #[test]
    fn rejects_wrong_length() {
        let vals: Vec<String> = (0..15)
            .map(|j| format!("{}", -1.0 + j as f64 / 8.0))
            .collect();
        let e = parse(&doc(&vals.join(","))).unwrap_err();
        assert!(matches!(e, Error::Format(_)));
        assert!(e.to_string().contains("expected 16 code values"), "{e}");
    }

    #[test]
    fn rejects_inversion_with_index() {
        let mut vals: Vec<f64> = (0..16).map(|j| -1.0 + 2.0 * j as f64 / 15.0).collect();
        vals.swap(9, 10);
        let s: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        let e = parse(&doc(&s.join(","))).unwrap_err();
        assert!(matches!(e, Error::Format(_)));
        assert!(e.to_string().contains("index 10"), "{e}");
    }

    #[test]
    fn rejects_other_formats() {
        assert!(matches!(parse("[1, 2]"), Err(Error::Format(_))));
        assert!(matches!(
            parse("{\"format\":\"code8\"}"),
            Err(Error::Format(_))
        ));
        assert!(matches!(parse("not json"), Err(Error::Format(_))));
    }
}
