//! JSONL probing datasets: one `{"text", "occupation", "gender"}` object per line.
//!
//! Class fields may be integer ids or strings. Strings are resolved through a
//! class map given either as a sidecar or as a header line of the form
//! `{"class_map": {"occupation": [...], "gender": [...]}}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::DatasetRecord;

pub const OCCUPATION_CLASSES: usize = 28;
pub const GENDER_CLASSES: usize = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    #[serde(default)]
    pub occupation: Vec<String>,
    #[serde(default)]
    pub gender: Vec<String>,
}

impl ClassMap {
    fn names(&self, field: &'static str) -> &[String] {
        match field {
            "occupation" => &self.occupation,
            _ => &self.gender,
        }
    }
}

fn class_id(v: &Value, field: &'static str, map: &ClassMap, line: usize) -> Result<usize> {
    let names = map.names(field);
    let cardinality = if names.is_empty() {
        if field == "occupation" {
            OCCUPATION_CLASSES
        } else {
            GENDER_CLASSES
        }
    } else {
        names.len()
    };
    match v {
        Value::Number(n) => {
            let id = n.as_u64().ok_or_else(|| Error::Parse {
                line,
                message: format!("{field} id {n} is not a nonnegative integer"),
            })? as usize;
            if id >= cardinality {
                return Err(Error::Parse {
                    line,
                    message: format!("{field} id {id} out of range for {cardinality} classes"),
                });
            }
            Ok(id)
        }
        Value::String(s) => names.iter().position(|n| n == s).ok_or_else(|| Error::UnknownClass {
            line,
            field,
            value: s.clone(),
        }),
        other => Err(Error::Parse {
            line,
            message: format!("{field} must be a string or integer, got {other}"),
        }),
    }
}

/// Parses dataset text; `sidecar` takes precedence over an in-file header.
pub fn parse_jsonl_dataset(text: &str, sidecar: Option<&ClassMap>) -> Result<Vec<DatasetRecord>> {
    let mut map = sidecar.cloned().unwrap_or_default();
    let mut records = Vec::new();
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: format!("malformed JSON: {e}"),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Parse {
                line,
                message: "expected a JSON object".into(),
            });
        };
        if let Some(header) = obj.get("class_map") {
            if seen_content {
                return Err(Error::Parse {
                    line,
                    message: "class_map header must precede all records".into(),
                });
            }
            if sidecar.is_none() {
                map = serde_json::from_value(header.clone()).map_err(|e| Error::Parse {
                    line,
                    message: format!("bad class_map: {e}"),
                })?;
            }
            seen_content = true;
            continue;
        }
        seen_content = true;
        let field = |k: &str| {
            obj.get(k).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing key {k:?}"),
            })
        };
        let text = field("text")?
            .as_str()
            .ok_or_else(|| Error::Parse {
                line,
                message: "text must be a string".into(),
            })?
            .to_string();
        let occupation = class_id(field("occupation")?, "occupation", &map, line)?;
        let gender = class_id(field("gender")?, "gender", &map, line)?;
        records.push(DatasetRecord {
            text,
            occupation,
            gender,
            line,
        });
    }
    Ok(records)
}

pub fn read_jsonl_dataset(path: &Path, sidecar: Option<&ClassMap>) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl_dataset(&text, sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"class_map": {"occupation": ["nurse", "surgeon", "professor"], "gender": ["F", "M"]}}"#;

    #[test]
    fn parses_records_in_order() {
        let text = format!(
            "{HEADER}\n{}\n{}\n{}\n",
            r#"{"text": "She is a nurse.", "occupation": "nurse", "gender": "F"}"#,
            r#"{"text": "He operates.", "occupation": "surgeon", "gender": "M"}"#,
            r#"{"text": "They teach.", "occupation": 2, "gender": 0}"#
        );
        let recs = parse_jsonl_dataset(&text, None).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!((recs[0].occupation, recs[0].gender, recs[0].line), (0, 0, 2));
        assert_eq!((recs[1].occupation, recs[1].gender), (1, 1));
        assert_eq!(recs[2].text, "They teach.");
    }

    #[test]
    fn unknown_class_names_string_and_line() {
        let text = format!("{HEADER}\n{}\n", r#"{"text": "x", "occupation": "pilot", "gender": "F"}"#);
        match parse_jsonl_dataset(&text, None) {
            Err(e @ Error::UnknownClass { line: 2, .. }) => assert!(e.to_string().contains("pilot")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_jsonl_dataset("", None).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"text\": \"a\", \"occupation\": 1, \"gender\": 1}\n{oops\n";
        assert!(matches!(parse_jsonl_dataset(text, None), Err(Error::Parse { line: 2, .. })));
        let text = "{\"text\": \"a\", \"occupation\": 28, \"gender\": 1}\n";
        assert!(matches!(parse_jsonl_dataset(text, None), Err(Error::Parse { line: 1, .. })));
        let text = "{\"text\": \"a\", \"gender\": 1}\n";
        assert!(matches!(parse_jsonl_dataset(text, None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn sidecar_overrides_header() {
        let side = ClassMap {
            occupation: vec!["a".into(), "b".into()],
            gender: vec!["x".into(), "y".into()],
        };
        let text = format!("{HEADER}\n{}\n", r#"{"text": "t", "occupation": "b", "gender": "y"}"#);
        let recs = parse_jsonl_dataset(&text, Some(&side)).unwrap();
        assert_eq!((recs[0].occupation, recs[0].gender), (1, 1));
    }

    #[test]
    fn reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "{\"text\": \"a\", \"occupation\": 3, \"gender\": 1}\n").unwrap();
        assert_eq!(read_jsonl_dataset(&p, None).unwrap().len(), 1);
        assert!(read_jsonl_dataset(&dir.path().join("missing.jsonl"), None).unwrap_err().is_io());
    }
}
