//! Question datasets: the internal JSON-lines format and a loader for the
//! external benchmark's `{question, answer}` records.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    /// Accepted answer aliases.
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_node: Option<String>,
    /// A known action sequence that reaches the answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<Vec<Action>>,
}

impl QaRecord {
    pub fn new(id: &str, question: &str, answers: Vec<String>) -> Self {
        QaRecord {
            id: id.to_string(),
            question: question.to_string(),
            answers,
            topic_node: None,
            gold_path: None,
        }
    }

    fn check(&self, line: usize) -> Result<(), DatasetError> {
        let err = |m: &str| DatasetError::Malformed {
            line,
            message: m.to_string(),
        };
        if self.question.trim().is_empty() {
            return Err(err("empty question"));
        }
        if self.answers.is_empty() {
            return Err(err("no answer aliases"));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses the internal JSON-lines dataset format. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<QaRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: QaRecord = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.check(i + 1)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaRecord>, DatasetError> {
    parse_dataset(&read(path.as_ref())?)
}

pub fn write_dataset(records: &[QaRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct BenchRecord {
    #[serde(default)]
    qid: Option<serde_json::Value>,
    question: String,
    answer: serde_json::Value,
}

/// Parses benchmark records, either one JSON object per line or a single
/// JSON array. Each answer becomes a one-alias list; ids come from `qid`
/// when present, otherwise from the 1-based record position.
pub fn parse_grbench_records(text: &str) -> Result<Vec<QaRecord>, DatasetError> {
    let raw: Vec<(usize, serde_json::Value)> = if text.trim_start().starts_with('[') {
        let arr: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| DatasetError::Malformed {
                line: e.line(),
                message: e.to_string(),
            })?;
        arr.into_iter()
            .enumerate()
            .map(|(i, v)| (i + 1, v))
            .collect()
    } else {
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            v.push((i + 1, value));
        }
        v
    };
    raw.into_iter()
        .enumerate()
        .map(|(pos, (line, value))| {
            let rec: BenchRecord =
                serde_json::from_value(value).map_err(|e| DatasetError::Malformed {
                    line,
                    message: e.to_string(),
                })?;
            let answer = match rec.answer {
                serde_json::Value::String(s) => s,
                serde_json::Value::Null => {
                    return Err(DatasetError::Malformed {
                        line,
                        message: "null answer".into(),
                    })
                }
                other => other.to_string(),
            };
            let id = match rec.qid {
                Some(serde_json::Value::String(s)) => s,
                Some(other) => other.to_string(),
                None => (pos + 1).to_string(),
            };
            let out = QaRecord::new(&id, &rec.question, vec![answer]);
            out.check(line)?;
            Ok(out)
        })
        .collect()
}

pub fn load_grbench_records(path: impl AsRef<Path>) -> Result<Vec<QaRecord>, DatasetError> {
    parse_grbench_records(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_dataset_loads() {
        let d = parse_dataset(fixtures::LYDON_DATASET_JSONL).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].question, fixtures::LYDON_QUESTION);
        assert_eq!(d[0].answers, vec!["2"]);
    }

    #[test]
    fn dataset_round_trip_with_gold_path() {
        let mut r = QaRecord::new("q1", "Which venue?", vec!["Nature".into()]);
        r.gold_path = Some(vec![Action::retrieve("x"), Action::finish("Nature")]);
        let mut buf = Vec::new();
        write_dataset(&[r.clone()], &mut buf).unwrap();
        assert_eq!(
            parse_dataset(std::str::from_utf8(&buf).unwrap()).unwrap(),
            vec![r]
        );
    }

    #[test]
    fn benchmark_record_gets_one_alias() {
        let d =
            parse_grbench_records(r#"{"qid": "b1", "question": "Who?", "answer": "Ann"}"#).unwrap();
        assert_eq!(d[0].answers, vec!["Ann"]);
        assert_eq!(d[0].id, "b1");
        let d = parse_grbench_records(r#"{"question": "How many?", "answer": 3}"#).unwrap();
        assert_eq!(d[0].answers, vec!["3"]);
    }

    #[test]
    fn missing_answer_is_an_error_with_line() {
        let text = "{\"question\": \"a\", \"answer\": \"b\"}\n\n{\"question\": \"c\"}\n";
        match parse_grbench_records(text) {
            Err(DatasetError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ten_records_keep_order() {
        let text: String = (0..10)
            .map(|i| format!("{{\"question\": \"q{i}\", \"answer\": \"a{i}\"}}\n"))
            .collect();
        let d = parse_grbench_records(&text).unwrap();
        assert_eq!(d.len(), 10);
        for (i, r) in d.iter().enumerate() {
            assert_eq!(r.question, format!("q{i}"));
        }
        let arr = format!(
            "[{}]",
            (0..10)
                .map(|i| format!("{{\"question\": \"q{i}\", \"answer\": \"a{i}\"}}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        assert_eq!(parse_grbench_records(&arr).unwrap(), d);
    }
}
