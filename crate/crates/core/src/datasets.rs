//! Readers for the evaluation datasets.
//!
//! HyperLex files are whitespace-separated tables whose first line names the
//! columns (`WORD1 WORD2 POS TYPE AVG_SCORE …`). Analogy files carry four
//! words per line; lines starting with `:` open a section and are skipped.
//! Words are lowercased to match corpus tokenization. Anything else malformed
//! is rejected with its line number.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{AnalogyQuery, HyperLexRecord};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("column {missing:?} not found; available columns: {}", available.join(", "))]
    MissingColumn {
        missing: String,
        available: Vec<String>,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("file has no header line")]
    NoHeader,
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const DEFAULT_SCORE_COLUMN: &str = "AVG_SCORE";

pub fn parse_hyperlex_file(path: &Path, score_column: &str) -> Result<Vec<HyperLexRecord>> {
    parse_hyperlex(&read(path)?, score_column)
}

pub fn parse_hyperlex(text: &str, score_column: &str) -> Result<Vec<HyperLexRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(DatasetError::NoHeader)?;
    let columns: Vec<&str> = header.split_whitespace().collect();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                missing: name.to_string(),
                available: columns.iter().map(|c| c.to_string()).collect(),
            })
    };
    let (c1, c2, cs) = (find("WORD1")?, find("WORD2")?, find(score_column)?);
    let needed = c1.max(c2).max(cs) + 1;
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < needed {
            return Err(DatasetError::Malformed {
                line: lineno,
                reason: format!("expected at least {needed} fields, found {}", fields.len()),
            });
        }
        let score: f64 = fields[cs]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| DatasetError::Malformed {
                line: lineno,
                reason: format!("score {:?} is not a finite number", fields[cs]),
            })?;
        records.push(HyperLexRecord {
            word_u: fields[c1].to_lowercase(),
            word_v: fields[c2].to_lowercase(),
            gold_score: score,
        });
    }
    Ok(records)
}

pub fn parse_analogy_file(path: &Path) -> Result<Vec<AnalogyQuery>> {
    parse_analogy(&read(path)?)
}

pub fn parse_analogy(text: &str) -> Result<Vec<AnalogyQuery>> {
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(':') {
            continue;
        }
        let words: Vec<String> = trimmed.split_whitespace().map(str::to_lowercase).collect();
        match <[String; 4]>::try_from(words) {
            Ok([w1, w2, w3, w4]) => queries.push(AnalogyQuery { w1, w2, w3, w4 }),
            Err(words) => {
                return Err(DatasetError::Malformed {
                    line: i + 1,
                    reason: format!("expected 4 words, found {}", words.len()),
                })
            }
        }
    }
    Ok(queries)
}
