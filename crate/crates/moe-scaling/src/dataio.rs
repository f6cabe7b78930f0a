//! Run-record ingestion and generation: CSV/JSON parsing with count
//! validation, the bundled experiment grid, and a synthetic-run generator
//! for fitting round trips.
//!
//! The wire schema is flat with the column names n_total, n_heads, n_blocks,
//! d_model, n_act, experts, tokens, loss. Counts accept decimal K/M/B
//! suffixes ("321M" = 3.21e8); a suffixed value is display-rounded, so it is
//! checked against the exact count recomputed from the shape to within half a
//! unit of its last printed digit and then replaced by the exact count. Plain
//! numbers must match exactly. A tokens cell may list several values
//! ("16.0B, 8.0B"); such a row expands to one record per value.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::accounting::{self, ModelShape, D_VOCAB};
use crate::law::{self, LawError, ScalingCoefficients};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: u64,
        column: String,
        msg: String,
    },
    #[error("validation error at line {line}, field {field}: {msg}")]
    Validation {
        line: u64,
        field: String,
        msg: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Law(#[from] LawError),
}

/// One training or planned run. `shape` is present when the source row
/// carried geometry columns; counts are then exact recomputations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub shape: Option<ModelShape>,
    pub n_act: u64,
    pub n_total: u64,
    pub experts: u64,
    pub tokens: f64,
    pub observed_loss: Option<f64>,
    /// Fitting weight override; representable in JSON only (the CSV schema
    /// has no such column).
    pub weight_override: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunFormat {
    Csv,
    Json,
}

const COLUMNS: [&str; 8] = [
    "n_total", "n_heads", "n_blocks", "d_model", "n_act", "experts", "tokens", "loss",
];

/// Decimal-suffixed amount: value plus half a unit of the last printed digit
/// (zero for unsuffixed numbers, which are taken as exact).
fn parse_amount(s: &str) -> Option<(f64, f64)> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    let (mant, mult) = match t.as_bytes().last()? {
        b'K' | b'k' => (&t[..t.len() - 1], 1e3),
        b'M' | b'm' => (&t[..t.len() - 1], 1e6),
        b'B' | b'b' => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    let v: f64 = mant.trim().parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    if mult == 1.0 {
        return Some((v, 0.0));
    }
    let decimals = mant.trim().split('.').nth(1).map_or(0, |d| d.len());
    let ulp = 10f64.powi(-(decimals as i32));
    Some((v * mult, 0.5 * ulp * mult))
}

/// Raw per-row cells, shared by the CSV and JSON readers. Amounts carry
/// their display tolerance; tokens may hold several values.
struct RawRow {
    line: u64,
    n_total: Option<(f64, f64)>,
    n_heads: Option<u64>,
    n_blocks: Option<u64>,
    d_model: Option<u64>,
    n_act: Option<(f64, f64)>,
    experts: Option<u64>,
    tokens: Vec<(f64, f64)>,
    loss: Option<f64>,
    weight_override: Option<f64>,
}

fn build_records(row: RawRow, out: &mut Vec<RunRecord>) -> Result<(), DataError> {
    let line = row.line;
    let validation = |field: &str, msg: String| DataError::Validation {
        line,
        field: field.into(),
        msg,
    };

    let experts = row
        .experts
        .ok_or_else(|| validation("experts", "missing value".into()))?;
    if experts == 0 {
        return Err(validation("experts", "must be at least 1".into()));
    }

    let shape = match (row.d_model, row.n_heads, row.n_blocks) {
        (Some(d_model), Some(n_heads), Some(n_blocks)) => {
            if d_model == 0 || n_heads == 0 || n_blocks == 0 {
                return Err(validation(
                    "d_model",
                    "shape fields must be positive".into(),
                ));
            }
            Some(ModelShape {
                d_model,
                n_blocks,
                n_heads,
                experts,
            })
        }
        (None, None, None) => None,
        _ => {
            return Err(validation(
                "d_model",
                "d_model, n_heads, n_blocks must be given together".into(),
            ))
        }
    };

    // With a shape, counts are recomputed exactly and the row's values only
    // checked against them; without one, the row's values stand on their own.
    let resolve = |cell: Option<(f64, f64)>,
                   exact: Option<u128>,
                   field: &'static str|
     -> Result<u64, DataError> {
        match (cell, exact) {
            (Some((v, tol)), Some(exact)) => {
                let exact_f = exact as f64;
                if (exact_f - v).abs() <= tol {
                    Ok(exact as u64)
                } else {
                    Err(validation(
                        field,
                        format!("value {v} disagrees with the shape's exact count {exact}"),
                    ))
                }
            }
            (None, Some(exact)) => Ok(exact as u64),
            (Some((v, _)), None) => {
                if v < 1.0 {
                    return Err(validation(field, format!("count {v} must be positive")));
                }
                Ok(v.round() as u64)
            }
            (None, None) => Err(validation(
                field,
                "missing value and no shape columns to derive it from".into(),
            )),
        }
    };

    let exact_act = shape
        .as_ref()
        .map(|s| accounting::active_params(s, D_VOCAB));
    let exact_total = shape.as_ref().map(|s| accounting::total_params(s, D_VOCAB));
    let n_act = resolve(row.n_act, exact_act, "n_act")?;
    let n_total = resolve(row.n_total, exact_total, "n_total")?;

    if let Some(loss) = row.loss {
        if !(loss > 0.0) || !loss.is_finite() {
            return Err(validation("loss", format!("loss {loss} must be positive")));
        }
    }
    if row.tokens.is_empty() {
        return Err(validation("tokens", "missing value".into()));
    }
    for &(tokens, _) in &row.tokens {
        if !(tokens > 0.0) || !tokens.is_finite() {
            return Err(validation(
                "tokens",
                format!("token count {tokens} must be positive"),
            ));
        }
        out.push(RunRecord {
            shape,
            n_act,
            n_total,
            experts,
            tokens,
            observed_loss: row.loss,
            weight_override: row.weight_override,
        });
    }
    Ok(())
}

pub fn parse_runs(text: &str, format: RunFormat) -> Result<Vec<RunRecord>, DataError> {
    match format {
        RunFormat::Csv => parse_csv(text),
        RunFormat::Json => parse_json(text),
    }
}

fn parse_csv(text: &str) -> Result<Vec<RunRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            column: String::new(),
            msg: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::Parse {
            line: 1,
            column: String::new(),
            msg: "missing header row".into(),
        });
    }
    let mut index: [Option<usize>; 8] = [None; 8];
    for (i, name) in headers.iter().enumerate() {
        let slot = COLUMNS
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| DataError::Parse {
                line: 1,
                column: name.to_string(),
                msg: format!("unknown column (expected one of {})", COLUMNS.join(", ")),
            })?;
        if index[slot].is_some() {
            return Err(DataError::Parse {
                line: 1,
                column: name.to_string(),
                msg: "duplicate column".into(),
            });
        }
        index[slot] = Some(i);
    }

    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::Parse {
                line,
                column: String::new(),
                msg: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |slot: usize| -> Option<&str> {
            index[slot]
                .and_then(|i| record.get(i))
                .filter(|s| !s.is_empty())
        };
        let parse_err = |column: &str, value: &str| DataError::Parse {
            line,
            column: column.into(),
            msg: format!("cannot parse {value:?}"),
        };

        let amount = |slot: usize, name: &str| -> Result<Option<(f64, f64)>, DataError> {
            cell(slot)
                .map(|s| parse_amount(s).ok_or_else(|| parse_err(name, s)))
                .transpose()
        };
        let integer = |slot: usize, name: &str| -> Result<Option<u64>, DataError> {
            cell(slot)
                .map(|s| s.parse::<u64>().map_err(|_| parse_err(name, s)))
                .transpose()
        };

        let tokens = match cell(6) {
            Some(list) => list
                .split([',', ';'])
                .map(|s| {
                    let s = s.trim();
                    parse_amount(s).ok_or_else(|| parse_err("tokens", s))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        };
        let loss = cell(7)
            .map(|s| s.parse::<f64>().map_err(|_| parse_err("loss", s)))
            .transpose()?;

        let row = RawRow {
            line,
            n_total: amount(0, "n_total")?,
            n_heads: integer(1, "n_heads")?,
            n_blocks: integer(2, "n_blocks")?,
            d_model: integer(3, "d_model")?,
            n_act: amount(4, "n_act")?,
            experts: integer(5, "experts")?,
            tokens,
            loss,
            weight_override: None,
        };
        build_records(row, &mut out)?;
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJsonRow {
    #[serde(default)]
    n_total: Option<Value>,
    #[serde(default)]
    n_heads: Option<u64>,
    #[serde(default)]
    n_blocks: Option<u64>,
    #[serde(default)]
    d_model: Option<u64>,
    #[serde(default)]
    n_act: Option<Value>,
    #[serde(default)]
    experts: Option<u64>,
    #[serde(default)]
    tokens: Option<Value>,
    #[serde(default)]
    loss: Option<f64>,
    #[serde(default)]
    weight_override: Option<f64>,
}

fn parse_json(text: &str) -> Result<Vec<RunRecord>, DataError> {
    let rows: Vec<RawJsonRow> = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line: e.line() as u64,
        column: e.column().to_string(),
        msg: e.to_string(),
    })?;
    // Reported "lines" for JSON semantic errors are record ordinals.
    let amount = |v: &Value, line: u64, field: &str| -> Result<(f64, f64), DataError> {
        let parsed = match v {
            Value::Number(n) => n.as_f64().map(|x| (x, 0.0)),
            Value::String(s) => parse_amount(s),
            _ => None,
        };
        parsed.ok_or_else(|| DataError::Parse {
            line,
            column: field.into(),
            msg: format!("cannot parse {v}"),
        })
    };
    let mut out = Vec::new();
    for (i, raw) in rows.iter().enumerate() {
        let line = i as u64 + 1;
        let tokens = match &raw.tokens {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| amount(v, line, "tokens"))
                .collect::<Result<Vec<_>, _>>()?,
            Some(v) => vec![amount(v, line, "tokens")?],
        };
        let row = RawRow {
            line,
            n_total: raw
                .n_total
                .as_ref()
                .map(|v| amount(v, line, "n_total"))
                .transpose()?,
            n_heads: raw.n_heads,
            n_blocks: raw.n_blocks,
            d_model: raw.d_model,
            n_act: raw
                .n_act
                .as_ref()
                .map(|v| amount(v, line, "n_act"))
                .transpose()?,
            experts: raw.experts,
            tokens,
            loss: raw.loss,
            weight_override: raw.weight_override,
        };
        build_records(row, &mut out)?;
    }
    Ok(out)
}

/// Render records in the flat wire schema. CSV cannot carry
/// weight_override and refuses records that set it.
pub fn serialize_runs(records: &[RunRecord], format: RunFormat) -> Result<String, DataError> {
    match format {
        RunFormat::Csv => serialize_csv(records),
        RunFormat::Json => serialize_json(records),
    }
}

fn serialize_csv(records: &[RunRecord]) -> Result<String, DataError> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(COLUMNS).expect("in-memory write");
    for (i, r) in records.iter().enumerate() {
        if r.weight_override.is_some() {
            return Err(DataError::Validation {
                line: i as u64 + 1,
                field: "weight_override".into(),
                msg: "not representable in the CSV schema; use JSON".into(),
            });
        }
        let (d_model, n_heads, n_blocks) = match &r.shape {
            Some(s) => (
                s.d_model.to_string(),
                s.n_heads.to_string(),
                s.n_blocks.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        writer
            .write_record([
                r.n_total.to_string(),
                n_heads,
                n_blocks,
                d_model,
                r.n_act.to_string(),
                r.experts.to_string(),
                format_f64(r.tokens),
                r.observed_loss.map(format_f64).unwrap_or_default(),
            ])
            .expect("in-memory write");
    }
    Ok(String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8"))
}

/// Shortest decimal form that round-trips; avoids exponent syntax for whole
/// numbers so integer-valued token counts stay plain.
fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn serialize_json(records: &[RunRecord]) -> Result<String, DataError> {
    #[derive(Serialize)]
    struct JsonRow {
        n_total: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        n_heads: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        n_blocks: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        d_model: Option<u64>,
        n_act: u64,
        experts: u64,
        tokens: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        loss: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        weight_override: Option<f64>,
    }
    let rows: Vec<JsonRow> = records
        .iter()
        .map(|r| JsonRow {
            n_total: r.n_total,
            n_heads: r.shape.as_ref().map(|s| s.n_heads),
            n_blocks: r.shape.as_ref().map(|s| s.n_blocks),
            d_model: r.shape.as_ref().map(|s| s.d_model),
            n_act: r.n_act,
            experts: r.experts,
            tokens: r.tokens,
            loss: r.observed_loss,
            weight_override: r.weight_override,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rows).expect("serializable rows");
    text.push('\n');
    Ok(text)
}

static BUNDLED_GRID: OnceLock<Vec<RunRecord>> = OnceLock::new();

/// The experiment grid shipped with the crate: 270 (configuration, token
/// count) pairs over expert counts 1 to 32, loss-free. Geometry and counts
/// are validated on first access.
pub fn bundled_experiment_grid() -> &'static [RunRecord] {
    BUNDLED_GRID.get_or_init(|| {
        parse_runs(include_str!("../data/experiments.csv"), RunFormat::Csv)
            .expect("bundled grid parses")
    })
}

/// Copy `grid` with observed_loss = exp(ln law(N, D, E) + eps),
/// eps ~ Normal(0, noise_sigma^2), drawn from a seeded generator in record
/// order (deterministic per seed).
pub fn synthesize(
    grid: &[RunRecord],
    coeffs: &ScalingCoefficients,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<RunRecord>, DataError> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(DataError::InvalidArgument(format!(
            "noise_sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma)
        .map_err(|e| DataError::InvalidArgument(format!("noise_sigma: {e}")))?;
    grid.iter()
        .map(|r| {
            let base = law::loss(r.n_act as f64, r.tokens, r.experts as f64, coeffs)?;
            let eps = if noise_sigma == 0.0 {
                0.0
            } else {
                normal.sample(&mut rng)
            };
            Ok(RunRecord {
                observed_loss: Some((base.ln() + eps).exp()),
                ..r.clone()
            })
        })
        .collect()
}
