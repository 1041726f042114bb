//! Plain-text template files.
//!
//! One template per line as whitespace-separated decimal reals. A first
//! token that does not parse as a number is taken as the line's label.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::template::{group_normalize, GroupLayout, Template};

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLine {
    /// 1-based line number in the source.
    pub line: usize,
    pub label: Option<String>,
    pub values: Vec<f64>,
}

impl TemplateLine {
    /// The explicit label, or `line<N>`.
    pub fn label_or_default(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("line{}", self.line))
    }
}

pub fn parse_templates(text: &str) -> Result<Vec<TemplateLine>> {
    let mut out: Vec<TemplateLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace().peekable();
        let label = match tokens.peek() {
            Some(first) if first.parse::<f64>().is_err() => tokens.next().map(str::to_string),
            _ => None,
        };
        let values = tokens
            .map(|tok| match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::Parse {
                    line,
                    reason: format!("non-finite value `{tok}`"),
                }),
                Err(_) => Err(Error::Parse {
                    line,
                    reason: format!("`{tok}` is not a number"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::Parse {
                line,
                reason: "no values".into(),
            });
        }
        if let Some(first) = out.first() {
            if first.values.len() != values.len() {
                return Err(Error::Parse {
                    line,
                    reason: format!("{} values, expected {}", values.len(), first.values.len()),
                });
            }
        }
        out.push(TemplateLine { line, label, values });
    }
    Ok(out)
}

pub fn read_templates(path: &Path) -> Result<Vec<TemplateLine>> {
    parse_templates(&std::fs::read_to_string(path)?)
}

/// Group-normalizes parsed lines into `(label, template)` pairs.
pub fn to_templates(lines: &[TemplateLine], layout: GroupLayout) -> Result<Vec<(String, Template)>> {
    lines
        .iter()
        .map(|l| {
            if l.values.len() != layout.d() {
                return Err(Error::DimensionMismatch {
                    expected: layout.d(),
                    actual: l.values.len(),
                });
            }
            Ok((l.label_or_default(), group_normalize(&l.values, layout)?))
        })
        .collect()
}

/// Formats one line; values use the shortest representation that parses
/// back to the same `f64`.
pub fn format_template(label: Option<&str>, values: &[f64]) -> String {
    let mut s = String::new();
    if let Some(l) = label {
        s.push_str(l);
    }
    for v in values {
        if !s.is_empty() {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

pub fn write_templates<'a>(path: &Path, items: impl IntoIterator<Item = (Option<&'a str>, &'a [f64])>) -> Result<()> {
    let mut text = String::new();
    for (label, values) in items {
        text.push_str(&format_template(label, values));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
