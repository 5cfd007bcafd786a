//! Line-oriented helpers shared by the text interchange formats.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Iterator over non-blank lines, tracking 1-based line numbers.
pub(crate) struct LineReader<'a> {
    format: &'static str,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(format: &'static str, text: &'a str) -> Self {
        Self {
            format,
            inner: text.lines().enumerate(),
            last_line: 0,
        }
    }

    /// Line number of the most recently returned line (or of end-of-file).
    pub fn line_no(&self) -> usize {
        self.last_line
    }

    pub fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            self.last_line = i + 1;
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Some((i + 1, trimmed));
            }
        }
        self.last_line += 1;
        None
    }

    pub fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let format = self.format;
        self.next_line().ok_or_else(|| {
            Error::parse(
                format,
                self.last_line,
                format!("unexpected end of file, expected {what}"),
            )
        })
    }

    /// Consumes the header line and checks it equals `expected`.
    pub fn expect_header(&mut self, expected: &'static str) -> Result<()> {
        let (_, line) = self.expect_line("header")?;
        if line != expected {
            return Err(Error::Version {
                format: self.format,
                found: line.to_string(),
                expected,
            });
        }
        Ok(())
    }

    /// Parses a `keyword value` line such as `points 12`.
    pub fn expect_keyed_count(&mut self, keyword: &str) -> Result<usize> {
        let (n, line) = self.expect_line(keyword)?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == keyword => parse_value(self.format, n, v, keyword),
            _ => Err(Error::parse(self.format, n, format!("expected `{keyword} <count>`"))),
        }
    }
}

pub(crate) fn parse_value<T: FromStr>(format: &'static str, line: usize, token: &str, what: &str) -> Result<T> {
    token
        .parse::<T>()
        .map_err(|_| Error::parse(format, line, format!("invalid {what}: {token:?}")))
}

/// Parses whitespace-separated finite scalars, requiring exactly `expected` of them.
pub(crate) fn parse_scalars<S: Scalar>(
    format: &'static str,
    line: usize,
    tokens: &[&str],
    expected: usize,
    what: &'static str,
) -> Result<Vec<S>> {
    if tokens.len() != expected {
        return Err(Error::Count {
            format,
            line,
            what,
            expected,
            found: tokens.len(),
        });
    }
    tokens
        .iter()
        .map(|t| {
            let v: S = parse_value(format, line, t, "number")?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(format, line, format!("non-finite value {t:?}")))
            }
        })
        .collect()
}

pub(crate) fn join<S: Scalar>(values: &[S]) -> String {
    let mut out = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    out
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Identifiers in headers are single whitespace-free tokens.
pub(crate) fn check_identifier(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(Error::Invalid(format!(
            "identifier {id:?} must be a nonempty token without whitespace"
        )));
    }
    Ok(())
}
