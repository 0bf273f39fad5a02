//! Error type, exit codes and the one-line `key=value` stderr records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spixel_core::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] spixel_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Io { .. } => ErrorClass::Data,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
        }
    }
}

pub fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

pub fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

/// Formats `key=value` pairs on one line; values with spaces, quotes or `=`
/// are quoted with escapes so the line stays machine-parseable.
pub fn record(fields: &[(&str, &str)]) -> String {
    let mut line = String::new();
    for (i, (k, v)) in fields.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        let plain = !v.is_empty() && v.chars().all(|c| !c.is_whitespace() && c != '"' && c != '=' && c != '\\');
        if plain {
            let _ = write!(line, "{k}={v}");
        } else {
            let _ = write!(line, "{k}={:?}", v.replace('\n', " "));
        }
    }
    line
}

pub fn emit(fields: &[(&str, &str)]) {
    eprintln!("{}", record(fields));
}

pub fn emit_error(command: &str, err: &CliError) {
    let class = err.class();
    emit(&[
        ("status", "error"),
        ("command", command),
        ("class", class_name(class)),
        ("kind", err.kind()),
        ("exit", &exit_code(class).to_string()),
        ("message", &err.to_string()),
    ]);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_quote_only_when_needed() {
        assert_eq!(record(&[("a", "1"), ("b", "x y"), ("c", "say \"hi\"")]), r#"a=1 b="x y" c="say \"hi\"""#);
        assert_eq!(record(&[("m", "two\nlines")]), r#"m="two lines""#);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(ErrorClass::Usage), 1);
        assert_eq!(exit_code(ErrorClass::Data), 2);
        assert_eq!(exit_code(ErrorClass::Numeric), 3);
        let e = CliError::from(spixel_core::Error::NonFinite { context: "x".into(), detail: "y".into() });
        assert_eq!(exit_code(e.class()), 3);
    }
}
