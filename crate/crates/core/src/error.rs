use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a serde_json error into a [`Error::Parse`] carrying the byte
    /// offset into `input` at which parsing failed.
    pub fn from_json(err: serde_json::Error, input: &str) -> Self {
        Error::Parse {
            offset: byte_offset(input, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

/// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_offset_counts_previous_lines() {
        let input = "ab\ncde\nf";
        assert_eq!(byte_offset(input, 1, 1), 0);
        assert_eq!(byte_offset(input, 2, 2), 4);
        assert_eq!(byte_offset(input, 3, 1), 7);
    }

    #[test]
    fn json_error_offset_points_at_failure() {
        let input = "{\"a\": 1,\n \"b\": }";
        let err = serde_json::from_str::<serde_json::Value>(input).unwrap_err();
        match Error::from_json(err, input) {
            Error::Parse { offset, .. } => assert_eq!(&input[offset..offset + 1], "}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
