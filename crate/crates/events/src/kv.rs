//! Flat `key = value` text used by scene and model configuration files.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct KvError {
    pub line: usize,
    pub msg: String,
}

/// Pairs in file order. Blank lines and `#` comments are skipped; duplicate keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| KvError { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(KvError { line: i + 1, msg: "empty key".into() });
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(KvError { line: i + 1, msg: format!("duplicate key `{k}`") });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn format_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_duplicates() {
        let pairs = parse_kv("# scene\nwidth = 96\n\nseed=7 # trailing\n").unwrap();
        assert_eq!(pairs, vec![("width".into(), "96".into()), ("seed".into(), "7".into())]);
        assert_eq!(parse_kv("a = 1\na = 2").unwrap_err().line, 2);
        assert_eq!(parse_kv("novalue").unwrap_err().line, 1);
    }
}
