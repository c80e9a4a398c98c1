//! JSON Lines token corpora.
//!
//! One object per line:
//! `{"id": "...", "tokens": [..], "pii_spans": [[start, end], ..], "text": "..."}`
//! where `pii_spans` and `text` are optional and spans are half-open token ranges.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{TokenId, TokenSequence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: TokenSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pii_spans: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Self {
            id: id.into(),
            tokens: TokenSequence(tokens),
            pii_spans: None,
            text: None,
        }
    }

    /// Keeps the first `max_len` tokens and clips PII spans to match; spans
    /// that fall entirely past the cut are dropped.
    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.0.truncate(max_len);
        if let Some(spans) = self.pii_spans.as_mut() {
            spans.retain(|&(s, _)| s < max_len);
            for span in spans.iter_mut() {
                span.1 = span.1.min(max_len);
            }
        }
    }
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("corpus line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    read_corpus(BufReader::new(File::open(path)?))
}

pub fn write_corpus<W: Write>(w: &mut W, records: &[CorpusRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, records)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_optional_fields() {
        let src = r#"{"id":"a","tokens":[1,2,3],"pii_spans":[[0,2]],"text":"hi"}

{"id":"b","tokens":[]}
"#;
        let recs = read_corpus(src.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].pii_spans, Some(vec![(0, 2)]));
        assert_eq!(recs[0].text.as_deref(), Some("hi"));
        assert!(recs[1].tokens.is_empty());
        assert_eq!(recs[1].pii_spans, None);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = read_corpus(&b"{\"id\":\"a\",\"tokens\":[1]}\nnot json\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn write_then_read() {
        let mut rec = CorpusRecord::new("x", vec![5, 6]);
        rec.pii_spans = Some(vec![(1, 2)]);
        let mut buf = Vec::new();
        write_corpus(&mut buf, &[rec.clone()]).unwrap();
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), vec![rec]);
    }

    #[test]
    fn truncation_clips_spans() {
        let mut rec = CorpusRecord::new("x", (0..10).collect());
        rec.pii_spans = Some(vec![(1, 3), (4, 8), (8, 10)]);
        rec.truncate(5);
        assert_eq!(rec.tokens.len(), 5);
        assert_eq!(rec.pii_spans, Some(vec![(1, 3), (4, 5)]));
    }
}
