//! Corpus ingestion and segmentation into fixed-length token windows.

mod shard;
mod tokenize;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::{Error, Result};

pub use shard::{read_windows, write_windows, WindowReader, WindowWriter, WINDOW_MAGIC};
pub use tokenize::{segments, HashingTokenizer, Tokenizer, DEFAULT_VOCAB_SIZE};

pub const DEFAULT_WINDOW_SIZE: usize = 1024;
pub const DEFAULT_MIN_WINDOW_TOKENS: usize = 32;

/// Bits of a window id reserved for the window ordinal.
pub const ORDINAL_BITS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SourceTag {
    Generalist,
    Specialist(String),
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTag::Generalist => f.write_str("generalist"),
            SourceTag::Specialist(task) => write!(f, "specialist:{task}"),
        }
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "generalist" => Ok(SourceTag::Generalist),
            None if s == "specialist" => Ok(SourceTag::Specialist("default".into())),
            Some(("specialist", task)) if !task.is_empty() => {
                Ok(SourceTag::Specialist(task.to_string()))
            }
            _ => Err(Error::Config(format!(
                "unknown source tag {s:?} (expected `generalist` or `specialist:<task>`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDocument {
    pub doc_id: u64,
    pub source_tag: SourceTag,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentWindow {
    pub window_id: u64,
    pub doc_id: u64,
    pub ordinal: u32,
    pub tokens: Vec<u32>,
}

impl DocumentWindow {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Packs a document id and a window ordinal into a stable window id.
pub fn compose_window_id(doc_id: u64, ordinal: u32) -> Result<u64> {
    if doc_id >> (64 - ORDINAL_BITS) != 0 {
        return Err(Error::InvalidData(format!(
            "doc_id {doc_id} does not fit in {} bits",
            64 - ORDINAL_BITS
        )));
    }
    if ordinal >> ORDINAL_BITS != 0 {
        return Err(Error::InvalidData(format!(
            "document {doc_id} has more than 2^{ORDINAL_BITS} windows"
        )));
    }
    Ok((doc_id << ORDINAL_BITS) | ordinal as u64)
}

pub fn split_window_id(window_id: u64) -> (u64, u32) {
    (
        window_id >> ORDINAL_BITS,
        (window_id & ((1 << ORDINAL_BITS) - 1)) as u32,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub window_size: usize,
    pub min_window_tokens: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_size: DEFAULT_WINDOW_SIZE,
            min_window_tokens: DEFAULT_MIN_WINDOW_TOKENS,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_window_tokens == 0 {
            return Err(Error::Config("min_window_tokens must be positive".into()));
        }
        if self.window_size < self.min_window_tokens {
            return Err(Error::Config(format!(
                "window_size {} is smaller than min_window_tokens {}",
                self.window_size, self.min_window_tokens
            )));
        }
        Ok(())
    }
}

/// Cuts a token sequence into consecutive, disjoint windows. A trailing
/// slice is kept only if it holds at least `min_window_tokens` tokens.
pub fn window(doc_id: u64, tokens: &[u32], config: &WindowConfig) -> Result<Vec<DocumentWindow>> {
    config.validate()?;
    tokens
        .chunks(config.window_size)
        .filter(|chunk| chunk.len() >= config.min_window_tokens)
        .enumerate()
        .map(|(ordinal, chunk)| {
            let ordinal = u32::try_from(ordinal)
                .map_err(|_| Error::InvalidData(format!("too many windows in {doc_id}")))?;
            Ok(DocumentWindow {
                window_id: compose_window_id(doc_id, ordinal)?,
                doc_id,
                ordinal,
                tokens: chunk.to_vec(),
            })
        })
        .collect()
}

pub fn window_document(
    doc: &SourceDocument,
    tokenizer: &dyn Tokenizer,
    config: &WindowConfig,
) -> Result<Vec<DocumentWindow>> {
    window(doc.doc_id, &tokenizer.tokenize(&doc.text), config)
}

/// Tokenizes and windows documents in parallel. Output order follows input
/// order regardless of scheduling.
pub fn window_corpus(
    docs: &[SourceDocument],
    tokenizer: &dyn Tokenizer,
    config: &WindowConfig,
) -> Result<Vec<DocumentWindow>> {
    config.validate()?;
    let per_doc: Vec<Vec<DocumentWindow>> = docs
        .par_iter()
        .map(|doc| window_document(doc, tokenizer, config))
        .collect::<Result<_>>()?;
    Ok(per_doc.into_iter().flatten().collect())
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<u64>,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestLedger {
    /// Non-blank lines seen.
    pub lines: usize,
    pub documents: usize,
    pub malformed: Vec<MalformedLine>,
}

impl IngestLedger {
    /// More than 1% of the lines were malformed.
    pub fn exceeds_tolerance(&self) -> bool {
        self.malformed.len() * 100 > self.lines
    }
}

/// Streams documents out of newline-delimited JSON records `{"id"?, "text"}`.
///
/// Malformed records are skipped and logged in the ledger; only I/O errors
/// surface through the iterator.
pub struct DocumentReader<R> {
    lines: std::io::Lines<R>,
    tag: SourceTag,
    line_no: usize,
    next_id: u64,
    seen: HashSet<u64>,
    ledger: IngestLedger,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn new(reader: R, tag: SourceTag) -> Self {
        Self {
            lines: reader.lines(),
            tag,
            line_no: 0,
            next_id: 0,
            seen: HashSet::new(),
            ledger: IngestLedger::default(),
        }
    }

    pub fn ledger(&self) -> &IngestLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> IngestLedger {
        self.ledger
    }

    fn parse(&mut self, line: &str) -> std::result::Result<SourceDocument, String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if raw.text.trim().is_empty() {
            return Err("empty text".into());
        }
        let doc_id = match raw.id {
            Some(id) => {
                if self.seen.contains(&id) {
                    return Err(format!("duplicate id {id}"));
                }
                id
            }
            None => {
                while self.seen.contains(&self.next_id) {
                    self.next_id += 1;
                }
                self.next_id
            }
        };
        self.seen.insert(doc_id);
        Ok(SourceDocument {
            doc_id,
            source_tag: self.tag.clone(),
            text: raw.text,
        })
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<SourceDocument>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::Stream(e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.ledger.lines += 1;
            match self.parse(&line) {
                Ok(doc) => {
                    self.ledger.documents += 1;
                    return Some(Ok(doc));
                }
                Err(reason) => self.ledger.malformed.push(MalformedLine {
                    line: self.line_no,
                    reason,
                }),
            }
        }
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub documents: Vec<SourceDocument>,
    pub ledger: IngestLedger,
}

/// Reads a whole corpus file, failing when more than 1% of its lines are
/// malformed.
pub fn ingest(path: &Path, tag: SourceTag) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = DocumentReader::new(BufReader::new(file), tag);
    let documents = reader
        .by_ref()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Stream(source) => Error::io(path, source),
            other => other,
        })?;
    let ledger = reader.into_ledger();
    if ledger.exceeds_tolerance() {
        return Err(Error::TooManyMalformed {
            path: PathBuf::from(path),
            malformed: ledger.malformed.len(),
            lines: ledger.lines,
        });
    }
    log::info!(
        "ingested {} documents from {} ({} malformed lines)",
        ledger.documents,
        path.display(),
        ledger.malformed.len()
    );
    Ok(Ingested { documents, ledger })
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    fn read(input: &str) -> (Vec<SourceDocument>, IngestLedger) {
        let mut r = DocumentReader::new(Cursor::new(input.to_string()), SourceTag::Generalist);
        let docs = r.by_ref().collect::<Result<Vec<_>>>().unwrap();
        (docs, r.into_ledger())
    }

    #[test]
    fn sequential_ids_when_absent() {
        let (docs, ledger) = read("{\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"text\":\"c\"}\n");
        assert_eq!(docs.iter().map(|d| d.doc_id).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(ledger.documents, 3);
        assert!(ledger.malformed.is_empty());
    }

    #[test]
    fn empty_text_is_skipped() {
        let (docs, ledger) = read("{\"text\":\"a\"}\n{\"text\":\"   \"}\n");
        assert_eq!(docs.len(), 1);
        assert_eq!(ledger.malformed.len(), 1);
        assert_eq!(ledger.malformed[0].line, 2);
    }

    #[test]
    fn explicit_ids_are_respected_and_duplicates_rejected() {
        let (docs, ledger) =
            read("{\"id\":0,\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"id\":0,\"text\":\"c\"}\n");
        assert_eq!(docs.iter().map(|d| d.doc_id).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(ledger.malformed.len(), 1);
    }

    #[test]
    fn source_tag_parsing() {
        assert_eq!("generalist".parse::<SourceTag>().unwrap(), SourceTag::Generalist);
        assert_eq!(
            "specialist:mmlu".parse::<SourceTag>().unwrap(),
            SourceTag::Specialist("mmlu".into())
        );
        assert!("other".parse::<SourceTag>().is_err());
        assert!("specialist:".parse::<SourceTag>().is_err());
    }

    #[test]
    fn exact_division() {
        let tokens: Vec<u32> = (0..2048).collect();
        let w = window(5, &tokens, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.token_count() == 1024));
        assert_eq!(w[1].ordinal, 1);
        assert_eq!(split_window_id(w[1].window_id), (5, 1));
    }

    #[test]
    fn short_trailing_window_is_dropped() {
        let tokens: Vec<u32> = (0..1040).collect();
        let w = window(0, &tokens, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].token_count(), 1024);
    }

    #[test]
    fn short_document_yields_nothing() {
        let tokens: Vec<u32> = (0..31).collect();
        assert!(window(0, &tokens, &WindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn invalid_config() {
        let cfg = WindowConfig {
            window_size: 16,
            min_window_tokens: 32,
        };
        assert!(window(0, &[1, 2, 3], &cfg).is_err());
    }

    #[test]
    fn oversized_doc_id_is_rejected() {
        assert!(compose_window_id(1 << 40, 0).is_err());
        assert!(compose_window_id((1 << 40) - 1, 0).is_ok());
    }
}
