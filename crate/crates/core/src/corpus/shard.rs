//! `WND1` window shard files: the magic, then per record `window_id: u64`,
//! `doc_id: u64`, `ordinal: u32`, `token_count: u32` and the token ids as
//! `u32`, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DocumentWindow;
use crate::binio::{Reader, Writer};
use crate::{Error, Result};

pub const WINDOW_MAGIC: &[u8; 4] = b"WND1";

pub struct WindowWriter<W: Write> {
    out: Writer<W>,
    written: u64,
}

impl<W: Write> WindowWriter<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut out = Writer::new(inner);
        out.bytes(WINDOW_MAGIC)?;
        Ok(Self { out, written: 0 })
    }

    pub fn write(&mut self, w: &DocumentWindow) -> Result<()> {
        let count = u32::try_from(w.tokens.len())
            .map_err(|_| Error::InvalidData(format!("window {} too long", w.window_id)))?;
        self.out.u64(w.window_id)?;
        self.out.u64(w.doc_id)?;
        self.out.u32(w.ordinal)?;
        self.out.u32(count)?;
        for &t in &w.tokens {
            self.out.u32(t)?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out.into_inner())
    }
}

pub struct WindowReader<R> {
    input: Reader<R>,
    failed: bool,
}

impl<R: Read> WindowReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut input = Reader::new(inner, "WND1");
        input.expect_magic(WINDOW_MAGIC)?;
        Ok(Self {
            input,
            failed: false,
        })
    }

    fn read_record(&mut self, first: u8) -> Result<DocumentWindow> {
        let window_id = self.input.u64_after(first, "window_id")?;
        let doc_id = self.input.u64("doc_id")?;
        let ordinal = self.input.u32("ordinal")?;
        let count = self.input.u32("token_count")?;
        let tokens = (0..count)
            .map(|_| self.input.u32("token"))
            .collect::<Result<Vec<_>>>()?;
        Ok(DocumentWindow {
            window_id,
            doc_id,
            ordinal,
            tokens,
        })
    }
}

impl<R: Read> Iterator for WindowReader<R> {
    type Item = Result<DocumentWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = match self.input.at_record_start() {
            Ok(None) => return None,
            Ok(Some(first)) => self.read_record(first),
            Err(e) => Err(e),
        };
        self.failed = item.is_err();
        Some(item)
    }
}

pub fn read_windows(path: &Path) -> Result<Vec<DocumentWindow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    WindowReader::new(BufReader::new(file))?.collect()
}

pub fn write_windows<'a>(
    path: &Path,
    windows: impl IntoIterator<Item = &'a DocumentWindow>,
) -> Result<u64> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = WindowWriter::new(BufWriter::new(file))?;
    for w in windows {
        writer.write(w)?;
    }
    let n = writer.written();
    writer.finish()?;
    Ok(n)
}
