//! Little-endian record readers and writers shared by the binary artifact
//! formats. Readers track their byte offset so that validation errors can
//! point at the offending record.

use std::io::{self, Read, Write};

use crate::{Error, Result};

pub struct Reader<R> {
    inner: R,
    offset: u64,
    format: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, format: &'static str) -> Self {
        Self {
            inner,
            offset: 0,
            format,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.format, self.offset, message)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, "magic")?;
        if &buf != magic {
            return Err(Error::format(
                self.format,
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&buf),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(self.error(format!("truncated while reading {what}")))
            }
            Err(e) => Err(Error::Stream(e)),
        }
    }

    /// Reads the first byte of a record, returning `None` on a clean EOF.
    pub fn at_record_start(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.offset += 1;
                    return Ok(Some(b[0]));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Stream(e)),
            }
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads a u64 whose first byte was already consumed by
    /// [`Reader::at_record_start`].
    pub fn u64_after(&mut self, first: u8, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        b[0] = first;
        self.read_exact(&mut b[1..], what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    /// Reads `n` finite f32 values.
    pub fn finite_f32s(&mut self, n: usize, out: &mut Vec<f32>, what: &str) -> Result<()> {
        out.reserve(n);
        for _ in 0..n {
            let at = self.offset;
            let v = self.f32(what)?;
            if !v.is_finite() {
                return Err(Error::format(
                    self.format,
                    at,
                    format!("non-finite value {v} in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(())
    }
}

pub struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(Error::Stream)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(Error::Stream)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}
