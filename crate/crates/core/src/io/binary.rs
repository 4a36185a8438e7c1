//! Little-endian container helpers shared by the model, generator and
//! checkpoint formats. Every container starts with a 4-byte magic and a u32
//! version; arrays are written as a u64 length followed by their elements.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn u32s(&mut self, v: impl ExactSizeIterator<Item = u32>) {
        self.u64(v.len() as u64);
        for x in v {
            self.u32(x);
        }
    }

    pub fn finish(self, path: &Path) -> Result<()> {
        fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader<'a> {
    kind: &'static str,
    path: &'a Path,
    data: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Opens `path` and checks the magic; returns the reader and the version.
    pub fn open(path: &'a Path, kind: &'static str, magic: &[u8; 4]) -> Result<(Self, u32)> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            kind,
            path,
            data,
            pos: 0,
        };
        let head = r.take(4)?;
        if head != magic {
            return Err(r.fail(format!("bad magic {head:?}")));
        }
        let version = r.u32()?;
        Ok((r, version))
    }

    pub fn fail(&self, msg: impl Into<String>) -> Error {
        Error::format(self.kind, self.path, msg)
    }

    fn take(&mut self, n: usize) -> Result<Vec<u8>> {
        if self.pos + n > self.data.len() {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let out = self.data[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.data.len() - self.pos {
            return Err(self.fail(format!("array of {n} elements overruns the file")));
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        let bytes = &self.data[self.pos..self.pos + 8 * n];
        let out = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 8 * n;
        Ok(out)
    }

    pub fn f64s_exact(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let v = self.f64s()?;
        if v.len() != expected {
            return Err(self.fail(format!("{what}: expected {expected} values, found {}", v.len())));
        }
        Ok(v)
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len(4)?;
        let bytes = &self.data[self.pos..self.pos + 4 * n];
        let out = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 4 * n;
        Ok(out)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.fail(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}
