//! Little-endian record encoding shared by the checkpoint and head files.
//!
//! Every file is `magic (4 bytes) | u32 version | body | u32 CRC-32` where
//! the checksum covers everything before it. Tensors are written as
//! `u32 name length | UTF-8 name | u32 rank | u32 dims… | f64 payload`.

use crate::error::{Error, Result};
use crate::nn::Tensor;

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

    pub fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("value fits in u32"));
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, values: &[f64]) {
        for &v in values {
            self.f64(v);
        }
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.str(&t.name);
        self.usize(t.shape.len());
        for &d in &t.shape {
            self.usize(d);
        }
        self.f64s(&t.data);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Validates magic, version and checksum, then positions after the header.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u32, what: &'static str) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Checkpoint(format!("{what}: truncated file ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != magic {
            return Err(Error::Checkpoint(format!(
                "{what}: bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let found_version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if found_version != version {
            return Err(Error::Checkpoint(format!(
                "{what}: version {found_version} not supported (expected {version})"
            )));
        }
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint(format!("{what}: checksum mismatch (corrupt or truncated)")));
        }
        Ok(Reader { body, pos: 8, what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.body.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "{}: unexpected end of data at byte {}",
                self.what, self.pos
            )));
        }
        let s = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: invalid UTF-8 at byte {at}", self.what)))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn overflow(&self) -> Error {
        Error::Checkpoint(format!("{}: size overflow at byte {}", self.what, self.pos))
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let name = self.str()?;
        let rank = self.usize()?;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{}: tensor `{name}` has rank {rank}", self.what)));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| self.overflow())?;
        let data = self.f64s(count)?;
        Ok(Tensor { name, shape, data })
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} unexpected trailing bytes",
                self.what,
                self.body.len() - self.pos
            )));
        }
        Ok(())
    }
}
