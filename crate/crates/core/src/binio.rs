//! Little-endian helpers shared by every binary artifact.
//!
//! Each artifact starts with a four byte magic followed by a `u32` version.
//! Readers reject both a wrong magic and an unknown version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Writer wrapper that turns `std::io::Error` into [`Error::Io`] tagged with a path.
pub(crate) struct BinWriter<'a, W: Write> {
    inner: W,
    path: &'a Path,
}

impl<'a, W: Write> BinWriter<'a, W> {
    pub fn new(inner: W, path: &'a Path) -> Self {
        Self { inner, path }
    }

    fn wrap<T>(&self, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| Error::io(self.path, e))
    }

    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let r = self.inner.write_all(magic);
        self.wrap(r)?;
        self.u32(version)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        let r = self.inner.write_u8(v);
        self.wrap(r)
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        let r = self.inner.write_u16::<LittleEndian>(v);
        self.wrap(r)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        let r = self.inner.write_u32::<LittleEndian>(v);
        self.wrap(r)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        let r = self.inner.write_u64::<LittleEndian>(v);
        self.wrap(r)
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        let r = self.inner.write_f32::<LittleEndian>(v);
        self.wrap(r)
    }

    pub fn f32s(&mut self, vs: &[f32]) -> Result<()> {
        for &v in vs {
            self.f32(v)?;
        }
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        let r = self.inner.write_all(s.as_bytes());
        self.wrap(r)
    }

    pub fn finish(mut self) -> Result<()> {
        let r = self.inner.flush();
        self.wrap(r)
    }
}

pub(crate) struct BinReader<'a, R: Read> {
    inner: R,
    path: &'a Path,
}

impl<'a, R: Read> BinReader<'a, R> {
    pub fn new(inner: R, path: &'a Path) -> Self {
        Self { inner, path }
    }

    fn wrap<T>(&self, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| Error::io(self.path, e))
    }

    pub fn header(&mut self, magic: &'static str, version: u32) -> Result<()> {
        let mut buf = [0u8; 4];
        let r = self.inner.read_exact(&mut buf);
        self.wrap(r)?;
        if buf != magic.as_bytes() {
            return Err(Error::BadMagic {
                what: self.path.display().to_string(),
                expected: magic,
            });
        }
        let found = self.u32()?;
        if found != version {
            return Err(Error::Version {
                what: self.path.display().to_string(),
                found,
                expected: version,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        let r = self.inner.read_u8();
        self.wrap(r)
    }

    pub fn u16(&mut self) -> Result<u16> {
        let r = self.inner.read_u16::<LittleEndian>();
        self.wrap(r)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let r = self.inner.read_u32::<LittleEndian>();
        self.wrap(r)
    }

    pub fn u64(&mut self) -> Result<u64> {
        let r = self.inner.read_u64::<LittleEndian>();
        self.wrap(r)
    }

    pub fn f32(&mut self) -> Result<f32> {
        let r = self.inner.read_f32::<LittleEndian>();
        self.wrap(r)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = vec![0f32; n];
        let r = self.inner.read_f32_into::<LittleEndian>(&mut out);
        self.wrap(r)?;
        Ok(out)
    }

    /// Reads a `u32` count and rejects values above `max` so corrupted files
    /// cannot trigger huge allocations.
    pub fn count(&mut self, max: usize, what: &str) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > max {
            return Err(Error::Invalid(format!(
                "{}: {what} count {n} exceeds limit {max}",
                self.path.display()
            )));
        }
        Ok(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.count(1 << 20, "string length")?;
        let mut buf = vec![0u8; n];
        let r = self.inner.read_exact(&mut buf);
        self.wrap(r)?;
        String::from_utf8(buf)
            .map_err(|_| Error::Invalid(format!("{}: invalid UTF-8", self.path.display())))
    }

    /// Errors unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        let r = self.inner.read(&mut probe);
        match self.wrap(r)? {
            0 => Ok(()),
            _ => Err(Error::Invalid(format!(
                "{}: trailing bytes after payload",
                self.path.display()
            ))),
        }
    }
}
