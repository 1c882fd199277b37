//! Little-endian binary file plumbing shared by the image, segmentation,
//! and weight-checkpoint formats. Errors carry the byte offset at which
//! decoding failed.

use std::io::{self, Read, Write};

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at byte {offset}: expected {expected:?}")]
    BadMagic { offset: u64, expected: [u8; 4] },
    #[error("unsupported format version {got} at byte {offset} (expected {expected})")]
    BadVersion { offset: u64, got: u32, expected: u32 },
    #[error("unexpected end of file at byte {offset}")]
    UnexpectedEof { offset: u64 },
    #[error("invalid field at byte {offset}: {what}")]
    InvalidField { offset: u64, what: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Tracks the read offset so failures can name the byte position.
pub struct Reader<R> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(FormatError::UnexpectedEof { offset: self.offset })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Try to read a byte; `None` at a clean end of file.
    pub fn peek_byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(None),
            _ => {
                self.offset += 1;
                Ok(Some(b[0]))
            }
        }
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let at = self.offset;
        let mut got = [0u8; 4];
        self.read_exact(&mut got)?;
        if got != expected {
            return Err(FormatError::BadMagic { offset: at, expected });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let at = self.offset;
        let got = self.u32()?;
        if got != expected {
            return Err(FormatError::BadVersion { offset: at, got, expected });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u16_vec(&mut self, n: usize) -> Result<Vec<u16>> {
        let mut bytes = vec![0u8; n * 2];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect())
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.read_exact(&mut b)?;
        Ok(b)
    }
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32_slice<W: Write>(w: &mut W, vs: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 4);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_u16_slice<W: Write>(w: &mut W, vs: &[u16]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 2);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}
