//! Section-tagged binary container shared by model and alignment checkpoints.
//!
//! Layout: 8-byte magic, u32 format version, then any number of sections,
//! each a 4-byte tag, a u64 payload length and the payload. All integers and
//! floats are little-endian.

use std::path::Path;

pub const MAGIC: &[u8; 8] = b"LECKGBIN";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated data in section {0}")]
    Truncated(String),
    #[error("missing section {0}")]
    MissingSection(String),
    #[error("malformed section {tag}: {message}")]
    Malformed { tag: String, message: String },
}

#[derive(Debug, Default, Clone)]
pub struct SectionWriter {
    buf: Vec<u8>,
}

impl SectionWriter {
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn strs<S: AsRef<str>>(&mut self, ss: &[S]) -> &mut Self {
        self.u64(ss.len() as u64);
        for s in ss {
            self.str(s.as_ref());
        }
        self
    }
}

pub struct SectionReader<'a> {
    tag: String,
    data: &'a [u8],
    pos: usize,
}

impl<'a> SectionReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.data.len() - self.pos < n {
            return Err(ContainerError::Truncated(self.tag.clone()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, ContainerError> {
        usize::try_from(self.u64()?).map_err(|_| self.malformed("length overflows usize"))
    }

    pub fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, ContainerError> {
        let n = self.usize()?;
        if n.saturating_mul(8) > self.data.len() - self.pos {
            return Err(ContainerError::Truncated(self.tag.clone()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String, ContainerError> {
        let n = self.usize()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.malformed("invalid utf-8"))
    }

    pub fn strs(&mut self) -> Result<Vec<String>, ContainerError> {
        let n = self.usize()?;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn malformed(&self, message: impl Into<String>) -> ContainerError {
        ContainerError::Malformed {
            tag: self.tag.clone(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Container {
    sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tag: &[u8; 4], section: SectionWriter) -> &mut Self {
        self.sections.push((*tag, section.buf));
        self
    }

    pub fn section(&self, tag: &[u8; 4]) -> Result<SectionReader<'_>, ContainerError> {
        let name = String::from_utf8_lossy(tag).into_owned();
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, data)| SectionReader {
                tag: name.clone(),
                data,
                pos: 0,
            })
            .ok_or(ContainerError::MissingSection(name))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (tag, data) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            out.extend_from_slice(data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let mut pos = 12;
        let mut sections = Vec::new();
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(ContainerError::Truncated("header".into()));
            }
            let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap());
            pos += 12;
            let len = usize::try_from(len).ok().filter(|l| *l <= bytes.len() - pos);
            let Some(len) = len else {
                return Err(ContainerError::Truncated(String::from_utf8_lossy(&tag).into_owned()));
            };
            sections.push((tag, bytes[pos..pos + len].to_vec()));
            pos += len;
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut w = SectionWriter::default();
        w.u64(7).f64(-0.5).f64s(&[1.0, f64::MIN_POSITIVE]).str("青海").strs(&["a", "b"]);
        let mut c = Container::new();
        c.push(b"TEST", w);
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        let mut r = back.section(b"TEST").unwrap();
        assert_eq!(r.u64().unwrap(), 7);
        assert_eq!(r.f64().unwrap(), -0.5);
        assert_eq!(r.f64s().unwrap(), vec![1.0, f64::MIN_POSITIVE]);
        assert_eq!(r.str().unwrap(), "青海");
        assert_eq!(r.strs().unwrap(), vec!["a", "b"]);
        assert!(matches!(back.section(b"NONE"), Err(ContainerError::MissingSection(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Container::from_bytes(b"nope"), Err(ContainerError::BadMagic)));
        let mut c = Container::new();
        c.push(b"TEST", SectionWriter::default());
        let mut bytes = c.to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(Container::from_bytes(&bytes).is_err());
    }
}
