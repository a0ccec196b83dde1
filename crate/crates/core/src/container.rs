//! Little-endian binary container shared by checkpoints and suite files.
//!
//! ```text
//! magic      8 bytes
//! version    u32
//! header     u64 length + UTF-8 text
//! sections   u32 count, then per section:
//!              u32 name length + UTF-8 name
//!              u8 dtype (0 = f64, 1 = u8, 2 = u64)
//!              u64 element count
//!              raw little-endian elements
//! ```

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after last section")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("unknown section dtype {0}")]
    Dtype(u8),
    #[error("section `{name}`: {reason}")]
    Section { name: String, reason: String },
    #[error("header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl SectionData {
    pub fn len(&self) -> usize {
        match self {
            SectionData::F64(v) => v.len(),
            SectionData::U8(v) => v.len(),
            SectionData::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: String,
    pub sections: Vec<(String, SectionData)>,
}

impl Container {
    pub fn encode(&self, magic: &[u8; 8], version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u64).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, data) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match data {
                SectionData::F64(v) => {
                    out.push(0);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                SectionData::U8(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    out.extend_from_slice(v);
                }
                SectionData::U64(v) => {
                    out.push(2);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 8], version: u32) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let found = r.take(8, "magic").map_err(|_| FormatError::BadMagic {
            expected: *magic,
            found: bytes[..bytes.len().min(8)].to_vec(),
        })?;
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: *magic,
                found: found.to_vec(),
            });
        }
        let v = r.u32("version")?;
        if v != version {
            return Err(FormatError::Version {
                expected: version,
                found: v,
            });
        }
        let header_len = r.len64("header length")?;
        let header = r.string(header_len, "header")?;
        let count = r.u32("section count")? as usize;
        let mut sections = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32("section name length")? as usize;
            let name = r.string(name_len, "section name")?;
            let dtype = r.take(1, "section dtype")?[0];
            let n = r.len64("section length")?;
            let data = match dtype {
                0 => SectionData::F64(
                    r.take(checked_mul(n, 8)?, "section payload")?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => SectionData::U8(r.take(n, "section payload")?.to_vec()),
                2 => SectionData::U64(
                    r.take(checked_mul(n, 8)?, "section payload")?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => return Err(FormatError::Dtype(other)),
            };
            sections.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { header, sections })
    }

    /// Removes and returns the next section, checking its name.
    pub fn expect_section(
        iter: &mut impl Iterator<Item = (String, SectionData)>,
        name: &str,
    ) -> Result<SectionData, FormatError> {
        match iter.next() {
            Some((n, d)) if n == name => Ok(d),
            Some((n, _)) => Err(FormatError::Section {
                name: name.to_string(),
                reason: format!("found `{n}` instead"),
            }),
            None => Err(FormatError::Section {
                name: name.to_string(),
                reason: "missing".into(),
            }),
        }
    }
}

fn checked_mul(n: usize, k: usize) -> Result<usize, FormatError> {
    n.checked_mul(k).ok_or(FormatError::Truncated("section payload"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn len64(&mut self, what: &'static str) -> Result<usize, FormatError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| FormatError::Truncated(what))
    }

    fn string(&mut self, n: usize, what: &'static str) -> Result<String, FormatError> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| FormatError::Utf8(what))
    }
}

/// Parses `key=value` lines up to a line containing only `---`; the rest
/// of the text is returned verbatim.
pub fn parse_header(text: &str) -> (Vec<(String, String)>, String) {
    let mut fields = Vec::new();
    let mut rest = String::new();
    let mut lines = text.split_inclusive('\n');
    for line in lines.by_ref() {
        let trimmed = line.trim_end_matches('\n');
        if trimmed == "---" {
            break;
        }
        if let Some((k, v)) = trimmed.split_once('=') {
            fields.push((k.to_string(), v.to_string()));
        }
    }
    for line in lines {
        rest.push_str(line);
    }
    (fields, rest)
}

pub fn header_field<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str, FormatError> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| FormatError::Header(format!("missing `{key}`")))
}

pub fn parse_field<T: std::str::FromStr>(
    fields: &[(String, String)],
    key: &str,
) -> Result<T, FormatError> {
    let raw = header_field(fields, key)?;
    raw.parse()
        .map_err(|_| FormatError::Header(format!("cannot parse `{key}` from `{raw}`")))
}
