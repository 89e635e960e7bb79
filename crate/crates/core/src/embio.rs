//! On-disk dataset formats.
//!
//! EMB layout (all integers little-endian):
//!
//! ```text
//! offset  size   field
//! 0       4      magic "LFRE"
//! 4       4      version (u32) = 1
//! 8       4      n, sample count (u32)
//! 12      4      d, feature dimension (u32)
//! 16      1      has_groups (0 or 1)
//! 17      4*n*d  features, f32 row-major
//! ..      n      class label bytes
//! ..      n      alignment bytes, only if has_groups (0 = majority, 1 = minority)
//! ```
//!
//! Features are stored as `f32` and widened to `f64` on load. A group's class
//! is taken from the stored label.
//!
//! CSV layout: header `f0,...,f{d-1},label[,group]`, group tokens
//! `majority`/`minority`, floats printed with 9 significant digits.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::dataspec::{Alignment, DataError, GroupId, GroupedDataset, Samples};

pub const EMB_MAGIC: &[u8; 4] = b"LFRE";
pub const EMB_VERSION: u32 = 1;
pub const EMB_HEADER_LEN: usize = 17;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected \"LFRE\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} (expected {EMB_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("payload length mismatch: header implies {expected} bytes, file has {actual}")]
    PayloadLength { expected: u64, actual: u64 },
    #[error("header truncated: {actual} bytes, need {EMB_HEADER_LEN}")]
    TruncatedHeader { actual: usize },
    #[error("invalid has_groups flag {0}")]
    BadFlag(u8),
    #[error("invalid alignment byte {value} at sample {index}")]
    BadAlignment { index: usize, value: u8 },
    #[error("{what} = {value} does not fit in 32 bits")]
    Overflow { what: &'static str, value: usize },
    #[error("label {0} does not fit in one byte")]
    LabelOverflow(usize),
    #[error("bad CSV header: {0}")]
    BadHeader(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("line {line}: non-numeric value {value:?} in column {column}")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("line {line}: unknown group token {token:?}")]
    UnknownGroup { line: u64, token: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn to_u32(what: &'static str, value: usize) -> Result<u32, FormatError> {
    u32::try_from(value).map_err(|_| FormatError::Overflow { what, value })
}

/// Serializes a dataset into EMB bytes.
pub fn encode_emb(dataset: &GroupedDataset) -> Result<Vec<u8>, FormatError> {
    let samples = dataset.samples();
    let (n, d) = (samples.len(), samples.dim());
    let n32 = to_u32("n", n)?;
    let d32 = to_u32("d", d)?;
    to_u32("n*d", n.checked_mul(d).ok_or(FormatError::Overflow { what: "n*d", value: usize::MAX })?)?;
    let groups = dataset.groups();
    let mut out = Vec::with_capacity(EMB_HEADER_LEN + 4 * n * d + 2 * n);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    out.push(u8::from(groups.is_some()));
    for &x in samples.features() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &y in samples.labels() {
        out.push(u8::try_from(y).map_err(|_| FormatError::LabelOverflow(y))?);
    }
    if let Some(groups) = groups {
        out.extend(groups.iter().map(|g| g.alignment.as_byte()));
    }
    Ok(out)
}

/// Parses EMB bytes.
pub fn decode_emb(bytes: &[u8]) -> Result<GroupedDataset, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != EMB_MAGIC {
        let mut found = [0u8; 4];
        let k = bytes.len().min(4);
        found[..k].copy_from_slice(&bytes[..k]);
        return Err(FormatError::BadMagic { found });
    }
    if bytes.len() < EMB_HEADER_LEN {
        return Err(FormatError::TruncatedHeader { actual: bytes.len() });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != EMB_VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let has_groups = match bytes[16] {
        0 => false,
        1 => true,
        other => return Err(FormatError::BadFlag(other)),
    };
    let expected = EMB_HEADER_LEN as u64
        + 4 * n as u64 * d as u64
        + n as u64
        + if has_groups { n as u64 } else { 0 };
    if bytes.len() as u64 != expected {
        return Err(FormatError::PayloadLength { expected, actual: bytes.len() as u64 });
    }

    let body = &bytes[EMB_HEADER_LEN..];
    let (float_bytes, rest) = body.split_at(4 * n * d);
    let features = float_bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let (label_bytes, group_bytes) = rest.split_at(n);
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let groups = if has_groups {
        let mut groups = Vec::with_capacity(n);
        for (index, (&b, &y)) in group_bytes.iter().zip(&labels).enumerate() {
            let alignment = Alignment::from_byte(b).ok_or(FormatError::BadAlignment { index, value: b })?;
            groups.push(GroupId::new(y, alignment));
        }
        Some(groups)
    } else {
        None
    };
    Ok(GroupedDataset::new(Samples::new(features, d, labels)?, groups)?)
}

pub fn write_emb(dataset: &GroupedDataset, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let bytes = encode_emb(dataset)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<GroupedDataset, FormatError> {
    decode_emb(&fs::read(path)?)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_csv(dataset: &GroupedDataset, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let samples = dataset.samples();
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header: Vec<String> = (0..samples.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if dataset.groups().is_some() {
        header.push("group".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..samples.len() {
        let mut fields: Vec<String> = samples.row(i).iter().map(|&x| fmt_float(x)).collect();
        fields.push(samples.label(i).to_string());
        if let Some(groups) = dataset.groups() {
            fields.push(groups[i].alignment.as_str().to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>, has_groups: bool) -> Result<GroupedDataset, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let extra = if has_groups { 2 } else { 1 };
    if header.len() < extra + 1 {
        return Err(FormatError::BadHeader(format!("only {} columns", header.len())));
    }
    let d = header.len() - extra;
    for (j, name) in header.iter().enumerate() {
        let expected = match j {
            j if j < d => format!("f{j}"),
            j if j == d => "label".into(),
            _ => "group".into(),
        };
        if name != expected {
            return Err(FormatError::BadHeader(format!("column {j} is {name:?}, expected {expected:?}")));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(FormatError::RaggedRow { line, expected: header.len(), found: record.len() });
        }
        for (j, field) in record.iter().take(d).enumerate() {
            let x: f64 = field.parse().map_err(|_| FormatError::NonNumeric {
                line,
                column: header[j].to_string(),
                value: field.to_string(),
            })?;
            features.push(x);
        }
        let label: usize = record[d].parse().map_err(|_| FormatError::NonNumeric {
            line,
            column: "label".into(),
            value: record[d].to_string(),
        })?;
        labels.push(label);
        if has_groups {
            let token = &record[d + 1];
            let alignment = Alignment::parse(token)
                .ok_or_else(|| FormatError::UnknownGroup { line, token: token.to_string() })?;
            groups.push(GroupId::new(label, alignment));
        }
    }
    let samples = Samples::new(features, d, labels)?;
    Ok(GroupedDataset::new(samples, has_groups.then_some(groups))?)
}
