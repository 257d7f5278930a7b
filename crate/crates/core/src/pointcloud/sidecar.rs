//! Per-point label sidecar.
//!
//! Layout (little-endian): `b"C3DL"`, `u32` version (1), `u64` point count,
//! then per point one `u8` label code and one `f32` confidence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ClassLabel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"C3DL";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;
const RECORD_LEN: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidecarLabel {
    pub label: ClassLabel,
    pub confidence: f32,
}

pub fn write_sidecar(path: impl AsRef<Path>, labels: &[SidecarLabel]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(labels.len() as u64).to_le_bytes())?;
    for l in labels {
        w.write_all(&[l.label.code()])?;
        w.write_all(&l.confidence.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<SidecarLabel>> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut head = [0u8; HEADER_LEN as usize];
    read_at(&mut r, &mut head, 0)?;
    if &head[..4] != MAGIC {
        return Err(parse_err(0, "missing C3DL magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(parse_err(
            4,
            format!("unsupported sidecar version {version}"),
        ));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().unwrap());
    let mut out = Vec::with_capacity(n.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_LEN as usize];
    for i in 0..n {
        let offset = HEADER_LEN + i * RECORD_LEN;
        read_at(&mut r, &mut rec, offset)?;
        let label = ClassLabel::from_code(rec[0])
            .ok_or_else(|| parse_err(offset, format!("invalid label code {}", rec[0])))?;
        let confidence = f32::from_le_bytes(rec[1..5].try_into().unwrap());
        if !(0.0..=1.0).contains(&confidence) {
            return Err(parse_err(
                offset + 1,
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        out.push(SidecarLabel { label, confidence });
    }
    Ok(out)
}

fn read_at(r: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => parse_err(offset, "unexpected end of file"),
        _ => Error::Io(e),
    })
}

fn parse_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.c3dl");
        let labels: Vec<_> = ClassLabel::ALL
            .iter()
            .enumerate()
            .map(|(i, &label)| SidecarLabel {
                label,
                confidence: i as f32 / 10.0,
            })
            .collect();
        write_sidecar(&p, &labels).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 5 * 11);
        assert_eq!(read_sidecar(&p).unwrap(), labels);
    }

    #[test]
    fn truncated_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.c3dl");
        let labels = vec![
            SidecarLabel {
                label: ClassLabel::Building,
                confidence: 0.5
            };
            3
        ];
        write_sidecar(&p, &labels).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        match read_sidecar(&p) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&p, b"LASF").unwrap();
        assert!(matches!(
            read_sidecar(&p),
            Err(Error::Parse { offset: 0, .. })
        ));
    }
}
