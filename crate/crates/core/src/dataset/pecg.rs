//! `PECG` record container.
//!
//! Layout: magic `PECG`, version (`u32` LE), header length (`u32` LE), JSON
//! header, then one little-endian `f32` block per lead in header order.
//! The header carries a SHA-256 of the concatenated blocks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::record::{Lead, LeadKind, MultiViewRecord, RecordError};
use crate::dipole::ViewAngle;

pub const MAGIC: &[u8; 4] = b"PECG";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PecgError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a PECG container (bad magic)")]
    BadMagic,
    #[error("unsupported PECG version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("invalid record: {0}")]
    Record(#[from] RecordError),
}

#[derive(Debug, Serialize, Deserialize)]
struct LeadHeader {
    label: String,
    kind: LeadKind,
    nominal: ViewAngle,
    #[serde(rename = "true")]
    true_angle: ViewAngle,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    subject_id: String,
    fs: f64,
    device: String,
    n_samples: usize,
    n_leads: usize,
    leads: Vec<LeadHeader>,
    sha256: String,
}

fn sample_bytes(record: &MultiViewRecord) -> Vec<u8> {
    let mut buf = Vec::with_capacity(record.leads.len() * record.n_samples() * 4);
    for l in &record.leads {
        for x in &l.samples {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_record<W: Write>(mut out: W, record: &MultiViewRecord) -> Result<(), PecgError> {
    record.validate()?;
    let body = sample_bytes(record);
    let header = Header {
        subject_id: record.subject_id.clone(),
        fs: record.fs,
        device: record.device.clone(),
        n_samples: record.n_samples(),
        n_leads: record.leads.len(),
        leads: record
            .leads
            .iter()
            .map(|l| LeadHeader {
                label: l.label.clone(),
                kind: l.kind,
                nominal: l.nominal_angle,
                true_angle: l.true_angle,
            })
            .collect(),
        sha256: hex(&Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&body)?;
    out.flush()?;
    Ok(())
}

pub fn record_to_bytes(record: &MultiViewRecord) -> Result<Vec<u8>, PecgError> {
    let mut buf = Vec::new();
    write_record(&mut buf, record)?;
    Ok(buf)
}

/// Parses a complete in-memory container.
pub fn read_record_bytes(bytes: &[u8]) -> Result<MultiViewRecord, PecgError> {
    let take = |at: usize, n: usize, what: &str| {
        bytes
            .get(at..at + n)
            .ok_or_else(|| PecgError::Truncated(format!("{what} at byte {at}")))
    };
    if take(0, 4, "magic")? != MAGIC {
        return Err(PecgError::BadMagic);
    }
    let u32_at = |at: usize, what: &str| take(at, 4, what).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let version = u32_at(4, "version")?;
    if version != VERSION {
        return Err(PecgError::Version(version));
    }
    let hlen = u32_at(8, "header length")? as usize;
    let header: Header = serde_json::from_slice(take(12, hlen, "header")?)?;
    if header.leads.len() != header.n_leads {
        return Err(PecgError::Structure(format!(
            "header declares {} leads but describes {}",
            header.n_leads,
            header.leads.len()
        )));
    }
    let body = &bytes[12 + hlen..];
    let block = header.n_samples * 4;
    let expected = block * header.n_leads;
    if body.len() != expected {
        if block > 0 && body.len() % block == 0 {
            return Err(PecgError::Structure(format!(
                "header declares {} leads, found {} blocks",
                header.n_leads,
                body.len() / block
            )));
        }
        if body.len() < expected {
            return Err(PecgError::Truncated(format!(
                "{} of {} sample bytes present",
                body.len(),
                expected
            )));
        }
        return Err(PecgError::Structure(format!("{} trailing bytes", body.len() - expected)));
    }
    if hex(&Sha256::digest(body)) != header.sha256 {
        return Err(PecgError::Checksum);
    }
    let leads = header
        .leads
        .into_iter()
        .zip(body.chunks_exact(block.max(1)))
        .map(|(h, raw)| Lead {
            label: h.label,
            kind: h.kind,
            nominal_angle: h.nominal,
            true_angle: h.true_angle,
            samples: raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        })
        .collect();
    let record = MultiViewRecord {
        subject_id: header.subject_id,
        fs: header.fs,
        device: header.device,
        leads,
    };
    record.validate()?;
    Ok(record)
}

pub fn read_record<R: Read>(mut input: R) -> Result<MultiViewRecord, PecgError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    read_record_bytes(&bytes)
}

/// Hex SHA-256 of an encoded container, used by manifests.
pub fn file_checksum(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n_leads: usize) -> MultiViewRecord {
        MultiViewRecord {
            subject_id: "s0".into(),
            fs: 250.0,
            device: "identity".into(),
            leads: (0..n_leads)
                .map(|i| Lead {
                    label: format!("L{i}"),
                    kind: LeadKind::Chest,
                    nominal_angle: ViewAngle::deg(90.0, i as f64),
                    true_angle: ViewAngle::deg(91.5, i as f64 - 0.25),
                    samples: (0..16).map(|t| (t * i) as f32 * 0.125 - 1.0 / 3.0).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let r = record(4);
        let bytes = record_to_bytes(&r).unwrap();
        assert_eq!(read_record_bytes(&bytes).unwrap(), r);
    }

    #[test]
    fn structural_errors() {
        let bytes = record_to_bytes(&record(48)).unwrap();
        let missing_block = &bytes[..bytes.len() - 16 * 4];
        assert!(matches!(read_record_bytes(missing_block), Err(PecgError::Structure(m)) if m.contains("47 blocks")));
        let partial = &bytes[..bytes.len() - 5];
        assert!(matches!(read_record_bytes(partial), Err(PecgError::Truncated(_))));
        let mut corrupt = bytes.clone();
        *corrupt.last_mut().unwrap() ^= 1;
        assert!(matches!(read_record_bytes(&corrupt), Err(PecgError::Checksum)));
        assert!(matches!(read_record_bytes(b"XECG"), Err(PecgError::BadMagic)));
        assert!(matches!(read_record_bytes(&bytes[..10]), Err(PecgError::Truncated(_))));
    }
}
