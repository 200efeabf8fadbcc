//! Binary time-tag files.
//!
//! Little-endian. Header: magic `PTAG`, version `u32 = 1`, `rep_period_fs: u64`,
//! `record_count: u64`. Each 16-byte record: `time_fs: u64`, `pulse_low: u32`
//! (low 32 bits of the pulse index), `channel: u8`, `flags: u8`, `reserved: u16`.
//! The full pulse index is recovered as `time_fs / rep_period_fs`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Channel, TimeTag};
use crate::error::{Error, Result};

pub const TAG_MAGIC: &[u8; 4] = b"PTAG";
pub const TAG_VERSION: u32 = 1;
pub const TAG_HEADER_BYTES: usize = 24;
pub const TAG_RECORD_BYTES: usize = 16;

pub fn write_tag_stream(tags: &[TimeTag], rep_period_fs: u64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TAG_MAGIC)?;
    w.write_all(&TAG_VERSION.to_le_bytes())?;
    w.write_all(&rep_period_fs.to_le_bytes())?;
    w.write_all(&(tags.len() as u64).to_le_bytes())?;
    let mut rec = [0u8; TAG_RECORD_BYTES];
    for t in tags {
        rec[0..8].copy_from_slice(&t.time_fs.to_le_bytes());
        rec[8..12].copy_from_slice(&(t.pulse_index as u32).to_le_bytes());
        rec[12] = t.channel as u8;
        rec[13] = t.flags;
        rec[14..16].copy_from_slice(&0u16.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tag file, returning the tags and the repetition period.
pub fn read_tag_stream(path: &Path) -> Result<(Vec<TimeTag>, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; TAG_HEADER_BYTES];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("file shorter than the 24-byte header".into()))?;
    if &header[0..4] != TAG_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != TAG_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let period = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if period == 0 {
        return Err(Error::Format("zero repetition period".into()));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected_bytes = count.saturating_mul(TAG_RECORD_BYTES as u64);
    if (body.len() as u64) < expected_bytes {
        return Err(Error::Truncated {
            expected: count,
            found: (body.len() / TAG_RECORD_BYTES) as u64,
        });
    }
    if body.len() as u64 != expected_bytes {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }
    let mut tags = Vec::with_capacity(count as usize);
    for rec in body.chunks_exact(TAG_RECORD_BYTES) {
        let time_fs = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let channel = match rec[12] {
            0 => Channel::Herald,
            1 => Channel::Signal1,
            2 => Channel::Signal2,
            c => return Err(Error::Format(format!("unknown channel {c}"))),
        };
        let pulse_index = time_fs / period;
        if pulse_index as u32 != u32::from_le_bytes(rec[8..12].try_into().unwrap()) {
            return Err(Error::Format(format!("pulse index mismatch at t = {time_fs} fs")));
        }
        tags.push(TimeTag {
            channel,
            pulse_index,
            time_fs,
            flags: rec[13],
        });
    }
    Ok((tags, period))
}
