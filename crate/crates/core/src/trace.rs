//! `CSI5` binary trace files.
//!
//! Layout (little-endian):
//!
//! | offset | type | field             |
//! |--------|------|-------------------|
//! | 0      | [u8;4] | magic `CSI5`    |
//! | 4      | u16  | version (1)       |
//! | 6      | u16  | antenna_count     |
//! | 8      | u32  | subcarrier_count  |
//! | 12     | u32  | frame_count       |
//! | 16     | u32  | frame_interval_us |
//! | 20     | u64  | carrier_hz        |
//! | 28     | f32 pairs | frame-major, then antenna, then subcarrier; (re, im) |

use ndarray::Array3;
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::csi::CsiRecording;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSI5";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub antenna_count: u16,
    pub subcarrier_count: u32,
    pub frame_count: u32,
    pub frame_interval_us: u32,
    pub carrier_hz: u64,
}

impl TraceHeader {
    pub fn for_recording(rec: &CsiRecording) -> Result<Self> {
        let too_big = |field: &str| Error::validation(field, "does not fit the trace header");
        let interval_us = (rec.frame_interval() * 1e6).round();
        if !(1.0..=u32::MAX as f64).contains(&interval_us) {
            return Err(too_big("frame_interval"));
        }
        Ok(Self {
            antenna_count: u16::try_from(rec.antenna_count()).map_err(|_| too_big("antenna_count"))?,
            subcarrier_count: u32::try_from(rec.subcarrier_count())
                .map_err(|_| too_big("subcarrier_count"))?,
            frame_count: u32::try_from(rec.frame_count()).map_err(|_| too_big("frame_count"))?,
            frame_interval_us: interval_us as u32,
            carrier_hz: rec.carrier_hz().round() as u64,
        })
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(MAGIC);
        buf[4..6].copy_from_slice(&VERSION.to_le_bytes());
        buf[6..8].copy_from_slice(&self.antenna_count.to_le_bytes());
        buf[8..12].copy_from_slice(&self.subcarrier_count.to_le_bytes());
        buf[12..16].copy_from_slice(&self.frame_count.to_le_bytes());
        buf[16..20].copy_from_slice(&self.frame_interval_us.to_le_bytes());
        buf[20..28].copy_from_slice(&self.carrier_hz.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        if &buf[0..4] != MAGIC {
            return Err(Error::Corrupt(format!("bad magic {:?}", &buf[0..4])));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported trace version {version}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        Ok(Self {
            antenna_count: u16::from_le_bytes([buf[6], buf[7]]),
            subcarrier_count: u32_at(8),
            frame_count: u32_at(12),
            frame_interval_us: u32_at(16),
            carrier_hz: u64::from_le_bytes(buf[20..28].try_into().unwrap()),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.antenna_count as usize * self.subcarrier_count as usize * self.frame_count as usize
    }
}

pub fn write_trace<W: Write>(rec: &CsiRecording, mut out: W) -> Result<()> {
    let header = TraceHeader::for_recording(rec)?;
    out.write_all(&header.encode())?;
    let data = rec.data();
    let (n_ant, n_sc, n_fr) = data.dim();
    let mut frame = Vec::with_capacity(n_ant * n_sc * 8);
    for t in 0..n_fr {
        frame.clear();
        for i in 0..n_ant {
            for k in 0..n_sc {
                let z = data[[i, k, t]];
                frame.extend_from_slice(&(z.re as f32).to_le_bytes());
                frame.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        out.write_all(&frame)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(mut input: R) -> Result<CsiRecording> {
    let mut head = [0u8; HEADER_LEN];
    input
        .read_exact(&mut head)
        .map_err(|e| Error::Corrupt(format!("truncated header: {e}")))?;
    let header = TraceHeader::decode(&head)?;
    let (n_ant, n_sc, n_fr) = (
        header.antenna_count as usize,
        header.subcarrier_count as usize,
        header.frame_count as usize,
    );
    if n_ant < 2 || n_sc < 1 || n_fr < 2 || header.frame_interval_us == 0 {
        return Err(Error::Corrupt(format!("implausible header {header:?}")));
    }
    let mut data = Array3::<Complex64>::zeros((n_ant, n_sc, n_fr));
    let mut frame = vec![0u8; n_ant * n_sc * 8];
    for t in 0..n_fr {
        input
            .read_exact(&mut frame)
            .map_err(|e| Error::Corrupt(format!("truncated payload at frame {t}: {e}")))?;
        let mut chunks = frame.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for i in 0..n_ant {
            for k in 0..n_sc {
                let re = chunks.next().unwrap();
                let im = chunks.next().unwrap();
                if !(re.is_finite() && im.is_finite()) {
                    return Err(Error::Corrupt(format!("non-finite sample at ({i}, {k}, {t})")));
                }
                data[[i, k, t]] = Complex64::new(re as f64, im as f64);
            }
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Corrupt("trailing bytes after payload".into()));
    }
    CsiRecording::new(data, header.frame_interval_us as f64 / 1e6, header.carrier_hz as f64)
}

pub fn save_trace(rec: &CsiRecording, path: &Path) -> Result<()> {
    write_trace(rec, BufWriter::new(File::create(path)?))
}

pub fn load_trace(path: &Path) -> Result<CsiRecording> {
    read_trace(BufReader::new(File::open(path)?))
}
