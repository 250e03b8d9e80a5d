//! Network geometry, parameters and the `CNN1` model file.
//!
//! File layout (little-endian): magic `CNN1`, input dims `u16 x 3`
//! `(C, F, T)`, tensor count `u16`, then per tensor a `u16` rank and `rank`
//! `u32` dims, then every tensor's values as `f32` in table order.

use rand::Rng as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::substream;

pub const MODEL_MAGIC: &[u8; 4] = b"CNN1";
pub const KERNEL: usize = 3;
pub const CLASSES: usize = 4;
const STREAM_INIT: u64 = 0x11;

/// Layer sizes of the two-block CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub classes: usize,
}

impl Architecture {
    /// 4 x 64 x 128 input, 8 and 16 filters.
    pub const fn standard() -> Self {
        Self {
            channels: 4,
            height: 64,
            width: 128,
            conv1_filters: 8,
            conv2_filters: 16,
            classes: CLASSES,
        }
    }

    /// Small enough for central-difference gradient checks.
    pub const fn reduced() -> Self {
        Self {
            channels: 4,
            height: 8,
            width: 8,
            conv1_filters: 2,
            conv2_filters: 2,
            classes: CLASSES,
        }
    }

    pub fn with_input(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.conv1_filters == 0 || self.conv2_filters == 0 || self.classes < 2 {
            return Err(Error::validation("architecture", format!("degenerate layer sizes {self:?}")));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(Error::validation(
                "architecture",
                format!("input {}x{} must be positive multiples of 4", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn flat_len(&self) -> usize {
        self.conv2_filters * (self.height / 4) * (self.width / 4)
    }

    /// Parameter tensors in storage order.
    pub fn tensor_shapes(&self) -> [(&'static str, Vec<usize>); 6] {
        [
            ("conv1.weight", vec![self.conv1_filters, self.channels, KERNEL, KERNEL]),
            ("conv1.bias", vec![self.conv1_filters]),
            ("conv2.weight", vec![self.conv2_filters, self.conv1_filters, KERNEL, KERNEL]),
            ("conv2.bias", vec![self.conv2_filters]),
            ("dense.weight", vec![self.classes, self.flat_len()]),
            ("dense.bias", vec![self.classes]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Start offsets of each tensor in the flat parameter vector.
    pub(crate) fn offsets(&self) -> [usize; 7] {
        let mut out = [0; 7];
        for (n, (_, shape)) in self.tensor_shapes().iter().enumerate() {
            out[n + 1] = out[n] + shape.iter().product::<usize>();
        }
        out
    }
}

/// All weights and biases as one flat vector in `tensor_shapes` order.
///
/// Values are held as `f64` for computation; trained and initialised
/// parameters are kept exactly representable in `f32`, so a save/load round
/// trip is bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            values: vec![0.0; arch.param_count()],
            arch,
        })
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = substream(seed, STREAM_INIT);
        let offsets = arch.offsets();
        for (n, (name, shape)) in arch.tensor_shapes().iter().enumerate() {
            if name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let gain = if name.starts_with("dense") { 3.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            for v in &mut params.values[offsets[n]..offsets[n + 1]] {
                *v = rng.random_range(-bound..bound) as f32 as f64;
            }
        }
        Ok(params)
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::ShapeMismatch {
                expected: vec![arch.param_count()],
                actual: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("params", "non-finite parameter"));
        }
        Ok(Self { arch, values })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Slice of tensor `n` in `tensor_shapes` order.
    pub fn tensor(&self, n: usize) -> &[f64] {
        let o = self.arch.offsets();
        &self.values[o[n]..o[n + 1]]
    }

    pub fn tensor_mut(&mut self, n: usize) -> &mut [f64] {
        let o = self.arch.offsets();
        &mut self.values[o[n]..o[n + 1]]
    }

    /// Round every value to the nearest `f32`.
    pub fn quantize(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 4 * self.values.len());
        buf.extend_from_slice(MODEL_MAGIC);
        for d in [self.arch.channels, self.arch.height, self.arch.width] {
            buf.extend_from_slice(&to_u16(d, "input dimension")?.to_le_bytes());
        }
        let shapes = self.arch.tensor_shapes();
        buf.extend_from_slice(&(shapes.len() as u16).to_le_bytes());
        for (_, shape) in &shapes {
            buf.extend_from_slice(&(shape.len() as u16).to_le_bytes());
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| Error::validation("tensor shape", "dimension exceeds u32"))?;
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MODEL_MAGIC {
            return Err(Error::Corrupt("bad model magic, expected CNN1".into()));
        }
        let (c, h, w) = (cur.u16()? as usize, cur.u16()? as usize, cur.u16()? as usize);
        let count = cur.u16()? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = cur.u16()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            shapes.push(shape);
        }
        if shapes.len() != 6 || shapes[0].len() != 4 || shapes[2].len() != 4 || shapes[4].len() != 2 {
            return Err(Error::Corrupt("unexpected model shape table".into()));
        }
        let arch = Architecture {
            channels: c,
            height: h,
            width: w,
            conv1_filters: shapes[0][0],
            conv2_filters: shapes[2][0],
            classes: shapes[4][0],
        };
        arch.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let expected: Vec<Vec<usize>> = arch.tensor_shapes().into_iter().map(|(_, s)| s).collect();
        if shapes != expected {
            return Err(Error::Corrupt(format!("shape table {shapes:?} does not match {expected:?}")));
        }
        let n = arch.param_count();
        let payload = cur.take(4 * n)?;
        if cur.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes after model payload", bytes.len() - cur.pos)));
        }
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Self::from_values(arch, values).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn to_u16(d: usize, what: &str) -> Result<u16> {
    u16::try_from(d).map_err(|_| Error::validation(what, format!("{d} exceeds u16")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("model file truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_sizes() {
        let a = Architecture::standard();
        assert_eq!(a.flat_len(), 16 * 16 * 32);
        assert_eq!(a.param_count(), 8 * 4 * 9 + 8 + 16 * 8 * 9 + 16 + 4 * 8192 + 4);
        assert!(Architecture::with_input(4, 62, 128).validate().is_err());
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let p = ModelParams::init(Architecture::reduced(), 3).unwrap();
        let mut bytes = Vec::new();
        p.write(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"CNN1");
        let q = ModelParams::read(&bytes[..]).unwrap();
        assert_eq!(p, q);
        let mut again = Vec::new();
        q.write(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = ModelParams::init(Architecture::reduced(), 3).unwrap();
        let mut bytes = Vec::new();
        p.write(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelParams::read(&bad[..]), Err(Error::Corrupt(_))));
        assert!(matches!(ModelParams::read(&bytes[..bytes.len() - 2]), Err(Error::Corrupt(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(ModelParams::read(&long[..]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(Architecture::standard(), 1).unwrap();
        let b = ModelParams::init(Architecture::standard(), 1).unwrap();
        let c = ModelParams::init(Architecture::standard(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.tensor(1).iter().all(|&v| v == 0.0));
    }
}
