//! Versioned binary checkpoint.
//!
//! ```text
//! "WMCK"  magic
//! u16     version
//! u8      element type (4 = f32, 8 = f64)
//! u8      flags: bit 0 fused gates, bit 1 optimizer state, bit 2 RNG state
//! u32 n + n bytes   model configuration as `key = value` text
//! u32     tensor count, then per tensor:
//!         u16 n + n bytes name, 4 × u32 shape, elements
//! [optimizer] u64 step, f64 β₁, β₂, ε, then m and v per tensor (elements)
//! [rng]   32-byte seed, u64 stream, u128 word position
//! ```
//! Little-endian throughout; tensors appear in the model's construction order.
//! The default element type is f64, which makes a loaded model bit-identical
//! to the saved one; f32 halves the size at the cost of rounding.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, PdcMode, WmsrModel};
use crate::numerics::Grid;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            4 => Ok(Dtype::F32),
            8 => Ok(Dtype::F64),
            _ => Err(malformed(format!("unknown element type {tag}"))),
        }
    }
}

/// Position of a ChaCha8 generator, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub mode: PdcMode,
    pub dtype: Dtype,
    pub tensors: Vec<(String, Grid)>,
    pub optimizer: Option<AdamState>,
    pub rng: Option<RngState>,
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed {
        kind: "checkpoint",
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn from_model(model: &WmsrModel) -> Self {
        Checkpoint {
            config: model.config().clone(),
            mode: model.mode(),
            dtype: Dtype::F64,
            tensors: model.params().iter().map(|(_, n, g)| (n.to_string(), g.clone())).collect(),
            optimizer: None,
            rng: None,
        }
    }

    pub fn to_model(&self) -> Result<WmsrModel> {
        WmsrModel::from_named(self.config.clone(), self.mode, self.tensors.iter().cloned())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer {
            out: Vec::new(),
            dtype: self.dtype,
        };
        w.out.extend_from_slice(&CHECKPOINT_MAGIC);
        w.out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.out.push(self.dtype.tag());
        let flags = u8::from(self.mode == PdcMode::Fused)
            | u8::from(self.optimizer.is_some()) << 1
            | u8::from(self.rng.is_some()) << 2;
        w.out.push(flags);
        w.bytes32(self.config.to_kv().as_bytes())?;
        w.u32(self.tensors.len())?;
        for (name, g) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::invalid("checkpoint", "tensor name too long"))?;
            w.out.extend_from_slice(&len.to_le_bytes());
            w.out.extend_from_slice(name.as_bytes());
            for d in g.shape() {
                w.u32(d)?;
            }
            w.elements(g);
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != self.tensors.len() || opt.v.len() != self.tensors.len() {
                return Err(Error::invalid("checkpoint", "optimizer state does not match tensors"));
            }
            w.out.extend_from_slice(&opt.step.to_le_bytes());
            for c in [opt.beta1, opt.beta2, opt.eps] {
                w.out.extend_from_slice(&c.to_le_bytes());
            }
            for (k, (_, g)) in self.tensors.iter().enumerate() {
                if opt.m[k].shape() != g.shape() || opt.v[k].shape() != g.shape() {
                    return Err(Error::invalid("checkpoint", "optimizer state does not match tensors"));
                }
                w.elements(&opt.m[k]);
                w.elements(&opt.v[k]);
            }
        }
        if let Some(rng) = &self.rng {
            w.out.extend_from_slice(&rng.seed);
            w.out.extend_from_slice(&rng.stream.to_le_bytes());
            w.out.extend_from_slice(&rng.word_pos.to_le_bytes());
        }
        Ok(w.out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                kind: "checkpoint",
                expected: String::from_utf8_lossy(&CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                kind: "checkpoint",
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let dtype = Dtype::from_tag(r.u8()?)?;
        let flags = r.u8()?;
        if flags & !0b111 != 0 {
            return Err(malformed(format!("unknown flags {flags:#04x}")));
        }
        let config_len = r.u32()?;
        let config_text = std::str::from_utf8(r.take(config_len)?).map_err(|_| malformed("configuration is not UTF-8"))?;
        let config = ModelConfig::parse(config_text)?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| malformed("tensor name is not UTF-8"))?
                .to_string();
            let shape = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            let g = r.elements(shape, dtype)?;
            tensors.push((name, g));
        }
        let optimizer = if flags & 0b10 != 0 {
            let step = r.u64()?;
            let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
            let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
            for (_, g) in &tensors {
                m.push(r.elements(g.shape(), dtype)?);
                v.push(r.elements(g.shape(), dtype)?);
            }
            Some(AdamState {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            })
        } else {
            None
        };
        let rng = if flags & 0b100 != 0 {
            let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
            Some(RngState { seed, stream, word_pos })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            mode: if flags & 1 != 0 { PdcMode::Fused } else { PdcMode::Branches },
            dtype,
            tensors,
            optimizer,
            rng,
        })
    }
}

struct Writer {
    out: Vec<u8>,
    dtype: Dtype,
}

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid("checkpoint", format!("{v} does not fit in 32 bits")))?;
        self.out.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn bytes32(&mut self, b: &[u8]) -> Result<()> {
        self.u32(b.len())?;
        self.out.extend_from_slice(b);
        Ok(())
    }

    fn elements(&mut self, g: &Grid) {
        for &v in g.data() {
            match self.dtype {
                Dtype::F32 => self.out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => self.out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            malformed(format!("truncated: needed {n} bytes at offset {}, {} available", self.pos, self.bytes.len() - self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn elements(&mut self, shape: [usize; 4], dtype: Dtype) -> Result<Grid> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| malformed(format!("shape {shape:?} overflows")))?;
        let size = match dtype {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        };
        let raw = self.take(n.checked_mul(size).ok_or_else(|| malformed("tensor too large"))?)?;
        let data = match dtype {
            Dtype::F32 => raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        };
        Grid::from_vec(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use rand::{RngCore, SeedableRng};

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: 4,
            groups: 1,
            blocks_per_group: 1,
            scale: 2,
            ssm_state: 2,
            vssm_expand: 2,
            seed: 9,
        }
    }

    fn input() -> Grid {
        Grid::from_fn([1, 1, 8, 8], |[_, _, y, x]| ((y * 8 + x) as f64 * 0.37).sin() * 0.5 + 0.5)
    }

    #[test]
    fn round_trip_is_exact() {
        let model = WmsrModel::new(tiny()).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        let mut opt = AdamState::new(model.params());
        opt.step = 17;
        opt.m[0].data_mut()[0] = 0.25;
        ck.optimizer = Some(opt);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u64();
        ck.rng = Some(RngState::capture(&rng));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut resumed = back.rng.unwrap().restore();
        assert_eq!(resumed.next_u64(), rng.next_u64());
        let loaded = back.to_model().unwrap();
        let (a, b) = (model.predict(&input()).unwrap(), loaded.predict(&input()).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn f32_round_trip_is_stable() {
        let mut ck = Checkpoint::from_model(&WmsrModel::new(tiny()).unwrap());
        ck.dtype = Dtype::F32;
        let bytes = ck.to_bytes().unwrap();
        let again = Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn fused_flag_survives() {
        let fused = WmsrModel::new(tiny()).unwrap().fused().unwrap();
        let back = Checkpoint::from_bytes(&Checkpoint::from_model(&fused).to_bytes().unwrap()).unwrap();
        assert_eq!(back.mode, PdcMode::Fused);
        let m = back.to_model().unwrap();
        let tape = Tape::inference();
        assert!(m.forward(&tape, tape.constant(input())).is_ok());
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let bytes = Checkpoint::from_model(&WmsrModel::new(tiny()).unwrap()).to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Malformed { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::BadMagic { .. })));
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::UnsupportedVersion { .. })));
    }
}
