//! Binary checkpoint container shared by every trained artifact.
//!
//! Layout (little-endian): magic `CKPT`, version `u32`, entry count `u32`,
//! then per entry the name (`u16` byte length + UTF-8), rank `u8`, one `u32`
//! per dimension and the `f32` payload. Configuration values are stored as
//! one-element entries next to the weights.

use std::path::Path;

use crate::correct::{ProjectionKind, ProjectionParams};
use crate::diffusion::{DenoiserConfig, DenoiserParams};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f32) {
        self.push(name, Tensor::from_vec(&[1], vec![v]));
    }

    pub fn push_params<P: ParamSet<f32>>(&mut self, params: &P) {
        for (n, t) in params.named() {
            self.push(n, t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name:?}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f32> {
        let t = self.get(name)?;
        if t.len() != 1 {
            return Err(Error::Format(format!("entry {name:?} is not a scalar")));
        }
        Ok(t.data()[0])
    }

    pub fn usize(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Format(format!("entry {name:?} = {v} is not a count")));
        }
        Ok(v as usize)
    }

    /// Overwrites every tensor of `params` from same-named entries.
    pub fn fill_params<P: ParamSet<f32>>(&self, params: &mut P) -> Result<()> {
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(params.tensors_mut()) {
            let src = self.get(name)?;
            if src.dims() != dst.dims() {
                return Err(Error::Format(format!(
                    "entry {name:?} has dims {:?}, expected {:?}",
                    src.dims(),
                    dst.dims()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("entry too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("entry {name:?}: {e}")))?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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

pub fn encoder_checkpoint(p: &EncoderParams) -> Checkpoint {
    let c = &p.config;
    let mut ck = Checkpoint::default();
    for (k, v) in [
        ("enc.config.vocab", c.vocab),
        ("enc.config.d", c.d),
        ("enc.config.heads", c.heads),
        ("enc.config.layers", c.layers),
        ("enc.config.max_len", c.max_len),
        ("enc.config.mlp_ratio", c.mlp_ratio),
        ("enc.config.causal", c.causal as usize),
    ] {
        ck.push_scalar(k, v as f32);
    }
    ck.push_params(p);
    ck
}

pub fn encoder_from_checkpoint(ck: &Checkpoint) -> Result<EncoderParams> {
    let config = EncoderConfig {
        vocab: ck.usize("enc.config.vocab")?,
        d: ck.usize("enc.config.d")?,
        heads: ck.usize("enc.config.heads")?,
        layers: ck.usize("enc.config.layers")?,
        max_len: ck.usize("enc.config.max_len")?,
        mlp_ratio: ck.usize("enc.config.mlp_ratio")?,
        causal: ck.usize("enc.config.causal")? != 0,
    };
    let mut p = EncoderParams::init(&config, 0)?;
    ck.fill_params(&mut p)?;
    Ok(p)
}

pub fn denoiser_checkpoint(p: &DenoiserParams) -> Checkpoint {
    let c = &p.config;
    let mut ck = Checkpoint::default();
    for (k, v) in [
        ("den.config.patch", c.patch),
        ("den.config.width", c.width),
        ("den.config.blocks", c.blocks),
        ("den.config.self_heads", c.self_heads),
        ("den.config.cross_heads", c.cross_heads),
        ("den.config.mlp_ratio", c.mlp_ratio),
        ("den.config.text_dim", c.text_dim),
    ] {
        ck.push_scalar(k, v as f32);
    }
    ck.push_params(p);
    ck
}

pub fn denoiser_from_checkpoint(ck: &Checkpoint) -> Result<DenoiserParams> {
    let config = DenoiserConfig {
        patch: ck.usize("den.config.patch")?,
        width: ck.usize("den.config.width")?,
        blocks: ck.usize("den.config.blocks")?,
        self_heads: ck.usize("den.config.self_heads")?,
        cross_heads: ck.usize("den.config.cross_heads")?,
        mlp_ratio: ck.usize("den.config.mlp_ratio")?,
        text_dim: ck.usize("den.config.text_dim")?,
    };
    let mut p = DenoiserParams::init(&config, 0)?;
    ck.fill_params(&mut p)?;
    Ok(p)
}

pub fn projection_checkpoint(p: &ProjectionParams) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.push_scalar("proj.kind", p.kind.code() as f32);
    ck.push_scalar("proj.s", p.s as f32);
    ck.push_params(p);
    ck
}

pub fn projection_from_checkpoint(ck: &Checkpoint) -> Result<ProjectionParams> {
    let kind = ProjectionKind::from_code(ck.usize("proj.kind")? as u8)?;
    let s = ck.usize("proj.s")?;
    let w = ck.get("proj.W")?.clone();
    let d = w.cols();
    let mut p = ProjectionParams::zeros(kind, s, d)?;
    ck.fill_params(&mut p)?;
    Ok(p)
}
