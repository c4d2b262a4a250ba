//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DTRCKPT\0" | u32 format version
//! str fingerprint | str phase ("recon" | "lm")
//! u32 count, then parameter records
//! u64 optimizer step | u32 count, then moment records ("m/<name>", "v/<name>")
//! str metrics CSV
//!
//! str    = u32 byte length + UTF-8 bytes
//! record = str name | str group | str dtype ("f32") | u32 ndim | u64 dims.. | raw data
//! ```

use std::fs;
use std::path::Path;

use crate::corpus::TaskKind;
use crate::numerics::Tensor;
use crate::params::{Param, ParamGroup, ParamStore};

use super::optim::AdamState;
use super::TrainError;

const MAGIC: &[u8; 8] = b"DTRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub phase: TaskKind,
    pub params: ParamStore<f32>,
    pub optimizer: AdamState,
    /// Metrics CSV of the run that produced the checkpoint.
    pub metrics: String,
}

fn phase_str(p: TaskKind) -> &'static str {
    match p {
        TaskKind::Recon => "recon",
        TaskKind::Lm => "lm",
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn record(&mut self, name: &str, group: ParamGroup, t: &Tensor<f32>) {
        self.str(name);
        self.str(group.as_str());
        self.str("f32");
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String, TrainError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Checkpoint("string is not UTF-8".into()))
    }
    fn record(&mut self) -> Result<(String, ParamGroup, Tensor<f32>), TrainError> {
        let name = self.str()?;
        let group = match self.str()?.as_str() {
            "encoder" => ParamGroup::Encoder,
            "decoder" => ParamGroup::Decoder,
            other => return Err(TrainError::Checkpoint(format!("{name}: unknown group {other}"))),
        };
        let dtype = self.str()?;
        if dtype != "f32" {
            return Err(TrainError::Checkpoint(format!("{name}: unsupported dtype {dtype}")));
        }
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| TrainError::Checkpoint(format!("{name}: {e}")))?;
        Ok((name, group, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(FORMAT_VERSION);
        w.str(&self.fingerprint);
        w.str(phase_str(self.phase));
        w.u32(self.params.len() as u32);
        for (_, p) in self.params.iter() {
            w.record(&p.name, p.group, &p.value);
        }
        w.u64(self.optimizer.step);
        w.u32((self.optimizer.m.len() * 2) as u32);
        for ((_, p), (m, v)) in self.params.iter().zip(self.optimizer.m.iter().zip(&self.optimizer.v)) {
            w.record(&format!("m/{}", p.name), p.group, m);
            w.record(&format!("v/{}", p.name), p.group, v);
        }
        w.str(&self.metrics);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TrainError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(TrainError::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let fingerprint = r.str()?;
        let phase = match r.str()?.as_str() {
            "recon" => TaskKind::Recon,
            "lm" => TaskKind::Lm,
            other => return Err(TrainError::Checkpoint(format!("unknown phase {other}"))),
        };
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let (name, group, t) = r.record()?;
            if params.find(&name).is_some() {
                return Err(TrainError::Checkpoint(format!("duplicate parameter {name}")));
            }
            params.add(name, group, t);
        }
        let step = r.u64()?;
        let count = r.u32()? as usize;
        if count != params.len() * 2 {
            return Err(TrainError::Checkpoint(format!("{count} moment records for {} parameters", params.len())));
        }
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (_, p) in params.iter() {
            for (prefix, out) in [("m/", &mut m), ("v/", &mut v)] {
                let (name, _, t) = r.record()?;
                if name != format!("{prefix}{}", p.name) || t.shape() != p.value.shape() {
                    return Err(TrainError::Checkpoint(format!("moment record {name} does not match {}", p.name)));
                }
                out.push(t);
            }
        }
        let metrics = r.str()?;
        if r.pos != buf.len() {
            return Err(TrainError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { fingerprint, phase, params, optimizer: AdamState { step, m, v }, metrics })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_bytes()).map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let buf = fs::read(path).map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })?;
        Checkpoint::from_bytes(&buf)
    }
}

/// Copies parameters from `src` into `dst` by name. Only `groups` are
/// copied; every destination parameter in those groups must be present in
/// `src` with the same shape. Returns how many were copied.
pub fn load_params(dst: &mut ParamStore<f32>, src: &ParamStore<f32>, groups: &[ParamGroup]) -> Result<usize, TrainError> {
    let ids: Vec<_> = dst.ids().collect();
    let mut copied = 0;
    for id in ids {
        let Param { name, group, value } = dst.get(id).clone();
        if !groups.contains(&group) {
            continue;
        }
        let sid = src.find(&name).ok_or_else(|| TrainError::Checkpoint(format!("checkpoint has no parameter {name}")))?;
        let s = src.value(sid);
        if s.shape() != value.shape() {
            return Err(TrainError::Checkpoint(format!("{name}: checkpoint shape {:?}, model {:?}", s.shape(), value.shape())));
        }
        *dst.value_mut(id) = s.clone();
        copied += 1;
    }
    Ok(copied)
}
