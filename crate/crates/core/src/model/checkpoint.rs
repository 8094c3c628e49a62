//! Binary checkpoints.
//!
//! Layout: magic `MULL`, version, the model config as fixed-width
//! little-endian integers, one flags byte, then every tensor as packed f32
//! little-endian values in the order [`ModelParams::tensors`] declares.
//! Training state (step counter and optimizer moments) lives in a sidecar
//! file with magic `MULS` so the parameter file stays self-contained.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;
use crate::model::optim::{Optimizer, OptimizerState};
use crate::model::params::{init_params, ModelParams};

const PARAMS_MAGIC: &[u8; 4] = b"MULL";
const STATE_MAGIC: &[u8; 4] = b"MULS";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Writer { buf }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn tensor(&mut self, values: &[f64]) {
        for &v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path, kind: &'static str, magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path, kind };
        let got = r.take(4)?;
        if got != magic {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::VersionMismatch {
                kind,
                version,
                path: path.to_path_buf(),
            });
        }
        Ok(r)
    }

    fn corrupt(&self, reason: &str) -> CoreError {
        CoreError::CorruptFile {
            kind: self.kind,
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor(&mut self, out: &mut [f64]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (i, v) in out.iter_mut().enumerate() {
            *v = f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt("trailing bytes"));
        }
        Ok(())
    }
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let cfg = &params.config;
    let mut w = Writer::new(PARAMS_MAGIC);
    w.u32(cfg.vocab_size as u32);
    w.u32(cfg.d_model as u32);
    w.u32(cfg.n_layers as u32);
    w.u32(cfg.n_heads as u32);
    w.u32(cfg.d_ff as u32);
    w.u32(cfg.max_seq_len as u32);
    w.u64(cfg.seed);
    w.u8(cfg.tied_output as u8);
    for (_, t) in params.tensors() {
        w.tensor(t);
    }
    fs::write(path, w.buf).map_err(|e| CoreError::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = Reader::new(&bytes, path, "checkpoint", PARAMS_MAGIC)?;
    let config = ModelConfig {
        vocab_size: r.u32()? as usize,
        d_model: r.u32()? as usize,
        n_layers: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        d_ff: r.u32()? as usize,
        max_seq_len: r.u32()? as usize,
        seed: r.u64()?,
        tied_output: r.u8()? != 0,
    };
    config.validate().map_err(|e| r.corrupt(&format!("invalid config: {e}")))?;
    // Shape a parameter set from the config, then overwrite every tensor.
    let mut params = init_params(&config, config.seed)?;
    for t in params.tensors_mut() {
        r.tensor(t)?;
    }
    r.finish()?;
    Ok(params)
}

/// Step counter plus optimizer moments, for resuming interrupted training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub optimizer: OptimizerState,
}

pub fn save_train_state(state: &TrainState, path: &Path) -> Result<()> {
    let mut w = Writer::new(STATE_MAGIC);
    w.u64(state.step);
    w.u64(state.optimizer.t);
    match state.optimizer.kind {
        Optimizer::Sgd => w.u8(0),
        Optimizer::Adam => {
            w.u8(1);
            for (_, t) in state.optimizer.m.as_ref().expect("adam moments").tensors() {
                w.tensor(t);
            }
            for (_, t) in state.optimizer.v.as_ref().expect("adam moments").tensors() {
                w.tensor(t);
            }
        }
    }
    fs::write(path, w.buf).map_err(|e| CoreError::io(path, e))
}

pub fn load_train_state(path: &Path, params: &ModelParams) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = Reader::new(&bytes, path, "train-state", STATE_MAGIC)?;
    let step = r.u64()?;
    let t = r.u64()?;
    let kind = r.u8()?;
    let optimizer = match kind {
        0 => OptimizerState { kind: Optimizer::Sgd, t, m: None, v: None },
        1 => {
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            for tensor in m.tensors_mut() {
                r.tensor(tensor)?;
            }
            for tensor in v.tensors_mut() {
                r.tensor(tensor)?;
            }
            OptimizerState { kind: Optimizer::Adam, t, m: Some(m), v: Some(v) }
        }
        other => return Err(r.corrupt(&format!("unknown optimizer kind {other}"))),
    };
    r.finish()?;
    Ok(TrainState { step, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 8,
            seed: 5,
            tied_output: false,
        }
    }

    #[test]
    fn save_load_save_is_bitwise_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let params = init_params(&cfg(), 5).unwrap();
        save_params(&params, &p1).unwrap();
        let loaded = load_params(&p1).unwrap();
        save_params(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(loaded.config, params.config);
    }

    #[test]
    fn tied_checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tied.ckpt");
        let params = init_params(&ModelConfig { tied_output: true, ..cfg() }, 1).unwrap();
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert!(loaded.out_proj.is_none());
        assert_eq!(loaded.tensors().len(), params.tensors().len());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let params = init_params(&cfg(), 2).unwrap();
        save_params(&params, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_params(&path), Err(CoreError::CorruptFile { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_params(&path), Err(CoreError::CorruptFile { .. })));
    }

    #[test]
    fn train_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.state");
        let params = init_params(&cfg(), 3).unwrap();
        let mut opt = OptimizerState::new(Optimizer::Adam, &params);
        opt.t = 17;
        if let Some(m) = &mut opt.m {
            m.tok_emb.data[0] = 0.5;
        }
        let state = TrainState { step: 42, optimizer: opt };
        save_train_state(&state, &path).unwrap();
        let loaded = load_train_state(&path, &params).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.optimizer.t, 17);
        assert_eq!(loaded.optimizer.m.unwrap().tok_emb.data[0], 0.5);
    }
}
