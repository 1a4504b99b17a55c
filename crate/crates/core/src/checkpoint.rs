//! Versioned little-endian checkpoint files.
//!
//! ```text
//! magic        8 bytes  "HPOOLCK\0"
//! version      u32      1
//! dtype        u8       0 = f32, 1 = f64
//! config       u32 length + UTF-8 `key = value` text
//! metrics      u32 length + UTF-8 CSV (may be empty)
//! count        u32      number of tensors
//! per tensor:
//!   name       u32 length + UTF-8
//!   kind       u8       0 weight, 1 bias, 2 norm, 3 stride, 4 buffer
//!   rank       u32
//!   dims       rank x u64
//!   data       product(dims) values of `dtype`
//! ```
//!
//! Parameters come first in model order, followed by the batch-norm running
//! buffers `<layer>.running_mean` and `<layer>.running_var`.

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamKind;
use crate::resnet::Model;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"HPOOLCK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param(ParamKind),
    Buffer,
}

impl TensorKind {
    fn code(self) -> u8 {
        match self {
            TensorKind::Param(ParamKind::Weight) => 0,
            TensorKind::Param(ParamKind::Bias) => 1,
            TensorKind::Param(ParamKind::NormAffine) => 2,
            TensorKind::Param(ParamKind::Stride) => 3,
            TensorKind::Buffer => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => TensorKind::Param(ParamKind::Weight),
            1 => TensorKind::Param(ParamKind::Bias),
            2 => TensorKind::Param(ParamKind::NormAffine),
            3 => TensorKind::Param(ParamKind::Stride),
            4 => TensorKind::Buffer,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: String,
    pub metrics: String,
    pub tensors: Vec<NamedTensor<T>>,
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.into(),
                msg: format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(format!("{what} is not UTF-8")))
    }

    fn err(&self, msg: String) -> Error {
        Error::Format {
            path: self.path.into(),
            msg,
        }
    }
}

/// Reads only the header to find the element type of a checkpoint.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    read_header(&mut c)
}

fn read_header(c: &mut Cursor<'_>) -> Result<DType> {
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(c.err("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.err(format!("unsupported version {version}, expected {VERSION}")));
    }
    match c.u8("dtype")? {
        0 => Ok(DType::F32),
        1 => Ok(DType::F64),
        other => Err(c.err(format!("unknown dtype code {other}"))),
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype_code(T::DTYPE));
        put_str(&mut out, &self.config);
        put_str(&mut out, &self.metrics);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(t.kind.code());
            out.extend_from_slice(&(t.tensor.ndim() as u32).to_le_bytes());
            for &d in t.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.tensor.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0, path };
        let dtype = read_header(&mut c)?;
        if dtype != T::DTYPE {
            return Err(c.err(format!("checkpoint holds {dtype} values, expected {}", T::DTYPE)));
        }
        let config = c.string("config")?;
        let metrics = c.string("metrics")?;
        let count = c.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = c.string("tensor name")?;
            let code = c.u8("tensor kind")?;
            let kind = TensorKind::from_code(code).ok_or_else(|| c.err(format!("{name}: unknown kind code {code}")))?;
            let rank = c.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| c.u64("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let width = T::DTYPE.byte_width();
            let bytes_needed = len
                .and_then(|l| l.checked_mul(width))
                .ok_or_else(|| c.err(format!("{name}: shape {shape:?} overflows")))?;
            let raw = c.take(bytes_needed, &name)?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            tensors.push(NamedTensor {
                name,
                kind,
                tensor: Tensor::new(shape, data)?,
            });
        }
        if c.pos != bytes.len() {
            return Err(c.err(format!("{} trailing bytes after last tensor", bytes.len() - c.pos)));
        }
        Ok(Checkpoint {
            config,
            metrics,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_text(&self.config)
    }

    /// Captures parameters and running buffers of `model`.
    pub fn from_model(model: &Model<T>, config: &TrainConfig, metrics: String) -> Self {
        let mut tensors: Vec<NamedTensor<T>> = model
            .params()
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                kind: TensorKind::Param(p.kind),
                tensor: p.value().clone(),
            })
            .collect();
        for bn in model.batch_norms() {
            for (suffix, t) in [("running_mean", &bn.running.mean), ("running_var", &bn.running.var)] {
                tensors.push(NamedTensor {
                    name: format!("{}.{suffix}", bn.name),
                    kind: TensorKind::Buffer,
                    tensor: t.clone(),
                });
            }
        }
        Checkpoint {
            config: config.to_text(),
            metrics,
            tensors,
        }
    }

    /// Rebuilds the model from the stored configuration and restores every
    /// tensor. Names, kinds and shapes must match exactly.
    pub fn to_model(&self) -> Result<(Model<T>, TrainConfig)> {
        let config = self.train_config()?;
        let mut model = Model::<T>::build(&config.model_config())?;
        let mut expected = Checkpoint::from_model(&model, &config, String::new()).tensors;
        if expected.len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (want, got) in expected.iter_mut().zip(&self.tensors) {
            if want.name != got.name || want.kind != got.kind || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {} {:?} {:?} does not match model tensor {} {:?} {:?}",
                    got.name,
                    got.kind,
                    got.tensor.shape(),
                    want.name,
                    want.kind,
                    want.tensor.shape()
                )));
            }
        }
        let mut it = self.tensors.iter();
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let t = it.next().expect("length checked");
            model.params_mut().set_value(id, t.tensor.clone())?;
        }
        for bn in model.batch_norms_mut() {
            bn.running.mean = it.next().expect("length checked").tensor.clone();
            bn.running.var = it.next().expect("length checked").tensor.clone();
        }
        Ok((model, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::Variant;

    #[test]
    fn bytes_round_trip_and_truncation() {
        let config = TrainConfig::desk(Variant::HybridDiffStride, 3);
        let model = Model::<f32>::build(&config.model_config()).unwrap();
        let ck = Checkpoint::from_model(&model, &config, "# x\r\n".into());
        let bytes = ck.to_bytes();
        let path = Path::new("mem");
        assert_eq!(Checkpoint::<f32>::from_bytes(&bytes, path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1], path),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Checkpoint::<f64>::from_bytes(&bytes, path),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bad, path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn model_round_trip() {
        let config = TrainConfig::desk(Variant::HybridSpectral, 4);
        let mut model = Model::<f64>::build(&config.model_config()).unwrap();
        model.batch_norms_mut()[0].running.mean.data_mut()[0] = 0.25;
        let ck = Checkpoint::from_model(&model, &config, String::new());
        let (back, cfg) = ck.to_model().unwrap();
        assert_eq!(cfg.to_text(), config.to_text());
        assert_eq!(Checkpoint::from_model(&back, &cfg, String::new()), ck);
    }
}
