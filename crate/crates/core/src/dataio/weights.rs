use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_bytes};
use crate::baseline::GlobalDirection;
use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::latent::AttributeHyperplane;
use crate::linalg::Matrix;
use crate::scalar::Real;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"M3DM";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Controller = 1,
    Direction = 2,
    Hyperplane = 3,
}

impl PayloadKind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Self::Controller),
            2 => Some(Self::Direction),
            3 => Some(Self::Hyperplane),
            _ => None,
        }
    }
}

/// Anything the weight container can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload<T> {
    Controller(Controller<T>),
    Direction(GlobalDirection<T>),
    Hyperplane(AttributeHyperplane<T>),
}

impl<T> Payload<T> {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Controller(_) => PayloadKind::Controller,
            Payload::Direction(_) => PayloadKind::Direction,
            Payload::Hyperplane(_) => PayloadKind::Hyperplane,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Meta {
    attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    residual: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_size: Option<usize>,
}

struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn arr<T: Real>(shape: Vec<usize>, data: &[T]) -> Array {
    Array {
        shape,
        data: data.iter().map(|x| x.as_f64()).collect(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a payload into the container's byte layout.
pub fn encode_weights<T: Real>(payload: &Payload<T>) -> Vec<u8> {
    let (meta, arrays) = match payload {
        Payload::Controller(c) => {
            let mut a = Vec::new();
            for (w, b) in c.weights.iter().zip(&c.biases) {
                a.push(arr(vec![w.rows(), w.cols()], w.as_slice()));
                a.push(arr(vec![b.len()], b));
            }
            let meta = Meta {
                attribute: c.attribute.clone(),
                residual: Some(c.residual),
                ..Meta::default()
            };
            (meta, a)
        }
        Payload::Direction(d) => {
            let meta = Meta {
                attribute: d.attribute.clone(),
                train_seed: Some(d.train_seed),
                train_size: Some(d.train_size),
                ..Meta::default()
            };
            let a = vec![
                arr(vec![d.p_hat.len()], &d.p_hat),
                arr(vec![d.center.len()], &d.center),
                arr(vec![1], &[d.scale_alpha]),
            ];
            (meta, a)
        }
        Payload::Hyperplane(h) => {
            let meta = Meta {
                attribute: h.attribute.clone(),
                ..Meta::default()
            };
            let a = vec![arr(vec![h.u_hat.len()], &h.u_hat), arr(vec![2], &[h.b_hat, h.train_accuracy])];
            (meta, a)
        }
    };
    let meta = serde_json::to_vec(&meta).expect("meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_FORMAT_VERSION);
    put_u32(&mut out, payload.kind() as u32);
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    put_u32(&mut out, arrays.len() as u32);
    for a in &arrays {
        put_u32(&mut out, a.shape.len() as u32);
        for d in &a.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for a in &arrays {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            path: self.path.to_path_buf(),
            expected: (self.pos + n) as u64,
            found: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn format(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Parses container bytes; `path` only labels errors.
pub fn decode_weights<T: Real>(bytes: &[u8], path: &Path) -> Result<Payload<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(r.format("bad magic, not a weight container"));
    }
    let version = r.u32()?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported: WEIGHTS_FORMAT_VERSION,
        });
    }
    let kind_raw = r.u32()?;
    let kind = PayloadKind::from_u32(kind_raw).ok_or_else(|| r.format(format!("unknown payload kind {kind_raw}")))?;
    let meta_len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let n_arrays = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(n_arrays.min(1024));
    for _ in 0..n_arrays {
        let nd = r.u32()? as usize;
        let mut shape = Vec::with_capacity(nd.min(8));
        for _ in 0..nd {
            shape.push(usize::try_from(r.u64()?).map_err(|_| r.format("dimension overflows usize"))?);
        }
        shapes.push(shape);
    }
    let mut arrays: Vec<(Vec<usize>, Vec<T>)> = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| r.format("array size overflows"))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        arrays.push((shape, data));
    }
    if r.pos != bytes.len() {
        return Err(r.format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let vec1 = |a: &(Vec<usize>, Vec<T>)| -> Result<Vec<T>> {
        if a.0.len() != 1 {
            return Err(r.format("expected a vector"));
        }
        Ok(a.1.clone())
    };
    let payload = match kind {
        PayloadKind::Controller => {
            if arrays.is_empty() || arrays.len() % 2 != 0 {
                return Err(r.format("controller needs weight/bias array pairs"));
            }
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            let mut layer_dims = Vec::new();
            for pair in arrays.chunks(2) {
                let (shape, data) = &pair[0];
                if shape.len() != 2 {
                    return Err(r.format("controller weight is not a matrix"));
                }
                if layer_dims.is_empty() {
                    layer_dims.push(shape[1]);
                }
                layer_dims.push(shape[0]);
                weights.push(Matrix::from_row_major(shape[0], shape[1], data.clone())?);
                biases.push(vec1(&pair[1])?);
            }
            let c = Controller {
                attribute: meta.attribute,
                layer_dims,
                weights,
                biases,
                residual: meta.residual.ok_or_else(|| r.format("controller without residual flag"))?,
            };
            c.validate()?;
            Payload::Controller(c)
        }
        PayloadKind::Direction => {
            if arrays.len() != 3 {
                return Err(r.format("direction needs 3 arrays"));
            }
            let alpha = vec1(&arrays[2])?;
            if alpha.len() != 1 {
                return Err(r.format("scale is not a scalar"));
            }
            Payload::Direction(GlobalDirection {
                attribute: meta.attribute,
                p_hat: vec1(&arrays[0])?,
                center: vec1(&arrays[1])?,
                scale_alpha: alpha[0],
                train_seed: meta.train_seed.unwrap_or(0),
                train_size: meta.train_size.unwrap_or(0),
            })
        }
        PayloadKind::Hyperplane => {
            if arrays.len() != 2 {
                return Err(r.format("hyperplane needs 2 arrays"));
            }
            let extra = vec1(&arrays[1])?;
            if extra.len() != 2 {
                return Err(r.format("hyperplane offset block must hold 2 values"));
            }
            Payload::Hyperplane(AttributeHyperplane {
                attribute: meta.attribute,
                u_hat: vec1(&arrays[0])?,
                b_hat: extra[0],
                train_accuracy: extra[1],
            })
        }
    };
    Ok(payload)
}

pub fn save_weights<T: Real>(path: &Path, payload: &Payload<T>) -> Result<()> {
    write_bytes(path, &encode_weights(payload))
}

pub fn load_weights<T: Real>(path: &Path) -> Result<Payload<T>> {
    decode_weights(&read_bytes(path)?, path)
}
