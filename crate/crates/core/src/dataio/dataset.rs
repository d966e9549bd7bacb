use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{fingerprint_values, read_bytes, read_json, write_bytes, write_json};
use crate::error::{Error, Result};
use crate::latent::{AttributeHyperplane, LatentWorld, PairedSample};
use crate::model::ParamDims;
use crate::scalar::Real;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Parameters straight from the generator.
    Direct,
    /// Generator output re-estimated by landmark and pixel fitting.
    Fitted,
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "fitted" => Ok(Self::Fitted),
            _ => Err(Error::invalid(format!("unknown generation mode `{s}` (direct|fitted)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub name: String,
    pub s_max: f64,
    /// Fingerprint of the hyperplane used for this dataset, if any.
    pub hyperplane_fingerprint: Option<String>,
}

/// The hyperplane a dataset was generated with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneRecord {
    pub u_hat: Vec<f64>,
    pub b_hat: f64,
    pub train_accuracy: f64,
}

impl HyperplaneRecord {
    pub fn from_hyperplane<T: Real>(h: &AttributeHyperplane<T>) -> Self {
        Self {
            u_hat: h.u_hat.iter().map(|x| x.as_f64()).collect(),
            b_hat: h.b_hat.as_f64(),
            train_accuracy: h.train_accuracy.as_f64(),
        }
    }

    pub fn to_hyperplane<T: Real>(&self, attribute: &str) -> AttributeHyperplane<T> {
        AttributeHyperplane {
            attribute: attribute.to_string(),
            u_hat: self.u_hat.iter().map(|x| T::lit(*x)).collect(),
            b_hat: T::lit(self.b_hat),
            train_accuracy: T::lit(self.train_accuracy),
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_values(self.u_hat.iter().copied().chain([self.b_hat]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayFiles {
    pub id: String,
    pub w_proj: String,
    pub s_pos: String,
    pub s_neg: String,
    pub p_pos: String,
    pub p_neg: String,
}

impl Default for ArrayFiles {
    fn default() -> Self {
        Self {
            id: "id.u64".into(),
            w_proj: "w_proj.f32".into(),
            s_pos: "s_pos.f32".into(),
            s_neg: "s_neg.f32".into(),
            p_pos: "p_pos.f32".into(),
            p_neg: "p_neg.f32".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub latent_dim: usize,
    pub param_dims: ParamDims,
    /// The attribute every pair in the dataset varies.
    pub attribute: String,
    pub attributes: Vec<AttributeRecord>,
    pub hyperplane: HyperplaneRecord,
    pub count: usize,
    pub arrays: ArrayFiles,
    pub mode: GenerationMode,
}

impl DatasetManifest {
    /// Manifest for pairs of `attribute` drawn from `world` along `h`.
    pub fn describe<T: Real>(
        world: &LatentWorld<T>,
        h: &AttributeHyperplane<T>,
        param_dims: ParamDims,
        seed: u64,
        count: usize,
        mode: GenerationMode,
    ) -> Self {
        let hyperplane = HyperplaneRecord::from_hyperplane(h);
        let fp = hyperplane.fingerprint();
        Self {
            format_version: DATASET_FORMAT_VERSION,
            seed,
            latent_dim: world.d,
            param_dims,
            attribute: h.attribute.clone(),
            attributes: world
                .attributes
                .iter()
                .map(|a| AttributeRecord {
                    name: a.name.clone(),
                    s_max: a.s_max.as_f64(),
                    hyperplane_fingerprint: (a.name == h.attribute).then(|| fp.clone()),
                })
                .collect(),
            hyperplane,
            count,
            arrays: ArrayFiles::default(),
            mode,
        }
    }

    pub fn s_max(&self) -> Result<f64> {
        self.attributes
            .iter()
            .find(|a| a.name == self.attribute)
            .map(|a| a.s_max)
            .ok_or_else(|| Error::UnknownAttribute(self.attribute.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetContainer<T> {
    pub manifest: DatasetManifest,
    pub pairs: Vec<PairedSample<T>>,
}

fn f32_bytes<T: Real>(values: impl Iterator<Item = T>) -> Vec<u8> {
    values.flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect()
}

pub fn save_dataset<T: Real>(dir: &Path, data: &DatasetContainer<T>) -> Result<()> {
    let m = &data.manifest;
    if m.count != data.pairs.len() {
        return Err(Error::invalid(format!(
            "manifest count {} but {} pairs",
            m.count,
            data.pairs.len()
        )));
    }
    let k = m.param_dims.flat();
    for p in &data.pairs {
        if p.attribute != m.attribute {
            return Err(Error::invalid(format!("pair for `{}` in a `{}` dataset", p.attribute, m.attribute)));
        }
        if p.w_proj.len() != m.latent_dim || p.p_pos.len() != k || p.p_neg.len() != k {
            return Err(Error::invalid(format!("pair {} does not match the manifest dims", p.id)));
        }
    }
    let a = &m.arrays;
    let ps = &data.pairs;
    write_bytes(&dir.join(&a.id), &ps.iter().flat_map(|p| p.id.to_le_bytes()).collect::<Vec<u8>>())?;
    write_bytes(&dir.join(&a.w_proj), &f32_bytes(ps.iter().flat_map(|p| p.w_proj.iter().copied())))?;
    write_bytes(&dir.join(&a.s_pos), &f32_bytes(ps.iter().map(|p| p.s_pos)))?;
    write_bytes(&dir.join(&a.s_neg), &f32_bytes(ps.iter().map(|p| p.s_neg)))?;
    write_bytes(&dir.join(&a.p_pos), &f32_bytes(ps.iter().flat_map(|p| p.p_pos.iter().copied())))?;
    write_bytes(&dir.join(&a.p_neg), &f32_bytes(ps.iter().flat_map(|p| p.p_neg.iter().copied())))?;
    write_json(&dir.join(MANIFEST_FILE), m)
}

/// Reads a manifest, checking only its version.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let raw: serde_json::Value = read_json(&path)?;
    let found = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format {
            path: path.clone(),
            reason: "missing format_version".into(),
        })?;
    if found != u64::from(DATASET_FORMAT_VERSION) {
        return Err(Error::Version {
            path,
            found: found.min(u64::from(u32::MAX)) as u32,
            supported: DATASET_FORMAT_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::Json { path, source: e })
}

struct ArraySpec<'a> {
    field: &'static str,
    path: PathBuf,
    bytes: Vec<u8>,
    dim: usize,
    /// Field whose file must have the same shape, for telling a wrong
    /// manifest dimension from a damaged file.
    twin: Option<&'a [u8]>,
}

fn check_array(spec: &ArraySpec<'_>, count: usize, elem: usize) -> Result<()> {
    let expected = count * spec.dim * elem;
    let found = spec.bytes.len();
    if found == expected {
        return Ok(());
    }
    let row = count * elem;
    let consistent = row > 0 && found % row == 0 && spec.twin.map_or(true, |t| t.len() == found);
    if consistent && spec.dim > 1 {
        return Err(Error::Manifest {
            path: spec.path.clone(),
            field: format!("{} dimension", spec.field),
            manifest: spec.dim.to_string(),
            actual: (found / row).to_string(),
        });
    }
    if consistent && spec.twin.is_some() && found % (spec.dim * elem) == 0 {
        return Err(Error::Manifest {
            path: spec.path.clone(),
            field: "count".into(),
            manifest: count.to_string(),
            actual: (found / (spec.dim * elem)).to_string(),
        });
    }
    Err(Error::Truncated {
        path: spec.path.clone(),
        expected: expected as u64,
        found: found as u64,
    })
}

fn f32_values<T: Real>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(4)
        .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect()
}

pub fn load_dataset<T: Real>(dir: &Path) -> Result<DatasetContainer<T>> {
    let manifest = load_manifest(dir)?;
    let a = &manifest.arrays;
    let n = manifest.count;
    let k = manifest.param_dims.flat();
    let read = |name: &str| -> Result<(PathBuf, Vec<u8>)> {
        let p = dir.join(name);
        let b = read_bytes(&p)?;
        Ok((p, b))
    };
    let (id_path, id_bytes) = read(&a.id)?;
    let (w_path, w) = read(&a.w_proj)?;
    let (sp_path, sp) = read(&a.s_pos)?;
    let (sn_path, sn) = read(&a.s_neg)?;
    let (pp_path, pp) = read(&a.p_pos)?;
    let (pn_path, pn) = read(&a.p_neg)?;
    let specs = [
        (ArraySpec { field: "id", path: id_path, bytes: id_bytes.clone(), dim: 1, twin: None }, 8),
        (ArraySpec { field: "w_proj", path: w_path, bytes: w.clone(), dim: manifest.latent_dim, twin: None }, 4),
        (ArraySpec { field: "s_pos", path: sp_path, bytes: sp.clone(), dim: 1, twin: Some(&sn) }, 4),
        (ArraySpec { field: "s_neg", path: sn_path, bytes: sn.clone(), dim: 1, twin: Some(&sp) }, 4),
        (ArraySpec { field: "p_pos", path: pp_path, bytes: pp.clone(), dim: k, twin: Some(&pn) }, 4),
        (ArraySpec { field: "p_neg", path: pn_path, bytes: pn.clone(), dim: k, twin: Some(&pp) }, 4),
    ];
    for (spec, elem) in &specs {
        check_array(spec, n, *elem)?;
    }
    let ids: Vec<u64> = id_bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let w: Vec<T> = f32_values(&w);
    let sp: Vec<T> = f32_values(&sp);
    let sn: Vec<T> = f32_values(&sn);
    let pp: Vec<T> = f32_values(&pp);
    let pn: Vec<T> = f32_values(&pn);
    let d = manifest.latent_dim;
    let pairs = (0..n)
        .map(|i| PairedSample {
            id: ids[i],
            attribute: manifest.attribute.clone(),
            w_proj: w[i * d..(i + 1) * d].to_vec(),
            s_pos: sp[i],
            s_neg: sn[i],
            p_pos: pp[i * k..(i + 1) * k].to_vec(),
            p_neg: pn[i * k..(i + 1) * k].to_vec(),
        })
        .collect();
    Ok(DatasetContainer { manifest, pairs })
}

/// Unpaired reference draws: latents and parameters, no attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceContainer<T> {
    pub seed: u64,
    pub latents: Vec<Vec<T>>,
    pub params: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReferenceManifest {
    format_version: u32,
    seed: u64,
    latent_dim: usize,
    param_dim: usize,
    count: usize,
    label: String,
    latents: String,
    params: String,
}

pub fn save_reference<T: Real>(dir: &Path, r: &ReferenceContainer<T>) -> Result<()> {
    let d = r.latents.first().map_or(0, Vec::len);
    let k = r.params.first().map_or(0, Vec::len);
    if r.latents.len() != r.params.len() || r.latents.iter().any(|w| w.len() != d) || r.params.iter().any(|p| p.len() != k) {
        return Err(Error::invalid("ragged reference population"));
    }
    let m = ReferenceManifest {
        format_version: DATASET_FORMAT_VERSION,
        seed: r.seed,
        latent_dim: d,
        param_dim: k,
        count: r.params.len(),
        label: "synthetic reference".into(),
        latents: "w.f32".into(),
        params: "p.f32".into(),
    };
    write_bytes(&dir.join(&m.latents), &f32_bytes(r.latents.iter().flatten().copied()))?;
    write_bytes(&dir.join(&m.params), &f32_bytes(r.params.iter().flatten().copied()))?;
    write_json(&dir.join(MANIFEST_FILE), &m)
}

pub fn load_reference<T: Real>(dir: &Path) -> Result<ReferenceContainer<T>> {
    let path = dir.join(MANIFEST_FILE);
    let m: ReferenceManifest = read_json(&path)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version { path, found: m.format_version, supported: DATASET_FORMAT_VERSION });
    }
    let mut out = Vec::new();
    for (name, dim) in [(&m.latents, m.latent_dim), (&m.params, m.param_dim)] {
        let p = dir.join(name);
        let bytes = read_bytes(&p)?;
        check_array(&ArraySpec { field: "reference", path: p, bytes: bytes.clone(), dim, twin: None }, m.count, 4)?;
        let v: Vec<T> = f32_values(&bytes);
        out.push(if dim == 0 { vec![Vec::new(); m.count] } else { v.chunks(dim).map(<[T]>::to_vec).collect() });
    }
    let params = out.pop().expect("two arrays");
    let latents = out.pop().expect("two arrays");
    Ok(ReferenceContainer { seed: m.seed, latents, params })
}
