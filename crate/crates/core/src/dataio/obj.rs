use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::write_bytes;
use crate::controller::Controller;
use crate::error::{check_dim, Error, Result};
use crate::model::{FaceParams, MorphableBasis};
use crate::scalar::{all_finite, Real};

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let p = digits as i32;
    if exp < -5 || exp >= p {
        let s = format!("{:.*e}", digits - 1, x);
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = trim_zeros(mant);
        let e: i32 = e.parse().expect("integer exponent");
        return format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (p - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.999995 → 10.00000).
    trim_zeros(&s).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// OBJ text with per-vertex colors (`v x y z r g b`) and 1-based faces.
/// Colors are clamped to `[0, 1]`.
pub fn obj_string<T: Real>(shape: &[T], texture: &[T], triangles: &[[usize; 3]]) -> Result<String> {
    if shape.len() % 3 != 0 {
        return Err(Error::invalid("shape length is not a multiple of 3"));
    }
    check_dim("texture", shape.len(), texture.len())?;
    if !all_finite(shape) || !all_finite(texture) {
        return Err(Error::NonFinite("mesh coordinates".into()));
    }
    let n = shape.len() / 3;
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
        return Err(Error::invalid(format!("triangle {t:?} indexes past {n} vertices")));
    }
    let mut out = String::with_capacity(64 * n + 24 * triangles.len());
    for (v, c) in shape.chunks_exact(3).zip(texture.chunks_exact(3)) {
        out.push('v');
        for x in v {
            out.push(' ');
            out.push_str(&format_sig(x.as_f64(), 6));
        }
        for x in c {
            out.push(' ');
            out.push_str(&format_sig(x.as_f64().clamp(0.0, 1.0), 6));
        }
        out.push('\n');
    }
    for t in triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    Ok(out)
}

pub fn export_obj<T: Real>(shape: &[T], texture: &[T], triangles: &[[usize; 3]], path: &Path) -> Result<()> {
    write_bytes(path, obj_string(shape, texture, triangles)?.as_bytes())
}

/// Writes the mesh of a flat statistical parameter vector.
pub fn export_params_obj<T: Real>(basis: &MorphableBasis<T>, flat: &[T], path: &Path) -> Result<()> {
    let p = FaceParams::from_flat(flat, basis.dims())?;
    let (shape, tex) = basis.eval_params(&p)?;
    export_obj(&shape, &tex, &basis.triangles, path)
}

/// `−2.0, −1.5, …, 2.0`
pub fn default_sweep_scores() -> Vec<f64> {
    (0..9).map(|i| -2.0 + 0.5 * i as f64).collect()
}

pub fn sweep_file_name(attribute: &str, score: f64) -> String {
    format!("sweep_{attribute}_{score:?}.obj")
}

/// One OBJ per score of `controller.forward(p_src, s)`.
pub fn export_score_sweep<T: Real>(
    controller: &Controller<T>,
    p_src: &[T],
    scores: &[f64],
    basis: &MorphableBasis<T>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let names: Vec<String> = scores.iter().map(|s| sweep_file_name(&controller.attribute, *s)).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::invalid(format!("duplicate sweep score {}", scores[i])));
        }
    }
    let mut paths = Vec::with_capacity(scores.len());
    for (s, name) in scores.iter().zip(names) {
        let p = controller.forward(p_src, T::lit(*s))?;
        let path = dir.join(name);
        export_params_obj(basis, &p, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
