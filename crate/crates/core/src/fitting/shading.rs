//! Per-vertex Phong-style shading: ambient plus Lambertian diffuse from a
//! unit-white point light. No specular term.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum vertex-to-light distance.
pub const LIGHT_EPS: f64 = 1e-9;

/// Unit vector from `x` toward the light and the distance to it.
#[inline]
pub(crate) fn light_dir<T: Real>(light: [T; 3], x: [T; 3]) -> ([T; 3], T) {
    let d = [light[0] - x[0], light[1] - x[1], light[2] - x[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    ([d[0] / len, d[1] / len, d[2] / len], len)
}

/// Unclamped shaded color of one channel, `texture · (ambient + diffuse)`.
#[inline]
pub(crate) fn shade_channel<T: Real>(texture: T, ambient: T, diffuse: T) -> T {
    texture * (ambient + diffuse)
}

#[inline]
pub(crate) fn clamp01<T: Real>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

/// `color_v = clamp(texture_v ⊙ (ambient + max(0, n_v·l_v)))` with `l_v` the
/// unit vector from vertex to light.
pub fn phong_shade<T: Real>(shape: &[T], normals: &[T], texture: &[T], p_light: &[T; 6]) -> Result<Vec<T>> {
    if shape.len() != normals.len() || shape.len() != texture.len() || shape.len() % 3 != 0 {
        return Err(Error::invalid("shape, normals and texture must all have length 3n"));
    }
    let light = [p_light[0], p_light[1], p_light[2]];
    let ambient = [p_light[3], p_light[4], p_light[5]];
    let mut out = vec![T::zero(); shape.len()];
    for v in 0..shape.len() / 3 {
        let x = [shape[3 * v], shape[3 * v + 1], shape[3 * v + 2]];
        let (l, dist) = light_dir(light, x);
        if !(dist >= T::lit(LIGHT_EPS)) {
            return Err(Error::LightAtVertex(v));
        }
        let n = &normals[3 * v..3 * v + 3];
        let diffuse = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(T::zero());
        for c in 0..3 {
            out[3 * v + c] = clamp01(shade_channel(texture[3 * v + c], ambient[c], diffuse));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn back_lit_is_pure_ambient() {
        let shape = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let normals = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let texture = [0.5, 0.4, 0.3, 0.2, 0.6, 0.8];
        let light = [0.0, 0.0, -5.0, 0.5, 0.25, 1.0];
        let c = phong_shade(&shape, &normals, &texture, &light).unwrap();
        assert_eq!(c, vec![0.25, 0.1, 0.3, 0.1, 0.15, 0.8]);
        let full = [0.0, 0.0, -5.0, 1.0, 1.0, 1.0];
        assert_eq!(phong_shade(&shape, &normals, &texture, &full).unwrap(), texture.to_vec());
    }

    #[test]
    fn head_on_white_light() {
        let c = phong_shade(&[0.0; 3], &[0.0, 0.0, 1.0], &[1.0; 3], &[0.0, 0.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c, vec![1.0; 3]);
    }

    #[test]
    fn clamps_to_unit_range() {
        let c = phong_shade(&[0.0; 3], &[0.0, 0.0, 1.0], &[0.9; 3], &[0.0, 0.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(c, vec![1.0; 3]);
    }

    #[test]
    fn light_on_vertex_is_an_error() {
        let err = phong_shade(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], &[0.5; 3], &[1.0, 2.0, 3.0, 0.1, 0.1, 0.1]);
        assert!(matches!(err, Err(Error::LightAtVertex(0))));
    }
}
