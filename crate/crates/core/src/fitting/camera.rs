//! Pinhole camera with an Euler-angle extrinsic pose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Mat3<T> = [[T; 3]; 3];

/// Depth below which a vertex counts as behind the camera.
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CameraModel<T> {
    pub focal_length: T,
    pub image_width: usize,
    pub image_height: usize,
}

impl<T: Real> Default for CameraModel<T> {
    fn default() -> Self {
        Self {
            focal_length: T::lit(1000.0),
            image_width: 256,
            image_height: 256,
        }
    }
}

impl<T: Real> CameraModel<T> {
    pub fn new(focal_length: T, image_width: usize, image_height: usize) -> Result<Self> {
        if !(focal_length > T::zero()) || image_width < 8 || image_height < 8 {
            return Err(Error::invalid(
                "camera needs a positive focal length and an image of at least 8x8",
            ));
        }
        Ok(Self {
            focal_length,
            image_width,
            image_height,
        })
    }

    pub fn principal_point(&self) -> (T, T) {
        (
            T::of_usize(self.image_width) / T::lit(2.0),
            T::of_usize(self.image_height) / T::lit(2.0),
        )
    }
}

fn rx<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, c, -s], [z, s, c]]
}

fn ry<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, z, s], [z, o, z], [-s, z, c]]
}

fn rz<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

fn drx<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let z = T::zero();
    [[z, z, z], [z, -s, -c], [z, c, -s]]
}

fn dry<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let z = T::zero();
    [[-s, z, c], [z, z, z], [-c, z, -s]]
}

fn drz<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let z = T::zero();
    [[-s, -c, z], [c, -s, z], [z, z, z]]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = *m;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

/// Intrinsic X-then-Y-then-Z composition `R = Rx(x_R)·Ry(y_R)·Rz(z_R)`.
pub fn rotation<T: Real>(angles: [T; 3]) -> Mat3<T> {
    mat_mul(&mat_mul(&rx(angles[0]), &ry(angles[1])), &rz(angles[2]))
}

/// Partial derivatives of [`rotation`] with respect to each angle.
pub fn rotation_partials<T: Real>(angles: [T; 3]) -> [Mat3<T>; 3] {
    let (x, y, z) = (angles[0], angles[1], angles[2]);
    [
        mat_mul(&mat_mul(&drx(x), &ry(y)), &rz(z)),
        mat_mul(&mat_mul(&rx(x), &dry(y)), &rz(z)),
        mat_mul(&mat_mul(&rx(x), &ry(y)), &drz(z)),
    ]
}

/// Euler angles with `rotation(euler_from_matrix(R)) = R`, valid away from
/// the `y_R = ±π/2` singularity.
pub fn euler_from_matrix<T: Real>(r: &Mat3<T>) -> [T; 3] {
    let y = r[0][2].max(-T::one()).min(T::one()).asin();
    let z = (-r[0][1]).atan2(r[0][0]);
    let x = (-r[1][2]).atan2(r[2][2]);
    [x, y, z]
}

/// Projected pixel coordinates and camera-space depth per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub pixels: Vec<[T; 2]>,
    pub depth: Vec<T>,
}

/// Camera-space position `R·x + t`.
#[inline]
pub fn to_camera<T: Real>(r: &Mat3<T>, p_cam: &[T; 6], x: [T; 3]) -> [T; 3] {
    let c = mat_vec(r, x);
    [c[0] + p_cam[3], c[1] + p_cam[4], c[2] + p_cam[5]]
}

/// Rotates, translates and perspective-divides every vertex of a flat
/// `3n` shape.
pub fn project<T: Real>(shape: &[T], p_cam: &[T; 6], camera: &CameraModel<T>) -> Result<Projection<T>> {
    if shape.len() % 3 != 0 {
        return Err(Error::invalid("shape length is not a multiple of 3"));
    }
    let r = rotation([p_cam[0], p_cam[1], p_cam[2]]);
    let (cx, cy) = camera.principal_point();
    let f = camera.focal_length;
    let near = T::lit(NEAR_PLANE);
    let n = shape.len() / 3;
    let mut pixels = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    for i in 0..n {
        let xc = to_camera(&r, p_cam, [shape[3 * i], shape[3 * i + 1], shape[3 * i + 2]]);
        if !(xc[2] > near) {
            return Err(Error::BehindCamera {
                index: i,
                depth: xc[2].as_f64(),
            });
        }
        pixels.push([f * xc[0] / xc[2] + cx, f * xc[1] / xc[2] + cy]);
        depth.push(xc[2]);
    }
    Ok(Projection { pixels, depth })
}
