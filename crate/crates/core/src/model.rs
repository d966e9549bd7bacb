//! Linear morphable face model: geometry, per-vertex color, and a seeded
//! synthetic basis with an icosphere topology.

use std::collections::HashMap;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{orthonormalize_columns, Matrix};
use crate::scalar::Real;

/// Number of landmark vertices.
pub const N_LANDMARKS: usize = 68;

/// Decay ratio of the synthetic per-mode standard deviations.
pub const SIGMA_DECAY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MorphableBasis<T> {
    pub n_vertices: usize,
    pub mean_shape_id: Vec<T>,
    pub mean_shape_expr: Vec<T>,
    pub mean_texture: Vec<T>,
    pub e_id: Matrix<T>,
    pub e_expr: Matrix<T>,
    pub e_tex: Matrix<T>,
    pub sigma_id: Vec<T>,
    pub sigma_expr: Vec<T>,
    pub sigma_tex: Vec<T>,
    pub triangles: Vec<[usize; 3]>,
    pub landmark_indices: Vec<usize>,
}

/// Parameter dimensions of a basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDims {
    pub k_id: usize,
    pub k_expr: usize,
    pub k_tex: usize,
}

impl ParamDims {
    pub fn new(k_id: usize, k_expr: usize, k_tex: usize) -> Self {
        Self { k_id, k_expr, k_tex }
    }

    /// Dimension of the flat statistical vector `[p_id | p_expr | p_tex]`.
    pub fn flat(&self) -> usize {
        self.k_id + self.k_expr + self.k_tex
    }
}

/// Full parameter set of one face.
///
/// `p_cam` is `[x_R, y_R, z_R, x_T, y_T, z_T]` (radians, model units) and
/// `p_light` is `[x_l, y_l, z_l, r_a, g_a, b_a]` (light position in model
/// space, ambient color).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FaceParams<T> {
    pub p_id: Vec<T>,
    pub p_expr: Vec<T>,
    pub p_tex: Vec<T>,
    pub p_cam: [T; 6],
    pub p_light: [T; 6],
}

impl<T: Real> FaceParams<T> {
    /// Zero statistical parameters with the default camera and light.
    pub fn zeros(dims: ParamDims) -> Self {
        Self {
            p_id: vec![T::zero(); dims.k_id],
            p_expr: vec![T::zero(); dims.k_expr],
            p_tex: vec![T::zero(); dims.k_tex],
            p_cam: default_camera_pose(),
            p_light: default_light(),
        }
    }

    pub fn dims(&self) -> ParamDims {
        ParamDims::new(self.p_id.len(), self.p_expr.len(), self.p_tex.len())
    }

    /// `[p_id | p_expr | p_tex]`
    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dims().flat());
        v.extend_from_slice(&self.p_id);
        v.extend_from_slice(&self.p_expr);
        v.extend_from_slice(&self.p_tex);
        v
    }

    /// Splits a flat statistical vector; camera and light take default values.
    pub fn from_flat(flat: &[T], dims: ParamDims) -> Result<Self> {
        check_dim("flat parameters", dims.flat(), flat.len())?;
        let (id, rest) = flat.split_at(dims.k_id);
        let (expr, tex) = rest.split_at(dims.k_expr);
        Ok(Self {
            p_id: id.to_vec(),
            p_expr: expr.to_vec(),
            p_tex: tex.to_vec(),
            p_cam: default_camera_pose(),
            p_light: default_light(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.p_id
            .iter()
            .chain(&self.p_expr)
            .chain(&self.p_tex)
            .chain(&self.p_cam)
            .chain(&self.p_light)
            .all(|x| x.is_finite())
    }
}

/// Face looking at a camera 10 model units away.
pub fn default_camera_pose<T: Real>() -> [T; 6] {
    [0.0, 0.0, 0.0, 0.0, 0.0, 10.0].map(T::lit)
}

/// Light in front of and above the face, gray ambient.
pub fn default_light<T: Real>() -> [T; 6] {
    [0.5, -1.0, -4.0, 0.3, 0.3, 0.3].map(T::lit)
}

impl<T: Real> MorphableBasis<T> {
    pub fn dims(&self) -> ParamDims {
        ParamDims::new(self.e_id.cols(), self.e_expr.cols(), self.e_tex.cols())
    }

    /// Checks the structural invariants of the basis.
    pub fn validate(&self) -> Result<()> {
        let m = 3 * self.n_vertices;
        check_dim("mean_shape_id", m, self.mean_shape_id.len())?;
        check_dim("mean_shape_expr", m, self.mean_shape_expr.len())?;
        check_dim("mean_texture", m, self.mean_texture.len())?;
        check_dim("e_id rows", m, self.e_id.rows())?;
        check_dim("e_expr rows", m, self.e_expr.rows())?;
        check_dim("e_tex rows", m, self.e_tex.rows())?;
        check_dim("sigma_id", self.e_id.cols(), self.sigma_id.len())?;
        check_dim("sigma_expr", self.e_expr.cols(), self.sigma_expr.len())?;
        check_dim("sigma_tex", self.e_tex.cols(), self.sigma_tex.len())?;
        check_dim("landmark_indices", N_LANDMARKS, self.landmark_indices.len())?;
        let sigmas = self.sigma_id.iter().chain(&self.sigma_expr).chain(&self.sigma_tex);
        if sigmas.clone().any(|s| !(*s > T::zero())) {
            return Err(Error::invalid("sigma values must be strictly positive"));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= self.n_vertices)) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {} vertices", self.n_vertices)));
        }
        if let Some(&i) = self.landmark_indices.iter().find(|&&i| i >= self.n_vertices) {
            return Err(Error::invalid(format!("landmark index {i} out of range")));
        }
        Ok(())
    }

    /// Per-mode standard deviations in flat `[id | expr | tex]` order.
    pub fn sigma_flat(&self) -> Vec<T> {
        let mut v = self.sigma_id.clone();
        v.extend_from_slice(&self.sigma_expr);
        v.extend_from_slice(&self.sigma_tex);
        v
    }

    /// `(S̄_id + S̄_expr) + E_id p_id + E_expr p_expr`
    pub fn eval_shape(&self, p_id: &[T], p_expr: &[T]) -> Result<Vec<T>> {
        check_dim("p_id", self.e_id.cols(), p_id.len())?;
        check_dim("p_expr", self.e_expr.cols(), p_expr.len())?;
        let mut s: Vec<T> = self
            .mean_shape_id
            .iter()
            .zip(&self.mean_shape_expr)
            .map(|(a, b)| *a + *b)
            .collect();
        self.e_id.matvec_add(p_id, &mut s);
        self.e_expr.matvec_add(p_expr, &mut s);
        Ok(s)
    }

    /// `T̄ + E_tex p_tex`, unclamped.
    pub fn eval_texture(&self, p_tex: &[T]) -> Result<Vec<T>> {
        check_dim("p_tex", self.e_tex.cols(), p_tex.len())?;
        let mut t = self.mean_texture.clone();
        self.e_tex.matvec_add(p_tex, &mut t);
        Ok(t)
    }

    pub fn eval_params(&self, p: &FaceParams<T>) -> Result<(Vec<T>, Vec<T>)> {
        Ok((self.eval_shape(&p.p_id, &p.p_expr)?, self.eval_texture(&p.p_tex)?))
    }
}

/// Vertex count of an icosphere after `subdivisions` rounds.
pub fn icosphere_vertex_count(subdivisions: u32) -> usize {
    10 * 4usize.pow(subdivisions) + 2
}

/// Unit icosphere; triangles are wound counter-clockwise seen from outside.
pub fn icosphere<T: Real>(subdivisions: u32) -> (Vec<[T; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    for v in verts.iter_mut() {
        *v = normalize3(*v);
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (va, vb) = (verts[a], verts[b]);
                verts.push(normalize3([
                    (va[0] + vb[0]) / 2.0,
                    (va[1] + vb[1]) / 2.0,
                    (va[2] + vb[2]) / 2.0,
                ]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| v.map(T::lit)).collect();
    (verts, faces)
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Seeded synthetic morphable basis.
///
/// `n_vertices` must be an icosphere vertex count of at least 162
/// (642 for three subdivisions). Eigenvector columns are orthonormal
/// directions scaled by `σ_j = 0.9^j`.
pub fn synth_basis<T: Real>(
    seed: u64,
    n_vertices: usize,
    k_id: usize,
    k_expr: usize,
    k_tex: usize,
) -> Result<MorphableBasis<T>> {
    let subdivisions = (2..=7)
        .find(|&s| icosphere_vertex_count(s) == n_vertices)
        .ok_or_else(|| {
            let valid: Vec<_> = (2..=7).map(icosphere_vertex_count).collect();
            Error::invalid(format!(
                "n_vertices {n_vertices} is not a supported icosphere size {valid:?}"
            ))
        })?;
    if k_id == 0 || k_expr == 0 || k_tex == 0 {
        return Err(Error::invalid("every basis needs at least one mode"));
    }
    let m = 3 * n_vertices;
    if k_id + k_expr > m || k_tex > m {
        return Err(Error::invalid("more modes than coordinates"));
    }

    let (sphere, triangles) = icosphere::<f64>(subdivisions);
    let mut mean_shape_id = Vec::with_capacity(m);
    let mut mean_texture = Vec::with_capacity(m);
    for p in &sphere {
        for c in head_like(*p) {
            mean_shape_id.push(T::lit(c));
        }
        // Smooth skin-toned albedo.
        mean_texture.push(T::lit(0.55 + 0.08 * p[1]));
        mean_texture.push(T::lit(0.42 + 0.05 * p[0]));
        mean_texture.push(T::lit(0.35 - 0.04 * p[2]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Identity and expression share one orthonormal frame so that the
    // combined geometry basis is also orthogonal.
    let geo = random_orthonormal::<T>(&mut rng, m, k_id + k_expr)?;
    let tex = random_orthonormal::<T>(&mut rng, m, k_tex)?;
    let sigma = |k: usize| -> Vec<T> { (0..k).map(|j| T::lit(SIGMA_DECAY.powi(j as i32))).collect() };
    let (sigma_id, sigma_expr, sigma_tex) = (sigma(k_id), sigma(k_expr), sigma(k_tex));
    let e_id = Matrix::from_fn(m, k_id, |r, c| geo[(r, c)] * sigma_id[c]);
    let e_expr = Matrix::from_fn(m, k_expr, |r, c| geo[(r, k_id + c)] * sigma_expr[c]);
    let e_tex = Matrix::from_fn(m, k_tex, |r, c| tex[(r, c)] * sigma_tex[c]);

    let landmark_indices = farthest_point_landmarks(&mean_shape_id, &mut rng);

    let basis = MorphableBasis {
        n_vertices,
        mean_shape_id,
        mean_shape_expr: vec![T::zero(); m],
        mean_texture,
        e_id,
        e_expr,
        e_tex,
        sigma_id,
        sigma_expr,
        sigma_tex,
        triangles,
        landmark_indices,
    };
    basis.validate()?;
    Ok(basis)
}

/// Stretched sphere with a nose bump toward -z (the side facing the camera).
fn head_like(p: [f64; 3]) -> [f64; 3] {
    let d2 = p[0] * p[0] + p[1] * p[1] + (p[2] + 1.0) * (p[2] + 1.0);
    let bump = 0.25 * (-d2 / 0.08).exp();
    [0.85 * p[0], 1.1 * p[1], 0.95 * p[2] - bump]
}

fn random_orthonormal<T: Real>(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Result<Matrix<T>> {
    let g = Matrix::from_fn(m, k, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        T::lit(x)
    });
    orthonormalize_columns(&g)
}

/// Farthest-point sampling over the front half (z < 0) of the mean shape.
fn farthest_point_landmarks<T: Real>(shape: &[T], rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let n = shape.len() / 3;
    let pos = |i: usize| [shape[3 * i].as_f64(), shape[3 * i + 1].as_f64(), shape[3 * i + 2].as_f64()];
    let candidates: Vec<usize> = (0..n).filter(|&i| pos(i)[2] < 0.0).collect();
    let candidates = if candidates.len() >= N_LANDMARKS {
        candidates
    } else {
        (0..n).collect()
    };
    let mut chosen = vec![candidates[rng.gen_range(0..candidates.len())]];
    let dist2 = |a: [f64; 3], b: [f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
    let mut best: Vec<f64> = candidates.iter().map(|&c| dist2(pos(c), pos(chosen[0]))).collect();
    while chosen.len() < N_LANDMARKS {
        let (arg, _) = best
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let next = candidates[arg];
        chosen.push(next);
        for (b, &c) in best.iter_mut().zip(&candidates) {
            *b = b.min(dist2(pos(c), pos(next)));
        }
    }
    chosen
}

/// Unit vertex normals with isolated vertices reported separately.
#[derive(Clone, Debug)]
pub struct VertexNormals<T> {
    pub normals: Vec<T>,
    /// Vertices with no incident non-degenerate face; their normal is +z.
    pub isolated: Vec<usize>,
}

/// Area-weighted vertex normals of a triangle mesh given as a flat
/// `3n` coordinate vector.
pub fn vertex_normals<T: Real>(shape: &[T], triangles: &[[usize; 3]]) -> Result<VertexNormals<T>> {
    if shape.len() % 3 != 0 {
        return Err(Error::invalid("shape length is not a multiple of 3"));
    }
    let n = shape.len() / 3;
    let acc = accumulate_face_normals(shape, triangles, n)?;
    let mut normals = vec![T::zero(); 3 * n];
    let mut isolated = Vec::new();
    for v in 0..n {
        let m = &acc[3 * v..3 * v + 3];
        let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
        if len > T::zero() {
            for k in 0..3 {
                normals[3 * v + k] = m[k] / len;
            }
        } else {
            normals[3 * v + 2] = T::one();
            isolated.push(v);
        }
    }
    if !isolated.is_empty() {
        warn!("{} isolated vertices received the +z normal", isolated.len());
    }
    Ok(VertexNormals { normals, isolated })
}

/// Unnormalized per-vertex sums of face cross products (twice the area
/// weighted normal).
pub(crate) fn accumulate_face_normals<T: Real>(
    shape: &[T],
    triangles: &[[usize; 3]],
    n: usize,
) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); 3 * n];
    for t in triangles {
        if t.iter().any(|&i| i >= n) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        let c = face_cross(shape, *t);
        for &v in t {
            for k in 0..3 {
                acc[3 * v + k] += c[k];
            }
        }
    }
    Ok(acc)
}

#[inline]
pub(crate) fn face_cross<T: Real>(shape: &[T], [a, b, c]: [usize; 3]) -> [T; 3] {
    let e1 = [
        shape[3 * b] - shape[3 * a],
        shape[3 * b + 1] - shape[3 * a + 1],
        shape[3 * b + 2] - shape[3 * a + 2],
    ];
    let e2 = [
        shape[3 * c] - shape[3 * a],
        shape[3 * c + 1] - shape[3 * a + 1],
        shape[3 * c + 2] - shape[3 * a + 2],
    ];
    cross(e1, e2)
}

#[inline]
pub(crate) fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
