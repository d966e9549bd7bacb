//! Analysis-by-synthesis fitting of face parameters to 2D landmarks and
//! per-vertex color samples.
//!
//! The pixel term is point sampled: every vertex visible in the target and
//! under the current parameters compares its shaded color with the target
//! color recorded for it. Visibility is a back-face test on camera-space
//! normals. Minimization is Levenberg-Marquardt over the stacked weighted
//! residual
//!
//! ```text
//! ρ = [ √(λ_f/68)·r_landmark ; √(λ_p/N_vis)·r_color ; √λ_r·p_j/σ_j ]
//! ```
//!
//! whose squared norm is the objective reported as `total`.

pub mod camera;
pub mod shading;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{accumulate_face_normals, cross, FaceParams, MorphableBasis, N_LANDMARKS};
use crate::scalar::{dot, Real};

pub use camera::{project, rotation, CameraModel, Projection};
pub use shading::phong_shade;

use camera::{mat_vec, rotation_partials, to_camera, Mat3};
use shading::{clamp01, light_dir, shade_channel, LIGHT_EPS};

/// Target colors sampled per vertex, with the target's visibility mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SampledColors<T> {
    pub colors: Vec<T>,
    pub visible: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FitTarget<T> {
    pub landmarks_2d: Vec<[T; 2]>,
    pub sampled_colors: Option<SampledColors<T>>,
}

impl<T: Real> FitTarget<T> {
    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        check_dim("target landmarks", N_LANDMARKS, self.landmarks_2d.len())?;
        if let Some(sc) = &self.sampled_colors {
            check_dim("target colors", 3 * n_vertices, sc.colors.len())?;
            check_dim("target visibility", n_vertices, sc.visible.len())?;
            if sc.colors.iter().any(|c| !(*c >= T::zero() && *c <= T::one())) {
                return Err(Error::invalid("target colors must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Landmarks (and optionally shaded colors) synthesized from `params`.
    pub fn render(
        params: &FaceParams<T>,
        basis: &MorphableBasis<T>,
        camera: &CameraModel<T>,
        with_colors: bool,
    ) -> Result<Self> {
        let frame = Frame::new(params, basis, camera, with_colors)?;
        let landmarks_2d = frame.landmark_px.clone();
        let sampled_colors = if with_colors {
            Some(SampledColors {
                colors: frame.colors.iter().map(|c| clamp01(*c)).collect(),
                visible: frame.visible.clone(),
            })
        } else {
            None
        };
        Ok(Self {
            landmarks_2d,
            sampled_colors,
        })
    }
}

/// Everything derived from one parameter set that the energies and their
/// derivatives need.
struct Frame<T> {
    shape: Vec<T>,
    texture: Vec<T>,
    rot: Mat3<T>,
    /// Camera-space landmark positions.
    landmark_cam: Vec<[T; 3]>,
    landmark_px: Vec<[T; 2]>,
    /// Unnormalized (area weighted) normal sums and their lengths.
    normal_acc: Vec<T>,
    normal_len: Vec<T>,
    normals: Vec<T>,
    light_dirs: Vec<[T; 3]>,
    light_dist: Vec<T>,
    n_dot_l: Vec<T>,
    /// Unclamped shaded colors.
    colors: Vec<T>,
    visible: Vec<bool>,
}

impl<T: Real> Frame<T> {
    fn new(params: &FaceParams<T>, basis: &MorphableBasis<T>, camera: &CameraModel<T>, shading: bool) -> Result<Self> {
        let shape = basis.eval_shape(&params.p_id, &params.p_expr)?;
        let texture = basis.eval_texture(&params.p_tex)?;
        let rot = rotation([params.p_cam[0], params.p_cam[1], params.p_cam[2]]);
        let (cx, cy) = camera.principal_point();
        let f = camera.focal_length;
        let mut landmark_cam = Vec::with_capacity(N_LANDMARKS);
        let mut landmark_px = Vec::with_capacity(N_LANDMARKS);
        for &v in &basis.landmark_indices {
            let xc = to_camera(&rot, &params.p_cam, vertex(&shape, v));
            if !(xc[2] > T::lit(camera::NEAR_PLANE)) {
                return Err(Error::BehindCamera {
                    index: v,
                    depth: xc[2].as_f64(),
                });
            }
            landmark_px.push([f * xc[0] / xc[2] + cx, f * xc[1] / xc[2] + cy]);
            landmark_cam.push(xc);
        }
        let mut frame = Frame {
            shape,
            texture,
            rot,
            landmark_cam,
            landmark_px,
            normal_acc: Vec::new(),
            normal_len: Vec::new(),
            normals: Vec::new(),
            light_dirs: Vec::new(),
            light_dist: Vec::new(),
            n_dot_l: Vec::new(),
            colors: Vec::new(),
            visible: Vec::new(),
        };
        if shading {
            frame.shade(params, basis)?;
        }
        Ok(frame)
    }

    fn shade(&mut self, params: &FaceParams<T>, basis: &MorphableBasis<T>) -> Result<()> {
        let n = basis.n_vertices;
        self.normal_acc = accumulate_face_normals(&self.shape, &basis.triangles, n)?;
        self.normal_len = vec![T::zero(); n];
        self.normals = vec![T::zero(); 3 * n];
        self.light_dirs = Vec::with_capacity(n);
        self.light_dist = Vec::with_capacity(n);
        self.n_dot_l = Vec::with_capacity(n);
        self.colors = vec![T::zero(); 3 * n];
        self.visible = Vec::with_capacity(n);
        let light = [params.p_light[0], params.p_light[1], params.p_light[2]];
        for v in 0..n {
            let m = vertex(&self.normal_acc, v);
            let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            let nv = if len > T::zero() {
                [m[0] / len, m[1] / len, m[2] / len]
            } else {
                [T::zero(), T::zero(), T::one()]
            };
            self.normal_len[v] = len;
            self.normals[3 * v..3 * v + 3].copy_from_slice(&nv);
            let (l, dist) = light_dir(light, vertex(&self.shape, v));
            if !(dist >= T::lit(LIGHT_EPS)) {
                return Err(Error::LightAtVertex(v));
            }
            let ndl = nv[0] * l[0] + nv[1] * l[1] + nv[2] * l[2];
            let diffuse = ndl.max(T::zero());
            for c in 0..3 {
                self.colors[3 * v + c] = shade_channel(self.texture[3 * v + c], params.p_light[3 + c], diffuse);
            }
            self.light_dirs.push(l);
            self.light_dist.push(dist);
            self.n_dot_l.push(ndl);
            // Camera looks down +z, so a surface facing it has n_z < 0.
            self.visible.push(mat_vec(&self.rot, nv)[2] < T::zero() && len > T::zero());
        }
        Ok(())
    }
}

#[inline]
fn vertex<T: Real>(flat: &[T], v: usize) -> [T; 3] {
    [flat[3 * v], flat[3 * v + 1], flat[3 * v + 2]]
}

/// Mean landmark reprojection error and the stacked `68×2` residual
/// `projected − target`.
pub fn e_feature<T: Real>(
    params: &FaceParams<T>,
    target: &FitTarget<T>,
    basis: &MorphableBasis<T>,
    camera: &CameraModel<T>,
) -> Result<(T, Vec<T>)> {
    target.validate(basis.n_vertices)?;
    let frame = Frame::new(params, basis, camera, false)?;
    Ok(feature_terms(&frame, target))
}

fn feature_terms<T: Real>(frame: &Frame<T>, target: &FitTarget<T>) -> (T, Vec<T>) {
    let mut residual = Vec::with_capacity(2 * N_LANDMARKS);
    let mut sum = T::zero();
    for (p, t) in frame.landmark_px.iter().zip(&target.landmarks_2d) {
        let (dx, dy) = (p[0] - t[0], p[1] - t[1]);
        sum += (dx * dx + dy * dy).sqrt();
        residual.push(dx);
        residual.push(dy);
    }
    (sum / T::of_usize(N_LANDMARKS), residual)
}

/// Point-sampled color energy: mean over vertices visible in both the
/// target and the current parameters of `‖shaded − target‖`. The residual
/// has length `3n`, zero on inactive vertices; the active count is returned
/// alongside.
pub fn e_pixel<T: Real>(
    params: &FaceParams<T>,
    target: &FitTarget<T>,
    basis: &MorphableBasis<T>,
    camera: &CameraModel<T>,
) -> Result<(T, Vec<T>)> {
    target.validate(basis.n_vertices)?;
    let frame = Frame::new(params, basis, camera, true)?;
    let (e, r, _) = pixel_terms(&frame, target)?;
    Ok((e, r))
}

fn active_vertices<T: Real>(frame: &Frame<T>, target: &FitTarget<T>) -> Result<Vec<bool>> {
    let sc = target
        .sampled_colors
        .as_ref()
        .ok_or_else(|| Error::invalid("pixel energy needs target colors"))?;
    Ok(frame.visible.iter().zip(&sc.visible).map(|(a, b)| *a && *b).collect())
}

fn pixel_terms<T: Real>(frame: &Frame<T>, target: &FitTarget<T>) -> Result<(T, Vec<T>, usize)> {
    let active = active_vertices(frame, target)?;
    let sc = target.sampled_colors.as_ref().expect("checked above");
    let mut residual = vec![T::zero(); frame.colors.len()];
    let mut sum = T::zero();
    let mut count = 0;
    for (v, _) in active.iter().enumerate().filter(|(_, a)| **a) {
        let mut sq = T::zero();
        for c in 0..3 {
            let r = clamp01(frame.colors[3 * v + c]) - sc.colors[3 * v + c];
            residual[3 * v + c] = r;
            sq += r * r;
        }
        sum += sq.sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoVisibleVertices);
    }
    Ok((sum / T::of_usize(count), residual, count))
}

/// Root mean square of the per-landmark reprojection distances, in pixels.
pub fn landmark_rms<T: Real>(
    params: &FaceParams<T>,
    target: &FitTarget<T>,
    basis: &MorphableBasis<T>,
    camera: &CameraModel<T>,
) -> Result<T> {
    let (_, r) = e_feature(params, target, basis, camera)?;
    Ok((dot(&r, &r) / T::of_usize(N_LANDMARKS)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    Analytic,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FitConfig<T> {
    pub lambda_feature: T,
    pub lambda_pixel: T,
    pub lambda_reg: T,
    pub max_iters: usize,
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction.
    pub rel_tol: T,
    /// Stop when the objective itself falls below this value.
    pub abs_tol: T,
    pub initial_damping: T,
    /// Damping above which a step attempt is abandoned.
    pub max_damping: T,
    pub jacobian: JacobianMode,
    /// Relative step of the central differences in numeric mode.
    pub fd_step: T,
}

impl<T: Real> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            lambda_feature: T::one(),
            lambda_pixel: T::one(),
            lambda_reg: T::lit(1e-3),
            max_iters: 200,
            rel_tol: T::lit(1e-8),
            abs_tol: T::lit(1e-24),
            initial_damping: T::lit(1e-3),
            max_damping: T::lit(1e10),
            jacobian: JacobianMode::Analytic,
            fd_step: T::lit(1e-6),
        }
    }
}

impl<T: Real> FitConfig<T> {
    pub fn landmarks_only() -> Self {
        Self {
            lambda_pixel: T::zero(),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FitResult<T> {
    pub params: FaceParams<T>,
    pub final_e_feature: T,
    pub final_e_pixel: T,
    /// Final value of the least-squares objective.
    pub final_total: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every accepted step.
    pub history: Vec<T>,
}

/// Which parameters the optimizer moves. Full layout:
/// `[p_id | p_expr | p_tex | p_cam(6) | p_light(6)]`.
#[derive(Clone, Copy, Debug)]
struct Layout {
    k_id: usize,
    k_expr: usize,
    k_tex: usize,
    appearance: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Id(usize),
    Expr(usize),
    Tex(usize),
    Cam(usize),
    Light(usize),
}

impl Layout {
    fn slots(&self) -> Vec<Slot> {
        let mut s: Vec<Slot> = (0..self.k_id).map(Slot::Id).collect();
        s.extend((0..self.k_expr).map(Slot::Expr));
        if self.appearance {
            s.extend((0..self.k_tex).map(Slot::Tex));
        }
        s.extend((0..6).map(Slot::Cam));
        if self.appearance {
            s.extend((0..6).map(Slot::Light));
        }
        s
    }
}

fn read_slot<T: Real>(p: &FaceParams<T>, s: Slot) -> T {
    match s {
        Slot::Id(i) => p.p_id[i],
        Slot::Expr(i) => p.p_expr[i],
        Slot::Tex(i) => p.p_tex[i],
        Slot::Cam(i) => p.p_cam[i],
        Slot::Light(i) => p.p_light[i],
    }
}

fn write_slot<T: Real>(p: &mut FaceParams<T>, s: Slot, x: T) {
    match s {
        Slot::Id(i) => p.p_id[i] = x,
        Slot::Expr(i) => p.p_expr[i] = x,
        Slot::Tex(i) => p.p_tex[i] = x,
        Slot::Cam(i) => p.p_cam[i] = x,
        Slot::Light(i) => p.p_light[i] = x,
    }
}

struct Evaluation<T> {
    rho: Vec<T>,
    e_feature: T,
    e_pixel: T,
    total: T,
    frame: Frame<T>,
    pixel_count: usize,
    active: Vec<bool>,
}

/// The fitting objective bound to one target.
pub struct FitProblem<'a, T> {
    basis: &'a MorphableBasis<T>,
    camera: &'a CameraModel<T>,
    target: &'a FitTarget<T>,
    config: &'a FitConfig<T>,
    slots: Vec<Slot>,
    sigma: Vec<T>,
}

impl<'a, T: Real> FitProblem<'a, T> {
    pub fn new(
        basis: &'a MorphableBasis<T>,
        camera: &'a CameraModel<T>,
        target: &'a FitTarget<T>,
        config: &'a FitConfig<T>,
    ) -> Result<Self> {
        target.validate(basis.n_vertices)?;
        let use_pixel = config.lambda_pixel > T::zero();
        if use_pixel && target.sampled_colors.is_none() {
            return Err(Error::invalid("pixel energy weight is positive but the target has no colors"));
        }
        let dims = basis.dims();
        let layout = Layout {
            k_id: dims.k_id,
            k_expr: dims.k_expr,
            k_tex: dims.k_tex,
            appearance: use_pixel,
        };
        Ok(Self {
            basis,
            camera,
            target,
            config,
            slots: layout.slots(),
            sigma: basis.sigma_flat(),
        })
    }

    /// Number of free parameters.
    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    fn use_pixel(&self) -> bool {
        self.config.lambda_pixel > T::zero()
    }

    pub fn pack(&self, p: &FaceParams<T>) -> Vec<T> {
        self.slots.iter().map(|s| read_slot(p, *s)).collect()
    }

    pub fn unpack(&self, x: &[T], base: &FaceParams<T>) -> FaceParams<T> {
        let mut p = base.clone();
        for (s, v) in self.slots.iter().zip(x) {
            write_slot(&mut p, *s, *v);
        }
        p
    }

    fn evaluate(&self, p: &FaceParams<T>) -> Result<Evaluation<T>> {
        let frame = Frame::new(p, self.basis, self.camera, self.use_pixel())?;
        let (e_feature, r_f) = feature_terms(&frame, self.target);
        let wf = (self.config.lambda_feature / T::of_usize(N_LANDMARKS)).sqrt();
        let mut rho: Vec<T> = r_f.iter().map(|r| *r * wf).collect();
        let (mut e_pixel, mut pixel_count, mut active) = (T::zero(), 0, Vec::new());
        if self.use_pixel() {
            let (e, r_p, count) = pixel_terms(&frame, self.target)?;
            active = active_vertices(&frame, self.target)?;
            let wp = (self.config.lambda_pixel / T::of_usize(count)).sqrt();
            rho.extend(r_p.iter().map(|r| *r * wp));
            e_pixel = e;
            pixel_count = count;
        }
        let wr = self.config.lambda_reg.sqrt();
        let stat = p.p_id.iter().chain(&p.p_expr).chain(&p.p_tex);
        rho.extend(stat.zip(&self.sigma).map(|(x, s)| wr * *x / *s));
        let total = dot(&rho, &rho);
        Ok(Evaluation {
            rho,
            e_feature,
            e_pixel,
            total,
            frame,
            pixel_count,
            active,
        })
    }

    /// Least-squares objective `‖ρ‖²` at `p`.
    pub fn objective(&self, p: &FaceParams<T>) -> Result<T> {
        Ok(self.evaluate(p)?.total)
    }

    /// Weighted residual `ρ` at `p`.
    pub fn residual(&self, p: &FaceParams<T>) -> Result<Vec<T>> {
        Ok(self.evaluate(p)?.rho)
    }

    /// Jacobian of `ρ` with respect to the free parameters, computed by
    /// forward-mode differentiation of the model.
    pub fn analytic_jacobian(&self, p: &FaceParams<T>) -> Result<Matrix<T>> {
        let ev = self.evaluate(p)?;
        Ok(self.analytic_from(p, &ev))
    }

    /// Central-difference Jacobian of `ρ`. Visibility is frozen at `p`.
    pub fn numeric_jacobian(&self, p: &FaceParams<T>) -> Result<Matrix<T>> {
        let base = self.evaluate(p)?;
        let x = self.pack(p);
        let mut jac = Matrix::zeros(base.rho.len(), x.len());
        for j in 0..x.len() {
            let h = self.config.fd_step * x[j].abs().max(T::one());
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let rp = self.frozen_residual(&self.unpack(&xp, p), &base)?;
            let rm = self.frozen_residual(&self.unpack(&xm, p), &base)?;
            for r in 0..rp.len() {
                jac[(r, j)] = (rp[r] - rm[r]) / (h + h);
            }
        }
        Ok(jac)
    }

    /// Residual at `p` using the active set and pixel count of `base`.
    fn frozen_residual(&self, p: &FaceParams<T>, base: &Evaluation<T>) -> Result<Vec<T>> {
        let frame = Frame::new(p, self.basis, self.camera, self.use_pixel())?;
        let (_, r_f) = feature_terms(&frame, self.target);
        let wf = (self.config.lambda_feature / T::of_usize(N_LANDMARKS)).sqrt();
        let mut rho: Vec<T> = r_f.iter().map(|r| *r * wf).collect();
        if self.use_pixel() {
            let sc = self.target.sampled_colors.as_ref().expect("validated");
            let wp = (self.config.lambda_pixel / T::of_usize(base.pixel_count)).sqrt();
            for v in 0..self.basis.n_vertices {
                for c in 0..3 {
                    let r = if base.active[v] {
                        clamp01(frame.colors[3 * v + c]) - sc.colors[3 * v + c]
                    } else {
                        T::zero()
                    };
                    rho.push(r * wp);
                }
            }
        }
        let wr = self.config.lambda_reg.sqrt();
        let stat = p.p_id.iter().chain(&p.p_expr).chain(&p.p_tex);
        rho.extend(stat.zip(&self.sigma).map(|(x, s)| wr * *x / *s));
        Ok(rho)
    }

    fn analytic_from(&self, p: &FaceParams<T>, ev: &Evaluation<T>) -> Matrix<T> {
        let basis = self.basis;
        let frame = &ev.frame;
        let n = basis.n_vertices;
        let dims = basis.dims();
        let rows = ev.rho.len();
        let mut jac = Matrix::zeros(rows, self.slots.len());
        let wf = (self.config.lambda_feature / T::of_usize(N_LANDMARKS)).sqrt();
        let wp = if self.use_pixel() {
            (self.config.lambda_pixel / T::of_usize(ev.pixel_count)).sqrt()
        } else {
            T::zero()
        };
        let pixel_off = 2 * N_LANDMARKS;
        let prior_off = pixel_off + if self.use_pixel() { 3 * n } else { 0 };
        let wr = self.config.lambda_reg.sqrt();
        let f = self.camera.focal_length;

        // Landmark rows from a camera-space tangent per landmark.
        let put_landmarks = |jac: &mut Matrix<T>, col: usize, d_cam: &dyn Fn(usize, usize) -> [T; 3]| {
            for (l, (&v, xc)) in basis.landmark_indices.iter().zip(&frame.landmark_cam).enumerate() {
                let dx = d_cam(l, v);
                let z2 = xc[2] * xc[2];
                jac[(2 * l, col)] = wf * f * (dx[0] / xc[2] - xc[0] * dx[2] / z2);
                jac[(2 * l + 1, col)] = wf * f * (dx[1] / xc[2] - xc[1] * dx[2] / z2);
            }
        };

        let mut d_acc = vec![T::zero(); 3 * n];
        for (col, slot) in self.slots.iter().enumerate() {
            match *slot {
                Slot::Id(_) | Slot::Expr(_) => {
                    let (e, j) = match *slot {
                        Slot::Id(j) => (&basis.e_id, j),
                        Slot::Expr(j) => (&basis.e_expr, j),
                        _ => unreachable!(),
                    };
                    let dshape = |v: usize| [e[(3 * v, j)], e[(3 * v + 1, j)], e[(3 * v + 2, j)]];
                    put_landmarks(&mut jac, col, &|_, v| mat_vec(&frame.rot, dshape(v)));
                    if self.use_pixel() {
                        d_acc.iter_mut().for_each(|x| *x = T::zero());
                        for &[a, b, c] in &basis.triangles {
                            let (xa, xb, xc) = (vertex(&frame.shape, a), vertex(&frame.shape, b), vertex(&frame.shape, c));
                            let (da, db, dc) = (dshape(a), dshape(b), dshape(c));
                            let e1 = sub3(xb, xa);
                            let e2 = sub3(xc, xa);
                            let de1 = sub3(db, da);
                            let de2 = sub3(dc, da);
                            let dm = add3(cross(de1, e2), cross(e1, de2));
                            for &v in &[a, b, c] {
                                for k in 0..3 {
                                    d_acc[3 * v + k] += dm[k];
                                }
                            }
                        }
                        for v in (0..n).filter(|&v| ev.active[v]) {
                            let nv = vertex(&frame.normals, v);
                            let dm = vertex(&d_acc, v);
                            let proj = dot3(nv, dm);
                            let len = frame.normal_len[v];
                            let dn = [
                                (dm[0] - nv[0] * proj) / len,
                                (dm[1] - nv[1] * proj) / len,
                                (dm[2] - nv[2] * proj) / len,
                            ];
                            let l = frame.light_dirs[v];
                            let dx = dshape(v);
                            let lx = dot3(l, dx);
                            let dist = frame.light_dist[v];
                            let dl = [
                                -(dx[0] - l[0] * lx) / dist,
                                -(dx[1] - l[1] * lx) / dist,
                                -(dx[2] - l[2] * lx) / dist,
                            ];
                            let ddiff = if frame.n_dot_l[v] > T::zero() {
                                dot3(dn, l) + dot3(nv, dl)
                            } else {
                                T::zero()
                            };
                            for c in 0..3 {
                                if unclamped(frame.colors[3 * v + c]) {
                                    jac[(pixel_off + 3 * v + c, col)] = wp * frame.texture[3 * v + c] * ddiff;
                                }
                            }
                        }
                    }
                    let stat_index = match *slot {
                        Slot::Id(j) => j,
                        Slot::Expr(j) => dims.k_id + j,
                        _ => unreachable!(),
                    };
                    jac[(prior_off + stat_index, col)] = wr / self.sigma[stat_index];
                }
                Slot::Tex(j) => {
                    for v in (0..n).filter(|&v| ev.active[v]) {
                        let diffuse = frame.n_dot_l[v].max(T::zero());
                        for c in 0..3 {
                            if unclamped(frame.colors[3 * v + c]) {
                                let amb = p.p_light[3 + c];
                                jac[(pixel_off + 3 * v + c, col)] = wp * basis.e_tex[(3 * v + c, j)] * (amb + diffuse);
                            }
                        }
                    }
                    let stat_index = dims.k_id + dims.k_expr + j;
                    jac[(prior_off + stat_index, col)] = wr / self.sigma[stat_index];
                }
                Slot::Cam(k) if k < 3 => {
                    let dr = rotation_partials([p.p_cam[0], p.p_cam[1], p.p_cam[2]])[k];
                    put_landmarks(&mut jac, col, &|_, v| mat_vec(&dr, vertex(&frame.shape, v)));
                }
                Slot::Cam(k) => {
                    let mut unit = [T::zero(); 3];
                    unit[k - 3] = T::one();
                    put_landmarks(&mut jac, col, &|_, _| unit);
                }
                Slot::Light(k) if k < 3 => {
                    for v in (0..n).filter(|&v| ev.active[v] && frame.n_dot_l[v] > T::zero()) {
                        let nv = vertex(&frame.normals, v);
                        let l = frame.light_dirs[v];
                        let ddiff = (nv[k] - frame.n_dot_l[v] * l[k]) / frame.light_dist[v];
                        for c in 0..3 {
                            if unclamped(frame.colors[3 * v + c]) {
                                jac[(pixel_off + 3 * v + c, col)] = wp * frame.texture[3 * v + c] * ddiff;
                            }
                        }
                    }
                }
                Slot::Light(k) => {
                    let c = k - 3;
                    for v in (0..n).filter(|&v| ev.active[v]) {
                        if unclamped(frame.colors[3 * v + c]) {
                            jac[(pixel_off + 3 * v + c, col)] = wp * frame.texture[3 * v + c];
                        }
                    }
                }
            }
        }
        jac
    }

    fn jacobian(&self, p: &FaceParams<T>, ev: &Evaluation<T>) -> Result<Matrix<T>> {
        match self.config.jacobian {
            JacobianMode::Analytic => Ok(self.analytic_from(p, ev)),
            JacobianMode::Numeric => self.numeric_jacobian(p),
        }
    }
}

#[inline]
fn unclamped<T: Real>(x: T) -> bool {
    x > T::zero() && x < T::one()
}

#[inline]
fn sub3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn add3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Levenberg-Marquardt fit of `init` to `target`.
///
/// Damping is multiplicative (÷10 after an accepted step, ×10 after a
/// rejected one) on the Marquardt-scaled diagonal. A step that leaves the
/// valid projection domain counts as rejected.
pub fn fit<T: Real>(
    target: &FitTarget<T>,
    basis: &MorphableBasis<T>,
    camera: &CameraModel<T>,
    init: &FaceParams<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>> {
    if !init.is_finite() {
        return Err(Error::NonFinite("initial fit parameters".into()));
    }
    let problem = FitProblem::new(basis, camera, target, config)?;
    let mut params = init.clone();
    let mut current = problem.evaluate(&params)?;
    if !current.total.is_finite() {
        return Err(Error::Optimizer("initial energy is not finite".into()));
    }
    let mut history = vec![current.total];
    let mut mu = config.initial_damping;
    let mut iterations = 0;
    let mut converged = current.total <= config.abs_tol;

    while !converged && iterations < config.max_iters {
        let jac = problem.jacobian(&params, &current)?;
        let grad = jac.tr_matvec(&current.rho);
        let h = jac.gram();
        let max_diag = (0..h.rows()).map(|i| h[(i, i)]).fold(T::zero(), T::max);
        let floor = max_diag * T::lit(1e-12) + T::min_positive_value();
        let x = problem.pack(&params);

        let mut accepted = None;
        while mu <= config.max_damping {
            let mut a = h.clone();
            for i in 0..a.rows() {
                a[(i, i)] += mu * h[(i, i)].max(floor);
            }
            let chol = match Cholesky::factor(&a) {
                Ok(c) => c,
                Err(_) => {
                    mu *= T::lit(10.0);
                    continue;
                }
            };
            let step = chol.solve(&grad);
            let trial_x: Vec<T> = x.iter().zip(&step).map(|(xi, si)| *xi - *si).collect();
            let trial = problem.unpack(&trial_x, &params);
            match problem.evaluate(&trial) {
                Ok(ev) if !ev.total.is_finite() => {
                    return Err(Error::Optimizer(format!(
                        "non-finite energy at iteration {iterations} (damping {mu})"
                    )));
                }
                Ok(ev) if ev.total < current.total => {
                    accepted = Some((trial, ev));
                    mu = (mu / T::lit(10.0)).max(T::lit(1e-15));
                    break;
                }
                Ok(_) | Err(Error::BehindCamera { .. }) | Err(Error::NoVisibleVertices) => {
                    mu *= T::lit(10.0);
                }
                Err(e) => return Err(e),
            }
        }
        let Some((trial, ev)) = accepted else {
            if h.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::Optimizer("singular normal equations".into()));
            }
            // No descent step exists at machine precision: a minimum.
            debug!("fit: damping saturated after {iterations} iterations");
            converged = true;
            break;
        };
        debug_assert!(ev.total <= current.total);
        let decrease = (current.total - ev.total) / current.total;
        params = trial;
        current = ev;
        iterations += 1;
        history.push(current.total);
        if decrease < config.rel_tol || current.total <= config.abs_tol {
            converged = true;
        }
    }

    Ok(FitResult {
        params,
        final_e_feature: current.e_feature,
        final_e_pixel: current.e_pixel,
        final_total: current.total,
        iterations,
        converged,
        history,
    })
}

/// Random face for render-and-recover experiments: statistical parameters
/// drawn from `N(0, 1)`, a pose within ±0.2 rad of frontal at depth 9-11,
/// and a jittered default light.
pub fn synthetic_face<T: Real>(dims: crate::model::ParamDims, seed: u64) -> FaceParams<T> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = FaceParams::zeros(dims);
    for x in p.p_id.iter_mut().chain(p.p_expr.iter_mut()).chain(p.p_tex.iter_mut()) {
        let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        *x = T::lit(g);
    }
    let mut jitter = |half: f64| T::lit(rng.gen_range(-half..=half));
    for k in 0..3 {
        p.p_cam[k] = jitter(0.2);
    }
    p.p_cam[3] = jitter(0.3);
    p.p_cam[4] = jitter(0.3);
    p.p_cam[5] += jitter(1.0);
    for k in 0..3 {
        p.p_light[k] += jitter(0.5);
    }
    for k in 3..6 {
        p.p_light[k] += jitter(0.05);
    }
    p
}
