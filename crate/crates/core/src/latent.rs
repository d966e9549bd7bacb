//! Synthetic latent world: attribute hyperplanes with known normals, a
//! generator from latents to statistical face parameters, linear SVM
//! hyperplane estimation, and paired-sample generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{all_finite, axpy, dot, norm, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AttributeDef<T> {
    pub name: String,
    pub u_true: Vec<T>,
    /// Signed offset of the hyperplane from the origin along `u_true`.
    pub bias: T,
    pub s_max: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Linear,
    Nonlinear,
}

impl std::str::FromStr for GeneratorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(Error::invalid(format!("unknown generator mode `{other}`"))),
        }
    }
}

/// `p = A·tanh(B·w) + C·w + bias` (the first term is dropped in linear mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GeneratorSpec<T> {
    pub mode: GeneratorMode,
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub c: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> GeneratorSpec<T> {
    pub fn latent_dim(&self) -> usize {
        self.c.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LatentWorld<T> {
    pub d: usize,
    pub attributes: Vec<AttributeDef<T>>,
    pub generator: GeneratorSpec<T>,
    pub seed: u64,
}

/// Parameters for building a [`LatentWorld`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub latent_dim: usize,
    /// Output dimension, the flat statistical parameter dimension.
    pub param_dim: usize,
    pub mode: GeneratorMode,
    pub hidden: usize,
    /// Scale of the linear map `C`.
    pub linear_gain: f64,
    /// Scale of the non-linear read-out `A`.
    pub nonlinear_gain: f64,
    /// How strongly the hidden units respond to the attribute normals.
    pub attribute_coupling: f64,
    /// `(name, s_max)` per attribute.
    pub attributes: Vec<(String, f64)>,
    pub attribute_bias: f64,
    pub min_angle_deg: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            latent_dim: 32,
            param_dim: 40,
            mode: GeneratorMode::Nonlinear,
            hidden: 16,
            linear_gain: 1.0,
            nonlinear_gain: 2.0,
            attribute_coupling: 2.0,
            attributes: default_attribute_names()
                .iter()
                .map(|n| (n.to_string(), 2.0))
                .collect(),
            attribute_bias: 0.0,
            min_angle_deg: 30.0,
        }
    }
}

pub fn default_attribute_names() -> [&'static str; 8] {
    [
        "male",
        "young",
        "chubby",
        "big_lips",
        "pointy_nose",
        "narrow_eyes",
        "bushy_eyebrows",
        "high_cheekbones",
    ]
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng) -> T {
    let x: f64 = StandardNormal.sample(rng);
    T::lit(x)
}

pub(crate) fn gaussian_vec<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// Acute angle between two lines, in degrees.
pub fn line_angle_deg<T: Real>(a: &[T], b: &[T]) -> f64 {
    let c = (dot(a, b) / (norm(a) * norm(b))).as_f64().abs().min(1.0);
    c.acos().to_degrees()
}

impl<T: Real> LatentWorld<T> {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        if cfg.latent_dim < 2 || cfg.param_dim == 0 || cfg.hidden == 0 {
            return Err(Error::invalid("latent, parameter and hidden dims must be positive"));
        }
        if cfg.attributes.is_empty() {
            return Err(Error::invalid("at least one attribute is required"));
        }
        let d = cfg.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut attributes: Vec<AttributeDef<T>> = Vec::new();
        for (name, s_max) in &cfg.attributes {
            if !(*s_max > 0.0) {
                return Err(Error::invalid(format!("s_max for `{name}` must be positive")));
            }
            if attributes.iter().any(|a| &a.name == name) {
                return Err(Error::invalid(format!("duplicate attribute `{name}`")));
            }
            let mut tries = 0;
            let u = loop {
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::invalid(format!(
                        "cannot place {} normals {}° apart in {d} dims",
                        cfg.attributes.len(),
                        cfg.min_angle_deg
                    )));
                }
                let mut u: Vec<T> = gaussian_vec(&mut rng, d);
                let n = norm(&u);
                u.iter_mut().for_each(|x| *x /= n);
                if attributes
                    .iter()
                    .all(|a| line_angle_deg(&a.u_true, &u) >= cfg.min_angle_deg)
                {
                    break u;
                }
            };
            attributes.push(AttributeDef {
                name: name.clone(),
                u_true: u,
                bias: T::lit(cfg.attribute_bias),
                s_max: T::lit(*s_max),
            });
        }

        let (k, h) = (cfg.param_dim, cfg.hidden);
        let scale = |g: f64, fan_in: usize| T::lit(g / (fan_in as f64).sqrt());
        let c_scale = scale(cfg.linear_gain, d);
        let c = Matrix::from_fn(k, d, |_, _| gaussian::<T>(&mut rng) * c_scale);
        let a_scale = scale(cfg.nonlinear_gain, h);
        let a = Matrix::from_fn(k, h, |_, _| gaussian::<T>(&mut rng) * a_scale);
        let b_scale = scale(1.0, d);
        let mut b = Matrix::from_fn(h, d, |_, _| gaussian::<T>(&mut rng) * b_scale);
        // Couple each hidden unit to the attribute normals so that moving
        // along an attribute bends through the squashing non-linearity.
        let coupling = T::lit(cfg.attribute_coupling / (attributes.len() as f64).sqrt());
        for attr in &attributes {
            let z: Vec<T> = gaussian_vec(&mut rng, h);
            for (r, zr) in z.iter().enumerate() {
                axpy(*zr * coupling, &attr.u_true, b.row_mut(r));
            }
        }
        let bias: Vec<T> = gaussian_vec::<T>(&mut rng, k)
            .into_iter()
            .map(|x| x * T::lit(0.1))
            .collect();
        Ok(Self {
            d,
            attributes,
            generator: GeneratorSpec {
                mode: cfg.mode,
                a,
                b,
                c,
                bias,
            },
            seed: cfg.seed,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn attribute(&self, name: &str) -> Result<&AttributeDef<T>> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Oracle classifier: `sign(w·u_true − b)`, with zero mapped to +1.
    pub fn label(&self, attribute: &str, w: &[T]) -> Result<i8> {
        let attr = self.attribute(attribute)?;
        check_dim("latent", self.d, w.len())?;
        Ok(if dot(w, &attr.u_true) - attr.bias >= T::zero() {
            1
        } else {
            -1
        })
    }

    /// Statistical face parameters for a latent.
    pub fn generate(&self, w: &[T]) -> Result<Vec<T>> {
        check_dim("latent", self.d, w.len())?;
        let g = &self.generator;
        let mut p = g.c.matvec(w);
        for (pi, bi) in p.iter_mut().zip(&g.bias) {
            *pi += *bi;
        }
        if g.mode == GeneratorMode::Nonlinear {
            let hidden: Vec<T> = g.b.matvec(w).into_iter().map(|x| x.tanh()).collect();
            g.a.matvec_add(&hidden, &mut p);
        }
        Ok(p)
    }

    /// Standard Gaussian latents with oracle labels.
    pub fn labeled_latents(&self, attribute: &str, n: usize, seed: u64) -> Result<Vec<(Vec<T>, i8)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let w = gaussian_vec(&mut rng, self.d);
                let y = self.label(attribute, &w)?;
                Ok((w, y))
            })
            .collect()
    }

    /// Unpaired draws `(w, g(w))` from the latent marginal, draw `i`
    /// seeded by `seed ^ i`.
    pub fn marginal_draws(&self, n: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i));
                let w: Vec<T> = gaussian_vec(&mut rng, self.d);
                let p = self.generate(&w)?;
                Ok((w, p))
            })
            .collect()
    }

    /// Labeled latents whose distance to the true hyperplane is at least
    /// `margin` (rejection sampling).
    pub fn separable_latents(
        &self,
        attribute: &str,
        n: usize,
        margin: f64,
        seed: u64,
    ) -> Result<Vec<(Vec<T>, i8)>> {
        let attr = self.attribute(attribute)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w: Vec<T> = gaussian_vec(&mut rng, self.d);
            let s = (dot(&w, &attr.u_true) - attr.bias).as_f64();
            if s.abs() >= margin {
                out.push((w, if s >= 0.0 { 1 } else { -1 }));
            }
        }
        Ok(out)
    }
}

/// Estimated (or ground-truth) attribute hyperplane `{w : w·u − b = 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AttributeHyperplane<T> {
    pub attribute: String,
    pub u_hat: Vec<T>,
    pub b_hat: T,
    pub train_accuracy: T,
}

impl<T: Real> AttributeHyperplane<T> {
    pub fn from_truth(attr: &AttributeDef<T>) -> Self {
        Self {
            attribute: attr.name.clone(),
            u_hat: attr.u_true.clone(),
            b_hat: attr.bias,
            train_accuracy: T::one(),
        }
    }

    pub fn angle_to_deg(&self, u: &[T]) -> f64 {
        let c = (dot(&self.u_hat, u) / (norm(&self.u_hat) * norm(u))).as_f64();
        c.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            iterations: 3000,
        }
    }
}

/// Linear SVM by full-batch Pegasos subgradient descent on
/// `λ/2·‖[w; c]‖² + mean_i max(0, 1 − y_i (w·x_i + c))`.
///
/// Each step uses the whole sample, so the result depends only on the
/// empirical distribution: duplicating every sample yields the same
/// hyperplane. The returned hyperplane is the average of the second half of
/// the iterates.
pub fn fit_hyperplane<T: Real>(
    attribute: &str,
    samples: &[(Vec<T>, i8)],
    cfg: &SvmConfig,
) -> Result<AttributeHyperplane<T>> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let d = samples[0].0.len();
    let mut pos = 0usize;
    for (x, y) in samples {
        check_dim("svm feature", d, x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("svm features".into()));
        }
        match y {
            1 => pos += 1,
            -1 => {}
            other => return Err(Error::invalid(format!("label {other} is not ±1"))),
        }
    }
    if pos == 0 || pos == samples.len() {
        return Err(Error::SingleClass(samples[0].1));
    }
    if !(cfg.lambda > 0.0) || cfg.iterations == 0 {
        return Err(Error::invalid("svm lambda and iterations must be positive"));
    }

    let n = T::of_usize(samples.len());
    let lambda = T::lit(cfg.lambda);
    let radius = T::one() / lambda.sqrt();
    // Augmented weight: the last coordinate multiplies a constant 1 feature.
    let mut wt = vec![T::zero(); d + 1];
    let mut avg = vec![T::zero(); d + 1];
    let mut grad = vec![T::zero(); d + 1];
    let start_avg = cfg.iterations / 2;
    for t in 1..=cfg.iterations {
        grad.iter_mut().for_each(|g| *g = T::zero());
        for (x, y) in samples {
            let yf = T::lit(f64::from(*y));
            let margin = yf * (dot(&wt[..d], x) + wt[d]);
            if margin < T::one() {
                axpy(yf, x, &mut grad[..d]);
                grad[d] += yf;
            }
        }
        let eta = T::one() / (lambda * T::of_usize(t));
        let shrink = T::one() - eta * lambda;
        for (w, g) in wt.iter_mut().zip(&grad) {
            *w = shrink * *w + eta * *g / n;
        }
        let nw = norm(&wt);
        if nw > radius {
            let s = radius / nw;
            wt.iter_mut().for_each(|w| *w *= s);
        }
        if t > start_avg {
            axpy(T::one(), &wt, &mut avg);
        }
    }
    let count = T::of_usize(cfg.iterations - start_avg);
    avg.iter_mut().for_each(|w| *w /= count);

    let wn = norm(&avg[..d]);
    if !(wn > T::zero()) || !wn.is_finite() {
        return Err(Error::Optimizer("svm weight vector vanished".into()));
    }
    let u_hat: Vec<T> = avg[..d].iter().map(|w| *w / wn).collect();
    let b_hat = -avg[d] / wn;
    let correct = samples
        .iter()
        .filter(|(x, y)| {
            let s = dot(&u_hat, x) - b_hat;
            (s >= T::zero()) == (*y == 1)
        })
        .count();
    Ok(AttributeHyperplane {
        attribute: attribute.to_string(),
        u_hat,
        b_hat,
        train_accuracy: T::of_usize(correct) / n,
    })
}

/// `w̃ − (w̃·u − b)·u`
pub fn project_to_hyperplane<T: Real>(w_tilde: &[T], h: &AttributeHyperplane<T>) -> Vec<T> {
    let s = semantic_score(w_tilde, h);
    let mut w = w_tilde.to_vec();
    axpy(-s, &h.u_hat, &mut w);
    w
}

/// Signed distance `w·u − b` of a latent from the hyperplane.
pub fn semantic_score<T: Real>(w: &[T], h: &AttributeHyperplane<T>) -> T {
    dot(w, &h.u_hat) - h.b_hat
}

/// One positive/negative pair sharing an identity latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PairedSample<T> {
    /// Stable sample identity; seeds every per-sample random decision.
    pub id: u64,
    pub attribute: String,
    pub w_proj: Vec<T>,
    pub s_pos: T,
    pub s_neg: T,
    pub p_pos: Vec<T>,
    pub p_neg: Vec<T>,
}

impl<T: Real> PairedSample<T> {
    /// Shifted latent `w_proj + s·u`.
    pub fn shifted(&self, h: &AttributeHyperplane<T>, s: T) -> Vec<T> {
        let mut w = self.w_proj.clone();
        axpy(s, &h.u_hat, &mut w);
        w
    }
}

/// Draws one pair: a projected Gaussian identity with scores
/// `s⁺ ∈ (0, s_max]` and `s⁻ ∈ [−s_max, 0)`.
pub fn sample_pair<T: Real, R: Rng>(
    world: &LatentWorld<T>,
    h: &AttributeHyperplane<T>,
    attribute: &str,
    rng: &mut R,
) -> Result<PairedSample<T>> {
    let attr = world.attribute(attribute)?;
    check_dim("hyperplane normal", world.d, h.u_hat.len())?;
    let s_max = attr.s_max.as_f64();
    let w_tilde: Vec<T> = (0..world.d)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            T::lit(x)
        })
        .collect();
    let w_proj = project_to_hyperplane(&w_tilde, h);
    // gen::<f64>() is in [0, 1); flip it to get (0, 1].
    let s_pos = T::lit(s_max * (1.0 - rng.gen::<f64>()));
    let s_neg = T::lit(-s_max * (1.0 - rng.gen::<f64>()));
    let mut pair = PairedSample {
        id: 0,
        attribute: attribute.to_string(),
        w_proj,
        s_pos,
        s_neg,
        p_pos: Vec::new(),
        p_neg: Vec::new(),
    };
    pair.p_pos = world.generate(&pair.shifted(h, s_pos))?;
    pair.p_neg = world.generate(&pair.shifted(h, s_neg))?;
    Ok(pair)
}

/// Seed of sample `index` in a dataset.
pub fn sample_seed(dataset_seed: u64, index: u64) -> u64 {
    dataset_seed ^ index
}

/// `n` pairs, sample `i` drawn from its own generator seeded with
/// `dataset_seed ^ i`; serial and parallel runs are bit-identical.
pub fn generate_pairs<T: Real>(
    world: &LatentWorld<T>,
    h: &AttributeHyperplane<T>,
    attribute: &str,
    n: usize,
    dataset_seed: u64,
) -> Result<Vec<PairedSample<T>>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(dataset_seed, i));
            let mut pair = sample_pair(world, h, attribute, &mut rng)?;
            pair.id = i;
            Ok(pair)
        })
        .collect()
}
