//! Conditional attribute controller: an MLP `f(p, s)` applied residually,
//! `p̃ = p + f(p, s)`, or directly (`p̃ = f(p, s)`) in the ablation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::PairedSample;
use crate::linalg::Matrix;
use crate::scalar::{all_finite, gemm, Real, View};
use crate::seeding::{mix3, unit_f64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `‖e‖`, the default.
    Norm,
    /// `‖e‖²`
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Controller<T> {
    pub attribute: String,
    /// `[k + 1, h, ..., h, k]`
    pub layer_dims: Vec<usize>,
    /// One `out × in` matrix per layer.
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
    pub residual: bool,
}

impl<T: Real> Controller<T> {
    /// He-initialized hidden layers (ReLU) and a zero output layer, so a
    /// fresh residual controller is the identity map.
    pub fn new(attribute: &str, param_dim: usize, hidden: &[usize], residual: bool, seed: u64) -> Result<Self> {
        if param_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("controller layers must be non-empty"));
        }
        let mut layer_dims = vec![param_dim + 1];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(param_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layer_dims.len() - 2;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let m = if l == last {
                Matrix::zeros(fan_out, fan_in)
            } else {
                Matrix::from_fn(fan_out, fan_in, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    T::lit(g * std)
                })
            };
            weights.push(m);
            biases.push(vec![T::zero(); fan_out]);
        }
        Ok(Self {
            attribute: attribute.to_string(),
            layer_dims,
            weights,
            biases,
            residual,
        })
    }

    pub fn param_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    pub fn num_weights(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All weights and biases, layer by layer.
    pub fn params_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_weights());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w.as_slice());
            v.extend_from_slice(b);
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[T]) -> Result<()> {
        check_dim("controller parameters", self.num_weights(), flat.len())?;
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.weights.len() != self.layer_dims.len() - 1 {
            return Err(Error::invalid("inconsistent controller layer table"));
        }
        let k = self.param_dim();
        check_dim("controller input", k + 1, self.layer_dims[0])?;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            check_dim("layer rows", self.layer_dims[l + 1], w.rows())?;
            check_dim("layer cols", self.layer_dims[l], w.cols())?;
            check_dim("layer bias", self.layer_dims[l + 1], b.len())?;
        }
        if !all_finite(&self.params_flat()) {
            return Err(Error::NonFinite("controller weights".into()));
        }
        Ok(())
    }

    /// Raw network output `f(p, s)`.
    pub fn network(&self, p: &[T], s_trg: T) -> Result<Vec<T>> {
        check_dim("controller input p", self.param_dim(), p.len())?;
        if !all_finite(p) || !s_trg.is_finite() {
            return Err(Error::NonFinite("controller input".into()));
        }
        let mut x = p.to_vec();
        x.push(s_trg);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(&x);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += *bi;
                if l < last && *zi < T::zero() {
                    *zi = T::zero();
                }
            }
            x = z;
        }
        Ok(x)
    }

    /// `p + f(p, s)` in residual mode, `f(p, s)` otherwise.
    pub fn forward(&self, p: &[T], s_trg: T) -> Result<Vec<T>> {
        let mut out = self.network(p, s_trg)?;
        if self.residual {
            for (o, x) in out.iter_mut().zip(p) {
                *o += *x;
            }
        }
        Ok(out)
    }
}

/// One supervised example: transform `p_src` to score `s_trg`, expect `p_trg`.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a, T> {
    pub p_src: &'a [T],
    pub s_trg: T,
    pub p_trg: &'a [T],
}

impl<'a, T: Real> Example<'a, T> {
    /// `pos → neg` when `forward_pos` is set, `neg → pos` otherwise.
    pub fn from_pair(pair: &'a PairedSample<T>, forward_pos: bool) -> Self {
        if forward_pos {
            Self {
                p_src: &pair.p_pos,
                s_trg: pair.s_neg,
                p_trg: &pair.p_neg,
            }
        } else {
            Self {
                p_src: &pair.p_neg,
                s_trg: pair.s_pos,
                p_trg: &pair.p_pos,
            }
        }
    }
}

/// Batched forward/backward buffers.
struct Workspace<T> {
    /// Layer inputs; `acts[0]` is the network input, `acts[L]` the output.
    acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
}

impl<T: Real> Workspace<T> {
    fn new(dims: &[usize], batch: usize) -> Self {
        Self {
            acts: dims.iter().map(|d| vec![T::zero(); d * batch]).collect(),
            deltas: dims.iter().map(|d| vec![T::zero(); d * batch]).collect(),
        }
    }
}

/// Gradients with the same layout as the controller's parameters.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    fn zeros_like(ctrl: &Controller<T>) -> Self {
        Self {
            weights: ctrl.weights.iter().map(|w| vec![T::zero(); w.as_slice().len()]).collect(),
            biases: ctrl.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v
    }
}

fn batch_loss_grad<T: Real>(
    ctrl: &Controller<T>,
    batch: &[Example<'_, T>],
    kind: LossKind,
    ws: &mut Workspace<T>,
    grads: Option<&mut Gradients<T>>,
) -> T {
    let bsz = batch.len();
    let dims = &ctrl.layer_dims;
    let k = ctrl.param_dim();
    let n_layers = ctrl.weights.len();
    for (i, ex) in batch.iter().enumerate() {
        let row = &mut ws.acts[0][i * (k + 1)..(i + 1) * (k + 1)];
        row[..k].copy_from_slice(ex.p_src);
        row[k] = ex.s_trg;
    }
    for l in 0..n_layers {
        let (din, dout) = (dims[l], dims[l + 1]);
        let (head, tail) = ws.acts.split_at_mut(l + 1);
        let x = View::rm(&head[l][..bsz * din], bsz, din);
        let z = &mut tail[0][..bsz * dout];
        let w = View::rm(ctrl.weights[l].as_slice(), dout, din);
        gemm(T::one(), x, w.t(), T::zero(), z);
        let b = &ctrl.biases[l];
        let hidden = l + 1 < n_layers;
        for zi in z.chunks_exact_mut(dout) {
            for (v, bo) in zi.iter_mut().zip(b) {
                *v += *bo;
                if hidden && *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
    }

    // Output error e = p_trg − p̃ and dLoss/dOutput.
    let inv_b = T::one() / T::of_usize(bsz);
    let out = &ws.acts[n_layers];
    let d_out = &mut ws.deltas[n_layers];
    let mut total = T::zero();
    for (i, ex) in batch.iter().enumerate() {
        let o = &out[i * k..(i + 1) * k];
        let d = &mut d_out[i * k..(i + 1) * k];
        let mut sq = T::zero();
        for j in 0..k {
            let pred = if ctrl.residual { ex.p_src[j] + o[j] } else { o[j] };
            let e = ex.p_trg[j] - pred;
            d[j] = e;
            sq += e * e;
        }
        let (loss, scale) = match kind {
            LossKind::Norm => {
                let nrm = sq.sqrt();
                let s = if nrm > T::zero() { -inv_b / nrm } else { T::zero() };
                (nrm, s)
            }
            LossKind::Squared => (sq, -(inv_b + inv_b)),
        };
        total += loss;
        d.iter_mut().for_each(|x| *x *= scale);
    }
    let Some(grads) = grads else {
        return total * inv_b;
    };

    for l in (0..n_layers).rev() {
        let (din, dout) = (dims[l], dims[l + 1]);
        let (dhead, dtail) = ws.deltas.split_at_mut(l + 1);
        let dz = View::rm(&dtail[0][..bsz * dout], bsz, dout);
        let x = &ws.acts[l][..bsz * din];
        gemm(T::one(), dz.t(), View::rm(x, bsz, din), T::one(), &mut grads.weights[l]);
        for dzi in dz.data.chunks_exact(dout) {
            for (g, d) in grads.biases[l].iter_mut().zip(dzi) {
                *g += *d;
            }
        }
        if l > 0 {
            let dx = &mut dhead[l][..bsz * din];
            let w = View::rm(ctrl.weights[l].as_slice(), dout, din);
            gemm(T::one(), dz, w, T::zero(), dx);
            // ReLU mask: the stored activation is zero where the unit was off.
            for (d, a) in dx.iter_mut().zip(x) {
                if *a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
    }
    total * inv_b
}

/// Mean over the batch of `‖p_trg − p̃‖` (or its square).
pub fn loss<T: Real>(ctrl: &Controller<T>, batch: &[Example<'_, T>], kind: LossKind) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut ws = Workspace::new(&ctrl.layer_dims, batch.len());
    Ok(batch_loss_grad(ctrl, batch, kind, &mut ws, None))
}

/// Loss and its gradient with respect to every weight and bias.
pub fn loss_and_grad<T: Real>(ctrl: &Controller<T>, batch: &[Example<'_, T>], kind: LossKind) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut ws = Workspace::new(&ctrl.layer_dims, batch.len());
    let mut g = Gradients::zeros_like(ctrl);
    let l = batch_loss_grad(ctrl, batch, kind, &mut ws, Some(&mut g));
    Ok((l, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, applied as `w ← w − lr·wd·w`.
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub swap_probability: f64,
    pub loss: LossKind,
    /// Final learning rate as a fraction of the initial one; the rate
    /// follows a cosine from 1 to this value. `1.0` keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            hidden: 256,
            hidden_layers: 2,
            swap_probability: 0.5,
            loss: LossKind::Norm,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.hidden_layers == 0 {
            return Err(Error::invalid("epochs, batch size and hidden sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment decays must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.swap_probability) {
            return Err(Error::invalid("swap probability must lie in [0, 1]"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::invalid("final_lr_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        vec![self.hidden; self.hidden_layers]
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// Whether pair `id` runs `pos → neg` in `epoch` of a training run.
pub fn training_coin(seed: u64, epoch: usize, id: u64, swap_probability: f64) -> bool {
    unit_f64(mix3(seed, epoch as u64, id)) < swap_probability
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrainReport<T> {
    /// Mean training loss of every epoch (averaged over its minibatches).
    pub epoch_loss: Vec<T>,
}

/// Trains a fresh controller on paired samples.
///
/// Each epoch every pair flips a coin derived from `(seed, epoch, id)` to
/// pick its source side, and the visiting order is a sort on a key derived
/// from the same triple. Both only depend on sample identity, so permuting
/// the input leaves the trained weights unchanged.
pub fn train<T: Real>(
    pairs: &[PairedSample<T>],
    cfg: &TrainConfig,
    residual: bool,
) -> Result<(Controller<T>, TrainReport<T>)> {
    let first = pairs.first().ok_or_else(|| Error::invalid("empty training set"))?;
    let ctrl = Controller::new(&first.attribute, first.p_pos.len(), &cfg.hidden_dims(), residual, cfg.seed)?;
    train_from(ctrl, pairs, cfg)
}

/// Continues training `ctrl`.
pub fn train_from<T: Real>(
    mut ctrl: Controller<T>,
    pairs: &[PairedSample<T>],
    cfg: &TrainConfig,
) -> Result<(Controller<T>, TrainReport<T>)> {
    cfg.validate()?;
    ctrl.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let k = ctrl.param_dim();
    for p in pairs {
        if p.attribute != ctrl.attribute {
            return Err(Error::invalid(format!(
                "pair for `{}` in a `{}` training set",
                p.attribute, ctrl.attribute
            )));
        }
        check_dim("p_pos", k, p.p_pos.len())?;
        check_dim("p_neg", k, p.p_neg.len())?;
    }

    let n_params = ctrl.num_weights();
    let mut adam = Adam {
        m: vec![T::zero(); n_params],
        v: vec![T::zero(); n_params],
        t: 0,
    };
    let bs = cfg.batch_size.min(pairs.len());
    let mut ws = Workspace::new(&ctrl.layer_dims, bs);
    let mut grads = Gradients::zeros_like(&ctrl);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<(u64, u64, usize)> = Vec::with_capacity(pairs.len());
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let eps = T::lit(cfg.epsilon);

    for epoch in 0..cfg.epochs {
        order.clear();
        order.extend(
            pairs
                .iter()
                .enumerate()
                .map(|(i, p)| (mix3(cfg.seed ^ 0x5eed_0f_0bde, epoch as u64, p.id), p.id, i)),
        );
        order.sort_unstable();
        let examples: Vec<Example<'_, T>> = order
            .iter()
            .map(|&(_, id, i)| Example::from_pair(&pairs[i], training_coin(cfg.seed, epoch, id, cfg.swap_probability)))
            .collect();
        let lr = T::lit(cfg.lr_at(epoch));
        let decay = T::one() - lr * T::lit(cfg.weight_decay);
        let mut epoch_sum = T::zero();
        let mut batches = 0usize;
        for batch in examples.chunks(bs) {
            grads.clear();
            let l = batch_loss_grad(&ctrl, batch, cfg.loss, &mut ws, Some(&mut grads));
            if !l.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_sum += l;
            batches += 1;

            adam.t += 1;
            let c1 = T::one() - b1.powi(adam.t);
            let c2 = T::one() - b2.powi(adam.t);
            let step = lr * c2.sqrt() / c1;
            let mut off = 0;
            let params = ctrl
                .weights
                .iter_mut()
                .zip(ctrl.biases.iter_mut())
                .flat_map(|(w, b)| [w.as_mut_slice(), &mut b[..]]);
            let gs = grads.weights.iter().zip(&grads.biases).flat_map(|(w, b)| [&w[..], &b[..]]);
            for (ps, gsl) in params.zip(gs) {
                let m = &mut adam.m[off..off + ps.len()];
                let v = &mut adam.v[off..off + ps.len()];
                for j in 0..ps.len() {
                    let g = gsl[j];
                    m[j] = b1 * m[j] + (T::one() - b1) * g;
                    v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                    ps[j] = decay * ps[j] - step * m[j] / (v[j].sqrt() + eps);
                }
                off += ps.len();
            }
        }
        let mean = epoch_sum / T::of_usize(batches);
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(mean);
    }
    ctrl.validate().map_err(|_| Error::Diverged { epoch: cfg.epochs })?;
    Ok((ctrl, TrainReport { epoch_loss: history }))
}
