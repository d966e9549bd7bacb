//! Evaluation protocols: k-fold cross-validated L2 on paired data, and the
//! Mahalanobis distance of transformed parameters to a class population.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, GlobalDirection};
use crate::controller::{Controller, Example};
use crate::error::{check_dim, Error, Result};
use crate::latent::PairedSample;
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{all_finite, Real};
use crate::seeding::{mix3, unit_f64};

/// Anything that maps a source parameter vector to a target score.
pub trait Transform<T>: Sync {
    fn transform(&self, p_src: &[T], s_src: T, s_trg: T) -> Result<Vec<T>>;
}

impl<T: Real> Transform<T> for GlobalDirection<T> {
    fn transform(&self, p_src: &[T], s_src: T, s_trg: T) -> Result<Vec<T>> {
        baseline::apply(self, p_src, s_src, s_trg)
    }
}

impl<T: Real> Transform<T> for Controller<T> {
    fn transform(&self, p_src: &[T], _s_src: T, s_trg: T) -> Result<Vec<T>> {
        self.forward(p_src, s_trg)
    }
}

/// Returns the source unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl<T: Real> Transform<T> for Identity {
    fn transform(&self, p_src: &[T], _: T, _: T) -> Result<Vec<T>> {
        Ok(p_src.to_vec())
    }
}

/// Applies a label-fitted direction in label units, `p + (sign s_trg − sign s_src)·α·p̂`.
#[derive(Clone, Copy, Debug)]
pub struct LabelShift<'a, T>(pub &'a GlobalDirection<T>);

impl<T: Real> Transform<T> for LabelShift<'_, T> {
    fn transform(&self, p_src: &[T], s_src: T, s_trg: T) -> Result<Vec<T>> {
        let sign = |s: T| if s >= T::zero() { T::one() } else { -T::one() };
        baseline::apply(self.0, p_src, sign(s_src), sign(s_trg))
    }
}

const EVAL_STREAM: u64 = 0xe7a1;

/// Evaluation direction of pair `id`: `true` means `pos → neg`.
pub fn evaluation_coin(dataset_seed: u64, id: u64) -> bool {
    unit_f64(mix3(dataset_seed, EVAL_STREAM, id)) < 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    /// Seeds the fold shuffle.
    pub seed: u64,
    /// Seeds the per-pair evaluation direction.
    pub dataset_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            dataset_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub attribute: String,
    pub method: String,
    pub fold_l2: Vec<f64>,
    pub grand_mean: f64,
    /// `(train, test)` per fold.
    pub fold_sizes: Vec<(usize, usize)>,
    /// How each test pair picks its source side.
    pub direction: String,
}

/// Test-fold membership: `folds[f]` lists dataset positions.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if n == 0 || n % folds != 0 {
        return Err(Error::invalid(format!("{n} samples do not split into {folds} equal folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx.chunks(n / folds).map(<[usize]>::to_vec).collect())
}

/// Mean `‖p_trg − p̃‖` over pairs, directions fixed by [`evaluation_coin`].
pub fn mean_l2<T: Real, M: Transform<T> + ?Sized>(method: &M, pairs: &[PairedSample<T>], dataset_seed: u64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs"));
    }
    let mut total = 0.0;
    for pair in pairs {
        let pos_first = evaluation_coin(dataset_seed, pair.id);
        let (s_src, ex) = if pos_first {
            (pair.s_pos, Example::from_pair(pair, true))
        } else {
            (pair.s_neg, Example::from_pair(pair, false))
        };
        let out = method.transform(ex.p_src, s_src, ex.s_trg)?;
        check_dim("method output", ex.p_trg.len(), out.len())?;
        let sq: f64 = out.iter().zip(ex.p_trg).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum();
        total += sq.sqrt();
    }
    Ok(total / pairs.len() as f64)
}

/// k-fold cross-validated L2. `factory(train, fold)` builds the method for
/// one fold; folds run in parallel.
pub fn l2_cv<T, M, F>(pairs: &[PairedSample<T>], method_name: &str, factory: F, cfg: &CvConfig) -> Result<CvReport>
where
    T: Real,
    M: Transform<T>,
    F: Fn(&[PairedSample<T>], usize) -> Result<M> + Sync,
{
    let folds = fold_partition(pairs.len(), cfg.folds, cfg.seed)?;
    let attribute = pairs[0].attribute.clone();
    if let Some(p) = pairs.iter().find(|p| p.attribute != attribute) {
        return Err(Error::invalid(format!("mixed attributes `{attribute}` and `{}`", p.attribute)));
    }
    let results: Vec<Result<(f64, usize, usize)>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let mut in_test = vec![false; pairs.len()];
            test_idx.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<PairedSample<T>> = pairs
                .iter()
                .zip(&in_test)
                .filter(|(_, t)| !**t)
                .map(|(p, _)| p.clone())
                .collect();
            let test: Vec<PairedSample<T>> = test_idx.iter().map(|&i| pairs[i].clone()).collect();
            let wrap = |e: Error| Error::Fold { fold: f, source: Box::new(e) };
            let method = factory(&train, f).map_err(wrap)?;
            let l2 = mean_l2(&method, &test, cfg.dataset_seed).map_err(wrap)?;
            Ok((l2, train.len(), test.len()))
        })
        .collect();
    let mut fold_l2 = Vec::new();
    let mut fold_sizes = Vec::new();
    for r in results {
        let (l2, ntr, nte) = r?;
        fold_l2.push(l2);
        fold_sizes.push((ntr, nte));
    }
    let grand_mean = fold_l2.iter().sum::<f64>() / fold_l2.len() as f64;
    Ok(CvReport {
        attribute,
        method: method_name.to_string(),
        fold_l2,
        grand_mean,
        fold_sizes,
        direction: "mixed: per-pair seeded coin".to_string(),
    })
}

/// Mean, covariance and its regularized Cholesky factor.
#[derive(Clone, Debug)]
pub struct PopulationStats<T> {
    pub mean: Vec<T>,
    /// Unbiased sample covariance, without shrinkage.
    pub cov: Matrix<T>,
    pub epsilon: T,
    pub count: usize,
    factor: Cholesky<T>,
}

impl<T: Real> PopulationStats<T> {
    /// `S + εI`
    pub fn regularized(&self) -> Matrix<T> {
        let mut s = self.cov.clone();
        for i in 0..s.rows() {
            s[(i, i)] += self.epsilon;
        }
        s
    }
}

/// `1e-6 · trace(S) / k`, or `1e-6` for a degenerate population.
pub fn default_shrinkage<T: Real>(cov: &Matrix<T>) -> T {
    let avg = cov.trace() / T::of_usize(cov.rows());
    T::lit(1e-6) * if avg > T::zero() { avg } else { T::one() }
}

/// Two-pass mean and unbiased covariance. `epsilon = None` picks
/// [`default_shrinkage`]; `Some(0)` disables shrinkage.
pub fn population_stats<T: Real>(params: &[Vec<T>], epsilon: Option<T>) -> Result<PopulationStats<T>> {
    let n = params.len();
    if n < 2 {
        return Err(Error::invalid(format!("population needs at least 2 samples, got {n}")));
    }
    let k = params[0].len();
    for p in params {
        check_dim("population sample", k, p.len())?;
        if !all_finite(p) {
            return Err(Error::NonFinite("population sample".into()));
        }
    }
    let nf = T::of_usize(n);
    let mut mean = vec![T::zero(); k];
    for p in params {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += *x);
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut cov = Matrix::zeros(k, k);
    let mut c = vec![T::zero(); k];
    for p in params {
        c.iter_mut().zip(p.iter().zip(&mean)).for_each(|(ci, (x, m))| *ci = *x - *m);
        for i in 0..k {
            for j in 0..=i {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let denom = T::of_usize(n - 1);
    for i in 0..k {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let epsilon = epsilon.unwrap_or_else(|| default_shrinkage(&cov));
    if !(epsilon >= T::zero()) {
        return Err(Error::invalid("shrinkage epsilon must be non-negative"));
    }
    let mut stats = PopulationStats {
        mean,
        cov,
        epsilon,
        count: n,
        factor: Cholesky::factor(&Matrix::identity(1))?,
    };
    stats.factor = Cholesky::factor(&stats.regularized())?;
    Ok(stats)
}

/// `√((p − μ)ᵀ (S + εI)⁻¹ (p − μ))` via the Cholesky factor.
pub fn mahalanobis<T: Real>(p: &[T], stats: &PopulationStats<T>) -> Result<T> {
    check_dim("parameter vector", stats.mean.len(), p.len())?;
    if !all_finite(p) {
        return Err(Error::NonFinite("parameter vector".into()));
    }
    let diff: Vec<T> = p.iter().zip(&stats.mean).map(|(a, m)| *a - *m).collect();
    let y = stats.factor.solve_lower(&diff);
    Ok(y.iter().map(|v| *v * *v).sum::<T>().sqrt())
}

/// Class populations and held-out test sources from one reference draw.
#[derive(Clone, Debug)]
pub struct ReferenceSplit<T> {
    pub positive: PopulationStats<T>,
    pub negative: PopulationStats<T>,
    /// The reference part, kept for fitting label baselines.
    pub reference_params: Vec<Vec<T>>,
    pub reference_scores: Vec<T>,
    /// `(p, score)` of the held-out part.
    pub test: Vec<(Vec<T>, T)>,
}

/// Seeded split of `(params, scores)` into a reference part of
/// `1 − test_fraction` and a test part; the reference part is split by
/// the sign of the score into the two class populations.
pub fn split_reference<T: Real>(
    params: &[Vec<T>],
    scores: &[T],
    test_fraction: f64,
    seed: u64,
    epsilon: Option<T>,
) -> Result<ReferenceSplit<T>> {
    check_dim("reference scores", params.len(), scores.len())?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test fraction must lie in (0, 1)"));
    }
    let n = params.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test_idx, ref_idx) = idx.split_at(n_test);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in ref_idx {
        if scores[i] >= T::zero() {
            pos.push(params[i].clone());
        } else {
            neg.push(params[i].clone());
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("empty class population in the reference split"));
    }
    Ok(ReferenceSplit {
        positive: population_stats(&pos, epsilon)?,
        negative: population_stats(&neg, epsilon)?,
        reference_params: ref_idx.iter().map(|&i| params[i].clone()).collect(),
        reference_scores: ref_idx.iter().map(|&i| scores[i]).collect(),
        test: test_idx.iter().map(|&i| (params[i].clone(), scores[i])).collect(),
    })
}

/// Label-fitted direction on the reference part.
pub fn reference_baseline<T: Real>(attribute: &str, split: &ReferenceSplit<T>) -> Result<GlobalDirection<T>> {
    let k = split.positive.mean.len();
    let n = split.reference_params.len();
    let p = Matrix::from_fn(k, n, |r, c| split.reference_params[c][r]);
    let a: Vec<T> = split
        .reference_scores
        .iter()
        .map(|s| if *s >= T::zero() { T::one() } else { -T::one() })
        .collect();
    baseline::fit_direction(attribute, &p, &a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisReport {
    pub attribute: String,
    pub method: String,
    /// Positive sources moved to the negative class.
    pub forward: f64,
    pub backward: f64,
    /// Mean of `forward` and `backward`.
    pub mean: f64,
    pub n_forward: usize,
    pub n_backward: usize,
}

/// Moves every test source to the opposite class (`s_trg = −s_src`,
/// clamped to `±s_max`) and averages its distance to that class population,
/// separately per direction and then over both.
pub fn mahalanobis_protocol<T: Real, M: Transform<T> + ?Sized>(
    attribute: &str,
    method_name: &str,
    method: &M,
    split: &ReferenceSplit<T>,
    s_max: T,
) -> Result<MahalanobisReport> {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (p, s) in &split.test {
        let forward = *s >= T::zero();
        let s_trg = (-*s).max(-s_max).min(s_max);
        let out = method.transform(p, *s, s_trg)?;
        let pop = if forward { &split.negative } else { &split.positive };
        let slot = usize::from(!forward);
        sums[slot] += mahalanobis(&out, pop)?.as_f64();
        counts[slot] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::invalid("test split lacks one of the classes"));
    }
    let forward = sums[0] / counts[0] as f64;
    let backward = sums[1] / counts[1] as f64;
    Ok(MahalanobisReport {
        attribute: attribute.to_string(),
        method: method_name.to_string(),
        forward,
        backward,
        mean: 0.5 * (forward + backward),
        n_forward: counts[0],
        n_backward: counts[1],
    })
}
