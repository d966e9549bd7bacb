//! Global attribute direction: a rank-1 least-squares fit of centered
//! parameters against attribute scores, applied as a linear shift.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::PairedSample;
use crate::linalg::Matrix;
use crate::scalar::{all_finite, axpy, dot, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GlobalDirection<T> {
    pub attribute: String,
    pub p_hat: Vec<T>,
    /// Gain applied to `p_hat` per unit of score change.
    pub scale_alpha: T,
    /// Row mean of the training matrix.
    pub center: Vec<T>,
    pub train_seed: u64,
    pub train_size: usize,
}

/// What the baseline regresses parameters against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Signed semantic scores.
    Scores,
    /// `±1` class labels (the sign of the score).
    Labels,
}

/// `argmin ‖P_c − p̂ aᵀ‖_F²` for the row-centered `k×n` matrix `P_c`, in closed
/// form `p̂ = P_c a / (aᵀa)`.
pub fn fit_direction<T: Real>(attribute: &str, p: &Matrix<T>, a: &[T]) -> Result<GlobalDirection<T>> {
    let (k, n) = (p.rows(), p.cols());
    check_dim("labels", n, a.len())?;
    if n < 2 {
        return Err(Error::invalid("need at least two columns"));
    }
    if !all_finite(p.as_slice()) || !all_finite(a) {
        return Err(Error::NonFinite("direction training data".into()));
    }
    let aa = dot(a, a);
    if !(aa > T::zero()) {
        return Err(Error::invalid("label vector is all zeros"));
    }
    let nf = T::of_usize(n);
    let center: Vec<T> = (0..k).map(|r| p.row(r).iter().copied().sum::<T>() / nf).collect();
    // P_c a = P a − center·Σa
    let sum_a: T = a.iter().copied().sum();
    let p_hat = (0..k)
        .map(|r| (dot(p.row(r), a) - center[r] * sum_a) / aa)
        .collect();
    Ok(GlobalDirection {
        attribute: attribute.to_string(),
        p_hat,
        scale_alpha: T::one(),
        center,
        train_seed: 0,
        train_size: n,
    })
}

/// Fits a direction on the `2n` parameter vectors of paired samples.
pub fn fit_direction_from_pairs<T: Real>(pairs: &[PairedSample<T>], kind: ScoreKind) -> Result<GlobalDirection<T>> {
    let first = pairs.first().ok_or_else(|| Error::invalid("no training pairs"))?;
    let k = first.p_pos.len();
    let n = 2 * pairs.len();
    let mut p = Matrix::zeros(k, n);
    let mut a = Vec::with_capacity(n);
    for (i, s) in pairs.iter().enumerate() {
        check_dim("p_pos", k, s.p_pos.len())?;
        check_dim("p_neg", k, s.p_neg.len())?;
        for r in 0..k {
            p[(r, 2 * i)] = s.p_pos[r];
            p[(r, 2 * i + 1)] = s.p_neg[r];
        }
        match kind {
            ScoreKind::Scores => a.extend_from_slice(&[s.s_pos, s.s_neg]),
            ScoreKind::Labels => a.extend_from_slice(&[T::one(), -T::one()]),
        }
    }
    fit_direction(&first.attribute, &p, &a)
}

/// `p_src + (s_trg − s_src)·α·p̂`
pub fn apply<T: Real>(direction: &GlobalDirection<T>, p_src: &[T], s_src: T, s_trg: T) -> Result<Vec<T>> {
    check_dim("p_src", direction.p_hat.len(), p_src.len())?;
    let mut out = p_src.to_vec();
    axpy((s_trg - s_src) * direction.scale_alpha, &direction.p_hat, &mut out);
    Ok(out)
}

/// One source/target training pair for [`refit_scale`].
#[derive(Clone, Copy, Debug)]
pub struct ScalePair<'a, T> {
    pub p_src: &'a [T],
    pub s_src: T,
    pub p_trg: &'a [T],
    pub s_trg: T,
}

/// `α = argmin Σ ‖p_trg − p_src − α(s_trg − s_src)p̂‖²`
///
/// Closed form `α = Σ Δs·(p̂·Δp) / (‖p̂‖² Σ Δs²)`.
pub fn refit_scale<T: Real>(direction: &GlobalDirection<T>, pairs: &[ScalePair<'_, T>]) -> Result<GlobalDirection<T>> {
    let k = direction.p_hat.len();
    let (mut num, mut den) = (T::zero(), T::zero());
    for pair in pairs {
        check_dim("p_src", k, pair.p_src.len())?;
        check_dim("p_trg", k, pair.p_trg.len())?;
        let ds = pair.s_trg - pair.s_src;
        let proj: T = direction
            .p_hat
            .iter()
            .zip(pair.p_trg.iter().zip(pair.p_src))
            .map(|(h, (t, s))| *h * (*t - *s))
            .sum();
        num += ds * proj;
        den += ds * ds;
    }
    let hh = dot(&direction.p_hat, &direction.p_hat);
    if !(den > T::zero()) {
        return Err(Error::invalid("every score delta is zero"));
    }
    if !(hh > T::zero()) {
        return Err(Error::invalid("direction is the zero vector"));
    }
    let mut out = direction.clone();
    out.scale_alpha = num / (den * hh);
    Ok(out)
}

/// Both transfer directions of every pair: `(pos → neg)` and `(neg → pos)`.
pub fn scale_pairs<T: Real>(pairs: &[PairedSample<T>]) -> Vec<ScalePair<'_, T>> {
    pairs
        .iter()
        .flat_map(|s| {
            [
                ScalePair {
                    p_src: &s.p_pos[..],
                    s_src: s.s_pos,
                    p_trg: &s.p_neg[..],
                    s_trg: s.s_neg,
                },
                ScalePair {
                    p_src: &s.p_neg[..],
                    s_src: s.s_neg,
                    p_trg: &s.p_pos[..],
                    s_trg: s.s_pos,
                },
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_direction() {
        let p = Matrix::from_row_major(2, 2, vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let d = fit_direction("a", &p, &[1.0, -1.0]).unwrap();
        assert_eq!(d.p_hat, vec![1.0, 2.0]);
        assert_eq!(d.center, vec![0.0, 0.0]);
    }

    #[test]
    fn exact_rank_one_recovered() {
        let truth = [0.5f64, -1.5, 2.0];
        let a = [1.0, -2.0, 0.5, 0.5];
        // a is centered, so P = truth·aᵀ is already row-centered.
        let p = Matrix::from_fn(3, 4, |r, c| truth[r] * a[c]);
        let d = fit_direction("a", &p, &a).unwrap();
        for (x, y) in d.p_hat.iter().zip(truth) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let p = Matrix::from_row_major(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(fit_direction("a", &p, &[0.0, 0.0]).is_err());
        assert!(fit_direction("a", &p, &[1.0, f64::NAN]).is_err());
        assert!(fit_direction("a", &p, &[1.0]).is_err());
    }

    #[test]
    fn apply_is_affine_in_score() {
        let d = GlobalDirection {
            attribute: "a".into(),
            p_hat: vec![1.0f64, -2.0],
            scale_alpha: 0.5,
            center: vec![0.0; 2],
            train_seed: 0,
            train_size: 2,
        };
        let p = [3.0, 4.0];
        assert_eq!(apply(&d, &p, 0.7, 0.7).unwrap(), p.to_vec());
        let one = apply(&d, &p, 0.0, 1.5).unwrap();
        let two = apply(&d, &p, 0.0, 3.0).unwrap();
        for k in 0..2 {
            assert!((two[k] - one[k] - 1.5 * 0.5 * d.p_hat[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn refit_recovers_exact_gain() {
        let d = GlobalDirection {
            attribute: "a".into(),
            p_hat: vec![1.0, 2.0, -1.0],
            scale_alpha: 1.0,
            center: vec![0.0; 3],
            train_seed: 0,
            train_size: 2,
        };
        let srcs = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let deltas = [1.5, -0.7];
        let trgs: Vec<Vec<f64>> = srcs
            .iter()
            .zip(deltas)
            .map(|(s, ds)| s.iter().zip(&d.p_hat).map(|(x, h)| x + 3.0 * ds * h).collect())
            .collect();
        let pairs: Vec<ScalePair<f64>> = (0..2)
            .map(|i| ScalePair {
                p_src: &srcs[i],
                s_src: 0.2,
                p_trg: &trgs[i],
                s_trg: 0.2 + deltas[i],
            })
            .collect();
        let fitted = refit_scale(&d, &pairs).unwrap();
        assert!((fitted.scale_alpha - 3.0).abs() < 1e-10);
        let same = [ScalePair { p_src: &srcs[0][..], s_src: 1.0, p_trg: &trgs[0][..], s_trg: 1.0 }];
        assert!(refit_scale(&d, &same).is_err());
    }

    #[test]
    fn single_pair_interpolates_projection() {
        let d = GlobalDirection {
            attribute: "a".into(),
            p_hat: vec![0.6f64, 0.8],
            scale_alpha: 1.0,
            center: vec![0.0; 2],
            train_seed: 0,
            train_size: 2,
        };
        let (src, trg) = ([0.0, 0.0], [2.0, 1.0]);
        let pair = [ScalePair { p_src: &src[..], s_src: -1.0, p_trg: &trg[..], s_trg: 1.0 }];
        let fitted = refit_scale(&d, &pair).unwrap();
        let out = apply(&fitted, &src, -1.0, 1.0).unwrap();
        // projection of (2,1) onto (0.6,0.8) is 2.0·(0.6,0.8)
        assert!((out[0] - 1.2).abs() < 1e-12 && (out[1] - 1.6).abs() < 1e-12);
    }
}
