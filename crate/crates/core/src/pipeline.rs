//! End-to-end stages shared by the command line tool and tests.

use std::str::FromStr;

use rayon::prelude::*;

use crate::baseline::{self, GlobalDirection, ScoreKind};
use crate::config::RunConfig;
use crate::controller::{self, Controller, TrainConfig};
use crate::dataio::{DatasetContainer, DatasetManifest, GenerationMode, METHOD_BASELINE, METHOD_NO_RESIDUAL, METHOD_RESIDUAL};
use crate::error::{Error, Result};
use crate::eval::{self, CvConfig, CvReport, LabelShift, MahalanobisReport, ReferenceSplit, Transform};
use crate::fitting::{self, CameraModel, FitConfig, FitTarget};
use crate::latent::{self, AttributeHyperplane, LatentWorld, PairedSample};
use crate::model::{synth_basis, FaceParams, MorphableBasis};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Baseline,
    OursNoResidual,
    Ours,
}

impl MethodKind {
    /// Row label in report tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Baseline => METHOD_BASELINE,
            MethodKind::OursNoResidual => METHOD_NO_RESIDUAL,
            MethodKind::Ours => METHOD_RESIDUAL,
        }
    }

    pub fn all() -> [MethodKind; 3] {
        [MethodKind::Baseline, MethodKind::OursNoResidual, MethodKind::Ours]
    }

    /// Parses a comma-separated list such as `baseline,ours-nores,ours`.
    pub fn parse_list(s: &str) -> Result<Vec<MethodKind>> {
        let v: Vec<MethodKind> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::parse).collect::<Result<_>>()?;
        if v.is_empty() {
            return Err(Error::invalid("empty method list"));
        }
        Ok(v)
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(MethodKind::Baseline),
            "ours-nores" => Ok(MethodKind::OursNoResidual),
            "ours" => Ok(MethodKind::Ours),
            _ => Err(Error::invalid(format!("unknown method `{s}` (baseline|ours-nores|ours)"))),
        }
    }
}

/// A trained method of either family.
#[derive(Clone, Debug)]
pub enum Trained<T> {
    Direction(GlobalDirection<T>),
    Controller(Controller<T>),
}

impl<T: Real> Transform<T> for Trained<T> {
    fn transform(&self, p_src: &[T], s_src: T, s_trg: T) -> Result<Vec<T>> {
        match self {
            Trained::Direction(d) => d.transform(p_src, s_src, s_trg),
            Trained::Controller(c) => c.transform(p_src, s_src, s_trg),
        }
    }
}

pub fn build_world<T: Real>(cfg: &RunConfig) -> Result<LatentWorld<T>> {
    LatentWorld::new(&cfg.world)
}

pub fn build_basis<T: Real>(cfg: &RunConfig) -> Result<MorphableBasis<T>> {
    let d = cfg.param_dims;
    synth_basis(cfg.basis_seed, cfg.basis_vertices, d.k_id, d.k_expr, d.k_tex)
}

/// SVM on oracle-labeled Gaussian latents.
pub fn fit_attribute_hyperplane<T: Real>(
    world: &LatentWorld<T>,
    attribute: &str,
    n: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<AttributeHyperplane<T>> {
    let samples = world.labeled_latents(attribute, n, seed)?;
    latent::fit_hyperplane(attribute, &samples, &cfg.svm)
}

/// Score-regressed direction with its gain refit on both transfer
/// directions of every training pair.
pub fn train_baseline<T: Real>(pairs: &[PairedSample<T>], seed: u64) -> Result<GlobalDirection<T>> {
    let dir = baseline::fit_direction_from_pairs(pairs, ScoreKind::Scores)?;
    let mut dir = baseline::refit_scale(&dir, &baseline::scale_pairs(pairs))?;
    dir.train_seed = seed;
    dir.train_size = pairs.len();
    Ok(dir)
}

pub fn train_method<T: Real>(kind: MethodKind, pairs: &[PairedSample<T>], train: &TrainConfig) -> Result<Trained<T>> {
    Ok(match kind {
        MethodKind::Baseline => Trained::Direction(train_baseline(pairs, train.seed)?),
        MethodKind::Ours => Trained::Controller(controller::train(pairs, train, true)?.0),
        MethodKind::OursNoResidual => Trained::Controller(controller::train(pairs, train, false)?.0),
    })
}

/// Cross-validated L2 of each method on one dataset.
pub fn l2cv_methods<T: Real>(
    pairs: &[PairedSample<T>],
    dataset_seed: u64,
    methods: &[MethodKind],
    train: &TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<Vec<CvReport>> {
    let cv = CvConfig {
        folds,
        seed,
        dataset_seed,
    };
    methods
        .iter()
        .map(|&m| eval::l2_cv(pairs, m.label(), |tr, _| train_method(m, tr, train), &cv))
        .collect()
}

/// Reference split with scores measured against `h`.
pub fn reference_split<T: Real>(
    latents: &[Vec<T>],
    params: &[Vec<T>],
    h: &AttributeHyperplane<T>,
    cfg: &RunConfig,
) -> Result<ReferenceSplit<T>> {
    let scores: Vec<T> = latents.iter().map(|w| latent::semantic_score(w, h)).collect();
    eval::split_reference(params, &scores, cfg.test_fraction, cfg.reference_seed, cfg.shrinkage.map(T::lit))
}

/// Mahalanobis protocol for each method: the baseline is fit on the
/// reference split with labels, controllers train on every pair.
pub fn mahalanobis_methods<T: Real>(
    pairs: &[PairedSample<T>],
    split: &ReferenceSplit<T>,
    s_max: T,
    methods: &[MethodKind],
    train: &TrainConfig,
) -> Result<Vec<MahalanobisReport>> {
    let attribute = &pairs.first().ok_or_else(|| Error::invalid("empty dataset"))?.attribute;
    methods
        .iter()
        .map(|&m| match m {
            MethodKind::Baseline => {
                let dir = eval::reference_baseline(attribute, split)?;
                eval::mahalanobis_protocol(attribute, m.label(), &LabelShift(&dir), split, s_max)
            }
            _ => {
                let trained = train_method(m, pairs, train)?;
                eval::mahalanobis_protocol(attribute, m.label(), &trained, split, s_max)
            }
        })
        .collect()
}

/// Re-estimates a flat parameter vector by rendering it and fitting the
/// rendering back from the mean face.
pub fn refit_params<T: Real>(
    flat: &[T],
    basis: &MorphableBasis<T>,
    camera: &CameraModel<T>,
    fit_cfg: &FitConfig<T>,
) -> Result<Vec<T>> {
    let truth = FaceParams::from_flat(flat, basis.dims())?;
    let target = FitTarget::render(&truth, basis, camera, true)?;
    let init = FaceParams::zeros(basis.dims());
    let r = fitting::fit(&target, basis, camera, &init, fit_cfg)?;
    Ok(r.params.flat())
}

/// Fitting setup used for fitted datasets.
pub fn dataset_fit_config<T: Real>(cfg: &RunConfig) -> FitConfig<T> {
    FitConfig {
        lambda_reg: T::lit(cfg.fit_lambda_reg),
        max_iters: cfg.fit_max_iters,
        ..FitConfig::default()
    }
}

/// Draws a paired dataset; in fitted mode both sides of every pair are
/// replaced by their render-and-fit estimates.
pub fn generate_dataset<T: Real>(
    world: &LatentWorld<T>,
    basis: &MorphableBasis<T>,
    h: &AttributeHyperplane<T>,
    n: usize,
    seed: u64,
    mode: GenerationMode,
    cfg: &RunConfig,
) -> Result<DatasetContainer<T>> {
    if basis.dims().flat() != world.param_dim() {
        return Err(Error::Dimension {
            name: "basis parameters",
            expected: world.param_dim(),
            actual: basis.dims().flat(),
        });
    }
    let mut pairs = latent::generate_pairs(world, h, &h.attribute, n, seed)?;
    if mode == GenerationMode::Fitted {
        let camera = CameraModel::default();
        let fit_cfg = dataset_fit_config(cfg);
        pairs.par_iter_mut().try_for_each(|p| -> Result<()> {
            p.p_pos = refit_params(&p.p_pos, basis, &camera, &fit_cfg)?;
            p.p_neg = refit_params(&p.p_neg, basis, &camera, &fit_cfg)?;
            Ok(())
        })?;
    }
    Ok(DatasetContainer {
        manifest: DatasetManifest::describe(world, h, basis.dims(), seed, n, mode),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        assert_eq!(MethodKind::parse_list("baseline, ours-nores,ours").unwrap(), MethodKind::all().to_vec());
        assert!(MethodKind::parse_list("ours,magic").is_err());
        assert!(MethodKind::parse_list("").is_err());
        assert_eq!(MethodKind::OursNoResidual.label(), "Ours w.o.res");
    }

    #[test]
    fn fitted_dataset_stays_close_to_direct() {
        let cfg = RunConfig {
            basis_vertices: 162,
            ..RunConfig::default()
        };
        let world: LatentWorld<f64> = build_world(&cfg).unwrap();
        let basis: MorphableBasis<f64> = build_basis(&cfg).unwrap();
        let h = AttributeHyperplane::from_truth(&world.attributes[0]);
        let direct = generate_dataset(&world, &basis, &h, 3, 4, GenerationMode::Direct, &cfg).unwrap();
        let fitted = generate_dataset(&world, &basis, &h, 3, 4, GenerationMode::Fitted, &cfg).unwrap();
        assert_eq!(fitted.manifest.mode, GenerationMode::Fitted);
        let k_shape = basis.dims().k_id + basis.dims().k_expr;
        for (a, b) in direct.pairs.iter().zip(&fitted.pairs) {
            assert_eq!(a.w_proj, b.w_proj);
            assert!(b.p_pos.iter().chain(&b.p_neg).all(|x| x.is_finite()));
            // Texture can saturate in the rendering; shape cannot.
            let num: f64 = a.p_pos[..k_shape].iter().zip(&b.p_pos).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let den: f64 = a.p_pos[..k_shape].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(num / den < 1e-3, "relative shape refit error {}", num / den);
        }
    }
}
