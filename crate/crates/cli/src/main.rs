use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use m3dm::config::RunConfig;
use m3dm::dataio::{self, GenerationMode, Payload, ReferenceContainer, ReportFile};
use m3dm::latent::AttributeHyperplane;
use m3dm::pipeline::{self, MethodKind};
use m3dm::{controller, Error, LatentWorld64, MorphableBasis64, Result};

const WORLD_FILE: &str = "world.json";
const BASIS_FILE: &str = "basis.json";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "m3dm", version, about = "Attribute control for 3D morphable face models")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Latent world and model basis.
    #[command(subcommand)]
    World(WorldCmd),
    /// Attribute hyperplanes.
    #[command(subcommand)]
    Hyperplane(HyperplaneCmd),
    /// Paired and reference datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Global direction baseline.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Conditional controller.
    #[command(subcommand)]
    Controller(ControllerCmd),
    /// Apply trained weights to a parameter vector.
    Transform(TransformArgs),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// OBJ meshes.
    #[command(subcommand)]
    Export(ExportCmd),
}

#[derive(Subcommand)]
enum WorldCmd {
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum HyperplaneCmd {
    Fit {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        attr: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Generate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, required_unless_present = "all_attrs")]
        attr: Option<String>,
        /// One dataset per attribute, written to `<out>/<attr>`.
        #[arg(long, conflicts_with = "attr")]
        all_attrs: bool,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        mode: Option<GenerationMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Hyperplane weights; fitted from labeled samples when absent.
        #[arg(long, conflicts_with = "all_attrs")]
        hyperplane: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Reference {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BaselineCmd {
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ControllerCmd {
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train `p̃ = f(p, s)` instead of `p̃ = p + f(p, s)`.
        #[arg(long)]
        no_residual: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Whitespace-separated parameter vector.
    #[arg(long = "in")]
    input: PathBuf,
    /// Target score.
    #[arg(long, allow_hyphen_values = true)]
    score: f64,
    /// Source score, used by direction weights.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    src_score: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalCommon {
    /// Dataset directories, comma separated, one per attribute.
    #[arg(long, value_delimiter = ',', required = true)]
    dataset: Vec<PathBuf>,
    #[arg(long, default_value = "baseline,ours-nores,ours")]
    methods: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report prefix; `.tsv` and `.json` are appended.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    L2cv {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    Mahalanobis {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long)]
        reference: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExportCmd {
    /// One mesh per score of a trained controller.
    Sweep {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma separated; default −2.0 to 2.0 in steps of 0.5.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        scores: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mesh of a single parameter vector.
    Mesh {
        #[arg(long)]
        world: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

struct World {
    config: RunConfig,
    world: LatentWorld64,
    basis: MorphableBasis64,
}

fn load_world(dir: &Path) -> Result<World> {
    Ok(World {
        config: RunConfig::load(&dir.join(CONFIG_FILE))?,
        world: dataio::read_json(&dir.join(WORLD_FILE))?,
        basis: dataio::read_json(&dir.join(BASIS_FILE))?,
    })
}

fn read_params(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                reason: format!("`{t}` is not a number"),
            })
        })
        .collect()
}

fn write_params(path: &Path, p: &[f64]) -> Result<()> {
    let mut text: String = p.iter().map(|x| format!("{x:?}\n")).collect();
    if text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn hyperplane_from(world: &World, attr: &str, n: Option<usize>, seed: Option<u64>) -> Result<AttributeHyperplane<f64>> {
    let cfg = &world.config;
    let h = pipeline::fit_attribute_hyperplane(
        &world.world,
        attr,
        n.unwrap_or(cfg.hyperplane_samples),
        seed.unwrap_or(cfg.hyperplane_seed),
        cfg,
    )?;
    let truth = world.world.attribute(attr)?;
    log::info!(
        "hyperplane `{attr}`: train accuracy {:.4}, {:.2}° from the true normal",
        h.train_accuracy,
        h.angle_to_deg(&truth.u_true)
    );
    Ok(h)
}

fn report<R>(cfg: &RunConfig, kind: &str, notes: Vec<String>, rows: Vec<R>) -> ReportFile<R> {
    ReportFile {
        kind: kind.into(),
        config_fingerprint: cfg.fingerprint(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        notes,
        rows,
    }
}

macro_rules! emit {
    ($out:expr, $table:expr, $report:expr) => {{
        print!("{}", $table);
        if let Some(prefix) = $out {
            let (tsv, json) = dataio::write_report(prefix, &$table, &$report)?;
            log::info!("wrote {} and {}", tsv.display(), json.display());
        }
    }};
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::World(WorldCmd::Init { config, out }) => {
            let cfg = load_config(config.as_deref())?;
            let world: LatentWorld64 = pipeline::build_world(&cfg)?;
            let basis: MorphableBasis64 = pipeline::build_basis(&cfg)?;
            dataio::write_json(&out.join(WORLD_FILE), &world)?;
            dataio::write_json(&out.join(BASIS_FILE), &basis)?;
            std::fs::write(out.join(CONFIG_FILE), cfg.to_text()).map_err(|e| Error::Io {
                path: out.join(CONFIG_FILE),
                source: e,
            })?;
            log::info!("world with {} attributes in {}", world.attributes.len(), out.display());
        }
        Command::Hyperplane(HyperplaneCmd::Fit { world, attr, n, seed, out }) => {
            let w = load_world(&world)?;
            let h = hyperplane_from(&w, &attr, n, seed)?;
            dataio::save_weights(&out, &Payload::Hyperplane(h))?;
        }
        Command::Dataset(DatasetCmd::Generate {
            world,
            attr,
            all_attrs,
            n,
            mode,
            seed,
            hyperplane,
            out,
        }) => {
            let w = load_world(&world)?;
            let cfg = &w.config;
            let n = n.unwrap_or(cfg.dataset_size);
            let mode = mode.unwrap_or(cfg.dataset_mode);
            let seed = seed.unwrap_or(cfg.dataset_seed);
            let targets: Vec<(String, PathBuf)> = if all_attrs {
                w.world.attributes.iter().map(|a| (a.name.clone(), out.join(&a.name))).collect()
            } else {
                vec![(attr.expect("clap enforces --attr"), out.clone())]
            };
            for (name, dir) in targets {
                let h = match &hyperplane {
                    Some(path) => match dataio::load_weights::<f64>(path)? {
                        Payload::Hyperplane(h) if h.attribute == name => h,
                        Payload::Hyperplane(h) => {
                            return Err(Error::InvalidArgument(format!(
                                "hyperplane is for `{}`, not `{name}`",
                                h.attribute
                            )))
                        }
                        other => {
                            return Err(Error::InvalidArgument(format!(
                                "{} holds a {:?}, not a hyperplane",
                                path.display(),
                                other.kind()
                            )))
                        }
                    },
                    None => hyperplane_from(&w, &name, None, None)?,
                };
                let data = pipeline::generate_dataset(&w.world, &w.basis, &h, n, seed, mode, cfg)?;
                dataio::save_dataset(&dir, &data)?;
                log::info!("{n} `{name}` pairs in {}", dir.display());
            }
        }
        Command::Dataset(DatasetCmd::Reference { world, n, seed, out }) => {
            let w = load_world(&world)?;
            let seed = seed.unwrap_or(w.config.reference_seed);
            let draws = w.world.marginal_draws(n.unwrap_or(w.config.reference_size), seed)?;
            let (latents, params) = draws.into_iter().unzip();
            dataio::save_reference(&out, &ReferenceContainer { seed, latents, params })?;
        }
        Command::Baseline(BaselineCmd::Fit { dataset, out }) => {
            let data = dataio::load_dataset::<f64>(&dataset)?;
            let dir = pipeline::train_baseline(&data.pairs, data.manifest.seed)?;
            log::info!("baseline `{}`: scale {:.6}", dir.attribute, dir.scale_alpha);
            dataio::save_weights(&out, &Payload::Direction(dir))?;
        }
        Command::Controller(ControllerCmd::Train {
            dataset,
            out,
            no_residual,
            config,
        }) => {
            let cfg = load_config(config.as_deref())?;
            let data = dataio::load_dataset::<f64>(&dataset)?;
            let (c, report) = controller::train(&data.pairs, &cfg.train, !no_residual)?;
            if let (Some(first), Some(last)) = (report.epoch_loss.first(), report.epoch_loss.last()) {
                log::info!("controller `{}`: loss {first:.5} → {last:.5}", c.attribute);
            }
            dataio::save_weights(&out, &Payload::Controller(c))?;
        }
        Command::Transform(a) => {
            let p = read_params(&a.input)?;
            let out = match dataio::load_weights::<f64>(&a.weights)? {
                Payload::Controller(c) => c.forward(&p, a.score)?,
                Payload::Direction(d) => m3dm::baseline::apply(&d, &p, a.src_score, a.score)?,
                Payload::Hyperplane(_) => {
                    return Err(Error::InvalidArgument("hyperplane weights cannot transform parameters".into()))
                }
            };
            write_params(&a.out, &out)?;
        }
        Command::Eval(EvalCmd::L2cv { common, folds, seed }) => {
            let mut cfg = load_config(common.config.as_deref())?;
            let methods = MethodKind::parse_list(&common.methods)?;
            cfg.eval_folds = folds.unwrap_or(cfg.eval_folds);
            cfg.eval_seed = seed.unwrap_or(cfg.eval_seed);
            let (folds, seed) = (cfg.eval_folds, cfg.eval_seed);
            let mut rows = Vec::new();
            for dir in &common.dataset {
                let data = dataio::load_dataset::<f64>(dir)?;
                rows.extend(pipeline::l2cv_methods(&data.pairs, data.manifest.seed, &methods, &cfg.train, folds, seed)?);
            }
            let table = dataio::l2_table(&rows);
            let notes = vec![
                format!("{folds} folds, fold seed {seed}"),
                "test direction per pair from a coin seeded by (dataset seed, pair id)".into(),
            ];
            emit!(common.out.as_deref(), table, report(&cfg, "l2cv", notes, rows));
        }
        Command::Eval(EvalCmd::Mahalanobis { common, reference }) => {
            let cfg = load_config(common.config.as_deref())?;
            let methods = MethodKind::parse_list(&common.methods)?;
            let refs = dataio::load_reference::<f64>(&reference)?;
            let mut rows = Vec::new();
            for dir in &common.dataset {
                let data = dataio::load_dataset::<f64>(dir)?;
                let h = data.manifest.hyperplane.to_hyperplane::<f64>(&data.manifest.attribute);
                let split = pipeline::reference_split(&refs.latents, &refs.params, &h, &cfg)?;
                let s_max = data.manifest.s_max()?;
                rows.extend(pipeline::mahalanobis_methods(&data.pairs, &split, s_max, &methods, &cfg.train)?);
            }
            let table = dataio::mahalanobis_table(&rows);
            let notes = vec![
                "synthetic reference".into(),
                format!("{:.0}% of the reference held out as test sources", 100.0 * cfg.test_fraction),
            ];
            emit!(common.out.as_deref(), table, report(&cfg, "mahalanobis", notes, rows));
        }
        Command::Export(ExportCmd::Sweep {
            weights,
            world,
            input,
            scores,
            out,
        }) => {
            let w = load_world(&world)?;
            let c = match dataio::load_weights::<f64>(&weights)? {
                Payload::Controller(c) => c,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "sweeps need controller weights, got {:?}",
                        other.kind()
                    )))
                }
            };
            let p = read_params(&input)?;
            let scores = scores.unwrap_or_else(dataio::default_sweep_scores);
            let files = dataio::export_score_sweep(&c, &p, &scores, &w.basis, &out)?;
            log::info!("{} meshes in {}", files.len(), out.display());
        }
        Command::Export(ExportCmd::Mesh { world, input, out }) => {
            let w = load_world(&world)?;
            dataio::export_params_obj(&w.basis, &read_params(&input)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("M3DM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
