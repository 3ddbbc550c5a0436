//! Command-line surface. `main.rs` only parses arguments and maps
//! [`Failure`] to an exit status.
//!
//! Settings resolve in this order, later wins: built-in defaults, the
//! `DBRN_SEED` environment variable (episode seed only), the `--config`
//! file, then explicit flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{augmented_prototype, Resolution};
use crate::config::RunConfig;
use crate::dataset::{generate_toy_dataset, Dataset, Item};
use crate::episodes::{ablation_run, evaluate, unit_logit_episodes, Execution};
use crate::error::Error;
use crate::extractor::Extractor;
use crate::features_io::{labels_path, save_features, save_labels};
use crate::head::{compute_prototype, fit_tau, rectify_weights};
use crate::heatmap::render_weight_heatmap;
use crate::image::{read_pnm, resize_image};
use crate::report::{render_reports, render_tau_fit};

pub const SEED_ENV: &str = "DBRN_SEED";

#[derive(Debug, Parser)]
#[command(name = "dbrn", version, about = "Few-shot classification with rectified local-descriptor prototypes")]
pub struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic shape dataset as a directory of PGM images.
    GenData(GenDataArgs),
    /// Extract base-resolution feature maps into a DBRNFT01 file plus labels sidecar.
    Extract(ExtractArgs),
    /// Episodic evaluation of one head configuration.
    Eval(RunArgs),
    /// Paired four-row component ablation.
    Ablate(RunArgs),
    /// Fit the temperature by gradient descent on episode cross-entropy.
    FitTau(FitTauArgs),
    /// Render rectify weights of a query against a support prototype as a PGM.
    Heatmap(HeatmapArgs),
    /// Print the effective configuration in config-file format.
    ShowConfig(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Image directory; the synthetic dataset when omitted.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub extractor_seed: Option<u64>,
    /// Resolution images are resized to before extraction (`N` or `WxH`).
    #[arg(long)]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Image directory or DBRNFT01 feature file; the synthetic dataset when omitted.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub no_weight: bool,
    #[arg(long)]
    pub no_pow: bool,
    #[arg(long)]
    pub no_protoaug: bool,
    #[arg(long)]
    pub multiscale_queries: bool,
    /// Comma-separated resolutions, base first (e.g. `84,92,108`).
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<Resolution>>,
    #[arg(long)]
    pub extractor_seed: Option<u64>,
    #[arg(long)]
    pub toy_classes: Option<usize>,
    #[arg(long)]
    pub toy_samples: Option<usize>,
    #[arg(long)]
    pub toy_seed: Option<u64>,
    /// Run every pass on the calling thread.
    #[arg(long)]
    pub sequential: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitTauArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Query image (PGM/PPM).
    #[arg(long)]
    pub query: PathBuf,
    /// Support images of the reference class.
    #[arg(long, required = true, num_args = 1..)]
    pub support: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub no_pow: bool,
    #[arg(long)]
    pub no_protoaug: bool,
    #[arg(long)]
    pub extractor_seed: Option<u64>,
}

/// Why a command failed: bad invocation (exit 2) or a runtime error (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn require_exists(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} does not exist", path.display())))
    }
}

/// Defaults, then `DBRN_SEED`, then the config file.
pub fn base_config(config_file: Option<&Path>, env_seed: Option<&str>) -> CmdResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(seed) = env_seed {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={seed:?} is not a u64")))?;
    }
    if let Some(path) = config_file {
        require_exists(path)?;
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    Ok(cfg)
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! take {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$target = v.clone(); })*
            };
        }
        take!(
            n_way => n_way,
            k_shot => k_shot,
            queries => q_queries,
            episodes => episodes,
            seed => seed,
            k => k,
            tau => tau,
            omega => omega,
            scales => scales,
            extractor_seed => extractor_seed,
            toy_classes => toy_classes,
            toy_samples => toy_samples,
            toy_seed => toy_seed,
        );
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        if self.no_weight {
            cfg.use_weight = false;
        }
        if self.no_pow {
            cfg.use_pow = false;
        }
        if self.no_protoaug {
            cfg.use_protoaug = false;
        }
        if self.multiscale_queries {
            cfg.multiscale_queries = true;
        }
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

fn load_dataset(cfg: &RunConfig) -> CmdResult<Dataset> {
    match &cfg.dataset {
        Some(path) => {
            require_exists(path)?;
            Ok(Dataset::load(path)?)
        }
        None => Ok(generate_toy_dataset(
            cfg.toy_seed,
            cfg.toy_classes,
            cfg.toy_samples,
            cfg.toy_resolution,
        )?),
    }
}

fn emit(text: &str, out: Option<&Path>) -> CmdResult<String> {
    if let Some(path) = out {
        fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(text.to_owned())
}

/// Runs a parsed command. Returns text meant for stdout.
pub fn run(cli: &Cli, env_seed: Option<&str>) -> CmdResult<String> {
    let mut cfg = base_config(cli.config.as_deref(), env_seed)?;
    match &cli.command {
        Command::GenData(a) => {
            let classes = a.classes.unwrap_or(cfg.toy_classes);
            let samples = a.samples.unwrap_or(cfg.toy_samples);
            let resolution = a.resolution.unwrap_or(cfg.toy_resolution);
            let seed = a.seed.unwrap_or(cfg.toy_seed);
            let data = generate_toy_dataset(seed, classes, samples, resolution)?;
            data.save_images(&a.out)?;
            Ok(format!(
                "wrote {} classes x {samples} images to {}\n",
                classes,
                a.out.display()
            ))
        }
        Command::Extract(a) => {
            if let Some(d) = &a.dataset {
                cfg.dataset = Some(d.clone());
            }
            if let Some(s) = a.extractor_seed {
                cfg.extractor_seed = s;
            }
            let data = load_dataset(&cfg)?;
            let res = a.resolution.unwrap_or(cfg.scales[0]);
            let ex_cfg = cfg.extractor();
            let mut maps = Vec::new();
            let mut labels = Vec::new();
            for class in &data.classes {
                for item in &class.items {
                    let Item::Image(img) = item else {
                        return Err(Failure::Usage("extract needs an image dataset".into()));
                    };
                    let ex = Extractor::new(&ex_cfg, img.channels())?;
                    maps.push(ex.extract(&resize_image(img, res.width, res.height)?)?);
                    labels.push(class.name.clone());
                }
            }
            save_features(&maps, &a.out)?;
            save_labels(&labels, labels_path(&a.out))?;
            Ok(format!("wrote {} feature maps to {}\n", maps.len(), a.out.display()))
        }
        Command::Eval(a) => {
            a.apply(&mut cfg);
            let data = load_dataset(&cfg)?;
            let report = evaluate(&data, &cfg.eval_settings()?, a.execution())?;
            emit(&render_reports("episodic evaluation", &[report]), cfg.output.as_deref())
        }
        Command::Ablate(a) => {
            a.apply(&mut cfg);
            let data = load_dataset(&cfg)?;
            let rows = ablation_run(&data, &cfg.eval_settings()?, a.execution())?;
            emit(
                &render_reports("component ablation (paired episodes)", &rows),
                cfg.output.as_deref(),
            )
        }
        Command::FitTau(a) => {
            a.run.apply(&mut cfg);
            if let Some(lr) = a.lr {
                cfg.learning_rate = lr;
            }
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            let data = load_dataset(&cfg)?;
            let settings = cfg.eval_settings()?;
            let episodes = unit_logit_episodes(&data, &settings, a.run.execution())?;
            let fit = fit_tau(&episodes, cfg.tau, cfg.learning_rate, cfg.steps)?;
            emit(&render_tau_fit(&fit, cfg.tau, cfg.learning_rate), cfg.output.as_deref())
        }
        Command::Heatmap(a) => {
            if let Some(o) = a.omega {
                cfg.omega = o;
            }
            if let Some(s) = a.extractor_seed {
                cfg.extractor_seed = s;
            }
            if a.no_pow {
                cfg.use_pow = false;
            }
            if a.no_protoaug {
                cfg.use_protoaug = false;
            }
            for p in std::iter::once(&a.query).chain(&a.support) {
                require_exists(p)?;
            }
            let query = read_pnm(&a.query)?;
            let support = a.support.iter().map(read_pnm).collect::<Result<Vec<_>, _>>()?;
            let settings = cfg.eval_settings()?;
            let base = settings.scales.base();
            let ex = Extractor::new(&settings.extractor, query.channels())?;
            let query_map = ex.extract(&resize_image(&query, base.width, base.height)?)?;
            let proto = if cfg.use_protoaug {
                augmented_prototype(&support, 0, &settings.scales, &settings.extractor)?
            } else {
                let ex = Extractor::new(&settings.extractor, support[0].channels())?;
                let maps = support
                    .iter()
                    .map(|img| ex.extract(&resize_image(img, base.width, base.height)?))
                    .collect::<Result<Vec<_>, _>>()?;
                compute_prototype(&maps, 0)?
            };
            let weights = rectify_weights(&query_map, &proto, cfg.omega, cfg.use_pow)?;
            render_weight_heatmap(&query, &weights, query_map.width(), query_map.height(), &a.out)?;
            let mut text = String::new();
            for row in weights.values().chunks(query_map.width()) {
                let cells: Vec<String> = row.iter().map(|w| format!("{w:.4}")).collect();
                text.push_str(&cells.join(" "));
                text.push('\n');
            }
            Ok(text)
        }
        Command::ShowConfig(a) => {
            a.apply(&mut cfg);
            cfg.eval_settings()?;
            Ok(cfg.to_text())
        }
    }
}
