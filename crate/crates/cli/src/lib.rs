//! `midis`: data generation, training, evaluation and reports.
//!
//! Every command reads the flat `key=value` configuration (defaults, then
//! `--config FILE`, then `--key value` flags), writes its outputs under
//! `out_dir` and records a `manifest-<command>.json` next to them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use mi_disentangle::autodiff::gradcheck;
use mi_disentangle::checkpoint::load_checkpoint;
use mi_disentangle::config::{RunConfig, CONFIG_KEYS};
use mi_disentangle::data::{read_dataset, write_dataset, DataConfig, PairDataset};
use mi_disentangle::evaluation::{
    ablation_csv, ablation_suite, evaluate_model, lambda_sweep, mi_distance_map, representations, retrieve,
    sweep_csv, EvalOptions, ProbeConfig, Variant, DEFAULT_LAMBDAS,
};
use mi_disentangle::model::{ModelBundle, Stage};
use mi_disentangle::trainer::{
    new_bundle, train_exclusive, train_shared, Domain, Representation, RunOutput, STAGE1_CHECKPOINT,
};
use mi_disentangle::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const TRAIN_DATA: &str = "train.mipd";
pub const EVAL_DATA: &str = "eval.mipd";

macro_rules! overrides {
    ($($key:ident),* $(,)?) => {
        /// Per-key overrides of the run configuration.
        #[derive(Args, Clone, Debug, Default)]
        pub struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE",
                      help = concat!("Override config key `", stringify!($key), "`"))]
                $key: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$key {
                        v.push((stringify!($key), x.as_str()));
                    }
                )*
                v
            }
        }
    };
}

overrides!(
    dataset,
    n_pairs,
    batch_size,
    lr,
    steps_shared,
    steps_exclusive,
    shared_dim,
    exclusive_dim,
    alpha_sh,
    beta_sh,
    gamma,
    alpha_ex,
    beta_ex,
    lambda_adv,
    seed,
    weight_sharing,
    non_ssr,
    out_dir,
);

#[derive(Parser, Debug)]
#[command(name = "midis", version, about = "Shared/exclusive representation learning by mutual information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory holding train.mipd and eval.mipd; generated from the
    /// configuration when absent
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    /// Held-out pairs used for evaluation
    #[arg(long, global = true, default_value_t = 2000)]
    pub eval_pairs: usize,

    /// Save an intermediate checkpoint every N steps (0 disables)
    #[arg(long, global = true, default_value_t = 500)]
    pub checkpoint_interval: u64,

    /// Optimization steps of every probe classifier
    #[arg(long, global = true, default_value_t = 3000)]
    pub probe_steps: usize,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Write the training and held-out pair datasets
    GenData,
    /// Train both stages
    Train,
    /// Train the shared stage only
    TrainShared {
        /// Continue from this stage-1 checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the exclusive stage from a checkpoint
    TrainExclusive {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Probe, kNN and retrieval report for a checkpoint
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Nearest held-out images to one held-out query
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        query: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// shared, exclusive or full
        #[arg(long, default_value = "shared")]
        representation: String,
    },
    /// Exclusive-representation accuracy as a function of the adversarial weight
    SweepLambda {
        /// Stage-1 checkpoint reused by every sweep point; trained when absent
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f32>,
    },
    /// Train and probe loss-term ablations with the base seed
    Ablate {
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Per-pixel MI score map of one held-out image
    MiMap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        col: usize,
    },
    /// Finite-difference check of every autodiff operator
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::TrainShared { .. } => "train-shared",
            Command::TrainExclusive { .. } => "train-exclusive",
            Command::Probe { .. } => "probe",
            Command::Retrieve { .. } => "retrieve",
            Command::SweepLambda { .. } => "sweep-lambda",
            Command::Ablate { .. } => "ablate",
            Command::MiMap { .. } => "mi-map",
            Command::GradCheck { .. } => "grad-check",
        }
    }
}

/// A required input file does not exist.
#[derive(Debug)]
pub struct MissingArtifact(pub PathBuf);

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing artifact: {}", self.0.display())
    }
}

impl std::error::Error for MissingArtifact {}

#[derive(Debug)]
struct GradCheckFailed(usize);

impl fmt::Display for GradCheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} operator checks exceeded the tolerance", self.0)
    }
}

impl std::error::Error for GradCheckFailed {}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<MissingArtifact>() {
            return EXIT_MISSING;
        }
        if cause.is::<GradCheckFailed>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) => EXIT_CONFIG,
                CoreError::Numerical { .. } | CoreError::NonFinite { .. } | CoreError::NonFiniteGradient(_) => {
                    EXIT_NUMERICAL
                }
                CoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(MissingArtifact(p.clone()).into());
            }
            RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    for (key, value) in cli.overrides.pairs() {
        cfg.set(key, value)?;
    }
    cfg.train.checkpoint_interval = cli.checkpoint_interval;
    cfg.train.validate()?;
    Ok(cfg)
}

fn datasets(cli: &Cli, cfg: &RunConfig) -> Result<(PairDataset, PairDataset)> {
    if let Some(dir) = &cli.data_dir {
        let load = |name: &str| -> Result<PairDataset> {
            let p = dir.join(name);
            if !p.exists() {
                return Err(MissingArtifact(p).into());
            }
            Ok(read_dataset(&p).with_context(|| format!("reading {}", p.display()))?)
        };
        let (train, eval) = (load(TRAIN_DATA)?, load(EVAL_DATA)?);
        if train.kind != cfg.dataset {
            return Err(CoreError::Config(format!("{} does not hold the configured dataset", dir.display())).into());
        }
        return Ok((train, eval));
    }
    let dc = DataConfig::new(cfg.dataset, cfg.train.seed);
    let train = PairDataset::generate(&dc, 0, cfg.n_pairs);
    let eval = PairDataset::generate(&dc, cfg.n_pairs as u64, cli.eval_pairs);
    Ok((train, eval))
}

fn checkpoint(path: &Path) -> Result<ModelBundle> {
    if !path.exists() {
        return Err(MissingArtifact(path.to_path_buf()).into());
    }
    Ok(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?)
}

fn eval_options(cli: &Cli, cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        probe: ProbeConfig {
            steps: cli.probe_steps,
            seed: cfg.train.seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

#[derive(Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: &'a [String],
    config_hash: String,
    config: BTreeMap<&'static str, String>,
    seed: u64,
    versions: BTreeMap<&'static str, &'static str>,
    outputs: Vec<OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(cli: &Cli, args: &[String], cfg: &RunConfig, outputs: &[PathBuf]) -> Result<()> {
    let name = cli.command.name();
    let config = CONFIG_KEYS
        .iter()
        .map(|&k| (k, cfg.get(k).expect("known key")))
        .collect();
    let outputs = outputs
        .iter()
        .map(|p| {
            Ok(OutputFile {
                path: p.strip_prefix(&cfg.out_dir).unwrap_or(p).display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        command: name,
        args,
        config_hash: cfg.hash(),
        config,
        seed: cfg.train.seed,
        versions: BTreeMap::from([
            ("mi-disentangle", env!("CARGO_PKG_VERSION")),
            ("midis", env!("CARGO_PKG_VERSION")),
        ]),
        outputs,
    };
    let path = cfg.out_dir.join(format!("manifest-{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write(path: PathBuf, text: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(path);
    Ok(())
}

fn parse_representation(s: &str) -> Result<Representation> {
    Ok(match s {
        "shared" => Representation::Shared,
        "exclusive" => Representation::Exclusive,
        "full" => Representation::Full,
        other => return Err(CoreError::Config(format!("unknown representation `{other}`")).into()),
    })
}

fn execute(cli: &Cli, args: &[String]) -> Result<()> {
    if let Command::GradCheck { seeds } = cli.command {
        return grad_check(seeds);
    }
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut outputs = Vec::new();
    info!("{} (config {})", cli.command.name(), &cfg.hash()[..12]);
    match &cli.command {
        Command::GradCheck { .. } => unreachable!("handled above"),
        Command::GenData => {
            let (train, eval) = datasets(cli, &cfg)?;
            for (name, ds) in [(TRAIN_DATA, &train), (EVAL_DATA, &eval)] {
                let p = out.join(name);
                write_dataset(&p, ds)?;
                outputs.push(p);
            }
            println!("wrote {} training and {} held-out pairs to {}", train.len(), eval.len(), out.display());
        }
        Command::Train => {
            let (train, _) = datasets(cli, &cfg)?;
            let mut run = RunOutput::new(&out);
            let mut b = new_bundle(&train, &cfg.train);
            train_shared(&mut b, &train, &cfg.train, &mut run)?;
            train_exclusive(&mut b, &train, &cfg.train, &mut run)?;
            outputs.extend(run_files(&out)?);
        }
        Command::TrainShared { resume } => {
            let (train, _) = datasets(cli, &cfg)?;
            let mut b = match resume {
                Some(p) => checkpoint(p)?,
                None => new_bundle(&train, &cfg.train),
            };
            train_shared(&mut b, &train, &cfg.train, &mut RunOutput::new(&out))?;
            outputs.extend(run_files(&out)?);
        }
        Command::TrainExclusive { checkpoint: p } => {
            let (train, _) = datasets(cli, &cfg)?;
            let mut b = checkpoint(p)?;
            train_exclusive(&mut b, &train, &cfg.train, &mut RunOutput::new(&out))?;
            outputs.extend(run_files(&out)?);
        }
        Command::Probe { checkpoint: p } => {
            let (_, eval) = datasets(cli, &cfg)?;
            let b = checkpoint(p)?;
            let report = evaluate_model(&b, &eval, &eval_options(cli, &cfg))?;
            print!("{}", report.to_table());
            let s = stem(p);
            write(out.join(format!("report-{s}.txt")), &report.to_table(), &mut outputs)?;
            write(out.join(format!("report-{s}.csv")), &report.to_csv(), &mut outputs)?;
            write(out.join(format!("report-{s}.json")), &report.to_json(), &mut outputs)?;
        }
        Command::Retrieve {
            checkpoint: p,
            query,
            k,
            representation,
        } => {
            let rep = parse_representation(representation)?;
            let (_, eval) = datasets(cli, &cfg)?;
            if *query >= eval.len() {
                return Err(CoreError::Config(format!("query {query} outside {} held-out pairs", eval.len())).into());
            }
            let b = checkpoint(p)?;
            let reps = representations(&b, &eval, rep, Domain::X)?;
            let gallery_idx: Vec<usize> = (0..eval.len()).filter(|&i| i != *query).collect();
            let gallery: Vec<Vec<f32>> = gallery_idx.iter().map(|&i| reps[i].clone()).collect();
            let top = retrieve(&reps[*query], &gallery, *k)?;
            let names: Vec<&str> = eval.factors.iter().map(|f| f.name.as_str()).collect();
            let mut csv = format!("rank,index,{}\n", names.join(","));
            let labels = |i: usize| eval.labels_x(i).iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
            csv.push_str(&format!("0,{query},{}\n", labels(*query)));
            for (rank, &g) in top.iter().enumerate() {
                csv.push_str(&format!("{},{},{}\n", rank + 1, gallery_idx[g], labels(gallery_idx[g])));
            }
            print!("{csv}");
            write(out.join(format!("retrieval-{}-{query}.csv", representation)), &csv, &mut outputs)?;
        }
        Command::SweepLambda { checkpoint: p, values } => {
            let (train, eval) = datasets(cli, &cfg)?;
            let values = if values.is_empty() { DEFAULT_LAMBDAS.to_vec() } else { values.clone() };
            let runs = out.join("sweep");
            fs::create_dir_all(&runs)?;
            let stage1 = match p {
                Some(p) => checkpoint(p)?,
                None => {
                    let mut b = new_bundle(&train, &cfg.train);
                    train_shared(&mut b, &train, &cfg.train, &mut RunOutput::new(&runs))?;
                    outputs.push(runs.join(STAGE1_CHECKPOINT));
                    b
                }
            };
            if stage1.stage != Stage::Shared {
                return Err(CoreError::Config("sweep-lambda needs a stage-1 checkpoint".into()).into());
            }
            let probe = eval_options(cli, &cfg).probe;
            let points = lambda_sweep(&stage1, &train, &eval, &cfg.train, &values, &probe, Some(&runs))?;
            let csv = sweep_csv(&points);
            print!("{csv}");
            write(out.join("sweep.csv"), &csv, &mut outputs)?;
        }
        Command::Ablate { variants } => {
            let (train, eval) = datasets(cli, &cfg)?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<mi_disentangle::Result<_>>()?
            };
            let runs = out.join("ablation");
            fs::create_dir_all(&runs)?;
            let probe = eval_options(cli, &cfg).probe;
            let rows = ablation_suite(&train, &eval, &cfg.train, &variants, &probe, None, Some(&runs))?;
            let csv = ablation_csv(&rows);
            print!("{csv}");
            write(out.join("ablation.csv"), &csv, &mut outputs)?;
            write(out.join("ablation.json"), &serde_json::to_string_pretty(&rows)?, &mut outputs)?;
        }
        Command::MiMap {
            checkpoint: p,
            index,
            row,
            col,
        } => {
            let (_, eval) = datasets(cli, &cfg)?;
            if *index >= eval.len() {
                return Err(CoreError::Config(format!("index {index} outside {} held-out pairs", eval.len())).into());
            }
            let b = checkpoint(p)?;
            let (h, w) = (eval.height, eval.width);
            let map = mi_distance_map(&b, eval.image_x(*index), (h, w), (*row, *col))?;
            let mut csv = String::new();
            for r in 0..h {
                let line: Vec<String> = map[r * w..(r + 1) * w].iter().map(|v| format!("{v:.5}")).collect();
                csv.push_str(&line.join(","));
                csv.push('\n');
            }
            let base = format!("mimap-{index}-{row}-{col}");
            write(out.join(format!("{base}.csv")), &csv, &mut outputs)?;
            let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
            pgm.extend(map.iter().map(|v| (v * 255.0).round() as u8));
            let p = out.join(format!("{base}.pgm"));
            fs::write(&p, pgm)?;
            outputs.push(p);
            println!("wrote {}", out.join(&base).display());
        }
    }
    write_manifest(cli, args, &cfg, &outputs)
}

/// Checkpoints and logs of a training run directory, in name order.
fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("midz") | Some("csv")))
        .collect();
    files.sort();
    Ok(files)
}

fn grad_check(seeds: u64) -> Result<()> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let reports = gradcheck::check_all(&seeds)?;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &reports {
        let w = worst.entry(r.op).or_insert(0.0);
        *w = w.max(r.rel_error);
    }
    for (op, err) in &worst {
        let verdict = if *err < gradcheck::FD_TOLERANCE { "ok" } else { "FAIL" };
        println!("{op:<16} max rel error {err:.3e} {verdict}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        bail!(GradCheckFailed(failed));
    }
    Ok(())
}
