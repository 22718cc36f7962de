//! Command-line surface. Exit codes: 0 success, 1 validation failure
//! (including usage errors), 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{ledger, select_model_resume, BoBudget, Evaluation};
use crate::error::{config, Error, Result};
use crate::evaluation::report::{build_report, write_scatter, ModelPredictions};
use crate::evaluation::{lls_quantify, PredictionRecord};
use crate::io::archive::{Archive, ArchiveKind};
use crate::io::config::{read_space, BasisSection, Precision, RunConfig};
use crate::io::{read_json, stamp, write_json, write_training_log, AnyModel, Checkpoint, Stamp};
use crate::models::{
    cross_validate, train_split, ModelConfig, PreparedDataset, CNN_SELECTION_EPOCHS, YAE_SELECTION_EPOCHS,
};
use crate::preprocess::{DataType, ExportConfig, TargetNorm, TargetVector};
use crate::spectra::Acquisition;
use crate::synthesis::{derive_seed, generate_dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "megaquant", version, about = "Edited-MRS quantification toolkit")]
pub struct Cli {
    /// Seed for all randomness; overrides seeds in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MEGAQUANT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a synthetic basis set archive.
    BasisSynth(BasisSynthArgs),
    /// Synthesise a labelled dataset archive.
    Generate(GenerateArgs),
    /// Train a model on a dataset archive.
    Train(TrainArgs),
    /// Bayesian model selection with k-fold cross-validation.
    Select(SelectArgs),
    /// Predict on a dataset and write the evaluation report.
    Evaluate(EvaluateArgs),
    /// Compare saved prediction files in one report.
    Compare(CompareArgs),
    /// Quantify raw spectra by non-negative least squares against a basis.
    LlsFit(LlsFitArgs),
}

#[derive(Args, Debug)]
pub struct BasisSynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Store full-band OFF/ON spectra instead of exported network inputs.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training-log CSV (defaults to the checkpoint path with `.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Search space; overrides the config's selection space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Maximum evaluations; overrides the config's budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Ledger CSV; an existing ledger is resumed.
    #[arg(long, default_value = "ledger.csv")]
    pub ledger: PathBuf,
    /// Where to write the best model configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model name in the report (defaults to the checkpoint file stem).
    #[arg(long)]
    pub name: Option<String>,
    /// Consecutive samples per experiment; overrides the config.
    #[arg(long)]
    pub experiment_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Prediction files of the models under comparison.
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Prediction files of reference methods.
    #[arg(long, num_args = 1..)]
    pub baseline: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LlsFitArgs {
    #[arg(long)]
    pub basis: PathBuf,
    /// Raw dataset archive.
    #[arg(long)]
    pub input: PathBuf,
    /// Supplies the export settings; OFF/ON real and imaginary otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prediction file for `compare`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub experiment_size: Option<usize>,
}

/// Prediction file written by `evaluate` and `lls-fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub stamp: Stamp,
    pub predictions: ModelPredictions,
}

/// Parse `argv`, run the subcommand and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_VALIDATION;
        }
        // a pool built earlier in the same process keeps its size
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialised");
        }
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BasisSynth(a) => basis_synth(cli, a),
        Command::Generate(a) => generate(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Select(a) => select(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Compare(a) => compare(a),
        Command::LlsFit(a) => lls_fit(cli, a),
    }
}

/// Parsed config and the bytes it was read from (hashed into stamps).
fn load_config(path: Option<&Path>) -> Result<(RunConfig, Vec<u8>)> {
    match path {
        Some(p) => {
            let bytes = std::fs::read(p)?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| config(format!("config is not UTF-8: {e}")))?;
            let mut cfg = RunConfig::from_json(&text)?;
            // relative paths inside a config are relative to the config file
            let base = p.parent().unwrap_or(Path::new("."));
            if let Some(bp) = cfg.basis.as_mut().and_then(|b| b.path.as_mut()) {
                *bp = base.join(&*bp);
            }
            if let Some(sp) = cfg.selection.as_mut().and_then(|s| s.space.as_mut()) {
                *sp = base.join(&*sp);
            }
            Ok((cfg, bytes))
        }
        None => Ok((RunConfig::from_json("{}")?, b"{}".to_vec())),
    }
}

fn require<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| config(format!("config has no {what} section")))
}

fn basis_section(cfg: &RunConfig) -> BasisSection {
    cfg.basis.clone().unwrap_or_else(|| serde_json::from_str("{}").expect("basis defaults"))
}

fn basis_synth(cli: &Cli, a: &BasisSynthArgs) -> Result<()> {
    let (cfg, bytes) = load_config(a.config.as_deref())?;
    let section = basis_section(&cfg);
    let Some(source) = section.source()? else {
        return Err(config("basis-synth needs a synthetic peak table, not a basis path"));
    };
    let basis = section.load()?;
    let mut archive = Archive::from_basis(&basis, Some(source))?;
    archive.manifest.stamp = stamp("basis-synth", &bytes, cli.seed.unwrap_or(0));
    archive.write(&a.out)?;
    log::info!("wrote basis of {} metabolites to {}", basis.len(), a.out.display());
    Ok(())
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let (cfg, bytes) = load_config(Some(&a.config))?;
    let mut synth = require(&cfg.synthesis, "synthesis")?.clone();
    if let Some(s) = cli.seed {
        synth.master_seed = s;
    }
    let basis = basis_section(&cfg).load()?;
    if synth.linewidth_mode.grid()?[0] < basis.intrinsic_fwhm() - 1e-12 {
        return Err(config("synthesis linewidths must not be below the basis linewidth"));
    }
    let st = stamp("generate", &bytes, synth.master_seed);
    let mut archive = if a.raw {
        Archive::from_labelled(&generate_dataset(&basis, &synth)?, *basis.axis())?
    } else {
        let export = cfg
            .export()
            .ok_or_else(|| config("a prepared archive needs an export or model section (or pass --raw)"))?;
        Archive::from_prepared(&PreparedDataset::synthesize(&basis, &synth, export)?)?
    };
    archive.manifest.stamp = st;
    archive.write(&a.out)?;
    log::info!("wrote {} samples to {}", archive.manifest.n_samples, a.out.display());
    Ok(())
}

/// Network-ready samples from a prepared or raw archive.
fn load_prepared(path: &Path, export: &ExportConfig) -> Result<PreparedDataset> {
    let archive = Archive::read(path)?;
    match archive.manifest.kind {
        ArchiveKind::Prepared => archive.to_prepared(),
        ArchiveKind::Raw => PreparedDataset::from_labelled(&archive.to_labelled()?, export),
        ArchiveKind::Basis => Err(Error::Contract(format!("{} is a basis archive, not a dataset", path.display()))),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (cfg, bytes) = load_config(Some(&a.config))?;
    let model_cfg = cfg.effective_model().ok_or_else(|| config("config has no model section"))?;
    let t = require(&cfg.training, "training")?;
    let seed = cli.seed.unwrap_or(t.seed);
    let data = load_prepared(&a.data, model_cfg.export())?;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)));
    let n_val = (t.validation_fraction * data.len() as f64).round() as usize;
    let (val, train_idx) = idx.split_at(n_val);
    let val = (!val.is_empty()).then_some(val);
    log::info!("training on {} samples, validating on {}", train_idx.len(), n_val);
    let model = match t.precision {
        Precision::F32 => AnyModel::F32(train_split(&model_cfg, &data, train_idx, val, t.epochs, seed)?),
        Precision::F64 => AnyModel::F64(train_split(&model_cfg, &data, train_idx, val, t.epochs, seed)?),
    };
    let ck = Checkpoint {
        stamp: stamp("train", &bytes, seed),
        model,
    };
    ck.write(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
    write_training_log(&log_path, ck.model.log())?;
    if let Some(last) = ck.model.log().last() {
        log::info!("final epoch: {last:?}");
    }
    Ok(())
}

fn select(cli: &Cli, a: &SelectArgs) -> Result<()> {
    let (cfg, bytes) = load_config(a.config.as_deref())?;
    let sel = cfg.selection.as_ref();
    let space_path = a
        .space
        .clone()
        .or_else(|| sel.and_then(|s| s.space.clone()))
        .ok_or_else(|| config("select needs --space or selection.space"))?;
    let space = read_space(&space_path)?;
    let mut budget = match (sel, a.budget) {
        (Some(s), _) => s.budget.clone(),
        (None, Some(b)) => BoBudget {
            max_evaluations: b,
            init_design: (b / 10).clamp(2, 20).min(b.saturating_sub(1)),
            ..BoBudget::new(3, 2)?
        },
        (None, None) => return Err(config("select needs --budget or a selection section")),
    };
    if let Some(b) = a.budget {
        budget.max_evaluations = b;
    }
    budget.validate()?;
    let seed = cli.seed.or(sel.map(|s| s.seed)).unwrap_or(0);
    let template = serde_json::to_value(cfg.effective_model().ok_or_else(|| config("select needs a model template"))?)?;
    // every point of the space must yield a valid model before work starts
    for c in space.all_configs().into_iter().take(crate::bayesopt::acquisition::EXHAUSTIVE_LIMIT) {
        let m: ModelConfig = serde_json::from_value(space.apply(&template, &c)?)?;
        m.validate()?;
    }
    let data_path = a.data.as_ref().ok_or_else(|| config("select needs --data"))?;
    let export = serde_json::from_value::<ModelConfig>(template.clone())?.export().clone();
    let data = load_prepared(data_path, &export)?;
    let folds = sel.map_or(5, |s| s.folds);
    let epochs = sel
        .and_then(|s| s.epochs)
        .unwrap_or(match serde_json::from_value::<ModelConfig>(template.clone())? {
            ModelConfig::Cnn(_) => CNN_SELECTION_EPOCHS,
            ModelConfig::Yae(_) => YAE_SELECTION_EPOCHS,
        });
    let precision = cfg.training.as_ref().map_or(Precision::F32, |t| t.precision);

    let prior = if a.ledger.exists() {
        let p = ledger::read_ledger(&a.ledger, &space)?;
        log::info!("resuming from {} ledger entries", p.len());
        p
    } else {
        Vec::new()
    };
    let mut writer = ledger::LedgerWriter::open(&a.ledger, &space)?;
    let objective = |c: &Vec<usize>| -> Result<Evaluation> {
        let m: ModelConfig = serde_json::from_value(space.apply(&template, c)?)?;
        let cv = match precision {
            Precision::F32 => cross_validate::<f32>(&m, &data, folds, epochs, seed)?,
            Precision::F64 => cross_validate::<f64>(&m, &data, folds, epochs, seed)?,
        };
        Ok(Evaluation::from_folds(cv.fold_mae))
    };
    let result = select_model_resume(&space, objective, &budget, seed, prior, |e| writer.append(e))?;
    let st = stamp("select", &bytes, seed);
    write_json(&with_suffix(&a.ledger, ".stamp.json"), &st)?;
    let Some(best) = &result.best else {
        return Err(Error::State("every evaluated configuration failed".into()));
    };
    log::info!("best {:?} with mean MAE {}", space.describe(best), result.best_mean);
    if let Some(out) = &a.out {
        let doc = serde_json::json!({
            "stamp": st,
            "mean_mae": result.best_mean,
            "choice": space.describe(best),
            "model": space.apply(&template, best)?,
        });
        write_json(out, &doc)?;
    }
    Ok(())
}

fn experiment_id(i: usize, size: usize) -> String {
    format!("exp{:04}", i / size)
}

fn experiment_size(arg: Option<usize>, cfg: &RunConfig) -> Result<usize> {
    let n = arg.unwrap_or_else(|| cfg.evaluation.clone().unwrap_or_default().experiment_size);
    if n == 0 {
        return Err(config("experiment size must be positive"));
    }
    Ok(n)
}

fn write_report(dir: &Path, preds: &[ModelPredictions], baselines: &[ModelPredictions], st: &Stamp) -> Result<()> {
    let report = build_report(preds, baselines)?;
    let pairs: Vec<(String, String)> = st.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    report.write(dir, &pairs)?;
    let all: Vec<ModelPredictions> = preds.iter().chain(baselines).cloned().collect();
    write_scatter(&dir.join("scatter.csv"), &all)?;
    print!("{}", report.to_text());
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let (cfg, bytes) = load_config(a.config.as_deref())?;
    let ck = Checkpoint::read(&a.model)?;
    let data = load_prepared(&a.data, ck.model.config().export())?;
    let size = experiment_size(a.experiment_size, &cfg)?;
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| a.model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()));
    let pred = ck.model.predict(&data)?;
    let records = pred
        .into_iter()
        .enumerate()
        .map(|(i, p)| PredictionRecord {
            spectrum_id: i.to_string(),
            experiment: experiment_id(i, size),
            model: name.clone(),
            predicted: TargetVector {
                values: p,
                norm_mode: TargetNorm::Max,
            },
            truth: TargetVector {
                values: data.truth(i),
                norm_mode: TargetNorm::Max,
            },
        })
        .collect();
    let mp = ModelPredictions {
        model: name,
        metabolites: data.metabolites.clone(),
        records,
    };
    std::fs::create_dir_all(&a.out)?;
    let st = stamp("evaluate", &bytes, cli.seed.unwrap_or(0));
    write_json(
        &a.out.join("predictions.json"),
        &PredictionFile {
            stamp: st.clone(),
            predictions: mp.clone(),
        },
    )?;
    write_report(&a.out, &[mp], &[], &st)
}

fn compare(a: &CompareArgs) -> Result<()> {
    let load = |paths: &[PathBuf]| -> Result<Vec<ModelPredictions>> {
        paths
            .iter()
            .map(|p| read_json::<PredictionFile>(p).map(|f| f.predictions))
            .collect()
    };
    let preds = load(&a.predictions)?;
    let baselines = load(&a.baseline)?;
    let mut hashed = Vec::new();
    for p in a.predictions.iter().chain(&a.baseline) {
        hashed.extend(std::fs::read(p)?);
    }
    std::fs::create_dir_all(&a.out)?;
    write_report(&a.out, &preds, &baselines, &stamp("compare", &hashed, 0))
}

fn default_lls_export() -> ExportConfig {
    ExportConfig::new(
        [Acquisition::Off, Acquisition::On],
        [DataType::Real, DataType::Imaginary],
        TargetNorm::Max,
    )
}

fn lls_fit(cli: &Cli, a: &LlsFitArgs) -> Result<()> {
    let (cfg, bytes) = load_config(a.config.as_deref())?;
    let export = cfg.export().cloned().unwrap_or_else(default_lls_export);
    export.validate()?;
    let basis = Archive::read(&a.basis)?.to_basis()?;
    let input = Archive::read(&a.input)?;
    if input.manifest.kind != ArchiveKind::Raw {
        return Err(Error::Contract("lls-fit needs a raw archive (generate --raw)".into()));
    }
    let data = input.to_labelled()?;
    if data.metabolites != basis.metabolites() {
        return Err(Error::Contract(format!(
            "input metabolites {:?} differ from basis metabolites {:?}",
            data.metabolites,
            basis.metabolites()
        )));
    }
    let size = experiment_size(a.experiment_size, &cfg)?;
    println!("sample\tkind\t{}", data.metabolites.join("\t"));
    let mut records = Vec::with_capacity(data.len());
    for (i, s) in data.samples.iter().enumerate() {
        let fit = lls_quantify(&basis, &s.acquisitions, &export)?;
        let truth = crate::preprocess::to_max_normalised(s.target.values());
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join("\t");
        println!("{i}\tfit\t{}", fmt(fit.values()));
        println!("{i}\ttruth\t{}", fmt(&truth));
        records.push(PredictionRecord {
            spectrum_id: i.to_string(),
            experiment: experiment_id(i, size),
            model: "lls".into(),
            predicted: TargetVector {
                values: fit.values().to_vec(),
                norm_mode: TargetNorm::Max,
            },
            truth: TargetVector {
                values: truth,
                norm_mode: TargetNorm::Max,
            },
        });
    }
    if let Some(out) = &a.out {
        let file = PredictionFile {
            stamp: stamp("lls-fit", &bytes, cli.seed.unwrap_or(0)),
            predictions: ModelPredictions {
                model: "lls".into(),
                metabolites: data.metabolites.clone(),
                records,
            },
        };
        write_json(out, &file)?;
    }
    Ok(())
}
