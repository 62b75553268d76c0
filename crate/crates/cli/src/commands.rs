//! Subcommands. Each one is split into `prepare`, which only validates the
//! resolved options, and `execute`, which reads inputs and writes outputs
//! through a [`Staging`] directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use qikt_core::data::{gen_synthetic, kfold_split, load_dataset, preprocess, write_dataset, Dataset, KcId, SynthConfig};
use qikt_core::eval::{
    auc, export_knowledge_states, export_module_outputs, predict_all, write_knowledge_states_csv,
    write_module_outputs_csv, EvalReport, FoldMetrics, RunMetrics,
};
use qikt_core::model::{load_checkpoint, write_checkpoint, ModelConfig, QiktParams, Variant};
use qikt_core::train::{grid_search, run_ablation, run_cv_folds, CvResult, Grid, TrainConfig};

use crate::manifest::{absolute, sha256_file, FileDigest, RunManifest, Staging, MANIFEST};
use crate::options::{self, invalid, Opt, Resolved};

pub const COMMANDS: &[&str] = &["synth", "train", "eval", "export", "ablate"];

pub fn opts(command: &str) -> Vec<Opt> {
    match command {
        "synth" => options::SYNTH.to_vec(),
        "train" => options::train_opts(),
        "eval" => options::EVAL.to_vec(),
        "export" => options::EXPORT.to_vec(),
        "ablate" => options::ablate_opts(),
        other => panic!("unknown command {other}"),
    }
}

fn check(r: qikt_core::Result<()>) -> Result<()> {
    r.map_err(|e| invalid(e.to_string()))
}

/// A validated command ready to run.
pub struct Prepared {
    pub command: String,
    pub config: Resolved,
    pub seed: Option<u64>,
    job: Job,
}

enum Job {
    Synth(SynthConfig),
    Train(TrainJob),
    Eval(EvalJob),
    Export(ExportJob),
    Ablate(TrainJob),
}

struct TrainJob {
    data: PathBuf,
    d: usize,
    lambda: f64,
    variant: Variant,
    train: TrainConfig,
    folds: usize,
    only: Option<usize>,
    min_len: usize,
    max_len: usize,
    grid: Option<Grid>,
}

struct EvalJob {
    runs: Vec<(String, PathBuf)>,
    data: Option<PathBuf>,
}

struct ExportJob {
    data: PathBuf,
    checkpoint: PathBuf,
    student: String,
    kcs: Option<Vec<String>>,
}

/// Makes path-valued options absolute so a manifest can be replayed from
/// any working directory.
fn absolutise(config: &mut Resolved, keys: &[&str]) -> Result<()> {
    for &key in keys {
        if let Some(raw) = config.raw(key).map(str::to_string) {
            let joined = raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Ok(absolute(Path::new(s))?.display().to_string()))
                .collect::<Result<Vec<_>>>()?;
            config.set(key, joined.join(","));
        }
    }
    Ok(())
}

pub fn prepare(command: &str, mut config: Resolved) -> Result<Prepared> {
    absolutise(&mut config, &["out", "data", "checkpoint", "run"])?;
    let (seed, job) = match command {
        "synth" => {
            let cfg = SynthConfig {
                students: config.get("students")?,
                questions: config.get("questions")?,
                kcs: config.get("kcs")?,
                kcs_per_question: (config.get("kcs-min")?, config.get("kcs-max")?),
                gamma: config.get("gamma")?,
                seq_len: (config.get("len-min")?, config.get("len-max")?),
                seed: config.get("seed")?,
                ability_std: config.get("ability-std")?,
                difficulty_std: config.get("difficulty-std")?,
            };
            check(cfg.validate())?;
            (Some(cfg.seed), Job::Synth(cfg))
        }
        "train" => {
            let job = prepare_train(&config, true)?;
            (Some(job.train.seed), Job::Train(job))
        }
        "ablate" => {
            let job = prepare_train(&config, false)?;
            (Some(job.train.seed), Job::Ablate(job))
        }
        "eval" => {
            let paths = config.list::<String>("run")?;
            if paths.is_empty() {
                return Err(invalid("--run needs at least one directory"));
            }
            let mut runs: Vec<(String, PathBuf)> = Vec::new();
            for p in paths {
                let path = PathBuf::from(&p);
                let base = path
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.clone());
                let mut name = base.clone();
                let mut k = 2;
                while runs.iter().any(|(n, _)| *n == name) {
                    name = format!("{base}#{k}");
                    k += 1;
                }
                runs.push((name, path));
            }
            let data = config.raw("data").map(PathBuf::from);
            (None, Job::Eval(EvalJob { runs, data }))
        }
        "export" => {
            let kcs = match config.raw("kcs") {
                Some(_) => {
                    let list = config.list::<String>("kcs")?;
                    if list.is_empty() {
                        return Err(invalid("--kcs is empty"));
                    }
                    Some(list)
                }
                None => None,
            };
            let student = config.get::<String>("student")?;
            if student.is_empty() {
                return Err(invalid("--student is empty"));
            }
            (
                None,
                Job::Export(ExportJob {
                    data: config.path("data")?,
                    checkpoint: config.path("checkpoint")?,
                    student,
                    kcs,
                }),
            )
        }
        other => return Err(invalid(format!("unknown command '{other}'"))),
    };
    if config.raw("jobs").is_some() {
        config.get::<usize>("jobs")?;
    }
    Ok(Prepared {
        command: command.to_string(),
        config,
        seed,
        job,
    })
}

fn prepare_train(config: &Resolved, single: bool) -> Result<TrainJob> {
    let clip_norm = match config.raw("clip-norm") {
        Some("none") => None,
        _ => Some(config.get::<f64>("clip-norm")?),
    };
    let train = TrainConfig {
        lr: config.get("lr")?,
        batch_size: config.get("batch-size")?,
        max_epochs: config.get("max-epochs")?,
        patience: config.get("patience")?,
        seed: config.get("seed")?,
        clip_norm,
        ..TrainConfig::default()
    };
    check(train.validate())?;
    if train.lr <= 0.0 {
        return Err(invalid(format!("--lr must be > 0, got {}", train.lr)));
    }
    let folds: usize = config.get("folds")?;
    if folds < 2 {
        return Err(invalid("--folds must be >= 2"));
    }
    let min_len: usize = config.get("min-len")?;
    let max_len: usize = config.get("max-len")?;
    if min_len < 2 || max_len < min_len {
        return Err(invalid(format!(
            "need 2 <= --min-len <= --max-len, got {min_len} and {max_len}"
        )));
    }
    let d: usize = config.get("d")?;
    let lambda: f64 = config.get("lambda")?;
    let variant = if single {
        config
            .raw("variant")
            .unwrap_or("full")
            .parse::<Variant>()
            .map_err(|e| invalid(e.to_string()))?
    } else {
        Variant::Full
    };
    check(ModelConfig::new(d, 1, 1, lambda, variant).map(drop))?;
    let mut only = None;
    let mut grid = None;
    if single {
        only = match config.raw("fold") {
            Some("all") | None => None,
            Some(_) => {
                let i: usize = config.get("fold")?;
                if i >= folds {
                    return Err(invalid(format!("--fold {i} out of range for {folds} folds")));
                }
                Some(i)
            }
        };
        if config.flag("grid")? {
            let g = Grid {
                lambdas: config.list("grid-lambdas")?,
                lrs: config.list("grid-lrs")?,
                dims: config.list("grid-dims")?,
            };
            if g.cells().is_empty() {
                return Err(invalid("hyper-parameter grid is empty"));
            }
            for (lambda, lr, d) in g.cells() {
                check(ModelConfig::new(d, 1, 1, lambda, variant).map(drop))?;
                if !(lr.is_finite() && lr > 0.0) {
                    return Err(invalid(format!("grid learning rate must be > 0, got {lr}")));
                }
            }
            grid = Some(g);
        }
    }
    Ok(TrainJob {
        data: config.path("data")?,
        d,
        lambda,
        variant,
        train,
        folds,
        only,
        min_len,
        max_len,
        grid,
    })
}

/// Reads an input, recording its digest.
struct Inputs(Vec<FileDigest>);

impl Inputs {
    fn record(&mut self, path: &Path) -> Result<String> {
        let sha256 = sha256_file(path)?;
        if !self.0.iter().any(|f| f.path == path) {
            self.0.push(FileDigest {
                path: path.to_path_buf(),
                sha256: sha256.clone(),
            });
        }
        Ok(sha256)
    }

    fn dataset(&mut self, path: &Path) -> Result<Dataset> {
        self.record(path)?;
        load_dataset(path).with_context(|| format!("cannot load {}", path.display()))
    }

    fn checkpoint(&mut self, path: &Path) -> Result<QiktParams> {
        self.record(path)?;
        load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> qikt_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn check_shape(params: &QiktParams, ds: &Dataset, what: &Path) -> Result<()> {
    let c = &params.config;
    if c.n != ds.n || c.m != ds.m {
        bail!(
            "checkpoint {} expects {} questions and {} KCs but the data has {} and {}",
            what.display(),
            c.n,
            c.m,
            ds.n,
            ds.m
        );
    }
    Ok(())
}

impl Prepared {
    pub fn out(&self) -> Result<PathBuf> {
        self.config.path("out")
    }

    /// Runs the command and returns its manifest. `log` receives the
    /// human-readable summary.
    pub fn execute(self, log: &mut String) -> Result<RunManifest> {
        let start = Instant::now();
        let mut staging = Staging::new(&self.out()?)?;
        let mut inputs = Inputs(Vec::new());
        match &self.job {
            Job::Synth(cfg) => synth(cfg, &mut staging, log)?,
            Job::Train(job) => train(job, &mut inputs, &mut staging, log)?,
            Job::Ablate(job) => ablate(job, &mut inputs, &mut staging, log)?,
            Job::Eval(job) => eval(job, &mut inputs, &mut staging, log)?,
            Job::Export(job) => export(job, &mut inputs, &mut staging, log)?,
        }
        let manifest = RunManifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.0.clone(),
            seed: self.seed,
            inputs: inputs.0,
            outputs: Vec::new(),
            duration_secs: start.elapsed().as_secs_f64(),
        };
        let out = staging.out().to_path_buf();
        let manifest = staging.commit(manifest)?;
        let _ = writeln!(log, "wrote {}", out.display());
        Ok(manifest)
    }
}

fn synth(cfg: &SynthConfig, staging: &mut Staging, log: &mut String) -> Result<()> {
    let data = gen_synthetic(cfg)?;
    staging.write("data.csv", &csv_bytes(|b| write_dataset(&data.dataset, b))?)?;
    staging.write("oracle.csv", &csv_bytes(|b| data.write_oracle(b))?)?;
    let (p, y) = data.oracle_predictions();
    let _ = writeln!(
        log,
        "{} students, {} interactions, oracle AUC {:.4}",
        data.dataset.sequences.len(),
        data.dataset.interaction_count(),
        auc(&p, &y).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_for_training(job: &TrainJob, inputs: &mut Inputs) -> Result<Dataset> {
    let raw = inputs.dataset(&job.data)?;
    Ok(preprocess(&raw, job.min_len, job.max_len)?)
}

fn write_fold_outputs(cv: &CvResult, staging: &mut Staging, prefix: &str) -> Result<Vec<u8>> {
    let mut report = csv::Writer::from_writer(Vec::new());
    report.write_record(["fold", "best_epoch", "epochs_run", "best_valid_auc", "test_auc", "test_acc"])?;
    for f in &cv.folds {
        let dir = format!("{prefix}fold-{}", f.fold);
        let ckpt = csv_bytes(|b| write_checkpoint(&f.best, b))?;
        staging.write(format!("{dir}/checkpoint.bin"), &ckpt)?;
        staging.write(
            format!("{dir}/epochs.csv"),
            &csv_bytes(|b| f.report.write_epochs_csv(b))?,
        )?;
        report.write_record([
            f.fold.to_string(),
            f.report.best_epoch.to_string(),
            f.report.epochs_run.to_string(),
            format!("{:?}", f.report.best_valid_auc),
            format!("{:?}", f.test_auc),
            format!("{:?}", f.test_acc),
        ])?;
    }
    report.into_inner().map_err(|e| anyhow!("{e}"))
}

fn train(job: &TrainJob, inputs: &mut Inputs, staging: &mut Staging, log: &mut String) -> Result<()> {
    let ds = load_for_training(job, inputs)?;
    let mut model = ModelConfig::new(job.d, ds.n, ds.m, job.lambda, job.variant)?;
    let mut cfg = job.train.clone();
    if let Some(grid) = &job.grid {
        let result = grid_search(&ds, &model, &cfg, grid)?;
        staging.write("grid.csv", &csv_bytes(|b| result.write_csv(b))?)?;
        let best = result.best_cell();
        let _ = writeln!(
            log,
            "grid: {} cells, selected lambda={} lr={:e} d={} (valid AUC {:.4})",
            result.cells.len(),
            best.lambda,
            best.lr,
            best.d,
            best.valid_auc
        );
        model = ModelConfig::new(best.d, ds.n, ds.m, best.lambda, job.variant)?;
        cfg.lr = best.lr;
    }
    let only = job.only.map(|i| vec![i]);
    let cv = run_cv_folds(&ds, &model, &cfg, job.folds, only.as_deref())?;
    let report = write_fold_outputs(&cv, staging, "")?;
    staging.write("report.csv", &report)?;
    let _ = writeln!(log, "{:>4}  {:>10}  {:>10}  {:>8}  {:>8}", "fold", "best_epoch", "epochs_run", "test_AUC", "test_ACC");
    for f in &cv.folds {
        let _ = writeln!(
            log,
            "{:>4}  {:>10}  {:>10}  {:>8.4}  {:>8.4}",
            f.fold, f.report.best_epoch, f.report.epochs_run, f.test_auc, f.test_acc
        );
    }
    let (m, s) = cv.auc_mean_std();
    let _ = writeln!(log, "{} AUC {m:.4}±{s:.4}", job.variant);
    Ok(())
}

fn write_eval_report(report: &EvalReport, staging: &mut Staging, log: &mut String) -> Result<()> {
    staging.write("report.csv", &csv_bytes(|b| report.write_folds_csv(b))?)?;
    staging.write("summary.csv", &csv_bytes(|b| report.write_summary_csv(b))?)?;
    if report.runs.len() >= 2 {
        staging.write("pvalues.csv", &csv_bytes(|b| report.write_pvalues_csv(b))?)?;
    }
    log.push_str(&report.table());
    Ok(())
}

fn ablate(job: &TrainJob, inputs: &mut Inputs, staging: &mut Staging, log: &mut String) -> Result<()> {
    let ds = load_for_training(job, inputs)?;
    let base = ModelConfig::new(job.d, ds.n, ds.m, job.lambda, Variant::Full)?;
    let result = run_ablation(&ds, &base, &job.train, job.folds)?;
    write_eval_report(&result.report, staging, log)
}

fn eval(job: &EvalJob, inputs: &mut Inputs, staging: &mut Staging, log: &mut String) -> Result<()> {
    let mut loaded: BTreeMap<(PathBuf, usize, usize), Dataset> = BTreeMap::new();
    let mut runs = Vec::with_capacity(job.runs.len());
    for (name, dir) in &job.runs {
        let manifest_path = dir.join(MANIFEST);
        inputs.record(&manifest_path)?;
        let manifest = RunManifest::load(&manifest_path)?;
        if manifest.command != "train" {
            bail!("{} is a '{}' run, not a training run", dir.display(), manifest.command);
        }
        let cfg = Resolved::from_recorded(&manifest.config, &options::train_opts())?;
        let train_job = prepare_train(&cfg, true)?;
        let data = job.data.clone().unwrap_or_else(|| train_job.data.clone());
        let digest = inputs.record(&data)?;
        if let Some(recorded) = manifest.input_digest(&train_job.data) {
            if recorded != digest {
                bail!("{} differs from the data run {} was trained on", data.display(), dir.display());
            }
        }
        let key = (data.clone(), train_job.min_len, train_job.max_len);
        if !loaded.contains_key(&key) {
            let raw = load_dataset(&data).with_context(|| format!("cannot load {}", data.display()))?;
            loaded.insert(key.clone(), preprocess(&raw, train_job.min_len, train_job.max_len)?);
        }
        let ds = &loaded[&key];
        let splits = kfold_split(ds, train_job.folds, train_job.train.seed)?;
        let folds: Vec<usize> = match train_job.only {
            Some(i) => vec![i],
            None => (0..train_job.folds).collect(),
        };
        let mut metrics = RunMetrics {
            name: name.clone(),
            folds: Vec::new(),
        };
        for i in folds {
            let path = dir.join(format!("fold-{i}")).join("checkpoint.bin");
            let params = inputs.checkpoint(&path)?;
            check_shape(&params, ds, &path)?;
            let test: Vec<_> = splits[i].test.iter().map(|&s| ds.sequences[s].clone()).collect();
            let preds = predict_all(&params, &test)?;
            metrics.folds.push(FoldMetrics {
                fold: i,
                auc: preds.auc()?,
                acc: preds.accuracy()?,
            });
        }
        runs.push(metrics);
    }
    write_eval_report(&EvalReport::new(runs)?, staging, log)
}

/// Resolves a `--kcs` entry: a KC id as written in the data, or failing that
/// a dense 0-based index.
fn resolve_kc(ds: &Dataset, token: &str) -> Result<KcId> {
    if let Some(i) = ds.kc_names.iter().position(|k| k == token) {
        return Ok(KcId(i as u32));
    }
    match token.parse::<usize>() {
        Ok(i) if i < ds.m => Ok(KcId(i as u32)),
        _ => bail!("unknown KC '{token}' ({} KCs available)", ds.m),
    }
}

fn export(job: &ExportJob, inputs: &mut Inputs, staging: &mut Staging, log: &mut String) -> Result<()> {
    let ds = inputs.dataset(&job.data)?;
    let params = inputs.checkpoint(&job.checkpoint)?;
    check_shape(&params, &ds, &job.checkpoint)?;
    let seq = ds
        .sequences
        .iter()
        .find(|s| s.student_id == job.student)
        .ok_or_else(|| {
            anyhow!(
                "unknown student '{}' ({} student ids available)",
                job.student,
                ds.sequences.len()
            )
        })?;
    let kcs = match &job.kcs {
        Some(list) => list.iter().map(|t| resolve_kc(&ds, t)).collect::<Result<Vec<_>>>()?,
        None => (0..ds.m as u32).map(KcId).collect(),
    };
    let rows = export_module_outputs(&params, seq)?;
    let states = export_knowledge_states(&params, seq, &kcs)?;
    staging.write(
        "module_outputs.csv",
        &csv_bytes(|b| write_module_outputs_csv(&rows, &ds, b))?,
    )?;
    staging.write(
        "knowledge_states.csv",
        &csv_bytes(|b| write_knowledge_states_csv(&states, &ds, b))?,
    )?;
    let _ = writeln!(log, "student {}: {} steps, {} KCs", job.student, rows.len(), kcs.len());
    Ok(())
}

/// Re-runs a recorded command into `out` and checks that every output
/// matches the recorded digest.
pub fn replay(manifest_path: &Path, out: &Path, log: &mut String) -> Result<RunManifest> {
    let recorded = RunManifest::load(manifest_path)?;
    if !COMMANDS.contains(&recorded.command.as_str()) {
        bail!("manifest records unknown command '{}'", recorded.command);
    }
    for f in &recorded.inputs {
        let now = sha256_file(&f.path)?;
        if now != f.sha256 {
            bail!("input {} changed since the recorded run", f.path.display());
        }
    }
    let mut config = recorded.config.clone();
    config.insert("out".into(), out.display().to_string());
    let resolved = Resolved::from_recorded(&config, &opts(&recorded.command))?;
    let fresh = prepare(&recorded.command, resolved)?.execute(log)?;
    let mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|f| !fresh.outputs.contains(f))
        .map(|f| f.path.display().to_string())
        .chain(
            fresh
                .outputs
                .iter()
                .filter(|f| !recorded.outputs.iter().any(|r| r.path == f.path))
                .map(|f| f.path.display().to_string()),
        )
        .collect();
    if !mismatched.is_empty() {
        bail!("replay differs from the recorded run in: {}", mismatched.join(", "));
    }
    let _ = writeln!(log, "replay matches all {} recorded outputs", recorded.outputs.len());
    Ok(fresh)
}
