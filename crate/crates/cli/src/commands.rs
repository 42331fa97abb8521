use std::path::{Path, PathBuf};

use log::info;
use noodle_core::datagen::{load_features_csv, load_ood_csv, save_features_csv, save_ood_csv, LabeledSet};
use noodle_core::eval::{emit_report, ReportFormat};
use noodle_core::experiment::{
    evaluate_model, generate_synthetic, load_csv_bundle, report_header, run_experiment, DatasetSpec,
    ExperimentSpec, MethodSpec, RunRecord, SyntheticSpec,
};
use noodle_core::linalg::Matrix;
use noodle_core::model::Checkpoint;
use noodle_core::ood::{load_store, save_store};
use noodle_core::trainer::train as train_model;
use noodle_core::{NoodleError, Result};

use crate::Options;

pub const DEFAULT_OUT: &str = "noodle_out";
pub const TRAIN_FILE: &str = "train.csv";
pub const VAL_FILE: &str = "val.csv";
pub const TEST_FILE: &str = "test.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STORE_FILE: &str = "store.json";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

fn ood_file(name: &str) -> String {
    format!("ood_{name}.csv")
}

/// The spec from `--config` (or defaults) with command-line overrides applied.
fn load_spec(opts: &Options) -> Result<ExperimentSpec> {
    let mut spec = match &opts.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(rate) = opts.noise_rate {
        spec.noise.rate = rate;
    }
    if let Some(epochs) = opts.epochs {
        spec.train.epochs = epochs;
    }
    if let Some(seed) = opts.seed {
        spec.seeds = vec![seed];
    }
    for m in &mut spec.methods {
        apply_method_overrides(m, opts);
    }
    if let Some(out) = &opts.out {
        spec.output_dir = Some(out.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn apply_method_overrides(m: &mut MethodSpec, opts: &Options) {
    if let Some(loss) = opts.loss {
        m.loss_kind = loss;
    }
    if let Some(lambda) = opts.lambda {
        m.lambda = lambda;
    }
    if let Some(score) = opts.score {
        m.score = score;
    }
    if let Some(k) = opts.k {
        m.k = k;
    }
}

fn out_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| NoodleError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn synthetic(spec: &ExperimentSpec) -> Option<&SyntheticSpec> {
    match &spec.dataset {
        DatasetSpec::Synthetic(s) => Some(s),
        DatasetSpec::Csv(_) => None,
    }
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(NoodleError::Config(format!("{} not found; {hint}", path.display())))
    }
}

pub fn gen_data(opts: &Options) -> Result<()> {
    let spec = load_spec(opts)?;
    let syn = synthetic(&spec)
        .ok_or_else(|| NoodleError::Config("gen-data needs a synthetic dataset".into()))?;
    let dir = out_dir(&spec);
    create_dir(&dir)?;
    let bundle = generate_synthetic(syn, &spec.noise, spec.seeds[0])?;

    let mut manifest: Vec<(PathBuf, usize)> = Vec::new();
    let mut write_set = |name: &str, set: &LabeledSet| -> Result<()> {
        let path = dir.join(name);
        save_features_csv(set, &path)?;
        manifest.push((path, set.len()));
        Ok(())
    };
    write_set(TRAIN_FILE, &bundle.train)?;
    if let Some(val) = &bundle.val {
        write_set(VAL_FILE, val)?;
    }
    write_set(TEST_FILE, &bundle.test)?;
    for (name, x) in &bundle.ood {
        let path = dir.join(ood_file(name));
        save_ood_csv(x, &path)?;
        manifest.push((path, x.rows()));
    }
    for (path, rows) in &manifest {
        println!("{}\t{rows}", path.display());
    }
    info!("train label noise fraction {:.4}", bundle.train.noise_fraction());
    Ok(())
}

pub fn train(opts: &Options) -> Result<()> {
    let spec = load_spec(opts)?;
    let dir = out_dir(&spec);
    let method = spec.methods[0].clone();
    let config = method.train_config(&spec.train, spec.seeds[0]);
    let data = match &spec.dataset {
        DatasetSpec::Synthetic(s) => {
            let path = dir.join(TRAIN_FILE);
            require_file(&path, "run `noodle gen-data` first")?;
            load_features_csv(&path, Some(s.num_classes))?
        }
        DatasetSpec::Csv(c) => load_features_csv(&c.train, None)?,
    };
    create_dir(&dir)?;
    let result = train_model(&data, &config)?;

    let theta = config
        .loss_kind
        .uses_transition()
        .then(|| result.transition.theta.clone());
    Checkpoint::new(result.params.clone(), theta, result.config_hash.clone()).save(&dir.join(CHECKPOINT_FILE))?;
    save_store(&result.store, &dir.join(STORE_FILE))?;
    let mut trace = String::from("epoch,mean_loss\n");
    for (e, v) in result.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{e},{v}\n"));
    }
    let trace_path = dir.join(LOSS_TRACE_FILE);
    std::fs::write(&trace_path, trace).map_err(|e| NoodleError::Io {
        path: trace_path.clone(),
        source: e,
    })?;
    RunRecord::new(config.clone(), method).save(&dir.join(RUN_FILE))?;

    println!("checkpoint {}", result.params.checksum());
    println!("config {}", result.config_hash);
    if let Some(last) = result.loss_trace.last() {
        println!("final mean loss {last}");
    }
    Ok(())
}

pub fn eval(opts: &Options) -> Result<()> {
    let spec = load_spec(opts)?;
    let dir = out_dir(&spec);
    for file in [RUN_FILE, CHECKPOINT_FILE, STORE_FILE] {
        require_file(&dir.join(file), "run `noodle train` first")?;
    }
    let record = RunRecord::load(&dir.join(RUN_FILE))?;
    let mut method = record.method.clone();
    if let Some(score) = opts.score {
        method.score = score;
    }
    if let Some(k) = opts.k {
        method.k = k;
    }
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let store = load_store(&dir.join(STORE_FILE))?;
    if store.meta.encoder_checksum != ckpt.param_checksum {
        return Err(NoodleError::Config(
            "store was built by a different checkpoint; retrain".into(),
        ));
    }

    let (test, val, ood) = match &spec.dataset {
        DatasetSpec::Synthetic(s) => {
            let k = Some(ckpt.architecture.num_classes);
            let test_path = dir.join(TEST_FILE);
            require_file(&test_path, "run `noodle gen-data` first")?;
            let test = load_features_csv(&test_path, k)?;
            let val_path = dir.join(VAL_FILE);
            let val = if val_path.is_file() {
                Some(load_features_csv(&val_path, k)?)
            } else {
                None
            };
            let mut ood: Vec<(String, Matrix)> = Vec::new();
            for o in &s.ood {
                let name = o.display_name();
                let path = dir.join(ood_file(&name));
                require_file(&path, "run `noodle gen-data` first")?;
                ood.push((name, load_ood_csv(&path)?));
            }
            (test, val, ood)
        }
        DatasetSpec::Csv(c) => {
            let b = load_csv_bundle(c)?;
            (b.test, b.val, b.ood)
        }
    };

    let header = report_header(&method, &record.train);
    let report = evaluate_model(&ckpt.params, &store, &test, val.as_ref(), &ood, &method, header)?;
    emit_report(&report, &dir.join(REPORT_JSON), ReportFormat::Json)?;
    emit_report(&report, &dir.join(REPORT_CSV), ReportFormat::Csv)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn experiment(opts: &Options) -> Result<()> {
    if opts.config.is_none() {
        return Err(NoodleError::Config("experiment needs --config".into()));
    }
    let mut spec = load_spec(opts)?;
    if spec.output_dir.is_none() {
        spec.output_dir = Some(PathBuf::from(DEFAULT_OUT));
    }
    if let Some(n) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| NoodleError::Config(format!("thread pool: {e}")))?;
    }
    let outcome = run_experiment(&spec)?;
    print!("{}", outcome.to_csv());
    for c in outcome.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "warning: {} seed {} failed: {}",
            c.method,
            c.seed,
            c.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}
