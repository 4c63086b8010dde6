use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use fms_core::diff::{checkpoint, ParameterStore};
use fms_core::eval::MetricsReport;
use fms_core::kg::{load_dataset, Dataset};
use fms_core::model::{
    evaluate_split, flowvis_rows, relation_correlation, train, EvalScope, EvalSettings, Model, Split,
};

use crate::config::RunConfig;
use crate::error::CliError;

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.dataset_dir()?;
    load_dataset(dir, cfg.setting).map_err(|e| CliError::Data(e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn eval_settings(cfg: &RunConfig, split: Split) -> EvalSettings {
    EvalSettings {
        split,
        candidate_cap: cfg.train.candidate_cap,
        seed: cfg.train.seed,
        category_threshold: cfg.category_threshold,
        exec: cfg.train.exec,
    }
}

fn report_json(
    cfg: &RunConfig,
    dataset: &Dataset,
    model: &Model,
    store: &ParameterStore<f32>,
    split: Split,
) -> Result<MetricsReport, CliError> {
    let report = evaluate_split(model, store, dataset, &eval_settings(cfg, split))?;
    Ok(report.to_json(
        model.config().task.as_str(),
        &dataset.name,
        cfg.setting.as_str(),
        cfg.train.candidate_cap,
    ))
}

fn to_json(report: &MetricsReport) -> Result<String, CliError> {
    serde_json::to_string_pretty(report).map_err(|e| CliError::Data(e.to_string()))
}

/// Trains, keeps the best-validation parameters, and reports test metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required for train".into()))?;
    cfg.train.validate()?;
    let dataset = load(cfg)?;
    ensure_dir(&out)?;
    write_file(&out.join("resolved_config"), cfg.resolved().as_bytes())?;

    let log_path = out.join("epochs.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut log_err = None;
    let outcome = train(&dataset, &cfg.train, |e| {
        let line = serde_json::to_string(e).expect("epoch log serialises");
        eprintln!("epoch {} loss {:.5} valid_mrr {:.4} ({:.1}s)", e.epoch, e.train_loss, e.valid_mrr, e.seconds);
        if let Err(err) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(err);
        }
    });
    if let Some(err) = log_err {
        return Err(CliError::Data(format!("{}: {err}", log_path.display())));
    }
    let outcome = outcome?;

    let ckpt = cfg.checkpoint_path().expect("out is set");
    checkpoint::save(&outcome.store, &ckpt)?;
    let report = report_json(cfg, &dataset, &outcome.model, &outcome.store, Split::Test)?;
    let json = to_json(&report)?;
    write_file(&out.join("metrics.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

/// Builds the model for `cfg` and fills it from the checkpoint.
fn restore(cfg: &RunConfig, dataset: &Dataset) -> Result<(Model, ParameterStore<f32>), CliError> {
    let path = cfg
        .checkpoint_path()
        .ok_or_else(|| CliError::Usage("--checkpoint (or --out) is required".into()))?;
    cfg.train.model.validate()?;
    let mut store = ParameterStore::<f32>::new();
    let model = Model::new(cfg.train.model, dataset.num_relations(), &mut store, cfg.train.seed)?;
    checkpoint::load_into(&mut store, &path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((model, store))
}

/// Evaluates a saved checkpoint; writes `<out>/eval_<split>.json` when `--out` is set.
pub fn cmd_eval(cfg: &RunConfig, split: Split) -> Result<(), CliError> {
    let dataset = load(cfg)?;
    let (model, store) = restore(cfg, &dataset)?;
    let json = to_json(&report_json(cfg, &dataset, &model, &store, split)?)?;
    if let Some(out) = &cfg.out {
        ensure_dir(out)?;
        write_file(&out.join(format!("eval_{split}.json")), json.as_bytes())?;
    }
    println!("{json}");
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    /// Context-relation by predicted-relation co-activation matrix.
    Correlation,
    /// Static and modulated score vectors and messages per query.
    Flowvis,
}

pub fn cmd_export(cfg: &RunConfig, kind: ExportKind, split: Split) -> Result<(), CliError> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required for export".into()))?;
    let dataset = load(cfg)?;
    let (model, store) = restore(cfg, &dataset)?;
    let scope = EvalScope::new(&dataset, split)?;
    ensure_dir(&out)?;
    let rel_names = dataset.relations.names();
    let seed = cfg.train.seed;
    let path = match kind {
        ExportKind::Correlation => {
            let m = relation_correlation(&model, &store, &scope.graph, &scope.queries, seed)?;
            let path = out.join("correlation.csv");
            let mut w = csv_writer(&path)?;
            let header = std::iter::once("context_relation").chain(rel_names.iter().map(String::as_str));
            w.write_record(header).map_err(csv_err)?;
            for (name, row) in rel_names.iter().zip(&m) {
                let record = std::iter::once(name.clone()).chain(row.iter().map(|x| x.to_string()));
                w.write_record(record).map_err(csv_err)?;
            }
            w.flush()?;
            path
        }
        ExportKind::Flowvis => {
            let rows = flowvis_rows(&model, &store, &scope.graph, &scope.queries, seed)?;
            let path = out.join("flowvis.csv");
            let mut w = csv_writer(&path)?;
            let d = cfg.train.model.context.dim;
            let mut header = vec!["head".to_string(), "relation".into(), "tail".into()];
            for prefix in ["static", "modulated", "m_h", "m_t"] {
                header.extend((0..d).map(|i| format!("{prefix}_{i}")));
            }
            w.write_record(&header).map_err(csv_err)?;
            let entity = |i: usize| match &dataset.inductive {
                Some(ind) if split == Split::Test => ind.entities.name(i),
                _ => dataset.entities.name(i),
            };
            for r in rows {
                let mut record = vec![
                    entity(r.query.head).unwrap_or("?").to_string(),
                    rel_names[r.query.rel].clone(),
                    entity(r.query.tail).unwrap_or("?").to_string(),
                ];
                for v in [&r.static_score, &r.modulated, &r.m_h, &r.m_t] {
                    record.extend(v.iter().map(|x| x.to_string()));
                }
                w.write_record(&record).map_err(csv_err)?;
            }
            w.flush()?;
            path
        }
    };
    println!("{}", path.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}
