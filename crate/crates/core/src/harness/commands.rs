use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{impute_simple, save_csv, Dataset, ImputeMode};
use crate::error::{Error, Result};
use crate::eval::{accuracy, imputation_score, knn_classify, macro_f1, roc_auc, MetricReport};
use crate::harness::config::{DatasetKind, ExperimentConfig, ModelKind};
use crate::harness::pipeline::{
    build_tck, fit, initial_model, load_splits, mean_filled, observed_means, oneclass_test, pooled_mse, prepare,
    prior_kernel, projection_2d, Trained,
};
use crate::numeric::{min_eigenvalue, Matrix};
use crate::rae::{impute_with_decoder, Representation};

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn start(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    cfg.save(cfg.out.join("config.txt"))?;
    Ok(cfg.out.clone())
}

fn report_for(command: &str, cfg: &ExperimentConfig) -> MetricReport {
    let config: BTreeMap<String, String> = cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    MetricReport::new(command, config)
}

fn run_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.n_runs as u64).map(|r| cfg.seed.wrapping_add(r)).collect()
}

fn save_matrix_csv(path: &Path, header: &[String], ids: &[String], m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut h = vec![String::from("sample_id")];
    h.extend(header.iter().cloned());
    w.write_record(&h)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(m.row(i).iter().map(|x| format!("{x}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv writer: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ids(ds: &Dataset) -> Vec<String> {
    ds.samples().iter().map(|s| s.id.clone()).collect()
}

fn save_trace(path: &Path, loss: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in loss.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    write_text(path, &s)
}

/// Writes the generated (raw) train and test splits.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    let out = start(cfg)?;
    if cfg.dataset == DatasetKind::Csv {
        return Err(Error::Config("gen needs a generator dataset, not csv".into()));
    }
    let splits = load_splits(cfg)?;
    save_csv(&splits.train, out.join("train.csv"))?;
    save_csv(&splits.test, out.join("test.csv"))?;
    log::info!(
        "wrote {} train and {} test samples to {}",
        splits.train.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

/// Builds the prior kernel on the prepared training split.
pub fn cmd_tck(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let out = start(cfg)?;
    let prep = prepare(cfg, load_splits(cfg)?)?;
    let (model, k) = build_tck(cfg, &prep.train)?;
    k.save(out.join("kernel.bin"))?;
    k.save_csv(out.join("kernel.csv"))?;
    model.save(out.join("tck_model.bin"))?;
    let mut report = report_for("tck", cfg);
    report.seeds = vec![cfg.data_seed];
    report.push("min_eigenvalue", min_eigenvalue(&k.values)?);
    report.push("trace", k.values.trace());
    report.push("asymmetry", k.asymmetry());
    report.save_json(out.join("report.json"))?;
    Ok(report)
}

/// Trains `cfg.model` once per run seed and scores test reconstruction.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let out = start(cfg)?;
    let prep = prepare(cfg, load_splits(cfg)?)?;
    let kernel = prior_kernel(cfg, cfg.model, &prep.train)?;
    let means = observed_means(&prep.train);
    let t_pad = prep.t_pad();
    let mut report = report_for("train", cfg);
    let test_filled = mean_filled(&prep.test, &means);
    for (r, seed) in run_seeds(cfg).into_iter().enumerate() {
        let dir = out.join(format!("run_{r}"));
        ensure_dir(&dir)?;
        let f = fit(cfg, cfg.model, &prep.train, kernel.as_ref(), t_pad, seed)?;
        f.model.save(dir.join("model.bin"))?;
        save_trace(&dir.join("loss.csv"), &f.loss)?;
        let mse = pooled_mse(&f.model, &prep.test, &means)?;
        let z = f.model.encode(&test_filled)?;
        Representation {
            ids: ids(&test_filled),
            z: z.clone(),
        }
        .save_csv(dir.join("representation.csv"))?;
        if z.rows() >= 1 {
            let p = projection_2d(&z)?;
            let header: Vec<String> = (1..=p.cols()).map(|k| format!("pc_{k}")).collect();
            save_matrix_csv(&dir.join("projection.csv"), &header, &ids(&test_filled), &p)?;
        }
        report.seeds.push(seed);
        report.push("test_mse", mse);
        if let Some(l) = f.loss.last() {
            report.push("final_train_loss", *l);
        }
        log::info!("run {r} (seed {seed}): test MSE {mse:.6}");
    }
    report.save_json(out.join("report.json"))?;
    Ok(report)
}

/// Imputes the injected test cells with mean, LOCF, DAE and the recurrent
/// autoencoder trained with the masked loss.
pub fn cmd_impute(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let out = start(cfg)?;
    let prep = prepare(cfg, load_splits(cfg)?)?;
    let means = observed_means(&prep.train);
    let t_pad = prep.t_pad();
    let mut report = report_for("impute", cfg);
    let score = |imputed: &Dataset| imputation_score(&prep.clean_test, imputed, &prep.test_record);

    let mean_imp = impute_simple(&prep.test, ImputeMode::Mean, Some(&means));
    let locf_imp = impute_simple(&prep.test, ImputeMode::Locf, None);
    let mut rows: Vec<(String, Vec<(f64, f64)>)> = vec![
        ("mean".into(), Vec::new()),
        ("locf".into(), Vec::new()),
        ("dae".into(), Vec::new()),
        ("tkae".into(), Vec::new()),
    ];
    let recurrent = if cfg.model.is_recurrent() {
        cfg.model
    } else {
        ModelKind::Tae
    };
    let mut rcfg = cfg.clone();
    rcfg.masked_loss = true;
    let kernel = prior_kernel(&rcfg, recurrent, &prep.train)?;
    let mut dcfg = cfg.clone();
    dcfg.masked_loss = false;
    for (r, seed) in run_seeds(cfg).into_iter().enumerate() {
        let m = score(&mean_imp)?;
        let l = score(&locf_imp)?;
        let dae = fit(&dcfg, ModelKind::Dae, &prep.train, None, t_pad, seed)?;
        let dae_imp = match &dae.model {
            Trained::Dense { model, t_pad } => crate::baselines::dae_impute(model, &prep.test, *t_pad)?,
            _ => unreachable!("DAE fit yields a dense model"),
        };
        let d = score(&dae_imp)?;
        let rec = fit(&rcfg, recurrent, &prep.train, kernel.as_ref(), t_pad, seed)?;
        let tk_imp = match &rec.model {
            Trained::Recurrent(model) => impute_with_decoder(model, &mean_filled(&prep.test, &means))?,
            _ => unreachable!("recurrent fit yields a recurrent model"),
        };
        let t = score(&tk_imp)?;
        if r == 0 {
            save_csv(&tk_imp, out.join("imputed_test.csv"))?;
        }
        for (row, s) in rows.iter_mut().zip([m, l, d, t]) {
            row.1.push((s.mse, s.corr));
            report.push(&format!("{}_mse", row.0), s.mse);
            report.push(&format!("{}_corr", row.0), s.corr);
        }
        report.push("n_cells", m.n_cells as f64);
        report.seeds.push(seed);
        log::info!("run {r}: mse mean {:.4} locf {:.4} dae {:.4} tkae {:.4}", m.mse, l.mse, d.mse, t.mse);
    }
    let mut table = String::from("method,mse,corr\n");
    for (name, _) in &rows {
        table.push_str(&format!(
            "{name},{},{}\n",
            report.mean(&format!("{name}_mse")).unwrap_or(0.0),
            report.mean(&format!("{name}_corr")).unwrap_or(0.0)
        ));
    }
    write_text(&out.join("imputation.csv"), &table)?;
    report.save_json(out.join("imputation.json"))?;
    Ok(report)
}

/// Trains on nominal samples only and scores a mixed test split by
/// reconstruction error.
pub fn cmd_oneclass(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let out = start(cfg)?;
    let splits = load_splits(cfg)?;
    let (mixed, flags) = oneclass_test(cfg, &splits.test)?;
    let train_raw = if cfg.dataset == DatasetKind::Csv {
        let keep: Vec<usize> = splits
            .train
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label.unwrap_or(0) == 0)
            .map(|(i, _)| i)
            .collect();
        splits.train.subset(&keep)?
    } else {
        splits.train
    };
    let prep = prepare(
        cfg,
        crate::harness::pipeline::Splits {
            train: train_raw,
            test: mixed,
        },
    )?;
    let means = observed_means(&prep.train);
    let t_pad = prep.t_pad();
    let kernel = prior_kernel(cfg, cfg.model, &prep.train)?;
    let mut report = report_for("oneclass", cfg);
    for (r, seed) in run_seeds(cfg).into_iter().enumerate() {
        let f = fit(cfg, cfg.model, &prep.train, kernel.as_ref(), t_pad, seed)?;
        let scores = f.model.reconstruction_errors(&prep.test, &means)?;
        let auc = roc_auc(&scores, &flags)?;
        report.push("auc", auc);
        if cfg.model != ModelKind::Pca {
            let init = initial_model(cfg, cfg.model, prep.train.n_vars(), t_pad, seed)?;
            let s0 = init.reconstruction_errors(&prep.test, &means)?;
            report.push("auc_untrained", roc_auc(&s0, &flags)?);
        }
        if r == 0 {
            let mut s = String::from("sample_id,anomaly,score\n");
            for ((smp, &a), sc) in prep.test.samples().iter().zip(&flags).zip(&scores) {
                s.push_str(&format!("{},{},{sc}\n", smp.id, u8::from(a)));
            }
            write_text(&out.join("scores.csv"), &s)?;
        }
        report.seeds.push(seed);
        log::info!("run {r}: AUC {auc:.4}");
    }
    report.save_json(out.join("report.json"))?;
    Ok(report)
}

/// kNN classification of test codes against training codes.
pub fn cmd_classify(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let out = start(cfg)?;
    let prep = prepare(cfg, load_splits(cfg)?)?;
    let train_labels = prep
        .train
        .labels()
        .ok_or_else(|| Error::Data("classification needs labelled training samples".into()))?;
    let test_labels = prep
        .test
        .labels()
        .ok_or_else(|| Error::Data("classification needs labelled test samples".into()))?;
    let means = observed_means(&prep.train);
    let t_pad = prep.t_pad();
    let kernel = prior_kernel(cfg, cfg.model, &prep.train)?;
    let train_filled = mean_filled(&prep.train, &means);
    let test_filled = mean_filled(&prep.test, &means);
    let mut report = report_for("classify", cfg);
    for (r, seed) in run_seeds(cfg).into_iter().enumerate() {
        let f = fit(cfg, cfg.model, &prep.train, kernel.as_ref(), t_pad, seed)?;
        let z_train = f.model.encode(&train_filled)?;
        let z_test = f.model.encode(&test_filled)?;
        let pred = knn_classify(&z_train, &train_labels, &z_test, cfg.knn_k)?;
        let acc = accuracy(&test_labels, &pred)?;
        report.push("accuracy", acc);
        report.push("macro_f1", macro_f1(&test_labels, &pred)?);
        report.push("test_mse", pooled_mse(&f.model, &prep.test, &means)?);
        if r == 0 {
            Representation {
                ids: ids(&test_filled),
                z: z_test.clone(),
            }
            .save_csv(out.join("representation.csv"))?;
            let p = projection_2d(&z_test)?;
            let header: Vec<String> = (1..=p.cols()).map(|k| format!("pc_{k}")).collect();
            save_matrix_csv(&out.join("projection.csv"), &header, &ids(&test_filled), &p)?;
        }
        report.seeds.push(seed);
        log::info!("run {r}: accuracy {acc:.4}");
    }
    report.save_json(out.join("report.json"))?;
    Ok(report)
}
