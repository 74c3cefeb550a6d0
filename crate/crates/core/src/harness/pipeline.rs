//! Building blocks shared by the subcommands: data preparation, model
//! fitting behind one interface, and scoring.

use std::collections::HashMap;
use std::path::Path;

use crate::baselines::{dae_train, ffae_train, pca_fit, FfAeConfig, FfAeModel, FfTrainConfig, PcaModel};
use crate::data::{
    gen_classes, gen_ode, gen_sines, impute_simple, inject_missing, load_csv, pad_and_unroll, reshape_unrolled,
    unrolled_extent_mask, ClassGenConfig, Dataset, ImputeMode, InjectionRecord, LengthSpec, MtsSample,
    OdeGenConfig, SineGenConfig, Split, Standardizer,
};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetKind, ExperimentConfig, ModelKind};
use crate::numeric::{Matrix, Rng};
use crate::rae::{train, Architecture, TkaeModel, TrainConfig};
use crate::tck::{build_kernel, KernelMatrix, TckConfig, TckModel};

/// Independent seed for a named purpose derived from a base seed.
pub fn sub_seed(base: u64, purpose: u64) -> u64 {
    Rng::derive(base, purpose).next_u64()
}

const SEED_INJECT_TRAIN: u64 = 1;
const SEED_INJECT_TEST: u64 = 2;
const SEED_TCK: u64 = 3;

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

fn ode_config(cfg: &ExperimentConfig, seed: u64) -> OdeGenConfig {
    let mut g = if cfg.dataset == DatasetKind::OdeVar {
        OdeGenConfig::odevar(seed)
    } else {
        OdeGenConfig::odefix(seed)
    };
    if let Some(n) = cfg.n_train {
        g.n_train = n;
    }
    if let Some(n) = cfg.n_test {
        g.n_test = n;
    }
    if let Some(v) = cfg.n_vars {
        g.n_vars = v;
    }
    match (cfg.length, cfg.length_min, cfg.length_max) {
        (Some(l), _, _) => g.length = LengthSpec::Fixed { length: l },
        (None, Some(lo), Some(hi)) => g.length = LengthSpec::Range { lo, hi },
        (None, Some(lo), None) => {
            if let LengthSpec::Range { hi, .. } = g.length {
                g.length = LengthSpec::Range { lo, hi };
            }
        }
        (None, None, Some(hi)) => {
            if let LengthSpec::Range { lo, .. } = g.length {
                g.length = LengthSpec::Range { lo, hi };
            }
        }
        _ => {}
    }
    g
}

/// The ODE generator used for anomalies in one-class experiments: same
/// settings, different coupling and initial states.
pub fn anomaly_generator(cfg: &ExperimentConfig) -> OdeGenConfig {
    ode_config(cfg, cfg.anomaly_seed)
}

/// Raw (unstandardized) train and test sets described by `cfg`.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Sines => {
            let d = SineGenConfig::default();
            gen_sines(&SineGenConfig {
                n_train: cfg.n_train.unwrap_or(d.n_train),
                n_test: cfg.n_test.unwrap_or(d.n_test),
                length: cfg.length.unwrap_or(d.length),
                seed: cfg.data_seed,
            })?
        }
        DatasetKind::OdeFix | DatasetKind::OdeVar => {
            let d = gen_ode(&ode_config(cfg, cfg.data_seed))?;
            (d.train, d.test)
        }
        DatasetKind::Classes => {
            let mut g = ClassGenConfig {
                seed: cfg.data_seed,
                ..ClassGenConfig::default()
            };
            if let Some(n) = cfg.n_classes {
                g.n_classes = n;
            }
            if let Some(v) = cfg.n_vars {
                g.n_vars = v;
            }
            if let Some(n) = cfg.n_train {
                g.train_per_class = n;
            }
            if let Some(n) = cfg.n_test {
                g.test_per_class = n;
            }
            if let Some(l) = cfg.length_min {
                g.min_length = l;
            }
            if let Some(l) = cfg.length_max {
                g.max_length = l;
            }
            if let Some(x) = cfg.class_spread {
                g.class_spread = x;
            }
            if let Some(x) = cfg.class_noise {
                g.noise = x;
            }
            gen_classes(&g)?
        }
        DatasetKind::Csv => {
            let train_path = cfg
                .train_path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset = csv needs train_path".into()))?;
            let test_path = cfg
                .test_path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset = csv needs test_path".into()))?;
            (load_csv(train_path)?, load_csv(test_path)?)
        }
    };
    if train.n_vars() != test.n_vars() {
        return Err(Error::Data(format!(
            "train has {} variates, test has {}",
            train.n_vars(),
            test.n_vars()
        )));
    }
    Ok(Splits { train, test })
}

/// Standardized splits, before and after missing-value injection.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub clean_train: Dataset,
    pub clean_test: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub train_record: InjectionRecord,
    pub test_record: InjectionRecord,
    pub standardizer: Option<Standardizer>,
}

impl Prepared {
    /// Common padding length for the unrolled baselines.
    pub fn t_pad(&self) -> usize {
        self.train.t_max().max(self.test.t_max())
    }
}

pub fn prepare(cfg: &ExperimentConfig, splits: Splits) -> Result<Prepared> {
    let (clean_train, clean_test, standardizer) = if cfg.standardize {
        let st = Standardizer::fit(&splits.train)?;
        (st.transform(&splits.train)?, st.transform(&splits.test)?, Some(st))
    } else {
        (splits.train, splits.test, None)
    };
    let (train, train_record) = inject_missing(
        &clean_train,
        cfg.missing_rate,
        sub_seed(cfg.data_seed, SEED_INJECT_TRAIN),
    )?;
    let (test, test_record) = inject_missing(&clean_test, cfg.missing_rate, sub_seed(cfg.data_seed, SEED_INJECT_TEST))?;
    Ok(Prepared {
        clean_train,
        clean_test,
        train,
        test,
        train_record,
        test_record,
        standardizer,
    })
}

/// Per-variate mean of the observed training cells.
pub fn observed_means(ds: &Dataset) -> Vec<f64> {
    let v_count = ds.n_vars();
    let mut sum = vec![0.0; v_count];
    let mut n = vec![0usize; v_count];
    for s in ds.samples() {
        for v in 0..v_count {
            for t in 0..s.len() {
                if let Some(x) = s.get(v, t) {
                    sum[v] += x;
                    n[v] += 1;
                }
            }
        }
    }
    sum.iter().zip(&n).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
}

/// Missing cells replaced by the training means; observed cells untouched.
pub fn mean_filled(ds: &Dataset, means: &[f64]) -> Dataset {
    if ds.is_complete() {
        ds.clone()
    } else {
        impute_simple(ds, ImputeMode::Mean, Some(means))
    }
}

pub fn tck_config(cfg: &ExperimentConfig) -> TckConfig {
    TckConfig {
        q: cfg.tck_q,
        c: cfg.tck_c,
        n_min_frac: cfg.tck_n_min_frac,
        ..TckConfig::default()
    }
}

pub fn build_tck(cfg: &ExperimentConfig, train: &Dataset) -> Result<(TckModel, KernelMatrix)> {
    build_kernel(train, &tck_config(cfg), sub_seed(cfg.data_seed, SEED_TCK))
}

pub fn load_kernel(path: &Path) -> Result<KernelMatrix> {
    if path.extension().is_some_and(|e| e == "csv") {
        KernelMatrix::load_csv(path)
    } else {
        KernelMatrix::load(path)
    }
}

/// The prior kernel for the training split when alignment is requested.
pub fn prior_kernel(cfg: &ExperimentConfig, model: ModelKind, train: &Dataset) -> Result<Option<KernelMatrix>> {
    if model != ModelKind::Tkae || cfg.alpha == 0.0 {
        return Ok(None);
    }
    let k = match (&cfg.kernel_path, cfg.tck_inline) {
        (Some(p), _) => load_kernel(p)?,
        (None, true) => build_tck(cfg, train)?.1,
        (None, false) => {
            return Err(Error::Config(
                "alpha > 0 needs a prior kernel: set kernel_path to the output of `tkae tck`, \
                 or set tck_inline = true"
                    .into(),
            ))
        }
    };
    let ids: HashMap<&str, ()> = k.ids.iter().map(|id| (id.as_str(), ())).collect();
    if let Some(s) = train.samples().iter().find(|s| !ids.contains_key(s.id.as_str())) {
        return Err(Error::Data(format!("prior kernel has no row for training sample {}", s.id)));
    }
    Ok(Some(k))
}

/// A fitted model of any kind.
#[derive(Clone, Debug)]
pub enum Trained {
    Recurrent(TkaeModel),
    Dense { model: FfAeModel, t_pad: usize },
    Pca { model: PcaModel, t_pad: usize },
}

pub struct Fit {
    pub model: Trained,
    pub loss: Vec<f64>,
}

pub fn architecture(cfg: &ExperimentConfig, model: ModelKind, n_vars: usize) -> Result<Architecture> {
    if model == ModelKind::EncDecAd {
        Architecture::encdec_ad(cfg.cell, n_vars, cfg.d_z)
    } else {
        Architecture::new(cfg.cell, n_vars, cfg.d_z, cfg.layers, cfg.bidirectional)
    }
}

pub fn train_config(cfg: &ExperimentConfig, model: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda: cfg.lambda,
        alpha: if model == ModelKind::Tkae { cfg.alpha } else { 0.0 },
        p_s: cfg.p_s,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed,
        masked_loss: cfg.masked_loss,
        ..TrainConfig::default()
    }
}

fn ff_config(cfg: &ExperimentConfig, d_x: usize) -> FfAeConfig {
    FfAeConfig {
        d_x,
        hidden: cfg.ae_hidden,
        d_z: cfg.d_z,
        activation: cfg.activation,
        nonlinear_decoder: cfg.nonlinear_decoder,
        tied: cfg.tied,
    }
}

/// The untrained model `fit` would start from.
pub fn initial_model(cfg: &ExperimentConfig, model: ModelKind, n_vars: usize, t_pad: usize, seed: u64) -> Result<Trained> {
    Ok(match model {
        ModelKind::Tkae | ModelKind::Tae | ModelKind::EncDecAd => {
            Trained::Recurrent(TkaeModel::new(architecture(cfg, model, n_vars)?, seed))
        }
        ModelKind::FfAe | ModelKind::Dae => Trained::Dense {
            model: FfAeModel::new(ff_config(cfg, n_vars * t_pad), seed)?,
            t_pad,
        },
        ModelKind::Pca => return Err(Error::Config("PCA has no untrained state".into())),
    })
}

/// Fits `model` on `train` (missing cells are mean-filled for the inputs;
/// the masked loss, when enabled, ignores them).
pub fn fit(
    cfg: &ExperimentConfig,
    model: ModelKind,
    train_ds: &Dataset,
    kernel: Option<&KernelMatrix>,
    t_pad: usize,
    seed: u64,
) -> Result<Fit> {
    let filled = mean_filled(train_ds, &observed_means(train_ds));
    match model {
        ModelKind::Tkae | ModelKind::Tae | ModelKind::EncDecAd => {
            let mut m = TkaeModel::new(architecture(cfg, model, train_ds.n_vars())?, seed);
            let report = train(&mut m, &filled, kernel, &train_config(cfg, model, seed))?;
            Ok(Fit {
                model: Trained::Recurrent(m),
                loss: report.loss,
            })
        }
        ModelKind::FfAe | ModelKind::Dae => {
            let x = pad_and_unroll(&filled, t_pad)?;
            let mut w = unrolled_extent_mask(&filled, t_pad);
            if cfg.masked_loss {
                apply_observed_mask(&mut w, train_ds, t_pad);
            }
            let mut m = FfAeModel::new(ff_config(cfg, x.cols()), seed)?;
            let tc = FfTrainConfig {
                lambda: cfg.lambda,
                learning_rate: cfg.learning_rate,
                batch_size: cfg.batch_size,
                epochs: cfg.epochs,
                seed,
                ..FfTrainConfig::default()
            };
            let loss = if model == ModelKind::Dae {
                dae_train(&mut m, &x, Some(&w), cfg.corruption, &tc)?
            } else {
                ffae_train(&mut m, &x, Some(&w), &tc)?
            };
            Ok(Fit {
                model: Trained::Dense { model: m, t_pad },
                loss,
            })
        }
        ModelKind::Pca => {
            let x = pad_and_unroll(&filled, t_pad)?;
            let d_z = cfg.d_z.min(x.cols());
            Ok(Fit {
                model: Trained::Pca {
                    model: pca_fit(&x, d_z)?,
                    t_pad,
                },
                loss: Vec::new(),
            })
        }
    }
}

fn apply_observed_mask(w: &mut Matrix, ds: &Dataset, t_pad: usize) {
    for (i, s) in ds.samples().iter().enumerate() {
        let row = w.row_mut(i);
        for v in 0..s.n_vars() {
            for t in 0..s.len() {
                if !s.observed(v, t) {
                    row[v * t_pad + t] = 0.0;
                }
            }
        }
    }
}

fn check_pad(ds: &Dataset, t_pad: usize) -> Result<()> {
    if ds.t_max() > t_pad {
        return Err(Error::Shape(format!(
            "samples of up to {} steps exceed the model's padded length {t_pad}",
            ds.t_max()
        )));
    }
    Ok(())
}

impl Trained {
    pub fn kind(&self) -> &'static str {
        match self {
            Trained::Recurrent(_) => "recurrent",
            Trained::Dense { .. } => "dense",
            Trained::Pca { .. } => "pca",
        }
    }

    /// Fixed-size codes of complete samples, one row per sample.
    pub fn encode(&self, ds: &Dataset) -> Result<Matrix> {
        match self {
            Trained::Recurrent(m) => Ok(m.encode_dataset(ds)?.z),
            Trained::Dense { model, t_pad } => {
                check_pad(ds, *t_pad)?;
                model.encode(&pad_and_unroll(ds, *t_pad)?)
            }
            Trained::Pca { model, t_pad } => {
                check_pad(ds, *t_pad)?;
                model.encode(&pad_and_unroll(ds, *t_pad)?)
            }
        }
    }

    /// Reconstructions of complete samples, each `V × T_s`.
    pub fn reconstruct(&self, ds: &Dataset) -> Result<Vec<Matrix>> {
        let unrolled = |recon: Matrix, t_pad: usize| {
            ds.samples()
                .iter()
                .enumerate()
                .map(|(i, s)| reshape_unrolled(recon.row(i), ds.n_vars(), t_pad, s.len()))
                .collect()
        };
        match self {
            Trained::Recurrent(m) => m.reconstruct(ds),
            Trained::Dense { model, t_pad } => {
                check_pad(ds, *t_pad)?;
                Ok(unrolled(model.reconstruct(&pad_and_unroll(ds, *t_pad)?)?, *t_pad))
            }
            Trained::Pca { model, t_pad } => {
                check_pad(ds, *t_pad)?;
                Ok(unrolled(model.reconstruct(&pad_and_unroll(ds, *t_pad)?)?, *t_pad))
            }
        }
    }

    /// Per-sample reconstruction MSE over observed cells; missing inputs are
    /// mean-filled with `means` before encoding.
    pub fn reconstruction_errors(&self, ds: &Dataset, means: &[f64]) -> Result<Vec<f64>> {
        let filled = mean_filled(ds, means);
        let recon = self.reconstruct(&filled)?;
        Ok(ds
            .samples()
            .iter()
            .zip(&recon)
            .map(|(s, r)| {
                let (mut sum, mut n) = (0.0, 0usize);
                for v in 0..s.n_vars() {
                    for t in 0..s.len() {
                        if let Some(x) = s.get(v, t) {
                            sum += (x - r[(v, t)]).powi(2);
                            n += 1;
                        }
                    }
                }
                if n == 0 {
                    0.0
                } else {
                    sum / n as f64
                }
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            Trained::Recurrent(m) => m.save(path),
            Trained::Dense { model, .. } => model.save(path),
            Trained::Pca { model, .. } => model.save(path),
        }
    }
}

/// Reconstruction MSE pooled over every observed cell of `ds`.
pub fn pooled_mse(model: &Trained, ds: &Dataset, means: &[f64]) -> Result<f64> {
    let errs = model.reconstruction_errors(ds, means)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (e, s) in errs.iter().zip(ds.samples()) {
        sum += e * s.n_observed() as f64;
        n += s.n_observed();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Two leading principal coordinates of `z`, for scatter plots.
pub fn projection_2d(z: &Matrix) -> Result<Matrix> {
    let k = z.cols().min(2);
    let p = pca_fit(z, k)?;
    p.encode(z)
}

/// A test split mixing nominal samples with samples from the anomaly
/// generator; returns the split and its anomaly labels.
pub fn oneclass_test(cfg: &ExperimentConfig, nominal_test: &Dataset) -> Result<(Dataset, Vec<bool>)> {
    if cfg.dataset == DatasetKind::Csv {
        let labels = nominal_test
            .labels()
            .ok_or_else(|| Error::Data("one-class test split needs a label column (1 = anomaly)".into()))?;
        let flags: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
        if !flags.iter().any(|&f| f) {
            return Err(Error::Data("one-class test split has no anomalous samples".into()));
        }
        if flags.iter().all(|&f| f) {
            return Err(Error::Data("one-class test split has no nominal samples".into()));
        }
        return Ok((nominal_test.clone(), flags));
    }
    if !matches!(cfg.dataset, DatasetKind::OdeFix | DatasetKind::OdeVar) {
        return Err(Error::Config("one-class experiments use dataset = odefix, odevar or csv".into()));
    }
    let n = nominal_test.len();
    let n_anom = ((n as f64) * cfg.anomaly_fraction).round() as usize;
    if n_anom == 0 || n_anom >= n {
        return Err(Error::Config(format!(
            "anomaly_fraction {} leaves no anomalous or no nominal test samples",
            cfg.anomaly_fraction
        )));
    }
    let mut g = anomaly_generator(cfg);
    g.n_test = n_anom;
    g.n_train = 1;
    let anomalies = gen_ode(&g)?.test;
    let mut samples: Vec<MtsSample> = nominal_test.samples()[..n - n_anom].to_vec();
    let mut flags = vec![false; samples.len()];
    for s in anomalies.into_samples() {
        let mut s = s;
        s.id = format!("anomaly_{}", s.id);
        s.label = Some(1);
        samples.push(s);
        flags.push(true);
    }
    for s in samples.iter_mut().take(n - n_anom) {
        s.label = Some(0);
    }
    Ok((Dataset::new(samples, Split::Test)?, flags))
}
