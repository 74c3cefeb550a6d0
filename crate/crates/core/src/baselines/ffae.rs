use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{pad_and_unroll, reshape_unrolled, Dataset, MtsSample};
use crate::error::{Error, Result};
use crate::numeric::{clip_global_norm, AdamState, Matrix, Rng, StepOutcome, Tape, Var};
use crate::persist::{read_file, Reader, Writer};

const MAGIC: &[u8; 4] = b"FFAE";
const FORMAT_VERSION: u32 = 1;
const CORRUPTION_STREAM: u64 = 0xC0_22_09_7E;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Linear => x,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Sigmoid),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Linear),
            _ => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// `{D_x, hidden, D_z, hidden, D_x}` dense autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfAeConfig {
    pub d_x: usize,
    pub hidden: usize,
    pub d_z: usize,
    /// ψ on the two encoder layers.
    pub activation: Activation,
    /// Apply ψ on the decoder hidden layer too; the output layer is always linear.
    pub nonlinear_decoder: bool,
    /// Decoder matrices are the transposes of the encoder matrices.
    pub tied: bool,
}

impl FfAeConfig {
    pub fn new(d_x: usize, d_z: usize) -> Self {
        Self {
            d_x,
            hidden: 30,
            d_z,
            activation: Activation::Sigmoid,
            nonlinear_decoder: true,
            tied: false,
        }
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let (x, h, z) = (self.d_x, self.hidden, self.d_z);
        if self.tied {
            vec![(x, h), (1, h), (h, z), (1, z), (1, h), (1, x)]
        } else {
            vec![(x, h), (1, h), (h, z), (1, z), (z, h), (1, h), (h, x), (1, x)]
        }
    }

    fn is_weight(&self, k: usize) -> bool {
        if self.tied {
            k < 4 && k.is_multiple_of(2)
        } else {
            k.is_multiple_of(2)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfAeModel {
    pub config: FfAeConfig,
    params: Vec<Matrix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfTrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for FfTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 500,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

struct Nodes {
    z: Var,
    out: Var,
}

impl FfAeModel {
    pub fn new(config: FfAeConfig, seed: u64) -> Result<Self> {
        if config.d_x == 0 || config.hidden == 0 || config.d_z == 0 {
            return Err(Error::Config("autoencoder layer sizes must be positive".into()));
        }
        let mut rng = Rng::new(seed);
        let params = config
            .shapes()
            .into_iter()
            .enumerate()
            .map(|(k, (r, c))| {
                if config.is_weight(k) {
                    let s = 1.0 / (r as f64).sqrt();
                    Matrix::from_fn(r, c, |_, _| rng.uniform_range(-s, s))
                } else {
                    Matrix::zeros(r, c)
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    /// Encoder and decoder weights as used in the forward pass.
    pub fn encoder_weights(&self) -> (&Matrix, &Matrix) {
        (&self.params[0], &self.params[2])
    }

    pub fn decoder_weights(&self) -> (Matrix, Matrix) {
        if self.config.tied {
            (self.params[2].transpose(), self.params[0].transpose())
        } else {
            (self.params[4].clone(), self.params[6].clone())
        }
    }

    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Nodes> {
        let c = &self.config;
        let dense = |tape: &mut Tape, x: Var, w: Var, b: Var| -> Result<Var> {
            let y = tape.matmul(x, w)?;
            tape.add_row(y, b)
        };
        let h1 = dense(tape, x, p[0], p[1])?;
        let h1 = c.activation.apply(tape, h1);
        let z = dense(tape, h1, p[2], p[3])?;
        let z = c.activation.apply(tape, z);
        let (w3, b3, w4, b4) = if c.tied {
            (tape.transpose(p[2]), p[4], tape.transpose(p[0]), p[5])
        } else {
            (p[4], p[5], p[6], p[7])
        };
        let h3 = dense(tape, z, w3, b3)?;
        let h3 = if c.nonlinear_decoder {
            c.activation.apply(tape, h3)
        } else {
            h3
        };
        let out = dense(tape, h3, w4, b4)?;
        Ok(Nodes { z, out })
    }

    fn run(&self, x: &Matrix, want_code: bool) -> Result<Matrix> {
        if x.cols() != self.config.d_x {
            return Err(Error::Shape(format!(
                "autoencoder of width {} given rows of {}",
                self.config.d_x,
                x.cols()
            )));
        }
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|m| tape.constant(m.clone())).collect();
        let xv = tape.constant(x.clone());
        let n = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(if want_code { n.z } else { n.out }).clone())
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, true)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, false)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let c = &self.config;
        let mut w = Writer::with_header(MAGIC, FORMAT_VERSION);
        w.usize(c.d_x);
        w.usize(c.hidden);
        w.usize(c.d_z);
        w.u8(c.activation.tag());
        w.bool(c.nonlinear_decoder);
        w.bool(c.tied);
        for p in &self.params {
            w.matrix(p);
        }
        w.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (mut r, version) = Reader::open(&bytes, MAGIC, "feed-forward autoencoder")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported autoencoder format version {version}")));
        }
        let config = FfAeConfig {
            d_x: r.usize()?,
            hidden: r.usize()?,
            d_z: r.usize()?,
            activation: Activation::from_tag(r.u8()?)?,
            nonlinear_decoder: r.bool()?,
            tied: r.bool()?,
        };
        let shapes = config.shapes();
        let params = shapes
            .iter()
            .map(|&s| {
                let m = r.matrix()?;
                if m.shape() != s {
                    return Err(Error::Format(format!("parameter shape {:?}, expected {s:?}", m.shape())));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self { config, params })
    }
}

/// Trains on the rows of `x`. `weights` (same shape, 0/1) restricts the
/// loss to the cells that count, e.g. the valid extent of padded samples.
pub fn ffae_train(model: &mut FfAeModel, x: &Matrix, weights: Option<&Matrix>, cfg: &FfTrainConfig) -> Result<Vec<f64>> {
    fit(model, x, weights, 0.0, cfg)
}

/// Denoising variant: every presented input has each cell zeroed with
/// probability `corruption`; the target stays uncorrupted.
pub fn dae_train(
    model: &mut FfAeModel,
    x: &Matrix,
    weights: Option<&Matrix>,
    corruption: f64,
    cfg: &FfTrainConfig,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&corruption) {
        return Err(Error::Config(format!("corruption must lie in [0, 1], got {corruption}")));
    }
    fit(model, x, weights, corruption, cfg)
}

fn fit(model: &mut FfAeModel, x: &Matrix, weights: Option<&Matrix>, corruption: f64, cfg: &FfTrainConfig) -> Result<Vec<f64>> {
    if x.cols() != model.config.d_x || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "training matrix {:?} for an autoencoder of width {}",
            x.shape(),
            model.config.d_x
        )));
    }
    if let Some(w) = weights {
        if w.shape() != x.shape() {
            return Err(Error::Shape("loss weights must match the data matrix".into()));
        }
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) || !(cfg.lambda >= 0.0) || !(cfg.clip_norm > 0.0) {
        return Err(Error::Config("invalid autoencoder training configuration".into()));
    }
    let weight_idx: Vec<usize> = (0..model.params.len()).filter(|&k| model.config.is_weight(k)).collect();
    let mut params = model.params.clone();
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let all: Vec<usize> = (0..x.cols()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derive(cfg.seed, epoch as u64);
        let mut noise = Rng::derive(cfg.seed ^ CORRUPTION_STREAM, epoch as u64);
        rng.shuffle(&mut order);
        let (mut sum, mut nb) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let target = x.select(idx, &all);
            let mut input = target.clone();
            if corruption > 0.0 {
                input.as_mut_slice().iter_mut().for_each(|v| {
                    if noise.bernoulli(corruption) {
                        *v = 0.0;
                    }
                });
            }
            let w = match weights {
                Some(w) => w.select(idx, &all),
                None => Matrix::filled(target.rows(), target.cols(), 1.0),
            };
            let total_w = w.sum();
            let mut tape = Tape::new();
            let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let xv = tape.constant(input);
            let nodes = model.forward(&mut tape, &leaves, xv)?;
            let tv = tape.constant(target);
            let d = tape.sub(nodes.out, tv)?;
            let sq = tape.square(d);
            let wsq = tape.mul_const(sq, w)?;
            let s = tape.sum(wsq);
            let mut loss = tape.scale(s, if total_w > 0.0 { 1.0 / total_w } else { 0.0 });
            if cfg.lambda != 0.0 {
                for &k in &weight_idx {
                    let sq = tape.square(leaves[k]);
                    let s = tape.sum(sq);
                    let s = tape.scale(s, cfg.lambda);
                    loss = tape.add(loss, s)?;
                }
            }
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite autoencoder loss at epoch {epoch}")));
            }
            sum += value;
            nb += 1;
            let mut g = tape.backward(loss)?;
            let mut grads: Vec<Matrix> = leaves.iter().map(|&l| g.take(l)).collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            if adam.step(&mut params, &grads)? == StepOutcome::SkippedNonFinite {
                log::warn!("skipped a non-finite autoencoder update at epoch {epoch}");
            }
        }
        trace.push(sum / nb as f64);
    }
    model.params = params;
    Ok(trace)
}

/// Missing cells take the reconstruction of the zero-filled, padded input;
/// observed cells are kept.
pub fn dae_impute(model: &FfAeModel, ds: &Dataset, t_pad: usize) -> Result<Dataset> {
    if ds.n_vars() * t_pad != model.config.d_x {
        return Err(Error::Shape(format!(
            "{} variates padded to {t_pad} steps do not match width {}",
            ds.n_vars(),
            model.config.d_x
        )));
    }
    let zero_filled: Vec<MtsSample> = ds
        .samples()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.fill_missing_with(|_, _| 0.0);
            s
        })
        .collect();
    let x = pad_and_unroll(&Dataset::new(zero_filled, ds.split)?, t_pad)?;
    let recon = model.reconstruct(&x)?;
    let out = ds
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let r = reshape_unrolled(recon.row(i), ds.n_vars(), t_pad, s.len());
            let mut s = s.clone();
            s.fill_missing_with(|v, t| r[(v, t)]);
            s
        })
        .collect();
    Dataset::new(out, ds.split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::pca_fit;
    use crate::data::{inject_missing, Split};

    fn gaussian(n: usize, scales: &[f64], seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(n, scales.len(), |_, j| scales[j] * rng.normal())
    }

    fn mse(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().as_slice().iter().map(|d| d * d).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let x = gaussian(10, &[1.0; 4], 1);
        let mut m = FfAeModel::new(FfAeConfig::new(4, 2), 0).unwrap();
        let before = m.clone();
        let cfg = FfTrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        ffae_train(&mut m, &x, None, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn memorises_one_sample() {
        let x = gaussian(1, &[1.0; 8], 2);
        let mut m = FfAeModel::new(FfAeConfig::new(8, 2), 1).unwrap();
        let cfg = FfTrainConfig {
            epochs: 300,
            learning_rate: 0.01,
            ..Default::default()
        };
        let t = ffae_train(&mut m, &x, None, &cfg).unwrap();
        assert!(t.last().unwrap() < &(0.1 * t[0]));
    }

    #[test]
    fn tied_decoder_is_the_transpose() {
        let x = gaussian(20, &[1.0; 5], 3);
        let mut c = FfAeConfig::new(5, 2);
        c.tied = true;
        let mut m = FfAeModel::new(c, 2).unwrap();
        let cfg = FfTrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        for _ in 0..3 {
            ffae_train(&mut m, &x, None, &cfg).unwrap();
            let (we1, we2) = m.encoder_weights();
            let (wd1, wd2) = m.decoder_weights();
            assert_eq!(wd1, we2.transpose());
            assert_eq!(wd2, we1.transpose());
        }
        assert_eq!(m.params().len(), 6);
    }

    #[test]
    fn clean_dae_equals_plain_training() {
        let x = gaussian(12, &[1.0; 4], 4);
        let cfg = FfTrainConfig {
            epochs: 4,
            batch_size: 5,
            ..Default::default()
        };
        let mut a = FfAeModel::new(FfAeConfig::new(4, 2), 5).unwrap();
        let mut b = a.clone();
        let ta = ffae_train(&mut a, &x, None, &cfg).unwrap();
        let tb = dae_train(&mut b, &x, None, 0.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(dae_train(&mut b, &x, None, 1.5, &cfg).is_err());
    }

    #[test]
    fn dae_is_seed_deterministic() {
        let x = gaussian(12, &[1.0; 4], 4);
        let cfg = FfTrainConfig {
            epochs: 3,
            batch_size: 5,
            ..Default::default()
        };
        let run = || {
            let mut m = FfAeModel::new(FfAeConfig::new(4, 2), 5).unwrap();
            dae_train(&mut m, &x, None, 0.5, &cfg).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fully_corrupted_inputs_learn_the_mean() {
        let means = [1.5, -2.0, 0.5];
        let mut rng = Rng::new(8);
        let x = Matrix::from_fn(40, 3, |_, j| means[j] + 0.3 * rng.normal());
        let col_mean: Vec<f64> = (0..3).map(|j| (0..40).map(|i| x[(i, j)]).sum::<f64>() / 40.0).collect();
        let mut m = FfAeModel::new(FfAeConfig::new(3, 2), 6).unwrap();
        let cfg = FfTrainConfig {
            epochs: 600,
            learning_rate: 0.02,
            batch_size: 40,
            ..Default::default()
        };
        dae_train(&mut m, &x, None, 1.0, &cfg).unwrap();
        let out = m.reconstruct(&Matrix::zeros(1, 3)).unwrap();
        for j in 0..3 {
            assert!((out[(0, j)] - col_mean[j]).abs() < 1e-3, "{} vs {}", out[(0, j)], col_mean[j]);
        }
    }

    #[test]
    fn linear_autoencoder_approaches_pca() {
        let x = gaussian(200, &[3.0, 2.0, 1.0, 0.5, 0.3, 0.2], 9);
        let p = pca_fit(&x, 2).unwrap();
        let pca_err = mse(&x, &p.reconstruct(&x).unwrap());
        let mut c = FfAeConfig::new(6, 2);
        c.activation = Activation::Linear;
        c.nonlinear_decoder = false;
        let mut m = FfAeModel::new(c, 7).unwrap();
        let cfg = FfTrainConfig {
            epochs: 1500,
            learning_rate: 0.003,
            ..Default::default()
        };
        ffae_train(&mut m, &x, None, &cfg).unwrap();
        let err = mse(&x, &m.reconstruct(&x).unwrap());
        assert!(err <= 1.05 * pca_err, "AE {err} vs PCA {pca_err}");
    }

    fn twins(n: usize, len: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let samples = (0..n)
            .map(|i| {
                let (a, b) = (rng.uniform_range(0.2, 0.5), rng.normal());
                let m = Matrix::from_fn(2, len, |_, t| (a * t as f64 + b).sin());
                MtsSample::new(format!("t{i}"), m, None).unwrap()
            })
            .collect();
        Dataset::new(samples, Split::Train).unwrap()
    }

    #[test]
    fn imputation_keeps_observed_cells_and_uses_the_twin() {
        let (len, ds) = (10, twins(150, 10, 11));
        let x = pad_and_unroll(&ds, len).unwrap();
        let mut m = FfAeModel::new(FfAeConfig::new(2 * len, 6), 3).unwrap();
        let cfg = FfTrainConfig {
            epochs: 300,
            learning_rate: 0.005,
            ..Default::default()
        };
        dae_train(&mut m, &x, None, 0.5, &cfg).unwrap();

        assert_eq!(dae_impute(&m, &ds, len).unwrap(), ds);

        let test = twins(60, len, 12);
        // Hide the first variate on alternate steps; its twin stays observed.
        let mut holes = test.clone();
        for s in holes.samples_mut() {
            for t in (0..len).step_by(2) {
                s.hide(0, t);
            }
        }
        let out = dae_impute(&m, &holes, len).unwrap();
        let (mut truth, mut guess) = (Vec::new(), Vec::new());
        for (n, s) in out.samples().iter().enumerate() {
            for t in 0..len {
                if holes[n].observed(0, t) {
                    assert_eq!(s.value(0, t), test[n].value(0, t));
                } else {
                    truth.push(test[n].value(0, t));
                    guess.push(s.value(0, t));
                }
            }
        }
        let corr = crate::eval::pearson_corr(&truth, &guess).unwrap().value;
        assert!(corr > 0.9, "corr {corr}");

        let (blank, _) = inject_missing(&twins(1, len, 13), 1.0, 0).unwrap();
        let r = dae_impute(&m, &blank, len).unwrap();
        let zero = m.reconstruct(&Matrix::zeros(1, 2 * len)).unwrap();
        assert_eq!(r[0].values().as_slice(), zero.as_slice());
    }

    #[test]
    fn persists() {
        let mut c = FfAeConfig::new(6, 2);
        c.tied = true;
        c.activation = Activation::Tanh;
        let m = FfAeModel::new(c, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bin");
        m.save(&path).unwrap();
        assert_eq!(FfAeModel::load(&path).unwrap(), m);
    }
}
