use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MtsSample};
use crate::error::{Error, Result};
use crate::numeric::{clip_global_norm, AdamState, Matrix, Rng, StepOutcome, Tape, Var};
use crate::rae::loss::{forward_loss, LossSpec};
use crate::rae::model::{Batch, TkaeModel};
use crate::tck::KernelMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// ℓ2 weight on the weight matrices.
    pub lambda: f64,
    /// Kernel-alignment weight; 0 gives the plain recurrent autoencoder.
    pub alpha: f64,
    /// Probability that the decoder is fed its own previous output.
    pub p_s: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Reconstruction loss over observed cells only.
    pub masked_loss: bool,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: 0.0,
            p_s: 1.0,
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 500,
            seed: 0,
            masked_loss: false,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_s) {
            return Err(Error::Config(format!("p_s must lie in [0, 1], got {}", self.p_s)));
        }
        if !(self.lambda >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::Config("lambda and alpha must be non-negative".into()));
        }
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 || !(self.clip_norm > 0.0) {
            return Err(Error::Config("need learning_rate >= 0, batch_size >= 1, clip_norm > 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch means over mini-batches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: Vec<f64>,
    pub recon: Vec<f64>,
    pub align: Vec<f64>,
    pub skipped_steps: usize,
}

/// Kernel rows/cols for the training samples, in dataset order.
fn kernel_index(ds: &Dataset, k: &KernelMatrix) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = k.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    ds.samples()
        .iter()
        .map(|s| {
            pos.get(s.id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("sample {} has no row in the prior kernel", s.id)))
        })
        .collect()
}

/// Mini-batch Adam on the composite loss. The scheduled-sampling coins and
/// the batch order of epoch `e` come from a stream derived from `(seed, e)`.
pub fn train(
    model: &mut TkaeModel,
    ds: &Dataset,
    kernel: Option<&KernelMatrix>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if ds.n_vars() != model.arch.n_vars {
        return Err(Error::Data(format!(
            "dataset has {} variates, model expects {}",
            ds.n_vars(),
            model.arch.n_vars
        )));
    }
    let kidx = match (cfg.alpha > 0.0, kernel) {
        (true, None) => return Err(Error::Config("alpha > 0 requires a prior kernel".into())),
        (true, Some(k)) => Some(kernel_index(ds, k)?),
        _ => None,
    };
    let mut params = model.params().to_vec();
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derive(cfg.seed, epoch as u64);
        rng.shuffle(&mut order);
        let (mut sum_loss, mut sum_rec, mut sum_al, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&MtsSample> = idx.iter().map(|&i| &ds[i]).collect();
            let batch = Batch::new(&samples, cfg.masked_loss)?;
            let coins: Vec<bool> = (0..batch.t_max())
                .map(|_| {
                    let u = rng.uniform();
                    u < cfg.p_s
                })
                .collect();
            let kblock = match (&kidx, kernel) {
                (Some(kix), Some(k)) => {
                    let rows: Vec<usize> = idx.iter().map(|&i| kix[i]).collect();
                    Some(k.values.select(&rows, &rows))
                }
                _ => None,
            };
            let mut tape = Tape::new();
            let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let spec = LossSpec {
                lambda: cfg.lambda,
                alpha: cfg.alpha,
                kernel: kblock.as_ref(),
                coins: &coins,
            };
            let nodes = forward_loss(&mut tape, &model.arch, &leaves, &batch, &spec)?;
            let loss = tape.scalar_value(nodes.total);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi} (reconstruction {})",
                    tape.scalar_value(nodes.recon)
                )));
            }
            sum_loss += loss;
            sum_rec += tape.scalar_value(nodes.recon);
            sum_al += nodes.align.map_or(0.0, |a| tape.scalar_value(a));
            n_batches += 1;
            let mut g = tape.backward(nodes.total)?;
            let mut grads: Vec<Matrix> = leaves.iter().map(|&l| g.take(l)).collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            if adam.step(&mut params, &grads)? == StepOutcome::SkippedNonFinite {
                report.skipped_steps += 1;
            }
        }
        let nb = n_batches as f64;
        report.loss.push(sum_loss / nb);
        report.recon.push(sum_rec / nb);
        report.align.push(sum_al / nb);
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            log::debug!(
                "epoch {epoch}: loss {:.6} recon {:.6} align {:.6}",
                sum_loss / nb,
                sum_rec / nb,
                sum_al / nb
            );
        }
    }
    *model.params_mut() = params;
    Ok(report)
}

fn zero_filled(sample: &MtsSample) -> MtsSample {
    let mut s = sample.clone();
    if !s.is_complete() {
        s.fill_missing_with(|_, _| 0.0);
    }
    s
}

/// MSE between the observed cells of `sample` and its generative
/// reconstruction. Missing cells are zero-filled for the encoder.
pub fn reconstruction_error(model: &TkaeModel, sample: &MtsSample) -> Result<f64> {
    let input = zero_filled(sample);
    let recon = model.reconstruct_sample(&input)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in 0..sample.n_vars() {
        for t in 0..sample.len() {
            if let Some(x) = sample.get(v, t) {
                sum += (x - recon[(v, t)]).powi(2);
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Scores for every sample of `ds` (batched).
pub fn reconstruction_errors(model: &TkaeModel, ds: &Dataset) -> Result<Vec<f64>> {
    let filled = Dataset::new(ds.samples().iter().map(zero_filled).collect(), ds.split)?;
    let recon = model.reconstruct(&filled)?;
    Ok(ds
        .samples()
        .iter()
        .zip(&recon)
        .map(|(s, r)| {
            let mut sum = 0.0;
            let mut n = 0usize;
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

/// Missing cells of each sample replaced by the generative reconstruction;
/// observed cells and the mask are kept.
pub fn impute_with_decoder(model: &TkaeModel, ds: &Dataset) -> Result<Dataset> {
    let filled: Vec<MtsSample> = ds.samples().iter().map(zero_filled).collect();
    let filled_ds = Dataset::new(filled, ds.split)?;
    let recon = model.reconstruct(&filled_ds)?;
    let out = ds
        .samples()
        .iter()
        .zip(&recon)
        .map(|(s, r)| {
            let mut s = s.clone();
            s.fill_missing_with(|v, t| r[(v, t)]);
            s
        })
        .collect();
    Dataset::new(out, ds.split)
}
