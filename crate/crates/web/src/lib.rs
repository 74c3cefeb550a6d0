//! WebAssembly bindings for the browser demo in `www/`.

use wasm_bindgen::prelude::*;

use tkae::data::{
    gen_classes, gen_sines, impute_simple, inject_missing, sine_grid, sine_series, ClassGenConfig, Dataset,
    ImputeMode, MtsSample, SineGenConfig, Split,
};
use tkae::numeric::Matrix;
use tkae::rae::{impute_with_decoder, train, Architecture, CellKind, TkaeModel, TrainConfig};
use tkae::tck::{build_kernel, TckConfig};

fn js_err(e: tkae::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn sample(a: f64, b: f64, length: usize) -> Result<MtsSample, JsError> {
    let y = sine_series(a, b, &sine_grid(length));
    let m = Matrix::from_vec(1, length, y).map_err(js_err)?;
    MtsSample::new("query", m, None).map_err(js_err)
}

/// A small recurrent autoencoder trained incrementally on random sinusoids.
#[wasm_bindgen]
pub struct SineDemo {
    train: Dataset,
    model: TkaeModel,
    seed: u64,
    epochs: usize,
    length: usize,
}

#[wasm_bindgen]
impl SineDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_train: usize, length: usize) -> Result<SineDemo, JsError> {
        let (train, _) = gen_sines(&SineGenConfig {
            n_train,
            n_test: 1,
            length,
            seed: seed as u64,
        })
        .map_err(js_err)?;
        let arch = Architecture::new(CellKind::Gru, 1, 5, 1, true).map_err(js_err)?;
        Ok(SineDemo {
            train,
            model: TkaeModel::new(arch, seed as u64),
            seed: seed as u64,
            epochs: 0,
            length,
        })
    }

    /// Runs `n` more epochs and returns their mean losses.
    pub fn train_epochs(&mut self, n: usize, learning_rate: f64) -> Result<Vec<f64>, JsError> {
        let cfg = TrainConfig {
            epochs: n,
            learning_rate,
            seed: self.seed.wrapping_add(self.epochs as u64 * 7919),
            ..TrainConfig::default()
        };
        let report = train(&mut self.model, &self.train, None, &cfg).map_err(js_err)?;
        self.epochs += n;
        Ok(report.loss)
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn series(&self, a: f64, b: f64) -> Vec<f64> {
        sine_series(a, b, &sine_grid(self.length))
    }

    pub fn reconstruct(&self, a: f64, b: f64) -> Result<Vec<f64>, JsError> {
        let s = sample(a, b, self.length)?;
        Ok(self.model.reconstruct_sample(&s).map_err(js_err)?.into_vec())
    }

    /// Hides `rate` of the cells and fills them back. Returns three rows of
    /// length T: observed values (NaN where hidden), LOCF, autoencoder.
    pub fn impute(&self, a: f64, b: f64, rate: f64, seed: u32) -> Result<Vec<f64>, JsError> {
        let ds = Dataset::new(vec![sample(a, b, self.length)?], Split::Test).map_err(js_err)?;
        let (holes, _) = inject_missing(&ds, rate, seed as u64).map_err(js_err)?;
        let locf = impute_simple(&holes, ImputeMode::Locf, None);
        let dec = impute_with_decoder(&self.model, &holes).map_err(js_err)?;
        let mut out = holes[0].values().as_slice().to_vec();
        out.extend_from_slice(locf[0].values().as_slice());
        out.extend_from_slice(dec[0].values().as_slice());
        Ok(out)
    }
}

/// Kernel of a small labelled toy set with injected missing values,
/// row-major `n × n` with samples grouped by class.
#[wasm_bindgen]
pub fn class_kernel(seed: u32, n_classes: usize, per_class: usize, missing_rate: f64, q: usize) -> Result<Vec<f64>, JsError> {
    let (train, _) = gen_classes(&ClassGenConfig {
        n_classes,
        n_vars: 4,
        train_per_class: per_class,
        test_per_class: 1,
        seed: seed as u64,
        ..ClassGenConfig::default()
    })
    .map_err(js_err)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by_key(|&i| train[i].label);
    let train = train.subset(&order).map_err(js_err)?;
    let (holes, _) = inject_missing(&train, missing_rate, seed as u64 + 1).map_err(js_err)?;
    let cfg = TckConfig {
        q,
        c: 5,
        ..TckConfig::default()
    };
    let (_, k) = build_kernel(&holes, &cfg, seed as u64).map_err(js_err)?;
    Ok(k.values.into_vec())
}
