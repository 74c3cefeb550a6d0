use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::Activation;
use crate::error::{Error, Result};
use crate::rae::CellKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Sines,
    OdeFix,
    OdeVar,
    Classes,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Tkae,
    Tae,
    EncDecAd,
    FfAe,
    Dae,
    Pca,
}

impl ModelKind {
    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::Tkae | ModelKind::Tae | ModelKind::EncDecAd)
    }
}

macro_rules! keyword_enum {
    ($t:ty, $what:literal, $($name:literal => $v:expr),+ $(,)?) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(DatasetKind, "dataset",
    "sines" => DatasetKind::Sines,
    "odefix" => DatasetKind::OdeFix,
    "odevar" => DatasetKind::OdeVar,
    "classes" => DatasetKind::Classes,
    "csv" => DatasetKind::Csv,
);

keyword_enum!(ModelKind, "model",
    "tkae" => ModelKind::Tkae,
    "tae" => ModelKind::Tae,
    "encdec-ad" => ModelKind::EncDecAd,
    "ffae" => ModelKind::FfAe,
    "dae" => ModelKind::Dae,
    "pca" => ModelKind::Pca,
);

/// Flat `key = value` experiment description. Generator sizes left unset
/// fall back to each generator's defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub length: Option<usize>,
    pub length_min: Option<usize>,
    pub length_max: Option<usize>,
    pub n_vars: Option<usize>,
    pub n_classes: Option<usize>,
    pub class_spread: Option<f64>,
    pub class_noise: Option<f64>,
    pub data_seed: u64,
    pub standardize: bool,
    pub missing_rate: f64,

    pub model: ModelKind,
    pub cell: CellKind,
    pub layers: usize,
    pub d_z: usize,
    pub bidirectional: bool,

    pub lambda: f64,
    pub alpha: f64,
    pub p_s: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub masked_loss: bool,

    pub ae_hidden: usize,
    pub activation: Activation,
    pub nonlinear_decoder: bool,
    pub tied: bool,
    pub corruption: f64,

    pub kernel_path: Option<PathBuf>,
    pub tck_inline: bool,
    pub tck_q: usize,
    pub tck_c: usize,
    pub tck_n_min_frac: f64,

    pub knn_k: usize,
    pub anomaly_seed: u64,
    pub anomaly_fraction: f64,

    pub n_runs: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Sines,
            train_path: None,
            test_path: None,
            n_train: None,
            n_test: None,
            length: None,
            length_min: None,
            length_max: None,
            n_vars: None,
            n_classes: None,
            class_spread: None,
            class_noise: None,
            data_seed: 0,
            standardize: true,
            missing_rate: 0.0,
            model: ModelKind::Tae,
            cell: CellKind::Gru,
            layers: 1,
            d_z: 10,
            bidirectional: true,
            lambda: 0.0,
            alpha: 0.0,
            p_s: 1.0,
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 500,
            masked_loss: false,
            ae_hidden: 30,
            activation: Activation::Sigmoid,
            nonlinear_decoder: true,
            tied: false,
            corruption: 0.5,
            kernel_path: None,
            tck_inline: false,
            tck_q: 30,
            tck_c: 10,
            tck_n_min_frac: 0.8,
            knn_k: 3,
            anomaly_seed: 1,
            anomaly_fraction: 0.5,
            n_runs: 1,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("key '{key}' expects true or false, got '{value}'"))),
    }
}

fn opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show<T: fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn show_path(x: &Option<PathBuf>) -> String {
    x.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = v.parse()?,
            "train_path" => self.train_path = opt(key, v)?,
            "test_path" => self.test_path = opt(key, v)?,
            "n_train" => self.n_train = opt(key, v)?,
            "n_test" => self.n_test = opt(key, v)?,
            "length" => self.length = opt(key, v)?,
            "length_min" => self.length_min = opt(key, v)?,
            "length_max" => self.length_max = opt(key, v)?,
            "n_vars" => self.n_vars = opt(key, v)?,
            "n_classes" => self.n_classes = opt(key, v)?,
            "class_spread" => self.class_spread = opt(key, v)?,
            "class_noise" => self.class_noise = opt(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "standardize" => self.standardize = parse_bool(key, v)?,
            "missing_rate" => self.missing_rate = parse(key, v)?,
            "model" => self.model = v.parse()?,
            "cell" => self.cell = v.parse()?,
            "layers" => self.layers = parse(key, v)?,
            "d_z" => self.d_z = parse(key, v)?,
            "bidirectional" => self.bidirectional = parse_bool(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "p_s" => self.p_s = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "masked_loss" => self.masked_loss = parse_bool(key, v)?,
            "ae_hidden" => self.ae_hidden = parse(key, v)?,
            "activation" => self.activation = v.parse()?,
            "nonlinear_decoder" => self.nonlinear_decoder = parse_bool(key, v)?,
            "tied" => self.tied = parse_bool(key, v)?,
            "corruption" => self.corruption = parse(key, v)?,
            "kernel_path" => self.kernel_path = opt(key, v)?,
            "tck_inline" => self.tck_inline = parse_bool(key, v)?,
            "tck_q" => self.tck_q = parse(key, v)?,
            "tck_c" => self.tck_c = parse(key, v)?,
            "tck_n_min_frac" => self.tck_n_min_frac = parse(key, v)?,
            "knn_k" => self.knn_k = parse(key, v)?,
            "anomaly_seed" => self.anomaly_seed = parse(key, v)?,
            "anomaly_fraction" => self.anomaly_fraction = parse(key, v)?,
            "n_runs" => self.n_runs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.to_string()),
            ("train_path", show_path(&self.train_path)),
            ("test_path", show_path(&self.test_path)),
            ("n_train", show(&self.n_train)),
            ("n_test", show(&self.n_test)),
            ("length", show(&self.length)),
            ("length_min", show(&self.length_min)),
            ("length_max", show(&self.length_max)),
            ("n_vars", show(&self.n_vars)),
            ("n_classes", show(&self.n_classes)),
            ("class_spread", show(&self.class_spread)),
            ("class_noise", show(&self.class_noise)),
            ("data_seed", self.data_seed.to_string()),
            ("standardize", self.standardize.to_string()),
            ("missing_rate", self.missing_rate.to_string()),
            ("model", self.model.to_string()),
            ("cell", self.cell.to_string()),
            ("layers", self.layers.to_string()),
            ("d_z", self.d_z.to_string()),
            ("bidirectional", self.bidirectional.to_string()),
            ("lambda", self.lambda.to_string()),
            ("alpha", self.alpha.to_string()),
            ("p_s", self.p_s.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("masked_loss", self.masked_loss.to_string()),
            ("ae_hidden", self.ae_hidden.to_string()),
            ("activation", self.activation.to_string()),
            ("nonlinear_decoder", self.nonlinear_decoder.to_string()),
            ("tied", self.tied.to_string()),
            ("corruption", self.corruption.to_string()),
            ("kernel_path", show_path(&self.kernel_path)),
            ("tck_inline", self.tck_inline.to_string()),
            ("tck_q", self.tck_q.to_string()),
            ("tck_c", self.tck_c.to_string()),
            ("tck_n_min_frac", self.tck_n_min_frac.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("anomaly_seed", self.anomaly_seed.to_string()),
            ("anomaly_fraction", self.anomaly_fraction.to_string()),
            ("n_runs", self.n_runs.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn render(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing_rate must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption) || !(0.0..1.0).contains(&self.anomaly_fraction) {
            return Err(Error::Config("corruption must lie in [0, 1] and anomaly_fraction in [0, 1)".into()));
        }
        if self.n_runs == 0 || self.d_z == 0 || self.layers == 0 || self.knn_k == 0 {
            return Err(Error::Config("n_runs, d_z, layers and knn_k must be positive".into()));
        }
        if self.dataset == DatasetKind::Csv && self.train_path.is_none() {
            return Err(Error::Config("dataset = csv needs train_path".into()));
        }
        if self.model == ModelKind::Tae && self.alpha != 0.0 {
            return Err(Error::Config("model = tae means alpha = 0; use model = tkae".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_text() {
        let mut c = ExperimentConfig::default();
        c.set("dataset", "odevar").unwrap();
        c.set("alpha", "0.1").unwrap();
        c.set("model", "tkae").unwrap();
        c.set("kernel_path", "k.bin").unwrap();
        c.set("n_train", "40").unwrap();
        let back = ExperimentConfig::parse_str(&c.render()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ExperimentConfig::parse_str("colour = red"), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse_str("epochs = many").is_err());
        assert!(ExperimentConfig::parse_str("model = lstm").is_err());
        assert!(ExperimentConfig::parse_str("just words").is_err());
        let c = ExperimentConfig::parse_str("# comment\n\nepochs = 3 # trailing\n").unwrap();
        assert_eq!(c.epochs, 3);
    }
}
