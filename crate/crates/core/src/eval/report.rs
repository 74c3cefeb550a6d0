use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    fn refresh(&mut self) {
        let n = self.runs.len() as f64;
        self.mean = self.runs.iter().sum::<f64>() / n;
        self.std = if self.runs.len() < 2 {
            0.0
        } else {
            (self.runs.iter().map(|x| (x - self.mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
    }
}

/// Metrics accumulated over independent runs, with the seeds and the
/// effective configuration that produced them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricReport {
    pub fn new(command: impl Into<String>, config: BTreeMap<String, String>) -> Self {
        Self {
            command: command.into(),
            config,
            ..Self::default()
        }
    }

    pub fn push(&mut self, name: &str, value: f64) {
        let m = self.metrics.entry(name.to_string()).or_default();
        m.runs.push(value);
        m.refresh();
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report serialization: {e}")))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_keeps_runs() {
        let mut r = MetricReport::new("classify", BTreeMap::new());
        r.seeds = vec![1, 2, 3];
        for x in [0.5, 0.7, 0.9] {
            r.push("accuracy", x);
        }
        let m = &r.metrics["accuracy"];
        assert_eq!(m.runs, vec![0.5, 0.7, 0.9]);
        assert!((m.mean - 0.7).abs() < 1e-15);
        assert!((m.std - 0.2).abs() < 1e-12);
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
