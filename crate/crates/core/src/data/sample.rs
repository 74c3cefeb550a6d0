use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// One multivariate series: `V` variates by `T` steps, with an observation mask.
///
/// Missing cells hold `NaN` in `values` until they are imputed. Code that is
/// mask-aware never reads them; code that is not (the recurrent encoder,
/// the feed-forward baselines) requires imputed input and treats `NaN` as an
/// error.
#[derive(Clone, Debug, PartialEq)]
pub struct MtsSample {
    pub id: String,
    values: Matrix,
    mask: Vec<bool>,
    pub label: Option<usize>,
}

impl MtsSample {
    /// Fully observed sample.
    pub fn new(id: impl Into<String>, values: Matrix, label: Option<usize>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::with_mask(id, values, mask, label)
    }

    pub fn with_mask(
        id: impl Into<String>,
        mut values: Matrix,
        mask: Vec<bool>,
        label: Option<usize>,
    ) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Data("a series needs at least one variate and one step".into()));
        }
        if mask.len() != values.len() {
            return Err(Error::Shape(format!(
                "mask has {} cells, values {:?}",
                mask.len(),
                values.shape()
            )));
        }
        for (x, &m) in values.as_mut_slice().iter_mut().zip(&mask) {
            if m && !x.is_finite() {
                return Err(Error::Data("observed cell holds a non-finite value".into()));
            }
            if !m {
                *x = f64::NAN;
            }
        }
        Ok(Self {
            id: id.into(),
            values,
            mask,
            label,
        })
    }

    #[inline]
    pub fn n_vars(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn value(&self, v: usize, t: usize) -> f64 {
        self.values[(v, t)]
    }

    #[inline]
    pub fn observed(&self, v: usize, t: usize) -> bool {
        self.mask[v * self.len() + t]
    }

    /// Observed value or `None`.
    #[inline]
    pub fn get(&self, v: usize, t: usize) -> Option<f64> {
        self.observed(v, t).then(|| self.value(v, t))
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// True when every cell holds a finite number (observed or imputed).
    pub fn is_complete(&self) -> bool {
        self.values.is_finite()
    }

    pub(crate) fn set_value(&mut self, v: usize, t: usize, x: f64) {
        self.values[(v, t)] = x;
    }

    pub(crate) fn hide(&mut self, v: usize, t: usize) {
        let idx = v * self.len() + t;
        self.mask[idx] = false;
        self.values.as_mut_slice()[idx] = f64::NAN;
    }

    /// Overwrites the missing cells with `f(v, t)`; the mask is kept.
    pub(crate) fn fill_missing_with(&mut self, mut f: impl FnMut(usize, usize) -> f64) {
        let t_len = self.len();
        for v in 0..self.n_vars() {
            for t in 0..t_len {
                if !self.mask[v * t_len + t] {
                    self.values[(v, t)] = f(v, t);
                }
            }
        }
    }

    /// The time step `t` as a `V`-vector (imputed or observed values).
    pub fn step(&self, t: usize) -> Vec<f64> {
        (0..self.n_vars()).map(|v| self.values[(v, t)]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split tag '{other}'"))),
        }
    }
}

/// A collection of samples sharing one variate count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<MtsSample>,
    n_vars: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<MtsSample>, split: Split) -> Result<Self> {
        let n_vars = samples
            .first()
            .map(MtsSample::n_vars)
            .ok_or_else(|| Error::Data("empty dataset".into()))?;
        if let Some(s) = samples.iter().find(|s| s.n_vars() != n_vars) {
            return Err(Error::Data(format!(
                "sample {} has {} variates, expected {n_vars}",
                s.id,
                s.n_vars()
            )));
        }
        Ok(Self {
            samples,
            n_vars,
            split,
        })
    }

    pub fn samples(&self) -> &[MtsSample] {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [MtsSample] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<MtsSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn t_min(&self) -> usize {
        self.samples.iter().map(MtsSample::len).min().unwrap_or(0)
    }

    pub fn t_max(&self) -> usize {
        self.samples.iter().map(MtsSample::len).max().unwrap_or(0)
    }

    pub fn has_labels(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.label.is_some())
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// A new dataset with the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect(), self.split)
    }

    pub fn is_complete(&self) -> bool {
        self.samples.iter().all(MtsSample::is_complete)
    }

    pub fn n_missing(&self) -> usize {
        self.samples.iter().map(|s| s.mask().len() - s.n_observed()).sum()
    }
}

impl std::ops::Index<usize> for Dataset {
    type Output = MtsSample;

    fn index(&self, i: usize) -> &MtsSample {
        &self.samples[i]
    }
}
