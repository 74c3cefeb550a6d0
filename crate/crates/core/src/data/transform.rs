//! Standardization, missing-value injection, simple imputers and padding.

use serde::{Deserialize, Serialize};

use crate::data::sample::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Per-variate affine normalization fitted on observed training cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let v_count = train.n_vars();
        let mut n = vec![0usize; v_count];
        let mut sum = vec![0.0; v_count];
        for s in train.samples() {
            for v in 0..v_count {
                for t in 0..s.len() {
                    if let Some(x) = s.get(v, t) {
                        n[v] += 1;
                        sum[v] += x;
                    }
                }
            }
        }
        if let Some(v) = n.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("variate {v} has no observed training values")));
        }
        let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &c)| s / c as f64).collect();
        let mut ss = vec![0.0; v_count];
        for s in train.samples() {
            for v in 0..v_count {
                for t in 0..s.len() {
                    if let Some(x) = s.get(v, t) {
                        ss[v] += (x - mean[v]).powi(2);
                    }
                }
            }
        }
        let std = ss
            .iter()
            .zip(&n)
            .map(|(s, &c)| {
                let sd = (s / c as f64).sqrt();
                // Degenerate variates are centred but not scaled.
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.apply(ds, |x, m, s| (x - m) / s)
    }

    pub fn inverse_transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.apply(ds, |x, m, s| x * s + m)
    }

    fn apply(&self, ds: &Dataset, f: impl Fn(f64, f64, f64) -> f64) -> Result<Dataset> {
        if ds.n_vars() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} variates, dataset has {}",
                self.mean.len(),
                ds.n_vars()
            )));
        }
        let mut out = ds.clone();
        for s in out.samples_mut() {
            let t_len = s.len();
            for v in 0..s.n_vars() {
                for t in 0..t_len {
                    if s.observed(v, t) {
                        let x = s.value(v, t);
                        s.set_value(v, t, f(x, self.mean[v], self.std[v]));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fits on `train` (observed cells only) and transforms both splits.
pub fn standardize_fit_transform(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let st = Standardizer::fit(train)?;
    Ok((st.transform(train)?, st.transform(test)?, st))
}

/// Ground truth for cells removed by [`inject_missing`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    /// `(sample index, variate, step, original value)`.
    pub cells: Vec<(usize, usize, usize, f64)>,
}

impl InjectionRecord {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Hides exactly `round(rate · V · T_s)` cells of every sample, chosen
/// uniformly without replacement. Already-missing cells count toward the
/// total when drawn but are not recorded as injected.
pub fn inject_missing(ds: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, InjectionRecord)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("missing rate must lie in [0, 1], got {rate}")));
    }
    let mut rng = Rng::new(seed);
    let mut out = ds.clone();
    let mut record = InjectionRecord::default();
    for (i, s) in out.samples_mut().iter_mut().enumerate() {
        let cells = s.n_vars() * s.len();
        let k = (rate * cells as f64).round() as usize;
        let mut chosen = rng.sample_indices(cells, k);
        chosen.sort_unstable();
        for c in chosen {
            let (v, t) = (c / s.len(), c % s.len());
            if let Some(x) = s.get(v, t) {
                record.cells.push((i, v, t, x));
                s.hide(v, t);
            }
        }
    }
    Ok((out, record))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeMode {
    Zero,
    Mean,
    Locf,
}

impl std::str::FromStr for ImputeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "mean" => Ok(Self::Mean),
            "locf" => Ok(Self::Locf),
            other => Err(Error::Config(format!("unknown imputation mode '{other}'"))),
        }
    }
}

/// Fills missing cells; masks are kept so imputed cells stay identifiable.
///
/// `means` supplies the per-variate training means for [`ImputeMode::Mean`]
/// (pass the standardizer's means in raw units, or zeros for standardized
/// data). LOCF falls back to 0 before the first observation of a variate.
pub fn impute_simple(ds: &Dataset, mode: ImputeMode, means: Option<&[f64]>) -> Dataset {
    let mut out = ds.clone();
    let zeros = vec![0.0; ds.n_vars()];
    let means = means.unwrap_or(&zeros);
    for s in out.samples_mut() {
        match mode {
            ImputeMode::Zero => s.fill_missing_with(|_, _| 0.0),
            ImputeMode::Mean => s.fill_missing_with(|v, _| means[v]),
            ImputeMode::Locf => {
                for v in 0..s.n_vars() {
                    let mut last = 0.0;
                    for t in 0..s.len() {
                        match s.get(v, t) {
                            Some(x) => last = x,
                            None => s.set_value(v, t, last),
                        }
                    }
                }
            }
        }
    }
    out
}

/// Zero-pads every sample to `t_pad` steps and unrolls it variate-major
/// into one row: `[x_1(1..T), x_2(1..T), ...]`. Cells must be imputed.
pub fn pad_and_unroll(ds: &Dataset, t_pad: usize) -> Result<Matrix> {
    let v_count = ds.n_vars();
    let mut out = Matrix::zeros(ds.len(), v_count * t_pad);
    for (i, s) in ds.samples().iter().enumerate() {
        if s.len() > t_pad {
            return Err(Error::Shape(format!(
                "sample {} has {} steps, padding target is {t_pad}",
                s.id,
                s.len()
            )));
        }
        if !s.is_complete() {
            return Err(Error::Data(format!("sample {} has unimputed missing cells", s.id)));
        }
        let row = out.row_mut(i);
        for v in 0..v_count {
            for t in 0..s.len() {
                row[v * t_pad + t] = s.value(v, t);
            }
        }
    }
    Ok(out)
}

/// Per-row validity of the unrolled layout: true on cells within each sample's length.
pub fn unrolled_extent_mask(ds: &Dataset, t_pad: usize) -> Matrix {
    let v_count = ds.n_vars();
    let mut out = Matrix::zeros(ds.len(), v_count * t_pad);
    for (i, s) in ds.samples().iter().enumerate() {
        let row = out.row_mut(i);
        for v in 0..v_count {
            for t in 0..s.len().min(t_pad) {
                row[v * t_pad + t] = 1.0;
            }
        }
    }
    out
}

/// Inverse of [`pad_and_unroll`] for one row: the first `len` steps as a `V × len` matrix.
pub fn reshape_unrolled(row: &[f64], n_vars: usize, t_pad: usize, len: usize) -> Matrix {
    Matrix::from_fn(n_vars, len, |v, t| row[v * t_pad + t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::{MtsSample, Split};

    fn ds(rows: &[Vec<Vec<f64>>]) -> Dataset {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, r)| MtsSample::new(i.to_string(), Matrix::from_rows(r), None).unwrap())
            .collect();
        Dataset::new(samples, Split::Train).unwrap()
    }

    #[test]
    fn constant_variate_gets_unit_std() {
        let d = ds(&[vec![vec![2.0, 2.0, 2.0]], vec![vec![2.0, 2.0]]]);
        let st = Standardizer::fit(&d).unwrap();
        assert_eq!(st.std, vec![1.0]);
        let out = st.transform(&d).unwrap();
        assert!(out.samples().iter().all(|s| s.values().as_slice().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn train_moments_after_transform() {
        let d = ds(&[
            vec![vec![1.0, 5.0, -2.0], vec![10.0, 11.0, 9.0]],
            vec![vec![0.5, 3.0, 7.0], vec![12.0, 8.0, 10.5]],
        ]);
        let (tr, _, _) = standardize_fit_transform(&d, &d).unwrap();
        for v in 0..2 {
            let xs: Vec<f64> = tr.samples().iter().flat_map(|s| (0..s.len()).map(move |t| s.value(v, t))).collect();
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn test_uses_train_statistics() {
        // Train variate: {0, 2, 4} → mean 2, population std √(8/3).
        let train = ds(&[vec![vec![0.0]], vec![vec![2.0]], vec![vec![4.0]]]);
        let test = ds(&[vec![vec![10.0, 12.0]]]);
        let (_, te, st) = standardize_fit_transform(&train, &test).unwrap();
        let sd = (8.0f64 / 3.0).sqrt();
        assert!((st.mean[0] - 2.0).abs() < 1e-15);
        assert!((te[0].value(0, 0) - 8.0 / sd).abs() < 1e-12);
        assert!((te[0].value(0, 1) - 10.0 / sd).abs() < 1e-12);
    }

    #[test]
    fn no_observed_values_is_an_error() {
        let s = MtsSample::with_mask("a", Matrix::zeros(1, 2), vec![false, false], None).unwrap();
        let d = Dataset::new(vec![s], Split::Train).unwrap();
        assert!(Standardizer::fit(&d).is_err());
    }

    #[test]
    fn injection_counts() {
        let d = ds(&vec![vec![vec![0.0; 10], vec![1.0; 10]]; 3]);
        let (none, rec0) = inject_missing(&d, 0.0, 1).unwrap();
        assert_eq!(none, d);
        assert!(rec0.is_empty());
        let (half, rec) = inject_missing(&d, 0.5, 1).unwrap();
        for s in half.samples() {
            assert_eq!(s.mask().iter().filter(|m| !**m).count(), 10);
        }
        assert_eq!(rec.len(), 30);
        let (all, _) = inject_missing(&d, 1.0, 1).unwrap();
        assert!(all.samples().iter().all(|s| s.n_observed() == 0));
        assert!(inject_missing(&d, 1.5, 1).is_err());
    }

    #[test]
    fn locf_rules() {
        let s = MtsSample::with_mask(
            "a",
            Matrix::from_rows(&[vec![1.0, 0.0, 3.0], vec![0.0, 4.0, 0.0]]),
            vec![true, false, true, false, true, false],
            None,
        )
        .unwrap();
        let d = Dataset::new(vec![s], Split::Train).unwrap();
        let out = impute_simple(&d, ImputeMode::Locf, None);
        assert_eq!(out[0].values().row(0), &[1.0, 1.0, 3.0]);
        assert_eq!(out[0].values().row(1), &[0.0, 4.0, 4.0]);
        assert_eq!(out[0].mask(), d[0].mask());
    }

    #[test]
    fn mean_equals_zero_on_standardized() {
        let d = ds(&[vec![vec![1.0, 2.0, 6.0]], vec![vec![3.0, 4.0]]]);
        let (tr, _, _) = standardize_fit_transform(&d, &d).unwrap();
        let (gappy, _) = inject_missing(&tr, 0.4, 9).unwrap();
        let a = impute_simple(&gappy, ImputeMode::Mean, None);
        let b = impute_simple(&gappy, ImputeMode::Zero, None);
        assert_eq!(a, b);
    }

    #[test]
    fn pad_unroll_layout() {
        let d = ds(&[vec![vec![1.0, 2.0, 3.0]], vec![vec![4.0, 5.0, 6.0, 7.0, 8.0]]]);
        let m = pad_and_unroll(&d, 5).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(pad_and_unroll(&d, 4).is_err());
        assert_eq!(reshape_unrolled(m.row(0), 1, 5, 3), *d[0].values());
    }
}
