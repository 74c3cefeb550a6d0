//! Classification, imputation and anomaly-scoring metrics.

mod report;

pub use report::{MetricReport, MetricSummary};

use crate::data::{Dataset, InjectionRecord};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// A metric together with a flag for inputs where it is undefined and a
/// conventional value was returned instead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Majority vote among the `k` nearest training rows (Euclidean). A tie
/// in the vote goes to the label of the single nearest neighbour.
pub fn knn_classify(train_z: &Matrix, train_labels: &[usize], test_z: &Matrix, k: usize) -> Result<Vec<usize>> {
    let n = train_z.rows();
    if n == 0 {
        return Err(Error::Data("kNN needs a non-empty training set".into()));
    }
    if train_labels.len() != n {
        return Err(Error::Shape(format!("{n} training rows with {} labels", train_labels.len())));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must lie in [1, {n}], got {k}")));
    }
    if test_z.cols() != train_z.cols() {
        return Err(Error::Shape("train and test representations differ in width".into()));
    }
    let n_labels = train_labels.iter().max().map_or(0, |m| m + 1);
    Ok((0..test_z.rows())
        .map(|i| {
            let q = test_z.row(i);
            let mut d: Vec<(f64, usize)> = (0..n).map(|j| (sq_dist(q, train_z.row(j)), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; n_labels];
            for &(_, j) in &d[..k] {
                votes[train_labels[j]] += 1;
            }
            let best = *votes.iter().max().expect("labels");
            let nearest = train_labels[d[0].1];
            if votes[nearest] == best {
                nearest
            } else {
                let tied: Vec<usize> = (0..n_labels).filter(|&c| votes[c] == best).collect();
                if tied.len() == 1 {
                    tied[0]
                } else {
                    // Several labels tie and none is the nearest one: take
                    // the tied label whose first neighbour is closest.
                    d[..k]
                        .iter()
                        .map(|&(_, j)| train_labels[j])
                        .find(|c| tied.contains(c))
                        .expect("tied label among neighbours")
                }
            }
        })
        .collect())
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Shape(format!("accuracy of {} vs {} labels", truth.len(), pred.len())));
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// One-vs-rest F1 of `positive`; 0 when precision + recall is 0.
pub fn f1_score(truth: &[usize], pred: &[usize], positive: usize) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("F1 of {} vs {} labels", truth.len(), pred.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == positive, p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Unweighted mean of the per-class F1 over the classes in `truth`.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let mut classes: Vec<usize> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::Data("macro F1 of an empty label set".into()));
    }
    let mut sum = 0.0;
    for &c in &classes {
        sum += f1_score(truth, pred, c)?;
    }
    Ok(sum / classes.len() as f64)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("MSE of {} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Pearson correlation; 0 with the degenerate flag when either side is constant.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<Flagged> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("correlation of {} vs {} values", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Flagged {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Flagged {
        value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Probability that a positive outscores a negative, ties counting one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!("{} scores with {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("AUC of non-finite scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both positive and negative samples".into()));
    }
    // Rank-sum form with mid-ranks for ties.
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImputationScore {
    pub mse: f64,
    pub corr: f64,
    pub n_cells: usize,
    /// No injected cells, or constant values on one side.
    pub degenerate: bool,
}

/// MSE and correlation over the injected cells only, pooled across samples.
pub fn imputation_score(original: &Dataset, imputed: &Dataset, record: &InjectionRecord) -> Result<ImputationScore> {
    if original.len() != imputed.len() {
        return Err(Error::Shape("original and imputed datasets differ in size".into()));
    }
    if record.is_empty() {
        return Ok(ImputationScore {
            mse: 0.0,
            corr: 0.0,
            n_cells: 0,
            degenerate: true,
        });
    }
    let mut truth = Vec::with_capacity(record.len());
    let mut guess = Vec::with_capacity(record.len());
    for &(i, v, t, x) in &record.cells {
        let s = imputed
            .samples()
            .get(i)
            .ok_or_else(|| Error::Data(format!("injection record refers to sample {i}")))?;
        if v >= s.n_vars() || t >= s.len() {
            return Err(Error::Data(format!("injection record cell ({v}, {t}) outside sample {i}")));
        }
        let y = s.value(v, t);
        if !y.is_finite() {
            return Err(Error::Data(format!("sample {} still has a missing cell at ({v}, {t})", s.id)));
        }
        truth.push(x);
        guess.push(y);
    }
    let m = mse(&truth, &guess)?;
    let c = if truth.len() >= 2 {
        pearson_corr(&truth, &guess)?
    } else {
        Flagged {
            value: 0.0,
            degenerate: true,
        }
    };
    Ok(ImputationScore {
        mse: m,
        corr: c.value,
        n_cells: truth.len(),
        degenerate: c.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{impute_simple, inject_missing, ImputeMode, MtsSample, Split};
    use crate::numeric::Rng;

    #[test]
    fn knn_basic_cases() {
        let train = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let labels = [0, 1, 1, 0];
        let test = Matrix::from_rows(&[vec![2.0]]);
        assert_eq!(knn_classify(&train, &labels, &test, 1).unwrap(), vec![1]);

        // Neighbours at distances 1, 2, 3 labelled A, A, B.
        let train = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![10.0]]);
        let labels = [0, 0, 1, 1];
        let test = Matrix::from_rows(&[vec![0.0]]);
        assert_eq!(knn_classify(&train, &labels, &test, 3).unwrap(), vec![0]);
        assert!(knn_classify(&train, &labels, &test, 5).is_err());
        assert!(knn_classify(&Matrix::zeros(0, 1), &[], &test, 1).is_err());
    }

    #[test]
    fn knn_tie_goes_to_the_nearest_label() {
        // Three classes, one neighbour each: every label has one vote.
        let train = Matrix::from_rows(&[vec![2.0], vec![-1.5], vec![3.0]]);
        let labels = [0, 1, 2];
        let test = Matrix::from_rows(&[vec![0.0]]);
        assert_eq!(knn_classify(&train, &labels, &test, 3).unwrap(), vec![1]);
        // k = 4 with votes (1, 1, 2): class 2 wins outright despite being farther.
        let train = Matrix::from_rows(&[vec![2.0], vec![-1.5], vec![3.0], vec![-3.5]]);
        let labels = [0, 1, 2, 2];
        assert_eq!(knn_classify(&train, &labels, &test, 4).unwrap(), vec![2]);
    }

    #[test]
    fn knn_invariant_under_rotation() {
        let mut rng = Rng::new(1);
        let train = Matrix::from_fn(30, 2, |_, _| rng.normal());
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let test = Matrix::from_fn(10, 2, |_, _| rng.normal());
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = Matrix::from_rows(&[vec![c, s], vec![-s, c]]);
        let a = knn_classify(&train, &labels, &test, 3).unwrap();
        let b = knn_classify(&train.matmul(&rot).unwrap(), &labels, &test.matmul(&rot).unwrap(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1], 1).unwrap(), 1.0);
        assert_eq!(f1_score(&[1, 0, 1], &[0, 0, 0], 1).unwrap(), 0.0);
        // TP 8, FP 2, FN 4.
        let mut truth = vec![1; 12];
        truth.extend([0; 2]);
        let mut pred = vec![1; 8];
        pred.extend([0; 4]);
        pred.extend([1; 2]);
        assert!((f1_score(&truth, &pred, 1).unwrap() - 8.0 / 11.0).abs() < 1e-15);
        let m = macro_f1(&[0, 1, 2, 2], &[0, 2, 2, 1]).unwrap();
        assert!((m - (1.0 + 0.0 + 0.5) / 3.0).abs() < 1e-15);
        let acc = accuracy(&[0, 1, 2, 2], &[0, 2, 2, 1]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn pearson_cases() {
        let a = [1.0, 2.0, 4.0, 7.0, 11.0];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson_corr(&a, &a).unwrap().value - 1.0).abs() < 1e-15);
        assert!((pearson_corr(&a, &neg).unwrap().value + 1.0).abs() < 1e-15);
        // Hand computation: means 5 and 3, Σdxdy = 21, Σdx² = 66, Σdy² = 10.
        let b = [2.0, 1.0, 4.0, 3.0, 5.0];
        let expect = 21.0 / (66.0f64.sqrt() * 10.0f64.sqrt());
        assert!((pearson_corr(&a, &b).unwrap().value - expect).abs() < 1e-12);
        assert!(pearson_corr(&a, &[1.0; 5]).unwrap().degenerate);
    }

    fn pair_oracle(s: &[f64], y: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_cases() {
        let y = [false, false, false, true, true, true];
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &y).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0; 6], &y).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8, 0.3, 0.9];
        assert!((roc_auc(&s, &y).unwrap() - pair_oracle(&s, &y)).abs() < 1e-15);
        assert!(roc_auc(&s, &[true; 6]).is_err());

        let mut rng = Rng::new(4);
        let s: Vec<f64> = (0..40).map(|_| (rng.normal() * 2.0).round()).collect();
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let a = roc_auc(&s, &y).unwrap();
        assert!((a - pair_oracle(&s, &y)).abs() < 1e-12);
        let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        assert!((roc_auc(&t, &y).unwrap() - a).abs() < 1e-15);
    }

    fn noise_ds(n: usize, len: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let samples = (0..n)
            .map(|i| MtsSample::new(format!("n{i}"), Matrix::from_fn(2, len, |_, _| rng.normal()), None).unwrap())
            .collect();
        Dataset::new(samples, Split::Test).unwrap()
    }

    #[test]
    fn imputation_scores() {
        let ds = noise_ds(200, 20, 1);
        let (holes, rec) = inject_missing(&ds, 0.3, 2).unwrap();
        let perfect = imputation_score(&ds, &ds, &rec).unwrap();
        assert_eq!((perfect.mse, perfect.corr), (0.0, 1.0));
        let mean = imputation_score(&ds, &impute_simple(&holes, ImputeMode::Mean, None), &rec).unwrap();
        assert!((mean.mse - 1.0).abs() < 0.1, "{}", mean.mse);
        assert!(mean.degenerate);

        let constant = Dataset::new(
            vec![MtsSample::new("c", Matrix::filled(1, 30, 2.5), None).unwrap()],
            Split::Test,
        )
        .unwrap();
        let mut holes = constant.clone();
        let mut rec = InjectionRecord::default();
        for t in (1..30).step_by(2) {
            holes.samples_mut()[0].hide(0, t);
            rec.cells.push((0, 0, t, 2.5));
        }
        let locf = imputation_score(&constant, &impute_simple(&holes, ImputeMode::Locf, None), &rec).unwrap();
        let mean = imputation_score(&constant, &impute_simple(&holes, ImputeMode::Mean, None), &rec).unwrap();
        assert_eq!(locf.mse, 0.0);
        assert!(locf.mse <= mean.mse);

        let (_, none) = inject_missing(&ds, 0.0, 2).unwrap();
        let s = imputation_score(&ds, &ds, &none).unwrap();
        assert!(s.degenerate && s.n_cells == 0 && s.mse == 0.0);
    }
}
