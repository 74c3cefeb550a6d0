//! Synthetic datasets: random sinusoids, a nonlinear ODE system, and a
//! labelled mixture of smooth class prototypes.

use serde::{Deserialize, Serialize};

use crate::data::sample::{Dataset, MtsSample, Split};
use crate::error::{Error, Result};
use crate::numeric::{spectral_radius, Matrix, Rng};

/// `y(t) = sin(a·t + b)` with `a, b ~ N(0, 1)`, sampled at `length`
/// equally spaced points of `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineGenConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for SineGenConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 1000,
            length: 100,
            seed: 0,
        }
    }
}

pub fn sine_grid(length: usize) -> Vec<f64> {
    if length == 1 {
        return vec![0.0];
    }
    (0..length).map(|i| 100.0 * i as f64 / (length - 1) as f64).collect()
}

pub fn sine_series(a: f64, b: f64, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&t| (a * t + b).sin()).collect()
}

pub fn gen_sines(cfg: &SineGenConfig) -> Result<(Dataset, Dataset)> {
    if cfg.n_train == 0 || cfg.n_test == 0 || cfg.length == 0 {
        return Err(Error::Config("sine generator needs positive counts and length".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let grid = sine_grid(cfg.length);
    let mut make = |n: usize, prefix: &str, split: Split| {
        let samples = (0..n)
            .map(|i| {
                let a = rng.normal();
                let b = rng.normal();
                let y = sine_series(a, b, &grid);
                MtsSample::new(format!("{prefix}{i}"), Matrix::from_vec(1, y.len(), y)?, None)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, split)
    };
    let train = make(cfg.n_train, "train", Split::Train)?;
    let test = make(cfg.n_test, "test", Split::Test)?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LengthSpec {
    Fixed { length: usize },
    /// Drawn uniformly from `lo..=hi` for every sample.
    Range { lo: usize, hi: usize },
}

/// `dy/dt = A·tanh(y)` with a sparse random `A` rescaled to a target
/// spectral radius, integrated by forward Euler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeGenConfig {
    pub n_vars: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub length: LengthSpec,
    /// Fraction of entries of `A` forced to zero.
    pub sparsity: f64,
    /// Non-zero entries are drawn from `[-elem_range, elem_range]` before rescaling.
    pub elem_range: f64,
    pub spectral_radius: f64,
    pub step_size: f64,
    /// Standard deviation of the Gaussian initial condition.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for OdeGenConfig {
    fn default() -> Self {
        Self {
            n_vars: 10,
            n_train: 400,
            n_test: 1000,
            length: LengthSpec::Fixed { length: 90 },
            sparsity: 0.5,
            elem_range: 0.5,
            spectral_radius: 0.8,
            step_size: 0.1,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl OdeGenConfig {
    /// Fixed-length variant, `T = 90`.
    pub fn odefix(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Variable-length variant, `T ∈ [30, 90]`.
    pub fn odevar(seed: u64) -> Self {
        Self {
            length: LengthSpec::Range { lo: 30, hi: 90 },
            seed,
            ..Self::default()
        }
    }
}

/// A generated ODE system: its coupling matrix and the two splits.
#[derive(Clone, Debug)]
pub struct OdeData {
    pub coupling: Matrix,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn draw_coupling(cfg: &OdeGenConfig, rng: &mut Rng) -> Result<Matrix> {
    let v = cfg.n_vars;
    let cells = v * v;
    let zeros = (cfg.sparsity * cells as f64).round() as usize;
    for _attempt in 0..100 {
        let mut a = Matrix::zeros(v, v);
        let zero_set = rng.sample_indices(cells, zeros);
        let mut keep = vec![true; cells];
        for z in zero_set {
            keep[z] = false;
        }
        for (k, x) in a.as_mut_slice().iter_mut().enumerate() {
            let draw = rng.uniform_range(-cfg.elem_range, cfg.elem_range);
            if keep[k] {
                *x = draw;
            }
        }
        let rho = spectral_radius(&a, 1e-13)?;
        if rho > 1e-8 {
            return Ok(a.scale(cfg.spectral_radius / rho));
        }
        log::debug!("coupling matrix with spectral radius {rho:.3e}, resampling");
    }
    Err(Error::Numeric("could not draw a coupling matrix with non-zero spectral radius".into()))
}

/// Euler trajectory of `length` steps starting at (and including) `y0`.
pub fn integrate_ode(coupling: &Matrix, y0: &[f64], length: usize, step: f64) -> Matrix {
    let v = y0.len();
    let mut out = Matrix::zeros(v, length);
    let mut y = y0.to_vec();
    let mut ty = vec![0.0; v];
    for t in 0..length {
        for (i, yi) in y.iter().enumerate() {
            out[(i, t)] = *yi;
        }
        for (o, yi) in ty.iter_mut().zip(&y) {
            *o = yi.tanh();
        }
        for i in 0..v {
            let row = coupling.row(i);
            let dy: f64 = row.iter().zip(&ty).map(|(a, b)| a * b).sum();
            y[i] += step * dy;
        }
    }
    out
}

pub fn gen_ode(cfg: &OdeGenConfig) -> Result<OdeData> {
    if cfg.n_vars == 0 || cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("ODE generator needs positive V and counts".into()));
    }
    if !(0.0..1.0).contains(&cfg.sparsity) || cfg.spectral_radius <= 0.0 || cfg.step_size <= 0.0 {
        return Err(Error::Config("ODE generator: invalid sparsity, radius or step".into()));
    }
    match cfg.length {
        LengthSpec::Fixed { length } if length == 0 => {
            return Err(Error::Config("ODE length must be positive".into()))
        }
        LengthSpec::Range { lo, hi } if lo == 0 || lo > hi => {
            return Err(Error::Config(format!("bad ODE length range [{lo}, {hi}]")))
        }
        _ => {}
    }
    let mut rng = Rng::new(cfg.seed);
    let coupling = draw_coupling(cfg, &mut rng)?;
    let mut make = |n: usize, prefix: &str, split: Split| {
        let samples = (0..n)
            .map(|i| {
                let length = match cfg.length {
                    LengthSpec::Fixed { length } => length,
                    LengthSpec::Range { lo, hi } => rng.int_inclusive(lo, hi),
                };
                let y0: Vec<f64> = (0..cfg.n_vars).map(|_| cfg.init_scale * rng.normal()).collect();
                let traj = integrate_ode(&coupling, &y0, length, cfg.step_size);
                MtsSample::new(format!("{prefix}{i}"), traj, None)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, split)
    };
    let train = make(cfg.n_train, "train", Split::Train)?;
    let test = make(cfg.n_test, "test", Split::Test)?;
    Ok(OdeData {
        coupling,
        train,
        test,
    })
}

/// Labelled series from class-specific smooth mean curves plus diagonal noise,
/// i.e. samples of a mixture whose components have time-varying means and
/// time-constant per-variate variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGenConfig {
    pub n_classes: usize,
    pub n_vars: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Spread of the class prototypes around the shared curve.
    pub class_spread: f64,
    /// Observation noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClassGenConfig {
    fn default() -> Self {
        Self {
            n_classes: 9,
            n_vars: 12,
            train_per_class: 30,
            test_per_class: 40,
            min_length: 7,
            max_length: 29,
            class_spread: 1.0,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Smooth prototype: a few random cosines over the unit interval.
struct Prototype {
    terms: Vec<(f64, f64, f64)>,
    offset: f64,
}

impl Prototype {
    fn draw(rng: &mut Rng, spread: f64) -> Self {
        let terms = (1..=3)
            .map(|k| {
                let amp = spread * rng.normal() / k as f64;
                let phase = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
                (amp, k as f64, phase)
            })
            .collect();
        Self {
            terms,
            offset: spread * rng.normal(),
        }
    }

    fn eval(&self, u: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::PI * f * u + p).cos())
                .sum::<f64>()
    }
}

pub fn gen_classes(cfg: &ClassGenConfig) -> Result<(Dataset, Dataset)> {
    if cfg.n_classes == 0 || cfg.n_vars == 0 || cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::Config("class generator needs positive counts".into()));
    }
    if cfg.min_length == 0 || cfg.min_length > cfg.max_length {
        return Err(Error::Config("class generator: bad length range".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let protos: Vec<Vec<Prototype>> = (0..cfg.n_classes)
        .map(|_| (0..cfg.n_vars).map(|_| Prototype::draw(&mut rng, cfg.class_spread)).collect())
        .collect();
    let mut make = |per_class: usize, prefix: &str, split: Split| {
        let mut samples = Vec::with_capacity(per_class * cfg.n_classes);
        for i in 0..per_class {
            for (c, proto) in protos.iter().enumerate() {
                let len = rng.int_inclusive(cfg.min_length, cfg.max_length);
                let values = Matrix::from_fn(cfg.n_vars, len, |v, t| {
                    let u = t as f64 / (cfg.max_length - 1).max(1) as f64;
                    proto[v].eval(u) + cfg.noise * rng.normal()
                });
                samples.push(MtsSample::new(format!("{prefix}{}", i * cfg.n_classes + c), values, Some(c))?);
            }
        }
        Dataset::new(samples, split)
    };
    let train = make(cfg.train_per_class, "train", Split::Train)?;
    let test = make(cfg.test_per_class, "test", Split::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frequency_is_constant() {
        let y = sine_series(0.0, 0.7, &sine_grid(50));
        assert!(y.iter().all(|&v| (v - 0.7f64.sin()).abs() < 1e-15));
    }

    #[test]
    fn sines_in_range_and_deterministic() {
        let cfg = SineGenConfig {
            n_train: 20,
            n_test: 10,
            ..Default::default()
        };
        let (tr, te) = gen_sines(&cfg).unwrap();
        assert_eq!((tr.len(), te.len()), (20, 10));
        assert!(tr.samples().iter().all(|s| s.values().as_slice().iter().all(|x| x.abs() <= 1.0)));
        let (tr2, _) = gen_sines(&cfg).unwrap();
        assert_eq!(tr, tr2);
    }

    #[test]
    fn grid_covers_interval() {
        let g = sine_grid(100);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 100.0);
    }

    #[test]
    fn zero_start_stays_zero() {
        let mut rng = Rng::new(1);
        let a = draw_coupling(&OdeGenConfig::default(), &mut rng).unwrap();
        let traj = integrate_ode(&a, &[0.0; 10], 50, 0.1);
        assert!(traj.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coupling_radius_and_sparsity() {
        let cfg = OdeGenConfig::default();
        let mut rng = Rng::new(11);
        let a = draw_coupling(&cfg, &mut rng).unwrap();
        let rho = spectral_radius(&a, 1e-12).unwrap();
        assert!((rho - 0.8).abs() < 1e-9, "{rho}");
        assert_eq!(a.as_slice().iter().filter(|&&x| x == 0.0).count(), 50);
    }

    #[test]
    fn variable_lengths_in_range() {
        let cfg = OdeGenConfig {
            n_train: 50,
            n_test: 50,
            ..OdeGenConfig::odevar(4)
        };
        let data = gen_ode(&cfg).unwrap();
        for s in data.train.samples().iter().chain(data.test.samples()) {
            assert!((30..=90).contains(&s.len()));
        }
        assert!(data.train.t_min() < data.train.t_max());
    }

    #[test]
    fn classes_are_labelled() {
        let cfg = ClassGenConfig {
            train_per_class: 2,
            test_per_class: 1,
            ..Default::default()
        };
        let (tr, te) = gen_classes(&cfg).unwrap();
        assert_eq!(tr.len(), 18);
        assert_eq!(te.len(), 9);
        assert!(tr.has_labels());
        assert!(tr.t_max() <= 29 && tr.t_min() >= 7);
    }
}
