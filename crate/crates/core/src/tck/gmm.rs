//! Diagonal-covariance mixtures over (segment, variate subset) restrictions
//! of a series, with missing cells integrated out, fit by MAP-EM.


use serde::{Deserialize, Serialize};

use crate::data::MtsSample;
use crate::error::{Error, Result};
use crate::numeric::linalg::{cholesky, cholesky_solve, forward_substitute};
use crate::numeric::{Matrix, Rng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Added to the temporal prior kernel so that it stays invertible.
const PRIOR_JITTER: f64 = 1e-6;
/// A component whose MAP weight falls below this is reinitialised.
const EMPTY_COMPONENT: f64 = 1e-10;

/// Contiguous time segment `start..start + len` and a sorted variate subset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    pub start: usize,
    pub len: usize,
    pub vars: Vec<usize>,
}

impl View {
    pub fn full(n_vars: usize, len: usize) -> Self {
        Self {
            start: 0,
            len,
            vars: (0..n_vars).collect(),
        }
    }
}

/// The observed cells of a sample inside a view, in view coordinates.
/// Steps past the end of the sample count as missing.
#[derive(Clone, Debug)]
pub(crate) struct Cells {
    pub cells: Vec<(usize, usize, f64)>,
    pub clipped: bool,
}

impl Cells {
    pub fn extract(s: &MtsSample, view: &View) -> Self {
        let mut cells = Vec::new();
        let end = (view.start + view.len).min(s.len());
        for (vi, &v) in view.vars.iter().enumerate() {
            for t in view.start..end {
                if let Some(x) = s.get(v, t) {
                    cells.push((vi, t - view.start, x));
                }
            }
        }
        Self {
            cells,
            clipped: s.len() < view.start + view.len,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGmm {
    theta: Vec<f64>,
    /// One `|V| x |T|` mean matrix per component.
    means: Vec<Matrix>,
    /// `G x |V|` standard deviations.
    sigma: Matrix,
}

impl DiagGmm {
    pub fn new(theta: Vec<f64>, means: Vec<Matrix>, sigma: Matrix) -> Result<Self> {
        let g = theta.len();
        if g == 0 {
            return Err(Error::Config("a mixture needs at least one component".into()));
        }
        if means.len() != g || sigma.rows() != g {
            return Err(Error::Shape(format!(
                "{g} weights but {} mean sets and {} sigma rows",
                means.len(),
                sigma.rows()
            )));
        }
        let shape = means[0].shape();
        if means.iter().any(|m| m.shape() != shape) || sigma.cols() != shape.0 {
            return Err(Error::Shape("inconsistent mean or sigma shapes".into()));
        }
        if sigma.as_slice().iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Numeric("mixture standard deviations must be positive".into()));
        }
        if theta.iter().any(|&w| !(w >= 0.0)) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric("mixture weights must lie on the simplex".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric("non-finite mixture mean".into()));
        }
        Ok(Self { theta, means, sigma })
    }

    pub fn n_components(&self) -> usize {
        self.theta.len()
    }

    pub fn n_vars(&self) -> usize {
        self.sigma.cols()
    }

    pub fn len(&self) -> usize {
        self.means[0].cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn means(&self, g: usize) -> &Matrix {
        &self.means[g]
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    fn check_view(&self, view: &View) -> Result<()> {
        if view.vars.len() != self.n_vars() || view.len != self.len() {
            return Err(Error::Shape(format!(
                "view covers {} variates x {} steps, mixture expects {} x {}",
                view.vars.len(),
                view.len,
                self.n_vars(),
                self.len()
            )));
        }
        Ok(())
    }

    fn log_pdf_cells(&self, cells: &[(usize, usize, f64)], g: usize) -> f64 {
        let mu = &self.means[g];
        let sig = self.sigma.row(g);
        cells
            .iter()
            .map(|&(v, t, x)| {
                let z = (x - mu[(v, t)]) / sig[v];
                -HALF_LN_2PI - sig[v].ln() - 0.5 * z * z
            })
            .sum()
    }

    /// Posterior over components and the log marginal likelihood.
    fn posterior_cells(&self, cells: &[(usize, usize, f64)]) -> (Vec<f64>, f64) {
        let mut lp: Vec<f64> = (0..self.n_components())
            .map(|g| self.theta[g].ln() + self.log_pdf_cells(cells, g))
            .collect();
        let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max.is_finite(), "every mixture component has zero weight or density");
        let mut total = 0.0;
        for x in &mut lp {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in &mut lp {
            *x /= total;
        }
        (lp, max + total.ln())
    }
}

/// `Σ r·log N(x | μ_g, σ_g)` over the observed cells of `x` inside `view`.
pub fn marginal_log_pdf(x: &MtsSample, view: &View, gmm: &DiagGmm, g: usize) -> Result<f64> {
    gmm.check_view(view)?;
    if g >= gmm.n_components() {
        return Err(Error::Config(format!("component {g} out of range")));
    }
    if view.vars.iter().any(|&v| v >= x.n_vars()) {
        return Err(Error::Shape("view selects a variate the sample does not have".into()));
    }
    Ok(gmm.log_pdf_cells(&Cells::extract(x, view).cells, g))
}

pub fn posterior(x: &MtsSample, view: &View, gmm: &DiagGmm) -> Result<Vec<f64>> {
    gmm.check_view(view)?;
    if view.vars.iter().any(|&v| v >= x.n_vars()) {
        return Err(Error::Shape("view selects a variate the sample does not have".into()));
    }
    Ok(gmm.posterior_cells(&Cells::extract(x, view).cells).0)
}

pub(crate) fn posterior_of(gmm: &DiagGmm, cells: &Cells) -> Vec<f64> {
    gmm.posterior_cells(&cells.cells).0
}

/// Hyperparameters of the smooth priors for one fit.
///
/// Means of variate `v` get `N(m_v·1, s_v²·(b0·exp(-a0 (t-t')²) + jitter·I))`,
/// variances a conjugate prior of strength `n0` centred at `s_v²`, and the
/// weights a symmetric Dirichlet with concentration `dirichlet`, where `m_v`
/// and `s_v²` are the empirical moments of the fitted subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPriors {
    pub a0: f64,
    pub b0: f64,
    pub n0: f64,
    pub dirichlet: f64,
}

impl MapPriors {
    fn validate(&self) -> Result<()> {
        if !(self.a0 >= 0.0 && self.b0 > 0.0 && self.n0 >= 0.0 && self.dirichlet >= 1.0) {
            return Err(Error::Config(format!("invalid prior hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Ranges from which each ensemble member draws its [`MapPriors`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorRanges {
    pub a0: (f64, f64),
    pub b0: (f64, f64),
    pub n0: (f64, f64),
    pub dirichlet: (f64, f64),
}

impl Default for PriorRanges {
    fn default() -> Self {
        Self {
            a0: (0.001, 1.0),
            b0: (0.005, 0.2),
            n0: (0.001, 0.2),
            dirichlet: (1.0, 2.0),
        }
    }
}

impl PriorRanges {
    pub fn draw(&self, rng: &mut Rng) -> MapPriors {
        MapPriors {
            a0: rng.uniform_range(self.a0.0, self.a0.1),
            b0: rng.uniform_range(self.b0.0, self.b0.1),
            n0: rng.uniform_range(self.n0.0, self.n0.1),
            dirichlet: rng.uniform_range(self.dirichlet.0, self.dirichlet.1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 1e-6,
        }
    }
}

/// Log-posterior after an EM iteration. `restarted` marks iterations in
/// which an empty component was reinitialised, so the objective may drop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub objective: f64,
    pub restarted: bool,
}

/// Largest decrease between consecutive trace entries, ignoring restarts.
pub fn max_decrease(trace: &[TraceEntry]) -> f64 {
    trace
        .windows(2)
        .filter(|w| !w[1].restarted)
        .map(|w| w[0].objective - w[1].objective)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub gmm: DiagGmm,
    pub trace: Vec<TraceEntry>,
}

/// Fits a `g`-component mixture to `samples` restricted to `view`, starting
/// from random responsibilities drawn from `rng`.
pub fn fit_map_em(
    samples: &[&MtsSample],
    view: &View,
    g: usize,
    priors: &MapPriors,
    em: &EmConfig,
    rng: &mut Rng,
) -> Result<EmFit> {
    if samples.is_empty() {
        return Err(Error::Data("cannot fit a mixture to an empty subset".into()));
    }
    if g == 0 {
        return Err(Error::Config("a mixture needs at least one component".into()));
    }
    if view.len == 0 || view.vars.is_empty() {
        return Err(Error::Config("empty view".into()));
    }
    if let Some(s) = samples.iter().find(|s| view.vars.iter().any(|&v| v >= s.n_vars())) {
        return Err(Error::Shape(format!("sample {} lacks a variate of the view", s.id)));
    }
    let cells: Vec<Cells> = samples.iter().map(|s| Cells::extract(s, view)).collect();
    let init = Matrix::from_fn(samples.len(), g, |_, _| 0.0);
    let init = random_responsibilities(init, |_| rng.next_u64());
    fit_cells(&cells, view.vars.len(), view.len, priors, em, init)
}

/// Fills each row with a random point of the simplex seeded by `seed_of(row)`.
pub(crate) fn random_responsibilities(mut m: Matrix, mut seed_of: impl FnMut(usize) -> u64) -> Matrix {
    for n in 0..m.rows() {
        let mut rng = Rng::new(seed_of(n));
        let row = m.row_mut(n);
        for x in row.iter_mut() {
            *x = 0.05 + rng.uniform();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    m
}

struct Moments {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn empirical_moments(cells: &[Cells], n_vars: usize) -> Moments {
    let mut count = vec![0usize; n_vars];
    let mut sum = vec![0.0; n_vars];
    for c in cells {
        for &(v, _, x) in &c.cells {
            count[v] += 1;
            sum[v] += x;
        }
    }
    let mean: Vec<f64> = (0..n_vars)
        .map(|v| if count[v] > 0 { sum[v] / count[v] as f64 } else { 0.0 })
        .collect();
    let mut ss = vec![0.0; n_vars];
    for c in cells {
        for &(v, _, x) in &c.cells {
            ss[v] += (x - mean[v]).powi(2);
        }
    }
    let var = (0..n_vars)
        .map(|v| {
            let s = if count[v] > 0 { ss[v] / count[v] as f64 } else { 1.0 };
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    Moments { mean, var }
}

struct Fitter<'a> {
    cells: &'a [Cells],
    n_vars: usize,
    len: usize,
    priors: MapPriors,
    moments: Moments,
    /// `b0·exp(-a0 (t-t')²) + jitter·I`, shared by all variates up to `s_v²`.
    kernel: Matrix,
    kernel_chol: Matrix,
}

impl Fitter<'_> {
    fn log_prior(&self, gmm: &DiagGmm) -> f64 {
        let p = &self.priors;
        let mut lp = 0.0;
        if p.dirichlet > 1.0 {
            lp += (p.dirichlet - 1.0) * gmm.theta.iter().map(|w| w.ln()).sum::<f64>();
        }
        for g in 0..gmm.n_components() {
            for v in 0..self.n_vars {
                let m = self.moments.mean[v];
                let s2 = self.moments.var[v];
                let delta: Vec<f64> = gmm.means[g].row(v).iter().map(|x| x - m).collect();
                let w = forward_substitute(&self.kernel_chol, &delta);
                lp -= 0.5 * w.iter().map(|x| x * x).sum::<f64>() / s2;
                let var = gmm.sigma[(g, v)].powi(2);
                lp -= 0.5 * p.n0 * (var.ln() + s2 / var);
            }
        }
        lp
    }

    /// Fills `resp` and `ll` (per-sample log-likelihoods); returns their sum.
    fn e_step(&self, gmm: &DiagGmm, resp: &mut Matrix, ll: &mut [f64]) -> f64 {
        for (n, c) in self.cells.iter().enumerate() {
            let (pi, l) = gmm.posterior_cells(&c.cells);
            resp.row_mut(n).copy_from_slice(&pi);
            ll[n] = l;
        }
        ll.iter().sum()
    }

    /// Closed-form MAP update of weights, then means (given the current
    /// variances), then variances (given the new means).
    fn m_step(&self, resp: &Matrix, sigma_old: &Matrix) -> Result<(DiagGmm, Vec<usize>)> {
        let g_count = resp.cols();
        let (v_count, l) = (self.n_vars, self.len);
        let n = self.cells.len() as f64;
        let alpha = self.priors.dirichlet;

        let nk: Vec<f64> = (0..g_count).map(|g| (0..resp.rows()).map(|i| resp[(i, g)]).sum()).collect();
        let denom = n + g_count as f64 * (alpha - 1.0);
        let mut theta: Vec<f64> = nk.iter().map(|&c| (c + alpha - 1.0) / denom).collect();

        // Per component: weighted counts c and weighted deviations e per (v, t).
        let mut counts = vec![Matrix::zeros(v_count, l); g_count];
        let mut devs = vec![Matrix::zeros(v_count, l); g_count];
        for (i, c) in self.cells.iter().enumerate() {
            for g in 0..g_count {
                let p = resp[(i, g)];
                if p == 0.0 {
                    continue;
                }
                for &(v, t, x) in &c.cells {
                    counts[g][(v, t)] += p;
                    devs[g][(v, t)] += p * (x - self.moments.mean[v]);
                }
            }
        }

        let mut means = Vec::with_capacity(g_count);
        for g in 0..g_count {
            let mut mu = Matrix::zeros(v_count, l);
            for v in 0..v_count {
                let s2 = self.moments.var[v];
                let var = sigma_old[(g, v)].powi(2);
                let r: Vec<f64> = devs[g].row(v).iter().map(|e| e / var).collect();
                let u: Vec<f64> = counts[g].row(v).iter().map(|c| (c / var).sqrt()).collect();
                // (D + S⁻¹)⁻¹ r = S r - S U (I + U S U)⁻¹ U S r, with U = D^½.
                let sr: Vec<f64> = (0..l)
                    .map(|t| s2 * (0..l).map(|k| self.kernel[(t, k)] * r[k]).sum::<f64>())
                    .collect();
                let offset = if u.iter().all(|&x| x == 0.0) {
                    sr
                } else {
                    let b = Matrix::from_fn(l, l, |i, j| {
                        let d = if i == j { 1.0 } else { 0.0 };
                        d + u[i] * s2 * self.kernel[(i, j)] * u[j]
                    });
                    let bl = cholesky(&b)?;
                    let usr: Vec<f64> = (0..l).map(|t| u[t] * sr[t]).collect();
                    let y = cholesky_solve(&bl, &usr);
                    let uy: Vec<f64> = (0..l).map(|t| u[t] * y[t]).collect();
                    (0..l)
                        .map(|t| sr[t] - s2 * (0..l).map(|k| self.kernel[(t, k)] * uy[k]).sum::<f64>())
                        .collect()
                };
                for (t, o) in offset.into_iter().enumerate() {
                    mu[(v, t)] = self.moments.mean[v] + o;
                }
            }
            means.push(mu);
        }

        let mut ss = Matrix::zeros(g_count, v_count);
        let mut w = Matrix::zeros(g_count, v_count);
        for (i, c) in self.cells.iter().enumerate() {
            for g in 0..g_count {
                let p = resp[(i, g)];
                if p == 0.0 {
                    continue;
                }
                for &(v, t, x) in &c.cells {
                    ss[(g, v)] += p * (x - means[g][(v, t)]).powi(2);
                    w[(g, v)] += p;
                }
            }
        }
        let n0 = self.priors.n0;
        let sigma = Matrix::from_fn(g_count, v_count, |g, v| {
            let s2 = self.moments.var[v];
            let den = n0 + w[(g, v)];
            let var = if den > 0.0 { (n0 * s2 + ss[(g, v)]) / den } else { s2 };
            var.max(1e-12 * s2).sqrt()
        });

        let empty: Vec<usize> = (0..g_count).filter(|&g| theta[g] < EMPTY_COMPONENT).collect();
        let total: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|x| *x /= total);
        Ok((DiagGmm { theta, means, sigma }, empty))
    }

    /// Re-centres each empty component on the sample the mixture explains worst.
    fn reinitialise(&self, gmm: &mut DiagGmm, empty: &[usize], ll: &[f64]) {
        let g_count = gmm.n_components();
        let mut order: Vec<usize> = (0..ll.len()).collect();
        order.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]).then(a.cmp(&b)));
        for (k, &g) in empty.iter().enumerate() {
            let pick = &self.cells[order[k % order.len()]];
            let mut mu = Matrix::from_fn(self.n_vars, self.len, |v, _| self.moments.mean[v]);
            for &(v, t, x) in &pick.cells {
                mu[(v, t)] = x;
            }
            gmm.means[g] = mu;
            for v in 0..self.n_vars {
                gmm.sigma[(g, v)] = self.moments.var[v].sqrt();
            }
            gmm.theta[g] = gmm.theta[g].max(1.0 / g_count as f64);
        }
        let total: f64 = gmm.theta.iter().sum();
        gmm.theta.iter_mut().for_each(|x| *x /= total);
    }
}

pub(crate) fn fit_cells(
    cells: &[Cells],
    n_vars: usize,
    len: usize,
    priors: &MapPriors,
    em: &EmConfig,
    init: Matrix,
) -> Result<EmFit> {
    priors.validate()?;
    let kernel = Matrix::from_fn(len, len, |i, j| {
        let d = i as f64 - j as f64;
        priors.b0 * (-priors.a0 * d * d).exp() + if i == j { PRIOR_JITTER } else { 0.0 }
    });
    let kernel_chol = cholesky(&kernel)?;
    let fitter = Fitter {
        cells,
        n_vars,
        len,
        priors: *priors,
        moments: empirical_moments(cells, n_vars),
        kernel,
        kernel_chol,
    };
    let g_count = init.cols();
    let flat_sigma = Matrix::from_fn(g_count, n_vars, |_, v| fitter.moments.var[v].sqrt());
    let mut resp = init;
    let mut ll = vec![0.0; cells.len()];
    let (mut gmm, _) = fitter.m_step(&resp, &flat_sigma)?;
    let mut trace = Vec::with_capacity(em.max_iter + 1);
    let total = fitter.e_step(&gmm, &mut resp, &mut ll);
    trace.push(TraceEntry {
        objective: total + fitter.log_prior(&gmm),
        restarted: false,
    });
    let mut restarts = 0;
    for _ in 0..em.max_iter {
        let (mut next, empty) = fitter.m_step(&resp, &gmm.sigma)?;
        let restarted = !empty.is_empty() && restarts < g_count;
        if restarted {
            log::debug!("reinitialising {} empty mixture component(s)", empty.len());
            fitter.reinitialise(&mut next, &empty, &ll);
            restarts += empty.len();
        }
        gmm = next;
        let total = fitter.e_step(&gmm, &mut resp, &mut ll);
        let objective = total + fitter.log_prior(&gmm);
        if !objective.is_finite() {
            return Err(Error::Numeric("MAP-EM objective became non-finite".into()));
        }
        let prev = trace.last().expect("trace is non-empty").objective;
        trace.push(TraceEntry { objective, restarted });
        if !restarted && (objective - prev).abs() < em.tol {
            break;
        }
    }
    Ok(EmFit { gmm, trace })
}
