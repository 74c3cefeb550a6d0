//! The cluster-kernel ensemble: many mixtures on random subsets, their
//! posteriors combined by summed cosine similarity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MtsSample};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};
use crate::persist::{read_file, Reader, Writer};
use crate::tck::gmm::{
    fit_cells, posterior_of, random_responsibilities, Cells, DiagGmm, EmConfig, MapPriors, PriorRanges,
    TraceEntry, View,
};

const MODEL_MAGIC: &[u8; 4] = b"TCKM";
const KERNEL_MAGIC: &[u8; 4] = b"TCKK";
const FORMAT_VERSION: u32 = 1;

/// Ensemble size and subset bounds. Unset bounds default to
/// `|T| ∈ [min(6, T), T]` and `|V| ∈ [min(2, V), V]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TckConfig {
    /// Initialisations per component count.
    pub q: usize,
    /// Largest component count; counts run over `2..=c`.
    pub c: usize,
    pub n_min_frac: f64,
    pub t_len_min: Option<usize>,
    pub t_len_max: Option<usize>,
    pub v_min: Option<usize>,
    pub v_max: Option<usize>,
    pub priors: PriorRanges,
    pub em: EmConfig,
}

impl Default for TckConfig {
    fn default() -> Self {
        Self {
            q: 30,
            c: 10,
            n_min_frac: 0.8,
            t_len_min: None,
            t_len_max: None,
            v_min: None,
            v_max: None,
            priors: PriorRanges::default(),
            em: EmConfig::default(),
        }
    }
}

struct Bounds {
    t: (usize, usize),
    v: (usize, usize),
    n: (usize, usize),
}

impl TckConfig {
    fn bounds(&self, n: usize, n_vars: usize, t_max: usize) -> Result<Bounds> {
        if self.q == 0 || self.c < 2 {
            return Err(Error::Config(format!("need q >= 1 and c >= 2, got q={} c={}", self.q, self.c)));
        }
        if !(self.n_min_frac > 0.0 && self.n_min_frac <= 1.0) {
            return Err(Error::Config(format!("n_min_frac must lie in (0, 1], got {}", self.n_min_frac)));
        }
        let range = |what: &str, lo: Option<usize>, hi: Option<usize>, default_lo: usize, cap: usize| {
            let hi = hi.unwrap_or(cap);
            let lo = lo.unwrap_or(default_lo.min(hi));
            if lo == 0 || lo > hi || hi > cap {
                return Err(Error::Config(format!(
                    "infeasible {what} bounds [{lo}, {hi}] for an available size of {cap}"
                )));
            }
            Ok((lo, hi))
        };
        let t = range("segment length", self.t_len_min, self.t_len_max, 6, t_max)?;
        let v = range("variate count", self.v_min, self.v_max, 2, n_vars)?;
        let n_min = ((self.n_min_frac * n as f64).ceil() as usize).clamp(1, n);
        Ok(Bounds { t, v, n: (n_min, n) })
    }

    pub fn n_instances(&self) -> usize {
        self.q * (self.c - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TckInstance {
    pub q1: usize,
    /// Component count of this member.
    pub q2: usize,
    pub view: View,
    /// Training-set indices the mixture was fit on.
    pub eta: Vec<usize>,
    pub priors: MapPriors,
    pub gmm: DiagGmm,
    pub trace: Vec<TraceEntry>,
    /// Unit-normalised posteriors of every training sample, one row each.
    pub train_posteriors: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TckModel {
    pub n_vars: usize,
    pub q: usize,
    pub c: usize,
    pub train_ids: Vec<String>,
    pub instances: Vec<TckInstance>,
}

/// Symmetric kernel over one ordered set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub ids: Vec<String>,
    pub values: Matrix,
}

/// Kernel between two sample sets: rows index `row_ids`, columns `col_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBlock {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Matrix,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random streams tied to a sample's id rather than its position, so the
/// ensemble does not depend on the order of the training set.
fn keyed(instance_key: u64, id: &str) -> u64 {
    Rng::derive(instance_key, fnv1a(id)).next_u64()
}

fn unit_rows(posteriors: &[Vec<f64>], g: usize) -> Matrix {
    let mut m = Matrix::zeros(posteriors.len(), g);
    for (i, p) in posteriors.iter().enumerate() {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (j, x) in p.iter().enumerate() {
            m[(i, j)] = x / norm;
        }
    }
    m
}

fn cells_for(ds: &Dataset, view: &View) -> (Vec<Cells>, usize) {
    let cells: Vec<Cells> = ds.samples().iter().map(|s| Cells::extract(s, view)).collect();
    let clipped = cells.iter().filter(|c| c.clipped).count();
    (cells, clipped)
}

/// Fits the ensemble on `train` and returns it with the in-sample kernel.
pub fn build_kernel(train: &Dataset, cfg: &TckConfig, seed: u64) -> Result<(TckModel, KernelMatrix)> {
    let n = train.len();
    let b = cfg.bounds(n, train.n_vars(), train.t_max())?;
    let ids: Vec<String> = train.samples().iter().map(|s| s.id.clone()).collect();
    let mut k = Matrix::zeros(n, n);
    let mut instances = Vec::with_capacity(cfg.n_instances());
    for q2 in 2..=cfg.c {
        for q1 in 0..cfg.q {
            let index = ((q2 - 2) * cfg.q + q1) as u64;
            let mut rng = Rng::derive(seed, index);
            let priors = cfg.priors.draw(&mut rng);
            let len = rng.int_inclusive(b.t.0, b.t.1);
            let start = rng.int_inclusive(0, train.t_max() - len);
            let n_v = rng.int_inclusive(b.v.0, b.v.1);
            let mut vars = rng.sample_indices(train.n_vars(), n_v);
            vars.sort_unstable();
            let n_eta = rng.int_inclusive(b.n.0, b.n.1);
            let key = rng.next_u64();
            let view = View { start, len, vars };

            let mut order: Vec<(u64, usize)> = ids.iter().enumerate().map(|(i, id)| (keyed(key, id), i)).collect();
            order.sort_unstable();
            let mut eta: Vec<usize> = order[..n_eta].iter().map(|&(_, i)| i).collect();
            eta.sort_unstable();

            let (all_cells, _) = cells_for(train, &view);
            let fit_cells_subset: Vec<Cells> = eta.iter().map(|&i| all_cells[i].clone()).collect();
            let init = random_responsibilities(Matrix::zeros(eta.len(), q2), |r| {
                keyed(key ^ 0x5bd1_e995, &ids[eta[r]])
            });
            let fit = fit_cells(&fit_cells_subset, view.vars.len(), len, &priors, &cfg.em, init)?;

            let post: Vec<Vec<f64>> = all_cells.iter().map(|c| posterior_of(&fit.gmm, c)).collect();
            let unit = unit_rows(&post, q2);
            gram_acc(&unit, &unit, &mut k);
            instances.push(TckInstance {
                q1,
                q2,
                view,
                eta,
                priors,
                gmm: fit.gmm,
                trace: fit.trace,
                train_posteriors: unit,
            });
        }
    }
    symmetrize(&mut k);
    let model = TckModel {
        n_vars: train.n_vars(),
        q: cfg.q,
        c: cfg.c,
        train_ids: ids.clone(),
        instances,
    };
    Ok((model, KernelMatrix { ids, values: k }))
}

/// `out += a bᵀ`.
fn gram_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    for i in 0..a.rows() {
        let ar = a.row(i);
        for j in 0..b.rows() {
            out[(i, j)] += ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn symmetrize(k: &mut Matrix) {
    for i in 0..k.rows() {
        for j in 0..i {
            let m = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = m;
            k[(j, i)] = m;
        }
    }
}

impl TckModel {
    fn check_vars(&self, ds: &Dataset) -> Result<()> {
        if ds.n_vars() != self.n_vars {
            return Err(Error::Data(format!(
                "dataset has {} variates, the kernel model was fit on {}",
                ds.n_vars(),
                self.n_vars
            )));
        }
        Ok(())
    }

    /// Unit-normalised posteriors of `ds` under every ensemble member.
    pub fn posteriors(&self, ds: &Dataset) -> Result<Vec<Matrix>> {
        self.check_vars(ds)?;
        let mut clipped = 0;
        let out = self
            .instances
            .iter()
            .map(|inst| {
                let (cells, c) = cells_for(ds, &inst.view);
                clipped += c;
                let post: Vec<Vec<f64>> = cells.iter().map(|c| posterior_of(&inst.gmm, c)).collect();
                unit_rows(&post, inst.q2)
            })
            .collect();
        if clipped > 0 {
            log::debug!("{clipped} (sample, member) pairs had their segment clipped to the sample length");
        }
        Ok(out)
    }

    /// Kernel between two arbitrary sample sets.
    pub fn cross_kernel(&self, a: &Dataset, b: &Dataset) -> Result<KernelBlock> {
        let pa = self.posteriors(a)?;
        let pb = self.posteriors(b)?;
        let mut k = Matrix::zeros(a.len(), b.len());
        for (x, y) in pa.iter().zip(&pb) {
            gram_acc(x, y, &mut k);
        }
        Ok(KernelBlock {
            row_ids: a.samples().iter().map(|s| s.id.clone()).collect(),
            col_ids: b.samples().iter().map(|s| s.id.clone()).collect(),
            values: k,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::with_header(MODEL_MAGIC, FORMAT_VERSION);
        w.usize(self.n_vars);
        w.usize(self.q);
        w.usize(self.c);
        w.usize(self.train_ids.len());
        for id in &self.train_ids {
            w.str(id);
        }
        w.usize(self.instances.len());
        for inst in &self.instances {
            w.usize(inst.q1);
            w.usize(inst.q2);
            w.usize(inst.view.start);
            w.usize(inst.view.len);
            w.usizes(&inst.view.vars);
            w.usizes(&inst.eta);
            for x in [inst.priors.a0, inst.priors.b0, inst.priors.n0, inst.priors.dirichlet] {
                w.f64(x);
            }
            w.f64s(inst.gmm.theta());
            for g in 0..inst.q2 {
                w.matrix(inst.gmm.means(g));
            }
            w.matrix(inst.gmm.sigma());
            w.usize(inst.trace.len());
            for e in &inst.trace {
                w.f64(e.objective);
                w.bool(e.restarted);
            }
            w.matrix(&inst.train_posteriors);
        }
        w.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (mut r, version) = Reader::open(&bytes, MODEL_MAGIC, "kernel model")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported kernel model version {version}")));
        }
        let n_vars = r.usize()?;
        let q = r.usize()?;
        let c = r.usize()?;
        let n_ids = r.usize()?;
        let train_ids = (0..n_ids).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let n_inst = r.usize()?;
        let mut instances = Vec::new();
        for _ in 0..n_inst {
            let q1 = r.usize()?;
            let q2 = r.usize()?;
            let view = View {
                start: r.usize()?,
                len: r.usize()?,
                vars: r.usizes()?,
            };
            let eta = r.usizes()?;
            let priors = MapPriors {
                a0: r.f64()?,
                b0: r.f64()?,
                n0: r.f64()?,
                dirichlet: r.f64()?,
            };
            let theta = r.f64s()?;
            if theta.len() != q2 {
                return Err(Error::Format("component count does not match weights".into()));
            }
            let means = (0..q2).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
            let sigma = r.matrix()?;
            let gmm = DiagGmm::new(theta, means, sigma)?;
            if view.vars.len() != gmm.n_vars() || view.len != gmm.len() || view.vars.iter().any(|&v| v >= n_vars) {
                return Err(Error::Format("member view does not match its mixture".into()));
            }
            let n_trace = r.usize()?;
            let trace = (0..n_trace)
                .map(|_| {
                    Ok(TraceEntry {
                        objective: r.f64()?,
                        restarted: r.bool()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let train_posteriors = r.matrix()?;
            if train_posteriors.shape() != (n_ids, q2) {
                return Err(Error::Format("stored posteriors have the wrong shape".into()));
            }
            instances.push(TckInstance {
                q1,
                q2,
                view,
                eta,
                priors,
                gmm,
                trace,
                train_posteriors,
            });
        }
        r.finish()?;
        Ok(Self {
            n_vars,
            q,
            c,
            train_ids,
            instances,
        })
    }
}

/// Kernel between the training set (rows) and `new` samples (columns),
/// reusing the stored training posteriors.
pub fn kernel_out_of_sample(model: &TckModel, new: &Dataset, train: &Dataset) -> Result<KernelBlock> {
    if train.len() != model.train_ids.len()
        || train.samples().iter().zip(&model.train_ids).any(|(s, id)| &s.id != id)
    {
        return Err(Error::Data("training set does not match the one the kernel model was fit on".into()));
    }
    let pn = model.posteriors(new)?;
    let mut k = Matrix::zeros(train.len(), new.len());
    for (inst, p) in model.instances.iter().zip(&pn) {
        gram_acc(&inst.train_posteriors, p, &mut k);
    }
    Ok(KernelBlock {
        row_ids: model.train_ids.clone(),
        col_ids: new.samples().iter().map(|s| s.id.clone()).collect(),
        values: k,
    })
}

fn ids_header(ids: &[String]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(ids)?;
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv writer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn matrix_csv(header: String, m: &Matrix) -> String {
    let mut out = header;
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Largest `|K_ij - K_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let k = &self.values;
        let mut worst: f64 = 0.0;
        for i in 0..k.rows() {
            for j in 0..i {
                worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
            }
        }
        worst
    }

    /// Rows and columns reordered to `indices`.
    pub fn select(&self, indices: &[usize]) -> KernelMatrix {
        KernelMatrix {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            values: self.values.select(indices, indices),
        }
    }

    /// Header line of sample ids, then one row per sample.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = matrix_csv(ids_header(&self.ids)?, &self.values);
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let ids: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::with_capacity(ids.len() * ids.len());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            for cell in rec.iter() {
                data.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Data(format!("bad kernel entry '{cell}'")))?,
                );
            }
        }
        if data.len() != ids.len() * ids.len() {
            return Err(Error::Data(format!("kernel CSV is not {0}x{0}", ids.len())));
        }
        Ok(Self {
            values: Matrix::from_vec(ids.len(), ids.len(), data)?,
            ids,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::with_header(KERNEL_MAGIC, FORMAT_VERSION);
        w.usize(self.ids.len());
        for id in &self.ids {
            w.str(id);
        }
        w.matrix(&self.values);
        w.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (mut r, version) = Reader::open(&bytes, KERNEL_MAGIC, "kernel matrix")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported kernel matrix version {version}")));
        }
        let n = r.usize()?;
        let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let values = r.matrix()?;
        r.finish()?;
        if values.shape() != (n, n) {
            return Err(Error::Format("kernel matrix shape does not match its ids".into()));
        }
        Ok(Self { ids, values })
    }
}

impl KernelBlock {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut header = vec![String::from("row_id")];
        header.extend(self.col_ids.iter().cloned());
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&header)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.values.row(i).iter().map(|x| format!("{x}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv writer: {e}")))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Posterior vectors for a single sample under every member, unnormalised.
pub fn sample_posteriors(model: &TckModel, s: &MtsSample) -> Vec<Vec<f64>> {
    model
        .instances
        .iter()
        .map(|inst| posterior_of(&inst.gmm, &Cells::extract(s, &inst.view)))
        .collect()
}
