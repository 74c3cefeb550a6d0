use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MtsSample};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng, Tape, Var};
use crate::persist::{read_file, Reader, Writer};
use crate::rae::cell::{step_on_tape, CellKind, CellParams};

const MAGIC: &[u8; 4] = b"TKAE";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub cell: CellKind,
    pub n_vars: usize,
    /// Code size, also the number of units in every recurrent layer.
    pub d_z: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

impl Architecture {
    pub fn new(cell: CellKind, n_vars: usize, d_z: usize, layers: usize, bidirectional: bool) -> Result<Self> {
        if n_vars == 0 || d_z == 0 || layers == 0 {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        Ok(Self {
            cell,
            n_vars,
            d_z,
            layers,
            bidirectional,
        })
    }

    /// Unidirectional single-layer encoder, used for reconstruction-based
    /// anomaly detection.
    pub fn encdec_ad(cell: CellKind, n_vars: usize, d_z: usize) -> Result<Self> {
        Self::new(cell, n_vars, d_z, 1, false)
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stack {
    EncoderForward,
    EncoderBackward,
    Decoder,
}

/// Positions of every matrix in the flat parameter list.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub enc_f: Vec<usize>,
    pub enc_b: Vec<usize>,
    pub dec: Vec<usize>,
    pub combine: usize,
    pub out: usize,
    pub shapes: Vec<(usize, usize)>,
    pub is_weight: Vec<bool>,
}

impl Layout {
    pub fn new(a: &Architecture) -> Self {
        let mut shapes = Vec::new();
        let mut is_weight = Vec::new();
        let push_cell = |input: usize, shapes: &mut Vec<(usize, usize)>, is_weight: &mut Vec<bool>| {
            let base = shapes.len();
            for (k, s) in a.cell.shapes(input, a.d_z).into_iter().enumerate() {
                shapes.push(s);
                is_weight.push(a.cell.is_weight(k));
            }
            base
        };
        let stack = |shapes: &mut Vec<(usize, usize)>, is_weight: &mut Vec<bool>| {
            (0..a.layers)
                .map(|l| push_cell(if l == 0 { a.n_vars } else { a.d_z }, shapes, is_weight))
                .collect::<Vec<_>>()
        };
        let enc_f = stack(&mut shapes, &mut is_weight);
        let enc_b = if a.bidirectional {
            stack(&mut shapes, &mut is_weight)
        } else {
            Vec::new()
        };
        let dec = stack(&mut shapes, &mut is_weight);
        let combine = shapes.len();
        shapes.push((a.directions() * a.d_z, a.d_z));
        shapes.push((1, a.d_z));
        is_weight.extend([true, false]);
        let out = shapes.len();
        shapes.push((a.d_z, a.n_vars));
        shapes.push((1, a.n_vars));
        is_weight.extend([true, false]);
        Self {
            enc_f,
            enc_b,
            dec,
            combine,
            out,
            shapes,
            is_weight,
        }
    }
}

/// Encoder, combine layer and decoder parameters of a recurrent autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TkaeModel {
    pub arch: Architecture,
    params: Vec<Matrix>,
}

impl TkaeModel {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let layout = Layout::new(&arch);
        let mut rng = Rng::new(seed);
        let mut params: Vec<Matrix> = Vec::with_capacity(layout.shapes.len());
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for (l, &b) in layout.enc_f.iter().chain(&layout.enc_b).chain(&layout.dec).enumerate() {
            let input = if l % arch.layers == 0 { arch.n_vars } else { arch.d_z };
            cells.push((b, input));
        }
        cells.sort_unstable();
        for (_, input) in cells {
            params.extend(CellParams::init(arch.cell, input, arch.d_z, &mut rng).mats);
        }
        for idx in [layout.combine, layout.out] {
            let (r, c) = layout.shapes[idx];
            let s = 1.0 / (r as f64).sqrt();
            params.push(Matrix::from_fn(r, c, |_, _| rng.uniform_range(-s, s)));
            params.push(Matrix::zeros(1, c));
        }
        debug_assert!(params.iter().zip(&layout.shapes).all(|(p, s)| p.shape() == *s));
        Self { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<Matrix>) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.shapes.len() || params.iter().zip(&layout.shapes).any(|(p, s)| p.shape() != *s) {
            return Err(Error::Shape("parameter list does not match the architecture".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<Matrix> {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.arch)
    }

    /// Flags marking weight matrices (as opposed to biases), in parameter order.
    pub fn weight_mask(&self) -> Vec<bool> {
        self.layout().is_weight
    }

    pub fn cell(&self, stack: Stack, layer: usize) -> Option<CellParams> {
        let layout = self.layout();
        let bases = match stack {
            Stack::EncoderForward => &layout.enc_f,
            Stack::EncoderBackward => &layout.enc_b,
            Stack::Decoder => &layout.dec,
        };
        let b = *bases.get(layer)?;
        let input = if layer == 0 { self.arch.n_vars } else { self.arch.d_z };
        let mats = self.params[b..b + self.arch.cell.n_mats()].to_vec();
        CellParams::new(self.arch.cell, input, self.arch.d_z, mats).ok()
    }

    pub fn set_cell(&mut self, stack: Stack, layer: usize, cell: CellParams) -> Result<()> {
        let layout = self.layout();
        let bases = match stack {
            Stack::EncoderForward => &layout.enc_f,
            Stack::EncoderBackward => &layout.enc_b,
            Stack::Decoder => &layout.dec,
        };
        let b = *bases
            .get(layer)
            .ok_or_else(|| Error::Config(format!("no layer {layer} in {stack:?}")))?;
        if cell.kind != self.arch.cell
            || cell.mats.iter().zip(&layout.shapes[b..]).any(|(m, s)| m.shape() != *s)
        {
            return Err(Error::Shape("cell does not fit this slot".into()));
        }
        for (k, m) in cell.mats.into_iter().enumerate() {
            self.params[b + k] = m;
        }
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::with_header(MAGIC, FORMAT_VERSION);
        w.u8(match self.arch.cell {
            CellKind::Gru => 0,
            CellKind::Lstm => 1,
        });
        w.usize(self.arch.n_vars);
        w.usize(self.arch.d_z);
        w.usize(self.arch.layers);
        w.bool(self.arch.bidirectional);
        w.usize(self.params.len());
        for p in &self.params {
            w.matrix(p);
        }
        w.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (mut r, version) = Reader::open(&bytes, MAGIC, "autoencoder model")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format version {version}")));
        }
        let cell = match r.u8()? {
            0 => CellKind::Gru,
            1 => CellKind::Lstm,
            b => return Err(Error::Format(format!("unknown cell tag {b}"))),
        };
        let n_vars = r.usize()?;
        let d_z = r.usize()?;
        let layers = r.usize()?;
        let bidirectional = r.bool()?;
        let arch = Architecture::new(cell, n_vars, d_z, layers, bidirectional)
            .map_err(|e| Error::Format(format!("bad architecture: {e}")))?;
        let n = r.usize()?;
        let params = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::from_params(arch, params).map_err(|e| Error::Format(e.to_string()))
    }
}

/// A padded mini-batch. Step `t` of every sequence is a `B x V` matrix;
/// rows past a sample's own length hold zeros.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lens: Vec<usize>,
    pub inputs: Vec<Matrix>,
    /// Inputs reversed per sample, for the backward encoder.
    pub reversed: Vec<Matrix>,
    /// Per-step loss weights: 1 for cells that count in the reconstruction loss.
    pub weights: Vec<Matrix>,
}

impl Batch {
    /// `masked` restricts the loss weights to observed cells.
    pub fn new(samples: &[&MtsSample], masked: bool) -> Result<Self> {
        let b = samples.len();
        if b == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let v = samples[0].n_vars();
        if samples.iter().any(|s| s.n_vars() != v) {
            return Err(Error::Data("batch mixes variate counts".into()));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_complete()) {
            return Err(Error::Data(format!(
                "sample {} still has missing cells; impute before encoding",
                s.id
            )));
        }
        let lens: Vec<usize> = samples.iter().map(|s| s.len()).collect();
        let t_max = *lens.iter().max().expect("non-empty");
        let mut inputs = vec![Matrix::zeros(b, v); t_max];
        let mut reversed = vec![Matrix::zeros(b, v); t_max];
        let mut weights = vec![Matrix::zeros(b, v); t_max];
        for (n, s) in samples.iter().enumerate() {
            let len = s.len();
            for t in 0..len {
                for j in 0..v {
                    let x = s.value(j, t);
                    inputs[t][(n, j)] = x;
                    reversed[len - 1 - t][(n, j)] = x;
                    weights[t][(n, j)] = if !masked || s.observed(j, t) { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(Self {
            lens,
            inputs,
            reversed,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.lens.len()
    }

    pub fn t_max(&self) -> usize {
        self.inputs.len()
    }

    fn active(&self, t: usize) -> Vec<bool> {
        self.lens.iter().map(|&l| t < l).collect()
    }
}

/// Leaves of the flat parameter list on a tape.
pub(crate) struct ParamVars<'a> {
    pub arch: &'a Architecture,
    pub layout: &'a Layout,
    pub vars: &'a [Var],
}

impl ParamVars<'_> {
    fn cell(&self, base: usize) -> &[Var] {
        &self.vars[base..base + self.arch.cell.n_mats()]
    }
}

/// Runs one stack of layers over `seq`; states stop updating once a row's
/// sequence has ended. Returns the final top-layer hidden state.
fn run_stack(tape: &mut Tape, pv: &ParamVars, bases: &[usize], seq: &[Matrix], batch: &Batch) -> Result<Var> {
    let (b, h) = (batch.size(), pv.arch.d_z);
    let lstm = pv.arch.cell == CellKind::Lstm;
    let mut layer_in: Vec<Var> = seq.iter().map(|m| tape.constant(m.clone())).collect();
    let mut last = None;
    for &base in bases {
        let mut hs = tape.constant(Matrix::zeros(b, h));
        let mut cs = lstm.then(|| tape.constant(Matrix::zeros(b, h)));
        let mut outs = Vec::with_capacity(layer_in.len());
        for (t, &x) in layer_in.iter().enumerate() {
            let (mut hn, mut cn) = step_on_tape(tape, pv.arch.cell, pv.cell(base), x, hs, cs)?;
            let active = batch.active(t);
            if active.iter().any(|a| !a) {
                hn = tape.select_rows(hn, hs, active.clone())?;
                if let (Some(c_new), Some(c_old)) = (cn, cs) {
                    cn = Some(tape.select_rows(c_new, c_old, active)?);
                }
            }
            hs = hn;
            cs = cn;
            outs.push(hn);
        }
        last = Some(hs);
        layer_in = outs;
    }
    Ok(last.expect("at least one layer"))
}

/// `Z = tanh([h_T^f ; h_T^b] W + b)`, one row per batch sample.
pub(crate) fn encode_on_tape(tape: &mut Tape, pv: &ParamVars, batch: &Batch) -> Result<Var> {
    let hf = run_stack(tape, pv, &pv.layout.enc_f, &batch.inputs, batch)?;
    let joint = if pv.arch.bidirectional {
        let hb = run_stack(tape, pv, &pv.layout.enc_b, &batch.reversed, batch)?;
        tape.concat_cols(&[hf, hb])?
    } else {
        hf
    };
    let c = pv.layout.combine;
    let pre = tape.matmul(joint, pv.vars[c])?;
    let pre = tape.add_row(pre, pv.vars[c + 1])?;
    Ok(tape.tanh(pre))
}

/// Generative decoder: every layer starts from `z`, the first input is 0,
/// and step `t > 0` feeds back the previous output when `coins[t]` is set,
/// otherwise the teacher's value at `t - 1`.
pub(crate) fn decode_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    z: Var,
    t_len: usize,
    coins: &[bool],
    teacher: Option<&[Matrix]>,
) -> Result<Vec<Var>> {
    let b = tape.value(z).rows();
    let v = pv.arch.n_vars;
    let lstm = pv.arch.cell == CellKind::Lstm;
    let mut hs: Vec<Var> = vec![z; pv.arch.layers];
    let mut cs: Vec<Option<Var>> = vec![lstm.then_some(z); pv.arch.layers];
    let o = pv.layout.out;
    let mut outs: Vec<Var> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = if t == 0 {
            tape.constant(Matrix::zeros(b, v))
        } else if coins[t] {
            outs[t - 1]
        } else {
            let teacher = teacher.ok_or_else(|| Error::Config("teacher forcing requested without a teacher".into()))?;
            tape.constant(teacher[t - 1].clone())
        };
        for (l, &base) in pv.layout.dec.iter().enumerate() {
            let (hn, cn) = step_on_tape(tape, pv.arch.cell, pv.cell(base), x, hs[l], cs[l])?;
            hs[l] = hn;
            cs[l] = cn;
            x = hn;
        }
        let y = tape.matmul(x, pv.vars[o])?;
        outs.push(tape.add_row(y, pv.vars[o + 1])?);
    }
    Ok(outs)
}

pub(crate) fn constants(tape: &mut Tape, params: &[Matrix]) -> Vec<Var> {
    params.iter().map(|p| tape.constant(p.clone())).collect()
}

/// Codes `z` for every sample of `ds`, one row each.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub ids: Vec<String>,
    pub z: Matrix,
}

impl Representation {
    /// CSV with columns `sample_id, z_1, …, z_D`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec![String::from("sample_id")];
        header.extend((1..=self.z.cols()).map(|k| format!("z_{k}")));
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.z.row(i).iter().map(|x| format!("{x}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv writer: {e}")))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

const INFERENCE_BATCH: usize = 64;

impl TkaeModel {
    fn check_vars(&self, n_vars: usize) -> Result<()> {
        if n_vars != self.arch.n_vars {
            return Err(Error::Data(format!(
                "samples have {n_vars} variates, model expects {}",
                self.arch.n_vars
            )));
        }
        Ok(())
    }

    /// Encodes one batch and decodes it generatively to each sample's length.
    fn infer_batch(&self, samples: &[&MtsSample], decode: bool) -> Result<(Matrix, Vec<Matrix>)> {
        let batch = Batch::new(samples, false)?;
        let layout = self.layout();
        let mut tape = Tape::new();
        let vars = constants(&mut tape, &self.params);
        let pv = ParamVars {
            arch: &self.arch,
            layout: &layout,
            vars: &vars,
        };
        let z = encode_on_tape(&mut tape, &pv, &batch)?;
        let mut recon = Vec::new();
        if decode {
            let coins = vec![true; batch.t_max()];
            let outs = decode_on_tape(&mut tape, &pv, z, batch.t_max(), &coins, None)?;
            for (n, s) in samples.iter().enumerate() {
                recon.push(Matrix::from_fn(s.n_vars(), s.len(), |v, t| tape.value(outs[t])[(n, v)]));
            }
        }
        Ok((tape.value(z).clone(), recon))
    }

    pub fn encode(&self, sample: &MtsSample) -> Result<Vec<f64>> {
        self.check_vars(sample.n_vars())?;
        Ok(self.infer_batch(&[sample], false)?.0.into_vec())
    }

    pub fn encode_dataset(&self, ds: &Dataset) -> Result<Representation> {
        self.check_vars(ds.n_vars())?;
        let mut z = Matrix::zeros(ds.len(), self.arch.d_z);
        let refs: Vec<&MtsSample> = ds.samples().iter().collect();
        for (c, chunk) in refs.chunks(INFERENCE_BATCH).enumerate() {
            let (zb, _) = self.infer_batch(chunk, false)?;
            for i in 0..chunk.len() {
                z.row_mut(c * INFERENCE_BATCH + i).copy_from_slice(zb.row(i));
            }
        }
        Ok(Representation {
            ids: ds.samples().iter().map(|s| s.id.clone()).collect(),
            z,
        })
    }

    /// Generative (`p_s = 1`) reconstructions, `V x T` per sample.
    pub fn reconstruct(&self, ds: &Dataset) -> Result<Vec<Matrix>> {
        self.check_vars(ds.n_vars())?;
        let refs: Vec<&MtsSample> = ds.samples().iter().collect();
        let mut out = Vec::with_capacity(ds.len());
        for chunk in refs.chunks(INFERENCE_BATCH) {
            out.extend(self.infer_batch(chunk, true)?.1);
        }
        Ok(out)
    }

    pub fn reconstruct_sample(&self, sample: &MtsSample) -> Result<Matrix> {
        self.check_vars(sample.n_vars())?;
        Ok(self.infer_batch(&[sample], true)?.1.remove(0))
    }
}

/// Decodes `z` to a `V x t_len` series. With `p_s < 1` each step after the
/// first consults one coin drawn from `rng` and uses the teacher's previous
/// value when the coin says so.
pub fn decode(
    model: &TkaeModel,
    z: &[f64],
    t_len: usize,
    p_s: f64,
    teacher: Option<&MtsSample>,
    rng: &mut Rng,
) -> Result<Matrix> {
    if t_len == 0 {
        return Err(Error::Config("decode length must be positive".into()));
    }
    if z.len() != model.arch.d_z {
        return Err(Error::Shape(format!("code has {} entries, model uses {}", z.len(), model.arch.d_z)));
    }
    if !(0.0..=1.0).contains(&p_s) {
        return Err(Error::Config(format!("p_s must lie in [0, 1], got {p_s}")));
    }
    let teacher_steps = match teacher {
        Some(s) => {
            model.check_vars(s.n_vars())?;
            if s.len() + 1 < t_len || !s.is_complete() {
                return Err(Error::Data("teacher must be complete and cover the decoded length".into()));
            }
            Some((0..t_len).map(|t| Matrix::from_vec(1, s.n_vars(), if t < s.len() { s.step(t) } else { vec![0.0; s.n_vars()] })).collect::<Result<Vec<_>>>()?)
        }
        None if p_s < 1.0 => return Err(Error::Config("p_s < 1 needs a teacher sequence".into())),
        None => None,
    };
    let coins: Vec<bool> = (0..t_len).map(|_| p_s >= 1.0 || (p_s > 0.0 && rng.bernoulli(p_s))).collect();
    let layout = model.layout();
    let mut tape = Tape::new();
    let vars = constants(&mut tape, model.params());
    let pv = ParamVars {
        arch: &model.arch,
        layout: &layout,
        vars: &vars,
    };
    let zv = tape.constant(Matrix::from_vec(1, z.len(), z.to_vec())?);
    let outs = decode_on_tape(&mut tape, &pv, zv, t_len, &coins, teacher_steps.as_deref())?;
    Ok(Matrix::from_fn(model.arch.n_vars, t_len, |v, t| tape.value(outs[t])[(0, v)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn arch(cell: CellKind, bidir: bool) -> Architecture {
        Architecture::new(cell, 2, 3, 2, bidir).unwrap()
    }

    fn sample(id: &str, len: usize, seed: u64) -> MtsSample {
        let mut rng = Rng::new(seed);
        MtsSample::new(id, Matrix::from_fn(2, len, |_, _| rng.normal()), None).unwrap()
    }

    #[test]
    fn codes_have_fixed_size() {
        let m = TkaeModel::new(arch(CellKind::Gru, true), 1);
        assert_eq!(m.encode(&sample("a", 4, 1)).unwrap().len(), 3);
        assert_eq!(m.encode(&sample("b", 11, 2)).unwrap().len(), 3);
    }

    #[test]
    fn padding_does_not_change_codes() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let m = TkaeModel::new(arch(cell, true), 2);
            let short = sample("s", 5, 3);
            let long = sample("l", 12, 4);
            let alone = m.encode(&short).unwrap();
            let ds = Dataset::new(vec![short, long], Split::Train).unwrap();
            let both = m.encode_dataset(&ds).unwrap();
            for (a, b) in alone.iter().zip(both.z.row(0)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unidirectional_codes_ignore_padding() {
        let m = TkaeModel::new(arch(CellKind::Lstm, false), 3);
        let short = sample("a", 6, 5);
        let alone = m.encode(&short).unwrap();
        let ds = Dataset::new(vec![sample("b", 15, 6), short], Split::Train).unwrap();
        let both = m.encode_dataset(&ds).unwrap();
        for (a, b) in alone.iter().zip(both.z.row(1)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn teacher_rules() {
        let m = TkaeModel::new(arch(CellKind::Gru, true), 4);
        let z = [0.1, -0.2, 0.3];
        let mut rng = Rng::new(0);
        assert!(decode(&m, &z, 5, 0.5, None, &mut rng).is_err());
        let gen = decode(&m, &z, 5, 1.0, None, &mut rng).unwrap();
        let t1 = sample("t1", 5, 1);
        let t2 = sample("t2", 5, 2);
        assert_eq!(gen, decode(&m, &z, 5, 1.0, Some(&t1), &mut rng).unwrap());
        assert_eq!(gen, decode(&m, &z, 5, 1.0, Some(&t2), &mut rng).unwrap());
        let forced1 = decode(&m, &z, 5, 0.0, Some(&t1), &mut rng).unwrap();
        let forced2 = decode(&m, &z, 5, 0.0, Some(&t2), &mut rng).unwrap();
        // The first output never depends on the teacher.
        assert_eq!(forced1[(0, 0)], forced2[(0, 0)]);
        assert_ne!(forced1[(0, 1)], forced2[(0, 1)]);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let a = Architecture::new(CellKind::Gru, 1, 1, 1, false).unwrap();
        let mut m = TkaeModel::new(a, 0);
        // Zero input, h0 = z: u = σ(w_u·z + b_u), cand = tanh(w_c·(r z) + b_c).
        let p = m.params_mut();
        let dec = Layout::new(&a).dec[0];
        p[dec] = Matrix::from_rows(&[vec![0.7, -0.4], vec![0.3, 0.9]]);
        p[dec + 1] = Matrix::from_rows(&[vec![0.1, 0.2]]);
        p[dec + 2] = Matrix::from_rows(&[vec![0.5], vec![-1.2]]);
        p[dec + 3] = Matrix::from_rows(&[vec![0.05]]);
        let out = Layout::new(&a).out;
        p[out] = Matrix::from_rows(&[vec![2.0]]);
        p[out + 1] = Matrix::from_rows(&[vec![-0.5]]);
        let z = 0.6;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let u = sig(0.3 * z + 0.1);
        let r = sig(0.9 * z + 0.2);
        let cand = (-1.2 * r * z + 0.05).tanh();
        let h = (1.0 - u) * z + u * cand;
        let y = decode(&m, &[z], 1, 1.0, None, &mut Rng::new(0)).unwrap();
        assert!((y[(0, 0)] - (2.0 * h - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn reversal_swaps_directions_for_symmetric_model() {
        let a = Architecture::new(CellKind::Gru, 2, 3, 1, true).unwrap();
        let mut m = TkaeModel::new(a, 7);
        let f = m.cell(Stack::EncoderForward, 0).unwrap();
        m.set_cell(Stack::EncoderBackward, 0, f).unwrap();
        // Combine weights symmetric under swapping the two halves.
        let c = Layout::new(&a).combine;
        let w = m.params()[c].clone();
        let sym = Matrix::from_fn(6, 3, |i, j| w[(i % 3, j)]);
        m.params_mut()[c] = sym;
        let s = sample("s", 7, 9);
        let rev = MtsSample::new("r", Matrix::from_fn(2, 7, |v, t| s.value(v, 6 - t)), None).unwrap();
        let (za, zb) = (m.encode(&s).unwrap(), m.encode(&rev).unwrap());
        for (x, y) in za.iter().zip(&zb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = TkaeModel::new(arch(CellKind::Lstm, true), 5);
        let p = dir.path().join("m.tkae");
        m.save(&p).unwrap();
        assert_eq!(TkaeModel::load(&p).unwrap(), m);
        fs::write(&p, b"TKAE\x02\0\0\0").unwrap();
        assert!(matches!(TkaeModel::load(&p), Err(Error::Format(_))));
    }
}
