use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Parameter matrices per cell: GRU `[W_gates, b_gates, W_cand, b_cand]`,
    /// LSTM `[W, b]` with gate blocks ordered input, forget, candidate, output.
    pub fn n_mats(self) -> usize {
        match self {
            CellKind::Gru => 4,
            CellKind::Lstm => 2,
        }
    }

    pub fn n_gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub(crate) fn shapes(self, input: usize, hidden: usize) -> Vec<(usize, usize)> {
        let rows = input + hidden;
        match self {
            CellKind::Gru => vec![(rows, 2 * hidden), (1, 2 * hidden), (rows, hidden), (1, hidden)],
            CellKind::Lstm => vec![(rows, 4 * hidden), (1, 4 * hidden)],
        }
    }

    pub(crate) fn is_weight(self, k: usize) -> bool {
        k.is_multiple_of(2)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind '{other}'"))),
        }
    }
}

/// Weights of one recurrent cell. Weight matrices act on the row vector
/// `[x, h]` from the right.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden: usize,
    pub mats: Vec<Matrix>,
}

impl CellParams {
    pub fn new(kind: CellKind, input_size: usize, hidden: usize, mats: Vec<Matrix>) -> Result<Self> {
        let shapes = kind.shapes(input_size, hidden);
        if mats.len() != shapes.len() || mats.iter().zip(&shapes).any(|(m, s)| m.shape() != *s) {
            return Err(Error::Shape(format!(
                "{kind} cell {input_size}->{hidden} expects matrices {shapes:?}"
            )));
        }
        Ok(Self {
            kind,
            input_size,
            hidden,
            mats,
        })
    }

    pub fn zeros(kind: CellKind, input_size: usize, hidden: usize) -> Self {
        let mats = kind.shapes(input_size, hidden).into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            kind,
            input_size,
            hidden,
            mats,
        }
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases, LSTM forget bias 1.
    pub fn init(kind: CellKind, input_size: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(kind, input_size, hidden);
        let s = 1.0 / ((input_size + hidden) as f64).sqrt();
        for (k, m) in p.mats.iter_mut().enumerate() {
            if kind.is_weight(k) {
                m.as_mut_slice().iter_mut().for_each(|x| *x = rng.uniform_range(-s, s));
            }
        }
        if kind == CellKind::Lstm {
            for j in hidden..2 * hidden {
                p.mats[1][(0, j)] = 1.0;
            }
        }
        p
    }
}

/// Hidden state, plus the memory cell for LSTMs.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: (kind == CellKind::Lstm).then(|| vec![0.0; hidden]),
        }
    }
}

/// One transition on a batch (rows) recorded on `tape`. `p` are the leaves
/// of the cell's matrices in [`CellKind::n_mats`] order.
pub(crate) fn step_on_tape(
    tape: &mut Tape,
    kind: CellKind,
    p: &[Var],
    x: Var,
    h: Var,
    c: Option<Var>,
) -> Result<(Var, Option<Var>)> {
    let hidden = tape.value(h).cols();
    let xh = tape.concat_cols(&[x, h])?;
    match kind {
        CellKind::Gru => {
            let pre = tape.matmul(xh, p[0])?;
            let pre = tape.add_row(pre, p[1])?;
            let gates = tape.sigmoid(pre);
            let u = tape.slice_cols(gates, 0, hidden)?;
            let r = tape.slice_cols(gates, hidden, hidden)?;
            let rh = tape.mul(r, h)?;
            let xrh = tape.concat_cols(&[x, rh])?;
            let cand = tape.matmul(xrh, p[2])?;
            let cand = tape.add_row(cand, p[3])?;
            let cand = tape.tanh(cand);
            let d = tape.sub(cand, h)?;
            let ud = tape.mul(u, d)?;
            Ok((tape.add(h, ud)?, None))
        }
        CellKind::Lstm => {
            let c = c.ok_or_else(|| Error::Shape("LSTM step needs a memory cell".into()))?;
            let pre = tape.matmul(xh, p[0])?;
            let pre = tape.add_row(pre, p[1])?;
            let g = tape.lstm_gates(pre)?;
            let i = tape.slice_cols(g, 0, hidden)?;
            let f = tape.slice_cols(g, hidden, hidden)?;
            let cand = tape.slice_cols(g, 2 * hidden, hidden)?;
            let o = tape.slice_cols(g, 3 * hidden, hidden)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, cand)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new);
            Ok((tape.mul(o, tc)?, Some(c_new)))
        }
    }
}

/// `h_t = φ(x_t, h_{t-1})` for a single input vector.
pub fn cell_step(params: &CellParams, x: &[f64], state: &CellState) -> Result<CellState> {
    if x.len() != params.input_size || state.h.len() != params.hidden {
        return Err(Error::Shape(format!(
            "cell {}->{} given input {} and state {}",
            params.input_size,
            params.hidden,
            x.len(),
            state.h.len()
        )));
    }
    let lstm = params.kind == CellKind::Lstm;
    match &state.c {
        Some(c) if !lstm || c.len() != params.hidden => {
            return Err(Error::Shape("memory cell does not match the cell kind".into()))
        }
        None if lstm => return Err(Error::Shape("LSTM state needs a memory cell".into())),
        _ => {}
    }
    let mut tape = Tape::new();
    let p: Vec<Var> = params.mats.iter().map(|m| tape.constant(m.clone())).collect();
    let xv = tape.constant(Matrix::from_vec(1, x.len(), x.to_vec())?);
    let hv = tape.constant(Matrix::from_vec(1, state.h.len(), state.h.clone())?);
    let cv = match &state.c {
        Some(c) => Some(tape.constant(Matrix::from_vec(1, c.len(), c.clone())?)),
        None => None,
    };
    let (h, c) = step_on_tape(&mut tape, params.kind, &p, xv, hv, cv)?;
    Ok(CellState {
        h: tape.value(h).as_slice().to_vec(),
        c: c.map(|c| tape.value(c).as_slice().to_vec()),
    })
}
