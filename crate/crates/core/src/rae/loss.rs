use crate::error::{Error, Result};
use crate::numeric::{Matrix, Tape, Var};
use crate::rae::model::{decode_on_tape, encode_on_tape, Architecture, Batch, Layout, ParamVars};

/// A loss value and whether it fell back to its conventional value because
/// the input was degenerate (an empty mask, a zero Gram matrix).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub degenerate: bool,
}

/// Mean squared error; in masked mode only cells with `mask = true` count
/// and the sum is divided by their number.
pub fn loss_reconstruction(x: &Matrix, x_hat: &Matrix, mask: &[bool], masked: bool) -> Result<LossValue> {
    if x.shape() != x_hat.shape() || mask.len() != x.len() {
        return Err(Error::Shape(format!(
            "reconstruction loss on {:?} vs {:?} with a mask of {}",
            x.shape(),
            x_hat.shape(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((a, b), &m) in x.as_slice().iter().zip(x_hat.as_slice()).zip(mask) {
        if !masked || m {
            sum += (a - b).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Ok(LossValue {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(LossValue {
        value: sum / count as f64,
        degenerate: false,
    })
}

/// `‖ZZᵀ/‖ZZᵀ‖_F − K/‖K‖_F‖_F`; `√2` when either Gram matrix is zero.
pub fn loss_alignment(z: &Matrix, k: &Matrix) -> Result<LossValue> {
    let n = z.rows();
    if k.shape() != (n, n) {
        return Err(Error::Shape(format!("kernel block {:?} for a batch of {n}", k.shape())));
    }
    let zz = z.matmul(&z.transpose())?;
    let (nz, nk) = (zz.frobenius_norm(), k.frobenius_norm());
    if nz == 0.0 || nk == 0.0 {
        return Ok(LossValue {
            value: std::f64::consts::SQRT_2,
            degenerate: true,
        });
    }
    let diff = zz.scale(1.0 / nz).sub(&k.scale(1.0 / nk))?;
    Ok(LossValue {
        value: diff.frobenius_norm(),
        degenerate: false,
    })
}

/// `L_r + λ‖W‖² + α L_k`.
pub fn loss_total(recon: f64, weight_sq: f64, align: f64, lambda: f64, alpha: f64) -> f64 {
    recon + lambda * weight_sq + alpha * align
}

/// Nodes of the composite loss on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub recon: Var,
    pub weight_sq: Var,
    pub align: Option<Var>,
    pub z: Var,
    pub degenerate: bool,
}

/// Options of one forward pass of the training loss.
#[derive(Clone, Copy, Debug)]
pub struct LossSpec<'a> {
    pub lambda: f64,
    pub alpha: f64,
    /// Kernel sub-block of the batch, in batch order; needed when `alpha > 0`.
    pub kernel: Option<&'a Matrix>,
    /// One scheduled-sampling coin per decoder step (`true` = feed back the output).
    pub coins: &'a [bool],
}

/// Records encoder, decoder and the full loss for `batch`. `params` are the
/// tape nodes of the model parameters in model order.
pub fn forward_loss(
    tape: &mut Tape,
    arch: &Architecture,
    params: &[Var],
    batch: &Batch,
    spec: &LossSpec,
) -> Result<LossNodes> {
    let layout = Layout::new(arch);
    if params.len() != layout.shapes.len() {
        return Err(Error::Shape("parameter count does not match the architecture".into()));
    }
    if spec.coins.len() < batch.t_max() {
        return Err(Error::Shape("fewer scheduled-sampling coins than decoder steps".into()));
    }
    let pv = ParamVars {
        arch,
        layout: &layout,
        vars: params,
    };
    let z = encode_on_tape(tape, &pv, batch)?;
    let outs = decode_on_tape(tape, &pv, z, batch.t_max(), spec.coins, Some(&batch.inputs))?;

    let mut degenerate = false;
    let total_weight: f64 = batch.weights.iter().map(Matrix::sum).sum();
    let mut sq_terms = Vec::with_capacity(outs.len());
    for (t, &y) in outs.iter().enumerate() {
        let target = tape.constant(batch.inputs[t].clone());
        let d = tape.sub(y, target)?;
        let sq = tape.square(d);
        let w = tape.mul_const(sq, batch.weights[t].clone())?;
        sq_terms.push(tape.sum(w));
    }
    let recon = if total_weight > 0.0 {
        let stacked = tape.concat_cols(&sq_terms)?;
        let s = tape.sum(stacked);
        tape.scale(s, 1.0 / total_weight)
    } else {
        degenerate = true;
        tape.scalar(0.0)
    };

    let weight_terms: Vec<Var> = params
        .iter()
        .zip(&layout.is_weight)
        .filter(|(_, &w)| w)
        .map(|(&p, _)| {
            let sq = tape.square(p);
            tape.sum(sq)
        })
        .collect();
    let stacked = tape.concat_cols(&weight_terms)?;
    let weight_sq = tape.sum(stacked);

    let mut total = recon;
    if spec.lambda != 0.0 {
        let l2 = tape.scale(weight_sq, spec.lambda);
        total = tape.add(total, l2)?;
    }
    let mut align = None;
    if spec.alpha != 0.0 {
        let k = spec
            .kernel
            .ok_or_else(|| Error::Config("alignment weight > 0 needs a kernel block".into()))?;
        let n = batch.size();
        if k.shape() != (n, n) {
            return Err(Error::Shape(format!("kernel block {:?} for a batch of {n}", k.shape())));
        }
        let nk = k.frobenius_norm();
        let zz = tape.matmul_nt(z, z)?;
        let nz = tape.value(zz).frobenius_norm();
        let a = if nz == 0.0 || nk == 0.0 {
            degenerate = true;
            tape.scalar(std::f64::consts::SQRT_2)
        } else {
            let norm = tape.frobenius_norm(zz);
            let zn = tape.div_scalar(zz, norm)?;
            let kn = tape.constant(k.scale(1.0 / nk));
            let diff = tape.sub(zn, kn)?;
            tape.frobenius_norm(diff)
        };
        let scaled = tape.scale(a, spec.alpha);
        total = tape.add(total, scaled)?;
        align = Some(a);
    }
    Ok(LossNodes {
        total,
        recon,
        weight_sq,
        align,
        z,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    #[test]
    fn reconstruction_cases() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(loss_reconstruction(&x, &x, &[true; 3], false).unwrap().value, 0.0);
        let off = Matrix::from_rows(&[vec![1.0, 9.0, 3.0]]);
        assert_eq!(loss_reconstruction(&x, &off, &[true, false, true], true).unwrap().value, 0.0);
        let e = Matrix::from_rows(&[vec![2.0, 7.0, 5.0]]);
        assert_eq!(loss_reconstruction(&x, &e, &[true, false, true], true).unwrap().value, 2.5);
        let empty = loss_reconstruction(&x, &e, &[false; 3], true).unwrap();
        assert!(empty.degenerate && empty.value == 0.0);
    }

    #[test]
    fn alignment_cases() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0], vec![-1.0, 0.3]]);
        let k = z.matmul(&z.transpose()).unwrap().scale(3.7);
        assert!(loss_alignment(&z, &k).unwrap().value < 1e-14);

        // Z Zᵀ = diag(1, 0), K = diag(0, 1): orthogonal unit matrices.
        let z = Matrix::from_rows(&[vec![1.0], vec![0.0]]);
        let k = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert!((loss_alignment(&z, &k).unwrap().value - 2f64.sqrt()).abs() < 1e-15);

        let zero = Matrix::zeros(2, 1);
        assert!(loss_alignment(&zero, &k).unwrap().degenerate);
    }

    #[test]
    fn alignment_matches_elementwise_oracle_and_is_scale_free() {
        let mut rng = Rng::new(3);
        let z = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let k = Matrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
        let mut gram = [[0.0; 4]; 4];
        let mut nz = 0.0;
        let mut nk = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                gram[i][j] = (0..3).map(|d| z[(i, d)] * z[(j, d)]).sum();
                nz += gram[i][j] * gram[i][j];
                nk += k[(i, j)] * k[(i, j)];
            }
        }
        let (nz, nk) = (f64::sqrt(nz), f64::sqrt(nk));
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += (gram[i][j] / nz - k[(i, j)] / nk).powi(2);
            }
        }
        let got = loss_alignment(&z, &k).unwrap().value;
        assert!((got - acc.sqrt()).abs() < 1e-12);
        assert!((loss_alignment(&z.scale(42.0), &k).unwrap().value - got).abs() < 1e-12);
    }

    #[test]
    fn total_is_additive() {
        assert_eq!(loss_total(0.3, 5.0, 0.0, 0.0, 0.0), 0.3);
        assert_eq!(loss_total(0.3, 0.0, 1.0, 0.1, 0.0), 0.3);
        assert!((loss_total(0.3, 5.0, 0.7, 0.01, 0.1) - (0.3 + 0.05 + 0.07)).abs() < 1e-15);
    }

    fn gradcheck_case(masked: bool, kind: crate::rae::CellKind) -> f64 {
        use crate::data::MtsSample;
        use crate::numeric::gradient_check;
        use crate::rae::{Architecture, TkaeModel};
        let arch = Architecture::new(kind, 2, 3, 1, true).unwrap();
        let model = TkaeModel::new(arch, 11);
        let mut rng = Rng::new(12);
        let lens = [5, 3, 4, 5];
        let samples: Vec<MtsSample> = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let m = Matrix::from_fn(2, l, |_, _| rng.normal());
                let mut s = MtsSample::new(format!("g{i}"), m, None).unwrap();
                if masked {
                    s.hide(0, 1);
                    s.hide(1, 0);
                    s.fill_missing_with(|_, _| 0.25);
                }
                s
            })
            .collect();
        let refs: Vec<&MtsSample> = samples.iter().collect();
        let batch = Batch::new(&refs, masked).unwrap();
        let k = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.3 });
        let coins = [true, false, true, false, true];
        let spec = LossSpec {
            lambda: 0.001,
            alpha: 0.1,
            kernel: Some(&k),
            coins: &coins,
        };
        let r = gradient_check(
            |tape, vars| Ok(forward_loss(tape, &arch, vars, &batch, &spec)?.total),
            model.params(),
            1e-5,
        )
        .unwrap();
        r.max_rel_error
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::rae::CellKind;
        for kind in [CellKind::Gru, CellKind::Lstm] {
            for masked in [false, true] {
                let e = gradcheck_case(masked, kind);
                assert!(e < 1e-4, "{kind} masked={masked}: {e}");
            }
        }
    }
}
