//! Prompt projection, mask decoding and the supervised losses.
//!
//! Loss functions return their value together with the gradient with
//! respect to their input so the tape can splice them in as single nodes.

use crate::dataset::BinaryMask;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softmax, Matrix, ParamStore, Tape, Var};

/// Smoothing constant of the soft Dice loss.
pub const DICE_EPS: f64 = 1.0;
pub const BCE_WEIGHT: f64 = 2.0;
pub const DICE_WEIGHT: f64 = 0.5;

/// `z = W2 · relu(W1 · g̃ + b1) + b2`, mapping `1 × d` to `1 × d_v`.
pub fn project_prompt(tape: &mut Tape, store: &ParamStore, fused: Var) -> Result<Var> {
    let w1 = tape.param(store, "head.proj.w1")?;
    let b1 = tape.param(store, "head.proj.b1")?;
    let w2 = tape.param(store, "head.proj.w2")?;
    let b2 = tape.param(store, "head.proj.b2")?;
    let h = tape.matmul(fused, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let z = tape.matmul(h, w2)?;
    tape.add_row(z, b2)
}

/// Per-cell logits `⟨feature(p), z⟩ + bias` as an `HW × 1` column.
pub fn decode_mask(tape: &mut Tape, store: &ParamStore, grid: Var, z: Var) -> Result<Var> {
    if z.shape() != (1, grid.cols()) {
        return Err(Error::shape(format!(
            "prompt of shape {:?} for {}-channel features",
            z.shape(),
            grid.cols()
        )));
    }
    let bias = tape.param(store, "head.mask.bias")?;
    let logits = tape.matmul_nt(grid, z)?;
    tape.add_row(logits, bias)
}

/// Target-present / target-absent scores, `1 × 2`.
pub fn answer_logits(tape: &mut Tape, store: &ParamStore, fused: Var) -> Result<Var> {
    let w = tape.param(store, "head.answer.w")?;
    let b = tape.param(store, "head.answer.b")?;
    let a = tape.matmul(fused, w)?;
    tape.add_row(a, b)
}

/// Binary mask from logits: cells whose probability strictly exceeds ½.
pub fn threshold(logits: &[f64], height: usize, width: usize) -> Result<BinaryMask> {
    BinaryMask::from_cells(height, width, logits.iter().map(|x| sigmoid(*x) > 0.5).collect())
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{a} predictions for {b} targets")));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits and its gradient.
pub fn bce_loss(logits: &[f64], gt: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len(logits.len(), gt.len())?;
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(gt)
        .map(|(&x, &y)| {
            let y = y as u8 as f64;
            loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            (sigmoid(x) - y) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// `1 − (2Σpy + ε)/(Σp + Σy + ε)` and its gradient with respect to `p`.
pub fn dice_loss(probs: &[f64], gt: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len(probs.len(), gt.len())?;
    let inter: f64 = probs.iter().zip(gt).filter(|(_, y)| **y).map(|(p, _)| p).sum();
    let sp: f64 = probs.iter().sum();
    let sy = gt.iter().filter(|y| **y).count() as f64;
    let num = 2.0 * inter + DICE_EPS;
    let den = sp + sy + DICE_EPS;
    let grad = gt
        .iter()
        .map(|&y| -((2.0 * y as u8 as f64) * den - num) / (den * den))
        .collect();
    Ok((1.0 - num / den, grad))
}

/// `−log softmax(logits)[target]` and its gradient `softmax − one_hot`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::invalid("cross-entropy needs at least two classes"));
    }
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target class {target} outside 0..{}",
            logits.len()
        )));
    }
    // (max − x_target) + ln(1 + Σ_{j≠argmax} e^{x_j − max}) keeps tiny losses exact
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, x)| if x > a.1 { (i, x) } else { a });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != arg)
        .map(|(_, x)| (x - max).exp())
        .sum();
    let mut grad = softmax(logits)?;
    grad[target] -= 1.0;
    Ok((max - logits[target] + rest.ln_1p(), grad))
}

pub struct CompositeLoss {
    pub value: f64,
    pub answer_grad: Vec<f64>,
    pub mask_grad: Vec<f64>,
}

/// `CE + 2·BCE + 0.5·Dice`, Dice taken on `sigmoid(mask_logits)`.
pub fn composite_loss(
    answer: &[f64],
    answer_target: usize,
    mask_logits: &[f64],
    gt: &[bool],
) -> Result<CompositeLoss> {
    let (ce, ce_grad) = cross_entropy(answer, answer_target)?;
    let (bce, bce_grad) = bce_loss(mask_logits, gt)?;
    let probs: Vec<f64> = mask_logits.iter().map(|x| sigmoid(*x)).collect();
    let (dice, dice_grad) = dice_loss(&probs, gt)?;
    let mask_grad = bce_grad
        .iter()
        .zip(&dice_grad)
        .zip(&probs)
        .map(|((b, d), p)| BCE_WEIGHT * b + DICE_WEIGHT * d * p * (1.0 - p))
        .collect();
    Ok(CompositeLoss {
        value: ce + BCE_WEIGHT * bce + DICE_WEIGHT * dice,
        answer_grad: ce_grad,
        mask_grad,
    })
}

/// Records [`composite_loss`] on the tape as a scalar node.
pub fn composite_loss_on_tape(
    tape: &mut Tape,
    answer: Var,
    answer_target: usize,
    mask_logits: Var,
    gt: &BinaryMask,
) -> Result<Var> {
    let l = composite_loss(
        tape.value(answer).as_slice(),
        answer_target,
        tape.value(mask_logits).as_slice(),
        &gt.cells,
    )?;
    let a = tape.fused_scalar(answer, 0.0, Matrix::from_vec(1, answer.cols(), l.answer_grad)?)?;
    let m = tape.fused_scalar(
        mask_logits,
        l.value,
        Matrix::from_vec(mask_logits.rows(), mask_logits.cols(), l.mask_grad)?,
    )?;
    tape.add(a, m)
}
