//! Affinity-guided prompt fusion.
//!
//! `g̃ = g + λ · Σᵢ αᵢ sᵢ` with `α = softmax(cos(sᵢ, g))` over the context
//! segmentation tokens. With no context the target token is returned as is.

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, softmax, Matrix, Tape, Var};

/// Default fusion weight λ.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct PromptBundle {
    /// Target token `g_t`.
    pub target: Vec<f64>,
    /// Context tokens, most recent first (`s_{t−1}, …, s_{t−K}`).
    pub context: Matrix,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct FusedPrompt {
    pub token: Vec<f64>,
    /// Affinity weights α; empty when there is no context.
    pub weights: Vec<f64>,
}

pub fn fuse_prompt_detailed(bundle: &PromptBundle) -> Result<FusedPrompt> {
    let d = bundle.target.len();
    if !bundle.lambda.is_finite() {
        return Err(Error::invalid("fusion weight must be finite"));
    }
    if bundle.context.rows() == 0 {
        return Ok(FusedPrompt {
            token: bundle.target.clone(),
            weights: Vec::new(),
        });
    }
    if bundle.context.cols() != d {
        return Err(Error::shape(format!(
            "context tokens of width {} for a {d}-dim target",
            bundle.context.cols()
        )));
    }
    let affinities = (0..bundle.context.rows())
        .map(|i| cosine_similarity(bundle.context.row(i), &bundle.target))
        .collect::<Result<Vec<_>>>()?;
    let weights = softmax(&affinities)?;
    let mut token = bundle.target.clone();
    for (i, a) in weights.iter().enumerate() {
        for (t, s) in token.iter_mut().zip(bundle.context.row(i)) {
            *t += bundle.lambda * a * s;
        }
    }
    Ok(FusedPrompt { token, weights })
}

pub fn fuse_prompt(bundle: &PromptBundle) -> Result<Vec<f64>> {
    fuse_prompt_detailed(bundle).map(|f| f.token)
}

/// Tape form of [`fuse_prompt`]; `target` is `1 × d`, `context` is `K × d`.
pub fn fuse_prompt_on_tape(tape: &mut Tape, target: Var, context: Var, lambda: f64) -> Result<Var> {
    if context.rows() == 0 {
        return Ok(target);
    }
    let affinity = tape.cosine_rows(context, target)?;
    let weights = tape.softmax_rows(affinity);
    let mixed = tape.matmul(weights, context)?;
    let mixed = tape.scale(mixed, lambda);
    tape.add(target, mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;
    use proptest::prelude::*;

    fn bundle(target: &[f64], ctx: &[Vec<f64>], lambda: f64) -> PromptBundle {
        PromptBundle {
            target: target.to_vec(),
            context: Matrix::from_rows(ctx, target.len()).unwrap(),
            lambda,
        }
    }

    #[test]
    fn worked_example() {
        let b = bundle(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], 0.1);
        let f = fuse_prompt_detailed(&b).unwrap();
        assert!((f.weights[0] - 0.731059).abs() < 1e-6);
        assert!((f.weights[1] - 0.268941).abs() < 1e-6);
        assert!((f.token[0] - 1.073106).abs() < 1e-6);
        assert!((f.token[1] - 0.026894).abs() < 1e-6);
    }

    #[test]
    fn empty_context_and_zero_lambda_are_identity() {
        let g = [0.3, -2.0, 1.0];
        assert_eq!(fuse_prompt(&bundle(&g, &[], 0.1)).unwrap(), g.to_vec());
        let ctx = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]];
        assert_eq!(fuse_prompt(&bundle(&g, &ctx, 0.0)).unwrap(), g.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let b = bundle(&[1.0, 0.0], &[vec![1.0, 0.0]], 0.1);
        let bad = PromptBundle {
            context: Matrix::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap(),
            ..b
        };
        assert!(matches!(fuse_prompt(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn tape_form_agrees_with_value_form() {
        let ctx = vec![vec![0.2, -1.0, 0.5], vec![1.5, 0.1, -0.3], vec![0.0, 0.0, 0.0]];
        let b = bundle(&[0.7, 0.2, -0.4], &ctx, 0.1);
        let expect = fuse_prompt(&b).unwrap();
        let mut tape = Tape::new();
        let g = tape.constant(Matrix::row_vector(&b.target));
        let c = tape.constant(b.context.clone());
        let out = fuse_prompt_on_tape(&mut tape, g, c, b.lambda).unwrap();
        let got = tape.value(out).as_slice();
        for (a, e) in got.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(d, k)| {
            (
                prop::collection::vec(-3.0f64..3.0, d),
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), k),
            )
        })
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_bound_holds((g, ctx) in arb_case()) {
            let b = bundle(&g, &ctx, 0.1);
            let f = fuse_prompt_detailed(&b).unwrap();
            prop_assert!((f.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let delta: Vec<f64> = f.token.iter().zip(&g).map(|(a, b)| a - b).collect();
            let max_norm = ctx.iter().map(|r| norm(r)).fold(0.0, f64::max);
            prop_assert!(norm(&delta) <= 0.1 * max_norm + 1e-12);
        }

        #[test]
        fn context_order_does_not_matter((g, ctx) in arb_case()) {
            let a = fuse_prompt(&bundle(&g, &ctx, 0.1)).unwrap();
            let mut rev = ctx.clone();
            rev.reverse();
            let b = fuse_prompt(&bundle(&g, &rev, 0.1)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
