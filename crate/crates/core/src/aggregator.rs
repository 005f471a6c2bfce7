//! Memory aggregation: `L` learnable queries attend over the sampled
//! reservoir history and the first `L` encoder outputs become the memory
//! tokens of the next step.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::nn::encoder_stack;
use crate::numerics::{sinusoidal_pe, Matrix, ParamStore, Tape, Var};

/// Aggregates `history` (`N × d`, oldest first, or `None` for `N = 0`).
/// Positions `0..N` are attached to history rows only.
pub fn aggregate_memory_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    history: Option<Var>,
) -> Result<Var> {
    let queries = tape.param(store, "agg.queries")?;
    let l = queries.rows();
    let x = match history {
        Some(h) if h.rows() > 0 => {
            if h.cols() != queries.cols() {
                return Err(Error::shape(format!(
                    "history of width {} for {}-dim memory",
                    h.cols(),
                    queries.cols()
                )));
            }
            let pe = tape.constant(sinusoidal_pe(h.rows(), h.cols())?);
            let h = tape.add(h, pe)?;
            tape.concat_rows(&[queries, h])?
        }
        _ => queries,
    };
    let out = encoder_stack(tape, store, "agg.enc", config.agg_layers, x, config.agg_heads)?;
    tape.slice_rows(out, 0, l)
}

/// Value form of [`aggregate_memory_on_tape`].
pub fn aggregate_memory(store: &ParamStore, config: &ModelConfig, history: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let h = (history.rows() > 0).then(|| tape.constant(history.clone()));
    let out = aggregate_memory_on_tape(&mut tape, store, config, h)?;
    Ok(tape.value(out).clone())
}

/// Memory before any history exists: aggregation over an empty history.
pub fn init_memory(store: &ParamStore, config: &ModelConfig) -> Result<Matrix> {
    aggregate_memory(store, config, &Matrix::zeros(0, config.dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::numerics::layer_norm_rows;

    fn small() -> (Model, ModelConfig) {
        let cfg = ModelConfig {
            dim: 8,
            memory_tokens: 3,
            agg_heads: 2,
            ..ModelConfig::default()
        };
        (Model::init(cfg.clone(), 5).unwrap(), cfg)
    }

    #[test]
    fn output_has_l_rows_for_any_history() {
        let (m, cfg) = small();
        for n in [0, 1, 7, 32] {
            let h = Matrix::filled(n, 8, 0.1);
            assert_eq!(aggregate_memory(&m.params, &cfg, &h).unwrap().shape(), (3, 8));
        }
        assert!(aggregate_memory(&m.params, &cfg, &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn init_memory_is_empty_aggregation() {
        let (m, cfg) = small();
        let a = init_memory(&m.params, &cfg).unwrap();
        assert_eq!(a, aggregate_memory(&m.params, &cfg, &Matrix::zeros(0, 8)).unwrap());
        let mut p = m.params.clone();
        let q = p.value_mut("agg.queries").unwrap();
        q.set(0, 0, q.get(0, 0) + 1e-2);
        assert!(init_memory(&p, &cfg).unwrap().max_abs_diff(&a) > 0.0);
    }

    #[test]
    fn zeroed_sublayers_give_layer_norm_of_queries() {
        let (mut m, cfg) = small();
        let names: Vec<String> = m
            .params
            .names()
            .filter(|n| n.starts_with("agg.enc") && (n.contains(".attn.") || n.contains(".ffn.")))
            .map(String::from)
            .collect();
        for n in names {
            let v = m.params.value_mut(&n).unwrap();
            *v = Matrix::zeros(v.rows(), v.cols());
        }
        let q = m.params.value("agg.queries").unwrap().clone();
        // two blocks, each normalising twice
        let expect = (0..4).fold(q, |x, _| layer_norm_rows(&x, &[1.0; 8], &[0.0; 8]).unwrap());
        let got = init_memory(&m.params, &cfg).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-9);
    }
}
