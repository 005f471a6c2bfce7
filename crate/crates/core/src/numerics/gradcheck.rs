//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences at `probes` random coordinates of the parameters accepted by
/// `filter`. Each probe picks a parameter uniformly, then a coordinate.
pub fn grad_check_filtered<F>(
    store: &ParamStore,
    probes: usize,
    rng: &mut impl Rng,
    filter: impl Fn(&str) -> bool,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite loss {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    if out.shape() != (1, 1) {
        return Err(Error::shape("grad_check needs a scalar function"));
    }
    if !tape.scalar(out).is_finite() {
        return Err(Error::Evaluation(format!(
            "non-finite loss {}",
            tape.scalar(out)
        )));
    }
    let grads = tape.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    grads.accumulate_into(&tape, &mut analytic)?;

    let names: Vec<String> = store
        .names()
        .filter(|n| filter(n))
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(Error::invalid("grad_check has no parameters to probe"));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: Vec::with_capacity(probes),
    };
    let mut work = store.clone();
    for _ in 0..probes {
        let name = &names[rng.random_range(0..names.len())];
        let size = store.value(name).map(|m| m.len()).unwrap_or(0);
        if size == 0 {
            continue;
        }
        let index = rng.random_range(0..size);
        let original = store.value(name).expect("listed name").as_slice()[index];

        work.value_mut(name).expect("listed name").as_mut_slice()[index] = original + FD_STEP;
        let plus = eval(&work)?;
        work.value_mut(name).expect("listed name").as_mut_slice()[index] = original - FD_STEP;
        let minus = eval(&work)?;
        work.value_mut(name).expect("listed name").as_mut_slice()[index] = original;

        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic.grad(name).expect("zeroed above").as_slice()[index];
        let rel_error = relative_error(a, numeric);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.probes.push(Probe {
            param: name.clone(),
            index,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(report)
}

/// Max relative error over `probes` random coordinates of all parameters.
pub fn grad_check<F>(store: &ParamStore, probes: usize, rng: &mut impl Rng, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_filtered(store, probes, rng, |_| true, f).map(|r| r.max_rel_error)
}
