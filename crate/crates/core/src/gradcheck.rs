//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen elements per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            max_per_input: None,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub op: String,
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Checks the gradient of `op` at `inputs`.
///
/// Non-scalar outputs are reduced with a fixed random projection so that every
/// output element contributes to the checked scalar.
pub fn gradcheck<F>(name: &str, op: F, inputs: &[Tensor<f64>], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let name_err = |e: Error| match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{name} ({op})"),
        },
        other => other,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = op(&mut tape, &vars).map_err(name_err)?;
    let projection: Vec<f64> = (0..tape.value(out).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = tape.dot(out, projection.clone()).map_err(name_err)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = op(&mut t, &vs)?;
        let l = t.dot(o, projection.clone())?;
        Ok(t.value(l).data()[0])
    };

    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let zeros = vec![0.0; input.numel()];
        let analytic = grads.wrt(vars[k]).unwrap_or(&zeros);
        let mut idx: Vec<usize> = (0..input.numel()).collect();
        if let Some(m) = opts.max_per_input {
            if m < idx.len() {
                for i in 0..m {
                    let j = rng.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                idx.truncate(m);
            }
        }
        for j in idx {
            let orig = input.data()[j];
            work[k].data_mut()[j] = orig + opts.eps;
            let plus = eval(&work).map_err(name_err)?;
            work[k].data_mut()[j] = orig - opts.eps;
            let minus = eval(&work).map_err(name_err)?;
            work[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("{name} (gradient)"),
                });
            }
            let abs = (a - numeric).abs();
            let rel = abs / 1f64.max(a.abs()).max(numeric.abs());
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        op: name.to_string(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked,
        tol: opts.tol,
        passed: max_rel <= opts.tol,
    })
}
