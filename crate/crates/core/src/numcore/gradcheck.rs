//! Central finite-difference gradient checking.
//!
//! This is the independent oracle for every backward rule: it never touches
//! the tape's reverse pass, only repeated forward evaluations. Difference
//! quotients are formed in f64. Coordinates where the forward is locally
//! non-smooth (a relu/clamp/min boundary inside the perturbation interval)
//! are detected by comparing quotients at two step sizes and skipped, since
//! finite differences are only meaningful where the function is C².

use crate::error::Result;
use crate::numcore::tape::{Tape, Var};
use crate::numcore::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which coordinates of each input to check.
pub enum Coords {
    All,
    /// Randomly sample up to `per_input` coordinates per input tensor.
    Sample { per_input: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares tape gradients against central finite differences.
///
/// `build` must construct the forward graph from the provided leaves and
/// return the scalar loss. Relative error uses the denominator
/// `max(1, |analytic|, |fd|)`, so tiny gradients are judged on absolute
/// error.
pub fn check_gradients<F>(inputs: &[Tensor], h: f32, coords: Coords, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.watched(t)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("watched leaf has grad").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x)).collect();
        let l = build(&mut t, &vs)?;
        Ok(t.scalar(l) as f64)
    };

    let mut report = GradReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut rng = match coords {
        Coords::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coords::All => None,
    };

    for (ti, input) in inputs.iter().enumerate() {
        let coord_list: Vec<usize> = match coords {
            Coords::All => (0..input.numel()).collect(),
            Coords::Sample { per_input, .. } => {
                let rng = rng.as_mut().unwrap();
                (0..per_input.min(input.numel()))
                    .map(|_| rng.gen_range(0..input.numel()))
                    .collect()
            }
        };
        for ci in coord_list {
            let orig = work[ti].data[ci];
            let mut fd_at = |step: f32| -> Result<f64> {
                work[ti].data[ci] = orig + step;
                let lp = eval(&work)?;
                work[ti].data[ci] = orig - step;
                let lm = eval(&work)?;
                work[ti].data[ci] = orig;
                Ok((lp - lm) / (2.0 * step as f64))
            };
            let fd = fd_at(h)?;
            let fd_half = fd_at(h / 2.0)?;
            // Quotients that disagree at two step sizes flag a kink.
            if (fd - fd_half).abs() > 0.05 * fd_half.abs().max(1.0) {
                report.skipped += 1;
                continue;
            }
            let a = analytic[ti][ci] as f64;
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Compares already-accumulated parameter gradients in a store against
/// central finite differences of `loss_fn`.
///
/// The caller runs its own forward/backward first so `store` holds analytic
/// gradients; `loss_fn` must re-evaluate the loss from the store's current
/// parameter values. `coords` lists the coordinates to probe per parameter.
pub fn check_store_gradients<F>(
    store: &mut crate::numcore::ParamStore,
    coords: &[(crate::numcore::ParamId, Vec<usize>)],
    h: f32,
    mut loss_fn: F,
) -> Result<GradReport>
where
    F: FnMut(&crate::numcore::ParamStore) -> Result<f32>,
{
    let mut report = GradReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for (id, cs) in coords {
        let analytic: Vec<f32> = store
            .get(*id)
            .grad
            .clone()
            .expect("parameter gradient missing; run backward first");
        for &ci in cs {
            let orig = store.get(*id).data[ci];
            let mut fd_at = |store: &mut crate::numcore::ParamStore, step: f32| -> Result<f64> {
                store.get_mut(*id).data[ci] = orig + step;
                let lp = loss_fn(store)? as f64;
                store.get_mut(*id).data[ci] = orig - step;
                let lm = loss_fn(store)? as f64;
                store.get_mut(*id).data[ci] = orig;
                Ok((lp - lm) / (2.0 * step as f64))
            };
            let fd = fd_at(store, h)?;
            let fd_half = fd_at(store, h / 2.0)?;
            if (fd - fd_half).abs() > 0.05 * fd_half.abs().max(1.0) {
                report.skipped += 1;
                continue;
            }
            let a = analytic[ci] as f64;
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
