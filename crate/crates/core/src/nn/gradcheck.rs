//! Central finite-difference gradient checking.
//!
//! The checker perturbs parameter entries one at a time and compares the
//! difference quotient of the re-run forward pass against the tape's
//! backward pass. It is independent of the backward implementation by
//! construction: only forward evaluations enter the estimate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::nn::{ParamSet, Tape, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Worst observed relative error from a gradient check.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_param: String,
}

/// Relative error with a floor so near-zero gradient pairs compare cleanly.
fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        return (a - b).abs(); // absolute comparison in the tiny regime
    }
    (a - b).abs() / scale
}

/// Checks d(loss)/d(param) for every parameter of `ps` against central
/// finite differences, sampling at most `samples_per_param` entries of each
/// tensor. `forward` must rebuild the full computation from scratch and
/// return the scalar loss node.
pub fn check_params(
    ps: &ParamSet,
    samples_per_param: usize,
    seed: u64,
    forward: impl Fn(&mut Tape, &ParamSet) -> Var,
) -> FdReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut tape = Tape::new();
    let loss = forward(&mut tape, ps);
    let grads = tape.backward(loss).expect("loss must be scalar");
    let analytic = tape.param_grads(&grads, ps);

    let mut report = FdReport { max_rel_err: 0.0, checked: 0, worst_param: String::new() };
    for (name, tensor) in ps.iter() {
        let mut coords: Vec<(usize, usize)> = (0..tensor.rows())
            .flat_map(|r| (0..tensor.cols()).map(move |c| (r, c)))
            .collect();
        coords.shuffle(&mut rng);
        coords.truncate(samples_per_param.min(coords.len()));

        for (r, c) in coords {
            let eval = |delta: f64| -> f64 {
                let mut perturbed = ps.clone();
                let mut t = perturbed.get(name).clone();
                t.set(r, c, t.get(r, c) + delta);
                perturbed.assign(name, t).unwrap();
                let mut tape = Tape::new();
                let loss = forward(&mut tape, &perturbed);
                tape.value(loss).get(0, 0)
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let an = analytic[name].get(r, c);
            let err = rel_err(fd, an);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{name}[{r},{c}] fd={fd} analytic={an}");
            }
        }
    }
    report
}
