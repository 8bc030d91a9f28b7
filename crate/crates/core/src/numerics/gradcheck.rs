//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it checks.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Gradient magnitudes below this are compared absolutely.
    pub magnitude_floor: f64,
    /// Smaller steps tried when a perturbation crosses a LeakyReLU kink.
    pub kink_retries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            magnitude_floor: 1e-5,
            kink_retries: 3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because every step size crossed an activation kink.
    pub skipped_kinks: usize,
    /// `(tensor, element, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let loss = build(&mut tape, &vars)?;
    Ok((tape.value(loss).item(), tape.activation_pattern()))
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences for every element of every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let base_pattern = tape.activation_pattern();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport::default();
    let mut perturbed = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for ei in 0..tensor.len() {
            let original = tensor.data()[ei];
            let mut step = options.step;
            let mut numeric = None;
            for _ in 0..=options.kink_retries {
                perturbed[ti].data_mut()[ei] = original + step;
                let (plus, plus_pattern) = evaluate(&perturbed, &build)?;
                perturbed[ti].data_mut()[ei] = original - step;
                let (minus, minus_pattern) = evaluate(&perturbed, &build)?;
                perturbed[ti].data_mut()[ei] = original;
                if plus_pattern == base_pattern && minus_pattern == base_pattern {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
                step *= 0.1;
            }
            let Some(numeric) = numeric else {
                report.skipped_kinks += 1;
                continue;
            };
            let a = analytic[ti][ei];
            let err = relative_error(a, numeric, options.magnitude_floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    Ok(report)
}
