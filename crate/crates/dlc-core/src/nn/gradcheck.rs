//! Finite-difference gradient checking.
//!
//! The checker perturbs a f64 promotion of the parameter vector and compares
//! central differences of a f64 loss against the model's analytic f32
//! gradients. Running the oracle side in f64 keeps the difference quotient
//! far above the rounding floor, so the comparison measures the backprop
//! implementation and not float noise.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::nn::ParamLayout;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares `analytic` gradients against central finite differences of
/// `loss_f64` at `params`, probing `indices`.
///
/// Relative error per coordinate is `|fd - an| / max(|fd|, |an|, 1e-2)`.
/// The floor makes the check read "relative agreement within tol, or
/// absolute agreement within tol/100": coordinates whose true gradient is
/// exactly zero still carry f32 accumulation residue on the analytic side,
/// and that residue is roundoff, not a backprop defect.
pub fn check_gradients(
    params: &[f32],
    analytic: &[f32],
    layout: &ParamLayout,
    indices: &[usize],
    step: f64,
    mut loss_f64: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut p64: Vec<f64> = params.iter().map(|&v| v as f64).collect();
    let mut max_rel = 0.0;
    let mut worst = String::new();
    for &i in indices {
        let orig = p64[i];
        p64[i] = orig + step;
        let up = loss_f64(&p64);
        p64[i] = orig - step;
        let down = loss_f64(&p64);
        p64[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let an = analytic[i] as f64;
        let denom = fd.abs().max(an.abs()).max(1e-2);
        let rel = (fd - an).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = layout.name_of_index(i).to_string();
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        worst_param: worst,
        checked: indices.len(),
    }
}

/// Uniformly samples `count` distinct parameter indices (or all of them if
/// the model is smaller than `count`).
pub fn sample_indices(param_count: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    if param_count <= count {
        return (0..param_count).collect();
    }
    // Floyd's algorithm for a distinct sample.
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for j in param_count - count..param_count {
        let t = rng.below(j + 1);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen
}
