//! Central finite-difference verification of analytic gradients.
//!
//! Numerical differentiation only calls the public loss; it shares no code
//! with the backprop path it checks.

use rand::Rng as _;

use crate::criteria::PartialRelation;
use crate::error::Result;
use crate::model::RankingModel;
use crate::rng::Rng;

/// Nudge every parameter by uniform noise in `(-scale, scale)`.
///
/// Finite differences are only trustworthy away from ReLU kinks; zero-
/// initialized layer biases can park a dead layer exactly on the kink, so
/// checks should run at a jittered, general-position point.
pub fn jitter_params<M: RankingModel>(model: &mut M, scale: f64, rng: &mut Rng) {
    for slice in model.param_slices_mut() {
        for x in slice.iter_mut() {
            *x += (rng.random::<f64>() * 2.0 - 1.0) * scale;
        }
    }
}

/// Worst relative error between analytic and central finite-difference
/// gradients across every parameter of `model` on `batch`.
///
/// The error for one parameter is `|a - fd| / max(1e-6, |a|, |fd|)`; the
/// absolute floor keeps noise in near-zero gradients from registering.
pub fn max_relative_error<M: RankingModel>(
    mut model: M,
    batch: &[PartialRelation],
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    let (_, analytic) = model.loss_and_gradients(batch, lambda)?;
    let layout = model.param_layout();
    let mut worst = 0.0f64;
    for (t, (_, len)) in layout.iter().enumerate() {
        for k in 0..*len {
            let nudge = |model: &mut M, delta: f64| {
                let mut slices = model.param_slices_mut();
                slices[t][k] += delta;
            };
            nudge(&mut model, eps);
            let (loss_plus, _) = model.loss_and_gradients(batch, lambda)?;
            nudge(&mut model, -2.0 * eps);
            let (loss_minus, _) = model.loss_and_gradients(batch, lambda)?;
            nudge(&mut model, eps);
            let fd = (loss_plus - loss_minus) / (2.0 * eps);
            let a = analytic.tensors[t][k];
            let err = (a - fd).abs() / (1e-6f64).max(a.abs().max(fd.abs()));
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
