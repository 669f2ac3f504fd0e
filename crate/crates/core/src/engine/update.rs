use crate::autodiff::{Gradients, ParamSet};

use super::EngineError;

pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 1e-1;

fn check_grads(params: &ParamSet, grads: &Gradients) -> Result<(), EngineError> {
    if grads.len() != params.len() {
        return Err(EngineError::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (name, g)) in grads.iter().enumerate() {
        if name != params.name_at(i) || g.shape() != params.value_at(i).shape() {
            return Err(EngineError::ShapeMismatch(format!(
                "gradient `{name}` {:?} does not match parameter `{}` {:?}",
                g.shape(),
                params.name_at(i),
                params.value_at(i).shape()
            )));
        }
    }
    Ok(())
}

/// Inner-loop step θ ← θ − α ∘ g, elementwise with each parameter's own rates.
pub fn inner_update(params: &mut ParamSet, grads: &Gradients) -> Result<(), EngineError> {
    check_grads(params, grads)?;
    for i in 0..params.len() {
        let alpha = params.rate_at(i).data().to_vec();
        let g = grads.at(i).data();
        for ((x, a), gi) in params
            .value_at_mut(i)
            .data_mut()
            .iter_mut()
            .zip(&alpha)
            .zip(g)
        {
            *x -= a * gi;
        }
    }
    Ok(())
}

/// Outer-loop Reptile step θ = anchor + β(θ' − anchor). Rates α are taken
/// from `current` unchanged. β = 1 adopts θ' exactly.
pub fn outer_update(
    anchor: &ParamSet,
    current: &ParamSet,
    beta: f64,
) -> Result<ParamSet, EngineError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(EngineError::InvalidBeta(beta));
    }
    anchor.check_layout(current)?;
    let mut out = current.clone();
    if beta == 1.0 {
        return Ok(out);
    }
    for i in 0..out.len() {
        let a = anchor.value_at(i).data();
        for (x, &ai) in out.value_at_mut(i).data_mut().iter_mut().zip(a) {
            *x = ai + beta * (*x - ai);
        }
    }
    Ok(out)
}

/// Gradient step on the rates, α ← clamp(α − rate · meta, [ALPHA_MIN, ALPHA_MAX]).
pub fn learn_alpha(params: &mut ParamSet, meta: &Gradients, rate: f64) -> Result<(), EngineError> {
    check_grads(params, meta)?;
    for i in 0..params.len() {
        let m = meta.at(i).data();
        for (a, mi) in params.rate_at_mut(i).data_mut().iter_mut().zip(m) {
            *a = (*a - rate * mi).clamp(ALPHA_MIN, ALPHA_MAX);
        }
    }
    Ok(())
}

/// Accumulates the hypergradient of the post-update loss with respect to α:
/// for θ_k = θ_{k−1} − α∘g_{k−1}, ∂L(θ_k)/∂α = −g_{k−1} ∘ g_k.
#[derive(Debug, Clone)]
pub struct AlphaMeta {
    sum: Gradients,
    count: usize,
    prev: Option<Gradients>,
}

impl AlphaMeta {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            sum: Gradients::zeros_like(params),
            count: 0,
            prev: None,
        }
    }

    pub fn observe(&mut self, grads: &Gradients) {
        if let Some(prev) = &self.prev {
            for i in 0..grads.len() {
                let (p, g) = (prev.at(i).data(), grads.at(i).data());
                let s = self.sum.at_mut(i).data_mut();
                for ((si, pi), gi) in s.iter_mut().zip(p).zip(g) {
                    *si -= pi * gi;
                }
            }
            self.count += 1;
        }
        self.prev = Some(grads.clone());
    }

    /// Mean signal over the observed step pairs (zero if fewer than two steps).
    pub fn mean(&self) -> Gradients {
        let mut m = self.sum.clone();
        if self.count > 0 {
            m.scale(1.0 / self.count as f64);
        }
        m
    }
}
