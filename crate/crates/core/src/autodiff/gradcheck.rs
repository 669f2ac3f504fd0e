//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamSet, Tape, Var};

/// Base finite-difference step; estimates at this step and half of it are
/// combined by Richardson extrapolation.
pub const FD_STEP: f64 = 1e-5;

/// Pass threshold on the maximum relative error.
pub const FD_TOLERANCE: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`,
/// so components much smaller than the loss are compared absolutely.
pub const REL_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Names of parameters above tolerance.
    pub fn failures(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error > self.tolerance)
            .map(|p| p.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients against central differences for `seeds` loss
/// instances `0..seeds`. `max_coords` bounds how many coordinates of each
/// parameter tensor are probed per seed (`None` probes all of them).
pub fn check_gradients<F, E>(
    params: &ParamSet,
    loss_fn: F,
    seeds: u64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport, E>
where
    F: Fn(&ParamSet, u64) -> Result<(Tape, Var), E>,
    E: From<AutodiffError>,
{
    let mut checks: Vec<ParamCheck> = params
        .names()
        .iter()
        .map(|n| ParamCheck {
            name: n.clone(),
            max_rel_error: 0.0,
            checked: 0,
        })
        .collect();

    let eval = |p: &ParamSet, seed: u64| -> Result<f64, E> {
        let (tape, root) = loss_fn(p, seed)?;
        let v = tape.scalar(root);
        if !v.is_finite() {
            return Err(AutodiffError::NonFiniteLoss { seed }.into());
        }
        Ok(v)
    };

    for seed in 0..seeds {
        let (tape, root) = loss_fn(params, seed)?;
        if !tape.scalar(root).is_finite() {
            return Err(AutodiffError::NonFiniteLoss { seed }.into());
        }
        let grads = tape.backward(root, params)?;
        let mut probe = params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for (pi, check) in checks.iter_mut().enumerate() {
            let n = params.value_at(pi).len();
            let coords: Vec<usize> = match max_coords {
                Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
                _ => (0..n).collect(),
            };
            for c in coords {
                let orig = params.value_at(pi).data()[c];
                let mut central = |h: f64| -> Result<f64, E> {
                    probe.value_at_mut(pi).data_mut()[c] = orig + h;
                    let plus = eval(&probe, seed)?;
                    probe.value_at_mut(pi).data_mut()[c] = orig - h;
                    let minus = eval(&probe, seed)?;
                    probe.value_at_mut(pi).data_mut()[c] = orig;
                    Ok((plus - minus) / (2.0 * h))
                };
                let (coarse, fine) = (central(FD_STEP)?, central(FD_STEP / 2.0)?);
                // One Richardson level cancels the O(h²) truncation term.
                let numeric = (4.0 * fine - coarse) / 3.0;
                let analytic = grads.at(pi).data()[c];
                check.max_rel_error = check.max_rel_error.max(relative_error(analytic, numeric));
                check.checked += 1;
            }
        }
    }
    Ok(GradCheckReport {
        params: checks,
        tolerance: FD_TOLERANCE,
    })
}
