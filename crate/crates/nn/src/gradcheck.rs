//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{NnError, Result};
use crate::graph::{Graph, Mode, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;
/// Rounding budget of one loss evaluation, in units of `f64::EPSILON * |loss|`.
pub const NOISE_ULPS: f64 = 16.0;
/// Derivatives smaller than this multiple of the resolution cannot be measured to a relative
/// precision of `1 / RESOLVABLE_RATIO`.
pub const RESOLVABLE_RATIO: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    /// Parameter name, or `input[i]`.
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements skipped because a perturbation crossed a non-differentiable point.
    pub excluded: usize,
    /// Checked elements too small for a relative comparison whose analytic and numeric values
    /// agree to within the rounding noise of the difference quotient.
    pub below_resolution: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    pub fn excluded(&self) -> usize {
        self.entries.iter().map(|e| e.excluded).sum()
    }

    pub fn below_resolution(&self) -> usize {
        self.entries.iter().map(|e| e.below_resolution).sum()
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Smallest difference between an analytic and a numeric derivative that rounding in the two
/// loss evaluations can explain.
pub fn fd_resolution(loss_plus: f64, loss_minus: f64) -> f64 {
    NOISE_ULPS * f64::EPSILON * loss_plus.abs().max(loss_minus.abs()).max(1.0) / FD_STEP
}

/// Compares analytic gradients of the scalar built by `build` against central differences,
/// for every element of every trainable parameter and every input.
///
/// `build` receives the graph and one leaf per input and must return a one-element loss. An
/// element is excluded when either perturbed pass lands on a different smooth piece than the
/// base pass (a relu changes sign, a max changes winner, a clamp engages); a relu sitting exactly
/// at zero is the simplest such case. Elements whose gradient is too small for the difference
/// quotient to resolve are compared absolutely against [`fd_resolution`] instead of relatively.
/// The store is restored before returning.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let snapshot = store.clone();
    store.zero_grad();
    let (base_sig, input_grads) = {
        let mut g = Graph::new(store, mode);
        g.track_kinks();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        let sig = g.kink_signature();
        g.backward(loss)?;
        let grads: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (sig, grads)
    };

    let eval = |store: &mut ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::new(store, mode);
        g.track_kinks();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok((g.value(loss).data()[0], g.kink_signature()))
    };

    let mut entries = Vec::new();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.is_trainable()).map(|(id, _)| id).collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let analytic = store.get(id).grad.clone();
        if !analytic.all_finite() {
            return Err(NnError::NonFiniteGradient(name));
        }
        let mut entry = GradCheckEntry { name, max_rel_error: 0.0, checked: 0, excluded: 0, below_resolution: 0 };
        for j in 0..analytic.len() {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + FD_STEP;
            let (lp, sp) = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[j] = orig - FD_STEP;
            let (lm, sm) = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            record(&mut entry, analytic.data()[j], lp, lm, sp != base_sig || sm != base_sig);
        }
        entries.push(entry);
    }

    let mut perturbed = inputs.to_vec();
    for (i, analytic) in input_grads.iter().enumerate() {
        let name = format!("input[{i}]");
        if !analytic.all_finite() {
            return Err(NnError::NonFiniteGradient(name));
        }
        let mut entry = GradCheckEntry { name, max_rel_error: 0.0, checked: 0, excluded: 0, below_resolution: 0 };
        for j in 0..analytic.len() {
            let orig = perturbed[i].data()[j];
            perturbed[i].data_mut()[j] = orig + FD_STEP;
            let (lp, sp) = eval(store, &perturbed)?;
            perturbed[i].data_mut()[j] = orig - FD_STEP;
            let (lm, sm) = eval(store, &perturbed)?;
            perturbed[i].data_mut()[j] = orig;
            record(&mut entry, analytic.data()[j], lp, lm, sp != base_sig || sm != base_sig);
        }
        entries.push(entry);
    }

    *store = snapshot;
    let pass = entries.iter().all(|e| e.max_rel_error <= tol);
    Ok(GradCheckReport { entries, tolerance: tol, pass })
}

fn record(entry: &mut GradCheckEntry, analytic: f64, lp: f64, lm: f64, kinked: bool) {
    if kinked {
        entry.excluded += 1;
        return;
    }
    let numeric = (lp - lm) / (2.0 * FD_STEP);
    entry.checked += 1;
    let res = fd_resolution(lp, lm);
    let small = analytic.abs().max(numeric.abs()) < RESOLVABLE_RATIO * res;
    if small && (analytic - numeric).abs() <= res {
        entry.below_resolution += 1;
        return;
    }
    entry.max_rel_error = entry.max_rel_error.max(relative_error(analytic, numeric));
}
