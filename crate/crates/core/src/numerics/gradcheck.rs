//! Central finite-difference verification of analytic gradients.

use super::optim::ParamSet;

pub const FD_STEP: f64 = 1e-4;

/// Result of evaluating a scalar objective once.
///
/// `active` records which hinge terms are switched on; a perturbation that
/// flips any of them straddles a kink and is excluded from the check.
/// `kink_distance` is the smallest distance of any hinge argument from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub active: Vec<bool>,
    pub kink_distance: f64,
}

impl Evaluation {
    pub fn smooth(value: f64) -> Self {
        Evaluation {
            value,
            active: Vec::new(),
            kink_distance: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub excluded: usize,
    /// The base point sits exactly on a hinge kink; nothing was compared.
    pub non_differentiable: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the analytic gradient of `f` against central differences over
/// every parameter coordinate.
///
/// `f` is called with `with_grad = true` once at the base point and must
/// leave the analytic gradient in `params`; perturbed evaluations pass
/// `false`. Gradients are zeroed before every call.
pub fn grad_check<F>(params: &mut ParamSet<f64>, mut f: F) -> GradCheckReport
where
    F: FnMut(&mut ParamSet<f64>, bool) -> Evaluation,
{
    params.zero_grad();
    let base = f(params, true);
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad().to_vec()).collect();
    let total = params.num_values();
    if base.kink_distance == 0.0 {
        return GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            excluded: total,
            non_differentiable: true,
        };
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
        non_differentiable: false,
    };
    for pi in 0..params.len() {
        for k in 0..params.get(pi).tensor.len() {
            let orig = params.get(pi).tensor.data()[k];
            let mut probe = |params: &mut ParamSet<f64>, x: f64| {
                params.get_mut(pi).tensor.data_mut()[k] = x;
                params.zero_grad();
                f(params, false)
            };
            let plus = probe(params, orig + FD_STEP);
            let minus = probe(params, orig - FD_STEP);
            params.get_mut(pi).tensor.data_mut()[k] = orig;

            if plus.active != base.active || minus.active != base.active {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * FD_STEP);
            let err = relative_error(analytic[pi][k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.get(pi).name.clone(), k));
            }
        }
    }
    // restore the analytic gradient for callers that inspect it
    params.zero_grad();
    for (p, g) in params.iter_mut().zip(analytic) {
        p.tensor.grad = Some(g);
    }
    report
}
