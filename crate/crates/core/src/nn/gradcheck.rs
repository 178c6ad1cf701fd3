use super::Parameters;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries_checked > 0 && self.max_rel_error < self.tolerance
    }
}

const STEP: f64 = 1e-5;
/// Denominator floor so that vanishing gradients compare absolutely.
const FLOOR: f64 = 1e-5;

/// Compares analytic gradients with central differences (h = 1e-5).
///
/// `loss` must compute the scalar loss for the current parameter values and
/// accumulate its gradient into the parameters' `grad` buffers. At most
/// `max_entries_per_param` evenly spaced entries of each tensor are probed.
pub fn gradient_check<M, F>(model: &mut M, mut loss: F, tolerance: f64, max_entries_per_param: usize) -> GradCheckReport
where
    M: Parameters + ?Sized,
    F: FnMut(&mut M) -> f64,
{
    model.zero_grads();
    loss(model);
    let mut analytic = Vec::new();
    model.visit_params(&mut |name, p| analytic.push((name.to_string(), p.grad.clone())));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        entries_checked: 0,
        worst: None,
        tolerance,
    };
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let stride = n.div_ceil(max_entries_per_param.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let mut eval_at = |delta: f64, model: &mut M| {
                nudge(model, pi, e, delta);
                let v = loss(model);
                nudge(model, pi, e, -delta);
                v
            };
            let plus = eval_at(STEP, model);
            let minus = eval_at(-STEP, model);
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.as_slice().expect("standard layout")[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), e));
            }
        }
    }
    model.zero_grads();
    report
}

fn nudge<M: Parameters + ?Sized>(model: &mut M, param: usize, entry: usize, delta: f64) {
    let mut i = 0;
    model.visit_params_mut(&mut |_, p| {
        if i == param {
            p.value.as_slice_mut().expect("standard layout")[entry] += delta;
        }
        i += 1;
    });
}
