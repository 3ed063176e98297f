//! Central finite-difference verification of analytic gradients.

use crate::nn::ParamTensors;

/// (f(x+h) − f(x−h)) / 2h.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Elementwise relative error with an absolute floor: values whose magnitudes
/// are both below the floor compare in absolute terms, which keeps
/// finite-difference noise (≈1e-10 at h=1e-5) from dominating near-zero
/// gradients.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-5);
    (a - b).abs() / scale
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `tensor-name[index]` of the worst element.
    pub worst: String,
    pub n_checked: usize,
}

/// Compares `analytic` (a zeros-shaped clone of `model` holding dL/dθ) against
/// central finite differences of `loss` over every parameter element.
///
/// `loss` must be a pure function of the model parameters (fix any RNG draws
/// before calling).
pub fn check_gradients<M, F>(model: &mut M, analytic: &M, mut loss: F, h: f64) -> GradCheckReport
where
    M: ParamTensors,
    F: FnMut(&M) -> f64,
{
    let names: Vec<String> = model.tensors().iter().map(|(n, _)| n.clone()).collect();
    let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.data().len()).collect();
    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst: String::new(), n_checked: 0 };

    for (t_idx, size) in sizes.iter().enumerate() {
        for i in 0..*size {
            let original = model.tensors()[t_idx].1.data()[i];

            model.tensors_mut()[t_idx].1.data_mut()[i] = original + h;
            let plus = loss(model);
            model.tensors_mut()[t_idx].1.data_mut()[i] = original - h;
            let minus = loss(model);
            model.tensors_mut()[t_idx].1.data_mut()[i] = original;

            let fd = (plus - minus) / (2.0 * h);
            let a = analytic.tensors()[t_idx].1.data()[i];
            let err = relative_error(a, fd);
            report.n_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{}] (analytic {a:e}, fd {fd:e})", names[t_idx], i);
            }
        }
    }
    report
}
