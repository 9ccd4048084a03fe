use serde::Serialize;

use super::{Result, Tape, Tensor, Var};

/// Smallest magnitude used in the relative-error denominator.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct InputReport {
    pub input: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_element: usize,
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub inputs: Vec<InputReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Checks `f`'s gradients against central finite differences.
///
/// `f` receives a fresh tape and one leaf per input and must return a
/// single-element output. The relative error of an element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.variable(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.variable(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        let mut report = InputReport { input, max_rel_error: 0.0, max_abs_error: 0.0, worst_element: 0 };
        for e in 0..inputs[input].len() {
            let orig = inputs[input].data()[e];
            work[input].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[input].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[input].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_element = e;
            }
            report.max_abs_error = report.max_abs_error.max(abs);
        }
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.max_rel_error < tolerance);
    Ok(GradCheckReport { step, tolerance, inputs: reports, passed })
}
