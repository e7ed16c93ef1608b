//! Central finite-difference gradient checking.

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_relative_error: f64,
    /// Index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries whose true gradient is ~0
/// from being judged on round-off alone.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` at `params`.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], mut loss: F, step: f64, tolerance: f64) -> GradReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    let mut x = params.to_vec();
    let mut report = GradReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        tolerance,
        checked: params.len(),
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss(&x);
        x[i] = orig - step;
        let down = loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric, 1e-6);
        if err > report.max_relative_error || !err.is_finite() {
            report.max_relative_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    report
}
