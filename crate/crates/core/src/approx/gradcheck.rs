use rand::Rng;

use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    /// Parameter index of the worst probe.
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compare `analytic` against central differences of `loss` at `n_probes`
/// randomly chosen parameters (all of them if there are fewer).
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn central_difference_check<F>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    n_probes: usize,
    step: f64,
    rng: &mut SeededRng,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let indices: Vec<usize> = if params.len() <= n_probes {
        (0..params.len()).collect()
    } else {
        (0..n_probes)
            .map(|_| rng.gen_range(0..params.len()))
            .collect()
    };
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        probes: indices.len(),
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in indices {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    report
}
