use rand::seq::index::sample;
use rand::Rng;

use super::ParamStore;

/// Relative error above which a parameter is flagged.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Denominator floor of the relative error; below it the comparison is
/// effectively absolute.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_layer: String,
    pub checked: usize,
    /// `(index, relative error)` for every parameter above the tolerance.
    pub flagged: Vec<(usize, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss` on a random
/// subsample of `n_random` parameters plus every parameter of the smallest layer.
pub fn gradcheck<R, F>(
    params: &ParamStore,
    analytic: &[f64],
    mut loss: F,
    fd_step: f64,
    n_random: usize,
    rng: &mut R,
) -> GradcheckReport
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    assert!(fd_step > 0.0, "fd_step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut indices: Vec<usize> = sample(rng, params.len(), n_random.min(params.len())).into_vec();
    if let Some(smallest) = params.layers.iter().filter(|l| !l.is_empty()).min_by_key(|l| l.len()) {
        indices.extend(smallest.offset..smallest.offset + smallest.len());
    }
    indices.sort_unstable();
    indices.dedup();

    let mut work = params.data.clone();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        worst_layer: String::new(),
        checked: indices.len(),
        flagged: Vec::new(),
    };
    for &i in &indices {
        let orig = work[i];
        work[i] = orig + fd_step;
        let plus = loss(&work);
        work[i] = orig - fd_step;
        let minus = loss(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * fd_step);
        let err = relative_error(analytic[i], numeric);
        if err > GRADCHECK_TOLERANCE {
            report.flagged.push((i, err));
        }
        if err > report.max_rel_err || !err.is_finite() {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    report.worst_layer = params.owner(report.worst_index).unwrap_or("?").to_string();
    report
}
