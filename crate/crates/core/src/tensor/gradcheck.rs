use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)` over every checked entry.
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// Reverse-mode and finite-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn evaluate<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<T, TensorError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    v.item().ok_or_else(|| TensorError::NotScalar {
        shape: v.shape().to_vec(),
    })
}

/// Checks `f`'s gradient with respect to every element of every input.
///
/// `f` builds a scalar-valued computation from leaf handles bound to
/// `inputs`, in order.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], step: T, tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, TensorError>,
{
    assert!(step > T::zero(), "finite-difference step must be positive");
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![T::zero(); t.len()], <[T]>::to_vec))
        .collect();

    let two_step = step + step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        tolerance,
        passed: true,
    };
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &g_ad) in grads.iter().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig;

            let g_fd = ((plus - minus) / two_step).to_f64_lossless();
            let g_ad = g_ad.to_f64_lossless();
            let denom = g_ad.abs().max(g_fd.abs()).max(1e-8);
            let rel = (g_ad - g_fd).abs() / denom;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
                report.worst_values = (g_ad, g_fd);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}
