//! Central finite differences used as the reference for analytic gradients.

use super::Matrix;

/// A set of named, shaped tensors that can be perturbed one scalar at a time.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn num_scalars(&self) -> usize {
        self.tensors()
            .iter()
            .map(|(_, m)| m.rows() * m.cols())
            .sum()
    }
}

/// Plain ordered list of named matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensors(pub Vec<(String, Matrix)>);

impl Parameters for NamedTensors {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.0.iter().map(|(n, m)| (n.clone(), m)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.0.iter_mut().map(|(_, m)| m).collect()
    }
}

/// Finite-difference estimate for one tensor.
#[derive(Debug, Clone)]
pub struct FdGradient {
    pub name: String,
    pub grad: Matrix,
    /// Flat indices where a perturbed loss was non-finite.
    pub failed: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }
}

/// `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h` for every scalar of every tensor.
pub fn finite_diff_gradient<P, F>(loss_fn: F, params: &P, h: f64) -> Vec<FdGradient>
where
    P: Parameters,
    F: Fn(&P) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut work = params.clone();
    let mut out = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let (rows, cols) = work.tensors_mut()[t].shape();
        let mut grad = Matrix::zeros(rows, cols);
        let mut failed = Vec::new();
        for i in 0..rows * cols {
            let orig = work.tensors_mut()[t].as_slice()[i];
            work.tensors_mut()[t].as_mut_slice()[i] = orig + h;
            let fp = loss_fn(&work);
            work.tensors_mut()[t].as_mut_slice()[i] = orig - h;
            let fm = loss_fn(&work);
            work.tensors_mut()[t].as_mut_slice()[i] = orig;
            if fp.is_finite() && fm.is_finite() {
                grad.as_mut_slice()[i] = (fp - fm) / (2.0 * h);
            } else {
                failed.push(i);
            }
        }
        out.push(FdGradient { name, grad, failed });
    }
    out
}

/// `|a − b| / max(1, |a|, |b|)`
#[inline]
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares analytic gradients (same layout as the parameters) with
/// finite-difference estimates.
pub fn compare_gradients<P: Parameters>(
    analytic: &P,
    numeric: &[FdGradient],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let params = analytic
        .tensors()
        .into_iter()
        .zip(numeric)
        .map(|((name, ga), fd)| {
            assert_eq!(name, fd.name, "gradient layouts differ");
            let max_rel_error = ga
                .as_slice()
                .iter()
                .zip(fd.grad.as_slice())
                .fold(0.0f64, |m, (&a, &b)| m.max(relative_error(a, b)));
            let passed = fd.failed.is_empty() && max_rel_error < tolerance && ga.is_finite();
            ParamCheck {
                name,
                max_rel_error,
                passed,
            }
        })
        .collect();
    GradCheckReport {
        step,
        tolerance,
        params,
    }
}
