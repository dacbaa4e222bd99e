use super::{DoubleDouble, Graph, Scalar, Tensor, Var};
use crate::error::Result;

const DENOM_FLOOR: f64 = 1e-8;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over every checked coordinate.
    pub max_rel_error: f64,
    /// Largest relative error per input tensor.
    pub per_input: Vec<f64>,
    /// `(input, coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coordinates: usize,
}

/// A scalar-valued function of tensors that can be recorded at any
/// precision. Needed when the analytic and numeric sides of a check run in
/// different scalar types.
pub trait ScalarFn {
    fn eval<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

fn analytic_grads<F>(f: F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>>
where
    F: FnOnce(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let loss = f(&mut graph, &vars)?;
    graph.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| graph.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect())
}

fn compare<N, E>(analytic: &[Vec<f64>], inputs: &[Tensor<f64>], h: f64, eval: E) -> Result<GradCheckReport>
where
    N: Scalar,
    E: Fn(&[Tensor<N>]) -> Result<N>,
{
    let mut work: Vec<Tensor<N>> = inputs.iter().map(Tensor::cast).collect();
    let hn = N::from_real(h);
    let two_h = hn + hn;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: vec![0.0; inputs.len()],
        worst: None,
        coordinates: 0,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.len() {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + hn;
            let plus = eval(&work)?;
            work[ti].data_mut()[ci] = orig - hn;
            let minus = eval(&work)?;
            work[ti].data_mut()[ci] = orig;

            let numeric = ((plus - minus) / two_h).to_real();
            let err = rel_error(grad[ci], numeric);
            report.coordinates += 1;
            if err > report.per_input[ti] {
                report.per_input[ti] = err;
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, ci, grad[ci], numeric));
            }
        }
    }
    Ok(report)
}

/// Checks `d f / d x` for a scalar-valued `f` of one tensor. See
/// [`finite_diff_check_many`].
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let report = finite_diff_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}

/// Compares the 64-bit reverse-mode gradient of `f` with respect to every
/// input against the 64-bit central difference `(f(x+h) - f(x-h)) / 2h`,
/// one coordinate at a time. The relative error at a coordinate is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(&f, inputs)?;
    compare::<f64, _>(&analytic, inputs, h, |tensors| {
        let mut g = Graph::new();
        let vs: Vec<Var> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vs)?;
        Ok(g.value(out).data()[0])
    })
}

/// Same comparison as [`finite_diff_check_many`], with the analytic side in
/// 64-bit and the central differences evaluated in double-double
/// arithmetic. The numerator `f(x+h) - f(x-h)` then carries about 30
/// significant digits, so `h` can be small (1e-9 works well) and gradients
/// down to the 1e-8 denominator floor are resolved to better than 1e-6.
pub fn extended_diff_check<F: ScalarFn>(f: &F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport> {
    let analytic = analytic_grads(|g, v| f.eval(g, v), inputs)?;
    compare::<DoubleDouble, _>(&analytic, inputs, h, |tensors| {
        let mut g = Graph::new();
        let vs: Vec<Var> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let out = f.eval(&mut g, &vs)?;
        Ok(g.value(out).data()[0])
    })
}
