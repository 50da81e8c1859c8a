use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, Var};

/// Denominator floor for the relative error, so gradients that are zero up
/// to round-off are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub leaf: usize,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves
            .iter()
            .map(|l| l.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.max_rel_error <= self.tol)
    }
}

fn evaluate<F>(f: &F, leaves: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = leaves
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    scalar(&g, loss)
}

fn scalar(g: &Graph, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check builder must return a scalar, got {:?}",
            v.dims()
        )));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with the given `step`, for every element of every
/// leaf. `f` must be deterministic; the graph it receives is always in
/// evaluation mode.
pub fn grad_check<F>(f: F, leaves: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("grad_check step must be > 0, got {step}")));
    }
    if leaves.is_empty() {
        return Ok(GradCheckReport {
            leaves: Vec::new(),
            tol,
        });
    }

    let mut g = Graph::new();
    let vars = leaves
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    let base = scalar(&g, loss)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    drop(g);

    let again = evaluate(&f, leaves)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Nondeterministic {
            first: base,
            second: again,
        });
    }

    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut reports = Vec::with_capacity(leaves.len());
    for (li, grads) in analytic.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for e in 0..leaves[li].numel() {
            let orig = leaves[li].data()[e];
            work[li].data_mut()[e] = orig + step;
            let plus = evaluate(&f, &work)?;
            work[li].data_mut()[e] = orig - step;
            let minus = evaluate(&f, &work)?;
            work[li].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let abs = (grads[e] - numeric).abs();
            let denom = grads[e].abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / denom);
        }
        reports.push(LeafReport {
            leaf: li,
            numel: leaves[li].numel(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport {
        leaves: reports,
        tol,
    })
}
