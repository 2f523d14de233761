//! Finite-difference validation of tape gradients.

use crate::error::{FaaError, Result};

use super::tape::{Tape, VarId};
use super::tensor::Tensor;

/// Central-difference step; 64-bit arithmetic keeps this well conditioned.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of checking one scalar function against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// Max relative error observed per parameter, in parameter order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare the tape gradient of a scalar-valued function to central finite
/// differences over every element of every parameter.
///
/// `f` must rebuild the computation from leaves each call and return a 1x1
/// node; anything else is a contract error.
pub fn grad_check<F>(
    name: &str,
    params: &[(String, Tensor)],
    tolerance: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    let eval = |tensors: &[Tensor]| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &ids)?;
        if tape.value(root).shape() != (1, 1) {
            return Err(FaaError::Contract(format!(
                "grad_check '{name}': function output is {:?}, expected scalar",
                tape.value(root).shape()
            )));
        }
        let grads = tape.backward(root)?;
        let out = ids.iter().map(|id| grads.get(*id).cloned()).collect();
        Ok((tape.value(root).item(), out))
    };

    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let (_, analytic) = eval(&base)?;

    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    for (pi, (pname, tensor)) in params.iter().enumerate() {
        let zero;
        let analytic_grad = match &analytic[pi] {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(tensor.rows(), tensor.cols());
                &zero
            }
        };
        let mut worst = 0.0f64;
        for e in 0..tensor.len() {
            let mut plus = base.clone();
            plus[pi].data_mut()[e] += FD_STEP;
            let mut minus = base.clone();
            minus[pi].data_mut()[e] -= FD_STEP;
            let fp = eval_value(&plus, &f, name)?;
            let fm = eval_value(&minus, &f, name)?;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic_grad.data()[e], fd));
        }
        max_rel = max_rel.max(worst);
        per_param.push((pname.clone(), worst));
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        per_param,
        max_rel_err: max_rel,
        tolerance,
    })
}

fn eval_value<F>(tensors: &[Tensor], f: &F, name: &str) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &ids)?;
    if tape.value(root).shape() != (1, 1) {
        return Err(FaaError::Contract(format!(
            "grad_check '{name}': function output is {:?}, expected scalar",
            tape.value(root).shape()
        )));
    }
    Ok(tape.value(root).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let params = vec![("x".to_string(), Tensor::scalar(3.0))];
        let report = grad_check("square", &params, 1e-8, |tape, ids| {
            let xt = tape.transpose(ids[0]);
            tape.matmul(ids[0], xt)
        })
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn non_scalar_function_is_contract_error() {
        let params = vec![("x".to_string(), Tensor::zeros(2, 3))];
        let err = grad_check("identity", &params, 1e-4, |_tape, ids| Ok(ids[0]));
        assert!(matches!(err, Err(FaaError::Contract(_))));
    }

    #[test]
    fn primitive_ops_pass_fd_check() {
        let mut rng = crate::rng::seeded(8);
        let params = vec![
            ("a".to_string(), crate::rng::random_tensor(&mut rng, 3, 4, 0.8)),
            ("b".to_string(), crate::rng::random_tensor(&mut rng, 4, 3, 0.8)),
            ("g".to_string(), crate::rng::random_tensor(&mut rng, 1, 4, 0.5)),
            ("c".to_string(), crate::rng::random_tensor(&mut rng, 1, 4, 0.5)),
        ];
        let report = grad_check("stack", &params, 1e-6, |tape, ids| {
            let (a, b, g, c) = (ids[0], ids[1], ids[2], ids[3]);
            let ln = tape.layer_norm(a, g, c, 1e-5)?;
            let t = tape.tanh(ln);
            let prod = tape.matmul(t, b)?;
            let sm = tape.softmax_rows(prod);
            let nrm = tape.l2_normalize_rows(sm);
            let mean = tape.mean_rows(nrm);
            let mt = tape.transpose(mean);
            tape.matmul(mean, mt)
        })
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }
}
