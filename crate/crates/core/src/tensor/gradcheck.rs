use super::{NodeId, Tape, Tensor};
use crate::error::Result;

/// Coordinates whose perturbation brings a kink input this close to its
/// non-differentiable point are excluded from the comparison.
pub const KINK_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input index, flat coordinate)` pairs skipped because a kink was crossed.
    pub excluded: Vec<(usize, usize)>,
    pub worst: Option<(usize, usize)>,
}

/// Central-difference check of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    grad_check_many(|tape, ids| f(tape, ids[0]), std::slice::from_ref(x), step)
}

/// Central-difference check of a scalar function of several tensors.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = xs.iter().map(|x| tape.variable(x.clone())).collect();
    let root = f(&mut tape, &ids)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(xs)
        .map(|(id, x)| grads.get_or_zeros(*id, x))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<(f64, Vec<f64>)> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let r = f(&mut t, &ids)?;
        Ok((t.scalar(r)?, t.kink_offsets()))
    };

    let mut report = GradCheckReport::default();
    let mut inputs: Vec<Tensor> = xs.to_vec();
    for (t_idx, x) in xs.iter().enumerate() {
        for c in 0..x.len() {
            let base = x.data()[c];
            inputs[t_idx] = x.with_entry(c, base + step);
            let (f_plus, k_plus) = eval(&inputs)?;
            inputs[t_idx] = x.with_entry(c, base - step);
            let (f_minus, k_minus) = eval(&inputs)?;
            inputs[t_idx] = x.clone();

            if crosses_kink(&k_plus, &k_minus) {
                report.excluded.push((t_idx, c));
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[t_idx].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((t_idx, c));
            }
        }
    }
    Ok(report)
}

fn crosses_kink(plus: &[f64], minus: &[f64]) -> bool {
    plus.iter().zip(minus).any(|(&p, &m)| {
        // untouched by this coordinate
        if p == m {
            return false;
        }
        p.signum() != m.signum() || p.abs() < KINK_TOLERANCE || m.abs() < KINK_TOLERANCE
    })
}
