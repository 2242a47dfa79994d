use crate::error::{Error, Result};
use crate::math::Matrix;

/// Adam moments and step count for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new<'a>(
        shapes: impl IntoIterator<Item = &'a Matrix>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let zeros: Vec<Matrix> = shapes
            .into_iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        OptimState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update.
///
/// `names` label the tensors for error reporting. A non-finite gradient
/// aborts the step before anything is modified.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    names: &[String],
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || grads.len() != state.first.len() {
        return Err(Error::Config(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map_or("<unnamed>", String::as_str);
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let pd = p.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            let mk = b1 * m.data()[k] + (1.0 - b1) * gk;
            let vk = b2 * v.data()[k] + (1.0 - b2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            pd[k] -= lr * (mk / c1) / ((vk / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}
