//! Analytic-versus-numeric gradient audit of the full objective.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{HyperParams, LossWeights, ModelConfig, TrainConfig};
use crate::data::Label;
use crate::error::Result;
use crate::math::finite_diff::{relative_error, FD_STEP};
use crate::math::{FaultInjection, Matrix};
use crate::model::ModelParams;
use crate::trainer::batch_objective;

/// Denominator floor of the relative error: gradient entries smaller than
/// this are compared on an absolute scale.
pub const AUDIT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamAudit {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub loss: f64,
    pub tolerance: f64,
    pub params: Vec<ParamAudit>,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub passed: bool,
}

/// Small model used by the audit: `T = 12`, `D = 8`, two heads, `D_h = 8`, `K = 3`.
pub fn toy_hyper_params() -> HyperParams {
    HyperParams {
        model: ModelConfig {
            dim: 8,
            heads: 2,
            hidden: 8,
            sigma: 6.0,
            use_prior: true,
            mlp_hidden: 16,
            mlp_out: 8,
            kernel: 3,
            dropout: 0.1,
        },
        loss: LossWeights::default(),
        train: TrainConfig::default(),
    }
}

/// One abnormal and one normal bag of standard-normal features.
pub fn toy_bags(seed: u64, t_len: usize, dim: usize) -> Vec<(Matrix, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [Label::Abnormal, Label::Normal]
        .into_iter()
        .map(|label| {
            let data = (0..t_len * dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            (Matrix::from_vec(t_len, dim, data).expect("sized"), label)
        })
        .collect()
}

/// Compares every parameter's analytic gradient of the total objective
/// (dropout off) against central differences with step `1e-5`.
///
/// `fault` corrupts one backward rule on the analytic side only.
pub fn grad_audit(
    params: &ModelParams,
    hyper: &HyperParams,
    bags: &[(Matrix, Label)],
    tolerance: f64,
    fault: Option<FaultInjection>,
) -> Result<AuditReport> {
    let batch: Vec<(&Matrix, Label)> = bags.iter().map(|(m, l)| (m, *l)).collect();
    let mut priors = HashMap::new();

    let mut obj = batch_objective(params, hyper, &batch, None, &mut priors, fault)?;
    let loss = obj.tape.value(obj.loss.total).data()[0];
    let grads = obj.tape.backward(obj.loss.total)?;
    let analytic: Vec<Matrix> = obj
        .vars
        .all()
        .into_iter()
        .map(|v| grads.get(v).cloned().expect("registered"))
        .collect();

    let mut probe = params.clone();
    let mut eval = |p: &ModelParams| -> Result<f64> {
        let obj = batch_objective(p, hyper, &batch, None, &mut priors, None)?;
        Ok(obj.tape.value(obj.loss.total).data()[0])
    };

    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut reports = Vec::with_capacity(names.len());
    for (slot, (name, grad)) in names.iter().zip(&analytic).enumerate() {
        let mut report = ParamAudit {
            name: name.clone(),
            entries: grad.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_grad: grad.max_abs(),
        };
        for k in 0..grad.len() {
            let orig = probe.tensors_mut()[slot].data()[k];
            probe.tensors_mut()[slot].data_mut()[k] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe.tensors_mut()[slot].data_mut()[k] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe.tensors_mut()[slot].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[k];
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error =
                report
                    .max_rel_error
                    .max(relative_error(a, numeric, AUDIT_FLOOR));
        }
        reports.push(report);
    }

    let worst = reports
        .iter()
        .fold(None::<&ParamAudit>, |best, r| match best {
            Some(b) if b.max_rel_error >= r.max_rel_error => Some(b),
            _ => Some(r),
        })
        .expect("model has parameters");
    let max_rel_error = worst.max_rel_error;
    Ok(AuditReport {
        loss,
        tolerance,
        worst_param: worst.name.clone(),
        max_rel_error,
        passed: max_rel_error < tolerance,
        params: reports,
    })
}
