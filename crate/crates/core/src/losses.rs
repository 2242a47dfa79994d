//! Top-k MIL loss, dynamics ranking (DR) loss, dynamics alignment (DA) loss
//! and their weighted sum.
//!
//! Tape builders take per-bag score and feature nodes so gradients reach the
//! network. The `*_value` helpers evaluate the same builders on plain inputs.

use crate::config::{LossWeights, MilForm};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::math::{Matrix, Tape, Var};

/// Floor applied inside the MIL logs so saturated bag scores stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Frames per snippet; also the divisor of the top-k rule.
pub const SNIPPET_FRAMES: usize = 16;

/// Number of snippets averaged into a bag score: `⌊T/16 + 1⌋` for abnormal
/// bags (never more than `T`), 1 for normal bags.
pub fn topk_count(t_len: usize, label: Label) -> usize {
    match label {
        Label::Normal => 1,
        Label::Abnormal => (t_len / SNIPPET_FRAMES + 1).min(t_len.max(1)),
    }
}

/// Indices of the `k` largest values, largest first, earlier index on ties.
pub fn topk_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// One bag's contribution to the objective.
#[derive(Debug, Clone, Copy)]
pub struct BagTerm {
    /// `T × 1` snippet scores.
    pub scores: Var,
    /// `T × C` robust features.
    pub features: Var,
    pub label: Label,
}

/// Mean of the top-k snippet scores.
pub fn bag_score(tape: &mut Tape, scores: Var, label: Label) -> Result<Var> {
    let s = tape.value(scores).data().to_vec();
    if s.is_empty() {
        return Err(Error::Data("bag has no snippets".into()));
    }
    let picked = topk_indices(&s, topk_count(s.len(), label));
    let top = tape.gather(scores, &picked)?;
    tape.mean(top)
}

/// Mean over bags of the MIL cross-entropy on the top-k bag score.
pub fn mil_loss(tape: &mut Tape, bags: &[BagTerm], form: MilForm) -> Result<Var> {
    if bags.is_empty() {
        return Err(Error::Data("MIL loss of an empty batch".into()));
    }
    let mut terms = Vec::with_capacity(bags.len());
    for bag in bags {
        let p = bag_score(tape, bag.scores, bag.label)?;
        let term = match (bag.label, form) {
            (Label::Abnormal, _) => tape.log(p, PROB_FLOOR),
            (Label::Normal, MilForm::BinaryCrossEntropy) => {
                let neg = tape.scale(p, -1.0);
                let one_minus = tape.add_scalar(neg, 1.0);
                tape.log(one_minus, PROB_FLOOR)
            }
            (Label::Normal, MilForm::PositiveOnly) => {
                let zero = tape.scale(p, 0.0);
                zero
            }
        };
        terms.push(term);
    }
    let total = tape.add_all(&terms)?;
    Ok(tape.scale(total, -1.0 / bags.len() as f64))
}

/// Mean of the squares of the `k` largest score dynamics; `k` is clamped to
/// the number of dynamics.
pub fn dynamics_accumulation(tape: &mut Tape, delta_s: Var, k: usize) -> Result<Var> {
    let d = tape.value(delta_s).data().to_vec();
    if d.is_empty() {
        return Err(Error::EmptyDynamics(1));
    }
    let picked = topk_indices(&d, k.clamp(1, d.len()));
    let top = tape.gather(delta_s, &picked)?;
    let sq = tape.square(top);
    tape.mean(sq)
}

/// Hinge `max(0, ζ − E_pos + E_neg)` averaged over the given pairs.
pub fn dr_loss(tape: &mut Tape, pairs: &[(Var, Var)], zeta: f64) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let mut hinges = Vec::with_capacity(pairs.len());
    for &(pos, neg) in pairs {
        let gap = tape.scale(pos, -1.0);
        let gap = tape.add(gap, neg)?;
        let gap = tape.add_scalar(gap, zeta);
        hinges.push(tape.relu(gap));
    }
    let total = tape.add_all(&hinges)?;
    Ok(tape.scale(total, 1.0 / pairs.len() as f64))
}

/// Cosine distance between consecutive feature rows, `(T−1) × 1`.
pub fn feature_dynamics(tape: &mut Tape, features: Var) -> Result<Var> {
    tape.cosine_distance_rows(features)
}

/// `−δˢ·log(δᶠ + ε)`, averaged over time within each bag and then over bags.
pub fn da_loss(tape: &mut Tape, dynamics: &[(Var, Var)], epsilon: f64) -> Result<Var> {
    if dynamics.is_empty() {
        return Err(Error::Data("DA loss of an empty batch".into()));
    }
    let mut per_bag = Vec::with_capacity(dynamics.len());
    for &(delta_s, delta_f) in dynamics {
        let (ls, lf) = (tape.value(delta_s).shape(), tape.value(delta_f).shape());
        if ls != lf {
            return Err(Error::Shape {
                op: "da_loss dynamics",
                left: ls,
                right: lf,
            });
        }
        let shifted = tape.add_scalar(delta_f, epsilon);
        let log_f = tape.log(shifted, 0.0);
        let weighted = tape.mul(delta_s, log_f)?;
        let mean = tape.mean(weighted)?;
        per_bag.push(mean);
    }
    let total = tape.add_all(&per_bag)?;
    Ok(tape.scale(total, -1.0 / dynamics.len() as f64))
}

/// Scalar nodes of the objective and its components. Components whose weight
/// is zero are not built and read as exactly 0.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub mil: Var,
    pub dr: Option<Var>,
    pub da: Option<Var>,
}

/// Component values read off a [`LossParts`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub total: f64,
    pub mil: f64,
    pub dr: f64,
    pub da: f64,
}

impl LossParts {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let read = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
        LossValues {
            total: read(Some(self.total)),
            mil: read(Some(self.mil)),
            dr: read(self.dr),
            da: read(self.da),
        }
    }
}

/// `L_MIL + λ₁·L_DR + λ₂·L_DA`.
///
/// DR pairs the i-th positive bag with the i-th negative bag in slice order;
/// unpaired bags contribute no DR term. DA runs over every bag.
pub fn total_loss(tape: &mut Tape, bags: &[BagTerm], weights: &LossWeights) -> Result<LossParts> {
    let mil = mil_loss(tape, bags, weights.mil_form)?;
    let mut total = mil;

    let need_dynamics = weights.lambda1 != 0.0 || weights.lambda2 != 0.0;
    let mut score_dyn = Vec::new();
    if need_dynamics {
        for bag in bags {
            score_dyn.push(tape.abs_forward_diff(bag.scores)?);
        }
    }

    let mut dr = None;
    if weights.lambda1 != 0.0 {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (bag, &ds) in bags.iter().zip(&score_dyn) {
            let t_len = tape.value(bag.scores).rows();
            let acc = dynamics_accumulation(tape, ds, topk_count(t_len, bag.label))?;
            match bag.label {
                Label::Abnormal => pos.push(acc),
                Label::Normal => neg.push(acc),
            }
        }
        let pairs: Vec<(Var, Var)> = pos.into_iter().zip(neg).collect();
        let term = dr_loss(tape, &pairs, weights.zeta)?;
        let weighted = tape.scale(term, weights.lambda1);
        total = tape.add(total, weighted)?;
        dr = Some(term);
    }

    let mut da = None;
    if weights.lambda2 != 0.0 {
        let mut dynamics = Vec::with_capacity(bags.len());
        for (bag, &ds) in bags.iter().zip(&score_dyn) {
            dynamics.push((ds, feature_dynamics(tape, bag.features)?));
        }
        let term = da_loss(tape, &dynamics, weights.epsilon)?;
        let weighted = tape.scale(term, weights.lambda2);
        total = tape.add(total, weighted)?;
        da = Some(term);
    }

    Ok(LossParts { total, mil, dr, da })
}

/// [`mil_loss`] on plain score vectors.
pub fn mil_loss_value(bags: &[(&[f64], Label)], form: MilForm) -> Result<f64> {
    let mut tape = Tape::new();
    let terms: Vec<BagTerm> = bags
        .iter()
        .map(|(s, label)| {
            let scores = tape.constant(Matrix::column(s));
            BagTerm {
                scores,
                features: scores,
                label: *label,
            }
        })
        .collect();
    let loss = mil_loss(&mut tape, &terms, form)?;
    Ok(tape.value(loss).data()[0])
}

/// [`dynamics_accumulation`] on a plain dynamics vector.
pub fn dynamics_accumulation_value(delta_s: &[f64], k: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let d = tape.constant(Matrix::column(delta_s));
    let acc = dynamics_accumulation(&mut tape, d, k)?;
    Ok(tape.value(acc).data()[0])
}

/// [`dr_loss`] for a single pair of accumulations.
pub fn dr_loss_value(e_pos: f64, e_neg: f64, zeta: f64) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(Matrix::scalar(e_pos));
    let n = tape.constant(Matrix::scalar(e_neg));
    let loss = dr_loss(&mut tape, &[(p, n)], zeta).expect("scalar hinge");
    tape.value(loss).data()[0]
}

/// [`feature_dynamics`] on a plain matrix.
pub fn feature_dynamics_value(xf: &Matrix) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(xf.clone());
    let d = feature_dynamics(&mut tape, x)?;
    Ok(tape.value(d).data().to_vec())
}

/// [`da_loss`] on plain `(δˢ, δᶠ)` pairs.
pub fn da_loss_value(dynamics: &[(&[f64], &[f64])], epsilon: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<(Var, Var)> = dynamics
        .iter()
        .map(|(s, f)| {
            (
                tape.constant(Matrix::column(s)),
                tape.constant(Matrix::column(f)),
            )
        })
        .collect();
    let loss = da_loss(&mut tape, &vars, epsilon)?;
    Ok(tape.value(loss).data()[0])
}
