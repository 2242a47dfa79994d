//! Locality-aware attention: multi-head global attention whose map is
//! recalibrated by a Gaussian prior over snippet distance, followed by an
//! output projection, a residual connection and layer normalization.

use crate::error::{Error, Result};
use crate::math::{Matrix, Tape, Var, LAYER_NORM_EPS};

/// Gaussian prior over snippet index distance, `G[i][j] = exp(−(i−j)² / 2σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityPrior {
    sigma: f64,
    matrix: Matrix,
}

impl LocalityPrior {
    pub fn new(t_len: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "locality prior sigma must be positive, got {sigma}"
            )));
        }
        if t_len == 0 {
            return Err(Error::Config(
                "locality prior needs at least one snippet".into(),
            ));
        }
        let mut matrix = Matrix::zeros(t_len, t_len);
        for i in 0..t_len {
            for j in 0..t_len {
                let d = i.abs_diff(j) as f64;
                matrix.set(i, j, (-(d * d) / (2.0 * sigma)).exp());
            }
        }
        Ok(LocalityPrior { sigma, matrix })
    }

    /// All-zero prior: plain attention. Used for the no-prior ablation.
    pub fn disabled(t_len: usize) -> Self {
        LocalityPrior {
            sigma: f64::INFINITY,
            matrix: Matrix::zeros(t_len, t_len),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

pub fn locality_prior(t_len: usize, sigma: f64) -> Result<LocalityPrior> {
    LocalityPrior::new(t_len, sigma)
}

/// Projections owned by one attention head, each `D × D_h/heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaNetParams {
    pub heads: Vec<HeadParams>,
    /// `D_h × D`.
    pub out_proj: Matrix,
    pub norm_gain: Matrix,
    pub norm_bias: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct LaNetVars {
    pub heads: Vec<HeadVars>,
    pub out_proj: Var,
    pub norm_gain: Var,
    pub norm_bias: Var,
}

impl LaNetParams {
    pub fn dim(&self) -> usize {
        self.out_proj.cols()
    }

    pub fn register(&self, tape: &mut Tape) -> LaNetVars {
        let heads = self
            .heads
            .iter()
            .map(|h| HeadVars {
                query: tape.param(h.query.clone()),
                key: tape.param(h.key.clone()),
                value: tape.param(h.value.clone()),
            })
            .collect();
        LaNetVars {
            heads,
            out_proj: tape.param(self.out_proj.clone()),
            norm_gain: tape.param(self.norm_gain.clone()),
            norm_bias: tape.param(self.norm_bias.clone()),
        }
    }

    /// Unrecorded forward pass.
    pub fn forward(&self, x: &Matrix, prior: &LocalityPrior) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let x = tape.constant(x.clone());
        let g = tape.constant(prior.matrix().clone());
        let out = lanet_forward(&mut tape, x, &vars, g)?;
        Ok(tape.value(out).clone())
    }
}

/// Intermediate nodes of one head, kept so callers can inspect the maps.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// Row-stochastic attention before the prior.
    pub attention: Var,
    /// Attention plus prior.
    pub recalibrated: Var,
    /// `T × D_h/heads`.
    pub output: Var,
}

/// One head: `A = softmax(xφ (xψ)ᵀ)`, `Ã = A + G`, output `Ã · x W_v`.
pub fn attention_head(tape: &mut Tape, x: Var, head: &HeadVars, prior: Var) -> Result<HeadOutput> {
    let t_len = tape.value(x).rows();
    if tape.value(prior).shape() != (t_len, t_len) {
        return Err(Error::Shape {
            op: "attention_head prior",
            left: tape.value(x).shape(),
            right: tape.value(prior).shape(),
        });
    }
    let q = tape.matmul(x, head.query)?;
    let k = tape.matmul(x, head.key)?;
    let logits = tape.matmul_t(q, k)?;
    let attention = tape.softmax_rows(logits)?;
    let recalibrated = tape.add(attention, prior)?;
    let v = tape.matmul(x, head.value)?;
    let output = tape.matmul(recalibrated, v)?;
    Ok(HeadOutput {
        attention,
        recalibrated,
        output,
    })
}

/// `LayerNorm(concat_h(Ã_h x W_v,h) · W_out + x)`.
pub fn lanet_forward(tape: &mut Tape, x: Var, vars: &LaNetVars, prior: Var) -> Result<Var> {
    let dim = tape.value(vars.out_proj).cols();
    if tape.value(x).cols() != dim {
        return Err(Error::Shape {
            op: "lanet_forward",
            left: tape.value(x).shape(),
            right: tape.value(vars.out_proj).shape(),
        });
    }
    let mut outputs = Vec::with_capacity(vars.heads.len());
    for head in &vars.heads {
        outputs.push(attention_head(tape, x, head, prior)?.output);
    }
    let stacked = tape.concat_cols(&outputs)?;
    let projected = tape.matmul(stacked, vars.out_proj)?;
    let residual = tape.add(projected, x)?;
    tape.layer_norm(residual, vars.norm_gain, vars.norm_bias, LAYER_NORM_EPS)
}
