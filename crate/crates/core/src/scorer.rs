//! Pointwise two-layer MLP and causal temporal convolution mapping
//! recalibrated snippet features to anomaly scores.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{Matrix, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    /// `D × mlp_hidden`.
    pub mlp1_weight: Matrix,
    pub mlp1_bias: Matrix,
    /// `mlp_hidden × mlp_out`.
    pub mlp2_weight: Matrix,
    pub mlp2_bias: Matrix,
    /// `K × mlp_out`; row τ weighs the features τ steps in the past.
    pub conv_kernel: Matrix,
    /// `1 × 1`.
    pub conv_bias: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct ScorerVars {
    pub mlp1_weight: Var,
    pub mlp1_bias: Var,
    pub mlp2_weight: Var,
    pub mlp2_bias: Var,
    pub conv_kernel: Var,
    pub conv_bias: Var,
}

impl ScorerParams {
    pub fn register(&self, tape: &mut Tape) -> ScorerVars {
        ScorerVars {
            mlp1_weight: tape.param(self.mlp1_weight.clone()),
            mlp1_bias: tape.param(self.mlp1_bias.clone()),
            mlp2_weight: tape.param(self.mlp2_weight.clone()),
            mlp2_bias: tape.param(self.mlp2_bias.clone()),
            conv_kernel: tape.param(self.conv_kernel.clone()),
            conv_bias: tape.param(self.conv_bias.clone()),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.conv_kernel.rows()
    }
}

/// Inverted dropout: training-time activations are scaled by `1/(1−rate)`
/// so inference needs no rescaling.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng> Dropout<'_, R> {
    /// Multiplies `h` by a fresh scaled keep-mask.
    pub fn apply(&mut self, tape: &mut Tape, h: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(h);
        }
        let (rows, cols) = tape.value(h).shape();
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let mask = tape.constant(Matrix::from_vec(rows, cols, mask)?);
        tape.mul(h, mask)
    }
}

/// `linear → GELU → dropout → linear → GELU → dropout`, applied per snippet.
/// Pass `None` for inference.
pub fn mlp_forward<R: Rng>(
    tape: &mut Tape,
    x_tilde: Var,
    vars: &ScorerVars,
    mut dropout: Option<&mut Dropout<'_, R>>,
) -> Result<Var> {
    let h = tape.matmul(x_tilde, vars.mlp1_weight)?;
    let h = tape.add_row(h, vars.mlp1_bias)?;
    let mut h = tape.gelu(h);
    if let Some(d) = dropout.as_deref_mut() {
        h = d.apply(tape, h)?;
    }
    let h = tape.matmul(h, vars.mlp2_weight)?;
    let h = tape.add_row(h, vars.mlp2_bias)?;
    let mut h = tape.gelu(h);
    if let Some(d) = dropout {
        h = d.apply(tape, h)?;
    }
    Ok(h)
}

/// `s_t = sigmoid(b + Σ_τ Σ_c W[τ,c]·xf[t−τ,c])` with zeros before the start.
/// Returns a `T × 1` column.
pub fn causal_conv_score(tape: &mut Tape, xf: Var, kernel: Var, bias: Var) -> Result<Var> {
    if tape.value(xf).rows() == 0 {
        return Err(Error::Data("cannot score an empty bag".into()));
    }
    let logits = tape.causal_conv(xf, kernel, bias)?;
    Ok(tape.sigmoid(logits))
}

/// Snippet scores and their absolute forward differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrack {
    pub scores: Vec<f64>,
    pub dynamics: Vec<f64>,
}

impl ScoreTrack {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        let dynamics = score_dynamics(&scores)?;
        Ok(ScoreTrack { scores, dynamics })
    }
}

/// `|s_t − s_{t+1}|` for every consecutive pair.
pub fn score_dynamics(s: &[f64]) -> Result<Vec<f64>> {
    if s.len() < 2 {
        return Err(Error::EmptyDynamics(s.len()));
    }
    Ok(s.windows(2).map(|w| (w[0] - w[1]).abs()).collect())
}
