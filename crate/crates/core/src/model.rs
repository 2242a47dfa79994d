//! The full scoring network: locality-aware attention, MLP, causal conv.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::lanet::{lanet_forward, HeadParams, LaNetParams, LaNetVars, LocalityPrior};
use crate::math::{Matrix, Tape, Var};
use crate::scorer::{causal_conv_score, mlp_forward, Dropout, ScorerParams, ScorerVars};

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lanet: LaNetParams,
    pub scorer: ScorerParams,
}

/// Tape handles for [`ModelParams`], in the same order as [`ModelParams::named`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub lanet: LaNetVars,
    pub scorer: ScorerVars,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for h in &self.lanet.heads {
            out.extend([h.query, h.key, h.value]);
        }
        out.extend([
            self.lanet.out_proj,
            self.lanet.norm_gain,
            self.lanet.norm_bias,
        ]);
        let s = &self.scorer;
        out.extend([
            s.mlp1_weight,
            s.mlp1_bias,
            s.mlp2_weight,
            s.mlp2_bias,
            s.conv_kernel,
            s.conv_bias,
        ]);
        out
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
fn scaled_uniform(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, hd) = (cfg.dim, cfg.head_dim());
        let mut linear =
            |rows: usize, cols: usize| scaled_uniform(&mut rng, rows, cols, rows, cols);
        let heads = (0..cfg.heads)
            .map(|_| HeadParams {
                query: linear(d, hd),
                key: linear(d, hd),
                value: linear(d, hd),
            })
            .collect();
        let out_proj = linear(cfg.hidden, d);
        let mlp1_weight = linear(d, cfg.mlp_hidden);
        let mlp2_weight = linear(cfg.mlp_hidden, cfg.mlp_out);
        let conv_kernel = scaled_uniform(
            &mut rng,
            cfg.kernel,
            cfg.mlp_out,
            cfg.kernel * cfg.mlp_out,
            1,
        );
        Ok(ModelParams {
            lanet: LaNetParams {
                heads,
                out_proj,
                norm_gain: Matrix::filled(1, d, 1.0),
                norm_bias: Matrix::zeros(1, d),
            },
            scorer: ScorerParams {
                mlp1_weight,
                mlp1_bias: Matrix::zeros(1, cfg.mlp_hidden),
                mlp2_weight,
                mlp2_bias: Matrix::zeros(1, cfg.mlp_out),
                conv_kernel,
                conv_bias: Matrix::zeros(1, 1),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.lanet.dim()
    }

    /// `(name, tensor)` pairs in a fixed canonical order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, h) in self.lanet.heads.iter().enumerate() {
            out.push((format!("lanet.head{i}.query"), &h.query));
            out.push((format!("lanet.head{i}.key"), &h.key));
            out.push((format!("lanet.head{i}.value"), &h.value));
        }
        out.push(("lanet.out_proj".into(), &self.lanet.out_proj));
        out.push(("lanet.norm_gain".into(), &self.lanet.norm_gain));
        out.push(("lanet.norm_bias".into(), &self.lanet.norm_bias));
        let s = &self.scorer;
        out.push(("mlp.fc1.weight".into(), &s.mlp1_weight));
        out.push(("mlp.fc1.bias".into(), &s.mlp1_bias));
        out.push(("mlp.fc2.weight".into(), &s.mlp2_weight));
        out.push(("mlp.fc2.bias".into(), &s.mlp2_bias));
        out.push(("conv.kernel".into(), &s.conv_kernel));
        out.push(("conv.bias".into(), &s.conv_bias));
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for h in &mut self.lanet.heads {
            out.extend([&mut h.query, &mut h.key, &mut h.value]);
        }
        out.extend([
            &mut self.lanet.out_proj,
            &mut self.lanet.norm_gain,
            &mut self.lanet.norm_bias,
        ]);
        let s = &mut self.scorer;
        out.extend([
            &mut s.mlp1_weight,
            &mut s.mlp1_bias,
            &mut s.mlp2_weight,
            &mut s.mlp2_bias,
            &mut s.conv_kernel,
            &mut s.conv_bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against a freshly shaped model for `cfg`.
    pub fn from_named(cfg: &ModelConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let mut params = ModelParams::init(cfg, 0)?;
        let expected: Vec<(String, (usize, usize))> = params
            .named()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((slot, (name, shape)), (got_name, value)) in
            params.tensors_mut().into_iter().zip(expected).zip(tensors)
        {
            if name != got_name || shape != value.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {name} {shape:?}, found {got_name} {:?}",
                    value.shape()
                )));
            }
            *slot = value;
        }
        Ok(params)
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            lanet: self.lanet.register(tape),
            scorer: self.scorer.register(tape),
        }
    }

    /// Inference scores for one bag, dropout off.
    pub fn score(&self, cfg: &ModelConfig, x: &Matrix) -> Result<Vec<f64>> {
        let prior = prior_for(cfg, x.rows())?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = forward_bag::<ChaCha8Rng>(&mut tape, &vars, x, &prior, None)?;
        Ok(tape.value(out.scores).data().to_vec())
    }
}

/// Prior matching the model configuration for a bag of `t_len` snippets.
pub fn prior_for(cfg: &ModelConfig, t_len: usize) -> Result<LocalityPrior> {
    if cfg.use_prior {
        LocalityPrior::new(t_len, cfg.sigma)
    } else {
        Ok(LocalityPrior::disabled(t_len))
    }
}

/// Nodes produced by one bag's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BagForward {
    /// `T × 1` scores in (0, 1).
    pub scores: Var,
    /// `T × mlp_out` robust features after the MLP.
    pub features: Var,
}

pub fn forward_bag<R: Rng>(
    tape: &mut Tape,
    vars: &ModelVars,
    x: &Matrix,
    prior: &LocalityPrior,
    dropout: Option<&mut Dropout<'_, R>>,
) -> Result<BagForward> {
    x.ensure_finite("bag features")?;
    let x = tape.constant(x.clone());
    let g = tape.constant(prior.matrix().clone());
    let x_tilde = lanet_forward(tape, x, &vars.lanet, g)?;
    let features = mlp_forward(tape, x_tilde, &vars.scorer, dropout)?;
    let scores = causal_conv_score(
        tape,
        features,
        vars.scorer.conv_kernel,
        vars.scorer.conv_bias,
    )?;
    Ok(BagForward { scores, features })
}
