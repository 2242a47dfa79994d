use ddl_core::config::{LossWeights, MilForm};
use ddl_core::data::Label;
use ddl_core::lanet::{lanet_forward, HeadParams, LaNetParams, LocalityPrior};
use ddl_core::losses::{total_loss, BagTerm};
use ddl_core::math::finite_diff::{central_gradient, max_relative_error, FD_STEP};
use ddl_core::math::{FaultInjection, Matrix, OpKind, Tape, Var, LAYER_NORM_EPS};
use ddl_core::model::ModelParams;
use ddl_core::scorer::{causal_conv_score, mlp_forward, Dropout, ScorerParams};
use ddl_core::trainer::{grad_audit, toy_bags, toy_hyper_params, AUDIT_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FLOOR: f64 = 1e-8;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Builds `sum(build(inputs) ⊙ probe)` and returns the loss value and the
/// analytic gradient of every input. A random probe weight keeps the adjoint
/// from being uniform.
fn weighted_loss(
    inputs: &[Matrix],
    probe_seed: u64,
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    with_grads: bool,
) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = build(&mut tape, &vars);
    let (r, c) = tape.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let probe = tape.constant(randn(&mut rng, r, c, 1.0));
    let weighted = tape.mul(out, probe).unwrap();
    let loss = tape.sum(weighted);
    let value = tape.value(loss).data()[0];
    if !with_grads {
        return (value, Vec::new());
    }
    let grads = tape.backward(loss).unwrap();
    (
        value,
        vars.iter()
            .map(|&v| grads.get(v).unwrap().clone())
            .collect(),
    )
}

/// Worst relative error over all inputs of `build`.
fn check(inputs: Vec<Matrix>, build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let (_, analytic) = weighted_loss(&inputs, 99, build, true);
    let mut worst: f64 = 0.0;
    for slot in 0..inputs.len() {
        let numeric = central_gradient(&inputs[slot], FD_STEP, |m| {
            let mut probe = inputs.clone();
            probe[slot] = m.clone();
            weighted_loss(&probe, 99, build, false).0
        });
        worst = worst.max(max_relative_error(&analytic[slot], &numeric, FLOOR));
    }
    worst
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, 4, 5, 1.0);
    let b = randn(&mut rng, 5, 2, 1.0);
    // gradient of sum(a·b) with respect to a: every row of a gets b's row sums
    let mut tape = Tape::new();
    let av = tape.param(a.clone());
    let bv = tape.constant(b.clone());
    let prod = tape.matmul(av, bv).unwrap();
    let loss = tape.sum(prod);
    let analytic = tape.backward(loss).unwrap().get(av).unwrap().clone();
    let numeric = central_gradient(&a, FD_STEP, |m| m.matmul(&b).unwrap().sum());
    assert!(max_relative_error(&analytic, &numeric, FLOOR) < 1e-6);

    let err = check(vec![a, b], &|t, v| t.matmul(v[0], v[1]).unwrap());
    assert!(err < 1e-6, "matmul {err}");
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&mut rng, 3, 4, 1.0);
    let gain = uniform(&mut rng, 1, 4, 0.5, 1.5);
    let bias = randn(&mut rng, 1, 4, 0.3);
    let err = check(vec![x, gain, bias], &|t, v| {
        t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap()
    });
    assert!(err < 1e-5, "layer_norm {err}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, 4, 3, 1.0);
    let b = randn(&mut rng, 4, 3, 1.0);
    let c = randn(&mut rng, 5, 3, 1.0);
    let row = randn(&mut rng, 1, 3, 1.0);
    let col = randn(&mut rng, 7, 1, 1.0);
    let positive = uniform(&mut rng, 4, 3, 0.2, 2.0);
    let away_from_zero = a.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });

    let cases: Vec<(&str, Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
        (
            "matmul_t",
            vec![a.clone(), c.clone()],
            Box::new(|t, v| t.matmul_t(v[0], v[1]).unwrap()),
        ),
        (
            "add",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "add_row",
            vec![a.clone(), row.clone()],
            Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
        ),
        (
            "scale",
            vec![a.clone()],
            Box::new(|t, v| t.scale(v[0], -1.7)),
        ),
        (
            "add_scalar",
            vec![a.clone()],
            Box::new(|t, v| t.add_scalar(v[0], 0.4)),
        ),
        (
            "softmax_rows",
            vec![a.clone()],
            Box::new(|t, v| t.softmax_rows(v[0]).unwrap()),
        ),
        ("gelu", vec![a.clone()], Box::new(|t, v| t.gelu(v[0]))),
        ("sigmoid", vec![a.clone()], Box::new(|t, v| t.sigmoid(v[0]))),
        (
            "concat_cols",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]]).unwrap()),
        ),
        (
            "causal_conv",
            vec![c.clone(), randn(&mut rng, 3, 3, 1.0), Matrix::scalar(0.2)],
            Box::new(|t, v| t.causal_conv(v[0], v[1], v[2]).unwrap()),
        ),
        (
            "abs_forward_diff",
            vec![col.clone()],
            Box::new(|t, v| t.abs_forward_diff(v[0]).unwrap()),
        ),
        (
            "cosine_distance_rows",
            vec![c.clone()],
            Box::new(|t, v| t.cosine_distance_rows(v[0]).unwrap()),
        ),
        (
            "gather",
            vec![col.clone()],
            Box::new(|t, v| t.gather(v[0], &[5, 1, 1, 3]).unwrap()),
        ),
        ("square", vec![a.clone()], Box::new(|t, v| t.square(v[0]))),
        (
            "mean",
            vec![a.clone()],
            Box::new(|t, v| t.mean(v[0]).unwrap()),
        ),
        ("sum", vec![a.clone()], Box::new(|t, v| t.sum(v[0]))),
        (
            "log",
            vec![positive.clone()],
            Box::new(|t, v| t.log(v[0], 1e-12)),
        ),
        ("relu", vec![away_from_zero], Box::new(|t, v| t.relu(v[0]))),
        (
            "add_all",
            vec![a.clone(), b.clone(), positive.clone()],
            Box::new(|t, v| t.add_all(v).unwrap()),
        ),
    ];
    for (name, inputs, build) in cases {
        let err = check(inputs, build.as_ref());
        assert!(err < 1e-6, "{name}: relative error {err}");
    }
}

fn random_lanet(rng: &mut ChaCha8Rng, dim: usize, heads: usize, hidden: usize) -> LaNetParams {
    let per_head = hidden / heads;
    LaNetParams {
        heads: (0..heads)
            .map(|_| HeadParams {
                query: randn(rng, dim, per_head, 0.5),
                key: randn(rng, dim, per_head, 0.5),
                value: randn(rng, dim, per_head, 0.5),
            })
            .collect(),
        out_proj: randn(rng, hidden, dim, 0.5),
        norm_gain: uniform(rng, 1, dim, 0.5, 1.5),
        norm_bias: randn(rng, 1, dim, 0.2),
    }
}

fn lanet_tensors(p: &LaNetParams) -> Vec<Matrix> {
    let mut out = Vec::new();
    for h in &p.heads {
        out.extend([h.query.clone(), h.key.clone(), h.value.clone()]);
    }
    out.extend([p.out_proj.clone(), p.norm_gain.clone(), p.norm_bias.clone()]);
    out
}

fn lanet_from(tensors: &[Matrix], heads: usize) -> LaNetParams {
    LaNetParams {
        heads: (0..heads)
            .map(|h| HeadParams {
                query: tensors[3 * h].clone(),
                key: tensors[3 * h + 1].clone(),
                value: tensors[3 * h + 2].clone(),
            })
            .collect(),
        out_proj: tensors[3 * heads].clone(),
        norm_gain: tensors[3 * heads + 1].clone(),
        norm_bias: tensors[3 * heads + 2].clone(),
    }
}

#[test]
fn lanet_parameter_gradients_match_finite_differences() {
    let (t_len, dim, heads, hidden) = (6, 8, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = random_lanet(&mut rng, dim, heads, hidden);
    let x = randn(&mut rng, t_len, dim, 1.0);
    let prior = LocalityPrior::new(t_len, 6.0).unwrap();

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let xv = tape.constant(x.clone());
    let g = tape.constant(prior.matrix().clone());
    let out = lanet_forward(&mut tape, xv, &vars, g).unwrap();
    let loss = tape.sum(out);
    let grads = tape.backward(loss).unwrap();
    let mut param_vars = Vec::new();
    for h in &vars.heads {
        param_vars.extend([h.query, h.key, h.value]);
    }
    param_vars.extend([vars.out_proj, vars.norm_gain, vars.norm_bias]);

    let tensors = lanet_tensors(&params);
    for (slot, var) in param_vars.into_iter().enumerate() {
        let numeric = central_gradient(&tensors[slot], FD_STEP, |m| {
            let mut probe = tensors.clone();
            probe[slot] = m.clone();
            lanet_from(&probe, heads).forward(&x, &prior).unwrap().sum()
        });
        let err = max_relative_error(grads.get(var).unwrap(), &numeric, FLOOR);
        assert!(err < 1e-5, "tensor {slot}: relative error {err}");
    }
}

fn scorer_sum(tensors: &[Matrix], x: &Matrix, with_grads: bool) -> (f64, Vec<Matrix>) {
    let params = ScorerParams {
        mlp1_weight: tensors[0].clone(),
        mlp1_bias: tensors[1].clone(),
        mlp2_weight: tensors[2].clone(),
        mlp2_bias: tensors[3].clone(),
        conv_kernel: tensors[4].clone(),
        conv_bias: tensors[5].clone(),
    };
    let mut tape = Tape::new();
    let v = params.register(&mut tape);
    let xv = tape.constant(x.clone());
    let xf =
        mlp_forward::<ChaCha8Rng>(&mut tape, xv, &v, None::<&mut Dropout<'_, ChaCha8Rng>>).unwrap();
    let s = causal_conv_score(&mut tape, xf, v.conv_kernel, v.conv_bias).unwrap();
    let loss = tape.sum(s);
    let value = tape.value(loss).data()[0];
    if !with_grads {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    let order = [
        v.mlp1_weight,
        v.mlp1_bias,
        v.mlp2_weight,
        v.mlp2_bias,
        v.conv_kernel,
        v.conv_bias,
    ];
    (
        value,
        order.iter().map(|&p| g.get(p).unwrap().clone()).collect(),
    )
}

#[test]
fn scorer_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t_len, dim, hidden, out, k) = (7, 6, 10, 5, 3);
    let x = randn(&mut rng, t_len, dim, 1.0);
    let tensors = vec![
        randn(&mut rng, dim, hidden, 0.5),
        randn(&mut rng, 1, hidden, 0.1),
        randn(&mut rng, hidden, out, 0.5),
        randn(&mut rng, 1, out, 0.1),
        randn(&mut rng, k, out, 0.5),
        Matrix::scalar(0.1),
    ];
    let (_, analytic) = scorer_sum(&tensors, &x, true);
    for slot in 0..tensors.len() {
        let numeric = central_gradient(&tensors[slot], FD_STEP, |m| {
            let mut probe = tensors.clone();
            probe[slot] = m.clone();
            scorer_sum(&probe, &x, false).0
        });
        let err = max_relative_error(&analytic[slot], &numeric, FLOOR);
        assert!(err < 1e-5, "scorer tensor {slot}: relative error {err}");
    }
}

struct RawBag {
    scores: Matrix,
    features: Matrix,
    label: Label,
}

fn raw_objective(
    bags: &[RawBag],
    weights: &LossWeights,
    with_grads: bool,
) -> (f64, Vec<(Matrix, Matrix)>) {
    let mut tape = Tape::new();
    let mut vars = Vec::new();
    let terms: Vec<BagTerm> = bags
        .iter()
        .map(|b| {
            let scores = tape.param(b.scores.clone());
            let features = tape.param(b.features.clone());
            vars.push((scores, features));
            BagTerm {
                scores,
                features,
                label: b.label,
            }
        })
        .collect();
    let parts = total_loss(&mut tape, &terms, weights).unwrap();
    let value = tape.value(parts.total).data()[0];
    if !with_grads {
        return (value, Vec::new());
    }
    let g = tape.backward(parts.total).unwrap();
    let grads = vars
        .iter()
        .map(|&(s, f)| (g.get(s).unwrap().clone(), g.get(f).unwrap().clone()))
        .collect();
    (value, grads)
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let bags: Vec<RawBag> = [
            Label::Abnormal,
            Label::Abnormal,
            Label::Normal,
            Label::Normal,
        ]
        .into_iter()
        .map(|label| {
            let t_len = rng.random_range(5..=20);
            RawBag {
                scores: uniform(&mut rng, t_len, 1, 0.05, 0.95),
                features: randn(&mut rng, t_len, 4, 1.0),
                label,
            }
        })
        .collect();
        let weights = LossWeights {
            lambda1: 1.0,
            lambda2: 2.0,
            zeta: 0.05,
            ..LossWeights::default()
        };
        let (_, analytic) = raw_objective(&bags, &weights, true);
        for (i, (gs, gf)) in analytic.iter().enumerate() {
            let num_s = central_gradient(&bags[i].scores, FD_STEP, |m| {
                let mut probe: Vec<RawBag> = bags.iter().map(clone_bag).collect();
                probe[i].scores = m.clone();
                raw_objective(&probe, &weights, false).0
            });
            let num_f = central_gradient(&bags[i].features, FD_STEP, |m| {
                let mut probe: Vec<RawBag> = bags.iter().map(clone_bag).collect();
                probe[i].features = m.clone();
                raw_objective(&probe, &weights, false).0
            });
            let es = max_relative_error(gs, &num_s, 1e-6);
            let ef = max_relative_error(gf, &num_f, 1e-6);
            assert!(
                es < 1e-4 && ef < 1e-4,
                "seed {seed} bag {i}: scores {es}, features {ef}"
            );
        }
    }
}

fn clone_bag(b: &RawBag) -> RawBag {
    RawBag {
        scores: b.scores.clone(),
        features: b.features.clone(),
        label: b.label,
    }
}

#[test]
fn toy_model_audit_passes_for_five_seeds() {
    let hyper = toy_hyper_params();
    let start = std::time::Instant::now();
    for seed in 0..5 {
        let params = ModelParams::init(&hyper.model, seed).unwrap();
        let bags = toy_bags(seed, 12, hyper.model.dim);
        let report = grad_audit(&params, &hyper, &bags, 1e-4, None).unwrap();
        assert!(
            report.passed,
            "seed {seed}: {} in {}",
            report.max_rel_error, report.worst_param
        );
        assert_eq!(report.params.len(), params.named().len());
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn audit_names_the_parameter_behind_a_broken_rule() {
    let hyper = toy_hyper_params();
    let params = ModelParams::init(&hyper.model, 0).unwrap();
    let bags = toy_bags(0, 12, hyper.model.dim);
    let fault = FaultInjection {
        op: OpKind::CausalConv,
        operand: 1,
        factor: 1.5,
    };
    let report = grad_audit(&params, &hyper, &bags, 1e-4, Some(fault)).unwrap();
    assert!(!report.passed);
    assert_eq!(report.worst_param, "conv.kernel");
}

#[test]
fn audit_of_a_zero_loss_configuration_passes() {
    let mut hyper = toy_hyper_params();
    hyper.loss.mil_form = MilForm::PositiveOnly;
    let mut params = ModelParams::init(&hyper.model, 0).unwrap();
    params.scorer.conv_kernel = Matrix::zeros(
        params.scorer.conv_kernel.rows(),
        params.scorer.conv_kernel.cols(),
    );
    let bags: Vec<(Matrix, Label)> = toy_bags(0, 12, hyper.model.dim)
        .into_iter()
        .map(|(m, _)| (m, Label::Normal))
        .collect();
    let report = grad_audit(&params, &hyper, &bags, 1e-4, None).unwrap();
    assert_eq!(report.loss, 0.0);
    assert!(report.passed);
    for p in &report.params {
        assert!(
            p.max_abs_grad < AUDIT_FLOOR,
            "{} has gradient {}",
            p.name,
            p.max_abs_grad
        );
    }
}
