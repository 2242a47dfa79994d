use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ddl_core::data::{generate_synthetic, load_dataset, write_synthetic, FRAMES_PER_SNIPPET};
use ddl_core::metrics::{
    check_frame_span, evaluate, expand_scores, read_annotations, read_score_csv, write_score_csv,
};
use ddl_core::model::ModelParams;
use ddl_core::trainer::{
    grad_audit, read_checkpoint, toy_bags, toy_hyper_params, write_checkpoint, EpochMetrics,
    TrainSet, Trainer,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{Cli, Command, EvalArgs, GradcheckArgs, ScoreArgs, SynthArgs, TrainArgs};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ddlc";
pub const SCORES_FILE: &str = "scores.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(cli.shared.profile, cli.shared.config.as_deref())?;
    if let Some(seed) = cli.shared.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    let out = cli.shared.out;
    match cli.command {
        Command::Synth(args) => synth(cfg, args, require_out(out)?),
        Command::Train(args) => train(cfg, args, require_out(out)?),
        Command::Score(args) => score(cfg, args, require_out(out)?),
        Command::Eval(args) => eval(cfg, args, require_out(out)?),
        Command::Gradcheck(args) => gradcheck(cfg, args, out),
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    out.ok_or_else(|| CliError::Usage("this command needs --out <dir>".into()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn synth(mut cfg: RunConfig, args: SynthArgs, out: PathBuf) -> Result<(), CliError> {
    if let Some(n) = args.normal_videos {
        cfg.synth.normal_videos = n;
        cfg.synth.test_normal_videos = n / 4;
    }
    if let Some(n) = args.anomaly_videos {
        cfg.synth.anomaly_videos = n;
        cfg.synth.test_anomaly_videos = n / 4;
    }
    if let Some(d) = args.dim {
        cfg.synth.dim = d;
    }
    cfg.model.dim = cfg.synth.dim;
    cfg.validate()?;

    let ds = generate_synthetic(&cfg.synth)?;
    create_dir(&out)?;
    write_synthetic(&ds, &out)?;
    cfg.write(&out.join(RUN_CONFIG_FILE))?;
    println!(
        "wrote {} train and {} test bags to {}",
        ds.train.bags.len(),
        ds.test.bags.len(),
        out.display()
    );
    Ok(())
}

fn train(mut cfg: RunConfig, args: TrainArgs, out: PathBuf) -> Result<(), CliError> {
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.lambda1 {
        cfg.loss.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        cfg.loss.lambda2 = v;
    }
    if let Some(v) = args.zeta {
        cfg.loss.zeta = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.train.base_lr = v;
    }
    if let Some(v) = args.t_max {
        cfg.train.t_max = v;
    }
    if let Some(v) = args.sigma {
        cfg.model.sigma = v;
    }
    if args.no_prior {
        cfg.model.use_prior = false;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    cfg.hyper().validate()?;

    let (manifest, bags) = load_dataset(&args.manifest)?;
    cfg.model.dim = manifest.dim;
    let hyper = cfg.hyper();
    hyper.validate()?;
    let data = TrainSet::new(&bags, hyper.train.t_max)?;
    let mut trainer = Trainer::new(hyper)?;

    create_dir(&out)?;
    cfg.write(&out.join(RUN_CONFIG_FILE))?;
    let losses_path = out.join(LOSSES_FILE);
    let mut losses =
        BufWriter::new(File::create(&losses_path).map_err(|e| CliError::io(&losses_path, e))?);
    let io_err = |e| CliError::io(&losses_path, e);
    writeln!(losses, "epoch,lr,total,mil,dr,da").map_err(io_err)?;

    let every = cfg.train.checkpoint_every;
    let mut failure = None;
    trainer
        .fit(&data, |t, m: &EpochMetrics| {
            let row = writeln!(
                losses,
                "{},{},{},{},{},{}",
                m.epoch + 1,
                m.lr,
                m.total,
                m.mil,
                m.dr,
                m.da
            )
            .and_then(|_| losses.flush());
            if let Err(e) = row {
                failure = Some(CliError::io(&losses_path, e));
                return Err(ddl_core::Error::Data(
                    "stopped after a write failure".into(),
                ));
            }
            println!(
                "epoch {:>3}  lr {:.3e}  total {:.5}  mil {:.5}  dr {:.5}  da {:.5}",
                m.epoch + 1,
                m.lr,
                m.total,
                m.mil,
                m.dr,
                m.da
            );
            if every > 0 && t.epochs_done % every == 0 && t.epochs_done < t.hyper.train.epochs {
                write_checkpoint(
                    &t.checkpoint(),
                    out.join(format!("checkpoint_epoch{}.ddlc", t.epochs_done)),
                )?;
            }
            Ok(())
        })
        .map_err(|e| failure.take().unwrap_or(CliError::Core(e)))?;
    losses.flush().map_err(|e| CliError::io(&losses_path, e))?;
    write_checkpoint(&trainer.checkpoint(), out.join(CHECKPOINT_FILE))?;
    println!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn score(mut cfg: RunConfig, args: ScoreArgs, out: PathBuf) -> Result<(), CliError> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let (manifest, bags) = load_dataset(&args.manifest)?;
    let params: &ModelParams = &ck.params;
    if manifest.dim != params.dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {}-dim features but {} has {}",
            params.dim(),
            args.manifest.display(),
            manifest.dim
        )));
    }
    let frames: Option<HashMap<String, usize>> = match &args.annotations {
        Some(path) => Some(
            read_annotations(path)?
                .into_iter()
                .map(|a| (a.video_id, a.total_frames))
                .collect(),
        ),
        None => None,
    };

    let mut rows = Vec::with_capacity(bags.len());
    for bag in &bags {
        let total_frames = match &frames {
            Some(map) => *map.get(&bag.video_id).ok_or_else(|| {
                CliError::Core(ddl_core::Error::Data(format!(
                    "no annotation for {:?}",
                    bag.video_id
                )))
            })?,
            None => bag.len() * FRAMES_PER_SNIPPET,
        };
        check_frame_span(&bag.video_id, bag.len(), total_frames)?;
        let snippet_scores = params.score(&ck.hyper.model, &bag.features)?;
        rows.push((
            bag.video_id.clone(),
            expand_scores(&snippet_scores, total_frames)?,
        ));
    }

    create_dir(&out)?;
    cfg.model = ck.hyper.model.clone();
    cfg.loss = ck.hyper.loss.clone();
    cfg.train = ck.hyper.train.clone();
    cfg.write(&out.join(RUN_CONFIG_FILE))?;
    write_score_csv(&rows, out.join(SCORES_FILE))?;
    println!(
        "scored {} videos into {}",
        rows.len(),
        out.join(SCORES_FILE).display()
    );
    Ok(())
}

fn eval(cfg: RunConfig, args: EvalArgs, out: PathBuf) -> Result<(), CliError> {
    let scores = read_score_csv(&args.scores)?;
    let annotations = read_annotations(&args.annotations)?;
    let result = evaluate(&scores, &annotations)?;
    create_dir(&out)?;
    cfg.write(&out.join(RUN_CONFIG_FILE))?;
    write_json(&result, &out.join(EVAL_FILE))?;
    println!(
        "{}",
        serde_json::to_string(&result).expect("report serializes")
    );
    Ok(())
}

fn gradcheck(cfg: RunConfig, args: GradcheckArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    if !(args.tolerance > 0.0) || !args.tolerance.is_finite() {
        return Err(CliError::Usage(format!(
            "--tolerance must be positive, got {}",
            args.tolerance
        )));
    }
    if args.snippets < 2 {
        return Err(CliError::Usage("--snippets must be at least 2".into()));
    }
    let hyper = toy_hyper_params();
    let seed = cfg.train.seed;
    let params = ModelParams::init(&hyper.model, seed)?;
    let bags = toy_bags(seed, args.snippets, hyper.model.dim);
    let report = grad_audit(&params, &hyper, &bags, args.tolerance, None)?;

    println!(
        "{:<22} {:>7} {:>13} {:>13}",
        "parameter", "entries", "max rel err", "max abs err"
    );
    for p in &report.params {
        println!(
            "{:<22} {:>7} {:>13.3e} {:>13.3e}",
            p.name, p.entries, p.max_rel_error, p.max_abs_error
        );
    }
    println!(
        "loss {:.6}  max relative error {:.3e} ({})  tolerance {:.1e}  {}",
        report.loss,
        report.max_rel_error,
        report.worst_param,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(out) = out {
        create_dir(&out)?;
        cfg.write(&out.join(RUN_CONFIG_FILE))?;
        write_json(&report, &out.join(GRADCHECK_FILE))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "max relative error {:.3e} in {} is not below {:.1e}",
            report.max_rel_error, report.worst_param, report.tolerance
        )))
    }
}
