//! One function per subcommand. Each returns the text the binary prints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use punet::checkpoint::{load_model, load_session, read_manifest, save_session};
use punet::eval::ablation::{run_ablation_locations, run_ablation_strategy};
use punet::eval::overlay::{render_overlay, write_ppm};
use punet::eval::{binarize, default_rows, evaluate_rows, params_report, ParamReport};
use punet::gradcheck::{composite_check, primitive_suite, CheckReport};
use punet::model::{FineTuneMode, PuNet, RaterTag};
use punet::synth::{build_dataset, derive_seed, DomainShift, MultiRaterDataset};
use punet::train::{epoch_means, TrainSession, TrainingStrategy};
use punet::{Error, ParamStore};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Scalar type of every stored tensor and of training.
pub type Real = f32;

pub const EVAL_CSV: &str = "eval_matrix.csv";
pub const EVAL_MD: &str = "eval_matrix.md";
pub const PARAMS_TXT: &str = "params.txt";
pub const OVERLAYS: &str = "overlays";
pub const PROMPT_RATIO_LIMIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Domain {
    /// Unshifted scenes used for pretraining.
    Source,
    /// Shifted scenes, split into `train/` and `test/`.
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationKind {
    Locations,
    Strategy,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn describe(name: &str, d: &MultiRaterDataset<Real>) -> String {
    format!(
        "{name}: {} scenes, {} raters, {} samples ({}×{} px)\n",
        d.len(),
        d.raters(),
        d.sample_count(),
        d.config.height,
        d.config.width
    )
}

/// Source data goes to `out`; target data is split into `out/train` and `out/test`.
pub fn cmd_synth(cfg: &RunConfig, domain: Domain, out: &Path) -> Result<String> {
    cfg.validate()?;
    let bench = cfg.benchmark();
    let seed = cfg.seed();
    let mut report = String::new();
    match domain {
        Domain::Source => {
            let d: MultiRaterDataset<Real> = build_dataset(
                cfg.source_scenes,
                &cfg.profiles,
                derive_seed(seed, 0),
                &bench.scene_config(DomainShift::IDENTITY),
            )?;
            d.write(out)?;
            report += &describe("source", &d);
        }
        Domain::Target => {
            let d: MultiRaterDataset<Real> = build_dataset(
                cfg.train_scenes + cfg.test_scenes,
                &cfg.profiles,
                derive_seed(seed, 1),
                &bench.scene_config(cfg.target_shift()),
            )?;
            let (train, test) = d.split_at(cfg.train_scenes)?;
            train.write(&out.join("train"))?;
            test.write(&out.join("test"))?;
            report += &describe("target/train", &train);
            report += &describe("target/test", &test);
        }
    }
    cfg.write_resolved(out)?;
    Ok(report)
}

fn check_compatible(net: &PuNet, data: &MultiRaterDataset<Real>) -> Result<()> {
    let (h, w) = net.config().input_size;
    if data.raters() != net.raters() || (data.config.height, data.config.width) != (h, w) {
        return Err(Error::Config(format!(
            "checkpoint expects {} raters at {h}×{w}, dataset has {} raters at {}×{}",
            net.raters(),
            data.raters(),
            data.config.height,
            data.config.width
        ))
        .into());
    }
    Ok(())
}

fn train_report(s: &TrainSession<Real>) -> String {
    let mut r = String::new();
    for (e, m) in epoch_means(&s.log).iter().enumerate() {
        writeln!(r, "epoch {e:>3}  lr {:.2e}  loss {m:.6}", s.config.schedule.lr_at(e)).expect("string write");
    }
    let state = if s.is_finished() { "finished" } else { "stopped" };
    writeln!(r, "{state} after {} of {} epochs, {} steps", s.next_epoch, s.config.schedule.epochs, s.step)
        .expect("string write");
    r
}

/// Continues the session saved in `out`, or starts `fresh` when not resuming.
fn run_session(
    data: &MultiRaterDataset<Real>,
    out: &Path,
    stop_after: Option<usize>,
    resume: bool,
    fresh: impl FnOnce() -> Result<TrainSession<Real>>,
    check: impl FnOnce(&TrainSession<Real>) -> Result<()>,
) -> Result<TrainSession<Real>> {
    let mut session = if resume { load_session::<Real>(out)? } else { fresh()? };
    check_compatible(&session.net, data)?;
    check(&session)?;
    session.run(data, stop_after)?;
    save_session(out, &session)?;
    Ok(session)
}

/// Full-mode training on the source domain's majority-vote labels.
pub fn cmd_pretrain(cfg: &RunConfig, data: &Path, out: &Path, stop_after: Option<usize>, resume: bool) -> Result<String> {
    cfg.validate()?;
    let bench = cfg.benchmark();
    let seed = cfg.seed();
    let source = MultiRaterDataset::<Real>::read(data)?;
    let session = run_session(&source, out, stop_after, resume, || {
        let net = bench.net(cfg.insertion)?;
        let store = net.init_params(derive_seed(seed, 2))?;
        let tc = cfg.train_config(
            FineTuneMode::Full,
            TrainingStrategy::FusionOnly,
            cfg.pretrain_schedule(),
            derive_seed(seed, 3),
        );
        Ok(TrainSession::new(net, store, tc)?)
    }, |_| Ok(()))?;
    cfg.write_resolved(out)?;
    Ok(train_report(&session))
}

fn ratio_line(report: &ParamReport, store: &ParamStore<Real>) -> String {
    let trainable = store.count_trainable();
    format!(
        "trainable {trainable} / {} = {:.4}% (reference prompt ratio {:.2}%)\n",
        report.total,
        100.0 * trainable as f64 / report.total.max(1) as f64,
        100.0 * ParamReport::reference_prompt_ratio()
    )
}

/// Fine-tunes the checkpoint in `from` on target-domain training data.
#[allow(clippy::too_many_arguments)]
pub fn cmd_finetune(
    cfg: &RunConfig,
    from: &Path,
    data: &Path,
    out: &Path,
    mode: FineTuneMode,
    strategy: TrainingStrategy,
    stop_after: Option<usize>,
    resume: bool,
) -> Result<String> {
    cfg.validate()?;
    let seed = cfg.seed();
    let train_set = MultiRaterDataset::<Real>::read(data)?;
    let fresh = || {
        let (net, store) = load_model::<Real>(from)?;
        let tc = cfg.train_config(mode, strategy, cfg.finetune_schedule(), derive_seed(seed, 4));
        Ok(TrainSession::new(net, store, tc)?)
    };
    let session = run_session(&train_set, out, stop_after, resume, fresh, |s| {
        let ratio = s.store.count_trainable() as f64 / s.store.count_total().max(1) as f64;
        if s.config.mode == FineTuneMode::PromptAndHead && ratio > PROMPT_RATIO_LIMIT {
            return Err(Error::Contract(format!(
                "prompt fine-tuning would train {:.4}% of parameters, above the 1% limit",
                100.0 * ratio
            ))
            .into());
        }
        Ok(())
    })?;
    let report = params_report(&session.net, &session.store);
    cfg.write_resolved(out)?;
    Ok(ratio_line(&report, &session.store) + &train_report(&session))
}

fn tag_file(tag: RaterTag) -> String {
    match tag {
        RaterTag::Aggregate => "c".into(),
        RaterTag::Rater(j) => j.to_string(),
    }
}

/// Writes the evaluation matrix, parameter report and overlays into `out`.
pub fn cmd_eval(cfg: &RunConfig, from: &Path, data: &Path, out: &Path) -> Result<String> {
    let (net, store) = load_model::<Real>(from)?;
    let test = MultiRaterDataset::<Real>::read(data)?;
    check_compatible(&net, &test)?;
    let label = match read_manifest(from)?.trainer {
        Some(t) => format!("{}/{}", t.config.mode, t.config.strategy),
        None => "model".into(),
    };
    let trainable = store.count_trainable();
    let matrix = evaluate_rows(&net, &store, &test, &default_rows(&net, &label, Some(trainable)))?;
    write_file(&out.join(EVAL_CSV), &matrix.to_csv())?;
    write_file(&out.join(EVAL_MD), &matrix.to_markdown())?;

    let report = params_report(&net, &store);
    let params = format!("{report}{}", ratio_line(&report, &store));
    write_file(&out.join(PARAMS_TXT), &params)?;

    let overlays = out.join(OVERLAYS);
    if overlays.exists() {
        fs::remove_dir_all(&overlays).map_err(|source| Error::Io {
            path: overlays.clone(),
            source,
        })?;
    }
    let tags: Vec<RaterTag> = if net.config().insertion.has_prompts() {
        RaterTag::report_order(net.raters()).collect()
    } else {
        vec![RaterTag::Aggregate]
    };
    for scene in test.scenes.iter().take(cfg.overlay_scenes) {
        for &tag in &tags {
            let pred = binarize(&net.predict(&store, &scene.image, tag)?);
            let img = render_overlay(&scene.image, &pred, scene.mask(tag))?;
            let name = format!("scene{}_prompt{}.ppm", scene.index, tag_file(tag));
            write_ppm(&overlays.join(name), &img)?;
        }
    }
    cfg.write_resolved(out)?;
    Ok(matrix.to_markdown() + "\n" + &params)
}

/// Trains every variant of one ablation from scratch for each seed.
pub fn cmd_ablate(cfg: &RunConfig, kind: AblationKind, seeds: &[u64], out: &Path) -> Result<String> {
    cfg.validate()?;
    let bench = cfg.benchmark();
    let (name, table, runs, summary) = match kind {
        AblationKind::Locations => {
            let r = run_ablation_locations::<Real>(&bench, seeds)?;
            ("locations", r.to_csv(), r.runs_csv(), r.summary())
        }
        AblationKind::Strategy => {
            let r = run_ablation_strategy::<Real>(&bench, seeds)?;
            ("strategy", r.to_csv(), r.runs_csv(), r.summary())
        }
    };
    write_file(&out.join(format!("ablation_{name}.csv")), &table)?;
    write_file(&out.join(format!("ablation_{name}_runs.csv")), &runs)?;
    write_file(&out.join(format!("ablation_{name}_summary.txt")), &format!("{summary}\n"))?;
    cfg.write_resolved(out)?;
    Ok(format!("{table}\n{summary}\n"))
}

/// Finite-difference check of every primitive and of the composite model.
pub fn cmd_gradcheck(seed: u64) -> Result<(String, Vec<CheckReport>)> {
    let mut reports = primitive_suite(seed)?;
    reports.push(composite_check(seed)?);
    let mut text = String::new();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        writeln!(
            text,
            "{verdict:<4} {:<24} max rel err {:.3e} (tol {:.0e}, {} entries)",
            r.name, r.max_rel_err, r.tolerance, r.checked
        )
        .expect("string write");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Gradcheck(format!("{}\n{}", failed.join(", "), text)));
    }
    Ok((text, reports))
}
