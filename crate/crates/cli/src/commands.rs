use std::path::{Path, PathBuf};

use dadsim::checkpoint::ModelCheckpoint;
use dadsim::dataset::{
    apply_scaler, day_aligned_episodes, fit_scaler, gen_synthetic, load_csv, write_csv,
    TimeSeriesDataset,
};
use dadsim::eval;
use dadsim::losses::{LossConfig, LossKind};
use dadsim::simulator::rollout;
use dadsim::trainer::{improve_dad, split_point, train_base};

use crate::config::RunConfig;
use crate::{CliError, CompareArgs, Common, EvaluateArgs, GenDataArgs, ImproveArgs, SimulateArgs, TrainArgs};

type Outcome = Result<(), CliError>;

fn load_config(common: &Common) -> Result<(RunConfig, u64), CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let seed = cfg.resolve_seed(common.seed)?;
    Ok((cfg, seed))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Rows before the held-out trailing days.
fn development_rows(ds: &TimeSeriesDataset, test_days: usize) -> Result<usize, CliError> {
    let held = test_days * ds.steps_per_day();
    if held >= ds.len() {
        return Err(CliError::usage(format!(
            "{test_days} held-out days leave nothing of {} rows to train on",
            ds.len()
        )));
    }
    Ok(ds.len() - held)
}

fn control_dim(ckpt: &ModelCheckpoint) -> usize {
    ckpt.config.input_dim - ckpt.config.state_dim
}

pub fn gen_data(a: GenDataArgs) -> Outcome {
    let (mut cfg, _) = load_config(&a.common)?;
    set(&mut cfg.plant.days, a.days);
    set(&mut cfg.plant.noise_std, a.noise_std);
    let ds = gen_synthetic(&cfg.plant)?;
    write_csv(&ds, &a.out)?;
    cfg.write_next_to(&a.out)?;
    log::info!("wrote {} rows to {}", ds.len(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Outcome {
    let (mut cfg, _) = load_config(&a.common)?;
    set(&mut cfg.data.state_dim, a.state_dim);
    set(&mut cfg.data.control_dim, a.control_dim);
    set(&mut cfg.data.test_days, a.data.test_days);
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.learning_rate, a.learning_rate);
    set(&mut cfg.train.validation_fraction, a.validation_fraction);
    if a.samples_per_epoch.is_some() {
        cfg.train.samples_per_epoch = a.samples_per_epoch;
    }
    if a.validation_samples.is_some() {
        cfg.train.validation_samples = a.validation_samples;
    }
    set(&mut cfg.model.hidden_size, a.hidden_size);
    set(&mut cfg.model.num_layers, a.num_layers);
    set(&mut cfg.model.dropout, a.dropout);
    set(&mut cfg.model.history_length, a.history_length);
    cfg.train.validate()?;

    let raw = load_csv(&a.data.data, cfg.data.state_dim, cfg.data.control_dim)?;
    let dev = raw.slice(0, development_rows(&raw, cfg.data.test_days)?)?;
    // Extrema come from the training rows only.
    let fit_rows = split_point(dev.len(), cfg.train.validation_fraction);
    let scaler = fit_scaler(&dev.slice(0, fit_rows)?)?;
    let scaled = apply_scaler(&dev, &scaler)?;
    let mcfg = cfg.model.model_config(&cfg.data);
    let ckpt = train_base(&scaled, &scaler, &cfg.train, &mcfg)?;
    ckpt.save(&a.out)?;
    cfg.write_next_to(&a.out)?;
    log::info!(
        "saved {} (best validation mse {:.6e})",
        a.out.display(),
        ckpt.meta.metrics["best_validation_mse"]
    );
    Ok(())
}

pub fn improve(a: ImproveArgs) -> Outcome {
    let (mut cfg, seed) = load_config(&a.common)?;
    let imp = &mut cfg.improve;
    set(&mut imp.experiment, a.experiment);
    set(&mut imp.min_el, a.min_el);
    set(&mut imp.max_el, a.max_el);
    if a.max_episodes.is_some() {
        imp.max_episodes = a.max_episodes;
    }
    set(&mut imp.epochs, a.epochs);
    set(&mut imp.learning_rate, a.learning_rate);
    set(&mut imp.test_horizon, a.test_horizon);
    set(&mut imp.test_episodes, a.test_episodes);
    imp.per_step_dad |= a.per_step_dad;
    match a.loss {
        Some(LossKind::Mse) => imp.loss = LossConfig::mse(),
        Some(LossKind::Dilate) if imp.loss.kind != LossKind::Dilate => {
            imp.loss = LossConfig::dilate(1.0, 1e-2)
        }
        _ => {}
    }
    if (a.alpha.is_some() || a.gamma.is_some()) && imp.loss.kind != LossKind::Dilate {
        return Err(CliError::usage("--alpha and --gamma only apply to --loss dilate"));
    }
    set(&mut imp.loss.alpha, a.alpha);
    set(&mut imp.loss.gamma, a.gamma);
    set(&mut cfg.data.test_days, a.data.test_days);
    let icfg = cfg.improve.improvement_config(seed);
    icfg.validate()?;

    let base = ModelCheckpoint::load(&a.ckpt)?;
    let raw = load_csv(&a.data.data, base.config.state_dim, control_dim(&base))?;
    let dev = raw.slice(0, development_rows(&raw, cfg.data.test_days)?)?;
    let scaled = apply_scaler(&dev, &base.scaler)?;
    let ckpt = improve_dad(&base, &scaled, &icfg)?;
    ckpt.save(&a.out)?;
    cfg.write_next_to(&a.out)?;
    log::info!(
        "saved {} (test simulation loss {:.6e} -> {:.6e})",
        a.out.display(),
        ckpt.meta.metrics["base_test_sim_loss"],
        ckpt.meta.metrics["best_test_sim_loss"]
    );
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Outcome {
    let ckpt = ModelCheckpoint::load(&a.ckpt)?;
    let raw = load_csv(&a.data.data, ckpt.config.state_dim, control_dim(&ckpt))?;
    if a.start + a.steps >= raw.len() {
        return Err(CliError::usage(format!(
            "{} steps from row {} run past the {} recorded rows",
            a.steps,
            a.start,
            raw.len()
        )));
    }
    let scaled = apply_scaler(&raw, &ckpt.scaler)?;
    let d_s = raw.state_dim();
    let controls = scaled
        .values()
        .slice_rows(a.start + 1, a.start + 1 + a.steps)
        .slice_cols(d_s, raw.width());
    let model = ckpt.model();
    let traj = rollout(&model, &scaled, a.start, &controls, ckpt.config.history_length)?;
    write_trajectory(&a.out, &raw, &ckpt, a.start, &traj.states)
}

fn write_trajectory(
    path: &Path,
    raw: &TimeSeriesDataset,
    ckpt: &ModelCheckpoint,
    start: usize,
    states: &dadsim::Matrix,
) -> Outcome {
    let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", path.display()));
    let mut text = String::from("step");
    for name in raw.names() {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for j in 0..states.rows() {
        text.push_str(&(j + 1).to_string());
        for v in ckpt.scaler.unscale_prefix(states.row(j)) {
            text.push(',');
            text.push_str(&v.to_string());
        }
        for v in raw.control(start + 1 + j) {
            text.push(',');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io)
}

fn default_buckets_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".buckets.csv");
    PathBuf::from(name)
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let (mut cfg, _) = load_config(&a.common)?;
    set(&mut cfg.data.test_days, a.data.test_days);
    set(&mut cfg.eval.horizon, a.horizon);
    if a.episodes.is_some() {
        cfg.eval.episodes = a.episodes;
    }
    let ckpt = ModelCheckpoint::load(&a.ckpt)?;
    let raw = load_csv(&a.data.data, ckpt.config.state_dim, control_dim(&ckpt))?;
    let dev_rows = development_rows(&raw, cfg.data.test_days)?;
    let scaled = apply_scaler(&raw, &ckpt.scaler)?;
    let per_day = raw.steps_per_day();
    let first_day = dev_rows.div_ceil(per_day);
    let available = (first_day..)
        .take_while(|d| d * per_day - 1 + cfg.eval.horizon < raw.len())
        .count();
    let days = cfg.eval.episodes.map_or(available, |n| n.min(available));
    if days == 0 {
        return Err(CliError::usage(format!(
            "no held-out day fits a {}-step episode",
            cfg.eval.horizon
        )));
    }
    let episodes = day_aligned_episodes(
        &scaled,
        ckpt.config.history_length,
        first_day,
        days,
        cfg.eval.horizon,
    )?;
    let report = eval::evaluate(&ckpt.model(), &scaled, &episodes)?;
    eval::write_episode_csv(&report, &a.out)?;
    let buckets = a.buckets.unwrap_or_else(|| default_buckets_path(&a.out));
    eval::write_bucket_csv(&report, &buckets)?;
    cfg.write_next_to(&a.out)?;
    log::info!(
        "{} episodes: mean mse {:.6e}, mean dtw {:.6e}, {} diverged",
        report.episodes.len(),
        report.overall.mean_mse,
        report.overall.mean_dtw,
        report.overall.diverged
    );
    Ok(())
}

pub fn compare(a: CompareArgs) -> Outcome {
    let ra = eval::read_episode_csv(&a.a)?;
    let rb = eval::read_episode_csv(&a.b)?;
    let summary = eval::compare(&ra, &rb)?;
    eval::write_comparison_csv(&summary, &a.out)?;
    if let Some(h) = &a.heatmap {
        eval::write_heatmap_csv(&[(a.label_a.as_str(), &ra), (a.label_b.as_str(), &rb)], h)?;
    }
    let o = summary.overall();
    log::info!(
        "overall: mse {:.6e} -> {:.6e} ({:.1}%), dtw {:.6e} -> {:.6e} ({:.1}%)",
        o.mse_a,
        o.mse_b,
        o.pct_mse,
        o.dtw_a,
        o.dtw_b,
        o.pct_dtw
    );
    Ok(())
}
