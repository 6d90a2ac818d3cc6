//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails the target if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use dadsim::checkpoint::ModelCheckpoint;
use dadsim::dataset::{
    apply_scaler, build_episodes, gen_synthetic, load_csv, sample_horizon, write_csv,
    EpisodePair, HorizonDistribution, Regime, RegimeConfig, SyntheticPlantConfig,
};
use dadsim::eval::{read_episode_csv, MetricsReport};
use dadsim::losses::{
    cost_matrix, dtw_classic, loss_and_grad, omega, soft_dtw, soft_dtw_grad, tdi_hard,
    temporal_grad, temporal_loss, LossConfig,
};
use dadsim::lstm::{backward, forward, init_params, predict, Mode, ModelConfig, ModelParams};
use dadsim::simulator::rollout_from;
use dadsim::trainer::{improve_dad_observed, ImprovementConfig, ImprovementObserver};
use dadsim::{Matrix, TimeSeriesDataset};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dadsim(args: &[&str], dir: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_dadsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("RF_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "dadsim {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

fn loss_oracles() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let k = 1 + case % 6;
        let p = random_matrix(&mut r, k, 2, 1.0);
        let t = random_matrix(&mut r, k, 2, 1.0);
        let delta = cost_matrix(&p, &t).map_err(|e| e.to_string())?;
        let om = omega(k);
        for gamma in [0.1, 1.0] {
            let pairs = [
                (soft_dtw(&delta, gamma).unwrap(), soft_dtw_enum(&delta, gamma)),
                (
                    temporal_loss(&delta, &om, gamma).unwrap(),
                    temporal_enum(&delta, &om, gamma),
                ),
            ];
            for (got, want) in pairs {
                ensure(close(got, want, 1e-10, 1e-12), || {
                    format!("case {case}, gamma {gamma}: {got} vs {want}")
                })?;
                worst = worst.max((got - want).abs() / want.abs().max(1e-300));
            }
        }
        let (_, tdi_want) = hard_enum(&delta, &om);
        let tdi = tdi_hard(&delta, &om).unwrap();
        ensure(close(tdi, tdi_want, 1e-10, 1e-12), || {
            format!("case {case}: tdi {tdi} vs {tdi_want}")
        })?;
    }
    Ok(format!("200 instances, worst relative error {worst:.1e}"))
}

fn flat(p: &ModelParams) -> Vec<f64> {
    p.slices().concat()
}

fn unflat(template: &ModelParams, x: &[f64]) -> ModelParams {
    let mut p = template.clone();
    let mut off = 0;
    for s in p.slices_mut() {
        s.copy_from_slice(&x[off..off + s.len()]);
        off += s.len();
    }
    p
}

fn gradient_suite() -> Outcome {
    let mut r = rng(202);
    let mut checked = 0usize;
    let check = |an: f64, fd: f64, what: &str| {
        ensure(close(an, fd, 1e-4, 1e-6), || format!("{what}: analytic {an}, numeric {fd}"))
    };
    for case in 0..50u64 {
        let d_s = r.random_range(1..=2);
        let cfg = ModelConfig {
            input_dim: d_s + r.random_range(1..=2),
            state_dim: d_s,
            hidden_size: r.random_range(2..=4),
            num_layers: r.random_range(1..=2),
            dropout: if case % 2 == 0 { 0.0 } else { 0.25 },
            history_length: r.random_range(2..=4),
            output_length: 1,
        };
        let p = init_params(&cfg, case).unwrap();
        let w = random_matrix(&mut r, cfg.history_length, cfg.input_dim, 1.0);
        let up: Vec<f64> = (0..d_s).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = |p: &ModelParams, w: &Matrix| -> f64 {
            let (y, _) = forward(p, &cfg, w, Mode::Train, case).unwrap();
            y.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = forward(&p, &cfg, &w, Mode::Train, case).unwrap();
        let (g, dx) = backward(&p, &cfg, &cache, &up).unwrap();
        let an = flat(&g);
        let mut x = flat(&p);
        for i in 0..x.len() {
            let fd = central_diff(&mut x, i, 1e-5, |v| f(&unflat(&p, v), &w));
            check(an[i], fd, &format!("lstm case {case} param {i}"))?;
        }
        let (rows, cols) = w.shape();
        let mut xw = w.as_slice().to_vec();
        for i in 0..xw.len() {
            let fd = central_diff(&mut xw, i, 1e-5, |v| {
                f(&p, &Matrix::from_vec(rows, cols, v.to_vec()).unwrap())
            });
            check(dx.as_slice()[i], fd, &format!("lstm case {case} input {i}"))?;
        }
        checked += an.len() + xw.len();

        let k = 2 + case as usize % 5;
        let gamma = [0.1, 1.0][case as usize % 2];
        let pred = random_matrix(&mut r, k, 2, 1.0);
        let target = random_matrix(&mut r, k, 2, 1.0);
        let dil = LossConfig::dilate(r.random_range(0.0..1.0), gamma);
        let grads: [(Matrix, Box<dyn Fn(&Matrix) -> f64>); 3] = [
            (
                soft_dtw_grad(&pred, &target, gamma).unwrap(),
                Box::new(|m: &Matrix| soft_dtw(&cost_matrix(m, &target).unwrap(), gamma).unwrap()),
            ),
            (
                temporal_grad(&pred, &target, gamma).unwrap(),
                Box::new(|m: &Matrix| {
                    temporal_loss(&cost_matrix(m, &target).unwrap(), &omega(k), gamma).unwrap()
                }),
            ),
            (
                loss_and_grad(&pred, &target, &dil).unwrap().1,
                Box::new(|m: &Matrix| dadsim::losses::dilate(m, &target, &dil).unwrap()),
            ),
        ];
        for (n, (g, f)) in grads.iter().enumerate() {
            let mut x = pred.as_slice().to_vec();
            for i in 0..x.len() {
                let fd = central_diff(&mut x, i, 1e-5, |v| {
                    f(&Matrix::from_vec(k, 2, v.to_vec()).unwrap())
                });
                check(g.as_slice()[i], fd, &format!("loss {n} case {case} entry {i}"))?;
            }
            checked += x.len();
        }
    }
    Ok(format!("50 instances, {checked} partial derivatives"))
}

fn hard_limit() -> Outcome {
    let mut r = rng(303);
    let gammas = [1.0, 0.1, 1e-2, 1e-3];
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let k = 1 + case % 6;
        let p = random_matrix(&mut r, k, 2, 1.0);
        let t = random_matrix(&mut r, k, 2, 1.0);
        let delta = cost_matrix(&p, &t).unwrap();
        let (hard, _) = dtw_classic(&delta).unwrap();
        let gaps: Vec<f64> = gammas
            .iter()
            .map(|&g| (soft_dtw(&delta, g).unwrap() - hard).abs())
            .collect();
        ensure(gaps[3] <= 1e-2, || format!("case {case}: gap {} at gamma 1e-3", gaps[3]))?;
        ensure(gaps.windows(2).all(|w| w[1] <= w[0]), || {
            format!("case {case}: gaps {gaps:?} not shrinking")
        })?;
        worst = worst.max(gaps[3]);
    }
    Ok(format!("200 instances, largest gap at gamma 1e-3: {worst:.2e}"))
}

/// Shared artifacts of the desk-scale experiment.
struct Experiment {
    dir: tempfile::TempDir,
}

const HELD_OUT_DAYS: usize = 10;

const EXPERIMENT_CONFIG: &str = r#"{
  "seed": 7,
  "plant": {"days": 60},
  "data": {"test_days": 10},
  "model": {"hidden_size": 64, "num_layers": 2, "dropout": 0.15, "history_length": 30},
  "train": {"epochs": 20, "batch_size": 32, "learning_rate": 0.001,
            "samples_per_epoch": 5000, "validation_samples": 1000},
  "improve": {"experiment": "E4", "min_el": 10, "max_el": 480, "max_episodes": 30,
              "epochs": 10, "learning_rate": 0.0001,
              "loss": {"kind": "dilate", "alpha": 1.0, "gamma": 0.01}},
  "eval": {"horizon": 1440}
}"#;

impl Experiment {
    fn run() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        std::fs::write(d.join("c.json"), EXPERIMENT_CONFIG).map_err(|e| e.to_string())?;
        dadsim(&["gen-data", "--config", "c.json", "--out", "d.csv"], d)?;
        dadsim(&["train", "--config", "c.json", "--data", "d.csv", "--out", "base.ckpt"], d)?;
        Ok(Self { dir })
    }

    fn path(&self, f: &str) -> std::path::PathBuf {
        self.dir.path().join(f)
    }

    /// Base checkpoint and the full dataset in its scaled units.
    fn base(&self) -> Result<(ModelCheckpoint, TimeSeriesDataset), String> {
        let ckpt = ModelCheckpoint::load(self.path("base.ckpt")).map_err(|e| e.to_string())?;
        let raw = load_csv(self.path("d.csv"), 3, 1).map_err(|e| e.to_string())?;
        let ds = apply_scaler(&raw, &ckpt.scaler).map_err(|e| e.to_string())?;
        Ok((ckpt, ds))
    }
}

fn compounding_trend(exp: &Experiment) -> Outcome {
    let (ckpt, ds) = exp.base()?;
    let model = ckpt.model();
    let l = ckpt.config.history_length;
    let horizons = [1usize, 10, 60, 360, 1440];
    let first = ds.len() - HELD_OUT_DAYS * ds.steps_per_day() - 1;
    let last = ds.len() - 1 - 1440;
    let n = 20;
    let mut sums = [0.0; 5];
    for i in 0..n {
        let start = first + i * (last - first) / (n - 1);
        let ep = EpisodePair::build(&ds, start, l, 1440).map_err(|e| e.to_string())?;
        let sim = dadsim::simulator::SimState {
            window: ep.input.rows.clone(),
            t: start,
            start,
            horizon_elapsed: 0,
        };
        let traj = rollout_from(&model, sim, &ep.controls).map_err(|e| e.to_string())?;
        for (s, &h) in sums.iter_mut().zip(&horizons) {
            *s += dadsim::losses::mse_multi(
                &traj.states.slice_rows(0, h),
                &ep.targets.slice_rows(0, h),
            )
            .unwrap();
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let shown = horizons
        .iter()
        .zip(&means)
        .map(|(h, m)| format!("h={h}: {m:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || {
        format!("not non-decreasing over {n} episodes: {shown}")
    })?;
    Ok(format!("{n} episodes, {shown}"))
}

fn directional_improvement(exp: &Experiment) -> Outcome {
    let d = exp.dir.path();
    let t0 = Instant::now();
    dadsim(
        &["improve", "--config", "c.json", "--ckpt", "base.ckpt", "--data", "d.csv", "--out", "e4.ckpt"],
        d,
    )?;
    let epochs = ModelCheckpoint::load(exp.path("e4.ckpt"))
        .map_err(|e| e.to_string())?
        .meta
        .history
        .len();
    for m in ["base", "e4"] {
        dadsim(
            &[
                "evaluate", "--config", "c.json", "--ckpt", &format!("{m}.ckpt"), "--data", "d.csv",
                "--out", &format!("{m}.csv"),
            ],
            d,
        )?;
    }
    let read = |f: &str| read_episode_csv(exp.path(f)).map_err(|e| e.to_string());
    let (base, e4): (MetricsReport, MetricsReport) = (read("base.csv")?, read("e4.csv")?);
    ensure(base.episodes.len() == HELD_OUT_DAYS, || {
        format!("{} held-out episodes", base.episodes.len())
    })?;
    let s = dadsim::eval::compare(&base, &e4).map_err(|e| e.to_string())?;
    let o = s.overall();
    let detail = format!(
        "{epochs} epochs, {:.0}s; MSE {:.4} -> {:.4} ({:.1}%), DTW {:.2} -> {:.2} ({:.1}%), diverged {}",
        t0.elapsed().as_secs_f64(),
        o.mse_a,
        o.mse_b,
        o.pct_mse,
        o.dtw_a,
        o.dtw_b,
        o.pct_dtw,
        e4.overall.diverged
    );
    ensure(epochs >= 10 && o.pct_dtw >= 30.0 && o.pct_mse >= 20.0, || detail.clone())?;
    Ok(detail)
}

struct LossLog(Vec<(Vec<f64>, f64)>);

impl ImprovementObserver for LossLog {
    fn on_episode(&mut self, _: usize, ep: &EpisodePair, params: &ModelParams, loss: f64) {
        // Stash what the single-step oracle needs: the pre-update parameters'
        // flat vector, plus the episode's window and target.
        let mut v = flat(params);
        v.extend_from_slice(ep.input.rows.as_slice());
        v.extend_from_slice(ep.targets.row(0));
        self.0.push((v, loss));
    }
}

fn regime_reduction() -> Outcome {
    let plant = SyntheticPlantConfig {
        days: 3,
        seed: 5,
        ..Default::default()
    };
    let raw = gen_synthetic(&plant).map_err(|e| e.to_string())?;
    let scaler = dadsim::dataset::fit_scaler(&raw).unwrap();
    let ds = apply_scaler(&raw, &scaler).unwrap();
    let cfg = ModelConfig {
        input_dim: 4,
        state_dim: 3,
        hidden_size: 8,
        num_layers: 2,
        dropout: 0.1,
        history_length: 10,
        output_length: 1,
    };
    let base = ModelCheckpoint {
        config: cfg.clone(),
        params: init_params(&cfg, 1).unwrap(),
        scaler,
        optimizer: dadsim::checkpoint::OptimizerMeta::adam(1e-3),
        meta: dadsim::checkpoint::TrainingMeta::initial(1),
    };
    let regime = RegimeConfig {
        regime: Regime::E1,
        min_el: 1,
        max_el: 1,
        seed: 0,
        max_episodes: Some(40),
    };
    let icfg = ImprovementConfig {
        epochs: 1,
        test_horizon: 60,
        test_episodes: 1,
        validation_fraction: 0.4,
        ..ImprovementConfig::new(regime, LossConfig::mse())
    };
    let mut log = LossLog(Vec::new());
    improve_dad_observed(&base, &ds, &icfg, &mut log).map_err(|e| e.to_string())?;
    let n_params = base.params.num_params();
    let l = cfg.history_length;
    let mut worst: f64 = 0.0;
    for (v, loss) in &log.0 {
        let params = unflat(&base.params, &v[..n_params]);
        let window = Matrix::from_vec(l, 4, v[n_params..n_params + 4 * l].to_vec()).unwrap();
        let target = &v[n_params + 4 * l..];
        let pred = predict(&params, &cfg, &window).unwrap();
        let single = dadsim::losses::mse_single(&pred, target).unwrap();
        worst = worst.max((single - loss).abs());
    }
    ensure(log.0.len() == 40, || format!("{} episodes seen", log.0.len()))?;
    ensure(worst <= 1e-9, || format!("largest difference {worst:.2e}"))?;
    Ok(format!("40 one-step episodes, largest difference {worst:.1e}"))
}

fn determinism() -> Outcome {
    let config = r#"{
      "seed": 3,
      "plant": {"days": 5},
      "data": {"test_days": 1},
      "model": {"hidden_size": 8, "num_layers": 2, "history_length": 10},
      "train": {"epochs": 2, "samples_per_epoch": 256, "validation_samples": 128},
      "improve": {"epochs": 2, "max_episodes": 4, "min_el": 5, "max_el": 40,
                  "test_horizon": 120, "test_episodes": 2, "validation_fraction": 0.3}
    }"#;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        std::fs::write(d.join("c.json"), config).unwrap();
        dadsim(&["gen-data", "--config", "c.json", "--out", "d.csv"], d)?;
        dadsim(&["train", "--config", "c.json", "--data", "d.csv", "--out", "b.ckpt"], d)?;
        dadsim(
            &["improve", "--config", "c.json", "--ckpt", "b.ckpt", "--data", "d.csv", "--out", "i.ckpt"],
            d,
        )?;
        dadsim(
            &["evaluate", "--config", "c.json", "--ckpt", "i.ckpt", "--data", "d.csv", "--out", "r.csv"],
            d,
        )?;
        let files = ["d.csv", "b.ckpt", "i.ckpt", "r.csv", "r.csv.buckets.csv"];
        outputs.push(
            files
                .iter()
                .map(|f| std::fs::read(d.join(f)).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    ensure(outputs[0] == outputs[1], || "outputs differ between runs".into())?;
    Ok("dataset, both checkpoints and both reports identical across two runs".into())
}

fn sampler_properties() -> Outcome {
    let dist = HorizonDistribution::new(10, 480).unwrap();
    let mut r = dadsim::rng::seeded(42);
    let draws: Vec<usize> = (0..10_000).map(|_| sample_horizon(&dist, &mut r)).collect();
    ensure(draws.iter().all(|&t| (10..=480).contains(&t)), || "draw out of support".into())?;
    let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
    let n = 471.0f64;
    let sigma = ((n * n - 1.0) / 12.0).sqrt() / (draws.len() as f64).sqrt();
    ensure((mean - 245.0).abs() <= 3.0 * sigma, || {
        format!("mean {mean} vs 245 (3 sigma = {:.2})", 3.0 * sigma)
    })?;

    let mut checked = 0;
    let mut r = rng(9);
    for _ in 0..100 {
        let len = r.random_range(50..20_000);
        let l = r.random_range(1..40);
        let t = r.random_range(1..1500);
        if len < l + t + 1 {
            continue;
        }
        let ds = TimeSeriesDataset::new(Matrix::zeros(len, 2), 1, 1).unwrap();
        let e1 = RegimeConfig {
            regime: Regime::E1,
            min_el: t,
            max_el: t,
            seed: 0,
            max_episodes: None,
        };
        let eps = build_episodes(&ds, l, &e1).map_err(|e| e.to_string())?;
        let starts: Vec<usize> = eps.iter().map(|e| e.start_index).collect();
        let want: Vec<usize> = (0..(len - l) / t).map(|i| l - 1 + i * t).collect();
        ensure(starts == want, || format!("E1 len {len} l {l} T {t}: {starts:?}"))?;
        let e2 = RegimeConfig {
            regime: Regime::E2,
            seed: 17,
            ..e1.clone()
        };
        ensure(build_episodes(&ds, l, &e2).unwrap() == eps, || "E2 differs from E1".into())?;
        checked += 1;
    }
    let ds = TimeSeriesDataset::new(Matrix::zeros(10_080, 2), 1, 1).unwrap();
    let e1 = RegimeConfig {
        regime: Regime::E1,
        min_el: 1440,
        max_el: 1440,
        seed: 0,
        max_episodes: None,
    };
    let starts: Vec<usize> = build_episodes(&ds, 60, &e1)
        .unwrap()
        .iter()
        .map(|e| e.start_index)
        .collect();
    ensure(starts == [59, 1499, 2939, 4379, 5819, 7259], || format!("{starts:?}"))?;
    Ok(format!(
        "mean {mean:.2} (245 +/- {:.2}), E1 tiling and E1=E2 on {checked} layouts",
        3.0 * sigma
    ))
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let raw = gen_synthetic(&SyntheticPlantConfig {
        days: 2,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    write_csv(&raw, d.join("a.csv")).unwrap();
    let back = load_csv(d.join("a.csv"), 3, 1).map_err(|e| e.to_string())?;
    ensure(back.values() == raw.values(), || "CSV values changed".into())?;

    let cfg = ModelConfig::new(4, 3);
    let mut params = init_params(&cfg, 4).unwrap();
    params.head_b[0] = 0.1 + 0.2;
    params.head_b[1] = 1e-300;
    let ckpt = ModelCheckpoint {
        config: cfg.clone(),
        params,
        scaler: dadsim::dataset::fit_scaler(&raw).unwrap(),
        optimizer: dadsim::checkpoint::OptimizerMeta::adam(1e-3),
        meta: dadsim::checkpoint::TrainingMeta::initial(4),
    };
    ckpt.save(d.join("a.ckpt")).unwrap();
    let loaded = ModelCheckpoint::load(d.join("a.ckpt")).map_err(|e| e.to_string())?;
    ensure(loaded == ckpt, || "checkpoint changed on reload".into())?;
    loaded.save(d.join("b.ckpt")).unwrap();
    ensure(
        std::fs::read(d.join("a.ckpt")).unwrap() == std::fs::read(d.join("b.ckpt")).unwrap(),
        || "checkpoint bytes changed on re-save".into(),
    )?;

    let text = std::fs::read_to_string(d.join("a.ckpt")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["layers"][1]["w_recurrent"] = serde_json::json!([0.5]);
    let err = ModelCheckpoint::from_json(&v.to_string()).unwrap_err().to_string();
    ensure(err.contains("layers[1].w_recurrent"), || err.clone())?;
    let err = ModelCheckpoint::from_json(&text[..text.len() / 2]).unwrap_err().to_string();
    ensure(err.contains("truncated"), || err.clone())?;

    let csv = std::fs::read_to_string(d.join("a.csv")).unwrap();
    let corrupted = csv.replacen("\n5,", "\n5,abc", 1);
    std::fs::write(d.join("bad.csv"), corrupted).unwrap();
    let err = load_csv(d.join("bad.csv"), 3, 1).unwrap_err().to_string();
    ensure(err.contains("row 6") && err.contains("phosphate"), || err.clone())?;
    Ok("CSV and checkpoint bit-exact; corrupted inputs name layers[1].w_recurrent and row 6/phosphate".into())
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS [{n}] {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL [{n}] {name}: {detail}");
        }
    };
    report(1, "loss-oracle equivalence", loss_oracles());
    report(2, "gradient suite", gradient_suite());
    report(3, "hard-limit consistency", hard_limit());
    match Experiment::run() {
        Ok(exp) => {
            report(4, "compounding-error trend", compounding_trend(&exp));
            report(5, "directional improvement", directional_improvement(&exp));
        }
        Err(e) => {
            report(4, "compounding-error trend", Err(format!("setup failed: {e}")));
            report(5, "directional improvement", Err(format!("setup failed: {e}")));
        }
    }
    report(6, "regime reduction", regime_reduction());
    report(7, "determinism", determinism());
    report(8, "sampler properties", sampler_properties());
    report(9, "round trips", round_trips());
    println!(
        "acceptance: {} of 9 criteria passed in {:.0}s",
        9 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
