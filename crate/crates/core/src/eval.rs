//! Episode rollouts scored by multi-step MSE and classical DTW, with calendar buckets.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodePair, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::losses::{cost_matrix, dtw_classic, mse_multi};
use crate::simulator::{rollout_from, Predictor, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub start_index: usize,
    /// Calendar month (1-12) of the first predicted step.
    pub month: u32,
    pub horizon: usize,
    pub mse: f64,
    pub dtw: f64,
    pub diverged: bool,
}

/// Means over the non-divergent episodes of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: String,
    /// Episodes that entered the means.
    pub count: usize,
    pub diverged: usize,
    pub mean_mse: f64,
    pub mean_dtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub months: Vec<BucketMetrics>,
    pub seasons: Vec<BucketMetrics>,
    pub overall: BucketMetrics,
}

pub fn month_bucket(month: u32) -> String {
    format!("month-{month:02}")
}

/// Meteorological seasons of the northern hemisphere.
pub fn season_bucket(month: u32) -> &'static str {
    match month {
        12 | 1 | 2 => "winter",
        3..=5 => "spring",
        6..=8 => "summer",
        _ => "autumn",
    }
}

fn aggregate<'a>(name: String, eps: impl Iterator<Item = &'a EpisodeMetrics>) -> BucketMetrics {
    let (mut count, mut diverged, mut mse, mut dtw) = (0, 0, 0.0, 0.0);
    for e in eps {
        if e.diverged {
            diverged += 1;
        } else {
            count += 1;
            mse += e.mse;
            dtw += e.dtw;
        }
    }
    let mean = |s: f64| if count > 0 { s / count as f64 } else { f64::NAN };
    BucketMetrics {
        bucket: name,
        count,
        diverged,
        mean_mse: mean(mse),
        mean_dtw: mean(dtw),
    }
}

impl MetricsReport {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let mut months: BTreeMap<u32, Vec<&EpisodeMetrics>> = BTreeMap::new();
        let mut seasons: BTreeMap<&str, Vec<&EpisodeMetrics>> = BTreeMap::new();
        for e in &episodes {
            months.entry(e.month).or_default().push(e);
            seasons.entry(season_bucket(e.month)).or_default().push(e);
        }
        let months = months
            .into_iter()
            .map(|(m, v)| aggregate(month_bucket(m), v.into_iter()))
            .collect();
        let seasons = ["winter", "spring", "summer", "autumn"]
            .iter()
            .filter_map(|s| seasons.get(s).map(|v| aggregate(s.to_string(), v.iter().copied())))
            .collect();
        let overall = aggregate("overall".into(), episodes.iter());
        Self {
            episodes,
            months,
            seasons,
            overall,
        }
    }

    /// Month rows, then season rows, then the overall row.
    pub fn buckets(&self) -> impl Iterator<Item = &BucketMetrics> {
        self.months
            .iter()
            .chain(&self.seasons)
            .chain(std::iter::once(&self.overall))
    }
}

fn score_episode<P: Predictor + ?Sized>(
    model: &P,
    ds: &TimeSeriesDataset,
    e: &EpisodePair,
) -> Result<EpisodeMetrics> {
    let month = ds.timestamp(e.start_index + 1).month();
    let sim = SimState {
        window: e.input.rows.clone(),
        t: e.start_index,
        start: e.start_index,
        horizon_elapsed: 0,
    };
    let (mse, dtw, diverged) = match rollout_from(model, sim, &e.controls) {
        Ok(traj) => {
            let mse = mse_multi(&traj.states, &e.targets)?;
            let (dtw, _) = dtw_classic(&cost_matrix(&traj.states, &e.targets)?)?;
            (mse, dtw, false)
        }
        Err(Error::Divergence { .. }) => (f64::INFINITY, f64::INFINITY, true),
        Err(err) => return Err(err),
    };
    Ok(EpisodeMetrics {
        start_index: e.start_index,
        month,
        horizon: e.horizon(),
        mse,
        dtw,
        diverged,
    })
}

/// Rolls `model` over every episode under the recorded controls.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    ds: &TimeSeriesDataset,
    episodes: &[EpisodePair],
) -> Result<MetricsReport> {
    if model.state_dim() != ds.state_dim() {
        return Err(Error::Shape(format!(
            "model predicts {} states, dataset has {}",
            model.state_dim(),
            ds.state_dim()
        )));
    }
    let scored = episodes
        .par_iter()
        .map(|e| score_episode(model, ds, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_episodes(scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketComparison {
    pub bucket: String,
    pub mse_a: f64,
    pub mse_b: f64,
    pub delta_mse: f64,
    pub pct_mse: f64,
    pub dtw_a: f64,
    pub dtw_b: f64,
    pub delta_dtw: f64,
    pub pct_dtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub buckets: Vec<BucketComparison>,
}

impl ComparisonSummary {
    pub fn overall(&self) -> &BucketComparison {
        self.buckets.last().expect("comparison always has an overall row")
    }
}

fn percent(a: f64, b: f64) -> f64 {
    (a - b) / a * 100.0
}

/// Deltas `A - B` and percent improvements `(A - B) / A` per bucket.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<ComparisonSummary> {
    let key = |r: &MetricsReport| -> Vec<(usize, usize)> {
        r.episodes.iter().map(|e| (e.start_index, e.horizon)).collect()
    };
    if key(a) != key(b) {
        return Err(Error::Config(
            "reports cover different episode sets".into(),
        ));
    }
    let buckets = a
        .buckets()
        .zip(b.buckets())
        .map(|(x, y)| BucketComparison {
            bucket: x.bucket.clone(),
            mse_a: x.mean_mse,
            mse_b: y.mean_mse,
            delta_mse: x.mean_mse - y.mean_mse,
            pct_mse: percent(x.mean_mse, y.mean_mse),
            dtw_a: x.mean_dtw,
            dtw_b: y.mean_dtw,
            delta_dtw: x.mean_dtw - y.mean_dtw,
            pct_dtw: percent(x.mean_dtw, y.mean_dtw),
        })
        .collect();
    Ok(ComparisonSummary { buckets })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::BufWriter::new(file)))
}

fn finish(mut w: csv::Writer<std::io::BufWriter<std::fs::File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// `start_index,month,horizon,mse,dtw,diverged`
pub fn write_episode_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["start_index", "month", "horizon", "mse", "dtw", "diverged"])?;
    for e in &report.episodes {
        w.write_record([
            e.start_index.to_string(),
            e.month.to_string(),
            e.horizon.to_string(),
            e.mse.to_string(),
            e.dtw.to_string(),
            e.diverged.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn read_episode_csv(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let expected = ["start_index", "month", "horizon", "mse", "dtw", "diverged"];
    let header = r.headers()?.clone();
    if header.iter().ne(expected) {
        return Err(Error::Shape(format!(
            "{}: expected header {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut episodes = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> &str { rec.get(c).unwrap_or("") };
        let bad = |c: usize| Error::Parse {
            row: i + 1,
            column: expected[c].to_string(),
            message: format!("cannot parse {:?}", field(c)),
        };
        let month: u32 = field(1).parse().map_err(|_| bad(1))?;
        if !(1..=12).contains(&month) {
            return Err(bad(1));
        }
        episodes.push(EpisodeMetrics {
            start_index: field(0).parse().map_err(|_| bad(0))?,
            month,
            horizon: field(2).parse().map_err(|_| bad(2))?,
            mse: field(3).parse().map_err(|_| bad(3))?,
            dtw: field(4).parse().map_err(|_| bad(4))?,
            diverged: field(5).parse().map_err(|_| bad(5))?,
        });
    }
    Ok(MetricsReport::from_episodes(episodes))
}

/// `bucket,count,mean_mse,mean_dtw`
pub fn write_bucket_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["bucket", "count", "mean_mse", "mean_dtw"])?;
    for b in report.buckets() {
        w.write_record([
            b.bucket.clone(),
            b.count.to_string(),
            b.mean_mse.to_string(),
            b.mean_dtw.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Bucket means pivoted by model label: `bucket,metric,<label>...`.
pub fn write_heatmap_csv(
    labelled: &[(&str, &MetricsReport)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let Some((_, first)) = labelled.first() else {
        return Err(Error::Config("heatmap needs at least one report".into()));
    };
    let names: Vec<&str> = first.buckets().map(|b| b.bucket.as_str()).collect();
    for (label, r) in labelled {
        if r.buckets().map(|b| b.bucket.as_str()).ne(names.iter().copied()) {
            return Err(Error::Config(format!("report {label} has different buckets")));
        }
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["bucket".to_string(), "metric".to_string()];
    header.extend(labelled.iter().map(|(l, _)| l.to_string()));
    w.write_record(&header)?;
    let columns: Vec<Vec<&BucketMetrics>> =
        labelled.iter().map(|(_, r)| r.buckets().collect()).collect();
    for (i, name) in names.iter().enumerate() {
        for (metric, get) in [
            ("mse", (|b: &BucketMetrics| b.mean_mse) as fn(&BucketMetrics) -> f64),
            ("dtw", |b: &BucketMetrics| b.mean_dtw),
        ] {
            let mut rec = vec![name.to_string(), metric.to_string()];
            rec.extend(columns.iter().map(|c| get(c[i]).to_string()));
            w.write_record(&rec)?;
        }
    }
    finish(w, path)
}

/// `bucket,mse_a,mse_b,delta_mse,pct_mse,dtw_a,dtw_b,delta_dtw,pct_dtw`
pub fn write_comparison_csv(summary: &ComparisonSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record([
        "bucket", "mse_a", "mse_b", "delta_mse", "pct_mse", "dtw_a", "dtw_b", "delta_dtw",
        "pct_dtw",
    ])?;
    for b in &summary.buckets {
        w.write_record([
            b.bucket.clone(),
            b.mse_a.to_string(),
            b.mse_b.to_string(),
            b.delta_mse.to_string(),
            b.pct_mse.to_string(),
            b.dtw_a.to_string(),
            b.dtw_b.to_string(),
            b.delta_dtw.to_string(),
            b.pct_dtw.to_string(),
        ])?;
    }
    finish(w, path)
}
