use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{make_window, TimeSeriesDataset, WindowSample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// One training or evaluation episode: a real history window followed by
/// `T` ground-truth future states and the controls applied at those steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePair {
    pub input: WindowSample,
    pub targets: Matrix,
    pub controls: Matrix,
    pub start_index: usize,
}

impl EpisodePair {
    pub fn horizon(&self) -> usize {
        self.targets.rows()
    }

    pub fn build(ds: &TimeSeriesDataset, start: usize, l: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("episode horizon must be at least 1".into()));
        }
        if start + horizon >= ds.len() {
            return Err(Error::OutOfRange(format!(
                "episode from {start} with horizon {horizon} exceeds {} rows",
                ds.len()
            )));
        }
        let input = make_window(ds, start, l)?;
        let future = ds.values().slice_rows(start + 1, start + 1 + horizon);
        let d_s = ds.state_dim();
        Ok(Self {
            input,
            targets: future.slice_cols(0, d_s),
            controls: future.slice_cols(d_s, ds.width()),
            start_index: start,
        })
    }
}

/// Uniform distribution over episode lengths `min_el..=max_el`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonDistribution {
    pub min_el: usize,
    pub max_el: usize,
}

impl HorizonDistribution {
    pub fn new(min_el: usize, max_el: usize) -> Result<Self> {
        if min_el == 0 || min_el > max_el {
            return Err(Error::Config(format!(
                "horizon support needs 1 <= min_el <= max_el, got {min_el}..{max_el}"
            )));
        }
        Ok(Self { min_el, max_el })
    }

    pub fn mean(&self) -> f64 {
        (self.min_el + self.max_el) as f64 / 2.0
    }
}

/// Draws a horizon uniformly from the support, bounds included.
pub fn sample_horizon(dist: &HorizonDistribution, rng: &mut rng::Rng) -> usize {
    rng.random_range(dist.min_el..=dist.max_el)
}

/// Episode sampling regimes, from fully deterministic to fully random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Constant-length consecutive episodes.
    E1,
    /// Random-length consecutive episodes.
    E2,
    /// Random start, constant length.
    E3,
    /// Random start, random length.
    E4,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Regime::E1),
            "E2" => Ok(Regime::E2),
            "E3" => Ok(Regime::E3),
            "E4" => Ok(Regime::E4),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub min_el: usize,
    pub max_el: usize,
    pub seed: u64,
    /// Caps the episode count. E1/E2 keep the first episodes; E3/E4 draw this many.
    /// When absent, E3/E4 draw as many episodes as would tile the dataset on average.
    #[serde(default)]
    pub max_episodes: Option<usize>,
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_el == 0 || self.min_el > self.max_el {
            return Err(Error::Config(format!(
                "episode lengths need 1 <= min_el <= max_el, got {}..{}",
                self.min_el, self.max_el
            )));
        }
        if matches!(self.regime, Regime::E1 | Regime::E3) && self.min_el != self.max_el {
            return Err(Error::Config(format!(
                "{} uses constant-length episodes but min_el {} != max_el {}",
                self.regime, self.min_el, self.max_el
            )));
        }
        if self.max_episodes == Some(0) {
            return Err(Error::Config("max_episodes must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the episode list for a regime. Pure in `(ds, l, rc)`.
pub fn build_episodes(
    ds: &TimeSeriesDataset,
    l: usize,
    rc: &RegimeConfig,
) -> Result<Vec<EpisodePair>> {
    rc.validate()?;
    if l == 0 {
        return Err(Error::Config("history length must be at least 1".into()));
    }
    let first = l - 1;
    // Largest horizon an episode anchored at `first` can have.
    let room = ds.len().saturating_sub(l);
    if room < rc.min_el {
        return Err(Error::Config(format!(
            "dataset of {} rows is too short for history {l} plus an episode of {}",
            ds.len(),
            rc.min_el
        )));
    }
    let mut rng = rng::seeded(rng::derive(rc.seed, rng::streams::EPISODES));
    let limit = rc.max_episodes.unwrap_or(usize::MAX);
    let max_el = rc.max_el.min(room);
    let lengths = HorizonDistribution::new(rc.min_el, rc.max_el)?;
    let clipped = HorizonDistribution::new(rc.min_el, max_el)?;

    let mut spans: Vec<(usize, usize)> = Vec::new();
    match rc.regime {
        Regime::E1 | Regime::E2 => {
            let mut start = first;
            while spans.len() < limit {
                let len = if rc.regime == Regime::E1 {
                    rc.min_el
                } else {
                    sample_horizon(&lengths, &mut rng)
                };
                if start + len >= ds.len() {
                    break;
                }
                spans.push((start, len));
                start += len;
            }
        }
        Regime::E3 | Regime::E4 => {
            let count = rc
                .max_episodes
                .unwrap_or_else(|| ((room as f64 / clipped.mean()).floor() as usize).max(1));
            for _ in 0..count {
                let len = if rc.regime == Regime::E3 {
                    rc.min_el
                } else {
                    sample_horizon(&clipped, &mut rng)
                };
                let last_start = ds.len() - 1 - len;
                let start = rng.random_range(first..=last_start);
                spans.push((start, len));
            }
        }
    }
    spans
        .into_iter()
        .map(|(start, len)| EpisodePair::build(ds, start, l, len))
        .collect()
}

/// Episodes whose targets cover whole calendar days, one per day starting at `first_day`.
pub fn day_aligned_episodes(
    ds: &TimeSeriesDataset,
    l: usize,
    first_day: usize,
    days: usize,
    horizon: usize,
) -> Result<Vec<EpisodePair>> {
    let per_day = ds.steps_per_day();
    (first_day..first_day + days)
        .map(|day| {
            let start = (day * per_day).checked_sub(1).ok_or_else(|| {
                Error::OutOfRange("day 0 has no history before it".into())
            })?;
            EpisodePair::build(ds, start, l, horizon)
        })
        .collect()
}
