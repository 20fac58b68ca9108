//! Conflict signals over bot-bot reverts: yearly counts, time-to-revert
//! summaries and density curves, and per-page bot-pair reciprocation.
//!
//! Every aggregation here is order-insensitive; results are keyed and
//! sorted so identical inputs in any order give identical outputs.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{ClassifiedRevert, Label};
use crate::detect::DirectedBotRevert;
use crate::error::{Error, Result};
use crate::revision::{ts_serde, Timestamp};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
/// Shift applied before the log transform: one second, in days.
pub const LOG_EPSILON_DAYS: f64 = 1.0 / SECONDS_PER_DAY;
pub const KDE_GRID_POINTS: usize = 512;

/// Anything carrying a bot-bot revert, optionally with a class label.
pub trait RevertRecord {
    fn revert(&self) -> &DirectedBotRevert;

    fn label(&self) -> Option<Label> {
        None
    }
}

impl RevertRecord for DirectedBotRevert {
    fn revert(&self) -> &DirectedBotRevert {
        self
    }
}

impl<R: RevertRecord> RevertRecord for &R {
    fn revert(&self) -> &DirectedBotRevert {
        (*self).revert()
    }

    fn label(&self) -> Option<Label> {
        (*self).label()
    }
}

impl RevertRecord for ClassifiedRevert {
    fn revert(&self) -> &DirectedBotRevert {
        &self.revert
    }

    fn label(&self) -> Option<Label> {
        Some(self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct YearlyCount {
    pub wiki: String,
    pub year: i32,
    pub count: usize,
}

/// Reverts per (wiki, year of the reverting edit), optionally restricted to
/// one namespace.
pub fn yearly_counts<R: RevertRecord>(reverts: &[R], namespace: Option<i32>) -> Vec<YearlyCount> {
    let mut tally: BTreeMap<(String, i32), usize> = BTreeMap::new();
    for r in reverts.iter().map(RevertRecord::revert) {
        if namespace.is_some_and(|ns| ns != r.namespace) {
            continue;
        }
        *tally.entry((r.wiki.clone(), r.year)).or_default() += 1;
    }
    tally
        .into_iter()
        .map(|((wiki, year), count)| YearlyCount { wiki, year, count })
        .collect()
}

/// Which keys besides the wiki to group summaries by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupBy {
    pub year: bool,
    pub class: bool,
}

impl FromStr for GroupBy {
    type Err = Error;

    /// Parses `wiki`, `wiki,year`, `wiki,class`, `wiki,year,class`.
    fn from_str(s: &str) -> Result<Self> {
        let mut group = GroupBy::default();
        for key in s.split(',').map(str::trim).filter(|k| !k.is_empty()) {
            match key {
                "wiki" => {}
                "year" => group.year = true,
                "class" => group.class = true,
                other => return Err(Error::Config(format!("cannot group by {other:?}"))),
            }
        }
        Ok(group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TtrSummary {
    pub wiki: String,
    pub year: Option<i32>,
    pub class: Option<Label>,
    pub count: usize,
    pub mean_days: f64,
    pub median_days: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

type SummaryKey = (String, Option<i32>, Option<Label>);

/// Count, mean, median and a normal-approximation 95% interval of the
/// mean, in days, per group.
pub fn ttr_summary<R: RevertRecord>(reverts: &[R], group_by: GroupBy) -> Vec<TtrSummary> {
    let mut groups: BTreeMap<SummaryKey, Vec<f64>> = BTreeMap::new();
    for record in reverts {
        let r = record.revert();
        let key = (
            r.wiki.clone(),
            group_by.year.then_some(r.year),
            if group_by.class { record.label() } else { None },
        );
        groups.entry(key).or_default().push(r.time_to_revert_days());
    }
    groups
        .into_iter()
        .map(|((wiki, year, class), mut days)| {
            let stats = describe(&mut days);
            TtrSummary {
                wiki,
                year,
                class,
                count: days.len(),
                mean_days: stats.mean,
                median_days: stats.median,
                ci95_low: stats.mean - stats.half_width,
                ci95_high: stats.mean + stats.half_width,
            }
        })
        .collect()
}

struct Described {
    mean: f64,
    median: f64,
    half_width: f64,
}

fn describe(values: &mut [f64]) -> Described {
    let n = values.len();
    debug_assert!(n > 0);
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    let half_width = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Described {
        mean,
        median,
        half_width,
    }
}

/// A Gaussian density estimate over log10(days).
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }

    pub fn grid_step(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64
    }

    /// Grid positions of interior local maxima, plateaus reported once.
    pub fn local_maxima(&self) -> Vec<f64> {
        let d = &self.density;
        (1..d.len().saturating_sub(1))
            .filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1] && !(d[i] == d[i + 1] && plateau_rises(d, i)))
            .map(|i| self.grid[i])
            .collect()
    }

    /// Grid position of the global maximum.
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("grid is never empty");
        self.grid[i]
    }
}

// True when a flat run starting at i eventually climbs again (not a peak).
fn plateau_rises(d: &[f64], i: usize) -> bool {
    let mut j = i;
    while j + 1 < d.len() && d[j + 1] == d[i] {
        j += 1;
    }
    j + 1 < d.len() && d[j + 1] > d[i]
}

pub fn log_days(seconds: i64) -> f64 {
    (seconds as f64 / SECONDS_PER_DAY + LOG_EPSILON_DAYS).log10()
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR/1.34) * n^(-1/5)`, with the
/// usual fallbacks when the spread estimate is zero.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    // Summing in sorted order keeps the result independent of input order.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let mut spread = sd.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = if sd > 0.0 {
            sd
        } else if sorted[0] != 0.0 {
            sorted[0].abs()
        } else {
            1.0
        };
    }
    0.9 * spread * n.powf(-0.2)
}

// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Gaussian KDE of already-transformed values on a 512-point grid spanning
/// the data plus three bandwidths on each side.
pub fn kde(values: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if sorted.is_empty() || distinct < 2 {
        return Err(Error::TooFewDistinct(if sorted.is_empty() { 0 } else { distinct }));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Config(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(&sorted),
    };
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .par_iter()
        .map(|&x| {
            norm * sorted
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
    })
}

/// KDE of time to revert on log10(days + one second).
pub fn ttr_kde<R: RevertRecord>(reverts: &[R], bandwidth: Option<f64>) -> Result<KdeCurve> {
    let values: Vec<f64> = reverts.iter().map(|r| log_days(r.revert().time_to_revert)).collect();
    kde(&values, bandwidth)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairPageStat {
    pub wiki: String,
    pub page_id: u64,
    pub bot_a: String,
    pub bot_b: String,
    pub revert_count: usize,
    #[serde(with = "ts_serde")]
    pub first_time: Timestamp,
    #[serde(with = "ts_serde")]
    pub last_time: Timestamp,
    /// Seconds between the first and last revert of the group.
    pub duration: i64,
}

pub type PairKey = (String, u64, String, String);

pub fn pair_key(r: &DirectedBotRevert) -> PairKey {
    let (a, b) = r.unordered_pair();
    (r.wiki.clone(), r.page_id, a.to_string(), b.to_string())
}

/// Groups reverts by (wiki, page, unordered bot pair).
pub fn pair_page_stats<R: RevertRecord>(reverts: &[R]) -> Vec<PairPageStat> {
    let mut groups: BTreeMap<PairKey, (usize, Timestamp, Timestamp)> = BTreeMap::new();
    for r in reverts.iter().map(RevertRecord::revert) {
        let t = r.reverting_time;
        groups
            .entry(pair_key(r))
            .and_modify(|(count, first, last)| {
                *count += 1;
                *first = (*first).min(t);
                *last = (*last).max(t);
            })
            .or_insert((1, t, t));
    }
    groups
        .into_iter()
        .map(|((wiki, page_id, bot_a, bot_b), (revert_count, first_time, last_time))| PairPageStat {
            wiki,
            page_id,
            bot_a,
            bot_b,
            revert_count,
            first_time,
            last_time,
            duration: (last_time - first_time).num_seconds(),
        })
        .collect()
}

/// Number of pair-page groups per revert count.
pub fn pair_histogram(stats: &[PairPageStat]) -> BTreeMap<usize, usize> {
    let mut histogram = BTreeMap::new();
    for s in stats {
        *histogram.entry(s.revert_count).or_default() += 1;
    }
    histogram
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReciprocationShares {
    pub once_share: f64,
    pub twice_share: f64,
    pub more_share: f64,
}

/// Shares of reverts (not groups) in groups of exactly one, exactly two, and
/// more than two reverts.
pub fn reciprocation_shares(histogram: &BTreeMap<usize, usize>) -> Result<ReciprocationShares> {
    let total: usize = histogram.iter().map(|(k, n)| k * n).sum();
    if total == 0 {
        return Err(Error::Data("reciprocation shares need a non-empty histogram".into()));
    }
    let weight = |pred: fn(usize) -> bool| {
        histogram
            .iter()
            .filter(|(k, _)| pred(**k))
            .map(|(k, n)| k * n)
            .sum::<usize>() as f64
            / total as f64
    };
    Ok(ReciprocationShares {
        once_share: weight(|k| k == 1),
        twice_share: weight(|k| k == 2),
        more_share: weight(|k| k > 2),
    })
}

/// Reads `wiki<TAB>bot_edit_count` rows.
pub fn read_bot_edit_counts<R: BufRead>(input: R) -> Result<BTreeMap<String, u64>> {
    let mut counts = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (wiki, count) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("bot edit counts line {}: expected wiki<TAB>count", i + 1)))?;
        let count = count
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("bot edit counts line {}: bad count {count:?}", i + 1)))?;
        counts.insert(wiki.trim().to_string(), count);
    }
    Ok(counts)
}

/// Bot-bot reverts as a fraction of all bot edits, for wikis with a known total.
pub fn bot_edit_share<R: RevertRecord>(reverts: &[R], bot_edits: &BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let mut per_wiki: BTreeMap<&str, usize> = BTreeMap::new();
    for r in reverts {
        *per_wiki.entry(r.revert().wiki.as_str()).or_default() += 1;
    }
    bot_edits
        .iter()
        .filter(|(_, &total)| total > 0)
        .map(|(wiki, &total)| {
            let n = per_wiki.get(wiki.as_str()).copied().unwrap_or(0);
            (wiki.clone(), n as f64 / total as f64)
        })
        .collect()
}
