//! The suspected-botfight screen: reverts that are both fast and part of a
//! reciprocated bot pair on the same page.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::classify::{ClassifiedRevert, Label};
use crate::error::{Error, Result};
use crate::metrics::{pair_key, PairKey};

pub const DEFAULT_TTR_DAYS: i64 = 180;
pub const DEFAULT_MIN_PAIR_REVERTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScreenConfig {
    /// Keep reverts strictly faster than this many seconds.
    pub ttr_threshold: i64,
    pub min_pair_reverts: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            ttr_threshold: DEFAULT_TTR_DAYS * 86_400,
            min_pair_reverts: DEFAULT_MIN_PAIR_REVERTS,
        }
    }
}

impl ScreenConfig {
    pub fn new(ttr_threshold_days: f64, min_pair_reverts: usize) -> Result<Self> {
        let config = Self {
            ttr_threshold: (ttr_threshold_days * 86_400.0).round() as i64,
            min_pair_reverts,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ttr_threshold <= 0 {
            return Err(Error::Config("time-to-revert threshold must be positive".into()));
        }
        if self.min_pair_reverts < 2 {
            return Err(Error::Config("a reciprocated pair needs at least 2 reverts".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScreenResult {
    pub suspected: Vec<ClassifiedRevert>,
    /// Count per (wiki, label) over `suspected`.
    pub counts: BTreeMap<(String, Label), usize>,
}

impl ScreenResult {
    pub fn count(&self, wiki: &str, label: Label) -> usize {
        self.counts.get(&(wiki.to_string(), label)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Screened reverts whose label does not explain them as routine work.
    pub fn conflict_indicative(&self) -> impl Iterator<Item = &ClassifiedRevert> {
        self.suspected.iter().filter(|c| c.label.is_conflict_indicative())
    }
}

/// Keeps reverts faster than the threshold whose (wiki, page, unordered
/// pair) group holds at least `min_pair_reverts` reverts. Input order is
/// preserved.
pub fn screen(classified: &[ClassifiedRevert], config: &ScreenConfig) -> Result<ScreenResult> {
    config.validate()?;
    let group_sizes = classified
        .par_iter()
        .fold(HashMap::<PairKey, usize>::new, |mut acc, c| {
            *acc.entry(pair_key(&c.revert)).or_default() += 1;
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, n) in b {
                *a.entry(k).or_default() += n;
            }
            a
        });
    let suspected: Vec<ClassifiedRevert> = classified
        .par_iter()
        .filter(|c| {
            c.revert.time_to_revert < config.ttr_threshold
                && group_sizes[&pair_key(&c.revert)] >= config.min_pair_reverts
        })
        .cloned()
        .collect();
    let mut counts = BTreeMap::new();
    for c in &suspected {
        *counts.entry((c.revert.wiki.clone(), c.label)).or_default() += 1;
    }
    Ok(ScreenResult { suspected, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{classify, RuleSet};
    use crate::detect::DirectedBotRevert;
    use crate::revision::parse_timestamp;

    fn revert(page: u64, a: &str, b: &str, ttr_secs: i64) -> ClassifiedRevert {
        let t = parse_timestamp("2014-02-02T00:00:00Z").unwrap();
        classify(
            DirectedBotRevert {
                wiki: "en".into(),
                page_id: page,
                namespace: 0,
                title: "P".into(),
                reverting_bot: a.into(),
                reverted_bot: b.into(),
                reverting_rev_id: 2,
                reverted_rev_id: 1,
                reverted_to_rev_id: 0,
                reverting_time: t,
                reverted_time: t - chrono::Duration::seconds(ttr_secs),
                comment: None,
                time_to_revert: ttr_secs,
                year: 2014,
            },
            &RuleSet::empty(),
        )
    }

    #[test]
    fn unreciprocated_fast_revert_excluded() {
        let out = screen(&[revert(1, "A", "B", 60)], &ScreenConfig::default()).unwrap();
        assert!(out.suspected.is_empty());
        assert_eq!(out.total(), 0);
    }

    #[test]
    fn reciprocated_pair_kept() {
        let input = [revert(1, "A", "B", 2 * 86_400), revert(1, "B", "A", 2 * 86_400)];
        let out = screen(&input, &ScreenConfig::default()).unwrap();
        assert_eq!(out.suspected.len(), 2);
        assert_eq!(out.count("en", Label::NotClassified), 2);
    }

    #[test]
    fn slow_reverts_excluded_even_when_reciprocated() {
        let input = [revert(1, "A", "B", 200 * 86_400), revert(1, "B", "A", 2 * 86_400)];
        let out = screen(&input, &ScreenConfig::default()).unwrap();
        assert_eq!(out.suspected.len(), 1);
        // Exactly at the threshold is not "less than".
        let at = [revert(1, "A", "B", 180 * 86_400), revert(1, "B", "A", 180 * 86_400)];
        assert!(screen(&at, &ScreenConfig::default()).unwrap().suspected.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(ScreenConfig::new(0.0, 2).is_err());
        assert!(ScreenConfig::new(180.0, 1).is_err());
        assert_eq!(ScreenConfig::new(180.0, 2).unwrap(), ScreenConfig::default());
    }
}
