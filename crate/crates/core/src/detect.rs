//! Identity-revert detection by checksum matching, reduction of each event
//! to its closest directed pair, and the bot-bot filter.

use std::collections::HashMap;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::revision::{ts_serde, PageHistory, RevisionMeta, Timestamp};
use crate::roster::{normalize_username, BotRoster};

pub const DEFAULT_RADIUS: usize = 15;

/// One identity revert: `reverting` restores the content of `reverted_to`,
/// undoing every revision in `reverted`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevertEvent {
    pub wiki: String,
    pub page_id: u64,
    pub namespace: i32,
    pub reverting: RevisionMeta,
    pub reverted: Vec<RevisionMeta>,
    pub reverted_to: RevisionMeta,
}

/// Finds identity reverts in one page.
///
/// For each revision, the nearest earlier revision within `radius`
/// positions carrying the same present checksum is its reverted-to state;
/// everything in between was reverted. A revision identical to its
/// immediate predecessor is a null edit and produces nothing.
pub fn detect_reverts(page: &PageHistory, radius: usize) -> Vec<RevertEvent> {
    assert!(radius >= 1, "revert radius must be at least 1");
    let revisions = page.revisions();
    let mut last_seen: HashMap<&str, usize> = HashMap::new();
    let mut events = Vec::new();
    for (i, rev) in revisions.iter().enumerate() {
        let Some(checksum) = rev.checksum.as_deref() else {
            continue;
        };
        if let Some(&j) = last_seen.get(checksum) {
            if j + 1 < i && i - j <= radius {
                events.push(RevertEvent {
                    wiki: page.wiki.clone(),
                    page_id: page.page_id,
                    namespace: page.namespace,
                    reverting: rev.clone(),
                    reverted: revisions[j + 1..i].to_vec(),
                    reverted_to: revisions[j].clone(),
                });
            }
        }
        last_seen.insert(checksum, i);
    }
    events
}

/// A revert reduced to the reverting revision and the latest revision it undid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevertPair {
    pub wiki: String,
    pub page_id: u64,
    pub namespace: i32,
    pub title: String,
    pub reverting_actor: Option<String>,
    pub reverted_actor: Option<String>,
    pub reverting_rev_id: u64,
    pub reverted_rev_id: u64,
    pub reverted_to_rev_id: u64,
    #[serde(with = "ts_serde")]
    pub reverting_time: Timestamp,
    #[serde(with = "ts_serde")]
    pub reverted_time: Timestamp,
    pub comment: Option<String>,
}

pub fn closest_pair(event: &RevertEvent) -> RevertPair {
    let closest = event
        .reverted
        .last()
        .expect("a revert event always undoes at least one revision");
    RevertPair {
        wiki: event.wiki.clone(),
        page_id: event.page_id,
        namespace: event.namespace,
        title: event.reverting.page_title.clone(),
        reverting_actor: event.reverting.actor.clone(),
        reverted_actor: closest.actor.clone(),
        reverting_rev_id: event.reverting.rev_id,
        reverted_rev_id: closest.rev_id,
        reverted_to_rev_id: event.reverted_to.rev_id,
        reverting_time: event.reverting.timestamp,
        reverted_time: closest.timestamp,
        comment: event.reverting.comment.clone(),
    }
}

/// The unit of analysis: one bot reverting another bot's closest edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedBotRevert {
    pub wiki: String,
    pub page_id: u64,
    pub namespace: i32,
    pub title: String,
    pub reverting_bot: String,
    pub reverted_bot: String,
    pub reverting_rev_id: u64,
    pub reverted_rev_id: u64,
    pub reverted_to_rev_id: u64,
    #[serde(with = "ts_serde")]
    pub reverting_time: Timestamp,
    #[serde(with = "ts_serde")]
    pub reverted_time: Timestamp,
    pub comment: Option<String>,
    /// Seconds between the reverted and the reverting edit.
    pub time_to_revert: i64,
    pub year: i32,
}

impl DirectedBotRevert {
    pub fn time_to_revert_days(&self) -> f64 {
        self.time_to_revert as f64 / 86_400.0
    }

    /// The unordered bot pair, lexicographically ordered.
    pub fn unordered_pair(&self) -> (&str, &str) {
        let (a, b) = (self.reverting_bot.as_str(), self.reverted_bot.as_str());
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

impl RevertPair {
    /// Projects onto a bot-bot record when both actors are present.
    pub fn to_bot_revert(&self) -> Option<DirectedBotRevert> {
        let reverting_bot = self.reverting_actor.clone()?;
        let reverted_bot = self.reverted_actor.clone()?;
        Some(DirectedBotRevert {
            wiki: self.wiki.clone(),
            page_id: self.page_id,
            namespace: self.namespace,
            title: self.title.clone(),
            reverting_bot,
            reverted_bot,
            reverting_rev_id: self.reverting_rev_id,
            reverted_rev_id: self.reverted_rev_id,
            reverted_to_rev_id: self.reverted_to_rev_id,
            reverting_time: self.reverting_time,
            reverted_time: self.reverted_time,
            comment: self.comment.clone(),
            time_to_revert: (self.reverting_time - self.reverted_time).num_seconds(),
            year: self.reverting_time.year(),
        })
    }
}

/// Keeps pairs where both actors are roster bots. Self-reverts are
/// dropped unless `include_self` is set.
pub fn filter_bot_bot<'a, I>(pairs: I, roster: &BotRoster, include_self: bool) -> Vec<DirectedBotRevert>
where
    I: IntoIterator<Item = &'a RevertPair>,
{
    pairs
        .into_iter()
        .filter(|pair| {
            let (Some(reverting), Some(reverted)) = (&pair.reverting_actor, &pair.reverted_actor) else {
                return false;
            };
            roster.is_bot(&pair.wiki, reverting)
                && roster.is_bot(&pair.wiki, reverted)
                && (include_self || normalize_username(reverting) != normalize_username(reverted))
        })
        .filter_map(RevertPair::to_bot_revert)
        .collect()
}

/// Detection plus closest-pair reduction for one page.
pub fn page_pairs(page: &PageHistory, radius: usize) -> Vec<RevertPair> {
    detect_reverts(page, radius).iter().map(closest_pair).collect()
}
