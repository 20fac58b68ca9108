//! Revision metadata: the atom every later stage consumes.

use std::cmp::Ordering;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Second-precision UTC instant, serialized as `YYYY-MM-DDTHH:MM:SSZ`.
pub type Timestamp = DateTime<Utc>;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Parses an ISO-8601 Zulu timestamp as written in MediaWiki dumps.
///
/// Also accepts RFC 3339 with an explicit offset and bare dates
/// (`2016-12-31`, interpreted as the end of that day) so cutoffs can be
/// given loosely on the command line.
pub fn parse_timestamp(raw: &str) -> Result<Timestamp> {
    let raw = raw.trim();
    if let Ok(naive) = NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT) {
        return Ok(Utc.from_utc_datetime(&naive));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(truncate_to_second(dt.with_timezone(&Utc)));
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        let end = date.and_hms_opt(23, 59, 59).expect("valid time of day");
        return Ok(Utc.from_utc_datetime(&end));
    }
    Err(Error::Timestamp(raw.to_string()))
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn truncate_to_second(ts: Timestamp) -> Timestamp {
    Utc.timestamp_opt(ts.timestamp(), 0).single().unwrap_or(ts)
}

pub(crate) mod ts_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}

/// Metadata of one revision as found in a stub-meta-history dump.
///
/// `actor`, `comment` and `checksum` are `None` when the dump marks them
/// deleted or they are missing. An absent checksum never equals anything,
/// including another absent checksum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionMeta {
    pub wiki: String,
    pub page_id: u64,
    #[serde(rename = "ns")]
    pub namespace: i32,
    #[serde(rename = "title")]
    pub page_title: String,
    pub rev_id: u64,
    #[serde(with = "ts_serde")]
    pub timestamp: Timestamp,
    pub actor: Option<String>,
    pub comment: Option<String>,
    #[serde(rename = "sha1")]
    pub checksum: Option<String>,
}

impl RevisionMeta {
    /// Exact string equality on checksums; absent on either side is never a match.
    pub fn same_content(&self, other: &RevisionMeta) -> bool {
        matches!((&self.checksum, &other.checksum), (Some(a), Some(b)) if a == b)
    }

    fn page_order(&self, other: &RevisionMeta) -> Ordering {
        self.timestamp
            .cmp(&other.timestamp)
            .then(self.rev_id.cmp(&other.rev_id))
    }
}

/// All revisions of one page, ordered by `(timestamp, rev_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageHistory {
    pub wiki: String,
    pub page_id: u64,
    pub namespace: i32,
    pub title: String,
    revisions: Vec<RevisionMeta>,
}

impl PageHistory {
    /// Builds a history, sorting revisions into page order.
    ///
    /// Fails if any revision belongs to a different page or if two
    /// revisions share a rev_id.
    pub fn new(
        wiki: impl Into<String>,
        page_id: u64,
        namespace: i32,
        title: impl Into<String>,
        mut revisions: Vec<RevisionMeta>,
    ) -> Result<Self> {
        if let Some(stray) = revisions.iter().find(|r| r.page_id != page_id) {
            return Err(Error::Data(format!(
                "revision {} belongs to page {}, not page {}",
                stray.rev_id, stray.page_id, page_id
            )));
        }
        revisions.sort_by(RevisionMeta::page_order);
        if let Some(pair) = revisions.windows(2).find(|w| w[0].rev_id == w[1].rev_id) {
            return Err(Error::DuplicateRevision(pair[0].rev_id));
        }
        Ok(Self {
            wiki: wiki.into(),
            page_id,
            namespace,
            title: title.into(),
            revisions,
        })
    }

    pub fn revisions(&self) -> &[RevisionMeta] {
        &self.revisions
    }

    pub fn into_revisions(self) -> Vec<RevisionMeta> {
        self.revisions
    }

    pub fn len(&self) -> usize {
        self.revisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revisions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rev(rev_id: u64, ts: &str) -> RevisionMeta {
        RevisionMeta {
            wiki: "en".into(),
            page_id: 1,
            namespace: 0,
            page_title: "P".into(),
            rev_id,
            timestamp: parse_timestamp(ts).unwrap(),
            actor: Some("A".into()),
            comment: None,
            checksum: Some(format!("c{rev_id}")),
        }
    }

    #[test]
    fn sorts_by_timestamp_then_rev_id() {
        let page = PageHistory::new(
            "en",
            1,
            0,
            "P",
            vec![
                rev(3, "2009-01-01T00:00:00Z"),
                rev(2, "2009-01-01T00:00:00Z"),
                rev(1, "2010-01-01T00:00:00Z"),
            ],
        )
        .unwrap();
        let ids: Vec<u64> = page.revisions().iter().map(|r| r.rev_id).collect();
        assert_eq!(ids, vec![2, 3, 1]);
    }

    #[test]
    fn rejects_duplicate_rev_ids() {
        let err = PageHistory::new(
            "en",
            1,
            0,
            "P",
            vec![rev(2, "2009-01-01T00:00:00Z"), rev(2, "2009-01-01T00:00:00Z")],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateRevision(2)));
    }

    #[test]
    fn absent_checksums_never_match() {
        let mut a = rev(1, "2009-01-01T00:00:00Z");
        let mut b = rev(2, "2009-01-02T00:00:00Z");
        a.checksum = None;
        b.checksum = None;
        assert!(!a.same_content(&b));
        b.checksum = Some("c1".into());
        assert!(!a.same_content(&b));
    }

    #[test]
    fn timestamp_formats() {
        let ts = parse_timestamp("2009-11-15T00:00:00Z").unwrap();
        assert_eq!(format_timestamp(&ts), "2009-11-15T00:00:00Z");
        let end = parse_timestamp("2016-12-31").unwrap();
        assert_eq!(format_timestamp(&end), "2016-12-31T23:59:59Z");
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn jsonl_field_names() {
        let r = rev(7, "2009-02-15T00:00:00Z");
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["wiki", "page_id", "ns", "title", "rev_id", "timestamp", "actor", "comment", "sha1"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["comment"].is_null());
    }
}
