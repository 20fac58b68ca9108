//! Bot account roster merged from user-group, former-group and category
//! sources, plus the name-substring baseline used only for comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CurrentGroup,
    FormerGroup,
    Category,
    NameHeuristic,
}

impl Source {
    pub const ALL: [Source; 4] = [
        Source::CurrentGroup,
        Source::FormerGroup,
        Source::Category,
        Source::NameHeuristic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::CurrentGroup => "current_group",
            Source::FormerGroup => "former_group",
            Source::Category => "category",
            Source::NameHeuristic => "name_heuristic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown roster source {s:?}")))
    }
}

/// MediaWiki-style username normalization: NFC, underscores as spaces,
/// surrounding whitespace trimmed, first code point uppercased.
pub fn normalize_username(raw: &str) -> String {
    let nfc: String = raw.nfc().collect::<String>().replace('_', " ");
    let trimmed = nfc.trim();
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// The comparative baseline: does the case-folded name contain "bot"?
pub fn name_heuristic(username: &str) -> bool {
    username.to_lowercase().contains("bot")
}

pub fn is_ip(actor: &str) -> bool {
    actor.trim().parse::<IpAddr>().is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotAccount {
    pub wiki: String,
    pub username: String,
    pub sources: BTreeSet<Source>,
}

/// One `(wiki, username)` row of a source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRow {
    pub wiki: String,
    pub username: String,
    pub source: Source,
}

/// Reads a `wiki<TAB>username[<TAB>source]` file.
///
/// Rows without a source column take `default_source`. Rows with an empty
/// username are skipped and counted in the returned tally.
pub fn read_source_rows<R: BufRead>(input: R, default_source: Option<Source>) -> Result<(Vec<SourceRow>, u64)> {
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let wiki = cols.next().unwrap_or("").trim().to_string();
        let username = cols.next().unwrap_or("").to_string();
        let source = match cols.next().map(str::trim).filter(|s| !s.is_empty()) {
            Some(s) => s.parse()?,
            None => default_source.ok_or_else(|| {
                Error::Data(format!("line {}: no source column and no default source", lineno + 1))
            })?,
        };
        if username.trim().is_empty() || wiki.is_empty() {
            skipped += 1;
            continue;
        }
        rows.push(SourceRow { wiki, username, source });
    }
    Ok((rows, skipped))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BotRoster {
    accounts: BTreeMap<(String, String), BotAccount>,
    source_counts: BTreeMap<Source, usize>,
    skipped_rows: u64,
}

impl BotRoster {
    /// Unions rows from any number of sources. Accounts are keyed by
    /// `(wiki, normalized username)`; the first spelling seen is kept.
    pub fn from_rows<I: IntoIterator<Item = SourceRow>>(rows: I) -> Self {
        let mut roster = BotRoster::default();
        for row in rows {
            roster.insert(row);
        }
        roster
    }

    fn insert(&mut self, row: SourceRow) {
        let normalized = normalize_username(&row.username);
        if normalized.is_empty() {
            self.skipped_rows += 1;
            return;
        }
        *self.source_counts.entry(row.source).or_default() += 1;
        self.accounts
            .entry((row.wiki.clone(), normalized))
            .or_insert_with(|| BotAccount {
                wiki: row.wiki,
                username: row.username.trim().to_string(),
                sources: BTreeSet::new(),
            })
            .sources
            .insert(row.source);
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn accounts(&self) -> impl Iterator<Item = &BotAccount> {
        self.accounts.values()
    }

    /// Pre-dedupe row count per source.
    pub fn source_counts(&self) -> &BTreeMap<Source, usize> {
        &self.source_counts
    }

    pub fn skipped_rows(&self) -> u64 {
        self.skipped_rows
    }

    pub fn get(&self, wiki: &str, username: &str) -> Option<&BotAccount> {
        if is_ip(username) {
            return None;
        }
        self.accounts
            .get(&(wiki.to_string(), normalize_username(username)))
    }

    pub fn is_bot(&self, wiki: &str, username: &str) -> bool {
        self.get(wiki, username).is_some()
    }

    /// Roster as JSONL, one account per line, sorted by key.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        for account in self.accounts.values() {
            serde_json::to_writer(&mut *out, account)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Roster as source TSV, one row per (account, source).
    pub fn write_tsv<W: Write>(&self, out: &mut W) -> Result<()> {
        for account in self.accounts.values() {
            for source in &account.sources {
                writeln!(out, "{}\t{}\t{}", account.wiki, account.username, source)?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let account: BotAccount = serde_json::from_str(&line)?;
            if account.sources.is_empty() {
                return Err(Error::Data(format!("account {} has no sources", account.username)));
            }
            rows.extend(account.sources.iter().map(|&source| SourceRow {
                wiki: account.wiki.clone(),
                username: account.username.clone(),
                source,
            }));
        }
        Ok(Self::from_rows(rows))
    }

    /// Loads a roster from JSONL (first non-blank line starts with `{`) or source TSV.
    pub fn read_any<R: BufRead>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        if text.trim_start().starts_with('{') {
            Self::read_jsonl(text.as_bytes())
        } else {
            let (rows, skipped) = read_source_rows(text.as_bytes(), Some(Source::CurrentGroup))?;
            let mut roster = Self::from_rows(rows);
            roster.skipped_rows += skipped;
            Ok(roster)
        }
    }
}

/// Merges the three roster sources the way the bot list is assembled:
/// current user-group members, former user-group members, and members of
/// the per-wiki bot categories.
pub fn merge_sources<G, F, C>(groups: G, former_groups: F, categories: C) -> Result<BotRoster>
where
    G: BufRead,
    F: BufRead,
    C: BufRead,
{
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (input, source) in [
        (Box::new(groups) as Box<dyn BufRead>, Source::CurrentGroup),
        (Box::new(former_groups), Source::FormerGroup),
        (Box::new(categories), Source::Category),
    ] {
        let (mut r, s) = read_source_rows(input, Some(source))?;
        rows.append(&mut r);
        skipped += s;
    }
    let mut roster = BotRoster::from_rows(rows);
    roster.skipped_rows += skipped;
    Ok(roster)
}
