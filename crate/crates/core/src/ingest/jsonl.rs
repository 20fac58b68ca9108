use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::vec;

use super::{IngestOptions, IngestWarnings};
use crate::error::{Error, Result};
use crate::revision::{PageHistory, RevisionMeta};

type PageKey = (String, u64);

/// Reads JSONL revision records and groups them into pages.
///
/// With `sorted_input` the lines of one page must be contiguous and the
/// reader streams; otherwise all lines are buffered and regrouped, pages
/// coming out in order of first appearance.
pub struct JsonlReader<R: BufRead> {
    mode: Mode<R>,
    options: IngestOptions,
    warnings: IngestWarnings,
}

enum Mode<R> {
    Streaming {
        lines: std::io::Lines<R>,
        pending: Option<RevisionMeta>,
        seen: HashSet<PageKey>,
        done: bool,
    },
    Regrouped(vec::IntoIter<Vec<RevisionMeta>>),
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(input: R, options: IngestOptions) -> Result<Self> {
        let warnings = IngestWarnings::default();
        let mode = if options.sorted_input {
            Mode::Streaming {
                lines: input.lines(),
                pending: None,
                seen: HashSet::new(),
                done: false,
            }
        } else {
            Mode::Regrouped(regroup(input, &options, &warnings)?.into_iter())
        };
        Ok(Self {
            mode,
            options,
            warnings,
        })
    }

    pub fn warnings(&self) -> IngestWarnings {
        self.warnings.clone()
    }

    fn next_streaming(&mut self) -> Result<Option<PageHistory>> {
        let Mode::Streaming {
            lines,
            pending,
            seen,
            done,
        } = &mut self.mode
        else {
            unreachable!("streaming mode");
        };
        let mut current: Vec<RevisionMeta> = pending.take().into_iter().collect();
        while !*done {
            let Some(line) = lines.next() else {
                *done = true;
                break;
            };
            let Some(rev) = parse_line(&line?, &self.options, &self.warnings) else {
                continue;
            };
            match current.first() {
                Some(first) if first.wiki != rev.wiki || first.page_id != rev.page_id => {
                    *pending = Some(rev);
                    break;
                }
                _ => current.push(rev),
            }
        }
        if current.is_empty() {
            return Ok(None);
        }
        let key = (current[0].wiki.clone(), current[0].page_id);
        if !seen.insert(key.clone()) {
            return Err(Error::Data(format!(
                "page {}:{} is not contiguous in input marked as sorted",
                key.0, key.1
            )));
        }
        build_page(current).map(Some)
    }
}

fn parse_line(line: &str, options: &IngestOptions, warnings: &IngestWarnings) -> Option<RevisionMeta> {
    if line.trim().is_empty() {
        return None;
    }
    match serde_json::from_str::<RevisionMeta>(line) {
        Ok(rev) => {
            if options.cutoff.is_some_and(|cutoff| rev.timestamp > cutoff) {
                IngestWarnings::bump(&warnings.after_cutoff);
                None
            } else {
                Some(rev)
            }
        }
        Err(_) => {
            IngestWarnings::bump(&warnings.skipped_lines);
            None
        }
    }
}

fn regroup<R: BufRead>(
    input: R,
    options: &IngestOptions,
    warnings: &IngestWarnings,
) -> Result<Vec<Vec<RevisionMeta>>> {
    let mut order: Vec<Vec<RevisionMeta>> = Vec::new();
    let mut index: HashMap<PageKey, usize> = HashMap::new();
    let mut by_rev: HashMap<(String, u64), PageKey> = HashMap::new();
    for line in input.lines() {
        let Some(rev) = parse_line(&line?, options, warnings) else {
            continue;
        };
        let key = (rev.wiki.clone(), rev.page_id);
        if let Some(owner) = by_rev.insert((rev.wiki.clone(), rev.rev_id), key.clone()) {
            if owner != key {
                return Err(Error::DuplicateRevision(rev.rev_id));
            }
        }
        let slot = *index.entry(key).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[slot].push(rev);
    }
    Ok(order)
}

/// Identical duplicate lines collapse; differing ones are an error.
fn build_page(mut revisions: Vec<RevisionMeta>) -> Result<PageHistory> {
    revisions.sort_by_key(|r| r.rev_id);
    let mut deduped: Vec<RevisionMeta> = Vec::with_capacity(revisions.len());
    for rev in revisions {
        match deduped.last() {
            Some(prev) if prev.rev_id == rev.rev_id => {
                if *prev != rev {
                    return Err(Error::DuplicateRevision(rev.rev_id));
                }
            }
            _ => deduped.push(rev),
        }
    }
    let first = &deduped[0];
    let (wiki, page_id, ns, title) = (
        first.wiki.clone(),
        first.page_id,
        first.namespace,
        first.page_title.clone(),
    );
    PageHistory::new(wiki, page_id, ns, title, deduped)
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<PageHistory>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.mode {
            Mode::Regrouped(pages) => pages.next().map(build_page),
            Mode::Streaming { .. } => self.next_streaming().transpose(),
        }
    }
}
