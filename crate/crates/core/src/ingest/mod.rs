//! Streaming readers that turn dump files into per-page revision histories.
//!
//! Both readers yield one [`PageHistory`] at a time and hold at most one
//! page's revisions in memory (the unsorted JSONL path is the exception:
//! it has to regroup, so it buffers the whole input).

mod jsonl;
mod xml;

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::str::FromStr;

pub use jsonl::JsonlReader;
pub use xml::XmlDumpReader;

use crate::error::{Error, Result};
use crate::revision::{PageHistory, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Xml,
    Jsonl,
}

impl std::fmt::Display for InputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Xml => "xml",
            Self::Jsonl => "jsonl",
        })
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xml" => Ok(Self::Xml),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::Config(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Project code stamped on XML revisions. Falls back to the dump's
    /// `<dbname>` with the `wiki` suffix stripped.
    pub wiki: Option<String>,
    /// Revisions strictly after this instant are dropped.
    pub cutoff: Option<Timestamp>,
    /// JSONL only: lines of one page are contiguous, so no regroup pass.
    pub sorted_input: bool,
}

/// Counted, non-fatal problems seen while reading.
#[derive(Debug, Clone, Default)]
pub struct IngestWarnings {
    skipped_revisions: Arc<AtomicU64>,
    skipped_lines: Arc<AtomicU64>,
    skipped_pages: Arc<AtomicU64>,
    after_cutoff: Arc<AtomicU64>,
}

impl IngestWarnings {
    /// Revisions missing an id or timestamp.
    pub fn skipped_revisions(&self) -> u64 {
        self.skipped_revisions.load(Ordering::Relaxed)
    }

    /// JSONL lines that did not parse.
    pub fn skipped_lines(&self) -> u64 {
        self.skipped_lines.load(Ordering::Relaxed)
    }

    /// XML pages without a usable page id.
    pub fn skipped_pages(&self) -> u64 {
        self.skipped_pages.load(Ordering::Relaxed)
    }

    pub fn after_cutoff(&self) -> u64 {
        self.after_cutoff.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.skipped_revisions() + self.skipped_lines() + self.skipped_pages()
    }

    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

/// A page stream from either input format.
pub enum PageReader<R: BufRead> {
    Xml(XmlDumpReader<R>),
    Jsonl(JsonlReader<R>),
}

impl<R: BufRead> PageReader<R> {
    pub fn new(input: R, format: InputFormat, options: IngestOptions) -> Result<Self> {
        Ok(match format {
            InputFormat::Xml => Self::Xml(XmlDumpReader::new(input, options)),
            InputFormat::Jsonl => Self::Jsonl(JsonlReader::new(input, options)?),
        })
    }

    pub fn warnings(&self) -> IngestWarnings {
        match self {
            Self::Xml(r) => r.warnings(),
            Self::Jsonl(r) => r.warnings(),
        }
    }
}

impl<R: BufRead> Iterator for PageReader<R> {
    type Item = Result<PageHistory>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            Self::Xml(r) => r.next(),
            Self::Jsonl(r) => r.next(),
        }
    }
}

pub fn parse_xml_dump<R: BufRead>(input: R, options: IngestOptions) -> XmlDumpReader<R> {
    XmlDumpReader::new(input, options)
}

pub fn parse_jsonl<R: BufRead>(input: R, options: IngestOptions) -> Result<JsonlReader<R>> {
    JsonlReader::new(input, options)
}

/// Writes a page's revisions as JSONL, one revision per line.
pub fn write_page_jsonl<W: Write>(page: &PageHistory, out: &mut W) -> Result<()> {
    for rev in page.revisions() {
        serde_json::to_writer(&mut *out, rev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
