use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{IngestOptions, IngestWarnings};
use crate::error::{Error, Result};
use crate::revision::{parse_timestamp, PageHistory, RevisionMeta};

// Elements we read. Everything else (text bodies included) is skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    DbName,
    Page,
    Title,
    Ns,
    Id,
    Revision,
    Timestamp,
    Contributor,
    Username,
    Ip,
    Comment,
    Sha1,
    Other,
}

impl Tag {
    fn from_local_name(name: &[u8]) -> Tag {
        match name {
            b"dbname" => Tag::DbName,
            b"page" => Tag::Page,
            b"title" => Tag::Title,
            b"ns" => Tag::Ns,
            b"id" => Tag::Id,
            b"revision" => Tag::Revision,
            b"timestamp" => Tag::Timestamp,
            b"contributor" => Tag::Contributor,
            b"username" => Tag::Username,
            b"ip" => Tag::Ip,
            b"comment" => Tag::Comment,
            b"sha1" => Tag::Sha1,
            _ => Tag::Other,
        }
    }

    fn captures_text(self) -> bool {
        !matches!(self, Tag::Page | Tag::Revision | Tag::Contributor | Tag::Other)
    }
}

#[derive(Default)]
struct PartialPage {
    title: Option<String>,
    ns: Option<i32>,
    id: Option<u64>,
    revisions: Vec<PartialRevision>,
}

#[derive(Default)]
struct PartialRevision {
    id: Option<u64>,
    timestamp: Option<String>,
    actor: Option<String>,
    comment: Option<String>,
    sha1: Option<String>,
}

/// Pull parser over MediaWiki export XML yielding one page at a time.
pub struct XmlDumpReader<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    stack: Vec<Tag>,
    text: String,
    dbname: Option<String>,
    options: IngestOptions,
    warnings: IngestWarnings,
    page: Option<PartialPage>,
    revision: Option<PartialRevision>,
    finished: bool,
}

impl<R: BufRead> XmlDumpReader<R> {
    pub fn new(input: R, options: IngestOptions) -> Self {
        let mut reader = Reader::from_reader(input);
        reader.config_mut().trim_text(false);
        Self {
            reader,
            buf: Vec::with_capacity(4096),
            stack: Vec::new(),
            text: String::new(),
            dbname: None,
            options,
            warnings: IngestWarnings::default(),
            page: None,
            revision: None,
            finished: false,
        }
    }

    pub fn warnings(&self) -> IngestWarnings {
        self.warnings.clone()
    }

    fn xml_error(&self, message: impl ToString) -> Error {
        Error::Xml {
            offset: self.reader.buffer_position(),
            message: message.to_string(),
        }
    }

    fn wiki(&self) -> String {
        if let Some(wiki) = &self.options.wiki {
            return wiki.clone();
        }
        match &self.dbname {
            Some(db) => db.strip_suffix("wiki").unwrap_or(db).to_string(),
            None => "unknown".to_string(),
        }
    }

    fn open(&mut self, tag: Tag, start: &BytesStart<'_>, empty: bool) {
        match tag {
            Tag::Page => {
                self.page = Some(PartialPage::default());
            }
            Tag::Revision if self.page.is_some() => {
                self.revision = Some(PartialRevision::default());
            }
            Tag::Comment if empty && !is_deleted(start) => {
                if let Some(rev) = self.revision.as_mut() {
                    rev.comment = Some(String::new());
                }
            }
            _ => {}
        }
        self.text.clear();
    }

    /// Returns a finished page when `</page>` closes.
    fn close(&mut self, tag: Tag) -> Option<PageHistory> {
        let parent = self.stack.last().copied();
        let text = std::mem::take(&mut self.text);
        match (tag, parent) {
            (Tag::DbName, _) => self.dbname = Some(text.trim().to_string()),
            (Tag::Title, Some(Tag::Page)) => {
                if let Some(p) = self.page.as_mut() {
                    p.title = Some(text);
                }
            }
            (Tag::Ns, Some(Tag::Page)) => {
                if let Some(p) = self.page.as_mut() {
                    p.ns = text.trim().parse().ok();
                }
            }
            (Tag::Id, Some(Tag::Page)) => {
                if let Some(p) = self.page.as_mut() {
                    p.id = text.trim().parse().ok();
                }
            }
            (Tag::Id, Some(Tag::Revision)) => {
                if let Some(r) = self.revision.as_mut() {
                    r.id = text.trim().parse().ok();
                }
            }
            (Tag::Timestamp, Some(Tag::Revision)) => {
                if let Some(r) = self.revision.as_mut() {
                    r.timestamp = Some(text.trim().to_string());
                }
            }
            (Tag::Username | Tag::Ip, Some(Tag::Contributor)) => {
                if let Some(r) = self.revision.as_mut() {
                    if !text.is_empty() {
                        r.actor = Some(text);
                    }
                }
            }
            (Tag::Comment, Some(Tag::Revision)) => {
                if let Some(r) = self.revision.as_mut() {
                    r.comment = Some(text);
                }
            }
            (Tag::Sha1, Some(Tag::Revision)) => {
                if let Some(r) = self.revision.as_mut() {
                    let token = text.trim();
                    if !token.is_empty() {
                        r.sha1 = Some(token.to_string());
                    }
                }
            }
            (Tag::Revision, _) => {
                if let (Some(rev), Some(page)) = (self.revision.take(), self.page.as_mut()) {
                    page.revisions.push(rev);
                }
            }
            (Tag::Page, _) => {
                if let Some(page) = self.page.take() {
                    return self.finish_page(page);
                }
            }
            _ => {}
        }
        None
    }

    fn finish_page(&mut self, page: PartialPage) -> Option<PageHistory> {
        let Some(page_id) = page.id else {
            IngestWarnings::bump(&self.warnings.skipped_pages);
            return None;
        };
        let wiki = self.wiki();
        let namespace = page.ns.unwrap_or(0);
        let title = page.title.unwrap_or_default();
        let mut revisions = Vec::with_capacity(page.revisions.len());
        for rev in page.revisions {
            let (Some(rev_id), Some(raw_ts)) = (rev.id, rev.timestamp) else {
                IngestWarnings::bump(&self.warnings.skipped_revisions);
                continue;
            };
            let Ok(timestamp) = parse_timestamp(&raw_ts) else {
                IngestWarnings::bump(&self.warnings.skipped_revisions);
                continue;
            };
            if self.options.cutoff.is_some_and(|cutoff| timestamp > cutoff) {
                IngestWarnings::bump(&self.warnings.after_cutoff);
                continue;
            }
            revisions.push(RevisionMeta {
                wiki: wiki.clone(),
                page_id,
                namespace,
                page_title: title.clone(),
                rev_id,
                timestamp,
                actor: rev.actor,
                comment: rev.comment,
                checksum: rev.sha1,
            });
        }
        // Duplicate rev_ids inside one page cannot come from a well-formed dump;
        // keep the first and count the rest.
        revisions.sort_by_key(|r| r.rev_id);
        let before = revisions.len();
        revisions.dedup_by_key(|r| r.rev_id);
        for _ in revisions.len()..before {
            IngestWarnings::bump(&self.warnings.skipped_revisions);
        }
        Some(
            PageHistory::new(wiki, page_id, namespace, title, revisions)
                .expect("revisions are deduplicated and share the page id"),
        )
    }

    fn next_page(&mut self) -> Result<Option<PageHistory>> {
        loop {
            self.buf.clear();
            let event = self
                .reader
                .read_event_into(&mut self.buf)
                .map_err(|e| Error::Xml {
                    offset: self.reader.error_position(),
                    message: e.to_string(),
                })?;
            match event {
                Event::Start(start) => {
                    let tag = Tag::from_local_name(start.local_name().as_ref());
                    let start = start.into_owned();
                    self.open(tag, &start, false);
                    self.stack.push(tag);
                }
                Event::Empty(start) => {
                    let tag = Tag::from_local_name(start.local_name().as_ref());
                    let start = start.into_owned();
                    self.open(tag, &start, true);
                    // Self-closing <page/> or <revision/> still has to be closed.
                    if matches!(tag, Tag::Page | Tag::Revision) {
                        if let Some(page) = self.close(tag) {
                            return Ok(Some(page));
                        }
                    }
                }
                Event::Text(text) => {
                    if self.stack.last().is_some_and(|t| t.captures_text()) {
                        let offset = self.reader.buffer_position();
                        let unescaped = text.unescape().map_err(|e| Error::Xml {
                            offset,
                            message: e.to_string(),
                        })?;
                        self.text.push_str(&unescaped);
                    }
                }
                Event::CData(data) => {
                    if self.stack.last().is_some_and(|t| t.captures_text()) {
                        let raw = String::from_utf8_lossy(&data.into_inner()).into_owned();
                        self.text.push_str(&raw);
                    }
                }
                Event::End(_) => {
                    let tag = self
                        .stack
                        .pop()
                        .ok_or_else(|| self.xml_error("closing tag without an opening tag"))?;
                    if let Some(page) = self.close(tag) {
                        return Ok(Some(page));
                    }
                }
                Event::Eof => {
                    if !self.stack.is_empty() {
                        return Err(self.xml_error("unexpected end of document inside an open element"));
                    }
                    return Ok(None);
                }
                _ => {}
            }
        }
    }
}

fn is_deleted(start: &BytesStart<'_>) -> bool {
    start
        .attributes()
        .flatten()
        .any(|a| a.key.local_name().as_ref() == b"deleted")
}

impl<R: BufRead> Iterator for XmlDumpReader<R> {
    type Item = Result<PageHistory>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.next_page() {
            Ok(Some(page)) => Some(Ok(page)),
            Ok(None) => {
                self.finished = true;
                None
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}
