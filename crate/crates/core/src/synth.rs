//! Labeled synthetic revision histories.
//!
//! Each scenario kind replays one bot ecology (redirect fixing, interwiki
//! upkeep, protection and orphan templates, a two-bot fight) as page
//! histories whose checksums are hashes of simulated page states, so
//! identity reverts happen exactly where a state is deliberately restored.
//! The generator records, for every bot revision, whether it should come
//! out of the pipeline as a bot-bot revert, with which label, and whether
//! it is a conflict.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::classify::{ClassifiedRevert, Label};
use crate::error::{Error, Result};
use crate::ingest::write_page_jsonl;
use crate::revision::{PageHistory, RevisionMeta, Timestamp};
use crate::roster::{Source, SourceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    DoubleRedirect,
    Interwiki,
    ProtectionTemplate,
    OrphanTemplate,
    BotfightPair,
    Mixed,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::DoubleRedirect,
        ScenarioKind::Interwiki,
        ScenarioKind::ProtectionTemplate,
        ScenarioKind::OrphanTemplate,
        ScenarioKind::BotfightPair,
        ScenarioKind::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::DoubleRedirect => "double_redirect",
            ScenarioKind::Interwiki => "interwiki",
            ScenarioKind::ProtectionTemplate => "protection_template",
            ScenarioKind::OrphanTemplate => "orphan_template",
            ScenarioKind::BotfightPair => "botfight_pair",
            ScenarioKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind {s:?}")))
    }
}

/// Scenario parameters. `events` means renames for the redirect and
/// interwiki kinds, protect/unprotect or tag/untag cycles for the template
/// kinds, and reverts for the botfight kind.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub wiki: String,
    pub pages: usize,
    /// Bots available per role; 0 hands every role to human editors.
    pub bots: usize,
    pub events: usize,
    /// Mean days between human renames (or between protection cycles).
    pub rename_interval_days: f64,
    /// Median latency of maintenance bots, in hours (log-normal).
    pub bot_latency_hours: f64,
    /// Time span of a botfight, in days.
    pub duration_days: f64,
    pub start: Timestamp,
}

impl SynthScenario {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        let (pages, events) = match kind {
            ScenarioKind::DoubleRedirect | ScenarioKind::Interwiki => (1, 2),
            ScenarioKind::ProtectionTemplate => (100, 100),
            ScenarioKind::OrphanTemplate => (10, 5),
            ScenarioKind::BotfightPair => (1, 41),
            ScenarioKind::Mixed => (3, 6),
        };
        Self {
            kind,
            seed,
            wiki: "en".into(),
            pages,
            bots: 2,
            events,
            rename_interval_days: 240.0,
            bot_latency_hours: 6.0,
            duration_days: 4.0,
            start: Utc.with_ymd_and_hms(2008, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("rename interval", self.rename_interval_days),
            ("bot latency", self.bot_latency_hours),
            ("duration", self.duration_days),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }
}

/// What the pipeline should report for one generated bot revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub rev_id: u64,
    pub expected_is_revert: bool,
    pub expected_label: Option<Label>,
    pub expected_conflict: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SynthCorpus {
    pub pages: Vec<PageHistory>,
    pub truth: Vec<GroundTruthLabel>,
    pub roster: Vec<SourceRow>,
}

impl SynthCorpus {
    pub fn revision_count(&self) -> usize {
        self.pages.iter().map(PageHistory::len).sum()
    }

    pub fn expected_reverts(&self) -> impl Iterator<Item = &GroundTruthLabel> {
        self.truth.iter().filter(|t| t.expected_is_revert)
    }

    pub fn write_corpus<W: Write>(&self, out: &mut W) -> Result<()> {
        for page in &self.pages {
            write_page_jsonl(page, out)?;
        }
        Ok(())
    }

    pub fn write_truth<W: Write>(&self, out: &mut W) -> Result<()> {
        for t in &self.truth {
            serde_json::to_writer(&mut *out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_roster<W: Write>(&self, out: &mut W) -> Result<()> {
        for row in &self.roster {
            writeln!(out, "{}\t{}\t{}", row.wiki, row.username, row.source)?;
        }
        Ok(())
    }

    /// Writes `corpus.jsonl`, `truth.jsonl` and `roster.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut corpus = std::io::BufWriter::new(std::fs::File::create(dir.join("corpus.jsonl"))?);
        self.write_corpus(&mut corpus)?;
        corpus.flush()?;
        let mut truth = std::io::BufWriter::new(std::fs::File::create(dir.join("truth.jsonl"))?);
        self.write_truth(&mut truth)?;
        truth.flush()?;
        let mut roster = std::io::BufWriter::new(std::fs::File::create(dir.join("roster.tsv"))?);
        self.write_roster(&mut roster)?;
        roster.flush()?;
        Ok(())
    }
}

pub fn read_truth<R: BufRead>(input: R) -> Result<Vec<GroundTruthLabel>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// MediaWiki-style checksum: SHA-1 in base 36, zero-padded to 31 digits.
pub fn base36_sha1(data: &[u8]) -> String {
    let mut digits: Vec<u8> = Sha1::digest(data).to_vec();
    let mut out = Vec::with_capacity(31);
    while digits.iter().any(|&d| d != 0) {
        let mut rem = 0u32;
        for d in digits.iter_mut() {
            let acc = (rem << 8) | *d as u32;
            *d = (acc / 36) as u8;
            rem = acc % 36;
        }
        out.push(b"0123456789abcdefghijklmnopqrstuvwxyz"[rem as usize]);
    }
    while out.len() < 31 {
        out.push(b'0');
    }
    out.reverse();
    String::from_utf8(out).expect("base36 digits are ASCII")
}

const DOUBLE_REDIRECT_BOTS: &[&str] = &["Xqbot", "DarknessBot", "EmausBot", "RedirectCleanupBot"];
const INTERWIKI_BOTS: &[&str] = &["Luckas-bot", "SieBot", "TXikiBot", "VolkovBot"];
const PROTECTOR_BOTS: &[&str] = &["MadmanBot", "DumbBOT"];
const UNPROTECTOR_BOTS: &[&str] = &["Lowercase sigmabot", "MusikBot"];
const ORPHAN_TAGGERS: &[&str] = &["BattyBot", "Yobot"];
const ORPHAN_DATERS: &[&str] = &["AnomieBOT"];
const ORPHAN_REMOVERS: &[&str] = &["Addbot", "DASHBot"];
const FIGHTERS: &[&str] = &["CyberBot II", "AnomieBOT"];

fn double_redirect_comment(wiki: &str, target: &str) -> String {
    match wiki {
        "de" => format!("Bot: korrigiere doppelte Weiterleitung zu [[{target}]]"),
        "fr" => format!("Robot : répare double redirection vers [[{target}]]"),
        "es" => format!("Bot: Arreglando doble redirección → [[{target}]]"),
        "pt" => format!("Bot: Corrigindo redirecionamento duplo para [[{target}]]"),
        "ja" => format!("ロボットによる: 二重リダイレクト修正 [[{target}]]"),
        "zh" => format!("机器人：修正双重重定向至[[{target}]]"),
        _ => format!("Robot: Fixing double redirect to [[{target}]]"),
    }
}

fn interwiki_m1_comment(wiki: &str, link: &str) -> String {
    match wiki {
        "de" => format!("Bot: Ändere: {link}"),
        "fr" => format!("robot Modifie : {link}"),
        "es" => format!("robot Modificado: {link}"),
        "pt" => format!("Bot: Modificando: {link}"),
        "ja" => format!("ロボットによる 変更: {link}"),
        "zh" => format!("机器人 修改: {link}"),
        _ => format!("robot Modifying: {link}"),
    }
}

struct Generator {
    rng: ChaCha8Rng,
    scenario: SynthScenario,
    next_rev_id: u64,
    next_page_id: u64,
    corpus: SynthCorpus,
    bots_used: BTreeSet<String>,
}

/// One page under construction; revisions are appended in time order.
struct PageBuilder {
    wiki: String,
    page_id: u64,
    title: String,
    revisions: Vec<RevisionMeta>,
    truth: Vec<GroundTruthLabel>,
}

enum Expect {
    Nothing,
    Revert { label: Label, conflict: bool },
}

impl PageBuilder {
    fn last_time(&self) -> Option<Timestamp> {
        self.revisions.last().map(|r| r.timestamp)
    }

    fn last_actor(&self) -> Option<&str> {
        self.revisions.last().and_then(|r| r.actor.as_deref())
    }
}

impl Generator {
    fn new(scenario: SynthScenario) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            scenario,
            next_rev_id: 1_000_000,
            next_page_id: 1_000,
            corpus: SynthCorpus::default(),
            bots_used: BTreeSet::new(),
        }
    }

    fn page(&mut self, title: String) -> PageBuilder {
        let page_id = self.next_page_id;
        self.next_page_id += 1;
        PageBuilder {
            wiki: self.scenario.wiki.clone(),
            page_id,
            title,
            revisions: Vec::new(),
            truth: Vec::new(),
        }
    }

    /// Name for the `idx`-th member of a bot role, or a human when the
    /// scenario has no bots.
    fn actor(&mut self, pool: &[&str], idx: usize, role: &str) -> (String, bool) {
        if self.scenario.bots == 0 {
            return (format!("{role} editor {}", idx % 2 + 1), false);
        }
        let size = self.scenario.bots.min(pool.len()).max(1);
        let name = pool[idx % size].to_string();
        self.bots_used.insert(name.clone());
        (name, true)
    }

    fn role_size(&self, pool: &[&str]) -> usize {
        if self.scenario.bots == 0 {
            2
        } else {
            self.scenario.bots.min(pool.len()).max(1)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn edit(
        &mut self,
        page: &mut PageBuilder,
        at: Timestamp,
        actor: &str,
        is_bot: bool,
        comment: String,
        state: &str,
        expect: Expect,
    ) {
        // Strictly increasing times keep page order unambiguous.
        let at = match page.last_time() {
            Some(prev) if at <= prev => prev + Duration::seconds(1),
            _ => at,
        };
        let rev_id = self.next_rev_id;
        self.next_rev_id += 1;
        let checksum = base36_sha1(format!("{}:{}:{}", page.wiki, page.page_id, state).as_bytes());
        page.revisions.push(RevisionMeta {
            wiki: page.wiki.clone(),
            page_id: page.page_id,
            namespace: 0,
            page_title: page.title.clone(),
            rev_id,
            timestamp: at,
            actor: Some(actor.to_string()),
            comment: Some(comment),
            checksum: Some(checksum),
        });
        if is_bot {
            let (expected_is_revert, expected_label, expected_conflict) = match expect {
                Expect::Nothing => (false, None, false),
                Expect::Revert { label, conflict } => (true, Some(label), conflict),
            };
            page.truth.push(GroundTruthLabel {
                rev_id,
                expected_is_revert,
                expected_label,
                expected_conflict,
            });
        }
    }

    fn finish(&mut self, page: PageBuilder) {
        let history = PageHistory::new(page.wiki, page.page_id, 0, page.title, page.revisions)
            .expect("generated revisions are unique and share the page");
        self.corpus.pages.push(history);
        self.corpus.truth.extend(page.truth);
    }

    fn latency(&mut self) -> Duration {
        let median = self.scenario.bot_latency_hours * 3600.0;
        let dist = LogNormal::new(median.ln(), 1.0).expect("finite log-normal parameters");
        Duration::seconds(dist.sample(&mut self.rng).max(60.0).round() as i64)
    }

    fn gap(&mut self, mean_days: f64) -> Duration {
        let dist = Exp::new(1.0 / (mean_days * 86_400.0)).expect("positive rate");
        Duration::seconds(dist.sample(&mut self.rng).max(3600.0).round() as i64)
    }

    /// Picks a role member different from the previous one when possible.
    fn pick_other(&mut self, size: usize, previous: Option<usize>) -> usize {
        match previous {
            Some(prev) if size > 1 => {
                let offset = self.rng.random_range(1..size);
                (prev + offset) % size
            }
            _ => self.rng.random_range(0..size),
        }
    }

    /// A page that flips between two states as humans rename something
    /// back and forth, with bots following each rename. Every fix after the
    /// first restores the state from two revisions earlier.
    fn alternating_fixes(&mut self, title: String, pool: &[&str], comment: impl Fn(&str, usize) -> String, label: Label) {
        let mut page = self.page(title);
        let targets = [format!("{} (old)", page.title), format!("{} (new)", page.title)];
        let mut clock = self.scenario.start + self.gap(30.0);
        self.edit(
            &mut page,
            clock,
            "Page mover",
            false,
            "moved page".into(),
            &targets[0],
            Expect::Nothing,
        );
        let size = self.role_size(pool);
        let mut previous: Option<usize> = None;
        for k in 1..=self.scenario.events {
            let rename_gap = self.gap(self.scenario.rename_interval_days);
            clock += rename_gap;
            let at = clock + self.latency();
            let idx = self.pick_other(size, previous);
            let (actor, is_bot) = self.actor(pool, idx, "Maintenance");
            let target = &targets[k % 2];
            let reverts_bot = k >= 2 && page.last_actor().is_some_and(|a| self.bots_used.contains(a));
            let expect = if is_bot && reverts_bot && previous != Some(idx) {
                Expect::Revert { label, conflict: false }
            } else {
                Expect::Nothing
            };
            let text = comment(target, idx);
            self.edit(&mut page, at, &actor, is_bot, text, target, expect);
            previous = Some(idx);
        }
        self.finish(page);
    }

    fn double_redirect(&mut self, n: usize) {
        let wiki = self.scenario.wiki.clone();
        self.alternating_fixes(
            format!("Redirect page {n}"),
            DOUBLE_REDIRECT_BOTS,
            move |target, _| double_redirect_comment(&wiki, target),
            Label::FixingDoubleRedirect,
        );
    }

    /// Interwiki bots alternate comment styles by index: even bots use the
    /// verb form, odd bots list bare links.
    fn interwiki(&mut self, n: usize, style: Option<Label>) {
        let wiki = self.scenario.wiki.clone();
        let other = if wiki == "de" { "fr" } else { "de" };
        let mut page = self.page(format!("Article {n}"));
        let targets = [format!("Artikel {n}"), format!("Artikel {n} (Begriff)")];
        let mut clock = self.scenario.start + self.gap(30.0);
        self.edit(
            &mut page,
            clock,
            "Article author",
            false,
            "new article".into(),
            &format!("iw:{}", targets[0]),
            Expect::Nothing,
        );
        let size = self.role_size(INTERWIKI_BOTS);
        let mut previous: Option<usize> = None;
        for k in 1..=self.scenario.events {
            clock += self.gap(self.scenario.rename_interval_days);
            let at = clock + self.latency();
            let idx = self.pick_other(size, previous);
            let (actor, is_bot) = self.actor(INTERWIKI_BOTS, idx, "Interwiki");
            let target = &targets[k % 2];
            let link = format!("[[{other}:{target}]]");
            let family = style.unwrap_or(if idx.is_multiple_of(2) {
                Label::InterwikiCleanupM1
            } else {
                Label::InterwikiCleanupM2
            });
            let text = if family == Label::InterwikiCleanupM1 {
                interwiki_m1_comment(&wiki, &link)
            } else {
                format!("(r2.7.3) ({link})")
            };
            let reverts_bot = k >= 2 && page.last_actor().is_some_and(|a| self.bots_used.contains(a));
            let expect = if is_bot && reverts_bot && previous != Some(idx) {
                Expect::Revert { label: family, conflict: false }
            } else {
                Expect::Nothing
            };
            self.edit(&mut page, at, &actor, is_bot, text, &format!("iw:{target}"), expect);
            previous = Some(idx);
        }
        self.finish(page);
    }

    /// Protect/unprotect cycles; the notice comes off exactly 7 or 30 days
    /// after it went on. A human edit opens each cycle so cycles never
    /// revert each other.
    fn protection(&mut self, n: usize) {
        let mut page = self.page(format!("Protected page {n}"));
        let mut clock = self.scenario.start + self.gap(30.0);
        for c in 0..self.scenario.events {
            let base = format!("base:{c}");
            self.edit(&mut page, clock, "Regular editor", false, "copyedit".into(), &base, Expect::Nothing);
            let protected_at = clock + self.latency();
            let p = self.rng.random_range(0..self.role_size(PROTECTOR_BOTS));
            let (protector, p_bot) = self.actor(PROTECTOR_BOTS, p, "Protecting");
            self.edit(
                &mut page,
                protected_at,
                &protector,
                p_bot,
                "Adding {{pp-semi-vandalism}} to semi-protected page".into(),
                &format!("pp:{c}"),
                Expect::Nothing,
            );
            let lag_days = if self.rng.random_bool(0.5) { 7 } else { 30 };
            let removed_at = page.last_time().expect("just edited") + Duration::days(lag_days);
            let u = self.rng.random_range(0..self.role_size(UNPROTECTOR_BOTS));
            let (remover, u_bot) = self.actor(UNPROTECTOR_BOTS, u, "Unprotecting");
            let expect = if u_bot && p_bot {
                Expect::Revert {
                    label: Label::ProtectionTemplateCleanup,
                    conflict: false,
                }
            } else {
                Expect::Nothing
            };
            self.edit(
                &mut page,
                removed_at,
                &remover,
                u_bot,
                "Removing expired protection template".into(),
                &base,
                expect,
            );
            clock = removed_at + self.gap(self.scenario.rename_interval_days / 4.0);
        }
        self.finish(page);
    }

    /// Tag, date, untag: the untagging restores the state from three
    /// revisions back, so it needs a revert radius of at least 3.
    fn orphan(&mut self, n: usize) {
        let mut page = self.page(format!("Orphan candidate {n}"));
        let mut clock = self.scenario.start + self.gap(30.0);
        for c in 0..self.scenario.events {
            let base = format!("base:{c}");
            self.edit(&mut page, clock, "Regular editor", false, "expand".into(), &base, Expect::Nothing);
            let t = self.rng.random_range(0..self.role_size(ORPHAN_TAGGERS));
            let (tagger, t_bot) = self.actor(ORPHAN_TAGGERS, t, "Tagging");
            let at = clock + self.latency();
            self.edit(
                &mut page,
                at,
                &tagger,
                t_bot,
                "Tagging orphan article: {{Orphan}}".into(),
                &format!("orphan:{c}"),
                Expect::Nothing,
            );
            let (dater, d_bot) = self.actor(ORPHAN_DATERS, 0, "Dating");
            let at = page.last_time().expect("just edited") + self.latency();
            self.edit(
                &mut page,
                at,
                &dater,
                d_bot,
                "Dating maintenance tags: {{Orphan}}".into(),
                &format!("orphan-dated:{c}"),
                Expect::Nothing,
            );
            let r = self.rng.random_range(0..self.role_size(ORPHAN_REMOVERS));
            let (remover, r_bot) = self.actor(ORPHAN_REMOVERS, r, "Untagging");
            let at = page.last_time().expect("just edited") + self.gap(self.scenario.rename_interval_days / 4.0);
            let expect = if r_bot && d_bot {
                Expect::Revert {
                    label: Label::TemplateWork,
                    conflict: false,
                }
            } else {
                Expect::Nothing
            };
            self.edit(
                &mut page,
                at,
                &remover,
                r_bot,
                "Removing {{Orphan}} tag, page now has incoming links".into(),
                &base,
                expect,
            );
            clock = page.last_time().expect("just edited") + self.gap(self.scenario.rename_interval_days / 4.0);
        }
        self.finish(page);
    }

    /// Two bots undoing each other with minute-to-hour lags. `events`
    /// reverts fit inside `duration_days`.
    fn botfight(&mut self, n: usize) {
        let mut page = self.page(format!("Contested article {n}"));
        let start = self.scenario.start + self.gap(30.0);
        self.edit(&mut page, start, "Article author", false, "new article".into(), "s0", Expect::Nothing);
        let reverts = self.scenario.events;
        let window = (self.scenario.duration_days * 86_400.0) as i64;
        let max_lag = (window / (reverts as i64 + 1)).max(61);
        let comments = ["Rescuing 1 sources. #IABot", "Dating maintenance tags: {{Dead link}}"];
        let mut clock = start;
        for k in 0..=reverts {
            clock += Duration::seconds(self.rng.random_range(60..max_lag));
            let side = k % 2;
            let (actor, is_bot) = self.actor(FIGHTERS, side, "Contesting");
            let state = if side == 0 { "s1" } else { "s0" };
            let expect = if k >= 1 && is_bot {
                Expect::Revert {
                    label: Label::IdentifiedBotfight,
                    conflict: true,
                }
            } else {
                Expect::Nothing
            };
            self.edit(&mut page, clock, &actor, is_bot, comments[side].into(), state, expect);
        }
        self.finish(page);
    }

    fn run(mut self) -> SynthCorpus {
        let pages = self.scenario.pages;
        match self.scenario.kind {
            ScenarioKind::DoubleRedirect => (0..pages).for_each(|n| self.double_redirect(n)),
            ScenarioKind::Interwiki => (0..pages).for_each(|n| self.interwiki(n, None)),
            ScenarioKind::ProtectionTemplate => (0..pages).for_each(|n| self.protection(n)),
            ScenarioKind::OrphanTemplate => (0..pages).for_each(|n| self.orphan(n)),
            ScenarioKind::BotfightPair => (0..pages).for_each(|n| self.botfight(n)),
            ScenarioKind::Mixed => {
                let events = self.scenario.events;
                for n in 0..pages {
                    self.double_redirect(n);
                    self.interwiki(n, None);
                    self.protection(n);
                    self.orphan(n);
                }
                // One fight per mixed corpus, at the usual size.
                self.scenario.events = 41;
                self.botfight(0);
                self.scenario.events = events;
            }
        }
        let wiki = self.scenario.wiki.clone();
        self.corpus.roster = self
            .bots_used
            .iter()
            .map(|name| SourceRow {
                wiki: wiki.clone(),
                username: name.clone(),
                source: Source::CurrentGroup,
            })
            .collect();
        self.corpus
    }
}

/// Generates a corpus, its ground truth and its bot roster.
pub fn generate(scenario: &SynthScenario) -> Result<SynthCorpus> {
    scenario.validate()?;
    Ok(Generator::new(scenario.clone()).run())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

impl StageScore {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        // An empty prediction set is only perfect when nothing was expected.
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                if fn_ == 0 && fp == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }

    pub fn is_perfect(&self) -> bool {
        self.precision == 1.0 && self.recall == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub detection: StageScore,
    pub classification: StageScore,
    pub screening: Option<StageScore>,
    /// Detected reverts the truth does not expect.
    pub unexpected_rev_ids: Vec<u64>,
    /// Expected reverts that were not detected.
    pub missed_rev_ids: Vec<u64>,
}

/// Scores pipeline output against ground truth, stage by stage.
///
/// Detection compares reverting rev_ids. Classification is scored on
/// reverts both detected and expected, so it is independent of detection
/// misses. Screening, when `suspected` is given, counts a revert as
/// flagged when it survived the screen with a conflict-indicative label.
pub fn score(
    reverts: &[ClassifiedRevert],
    suspected: Option<&[ClassifiedRevert]>,
    truth: &[GroundTruthLabel],
) -> Result<ScoreReport> {
    let by_rev: BTreeMap<u64, &GroundTruthLabel> = truth.iter().map(|t| (t.rev_id, t)).collect();
    let unknown: Vec<u64> = reverts
        .iter()
        .chain(suspected.unwrap_or_default())
        .map(|c| c.revert.reverting_rev_id)
        .filter(|id| !by_rev.contains_key(id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::MissingTruth(unknown));
    }

    let detected: BTreeMap<u64, &ClassifiedRevert> =
        reverts.iter().map(|c| (c.revert.reverting_rev_id, c)).collect();
    let expected: BTreeSet<u64> = truth.iter().filter(|t| t.expected_is_revert).map(|t| t.rev_id).collect();

    let unexpected_rev_ids: Vec<u64> = detected.keys().filter(|id| !expected.contains(id)).copied().collect();
    let missed_rev_ids: Vec<u64> = expected.iter().filter(|id| !detected.contains_key(id)).copied().collect();
    let detection = StageScore::from_counts(
        detected.len() - unexpected_rev_ids.len(),
        unexpected_rev_ids.len(),
        missed_rev_ids.len(),
    );

    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (id, c) in &detected {
        let Some(expected_label) = by_rev[id].expected_label.filter(|_| expected.contains(id)) else {
            continue;
        };
        let predicted = (c.label != Label::NotClassified).then_some(c.label);
        match predicted {
            Some(label) if label == expected_label => tp += 1,
            Some(_) => {
                fp += 1;
                fn_ += 1;
            }
            None => fn_ += 1,
        }
    }
    let classification = StageScore::from_counts(tp, fp, fn_);

    let screening = suspected.map(|suspected| {
        let flagged: BTreeSet<u64> = suspected
            .iter()
            .filter(|c| c.label.is_conflict_indicative())
            .map(|c| c.revert.reverting_rev_id)
            .collect();
        let conflicts: BTreeSet<u64> = truth.iter().filter(|t| t.expected_conflict).map(|t| t.rev_id).collect();
        let tp = flagged.intersection(&conflicts).count();
        StageScore::from_counts(tp, flagged.len() - tp, conflicts.len() - tp)
    });

    Ok(ScoreReport {
        detection,
        classification,
        screening,
        unexpected_rev_ids,
        missed_rev_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base36_checksum_shape() {
        let a = base36_sha1(b"hello");
        assert_eq!(a.len(), 31);
        assert!(a.bytes().all(|b| b.is_ascii_digit() || b.is_ascii_lowercase()));
        assert_ne!(a, base36_sha1(b"hello!"));
        // SHA-1("") = da39a3ee...; its base-36 form as MediaWiki stores it.
        assert_eq!(base36_sha1(b""), "phoiac9h4m842xq45sp7s6u21eteeq1");
    }

    #[test]
    fn same_seed_same_corpus() {
        let scenario = SynthScenario::new(ScenarioKind::Mixed, 7);
        let a = generate(&scenario).unwrap();
        let b = generate(&scenario).unwrap();
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        a.write_corpus(&mut ja).unwrap();
        b.write_corpus(&mut jb).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(a.truth, b.truth);
        let other = generate(&SynthScenario { seed: 8, ..scenario }).unwrap();
        let mut jo = Vec::new();
        other.write_corpus(&mut jo).unwrap();
        assert_ne!(ja, jo);
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let mut s = SynthScenario::new(ScenarioKind::BotfightPair, 1);
        s.duration_days = 0.0;
        assert!(generate(&s).is_err());
        let mut s = SynthScenario::new(ScenarioKind::DoubleRedirect, 1);
        s.rename_interval_days = -1.0;
        assert!(generate(&s).is_err());
        let mut s = SynthScenario::new(ScenarioKind::DoubleRedirect, 1);
        s.bot_latency_hours = f64::NAN;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn every_bot_revision_is_labeled() {
        let corpus = generate(&SynthScenario::new(ScenarioKind::Mixed, 3)).unwrap();
        let bots: BTreeSet<&str> = corpus.roster.iter().map(|r| r.username.as_str()).collect();
        let labeled: BTreeSet<u64> = corpus.truth.iter().map(|t| t.rev_id).collect();
        for page in &corpus.pages {
            for rev in page.revisions() {
                let is_bot = bots.contains(rev.actor.as_deref().unwrap());
                assert_eq!(is_bot, labeled.contains(&rev.rev_id), "rev {}", rev.rev_id);
            }
        }
    }

    #[test]
    fn conflict_labels_only_in_fights() {
        for kind in [
            ScenarioKind::DoubleRedirect,
            ScenarioKind::Interwiki,
            ScenarioKind::ProtectionTemplate,
            ScenarioKind::OrphanTemplate,
        ] {
            let corpus = generate(&SynthScenario::new(kind, 11)).unwrap();
            assert!(corpus.truth.iter().all(|t| !t.expected_conflict), "{kind}");
        }
        let fight = generate(&SynthScenario::new(ScenarioKind::BotfightPair, 11)).unwrap();
        let conflicts: Vec<_> = fight.truth.iter().filter(|t| t.expected_conflict).collect();
        assert_eq!(conflicts.len(), 41);
        assert!(conflicts.iter().all(|t| t.expected_label == Some(Label::IdentifiedBotfight)));
    }

    #[test]
    fn checksums_repeat_only_for_repeated_states() {
        let corpus = generate(&SynthScenario::new(ScenarioKind::BotfightPair, 5)).unwrap();
        let revs = corpus.pages[0].revisions();
        // human s0, then s1/s0 alternating
        for (i, rev) in revs.iter().enumerate() {
            let expected_state = if i % 2 == 0 { &revs[0] } else { &revs[1] };
            assert_eq!(rev.checksum, expected_state.checksum);
        }
        assert_ne!(revs[0].checksum, revs[1].checksum);
    }

    #[test]
    fn zero_bots_means_no_expected_reverts() {
        let mut s = SynthScenario::new(ScenarioKind::Mixed, 2);
        s.bots = 0;
        let corpus = generate(&s).unwrap();
        assert!(corpus.truth.is_empty());
        assert!(corpus.roster.is_empty());
    }

    #[test]
    fn stage_score_edge_cases() {
        let perfect = StageScore::from_counts(3, 0, 0);
        assert!(perfect.is_perfect());
        let nothing_expected = StageScore::from_counts(0, 0, 0);
        assert!(nothing_expected.is_perfect());
        let nothing_found = StageScore::from_counts(0, 0, 4);
        assert_eq!((nothing_found.precision, nothing_found.recall), (0.0, 0.0));
    }
}
