//! Rule-based classification of bot-bot reverts from the reverting edit
//! summary and the two bot names.
//!
//! Rules live in a TSV file:
//!
//! ```text
//! priority<TAB>label<TAB>comment_regex[<TAB>bot_pairs[<TAB>wikis[<TAB>exclude_regex]]]
//! ```
//!
//! Lower priorities are tried first and the first matching rule wins.
//! Regexes are case-insensitive. `bot_pairs` is a `;`-separated list of
//! `REVERTING -> REVERTED` (directed) or `A <-> B` (either direction)
//! name patterns, each matched against the whole username; `*` matches any
//! name. `wikis` is a comma-separated list of project codes. Empty cells or
//! a lone `-` mean "no constraint". A named group `iw` in the comment regex
//! only counts as a match when the captured language code differs from the
//! revert's own wiki.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::detect::DirectedBotRevert;
use crate::error::{Error, Result};

/// The shipped rule table.
pub const DEFAULT_RULES: &str = include_str!("../rules/default_rules.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    CategoryWork,
    FixingDoubleRedirect,
    InterwikiCleanupM1,
    InterwikiCleanupM2,
    OtherWRevertInComment,
    ProtectionTemplateCleanup,
    TemplateWork,
    OtherClassified,
    IdentifiedBotfight,
    NotClassified,
}

impl Label {
    pub const ALL: [Label; 10] = [
        Label::CategoryWork,
        Label::FixingDoubleRedirect,
        Label::InterwikiCleanupM1,
        Label::InterwikiCleanupM2,
        Label::OtherWRevertInComment,
        Label::ProtectionTemplateCleanup,
        Label::TemplateWork,
        Label::OtherClassified,
        Label::IdentifiedBotfight,
        Label::NotClassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::CategoryWork => "category_work",
            Label::FixingDoubleRedirect => "fixing_double_redirect",
            Label::InterwikiCleanupM1 => "interwiki_cleanup_m1",
            Label::InterwikiCleanupM2 => "interwiki_cleanup_m2",
            Label::OtherWRevertInComment => "other_w_revert_in_comment",
            Label::ProtectionTemplateCleanup => "protection_template_cleanup",
            Label::TemplateWork => "template_work",
            Label::OtherClassified => "other_classified",
            Label::IdentifiedBotfight => "identified_botfight",
            Label::NotClassified => "not_classified",
        }
    }

    /// Labels that point at possible conflict rather than routine work.
    pub fn is_conflict_indicative(self) -> bool {
        matches!(
            self,
            Label::IdentifiedBotfight | Label::OtherWRevertInComment | Label::NotClassified
        )
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone)]
struct NamePattern(Option<Regex>);

impl NamePattern {
    fn parse(raw: &str) -> std::result::Result<Self, regex::Error> {
        let raw = raw.trim();
        if raw.is_empty() || raw == "*" {
            return Ok(NamePattern(None));
        }
        let re = RegexBuilder::new(&format!("^(?:{raw})$"))
            .case_insensitive(true)
            .build()?;
        Ok(NamePattern(Some(re)))
    }

    fn matches(&self, name: &str) -> bool {
        self.0.as_ref().is_none_or(|re| re.is_match(name))
    }
}

#[derive(Debug, Clone)]
struct BotPairPattern {
    reverting: NamePattern,
    reverted: NamePattern,
    either_direction: bool,
}

impl BotPairPattern {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        let (left, right, either_direction) = if let Some((l, r)) = raw.split_once("<->") {
            (l, r, true)
        } else if let Some((l, r)) = raw.split_once("->") {
            (l, r, false)
        } else {
            return Err(format!("bot pair {raw:?} needs `->` or `<->`"));
        };
        Ok(BotPairPattern {
            reverting: NamePattern::parse(left).map_err(|e| e.to_string())?,
            reverted: NamePattern::parse(right).map_err(|e| e.to_string())?,
            either_direction,
        })
    }

    fn matches(&self, reverting: &str, reverted: &str) -> bool {
        (self.reverting.matches(reverting) && self.reverted.matches(reverted))
            || (self.either_direction && self.reverting.matches(reverted) && self.reverted.matches(reverting))
    }
}

/// One classification rule.
#[derive(Debug, Clone)]
pub struct ClassRule {
    pub priority: i64,
    pub label: Label,
    comment_pattern: Regex,
    bot_pairs: Vec<BotPairPattern>,
    wikis: Option<BTreeSet<String>>,
    exclude_pattern: Option<Regex>,
}

impl ClassRule {
    fn comment_matches(&self, comment: &str, wiki: &str) -> bool {
        if self.comment_pattern.capture_names().any(|n| n == Some("iw")) {
            self.comment_pattern
                .captures_iter(comment)
                .any(|caps| caps.name("iw").is_some_and(|m| !m.as_str().eq_ignore_ascii_case(wiki)))
        } else {
            self.comment_pattern.is_match(comment)
        }
    }

    pub fn matches(&self, revert: &DirectedBotRevert) -> bool {
        let comment = revert.comment.as_deref().unwrap_or("");
        if let Some(wikis) = &self.wikis {
            if !wikis.contains(&revert.wiki) {
                return false;
            }
        }
        if !self.bot_pairs.is_empty()
            && !self
                .bot_pairs
                .iter()
                .any(|p| p.matches(&revert.reverting_bot, &revert.reverted_bot))
        {
            return false;
        }
        if !self.comment_matches(comment, &revert.wiki) {
            return false;
        }
        !self.exclude_pattern.as_ref().is_some_and(|re| re.is_match(comment))
    }
}

/// Rules ordered by ascending priority.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<ClassRule>,
}

impl RuleSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped reconstruction of the edit-summary patterns.
    pub fn shipped() -> Self {
        static SHIPPED: std::sync::OnceLock<RuleSet> = std::sync::OnceLock::new();
        SHIPPED
            .get_or_init(|| Self::parse(DEFAULT_RULES.as_bytes(), "<shipped rules>").expect("shipped rules are valid"))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[ClassRule] {
        &self.rules
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.rules.iter().map(|r| r.label).collect()
    }

    /// Parses a rule file. `origin` names the file in error messages.
    pub fn parse<R: BufRead>(input: R, origin: &str) -> Result<Self> {
        let mut rules: Vec<ClassRule> = Vec::new();
        let mut seen: BTreeMap<i64, usize> = BTreeMap::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let fail = |message: String| Error::Rule {
                path: origin.to_string(),
                line: lineno,
                message,
            };
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 || cols.len() > 6 {
                return Err(fail(format!("expected 3 to 6 tab-separated columns, found {}", cols.len())));
            }
            let priority: i64 = cols[0]
                .trim()
                .parse()
                .map_err(|_| fail(format!("bad priority {:?}", cols[0])))?;
            let label: Label = cols[1].trim().parse().map_err(|e: Error| fail(e.to_string()))?;
            if label == Label::NotClassified {
                return Err(fail("not_classified is reserved for reverts no rule matches".into()));
            }
            let comment_pattern = compile(cols[2]).map_err(|e| fail(format!("bad comment regex: {e}")))?;
            let cell = |i: usize| cols.get(i).map(|c| c.trim()).filter(|c| !c.is_empty() && *c != "-");
            let bot_pairs = match cell(3) {
                Some(raw) => raw
                    .split(';')
                    .map(|p| BotPairPattern::parse(p.trim()))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(fail)?,
                None => Vec::new(),
            };
            let wikis = cell(4).map(|raw| raw.split(',').map(|w| w.trim().to_string()).collect());
            let exclude_pattern = cell(5)
                .map(compile)
                .transpose()
                .map_err(|e| fail(format!("bad exclude regex: {e}")))?;
            if let Some(prev) = seen.insert(priority, lineno) {
                return Err(fail(format!("priority {priority} already used on line {prev}")));
            }
            rules.push(ClassRule {
                priority,
                label,
                comment_pattern,
                bot_pairs,
                wikis,
                exclude_pattern,
            });
        }
        rules.sort_by_key(|r| r.priority);
        Ok(Self { rules })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = crate::error::open_file(path)?;
        Self::parse(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn first_match(&self, revert: &DirectedBotRevert) -> Option<&ClassRule> {
        self.rules.iter().find(|rule| rule.matches(revert))
    }
}

fn compile(raw: &str) -> std::result::Result<Regex, regex::Error> {
    RegexBuilder::new(raw).case_insensitive(true).build()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedRevert {
    #[serde(flatten)]
    pub revert: DirectedBotRevert,
    pub label: Label,
    pub matched_rule: Option<i64>,
}

pub fn classify(revert: DirectedBotRevert, rules: &RuleSet) -> ClassifiedRevert {
    match rules.first_match(&revert) {
        Some(rule) => ClassifiedRevert {
            label: rule.label,
            matched_rule: Some(rule.priority),
            revert,
        },
        None => ClassifiedRevert {
            revert,
            label: Label::NotClassified,
            matched_rule: None,
        },
    }
}

/// Per-wiki label counts and shares.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassProportions {
    pub counts: BTreeMap<String, BTreeMap<Label, usize>>,
}

impl ClassProportions {
    pub fn total(&self, wiki: &str) -> usize {
        self.counts.get(wiki).map(|c| c.values().sum()).unwrap_or(0)
    }

    pub fn count(&self, wiki: &str, label: Label) -> usize {
        self.counts.get(wiki).and_then(|c| c.get(&label)).copied().unwrap_or(0)
    }

    pub fn share(&self, wiki: &str, label: Label) -> f64 {
        let total = self.total(wiki);
        if total == 0 {
            0.0
        } else {
            self.count(wiki, label) as f64 / total as f64
        }
    }

    pub fn wikis(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }
}

pub fn class_proportions<'a, I>(classified: I) -> ClassProportions
where
    I: IntoIterator<Item = &'a ClassifiedRevert>,
{
    let mut counts: BTreeMap<String, BTreeMap<Label, usize>> = BTreeMap::new();
    for c in classified {
        *counts
            .entry(c.revert.wiki.clone())
            .or_insert_with(|| Label::ALL.iter().map(|&l| (l, 0)).collect())
            .entry(c.label)
            .or_default() += 1;
    }
    ClassProportions { counts }
}

/// Validation sample size: 1% of classes above 10,000 reverts, otherwise
/// up to 100.
pub fn validation_sample_size(class_size: usize) -> usize {
    if class_size > 10_000 {
        class_size / 100
    } else {
        class_size.min(100)
    }
}

/// Uniform sample without replacement of one label's reverts, returned in
/// input order. Deterministic for a given seed and input order.
pub fn sample_for_validation(
    classified: &[ClassifiedRevert],
    label: Label,
    seed: u64,
) -> Result<Vec<&ClassifiedRevert>> {
    let members: Vec<&ClassifiedRevert> = classified.iter().filter(|c| c.label == label).collect();
    if members.is_empty() {
        return Err(Error::LabelAbsent(label.to_string()));
    }
    let amount = validation_sample_size(members.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, members.len(), amount).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| members[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revision::parse_timestamp;

    pub(crate) fn revert(wiki: &str, reverting: &str, reverted: &str, comment: Option<&str>) -> DirectedBotRevert {
        let t = parse_timestamp("2012-03-04T05:06:07Z").unwrap();
        DirectedBotRevert {
            wiki: wiki.into(),
            page_id: 1,
            namespace: 0,
            title: "P".into(),
            reverting_bot: reverting.into(),
            reverted_bot: reverted.into(),
            reverting_rev_id: 3,
            reverted_rev_id: 2,
            reverted_to_rev_id: 1,
            reverting_time: t,
            reverted_time: t,
            comment: comment.map(str::to_string),
            time_to_revert: 0,
            year: 2012,
        }
    }

    fn label_of(rules: &RuleSet, wiki: &str, reverting: &str, reverted: &str, comment: &str) -> Label {
        classify(revert(wiki, reverting, reverted, Some(comment)), rules).label
    }

    #[test]
    fn empty_rule_file() {
        let rules = RuleSet::parse(&b"# nothing here\n\n"[..], "t").unwrap();
        assert!(rules.is_empty());
        let c = classify(revert("en", "A", "B", Some("Robot: Fixing double redirect")), &rules);
        assert_eq!(c.label, Label::NotClassified);
        assert_eq!(c.matched_rule, None);
    }

    #[test]
    fn single_rule_file() {
        let rules = RuleSet::parse(&b"5\ttemplate_work\torphan\n"[..], "t").unwrap();
        assert_eq!(rules.len(), 1);
        let c = classify(revert("en", "A", "B", Some("Removing ORPHAN tag")), &rules);
        assert_eq!(c.label, Label::TemplateWork);
        assert_eq!(c.matched_rule, Some(5));
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let cases: [(&[u8], &str); 5] = [
            (b"1\ttemplate_work\t(unclosed\n", "regex"),
            (b"# c\n1\tnonsense\tx\n", "unknown label"),
            (b"1\ttemplate_work\ta\n1\tcategory_work\tb\n", "already used"),
            (b"x\ttemplate_work\ta\n", "priority"),
            (b"1\tnot_classified\ta\n", "reserved"),
        ];
        for (input, needle) in cases {
            match RuleSet::parse(input, "rules.tsv") {
                Err(Error::Rule { line, message, .. }) => {
                    assert!(message.contains(needle), "{message}");
                    assert!(line >= 1);
                }
                other => panic!("expected rule error, got {other:?}"),
            }
        }
        match RuleSet::parse(&b"# c\n1\tnonsense\tx\n"[..], "rules.tsv") {
            Err(Error::Rule { line, .. }) => assert_eq!(line, 2),
            _ => unreachable!(),
        }
    }

    #[test]
    fn priority_order_not_file_order() {
        let rules = RuleSet::parse(&b"20\ttemplate_work\tbot\n10\tcategory_work\tbot\n"[..], "t").unwrap();
        assert_eq!(label_of(&rules, "en", "A", "B", "bot edit"), Label::CategoryWork);
    }

    #[test]
    fn constraints_and_exclusions() {
        let rules = RuleSet::parse(
            &b"1\tidentified_botfight\tupdate\tMathbot <-> *\n\
               2\tcategory_work\tcateg\t-\tde,fr\n\
               3\ttemplate_work\ttemplate\t\t\tprotect\n\
               4\tother_classified\t.\tAlpha -> Beta\n"[..],
            "t",
        )
        .unwrap();
        assert_eq!(label_of(&rules, "en", "FrescoBot", "Mathbot", "update list"), Label::IdentifiedBotfight);
        assert_eq!(label_of(&rules, "en", "Mathbot", "FrescoBot", "update list"), Label::IdentifiedBotfight);
        assert_eq!(label_of(&rules, "en", "OtherBot", "FrescoBot", "update list"), Label::NotClassified);
        assert_eq!(label_of(&rules, "de", "A", "B", "Categories"), Label::CategoryWork);
        assert_eq!(label_of(&rules, "en", "A", "B", "Categories"), Label::NotClassified);
        assert_eq!(label_of(&rules, "en", "A", "B", "template work"), Label::TemplateWork);
        assert_eq!(label_of(&rules, "en", "A", "B", "protection template"), Label::NotClassified);
        assert_eq!(label_of(&rules, "en", "alpha", "beta", "x"), Label::OtherClassified);
        assert_eq!(label_of(&rules, "en", "Beta", "Alpha", "x"), Label::NotClassified);
    }

    #[test]
    fn interwiki_group_ignores_own_language() {
        let rules = RuleSet::parse(&br"1	interwiki_cleanup_m2	\[\[:?(?-i:(?P<iw>[a-z]{2,3}(?:-[a-z]+)*)):"[..], "t").unwrap();
        assert_eq!(label_of(&rules, "en", "A", "B", "[[de:Japan]]"), Label::InterwikiCleanupM2);
        assert_eq!(label_of(&rules, "en", "A", "B", "see [[en:Japan]]"), Label::NotClassified);
        assert_eq!(label_of(&rules, "en", "A", "B", "[[en:Japan]] [[fr:Japon]]"), Label::InterwikiCleanupM2);
        assert_eq!(label_of(&rules, "en", "A", "B", "[[WP:CFD]]"), Label::NotClassified);
    }

    #[test]
    fn shipped_rules_cover_vocabulary() {
        let rules = RuleSet::shipped();
        assert!(rules.len() >= 60, "only {} rules", rules.len());
        let assignable: BTreeSet<Label> = Label::ALL.into_iter().filter(|&l| l != Label::NotClassified).collect();
        assert_eq!(rules.labels(), assignable);
    }

    #[test]
    fn shipped_rules_examples() {
        let rules = RuleSet::shipped();
        assert_eq!(
            label_of(&rules, "en", "CyberBot II", "AnomieBOT", "Rescuing 1 sources. #IABot"),
            Label::IdentifiedBotfight
        );
        assert_eq!(
            label_of(
                &rules,
                "en",
                "SomeBot",
                "OtherBot",
                "Undoing massive unnecessary addition of infoboxneeded by a (now blocked) bot."
            ),
            Label::IdentifiedBotfight
        );
        assert_eq!(label_of(&rules, "es", "A", "B", "robot: según [[WP:...]]"), Label::OtherClassified);
        assert_eq!(
            label_of(&rules, "en", "DarknessBot", "Xqbot", "Robot: Fixing double redirect to [[Japan–United States relations]]"),
            Label::FixingDoubleRedirect
        );
        assert_eq!(classify(revert("en", "A", "B", Some("")), &rules).label, Label::NotClassified);
        assert_eq!(classify(revert("en", "A", "B", None), &rules).label, Label::NotClassified);
    }

    #[test]
    fn no_shipped_rule_matches_empty_comment() {
        let rules = RuleSet::shipped();
        for rule in rules.rules() {
            assert!(!rule.comment_matches("", "en"), "rule {} matches empty", rule.priority);
        }
    }

    #[test]
    fn proportions_of_unclassified() {
        let classified: Vec<ClassifiedRevert> = (0..5)
            .map(|_| classify(revert("en", "A", "B", None), &RuleSet::empty()))
            .collect();
        let props = class_proportions(&classified);
        assert_eq!(props.share("en", Label::NotClassified), 1.0);
        assert_eq!(props.total("en"), 5);
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(validation_sample_size(20_000), 200);
        assert_eq!(validation_sample_size(10_000), 100);
        assert_eq!(validation_sample_size(10_001), 100);
        assert_eq!(validation_sample_size(500), 100);
        assert_eq!(validation_sample_size(40), 40);
    }

    #[test]
    fn sampling_errors() {
        let classified = vec![classify(revert("en", "A", "B", None), &RuleSet::empty())];
        assert!(matches!(
            sample_for_validation(&classified, Label::TemplateWork, 1),
            Err(Error::LabelAbsent(_))
        ));
        assert!(matches!("bogus".parse::<Label>(), Err(Error::UnknownLabel(_))));
        assert_eq!(sample_for_validation(&classified, Label::NotClassified, 1).unwrap().len(), 1);
    }
}
