use std::collections::BTreeSet;

use proptest::prelude::*;

use botrevert::classify::{classify, RuleSet};
use botrevert::detect::{detect_reverts, DirectedBotRevert};
use botrevert::ingest::{parse_jsonl, parse_xml_dump, write_page_jsonl, IngestOptions};
use botrevert::metrics::{
    kde, log_days, pair_histogram, pair_page_stats, reciprocation_shares, ttr_summary, yearly_counts, GroupBy,
};
use botrevert::revision::{format_timestamp, parse_timestamp, PageHistory, RevisionMeta};
use botrevert::roster::{merge_sources, normalize_username};
use botrevert::screen::{screen, ScreenConfig};
use botrevert::synth::{generate, ScenarioKind, SynthScenario};

fn base_time() -> chrono::DateTime<chrono::Utc> {
    parse_timestamp("2006-01-01T00:00:00Z").unwrap()
}

prop_compose! {
    fn arb_revision(page_id: u64)(
        gap in 0i64..100_000,
        actor in prop::option::weighted(0.9, prop::sample::select(vec!["BotA", "BotB", "Some editor", "10.0.0.1", "Ünïcode"])),
        comment in prop::option::weighted(0.8, "[ -~äöü日本–]{0,24}"),
        checksum in prop::option::weighted(0.9, "[a-c]"),
    ) -> (i64, RevisionMeta) {
        (gap, RevisionMeta {
            wiki: "en".into(),
            page_id,
            namespace: 0,
            page_title: String::new(),
            rev_id: 0,
            timestamp: base_time(),
            actor: actor.map(str::to_string),
            comment,
            checksum,
        })
    }
}

prop_compose! {
    fn arb_page()(
        page_id in 1u64..1_000_000,
        ns in prop::sample::select(vec![0, 1, 4, 14]),
        title in "[A-Za-z0-9 &<>\"'–]{1,16}",
    )(
        revisions in prop::collection::vec(arb_revision(page_id), 1..40),
        page_id in Just(page_id),
        ns in Just(ns),
        title in Just(title),
    ) -> PageHistory {
        let mut t = base_time();
        let revisions = revisions
            .into_iter()
            .enumerate()
            .map(|(i, (gap, mut r))| {
                t += chrono::Duration::seconds(gap);
                r.rev_id = 1_000 + i as u64;
                r.timestamp = t;
                r.namespace = ns;
                r.page_title = title.clone();
                r
            })
            .collect();
        PageHistory::new("en", page_id, ns, title, revisions).unwrap()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn to_xml(page: &PageHistory) -> String {
    let mut xml = String::from("<mediawiki><siteinfo><dbname>enwiki</dbname></siteinfo><page>");
    xml += &format!(
        "<title>{}</title><ns>{}</ns><id>{}</id>",
        xml_escape(&page.title),
        page.namespace,
        page.page_id
    );
    for r in page.revisions() {
        xml += &format!("<revision><id>{}</id><timestamp>{}</timestamp>", r.rev_id, format_timestamp(&r.timestamp));
        xml += &match &r.actor {
            Some(a) if botrevert::roster::is_ip(a) => format!("<contributor><ip>{a}</ip></contributor>"),
            Some(a) => format!("<contributor><username>{}</username><id>1</id></contributor>", xml_escape(a)),
            None => "<contributor deleted=\"deleted\"/>".into(),
        };
        xml += &match &r.comment {
            Some(c) if c.is_empty() => "<comment/>".into(),
            Some(c) => format!("<comment>{}</comment>", xml_escape(c)),
            None => "<comment deleted=\"deleted\"/>".into(),
        };
        xml += &match &r.checksum {
            Some(c) => format!("<sha1>{c}</sha1>"),
            None => "<sha1/>".into(),
        };
        xml += "</revision>";
    }
    xml + "</page></mediawiki>"
}

fn page_from_checksums(checksums: &[Option<u8>]) -> PageHistory {
    let revisions = checksums
        .iter()
        .enumerate()
        .map(|(i, c)| RevisionMeta {
            wiki: "en".into(),
            page_id: 1,
            namespace: 0,
            page_title: "P".into(),
            rev_id: i as u64 + 1,
            timestamp: base_time() + chrono::Duration::seconds(i as i64),
            actor: Some(if i % 2 == 0 { "BotA" } else { "BotB" }.into()),
            comment: None,
            checksum: c.map(|d| ((b'a' + d) as char).to_string()),
        })
        .collect();
    PageHistory::new("en", 1, 0, "P", revisions).unwrap()
}

prop_compose! {
    fn arb_revert()(
        wiki in prop::sample::select(vec!["en", "de", "ja"]),
        page_id in 1u64..6,
        bots in prop::sample::subsequence(vec!["BotA", "BotB", "BotC", "BotD"], 2),
        flip in any::<bool>(),
        ttr in 1i64..(400 * 86_400),
        at in 0i64..(10 * 365 * 86_400),
        rev in 1u64..1_000_000,
        comment in prop::option::of(prop::sample::select(vec![
            "Robot: Fixing double redirect to [[X]]",
            "revert",
            "Rescuing 1 sources. #IABot",
            "tidy",
        ])),
    ) -> DirectedBotRevert {
        use chrono::Datelike;
        let (a, b) = if flip { (bots[0], bots[1]) } else { (bots[1], bots[0]) };
        let t = base_time() + chrono::Duration::seconds(at);
        DirectedBotRevert {
            wiki: wiki.into(),
            page_id,
            namespace: 0,
            title: format!("Page {page_id}"),
            reverting_bot: a.into(),
            reverted_bot: b.into(),
            reverting_rev_id: rev,
            reverted_rev_id: rev + 1_000_000,
            reverted_to_rev_id: rev + 2_000_000,
            reverting_time: t,
            reverted_time: t - chrono::Duration::seconds(ttr),
            comment: comment.map(str::to_string),
            time_to_revert: ttr,
            year: t.year(),
        }
    }
}

// The shipped rules plus a top-priority rule that cannot match.
static EXTENDED_RULES: std::sync::LazyLock<RuleSet> = std::sync::LazyLock::new(|| {
    let text = format!("0\tother_classified\tx\\by\n{}", botrevert::classify::DEFAULT_RULES);
    RuleSet::parse(text.as_bytes(), "extended").unwrap()
});

fn shuffled<T: Clone + std::fmt::Debug>(v: Vec<T>) -> impl Strategy<Value = (Vec<T>, Vec<T>)> {
    Just(v.clone()).prop_shuffle().prop_map(move |s| (v.clone(), s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jsonl_round_trip(page in arb_page()) {
        let mut buf = Vec::new();
        write_page_jsonl(&page, &mut buf).unwrap();
        let pages: Vec<PageHistory> = parse_jsonl(&buf[..], IngestOptions::default())
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(pages, vec![page]);
    }

    #[test]
    fn xml_and_jsonl_agree(page in arb_page()) {
        let xml = to_xml(&page);
        let from_xml: Vec<PageHistory> = parse_xml_dump(xml.as_bytes(), IngestOptions::default())
            .collect::<Result<_, _>>()
            .unwrap();
        let mut buf = Vec::new();
        write_page_jsonl(&page, &mut buf).unwrap();
        let from_jsonl: Vec<PageHistory> = parse_jsonl(&buf[..], IngestOptions::default())
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(&from_xml, &from_jsonl);
        prop_assert_eq!(from_xml, vec![page]);
    }

    #[test]
    fn revert_events_are_well_formed(
        checksums in prop::collection::vec(prop::option::weighted(0.85, 0u8..4), 0..60),
        radius in 1usize..20,
    ) {
        let page = page_from_checksums(&checksums);
        let revs = page.revisions();
        for e in detect_reverts(&page, radius) {
            let i = (e.reverting.rev_id - 1) as usize;
            let j = (e.reverted_to.rev_id - 1) as usize;
            prop_assert!(j + 1 < i && i - j <= radius);
            prop_assert!(e.reverting.checksum.is_some());
            prop_assert_eq!(&e.reverting.checksum, &e.reverted_to.checksum);
            prop_assert_eq!(&e.reverted[..], &revs[j + 1..i]);
            prop_assert!(e.reverted.iter().all(|r| r.checksum != e.reverting.checksum));
            prop_assert!(e.reverting.timestamp >= e.reverted_to.timestamp);
        }
        prop_assert_eq!(detect_reverts(&page, radius), detect_reverts(&page, radius));
    }

    #[test]
    fn larger_radius_keeps_events(
        checksums in prop::collection::vec(prop::option::weighted(0.9, 0u8..5), 0..60),
        small in 1usize..10,
        extra in 0usize..10,
    ) {
        let page = page_from_checksums(&checksums);
        let key = |r: usize| -> BTreeSet<(u64, u64)> {
            detect_reverts(&page, r).iter().map(|e| (e.reverting.rev_id, e.reverted_to.rev_id)).collect()
        };
        prop_assert!(key(small).is_subset(&key(small + extra)));
    }

    #[test]
    fn metrics_ignore_input_order(
        (original, permuted) in prop::collection::vec(arb_revert(), 1..60).prop_flat_map(shuffled),
    ) {
        let group = GroupBy { year: true, class: false };
        prop_assert_eq!(yearly_counts(&original, None), yearly_counts(&permuted, None));
        prop_assert_eq!(ttr_summary(&original, group), ttr_summary(&permuted, group));
        prop_assert_eq!(pair_page_stats(&original), pair_page_stats(&permuted));
        let values = |v: &[DirectedBotRevert]| v.iter().map(|r| log_days(r.time_to_revert)).collect::<Vec<_>>();
        match (kde(&values(&original), None), kde(&values(&permuted), None)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "KDE succeeded for only one ordering"),
        }
    }

    #[test]
    fn counting_identities(reverts in prop::collection::vec(arb_revert(), 1..80)) {
        let yearly: usize = yearly_counts(&reverts, None).iter().map(|y| y.count).sum();
        prop_assert_eq!(yearly, reverts.len());
        let histogram = pair_histogram(&pair_page_stats(&reverts));
        prop_assert_eq!(histogram.iter().map(|(k, n)| k * n).sum::<usize>(), reverts.len());
        let s = reciprocation_shares(&histogram).unwrap();
        prop_assert!((s.once_share + s.twice_share + s.more_share - 1.0).abs() <= 1e-9);
        let ttr_total: usize = ttr_summary(&reverts, GroupBy::default()).iter().map(|t| t.count).sum();
        prop_assert_eq!(ttr_total, reverts.len());
    }

    #[test]
    fn kde_is_a_density(values in prop::collection::vec(-3.0f64..4.0, 2..200)) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let curve = kde(&values, None).unwrap();
        prop_assert!(curve.density.iter().all(|d| *d >= 0.0));
        let area = curve.integral();
        prop_assert!((0.98..=1.02).contains(&area), "integral {}", area);
    }

    #[test]
    fn screen_is_a_monotone_filter(
        reverts in prop::collection::vec(arb_revert(), 0..60),
        days in 1.0f64..300.0,
        more in 0.0f64..200.0,
        min_pair in 2usize..5,
    ) {
        let classified: Vec<_> = reverts.into_iter().map(|r| classify(r, &RuleSet::shipped())).collect();
        let narrow = screen(&classified, &ScreenConfig::new(days, min_pair + 1).unwrap()).unwrap();
        let wider_time = screen(&classified, &ScreenConfig::new(days + more, min_pair + 1).unwrap()).unwrap();
        let lower_pair = screen(&classified, &ScreenConfig::new(days, min_pair).unwrap()).unwrap();
        let ids = |v: &[botrevert::classify::ClassifiedRevert]| -> Vec<u64> {
            v.iter().map(|c| c.revert.reverting_rev_id).collect()
        };
        let input: BTreeSet<u64> = ids(&classified).into_iter().collect();
        let narrow_ids: BTreeSet<u64> = ids(&narrow.suspected).into_iter().collect();
        prop_assert!(narrow_ids.is_subset(&input));
        prop_assert!(narrow_ids.is_subset(&ids(&wider_time.suspected).into_iter().collect()));
        prop_assert!(narrow_ids.is_subset(&ids(&lower_pair.suspected).into_iter().collect()));
        for result in [&narrow, &wider_time, &lower_pair] {
            prop_assert_eq!(result.total(), result.suspected.len());
        }
    }

    #[test]
    fn classification_is_pure(
        (original, permuted) in prop::collection::vec(arb_revert(), 0..40).prop_flat_map(shuffled),
    ) {
        let rules = RuleSet::shipped();
        let a: Vec<_> = original.iter().cloned().map(|r| classify(r, &rules)).collect();
        let b: Vec<_> = permuted.iter().cloned().map(|r| classify(r, &rules)).collect();
        for c in &b {
            let twin = a.iter().find(|x| x.revert == c.revert).unwrap();
            prop_assert_eq!(twin, c);
        }
    }

    #[test]
    fn never_matching_rule_changes_nothing(reverts in prop::collection::vec(arb_revert(), 0..40)) {
        let shipped = RuleSet::shipped();
        let extended = &*EXTENDED_RULES;
        prop_assert_eq!(extended.len(), shipped.len() + 1);
        for r in reverts {
            prop_assert_eq!(classify(r.clone(), &shipped), classify(r, extended));
        }
    }

    #[test]
    fn roster_merge_bounds(
        groups in prop::collection::vec("[a-d][a-c_ ]{0,2}[bB]ot", 0..12),
        former in prop::collection::vec("[a-d][a-c_ ]{0,2}[bB]ot", 0..12),
        categories in prop::collection::vec("[a-d][a-c_ ]{0,2}[bB]ot", 0..12),
    ) {
        let tsv = |names: &[String]| names.iter().map(|n| format!("en\t{n}\n")).collect::<String>();
        let roster = merge_sources(tsv(&groups).as_bytes(), tsv(&former).as_bytes(), tsv(&categories).as_bytes()).unwrap();
        let norm = |names: &[String]| names.iter().map(|n| normalize_username(n)).collect::<BTreeSet<_>>();
        let sets = [norm(&groups), norm(&former), norm(&categories)];
        for set in &sets {
            for name in set {
                prop_assert!(roster.is_bot("en", name));
                prop_assert_eq!(roster.is_bot("en", name), roster.is_bot("en", name));
            }
        }
        let total: usize = sets.iter().map(BTreeSet::len).sum();
        prop_assert!(roster.len() <= total);
        let disjoint = sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]);
        prop_assert_eq!(roster.len() == total, disjoint);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synth_is_seed_deterministic_and_consistent(
        seed in any::<u64>(),
        kind in prop::sample::select(ScenarioKind::ALL.to_vec()),
    ) {
        let mut scenario = SynthScenario::new(kind, seed);
        scenario.pages = scenario.pages.min(5);
        let a = generate(&scenario).unwrap();
        let b = generate(&scenario).unwrap();
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        a.write_corpus(&mut ja).unwrap();
        b.write_corpus(&mut jb).unwrap();
        prop_assert_eq!(ja, jb);
        prop_assert_eq!(&a.truth, &b.truth);
        if kind != ScenarioKind::BotfightPair && kind != ScenarioKind::Mixed {
            prop_assert!(a.truth.iter().all(|t| !t.expected_conflict));
        }
        // Every expected revert is a real identity revert at the default radius.
        let detected: BTreeSet<u64> = a
            .pages
            .iter()
            .flat_map(|p| detect_reverts(p, 15))
            .map(|e| e.reverting.rev_id)
            .collect();
        for t in a.truth.iter().filter(|t| t.expected_is_revert) {
            prop_assert!(detected.contains(&t.rev_id));
        }
    }
}
