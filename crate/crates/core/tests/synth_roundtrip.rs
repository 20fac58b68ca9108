use botrevert::classify::Label;
use botrevert::pipeline::{run_pipeline, PipelineConfig};
use botrevert::report::read_jsonl;
use botrevert::synth::{generate, read_truth, score, ScenarioKind, SynthScenario};

fn run(scenario: &SynthScenario, radius: usize) -> (botrevert::synth::ScoreReport, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(scenario).unwrap();
    corpus.write_dir(dir.path()).unwrap();
    let mut config = PipelineConfig::new(
        dir.path().join("corpus.jsonl"),
        dir.path().join("roster.tsv"),
        dir.path().join("out"),
    );
    config.radius = radius;
    config.plots = false;
    let outcome = run_pipeline(&config).unwrap();
    let suspected = read_jsonl(&dir.path().join("out/suspected.jsonl")).unwrap();
    let truth = read_truth(std::io::BufReader::new(std::fs::File::open(dir.path().join("truth.jsonl")).unwrap())).unwrap();
    (score(&outcome.classified, Some(&suspected), &truth).unwrap(), dir)
}

#[test]
fn every_kind_scores_perfectly_at_default_radius() {
    for kind in ScenarioKind::ALL {
        let (report, _dir) = run(&SynthScenario::new(kind, 21), 15);
        assert!(report.detection.is_perfect(), "{kind}: {:?}", report);
        assert!(report.classification.is_perfect(), "{kind}: {:?}", report.classification);
        assert!(report.screening.unwrap().is_perfect(), "{kind}: {:?}", report.screening);
    }
}

#[test]
fn other_wikis_classify_in_their_own_language() {
    for wiki in ["de", "fr", "es", "pt", "ja", "zh"] {
        for kind in [ScenarioKind::DoubleRedirect, ScenarioKind::Interwiki] {
            let mut s = SynthScenario::new(kind, 5);
            s.wiki = wiki.into();
            s.pages = 3;
            s.events = 6;
            let (report, _dir) = run(&s, 15);
            assert!(report.classification.is_perfect(), "{wiki} {kind}: {:?}", report.classification);
        }
    }
}

#[test]
fn two_renames_two_bots_give_a_redirect_revert() {
    let mut s = SynthScenario::new(ScenarioKind::DoubleRedirect, 9);
    s.bots = 2;
    s.events = 2;
    let dir = tempfile::tempdir().unwrap();
    generate(&s).unwrap().write_dir(dir.path()).unwrap();
    let mut config = PipelineConfig::new(
        dir.path().join("corpus.jsonl"),
        dir.path().join("roster.tsv"),
        dir.path().join("out"),
    );
    config.plots = false;
    let outcome = run_pipeline(&config).unwrap();
    assert!(!outcome.classified.is_empty());
    assert!(outcome.classified.iter().all(|c| c.label == Label::FixingDoubleRedirect));
}

#[test]
fn zero_bots_give_no_bot_reverts() {
    let mut s = SynthScenario::new(ScenarioKind::Mixed, 9);
    s.bots = 0;
    let (report, dir) = run(&s, 15);
    assert_eq!(report.detection.true_positives + report.detection.false_positives, 0);
    let reverts: Vec<serde_json::Value> = read_jsonl(&dir.path().join("out/reverts.jsonl")).unwrap();
    assert!(reverts.is_empty());
}

#[test]
fn too_small_radius_loses_recall() {
    let s = SynthScenario::new(ScenarioKind::OrphanTemplate, 3);
    let (full, _a) = run(&s, 3);
    assert!(full.detection.is_perfect());
    for radius in [1, 2] {
        let (report, _b) = run(&s, radius);
        assert!(report.detection.recall < 1.0, "radius {radius}");
        assert!(report.unexpected_rev_ids.is_empty(), "radius {radius}");
    }
}
