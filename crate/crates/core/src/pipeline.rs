//! End-to-end runs: stream pages through detection, then classify, screen,
//! compute metrics and write everything into an output directory.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::classify::{classify, ClassifiedRevert, RuleSet};
use crate::detect::{filter_bot_bot, page_pairs, DirectedBotRevert, RevertPair, DEFAULT_RADIUS};
use crate::error::{Error, Result};
use crate::ingest::{IngestOptions, IngestWarnings, InputFormat, PageReader};
use crate::metrics::{read_bot_edit_counts, GroupBy};
use crate::report::{
    render_report, write_classification, write_jsonl, write_metrics, write_screen, MetricsOptions, ReportInputs,
    Staging,
};
use crate::revision::{format_timestamp, PageHistory};
use crate::roster::BotRoster;
use crate::screen::{screen, ScreenConfig};

// Pages are detected in parallel batches capped at this many revisions;
// a larger page forms a batch by itself.
const BATCH_REVISIONS: usize = 8_192;
const BATCH_PAGES: usize = 256;

/// Output of streaming detection.
#[derive(Debug, Default)]
pub struct DetectOutcome {
    pub bot_reverts: Vec<DirectedBotRevert>,
    pub pages: u64,
    pub revisions: u64,
    pub identity_reverts: u64,
    pub warnings: IngestWarnings,
}

/// Runs detection page by page. Only one batch of pages is held in memory;
/// every closest pair is passed to `all_pairs` when given, in input order.
pub fn detect_stream<R: BufRead>(
    mut reader: PageReader<R>,
    radius: usize,
    roster: &BotRoster,
    include_self: bool,
    mut all_pairs: Option<&mut dyn Write>,
) -> Result<DetectOutcome> {
    if radius == 0 {
        return Err(Error::Config("revert radius must be at least 1".into()));
    }
    let mut outcome = DetectOutcome::default();
    let mut batch: Vec<PageHistory> = Vec::new();
    let mut batch_revisions = 0;
    let mut flush = |batch: &mut Vec<PageHistory>, outcome: &mut DetectOutcome| -> Result<()> {
        let pairs: Vec<Vec<RevertPair>> = batch.par_iter().map(|p| page_pairs(p, radius)).collect();
        for page_pairs in &pairs {
            outcome.identity_reverts += page_pairs.len() as u64;
            if let Some(out) = all_pairs.as_deref_mut() {
                write_jsonl(out, page_pairs)?;
            }
            outcome.bot_reverts.extend(filter_bot_bot(page_pairs, roster, include_self));
        }
        batch.clear();
        Ok(())
    };
    for page in reader.by_ref() {
        let page = page?;
        outcome.pages += 1;
        outcome.revisions += page.len() as u64;
        if !batch.is_empty() && (batch_revisions + page.len() > BATCH_REVISIONS || batch.len() >= BATCH_PAGES) {
            flush(&mut batch, &mut outcome)?;
            batch_revisions = 0;
        }
        batch_revisions += page.len();
        batch.push(page);
    }
    flush(&mut batch, &mut outcome)?;
    outcome.warnings = reader.warnings();
    Ok(outcome)
}

/// Opens `path` (or stdin for `-`) as a page stream.
pub fn open_pages(path: &Path, format: InputFormat, options: IngestOptions) -> Result<PageReader<Box<dyn BufRead>>> {
    let input: Box<dyn BufRead> = if path == Path::new("-") {
        Box::new(BufReader::new(std::io::stdin()))
    } else {
        Box::new(BufReader::with_capacity(1 << 16, crate::error::open_file(path)?))
    };
    PageReader::new(input, format, options)
}

/// Guesses the input format from the file extension.
pub fn format_for_path(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json" | "ndjson") => InputFormat::Jsonl,
        _ => InputFormat::Xml,
    }
}

pub fn load_roster(path: &Path) -> Result<BotRoster> {
    BotRoster::read_any(BufReader::new(crate::error::open_file(path)?))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = crate::error::open_file(path)?;
    let mut buf = vec![0; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub ingest: IngestOptions,
    pub roster: PathBuf,
    pub rules: Option<PathBuf>,
    pub radius: usize,
    pub include_self: bool,
    pub screen: ScreenConfig,
    pub group_by: GroupBy,
    pub namespace: Option<i32>,
    pub kde_bandwidth: Option<f64>,
    pub bot_edit_counts: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub all_reverts: bool,
    pub plots: bool,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, roster: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let input = input.into();
        Self {
            format: format_for_path(&input),
            input,
            ingest: IngestOptions::default(),
            roster: roster.into(),
            rules: None,
            radius: DEFAULT_RADIUS,
            include_self: false,
            screen: ScreenConfig::default(),
            group_by: GroupBy::default(),
            namespace: None,
            kde_bandwidth: None,
            bot_edit_counts: None,
            seed: 0,
            out_dir: out_dir.into(),
            all_reverts: false,
            plots: false,
        }
    }

    /// Rejects configurations that reuse a path or write over an input.
    pub fn validate(&self) -> Result<()> {
        let mut paths = vec![&self.input, &self.roster];
        paths.extend(self.rules.iter());
        paths.extend(self.bot_edit_counts.iter());
        for (i, a) in paths.iter().enumerate() {
            if paths[..i].contains(a) {
                return Err(Error::Config(format!("{} is given for two inputs", a.display())));
            }
            if *a == &self.out_dir {
                return Err(Error::Config(format!("output directory {} is also an input", a.display())));
            }
        }
        if self.radius == 0 {
            return Err(Error::Config("revert radius must be at least 1".into()));
        }
        self.screen.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunCounts {
    pub pages: u64,
    pub revisions: u64,
    pub identity_reverts: u64,
    pub bot_reverts: usize,
    pub suspected: usize,
    pub skipped_revisions: u64,
    pub skipped_lines: u64,
    pub skipped_pages: u64,
    pub after_cutoff: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub counts: RunCounts,
    pub outputs: Vec<PathBuf>,
    pub classified: Vec<ClassifiedRevert>,
}

#[derive(Serialize)]
struct InputDigest {
    role: &'static str,
    path: String,
    sha256: Option<String>,
}

/// Creation time for manifests; `SOURCE_DATE_EPOCH` pins it for
/// reproducible output.
pub fn manifest_time() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    format_timestamp(&now)
}

/// Runs every stage. Outputs appear in `out_dir` only if all succeed.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    let roster = load_roster(&config.roster).map_err(|e| e.in_stage("roster"))?;
    let rules = match &config.rules {
        Some(path) => RuleSet::load(path),
        None => Ok(RuleSet::shipped()),
    }
    .map_err(|e| e.in_stage("classify"))?;
    let bot_edit_counts = config
        .bot_edit_counts
        .as_deref()
        .map(|p| -> Result<BTreeMap<String, u64>> { read_bot_edit_counts(BufReader::new(crate::error::open_file(p)?)) })
        .transpose()
        .map_err(|e| e.in_stage("metrics"))?;

    let mut staging = Staging::new(&config.out_dir)?;

    let detected = (|| {
        let reader = open_pages(&config.input, config.format, config.ingest.clone())?;
        let mut all = if config.all_reverts {
            Some(staging.create("all_reverts.jsonl")?)
        } else {
            None
        };
        let outcome = detect_stream(
            reader,
            config.radius,
            &roster,
            config.include_self,
            all.as_mut().map(|w| w as &mut dyn Write),
        )?;
        if let Some(mut w) = all {
            w.flush()?;
        }
        write_jsonl(&mut staging.create("reverts.jsonl")?, &outcome.bot_reverts)?;
        Ok(outcome)
    })()
    .map_err(|e: Error| e.in_stage("detect"))?;

    let classified: Vec<ClassifiedRevert> = detected
        .bot_reverts
        .par_iter()
        .map(|r| classify(r.clone(), &rules))
        .collect();
    let proportions = write_classification(&mut staging, &classified, config.seed).map_err(|e| e.in_stage("classify"))?;

    let screened = screen(&classified, &config.screen)
        .and_then(|s| write_screen(&mut staging, &s).map(|_| s))
        .map_err(|e| e.in_stage("screen"))?;

    let metrics_options = MetricsOptions {
        group_by: config.group_by,
        namespace: config.namespace,
        kde: true,
        kde_bandwidth: config.kde_bandwidth,
        bot_edit_counts,
        plots: config.plots,
    };
    let metrics = write_metrics(&mut staging, &classified, &metrics_options).map_err(|e| e.in_stage("metrics"))?;

    let w = &detected.warnings;
    let counts = RunCounts {
        pages: detected.pages,
        revisions: detected.revisions,
        identity_reverts: detected.identity_reverts,
        bot_reverts: classified.len(),
        suspected: screened.suspected.len(),
        skipped_revisions: w.skipped_revisions(),
        skipped_lines: w.skipped_lines(),
        skipped_pages: w.skipped_pages(),
        after_cutoff: w.after_cutoff(),
    };
    let report = render_report(&ReportInputs {
        pages: counts.pages,
        revisions: counts.revisions,
        identity_reverts: counts.identity_reverts,
        warnings: w.total(),
        metrics: Some(&metrics),
        proportions: Some(&proportions),
        screen: Some(&screened),
    });
    std::fs::write(staging.path("report.md"), report)?;

    let manifest = manifest_json(config, &counts, &staging).map_err(|e| e.in_stage("report"))?;
    std::fs::write(staging.path("manifest.json"), manifest)?;
    let outputs = staging.commit()?;
    Ok(RunOutcome {
        counts,
        outputs,
        classified,
    })
}

fn digest(role: &'static str, path: &Path) -> Result<InputDigest> {
    let sha256 = if path == Path::new("-") {
        None
    } else {
        Some(sha256_file(path)?)
    };
    Ok(InputDigest {
        role,
        path: path.display().to_string(),
        sha256,
    })
}

fn manifest_json(config: &PipelineConfig, counts: &RunCounts, staging: &Staging) -> Result<String> {
    let mut inputs = vec![digest("revisions", &config.input)?, digest("roster", &config.roster)?];
    if let Some(rules) = &config.rules {
        inputs.push(digest("rules", rules)?);
    }
    if let Some(counts) = &config.bot_edit_counts {
        inputs.push(digest("bot_edit_counts", counts)?);
    }
    let mut outputs: Vec<&str> = staging.file_names().collect();
    outputs.push("manifest.json");
    outputs.sort_unstable();
    outputs.dedup();
    let manifest = serde_json::json!({
        "tool": "botrevert",
        "version": env!("CARGO_PKG_VERSION"),
        "created": manifest_time(),
        "seed": config.seed,
        "parameters": {
            "input_format": config.format.to_string(),
            "wiki": config.ingest.wiki,
            "cutoff": config.ingest.cutoff.as_ref().map(format_timestamp),
            "sorted_input": config.ingest.sorted_input,
            "radius": config.radius,
            "include_self": config.include_self,
            "rules": config.rules.as_ref().map_or("shipped".to_string(), |p| p.display().to_string()),
            "ttr_threshold_seconds": config.screen.ttr_threshold,
            "min_pair_reverts": config.screen.min_pair_reverts,
            "group_by": group_by_name(config.group_by),
            "namespace": config.namespace,
            "kde_bandwidth": config.kde_bandwidth,
        },
        "inputs": inputs,
        "counts": counts,
        "outputs": outputs,
    });
    Ok(serde_json::to_string_pretty(&manifest)? + "\n")
}

pub fn group_by_name(group: GroupBy) -> String {
    let mut keys = vec!["wiki"];
    if group.year {
        keys.push("year");
    }
    if group.class {
        keys.push("class");
    }
    keys.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, ScenarioKind, SynthScenario};

    #[test]
    fn batching_preserves_page_order() {
        let corpus = generate(&SynthScenario::new(ScenarioKind::ProtectionTemplate, 4)).unwrap();
        let mut jsonl = Vec::new();
        corpus.write_corpus(&mut jsonl).unwrap();
        let mut roster = Vec::new();
        corpus.write_roster(&mut roster).unwrap();
        let roster = BotRoster::read_any(&roster[..]).unwrap();
        let reader = PageReader::new(&jsonl[..], InputFormat::Jsonl, IngestOptions::default()).unwrap();
        let out = detect_stream(reader, DEFAULT_RADIUS, &roster, false, None).unwrap();
        assert_eq!(out.pages, 100);
        assert_eq!(out.bot_reverts.len(), 10_000);
        let ids: Vec<u64> = out.bot_reverts.iter().map(|r| r.reverting_rev_id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn failed_run_leaves_no_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        std::fs::write(&input, "").unwrap();
        let roster = dir.path().join("roster.tsv");
        std::fs::write(&roster, "en\tXqbot\n").unwrap();
        let mut config = PipelineConfig::new(&input, &roster, dir.path().join("out"));
        config.rules = Some(dir.path().join("missing.tsv"));
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "classify", .. }), "{err}");
        assert!(!dir.path().join("out").exists() || std::fs::read_dir(dir.path().join("out")).unwrap().count() == 0);
    }

    #[test]
    fn sha256_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
