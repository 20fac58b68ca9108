use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};

use botrevert::classify::{classify, sample_for_validation, ClassifiedRevert, Label, RuleSet};
use botrevert::detect::{DirectedBotRevert, DEFAULT_RADIUS};
use botrevert::ingest::{write_page_jsonl, IngestOptions, InputFormat};
use botrevert::metrics::GroupBy;
use botrevert::pipeline::{detect_stream, format_for_path, load_roster, open_pages, run_pipeline, PipelineConfig};
use botrevert::report::{
    read_jsonl, render_report, write_classification, write_jsonl, write_metrics, write_proportions_csv, write_screen,
    MetricsOptions, ReportInputs, Staging,
};
use botrevert::revision::parse_timestamp;
use botrevert::roster::{merge_sources, BotRoster};
use botrevert::screen::{screen, ScreenConfig, DEFAULT_MIN_PAIR_REVERTS, DEFAULT_TTR_DAYS};
use botrevert::synth::{generate, read_truth, score, ScenarioKind, SynthScenario};
use botrevert::Error;

/// Bot-bot revert analysis over MediaWiki revision histories.
#[derive(Parser)]
#[command(name = "botrevert", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Wiki code for inputs that do not carry one
    #[arg(long, global = true)]
    wiki: Option<String>,
    /// Restrict metrics to one namespace
    #[arg(long, global = true)]
    namespace: Option<i32>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Drop revisions after this time (ISO 8601)
    #[arg(long, global = true)]
    cutoff: Option<String>,
    /// Input format; guessed from the extension when absent
    #[arg(long, global = true)]
    input_format: Option<InputFormat>,
    /// JSONL input already has each page's lines together
    #[arg(long, global = true)]
    sorted_input: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a stub-meta-history XML dump (or JSONL) to revision JSONL
    Ingest { input: PathBuf },
    /// Build the bot roster
    #[command(subcommand)]
    Roster(RosterCommand),
    /// Find identity reverts between roster bots
    Detect {
        input: PathBuf,
        #[arg(long)]
        roster: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: usize,
        /// Keep every identity revert, not only bot-bot ones
        #[arg(long)]
        all_reverts: bool,
        /// Keep bots reverting themselves
        #[arg(long)]
        include_self: bool,
    },
    /// Yearly counts, time to revert and reciprocation tables
    Metrics {
        /// reverts.jsonl or classified.jsonl
        input: PathBuf,
        #[arg(long, default_value = "wiki")]
        group_by: GroupBy,
        #[arg(long)]
        kde: bool,
        #[arg(long)]
        bandwidth: Option<f64>,
        /// wiki<TAB>count file of total bot edits
        #[arg(long)]
        bot_edit_counts: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
    },
    /// Label reverts by edit summary
    Classify {
        input: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Only sample this label for validation
        #[arg(long)]
        sample_label: Option<String>,
    },
    /// Keep fast, reciprocated reverts
    Screen {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TTR_DAYS as f64)]
        ttr_days: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_PAIR_REVERTS)]
        min_pair: usize,
    },
    /// Generate a labeled synthetic corpus
    Synth(SynthArgs),
    /// Score pipeline output against synthetic ground truth
    Score {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        classified: PathBuf,
        #[arg(long)]
        suspected: Option<PathBuf>,
    },
    /// Render report.md (and plots) from classify and screen outputs
    Report {
        /// Directory holding classified.jsonl and optionally suspected.jsonl
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Run every stage in one go
    Run {
        input: PathBuf,
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: usize,
        #[arg(long)]
        include_self: bool,
        #[arg(long, default_value_t = DEFAULT_TTR_DAYS as f64)]
        ttr_days: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_PAIR_REVERTS)]
        min_pair: usize,
        #[arg(long, default_value = "wiki")]
        group_by: GroupBy,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        bot_edit_counts: Option<PathBuf>,
        /// Also write every identity revert
        #[arg(long)]
        all_reverts: bool,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Subcommand)]
enum RosterCommand {
    /// Merge group, former-group and category member lists
    Build {
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        former_groups: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        /// Output roster JSONL; defaults to <out-dir>/roster.jsonl
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kind: ScenarioKind,
    #[arg(long)]
    pages: Option<usize>,
    #[arg(long)]
    bots: Option<usize>,
    /// Renames, cycles or reverts per page, depending on the kind
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    rename_interval_days: Option<f64>,
    #[arg(long)]
    latency_hours: Option<f64>,
    #[arg(long)]
    duration_days: Option<f64>,
}

impl Global {
    fn ingest_options(&self) -> anyhow::Result<IngestOptions> {
        Ok(IngestOptions {
            wiki: self.wiki.clone(),
            cutoff: self.cutoff.as_deref().map(parse_timestamp).transpose()?,
            sorted_input: self.sorted_input,
        })
    }

    fn format_for(&self, input: &Path) -> InputFormat {
        self.input_format.unwrap_or_else(|| format_for_path(input))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

// Error chain without causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

// Bad parameters are usage errors; everything else is a data error.
fn exit_code(e: &anyhow::Error) -> u8 {
    let mut core = e.downcast_ref::<Error>();
    while let Some(Error::Stage { source, .. }) = core {
        core = Some(source);
    }
    match core {
        Some(Error::Config(_) | Error::UnknownLabel(_)) => 1,
        None if e.downcast_ref::<Usage>().is_some() => 1,
        _ => 2,
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { input } => {
            let reader = open_pages(&input, g.format_for(&input), g.ingest_options()?)?;
            let warnings = reader.warnings();
            let mut staging = Staging::new(&g.out_dir)?;
            let mut out = staging.create("revisions.jsonl")?;
            let mut pages = 0u64;
            for page in reader {
                write_page_jsonl(&page?, &mut out)?;
                pages += 1;
            }
            out.flush()?;
            drop(out);
            staging.commit()?;
            report_warnings(warnings.total());
            eprintln!("wrote {pages} pages");
        }
        Command::Roster(RosterCommand::Build {
            groups,
            former_groups,
            categories,
            out,
        }) => {
            let open = |p: &Path| -> anyhow::Result<BufReader<File>> { Ok(BufReader::new(botrevert::error::open_file(p)?)) };
            let roster = merge_sources(open(&groups)?, open(&former_groups)?, open(&categories)?)?;
            let out = out.unwrap_or_else(|| g.out_dir.join("roster.jsonl"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let mut w = BufWriter::new(File::create(&out)?);
            roster.write_jsonl(&mut w)?;
            w.flush()?;
            for (source, n) in roster.source_counts() {
                eprintln!("{source}: {n}");
            }
            eprintln!("{} accounts, {} rows skipped", roster.len(), roster.skipped_rows());
        }
        Command::Detect {
            input,
            roster,
            radius,
            all_reverts,
            include_self,
        } => {
            let roster = match (&roster, all_reverts) {
                (Some(path), _) => load_roster(path)?,
                (None, true) => BotRoster::default(),
                (None, false) => bail!(Usage("detect needs --roster unless --all-reverts is set".into())),
            };
            let reader = open_pages(&input, g.format_for(&input), g.ingest_options()?)?;
            let mut staging = Staging::new(&g.out_dir)?;
            let mut out = staging.create("reverts.jsonl")?;
            let outcome = if all_reverts {
                detect_stream(reader, radius, &roster, include_self, Some(&mut out))?
            } else {
                let outcome = detect_stream(reader, radius, &roster, include_self, None)?;
                write_jsonl(&mut out, &outcome.bot_reverts)?;
                outcome
            };
            out.flush()?;
            drop(out);
            staging.commit()?;
            report_warnings(outcome.warnings.total());
            eprintln!(
                "{} pages, {} revisions, {} identity reverts, {} bot-bot",
                outcome.pages,
                outcome.revisions,
                outcome.identity_reverts,
                outcome.bot_reverts.len()
            );
        }
        Command::Metrics {
            input,
            group_by,
            kde,
            bandwidth,
            bot_edit_counts,
            plots,
        } => {
            let options = MetricsOptions {
                group_by,
                namespace: g.namespace,
                kde,
                kde_bandwidth: bandwidth,
                bot_edit_counts: bot_edit_counts
                    .map(|p| -> anyhow::Result<_> {
                        Ok(botrevert::metrics::read_bot_edit_counts(BufReader::new(botrevert::error::open_file(&p)?))?)
                    })
                    .transpose()?,
                plots,
            };
            let mut staging = Staging::new(&g.out_dir)?;
            let summary = match read_records(&input)? {
                Records::Classified(c) => write_metrics(&mut staging, &c, &options)?,
                Records::Plain(r) => write_metrics(&mut staging, &r, &options)?,
            };
            staging.commit()?;
            eprintln!("{} reverts in {} pair-page groups", summary.reverts, summary.pair_groups);
        }
        Command::Classify {
            input,
            rules,
            sample_label,
        } => {
            let rules = match rules {
                Some(path) => RuleSet::load(&path)?,
                None => RuleSet::shipped(),
            };
            let reverts: Vec<DirectedBotRevert> = read_jsonl(&input)?;
            let classified: Vec<ClassifiedRevert> = reverts.into_iter().map(|r| classify(r, &rules)).collect();
            let mut staging = Staging::new(&g.out_dir)?;
            match sample_label {
                None => {
                    write_classification(&mut staging, &classified, g.seed)?;
                }
                Some(label) => {
                    let label: Label = label.parse()?;
                    let sample = sample_for_validation(&classified, label, g.seed)?;
                    write_jsonl(&mut staging.create("classified.jsonl")?, &classified)?;
                    let proportions = botrevert::classify::class_proportions(&classified);
                    write_proportions_csv(staging.create("proportions.csv")?, &proportions)?;
                    write_jsonl(&mut staging.create("validation_sample.jsonl")?, sample)?;
                }
            }
            staging.commit()?;
            eprintln!("classified {} reverts", classified.len());
        }
        Command::Screen {
            input,
            ttr_days,
            min_pair,
        } => {
            let config = ScreenConfig::new(ttr_days, min_pair)?;
            let classified: Vec<ClassifiedRevert> = read_jsonl(&input)?;
            let result = screen(&classified, &config)?;
            let mut staging = Staging::new(&g.out_dir)?;
            write_screen(&mut staging, &result)?;
            staging.commit()?;
            eprintln!("{} of {} reverts kept", result.suspected.len(), classified.len());
        }
        Command::Synth(args) => {
            let mut scenario = SynthScenario::new(args.kind, g.seed);
            if let Some(wiki) = &g.wiki {
                scenario.wiki = wiki.clone();
            }
            scenario.pages = args.pages.unwrap_or(scenario.pages);
            scenario.bots = args.bots.unwrap_or(scenario.bots);
            scenario.events = args.events.unwrap_or(scenario.events);
            scenario.rename_interval_days = args.rename_interval_days.unwrap_or(scenario.rename_interval_days);
            scenario.bot_latency_hours = args.latency_hours.unwrap_or(scenario.bot_latency_hours);
            scenario.duration_days = args.duration_days.unwrap_or(scenario.duration_days);
            let corpus = generate(&scenario)?;
            let mut staging = Staging::new(&g.out_dir)?;
            let mut w = staging.create("corpus.jsonl")?;
            corpus.write_corpus(&mut w)?;
            w.flush()?;
            let mut w = staging.create("truth.jsonl")?;
            corpus.write_truth(&mut w)?;
            w.flush()?;
            let mut w = staging.create("roster.tsv")?;
            corpus.write_roster(&mut w)?;
            w.flush()?;
            drop(w);
            staging.commit()?;
            eprintln!(
                "{} pages, {} revisions, {} expected reverts",
                corpus.pages.len(),
                corpus.revision_count(),
                corpus.expected_reverts().count()
            );
        }
        Command::Score {
            truth,
            classified,
            suspected,
        } => {
            let truth = read_truth(BufReader::new(botrevert::error::open_file(&truth)?))?;
            let classified: Vec<ClassifiedRevert> = read_jsonl(&classified)?;
            let suspected: Option<Vec<ClassifiedRevert>> = suspected.map(|p| read_jsonl(&p)).transpose()?;
            let report = score(&classified, suspected.as_deref(), &truth)?;
            let json = serde_json::to_string_pretty(&report)?;
            let mut staging = Staging::new(&g.out_dir)?;
            std::fs::write(staging.path("score.json"), format!("{json}\n"))?;
            staging.commit()?;
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = writeln!(stdout, "{json}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
        Command::Report { from, plots } => {
            let classified: Vec<ClassifiedRevert> = read_jsonl(&from.join("classified.jsonl"))?;
            let suspected_path = from.join("suspected.jsonl");
            let screened = if suspected_path.exists() {
                let suspected: Vec<ClassifiedRevert> = read_jsonl(&suspected_path)?;
                let mut result = botrevert::screen::ScreenResult::default();
                for c in &suspected {
                    *result.counts.entry((c.revert.wiki.clone(), c.label)).or_default() += 1;
                }
                result.suspected = suspected;
                Some(result)
            } else {
                None
            };
            let mut staging = Staging::new(&g.out_dir)?;
            let options = MetricsOptions {
                namespace: g.namespace,
                kde: true,
                plots,
                group_by: "wiki,class".parse()?,
                ..MetricsOptions::default()
            };
            let metrics = write_metrics(&mut staging, &classified, &options)?;
            let proportions = botrevert::classify::class_proportions(&classified);
            let md = render_report(&ReportInputs {
                metrics: Some(&metrics),
                proportions: Some(&proportions),
                screen: screened.as_ref(),
                ..ReportInputs::default()
            });
            std::fs::write(staging.path("report.md"), md)?;
            staging.commit()?;
        }
        Command::Run {
            input,
            roster,
            rules,
            radius,
            include_self,
            ttr_days,
            min_pair,
            group_by,
            bandwidth,
            bot_edit_counts,
            all_reverts,
            plots,
        } => {
            let mut config = PipelineConfig::new(&input, roster, &g.out_dir);
            config.format = g.format_for(&input);
            config.ingest = g.ingest_options()?;
            config.rules = rules;
            config.radius = radius;
            config.include_self = include_self;
            config.screen = ScreenConfig::new(ttr_days, min_pair)?;
            config.group_by = group_by;
            config.namespace = g.namespace;
            config.kde_bandwidth = bandwidth;
            config.bot_edit_counts = bot_edit_counts;
            config.seed = g.seed;
            config.all_reverts = all_reverts;
            config.plots = plots;
            let outcome = run_pipeline(&config)?;
            let c = &outcome.counts;
            report_warnings(c.skipped_revisions + c.skipped_lines + c.skipped_pages + c.after_cutoff);
            eprintln!(
                "{} pages, {} revisions, {} bot-bot reverts, {} suspected; wrote {} files to {}",
                c.pages,
                c.revisions,
                c.bot_reverts,
                c.suspected,
                outcome.outputs.len(),
                g.out_dir.display()
            );
        }
    }
    Ok(())
}

fn report_warnings(n: u64) {
    if n > 0 {
        eprintln!("warning: skipped {n} malformed or out-of-range records");
    }
}

enum Records {
    Classified(Vec<ClassifiedRevert>),
    Plain(Vec<DirectedBotRevert>),
}

// Metrics accept either detect or classify output.
fn read_records(path: &Path) -> anyhow::Result<Records> {
    match read_jsonl::<ClassifiedRevert>(path) {
        Ok(c) => Ok(Records::Classified(c)),
        Err(_) => Ok(Records::Plain(read_jsonl(path)?)),
    }
}
