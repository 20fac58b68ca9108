//! Output tables, plots and the markdown summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::classify::{sample_for_validation, ClassProportions, ClassifiedRevert, Label};
use crate::error::{Error, Result};
use crate::metrics::{
    bot_edit_share, pair_histogram, pair_page_stats, reciprocation_shares, ttr_kde, ttr_summary, yearly_counts,
    GroupBy, KdeCurve, ReciprocationShares, RevertRecord, TtrSummary, YearlyCount,
};
use crate::screen::ScreenResult;

/// A directory whose files only appear in the destination once every
/// stage has succeeded. Dropping it uncommitted removes the staged files.
pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    files: BTreeSet<String>,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        std::fs::create_dir_all(target)?;
        let dir = target.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
            files: BTreeSet::new(),
            committed: false,
        })
    }

    /// Path to write `name` to; registers it for the commit.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.insert(name.to_string());
        self.dir.join(name)
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn file_names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(String::as_str)
    }

    /// Moves every staged file into the target directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let dest = self.target.join(name);
            std::fs::rename(self.dir.join(name), &dest)?;
            out.push(dest);
        }
        self.committed = true;
        std::fs::remove_dir_all(&self.dir)?;
        Ok(out)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}

pub fn write_jsonl<T: Serialize, W: Write + ?Sized>(out: &mut W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(crate::error::open_file(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

/// Serializes `rows` under an explicit header, so empty tables still
/// declare their columns.
pub fn write_csv<T: Serialize, W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// `grid,density` rows; header only when the curve is absent.
pub fn write_kde_csv<W: Write>(out: W, curve: Option<&KdeCurve>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["grid", "density"])?;
    if let Some(curve) = curve {
        for (x, y) in curve.grid.iter().zip(&curve.density) {
            writer.write_record([x.to_string(), y.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Label rows by wiki columns of shares.
pub fn write_proportions_csv<W: Write>(out: W, proportions: &ClassProportions) -> Result<()> {
    let wikis: Vec<&str> = proportions.wikis().collect();
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(std::iter::once("label").chain(wikis.iter().copied()))?;
    for label in Label::ALL {
        let mut row = vec![label.to_string()];
        row.extend(wikis.iter().map(|w| format!("{:.6}", proportions.share(w, label))));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Label rows by wiki columns of suspected-revert counts, plus a total.
pub fn write_screen_table_csv<W: Write>(out: W, result: &ScreenResult) -> Result<()> {
    let wikis: BTreeSet<&str> = result.counts.keys().map(|(w, _)| w.as_str()).collect();
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(std::iter::once("label").chain(wikis.iter().copied()).chain(["total"]))?;
    for label in Label::ALL {
        let counts: Vec<usize> = wikis.iter().map(|w| result.count(w, label)).collect();
        let mut row = vec![label.to_string()];
        row.extend(counts.iter().map(usize::to_string));
        row.push(counts.iter().sum::<usize>().to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

const YEARLY_HEADER: &[&str] = &["wiki", "year", "count"];
const TTR_HEADER: &[&str] = &[
    "wiki", "year", "class", "count", "mean_days", "median_days", "ci95_low", "ci95_high",
];
const PAIR_STATS_HEADER: &[&str] = &[
    "wiki", "page_id", "bot_a", "bot_b", "revert_count", "first_time", "last_time", "duration",
];

#[derive(Debug, Clone, Default)]
pub struct MetricsOptions {
    pub group_by: GroupBy,
    pub namespace: Option<i32>,
    pub kde: bool,
    pub kde_bandwidth: Option<f64>,
    pub bot_edit_counts: Option<std::collections::BTreeMap<String, u64>>,
    pub plots: bool,
}

/// What the metrics stage computed, for the report.
#[derive(Debug, Clone, Default)]
pub struct MetricsSummary {
    pub reverts: usize,
    pub yearly: Vec<YearlyCount>,
    pub ttr: Vec<TtrSummary>,
    pub pair_groups: usize,
    pub largest_group: usize,
    pub reciprocation: Option<ReciprocationShares>,
    pub kde_mode_days: Option<f64>,
}

fn curve_or_none(result: Result<KdeCurve>) -> Result<Option<KdeCurve>> {
    match result {
        Ok(curve) => Ok(Some(curve)),
        Err(Error::TooFewDistinct(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Writes the metrics tables (and plots when asked) for `reverts`.
pub fn write_metrics<R: RevertRecord + Sync>(
    staging: &mut Staging,
    reverts: &[R],
    options: &MetricsOptions,
) -> Result<MetricsSummary> {
    let selected: Vec<&R> = reverts
        .iter()
        .filter(|r| options.namespace.is_none_or(|ns| r.revert().namespace == ns))
        .collect();

    let yearly = yearly_counts(&selected, None);
    write_csv(staging.create("yearly_counts.csv")?, YEARLY_HEADER, &yearly)?;

    let ttr = ttr_summary(&selected, options.group_by);
    write_csv(staging.create("ttr_summary.csv")?, TTR_HEADER, &ttr)?;

    let stats = pair_page_stats(&selected);
    write_csv(staging.create("pair_stats.csv")?, PAIR_STATS_HEADER, &stats)?;
    let histogram = pair_histogram(&stats);
    write_csv(
        staging.create("pair_histogram.csv")?,
        &["reverts_in_group", "groups"],
        histogram.iter().map(|(k, n)| HistogramRow {
            reverts_in_group: *k,
            groups: *n,
        }),
    )?;
    let reciprocation = if histogram.is_empty() {
        None
    } else {
        Some(reciprocation_shares(&histogram)?)
    };
    write_csv(
        staging.create("reciprocation.csv")?,
        &["once_share", "twice_share", "more_share"],
        reciprocation.iter(),
    )?;

    let curve = if options.kde {
        let curve = curve_or_none(ttr_kde(&selected, options.kde_bandwidth))?;
        write_kde_csv(staging.create("kde.csv")?, curve.as_ref())?;
        curve
    } else {
        None
    };

    let labels: BTreeSet<Label> = if options.kde {
        selected.iter().filter_map(|r| r.label()).collect()
    } else {
        BTreeSet::new()
    };
    let mut class_curves = Vec::new();
    if !labels.is_empty() {
        let mut writer = csv::Writer::from_writer(staging.create("kde_by_class.csv")?);
        writer.write_record(["label", "grid", "density"])?;
        for label in labels {
            let members: Vec<&&R> = selected.iter().filter(|r| r.label() == Some(label)).collect();
            if let Some(curve) = curve_or_none(ttr_kde(&members, options.kde_bandwidth))? {
                for (x, y) in curve.grid.iter().zip(&curve.density) {
                    writer.write_record([label.to_string(), x.to_string(), y.to_string()])?;
                }
                class_curves.push((label.to_string(), curve));
            }
        }
        writer.flush()?;
    }

    if let Some(counts) = &options.bot_edit_counts {
        let shares = bot_edit_share(&selected, counts);
        write_csv(
            staging.create("bot_edit_share.csv")?,
            &["wiki", "share"],
            shares.iter().map(|(wiki, share)| ShareRow { wiki, share: *share }),
        )?;
    }

    if options.plots {
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for row in &yearly {
            match series.last_mut() {
                Some((wiki, points)) if *wiki == row.wiki => points.push((row.year as f64, row.count as f64)),
                _ => series.push((row.wiki.clone(), vec![(row.year as f64, row.count as f64)])),
            }
        }
        std::fs::write(
            staging.path("yearly_counts.svg"),
            line_plot_svg("Bot-bot reverts per year", "year", "reverts", &series),
        )?;
        let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        if let Some(c) = &curve {
            curves.push(("all".into(), curve_points(c)));
        }
        curves.extend(class_curves.iter().map(|(l, c)| (l.clone(), curve_points(c))));
        if options.kde {
            std::fs::write(
                staging.path("kde.svg"),
                line_plot_svg("Time to revert", "log10(days)", "density", &curves),
            )?;
        }
        let bars: Vec<(f64, f64)> = histogram.iter().map(|(k, n)| (*k as f64, *n as f64)).collect();
        std::fs::write(
            staging.path("pair_histogram.svg"),
            line_plot_svg("Reverts per bot pair and page", "reverts in group", "groups", &[("groups".into(), bars)]),
        )?;
    }

    Ok(MetricsSummary {
        reverts: selected.len(),
        yearly,
        ttr,
        pair_groups: stats.len(),
        largest_group: stats.iter().map(|s| s.revert_count).max().unwrap_or(0),
        reciprocation,
        kde_mode_days: curve.map(|c| 10f64.powf(c.mode()) - crate::metrics::LOG_EPSILON_DAYS),
    })
}

fn curve_points(curve: &KdeCurve) -> Vec<(f64, f64)> {
    curve.grid.iter().copied().zip(curve.density.iter().copied()).collect()
}

#[derive(Serialize)]
struct HistogramRow {
    reverts_in_group: usize,
    groups: usize,
}

#[derive(Serialize)]
struct ShareRow<'a> {
    wiki: &'a str,
    share: f64,
}

/// Writes `classified.jsonl`, `proportions.csv` and a validation sample of
/// every label present.
pub fn write_classification(staging: &mut Staging, classified: &[ClassifiedRevert], seed: u64) -> Result<ClassProportions> {
    write_jsonl(&mut staging.create("classified.jsonl")?, classified)?;
    let proportions = crate::classify::class_proportions(classified);
    write_proportions_csv(staging.create("proportions.csv")?, &proportions)?;
    let present: BTreeSet<Label> = classified.iter().map(|c| c.label).collect();
    let mut sample = staging.create("validation_sample.jsonl")?;
    for label in present {
        write_jsonl(&mut sample, sample_for_validation(classified, label, seed)?)?;
    }
    Ok(proportions)
}

pub fn write_screen(staging: &mut Staging, result: &ScreenResult) -> Result<()> {
    write_jsonl(&mut staging.create("suspected.jsonl")?, &result.suspected)?;
    write_screen_table_csv(staging.create("table3.csv")?, result)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// A plain SVG line chart with axes, tick labels and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 70.0, 160.0, 40.0, 50.0);
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - y / y1 * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y1 * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(fx),
            h - bottom + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (left + w - right) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            w - right + 12.0,
            ly,
            w - right + 26.0,
            ly + 9.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Inputs to the markdown summary.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs<'a> {
    pub pages: u64,
    pub revisions: u64,
    pub identity_reverts: u64,
    pub warnings: u64,
    pub metrics: Option<&'a MetricsSummary>,
    pub proportions: Option<&'a ClassProportions>,
    pub screen: Option<&'a ScreenResult>,
}

pub fn render_report(inputs: &ReportInputs<'_>) -> String {
    let mut md = String::from("# Bot-bot revert report\n\n");
    if inputs.revisions > 0 {
        let _ = writeln!(
            md,
            "Scanned {} revisions on {} pages and found {} identity reverts.",
            inputs.revisions, inputs.pages, inputs.identity_reverts
        );
    }
    if inputs.warnings > 0 {
        let _ = writeln!(md, "{} input records were skipped; see the manifest.", inputs.warnings);
    }
    if let Some(m) = inputs.metrics {
        let _ = writeln!(md, "\n## Bot-bot reverts\n\n{} reverts in {} pair-page groups.\n", m.reverts, m.pair_groups);
        if !m.yearly.is_empty() {
            md.push_str("| wiki | year | reverts |\n|---|---|---|\n");
            for y in &m.yearly {
                let _ = writeln!(md, "| {} | {} | {} |", y.wiki, y.year, y.count);
            }
        }
        if !m.ttr.is_empty() {
            md.push_str("\n### Time to revert (days)\n\n| wiki | year | class | n | mean | median | 95% CI |\n|---|---|---|---|---|---|---|\n");
            for t in &m.ttr {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {:.2} | {:.2} | {:.2} to {:.2} |",
                    t.wiki,
                    t.year.map(|y| y.to_string()).unwrap_or_default(),
                    t.class.map(|c| c.to_string()).unwrap_or_default(),
                    t.count,
                    t.mean_days,
                    t.median_days,
                    t.ci95_low,
                    t.ci95_high
                );
            }
        }
        if let Some(days) = m.kde_mode_days {
            let _ = writeln!(md, "\nThe time-to-revert density peaks near {days:.2} days.");
        }
        if let Some(r) = m.reciprocation {
            let _ = writeln!(
                md,
                "\n### Reciprocation\n\n{:.1}% of reverts are the only revert between their bot pair on that page, {:.1}% are in a pair reverting twice and {:.1}% in longer exchanges (largest: {} reverts).",
                100.0 * r.once_share,
                100.0 * r.twice_share,
                100.0 * r.more_share,
                m.largest_group
            );
        }
    }
    if let Some(p) = inputs.proportions {
        let wikis: Vec<&str> = p.wikis().collect();
        if !wikis.is_empty() {
            md.push_str("\n## Classification\n\n| label |");
            for w in &wikis {
                let _ = write!(md, " {w} |");
            }
            md.push_str("\n|---|");
            md.push_str(&"---|".repeat(wikis.len()));
            md.push('\n');
            for label in Label::ALL {
                let _ = write!(md, "| {label} |");
                for w in &wikis {
                    let _ = write!(md, " {:.1}% |", 100.0 * p.share(w, label));
                }
                md.push('\n');
            }
        }
    }
    if let Some(s) = inputs.screen {
        let flagged = s.conflict_indicative().count();
        let _ = writeln!(
            md,
            "\n## Screen\n\n{} reverts are fast and reciprocated; {} of them carry a label suggesting conflict.",
            s.total(),
            flagged
        );
    }
    md
}
