//! Report rendering: Markdown tables, a JSON dump of the full report, and
//! CSV files for features and plot data. Output depends only on the report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    ChiSquareComparison, ClassificationSection, ComparisonReport, FeatureComparison, LabelRecord,
    NonverbalSection, SectionStatus, VerbalSection,
};
use crate::schema::{Modality, Polarity};

pub const MARKDOWN_FILE: &str = "report.md";
pub const JSON_FILE: &str = "report.json";
pub const FEATURES_CSV: &str = "features.csv";
pub const NONVERBAL_CSV: &str = "nonverbal.csv";
pub const LABELS_FILE: &str = "labels.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Json, ReportFormat::Csv];
}

fn num(x: f64) -> String {
    format!("{x:.2}")
}

fn pval(p: f64) -> String {
    if p < 0.001 {
        "< .001".into()
    } else {
        format!("{p:.3}")
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v))
}

fn polarity_label(p: Polarity) -> &'static str {
    match p {
        Polarity::ExtrovertLeaning => "EXT",
        Polarity::IntrovertLeaning => "INT",
        Polarity::Neutral => "neutral",
    }
}

pub fn render_markdown(report: &ComparisonReport) -> String {
    let mut s = String::new();
    let run = &report.run;
    let _ = writeln!(s, "# Extraversion comparison report\n");
    let _ = writeln!(
        s,
        "Corpus `{}`: {} complete trials, {} personality-agent utterances (one turn = one {}).",
        &run.config_hash[..run.config_hash.len().min(12)],
        run.trials_complete,
        run.personality_utterances,
        run.turn_definition
    );
    if !run.trials_failed.is_empty() {
        let _ = writeln!(s, "\nExcluded incomplete trials: {}.", run.trials_failed.join(", "));
    }
    let _ = writeln!(s, "\nUnit of analysis: {}.", report.options.unit);
    if let Some(v) = &report.verbal {
        verbal_md(&mut s, v, report);
    }
    if let Some(c) = &report.classification {
        classification_md(&mut s, c);
    }
    if let Some(n) = &report.nonverbal {
        nonverbal_md(&mut s, n);
    }
    s
}

fn test_cell(f: &FeatureComparison) -> String {
    f.test_label()
}

fn verbal_md(s: &mut String, v: &VerbalSection, report: &ComparisonReport) {
    let o = &report.options;
    let _ = writeln!(s, "\n## Verbal behavior\n");
    let _ = writeln!(s, "Lexicon: {}. Test: {:?} t-test.", v.lexicon, o.variant);
    for sc in &v.scenarios {
        let _ = writeln!(s, "\n### {}\n", sc.scenario.title());
        let _ = writeln!(s, "Documents: EXT {}, INT {}.", sc.ext_documents, sc.int_documents);
        if !sc.excluded.is_empty() {
            let _ = writeln!(s, "Empty documents excluded: {}.", sc.excluded.join(", "));
        }
        let _ = writeln!(s, "\n| Measure | EXT | INT | t-test | p | d |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for f in [&sc.word_count, &sc.sentence_count] {
            let (p, d) = f
                .test
                .as_ref()
                .map_or(("n/a".into(), "n/a".into()), |t| (pval(t.p_two_sided), num(t.cohens_d)));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                f.name,
                num(f.ext_mean),
                num(f.int_mean),
                test_cell(f),
                p,
                d
            );
        }
        let _ = writeln!(
            s,
            "\nFeatures with p < {} and |d| > {}:\n",
            o.alpha, o.d_min
        );
        if sc.filtered.is_empty() {
            let _ = writeln!(s, "_None._");
        } else {
            let _ = writeln!(s, "| Feature | EXT | INT | t-test | Aligned |");
            let _ = writeln!(s, "|---|---|---|---|---|");
            for f in &sc.filtered {
                let aligned = match f.aligned {
                    Some(true) => "Y",
                    Some(false) => "N",
                    None => "-",
                };
                let _ = writeln!(
                    s,
                    "| {} ({}) | {} | {} | {} {} | {} |",
                    f.feature,
                    f.name,
                    num(f.ext_mean),
                    num(f.int_mean),
                    f.direction,
                    f.stars,
                    aligned
                );
            }
        }
        let _ = writeln!(s, "\nAll features:\n");
        let _ = writeln!(s, "| Feature | EXT | INT | t | df | p | d |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for f in &sc.features {
            let cells = match &f.test {
                Some(t) => format!("{} | {} | {} | {}", num(t.t), num(t.df), pval(t.p_two_sided), num(t.cohens_d)),
                None => format!("{} | | | ", test_cell(f)),
            };
            let _ = writeln!(
                s,
                "| {} ({}) | {} | {} | {} |",
                f.feature,
                f.name,
                num(f.ext_mean),
                num(f.int_mean),
                cells
            );
        }
    }
}

fn chi_cell(c: &ChiSquareComparison) -> (String, String) {
    match (&c.yates, &c.uncorrected) {
        (Some(y), Some(u)) => (
            format!("χ²({}) = {} (uncorrected {})", y.df, num(y.chi2), num(u.chi2)),
            pval(y.p),
        ),
        _ => (c.error.clone().unwrap_or_else(|| "n/a".into()), "n/a".into()),
    }
}

fn classification_md(s: &mut String, c: &ClassificationSection) {
    let _ = writeln!(s, "\n## Extraversion classification\n");
    let _ = writeln!(s, "Classifier: {}.", c.classifier);
    if c.status == SectionStatus::Unavailable {
        let _ = writeln!(
            s,
            "\nStatus: unavailable ({}).",
            c.reason.as_deref().unwrap_or("unknown reason")
        );
        return;
    }
    let _ = writeln!(s, "\n| Scenario | EXT | INT | Yates χ² | p |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    let rows = c.per_scenario.iter().chain(c.pooled.as_ref());
    for cmp in rows {
        let find = |p| {
            c.groups
                .iter()
                .find(|g| g.scenario == cmp.scenario && g.personality == p)
                .expect("group counted")
        };
        let cell = |g: &crate::analysis::LabelCounts| {
            let mut x = format!("{} ({}/{})", pct(g.proportion), g.extravert, g.labeled);
            if g.missing > 0 {
                let _ = write!(x, ", {} missing", g.missing);
            }
            x
        };
        let ext = find(crate::prompt::Personality::Extrovert);
        let int = find(crate::prompt::Personality::Introvert);
        let (chi, p) = chi_cell(cmp);
        let name = cmp.scenario.map_or("Pooled", |k| k.title());
        let _ = writeln!(s, "| {name} | {} | {} | {chi} | {p} |", cell(ext), cell(int));
    }
    match (&c.interaction, &c.interaction_error) {
        (Some(r), _) => {
            let _ = writeln!(
                s,
                "\nScenario x agent interaction: χ²({}) = {}, p {}.",
                r.df,
                num(r.chi2),
                if r.p < 0.001 { "< .001".to_string() } else { format!("= {:.3}", r.p) }
            );
        }
        (None, Some(e)) => {
            let _ = writeln!(s, "\nScenario x agent interaction: {e}.");
        }
        _ => {}
    }
}

fn nonverbal_md(s: &mut String, n: &NonverbalSection) {
    let _ = writeln!(s, "\n## Nonverbal behavior\n");
    let _ = writeln!(s, "Selection frequency = share of personality-agent {}s containing the action.", n.unit);
    for sc in &n.scenarios {
        let _ = writeln!(s, "\n### {}\n", sc.scenario.title());
        let _ = writeln!(s, "Units: EXT {}, INT {}.", sc.ext_units, sc.int_units);
        for m in Modality::ALL {
            let _ = writeln!(s, "\n#### {}\n", m.title());
            let _ = writeln!(s, "| Action | Leaning | EXT | INT |");
            let _ = writeln!(s, "|---|---|---|---|");
            for a in sc.actions.iter().filter(|a| a.modality == m) {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} |",
                    a.action,
                    polarity_label(a.polarity),
                    num(a.ext_frequency),
                    num(a.int_frequency)
                );
            }
        }
        let _ = writeln!(s, "\n#### Paired actions\n");
        let _ = writeln!(s, "| EXT-leaning | INT-leaning | EXT agent | INT agent | Contrast |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for c in &sc.contrasts {
            let _ = writeln!(
                s,
                "| {} | {} | {} / {} | {} / {} | {} |",
                c.extrovert_action,
                c.introvert_action,
                num(c.ext_on_ext_action),
                num(c.ext_on_int_action),
                num(c.int_on_ext_action),
                num(c.int_on_int_action),
                num(c.contrast)
            );
        }
    }
}

pub fn render_json(report: &ComparisonReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn csv_string<R: Serialize>(rows: impl IntoIterator<Item = R>, header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    scenario: &'a str,
    feature: &'a str,
    name: &'a str,
    ext_mean: f64,
    int_mean: f64,
    t: Option<f64>,
    df: Option<f64>,
    p: Option<f64>,
    d: Option<f64>,
    test: String,
    significant: bool,
    aligned: &'a str,
}

/// One row per (scenario, lexicon category).
pub fn render_features_csv(v: &VerbalSection) -> String {
    let rows = v.scenarios.iter().flat_map(|sc| {
        sc.features.iter().map(move |f| {
            let kept = sc.filtered.iter().find(|k| k.feature == f.feature);
            FeatureRow {
                scenario: sc.scenario.as_str(),
                feature: &f.feature,
                name: &f.name,
                ext_mean: f.ext_mean,
                int_mean: f.int_mean,
                t: f.test.as_ref().map(|t| t.t),
                df: f.test.as_ref().map(|t| t.df),
                p: f.test.as_ref().map(|t| t.p_two_sided),
                d: f.test.as_ref().map(|t| t.cohens_d),
                test: f.test_label(),
                significant: kept.is_some(),
                aligned: match kept.and_then(|k| k.aligned) {
                    Some(true) => "Y",
                    Some(false) => "N",
                    None => "",
                },
            }
        })
    });
    csv_string(
        rows,
        &["scenario", "feature", "name", "ext_mean", "int_mean", "t", "df", "p", "d", "test", "significant", "aligned"],
    )
}

#[derive(Serialize)]
struct PlotRow<'a> {
    scenario: &'a str,
    personality: &'a str,
    modality: &'a str,
    action: &'a str,
    count: u64,
    units: u64,
    frequency: f64,
}

/// Long-format plot data: one row per (scenario, personality, action).
pub fn render_nonverbal_csv(n: &NonverbalSection) -> String {
    let rows = n.scenarios.iter().flat_map(|sc| {
        let ext = sc.actions.iter().map(move |a| PlotRow {
            scenario: sc.scenario.as_str(),
            personality: "extrovert",
            modality: a.modality.as_str(),
            action: &a.action,
            count: a.ext_count,
            units: sc.ext_units,
            frequency: a.ext_frequency,
        });
        let int = sc.actions.iter().map(move |a| PlotRow {
            scenario: sc.scenario.as_str(),
            personality: "introvert",
            modality: a.modality.as_str(),
            action: &a.action,
            count: a.int_count,
            units: sc.int_units,
            frequency: a.int_frequency,
        });
        ext.chain(int)
    });
    csv_string(
        rows,
        &["scenario", "personality", "modality", "action", "count", "units", "frequency"],
    )
}

pub fn render_labels(labels: &[LabelRecord]) -> String {
    labels
        .iter()
        .map(|l| serde_json::to_string(l).expect("label serializes") + "\n")
        .collect()
}

/// All report files as (file name, contents), in a fixed order.
pub fn render(
    report: &ComparisonReport,
    labels: Option<&[LabelRecord]>,
    formats: &[ReportFormat],
) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if formats.contains(&ReportFormat::Markdown) {
        out.push((MARKDOWN_FILE, render_markdown(report)));
    }
    if formats.contains(&ReportFormat::Json) {
        out.push((JSON_FILE, render_json(report)));
    }
    if formats.contains(&ReportFormat::Csv) {
        if let Some(v) = &report.verbal {
            out.push((FEATURES_CSV, render_features_csv(v)));
        }
        if let Some(n) = &report.nonverbal {
            out.push((NONVERBAL_CSV, render_nonverbal_csv(n)));
        }
    }
    if let Some(l) = labels {
        out.push((LABELS_FILE, render_labels(l)));
    }
    out
}

/// Writes every file into a sibling staging directory, then swaps it into
/// place so readers never see a half-written report.
pub fn write_report(
    out_dir: &Path,
    files: &[(&'static str, String)],
) -> std::io::Result<PathBuf> {
    let parent = out_dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let staging = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let result = (|| {
        for (file, contents) in files {
            std::fs::write(staging.join(file), contents)?;
        }
        if out_dir.exists() {
            std::fs::remove_dir_all(out_dir)?;
        }
        std::fs::rename(&staging, out_dir)
    })();
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&staging);
    }
    result.map(|()| out_dir.to_path_buf())
}
