//! Report files: delta CSV, correlation CSV, JSON summary and an SVG chart.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

use super::{Correlation, SignAgreement, TrendReport};

pub const DELTAS_FORMAT: &str = "trendscope-trend-deltas";
pub const CORRELATIONS_FORMAT: &str = "trendscope-trend-correlations";
pub const SUMMARY_FORMAT: &str = "trendscope-trend-summary";
const REPORT_VERSION: u32 = 1;

/// Paths of the files written by [`write_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub deltas_csv: PathBuf,
    pub correlations_csv: PathBuf,
    pub summary_json: PathBuf,
    pub chart_svg: PathBuf,
}

impl ReportFiles {
    pub fn all(&self) -> [&Path; 4] {
        [&self.deltas_csv, &self.correlations_csv, &self.summary_json, &self.chart_svg]
    }
}

fn csv_text(format: &str, rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("# {format} v{REPORT_VERSION}\n") + &String::from_utf8(body).expect("csv output is UTF-8"))
}

fn r_text(c: &Correlation) -> String {
    c.r.map(|r| r.to_string()).unwrap_or_default()
}

pub(crate) fn deltas_csv(report: &TrendReport) -> Result<String> {
    let mut rows = vec![["category", "attribute", "show_delta", "street_delta", "sign_agreement"]
        .map(String::from)
        .to_vec()];
    for c in &report.categories {
        for r in &c.rows {
            rows.push(vec![
                c.group.as_str().into(),
                r.attribute_id.clone(),
                r.show_delta.to_string(),
                r.street_delta.to_string(),
                r.sign_agreement.as_str().into(),
            ]);
        }
    }
    csv_text(DELTAS_FORMAT, rows)
}

pub(crate) fn correlations_csv(report: &TrendReport) -> Result<String> {
    let mut rows = vec![["scope", "category", "n", "r", "status"].map(String::from).to_vec()];
    let mut push = |scope: &str, name: &str, c: &Correlation| {
        rows.push(vec![
            scope.into(),
            name.into(),
            c.n.to_string(),
            r_text(c),
            c.status.as_str().into(),
        ]);
    };
    for c in &report.categories {
        push("category", c.group.as_str(), &c.correlation);
    }
    for c in &report.categories {
        for (half, corr) in &c.halves {
            push("half", half.as_str(), corr);
        }
    }
    csv_text(CORRELATIONS_FORMAT, rows)
}

#[derive(Serialize)]
struct Summary<'a> {
    format: &'static str,
    version: u32,
    #[serde(flatten)]
    report: &'a TrendReport,
}

pub(crate) fn summary_json(report: &TrendReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Summary {
        format: SUMMARY_FORMAT,
        version: REPORT_VERSION,
        report,
    })? + "\n")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const LABEL_WIDTH: f64 = 200.0;
const CHART_WIDTH: f64 = 240.0;
const GAP: f64 = 30.0;
const ROW_HEIGHT: f64 = 16.0;
const PANEL_HEADER: f64 = 44.0;
const PANEL_GAP: f64 = 24.0;
const MARGIN: f64 = 16.0;

/// Horizontal bar charts, one panel per category: attribute labels, then the
/// show deltas and the street deltas side by side on a shared scale. Labels
/// of attributes whose changes agree in sign are drawn red, divergent ones
/// green.
pub fn render_svg(report: &TrendReport) -> String {
    let max_abs = report
        .categories
        .iter()
        .flat_map(|c| &c.rows)
        .flat_map(|r| [r.show_delta.abs(), r.street_delta.abs()])
        .fold(0.05f64, f64::max);
    let half = CHART_WIDTH / 2.0 - 4.0;
    let width = 2.0 * MARGIN + LABEL_WIDTH + 2.0 * CHART_WIDTH + GAP;
    let height = 2.0 * MARGIN
        + report
            .categories
            .iter()
            .map(|c| PANEL_HEADER + ROW_HEIGHT * c.rows.len().max(1) as f64 + PANEL_GAP)
            .sum::<f64>();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<!-- {SUMMARY_FORMAT} chart v{REPORT_VERSION} -->");
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let mut y = MARGIN;
    for c in &report.categories {
        let r_label = match c.correlation.r {
            Some(r) => format!("r = {r:.2}"),
            None => format!("r undefined ({})", c.correlation.status.as_str()),
        };
        let _ = writeln!(
            s,
            r#"<text class="panel-title" data-category="{0}" x="{MARGIN:.1}" y="{1:.1}" font-size="14" font-weight="bold">{0} ({2})</text>"#,
            c.group.as_str(),
            y + 14.0,
            escape(&r_label)
        );
        let show_x = MARGIN + LABEL_WIDTH;
        let street_x = show_x + CHART_WIDTH + GAP;
        for (x0, title) in [(show_x, "fashion show"), (street_x, "street chic")] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{title}</text>"#,
                x0 + CHART_WIDTH / 2.0,
                y + 34.0
            );
        }
        let rows_top = y + PANEL_HEADER;
        let rows_height = ROW_HEIGHT * c.rows.len().max(1) as f64;
        for x0 in [show_x, street_x] {
            let axis = x0 + CHART_WIDTH / 2.0;
            let _ = writeln!(
                s,
                r##"<line x1="{axis:.1}" y1="{rows_top:.1}" x2="{axis:.1}" y2="{:.1}" stroke="#444"/>"##,
                rows_top + rows_height
            );
        }
        for (i, row) in c.rows.iter().enumerate() {
            let top = rows_top + ROW_HEIGHT * i as f64;
            let color = match row.sign_agreement {
                SignAgreement::PositivelyCorrelated => "#c0392b",
                SignAgreement::Divergent => "#1e8449",
                SignAgreement::Neutral => "#222",
            };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="{color}">{}</text>"#,
                show_x - 6.0,
                top + ROW_HEIGHT - 4.0,
                escape(&row.display_name)
            );
            for (x0, delta, fill) in [
                (show_x, row.show_delta, "#5d6d7e"),
                (street_x, row.street_delta, "#d68910"),
            ] {
                let axis = x0 + CHART_WIDTH / 2.0;
                let len = delta.abs() / max_abs * half;
                let x = if delta < 0.0 { axis - len } else { axis };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{:.1}" width="{len:.2}" height="{:.1}" fill="{fill}"><title>{}: {delta:+.4}</title></rect>"#,
                    top + 2.0,
                    ROW_HEIGHT - 4.0,
                    escape(&row.attribute_id)
                );
            }
        }
        y += PANEL_HEADER + rows_height + PANEL_GAP;
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the four report files into `dir`.
pub fn write_report(report: &TrendReport, dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        deltas_csv: dir.join("trend_deltas.csv"),
        correlations_csv: dir.join("trend_correlations.csv"),
        summary_json: dir.join("trend_summary.json"),
        chart_svg: dir.join("trend_chart.svg"),
    };
    let contents = [
        (&files.deltas_csv, deltas_csv(report)?),
        (&files.correlations_csv, correlations_csv(report)?),
        (&files.summary_json, summary_json(report)?),
        (&files.chart_svg, render_svg(report)),
    ];
    for (path, text) in contents {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::schema::AttributeSchema;

    fn report(constant: bool) -> TrendReport {
        let schema = AttributeSchema::default_schema();
        let mk = |source, year, f: &dyn Fn(usize) -> f64| PrevalenceTable {
            tag: CorpusTag { source, year },
            schema_version: schema.version().into(),
            attribute_ids: schema.ids().map(String::from).collect(),
            fractions: (0..schema.len()).map(f).collect(),
            images: 10,
        };
        let base = |i: usize| (i % 7) as f64 / 10.0;
        let moved = |i: usize| if constant { (i % 7) as f64 / 10.0 } else { ((i * 3) % 7) as f64 / 10.0 };
        build_report(
            &mk(Source::FashionShow, 2014, &base),
            &mk(Source::FashionShow, 2015, &moved),
            &mk(Source::StreetChic, 2014, &base),
            &mk(Source::StreetChic, 2015, &base),
            &schema,
            DEFAULT_SIGN_THRESHOLD,
        )
        .unwrap()
    }

    #[test]
    fn csv_headers_and_rows() {
        let r = report(false);
        let d = deltas_csv(&r).unwrap();
        let lines: Vec<&str> = d.lines().collect();
        assert_eq!(lines[0], "# trendscope-trend-deltas v1");
        assert_eq!(lines[1], "category,attribute,show_delta,street_delta,sign_agreement");
        assert_eq!(lines.len(), 2 + 60 - 9);
        let c = correlations_csv(&r).unwrap();
        let lines: Vec<&str> = c.lines().collect();
        assert_eq!(lines[1], "scope,category,n,r,status");
        assert_eq!(lines.len(), 2 + 3 + 4);
        // street deltas are all zero: undefined, never NaN
        assert!(lines[2].ends_with(",,undefined_constant"), "{}", lines[2]);
        assert!(!c.contains("NaN"));
    }

    #[test]
    fn svg_has_one_panel_per_category() {
        let svg = render_svg(&report(false));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"panel-title\"").count(), 3);
        for g in ["style", "pattern", "color"] {
            assert_eq!(svg.matches(&format!("data-category=\"{g}\"")).count(), 1, "{g}");
        }
        assert!(!svg.contains("NaN"));
        assert_eq!(svg, render_svg(&report(false)));
    }

    #[test]
    fn summary_round_trips_as_json() {
        let text = summary_json(&report(true)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format"], "trendscope-trend-summary");
        assert_eq!(v["categories"].as_array().unwrap().len(), 3);
        assert!(v["categories"][0]["correlation"]["r"].is_null());
    }

    #[test]
    fn writes_four_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&report(false), dir.path()).unwrap();
        for p in files.all() {
            assert!(p.exists());
        }
    }
}
