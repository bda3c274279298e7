//! Result tables, plot data and the static chart.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Correlation;
use crate::error::{Error, Result};
use crate::pipeline::{BiasClass, NationalityResult, RobustnessMatrix};

pub const RESULTS_HEADER: [&str; 7] = [
    "nationality",
    "relative_sentiment",
    "ci_low",
    "ci_high",
    "p_value",
    "bias_class",
    "n_pairs",
];

pub fn results_csv(results: &[NationalityResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.nationality.clone(),
            r.relative_sentiment.to_string(),
            r.ci.low.to_string(),
            r.ci.high.to_string(),
            r.wilcoxon.p_two_sided.to_string(),
            r.bias_class.as_str().to_string(),
            r.n_pairs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Read `(nationality, relative_sentiment)` from any CSV carrying those two
/// columns.
pub fn read_relative_sentiment<R: Read>(reader: R, path: &Path) -> Result<Vec<(String, f64)>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(format!("missing column `{name}`")))
    };
    let (ni, ri) = (col("nationality")?, col("relative_sentiment")?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let name = rec.get(ni).unwrap_or("").trim().to_string();
        let value: f64 = rec
            .get(ri)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("row {}: {e}", i + 1)))?;
        out.push((name, value));
    }
    Ok(out)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_relative_sentiment(file, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub nationality: String,
    pub relative_sentiment: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bias_class: BiasClass,
    pub color: String,
}

pub fn plot_points(results: &[NationalityResult]) -> Vec<PlotPoint> {
    results
        .iter()
        .map(|r| PlotPoint {
            nationality: r.nationality.clone(),
            relative_sentiment: r.relative_sentiment,
            ci_low: r.ci.low,
            ci_high: r.ci.high,
            bias_class: r.bias_class,
            color: r.bias_class.color().to_string(),
        })
        .collect()
}

pub fn plot_csv(points: &[PlotPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "nationality",
        "relative_sentiment",
        "ci_low",
        "ci_high",
        "bias_class",
        "color",
    ])
    .map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.nationality.clone(),
            p.relative_sentiment.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
            p.bias_class.as_str().to_string(),
            p.color.clone(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bars sorted by relative sentiment, with CI whiskers.
pub fn plot_svg(points: &[PlotPoint]) -> String {
    const ROW: f64 = 18.0;
    const LABEL_W: f64 = 140.0;
    const PLOT_W: f64 = 400.0;
    const TOP: f64 = 20.0;

    let mut sorted: Vec<&PlotPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.relative_sentiment
            .total_cmp(&b.relative_sentiment)
            .then_with(|| a.nationality.cmp(&b.nationality))
    });
    let extent = sorted
        .iter()
        .flat_map(|p| [p.ci_low.abs(), p.ci_high.abs(), p.relative_sentiment.abs()])
        .fold(0.0_f64, f64::max)
        .max(1e-3);
    let x = |v: f64| LABEL_W + PLOT_W / 2.0 + v / extent * (PLOT_W / 2.0 - 10.0);
    let height = TOP * 2.0 + ROW * sorted.len() as f64;
    let width = LABEL_W + PLOT_W + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let zero = x(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.2}" y1="{TOP}" x2="{zero:.2}" y2="{:.2}" stroke="#888"/>"##,
        height - TOP
    );
    for (i, p) in sorted.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let v = x(p.relative_sentiment);
        let (left, w) = if v < zero { (v, zero - v) } else { (zero, v - zero) };
        let mid = y + ROW / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LABEL_W - 6.0,
            mid + 4.0,
            xml_escape(&p.nationality)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{left:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
            y + 3.0,
            ROW - 6.0,
            p.color
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{mid:.2}" x2="{:.2}" y2="{mid:.2}" stroke="#444"/>"##,
            x(p.ci_low),
            x(p.ci_high)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn markdown(
    results: &[NationalityResult],
    correlation: Option<&Correlation>,
    robustness: Option<&RobustnessMatrix>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Audit report\n");
    let _ = writeln!(s, "| nationality | relative sentiment | 95% CI | p | class | pairs |");
    let _ = writeln!(s, "|---|---:|---|---:|---|---:|");
    for r in results {
        let _ = writeln!(
            s,
            "| {} | {:+.4} | [{:+.4}, {:+.4}] | {:.4} | {}{} | {} |",
            r.nationality,
            r.relative_sentiment,
            r.ci.low,
            r.ci.high,
            r.wilcoxon.p_two_sided,
            r.bias_class,
            if r.underpowered { " (underpowered)" } else { "" },
            r.n_pairs
        );
    }
    let count = |c: BiasClass| results.iter().filter(|r| r.bias_class == c).count();
    let _ = writeln!(
        s,
        "\n{} negative, {} neutral, {} positive.",
        count(BiasClass::Negative),
        count(BiasClass::Neutral),
        count(BiasClass::Positive)
    );
    if let Some(c) = correlation {
        let _ = writeln!(
            s,
            "\n## Context positivity\n\nPearson r = {:.4} (p = {:.4}, n = {}).",
            c.pearson.r, c.pearson.p_two_sided, c.pearson.n
        );
        if !c.excluded.is_empty() {
            let _ = writeln!(s, "Excluded: {}.", c.excluded.join(", "));
        }
    }
    if let Some(m) = robustness {
        let _ = writeln!(s, "\n## Robustness\n");
        let _ = writeln!(s, "| setup A | setup B | r | p |");
        let _ = writeln!(s, "|---|---|---:|---:|");
        for c in &m.cells {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} |",
                c.setup_a, c.setup_b, c.pearson.r, c.pearson.p_two_sided
            );
        }
        if let Some(mean) = m.mean_r() {
            let _ = writeln!(s, "\nMean off-diagonal r = {mean:.4}.");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{classify_bias, ClassifyParams};

    fn sample() -> Vec<NationalityResult> {
        let p = ClassifyParams::default();
        vec![
            classify_bias("A&B", &[-0.3; 8], &p).unwrap(),
            classify_bias("C", &[0.1, -0.1, 0.2, -0.2, 0.05, -0.05], &p).unwrap(),
        ]
    }

    #[test]
    fn csv_header_and_round_trip() {
        let csv = results_csv(&sample()).unwrap();
        assert!(csv.starts_with(
            "nationality,relative_sentiment,ci_low,ci_high,p_value,bias_class,n_pairs\n"
        ));
        let back = read_relative_sentiment(csv.as_bytes(), Path::new("x")).unwrap();
        assert_eq!(back[0].0, "A&B");
        assert!((back[0].1 + 0.3).abs() < 1e-15);
    }

    #[test]
    fn reader_needs_columns() {
        let err = read_relative_sentiment("nationality,score\nA,1\n".as_bytes(), Path::new("x"));
        assert!(err.is_err());
        let ok = read_relative_sentiment("x,relative_sentiment,nationality\n1,0.5,A\n".as_bytes(), Path::new("x"));
        assert_eq!(ok.unwrap(), vec![("A".to_string(), 0.5)]);
    }

    #[test]
    fn plot_colors_follow_class() {
        let pts = plot_points(&sample());
        assert_eq!(pts[0].color, "red");
        assert_eq!(pts[1].color, "black");
        let svg = plot_svg(&pts);
        assert!(svg.contains("A&amp;B"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn markdown_mentions_every_row() {
        let md = markdown(&sample(), None, None);
        assert!(md.contains("| A&B |"));
        assert!(md.contains("1 negative, 1 neutral, 0 positive."));
    }
}
