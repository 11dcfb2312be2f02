//! Result aggregation: per-architecture tables, JSON/CSV emission, SVG scatter.
//!
//! Numeric cells are rendered at fixed per-column precision (EER and
//! similarity 3 decimals, classification F1 2, text-length F1 3, SRCC 3)
//! and the JSON emission stores the reparsed rendered value, so JSON and
//! CSV always agree numerically. Emission is pure: the same results render
//! to byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::probes::{Direction, ProbeResult, TaskKind};
use crate::projection::Projection;
use crate::simmetrics::ClosestPair;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    EmptyReport,
    #[error("no label for utterance {0:?}")]
    LabelMissing(String),
    #[error("cell for {architecture:?}/{column:?} is not finite")]
    NonFiniteCell {
        architecture: String,
        column: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-architecture inputs, one instance per evaluated embedding system.
#[derive(Debug, Clone, Default)]
pub struct ArchResults {
    pub architecture: String,
    /// Ordered (group label, EER) rows, e.g. All/Female/Male/subsets.
    pub eer_by_group: Vec<(String, f64)>,
    pub intra_by_group: Vec<(String, f64)>,
    pub inter_by_group: Vec<(String, f64)>,
    pub probes: Vec<ProbeResult>,
    pub closest_pairs: Vec<ClosestPair>,
}

impl ArchResults {
    pub fn new(architecture: impl Into<String>) -> Self {
        ArchResults {
            architecture: architecture.into(),
            ..ArchResults::default()
        }
    }

    fn is_empty(&self) -> bool {
        self.eer_by_group.is_empty()
            && self.intra_by_group.is_empty()
            && self.inter_by_group.is_empty()
            && self.probes.is_empty()
            && self.closest_pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub label: String,
    pub direction: Direction,
    pub decimals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub architecture: String,
    pub cells: Vec<Option<f64>>,
}

/// One architectures-by-columns table with a direction per column.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl MetricTable {
    fn format_cell(&self, row: usize, col: usize) -> String {
        match self.rows[row].cells[col] {
            Some(v) => format!("{v:.prec$}", prec = self.columns[col].decimals),
            None => String::new(),
        }
    }

    /// Best architecture per column: minimum for lower-is-better columns,
    /// maximum otherwise; first row wins ties.
    pub fn best_per_column(&self) -> Vec<Option<String>> {
        (0..self.columns.len())
            .map(|c| {
                let mut best: Option<(&str, f64)> = None;
                for row in &self.rows {
                    let Some(v) = row.cells[c] else { continue };
                    let better = match best {
                        None => true,
                        Some((_, b)) => match self.columns[c].direction {
                            Direction::LowerBetter => v < b,
                            Direction::HigherBetter => v > b,
                        },
                    };
                    if better {
                        best = Some((&row.architecture, v));
                    }
                }
                best.map(|(arch, _)| arch.to_string())
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("architecture")
            .chain(self.columns.iter().map(|c| c.label.as_str()))
            .collect();
        w.write_record(&header)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut record = vec![row.architecture.clone()];
            for c in 0..self.columns.len() {
                record.push(self.format_cell(r, c));
            }
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().expect("vec writer never fails");
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Paper-style column metadata for one probe task, or None for tasks that
/// do not belong to the classification/regression tables.
fn probe_column(task_name: &str, kind: TaskKind) -> (String, usize) {
    let (label, decimals) = match task_name {
        "speaker_id" => ("Speaker ID", 2),
        "gender" => ("Gender", 2),
        // Rendered at 3 decimals: small F1 values like 0.010 would
        // collapse to 0.01 == 0.0x at 2.
        "char_count" => ("Text Length", 3),
        "recording_condition" => ("Recording Condition", 2),
        "duration_s" => ("Utterance Duration", 3),
        "snr_db" => ("SNR", 3),
        "utterance_id" => ("Linguistic Contents", 3),
        "f0_hz" => ("F0", 3),
        other => (
            other,
            match kind {
                TaskKind::Classification => 2,
                TaskKind::Regression => 3,
            },
        ),
    };
    (label.to_string(), decimals)
}

#[derive(Debug, Clone)]
pub struct Report {
    pub eer: Option<MetricTable>,
    pub intra: Option<MetricTable>,
    pub inter: Option<MetricTable>,
    pub classification: Option<MetricTable>,
    pub regression: Option<MetricTable>,
    /// Per-architecture F0 probe test MSE, in Hz².
    pub f0_mse_hz: Vec<(String, f64)>,
    pub closest: Vec<(String, Vec<ClosestPair>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

fn grouped_table(
    name: &str,
    direction: Direction,
    decimals: usize,
    archs: &[ArchResults],
    pick: impl Fn(&ArchResults) -> &[(String, f64)],
) -> Option<MetricTable> {
    let mut columns: Vec<Column> = Vec::new();
    for arch in archs {
        for (label, _) in pick(arch) {
            if !columns.iter().any(|c| &c.label == label) {
                columns.push(Column {
                    label: label.clone(),
                    direction,
                    decimals,
                });
            }
        }
    }
    if columns.is_empty() {
        return None;
    }
    let rows = archs
        .iter()
        .filter(|a| !pick(a).is_empty())
        .map(|a| Row {
            architecture: a.architecture.clone(),
            cells: columns
                .iter()
                .map(|c| {
                    pick(a)
                        .iter()
                        .find(|(label, _)| label == &c.label)
                        .map(|&(_, v)| v)
                })
                .collect(),
        })
        .collect();
    Some(MetricTable {
        name: name.to_string(),
        columns,
        rows,
    })
}

fn probe_table(name: &str, kind: TaskKind, archs: &[ArchResults]) -> Option<MetricTable> {
    let mut columns: Vec<(String, Column)> = Vec::new();
    for arch in archs {
        for p in &arch.probes {
            if p.task.kind != kind {
                continue;
            }
            if !columns.iter().any(|(task, _)| task == &p.task.name) {
                let (label, decimals) = probe_column(&p.task.name, kind);
                columns.push((
                    p.task.name.clone(),
                    Column {
                        label,
                        direction: p.task.direction,
                        decimals,
                    },
                ));
            }
        }
    }
    if columns.is_empty() {
        return None;
    }
    let rows = archs
        .iter()
        .filter(|a| a.probes.iter().any(|p| p.task.kind == kind))
        .map(|a| Row {
            architecture: a.architecture.clone(),
            cells: columns
                .iter()
                .map(|(task, _)| {
                    a.probes
                        .iter()
                        .find(|p| &p.task.name == task)
                        .map(|p| p.score)
                })
                .collect(),
        })
        .collect();
    Some(MetricTable {
        name: name.to_string(),
        columns: columns.into_iter().map(|(_, c)| c).collect(),
        rows,
    })
}

impl Report {
    pub fn build(archs: &[ArchResults]) -> Result<Report, ReportError> {
        if archs.iter().all(ArchResults::is_empty) {
            return Err(ReportError::EmptyReport);
        }
        let report = Report {
            eer: grouped_table("eer", Direction::LowerBetter, 3, archs, |a| {
                &a.eer_by_group
            }),
            intra: grouped_table("intra_speaker", Direction::HigherBetter, 3, archs, |a| {
                &a.intra_by_group
            }),
            inter: grouped_table("inter_speaker", Direction::LowerBetter, 3, archs, |a| {
                &a.inter_by_group
            }),
            classification: probe_table("classification_f1", TaskKind::Classification, archs),
            regression: probe_table("regression_srcc", TaskKind::Regression, archs),
            f0_mse_hz: archs
                .iter()
                .filter_map(|a| {
                    a.probes
                        .iter()
                        .find(|p| p.task.name == "f0_hz")
                        .and_then(|p| p.auxiliary)
                        .map(|mse| (a.architecture.clone(), mse))
                })
                .collect(),
            closest: archs
                .iter()
                .filter(|a| !a.closest_pairs.is_empty())
                .map(|a| (a.architecture.clone(), a.closest_pairs.clone()))
                .collect(),
        };
        for table in report.tables() {
            for row in &table.rows {
                for (c, cell) in row.cells.iter().enumerate() {
                    if cell.is_some_and(|v| !v.is_finite()) {
                        return Err(ReportError::NonFiniteCell {
                            architecture: row.architecture.clone(),
                            column: table.columns[c].label.clone(),
                        });
                    }
                }
            }
        }
        Ok(report)
    }

    pub fn tables(&self) -> impl Iterator<Item = &MetricTable> {
        [
            &self.eer,
            &self.intra,
            &self.inter,
            &self.classification,
            &self.regression,
        ]
        .into_iter()
        .flatten()
    }

    pub fn emit(
        &self,
        format: ReportFormat,
        out_dir: impl AsRef<Path>,
    ) -> Result<Vec<PathBuf>, ReportError> {
        let out_dir = out_dir.as_ref();
        std::fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        match format {
            ReportFormat::Json => {
                let path = out_dir.join("report.json");
                let mut json = serde_json::to_string_pretty(&self.to_json())?;
                json.push('\n');
                std::fs::write(&path, json)?;
                written.push(path);
            }
            ReportFormat::Csv => {
                for table in self.tables() {
                    let path = out_dir.join(format!("{}.csv", table.name));
                    std::fs::write(&path, table.to_csv()?)?;
                    written.push(path);
                }
                if !self.closest.is_empty() {
                    let path = out_dir.join("closest_pairs.txt");
                    let mut text = String::new();
                    for (arch, pairs) in &self.closest {
                        writeln!(text, "# {arch}").expect("string write");
                        for pair in pairs {
                            text.push_str(&render_closest_pair(pair));
                            text.push('\n');
                        }
                    }
                    std::fs::write(&path, text)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    }

    /// JSON model: table metadata (columns, arrows, best markers) plus one
    /// object per architecture whose cells reparse the rendered strings.
    fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct JsonColumn<'a> {
            label: &'a str,
            direction: &'a str,
            arrow: &'a str,
            decimals: usize,
        }
        #[derive(Serialize)]
        struct JsonTable<'a> {
            columns: Vec<JsonColumn<'a>>,
            best: BTreeMap<&'a str, Option<String>>,
        }

        let mut tables = BTreeMap::new();
        let mut archs: BTreeMap<&str, BTreeMap<&str, BTreeMap<&str, f64>>> = BTreeMap::new();
        for table in self.tables() {
            let best = table.best_per_column();
            tables.insert(
                table.name.as_str(),
                JsonTable {
                    columns: table
                        .columns
                        .iter()
                        .map(|c| JsonColumn {
                            label: &c.label,
                            direction: c.direction.as_str(),
                            arrow: c.direction.arrow(),
                            decimals: c.decimals,
                        })
                        .collect(),
                    best: table
                        .columns
                        .iter()
                        .zip(best)
                        .map(|(c, b)| (c.label.as_str(), b))
                        .collect(),
                },
            );
            for (r, row) in table.rows.iter().enumerate() {
                let cells: BTreeMap<&str, f64> = table
                    .columns
                    .iter()
                    .enumerate()
                    .filter(|(c, _)| row.cells[*c].is_some())
                    .map(|(c, col)| {
                        let rendered = table.format_cell(r, c);
                        let value: f64 = rendered.parse().expect("rendered float reparses");
                        (col.label.as_str(), value)
                    })
                    .collect();
                archs
                    .entry(&row.architecture)
                    .or_default()
                    .insert(&table.name, cells);
            }
        }

        let mut root = serde_json::Map::new();
        root.insert(
            "tables".to_string(),
            serde_json::to_value(&tables).expect("table metadata serializes"),
        );
        let mut arch_objects = serde_json::Map::new();
        let arch_names: Vec<&str> = {
            let mut names: Vec<&str> = archs.keys().copied().collect();
            for (name, _) in &self.f0_mse_hz {
                if !names.contains(&name.as_str()) {
                    names.push(name);
                }
            }
            for (name, _) in &self.closest {
                if !names.contains(&name.as_str()) {
                    names.push(name);
                }
            }
            names.sort_unstable();
            names
        };
        for name in arch_names {
            let mut obj = serde_json::Map::new();
            if let Some(cells) = archs.get(name) {
                obj.insert(
                    "tables".to_string(),
                    serde_json::to_value(cells).expect("cells serialize"),
                );
            }
            if let Some((_, mse)) = self.f0_mse_hz.iter().find(|(a, _)| a == name) {
                let rendered: f64 = format!("{mse:.1}").parse().expect("rendered float");
                obj.insert("f0_mse_hz".to_string(), rendered.into());
            }
            if let Some((_, pairs)) = self.closest.iter().find(|(a, _)| a == name) {
                obj.insert(
                    "closest_pairs".to_string(),
                    serde_json::to_value(pairs).expect("pairs serialize"),
                );
            }
            arch_objects.insert(name.to_string(), serde_json::Value::Object(obj));
        }
        root.insert(
            "architectures".to_string(),
            serde_json::Value::Object(arch_objects),
        );
        serde_json::Value::Object(root)
    }
}

/// Build and emit in one call.
pub fn emit_report(
    results: &[ArchResults],
    format: ReportFormat,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, ReportError> {
    Report::build(results)?.emit(format, out_dir)
}

pub fn render_closest_pair(pair: &ClosestPair) -> String {
    format!(
        "{}/{} {:.2}",
        pair.speaker_a, pair.speaker_b, pair.similarity
    )
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to255 = |v: f64| ((v + m) * 255.0).round() as u8;
    (to255(r), to255(g), to255(b))
}

/// Deterministic color for a label: hue hashed from the label text.
pub fn label_color(label: &str) -> String {
    let digest = Sha256::digest(label.as_bytes());
    let hue = u32::from_le_bytes(digest[..4].try_into().expect("4 bytes")) % 360;
    let (r, g, b) = hsl_to_rgb(hue as f64, 0.62, 0.45);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One circle per utterance, colored by label, with a legend. The viewBox
/// fits the data with a 5% margin; y is flipped so larger values plot higher.
pub fn emit_scatter_svg(
    projection: &Projection,
    labels: &BTreeMap<String, String>,
    out: impl AsRef<Path>,
) -> Result<PathBuf, ReportError> {
    if projection.keys.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    for key in &projection.keys {
        if !labels.contains_key(key) {
            return Err(ReportError::LabelMissing(key.clone()));
        }
    }

    let xs: Vec<f64> = projection.coords.iter().map(|c| c[0]).collect();
    let ys: Vec<f64> = projection.coords.iter().map(|c| c[1]).collect();
    let bound = |v: &[f64], max: bool| {
        v.iter()
            .copied()
            .fold(if max { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| {
                if max {
                    a.max(b)
                } else {
                    a.min(b)
                }
            })
    };
    let (min_x, max_x) = (bound(&xs, false), bound(&xs, true));
    let (min_y, max_y) = (bound(&ys, false), bound(&ys, true));
    let pad = |lo: f64, hi: f64| {
        let extent = hi - lo;
        if extent == 0.0 {
            1.0
        } else {
            extent * 0.05
        }
    };
    let (mx, my) = (pad(min_x, max_x), pad(min_y, max_y));
    let (vx, vy) = (min_x - mx, min_y - my);
    let (vw, vh) = (max_x - min_x + 2.0 * mx, max_y - min_y + 2.0 * my);
    let unit = vw.max(vh);
    let radius = unit * 0.009;
    let font = unit * 0.028;

    let mut distinct: Vec<&str> = projection.keys.iter().map(|k| labels[k].as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" \
         viewBox=\"{vx:.6} {vy:.6} {vw:.6} {vh:.6}\">"
    )
    .expect("string write");
    writeln!(svg, "  <rect x=\"{vx:.6}\" y=\"{vy:.6}\" width=\"{vw:.6}\" height=\"{vh:.6}\" fill=\"white\"/>")
        .expect("string write");
    for (key, coord) in projection.keys.iter().zip(&projection.coords) {
        let label = &labels[key];
        // Flip y: SVG's y axis grows downward.
        let cy = min_y + max_y - coord[1];
        writeln!(
            svg,
            "  <circle cx=\"{:.6}\" cy=\"{cy:.6}\" r=\"{radius:.6}\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            coord[0],
            label_color(label)
        )
        .expect("string write");
    }
    for (i, label) in distinct.iter().enumerate() {
        let y = vy + font * (1.5 + 1.4 * i as f64);
        writeln!(
            svg,
            "  <rect x=\"{:.6}\" y=\"{:.6}\" width=\"{font:.6}\" height=\"{font:.6}\" fill=\"{}\"/>",
            vx + font * 0.5,
            y - font * 0.8,
            label_color(label)
        )
        .expect("string write");
        writeln!(
            svg,
            "  <text x=\"{:.6}\" y=\"{y:.6}\" font-family=\"sans-serif\" font-size=\"{font:.6}\">{}</text>",
            vx + font * 1.8,
            xml_escape(label)
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    std::fs::write(out.as_ref(), svg)?;
    Ok(out.as_ref().to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::ProbeTask;

    fn eer_arch(name: &str, values: [f64; 5]) -> ArchResults {
        let groups = ["All", "Female", "Male", "SWARA1.0", "SWARA2.0"];
        ArchResults {
            architecture: name.to_string(),
            eer_by_group: groups
                .iter()
                .zip(values)
                .map(|(g, v)| (g.to_string(), v))
                .collect(),
            ..ArchResults::default()
        }
    }

    fn probe_result(name: &str, kind: TaskKind, direction: Direction, score: f64) -> ProbeResult {
        ProbeResult {
            task: ProbeTask {
                name: name.to_string(),
                kind,
                direction,
            },
            score,
            auxiliary: None,
        }
    }

    #[test]
    fn eer_row_renders_like_table_1() {
        let arch = eer_arch("Pyannote", [0.040, 0.055, 0.039, 0.024, 0.047]);
        let report = Report::build(&[arch]).unwrap();
        let csv = report.eer.as_ref().unwrap().to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "architecture,All,Female,Male,SWARA1.0,SWARA2.0"
        );
        assert_eq!(lines.next().unwrap(), "Pyannote,0.040,0.055,0.039,0.024,0.047");
    }

    #[test]
    fn probe_row_renders_like_table_4() {
        use Direction::*;
        use TaskKind::*;
        let arch = ArchResults {
            architecture: "NeMo Titanet".to_string(),
            probes: vec![
                probe_result("speaker_id", Classification, HigherBetter, 0.90),
                probe_result("gender", Classification, HigherBetter, 0.97),
                probe_result("char_count", Classification, LowerBetter, 0.010),
                probe_result("recording_condition", Classification, LowerBetter, 0.95),
            ],
            ..ArchResults::default()
        };
        let report = Report::build(&[arch]).unwrap();
        let csv = report.classification.as_ref().unwrap().to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "architecture,Speaker ID,Gender,Text Length,Recording Condition"
        );
        assert_eq!(lines.next().unwrap(), "NeMo Titanet,0.90,0.97,0.010,0.95");
    }

    #[test]
    fn best_markers_follow_column_direction() {
        let a = eer_arch("A", [0.040, 0.055, 0.039, 0.024, 0.047]);
        let b = eer_arch("B", [0.018, 0.060, 0.027, 0.031, 0.024]);
        let report = Report::build(&[a, b]).unwrap();
        let best = report.eer.as_ref().unwrap().best_per_column();
        let named: Vec<&str> = best.iter().map(|b| b.as_deref().unwrap()).collect();
        assert_eq!(named, ["B", "A", "B", "A", "B"]);

        let table = MetricTable {
            name: "t".into(),
            columns: vec![Column {
                label: "x".into(),
                direction: Direction::HigherBetter,
                decimals: 2,
            }],
            rows: vec![
                Row {
                    architecture: "A".into(),
                    cells: vec![Some(0.3)],
                },
                Row {
                    architecture: "B".into(),
                    cells: vec![Some(0.9)],
                },
            ],
        };
        assert_eq!(table.best_per_column(), vec![Some("B".to_string())]);
    }

    #[test]
    fn json_and_csv_hold_identical_values() {
        let arch = eer_arch("Pyannote", [0.0404, 0.0551, 0.0389, 0.0239, 0.0473]);
        let report = Report::build(&[arch]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.emit(ReportFormat::Json, dir.path()).unwrap();
        report.emit(ReportFormat::Csv, dir.path()).unwrap();

        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("report.json")).unwrap(),
        )
        .unwrap();
        let csv = std::fs::read_to_string(dir.path().join("eer.csv")).unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        for (label, cell) in header.iter().zip(&row).skip(1) {
            let from_csv: f64 = cell.parse().unwrap();
            let from_json = json["architectures"]["Pyannote"]["tables"]["eer"][*label]
                .as_f64()
                .unwrap();
            assert_eq!(from_csv, from_json, "column {label}");
        }
    }

    #[test]
    fn emission_is_byte_identical_across_runs() {
        let arch = eer_arch("Pyannote", [0.040, 0.055, 0.039, 0.024, 0.047]);
        let report = Report::build(&[arch]).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for (format, name) in [(ReportFormat::Json, "report.json"), (ReportFormat::Csv, "eer.csv")]
        {
            report.emit(format, dir_a.path()).unwrap();
            report.emit(format, dir_b.path()).unwrap();
            assert_eq!(
                std::fs::read(dir_a.path().join(name)).unwrap(),
                std::fs::read(dir_b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn closest_pair_renders_like_the_prose() {
        let pair = ClosestPair {
            speaker_a: "htm".to_string(),
            speaker_b: "mar".to_string(),
            similarity: 0.42,
        };
        assert_eq!(render_closest_pair(&pair), "htm/mar 0.42");
    }

    #[test]
    fn empty_results_are_rejected() {
        assert!(matches!(
            Report::build(&[]),
            Err(ReportError::EmptyReport)
        ));
        assert!(matches!(
            Report::build(&[ArchResults::new("x")]),
            Err(ReportError::EmptyReport)
        ));
    }

    fn toy_projection() -> Projection {
        Projection {
            keys: vec!["a".into(), "b".into(), "c".into()],
            coords: vec![[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]],
            kl_trace: vec![],
        }
    }

    #[test]
    fn scatter_svg_has_one_circle_per_point() {
        let labels: BTreeMap<String, String> = ["a", "b", "c"]
            .iter()
            .map(|k| (k.to_string(), "spk".to_string()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        emit_scatter_svg(&toy_projection(), &labels, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<text").count(), 1);
        assert!(svg.contains("viewBox"));
    }

    #[test]
    fn scatter_svg_is_deterministic() {
        let labels: BTreeMap<String, String> = [("a", "x"), ("b", "y"), ("c", "x")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("one.svg"), dir.path().join("two.svg"));
        emit_scatter_svg(&toy_projection(), &labels, &p1).unwrap();
        emit_scatter_svg(&toy_projection(), &labels, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn scatter_svg_rejects_bad_inputs() {
        let empty = Projection {
            keys: vec![],
            coords: vec![],
            kl_trace: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_scatter_svg(&empty, &BTreeMap::new(), dir.path().join("x.svg")),
            Err(ReportError::EmptyReport)
        ));
        let labels: BTreeMap<String, String> =
            [("a".to_string(), "x".to_string())].into_iter().collect();
        assert!(matches!(
            emit_scatter_svg(&toy_projection(), &labels, dir.path().join("y.svg")),
            Err(ReportError::LabelMissing(k)) if k == "b"
        ));
    }

    #[test]
    fn missing_cells_render_empty_and_are_skipped_in_best() {
        let mut a = eer_arch("A", [0.1, 0.2, 0.3, 0.4, 0.5]);
        a.eer_by_group.truncate(3);
        let b = eer_arch("B", [0.2, 0.3, 0.4, 0.5, 0.6]);
        let report = Report::build(&[a, b]).unwrap();
        let table = report.eer.as_ref().unwrap();
        let csv = table.to_csv().unwrap();
        assert!(csv.lines().nth(1).unwrap().ends_with(",,"));
        let best = table.best_per_column();
        assert_eq!(best[3].as_deref(), Some("B"));
        assert_eq!(best[0].as_deref(), Some("A"));
    }
}
