//! Result tables, gap comparisons and number rendering.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heterogeneity::HeterogeneityProfile;
use crate::metrics::{gap, Metric};
use crate::runner::{read_result, ExperimentResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(TableFormat::Json),
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }
}

/// Rounds the shortest decimal representation of `value` to `decimals`
/// places, ties to even.
pub fn round_half_even(value: f64, decimals: usize) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let text = format!("{}", value.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let int_len = digits.len();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend(frac.iter().take(decimals));
    digits.resize(int_len + decimals, 0);

    let rest = frac.get(decimals..).unwrap_or(&[]);
    let round_up = match rest.first() {
        None => false,
        Some(&d) if d > 5 => true,
        Some(&d) if d < 5 => false,
        Some(_) if rest[1..].iter().any(|&d| d != 0) => true,
        Some(_) => digits.last().is_some_and(|d| d % 2 == 1),
    };
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::new();
    if value.is_sign_negative() && digits.iter().any(|&d| d != 0) {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    out
}

/// Table precision: 2 decimals, or 4 when `|value| < 1`.
pub fn render_value(value: f64) -> String {
    round_half_even(value, if value.abs() < 1.0 { 4 } else { 2 })
}

/// Fractions rendered as percentages with 2 decimals.
pub fn render_percent(fraction: f64) -> String {
    round_half_even(fraction * 100.0, 2)
}

fn render_metric(key: &str, value: f64) -> String {
    match key.parse::<Metric>() {
        Ok(m) if m.is_percentage() => render_percent(value),
        _ => render_value(value),
    }
}

fn metric_header(key: &str) -> String {
    match key.parse::<Metric>() {
        Ok(m) if m.is_percentage() => format!("{}(%)", key.to_ascii_uppercase()),
        _ => key.to_ascii_uppercase(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dataset: Option<String>,
    pub model: Option<String>,
    pub path: PathBuf,
}

/// JSON list of result directories, each optionally relabelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunManifest {
    pub runs: Vec<ManifestEntry>,
}

impl RunManifest {
    /// Relative paths are resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for run in &mut m.runs {
            if run.path.is_relative() {
                run.path = base.join(&run.path);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub dataset: String,
    pub metrics: Vec<(String, f64)>,
    pub param_millions: f64,
    pub seconds_per_epoch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub cells: Vec<ReportCell>,
}

/// Rows are models; each dataset contributes one column per metric plus
/// Param (millions) and Speed (seconds per epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub datasets: Vec<String>,
    pub metrics: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn from_results(results: &[(String, String, ExperimentResult)]) -> Result<Self> {
        let mut table = ReportTable {
            datasets: Vec::new(),
            metrics: Vec::new(),
            rows: Vec::new(),
        };
        for (i, (dataset, model, result)) in results.iter().enumerate() {
            let keys: Vec<String> = result.test_metrics.keys().into_iter().map(String::from).collect();
            if i == 0 {
                table.metrics = keys.clone();
            } else if keys != table.metrics {
                return Err(Error::Report(format!(
                    "{model} on {dataset} reports {keys:?}, expected {:?}",
                    table.metrics
                )));
            }
            if !table.datasets.contains(dataset) {
                table.datasets.push(dataset.clone());
            }
            let row = match table.rows.iter().position(|r| &r.model == model) {
                Some(k) => &mut table.rows[k],
                None => {
                    table.rows.push(ReportRow {
                        model: model.clone(),
                        cells: Vec::new(),
                    });
                    table.rows.last_mut().expect("just pushed")
                }
            };
            if row.cells.iter().any(|c| &c.dataset == dataset) {
                return Err(Error::Report(format!("duplicate result for {model} on {dataset}")));
            }
            row.cells.push(ReportCell {
                dataset: dataset.clone(),
                metrics: keys
                    .iter()
                    .map(|k| (k.clone(), result.test_metrics.get(k).expect("key listed")))
                    .collect(),
                param_millions: result.parameter_count as f64 / 1e6,
                seconds_per_epoch: result.mean_seconds_per_epoch,
            });
        }
        if table.rows.is_empty() {
            return Err(Error::Report("no results to tabulate".into()));
        }
        Ok(table)
    }

    pub fn from_manifest(manifest: &RunManifest) -> Result<Self> {
        let results = manifest
            .runs
            .iter()
            .map(|entry| {
                let r = read_result(&entry.path)?;
                Ok((
                    entry.dataset.clone().unwrap_or_else(|| r.dataset.clone()),
                    entry.model.clone().unwrap_or_else(|| r.model.clone()),
                    r,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_results(&results)
    }

    /// Accepts either a manifest or a previously rendered JSON table.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        if value.is_array() {
            Self::from_manifest(&RunManifest::load(path)?)
        } else {
            serde_json::from_value(value).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
        }
    }

    fn columns(&self) -> Vec<(String, String)> {
        let mut cols = Vec::new();
        for d in &self.datasets {
            for m in &self.metrics {
                cols.push((d.clone(), m.clone()));
            }
            cols.push((d.clone(), "param".into()));
            cols.push((d.clone(), "speed".into()));
        }
        cols
    }

    fn value(&self, row: &ReportRow, dataset: &str, column: &str) -> Option<f64> {
        let cell = row.cells.iter().find(|c| c.dataset == dataset)?;
        match column {
            "param" => Some(cell.param_millions),
            "speed" => cell.seconds_per_epoch,
            key => cell.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v),
        }
    }

    fn header(column: &str) -> String {
        match column {
            "param" => "Param(M)".into(),
            "speed" => "Speed(s/epoch)".into(),
            key => metric_header(key),
        }
    }

    fn render_cell(column: &str, v: f64) -> String {
        match column {
            "param" | "speed" => round_half_even(v, 2),
            key => render_metric(key, v),
        }
    }

    pub fn render(&self, format: TableFormat) -> Result<String> {
        match format {
            TableFormat::Json => serde_json::to_string_pretty(self)
                .map(|s| s + "\n")
                .map_err(|e| Error::Report(e.to_string())),
            TableFormat::Csv => Ok(self.to_csv()),
            TableFormat::Markdown => Ok(self.to_markdown()),
        }
    }

    /// Full-precision values, one column per (dataset, column) pair.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("model");
        for (d, c) in &cols {
            let _ = write!(out, ",{d} {}", Self::header(c));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_field(&row.model));
            for (d, c) in &cols {
                out.push(',');
                if let Some(v) = self.value(row, d, c) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Rounded values with the best (lowest) entry of each column in bold.
    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let best: Vec<Option<f64>> = cols
            .iter()
            .map(|(d, c)| {
                self.rows
                    .iter()
                    .filter_map(|r| self.value(r, d, c))
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
            })
            .collect();
        let mut out = String::from("| Model |");
        for (d, c) in &cols {
            let _ = write!(out, " {d} {} |", Self::header(c));
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(cols.len()));
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "| {} |", row.model);
            for ((d, c), b) in cols.iter().zip(&best) {
                match self.value(row, d, c) {
                    Some(v) if best_count(&self.rows, |r| self.value(r, d, c)) > 1 && Some(v) == *b => {
                        let _ = write!(out, " **{}** |", Self::render_cell(c, v));
                    }
                    Some(v) => {
                        let _ = write!(out, " {} |", Self::render_cell(c, v));
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

// Best-marking only makes sense when there is something to compare against.
fn best_count(rows: &[ReportRow], value: impl Fn(&ReportRow) -> Option<f64>) -> usize {
    rows.iter().filter(|r| value(r).is_some()).count()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub label: String,
    pub metric: String,
    pub reported: f64,
    pub reproduced: Option<f64>,
    /// Percent.
    pub gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Deserialize)]
struct GapInput {
    #[serde(default)]
    label: Option<String>,
    metric: String,
    reported: f64,
    #[serde(default)]
    reproduced: Option<f64>,
}

/// Reads `metric,reported[,reproduced][,label]` rows (header required, any
/// column order). Rows without a reproduced value take it from `result`;
/// percentage metrics there are converted to percent.
pub fn gap_rows<R: Read>(reported: R, result: Option<&ExperimentResult>) -> Result<Vec<GapRow>> {
    let mut rows = Vec::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reported);
    for (i, rec) in reader.deserialize::<GapInput>().enumerate() {
        let input = rec.map_err(|e| Error::Parse {
            row: i + 2,
            col: None,
            message: e.to_string(),
        })?;
        let key = input.metric.to_ascii_lowercase();
        let reproduced = input.reproduced.or_else(|| {
            let r = result?;
            let v = r.test_metrics.get(&key)?;
            Some(match key.parse::<Metric>() {
                Ok(m) if m.is_percentage() => v * 100.0,
                _ => v,
            })
        });
        let label = input.label.unwrap_or_else(|| result.map_or_else(String::new, |r| format!("{} {}", r.model, r.dataset)));
        let (gap_value, error) = match reproduced {
            None => (None, Some(format!("no reproduced value for {key}"))),
            Some(y) => match gap(input.reported, y) {
                Ok(g) => (Some(g), None),
                Err(e) => (None, Some(e.to_string())),
            },
        };
        rows.push(GapRow {
            label,
            metric: key,
            reported: input.reported,
            reproduced,
            gap: gap_value,
            error,
        });
    }
    Ok(rows)
}

pub fn load_gap_rows(reported: &Path, result_dir: Option<&Path>) -> Result<Vec<GapRow>> {
    let file = fs::File::open(reported).map_err(|e| Error::io(reported, e))?;
    let result = result_dir.map(read_result).transpose()?;
    gap_rows(file, result.as_ref())
}

pub fn render_gap(rows: &[GapRow], format: TableFormat) -> Result<String> {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| round_half_even(x, 2));
    match format {
        TableFormat::Json => serde_json::to_string_pretty(rows)
            .map(|s| s + "\n")
            .map_err(|e| Error::Report(e.to_string())),
        TableFormat::Csv => {
            let mut out = String::from("label,metric,reported,reproduced,gap_percent,error\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    csv_field(&r.label),
                    r.metric,
                    r.reported,
                    r.reproduced.map_or_else(String::new, |v| v.to_string()),
                    r.gap.map_or_else(String::new, |v| v.to_string()),
                    csv_field(r.error.as_deref().unwrap_or(""))
                );
            }
            Ok(out)
        }
        TableFormat::Markdown => {
            let mut out = String::from("| Label | Metric | Reported | Reproduced | Gap |\n|---|---|---:|---:|---:|\n");
            for r in rows {
                let gap_text = match (&r.gap, &r.error) {
                    (Some(g), _) => format!("{}%", round_half_even(*g, 2)),
                    (None, Some(e)) => format!("ERROR: {e}"),
                    (None, None) => "-".into(),
                };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    r.label,
                    r.metric.to_ascii_uppercase(),
                    round_half_even(r.reported, 2),
                    fmt(r.reproduced),
                    gap_text
                );
            }
            Ok(out)
        }
    }
}

/// Plain-text r1/r2 table, one dataset per line.
pub fn profile_table(profiles: &[HeterogeneityProfile]) -> String {
    let width = profiles.iter().map(|p| p.dataset.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>15}  {:>18}\n", "dataset", "r1", "r2", "spatial", "temporal");
    for p in profiles {
        let spatial = serde_json::to_value(p.spatial_label).ok().and_then(|v| v.as_str().map(String::from));
        let temporal = serde_json::to_value(p.temporal_label).ok().and_then(|v| v.as_str().map(String::from));
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>15}  {:>18}",
            p.dataset,
            round_half_even(p.r1, 4),
            round_half_even(p.r2, 4),
            spatial.unwrap_or_default(),
            temporal.unwrap_or_default()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(0.125, 2), "0.12");
        assert_eq!(round_half_even(0.135, 2), "0.14");
        assert_eq!(round_half_even(2.675, 2), "2.68");
        assert_eq!(round_half_even(1.005, 2), "1.00");
        assert_eq!(round_half_even(9.995, 2), "10.00");
        assert_eq!(round_half_even(99.999, 2), "100.00");
        assert_eq!(round_half_even(-0.001, 2), "0.00");
        assert_eq!(round_half_even(-1.236, 2), "-1.24");
        assert_eq!(round_half_even(3.0, 2), "3.00");
        assert_eq!(round_half_even(1e-20, 4), "0.0000");
        assert_eq!(round_half_even(12.5, 0), "12");
        assert_eq!(round_half_even(13.5, 0), "14");
        assert_eq!(round_half_even(0.12500001, 2), "0.13");
    }

    #[test]
    fn value_precision() {
        assert_eq!(render_value(1.6049), "1.60");
        assert_eq!(render_value(0.51234), "0.5123");
        assert_eq!(render_percent(0.34468), "34.47");
    }

    #[test]
    fn gap_table_examples() {
        let csv = "label,metric,reported,reproduced\nGWNet PEMS04,mae,28.15,18.80\nDCRNN PEMS04,mae,24.70,19.66\nsame,mae,5,5\nzero,mae,0,1\n";
        let rows = gap_rows(csv.as_bytes(), None).unwrap();
        let g: Vec<String> = rows.iter().map(|r| r.gap.map(|g| round_half_even(g, 2)).unwrap_or_default()).collect();
        assert_eq!(g, vec!["33.21", "20.40", "0.00", ""]);
        assert!(rows[3].error.is_some());
        let md = render_gap(&rows, TableFormat::Markdown).unwrap();
        assert!(md.contains("| 33.21% |"));
        assert!(md.contains("ERROR"));
    }

    #[test]
    fn gap_needs_a_reproduced_value() {
        let rows = gap_rows("metric,reported\nmae,3\n".as_bytes(), None).unwrap();
        assert!(rows[0].gap.is_none() && rows[0].error.is_some());
        assert!(gap_rows("metric,reported\nmae,abc\n".as_bytes(), None).is_err());
    }
}
