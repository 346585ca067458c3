use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedtrade_core::engine::{Comparison, ExperimentConfig, SuiteSummary, SummaryEntry, POOLED};
use fedtrade_core::harmonize::{write_difference_panel, Harmonizer, PluginRegistry};
use fedtrade_core::synthdata::{make_federation, Split};

use crate::config_io::{parse_json, read_json, read_text, write_text};
use crate::error::{CliError, CliResult};

const SUMMARY_HEADER: [&str; 7] = ["cell", "method", "client", "metric", "mean", "std", "seeds"];

/// Amplification used for the difference column of sample panels.
pub const PANEL_SCALE: f64 = 5.0;

/// Parses `summary.csv`.
pub fn summary_from_csv(text: &str, origin: &str) -> CliResult<Vec<SummaryEntry>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| CliError::config(format!("{origin}: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
        return Err(CliError::config(format!(
            "{origin}: schema mismatch, expected header {} but found {}",
            SUMMARY_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::config(format!("{origin} line {line}: {e}")))?;
        let num = |col: usize| {
            rec[col]
                .parse::<f64>()
                .map_err(|e| CliError::config(format!("{origin} line {line}, column `{}`: {e}", SUMMARY_HEADER[col])))
        };
        out.push(SummaryEntry {
            cell: rec[0].to_string(),
            method: rec[1].to_string(),
            client: rec[2].to_string(),
            metric: rec[3].to_string(),
            mean: num(4)?,
            std: num(5)?,
            seeds: rec[6]
                .parse()
                .map_err(|e| CliError::config(format!("{origin} line {line}, column `seeds`: {e}")))?,
        });
    }
    Ok(out)
}

/// Loads a summary from `summary.json`, `summary.csv`, or a directory
/// holding either (JSON preferred; it also carries the comparisons).
pub fn load_summary(path: &Path) -> CliResult<SuiteSummary> {
    let file: PathBuf = if path.is_dir() {
        let json = path.join("summary.json");
        if json.exists() {
            json
        } else {
            path.join("summary.csv")
        }
    } else {
        path.to_path_buf()
    };
    let origin = file.display().to_string();
    if file.extension().is_some_and(|e| e == "csv") {
        Ok(SuiteSummary {
            entries: summary_from_csv(&read_text(&file)?, &origin)?,
            ..SuiteSummary::default()
        })
    } else {
        parse_json(&read_text(&file)?, &origin)
    }
}

/// One rendered table: methods as rows, clients (then the mean or pooled
/// value) as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub cell: String,
    pub metric: String,
    pub columns: Vec<String>,
    pub methods: Vec<String>,
    /// `cells[row][col]`, `None` when the method has no such column.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Standard deviation over seeds of the last (aggregate) column.
    pub spread: Vec<Option<f64>>,
    pub seeds: usize,
}

fn column_key(client: &str) -> (usize, usize) {
    match client.parse::<usize>() {
        Ok(k) => (0, k),
        Err(_) if client == "mean" => (1, 0),
        Err(_) => (2, 0),
    }
}

fn column_label(client: &str) -> String {
    match client.parse::<usize>() {
        Ok(k) => format!("C{}", k + 1),
        Err(_) if client == "mean" => "Mean".into(),
        Err(_) if client == POOLED => "Pooled".into(),
        Err(_) => client.to_string(),
    }
}

pub fn build_tables(entries: &[SummaryEntry]) -> Vec<Table> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for e in entries {
        let k = (e.cell.clone(), e.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(cell, metric)| {
            let rows: Vec<&SummaryEntry> = entries.iter().filter(|e| e.cell == cell && e.metric == metric).collect();
            let mut clients: Vec<&str> = Vec::new();
            let mut methods: Vec<String> = Vec::new();
            for e in &rows {
                if !clients.contains(&e.client.as_str()) {
                    clients.push(&e.client);
                }
                if !methods.contains(&e.method) {
                    methods.push(e.method.clone());
                }
            }
            clients.sort_by_key(|c| column_key(c));
            let find = |m: &str, c: &str| rows.iter().find(|e| e.method == m && e.client == c);
            let cells = methods
                .iter()
                .map(|m| clients.iter().map(|c| find(m, c).map(|e| e.mean)).collect())
                .collect();
            let spread = methods
                .iter()
                .map(|m| {
                    find(m, "mean").or_else(|| find(m, POOLED)).map(|e| e.std)
                })
                .collect();
            Table {
                seeds: rows.iter().map(|e| e.seeds).max().unwrap_or(0),
                columns: clients.iter().map(|c| column_label(c)).collect(),
                cell,
                metric,
                methods,
                cells,
                spread,
            }
        })
        .collect()
}

fn fmt_value(v: f64) -> String {
    format!("{v:.4}")
}

impl Table {
    /// Per column, whether each row holds the best (highest) value. Ties
    /// at display precision are all marked.
    pub fn best_marks(&self) -> Vec<Vec<bool>> {
        let mut marks = vec![vec![false; self.columns.len()]; self.methods.len()];
        for c in 0..self.columns.len() {
            let best = self
                .cells
                .iter()
                .filter_map(|row| row[c])
                .map(fmt_value)
                .max_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
            if let Some(best) = best {
                for (r, row) in self.cells.iter().enumerate() {
                    marks[r][c] = row[c].map(fmt_value).as_ref() == Some(&best);
                }
            }
        }
        marks
    }

    fn rendered_cells(&self, bold: bool) -> Vec<Vec<String>> {
        let marks = self.best_marks();
        self.cells
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let mut out: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(c, v)| match v {
                        None => "-".into(),
                        Some(v) if marks[r][c] && bold => format!("**{}**", fmt_value(*v)),
                        Some(v) if marks[r][c] => format!("{}*", fmt_value(*v)),
                        Some(v) => fmt_value(*v),
                    })
                    .collect();
                out.push(self.spread[r].map(fmt_value).unwrap_or_else(|| "-".into()));
                out
            })
            .collect()
    }

    fn title(&self) -> String {
        format!("{} / {} (mean over {} seed(s))", self.cell, self.metric, self.seeds)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["method".to_string()];
        h.extend(self.columns.iter().cloned());
        h.push("Std".into());
        h
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let body: Vec<Vec<String>> = self
            .rendered_cells(false)
            .into_iter()
            .zip(&self.methods)
            .map(|(cells, m)| std::iter::once(m.clone()).chain(cells).collect())
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| {
            row.iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n{}\n", self.title(), line(&header));
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("### {}\n\n| {} |\n|{}\n", self.title(), header.join(" | "), "---|".repeat(header.len()));
        for (cells, m) in self.rendered_cells(true).into_iter().zip(&self.methods) {
            let _ = writeln!(out, "| {m} | {} |", cells.join(" | "));
        }
        out
    }
}

/// Ordering statement for one cell, e.g.
/// `harmonization (adain 0.9828) > personalization (ditto 0.9478) > fedavg_local 0.6051`.
pub fn comparison_line(c: &Comparison) -> String {
    let mut parts: Vec<(f64, String)> = Vec::new();
    if let Some(b) = &c.best_harmonization {
        parts.push((b.mean, format!("harmonization ({} {})", b.method, fmt_value(b.mean))));
    }
    if let Some(b) = &c.best_personalization {
        parts.push((b.mean, format!("personalization ({} {})", b.method, fmt_value(b.mean))));
    }
    if let Some(v) = c.fedavg_local {
        parts.push((v, format!("fedavg_local {}", fmt_value(v))));
    }
    parts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = parts
        .windows(2)
        .fold(parts.first().map(|p| p.1.clone()).unwrap_or_default(), |acc, w| {
            let op = if fmt_value(w[0].0) == fmt_value(w[1].0) { "=" } else { ">" };
            format!("{acc} {op} {}", w[1].1)
        });
    if let Some(d) = c.harmonization_minus_personalization {
        let _ = write!(out, "; harmonization - personalization = {d:+.4}");
    }
    format!("{} [{}]: {out}", c.cell, c.metric)
}

pub struct Rendered {
    pub text: String,
    pub markdown: String,
}

pub fn render(summaries: &[SuiteSummary]) -> Rendered {
    let mut text = String::new();
    let mut markdown = String::new();
    for s in summaries {
        for t in build_tables(&s.entries) {
            text.push_str(&t.to_text());
            text.push('\n');
            markdown.push_str(&t.to_markdown());
            markdown.push('\n');
        }
        if !s.comparisons.is_empty() {
            text.push_str("Comparisons\n");
            markdown.push_str("### Comparisons\n\n");
            for c in &s.comparisons {
                let l = comparison_line(c);
                let _ = writeln!(text, "  {l}");
                let _ = writeln!(markdown, "- {l}");
            }
            text.push('\n');
            markdown.push('\n');
        }
        if !s.failures.is_empty() {
            text.push_str("Failed runs\n");
            markdown.push_str("### Failed runs\n\n");
            for f in &s.failures {
                let _ = writeln!(text, "  {} / {} / seed {}: {}", f.cell, f.method, f.seed, f.error);
                let _ = writeln!(markdown, "- {} / {} / seed {}: {}", f.cell, f.method, f.seed, f.error);
            }
            text.push('\n');
            markdown.push('\n');
        }
    }
    Rendered { text, markdown }
}

/// Writes one `original | harmonized | amplified difference` panel per
/// client (first test image) for the harmonization in `config_path`.
pub fn emit_panels(config_path: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let config: ExperimentConfig = read_json(config_path)?;
    config.validate()?;
    let fed = make_federation(&config.federation_spec())?;
    let h = Harmonizer::new(&config.harmonize, &fed, &config.reference, &config.augment, &PluginRegistry::default())?;
    if !h.is_static() {
        return Err(CliError::config(format!(
            "harmonize `{}` has no deterministic per-image transform to show",
            config.harmonize.label()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut paths = Vec::new();
    for c in &fed.clients {
        let x = c.image(c.indices(Split::Test)[0]);
        let y = h.transform_image(&x, c.client_id)?;
        let path = out.join(format!("panel_{}_client{}.pgm", config.harmonize.label().replace(':', "_"), c.client_id));
        write_difference_panel(&path, &x, &y, PANEL_SCALE)?;
        paths.push(path);
    }
    Ok(paths)
}

/// `report`: renders every summary; writes `report.txt` / `report.md`
/// when `out` is given.
pub fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> CliResult<Rendered> {
    if paths.is_empty() {
        return Err(CliError::config("report needs at least one summary path"));
    }
    let summaries = paths.iter().map(|p| load_summary(p)).collect::<CliResult<Vec<_>>>()?;
    let rendered = render(&summaries);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_text(&dir.join("report.txt"), &rendered.text)?;
        write_text(&dir.join("report.md"), &rendered.markdown)?;
    }
    Ok(rendered)
}
