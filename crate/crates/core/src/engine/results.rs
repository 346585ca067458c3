use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::eval::MetricRow;
use crate::error::{FedError, Result};

/// Client column of a pooled (globally tested) row.
pub const POOLED: &str = "pooled";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    /// Client id, or `pooled`.
    pub client: String,
    pub metric: String,
    pub value: f64,
}

/// Long-format result cells: `method, client, metric, value`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn push_metrics(&mut self, method: &str, client: &str, metrics: &MetricRow) {
        for &(metric, value) in metrics {
            self.rows.push(ResultRow {
                method: method.to_string(),
                client: client.to_string(),
                metric: metric.to_string(),
                value,
            });
        }
    }

    pub fn push_local(&mut self, method: &str, per_client: &[MetricRow]) {
        for (k, m) in per_client.iter().enumerate() {
            self.push_metrics(method, &k.to_string(), m);
        }
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    pub fn value(&self, method: &str, client: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.client == client && r.metric == metric)
            .map(|r| r.value)
    }

    /// Values of `metric` for `method`, one per locally-tested client in
    /// client order (pooled rows excluded).
    pub fn local_values(&self, method: &str, metric: &str) -> Vec<f64> {
        let mut cells: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric)
            .filter_map(|r| r.client.parse::<usize>().ok().map(|c| (c, r.value)))
            .collect();
        cells.sort_by_key(|&(c, _)| c);
        cells.into_iter().map(|(_, v)| v).collect()
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "client", "metric", "value"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.method.as_str(), r.client.as_str(), r.metric.as_str(), &r.value.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| FedError::manifest("results.csv", e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["method", "client", "metric", "value"] {
            return Err(FedError::manifest("results.csv", format!("unexpected header {headers:?}")));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| FedError::manifest(format!("results.csv line {}", line + 2), e.to_string()))?;
            let value = rec[3]
                .parse::<f64>()
                .map_err(|e| FedError::manifest(format!("results.csv line {}", line + 2), e.to_string()))?;
            rows.push(ResultRow {
                method: rec[0].to_string(),
                client: rec[1].to_string(),
                metric: rec[2].to_string(),
                value,
            });
        }
        Ok(ResultTable { rows })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv_path = dir.join("results.csv");
        fs::write(&csv_path, self.to_csv()).map_err(|e| FedError::io(&csv_path, e))?;
        let json_path = dir.join("results.json");
        fs::write(&json_path, self.to_json()).map_err(|e| FedError::io(&json_path, e))
    }
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Weighted mean evaluation-mode training loss of the model(s) after
    /// the round.
    pub global_loss: f64,
    pub delta_norm: f64,
    /// Primary metric of each client's evaluation model on its validation
    /// split (empty when disabled).
    pub per_client_val_metric: Vec<f64>,
}

pub fn rounds_to_jsonl(records: &[RoundRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = ResultTable::default();
        t.push_local("hist_sri", &[vec![("kappa", 0.5), ("accuracy", 0.75)], vec![("kappa", 0.1), ("accuracy", 0.3)]]);
        t.push_metrics("central_global", POOLED, &vec![("kappa", 1.0 / 3.0)]);
        let csv = t.to_csv();
        assert!(csv.starts_with("method,client,metric,value\n"));
        assert_eq!(ResultTable::from_csv(&csv).unwrap(), t);
        assert_eq!(t.local_values("hist_sri", "kappa"), vec![0.5, 0.1]);
    }
}
