//! Results rows, CSV / JSON-lines emission and parsing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::Strategy;
use crate::metrics::{std_across_skews, SD_CONVENTION};

use super::config::OutputFormat;

pub const CSV_HEADER: [&str; 12] = [
    "strategy",
    "clients",
    "skew",
    "images_per_class",
    "seed",
    "client_accuracies",
    "mean_accuracy",
    "sd_across_skews",
    "bytes_per_client_round",
    "bytes_total",
    "status",
    "sd_convention",
];

/// Grid coordinates of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub strategy: Strategy,
    pub clients: usize,
    pub skew: u32,
    pub images_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub key: CellKey,
    /// Minority-class accuracy of every client, in client order.
    pub client_accuracies: Vec<f64>,
    pub mean_accuracy: Option<f64>,
    /// Filled for every row of a (strategy, clients, budget, seed) group with ≥ 2 successful skews.
    pub sd_across_skews: Option<f64>,
    pub bytes_per_client_round: Option<f64>,
    pub bytes_total: u64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub sd_convention: String,
}

impl ResultRow {
    pub fn ok(key: CellKey, client_accuracies: Vec<f64>, bytes_per_client_round: f64, bytes_total: u64) -> Self {
        let mean = crate::metrics::mean(&client_accuracies);
        ResultRow {
            key,
            client_accuracies,
            mean_accuracy: Some(mean),
            sd_across_skews: None,
            bytes_per_client_round: Some(bytes_per_client_round),
            bytes_total,
            status: "ok".into(),
            sd_convention: SD_CONVENTION.into(),
        }
    }

    pub fn failed(key: CellKey, reason: &str) -> Self {
        ResultRow {
            key,
            client_accuracies: Vec::new(),
            mean_accuracy: None,
            sd_across_skews: None,
            bytes_per_client_round: None,
            bytes_total: 0,
            status: format!("failed: {reason}"),
            sd_convention: SD_CONVENTION.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Sorts by cell coordinates and fills the across-skew sd of every group.
    pub fn from_rows(mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by_key(|r| r.key);
        let mut groups: BTreeMap<(Strategy, usize, usize, u64), Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            let k = r.key;
            groups
                .entry((k.strategy, k.clients, k.images_per_class, k.seed))
                .or_default()
                .push(i);
        }
        for members in groups.values() {
            let values: Vec<f64> = members.iter().filter_map(|&i| rows[i].mean_accuracy).collect();
            let sd = std_across_skews(&values).ok();
            for &i in members {
                rows[i].sd_across_skews = if rows[i].is_ok() { sd } else { None };
            }
        }
        ResultsTable { rows }
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Results(e.to_string());
        w.write_record(CSV_HEADER).map_err(fail)?;
        let opt = |v: Option<f64>, digits: usize| v.map_or(String::new(), |v| format!("{v:.digits$}"));
        for r in &self.rows {
            let k = r.key;
            let accs: Vec<String> = r.client_accuracies.iter().map(|a| format!("{a:.4}")).collect();
            w.write_record([
                k.strategy.name().to_string(),
                k.clients.to_string(),
                k.skew.to_string(),
                k.images_per_class.to_string(),
                k.seed.to_string(),
                accs.join(";"),
                opt(r.mean_accuracy, 4),
                opt(r.sd_across_skews, 4),
                opt(r.bytes_per_client_round, 1),
                r.bytes_total.to_string(),
                r.status.clone(),
                r.sd_convention.clone(),
            ])
            .map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Results(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Results(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::Results(e.to_string()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Results(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Results(e.to_string()))?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let bad = |name: &str| Error::Results(format!("line {line}: bad `{name}` value"));
            let num = |j: usize, name: &str| -> Result<Option<f64>> {
                let s = field(j);
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(name))
                }
            };
            let accs = if field(5).is_empty() {
                Vec::new()
            } else {
                field(5)
                    .split(';')
                    .map(|a| a.parse().map_err(|_| bad("client_accuracies")))
                    .collect::<Result<_>>()?
            };
            rows.push(ResultRow {
                key: CellKey {
                    strategy: field(0).parse()?,
                    clients: field(1).parse().map_err(|_| bad("clients"))?,
                    skew: field(2).parse().map_err(|_| bad("skew"))?,
                    images_per_class: field(3).parse().map_err(|_| bad("images_per_class"))?,
                    seed: field(4).parse().map_err(|_| bad("seed"))?,
                },
                client_accuracies: accs,
                mean_accuracy: num(6, "mean_accuracy")?,
                sd_across_skews: num(7, "sd_across_skews")?,
                bytes_per_client_round: num(8, "bytes_per_client_round")?,
                bytes_total: field(9).parse().map_err(|_| bad("bytes_total"))?,
                status: field(10).to_string(),
                sd_convention: field(11).to_string(),
            });
        }
        Ok(ResultsTable { rows })
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Results(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Results(format!("line {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        Ok(ResultsTable { rows })
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::JsonLines => self.to_json_lines(),
        }
    }
}

/// Writes the table; refuses an empty table.
pub fn emit_results(table: &ResultsTable, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if table.rows.is_empty() {
        return Err(Error::Results("refusing to write an empty results table".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, table.render(format)?).map_err(|e| Error::io(path, e))
}

/// Reads a results file, choosing the parser from its extension (`.jsonl` / `.json` vs CSV).
pub fn read_results(path: impl AsRef<Path>) -> Result<ResultsTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => ResultsTable::from_json_lines(&text),
        _ => ResultsTable::from_csv(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(strategy: Strategy, skew: u32, seed: u64) -> CellKey {
        CellKey {
            strategy,
            clients: 4,
            skew,
            images_per_class: 200,
            seed,
        }
    }

    fn sample() -> ResultsTable {
        ResultsTable::from_rows(vec![
            ResultRow::ok(key(Strategy::FedAvg, 20, 0), vec![0.5, 0.25, 0.75, 0.5], 488208.0, 1000),
            ResultRow::ok(key(Strategy::CoDistill, 0, 0), vec![0.8167, 0.9, 0.8, 0.75], 16.0, 64),
            ResultRow::failed(key(Strategy::CoDistill, 40, 0), "diverged, \"round 3\""),
            ResultRow::ok(key(Strategy::CoDistill, 20, 0), vec![0.5, 0.5, 0.5, 0.5], 16.0, 64),
        ])
    }

    #[test]
    fn rows_sorted_and_sd_filled() {
        let t = sample();
        let keys: Vec<(Strategy, u32)> = t.rows.iter().map(|r| (r.key.strategy, r.key.skew)).collect();
        assert_eq!(
            keys,
            vec![
                (Strategy::CoDistill, 0),
                (Strategy::CoDistill, 20),
                (Strategy::CoDistill, 40),
                (Strategy::FedAvg, 20)
            ]
        );
        let cd_means = [t.rows[0].mean_accuracy.unwrap(), 0.5];
        let want = std_across_skews(&cd_means).unwrap();
        assert_eq!(t.rows[0].sd_across_skews, Some(want));
        assert_eq!(t.rows[1].sd_across_skews, Some(want));
        assert_eq!(t.rows[2].sd_across_skews, None);
        assert_eq!(t.rows[3].sd_across_skews, None);
        assert_eq!(t.failures(), 1);
    }

    #[test]
    fn csv_formatting_and_round_trip() {
        let one = ResultsTable::from_rows(vec![ResultRow::ok(key(Strategy::CoDistill, 60, 1), vec![0.8167], 16.0, 16)]);
        let text = one.to_csv().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines[1], "codistill,4,60,200,1,0.8167,0.8167,,16.0,16,ok,population");

        let t = sample();
        let csv = t.to_csv().unwrap();
        assert!(csv.contains("\"failed: diverged, \"\"round 3\"\"\""));
        let back = ResultsTable::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv().unwrap(), csv);
        assert_eq!(back.rows[1].key, t.rows[1].key);
        assert_eq!(back.rows[1].client_accuracies, t.rows[1].client_accuracies);
        assert_eq!(back.rows[2].status, t.rows[2].status);
    }

    #[test]
    fn json_lines_round_trip_exactly() {
        let t = sample();
        let text = t.to_json_lines().unwrap();
        assert_eq!(text.lines().count(), t.rows.len());
        assert_eq!(ResultsTable::from_json_lines(&text).unwrap(), t);
    }

    #[test]
    fn emit_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        for (name, fmt) in [("r.csv", OutputFormat::Csv), ("r.jsonl", OutputFormat::JsonLines)] {
            let path = dir.path().join("nested").join(name);
            emit_results(&t, fmt, &path).unwrap();
            let back = read_results(&path).unwrap();
            assert_eq!(back.render(fmt).unwrap(), t.render(fmt).unwrap());
        }
        assert!(emit_results(&ResultsTable::default(), OutputFormat::Csv, dir.path().join("e.csv")).is_err());
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(emit_results(&t, OutputFormat::Csv, blocker.join("r.csv")).is_err());
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(ResultsTable::from_csv("a,b\n1,2\n").is_err());
        let bad = format!("{}\ncodistill,x,0,200,0,,,,,0,ok,population\n", CSV_HEADER.join(","));
        assert!(ResultsTable::from_csv(&bad).is_err());
    }
}
