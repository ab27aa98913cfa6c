//! Text pivot of a results table: mean minority accuracy in percent.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::metrics::{mean, std_across_skews};

use super::results::{ResultRow, ResultsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Strategy,
    Clients,
    Skew,
    ImagesPerClass,
    Seed,
}

impl std::str::FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "strategy" => GroupKey::Strategy,
            "clients" => GroupKey::Clients,
            "skew" => GroupKey::Skew,
            "images_per_class" | "budget" => GroupKey::ImagesPerClass,
            "seed" => GroupKey::Seed,
            other => return Err(Error::invalid(format!("cannot group by `{other}`"))),
        })
    }
}

/// Sortable label: numbers order numerically, strategies by their canonical order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Label {
    Num(u64),
    Name(u8, &'static str),
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Num(n) => write!(f, "{n}"),
            Label::Name(_, s) => f.write_str(s),
        }
    }
}

fn label(row: &ResultRow, key: GroupKey) -> Label {
    let k = row.key;
    match key {
        GroupKey::Strategy => Label::Name(k.strategy as u8, k.strategy.name()),
        GroupKey::Clients => Label::Num(k.clients as u64),
        GroupKey::Skew => Label::Num(k.skew as u64),
        GroupKey::ImagesPerClass => Label::Num(k.images_per_class as u64),
        GroupKey::Seed => Label::Num(k.seed),
    }
}

/// One key: a single column of means. Two keys: rows × columns plus the
/// population sd of each row's cell means. Cells average every successful
/// row that falls in them (seeds, and any dimension not grouped on).
pub fn pivot(table: &ResultsTable, keys: &[GroupKey]) -> Result<String> {
    let (row_key, col_key) = match keys {
        [r] => (*r, None),
        [r, c] if r != c => (*r, Some(*c)),
        _ => return Err(Error::invalid("group by one key, or two distinct keys")),
    };
    let mut cells: BTreeMap<Label, BTreeMap<Option<Label>, Vec<f64>>> = BTreeMap::new();
    let mut columns: Vec<Option<Label>> = Vec::new();
    for row in &table.rows {
        let Some(acc) = row.mean_accuracy else { continue };
        let col = col_key.map(|c| label(row, c));
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        cells.entry(label(row, row_key)).or_default().entry(col).or_default().push(acc);
    }
    if cells.is_empty() {
        return Err(Error::Results("no successful rows to report".into()));
    }
    columns.sort();

    let name = |k: GroupKey| format!("{k:?}").to_lowercase();
    let mut out = String::new();
    let mut header = vec![name(row_key)];
    header.extend(columns.iter().map(|c| match (c, col_key) {
        (Some(l), Some(k)) => format!("{}={l}", name(k)),
        _ => "accuracy%".into(),
    }));
    if col_key.is_some() {
        header.push("sd".into());
    }
    let mut lines = vec![header];
    for (r, by_col) in &cells {
        let mut line = vec![r.to_string()];
        let mut means = Vec::new();
        for c in &columns {
            match by_col.get(c) {
                Some(v) => {
                    let m = mean(v);
                    means.push(m);
                    line.push(format!("{:.1}", 100.0 * m));
                }
                None => line.push("-".into()),
            }
        }
        if col_key.is_some() {
            line.push(std_across_skews(&means).map_or("-".into(), |sd| format!("{sd:.2}")));
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).expect("writing to a String");
    }
    Ok(out)
}
