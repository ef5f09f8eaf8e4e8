use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::table::{parse_numeric, CellCoord, Table, TableTextPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// "select <header>": every body cell of the column with that header.
    SelectByHeader,
    /// "show the row for <key>": every cell of the row whose key-column
    /// cell equals the key.
    SelectRowByKey,
    /// "largest <header>": the unique maximum of that numeric column.
    ArgmaxInColumn,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::SelectByHeader,
        TaskKind::SelectRowByKey,
        TaskKind::ArgmaxInColumn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SelectByHeader => "select-by-header",
            TaskKind::SelectRowByKey => "select-row-by-key",
            TaskKind::ArgmaxInColumn => "argmax-in-column",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "select-by-header" | "by-header" | "header" => Ok(TaskKind::SelectByHeader),
            "select-row-by-key" | "row-by-key" | "row" | "key" => Ok(TaskKind::SelectRowByKey),
            "argmax-in-column" | "argmax" => Ok(TaskKind::ArgmaxInColumn),
            other => Err(Error::InvalidConfig(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Words the generator draws from. Values are shared by all columns so a
/// cell's content says nothing about which column it sits in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabPool {
    pub headers: Vec<String>,
    pub values: Vec<String>,
    pub keys: Vec<String>,
    /// Header of the key column in [`TaskKind::SelectRowByKey`].
    pub key_header: String,
    /// Numeric cells are integers in `0..=numeric_max`.
    pub numeric_max: u32,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

impl Default for VocabPool {
    fn default() -> Self {
        Self {
            headers: words(&[
                "color", "city", "team", "fruit", "animal", "metal", "sport", "plant", "tool", "drink", "planet", "gem",
            ]),
            values: words(&[
                "red", "blue", "green", "paris", "lima", "oslo", "lions", "hawks", "apple", "pear", "otter", "crow",
                "iron", "zinc", "golf", "judo", "fern", "moss", "saw", "drill", "tea", "milk", "mars", "ruby",
            ]),
            keys: words(&[
                "alice", "bruno", "chen", "dara", "emil", "fatma", "gus", "hana", "ivan", "jude", "kofi", "lena",
                "mika", "nora", "omar", "pia",
            ]),
            key_header: "name".into(),
            numeric_max: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub min_rows: usize,
    pub max_rows: usize,
    pub min_cols: usize,
    pub max_cols: usize,
    #[serde(default)]
    pub pool: VocabPool,
    pub seed: u64,
}

impl TaskSpec {
    /// Tables of 2 to 4 rows and 2 to 3 columns over the default pool.
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self {
            kind,
            min_rows: 2,
            max_rows: 4,
            min_cols: 2,
            max_cols: 3,
            pool: VocabPool::default(),
            seed,
        }
    }

    pub fn with_shape(mut self, rows: (usize, usize), cols: (usize, usize)) -> Self {
        (self.min_rows, self.max_rows) = rows;
        (self.min_cols, self.max_cols) = cols;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleTask(msg));
        if self.min_rows == 0 || self.min_rows > self.max_rows {
            return fail(format!("row range {}..={}", self.min_rows, self.max_rows));
        }
        if self.min_cols == 0 || self.min_cols > self.max_cols {
            return fail(format!("column range {}..={}", self.min_cols, self.max_cols));
        }
        let p = &self.pool;
        match self.kind {
            TaskKind::SelectByHeader => {
                if p.headers.len() < self.max_cols {
                    return fail(format!(
                        "{} headers for up to {} columns",
                        p.headers.len(),
                        self.max_cols
                    ));
                }
                if p.values.is_empty() {
                    return fail("empty value pool".into());
                }
            }
            TaskKind::SelectRowByKey => {
                if p.headers.len() + 1 < self.max_cols {
                    return fail(format!(
                        "{} headers for up to {} columns",
                        p.headers.len() + 1,
                        self.max_cols
                    ));
                }
                if p.headers.contains(&p.key_header) {
                    return fail(format!("key header {:?} is also a value header", p.key_header));
                }
                if p.keys.len() < self.max_rows {
                    return fail(format!("{} keys for up to {} rows", p.keys.len(), self.max_rows));
                }
                if self.max_cols > 1 && p.values.is_empty() {
                    return fail("empty value pool".into());
                }
            }
            TaskKind::ArgmaxInColumn => {
                if p.headers.len() < self.max_cols {
                    return fail(format!(
                        "{} headers for up to {} columns",
                        p.headers.len(),
                        self.max_cols
                    ));
                }
                if (p.numeric_max as usize) + 1 < self.max_rows {
                    return fail(format!(
                        "a unique maximum over {} rows needs at least that many distinct numbers",
                        self.max_rows
                    ));
                }
            }
        }
        Ok(())
    }
}

fn range(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn pick<'a>(rng: &mut SplitMix64, items: &'a [String]) -> &'a str {
    &items[rng.below(items.len() as u64) as usize]
}

/// `k` distinct items in random order.
fn sample<'a>(rng: &mut SplitMix64, items: &'a [String], k: usize) -> Vec<&'a str> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    rng.shuffle(&mut idx);
    idx[..k].iter().map(|&i| items[i].as_str()).collect()
}

/// Gold cells of `query` over `table` for `kind`. For row lookup the key
/// column is the one headed `key_header`, or the first column if no header
/// matches.
pub fn answer(kind: TaskKind, table: &Table, query: &str, key_header: &str) -> Result<BTreeSet<CellCoord>> {
    let column_of = |name: &str| {
        let hits: Vec<usize> = (0..table.num_cols()).filter(|&c| table.headers()[c] == name).collect();
        match hits[..] {
            [c] => Ok(c),
            [] => Err(Error::InfeasibleTask(format!("no column headed {name:?}"))),
            _ => Err(Error::InfeasibleTask(format!("several columns headed {name:?}"))),
        }
    };
    match kind {
        TaskKind::SelectByHeader => {
            let c = column_of(query)?;
            Ok((0..table.num_rows()).map(|r| CellCoord::new(r, c)).collect())
        }
        TaskKind::SelectRowByKey => {
            let key = column_of(key_header).unwrap_or(0);
            let hits: Vec<usize> = (0..table.num_rows())
                .filter(|&r| table.rows()[r][key] == query)
                .collect();
            match hits[..] {
                [r] => Ok((0..table.num_cols()).map(|c| CellCoord::new(r, c)).collect()),
                _ => Err(Error::InfeasibleTask(format!("{} rows keyed {query:?}", hits.len()))),
            }
        }
        TaskKind::ArgmaxInColumn => {
            let c = column_of(query)?;
            let mut values = Vec::with_capacity(table.num_rows());
            for r in 0..table.num_rows() {
                let text = &table.rows()[r][c];
                let v = parse_numeric(text).ok_or_else(|| Error::InfeasibleTask(format!("{text:?} is not numeric")))?;
                values.push(v);
            }
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best: Vec<usize> = (0..values.len()).filter(|&r| values[r] == max).collect();
            match best[..] {
                [r] => Ok([CellCoord::new(r, c)].into()),
                _ => Err(Error::InfeasibleTask(format!("{} cells share the maximum", best.len()))),
            }
        }
    }
}

fn generate_one(spec: &TaskSpec, seed: u64) -> Result<TableTextPair> {
    let mut rng = SplitMix64::new(seed);
    let p = &spec.pool;
    let rows = range(&mut rng, spec.min_rows, spec.max_rows);
    let cols = range(&mut rng, spec.min_cols, spec.max_cols);
    let (sentence, query, headers, body): (String, String, Vec<String>, Vec<Vec<String>>) = match spec.kind {
        TaskKind::SelectByHeader => {
            let headers: Vec<String> = sample(&mut rng, &p.headers, cols)
                .into_iter()
                .map(String::from)
                .collect();
            let body = (0..rows)
                .map(|_| (0..cols).map(|_| pick(&mut rng, &p.values).to_string()).collect())
                .collect();
            let query = headers[rng.below(cols as u64) as usize].clone();
            (format!("select {query}"), query, headers, body)
        }
        TaskKind::SelectRowByKey => {
            // Key column first, as in most real tables.
            let mut headers = vec![p.key_header.clone()];
            headers.extend(sample(&mut rng, &p.headers, cols - 1).into_iter().map(String::from));
            let keys = sample(&mut rng, &p.keys, rows);
            let body = keys
                .iter()
                .map(|k| {
                    let mut row = vec![k.to_string()];
                    row.extend((1..cols).map(|_| pick(&mut rng, &p.values).to_string()));
                    row
                })
                .collect();
            let query = keys[rng.below(rows as u64) as usize].to_string();
            (format!("show the row for {query}"), query, headers, body)
        }
        TaskKind::ArgmaxInColumn => {
            let headers: Vec<String> = sample(&mut rng, &p.headers, cols)
                .into_iter()
                .map(String::from)
                .collect();
            let target = rng.below(cols as u64) as usize;
            let numbers: Vec<String> = (0..=p.numeric_max).map(|v| v.to_string()).collect();
            // Distinct values in the queried column give a unique maximum.
            let column = sample(&mut rng, &numbers, rows);
            let body = (0..rows)
                .map(|r| {
                    (0..cols)
                        .map(|c| {
                            if c == target {
                                column[r].to_string()
                            } else {
                                pick(&mut rng, &numbers).to_string()
                            }
                        })
                        .collect()
                })
                .collect();
            let query = headers[target].clone();
            (format!("largest {query}"), query, headers, body)
        }
    };
    let table = Table::new(headers, body)?;
    let gold = answer(spec.kind, &table, &query, &p.key_header)?;
    TableTextPair::new(sentence, table, gold)
}

/// `n` pairs for `spec`. Example `i` depends only on `(spec, i)`, so a
/// longer dataset extends a shorter one.
pub fn generate_dataset(spec: &TaskSpec, n: usize) -> Result<Vec<TableTextPair>> {
    if n == 0 {
        return Err(Error::InfeasibleTask("n must be at least 1".into()));
    }
    spec.validate()?;
    (0..n)
        .map(|i| generate_one(spec, derive_seed(spec.seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_prefix_stable() {
        let spec = TaskSpec::new(TaskKind::SelectRowByKey, 5);
        let a = generate_dataset(&spec, 20).unwrap();
        assert_eq!(a, generate_dataset(&spec, 20).unwrap());
        assert_eq!(a[..5], generate_dataset(&spec, 5).unwrap()[..]);
        assert_ne!(
            a,
            generate_dataset(&TaskSpec::new(TaskKind::SelectRowByKey, 6), 20).unwrap()
        );
    }

    #[test]
    fn shapes_stay_in_range() {
        for kind in TaskKind::ALL {
            let spec = TaskSpec::new(kind, 1).with_shape((1, 5), (1, 4));
            for p in generate_dataset(&spec, 200).unwrap() {
                assert!((1..=5).contains(&p.table().num_rows()));
                assert!((1..=4).contains(&p.table().num_cols()));
                assert!(!p.gold_cells().is_empty());
            }
        }
    }

    #[test]
    fn infeasible_specs() {
        let mut spec = TaskSpec::new(TaskKind::ArgmaxInColumn, 0);
        spec.pool.numeric_max = 2;
        assert!(matches!(generate_dataset(&spec, 1), Err(Error::InfeasibleTask(_))));
        let spec = TaskSpec::new(TaskKind::SelectRowByKey, 0).with_shape((2, 40), (2, 3));
        assert!(matches!(generate_dataset(&spec, 1), Err(Error::InfeasibleTask(_))));
        let spec = TaskSpec::new(TaskKind::SelectByHeader, 0).with_shape((3, 2), (2, 3));
        assert!(generate_dataset(&spec, 1).is_err());
        assert!(generate_dataset(&TaskSpec::new(TaskKind::SelectByHeader, 0), 0).is_err());
    }

    #[test]
    fn answers_on_hand_built_tables() {
        let t = Table::from_strs(&["title", "length"], &[&["a", "b"], &["c", "d"]]).unwrap();
        let both: BTreeSet<_> = [CellCoord::new(0, 1), CellCoord::new(1, 1)].into();
        assert_eq!(answer(TaskKind::SelectByHeader, &t, "length", "name").unwrap(), both);
        let songs = Table::from_strs(
            &["Title", "Length"],
            &[&["Screwed Up", "5:02"], &["Ghetto Queen", "5:00"]],
        )
        .unwrap();
        assert_eq!(
            answer(TaskKind::ArgmaxInColumn, &songs, "Length", "name").unwrap(),
            [CellCoord::new(0, 1)].into()
        );
        assert_eq!(
            answer(TaskKind::SelectRowByKey, &songs, "Ghetto Queen", "name").unwrap(),
            [CellCoord::new(1, 0), CellCoord::new(1, 1)].into()
        );
        assert!(answer(TaskKind::ArgmaxInColumn, &songs, "Title", "name").is_err());
        assert!(answer(TaskKind::SelectByHeader, &songs, "year", "name").is_err());
    }

    #[test]
    fn kind_names_parse() {
        for kind in TaskKind::ALL {
            assert_eq!(kind.as_str().parse::<TaskKind>().unwrap(), kind);
        }
        assert_eq!("argmax".parse::<TaskKind>().unwrap(), TaskKind::ArgmaxInColumn);
        assert!("sum".parse::<TaskKind>().is_err());
    }
}
