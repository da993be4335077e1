//! Exam result data: binary item responses plus person covariates.

use std::collections::HashSet;
use std::path::Path;


use crate::error::{Error, Result};

/// Dense n x m matrix of 0/1 responses, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemResponses {
    values: Vec<u8>,
    n: usize,
    m: usize,
    item_labels: Vec<String>,
}

impl ItemResponses {
    pub fn new(rows: Vec<Vec<u8>>, item_labels: Vec<String>) -> Result<Self> {
        let m = item_labels.len();
        if m < 2 {
            return Err(Error::Invalid(format!("need at least 2 items, got {m}")));
        }
        if rows.is_empty() {
            return Err(Error::Empty("no persons".into()));
        }
        let mut seen = HashSet::new();
        for label in &item_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::Invalid(format!("duplicate item label `{label}`")));
            }
        }
        let n = rows.len();
        let mut values = Vec::with_capacity(n * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::Invalid(format!(
                    "row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Data {
                        row: i + 1,
                        column: item_labels[j].clone(),
                        message: format!("response {v} is not 0/1"),
                    });
                }
            }
            values.extend(row);
        }
        Ok(Self {
            values,
            n,
            m,
            item_labels,
        })
    }

    /// Convenience constructor with labels `item1..itemm`.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        let labels = (1..=m).map(|j| format!("item{j}")).collect();
        Self::new(rows, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.m + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks_exact(self.m)
    }

    pub fn raw_scores(&self) -> Vec<usize> {
        self.rows()
            .map(|r| r.iter().map(|&v| v as usize).sum())
            .collect()
    }

    /// Rows at `idx`, in that order (duplicates allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty("no rows selected".into()));
        }
        let mut values = Vec::with_capacity(idx.len() * self.m);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            values,
            n: idx.len(),
            m: self.m,
            item_labels: self.item_labels.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    Numeric,
    Ordinal,
    Nominal,
}

/// Storage for covariate values. Categorical values are codes into `levels`;
/// for ordinal covariates the order of `levels` is the total order.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Numeric(Vec<f64>),
    Categorical { codes: Vec<usize>, levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
    pub values: CovariateValues,
}

impl Covariate {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Numeric,
            values: CovariateValues::Numeric(values),
        }
    }

    /// Categorical covariate; levels are taken in order of first appearance
    /// unless `levels` is given.
    pub fn categorical(
        name: impl Into<String>,
        kind: CovariateKind,
        labels: &[&str],
        levels: Option<Vec<String>>,
    ) -> Result<Self> {
        let name = name.into();
        let levels = levels.unwrap_or_else(|| {
            let mut lv: Vec<String> = Vec::new();
            for l in labels {
                if !lv.iter().any(|x| x == l) {
                    lv.push(l.to_string());
                }
            }
            lv
        });
        let codes = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                levels.iter().position(|x| x == l).ok_or_else(|| Error::Data {
                    row: i + 1,
                    column: name.clone(),
                    message: format!("value `{l}` is not a declared level"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name,
            kind,
            values: CovariateValues::Categorical { codes, levels },
        })
    }

    pub fn len(&self) -> usize {
        match &self.values {
            CovariateValues::Numeric(v) => v.len(),
            CovariateValues::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sort key per person: the numeric value or the level code.
    pub fn order_keys(&self) -> Vec<f64> {
        match &self.values {
            CovariateValues::Numeric(v) => v.clone(),
            CovariateValues::Categorical { codes, .. } => codes.iter().map(|&c| c as f64).collect(),
        }
    }

    /// Human-readable value of person `i`.
    pub fn label(&self, i: usize) -> String {
        match &self.values {
            CovariateValues::Numeric(v) => format_number(v[i]),
            CovariateValues::Categorical { codes, levels } => levels[codes[i]].clone(),
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.values {
            CovariateValues::Categorical { levels, .. } => Some(levels),
            CovariateValues::Numeric(_) => None,
        }
    }

    pub fn n_distinct(&self) -> usize {
        match &self.values {
            CovariateValues::Numeric(v) => {
                let mut s: Vec<f64> = v.clone();
                s.sort_by(f64::total_cmp);
                s.dedup();
                s.len()
            }
            CovariateValues::Categorical { codes, .. } => {
                codes.iter().collect::<HashSet<_>>().len()
            }
        }
    }

    /// Converts a raw string (e.g. a CSV cell) to this covariate's sort key.
    pub fn key_of(&self, raw: &str) -> Result<f64> {
        match &self.values {
            CovariateValues::Numeric(_) => raw.trim().parse::<f64>().map_err(|_| {
                Error::Invalid(format!("`{raw}` is not numeric for covariate `{}`", self.name))
            }),
            CovariateValues::Categorical { levels, .. } => levels
                .iter()
                .position(|l| l == raw.trim())
                .map(|c| c as f64)
                .ok_or_else(|| {
                    Error::Invalid(format!("`{raw}` is not a level of covariate `{}`", self.name))
                }),
        }
    }

    fn select(&self, idx: &[usize]) -> Self {
        let values = match &self.values {
            CovariateValues::Numeric(v) => CovariateValues::Numeric(idx.iter().map(|&i| v[i]).collect()),
            CovariateValues::Categorical { codes, levels } => CovariateValues::Categorical {
                codes: idx.iter().map(|&i| codes[i]).collect(),
                levels: levels.clone(),
            },
        };
        Self {
            name: self.name.clone(),
            kind: self.kind,
            values,
        }
    }

    fn to_ordinal(&self) -> Self {
        if self.kind == CovariateKind::Ordinal {
            return self.clone();
        }
        let labels: Vec<String> = (0..self.len()).map(|i| self.label(i)).collect();
        let mut levels: Vec<String> = labels.clone();
        levels.sort_by(|a, b| compare_labels(a, b));
        levels.dedup();
        let codes = labels
            .iter()
            .map(|l| levels.iter().position(|x| x == l).expect("level present"))
            .collect();
        Self {
            name: self.name.clone(),
            kind: CovariateKind::Ordinal,
            values: CovariateValues::Categorical { codes, levels },
        }
    }

    fn to_nominal(&self) -> Self {
        match &self.values {
            CovariateValues::Categorical { .. } => Self {
                kind: CovariateKind::Nominal,
                ..self.clone()
            },
            CovariateValues::Numeric(_) => Self {
                kind: CovariateKind::Nominal,
                ..self.to_ordinal()
            },
        }
    }
}

/// Numeric-aware label comparison: numbers sort numerically and before text.
fn compare_labels(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Item responses together with covariates for the same persons.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamDataset {
    pub responses: ItemResponses,
    pub covariates: Vec<Covariate>,
    pub raw_scores: Vec<usize>,
}

impl ExamDataset {
    pub fn new(responses: ItemResponses, covariates: Vec<Covariate>) -> Result<Self> {
        for c in &covariates {
            if c.len() != responses.n() {
                return Err(Error::Invalid(format!(
                    "covariate `{}` has {} values for {} persons",
                    c.name,
                    c.len(),
                    responses.n()
                )));
            }
        }
        let raw_scores = responses.raw_scores();
        Ok(Self {
            responses,
            covariates,
            raw_scores,
        })
    }

    /// Reads a comma-separated file with a header row. Columns whose name
    /// starts with `item_prefix` are items (in file order); all others are
    /// covariates, numeric when every cell parses as a number.
    pub fn load_csv(path: impl AsRef<Path>, item_prefix: &str) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file, item_prefix)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, item_prefix: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let item_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(item_prefix))
            .map(|(i, _)| i)
            .collect();
        if item_cols.is_empty() {
            return Err(Error::Invalid(format!(
                "no item columns with prefix `{item_prefix}`"
            )));
        }
        let strip = item_prefix
            .chars()
            .last()
            .is_some_and(|c| !c.is_alphanumeric());
        let item_labels: Vec<String> = item_cols
            .iter()
            .map(|&c| {
                let h = &headers[c];
                match h.strip_prefix(item_prefix) {
                    Some(rest) if strip && !rest.is_empty() => rest.to_string(),
                    _ => h.clone(),
                }
            })
            .collect();
        let cov_cols: Vec<usize> = (0..headers.len()).filter(|c| !item_cols.contains(c)).collect();

        let mut rows = Vec::new();
        let mut cov_cells: Vec<Vec<String>> = vec![Vec::new(); cov_cols.len()];
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(item_cols.len());
            for &c in &item_cols {
                let cell = record.get(c).unwrap_or("").trim();
                let v = match cell {
                    "0" => 0,
                    "1" => 1,
                    "" | "NA" => {
                        return Err(Error::Data {
                            row: r + 1,
                            column: headers[c].clone(),
                            message: "missing response".into(),
                        })
                    }
                    other => {
                        return Err(Error::Data {
                            row: r + 1,
                            column: headers[c].clone(),
                            message: format!("value `{other}` is not 0/1"),
                        })
                    }
                };
                row.push(v);
            }
            rows.push(row);
            for (k, &c) in cov_cols.iter().enumerate() {
                cov_cells[k].push(record.get(c).unwrap_or("").trim().to_string());
            }
        }
        let responses = ItemResponses::new(rows, item_labels)?;
        let covariates = cov_cols
            .iter()
            .zip(cov_cells)
            .map(|(&c, cells)| infer_covariate(&headers[c], &cells))
            .collect::<Result<Vec<_>>>()?;
        Self::new(responses, covariates)
    }

    pub fn n(&self) -> usize {
        self.responses.n()
    }

    pub fn m(&self) -> usize {
        self.responses.m()
    }

    pub fn covariate(&self, name: &str) -> Result<&Covariate> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariates
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    /// Rows at `idx` with covariates in lockstep.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let responses = self.responses.select_rows(idx)?;
        let covariates = self.covariates.iter().map(|c| c.select(idx)).collect();
        let raw_scores = idx.iter().map(|&i| self.raw_scores[i]).collect();
        Ok(Self {
            responses,
            covariates,
            raw_scores,
        })
    }

    pub fn subset(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.n() {
            return Err(Error::Invalid(format!(
                "mask has {} entries for {} persons",
                mask.len(),
                self.n()
            )));
        }
        let idx: Vec<usize> = (0..self.n()).filter(|&i| mask[i]).collect();
        if idx.is_empty() {
            return Err(Error::Empty("mask selects no rows".into()));
        }
        self.select_rows(&idx)
    }

    /// Drops persons who solved none or all of the items.
    pub fn exclude_extreme_scores(&self) -> Result<Self> {
        let m = self.m();
        let idx: Vec<usize> = (0..self.n())
            .filter(|&i| self.raw_scores[i] > 0 && self.raw_scores[i] < m)
            .collect();
        if idx.is_empty() {
            return Err(Error::Empty("every person has an extreme score".into()));
        }
        self.select_rows(&idx)
    }

    /// Mask of persons whose covariate `name` displays as `value`.
    pub fn mask_eq(&self, name: &str, value: &str) -> Result<Vec<bool>> {
        let cov = self.covariate(name)?;
        let key = cov.key_of(value)?;
        Ok(cov.order_keys().into_iter().map(|k| k == key).collect())
    }

    /// Turns covariate `name` into an ordinal one with levels sorted ascending.
    pub fn as_ordered(&self, name: &str) -> Result<Self> {
        let k = self.covariate_index(name)?;
        let mut out = self.clone();
        out.covariates[k] = self.covariates[k].to_ordinal();
        Ok(out)
    }

    pub fn as_nominal(&self, name: &str) -> Result<Self> {
        let k = self.covariate_index(name)?;
        let mut out = self.clone();
        out.covariates[k] = self.covariates[k].to_nominal();
        Ok(out)
    }

    /// Proportion of persons solving each item.
    pub fn item_summary(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let mut counts = vec![0usize; self.m()];
        for row in self.responses.rows() {
            for (c, &v) in counts.iter_mut().zip(row) {
                *c += v as usize;
            }
        }
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

fn infer_covariate(name: &str, cells: &[String]) -> Result<Covariate> {
    let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();
    match parsed {
        Some(v) if !cells.is_empty() => Ok(Covariate::numeric(name, v)),
        _ => {
            let labels: Vec<&str> = cells.iter().map(String::as_str).collect();
            let mut levels: Vec<String> = cells.to_vec();
            levels.sort_by(|a, b| compare_labels(a, b));
            levels.dedup();
            Covariate::categorical(name, CovariateKind::Nominal, &labels, Some(levels))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "i1,i2,i3,group\n1,0,1,a\n0,0,1,b\n1,1,1,a\n0,1,0,b\n";

    #[test]
    fn toy_csv_parses() {
        let ds = ExamDataset::read_csv(TOY.as_bytes(), "i").unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.m(), 3);
        assert_eq!(ds.covariates.len(), 1);
        assert_eq!(ds.covariates[0].kind, CovariateKind::Nominal);
        assert_eq!(ds.raw_scores, vec![2, 1, 3, 1]);
        assert_eq!(ds.responses.item_labels(), &["i1", "i2", "i3"]);
    }

    #[test]
    fn prefix_with_separator_is_stripped() {
        let csv = "solved.quad,solved.hesse,tests\n1,0,12\n0,1,9\n";
        let ds = ExamDataset::read_csv(csv.as_bytes(), "solved.").unwrap();
        assert_eq!(ds.responses.item_labels(), &["quad", "hesse"]);
        assert_eq!(ds.covariates[0].kind, CovariateKind::Numeric);
    }

    #[test]
    fn non_binary_cell_is_rejected() {
        let csv = "i1,i2\n1,0\n2,1\n";
        match ExamDataset::read_csv(csv.as_bytes(), "i") {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "i1");
            }
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_rejected() {
        let csv = "i1,i2\n1,\n0,1\n";
        assert!(matches!(
            ExamDataset::read_csv(csv.as_bytes(), "i"),
            Err(Error::Data { row: 1, .. })
        ));
    }

    #[test]
    fn no_item_columns_is_an_error() {
        let csv = "a,b\n1,0\n";
        assert!(ExamDataset::read_csv(csv.as_bytes(), "item").is_err());
    }

    #[test]
    fn extreme_scores_are_dropped() {
        let rows = vec![vec![0, 0, 0], vec![1, 1, 0], vec![1, 1, 1]];
        let ds = ExamDataset::new(
            ItemResponses::from_rows(rows).unwrap(),
            vec![Covariate::numeric("x", vec![1.0, 2.0, 3.0])],
        )
        .unwrap();
        let ex = ds.exclude_extreme_scores().unwrap();
        assert_eq!(ex.n(), 1);
        assert_eq!(ex.raw_scores, vec![2]);
        assert_eq!(ex.covariates[0].order_keys(), vec![2.0]);
        assert_eq!(ex.exclude_extreme_scores().unwrap(), ex);
    }

    #[test]
    fn all_extreme_is_an_error() {
        let rows = vec![vec![0, 0], vec![1, 1]];
        let ds = ExamDataset::new(ItemResponses::from_rows(rows).unwrap(), vec![]).unwrap();
        assert!(matches!(ds.exclude_extreme_scores(), Err(Error::Empty(_))));
    }

    #[test]
    fn subset_masks() {
        let ds = ExamDataset::read_csv(TOY.as_bytes(), "i").unwrap();
        assert_eq!(ds.subset(&[true; 4]).unwrap(), ds);
        let one = ds.subset(&[false, true, false, false]).unwrap();
        assert_eq!(one.n(), 1);
        assert_eq!(one.raw_scores, vec![1]);
        assert!(ds.subset(&[false; 4]).is_err());
        assert!(ds.subset(&[true; 3]).is_err());
        let a = ds.subset(&ds.mask_eq("group", "a").unwrap()).unwrap();
        assert_eq!(a.raw_scores, vec![2, 3]);
    }

    #[test]
    fn as_ordered_sorts_numeric_levels() {
        let tests: Vec<f64> = (9..=26).rev().map(f64::from).collect();
        let rows = vec![vec![1, 0]; tests.len()];
        let ds = ExamDataset::new(
            ItemResponses::from_rows(rows).unwrap(),
            vec![Covariate::numeric("tests", tests)],
        )
        .unwrap();
        let o = ds.as_ordered("tests").unwrap();
        let cov = o.covariate("tests").unwrap();
        assert_eq!(cov.kind, CovariateKind::Ordinal);
        let levels = cov.levels().unwrap();
        assert_eq!(levels.len(), 18);
        assert_eq!(levels[0], "9");
        assert_eq!(levels[17], "26");
        assert_eq!(cov.label(0), "26");
        assert_eq!(o.as_ordered("tests").unwrap(), o);
        assert!(matches!(ds.as_ordered("bogus"), Err(Error::UnknownCovariate(_))));
    }

    #[test]
    fn item_summary_proportions() {
        let rows = vec![vec![1, 0, 1], vec![1, 1, 0], vec![1, 0, 0], vec![1, 1, 1]];
        let ds = ExamDataset::new(ItemResponses::from_rows(rows).unwrap(), vec![]).unwrap();
        assert_eq!(ds.item_summary(), vec![1.0, 0.5, 0.5]);
    }

    #[test]
    fn duplicate_labels_rejected() {
        let r = ItemResponses::new(vec![vec![0, 1]], vec!["a".into(), "a".into()]);
        assert!(r.is_err());
    }
}
