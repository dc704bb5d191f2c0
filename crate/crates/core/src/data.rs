//! Categorical datasets: haploid (one state per cell) or diploid (an
//! unordered pair of states per cell).
//!
//! States are stored as dense zero-based codes. Diploid cells are kept in
//! canonical order (smaller code first) so `{a, b}` and `{b, a}` coincide.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Haploid,
    Diploid,
}

impl CaseKind {
    /// Number of codes per cell.
    pub fn ploidy(self) -> usize {
        match self {
            CaseKind::Haploid => 1,
            CaseKind::Diploid => 2,
        }
    }
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haploid" => Ok(CaseKind::Haploid),
            "diploid" => Ok(CaseKind::Diploid),
            other => Err(Error::InvalidConfig(format!("unknown case kind {other:?}"))),
        }
    }
}

/// The observation space: case kind plus the number of states `A_l` of
/// every variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpace {
    pub case_kind: CaseKind,
    pub states: Vec<usize>,
}

impl SampleSpace {
    pub fn new(case_kind: CaseKind, states: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidConfig("at least one variable is required".into()));
        }
        if let Some(l) = states.iter().position(|&a| a < 2) {
            return Err(Error::DegenerateVariable { variable: l + 1 });
        }
        if states.iter().any(|&a| a > u16::MAX as usize) {
            return Err(Error::InvalidConfig("too many states for one variable".into()));
        }
        Ok(Self { case_kind, states })
    }

    pub fn n_variables(&self) -> usize {
        self.states.len()
    }

    pub fn ploidy(&self) -> usize {
        self.case_kind.ploidy()
    }

    pub fn max_states(&self) -> usize {
        self.states.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct outcomes of variable `l`: `A_l` haploid,
    /// `A_l (A_l + 1) / 2` genotypes diploid.
    pub fn outcomes(&self, l: usize) -> usize {
        let a = self.states[l];
        match self.case_kind {
            CaseKind::Haploid => a,
            CaseKind::Diploid => a * (a + 1) / 2,
        }
    }

    /// Size of the full product space, as a float since it overflows easily.
    pub fn size(&self) -> f64 {
        (0..self.n_variables())
            .map(|l| self.outcomes(l) as f64)
            .product()
    }

    /// Codes of every outcome of variable `l`, in canonical order.
    pub fn outcome_codes(&self, l: usize) -> Vec<[u16; 2]> {
        let a = self.states[l] as u16;
        match self.case_kind {
            CaseKind::Haploid => (0..a).map(|j| [j, j]).collect(),
            CaseKind::Diploid => (0..a)
                .flat_map(|x| (x..a).map(move |y| [x, y]))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    space: SampleSpace,
    n: usize,
    codes: Vec<u16>,
    labels: Vec<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row-major zero-based codes (`n * L * ploidy`
    /// entries). Diploid pairs are canonicalized. Labels default to `1..=A_l`.
    pub fn from_codes(
        space: SampleSpace,
        mut codes: Vec<u16>,
        labels: Option<Vec<Vec<String>>>,
    ) -> Result<Self> {
        let width = space.n_variables() * space.ploidy();
        if codes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !codes.len().is_multiple_of(width) {
            return Err(Error::InvalidConfig(format!(
                "{} codes do not split into rows of width {width}",
                codes.len()
            )));
        }
        let n = codes.len() / width;
        let ploidy = space.ploidy();
        for (cell, chunk) in codes.chunks_mut(ploidy).enumerate() {
            let l = cell % space.n_variables();
            if chunk.iter().any(|&c| c as usize >= space.states[l]) {
                return Err(Error::BadCell {
                    row: cell / space.n_variables() + 1,
                    column: l + 1,
                    cell: format!("{chunk:?}"),
                });
            }
            if ploidy == 2 && chunk[0] > chunk[1] {
                chunk.swap(0, 1);
            }
        }
        let labels = match labels {
            Some(labels) => {
                if labels.len() != space.n_variables()
                    || labels.iter().zip(&space.states).any(|(v, &a)| v.len() != a)
                {
                    return Err(Error::InvalidConfig("label table does not match states".into()));
                }
                labels
            }
            None => space
                .states
                .iter()
                .map(|&a| (1..=a).map(|j| j.to_string()).collect())
                .collect(),
        };
        Ok(Self {
            space,
            n,
            codes,
            labels,
        })
    }

    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn case_kind(&self) -> CaseKind {
        self.space.case_kind
    }

    pub fn states(&self) -> &[usize] {
        &self.space.states
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_variables(&self) -> usize {
        self.space.n_variables()
    }

    /// Codes of individual `i`: `L * ploidy` entries.
    pub fn observation(&self, i: usize) -> &[u16] {
        let width = self.n_variables() * self.space.ploidy();
        &self.codes[i * width..(i + 1) * width]
    }

    pub fn observations(&self) -> impl Iterator<Item = &[u16]> {
        self.codes.chunks(self.n_variables() * self.space.ploidy())
    }

    pub fn labels(&self, l: usize) -> &[String] {
        &self.labels[l]
    }

    /// Writes the dataset as tab-separated text, one row per individual.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for x in self.observations() {
            for l in 0..self.n_variables() {
                if l > 0 {
                    out.push('\t');
                }
                match self.case_kind() {
                    CaseKind::Haploid => out.push_str(&self.labels[l][x[l] as usize]),
                    CaseKind::Diploid => {
                        let _ = write!(
                            out,
                            "{}/{}",
                            self.labels[l][x[2 * l] as usize],
                            self.labels[l][x[2 * l + 1] as usize]
                        );
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Field delimiter; `None` sniffs tab, comma, semicolon, then whitespace.
    pub delimiter: Option<char>,
    pub has_header: bool,
}

fn sniff_delimiter(line: &str) -> Option<char> {
    ['\t', ',', ';'].into_iter().find(|&d| line.contains(d))
}

fn split_line(line: &str, delimiter: Option<char>) -> Vec<&str> {
    match delimiter {
        Some(d) => line.split(d).map(str::trim).collect(),
        None => line.split_whitespace().collect(),
    }
}

/// Orders labels numerically when they are all integers, else lexically.
fn sort_labels(labels: BTreeSet<String>) -> Vec<String> {
    let mut labels: Vec<String> = labels.into_iter().collect();
    if labels.iter().all(|s| s.parse::<i64>().is_ok()) {
        labels.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
    }
    labels
}

/// Parses delimiter-separated categorical data. States are re-indexed to the
/// observed labels of each variable, so `A_l` is the observed count.
pub fn parse_table<R: Read>(mut reader: R, case_kind: CaseKind, opts: &LoadOptions) -> Result<Dataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty());
    if opts.has_header {
        lines.next();
    }
    let lines: Vec<(usize, &str)> = lines.collect();
    let Some(&(_, first)) = lines.first() else {
        return Err(Error::EmptyDataset);
    };
    let delimiter = opts.delimiter.or_else(|| sniff_delimiter(first));
    let width = split_line(first, delimiter).len();

    let mut raw: Vec<Vec<[&str; 2]>> = Vec::with_capacity(lines.len());
    for &(line_no, line) in &lines {
        let row = line_no + 1;
        let fields = split_line(line, delimiter);
        if fields.len() != width {
            return Err(Error::RaggedRow {
                row,
                expected: width,
                found: fields.len(),
            });
        }
        let mut cells = Vec::with_capacity(width);
        for (c, field) in fields.iter().enumerate() {
            let bad = || Error::BadCell {
                row,
                column: c + 1,
                cell: field.to_string(),
            };
            let missing = field.is_empty() || *field == "NA" || *field == "?";
            if missing {
                return Err(bad());
            }
            let cell = match case_kind {
                CaseKind::Haploid => {
                    if field.contains('/') {
                        return Err(bad());
                    }
                    [*field, *field]
                }
                CaseKind::Diploid => {
                    let mut parts = field.split('/').map(str::trim);
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => [a, b],
                        _ => return Err(bad()),
                    }
                }
            };
            cells.push(cell);
        }
        raw.push(cells);
    }

    let mut labels = Vec::with_capacity(width);
    for l in 0..width {
        let seen: BTreeSet<String> = raw
            .iter()
            .flat_map(|row| row[l].iter().map(|s| s.to_string()))
            .collect();
        if seen.len() < 2 {
            return Err(Error::DegenerateVariable { variable: l + 1 });
        }
        labels.push(sort_labels(seen));
    }
    let ploidy = case_kind.ploidy();
    let mut codes = Vec::with_capacity(raw.len() * width * ploidy);
    for row in &raw {
        for (l, cell) in row.iter().enumerate() {
            for s in &cell[..ploidy] {
                let code = labels[l].iter().position(|x| x == s).unwrap_or_default();
                codes.push(code as u16);
            }
        }
    }
    let space = SampleSpace::new(case_kind, labels.iter().map(Vec::len).collect())?;
    Dataset::from_codes(space, codes, Some(labels))
}
