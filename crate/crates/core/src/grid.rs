//! Bus-system topology, adjacency matrices and the case-file format.
//!
//! Case files use 1-based bus and unit labels; everything in memory is 0-based.
//!
//! ```text
//! # comment
//! buses 3
//! lines
//! 1-2
//! 2-3
//! generators
//! 1 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::nn::Tensor2;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bus index {bus} out of range for {n_buses} buses")]
    InvalidBus { bus: usize, n_buses: usize },
    #[error("duplicate line {0}")]
    DuplicateLine(Line),
    #[error("self-loop on bus {0}")]
    SelfLoop(usize),
    #[error("unit {0} mapped to more than one bus")]
    DuplicateUnit(usize),
    #[error("line {0} does not exist")]
    MissingLine(Line),
    #[error("adjacency matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Undirected line between two distinct buses, stored with `a < b` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Line {
    a: usize,
    b: usize,
}

impl Line {
    pub fn new(x: usize, y: usize) -> Result<Self, GridError> {
        if x == y {
            return Err(GridError::SelfLoop(x));
        }
        Ok(Self {
            a: x.min(y),
            b: x.max(y),
        })
    }

    /// Builds a line from 1-based bus labels, as written in case files and fault lists.
    pub fn from_labels(x: usize, y: usize) -> Result<Self, GridError> {
        if x == 0 || y == 0 {
            return Err(GridError::InvalidBus { bus: 0, n_buses: 0 });
        }
        Self::new(x - 1, y - 1)
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.a, self.b)
    }
}

impl std::fmt::Display for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.a + 1, self.b + 1)
    }
}

/// Bus count, line set and unit-to-bus map. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridTopology {
    n_buses: usize,
    lines: BTreeSet<Line>,
    generator_buses: BTreeMap<usize, usize>,
}

impl GridTopology {
    pub fn new(
        n_buses: usize,
        lines: impl IntoIterator<Item = Line>,
        generator_buses: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GridError> {
        let mut set = BTreeSet::new();
        for line in lines {
            let (a, b) = line.endpoints();
            for bus in [a, b] {
                if bus >= n_buses {
                    return Err(GridError::InvalidBus { bus, n_buses });
                }
            }
            if !set.insert(line) {
                return Err(GridError::DuplicateLine(line));
            }
        }
        let mut gens = BTreeMap::new();
        for (unit, bus) in generator_buses {
            if bus >= n_buses {
                return Err(GridError::InvalidBus { bus, n_buses });
            }
            if gens.insert(unit, bus).is_some() {
                return Err(GridError::DuplicateUnit(unit));
            }
        }
        Ok(Self {
            n_buses,
            lines: set,
            generator_buses: gens,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn lines(&self) -> &BTreeSet<Line> {
        &self.lines
    }

    pub fn generator_buses(&self) -> &BTreeMap<usize, usize> {
        &self.generator_buses
    }

    pub fn bus_of(&self, unit: usize) -> Option<usize> {
        self.generator_buses.get(&unit).copied()
    }

    pub fn load_case(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_case(&text)
    }

    pub fn parse_case(text: &str) -> Result<Self, GridError> {
        #[derive(PartialEq)]
        enum Section {
            Header,
            Lines,
            Generators,
        }

        let mut n_buses: Option<usize> = None;
        let mut section = Section::Header;
        let mut lines = BTreeSet::new();
        let mut gens = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let parse_err = |message: String| GridError::Parse {
                line: line_no,
                message,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            match content {
                "lines" => {
                    section = Section::Lines;
                    continue;
                }
                "generators" => {
                    section = Section::Generators;
                    continue;
                }
                _ => {}
            }
            if let Some(rest) = content.strip_prefix("buses") {
                if n_buses.is_some() {
                    return Err(parse_err("repeated `buses` header".into()));
                }
                let n = rest
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| parse_err(format!("bad bus count `{}`", rest.trim())))?;
                n_buses = Some(n);
                continue;
            }
            let n = n_buses.ok_or_else(|| parse_err("missing `buses <n>` header".into()))?;
            let label = |tok: &str| -> Result<usize, GridError> {
                let v = tok
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(format!("bad index `{}`", tok.trim())))?;
                if v == 0 || v > n {
                    return Err(parse_err(format!("bus {v} out of range 1..={n}")));
                }
                Ok(v - 1)
            };
            match section {
                Section::Header => {
                    return Err(parse_err(format!(
                        "unexpected `{content}` before a section"
                    )))
                }
                Section::Lines => {
                    let (x, y) = content
                        .split_once('-')
                        .ok_or_else(|| parse_err(format!("expected `a-b`, got `{content}`")))?;
                    let (x, y) = (label(x)?, label(y)?);
                    let line = Line::new(x, y).map_err(|e| parse_err(e.to_string()))?;
                    if !lines.insert(line) {
                        return Err(parse_err(format!("duplicate line {line}")));
                    }
                }
                Section::Generators => {
                    let mut toks = content.split_whitespace();
                    let (Some(u), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
                        return Err(parse_err(format!(
                            "expected `unit_index bus_index`, got `{content}`"
                        )));
                    };
                    let unit = u
                        .parse::<usize>()
                        .ok()
                        .filter(|&u| u > 0)
                        .ok_or_else(|| parse_err(format!("bad unit index `{u}`")))?;
                    let bus = label(b)?;
                    if gens.insert(unit - 1, bus).is_some() {
                        return Err(parse_err(format!("unit {unit} listed twice")));
                    }
                }
            }
        }
        let n_buses = n_buses.ok_or(GridError::Parse {
            line: 0,
            message: "missing `buses <n>` header".into(),
        })?;
        Ok(Self {
            n_buses,
            lines,
            generator_buses: gens,
        })
    }

    /// Serializes to the case-file format; `parse_case` inverts this exactly.
    pub fn to_case_string(&self) -> String {
        let mut out = format!("buses {}\n\nlines\n", self.n_buses);
        for line in &self.lines {
            let _ = writeln!(out, "{line}");
        }
        out.push_str("\ngenerators\n");
        for (unit, bus) in &self.generator_buses {
            let _ = writeln!(out, "{} {}", unit + 1, bus + 1);
        }
        out
    }

    /// Returns a copy without the listed lines. Every listed line must exist.
    pub fn remove_lines<'a>(
        &self,
        removed: impl IntoIterator<Item = &'a Line>,
    ) -> Result<GridTopology, GridError> {
        let mut out = self.clone();
        for line in removed {
            if !out.lines.remove(line) {
                return Err(GridError::MissingLine(*line));
            }
        }
        Ok(out)
    }

    pub fn build_adjacency(&self) -> AdjacencyMatrix {
        let mut m = Tensor2::zeros(self.n_buses, self.n_buses);
        for line in &self.lines {
            let (a, b) = line.endpoints();
            m.set(a, b, 1.0);
            m.set(b, a, 1.0);
        }
        AdjacencyMatrix(m)
    }

    pub fn normalized_adjacency(&self) -> NormalizedAdjacency {
        normalize_adjacency(&self.build_adjacency()).expect("topology adjacency is symmetric")
    }
}

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix(Tensor2);

impl AdjacencyMatrix {
    /// Wraps an arbitrary matrix; shape and symmetry are checked by `normalize_adjacency`.
    pub fn from_tensor(t: Tensor2) -> Self {
        Self(t)
    }

    pub fn tensor(&self) -> &Tensor2 {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }
}

/// `D̂^{-1/2} Â D̂^{-1/2}` with `Â = A + I`, plus a row-wise sparse copy for products.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    dense: Tensor2,
    sparse_rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn identity(n: usize) -> Self {
        Self::from_dense(Tensor2::identity(n))
    }

    fn from_dense(dense: Tensor2) -> Self {
        let sparse_rows = (0..dense.rows())
            .map(|i| {
                dense
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self { dense, sparse_rows }
    }

    pub fn n(&self) -> usize {
        self.dense.rows()
    }

    pub fn tensor(&self) -> &Tensor2 {
        &self.dense
    }

    /// `S · x` using the sparse rows. `S` is symmetric, so this also computes `Sᵀ · x`.
    pub fn apply(&self, x: &Tensor2) -> Tensor2 {
        assert_eq!(x.rows(), self.n(), "node count mismatch");
        let mut out = Tensor2::zeros(x.rows(), x.cols());
        for (i, row) in self.sparse_rows.iter().enumerate() {
            let out_row = out.row_mut(i);
            for &(j, s) in row {
                for (o, v) in out_row.iter_mut().zip(x.row(j)) {
                    *o += s * v;
                }
            }
        }
        out
    }

    /// Reorders nodes: row/column `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                t.set(i, j, self.dense.get(perm[i], perm[j]));
            }
        }
        Self::from_dense(t)
    }
}

pub fn normalize_adjacency(adj: &AdjacencyMatrix) -> Result<NormalizedAdjacency, GridError> {
    let a = adj.tensor();
    let (r, c) = a.shape();
    if r != c {
        return Err(GridError::NotSquare(r, c));
    }
    for i in 0..r {
        for j in (i + 1)..r {
            if a.get(i, j) != a.get(j, i) {
                return Err(GridError::Asymmetric(i, j));
            }
        }
    }
    let mut a_hat = a.clone();
    for i in 0..r {
        a_hat.set(i, i, a.get(i, i) + 1.0);
    }
    let inv_sqrt_deg: Vec<f64> = (0..r)
        .map(|i| 1.0 / a_hat.row(i).iter().sum::<f64>().sqrt())
        .collect();
    let mut s = Tensor2::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            s.set(i, j, a_hat.get(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
    }
    Ok(NormalizedAdjacency::from_dense(s))
}
