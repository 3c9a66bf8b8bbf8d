//! Observations, submodel index sets, and model-family enumeration.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// `n` observations of a covariate vector and a response.
///
/// Row `i` of `x` is the covariate vector of observation `i`. `mean_y`, when
/// present, holds the known expectation of each response; only the simulator
/// can supply it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    mean_y: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Validation("dataset needs at least one observation".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::Validation("dataset needs at least one covariate".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "covariate matrix has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (r, c) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::Validation(format!(
                "non-finite covariate at observation {}, column {}",
                r + 1,
                c + 1
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite response at observation {}", i + 1)));
        }
        Ok(Self { x, y, mean_y: None })
    }

    /// Builds a dataset from covariate rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Shape(format!(
                "row {} has {} entries, expected {}",
                bad + 1,
                rows[bad].len(),
                p
            )));
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_vec(y))
    }

    /// Attaches the known response expectations `E[Y_i]`.
    pub fn with_mean_y(mut self, mean_y: DVector<f64>) -> Result<Self> {
        if mean_y.len() != self.n() {
            return Err(Error::Shape(format!(
                "meanY has length {} but the dataset has {} observations",
                mean_y.len(),
                self.n()
            )));
        }
        if mean_y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("meanY contains non-finite entries".into()));
        }
        self.mean_y = Some(mean_y);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn mean_y(&self) -> Option<&DVector<f64>> {
        self.mean_y.as_ref()
    }

    pub fn to_json(&self) -> DatasetJson {
        DatasetJson {
            n: self.n(),
            p: self.p(),
            x: self.x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            y: self.y.iter().copied().collect(),
        }
    }

    /// Writes the dataset as headerless CSV with the response in the last column.
    ///
    /// Values use the shortest representation that parses back to the same
    /// double, so `load_dataset` recovers the data bit-for-bit.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for i in 0..self.n() {
            let mut line = String::new();
            for j in 0..self.p() {
                line.push_str(&format!("{:?},", self.x[(i, j)]));
            }
            line.push_str(&format!("{:?}\n", self.y[i]));
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Debug echo of a dataset: `{"n":…, "p":…, "X":[[…]], "y":[…]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetJson {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Which CSV column holds the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResponseColumn {
    First,
    #[default]
    Last,
    /// 1-based column index.
    Index(usize),
}

impl std::str::FromStr for ResponseColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "first" => Ok(ResponseColumn::First),
            "last" => Ok(ResponseColumn::Last),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&c| c >= 1)
                .map(ResponseColumn::Index)
                .ok_or_else(|| Error::arg(format!("response column must be first, last or a 1-based index, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub has_header: bool,
    pub response: ResponseColumn,
    /// Prepend a column of ones as covariate 1.
    pub intercept: bool,
}

/// Reads a rectangular numeric CSV (one observation per row).
pub fn load_dataset(path: impl AsRef<Path>, options: &IngestOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(file, options)
}

/// Same as [`load_dataset`] over any reader.
pub fn read_dataset<R: std::io::Read>(reader: R, options: &IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { row, column: 0, message: e.to_string() }
        })?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Shape(format!(
                    "row {line} has {} fields, expected {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {field:?} at row {line}, column {}",
                    j + 1
                )));
            }
            values.push(v);
        }
        rows.push(values);
    }

    let width = width.ok_or_else(|| Error::Validation("no data rows".into()))?;
    if width < 2 {
        return Err(Error::Shape("need at least one covariate column and a response column".into()));
    }
    let response = match options.response {
        ResponseColumn::First => 0,
        ResponseColumn::Last => width - 1,
        ResponseColumn::Index(c) if c <= width => c - 1,
        ResponseColumn::Index(c) => {
            return Err(Error::arg(format!("response column {c} exceeds the {width} columns in the file")))
        }
    };
    let offset = usize::from(options.intercept);
    let p = width - 1 + offset;
    let n = rows.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        if options.intercept {
            x[(i, 0)] = 1.0;
        }
        let mut col = offset;
        for (j, &v) in row.iter().enumerate() {
            if j == response {
                y[i] = v;
            } else {
                x[(i, col)] = v;
                col += 1;
            }
        }
    }
    Dataset::new(x, y)
}

/// A non-empty submodel: a strictly increasing set of covariate indices.
///
/// Stored 0-based; displayed, parsed and serialized 1-based. Models order by
/// size first and lexicographically within a size, which is the canonical
/// enumeration order of [`enumerate_models`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelIndex(Vec<usize>);

impl ModelIndex {
    /// Builds a model from 1-based indices; they are sorted, and must be
    /// distinct and within `1..=p`.
    pub fn new(one_based: &[usize], p: usize) -> Result<Self> {
        if one_based.contains(&0) {
            return Err(Error::arg("model indices are 1-based; 0 is not allowed"));
        }
        Self::from_zero_based(one_based.iter().map(|i| i - 1).collect(), p)
    }

    pub fn from_zero_based(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::arg("a model needs at least one covariate"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::arg("model indices must be distinct"));
        }
        if let Some(&last) = indices.last() {
            if last >= p {
                return Err(Error::arg(format!("model index {} exceeds p = {p}", last + 1)));
            }
        }
        Ok(Self(indices))
    }

    /// Parses a comma-separated list of 1-based indices such as `"1,3"`.
    pub fn parse(s: &str, p: usize) -> Result<Self> {
        let idx = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::arg(format!("bad model index {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&idx, p)
    }

    /// The singleton model `{j}` for a 0-based covariate `j`.
    pub fn singleton(j: usize) -> Self {
        Self(vec![j])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 0-based indices.
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }
}

impl Ord for ModelIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for ModelIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for ModelIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.contains(&0) {
            return Err(serde::de::Error::custom("model indices are 1-based"));
        }
        ModelIndex::from_zero_based(v.iter().map(|i| i - 1).collect(), usize::MAX)
            .map_err(serde::de::Error::custom)
    }
}

/// All models `M` with `1 ≤ |M| ≤ k` over `p` covariates, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFamily {
    pub p: usize,
    pub k: usize,
    pub members: Vec<ModelIndex>,
}

impl ModelFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ModelIndex> {
        self.members.iter()
    }
}

/// Enumerates `{M : 1 ≤ |M| ≤ k}` ordered by size, then lexicographically.
pub fn enumerate_models(p: usize, k: usize) -> Result<ModelFamily> {
    if k < 1 || k > p {
        return Err(Error::arg(format!("model-size cap k = {k} must satisfy 1 ≤ k ≤ p = {p}")));
    }
    let mut members = Vec::new();
    for size in 1..=k {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            members.push(ModelIndex(comb.clone()));
            // advance to the next combination in lexicographic order
            let mut i = size;
            while i > 0 && comb[i - 1] == p - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..size {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    Ok(ModelFamily { p, k, members })
}

/// Total number of coefficients across all non-empty submodels, `p·2^(p−1)`.
pub fn count_scalar_parameters(p: usize) -> Result<u64> {
    if p == 0 {
        return Err(Error::arg("p must be at least 1"));
    }
    let p64 = p as u64;
    let shift = u32::try_from(p - 1).map_err(|_| Error::Overflow(format!("p = {p} is too large")))?;
    1u64.checked_shl(shift)
        .filter(|_| shift < 64)
        .and_then(|pow| pow.checked_mul(p64))
        .ok_or_else(|| Error::Overflow(format!("p·2^(p−1) overflows 64 bits for p = {p}")))
}
