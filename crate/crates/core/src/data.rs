//! Tabular input, variable roles and the complete-case analysis frame.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Transform applied to the outcome column when a frame is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeScale {
    #[default]
    Raw,
    /// `I(y > 0) · log(y)`.
    LogPositive,
    /// `I(y > 0)`.
    PositiveIndicator,
}

impl OutcomeScale {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            OutcomeScale::Raw => y,
            OutcomeScale::LogPositive => {
                if y > 0.0 {
                    y.ln()
                } else {
                    0.0
                }
            }
            OutcomeScale::PositiveIndicator => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One column of a [`Dataset`]. Categorical columns are integer-coded by first
/// appearance and keep their labels in `levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub values: Vec<Option<f64>>,
    pub levels: Option<Vec<String>>,
}

impl Column {
    pub fn numeric(values: Vec<Option<f64>>) -> Self {
        Column {
            values,
            levels: None,
        }
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Code of a level given by label (categorical) or by numeric literal.
    fn code_of(&self, level: &str) -> Option<f64> {
        match &self.levels {
            Some(levels) => levels.iter().position(|l| l == level).map(|i| i as f64),
            None => level.trim().parse::<f64>().ok(),
        }
    }

    fn observed_levels(&self) -> usize {
        let mut seen: Vec<f64> = Vec::new();
        for v in self.values.iter().flatten() {
            if !seen.contains(v) {
                seen.push(*v);
                if seen.len() > 1 {
                    break;
                }
            }
        }
        seen.len()
    }
}

/// Named, equal-length columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    columns: IndexMap<String, Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |(_, c)| c.values.len());
        let mut map = IndexMap::with_capacity(columns.len());
        for (name, col) in columns {
            if col.values.len() != n_rows {
                return Err(Error::Dimension(format!(
                    "column `{name}` has {} rows, expected {n_rows}",
                    col.values.len()
                )));
            }
            if map.insert(name.clone(), col).is_some() {
                return Err(Error::Dimension(format!("duplicate column `{name}`")));
            }
        }
        Ok(Dataset {
            columns: map,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

const MISSING_TOKENS: [&str; 5] = ["", "NA", "na", "NaN", "."];

/// Reads a UTF-8, comma-delimited CSV with a header row. Cells equal to one of
/// `na_codes` (or an empty/`NA` cell) become missing.
pub fn load_csv(path: impl AsRef<Path>, na_codes: &[f64]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, na_codes)
}

pub fn read_csv<R: Read>(reader: R, na_codes: &[f64]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let csv_err = |e: csv::Error| Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        for (j, cell) in record.iter().enumerate() {
            raw[j].push(cell.trim().to_string());
        }
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (name, cells) in headers.into_iter().zip(raw) {
        let col = type_column(&name, &cells, na_codes)?;
        columns.push((name, col));
    }
    Dataset::new(columns)
}

fn type_column(name: &str, cells: &[String], na_codes: &[f64]) -> Result<Column> {
    let mut parsed: Vec<Option<f64>> = Vec::with_capacity(cells.len());
    let mut first_text: Option<usize> = None;
    let mut first_number: Option<usize> = None;
    for (i, cell) in cells.iter().enumerate() {
        if MISSING_TOKENS.contains(&cell.as_str()) {
            parsed.push(None);
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if na_codes.contains(&v) => parsed.push(None),
            Ok(v) => {
                first_number.get_or_insert(i);
                parsed.push(Some(v));
            }
            Err(_) => {
                first_text.get_or_insert(i);
                parsed.push(None);
            }
        }
    }
    match (first_text, first_number) {
        (None, _) => Ok(Column::numeric(parsed)),
        (Some(_), None) => {
            let mut levels: Vec<String> = Vec::new();
            let values = cells
                .iter()
                .zip(&parsed)
                .map(|(cell, p)| {
                    if p.is_none() && MISSING_TOKENS.contains(&cell.as_str()) {
                        return None;
                    }
                    if cell.parse::<f64>().is_ok() {
                        // numeric sentinel inside a text column
                        return None;
                    }
                    let code = match levels.iter().position(|l| l == cell) {
                        Some(c) => c,
                        None => {
                            levels.push(cell.clone());
                            levels.len() - 1
                        }
                    };
                    Some(code as f64)
                })
                .collect();
            Ok(Column {
                values,
                levels: Some(levels),
            })
        }
        (Some(t), Some(_)) => Err(Error::NonNumericCell {
            column: name.to_string(),
            row: t + 1,
            cell: cells[t].clone(),
        }),
    }
}

/// Replaces a categorical column by indicator columns `name=level` for every
/// level except the first observed one, which becomes the reference.
pub fn one_hot(ds: &Dataset, name: &str) -> Result<Dataset> {
    let col = ds.require(name)?;
    let levels = col
        .levels
        .clone()
        .ok_or_else(|| Error::InvalidRoles(format!("`{name}` is not categorical")))?;
    let mut out = Vec::with_capacity(ds.columns.len() + levels.len());
    for (cname, c) in &ds.columns {
        if cname != name {
            out.push((cname.clone(), c.clone()));
            continue;
        }
        for (code, level) in levels.iter().enumerate().skip(1) {
            let values = c
                .values
                .iter()
                .map(|v| v.map(|v| if v == code as f64 { 1.0 } else { 0.0 }))
                .collect();
            out.push((format!("{name}={level}"), Column::numeric(values)));
        }
    }
    Dataset::new(out)
}

fn level_string<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Level {
        Int(i64),
        Float(f64),
        Text(String),
    }
    Ok(match Level::deserialize(d)? {
        Level::Int(v) => v.to_string(),
        Level::Float(v) => v.to_string(),
        Level::Text(s) => s,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRole {
    pub name: String,
    /// Disadvantaged level, coded `R = 0`.
    #[serde(deserialize_with = "level_string")]
    pub reference: String,
    /// Advantaged level, coded `R = 1`.
    #[serde(deserialize_with = "level_string")]
    pub comparison: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRole {
    pub name: String,
    #[serde(default)]
    pub scale: OutcomeScale,
}

/// Assignment of dataset columns to covariates, group, ordered mediator blocks
/// and outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub covariates: Vec<String>,
    pub group: GroupRole,
    pub mediators: Vec<Vec<String>>,
    pub outcome: OutcomeRole,
}

impl RoleSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRoles(m));
        if self.mediators.is_empty() {
            return bad("at least one mediator block is required".into());
        }
        if let Some(k) = self.mediators.iter().position(Vec::is_empty) {
            return bad(format!("mediator block {} is empty", k + 1));
        }
        if self.group.reference == self.group.comparison {
            return bad("reference and comparison levels coincide".into());
        }
        let mut seen = HashSet::new();
        let all = self
            .covariates
            .iter()
            .chain(self.mediators.iter().flatten())
            .chain([&self.group.name, &self.outcome.name]);
        for name in all {
            if !seen.insert(name.as_str()) {
                return bad(format!("column `{name}` is assigned more than one role"));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.mediators.len()
    }
}

/// Complete-case analysis data with `R` recoded to {0, 1}.
///
/// Immutable once built; all row-subset operations return new frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisFrame {
    x: Matrix,
    r: Vec<u8>,
    blocks: Vec<Matrix>,
    y: Vec<f64>,
    positive: Vec<bool>,
    scale: OutcomeScale,
    names: FrameNames,
}

/// Column and level labels carried along for reporting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameNames {
    pub covariates: Vec<String>,
    pub mediators: Vec<Vec<String>>,
    pub outcome: String,
    pub group: String,
    pub reference: String,
    pub comparison: String,
}

impl FrameNames {
    fn generic(p: usize, block_sizes: &[usize]) -> Self {
        FrameNames {
            covariates: (1..=p).map(|j| format!("X{j}")).collect(),
            mediators: block_sizes
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    if s == 1 {
                        vec![format!("M{}", k + 1)]
                    } else {
                        (1..=s).map(|j| format!("M{}{}", k + 1, j)).collect()
                    }
                })
                .collect(),
            outcome: "Y".into(),
            group: "R".into(),
            reference: "0".into(),
            comparison: "1".into(),
        }
    }
}

impl AnalysisFrame {
    /// Assembles a frame from already-clean arrays (the outcome is taken as
    /// given, on `scale`).
    pub fn new(
        x: Matrix,
        r: Vec<u8>,
        blocks: Vec<Matrix>,
        y: Vec<f64>,
        scale: OutcomeScale,
    ) -> Result<Self> {
        let positive = y.iter().map(|&v| v != 0.0).collect();
        let names = FrameNames::generic(
            x.ncols(),
            &blocks.iter().map(Matrix::ncols).collect::<Vec<_>>(),
        );
        Self::assemble(x, r, blocks, y, positive, scale, names)
    }

    fn assemble(
        x: Matrix,
        r: Vec<u8>,
        blocks: Vec<Matrix>,
        y: Vec<f64>,
        positive: Vec<bool>,
        scale: OutcomeScale,
        names: FrameNames,
    ) -> Result<Self> {
        let n = r.len();
        if x.nrows() != n || y.len() != n || blocks.iter().any(|b| b.nrows() != n) {
            return Err(Error::InvalidFrame("components have unequal lengths".into()));
        }
        if blocks.is_empty() || blocks.iter().any(|b| b.ncols() == 0) {
            return Err(Error::InvalidFrame("every mediator block needs a column".into()));
        }
        if r.iter().any(|&v| v > 1) {
            return Err(Error::InvalidFrame("group indicator must be 0/1".into()));
        }
        let n1 = r.iter().filter(|&&v| v == 1).count();
        if n1 < 2 || n - n1 < 2 {
            return Err(Error::InvalidFrame(format!(
                "each group needs at least 2 rows (R=0: {}, R=1: {n1})",
                n - n1
            )));
        }
        let finite = x.is_finite()
            && blocks.iter().all(Matrix::is_finite)
            && y.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("analysis frame".into()));
        }
        Ok(AnalysisFrame {
            x,
            r,
            blocks,
            y,
            positive,
            scale,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// Number of mediator blocks `K`.
    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn r(&self) -> &[u8] {
        &self.r
    }

    pub fn block(&self, k: usize) -> &Matrix {
        &self.blocks[k - 1]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `I(raw outcome > 0)`; drives the zero part of two-part learners.
    pub fn positive(&self) -> &[bool] {
        &self.positive
    }

    pub fn scale(&self) -> OutcomeScale {
        self.scale
    }

    pub fn names(&self) -> &FrameNames {
        &self.names
    }

    pub fn group_sizes(&self) -> (usize, usize) {
        let n1 = self.r.iter().filter(|&&v| v == 1).count();
        (self.n() - n1, n1)
    }

    /// Design `(X, M₁, …, M_b)` for conditioning on the first `b` blocks.
    pub fn features(&self, b: usize) -> Matrix {
        let mut parts: Vec<&Matrix> = vec![&self.x];
        parts.extend(self.blocks[..b].iter());
        Matrix::hstack(&parts).expect("frame components share row count")
    }

    pub fn rows_in_arm(&self, arm: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.r[i] == arm).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Self::assemble(
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.r[i]).collect(),
            self.blocks.iter().map(|b| b.select_rows(idx)).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
            idx.iter().map(|&i| self.positive[i]).collect(),
            self.scale,
            self.names.clone(),
        )
    }

    /// Same rows with the covariate matrix replaced.
    pub fn with_covariates(&self, x: Matrix) -> Result<Self> {
        let mut names = self.names.clone();
        if x.ncols() != names.covariates.len() {
            names.covariates = (1..=x.ncols()).map(|j| format!("X{j}")).collect();
        }
        Self::assemble(
            x,
            self.r.clone(),
            self.blocks.clone(),
            self.y.clone(),
            self.positive.clone(),
            self.scale,
            names,
        )
    }

    /// Same rows with a new outcome vector on `scale`.
    pub fn with_outcome(&self, y: Vec<f64>, positive: Vec<bool>, scale: OutcomeScale) -> Result<Self> {
        Self::assemble(
            self.x.clone(),
            self.r.clone(),
            self.blocks.clone(),
            y,
            positive,
            scale,
            self.names.clone(),
        )
    }

    /// Re-applies an outcome transform to a raw-scale frame.
    pub fn rescaled(&self, scale: OutcomeScale) -> Result<Self> {
        if self.scale != OutcomeScale::Raw {
            return Err(Error::Scale(format!(
                "frame is already on {:?} scale",
                self.scale
            )));
        }
        if scale == OutcomeScale::LogPositive && self.y.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidFrame(
                "negative outcome under log_positive".into(),
            ));
        }
        let y = self.y.iter().map(|&v| scale.apply(v)).collect();
        let positive = self.y.iter().map(|&v| v > 0.0).collect();
        self.with_outcome(y, positive, scale)
    }

    /// Dataset view (raw values, numeric `R`) plus the roles that rebuild this
    /// frame via [`build_frame`].
    pub fn to_dataset(&self) -> (Dataset, RoleSpec) {
        let mut cols = Vec::new();
        let numeric = |v: Vec<f64>| Column::numeric(v.into_iter().map(Some).collect());
        for (j, name) in self.names.covariates.iter().enumerate() {
            cols.push((name.clone(), numeric(self.x.column(j))));
        }
        for (k, block) in self.names.mediators.iter().enumerate() {
            for (j, name) in block.iter().enumerate() {
                cols.push((name.clone(), numeric(self.blocks[k].column(j))));
            }
        }
        cols.push((
            self.names.group.clone(),
            numeric(self.r.iter().map(|&v| v as f64).collect()),
        ));
        cols.push((self.names.outcome.clone(), numeric(self.y.clone())));
        let roles = RoleSpec {
            covariates: self.names.covariates.clone(),
            group: GroupRole {
                name: self.names.group.clone(),
                reference: "0".into(),
                comparison: "1".into(),
            },
            mediators: self.names.mediators.clone(),
            outcome: OutcomeRole {
                name: self.names.outcome.clone(),
                scale: OutcomeScale::Raw,
            },
        };
        (Dataset::new(cols).expect("frame columns are consistent"), roles)
    }
}

/// Applies roles to a dataset: complete-case filtering, group recoding and the
/// outcome transform.
pub fn build_frame(ds: &Dataset, roles: &RoleSpec) -> Result<AnalysisFrame> {
    roles.validate()?;
    let group = ds.require(&roles.group.name)?;
    if group.observed_levels() < 2 {
        return Err(Error::InvalidRoles(format!(
            "group column `{}` has fewer than two observed levels",
            roles.group.name
        )));
    }
    let level = |l: &str| {
        group.code_of(l).ok_or_else(|| {
            Error::InvalidRoles(format!(
                "level `{l}` not found in group column `{}`",
                roles.group.name
            ))
        })
    };
    let (ref_code, cmp_code) = (level(&roles.group.reference)?, level(&roles.group.comparison)?);

    let covs: Vec<&Column> = roles
        .covariates
        .iter()
        .map(|c| ds.require(c))
        .collect::<Result<_>>()?;
    let blocks: Vec<Vec<&Column>> = roles
        .mediators
        .iter()
        .map(|b| b.iter().map(|c| ds.require(c)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let outcome = ds.require(&roles.outcome.name)?;

    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| {
            let g = group.values[i];
            (g == Some(ref_code) || g == Some(cmp_code))
                && outcome.values[i].is_some()
                && covs.iter().all(|c| c.values[i].is_some())
                && blocks.iter().flatten().all(|c| c.values[i].is_some())
        })
        .collect();

    let gather = |cols: &[&Column]| {
        let data = keep
            .iter()
            .flat_map(|&i| cols.iter().map(move |c| c.values[i].unwrap_or(f64::NAN)))
            .collect();
        Matrix::from_row_major(keep.len(), cols.len(), data)
    };
    let x = gather(&covs)?;
    let m: Vec<Matrix> = blocks.iter().map(|b| gather(b)).collect::<Result<_>>()?;
    let r: Vec<u8> = keep
        .iter()
        .map(|&i| u8::from(group.values[i] == Some(cmp_code)))
        .collect();
    let raw_y: Vec<f64> = keep.iter().filter_map(|&i| outcome.values[i]).collect();
    let scale = roles.outcome.scale;
    if scale == OutcomeScale::LogPositive {
        if let Some(v) = raw_y.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidFrame(format!(
                "outcome `{}` has negative value {v} under log_positive",
                roles.outcome.name
            )));
        }
    }
    let y = raw_y.iter().map(|&v| scale.apply(v)).collect();
    let positive = match scale {
        OutcomeScale::Raw => raw_y.iter().map(|&v| v != 0.0).collect(),
        _ => raw_y.iter().map(|&v| v > 0.0).collect(),
    };
    let names = FrameNames {
        covariates: roles.covariates.clone(),
        mediators: roles.mediators.clone(),
        outcome: roles.outcome.name.clone(),
        group: roles.group.name.clone(),
        reference: roles.group.reference.clone(),
        comparison: roles.group.comparison.clone(),
    };
    AnalysisFrame::assemble(x, r, m, y, positive, scale, names)
}
