//! Typed study tables.
//!
//! A [`StudyData`] holds numeric covariate columns (categoricals are one-hot
//! expanded at load time into `<var>=<level>` indicators), the binary
//! treatment, an optional outcome and caller-supplied unit ids. Nominal views
//! of categorical and binary variables are kept alongside for exact matching
//! and balance tiers.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("missing cell at row {row}, column `{col}`")]
    MissingCell { row: usize, col: String },
    #[error("unknown level `{value}` in column `{col}`")]
    UnknownLevel { col: String, value: String },
    #[error("treatment at row {row} is not 0/1")]
    NonBinaryTreatment { row: usize },
    #[error("column `{col}` row {row}: `{value}` is not 0/1")]
    NonBinaryValue { row: usize, col: String, value: String },
    #[error("column `{col}` row {row}: `{value}` is not a finite number")]
    InvalidNumber { row: usize, col: String, value: String },
    #[error("duplicate unit id `{0}`")]
    DuplicateId(String),
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("{0} arm has no rows")]
    EmptyArm(&'static str),
    #[error("table has no rows")]
    Empty,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is continuous and cannot be used as a nominal variable")]
    NotNominal(String),
    #[error("length mismatch for `{name}`: expected {expected}, got {got}")]
    LengthMismatch { name: String, expected: usize, got: usize },
    #[error("no outcome attached")]
    NoOutcome,
    #[error("unit id `{0}` not found")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Binary,
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl VariableSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VariableKind::Binary, levels: Vec::new() }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VariableKind::Continuous, levels: Vec::new() }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Categorical,
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    /// Name of the indicator column for one level of a categorical.
    pub fn indicator_name(&self, level: &str) -> String {
        format!("{}={}", self.name, level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pilot,
    Analysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Binary,
    Continuous,
}

/// One numeric column. Indicators remember the categorical they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// `(parent variable, level)` for one-hot indicators.
    pub origin: Option<(String, String)>,
    pub values: Vec<f64>,
}

/// Integer-coded nominal variable.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalColumn {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<u32>,
}

/// Column layout of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvLayout {
    pub id_column: String,
    pub treatment_column: String,
    /// `None` loads the table with the outcome redacted.
    pub outcome_column: Option<String>,
    /// Columns present in the file that are skipped (other outcomes,
    /// variables excluded from a pilot, ...).
    pub ignore: Vec<String>,
}

impl CsvLayout {
    pub fn new(id: &str, treatment: &str, outcome: Option<&str>) -> Self {
        Self {
            id_column: id.to_string(),
            treatment_column: treatment.to_string(),
            outcome_column: outcome.map(str::to_string),
            ignore: Vec::new(),
        }
    }

    pub fn ignoring<S: Into<String>>(mut self, cols: impl IntoIterator<Item = S>) -> Self {
        self.ignore.extend(cols.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    schema: Vec<VariableSpec>,
    columns: Vec<Column>,
    nominals: Vec<NominalColumn>,
    derived: Vec<Column>,
    treatment: Vec<u8>,
    outcome: Option<Vec<f64>>,
    role: Role,
    unit_ids: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_finite(cell: &str, row: usize, col: &str) -> Result<f64, DataError> {
    let v: f64 = cell.trim().parse().map_err(|_| DataError::InvalidNumber {
        row,
        col: col.to_string(),
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(DataError::InvalidNumber { row, col: col.to_string(), value: cell.to_string() });
    }
    Ok(v)
}

fn parse_binary(cell: &str, row: usize, col: &str) -> Result<f64, DataError> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ => Err(DataError::NonBinaryValue { row, col: col.to_string(), value: cell.to_string() }),
    }
}

fn format_number(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v}")
}

impl StudyData {
    /// Builds a table from already-typed parts, enforcing the invariants
    /// `load_csv` enforces. `raw` holds one value vector per schema entry;
    /// categorical entries carry level codes as `f64`.
    pub fn from_parts(
        schema: Vec<VariableSpec>,
        raw: Vec<Vec<f64>>,
        treatment: Vec<u8>,
        outcome: Option<Vec<f64>>,
        unit_ids: Vec<String>,
        role: Role,
    ) -> Result<Self, DataError> {
        let n = unit_ids.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        check_len("treatment", n, treatment.len())?;
        if let Some(y) = &outcome {
            check_len("outcome", n, y.len())?;
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(DataError::InvalidNumber { row: i + 1, col: "outcome".into(), value: y[i].to_string() });
            }
        }
        if let Some(i) = treatment.iter().position(|&z| z > 1) {
            return Err(DataError::NonBinaryTreatment { row: i + 1 });
        }
        let mut seen = HashSet::new();
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId(id.clone()));
            }
        }
        let mut names = HashSet::new();
        for spec in &schema {
            if !names.insert(spec.name.as_str()) {
                return Err(DataError::DuplicateVariable(spec.name.clone()));
            }
        }
        if raw.len() != schema.len() {
            return Err(DataError::HeaderMismatch(format!(
                "{} schema variables but {} value columns",
                schema.len(),
                raw.len()
            )));
        }
        let mut columns = Vec::new();
        let mut nominals = Vec::new();
        for (spec, values) in schema.iter().zip(raw) {
            check_len(&spec.name, n, values.len())?;
            match spec.kind {
                VariableKind::Continuous => {
                    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                        return Err(DataError::InvalidNumber {
                            row: i + 1,
                            col: spec.name.clone(),
                            value: values[i].to_string(),
                        });
                    }
                    columns.push(Column { name: spec.name.clone(), kind: ColumnKind::Continuous, origin: None, values });
                }
                VariableKind::Binary => {
                    if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                        return Err(DataError::NonBinaryValue {
                            row: i + 1,
                            col: spec.name.clone(),
                            value: values[i].to_string(),
                        });
                    }
                    columns.push(Column { name: spec.name.clone(), kind: ColumnKind::Binary, origin: None, values });
                }
                VariableKind::Categorical => {
                    let k = spec.levels.len();
                    let mut codes = Vec::with_capacity(n);
                    for (i, &v) in values.iter().enumerate() {
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= k {
                            return Err(DataError::UnknownLevel { col: spec.name.clone(), value: format!("code {v} (row {})", i + 1) });
                        }
                        codes.push(v as u32);
                    }
                    for (li, level) in spec.levels.iter().enumerate() {
                        columns.push(Column {
                            name: spec.indicator_name(level),
                            kind: ColumnKind::Binary,
                            origin: Some((spec.name.clone(), level.clone())),
                            values: codes.iter().map(|&c| if c as usize == li { 1.0 } else { 0.0 }).collect(),
                        });
                    }
                    nominals.push(NominalColumn { name: spec.name.clone(), levels: spec.levels.clone(), codes });
                }
            }
        }
        let mut col_names = HashSet::new();
        for c in &columns {
            if !col_names.insert(c.name.as_str()) {
                return Err(DataError::DuplicateVariable(c.name.clone()));
            }
        }
        Ok(Self { schema, columns, nominals, derived: Vec::new(), treatment, outcome, role, unit_ids })
    }

    pub fn read_csv<R: Read>(reader: R, schema: &[VariableSpec], layout: &CsvLayout, role: Role) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let position = |name: &str| header.iter().position(|h| h == name);

        let mut expected: HashSet<&str> = HashSet::new();
        expected.insert(&layout.id_column);
        expected.insert(&layout.treatment_column);
        if let Some(o) = &layout.outcome_column {
            expected.insert(o);
        }
        for s in schema {
            expected.insert(&s.name);
        }
        let ignore: HashSet<&str> = layout.ignore.iter().map(String::as_str).collect();
        for h in &header {
            if !expected.contains(h.as_str()) && !ignore.contains(h.as_str()) {
                return Err(DataError::HeaderMismatch(format!("unexpected column `{h}`")));
            }
        }
        let find = |name: &str| position(name).ok_or_else(|| DataError::HeaderMismatch(format!("missing column `{name}`")));
        let id_pos = find(&layout.id_column)?;
        let z_pos = find(&layout.treatment_column)?;
        let y_pos = layout.outcome_column.as_deref().map(find).transpose()?;
        let var_pos: Vec<usize> = schema.iter().map(|s| find(&s.name)).collect::<Result<_, _>>()?;
        let level_maps: Vec<HashMap<&str, usize>> = schema
            .iter()
            .map(|s| s.levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
            .collect();

        let mut ids = Vec::new();
        let mut treatment = Vec::new();
        let mut outcome = y_pos.map(|_| Vec::new());
        let mut raw: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let row = r + 1;
            let cell = |pos: usize, col: &str| -> Result<&str, DataError> {
                match record.get(pos) {
                    Some(c) if !is_missing(c) => Ok(c),
                    _ => Err(DataError::MissingCell { row, col: col.to_string() }),
                }
            };
            ids.push(cell(id_pos, &layout.id_column)?.to_string());
            let z = cell(z_pos, &layout.treatment_column)?;
            treatment.push(match z.parse::<f64>() {
                Ok(v) if v == 0.0 => 0,
                Ok(v) if v == 1.0 => 1,
                _ => return Err(DataError::NonBinaryTreatment { row }),
            });
            if let (Some(pos), Some(out)) = (y_pos, outcome.as_mut()) {
                let name = layout.outcome_column.as_deref().unwrap_or_default();
                out.push(parse_finite(cell(pos, name)?, row, name)?);
            }
            for (j, spec) in schema.iter().enumerate() {
                let c = cell(var_pos[j], &spec.name)?;
                let v = match spec.kind {
                    VariableKind::Continuous => parse_finite(c, row, &spec.name)?,
                    VariableKind::Binary => parse_binary(c, row, &spec.name)?,
                    VariableKind::Categorical => match level_maps[j].get(c) {
                        Some(&code) => code as f64,
                        None => return Err(DataError::UnknownLevel { col: spec.name.clone(), value: c.to_string() }),
                    },
                };
                raw[j].push(v);
            }
        }
        Self::from_parts(schema.to_vec(), raw, treatment, outcome, ids, role)
    }

    /// Writes the table in the same layout it is read with: id, treatment,
    /// outcome (when attached), then schema variables with categoricals
    /// collapsed back to their level labels.
    pub fn write_csv<W: Write>(&self, writer: W, layout: &CsvLayout) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec![layout.id_column.clone(), layout.treatment_column.clone()];
        if let (Some(name), Some(_)) = (&layout.outcome_column, &self.outcome) {
            header.push(name.clone());
        }
        header.extend(self.schema.iter().map(|s| s.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.unit_ids[i].clone(), self.treatment[i].to_string()];
            if let (Some(_), Some(y)) = (&layout.outcome_column, &self.outcome) {
                rec.push(format_number(y[i]));
            }
            for spec in &self.schema {
                rec.push(match spec.kind {
                    VariableKind::Categorical => {
                        let nom = self.nominals.iter().find(|c| c.name == spec.name).expect("nominal for categorical");
                        nom.levels[nom.codes[i] as usize].clone()
                    }
                    _ => format_number(self.column(&spec.name).expect("schema column").values[i]),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Io { path: "<writer>".into(), source: e })?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn schema(&self) -> &[VariableSpec] {
        &self.schema
    }

    /// Covariate columns after one-hot expansion, in schema order.
    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Looks a column up among covariates first, then derived columns.
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().chain(&self.derived).find(|c| c.name == name)
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.outcome.as_deref()
    }

    pub fn outcome_is_binary(&self) -> bool {
        self.outcome.as_ref().is_some_and(|y| y.iter().all(|&v| v == 0.0 || v == 1.0))
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&z| z == 1).count()
    }

    /// Read-only view without access to the outcome.
    pub fn design(&self) -> DesignView<'_> {
        DesignView { data: self }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn with_outcome(mut self, outcome: Vec<f64>) -> Result<Self, DataError> {
        check_len("outcome", self.n(), outcome.len())?;
        self.outcome = Some(outcome);
        Ok(self)
    }

    /// Attaches outcomes looked up by unit id.
    pub fn with_outcome_by_id(self, outcomes: &HashMap<String, f64>) -> Result<Self, DataError> {
        let y = self
            .unit_ids
            .iter()
            .map(|id| outcomes.get(id).copied().ok_or_else(|| DataError::UnknownId(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        self.with_outcome(y)
    }

    pub fn without_outcome(mut self) -> Self {
        self.outcome = None;
        self
    }

    /// Drops expanded covariate columns by name (e.g. a reference level).
    pub fn drop_columns(mut self, names: &[String]) -> Result<Self, DataError> {
        for name in names {
            if !self.columns.iter().any(|c| &c.name == name) {
                return Err(DataError::UnknownColumn(name.clone()));
            }
        }
        self.columns.retain(|c| !names.contains(&c.name));
        Ok(self)
    }

    /// Adds a non-covariate numeric column such as a fitted score.
    pub fn add_derived(&mut self, name: &str, values: Vec<f64>) -> Result<(), DataError> {
        check_len(name, self.n(), values.len())?;
        if self.column(name).is_some() {
            return Err(DataError::DuplicateVariable(name.to_string()));
        }
        self.derived.push(Column { name: name.to_string(), kind: ColumnKind::Continuous, origin: None, values });
        Ok(())
    }

    /// Adds a nominal variable such as binned scores.
    pub fn add_nominal(&mut self, name: &str, levels: Vec<String>, codes: Vec<u32>) -> Result<(), DataError> {
        check_len(name, self.n(), codes.len())?;
        if self.nominals.iter().any(|c| c.name == name) {
            return Err(DataError::DuplicateVariable(name.to_string()));
        }
        if codes.iter().any(|&c| c as usize >= levels.len()) {
            return Err(DataError::UnknownLevel { col: name.to_string(), value: "code out of range".into() });
        }
        self.nominals.push(NominalColumn { name: name.to_string(), levels, codes });
        Ok(())
    }

    /// Nominal coding of a categorical, binary, or added nominal variable.
    pub fn nominal(&self, name: &str) -> Result<NominalColumn, DataError> {
        if let Some(c) = self.nominals.iter().find(|c| c.name == name) {
            return Ok(c.clone());
        }
        match self.column(name) {
            Some(c) if c.kind == ColumnKind::Binary => Ok(NominalColumn {
                name: name.to_string(),
                levels: vec!["0".into(), "1".into()],
                codes: c.values.iter().map(|&v| v as u32).collect(),
            }),
            Some(_) => Err(DataError::NotNominal(name.to_string())),
            None => Err(DataError::UnknownColumn(name.to_string())),
        }
    }

    pub fn has_nominal(&self, name: &str) -> bool {
        self.nominal(name).is_ok()
    }

    /// Row subset in the given index order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_col = |c: &Column| Column { values: pick(&c.values), ..c.clone() };
        Self {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(pick_col).collect(),
            nominals: self
                .nominals
                .iter()
                .map(|c| NominalColumn { codes: rows.iter().map(|&i| c.codes[i]).collect(), ..c.clone() })
                .collect(),
            derived: self.derived.iter().map(pick_col).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: self.outcome.as_ref().map(|y| pick(y)),
            role: self.role,
            unit_ids: rows.iter().map(|&i| self.unit_ids[i].clone()).collect(),
        }
    }

    /// Row indices by unit id.
    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.unit_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn treated_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i] == 1).collect()
    }

    pub fn control_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i] == 0).collect()
    }
}

fn check_len(name: &str, expected: usize, got: usize) -> Result<(), DataError> {
    if expected != got {
        return Err(DataError::LengthMismatch { name: name.to_string(), expected, got });
    }
    Ok(())
}

pub fn load_csv(path: &Path, schema: &[VariableSpec], layout: &CsvLayout, role: Role) -> Result<StudyData, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    StudyData::read_csv(file, schema, layout, role)
}

/// Reads `id -> outcome` for every row of a CSV, ignoring all other columns.
pub fn read_outcome_column(path: &Path, id_column: &str, outcome_column: &str) -> Result<HashMap<String, f64>, DataError> {
    let file = File::open(path).map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::HeaderMismatch(format!("missing column `{name}`")))
    };
    let (id_pos, y_pos) = (find(id_column)?, find(outcome_column)?);
    let mut out = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let id = rec.get(id_pos).filter(|c| !is_missing(c)).ok_or(DataError::MissingCell { row, col: id_column.into() })?;
        let y = rec.get(y_pos).filter(|c| !is_missing(c)).ok_or(DataError::MissingCell { row, col: outcome_column.into() })?;
        if out.insert(id.to_string(), parse_finite(y, row, outcome_column)?).is_some() {
            return Err(DataError::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

/// Splits into `(treated, control)`, preserving row order within each arm.
pub fn split_treated_control(data: &StudyData) -> Result<(StudyData, StudyData), DataError> {
    let treated = data.treated_rows();
    let control = data.control_rows();
    if treated.is_empty() {
        return Err(DataError::EmptyArm("treated"));
    }
    if control.is_empty() {
        return Err(DataError::EmptyArm("control"));
    }
    Ok((data.subset(&treated), data.subset(&control)))
}

/// Outcome-free view of a [`StudyData`].
///
/// Design-stage operations (propensity scores, distances, matching) take
/// this view so the analysis outcome is unreachable from them.
#[derive(Debug, Clone, Copy)]
pub struct DesignView<'a> {
    data: &'a StudyData,
}

impl<'a> DesignView<'a> {
    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn columns(&self) -> &'a [Column] {
        self.data.columns()
    }

    pub fn column(&self, name: &str) -> Option<&'a Column> {
        self.data.column(name)
    }

    pub fn column_names(&self) -> Vec<&'a str> {
        self.data.column_names()
    }

    pub fn treatment(&self) -> &'a [u8] {
        self.data.treatment()
    }

    pub fn unit_ids(&self) -> &'a [String] {
        self.data.unit_ids()
    }

    pub fn nominal(&self, name: &str) -> Result<NominalColumn, DataError> {
        self.data.nominal(name)
    }

    pub fn treated_rows(&self) -> Vec<usize> {
        self.data.treated_rows()
    }

    pub fn control_rows(&self) -> Vec<usize> {
        self.data.control_rows()
    }

    pub fn schema(&self) -> &'a [VariableSpec] {
        self.data.schema()
    }

    /// Row subset with the outcome removed.
    pub fn subset_redacted(&self, rows: &[usize]) -> StudyData {
        let mut out = self.data.subset(rows);
        out.outcome = None;
        out
    }
}
