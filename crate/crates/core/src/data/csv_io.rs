use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnMeta, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Treatment,
    Outcome,
    Id,
    Ignore,
    Covariate(ColumnKind),
}

impl FromStr for ColumnRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "treatment" => ColumnRole::Treatment,
            "outcome" => ColumnRole::Outcome,
            "id" => ColumnRole::Id,
            "ignore" => ColumnRole::Ignore,
            "continuous" => ColumnRole::Covariate(ColumnKind::Continuous),
            "binary" => ColumnRole::Covariate(ColumnKind::Binary),
            "count" => ColumnRole::Covariate(ColumnKind::Count),
            "categorical" => ColumnRole::Covariate(ColumnKind::Categorical),
            other => return Err(format!("unknown column role '{other}'")),
        })
    }
}

impl ColumnRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ColumnRole::Treatment => "treatment",
            ColumnRole::Outcome => "outcome",
            ColumnRole::Id => "id",
            ColumnRole::Ignore => "ignore",
            ColumnRole::Covariate(ColumnKind::Continuous) => "continuous",
            ColumnRole::Covariate(ColumnKind::Binary) => "binary",
            ColumnRole::Covariate(ColumnKind::Count) => "count",
            ColumnRole::Covariate(ColumnKind::Categorical) => "categorical",
        }
    }
}

/// Column-role declaration for a CSV file, stored as a JSON sidecar of the
/// form `{"columns": {"age": "continuous", "Z": "treatment", ...}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, String>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: impl Into<String>, role: ColumnRole) -> Self {
        self.columns.insert(column.into(), role.as_str().to_string());
        self
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn role(&self, column: &str) -> Result<Option<ColumnRole>> {
        match self.columns.get(column) {
            None => Ok(None),
            Some(r) => r
                .parse()
                .map(Some)
                .map_err(|m: String| Error::Schema(format!("column '{column}': {m}"))),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

/// Reads a CSV with a header row. Every header column must have a role in
/// `schema`; missing cells abort the load.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut roles = Vec::with_capacity(headers.len());
    for h in &headers {
        match schema.role(h)? {
            Some(r) => roles.push(r),
            None => return Err(Error::Schema(format!("column '{h}' has no declared role"))),
        }
    }
    let header_set: BTreeSet<&str> = headers.iter().map(String::as_str).collect();
    for declared in schema.columns.keys() {
        if !header_set.contains(declared.as_str()) {
            return Err(Error::Schema(format!("declared column '{declared}' not found in header")));
        }
    }
    let single = |role: ColumnRole| -> Result<Option<usize>> {
        let hits: Vec<usize> = roles.iter().enumerate().filter(|(_, r)| **r == role).map(|(i, _)| i).collect();
        if hits.len() > 1 {
            return Err(Error::Schema(format!("more than one '{}' column", role.as_str())));
        }
        Ok(hits.first().copied())
    };
    let treat_col = single(ColumnRole::Treatment)?
        .ok_or_else(|| Error::Schema("no treatment column declared".into()))?;
    let outcome_col = single(ColumnRole::Outcome)?;
    let id_col = single(ColumnRole::Id)?;
    let cov_cols: Vec<(usize, ColumnKind)> = roles
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match r {
            ColumnRole::Covariate(k) => Some((i, *k)),
            _ => None,
        })
        .collect();

    let mut raw: Vec<Vec<String>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: r + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        raw.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    let n = raw.len();
    let parse_num = |row: usize, col: usize| -> Result<f64> {
        let cell = &raw[row][col];
        if is_missing(cell) {
            return Err(Error::Parse {
                row: row + 1,
                column: headers[col].clone(),
                message: "missing value".into(),
            });
        }
        cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
            row: row + 1,
            column: headers[col].clone(),
            message: format!("'{cell}' is not a finite number"),
        })
    };

    let mut treatment = Vec::with_capacity(n);
    for i in 0..n {
        let z = parse_num(i, treat_col).map_err(|_| Error::Parse {
            row: i + 1,
            column: headers[treat_col].clone(),
            message: format!("treatment value '{}' is not 0 or 1", raw[i][treat_col]),
        })?;
        if z != 0.0 && z != 1.0 {
            return Err(Error::Parse {
                row: i + 1,
                column: headers[treat_col].clone(),
                message: format!("treatment value '{}' is not 0 or 1", raw[i][treat_col]),
            });
        }
        treatment.push(z == 1.0);
    }
    let outcome = match outcome_col {
        Some(c) => Some((0..n).map(|i| parse_num(i, c)).collect::<Result<Vec<_>>>()?),
        None => None,
    };
    let ids = id_col.map(|c| (0..n).map(|i| raw[i][c].clone()).collect::<Vec<_>>());
    if let Some(ids) = &ids {
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Schema("subject ids are not unique".into()));
        }
    }

    let mut x = DMatrix::zeros(n, cov_cols.len());
    let mut metas = Vec::with_capacity(cov_cols.len());
    for (j, &(col, kind)) in cov_cols.iter().enumerate() {
        let name = headers[col].clone();
        match kind {
            ColumnKind::Categorical => {
                for i in 0..n {
                    if is_missing(&raw[i][col]) {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: name,
                            message: "missing value".into(),
                        });
                    }
                }
                let levels: Vec<String> = (0..n)
                    .map(|i| raw[i][col].clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                for i in 0..n {
                    x[(i, j)] = levels.binary_search(&raw[i][col]).expect("level present") as f64;
                }
                metas.push(ColumnMeta::categorical(name, levels));
            }
            _ => {
                for i in 0..n {
                    let v = parse_num(i, col)?;
                    let bad = match kind {
                        ColumnKind::Binary => v != 0.0 && v != 1.0,
                        ColumnKind::Count => v < 0.0 || v.fract() != 0.0,
                        _ => false,
                    };
                    if bad {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: name,
                            message: format!("value {v} invalid for a {kind:?} column"),
                        });
                    }
                    x[(i, j)] = v;
                }
                metas.push(ColumnMeta::new(name, kind));
            }
        }
    }
    Dataset::new(x, metas, treatment, outcome, ids)
}

fn fresh_name(base: &str, taken: &BTreeSet<String>) -> String {
    let mut name = base.to_string();
    while taken.contains(&name) {
        name.push('_');
    }
    name
}

/// Writes `d` as CSV (id, covariates, treatment, outcome) and returns the
/// matching schema.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let taken: BTreeSet<String> = d.columns().iter().map(|c| c.name.clone()).collect();
    let id_name = fresh_name("id", &taken);
    let z_name = fresh_name("Z", &taken);
    let y_name = fresh_name("Y", &taken);

    let mut schema = Schema::new().with(id_name.clone(), ColumnRole::Id).with(z_name.clone(), ColumnRole::Treatment);
    let mut header = vec![id_name];
    for c in d.columns() {
        header.push(c.name.clone());
        schema = schema.with(c.name.clone(), ColumnRole::Covariate(c.kind));
    }
    header.push(z_name);
    if d.outcome().is_some() {
        header.push(y_name.clone());
        schema = schema.with(y_name, ColumnRole::Outcome);
    }

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![d.ids()[i].clone()];
        for (j, c) in d.columns().iter().enumerate() {
            let v = d.covariates()[(i, j)];
            rec.push(match c.kind {
                ColumnKind::Categorical => c.levels[v as usize].clone(),
                _ => format!("{v}"),
            });
        }
        rec.push(if d.treatment()[i] { "1".into() } else { "0".into() });
        if let Some(y) = d.outcome() {
            rec.push(format!("{}", y[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn xzy_schema() -> Schema {
        Schema::new()
            .with("X", ColumnRole::Covariate(ColumnKind::Continuous))
            .with("Z", ColumnRole::Treatment)
            .with("Y", ColumnRole::Outcome)
    }

    #[test]
    fn loads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "X,Z,Y\n0.5,1,2\n1.5,1,3\n2.5,0,1\n3.5,0,0\n");
        let d = load_csv(&p, &xzy_schema()).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.p(), 1);
        assert_eq!(d.treatment(), &[true, true, false, false]);
        assert_eq!(d.outcome().unwrap(), &[2.0, 3.0, 1.0, 0.0]);
    }

    #[test]
    fn bad_treatment_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "X,Z,Y\n0.5,1,2\n1.5,2,3\n2.5,0,1\n");
        match load_csv(&p, &xzy_schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "Z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "X,Z,Y\n0.5,1,2\n,0,3\n");
        assert!(matches!(load_csv(&p, &xzy_schema()), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn unknown_role_and_undeclared_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "X,Z,W\n0.5,1,2\n1.0,0,3\n");
        let mut s = xzy_schema();
        s.columns.remove("Y");
        assert!(matches!(load_csv(&p, &s), Err(Error::Schema(m)) if m.contains("'W'")));
        s.columns.insert("W".into(), "weird".into());
        assert!(matches!(load_csv(&p, &s), Err(Error::Schema(m)) if m.contains("unknown column role")));
        assert!(load_csv(dir.path().join("nope.csv"), &s).is_err());
    }

    #[test]
    fn categorical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "C,Z\nb,1\na,0\nc,1\na,0\n");
        let s = Schema::new()
            .with("C", ColumnRole::Covariate(ColumnKind::Categorical))
            .with("Z", ColumnRole::Treatment);
        let d = load_csv(&p, &s).unwrap();
        assert_eq!(d.columns()[0].levels, vec!["a", "b", "c"]);
        assert_eq!(d.covariates().column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 2.0, 0.0]);

        let out = dir.path().join("b.csv");
        let schema = write_csv(&d, &out).unwrap();
        let back = load_csv(&out, &schema).unwrap();
        assert_eq!(back.columns(), d.columns());
        assert_eq!(back.covariates(), d.covariates());
        assert_eq!(back.treatment(), d.treatment());
        assert_eq!(back.ids(), d.ids());
    }
}
