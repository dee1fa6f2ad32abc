use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// A column picked by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl ColumnSelector {
    fn resolve(&self, headers: &[String]) -> Result<usize> {
        match self {
            ColumnSelector::Index(i) if *i < headers.len() => Ok(*i),
            ColumnSelector::Index(i) => Err(Error::Load(format!(
                "column index {i} out of range ({} columns)",
                headers.len()
            ))),
            ColumnSelector::Name(n) => headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Load(format!("no column named '{n}'"))),
        }
    }
}

impl std::str::FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        })
    }
}

/// Raw label string to class id. Empty means labels must read as 0 or 1.
pub type LabelMap = BTreeMap<String, usize>;

/// A loaded classification table, shared read-only across trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTable {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ReplayTable {
    pub fn load(
        path: &Path,
        label: &ColumnSelector,
        features: Option<&[ColumnSelector]>,
        label_map: &LabelMap,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let label_idx = label.resolve(&headers)?;
        let feature_idx: Vec<usize> = match features {
            Some(sel) => sel.iter().map(|s| s.resolve(&headers)).collect::<Result<_>>()?,
            None => (0..headers.len()).filter(|&i| i != label_idx).collect(),
        };
        if feature_idx.is_empty() {
            return Err(Error::Load("no feature columns selected".into()));
        }
        if let Some(&dup) = feature_idx.iter().find(|&&i| i == label_idx) {
            return Err(Error::Load(format!("label column '{}' also selected as a feature", headers[dup])));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
            let row_no = line + 2;
            let mut x = Vec::with_capacity(feature_idx.len());
            for &j in &feature_idx {
                let raw = rec.get(j).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Load(format!("row {row_no}, column '{}': '{raw}' is not a number", headers[j]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Load(format!("row {row_no}, column '{}': non-finite value", headers[j])));
                }
                x.push(v);
            }
            let raw = rec.get(label_idx).unwrap_or("").trim();
            labels.push(map_label(raw, label_map).ok_or_else(|| {
                Error::Load(format!("row {row_no}: label '{raw}' is not binary under the label mapping"))
            })?);
            rows.push(x);
        }
        Ok(ReplayTable {
            feature_names: feature_idx.iter().map(|&j| headers[j].clone()).collect(),
            features: rows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }
}

fn map_label(raw: &str, map: &LabelMap) -> Option<usize> {
    if map.is_empty() {
        match raw.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        }
    } else {
        map.get(raw).copied().filter(|&c| c < 2)
    }
}

/// One trajectory over a seeded sample of table rows. Each sampled row is
/// consumed once; arm i predicts class i and earns 𝟙{label = i}.
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    xs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    constant_columns: Vec<String>,
}

impl ReplayEnv {
    /// Permutes the table with `rng`, keeps the first `horizon` rows and
    /// standardizes them column-wise with their own mean and sd.
    pub fn sample(table: &ReplayTable, horizon: usize, rng: &mut Rng) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("replay horizon must be positive".into()));
        }
        if table.len() < horizon {
            return Err(Error::Load(format!(
                "table has {} rows, fewer than the horizon {horizon}",
                table.len()
            )));
        }
        let mut order: Vec<usize> = (0..table.len()).collect();
        rng.shuffle(&mut order);
        order.truncate(horizon);
        let d = table.dim();
        let mut xs: Vec<Vec<f64>> = order.iter().map(|&r| table.features[r].clone()).collect();
        let labels = order.iter().map(|&r| table.labels[r]).collect();
        let n = horizon as f64;
        let mut constant_columns = Vec::new();
        for j in 0..d {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                for x in xs.iter_mut() {
                    x[j] = (x[j] - mean) / sd;
                }
            } else {
                constant_columns.push(table.feature_names[j].clone());
                for x in xs.iter_mut() {
                    x[j] = 0.0;
                }
            }
        }
        Ok(ReplayEnv {
            xs,
            labels,
            order,
            cursor: 0,
            constant_columns,
        })
    }

    pub fn horizon(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    /// Source row indices in trajectory order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Columns with zero variance in the sample, set to all zeros.
    pub fn constant_columns(&self) -> &[String] {
        &self.constant_columns
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Next (context, label), or `None` once the trajectory is spent.
    pub fn next_round(&mut self) -> Option<(&[f64], usize)> {
        let i = self.cursor;
        if i >= self.labels.len() {
            return None;
        }
        self.cursor += 1;
        Some((&self.xs[i], self.labels[i]))
    }

    pub fn reward(arm: usize, label: usize) -> f64 {
        if arm == label {
            1.0
        } else {
            0.0
        }
    }
}

/// Loads `path` and samples one trajectory of length `horizon`.
pub fn load_csv(
    path: &Path,
    label: &ColumnSelector,
    features: Option<&[ColumnSelector]>,
    label_map: &LabelMap,
    horizon: usize,
    rng: &mut Rng,
) -> Result<ReplayEnv> {
    let table = ReplayTable::load(path, label, features, label_map)?;
    ReplayEnv::sample(&table, horizon, rng)
}
