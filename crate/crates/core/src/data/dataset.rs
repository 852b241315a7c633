use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema, Slot};
use crate::error::{Error, Result};

/// Standardization statistics of one continuous column (population
/// convention, `std > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn standardize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One feature vector in model units: standardized continuous components
/// and level indices for the categorical components.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub continuous: Vec<f64>,
    pub categorical: Vec<usize>,
}

/// Tabular sample with standardized continuous columns (row-major),
/// categorical level indices, claim counts and exposures.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: FeatureSchema,
    n: usize,
    continuous: Vec<f64>,
    categorical: Vec<usize>,
    response: Vec<f64>,
    exposure: Vec<f64>,
    stats: Vec<ColumnStats>,
}

impl Dataset {
    /// Builds a data set from raw (unstandardized) continuous values.
    ///
    /// When `stats` is `None` the standardization statistics are fitted on
    /// `raw_continuous`; otherwise the given statistics are reused verbatim.
    pub fn from_raw(
        schema: FeatureSchema,
        raw_continuous: Vec<f64>,
        categorical: Vec<usize>,
        response: Vec<f64>,
        exposure: Option<Vec<f64>>,
        stats: Option<&[ColumnStats]>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = response.len();
        let nc = schema.n_continuous();
        let nk = schema.n_categorical();
        if raw_continuous.len() != n * nc || categorical.len() != n * nk {
            return Err(Error::Shape(format!(
                "expected {n} rows of {nc} continuous and {nk} categorical values"
            )));
        }
        let exposure = exposure.unwrap_or_else(|| vec![1.0; n]);
        if exposure.len() != n {
            return Err(Error::Shape(format!(
                "exposure has {} entries, expected {n}",
                exposure.len()
            )));
        }

        let cont_names: Vec<&str> = schema
            .features
            .iter()
            .filter(|f| !f.is_categorical())
            .map(|f| f.name.as_str())
            .collect();
        let stats = match stats {
            Some(s) => {
                if s.len() != nc {
                    return Err(Error::Shape(format!(
                        "{} standardization entries for {nc} continuous features",
                        s.len()
                    )));
                }
                s.to_vec()
            }
            None => (0..nc)
                .map(|k| {
                    let col = (0..n).map(|i| raw_continuous[i * nc + k]);
                    match ColumnStats::fit(col) {
                        Some(st) if st.std > 0.0 && st.std.is_finite() => Ok(st),
                        _ => Err(Error::Schema(format!(
                            "continuous column `{}` has zero variance or no rows",
                            cont_names[k]
                        ))),
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        for (k, st) in stats.iter().enumerate() {
            if !(st.std > 0.0) || !st.mean.is_finite() || !st.std.is_finite() {
                return Err(Error::Schema(format!(
                    "invalid standardization statistics for `{}`",
                    cont_names[k]
                )));
            }
        }

        let level_counts = schema.level_counts();
        let cat_names: Vec<&str> = schema
            .features
            .iter()
            .filter(|f| f.is_categorical())
            .map(|f| f.name.as_str())
            .collect();
        for i in 0..n {
            for k in 0..nk {
                let idx = categorical[i * nk + k];
                if idx >= level_counts[k] {
                    return Err(Error::InvalidValue {
                        row: i + 1,
                        column: cat_names[k].to_string(),
                        message: format!("level index {idx} out of range"),
                    });
                }
            }
            if !(response[i] >= 0.0) || !response[i].is_finite() {
                return Err(Error::InvalidValue {
                    row: i + 1,
                    column: schema.response.clone(),
                    message: format!("response must be finite and non-negative, got {}", response[i]),
                });
            }
            if !(exposure[i] > 0.0) || !exposure[i].is_finite() {
                return Err(Error::InvalidValue {
                    row: i + 1,
                    column: schema.exposure.clone().unwrap_or_else(|| "exposure".into()),
                    message: format!("exposure must be finite and positive, got {}", exposure[i]),
                });
            }
        }

        let mut continuous = raw_continuous;
        for (idx, v) in continuous.iter_mut().enumerate() {
            *v = stats[idx % nc.max(1)].standardize(*v);
        }

        Ok(Self {
            schema,
            n,
            continuous,
            categorical,
            response,
            exposure,
            stats,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn q(&self) -> usize {
        self.schema.q()
    }

    pub fn stats(&self) -> &[ColumnStats] {
        &self.stats
    }

    pub fn continuous_row(&self, i: usize) -> &[f64] {
        let nc = self.schema.n_continuous();
        &self.continuous[i * nc..(i + 1) * nc]
    }

    pub fn categorical_row(&self, i: usize) -> &[usize] {
        let nk = self.schema.n_categorical();
        &self.categorical[i * nk..(i + 1) * nk]
    }

    pub fn instance(&self, i: usize) -> Instance {
        Instance {
            continuous: self.continuous_row(i).to_vec(),
            categorical: self.categorical_row(i).to_vec(),
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = Instance> + '_ {
        (0..self.n).map(|i| self.instance(i))
    }

    /// Continuous part of row `i` in the original units.
    pub fn raw_continuous_row(&self, i: usize) -> Vec<f64> {
        self.continuous_row(i)
            .iter()
            .zip(&self.stats)
            .map(|(z, st)| st.destandardize(*z))
            .collect()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    /// Observed frequency `N_i / v_i`, the scale on which rates are modeled.
    pub fn frequency(&self, i: usize) -> f64 {
        self.response[i] / self.exposure[i]
    }

    /// Value of feature `j` (schema index) on row `i`: standardized value for
    /// continuous features, the level index (as `f64`) for categorical ones.
    pub fn feature_value(&self, i: usize, j: usize) -> f64 {
        match self.schema.slots()[j] {
            Slot::Continuous(k) => self.continuous_row(i)[k],
            Slot::Categorical(k) => self.categorical_row(i)[k] as f64,
        }
    }

    /// The same rows standardized with `stats` instead of the current
    /// statistics.
    pub fn restandardized(&self, stats: &[ColumnStats]) -> Result<Dataset> {
        let raw = (0..self.n).flat_map(|i| self.raw_continuous_row(i)).collect();
        Dataset::from_raw(
            self.schema.clone(),
            raw,
            self.categorical.clone(),
            self.response.clone(),
            Some(self.exposure.clone()),
            Some(stats),
        )
    }

    /// Rows `indices` as a new data set sharing schema and statistics.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let nc = self.schema.n_continuous();
        let nk = self.schema.n_categorical();
        let mut continuous = Vec::with_capacity(indices.len() * nc);
        let mut categorical = Vec::with_capacity(indices.len() * nk);
        let mut response = Vec::with_capacity(indices.len());
        let mut exposure = Vec::with_capacity(indices.len());
        for &i in indices {
            continuous.extend_from_slice(self.continuous_row(i));
            categorical.extend_from_slice(self.categorical_row(i));
            response.push(self.response[i]);
            exposure.push(self.exposure[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            n: indices.len(),
            continuous,
            categorical,
            response,
            exposure,
            stats: self.stats.clone(),
        }
    }
}

/// Reads a comma-separated file with a header row and standardizes its
/// continuous columns with statistics fitted on this file.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, None)
}

/// Like [`load_csv`] but reuses standardization statistics from a previously
/// loaded (learning) file.
pub fn load_csv_with_stats(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    stats: &[ColumnStats],
) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, Some(stats))
}

fn read_csv(path: &Path, schema: &FeatureSchema, stats: Option<&[ColumnStats]>) -> Result<Dataset> {
    schema.validate()?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let column = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let response_col = column(&schema.response)?;
    let exposure_col = schema.exposure.as_deref().map(column).transpose()?;

    let level_maps: Vec<Option<HashMap<&str, usize>>> = schema
        .features
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Categorical { levels } => Some(
                levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i))
                    .collect(),
            ),
            FeatureKind::Continuous => None,
        })
        .collect();

    let parse = |row: usize, name: &str, cell: &str| -> Result<f64> {
        cell.trim().parse::<f64>().map_err(|_| Error::Parse {
            row,
            column: name.to_string(),
            value: cell.to_string(),
        })
    };

    let mut raw = Vec::new();
    let mut cats = Vec::new();
    let mut response = Vec::new();
    let mut exposure = exposure_col.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = r + 1;
        for ((f, &col), levels) in schema.features.iter().zip(&feature_cols).zip(&level_maps) {
            let cell = record.get(col).unwrap_or("");
            match levels {
                Some(map) => {
                    let idx = map.get(cell.trim()).ok_or_else(|| Error::UndeclaredLevel {
                        row,
                        column: f.name.clone(),
                        value: cell.to_string(),
                    })?;
                    cats.push(*idx);
                }
                None => {
                    let v = parse(row, &f.name, cell)?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row,
                            column: f.name.clone(),
                            value: cell.to_string(),
                        });
                    }
                    raw.push(v);
                }
            }
        }
        response.push(parse(row, &schema.response, record.get(response_col).unwrap_or(""))?);
        if let (Some(col), Some(e)) = (exposure_col, exposure.as_mut()) {
            let name = schema.exposure.as_deref().unwrap_or_default();
            e.push(parse(row, name, record.get(col).unwrap_or(""))?);
        }
    }
    Dataset::from_raw(schema.clone(), raw, cats, response, exposure, stats)
}

/// Writes `data` as CSV in original units: features in schema order, then
/// the response and, when declared, the exposure column.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let schema = data.schema();
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = schema.names();
    header.push(&schema.response);
    if let Some(e) = &schema.exposure {
        header.push(e);
    }
    writer.write_record(&header).map_err(csv_err)?;
    let slots = schema.slots();
    for i in 0..data.n() {
        let raw = data.raw_continuous_row(i);
        let mut record: Vec<String> = slots
            .iter()
            .zip(&schema.features)
            .map(|(slot, f)| match (*slot, &f.kind) {
                (Slot::Continuous(k), _) => raw[k].to_string(),
                (Slot::Categorical(k), FeatureKind::Categorical { levels }) => {
                    levels[data.categorical_row(i)[k]].clone()
                }
                (Slot::Categorical(_), FeatureKind::Continuous) => unreachable!("slot kinds follow the schema"),
            })
            .collect();
        record.push(data.response()[i].to_string());
        if schema.exposure.is_some() {
            record.push(data.exposure()[i].to_string());
        }
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
