use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::data::{ColumnStats, FeatureSchema};
use crate::error::{Error, Result};

/// Current on-disk format version of model files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    body: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes `body` as a versioned JSON document tagged with `format`.
pub fn write_versioned<T: Serialize>(path: &Path, format: &str, body: &T) -> Result<()> {
    let json = serde_json::to_vec_pretty(&EnvelopeOut {
        format,
        version: FORMAT_VERSION,
        body,
    })
    .map_err(|e| Error::Numeric(format!("cannot serialize model: {e}")))?;
    fs::write(path, json).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a document written by [`write_versioned`], checking tag and version.
pub fn read_versioned<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let corrupt = |message: String| Error::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let header: Header =
        serde_json::from_value(value.clone()).map_err(|e| corrupt(format!("missing header: {e}")))?;
    if header.format != format {
        return Err(corrupt(format!("expected a `{format}` file, found `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    let body = value
        .get_mut("body")
        .map(serde_json::Value::take)
        .ok_or_else(|| corrupt("missing body".into()))?;
    serde_json::from_value(body).map_err(|e| corrupt(e.to_string()))
}

/// Schema and standardization statistics a model was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContext {
    pub schema: FeatureSchema,
    pub schema_fingerprint: String,
    pub standardization: Vec<ColumnStats>,
}

impl ModelContext {
    pub fn new(schema: FeatureSchema, standardization: Vec<ColumnStats>) -> Self {
        Self {
            schema_fingerprint: schema.fingerprint(),
            schema,
            standardization,
        }
    }

    pub(crate) fn check(&self, path: &Path) -> Result<()> {
        if self.schema.fingerprint() != self.schema_fingerprint {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: "schema fingerprint does not match the stored schema".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub context: ModelContext,
    pub network: Network,
}

const NETWORK_FORMAT: &str = "condexp-network";

pub fn save(path: impl AsRef<Path>, network: &Network, context: &ModelContext) -> Result<()> {
    #[derive(Serialize)]
    struct Body<'a> {
        context: &'a ModelContext,
        network: &'a Network,
    }
    write_versioned(path.as_ref(), NETWORK_FORMAT, &Body { context, network })
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkFile> {
    let path = path.as_ref();
    let file: NetworkFile = read_versioned(path, NETWORK_FORMAT)?;
    file.context.check(path)?;
    file.network.validate().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(file)
}
