//! Adapter construction from a name and an optional checkpoint path.
//!
//! The built-in `reference` adapter is the seeded [`ReferenceNet`]; with a
//! checkpoint it loads a JSON-serialized net instead. Further adapters can
//! be registered under their own names.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kernelviz_core::{NetworkAdapter, ReferenceNet};

use crate::error::{Error, IoContext, Result};

pub type SharedAdapter = Box<dyn NetworkAdapter + Send + Sync>;

/// Builds an adapter from an optional checkpoint path and a seed for any
/// randomly initialized weights.
pub type AdapterConstructor = fn(Option<&Path>, u64) -> Result<SharedAdapter>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterSpec {
    pub name: String,
    pub checkpoint: Option<PathBuf>,
    pub net_seed: u64,
}

impl AdapterSpec {
    pub fn reference(net_seed: u64) -> Self {
        AdapterSpec {
            name: "reference".into(),
            checkpoint: None,
            net_seed,
        }
    }
}

pub struct AdapterRegistry {
    constructors: BTreeMap<String, AdapterConstructor>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        let mut r = AdapterRegistry {
            constructors: BTreeMap::new(),
        };
        r.register("reference", open_reference);
        r
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, name: &str, constructor: AdapterConstructor) {
        self.constructors.insert(name.to_string(), constructor);
    }

    pub fn names(&self) -> Vec<&str> {
        self.constructors.keys().map(String::as_str).collect()
    }

    pub fn open(&self, spec: &AdapterSpec) -> Result<SharedAdapter> {
        let ctor = self.constructors.get(&spec.name).ok_or_else(|| Error::UnknownAdapter {
            name: spec.name.clone(),
            available: self.names().join(", "),
        })?;
        ctor(spec.checkpoint.as_deref(), spec.net_seed)
    }
}

fn open_reference(checkpoint: Option<&Path>, seed: u64) -> Result<SharedAdapter> {
    match checkpoint {
        None => Ok(Box::new(ReferenceNet::standard(seed)?)),
        Some(path) => Ok(Box::new(load_reference(path)?)),
    }
}

/// Reads a JSON-serialized [`ReferenceNet`] and re-checks its designations.
pub fn load_reference(path: &Path) -> Result<ReferenceNet> {
    let text = fs::read_to_string(path).at(path)?;
    let net: ReferenceNet = serde_json::from_str(&text).map_err(|e| Error::integrity(path, e.to_string()))?;
    net.verify().map_err(|e| Error::integrity(path, e.to_string()))?;
    Ok(net)
}

pub fn save_reference(net: &ReferenceNet, path: &Path) -> Result<()> {
    let text = serde_json::to_string(net).expect("reference net serializes");
    fs::write(path, text).at(path)
}
