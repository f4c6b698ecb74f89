//! Name-to-constructor registries used to build components from configs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub type Params = serde_json::Map<String, Value>;

/// A `name` plus free-form parameters, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentConfig {
    pub name: String,
    #[serde(flatten)]
    pub params: Params,
}

impl ComponentConfig {
    pub fn named(name: &str) -> Self {
        Self { name: name.to_string(), params: Params::new() }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

pub type Constructor<T> = Arc<dyn Fn(&Params, &Registry<T>) -> Result<T> + Send + Sync>;

pub struct Registry<T> {
    kind: &'static str,
    entries: BTreeMap<String, Constructor<T>>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn register<F>(&mut self, name: &str, constructor: F) -> Result<()>
    where
        F: Fn(&Params, &Registry<T>) -> Result<T> + Send + Sync + 'static,
    {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateComponent { kind: self.kind, name: name.to_string() });
        }
        self.entries.insert(name.to_string(), Arc::new(constructor));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn build(&self, config: &ComponentConfig) -> Result<T> {
        let ctor = self.entries.get(&config.name).ok_or_else(|| Error::UnknownComponent {
            kind: self.kind,
            name: config.name.clone(),
            registered: self.names(),
        })?;
        ctor(&config.params, self)
    }
}

/// Deserializes constructor parameters into a typed struct, naming the
/// component on failure.
pub fn parse_params<P: DeserializeOwned>(kind: &str, name: &str, params: &Params) -> Result<P> {
    serde_json::from_value(Value::Object(params.clone()))
        .map_err(|e| Error::Config(format!("{kind} {name:?}: {e}")))
}
