use std::collections::BTreeMap;

use super::{AdapterRef, BackendError};
use crate::router::ExpertId;

/// Expert → adapter bindings. Adapter ids are unique across the registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterRegistry {
    bindings: BTreeMap<ExpertId, AdapterRef>,
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, expert: ExpertId, adapter: AdapterRef) -> Result<(), BackendError> {
        if self
            .bindings
            .iter()
            .any(|(e, a)| *e != expert && a.id == adapter.id)
        {
            return Err(BackendError::InvalidRequest(format!(
                "adapter id `{}` already bound to another expert",
                adapter.id
            )));
        }
        self.bindings.insert(expert, adapter);
        Ok(())
    }

    /// The adapter to load for `expert`.
    pub fn activate(&self, expert: ExpertId) -> Result<AdapterRef, BackendError> {
        self.bindings
            .get(&expert)
            .cloned()
            .ok_or_else(|| BackendError::AdapterUnknown(expert.as_str().to_string()))
    }

    pub fn by_id(&self, id: &str) -> Option<&AdapterRef> {
        self.bindings.values().find(|a| a.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ExpertId, &AdapterRef)> {
        self.bindings.iter().map(|(e, a)| (*e, a))
    }
}
