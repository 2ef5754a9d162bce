//! Composition of RSS services: a per-client registry of fence callbacks, a
//! fence on every switch between services, and the causality metadata that
//! travels with application messages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::RegistryError;
use crate::timestamp::Timestamp;

/// Causality metadata carried by application messages.
///
/// Wire form: `{"t_min": <micros>, "last_service": <name or null>}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalContext {
    #[serde(with = "micros")]
    pub t_min: Timestamp,
    pub last_service: Option<String>,
}

mod micros {
    use super::Timestamp;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(t.micros)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        u64::deserialize(d).map(Timestamp::from_micros)
    }
}

impl CausalContext {
    /// Merges a sender's context into this one. On equal `t_min` the receiver
    /// keeps its own last service.
    pub fn merge(&mut self, sender: &CausalContext) {
        if sender.t_min > self.t_min {
            self.t_min = sender.t_min;
            if sender.last_service.is_some() {
                self.last_service = sender.last_service.clone();
            }
        }
    }
}

/// Registered services and the context of one client.
///
/// `F` is the fence callback type. The simulator drives asynchronous fences
/// itself and uses [`ServiceRegistry::switch_to`]; synchronous callers use
/// [`ServiceRegistry::start_transaction`].
pub struct ServiceRegistry<F> {
    services: BTreeMap<String, F>,
    ctx: CausalContext,
}

impl<F> Default for ServiceRegistry<F> {
    fn default() -> Self {
        ServiceRegistry {
            services: BTreeMap::new(),
            ctx: CausalContext::default(),
        }
    }
}

impl<F> ServiceRegistry<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_service(&mut self, name: &str, fence: F) -> Result<(), RegistryError> {
        if self.services.contains_key(name) {
            return Err(RegistryError::Duplicate(name.to_string()));
        }
        self.services.insert(name.to_string(), fence);
        Ok(())
    }

    pub fn unregister_service(&mut self, name: &str) -> Result<F, RegistryError> {
        let f = self
            .services
            .remove(name)
            .ok_or_else(|| RegistryError::Unknown(name.to_string()))?;
        if self.ctx.last_service.as_deref() == Some(name) {
            self.ctx.last_service = None;
        }
        Ok(f)
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.services.contains_key(name)
    }

    pub fn context(&self) -> &CausalContext {
        &self.ctx
    }

    /// Records that the next transaction targets `name` and returns the
    /// previous service if it differs, without running its fence.
    pub fn switch_to(&mut self, name: &str) -> Result<Option<String>, RegistryError> {
        if !self.services.contains_key(name) {
            return Err(RegistryError::Unknown(name.to_string()));
        }
        let prev = self.ctx.last_service.replace(name.to_string());
        Ok(prev.filter(|p| p != name && self.services.contains_key(p)))
    }

    /// Raises the context's `t_min` after a transaction completes.
    pub fn observe(&mut self, t: Timestamp) {
        self.ctx.t_min = self.ctx.t_min.max(t);
    }

    pub fn propagate_context(&mut self, sender: &CausalContext) {
        self.ctx.merge(sender);
    }
}

impl<F: FnMut()> ServiceRegistry<F> {
    /// Runs the previous service's fence if the client is switching services.
    /// Returns whether a fence ran.
    pub fn start_transaction(&mut self, name: &str) -> Result<bool, RegistryError> {
        match self.switch_to(name)? {
            Some(prev) => {
                (self.services.get_mut(&prev).expect("registered"))();
                Ok(true)
            }
            None => Ok(false),
        }
    }
}
