//! Name-keyed registries for the interchangeable pieces of a run: engine
//! fetch strategies, access paths, and benchmark queries.

use std::fmt;
use std::sync::Arc;

pub trait Named {
    fn name(&self) -> &'static str;
}

/// Ordered collection of trait objects looked up by case-insensitive name.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds an entry, replacing any previous entry with the same name.
    pub fn register(&mut self, entry: Arc<T>) -> &mut Self {
        let name = entry.name();
        self.entries.retain(|e| !e.name().eq_ignore_ascii_case(name));
        self.entries.push(entry);
        self
    }

    pub fn get(&self, name: &str) -> Option<Arc<T>> {
        self.entries
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .cloned()
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<T>, UnknownName> {
        self.get(name).ok_or_else(|| UnknownName {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<T>> {
        self.entries.iter()
    }
}

impl<T: ?Sized + Named> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} '{name}' (known: {})", known.join(", "))]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub known: Vec<String>,
}
