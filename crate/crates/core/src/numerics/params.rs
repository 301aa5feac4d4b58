use std::sync::Arc;

use super::grid::Grid;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
///
/// Registration order is the deterministic order used by checkpoints and the
/// optimizer.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Grid>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Grid) -> Result<ParamId> {
        let name = name.into();
        if self.names.iter().any(|n| *n == name) {
            return Err(Error::invalid(
                "ParamStore::add",
                format!("duplicate parameter name {name:?}"),
            ));
        }
        self.names.push(name);
        self.values.push(Arc::new(value));
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Grid {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Grid {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Grid) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    value.shape(),
                    self.values[id.0].shape()
                ),
            ));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Grid> {
        self.values[id.0].clone()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Grid)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}
