//! Flat parameter checkpoints: an ordered list of `(name, shape, values)`.

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn to_entries(store: &ParamStore) -> Vec<CheckpointEntry> {
    store
        .iter()
        .map(|(_, p)| CheckpointEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data().to_vec(),
        })
        .collect()
}

/// Rebuilds a store; entry order defines parameter ids.
pub fn from_entries(entries: &[CheckpointEntry]) -> Result<ParamStore, AutodiffError> {
    let mut store = ParamStore::new();
    for e in entries {
        store.insert(e.name.clone(), Tensor::new(e.shape.clone(), e.values.clone())?);
    }
    Ok(store)
}

/// Overwrites `store` with checkpoint values, matching names and shapes in order.
pub fn load_into(store: &mut ParamStore, entries: &[CheckpointEntry]) -> Result<(), AutodiffError> {
    if entries.len() != store.len() {
        return Err(AutodiffError::Shape(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, e) in ids.into_iter().zip(entries) {
        if store.name(id) != e.name {
            return Err(AutodiffError::Contract(format!(
                "checkpoint parameter {} where {} was expected",
                e.name,
                store.name(id)
            )));
        }
        store.set(id, Tensor::new(e.shape.clone(), e.values.clone())?)?;
    }
    Ok(())
}
