use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlobRef, DatasetId, ModelId, Timestamp, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    Private,
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    Ready,
    Training,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: ModelId,
    pub owner: UserId,
    pub plugin_id: String,
    pub task_name: String,
    pub parent_model_id: Option<ModelId>,
    pub dataset_ids: Vec<DatasetId>,
    #[serde(default)]
    pub visibility: Visibility,
    pub status: ModelStatus,
    pub artifact: Option<BlobRef>,
    pub created_at: Timestamp,
}

impl ModelRecord {
    pub fn is_base(&self) -> bool {
        self.parent_model_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LineageError {
    #[error("model {0} not found")]
    NotFound(ModelId),
    #[error("model {child} references missing parent {parent}")]
    DanglingParent { child: ModelId, parent: ModelId },
    #[error("lineage cycle through model {0}")]
    Cycle(ModelId),
}

/// Walks parent pointers from `model_id` back to its base model.
pub fn lineage_chain(
    model_id: &ModelId,
    registry: &HashMap<ModelId, ModelRecord>,
) -> Result<Vec<ModelId>, LineageError> {
    let mut current = registry
        .get(model_id)
        .ok_or_else(|| LineageError::NotFound(model_id.clone()))?;
    let mut chain = vec![model_id.clone()];
    let mut seen: HashSet<&ModelId> = HashSet::from([model_id]);
    while let Some(parent) = &current.parent_model_id {
        if !seen.insert(parent) {
            return Err(LineageError::Cycle(parent.clone()));
        }
        current = registry.get(parent).ok_or_else(|| LineageError::DanglingParent {
            child: current.model_id.clone(),
            parent: parent.clone(),
        })?;
        chain.push(parent.clone());
    }
    Ok(chain)
}
