use std::sync::Arc;

use dance_core::intervene::edit_class_weight;
use dance_core::train::{DanceModel, EditRecord};
use serde::Serialize;

use crate::error::ApiError;

#[derive(Debug, Clone)]
struct Version {
    id: String,
    parent: Option<String>,
    edit: Option<EditRecord>,
    model: Arc<DanceModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VersionInfo {
    pub id: String,
    pub parent: Option<String>,
    pub edit: Option<EditRecord>,
    pub active: bool,
}

/// Model versions keyed `v0`, `v1`, ... Edits create children; nothing is
/// ever removed, so parent pointers always name earlier versions.
#[derive(Debug)]
pub struct ModelRegistry {
    versions: Vec<Version>,
    active: usize,
}

impl ModelRegistry {
    pub fn new(model: DanceModel) -> Self {
        ModelRegistry {
            versions: vec![Version {
                id: "v0".into(),
                parent: None,
                edit: None,
                model: Arc::new(model),
            }],
            active: 0,
        }
    }

    fn position(&self, id: &str) -> Result<usize, ApiError> {
        self.versions
            .iter()
            .position(|v| v.id == id)
            .ok_or_else(|| ApiError::not_found(format!("unknown version {id:?}")))
    }

    pub fn active_id(&self) -> &str {
        &self.versions[self.active].id
    }

    /// The requested version, or the active one.
    pub fn get(&self, id: Option<&str>) -> Result<(String, Arc<DanceModel>), ApiError> {
        let i = match id {
            Some(id) => self.position(id)?,
            None => self.active,
        };
        let v = &self.versions[i];
        Ok((v.id.clone(), v.model.clone()))
    }

    pub fn parent_of(&self, id: &str) -> Result<Option<String>, ApiError> {
        Ok(self.versions[self.position(id)?].parent.clone())
    }

    /// Applies one class-weight edit to `base` (default active) and stores
    /// the result as a new version. The active version is unchanged.
    pub fn edit(&mut self, base: Option<&str>, class: usize, concept: usize, value: f64) -> Result<VersionInfo, ApiError> {
        let (base_id, model) = self.get(base)?;
        let edited = edit_class_weight(&model, class, concept, value)?;
        let record = edited.edit_log().last().cloned();
        let id = format!("v{}", self.versions.len());
        self.versions.push(Version {
            id: id.clone(),
            parent: Some(base_id.clone()),
            edit: record.clone(),
            model: Arc::new(edited),
        });
        Ok(VersionInfo {
            id,
            parent: Some(base_id),
            edit: record,
            active: false,
        })
    }

    pub fn activate(&mut self, id: &str) -> Result<(), ApiError> {
        self.active = self.position(id)?;
        Ok(())
    }

    pub fn list(&self) -> Vec<VersionInfo> {
        self.versions
            .iter()
            .enumerate()
            .map(|(i, v)| VersionInfo {
                id: v.id.clone(),
                parent: v.parent.clone(),
                edit: v.edit.clone(),
                active: i == self.active,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use dance_core::concepts::ConceptSpace;
    use dance_core::train::{ModelParts, TrainConfig, TrainSummary};
    use ndarray::{Array1, Array2};

    use super::*;

    fn model() -> DanceModel {
        DanceModel::from_parts(ModelParts {
            class_names: vec!["a".into(), "b".into()],
            concepts: ConceptSpace {
                motion: vec![],
                object: vec!["ball".into(), "net".into()],
                scene: vec![],
            },
            w_motion: Array2::zeros((0, 3)),
            w_object: Array2::from_elem((2, 3), 0.5),
            w_scene: Array2::zeros((0, 3)),
            act_mean: Array1::zeros(2),
            act_std: Array1::ones(2),
            w_a: Array2::from_elem((2, 2), 0.25),
            bias: Array1::zeros(2),
            config: TrainConfig::default(),
            summary: TrainSummary::default(),
        })
        .unwrap()
    }

    #[test]
    fn edits_chain_without_switching_active() {
        let mut reg = ModelRegistry::new(model());
        let v1 = reg.edit(None, 0, 1, 2.0).unwrap();
        let v2 = reg.edit(Some("v1"), 1, 0, -1.0).unwrap();
        assert_eq!((v1.id.as_str(), v2.id.as_str()), ("v1", "v2"));
        assert_eq!(v2.parent.as_deref(), Some("v1"));
        assert_eq!(reg.active_id(), "v0");
        let (_, m2) = reg.get(Some("v2")).unwrap();
        assert_eq!(m2.w_a()[[0, 1]], 2.0);
        assert_eq!(m2.w_a()[[1, 0]], -1.0);
        assert_eq!(m2.edit_log().len(), 2);
        let (_, m0) = reg.get(None).unwrap();
        assert_eq!(m0.w_a()[[0, 1]], 0.25);
    }

    #[test]
    fn activate_and_unknown_versions() {
        let mut reg = ModelRegistry::new(model());
        reg.edit(None, 0, 0, 1.0).unwrap();
        reg.activate("v1").unwrap();
        assert_eq!(reg.active_id(), "v1");
        let active: Vec<_> = reg.list().into_iter().filter(|v| v.active).map(|v| v.id).collect();
        assert_eq!(active, ["v1"]);
        assert_eq!(reg.parent_of("v1").unwrap().as_deref(), Some("v0"));
        assert_eq!(reg.parent_of("v0").unwrap(), None);
        assert!(reg.activate("v9").is_err());
        assert!(reg.get(Some("v9")).is_err());
        assert!(reg.edit(None, 5, 0, 1.0).is_err());
        assert_eq!(reg.list().len(), 2);
    }
}
