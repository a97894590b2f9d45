use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use pivotfit_core::correction::PivotSet;
use pivotfit_core::eval::{ExperimentReport, RunSettings};
use pivotfit_core::ingest::{AlignPolicy, Dataset};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::ApiError;

/// Immutable view of one session. Mutations swap in a new `Arc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: Uuid,
    pub dataset: String,
    pub target: String,
    pub revision: u64,
    pub pivots: Option<PivotSet>,
    /// Settings of the last successful refit.
    pub settings: Option<RunSettings>,
    pub report: Option<ExperimentReport>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub sessions: Vec<Session>,
}

struct Slot {
    current: Mutex<Arc<Session>>,
    /// Loaded with the default feature list; used for range checks and previews.
    data: Arc<Dataset>,
}

pub struct Store {
    root: PathBuf,
    sessions: RwLock<HashMap<Uuid, Arc<Slot>>>,
}

/// Dataset names are plain directory names below the data root.
pub fn check_dataset_name(name: &str) -> Result<(), ApiError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::Invalid {
            message: format!("invalid dataset name {name:?}"),
            fields: Vec::new(),
        })
    }
}

pub fn load_dataset(
    root: &Path,
    name: &str,
    target: &str,
    features: &[String],
) -> Result<Dataset, ApiError> {
    check_dataset_name(name)?;
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(ApiError::NotFound(format!("no dataset named {name:?}")));
    }
    Ok(Dataset::load_dir(dir, target, features, AlignPolicy::default())?)
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self, dataset: &str, target: &str) -> Result<(Arc<Session>, Arc<Dataset>), ApiError> {
        let data = load_dataset(&self.root, dataset, target, &default_features())?;
        let session = Session {
            id: Uuid::new_v4(),
            dataset: dataset.to_string(),
            target: target.to_string(),
            revision: 0,
            pivots: None,
            settings: None,
            report: None,
        };
        Ok(self.insert(session, Arc::new(data)))
    }

    fn insert(&self, session: Session, data: Arc<Dataset>) -> (Arc<Session>, Arc<Dataset>) {
        let session = Arc::new(session);
        let slot = Slot {
            current: Mutex::new(session.clone()),
            data: data.clone(),
        };
        self.sessions.write().unwrap().insert(session.id, Arc::new(slot));
        (session, data)
    }

    fn slot(&self, id: Uuid) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    pub fn get(&self, id: Uuid) -> Result<(Arc<Session>, Arc<Dataset>), ApiError> {
        let slot = self.slot(id)?;
        let current = slot.current.lock().unwrap().clone();
        Ok((current, slot.data.clone()))
    }

    /// Applies `change` if the session is still at `expected`, bumping the revision.
    pub fn update(
        &self,
        id: Uuid,
        expected: u64,
        change: impl FnOnce(&mut Session),
    ) -> Result<Arc<Session>, ApiError> {
        let slot = self.slot(id)?;
        let mut guard = slot.current.lock().unwrap();
        if guard.revision != expected {
            return Err(ApiError::Conflict {
                expected,
                current: guard.revision,
            });
        }
        let mut next = Session::clone(&guard);
        change(&mut next);
        next.revision = expected + 1;
        *guard = Arc::new(next);
        Ok(guard.clone())
    }

    pub fn snapshot(&self) -> Snapshot {
        let map = self.sessions.read().unwrap();
        let mut sessions: Vec<Session> = map
            .values()
            .map(|slot| Session::clone(&slot.current.lock().unwrap()))
            .collect();
        sessions.sort_by_key(|s| s.id);
        Snapshot { sessions }
    }

    pub fn restore(&self, snapshot: Snapshot) -> Result<usize, ApiError> {
        let n = snapshot.sessions.len();
        for session in snapshot.sessions {
            let data =
                load_dataset(&self.root, &session.dataset, &session.target, &default_features())?;
            self.insert(session, Arc::new(data));
        }
        Ok(n)
    }
}

pub fn default_features() -> Vec<String> {
    pivotfit_core::DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect()
}
