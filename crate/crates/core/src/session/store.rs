use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::Session;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("session {id} is unreadable: {detail}")]
    Corrupt { id: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sessions persisted as one JSON file each. Writes go through a temporary
/// file and a rename, and each session has its own lock.
pub struct SessionStore {
    dir: PathBuf,
    next: AtomicU64,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl SessionStore {
    /// Opens (creating if needed) a store rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let store = Self { dir, next: AtomicU64::new(1), locks: Mutex::new(HashMap::new()) };
        let max = store.list()?.iter().filter_map(|id| id.strip_prefix('s')?.parse::<u64>().ok()).max().unwrap_or(0);
        store.next.store(max + 1, Ordering::SeqCst);
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// A new id not yet used by this store.
    pub fn fresh_id(&self) -> String {
        loop {
            let id = format!("s{:06}", self.next.fetch_add(1, Ordering::SeqCst));
            if !self.path(&id).exists() {
                return id;
            }
        }
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.path(id).exists()
    }

    pub fn load(&self, id: &str) -> Result<Session, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        let bytes = match fs::read(self.path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt { id: id.to_string(), detail: e.to_string() })
    }

    fn write(&self, s: &Session) -> Result<(), StoreError> {
        if !valid_id(&s.id) {
            return Err(StoreError::InvalidId(s.id.clone()));
        }
        let bytes = serde_json::to_vec_pretty(s)
            .map_err(|e| StoreError::Corrupt { id: s.id.clone(), detail: e.to_string() })?;
        let tmp = self.dir.join(format!(".{}.tmp", s.id));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path(&s.id))?;
        Ok(())
    }

    pub fn save(&self, s: &Session) -> Result<(), StoreError> {
        let lock = self.lock_for(&s.id);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.write(s)
    }

    /// Loads, mutates and saves a session under its lock. The file is only
    /// rewritten when `f` succeeds.
    pub fn update<T, E>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, E>,
    ) -> Result<Result<T, E>, StoreError> {
        let lock = self.lock_for(id);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut s = self.load(id)?;
        match f(&mut s) {
            Ok(v) => {
                self.write(&s)?;
                Ok(Ok(v))
            }
            Err(e) => Ok(Err(e)),
        }
    }

    /// Stored session ids in sorted order.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".json") {
                if valid_id(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
