//! Advisory file locks keyed by workspace-relative path.
//!
//! Two agents editing one file in the same run is how silent clobbering
//! happens, so the orchestrator takes a lock before any write on an agent's
//! behalf and releases the agent's locks when its step ends. The table is
//! advisory — the sandbox will happily write unlocked files — but the
//! orchestrator refuses to, and every acquire/release lands in the
//! transcript where the pairing can be audited.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LockError {
    #[error("lock on {path} is held by {holder}")]
    Conflict { path: String, holder: String },
    #[error("agent {agent} does not hold the lock on {path}")]
    NotHeld { agent: String, path: String },
}

#[derive(Debug, Default)]
pub struct FileLockTable {
    held: Mutex<BTreeMap<PathBuf, String>>,
}

impl FileLockTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Take the lock for `agent`. Re-acquiring a lock you already hold is a
    /// no-op; a lock held by anyone else is a conflict naming the holder.
    pub fn acquire(&self, path: &Path, agent: &str) -> Result<(), LockError> {
        let mut held = self.held.lock().expect("lock table poisoned");
        match held.get(path) {
            Some(holder) if holder == agent => Ok(()),
            Some(holder) => Err(LockError::Conflict {
                path: path.display().to_string(),
                holder: holder.clone(),
            }),
            None => {
                held.insert(path.to_path_buf(), agent.to_string());
                Ok(())
            }
        }
    }

    pub fn release(&self, path: &Path, agent: &str) -> Result<(), LockError> {
        let mut held = self.held.lock().expect("lock table poisoned");
        match held.get(path) {
            Some(holder) if holder == agent => {
                held.remove(path);
                Ok(())
            }
            _ => Err(LockError::NotHeld {
                agent: agent.to_string(),
                path: path.display().to_string(),
            }),
        }
    }

    /// Drop every lock `agent` holds; returns the paths in sorted order so
    /// release events are deterministic.
    pub fn release_all(&self, agent: &str) -> Vec<PathBuf> {
        let mut held = self.held.lock().expect("lock table poisoned");
        let released: Vec<PathBuf> =
            held.iter().filter(|(_, h)| h.as_str() == agent).map(|(p, _)| p.clone()).collect();
        for path in &released {
            held.remove(path);
        }
        released
    }

    pub fn holder(&self, path: &Path) -> Option<String> {
        self.held.lock().expect("lock table poisoned").get(path).cloned()
    }

    /// Err unless `agent` holds the lock — the check the orchestrator makes
    /// before any write.
    pub fn assert_holder(&self, path: &Path, agent: &str) -> Result<(), LockError> {
        match self.holder(path) {
            Some(holder) if holder == agent => Ok(()),
            _ => Err(LockError::NotHeld {
                agent: agent.to_string(),
                path: path.display().to_string(),
            }),
        }
    }

    pub fn held_paths(&self) -> Vec<(PathBuf, String)> {
        self.held
            .lock()
            .expect("lock table poisoned")
            .iter()
            .map(|(p, h)| (p.clone(), h.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn acquire_is_exclusive_and_reentrant() {
        let table = FileLockTable::new();
        let path = Path::new("src/app.ts");
        table.acquire(path, "frontend").unwrap();
        table.acquire(path, "frontend").unwrap();
        let err = table.acquire(path, "backend").unwrap_err();
        assert_eq!(
            err,
            LockError::Conflict { path: "src/app.ts".into(), holder: "frontend".into() }
        );
        assert_eq!(table.holder(path).as_deref(), Some("frontend"));
    }

    #[test]
    fn release_requires_holding() {
        let table = FileLockTable::new();
        let path = Path::new("a.rs");
        assert!(matches!(table.release(path, "x"), Err(LockError::NotHeld { .. })));
        table.acquire(path, "x").unwrap();
        assert!(matches!(table.release(path, "y"), Err(LockError::NotHeld { .. })));
        table.release(path, "x").unwrap();
        assert_eq!(table.holder(path), None);
        // now free for someone else
        table.acquire(path, "y").unwrap();
    }

    #[test]
    fn release_all_returns_sorted_paths() {
        let table = FileLockTable::new();
        for p in ["z.rs", "a.rs", "m.rs"] {
            table.acquire(Path::new(p), "agent").unwrap();
        }
        table.acquire(Path::new("other.rs"), "someone-else").unwrap();
        let released = table.release_all("agent");
        let names: Vec<&str> = released.iter().map(|p| p.to_str().unwrap()).collect();
        assert_eq!(names, vec!["a.rs", "m.rs", "z.rs"]);
        assert_eq!(table.holder(Path::new("other.rs")).as_deref(), Some("someone-else"));
        assert!(table.release_all("agent").is_empty());
    }

    #[test]
    fn assert_holder_gates_writes() {
        let table = FileLockTable::new();
        let path = Path::new("guarded.rs");
        assert!(table.assert_holder(path, "a").is_err());
        table.acquire(path, "a").unwrap();
        table.assert_holder(path, "a").unwrap();
        assert!(table.assert_holder(path, "b").is_err());
    }

    #[test]
    fn concurrent_acquires_have_exactly_one_winner() {
        let table = Arc::new(FileLockTable::new());
        let mut handles = Vec::new();
        for i in 0..16 {
            let table = Arc::clone(&table);
            handles.push(std::thread::spawn(move || {
                table.acquire(Path::new("contested.rs"), &format!("agent-{i}")).is_ok()
            }));
        }
        let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|&won| won).count();
        assert_eq!(wins, 1);
        assert!(table.holder(Path::new("contested.rs")).is_some());
    }

    proptest! {
        #[test]
        fn table_matches_reference_model(
            ops in proptest::collection::vec(
                (0usize..4, 0usize..3, 0usize..3),
                0..60,
            ),
        ) {
            let paths = [PathBuf::from("a"), PathBuf::from("b"), PathBuf::from("c")];
            let agents = ["x", "y", "z"];
            let table = FileLockTable::new();
            let mut model: BTreeMap<PathBuf, String> = BTreeMap::new();
            for (op, pi, ai) in ops {
                let path = &paths[pi];
                let agent = agents[ai];
                match op {
                    0 => {
                        let expect = match model.get(path) {
                            Some(h) if h == agent => Ok(()),
                            Some(h) => Err(LockError::Conflict {
                                path: path.display().to_string(),
                                holder: h.clone(),
                            }),
                            None => {
                                model.insert(path.clone(), agent.to_string());
                                Ok(())
                            }
                        };
                        prop_assert_eq!(table.acquire(path, agent), expect);
                    }
                    1 => {
                        let expect = match model.get(path) {
                            Some(h) if h == agent => {
                                model.remove(path);
                                Ok(())
                            }
                            _ => Err(LockError::NotHeld {
                                agent: agent.to_string(),
                                path: path.display().to_string(),
                            }),
                        };
                        prop_assert_eq!(table.release(path, agent), expect);
                    }
                    2 => {
                        let expected: Vec<PathBuf> = model
                            .iter()
                            .filter(|(_, h)| h.as_str() == agent)
                            .map(|(p, _)| p.clone())
                            .collect();
                        model.retain(|_, h| h.as_str() != agent);
                        prop_assert_eq!(table.release_all(agent), expected);
                    }
                    _ => {
                        prop_assert_eq!(table.holder(path), model.get(path).cloned());
                    }
                }
            }
            let held: BTreeMap<PathBuf, String> = table.held_paths().into_iter().collect();
            prop_assert_eq!(held, model);
        }
    }
}
