//! The generated codebase on disk plus its content-addressed snapshot store.
//!
//! A snapshot is a manifest (`path -> sha256`) and a copy of every tracked
//! file under `<store>/<id>/files/`. The id is the sha256 of the canonical
//! manifest JSON, so identical trees share one snapshot. Directories named in
//! the exclusion list (dependency caches) are never tracked: they are left
//! out of manifests and left alone by `restore`.

use crate::actions::{normalize_path, ActionSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const DEFAULT_EXCLUDED_DIRS: &[&str] = &["node_modules", ".npm", ".pnpm-store", ".yarn", ".cache", ".vite"];

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown snapshot `{0}`")]
    UnknownSnapshot(String),
    #[error("corrupt snapshot `{id}`: {reason}")]
    Corrupt { id: String, reason: String },
    #[error("unsafe path `{0}`")]
    UnsafePath(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> WorkspaceError {
    let context = context.into();
    move |source| WorkspaceError::Io { context, source }
}

pub type SnapshotId = String;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// sha256 over the canonical (sorted) JSON form.
    pub fn id(&self) -> SnapshotId {
        let canonical = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: SnapshotId,
    pub manifest: Manifest,
    pub created_at_step: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub created: Vec<String>,
    pub overwritten: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    store: PathBuf,
    excluded: Vec<String>,
}

impl Workspace {
    /// Opens (creating if needed) a workspace rooted at `root` whose
    /// snapshots live under `store`.
    pub fn open(root: impl Into<PathBuf>, store: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        let store = store.into();
        fs::create_dir_all(&root).map_err(io_err(format!("create {}", root.display())))?;
        fs::create_dir_all(&store).map_err(io_err(format!("create {}", store.display())))?;
        Ok(Self {
            root,
            store,
            excluded: DEFAULT_EXCLUDED_DIRS.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn with_excluded_dirs(mut self, dirs: impl IntoIterator<Item = String>) -> Self {
        self.excluded = dirs.into_iter().collect();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> &Path {
        &self.store
    }

    pub fn excluded_dirs(&self) -> &[String] {
        &self.excluded
    }

    fn is_excluded(&self, rel: &Path) -> bool {
        rel.components().any(|c| {
            c.as_os_str()
                .to_str()
                .is_some_and(|s| self.excluded.iter().any(|e| e == s))
        })
    }

    /// Writes every file edit atomically. Shell commands and the GUI-test
    /// trigger are not the workspace's concern.
    pub fn apply(&self, actions: &ActionSet) -> Result<ChangeSummary, WorkspaceError> {
        let mut summary = ChangeSummary::default();
        for edit in &actions.file_edits {
            let rel = normalize_path(&edit.path).map_err(|_| WorkspaceError::UnsafePath(edit.path.clone()))?;
            let target = self.root.join(&rel);
            let existed = target.is_file();
            write_atomic(&target, edit.content.as_bytes())?;
            if existed {
                summary.overwritten.push(rel);
            } else {
                summary.created.push(rel);
            }
        }
        Ok(summary)
    }

    /// Manifest of the tracked files as they are on disk right now.
    pub fn manifest(&self) -> Result<Manifest, WorkspaceError> {
        let mut files = BTreeMap::new();
        for (rel, abs) in self.tracked_files()? {
            let bytes = fs::read(&abs).map_err(io_err(format!("read {}", abs.display())))?;
            files.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
        Ok(Manifest { files })
    }

    /// Content hash of the current tree; equals the id `snapshot` would
    /// assign.
    pub fn content_hash(&self) -> Result<SnapshotId, WorkspaceError> {
        Ok(self.manifest()?.id())
    }

    pub fn snapshot(&self, step: u32) -> Result<Snapshot, WorkspaceError> {
        let manifest = self.manifest()?;
        let id = manifest.id();
        let dir = self.store.join(&id);
        if !dir.join("manifest.json").is_file() {
            let staging = tempfile::Builder::new()
                .prefix(".staging-")
                .tempdir_in(&self.store)
                .map_err(io_err("create staging dir"))?;
            for rel in manifest.files.keys() {
                let from = self.root.join(rel);
                let to = staging.path().join("files").join(rel);
                if let Some(parent) = to.parent() {
                    fs::create_dir_all(parent).map_err(io_err(format!("create {}", parent.display())))?;
                }
                fs::copy(&from, &to).map_err(io_err(format!("copy {}", from.display())))?;
            }
            let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            fs::write(staging.path().join("manifest.json"), json).map_err(io_err("write manifest"))?;
            let staged = staging.keep();
            if let Err(e) = fs::rename(&staged, &dir) {
                // Lost a race with an identical snapshot; theirs is as good.
                let _ = fs::remove_dir_all(&staged);
                if !dir.join("manifest.json").is_file() {
                    return Err(io_err(format!("store snapshot {id}"))(e));
                }
            }
        }
        Ok(Snapshot {
            id,
            manifest,
            created_at_step: step,
        })
    }

    pub fn load_manifest(&self, id: &str) -> Result<Manifest, WorkspaceError> {
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(WorkspaceError::UnknownSnapshot(id.to_string()));
        }
        let path = self.store.join(id).join("manifest.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(WorkspaceError::UnknownSnapshot(id.to_string()))
            }
            Err(e) => return Err(io_err(format!("read {}", path.display()))(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| WorkspaceError::Corrupt {
            id: id.to_string(),
            reason: e.to_string(),
        })
    }

    /// Makes the tracked tree byte-identical to snapshot `id`: files not in
    /// the manifest are removed, the rest rewritten from the store.
    pub fn restore(&self, id: &str) -> Result<(), WorkspaceError> {
        let manifest = self.load_manifest(id)?;
        let files_dir = self.store.join(id).join("files");

        for (rel, abs) in self.tracked_files()? {
            if !manifest.files.contains_key(&rel) {
                fs::remove_file(&abs).map_err(io_err(format!("remove {}", abs.display())))?;
            }
        }
        let current = self.manifest()?;
        for (rel, hash) in &manifest.files {
            if current.files.get(rel) == Some(hash) {
                continue;
            }
            let src = files_dir.join(rel);
            let bytes = fs::read(&src).map_err(|e| WorkspaceError::Corrupt {
                id: id.to_string(),
                reason: format!("missing blob {rel}: {e}"),
            })?;
            let target = self.root.join(rel);
            // A directory may sit where the snapshot has a file.
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(io_err(format!("remove {}", target.display())))?;
            }
            write_atomic(&target, &bytes)?;
        }
        self.prune_empty_dirs(&self.root.clone())?;
        Ok(())
    }

    /// Empties the tracked tree (dependency caches stay).
    pub fn clear(&self) -> Result<(), WorkspaceError> {
        for (_, abs) in self.tracked_files()? {
            fs::remove_file(&abs).map_err(io_err(format!("remove {}", abs.display())))?;
        }
        self.prune_empty_dirs(&self.root.clone())?;
        Ok(())
    }

    fn tracked_files(&self) -> Result<Vec<(String, PathBuf)>, WorkspaceError> {
        let mut out = Vec::new();
        let walker = walkdir::WalkDir::new(&self.root)
            .min_depth(1)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                let rel = e.path().strip_prefix(&self.root).unwrap_or(e.path());
                !(e.file_type().is_dir() && self.is_excluded(rel))
            });
        for entry in walker {
            let entry = entry.map_err(|e| WorkspaceError::Io {
                context: "walk workspace".into(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root");
            if self.is_excluded(rel) {
                continue;
            }
            let rel_str = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push((rel_str, entry.path().to_path_buf()));
        }
        Ok(out)
    }

    fn prune_empty_dirs(&self, dir: &Path) -> Result<bool, WorkspaceError> {
        let mut empty = true;
        let entries = fs::read_dir(dir).map_err(io_err(format!("read {}", dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(io_err("read dir entry"))?;
            let path = entry.path();
            let rel = path.strip_prefix(&self.root).unwrap_or(&path);
            if entry.file_type().map(|t| t.is_dir()).unwrap_or(false)
                && !self.is_excluded(rel)
                && self.prune_empty_dirs(&path)?
            {
                fs::remove_dir(&path).map_err(io_err(format!("remove {}", path.display())))?;
                continue;
            }
            empty = false;
        }
        Ok(empty && dir != self.root)
    }
}

/// temp file in the target directory, then rename over the target.
pub fn write_atomic(target: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    let parent = target.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(format!("create {}", parent.display())))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(parent).map_err(io_err(format!("temp file in {}", parent.display())))?;
    tmp.write_all(bytes).map_err(io_err("write temp file"))?;
    tmp.persist(target)
        .map_err(|e| io_err(format!("rename onto {}", target.display()))(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::FileEdit;

    fn ws() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path().join("code"), dir.path().join("snapshots")).unwrap();
        (dir, ws)
    }

    fn edit(path: &str, content: &str) -> ActionSet {
        ActionSet {
            file_edits: vec![FileEdit {
                path: path.into(),
                content: content.into(),
            }],
            ..Default::default()
        }
    }

    #[test]
    fn apply_writes_exact_content() {
        let (_d, ws) = ws();
        let summary = ws.apply(&edit("src/main.js", "console.log(1)")).unwrap();
        assert_eq!(summary.created, vec!["src/main.js"]);
        assert_eq!(
            fs::read_to_string(ws.root().join("src/main.js")).unwrap(),
            "console.log(1)"
        );
        let summary = ws.apply(&edit("src/main.js", "console.log(2)")).unwrap();
        assert_eq!(summary.overwritten, vec!["src/main.js"]);
    }

    #[test]
    fn apply_is_idempotent() {
        let (_d, ws) = ws();
        let set = edit("index.html", "<p>x</p>");
        ws.apply(&set).unwrap();
        let first = ws.content_hash().unwrap();
        ws.apply(&set).unwrap();
        assert_eq!(first, ws.content_hash().unwrap());
    }

    #[test]
    fn overwrite_changes_only_that_path() {
        let (_d, ws) = ws();
        ws.apply(&edit("a.txt", "a")).unwrap();
        ws.apply(&edit("b.txt", "b")).unwrap();
        let before = ws.manifest().unwrap();
        ws.apply(&edit("b.txt", "bb")).unwrap();
        let after = ws.manifest().unwrap();
        let changed: Vec<_> = after
            .files
            .iter()
            .filter(|(k, v)| before.files.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        assert_eq!(changed, vec!["b.txt"]);
        assert_eq!(before.files.len(), after.files.len());
    }

    #[test]
    fn restore_removes_untracked_and_keeps_caches() {
        let (_d, ws) = ws();
        ws.apply(&edit("index.html", "v1")).unwrap();
        let snap = ws.snapshot(1).unwrap();
        ws.apply(&edit("index.html", "v2")).unwrap();
        ws.apply(&edit("extra/new.js", "x")).unwrap();
        fs::create_dir_all(ws.root().join("node_modules/pkg")).unwrap();
        fs::write(ws.root().join("node_modules/pkg/index.js"), "cache").unwrap();

        ws.restore(&snap.id).unwrap();
        assert_eq!(ws.content_hash().unwrap(), snap.id);
        assert!(!ws.root().join("extra").exists());
        assert!(ws.root().join("node_modules/pkg/index.js").exists());
        assert!(!ws.manifest().unwrap().files.keys().any(|k| k.contains("node_modules")));
    }

    #[test]
    fn unknown_snapshot() {
        let (_d, ws) = ws();
        assert!(matches!(
            ws.restore("deadbeef"),
            Err(WorkspaceError::UnknownSnapshot(_))
        ));
        assert!(matches!(ws.restore("../x"), Err(WorkspaceError::UnknownSnapshot(_))));
    }

    #[test]
    fn empty_tree_snapshot_and_clear() {
        let (_d, ws) = ws();
        let empty = ws.snapshot(0).unwrap();
        ws.apply(&edit("a/b/c.txt", "x")).unwrap();
        ws.clear().unwrap();
        assert_eq!(ws.content_hash().unwrap(), empty.id);
        assert!(!ws.root().join("a").exists());
    }

    #[test]
    fn file_replaced_by_directory_and_back() {
        let (_d, ws) = ws();
        ws.apply(&edit("x", "file")).unwrap();
        let s1 = ws.snapshot(1).unwrap();
        fs::remove_file(ws.root().join("x")).unwrap();
        ws.apply(&edit("x/y", "nested")).unwrap();
        let s2 = ws.snapshot(2).unwrap();
        ws.restore(&s1.id).unwrap();
        assert_eq!(ws.content_hash().unwrap(), s1.id);
        ws.restore(&s2.id).unwrap();
        assert_eq!(ws.content_hash().unwrap(), s2.id);
    }
}
