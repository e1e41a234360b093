use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResponse};

/// Digest metadata kept next to a recorded response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDigest {
    pub model_id: String,
    pub system_sha256: String,
    pub user_sha256: String,
    pub system_chars: usize,
    pub user_chars: usize,
}

/// One file per request hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub hash: String,
    pub request: RequestDigest,
    pub response: CompletionResponse,
}

/// Directory of `<hash>.json` fixtures. Reads are concurrent; writes are
/// serialized and atomic (temp file + rename).
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

fn sha(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, String> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(FixtureStore {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<Fixture>, String> {
        let path = self.path(hash);
        match fs::read_to_string(&path) {
            Ok(raw) => serde_json::from_str(&raw)
                .map(Some)
                .map_err(|e| format!("{}: {e}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(format!("{}: {e}", path.display())),
        }
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.path(hash).is_file()
    }

    pub fn put(&self, request: &CompletionRequest, response: &CompletionResponse) -> Result<String, String> {
        let hash = request.hash();
        let fixture = Fixture {
            hash: hash.clone(),
            request: RequestDigest {
                model_id: request.model.model_id.clone(),
                system_sha256: sha(&request.system_text),
                user_sha256: sha(&request.user_text),
                system_chars: request.system_text.chars().count(),
                user_chars: request.user_text.chars().count(),
            },
            response: response.clone(),
        };
        let body = serde_json::to_string_pretty(&fixture).map_err(|e| e.to_string())?;
        let _guard = self.write_lock.lock().expect("fixture store lock poisoned");
        let path = self.path(&hash);
        let tmp = self.dir.join(format!(".{hash}.tmp"));
        fs::write(&tmp, body + "\n").map_err(|e| format!("{}: {e}", tmp.display()))?;
        fs::rename(&tmp, &path).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(hash)
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
