//! Persistent score cache: an append-only JSONL file with a checksum on
//! every entry.
//!
//! Long evaluation runs must survive interruption, so entries are written
//! one per line as they arrive and the file is never rewritten. An entry
//! whose checksum does not match (torn write, manual edit) is discarded on
//! load and the score is fetched again. Later entries win on duplicate keys.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ContinuationScore};

const CACHE_FILE: &str = "scores.jsonl";

/// Payload of a cache line; `checksum` covers the serialized `CacheKeyed`
/// part so corruption anywhere in the line is detected.
#[derive(Serialize, Deserialize)]
struct CacheEntry {
    #[serde(flatten)]
    keyed: CacheKeyed,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct CacheKeyed {
    key: String,
    tokens: Vec<String>,
    token_logprobs: Vec<f64>,
}

fn checksum_of(keyed: &CacheKeyed) -> String {
    let bytes = serde_json::to_vec(keyed).expect("cache entry serialization cannot fail");
    hex::encode(Sha256::digest(&bytes))
}

/// Stable cache key over (model, context, continuation). Fields are
/// length-prefixed before hashing so no concatenation of different inputs
/// can collide.
pub fn cache_key(model: &str, context: &str, continuation: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [model, context, continuation] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Thread-safe persistent cache of continuation scores.
pub struct ScoreCache {
    path: PathBuf,
    state: Mutex<CacheState>,
    corrupt_discarded: u64,
}

struct CacheState {
    entries: HashMap<String, ContinuationScore>,
    writer: File,
}

impl ScoreCache {
    /// Opens (or creates) the cache under `dir`, validating every stored
    /// entry. Corrupt entries are counted and dropped.
    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        let mut corrupt = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match parse_entry(&line) {
                    Some((key, score)) => {
                        entries.insert(key, score);
                    }
                    None => corrupt += 1,
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            state: Mutex::new(CacheState { entries, writer }),
            corrupt_discarded: corrupt,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of entries dropped at open time because their checksum or
    /// shape was invalid.
    pub fn corrupt_discarded(&self) -> u64 {
        self.corrupt_discarded
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<ContinuationScore> {
        self.state
            .lock()
            .expect("cache lock poisoned")
            .entries
            .get(key)
            .cloned()
    }

    /// Writes the score through to disk and the in-memory map.
    pub fn put(&self, key: &str, score: &ContinuationScore) -> Result<(), BackendError> {
        let keyed = CacheKeyed {
            key: key.to_string(),
            tokens: score.token_strings.clone(),
            token_logprobs: score.token_logprobs.clone(),
        };
        let entry = CacheEntry {
            checksum: checksum_of(&keyed),
            keyed,
        };
        let line = serde_json::to_string(&entry).expect("cache entry serialization cannot fail");
        let mut state = self.state.lock().expect("cache lock poisoned");
        writeln!(state.writer, "{line}")?;
        state.writer.flush()?;
        state.entries.insert(key.to_string(), score.clone());
        Ok(())
    }
}

fn parse_entry(line: &str) -> Option<(String, ContinuationScore)> {
    let entry: CacheEntry = serde_json::from_str(line).ok()?;
    if checksum_of(&entry.keyed) != entry.checksum {
        return None;
    }
    let score = ContinuationScore::from_tokens(entry.keyed.tokens, entry.keyed.token_logprobs).ok()?;
    Some((entry.keyed.key, score))
}
