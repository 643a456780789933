use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub created_at: SystemTime,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    response: String,
}

/// Append-only response cache backed by newline-delimited JSON.
///
/// Opening a cache compacts the file: duplicate keys collapse to their last
/// record and the survivors are rewritten in key order.
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<File>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut latest: BTreeMap<String, String> = BTreeMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        latest.insert(r.key, r.response);
                    }
                    // a torn final write is dropped at compaction
                    Err(e) => log::warn!("skipping cache line {}: {e}", n + 1),
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut buf = Vec::new();
        for (key, response) in &latest {
            serde_json::to_writer(
                &mut buf,
                &CacheRecord {
                    key: key.clone(),
                    response: response.clone(),
                },
            )?;
            buf.push(b'\n');
        }
        fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

        let now = SystemTime::now();
        let entries = latest
            .into_iter()
            .map(|(key, response)| {
                (
                    key.clone(),
                    CacheEntry {
                        key,
                        response,
                        created_at: now,
                    },
                )
            })
            .collect();
        let writer = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().get(key).map(|e| e.response.clone())
    }

    pub fn put(&self, key: &str, response: &str) -> Result<()> {
        let mut line = serde_json::to_vec(&CacheRecord {
            key: key.to_string(),
            response: response.to_string(),
        })?;
        line.push(b'\n');
        {
            let mut w = self.writer.lock();
            w.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
            w.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        self.entries.write().insert(
            key.to_string(),
            CacheEntry {
                key: key.to_string(),
                response: response.to_string(),
                created_at: SystemTime::now(),
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
