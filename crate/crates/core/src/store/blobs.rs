use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::StoreError;
use crate::domain::BlobRef;

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn path_for(dir: &Path, blob_id: &str) -> Option<PathBuf> {
    let valid = blob_id.len() == 64 && blob_id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
    valid.then(|| dir.join(&blob_id[..2]).join(blob_id))
}

pub(super) fn put(dir: &Path, bytes: &[u8], fsync: bool) -> Result<BlobRef, StoreError> {
    let blob_id = digest(bytes);
    let path = path_for(dir, &blob_id).expect("sha256 hex is a valid id");
    let blob = BlobRef {
        blob_id: blob_id.clone(),
        size: bytes.len() as u64,
    };
    if let Ok(existing) = std::fs::read(&path) {
        if existing == bytes {
            return Ok(blob);
        }
        if digest(&existing) == blob_id {
            return Err(StoreError::Collision(blob_id));
        }
        // the stored copy is damaged; replace it
        tracing::warn!(blob_id, "replacing corrupted blob");
    }
    std::fs::create_dir_all(path.parent().expect("blob path has a parent"))?;
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::now_v7().simple()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        if fsync {
            f.sync_all()?;
        }
    }
    std::fs::rename(&tmp, &path)?;
    Ok(blob)
}

pub(super) fn get(dir: &Path, blob_id: &str) -> Result<Vec<u8>, StoreError> {
    let path = path_for(dir, blob_id).ok_or_else(|| StoreError::BlobNotFound(blob_id.to_owned()))?;
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::BlobNotFound(blob_id.to_owned())),
        Err(e) => return Err(e.into()),
    };
    if digest(&bytes) != blob_id {
        return Err(StoreError::Corrupted(blob_id.to_owned()));
    }
    Ok(bytes)
}

pub(super) fn delete(dir: &Path, blob_id: &str) -> Result<(), StoreError> {
    let Some(path) = path_for(dir, blob_id) else {
        return Ok(());
    };
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}

pub(super) fn list(dir: &Path) -> Result<BTreeSet<String>, StoreError> {
    let mut out = BTreeSet::new();
    for shard in std::fs::read_dir(dir)? {
        let shard = shard?;
        if !shard.file_type()?.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(shard.path())? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if path_for(dir, &name).is_some() {
                out.insert(name);
            }
        }
    }
    Ok(out)
}
