use std::fs::OpenOptions;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::StoreError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRead {
    pub payload: Vec<u8>,
    pub next_offset: u64,
    pub finished: bool,
}

fn path_for(dir: &Path, job_id: &str) -> PathBuf {
    // job ids are generated server-side; keep the file name safe regardless
    let safe: String = job_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.log"))
}

pub(super) fn len(dir: &Path, job_id: &str) -> Result<u64, StoreError> {
    match std::fs::metadata(path_for(dir, job_id)) {
        Ok(m) => Ok(m.len()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(e.into()),
    }
}

pub(super) fn append(dir: &Path, job_id: &str, offset: u64, payload: &[u8]) -> Result<u64, StoreError> {
    let current = len(dir, job_id)?;
    if offset != current {
        return Err(StoreError::LogGap {
            job_id: job_id.to_owned(),
            expected: current,
            got: offset,
        });
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path_for(dir, job_id))?;
    f.write_all(payload)?;
    Ok(current + payload.len() as u64)
}

pub(super) fn read(dir: &Path, job_id: &str, offset: u64) -> Result<(Vec<u8>, u64), StoreError> {
    let mut f = match std::fs::File::open(path_for(dir, job_id)) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), offset)),
        Err(e) => return Err(e.into()),
    };
    let end = f.metadata()?.len();
    if offset >= end {
        return Ok((Vec::new(), offset));
    }
    f.seek(SeekFrom::Start(offset))?;
    let mut buf = Vec::with_capacity((end - offset) as usize);
    f.take(end - offset).read_to_end(&mut buf)?;
    let next = offset + buf.len() as u64;
    Ok((buf, next))
}

pub(super) fn delete(dir: &Path, job_id: &str) -> Result<(), StoreError> {
    match std::fs::remove_file(path_for(dir, job_id)) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}
