use serde::{Deserialize, Serialize};

use super::JobId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogChunk {
    pub job_id: JobId,
    pub offset: u64,
    pub payload: Vec<u8>,
}

impl LogChunk {
    pub fn end(&self) -> u64 {
        self.offset + self.payload.len() as u64
    }
}
