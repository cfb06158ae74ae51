use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CerError {
    #[error("reference is empty but hypothesis has {0} characters")]
    EmptyReference(usize),
}

/// Character-level Levenshtein distance (unit costs, Unicode scalar values).
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate of `hyp` against `reference`. May exceed 1.
pub fn cer(hyp: &str, reference: &str) -> Result<f64, CerError> {
    let ref_len = reference.chars().count();
    if ref_len == 0 {
        let hyp_len = hyp.chars().count();
        return if hyp_len == 0 {
            Ok(0.0)
        } else {
            Err(CerError::EmptyReference(hyp_len))
        };
    }
    Ok(edit_distance(hyp, reference) as f64 / ref_len as f64)
}

/// Accumulates Σ distances / Σ reference lengths over many pages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MicroCer {
    pub errors: usize,
    pub ref_chars: usize,
}

impl MicroCer {
    pub fn add(&mut self, hyp: &str, reference: &str) {
        self.errors += edit_distance(hyp, reference);
        self.ref_chars += reference.chars().count();
    }

    pub fn value(&self) -> Result<f64, CerError> {
        if self.ref_chars == 0 {
            return if self.errors == 0 {
                Ok(0.0)
            } else {
                Err(CerError::EmptyReference(self.errors))
            };
        }
        Ok(self.errors as f64 / self.ref_chars as f64)
    }
}
