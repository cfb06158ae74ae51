use serde::{Deserialize, Serialize};

/// One step of an alignment between an observed (OCR) string and its true text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Copy(char),
    Substitute { truth: char, observed: char },
    /// A true character that produced nothing in the OCR output.
    DeleteTrue(char),
    /// A spurious OCR character with no true counterpart.
    InsertObs(char),
}

impl EditOp {
    pub fn cost(self) -> usize {
        usize::from(!matches!(self, EditOp::Copy(_)))
    }

    pub fn truth(self) -> Option<char> {
        match self {
            EditOp::Copy(c) | EditOp::DeleteTrue(c) => Some(c),
            EditOp::Substitute { truth, .. } => Some(truth),
            EditOp::InsertObs(_) => None,
        }
    }

    pub fn observed(self) -> Option<char> {
        match self {
            EditOp::Copy(c) | EditOp::InsertObs(c) => Some(c),
            EditOp::Substitute { observed, .. } => Some(observed),
            EditOp::DeleteTrue(_) => None,
        }
    }
}

/// Minimal unit-cost edit script turning `truth` into `obs`.
///
/// The backtrace runs from the end of both strings; at every cell it takes the
/// first optimal move in the order copy, substitute, delete_true, insert_obs,
/// which makes the script unique for a given input pair.
pub fn align(obs: &str, truth: &str) -> Vec<EditOp> {
    let o: Vec<char> = obs.chars().collect();
    let t: Vec<char> = truth.chars().collect();
    let (n, m) = (o.len(), t.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(o[i - 1] != t[j - 1]);
            let del = d[i * w + j - 1] + 1;
            let ins = d[(i - 1) * w + j] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && o[i - 1] == t[j - 1] && d[(i - 1) * w + j - 1] == here {
            ops.push(EditOp::Copy(t[j - 1]));
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && o[i - 1] != t[j - 1] && d[(i - 1) * w + j - 1] + 1 == here {
            ops.push(EditOp::Substitute {
                truth: t[j - 1],
                observed: o[i - 1],
            });
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i * w + j - 1] + 1 == here {
            ops.push(EditOp::DeleteTrue(t[j - 1]));
            j -= 1;
        } else {
            ops.push(EditOp::InsertObs(o[i - 1]));
            i -= 1;
        }
    }
    ops.reverse();
    ops
}
