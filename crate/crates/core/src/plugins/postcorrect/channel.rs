use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::align::EditOp;

/// `None` stands for the empty symbol ε on either side.
pub type Sym = Option<char>;

/// Character confusion counts with add-α smoothing:
/// `P(o|t) = (count[t][o] + α) / (Σ_o' count[t][o'] + α·V)`, `V = |Σ| + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    counts: HashMap<(Sym, Sym), u64>,
    row_totals: HashMap<Sym, u64>,
    alphabet: BTreeSet<char>,
    alpha: f64,
}

impl ChannelModel {
    pub fn new(alpha: f64) -> Self {
        Self {
            counts: HashMap::new(),
            row_totals: HashMap::new(),
            alphabet: BTreeSet::new(),
            alpha,
        }
    }

    pub fn observe(&mut self, op: EditOp) {
        let (t, o) = (op.truth(), op.observed());
        self.add_count(t, o, 1);
    }

    pub(crate) fn add_count(&mut self, t: Sym, o: Sym, n: u64) {
        self.alphabet.extend(t);
        self.alphabet.extend(o);
        *self.counts.entry((t, o)).or_default() += n;
        *self.row_totals.entry(t).or_default() += n;
    }

    pub(crate) fn add_symbol(&mut self, c: char) {
        self.alphabet.insert(c);
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    /// Number of outcomes per row: the alphabet plus ε.
    pub fn outcomes(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn count(&self, t: Sym, o: Sym) -> u64 {
        self.counts.get(&(t, o)).copied().unwrap_or(0)
    }

    pub fn prob(&self, t: Sym, o: Sym) -> f64 {
        let total = self.row_totals.get(&t).copied().unwrap_or(0) as f64;
        (self.count(t, o) as f64 + self.alpha) / (total + self.alpha * self.outcomes() as f64)
    }

    pub fn log_prob(&self, t: Sym, o: Sym) -> f64 {
        self.prob(t, o).ln()
    }

    /// Nonzero counts in a stable order.
    pub fn sorted_counts(&self) -> BTreeMap<(Sym, Sym), u64> {
        self.counts.iter().map(|(k, v)| (*k, *v)).collect()
    }
}
