use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Context symbol: `None` is the begin-of-line sentinel.
pub type Ctx = Option<char>;
/// Predicted symbol: `None` is the end-of-line sentinel.
pub type Next = Option<char>;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<Next, u64>,
}

/// Character trigram model over true text with add-α smoothing. Each line is
/// padded with two begin sentinels and closed by one end sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLm {
    contexts: HashMap<(Ctx, Ctx), ContextCounts>,
    vocab: BTreeSet<char>,
    alpha: f64,
}

impl CharLm {
    pub fn new(alpha: f64) -> Self {
        Self {
            contexts: HashMap::new(),
            vocab: BTreeSet::new(),
            alpha,
        }
    }

    pub fn observe_line(&mut self, line: &str) {
        let (mut h1, mut h2): (Ctx, Ctx) = (None, None);
        for c in line.chars() {
            self.add_count((h1, h2), Some(c), 1);
            h1 = h2;
            h2 = Some(c);
        }
        self.add_count((h1, h2), None, 1);
    }

    pub(crate) fn add_count(&mut self, ctx: (Ctx, Ctx), next: Next, n: u64) {
        self.vocab.extend(next);
        let entry = self.contexts.entry(ctx).or_default();
        entry.total += n;
        *entry.next.entry(next).or_default() += n;
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &BTreeSet<char> {
        &self.vocab
    }

    /// Vocabulary size including the end sentinel.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    /// Smoothed `P(next | h1 h2)`. Characters outside the vocabulary get the
    /// zero-count mass, so decoding never sees a zero probability.
    pub fn prob(&self, h1: Ctx, h2: Ctx, next: Next) -> f64 {
        let denom_extra = self.alpha * self.vocab_size() as f64;
        match self.contexts.get(&(h1, h2)) {
            Some(cc) => {
                let c = cc.next.get(&next).copied().unwrap_or(0) as f64;
                (c + self.alpha) / (cc.total as f64 + denom_extra)
            }
            None => self.alpha / denom_extra,
        }
    }

    pub fn log_prob(&self, h1: Ctx, h2: Ctx, next: Next) -> f64 {
        self.prob(h1, h2, next).ln()
    }

    pub fn sorted_counts(&self) -> BTreeMap<(Ctx, Ctx, Next), u64> {
        self.contexts
            .iter()
            .flat_map(|(&(h1, h2), cc)| cc.next.iter().map(move |(&n, &c)| ((h1, h2, n), c)))
            .collect()
    }

    pub fn contexts(&self) -> impl Iterator<Item = (Ctx, Ctx)> + '_ {
        self.contexts.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_distributions_sum_to_one() {
        let mut lm = CharLm::new(0.1);
        for line in ["abc", "abd", "", "ba"] {
            lm.observe_line(line);
        }
        let outcomes: Vec<Next> = lm.vocab().iter().copied().map(Some).chain([None]).collect();
        let mut ctxs: Vec<(Ctx, Ctx)> = lm.contexts().collect();
        ctxs.push((Some('z'), Some('q')));
        for (h1, h2) in ctxs {
            let s: f64 = outcomes.iter().map(|&n| lm.prob(h1, h2, n)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seen_trigram_beats_unseen() {
        let mut lm = CharLm::new(0.1);
        lm.observe_line("ab");
        lm.observe_line("ab");
        assert!(lm.prob(None, Some('a'), Some('b')) > 0.5);
        assert!(lm.prob(None, Some('a'), Some('a')) < 0.1);
        // begin, begin -> a ; begin, a -> b ; a, b -> end
        assert_eq!(lm.sorted_counts().len(), 3);
    }
}
