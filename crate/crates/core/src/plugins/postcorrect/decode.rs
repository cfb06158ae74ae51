use std::cmp::Ordering;
use std::collections::HashMap;

use super::lm::Ctx;
use super::model::PostCorrectorModel;

/// Transition scores. The decoder maximizes the sum of these along a
/// monotone edit path; they are public so the search can be checked against
/// independent enumeration.
impl PostCorrectorModel {
    /// Observed char `observed` read as true char `truth` (copy when equal).
    pub fn emit_score(&self, observed: char, truth: char, h1: Ctx, h2: Ctx) -> f64 {
        self.channel.log_prob(Some(truth), Some(observed))
            + self.config.lm_weight * self.lm.log_prob(h1, h2, Some(truth))
    }

    /// Observed char dropped as spurious.
    pub fn skip_score(&self, observed: char) -> f64 {
        self.channel.log_prob(None, Some(observed))
    }

    /// True char restored with no observed counterpart.
    pub fn insert_score(&self, truth: char, h1: Ctx, h2: Ctx) -> f64 {
        self.channel.log_prob(Some(truth), None) + self.config.lm_weight * self.lm.log_prob(h1, h2, Some(truth))
    }

    pub fn end_score(&self, h1: Ctx, h2: Ctx) -> f64 {
        self.config.lm_weight * self.lm.log_prob(h1, h2, None)
    }

    /// True-char readings of `observed`: the identity first, then inventory substitutions.
    pub fn candidates(&self, observed: char) -> impl Iterator<Item = char> + '_ {
        std::iter::once(observed).chain(
            self.inventory
                .substitutions
                .get(&observed)
                .into_iter()
                .flatten()
                .copied()
                .filter(move |&t| t != observed),
        )
    }

    pub fn can_skip(&self, observed: char) -> bool {
        self.inventory.skips.contains(&observed)
    }

    pub fn insertable(&self) -> &[char] {
        &self.inventory.insertions
    }

    /// Corrects one line with the model's configured beam width.
    pub fn decode(&self, line: &str) -> String {
        self.decode_with_beam(line, self.config.beam)
    }

    /// Corrects each `\n`-separated line independently.
    pub fn correct_page(&self, page: &str) -> String {
        page.split('\n').map(|l| self.decode(l)).collect::<Vec<_>>().join("\n")
    }

    /// Beam search over edit paths. Per observed character a hypothesis may
    /// first restore one true character, then must copy, substitute or skip
    /// the observed one. Hypotheses are merged on (position, last two output
    /// characters) and the top `beam` survive each step; equal scores prefer
    /// the lexicographically smaller output.
    pub fn decode_with_beam(&self, line: &str, beam: usize) -> String {
        let beam = beam.max(1);
        let obs: Vec<char> = line.chars().collect();
        let mut arena = Arena::default();
        let mut current = vec![Hyp {
            score: 0.0,
            h1: None,
            h2: None,
            node: ROOT,
        }];

        for pos in 0..=obs.len() {
            let mut pool = Layer::default();
            for &hyp in &current {
                pool.offer(hyp, &arena);
            }
            for &hyp in &current {
                for &t in self.insertable() {
                    let next = hyp.emit(t, self.insert_score(t, hyp.h1, hyp.h2), &mut arena);
                    pool.offer(next, &arena);
                }
            }
            let pool = pool.prune(beam, &arena);

            let Some(&o) = obs.get(pos) else {
                let best = pool
                    .into_iter()
                    .map(|h| Hyp {
                        score: h.score + self.end_score(h.h1, h.h2),
                        ..h
                    })
                    .min_by(|a, b| rank(a, b, &arena))
                    .expect("beam is never empty");
                return arena.output(best.node);
            };

            let mut next_layer = Layer::default();
            for &hyp in &pool {
                for t in self.candidates(o) {
                    let next = hyp.emit(t, self.emit_score(o, t, hyp.h1, hyp.h2), &mut arena);
                    next_layer.offer(next, &arena);
                }
                if self.can_skip(o) {
                    next_layer.offer(
                        Hyp {
                            score: hyp.score + self.skip_score(o),
                            ..hyp
                        },
                        &arena,
                    );
                }
            }
            current = next_layer.prune(beam, &arena);
        }
        unreachable!("loop returns at the final position")
    }
}

const ROOT: u32 = 0;

#[derive(Debug, Clone, Copy)]
struct Hyp {
    score: f64,
    h1: Ctx,
    h2: Ctx,
    node: u32,
}

impl Hyp {
    fn emit(self, c: char, step: f64, arena: &mut Arena) -> Hyp {
        Hyp {
            score: self.score + step,
            h1: self.h2,
            h2: Some(c),
            node: arena.push(self.node, c),
        }
    }
}

/// Output characters stored as parent-linked nodes; node 0 is the empty output.
struct Arena {
    nodes: Vec<(u32, char)>,
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            nodes: vec![(ROOT, '\0')],
        }
    }
}

impl Arena {
    fn push(&mut self, parent: u32, c: char) -> u32 {
        self.nodes.push((parent, c));
        (self.nodes.len() - 1) as u32
    }

    fn output(&self, mut node: u32) -> String {
        let mut chars = Vec::new();
        while node != ROOT {
            let (parent, c) = self.nodes[node as usize];
            chars.push(c);
            node = parent;
        }
        chars.iter().rev().collect()
    }
}

/// Better hypotheses order first.
fn rank(a: &Hyp, b: &Hyp, arena: &Arena) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| if a.node == b.node { Ordering::Equal } else { arena.output(a.node).cmp(&arena.output(b.node)) })
}

#[derive(Default)]
struct Layer {
    hyps: Vec<Hyp>,
    index: HashMap<(Ctx, Ctx), usize>,
}

impl Layer {
    fn offer(&mut self, hyp: Hyp, arena: &Arena) {
        match self.index.get(&(hyp.h1, hyp.h2)) {
            Some(&i) => {
                if rank(&hyp, &self.hyps[i], arena) == Ordering::Less {
                    self.hyps[i] = hyp;
                }
            }
            None => {
                self.index.insert((hyp.h1, hyp.h2), self.hyps.len());
                self.hyps.push(hyp);
            }
        }
    }

    fn prune(mut self, beam: usize, arena: &Arena) -> Vec<Hyp> {
        self.hyps.sort_by(|a, b| rank(a, b, arena));
        self.hyps.truncate(beam);
        self.hyps
    }
}
