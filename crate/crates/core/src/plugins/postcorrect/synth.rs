//! Seeded synthetic OCR corpus: pages of text in an invented language over a
//! 40-symbol alphabet, passed through a fixed stochastic corruption channel.
//! Used to exercise the post-corrector end to end without real scans.

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::PagePair;

const CONSONANTS: &[char] = &[
    'b', 'c', 'd', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'p', 'q', 'r', 's', 't', 'v', 'w', 'x', 'y', 'z', 'ñ',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u', 'á', 'é', 'í', 'ó', 'ú', 'ü'];
const PUNCT: &[char] = &['.', ',', ';', '\'', '-', '?'];

/// The 40 symbols page text is drawn from (line breaks aside).
pub fn alphabet() -> Vec<char> {
    let mut a: Vec<char> = CONSONANTS.iter().chain(VOWELS).chain(PUNCT).copied().collect();
    a.push(' ');
    a.sort_unstable();
    a
}

#[derive(Debug, Clone)]
pub struct ChannelSpec {
    /// Expected fraction of all characters that are substituted.
    pub substitution_rate: f64,
    /// (true, observed) confusions; only these substitutions occur.
    pub confusions: Vec<(char, char)>,
    pub deletion_rate: f64,
    pub insertion_rate: f64,
    /// Spurious marks inserted by the channel.
    pub noise: Vec<char>,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            substitution_rate: 0.15,
            confusions: vec![('e', 'c'), ('i', 'l'), ('a', 'o'), ('n', 'h'), ('u', 'v')],
            deletion_rate: 0.03,
            insertion_rate: 0.02,
            noise: vec!['.', ',', '\'', '-', ';'],
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub page_chars: usize,
    pub line_width: usize,
    pub lexicon_size: usize,
    pub channel: ChannelSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            page_chars: 2000,
            line_width: 60,
            lexicon_size: 300,
            channel: ChannelSpec::default(),
        }
    }
}

/// Seeded generator of clean pages and their corrupted OCR counterparts.
pub struct SyntheticCorpus {
    spec: CorpusSpec,
    lexicon: Vec<String>,
    zipf: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticCorpus {
    pub fn new(seed: u64, spec: CorpusSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lexicon: Vec<String> = (0..spec.lexicon_size.max(1)).map(|_| make_word(&mut rng)).collect();
        let weights: Vec<f64> = (1..=lexicon.len()).map(|r| 1.0 / r as f64).collect();
        let zipf = WeightedIndex::new(weights).expect("positive weights");
        Self {
            spec,
            lexicon,
            zipf,
            rng,
        }
    }

    /// One clean page of exactly `page_chars` characters, `\n` included.
    pub fn clean_page(&mut self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut line = String::new();
        let mut total = 0usize;
        let mut sentence_left = 0usize;
        while total < self.spec.page_chars {
            if sentence_left == 0 {
                sentence_left = self.rng.random_range(4..=12);
            }
            let mut word = self.lexicon[self.zipf.sample(&mut self.rng)].clone();
            sentence_left -= 1;
            if sentence_left == 0 {
                word.push(if self.rng.random_bool(0.8) { '.' } else { '?' });
            } else if self.rng.random_bool(0.08) {
                word.push(if self.rng.random_bool(0.7) { ',' } else { ';' });
            }
            let needed = word.chars().count() + usize::from(!line.is_empty());
            if !line.is_empty() && line.chars().count() + needed > self.spec.line_width {
                total += line.chars().count() + 1;
                lines.push(std::mem::take(&mut line));
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&word);
        }
        lines.push(line);
        let page = lines.join("\n");
        let mut out: String = page.chars().take(self.spec.page_chars).collect();
        while out.ends_with('\n') {
            out.pop();
        }
        out
    }

    /// Runs a clean page through the corruption channel. Line breaks are
    /// never corrupted, so line counts match.
    pub fn corrupt(&mut self, page: &str) -> String {
        let ch = &self.spec.channel;
        let text_chars = page.chars().filter(|&c| c != '\n').count();
        let confusable = page
            .chars()
            .filter(|c| ch.confusions.iter().any(|(t, _)| t == c))
            .count();
        let sub_prob = if confusable == 0 {
            0.0
        } else {
            (ch.substitution_rate * text_chars as f64 / confusable as f64).min(1.0)
        };
        let mut out = String::with_capacity(page.len() + 16);
        for c in page.chars() {
            if c == '\n' {
                out.push(c);
                continue;
            }
            if self.rng.random_bool(ch.deletion_rate) {
                continue;
            }
            match ch.confusions.iter().find(|(t, _)| *t == c) {
                Some(&(_, obs)) if self.rng.random_bool(sub_prob) => out.push(obs),
                _ => out.push(c),
            }
            if self.rng.random_bool(ch.insertion_rate) {
                out.push(ch.noise[self.rng.random_range(0..ch.noise.len())]);
            }
        }
        out
    }

    pub fn pair(&mut self) -> PagePair {
        let target = self.clean_page();
        let source = self.corrupt(&target);
        PagePair { source, target }
    }

    pub fn pages(&mut self, n: usize) -> Vec<PagePair> {
        (0..n).map(|_| self.pair()).collect()
    }
}

fn make_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=4);
    let mut w = String::new();
    for s in 0..syllables {
        if s > 0 && rng.random_bool(0.03) {
            w.push(if rng.random_bool(0.5) { '\'' } else { '-' });
        }
        if rng.random_bool(0.85) {
            w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
        }
        let plain = rng.random_bool(0.8);
        let v = if plain { rng.random_range(0..5) } else { rng.random_range(5..VOWELS.len()) };
        w.push(VOWELS[v]);
        if rng.random_bool(0.25) {
            w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
        }
    }
    w
}
