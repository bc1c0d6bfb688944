//! Seeded synthetic coding corpus with planted evidence phrases.
//!
//! Every code owns a short evidence phrase. A document carrying the code contains
//! that phrase verbatim somewhere in its text, either in the primary note or in the
//! trailing "extra notes" section. The reduced variant of a document keeps only the
//! primary note. Code frequencies follow a Zipf law and the number of codes per
//! document grows with document length according to `coupling`.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hierarchy, LabelGroup, LabelSpace, RawDocument};
use crate::error::{Error, Result};
use crate::util::KvConfig;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const EVIDENCE_SUFFIXES: &[&str] = &["itis", "osis", "oid", "ism", "ectal", "ular"];
const GENERIC_WORDS: &[&str] = &[
    "acute",
    "chronic",
    "disorder",
    "unspecified",
    "of",
    "with",
    "procedure",
    "syndrome",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_codes: usize,
    pub zipf_exponent: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub background_vocab: usize,
    pub phrase_len_min: usize,
    pub phrase_len_max: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Mean number of codes for a document of median length.
    pub mean_codes: f64,
    pub max_codes: usize,
    /// In `[0, 1]`; 0 makes cardinality independent of length.
    pub coupling: f64,
    /// Share of each document's tokens that belong to the extra-notes section.
    pub extra_notes_fraction: f64,
    /// Probability that an evidence phrase lands in the primary note.
    pub primary_evidence_prob: f64,
    /// The last `rare_codes` codes get between 1 and `rare_max_train` training documents.
    pub rare_codes: usize,
    pub rare_max_train: usize,
    /// Dev and test documents per rare code.
    pub rare_eval_docs: usize,
    /// Probability of emitting a numeric token after a background token.
    pub digit_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_codes: 20,
            zipf_exponent: 1.0,
            n_train: 500,
            n_dev: 100,
            n_test: 100,
            background_vocab: 400,
            phrase_len_min: 2,
            phrase_len_max: 4,
            doc_len_min: 60,
            doc_len_max: 160,
            mean_codes: 3.0,
            max_codes: 6,
            coupling: 0.8,
            extra_notes_fraction: 0.3,
            primary_evidence_prob: 0.75,
            rare_codes: 0,
            rare_max_train: 3,
            rare_eval_docs: 4,
            digit_noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            n_codes: kv.take("n_codes", d.n_codes)?,
            zipf_exponent: kv.take("zipf_exponent", d.zipf_exponent)?,
            n_train: kv.take("n_train", d.n_train)?,
            n_dev: kv.take("n_dev", d.n_dev)?,
            n_test: kv.take("n_test", d.n_test)?,
            background_vocab: kv.take("background_vocab", d.background_vocab)?,
            phrase_len_min: kv.take("phrase_len_min", d.phrase_len_min)?,
            phrase_len_max: kv.take("phrase_len_max", d.phrase_len_max)?,
            doc_len_min: kv.take("doc_len_min", d.doc_len_min)?,
            doc_len_max: kv.take("doc_len_max", d.doc_len_max)?,
            mean_codes: kv.take("mean_codes", d.mean_codes)?,
            max_codes: kv.take("max_codes", d.max_codes)?,
            coupling: kv.take("coupling", d.coupling)?,
            extra_notes_fraction: kv.take("extra_notes_fraction", d.extra_notes_fraction)?,
            primary_evidence_prob: kv.take("primary_evidence_prob", d.primary_evidence_prob)?,
            rare_codes: kv.take("rare_codes", d.rare_codes)?,
            rare_max_train: kv.take("rare_max_train", d.rare_max_train)?,
            rare_eval_docs: kv.take("rare_eval_docs", d.rare_eval_docs)?,
            digit_noise: kv.take("digit_noise", d.digit_noise)?,
            seed: kv.take("seed", d.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn primary_len_min(&self) -> usize {
        self.doc_len_min - (self.doc_len_min as f64 * self.extra_notes_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_codes == 0 || self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return bad("document and code counts must be positive");
        }
        if self.background_vocab == 0 || self.max_codes == 0 {
            return bad("background_vocab and max_codes must be positive");
        }
        if self.phrase_len_min == 0 || self.phrase_len_min > self.phrase_len_max {
            return bad("need 1 <= phrase_len_min <= phrase_len_max");
        }
        if self.doc_len_min == 0 || self.doc_len_min > self.doc_len_max {
            return bad("need 1 <= doc_len_min <= doc_len_max");
        }
        if !(0.0..=1.0).contains(&self.coupling) || !(0.0..1.0).contains(&self.extra_notes_fraction)
        {
            return bad("coupling must lie in [0,1] and extra_notes_fraction in [0,1)");
        }
        if !(0.0..=1.0).contains(&self.primary_evidence_prob)
            || !(0.0..=1.0).contains(&self.digit_noise)
        {
            return bad("probabilities must lie in [0,1]");
        }
        if self.zipf_exponent < 0.0 || self.mean_codes < 1.0 {
            return bad("zipf_exponent must be >= 0 and mean_codes >= 1");
        }
        if self.rare_codes >= self.n_codes {
            return bad("rare_codes must leave at least one frequent code");
        }
        if self.rare_codes > 0 && (self.rare_max_train == 0 || self.rare_max_train > self.n_train) {
            return bad("rare_max_train must lie in [1, n_train]");
        }
        if self.rare_codes > 0 && self.rare_eval_docs > self.n_dev.min(self.n_test) {
            return bad("rare_eval_docs exceeds the dev or test size");
        }
        if self.max_codes * self.phrase_len_max > self.primary_len_min() {
            return Err(Error::Config(format!(
                "cannot place {} evidence phrases of up to {} tokens in a primary note of {} tokens",
                self.max_codes,
                self.phrase_len_max,
                self.primary_len_min()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<RawDocument>,
    pub dev: Vec<RawDocument>,
    pub test: Vec<RawDocument>,
    pub train_reduced: Vec<RawDocument>,
    pub dev_reduced: Vec<RawDocument>,
    pub test_reduced: Vec<RawDocument>,
    pub labels: LabelSpace,
    /// Evidence phrase per code, in label order.
    pub phrases: Vec<Vec<String>>,
}

fn pseudo_word(mut i: usize, min_syllables: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut s = String::new();
    let mut n = 0;
    while n < min_syllables || i > 0 {
        let syl = i % base;
        i /= base;
        s.push(CONSONANTS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
        n += 1;
    }
    s
}

struct Sampler {
    cumulative: Vec<f64>,
}

impl Sampler {
    fn zipf(n: usize, exponent: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..n)
            .map(|i| {
                acc += 1.0 / ((i + 1) as f64).powf(exponent);
                acc
            })
            .collect();
        Sampler { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// `k` distinct indices from `0..weights.len()`, sampled sequentially by weight.
fn weighted_without_replacement<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(w.len()) {
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = w.len() - 1;
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 && u < wi {
                pick = i;
                break;
            }
            u -= wi;
        }
        // Floating-point leftovers can land on a zero-weight tail; walk back to a live one.
        while w[pick] == 0.0 {
            pick -= 1;
        }
        out.push(pick);
        w[pick] = 0.0;
    }
    out
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    background: Vec<String>,
    background_sampler: Sampler,
    phrases: Vec<Vec<String>>,
    frequent_weights: Vec<f64>,
}

impl Generator<'_> {
    fn cardinality(&mut self, len: usize) -> usize {
        let cfg = self.cfg;
        let span = (cfg.doc_len_max - cfg.doc_len_min) as f64;
        let u = if span > 0.0 {
            (len - cfg.doc_len_min) as f64 / span
        } else {
            0.5
        };
        let mean = cfg.mean_codes * (1.0 - cfg.coupling + 2.0 * cfg.coupling * u);
        let mean = mean.clamp(1.0, cfg.max_codes as f64);
        if cfg.max_codes == 1 {
            return 1;
        }
        let q = (mean - 1.0) / (cfg.max_codes - 1) as f64;
        1 + (0..cfg.max_codes - 1)
            .filter(|_| self.rng.gen::<f64>() < q)
            .count()
    }

    fn background_tokens(&mut self, n: usize, out: &mut Vec<String>) {
        for _ in 0..n {
            let mut w = self.background[self.background_sampler.sample(&mut self.rng)].clone();
            let r: f64 = self.rng.gen();
            if r < 0.03 {
                w.push(',');
            } else if r < 0.05 {
                w.push('.');
            } else if r < 0.07 {
                let mut c = w.chars();
                if let Some(first) = c.next() {
                    w = first.to_uppercase().chain(c).collect();
                }
            }
            out.push(w);
            if self.rng.gen::<f64>() < self.cfg.digit_noise {
                out.push(self.rng.gen_range(1..1000).to_string());
            }
        }
    }

    /// Background filler of `len` surviving tokens with `phrases` embedded intact.
    fn section(&mut self, len: usize, phrases: &[usize]) -> Vec<String> {
        let phrase_tokens: usize = phrases.iter().map(|&j| self.phrases[j].len()).sum();
        let n_bg = len - phrase_tokens;
        let mut slots: Vec<(usize, usize)> = phrases
            .iter()
            .map(|&j| (self.rng.gen_range(0..=n_bg), j))
            .collect();
        slots.sort();
        let mut out = Vec::with_capacity(len + len / 10);
        let mut done = 0;
        for (gap, j) in slots {
            self.background_tokens(gap - done, &mut out);
            done = gap;
            out.extend(self.phrases[j].iter().cloned());
        }
        self.background_tokens(n_bg - done, &mut out);
        out
    }

    /// Returns (full text, reduced text, codes).
    fn document(&mut self, rare: &[usize]) -> (String, String, Vec<usize>) {
        let cfg = self.cfg;
        let len = self.rng.gen_range(cfg.doc_len_min..=cfg.doc_len_max);
        let k = self.cardinality(len);
        let k_frequent = k
            .saturating_sub(rare.len())
            .max(if rare.is_empty() { 1 } else { 0 });
        let weights = self.frequent_weights.clone();
        let mut codes = weighted_without_replacement(&weights, k_frequent, &mut self.rng);
        codes.extend_from_slice(rare);
        codes.truncate(cfg.max_codes.max(rare.len()));

        let extra_len = (len as f64 * cfg.extra_notes_fraction).round() as usize;
        let primary_len = len - extra_len;
        let mut in_primary = Vec::new();
        let mut in_extra = Vec::new();
        let mut extra_used = 0;
        for &j in &codes {
            let plen = self.phrases[j].len();
            let to_primary = self.rng.gen::<f64>() < cfg.primary_evidence_prob;
            if !to_primary && extra_used + plen <= extra_len {
                extra_used += plen;
                in_extra.push(j);
            } else {
                in_primary.push(j);
            }
        }
        let primary = self.section(primary_len, &in_primary).join(" ");
        let extra = self.section(extra_len, &in_extra).join(" ");
        let full = if extra.is_empty() {
            primary.clone()
        } else {
            format!("{primary}\n\n{extra}")
        };
        codes.sort_unstable();
        (full, primary, codes)
    }
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let background: Vec<String> = (0..cfg.background_vocab)
        .map(|i| pseudo_word(i, 2))
        .collect();
    let pool_size = 2 * cfg.n_codes + 8;
    let pool: Vec<String> = (0..pool_size)
        .map(|i| {
            format!(
                "{}{}",
                pseudo_word(i, 1),
                EVIDENCE_SUFFIXES[i % EVIDENCE_SUFFIXES.len()]
            )
        })
        .collect();

    let mut seen = HashSet::new();
    let mut phrases = Vec::with_capacity(cfg.n_codes);
    let mut attempts = 0;
    while phrases.len() < cfg.n_codes {
        attempts += 1;
        if attempts > 1000 * cfg.n_codes {
            return Err(Error::Config(
                "could not draw unique evidence phrases".into(),
            ));
        }
        let len = rng.gen_range(cfg.phrase_len_min..=cfg.phrase_len_max);
        let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..pool_size)).collect();
        if seen.insert(idx.clone()) {
            phrases.push(idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>());
        }
    }

    let mut entries = Vec::with_capacity(cfg.n_codes);
    let mut edges = Vec::new();
    let mut groups = std::collections::BTreeMap::new();
    for (j, phrase) in phrases.iter().enumerate() {
        let category = j / 3;
        let code = format!("{:03}.{}", category + 1, j % 3);
        let parent = format!("{:03}", category + 1);
        let chapter = format!("ch{}", category / 4);
        edges.push((code.clone(), parent.clone()));
        edges.push((parent, chapter));
        let group = if j % 4 == 3 {
            LabelGroup::Procedure
        } else {
            LabelGroup::Diagnosis
        };
        groups.insert(code.clone(), group);

        let mut words: Vec<String> = Vec::new();
        words.push(GENERIC_WORDS[rng.gen_range(0..GENERIC_WORDS.len())].to_string());
        words.push(phrase[0].clone());
        for t in &phrase[1..] {
            if rng.gen::<f64>() < 0.5 {
                words.push(t.clone());
            }
        }
        if rng.gen::<f64>() < 0.5 {
            words.push(GENERIC_WORDS[rng.gen_range(0..GENERIC_WORDS.len())].to_string());
        }
        let mut desc = words.join(" ");
        if let Some(first) = desc.get(..1) {
            desc = first.to_uppercase() + &desc[1..];
        }
        entries.push((code, desc));
    }
    let labels = LabelSpace::new(entries)?
        .with_hierarchy(Hierarchy::new(edges)?)
        .with_groups(&groups);

    let n_frequent = cfg.n_codes - cfg.rare_codes;
    let frequent_weights: Vec<f64> = (0..cfg.n_codes)
        .map(|j| {
            if j < n_frequent {
                1.0 / ((j + 1) as f64).powf(cfg.zipf_exponent)
            } else {
                0.0
            }
        })
        .collect();

    let split_sizes = [cfg.n_train, cfg.n_dev, cfg.n_test];
    // rare assignments per split: doc index -> rare codes
    let mut rare_by_split: Vec<Vec<Vec<usize>>> =
        split_sizes.iter().map(|&n| vec![Vec::new(); n]).collect();
    for j in n_frequent..cfg.n_codes {
        for (s, &n) in split_sizes.iter().enumerate() {
            let count = if s == 0 {
                rng.gen_range(1..=cfg.rare_max_train)
            } else {
                cfg.rare_eval_docs
            };
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            for &d in &idx[..count] {
                rare_by_split[s][d].push(j);
            }
        }
    }

    let mut gen = Generator {
        cfg,
        rng,
        background_sampler: Sampler::zipf(background.len(), 1.0),
        background,
        phrases,
        frequent_weights,
    };

    let names = ["train", "dev", "test"];
    let mut full_splits = Vec::new();
    let mut reduced_splits = Vec::new();
    for (s, &n) in split_sizes.iter().enumerate() {
        let mut full = Vec::with_capacity(n);
        let mut reduced = Vec::with_capacity(n);
        for d in 0..n {
            let (text, primary, codes) = gen.document(&rare_by_split[s][d]);
            let codes: BTreeSet<String> =
                codes.iter().map(|&j| labels.codes()[j].clone()).collect();
            let doc_id = format!("{}-{:05}", names[s], d);
            reduced.push(RawDocument {
                doc_id: doc_id.clone(),
                text: primary,
                codes: codes.clone(),
            });
            full.push(RawDocument {
                doc_id,
                text,
                codes,
            });
        }
        full_splits.push(full);
        reduced_splits.push(reduced);
    }

    let mut fs = full_splits.into_iter();
    let mut rs = reduced_splits.into_iter();
    Ok(SynthCorpus {
        train: fs.next().unwrap(),
        dev: fs.next().unwrap(),
        test: fs.next().unwrap(),
        train_reduced: rs.next().unwrap(),
        dev_reduced: rs.next().unwrap(),
        test_reduced: rs.next().unwrap(),
        labels,
        phrases: gen.phrases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::preprocess_text;
    use crate::metrics::pearson;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 60,
            n_dev: 10,
            n_test: 10,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn evidence_phrases_are_contained() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        for doc in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert!(!doc.codes.is_empty());
            for code in &doc.codes {
                let j = c.labels.index_of(code).unwrap();
                let phrase = c.phrases[j].join(" ");
                assert!(doc.text.contains(&phrase), "{} lacks {phrase}", doc.doc_id);
            }
        }
    }

    #[test]
    fn descriptions_share_tokens_with_phrases() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        for j in 0..c.labels.len() {
            let d = c.labels.description(j);
            assert!(c.phrases[j].iter().any(|t| d.contains(t)));
        }
        let set: HashSet<&Vec<String>> = c.phrases.iter().collect();
        assert_eq!(set.len(), c.phrases.len());
    }

    #[test]
    fn phrase_that_cannot_fit_is_rejected() {
        let cfg = SynthConfig {
            doc_len_min: 10,
            doc_len_max: 20,
            ..small()
        };
        assert!(matches!(
            generate_synthetic_corpus(&cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn length_and_cardinality_are_correlated() {
        let cfg = SynthConfig {
            n_train: 500,
            coupling: 0.8,
            seed: 11,
            ..SynthConfig::default()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        let len: Vec<f64> = c
            .train
            .iter()
            .map(|d| preprocess_text(&d.text).len() as f64)
            .collect();
        let card: Vec<f64> = c.train.iter().map(|d| d.codes.len() as f64).collect();
        let rho = pearson(&len, &card).unwrap();
        assert!(rho > 0.3, "rho = {rho}");
    }

    #[test]
    fn rare_codes_have_few_training_documents() {
        let cfg = SynthConfig {
            n_codes: 40,
            rare_codes: 8,
            rare_max_train: 3,
            n_train: 200,
            n_dev: 20,
            n_test: 20,
            ..SynthConfig::default()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        for code in &c.labels.codes()[32..] {
            let n = c.train.iter().filter(|d| d.codes.contains(code)).count();
            assert!((1..=3).contains(&n), "{code}: {n}");
            let n = c.test.iter().filter(|d| d.codes.contains(code)).count();
            assert_eq!(n, cfg.rare_eval_docs);
        }
    }

    #[test]
    fn reduced_variant_is_a_prefix() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        for (f, r) in c.train.iter().zip(&c.train_reduced) {
            assert!(f.text.starts_with(&r.text));
            assert_eq!(f.codes, r.codes);
        }
    }

    #[test]
    fn weighted_sampling_returns_distinct_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let picks = weighted_without_replacement(&[1.0, 0.0, 2.0, 0.5], 3, &mut rng);
            let set: HashSet<_> = picks.iter().collect();
            assert_eq!(set.len(), 3);
            assert!(!picks.contains(&1));
        }
    }
}
