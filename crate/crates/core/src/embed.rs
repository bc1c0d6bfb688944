//! Word embeddings: CBOW pretraining with negative sampling, lookup, and the
//! binary embedding file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Tensor};
use crate::util::KvConfig;

const EMBED_MAGIC: &[u8; 8] = b"MVCEMBED";
const EMBED_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Tensor,
}

impl EmbeddingTable {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Dimension(
                "embedding table must be two-dimensional".into(),
            ));
        }
        if !weights.all_finite() {
            return Err(Error::NonFinite("embedding table".into()));
        }
        Ok(EmbeddingTable { weights })
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.weights.row(id as usize)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_weights(self) -> Tensor {
        self.weights
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.weights.len());
        out.extend_from_slice(EMBED_MAGIC);
        out.extend_from_slice(&EMBED_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab_size() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for v in self.weights.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("embedding file: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != EMBED_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(b4) != EMBED_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let rows = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let cols = u64::from_le_bytes(b8) as usize;
        if r.len() != rows * cols * 8 {
            return Err(bad("payload size does not match header"));
        }
        let data = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        EmbeddingTable::new(Tensor::from_vec(&[rows, cols], data)?)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".vocab.sha256");
        PathBuf::from(s)
    }

    /// Writes the table and a sidecar holding the checksum of the vocabulary it
    /// was trained against.
    pub fn save(&self, path: &Path, vocab_checksum: &str) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        fs::write(&side, format!("{vocab_checksum}\n")).map_err(|e| Error::io(side, e))
    }

    /// Loads a table and checks its sidecar against `vocab_checksum`.
    pub fn load(path: &Path, vocab_checksum: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let recorded = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let recorded = recorded.trim();
        if recorded != vocab_checksum {
            return Err(Error::Checksum {
                what: format!("vocabulary of {}", path.display()),
                expected: recorded.to_string(),
                found: vocab_checksum.to_string(),
            });
        }
        Self::from_bytes(&bytes)
    }
}

/// Embeds a token id sequence as an `l × d_e` matrix.
pub fn embed_lookup(token_ids: &[u32], table: &Tensor) -> Result<Tensor> {
    let (rows, dim) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(token_ids.len() * dim);
    for &id in token_ids {
        if id as usize >= rows {
            return Err(Error::Dimension(format!(
                "token id {id} outside embedding table of {rows} rows"
            )));
        }
        data.extend_from_slice(table.row(id as usize));
    }
    Tensor::from_vec(&[token_ids.len(), dim], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Frequent-word downsampling threshold; 0 disables it.
    pub sample: f64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 100,
            window: 5,
            epochs: 5,
            negative: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            sample: 1e-3,
            seed: 0,
        }
    }
}

impl CbowConfig {
    /// Reads `cbow_*` keys, leaving the rest in `kv`.
    pub fn take_from(kv: &mut KvConfig, base: CbowConfig) -> Result<Self> {
        let cfg = CbowConfig {
            dim: kv.take("embedding_dim", base.dim)?,
            window: kv.take("cbow_window", base.window)?,
            epochs: kv.take("cbow_epochs", base.epochs)?,
            negative: kv.take("cbow_negative", base.negative)?,
            lr_start: kv.take("cbow_lr_start", base.lr_start)?,
            lr_end: kv.take("cbow_lr_end", base.lr_end)?,
            sample: kv.take("cbow_sample", base.sample)?,
            seed: base.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "CBOW dim, window and epochs must be >= 1".into(),
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end >= 0.0 && self.sample >= 0.0) {
            return Err(Error::Config("CBOW learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// CBOW model state: input vectors become the embedding table, output vectors
/// score centre words against the averaged context.
#[derive(Debug, Clone)]
pub struct CbowModel {
    input: Tensor,
    output: Tensor,
    noise_cdf: Vec<f64>,
    keep_prob: Vec<f64>,
    oov_id: u32,
    cfg: CbowConfig,
}

impl CbowModel {
    pub fn new<S: AsRef<[u32]>>(
        sentences: &[S],
        vocab: &Vocabulary,
        cfg: &CbowConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let rows = vocab.size();
        let oov_id = vocab.oov_id();
        let mut counts = vec![0usize; rows];
        for s in sentences {
            for &id in s.as_ref() {
                if id as usize >= rows {
                    return Err(Error::Dimension(format!(
                        "token id {id} outside vocabulary"
                    )));
                }
                if id != oov_id {
                    counts[id as usize] += 1;
                }
            }
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Empty("CBOW corpus has no in-vocabulary tokens"));
        }
        let mut acc = 0.0;
        let noise_cdf = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        let total: usize = counts.iter().sum();
        let threshold = cfg.sample * total as f64;
        let keep_prob = counts
            .iter()
            .map(|&c| {
                if cfg.sample == 0.0 || c == 0 {
                    1.0
                } else {
                    let f = c as f64;
                    (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0)
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = 0.5 / cfg.dim as f64;
        let data = (0..rows * cfg.dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(CbowModel {
            input: Tensor::from_vec(&[rows, cfg.dim], data)?,
            output: Tensor::zeros(&[rows, cfg.dim]),
            noise_cdf,
            keep_prob,
            oov_id,
            cfg: cfg.clone(),
        })
    }

    fn sample_noise<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.noise_cdf.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        self.noise_cdf
            .partition_point(|&c| c <= u)
            .min(self.noise_cdf.len() - 1)
    }

    fn filtered<S: AsRef<[u32]>>(&self, sentences: &[S]) -> Vec<Vec<usize>> {
        sentences
            .iter()
            .map(|s| {
                s.as_ref()
                    .iter()
                    .filter(|&&id| id != self.oov_id)
                    .map(|&id| id as usize)
                    .collect()
            })
            .collect()
    }

    fn context_mean(
        input: &Tensor,
        sent: &[usize],
        i: usize,
        span: usize,
        h: &mut [f64],
        ctx: &mut Vec<usize>,
    ) {
        ctx.clear();
        let lo = i.saturating_sub(span);
        let hi = (i + span).min(sent.len() - 1);
        for (k, &w) in sent.iter().enumerate().take(hi + 1).skip(lo) {
            if k != i {
                ctx.push(w);
            }
        }
        h.iter_mut().for_each(|x| *x = 0.0);
        for &c in ctx.iter() {
            for (a, b) in h.iter_mut().zip(input.row(c)) {
                *a += b;
            }
        }
        if !ctx.is_empty() {
            let inv = 1.0 / ctx.len() as f64;
            h.iter_mut().for_each(|x| *x *= inv);
        }
    }

    /// Runs all configured epochs; the learning rate decays linearly over the run.
    pub fn train<S: AsRef<[u32]>>(&mut self, sentences: &[S]) {
        let sents = self.filtered(sentences);
        let total_words: usize = sents.iter().map(Vec::len).sum();
        let planned = (total_words * self.cfg.epochs).max(1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let dim = self.cfg.dim;
        let mut h = vec![0.0; dim];
        let mut grad_h = vec![0.0; dim];
        let mut ctx = Vec::new();
        let mut processed = 0usize;
        let mut kept = Vec::new();
        for _ in 0..self.cfg.epochs {
            for raw in &sents {
                let progress = processed as f64 / planned;
                let alpha = self.cfg.lr_start - (self.cfg.lr_start - self.cfg.lr_end) * progress;
                processed += raw.len();
                kept.clear();
                for &w in raw {
                    let p = self.keep_prob[w];
                    if p >= 1.0 || rng.gen::<f64>() < p {
                        kept.push(w);
                    }
                }
                let sent = &kept;
                for i in 0..sent.len() {
                    let span = self.cfg.window - rng.gen_range(0..self.cfg.window);
                    Self::context_mean(&self.input, sent, i, span, &mut h, &mut ctx);
                    if ctx.is_empty() {
                        continue;
                    }
                    grad_h.iter_mut().for_each(|x| *x = 0.0);
                    let center = sent[i];
                    for d in 0..=self.cfg.negative {
                        let (target, label) = if d == 0 {
                            (center, 1.0)
                        } else {
                            let t = self.sample_noise(&mut rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = self.output.row_mut(target);
                        let g = (label - sigmoid(dot(&h, out))) * alpha;
                        for k in 0..dim {
                            grad_h[k] += g * out[k];
                            out[k] += g * h[k];
                        }
                    }
                    let inv = 1.0 / ctx.len() as f64;
                    for &c in &ctx {
                        for (a, b) in self.input.row_mut(c).iter_mut().zip(&grad_h) {
                            *a += b * inv;
                        }
                    }
                }
            }
        }
    }

    /// Mean negative-sampling loss over one pass with the full window; negatives
    /// come from a stream seeded by `seed` so that two models can be compared.
    pub fn objective<S: AsRef<[u32]>>(&self, sentences: &[S], seed: u64) -> f64 {
        let sents = self.filtered(sentences);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = vec![0.0; self.cfg.dim];
        let mut ctx = Vec::new();
        let (mut total, mut n) = (0.0, 0usize);
        for sent in &sents {
            for i in 0..sent.len() {
                Self::context_mean(&self.input, sent, i, self.cfg.window, &mut h, &mut ctx);
                if ctx.is_empty() {
                    continue;
                }
                let center = sent[i];
                let mut loss = -sigmoid(dot(&h, self.output.row(center))).max(1e-300).ln();
                for _ in 0..self.cfg.negative {
                    let t = self.sample_noise(&mut rng);
                    if t != center {
                        loss -= sigmoid(-dot(&h, self.output.row(t))).max(1e-300).ln();
                    }
                }
                total += loss;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Input vectors with the OOV row replaced by the mean of all other rows.
    pub fn into_table(self) -> Result<EmbeddingTable> {
        let mut w = self.input;
        let rows = w.shape()[0];
        let dim = w.shape()[1];
        let oov = self.oov_id as usize;
        let mut mean = vec![0.0; dim];
        for r in (0..rows).filter(|&r| r != oov) {
            for (m, v) in mean.iter_mut().zip(w.row(r)) {
                *m += v;
            }
        }
        let denom = (rows - 1).max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= denom);
        w.row_mut(oov).copy_from_slice(&mean);
        EmbeddingTable::new(w)
    }
}

pub fn train_cbow<S: AsRef<[u32]>>(
    sentences: &[S],
    vocab: &Vocabulary,
    cfg: &CbowConfig,
) -> Result<EmbeddingTable> {
    if sentences.is_empty() {
        return Err(Error::Empty("CBOW corpus"));
    }
    let mut model = CbowModel::new(sentences, vocab, cfg)?;
    model.train(sentences);
    model.into_table()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    /// Topic-structured filler; "alpha beta" always appear together between cue words.
    fn toy() -> (Vocabulary, Vec<Vec<u32>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let topics: Vec<Vec<String>> = (0..6)
            .map(|t| (0..10).map(|i| format!("t{t}w{i}")).collect())
            .collect();
        let cue: Vec<String> = (0..4).map(|i| format!("k{i}")).collect();
        let mut docs: Vec<Vec<String>> = Vec::new();
        for _ in 0..300 {
            let topic = &topics[rng.gen_range(0..topics.len())];
            let mut d = Vec::new();
            for _ in 0..40 {
                if rng.gen::<f64>() < 0.1 {
                    for w in [
                        &cue[rng.gen_range(0..4)],
                        "alpha",
                        "beta",
                        &cue[rng.gen_range(0..4)],
                    ] {
                        d.push(w.to_string());
                    }
                } else {
                    d.push(topic[rng.gen_range(0..topic.len())].clone());
                }
            }
            docs.push(d);
        }
        let vocab = build_vocabulary(&docs).unwrap();
        let ids = docs.iter().map(|d| vocab.encode(d)).collect();
        (vocab, ids)
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    #[test]
    fn output_has_configured_width() {
        let (vocab, ids) = toy();
        let cfg = CbowConfig {
            epochs: 1,
            ..CbowConfig::default()
        };
        let t = train_cbow(&ids, &vocab, &cfg).unwrap();
        assert_eq!(t.dim(), 100);
        assert_eq!(t.vocab_size(), vocab.size());
        assert!(t.weights().all_finite());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let (vocab, _) = toy();
        let none: Vec<Vec<u32>> = vec![];
        assert!(train_cbow(&none, &vocab, &CbowConfig::default()).is_err());
        let only_oov = vec![vec![vocab.oov_id(); 4]];
        assert!(train_cbow(&only_oov, &vocab, &CbowConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_lowers_the_objective() {
        let (vocab, ids) = toy();
        let cfg = CbowConfig {
            dim: 16,
            epochs: 3,
            seed: 9,
            ..CbowConfig::default()
        };
        let mut m = CbowModel::new(&ids, &vocab, &cfg).unwrap();
        let before = m.objective(&ids, 1);
        m.train(&ids);
        let after = m.objective(&ids, 1);
        assert!(after < before, "{after} >= {before}");
        let a = m.into_table().unwrap();
        let b = train_cbow(&ids, &vocab, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn co_occurring_tokens_end_up_closer() {
        let (vocab, ids) = toy();
        let cfg = CbowConfig {
            dim: 16,
            epochs: 5,
            seed: 2,
            ..CbowConfig::default()
        };
        let t = train_cbow(&ids, &vocab, &cfg).unwrap();
        let pair = cosine(t.row(vocab.id("alpha")), t.row(vocab.id("beta")));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = vocab.size() as u32 - 1;
        let mut random = 0.0;
        for _ in 0..100 {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n);
            while b == a {
                b = rng.gen_range(0..n);
            }
            random += cosine(t.row(a), t.row(b));
        }
        assert!(
            pair > random / 100.0,
            "pair {pair} vs random {}",
            random / 100.0
        );
    }

    #[test]
    fn lookup_examples() {
        let table = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(embed_lookup(&[], &table).unwrap().shape(), &[0, 3]);
        let x = embed_lookup(&[2, 0], &table).unwrap();
        assert_eq!(x.data(), &[0., 0., 1., 1., 0., 0.]);
        let x = embed_lookup(&[1, 1], &table).unwrap();
        assert_eq!(x.row(0), x.row(1));
        assert!(embed_lookup(&[3], &table).is_err());
    }

    #[test]
    fn file_round_trip_and_checksum_binding() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.bin");
        let t = EmbeddingTable::new(
            Tensor::from_vec(&[2, 2], vec![0.1, -2.5, f64::MIN_POSITIVE, 3.0]).unwrap(),
        )
        .unwrap();
        t.save(&p, "abc").unwrap();
        assert_eq!(EmbeddingTable::load(&p, "abc").unwrap(), t);
        assert!(matches!(
            EmbeddingTable::load(&p, "def"),
            Err(Error::Checksum { .. })
        ));
        assert!(EmbeddingTable::from_bytes(&t.to_bytes()[..20]).is_err());
    }
}
