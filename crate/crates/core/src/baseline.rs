//! One-vs-rest linear baselines on tf-idf unigram features, flat or following
//! a code hierarchy, plus a label-frequency prior.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Hierarchy, LabelSpace};
use crate::error::{Error, Result};
use crate::metrics::{PredictionMatrix, DECISION_THRESHOLD};
use crate::tensor::sigmoid;
use crate::train::Workers;
use crate::util::{sha256_hex, KvConfig};

pub const MAX_FEATURES: usize = 10_000;
const MODEL_FORMAT_VERSION: u32 = 1;

/// Sorted `(feature index, value)` pairs.
pub type SparseVector = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfFeaturizer {
    terms: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl TfidfFeaturizer {
    pub fn fit<S: AsRef<[String]>>(docs: &[S]) -> Result<Self> {
        Self::fit_limited(docs, MAX_FEATURES)
    }

    /// Keeps the `max_features` terms with the highest document frequency
    /// (ties broken lexicographically); `idf = ln(N / df)`.
    pub fn fit_limited<S: AsRef<[String]>>(docs: &[S], max_features: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("tf-idf training corpus"));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for d in docs {
            let unique: BTreeSet<&str> = d.as_ref().iter().map(String::as_str).collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_features);
        let n = docs.len() as f64;
        let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        let idf = ranked.iter().map(|&(_, c)| (n / c as f64).ln()).collect();
        Ok(Self::assemble(terms, idf))
    }

    fn assemble(terms: Vec<String>, idf: Vec<f64>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TfidfFeaturizer { terms, idf, index }
    }

    pub fn n_features(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.terms.join("\n").as_bytes())
    }

    /// Raw term counts times idf, before normalisation.
    pub fn weights(&self, tokens: &[String]) -> SparseVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.index.get(t) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        tf.into_iter()
            .map(|(i, c)| (i, c * self.idf[i as usize]))
            .collect()
    }

    /// L2-normalised tf-idf vector; all-zero when nothing survives.
    pub fn transform(&self, tokens: &[String]) -> SparseVector {
        let mut v = self.weights(tokens);
        v.retain(|&(_, x)| x != 0.0);
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= norm);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// L2 regularisation strength of the hinge objective.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 10,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn take_from(kv: &mut KvConfig, base: SvmConfig) -> Result<Self> {
        let cfg = SvmConfig {
            lambda: kv.take("svm_lambda", base.lambda)?,
            epochs: kv.take("svm_epochs", base.epochs)?,
            ..base
        };
        if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) || cfg.epochs == 0 {
            return Err(Error::Config(
                "svm_lambda must be positive and svm_epochs at least 1".into(),
            ));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearClassifier {
    fn never(n_features: usize) -> Self {
        LinearClassifier {
            weights: vec![0.0; n_features],
            bias: -1.0,
        }
    }

    pub fn margin(&self, x: &SparseVector) -> f64 {
        x.iter()
            .map(|&(i, v)| self.weights[i as usize] * v)
            .sum::<f64>()
            + self.bias
    }
}

/// Pegasos-style stochastic subgradient descent on
/// `λ/2 ‖(w, b)‖² + mean hinge`, with the bias as a constant feature.
pub fn train_binary(
    x: &[&SparseVector],
    y: &[bool],
    n_features: usize,
    cfg: &SvmConfig,
    stream: u64,
) -> LinearClassifier {
    if !y.iter().any(|&p| p) {
        return LinearClassifier::never(n_features);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut v = vec![0.0; n_features];
    let mut vb = 0.0;
    let mut scale = 1.0;
    let mut t = 1.0;
    let mut order: Vec<usize> = (0..x.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = 1.0 / (cfg.lambda * t);
            let sign = if y[i] { 1.0 } else { -1.0 };
            let margin = sign
                * scale
                * (x[i]
                    .iter()
                    .map(|&(f, val)| v[f as usize] * val)
                    .sum::<f64>()
                    + vb);
            scale *= 1.0 - 1.0 / t;
            if scale == 0.0 {
                v.fill(0.0);
                vb = 0.0;
                scale = 1.0;
            }
            if margin < 1.0 {
                let step = eta * sign / scale;
                for &(f, val) in x[i].iter() {
                    v[f as usize] += step * val;
                }
                vb += step;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                vb *= scale;
                scale = 1.0;
            }
            t += 1.0;
        }
    }
    v.iter_mut().for_each(|w| *w *= scale);
    LinearClassifier {
        weights: v,
        bias: vb * scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Flat,
    Hierarchical,
}

/// One classifier per label (flat) or per hierarchy node (hierarchical).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOvrModel {
    pub kind: BaselineKind,
    pub config: SvmConfig,
    pub featurizer: TfidfFeaturizer,
    pub classifiers: BTreeMap<String, LinearClassifier>,
}

fn check_gold(features: &[SparseVector], gold: &[Vec<bool>], n_labels: usize) -> Result<()> {
    if features.len() != gold.len() {
        return Err(Error::Dimension(
            "feature and gold row counts differ".into(),
        ));
    }
    if gold.iter().any(|g| g.len() != n_labels) {
        return Err(Error::Dimension(
            "gold vector does not match the label space".into(),
        ));
    }
    Ok(())
}

pub fn train_flat(
    featurizer: TfidfFeaturizer,
    features: &[SparseVector],
    gold: &[Vec<bool>],
    labels: &LabelSpace,
    cfg: &SvmConfig,
    threads: usize,
) -> Result<LinearOvrModel> {
    check_gold(features, gold, labels.len())?;
    let x: Vec<&SparseVector> = features.iter().collect();
    let n_features = featurizer.n_features();
    let jobs: Vec<usize> = (0..labels.len()).collect();
    let trained = Workers::new(threads)?.map(&jobs, |&j| {
        let y: Vec<bool> = gold.iter().map(|g| g[j]).collect();
        train_binary(&x, &y, n_features, cfg, j as u64 + 1)
    });
    Ok(LinearOvrModel {
        kind: BaselineKind::Flat,
        config: cfg.clone(),
        featurizer,
        classifiers: labels.codes().iter().cloned().zip(trained).collect(),
    })
}

/// Every label plus every ancestor that appears above one, sorted.
pub fn hierarchy_nodes(labels: &LabelSpace, hierarchy: &Hierarchy) -> Vec<String> {
    hierarchy.closure(labels.codes().iter().map(String::as_str))
}

/// Trains one classifier per node. A node sees the documents that fall in its
/// parent's subtree (all documents at the top level); its positives are the
/// documents with a gold code in its own subtree.
pub fn train_hierarchical(
    featurizer: TfidfFeaturizer,
    features: &[SparseVector],
    gold: &[Vec<bool>],
    labels: &LabelSpace,
    cfg: &SvmConfig,
    threads: usize,
) -> Result<LinearOvrModel> {
    check_gold(features, gold, labels.len())?;
    let hierarchy = labels
        .hierarchy()
        .ok_or_else(|| Error::Config("hierarchical baseline needs a hierarchy file".into()))?;
    let closures: Vec<BTreeSet<String>> = gold
        .iter()
        .map(|g| {
            let codes = g
                .iter()
                .enumerate()
                .filter(|(_, &p)| p)
                .map(|(j, _)| labels.codes()[j].as_str());
            hierarchy.closure(codes).into_iter().collect()
        })
        .collect();
    let nodes = hierarchy_nodes(labels, hierarchy);
    let n_features = featurizer.n_features();
    let jobs: Vec<usize> = (0..nodes.len()).collect();
    let trained = Workers::new(threads)?.map(&jobs, |&k| {
        let node = &nodes[k];
        let parent = hierarchy.parent(node);
        let (x, y): (Vec<&SparseVector>, Vec<bool>) = features
            .iter()
            .zip(&closures)
            .filter(|(_, c)| parent.is_none_or(|p| c.contains(p)))
            .map(|(f, c)| (f, c.contains(node)))
            .unzip();
        train_binary(&x, &y, n_features, cfg, k as u64 + 1)
    });
    Ok(LinearOvrModel {
        kind: BaselineKind::Hierarchical,
        config: cfg.clone(),
        featurizer,
        classifiers: nodes.into_iter().zip(trained).collect(),
    })
}

fn classifier<'a>(model: &'a LinearOvrModel, code: &str) -> Result<&'a LinearClassifier> {
    model
        .classifiers
        .get(code)
        .ok_or_else(|| Error::Data(format!("baseline model has no classifier for {code}")))
}

/// Per-label scores `σ(margin)`; present iff the score exceeds 0.5.
pub fn predict_flat(
    model: &LinearOvrModel,
    x: &SparseVector,
    labels: &LabelSpace,
) -> Result<Vec<f64>> {
    labels
        .codes()
        .iter()
        .map(|c| Ok(sigmoid(classifier(model, c)?.margin(x))))
        .collect()
}

/// Scores where each label takes the minimum over itself and its ancestors,
/// so a label is present only when every classifier on its path is positive.
pub fn predict_hierarchical(
    model: &LinearOvrModel,
    x: &SparseVector,
    labels: &LabelSpace,
    hierarchy: &Hierarchy,
) -> Result<Vec<f64>> {
    let mut cache: HashMap<&str, f64> = HashMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for code in labels.codes() {
        let mut s = f64::INFINITY;
        for node in std::iter::once(code.as_str()).chain(hierarchy.ancestors(code)) {
            let own = match cache.get(node) {
                Some(&v) => v,
                None => {
                    let v = sigmoid(classifier(model, node)?.margin(x));
                    cache.insert(node, v);
                    v
                }
            };
            s = s.min(own);
        }
        out.push(s);
    }
    Ok(out)
}

pub fn predict_binary(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| s > DECISION_THRESHOLD).collect()
}

impl LinearOvrModel {
    pub fn score(&self, x: &SparseVector, labels: &LabelSpace) -> Result<Vec<f64>> {
        match self.kind {
            BaselineKind::Flat => predict_flat(self, x, labels),
            BaselineKind::Hierarchical => {
                let h = labels.hierarchy().ok_or_else(|| {
                    Error::Config("hierarchical baseline needs a hierarchy file".into())
                })?;
                predict_hierarchical(self, x, labels, h)
            }
        }
    }

    pub fn to_json(&self) -> String {
        let stored = StoredModel {
            format_version: MODEL_FORMAT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            terms: self.featurizer.terms.clone(),
            idf: self.featurizer.idf.clone(),
            classifiers: self
                .classifiers
                .iter()
                .map(|(node, c)| StoredClassifier {
                    node: node.clone(),
                    bias: c.bias,
                    weights: c
                        .weights
                        .iter()
                        .enumerate()
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(i, &w)| (i as u32, w))
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&stored).expect("baseline model serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: StoredModel = serde_json::from_str(text)?;
        if s.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported baseline model version {}",
                s.format_version
            )));
        }
        if s.terms.len() != s.idf.len() {
            return Err(Error::Data(
                "baseline model term and idf lists differ in length".into(),
            ));
        }
        let n = s.terms.len();
        let mut classifiers = BTreeMap::new();
        for c in s.classifiers {
            let mut weights = vec![0.0; n];
            for (i, w) in c.weights {
                *weights
                    .get_mut(i as usize)
                    .ok_or_else(|| Error::Data(format!("feature index {i} out of range")))? = w;
            }
            classifiers.insert(
                c.node,
                LinearClassifier {
                    weights,
                    bias: c.bias,
                },
            );
        }
        Ok(LinearOvrModel {
            kind: s.kind,
            config: s.config,
            featurizer: TfidfFeaturizer::assemble(s.terms, s.idf),
            classifiers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredModel {
    format_version: u32,
    kind: BaselineKind,
    config: SvmConfig,
    terms: Vec<String>,
    idf: Vec<f64>,
    classifiers: Vec<StoredClassifier>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredClassifier {
    node: String,
    bias: f64,
    weights: Vec<(u32, f64)>,
}

/// Number of codes the prior predicts: the mean training cardinality, rounded.
pub fn prior_k(train_gold: &[Vec<bool>]) -> usize {
    if train_gold.is_empty() {
        return 1;
    }
    let total: usize = train_gold
        .iter()
        .map(|g| g.iter().filter(|&&p| p).count())
        .sum();
    ((total as f64 / train_gold.len() as f64).round() as usize).max(1)
}

/// Predicts the `k` most frequent training codes for every document
/// (score 1, others 0; ties go to the lower label index).
pub fn label_prior(
    train_counts: &[usize],
    k: usize,
    gold: &[Vec<bool>],
) -> Result<PredictionMatrix> {
    let n = train_counts.len();
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));
    let mut row = vec![0.0; n];
    for &j in ranked.iter().take(k) {
        row[j] = 1.0;
    }
    let scores: Vec<Vec<f64>> = gold.iter().map(|_| row.clone()).collect();
    PredictionMatrix::from_rows(&scores, gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn tfidf_hand_example() {
        let docs = [toks("a a b"), toks("b c")];
        let f = TfidfFeaturizer::fit(&docs).unwrap();
        assert_eq!(f.terms(), &["b", "a", "c"]);
        let w = f.weights(&docs[0]);
        let ln2 = 2f64.ln();
        assert_eq!(w, vec![(0, 0.0), (1, 2.0 * ln2)]);
        let v = f.transform(&docs[0]);
        assert_eq!(v, vec![(1, 1.0)]);
        assert!(f.transform(&toks("b b")).is_empty());
        assert!(TfidfFeaturizer::fit::<Vec<String>>(&[]).is_err());
    }

    #[test]
    fn feature_limit_prefers_frequent_terms() {
        let docs = [toks("x y z"), toks("x y"), toks("x w")];
        let f = TfidfFeaturizer::fit_limited(&docs, 2).unwrap();
        assert_eq!(f.terms(), &["x", "y"]);
    }

    #[test]
    fn separable_toy_problem() {
        let x: Vec<SparseVector> = vec![
            vec![(0, 1.0)],
            vec![(0, 0.9), (1, 0.1)],
            vec![(1, 1.0)],
            vec![(0, 0.2), (1, 0.98)],
        ];
        let refs: Vec<&SparseVector> = x.iter().collect();
        let y = [true, true, false, false];
        let cfg = SvmConfig {
            lambda: 1e-2,
            epochs: 50,
            seed: 1,
        };
        let c = train_binary(&refs, &y, 2, &cfg, 1);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(c.margin(xi) > 0.0, yi);
        }
        let again = train_binary(&refs, &y, 2, &cfg, 1);
        assert_eq!(c, again);
        let never = train_binary(&refs, &[false; 4], 2, &cfg, 1);
        assert!(x.iter().all(|xi| never.margin(xi) < 0.0));
    }

    #[test]
    fn prior_picks_most_frequent() {
        let gold = vec![vec![true, false, false], vec![false, false, true]];
        let m = label_prior(&[5, 9, 9], 2, &gold).unwrap();
        assert!(!m.predicted(0, 0) && m.predicted(0, 1) && m.predicted(0, 2));
        assert_eq!(prior_k(&gold), 1);
    }
}
