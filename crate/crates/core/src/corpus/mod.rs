//! Text preprocessing, vocabulary construction, label spaces and dataset encoding.

mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

pub use synth::{generate_synthetic_corpus, SynthConfig, SynthCorpus};

/// A token must appear in at least this many training documents to get its own id.
pub const MIN_DOC_FREQ: usize = 3;

const STRIP_CHARS: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '{', '}',
];

const VOCAB_MAGIC: &str = "#mvc-vocab";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDocument {
    pub doc_id: String,
    pub text: String,
    pub codes: BTreeSet<String>,
}

/// Lowercases, splits on whitespace, strips surrounding punctuation and drops
/// tokens made only of ASCII digits.
pub fn preprocess_text(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .filter_map(|tok| {
            let lower = tok.to_lowercase();
            let trimmed = lower.trim_matches(STRIP_CHARS);
            if trimmed.is_empty() || trimmed.bytes().all(|b| b.is_ascii_digit()) {
                None
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Number of rows an embedding table needs, including the OOV row.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn oov_id(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index
            .get(token)
            .copied()
            .unwrap_or_else(|| self.oov_id())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| self.doc_freq[i as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{VOCAB_MAGIC}\t{VOCAB_VERSION}\t{}", self.oov_id());
        for (i, (tok, df)) in self.tokens.iter().zip(&self.doc_freq).enumerate() {
            let _ = writeln!(out, "{tok}\t{i}\t{df}");
        }
        out
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.to_tsv().as_bytes())
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr(1, "missing header".into()))?;
        let h: Vec<&str> = header.split('\t').collect();
        if h.len() != 3 || h[0] != VOCAB_MAGIC {
            return Err(perr(1, format!("bad vocabulary header {header:?}")));
        }
        if h[1] != VOCAB_VERSION.to_string() {
            return Err(perr(1, format!("unsupported vocabulary version {}", h[1])));
        }
        let oov: usize = h[2].parse().map_err(|_| perr(1, "bad oov id".into()))?;
        let mut tokens = Vec::new();
        let mut doc_freq = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(perr(lineno, "expected token<TAB>id<TAB>doc_freq".into()));
            }
            let id: usize = f[1].parse().map_err(|_| perr(lineno, "bad id".into()))?;
            if id != tokens.len() {
                return Err(perr(
                    lineno,
                    format!("ids must be dense, expected {}", tokens.len()),
                ));
            }
            let df: usize = f[2]
                .parse()
                .map_err(|_| perr(lineno, "bad doc_freq".into()))?;
            tokens.push(f[0].to_string());
            doc_freq.push(df);
        }
        if oov != tokens.len() {
            return Err(perr(
                1,
                format!("oov id {oov} does not follow the last token id"),
            ));
        }
        Ok(Self::from_parts(tokens, doc_freq))
    }

    fn from_parts(tokens: Vec<String>, doc_freq: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            doc_freq,
            index,
        }
    }
}

/// Keeps tokens present in at least [`MIN_DOC_FREQ`] distinct documents.
/// Ids follow descending document frequency, ties broken lexicographically.
pub fn build_vocabulary<S: AsRef<[String]>>(train_docs: &[S]) -> Result<Vocabulary> {
    if train_docs.is_empty() {
        return Err(Error::Empty(
            "vocabulary needs at least one training document",
        ));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in train_docs {
        let uniq: BTreeSet<&str> = doc.as_ref().iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, c)| c >= MIN_DOC_FREQ).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = kept.iter().map(|(t, _)| t.to_string()).collect();
    let doc_freq = kept.iter().map(|&(_, c)| c).collect();
    Ok(Vocabulary::from_parts(tokens, doc_freq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelGroup {
    Procedure,
    Diagnosis,
    None,
}

impl LabelGroup {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "procedure" => Some(LabelGroup::Procedure),
            "diagnosis" => Some(LabelGroup::Diagnosis),
            "none" => Some(LabelGroup::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelGroup::Procedure => "procedure",
            LabelGroup::Diagnosis => "diagnosis",
            LabelGroup::None => "none",
        }
    }
}

/// Parent links between codes and their ancestors. Nodes without a parent hang
/// off a single implicit root.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Hierarchy {
    parent: BTreeMap<String, String>,
}

impl Hierarchy {
    pub fn new(edges: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut parent = BTreeMap::new();
        for (child, par) in edges {
            if child == par {
                return Err(Error::Data(format!("hierarchy self-loop at {child}")));
            }
            if let Some(prev) = parent.insert(child.clone(), par.clone()) {
                if prev != par {
                    return Err(Error::Data(format!(
                        "{child} has two parents: {prev} and {par}"
                    )));
                }
            }
        }
        let h = Hierarchy { parent };
        h.check_acyclic()?;
        Ok(h)
    }

    fn check_acyclic(&self) -> Result<()> {
        for start in self.parent.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            while let Some(p) = self.parent.get(cur) {
                if !seen.insert(cur) {
                    return Err(Error::Data(format!("hierarchy cycle through {cur}")));
                }
                cur = p;
            }
        }
        Ok(())
    }

    pub fn parent(&self, code: &str) -> Option<&str> {
        self.parent.get(code).map(String::as_str)
    }

    /// Ancestors from the immediate parent upwards, excluding the implicit root.
    pub fn ancestors(&self, code: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = code;
        while let Some(p) = self.parent.get(cur) {
            out.push(p.as_str());
            cur = p;
        }
        out
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parent.iter().map(|(c, p)| (c.as_str(), p.as_str()))
    }

    /// Every node reachable from `codes` by following parent links, in sorted order.
    pub fn closure<'a>(&'a self, codes: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut nodes = BTreeSet::new();
        for c in codes {
            nodes.insert(c.to_string());
            for a in self.ancestors(c) {
                nodes.insert(a.to_string());
            }
        }
        nodes.into_iter().collect()
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let rows = read_tsv_pairs(path)?;
        Hierarchy::new(rows)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (c, p) in self.edges() {
            let _ = writeln!(out, "{c}\t{p}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    codes: Vec<String>,
    index: HashMap<String, usize>,
    description_text: Vec<String>,
    descriptions: Vec<Vec<String>>,
    groups: Vec<LabelGroup>,
    hierarchy: Option<Hierarchy>,
}

impl LabelSpace {
    /// Builds a label space from `(code, description)` pairs; order is preserved.
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        let mut index = HashMap::new();
        let mut codes = Vec::with_capacity(entries.len());
        let mut description_text = Vec::with_capacity(entries.len());
        let mut descriptions = Vec::with_capacity(entries.len());
        for (i, (code, desc)) in entries.into_iter().enumerate() {
            if code.is_empty() {
                return Err(Error::Data("empty code string".into()));
            }
            if index.insert(code.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate code {code}")));
            }
            descriptions.push(preprocess_text(&desc));
            description_text.push(desc);
            codes.push(code);
        }
        if codes.is_empty() {
            return Err(Error::Empty("label space has no codes"));
        }
        let n = codes.len();
        Ok(LabelSpace {
            codes,
            index,
            description_text,
            descriptions,
            groups: vec![LabelGroup::None; n],
            hierarchy: None,
        })
    }

    /// Label space without descriptions, sorted by code.
    pub fn from_codes<'a>(codes: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = codes.into_iter().collect();
        Self::new(
            set.into_iter()
                .map(|c| (c.to_string(), String::new()))
                .collect(),
        )
    }

    pub fn with_hierarchy(mut self, h: Hierarchy) -> Self {
        self.hierarchy = Some(h);
        self
    }

    pub fn with_groups(mut self, groups: &BTreeMap<String, LabelGroup>) -> Self {
        for (i, c) in self.codes.iter().enumerate() {
            if let Some(&g) = groups.get(c) {
                self.groups[i] = g;
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn description(&self, j: usize) -> &[String] {
        &self.descriptions[j]
    }

    pub fn description_text(&self, j: usize) -> &str {
        &self.description_text[j]
    }

    pub fn groups(&self) -> &[LabelGroup] {
        &self.groups
    }

    pub fn hierarchy(&self) -> Option<&Hierarchy> {
        self.hierarchy.as_ref()
    }

    /// Fails unless every code has at least one description token.
    pub fn require_descriptions(&self) -> Result<()> {
        match self.descriptions.iter().position(Vec::is_empty) {
            Some(j) => Err(Error::Data(format!(
                "code {} has an empty description",
                self.codes[j]
            ))),
            None => Ok(()),
        }
    }

    /// Description token ids under `vocab`, one sequence per label.
    pub fn encoded_descriptions(&self, vocab: &Vocabulary) -> Vec<Vec<u32>> {
        self.descriptions.iter().map(|d| vocab.encode(d)).collect()
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.codes.join("\n").as_bytes())
    }

    pub fn descriptions_tsv(&self) -> String {
        let mut out = String::new();
        for (c, d) in self.codes.iter().zip(&self.description_text) {
            let _ = writeln!(out, "{c}\t{d}");
        }
        out
    }

    pub fn groups_tsv(&self) -> String {
        let mut out = String::new();
        for (c, g) in self.codes.iter().zip(&self.groups) {
            let _ = writeln!(out, "{c}\t{}", g.as_str());
        }
        out
    }

    pub fn read_descriptions_tsv(path: &Path) -> Result<Self> {
        Self::new(read_tsv_pairs(path)?)
    }
}

pub fn read_groups_tsv(path: &Path) -> Result<BTreeMap<String, LabelGroup>> {
    let mut out = BTreeMap::new();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (code, g) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected code<TAB>group".into(),
        })?;
        let g = LabelGroup::parse(g.trim()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("unknown group {g:?}"),
        })?;
        out.insert(code.to_string(), g);
    }
    Ok(out)
}

fn read_tsv_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((a, b)) => out.push((a.to_string(), b.to_string())),
            // A bare code is allowed; it simply has no description.
            None if !line.contains(char::is_whitespace) => {
                out.push((line.to_string(), String::new()))
            }
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected two tab-separated columns".into(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDocument {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
    pub gold: Vec<bool>,
}

impl EncodedDocument {
    /// Token count `l` of the full document.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.gold
            .iter()
            .enumerate()
            .filter(|(_, &g)| g)
            .map(|(j, _)| j)
    }

    pub fn cardinality(&self) -> usize {
        self.gold.iter().filter(|&&g| g).count()
    }
}

/// Encodes one document. Returns the document and the number of its codes that
/// are not part of `labels`.
pub fn encode_document(
    raw: &RawDocument,
    vocab: &Vocabulary,
    labels: &LabelSpace,
) -> (EncodedDocument, usize) {
    let tokens = preprocess_text(&raw.text);
    let mut gold = vec![false; labels.len()];
    let mut dropped = 0;
    for c in &raw.codes {
        match labels.index_of(c) {
            Some(j) => gold[j] = true,
            None => dropped += 1,
        }
    }
    let doc = EncodedDocument {
        doc_id: raw.doc_id.clone(),
        token_ids: vocab.encode(&tokens),
        gold,
    };
    (doc, dropped)
}

pub fn encode_corpus(
    raws: &[RawDocument],
    vocab: &Vocabulary,
    labels: &LabelSpace,
) -> Vec<EncodedDocument> {
    let mut dropped = 0;
    let docs = raws
        .iter()
        .map(|r| {
            let (d, n) = encode_document(r, vocab, labels);
            dropped += n;
            d
        })
        .collect();
    if dropped > 0 {
        log::warn!("dropped {dropped} gold code occurrences not present in the label space");
    }
    docs
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !ids.insert(doc.doc_id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate doc_id {}", doc.doc_id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn to_jsonl(docs: &[RawDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("document serialises"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl(docs).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Per-label count of training documents carrying the label.
pub fn label_counts(docs: &[EncodedDocument], n_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; n_labels];
    for d in docs {
        for j in d.positives() {
            counts[j] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(
            preprocess_text("Acute Respiratory FAILURE"),
            toks(&["acute", "respiratory", "failure"])
        );
        assert_eq!(
            preprocess_text("given 325 mg aspirin"),
            toks(&["given", "mg", "aspirin"])
        );
        assert_eq!(preprocess_text("x-ray, 2019."), toks(&["x-ray"]));
        assert!(preprocess_text("").is_empty());
        assert_eq!(
            preprocess_text("b12 (left) 3/4"),
            toks(&["b12", "left", "3/4"])
        );
    }

    #[test]
    fn vocabulary_threshold_boundary() {
        let docs = vec![
            toks(&["pain", "two", "three", "rare"]),
            toks(&["pain", "two", "three"]),
            toks(&["pain", "three", "pain"]),
            toks(&["pain"]),
        ];
        let v = build_vocabulary(&docs).unwrap();
        assert_eq!(v.tokens(), &toks(&["pain", "three"]));
        assert_eq!(v.id("two"), v.oov_id());
        assert_eq!(v.id("rare"), v.oov_id());
        assert_eq!(v.doc_freq("pain"), Some(4));
        assert_eq!(v.doc_freq("three"), Some(3));
        assert_eq!(v.size(), 3);
    }

    #[test]
    fn vocabulary_ties_are_lexicographic() {
        let d = toks(&["zeta", "alpha", "mid"]);
        let v = build_vocabulary(&[d.clone(), d.clone(), d]).unwrap();
        assert_eq!(v.tokens(), &toks(&["alpha", "mid", "zeta"]));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let docs: Vec<Vec<String>> = vec![];
        assert!(build_vocabulary(&docs).is_err());
    }

    #[test]
    fn vocabulary_tsv_round_trip() {
        let d = toks(&["a", "b"]);
        let v = build_vocabulary(&[d.clone(), d.clone(), d]).unwrap();
        let back = Vocabulary::parse_tsv(&v.to_tsv(), Path::new("v.tsv")).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::parse_tsv("junk\n", Path::new("v.tsv")).is_err());
    }

    #[test]
    fn encode_examples() {
        let d = toks(&["known"]);
        let vocab = build_vocabulary(&[d.clone(), d.clone(), d]).unwrap();
        let labels = LabelSpace::from_codes(["A", "B", "C"]).unwrap();
        let raw = RawDocument {
            doc_id: "1".into(),
            text: String::new(),
            codes: ["A", "B", "Z"].iter().map(|s| s.to_string()).collect(),
        };
        let (doc, dropped) = encode_document(&raw, &vocab, &labels);
        assert!(doc.token_ids.is_empty());
        assert_eq!(doc.len(), 0);
        assert_eq!(doc.gold, vec![true, true, false]);
        assert_eq!(dropped, 1);

        let raw = RawDocument {
            doc_id: "2".into(),
            text: "never seen words".into(),
            codes: BTreeSet::new(),
        };
        let (doc, _) = encode_document(&raw, &vocab, &labels);
        assert_eq!(doc.token_ids, vec![vocab.oov_id(); 3]);
    }

    #[test]
    fn hierarchy_rejects_cycles() {
        let e = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert!(Hierarchy::new(vec![e("a", "b"), e("b", "c"), e("c", "a")]).is_err());
        let h = Hierarchy::new(vec![e("a", "b"), e("b", "c")]).unwrap();
        assert_eq!(h.ancestors("a"), vec!["b", "c"]);
        assert!(h.ancestors("c").is_empty());
    }

    #[test]
    fn rlda_needs_descriptions() {
        let ls = LabelSpace::new(vec![
            ("A".into(), "some words".into()),
            ("B".into(), "42".into()),
        ])
        .unwrap();
        assert!(ls.require_descriptions().is_err());
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"doc_id\":\"a\",\"text\":\"x\",\"codes\":[]}\n{bad\n").unwrap();
        match read_jsonl(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(
            &p,
            "{\"doc_id\":\"a\",\"text\":\"x\",\"codes\":[],\"extra\":1}\n",
        )
        .unwrap();
        assert!(read_jsonl(&p).is_err());
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(s in "[ a-zA-Z0-9.,;:!?'\"()\\[\\]{}/\\-éÄ\t\n]{0,60}") {
            let once = preprocess_text(&s);
            let twice = preprocess_text(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocabulary_respects_doc_freq_rule(docs in prop::collection::vec(prop::collection::vec(0u8..12, 0..8), 1..12)) {
            let docs: Vec<Vec<String>> = docs.iter().map(|d| d.iter().map(|t| format!("t{t}")).collect()).collect();
            let v = build_vocabulary(&docs).unwrap();
            for t in 0u8..12 {
                let tok = format!("t{t}");
                let df = docs.iter().filter(|d| d.contains(&tok)).count();
                prop_assert_eq!(v.id(&tok) != v.oov_id(), df >= MIN_DOC_FREQ);
            }
            // decoding retained ids reproduces the tokens
            for d in &docs {
                for (t, id) in d.iter().zip(v.encode(d)) {
                    if id != v.oov_id() {
                        prop_assert_eq!(v.token(id), Some(t.as_str()));
                    }
                }
            }
        }
    }
}
