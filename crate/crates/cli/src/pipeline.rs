use std::fs;
use std::path::{Path, PathBuf};

use mvc_core::corpus::{
    build_vocabulary, encode_corpus, preprocess_text, read_groups_tsv, read_jsonl, EncodedDocument,
    Hierarchy, LabelSpace, RawDocument, Vocabulary,
};
use mvc_core::embed::{train_cbow, CbowConfig, EmbeddingTable};
use mvc_core::model::ModelKind;
use mvc_core::train::TrainConfig;
use mvc_core::util::KvConfig;
use mvc_core::{Error, Result};

use crate::args::LabelArgs;
use crate::manifest::RunManifest;

/// `path` with `suffix` appended to its file name.
pub(crate) fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Creates the directory that will hold the output file `path`.
pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => create_dir(dir),
        _ => Ok(()),
    }
}

pub(crate) fn read_corpus(
    role: &str,
    path: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<RawDocument>> {
    manifest.input(role, path)?;
    let docs = read_jsonl(path)?;
    if docs.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no documents",
            path.display()
        )));
    }
    Ok(docs)
}

/// Reads the label files, or derives a description-free label space from the
/// codes seen in `train`.
pub(crate) fn load_labels(
    args: &LabelArgs,
    train: &[RawDocument],
    manifest: &mut RunManifest,
) -> Result<LabelSpace> {
    let mut labels = match &args.labels {
        Some(p) => {
            manifest.input("labels", p)?;
            LabelSpace::read_descriptions_tsv(p)?
        }
        None => {
            let space = LabelSpace::from_codes(
                train
                    .iter()
                    .flat_map(|d| d.codes.iter().map(String::as_str)),
            )?;
            log::info!(
                "no label file given; using the {} codes of the training split",
                space.len()
            );
            space
        }
    };
    if let Some(p) = &args.hierarchy {
        manifest.input("hierarchy", p)?;
        labels = labels.with_hierarchy(Hierarchy::read_tsv(p)?);
    }
    if let Some(p) = &args.groups {
        manifest.input("groups", p)?;
        labels = labels.with_groups(&read_groups_tsv(p)?);
    }
    Ok(labels)
}

pub(crate) fn vocabulary(train: &[RawDocument]) -> Result<Vocabulary> {
    let tokens: Vec<Vec<String>> = train.iter().map(|d| preprocess_text(&d.text)).collect();
    build_vocabulary(&tokens)
}

/// Loads pretrained embeddings bound to `vocab`, or runs CBOW on `train`.
pub(crate) fn embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    train: &[EncodedDocument],
    cbow: &CbowConfig,
    manifest: &mut RunManifest,
) -> Result<EmbeddingTable> {
    match path {
        Some(p) => {
            manifest.input("embeddings", p)?;
            let table = EmbeddingTable::load(p, &vocab.checksum())?;
            if table.vocab_size() != vocab.size() {
                return Err(Error::Dimension(format!(
                    "embeddings have {} rows, vocabulary {} tokens",
                    table.vocab_size(),
                    vocab.size()
                )));
            }
            Ok(table)
        }
        None => {
            log::info!("pretraining {}-dimensional CBOW embeddings", cbow.dim);
            let sentences: Vec<&[u32]> = train.iter().map(|d| d.token_ids.as_slice()).collect();
            train_cbow(&sentences, vocab, cbow)
        }
    }
}

/// Training and embedding settings resolved from the config file and environment.
pub(crate) struct ModelSettings {
    pub train: TrainConfig,
    pub cbow: CbowConfig,
}

/// Takes the training and CBOW keys from `kv`; the caller finishes `kv`.
pub(crate) fn model_settings(
    kv: &mut KvConfig,
    kind: ModelKind,
    seed: u64,
    threads: usize,
) -> Result<ModelSettings> {
    if kind == ModelKind::MvcLda && kv.contains("lambda") {
        log::warn!("lambda is ignored by mvc-lda");
    }
    let base = TrainConfig {
        kind,
        seed,
        threads,
        ..TrainConfig::default()
    };
    let train = TrainConfig::take_from(kv, base)?;
    let cbow = CbowConfig::take_from(
        kv,
        CbowConfig {
            seed,
            ..CbowConfig::default()
        },
    )?;
    Ok(ModelSettings { train, cbow })
}

/// Checks that regularised training has a description for every code.
pub(crate) fn require_descriptions(
    kind: ModelKind,
    args: &LabelArgs,
    labels: &LabelSpace,
) -> Result<()> {
    if kind == ModelKind::MvcRlda {
        if args.labels.is_none() {
            return Err(Error::Config(
                "mvc-rlda needs --labels with a description for every code".into(),
            ));
        }
        labels.require_descriptions()?;
    }
    Ok(())
}

/// Training and development data encoded against a vocabulary built from the
/// training split.
pub(crate) struct Prepared {
    pub vocab: Vocabulary,
    pub labels: LabelSpace,
    pub train: Vec<EncodedDocument>,
    pub dev: Vec<EncodedDocument>,
    pub descriptions: Vec<Vec<u32>>,
}

impl Prepared {
    pub fn new(train: &[RawDocument], dev: &[RawDocument], labels: LabelSpace) -> Result<Self> {
        let vocab = vocabulary(train)?;
        log::info!("vocabulary: {} tokens", vocab.size());
        Ok(Prepared {
            train: encode_corpus(train, &vocab, &labels),
            dev: encode_corpus(dev, &vocab, &labels),
            descriptions: labels.encoded_descriptions(&vocab),
            vocab,
            labels,
        })
    }

    pub fn encode(&self, docs: &[RawDocument]) -> Vec<EncodedDocument> {
        encode_corpus(docs, &self.vocab, &self.labels)
    }
}
