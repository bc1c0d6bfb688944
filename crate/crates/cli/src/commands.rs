use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mvc_core::baseline::{
    label_prior, predict_binary, prior_k, train_flat, train_hierarchical, SvmConfig,
    TfidfFeaturizer,
};
use mvc_core::corpus::{
    generate_synthetic_corpus, label_counts, preprocess_text, write_jsonl, LabelSpace, RawDocument,
    SynthConfig, Vocabulary,
};
use mvc_core::embed::CbowConfig;
use mvc_core::hyperband::{hyperband_search, SearchSpace};
use mvc_core::metrics::{pearson, pearson_p_value, MetricsReport, PredictionMatrix, ReportOptions};
use mvc_core::model::{Checkpoint, ModelKind};
use mvc_core::train::{ablate, initial_params, predict, train, AblationSetup, Split, TrainData};
use mvc_core::{Error, Result};
use serde::Serialize;

use crate::args::{
    AblateArgs, BaselineArgs, BaselineChoice, Command, EmbedArgs, EvaluateArgs, HyperbandArgs,
    SynthArgs, TrainArgs,
};
use crate::config;
use crate::manifest::RunManifest;
use crate::pipeline::{
    beside, create_dir, create_parent, embeddings, load_labels, model_settings, read_corpus,
    require_descriptions, vocabulary, Prepared,
};

pub(crate) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Embed(a) => embed(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Hyperband(a) => hyperband(&a),
        Command::Ablate(a) => ablate_cmd(&a),
        Command::Baseline(a) => baseline(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut m = RunManifest::new("synth", a.seed);
    m.input("config", &a.config)?;
    let mut kv = config::load(Some(&a.config))?;
    kv.set("seed", a.seed.to_string());
    let cfg = SynthConfig::from_kv(kv)?;
    m.config("synth", &cfg);
    let corpus = generate_synthetic_corpus(&cfg)?;
    create_dir(&a.out_dir)?;

    let splits: [(&str, &[RawDocument]); 6] = [
        ("train", &corpus.train),
        ("dev", &corpus.dev),
        ("test", &corpus.test),
        ("train_reduced", &corpus.train_reduced),
        ("dev_reduced", &corpus.dev_reduced),
        ("test_reduced", &corpus.test_reduced),
    ];
    for (name, docs) in splits {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_jsonl(&path, docs)?;
        m.artifact(name, &path);
    }
    let labels = &corpus.labels;
    let mut files = vec![
        ("labels", labels.descriptions_tsv()),
        ("groups", labels.groups_tsv()),
    ];
    if let Some(h) = labels.hierarchy() {
        files.push(("hierarchy", h.to_tsv()));
    }
    for (name, text) in files {
        let path = a.out_dir.join(format!("{name}.tsv"));
        write_text(&path, &text)?;
        m.artifact(name, &path);
    }

    let lengths: Vec<f64> = corpus
        .train
        .iter()
        .map(|d| preprocess_text(&d.text).len() as f64)
        .collect();
    let cards: Vec<f64> = corpus.train.iter().map(|d| d.codes.len() as f64).collect();
    match pearson(&lengths, &cards) {
        Ok(r) => {
            log::info!("train length/cardinality Pearson r = {r:.4}");
            m.summary("train_length_cardinality_pearson", r);
            m.summary(
                "train_length_cardinality_p_value",
                pearson_p_value(r, lengths.len()),
            );
        }
        Err(e) => log::warn!("length/cardinality correlation unavailable: {e}"),
    }
    m.summary("n_train", corpus.train.len());
    m.summary("n_dev", corpus.dev.len());
    m.summary("n_test", corpus.test.len());
    m.summary("n_codes", labels.len());
    m.write(&a.out_dir.join("manifest.json"))
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let mut m = RunManifest::new("embed", a.seed);
    let mut kv = config::load(a.config.as_deref())?;
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    let cbow = CbowConfig::take_from(
        &mut kv,
        CbowConfig {
            seed: a.seed,
            ..CbowConfig::default()
        },
    )?;
    kv.finish()?;
    m.config("cbow", &cbow);
    let raw = read_corpus("train", &a.train, &mut m)?;
    let vocab = vocabulary(&raw)?;
    let labels =
        LabelSpace::from_codes(raw.iter().flat_map(|d| d.codes.iter().map(String::as_str)))?;
    let docs = mvc_core::corpus::encode_corpus(&raw, &vocab, &labels);
    let table = embeddings(None, &vocab, &docs, &cbow, &mut m)?;
    create_parent(&a.out)?;
    let vocab_path = beside(&a.out, ".vocab.tsv");
    vocab.write_tsv(&vocab_path)?;
    table.save(&a.out, &vocab.checksum())?;
    m.artifact("embeddings", &a.out);
    m.artifact("vocabulary", &vocab_path);
    m.summary("vocab_checksum", vocab.checksum());
    m.write(&beside(&a.out, ".manifest.json"))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut m = RunManifest::new("train", a.seed);
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    let mut kv = config::load(a.config.as_deref())?;
    let s = model_settings(&mut kv, a.model, a.seed, a.threads)?;
    kv.finish()?;
    m.config("train", &s.train);
    if a.embeddings.is_none() {
        m.config("cbow", &s.cbow);
    }

    let raw_train = read_corpus("train", &a.train, &mut m)?;
    let raw_dev = read_corpus("dev", &a.dev, &mut m)?;
    let labels = load_labels(&a.labels, &raw_train, &mut m)?;
    require_descriptions(a.model, &a.labels, &labels)?;
    let data = Prepared::new(&raw_train, &raw_dev, labels)?;

    let table = embeddings(
        a.embeddings.as_deref(),
        &data.vocab,
        &data.train,
        &s.cbow,
        &mut m,
    )?;
    create_parent(&a.out)?;
    if a.embeddings.is_none() {
        let emb_path = beside(&a.out, ".embeddings.bin");
        table.save(&emb_path, &data.vocab.checksum())?;
        m.artifact("embeddings", &emb_path);
    }
    let init = initial_params(&s.train, table.into_weights(), data.labels.len())?;
    let (params, history) = train(
        init,
        &TrainData {
            train: &data.train,
            dev: &data.dev,
            descriptions: Some(&data.descriptions),
        },
        &s.train,
    )?;

    let ckpt = Checkpoint {
        params,
        vocab_checksum: data.vocab.checksum(),
        codes: data.labels.codes().to_vec(),
    };
    ckpt.save(&a.out)?;
    let vocab_path = beside(&a.out, ".vocab.tsv");
    data.vocab.write_tsv(&vocab_path)?;
    let history_path = beside(&a.out, ".history.jsonl");
    history.write_jsonl(&history_path)?;
    m.artifact("checkpoint", &a.out);
    m.artifact("vocabulary", &vocab_path);
    m.artifact("history", &history_path);
    m.summary("best_epoch", history.best_epoch);
    m.summary("best_dev_micro_f1", history.best().map(|b| b.dev_micro_f1));
    m.summary("epochs_run", history.epochs.len());
    m.write(&beside(&a.out, ".manifest.json"))
}

/// The `n` most frequent codes (by `counts`, ties to the lower index) that have
/// support in `m`.
fn top_supported(m: &PredictionMatrix, counts: &[usize], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m.n_labels()).filter(|&j| m.support(j) > 0).collect();
    order.sort_by(|&x, &y| counts[y].cmp(&counts[x]).then(x.cmp(&y)));
    order.truncate(n);
    order.sort_unstable();
    order
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    doc_id: &'a str,
    codes: Vec<&'a str>,
    scores: &'a [f64],
}

fn predictions_jsonl(docs: &[(&str, Vec<f64>)], labels: &LabelSpace) -> String {
    let mut out = String::new();
    for (id, scores) in docs {
        let codes = predict_binary(scores)
            .into_iter()
            .zip(labels.codes())
            .filter(|(p, _)| *p)
            .map(|(_, c)| c.as_str())
            .collect();
        let line = PredictionLine {
            doc_id: id,
            codes,
            scores,
        };
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&line).expect("prediction serialises")
        );
    }
    out
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut m = RunManifest::new("evaluate", 0);
    m.input("checkpoint", &a.checkpoint)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let vocab_path = a
        .vocab
        .clone()
        .unwrap_or_else(|| beside(&a.checkpoint, ".vocab.tsv"));
    m.input("vocabulary", &vocab_path)?;
    let vocab = Vocabulary::read_tsv(&vocab_path)?;
    if vocab.checksum() != ckpt.vocab_checksum {
        return Err(Error::Checksum {
            what: format!("vocabulary {}", vocab_path.display()),
            expected: ckpt.vocab_checksum.clone(),
            found: vocab.checksum(),
        });
    }

    let labels = match &a.labels.labels {
        Some(_) => load_labels(&a.labels, &[], &mut m)?,
        None => {
            let mut space = LabelSpace::new(
                ckpt.codes
                    .iter()
                    .map(|c| (c.clone(), String::new()))
                    .collect(),
            )?;
            if let Some(p) = &a.labels.groups {
                m.input("groups", p)?;
                space = space.with_groups(&mvc_core::corpus::read_groups_tsv(p)?);
            }
            space
        }
    };
    if labels.codes() != ckpt.codes.as_slice() {
        return Err(Error::Dimension(format!(
            "checkpoint has {} codes that do not match the {} codes of the label file",
            ckpt.codes.len(),
            labels.len()
        )));
    }

    let raw_test = read_corpus("test", &a.test, &mut m)?;
    let test = mvc_core::corpus::encode_corpus(&raw_test, &vocab, &labels);
    let preds = predict(&ckpt.params, &test, a.threads)?;

    let train_counts = match &a.train {
        Some(p) => {
            let raw = read_corpus("train", p, &mut m)?;
            Some(label_counts(
                &mvc_core::corpus::encode_corpus(&raw, &vocab, &labels),
                labels.len(),
            ))
        }
        None => None,
    };
    let rank_counts = train_counts
        .clone()
        .unwrap_or_else(|| (0..labels.len()).map(|j| preds.support(j)).collect());
    let opts = ReportOptions {
        p_at: a.p_at.clone(),
        macro_subset: Some(top_supported(&preds, &rank_counts, a.macro_top)),
        groups: a.labels.groups.as_ref().map(|_| labels.groups().to_vec()),
        train_counts,
        label_space_id: labels.checksum(),
    };
    m.config(
        "evaluate",
        &serde_json::json!({ "p_at": a.p_at, "macro_top": a.macro_top }),
    );
    let report = MetricsReport::compute(&preds, &opts)?;
    log::info!("test micro F1 {:.4}", report.micro_f1);
    create_parent(&a.metrics_out)?;
    report.write(&a.metrics_out)?;
    m.artifact("metrics", &a.metrics_out);
    if let Some(p) = &a.predictions_out {
        create_parent(p)?;
        let rows: Vec<(&str, Vec<f64>)> = test
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                (
                    doc.doc_id.as_str(),
                    (0..labels.len()).map(|j| preds.score(d, j)).collect(),
                )
            })
            .collect();
        write_text(p, &predictions_jsonl(&rows, &labels))?;
        m.artifact("predictions", p);
    }
    m.summary("micro_f1", report.micro_f1);
    m.write(&beside(&a.metrics_out, ".manifest.json"))
}

fn hyperband(a: &HyperbandArgs) -> Result<()> {
    let mut m = RunManifest::new("hyperband", a.seed);
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    let mut kv = config::load(a.config.as_deref())?;
    let s = model_settings(&mut kv, a.model, a.seed, a.threads)?;
    let mut space = SearchSpace::take_from(&mut kv, SearchSpace::default())?;
    kv.finish()?;
    if a.model == ModelKind::MvcLda {
        space.lambdas = vec![0.0];
    }
    m.config("train", &s.train);
    m.config("cbow", &s.cbow);
    m.config("search_space", &space);
    m.config(
        "hyperband",
        &serde_json::json!({ "R": a.max_resource, "eta": a.eta }),
    );

    let raw_train = read_corpus("train", &a.train, &mut m)?;
    let raw_dev = read_corpus("dev", &a.dev, &mut m)?;
    let labels = load_labels(&a.labels, &raw_train, &mut m)?;
    require_descriptions(a.model, &a.labels, &labels)?;
    let data = Prepared::new(&raw_train, &raw_dev, labels)?;
    let table = embeddings(
        a.embeddings.as_deref(),
        &data.vocab,
        &data.train,
        &s.cbow,
        &mut m,
    )?;

    let schedule = mvc_core::hyperband::bracket_schedule(a.max_resource, a.eta)?;
    for b in &schedule {
        let rungs: Vec<String> = b
            .rungs
            .iter()
            .map(|r| format!("{}x{} keep {}", r.configs, r.epochs, r.survivors))
            .collect();
        log::info!(
            "bracket s={}: (n, r) = ({}, {}); rungs {}",
            b.s,
            b.n,
            b.r,
            rungs.join(", ")
        );
    }
    let tdata = TrainData {
        train: &data.train,
        dev: &data.dev,
        descriptions: Some(&data.descriptions),
    };
    let result = hyperband_search(&space, a.max_resource, a.eta, a.seed, |hc, epochs| {
        let mut cfg = hc.apply(&s.train);
        cfg.max_epochs = epochs;
        let init = initial_params(&cfg, table.weights().clone(), data.labels.len())?;
        let (_, history) = train(init, &tdata, &cfg)?;
        let f1 = history.best().map_or(0.0, |b| b.dev_micro_f1);
        log::info!(
            "kernels {:?}, filters {}, lambda {}: {epochs} epochs, dev micro F1 {f1:.4}",
            hc.kernels,
            hc.filters,
            hc.lambda
        );
        Ok(f1)
    })?;

    create_dir(&a.out_dir)?;
    let schedule_path = a.out_dir.join("schedule.json");
    write_json(&schedule_path, &result.schedule)?;
    let trials_path = a.out_dir.join("trials.jsonl");
    result.write_trials(&trials_path)?;
    let best_cfg = result.best.apply(&s.train);
    let best_path = a.out_dir.join("best.json");
    write_json(
        &best_path,
        &serde_json::json!({
            "config": result.best,
            "dev_micro_f1": result.best_dev_micro_f1,
            "train_config": best_cfg,
        }),
    )?;
    let conf_path = a.out_dir.join("best.conf");
    write_text(
        &conf_path,
        &format!(
            "kernel_size = {}\nmulti_view = true\nfilters = {}\nlambda = {}\n",
            result.best.kernels[3], result.best.filters, result.best.lambda
        ),
    )?;
    for (role, p) in [
        ("schedule", &schedule_path),
        ("trials", &trials_path),
        ("best", &best_path),
        ("best_config", &conf_path),
    ] {
        m.artifact(role, p);
    }
    m.summary("best_dev_micro_f1", result.best_dev_micro_f1);
    m.summary("trials", result.trials.len());
    m.write(&a.out_dir.join("manifest.json"))
}

fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    let mut m = RunManifest::new("ablate", a.seed);
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    let mut kv = config::load(a.config.as_deref())?;
    let s = model_settings(&mut kv, a.model, a.seed, a.threads)?;
    kv.finish()?;
    let components: BTreeSet<_> = a.components.iter().copied().collect();
    m.config("train", &s.train);
    m.config("cbow", &s.cbow);
    m.config(
        "ablate",
        &serde_json::json!({ "components": components, "p_at": a.p_at }),
    );

    let raw_train = read_corpus("train", &a.train, &mut m)?;
    let raw_dev = read_corpus("dev", &a.dev, &mut m)?;
    let raw_test = read_corpus("test", &a.test, &mut m)?;
    let labels = load_labels(&a.labels, &raw_train, &mut m)?;
    require_descriptions(a.model, &a.labels, &labels)?;
    let data = Prepared::new(&raw_train, &raw_dev, labels)?;
    let test = data.encode(&raw_test);
    let reduced = match (&a.train_reduced, &a.dev_reduced, &a.test_reduced) {
        (Some(tr), Some(dv), Some(te)) => Some([
            data.encode(&read_corpus("train_reduced", tr, &mut m)?),
            data.encode(&read_corpus("dev_reduced", dv, &mut m)?),
            data.encode(&read_corpus("test_reduced", te, &mut m)?),
        ]),
        (None, None, None) => None,
        _ => {
            return Err(Error::Config(
                "--train-reduced, --dev-reduced and --test-reduced go together".into(),
            ))
        }
    };
    let table = embeddings(
        a.embeddings.as_deref(),
        &data.vocab,
        &data.train,
        &s.cbow,
        &mut m,
    )?;

    let setup = AblationSetup {
        embedding: table.weights(),
        n_labels: data.labels.len(),
        descriptions: Some(&data.descriptions),
        full: Split {
            train: &data.train,
            dev: &data.dev,
            test: &test,
        },
        reduced: reduced.as_ref().map(|[tr, dv, te]| Split {
            train: tr,
            dev: dv,
            test: te,
        }),
        report: ReportOptions {
            p_at: a.p_at.clone(),
            label_space_id: data.labels.checksum(),
            ..ReportOptions::default()
        },
    };
    let report = ablate(&s.train, &setup, &components)?;
    for row in &report.rows {
        log::info!(
            "without {}: micro F1 {:+.4}, PR AUC {:+.4}",
            row.component,
            row.delta.micro_f1,
            row.delta.pr_auc.unwrap_or(f64::NAN)
        );
    }
    create_parent(&a.out)?;
    report.write(&a.out)?;
    m.artifact("report", &a.out);
    m.write(&beside(&a.out, ".manifest.json"))
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let mut m = RunManifest::new("baseline", a.seed);
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    let mut kv = config::load(a.config.as_deref())?;
    let svm = SvmConfig::take_from(
        &mut kv,
        SvmConfig {
            seed: a.seed,
            ..SvmConfig::default()
        },
    )?;
    kv.finish()?;
    let kind = a.kind.unwrap_or(if a.labels.hierarchy.is_some() {
        BaselineChoice::Hierarchical
    } else {
        BaselineChoice::Flat
    });
    if kind == BaselineChoice::Hierarchical && a.labels.hierarchy.is_none() {
        return Err(Error::Config(
            "the hierarchical baseline needs --hierarchy".into(),
        ));
    }
    m.config("svm", &svm);
    m.config(
        "baseline",
        &serde_json::json!({ "kind": format!("{kind:?}").to_lowercase(), "p_at": a.p_at }),
    );

    let raw_train = read_corpus("train", &a.train, &mut m)?;
    let raw_test = read_corpus("test", &a.test, &mut m)?;
    let labels = load_labels(&a.labels, &raw_train, &mut m)?;
    let gold_of = |docs: &[RawDocument]| -> Vec<Vec<bool>> {
        docs.iter()
            .map(|d| {
                let mut g = vec![false; labels.len()];
                for c in &d.codes {
                    if let Some(j) = labels.index_of(c) {
                        g[j] = true;
                    }
                }
                g
            })
            .collect()
    };
    let train_gold = gold_of(&raw_train);
    let test_gold = gold_of(&raw_test);
    create_dir(&a.out_dir)?;

    let preds = if kind == BaselineChoice::Prior {
        let counts: Vec<usize> = (0..labels.len())
            .map(|j| train_gold.iter().filter(|g| g[j]).count())
            .collect();
        let k = prior_k(&train_gold);
        log::info!("label prior predicts the {k} most frequent codes");
        label_prior(&counts, k, &test_gold)?
    } else {
        let train_tokens: Vec<Vec<String>> =
            raw_train.iter().map(|d| preprocess_text(&d.text)).collect();
        let featurizer = TfidfFeaturizer::fit(&train_tokens)?;
        let x: Vec<_> = train_tokens
            .iter()
            .map(|t| featurizer.transform(t))
            .collect();
        let model = if kind == BaselineChoice::Hierarchical {
            train_hierarchical(featurizer, &x, &train_gold, &labels, &svm, a.threads)?
        } else {
            train_flat(featurizer, &x, &train_gold, &labels, &svm, a.threads)?
        };
        let model_path = a.out_dir.join("model.json");
        model.save(&model_path)?;
        m.artifact("model", &model_path);
        let scores: Vec<Vec<f64>> = raw_test
            .iter()
            .map(|d| {
                model.score(
                    &model.featurizer.transform(&preprocess_text(&d.text)),
                    &labels,
                )
            })
            .collect::<Result<_>>()?;
        PredictionMatrix::from_rows(&scores, &test_gold)?
    };

    let rows: Vec<(&str, Vec<f64>)> = raw_test
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            (
                doc.doc_id.as_str(),
                (0..labels.len()).map(|j| preds.score(d, j)).collect(),
            )
        })
        .collect();
    let pred_path = a.out_dir.join("predictions.jsonl");
    write_text(&pred_path, &predictions_jsonl(&rows, &labels))?;
    let opts = ReportOptions {
        p_at: a.p_at.clone(),
        groups: a.labels.groups.as_ref().map(|_| labels.groups().to_vec()),
        label_space_id: labels.checksum(),
        ..ReportOptions::default()
    };
    let report = MetricsReport::compute(&preds, &opts)?;
    log::info!("baseline test micro F1 {:.4}", report.micro_f1);
    let metrics_path = a.out_dir.join("metrics.json");
    report.write(&metrics_path)?;
    m.artifact("predictions", &pred_path);
    m.artifact("metrics", &metrics_path);
    m.summary("micro_f1", report.micro_f1);
    m.write(&a.out_dir.join("manifest.json"))
}
