use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{initial_params, predict, train, TrainConfig, TrainData};
use crate::corpus::EncodedDocument;
use crate::error::{Error, Result};
use crate::metrics::{compare_reports, MetricsReport, ReportDelta, ReportOptions};
use crate::model::ModelKind;
use crate::tensor::Tensor;

const ABLATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Regularization,
    MultiView,
    LengthEmbedding,
    ExtraNotes,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Regularization,
        Component::MultiView,
        Component::LengthEmbedding,
        Component::ExtraNotes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Regularization => "regularization",
            Component::MultiView => "multi_view",
            Component::LengthEmbedding => "length_embedding",
            Component::ExtraNotes => "extra_notes",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation component {s:?}")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub train: &'a [EncodedDocument],
    pub dev: &'a [EncodedDocument],
    pub test: &'a [EncodedDocument],
}

pub struct AblationSetup<'a> {
    pub embedding: &'a Tensor,
    pub n_labels: usize,
    pub descriptions: Option<&'a [Vec<u32>]>,
    pub full: Split<'a>,
    /// The same documents restricted to their primary note.
    pub reduced: Option<Split<'a>>,
    pub report: ReportOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub dev_micro_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub component: Component,
    pub run: ModelRun,
    pub dev_micro_f1_delta: f64,
    /// Ablated minus full model.
    pub delta: ReportDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub model: ModelKind,
    pub full: ModelRun,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn run(cfg: &TrainConfig, setup: &AblationSetup<'_>, split: Split<'_>) -> Result<ModelRun> {
    let init = initial_params(cfg, setup.embedding.clone(), setup.n_labels)?;
    let data = TrainData {
        train: split.train,
        dev: split.dev,
        descriptions: setup.descriptions,
    };
    let (params, history) = train(init, &data, cfg)?;
    let preds = predict(&params, split.test, cfg.threads)?;
    Ok(ModelRun {
        dev_micro_f1: history.best().map_or(0.0, |b| b.dev_micro_f1),
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
        test: MetricsReport::compute(&preds, &setup.report)?,
    })
}

/// Trains the full model and one model per removed component, reporting the
/// change of each against the full model.
pub fn ablate(
    cfg: &TrainConfig,
    setup: &AblationSetup<'_>,
    components: &BTreeSet<Component>,
) -> Result<AblationReport> {
    if components.contains(&Component::ExtraNotes) && setup.reduced.is_none() {
        return Err(Error::Config(
            "the extra_notes ablation needs the reduced corpora".into(),
        ));
    }
    let full = run(cfg, setup, setup.full)?;
    let mut rows = Vec::new();
    for &c in components {
        let mut variant = cfg.clone();
        let mut split = setup.full;
        match c {
            Component::Regularization => variant.lambda = 0.0,
            Component::MultiView => variant.multi_view = false,
            Component::LengthEmbedding => variant.length_feature = false,
            Component::ExtraNotes => split = setup.reduced.expect("checked above"),
        }
        let same_model = variant.model_config(1, 1, 1)? == cfg.model_config(1, 1, 1)?;
        let r = if same_model && c != Component::ExtraNotes {
            log::info!("ablating {c} leaves the model unchanged");
            full.clone()
        } else {
            log::info!("training without {c}");
            run(&variant, setup, split)?
        };
        rows.push(AblationRow {
            component: c,
            dev_micro_f1_delta: r.dev_micro_f1 - full.dev_micro_f1,
            delta: compare_reports(&full.test, &r.test)?,
            run: r,
        });
    }
    Ok(AblationReport {
        format_version: ABLATION_FORMAT_VERSION,
        model: cfg.kind,
        full,
        rows,
    })
}
