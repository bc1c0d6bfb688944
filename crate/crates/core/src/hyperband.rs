//! Hyperband over kernel sizes, filter count and regularisation weight.
//!
//! One pass over all brackets is run; each rung retrains its surviving
//! configurations from scratch with the rung's epoch budget.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::TrainConfig;
use crate::util::KvConfig;

/// Offsets of the four kernel sizes relative to the smallest one.
const KERNEL_OFFSETS: [usize; 4] = [0, 2, 4, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Range of the smallest kernel `s0`; the others follow at +2, +4, +6.
    pub s0_min: usize,
    pub s0_max: usize,
    pub filters_min: usize,
    pub filters_max: usize,
    pub lambdas: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            s0_min: 2,
            s0_max: 8,
            filters_min: 30,
            filters_max: 100,
            lambdas: vec![0.001, 0.0001, 0.0005, 0.0007, 0.01],
        }
    }
}

impl SearchSpace {
    pub fn take_from(kv: &mut KvConfig, base: SearchSpace) -> Result<Self> {
        let space = SearchSpace {
            s0_min: kv.take("hb_s0_min", base.s0_min)?,
            s0_max: kv.take("hb_s0_max", base.s0_max)?,
            filters_min: kv.take("hb_filters_min", base.filters_min)?,
            filters_max: kv.take("hb_filters_max", base.filters_max)?,
            lambdas: kv.take_list("hb_lambdas", base.lambdas)?,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty()
            || self.s0_min > self.s0_max
            || self.filters_min > self.filters_max
        {
            return Err(Error::Empty("hyperparameter search space"));
        }
        if self.s0_min == 0 || self.filters_min == 0 {
            return Err(Error::Config(
                "kernel sizes and filter counts must be positive".into(),
            ));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(
                "lambda candidates must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    /// `(s0, s1, s2, s3)` in ascending order.
    pub kernels: [usize; 4],
    pub filters: usize,
    pub lambda: f64,
}

impl HyperConfig {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            kernel_size: self.kernels[3],
            multi_view: true,
            filters: self.filters,
            lambda: self.lambda,
            ..base.clone()
        }
    }
}

pub fn sample_config<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> HyperConfig {
    let s0 = rng.gen_range(space.s0_min..=space.s0_max);
    let filters = rng.gen_range(space.filters_min..=space.filters_max);
    let lambda = *space.lambdas.choose(rng).expect("validated non-empty");
    HyperConfig {
        kernels: KERNEL_OFFSETS.map(|o| s0 + o),
        filters,
        lambda,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rung {
    pub configs: usize,
    pub epochs: usize,
    /// Configurations promoted to the next rung.
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub n: usize,
    pub r: usize,
    pub rungs: Vec<Rung>,
}

impl Bracket {
    pub fn total_epochs(&self) -> usize {
        self.rungs.iter().map(|r| r.configs * r.epochs).sum()
    }
}

/// Brackets `s = s_max, …, 0` with `n = ⌈(s_max+1) η^s / (s+1)⌉` and
/// `r = R η^-s`; rung `i` evaluates `⌊n η^-i⌋` configs for `r η^i` epochs.
pub fn bracket_schedule(max_resource: usize, eta: usize) -> Result<Vec<Bracket>> {
    if max_resource == 0 || eta < 2 {
        return Err(Error::Config("Hyperband needs R >= 1 and eta >= 2".into()));
    }
    let mut s_max = 0;
    while eta.pow(s_max as u32 + 1) <= max_resource {
        s_max += 1;
    }
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let pow = eta.pow(s as u32);
            let n = ((s_max + 1) * pow).div_ceil(s + 1);
            let rungs = (0..=s)
                .map(|i| {
                    let configs = n / eta.pow(i as u32);
                    let epochs = (max_resource * eta.pow(i as u32) / pow).max(1);
                    Rung {
                        configs,
                        epochs,
                        survivors: if i < s { configs / eta } else { 0 },
                    }
                })
                .collect();
            Bracket {
                s,
                n,
                r: (max_resource / pow).max(1),
                rungs,
            }
        })
        .collect();
    Ok(brackets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub bracket: usize,
    pub rung: usize,
    pub trial: usize,
    pub config: HyperConfig,
    pub epochs: usize,
    pub dev_micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: HyperConfig,
    pub best_dev_micro_f1: f64,
    pub schedule: Vec<Bracket>,
    pub trials: Vec<TrialRecord>,
}

impl SearchResult {
    pub fn trials_jsonl(&self) -> String {
        self.trials
            .iter()
            .map(|t| serde_json::to_string(t).expect("trial serialises") + "\n")
            .collect()
    }

    pub fn write_trials(&self, path: &Path) -> Result<()> {
        fs::write(path, self.trials_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Runs every bracket. `evaluate(config, epochs)` must return the dev micro F1
/// of a model trained from scratch for at most `epochs` epochs.
pub fn hyperband_search<F>(
    space: &SearchSpace,
    max_resource: usize,
    eta: usize,
    seed: u64,
    mut evaluate: F,
) -> Result<SearchResult>
where
    F: FnMut(&HyperConfig, usize) -> Result<f64>,
{
    space.validate()?;
    let schedule = bracket_schedule(max_resource, eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::new();
    for bracket in &schedule {
        log::info!("bracket s={}: n={}, r={}", bracket.s, bracket.n, bracket.r);
        let configs: Vec<HyperConfig> = (0..bracket.n)
            .map(|_| sample_config(space, &mut rng))
            .collect();
        let mut alive: Vec<usize> = (0..bracket.n).collect();
        for (i, rung) in bracket.rungs.iter().enumerate() {
            debug_assert_eq!(alive.len(), rung.configs);
            let mut scored = Vec::with_capacity(alive.len());
            for &t in &alive {
                let f1 = evaluate(&configs[t], rung.epochs)?;
                trials.push(TrialRecord {
                    bracket: bracket.s,
                    rung: i,
                    trial: t,
                    config: configs[t].clone(),
                    epochs: rung.epochs,
                    dev_micro_f1: f1,
                });
                scored.push((t, f1));
            }
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            alive = scored
                .iter()
                .take(rung.survivors)
                .map(|&(t, _)| t)
                .collect();
            alive.sort_unstable();
        }
    }
    let best = trials
        .iter()
        .fold(None::<&TrialRecord>, |acc, t| match acc {
            Some(b) if b.dev_micro_f1 >= t.dev_micro_f1 => Some(b),
            _ => Some(t),
        })
        .ok_or(Error::Empty("hyperband trials"))?;
    Ok(SearchResult {
        best: best.config.clone(),
        best_dev_micro_f1: best.dev_micro_f1,
        schedule,
        trials,
    })
}
