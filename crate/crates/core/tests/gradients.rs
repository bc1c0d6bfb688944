use mvc_core::model::{
    backward, forward, loss_mvc_rlda, DropoutMask, Freeze, Mode, ModelConfig, ModelInput,
    ModelKind, ModelParams,
};
use mvc_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Below this magnitude central differences are dominated by round-off
/// (about `ε · loss / STEP`), so entries are compared in absolute terms.
const TINY: f64 = 1e-6;
const ROUND_OFF: f64 = 1e-9;

struct Problem {
    params: ModelParams,
    ids: Vec<u32>,
    length: usize,
    gold: Vec<bool>,
    descriptions: Vec<Vec<u32>>,
}

fn problem(kind: ModelKind, softmax: bool, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        kind,
        vocab_size: 50,
        d_e: 8,
        d_c: 6,
        n_labels: 5,
        kernels: vec![7, 5, 3, 1],
        lambda: 0.05,
        attention_softmax: softmax,
        length_feature: true,
    };
    let emb = Tensor::glorot(&[50, 8], 50, 8, &mut rng);
    let mut params = ModelParams::init(config, emb, seed).unwrap();
    // Move the zero-initialised scalars away from zero so every path is exercised.
    for t in [
        &mut params.weights.heads.output_bias,
        &mut params.weights.heads.length_weight,
        &mut params.weights.heads.length_bias,
    ] {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    for ch in &mut params.weights.channels {
        ch.bias
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    // Keep logits moderate: unnormalised attention grows with document length.
    params.weights.heads.output.scale(0.2);
    let ids = (0..30).map(|_| rng.gen_range(0..50)).collect();
    let descriptions = (0..5)
        .map(|_| {
            (0..rng.gen_range(2..9))
                .map(|_| rng.gen_range(0..50))
                .collect()
        })
        .collect();
    Problem {
        params,
        ids,
        length: 1234,
        gold: vec![true, false, true, true, false],
        descriptions,
    }
}

fn total_loss(p: &Problem, params: &ModelParams, mode: Mode<'_>) -> f64 {
    let input = ModelInput {
        token_ids: &p.ids,
        length: p.length,
    };
    let y = forward(params, input, mode).unwrap();
    loss_mvc_rlda(&y, &p.gold, params, &p.descriptions).unwrap()
}

/// Largest relative error between analytic and central-difference gradients.
fn max_relative_error(p: &Problem, mode: Mode<'_>) -> (f64, String) {
    let input = ModelInput {
        token_ids: &p.ids,
        length: p.length,
    };
    let (_, grad) = backward(
        &p.params,
        input,
        &p.gold,
        Some(&p.descriptions),
        mode,
        Freeze::default(),
    )
    .unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    let mut worst = (0.0, String::new());
    let mut probe = p.params.clone();
    for (ti, (name, values)) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let orig = probe.weights.tensors_mut()[ti].data()[i];
            probe.weights.tensors_mut()[ti].data_mut()[i] = orig + STEP;
            let up = total_loss(p, &probe, mode);
            probe.weights.tensors_mut()[ti].data_mut()[i] = orig - STEP;
            let down = total_loss(p, &probe, mode);
            probe.weights.tensors_mut()[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < TINY {
                (a - numeric).abs() / ROUND_OFF * TOLERANCE
            } else {
                (a - numeric).abs() / scale
            };
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{name}[{i}] analytic {a:e} numeric {numeric:e}"),
                );
            }
        }
    }
    worst
}

fn check(kind: ModelKind, softmax: bool, dropout: bool) {
    let p = problem(kind, softmax, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mask = DropoutMask::sample(0.2, p.ids.len(), 8, 5, 6, &mut rng);
    let mode = if dropout {
        Mode::Train(&mask)
    } else {
        Mode::Eval
    };
    let (err, at) = max_relative_error(&p, mode);
    assert!(
        err < TOLERANCE,
        "{kind} softmax={softmax} dropout={dropout}: {err:e} at {at}"
    );
}

#[test]
fn lda_gradients_match_finite_differences() {
    check(ModelKind::MvcLda, false, false);
}

#[test]
fn rlda_gradients_match_finite_differences() {
    check(ModelKind::MvcRlda, false, false);
}

#[test]
fn gradients_with_fixed_dropout_mask() {
    check(ModelKind::MvcLda, false, true);
    check(ModelKind::MvcRlda, false, true);
}

#[test]
fn gradients_with_softmax_attention() {
    check(ModelKind::MvcLda, true, false);
    check(ModelKind::MvcRlda, true, true);
}
