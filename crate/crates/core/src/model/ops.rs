use rand::Rng;

use super::{ConvChannel, DescEncoderParams, GradientSet, ModelParams, LENGTH_SCALE, LOSS_EPS};
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Tensor};

/// Token ids fed to the network plus the untruncated length used by the
/// length feature.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub token_ids: &'a [u32],
    pub length: usize,
}

impl<'a> ModelInput<'a> {
    pub fn new(token_ids: &'a [u32]) -> Self {
        ModelInput {
            token_ids,
            length: token_ids.len(),
        }
    }
}

/// Inverted-dropout multipliers for the embedded input and the pooled
/// per-label vectors. Entries are `0` or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    input: Vec<f64>,
    pooled: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(
        rate: f64,
        n_tokens: usize,
        d_e: usize,
        n_labels: usize,
        d_c: usize,
        rng: &mut R,
    ) -> Self {
        if rate == 0.0 {
            return DropoutMask::ones(n_tokens, d_e, n_labels, d_c);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let input = draw(n_tokens * d_e);
        let pooled = draw(n_labels * d_c);
        DropoutMask { input, pooled }
    }

    pub fn ones(n_tokens: usize, d_e: usize, n_labels: usize, d_c: usize) -> Self {
        DropoutMask {
            input: vec![1.0; n_tokens * d_e],
            pooled: vec![1.0; n_labels * d_c],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DropoutMask),
}

/// Parameter groups that receive no gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Freeze {
    pub embeddings: bool,
    /// Treat `f(D_j)` as a fixed target: no gradient into the encoder or,
    /// through it, into the embedding table.
    pub description: bool,
}

fn lookup(ids: &[u32], table: &Tensor) -> Result<Vec<f64>> {
    let rows = table.shape()[0];
    let mut x = Vec::with_capacity(ids.len() * table.row_width());
    for &id in ids {
        if id as usize >= rows {
            return Err(Error::Dimension(format!(
                "token id {id} outside embedding table of {rows} rows"
            )));
        }
        x.extend_from_slice(table.row(id as usize));
    }
    Ok(x)
}

/// Adds the length-preserving convolution of `x` (`l × d_e`) with `w`
/// (`s × d_e × d_c`) into `out` (`l × d_c`). Padding is `s / 2` zeros on the
/// left and `(s - 1) / 2` on the right.
fn conv_accumulate(
    x: &[f64],
    l: usize,
    d_e: usize,
    w: &[f64],
    s: usize,
    d_c: usize,
    out: &mut [f64],
) {
    let left = s / 2;
    for n in 0..l {
        let o = &mut out[n * d_c..(n + 1) * d_c];
        for t in 0..s {
            let Some(pos) = (n + t).checked_sub(left).filter(|&p| p < l) else {
                continue;
            };
            let xr = &x[pos * d_e..(pos + 1) * d_e];
            let wt = &w[t * d_e * d_c..(t + 1) * d_e * d_c];
            for (e, &xv) in xr.iter().enumerate() {
                for (ok, wk) in o.iter_mut().zip(&wt[e * d_c..(e + 1) * d_c]) {
                    *ok += xv * wk;
                }
            }
        }
    }
}

/// Backward of [`conv_accumulate`] given `dz` (`l × d_c`).
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    l: usize,
    d_e: usize,
    w: &[f64],
    s: usize,
    d_c: usize,
    dz: &[f64],
    dw: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let left = s / 2;
    for n in 0..l {
        let g = &dz[n * d_c..(n + 1) * d_c];
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        for t in 0..s {
            let Some(pos) = (n + t).checked_sub(left).filter(|&p| p < l) else {
                continue;
            };
            let base = t * d_e * d_c;
            for e in 0..d_e {
                let xv = x[pos * d_e + e];
                let wrow = &w[base + e * d_c..base + (e + 1) * d_c];
                let dwrow = &mut dw[base + e * d_c..base + (e + 1) * d_c];
                for (d, gk) in dwrow.iter_mut().zip(g) {
                    *d += xv * gk;
                }
                if let Some(dx) = dx.as_deref_mut() {
                    dx[pos * d_e + e] += dot(wrow, g);
                }
            }
        }
    }
}

fn scatter_rows(ids: &[u32], dx: &[f64], d_e: usize, table: &mut Tensor) {
    for (n, &id) in ids.iter().enumerate() {
        for (a, b) in table
            .row_mut(id as usize)
            .iter_mut()
            .zip(&dx[n * d_e..(n + 1) * d_e])
        {
            *a += b;
        }
    }
}

/// Pre-activation cross-channel maximum and the winning channel per cell.
/// Ties keep the lowest channel index.
fn conv_max(
    x: &[f64],
    l: usize,
    d_e: usize,
    d_c: usize,
    channels: &[ConvChannel],
) -> (Vec<f64>, Vec<u8>) {
    let mut m = vec![0.0; l * d_c];
    let mut arg = vec![0u8; l * d_c];
    let mut z = vec![0.0; l * d_c];
    for (i, ch) in channels.iter().enumerate() {
        let buf = if i == 0 { &mut m } else { &mut z };
        for row in buf.chunks_exact_mut(d_c) {
            row.copy_from_slice(ch.bias.data());
        }
        conv_accumulate(x, l, d_e, ch.weight.data(), ch.kernel(), d_c, buf);
        if i > 0 {
            for ((mv, a), &zv) in m.iter_mut().zip(arg.iter_mut()).zip(&z) {
                if zv > *mv {
                    *mv = zv;
                    *a = i as u8;
                }
            }
        }
    }
    (m, arg)
}

fn check_channels(d_e: usize, channels: &[ConvChannel]) -> Result<usize> {
    let first = channels
        .first()
        .ok_or(Error::Empty("convolution channels"))?;
    let d_c = first.weight.shape()[2];
    for ch in channels {
        let sh = ch.weight.shape();
        if sh.len() != 3 || sh[1] != d_e || sh[2] != d_c || ch.bias.shape() != [d_c] {
            return Err(Error::Dimension(format!(
                "channel weight {sh:?} / bias {:?} incompatible with d_e = {d_e}, d_c = {d_c}",
                ch.bias.shape()
            )));
        }
    }
    Ok(d_c)
}

/// `C = tanh(max_i (W_i * X + bias_i))` for an `l × d_e` input.
pub fn multi_view_conv(x: &Tensor, channels: &[ConvChannel]) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension("convolution input must be l × d_e".into()));
    }
    let (l, d_e) = (x.shape()[0], x.shape()[1]);
    let d_c = check_channels(d_e, channels)?;
    let (mut m, _) = conv_max(x.data(), l, d_e, d_c, channels);
    m.iter_mut().for_each(|v| *v = v.tanh());
    Tensor::from_vec(&[l, d_c], m)
}

/// Scores `a = C v`, optionally normalised by a softmax over positions.
fn attention_scores(c: &[f64], d_c: usize, v: &[f64], softmax: bool, a: &mut Vec<f64>) {
    a.clear();
    a.extend(c.chunks_exact(d_c).map(|row| dot(row, v)));
    if softmax {
        let mx = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in a.iter_mut() {
            *s = (*s - mx).exp();
            total += *s;
        }
        a.iter_mut().for_each(|s| *s /= total);
    }
}

fn pool_into(c: &[f64], d_c: usize, a: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (row, &an) in c.chunks_exact(d_c).zip(a) {
        for (o, ck) in out.iter_mut().zip(row) {
            *o += an * ck;
        }
    }
}

/// `P = Cᵀ (C v)`.
pub fn attention_pool(c: &Tensor, v: &[f64], softmax: bool) -> Result<Vec<f64>> {
    if c.shape().len() != 2 || c.shape()[1] != v.len() {
        return Err(Error::Dimension(format!(
            "attention vector of {} entries against frames {:?}",
            v.len(),
            c.shape()
        )));
    }
    if c.shape()[0] == 0 {
        return Err(Error::Empty("attention frames"));
    }
    let d_c = v.len();
    let mut a = Vec::new();
    attention_scores(c.data(), d_c, v, softmax, &mut a);
    let mut p = vec![0.0; d_c];
    pool_into(c.data(), d_c, &a, &mut p);
    Ok(p)
}

/// `T(l) = σ(K · l / LENGTH_SCALE + d)`.
pub fn length_embed(length: usize, k: f64, d: f64) -> f64 {
    sigmoid(k * length as f64 / LENGTH_SCALE + d)
}

struct DescActivations {
    x: Vec<f64>,
    argpos: Vec<usize>,
    h: Vec<f64>,
    f: Vec<f64>,
}

fn desc_forward(
    ids: &[u32],
    desc: &DescEncoderParams,
    embedding: &Tensor,
) -> Result<DescActivations> {
    if ids.is_empty() {
        return Err(Error::Empty("label description"));
    }
    let (s, d_e, d_c) = (
        desc.conv.shape()[0],
        desc.conv.shape()[1],
        desc.conv.shape()[2],
    );
    if embedding.shape()[1] != d_e {
        return Err(Error::Dimension(
            "description encoder and embedding width differ".into(),
        ));
    }
    let n = ids.len();
    let x = lookup(ids, embedding)?;
    let mut z = vec![0.0; n * d_c];
    conv_accumulate(&x, n, d_e, desc.conv.data(), s, d_c, &mut z);
    let mut h = z[..d_c].to_vec();
    let mut argpos = vec![0usize; d_c];
    for (p, row) in z.chunks_exact(d_c).enumerate().skip(1) {
        for k in 0..d_c {
            if row[k] > h[k] {
                h[k] = row[k];
                argpos[k] = p;
            }
        }
    }
    let f = (0..d_c)
        .map(|k| sigmoid(dot(desc.dense.row(k), &h) + desc.dense_bias.data()[k]))
        .collect();
    Ok(DescActivations { x, argpos, h, f })
}

fn desc_backward(
    ids: &[u32],
    desc: &DescEncoderParams,
    act: &DescActivations,
    df: &[f64],
    grad: &mut DescEncoderParams,
    grad_embedding: Option<&mut Tensor>,
) {
    let (s, d_e, d_c) = (
        desc.conv.shape()[0],
        desc.conv.shape()[1],
        desc.conv.shape()[2],
    );
    let n = ids.len();
    let mut dh = vec![0.0; d_c];
    for k in 0..d_c {
        let fk = act.f[k];
        let dout = df[k] * fk * (1.0 - fk);
        grad.dense_bias.data_mut()[k] += dout;
        for (g, hm) in grad.dense.row_mut(k).iter_mut().zip(&act.h) {
            *g += dout * hm;
        }
        for (d, w) in dh.iter_mut().zip(desc.dense.row(k)) {
            *d += w * dout;
        }
    }
    let mut dz = vec![0.0; n * d_c];
    for k in 0..d_c {
        dz[act.argpos[k] * d_c + k] = dh[k];
    }
    match grad_embedding {
        Some(table) => {
            let mut dx = vec![0.0; n * d_e];
            conv_backward(
                &act.x,
                n,
                d_e,
                desc.conv.data(),
                s,
                d_c,
                &dz,
                grad.conv.data_mut(),
                Some(&mut dx),
            );
            scatter_rows(ids, &dx, d_e, table);
        }
        None => conv_backward(
            &act.x,
            n,
            d_e,
            desc.conv.data(),
            s,
            d_c,
            &dz,
            grad.conv.data_mut(),
            None,
        ),
    }
}

/// `f(D) = σ(W · maxpool(conv(embed(D))) + b)`.
pub fn encode_description(
    ids: &[u32],
    desc: &DescEncoderParams,
    embedding: &Tensor,
) -> Result<Vec<f64>> {
    Ok(desc_forward(ids, desc, embedding)?.f)
}

struct Activations {
    x: Vec<f64>,
    arg: Vec<u8>,
    c: Vec<f64>,
    pooled: Vec<f64>,
    t: Vec<f64>,
    y: Vec<f64>,
}

fn forward_pass(
    params: &ModelParams,
    input: ModelInput<'_>,
    mode: Mode<'_>,
) -> Result<Activations> {
    let cfg = &params.config;
    let w = &params.weights;
    let (d_e, d_c, n_labels) = (cfg.d_e, cfg.d_c, cfg.n_labels);
    let l = input.token_ids.len();
    if l == 0 {
        return Err(Error::Empty("document tokens"));
    }
    let mut x = lookup(input.token_ids, &w.embedding)?;
    let mask = match mode {
        Mode::Eval => None,
        Mode::Train(m) => {
            if m.input.len() != l * d_e || m.pooled.len() != n_labels * d_c {
                return Err(Error::Dimension(
                    "dropout mask does not match the input".into(),
                ));
            }
            x.iter_mut().zip(&m.input).for_each(|(v, k)| *v *= k);
            Some(m)
        }
    };
    let (mut c, arg) = conv_max(&x, l, d_e, d_c, &w.channels);
    c.iter_mut().for_each(|v| *v = v.tanh());

    let mut pooled = vec![0.0; n_labels * d_c];
    let mut t = vec![0.0; n_labels];
    let mut y = vec![0.0; n_labels];
    let mut a = Vec::with_capacity(l);
    let mut dropped = vec![0.0; d_c];
    for j in 0..n_labels {
        let head = w.heads.head(j);
        attention_scores(&c, d_c, head.attention, cfg.attention_softmax, &mut a);
        let p = &mut pooled[j * d_c..(j + 1) * d_c];
        pool_into(&c, d_c, &a, p);
        dropped.copy_from_slice(p);
        if let Some(m) = mask {
            dropped
                .iter_mut()
                .zip(&m.pooled[j * d_c..])
                .for_each(|(v, k)| *v *= k);
        }
        let mut logit = dot(head.output, &dropped) + head.output_bias;
        if cfg.length_feature {
            t[j] = length_embed(input.length, head.length_weight, head.length_bias);
            logit += t[j];
        }
        y[j] = sigmoid(logit);
        if !y[j].is_finite() {
            return Err(Error::NonFinite(format!("output of label {j}")));
        }
    }
    Ok(Activations {
        x,
        arg,
        c,
        pooled,
        t,
        y,
    })
}

/// Label probabilities `y`. Pass [`Mode::Train`] with a mask to apply dropout.
pub fn forward(params: &ModelParams, input: ModelInput<'_>, mode: Mode<'_>) -> Result<Vec<f64>> {
    Ok(forward_pass(params, input, mode)?.y)
}

fn bce(y: f64, g: bool) -> f64 {
    let y = y.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    if g {
        -y.ln()
    } else {
        -(1.0 - y).ln()
    }
}

/// Binary cross-entropy summed over labels.
pub fn loss_mvc_lda(y: &[f64], gold: &[bool]) -> f64 {
    assert_eq!(
        y.len(),
        gold.len(),
        "prediction and gold vectors differ in length"
    );
    y.iter().zip(gold).map(|(&yj, &gj)| bce(yj, gj)).sum()
}

fn check_descriptions<'a>(
    params: &ModelParams,
    descriptions: Option<&'a [Vec<u32>]>,
) -> Result<&'a [Vec<u32>]> {
    let d = descriptions
        .ok_or_else(|| Error::Config("the regularised model needs label descriptions".into()))?;
    if d.len() != params.config.n_labels {
        return Err(Error::Dimension(format!(
            "{} descriptions for {} labels",
            d.len(),
            params.config.n_labels
        )));
    }
    Ok(d)
}

/// Squared distance `‖V_j - f(D_j)‖²` together with its difference vector.
fn regularizer_term(
    params: &ModelParams,
    j: usize,
    desc_ids: &[u32],
) -> Result<(f64, Vec<f64>, DescActivations)> {
    let desc = params
        .weights
        .desc
        .as_ref()
        .ok_or_else(|| Error::Config("model has no description encoder".into()))?;
    let act = desc_forward(desc_ids, desc, &params.weights.embedding)?;
    let diff: Vec<f64> = params
        .weights
        .heads
        .attention
        .row(j)
        .iter()
        .zip(&act.f)
        .map(|(v, f)| v - f)
        .collect();
    let sq = diff.iter().map(|d| d * d).sum();
    Ok((sq, diff, act))
}

/// Cross-entropy plus `λ Σ_j g_j ‖V_j - f(D_j)‖²`. Equals [`loss_mvc_lda`]
/// for the unregularised model or λ = 0.
pub fn loss_mvc_rlda(
    y: &[f64],
    gold: &[bool],
    params: &ModelParams,
    descriptions: &[Vec<u32>],
) -> Result<f64> {
    let mut loss = loss_mvc_lda(y, gold);
    if !params.config.regularized() {
        return Ok(loss);
    }
    let descriptions = check_descriptions(params, Some(descriptions))?;
    for (j, _) in gold.iter().enumerate().filter(|(_, &g)| g) {
        let (sq, _, _) = regularizer_term(params, j, &descriptions[j])?;
        loss += params.config.lambda * sq;
    }
    Ok(loss)
}

/// Loss of one sample and its gradient with respect to every tensor.
pub fn backward(
    params: &ModelParams,
    input: ModelInput<'_>,
    gold: &[bool],
    descriptions: Option<&[Vec<u32>]>,
    mode: Mode<'_>,
    freeze: Freeze,
) -> Result<(f64, GradientSet)> {
    let cfg = &params.config;
    let w = &params.weights;
    let (d_e, d_c, n_labels) = (cfg.d_e, cfg.d_c, cfg.n_labels);
    if gold.len() != n_labels {
        return Err(Error::Dimension(format!(
            "gold vector has {} labels, model {}",
            gold.len(),
            n_labels
        )));
    }
    let descriptions = if cfg.regularized() {
        Some(check_descriptions(params, descriptions)?)
    } else {
        None
    };
    let act = forward_pass(params, input, mode)?;
    let mask = match mode {
        Mode::Eval => None,
        Mode::Train(m) => Some(m),
    };
    let l = input.token_ids.len();
    let mut grad = w.zeros_like();
    let mut loss = loss_mvc_lda(&act.y, gold);

    let mut dc = vec![0.0; l * d_c];
    let mut a = Vec::with_capacity(l);
    let mut q = vec![0.0; d_c];
    let mut r = vec![0.0; l];
    for j in 0..n_labels {
        let head = w.heads.head(j);
        let delta = act.y[j] - if gold[j] { 1.0 } else { 0.0 };
        let pm = mask.map(|m| &m.pooled[j * d_c..(j + 1) * d_c]);
        let p = &act.pooled[j * d_c..(j + 1) * d_c];
        {
            let gu = grad.heads.output.row_mut(j);
            for k in 0..d_c {
                let keep = pm.map_or(1.0, |m| m[k]);
                gu[k] += delta * p[k] * keep;
                q[k] = delta * head.output[k] * keep;
            }
        }
        grad.heads.output_bias.data_mut()[j] += delta;
        if cfg.length_feature {
            let tj = act.t[j];
            let dt = delta * tj * (1.0 - tj);
            grad.heads.length_bias.data_mut()[j] += dt;
            grad.heads.length_weight.data_mut()[j] += dt * input.length as f64 / LENGTH_SCALE;
        }

        attention_scores(&act.c, d_c, head.attention, cfg.attention_softmax, &mut a);
        for (rn, row) in r.iter_mut().zip(act.c.chunks_exact(d_c)) {
            *rn = dot(row, &q);
        }
        if cfg.attention_softmax {
            // dP/dα_n = c_n; back through the softmax to the raw scores.
            let mean: f64 = a.iter().zip(&r).map(|(an, rn)| an * rn).sum();
            for (rn, an) in r.iter_mut().zip(&a) {
                *rn = an * (*rn - mean);
            }
        }
        // Now `a` holds the pooling weights and `r` the score gradients.
        let gv = grad.heads.attention.row_mut(j);
        for n in 0..l {
            let row = &act.c[n * d_c..(n + 1) * d_c];
            let drow = &mut dc[n * d_c..(n + 1) * d_c];
            let (an, rn) = (a[n], r[n]);
            for k in 0..d_c {
                drow[k] += an * q[k] + rn * head.attention[k];
                gv[k] += rn * row[k];
            }
        }
    }

    if let Some(descriptions) = descriptions {
        let lambda = cfg.lambda;
        for j in (0..n_labels).filter(|&j| gold[j]) {
            let (sq, diff, dact) = regularizer_term(params, j, &descriptions[j])?;
            loss += lambda * sq;
            for (g, d) in grad.heads.attention.row_mut(j).iter_mut().zip(&diff) {
                *g += 2.0 * lambda * d;
            }
            if !freeze.description {
                let df: Vec<f64> = diff.iter().map(|d| -2.0 * lambda * d).collect();
                let desc = w.desc.as_ref().expect("checked by regularizer_term");
                let gdesc = grad.desc.as_mut().expect("gradient layout mirrors params");
                let gemb = (!freeze.embeddings).then_some(&mut grad.embedding);
                desc_backward(&descriptions[j], desc, &dact, &df, gdesc, gemb);
            }
        }
    }

    // Through tanh, then only into the channel that won each cell.
    for (d, cv) in dc.iter_mut().zip(&act.c) {
        *d *= 1.0 - cv * cv;
    }
    let mut dx = (!freeze.embeddings).then(|| vec![0.0; l * d_e]);
    let mut dz = vec![0.0; l * d_c];
    for (i, ch) in w.channels.iter().enumerate() {
        let mut any = false;
        for ((z, &dm), &ai) in dz.iter_mut().zip(&dc).zip(&act.arg) {
            *z = if ai as usize == i { dm } else { 0.0 };
            any |= *z != 0.0;
        }
        if !any {
            continue;
        }
        let gch = &mut grad.channels[i];
        for row in dz.chunks_exact(d_c) {
            for (b, v) in gch.bias.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        conv_backward(
            &act.x,
            l,
            d_e,
            ch.weight.data(),
            ch.kernel(),
            d_c,
            &dz,
            gch.weight.data_mut(),
            dx.as_deref_mut(),
        );
    }
    if let Some(mut dx) = dx {
        if let Some(m) = mask {
            dx.iter_mut().zip(&m.input).for_each(|(v, k)| *v *= k);
        }
        scatter_rows(input.token_ids, &dx, d_e, &mut grad.embedding);
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{ModelConfig, ModelKind};

    fn channel(s: usize, w: Vec<f64>) -> ConvChannel {
        ConvChannel {
            weight: Tensor::from_vec(&[s, 1, 1], w).unwrap(),
            bias: Tensor::zeros(&[1]),
        }
    }

    #[test]
    fn conv_max_hand_example() {
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let chans = [channel(1, vec![1.0]), channel(3, vec![0.5, 0.5, 0.5])];
        let c = multi_view_conv(&x, &chans).unwrap();
        let want = [1.5f64.tanh(), 3.0f64.tanh(), 3.0f64.tanh()];
        for (a, b) in c.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_padding_is_left_heavy() {
        // Kernel 2 with weights [1, 10]: position n sees x[n-1] and x[n].
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let z: Vec<f64> = multi_view_conv(&x, &[channel(2, vec![0.01, 0.1])])
            .unwrap()
            .data()
            .iter()
            .map(|v| v.atanh())
            .collect();
        let want = [0.1, 0.01 + 0.2, 0.02 + 0.3];
        for (a, b) in z.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{z:?}");
        }
    }

    #[test]
    fn attention_hand_example() {
        let c = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            attention_pool(&c, &[1.0, 2.0], false).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            attention_pool(&c, &[0.0, 0.0], false).unwrap(),
            vec![0.0, 0.0]
        );
        let empty = Tensor::zeros(&[0, 2]);
        assert!(attention_pool(&empty, &[1.0, 2.0], false).is_err());
        let soft = attention_pool(&c, &[0.0, 0.0], true).unwrap();
        assert_eq!(soft, vec![0.5, 0.5]);
    }

    #[test]
    fn length_and_loss_scalars() {
        assert_eq!(length_embed(123, 0.0, 0.0), 0.5);
        assert!((length_embed(5000, 1.0, 0.0) - 0.622_459_331_201_854_6).abs() < 1e-12);
        assert!((loss_mvc_lda(&[0.5], &[true]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(
            (loss_mvc_lda(&[0.5, 0.5], &[true, false]) - 2.0 * std::f64::consts::LN_2).abs()
                < 1e-12
        );
        assert!(loss_mvc_lda(&[0.0, 1.0], &[true, false]).is_finite());
    }

    fn tiny(kind: ModelKind) -> ModelParams {
        let cfg = ModelConfig {
            kind,
            vocab_size: 6,
            d_e: 3,
            d_c: 2,
            n_labels: 3,
            kernels: vec![3, 1],
            lambda: 0.5,
            attention_softmax: false,
            length_feature: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = Tensor::glorot(&[6, 3], 6, 3, &mut rng);
        ModelParams::init(cfg, emb, 2).unwrap()
    }

    #[test]
    fn zero_weights_give_half_logit() {
        let mut p = tiny(ModelKind::MvcLda);
        p.weights
            .tensors_mut()
            .into_iter()
            .for_each(|t| t.fill(0.0));
        let y = forward(&p, ModelInput::new(&[1, 2, 3]), Mode::Eval).unwrap();
        for v in y {
            assert!((v - 0.622_459_331_201_854_6).abs() < 1e-12);
        }
        assert!(forward(&p, ModelInput::new(&[]), Mode::Eval).is_err());
    }

    #[test]
    fn regulariser_vanishes_without_positives() {
        let p = tiny(ModelKind::MvcRlda);
        let descs = vec![vec![1, 2], vec![3], vec![4, 5, 0]];
        let y = forward(&p, ModelInput::new(&[1, 2, 3, 4]), Mode::Eval).unwrap();
        let g = [false; 3];
        assert_eq!(
            loss_mvc_rlda(&y, &g, &p, &descs).unwrap(),
            loss_mvc_lda(&y, &g)
        );
        let g = [true, false, true];
        assert!(loss_mvc_rlda(&y, &g, &p, &descs).unwrap() > loss_mvc_lda(&y, &g));
    }

    #[test]
    fn backward_loss_matches_loss_functions() {
        let p = tiny(ModelKind::MvcRlda);
        let descs = vec![vec![1, 2], vec![3], vec![4, 5, 0]];
        let ids = [1, 2, 3, 4, 0];
        let g = [true, false, true];
        let y = forward(&p, ModelInput::new(&ids), Mode::Eval).unwrap();
        let (loss, grad) = backward(
            &p,
            ModelInput::new(&ids),
            &g,
            Some(&descs),
            Mode::Eval,
            Freeze::default(),
        )
        .unwrap();
        assert!((loss - loss_mvc_rlda(&y, &g, &p, &descs).unwrap()).abs() < 1e-12);
        assert_eq!(grad.n_values(), p.weights.n_values());
        assert!(backward(
            &p,
            ModelInput::new(&ids),
            &g,
            None,
            Mode::Eval,
            Freeze::default()
        )
        .is_err());
    }

    #[test]
    fn frozen_groups_get_no_gradient() {
        let p = tiny(ModelKind::MvcRlda);
        let descs = vec![vec![1, 2], vec![3], vec![4, 5, 0]];
        let freeze = Freeze {
            embeddings: true,
            description: true,
        };
        let (_, grad) = backward(
            &p,
            ModelInput::new(&[1, 2, 3]),
            &[true, true, false],
            Some(&descs),
            Mode::Eval,
            freeze,
        )
        .unwrap();
        assert_eq!(grad.embedding.squared_norm(), 0.0);
        let d = grad.desc.unwrap();
        assert_eq!(
            d.conv.squared_norm() + d.dense.squared_norm() + d.dense_bias.squared_norm(),
            0.0
        );
        assert!(grad.heads.attention.squared_norm() > 0.0);
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DropoutMask::sample(0.2, 100, 10, 10, 10, &mut rng);
        let zeros = m.input.iter().filter(|&&v| v == 0.0).count();
        assert!((150..250).contains(&zeros), "{zeros}");
        assert!(m
            .input
            .iter()
            .all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        assert_eq!(
            DropoutMask::sample(0.0, 2, 2, 2, 2, &mut rng),
            DropoutMask::ones(2, 2, 2, 2)
        );
    }
}
