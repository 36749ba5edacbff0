//! Forward prediction and backpropagation through time for the
//! embedding → GRU → sigmoid predictor.
//!
//! Per step `t`:
//!
//! ```text
//! v_t = W_emb · y_t
//! z   = σ(W_z v_t + U_z h_{t-1} + b_z)
//! r   = σ(W_r v_t + U_r h_{t-1} + b_r)
//! c   = tanh(W_h v_t + U_h (r ⊙ h_{t-1}) + b_h)
//! h_t = (1 − z) ⊙ h_{t-1} + z ⊙ c
//! ŷ′_{t+1} = σ(W_o h_t + b_o)
//! ```

use serde::{Deserialize, Serialize};

use crate::data::{BinaryVector, EventSequence, History};
use crate::error::{Error, Result};
use crate::model::{ModelParameters, ParamId};
use crate::optim::ParameterMask;
use crate::tensor::{matvec_acc, matvec_into, matvec_t_acc, outer_acc, sigmoid_scalar, Tensor1};

/// Probabilities are kept this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    pub h: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
        }
    }
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct StepCache {
    v: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
}

fn check_input(p: &ModelParameters, y: &BinaryVector) -> Result<()> {
    let n = p.signature().n_inputs;
    if y.len() != n {
        return Err(Error::dim("input vector vs |E|", n, y.len()));
    }
    Ok(())
}

fn check_target(p: &ModelParameters, y: &BinaryVector) -> Result<()> {
    let n = p.signature().n_targets;
    if y.len() != n {
        return Err(Error::dim("target vector vs |E′|", n, y.len()));
    }
    Ok(())
}

fn embed_into(p: &ModelParameters, y: &BinaryVector, v: &mut [f64]) {
    let n = p.signature().n_inputs;
    let w = p.w_emb.as_slice();
    for (r, out) in v.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        *out = y.active().map(|k| row[k]).sum();
    }
}

/// `v_t = W_emb · y_t`: the sum of the embedding columns of active events.
pub fn embed(p: &ModelParameters, y: &BinaryVector) -> Result<Tensor1> {
    check_input(p, y)?;
    let mut v = vec![0.0; p.signature().embed_dim];
    embed_into(p, y, &mut v);
    Tensor1::from_vec(v)
}

/// Gate computations shared by every forward entry point.
fn gru_into(p: &ModelParameters, h_prev: &[f64], v: &[f64], c: &mut StepCache) {
    let hd = h_prev.len();
    c.z.clear();
    c.z.extend_from_slice(p.b_z.as_slice());
    matvec_acc(&p.w_z, v, &mut c.z);
    matvec_acc(&p.u_z, h_prev, &mut c.z);
    c.z.iter_mut().for_each(|x| *x = sigmoid_scalar(*x));

    c.r.clear();
    c.r.extend_from_slice(p.b_r.as_slice());
    matvec_acc(&p.w_r, v, &mut c.r);
    matvec_acc(&p.u_r, h_prev, &mut c.r);
    c.r.iter_mut().for_each(|x| *x = sigmoid_scalar(*x));

    c.rh.clear();
    c.rh.extend(c.r.iter().zip(h_prev).map(|(r, h)| r * h));

    c.c.clear();
    c.c.extend_from_slice(p.b_h.as_slice());
    matvec_acc(&p.w_h, v, &mut c.c);
    matvec_acc(&p.u_h, &c.rh, &mut c.c);
    c.c.iter_mut().for_each(|x| *x = x.tanh());

    c.h.clear();
    c.h.extend((0..hd).map(|j| (1.0 - c.z[j]) * h_prev[j] + c.z[j] * c.c[j]));
}

fn output_into(p: &ModelParameters, h: &[f64], out: &mut Vec<f64>) {
    out.resize(p.signature().n_targets, 0.0);
    matvec_into(&p.w_o, h, out);
    for (o, &b) in out.iter_mut().zip(p.b_o.as_slice()) {
        *o = sigmoid_scalar(*o + b);
    }
}

fn step_into(p: &ModelParameters, h_prev: &[f64], y: &BinaryVector, c: &mut StepCache) {
    c.v.resize(p.signature().embed_dim, 0.0);
    embed_into(p, y, &mut c.v);
    c.h_prev.clear();
    c.h_prev.extend_from_slice(h_prev);
    let v = std::mem::take(&mut c.v);
    gru_into(p, h_prev, &v, c);
    c.v = v;
    let h = std::mem::take(&mut c.h);
    output_into(p, &h, &mut c.p);
    c.h = h;
}

/// One recurrent transition `h_t = GRU(h_{t−1}, v_t)`.
pub fn gru_step(p: &ModelParameters, h_prev: &HiddenState, v: &Tensor1) -> Result<HiddenState> {
    let sig = p.signature();
    if h_prev.h.len() != sig.hidden_dim {
        return Err(Error::dim("hidden state vs hidden_dim", sig.hidden_dim, h_prev.h.len()));
    }
    if v.len() != sig.embed_dim {
        return Err(Error::dim("embedding vs embed_dim", sig.embed_dim, v.len()));
    }
    let mut c = StepCache::default();
    gru_into(p, &h_prev.h, v.as_slice(), &mut c);
    crate::tensor::check_finite("gru_step", &c.h)?;
    Ok(HiddenState { h: c.h })
}

/// Reads `y_t`, advances the hidden state, and returns `ŷ′_{t+1}`.
pub fn predict_step(p: &ModelParameters, h_prev: &HiddenState, y: &BinaryVector) -> Result<(HiddenState, Vec<f64>)> {
    check_input(p, y)?;
    if h_prev.h.len() != p.signature().hidden_dim {
        return Err(Error::dim("hidden state vs hidden_dim", p.signature().hidden_dim, h_prev.h.len()));
    }
    let mut c = StepCache::default();
    step_into(p, &h_prev.h, y, &mut c);
    crate::tensor::check_finite("predict_step", &c.h)?;
    Ok((HiddenState { h: c.h }, c.p))
}

/// Replays `inputs` from the zero state; element `j` is the prediction made
/// after reading `inputs[..=j]`.
pub fn predict_sequence(p: &ModelParameters, inputs: &[BinaryVector]) -> Result<Vec<Vec<f64>>> {
    let mut c = StepCache::default();
    let mut h = vec![0.0; p.signature().hidden_dim];
    let mut out = Vec::with_capacity(inputs.len());
    for y in inputs {
        check_input(p, y)?;
        step_into(p, &h, y, &mut c);
        std::mem::swap(&mut h, &mut c.h);
        out.push(c.p.clone());
    }
    crate::tensor::check_finite("predict_sequence", &h)?;
    Ok(out)
}

/// Binary cross-entropy summed over target dimensions.
pub fn bce_event_loss(target: &BinaryVector, pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::dim("bce_event_loss", target.len(), pred.len()));
    }
    Ok(bce_unchecked(target, pred))
}

fn bce_unchecked(target: &BinaryVector, pred: &[f64]) -> f64 {
    let mut loss = 0.0;
    let mut active = target.active().peekable();
    for (k, &q) in pred.iter().enumerate() {
        let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let on = active.peek() == Some(&k);
        if on {
            active.next();
            loss -= q.ln();
        } else {
            loss -= (1.0 - q).ln();
        }
    }
    loss
}

/// Per-step losses `e(y′_{i+1}, ŷ′_{i+1})` for `i = 1..t−1` of a history.
pub fn step_losses(p: &ModelParameters, history: &History<'_>) -> Result<Vec<f64>> {
    let n = history.num_observed();
    let preds = predict_sequence(p, &history.inputs[..n])?;
    history
        .targets
        .iter()
        .zip(&preds)
        .map(|(y, q)| {
            check_target(p, y)?;
            Ok(bce_unchecked(y, q))
        })
        .collect()
}

/// Per-step losses of the observed pairs plus the prediction for `t + 1`,
/// from a single forward pass over `y_1..y_t`.
pub fn losses_and_next_prediction(p: &ModelParameters, history: &History<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut preds = predict_sequence(p, history.inputs)?;
    let next = preds.pop().expect("history has at least one input");
    let losses = history
        .targets
        .iter()
        .zip(&preds)
        .map(|(y, q)| {
            check_target(p, y)?;
            Ok(bce_unchecked(y, q))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((losses, next))
}

/// Unweighted double sum of per-step BCE over every sequence.
pub fn sequence_loss(p: &ModelParameters, dataset: &[EventSequence]) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset {
        s.validate()?;
        total += step_losses(p, &s.full_history())?.iter().sum::<f64>();
    }
    Ok(total)
}

/// Loss and gradient of `Σᵢ wᵢ · e(y′_{i+1}, ŷ′_{i+1})`.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub grads: ModelParameters,
}

/// Exact gradient of the step-weighted BCE over a whole sequence.
pub fn backward(p: &ModelParameters, seq: &EventSequence, step_weights: &[f64]) -> Result<ModelParameters> {
    Ok(backward_history(p, &seq.full_history(), step_weights, &ParameterMask::all())?.grads)
}

/// Backpropagation through time over the observed pairs of `history`.
///
/// Only tensors enabled in `mask` receive gradients; the rest are left at
/// zero, and the recurrent part of the pass is skipped when no recurrent or
/// embedding tensor is enabled.
pub fn backward_history(
    p: &ModelParameters,
    history: &History<'_>,
    step_weights: &[f64],
    mask: &ParameterMask,
) -> Result<Backward> {
    let n = history.num_observed();
    if step_weights.len() != n {
        return Err(Error::Validation(format!(
            "{} step weights for {n} predicted steps",
            step_weights.len()
        )));
    }
    if let Some(w) = step_weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::Validation(format!("step weight {w} is not a finite non-negative value")));
    }
    let sig = p.signature();
    let hd = sig.hidden_dim;

    let mut caches: Vec<StepCache> = Vec::with_capacity(n);
    let mut h = vec![0.0; hd];
    for y in &history.inputs[..n] {
        check_input(p, y)?;
        let mut c = StepCache::default();
        step_into(p, &h, y, &mut c);
        h.clone_from(&c.h);
        caches.push(c);
    }
    crate::tensor::check_finite("forward", &h)?;

    let mut grads = ModelParameters::zeros(sig);
    let mut loss = 0.0;
    let need_output_w = mask.is_enabled(ParamId::OutputWeight);
    let need_output_b = mask.is_enabled(ParamId::OutputBias);
    let need_recurrent = mask.enabled().any(|id| !id.is_output());
    let need_embedding = mask.is_enabled(ParamId::Embedding);

    // dL/dlogit per step, needed before the recurrent sweep
    let mut dlogits: Vec<Vec<f64>> = Vec::with_capacity(n);
    for ((c, y), &w) in caches.iter().zip(history.targets).zip(step_weights) {
        check_target(p, y)?;
        loss += w * bce_unchecked(y, &c.p);
        let mut d: Vec<f64> = c.p.iter().map(|&q| w * q).collect();
        for k in y.active() {
            d[k] -= w;
        }
        if need_output_w {
            outer_acc(&mut grads.w_o, &d, &c.h);
        }
        if need_output_b {
            for (g, &dk) in grads.b_o.as_mut_slice().iter_mut().zip(&d) {
                *g += dk;
            }
        }
        dlogits.push(d);
    }

    if need_recurrent {
        let mut dh_next = vec![0.0; hd];
        let mut dh = vec![0.0; hd];
        let mut dz = vec![0.0; hd];
        let mut dr = vec![0.0; hd];
        let mut dac = vec![0.0; hd];
        let mut drh = vec![0.0; hd];
        let mut dv = vec![0.0; sig.embed_dim];
        for (c, y, d) in caches.iter().zip(history.inputs).zip(&dlogits).rev().map(|((c, y), d)| (c, y, d)) {
            dh.copy_from_slice(&dh_next);
            matvec_t_acc(&p.w_o, d, &mut dh);

            // h = (1 − z) ⊙ h_prev + z ⊙ c
            for j in 0..hd {
                let z = c.z[j];
                dac[j] = dh[j] * z * (1.0 - c.c[j] * c.c[j]);
                dz[j] = dh[j] * (c.c[j] - c.h_prev[j]) * z * (1.0 - z);
                dh_next[j] = dh[j] * (1.0 - z);
            }

            // candidate: c = tanh(W_h v + U_h (r ⊙ h_prev) + b_h)
            drh.iter_mut().for_each(|x| *x = 0.0);
            matvec_t_acc(&p.u_h, &dac, &mut drh);
            for j in 0..hd {
                dh_next[j] += drh[j] * c.r[j];
                let r = c.r[j];
                dr[j] = drh[j] * c.h_prev[j] * r * (1.0 - r);
            }
            matvec_t_acc(&p.u_z, &dz, &mut dh_next);
            matvec_t_acc(&p.u_r, &dr, &mut dh_next);

            if mask.is_enabled(ParamId::CandidateInput) {
                outer_acc(&mut grads.w_h, &dac, &c.v);
            }
            if mask.is_enabled(ParamId::CandidateRecurrent) {
                outer_acc(&mut grads.u_h, &dac, &c.rh);
            }
            if mask.is_enabled(ParamId::CandidateBias) {
                add_into(grads.b_h.as_mut_slice(), &dac);
            }
            if mask.is_enabled(ParamId::UpdateInput) {
                outer_acc(&mut grads.w_z, &dz, &c.v);
            }
            if mask.is_enabled(ParamId::UpdateRecurrent) {
                outer_acc(&mut grads.u_z, &dz, &c.h_prev);
            }
            if mask.is_enabled(ParamId::UpdateBias) {
                add_into(grads.b_z.as_mut_slice(), &dz);
            }
            if mask.is_enabled(ParamId::ResetInput) {
                outer_acc(&mut grads.w_r, &dr, &c.v);
            }
            if mask.is_enabled(ParamId::ResetRecurrent) {
                outer_acc(&mut grads.u_r, &dr, &c.h_prev);
            }
            if mask.is_enabled(ParamId::ResetBias) {
                add_into(grads.b_r.as_mut_slice(), &dr);
            }

            if need_embedding && y.count_active() > 0 {
                dv.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_acc(&p.w_z, &dz, &mut dv);
                matvec_t_acc(&p.w_r, &dr, &mut dv);
                matvec_t_acc(&p.w_h, &dac, &mut dv);
                let ni = sig.n_inputs;
                let g = grads.w_emb.as_mut_slice();
                for (row, &dvr) in dv.iter().enumerate() {
                    for k in y.active() {
                        g[row * ni + k] += dvr;
                    }
                }
            }
        }
    }

    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    grads.check_finite()?;
    Ok(Backward { loss, grads })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_gradient, max_relative_error};
    use crate::model::Signature;
    use crate::tensor::{affine, Tensor2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_sig() -> Signature {
        Signature::new(4, 6, 8, 5).unwrap()
    }

    fn random_sequence(rng: &mut ChaCha8Rng, sig: &Signature, len: usize) -> EventSequence {
        let inputs = (0..len)
            .map(|_| BinaryVector::from_indices(sig.n_inputs, (0..sig.n_inputs).filter(|_| rng.gen_bool(0.35))).unwrap())
            .collect();
        let targets = (1..len)
            .map(|_| BinaryVector::from_indices(sig.n_targets, (0..sig.n_targets).filter(|_| rng.gen_bool(0.4))).unwrap())
            .collect();
        EventSequence::new("r", 24.0, inputs, targets).unwrap()
    }

    fn random_params(sig: Signature, seed: u64) -> ModelParameters {
        // larger than the default init, and non-zero biases, so every gate matters
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParameters::zeros(sig);
        for i in 0..p.num_scalars() {
            p.set_flat(i, rng.gen_range(-0.8..0.8));
        }
        p
    }

    fn weighted_loss(p: &ModelParameters, s: &EventSequence, w: &[f64]) -> f64 {
        step_losses(p, &s.full_history())
            .unwrap()
            .iter()
            .zip(w)
            .map(|(l, w)| l * w)
            .sum()
    }

    #[test]
    fn embed_cases() {
        let sig = small_sig();
        let p = random_params(sig, 1);
        let zero = embed(&p, &BinaryVector::zeros(8)).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        let one = embed(&p, &BinaryVector::from_indices(8, [5]).unwrap()).unwrap();
        assert_eq!(one.as_slice(), p.w_emb.column(5).as_slice());
        let y = BinaryVector::from_indices(8, [2, 6]).unwrap();
        let two = embed(&p, &y).unwrap();
        let oracle = affine(
            &p.w_emb,
            &Tensor1::from_vec(y.to_dense()).unwrap(),
            &Tensor1::zeros(4),
        )
        .unwrap();
        for (a, b) in two.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(embed(&p, &BinaryVector::zeros(7)).is_err());
    }

    #[test]
    fn gru_zero_parameters() {
        let p = ModelParameters::zeros(small_sig());
        let h = gru_step(&p, &HiddenState::zeros(6), &Tensor1::zeros(4)).unwrap();
        assert!(h.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_zero_candidate_from_zero_state() {
        let mut p = random_params(small_sig(), 2);
        for id in [ParamId::CandidateInput, ParamId::CandidateRecurrent, ParamId::CandidateBias] {
            p.tensor_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let v = Tensor1::from_vec(vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let h = gru_step(&p, &HiddenState::zeros(6), &v).unwrap();
        assert!(h.h.iter().all(|&x| x == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gru_matches_scalar_oracle() {
        let sig = Signature::new(2, 3, 2, 1).unwrap();
        let p = random_params(sig, 7);
        let hp = [0.2, -0.4, 0.9];
        let v = [0.7, -1.3];
        let got = gru_step(&p, &HiddenState { h: hp.to_vec() }, &Tensor1::from_vec(v.to_vec()).unwrap()).unwrap();
        let sigm = |x: f64| 1.0 / (1.0 + (-x).exp());
        let lin = |w: &Tensor2, u: &Tensor2, b: &Tensor1, x: &[f64], hh: &[f64], j: usize| {
            let mut acc = b.as_slice()[j];
            for k in 0..2 {
                acc += w.get(j, k) * x[k];
            }
            for k in 0..3 {
                acc += u.get(j, k) * hh[k];
            }
            acc
        };
        let z: Vec<f64> = (0..3).map(|j| sigm(lin(&p.w_z, &p.u_z, &p.b_z, &v, &hp, j))).collect();
        let r: Vec<f64> = (0..3).map(|j| sigm(lin(&p.w_r, &p.u_r, &p.b_r, &v, &hp, j))).collect();
        let rh: Vec<f64> = (0..3).map(|j| r[j] * hp[j]).collect();
        for j in 0..3 {
            let c = lin(&p.w_h, &p.u_h, &p.b_h, &v, &rh, j).tanh();
            let h = (1.0 - z[j]) * hp[j] + z[j] * c;
            assert!((got.h[j] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_step_saturation_and_zero() {
        let sig = small_sig();
        let p = ModelParameters::zeros(sig);
        let y = BinaryVector::from_indices(8, [1, 3]).unwrap();
        let (_, out) = predict_step(&p, &HiddenState::zeros(6), &y).unwrap();
        assert!(out.iter().all(|&q| q == 0.5));

        let mut p = random_params(sig, 3);
        p.w_o.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        p.b_o.as_mut_slice()[2] = 20.0;
        let (_, out) = predict_step(&p, &HiddenState::zeros(6), &y).unwrap();
        assert!((out[2] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn incremental_equals_replay() {
        let sig = small_sig();
        let p = random_params(sig, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_sequence(&mut rng, &sig, 6);
        let mut h = HiddenState::zeros(6);
        for t in 1..=s.len() {
            let (nh, q) = predict_step(&p, &h, s.input(t)).unwrap();
            h = nh;
            let replay = predict_sequence(&p, &s.inputs()[..t]).unwrap();
            assert_eq!(&q, replay.last().unwrap());
        }
    }

    #[test]
    fn bce_hand_values() {
        let y = BinaryVector::from_indices(1, [0]).unwrap();
        assert!(bce_event_loss(&y, &[1.0 - 1e-12]).unwrap() < 1e-11);
        let y = BinaryVector::from_indices(2, [0]).unwrap();
        let l = bce_event_loss(&y, &[0.5, 0.5]).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let y = BinaryVector::zeros(1);
        let l = bce_event_loss(&y, &[0.9]).unwrap();
        assert!((l + 0.1f64.ln()).abs() < 1e-9);
        assert!(bce_event_loss(&y, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn sequence_loss_cases() {
        let sig = small_sig();
        let p = random_params(sig, 5);
        assert_eq!(sequence_loss(&p, &[]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let two = random_sequence(&mut rng, &sig, 2);
        let preds = predict_sequence(&p, &two.inputs()[..1]).unwrap();
        let single = bce_event_loss(two.target(2), &preds[0]).unwrap();
        assert_eq!(sequence_loss(&p, std::slice::from_ref(&two)).unwrap(), single);

        let seqs: Vec<_> = (0..3).map(|i| random_sequence(&mut rng, &sig, 3 + i)).collect();
        let together = sequence_loss(&p, &seqs).unwrap();
        let apart: f64 = seqs.iter().map(|s| sequence_loss(&p, std::slice::from_ref(s)).unwrap()).sum();
        assert!((together - apart).abs() < 1e-12 * together.abs().max(1.0));
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let sig = small_sig();
        let p = random_params(sig, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_sequence(&mut rng, &sig, 5);
        let g = backward(&p, &s, &[0.0; 4]).unwrap();
        assert!((0..g.num_scalars()).all(|i| g.get_flat(i) == 0.0));
        assert!(backward(&p, &s, &[1.0; 3]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sig = small_sig();
        for seed in 0..3 {
            let p = random_params(sig, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let s = random_sequence(&mut rng, &sig, 5);
            let w = [1.0; 4];
            let g = backward(&p, &s, &w).unwrap();
            let fd = finite_diff_gradient(|q| weighted_loss(q, &s, &w), &p, 1e-5).unwrap();
            let err = max_relative_error(&g, &fd);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn scaled_single_step_weight() {
        let sig = small_sig();
        let p = random_params(sig, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sequence(&mut rng, &sig, 5);
        let g2 = backward(&p, &s, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        let g1 = backward(&p, &s, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        for i in 0..g1.num_scalars() {
            assert_eq!(g2.get_flat(i), 2.0 * g1.get_flat(i));
        }
    }

    #[test]
    fn masked_backward_matches_full_on_enabled_tensors() {
        let sig = small_sig();
        let p = random_params(sig, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_sequence(&mut rng, &sig, 5);
        let w = [0.3, 0.5, 0.8, 1.0];
        let full = backward_history(&p, &s.full_history(), &w, &ParameterMask::all()).unwrap();
        for mask in [
            ParameterMask::from_fn(ParamId::is_output),
            ParameterMask::from_fn(ParamId::is_transition),
        ] {
            let part = backward_history(&p, &s.full_history(), &w, &mask).unwrap();
            assert_eq!(part.loss, full.loss);
            for id in ParamId::ALL {
                if mask.is_enabled(id) {
                    assert_eq!(part.grads.tensor(id), full.grads.tensor(id));
                } else {
                    assert!(part.grads.tensor(id).iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
