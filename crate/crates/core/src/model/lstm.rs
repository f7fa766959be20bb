use rand::Rng;

use super::{BpttBatch, Gradients, HiddenState, LanguageModel, ParamKind};
use crate::error::{Error, Result};
use crate::kernels::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, Exec};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer activations kept for the backward pass. All buffers are
/// time-major with `seq_len·batch` rows.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    h0: Vec<f64>,
    c0: Vec<f64>,
    /// Post-nonlinearity gate values `[i, f, g, o]`, `4·hidden` per row.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    seq_len: usize,
    batch: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    /// Dropout multipliers on the top layer output, if dropout was active.
    dropout: Option<Vec<f64>>,
    decoder_input: Vec<f64>,
}

impl ForwardCache {
    /// Hidden outputs `h_t` of `layer`, `seq_len·batch × hidden`.
    pub fn hidden_outputs(&self, layer: usize) -> &[f64] {
        &self.layers[layer].h
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `seq_len × batch × vocab`, row-major.
    pub logits: Vec<f64>,
    pub state: HiddenState,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone)]
pub struct Backward {
    /// Gradients with masked positions zeroed.
    pub grads: Gradients,
    /// Unmasked gradients, when requested.
    pub dense: Option<Gradients>,
}

impl LanguageModel {
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &BpttBatch,
        state: &HiddenState,
        dropout: f64,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        self.forward_with(Exec::default(), batch, state, dropout, rng)
    }

    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        exec: Exec,
        batch: &BpttBatch,
        state: &HiddenState,
        dropout: f64,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let dims = self.dims;
        let (t_len, b) = (batch.seq_len, batch.batch);
        let rows = t_len * b;
        if rows == 0 {
            return Err(Error::InvalidConfig("empty bptt window".into()));
        }
        if batch.inputs.len() != rows || batch.targets.len() != rows {
            return Err(Error::ShapeMismatch {
                what: "bptt batch".into(),
                expected: (t_len, b),
                found: (batch.inputs.len(), batch.targets.len()),
            });
        }
        if state.batch != b || state.h.len() != dims.layers {
            return Err(Error::ShapeMismatch {
                what: "hidden state".into(),
                expected: (dims.layers, b),
                found: (state.h.len(), state.batch),
            });
        }
        if let Some(&bad) = batch
            .inputs
            .iter()
            .chain(&batch.targets)
            .find(|&&t| t as usize >= dims.vocab)
        {
            return Err(Error::InvalidConfig(format!(
                "token id {bad} out of range for vocabulary {}",
                dims.vocab
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!("dropout {dropout} outside [0, 1)")));
        }

        let emb = dims.emb;
        let emb_vals = self.embedding.values();
        let mut input = vec![0.0; rows * emb];
        for (r, &tok) in batch.inputs.iter().enumerate() {
            let tok = tok as usize;
            input[r * emb..(r + 1) * emb].copy_from_slice(&emb_vals[tok * emb..(tok + 1) * emb]);
        }

        let h = dims.hidden;
        let mut layers = Vec::with_capacity(dims.layers);
        let mut new_state = HiddenState::zeros(&dims, b);
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = layer.input_dim();
            let mut pre = Vec::with_capacity(rows * 4 * h);
            for _ in 0..rows {
                pre.extend_from_slice(&layer.bias);
            }
            matmul_nt_acc(
                exec,
                &input,
                rows,
                in_dim,
                layer.input_weights.values(),
                4 * h,
                &mut pre,
            );

            let mut gates = vec![0.0; rows * 4 * h];
            let mut c_all = vec![0.0; rows * h];
            let mut tanh_all = vec![0.0; rows * h];
            let mut h_all = vec![0.0; rows * h];
            let mut h_prev = state.h[l].clone();
            let mut c_prev = state.c[l].clone();
            for t in 0..t_len {
                let base = t * b;
                let step_pre = &mut pre[base * 4 * h..(base + b) * 4 * h];
                matmul_nt_acc(
                    exec,
                    &h_prev,
                    b,
                    h,
                    layer.hidden_weights.values(),
                    4 * h,
                    step_pre,
                );
                for bi in 0..b {
                    let r = base + bi;
                    let a = &step_pre[bi * 4 * h..(bi + 1) * 4 * h];
                    let g = &mut gates[r * 4 * h..(r + 1) * 4 * h];
                    for u in 0..h {
                        let ig = sigmoid(a[u]);
                        let fg = sigmoid(a[h + u]);
                        let cg = a[2 * h + u].tanh();
                        let og = sigmoid(a[3 * h + u]);
                        g[u] = ig;
                        g[h + u] = fg;
                        g[2 * h + u] = cg;
                        g[3 * h + u] = og;
                        let c = fg * c_prev[bi * h + u] + ig * cg;
                        let tc = c.tanh();
                        c_all[r * h + u] = c;
                        tanh_all[r * h + u] = tc;
                        h_all[r * h + u] = og * tc;
                    }
                }
                h_prev.copy_from_slice(&h_all[base * h..(base + b) * h]);
                c_prev.copy_from_slice(&c_all[base * h..(base + b) * h]);
            }
            new_state.h[l] = h_prev;
            new_state.c[l] = c_prev;
            let next_input = h_all.clone();
            layers.push(LayerCache {
                input: std::mem::replace(&mut input, next_input),
                h0: state.h[l].clone(),
                c0: state.c[l].clone(),
                gates,
                c: c_all,
                tanh_c: tanh_all,
                h: h_all,
            });
        }

        // `input` now holds the top layer output.
        let dropout_mask = if dropout > 0.0 {
            let keep = 1.0 - dropout;
            let mask: Vec<f64> = (0..rows * h)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (x, m) in input.iter_mut().zip(&mask) {
                *x *= m;
            }
            Some(mask)
        } else {
            None
        };

        let v = dims.vocab;
        let mut logits = Vec::with_capacity(rows * v);
        for _ in 0..rows {
            logits.extend_from_slice(&self.decoder_bias);
        }
        matmul_nt_acc(
            exec,
            &input,
            rows,
            h,
            self.decoder_weights().values(),
            v,
            &mut logits,
        );

        Ok(ForwardOutput {
            logits,
            state: new_state,
            cache: ForwardCache {
                seq_len: t_len,
                batch: b,
                tokens: batch.inputs.clone(),
                layers,
                dropout: dropout_mask,
                decoder_input: input,
            },
        })
    }

    /// Gradients of the mean token cross-entropy.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        logits: &[f64],
        targets: &[u32],
        want_dense: bool,
    ) -> Result<Backward> {
        self.backward_with(Exec::default(), cache, logits, targets, want_dense)
    }

    pub fn backward_with(
        &self,
        exec: Exec,
        cache: &ForwardCache,
        logits: &[f64],
        targets: &[u32],
        want_dense: bool,
    ) -> Result<Backward> {
        let dims = self.dims;
        let (t_len, b) = (cache.seq_len, cache.batch);
        let rows = t_len * b;
        let (v, h) = (dims.vocab, dims.hidden);
        if logits.len() != rows * v || targets.len() != rows || cache.layers.len() != dims.layers {
            return Err(Error::ShapeMismatch {
                what: "backward inputs".into(),
                expected: (rows, v),
                found: (targets.len(), logits.len() / rows.max(1)),
            });
        }

        let kinds = self.param_kinds();
        let mut grads = self.zero_gradients();
        let idx = |k: ParamKind| kinds.iter().position(|x| *x == k).expect("param kind");

        // dL/dlogits for the mean cross-entropy.
        let n = rows as f64;
        let mut dlogits = vec![0.0; rows * v];
        for r in 0..rows {
            let row = &logits[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let out = &mut dlogits[r * v..(r + 1) * v];
            for (o, x) in out.iter_mut().zip(row) {
                *o = (x - max).exp() / sum / n;
            }
            out[targets[r] as usize] -= 1.0 / n;
        }

        let dec_grad_idx = if self.decoder.is_some() {
            idx(ParamKind::Decoder)
        } else {
            idx(ParamKind::Embedding)
        };
        matmul_tn_acc(
            exec,
            &dlogits,
            rows,
            v,
            &cache.decoder_input,
            h,
            &mut grads.tensors[dec_grad_idx],
        );
        {
            let db = &mut grads.tensors[idx(ParamKind::DecoderBias)];
            for r in 0..rows {
                for (g, d) in db.iter_mut().zip(&dlogits[r * v..(r + 1) * v]) {
                    *g += d;
                }
            }
        }

        let mut dh_above = vec![0.0; rows * h];
        matmul_nn_acc(
            exec,
            &dlogits,
            rows,
            v,
            self.decoder_weights().values(),
            h,
            &mut dh_above,
        );
        if let Some(mask) = &cache.dropout {
            for (d, m) in dh_above.iter_mut().zip(mask) {
                *d *= m;
            }
        }

        for l in (0..dims.layers).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let in_dim = layer.input_dim();
            let mut d_pre = vec![0.0; rows * 4 * h];
            let mut dh_next = vec![0.0; b * h];
            let mut dc_next = vec![0.0; b * h];
            for t in (0..t_len).rev() {
                for bi in 0..b {
                    let r = t * b + bi;
                    let g = &lc.gates[r * 4 * h..(r + 1) * 4 * h];
                    let dp = &mut d_pre[r * 4 * h..(r + 1) * 4 * h];
                    for u in 0..h {
                        let (ig, fg, cg, og) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
                        let tc = lc.tanh_c[r * h + u];
                        let c_prev = if t == 0 {
                            lc.c0[bi * h + u]
                        } else {
                            lc.c[(r - b) * h + u]
                        };
                        let dh = dh_above[r * h + u] + dh_next[bi * h + u];
                        let d_o = dh * tc;
                        let dc = dh * og * (1.0 - tc * tc) + dc_next[bi * h + u];
                        dp[u] = dc * cg * ig * (1.0 - ig);
                        dp[h + u] = dc * c_prev * fg * (1.0 - fg);
                        dp[2 * h + u] = dc * ig * (1.0 - cg * cg);
                        dp[3 * h + u] = d_o * og * (1.0 - og);
                        dc_next[bi * h + u] = dc * fg;
                    }
                }
                dh_next.iter_mut().for_each(|x| *x = 0.0);
                matmul_nn_acc(
                    exec,
                    &d_pre[t * b * 4 * h..(t + 1) * b * 4 * h],
                    b,
                    4 * h,
                    layer.hidden_weights.values(),
                    h,
                    &mut dh_next,
                );
            }

            // h_{t-1} for every row: the initial state, then the layer outputs shifted by one step.
            let mut h_prev_all = Vec::with_capacity(rows * h);
            h_prev_all.extend_from_slice(&lc.h0);
            h_prev_all.extend_from_slice(&lc.h[..(rows - b) * h]);
            matmul_tn_acc(
                exec,
                &d_pre,
                rows,
                4 * h,
                &h_prev_all,
                h,
                &mut grads.tensors[idx(ParamKind::HiddenWeights(l))],
            );
            matmul_tn_acc(
                exec,
                &d_pre,
                rows,
                4 * h,
                &lc.input,
                in_dim,
                &mut grads.tensors[idx(ParamKind::InputWeights(l))],
            );
            {
                let db = &mut grads.tensors[idx(ParamKind::Bias(l))];
                for r in 0..rows {
                    for (g, d) in db.iter_mut().zip(&d_pre[r * 4 * h..(r + 1) * 4 * h]) {
                        *g += d;
                    }
                }
            }
            let mut d_input = vec![0.0; rows * in_dim];
            matmul_nn_acc(
                exec,
                &d_pre,
                rows,
                4 * h,
                layer.input_weights.values(),
                in_dim,
                &mut d_input,
            );
            dh_above = d_input;
        }

        let emb = dims.emb;
        {
            let ge = &mut grads.tensors[idx(ParamKind::Embedding)];
            for (r, &tok) in cache.tokens.iter().enumerate() {
                let tok = tok as usize;
                for (g, d) in ge[tok * emb..(tok + 1) * emb]
                    .iter_mut()
                    .zip(&dh_above[r * emb..(r + 1) * emb])
                {
                    *g += d;
                }
            }
        }

        let dense = want_dense.then(|| grads.clone());
        for (k, g) in kinds.iter().zip(grads.tensors.iter_mut()) {
            if let Some(mask) = self.param_mask(*k) {
                for (x, &m) in g.iter_mut().zip(mask) {
                    if !m {
                        *x = 0.0;
                    }
                }
            }
        }
        Ok(Backward { grads, dense })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{loss_and_perplexity, ModelDims};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> LanguageModel {
        let dims = ModelDims {
            vocab: 9,
            emb: 4,
            hidden: 4,
            layers: 2,
            tied: false,
        };
        LanguageModel::new(dims, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    fn batch(seq_len: usize, b: usize, seed: u64) -> BpttBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BpttBatch {
            seq_len,
            batch: b,
            inputs: (0..seq_len * b).map(|_| rng.gen_range(0..9)).collect(),
            targets: (0..seq_len * b).map(|_| rng.gen_range(0..9)).collect(),
        }
    }

    #[test]
    fn logits_shape() {
        let m = small();
        let bt = batch(3, 2, 0);
        let out = m
            .forward(&bt, &HiddenState::zeros(&m.dims, 2), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(out.logits.len(), 3 * 2 * 9);
    }

    #[test]
    fn zero_decoder_gives_uniform_loss() {
        let mut m = small();
        m.decoder.as_mut().unwrap().values_mut().iter_mut().for_each(|x| *x = 0.0);
        let bt = batch(4, 3, 1);
        let out = m
            .forward(&bt, &HiddenState::zeros(&m.dims, 3), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let (loss, ppl) = loss_and_perplexity(&out.logits, &bt.targets, 9);
        assert!((loss - (9.0f64).ln()).abs() < 1e-14);
        assert!((ppl - 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_hidden() {
        let mut m = small();
        for layer in m.layers.iter_mut() {
            layer.input_weights.values_mut().iter_mut().for_each(|x| *x = 0.0);
            layer.hidden_weights.values_mut().iter_mut().for_each(|x| *x = 0.0);
            layer.bias.iter_mut().for_each(|x| *x = 0.0);
        }
        let bt = batch(1, 1, 3);
        let out = m
            .forward(&bt, &HiddenState::zeros(&m.dims, 1), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(out.cache.hidden_outputs(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unused_embedding_row_has_zero_gradient() {
        let m = small();
        let mut bt = batch(3, 2, 4);
        bt.inputs.iter_mut().for_each(|t| *t %= 8); // token 8 never appears as input
        let out = m
            .forward(&bt, &HiddenState::zeros(&m.dims, 2), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let g = m.backward(&out.cache, &out.logits, &bt.targets, false).unwrap();
        assert!(g.grads.tensors[0][8 * 4..9 * 4].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn masked_gradients_are_zero() {
        let mut m = small();
        m.layers[0].input_weights.deactivate(&[0, 5, 7]);
        let bt = batch(3, 2, 5);
        let out = m
            .forward(&bt, &HiddenState::zeros(&m.dims, 2), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let g = m.backward(&out.cache, &out.logits, &bt.targets, true).unwrap();
        let i = m.param_index(ParamKind::InputWeights(0)).unwrap();
        for p in [0, 5, 7] {
            assert_eq!(g.grads.tensors[i][p], 0.0);
        }
        let dense = g.dense.unwrap();
        assert!([0, 5, 7].iter().any(|&p| dense.tensors[i][p] != 0.0));
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let m = small();
        let mut bt = batch(2, 1, 6);
        bt.inputs[0] = 99;
        assert!(m
            .forward(&bt, &HiddenState::zeros(&m.dims, 1), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let m = small();
        let bt = batch(5, 3, 7);
        let s = HiddenState::zeros(&m.dims, 3);
        let a = m
            .forward_with(Exec::Sequential, &bt, &s, 0.3, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = m
            .forward_with(Exec::Parallel, &bt, &s, 0.3, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a.logits, b.logits);
        let ga = m.backward_with(Exec::Sequential, &a.cache, &a.logits, &bt.targets, false).unwrap();
        let gb = m.backward_with(Exec::Parallel, &b.cache, &b.logits, &bt.targets, false).unwrap();
        assert_eq!(ga.grads, gb.grads);
    }
}
