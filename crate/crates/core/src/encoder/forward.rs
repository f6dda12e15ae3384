use crate::encoder::{EncoderLayer, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::nn::{self, AttnMask, LayerNormCache};
use crate::numkit::{Real, Tensor};

/// Additive attention-logit offsets applied in selected layers, shared by
/// every head.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasMatrix<R = f32> {
    pub m: Tensor<R>,
    pub layers: Vec<usize>,
}

impl<R: Real> BiasMatrix<R> {
    pub fn new(m: Tensor<R>, layers: Vec<usize>) -> Result<Self> {
        if m.dims().len() != 2 || m.rows() != m.cols() {
            return Err(Error::Shape(format!("bias matrix must be square, got {:?}", m.dims())));
        }
        Ok(Self { m, layers })
    }

    pub fn side(&self) -> usize {
        self.m.rows()
    }

    pub fn applies_to(&self, layer: usize) -> bool {
        self.layers.contains(&layer)
    }
}

/// What one attention layer saw and produced during a forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<R = f32> {
    /// Normalized layer input the projections act on (`n x d`).
    pub xbar: Tensor<R>,
    pub q: Tensor<R>,
    pub k: Tensor<R>,
    pub v: Tensor<R>,
    /// Per-head attention weights, `n x n` each.
    pub attn: Vec<Tensor<R>>,
    /// Output projection of this layer (`d x d`, heads stacked by rows).
    pub wo: Tensor<R>,
    /// Attention block output before the residual add.
    pub out: Tensor<R>,
    pub biased: bool,
}

impl<R: Real> LayerTrace<R> {
    pub fn heads(&self) -> usize {
        self.attn.len()
    }

    pub fn head_dim(&self) -> usize {
        self.v.cols() / self.heads()
    }
}

#[derive(Clone, Debug)]
pub struct AttentionTrace<R = f32> {
    pub causal: bool,
    pub layers: Vec<LayerTrace<R>>,
}

impl<R: Real> AttentionTrace<R> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn seq_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.q.rows())
    }
}

struct LayerCache<R> {
    ln1: LayerNormCache<R>,
    z: Tensor<R>,
    ln2: LayerNormCache<R>,
    xbar2: Tensor<R>,
    h_pre: Tensor<R>,
    h: Tensor<R>,
}

/// Everything needed to backpropagate through one encoder pass.
pub struct EncoderTape<R = f32> {
    pub tokens: Vec<u16>,
    pub trace: AttentionTrace<R>,
    caches: Vec<LayerCache<R>>,
    lnf: LayerNormCache<R>,
}

fn check_input<R: Real>(params: &EncoderParams<R>, tokens: &[u16], bias: Option<&BiasMatrix<R>>) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() || tokens.len() > cfg.max_len {
        return Err(Error::OutOfRange {
            what: "sequence length",
            value: tokens.len().to_string(),
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab) {
        return Err(Error::Vocabulary(format!("id {t}")));
    }
    if let Some(b) = bias {
        if b.side() != tokens.len() {
            return Err(Error::Shape(format!(
                "bias side {} does not match sequence length {}",
                b.side(),
                tokens.len()
            )));
        }
        if let Some(&l) = b.layers.iter().find(|&&l| l >= cfg.layers) {
            return Err(Error::OutOfRange {
                what: "bias layer",
                value: l.to_string(),
            });
        }
    }
    Ok(())
}

fn layer_forward<R: Real>(
    layer: &EncoderLayer<R>,
    x: Tensor<R>,
    heads: usize,
    causal: bool,
    bias: Option<&Tensor<R>>,
) -> (Tensor<R>, LayerTrace<R>, LayerCache<R>) {
    let (xbar, ln1) = nn::layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
    let q = nn::linear(&xbar, &layer.wq, None);
    let k = nn::linear(&xbar, &layer.wk, None);
    let v = nn::linear(&xbar, &layer.wv, None);
    let (z, attn) = nn::attention(&q, &k, &v, heads, AttnMask { causal, bias });
    let out = nn::linear(&z, &layer.wo, None);
    let mut x_mid = x;
    x_mid.add_assign(&out);
    let (xbar2, ln2) = nn::layer_norm(&x_mid, &layer.ln2_g, &layer.ln2_b);
    let h_pre = nn::linear(&xbar2, &layer.w1, Some(&layer.b1));
    let h = nn::gelu(&h_pre);
    let m = nn::linear(&h, &layer.w2, Some(&layer.b2));
    let mut x_out = x_mid;
    x_out.add_assign(&m);
    let trace = LayerTrace {
        xbar,
        q,
        k,
        v,
        attn,
        wo: layer.wo.clone(),
        out,
        biased: bias.is_some(),
    };
    let cache = LayerCache {
        ln1,
        z,
        ln2,
        xbar2,
        h_pre,
        h,
    };
    (x_out, trace, cache)
}

/// Forward pass keeping the tape for [`encode_backward`].
pub fn encode_with_tape<R: Real>(
    params: &EncoderParams<R>,
    tokens: &[u16],
    bias: Option<&BiasMatrix<R>>,
) -> Result<(Tensor<R>, EncoderTape<R>)> {
    check_input(params, tokens, bias)?;
    let cfg = &params.config;
    let (n, d) = (tokens.len(), cfg.d);
    let mut x = Tensor::zeros(&[n, d]);
    for (i, &t) in tokens.iter().enumerate() {
        let row = x.row_mut(i);
        for ((o, &e), &p) in row.iter_mut().zip(params.tok_emb.row(t as usize)).zip(params.pos_emb.row(i)) {
            *o = e + p;
        }
    }
    let mut traces = Vec::with_capacity(cfg.layers);
    let mut caches = Vec::with_capacity(cfg.layers);
    for (li, layer) in params.layers.iter().enumerate() {
        let b = bias.filter(|b| b.applies_to(li)).map(|b| &b.m);
        let (x_next, trace, cache) = layer_forward(layer, x, cfg.heads, cfg.causal, b);
        traces.push(trace);
        caches.push(cache);
        x = x_next;
    }
    let (c, lnf) = nn::layer_norm(&x, &params.lnf_g, &params.lnf_b);
    let tape = EncoderTape {
        tokens: tokens.to_vec(),
        trace: AttentionTrace {
            causal: cfg.causal,
            layers: traces,
        },
        caches,
        lnf,
    };
    Ok((c, tape))
}

/// Output embeddings `c` (`n x d`) and the attention trace of the pass.
/// With `bias`, the designated layers use logits `<q_i, k_j>/sqrt(d_h) + M_ij`.
pub fn encode<R: Real>(
    params: &EncoderParams<R>,
    tokens: &[u16],
    bias: Option<&BiasMatrix<R>>,
) -> Result<(Tensor<R>, AttentionTrace<R>)> {
    let (c, tape) = encode_with_tape(params, tokens, bias)?;
    Ok((c, tape.trace))
}

/// Accumulates parameter gradients for upstream gradient `dc` into `grads`.
pub fn encode_backward<R: Real>(
    params: &EncoderParams<R>,
    tape: &EncoderTape<R>,
    dc: &Tensor<R>,
    grads: &mut EncoderParams<R>,
) {
    let mut dx = nn::layer_norm_backward(&tape.lnf, &params.lnf_g, dc, &mut grads.lnf_g, &mut grads.lnf_b);
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];
        let tr = &tape.trace.layers[li];
        let cache = &tape.caches[li];
        // MLP branch
        let dh = nn::linear_backward(&cache.h, &layer.w2, &dx, &mut g.w2, Some(&mut g.b2));
        let dh_pre = nn::gelu_backward(&cache.h_pre, &dh);
        let dxbar2 = nn::linear_backward(&cache.xbar2, &layer.w1, &dh_pre, &mut g.w1, Some(&mut g.b1));
        let dmid = nn::layer_norm_backward(&cache.ln2, &layer.ln2_g, &dxbar2, &mut g.ln2_g, &mut g.ln2_b);
        dx.add_assign(&dmid);
        // attention branch
        let dz = nn::linear_backward(&cache.z, &layer.wo, &dx, &mut g.wo, None);
        let (dq, dk, dv) = nn::attention_backward(&tr.q, &tr.k, &tr.v, &tr.attn, &dz);
        let mut dxbar = nn::linear_backward(&tr.xbar, &layer.wq, &dq, &mut g.wq, None);
        dxbar.add_assign(&nn::linear_backward(&tr.xbar, &layer.wk, &dk, &mut g.wk, None));
        dxbar.add_assign(&nn::linear_backward(&tr.xbar, &layer.wv, &dv, &mut g.wv, None));
        let din = nn::layer_norm_backward(&cache.ln1, &layer.ln1_g, &dxbar, &mut g.ln1_g, &mut g.ln1_b);
        dx.add_assign(&din);
    }
    for (i, &t) in tape.tokens.iter().enumerate() {
        let drow = dx.row(i).to_vec();
        for (g, d) in grads.tok_emb.row_mut(t as usize).iter_mut().zip(&drow) {
            *g += *d;
        }
        for (g, d) in grads.pos_emb.row_mut(i).iter_mut().zip(&drow) {
            *g += *d;
        }
    }
}
