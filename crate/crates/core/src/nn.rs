//! Transformer building blocks shared by the prompt encoder and the seq2seq model.

use genbee_numerics::{Graph, Initializer, ParamId, ParamStore, Result, Tensor, Var};

/// Standard deviation for embedding tables of width `d`.
pub(crate) fn embed_std(d: usize) -> f64 {
    0.5 / (d as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{name}.w"), init.xavier(d_in, d_out))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[d_out]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    None,
    /// Query `i` may not see original key `j > i`. Prefix keys stay visible.
    Causal,
}

/// Multi-head scaled dot-product attention over already projected
/// queries `[n, d]`, keys and values `[m, d]`. When `prefix` is given its
/// `[l, d]` rows are prepended to both keys and values.
pub fn attend_with_prefix(
    g: &mut Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    prefix: Option<Var>,
    heads: usize,
    mask: Mask,
) -> Result<Var> {
    let (k, v, l) = match prefix {
        Some(p) => {
            let l = g.shape(p)[0];
            (g.concat(&[p, k], 0)?, g.concat(&[p, v], 0)?, l)
        }
        None => (k, v, 0),
    };
    let n = g.shape(q)[0];
    let d = g.shape(q)[1];
    let m = g.shape(k)[0];
    if g.shape(k)[1] != d || g.shape(v) != [m, d] || heads == 0 || d % heads != 0 {
        return Err(genbee_numerics::NumericsError::ShapeMismatch {
            op: "attention",
            left: g.shape(q).to_vec(),
            right: g.shape(k).to_vec(),
        });
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask_var = match mask {
        Mask::Causal if m > l + 1 => {
            let mut data = vec![0.0; n * m];
            for i in 0..n {
                for j in (l + i + 1)..m {
                    data[i * m + j] = f64::NEG_INFINITY;
                }
            }
            Some(g.constant(Tensor::new(vec![n, m], data)?))
        }
        _ => None,
    };
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * dh, (h + 1) * dh)?,
                g.slice(k, 1, h * dh, (h + 1) * dh)?,
                g.slice(v, 1, h * dh, (h + 1) * dh)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, scale);
        if let Some(mv) = mask_var {
            scores = g.add(scores, mv)?;
        }
        let probs = g.softmax(scores, 1)?;
        outs.push(g.matmul(probs, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 1)
    }
}

/// Projections of one attention site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSite {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub prefix_injected: bool,
}

impl AttentionSite {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d: usize,
        heads: usize,
        prefix_injected: bool,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, init, &format!("{name}.q"), d, d)?,
            k: Linear::new(store, init, &format!("{name}.k"), d, d)?,
            v: Linear::new(store, init, &format!("{name}.v"), d, d)?,
            o: Linear::new(store, init, &format!("{name}.o"), d, d)?,
            heads,
            prefix_injected,
        })
    }

    /// Project `kv_in` into keys and values.
    pub fn project_kv(&self, g: &mut Graph<'_>, kv_in: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(g, kv_in)?, self.v.forward(g, kv_in)?))
    }

    /// Attend from `q_in` over precomputed keys/values; output projected.
    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        q_in: Var,
        k: Var,
        v: Var,
        prefix: Option<Var>,
        mask: Mask,
    ) -> Result<Var> {
        let q = self.q.forward(g, q_in)?;
        let prefix = if self.prefix_injected { prefix } else { None };
        let ctx = attend_with_prefix(g, q, k, v, prefix, self.heads, mask)?;
        self.o.forward(g, ctx)
    }

    pub fn forward(&self, g: &mut Graph<'_>, q_in: Var, kv_in: Var, prefix: Option<Var>, mask: Mask) -> Result<Var> {
        let (k, v) = self.project_kv(g, kv_in)?;
        self.attend(g, q_in, k, v, prefix, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, d: usize, width: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, init, &format!("{name}.up"), d, width)?,
            down: Linear::new(store, init, &format!("{name}.down"), width, d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Pre-norm encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayer {
    pub norm_attn: Norm,
    pub attn: AttentionSite,
    pub norm_ffn: Norm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        d: usize,
        heads: usize,
        ffn: usize,
        prefix_injected: bool,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: Norm::new(store, &format!("{name}.ln_attn"), d)?,
            attn: AttentionSite::new(store, init, &format!("{name}.self"), d, heads, prefix_injected)?,
            norm_ffn: Norm::new(store, &format!("{name}.ln_ffn"), d)?,
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), d, ffn)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, prefix: Option<Var>) -> Result<Var> {
        let h = self.norm_attn.forward(g, x)?;
        let a = self.attn.forward(g, h, h, prefix, Mask::None)?;
        let x = g.add(x, a)?;
        let h = self.norm_ffn.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        g.add(x, f)
    }
}

/// Token plus learned positional embedding for ids at positions `offset..`.
pub fn embed(g: &mut Graph<'_>, tokens: ParamId, positions: ParamId, ids: &[usize], offset: usize) -> Result<Var> {
    let t = g.param(tokens);
    let p = g.param(positions);
    let e = g.embedding(t, ids)?;
    let pos: Vec<usize> = (offset..offset + ids.len()).collect();
    let pe = g.embedding(p, &pos)?;
    g.add(e, pe)
}
