//! Transformer building blocks on top of [`crate::autograd`].

use std::rc::Rc;

use crate::autograd::{AttentionLayout, Mat, ParamId, ParamStore, Segments, Tape, Var};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, bias: bool, rng: &mut Rng) -> Self {
        let w = store.add_glorot(&format!("{name}.w"), din, dout, rng);
        let b = bias.then(|| store.add_constant(&format!("{name}.b"), 1, dout, 0.0));
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let y = t.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add_constant(&format!("{name}.gamma"), 1, d, 1.0),
            beta: store.add_constant(&format!("{name}.beta"), 1, d, 0.0),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, d, true, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(t, x);
        let h = t.gelu(h);
        self.down.forward(t, h)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.q"), d, d, false, rng),
            wk: Linear::new(store, &format!("{name}.k"), d, d, false, rng),
            wv: Linear::new(store, &format!("{name}.v"), d, d, false, rng),
            wo: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
            heads,
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        queries: Var,
        q_segs: &Rc<Segments>,
        keys: Var,
        k_segs: &Rc<Segments>,
        causal: bool,
    ) -> Var {
        let q = self.wq.forward(t, queries);
        let k = self.wk.forward(t, keys);
        let v = self.wv.forward(t, keys);
        let layout = AttentionLayout {
            queries: q_segs.clone(),
            keys: k_segs.clone(),
            heads: self.heads,
            causal,
        };
        let o = t.attention(q, k, v, layout);
        self.wo.forward(t, o)
    }
}

/// Pre-norm self-attention block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, rng: &mut Rng) -> Self {
        EncoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, segs: &Rc<Segments>) -> Var {
        let h = self.ln1.forward(t, x);
        let a = self.attn.forward(t, h, segs, h, segs, false);
        let x = t.add(x, a);
        let h = self.ln2.forward(t, x);
        let f = self.ffn.forward(t, h);
        t.add(x, f)
    }
}

/// Pre-norm decoder block with causal self-attention and cross-attention.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, rng: &mut Rng) -> Self {
        DecoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross"), d, heads, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn, rng),
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        x: Var,
        segs: &Rc<Segments>,
        memory: Var,
        mem_segs: &Rc<Segments>,
    ) -> Var {
        let h = self.ln1.forward(t, x);
        let a = self.self_attn.forward(t, h, segs, h, segs, true);
        let x = t.add(x, a);
        let h = self.ln2.forward(t, x);
        let c = self.cross_attn.forward(t, h, segs, memory, mem_segs, false);
        let x = t.add(x, c);
        let h = self.ln3.forward(t, x);
        let f = self.ffn.forward(t, h);
        t.add(x, f)
    }
}

/// Fixed sinusoidal position table, `max_len × d`.
pub fn sinusoidal_positions(max_len: usize, d: usize) -> Mat {
    Mat::from_shape_fn((max_len, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Position rows for a packed batch whose segments start at position 0.
pub fn packed_positions(table: &Mat, segs: &Segments) -> Mat {
    let mut out = Mat::zeros((segs.total(), table.ncols()));
    for b in 0..segs.count() {
        for (p, row) in segs.range(b).enumerate() {
            out.row_mut(row).assign(&table.row(p));
        }
    }
    out
}
