use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use super::params::{Grads, Mat, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row ranges of a packed batch: segment `b` occupies rows
/// `starts[b] .. starts[b] + lens[b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    starts: Vec<usize>,
    lens: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lens: &[usize]) -> Self {
        let mut starts = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in lens {
            starts.push(acc);
            acc += l;
        }
        Segments {
            starts,
            lens: lens.to_vec(),
        }
    }

    pub fn count(&self) -> usize {
        self.lens.len()
    }

    pub fn total(&self) -> usize {
        self.starts.last().map_or(0, |s| s + self.lens[self.lens.len() - 1])
    }

    pub fn len_of(&self, b: usize) -> usize {
        self.lens[b]
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.starts[b]..self.starts[b] + self.lens[b]
    }

    /// Segment index of every row.
    pub fn row_owner(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for (b, &l) in self.lens.iter().enumerate() {
            out.extend(std::iter::repeat_n(b, l));
        }
        out
    }
}

/// Layout of a fused multi-head attention call.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub queries: Rc<Segments>,
    pub keys: Rc<Segments>,
    pub heads: usize,
    /// Query row `i` of a segment may only attend to key rows `0..=i`.
    pub causal: bool,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Gelu(Var),
    Exp(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<Mat>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        segs: Rc<Segments>,
    },
    SegmentExpand {
        x: Var,
        segs: Rc<Segments>,
    },
    SegmentNormalize {
        x: Var,
        segs: Rc<Segments>,
        rms: Vec<f64>,
    },
    SegmentWhere {
        a: Var,
        b: Var,
        segs: Rc<Segments>,
        take_a: Vec<bool>,
    },
    LogSoftmax(Var),
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    SumAll(Var),
    SumRows(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode automatic differentiation over `f64` matrices.
///
/// Parameters are read from a borrowed [`ParamStore`]; each parameter is
/// loaded once per tape so weight sharing accumulates gradients in one place.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    frozen: Option<&'a [ParamId]>,
}

const LN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
            frozen: None,
        }
    }

    /// Parameters in `frozen` are loaded as constants (no gradient flows to them).
    pub fn with_frozen(store: &'a ParamStore, frozen: &'a [ParamId]) -> Self {
        let mut t = Tape::new(store);
        t.frozen = Some(frozen);
        t
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let frozen = self.frozen.is_some_and(|f| f.contains(&id));
        let v = self.push(self.store.get(id).clone(), Op::Leaf, !frozen);
        self.params.insert(id, v);
        v
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient (used for input sensitivities).
    pub fn input(&mut self, value: Mat) -> Var {
        let value = value.as_standard_layout().into_owned();
        self.push(value, Op::Leaf, true)
    }

    /// Copy of `x` with the gradient path cut.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `x + b` with the `1 × p` row `b` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x) + self.value(b);
        let rg = self.rg(x) || self.rg(b);
        self.push(v, Op::AddRow(x, b), rg)
    }

    /// `x ⊙ s` with the `n × 1` column `s` broadcast over columns.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let v = self.value(x) * self.value(s);
        let rg = self.rg(x) || self.rg(s);
        self.push(v, Op::MulCol(x, s), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).mapv(|a| a * c);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, c), rg)
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).mapv(|a| a + c);
        let rg = self.rg(x);
        self.push(v, Op::Offset(x), rg)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.scale(x, -1.0);
        self.offset(n, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(softplus);
        let rg = self.rg(x);
        self.push(v, Op::Softplus(x), rg)
    }

    /// `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let n = self.scale(x, -1.0);
        let sp = self.softplus(n);
        self.scale(sp, -1.0)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(gelu);
        let rg = self.rg(x);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    /// Row-wise layer normalisation with `1 × p` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, p) = xv.dim();
        let mut xhat = Mat::zeros((n, p));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / p as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / p as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, a) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
                *o = (a - mean) * is;
            }
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Fused scaled dot-product multi-head attention over packed segments.
    ///
    /// `q` is `Σ|query segs| × d`, `k` and `v` are `Σ|key segs| × d`; segment
    /// `b` of the queries attends only to segment `b` of the keys.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(d % layout.heads, 0, "model dim must divide into heads");
        assert_eq!(layout.queries.count(), layout.keys.count());
        let dh = d / layout.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(layout.queries.count() * layout.heads);
        let (qs, ks, vs) = (
            qv.as_slice().unwrap(),
            kv.as_slice().unwrap(),
            vv.as_slice().unwrap(),
        );
        let os = out.as_slice_mut().unwrap();
        for b in 0..layout.queries.count() {
            let qr = layout.queries.range(b);
            let kr = layout.keys.range(b);
            let (lq, lk) = (qr.len(), kr.len());
            for h in 0..layout.heads {
                let off = h * dh;
                let mut p = Mat::zeros((lq, lk));
                for i in 0..lq {
                    let qrow = &qs[(qr.start + i) * d + off..(qr.start + i) * d + off + dh];
                    let limit = if layout.causal { (i + 1).min(lk) } else { lk };
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..limit {
                        let krow = &ks[(kr.start + j) * d + off..(kr.start + j) * d + off + dh];
                        let sc = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[[i, j]] = sc;
                        mx = mx.max(sc);
                    }
                    let mut z = 0.0;
                    for j in 0..limit {
                        let e = (p[[i, j]] - mx).exp();
                        p[[i, j]] = e;
                        z += e;
                    }
                    for j in 0..limit {
                        p[[i, j]] /= z;
                    }
                    let orow = &mut os[(qr.start + i) * d + off..(qr.start + i) * d + off + dh];
                    for j in 0..limit {
                        let w = p[[i, j]];
                        let vrow = &vs[(kr.start + j) * d + off..(kr.start + j) * d + off + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += w * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            rg,
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        let rg = self.rg(table);
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Per-segment mean of rows: `n × p → B × p`.
    pub fn segment_mean(&mut self, x: Var, segs: &Rc<Segments>) -> Var {
        let xv = self.value(x);
        let mut v = Mat::zeros((segs.count(), xv.ncols()));
        for b in 0..segs.count() {
            let r = segs.range(b);
            let n = r.len().max(1) as f64;
            let m = xv.slice(s![r, ..]).sum_axis(Axis(0)) / n;
            v.row_mut(b).assign(&m);
        }
        let rg = self.rg(x);
        self.push(
            v,
            Op::SegmentMean {
                x,
                segs: segs.clone(),
            },
            rg,
        )
    }

    /// Repeats row `b` of `x` over the rows of segment `b`: `B × p → n × p`.
    pub fn segment_expand(&mut self, x: Var, segs: &Rc<Segments>) -> Var {
        let xv = self.value(x);
        let mut v = Mat::zeros((segs.total(), xv.ncols()));
        for b in 0..segs.count() {
            let r = segs.range(b);
            for i in r {
                v.row_mut(i).assign(&xv.row(b));
            }
        }
        let rg = self.rg(x);
        self.push(
            v,
            Op::SegmentExpand {
                x,
                segs: segs.clone(),
            },
            rg,
        )
    }

    /// Scales each segment to unit mean-square power. Panics on a zero-power
    /// segment; callers validate beforehand.
    pub fn segment_normalize(&mut self, x: Var, segs: &Rc<Segments>) -> Var {
        let xv = self.value(x);
        let mut v = xv.clone();
        let mut rms = Vec::with_capacity(segs.count());
        for b in 0..segs.count() {
            let r = segs.range(b);
            let mut blk = v.slice_mut(s![r, ..]);
            let ms = blk.iter().map(|a| a * a).sum::<f64>() / blk.len() as f64;
            let rr = ms.sqrt();
            assert!(rr > 0.0, "zero-power block");
            blk.mapv_inplace(|a| a / rr);
            rms.push(rr);
        }
        let rg = self.rg(x);
        self.push(
            v,
            Op::SegmentNormalize {
                x,
                segs: segs.clone(),
                rms,
            },
            rg,
        )
    }

    /// Segment-wise select: rows of segment `b` come from `a` when `take_a[b]`, else from `b`.
    pub fn segment_where(&mut self, a: Var, b: Var, segs: &Rc<Segments>, take_a: &[bool]) -> Var {
        let mut v = self.value(b).clone();
        let av = self.value(a);
        for (seg, &t) in take_a.iter().enumerate() {
            if t {
                let r = segs.range(seg);
                v.slice_mut(s![r.clone(), ..]).assign(&av.slice(s![r, ..]));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(
            v,
            Op::SegmentWhere {
                a,
                b,
                segs: segs.clone(),
                take_a: take_a.to_vec(),
            },
            rg,
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.outer_iter_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = mx + row.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
            row.mapv_inplace(|a| a - lse);
        }
        let rg = self.rg(x);
        self.push(v, Op::LogSoftmax(x), rg)
    }

    /// Element `idx[i]` of each row `i`: `n × V → n × 1`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), idx.len());
        let v = Mat::from_shape_fn((idx.len(), 1), |(i, _)| xv[[i, idx[i]]]);
        let rg = self.rg(x);
        self.push(
            v,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `n × p → n × 1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push(v, Op::SumRows(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts agree")
            .as_standard_layout()
            .into_owned();
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::ConcatCols(a, b), rg)
    }

    /// Row-major reshape to `rows × cols`.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), rows * cols, "reshape changes element count");
        let v = Mat::from_shape_vec((rows, cols), xv.iter().copied().collect()).expect("sized");
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    /// `Σ_i weights[i] · (−log softmax(logits_i)[targets[i]])` as a `1 × 1` value.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(targets.len(), weights.len());
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (i, mut row) in probs.outer_iter_mut().enumerate() {
            let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|a| (a - mx).exp());
            let z = row.sum();
            row.mapv_inplace(|a| a / z);
            let lp = (lv[[i, targets[i]]] - mx) - z.ln();
            loss -= weights[i] * lp;
        }
        let rg = self.rg(logits);
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Backpropagates from the scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        let (node_grads, _) = self.backward_all(loss);
        let mut grads = Grads::zeros_like(self.store);
        for (&id, &v) in &self.params {
            if let Some(g) = &node_grads[v.0] {
                grads.grads[id.index()] = Some(g.clone());
            }
        }
        grads
    }

    /// Gradient of `loss` w.r.t. an arbitrary recorded value (e.g. an [`Tape::input`]).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Option<Mat> {
        let (mut g, _) = self.backward_all(loss);
        g[wrt.0].take()
    }

    fn backward_all(&self, loss: Var) -> (Vec<Option<Mat>>, ()) {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        (grads, ())
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rg(*a) {
                    acc(grads, *a, g.dot(&val(*b).t()));
                }
                if rg(*b) {
                    acc(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if rg(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if rg(*b) {
                    acc(grads, *b, g.mapv(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    acc(grads, *a, g * val(*b));
                }
                if rg(*b) {
                    acc(grads, *b, g * val(*a));
                }
            }
            Op::AddRow(x, b) => {
                if rg(*x) {
                    acc(grads, *x, g.clone());
                }
                if rg(*b) {
                    acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(x, s) => {
                if rg(*x) {
                    acc(grads, *x, g * val(*s));
                }
                if rg(*s) {
                    let gs = (g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(grads, *s, gs);
                }
            }
            Op::Scale(x, c) => acc(grads, *x, g.mapv(|a| a * c)),
            Op::Offset(x) => acc(grads, *x, g.clone()),
            Op::Sigmoid(x) => {
                let mut d = node.value.mapv(|y| y * (1.0 - y));
                d *= g;
                acc(grads, *x, d);
            }
            Op::Tanh(x) => {
                let mut d = node.value.mapv(|y| 1.0 - y * y);
                d *= g;
                acc(grads, *x, d);
            }
            Op::Softplus(x) => {
                let mut d = val(*x).mapv(sigmoid);
                d *= g;
                acc(grads, *x, d);
            }
            Op::Gelu(x) => {
                let mut d = val(*x).mapv(gelu_grad);
                d *= g;
                acc(grads, *x, d);
            }
            Op::Exp(x) => acc(grads, *x, g * &node.value),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if rg(*gamma) {
                    acc(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if rg(*beta) {
                    acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if rg(*x) {
                    let gx_hat = g * val(*gamma);
                    let p = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.raw_dim());
                    for i in 0..xhat.nrows() {
                        let gh = gx_hat.row(i);
                        let xh = xhat.row(i);
                        let s1 = gh.sum();
                        let s2 = gh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                        let is = inv_std[i];
                        for ((o, a), b) in gx.row_mut(i).iter_mut().zip(gh.iter()).zip(xh.iter()) {
                            *o = is / p * (p * a - s1 - b * s2);
                        }
                    }
                    acc(grads, *x, gx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => self.attention_backward(*q, *k, *v, layout, probs, g, grads),
            Op::Gather { table, ids } => {
                let t = val(*table);
                let mut gt = Mat::zeros(t.raw_dim());
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = gt.row_mut(id);
                    row += &g.row(i);
                }
                acc(grads, *table, gt);
            }
            Op::SegmentMean { x, segs } => {
                let mut gx = Mat::zeros(val(*x).raw_dim());
                for b in 0..segs.count() {
                    let r = segs.range(b);
                    let n = r.len().max(1) as f64;
                    let gb = g.row(b).mapv(|a| a / n);
                    for i in r {
                        gx.row_mut(i).assign(&gb);
                    }
                }
                acc(grads, *x, gx);
            }
            Op::SegmentExpand { x, segs } => {
                let mut gx = Mat::zeros(val(*x).raw_dim());
                for b in 0..segs.count() {
                    let r = segs.range(b);
                    let sum = g.slice(s![r, ..]).sum_axis(Axis(0));
                    gx.row_mut(b).assign(&sum);
                }
                acc(grads, *x, gx);
            }
            Op::SegmentNormalize { x, segs, rms } => {
                let y = &node.value;
                let mut gx = Mat::zeros(y.raw_dim());
                for b in 0..segs.count() {
                    let r = segs.range(b);
                    let yb = y.slice(s![r.clone(), ..]);
                    let gb = g.slice(s![r.clone(), ..]);
                    let m = yb.len() as f64;
                    let dot = yb.iter().zip(gb.iter()).map(|(a, b)| a * b).sum::<f64>() / m;
                    let rr = rms[b];
                    let mut out = gx.slice_mut(s![r, ..]);
                    ndarray::Zip::from(&mut out)
                        .and(&gb)
                        .and(&yb)
                        .for_each(|o, &gg, &yy| *o = (gg - yy * dot) / rr);
                }
                acc(grads, *x, gx);
            }
            Op::SegmentWhere { a, b, segs, take_a } => {
                let mut ga = Mat::zeros(g.raw_dim());
                let mut gb = g.clone();
                for (seg, &t) in take_a.iter().enumerate() {
                    if t {
                        let r = segs.range(seg);
                        ga.slice_mut(s![r.clone(), ..]).assign(&g.slice(s![r.clone(), ..]));
                        gb.slice_mut(s![r, ..]).fill(0.0);
                    }
                }
                if rg(*a) {
                    acc(grads, *a, ga);
                }
                if rg(*b) {
                    acc(grads, *b, gb);
                }
            }
            Op::LogSoftmax(x) => {
                let mut gx = g.clone();
                for (i, mut row) in gx.outer_iter_mut().enumerate() {
                    let gs = g.row(i).sum();
                    for (o, &ly) in row.iter_mut().zip(node.value.row(i).iter()) {
                        *o -= ly.exp() * gs;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Pick { x, idx } => {
                let mut gx = Mat::zeros(val(*x).raw_dim());
                for (i, &j) in idx.iter().enumerate() {
                    gx[[i, j]] = g[[i, 0]];
                }
                acc(grads, *x, gx);
            }
            Op::SumAll(x) => acc(grads, *x, Mat::from_elem(val(*x).raw_dim(), g[[0, 0]])),
            Op::SumRows(x) => {
                let xv = val(*x);
                let gx = Mat::from_shape_fn(xv.raw_dim(), |(i, _)| g[[i, 0]]);
                acc(grads, *x, gx);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).ncols();
                if rg(*a) {
                    acc(grads, *a, g.slice(s![.., ..ca]).to_owned());
                }
                if rg(*b) {
                    acc(grads, *b, g.slice(s![.., ca..]).to_owned());
                }
            }
            Op::Reshape(x) => {
                let shape = val(*x).raw_dim();
                let gx = Mat::from_shape_vec(shape, g.iter().copied().collect()).expect("sized");
                acc(grads, *x, gx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let g0 = g[[0, 0]];
                let mut gl = probs.clone();
                for (i, mut row) in gl.outer_iter_mut().enumerate() {
                    row[targets[i]] -= 1.0;
                    let w = weights[i] * g0;
                    row.mapv_inplace(|a| a * w);
                }
                acc(grads, *logits, gl);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttentionLayout,
        probs: &[Mat],
        g: &Mat,
        grads: &mut [Option<Mat>],
    ) {
        let (qv, kv, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let d = qv.ncols();
        let dh = d / layout.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Mat::zeros(qv.raw_dim());
        let mut gk = Mat::zeros(kv.raw_dim());
        let mut gv = Mat::zeros(vv.raw_dim());
        let (qs, ks, vs, gs) = (
            qv.as_slice().unwrap(),
            kv.as_slice().unwrap(),
            vv.as_slice().unwrap(),
            g.as_standard_layout(),
        );
        let gs = gs.as_slice().unwrap();
        {
            let gqs = gq.as_slice_mut().unwrap();
            let gks = gk.as_slice_mut().unwrap();
            let gvs = gv.as_slice_mut().unwrap();
            let mut pi = 0;
            for b in 0..layout.queries.count() {
                let qr = layout.queries.range(b);
                let kr = layout.keys.range(b);
                let (lq, lk) = (qr.len(), kr.len());
                for h in 0..layout.heads {
                    let off = h * dh;
                    let p = &probs[pi];
                    pi += 1;
                    let mut dp = vec![0.0; lk];
                    for i in 0..lq {
                        let limit = if layout.causal { (i + 1).min(lk) } else { lk };
                        let qi = (qr.start + i) * d + off;
                        let grow = &gs[qi..qi + dh];
                        let mut dot = 0.0;
                        for j in 0..limit {
                            let vj = (kr.start + j) * d + off;
                            let vrow = &vs[vj..vj + dh];
                            let pij = p[[i, j]];
                            dp[j] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                            dot += pij * dp[j];
                            for (o, x) in gvs[vj..vj + dh].iter_mut().zip(grow) {
                                *o += pij * x;
                            }
                        }
                        for j in 0..limit {
                            let ds = p[[i, j]] * (dp[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let kj = (kr.start + j) * d + off;
                            for c in 0..dh {
                                gqs[qi + c] += ds * ks[kj + c];
                                gks[kj + c] += ds * qs[qi + c];
                            }
                        }
                    }
                }
            }
        }
        if self.nodes[q.0].requires_grad {
            acc(grads, q, gq);
        }
        if self.nodes[k.0].requires_grad {
            acc(grads, k, gk);
        }
        if self.nodes[v.0].requires_grad {
            acc(grads, v, gv);
        }
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Convenience: a `1 × n` row matrix.
pub fn row(values: &[f64]) -> Mat {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

/// Convenience: an `n × 1` column matrix.
pub fn col(values: &[f64]) -> Mat {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("col shape")
}
