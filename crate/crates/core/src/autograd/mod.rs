//! Small reverse-mode autodiff engine over dense `f64` matrices.
//!
//! Sequences in a batch are packed row-wise (no padding); [`Segments`]
//! records which rows belong to which message. Attention, pooling and
//! power normalisation operate per segment.

mod params;
mod tape;

pub use params::{Adam, Grads, Mat, ParamId, ParamStore};
pub use tape::{col, row, AttentionLayout, Segments, Tape, Var};
pub(crate) use tape::sigmoid_scalar;

/// Central finite-difference gradient of `f` w.r.t. parameter `id` at entry `(r, c)`.
pub fn finite_difference<F>(store: &mut ParamStore, id: ParamId, r: usize, c: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let orig = store.get(id)[[r, c]];
    store.get_mut(id)[[r, c]] = orig + h;
    let up = f(store);
    store.get_mut(id)[[r, c]] = orig - h;
    let down = f(store);
    store.get_mut(id)[[r, c]] = orig;
    (up - down) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use super::*;
    use crate::rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs().max(b.abs()).max(1e-8))
    }

    /// Checks every entry of every parameter against central differences.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let grads = {
            let mut t = Tape::new(store);
            let loss = f(&mut t);
            t.backward(loss)
        };
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let (rows, cols) = store.get(id).dim();
            for r in 0..rows {
                for c in 0..cols {
                    let fd = finite_difference(store, id, r, c, 1e-6, |s| {
                        let mut t = Tape::new(s);
                        let l = f(&mut t);
                        t.scalar(l)
                    });
                    let an = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                    assert!(
                        rel_err(fd, an) < 1e-5 || (fd - an).abs() < 1e-8,
                        "{}[{r},{c}]: fd={fd} analytic={an}",
                        store.name(id)
                    );
                }
            }
        }
    }

    fn store_with(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut r = rng::seeded(11);
        let mut s = ParamStore::new();
        for (n, a, b) in shapes {
            s.add_normal(n, *a, *b, 0.7, &mut r);
        }
        s
    }

    #[test]
    fn dense_ops_gradients() {
        let mut s = store_with(&[("x", 3, 4), ("w", 4, 2), ("b", 1, 2), ("c", 3, 1)]);
        check(&mut s, |t| {
            let [x, w, b, c] = [0, 1, 2, 3].map(|i| t.param(ParamId(i)));
            let h = t.matmul(x, w);
            let h = t.add_row(h, b);
            let h = t.gelu(h);
            let h = t.mul_col(h, c);
            let e = t.tanh(h);
            let sp = t.softplus(e);
            let sg = t.sigmoid(sp);
            let m = t.mul(sg, h);
            let ex = t.exp(m);
            let om = t.one_minus(ex);
            let cc = t.concat_cols(om, h);
            let ls = t.log_softmax(cc);
            let p = t.pick(ls, &[0, 3, 1]);
            let sr = t.sum_rows(cc);
            let z = t.sub(p, sr);
            t.mean_all(z)
        });
    }

    #[test]
    fn layer_norm_and_cross_entropy_gradients() {
        let mut s = store_with(&[("x", 4, 5), ("g", 1, 5), ("b", 1, 5)]);
        check(&mut s, |t| {
            let [x, g, b] = [0, 1, 2].map(|i| t.param(ParamId(i)));
            let y = t.layer_norm(x, g, b);
            t.softmax_cross_entropy(y, &[1, 0, 4, 2], &[1.0, 0.5, 2.0, 0.0])
        });
    }

    #[test]
    fn attention_gradients_causal_and_cross() {
        let mut s = store_with(&[
            ("q", 5, 4),
            ("k", 6, 4),
            ("v", 6, 4),
            ("w", 5, 4),
            ("kc", 5, 4),
            ("vc", 5, 4),
        ]);
        let qs = Rc::new(Segments::from_lengths(&[2, 3]));
        for causal in [false, true] {
            let ks = if causal {
                Rc::new(Segments::from_lengths(&[2, 3]))
            } else {
                Rc::new(Segments::from_lengths(&[4, 2]))
            };
            let qs = qs.clone();
            check(&mut s, move |t| {
                let q = t.param(ParamId(0));
                let w = t.param(ParamId(3));
                let (k, v) = if causal {
                    (t.param(ParamId(4)), t.param(ParamId(5)))
                } else {
                    (t.param(ParamId(1)), t.param(ParamId(2)))
                };
                let layout = AttentionLayout {
                    queries: qs.clone(),
                    keys: ks.clone(),
                    heads: 2,
                    causal,
                };
                let o = t.attention(q, k, v, layout);
                let m = t.mul(o, w);
                t.sum_all(m)
            });
        }
    }

    #[test]
    fn segment_ops_gradients() {
        let mut s = store_with(&[("x", 5, 3), ("p", 2, 3), ("a", 5, 3)]);
        let segs = Rc::new(Segments::from_lengths(&[2, 3]));
        check(&mut s, move |t| {
            let [x, p, a] = [0, 1, 2].map(|i| t.param(ParamId(i)));
            let n = t.segment_normalize(x, &segs);
            let m = t.segment_mean(n, &segs);
            let mp = t.mul(m, p);
            let e = t.segment_expand(mp, &segs);
            let w = t.segment_where(e, a, &segs, &[false, true]);
            let z = t.mul(w, n);
            let g = t.gather(z, &[4, 0, 0]);
            let sq = t.mul(g, g);
            t.sum_all(sq)
        });
    }

    #[test]
    fn segment_normalize_gives_unit_power() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Mat::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 + 0.5));
        let segs = Rc::new(Segments::from_lengths(&[3, 2]));
        let y = t.segment_normalize(x, &segs);
        let v = t.value(y);
        for b in 0..2 {
            let r = segs.range(b);
            let blk = v.slice(ndarray::s![r, ..]);
            let ms = blk.iter().map(|a| a * a).sum::<f64>() / blk.len() as f64;
            assert!((ms - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let s = store_with(&[("x", 2, 2), ("y", 2, 2)]);
        let frozen = [ParamId(1)];
        let mut t = Tape::with_frozen(&s, &frozen);
        let x = t.param(ParamId(0));
        let y = t.param(ParamId(1));
        let m = t.mul(x, y);
        let l = t.sum_all(m);
        let g = t.backward(l);
        assert!(g.get(ParamId(0)).is_some());
        assert!(g.get(ParamId(1)).is_none());
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", Mat::from_elem((1, 3), 5.0));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = {
                let mut t = Tape::new(&s);
                let x = t.param(id);
                let sq = t.mul(x, x);
                let l = t.sum_all(sq);
                t.backward(l)
            };
            opt.step(&mut s, &g);
        }
        assert!(s.get(id).iter().all(|v| v.abs() < 1e-2));
    }
}
