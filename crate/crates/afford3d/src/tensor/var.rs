//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Graphs are built eagerly: every op returns a new [`Var`] holding its
//! value, its parents, and a closure that maps the upstream gradient to
//! per-parent gradients. [`backward`] walks the graph once in reverse
//! creation order. Gradient summation order is fixed, so a whole training
//! step is bitwise reproducible.

use super::{add_slices, matmul_nn, matmul_nt, matmul_tn, Tensor};
use rayon::prelude::*;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackFn = Box<dyn Fn(&Tensor, &Node) -> Vec<Option<Tensor>>>;

pub(crate) struct Node {
    id: u64,
    value: Tensor,
    needs_grad: bool,
    param_name: Option<String>,
    parents: Vec<Var>,
    back: Option<BackFn>,
}

/// Handle to a node in the autodiff graph.
#[derive(Clone)]
pub struct Var {
    node: Rc<Node>,
}

fn new_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

impl Var {
    /// Value that does not require gradients (inputs, targets, lookup tables).
    pub fn constant(value: Tensor) -> Var {
        Var {
            node: Rc::new(Node {
                id: new_id(),
                value,
                needs_grad: false,
                param_name: None,
                parents: vec![],
                back: None,
            }),
        }
    }

    /// Unnamed differentiable leaf; its gradient is read back via [`GradMap::of`].
    pub fn input(value: Tensor) -> Var {
        Var {
            node: Rc::new(Node {
                id: new_id(),
                value,
                needs_grad: true,
                param_name: None,
                parents: vec![],
                back: None,
            }),
        }
    }

    /// Named parameter leaf; its gradient is read back via [`GradMap::by_name`].
    pub fn param(value: Tensor, name: &str) -> Var {
        Var {
            node: Rc::new(Node {
                id: new_id(),
                value,
                needs_grad: true,
                param_name: Some(name.to_string()),
                parents: vec![],
                back: None,
            }),
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.node.value
    }

    pub fn shape(&self) -> &[usize] {
        self.node.value.shape()
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    fn from_op(value: Tensor, parents: Vec<Var>, back: BackFn) -> Var {
        let needs_grad = parents.iter().any(|p| p.node.needs_grad);
        Var {
            node: Rc::new(Node {
                id: new_id(),
                value,
                needs_grad,
                param_name: None,
                parents,
                back: if needs_grad { Some(back) } else { None },
            }),
        }
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(&self, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let v = Tensor::from_vec(
            self.value()
                .data()
                .iter()
                .zip(other.value().data())
                .map(|(a, b)| a + b)
                .collect(),
            self.shape(),
        );
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let v = Tensor::from_vec(
            self.value()
                .data()
                .iter()
                .zip(other.value().data())
                .map(|(a, b)| a - b)
                .collect(),
            self.shape(),
        );
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|x| -x))]),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let v = Tensor::from_vec(
            self.value()
                .data()
                .iter()
                .zip(other.value().data())
                .map(|(a, b)| a * b)
                .collect(),
            self.shape(),
        );
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|g, n| {
                let a = n.parents[0].value().data();
                let b = n.parents[1].value().data();
                let ga: Vec<f64> = g.data().iter().zip(b).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = g.data().iter().zip(a).map(|(g, a)| g * a).collect();
                vec![
                    Some(Tensor::from_vec(ga, g.shape())),
                    Some(Tensor::from_vec(gb, g.shape())),
                ]
            }),
        )
    }

    pub fn div(&self, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "div: shape mismatch");
        let v = Tensor::from_vec(
            self.value()
                .data()
                .iter()
                .zip(other.value().data())
                .map(|(a, b)| a / b)
                .collect(),
            self.shape(),
        );
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|g, n| {
                let a = n.parents[0].value().data();
                let b = n.parents[1].value().data();
                let ga: Vec<f64> = g.data().iter().zip(b).map(|(g, b)| g / b).collect();
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(g, (a, b))| -g * a / (b * b))
                    .collect();
                vec![
                    Some(Tensor::from_vec(ga, g.shape())),
                    Some(Tensor::from_vec(gb, g.shape())),
                ]
            }),
        )
    }

    pub fn neg(&self) -> Var {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let v = self.value().map(|x| x + c);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.clone())]),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        let v = self.value().map(|x| x * c);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.map(|x| x * c))]),
        )
    }

    /// c - x
    pub fn rsub_scalar(&self, c: f64) -> Var {
        let v = self.value().map(|x| c - x);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.map(|x| -x))]),
        )
    }

    pub fn ln(&self) -> Var {
        let v = self.value().map(f64::ln);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(|g, n| {
                let x = n.parents[0].value().data();
                let gx: Vec<f64> = g.data().iter().zip(x).map(|(g, x)| g / x).collect();
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    pub fn powf(&self, p: f64) -> Var {
        let v = self.value().map(|x| x.powf(p));
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, n| {
                let x = n.parents[0].value().data();
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, x)| g * p * x.powf(p - 1.0))
                    .collect();
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    pub fn sqrt(&self) -> Var {
        self.powf(0.5)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        let v = self.value().map(|x| x.clamp(lo, hi));
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, n| {
                let x = n.parents[0].value().data();
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > lo && *x < hi { *g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    pub fn relu(&self) -> Var {
        let v = self.value().map(|x| x.max(0.0));
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(|g, n| {
                let x = n.parents[0].value().data();
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    /// tanh-form GELU.
    pub fn gelu(&self) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let f = |x: f64| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh());
        let v = self.value().map(f);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, n| {
                let x = n.parents[0].value().data();
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let u = C * (x + A * x * x * x);
                        let t = u.tanh();
                        let du = C * (1.0 + 3.0 * A * x * x);
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                        g * d
                    })
                    .collect();
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.value().map(|x| 1.0 / (1.0 + (-x).exp()));
        let out = v.clone();
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let s = out.data();
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(s)
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    // ---- shape -----------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let v = self.value().reshaped(shape);
        let orig: Vec<usize> = self.shape().to_vec();
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.reshaped(&orig))]),
        )
    }

    /// (B, X, Y) -> (B, Y, X)
    pub fn permute_021(&self) -> Var {
        let &[b, x, y] = self.shape() else {
            panic!("permute_021 expects 3 dims, got {:?}", self.shape())
        };
        let src = self.value().data();
        let mut out = vec![0.0; b * x * y];
        for bi in 0..b {
            for xi in 0..x {
                for yi in 0..y {
                    out[bi * y * x + yi * x + xi] = src[bi * x * y + xi * y + yi];
                }
            }
        }
        let v = Tensor::from_vec(out, &[b, y, x]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * x * y];
                for bi in 0..b {
                    for xi in 0..x {
                        for yi in 0..y {
                            gx[bi * x * y + xi * y + yi] = gd[bi * y * x + yi * x + xi];
                        }
                    }
                }
                vec![Some(Tensor::from_vec(gx, &[b, x, y]))]
            }),
        )
    }

    /// Concatenate along dim 1 of 3-D tensors: (B,T1,C) ++ (B,T2,C).
    pub fn concat_tokens(&self, other: &Var) -> Var {
        let &[b, t1, c] = self.shape() else {
            panic!("concat_tokens: lhs not 3-D")
        };
        let &[b2, t2, c2] = other.shape() else {
            panic!("concat_tokens: rhs not 3-D")
        };
        assert_eq!((b, c), (b2, c2), "concat_tokens: batch/channel mismatch");
        let mut out = Vec::with_capacity(b * (t1 + t2) * c);
        let a = self.value().data();
        let bd = other.value().data();
        for bi in 0..b {
            out.extend_from_slice(&a[bi * t1 * c..(bi + 1) * t1 * c]);
            out.extend_from_slice(&bd[bi * t2 * c..(bi + 1) * t2 * c]);
        }
        let v = Tensor::from_vec(out, &[b, t1 + t2, c]);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut ga = vec![0.0; b * t1 * c];
                let mut gb = vec![0.0; b * t2 * c];
                let t = t1 + t2;
                for bi in 0..b {
                    ga[bi * t1 * c..(bi + 1) * t1 * c]
                        .copy_from_slice(&gd[bi * t * c..bi * t * c + t1 * c]);
                    gb[bi * t2 * c..(bi + 1) * t2 * c]
                        .copy_from_slice(&gd[bi * t * c + t1 * c..(bi + 1) * t * c]);
                }
                vec![
                    Some(Tensor::from_vec(ga, &[b, t1, c])),
                    Some(Tensor::from_vec(gb, &[b, t2, c])),
                ]
            }),
        )
    }

    /// Slice tokens `lo..hi` along dim 1 of a (B,T,C) tensor.
    pub fn slice_tokens(&self, lo: usize, hi: usize) -> Var {
        let &[b, t, c] = self.shape() else {
            panic!("slice_tokens: not 3-D")
        };
        assert!(
            lo < hi && hi <= t,
            "slice_tokens: bad range {lo}..{hi} of {t}"
        );
        let src = self.value().data();
        let w = hi - lo;
        let mut out = Vec::with_capacity(b * w * c);
        for bi in 0..b {
            out.extend_from_slice(&src[bi * t * c + lo * c..bi * t * c + hi * c]);
        }
        let v = Tensor::from_vec(out, &[b, w, c]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * t * c];
                for bi in 0..b {
                    gx[bi * t * c + lo * c..bi * t * c + hi * c]
                        .copy_from_slice(&gd[bi * w * c..(bi + 1) * w * c]);
                }
                vec![Some(Tensor::from_vec(gx, &[b, t, c]))]
            }),
        )
    }

    /// (B,T,C) -> (B·h, T, C/h): regroup channels into heads.
    pub fn split_heads(&self, heads: usize) -> Var {
        let &[b, t, c] = self.shape() else {
            panic!("split_heads: not 3-D")
        };
        assert_eq!(
            c % heads,
            0,
            "split_heads: {c} channels not divisible by {heads}"
        );
        let dh = c / heads;
        let src = self.value().data();
        let mut out = vec![0.0; b * t * c];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let dst = ((bi * heads + h) * t + ti) * dh;
                    let s = (bi * t + ti) * c + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        let v = Tensor::from_vec(out, &[b * heads, t, dh]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * t * c];
                for bi in 0..b {
                    for h in 0..heads {
                        for ti in 0..t {
                            let s = ((bi * heads + h) * t + ti) * dh;
                            let dst = (bi * t + ti) * c + h * dh;
                            gx[dst..dst + dh].copy_from_slice(&gd[s..s + dh]);
                        }
                    }
                }
                vec![Some(Tensor::from_vec(gx, &[b, t, c]))]
            }),
        )
    }

    /// Inverse of [`split_heads`]: (B·h, T, dh) -> (B, T, h·dh).
    pub fn merge_heads(&self, heads: usize) -> Var {
        let &[bh, t, dh] = self.shape() else {
            panic!("merge_heads: not 3-D")
        };
        assert_eq!(bh % heads, 0);
        let b = bh / heads;
        let c = heads * dh;
        let src = self.value().data();
        let mut out = vec![0.0; b * t * c];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let s = ((bi * heads + h) * t + ti) * dh;
                    let dst = (bi * t + ti) * c + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        let v = Tensor::from_vec(out, &[b, t, c]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * t * c];
                for bi in 0..b {
                    for h in 0..heads {
                        for ti in 0..t {
                            let dst = ((bi * heads + h) * t + ti) * dh;
                            let s = (bi * t + ti) * c + h * dh;
                            gx[dst..dst + dh].copy_from_slice(&gd[s..s + dh]);
                        }
                    }
                }
                vec![Some(Tensor::from_vec(gx, &[b * heads, t, dh]))]
            }),
        )
    }

    // ---- linear algebra ----------------------------------------------------

    /// x (…,Cin) · w (Cin,Cout) + b. Leading dims of x are preserved.
    pub fn linear(&self, w: &Var, bias: Option<&Var>) -> Var {
        let x_shape = self.shape().to_vec();
        let cin = *x_shape.last().unwrap();
        let &[win, cout] = w.shape() else {
            panic!("linear: weight not 2-D")
        };
        assert_eq!(cin, win, "linear: input {cin} vs weight {win}");
        let rows = self.value().numel() / cin;
        let y = matmul_nn(self.value().data(), w.value().data(), rows, cin, cout);
        let mut y_shape = x_shape.clone();
        *y_shape.last_mut().unwrap() = cout;
        let mut y = y;
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[cout], "linear: bias shape");
            let bd = b.value().data();
            for row in y.chunks_mut(cout) {
                add_slices(row, bd);
            }
        }
        let value = Tensor::from_vec(y, &y_shape);
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Var::from_op(
            value,
            parents,
            Box::new(move |g, n| {
                let x = n.parents[0].value().data();
                let w = n.parents[1].value().data();
                let gd = g.data();
                let gx = matmul_nt(gd, w, rows, cout, cin);
                let gw = matmul_tn(x, gd, cin, rows, cout);
                let mut grads = vec![
                    Some(Tensor::from_vec(gx, n.parents[0].shape())),
                    Some(Tensor::from_vec(gw, &[cin, cout])),
                ];
                if has_bias {
                    let mut gb = vec![0.0; cout];
                    for row in gd.chunks(cout) {
                        add_slices(&mut gb, row);
                    }
                    grads.push(Some(Tensor::from_vec(gb, &[cout])));
                }
                grads
            }),
        )
    }

    /// Batched matmul: (G,m,k) · (G,k,n) -> (G,m,n).
    pub fn bmm(&self, other: &Var) -> Var {
        let &[g1, m, k] = self.shape() else {
            panic!("bmm: lhs not 3-D")
        };
        let &[g2, k2, n] = other.shape() else {
            panic!("bmm: rhs not 3-D")
        };
        assert_eq!((g1, k), (g2, k2), "bmm: shape mismatch");
        let a = self.value().data();
        let b = other.value().data();
        let mut out = vec![0.0; g1 * m * n];
        out.par_chunks_mut(m * n)
            .enumerate()
            .for_each(|(gi, chunk)| {
                let c = matmul_nn(
                    &a[gi * m * k..(gi + 1) * m * k],
                    &b[gi * k * n..(gi + 1) * k * n],
                    m,
                    k,
                    n,
                );
                chunk.copy_from_slice(&c);
            });
        let v = Tensor::from_vec(out, &[g1, m, n]);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(move |g, nd| {
                let a = nd.parents[0].value().data();
                let b = nd.parents[1].value().data();
                let gd = g.data();
                let mut ga = vec![0.0; g1 * m * k];
                let mut gb = vec![0.0; g1 * k * n];
                ga.par_chunks_mut(m * k)
                    .zip(gb.par_chunks_mut(k * n))
                    .enumerate()
                    .for_each(|(gi, (gac, gbc))| {
                        let gslice = &gd[gi * m * n..(gi + 1) * m * n];
                        let da = matmul_nt(gslice, &b[gi * k * n..(gi + 1) * k * n], m, n, k);
                        let db = matmul_tn(&a[gi * m * k..(gi + 1) * m * k], gslice, k, m, n);
                        gac.copy_from_slice(&da);
                        gbc.copy_from_slice(&db);
                    });
                vec![
                    Some(Tensor::from_vec(ga, &[g1, m, k])),
                    Some(Tensor::from_vec(gb, &[g1, k, n])),
                ]
            }),
        )
    }

    /// Batched matmul with transposed rhs: (G,m,k) · (G,n,k)ᵀ -> (G,m,n).
    pub fn bmm_nt(&self, other: &Var) -> Var {
        let &[g1, m, k] = self.shape() else {
            panic!("bmm_nt: lhs not 3-D")
        };
        let &[g2, n, k2] = other.shape() else {
            panic!("bmm_nt: rhs not 3-D")
        };
        assert_eq!((g1, k), (g2, k2), "bmm_nt: shape mismatch");
        let a = self.value().data();
        let b = other.value().data();
        let mut out = vec![0.0; g1 * m * n];
        out.par_chunks_mut(m * n)
            .enumerate()
            .for_each(|(gi, chunk)| {
                let c = matmul_nt(
                    &a[gi * m * k..(gi + 1) * m * k],
                    &b[gi * n * k..(gi + 1) * n * k],
                    m,
                    k,
                    n,
                );
                chunk.copy_from_slice(&c);
            });
        let v = Tensor::from_vec(out, &[g1, m, n]);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(move |g, nd| {
                let a = nd.parents[0].value().data();
                let b = nd.parents[1].value().data();
                let gd = g.data();
                let mut ga = vec![0.0; g1 * m * k];
                let mut gb = vec![0.0; g1 * n * k];
                ga.par_chunks_mut(m * k)
                    .zip(gb.par_chunks_mut(n * k))
                    .enumerate()
                    .for_each(|(gi, (gac, gbc))| {
                        let gslice = &gd[gi * m * n..(gi + 1) * m * n];
                        // y = a bᵀ: da = g b ; db = gᵀ a
                        let da = matmul_nn(gslice, &b[gi * n * k..(gi + 1) * n * k], m, n, k);
                        let db = matmul_tn(gslice, &a[gi * m * k..(gi + 1) * m * k], n, m, k);
                        gac.copy_from_slice(&da);
                        gbc.copy_from_slice(&db);
                    });
                vec![
                    Some(Tensor::from_vec(ga, &[g1, m, k])),
                    Some(Tensor::from_vec(gb, &[g1, n, k])),
                ]
            }),
        )
    }

    /// Apply a (R,T) matrix along the token axis: A · x for each batch,
    /// (B,T,C) -> (B,R,C).
    pub fn left_linear(&self, matrix: &Var) -> Var {
        let &[b, t, c] = self.shape() else {
            panic!("left_linear: input not 3-D")
        };
        let &[r, t2] = matrix.shape() else {
            panic!("left_linear: matrix not 2-D")
        };
        assert_eq!(t, t2, "left_linear: token count mismatch");
        let x = self.value().data();
        let a = matrix.value().data();
        let mut out = vec![0.0; b * r * c];
        for bi in 0..b {
            let y = matmul_nn(a, &x[bi * t * c..(bi + 1) * t * c], r, t, c);
            out[bi * r * c..(bi + 1) * r * c].copy_from_slice(&y);
        }
        let v = Tensor::from_vec(out, &[b, r, c]);
        Var::from_op(
            v,
            vec![self.clone(), matrix.clone()],
            Box::new(move |g, nd| {
                let x = nd.parents[0].value().data();
                let a = nd.parents[1].value().data();
                let gd = g.data();
                let mut gx = vec![0.0; b * t * c];
                let mut ga = vec![0.0; r * t];
                for bi in 0..b {
                    let gs = &gd[bi * r * c..(bi + 1) * r * c];
                    let dx = matmul_tn(a, gs, t, r, c);
                    gx[bi * t * c..(bi + 1) * t * c].copy_from_slice(&dx);
                    let da = matmul_nt(gs, &x[bi * t * c..(bi + 1) * t * c], r, c, t);
                    add_slices(&mut ga, &da);
                }
                vec![
                    Some(Tensor::from_vec(gx, &[b, t, c])),
                    Some(Tensor::from_vec(ga, &[r, t])),
                ]
            }),
        )
    }

    // ---- reductions & broadcasts ------------------------------------------

    pub fn sum_all(&self) -> Var {
        let s: f64 = self.value().data().iter().sum();
        let shape = self.shape().to_vec();
        Var::from_op(
            Tensor::scalar(s),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().numel() as f64;
        let s: f64 = self.value().data().iter().sum();
        let shape = self.shape().to_vec();
        Var::from_op(
            Tensor::scalar(s / n),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item() / n))]),
        )
    }

    /// (R,C) -> (R): sum within each row.
    pub fn row_sums(&self) -> Var {
        let &[r, c] = self.shape() else {
            panic!("row_sums: not 2-D")
        };
        let x = self.value().data();
        let sums: Vec<f64> = x.chunks(c).map(|row| row.iter().sum()).collect();
        let v = Tensor::from_vec(sums, &[r]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; r * c];
                for (i, row) in gx.chunks_mut(c).enumerate() {
                    row.fill(gd[i]);
                }
                vec![Some(Tensor::from_vec(gx, &[r, c]))]
            }),
        )
    }

    /// (R,C) -> (C): mean over rows per column.
    pub fn col_means(&self) -> Var {
        let &[r, c] = self.shape() else {
            panic!("col_means: not 2-D")
        };
        let x = self.value().data();
        let mut m = vec![0.0; c];
        for row in x.chunks(c) {
            add_slices(&mut m, row);
        }
        for v in &mut m {
            *v /= r as f64;
        }
        let v = Tensor::from_vec(m, &[c]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; r * c];
                for row in gx.chunks_mut(c) {
                    for (o, gi) in row.iter_mut().zip(gd) {
                        *o = gi / r as f64;
                    }
                }
                vec![Some(Tensor::from_vec(gx, &[r, c]))]
            }),
        )
    }

    /// (C) -> (R,C): repeat a row vector R times.
    pub fn broadcast_rows(&self, r: usize) -> Var {
        let &[c] = self.shape() else {
            panic!("broadcast_rows: not 1-D")
        };
        let x = self.value().data();
        let mut out = Vec::with_capacity(r * c);
        for _ in 0..r {
            out.extend_from_slice(x);
        }
        let v = Tensor::from_vec(out, &[r, c]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; c];
                for row in gd.chunks(c) {
                    add_slices(&mut gx, row);
                }
                vec![Some(Tensor::from_vec(gx, &[c]))]
            }),
        )
    }

    /// (C) -> (B,T,C): used for learned null-token rows.
    pub fn broadcast_token(&self, b: usize, t: usize) -> Var {
        let &[c] = self.shape() else {
            panic!("broadcast_token: not 1-D")
        };
        self.broadcast_rows(b * t).reshape(&[b, t, c])
    }

    /// x (B,T,C) + p (T,C) broadcast over the batch.
    pub fn add_tokens(&self, table: &Var) -> Var {
        let &[b, t, c] = self.shape() else {
            panic!("add_tokens: input not 3-D")
        };
        let &[t2, c2] = table.shape() else {
            panic!("add_tokens: table not 2-D")
        };
        assert_eq!((t, c), (t2, c2), "add_tokens: shape mismatch");
        let x = self.value().data();
        let p = table.value().data();
        let mut out = x.to_vec();
        for chunk in out.chunks_mut(t * c) {
            add_slices(chunk, p);
        }
        let v = Tensor::from_vec(out, &[b, t, c]);
        Var::from_op(
            v,
            vec![self.clone(), table.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gp = vec![0.0; t * c];
                for chunk in gd.chunks(t * c) {
                    add_slices(&mut gp, chunk);
                }
                vec![Some(g.clone()), Some(Tensor::from_vec(gp, &[t2, c2]))]
            }),
        )
    }

    // ---- softmax / normalization -------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Var {
        let shape = self.shape().to_vec();
        let l = *shape.last().unwrap();
        let x = self.value().data();
        let mut out = vec![0.0; x.len()];
        for (row_in, row_out) in x.chunks(l).zip(out.chunks_mut(l)) {
            let mx = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in row_out.iter_mut() {
                *o /= z;
            }
        }
        let value = Tensor::from_vec(out, &shape);
        let saved = value.clone();
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| {
                let s = saved.data();
                let gd = g.data();
                let mut gx = vec![0.0; gd.len()];
                for ((srow, grow), orow) in s.chunks(l).zip(gd.chunks(l)).zip(gx.chunks_mut(l)) {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                    for ((o, &sv), &gv) in orow.iter_mut().zip(srow).zip(grow) {
                        *o = sv * (gv - dot);
                    }
                }
                vec![Some(Tensor::from_vec(gx, g.shape()))]
            }),
        )
    }

    /// Layer norm over the last axis with affine parameters.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let shape = self.shape().to_vec();
        let c = *shape.last().unwrap();
        assert_eq!(gamma.shape(), &[c]);
        assert_eq!(beta.shape(), &[c]);
        let x = self.value().data();
        let gm = gamma.value().data();
        let bt = beta.value().data();
        let rows = x.len() / c;
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for i in 0..c {
                let xh = (row[i] - mean) * inv;
                xhat[r * c + i] = xh;
                out[r * c + i] = xh * gm[i] + bt[i];
            }
        }
        let value = Tensor::from_vec(out, &shape);
        Var::from_op(
            value,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, nd| {
                let gm = nd.parents[1].value().data();
                let gd = g.data();
                let mut gx = vec![0.0; gd.len()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..rows {
                    let grow = &gd[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut sum_gy = 0.0;
                    let mut sum_gy_xh = 0.0;
                    for i in 0..c {
                        let gy = grow[i] * gm[i];
                        sum_gy += gy;
                        sum_gy_xh += gy * xh[i];
                        ggamma[i] += grow[i] * xh[i];
                        gbeta[i] += grow[i];
                    }
                    let inv = inv_std[r];
                    for i in 0..c {
                        let gy = grow[i] * gm[i];
                        gx[r * c + i] =
                            inv * (gy - sum_gy / c as f64 - xh[i] * sum_gy_xh / c as f64);
                    }
                }
                vec![
                    Some(Tensor::from_vec(gx, g.shape())),
                    Some(Tensor::from_vec(ggamma, &[c])),
                    Some(Tensor::from_vec(gbeta, &[c])),
                ]
            }),
        )
    }

    // ---- structured gathers -------------------------------------------------

    /// Gather per-sample rows: x (B,N,C), idx (B,M,K) -> (B,M,K,C).
    pub fn gather_groups(&self, idx: &[usize], m: usize, k: usize) -> Var {
        let &[b, n, c] = self.shape() else {
            panic!("gather_groups: not 3-D")
        };
        assert_eq!(idx.len(), b * m * k);
        let x = self.value().data();
        let mut out = vec![0.0; b * m * k * c];
        out.par_chunks_mut(m * k * c)
            .enumerate()
            .for_each(|(bi, chunk)| {
                for (slot, &i) in idx[bi * m * k..(bi + 1) * m * k].iter().enumerate() {
                    debug_assert!(i < n);
                    chunk[slot * c..(slot + 1) * c]
                        .copy_from_slice(&x[(bi * n + i) * c..(bi * n + i + 1) * c]);
                }
            });
        let v = Tensor::from_vec(out, &[b, m, k, c]);
        let idx = idx.to_vec();
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * n * c];
                gx.par_chunks_mut(n * c)
                    .enumerate()
                    .for_each(|(bi, chunk)| {
                        for (slot, &i) in idx[bi * m * k..(bi + 1) * m * k].iter().enumerate() {
                            let src = &gd[(bi * m * k + slot) * c..(bi * m * k + slot + 1) * c];
                            add_slices(&mut chunk[i * c..(i + 1) * c], src);
                        }
                    });
                vec![Some(Tensor::from_vec(gx, &[b, n, c]))]
            }),
        )
    }

    /// Max over the group axis: (B,M,K,C) -> (B,M,C). Ties keep the first.
    pub fn max_groups(&self) -> Var {
        let &[b, m, k, c] = self.shape() else {
            panic!("max_groups: not 4-D")
        };
        let x = self.value().data();
        let mut out = vec![f64::NEG_INFINITY; b * m * c];
        let mut arg = vec![0usize; b * m * c];
        for bm in 0..b * m {
            let base = bm * k * c;
            let orow = &mut out[bm * c..(bm + 1) * c];
            let arow = &mut arg[bm * c..(bm + 1) * c];
            for kk in 0..k {
                for ci in 0..c {
                    let v = x[base + kk * c + ci];
                    if v > orow[ci] {
                        orow[ci] = v;
                        arow[ci] = kk;
                    }
                }
            }
        }
        let v = Tensor::from_vec(out, &[b, m, c]);
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * m * k * c];
                for bm in 0..b * m {
                    for ci in 0..c {
                        let kk = arg[bm * c + ci];
                        gx[bm * k * c + kk * c + ci] += gd[bm * c + ci];
                    }
                }
                vec![Some(Tensor::from_vec(gx, &[b, m, k, c]))]
            }),
        )
    }

    /// Inverse-distance feature propagation with fixed per-sample indices and
    /// weights: x (B,M,C) -> (B,N,C), out[b,n] = Σ_j w[b,n,j] · x[b, idx[b,n,j]].
    pub fn interp_points(&self, idx: &[usize], weights: &[f64], n: usize, kk: usize) -> Var {
        let &[b, m, c] = self.shape() else {
            panic!("interp_points: not 3-D")
        };
        assert_eq!(idx.len(), b * n * kk);
        assert_eq!(weights.len(), b * n * kk);
        let x = self.value().data();
        let mut out = vec![0.0; b * n * c];
        out.par_chunks_mut(n * c)
            .enumerate()
            .for_each(|(bi, chunk)| {
                for ni in 0..n {
                    let dst = &mut chunk[ni * c..(ni + 1) * c];
                    for j in 0..kk {
                        let s = bi * n * kk + ni * kk + j;
                        let w = weights[s];
                        let src = &x[(bi * m + idx[s]) * c..(bi * m + idx[s] + 1) * c];
                        for (d, &sv) in dst.iter_mut().zip(src) {
                            *d += w * sv;
                        }
                    }
                }
            });
        let v = Tensor::from_vec(out, &[b, n, c]);
        let idx = idx.to_vec();
        let weights = weights.to_vec();
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![0.0; b * m * c];
                gx.par_chunks_mut(m * c)
                    .enumerate()
                    .for_each(|(bi, chunk)| {
                        for ni in 0..n {
                            for j in 0..kk {
                                let s = bi * n * kk + ni * kk + j;
                                let w = weights[s];
                                let grow = &gd[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                                let dst = &mut chunk[idx[s] * c..(idx[s] + 1) * c];
                                for (d, &gv) in dst.iter_mut().zip(grow) {
                                    *d += w * gv;
                                }
                            }
                        }
                    });
                vec![Some(Tensor::from_vec(gx, &[b, m, c]))]
            }),
        )
    }

    /// Row lookup: table (V,C), ids flattened (B·L) -> (B,L,C).
    pub fn embedding(&self, ids: &[usize], b: usize, l: usize) -> Var {
        let &[v_count, c] = self.shape() else {
            panic!("embedding: table not 2-D")
        };
        assert_eq!(ids.len(), b * l);
        let table = self.value().data();
        let mut out = vec![0.0; b * l * c];
        for (slot, &id) in ids.iter().enumerate() {
            assert!(id < v_count, "embedding: id {id} out of range {v_count}");
            out[slot * c..(slot + 1) * c].copy_from_slice(&table[id * c..(id + 1) * c]);
        }
        let v = Tensor::from_vec(out, &[b, l, c]);
        let ids = ids.to_vec();
        Var::from_op(
            v,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gt = vec![0.0; v_count * c];
                for (slot, &id) in ids.iter().enumerate() {
                    add_slices(&mut gt[id * c..(id + 1) * c], &gd[slot * c..(slot + 1) * c]);
                }
                vec![Some(Tensor::from_vec(gt, &[v_count, c]))]
            }),
        )
    }

    /// 2-D convolution, NCHW layout, square stride/padding.
    pub fn conv2d(&self, w: &Var, bias: &Var, stride: usize, pad: usize) -> Var {
        let &[b, cin, h, wd] = self.shape() else {
            panic!("conv2d: input not 4-D")
        };
        let &[cout, cin2, kh, kw] = w.shape() else {
            panic!("conv2d: weight not 4-D")
        };
        assert_eq!(cin, cin2, "conv2d: channel mismatch");
        assert_eq!(bias.shape(), &[cout]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let kdim = cin * kh * kw;
        let x = self.value().data();
        let wv = w.value().data();
        let bv = bias.value().data();

        let im2col = move |img: &[f64]| -> Vec<f64> {
            let mut col = vec![0.0; kdim * ho * wo];
            for ci in 0..cin {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let krow = (ci * kh + ki) * kw + kj;
                        for oy in 0..ho {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                col[krow * ho * wo + oy * wo + ox] =
                                    img[ci * h * wd + iy as usize * wd + ix as usize];
                            }
                        }
                    }
                }
            }
            col
        };

        let mut out = vec![0.0; b * cout * ho * wo];
        out.par_chunks_mut(cout * ho * wo)
            .enumerate()
            .for_each(|(bi, chunk)| {
                let col = im2col(&x[bi * cin * h * wd..(bi + 1) * cin * h * wd]);
                let y = matmul_nn(wv, &col, cout, kdim, ho * wo);
                for (co, plane) in chunk.chunks_mut(ho * wo).enumerate() {
                    for (p, &yv) in plane.iter_mut().zip(&y[co * ho * wo..(co + 1) * ho * wo]) {
                        *p = yv + bv[co];
                    }
                }
            });
        let v = Tensor::from_vec(out, &[b, cout, ho, wo]);
        Var::from_op(
            v,
            vec![self.clone(), w.clone(), bias.clone()],
            Box::new(move |g, nd| {
                let x = nd.parents[0].value().data();
                let wv = nd.parents[1].value().data();
                let gd = g.data();
                // per-image gradients computed in parallel, reduced in batch order
                let per_image: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..b)
                    .into_par_iter()
                    .map(|bi| {
                        let img = &x[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                        let col = im2col(img);
                        let gout = &gd[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
                        let gw = matmul_nt(gout, &col, cout, ho * wo, kdim);
                        let gcol = matmul_tn(wv, gout, kdim, cout, ho * wo);
                        // col2im
                        let mut gx = vec![0.0; cin * h * wd];
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let krow = (ci * kh + ki) * kw + kj;
                                    for oy in 0..ho {
                                        let iy = (oy * stride + ki) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for ox in 0..wo {
                                            let ix = (ox * stride + kj) as isize - pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            gx[ci * h * wd + iy as usize * wd + ix as usize] +=
                                                gcol[krow * ho * wo + oy * wo + ox];
                                        }
                                    }
                                }
                            }
                        }
                        let mut gb = vec![0.0; cout];
                        for (co, gbv) in gb.iter_mut().enumerate() {
                            *gbv = gout[co * ho * wo..(co + 1) * ho * wo].iter().sum();
                        }
                        (gx, gw, gb)
                    })
                    .collect();
                let mut gx = vec![0.0; b * cin * h * wd];
                let mut gw = vec![0.0; cout * kdim];
                let mut gb = vec![0.0; cout];
                for (bi, (gxi, gwi, gbi)) in per_image.iter().enumerate() {
                    gx[bi * cin * h * wd..(bi + 1) * cin * h * wd].copy_from_slice(gxi);
                    add_slices(&mut gw, gwi);
                    add_slices(&mut gb, gbi);
                }
                vec![
                    Some(Tensor::from_vec(gx, &[b, cin, h, wd])),
                    Some(Tensor::from_vec(gw, &[cout, cin, kh, kw])),
                    Some(Tensor::from_vec(gb, &[cout])),
                ]
            }),
        )
    }
}

/// Gradients produced by one [`backward`] sweep.
pub struct GradMap {
    by_id: HashMap<u64, Tensor>,
    by_name: HashMap<String, Tensor>,
}

impl GradMap {
    pub fn of(&self, var: &Var) -> Option<&Tensor> {
        self.by_id.get(&var.id())
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.by_name.keys()
    }
}

/// Reverse sweep from a root. The root gradient is seeded with ones.
pub fn backward(root: &Var) -> GradMap {
    // Collect reachable nodes; creation ids are topologically ordered.
    let mut stack = vec![root.clone()];
    let mut seen: HashMap<u64, Var> = HashMap::new();
    while let Some(v) = stack.pop() {
        if seen.contains_key(&v.id()) || !v.node.needs_grad {
            continue;
        }
        seen.insert(v.id(), v.clone());
        for p in &v.node.parents {
            if p.node.needs_grad && !seen.contains_key(&p.id()) {
                stack.push(p.clone());
            }
        }
    }
    let mut order: Vec<&Var> = seen.values().collect();
    order.sort_by_key(|v| std::cmp::Reverse(v.id()));

    let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
    grads.insert(root.id(), vec![1.0; root.value().numel()]);

    let mut leaf_by_id: HashMap<u64, Tensor> = HashMap::new();
    let mut by_name: HashMap<String, Tensor> = HashMap::new();

    for var in order {
        let Some(g) = grads.remove(&var.id()) else {
            continue;
        };
        let g = Tensor::from_vec(g, var.shape());
        if var.node.back.is_none() {
            if let Some(name) = &var.node.param_name {
                by_name.insert(name.clone(), g.clone());
            }
            leaf_by_id.insert(var.id(), g);
            continue;
        }
        let back = var.node.back.as_ref().unwrap();
        let parent_grads = back(&g, &var.node);
        debug_assert_eq!(parent_grads.len(), var.node.parents.len());
        for (p, pg) in var.node.parents.iter().zip(parent_grads) {
            if !p.node.needs_grad {
                continue;
            }
            let Some(pg) = pg else { continue };
            debug_assert_eq!(pg.shape(), p.shape());
            grads
                .entry(p.id())
                .and_modify(|acc| add_slices(acc, pg.data()))
                .or_insert_with(|| pg.to_vec());
        }
    }

    GradMap {
        by_id: leaf_by_id,
        by_name,
    }
}
