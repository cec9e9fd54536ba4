//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! then accumulates gradients for all leaf nodes. The op set is exactly what
//! the encoder/decoder, the classifier heads, and the loss terms need —
//! nothing more general.

use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    /// Trainable input; gradients are accumulated for it.
    Leaf,
    /// Non-trainable input; no gradient is tracked through it.
    Const,
    /// W x for matrix W and column vector x.
    MatVec { w: usize, x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    MulElem { a: usize, b: usize },
    ScaleConst { x: usize, k: f64 },
    AddConst { x: usize, k: f64 },
    /// Elementwise product with a fixed mask (dropout and friends).
    MulMask { x: usize, mask: Vec<f64> },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Exp { x: usize },
    /// ln(max(x, CLAMP)); clamped coordinates get zero gradient.
    LnClamped { x: usize },
    Concat { a: usize, b: usize },
    /// Row i of a matrix, as a column vector (embedding lookup).
    Row { w: usize, i: usize },
    /// Single coordinate of a vector, as a scalar.
    Pick { x: usize, i: usize },
    Dot { a: usize, b: usize },
    /// Σ t_i · x_i with constant dense coefficients t.
    DotConst { x: usize, t: Vec<f64> },
    /// Σ p · x_i over sparse constant (i, p) pairs.
    DotSparse { x: usize, t: Vec<(usize, f64)> },
    Sum { x: usize },
    Softmax { x: usize },
    LogSoftmax { x: usize },
    /// Elementwise max over several same-shape vectors; gradient flows to
    /// the argmax input per coordinate (ties to the earliest input).
    MaxMany { xs: Vec<usize> },
    /// mu + exp(logvar / 2) ⊙ noise with fixed noise.
    Reparam { mu: usize, logvar: usize, noise: Vec<f64> },
    /// 0.5 Σ (mu² + exp(logvar) − 1 − logvar), a scalar.
    KlStdNormal { mu: usize, logvar: usize },
    /// Identity on values, gradient barrier.
    Detach { x: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Probabilities are clamped to this floor inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Const | Op::Detach { .. } => false,
            Op::MatVec { w: a, x: b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::MulElem { a, b }
            | Op::Concat { a, b }
            | Op::Dot { a, b }
            | Op::Reparam { mu: a, logvar: b, .. }
            | Op::KlStdNormal { mu: a, logvar: b } => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::ScaleConst { x, .. }
            | Op::AddConst { x, .. }
            | Op::MulMask { x, .. }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Relu { x }
            | Op::Exp { x }
            | Op::LnClamped { x }
            | Op::Row { w: x, .. }
            | Op::Pick { x, .. }
            | Op::DotConst { x, .. }
            | Op::DotSparse { x, .. }
            | Op::Sum { x }
            | Op::Softmax { x }
            | Op::LogSoftmax { x } => self.nodes[*x].needs_grad,
            Op::MaxMany { xs } => xs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable input node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-trainable input node.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last `backward` call.
    /// Zeros if the node never received gradient.
    pub fn grad(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.rows(), n.value.cols()))
    }

    // ---- ops ----------------------------------------------------------

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (wt, xt) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        assert!(xt.is_vector(), "matvec: x must be a column vector");
        assert_eq!(wt.cols(), xt.rows(), "matvec: {}x{} · {}", wt.rows(), wt.cols(), xt.rows());
        let mut out = vec![0.0; wt.rows()];
        let xd = xt.data();
        for (r, o) in out.iter_mut().enumerate() {
            let row = wt.row(r);
            *o = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        self.push(Tensor::vector(out), Op::MatVec { w: w.0, x: x.0 })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(at.same_shape(bt), "add: shape mismatch");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::matrix(at.rows(), at.cols(), data);
        self.push(out, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(at.same_shape(bt), "sub: shape mismatch");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::matrix(at.rows(), at.cols(), data);
        self.push(out, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(at.same_shape(bt), "mul_elem: shape mismatch");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::matrix(at.rows(), at.cols(), data);
        self.push(out, Op::MulElem { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v * k).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::ScaleConst { x: x.0, k })
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v + k).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::AddConst { x: x.0, k })
    }

    pub fn mul_mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xt = &self.nodes[x.0].value;
        assert_eq!(xt.len(), mask.len(), "mul_mask: length mismatch");
        let data = xt.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::MulMask { x: x.0, mask })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::Tanh { x: x.0 })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::Relu { x: x.0 })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v.exp()).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::Exp { x: x.0 })
    }

    /// ln(max(x, 1e-12)). The clamp keeps cross-entropy finite on degenerate
    /// predictions; clamped coordinates get zero gradient.
    pub fn ln_clamped(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|v| v.max(LOG_CLAMP).ln()).collect();
        let out = Tensor::matrix(xt.rows(), xt.cols(), data);
        self.push(out, Op::LnClamped { x: x.0 })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(at.is_vector() && bt.is_vector(), "concat: vectors only");
        let mut data = Vec::with_capacity(at.len() + bt.len());
        data.extend_from_slice(at.data());
        data.extend_from_slice(bt.data());
        self.push(Tensor::vector(data), Op::Concat { a: a.0, b: b.0 })
    }

    /// Row `i` of a matrix as a column vector (embedding lookup).
    pub fn row(&mut self, w: Var, i: usize) -> Var {
        let wt = &self.nodes[w.0].value;
        assert!(i < wt.rows(), "row: index {} out of {}", i, wt.rows());
        let data = wt.row(i).to_vec();
        self.push(Tensor::vector(data), Op::Row { w: w.0, i })
    }

    pub fn pick(&mut self, x: Var, i: usize) -> Var {
        let xt = &self.nodes[x.0].value;
        assert!(xt.is_vector() && i < xt.len(), "pick: bad index");
        let v = xt.data()[i];
        self.push(Tensor::scalar(v), Op::Pick { x: x.0, i })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(at.is_vector() && at.same_shape(bt), "dot: shape mismatch");
        let v = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(v), Op::Dot { a: a.0, b: b.0 })
    }

    pub fn dot_const(&mut self, x: Var, t: Vec<f64>) -> Var {
        let xt = &self.nodes[x.0].value;
        assert_eq!(xt.len(), t.len(), "dot_const: length mismatch");
        let v = xt.data().iter().zip(&t).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(v), Op::DotConst { x: x.0, t })
    }

    pub fn dot_sparse(&mut self, x: Var, t: Vec<(usize, f64)>) -> Var {
        let xt = &self.nodes[x.0].value;
        let v = t.iter().map(|&(i, p)| p * xt.data()[i]).sum();
        self.push(Tensor::scalar(v), Op::DotSparse { x: x.0, t })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum { x: x.0 })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        assert!(xt.is_vector(), "softmax: vector input");
        assert!(xt.is_finite(), "softmax: non-finite logits");
        let out = Tensor::vector(softmax_slice(xt.data()));
        self.push(out, Op::Softmax { x: x.0 })
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xt = &self.nodes[x.0].value;
        assert!(xt.is_vector(), "log_softmax: vector input");
        let max = xt.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xt.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let data = xt.data().iter().map(|v| v - lse).collect();
        self.push(Tensor::vector(data), Op::LogSoftmax { x: x.0 })
    }

    pub fn max_many(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "max_many: empty input");
        let shape = {
            let t = &self.nodes[xs[0].0].value;
            (t.rows(), t.cols())
        };
        let mut out = self.nodes[xs[0].0].value.clone();
        for &v in &xs[1..] {
            let t = &self.nodes[v.0].value;
            assert!((t.rows(), t.cols()) == shape, "max_many: shape mismatch");
            for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                if *x > *o {
                    *o = *x;
                }
            }
        }
        let ids = xs.iter().map(|v| v.0).collect();
        self.push(out, Op::MaxMany { xs: ids })
    }

    pub fn reparam(&mut self, mu: Var, logvar: Var, noise: Vec<f64>) -> Var {
        let (mt, lt) = (&self.nodes[mu.0].value, &self.nodes[logvar.0].value);
        assert!(mt.same_shape(lt) && mt.len() == noise.len(), "reparam: dimension mismatch");
        let data = mt
            .data()
            .iter()
            .zip(lt.data())
            .zip(&noise)
            .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
            .collect();
        self.push(
            Tensor::vector(data),
            Op::Reparam {
                mu: mu.0,
                logvar: logvar.0,
                noise,
            },
        )
    }

    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Var {
        let (mt, lt) = (&self.nodes[mu.0].value, &self.nodes[logvar.0].value);
        assert!(mt.same_shape(lt), "kl_std_normal: dimension mismatch");
        let v = 0.5
            * mt.data()
                .iter()
                .zip(lt.data())
                .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
                .sum::<f64>();
        self.push(
            Tensor::scalar(v),
            Op::KlStdNormal {
                mu: mu.0,
                logvar: logvar.0,
            },
        )
    }

    /// Gradient barrier: same value, no gradient flows through.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(value, Op::Detach { x: x.0 })
    }

    /// Mean of scalar nodes.
    pub fn mean_scalars(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "mean_scalars: empty input");
        let mut acc = xs[0];
        for &v in &xs[1..] {
            acc = self.add(acc, v);
        }
        self.scale(acc, 1.0 / xs.len() as f64)
    }

    // ---- backward -----------------------------------------------------

    fn add_grad(&mut self, id: usize, update: impl FnOnce(&mut Tensor)) {
        if !self.nodes[id].needs_grad {
            return;
        }
        if self.grads[id].is_none() {
            let t = &self.nodes[id].value;
            self.grads[id] = Some(Tensor::zeros(t.rows(), t.cols()));
        }
        update(self.grads[id].as_mut().unwrap());
    }

    /// Accumulate gradients of the scalar `root` into every leaf.
    /// Existing gradients are cleared first.
    pub fn backward(&mut self, root: Var) {
        assert!(self.nodes[root.0].value.is_scalar(), "backward: root must be scalar");
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            // Re-store so callers can read interior gradients after the pass.
            self.grads[id] = Some(g.clone());
            let gd = g.data().to_vec();

            match &self.nodes[id].op {
                Op::Leaf | Op::Const | Op::Detach { .. } => {}
                Op::MatVec { w, x } => {
                    let (w, x) = (*w, *x);
                    let xv = self.nodes[x].value.data().to_vec();
                    let (wr, wc) = (self.nodes[w].value.rows(), self.nodes[w].value.cols());
                    self.add_grad(w, |dw| {
                        let d = dw.data_mut();
                        for r in 0..wr {
                            let gr = gd[r];
                            for c in 0..wc {
                                d[r * wc + c] += gr * xv[c];
                            }
                        }
                    });
                    let wt = self.nodes[w].value.clone();
                    self.add_grad(x, |dx| {
                        let d = dx.data_mut();
                        for r in 0..wr {
                            let gr = gd[r];
                            let row = wt.row(r);
                            for c in 0..wc {
                                d[c] += gr * row[c];
                            }
                        }
                    });
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, |da| {
                        for (d, g) in da.data_mut().iter_mut().zip(&gd) {
                            *d += g;
                        }
                    });
                    self.add_grad(b, |db| {
                        for (d, g) in db.data_mut().iter_mut().zip(&gd) {
                            *d += g;
                        }
                    });
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, |da| {
                        for (d, g) in da.data_mut().iter_mut().zip(&gd) {
                            *d += g;
                        }
                    });
                    self.add_grad(b, |db| {
                        for (d, g) in db.data_mut().iter_mut().zip(&gd) {
                            *d -= g;
                        }
                    });
                }
                Op::MulElem { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a].value.data().to_vec();
                    let bv = self.nodes[b].value.data().to_vec();
                    self.add_grad(a, |da| {
                        for ((d, g), x) in da.data_mut().iter_mut().zip(&gd).zip(&bv) {
                            *d += g * x;
                        }
                    });
                    self.add_grad(b, |db| {
                        for ((d, g), x) in db.data_mut().iter_mut().zip(&gd).zip(&av) {
                            *d += g * x;
                        }
                    });
                }
                Op::ScaleConst { x, k } => {
                    let (x, k) = (*x, *k);
                    self.add_grad(x, |dx| {
                        for (d, g) in dx.data_mut().iter_mut().zip(&gd) {
                            *d += g * k;
                        }
                    });
                }
                Op::AddConst { x, .. } => {
                    let x = *x;
                    self.add_grad(x, |dx| {
                        for (d, g) in dx.data_mut().iter_mut().zip(&gd) {
                            *d += g;
                        }
                    });
                }
                Op::MulMask { x, mask } => {
                    let x = *x;
                    let mask = mask.clone();
                    self.add_grad(x, |dx| {
                        for ((d, g), m) in dx.data_mut().iter_mut().zip(&gd).zip(&mask) {
                            *d += g * m;
                        }
                    });
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    let yv = self.nodes[id].value.data().to_vec();
                    self.add_grad(x, |dx| {
                        for ((d, g), y) in dx.data_mut().iter_mut().zip(&gd).zip(&yv) {
                            *d += g * y * (1.0 - y);
                        }
                    });
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let yv = self.nodes[id].value.data().to_vec();
                    self.add_grad(x, |dx| {
                        for ((d, g), y) in dx.data_mut().iter_mut().zip(&gd).zip(&yv) {
                            *d += g * (1.0 - y * y);
                        }
                    });
                }
                Op::Relu { x } => {
                    let x = *x;
                    let xv = self.nodes[x].value.data().to_vec();
                    self.add_grad(x, |dx| {
                        for ((d, g), v) in dx.data_mut().iter_mut().zip(&gd).zip(&xv) {
                            if *v > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Exp { x } => {
                    let x = *x;
                    let yv = self.nodes[id].value.data().to_vec();
                    self.add_grad(x, |dx| {
                        for ((d, g), y) in dx.data_mut().iter_mut().zip(&gd).zip(&yv) {
                            *d += g * y;
                        }
                    });
                }
                Op::LnClamped { x } => {
                    let x = *x;
                    let xv = self.nodes[x].value.data().to_vec();
                    self.add_grad(x, |dx| {
                        for ((d, g), v) in dx.data_mut().iter_mut().zip(&gd).zip(&xv) {
                            if *v > LOG_CLAMP {
                                *d += g / v;
                            }
                        }
                    });
                }
                Op::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let alen = self.nodes[a].value.len();
                    self.add_grad(a, |da| {
                        for (d, g) in da.data_mut().iter_mut().zip(&gd[..alen]) {
                            *d += g;
                        }
                    });
                    self.add_grad(b, |db| {
                        for (d, g) in db.data_mut().iter_mut().zip(&gd[alen..]) {
                            *d += g;
                        }
                    });
                }
                Op::Row { w, i } => {
                    let (w, i) = (*w, *i);
                    let cols = self.nodes[w].value.cols();
                    self.add_grad(w, |dw| {
                        let d = dw.data_mut();
                        for (c, g) in gd.iter().enumerate() {
                            d[i * cols + c] += g;
                        }
                    });
                }
                Op::Pick { x, i } => {
                    let (x, i) = (*x, *i);
                    self.add_grad(x, |dx| {
                        dx.data_mut()[i] += gd[0];
                    });
                }
                Op::Dot { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a].value.data().to_vec();
                    let bv = self.nodes[b].value.data().to_vec();
                    let g0 = gd[0];
                    self.add_grad(a, |da| {
                        for (d, x) in da.data_mut().iter_mut().zip(&bv) {
                            *d += g0 * x;
                        }
                    });
                    self.add_grad(b, |db| {
                        for (d, x) in db.data_mut().iter_mut().zip(&av) {
                            *d += g0 * x;
                        }
                    });
                }
                Op::DotConst { x, t } => {
                    let x = *x;
                    let t = t.clone();
                    let g0 = gd[0];
                    self.add_grad(x, |dx| {
                        for (d, c) in dx.data_mut().iter_mut().zip(&t) {
                            *d += g0 * c;
                        }
                    });
                }
                Op::DotSparse { x, t } => {
                    let x = *x;
                    let t = t.clone();
                    let g0 = gd[0];
                    self.add_grad(x, |dx| {
                        let d = dx.data_mut();
                        for (i, p) in t {
                            d[i] += g0 * p;
                        }
                    });
                }
                Op::Sum { x } => {
                    let x = *x;
                    let g0 = gd[0];
                    self.add_grad(x, |dx| {
                        for d in dx.data_mut() {
                            *d += g0;
                        }
                    });
                }
                Op::Softmax { x } => {
                    let x = *x;
                    let yv = self.nodes[id].value.data().to_vec();
                    let gy: f64 = gd.iter().zip(&yv).map(|(g, y)| g * y).sum();
                    self.add_grad(x, |dx| {
                        for ((d, g), y) in dx.data_mut().iter_mut().zip(&gd).zip(&yv) {
                            *d += y * (g - gy);
                        }
                    });
                }
                Op::LogSoftmax { x } => {
                    let x = *x;
                    let yv = self.nodes[id].value.data().to_vec();
                    let gsum: f64 = gd.iter().sum();
                    self.add_grad(x, |dx| {
                        for ((d, g), ly) in dx.data_mut().iter_mut().zip(&gd).zip(&yv) {
                            *d += g - ly.exp() * gsum;
                        }
                    });
                }
                Op::MaxMany { xs } => {
                    let xs = xs.clone();
                    let yv = self.nodes[id].value.data().to_vec();
                    // Route each coordinate's gradient to the first input
                    // that attains the max.
                    let mut routed = vec![usize::MAX; yv.len()];
                    for (slot, &xid) in xs.iter().enumerate() {
                        let xv = self.nodes[xid].value.data();
                        for (j, r) in routed.iter_mut().enumerate() {
                            if *r == usize::MAX && xv[j] == yv[j] {
                                *r = slot;
                            }
                        }
                    }
                    for (slot, &xid) in xs.iter().enumerate() {
                        let gd = &gd;
                        let routed = &routed;
                        self.add_grad(xid, |dx| {
                            for (j, d) in dx.data_mut().iter_mut().enumerate() {
                                if routed[j] == slot {
                                    *d += gd[j];
                                }
                            }
                        });
                    }
                }
                Op::Reparam { mu, logvar, noise } => {
                    let (mu, lv) = (*mu, *logvar);
                    let noise = noise.clone();
                    let lvv = self.nodes[lv].value.data().to_vec();
                    self.add_grad(mu, |dm| {
                        for (d, g) in dm.data_mut().iter_mut().zip(&gd) {
                            *d += g;
                        }
                    });
                    self.add_grad(lv, |dl| {
                        for (((d, g), l), n) in dl.data_mut().iter_mut().zip(&gd).zip(&lvv).zip(&noise) {
                            *d += g * 0.5 * (0.5 * l).exp() * n;
                        }
                    });
                }
                Op::KlStdNormal { mu, logvar } => {
                    let (mu, lv) = (*mu, *logvar);
                    let muv = self.nodes[mu].value.data().to_vec();
                    let lvv = self.nodes[lv].value.data().to_vec();
                    let g0 = gd[0];
                    self.add_grad(mu, |dm| {
                        for (d, m) in dm.data_mut().iter_mut().zip(&muv) {
                            *d += g0 * m;
                        }
                    });
                    self.add_grad(lv, |dl| {
                        for (d, l) in dl.data_mut().iter_mut().zip(&lvv) {
                            *d += g0 * 0.5 * (l.exp() - 1.0);
                        }
                    });
                }
            }
        }
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_products_gradient() {
        // f = sum(a ⊙ b); df/da = b, df/db = a
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = tape.leaf(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let p = tape.mul_elem(a, b);
        let s = tape.sum(p);
        assert_eq!(tape.value(s).item(), 32.0);
        tape.backward(s);
        assert_eq!(tape.grad(a).data(), &[4.0, 5.0, 6.0]);
        assert_eq!(tape.grad(b).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![2.0, 3.0]));
        let d = tape.detach(a);
        let s = tape.sum(d);
        tape.backward(s);
        assert_eq!(tape.grad(a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matvec_matches_manual() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let x = tape.leaf(Tensor::vector(vec![1.0, 0.0, -1.0]));
        let y = tape.matvec(w, x);
        assert_eq!(tape.value(y).data(), &[-2.0, -2.0]);
        let s = tape.sum(y);
        tape.backward(s);
        assert_eq!(tape.grad(w).data(), &[1., 0., -1., 1., 0., -1.]);
        assert_eq!(tape.grad(x).data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn max_many_routes_to_argmax() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 5.0]));
        let b = tape.leaf(Tensor::vector(vec![3.0, 2.0]));
        let m = tape.max_many(&[a, b]);
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
        let s = tape.sum(m);
        tape.backward(s);
        assert_eq!(tape.grad(a).data(), &[0.0, 1.0]);
        assert_eq!(tape.grad(b).data(), &[1.0, 0.0]);
    }

    #[test]
    fn grad_cleared_between_backward_calls() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0]));
        let s = tape.sum(a);
        tape.backward(s);
        tape.backward(s);
        assert_eq!(tape.grad(a).data(), &[1.0]);
    }
}
