//! Reverse-mode differentiation over a Wengert list.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Operations
//! append nodes; [`Tape::backward`] sweeps the list once in reverse and
//! accumulates adjoints into the gradient buffers of the leaves that asked
//! for them. Gradients accumulate across repeated `backward` calls until
//! [`Tape::zero_grad`] is called.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `x + bias` where `bias[c]` is added to every element whose index along
    /// the broadcast axis is `c`. `inner` is the product of trailing dims.
    AddBias {
        x: Var,
        bias: Var,
        inner: usize,
    },
    Scale(Var, T),
    Relu(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Reshape(Var),
    Mean(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    KlDivergence {
        p: Var,
        q: Var,
        p_probs: Vec<T>,
        q_probs: Vec<T>,
        log_ratio: Vec<T>,
        row_kl: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register an input or parameter. Only leaves with `requires_grad`
    /// receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], data)?, rg))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: &'static str, sub: bool) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| if sub { x - y } else { x + y })
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        let node = if sub { Op::Sub(a, b) } else { Op::Add(a, b) };
        Ok(self.push(node, t, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", true)
    }

    /// Add a per-feature bias along `axis` (1 for both `[N,F]` and `[N,C,H,W]`).
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if axis >= sx.len() || sb.len() != 1 || sb[0] != sx[axis] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: sx,
                right: sb,
            });
        }
        let inner: usize = sx[axis + 1..].iter().product();
        let c = sb[0];
        let b = self.value(bias).data().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % c])
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddBias { x, bias, inner }, Tensor::new(sx, data)?, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x);
        let t = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&a| a * factor).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(Op::Scale(x, factor), t, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&a| a.max(T::zero())).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(Op::Relu(x), t, rg)
    }

    /// Cross-correlation of `input[N,C,H,W]` with `kernel[F,C,kH,kW]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            left: si.clone(),
            right: sk.clone(),
        };
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(mismatch());
        }
        let geom = ConvGeom::new(si[0], si[1], si[2], si[3], sk[0], sk[2], sk[3], stride, padding)
            .ok_or_else(mismatch)?;
        let data = kernels::conv2d_forward(self.value(input).data(), self.value(kernel).data(), &geom);
        let t = Tensor::new(vec![geom.batch, geom.filters, geom.out_h, geom.out_w], data)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(Op::Conv2d { input, kernel, geom }, t, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let mut t = t;
        t.clear_grad();
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reshape(x), t, rg))
    }

    /// Collapse everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::of(v.len() as f64);
        let s: T = v.data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Op::Mean(x), Tensor::scalar(s / n), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: s,
                right: vec![labels.len()],
            });
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        let logp = kernels::log_softmax_rows(self.value(logits).data(), c);
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            loss -= logp[i * c + y];
        }
        loss = loss / T::of(labels.len() as f64);
        let probs = logp.into_iter().map(|v| v.exp()).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Mean over the batch of `KL(softmax(p) ‖ softmax(q))`. Gradient reaches
    /// `q` only if `q` requires it; pass a constant leaf to stop it.
    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var> {
        let (sp, sq) = (self.shape(p).to_vec(), self.shape(q).to_vec());
        if sp != sq || sp.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "kl_divergence",
                left: sp,
                right: sq,
            });
        }
        let c = sp[1];
        let logp = kernels::log_softmax_rows(self.value(p).data(), c);
        let logq = kernels::log_softmax_rows(self.value(q).data(), c);
        let p_probs: Vec<T> = logp.iter().map(|v| v.exp()).collect();
        let q_probs: Vec<T> = logq.iter().map(|v| v.exp()).collect();
        let log_ratio: Vec<T> = logp.iter().zip(&logq).map(|(&a, &b)| a - b).collect();
        let row_kl: Vec<T> = p_probs
            .chunks_exact(c)
            .zip(log_ratio.chunks_exact(c))
            .map(|(pr, lr)| pr.iter().zip(lr).map(|(&a, &b)| a * b).sum())
            .collect();
        let total: T = row_kl.iter().copied().sum::<T>() / T::of(sp[0] as f64);
        let rg = self.rg(&[p, q]);
        Ok(self.push(
            Op::KlDivergence {
                p,
                q,
                p_probs,
                q_probs,
                log_ratio,
                row_kl,
            },
            Tensor::scalar(total),
            rg,
        ))
    }

    /// Reverse sweep from a scalar. Returns the number of nodes visited.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            visited += 1;
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
            }
        }
        Ok(visited)
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let send = |adj: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match adj[v.0].as_mut() {
                Some(a) => a.iter_mut().zip(&delta).for_each(|(x, &d)| *x += d),
                None => adj[v.0] = Some(delta),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if needs(*a) {
                    send(adj, *a, kernels::matmul_grad_a(g, vb.data(), m, k, n));
                }
                if needs(*b) {
                    send(adj, *b, kernels::matmul_grad_b(g, va.data(), m, k, n));
                }
            }
            Op::Add(a, b) => {
                send(adj, *a, g.to_vec());
                send(adj, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(adj, *a, g.to_vec());
                send(adj, *b, g.iter().map(|&v| -v).collect());
            }
            Op::AddBias { x, bias, inner } => {
                send(adj, *x, g.to_vec());
                if needs(*bias) {
                    let c = self.value(*bias).len();
                    let mut gb = vec![T::zero(); c];
                    for (j, &v) in g.iter().enumerate() {
                        gb[(j / inner) % c] += v;
                    }
                    send(adj, *bias, gb);
                }
            }
            Op::Scale(x, f) => send(adj, *x, g.iter().map(|&v| v * *f).collect()),
            Op::Relu(x) => {
                let out = self.nodes[i].value.data();
                send(
                    adj,
                    *x,
                    g.iter()
                        .zip(out)
                        .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
                        .collect(),
                );
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
            } => {
                if needs(*input) {
                    send(
                        adj,
                        *input,
                        kernels::conv2d_grad_input(g, self.value(*kernel).data(), geom),
                    );
                }
                if needs(*kernel) {
                    send(
                        adj,
                        *kernel,
                        kernels::conv2d_grad_kernel(g, self.value(*input).data(), geom),
                    );
                }
            }
            Op::Reshape(x) => send(adj, *x, g.to_vec()),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(adj, *x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                send(adj, *x, vec![g[0]; n]);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / T::of(labels.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * c + y] -= scale;
                }
                send(adj, *logits, d);
            }
            Op::KlDivergence {
                p,
                q,
                p_probs,
                q_probs,
                log_ratio,
                row_kl,
            } => {
                let c = self.shape(*p)[1];
                let scale = g[0] / T::of(row_kl.len() as f64);
                if needs(*p) {
                    let mut d = Vec::with_capacity(p_probs.len());
                    for (r, &kl) in row_kl.iter().enumerate() {
                        for j in 0..c {
                            let k = r * c + j;
                            d.push(p_probs[k] * (log_ratio[k] - kl) * scale);
                        }
                    }
                    send(adj, *p, d);
                }
                if needs(*q) {
                    let d = q_probs
                        .iter()
                        .zip(p_probs)
                        .map(|(&qv, &pv)| (qv - pv) * scale)
                        .collect();
                    send(adj, *q, d);
                }
            }
        }
    }
}
