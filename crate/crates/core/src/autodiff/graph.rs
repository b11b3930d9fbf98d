use std::collections::BTreeMap;
use std::rc::Rc;

use super::conv::{self, ConvGeom};
use super::fft;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Tensor times a one-element tensor.
    MulScalar(Var, Var),
    Relu(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    /// Concatenate `[N, C_i, H, W]` tensors along the channel axis.
    Concat(Vec<Var>),
    /// Softmax over the last axis.
    Softmax(Var),
    Select(Var, usize),
    Softplus(Var),
    Fft2 {
        input: Var,
        inverse: bool,
    },
    /// Closed-form data consistency in k-space:
    /// `X = (M*B + lam*Z) / (M + lam)` with `M` broadcast over real/imag.
    DcCombine {
        zhat: Var,
        lambda: Var,
        measured: Rc<Tensor>,
        mask: Rc<Vec<f64>>,
    },
    Mse(Var, Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a node, zero if it was unreachable from the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Gradients of every registered parameter, keyed by name.
    pub fn params(&self) -> crate::autodiff::ParamSet {
        self.params.iter().map(|(k, &v)| (k.clone(), self.wrt(v))).collect()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    a.check_same_shape(b, what)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf registered under `name`. Re-registering a name
    /// rebinds it to the new leaf.
    pub fn param(&mut self, name: &str, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Unnamed trainable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mul")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `x * s` where `s` holds a single value.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let out = self.value(x).scale(sv);
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::MulScalar(x, s), rg))
    }

    /// Sum of many equally shaped tensors, folded left to right.
    pub fn add_all(&mut self, vs: &[Var]) -> Result<Var> {
        let (&first, rest) = vs
            .split_first()
            .ok_or_else(|| Error::Contract("sum of zero tensors".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// Same-size 2-D convolution: `input [N, Cin, H, W]`,
    /// `kernel [Cout, Cin/groups, k, k]`, zero padding `dilation*(k-1)/2`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, dilation: usize, groups: usize) -> Result<Var> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        let (is, ks) = (ti.shape(), tk.shape());
        if is.len() != 4 || ks.len() != 4 {
            return dim_err(format!("conv2d expects 4-d input and kernel, got {is:?} and {ks:?}"));
        }
        let k = ks[2];
        if ks[3] != k {
            return dim_err(format!("conv2d kernel must be square, got {ks:?}"));
        }
        if k % 2 == 0 {
            return Err(Error::UnsupportedKernel(k));
        }
        if groups == 0 || dilation == 0 {
            return Err(Error::Contract("groups and dilation must be positive".into()));
        }
        let (c_in, c_out) = (is[1], ks[0]);
        if c_in % groups != 0 || c_out % groups != 0 {
            return dim_err(format!("groups {groups} must divide Cin {c_in} and Cout {c_out}"));
        }
        if ks[1] != c_in / groups {
            return dim_err(format!(
                "kernel {ks:?} does not match input channels {c_in} with groups {groups}"
            ));
        }
        let geom = ConvGeom {
            batch: is[0],
            c_in,
            c_out,
            h: is[2],
            w: is[3],
            k,
            dilation,
            groups,
        };
        let data = conv::forward(&geom, ti.data(), tk.data());
        let out = Tensor::new(&[geom.batch, c_out, geom.h, geom.w], data)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, rg))
    }

    pub fn concat_channels(&mut self, vs: &[Var]) -> Result<Var> {
        let first = vs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let s0 = self.value(*first).shape().to_vec();
        if s0.len() != 4 {
            return dim_err(format!("concat expects 4-d tensors, got {s0:?}"));
        }
        let mut channels = 0;
        for v in vs {
            let s = self.value(*v).shape();
            if s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return dim_err(format!("concat: {s:?} incompatible with {s0:?}"));
            }
            channels += s[1];
        }
        let plane = s0[2] * s0[3];
        let mut data = Vec::with_capacity(s0[0] * channels * plane);
        for n in 0..s0[0] {
            for v in vs {
                let t = self.value(*v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
            }
        }
        let out = Tensor::new(&[s0[0], channels, s0[2], s0[3]], data)?;
        let rg = self.rg(vs);
        Ok(self.push(out, Op::Concat(vs.to_vec()), rg))
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v);
        let n = *t.shape().last().unwrap_or(&0);
        if t.is_empty() || n == 0 {
            return Err(Error::Contract("softmax of an empty vector".into()));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let out = Tensor::new(t.shape(), data)?;
        let rg = self.rg(&[v]);
        Ok(self.push(out, Op::Softmax(v), rg))
    }

    /// Element `flat_index` as a one-element tensor.
    pub fn select(&mut self, v: Var, flat_index: usize) -> Result<Var> {
        let t = self.value(v);
        let x = *t
            .data()
            .get(flat_index)
            .ok_or_else(|| Error::Dimension(format!("index {flat_index} out of range for {:?}", t.shape())))?;
        let rg = self.rg(&[v]);
        Ok(self.push(Tensor::scalar(x), Op::Select(v, flat_index), rg))
    }

    /// `ln(1 + e^x)`, elementwise.
    pub fn softplus(&mut self, v: Var) -> Var {
        let out = self.value(v).map(softplus);
        let rg = self.rg(&[v]);
        self.push(out, Op::Softplus(v), rg)
    }

    /// Unitary 2-D FFT over `[..., 2, H, W]` (real/imag channel pair).
    pub fn fft2(&mut self, input: Var, inverse: bool) -> Result<Var> {
        let mut out = self.value(input).clone();
        let shape = out.shape().to_vec();
        fft::fft2_planes(out.data_mut(), &shape, inverse)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Fft2 { input, inverse }, rg))
    }

    /// Per-location blend of a k-space estimate with measured samples.
    ///
    /// `zhat` and `measured` are `[N, 2, H, W]`; `mask` holds `N*H*W`
    /// weights shared by the real and imaginary channels; `lambda` is a
    /// one-element tensor and must be positive.
    pub fn dc_combine(&mut self, zhat: Var, lambda: Var, measured: Rc<Tensor>, mask: Rc<Vec<f64>>) -> Result<Var> {
        let lam = self.value(lambda).item()?;
        if !(lam > 0.0) {
            return Err(Error::Contract(format!("data consistency needs lambda > 0, got {lam}")));
        }
        let z = self.value(zhat);
        same_shape(z, &measured, "data consistency")?;
        let s = z.shape();
        if s.len() != 4 || s[1] != 2 || mask.len() != s[0] * s[2] * s[3] {
            return dim_err(format!(
                "data consistency expects [N,2,H,W] with N*H*W mask entries, got {s:?} and {}",
                mask.len()
            ));
        }
        let plane = s[2] * s[3];
        let mut data = vec![0.0; z.len()];
        for (i, out) in data.iter_mut().enumerate() {
            let n = i / (2 * plane);
            let m = mask[n * plane + i % plane];
            *out = (m * measured.data()[i] + lam * z.data()[i]) / (m + lam);
        }
        let out = Tensor::new(s, data)?;
        let rg = self.rg(&[zhat, lambda]);
        Ok(self.push(
            out,
            Op::DcCombine {
                zhat,
                lambda,
                measured,
                mask,
            },
            rg,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mse")?;
        let n = ta.len() as f64;
        let v = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Sum(a), rg)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = g.data().iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape(), d)?)?;
                }
                if needs(*b) {
                    let d = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape(), d)?)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s))?,
            Op::MulScalar(x, s) => {
                if needs(*x) {
                    let sv = val(*s).item()?;
                    self.accumulate(grads, *x, g.scale(sv))?;
                }
                if needs(*s) {
                    let d: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                    self.accumulate(grads, *s, Tensor::new(val(*s).shape(), vec![d])?)?;
                }
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?)?;
            }
            Op::Conv2d { input, kernel, geom } => {
                let (gi, gk) = conv::backward(
                    geom,
                    val(*input).data(),
                    val(*kernel).data(),
                    g.data(),
                    needs(*input),
                    needs(*kernel),
                );
                if let Some(gi) = gi {
                    self.accumulate(grads, *input, Tensor::new(val(*input).shape(), gi)?)?;
                }
                if let Some(gk) = gk {
                    self.accumulate(grads, *kernel, Tensor::new(val(*kernel).shape(), gk)?)?;
                }
            }
            Op::Concat(vs) => {
                let s = g.shape();
                let plane = s[2] * s[3];
                let total = s[1];
                let mut offset = 0;
                for v in vs {
                    let vs_ = val(*v).shape();
                    let c = vs_[1];
                    if needs(*v) {
                        let mut d = Vec::with_capacity(val(*v).len());
                        for n in 0..s[0] {
                            let base = (n * total + offset) * plane;
                            d.extend_from_slice(&g.data()[base..base + c * plane]);
                        }
                        self.accumulate(grads, *v, Tensor::new(vs_, d)?)?;
                    }
                    offset += c;
                }
            }
            Op::Softmax(v) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *v, Tensor::new(y.shape(), d)?)?;
            }
            Op::Select(v, idx) => {
                let mut d = Tensor::zeros(val(*v).shape());
                d.data_mut()[*idx] = g.data()[0];
                self.accumulate(grads, *v, d)?;
            }
            Op::Softplus(v) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(*v).data())
                    .map(|(gv, x)| gv * sigmoid(*x))
                    .collect();
                self.accumulate(grads, *v, Tensor::new(g.shape(), d)?)?;
            }
            Op::Fft2 { input, inverse } => {
                // A unitary map's adjoint is its inverse.
                let mut d = g.clone();
                fft::fft2_planes(d.data_mut(), g.shape(), !inverse)?;
                self.accumulate(grads, *input, d)?;
            }
            Op::DcCombine {
                zhat,
                lambda,
                measured,
                mask,
            } => {
                let lam = val(*lambda).item()?;
                let z = val(*zhat);
                let s = z.shape();
                let plane = s[2] * s[3];
                let m_at = |i: usize| mask[(i / (2 * plane)) * plane + i % plane];
                if needs(*zhat) {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| gv * lam / (m_at(i) + lam))
                        .collect();
                    self.accumulate(grads, *zhat, Tensor::new(s, d)?)?;
                }
                if needs(*lambda) {
                    let d: f64 = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| {
                            let m = m_at(i);
                            gv * m * (z.data()[i] - measured.data()[i]) / ((m + lam) * (m + lam))
                        })
                        .sum();
                    self.accumulate(grads, *lambda, Tensor::new(val(*lambda).shape(), vec![d])?)?;
                }
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = 2.0 * g.data()[0] / ta.len() as f64;
                let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| c * (x - y)).collect();
                let diff = Tensor::new(ta.shape(), diff)?;
                if needs(*b) {
                    self.accumulate(grads, *b, diff.scale(-1.0))?;
                }
                self.accumulate(grads, *a, diff)?;
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), g.data()[0]))?;
            }
        }
        Ok(())
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
