//! Tape-based reverse-mode autodiff over [`Tensor`]s.
//!
//! A [`Graph`] records every op as it runs; [`Graph::backward`] walks the tape in
//! reverse. Per-sample work is spread over rayon, and per-sample weight
//! gradients are summed in sample order so results do not depend on scheduling.

use std::sync::Arc;

use rayon::prelude::*;

use super::kernels::{col2im, gemm, im2col, im2col_rows, Window};
use super::tensor::Tensor;

/// Column-buffer size (in values) targeted per convolution band.
/// Per-sample input and weight gradients.
type GradPair = (Option<Vec<f64>>, Option<Vec<f64>>);

const CONV_TILE: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ReflectPad { x: Var, pad: usize },
    InstanceNorm { x: Var, invstd: Vec<f64> },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulChannel { x: Var, m: Var },
    Affine { x: Var, scale: f64 },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    AvgPool { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Mean { x: Var },
    Abs { x: Var },
    Log { x: Var },
    Square { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needs one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

fn pool_out(d: usize) -> usize {
    // kernel 3, stride 2, padding 1
    (d + 2 - 3) / 2 + 1
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A parameter leaf; gradients are kept only when `trainable`.
    pub fn param(&mut self, t: &Arc<Tensor>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(t),
            op: Op::Leaf,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    /// A constant copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value_arc(v);
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    // --- convolution ---------------------------------------------------------

    /// Zero-padded convolution; `w` is `[Cout, Cin, k, k]`, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let (n, cin, h, wd) = xt.dims4();
        let (cout, wcin, k, k2) = wt.dims4();
        assert_eq!(cin, wcin, "conv2d input has {cin} channels, weight expects {wcin}");
        assert_eq!(k, k2);
        let g = Window::conv(cin, h, wd, k, stride, pad);
        let per_out = cout * g.cols();
        let mut out = vec![0.0; n * per_out];
        let bias = b.map(|b| self.value(b).data().to_vec());
        let xd = xt.data();
        let wdat = wt.data();
        // unfold a band of output rows at a time so the column buffer stays in cache
        let band = (CONV_TILE / (g.rows() * g.out_w).max(1)).clamp(1, g.out_h.max(1));
        out.par_chunks_mut(per_out).enumerate().for_each(|(s, o)| {
            let x = &xd[s * cin * h * wd..(s + 1) * cin * h * wd];
            let tiles: Vec<(usize, Vec<f64>)> = (0..g.out_h)
                .step_by(band)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map_init(Vec::new, |col, oy0| {
                    let oy1 = (oy0 + band).min(g.out_h);
                    let n = (oy1 - oy0) * g.out_w;
                    col.resize(g.rows() * n, 0.0);
                    im2col_rows(x, &g, oy0, oy1, &mut col[..g.rows() * n]);
                    let mut t = vec![0.0; cout * n];
                    gemm(cout, g.rows(), n, wdat, false, col, false, &mut t, 0.0);
                    (oy0, t)
                })
                .collect();
            let cols = g.cols();
            for (oy0, t) in tiles {
                let n = t.len() / cout.max(1);
                for c in 0..cout {
                    let dst = &mut o[c * cols + oy0 * g.out_w..c * cols + oy0 * g.out_w + n];
                    dst.copy_from_slice(&t[c * n..(c + 1) * n]);
                    if let Some(bias) = &bias {
                        dst.iter_mut().for_each(|v| *v += bias[c]);
                    }
                }
            }
        });
        let t = Tensor::from_vec(&[n, cout, g.out_h, g.out_w], out).expect("conv output shape");
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::Conv2d { x, w, b, stride, pad }, &inputs)
    }

    /// Transposed convolution; `w` is `[Cin, Cout, k, k]`, output size
    /// `(H-1)*stride - 2*pad + k + out_pad`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, out_pad: usize) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let (n, cin, h, wd) = xt.dims4();
        let (wcin, cout, k, _) = wt.dims4();
        assert_eq!(cin, wcin, "conv_transpose2d input has {cin} channels, weight expects {wcin}");
        let oh = (h - 1) * stride + k + out_pad - 2 * pad;
        let ow = (wd - 1) * stride + k + out_pad - 2 * pad;
        let g = Window {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let per_out = cout * oh * ow;
        let mut out = vec![0.0; n * per_out];
        let bias = b.map(|b| self.value(b).data().to_vec());
        let xd = xt.data();
        let wdat = wt.data();
        out.par_chunks_mut(per_out).enumerate().for_each(|(s, o)| {
            let mut col = vec![0.0; g.rows() * g.cols()];
            gemm(g.rows(), cin, g.cols(), wdat, true, &xd[s * cin * h * wd..(s + 1) * cin * h * wd], false, &mut col, 0.0);
            col2im(&col, &g, o);
            if let Some(bias) = &bias {
                for (c, chunk) in o.chunks_mut(oh * ow).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias[c]);
                }
            }
        });
        let t = Tensor::from_vec(&[n, cout, oh, ow], out).expect("conv_transpose output shape");
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::ConvT2d { x, w, b, stride, pad }, &inputs)
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        assert!(pad < h && pad < w, "reflection pad {pad} too large for {h}x{w}");
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![0.0; n * c * oh * ow];
        let xd = xt.data();
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                let sy = reflect(y as isize - pad as isize, h);
                for xx in 0..ow {
                    dst[y * ow + xx] = src[sy * w + reflect(xx as isize - pad as isize, w)];
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], out).expect("pad shape");
        self.push(t, Op::ReflectPad { x, pad }, &[x])
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        let hw = h * w;
        let mut out = xt.data().to_vec();
        let mut invstd = vec![0.0; n * c];
        out.chunks_mut(hw).zip(invstd.iter_mut()).for_each(|(plane, is)| {
            let mean = plane.iter().sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            *is = 1.0 / (var + EPS).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * *is);
        });
        let t = Tensor::from_vec(&[n, c, h, w], out).expect("norm shape");
        self.push(t, Op::InstanceNorm { x, invstd }, &[x])
    }

    // --- elementwise -------------------------------------------------------

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::from_vec(xt.shape(), data).expect("same shape");
        self.push(t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, move |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh { x })
    }

    /// Logistic function; saturates to exactly 0 or 1 for large |x|.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, stable_sigmoid, Op::Sigmoid { x })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square { x })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, move |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.map(x, move |v| scale * v + shift, Op::Affine { x, scale })
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let at = self.value(a);
        let bt = self.value(b);
        assert_eq!(at.shape(), bt.shape(), "elementwise op on mismatched shapes");
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::from_vec(at.shape(), data).expect("same shape");
        self.push(t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Multiply every channel of `x` (`[N,C,H,W]`) by the single-channel `m` (`[N,1,H,W]`).
    pub fn mul_channel(&mut self, x: Var, m: Var) -> Var {
        let xt = self.value(x);
        let mt = self.value(m);
        let (n, c, h, w) = xt.dims4();
        assert_eq!(mt.shape(), &[n, 1, h, w], "mask shape mismatch");
        let hw = h * w;
        let mut data = xt.data().to_vec();
        for s in 0..n {
            let mp = &mt.data()[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                data[off..off + hw].iter_mut().zip(mp).for_each(|(v, mv)| *v *= mv);
            }
        }
        let t = Tensor::from_vec(&[n, c, h, w], data).expect("same shape");
        self.push(t, Op::MulChannel { x, m }, &[x, m])
    }

    // --- shape ---------------------------------------------------------------

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let at = self.value(a);
        let bt = self.value(b);
        let (n, ca, h, w) = at.dims4();
        let (nb, cb, hb, wb) = bt.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat on mismatched shapes");
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            data.extend_from_slice(&at.data()[s * ca * hw..(s + 1) * ca * hw]);
            data.extend_from_slice(&bt.data()[s * cb * hw..(s + 1) * cb * hw]);
        }
        let t = Tensor::from_vec(&[n, ca + cb, h, w], data).expect("concat shape");
        self.push(t, Op::Concat { a, b }, &[a, b])
    }

    /// Channels `start..start+len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        assert!(start + len <= c, "channel slice out of range");
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            data.extend_from_slice(&xt.data()[(s * c + start) * hw..(s * c + start + len) * hw]);
        }
        let t = Tensor::from_vec(&[n, len, h, w], data).expect("slice shape");
        self.push(t, Op::Slice { x, start }, &[x])
    }

    /// 3x3 average pooling, stride 2, padding 1, padded taps excluded from the count.
    pub fn avg_pool(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        let (oh, ow) = (pool_out(h), pool_out(w));
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xt.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut sum = 0.0;
                    let mut cnt = 0.0;
                    for (iy, ix) in pool_taps(oy, ox, h, w) {
                        sum += src[iy * w + ix];
                        cnt += 1.0;
                    }
                    out[p * oh * ow + oy * ow + ox] = sum / cnt;
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], out).expect("pool shape");
        self.push(t, Op::AvgPool { x }, &[x])
    }

    /// 2x2 max pooling, stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xt.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > best.0 {
                            best = (src[i], i);
                        }
                    }
                    let o = p * oh * ow + oy * ow + ox;
                    out[o] = best.0;
                    argmax[o] = p * h * w + best.1;
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], out).expect("pool shape");
        self.push(t, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let m = xt.data().iter().sum::<f64>() / xt.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// Weighted sum of one-element tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let scaled = self.affine(v, w, 0.0);
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled),
            });
        }
        acc.unwrap_or_else(|| self.input(Tensor::scalar(0.0)))
    }

    // --- backward ------------------------------------------------------------

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(node, &dy);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, node: &Node, dy: &Tensor) -> Vec<(Var, Tensor)> {
        let y = &node.value;
        let like = |v: Var, data: Vec<f64>| Tensor::from_vec(self.value(v).shape(), data).expect("grad shape");
        let unary = |x: Var, f: &dyn Fn(usize) -> f64| -> Vec<(Var, Tensor)> {
            let data = (0..dy.numel()).map(|i| dy.data()[i] * f(i)).collect();
            vec![(x, like(x, data))]
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, stride, pad } => self.conv_backward(*x, *w, *b, *stride, *pad, dy),
            Op::ConvT2d { x, w, b, stride, pad } => self.conv_t_backward(*x, *w, *b, *stride, *pad, dy),
            Op::ReflectPad { x, pad } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for yy in 0..oh {
                        let sy = reflect(yy as isize - *pad as isize, h);
                        for xx in 0..ow {
                            let sx = reflect(xx as isize - *pad as isize, w);
                            dx[p * h * w + sy * w + sx] += dy.data()[p * oh * ow + yy * ow + xx];
                        }
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::InstanceNorm { x, invstd } => {
                let (_, _, h, w) = y.dims4();
                let hw = h * w;
                let mut dx = vec![0.0; y.numel()];
                dx.chunks_mut(hw).enumerate().for_each(|(p, out)| {
                    let yp = &y.data()[p * hw..(p + 1) * hw];
                    let gp = &dy.data()[p * hw..(p + 1) * hw];
                    let mean_g = gp.iter().sum::<f64>() / hw as f64;
                    let mean_gy = gp.iter().zip(yp).map(|(g, v)| g * v).sum::<f64>() / hw as f64;
                    for i in 0..hw {
                        out[i] = invstd[p] * (gp[i] - mean_g - yp[i] * mean_gy);
                    }
                });
                vec![(*x, like(*x, dx))]
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                unary(*x, &|i| if xv[i] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                unary(*x, &|i| if xv[i] > 0.0 { 1.0 } else { *slope })
            }
            Op::Tanh { x } => unary(*x, &|i| 1.0 - y.data()[i] * y.data()[i]),
            Op::Sigmoid { x } => unary(*x, &|i| y.data()[i] * (1.0 - y.data()[i])),
            Op::Abs { x } => {
                let xv = self.value(*x).data();
                unary(*x, &|i| {
                    if xv[i] > 0.0 {
                        1.0
                    } else if xv[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
            }
            Op::Log { x } => {
                let xv = self.value(*x).data();
                unary(*x, &|i| 1.0 / xv[i])
            }
            Op::Square { x } => {
                let xv = self.value(*x).data();
                unary(*x, &|i| 2.0 * xv[i])
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                unary(*x, &|i| if xv[i] >= *lo && xv[i] <= *hi { 1.0 } else { 0.0 })
            }
            Op::Affine { x, scale } => unary(*x, &|_| *scale),
            Op::Add { a, b } => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub { a, b } => {
                let neg = dy.data().iter().map(|v| -v).collect();
                vec![(*a, dy.clone()), (*b, like(*b, neg))]
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = dy.data().iter().zip(bv).map(|(g, v)| g * v).collect();
                let db = dy.data().iter().zip(av).map(|(g, v)| g * v).collect();
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::MulChannel { x, m } => {
                let xt = self.value(*x);
                let mt = self.value(*m);
                let (n, c, h, w) = xt.dims4();
                let hw = h * w;
                let mut dx = vec![0.0; xt.numel()];
                let mut dm = vec![0.0; mt.numel()];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for i in 0..hw {
                            dx[off + i] = dy.data()[off + i] * mt.data()[s * hw + i];
                            dm[s * hw + i] += dy.data()[off + i] * xt.data()[off + i];
                        }
                    }
                }
                vec![(*x, like(*x, dx)), (*m, like(*m, dm))]
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4();
                let cb = self.value(*b).dims4().1;
                let hw = h * w;
                let mut da = Vec::with_capacity(n * ca * hw);
                let mut db = Vec::with_capacity(n * cb * hw);
                for s in 0..n {
                    let base = s * (ca + cb) * hw;
                    da.extend_from_slice(&dy.data()[base..base + ca * hw]);
                    db.extend_from_slice(&dy.data()[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::Slice { x, start } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let len = y.dims4().1;
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for s in 0..n {
                    dx[(s * c + start) * hw..(s * c + start + len) * hw]
                        .copy_from_slice(&dy.data()[s * len * hw..(s + 1) * len * hw]);
                }
                vec![(*x, like(*x, dx))]
            }
            Op::AvgPool { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (oh, ow) = (pool_out(h), pool_out(w));
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let taps: Vec<_> = pool_taps(oy, ox, h, w).collect();
                            let g = dy.data()[p * oh * ow + oy * ow + ox] / taps.len() as f64;
                            for (iy, ix) in taps {
                                dx[p * h * w + iy * w + ix] += g;
                            }
                        }
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += dy.data()[o];
                }
                vec![(*x, like(*x, dx))]
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                let g = dy.item() / n as f64;
                vec![(*x, like(*x, vec![g; n]))]
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, dy: &Tensor) -> Vec<(Var, Tensor)> {
        let xt = self.value(x);
        let wt = self.value(w);
        let (n, cin, h, wd) = xt.dims4();
        let (cout, _, k, _) = wt.dims4();
        let g = Window::conv(cin, h, wd, k, stride, pad);
        let per_in = cin * h * wd;
        let per_out = cout * g.cols();
        let (need_x, need_w) = (self.needs(x), self.needs(w));
        let mut out = Vec::new();
        let partial: Vec<GradPair> = (0..n)
            .into_par_iter()
            .map(|s| {
                let gy = &dy.data()[s * per_out..(s + 1) * per_out];
                let dw = need_w.then(|| {
                    let mut col = vec![0.0; g.rows() * g.cols()];
                    im2col(&xt.data()[s * per_in..(s + 1) * per_in], &g, &mut col);
                    let mut dw = vec![0.0; wt.numel()];
                    gemm(cout, g.cols(), g.rows(), gy, false, &col, true, &mut dw, 0.0);
                    dw
                });
                let dx = need_x.then(|| {
                    let mut dcol = vec![0.0; g.rows() * g.cols()];
                    gemm(g.rows(), cout, g.cols(), wt.data(), true, gy, false, &mut dcol, 0.0);
                    let mut dx = vec![0.0; per_in];
                    col2im(&dcol, &g, &mut dx);
                    dx
                });
                (dx, dw)
            })
            .collect();
        if need_x {
            let mut dx = Vec::with_capacity(n * per_in);
            for (d, _) in &partial {
                dx.extend_from_slice(d.as_ref().expect("dx computed"));
            }
            out.push((x, Tensor::from_vec(xt.shape(), dx).expect("dx shape")));
        }
        if need_w {
            let mut dw = vec![0.0; wt.numel()];
            for (_, d) in &partial {
                for (a, v) in dw.iter_mut().zip(d.as_ref().expect("dw computed")) {
                    *a += v;
                }
            }
            out.push((w, Tensor::from_vec(wt.shape(), dw).expect("dw shape")));
        }
        if let Some(b) = b.filter(|b| self.needs(*b)) {
            out.push((b, bias_grad(dy, n, cout, g.cols())));
        }
        out
    }

    fn conv_t_backward(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, dy: &Tensor) -> Vec<(Var, Tensor)> {
        let xt = self.value(x);
        let wt = self.value(w);
        let (n, cin, h, wd) = xt.dims4();
        let (_, cout, k, _) = wt.dims4();
        let (_, _, oh, ow) = dy.dims4();
        let g = Window {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let per_in = cin * h * wd;
        let per_out = cout * oh * ow;
        let (need_x, need_w) = (self.needs(x), self.needs(w));
        let partial: Vec<GradPair> = (0..n)
            .into_par_iter()
            .map(|s| {
                let mut col = vec![0.0; g.rows() * g.cols()];
                im2col(&dy.data()[s * per_out..(s + 1) * per_out], &g, &mut col);
                let xs = &xt.data()[s * per_in..(s + 1) * per_in];
                let dx = need_x.then(|| {
                    let mut dx = vec![0.0; per_in];
                    gemm(cin, g.rows(), g.cols(), wt.data(), false, &col, false, &mut dx, 0.0);
                    dx
                });
                let dw = need_w.then(|| {
                    let mut dw = vec![0.0; wt.numel()];
                    gemm(cin, g.cols(), g.rows(), xs, false, &col, true, &mut dw, 0.0);
                    dw
                });
                (dx, dw)
            })
            .collect();
        let mut out = Vec::new();
        if need_x {
            let mut dx = Vec::with_capacity(n * per_in);
            for (d, _) in &partial {
                dx.extend_from_slice(d.as_ref().expect("dx computed"));
            }
            out.push((x, Tensor::from_vec(xt.shape(), dx).expect("dx shape")));
        }
        if need_w {
            let mut dw = vec![0.0; wt.numel()];
            for (_, d) in &partial {
                for (a, v) in dw.iter_mut().zip(d.as_ref().expect("dw computed")) {
                    *a += v;
                }
            }
            out.push((w, Tensor::from_vec(wt.shape(), dw).expect("dw shape")));
        }
        if let Some(b) = b.filter(|b| self.needs(*b)) {
            out.push((b, bias_grad(dy, n, cout, oh * ow)));
        }
        out
    }
}

fn bias_grad(dy: &Tensor, n: usize, c: usize, hw: usize) -> Tensor {
    let mut db = vec![0.0; c];
    for s in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let off = (s * c + ch) * hw;
            *acc += dy.data()[off..off + hw].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(&[c], db).expect("bias shape")
}

fn pool_taps(oy: usize, ox: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let ys = (2 * oy).saturating_sub(1)..(2 * oy + 2).min(h);
    let xs = (2 * ox).saturating_sub(1)..(2 * ox + 2).min(w);
    ys.flat_map(move |y| xs.clone().map(move |x| (y, x)))
}

pub fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of d(loss)/d(input `which`) for a graph builder.
    fn check_grad(inputs: Vec<Tensor>, which: usize, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.param(&Arc::new(t.clone()), true)).collect();
            let loss = build(&mut g, &vars);
            (g.value(loss).item(), g, vars, loss)
        };
        let (_, g, vars, loss) = eval(&inputs);
        let grads = g.backward(loss);
        let analytic = grads.get_or_zeros(vars[which], &inputs[which]);
        let h = 1e-6;
        for i in 0..inputs[which].numel() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= h;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            assert!((a - numeric).abs() / denom < 1e-5, "element {i}: analytic {a} numeric {numeric}");
        }
    }

    fn weighted(g: &mut Graph, y: Var, seed: u64) -> Var {
        // a fixed random projection so every output element matters
        let w = rand_tensor(g.value(y).shape(), seed);
        let wv = g.input(w);
        let p = g.mul(y, wv);
        g.mean(p)
    }

    #[test]
    fn conv_grads() {
        let x = rand_tensor(&[2, 3, 6, 5], 1);
        let w = rand_tensor(&[4, 3, 3, 3], 2);
        let b = rand_tensor(&[4], 3);
        for which in 0..3 {
            check_grad(vec![x.clone(), w.clone(), b.clone()], which, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1);
                weighted(g, y, 9)
            });
        }
    }

    #[test]
    fn conv_transpose_grads() {
        let x = rand_tensor(&[2, 3, 4, 3], 1);
        let w = rand_tensor(&[3, 2, 3, 3], 2);
        let b = rand_tensor(&[2], 3);
        for which in 0..3 {
            check_grad(vec![x.clone(), w.clone(), b.clone()], which, |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1);
                assert_eq!(g.value(y).shape(), &[2, 2, 8, 6]);
                weighted(g, y, 9)
            });
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x, w), y> == <x, convT(y, w)> for matching geometry
        let x = rand_tensor(&[1, 2, 8, 8], 4);
        let w = rand_tensor(&[3, 2, 3, 3], 5);
        let y = rand_tensor(&[1, 3, 4, 4], 6);
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.input(x.clone()), g.input(w.clone()), g.input(y.clone()));
        let c = g.conv2d(xv, wv, None, 2, 1);
        let t = g.conv_transpose2d(yv, wv, None, 2, 1, 1);
        let lhs: f64 = g.value(c).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.value(t).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn norm_pad_pool_grads() {
        let x = rand_tensor(&[2, 2, 5, 6], 7);
        check_grad(vec![x.clone()], 0, |g, v| {
            let y = g.instance_norm(v[0]);
            weighted(g, y, 1)
        });
        check_grad(vec![x.clone()], 0, |g, v| {
            let y = g.reflect_pad(v[0], 2);
            weighted(g, y, 2)
        });
        check_grad(vec![x.clone()], 0, |g, v| {
            let y = g.avg_pool(v[0]);
            weighted(g, y, 3)
        });
        check_grad(vec![x], 0, |g, v| {
            let y = g.max_pool2(v[0]);
            weighted(g, y, 4)
        });
    }

    #[test]
    fn elementwise_grads() {
        let a = rand_tensor(&[1, 2, 3, 3], 8);
        let b = rand_tensor(&[1, 2, 3, 3], 9);
        let m = rand_tensor(&[1, 1, 3, 3], 10);
        for which in 0..2 {
            check_grad(vec![a.clone(), b.clone()], which, |g, v| {
                let s = g.sigmoid(v[0]);
                let t = g.tanh(v[1]);
                let p = g.mul(s, t);
                let q = g.sub(p, v[1]);
                let r = g.leaky_relu(q, 0.2);
                let c = g.concat(r, s);
                let d = g.slice_channels(c, 1, 2);
                let e = g.square(d);
                let f = g.affine(e, 0.5, 1.0);
                let l = g.log(f);
                weighted(g, l, 11)
            });
        }
        for which in 0..2 {
            check_grad(vec![a.clone(), m.clone()], which, |g, v| {
                let y = g.mul_channel(v[0], v[1]);
                let z = g.relu(y);
                let c = g.clamp(z, 0.05, 0.4);
                let s = g.abs(v[0]);
                let t = g.add(c, s);
                weighted(g, t, 12)
            });
        }
    }

    #[test]
    fn sigmoid_saturates_exactly() {
        assert_eq!(stable_sigmoid(1000.0), 1.0);
        assert_eq!(stable_sigmoid(-1000.0), 0.0);
        assert!((stable_sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn untrainable_params_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(&Arc::new(Tensor::scalar(2.0)), true);
        let b = g.param(&Arc::new(Tensor::scalar(3.0)), false);
        let p = g.mul(a, b);
        let grads = g.backward(p);
        assert_eq!(grads.get(a).unwrap().item(), 3.0);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn batch_results_do_not_depend_on_thread_count() {
        let x = rand_tensor(&[4, 3, 8, 8], 1);
        let w = rand_tensor(&[5, 3, 3, 3], 2);
        let run = || {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let wv = g.param(&Arc::new(w.clone()), true);
            let y = g.conv2d(xv, wv, None, 1, 1);
            let l = weighted(&mut g, y, 3);
            g.backward(l).get(wv).unwrap().clone()
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(run);
        let multi = run();
        assert_eq!(single, multi);
    }
}
