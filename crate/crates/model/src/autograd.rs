//! Minimal reverse-mode autodiff over `f64` tensors.
//!
//! A [`Graph`] records every operation together with a closure that maps the
//! output gradient to input gradients. Spatial tensors are `N x C x H x W`.
//! Operation preconditions (ranks, matching shapes) are asserted; callers in
//! the model layer validate user-facing shapes first and return errors.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView3, ArrayView4, Axis, Ix4, IxDyn, Zip};
use sodkit_core::imageops::{bilinear_taps, Tap};

pub type Tensor = ArrayD<f64>;

type Backward = Box<dyn Fn(&Tensor, &mut Grads)>;

struct Node {
    value: Rc<Tensor>,
    needs_grad: bool,
    backward: Option<Backward>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    needs: Vec<bool>,
}

impl Grads {
    pub fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub fn add(&mut self, v: Var, g: Tensor) {
        if !self.needs[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

pub(crate) fn view4(t: &Tensor) -> ArrayView4<'_, f64> {
    t.view().into_dimensionality::<Ix4>().expect("rank-4 tensor")
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    view4(t).dim()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.insert(value, true, None)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.insert(value, false, None)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.iter().next().copied().unwrap_or(0.0)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    fn insert(&self, value: Tensor, needs_grad: bool, backward: Option<Backward>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            needs_grad,
            backward,
        });
        Var(nodes.len() - 1)
    }

    /// Records an operation; `backward` only runs if some parent needs a
    /// gradient.
    pub fn push(&self, value: Tensor, parents: &[Var], backward: impl Fn(&Tensor, &mut Grads) + 'static) -> Var {
        let needs = parents.iter().any(|&p| self.needs_grad(p));
        let back: Option<Backward> = if needs { Some(Box::new(backward)) } else { None };
        self.insert(value, needs, back)
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.len(), 1, "backward from a non-scalar");
        let mut grads = Grads {
            grads: vec![None; nodes.len()],
            needs: nodes.iter().map(|n| n.needs_grad).collect(),
        };
        grads.add(root, Tensor::ones(nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            let Some(back) = &nodes[i].backward else { continue };
            let Some(g) = grads.grads[i].take() else { continue };
            back(&g, &mut grads);
            grads.grads[i] = Some(g);
        }
        grads
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let out = &*av + &*bv;
        self.push(out, &[a, b], move |g, gr| {
            gr.add(a, g.clone());
            gr.add(b, g.clone());
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let out = &*av * &*bv;
        self.push(out, &[a, b], move |g, gr| {
            if gr.wants(a) {
                gr.add(a, g * &*bv);
            }
            if gr.wants(b) {
                gr.add(b, g * &*av);
            }
        })
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let out = &*self.value(a) * k;
        self.push(out, &[a], move |g, gr| gr.add(a, g * k))
    }

    /// Adds a fixed tensor of the same shape.
    pub fn add_const(&self, a: Var, c: &Tensor) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), c.shape(), "add_const shape mismatch");
        let out = &*av + c;
        self.push(out, &[a], move |g, gr| gr.add(a, g.clone()))
    }

    /// Multiplies by a fixed tensor of the same shape (dropout masks).
    pub fn mul_const(&self, a: Var, c: Tensor) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), c.shape(), "mul_const shape mismatch");
        let out = &*av * &c;
        self.push(out, &[a], move |g, gr| gr.add(a, g * &c))
    }

    pub fn relu(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.mapv(|x| x.max(0.0));
        self.push(out, &[a], move |g, gr| {
            let mut d = g.clone();
            Zip::from(&mut d).and(&*av).for_each(|d, &x| {
                if x <= 0.0 {
                    *d = 0.0
                }
            });
            gr.add(a, d);
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let y = out.clone();
        self.push(out, &[a], move |g, gr| {
            let mut d = g.clone();
            Zip::from(&mut d).and(&y).for_each(|d, &s| *d *= s * (1.0 - s));
            gr.add(a, d);
        })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.mapv(|x| gelu_parts(x).0);
        self.push(out, &[a], move |g, gr| {
            let mut d = g.clone();
            Zip::from(&mut d).and(&*av).for_each(|d, &x| *d *= gelu_parts(x).1);
            gr.add(a, d);
        })
    }

    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::from_elem(IxDyn(&[]), av.sum());
        let dim = av.raw_dim();
        self.push(out, &[a], move |g, gr| {
            gr.add(a, Tensor::from_elem(dim.clone(), g.sum()));
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Scalar node whose local gradient with respect to `a` was computed
    /// alongside its value.
    pub fn custom_scalar(&self, a: Var, value: f64, local_grad: Tensor) -> Var {
        assert_eq!(self.value(a).shape(), local_grad.shape(), "custom grad shape");
        let out = Tensor::from_elem(IxDyn(&[]), value);
        self.push(out, &[a], move |g, gr| {
            let k = g.sum();
            gr.add(a, &local_grad * k);
        })
    }

    // ---- convolution -------------------------------------------------------

    /// 2-D convolution with square stride and symmetric zero padding.
    /// `w` is `Co x Ci x kh x kw`, `b` has length `Co`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, ci, h, wd) = dims4(&xv);
        let (co, ci_w, kh, kw) = dims4(&wv);
        assert_eq!(ci, ci_w, "conv2d channel mismatch");
        assert!(
            stride >= 1 && h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "conv2d geometry"
        );
        let geo = ConvGeom {
            ci,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let wmat = wv
            .to_shape((co, ci * kh * kw))
            .expect("contiguous weights")
            .into_owned();
        let bias = b.map(|b| self.value(b));
        let x4 = view4(&xv);
        let mut out = Array4::<f64>::zeros((n, co, geo.ho, geo.wo));
        for i in 0..n {
            let cols = geo.im2col(x4.index_axis(Axis(0), i));
            let y = wmat.dot(&cols);
            let mut oi = out.index_axis_mut(Axis(0), i);
            oi.assign(&y.into_shape_with_order((co, geo.ho, geo.wo)).expect("conv out"));
            if let Some(bv) = &bias {
                for (c, mut plane) in oi.outer_iter_mut().enumerate() {
                    plane += bv[c];
                }
            }
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(out.into_dyn(), &parents, move |g, gr| {
            let g4 = view4(g);
            let x4 = view4(&xv);
            let mut dw = Array2::<f64>::zeros((co, ci * kh * kw));
            let mut dx = gr.wants(x).then(|| Array4::<f64>::zeros((n, ci, h, wd)));
            let mut db = Array1::<f64>::zeros(co);
            for i in 0..n {
                let gy = g4
                    .index_axis(Axis(0), i)
                    .to_shape((co, geo.ho * geo.wo))
                    .expect("grad layout")
                    .into_owned();
                if gr.wants(w) {
                    let cols = geo.im2col(x4.index_axis(Axis(0), i));
                    dw += &gy.dot(&cols.t());
                }
                if let Some(b) = b {
                    if gr.wants(b) {
                        db += &gy.sum_axis(Axis(1));
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let dcols = wmat.t().dot(&gy);
                    geo.col2im_add(&dcols, dx.index_axis_mut(Axis(0), i));
                }
            }
            if gr.wants(w) {
                gr.add(w, dw.into_shape_with_order(IxDyn(&[co, ci, kh, kw])).expect("dw"));
            }
            if let Some(b) = b {
                gr.add(b, db.into_dyn());
            }
            if let Some(dx) = dx {
                gr.add(x, dx.into_dyn());
            }
        })
    }

    // ---- normalization -----------------------------------------------------

    /// Batch normalization over `N, H, W` per channel. With `stats = None`
    /// batch statistics are used and returned as `(mean, unbiased var)`;
    /// otherwise the given running statistics are applied.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&Array1<f64>, &Array1<f64>)>,
        eps: f64,
    ) -> (Var, Option<(Array1<f64>, Array1<f64>)>) {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let x4 = view4(&xv);
        let (n, c, h, w) = x4.dim();
        let m = (n * h * w) as f64;
        let (mean, var, batch) = match stats {
            Some((rm, rv)) => (rm.clone(), rv.clone(), None),
            None => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ch in 0..c {
                    let plane = x4.index_axis(Axis(1), ch);
                    let mu = plane.sum() / m;
                    let v = plane.iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>() / m;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
                (mean.clone(), var, Some((mean, unbiased)))
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut xhat = x4.to_owned();
        for ch in 0..c {
            xhat.index_axis_mut(Axis(1), ch)
                .mapv_inplace(|t| (t - mean[ch]) * inv_std[ch]);
        }
        let mut out = xhat.clone();
        for ch in 0..c {
            out.index_axis_mut(Axis(1), ch).mapv_inplace(|t| t * gv[ch] + bv[ch]);
        }
        let train = batch.is_some();
        let node = self.push(out.into_dyn(), &[x, gamma, beta], move |g, gr| {
            let g4 = view4(g);
            let mut dgamma = Array1::zeros(c);
            let mut dbeta = Array1::zeros(c);
            for ch in 0..c {
                let gp = g4.index_axis(Axis(1), ch);
                let xp = xhat.index_axis(Axis(1), ch);
                dbeta[ch] = gp.sum();
                dgamma[ch] = Zip::from(&gp).and(&xp).fold(0.0, |acc, &a, &b| acc + a * b);
            }
            if gr.wants(x) {
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                for ch in 0..c {
                    let k = gv[ch] * inv_std[ch];
                    let gp = g4.index_axis(Axis(1), ch);
                    let xp = xhat.index_axis(Axis(1), ch);
                    let mut dp = dx.index_axis_mut(Axis(1), ch);
                    if train {
                        let mg = dbeta[ch] / m;
                        let mgx = dgamma[ch] / m;
                        Zip::from(&mut dp)
                            .and(&gp)
                            .and(&xp)
                            .for_each(|d, &gy, &xh| *d = k * (gy - mg - xh * mgx));
                    } else {
                        Zip::from(&mut dp).and(&gp).for_each(|d, &gy| *d = k * gy);
                    }
                }
                gr.add(x, dx.into_dyn());
            }
            gr.add(gamma, dgamma.into_dyn());
            gr.add(beta, dbeta.into_dyn());
        });
        (node, batch)
    }

    /// Layer normalization across channels at every spatial position.
    pub fn layer_norm_channels(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let (n, c, h, w) = dims4(&xv);
        let x4 = view4(&xv);
        let mut xhat = Array4::<f64>::zeros((n, c, h, w));
        let mut inv_std = Array4::<f64>::zeros((n, 1, h, w));
        for i in 0..n {
            for r in 0..h {
                for q in 0..w {
                    let col = x4.slice(s![i, .., r, q]);
                    let mu = col.sum() / c as f64;
                    let var = col.iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>() / c as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[(i, 0, r, q)] = is;
                    for ch in 0..c {
                        xhat[(i, ch, r, q)] = (col[ch] - mu) * is;
                    }
                }
            }
        }
        let mut out = xhat.clone();
        for ch in 0..c {
            out.index_axis_mut(Axis(1), ch).mapv_inplace(|t| t * gv[ch] + bv[ch]);
        }
        self.push(out.into_dyn(), &[x, gamma, beta], move |g, gr| {
            let g4 = view4(g);
            let mut dgamma = Array1::<f64>::zeros(c);
            let mut dbeta = Array1::<f64>::zeros(c);
            for ch in 0..c {
                let gp = g4.index_axis(Axis(1), ch);
                dbeta[ch] = gp.sum();
                dgamma[ch] = Zip::from(&gp)
                    .and(&xhat.index_axis(Axis(1), ch))
                    .fold(0.0, |acc, &a, &b| acc + a * b);
            }
            if gr.wants(x) {
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                let cf = c as f64;
                for i in 0..n {
                    for r in 0..h {
                        for q in 0..w {
                            let mut mg = 0.0;
                            let mut mgx = 0.0;
                            for ch in 0..c {
                                let gh = g4[(i, ch, r, q)] * gv[ch];
                                mg += gh;
                                mgx += gh * xhat[(i, ch, r, q)];
                            }
                            mg /= cf;
                            mgx /= cf;
                            let is = inv_std[(i, 0, r, q)];
                            for ch in 0..c {
                                let gh = g4[(i, ch, r, q)] * gv[ch];
                                dx[(i, ch, r, q)] = is * (gh - mg - xhat[(i, ch, r, q)] * mgx);
                            }
                        }
                    }
                }
                gr.add(x, dx.into_dyn());
            }
            gr.add(gamma, dgamma.into_dyn());
            gr.add(beta, dbeta.into_dyn());
        })
    }

    // ---- layout ------------------------------------------------------------

    pub fn concat_channels(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, ca, h, w) = dims4(&av);
        let (nb, cb, hb, wb) = dims4(&bv);
        assert_eq!((n, h, w), (nb, hb, wb), "concat shape mismatch");
        let mut out = Array4::<f64>::zeros((n, ca + cb, h, w));
        out.slice_mut(s![.., ..ca, .., ..]).assign(&view4(&av));
        out.slice_mut(s![.., ca.., .., ..]).assign(&view4(&bv));
        self.push(out.into_dyn(), &[a, b], move |g, gr| {
            let g4 = view4(g);
            if gr.wants(a) {
                gr.add(a, g4.slice(s![.., ..ca, .., ..]).to_owned().into_dyn());
            }
            if gr.wants(b) {
                gr.add(b, g4.slice(s![.., ca.., .., ..]).to_owned().into_dyn());
            }
        })
    }

    /// `N x C*s*s x h x w -> N x C x h*s x w*s`; input channel
    /// `c*s*s + i*s + j` lands at output offset `(i, j)` of each cell.
    pub fn pixel_shuffle(&self, x: Var, s: usize) -> Var {
        let xv = self.value(x);
        let (n, cs, h, w) = dims4(&xv);
        assert!(s >= 1 && cs % (s * s) == 0, "pixel_shuffle channels");
        let c = cs / (s * s);
        let x4 = view4(&xv);
        let out = Array4::from_shape_fn((n, c, h * s, w * s), |(b, ch, y, xx)| {
            x4[(b, ch * s * s + (y % s) * s + xx % s, y / s, xx / s)]
        });
        self.push(out.into_dyn(), &[x], move |g, gr| {
            let g4 = view4(g);
            let dx = Array4::from_shape_fn((n, cs, h, w), |(b, k, y, xx)| {
                let (ch, i, j) = (k / (s * s), (k / s) % s, k % s);
                g4[(b, ch, y * s + i, xx * s + j)]
            });
            gr.add(x, dx.into_dyn());
        })
    }

    pub fn global_avg_pool(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(&xv);
        let x4 = view4(&xv);
        let area = (h * w) as f64;
        let out = Array4::from_shape_fn((n, c, 1, 1), |(b, ch, _, _)| x4.slice(s![b, ch, .., ..]).sum() / area);
        self.push(out.into_dyn(), &[x], move |g, gr| {
            let g4 = view4(g);
            let dx = Array4::from_shape_fn((n, c, h, w), |(b, ch, _, _)| g4[(b, ch, 0, 0)] / area);
            gr.add(x, dx.into_dyn());
        })
    }

    /// `x * gate` with `gate` of shape `N x C x 1 x 1`.
    pub fn mul_channel(&self, x: Var, gate: Var) -> Var {
        let (xv, gv) = (self.value(x), self.value(gate));
        let (n, c, h, w) = dims4(&xv);
        assert_eq!(dims4(&gv), (n, c, 1, 1), "gate shape");
        let (x4, g4) = (view4(&xv), view4(&gv));
        let out = Array4::from_shape_fn((n, c, h, w), |(b, ch, y, q)| x4[(b, ch, y, q)] * g4[(b, ch, 0, 0)]);
        self.push(out.into_dyn(), &[x, gate], move |g, gr| {
            let go = view4(g);
            let (x4, g4) = (view4(&xv), view4(&gv));
            if gr.wants(x) {
                let dx = Array4::from_shape_fn((n, c, h, w), |(b, ch, y, q)| go[(b, ch, y, q)] * g4[(b, ch, 0, 0)]);
                gr.add(x, dx.into_dyn());
            }
            if gr.wants(gate) {
                let dg = Array4::from_shape_fn((n, c, 1, 1), |(b, ch, _, _)| {
                    Zip::from(go.slice(s![b, ch, .., ..]))
                        .and(x4.slice(s![b, ch, .., ..]))
                        .fold(0.0, |acc, &a, &v| acc + a * v)
                });
                gr.add(gate, dg.into_dyn());
            }
        })
    }

    // ---- resampling --------------------------------------------------------

    /// Half-pixel bilinear resize of every plane.
    pub fn resize_bilinear(&self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(&xv);
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let x4 = view4(&xv);
        let out = Array4::from_shape_fn((n, c, out_h, out_w), |(b, ch, r, q)| {
            let plane = x4.slice(s![b, ch, .., ..]);
            bilerp(&plane, ty[r], tx[q])
        });
        self.push(out.into_dyn(), &[x], move |g, gr| {
            let g4 = view4(g);
            let mut dx = Array4::<f64>::zeros((n, c, h, w));
            for b in 0..n {
                for ch in 0..c {
                    let mut dp = dx.slice_mut(s![b, ch, .., ..]);
                    for (r, a) in ty.iter().enumerate() {
                        for (q, bq) in tx.iter().enumerate() {
                            let gv = g4[(b, ch, r, q)];
                            dp[(a.lo, bq.lo)] += gv * (1.0 - a.frac) * (1.0 - bq.frac);
                            dp[(a.lo, bq.hi)] += gv * (1.0 - a.frac) * bq.frac;
                            dp[(a.hi, bq.lo)] += gv * a.frac * (1.0 - bq.frac);
                            dp[(a.hi, bq.hi)] += gv * a.frac * bq.frac;
                        }
                    }
                }
            }
            gr.add(x, dx.into_dyn());
        })
    }

    /// Resamples `x` (`N x C x h x w`) on the `s`-times finer grid displaced
    /// by `scope * offsets`. `offsets` is `N x 2 x sh x sw` in input-pixel
    /// units, channel 0 along x and channel 1 along y. Sampling positions are
    /// clamped to the input extent.
    pub fn offset_sample(&self, x: Var, offsets: Var, s: usize, scope: f64) -> Var {
        let (xv, ov) = (self.value(x), self.value(offsets));
        let (n, c, h, w) = dims4(&xv);
        let (oh, ow) = (h * s, w * s);
        assert_eq!(dims4(&ov), (n, 2, oh, ow), "offset shape");
        let o4 = view4(&ov);
        let mut taps = Vec::with_capacity(n * oh * ow);
        for b in 0..n {
            for r in 0..oh {
                for q in 0..ow {
                    let py = (r as f64 + 0.5) / s as f64 - 0.5 + scope * o4[(b, 1, r, q)];
                    let px = (q as f64 + 0.5) / s as f64 - 0.5 + scope * o4[(b, 0, r, q)];
                    taps.push((clamped_tap(py, h), clamped_tap(px, w)));
                }
            }
        }
        let x4 = view4(&xv);
        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        for b in 0..n {
            for ch in 0..c {
                let plane = x4.slice(s![b, ch, .., ..]);
                let mut op = out.slice_mut(s![b, ch, .., ..]);
                for r in 0..oh {
                    for q in 0..ow {
                        let (ty, tx) = taps[(b * oh + r) * ow + q];
                        op[(r, q)] = bilerp(&plane, ty.tap, tx.tap);
                    }
                }
            }
        }
        self.push(out.into_dyn(), &[x, offsets], move |g, gr| {
            let g4 = view4(g);
            let x4 = view4(&xv);
            let want_x = gr.wants(x);
            let want_o = gr.wants(offsets);
            let mut dx = Array4::<f64>::zeros((n, c, h, w));
            let mut doff = Array4::<f64>::zeros((n, 2, oh, ow));
            for b in 0..n {
                for r in 0..oh {
                    for q in 0..ow {
                        let (ty, tx) = taps[(b * oh + r) * ow + q];
                        let (a, bq) = (ty.tap, tx.tap);
                        let mut gy_acc = 0.0;
                        let mut gx_acc = 0.0;
                        for ch in 0..c {
                            let gv = g4[(b, ch, r, q)];
                            if gv == 0.0 {
                                continue;
                            }
                            if want_x {
                                let mut dp = dx.slice_mut(s![b, ch, .., ..]);
                                dp[(a.lo, bq.lo)] += gv * (1.0 - a.frac) * (1.0 - bq.frac);
                                dp[(a.lo, bq.hi)] += gv * (1.0 - a.frac) * bq.frac;
                                dp[(a.hi, bq.lo)] += gv * a.frac * (1.0 - bq.frac);
                                dp[(a.hi, bq.hi)] += gv * a.frac * bq.frac;
                            }
                            if want_o {
                                let v00 = x4[(b, ch, a.lo, bq.lo)];
                                let v01 = x4[(b, ch, a.lo, bq.hi)];
                                let v10 = x4[(b, ch, a.hi, bq.lo)];
                                let v11 = x4[(b, ch, a.hi, bq.hi)];
                                if ty.live {
                                    gy_acc += gv * ((1.0 - bq.frac) * (v10 - v00) + bq.frac * (v11 - v01));
                                }
                                if tx.live {
                                    gx_acc += gv * ((1.0 - a.frac) * (v01 - v00) + a.frac * (v11 - v10));
                                }
                            }
                        }
                        doff[(b, 1, r, q)] = scope * gy_acc;
                        doff[(b, 0, r, q)] = scope * gx_acc;
                    }
                }
            }
            if want_x {
                gr.add(x, dx.into_dyn());
            }
            if want_o {
                gr.add(offsets, doff.into_dyn());
            }
        })
    }

    // ---- attention ---------------------------------------------------------

    /// Multi-head self-attention over the spatial positions of `qkv`
    /// (`N x 3E x H x W`, channels ordered q, k, v). Returns `N x E x H x W`.
    pub fn attention(&self, qkv: Var, heads: usize) -> Var {
        let qv = self.value(qkv);
        let (n, e3, h, w) = dims4(&qv);
        assert!(e3 % 3 == 0 && (e3 / 3) % heads == 0, "attention channels");
        let e = e3 / 3;
        let d = e / heads;
        let t = h * w;
        let scale = 1.0 / (d as f64).sqrt();
        let q4 = view4(&qv);
        let mut out = Array4::<f64>::zeros((n, e, h, w));
        let mut probs: Vec<Array2<f64>> = Vec::with_capacity(n * heads);
        for b in 0..n {
            let tokens = q4
                .index_axis(Axis(0), b)
                .to_shape((e3, t))
                .expect("token layout")
                .into_owned();
            let mut ob = Array2::<f64>::zeros((e, t));
            for hd in 0..heads {
                let qh = tokens.slice(s![hd * d..(hd + 1) * d, ..]);
                let kh = tokens.slice(s![e + hd * d..e + (hd + 1) * d, ..]);
                let vh = tokens.slice(s![2 * e + hd * d..2 * e + (hd + 1) * d, ..]);
                let mut a = qh.t().dot(&kh) * scale;
                softmax_rows(&mut a);
                ob.slice_mut(s![hd * d..(hd + 1) * d, ..]).assign(&vh.dot(&a.t()));
                probs.push(a);
            }
            out.index_axis_mut(Axis(0), b)
                .assign(&ob.into_shape_with_order((e, h, w)).expect("attn out"));
        }
        self.push(out.into_dyn(), &[qkv], move |g, gr| {
            let g4 = view4(g);
            let q4 = view4(&qv);
            let mut dqkv = Array4::<f64>::zeros((n, e3, h, w));
            for b in 0..n {
                let tokens = q4
                    .index_axis(Axis(0), b)
                    .to_shape((e3, t))
                    .expect("token layout")
                    .into_owned();
                let gout = g4
                    .index_axis(Axis(0), b)
                    .to_shape((e, t))
                    .expect("grad layout")
                    .into_owned();
                let mut dt = Array2::<f64>::zeros((e3, t));
                for hd in 0..heads {
                    let a = &probs[b * heads + hd];
                    let qh = tokens.slice(s![hd * d..(hd + 1) * d, ..]);
                    let kh = tokens.slice(s![e + hd * d..e + (hd + 1) * d, ..]);
                    let vh = tokens.slice(s![2 * e + hd * d..2 * e + (hd + 1) * d, ..]);
                    let go = gout.slice(s![hd * d..(hd + 1) * d, ..]);
                    let dv = go.dot(a);
                    let da = go.t().dot(&vh);
                    let mut ds = a * &da;
                    let row = ds.sum_axis(Axis(1));
                    ds -= &(a * &row.insert_axis(Axis(1)));
                    let dq = kh.dot(&ds.t()) * scale;
                    let dk = qh.dot(&ds) * scale;
                    dt.slice_mut(s![hd * d..(hd + 1) * d, ..]).assign(&dq);
                    dt.slice_mut(s![e + hd * d..e + (hd + 1) * d, ..]).assign(&dk);
                    dt.slice_mut(s![2 * e + hd * d..2 * e + (hd + 1) * d, ..]).assign(&dv);
                }
                dqkv.index_axis_mut(Axis(0), b)
                    .assign(&dt.into_shape_with_order((e3, h, w)).expect("dqkv"));
            }
            gr.add(qkv, dqkv.into_dyn());
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Value and derivative of the tanh-approximated GELU.
fn gelu_parts(x: f64) -> (f64, f64) {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    (0.5 * x * (1.0 + th), 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)
}

fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

fn bilerp(plane: &ndarray::ArrayView2<f64>, a: Tap, b: Tap) -> f64 {
    let top = plane[(a.lo, b.lo)] * (1.0 - b.frac) + plane[(a.lo, b.hi)] * b.frac;
    let bot = plane[(a.hi, b.lo)] * (1.0 - b.frac) + plane[(a.hi, b.hi)] * b.frac;
    top * (1.0 - a.frac) + bot * a.frac
}

#[derive(Debug, Clone, Copy)]
struct LiveTap {
    tap: Tap,
    /// False when the position was clamped, which zeroes its derivative.
    live: bool,
}

fn clamped_tap(p: f64, len: usize) -> LiveTap {
    let max = (len - 1) as f64;
    let live = p > 0.0 && p < max;
    let p = p.clamp(0.0, max);
    let lo = (p.floor() as usize).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    LiveTap {
        tap: Tap {
            lo,
            hi,
            frac: p - lo as f64,
        },
        live,
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Rows `c*kh*kw + ky*kw + kx`, columns `oy*wo + ox`.
    fn im2col(&self, x: ArrayView3<f64>) -> Array2<f64> {
        let ConvGeom {
            ci,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        } = *self;
        if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
            return x.to_shape((ci, h * w)).expect("1x1 layout").into_owned();
        }
        let mut cols = Array2::<f64>::zeros((ci * kh * kw, ho * wo));
        for c in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut row = cols.row_mut((c * kh + ky) * kw + kx);
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oy * wo + ox] = x[(c, iy as usize, ix as usize)];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im_add(&self, cols: &Array2<f64>, mut dx: ndarray::ArrayViewMut3<f64>) {
        let ConvGeom {
            ci,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        } = *self;
        for c in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = cols.row((c * kh + ky) * kw + kx);
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[(c, iy as usize, ix as usize)] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `f` (built on a fresh graph from the given
    /// leaves, reduced against a fixed random projection) for every leaf.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&Graph, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |vals: &[Tensor], proj: Option<&Tensor>| -> (f64, Tensor, Vec<Option<Tensor>>) {
            let g = Graph::new();
            let leaves: Vec<Var> = vals.iter().map(|v| g.leaf(v.clone())).collect();
            let out = f(&g, &leaves);
            let ov = g.value(out);
            let p = proj.cloned().unwrap_or_else(|| Tensor::ones(ov.raw_dim()));
            let pv = g.constant(p.clone());
            let loss = g.sum(g.mul(out, pv));
            let grads = g.backward(loss);
            (
                g.scalar(loss),
                p,
                leaves.iter().map(|&l| grads.get(l).cloned()).collect(),
            )
        };
        let (_, shape_probe, _) = eval(&inputs, None);
        let proj = Tensor::from_shape_fn(shape_probe.raw_dim(), |_| rng.random_range(-1.0..1.0));
        let (_, _, analytic) = eval(&inputs, Some(&proj));
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let an = analytic[k].clone().unwrap_or_else(|| Tensor::zeros(input.raw_dim()));
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += h;
                let mut minus = inputs.clone();
                minus[k].as_slice_mut().unwrap()[idx] -= h;
                let num = (eval(&plus, Some(&proj)).0 - eval(&minus, Some(&proj)).0) / (2.0 * h);
                let a = an.as_slice().unwrap()[idx];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-4, "input {k} index {idx}: analytic {a} numeric {num}");
            }
        }
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 3, 5, 4]);
        let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        check(vec![x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1));
        let x = rand_tensor(&mut rng, &[1, 4, 3, 3]);
        let w = rand_tensor(&mut rng, &[5, 4, 1, 1]);
        check(vec![x, w], |g, v| g.conv2d(v[0], v[1], None, 1, 0));
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 2, 2]);
        let g = Graph::new();
        let out = g.conv2d(g.constant(x.clone()), g.constant(w.clone()), None, 2, 0);
        let o = g.value(out);
        let (x4, w4, o4) = (view4(&x), view4(&w), view4(&o));
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                acc += w4[(co, c, ky, kx)] * x4[(0, c, oy * 2 + ky, ox * 2 + kx)];
                            }
                        }
                    }
                    assert!((acc - o4[(0, co, oy, ox)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 3, 2, 3]);
        let gm = rand_tensor(&mut rng, &[3]);
        let bt = rand_tensor(&mut rng, &[3]);
        check(vec![x.clone(), gm.clone(), bt.clone()], |g, v| {
            g.batch_norm(v[0], v[1], v[2], None, 1e-5).0
        });
        let rm = Array1::from(vec![0.1, -0.2, 0.3]);
        let rv = Array1::from(vec![1.5, 0.5, 2.0]);
        check(vec![x.clone(), gm.clone(), bt.clone()], move |g, v| {
            g.batch_norm(v[0], v[1], v[2], Some((&rm, &rv)), 1e-5).0
        });
        check(vec![x, gm, bt], |g, v| g.layer_norm_channels(v[0], v[1], v[2], 1e-6));
    }

    #[test]
    fn elementwise_and_layout_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&mut rng, &[1, 8, 2, 3]);
        let b = rand_tensor(&mut rng, &[1, 8, 2, 3]);
        check(vec![a.clone(), b.clone()], |g, v| {
            let m = g.mul(g.gelu(v[0]), g.sigmoid(v[1]));
            g.add(g.relu(m), g.scale(v[0], 0.3))
        });
        check(vec![a.clone(), b.clone()], |g, v| g.concat_channels(v[0], v[1]));
        check(vec![a.clone()], |g, v| g.pixel_shuffle(v[0], 2));
        check(vec![a.clone()], |g, v| g.resize_bilinear(v[0], 5, 7));
        check(vec![a.clone()], |g, v| g.global_avg_pool(v[0]));
        let gate = rand_tensor(&mut rng, &[1, 8, 1, 1]);
        check(vec![a, gate], |g, v| g.mul_channel(v[0], v[1]));
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qkv = rand_tensor(&mut rng, &[2, 12, 2, 2]);
        check(vec![qkv], |g, v| g.attention(v[0], 2));
    }

    #[test]
    fn offset_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[1, 2, 3, 3]);
        let off = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        check(vec![x, off], |g, v| g.offset_sample(v[0], v[1], 2, 0.25));
    }

    #[test]
    fn pixel_shuffle_layout() {
        let x = Tensor::from_shape_fn(IxDyn(&[1, 8, 1, 1]), |i| i[1] as f64);
        let g = Graph::new();
        let y = g.value(g.pixel_shuffle(g.constant(x), 2));
        let y4 = view4(&y);
        assert_eq!(y4[(0, 0, 0, 1)], 1.0);
        assert_eq!(y4[(0, 0, 1, 0)], 2.0);
        assert_eq!(y4[(0, 1, 1, 1)], 7.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let g = Graph::new();
        let c = g.constant(Tensor::ones(IxDyn(&[2])));
        let l = g.leaf(Tensor::ones(IxDyn(&[2])));
        let loss = g.sum(g.mul(c, l));
        let grads = g.backward(loss);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(l).unwrap().sum(), 2.0);
    }
}
