//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation pushes a node
//! whose parents have smaller indices, so the tape order is a topological
//! order and `backward` walks it once in reverse.

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Geometry of a same-padded 2-D convolution over `[batch, c_in * h * w]` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h * self.w
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    /// parents: x `[B, in]`, w `[out, in]`, b `[out]`
    Linear,
    /// parents: x `[B, in]`, flat `[B or 1, P]`
    LinearExt {
        offset: usize,
        n_in: usize,
        n_out: usize,
    },
    Add,
    Sub,
    Mul,
    Affine {
        scale: f64,
    },
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Square,
    Concat,
    Slice {
        start: usize,
    },
    Sum,
    Mean,
    RowNorm,
    Conv2d(ConvGeom),
    MaxPool2 {
        argmax: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub(crate) value: Tensor,
    pub(crate) grad: Option<Tensor>,
    pub(crate) op: Op,
    pub(crate) parents: Vec<NodeId>,
}

#[derive(Default, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `out[r, o] = b[o] + sum_i w[o, i] * x[r, i]`, with `w` row-major `[n_out, n_in]`.
///
/// Both [`Graph::linear`] and [`Graph::linear_ext`] go through this kernel so
/// their results agree bit for bit.
#[inline]
pub(crate) fn affine_row(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let wr = &w[o * n_in..(o + 1) * n_in];
        let mut acc = 0.0;
        for (wi, xi) in wr.iter().zip(x) {
            acc += wi * xi;
        }
        *y = acc + b[o];
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of `id`, or zeros when nothing flowed into it.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        self.grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    fn push(&mut self, value: Tensor, op: Op, parents: Vec<NodeId>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            parents,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, Vec::new())
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (rows, n_in) = (xv.rows(), xv.cols());
        let n_out = bv.len();
        assert_eq!(wv.len(), n_out * n_in, "linear: weight size");
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            affine_row(
                xv.row(r),
                wv.data(),
                bv.data(),
                &mut out[r * n_out..(r + 1) * n_out],
            );
        }
        self.push(Tensor::matrix(rows, n_out, out), Op::Linear, vec![x, w, b])
    }

    /// Affine layer whose weights live in a flat vector (one row per sample,
    /// or a single shared row). The layer occupies `n_out * n_in + n_out`
    /// entries starting at `offset`: weights row-major, then bias.
    pub fn linear_ext(
        &mut self,
        x: NodeId,
        flat: NodeId,
        offset: usize,
        n_in: usize,
        n_out: usize,
    ) -> NodeId {
        let (xv, fv) = (self.value(x), self.value(flat));
        let rows = xv.rows();
        assert_eq!(xv.cols(), n_in, "linear_ext: input width");
        let p = fv.cols();
        assert!(offset + n_out * n_in + n_out <= p, "linear_ext: flat too short");
        assert!(fv.rows() == 1 || fv.rows() == rows, "linear_ext: weight rows");
        let shared = fv.rows() == 1;
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            let wr = if shared { 0 } else { r };
            let base = wr * p + offset;
            let w = &fv.data()[base..base + n_out * n_in];
            let b = &fv.data()[base + n_out * n_in..base + n_out * n_in + n_out];
            affine_row(xv.row(r), w, b, &mut out[r * n_out..(r + 1) * n_out]);
        }
        self.push(
            Tensor::matrix(rows, n_out, out),
            Op::LinearExt {
                offset,
                n_in,
                n_out,
            },
            vec![x, flat],
        )
    }

    fn zip_map(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise: length mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(t, op, vec![a, b])
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(t, op, vec![a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_map(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_map(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_map(a, b, Op::Mul, |x, y| x * y)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        self.map(a, Op::Affine { scale }, |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> NodeId {
        self.affine(a, scale, 0.0)
    }

    pub fn leaky_relu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        self.map(a, Op::LeakyRelu(alpha), |x| if x > 0.0 { x } else { alpha * x })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid, sigmoid)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Square, |x| x * x)
    }

    /// Concatenate along the last dimension; all inputs need equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat: no inputs");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let v = self.value(*p);
                assert_eq!(v.rows(), rows, "concat: row mismatch");
                v.cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::Concat, parts.to_vec())
    }

    /// Columns `start..start + len` of every row.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice out of range");
        let rows = av.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(Tensor::matrix(rows, len, out), Op::Slice { start }, vec![a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean, vec![a])
    }

    /// Euclidean norm of every row, shape `[rows, 1]`.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let out = (0..av.rows())
            .map(|r| av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect::<Vec<_>>();
        let rows = out.len();
        self.push(Tensor::matrix(rows, 1, out), Op::RowNorm, vec![a])
    }

    /// Mean squared error between two same-shaped nodes.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        let d = self.sub(pred, target);
        let sq = self.square(d);
        self.mean(sq)
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId, geom: ConvGeom) -> NodeId {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        assert_eq!(xv.cols(), geom.in_len(), "conv2d: input size");
        assert_eq!(kv.len(), geom.kernel_len(), "conv2d: kernel size");
        assert_eq!(bv.len(), geom.c_out, "conv2d: bias size");
        let rows = xv.rows();
        let mut out = vec![0.0; rows * geom.out_len()];
        for r in 0..rows {
            conv_forward_row(
                xv.row(r),
                kv.data(),
                bv.data(),
                geom,
                &mut out[r * geom.out_len()..(r + 1) * geom.out_len()],
            );
        }
        self.push(
            Tensor::matrix(rows, geom.out_len(), out),
            Op::Conv2d(geom),
            vec![x, kernel, bias],
        )
    }

    /// 2x2 max-pool with stride 2 over `[rows, c * h * w]`; `h` and `w` must be even.
    pub fn max_pool2(&mut self, x: NodeId, c: usize, h: usize, w: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.cols(), c * h * w, "max_pool2: input size");
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2: odd size");
        let (ho, wo) = (h / 2, w / 2);
        let rows = xv.rows();
        let out_len = c * ho * wo;
        let mut out = vec![0.0; rows * out_len];
        let mut argmax = vec![0usize; rows * out_len];
        for r in 0..rows {
            let xr = xv.row(r);
            for ch in 0..c {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = ch * h * w + (2 * i + di) * w + 2 * j + dj;
                            if best == usize::MAX || xr[idx] > best_v {
                                best = idx;
                                best_v = xr[idx];
                            }
                        }
                        let o = r * out_len + ch * ho * wo + i * wo + j;
                        out[o] = best_v;
                        argmax[o] = best;
                    }
                }
            }
        }
        self.push(
            Tensor::matrix(rows, out_len, out),
            Op::MaxPool2 { argmax },
            vec![x],
        )
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse pass from a single-element node, seeded with 1.
    pub fn backward(&mut self, out: NodeId) {
        assert_eq!(self.value(out).len(), 1, "backward: output must be scalar");
        self.backward_with(out, Tensor::new(self.value(out).shape().to_vec(), vec![1.0]).unwrap());
    }

    /// Reverse pass seeded with an arbitrary upstream gradient. Gradients
    /// accumulate into whatever is already stored.
    pub fn backward_with(&mut self, out: NodeId, seed: Tensor) {
        assert_eq!(seed.len(), self.value(out).len(), "backward: seed shape");
        self.accumulate(out, |g| {
            for (a, b) in g.iter_mut().zip(seed.data()) {
                *a += b;
            }
        });
        for i in (0..=out.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
    }

    fn accumulate(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[id.0];
        let g = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        f(g.data_mut());
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let parents = self.nodes[i].parents.clone();
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let gd = g.data();
        match &op {
            Op::Leaf => {}
            Op::Linear => {
                let (x, w, b) = (parents[0], parents[1], parents[2]);
                let xv = self.nodes[x.0].value.clone();
                let wv = self.nodes[w.0].value.clone();
                let (rows, n_in) = (xv.rows(), xv.cols());
                let n_out = wv.len() / n_in.max(1);
                self.accumulate(x, |gx| {
                    for r in 0..rows {
                        for o in 0..n_out {
                            let go = gd[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &wv.data()[o * n_in..(o + 1) * n_in];
                            for (gxi, wi) in gx[r * n_in..(r + 1) * n_in].iter_mut().zip(wr) {
                                *gxi += go * wi;
                            }
                        }
                    }
                });
                self.accumulate(w, |gw| {
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for o in 0..n_out {
                            let go = gd[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                                *gwi += go * xi;
                            }
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    for r in 0..rows {
                        for o in 0..n_out {
                            gb[o] += gd[r * n_out + o];
                        }
                    }
                });
            }
            Op::LinearExt {
                offset,
                n_in,
                n_out,
            } => {
                let (x, flat) = (parents[0], parents[1]);
                let (offset, n_in, n_out) = (*offset, *n_in, *n_out);
                let xv = self.nodes[x.0].value.clone();
                let fv = self.nodes[flat.0].value.clone();
                let rows = xv.rows();
                let p = fv.cols();
                let shared = fv.rows() == 1;
                self.accumulate(x, |gx| {
                    for r in 0..rows {
                        let base = if shared { 0 } else { r * p } + offset;
                        for o in 0..n_out {
                            let go = gd[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &fv.data()[base + o * n_in..base + (o + 1) * n_in];
                            for (gxi, wi) in gx[r * n_in..(r + 1) * n_in].iter_mut().zip(wr) {
                                *gxi += go * wi;
                            }
                        }
                    }
                });
                self.accumulate(flat, |gf| {
                    for r in 0..rows {
                        let base = if shared { 0 } else { r * p } + offset;
                        let xr = xv.row(r);
                        for o in 0..n_out {
                            let go = gd[r * n_out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let gw = &mut gf[base + o * n_in..base + (o + 1) * n_in];
                            for (gwi, xi) in gw.iter_mut().zip(xr) {
                                *gwi += go * xi;
                            }
                            gf[base + n_out * n_in + o] += go;
                        }
                    }
                });
            }
            Op::Add => {
                for p in [parents[0], parents[1]] {
                    self.accumulate(p, |ga| add_into(ga, gd));
                }
            }
            Op::Sub => {
                self.accumulate(parents[0], |ga| add_into(ga, gd));
                self.accumulate(parents[1], |gb| {
                    for (a, b) in gb.iter_mut().zip(gd) {
                        *a -= b;
                    }
                });
            }
            Op::Mul => {
                let (a, b) = (parents[0], parents[1]);
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(gd).zip(bv.data()) {
                        *x += gi * bi;
                    }
                });
                self.accumulate(b, |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(gd).zip(av.data()) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Affine { scale } => {
                let s = *scale;
                self.accumulate(parents[0], |ga| {
                    for (x, gi) in ga.iter_mut().zip(gd) {
                        *x += s * gi;
                    }
                });
            }
            Op::LeakyRelu(alpha) => {
                let alpha = *alpha;
                let xv = self.nodes[parents[0].0].value.clone();
                self.accumulate(parents[0], |ga| {
                    for ((x, gi), xi) in ga.iter_mut().zip(gd).zip(xv.data()) {
                        *x += if *xi > 0.0 { *gi } else { alpha * gi };
                    }
                });
            }
            Op::Tanh => {
                let yv = self.nodes[i].value.clone();
                self.accumulate(parents[0], |ga| {
                    for ((x, gi), yi) in ga.iter_mut().zip(gd).zip(yv.data()) {
                        *x += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Sigmoid => {
                let yv = self.nodes[i].value.clone();
                self.accumulate(parents[0], |ga| {
                    for ((x, gi), yi) in ga.iter_mut().zip(gd).zip(yv.data()) {
                        *x += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Square => {
                let xv = self.nodes[parents[0].0].value.clone();
                self.accumulate(parents[0], |ga| {
                    for ((x, gi), xi) in ga.iter_mut().zip(gd).zip(xv.data()) {
                        *x += 2.0 * gi * xi;
                    }
                });
            }
            Op::Concat => {
                let total = g.cols();
                let rows = g.rows();
                let mut start = 0;
                for p in parents.iter().copied() {
                    let w = self.nodes[p.0].value.cols();
                    self.accumulate(p, |ga| {
                        for r in 0..rows {
                            let src = &gd[r * total + start..r * total + start + w];
                            add_into(&mut ga[r * w..(r + 1) * w], src);
                        }
                    });
                    start += w;
                }
            }
            Op::Slice { start } => {
                let start = *start;
                let len = g.cols();
                let rows = g.rows();
                let src_cols = self.nodes[parents[0].0].value.cols();
                self.accumulate(parents[0], |ga| {
                    for r in 0..rows {
                        let dst = &mut ga[r * src_cols + start..r * src_cols + start + len];
                        add_into(dst, &gd[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Sum => {
                let s = gd[0];
                self.accumulate(parents[0], |ga| ga.iter_mut().for_each(|x| *x += s));
            }
            Op::Mean => {
                let n = self.nodes[parents[0].0].value.len() as f64;
                let s = gd[0] / n;
                self.accumulate(parents[0], |ga| ga.iter_mut().for_each(|x| *x += s));
            }
            Op::RowNorm => {
                let xv = self.nodes[parents[0].0].value.clone();
                let yv = self.nodes[i].value.clone();
                let cols = xv.cols();
                self.accumulate(parents[0], |ga| {
                    for r in 0..xv.rows() {
                        let y = yv.data()[r];
                        if y == 0.0 {
                            continue;
                        }
                        let s = gd[r] / y;
                        for (x, xi) in ga[r * cols..(r + 1) * cols].iter_mut().zip(xv.row(r)) {
                            *x += s * xi;
                        }
                    }
                });
            }
            Op::Conv2d(geom) => {
                let geom = *geom;
                let (x, k, b) = (parents[0], parents[1], parents[2]);
                let xv = self.nodes[x.0].value.clone();
                let kv = self.nodes[k.0].value.clone();
                let rows = xv.rows();
                let ol = geom.out_len();
                let il = geom.in_len();
                self.accumulate(x, |gx| {
                    for r in 0..rows {
                        conv_backward_input(
                            &gd[r * ol..(r + 1) * ol],
                            kv.data(),
                            geom,
                            &mut gx[r * il..(r + 1) * il],
                        );
                    }
                });
                self.accumulate(k, |gk| {
                    for r in 0..rows {
                        conv_backward_kernel(&gd[r * ol..(r + 1) * ol], xv.row(r), geom, gk);
                    }
                });
                self.accumulate(b, |gb| {
                    let hw = geom.h * geom.w;
                    for r in 0..rows {
                        for co in 0..geom.c_out {
                            let s: f64 = gd[r * ol + co * hw..r * ol + (co + 1) * hw].iter().sum();
                            gb[co] += s;
                        }
                    }
                });
            }
            Op::MaxPool2 { argmax } => {
                let out_len = g.cols();
                let in_len = self.nodes[parents[0].0].value.cols();
                self.accumulate(parents[0], |ga| {
                    for (o, (gi, src)) in gd.iter().zip(argmax).enumerate() {
                        let r = o / out_len;
                        ga[r * in_len + src] += gi;
                    }
                });
            }
        }
        self.nodes[i].op = op;
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

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

#[inline]
fn conv_forward_row(x: &[f64], k: &[f64], b: &[f64], g: ConvGeom, out: &mut [f64]) {
    let pad = (g.k / 2) as isize;
    let (h, w, ks) = (g.h as isize, g.w as isize, g.k);
    for co in 0..g.c_out {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ci in 0..g.c_in {
                    let kbase = (co * g.c_in + ci) * ks * ks;
                    let xbase = ci * g.h * g.w;
                    for di in 0..ks {
                        let yi = i + di as isize - pad;
                        if yi < 0 || yi >= h {
                            continue;
                        }
                        for dj in 0..ks {
                            let xj = j + dj as isize - pad;
                            if xj < 0 || xj >= w {
                                continue;
                            }
                            acc += k[kbase + di * ks + dj] * x[xbase + (yi * w + xj) as usize];
                        }
                    }
                }
                out[co * g.h * g.w + (i * w + j) as usize] = acc + b[co];
            }
        }
    }
}

fn conv_backward_input(gy: &[f64], k: &[f64], g: ConvGeom, gx: &mut [f64]) {
    let pad = (g.k / 2) as isize;
    let (h, w, ks) = (g.h as isize, g.w as isize, g.k);
    for co in 0..g.c_out {
        for i in 0..h {
            for j in 0..w {
                let go = gy[co * g.h * g.w + (i * w + j) as usize];
                if go == 0.0 {
                    continue;
                }
                for ci in 0..g.c_in {
                    let kbase = (co * g.c_in + ci) * ks * ks;
                    let xbase = ci * g.h * g.w;
                    for di in 0..ks {
                        let yi = i + di as isize - pad;
                        if yi < 0 || yi >= h {
                            continue;
                        }
                        for dj in 0..ks {
                            let xj = j + dj as isize - pad;
                            if xj < 0 || xj >= w {
                                continue;
                            }
                            gx[xbase + (yi * w + xj) as usize] += go * k[kbase + di * ks + dj];
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_kernel(gy: &[f64], x: &[f64], g: ConvGeom, gk: &mut [f64]) {
    let pad = (g.k / 2) as isize;
    let (h, w, ks) = (g.h as isize, g.w as isize, g.k);
    for co in 0..g.c_out {
        for i in 0..h {
            for j in 0..w {
                let go = gy[co * g.h * g.w + (i * w + j) as usize];
                if go == 0.0 {
                    continue;
                }
                for ci in 0..g.c_in {
                    let kbase = (co * g.c_in + ci) * ks * ks;
                    let xbase = ci * g.h * g.w;
                    for di in 0..ks {
                        let yi = i + di as isize - pad;
                        if yi < 0 || yi >= h {
                            continue;
                        }
                        for dj in 0..ks {
                            let xj = j + dj as isize - pad;
                            if xj < 0 || xj >= w {
                                continue;
                            }
                            gk[kbase + di * ks + dj] += go * x[xbase + (yi * w + xj) as usize];
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

    #[test]
    fn linear_and_ext_agree_bitwise() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.5, 2.5, -3.5]));
        let w = g.leaf(Tensor::matrix(2, 3, vec![0.7, -1.1, 0.13, 2.0, 0.5, -0.25]));
        let b = g.leaf(Tensor::vector(vec![0.01, -0.02]));
        let y1 = g.linear(x, w, b);
        let mut flat = g.value(w).data().to_vec();
        flat.extend_from_slice(g.value(b).data());
        let f = g.leaf(Tensor::matrix(1, 8, flat));
        let y2 = g.linear_ext(x, f, 0, 3, 2);
        assert_eq!(g.value(y1).data(), g.value(y2).data());
    }

    #[test]
    fn backward_accumulates_through_shared_node() {
        // y = x * x  =>  dy/dx = 2x
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        g.backward(y);
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 4, vec![1.0, 4.0, 2.0, 3.0]));
        let p = g.max_pool2(x, 1, 2, 2);
        assert_eq!(g.value(p).data(), &[4.0]);
        let s = g.sum(p);
        g.backward(s);
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn row_norm_gradient_is_zero_at_origin() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, 4.0]));
        let n = g.row_norm(x);
        assert_eq!(g.value(n).data(), &[0.0, 5.0]);
        let s = g.sum(n);
        g.backward(s);
        let gx = g.grad(x).unwrap().data();
        assert_eq!(&gx[..2], &[0.0, 0.0]);
        assert!((gx[2] - 0.6).abs() < 1e-15 && (gx[3] - 0.8).abs() < 1e-15);
    }
}
