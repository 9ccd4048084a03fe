use std::collections::BTreeMap;

use super::{GradError, Parameter, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Left-pads with `(k - 1) * dilation` zeros; output frame `t` only reads
    /// input frames `<= t * stride`.
    Causal,
    /// No padding.
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        dilation: usize,
        pad: usize,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MeanTime(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Var,
        mask: Option<Vec<bool>>,
        count: usize,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    RepeatTime {
        x: Var,
        factor: usize,
    },
    BroadcastTime(Var),
    Concat(Var, Var),
    SliceChannels {
        x: Var,
        start: usize,
    },
    StraightThrough(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of differentiable operations.
///
/// A tape is a single-threaded unit of work. Parameters are bound by name with
/// [`Tape::param`]; binding the same name twice returns the same [`Var`], so
/// gradients from repeated uses accumulate in one place.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Var>,
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(GradError::Shape(format!("{what}: expected rank 2, got {s:?}"))),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Unnamed leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a trainable parameter, reusing an earlier binding of the same name.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let v = self.variable(p.value.clone());
        self.params.insert(p.name.clone(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Parameter bindings in name order.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of the last `backward` call, or zeros when `v` was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        dilation: usize,
        mode: ConvMode,
    ) -> Result<Var> {
        assert!(stride >= 1 && dilation >= 1);
        let (ci, t) = dims2(self.value(x), "conv1d input")?;
        let (co, wci, k) = match self.shape(w) {
            [a, b, c] => (*a, *b, *c),
            s => return Err(GradError::Shape(format!("conv1d weights: expected rank 3, got {s:?}"))),
        };
        if wci != ci {
            return Err(GradError::Shape(format!(
                "conv1d: input has {ci} channels, weights expect {wci}"
            )));
        }
        if self.shape(b) != [co] {
            return Err(GradError::Shape(format!("conv1d bias: expected [{co}], got {:?}", self.shape(b))));
        }
        let span = (k - 1) * dilation;
        let (pad, t_out) = match mode {
            ConvMode::Causal => {
                if t % stride != 0 {
                    return Err(GradError::Stride { stride, len: t });
                }
                (span, t / stride)
            }
            ConvMode::Valid => {
                if t < span + 1 {
                    return Err(GradError::TooShort { need: span + 1, got: t });
                }
                (0, (t - span - 1) / stride + 1)
            }
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; co * t_out];
        for o in 0..co {
            let row = &mut out[o * t_out..(o + 1) * t_out];
            row.fill(bv[o]);
            for i in 0..ci {
                let xr = &xv[i * t..(i + 1) * t];
                for j in 0..k {
                    let wgt = wv[(o * ci + i) * k + j];
                    let off = (j * dilation) as isize - pad as isize;
                    let (lo, hi) = tap_range(off, stride, t, t_out);
                    if stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (r, xval) in row[lo..hi].iter_mut().zip(&xr[start..]) {
                            *r += wgt * xval;
                        }
                    } else {
                        for (tt, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *r += wgt * xr[((tt * stride) as isize + off) as usize];
                        }
                    }
                }
            }
        }
        let rg = self.needs(&[x, w, b]);
        let value = Tensor::new(vec![co, t_out], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, stride, dilation, pad }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("unary shape");
        let rg = self.needs(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(GradError::Shape(format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// `[C, T] -> [C]`, summing frames in ascending order.
    pub fn mean_over_time(&mut self, x: Var) -> Result<Var> {
        let (c, t) = dims2(self.value(x), "mean_over_time")?;
        if t == 0 {
            return Err(GradError::EmptyTime);
        }
        let xv = self.value(x).data();
        let data = (0..c)
            .map(|ch| xv[ch * t..(ch + 1) * t].iter().fold(0.0, |acc, v| acc + v) / t as f64)
            .collect();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![c], data)?, Op::MeanTime(x), rg))
    }

    /// Mean over time of `-log softmax(logits[:, t])[targets[t]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (k, t) = dims2(self.value(logits), "softmax_cross_entropy")?;
        if targets.len() != t {
            return Err(GradError::Shape(format!("{} targets for {t} frames", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= k) {
            return Err(GradError::TargetOutOfRange { target: bad, classes: k });
        }
        let lv = self.value(logits).data();
        let (probs, lse) = softmax_columns(lv, k, t);
        let mut total = 0.0;
        for (tt, &c) in targets.iter().enumerate() {
            total += lse[tt] - lv[c * t + tt];
        }
        let loss = if t == 0 { 0.0 } else { total / t as f64 };
        let rg = self.needs(&[logits]);
        let op = Op::SoftmaxCe { logits, targets: targets.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Mean squared error over positions whose time index is unmasked.
    ///
    /// The mask indexes the last dimension. An all-false mask yields exactly 0.
    pub fn mse(&mut self, pred: Var, target: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(GradError::Shape(format!("mse: {:?} vs {:?}", pv.shape(), tv.shape())));
        }
        let time = *pv.shape().last().expect("rank >= 1");
        if let Some(m) = mask {
            if m.len() != time {
                return Err(GradError::Shape(format!("mask length {} for time {time}", m.len())));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i % time]);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, (a, b)) in pv.data().iter().zip(tv.data()).enumerate() {
            if keep(i) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { sum / count as f64 };
        let rg = self.needs(&[pred, target]);
        let op = Op::Mse { pred, target, mask: mask.map(<[bool]>::to_vec), count };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Looks up rows of a `[rows, C]` table, producing `[C, indices.len()]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, c) = dims2(self.value(table), "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(GradError::IndexOutOfRange { index: bad, rows });
        }
        let tv = self.value(table).data();
        let t = indices.len();
        let mut out = vec![0.0; c * t];
        for (tt, &r) in indices.iter().enumerate() {
            for ch in 0..c {
                out[ch * t + tt] = tv[r * c + ch];
            }
        }
        let rg = self.needs(&[table]);
        let op = Op::GatherRows { table, indices: indices.to_vec() };
        Ok(self.push(Tensor::new(vec![c, t], out)?, op, rg))
    }

    /// Nearest-neighbour upsampling along time: each frame repeated `factor` times.
    pub fn repeat_time(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (c, t) = dims2(self.value(x), "repeat_time")?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * t * factor);
        for ch in 0..c {
            for &v in &xv[ch * t..(ch + 1) * t] {
                out.extend(std::iter::repeat_n(v, factor));
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![c, t * factor], out)?, Op::RepeatTime { x, factor }, rg))
    }

    /// `[C] -> [C, len]`.
    pub fn broadcast_time(&mut self, x: Var, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 1 {
            return Err(GradError::Shape(format!("broadcast_time: expected rank 1, got {:?}", xv.shape())));
        }
        let out: Vec<f64> = xv.data().iter().flat_map(|&v| std::iter::repeat_n(v, len)).collect();
        let c = xv.len();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![c, len], out)?, Op::BroadcastTime(x), rg))
    }

    /// Channel concatenation of `[Ca, T]` and `[Cb, T]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ta) = dims2(self.value(a), "concat_channels")?;
        let (cb, tb) = dims2(self.value(b), "concat_channels")?;
        if ta != tb {
            return Err(GradError::Shape(format!("concat_channels: time {ta} vs {tb}")));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![ca + cb, ta], out)?, Op::Concat(a, b), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, t) = dims2(self.value(x), "slice_channels")?;
        if start + len > c {
            return Err(GradError::Shape(format!("slice {start}..{} of {c} channels", start + len)));
        }
        let out = self.value(x).data()[start * t..(start + len) * t].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![len, t], out)?, Op::SliceChannels { x, start }, rg))
    }

    /// Forward value of `quantized`, backward copies the gradient to `z` unchanged.
    pub fn straight_through(&mut self, z: Var, quantized: &Tensor) -> Result<Var> {
        if self.shape(z) != quantized.shape() {
            return Err(GradError::Shape(format!(
                "straight_through: {:?} vs {:?}",
                self.shape(z),
                quantized.shape()
            )));
        }
        let rg = self.needs(&[z]);
        Ok(self.push(quantized.clone(), Op::StraightThrough(z), rg))
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Reverse pass from a single-element `loss`, replacing earlier gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(GradError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, stride, dilation, pad } => {
                let (stride, dilation, pad) = (*stride, *dilation, *pad);
                let xv = self.value(*x);
                let (ci, t) = (xv.shape()[0], xv.shape()[1]);
                let wv = self.value(*w);
                let (co, k) = (wv.shape()[0], wv.shape()[2]);
                let t_out = node.value.shape()[1];
                let (xd, wd) = (xv.data(), wv.data());
                send(*b, &mut |gb| {
                    for o in 0..co {
                        gb[o] += g[o * t_out..(o + 1) * t_out].iter().fold(0.0, |a, v| a + v);
                    }
                });
                send(*w, &mut |gw| {
                    for o in 0..co {
                        let grow = &g[o * t_out..(o + 1) * t_out];
                        for i in 0..ci {
                            let xr = &xd[i * t..(i + 1) * t];
                            for j in 0..k {
                                let off = (j * dilation) as isize - pad as isize;
                                let (lo, hi) = tap_range(off, stride, t, t_out);
                                let mut acc = 0.0;
                                for tt in lo..hi {
                                    acc += grow[tt] * xr[((tt * stride) as isize + off) as usize];
                                }
                                gw[(o * ci + i) * k + j] += acc;
                            }
                        }
                    }
                });
                send(*x, &mut |gx| {
                    for o in 0..co {
                        let grow = &g[o * t_out..(o + 1) * t_out];
                        for i in 0..ci {
                            let gxr = &mut gx[i * t..(i + 1) * t];
                            for j in 0..k {
                                let wgt = wd[(o * ci + i) * k + j];
                                let off = (j * dilation) as isize - pad as isize;
                                let (lo, hi) = tap_range(off, stride, t, t_out);
                                if stride == 1 {
                                    let start = (lo as isize + off) as usize;
                                    for (d, gv) in gxr[start..].iter_mut().zip(&grow[lo..hi]) {
                                        *d += wgt * gv;
                                    }
                                } else {
                                    for tt in lo..hi {
                                        gxr[((tt * stride) as isize + off) as usize] += wgt * grow[tt];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                send(*x, &mut |gx| {
                    for ((d, gv), xv) in gx.iter_mut().zip(g).zip(xd) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                send(*x, &mut |gx| {
                    for ((d, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                send(*x, &mut |gx| {
                    for ((d, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Add(a, b) => {
                send(*a, &mut |ga| add_into(ga, g));
                send(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |ga| add_into(ga, g));
                send(*b, &mut |gb| {
                    for (d, gv) in gb.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                send(*a, &mut |ga| {
                    for ((d, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *d += gv * bv;
                    }
                });
                send(*b, &mut |gb| {
                    for ((d, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *d += gv * av;
                    }
                });
            }
            Op::Scale(x, c) => {
                send(*x, &mut |gx| {
                    for (d, gv) in gx.iter_mut().zip(g) {
                        *d += c * gv;
                    }
                });
            }
            Op::MeanTime(x) => {
                let t = self.shape(*x)[1];
                send(*x, &mut |gx| {
                    for (ch, gv) in g.iter().enumerate() {
                        let share = gv / t as f64;
                        for d in &mut gx[ch * t..(ch + 1) * t] {
                            *d += share;
                        }
                    }
                });
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let t = targets.len();
                let scale = g[0] / t as f64;
                send(*logits, &mut |gl| {
                    for (d, p) in gl.iter_mut().zip(probs) {
                        *d += scale * p;
                    }
                    for (tt, &c) in targets.iter().enumerate() {
                        gl[c * t + tt] -= scale;
                    }
                });
            }
            Op::Mse { pred, target, mask, count } => {
                if *count == 0 {
                    return;
                }
                let (pd, td) = (self.value(*pred).data(), self.value(*target).data());
                let time = *self.shape(*pred).last().expect("rank >= 1");
                let scale = 2.0 * g[0] / *count as f64;
                let keep = |i: usize| mask.as_ref().is_none_or(|m| m[i % time]);
                send(*pred, &mut |gp| {
                    for (i, d) in gp.iter_mut().enumerate() {
                        if keep(i) {
                            *d += scale * (pd[i] - td[i]);
                        }
                    }
                });
                send(*target, &mut |gt| {
                    for (i, d) in gt.iter_mut().enumerate() {
                        if keep(i) {
                            *d -= scale * (pd[i] - td[i]);
                        }
                    }
                });
            }
            Op::GatherRows { table, indices } => {
                let c = self.shape(*table)[1];
                let t = indices.len();
                send(*table, &mut |gt| {
                    for (tt, &r) in indices.iter().enumerate() {
                        for ch in 0..c {
                            gt[r * c + ch] += g[ch * t + tt];
                        }
                    }
                });
            }
            Op::RepeatTime { x, factor } => {
                let factor = *factor;
                send(*x, &mut |gx| {
                    for (d, chunk) in gx.iter_mut().zip(g.chunks_exact(factor.max(1))) {
                        *d += chunk.iter().fold(0.0, |a, v| a + v);
                    }
                });
            }
            Op::BroadcastTime(x) => {
                let len = node.value.shape()[1];
                send(*x, &mut |gx| {
                    for (ch, d) in gx.iter_mut().enumerate() {
                        *d += g[ch * len..(ch + 1) * len].iter().fold(0.0, |a, v| a + v);
                    }
                });
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                send(*a, &mut |ga| add_into(ga, &g[..na]));
                send(*b, &mut |gb| add_into(gb, &g[na..]));
            }
            Op::SliceChannels { x, start } => {
                let t = node.value.shape()[1];
                let offset = start * t;
                send(*x, &mut |gx| add_into(&mut gx[offset..offset + g.len()], g));
            }
            Op::StraightThrough(z) | Op::Reshape(z) => {
                send(*z, &mut |gz| add_into(gz, g));
            }
        }
    }
}

/// Output frames `lo..hi` whose tap at input offset `t * stride + off` is in bounds.
fn tap_range(off: isize, stride: usize, t_in: usize, t_out: usize) -> (usize, usize) {
    let lo = if off < 0 { ((-off) as usize).div_ceil(stride) } else { 0 };
    let last = t_in as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last as usize / stride + 1).min(t_out) };
    (lo.min(hi), hi)
}

/// Column-wise softmax of a `[k, t]` block with max subtraction.
///
/// Returns the probabilities and the per-column log-sum-exp.
pub(crate) fn softmax_columns(logits: &[f64], k: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let mut max = vec![f64::NEG_INFINITY; t];
    for c in 0..k {
        for (m, v) in max.iter_mut().zip(&logits[c * t..(c + 1) * t]) {
            *m = m.max(*v);
        }
    }
    let mut probs = vec![0.0; k * t];
    let mut sum = vec![0.0; t];
    for c in 0..k {
        let row = &mut probs[c * t..(c + 1) * t];
        for (((p, v), m), s) in row.iter_mut().zip(&logits[c * t..(c + 1) * t]).zip(&max).zip(sum.iter_mut()) {
            *p = (v - m).exp();
            *s += *p;
        }
    }
    for c in 0..k {
        for (p, s) in probs[c * t..(c + 1) * t].iter_mut().zip(&sum) {
            *p /= s;
        }
    }
    let lse = max.iter().zip(&sum).map(|(m, s)| m + s.ln()).collect();
    (probs, lse)
}
