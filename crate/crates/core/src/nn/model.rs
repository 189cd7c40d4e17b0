//! Forward and reverse-mode passes of a stacked dense-block network.
//!
//! Parameters live in one flat vector in traversal order: stem kernel and
//! bias, then for every block its layers (kernel, bias) followed by the
//! transition (kernel, bias) when another block follows, then the head
//! weight (classes × C) and bias.
//!
//! Each block owns one activation buffer of its full output width. The block
//! input occupies the leading channels and every layer appends its growth
//! channels, so the concatenated input of layer `l` is always a channel
//! prefix of that buffer. In the backward pass gradients of that prefix are
//! accumulated from every consuming layer before they are propagated
//! further.

use rand::Rng;

use super::ops::{
    accumulate_bias_grad, add_bias, avg_pool2, avg_pool2_backward, col2im3_add, gemm, im2col3,
};
use super::tensor::Tensor;
use super::{NnError, Result};
use crate::arch::{count_parameters, NetworkSpec};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvSlot {
    pub out_c: usize,
    pub in_c: usize,
    pub ksize: usize,
    pub w: usize,
    pub b: usize,
}

impl ConvSlot {
    fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.ksize * self.ksize
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockPlan {
    pub total_c: usize,
    pub h: usize,
    pub w: usize,
    pub layers: Vec<ConvSlot>,
    pub transition: Option<ConvSlot>,
}

/// A network ready to run: the spec plus the parameter layout.
#[derive(Debug, Clone)]
pub struct Model {
    spec: NetworkSpec,
    stem: ConvSlot,
    blocks: Vec<BlockPlan>,
    head_w: usize,
    head_b: usize,
    final_c: usize,
    param_count: usize,
}

struct Layout {
    next: usize,
}

impl Layout {
    fn conv(&mut self, out_c: usize, in_c: usize, ksize: usize) -> ConvSlot {
        let w = self.next;
        let b = w + out_c * in_c * ksize * ksize;
        self.next = b + out_c;
        ConvSlot {
            out_c,
            in_c,
            ksize,
            w,
            b,
        }
    }
}

/// Activations kept for the backward pass.
struct Trace {
    blocks: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

impl Model {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let growth = spec.widened_block();
        let sizes = spec.spatial_sizes()?;
        let (img_c, _, _) = (spec.input_shape.0, spec.input_shape.1, spec.input_shape.2);
        let mut layout = Layout { next: 0 };
        let stem = layout.conv(spec.stem.out_channels, img_c, 3);
        let mut blocks = Vec::with_capacity(spec.deepen);
        let mut c = spec.stem.out_channels;
        for (i, &(h, w)) in sizes.iter().enumerate() {
            let mut layers = Vec::with_capacity(growth.len());
            for &g in growth.growth_rates() {
                layers.push(layout.conv(g, c, 3));
                c += g;
            }
            let transition = (i + 1 < sizes.len()).then(|| layout.conv(c, c, 1));
            blocks.push(BlockPlan {
                total_c: c,
                h,
                w,
                layers,
                transition,
            });
        }
        let head_w = layout.next;
        let head_b = head_w + spec.num_classes * c;
        let param_count = head_b + spec.num_classes;
        debug_assert_eq!(param_count, count_parameters(spec));
        Ok(Self {
            spec: spec.clone(),
            stem,
            blocks,
            head_w,
            head_b,
            final_c: c,
            param_count,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Channels produced by each block.
    pub fn block_channels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.total_c).collect()
    }

    /// Kaiming-uniform kernels scaled by fan-in, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count];
        let mut fill = |slot: &ConvSlot, p: &mut [f64]| {
            let fan_in = (slot.in_c * slot.ksize * slot.ksize) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for v in &mut p[slot.w..slot.w + slot.weight_len()] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        fill(&self.stem, &mut p);
        for block in &self.blocks {
            for layer in &block.layers {
                fill(layer, &mut p);
            }
            if let Some(t) = &block.transition {
                fill(t, &mut p);
            }
        }
        let bound = (1.0 / self.final_c as f64).sqrt();
        for v in &mut p[self.head_w..self.head_b] {
            *v = rng.gen_range(-bound..bound);
        }
        p
    }

    fn check_input(&self, params: &[f64], x: &Tensor) -> Result<()> {
        if params.len() != self.param_count {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count,
                params.len()
            )));
        }
        let chw = x.chw()?;
        let s = self.spec.input_shape;
        if chw != (s.0, s.1, s.2) {
            return Err(NnError::ShapeMismatch(format!(
                "input is {chw:?}, network expects {:?}",
                (s.0, s.1, s.2)
            )));
        }
        Ok(())
    }

    fn run_forward(&self, params: &[f64], x: &Tensor) -> Result<Trace> {
        self.check_input(params, x)?;
        let n = x.batch();
        let (img_c, h0, w0) = x.chw()?;
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(self.blocks.len());
        let mut cols = Vec::new();

        for (bi, plan) in self.blocks.iter().enumerate() {
            let hw = plan.h * plan.w;
            let stride = plan.total_c * hw;
            let mut buf = vec![0.0; n * stride];
            if bi == 0 {
                let s = &self.stem;
                cols.resize(img_c * 9 * hw, 0.0);
                for i in 0..n {
                    im2col3(x.sample(i), img_c, h0, w0, false, &mut cols);
                    let out = &mut buf[i * stride..i * stride + s.out_c * hw];
                    gemm(s.out_c, img_c * 9, hw, &params[s.w..s.b], false, &cols, false, 0.0, out);
                    add_bias(out, &params[s.b..s.b + s.out_c], hw);
                }
            } else {
                let prev_plan = &self.blocks[bi - 1];
                let t = prev_plan.transition.as_ref().expect("transition between blocks");
                let prev = &blocks[bi - 1];
                let (ph, pw) = (prev_plan.h, prev_plan.w);
                let phw = ph * pw;
                let mut tmp = vec![0.0; t.out_c * phw];
                for i in 0..n {
                    let src = &prev[i * prev_plan.total_c * phw..(i + 1) * prev_plan.total_c * phw];
                    gemm(t.out_c, t.in_c, phw, &params[t.w..t.b], false, src, false, 0.0, &mut tmp);
                    add_bias(&mut tmp, &params[t.b..t.b + t.out_c], phw);
                    avg_pool2(&tmp, t.out_c, ph, pw, &mut buf[i * stride..i * stride + t.out_c * hw]);
                }
            }
            for layer in &plan.layers {
                cols.resize(layer.in_c * 9 * hw, 0.0);
                for i in 0..n {
                    let sample = &mut buf[i * stride..(i + 1) * stride];
                    let (prefix, rest) = sample.split_at_mut(layer.in_c * hw);
                    im2col3(prefix, layer.in_c, plan.h, plan.w, true, &mut cols);
                    let out = &mut rest[..layer.out_c * hw];
                    gemm(
                        layer.out_c,
                        layer.in_c * 9,
                        hw,
                        &params[layer.w..layer.b],
                        false,
                        &cols,
                        false,
                        0.0,
                        out,
                    );
                    add_bias(out, &params[layer.b..layer.b + layer.out_c], hw);
                }
            }
            if !buf.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite(format!("activations of block {}", bi + 1)));
            }
            blocks.push(buf);
        }

        let last = self.blocks.last().expect("at least one block");
        let hw = last.h * last.w;
        let c = self.final_c;
        let buf = blocks.last().expect("at least one block");
        let mut pooled = vec![0.0; n * c];
        for (i, row) in pooled.chunks_exact_mut(c).enumerate() {
            let sample = &buf[i * c * hw..(i + 1) * c * hw];
            for (p, plane) in row.iter_mut().zip(sample.chunks_exact(hw)) {
                *p = plane.iter().sum::<f64>() / hw as f64;
            }
        }
        let k = self.spec.num_classes;
        let mut logits = vec![0.0; n * k];
        gemm(n, c, k, &pooled, false, &params[self.head_w..self.head_b], true, 0.0, &mut logits);
        for row in logits.chunks_exact_mut(k) {
            for (l, b) in row.iter_mut().zip(&params[self.head_b..]) {
                *l += b;
            }
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("logits".into()));
        }
        Ok(Trace {
            blocks,
            pooled,
            logits,
        })
    }

    /// Logits, shape (N, num_classes).
    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        let trace = self.run_forward(params, x)?;
        Tensor::new(vec![x.batch(), self.spec.num_classes], trace.logits)
    }

    /// Softmax cross-entropy of every sample.
    pub fn per_sample_losses(&self, params: &[f64], x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let trace = self.run_forward(params, x)?;
        let k = self.spec.num_classes;
        self.check_labels(x, labels)?;
        Ok(trace
            .logits
            .chunks_exact(k)
            .zip(labels)
            .map(|(row, &y)| cross_entropy(row, y).0)
            .collect())
    }

    fn check_labels(&self, x: &Tensor, labels: &[usize]) -> Result<()> {
        if labels.len() != x.batch() {
            return Err(NnError::ShapeMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                x.batch()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.spec.num_classes) {
            return Err(NnError::ShapeMismatch(format!(
                "label {bad} out of range for {} classes",
                self.spec.num_classes
            )));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_labels(x, labels)?;
        let trace = self.run_forward(params, x)?;
        let n = x.batch();
        let k = self.spec.num_classes;
        let mut grad = vec![0.0; self.param_count];

        let mut loss = 0.0;
        let mut dlogits = vec![0.0; n * k];
        for ((row, drow), &y) in trace.logits.chunks_exact(k).zip(dlogits.chunks_exact_mut(k)).zip(labels) {
            let (l, probs) = cross_entropy(row, y);
            loss += l;
            for (d, p) in drow.iter_mut().zip(probs) {
                *d = p / n as f64;
            }
            drow[y] -= 1.0 / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss);
        }

        // head
        let c = self.final_c;
        let (gw, rest) = grad[self.head_w..].split_at_mut(self.head_b - self.head_w);
        gemm(k, n, c, &dlogits, true, &trace.pooled, false, 1.0, gw);
        for drow in dlogits.chunks_exact(k) {
            for (b, d) in rest.iter_mut().zip(drow) {
                *b += d;
            }
        }
        let mut dpooled = vec![0.0; n * c];
        gemm(n, k, c, &dlogits, false, &params[self.head_w..self.head_b], false, 0.0, &mut dpooled);

        let last = self.blocks.last().expect("at least one block");
        let hw = last.h * last.w;
        let mut dbuf = vec![0.0; n * c * hw];
        for (i, row) in dpooled.chunks_exact(c).enumerate() {
            for (ch, &d) in row.iter().enumerate() {
                dbuf[(i * c + ch) * hw..(i * c + ch + 1) * hw].fill(d / hw as f64);
            }
        }

        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        let mut drelu = Vec::new();
        for bi in (0..self.blocks.len()).rev() {
            let plan = &self.blocks[bi];
            let hw = plan.h * plan.w;
            let stride = plan.total_c * hw;
            let buf = &trace.blocks[bi];
            for layer in plan.layers.iter().rev() {
                let kk = layer.in_c * 9;
                cols.resize(kk * hw, 0.0);
                dcols.resize(kk * hw, 0.0);
                drelu.resize(layer.in_c * hw, 0.0);
                let (gk, gb) = grad[layer.w..layer.b + layer.out_c].split_at_mut(layer.b - layer.w);
                for i in 0..n {
                    let prefix = &buf[i * stride..i * stride + layer.in_c * hw];
                    let dsample = &mut dbuf[i * stride..(i + 1) * stride];
                    let (dprefix, drest) = dsample.split_at_mut(layer.in_c * hw);
                    let dout = &drest[..layer.out_c * hw];
                    accumulate_bias_grad(dout, gb, hw);
                    im2col3(prefix, layer.in_c, plan.h, plan.w, true, &mut cols);
                    gemm(layer.out_c, hw, kk, dout, false, &cols, true, 1.0, gk);
                    gemm(kk, layer.out_c, hw, &params[layer.w..layer.b], true, dout, false, 0.0, &mut dcols);
                    let scratch = &mut drelu[..layer.in_c * hw];
                    scratch.fill(0.0);
                    col2im3_add(&dcols, layer.in_c, plan.h, plan.w, scratch);
                    for ((d, &g), &z) in dprefix.iter_mut().zip(scratch.iter()).zip(prefix) {
                        if z > 0.0 {
                            *d += g;
                        }
                    }
                }
            }

            if bi == 0 {
                let s = &self.stem;
                let (img_c, h0, w0) = x.chw()?;
                cols.resize(img_c * 9 * hw, 0.0);
                let (gk, gb) = grad[s.w..s.b + s.out_c].split_at_mut(s.b - s.w);
                for i in 0..n {
                    let dout = &dbuf[i * stride..i * stride + s.out_c * hw];
                    accumulate_bias_grad(dout, gb, hw);
                    im2col3(x.sample(i), img_c, h0, w0, false, &mut cols);
                    gemm(s.out_c, hw, img_c * 9, dout, false, &cols, true, 1.0, gk);
                }
            } else {
                let prev_plan = &self.blocks[bi - 1];
                let t = prev_plan.transition.as_ref().expect("transition between blocks");
                let (ph, pw) = (prev_plan.h, prev_plan.w);
                let phw = ph * pw;
                let pstride = prev_plan.total_c * phw;
                let prev = &trace.blocks[bi - 1];
                let mut dprev = vec![0.0; n * pstride];
                let mut dt = vec![0.0; t.out_c * phw];
                let (gk, gb) = grad[t.w..t.b + t.out_c].split_at_mut(t.b - t.w);
                for i in 0..n {
                    let dpool = &dbuf[i * stride..i * stride + t.out_c * hw];
                    avg_pool2_backward(dpool, t.out_c, ph, pw, &mut dt);
                    accumulate_bias_grad(&dt, gb, phw);
                    let src = &prev[i * pstride..(i + 1) * pstride];
                    gemm(t.out_c, phw, t.in_c, &dt, false, src, true, 1.0, gk);
                    gemm(
                        t.in_c,
                        t.out_c,
                        phw,
                        &params[t.w..t.b],
                        true,
                        &dt,
                        false,
                        0.0,
                        &mut dprev[i * pstride..(i + 1) * pstride],
                    );
                }
                dbuf = dprev;
            }
        }
        Ok((loss, grad))
    }

    /// Predicted class per sample; ties go to the lowest index.
    pub fn predict(&self, params: &[f64], x: &Tensor) -> Result<Vec<usize>> {
        let trace = self.run_forward(params, x)?;
        Ok(trace
            .logits
            .chunks_exact(self.spec.num_classes)
            .map(argmax)
            .collect())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Loss and softmax probabilities for one row of logits.
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

pub fn forward(spec: &NetworkSpec, params: &[f64], x: &Tensor) -> Result<Tensor> {
    Model::new(spec)?.forward(params, x)
}

pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &[f64],
    x: &Tensor,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    Model::new(spec)?.loss_and_grad(params, x, labels)
}
