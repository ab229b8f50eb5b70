//! Small encoder-decoder segmentation network with exact hand-derived
//! gradients, an SGD-with-momentum optimizer, and EMA teacher updates.
//!
//! Architecture: `stages` encoder blocks of two 3x3 convs + leaky ReLU with
//! 2x average-pool downsampling, a bottleneck, mirrored decoder blocks with
//! nearest-neighbor upsampling and skip concatenation, and a final 1x1 conv
//! into a per-pixel softmax. Width starts at `base_width` and doubles per
//! stage. Everything runs in f64 on plain slices.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    pub stages: usize,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { in_channels: 1, num_classes: 2, base_width: 8, stages: 3, leaky_slope: 0.01 }
    }
}

impl ArchConfig {
    fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// (in_ch, out_ch, ksize) for every conv in storage order.
    fn conv_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut plan = Vec::new();
        let mut prev = self.in_channels;
        for s in 0..self.stages {
            plan.push((prev, self.width(s), 3));
            plan.push((self.width(s), self.width(s), 3));
            prev = self.width(s);
        }
        plan.push((prev, self.width(self.stages), 3));
        plan.push((self.width(self.stages), self.width(self.stages), 3));
        for s in (0..self.stages).rev() {
            let up = self.width(s + 1);
            plan.push((up + self.width(s), self.width(s), 3));
            plan.push((self.width(s), self.width(s), 3));
        }
        plan.push((self.width(0), self.num_classes, 1));
        plan
    }
}

/// One convolution's parameters; weight layout is [out][ky][kx][in],
/// matching the channel-last activation layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
}

/// Full parameter set of one network instance. `version` bumps on every
/// mutation so stale activation caches are rejected in backward.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub arch: ArchConfig,
    convs: Vec<Conv2d>,
    version: u64,
}

/// Gradients (or momentum buffers) shaped exactly like the parameters.
#[derive(Clone, Debug)]
pub struct GradBlocks {
    pub blocks: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GradBlocks {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self {
            blocks: params
                .convs
                .iter()
                .map(|c| (vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &GradBlocks, scale: f64) {
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            for (d, s) in dst.0.iter_mut().zip(&src.0) {
                *d += scale * s;
            }
            for (d, s) in dst.1.iter_mut().zip(&src.1) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.blocks.iter_mut() {
            for v in w.iter_mut() {
                *v *= factor;
            }
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// SGD-with-momentum state: velocity buffers plus hyperparameters.
#[derive(Clone, Debug)]
pub struct OptState {
    pub velocity: GradBlocks,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptState {
    pub fn new(params: &NetParams, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { velocity: GradBlocks::zeros_like(params), lr, momentum, weight_decay }
    }
}

/// Activations retained by forward for the matching backward pass.
pub struct ForwardCache {
    version: u64,
    conv_inputs: Vec<Grid>,
    preacts: Vec<Option<Grid>>,
    prob: Grid,
}

impl ForwardCache {
    pub fn prob(&self) -> &Grid {
        &self.prob
    }
}

fn conv_forward(conv: &Conv2d, input: &Grid) -> Grid {
    debug_assert_eq!(input.channels(), conv.in_ch);
    let (h, w, ic) = (input.height(), input.width(), input.channels());
    let k = conv.ksize;
    let pad = k / 2;
    let oc_n = conv.out_ch;
    let mut out = Grid::zeros(h, w, oc_n);
    let inp = input.data();
    let od = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let obase = (y * w + x) * oc_n;
            for oc in 0..oc_n {
                let mut acc = conv.bias[oc];
                for ky in 0..k {
                    let iy = y as i64 + ky as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as i64 + kx as i64 - pad as i64;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        let wbase = ((oc * k + ky) * k + kx) * ic;
                        let ibase = (iy as usize * w + ix as usize) * ic;
                        for c in 0..ic {
                            acc += conv.weight[wbase + c] * inp[ibase + c];
                        }
                    }
                }
                od[obase + oc] = acc;
            }
        }
    }
    out
}

/// Gradients of a conv w.r.t. its weights, bias, and input.
fn conv_backward(conv: &Conv2d, input: &Grid, grad_out: &Grid) -> (Vec<f64>, Vec<f64>, Grid) {
    let (h, w, ic) = (input.height(), input.width(), input.channels());
    let k = conv.ksize;
    let pad = k / 2;
    let oc_n = conv.out_ch;
    let mut gw = vec![0.0; conv.weight.len()];
    let mut gb = vec![0.0; conv.bias.len()];
    let mut gin = Grid::zeros(h, w, ic);
    let inp = input.data();
    let go = grad_out.data();
    let gi = gin.data_mut();
    for y in 0..h {
        for x in 0..w {
            let obase = (y * w + x) * oc_n;
            for oc in 0..oc_n {
                let g = go[obase + oc];
                if g == 0.0 {
                    continue;
                }
                gb[oc] += g;
                for ky in 0..k {
                    let iy = y as i64 + ky as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as i64 + kx as i64 - pad as i64;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        let wbase = ((oc * k + ky) * k + kx) * ic;
                        let ibase = (iy as usize * w + ix as usize) * ic;
                        for c in 0..ic {
                            gw[wbase + c] += g * inp[ibase + c];
                            gi[ibase + c] += g * conv.weight[wbase + c];
                        }
                    }
                }
            }
        }
    }
    (gw, gb, gin)
}

fn leaky_relu(z: &Grid, slope: f64) -> Grid {
    z.map(|v| if v > 0.0 { v } else { slope * v })
}

fn leaky_relu_backward(preact: &Grid, grad: &Grid, slope: f64) -> Grid {
    let mut out = grad.clone();
    for (g, &z) in out.data_mut().iter_mut().zip(preact.data()) {
        if z <= 0.0 {
            *g *= slope;
        }
    }
    out
}

fn avg_pool2(input: &Grid) -> Grid {
    let (h, w, c) = (input.height(), input.width(), input.channels());
    let mut out = Grid::zeros(h / 2, w / 2, c);
    for y in 0..h / 2 {
        for x in 0..w / 2 {
            for ch in 0..c {
                let s = input.get(2 * y, 2 * x, ch)
                    + input.get(2 * y, 2 * x + 1, ch)
                    + input.get(2 * y + 1, 2 * x, ch)
                    + input.get(2 * y + 1, 2 * x + 1, ch);
                out.set(y, x, ch, s / 4.0);
            }
        }
    }
    out
}

fn avg_pool2_backward(grad_out: &Grid) -> Grid {
    let (h, w, c) = (grad_out.height(), grad_out.width(), grad_out.channels());
    let mut out = Grid::zeros(h * 2, w * 2, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let g = grad_out.get(y, x, ch) / 4.0;
                out.set(2 * y, 2 * x, ch, g);
                out.set(2 * y, 2 * x + 1, ch, g);
                out.set(2 * y + 1, 2 * x, ch, g);
                out.set(2 * y + 1, 2 * x + 1, ch, g);
            }
        }
    }
    out
}

fn upsample2(input: &Grid) -> Grid {
    let (h, w, c) = (input.height(), input.width(), input.channels());
    let mut out = Grid::zeros(h * 2, w * 2, c);
    for y in 0..2 * h {
        for x in 0..2 * w {
            for ch in 0..c {
                out.set(y, x, ch, input.get(y / 2, x / 2, ch));
            }
        }
    }
    out
}

fn upsample2_backward(grad_out: &Grid) -> Grid {
    let (h, w, c) = (grad_out.height(), grad_out.width(), grad_out.channels());
    let mut out = Grid::zeros(h / 2, w / 2, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let i = out.idx(y / 2, x / 2, ch);
                out.data_mut()[i] += grad_out.get(y, x, ch);
            }
        }
    }
    out
}

fn concat_channels(a: &Grid, b: &Grid) -> Grid {
    debug_assert!(a.spatial_matches(b));
    let (h, w) = (a.height(), a.width());
    let (ca, cb) = (a.channels(), b.channels());
    let mut out = Grid::zeros(h, w, ca + cb);
    for i in 0..h * w {
        out.data_mut()[i * (ca + cb)..i * (ca + cb) + ca]
            .copy_from_slice(&a.data()[i * ca..(i + 1) * ca]);
        out.data_mut()[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
            .copy_from_slice(&b.data()[i * cb..(i + 1) * cb]);
    }
    out
}

fn split_channels(g: &Grid, ca: usize) -> (Grid, Grid) {
    let (h, w, c) = (g.height(), g.width(), g.channels());
    let cb = c - ca;
    let mut a = Grid::zeros(h, w, ca);
    let mut b = Grid::zeros(h, w, cb);
    for i in 0..h * w {
        a.data_mut()[i * ca..(i + 1) * ca].copy_from_slice(&g.data()[i * c..i * c + ca]);
        b.data_mut()[i * cb..(i + 1) * cb].copy_from_slice(&g.data()[i * c + ca..(i + 1) * c]);
    }
    (a, b)
}

fn softmax_channels(logits: &Grid) -> Grid {
    let (h, w, c) = (logits.height(), logits.width(), logits.channels());
    let mut out = Grid::zeros(h, w, c);
    for i in 0..h * w {
        let row = &logits.data()[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (row[k] - m).exp();
            out.data_mut()[i * c + k] = e;
            sum += e;
        }
        for k in 0..c {
            out.data_mut()[i * c + k] /= sum;
        }
    }
    out
}

/// dL/dz from dL/dp through the softmax: p * (g - <g, p>) per pixel.
fn softmax_backward(prob: &Grid, grad_prob: &Grid) -> Grid {
    let (h, w, c) = (prob.height(), prob.width(), prob.channels());
    let mut out = Grid::zeros(h, w, c);
    for i in 0..h * w {
        let p = &prob.data()[i * c..(i + 1) * c];
        let g = &grad_prob.data()[i * c..(i + 1) * c];
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..c {
            out.data_mut()[i * c + k] = p[k] * (g[k] - dot);
        }
    }
    out
}

impl NetParams {
    /// He fan-in initialization with a seeded generator; biases start at 0.
    pub fn init(arch: ArchConfig, rng: &mut SplitRng) -> Self {
        let convs = arch
            .conv_plan()
            .into_iter()
            .map(|(in_ch, out_ch, ksize)| {
                let fan_in = in_ch * ksize * ksize;
                let std = (2.0 / fan_in as f64).sqrt();
                let weight =
                    (0..out_ch * ksize * ksize * in_ch).map(|_| rng.normal() * std).collect();
                Conv2d { weight, bias: vec![0.0; out_ch], in_ch, out_ch, ksize }
            })
            .collect();
        Self { arch, convs, version: 0 }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn conv_blocks(&self) -> &[Conv2d] {
        &self.convs
    }

    /// Nudge one weight (testing hook for finite-difference checks).
    pub fn perturb_weight(&mut self, conv: usize, index: usize, delta: f64) {
        self.convs[conv].weight[index] += delta;
        self.version += 1;
    }

    /// Nudge one bias (testing hook for finite-difference checks).
    pub fn perturb_bias(&mut self, conv: usize, index: usize, delta: f64) {
        self.convs[conv].bias[index] += delta;
        self.version += 1;
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.convs
            .iter()
            .all(|c| c.weight.iter().all(|v| v.is_finite()) && c.bias.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a over the exact bit patterns of all parameters.
    pub fn hash64(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for c in &self.convs {
            for &v in &c.weight {
                eat(v);
            }
            for &v in &c.bias {
                eat(v);
            }
        }
        h
    }

    /// Forward pass producing the per-pixel class probabilities and the
    /// activation cache for backward.
    pub fn forward(&self, image: &Grid) -> Result<(Grid, ForwardCache)> {
        if image.channels() != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {}",
                self.arch.in_channels,
                image.channels()
            )));
        }
        let div = 1usize << self.arch.stages;
        if image.height() % div != 0 || image.width() % div != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} not divisible by 2^{}",
                image.height(),
                image.width(),
                self.arch.stages
            )));
        }
        let slope = self.arch.leaky_slope;
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut preacts = Vec::with_capacity(self.convs.len());
        let mut conv_i = 0usize;
        let mut cur = image.clone();

        let conv_lrelu = |cur: Grid, idx: usize, inputs: &mut Vec<Grid>, pre: &mut Vec<Option<Grid>>| {
            let z = conv_forward(&self.convs[idx], &cur);
            inputs.push(cur);
            let a = leaky_relu(&z, slope);
            pre.push(Some(z));
            a
        };

        let mut skips = Vec::with_capacity(self.arch.stages);
        for _s in 0..self.arch.stages {
            cur = conv_lrelu(cur, conv_i, &mut conv_inputs, &mut preacts);
            conv_i += 1;
            cur = conv_lrelu(cur, conv_i, &mut conv_inputs, &mut preacts);
            conv_i += 1;
            skips.push(cur.clone());
            cur = avg_pool2(&cur);
        }
        cur = conv_lrelu(cur, conv_i, &mut conv_inputs, &mut preacts);
        conv_i += 1;
        cur = conv_lrelu(cur, conv_i, &mut conv_inputs, &mut preacts);
        conv_i += 1;
        for s in (0..self.arch.stages).rev() {
            cur = upsample2(&cur);
            cur = concat_channels(&cur, &skips[s]);
            cur = conv_lrelu(cur, conv_i, &mut conv_inputs, &mut preacts);
            conv_i += 1;
            cur = conv_lrelu(cur, conv_i, &mut conv_inputs, &mut preacts);
            conv_i += 1;
        }
        let logits = conv_forward(&self.convs[conv_i], &cur);
        conv_inputs.push(cur);
        preacts.push(None);
        let prob = softmax_channels(&logits);
        if !prob.is_finite() {
            return Err(Error::NumericalIntegrity("non-finite activation in forward".into()));
        }
        Ok((
            prob.clone(),
            ForwardCache { version: self.version, conv_inputs, preacts, prob },
        ))
    }

    /// Probabilities only, cache dropped.
    pub fn predict(&self, image: &Grid) -> Result<Grid> {
        Ok(self.forward(image)?.0)
    }

    /// Exact gradients of the network w.r.t. all parameters, given the
    /// upstream gradient w.r.t. the softmax output.
    pub fn backward(&self, cache: &ForwardCache, grad_prob: &Grid) -> Result<GradBlocks> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if !grad_prob.same_shape(&cache.prob) {
            return Err(Error::Shape("grad w.r.t. prob has wrong shape".into()));
        }
        let slope = self.arch.leaky_slope;
        let mut grads = GradBlocks::zeros_like(self);
        let mut conv_i = self.convs.len() - 1;

        let mut dx = softmax_backward(&cache.prob, grad_prob);
        let (gw, gb, gin) = conv_backward(&self.convs[conv_i], &cache.conv_inputs[conv_i], &dx);
        grads.blocks[conv_i] = (gw, gb);
        dx = gin;

        let back_conv = |dx: Grid, idx: usize, grads: &mut GradBlocks| -> Grid {
            let pre = cache.preacts[idx].as_ref().expect("lrelu layer");
            let dz = leaky_relu_backward(pre, &dx, slope);
            let (gw, gb, gin) = conv_backward(&self.convs[idx], &cache.conv_inputs[idx], &dz);
            grads.blocks[idx] = (gw, gb);
            gin
        };

        let mut skip_grads: Vec<Option<Grid>> = vec![None; self.arch.stages];
        // Decoder stages were run for s = stages-1 .. 0, so unwind s = 0 up.
        for s in 0..self.arch.stages {
            conv_i -= 1;
            dx = back_conv(dx, conv_i, &mut grads);
            conv_i -= 1;
            dx = back_conv(dx, conv_i, &mut grads);
            let up_c = self.arch.width(s + 1);
            let (d_up, d_skip) = split_channels(&dx, up_c);
            skip_grads[s] = Some(d_skip);
            dx = upsample2_backward(&d_up);
        }
        conv_i -= 1;
        dx = back_conv(dx, conv_i, &mut grads);
        conv_i -= 1;
        dx = back_conv(dx, conv_i, &mut grads);
        for s in (0..self.arch.stages).rev() {
            dx = avg_pool2_backward(&dx);
            if let Some(sg) = &skip_grads[s] {
                for (d, g) in dx.data_mut().iter_mut().zip(sg.data()) {
                    *d += g;
                }
            }
            conv_i -= 1;
            dx = back_conv(dx, conv_i, &mut grads);
            conv_i -= 1;
            dx = back_conv(dx, conv_i, &mut grads);
        }
        debug_assert_eq!(conv_i, 0);
        Ok(grads)
    }
}

/// Fixture builder for finite-difference gradient checks: draws seeded
/// parameters and an input, then nudges biases channel-by-channel (in
/// forward order) until every pre-activation sits at least `margin` away
/// from the leaky-ReLU kink. Central differences only probe the gradient
/// where the loss is differentiable; a pre-activation inside the difference
/// band would straddle the slope change and report an O(1) discrepancy that
/// says nothing about the backward pass.
pub fn kink_free_fixture(
    arch: ArchConfig,
    seed: u64,
    h: usize,
    w: usize,
    margin: f64,
) -> (NetParams, Grid) {
    let mut rng = SplitRng::new(seed);
    let mut params = NetParams::init(arch.clone(), &mut rng);
    let img = Grid::new(
        h,
        w,
        arch.in_channels,
        (0..h * w * arch.in_channels).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
    )
    .expect("fixture dims");

    let find_shift = |vals: &[f64]| -> f64 {
        let clear = |delta: f64| vals.iter().all(|v| (v + delta).abs() >= margin);
        if clear(0.0) {
            return 0.0;
        }
        let step = margin / 2.0;
        for k in 1..2000 {
            for sign in [1.0, -1.0] {
                let delta = sign * k as f64 * step;
                if clear(delta) {
                    return delta;
                }
            }
        }
        panic!("no kink-free bias shift found");
    };

    for ci in 0..params.convs.len() {
        let (_, cache) = params.forward(&img).expect("fixture forward");
        let Some(z) = &cache.preacts[ci] else { continue };
        let c = z.channels();
        let n = z.height() * z.width();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).map(|i| z.data()[i * c + ch]).collect();
            let delta = find_shift(&vals);
            if delta != 0.0 {
                params.convs[ci].bias[ch] += delta;
                params.version += 1;
            }
        }
    }
    (params, img)
}

/// v <- momentum v + grad + weight_decay p; p <- p - lr v.
pub fn sgd_step(params: &mut NetParams, grads: &GradBlocks, opt: &mut OptState) -> Result<()> {
    for (conv, (v, g)) in params
        .convs
        .iter_mut()
        .zip(opt.velocity.blocks.iter_mut().zip(&grads.blocks))
    {
        for ((p, vel), gr) in conv.weight.iter_mut().zip(v.0.iter_mut()).zip(&g.0) {
            *vel = opt.momentum * *vel + gr + opt.weight_decay * *p;
            *p -= opt.lr * *vel;
        }
        for ((p, vel), gr) in conv.bias.iter_mut().zip(v.1.iter_mut()).zip(&g.1) {
            *vel = opt.momentum * *vel + gr + opt.weight_decay * *p;
            *p -= opt.lr * *vel;
        }
    }
    params.version += 1;
    if !params.is_finite() {
        return Err(Error::NumericalIntegrity("non-finite parameter after sgd step".into()));
    }
    Ok(())
}

/// theta_t <- decay theta_t + (1 - decay) theta_s, every block.
pub fn ema_update(teacher: &mut NetParams, student: &NetParams, decay: f64) -> Result<()> {
    if teacher.arch != student.arch {
        return Err(Error::Shape("teacher/student architectures differ".into()));
    }
    for (t, s) in teacher.convs.iter_mut().zip(&student.convs) {
        for (tv, sv) in t.weight.iter_mut().zip(&s.weight) {
            *tv = decay * *tv + (1.0 - decay) * sv;
        }
        for (tv, sv) in t.bias.iter_mut().zip(&s.bias) {
            *tv = decay * *tv + (1.0 - decay) * sv;
        }
    }
    teacher.version += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then MDG1-framed parameter blocks for
// the student and teacher sections (conv weight as (out, k*k, in), bias as
// (1, 1, out)).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: ArchConfig,
    iteration: u64,
    rng_seed: u64,
    sections: Vec<String>,
}

fn write_section<W: Write>(out: &mut W, params: &NetParams) -> std::io::Result<()> {
    for c in params.conv_blocks() {
        let w = Grid::new(c.out_ch, c.ksize * c.ksize, c.in_ch, c.weight.clone())
            .expect("conv weight dims");
        w.write_mdg1(&mut *out)?;
        let b = Grid::new(1, 1, c.out_ch, c.bias.clone()).expect("bias dims");
        b.write_mdg1(&mut *out)?;
    }
    Ok(())
}

fn read_section<R: Read>(inp: &mut R, arch: &ArchConfig) -> Result<NetParams> {
    let convs = arch
        .conv_plan()
        .into_iter()
        .map(|(in_ch, out_ch, ksize)| {
            let w = Grid::read_mdg1(&mut *inp)?;
            if w.height() != out_ch || w.width() != ksize * ksize || w.channels() != in_ch {
                return Err(Error::ArchMismatch(format!(
                    "weight block {}x{}x{} does not fit conv ({in_ch}->{out_ch}, k{ksize})",
                    w.height(),
                    w.width(),
                    w.channels()
                )));
            }
            let b = Grid::read_mdg1(&mut *inp)?;
            if b.channels() != out_ch {
                return Err(Error::ArchMismatch("bias block size mismatch".into()));
            }
            Ok(Conv2d {
                weight: w.data().to_vec(),
                bias: b.data().to_vec(),
                in_ch,
                out_ch,
                ksize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetParams { arch: arch.clone(), convs, version: 0 })
}

/// Write student and teacher parameters with meta info.
pub fn write_checkpoint(
    path: &Path,
    student: &NetParams,
    teacher: &NetParams,
    iteration: u64,
    rng_seed: u64,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(f);
    let header = CheckpointHeader {
        arch: student.arch.clone(),
        iteration,
        rng_seed,
        sections: vec!["student".into(), "teacher".into()],
    };
    let mut line = serde_json::to_string(&header).expect("header serializes");
    line.push('\n');
    out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    write_section(&mut out, student).map_err(|e| Error::io(path, e))?;
    write_section(&mut out, teacher).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub struct Checkpoint {
    pub student: NetParams,
    pub teacher: NetParams,
    pub iteration: u64,
    pub rng_seed: u64,
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim())
        .map_err(|e| Error::Parse { offset: 0, msg: format!("checkpoint header: {e}") })?;
    let student = read_section(&mut reader, &header.arch)?;
    let teacher = read_section(&mut reader, &header.arch)?;
    Ok(Checkpoint { student, teacher, iteration: header.iteration, rng_seed: header.rng_seed })
}
