use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::{DropoutMask, Layout, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

const NORM_EPS: f64 = 1e-5;
/// Samples per worker task and tasks per wave in batch reductions. Fixed so
/// the summation order never depends on the thread count.
const CHUNK: usize = 4;
const WAVE: usize = 16;

/// A network-ready training pair (already standardized).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: Vec<f64>,
}

/// Frozen per-channel statistics of each normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<Vec<f64>>,
    pub inv_std: Vec<Vec<f64>>,
}

impl NormStats {
    pub fn identity(spec: &NetworkSpec) -> Self {
        NormStats {
            mean: vec![vec![0.0; spec.filters]; spec.conv_layers],
            inv_std: vec![vec![1.0; spec.filters]; spec.conv_layers],
        }
    }

    pub fn set_layer(&mut self, layer: usize, mean: &[f64], mean_sq: &[f64]) {
        for f in 0..mean.len() {
            let var = (mean_sq[f] - mean[f] * mean[f]).max(0.0);
            self.mean[layer][f] = mean[f];
            self.inv_std[layer][f] = 1.0 / (var + NORM_EPS).sqrt();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Mean per-sample loss.
    pub loss: f64,
    /// Mean per-sample gradient.
    pub grad: Vec<f64>,
}

/// Architecture plus frozen normalization statistics. Parameters are passed
/// in explicitly so that perturbed copies of θ can be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layout: Layout,
    pub norm: NormStats,
}

struct SampleParts {
    loss: f64,
    /// Gradient of the conv blocks, which occupy the front of θ.
    conv_grad: Vec<f64>,
    features: Vec<f64>,
    /// Gradient at the fully connected output, mask applied.
    d_hidden: Vec<f64>,
    hidden: Vec<f64>,
    d_out: Vec<f64>,
}

struct Trace {
    /// Input of conv layer `i`; the last entry is the flattened feature map.
    acts: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    pre_relu: Vec<Vec<f64>>,
    /// Fully connected output after masking.
    hidden: Vec<f64>,
    out: Vec<f64>,
}

/// Dot product over eight interleaved partial sums; fixed order, and
/// vectorizable.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 8];
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Valid output range along one axis for kernel tap `k` with padding `pad`.
#[inline]
fn tap_range(k: usize, pad: usize, n: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (n + pad).saturating_sub(k).min(n);
    (lo, hi)
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let norm = NormStats::identity(&spec);
        Ok(Network { spec, layout, norm })
    }

    pub fn storage_count(&self) -> usize {
        self.layout.total
    }

    /// He-uniform conv and FC weights, zero output layer, zero biases, unit
    /// scales, zero shifts. The zero output layer starts training from the
    /// all-zero prediction.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, &[tag::INIT]);
        let mut theta = vec![0.0; self.layout.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut crate::rng::Stream| {
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in &mut theta[range] {
                *v = rng.random_range(-limit..limit);
            }
        };
        let window = self.spec.kernel.0 * self.spec.kernel.1;
        for c in &self.layout.conv {
            fill(c.weight.range(), c.in_channels * window, &mut rng);
        }
        fill(self.layout.fc_weight.range(), self.layout.features, &mut rng);
        for c in &self.layout.conv {
            theta[c.scale.range()].fill(1.0);
        }
        theta
    }

    fn check(&self, theta: &[f64], x: &[f64], mask: Option<&DropoutMask>) -> Result<()> {
        if theta.len() != self.layout.total {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, network stores {}",
                theta.len(),
                self.layout.total
            )));
        }
        if x.len() != self.spec.input_len() {
            return Err(Error::invalid(format!(
                "input has {} entries, network expects {}x{}x{}",
                x.len(),
                self.spec.input_rows,
                self.spec.input_cols,
                self.spec.input_channels
            )));
        }
        if let Some(m) = mask {
            if m.keep.len() != self.spec.fc_units {
                return Err(Error::invalid(format!(
                    "dropout mask has {} entries for {} units",
                    m.keep.len(),
                    self.spec.fc_units
                )));
            }
        }
        Ok(())
    }

    fn conv(&self, layer: usize, theta: &[f64], input: &[f64]) -> Vec<f64> {
        let blocks = &self.layout.conv[layer];
        let (rows, cols) = (self.spec.input_rows, self.spec.input_cols);
        let (kh, kw) = self.spec.kernel;
        let (ph, pw) = (kh / 2, kw / 2);
        let plane = rows * cols;
        let cin = blocks.in_channels;
        let weight = &theta[blocks.weight.range()];
        let bias = &theta[blocks.bias.range()];
        let mut out = vec![0.0; self.spec.filters * plane];
        for (f, out_f) in out.chunks_exact_mut(plane).enumerate() {
            out_f.fill(bias[f]);
            for c in 0..cin {
                let in_c = &input[c * plane..(c + 1) * plane];
                for ky in 0..kh {
                    let (y0, y1) = tap_range(ky, ph, rows);
                    for kx in 0..kw {
                        let w = weight[((f * cin + c) * kh + ky) * kw + kx];
                        if w == 0.0 {
                            continue;
                        }
                        let (x0, x1) = tap_range(kx, pw, cols);
                        for y in y0..y1 {
                            let iy = y + ky - ph;
                            let dst = &mut out_f[y * cols + x0..y * cols + x1];
                            let src = &in_c[iy * cols + x0 + kx - pw..iy * cols + x1 + kx - pw];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates the weight/bias gradient of conv `layer` and, when
    /// `d_input` is given, the gradient with respect to its input.
    fn conv_backward(
        &self,
        layer: usize,
        theta: &[f64],
        input: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
        mut d_input: Option<&mut [f64]>,
    ) {
        let blocks = &self.layout.conv[layer];
        let (rows, cols) = (self.spec.input_rows, self.spec.input_cols);
        let (kh, kw) = self.spec.kernel;
        let (ph, pw) = (kh / 2, kw / 2);
        let plane = rows * cols;
        let cin = blocks.in_channels;
        let weight = &theta[blocks.weight.range()];
        for (f, d_f) in d_out.chunks_exact(plane).enumerate() {
            grad[blocks.bias.offset + f] += d_f.iter().sum::<f64>();
            for c in 0..cin {
                let in_c = &input[c * plane..(c + 1) * plane];
                for ky in 0..kh {
                    let (y0, y1) = tap_range(ky, ph, rows);
                    for kx in 0..kw {
                        let (x0, x1) = tap_range(kx, pw, cols);
                        let widx = ((f * cin + c) * kh + ky) * kw + kx;
                        let w = weight[widx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = y + ky - ph;
                            let d = &d_f[y * cols + x0..y * cols + x1];
                            let src_lo = iy * cols + x0 + kx - pw;
                            let src = &in_c[src_lo..src_lo + (x1 - x0)];
                            for (a, b) in d.iter().zip(src) {
                                acc += a * b;
                            }
                            if let Some(di) = d_input.as_deref_mut() {
                                let dst = &mut di[c * plane + src_lo..c * plane + src_lo + (x1 - x0)];
                                for (t, a) in dst.iter_mut().zip(d) {
                                    *t += w * a;
                                }
                            }
                        }
                        grad[blocks.weight.offset + widx] += acc;
                    }
                }
            }
        }
    }

    /// Output of conv `layer` before normalization, using the current
    /// statistics of the earlier layers.
    pub fn conv_output(&self, theta: &[f64], x: &[f64], layer: usize) -> Result<Vec<f64>> {
        self.check(theta, x, None)?;
        if layer >= self.spec.conv_layers {
            return Err(Error::invalid(format!("no conv layer {layer}")));
        }
        let mut act = x.to_vec();
        for i in 0..layer {
            let z = self.conv(i, theta, &act);
            act = self.normalize(i, theta, &z).1;
        }
        Ok(self.conv(layer, theta, &act))
    }

    /// Returns (normalized, post-ReLU) for conv output `z`; pre-ReLU values
    /// are recoverable from the normalized ones.
    fn normalize(&self, layer: usize, theta: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let blocks = &self.layout.conv[layer];
        let plane = self.spec.input_rows * self.spec.input_cols;
        let mut normed = vec![0.0; z.len()];
        let mut act = vec![0.0; z.len()];
        for f in 0..self.spec.filters {
            let mu = self.norm.mean[layer][f];
            let s = self.norm.inv_std[layer][f];
            let gamma = theta[blocks.scale.offset + f];
            let beta = theta[blocks.shift.offset + f];
            for i in f * plane..(f + 1) * plane {
                let n = (z[i] - mu) * s;
                normed[i] = n;
                act[i] = (gamma * n + beta).max(0.0);
            }
        }
        (normed, act)
    }

    fn trace(&self, theta: &[f64], x: &[f64], mask: Option<&DropoutMask>) -> Trace {
        let n_conv = self.spec.conv_layers;
        let mut acts = Vec::with_capacity(n_conv + 1);
        let mut normed = Vec::with_capacity(n_conv);
        let mut pre_relu = Vec::with_capacity(n_conv);
        acts.push(x.to_vec());
        for i in 0..n_conv {
            let z = self.conv(i, theta, &acts[i]);
            let (n, a) = self.normalize(i, theta, &z);
            let blocks = &self.layout.conv[i];
            let plane = self.spec.input_rows * self.spec.input_cols;
            let y: Vec<f64> = n
                .iter()
                .enumerate()
                .map(|(j, v)| theta[blocks.scale.offset + j / plane] * v + theta[blocks.shift.offset + j / plane])
                .collect();
            normed.push(n);
            pre_relu.push(y);
            acts.push(a);
        }
        let features = acts.last().expect("input present");
        let nf = self.layout.features;
        let w_fc = &theta[self.layout.fc_weight.range()];
        let b_fc = &theta[self.layout.fc_bias.range()];
        let hidden: Vec<f64> = (0..self.spec.fc_units)
            .map(|u| {
                let factor = mask.map_or(1.0, |m| m.factor(u, self.spec.keep_prob));
                if factor == 0.0 {
                    return 0.0;
                }
                (dot(&w_fc[u * nf..(u + 1) * nf], features) + b_fc[u]) * factor
            })
            .collect();
        let w_out = &theta[self.layout.out_weight.range()];
        let b_out = &theta[self.layout.out_bias.range()];
        let nu = self.spec.fc_units;
        let out = (0..self.spec.output_dim)
            .map(|o| dot(&w_out[o * nu..(o + 1) * nu], &hidden) + b_out[o])
            .collect();
        Trace {
            acts,
            normed,
            pre_relu,
            hidden,
            out,
        }
    }

    pub fn forward(&self, theta: &[f64], x: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        self.check(theta, x, mask)?;
        Ok(self.trace(theta, x, mask).out)
    }

    /// Loss and the per-sample pieces of its gradient. The two dense weight
    /// blocks are outer products and are left unexpanded.
    fn sample_parts(&self, theta: &[f64], x: &[f64], label: &[f64], mask: Option<&DropoutMask>) -> Result<SampleParts> {
        self.check(theta, x, mask)?;
        if label.len() != self.spec.output_dim {
            return Err(Error::invalid(format!(
                "label has {} entries, network outputs {}",
                label.len(),
                self.spec.output_dim
            )));
        }
        let mut t = self.trace(theta, x, mask);
        let d_out: Vec<f64> = t.out.iter().zip(label).map(|(o, y)| 2.0 * (o - y)).collect();
        let loss = t.out.iter().zip(label).map(|(o, y)| (o - y) * (o - y)).sum();

        let lay = &self.layout;
        let nu = self.spec.fc_units;
        let nf = lay.features;
        let w_out = &theta[lay.out_weight.range()];
        let mut d_hidden = vec![0.0; nu];
        for (o, &d) in d_out.iter().enumerate() {
            for (dh, w) in d_hidden.iter_mut().zip(&w_out[o * nu..(o + 1) * nu]) {
                *dh += d * w;
            }
        }
        for (u, dh) in d_hidden.iter_mut().enumerate() {
            *dh *= mask.map_or(1.0, |m| m.factor(u, self.spec.keep_prob));
        }

        let w_fc = &theta[lay.fc_weight.range()];
        let mut d_feat = vec![0.0; nf];
        for (u, &du) in d_hidden.iter().enumerate() {
            if du == 0.0 {
                continue;
            }
            for (df, w) in d_feat.iter_mut().zip(&w_fc[u * nf..(u + 1) * nf]) {
                *df += du * w;
            }
        }

        let plane = self.spec.input_rows * self.spec.input_cols;
        let mut conv_grad = vec![0.0; lay.fc_weight.offset];
        let mut d_act = d_feat;
        for i in (0..self.spec.conv_layers).rev() {
            let blocks = &lay.conv[i];
            let mut d_z = vec![0.0; d_act.len()];
            for f in 0..self.spec.filters {
                let gamma = theta[blocks.scale.offset + f];
                let s = self.norm.inv_std[i][f];
                let (mut d_gamma, mut d_beta) = (0.0, 0.0);
                for j in f * plane..(f + 1) * plane {
                    let dy = if t.pre_relu[i][j] > 0.0 { d_act[j] } else { 0.0 };
                    d_gamma += dy * t.normed[i][j];
                    d_beta += dy;
                    d_z[j] = dy * gamma * s;
                }
                conv_grad[blocks.scale.offset + f] += d_gamma;
                conv_grad[blocks.shift.offset + f] += d_beta;
            }
            if i > 0 {
                let mut d_in = vec![0.0; t.acts[i].len()];
                self.conv_backward(i, theta, &t.acts[i], &d_z, &mut conv_grad, Some(&mut d_in));
                d_act = d_in;
            } else {
                self.conv_backward(i, theta, &t.acts[i], &d_z, &mut conv_grad, None);
            }
        }
        let features = t.acts.pop().expect("input present");
        Ok(SampleParts {
            loss,
            conv_grad,
            features,
            d_hidden,
            hidden: t.hidden,
            d_out,
        })
    }

    /// Adds the gradient of `‖f(x) − label‖²` to `grad` and returns the loss.
    pub fn accumulate_gradient(
        &self,
        theta: &[f64],
        x: &[f64],
        label: &[f64],
        mask: Option<&DropoutMask>,
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != theta.len() {
            return Err(Error::invalid(format!(
                "gradient buffer has {} entries, θ has {}",
                grad.len(),
                theta.len()
            )));
        }
        let parts = self.sample_parts(theta, x, label, mask)?;
        let lay = &self.layout;
        for (g, c) in grad.iter_mut().zip(&parts.conv_grad) {
            *g += c;
        }
        let nf = lay.features;
        let nu = self.spec.fc_units;
        for (u, &du) in parts.d_hidden.iter().enumerate() {
            grad[lay.fc_bias.offset + u] += du;
            let base = lay.fc_weight.offset + u * nf;
            for (g, a) in grad[base..base + nf].iter_mut().zip(&parts.features) {
                *g += du * a;
            }
        }
        for (o, &d) in parts.d_out.iter().enumerate() {
            grad[lay.out_bias.offset + o] += d;
            let base = lay.out_weight.offset + o * nu;
            for (g, h) in grad[base..base + nu].iter_mut().zip(&parts.hidden) {
                *g += d * h;
            }
        }
        Ok(parts.loss)
    }

    /// Loss and gradient for a single sample.
    pub fn backward(&self, theta: &[f64], x: &[f64], label: &[f64], mask: Option<&DropoutMask>) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; theta.len()];
        let loss = self.accumulate_gradient(theta, x, label, mask, &mut grad)?;
        Ok((loss, grad))
    }

    /// Mean loss and mean gradient over `samples[indices]`.
    ///
    /// Samples are processed a wave at a time. Within a wave the per-sample
    /// parts are computed in parallel, then combined in index order; the two
    /// dense weight blocks are accumulated as one matrix product per wave.
    pub fn batch_gradient(
        &self,
        theta: &[f64],
        samples: &[Sample],
        indices: &[usize],
        mask: Option<&DropoutMask>,
    ) -> Result<BatchResult> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= samples.len()) {
            return Err(Error::invalid(format!("batch index {bad} out of range")));
        }
        let lay = &self.layout;
        let nf = lay.features;
        let nu = self.spec.fc_units;
        let no = self.spec.output_dim;
        let mut loss = 0.0;
        let mut conv_grad = vec![0.0; lay.fc_weight.offset];
        let mut fc_bias = vec![0.0; nu];
        let mut out_bias = vec![0.0; no];
        // Column-major (features × units) and (units × outputs) match the
        // row-major storage of the two weight blocks.
        let mut fc_weight = DMatrix::<f64>::zeros(nf, nu);
        let mut out_weight = DMatrix::<f64>::zeros(nu, no);
        for wave in indices.chunks(CHUNK * WAVE) {
            let parts = wave
                .par_iter()
                .map(|&i| self.sample_parts(theta, &samples[i].input, &samples[i].label, mask))
                .collect::<Result<Vec<_>>>()?;
            let b = parts.len();
            let mut feats = DMatrix::<f64>::zeros(nf, b);
            let mut d_hidden_t = DMatrix::<f64>::zeros(b, nu);
            let mut hidden = DMatrix::<f64>::zeros(nu, b);
            let mut d_out_t = DMatrix::<f64>::zeros(b, no);
            for (s, p) in parts.iter().enumerate() {
                loss += p.loss;
                for (g, c) in conv_grad.iter_mut().zip(&p.conv_grad) {
                    *g += c;
                }
                for (g, d) in fc_bias.iter_mut().zip(&p.d_hidden) {
                    *g += d;
                }
                for (g, d) in out_bias.iter_mut().zip(&p.d_out) {
                    *g += d;
                }
                feats.column_mut(s).copy_from_slice(&p.features);
                hidden.column_mut(s).copy_from_slice(&p.hidden);
                for (u, &d) in p.d_hidden.iter().enumerate() {
                    d_hidden_t[(s, u)] = d;
                }
                for (o, &d) in p.d_out.iter().enumerate() {
                    d_out_t[(s, o)] = d;
                }
            }
            fc_weight.gemm(1.0, &feats, &d_hidden_t, 1.0);
            out_weight.gemm(1.0, &hidden, &d_out_t, 1.0);
        }
        let mut grad = conv_grad;
        grad.extend_from_slice(fc_weight.as_slice());
        grad.extend_from_slice(&fc_bias);
        grad.extend_from_slice(out_weight.as_slice());
        grad.extend_from_slice(&out_bias);
        debug_assert_eq!(grad.len(), lay.total);
        let n = indices.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(BatchResult { loss: loss / n, grad })
    }

    /// Predictions for many inputs, in order.
    pub fn predict_many(&self, theta: &[f64], inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        inputs.par_iter().map(|x| self.forward(theta, x, None)).collect()
    }

    /// Per-channel mean and mean square of conv `layer`'s output over
    /// `samples[indices]`.
    pub fn layer_moments(
        &self,
        theta: &[f64],
        samples: &[Sample],
        indices: &[usize],
        layer: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if indices.is_empty() {
            return Err(Error::invalid("no samples for normalization statistics"));
        }
        let nf = self.spec.filters;
        let plane = self.spec.input_rows * self.spec.input_cols;
        let (s1, s2) = ordered_reduce(
            indices,
            |chunk| {
                let mut s1 = vec![0.0; nf];
                let mut s2 = vec![0.0; nf];
                for &i in chunk {
                    let z = self.conv_output(theta, &samples[i].input, layer)?;
                    for f in 0..nf {
                        for v in &z[f * plane..(f + 1) * plane] {
                            s1[f] += v;
                            s2[f] += v * v;
                        }
                    }
                }
                Ok((s1, s2))
            },
            (vec![0.0; nf], vec![0.0; nf]),
            |acc, (a, b)| {
                for f in 0..nf {
                    acc.0[f] += a[f];
                    acc.1[f] += b[f];
                }
            },
        )?;
        let n = (indices.len() * plane) as f64;
        Ok((s1.iter().map(|v| v / n).collect(), s2.iter().map(|v| v / n).collect()))
    }

    /// Sets the normalization statistics layer by layer from the unweighted
    /// average of each group's moments. A group is `(θ, samples, indices)`:
    /// one group reproduces pooled statistics, several model clients (each
    /// holding its own copy of θ) reporting moments to the server.
    pub fn calibrate(&mut self, groups: &[(&[f64], &[Sample], &[usize])]) -> Result<()> {
        if groups.is_empty() {
            return Err(Error::invalid("no groups for normalization statistics"));
        }
        for (theta, samples, idx) in groups {
            if idx.is_empty() {
                return Err(Error::invalid("no samples for normalization statistics"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= samples.len()) {
                return Err(Error::invalid(format!("calibration index {bad} out of range")));
            }
            if let Some(first) = idx.first() {
                self.check(theta, &samples[*first].input, None)?;
            }
        }
        self.norm = NormStats::identity(&self.spec);
        let nf = self.spec.filters;
        let plane = self.spec.input_rows * self.spec.input_cols;
        let mut acts: Vec<Vec<Vec<f64>>> = groups
            .iter()
            .map(|(_, samples, idx)| idx.iter().map(|&i| samples[i].input.clone()).collect())
            .collect();
        for layer in 0..self.spec.conv_layers {
            let mut mean = vec![0.0; nf];
            let mut mean_sq = vec![0.0; nf];
            let mut outputs = Vec::with_capacity(groups.len());
            for ((theta, _, _), group_acts) in groups.iter().zip(&acts) {
                let z: Vec<Vec<f64>> = group_acts.par_iter().map(|a| self.conv(layer, theta, a)).collect();
                let (mut s1, mut s2) = (vec![0.0; nf], vec![0.0; nf]);
                for zs in &z {
                    for f in 0..nf {
                        for v in &zs[f * plane..(f + 1) * plane] {
                            s1[f] += v;
                            s2[f] += v * v;
                        }
                    }
                }
                let n = (z.len() * plane) as f64;
                for f in 0..nf {
                    mean[f] += s1[f] / n / groups.len() as f64;
                    mean_sq[f] += s2[f] / n / groups.len() as f64;
                }
                outputs.push(z);
            }
            self.norm.set_layer(layer, &mean, &mean_sq);
            if layer + 1 < self.spec.conv_layers {
                for (g, z) in outputs.into_iter().enumerate() {
                    let theta = groups[g].0;
                    acts[g] = z.par_iter().map(|zs| self.normalize(layer, theta, zs).1).collect();
                }
            }
        }
        Ok(())
    }
}

/// Deterministic parallel reduction: fixed-size chunks, evaluated a wave at
/// a time, combined strictly in index order.
fn ordered_reduce<A: Send>(
    indices: &[usize],
    map: impl Fn(&[usize]) -> Result<A> + Sync,
    init: A,
    mut combine: impl FnMut(&mut A, A),
) -> Result<A> {
    let mut acc = init;
    for wave in indices.chunks(CHUNK * WAVE) {
        let parts = wave.par_chunks(CHUNK).map(&map).collect::<Result<Vec<_>>>()?;
        for part in parts {
            combine(&mut acc, part);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::draw_dropout_mask;
    use approx::assert_abs_diff_eq;

    /// 2×2×1 input, one 1-filter conv, two hidden units, two outputs.
    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_rows: 2,
            input_cols: 2,
            input_channels: 1,
            conv_layers: 1,
            filters: 1,
            kernel: (3, 3),
            fc_units: 2,
            keep_prob: 0.5,
            output_dim: 2,
        }
    }

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            input_rows: 3,
            input_cols: 4,
            input_channels: 3,
            conv_layers: 2,
            filters: 3,
            kernel: (3, 3),
            fc_units: 5,
            keep_prob: 0.5,
            output_dim: 4,
        }
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, &[99]);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = Network::new(small_spec()).unwrap();
        let theta = vec![0.0; net.storage_count()];
        let out = net.forward(&theta, &random_vec(36, 1), None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_network_by_hand() {
        let net = Network::new(tiny_spec()).unwrap();
        let lay = &net.layout;
        let mut theta = vec![0.0; net.storage_count()];
        // Kernel with only the centre and right taps set:
        // z[y,x] = 2 x[y,x] + 1 x[y,x+1] + b, b = -1.
        let w = lay.conv[0].weight.offset;
        theta[w + 4] = 2.0;
        theta[w + 5] = 1.0;
        theta[lay.conv[0].bias.offset] = -1.0;
        theta[lay.conv[0].scale.offset] = 1.0;
        theta[lay.conv[0].shift.offset] = 0.0;
        // FC: u0 = sum(features), u1 = f0 - f3 + 1
        let fc = lay.fc_weight.offset;
        theta[fc..fc + 4].copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        theta[fc + 4..fc + 8].copy_from_slice(&[1.0, 0.0, 0.0, -1.0]);
        theta[lay.fc_bias.offset + 1] = 1.0;
        // out0 = u0 + 2 u1, out1 = -u1 + 0.5
        let o = lay.out_weight.offset;
        theta[o..o + 4].copy_from_slice(&[1.0, 2.0, 0.0, -1.0]);
        theta[lay.out_bias.offset + 1] = 0.5;

        let x = [1.0, -2.0, 0.5, 3.0];
        // z = [2-2-1, -4+0-1, 1+3-1, 6+0-1] = [-1, -5, 3, 5]; ReLU -> [0,0,3,5]
        // u0 = 8, u1 = 0 - 5 + 1 = -4
        // out = [8 - 8, 4 + 0.5]
        let out = net.forward(&theta, &x, None).unwrap();
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 4.5, epsilon = 1e-12);

        // Unit 1 dropped, unit 0 kept and rescaled by 1/κ = 2.
        let mask = DropoutMask::from_keep(vec![true, false]);
        let out = net.forward(&theta, &x, Some(&mask)).unwrap();
        assert_abs_diff_eq!(out[0], 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_mask_leaves_output_bias() {
        let net = Network::new(small_spec()).unwrap();
        let theta = random_vec(net.storage_count(), 3);
        let mask = DropoutMask::from_keep(vec![false; 5]);
        let out = net.forward(&theta, &random_vec(36, 4), Some(&mask)).unwrap();
        assert_eq!(out, theta[net.layout.out_bias.range()].to_vec());

        let (_, grad) = net.backward(&theta, &random_vec(36, 4), &random_vec(4, 5), Some(&mask)).unwrap();
        assert!(grad[net.layout.fc_weight.range()].iter().all(|&g| g == 0.0));
        assert!(grad[net.layout.fc_bias.range()].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_errors() {
        let net = Network::new(small_spec()).unwrap();
        let theta = vec![0.0; net.storage_count()];
        assert!(net.forward(&theta, &[0.0; 35], None).is_err());
        assert!(net.forward(&theta[1..], &[0.0; 36], None).is_err());
        let bad = DropoutMask::from_keep(vec![true; 4]);
        assert!(net.forward(&theta, &[0.0; 36], Some(&bad)).is_err());
        assert!(net.backward(&theta, &[0.0; 36], &[0.0; 3], None).is_err());
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let net = Network::new(small_spec()).unwrap();
        let theta = net.init_params(1);
        let x = random_vec(36, 2);
        let y = net.forward(&theta, &x, None).unwrap();
        let (loss, grad) = net.backward(&theta, &x, &y, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = Network::new(small_spec()).unwrap();
        let theta = net.init_params(4);
        let x = random_vec(36, 5);
        let mask = draw_dropout_mask(&net.spec, 3);
        let a = net.forward(&theta, &x, Some(&mask)).unwrap();
        let b = net.forward(&theta, &x, Some(&mask)).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    fn samples(net: &Network, n: usize, seed: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                input: random_vec(net.spec.input_len(), seed + 2 * i as u64),
                label: random_vec(net.spec.output_dim, seed + 2 * i as u64 + 1),
            })
            .collect()
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let net = Network::new(small_spec()).unwrap();
        let theta = net.init_params(7);
        let data = samples(&net, 37, 100);
        let idx: Vec<usize> = (0..37).collect();
        let batch = net.batch_gradient(&theta, &data, &idx, None).unwrap();
        let mut mean = vec![0.0; theta.len()];
        for s in &data {
            let (_, g) = net.backward(&theta, &s.input, &s.label, None).unwrap();
            for (m, v) in mean.iter_mut().zip(&g) {
                *m += v / 37.0;
            }
        }
        let scale = mean.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in batch.grad.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
        assert!(net.batch_gradient(&theta, &data, &[], None).is_err());
        assert!(net.batch_gradient(&theta, &data, &[40], None).is_err());
    }

    #[test]
    fn batch_gradient_independent_of_thread_count() {
        let net = Network::new(small_spec()).unwrap();
        let theta = net.init_params(8);
        let data = samples(&net, 90, 7);
        let idx: Vec<usize> = (0..90).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| net.batch_gradient(&theta, &data, &idx, None).unwrap())
        };
        assert_eq!(run(1), run(5));
    }

    #[test]
    fn calibration_normalizes_first_layer() {
        let mut net = Network::new(small_spec()).unwrap();
        let theta = net.init_params(9);
        let data = samples(&net, 20, 1);
        let idx: Vec<usize> = (0..20).collect();
        net.calibrate(&[(&theta, &data, &idx)]).unwrap();
        // Oracle: moments recomputed from scratch through the calibrated
        // earlier layers.
        for layer in 0..2 {
            let (m, s) = net.layer_moments(&theta, &data, &idx, layer).unwrap();
            for f in 0..3 {
                let var = s[f] - m[f] * m[f];
                assert_abs_diff_eq!(net.norm.mean[layer][f], m[f], epsilon = 1e-10);
                assert_abs_diff_eq!(net.norm.inv_std[layer][f], 1.0 / (var + NORM_EPS).sqrt(), epsilon = 1e-8);
            }
        }
        // Two identical groups give the pooled statistics.
        let mut twin = Network::new(small_spec()).unwrap();
        twin.calibrate(&[(&theta, &data, &idx), (&theta, &data, &idx)]).unwrap();
        for l in 0..2 {
            for f in 0..3 {
                assert_abs_diff_eq!(twin.norm.mean[l][f], net.norm.mean[l][f], epsilon = 1e-12);
            }
        }
    }
}
