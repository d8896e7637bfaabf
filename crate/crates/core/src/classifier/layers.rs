//! Layer primitives with hand-written backward passes.
//!
//! Activations are single samples stored channel-major: `[C][H][W]`.
//! Convolutions lower to a matrix product over an im2col buffer. Every
//! `backward` accumulates parameter gradients into a same-shaped layer
//! (`grad`) and returns the gradient with respect to its input.

/// `C = A * B + beta * C` for row-major `C` (`m` x `n`). `A` is `m` x `k`
/// and `B` is `k` x `n`, both addressed through explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2D convolution with square kernel, zero padding and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][kernel][kernel]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let k = self.kernel;
        let plane = oh * ow;
        let mut cols = vec![0.0; self.fan_in() * plane];
        for c in 0..self.in_channels {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let k = self.kernel;
        let plane = oh * ow;
        let mut dx = vec![0.0; self.in_channels * h * w];
        for c in 0..self.in_channels {
            let dst = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, ConvCache) {
        debug_assert_eq!(x.len(), self.in_channels * h * w);
        let (oh, ow) = self.output_size(h, w);
        let cols = self.im2col(x, h, w, oh, ow);
        let plane = oh * ow;
        let mut out = vec![0.0; self.out_channels * plane];
        for (o, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.fill(self.bias[o]);
        }
        let k = self.fan_in();
        gemm(self.out_channels, k, plane, &self.weight, (k, 1), &cols, (plane, 1), 1.0, &mut out);
        let cache = ConvCache {
            cols,
            in_h: h,
            in_w: w,
            out_h: oh,
            out_w: ow,
        };
        (out, cache)
    }

    pub fn backward(&self, dout: &[f64], cache: &ConvCache, grad: &mut Conv2d) -> Vec<f64> {
        let plane = cache.out_h * cache.out_w;
        let k = self.fan_in();
        debug_assert_eq!(dout.len(), self.out_channels * plane);
        // dW += dout * cols^T
        gemm(self.out_channels, plane, k, dout, (plane, 1), &cache.cols, (1, plane), 1.0, &mut grad.weight);
        for (o, chunk) in dout.chunks_exact(plane).enumerate() {
            grad.bias[o] += chunk.iter().sum::<f64>();
        }
        // dcols = W^T * dout
        let mut dcols = vec![0.0; k * plane];
        gemm(k, self.out_channels, plane, &self.weight, (1, k), dout, (plane, 1), 0.0, &mut dcols);
        self.col2im(&dcols, cache.in_h, cache.in_w, cache.out_h, cache.out_w)
    }
}

/// Fully connected layer `y = W x + b`, `W` stored `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through a rectifier given its pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// Mean over each `plane`-sized channel.
pub fn global_avg_pool(x: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    x.chunks_exact(plane)
        .take(channels)
        .map(|c| c.iter().sum::<f64>() / plane as f64)
        .collect()
}

pub fn global_avg_pool_backward(dy: &[f64], plane: usize) -> Vec<f64> {
    dy.iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect()
}

/// Mean softmax cross-entropy of one sample and its gradient w.r.t. logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[target] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / z - if i == target { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}
