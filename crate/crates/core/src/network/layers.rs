use rand::Rng;

use super::tensor::{gemm, mat, FeatureMap, Tensor};

/// Same-padded 2-D convolution with bias; `weight` is `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(input: usize, output: usize, kernel: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input, kernel, kernel]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(input: usize, output: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(input, output, kernel);
        let bound = 1.0 / ((input * kernel * kernel) as f64).sqrt();
        for w in conv.weight.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        conv
    }

    pub fn input_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn patch_rows(&self) -> usize {
        self.input_channels() * self.kernel() * self.kernel()
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.channels, self.input_channels());
        let n = x.pixels();
        let cout = self.output_channels();
        let mut out = FeatureMap::zeros(cout, x.height, x.width);
        for (o, b) in self.bias.data().iter().enumerate() {
            out.data[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        let w = mat(self.weight.data(), cout, self.patch_rows());
        if self.kernel() == 1 {
            gemm(1.0, w, x.view(), 1.0, &mut out.data);
        } else {
            let cols = im2col(x, self.kernel());
            gemm(1.0, w, mat(&cols, self.patch_rows(), n), 1.0, &mut out.data);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &FeatureMap, dy: &FeatureMap, grad: &mut Conv2d) -> FeatureMap {
        let n = x.pixels();
        let cout = self.output_channels();
        let rows = self.patch_rows();
        for (o, g) in grad.bias.data_mut().iter_mut().enumerate() {
            *g += dy.channel(o).iter().sum::<f64>();
        }
        let dyv = dy.view();
        let w = mat(self.weight.data(), cout, rows);
        if self.kernel() == 1 {
            gemm(1.0, dyv, x.view().t(), 1.0, grad.weight.data_mut());
            let mut dx = FeatureMap::zeros(x.channels, x.height, x.width);
            gemm(1.0, w.t(), dyv, 0.0, &mut dx.data);
            dx
        } else {
            let cols = im2col(x, self.kernel());
            gemm(1.0, dyv, mat(&cols, rows, n).t(), 1.0, grad.weight.data_mut());
            let mut dcols = vec![0.0; rows * n];
            gemm(1.0, w.t(), dyv, 0.0, &mut dcols);
            col2im(&dcols, x.channels, x.height, x.width, self.kernel())
        }
    }
}

/// Patch matrix `(channels * k * k) × pixels` with zero padding of `k / 2`.
fn im2col(x: &FeatureMap, k: usize) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; x.channels * k * k * n];
    for c in 0..x.channels {
        let plane = x.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let (x0, x1) = (0.max(-dx) as usize, (w as isize).min(w as isize - dx) as usize);
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src = &plane[sr as usize * w..(sr as usize + 1) * w];
                    let d = &mut dst[r * w..(r + 1) * w];
                    for cc in x0..x1 {
                        d[cc] = src[(cc as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize) -> FeatureMap {
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut out = FeatureMap::zeros(channels, h, w);
    for c in 0..channels {
        let plane = &mut out.data[c * n..(c + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let (x0, x1) = (0.max(-dx) as usize, (w as isize).min(w as isize - dx) as usize);
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let s = &src[r * w..(r + 1) * w];
                    let d = &mut plane[sr as usize * w..(sr as usize + 1) * w];
                    for cc in x0..x1 {
                        d[(cc as isize + dx) as usize] += s[cc];
                    }
                }
            }
        }
    }
    out
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GeLU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn gelu_map(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: x.data.iter().map(|&v| gelu(v)).collect(),
        ..*x
    }
}

/// `dy * gelu'(pre)` elementwise.
pub(crate) fn gelu_backward(pre: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: pre
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&p, &g)| g * gelu_grad(p))
            .collect(),
        ..*pre
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureMap {
        FeatureMap {
            channels: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn naive_conv(conv: &Conv2d, x: &FeatureMap) -> FeatureMap {
        let k = conv.kernel();
        let pad = (k / 2) as isize;
        let cout = conv.output_channels();
        let mut out = FeatureMap::zeros(cout, x.height, x.width);
        for o in 0..cout {
            for r in 0..x.height {
                for c in 0..x.width {
                    let mut s = conv.bias.data()[o];
                    for i in 0..x.channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sr = r as isize + ky as isize - pad;
                                let sc = c as isize + kx as isize - pad;
                                if sr < 0 || sc < 0 || sr >= x.height as isize || sc >= x.width as isize {
                                    continue;
                                }
                                let wv = conv.weight.data()[((o * x.channels + i) * k + ky) * k + kx];
                                s += wv * x.data[(i * x.height + sr as usize) * x.width + sc as usize];
                            }
                        }
                    }
                    out.data[(o * x.height + r) * x.width + c] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 3] {
            let mut conv = Conv2d::init(3, 4, k, &mut rng);
            conv.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let x = random_map(3, 5, 4, &mut rng);
            let fast = conv.forward(&x);
            let slow = naive_conv(&conv, &x);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv_lin(x), dy> = <x, dx> for the bias-free part
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::init(2, 3, 3, &mut rng);
        let x = random_map(2, 4, 6, &mut rng);
        let dy = random_map(3, 4, 6, &mut rng);
        let y = conv.forward(&x);
        let mut g = Conv2d::zeros(2, 3, 3);
        let dx = conv.backward(&x, &dy, &mut g);
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // weight gradient: <y, dy> is linear in w, so <w, dw> = <y, dy>
        let wdw: f64 = conv.weight.data().iter().zip(g.weight.data()).map(|(a, b)| a * b).sum();
        assert!((wdw - lhs).abs() < 1e-10);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
