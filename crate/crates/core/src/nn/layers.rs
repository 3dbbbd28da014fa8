use rand_chacha::ChaCha8Rng;

use super::{Module, Param, Tensor};

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(name: &str, in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((in_c * 9) as f64).sqrt();
        Self {
            in_c,
            out_c,
            weight: Param::uniform(format!("{name}.weight"), vec![out_c, in_c, 3, 3], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![out_c], bound, rng),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_c, "conv input channels");
        let mut out = Tensor::zeros([n, self.out_c, h, w]);
        let plane = h * w;
        for b in 0..n {
            let xin = x.item(b);
            let yout = &mut out.data_mut()[b * self.out_c * plane..(b + 1) * self.out_c * plane];
            for co in 0..self.out_c {
                let oplane = &mut yout[co * plane..(co + 1) * plane];
                oplane.fill(self.bias.value[co]);
                for ci in 0..self.in_c {
                    let iplane = &xin[ci * plane..(ci + 1) * plane];
                    let wk = &self.weight.value[(co * self.in_c + ci) * 9..(co * self.in_c + ci + 1) * 9];
                    for ky in 0..3 {
                        let (y0, y1) = valid_range(h, ky);
                        let taps = [wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]];
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            row_conv3(&mut oplane[y * w..(y + 1) * w], &iplane[iy * w..(iy + 1) * w], taps);
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self.input.as_ref().expect("conv backward before forward");
        let [n, _, h, w] = x.shape();
        let plane = h * w;
        let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for b in 0..n {
            let xin = x.item(b);
            let gout = gy.item(b);
            for co in 0..self.out_c {
                let gplane = &gout[co * plane..(co + 1) * plane];
                self.bias.grad[co] += gplane.iter().sum::<f64>();
                for ci in 0..self.in_c {
                    let iplane = &xin[ci * plane..(ci + 1) * plane];
                    let widx = (co * self.in_c + ci) * 9;
                    for ky in 0..3 {
                        let (y0, y1) = valid_range(h, ky);
                        let mut acc = [0.0; 3];
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let s = row_corr3(&gplane[y * w..(y + 1) * w], &iplane[iy * w..(iy + 1) * w]);
                            acc[0] += s[0];
                            acc[1] += s[1];
                            acc[2] += s[2];
                        }
                        for kx in 0..3 {
                            self.weight.grad[widx + ky * 3 + kx] += acc[kx];
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wv = &self.weight.value[widx + ky * 3..widx + ky * 3 + 3];
                            let taps = [wv[2], wv[1], wv[0]];
                            let gxp = &mut gx.data_mut()[(b * self.in_c + ci) * plane..(b * self.in_c + ci + 1) * plane];
                            for y in y0..y1 {
                                let iy = y + ky - 1;
                                row_conv3(&mut gxp[iy * w..(iy + 1) * w], &gplane[y * w..(y + 1) * w], taps);
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

impl Module for Conv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Output positions `p` for which `p + k - 1` is inside `[0, len)`.
fn valid_range(len: usize, k: usize) -> (usize, usize) {
    match k {
        0 => (1, len),
        1 => (0, len),
        _ => (0, len.saturating_sub(1)),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[x] += k0·inp[x-1] + k1·inp[x] + k2·inp[x+1]`, zero outside the row.
#[inline]
fn row_conv3(out: &mut [f64], inp: &[f64], k: [f64; 3]) {
    let w = out.len();
    debug_assert_eq!(w, inp.len());
    if w == 1 {
        out[0] += k[1] * inp[0];
        return;
    }
    out[0] += k[1] * inp[0] + k[2] * inp[1];
    out[w - 1] += k[0] * inp[w - 2] + k[1] * inp[w - 1];
    let o = &mut out[1..w - 1];
    let (a, bb, c) = (&inp[..w - 2], &inp[1..w - 1], &inp[2..]);
    for (((o, a), bb), c) in o.iter_mut().zip(a).zip(bb).zip(c) {
        *o += k[0] * a + k[1] * bb + k[2] * c;
    }
}

/// `s[k] = Σ_x g[x]·inp[x + k - 1]` for k = 0, 1, 2.
#[inline]
fn row_corr3(g: &[f64], inp: &[f64]) -> [f64; 3] {
    let w = g.len();
    debug_assert_eq!(w, inp.len());
    let mid = dot(g, inp);
    if w == 1 {
        return [0.0, mid, 0.0];
    }
    [dot(&g[1..], &inp[..w - 1]), mid, dot(&g[..w - 1], &inp[1..])]
}

/// 3×3 transposed convolution with padding 1. Stride 2 doubles the spatial
/// size (output padding 1); stride 1 preserves it.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(name: &str, in_c: usize, out_c: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(stride == 1 || stride == 2, "only strides 1 and 2 are supported");
        let bound = 1.0 / ((out_c * 9) as f64).sqrt();
        Self {
            in_c,
            out_c,
            stride,
            weight: Param::uniform(format!("{name}.weight"), vec![in_c, out_c, 3, 3], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![out_c], bound, rng),
            input: None,
        }
    }

    /// Input index range `[lo, hi)` whose output `i*s + k - 1` is inside `[0, len*s)`.
    fn input_range(&self, len: usize, k: usize) -> (usize, usize) {
        let lo = usize::from(k == 0);
        let hi = if self.stride == 1 && k == 2 { len - 1 } else { len };
        (lo, hi)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_c, "transposed conv input channels");
        let s = self.stride;
        let (ho, wo) = (h * s, w * s);
        let mut out = Tensor::zeros([n, self.out_c, ho, wo]);
        let (ip, op) = (h * w, ho * wo);
        for b in 0..n {
            let xin = x.item(b);
            let yout = &mut out.data_mut()[b * self.out_c * op..(b + 1) * self.out_c * op];
            for co in 0..self.out_c {
                yout[co * op..(co + 1) * op].fill(self.bias.value[co]);
            }
            for ci in 0..self.in_c {
                let iplane = &xin[ci * ip..(ci + 1) * ip];
                for co in 0..self.out_c {
                    let oplane = &mut yout[co * op..(co + 1) * op];
                    let widx = (ci * self.out_c + co) * 9;
                    for ky in 0..3 {
                        let (y0, y1) = self.input_range(h, ky);
                        for kx in 0..3 {
                            let (x0, x1) = self.input_range(w, kx);
                            let wv = self.weight.value[widx + ky * 3 + kx];
                            for iy in y0..y1 {
                                let oy = iy * s + ky - 1;
                                let irow = &iplane[iy * w..(iy + 1) * w];
                                let orow = &mut oplane[oy * wo..(oy + 1) * wo];
                                if s == 1 {
                                    let dst = &mut orow[x0 + kx - 1..x1 + kx - 1];
                                    for (o, i) in dst.iter_mut().zip(&irow[x0..x1]) {
                                        *o += wv * i;
                                    }
                                } else {
                                    for ix in x0..x1 {
                                        orow[ix * 2 + kx - 1] += wv * irow[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self.input.as_ref().expect("transposed conv backward before forward");
        let [n, _, h, w] = x.shape();
        let s = self.stride;
        let (ho, wo) = (h * s, w * s);
        let (ip, op) = (h * w, ho * wo);
        let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for b in 0..n {
            let xin = x.item(b);
            let gout = gy.item(b);
            for co in 0..self.out_c {
                self.bias.grad[co] += gout[co * op..(co + 1) * op].iter().sum::<f64>();
            }
            for ci in 0..self.in_c {
                let iplane = &xin[ci * ip..(ci + 1) * ip];
                for co in 0..self.out_c {
                    let gplane = &gout[co * op..(co + 1) * op];
                    let widx = (ci * self.out_c + co) * 9;
                    for ky in 0..3 {
                        let (y0, y1) = self.input_range(h, ky);
                        for kx in 0..3 {
                            let (x0, x1) = self.input_range(w, kx);
                            let wv = self.weight.value[widx + ky * 3 + kx];
                            let mut acc = 0.0;
                            for iy in y0..y1 {
                                let oy = iy * s + ky - 1;
                                let irow = &iplane[iy * w..(iy + 1) * w];
                                let grow = &gplane[oy * wo..(oy + 1) * wo];
                                if s == 1 {
                                    acc += dot(&irow[x0..x1], &grow[x0 + kx - 1..x1 + kx - 1]);
                                } else {
                                    for ix in x0..x1 {
                                        acc += irow[ix] * grow[ix * 2 + kx - 1];
                                    }
                                }
                            }
                            self.weight.grad[widx + ky * 3 + kx] += acc;
                            if let Some(gx) = gx.as_mut() {
                                let gxp =
                                    &mut gx.data_mut()[(b * self.in_c + ci) * ip..(b * self.in_c + ci + 1) * ip];
                                for iy in y0..y1 {
                                    let oy = iy * s + ky - 1;
                                    let grow = &gplane[oy * wo..(oy + 1) * wo];
                                    let xrow = &mut gxp[iy * w..(iy + 1) * w];
                                    if s == 1 {
                                        for (o, g) in xrow[x0..x1].iter_mut().zip(&grow[x0 + kx - 1..x1 + kx - 1]) {
                                            *o += wv * g;
                                        }
                                    } else {
                                        for ix in x0..x1 {
                                            xrow[ix] += wv * grow[ix * 2 + kx - 1];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

impl Module for ConvTranspose2d {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Batch normalization over all axes but the channel axis. Works for both
/// feature maps `[n, c, h, w]` and matrices `[n, c, 1, 1]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.weight"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.bias"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    /// `train` normalizes with batch statistics and updates the running ones.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batch norm channels");
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += x.item(b)[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += x.item(b)[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / count;
                let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                let m = self.momentum;
                self.running_mean.value[ch] = (1.0 - m) * self.running_mean.value[ch] + m * mean;
                self.running_var.value[ch] = (1.0 - m) * self.running_var.value[ch] + m * unbiased;
                (mean, var)
            } else {
                (self.running_mean.value[ch], self.running_var.value[ch])
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x.data()[i] - mean) * is;
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = g * xh + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats: train,
        });
        out
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let [n, c, h, w] = gy.shape();
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut gx = Tensor::zeros(gy.shape());
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    sum_g += gy.data()[i];
                    sum_gx += gy.data()[i] * cache.xhat.data()[i];
                }
            }
            self.beta.grad[ch] += sum_g;
            self.gamma.grad[ch] += sum_gx;
            let g = self.gamma.value[ch];
            let is = cache.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    gx.data_mut()[i] = if cache.batch_stats {
                        g * is / count * (count * gy.data()[i] - sum_g - cache.xhat.data()[i] * sum_gx)
                    } else {
                        g * is * gy.data()[i]
                    };
                }
            }
        }
        gx
    }
}

impl Module for BatchNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data().iter().map(|v| *v > 0.0).collect();
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::from_vec(x.shape(), data)
    }

    pub fn backward(&self, gy: &Tensor) -> Tensor {
        let data = gy
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(g, m)| if *m { *g } else { 0.0 })
            .collect();
        Tensor::from_vec(gy.shape(), data)
    }
}

/// 2×2 max pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    in_shape: [usize; 4],
    argmax: Vec<usize>,
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert!(h % 2 == 0 && w % 2 == 0, "max pool needs even spatial size, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, ho, wo]);
        self.argmax = vec![0; n * c * ho * wo];
        self.in_shape = x.shape();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i0 = base + 2 * oy * w + 2 * ox;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if x.data()[cand] > x.data()[best] {
                            best = cand;
                        }
                    }
                    let o = p * ho * wo + oy * wo + ox;
                    out.data_mut()[o] = x.data()[best];
                    self.argmax[o] = best;
                }
            }
        }
        out
    }

    pub fn backward(&self, gy: &Tensor) -> Tensor {
        let mut gx = Tensor::zeros(self.in_shape);
        for (o, &src) in self.argmax.iter().enumerate() {
            gx.data_mut()[src] += gy.data()[o];
        }
        gx
    }
}

/// Fully connected layer; weight stored `[out, in]` row-major.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_f as f64).sqrt();
        Self {
            in_f,
            out_f,
            weight: Param::uniform(format!("{name}.weight"), vec![out_f, in_f], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![out_f], bound, rng),
            input: None,
        }
    }

    /// Accepts any `[n, ...]` tensor whose item length equals `in_f`.
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.item_len(), self.in_f, "linear input features");
        let n = x.n();
        let mut out = vec![0.0; n * self.out_f];
        for b in 0..n {
            let xi = x.item(b);
            for o in 0..self.out_f {
                let row = &self.weight.value[o * self.in_f..(o + 1) * self.in_f];
                out[b * self.out_f + o] = self.bias.value[o] + dot(row, xi);
            }
        }
        self.input = Some(x.clone());
        Tensor::matrix(n, self.out_f, out)
    }

    /// Input gradient has the shape of the cached input.
    pub fn backward(&mut self, gy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self.input.as_ref().expect("linear backward before forward");
        let n = x.n();
        let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for b in 0..n {
            let xi = x.item(b);
            let gi = gy.item(b);
            for o in 0..self.out_f {
                let g = gi[o];
                if g == 0.0 {
                    continue;
                }
                self.bias.grad[o] += g;
                let wrow = &mut self.weight.grad[o * self.in_f..(o + 1) * self.in_f];
                for (wg, xv) in wrow.iter_mut().zip(xi) {
                    *wg += g * xv;
                }
                if let Some(gx) = gx.as_mut() {
                    let row = &self.weight.value[o * self.in_f..(o + 1) * self.in_f];
                    let dst = &mut gx.data_mut()[b * self.in_f..(b + 1) * self.in_f];
                    for (d, wv) in dst.iter_mut().zip(row) {
                        *d += g * wv;
                    }
                }
            }
        }
        gx
    }
}

impl Module for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    out: Option<Tensor>,
}

impl Sigmoid {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let out = Tensor::from_vec(x.shape(), data);
        self.out = Some(out.clone());
        out
    }

    pub fn backward(&self, gy: &Tensor) -> Tensor {
        let y = self.out.as_ref().expect("sigmoid backward before forward");
        let data = gy
            .data()
            .iter()
            .zip(y.data())
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        Tensor::from_vec(gy.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Weighted sum of outputs with fixed random weights; its gradient w.r.t.
    /// the output is exactly those weights.
    fn probe(y: &Tensor, wts: &Tensor) -> f64 {
        y.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
    }

    fn check_input_grad(
        x: &Tensor,
        mut f: impl FnMut(&Tensor) -> Tensor,
        analytic: &Tensor,
        wts: &Tensor,
    ) {
        let h = 1e-5;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up = probe(&f(&xp), wts);
            xp.data_mut()[i] -= 2.0 * h;
            let down = probe(&f(&xp), wts);
            let fd = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() < 1e-6 * (1.0 + a.abs()), "input {i}: fd {fd} analytic {a}");
        }
    }

    #[test]
    fn conv_forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new("c", 2, 3, &mut rng);
        let x = rand_tensor([2, 2, 5, 6], &mut rng);
        let y = conv.forward(&x);
        for b in 0..2 {
            for co in 0..3 {
                for yy in 0..5i64 {
                    for xx in 0..6i64 {
                        let mut acc = conv.bias.value[co];
                        for ci in 0..2 {
                            for ky in 0..3i64 {
                                for kx in 0..3i64 {
                                    let (iy, ix) = (yy + ky - 1, xx + kx - 1);
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize];
                                    acc += wv * x.data()[((b * 2 + ci) * 5 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                        let got = y.data()[((b * 3 + co) * 5 + yy as usize) * 6 + xx as usize];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new("c", 2, 3, &mut rng);
        let x = rand_tensor([2, 2, 4, 5], &mut rng);
        let wts = rand_tensor([2, 3, 4, 5], &mut rng);
        conv.forward(&x);
        let gx = conv.backward(&wts, true).unwrap();
        let mut c2 = conv.clone();
        check_input_grad(&x, |t| c2.forward(t), &gx, &wts);
        // weight gradient
        let h = 1e-5;
        for i in 0..conv.weight.len() {
            let mut c = conv.clone();
            c.weight.value[i] += h;
            let up = probe(&c.forward(&x), &wts);
            c.weight.value[i] -= 2.0 * h;
            let down = probe(&c.forward(&x), &wts);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - conv.weight.grad[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn transposed_conv_shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stride in [1, 2] {
            let mut t = ConvTranspose2d::new("t", 3, 2, stride, &mut rng);
            let x = rand_tensor([2, 3, 3, 4], &mut rng);
            let y = t.forward(&x);
            assert_eq!(y.shape(), [2, 2, 3 * stride, 4 * stride]);
            let wts = rand_tensor(y.shape(), &mut rng);
            let gx = t.backward(&wts, true).unwrap();
            let mut t2 = t.clone();
            check_input_grad(&x, |v| t2.forward(v), &gx, &wts);
            let h = 1e-5;
            for i in 0..t.weight.len() {
                let mut c = t.clone();
                c.weight.value[i] += h;
                let up = probe(&c.forward(&x), &wts);
                c.weight.value[i] -= 2.0 * h;
                let down = probe(&c.forward(&x), &wts);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - t.weight.grad[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn transposed_conv_matches_scatter_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = ConvTranspose2d::new("t", 2, 2, 2, &mut rng);
        let x = rand_tensor([1, 2, 3, 3], &mut rng);
        let y = t.forward(&x);
        let mut naive = vec![0.0; 2 * 6 * 6];
        for co in 0..2 {
            for i in 0..36 {
                naive[co * 36 + i] = t.bias.value[co];
            }
        }
        for ci in 0..2 {
            for co in 0..2 {
                for iy in 0..3i64 {
                    for ix in 0..3i64 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (oy, ox) = (iy * 2 - 1 + ky, ix * 2 - 1 + kx);
                                if oy < 0 || ox < 0 || oy >= 6 || ox >= 6 {
                                    continue;
                                }
                                let wv = t.weight.value[((ci * 2 + co) * 3 + ky as usize) * 3 + kx as usize];
                                naive[co * 36 + oy as usize * 6 + ox as usize] +=
                                    wv * x.data()[ci * 9 + iy as usize * 3 + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        for (a, b) in y.data().iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new("bn", 3);
        bn.gamma.value = vec![0.5, 1.5, -0.7];
        bn.beta.value = vec![0.1, 0.0, 0.3];
        let x = rand_tensor([3, 3, 2, 2], &mut rng);
        let wts = rand_tensor(x.shape(), &mut rng);
        let y = bn.forward(&x, true);
        // normalized per channel
        for ch in 0..3 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.item(b)[ch * 4..ch * 4 + 4].to_vec())
                .map(|v| (v - bn.beta.value[ch]) / bn.gamma.value[ch])
                .collect();
            let m = vals.iter().sum::<f64>() / 12.0;
            assert!(m.abs() < 1e-10);
        }
        let gx = bn.backward(&wts);
        let mut b2 = bn.clone();
        check_input_grad(&x, |t| b2.forward(t, true), &gx, &wts);
    }

    #[test]
    fn batchnorm_eval_uses_running_statistics() {
        let mut bn = BatchNorm::new("bn", 1);
        bn.running_mean.value = vec![2.0];
        bn.running_var.value = vec![4.0 - 1e-5];
        let y = bn.forward(&Tensor::matrix(1, 1, vec![4.0]), false);
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pool_relu_linear_sigmoid_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor([2, 2, 4, 4], &mut rng);
        let mut pool = MaxPool2::default();
        let y = pool.forward(&x);
        assert_eq!(y.shape(), [2, 2, 2, 2]);
        let wts = rand_tensor(y.shape(), &mut rng);
        let gx = pool.backward(&wts);
        let mut p2 = MaxPool2::default();
        check_input_grad(&x, |t| p2.forward(t), &gx, &wts);

        let mut relu = Relu::default();
        let wts = rand_tensor(x.shape(), &mut rng);
        relu.forward(&x);
        let gx = relu.backward(&wts);
        let mut r2 = Relu::default();
        check_input_grad(&x, |t| r2.forward(t), &gx, &wts);

        let mut lin = Linear::new("l", 32, 5, &mut rng);
        let wts = rand_tensor([2, 5, 1, 1], &mut rng);
        lin.forward(&x);
        let gx = lin.backward(&wts, true).unwrap();
        assert_eq!(gx.shape(), x.shape());
        let mut l2 = lin.clone();
        check_input_grad(&x, |t| l2.forward(t), &gx, &wts);

        let mut sig = Sigmoid::default();
        let wts = rand_tensor(x.shape(), &mut rng);
        sig.forward(&x);
        let gx = sig.backward(&wts);
        let mut s2 = Sigmoid::default();
        check_input_grad(&x, |t| s2.forward(t), &gx, &wts);
    }
}
