//! Frame preprocessing (bicubic resize, histogram equalization) and seeded
//! clip augmentation.
//!
//! Augmentation draws one parameter set per clip and applies it to every
//! frame, in this order: rotation/translation/scale (bilinear, zero fill) →
//! brightness and contrast → Gaussian blur (with probability `blur_prob`) →
//! salt-and-pepper → additive Gaussian noise → clamp to `[0, 1]`.
//! Saturation and hue factors are drawn for compatibility with color
//! pipelines but leave single-channel frames unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::ViewClip;
use crate::error::{ensure_contract, Error, Result};
use crate::rng::rng_for;

/// Keys cubic convolution kernel with `a = -0.75`.
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.75;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output index: the four source taps (border-replicated) and weights.
fn cubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            let x0 = x.floor();
            let frac = x - x0;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = x0 as i64 + k as i64 - 1;
                idx[k] = i.clamp(0, src as i64 - 1) as usize;
                w[k] = cubic_weight(frac - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic resampling of a row-major `h`×`w` frame to `out_h`×`out_w`,
/// with half-pixel-centered sampling and replicated borders. The output is
/// clamped to `[0, 1]`; same-size input is returned unchanged.
pub fn resize_bicubic(frame: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    ensure_contract!(h >= 4 && w >= 4, "bicubic resize needs at least 4x4 input, got {h}x{w}");
    ensure_contract!(out_h > 0 && out_w > 0, "bicubic resize to an empty frame");
    ensure_contract!(frame.len() == h * w, "frame holds {} values, expected {}", frame.len(), h * w);
    if (h, w) == (out_h, out_w) {
        return Ok(frame.to_vec());
    }
    let xt = cubic_taps(w, out_w);
    let yt = cubic_taps(h, out_h);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        let src = &frame[y * w..(y + 1) * w];
        for (x, (idx, wt)) in xt.iter().enumerate() {
            rows[y * out_w + x] = (0..4).map(|k| wt[k] * src[idx[k]]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, (idx, wt)) in yt.iter().enumerate() {
        for x in 0..out_w {
            let v: f64 = (0..4).map(|k| wt[k] * rows[idx[k] * out_w + x]).sum();
            out[y * out_w + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// 256-bin histogram equalization: each value maps to the cumulative
/// fraction of pixels in its bin or below. A frame occupying a single bin is
/// returned unchanged.
pub fn histogram_equalize(frame: &[f64]) -> Vec<f64> {
    let bin = |v: f64| ((v * 256.0).floor().max(0.0) as usize).min(255);
    let mut hist = [0usize; 256];
    frame.iter().for_each(|&v| hist[bin(v)] += 1);
    if hist.iter().filter(|&&c| c > 0).count() <= 1 {
        return frame.to_vec();
    }
    let total = frame.len() as f64;
    let mut cdf = [0.0; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc as f64 / total;
    }
    frame.iter().map(|&v| cdf[bin(v)]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Interval for the brightness, contrast, saturation and hue factors.
    pub jitter_interval: [f64; 2],
    pub blur_kernel: [usize; 2],
    pub blur_sigma: [f64; 2],
    pub blur_prob: f64,
    pub saltpepper_threshold: f64,
    pub gauss_noise_std: f64,
    pub rotation_deg: [f64; 2],
    /// Maximum translation as a fraction of the frame size, per axis.
    pub translate_frac: f64,
    pub scale_range: [f64; 2],
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter_interval: [0.3, 1.7],
            blur_kernel: [5, 5],
            blur_sigma: [3.5, 3.5],
            blur_prob: 0.55,
            saltpepper_threshold: 0.05,
            gauss_noise_std: 0.2,
            rotation_deg: [-20.0, 20.0],
            translate_frac: 0.14,
            scale_range: [0.7, 1.2],
        }
    }
}

impl AugmentParams {
    /// Parameters under which augmentation is the identity.
    pub fn identity() -> Self {
        Self {
            jitter_interval: [1.0, 1.0],
            blur_prob: 0.0,
            saltpepper_threshold: 0.0,
            gauss_noise_std: 0.0,
            rotation_deg: [0.0, 0.0],
            translate_frac: 0.0,
            scale_range: [1.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("augmentation: {m}")));
        for (name, [lo, hi]) in [
            ("jitter_interval", self.jitter_interval),
            ("rotation_deg", self.rotation_deg),
            ("scale_range", self.scale_range),
        ] {
            if !(lo <= hi) {
                return bad(format!("{name} [{lo}, {hi}] is empty"));
            }
        }
        if self.jitter_interval[0] < 0.0 || self.scale_range[0] <= 0.0 {
            return bad("jitter factors must be nonnegative and scales positive".into());
        }
        for (name, p) in [("blur_prob", self.blur_prob), ("saltpepper_threshold", self.saltpepper_threshold)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} is not a probability"));
            }
        }
        if self.blur_kernel.iter().any(|k| k % 2 == 0) {
            return bad(format!("blur kernel {:?} must have odd sides", self.blur_kernel));
        }
        if self.blur_sigma.iter().any(|s| *s <= 0.0) || self.gauss_noise_std < 0.0 || self.translate_frac < 0.0 {
            return bad("blur sigma must be positive; noise std and translation nonnegative".into());
        }
        Ok(())
    }
}

/// The random choices made for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    /// Translation as a fraction of width and height.
    pub translate: [f64; 2],
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub blur: bool,
    /// Seed of the per-pixel noise streams.
    pub noise_seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl AugmentDraw {
    pub fn sample(params: &AugmentParams, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0xA06]);
        let t = params.translate_frac;
        Self {
            angle_deg: uniform(&mut rng, params.rotation_deg),
            translate: [uniform(&mut rng, [-t, t]), uniform(&mut rng, [-t, t])],
            scale: uniform(&mut rng, params.scale_range),
            brightness: uniform(&mut rng, params.jitter_interval),
            contrast: uniform(&mut rng, params.jitter_interval),
            saturation: uniform(&mut rng, params.jitter_interval),
            hue: uniform(&mut rng, params.jitter_interval),
            blur: rng.random::<f64>() < params.blur_prob,
            noise_seed: rng.random(),
        }
    }

    fn is_spatial_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.translate == [0.0, 0.0] && self.scale == 1.0
    }
}

/// Rotation about the frame center, scaling, then translation; sampled
/// bilinearly with zero outside the frame.
pub fn spatial_transform(frame: &[f64], h: usize, w: usize, draw: &AugmentDraw) -> Vec<f64> {
    if draw.is_spatial_identity() {
        return frame.to_vec();
    }
    let (sin, cos) = draw.angle_deg.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (tx, ty) = (draw.translate[0] * w as f64, draw.translate[1] * h as f64);
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            frame[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo translation, rotation and scale.
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = (cos * dx + sin * dy) / draw.scale + cx;
            let sy = (-sin * dx + cos * dy) / draw.scale + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            out[y * w + x] = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
        }
    }
    out
}

/// Brightness scaling, then contrast about the frame mean, clamped to `[0, 1]`.
pub fn intensity_jitter(frame: &mut [f64], brightness: f64, contrast: f64) {
    if brightness != 1.0 {
        frame.iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    }
    if contrast != 1.0 {
        let mean = frame.iter().sum::<f64>() / frame.len() as f64;
        frame
            .iter_mut()
            .for_each(|v| *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0));
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Reflect-101 index (`-1 → 1`, `n → n - 2`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(frame: &[f64], h: usize, w: usize, kernel: [usize; 2], sigma: [f64; 2]) -> Vec<f64> {
    let kx = gaussian_kernel(kernel[0], sigma[0]);
    let ky = gaussian_kernel(kernel[1], sigma[1]);
    let (rx, ry) = ((kernel[0] / 2) as i64, (kernel[1] / 2) as i64);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx
                .iter()
                .enumerate()
                .map(|(k, c)| c * frame[y * w + reflect(x as i64 + k as i64 - rx, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp[reflect(y as i64 + k as i64 - ry, h) * w + x])
                .sum();
        }
    }
    out
}

/// Sets a pixel to 0 with probability `threshold / 2` and to 1 with
/// probability `threshold / 2`.
pub fn salt_and_pepper(frame: &mut [f64], threshold: f64, rng: &mut ChaCha8Rng) {
    if threshold == 0.0 {
        return;
    }
    for v in frame.iter_mut() {
        let u: f64 = rng.random();
        if u < threshold / 2.0 {
            *v = 0.0;
        } else if u > 1.0 - threshold / 2.0 {
            *v = 1.0;
        }
    }
}

/// Adds zero-mean Gaussian noise without clamping.
pub fn add_gaussian_noise(frame: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    if std == 0.0 {
        return;
    }
    for v in frame.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += std * n;
    }
}

/// Applies a fixed draw to frame `t` of a clip.
pub fn augment_frame(frame: &[f64], h: usize, w: usize, t: usize, params: &AugmentParams, draw: &AugmentDraw) -> Vec<f64> {
    let mut f = spatial_transform(frame, h, w, draw);
    intensity_jitter(&mut f, draw.brightness, draw.contrast);
    if draw.blur {
        f = gaussian_blur(&f, h, w, params.blur_kernel, params.blur_sigma);
    }
    let mut rng = rng_for(draw.noise_seed, &[t as u64]);
    salt_and_pepper(&mut f, params.saltpepper_threshold, &mut rng);
    add_gaussian_noise(&mut f, params.gauss_noise_std, &mut rng);
    f.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    f
}

/// Augments every frame of `clip` with one draw seeded by `seed`.
pub fn augment_clip(clip: &ViewClip, params: &AugmentParams, seed: u64) -> ViewClip {
    let draw = AugmentDraw::sample(params, seed);
    augment_clip_with(clip, params, &draw)
}

pub fn augment_clip_with(clip: &ViewClip, params: &AugmentParams, draw: &AugmentDraw) -> ViewClip {
    let mut data = Vec::with_capacity(clip.data.len());
    for t in 0..clip.num_frames {
        let f: Vec<f64> = clip.frame(t).iter().map(|&v| v as f64).collect();
        let out = augment_frame(&f, clip.height, clip.width, t, params, draw);
        data.extend(out.into_iter().map(|v| v as f32));
    }
    ViewClip { data, ..clip.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::View;

    fn ramp(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()
    }

    #[test]
    fn resize_constant_and_identity() {
        let c = vec![0.37; 50 * 70];
        let r = resize_bicubic(&c, 50, 70, 128, 128).unwrap();
        assert!(r.iter().all(|v| (v - 0.37).abs() < 1e-12));
        let f = ramp(128, 128);
        assert_eq!(resize_bicubic(&f, 128, 128, 128, 128).unwrap(), f);
        assert!(resize_bicubic(&[0.0; 9], 3, 3, 8, 8).is_err());
    }

    #[test]
    fn resize_matches_direct_kernel_sum() {
        let n = 256;
        let board: Vec<f64> = (0..n * n)
            .map(|i| if ((i / n) / 8 + (i % n) / 8) % 2 == 0 { 0.9 } else { 0.1 })
            .collect();
        let out = resize_bicubic(&board, n, n, 128, 128).unwrap();
        let reference = |oy: usize, ox: usize| {
            let sy = (oy as f64 + 0.5) * 2.0 - 0.5;
            let sx = (ox as f64 + 0.5) * 2.0 - 0.5;
            let mut acc = 0.0;
            for iy in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                for ix in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                    let py = iy.clamp(0, n as i64 - 1) as usize;
                    let px = ix.clamp(0, n as i64 - 1) as usize;
                    acc += cubic_weight(sy - iy as f64) * cubic_weight(sx - ix as f64) * board[py * n + px];
                }
            }
            acc.clamp(0.0, 1.0)
        };
        for (oy, ox) in [(0, 0), (3, 4), (7, 100), (50, 50), (64, 3), (90, 127), (127, 127), (11, 61), (100, 20)] {
            assert!((out[oy * 128 + ox] - reference(oy, ox)).abs() < 1e-3);
        }
    }

    #[test]
    fn equalization_cases() {
        let c = vec![0.42; 100];
        assert_eq!(histogram_equalize(&c), c);
        let mut two = vec![0.2; 40];
        two.extend(vec![0.8; 60]);
        let eq = histogram_equalize(&two);
        assert!((eq[0] - 0.4).abs() < 1e-12);
        assert!((eq[99] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equalized_values_are_close_to_uniform() {
        let mut rng = rng_for(1, &[]);
        // Level k of a 64-level frame appears with weight k + 1.
        let weights: Vec<f64> = (1..=64).map(f64::from).collect();
        let levels = rand_distr::weighted::WeightedIndex::new(&weights).unwrap();
        let stepped: Vec<f64> = (0..128 * 128).map(|_| (levels.sample(&mut rng) as f64 + 0.5) / 64.0).collect();
        let smooth = |p: f64, rng: &mut ChaCha8Rng| (0..128 * 128).map(|_| rng.random::<f64>().powf(p)).collect::<Vec<f64>>();
        let frames = [smooth(0.5, &mut rng), smooth(1.0, &mut rng), smooth(1.5, &mut rng), stepped];
        for (case, f) in frames.iter().enumerate() {
            let mut eq = histogram_equalize(f);
            eq.sort_by(f64::total_cmp);
            let n = eq.len() as f64;
            let ks = eq
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - i as f64 / n).abs().max((v - (i + 1) as f64 / n).abs()))
                .fold(0.0, f64::max);
            assert!(ks < 0.05, "frame {case}: KS distance {ks}");
        }
    }

    fn clip() -> ViewClip {
        let data: Vec<f32> = ramp(3 * 32, 32).into_iter().map(|v| v as f32).collect();
        ViewClip::new(View::A4c, 3, 32, 32, data).unwrap()
    }

    #[test]
    fn identity_parameters_pass_through_bit_exactly() {
        let c = clip();
        for seed in 0..5 {
            assert_eq!(augment_clip(&c, &AugmentParams::identity(), seed), c);
        }
    }

    #[test]
    fn augmentation_is_deterministic_and_in_range() {
        let c = clip();
        let p = AugmentParams::default();
        for seed in 0..10 {
            let a = augment_clip(&c, &p, seed);
            assert_eq!(a, augment_clip(&c, &p, seed));
            assert_eq!(a.shape(), c.shape());
            assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn one_spatial_transform_for_all_frames() {
        let p = AugmentParams {
            jitter_interval: [1.0, 1.0],
            blur_prob: 0.0,
            saltpepper_threshold: 0.0,
            gauss_noise_std: 0.0,
            ..AugmentParams::default()
        };
        let c = clip();
        let draw = AugmentDraw::sample(&p, 11);
        let a = augment_clip(&c, &p, 11);
        for t in 0..3 {
            let f: Vec<f64> = c.frame(t).iter().map(|&v| v as f64).collect();
            let expected = spatial_transform(&f, 32, 32, &draw);
            for (x, y) in a.frame(t).iter().zip(&expected) {
                assert_eq!(*x, y.clamp(0.0, 1.0) as f32);
            }
        }
    }

    #[test]
    fn pure_translation_shifts_pixels() {
        let f = ramp(16, 16);
        let draw = AugmentDraw {
            angle_deg: 0.0,
            translate: [2.0 / 16.0, 0.0],
            scale: 1.0,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 1.0,
            blur: false,
            noise_seed: 0,
        };
        let out = spatial_transform(&f, 16, 16, &draw);
        for y in 0..16 {
            assert_eq!(out[y * 16], 0.0);
            for x in 2..16 {
                assert!((out[y * 16 + x] - f[y * 16 + x - 2]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_preserves_constants_and_fires_at_its_rate() {
        let c = vec![0.3; 20 * 20];
        let b = gaussian_blur(&c, 20, 20, [5, 5], [3.5, 3.5]);
        assert!(b.iter().all(|v| (v - 0.3).abs() < 1e-12));
        let p = AugmentParams::default();
        let fired = (0..10_000).filter(|s| AugmentDraw::sample(&p, *s).blur).count();
        assert!((fired as f64 / 1e4 - 0.55).abs() < 0.03);
    }

    #[test]
    fn noise_stages_have_their_stated_statistics() {
        let mut rng = rng_for(3, &[]);
        let mut f = vec![0.5; 10_000];
        salt_and_pepper(&mut f, 0.05, &mut rng);
        let sat = f.iter().filter(|v| **v == 0.0 || **v == 1.0).count() as f64 / 1e4;
        assert!((sat - 0.05).abs() < 0.01, "{sat}");

        let mut g = vec![0.5; 10_000];
        add_gaussian_noise(&mut g, 0.2, &mut rng);
        let mean = g.iter().sum::<f64>() / 1e4;
        let std = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e4).sqrt();
        assert!((std / 0.2 - 1.0).abs() < 0.05, "{std}");
    }

    #[test]
    fn default_params_match_the_stated_values() {
        let p = AugmentParams::default();
        p.validate().unwrap();
        assert_eq!(p.jitter_interval, [0.3, 1.7]);
        assert_eq!((p.blur_kernel, p.blur_sigma, p.blur_prob), ([5, 5], [3.5, 3.5], 0.55));
        assert_eq!((p.saltpepper_threshold, p.gauss_noise_std), (0.05, 0.2));
        assert_eq!((p.rotation_deg, p.translate_frac, p.scale_range), ([-20.0, 20.0], 0.14, [0.7, 1.2]));
        let bad = AugmentParams {
            blur_prob: 1.5,
            ..p
        };
        assert!(bad.validate().is_err());
    }
}
