//! Synthetic multi-view benchmark.
//!
//! Each patient is a pulsating two-chamber scene: a left-ventricle cavity
//! with a bright wall and a right-ventricle cavity beside it. The septal
//! contour between them is controlled by a flattening factor `f`: `f = 0`
//! keeps the cavity round, `f = 0.5` flattens the septum into a straight
//! line, and `f = 1` bows it into the left ventricle. `f` is drawn from a
//! class-conditional range. Every view renders the scene through its own
//! fixed projective transform and fan-shaped sector mask, sees its own noisy
//! copy of `f`, and adds multiplicative speckle.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

use super::clipfile::write_clip;
use super::manifest::{save_manifest, ClipRef, DatasetManifest, ManifestEntry, Partition};
use super::{Label, View, ViewClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub patients: usize,
    /// Proportions of none / mild / moderate-severe.
    pub class_proportions: [f64; 3],
    pub frames_per_clip: usize,
    /// Side length of the rendered (pre-resize) frames.
    pub frame_size: usize,
    pub fps: u32,
    /// Fraction of development studies whose label is withheld.
    pub unlabeled_fraction: f64,
    /// Fraction of each class's patients placed in the held-out partition.
    pub heldout_fraction: f64,
    pub views: Vec<View>,
    /// Standard deviation of the per-view perturbation of the flattening factor.
    pub view_factor_noise: f64,
    /// Relative standard deviation of multiplicative speckle.
    pub speckle: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            patients: 200,
            class_proportions: [0.65, 0.17, 0.18],
            frames_per_clip: 8,
            frame_size: 144,
            fps: 25,
            unlabeled_fraction: 0.2,
            heldout_fraction: 0.3,
            views: View::ALL.to_vec(),
            view_factor_noise: 0.12,
            speckle: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("generator: {m}")));
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.class_proportions.iter().any(|p| *p < 0.0) {
            return bad(format!("class proportions {:?} must be nonnegative and sum to 1", self.class_proportions));
        }
        if self.patients == 0 || self.frames_per_clip == 0 {
            return bad("patients and frames_per_clip must be positive".into());
        }
        if self.frame_size < 4 {
            return bad(format!("frame_size {} is below 4", self.frame_size));
        }
        if self.fps == 0 {
            return bad("fps must be positive".into());
        }
        for (name, v) in [("unlabeled_fraction", self.unlabeled_fraction), ("heldout_fraction", self.heldout_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} must lie in [0, 1)"));
            }
        }
        if self.views.is_empty() {
            return bad("at least one view is required".into());
        }
        let mut seen = self.views.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.views.len() {
            return bad("views must not repeat".into());
        }
        if self.view_factor_noise < 0.0 || self.speckle < 0.0 {
            return bad("noise levels must be nonnegative".into());
        }
        Ok(())
    }
}

/// Class-conditional range `[lo, hi)` of the flattening factor.
pub fn flattening_range(label: Label) -> (f64, f64) {
    match label {
        Label::None => (0.0, 0.2),
        Label::Mild => (0.35, 0.6),
        Label::ModerateSevere => (0.7, 1.0),
    }
}

/// Integer counts proportional to `proportions` summing to `total`; leftover
/// units go to the largest fractional remainders (earlier index on ties).
pub fn largest_remainder(total: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Fixed per-view imaging geometry.
struct ViewGeometry {
    rotation_deg: f64,
    scale: f64,
    perspective: [f64; 2],
    shift: [f64; 2],
    /// Fan half-angle in degrees and depth (normalized units from the apex).
    fan_half_angle_deg: f64,
    fan_depth: f64,
}

fn geometry(view: View) -> ViewGeometry {
    let g = |rotation_deg, scale, perspective, shift, fan_half_angle_deg, fan_depth| ViewGeometry {
        rotation_deg,
        scale,
        perspective,
        shift,
        fan_half_angle_deg,
        fan_depth,
    };
    match view {
        View::Plax => g(0.0, 1.0, [0.0, 0.0], [0.0, 0.0], 45.0, 2.2),
        View::A4c => g(90.0, 1.1, [0.12, 0.0], [0.05, 0.0], 40.0, 2.15),
        View::PsaxP => g(-30.0, 0.9, [0.0, 0.12], [0.0, 0.05], 42.0, 2.1),
        View::PsaxS => g(45.0, 1.15, [-0.1, 0.08], [-0.05, 0.0], 38.0, 2.2),
        View::PsaxA => g(150.0, 0.95, [0.08, -0.1], [0.0, -0.05], 44.0, 2.05),
    }
}

struct Patient {
    scale: f64,
    center: [f64; 2],
    period: f64,
    phase: f64,
}

/// Membership of `(dx, dy)` in the flattened disc of radius `rho`.
fn inside_chamber(dx: f64, dy: f64, rho: f64, f: f64) -> bool {
    if dy.abs() >= rho {
        return false;
    }
    let c = (1.0 - (dy / rho).powi(2)).sqrt();
    let right = rho * c;
    let left = -0.6 * rho + (2.0 * f - 1.0) * (rho * c - 0.6 * rho);
    dx <= right && dx >= left
}

fn scene_intensity(x: f64, y: f64, p: &Patient, f: f64, t: f64) -> f64 {
    let beat = (2.0 * PI * t / p.period + p.phase).sin();
    let rho = 0.36 * p.scale * (1.0 + 0.1 * beat);
    let wall = 0.12 * p.scale;
    let (dx, dy) = (x - p.center[0], y - p.center[1]);
    if inside_chamber(dx, dy, rho, f) {
        return 0.06;
    }
    if inside_chamber(dx, dy, rho + wall, f) {
        return 0.85;
    }
    let rv_cx = -(rho + wall) - 0.22 * p.scale;
    let (ex, ey) = ((dx - rv_cx) / (0.32 * p.scale * (1.0 - 0.05 * beat)), dy / (0.55 * p.scale));
    if ex * ex + ey * ey <= 1.0 {
        return 0.08;
    }
    0.32
}

fn render_clip(cfg: &GeneratorConfig, view: View, p: &Patient, f: f64, jitter: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let g = geometry(view);
    let s = cfg.frame_size;
    let (sin_r, cos_r) = (g.rotation_deg + jitter[0]).to_radians().sin_cos();
    let fan_half = g.fan_half_angle_deg.to_radians();
    let apex = -1.05;
    let mut out = Vec::with_capacity(cfg.frames_per_clip * s * s);
    for t in 0..cfg.frames_per_clip {
        for py in 0..s {
            for px in 0..s {
                let u = 2.0 * (px as f64 + 0.5) / s as f64 - 1.0;
                let v = 2.0 * (py as f64 + 0.5) / s as f64 - 1.0;
                let speck: f64 = StandardNormal.sample(rng);
                let r = (u * u + (v - apex).powi(2)).sqrt();
                let angle = u.atan2(v - apex);
                if angle.abs() > fan_half || r > g.fan_depth {
                    out.push(0.0);
                    continue;
                }
                // 2x2 supersampling of the projected scene.
                let mut acc = 0.0;
                for (ou, ov) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let uu = u + ou * 2.0 / s as f64;
                    let vv = v + ov * 2.0 / s as f64;
                    let w = 1.0 + g.perspective[0] * uu + g.perspective[1] * vv;
                    let xr = g.scale * (cos_r * uu - sin_r * vv) + g.shift[0] + jitter[1];
                    let yr = g.scale * (sin_r * uu + cos_r * vv) + g.shift[1] + jitter[2];
                    acc += scene_intensity(xr / w, yr / w, p, f, t as f64);
                }
                let val = acc / 4.0 * (1.0 + cfg.speckle * speck);
                out.push(val.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// Renders the benchmark into `out_dir` (clip files under `clips/` plus
/// `manifest.json`) and returns the manifest.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir.join("clips")).map_err(|e| Error::io(out_dir, e))?;

    let counts = largest_remainder(cfg.patients, &cfg.class_proportions);
    let mut labels: Vec<Label> = Label::ALL
        .iter()
        .zip(&counts)
        .flat_map(|(l, &n)| std::iter::repeat_n(*l, n))
        .collect();
    let mut rng = rng_for(seed, &[0x5147, 1]);
    labels.shuffle(&mut rng);

    let mut partition = vec![Partition::Dev; cfg.patients];
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..cfg.patients).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_held = (members.len() as f64 * cfg.heldout_fraction).round() as usize;
        for &i in &members[..n_held] {
            partition[i] = Partition::HeldOut;
        }
    }
    let mut dev: Vec<usize> = (0..cfg.patients).filter(|&i| partition[i] == Partition::Dev).collect();
    dev.shuffle(&mut rng);
    let n_unlabeled = (dev.len() as f64 * cfg.unlabeled_fraction).round() as usize;
    let mut labeled = vec![true; cfg.patients];
    for &i in &dev[..n_unlabeled] {
        labeled[i] = false;
    }

    let mut entries = Vec::with_capacity(cfg.patients);
    for i in 0..cfg.patients {
        let mut prng = rng_for(seed, &[0x5147, 2, i as u64]);
        let (lo, hi) = flattening_range(labels[i]);
        let f = prng.random_range(lo..hi);
        let patient = Patient {
            scale: prng.random_range(0.9..1.1),
            center: [0.2 + prng.random_range(-0.05..0.05), prng.random_range(-0.05..0.05)],
            period: prng.random_range(6.0..10.0),
            phase: prng.random_range(0.0..2.0 * PI),
        };
        let study_id = format!("S{i:04}");
        let mut clips = BTreeMap::new();
        let mut view_flattening = BTreeMap::new();
        for &view in &cfg.views {
            let mut vrng = rng_for(seed, &[0x5147, 3, i as u64, view.index() as u64]);
            let n: f64 = StandardNormal.sample(&mut vrng);
            let fv = (f + cfg.view_factor_noise * n).clamp(0.0, 1.0);
            let jitter = [
                vrng.random_range(-8.0..8.0),
                vrng.random_range(-0.04..0.04),
                vrng.random_range(-0.04..0.04),
            ];
            let data = render_clip(cfg, view, &patient, fv, jitter, &mut vrng);
            let clip = ViewClip::new(view, cfg.frames_per_clip, cfg.frame_size, cfg.frame_size, data)?.with_fps(cfg.fps, 1);
            let rel = format!("clips/{study_id}_{}.clip", view.name());
            write_clip(&out_dir.join(&rel), &clip)?;
            clips.insert(
                view,
                ClipRef {
                    path: rel,
                    shape: clip.shape(),
                },
            );
            view_flattening.insert(view, fv);
        }
        entries.push(ManifestEntry {
            study_id,
            patient_id: format!("P{i:04}"),
            label: labeled[i].then_some(labels[i]),
            partition: partition[i],
            clips,
            flattening: Some(f),
            view_flattening,
        });
    }
    let manifest = DatasetManifest::new(entries, out_dir);
    save_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            patients: 12,
            frames_per_clip: 2,
            frame_size: 24,
            unlabeled_fraction: 0.0,
            views: vec![View::A4c, View::PsaxP],
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(largest_remainder(60, &[0.65, 0.17, 0.18]), vec![39, 10, 11]);
        assert_eq!(largest_remainder(100, &[0.65, 0.17, 0.18]), vec![65, 17, 18]);
        assert_eq!(largest_remainder(200, &[0.65, 0.17, 0.18]), vec![130, 34, 36]);
        assert_eq!(largest_remainder(3, &[0.5, 0.5]), vec![2, 1]);
    }

    #[test]
    fn chamber_shape_follows_the_flattening_factor() {
        // On the horizontal axis the septal edge moves right as f grows.
        let edge = |f: f64| {
            (0..2000)
                .map(|i| -1.0 + i as f64 / 1000.0)
                .find(|&x| inside_chamber(x, 0.0, 1.0, f))
                .unwrap()
        };
        assert!((edge(0.0) + 1.0).abs() < 2e-3);
        assert!((edge(0.5) + 0.6).abs() < 2e-3);
        assert!((edge(1.0) + 0.2).abs() < 2e-3);
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_synthetic(&small(), 5, a.path()).unwrap();
        let mb = generate_synthetic(&small(), 5, b.path()).unwrap();
        assert_eq!(ma.entries, mb.entries);
        for e in &ma.entries {
            for r in e.clips.values() {
                assert_eq!(fs::read(a.path().join(&r.path)).unwrap(), fs::read(b.path().join(&r.path)).unwrap());
            }
        }
        assert_eq!(
            fs::read(a.path().join("manifest.json")).unwrap(),
            fs::read(b.path().join("manifest.json")).unwrap()
        );
    }

    #[test]
    fn bad_proportions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            class_proportions: [0.5, 0.3, 0.3],
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg, 0, dir.path()), Err(Error::Config(_))));
    }
}
