//! Deterministic synthetic corpus with context-dependent quality labels.
//!
//! Some distortions are natural for some scenes: a dark scene made darker,
//! or a fast pan made blurrier, loses little quality. The label rule
//! encodes that, so a model that judges distortion without recognizing the
//! scene is penalized.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_rgb8, write_rgb8};
use crate::rng::named_rng;
use crate::video::RawVideo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClass {
    BrightTexture,
    DarkNatural,
    FastMotionNatural,
    StaticFlat,
}

impl SceneClass {
    pub const ALL: [SceneClass; 4] = [
        SceneClass::BrightTexture,
        SceneClass::DarkNatural,
        SceneClass::FastMotionNatural,
        SceneClass::StaticFlat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::BrightTexture => "bright_texture",
            SceneClass::DarkNatural => "dark_natural",
            SceneClass::FastMotionNatural => "fast_motion_natural",
            SceneClass::StaticFlat => "static_flat",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for SceneClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scene class {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    GaussianBlur,
    AdditiveNoise,
    BrightnessDrop,
    BlockArtifact,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::GaussianBlur,
        DistortionKind::AdditiveNoise,
        DistortionKind::BrightnessDrop,
        DistortionKind::BlockArtifact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::AdditiveNoise => "additive_noise",
            DistortionKind::BrightnessDrop => "brightness_drop",
            DistortionKind::BlockArtifact => "block_artifact",
        }
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown distortion {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class: SceneClass,
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// In `[0, 1]`; 0 is the identity.
    pub severity: f64,
}

/// Blur standard deviation in pixels at severity 1.
pub const MAX_BLUR_SIGMA: f64 = 2.5;
/// Noise standard deviation (8-bit levels) at severity 1.
pub const MAX_NOISE_SIGMA: f64 = 30.0;
/// Fraction of brightness removed at severity 1.
pub const MAX_BRIGHTNESS_DROP: f64 = 0.75;
pub const BLOCK_SIZE: usize = 8;

pub fn noise_sigma(severity: f64) -> f64 {
    MAX_NOISE_SIGMA * severity
}

pub fn blur_sigma(severity: f64) -> f64 {
    MAX_BLUR_SIGMA * severity
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVideo {
    pub video: RawVideo,
    pub label: f64,
    pub scene: SceneClass,
    pub distortion: DistortionSpec,
}

/// A few oriented sinusoids plus a low-frequency tint, sampled at a moving
/// origin.
struct Pattern {
    waves: Vec<(f64, f64, f64, f64)>, // (kx, ky, phase, amplitude)
    tint: [f64; 3],
    base: f64,
    velocity: (f64, f64),
}

impl Pattern {
    fn random(rng: &mut impl Rng, period: (f64, f64), amplitude: f64, base: f64, speed: f64) -> Self {
        let waves = (0..3)
            .map(|_| {
                let p = rng.random_range(period.0..period.1);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let k = 2.0 * std::f64::consts::PI / p;
                (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..6.3), amplitude * rng.random_range(0.6..1.0))
            })
            .collect();
        let tint = [rng.random_range(0.85..1.15), rng.random_range(0.85..1.15), rng.random_range(0.85..1.15)];
        let dir = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        Pattern {
            waves,
            tint,
            base,
            velocity: (speed * dir.cos(), speed * dir.sin()),
        }
    }

    fn render(&self, frames: usize, h: usize, w: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(frames * h * w * 3);
        for t in 0..frames {
            let (ox, oy) = (self.velocity.0 * t as f64, self.velocity.1 * t as f64);
            for y in 0..h {
                for x in 0..w {
                    let (fx, fy) = (x as f64 + ox, y as f64 + oy);
                    let v = self.base + self.waves.iter().map(|&(kx, ky, ph, a)| a * (kx * fx + ky * fy + ph).sin()).sum::<f64>();
                    for c in self.tint {
                        out.push((v * c).round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
        }
        out
    }
}

/// Procedural content for one scene; a pure function of `spec`.
pub fn gen_scene(spec: &SceneSpec) -> Result<RawVideo> {
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut rng = named_rng(spec.seed, spec.class.as_str());
    let data = match spec.class {
        SceneClass::BrightTexture => Pattern::random(&mut rng, (4.0, 10.0), 28.0, 185.0, 1.0).render(t, h, w),
        SceneClass::DarkNatural => Pattern::random(&mut rng, (10.0, 28.0), 14.0, 42.0, 1.0).render(t, h, w),
        SceneClass::FastMotionNatural => Pattern::random(&mut rng, (10.0, 28.0), 40.0, 125.0, 9.0).render(t, h, w),
        SceneClass::StaticFlat => {
            // many small shapes, so block and blur damage shows at edges
            let bg = [rng.random_range(120..150u8), rng.random_range(120..150u8), rng.random_range(120..150u8)];
            let mut frame: Vec<u8> = bg.iter().copied().cycle().take(h * w * 3).collect();
            for _ in 0..10 {
                let color = [rng.random_range(60..=220u8), rng.random_range(60..=220u8), rng.random_range(60..=220u8)];
                let (rh, rw) = (rng.random_range(h / 10..=h / 3), rng.random_range(w / 10..=w / 3));
                let (y0, x0) = (rng.random_range(0..=h - rh), rng.random_range(0..=w - rw));
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        frame[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
                    }
                }
            }
            frame.repeat(t)
        }
    };
    RawVideo::new(format!("{}_{}", spec.class.as_str(), spec.seed), 30.0, t, h, w, data)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(video: &RawVideo, sigma: f64) -> Vec<u8> {
    let (t, h, w) = (video.frames(), video.height(), video.width());
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = video.data();
    let mut out = vec![0u8; src.len()];
    let mut tmp = vec![0f64; h * w * 3];
    for f in 0..t {
        let frame = video.frame(f);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (i, kv) in k.iter().enumerate() {
                        let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += kv * frame[(y * w + xx) * 3 + c] as f64;
                    }
                    tmp[(y * w + x) * 3 + c] = acc;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (i, kv) in k.iter().enumerate() {
                        let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                        acc += kv * tmp[(yy * w + x) * 3 + c];
                    }
                    out[video.offset(f, y, x) + c] = acc.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    out
}

fn blockify(video: &RawVideo, severity: f64) -> Vec<u8> {
    let (h, w) = (video.height(), video.width());
    let mut out = video.data().to_vec();
    for f in 0..video.frames() {
        for by in (0..h).step_by(BLOCK_SIZE) {
            for bx in (0..w).step_by(BLOCK_SIZE) {
                let (ey, ex) = ((by + BLOCK_SIZE).min(h), (bx + BLOCK_SIZE).min(w));
                let n = ((ey - by) * (ex - bx)) as f64;
                for c in 0..3 {
                    let mean = (by..ey)
                        .flat_map(|y| (bx..ex).map(move |x| (y, x)))
                        .map(|(y, x)| video.data()[video.offset(f, y, x) + c] as f64)
                        .sum::<f64>()
                        / n;
                    for y in by..ey {
                        for x in bx..ex {
                            let o = video.offset(f, y, x) + c;
                            let v = video.data()[o] as f64;
                            out[o] = ((1.0 - severity) * v + severity * mean).round().clamp(0.0, 255.0) as u8;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Applies a severity-parameterized degradation. Noise is seeded from the
/// video id, so the result is a pure function of `(video, d)`.
pub fn distort(video: &RawVideo, d: &DistortionSpec) -> Result<RawVideo> {
    if !(0.0..=1.0).contains(&d.severity) {
        return Err(Error::Contract(format!("severity {} outside [0, 1]", d.severity)));
    }
    if d.severity == 0.0 {
        return Ok(video.clone());
    }
    let data = match d.kind {
        DistortionKind::GaussianBlur => blur(video, blur_sigma(d.severity)),
        DistortionKind::AdditiveNoise => {
            let mut rng = named_rng(0, &format!("noise/{}", video.id));
            let normal = Normal::new(0.0, noise_sigma(d.severity)).expect("finite sigma");
            video
                .data()
                .iter()
                .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect()
        }
        DistortionKind::BrightnessDrop => {
            let scale = 1.0 - MAX_BRIGHTNESS_DROP * d.severity;
            video.data().iter().map(|&v| (v as f64 * scale).round() as u8).collect()
        }
        DistortionKind::BlockArtifact => blockify(video, d.severity),
    };
    let mut out = video.clone();
    out.data_mut().copy_from_slice(&data);
    Ok(out)
}

pub const BASE_LABEL: f64 = 80.0;
pub const INCONGRUENT_PENALTY: f64 = 60.0;
pub const CONGRUENT_PENALTY: f64 = 10.0;

/// Distortions the scene itself explains.
pub fn is_congruent(scene: SceneClass, kind: DistortionKind) -> bool {
    matches!(
        (scene, kind),
        (SceneClass::DarkNatural, DistortionKind::BrightnessDrop) | (SceneClass::FastMotionNatural, DistortionKind::GaussianBlur)
    )
}

pub fn label(scene: SceneClass, d: &DistortionSpec) -> f64 {
    let penalty = if is_congruent(scene, d.kind) {
        CONGRUENT_PENALTY
    } else {
        INCONGRUENT_PENALTY
    };
    (BASE_LABEL - penalty * d.severity).clamp(0.0, 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Every (scene, distortion) pair, round-robin.
    Train,
    /// Congruent pairs and matching incongruent ones on other scenes.
    ContextTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ContextTest => "context_test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub split: Split,
}

impl CorpusSpec {
    /// 4 × 64 × 64 videos.
    pub fn toy(count: usize, split: Split, seed: u64) -> Self {
        CorpusSpec {
            count,
            frames: 4,
            height: 64,
            width: 64,
            seed,
            split,
        }
    }
}

const CONTEXT_PAIRS: [(SceneClass, DistortionKind); 4] = [
    (SceneClass::DarkNatural, DistortionKind::BrightnessDrop),
    (SceneClass::BrightTexture, DistortionKind::BrightnessDrop),
    (SceneClass::FastMotionNatural, DistortionKind::GaussianBlur),
    (SceneClass::BrightTexture, DistortionKind::GaussianBlur),
];

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledVideo>> {
    (0..spec.count)
        .map(|i| {
            let id = format!("{}_{i:04}", spec.split.as_str());
            let (scene, kind) = match spec.split {
                Split::Train => (SceneClass::ALL[i % 4], DistortionKind::ALL[(i / 4) % 4]),
                Split::ContextTest => CONTEXT_PAIRS[i % 4],
            };
            let mut rng = named_rng(spec.seed, &id);
            let severity: f64 = rng.random_range(0.0..=1.0);
            let scene_seed: u64 = rng.random();
            let mut video = gen_scene(&SceneSpec {
                class: scene,
                seed: scene_seed,
                frames: spec.frames,
                height: spec.height,
                width: spec.width,
            })?;
            video.id = id;
            let distortion = DistortionSpec { kind, severity };
            let video = distort(&video, &distortion)?;
            Ok(LabeledVideo {
                label: label(scene, &distortion),
                video,
                scene,
                distortion,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    class: String,
    kind: String,
    severity: f64,
    label: f64,
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes every video as `.rgb8` + sidecar, plus `manifest.csv`.
pub fn write_corpus(dir: &Path, corpus: &[LabeledVideo]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST))?;
    for v in corpus {
        write_rgb8(dir, &v.video)?;
        w.serialize(ManifestRow {
            id: v.video.id.clone(),
            class: v.scene.as_str().to_string(),
            kind: v.distortion.kind.as_str().to_string(),
            severity: v.distortion.severity,
            label: v.label,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Vec<LabeledVideo>> {
    let mut r = csv::Reader::from_path(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ManifestRow = row?;
        let video = read_rgb8(&dir.join(format!("{}.rgb8", row.id)))?;
        out.push(LabeledVideo {
            video,
            label: row.label,
            scene: row.class.parse()?,
            distortion: DistortionSpec {
                kind: row.kind.parse()?,
                severity: row.severity,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: SceneClass, seed: u64) -> SceneSpec {
        SceneSpec {
            class,
            seed,
            frames: 4,
            height: 64,
            width: 64,
        }
    }

    /// Mean absolute horizontal + vertical pixel difference.
    fn gradient_energy(v: &RawVideo) -> f64 {
        let (h, w) = (v.height(), v.width());
        let mut acc = 0.0;
        let mut n = 0usize;
        for t in 0..v.frames() {
            for y in 0..h - 1 {
                for x in 0..w - 1 {
                    for c in 0..3 {
                        let p = v.data()[v.offset(t, y, x) + c] as f64;
                        acc += (p - v.data()[v.offset(t, y, x + 1) + c] as f64).abs();
                        acc += (p - v.data()[v.offset(t, y + 1, x) + c] as f64).abs();
                        n += 2;
                    }
                }
            }
        }
        acc / n as f64
    }

    #[test]
    fn scenes_are_deterministic() {
        for c in SceneClass::ALL {
            assert_eq!(gen_scene(&spec(c, 5)).unwrap(), gen_scene(&spec(c, 5)).unwrap());
        }
    }

    #[test]
    fn dark_scene_is_dark() {
        for seed in 0..20 {
            let dark = gen_scene(&spec(SceneClass::DarkNatural, seed)).unwrap().mean_luma();
            let bright = gen_scene(&spec(SceneClass::BrightTexture, seed)).unwrap().mean_luma();
            assert!(dark < 0.35 * bright, "seed {seed}: {dark} vs {bright}");
        }
    }

    #[test]
    fn static_flat_does_not_move() {
        let v = gen_scene(&spec(SceneClass::StaticFlat, 3)).unwrap();
        for t in 1..v.frames() {
            assert_eq!(v.frame(t), v.frame(0));
        }
    }

    #[test]
    fn zero_severity_is_identity() {
        let v = gen_scene(&spec(SceneClass::BrightTexture, 1)).unwrap();
        for kind in DistortionKind::ALL {
            assert_eq!(distort(&v, &DistortionSpec { kind, severity: 0.0 }).unwrap(), v);
        }
    }

    #[test]
    fn blur_removes_high_frequencies_monotonically() {
        for class in SceneClass::ALL {
            for seed in 0..3 {
                let v = gen_scene(&spec(class, seed)).unwrap();
                let mut last = f64::INFINITY;
                for s in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
                    let e = gradient_energy(&distort(&v, &DistortionSpec { kind: DistortionKind::GaussianBlur, severity: s }).unwrap());
                    assert!(e <= last + 1e-9, "{class:?} seed {seed} severity {s}: {e} > {last}");
                    last = e;
                }
            }
        }
    }

    #[test]
    fn noise_std_matches_sigma() {
        let v = RawVideo::filled("gray", 4, 64, 64, [128, 128, 128]);
        for s in [0.25, 0.5, 1.0] {
            let out = distort(&v, &DistortionSpec { kind: DistortionKind::AdditiveNoise, severity: s }).unwrap();
            let diffs: Vec<f64> = out.data().iter().map(|&x| x as f64 - 128.0).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
            let want = noise_sigma(s);
            assert!((std - want).abs() < 0.1 * want, "severity {s}: std {std} vs {want}");
        }
    }

    #[test]
    fn severity_out_of_range_is_rejected() {
        let v = RawVideo::filled("x", 1, 8, 8, [0, 0, 0]);
        assert!(distort(&v, &DistortionSpec { kind: DistortionKind::BlockArtifact, severity: 1.5 }).is_err());
    }

    #[test]
    fn label_examples() {
        for c in SceneClass::ALL {
            for k in DistortionKind::ALL {
                assert_eq!(label(c, &DistortionSpec { kind: k, severity: 0.0 }), 80.0);
            }
        }
        let d = DistortionSpec { kind: DistortionKind::BrightnessDrop, severity: 1.0 };
        assert_eq!(label(SceneClass::BrightTexture, &d), 20.0);
        assert_eq!(label(SceneClass::DarkNatural, &d), 70.0);
    }

    #[test]
    fn labels_are_bounded_and_monotone() {
        for c in SceneClass::ALL {
            for k in DistortionKind::ALL {
                let mut last = f64::INFINITY;
                for i in 0..=20 {
                    let l = label(c, &DistortionSpec { kind: k, severity: i as f64 / 20.0 });
                    assert!((0.0..=100.0).contains(&l));
                    assert!(l <= last);
                    last = l;
                }
            }
        }
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&CorpusSpec::toy(8, Split::Train, 11)).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
    }
}
