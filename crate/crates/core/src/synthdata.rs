//! Deterministic synthetic micro-expression clips.
//!
//! Each subject has an analytic texture. A class is a pair of action units;
//! each unit displaces one face zone along its own direction with a
//! ramp-and-release profile. Frames are rendered by backward warping the
//! texture, so no interpolation error enters the ground truth.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use numcore::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::facs::{format_au_string, CODEBOOK};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Brow,
    Eye,
    Cheek,
    Nose,
    Mouth,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::Brow, Zone::Eye, Zone::Cheek, Zone::Nose, Zone::Mouth];

    /// Rectangles `(y0, y1, x0, x1)` in unit face coordinates.
    pub fn rects(self) -> &'static [(f64, f64, f64, f64)] {
        match self {
            Zone::Brow => &[(0.10, 0.26, 0.14, 0.86)],
            Zone::Eye => &[(0.28, 0.42, 0.14, 0.86)],
            Zone::Cheek => &[(0.44, 0.64, 0.08, 0.34), (0.44, 0.64, 0.66, 0.92)],
            Zone::Nose => &[(0.44, 0.64, 0.38, 0.62)],
            Zone::Mouth => &[(0.68, 0.92, 0.22, 0.78)],
        }
    }

    /// Smooth weight in `[0, 1]`: 1 in the middle of a rectangle, falling to 0 at its edges.
    pub fn weight(self, y: f64, x: f64) -> f64 {
        let taper = |v: f64, lo: f64, hi: f64| {
            let u = (v - lo) / (hi - lo);
            if !(0.0..=1.0).contains(&u) {
                0.0
            } else {
                // raised-cosine ramps over the outer quarter on each side
                let e = (u.min(1.0 - u) / 0.25).min(1.0);
                0.5 - 0.5 * (PI * e).cos()
            }
        };
        self.rects().iter().map(|&(y0, y1, x0, x1)| taper(y, y0, y1) * taper(x, x0, x1)).fold(0.0, f64::max)
    }

    /// True in the inner half of a rectangle, where the weight is at least 0.5.
    pub fn core(self, y: f64, x: f64) -> bool {
        self.weight(y, x) >= 0.5
    }
}

/// Zone and unit direction `(dx, dy)` of an action unit's motion.
pub fn au_motion(au: u32) -> Result<(Zone, (f64, f64))> {
    const D: f64 = std::f64::consts::FRAC_1_SQRT_2;
    let (zone, dir) = match au {
        1 => (Zone::Brow, (0.0, -1.0)),
        2 => (Zone::Brow, (D, -D)),
        4 => (Zone::Brow, (0.0, 1.0)),
        5 => (Zone::Eye, (0.0, -1.0)),
        7 => (Zone::Eye, (0.0, 1.0)),
        41 => (Zone::Eye, (-D, D)),
        42 => (Zone::Eye, (D, D)),
        43 => (Zone::Eye, (-1.0, 0.0)),
        44 => (Zone::Eye, (1.0, 0.0)),
        45 => (Zone::Eye, (-D, -D)),
        46 => (Zone::Eye, (D, -D)),
        6 => (Zone::Cheek, (0.0, -1.0)),
        13 => (Zone::Cheek, (1.0, 0.0)),
        14 => (Zone::Cheek, (-1.0, 0.0)),
        9 => (Zone::Nose, (0.0, -1.0)),
        11 => (Zone::Nose, (0.0, 1.0)),
        // Lip, jaw and chin units all act on the mouth zone.
        10 => (Zone::Mouth, (0.0, -1.0)),
        12 => (Zone::Mouth, (D, -D)),
        15 => (Zone::Mouth, (-D, D)),
        16 => (Zone::Mouth, (0.0, 1.0)),
        17 => (Zone::Mouth, (-D, -D)),
        18 => (Zone::Mouth, (-1.0, 0.0)),
        20 => (Zone::Mouth, (1.0, 0.0)),
        22 => (Zone::Mouth, (D, D)),
        23 => (Zone::Mouth, (-1.0, 0.0)),
        24 => (Zone::Mouth, (0.0, 1.0)),
        25 => (Zone::Mouth, (0.0, 1.0)),
        26 => (Zone::Mouth, (0.0, 1.0)),
        27 => (Zone::Mouth, (D, D)),
        28 => (Zone::Mouth, (0.0, -1.0)),
        other => return Err(Error::UnknownAu(other)),
    };
    Ok((zone, dir))
}

/// Motion signature of a unit: zone plus direction rounded to an octant.
fn signature(au: u32) -> (Zone, i32) {
    let (zone, (dx, dy)) = au_motion(au).expect("codebook unit");
    let octant = (dy.atan2(dx) / (PI / 4.0)).round() as i32;
    (zone, octant.rem_euclid(8))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub aus: Vec<u32>,
}

impl ClassDef {
    pub fn au_string(&self) -> String {
        format_au_string(&self.aus)
    }
}

/// Candidate pairs of units acting on two different zones, ordered.
fn zone_pairs() -> Vec<(u32, u32)> {
    let ids: Vec<u32> = CODEBOOK.iter().map(|&(id, _)| id).collect();
    let mut pairs = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            if signature(a).0 != signature(b).0 {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// `n_classes` distinct unit pairs whose motion signatures also differ, so
/// every class is visually separable. Each pair spans two zones.
pub fn class_au_table(n_classes: usize, seed: u64) -> Result<Vec<ClassDef>> {
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut pairs = zone_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    pairs.shuffle(&mut rng);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (a, b) in pairs {
        let mut sig = [signature(a), signature(b)];
        sig.sort();
        if seen.insert(sig) {
            out.push(ClassDef { name: format!("class_{}", out.len()), aus: vec![a, b] });
            if out.len() == n_classes {
                return Ok(out);
            }
        }
    }
    Err(Error::Config(format!("at most {} distinct classes can be constructed, asked for {n_classes}", out.len())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub n_subjects: usize,
    pub frames: usize,
    pub size: usize,
    /// Peak displacement in pixels.
    pub motion_amplitude: f64,
    /// Standard deviation of additive pixel noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 5,
            samples_per_class: 20,
            n_subjects: 10,
            frames: 16,
            size: 112,
            motion_amplitude: 2.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_subjects < 5 {
            return bad(format!("n_subjects must be >= 5, got {}", self.n_subjects));
        }
        if self.samples_per_class == 0 || self.n_classes * self.samples_per_class < self.n_subjects {
            return bad("every subject needs at least one sample".into());
        }
        if self.frames < 2 || self.size < 8 {
            return bad("frames must be >= 2 and size >= 8".into());
        }
        if !(self.motion_amplitude > 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("motion_amplitude must be positive and noise_sigma non-negative".into());
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_classes * self.samples_per_class
    }

    /// Subjects are assigned round-robin over sample ids.
    pub fn subject_of(&self, sample_id: u64) -> u32 {
        (sample_id % self.n_subjects as u64) as u32
    }
}

/// Subject-specific texture: a sum of oriented sinusoids in unit coordinates.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
    tint: [f64; 3],
}

impl Texture {
    pub fn for_subject(seed: u64, subject: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 << 32 | subject as u64);
        let waves = (0..8)
            .map(|_| {
                let period = rng.gen_range(0.07..0.16);
                let angle = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / period;
                (k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0))
            })
            .collect();
        let tint = [rng.gen_range(0.9..1.0), rng.gen_range(0.7..0.85), rng.gen_range(0.55..0.7)];
        Texture { waves, tint }
    }

    /// Luminance-like value in about `[0.2, 0.8]` at unit coordinates.
    pub fn value(&self, y: f64, x: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        let s: f64 = self.waves.iter().map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum();
        0.5 + 0.3 * s / total
    }
}

/// Ramp-and-release intensity in `[0, 1]` with onset, apex and offset at the
/// given frame positions.
pub fn ramp_release(t: f64, onset: f64, apex: f64, offset: f64) -> f64 {
    if t <= onset || t >= offset {
        0.0
    } else if t <= apex {
        0.5 - 0.5 * (PI * (t - onset) / (apex - onset)).cos()
    } else {
        0.5 + 0.5 * (PI * (t - apex) / (offset - apex)).cos()
    }
}

/// Render one sample as `[T, 3, size, size]` in `[0, 1]`.
pub fn render_sample(spec: &SynthSpec, class: &ClassDef, sample_id: u64) -> Result<Tensor> {
    let texture = Texture::for_subject(spec.seed, spec.subject_of(sample_id));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(sample_id);
    let t_last = (spec.frames - 1) as f64;
    let apex = t_last * rng.gen_range(0.42..0.58);
    let (onset, offset) = (apex - t_last * rng.gen_range(0.25..0.35), apex + t_last * rng.gen_range(0.25..0.35));
    let motions = class
        .aus
        .iter()
        .map(|&au| {
            let (zone, dir) = au_motion(au)?;
            Ok((zone, dir, spec.motion_amplitude * rng.gen_range(0.85..1.15)))
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let n = spec.size;
    let scale = 1.0 / n as f64;
    let mut data = Vec::with_capacity(spec.frames * 3 * n * n);
    let mut plane = vec![0.0; n * n];
    for f in 0..spec.frames {
        let level = ramp_release(f as f64, onset, apex, offset);
        for y in 0..n {
            for x in 0..n {
                let (uy, ux) = ((y as f64 + 0.5) * scale, (x as f64 + 0.5) * scale);
                let (mut dx, mut dy) = (0.0, 0.0);
                for &(zone, (mx, my), amp) in &motions {
                    let w = zone.weight(uy, ux) * level * amp;
                    dx += w * mx;
                    dy += w * my;
                }
                plane[y * n + x] = texture.value(uy - dy * scale, ux - dx * scale);
            }
        }
        for c in 0..3 {
            for &v in &plane {
                let noisy = v * texture.tint[c] + if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push(noisy.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(Tensor::new(&[spec.frames, 3, n, n], data)?)
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub sample_id: u64,
    pub subject_id: u32,
    pub class_id: usize,
    pub class_name: String,
    pub au: String,
    /// Frames: an MXT1 `[T, C, H, W]` file or a directory of PNG frames, relative to the manifest.
    pub rgb_path: String,
    pub frames: usize,
    /// Preprocessed streams, present after `prep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_rgb_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_flow_path: Option<String>,
}

pub const MANIFEST: &str = "manifest.jsonl";

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Write clips and `manifest.jsonl` under `dir`; returns the manifest rows.
pub fn generate(spec: &SynthSpec, dir: &Path) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    let classes = class_au_table(spec.n_classes, spec.seed)?;
    let clips = dir.join("clips");
    std::fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let rows: Vec<ManifestRow> = (0..spec.n_samples() as u64)
        .map(|id| {
            let class_id = id as usize / spec.samples_per_class;
            ManifestRow {
                sample_id: id,
                subject_id: spec.subject_of(id),
                class_id,
                class_name: classes[class_id].name.clone(),
                au: classes[class_id].au_string(),
                rgb_path: format!("clips/sample_{id:05}.mxt"),
                frames: spec.frames,
                clip_rgb_path: None,
                clip_flow_path: None,
            }
        })
        .collect();
    rows.par_iter().try_for_each(|row| {
        let t = render_sample(spec, &classes[row.class_id], row.sample_id)?;
        let path: PathBuf = dir.join(&row.rgb_path);
        numcore::mxt::save(&path, &t).map_err(|e| match e {
            numcore::NumError::Io(io) => Error::io(&path, io),
            other => Error::Format(other.to_string()),
        })
    })?;
    write_manifest(&dir.join(MANIFEST), &rows)?;
    let spec_path = dir.join("synth.json");
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(rows)
}
