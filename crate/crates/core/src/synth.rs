//! Synthetic pressure-mat recordings in the on-disk dataset layout.
//!
//! Bodies are sums of anisotropic Gaussian pads (head, shoulders, hips,
//! legs, limbs). The coarse category fixes the base silhouette, the posture
//! id perturbs limb pads and tilt, and the subject sets body length, width,
//! weight and position on the mat. Frames carry jitter, sensor noise,
//! occasional saturated-sensor spikes, and near-empty lead-in/lead-out
//! frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{Category, FileFormat, Orientation, Taxonomy, FRAME_LEN, SENSOR_MAX};
use crate::error::Result;
use crate::nn::{FRAME_HEIGHT, FRAME_WIDTH};
use crate::tensor::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects: usize,
    pub frames_per_sequence: usize,
    pub seed: u64,
    /// Probability that a frame contains one saturated sensor.
    pub spike_rate: f64,
    /// `(subject, posture)` pairs recorded as all-zero sequences.
    pub empty_sequences: Vec<(usize, usize)>,
    /// Pairs with no file at all.
    pub missing: Vec<(usize, usize)>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 4,
            frames_per_sequence: 14,
            seed: 1,
            spike_rate: 0.2,
            empty_sequences: Vec::new(),
            missing: Vec::new(),
        }
    }
}

#[derive(Clone, Copy)]
struct Pad {
    u: f64,
    v: f64,
    su: f64,
    sv: f64,
    amp: f64,
}

const fn pad(u: f64, v: f64, su: f64, sv: f64, amp: f64) -> Pad {
    Pad { u, v, su, sv, amp }
}

fn silhouette(category: Category) -> Vec<Pad> {
    let side = |s: f64| {
        vec![
            pad(0.07, 0.15 * s, 0.04, 0.22, 0.55),
            pad(0.22, 0.20 * s, 0.06, 0.25, 1.0),
            pad(0.36, 0.05 * s, 0.09, 0.30, 0.45),
            pad(0.50, 0.10 * s, 0.07, 0.28, 1.15),
            pad(0.72, 0.05 * s, 0.12, 0.20, 0.60),
            pad(0.93, 0.10 * s, 0.04, 0.22, 0.55),
        ]
    };
    match category {
        Category::Supine => vec![
            pad(0.07, 0.0, 0.04, 0.16, 0.60),
            pad(0.22, -0.38, 0.05, 0.14, 0.80),
            pad(0.22, 0.38, 0.05, 0.14, 0.80),
            pad(0.36, 0.0, 0.10, 0.40, 0.40),
            pad(0.50, 0.0, 0.06, 0.45, 1.00),
            pad(0.74, -0.22, 0.13, 0.09, 0.55),
            pad(0.74, 0.22, 0.13, 0.09, 0.55),
            pad(0.95, -0.22, 0.03, 0.08, 0.70),
            pad(0.95, 0.22, 0.03, 0.08, 0.70),
        ],
        Category::Right => side(1.0),
        Category::Left => side(-1.0),
    }
}

struct Body {
    pads: Vec<Pad>,
    tilt: f64,
}

fn posture_body(posture: usize, category: Category, seed: u64) -> Body {
    let mut rng = SeededRng::derive(seed, 10_000 + posture as u64);
    let mut pads = silhouette(category);
    for p in &mut pads {
        p.v += rng.uniform_in(-0.08, 0.08);
        p.amp *= rng.uniform_in(0.8, 1.2);
    }
    for _ in 0..2 {
        pads.push(pad(
            rng.uniform_in(0.15, 0.65),
            rng.uniform_in(-0.95, 0.95),
            rng.uniform_in(0.03, 0.10),
            rng.uniform_in(0.05, 0.10),
            rng.uniform_in(0.3, 0.7),
        ));
    }
    Body {
        pads,
        tilt: rng.uniform_in(-0.12, 0.12),
    }
}

struct Subject {
    start: f64,
    length: f64,
    half_width: f64,
    centre: f64,
    weight: f64,
}

fn subject_shape(subject: usize, seed: u64) -> Subject {
    let mut rng = SeededRng::derive(seed, 20_000 + subject as u64);
    Subject {
        start: rng.uniform_in(3.0, 8.0),
        length: rng.uniform_in(46.0, 54.0),
        half_width: rng.uniform_in(9.0, 13.0),
        centre: rng.uniform_in(14.0, 17.0),
        weight: rng.uniform_in(2500.0, 6000.0),
    }
}

fn render(
    body: &Body,
    subj: &Subject,
    shift: (f64, f64),
    scale: f64,
    rng: &mut SeededRng,
) -> Vec<f32> {
    let mut out = vec![0.0f32; FRAME_LEN];
    for y in 0..FRAME_HEIGHT {
        for x in 0..FRAME_WIDTH {
            let u = (x as f64 - subj.start - shift.1) / subj.length;
            let v = (y as f64 - subj.centre - shift.0) / subj.half_width - body.tilt * (u - 0.5);
            let mut p = 0.0;
            for pd in &body.pads {
                let du = (u - pd.u) / pd.su;
                let dv = (v - pd.v) / pd.sv;
                p += pd.amp * (-0.5 * (du * du + dv * dv)).exp();
            }
            let mut val = subj.weight * scale * p;
            if val < 40.0 {
                val = 0.0;
            } else {
                val += rng.gaussian(0.0, 25.0);
            }
            out[y * FRAME_WIDTH + x] = val.clamp(0.0, SENSOR_MAX as f64).round() as f32;
        }
    }
    out
}

/// Frames of one recording, row-major 32×64 raw counts.
pub fn generate_sequence(
    spec: &SynthSpec,
    taxonomy: &Taxonomy,
    subject: usize,
    posture: usize,
) -> Result<Vec<Vec<f32>>> {
    let n = spec.frames_per_sequence;
    if spec.empty_sequences.contains(&(subject, posture)) {
        return Ok(vec![vec![0.0; FRAME_LEN]; n]);
    }
    let body = posture_body(posture, taxonomy.category(posture)?, spec.seed);
    let subj = subject_shape(subject, spec.seed);
    let mut rng = SeededRng::derive(spec.seed, (subject as u64) << 32 | posture as u64);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        // getting onto and off the mat: faint partial contact
        let edge = t < 2 || t + 2 >= n;
        let scale = if edge { 0.05 } else { rng.gaussian(1.0, 0.03) };
        let shift = (rng.gaussian(0.0, 0.3), rng.gaussian(0.0, 0.3));
        let mut f = render(&body, &subj, shift, scale, &mut rng);
        if rng.bernoulli(spec.spike_rate) {
            f[rng.index(FRAME_LEN)] = SENSOR_MAX;
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Text record for one grid frame in the given file layout.
pub fn format_record(frame: &[f32], format: &FileFormat) -> String {
    let mut fields = vec![0.0f32; FRAME_LEN];
    for (i, slot) in fields.iter_mut().enumerate() {
        *slot = frame[format.grid_index(i)];
    }
    let sep = match format.delimiter {
        crate::dataio::Delimiter::Whitespace => "\t",
        crate::dataio::Delimiter::Comma => ",",
    };
    fields
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(sep)
}

/// Writes `<root>/S<s>/<p>.txt` for every subject and taxonomy posture.
pub fn write_dataset(
    root: &Path,
    spec: &SynthSpec,
    taxonomy: &Taxonomy,
    format: &FileFormat,
) -> Result<()> {
    for s in 1..=spec.subjects {
        let dir = root.join(format!("S{s}"));
        std::fs::create_dir_all(&dir)?;
        for (p, _) in taxonomy.postures() {
            if spec.missing.contains(&(s, p)) {
                continue;
            }
            let frames = generate_sequence(spec, taxonomy, s, p)?;
            let text: String = frames
                .iter()
                .map(|f| format_record(f, format) + "\n")
                .collect();
            std::fs::write(dir.join(format!("{p}.txt")), text)?;
        }
    }
    Ok(())
}

/// Default on-disk layout for generated files.
pub fn default_format() -> FileFormat {
    FileFormat {
        orientation: Orientation::Rows64Cols32,
        ..Default::default()
    }
}
