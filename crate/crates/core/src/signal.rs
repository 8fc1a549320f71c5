//! Frame preprocessing (denoise, normalize, trim, empty removal), the
//! preprocessed-sequence cache, and stochastic augmentation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{parse_frame_file, DatasetManifest, FileFormat, SampleSequence, SENSOR_MAX};
use crate::error::{shape_err, Error, Result};
use crate::nn::{FRAME_HEIGHT, FRAME_WIDTH};
use crate::tensor::SeededRng;

/// A preprocessed sequence: 32×64 frames with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanSequence {
    pub frames: Vec<Vec<f32>>,
    pub subject: usize,
    pub posture: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Frames removed from each end of a sequence.
    pub trim: usize,
    /// A normalized frame whose values sum below this is empty.
    pub empty_threshold: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            trim: 3,
            empty_threshold: 1.0,
        }
    }
}

fn check_frames(frames: &[Vec<f32>], h: usize, w: usize) -> Result<()> {
    match frames.iter().position(|f| f.len() != h * w) {
        None => Ok(()),
        Some(i) => shape_err(format!(
            "frame {i} has {} values, expected {h}x{w}",
            frames[i].len()
        )),
    }
}

/// 3×3×3 median over (time, row, col) with clamp-to-edge boundaries.
pub fn median_filter_3d(frames: &[Vec<f32>], h: usize, w: usize) -> Result<Vec<Vec<f32>>> {
    check_frames(frames, h, w)?;
    let t_len = frames.len();
    let clamp = |i: usize, d: isize, n: usize| (i as isize + d).clamp(0, n as isize - 1) as usize;
    let mut out = Vec::with_capacity(t_len);
    let mut window = [0.0f32; 27];
    for t in 0..t_len {
        let ts = [clamp(t, -1, t_len), t, clamp(t, 1, t_len)];
        let mut frame = vec![0.0f32; h * w];
        for y in 0..h {
            let ys = [clamp(y, -1, h), y, clamp(y, 1, h)];
            for x in 0..w {
                let xs = [clamp(x, -1, w), x, clamp(x, 1, w)];
                let mut k = 0;
                for &tt in &ts {
                    let f = &frames[tt];
                    for &yy in &ys {
                        for &xx in &xs {
                            window[k] = f[yy * w + xx];
                            k += 1;
                        }
                    }
                }
                let (_, m, _) = window.select_nth_unstable_by(13, f32::total_cmp);
                frame[y * w + x] = *m;
            }
        }
        out.push(frame);
    }
    Ok(out)
}

/// `clamp(v / 10000, 0, 1)`; non-finite readings become 0.
pub fn normalize_frame(frame: &mut [f32]) {
    for v in frame {
        *v = if v.is_finite() {
            (*v / SENSOR_MAX).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
}

pub fn normalize_frames(mut frames: Vec<Vec<f32>>) -> Vec<Vec<f32>> {
    for f in &mut frames {
        normalize_frame(f);
    }
    frames
}

/// Drops `n` frames from each end. An emptied sequence comes back with a
/// warning.
pub fn trim_sequence<T>(mut frames: Vec<T>, n: usize) -> (Vec<T>, Option<String>) {
    let len = frames.len();
    if len <= 2 * n {
        frames.clear();
        return (
            frames,
            Some(format!(
                "sequence of {len} frames is empty after trimming {n} from each end"
            )),
        );
    }
    frames.truncate(len - n);
    frames.drain(..n);
    (frames, None)
}

pub fn is_empty_frame(frame: &[f32], threshold: f32) -> bool {
    frame.iter().sum::<f32>() < threshold
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    /// `(subject, posture, frames)` of every dropped sequence.
    pub dropped: Vec<(usize, usize, usize)>,
    /// Empty frames left inside sequences that also hold non-empty frames.
    pub empty_frames_kept: usize,
    pub threshold: f32,
}

impl RemovalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# threshold {}\n# dropped {} sequences, {} empty frames kept inside other sequences\n",
            self.threshold,
            self.dropped.len(),
            self.empty_frames_kept
        );
        for (s, p, n) in &self.dropped {
            out.push_str(&format!("subject {s} posture {p} frames {n}\n"));
        }
        out
    }
}

/// Removes sequences whose every frame is empty (including zero-length ones).
pub fn drop_empty_samples(
    seqs: Vec<CleanSequence>,
    threshold: f32,
) -> (Vec<CleanSequence>, RemovalReport) {
    let mut report = RemovalReport {
        threshold,
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let empty = seq
            .frames
            .iter()
            .filter(|f| is_empty_frame(f, threshold))
            .count();
        if empty == seq.frames.len() {
            report
                .dropped
                .push((seq.subject, seq.posture, seq.frames.len()));
        } else {
            report.empty_frames_kept += empty;
            kept.push(seq);
        }
    }
    (kept, report)
}

/// Median filter, normalization and trimming for one raw sequence. The empty
/// check runs over the whole collection afterwards.
pub fn preprocess_sequence(
    seq: &SampleSequence,
    cfg: &PreprocessConfig,
) -> Result<(CleanSequence, Option<String>)> {
    let raw: Vec<Vec<f32>> = seq.frames.iter().map(|f| f.values.clone()).collect();
    let filtered = median_filter_3d(&raw, FRAME_HEIGHT, FRAME_WIDTH)?;
    let (frames, warning) = trim_sequence(normalize_frames(filtered), cfg.trim);
    let warning = warning.map(|w| format!("subject {} posture {}: {w}", seq.subject, seq.posture));
    Ok((
        CleanSequence {
            frames,
            subject: seq.subject,
            posture: seq.posture,
        },
        warning,
    ))
}

pub fn rotate180(frame: &[f32]) -> Vec<f32> {
    frame.iter().rev().copied().collect()
}

fn sample_bilinear(frame: &[f32], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let at = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            0.0
        } else {
            frame[y as usize * w + x as usize] as f64
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

/// Rotates by `angle` degrees about the grid centre (bilinear, zero fill),
/// then shifts by `dx` columns and `dy` rows (zero fill).
pub fn affine_transform(
    frame: &[f32],
    h: usize,
    w: usize,
    dx: i32,
    dy: i32,
    angle: f64,
) -> Result<Vec<f32>> {
    if frame.len() != h * w {
        return shape_err(format!(
            "frame has {} values, expected {h}x{w}",
            frame.len()
        ));
    }
    let rotated = if angle == 0.0 {
        frame.to_vec()
    } else {
        let (s, c) = angle.to_radians().sin_cos();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let (ry, rx) = (y as f64 - cy, x as f64 - cx);
                // inverse rotation maps each output cell back to the source
                let sy = c * ry - s * rx + cy;
                let sx = s * ry + c * rx + cx;
                out[y * w + x] = sample_bilinear(frame, h, w, sy, sx) as f32;
            }
        }
        out
    };
    if dx == 0 && dy == 0 {
        return Ok(rotated);
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h as i64 {
        let sy = y - dy as i64;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w as i64 {
            let sx = x - dx as i64;
            if sx >= 0 && sx < w as i64 {
                out[(y as usize) * w + x as usize] = rotated[sy as usize * w + sx as usize];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    Rotate180,
    /// Integer column shift drawn uniformly from `[-max, max]`.
    TranslateX {
        max: i32,
    },
    /// Integer row shift drawn uniformly from `[-max, max]`.
    TranslateY {
        max: i32,
    },
    /// Angle in degrees drawn uniformly from `[-max, max]`.
    Rotate {
        max: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentStep {
    pub probability: f64,
    pub transform: Transform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub steps: Vec<AugmentStep>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        let step = |probability, transform| AugmentStep {
            probability,
            transform,
        };
        Self {
            steps: vec![
                step(0.5, Transform::Rotate180),
                step(
                    0.2,
                    Transform::TranslateX {
                        max: max_shift(FRAME_WIDTH),
                    },
                ),
                step(
                    0.2,
                    Transform::TranslateY {
                        max: max_shift(FRAME_HEIGHT),
                    },
                ),
                step(0.2, Transform::Rotate { max: 25.0 }),
            ],
        }
    }
}

/// 10% of an axis, rounded to whole pixels.
fn max_shift(len: usize) -> i32 {
    (len as f64 * 0.1).round() as i32
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        let mut p = Self::default();
        for s in &mut p.steps {
            s.probability = 0.0;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::Config(format!(
                    "augmentation step {i}: probability {} outside [0,1]",
                    s.probability
                )));
            }
        }
        Ok(())
    }
}

/// Applies the policy steps in order, each firing independently. Returns the
/// augmented frame and which steps fired.
pub fn augment_sample(
    frame: &[f32],
    h: usize,
    w: usize,
    policy: &AugmentPolicy,
    rng: &mut SeededRng,
) -> Result<(Vec<f32>, Vec<bool>)> {
    if frame.len() != h * w {
        return shape_err(format!(
            "frame has {} values, expected {h}x{w}",
            frame.len()
        ));
    }
    let mut out = frame.to_vec();
    let mut fired = Vec::with_capacity(policy.steps.len());
    for step in &policy.steps {
        let on = rng.bernoulli(step.probability);
        fired.push(on);
        if !on {
            continue;
        }
        out = match step.transform {
            Transform::Rotate180 => rotate180(&out),
            Transform::TranslateX { max } => {
                let dx = rng.int_in(-max as i64, max as i64) as i32;
                affine_transform(&out, h, w, dx, 0, 0.0)?
            }
            Transform::TranslateY { max } => {
                let dy = rng.int_in(-max as i64, max as i64) as i32;
                affine_transform(&out, h, w, 0, dy, 0.0)?
            }
            Transform::Rotate { max } => {
                let a = rng.uniform_in(-max, max);
                affine_transform(&out, h, w, 0, 0, a)?
            }
        };
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((out, fired))
}

const CACHE_MAGIC: &[u8; 7] = b"PCACHE1";

/// Content hash identifying a preprocessed sequence: raw file bytes plus
/// every setting that influences the output.
pub fn cache_key(raw: &[u8], cfg: &PreprocessConfig, format: &FileFormat) -> String {
    let mut h = Sha256::new();
    h.update(raw);
    h.update(serde_json::to_vec(cfg).expect("config serialises"));
    h.update(serde_json::to_vec(format).expect("format serialises"));
    hex::encode(h.finalize())
}

/// `PCACHE1 | 64-byte hex key | u32 subject, posture, frames, height, width | f32 LE values`
pub fn write_cached(path: &Path, key: &str, seq: &CleanSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(96 + seq.frames.len() * FRAME_HEIGHT * FRAME_WIDTH * 4);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(key.as_bytes());
    for v in [
        seq.subject,
        seq.posture,
        seq.frames.len(),
        FRAME_HEIGHT,
        FRAME_WIDTH,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in &seq.frames {
        for v in f {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp)?;
    file.write_all(&buf)?;
    drop(file);
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a cached sequence; `Ok(None)` when the file is absent or was built
/// from different inputs.
pub fn read_cached(path: &Path, key: &str) -> Result<Option<CleanSequence>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let head = CACHE_MAGIC.len() + key.len();
    if bytes.len() < head + 20 || &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
        return Ok(None);
    }
    if &bytes[CACHE_MAGIC.len()..head] != key.as_bytes() {
        return Ok(None);
    }
    let u = |i: usize| {
        u32::from_le_bytes(bytes[head + 4 * i..head + 4 * i + 4].try_into().unwrap()) as usize
    };
    let (subject, posture, n, h, w) = (u(0), u(1), u(2), u(3), u(4));
    let body = &bytes[head + 20..];
    if body.len() != n * h * w * 4 {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            msg: "cache file is truncated".into(),
        });
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(CleanSequence {
        frames: values.chunks(h * w).map(<[f32]>::to_vec).collect(),
        subject,
        posture,
    }))
}

/// Cleaned dataset with everything the preprocessing stage reports.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub sequences: Vec<CleanSequence>,
    pub removal: RemovalReport,
    pub warnings: Vec<String>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    /// Hash over every per-sequence cache key, in manifest order.
    pub dataset_key: String,
}

/// Runs the per-sequence pipeline over a manifest, then drops empty
/// sequences. With `cache_dir`, cleaned sequences are stored and reused
/// while their raw bytes and settings are unchanged.
pub fn preprocess_dataset(
    manifest: &DatasetManifest,
    cfg: &PreprocessConfig,
    format: &FileFormat,
    cache_dir: Option<&Path>,
) -> Result<PreparedDataset> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut seqs = Vec::with_capacity(manifest.entries.len());
    let mut warnings = Vec::new();
    let (mut hits, mut misses) = (0, 0);
    let mut all_keys = Sha256::new();
    for entry in &manifest.entries {
        let raw = std::fs::read(&entry.path).map_err(|e| Error::Ingest {
            path: entry.path.clone(),
            msg: e.to_string(),
        })?;
        let key = cache_key(&raw, cfg, format);
        all_keys.update(key.as_bytes());
        let slot = cache_dir.map(|d| d.join(format!("s{}_p{}.pcache", entry.subject, entry.posture)));
        if let Some(path) = &slot {
            if let Some(seq) = read_cached(path, &key)? {
                hits += 1;
                // trimming warnings depend only on the raw length
                if let Some(w) = trim_sequence(vec![(); entry.frames], cfg.trim).1 {
                    warnings.push(format!("subject {} posture {}: {w}", entry.subject, entry.posture));
                }
                seqs.push(seq);
                continue;
            }
        }
        misses += 1;
        let parsed = parse_frame_file(&entry.path, format)?;
        let (clean, warning) = preprocess_sequence(&parsed, cfg)?;
        warnings.extend(warning);
        if let Some(path) = &slot {
            write_cached(path, &key, &clean)?;
        }
        seqs.push(clean);
    }
    let (sequences, removal) = drop_empty_samples(seqs, cfg.empty_threshold);
    Ok(PreparedDataset {
        sequences,
        removal,
        warnings,
        cache_hits: hits,
        cache_misses: misses,
        dataset_key: hex::encode(all_keys.finalize()),
    })
}
