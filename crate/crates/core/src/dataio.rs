//! Pressure-mat dataset ingestion: frame files, the dataset manifest, and the
//! fine-to-coarse posture taxonomy.
//!
//! Layout convention (the one labelling rule): `<root>/S<subject>/<posture>.txt`.
//! Each non-blank line of a posture file is one frame of 2048 readings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FRAME_HEIGHT, FRAME_WIDTH};

pub const FRAME_LEN: usize = FRAME_HEIGHT * FRAME_WIDTH;
pub const SENSOR_MAX: f32 = 10000.0;
pub const NUM_POSTURES: usize = 17;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Whitespace,
    Comma,
}

/// How the 2048 fields of a record map onto the 32×64 grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Record is 64 rows of 32 values; transposed so the long mat axis is
    /// the grid's 64 columns.
    #[default]
    Rows64Cols32,
    /// Record is already 32 rows of 64 values.
    Rows32Cols64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFormat {
    pub delimiter: Delimiter,
    pub orientation: Orientation,
}

impl FileFormat {
    /// Grid index (row-major 32×64) of field `i` of a record.
    pub fn grid_index(&self, i: usize) -> usize {
        match self.orientation {
            Orientation::Rows32Cols64 => i,
            Orientation::Rows64Cols32 => {
                let (file_row, file_col) = (i / FRAME_HEIGHT, i % FRAME_HEIGHT);
                file_col * FRAME_WIDTH + file_row
            }
        }
    }
}

/// One frame of raw sensor counts on the 32×64 grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub values: Vec<f32>,
    /// Position within the sequence (1 Hz, so also seconds from start).
    pub index: usize,
}

impl RawFrame {
    pub fn out_of_range(&self) -> usize {
        self.values
            .iter()
            .filter(|&&v| !(0.0..=SENSOR_MAX).contains(&v))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSequence {
    pub frames: Vec<RawFrame>,
    pub subject: usize,
    pub posture: usize,
    /// Readings outside the sensor range, kept as-is for the cleaning stage.
    pub out_of_range: usize,
}

/// Subject and posture ids from `.../S<subject>/<posture>.txt`.
pub fn labels_from_path(path: &Path) -> Result<(usize, usize)> {
    let bad = |msg: &str| Error::Ingest {
        path: path.to_path_buf(),
        msg: format!("{msg}; expected <root>/S<subject>/<posture>.txt"),
    };
    let posture = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&p| p >= 1)
        .ok_or_else(|| bad("file name is not a posture number"))?;
    let subject = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .and_then(parse_subject_dir)
        .ok_or_else(|| bad("parent directory is not S<subject>"))?;
    Ok((subject, posture))
}

fn parse_subject_dir(name: &str) -> Option<usize> {
    name.strip_prefix('S')
        .or_else(|| name.strip_prefix('s'))
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&s| s >= 1)
}

/// Parses frame records from text. `path` is used for labels in errors only.
pub fn parse_frames(text: &str, format: &FileFormat, path: &Path) -> Result<Vec<RawFrame>> {
    let mut frames = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = frames.len();
        let fields: Vec<&str> = match format.delimiter {
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
        };
        if fields.len() != FRAME_LEN {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record,
                msg: format!(
                    "line {}: expected {FRAME_LEN} fields, found {}",
                    line_no + 1,
                    fields.len()
                ),
            });
        }
        let mut values = vec![0.0f32; FRAME_LEN];
        for (i, f) in fields.iter().enumerate() {
            let v: f32 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                record,
                msg: format!(
                    "line {}: field {} is not numeric: {f:?}",
                    line_no + 1,
                    i + 1
                ),
            })?;
            values[format.grid_index(i)] = v;
        }
        frames.push(RawFrame {
            values,
            index: record,
        });
    }
    Ok(frames)
}

pub fn parse_frame_file(path: &Path, format: &FileFormat) -> Result<SampleSequence> {
    let (subject, posture) = labels_from_path(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let frames = parse_frames(&text, format, path)?;
    if frames.is_empty() {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            msg: "file contains no frames".into(),
        });
    }
    let out_of_range = frames.iter().map(RawFrame::out_of_range).sum();
    Ok(SampleSequence {
        frames,
        subject,
        posture,
        out_of_range,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Supine,
    Right,
    Left,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Supine, Category::Right, Category::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Supine => "supine",
            Category::Right => "right",
            Category::Left => "left",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "supine" => Ok(Category::Supine),
            "right" => Ok(Category::Right),
            "left" => Ok(Category::Left),
            other => Err(Error::Config(format!("unknown posture category {other:?}"))),
        }
    }
}

/// Mapping of the 17 fine posture ids onto the 3 coarse categories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    map: BTreeMap<usize, Category>,
}

impl Default for Taxonomy {
    /// Ids 1–9 supine variants, 10–13 right side, 14–17 left side.
    fn default() -> Self {
        let map = (1..=NUM_POSTURES)
            .map(|id| {
                let c = match id {
                    1..=9 => Category::Supine,
                    10..=13 => Category::Right,
                    _ => Category::Left,
                };
                (id, c)
            })
            .collect();
        Self { map }
    }
}

impl Taxonomy {
    /// Builds a taxonomy, requiring exactly the ids `1..=17`.
    pub fn new(map: BTreeMap<usize, Category>) -> Result<Self> {
        let unmapped: Vec<usize> = (1..=NUM_POSTURES)
            .filter(|id| !map.contains_key(id))
            .collect();
        if !unmapped.is_empty() {
            return Err(Error::Config(format!(
                "taxonomy leaves posture ids unmapped: {unmapped:?}"
            )));
        }
        let extra: Vec<usize> = map
            .keys()
            .copied()
            .filter(|&id| id == 0 || id > NUM_POSTURES)
            .collect();
        if !extra.is_empty() {
            return Err(Error::Config(format!(
                "taxonomy maps unknown posture ids: {extra:?}"
            )));
        }
        Ok(Self { map })
    }

    /// Parses `id category` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [id, cat] = parts[..] else {
                return Err(Error::Config(format!(
                    "taxonomy line {}: expected `id category`",
                    n + 1
                )));
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::Config(format!("taxonomy line {}: bad id {id:?}", n + 1)))?;
            if map.insert(id, cat.parse()?).is_some() {
                return Err(Error::Config(format!("taxonomy maps posture {id} twice")));
            }
        }
        Self::new(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.map
            .iter()
            .map(|(id, c)| format!("{id} {c}\n"))
            .collect()
    }

    pub fn category(&self, posture: usize) -> Result<Category> {
        self.map
            .get(&posture)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("posture id {posture} is not in the taxonomy")))
    }

    pub fn postures(&self) -> impl Iterator<Item = (usize, Category)> + '_ {
        self.map.iter().map(|(&id, &c)| (id, c))
    }
}

pub fn map_posture_category(posture: usize, taxonomy: &Taxonomy) -> Result<Category> {
    taxonomy.category(posture)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subject: usize,
    pub posture: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub taxonomy: Taxonomy,
    /// Non-fatal findings such as missing subject/posture files.
    pub warnings: Vec<String>,
}

/// Scans `root` for posture files, parses each to count frames, and returns
/// entries sorted by subject then posture.
pub fn build_manifest(
    root: &Path,
    taxonomy: &Taxonomy,
    format: &FileFormat,
) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            msg: "dataset root is not a directory; expected <root>/S<subject>/<posture>.txt".into(),
        });
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut subject_dirs: Vec<(usize, PathBuf)> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let s = parse_subject_dir(e.file_name().to_str()?)?;
            Some((s, e.path()))
        })
        .collect();
    subject_dirs.sort();
    if subject_dirs.is_empty() {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            msg: "no S<subject> directories found; expected <root>/S<subject>/<posture>.txt".into(),
        });
    }
    for (subject, dir) in &subject_dirs {
        let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
            .filter_map(|p| {
                let posture = p.file_stem()?.to_str()?.parse::<usize>().ok()?;
                Some((posture, p))
            })
            .collect();
        files.sort();
        let present: BTreeSet<usize> = files.iter().map(|(p, _)| *p).collect();
        for (posture, _) in taxonomy.postures() {
            if !present.contains(&posture) {
                warnings.push(format!("subject {subject}: posture {posture} missing"));
            }
        }
        for (posture, path) in files {
            if taxonomy.category(posture).is_err() {
                warnings.push(format!(
                    "{}: posture {posture} not in taxonomy, skipped",
                    path.display()
                ));
                continue;
            }
            let seq = parse_frame_file(&path, format)?;
            entries.push(ManifestEntry {
                path,
                subject: *subject,
                posture,
                frames: seq.frames.len(),
            });
        }
    }
    Ok(DatasetManifest {
        entries,
        taxonomy: taxonomy.clone(),
        warnings,
    })
}

impl DatasetManifest {
    pub fn subjects(&self) -> Vec<usize> {
        let s: BTreeSet<usize> = self.entries.iter().map(|e| e.subject).collect();
        s.into_iter().collect()
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.frames).sum()
    }

    /// One line per entry: `path<TAB>subject<TAB>posture<TAB>frames`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# path\tsubject\tposture\tframes\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.path.display(),
                e.subject,
                e.posture,
                e.frames
            ));
        }
        out
    }

    pub fn parse(text: &str, taxonomy: Taxonomy) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Config(format!("manifest line {}: malformed entry", n + 1));
            let [path, s, p, f] = cols[..] else {
                return Err(bad());
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                subject: s.parse().map_err(|_| bad())?,
                posture: p.parse().map_err(|_| bad())?,
                frames: f.parse().map_err(|_| bad())?,
            });
        }
        Ok(Self {
            entries,
            taxonomy,
            warnings: Vec::new(),
        })
    }
}
