//! Raw file formats and in-memory scene types.
//!
//! Cube files (`HSR1`): 4-byte magic, little-endian `u32` height, width and
//! band count, then `height * width * bands` little-endian `f32` values,
//! pixel-interleaved and row-major over `(row, col)`.
//!
//! Label files (`HSL1`): 4-byte magic, little-endian `u32` height and width,
//! then `height * width` little-endian `u16` labels. Label `0` is background.
//!
//! Split files are UTF-8 text with header `row,col,label,role`; sample files
//! carry full spectra and a `synthetic` flag (see [`save_samples`]).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const CUBE_MAGIC: &[u8; 4] = b"HSR1";
const LABEL_MAGIC: &[u8; 4] = b"HSL1";

/// A hyperspectral raster, stored pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if values.len() != expected {
            return Err(Error::dim(expected, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Raw band values of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    /// Pixel as a 64-bit [`Spectrum`] tagged with its coordinate.
    pub fn spectrum(&self, row: usize, col: usize, label: Option<u16>) -> Spectrum {
        Spectrum {
            values: self.pixel(row, col).iter().map(|&v| f64::from(v)).collect(),
            label,
            coord: Some((row as u32, col as u32)),
            synthetic: false,
        }
    }
}

/// Per-pixel class labels, compacted so classes are `1..=C`.
///
/// `original_ids[k]` is the label id that compacted class `k + 1` had in the
/// source data. Saving writes the original ids back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    original_ids: Vec<u16>,
}

impl LabelMap {
    /// Builds a label map from raw ids, compacting the observed nonzero ids
    /// to `1..=C` in ascending order.
    pub fn new(height: usize, width: usize, raw: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if raw.len() != height * width {
            return Err(Error::dim(height * width, raw.len()));
        }
        let mut original_ids: Vec<u16> = raw.iter().copied().filter(|&l| l != 0).collect();
        original_ids.sort_unstable();
        original_ids.dedup();
        let mut remap = vec![0u16; usize::from(u16::MAX) + 1];
        for (k, &id) in original_ids.iter().enumerate() {
            remap[usize::from(id)] = (k + 1) as u16;
        }
        let labels = raw.iter().map(|&l| remap[usize::from(l)]).collect();
        Ok(Self {
            height,
            width,
            labels,
            original_ids,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Compacted labels, row-major.
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn num_classes(&self) -> usize {
        self.original_ids.len()
    }

    pub fn original_ids(&self) -> &[u16] {
        &self.original_ids
    }

    pub fn is_compaction_identity(&self) -> bool {
        self.original_ids
            .iter()
            .enumerate()
            .all(|(k, &id)| usize::from(id) == k + 1)
    }

    /// Labels mapped back to the ids found in the source data.
    pub fn raw_labels(&self) -> Vec<u16> {
        self.labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    self.original_ids[usize::from(l) - 1]
                }
            })
            .collect()
    }

    /// Pixel counts per compacted class; index 0 holds class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            if l != 0 {
                counts[usize::from(l) - 1] += 1;
            }
        }
        counts
    }

    /// All labeled pixels as `(row, col, label)`, row-major.
    pub fn labeled_pixels(&self) -> Vec<(u32, u32, u16)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, &l)| ((i / self.width) as u32, (i % self.width) as u32, l))
            .collect()
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }
}

/// One spectrum in 64-bit compute precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub label: Option<u16>,
    pub coord: Option<(u32, u32)>,
    pub synthetic: bool,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            label: None,
            coord: None,
            synthetic: false,
        }
    }

    pub fn labeled(values: Vec<f64>, label: u16) -> Self {
        Self {
            label: Some(label),
            ..Self::new(values)
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy of `self` with different values; label and coordinate are kept.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            label: self.label,
            coord: self.coord,
            synthetic: self.synthetic,
        }
    }
}

impl AsRef<[f64]> for Spectrum {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    check_magic(bytes, CUBE_MAGIC)?;
    let h = read_u32(bytes, 4)? as usize;
    let w = read_u32(bytes, 8)? as usize;
    let b = read_u32(bytes, 12)? as usize;
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(b))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != count * 4 {
        return Err(Error::Truncated {
            expected: count * 4,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    HsiCube::new(h, w, b, values)
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + cube.values.len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    for d in [cube.height, cube.width, cube.bands] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &cube.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode_cube(&read_file(path.as_ref())?)
}

pub fn save_cube(path: impl AsRef<Path>, cube: &HsiCube) -> Result<()> {
    write_file(path.as_ref(), &encode_cube(cube))
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    check_magic(bytes, LABEL_MAGIC)?;
    let h = read_u32(bytes, 4)? as usize;
    let w = read_u32(bytes, 8)? as usize;
    let count = h
        .checked_mul(w)
        .ok_or_else(|| Error::Format("label dimensions overflow".into()))?;
    let payload = &bytes[12..];
    if payload.len() != count * 2 {
        return Err(Error::Truncated {
            expected: count * 2,
            found: payload.len(),
        });
    }
    let raw = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMap::new(h, w, raw)
}

/// Encodes the label map with its original (pre-compaction) ids.
pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + labels.labels.len() * 2);
    out.extend_from_slice(LABEL_MAGIC);
    for d in [labels.height, labels.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in labels.raw_labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels(&read_file(path.as_ref())?)
}

/// Writes the label file and, when compaction renamed any class, a
/// `<path>.classmap` sidecar (see [`class_map_path`]).
pub fn save_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &encode_labels(labels))?;
    if !labels.is_compaction_identity() {
        save_class_map(class_map_path(path), labels)?;
    }
    Ok(())
}

pub fn class_map_path(labels_path: &Path) -> PathBuf {
    let mut name = labels_path.as_os_str().to_owned();
    name.push(".classmap");
    PathBuf::from(name)
}

/// Sidecar listing `compact,original` pairs, one per class.
pub fn save_class_map(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let mut text = String::from("compact,original\n");
    for (k, id) in labels.original_ids.iter().enumerate() {
        text.push_str(&format!("{},{}\n", k + 1, id));
    }
    write_file(path.as_ref(), text.as_bytes())
}

pub fn load_class_map(path: impl AsRef<Path>) -> Result<Vec<(u16, u16)>> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Format("class map is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next() != Some("compact,original") {
        return Err(Error::Format("class map header must be `compact,original`".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad class map line {line:?}")))?;
            Ok((parse_field(a, "compact id")?, parse_field(b, "original id")?))
        })
        .collect()
}

fn parse_field<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(Error::Format(format!("unknown role {other:?}"))),
        }
    }
}

/// One line of a split file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRecord {
    pub row: u32,
    pub col: u32,
    pub label: u16,
    pub role: Role,
}

const SPLIT_HEADER: &str = "row,col,label,role";

impl FromStr for SplitRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "split record needs 4 fields, got {line:?}"
            )));
        }
        Ok(SplitRecord {
            row: parse_field(fields[0], "row")?,
            col: parse_field(fields[1], "col")?,
            label: parse_field(fields[2], "label")?,
            role: fields[3].trim().parse()?,
        })
    }
}

pub fn save_split(path: impl AsRef<Path>, records: &[SplitRecord]) -> Result<()> {
    let mut text = String::with_capacity(16 * (records.len() + 1));
    text.push_str(SPLIT_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!("{},{},{},{}\n", r.row, r.col, r.label, r.role));
    }
    write_file(path.as_ref(), text.as_bytes())
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<SplitRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == SPLIT_HEADER => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(Error::Format(format!("split header must be `{SPLIT_HEADER}`"))),
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(line.parse()?);
    }
    Ok(records)
}

/// Writes labeled spectra as CSV: `row,col,label,synthetic,v0..v{b-1}`.
///
/// Missing coordinates are written as empty fields. Values use Rust's
/// shortest round-trip float formatting, so reloading is exact.
pub fn save_samples(path: impl AsRef<Path>, samples: &[Spectrum]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let bands = samples.first().map_or(0, Spectrum::len);
    let mut header = String::from("row,col,label,synthetic");
    for j in 0..bands {
        header.push_str(&format!(",v{j}"));
    }
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for s in samples {
        if s.len() != bands {
            return Err(Error::dim(bands, s.len()));
        }
        let (row, col) = s
            .coord
            .map_or((String::new(), String::new()), |(r, c)| (r.to_string(), c.to_string()));
        let label = s.label.map_or(String::new(), |l| l.to_string());
        write!(w, "{row},{col},{label},{}", u8::from(s.synthetic)).map_err(io)?;
        for v in &s.values {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Spectrum>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::io(path, e)),
        None => return Err(Error::Format("empty sample file".into())),
    };
    if !header.starts_with("row,col,label,synthetic") {
        return Err(Error::Format("sample header must start with `row,col,label,synthetic`".into()));
    }
    let bands = header.split(',').count() - 4;
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != bands + 4 {
            return Err(Error::dim(bands + 4, fields.len()));
        }
        let coord = if fields[0].is_empty() {
            None
        } else {
            Some((parse_field(fields[0], "row")?, parse_field(fields[1], "col")?))
        };
        let label = if fields[2].is_empty() {
            None
        } else {
            Some(parse_field(fields[2], "label")?)
        };
        let synthetic = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Format(format!("bad synthetic flag {other:?}"))),
        };
        let values = fields[4..]
            .iter()
            .map(|f| parse_field::<f64>(f, "band value"))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample value".into()));
        }
        out.push(Spectrum {
            values,
            label,
            coord,
            synthetic,
        });
    }
    Ok(out)
}

/// Per-band min-max scaling to `[0, 1]`, fitted on training pixels only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Degenerate("cannot fit a normalizer on zero samples".into()))?;
        let b = first.as_ref().len();
        let mut min = vec![f64::INFINITY; b];
        let mut max = vec![f64::NEG_INFINITY; b];
        for s in samples {
            let s = s.as_ref();
            if s.len() != b {
                return Err(Error::dim(b, s.len()));
            }
            for (j, &v) in s.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Scales `x` in place. Constant bands map to 0.
    pub fn apply_in_place(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.min).zip(&self.max) {
            let range = hi - lo;
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }

    pub fn apply(&self, s: &Spectrum) -> Spectrum {
        let mut out = s.clone();
        self.apply_in_place(&mut out.values);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        write_file(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        serde_json::from_slice(&read_file(path.as_ref())?).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Knobs for [`generate_synthetic_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticParams {
    /// Per-band standard deviation of each class blob.
    pub spread: f64,
    /// Amplitude of the smooth spectral shape added to each class mean.
    pub shape_amplitude: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            spread: 0.05,
            shape_amplitude: 0.15,
        }
    }
}

/// Synthetic scene with `classes` Gaussian blobs; see [`generate_synthetic_with`].
pub fn generate_synthetic(
    classes: usize,
    bands: usize,
    per_class: usize,
    seed: u64,
) -> Result<(HsiCube, LabelMap)> {
    generate_synthetic_with(classes, bands, per_class, seed, SyntheticParams::default())
}

/// Builds a `classes x per_class` scene: row `c` holds the samples of class
/// `c + 1`. Each class mean is a constant level plus a sinusoid with random
/// phase and frequency; samples add independent Gaussian noise per band.
pub fn generate_synthetic_with(
    classes: usize,
    bands: usize,
    per_class: usize,
    seed: u64,
    params: SyntheticParams,
) -> Result<(HsiCube, LabelMap)> {
    if classes == 0 || bands == 0 || per_class == 0 {
        return Err(Error::Config(
            "synthetic classes, bands and per-class counts must be >= 1".into(),
        ));
    }
    if classes > usize::from(u16::MAX) {
        return Err(Error::Config(format!("too many classes: {classes}")));
    }
    if !(params.spread >= 0.0 && params.spread.is_finite()) {
        return Err(Error::Config(format!("bad spread {}", params.spread)));
    }
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, params.spread).expect("spread validated above");
    let mut values = Vec::with_capacity(classes * per_class * bands);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        // Levels are spread evenly over [0.2, 0.8] so class means stay apart.
        let level = if classes == 1 {
            0.5
        } else {
            0.2 + 0.6 * c as f64 / (classes - 1) as f64
        };
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let freq = rng.gen_range(0.5..2.0);
        let mean: Vec<f64> = (0..bands)
            .map(|j| {
                let t = j as f64 / bands as f64;
                level + params.shape_amplitude * (std::f64::consts::TAU * freq * t + phase).sin()
            })
            .collect();
        for _ in 0..per_class {
            for &m in &mean {
                values.push((m + noise.sample(&mut rng)) as f32);
            }
            labels.push((c + 1) as u16);
        }
    }
    let cube = HsiCube::new(classes, per_class, bands, values)?;
    let labels = LabelMap::new(classes, per_class, labels)?;
    Ok((cube, labels))
}

/// Class histogram keyed by original label id (background excluded).
pub fn class_histogram(labels: &LabelMap) -> BTreeMap<u16, usize> {
    labels
        .original_ids()
        .iter()
        .copied()
        .zip(labels.class_counts())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_bytes(h: u32, w: u32, b: u32, payload: &[f32]) -> Vec<u8> {
        let mut bytes = b"HSR1".to_vec();
        for d in [h, w, b] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn smallest_cube_decodes() {
        let cube = decode_cube(&cube_bytes(1, 1, 3, &[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(cube.pixel(0, 0), &[0.1f32, 0.2, 0.3]);
    }

    #[test]
    fn short_payload_is_truncated() {
        let err = decode_cube(&cube_bytes(2, 1, 2, &[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 16, found: 12 }));
    }

    #[test]
    fn bad_magic_and_nan_are_rejected() {
        let mut bytes = cube_bytes(1, 1, 1, &[1.0]);
        bytes[3] = b'2';
        assert!(matches!(decode_cube(&bytes), Err(Error::Format(_))));
        assert!(matches!(
            decode_cube(&cube_bytes(1, 1, 2, &[1.0, f32::NAN])),
            Err(Error::Data(_))
        ));
        assert!(matches!(decode_cube(b"HS"), Err(Error::Format(_))));
    }

    #[test]
    fn labels_compact_to_contiguous_ids() {
        let map = LabelMap::new(2, 2, vec![0, 7, 3, 7]).unwrap();
        assert_eq!(map.labels(), &[0, 2, 1, 2]);
        assert_eq!(map.original_ids(), &[3, 7]);
        assert_eq!(map.raw_labels(), vec![0, 7, 3, 7]);
        assert!(!map.is_compaction_identity());
        assert_eq!(map.class_counts(), vec![1, 2]);
    }

    #[test]
    fn split_line_parses() {
        let rec: SplitRecord = "3,7,2,val".parse().unwrap();
        assert_eq!(
            rec,
            SplitRecord {
                row: 3,
                col: 7,
                label: 2,
                role: Role::Val
            }
        );
        assert!(matches!("3,7,2,holdout".parse::<SplitRecord>(), Err(Error::Format(_))));
        assert!("3,7,2".parse::<SplitRecord>().is_err());
    }

    #[test]
    fn normalizer_maps_train_range_to_unit_interval() {
        let train = vec![vec![0.0, 5.0, 2.0], vec![10.0, 5.0, 4.0]];
        let norm = Normalizer::fit(&train).unwrap();
        let mut x = vec![5.0, 7.0, 5.0];
        norm.apply_in_place(&mut x);
        assert_eq!(x, vec![0.5, 0.0, 1.5]);
    }

    #[test]
    fn synthetic_single_class() {
        let (cube, labels) = generate_synthetic(1, 2, 4, 0).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands()), (1, 4, 2));
        assert_eq!(labels.labels(), &[1, 1, 1, 1]);
        assert!(generate_synthetic(0, 2, 4, 0).is_err());
    }
}
