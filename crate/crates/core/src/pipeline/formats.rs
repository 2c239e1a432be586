//! On-disk formats: feature files, pooled feature stores, score files,
//! proposal lists and JSON model files. Every writer goes through
//! [`write_atomic`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, FOREGROUND_PATCH, FULL_FRAME_PATCH};
use crate::pooling::{Frame, FrameFeatureSet, Layer, Provenance};
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"VFEA";
pub const FEATURE_TEXT_MAGIC: &str = "VFEA-TEXT";
pub const STORE_MAGIC: &[u8; 4] = b"VPOL";
pub const FORMAT_VERSION: u32 = 1;

const FEATURE_HEADER_LEN: usize = 24;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Patch ids stored in a feature file with `count` patches per frame.
pub fn patch_ids_for_count(count: usize) -> Result<Vec<usize>> {
    match count {
        1 => Ok(vec![FULL_FRAME_PATCH]),
        10 => Ok((1..=FULL_FRAME_PATCH).collect()),
        11 => Ok((1..=FOREGROUND_PATCH).collect()),
        _ => Err(Error::data(format!(
            "unsupported patch count {count}; expected 1, 10 or 11"
        ))),
    }
}

fn patch_layout_of(set: &FrameFeatureSet) -> Result<Vec<usize>> {
    let first: Vec<usize> = match set.frames.first() {
        Some(f) => f.patches.keys().copied().collect(),
        None => return Err(Error::invalid(format!("{}: no frames to write", set.video_id))),
    };
    patch_ids_for_count(first.len())
        .ok()
        .filter(|ids| *ids == first)
        .ok_or_else(|| Error::invalid(format!("{}: patch ids {first:?} have no file layout", set.video_id)))?;
    for f in &set.frames {
        if !f.patches.keys().copied().eq(first.iter().copied()) {
            return Err(Error::invalid(format!(
                "{}: frame {} has a different patch set",
                set.video_id, f.index
            )));
        }
    }
    Ok(first)
}

/// Binary feature file. Frame indices are not stored; frames read back as
/// `0..frames`.
pub fn encode_feature_file(set: &FrameFeatureSet) -> Result<Vec<u8>> {
    let ids = patch_layout_of(set)?;
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + set.frames.len() * ids.len() * set.dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [
        FORMAT_VERSION,
        set.layer.tag(),
        set.dim as u32,
        set.frames.len() as u32,
        ids.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in &set.frames {
        for v in f.patches.values() {
            if v.len() != set.dim {
                return Err(Error::invalid(format!("{}: patch length {} != {}", set.video_id, v.len(), set.dim)));
            }
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Text rendering of a feature file, one `(frame, patch)` vector per line.
pub fn encode_feature_text(set: &FrameFeatureSet) -> Result<String> {
    let ids = patch_layout_of(set)?;
    let mut out = format!(
        "{FEATURE_TEXT_MAGIC} {FORMAT_VERSION}\nlayer {}\ndim {}\nframes {}\npatches {}\n",
        set.layer,
        set.dim,
        set.frames.len(),
        ids.len()
    );
    for f in &set.frames {
        for v in f.patches.values() {
            let line: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn assemble(video_id: &str, layer: Layer, dim: usize, frames: usize, ids: &[usize], values: Vec<f32>) -> FrameFeatureSet {
    let per_frame = ids.len() * dim;
    let frames = (0..frames)
        .map(|f| Frame {
            index: f,
            patches: ids
                .iter()
                .enumerate()
                .map(|(p, &id)| {
                    let start = f * per_frame + p * dim;
                    (id, values[start..start + dim].to_vec())
                })
                .collect(),
        })
        .collect();
    FrameFeatureSet {
        video_id: video_id.to_string(),
        layer,
        dim,
        frames,
    }
}

/// Parses a binary or text feature file and checks its value ranges.
pub fn decode_feature_file(video_id: &str, bytes: &[u8]) -> Result<FrameFeatureSet> {
    let set = if bytes.starts_with(FEATURE_TEXT_MAGIC.as_bytes()) {
        decode_text(video_id, bytes)?
    } else {
        decode_binary(video_id, bytes)?
    };
    set.validate()?;
    Ok(set)
}

fn decode_binary(video_id: &str, bytes: &[u8]) -> Result<FrameFeatureSet> {
    if bytes.len() < FEATURE_HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::data(format!("{video_id}: not a feature file (bad magic)")));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::data(format!("{video_id}: unsupported feature file version {version}")));
    }
    let tag = u32_at(bytes, 8);
    let layer = Layer::from_tag(tag).ok_or_else(|| Error::data(format!("{video_id}: unknown layer tag {tag}")))?;
    let dim = u32_at(bytes, 12) as usize;
    let frames = u32_at(bytes, 16) as usize;
    let ids = patch_ids_for_count(u32_at(bytes, 20) as usize)?;
    let expected = frames
        .checked_mul(ids.len())
        .and_then(|v| v.checked_mul(dim))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::data(format!("{video_id}: header sizes overflow")))?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::data(format!(
            "{video_id}: payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    Ok(assemble(video_id, layer, dim, frames, &ids, values))
}

fn decode_text(video_id: &str, bytes: &[u8]) -> Result<FrameFeatureSet> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::data(format!("{video_id}: text feature file is not UTF-8")))?;
    let mut lines = text.lines();
    let bad = |what: &str| Error::data(format!("{video_id}: malformed text feature file ({what})"));
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(key))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(key));
        }
        parts.next().map(str::to_string).ok_or_else(|| bad(key))
    };
    let version: u32 = field(FEATURE_TEXT_MAGIC)?.parse().map_err(|_| bad("version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::data(format!("{video_id}: unsupported feature file version {version}")));
    }
    let layer: Layer = field("layer")?.parse().map_err(|_| bad("layer"))?;
    let dim: usize = field("dim")?.parse().map_err(|_| bad("dim"))?;
    let frames: usize = field("frames")?.parse().map_err(|_| bad("frames"))?;
    let ids = patch_ids_for_count(field("patches")?.parse().map_err(|_| bad("patches"))?)?;
    let mut values = Vec::with_capacity(frames * ids.len() * dim);
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f32>().map_err(|_| bad("value"))?);
        }
        if values.len() - before != dim {
            return Err(bad("row length"));
        }
        rows += 1;
    }
    if rows != frames * ids.len() {
        return Err(Error::data(format!(
            "{video_id}: {rows} vectors, header implies {}",
            frames * ids.len()
        )));
    }
    Ok(assemble(video_id, layer, dim, frames, &ids, values))
}

pub fn read_feature_file(video_id: &str, path: &Path) -> Result<FrameFeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(video_id, &bytes).map_err(|e| match e {
        Error::DataIntegrity(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_feature_file(path: &Path, set: &FrameFeatureSet) -> Result<()> {
    write_atomic(path, &encode_feature_file(set)?)
}

/// Low-level descriptors: a feature file with one patch per row.
pub fn read_descriptors(video_id: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let set = read_feature_file(video_id, path)?;
    if set.frames.iter().any(|f| f.patches.len() != 1) {
        return Err(Error::data(format!("{}: descriptor files hold one vector per row", path.display())));
    }
    Ok(set
        .frames
        .into_iter()
        .flat_map(|f| f.patches.into_values())
        .map(|v| v.into_iter().map(f64::from).collect())
        .collect())
}

pub fn descriptors_to_feature_set(video_id: &str, rows: &[Vec<f64>]) -> Result<FrameFeatureSet> {
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid(format!("{video_id}: descriptors must be non-empty and equal length")));
    }
    Ok(FrameFeatureSet {
        video_id: video_id.to_string(),
        layer: Layer::Other,
        dim,
        frames: rows
            .iter()
            .enumerate()
            .map(|(i, r)| Frame {
                index: i,
                patches: [(FULL_FRAME_PATCH, r.iter().map(|&x| x as f32).collect())].into(),
            })
            .collect(),
    })
}

/// Where the vectors of a feature store came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    Pooled(Provenance),
    Fisher {
        components: usize,
        descriptor_dim: usize,
        zero_order: bool,
    },
}

impl FeatureSource {
    pub fn layer(&self) -> Layer {
        match self {
            FeatureSource::Pooled(p) => p.layer,
            FeatureSource::Fisher { .. } => Layer::Other,
        }
    }

    /// Whether every stored value is non-negative by construction.
    pub fn is_non_negative(&self) -> bool {
        match self {
            FeatureSource::Pooled(p) => p.layer.is_non_negative() && p.pca_dim.is_none(),
            FeatureSource::Fisher { .. } => false,
        }
    }
}

/// Fixed-length video vectors keyed by video id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub source: FeatureSource,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl FeatureStore {
    pub fn new(source: FeatureSource, dim: usize) -> Self {
        FeatureStore {
            source,
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: &str, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::data(format!("{id}: vector length {} != store dim {}", v.len(), self.dim)));
        }
        self.vectors.insert(id.to_string(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::data(format!("feature store has no vector for '{id}'")))
    }

    /// Rows for `ids` in order.
    pub fn rows(&self, ids: &[String]) -> Result<Vec<Vec<f64>>> {
        ids.iter().map(|id| self.get(id).map(<[f64]>::to_vec)).collect()
    }

    /// Vectors are stored as little-endian `f32`.
    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.source).expect("store metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        for v in [FORMAT_VERSION, self.vectors.len() as u32, self.dim as u32, meta.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&meta);
        for (id, v) in &self.vectors {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || Error::data("feature store is truncated");
        if bytes.len() < 20 || &bytes[..4] != STORE_MAGIC {
            return Err(Error::data("not a feature store (bad magic)"));
        }
        let version = u32_at(bytes, 4);
        if version != FORMAT_VERSION {
            return Err(Error::data(format!("unsupported feature store version {version}")));
        }
        let count = u32_at(bytes, 8) as usize;
        let dim = u32_at(bytes, 12) as usize;
        let meta_len = u32_at(bytes, 16) as usize;
        let mut at = 20;
        let meta = bytes.get(at..at + meta_len).ok_or_else(short)?;
        let source: FeatureSource =
            serde_json::from_slice(meta).map_err(|e| Error::data(format!("feature store metadata: {e}")))?;
        at += meta_len;
        let mut store = FeatureStore::new(source, dim);
        for _ in 0..count {
            let len = u32_at(bytes.get(at..at + 4).ok_or_else(short)?, 0) as usize;
            at += 4;
            let id = std::str::from_utf8(bytes.get(at..at + len).ok_or_else(short)?)
                .map_err(|_| Error::data("feature store id is not UTF-8"))?
                .to_string();
            at += len;
            let raw = bytes.get(at..at + 4 * dim).ok_or_else(short)?;
            at += 4 * dim;
            let v = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("four bytes"))))
                .collect();
            if store.vectors.insert(id.clone(), v).is_some() {
                return Err(Error::data(format!("feature store lists '{id}' twice")));
            }
        }
        if at != bytes.len() {
            return Err(Error::data("feature store has trailing bytes"));
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::DataIntegrity(m) => Error::data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

/// Scores keyed by `(video_id, event)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub scores: BTreeMap<(String, String), f64>,
}

impl ScoreTable {
    pub fn insert(&mut self, video_id: &str, event: &str, score: f64) -> Result<()> {
        match self.scores.entry((video_id.to_string(), event.to_string())) {
            std::collections::btree_map::Entry::Occupied(_) => {
                Err(Error::data(format!("duplicate score for ({video_id}, {event})")))
            }
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(score);
                Ok(())
            }
        }
    }

    pub fn get(&self, video_id: &str, event: &str) -> Option<f64> {
        self.scores.get(&(video_id.to_string(), event.to_string())).copied()
    }

    pub fn keys(&self) -> BTreeSet<(String, String)> {
        self.scores.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn events(&self) -> BTreeSet<String> {
        self.scores.keys().map(|(_, e)| e.clone()).collect()
    }

    /// Scores for one event, sorted by video id.
    pub fn for_event(&self, event: &str) -> Vec<(String, f64)> {
        self.scores
            .iter()
            .filter(|((_, e), _)| e == event)
            .map(|((v, _), s)| (v.clone(), *s))
            .collect()
    }

    /// Tab-separated `video_id  event  score` lines, sorted.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ((v, e), s) in &self.scores {
            out.push_str(&format!("{v}\t{e}\t{s}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = ScoreTable::default();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::data(format!("score line {}: expected 3 tab-separated fields", no + 1)));
            }
            let score: f64 = parts[2]
                .trim()
                .parse()
                .map_err(|_| Error::data(format!("score line {}: bad score '{}'", no + 1, parts[2])))?;
            if !score.is_finite() {
                return Err(Error::data(format!("score line {}: non-finite score", no + 1)));
            }
            table.insert(parts[0], parts[1], score)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::DataIntegrity(m) => Error::data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Proposal boxes for one frame: optional `size W H` line, then one
/// `x_min y_min x_max y_max` box per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalList {
    pub size: Option<(u32, u32)>,
    pub boxes: Vec<BBox>,
}

impl ProposalList {
    pub fn parse(text: &str) -> Result<Self> {
        let mut size = None;
        let mut boxes = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::data(format!("proposal line {}: '{line}'", no + 1));
            if let Some(rest) = line.strip_prefix("size") {
                let v: Vec<u32> = rest
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if v.len() != 2 || size.is_some() || !boxes.is_empty() {
                    return Err(bad());
                }
                size = Some((v[0], v[1]));
                continue;
            }
            let v: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad());
            }
            boxes.push(BBox::new(v[0], v[1], v[2], v[3]).map_err(|_| bad())?);
        }
        Ok(ProposalList { size, boxes })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some((w, h)) = self.size {
            out.push_str(&format!("size {w} {h}\n"));
        }
        for b in &self.boxes {
            out.push_str(&format!("{} {} {} {}\n", b.x_min, b.y_min, b.x_max, b.y_max));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
