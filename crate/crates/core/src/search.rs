//! Search-by-mask: a linear-scan index of downsampled class maps.
//!
//! The distance between two maps is the mean squared error of their one-hot
//! encodings over the nine classes, which reduces to `2/9` times the fraction
//! of cells whose labels differ. Ranking uses the integer mismatch count so
//! ties are exact and fall back to index order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Exec;
use crate::geometry::{rasterize_with, GeometryError, PolygonScene};
use crate::scene::{ClassMap, FrameRef, SceneError, NUM_CLASSES};

pub const DEFAULT_GRID: (u32, u32) = (80, 45);
pub const DEFAULT_K: usize = 9;
pub const DEFAULT_MIN_GAP_MS: u64 = 2000;

const INDEX_MAGIC: &[u8; 4] = b"SFI1";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("the index is empty")]
    EmptyIndex,
    #[error("grid {0}x{1} is invalid")]
    InvalidGrid(u32, u32),
    #[error("reference is {found:?} but the index grid is {expected:?}")]
    GridMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("maps differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid reference scene: {0}")]
    InvalidReference(#[from] GeometryError),
    #[error("query {query} has {found} judgments, expected {expected}")]
    RaggedJudgments {
        query: String,
        expected: usize,
        found: usize,
    },
    #[error("no judgments supplied")]
    NoJudgments,
    #[error("judgments line {line}: {source}")]
    BadJudgment {
        line: usize,
        source: serde_json::Error,
    },
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

fn mismatches(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

fn distance_from_count(count: u32, cells: usize) -> f64 {
    2.0 / NUM_CLASSES as f64 * count as f64 / cells as f64
}

/// One-hot MSE between two equally sized maps, in `[0, 2/9]`.
pub fn map_distance(a: &ClassMap, b: &ClassMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(SearchError::DimensionMismatch(a.dims(), b.dims()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(distance_from_count(mismatches(a.as_raw(), b.as_raw()), a.len()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub frame: FrameRef,
    pub cells: Vec<u8>,
}

/// Immutable index of downsampled maps, sorted by frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameIndex {
    grid_w: u32,
    grid_h: u32,
    entries: Vec<IndexEntry>,
    fingerprint: [u8; 32],
}

fn fingerprint(grid_w: u32, grid_h: u32, entries: &[IndexEntry]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(grid_w.to_le_bytes());
    h.update(grid_h.to_le_bytes());
    for e in entries {
        h.update((e.frame.video_id.len() as u64).to_le_bytes());
        h.update(e.frame.video_id.as_bytes());
        h.update(e.frame.frame_index.to_le_bytes());
        h.update(e.frame.timestamp_ms.to_le_bytes());
        h.update(&e.cells);
    }
    h.finalize().into()
}

impl FrameIndex {
    fn from_entries(grid_w: u32, grid_h: u32, mut entries: Vec<IndexEntry>) -> FrameIndex {
        entries.sort_by(|a, b| a.frame.cmp(&b.frame));
        let fingerprint = fingerprint(grid_w, grid_h, &entries);
        FrameIndex {
            grid_w,
            grid_h,
            entries,
            fingerprint,
        }
    }

    pub fn grid(&self) -> (u32, u32) {
        (self.grid_w, self.grid_h)
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Downsamples a reference to the index grid. A map already at grid size
    /// is used as is; smaller maps are rejected.
    pub fn prepare_reference(&self, reference: &ClassMap) -> Result<ClassMap> {
        let (gw, gh) = self.grid();
        if reference.dims() == (gw, gh) {
            return Ok(reference.clone());
        }
        if reference.width() < gw || reference.height() < gh {
            return Err(SearchError::GridMismatch {
                expected: (gw, gh),
                found: reference.dims(),
            });
        }
        Ok(reference.downsample(gw, gh)?)
    }

    /// Every entry as `(entry position, mismatch count)`, best first; ties
    /// keep index order.
    pub fn rank_all(&self, exec: Exec, cells: &[u8]) -> Vec<(usize, u32)> {
        let counts = exec.map(&self.entries, |e| mismatches(&e.cells, cells));
        let mut ranked: Vec<(usize, u32)> = counts.into_iter().enumerate().collect();
        ranked.sort_by_key(|&(i, c)| (c, i));
        ranked
    }

    pub fn cell_count(&self) -> usize {
        self.grid_w as usize * self.grid_h as usize
    }
}

pub fn build_index(frames: &[(FrameRef, &ClassMap)], grid: (u32, u32)) -> Result<FrameIndex> {
    build_index_with(Exec::default(), frames, grid)
}

pub fn build_index_with(
    exec: Exec,
    frames: &[(FrameRef, &ClassMap)],
    (grid_w, grid_h): (u32, u32),
) -> Result<FrameIndex> {
    if grid_w == 0 || grid_h == 0 {
        return Err(SearchError::InvalidGrid(grid_w, grid_h));
    }
    if frames.is_empty() {
        return Err(SearchError::EmptyCorpus);
    }
    let entries = exec
        .map(frames, |(frame, map)| {
            Ok(IndexEntry {
                frame: frame.clone(),
                cells: map.downsample(grid_w, grid_h)?.into_raw(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameIndex::from_entries(grid_w, grid_h, entries))
}

/// What to search for.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Map(ClassMap),
    Polygons(PolygonScene),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    pub min_gap_ms: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            k: DEFAULT_K,
            min_gap_ms: DEFAULT_MIN_GAP_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub frame: FrameRef,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEcho {
    pub k: usize,
    pub min_gap_ms: u64,
    pub grid_w: u32,
    pub grid_h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query: QueryEcho,
    pub hits: Vec<SearchHit>,
}

pub fn search(index: &FrameIndex, reference: &Reference, params: &SearchParams) -> Result<SearchResult> {
    search_with(Exec::default(), index, reference, params)
}

/// Ranks all frames by distance to the reference, then keeps at most `k`,
/// skipping frames closer than `min_gap_ms` to an already kept frame of the
/// same video.
pub fn search_with(
    exec: Exec,
    index: &FrameIndex,
    reference: &Reference,
    params: &SearchParams,
) -> Result<SearchResult> {
    if params.k == 0 {
        return Err(SearchError::InvalidK);
    }
    if index.is_empty() {
        return Err(SearchError::EmptyIndex);
    }
    let query = match reference {
        Reference::Map(m) => index.prepare_reference(m)?,
        Reference::Polygons(scene) => {
            scene.validate()?;
            index.prepare_reference(&rasterize_with(exec, scene))?
        }
    };

    let cells = index.cell_count();
    let mut kept: Vec<&FrameRef> = Vec::new();
    let mut hits = Vec::new();
    for (i, count) in index.rank_all(exec, query.as_raw()) {
        if hits.len() == params.k {
            break;
        }
        let f = &index.entries[i].frame;
        let clash = kept.iter().any(|k| {
            k.video_id == f.video_id && k.timestamp_ms.abs_diff(f.timestamp_ms) < params.min_gap_ms
        });
        if clash {
            continue;
        }
        kept.push(f);
        hits.push(SearchHit {
            frame: f.clone(),
            distance: distance_from_count(count, cells),
        });
    }
    Ok(SearchResult {
        query: QueryEcho {
            k: params.k,
            min_gap_ms: params.min_gap_ms,
            grid_w: index.grid_w,
            grid_h: index.grid_h,
        },
        hits,
    })
}

pub fn write_index(index: &FrameIndex, mut w: impl Write) -> Result<()> {
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&index.grid_w.to_le_bytes())?;
    w.write_all(&index.grid_h.to_le_bytes())?;
    w.write_all(&(index.entries.len() as u32).to_le_bytes())?;
    w.write_all(&index.fingerprint)?;
    for e in &index.entries {
        let vid = e.frame.video_id.as_bytes();
        w.write_all(&(vid.len() as u32).to_le_bytes())?;
        w.write_all(vid)?;
        w.write_all(&e.frame.frame_index.to_le_bytes())?;
        w.write_all(&e.frame.timestamp_ms.to_le_bytes())?;
        w.write_all(&e.cells)?;
    }
    Ok(())
}

/// Reads an index written by [`write_index`], checking its fingerprint.
pub fn read_index(mut r: impl Read) -> Result<FrameIndex> {
    fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)
            .map_err(|e| SearchError::CorruptIndex(format!("truncated: {e}")))?;
        Ok(b)
    }
    if &take::<4>(&mut r)? != INDEX_MAGIC {
        return Err(SearchError::CorruptIndex("bad magic".into()));
    }
    let grid_w = u32::from_le_bytes(take(&mut r)?);
    let grid_h = u32::from_le_bytes(take(&mut r)?);
    if grid_w == 0 || grid_h == 0 {
        return Err(SearchError::CorruptIndex(format!("grid {grid_w}x{grid_h}")));
    }
    let n = u32::from_le_bytes(take(&mut r)?) as usize;
    let stored: [u8; 32] = take(&mut r)?;
    let cells = grid_w as usize * grid_h as usize;
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        if len > 4096 {
            return Err(SearchError::CorruptIndex("video id too long".into()));
        }
        let mut vid = vec![0u8; len];
        r.read_exact(&mut vid)
            .map_err(|e| SearchError::CorruptIndex(format!("truncated: {e}")))?;
        let video_id =
            String::from_utf8(vid).map_err(|_| SearchError::CorruptIndex("video id not utf-8".into()))?;
        let frame_index = u64::from_le_bytes(take(&mut r)?);
        let timestamp_ms = u64::from_le_bytes(take(&mut r)?);
        let mut c = vec![0u8; cells];
        r.read_exact(&mut c)
            .map_err(|e| SearchError::CorruptIndex(format!("truncated: {e}")))?;
        if c.iter().any(|&v| usize::from(v) >= NUM_CLASSES) {
            return Err(SearchError::CorruptIndex("invalid class id".into()));
        }
        entries.push(IndexEntry {
            frame: FrameRef {
                video_id,
                frame_index,
                timestamp_ms,
            },
            cells: c,
        });
    }
    let index = FrameIndex::from_entries(grid_w, grid_h, entries);
    if index.fingerprint != stored {
        return Err(SearchError::CorruptIndex("fingerprint mismatch".into()));
    }
    Ok(index)
}

pub fn write_index_file(index: &FrameIndex, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_index(index, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_index_file(path: &Path) -> Result<FrameIndex> {
    read_index(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Relevance judgments for one query's suggestions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJudgments {
    pub query_id: String,
    pub judgments: Vec<bool>,
}

/// Parses one JSON object per non-blank line.
pub fn parse_judgments(jsonl: &str) -> Result<Vec<QueryJudgments>> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| SearchError::BadJudgment { line: i + 1, source })
        })
        .collect()
}

/// Fraction of relevant suggestions over `n` per query.
pub fn evaluate_a_at_n(queries: &[QueryJudgments], n: usize) -> Result<f64> {
    if queries.is_empty() || n == 0 {
        return Err(SearchError::NoJudgments);
    }
    let mut relevant = 0usize;
    for q in queries {
        if q.judgments.len() != n {
            return Err(SearchError::RaggedJudgments {
                query: q.query_id.clone(),
                expected: n,
                found: q.judgments.len(),
            });
        }
        relevant += q.judgments.iter().filter(|&&j| j).count();
    }
    Ok(relevant as f64 / (n * queries.len()) as f64)
}
