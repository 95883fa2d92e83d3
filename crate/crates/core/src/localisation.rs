//! Single-frame topological localisation: Euclidean nearest-neighbour
//! retrieval over embeddings and Recall@1 against ground-truth poses.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::feature_store::{gps_to_local, FeatureSet, Frame, GpsCoord, GroundTruthPose};

/// Anything that can serve per-frame embeddings and poses.
pub trait EmbeddingSource {
    fn experience_id(&self) -> &str;
    fn embedding_dim(&self) -> usize;
    fn frame_count(&self) -> usize;
    fn embedding(&self, frame: usize) -> &[f32];
    fn frames(&self) -> &[Frame];
}

impl EmbeddingSource for FeatureSet {
    fn experience_id(&self) -> &str {
        FeatureSet::experience_id(self)
    }
    fn embedding_dim(&self) -> usize {
        FeatureSet::embedding_dim(self)
    }
    fn frame_count(&self) -> usize {
        self.image_count()
    }
    fn embedding(&self, frame: usize) -> &[f32] {
        FeatureSet::embedding(self, frame)
    }
    fn frames(&self) -> &[Frame] {
        FeatureSet::frames(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub experience_id: String,
    pub frame_index: usize,
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.experience_id, self.frame_index)
    }
}

fn frame_refs<S: EmbeddingSource + ?Sized>(src: &S) -> impl Iterator<Item = FrameRef> + '_ {
    (0..src.frame_count()).map(move |i| FrameRef {
        experience_id: src.experience_id().to_string(),
        frame_index: i,
    })
}

/// Query × reference Euclidean embedding distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    query_ids: Vec<FrameRef>,
    reference_ids: Vec<FrameRef>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixIds {
    query_ids: Vec<FrameRef>,
    reference_ids: Vec<FrameRef>,
}

pub const MATRIX_MAGIC: &[u8; 4] = b"DMX1";
const MATRIX_VERSION: u32 = 1;

impl DifferenceMatrix {
    pub fn new(query_ids: Vec<FrameRef>, reference_ids: Vec<FrameRef>, values: Vec<f64>) -> Result<Self> {
        if values.len() != query_ids.len() * reference_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a {}×{} matrix",
                values.len(),
                query_ids.len(),
                reference_ids.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFiniteValue(format!("matrix entry {v}")));
        }
        Ok(Self {
            query_ids,
            reference_ids,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.reference_ids.len()
    }

    pub fn query_ids(&self) -> &[FrameRef] {
        &self.query_ids
    }

    pub fn reference_ids(&self) -> &[FrameRef] {
        &self.reference_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.cols();
        &self.values[i * r..(i + 1) * r]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    /// Column of the smallest entry in row `i`; ties go to the lowest index.
    pub fn row_argmin(&self, i: usize) -> Option<usize> {
        let row = self.row(i);
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in row.iter().enumerate() {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((j, v));
            }
        }
        best.map(|(j, _)| j)
    }

    /// `"DMX1" | u32 version | u32 Q | u32 R | u32 L | L bytes of JSON ids |
    /// Q·R f32 row-major`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let ids = serde_json::to_vec(&MatrixIds {
            query_ids: self.query_ids.clone(),
            reference_ids: self.reference_ids.clone(),
        })
        .expect("ids serialize");
        let mut buf = Vec::with_capacity(20 + ids.len() + self.values.len() * 4);
        buf.extend_from_slice(MATRIX_MAGIC);
        binio::put_u32(&mut buf, MATRIX_VERSION);
        binio::put_u32(&mut buf, self.rows() as u32);
        binio::put_u32(&mut buf, self.cols() as u32);
        binio::put_u32(&mut buf, ids.len() as u32);
        buf.extend_from_slice(&ids);
        let as_f32: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        binio::put_f32s(&mut buf, &as_f32);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != MATRIX_MAGIC {
            return Err(Error::BadMagic {
                expected: "DMX1".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32()?;
        if version != MATRIX_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let q = r.u32()? as usize;
        let rr = r.u32()? as usize;
        let id_len = r.u32()? as usize;
        let ids: MatrixIds = serde_json::from_slice(r.take(id_len)?)
            .map_err(|e| Error::InvalidHeader(format!("matrix ids: {e}")))?;
        if ids.query_ids.len() != q || ids.reference_ids.len() != rr {
            return Err(Error::InvalidHeader(format!(
                "header says {q}×{rr}, ids describe {}×{}",
                ids.query_ids.len(),
                ids.reference_ids.len()
            )));
        }
        let values = r.f32s(q * rr)?.into_iter().map(f64::from).collect();
        r.finish()?;
        DifferenceMatrix::new(ids.query_ids, ids.reference_ids, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Distances from every query frame to every frame of `refs`, with the
/// reference columns laid out in list order, then frame order.
pub fn difference_matrix<Q, R>(query: &Q, refs: &[&R]) -> Result<DifferenceMatrix>
where
    Q: EmbeddingSource + Sync + ?Sized,
    R: EmbeddingSource + Sync + ?Sized,
{
    let d = query.embedding_dim();
    for r in refs {
        if r.embedding_dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: r.embedding_dim(),
            });
        }
    }
    let columns: Vec<&[f32]> = refs
        .iter()
        .flat_map(|r| (0..r.frame_count()).map(move |j| r.embedding(j)))
        .collect();
    let width = columns.len();
    let mut values = vec![0.0f64; query.frame_count() * width];
    if width > 0 {
        values
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| {
                let q = query.embedding(i);
                for (out, col) in row.iter_mut().zip(&columns) {
                    *out = euclidean(q, col);
                }
            });
    }
    DifferenceMatrix::new(
        frame_refs(query).collect(),
        refs.iter().flat_map(|r| frame_refs(*r)).collect(),
        values,
    )
}

#[inline]
fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthMatcher {
    /// Correct when frame indices differ by at most `max_frames`.
    FrameTolerance { max_frames: u64 },
    /// Correct when positions, projected around `origin`, are within
    /// `max_metres` of each other.
    MetricTolerance { max_metres: f64, origin: GpsCoord },
}

impl GroundTruthMatcher {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GroundTruthMatcher::FrameTolerance { .. } => Ok(()),
            GroundTruthMatcher::MetricTolerance { max_metres, origin } => {
                if !(max_metres.is_finite() && max_metres >= 0.0) {
                    return Err(Error::InvalidInput(format!("metric tolerance {max_metres}")));
                }
                if !origin.is_valid() {
                    return Err(Error::InvalidInput("invalid matcher origin".into()));
                }
                Ok(())
            }
        }
    }
}

pub fn is_match(matcher: &GroundTruthMatcher, q: &GroundTruthPose, r: &GroundTruthPose) -> Result<bool> {
    match (*matcher, *q, *r) {
        (
            GroundTruthMatcher::FrameTolerance { max_frames },
            GroundTruthPose::FrameIndex { index: a },
            GroundTruthPose::FrameIndex { index: b },
        ) => Ok(a.abs_diff(b) <= max_frames),
        (GroundTruthMatcher::MetricTolerance { max_metres, origin }, q, r) => {
            match (q.gps(), r.gps()) {
                (Some(a), Some(b)) => {
                    let pa = gps_to_local(origin, a);
                    let pb = gps_to_local(origin, b);
                    Ok(pa.distance_to(&pb) <= max_metres)
                }
                _ => Err(Error::PoseVariantMismatch),
            }
        }
        _ => Err(Error::PoseVariantMismatch),
    }
}

/// Ground-truth poses keyed by experience, indexed by frame position.
#[derive(Debug, Clone, Default)]
pub struct PoseIndex {
    poses: HashMap<String, Vec<GroundTruthPose>>,
}

impl PoseIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<S: EmbeddingSource + ?Sized>(&mut self, src: &S) {
        self.poses.insert(
            src.experience_id().to_string(),
            src.frames().iter().map(|f| f.pose).collect(),
        );
    }

    pub fn from_sources<S: EmbeddingSource + ?Sized>(sources: &[&S]) -> Self {
        let mut idx = Self::new();
        for s in sources {
            idx.insert(*s);
        }
        idx
    }

    pub fn get(&self, id: &FrameRef) -> Result<GroundTruthPose> {
        self.poses
            .get(&id.experience_id)
            .and_then(|v| v.get(id.frame_index))
            .copied()
            .ok_or_else(|| Error::MissingPose(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub query: FrameRef,
    pub matched: FrameRef,
    pub distance: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalisationResult {
    /// Percentage of queries whose nearest reference is a true match.
    pub recall_at_1: f64,
    pub matches: Vec<QueryMatch>,
}

/// Recall@1 from a difference matrix: each row's argmin (lowest column on
/// ties) is checked against the ground-truth matcher.
pub fn recall_at_1(
    dm: &DifferenceMatrix,
    matcher: &GroundTruthMatcher,
    poses: &PoseIndex,
) -> Result<LocalisationResult> {
    matcher.validate()?;
    if dm.rows() == 0 || dm.cols() == 0 {
        return Err(Error::EmptyInput);
    }
    let matches = (0..dm.rows())
        .into_par_iter()
        .map(|i| {
            let j = dm.row_argmin(i).expect("non-empty row");
            let q = &dm.query_ids[i];
            let r = &dm.reference_ids[j];
            let correct = is_match(matcher, &poses.get(q)?, &poses.get(r)?)?;
            Ok(QueryMatch {
                query: q.clone(),
                matched: r.clone(),
                distance: dm.get(i, j),
                correct,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = matches.iter().filter(|m| m.correct).count();
    Ok(LocalisationResult {
        recall_at_1: 100.0 * hits as f64 / matches.len() as f64,
        matches,
    })
}

/// Localises every frame of `query` against the union of `refs`.
pub fn localise<Q, R>(query: &Q, refs: &[&R], matcher: &GroundTruthMatcher) -> Result<LocalisationResult>
where
    Q: EmbeddingSource + Sync + ?Sized,
    R: EmbeddingSource + Sync + ?Sized,
{
    let dm = difference_matrix(query, refs)?;
    let mut poses = PoseIndex::from_sources(refs);
    poses.insert(query);
    recall_at_1(&dm, matcher, &poses)
}
