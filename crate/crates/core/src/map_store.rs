//! Precomputed per-experience map artifacts and online experience selection.
//!
//! On-disk layout:
//!
//! ```text
//! <map>/map.json                  experience order, shared dimensions
//! <map>/edges.bin                 shared histogram edges, C×(B+1) f64
//! <map>/experiences/<id>/manifest.json
//!                        vdna.json, vdna.bin
//!                        gaussian.json, gaussian.bin
//!                        stats.json        pixel summary
//!                        embeddings.bin    N×D f32, row-major
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{pixel_distance, pixel_summary, PixelSummary};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Frame};
use crate::gaussian::{fit_gaussian, frechet_distance, GaussianSummary};
use crate::localisation::EmbeddingSource;
use crate::vdna::{build_vdna, compute_edges, vdna_distance, HistogramConfig, HistogramEdges, Vdna};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vdna,
    Fd,
    Pixel,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vdna, Method::Fd, Method::Pixel];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Vdna => "vdna",
            Method::Fd => "fd",
            Method::Pixel => "pixel",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdna" => Ok(Method::Vdna),
            "fd" => Ok(Method::Fd),
            "pixel" => Ok(Method::Pixel),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapArtifact {
    experience_id: String,
    backbone_id: String,
    layer_id: String,
    vdna: Vdna,
    gaussian: GaussianSummary,
    pixel: PixelSummary,
    embedding_dim: usize,
    embeddings: Vec<f32>,
    frames: Vec<Frame>,
    edges_provenance: Vec<String>,
}

impl MapArtifact {
    pub fn experience_id(&self) -> &str {
        &self.experience_id
    }

    pub fn vdna(&self) -> &Vdna {
        &self.vdna
    }

    pub fn gaussian(&self) -> &GaussianSummary {
        &self.gaussian
    }

    pub fn pixel(&self) -> &PixelSummary {
        &self.pixel
    }

    pub fn edges_provenance(&self) -> &[String] {
        &self.edges_provenance
    }

    pub fn image_count(&self) -> usize {
        self.frames.len()
    }

    fn manifest(&self) -> ArtifactManifest {
        ArtifactManifest {
            experience_id: self.experience_id.clone(),
            backbone_id: self.backbone_id.clone(),
            layer_id: self.layer_id.clone(),
            image_count: self.frames.len(),
            embedding_dim: self.embedding_dim,
            frames: self.frames.clone(),
            edges_provenance: self.edges_provenance.clone(),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        binio::write_json(&dir.join("manifest.json"), &self.manifest())?;
        self.vdna.save(dir)?;
        self.gaussian.save(dir)?;
        binio::write_json(&dir.join("stats.json"), &Stats { pixel: self.pixel })?;
        let mut buf = Vec::with_capacity(self.embeddings.len() * 4);
        binio::put_f32s(&mut buf, &self.embeddings);
        binio::write_file(&dir.join("embeddings.bin"), &buf)
    }

    fn load(dir: &Path, edges: &Arc<HistogramEdges>) -> Result<Self> {
        let m: ArtifactManifest = binio::read_json(&dir.join("manifest.json"))?;
        let mut vdna = Vdna::load(dir)?;
        vdna.share_edges(edges)?;
        let gaussian = GaussianSummary::load(dir)?;
        let stats: Stats = binio::read_json(&dir.join("stats.json"))?;
        let bytes = binio::read_file(&dir.join("embeddings.bin"))?;
        let mut r = Reader::new(&bytes);
        let embeddings = r.f32s(m.image_count * m.embedding_dim)?;
        r.finish()?;
        if m.frames.len() != m.image_count
            || vdna.image_count() != m.image_count
            || gaussian.count() != m.image_count
            || stats.pixel.image_count != m.image_count
            || gaussian.dim() != m.embedding_dim
        {
            return Err(Error::ManifestMismatch(format!(
                "artifact {} has inconsistent component counts",
                m.experience_id
            )));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("embeddings of {}", m.experience_id)));
        }
        Ok(Self {
            experience_id: m.experience_id,
            backbone_id: m.backbone_id,
            layer_id: m.layer_id,
            vdna,
            gaussian,
            pixel: stats.pixel,
            embedding_dim: m.embedding_dim,
            embeddings,
            frames: m.frames,
            edges_provenance: m.edges_provenance,
        })
    }
}

impl EmbeddingSource for MapArtifact {
    fn experience_id(&self) -> &str {
        &self.experience_id
    }
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    fn frame_count(&self) -> usize {
        self.frames.len()
    }
    fn embedding(&self, frame: usize) -> &[f32] {
        &self.embeddings[frame * self.embedding_dim..(frame + 1) * self.embedding_dim]
    }
    fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactManifest {
    experience_id: String,
    backbone_id: String,
    layer_id: String,
    image_count: usize,
    embedding_dim: usize,
    frames: Vec<Frame>,
    edges_provenance: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Stats {
    pixel: PixelSummary,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapIndex {
    backbone_id: String,
    layer_id: String,
    neuron_count: usize,
    bin_count: usize,
    embedding_dim: usize,
    edges_provenance: Vec<String>,
    experiences: Vec<String>,
}

/// A set of map artifacts sharing one histogram support.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceMap {
    edges: Arc<HistogramEdges>,
    artifacts: Vec<MapArtifact>,
}

impl ExperienceMap {
    pub fn edges(&self) -> &Arc<HistogramEdges> {
        &self.edges
    }

    pub fn artifacts(&self) -> &[MapArtifact] {
        &self.artifacts
    }

    pub fn get(&self, experience_id: &str) -> Option<&MapArtifact> {
        self.artifacts.iter().find(|a| a.experience_id == experience_id)
    }

    pub fn backbone_id(&self) -> &str {
        &self.artifacts[0].backbone_id
    }

    pub fn embedding_dim(&self) -> usize {
        self.artifacts[0].embedding_dim
    }

    /// Same map with artifacts reordered; selection must not care.
    pub fn reordered(&self, order: &[usize]) -> ExperienceMap {
        ExperienceMap {
            edges: Arc::clone(&self.edges),
            artifacts: order.iter().map(|&i| self.artifacts[i].clone()).collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let first = &self.artifacts[0];
        let index = MapIndex {
            backbone_id: first.backbone_id.clone(),
            layer_id: first.layer_id.clone(),
            neuron_count: self.edges.neuron_count(),
            bin_count: self.edges.bin_count(),
            embedding_dim: first.embedding_dim,
            edges_provenance: first.edges_provenance.clone(),
            experiences: self.artifacts.iter().map(|a| a.experience_id.clone()).collect(),
        };
        binio::write_json(&dir.join("map.json"), &index)?;
        binio::write_file(&dir.join("edges.bin"), &self.edges.to_bytes())?;
        for a in &self.artifacts {
            a.save(&experience_dir(dir, &a.experience_id))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ExperienceMap> {
        let index: MapIndex = binio::read_json(&dir.join("map.json"))?;
        if index.experiences.is_empty() {
            return Err(Error::EmptyInput);
        }
        let edge_bytes = binio::read_file(&dir.join("edges.bin"))?;
        let mut r = Reader::new(&edge_bytes);
        let raw = r.f64s(index.neuron_count * (index.bin_count + 1))?;
        r.finish()?;
        let edges = Arc::new(HistogramEdges::from_raw(index.neuron_count, index.bin_count, raw)?);
        let mut artifacts = Vec::with_capacity(index.experiences.len());
        for id in &index.experiences {
            check_id(id)?;
            let a = MapArtifact::load(&experience_dir(dir, id), &edges)?;
            if &a.experience_id != id || a.embedding_dim != index.embedding_dim {
                return Err(Error::ManifestMismatch(format!(
                    "artifact directory {id} does not match map.json"
                )));
            }
            artifacts.push(a);
        }
        Ok(ExperienceMap { edges, artifacts })
    }
}

fn experience_dir(root: &Path, id: &str) -> PathBuf {
    root.join("experiences").join(id)
}

/// Experience ids double as directory names.
fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "experience id {id:?} must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}

/// Builds one artifact per experience over edges shared by all of them.
pub fn build_map(sets: &[&FeatureSet], cfg: &HistogramConfig) -> Result<ExperienceMap> {
    let first = sets.first().ok_or(Error::EmptyInput)?;
    let mut seen = BTreeSet::new();
    for s in sets {
        check_id(s.experience_id())?;
        if !seen.insert(s.experience_id()) {
            return Err(Error::InvalidInput(format!(
                "duplicate experience {:?}",
                s.experience_id()
            )));
        }
        if s.embedding_dim() != first.embedding_dim() {
            return Err(Error::DimMismatch {
                expected: first.embedding_dim(),
                found: s.embedding_dim(),
            });
        }
        if s.backbone_id() != first.backbone_id() || s.layer_id() != first.layer_id() {
            return Err(Error::IncompatibleFeatureSet(format!(
                "{} uses {}/{}, expected {}/{}",
                s.experience_id(),
                s.backbone_id(),
                s.layer_id(),
                first.backbone_id(),
                first.layer_id()
            )));
        }
    }
    let edges = Arc::new(compute_edges(sets, cfg)?);
    let provenance: Vec<String> = sets.iter().map(|s| s.experience_id().to_string()).collect();
    let artifacts = sets
        .iter()
        .map(|s| {
            Ok(MapArtifact {
                experience_id: s.experience_id().to_string(),
                backbone_id: s.backbone_id().to_string(),
                layer_id: s.layer_id().to_string(),
                vdna: build_vdna(s, &edges)?,
                gaussian: fit_gaussian(s)?,
                pixel: pixel_summary(s)?,
                embedding_dim: s.embedding_dim(),
                embeddings: s.embeddings().to_vec(),
                frames: s.frames().to_vec(),
                edges_provenance: provenance.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperienceMap { edges, artifacts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub experience_id: String,
    /// Dissimilarity to the warmup set; lower is better.
    pub score: f64,
}

/// Scores every map experience against the warmup frames, most similar
/// first (ties broken by experience id).
pub fn select_experience(
    warmup: &FeatureSet,
    map: &ExperienceMap,
    method: Method,
) -> Result<Vec<ScoredCandidate>> {
    if warmup.backbone_id() != map.backbone_id() {
        return Err(Error::IncompatibleFeatureSet(format!(
            "warmup backbone {} vs map backbone {}",
            warmup.backbone_id(),
            map.backbone_id()
        )));
    }
    let scores: Vec<f64> = match method {
        Method::Vdna => {
            if warmup.neuron_count() != map.edges.neuron_count() {
                return Err(Error::IncompatibleFeatureSet(format!(
                    "warmup has {} neurons, map has {}",
                    warmup.neuron_count(),
                    map.edges.neuron_count()
                )));
            }
            let live = build_vdna(warmup, &map.edges)?;
            map.artifacts
                .iter()
                .map(|a| vdna_distance(&live, &a.vdna).map(|d| d.aggregate))
                .collect::<Result<_>>()?
        }
        Method::Fd => {
            if warmup.embedding_dim() != map.embedding_dim() {
                return Err(Error::IncompatibleFeatureSet(format!(
                    "warmup embeddings have D = {}, map has {}",
                    warmup.embedding_dim(),
                    map.embedding_dim()
                )));
            }
            let live = fit_gaussian(warmup)?;
            map.artifacts
                .iter()
                .map(|a| frechet_distance(&live, &a.gaussian))
                .collect::<Result<_>>()?
        }
        Method::Pixel => {
            let live = pixel_summary(warmup)?;
            map.artifacts.iter().map(|a| pixel_distance(&live, &a.pixel)).collect()
        }
    };
    let mut out: Vec<ScoredCandidate> = map
        .artifacts
        .iter()
        .zip(scores)
        .map(|(a, score)| ScoredCandidate {
            experience_id: a.experience_id.clone(),
            score,
        })
        .collect();
    out.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.experience_id.cmp(&b.experience_id))
    });
    Ok(out)
}

/// Candidate scores keyed by experience id.
pub fn scores_by_id(cands: &[ScoredCandidate]) -> BTreeMap<String, f64> {
    cands
        .iter()
        .map(|c| (c.experience_id.clone(), c.score))
        .collect()
}
