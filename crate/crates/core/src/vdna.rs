//! Visual DNA: per-neuron activation histograms over an image set, compared
//! by averaging per-neuron 1-D Earth-Mover's Distances.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::emd::cdf_l1;
use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;

pub const DEFAULT_BIN_COUNT: usize = 128;
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.05;

/// Edges may drift from perfect uniformity by this much after a round trip.
const UNIFORMITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bin_count: usize,
    pub margin_fraction: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_count: DEFAULT_BIN_COUNT,
            margin_fraction: DEFAULT_MARGIN_FRACTION,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_count < 2 {
            return Err(Error::InvalidInput(format!(
                "bin_count must be >= 2, got {}",
                self.bin_count
            )));
        }
        if !(self.margin_fraction.is_finite() && self.margin_fraction >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "margin_fraction must be a non-negative number, got {}",
                self.margin_fraction
            )));
        }
        Ok(())
    }
}

/// Uniform per-neuron bin edges, `C × (B + 1)` values.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramEdges {
    neurons: usize,
    bins: usize,
    edges: Vec<f64>,
}

impl HistogramEdges {
    /// Uniform edges from per-neuron `(lower, upper)` spans.
    pub fn from_spans(spans: &[(f64, f64)], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidInput(format!("bin count {bins} < 2")));
        }
        if spans.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut edges = Vec::with_capacity(spans.len() * (bins + 1));
        for &(lo, hi) in spans {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidInput(format!("bad span [{lo}, {hi}]")));
            }
            let width = (hi - lo) / bins as f64;
            edges.extend((0..=bins).map(|i| lo + width * i as f64));
        }
        Ok(Self {
            neurons: spans.len(),
            bins,
            edges,
        })
    }

    /// Wraps raw edges after checking they are strictly increasing and uniform.
    pub fn from_raw(neurons: usize, bins: usize, edges: Vec<f64>) -> Result<Self> {
        if neurons == 0 || bins < 2 || edges.len() != neurons * (bins + 1) {
            return Err(Error::InvalidInput(format!(
                "{} edges for C = {neurons}, B = {bins}",
                edges.len()
            )));
        }
        for (c, row) in edges.chunks_exact(bins + 1).enumerate() {
            let w = row[1] - row[0];
            let ok = row.iter().all(|e| e.is_finite())
                && w > 0.0
                && row.windows(2).all(|p| {
                    let d = p[1] - p[0];
                    d > 0.0 && (d - w).abs() <= UNIFORMITY_TOL
                });
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "edges of neuron {c} are not strictly increasing and uniform"
                )));
            }
        }
        Ok(Self {
            neurons,
            bins,
            edges,
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons
    }

    pub fn bin_count(&self) -> usize {
        self.bins
    }

    pub fn neuron(&self, c: usize) -> &[f64] {
        &self.edges[c * (self.bins + 1)..(c + 1) * (self.bins + 1)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin_width(&self, c: usize) -> f64 {
        let e = self.neuron(c);
        e[1] - e[0]
    }

    /// Bin of `x` for neuron `c`; values outside the span land in the
    /// first or last bin.
    #[inline]
    pub fn bin_index(&self, c: usize, x: f64) -> usize {
        let e = self.neuron(c);
        let t = (x - e[0]) / (e[1] - e[0]);
        if t >= 1.0 {
            (t as usize).min(self.bins - 1)
        } else {
            0
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.edges.len() * 8);
        binio::put_f64s(&mut buf, &self.edges);
        buf
    }
}

/// Common support for a group of experiences: per neuron, the sample range
/// widened by `margin_fraction` of itself on each side.
pub fn compute_edges(sets: &[&FeatureSet], cfg: &HistogramConfig) -> Result<HistogramEdges> {
    cfg.validate()?;
    let first = sets.first().ok_or(Error::EmptySet)?;
    let neurons = first.neuron_count();
    for s in sets {
        if s.neuron_count() != neurons {
            return Err(Error::NeuronCountMismatch {
                expected: neurons,
                found: s.neuron_count(),
            });
        }
    }
    let spans: Vec<(f64, f64)> = (0..neurons)
        .into_par_iter()
        .map(|c| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in sets {
                for i in 0..s.image_count() {
                    for &x in s.neuron_samples(i, c) {
                        lo = lo.min(x as f64);
                        hi = hi.max(x as f64);
                    }
                }
            }
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = cfg.margin_fraction * (hi - lo);
                (lo - pad, hi + pad)
            }
        })
        .collect();
    HistogramEdges::from_spans(&spans, cfg.bin_count)
}

/// Per-neuron normalized histograms plus the edges they were built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Vdna {
    edges: Arc<HistogramEdges>,
    image_count: usize,
    mass: Vec<f64>,
}

impl Vdna {
    pub fn neuron_count(&self) -> usize {
        self.edges.neurons
    }

    pub fn bin_count(&self) -> usize {
        self.edges.bins
    }

    pub fn image_count(&self) -> usize {
        self.image_count
    }

    pub fn edges(&self) -> &Arc<HistogramEdges> {
        &self.edges
    }

    pub fn histogram(&self, c: usize) -> &[f64] {
        let b = self.edges.bins;
        &self.mass[c * b..(c + 1) * b]
    }

    /// `vdna.bin` payload: edges then mass, f64 little-endian. Its length
    /// depends only on `(C, B)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity((self.edges.edges.len() + self.mass.len()) * 8);
        binio::put_f64s(&mut buf, &self.edges.edges);
        binio::put_f64s(&mut buf, &self.mass);
        buf
    }

    pub fn meta(&self) -> VdnaMeta {
        VdnaMeta {
            bin_count: self.bin_count(),
            neuron_count: self.neuron_count(),
            image_count: self.image_count,
            edges_policy: EDGES_POLICY.to_string(),
        }
    }

    pub fn from_bytes(meta: &VdnaMeta, bytes: &[u8]) -> Result<Vdna> {
        if meta.image_count == 0 {
            return Err(Error::InvalidHeader("vdna image_count is 0".into()));
        }
        let (c, b) = (meta.neuron_count, meta.bin_count);
        let mut r = Reader::new(bytes);
        let edges = HistogramEdges::from_raw(c, b, r.f64s(c * (b + 1))?)?;
        let mass = r.f64s(c * b)?;
        r.finish()?;
        for (n, h) in mass.chunks_exact(b).enumerate() {
            let total: f64 = h.iter().sum();
            if h.iter().any(|m| !(m.is_finite() && *m >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::NonFiniteValue(format!(
                    "histogram of neuron {n} is not a normalized distribution"
                )));
            }
        }
        Ok(Vdna {
            edges: Arc::new(edges),
            image_count: meta.image_count,
            mass,
        })
    }

    /// Swaps in an equal, shared edge table so many vdnas can point at one copy.
    pub(crate) fn share_edges(&mut self, shared: &Arc<HistogramEdges>) -> Result<()> {
        if *self.edges != **shared {
            return Err(Error::EdgeMismatch);
        }
        self.edges = Arc::clone(shared);
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::write_json(&dir.join("vdna.json"), &self.meta())?;
        binio::write_file(&dir.join("vdna.bin"), &self.to_bytes())
    }

    pub fn load(dir: &Path) -> Result<Vdna> {
        let meta: VdnaMeta = binio::read_json(&dir.join("vdna.json"))?;
        Vdna::from_bytes(&meta, &binio::read_file(&dir.join("vdna.bin"))?)
    }
}

const EDGES_POLICY: &str = "uniform-shared-map";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdnaMeta {
    pub bin_count: usize,
    pub neuron_count: usize,
    pub image_count: usize,
    pub edges_policy: String,
}

/// Histograms every neuron's `N·S` samples on the given edges.
pub fn build_vdna(fs: &FeatureSet, edges: &Arc<HistogramEdges>) -> Result<Vdna> {
    if fs.image_count() == 0 {
        return Err(Error::EmptySet);
    }
    if fs.neuron_count() != edges.neurons {
        return Err(Error::NeuronCountMismatch {
            expected: edges.neurons,
            found: fs.neuron_count(),
        });
    }
    let bins = edges.bins;
    let total = (fs.image_count() * fs.dims().samples_per_image) as f64;
    let per_neuron: Vec<Vec<f64>> = (0..edges.neurons)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; bins];
            for i in 0..fs.image_count() {
                for &x in fs.neuron_samples(i, c) {
                    counts[edges.bin_index(c, x as f64)] += 1;
                }
            }
            counts.into_iter().map(|k| k as f64 / total).collect()
        })
        .collect();
    Ok(Vdna {
        edges: Arc::clone(edges),
        image_count: fs.image_count(),
        mass: per_neuron.concat(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdnaDistance {
    /// Per-neuron EMD in activation units.
    pub per_neuron: Vec<f64>,
    /// Arithmetic mean of `per_neuron`.
    pub aggregate: f64,
}

pub fn vdna_distance(a: &Vdna, b: &Vdna) -> Result<VdnaDistance> {
    if a.neuron_count() != b.neuron_count() {
        return Err(Error::NeuronCountMismatch {
            expected: a.neuron_count(),
            found: b.neuron_count(),
        });
    }
    if !Arc::ptr_eq(&a.edges, &b.edges) && a.edges != b.edges {
        return Err(Error::EdgeMismatch);
    }
    let bins = a.bin_count();
    let edges = &a.edges;
    let per_neuron: Vec<f64> = a
        .mass
        .par_chunks_exact(bins)
        .zip(b.mass.par_chunks_exact(bins))
        .enumerate()
        .map(|(c, (p, q))| edges.bin_width(c) * cdf_l1(p, q))
        .collect();
    let aggregate = binio::compensated_sum(per_neuron.iter().copied()) / per_neuron.len() as f64;
    Ok(VdnaDistance {
        per_neuron,
        aggregate,
    })
}
