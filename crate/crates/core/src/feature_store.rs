//! Per-experience feature sets: the `FEX1` wire format, its JSON sidecar
//! manifest, warmup selection and GPS handling.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! "FEX1" | u32 version = 1 | u32 N | u32 C | u32 S | u32 D |
//! N × ( f32 pixel_mean | D × f32 embedding | C·S × f32 activations )
//! ```
//!
//! Activations are neuron-major: the `S` samples of neuron 0 come first.
//! The manifest lives next to the binary file with a `.json` extension.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FEX1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: u64 = 4 + 5 * 4;

/// WGS84 equatorial radius used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsCoord {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GpsCoord {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Self {
        Self { lat_deg, lon_deg }
    }

    pub fn is_valid(&self) -> bool {
        self.lat_deg.is_finite()
            && self.lon_deg.is_finite()
            && (-90.0..=90.0).contains(&self.lat_deg)
            && (-180.0..=180.0).contains(&self.lon_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthPose {
    FrameIndex { index: u64 },
    Gps { lat_deg: f64, lon_deg: f64 },
}

impl GroundTruthPose {
    pub fn gps(&self) -> Option<GpsCoord> {
        match *self {
            GroundTruthPose::Gps { lat_deg, lon_deg } => Some(GpsCoord { lat_deg, lon_deg }),
            GroundTruthPose::FrameIndex { .. } => None,
        }
    }

    fn same_variant(&self, other: &Self) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub timestamp_s: f64,
    pub pose: GroundTruthPose,
}

/// Metres east (`x_m`) and north (`y_m`) of a projection origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPosition {
    pub x_m: f64,
    pub y_m: f64,
}

impl LocalPosition {
    pub fn distance_to(&self, other: &LocalPosition) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

/// Equirectangular projection of `p` around `origin`.
///
/// Accurate to well under a millimetre over sub-kilometre extents away from
/// the poles, which is all the metric matcher needs.
pub fn gps_to_local(origin: GpsCoord, p: GpsCoord) -> LocalPosition {
    let lat0 = origin.lat_deg.to_radians();
    let dlat = (p.lat_deg - origin.lat_deg).to_radians();
    let dlon = (p.lon_deg - origin.lon_deg).to_radians();
    LocalPosition {
        x_m: EARTH_RADIUS_M * lat0.cos() * dlon,
        y_m: EARTH_RADIUS_M * dlat,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDims {
    pub images: usize,
    pub neurons: usize,
    pub samples_per_image: usize,
    pub embedding_dim: usize,
}

impl FeatureDims {
    pub fn activations_per_image(&self) -> usize {
        self.neurons * self.samples_per_image
    }

    fn record_floats(&self) -> u64 {
        1 + self.embedding_dim as u64 + self.neurons as u64 * self.samples_per_image as u64
    }

    /// Exact byte length of a `FEX1` file with these dimensions.
    pub fn file_len(&self) -> u64 {
        HEADER_BYTES + self.images as u64 * self.record_floats() * 4
    }
}

/// Sidecar metadata stored next to a `FEX1` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experience_id: String,
    pub backbone_id: String,
    pub layer_id: String,
    pub frames: Vec<Frame>,
}

/// Location of the manifest that belongs to a feature file.
pub fn manifest_path(feature_path: &Path) -> PathBuf {
    feature_path.with_extension("json")
}

/// One experience's exported features. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    experience_id: String,
    backbone_id: String,
    layer_id: String,
    dims: FeatureDims,
    pixel_means: Vec<f32>,
    embeddings: Vec<f32>,
    activations: Vec<f32>,
    frames: Vec<Frame>,
}

impl FeatureSet {
    /// Assembles and validates a feature set. `embeddings` is N×D row-major,
    /// `activations` is N×C×S with neurons outermost inside each image.
    pub fn new(
        manifest: Manifest,
        dims: FeatureDims,
        pixel_means: Vec<f32>,
        embeddings: Vec<f32>,
        activations: Vec<f32>,
    ) -> Result<Self> {
        validate_dims(&dims)?;
        let n = dims.images;
        if pixel_means.len() != n
            || embeddings.len() != n * dims.embedding_dim
            || activations.len() != n * dims.activations_per_image()
        {
            return Err(Error::InvalidHeader(format!(
                "payload sizes ({}, {}, {}) do not match dims {:?}",
                pixel_means.len(),
                embeddings.len(),
                activations.len(),
                dims
            )));
        }
        validate_manifest(&manifest, n)?;
        if let Some(i) = pixel_means
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=255.0).contains(v))
        {
            return Err(Error::NonFiniteValue(format!(
                "pixel_mean {} of image {i} outside [0, 255]",
                pixel_means[i]
            )));
        }
        if let Some(i) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "embedding value of image {}",
                i / dims.embedding_dim
            )));
        }
        if let Some(i) = activations.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "activation value of image {}",
                i / dims.activations_per_image()
            )));
        }
        Ok(Self {
            experience_id: manifest.experience_id,
            backbone_id: manifest.backbone_id,
            layer_id: manifest.layer_id,
            dims,
            pixel_means,
            embeddings,
            activations,
            frames: manifest.frames,
        })
    }

    pub fn experience_id(&self) -> &str {
        &self.experience_id
    }

    pub fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }

    pub fn image_count(&self) -> usize {
        self.dims.images
    }

    pub fn neuron_count(&self) -> usize {
        self.dims.neurons
    }

    pub fn embedding_dim(&self) -> usize {
        self.dims.embedding_dim
    }

    pub fn pixel_means(&self) -> &[f32] {
        &self.pixel_means
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn embedding(&self, image: usize) -> &[f32] {
        let d = self.dims.embedding_dim;
        &self.embeddings[image * d..(image + 1) * d]
    }

    /// All `C·S` activations of one image, neuron-major.
    pub fn activations(&self, image: usize) -> &[f32] {
        let a = self.dims.activations_per_image();
        &self.activations[image * a..(image + 1) * a]
    }

    /// The `S` samples of one neuron in one image.
    pub fn neuron_samples(&self, image: usize, neuron: usize) -> &[f32] {
        let s = self.dims.samples_per_image;
        let base = image * self.dims.activations_per_image() + neuron * s;
        &self.activations[base..base + s]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            experience_id: self.experience_id.clone(),
            backbone_id: self.backbone_id.clone(),
            layer_id: self.layer_id.clone(),
            frames: self.frames.clone(),
        }
    }

    /// The first `n` images (clamped to the image count), order preserved.
    pub fn prefix(&self, n: usize) -> Result<FeatureSet> {
        let n = n.min(self.dims.images);
        if n == 0 {
            return Err(Error::EmptyExperience);
        }
        let dims = FeatureDims { images: n, ..self.dims };
        Ok(FeatureSet {
            experience_id: self.experience_id.clone(),
            backbone_id: self.backbone_id.clone(),
            layer_id: self.layer_id.clone(),
            dims,
            pixel_means: self.pixel_means[..n].to_vec(),
            embeddings: self.embeddings[..n * dims.embedding_dim].to_vec(),
            activations: self.activations[..n * dims.activations_per_image()].to_vec(),
            frames: self.frames[..n].to_vec(),
        })
    }

    /// Encodes the binary `FEX1` payload.
    pub fn to_fex_bytes(&self) -> Vec<u8> {
        let d = self.dims;
        let mut buf = Vec::with_capacity(d.file_len() as usize);
        buf.extend_from_slice(MAGIC);
        binio::put_u32(&mut buf, FORMAT_VERSION);
        for v in [d.images, d.neurons, d.samples_per_image, d.embedding_dim] {
            binio::put_u32(&mut buf, v as u32);
        }
        for i in 0..d.images {
            binio::put_f32s(&mut buf, &[self.pixel_means[i]]);
            binio::put_f32s(&mut buf, self.embedding(i));
            binio::put_f32s(&mut buf, self.activations(i));
        }
        buf
    }

    /// Decodes a `FEX1` payload and pairs it with its manifest.
    pub fn from_fex_bytes(bytes: &[u8], manifest: Manifest) -> Result<FeatureSet> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4).map_err(|_| Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(bytes).into_owned(),
        })?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let dims = FeatureDims {
            images: r.u32()? as usize,
            neurons: r.u32()? as usize,
            samples_per_image: r.u32()? as usize,
            embedding_dim: r.u32()? as usize,
        };
        validate_dims(&dims)?;
        let expected = dims.file_len();
        let found = bytes.len() as u64;
        if found < expected {
            return Err(Error::TruncatedPayload { expected, found });
        }
        if found > expected {
            return Err(Error::TrailingData { expected, found });
        }
        if manifest.frames.len() != dims.images {
            return Err(Error::ManifestMismatch(format!(
                "manifest lists {} frames, header declares N = {}",
                manifest.frames.len(),
                dims.images
            )));
        }

        let n = dims.images;
        let mut pixel_means = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n * dims.embedding_dim);
        let mut activations = Vec::with_capacity(n * dims.activations_per_image());
        for _ in 0..n {
            pixel_means.extend(r.f32s(1)?);
            embeddings.extend(r.f32s(dims.embedding_dim)?);
            activations.extend(r.f32s(dims.activations_per_image())?);
        }
        r.finish()?;
        FeatureSet::new(manifest, dims, pixel_means, embeddings, activations)
    }
}

fn validate_dims(d: &FeatureDims) -> Result<()> {
    if d.images == 0 || d.neurons == 0 || d.samples_per_image == 0 || d.embedding_dim == 0 {
        return Err(Error::InvalidHeader(format!(
            "all of N, C, S, D must be positive, got {d:?}"
        )));
    }
    Ok(())
}

fn validate_manifest(m: &Manifest, images: usize) -> Result<()> {
    if m.frames.len() != images {
        return Err(Error::ManifestMismatch(format!(
            "manifest lists {} frames, expected {images}",
            m.frames.len()
        )));
    }
    let mut seen = HashSet::with_capacity(m.frames.len());
    let mut last_t = f64::NEG_INFINITY;
    for (i, f) in m.frames.iter().enumerate() {
        if !seen.insert(f.frame_id.as_str()) {
            return Err(Error::ManifestMismatch(format!(
                "duplicate frame_id {:?}",
                f.frame_id
            )));
        }
        if !f.timestamp_s.is_finite() || f.timestamp_s < 0.0 {
            return Err(Error::NonFiniteValue(format!(
                "timestamp {} of frame {i}",
                f.timestamp_s
            )));
        }
        if f.timestamp_s < last_t {
            return Err(Error::ManifestMismatch(format!(
                "timestamps decrease at frame {i}"
            )));
        }
        last_t = f.timestamp_s;
        if !f.pose.same_variant(&m.frames[0].pose) {
            return Err(Error::ManifestMismatch(
                "frames mix pose variants".to_string(),
            ));
        }
        if let Some(g) = f.pose.gps() {
            if !g.is_valid() {
                return Err(Error::NonFiniteValue(format!(
                    "gps ({}, {}) of frame {i}",
                    g.lat_deg, g.lon_deg
                )));
            }
        }
    }
    Ok(())
}

/// Reads and validates a `FEX1` file together with its sidecar manifest.
pub fn ingest_feature_set(path: &Path) -> Result<FeatureSet> {
    let bytes = binio::read_file(path)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    let manifest: Manifest = binio::read_json(&manifest_path(path))?;
    FeatureSet::from_fex_bytes(&bytes, manifest)
}

/// Writes the binary file at `path` and the manifest beside it.
pub fn write_feature_set(fs: &FeatureSet, path: &Path) -> Result<()> {
    binio::write_file(path, &fs.to_fex_bytes())?;
    binio::write_json(&manifest_path(path), &fs.manifest())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupPolicy {
    FirstKFrames(usize),
    FirstSeconds(f64),
}

#[derive(Debug, Clone)]
pub struct WarmupSelection {
    pub set: FeatureSet,
    /// The experience ended before the policy's window was filled.
    pub shorter_than_policy: bool,
}

/// Keeps the warmup prefix of an experience.
///
/// `FirstSeconds(s)` keeps frames with `t - t0 < s`.
pub fn select_warmup(fs: &FeatureSet, policy: WarmupPolicy) -> Result<WarmupSelection> {
    let frames = fs.frames();
    if frames.is_empty() {
        return Err(Error::EmptyExperience);
    }
    let (keep, short) = match policy {
        WarmupPolicy::FirstKFrames(k) => {
            if k == 0 {
                return Err(Error::InvalidInput("warmup frame count must be >= 1".into()));
            }
            (k.min(frames.len()), frames.len() < k)
        }
        WarmupPolicy::FirstSeconds(s) => {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "warmup duration must be positive, got {s}"
                )));
            }
            let t0 = frames[0].timestamp_s;
            let keep = frames
                .iter()
                .take_while(|f| f.timestamp_s - t0 < s)
                .count();
            (keep, keep == frames.len())
        }
    };
    if short {
        log::warn!(
            "experience {} is shorter than warmup policy {:?}; using all {} frames",
            fs.experience_id(),
            policy,
            frames.len()
        );
    }
    Ok(WarmupSelection {
        set: fs.prefix(keep)?,
        shorter_than_policy: short,
    })
}
