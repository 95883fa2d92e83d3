use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use expsel_core::evaluation::{read_fixture, CompositeRow, DistanceRow, RecallRow};
use expsel_core::synthetic::{ShiftScene, SyntheticConfig};
use expsel_core::{
    build_map, difference_matrix, evaluate, evaluate_fixture, ingest_feature_set, recall_at_1, select_experience,
    select_warmup, DifferenceMatrix, EvaluationReport, ExperienceMap, ExperimentGroup, FeatureSet,
    LocalisationResult, PoseIndex, ScoredCandidate,
};
use serde::Serialize;

use crate::config::{required, GroupConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::render::render_pgm;

pub fn fex_path(store: &Path, id: &str) -> PathBuf {
    store.join(format!("{id}.fex"))
}

fn check_id(id: &str) -> CliResult<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(format!("invalid experience id {id:?}")))
    }
}

fn existing_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} not found", path.display())))
    }
}

fn existing_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} is not a directory", path.display())))
    }
}

/// Checks every referenced file first, then parses them in order.
fn load_from_store(store: &Path, ids: &[String]) -> CliResult<Vec<FeatureSet>> {
    existing_dir(store, "store")?;
    let mut seen = BTreeSet::new();
    for id in ids {
        check_id(id)?;
        if !seen.insert(id) {
            return Err(CliError::Validation(format!("experience {id} listed twice")));
        }
        existing_file(&fex_path(store, id), "feature file")?;
    }
    ids.iter()
        .map(|id| {
            let fs = ingest_feature_set(&fex_path(store, id))?;
            if fs.experience_id() != id {
                return Err(CliError::Validation(format!(
                    "{} declares experience id {}",
                    fex_path(store, id).display(),
                    fs.experience_id()
                )));
            }
            Ok(fs)
        })
        .collect()
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn emit(out: &mut dyn Write, bytes: &[u8]) -> CliResult<()> {
    out.write_all(bytes)
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn check_optional_target(path: &Option<PathBuf>) -> CliResult<()> {
    match path {
        Some(p) => Outputs::check_file_target(p),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct IngestSummary<'a> {
    experience_id: &'a str,
    backbone_id: &'a str,
    layer_id: &'a str,
    images: usize,
    neurons: usize,
    samples_per_image: usize,
    embedding_dim: usize,
    stored_as: Option<PathBuf>,
}

/// Validates a FEX1 file with its manifest and optionally copies it into a store.
pub fn cmd_ingest(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<FeatureSet> {
    let input = required(&cfg.input, "input")?;
    existing_file(input, "input")?;
    if let Some(store) = &cfg.store {
        existing_dir(store, "store")?;
    }
    let fs = ingest_feature_set(input)?;
    check_id(fs.experience_id())?;

    let mut outputs = Outputs::new();
    let mut stored_as = None;
    if let Some(store) = &cfg.store {
        let target = fex_path(store, fs.experience_id());
        let same = target.canonicalize().ok() == input.canonicalize().ok();
        if !same {
            outputs.write(&target, &fs.to_fex_bytes())?;
            outputs.write(&target.with_extension("json"), &json_bytes(&fs.manifest())?)?;
        }
        stored_as = Some(target);
    }
    let d = fs.dims();
    let summary = IngestSummary {
        experience_id: fs.experience_id(),
        backbone_id: fs.backbone_id(),
        layer_id: fs.layer_id(),
        images: d.images,
        neurons: d.neurons,
        samples_per_image: d.samples_per_image,
        embedding_dim: d.embedding_dim,
        stored_as,
    };
    emit(out, &json_bytes(&summary)?)?;
    outputs.commit();
    Ok(fs)
}

/// Builds shared-edge artifacts for the listed experiences and saves the map.
pub fn cmd_build_map(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<ExperienceMap> {
    let store = required(&cfg.store, "store")?;
    let ids = required(&cfg.experiences, "experiences")?;
    let dir = required(&cfg.map, "map")?;
    if ids.is_empty() {
        return Err(CliError::Validation("--experiences is empty".into()));
    }
    let hist = cfg.histogram()?;
    Outputs::check_dir_target(dir)?;
    let sets = load_from_store(store, ids)?;
    let refs: Vec<&FeatureSet> = sets.iter().collect();
    let map = build_map(&refs, &hist)?;

    let mut outputs = Outputs::new();
    outputs.claim_dir(dir);
    map.save(dir)?;
    writeln!(
        out,
        "map {}: {} experiences, {} neurons x {} bins, backbone {}",
        dir.display(),
        map.artifacts().len(),
        map.edges().neuron_count(),
        map.edges().bin_count(),
        map.backbone_id()
    )
    .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    outputs.commit();
    Ok(map)
}

#[derive(Debug, Serialize)]
pub struct RankReport {
    pub query: String,
    pub warmup_frames: usize,
    pub shorter_than_policy: bool,
    pub rankings: BTreeMap<String, Vec<ScoredCandidate>>,
}

fn query_set(cfg: &RunConfig) -> CliResult<FeatureSet> {
    match (&cfg.input, &cfg.query) {
        (Some(input), _) => {
            existing_file(input, "input")?;
            Ok(ingest_feature_set(input)?)
        }
        (None, Some(q)) => {
            let store = required(&cfg.store, "store")?;
            Ok(load_from_store(store, std::slice::from_ref(q))?.remove(0))
        }
        (None, None) => Err(CliError::Validation("--input or --query is required".into())),
    }
}

/// Ranks the experiences of a saved map against the query's warmup frames.
pub fn cmd_rank(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<RankReport> {
    let dir = required(&cfg.map, "map")?;
    existing_dir(dir, "map")?;
    let policy = cfg.warmup()?;
    let methods = cfg.methods()?;
    check_optional_target(&cfg.output)?;
    let query = query_set(cfg)?;
    let map = ExperienceMap::load(dir)?;

    let warmup = select_warmup(&query, policy)?;
    if warmup.shorter_than_policy {
        log::warn!(
            "{} has only {} frames, shorter than the warmup window",
            query.experience_id(),
            query.image_count()
        );
    }
    let mut rankings = BTreeMap::new();
    for m in methods {
        rankings.insert(m.name().to_string(), select_experience(&warmup.set, &map, m)?);
    }
    let report = RankReport {
        query: query.experience_id().to_string(),
        warmup_frames: warmup.set.image_count(),
        shorter_than_policy: warmup.shorter_than_policy,
        rankings,
    };
    let bytes = json_bytes(&report)?;
    let mut outputs = Outputs::new();
    match &cfg.output {
        Some(p) => outputs.write(p, &bytes)?,
        None => emit(out, &bytes)?,
    }
    outputs.commit();
    Ok(report)
}

/// Localises every query frame against the concatenated references.
pub fn cmd_localize(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<LocalisationResult> {
    let store = required(&cfg.store, "store")?;
    let q = required(&cfg.query, "query")?;
    let ref_ids = required(&cfg.references, "references")?;
    if ref_ids.is_empty() {
        return Err(CliError::Validation("--references is empty".into()));
    }
    let spec = cfg.matcher()?;
    check_optional_target(&cfg.output)?;
    check_optional_target(&cfg.matrix)?;
    let mut all_ids = vec![q.clone()];
    all_ids.extend(ref_ids.iter().cloned());
    let mut sets = load_from_store(store, &all_ids)?;
    let query = sets.remove(0);
    let matcher = spec.for_query(&query)?;

    let refs: Vec<&FeatureSet> = sets.iter().collect();
    let dm = difference_matrix(&query, &refs)?;
    let mut sources: Vec<&FeatureSet> = vec![&query];
    sources.extend(refs.iter().copied());
    let result = recall_at_1(&dm, &matcher, &PoseIndex::from_sources(&sources))?;

    let mut outputs = Outputs::new();
    if let Some(p) = &cfg.matrix {
        outputs.write(p, &dm.to_bytes())?;
    }
    match &cfg.output {
        Some(p) => {
            outputs.write(p, &json_bytes(&result)?)?;
            writeln!(out, "{}: Recall@1 {:.2} over {} frames", query.experience_id(), result.recall_at_1, dm.rows())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
        }
        None => emit(out, &json_bytes(&result)?)?,
    }
    outputs.commit();
    Ok(result)
}

fn groups(cfg: &RunConfig) -> CliResult<Vec<GroupConfig>> {
    if let Some(g) = &cfg.groups {
        if g.is_empty() {
            return Err(CliError::Validation("groups list is empty".into()));
        }
        return Ok(g.clone());
    }
    let ids = required(&cfg.experiences, "experiences")?;
    Ok(vec![GroupConfig {
        split: cfg.split.clone().unwrap_or_else(|| "all".into()),
        experiences: ids.clone(),
    }])
}

/// Leave-one-out evaluation, or fixture mode when recall/distance tables are given.
pub fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<EvaluationReport> {
    check_optional_target(&cfg.csv)?;
    check_optional_target(&cfg.json)?;
    let report = if cfg.fixture_recalls.is_some() || cfg.fixture_distances.is_some() {
        let recalls_path = required(&cfg.fixture_recalls, "fixture-recalls")?;
        let dist_path = required(&cfg.fixture_distances, "fixture-distances")?;
        existing_file(recalls_path, "fixture")?;
        existing_file(dist_path, "fixture")?;
        if let Some(p) = &cfg.fixture_composite {
            existing_file(p, "fixture")?;
        }
        let recalls: Vec<RecallRow> = read_fixture(recalls_path)?;
        let distances: Vec<DistanceRow> = read_fixture(dist_path)?;
        let composite: Vec<CompositeRow> = match &cfg.fixture_composite {
            Some(p) => read_fixture(p)?,
            None => Vec::new(),
        };
        evaluate_fixture(&recalls, &distances, &composite)?
    } else {
        let store = required(&cfg.store, "store")?;
        let eval_cfg = cfg.evaluation()?;
        let specs = groups(cfg)?;
        let mut loaded = Vec::with_capacity(specs.len());
        for g in &specs {
            loaded.push(ExperimentGroup {
                split: g.split.clone(),
                experiences: load_from_store(store, &g.experiences)?,
            });
        }
        evaluate(&loaded, &eval_cfg)?
    };

    let csv = report.csv_string()?;
    let summary = report.summary_json()?;
    let mut outputs = Outputs::new();
    match &cfg.csv {
        Some(p) => {
            outputs.write(p, csv.as_bytes())?;
            let mut table = String::from("method      mean_penalty  slots\n");
            for (name, avg) in report.method_averages()? {
                table.push_str(&format!("{name:<10}  {:>12.2}  {:>5}\n", avg.mean_penalty, avg.slots));
            }
            emit(out, table.as_bytes())?;
        }
        None => emit(out, csv.as_bytes())?,
    }
    if let Some(p) = &cfg.json {
        outputs.write(p, summary.as_bytes())?;
    }
    outputs.commit();
    Ok(report)
}

/// Writes a difference matrix as a greyscale PGM.
pub fn cmd_render(cfg: &RunConfig, _out: &mut dyn Write) -> CliResult<()> {
    let input = cfg
        .matrix
        .as_ref()
        .or(cfg.input.as_ref())
        .ok_or_else(|| CliError::Validation("--matrix is required".into()))?;
    let target = required(&cfg.output, "output")?;
    existing_file(input, "matrix")?;
    Outputs::check_file_target(target)?;
    let dm = DifferenceMatrix::load(input)?;
    let mut outputs = Outputs::new();
    outputs.write(target, &render_pgm(&dm))?;
    outputs.commit();
    Ok(())
}

/// Writes seeded synthetic experiences of one scene at increasing appearance shift.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let store = required(&cfg.store, "store")?;
    let ids: Vec<String> = cfg
        .experiences
        .clone()
        .unwrap_or_else(|| (0..4).map(|i| format!("shift{i}")).collect());
    let shifts: Vec<f64> = cfg
        .shifts
        .clone()
        .unwrap_or_else(|| (0..ids.len()).map(|i| i as f64).collect());
    if ids.is_empty() || ids.len() != shifts.len() {
        return Err(CliError::Validation(format!(
            "{} experiences but {} shifts",
            ids.len(),
            shifts.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for (id, s) in ids.iter().zip(&shifts) {
        check_id(id)?;
        if !seen.insert(id) {
            return Err(CliError::Validation(format!("experience {id} listed twice")));
        }
        if !(s.is_finite() && *s >= 0.0) {
            return Err(CliError::Validation(format!("shift must be non-negative, got {s}")));
        }
    }
    let mut synth = SyntheticConfig::small();
    if let Some(n) = cfg.images {
        if n == 0 {
            return Err(CliError::Validation("--images must be at least 1".into()));
        }
        synth.images = n;
    }
    let mut outputs = Outputs::new();
    if store.exists() {
        existing_dir(store, "store")?;
    } else {
        Outputs::check_dir_target(store)?;
        outputs.claim_dir(store);
        std::fs::create_dir(store).map_err(|e| CliError::io(store, e))?;
    }
    let seed = cfg.seed();
    let scene = ShiftScene::new(&synth, seed);
    let mut written = Vec::new();
    for (i, (id, shift)) in ids.iter().zip(&shifts).enumerate() {
        let fs = scene.experience(id, *shift, seed.wrapping_add(1 + i as u64));
        let path = fex_path(store, id);
        outputs.write(&path, &fs.to_fex_bytes())?;
        outputs.write(&path.with_extension("json"), &json_bytes(&fs.manifest())?)?;
        written.push(path);
    }
    for p in &written {
        writeln!(out, "{}", p.display()).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    outputs.commit();
    Ok(written)
}
