use std::path::{Path, PathBuf};

use clap::Args;
use expsel_core::{EvaluationConfig, HistogramConfig, MatcherSpec, Method, WarmupPolicy};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Seed used by `synth` when none is given.
pub const DEFAULT_SEED: u64 = 1729;

/// Every option any subcommand understands. The same keys (snake_case) are
/// accepted in a TOML file passed with `--config`; flags win over the file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// TOML file supplying any option below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Directory holding `<id>.fex` feature files and their `<id>.json` manifests.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Experience ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub experiences: Option<Vec<String>>,
    /// Query experience id.
    #[arg(long)]
    pub query: Option<String>,
    /// Reference experience ids for `localize`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub references: Option<Vec<String>>,
    /// Map directory.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Input file (a FEX1 file for `ingest`/`rank`, a matrix for `render`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Main output file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// CSV report path for `evaluate`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON summary path for `evaluate`.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Difference-matrix path (written by `localize`).
    #[arg(long)]
    pub matrix: Option<PathBuf>,

    #[arg(long, conflicts_with = "warmup_seconds")]
    pub warmup_frames: Option<usize>,
    #[arg(long)]
    pub warmup_seconds: Option<f64>,
    /// Ground truth: a match is within this many frames.
    #[arg(long, conflicts_with = "matcher_metres")]
    pub matcher_frames: Option<u64>,
    /// Ground truth: a match is within this many metres.
    #[arg(long)]
    pub matcher_metres: Option<f64>,

    /// Histogram bins per neuron.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Fraction of the activation span added on each side of the edges.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Selection methods: vdna, fd, pixel.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,

    /// Split label for a single evaluation group.
    #[arg(long)]
    pub split: Option<String>,
    /// Several evaluation groups (config file only).
    #[arg(skip)]
    pub groups: Option<Vec<GroupConfig>>,

    #[arg(long)]
    pub fixture_recalls: Option<PathBuf>,
    #[arg(long)]
    pub fixture_distances: Option<PathBuf>,
    #[arg(long)]
    pub fixture_composite: Option<PathBuf>,

    /// Seed for the synthetic generator.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames per synthetic experience.
    #[arg(long)]
    pub images: Option<usize>,
    /// Appearance shift per synthetic experience, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub shifts: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub split: String,
    pub experiences: Vec<String>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    /// Reads the `--config` file (if any) and lays the flags over it.
    pub fn resolve(flags: RunConfig) -> CliResult<RunConfig> {
        let Some(path) = flags.config.clone() else {
            return Ok(flags);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut file: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        file.rebase(path.parent().unwrap_or(Path::new(".")));

        if flags.warmup_frames.is_some() || flags.warmup_seconds.is_some() {
            file.warmup_frames = None;
            file.warmup_seconds = None;
        }
        if flags.matcher_frames.is_some() || flags.matcher_metres.is_some() {
            file.matcher_frames = None;
            file.matcher_metres = None;
        }
        if flags.experiences.is_some() || flags.split.is_some() {
            file.groups = None;
        }
        overlay!(file, flags;
            store, experiences, query, references, map, input, output, csv, json, matrix,
            warmup_frames, warmup_seconds, matcher_frames, matcher_metres, bins, margin,
            methods, split, fixture_recalls, fixture_distances, fixture_composite,
            seed, images, shifts);
        file.config = Some(path);
        Ok(file)
    }

    /// Relative paths in a config file are taken relative to that file.
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.store,
            &mut self.map,
            &mut self.input,
            &mut self.output,
            &mut self.csv,
            &mut self.json,
            &mut self.matrix,
            &mut self.fixture_recalls,
            &mut self.fixture_distances,
            &mut self.fixture_composite,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn warmup(&self) -> CliResult<WarmupPolicy> {
        match (self.warmup_frames, self.warmup_seconds) {
            (Some(_), Some(_)) => Err(CliError::Validation(
                "warmup_frames and warmup_seconds are mutually exclusive".into(),
            )),
            (Some(0), None) => Err(CliError::Validation("warmup_frames must be at least 1".into())),
            (Some(k), None) => Ok(WarmupPolicy::FirstKFrames(k)),
            (None, Some(s)) if s.is_finite() && s > 0.0 => Ok(WarmupPolicy::FirstSeconds(s)),
            (None, Some(s)) => Err(CliError::Validation(format!("warmup_seconds must be positive, got {s}"))),
            (None, None) => Ok(EvaluationConfig::default().warmup),
        }
    }

    pub fn matcher(&self) -> CliResult<MatcherSpec> {
        match (self.matcher_frames, self.matcher_metres) {
            (Some(_), Some(_)) => Err(CliError::Validation(
                "matcher_frames and matcher_metres are mutually exclusive".into(),
            )),
            (Some(k), None) => Ok(MatcherSpec::Frames(k)),
            (None, Some(m)) if m.is_finite() && m >= 0.0 => Ok(MatcherSpec::Metres(m)),
            (None, Some(m)) => Err(CliError::Validation(format!("matcher_metres must be non-negative, got {m}"))),
            (None, None) => Ok(EvaluationConfig::default().matcher),
        }
    }

    pub fn histogram(&self) -> CliResult<HistogramConfig> {
        let d = HistogramConfig::default();
        let cfg = HistogramConfig {
            bin_count: self.bins.unwrap_or(d.bin_count),
            margin_fraction: self.margin.unwrap_or(d.margin_fraction),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn methods(&self) -> CliResult<Vec<Method>> {
        let Some(names) = &self.methods else {
            return Ok(Method::ALL.to_vec());
        };
        if names.is_empty() {
            return Err(CliError::Validation("methods list is empty".into()));
        }
        let mut out: Vec<Method> = Vec::new();
        for n in names {
            let m: Method = n.trim().parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn evaluation(&self) -> CliResult<EvaluationConfig> {
        Ok(EvaluationConfig {
            warmup: self.warmup()?,
            matcher: self.matcher()?,
            histogram: self.histogram()?,
            methods: self.methods()?,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

/// Fetches a required option or reports it by its flag name.
pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Validation(format!("--{flag} is required")))
}
