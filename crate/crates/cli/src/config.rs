//! Run configuration: a strict TOML file merged over the built-in defaults.

use std::path::{Path, PathBuf};

use blockevo::arch::{BuildOptions, CodecConfig};
use blockevo::data::{downsample, load_idx, stratified_subset, synth_blobs, LabeledImageSet};
use blockevo::nn::{AdamHyper, TrainOptions};
use blockevo::pso::PsoConfig;
use blockevo::search::{GridConfig, Source, SourceConfig, Target};
use blockevo::seed::derive_seed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvariantViolation { field: String, reason: String },
    #[error("loading dataset `{name}`: {source}")]
    Data {
        name: String,
        #[source]
        source: blockevo::data::DataError,
    },
}

fn violation(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvariantViolation {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per available core.
    pub parallelism: usize,
    pub codec: CodecSection,
    pub pso: PsoSection,
    pub train: TrainSection,
    pub surrogate: SurrogateSection,
    pub grid: GridSection,
    pub sources: Vec<DatasetConfig>,
    pub target: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub max_layers: usize,
    pub disable_sentinel: i64,
    pub growth_min: usize,
    pub growth_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoSection {
    pub inertia: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_clamp: f64,
    pub population_size: usize,
    pub generations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub full_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub stem_channels: usize,
    pub width_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    pub window: usize,
    pub lambda: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub widen: [usize; 2],
    pub deepen: [usize; 2],
    /// Defaults to `train.full_epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        name: String,
        #[serde(default = "one")]
        weight: f64,
        num_classes: usize,
        per_class: usize,
        image_size: usize,
        noise_std: f64,
        /// Derived from the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Idx {
        name: String,
        #[serde(default = "one")]
        weight: f64,
        images: PathBuf,
        labels: PathBuf,
        /// Optional separate test split; otherwise a seeded 80/20 split.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default = "one_usize")]
        downsample: usize,
        /// Stratified subset size per class; all images when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        per_class: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 0,
            codec: CodecSection::default(),
            pso: PsoSection::default(),
            train: TrainSection::default(),
            surrogate: SurrogateSection::default(),
            grid: GridSection::default(),
            sources: vec![
                DatasetConfig::blobs("blobs-a", 4, 250, 14, 0.3),
                DatasetConfig::blobs("blobs-b", 5, 200, 14, 0.4),
            ],
            target: DatasetConfig::blobs("blobs-target", 10, 80, 14, 0.8),
        }
    }
}

impl Default for CodecSection {
    fn default() -> Self {
        let c = CodecConfig::default();
        Self {
            max_layers: c.max_layers,
            disable_sentinel: c.disable_sentinel,
            growth_min: c.growth_min,
            growth_max: c.growth_max,
        }
    }
}

impl Default for PsoSection {
    fn default() -> Self {
        let p = PsoConfig::default();
        Self {
            inertia: p.inertia,
            c1: p.c1,
            c2: p.c2,
            v_clamp: p.v_clamp,
            population_size: p.population_size,
            generations: p.generations,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamHyper::default();
        let b = BuildOptions::default();
        Self {
            full_epochs: 50,
            batch_size: TrainOptions::default().batch_size,
            lr: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.epsilon,
            stem_channels: b.stem_channels,
            width_cap: b.width_cap,
        }
    }
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let f = blockevo::surrogate::FitOptions::default();
        Self {
            window: blockevo::surrogate::DEFAULT_WINDOW,
            lambda: f.lambda,
            iterations: f.iterations,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            widen: [1, 3],
            deepen: [2, 5],
            eval_epochs: None,
        }
    }
}

impl DatasetConfig {
    pub fn blobs(name: &str, num_classes: usize, per_class: usize, image_size: usize, noise_std: f64) -> Self {
        DatasetConfig::Blobs {
            name: name.into(),
            weight: 1.0,
            num_classes,
            per_class,
            image_size,
            noise_std,
            seed: None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            DatasetConfig::Blobs { name, .. } | DatasetConfig::Idx { name, .. } => name,
        }
    }

    pub fn weight(&self) -> f64 {
        match self {
            DatasetConfig::Blobs { weight, .. } | DatasetConfig::Idx { weight, .. } => *weight,
        }
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let w = self.weight();
        if !(w > 0.0 && w.is_finite()) {
            return Err(violation(format!("{field}.weight"), "must be > 0"));
        }
        match self {
            DatasetConfig::Blobs {
                num_classes,
                per_class,
                image_size,
                noise_std,
                ..
            } => {
                if *num_classes < 2 {
                    return Err(violation(format!("{field}.num_classes"), "must be >= 2"));
                }
                if *per_class == 0 {
                    return Err(violation(format!("{field}.per_class"), "must be >= 1"));
                }
                if *image_size == 0 {
                    return Err(violation(format!("{field}.image_size"), "must be >= 1"));
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(violation(format!("{field}.noise_std"), "must be >= 0"));
                }
            }
            DatasetConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
                downsample,
                per_class,
                ..
            } => {
                for (key, p) in [("images", Some(images)), ("labels", Some(labels))]
                    .into_iter()
                    .chain([("test_images", test_images.as_ref()), ("test_labels", test_labels.as_ref())])
                {
                    if let Some(p) = p {
                        if !p.exists() {
                            return Err(violation(format!("{field}.{key}"), format!("{} does not exist", p.display())));
                        }
                    }
                }
                if test_images.is_some() != test_labels.is_some() {
                    return Err(violation(format!("{field}.test_images"), "test_images and test_labels go together"));
                }
                if *downsample == 0 {
                    return Err(violation(format!("{field}.downsample"), "must be >= 1"));
                }
                if *per_class == Some(0) {
                    return Err(violation(format!("{field}.per_class"), "must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Loads the dataset; `(train, test)` when a separate test split exists.
    fn load(&self, seed: u64) -> Result<(LabeledImageSet, Option<LabeledImageSet>), ConfigError> {
        let data_err = |source| ConfigError::Data {
            name: self.name().to_string(),
            source,
        };
        match self {
            DatasetConfig::Blobs {
                name,
                num_classes,
                per_class,
                image_size,
                noise_std,
                seed: own,
                ..
            } => {
                let s = own.unwrap_or_else(|| derive_seed(seed, "dataset", 0));
                let mut set = synth_blobs(*num_classes, *per_class, *image_size, *noise_std, s);
                set.name = name.clone();
                Ok((set, None))
            }
            DatasetConfig::Idx {
                name,
                images,
                labels,
                test_images,
                test_labels,
                downsample: factor,
                per_class,
                ..
            } => {
                let prepare = |set: LabeledImageSet, label: &str| -> Result<LabeledImageSet, ConfigError> {
                    let mut set = downsample(&set, *factor).map_err(data_err)?;
                    if let Some(k) = per_class {
                        set = stratified_subset(&set, *k, derive_seed(seed, "subset", 0)).map_err(data_err)?;
                    }
                    set.name = format!("{name}{label}");
                    Ok(set)
                };
                let train = prepare(load_idx(images, labels).map_err(data_err)?, "")?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => {
                        let t = load_idx(i, l).map_err(data_err)?;
                        Some(downsample(&t, *factor).map_err(data_err)?)
                    }
                    _ => None,
                };
                Ok((train, test))
            }
        }
    }
}

/// Line (1-based) of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses `text` strictly and validates the merged result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            if let Some(rest) = message.strip_prefix("unknown field `") {
                let key = rest.split('`').next().unwrap_or_default().to_string();
                return ConfigError::UnknownKey(key);
            }
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            ConfigError::ParseError { line, message }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.codec_config()
            .validate()
            .map_err(|e| violation("codec", e.to_string()))?;
        let pso = PsoConfig {
            position_bounds: self.codec_config().position_bounds(),
            ..self.pso_config()
        };
        pso.validate()
            .map_err(|e| violation(format!("pso.{}", e.field), e.reason))?;
        let t = &self.train;
        if t.full_epochs == 0 {
            return Err(violation("train.full_epochs", "must be >= 1"));
        }
        if t.batch_size == 0 {
            return Err(violation("train.batch_size", "must be >= 1"));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return Err(violation("train.lr", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&t.beta1) {
            return Err(violation("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&t.beta2) {
            return Err(violation("train.beta2", "must lie in [0, 1)"));
        }
        if !(t.eps > 0.0) {
            return Err(violation("train.eps", "must be > 0"));
        }
        if t.stem_channels == 0 {
            return Err(violation("train.stem_channels", "must be >= 1"));
        }
        if t.width_cap == 0 {
            return Err(violation("train.width_cap", "must be >= 1"));
        }
        let s = &self.surrogate;
        if s.window == 0 {
            return Err(violation("surrogate.window", "must be >= 1"));
        }
        if !(s.lambda > 0.0) {
            return Err(violation("surrogate.lambda", "must be > 0"));
        }
        if s.iterations == 0 {
            return Err(violation("surrogate.iterations", "must be >= 1"));
        }
        for (field, [lo, hi]) in [("grid.widen", self.grid.widen), ("grid.deepen", self.grid.deepen)] {
            if lo == 0 || lo > hi {
                return Err(violation(field, "must be a non-empty range with lower bound >= 1"));
            }
        }
        if self.grid.eval_epochs == Some(0) {
            return Err(violation("grid.eval_epochs", "must be >= 1"));
        }
        if self.sources.is_empty() {
            return Err(violation("sources", "at least one source is required"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.validate(&format!("sources[{i}]"))?;
        }
        let mut names: Vec<&str> = self.sources.iter().map(DatasetConfig::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(violation("sources", "source names must be unique"));
        }
        self.target.validate("target")?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            max_layers: self.codec.max_layers,
            disable_sentinel: self.codec.disable_sentinel,
            growth_min: self.codec.growth_min,
            growth_max: self.codec.growth_max,
        }
    }

    pub fn pso_config(&self) -> PsoConfig {
        let p = &self.pso;
        PsoConfig {
            inertia: p.inertia,
            c1: p.c1,
            c2: p.c2,
            v_clamp: p.v_clamp,
            position_bounds: self.codec_config().position_bounds(),
            population_size: p.population_size,
            generations: p.generations,
            seed: derive_seed(self.seed, "pso", 0),
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            adam: AdamHyper {
                learning_rate: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.eps,
            },
            batch_size: t.batch_size,
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            stem_channels: self.train.stem_channels,
            width_cap: self.train.width_cap,
        }
    }

    pub fn eval_epochs(&self) -> usize {
        self.grid.eval_epochs.unwrap_or(self.train.full_epochs)
    }

    pub fn source_config(&self) -> Result<SourceConfig, ConfigError> {
        let mut sources = Vec::with_capacity(self.sources.len());
        for (i, d) in self.sources.iter().enumerate() {
            let data_seed = derive_seed(self.seed, "source-data", i as u64);
            let (train, test) = d.load(data_seed)?;
            let source = match test {
                Some(test) => Source {
                    name: d.name().to_string(),
                    train,
                    test,
                    weight: d.weight(),
                },
                None => Source::split(&train, d.weight(), derive_seed(self.seed, "source-split", i as u64))
                    .map_err(|e| violation(format!("sources[{i}]"), e.to_string()))?,
            };
            sources.push(Source {
                name: d.name().to_string(),
                ..source
            });
        }
        Ok(SourceConfig {
            sources,
            codec: self.codec_config(),
            pso: self.pso_config(),
            full_epochs: self.train.full_epochs,
            window: self.surrogate.window,
            build: self.build_options(),
            surrogate_lambda: self.surrogate.lambda,
            surrogate_iterations: self.surrogate.iterations,
            seed: derive_seed(self.seed, "evolve", 0),
        })
    }

    pub fn target(&self) -> Result<Target, ConfigError> {
        let (train, test) = self.target.load(derive_seed(self.seed, "target-data", 0))?;
        match test {
            Some(test) => Ok(Target { train, test }),
            None => Target::split(&train, derive_seed(self.seed, "target-split", 0))
                .map_err(|e| violation("target", e.to_string())),
        }
    }

    pub fn grid_config(&self) -> Result<GridConfig, ConfigError> {
        Ok(GridConfig {
            widen_range: (self.grid.widen[0], self.grid.widen[1]),
            deepen_range: (self.grid.deepen[0], self.grid.deepen[1]),
            target: self.target()?,
            eval_epochs: self.eval_epochs(),
            build: self.build_options(),
            seed: derive_seed(self.seed, "grid", 0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.pso.inertia, 0.7298);
        assert_eq!((c.pso.c1, c.pso.c2), (1.49618, 1.49618));
        assert_eq!((c.pso.population_size, c.pso.generations), (30, 50));
        assert_eq!(c.codec.max_layers, 16);
        assert_eq!(c.train.full_epochs, 50);
        assert_eq!((c.grid.widen, c.grid.deepen), ([1, 3], [2, 5]));
        assert_eq!(c.eval_epochs(), 50);
    }

    #[test]
    fn zero_population_is_rejected() {
        let e = RunConfig::parse("[pso]\npopulation_size = 0\n").unwrap_err();
        assert!(
            matches!(&e, ConfigError::InvariantViolation { field, .. } if field == "pso.population_size"),
            "{e}"
        );
    }

    #[test]
    fn misspelled_key_is_named() {
        let e = RunConfig::parse("[pso]\npopulaton_size = 4\n").unwrap_err();
        assert!(matches!(&e, ConfigError::UnknownKey(k) if k == "populaton_size"), "{e}");
        let e = RunConfig::parse("sed = 4\n").unwrap_err();
        assert!(matches!(&e, ConfigError::UnknownKey(k) if k == "sed"), "{e}");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = RunConfig::parse("seed = 1\n[pso\n").unwrap_err();
        assert!(matches!(e, ConfigError::ParseError { line: 2, .. }), "{e}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
            seed = 9
            [grid]
            widen = [1, 2]
            deepen = [2, 3]
            eval_epochs = 3
            [[sources]]
            kind = "blobs"
            name = "a"
            num_classes = 3
            per_class = 10
            image_size = 8
            noise_std = 0.1
            seed = 4
        "#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.sources.len(), 1);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn missing_idx_path_is_a_violation() {
        let text = r#"
            [target]
            kind = "idx"
            name = "t"
            images = "/nonexistent/images"
            labels = "/nonexistent/labels"
        "#;
        let e = RunConfig::parse(text).unwrap_err();
        assert!(matches!(&e, ConfigError::InvariantViolation { field, .. } if field == "target.images"), "{e}");
    }

    #[test]
    fn sub_seeds_follow_the_run_seed() {
        let a = RunConfig::parse("seed = 1").unwrap();
        let b = RunConfig::parse("seed = 2").unwrap();
        assert_ne!(a.pso_config().seed, b.pso_config().seed);
        assert_eq!(a.pso_config().seed, RunConfig::parse("seed = 1").unwrap().pso_config().seed);
    }
}
