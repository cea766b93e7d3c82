//! Experiment configuration: a TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use senti_core::bases::{BaseKind, BaseParams};
use senti_core::corpus::{CorpusFormat, FoldScheme};
use senti_core::embeddings::SkipGramParams;

/// Bad input from the user: a config that does not parse, a missing corpus,
/// an unknown model. The binary exits with status 2 on these.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Tsv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Where `emb300.bin`/`emb60.bin` live; defaults to `<out>/embeddings`.
    pub dir: Option<PathBuf>,
    pub hybrid_dim: usize,
    pub cnn_dim: usize,
    pub skipgram: SkipGramParams,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dir: None,
            hybrid_dim: 300,
            cnn_dim: 60,
            skipgram: SkipGramParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinationConfig {
    pub vote_all: bool,
    pub lr_all: bool,
    /// Adds an `LR_subset` row: the meta-model over `subset` only.
    pub lr_subset: bool,
    pub subset: Vec<BaseKind>,
    /// When positive, greedy selection on the validation part picks up to
    /// this many bases instead of the fixed `subset`.
    pub select_max_k: usize,
}

impl Default for CombinationConfig {
    fn default() -> Self {
        Self {
            vote_all: true,
            lr_all: true,
            lr_subset: false,
            subset: vec![
                BaseKind::Me,
                BaseKind::Lr,
                BaseKind::LinearSvc,
                BaseKind::Rf,
            ],
            select_max_k: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub lexicons: Vec<PathBuf>,
    #[serde(default = "default_folds")]
    pub fold_scheme: FoldScheme,
    /// Balance the corpus down to this many documents before splitting.
    #[serde(default)]
    pub run_size: Option<usize>,
    #[serde(default = "default_models")]
    pub models: Vec<BaseKind>,
    #[serde(default = "default_curve_models")]
    pub curve_models: Vec<BaseKind>,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Single-threaded embedding training, so reruns are byte-identical.
    #[serde(default = "yes")]
    pub deterministic: bool,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub combination: CombinationConfig,
    #[serde(default)]
    pub params: BaseParams,
}

fn default_folds() -> FoldScheme {
    FoldScheme::FourFold
}

fn default_models() -> Vec<BaseKind> {
    BaseKind::ALL.to_vec()
}

fn default_curve_models() -> Vec<BaseKind> {
    vec![BaseKind::Nb, BaseKind::Lr]
}

fn default_sizes() -> Vec<usize> {
    vec![40_000, 80_000, 120_000]
}

fn default_repetitions() -> usize {
    5
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Minimal config for a corpus; everything else takes its default.
    pub fn for_corpus(path: impl Into<PathBuf>) -> Self {
        Self {
            seed: None,
            corpus: CorpusConfig {
                path: path.into(),
                format: default_format(),
            },
            lexicons: Vec::new(),
            fold_scheme: default_folds(),
            run_size: None,
            models: default_models(),
            curve_models: default_curve_models(),
            sizes: default_sizes(),
            repetitions: default_repetitions(),
            deterministic: true,
            workers: None,
            out: None,
            embeddings: EmbeddingConfig::default(),
            combination: CombinationConfig::default(),
            params: BaseParams::default(),
        }
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| input_error(format!("invalid config: {e}")))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.corpus.path);
        cfg.lexicons.iter_mut().for_each(fix);
        if let Some(p) = cfg.out.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.embeddings.dir.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }
}

/// Values given on the command line; each wins over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub models: Option<Vec<BaseKind>>,
    pub out: Option<PathBuf>,
    pub plot: bool,
}

/// Parses `a,b,c` into model kinds.
pub fn parse_models(list: &str) -> anyhow::Result<Vec<BaseKind>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e: senti_core::Error| input_error(e.to_string()))
        })
        .collect()
}

/// A config with every override applied and the seed settled.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub plot: bool,
    /// SHA-256 of the effective config; output location and worker count do
    /// not count.
    pub config_hash: String,
}

/// Seed precedence: flag, then config, then `env_seed` (the `SENTI_SEED`
/// variable).
pub fn resolve(
    mut config: ExperimentConfig,
    overrides: Overrides,
    env_seed: Option<&str>,
) -> anyhow::Result<Settings> {
    let env_seed = env_seed
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| input_error(format!("SENTI_SEED is not an unsigned integer: `{s}`")))
        })
        .transpose()?;
    let seed = overrides.seed.or(config.seed).or(env_seed).ok_or_else(|| {
        input_error("no seed: set `seed` in the config, pass --seed or set SENTI_SEED")
    })?;
    config.seed = Some(seed);
    if let Some(models) = overrides.models {
        config.models = models;
    }
    config.models = normalize(&config.models);
    config.curve_models = normalize(&config.curve_models);
    if config.models.is_empty() {
        return Err(input_error("no models enabled"));
    }
    let workers = overrides
        .workers
        .or(config.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let out = overrides
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let config_hash = config_hash(&config)?;
    Ok(Settings {
        config,
        seed,
        workers,
        out,
        plot: overrides.plot,
        config_hash,
    })
}

/// Report order, duplicates dropped.
fn normalize(models: &[BaseKind]) -> Vec<BaseKind> {
    let mut v = models.to_vec();
    v.sort();
    v.dedup();
    v
}

pub fn config_hash(config: &ExperimentConfig) -> anyhow::Result<String> {
    let mut c = config.clone();
    c.out = None;
    c.workers = None;
    let text = toml::to_string(&c)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

impl Settings {
    /// First line of every report.
    pub fn stamp(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    pub fn embedding_dir(&self) -> PathBuf {
        self.config
            .embeddings
            .dir
            .clone()
            .unwrap_or_else(|| self.out.join("embeddings"))
    }

    pub fn skipgram(&self) -> SkipGramParams {
        let mut p = self.config.embeddings.skipgram.clone();
        p.seed = self.seed;
        p.workers = if self.config.deterministic {
            1
        } else {
            self.workers
        };
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[corpus]\npath = \"c.tsv\"\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.models, BaseKind::ALL.to_vec());
        assert_eq!(cfg.fold_scheme, FoldScheme::FourFold);
        assert_eq!(cfg.params.chi_words, 150);
        assert!(cfg.combination.lr_all);
        assert_eq!(
            cfg,
            ExperimentConfig {
                seed: Some(3),
                ..ExperimentConfig::for_corpus("c.tsv")
            }
        );
    }

    #[test]
    fn nested_blocks_and_names() {
        let text = format!(
            "models = [\"nb\", \"LinearSVC\"]\n{MINIMAL}[params.svc]\nc = 0.5\n[params.rf]\nn_trees = 7\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.models, vec![BaseKind::Nb, BaseKind::LinearSvc]);
        assert_eq!(cfg.params.svc.c, 0.5);
        assert_eq!(cfg.params.rf.n_trees, 7);
        assert!(ExperimentConfig::parse(&format!("models = [\"svm\"]\n{MINIMAL}")).is_err());
        assert!(ExperimentConfig::parse(&format!("bogus = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn seed_precedence() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let flag = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        assert_eq!(resolve(cfg.clone(), flag, Some("5")).unwrap().seed, 9);
        assert_eq!(
            resolve(cfg.clone(), Overrides::default(), Some("5"))
                .unwrap()
                .seed,
            3
        );
        let mut unseeded = cfg;
        unseeded.seed = None;
        assert_eq!(
            resolve(unseeded.clone(), Overrides::default(), Some("5"))
                .unwrap()
                .seed,
            5
        );
        let err = resolve(unseeded, Overrides::default(), None).unwrap_err();
        assert!(err.is::<InputError>());
    }

    #[test]
    fn hash_ignores_output_and_workers() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let a = resolve(cfg.clone(), Overrides::default(), None).unwrap();
        let b = resolve(
            cfg.clone(),
            Overrides {
                workers: Some(3),
                out: Some("elsewhere".into()),
                ..Overrides::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c = resolve(
            cfg,
            Overrides {
                seed: Some(4),
                ..Overrides::default()
            },
            None,
        )
        .unwrap();
        assert_ne!(a.config_hash, c.config_hash);
        assert!(a.stamp().starts_with("# config_hash="));
    }

    #[test]
    fn model_list_is_normalized() {
        let models = parse_models("rf, nb,rf").unwrap();
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let s = resolve(
            cfg,
            Overrides {
                models: Some(models),
                ..Overrides::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(s.config.models, vec![BaseKind::Nb, BaseKind::Rf]);
        assert!(parse_models("nb,xgb").is_err());
    }
}
