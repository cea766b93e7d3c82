//! The three commands: train embeddings, run the full experiment, and draw
//! learning curves.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use senti_core::bases::{
    fit_and_predict, train_base, BaseKind, Embeddings, FeatureContext, TrainedBase, TrainingData,
};
use senti_core::corpus::{
    balance, class_counts, label_reviews, load_corpus, split, LabeledDoc, RawReview,
};
use senti_core::embeddings::{train_skipgram, EmbeddingModel, SkipGramParams};
use senti_core::eval::{
    compute_metrics, learning_curve, render_curve_svg, stability_flag, write_curve_csv,
    write_metrics_tsv, CurvePoint, MetricsReport,
};
use senti_core::features::{corpus_vocabulary, merge_lexicons, read_word_list};
use senti_core::stacking::{
    predict_table, select_base_subset, train_lr_all_table, write_prediction_list, BaseClassifier,
};

use crate::config::{InputError, Settings};

pub const HYBRID_FILE: &str = "emb300.bin";
pub const CNN_FILE: &str = "emb60.bin";
pub const MANIFEST_FILE: &str = "embeddings.manifest";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const STACK_FILE: &str = "lr_all.stack";

fn pool(settings: &Settings) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()?)
}

fn load_reviews(settings: &Settings) -> anyhow::Result<Vec<RawReview>> {
    let c = &settings.config.corpus;
    let loaded = load_corpus(&c.path, c.format)
        .map_err(|e| InputError(format!("cannot load corpus {}: {e}", c.path.display())))?;
    if loaded.skipped > 0 {
        warn!("skipped {} malformed corpus lines", loaded.skipped);
    }
    if loaded.reviews.is_empty() {
        return Err(InputError(format!("corpus {} has no reviews", c.path.display())).into());
    }
    Ok(loaded.reviews)
}

fn read_lexicons(settings: &Settings) -> anyhow::Result<Vec<Vec<String>>> {
    settings
        .config
        .lexicons
        .iter()
        .map(|p| {
            read_word_list(p)
                .map_err(|e| InputError(format!("cannot read lexicon {}: {e}", p.display())).into())
        })
        .collect()
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn corpus_digest(reviews: &[RawReview]) -> String {
    let mut h = Sha256::new();
    for r in reviews {
        h.update([r.rating]);
        for t in &r.tokens {
            h.update(t.as_bytes());
            h.update(b" ");
        }
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// What the embedding files were trained from; a mismatch means retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub config_hash: String,
    pub corpus_sha256: String,
    pub hybrid_dim: usize,
    pub cnn_dim: usize,
    pub skipgram: SkipGramParams,
    /// File name → SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingArtifacts {
    pub hybrid: PathBuf,
    pub cnn: PathBuf,
    pub manifest: PathBuf,
}

fn train_embedding_files(
    settings: &Settings,
    reviews: &[RawReview],
) -> anyhow::Result<EmbeddingArtifacts> {
    let emb = &settings.config.embeddings;
    let params = settings.skipgram();
    let docs: Vec<&[String]> = reviews.iter().map(|r| r.tokens.as_slice()).collect();
    let start = Instant::now();
    let (hybrid, cnn) = rayon::join(
        || train_skipgram(&docs, emb.hybrid_dim, &params),
        || train_skipgram(&docs, emb.cnn_dim, &params),
    );
    let (hybrid, cnn) = (
        hybrid.context("training the hybrid embedding")?,
        cnn.context("training the CNN embedding")?,
    );
    info!("embeddings trained in {:.1?}", start.elapsed());
    let dir = settings.embedding_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let artifacts = EmbeddingArtifacts {
        hybrid: dir.join(HYBRID_FILE),
        cnn: dir.join(CNN_FILE),
        manifest: dir.join(MANIFEST_FILE),
    };
    hybrid.save_binary(&artifacts.hybrid)?;
    cnn.save_binary(&artifacts.cnn)?;
    let mut files = BTreeMap::new();
    files.insert(HYBRID_FILE.to_string(), sha256_file(&artifacts.hybrid)?);
    files.insert(CNN_FILE.to_string(), sha256_file(&artifacts.cnn)?);
    let manifest = EmbeddingManifest {
        config_hash: settings.config_hash.clone(),
        corpus_sha256: corpus_digest(reviews),
        hybrid_dim: emb.hybrid_dim,
        cnn_dim: emb.cnn_dim,
        skipgram: params,
        files,
    };
    let mut out = create(&artifacts.manifest)?;
    writeln!(out, "{}", settings.stamp())?;
    out.write_all(toml::to_string(&manifest)?.as_bytes())?;
    out.flush()?;
    Ok(artifacts)
}

/// Trains both embeddings on every review of the corpus (labels unused) and
/// writes them with a manifest of hyperparameters and checksums.
pub fn cmd_train_embeddings(settings: &Settings) -> anyhow::Result<EmbeddingArtifacts> {
    let reviews = load_reviews(settings)?;
    pool(settings)?.install(|| train_embedding_files(settings, &reviews))
}

/// Loads the embedding files when their manifest matches the current corpus
/// and settings; trains them otherwise.
fn ensure_embeddings(
    settings: &Settings,
    reviews: &[RawReview],
) -> anyhow::Result<(EmbeddingModel, EmbeddingModel)> {
    let dir = settings.embedding_dir();
    let expected = (
        corpus_digest(reviews),
        settings.config.embeddings.hybrid_dim,
        settings.config.embeddings.cnn_dim,
        settings.skipgram(),
    );
    let current = || -> Option<()> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        let m: EmbeddingManifest = toml::from_str(&text).ok()?;
        if (m.corpus_sha256, m.hybrid_dim, m.cnn_dim, m.skipgram) != expected {
            return None;
        }
        for (name, sum) in &m.files {
            if sha256_file(&dir.join(name)).ok()? != *sum {
                return None;
            }
        }
        Some(())
    };
    let artifacts = if current().is_some() {
        EmbeddingArtifacts {
            hybrid: dir.join(HYBRID_FILE),
            cnn: dir.join(CNN_FILE),
            manifest: dir.join(MANIFEST_FILE),
        }
    } else {
        warn!(
            "no usable embeddings in {}; training them now",
            dir.display()
        );
        train_embedding_files(settings, reviews)?
    };
    Ok((
        EmbeddingModel::load_binary(&artifacts.hybrid)?,
        EmbeddingModel::load_binary(&artifacts.cnn)?,
    ))
}

fn needs_embeddings(models: &[BaseKind]) -> bool {
    models
        .iter()
        .any(|k| *k != BaseKind::Nb && *k != BaseKind::Me && *k != BaseKind::LinearSvc)
}

fn embeddings_for(
    settings: &Settings,
    reviews: &[RawReview],
    models: &[BaseKind],
) -> anyhow::Result<Embeddings> {
    if !needs_embeddings(models) {
        return Ok(Embeddings::default());
    }
    let (hybrid, cnn) = ensure_embeddings(settings, reviews)?;
    Ok(Embeddings {
        hybrid: Some(Arc::new(hybrid)),
        cnn: Some(Arc::new(cnn)),
    })
}

fn labeled_docs(settings: &Settings, reviews: &[RawReview]) -> anyhow::Result<Vec<LabeledDoc>> {
    let docs = label_reviews(reviews);
    let [neg, pos] = class_counts(&docs);
    info!(
        "{} labeled reviews ({neg} negative, {pos} positive)",
        docs.len()
    );
    match settings.config.run_size {
        Some(n) => {
            balance(&docs, n / 2, settings.seed).map_err(|e| InputError(e.to_string()).into())
        }
        None => Ok(docs),
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// One row per model in report order, then the combinations.
    pub rows: Vec<(String, MetricsReport)>,
    pub metrics_path: PathBuf,
    /// Base ids behind the `LR_subset` row, when there is one.
    pub subset: Option<Vec<String>>,
}

fn write_report(settings: &Settings, rows: &[(String, MetricsReport)]) -> anyhow::Result<PathBuf> {
    let path = settings.out.join(METRICS_FILE);
    let mut out = create(&path)?;
    writeln!(out, "{}", settings.stamp())?;
    write_metrics_tsv(&mut out, rows)?;
    out.flush()?;
    Ok(path)
}

fn write_predictions(
    settings: &Settings,
    name: &str,
    pred: &[senti_core::corpus::Polarity],
) -> anyhow::Result<()> {
    let mut out = create(&settings.out.join("predictions").join(format!("{name}.txt")))?;
    write_prediction_list(&mut out, pred)?;
    out.flush()?;
    Ok(())
}

/// Splits the corpus, trains every enabled base on the train part, combines
/// them on the validate part and reports Macro F1 on the test part.
pub fn cmd_run(settings: &Settings) -> anyhow::Result<RunReport> {
    pool(settings)?.install(|| run(settings))
}

fn run(settings: &Settings) -> anyhow::Result<RunReport> {
    let cfg = &settings.config;
    let start = Instant::now();
    let reviews = load_reviews(settings)?;
    let docs = labeled_docs(settings, &reviews)?;
    let parts =
        split(&docs, cfg.fold_scheme, settings.seed).map_err(|e| InputError(e.to_string()))?;
    let stacking = cfg.combination.lr_all || cfg.combination.lr_subset;
    if stacking && parts.validate.is_none() {
        bail!(InputError(
            "stacking needs a validate part; use fold_scheme = \"four_fold\"".into()
        ));
    }
    let lexicons = read_lexicons(settings)?;
    let embeddings = embeddings_for(settings, &reviews, &cfg.models)?;

    let lexicon = merge_lexicons(&lexicons, &corpus_vocabulary(parts.train.tokens()));
    let ctx = Arc::new(FeatureContext::build(
        &parts.train,
        &lexicon,
        embeddings,
        &cfg.params,
    ));
    let data =
        TrainingData::prepare(&parts.train, &ctx, &cfg.models).context("building features")?;
    info!(
        "features ready after {:.1?}: {} binary, {} n-gram, {} CHI",
        start.elapsed(),
        ctx.binary_space.len(),
        ctx.ngram_space.len(),
        ctx.chi.len()
    );

    let trained: Vec<(BaseKind, anyhow::Result<TrainedBase>)> = cfg
        .models
        .par_iter()
        .map(|&kind| {
            let t = Instant::now();
            let r = train_base(kind, &data, ctx.clone(), &cfg.params)
                .with_context(|| format!("training {kind}"));
            info!("{kind} trained in {:.1?}", t.elapsed());
            (kind, r)
        })
        .collect();
    let mut bases = Vec::new();
    let mut failure = None;
    for (_, r) in trained {
        match r {
            Ok(b) => bases.push(b),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let refs: Vec<&dyn BaseClassifier> = bases.iter().map(|b| b as &dyn BaseClassifier).collect();

    let test_table = predict_table(&refs, &parts.test).context("predicting the test part")?;
    let truth = test_table.labels().to_vec();
    let mut rows = Vec::new();
    for b in &bases {
        let pred = test_table.column(b.id()).expect("every base has a column");
        rows.push((b.id().to_string(), compute_metrics(pred, &truth)?));
        write_predictions(settings, b.id(), pred)?;
    }
    if let Some(e) = failure {
        write_report(settings, &rows)?;
        return Err(e);
    }

    if cfg.combination.vote_all {
        let pred = test_table.vote()?;
        rows.push(("Vote_all".into(), compute_metrics(&pred, &truth)?));
        write_predictions(settings, "Vote_all", &pred)?;
    }
    let mut subset = None;
    if let Some(validate) = parts.validate.as_ref().filter(|_| stacking) {
        let val_table = predict_table(&refs, validate).context("predicting the validate part")?;
        if cfg.combination.lr_all {
            let stack = train_lr_all_table(&val_table, &cfg.params.lr).context("fitting LR_all")?;
            let pred = stack.predict_table(&test_table)?;
            rows.push(("LR_all".into(), compute_metrics(&pred, &truth)?));
            write_predictions(settings, "LR_all", &pred)?;
            let mut out = create(&settings.out.join(STACK_FILE))?;
            stack.write_text(&mut out)?;
            out.flush()?;
        }
        if cfg.combination.lr_subset {
            let ids = if cfg.combination.select_max_k > 0 {
                select_base_subset(&val_table, cfg.combination.select_max_k, &cfg.params.lr)
                    .context("selecting the base subset")?
            } else {
                let wanted: Vec<String> = cfg
                    .combination
                    .subset
                    .iter()
                    .map(|k| k.name().to_string())
                    .collect();
                let missing: Vec<&String> = wanted
                    .iter()
                    .filter(|w| val_table.column(w).is_none())
                    .collect();
                if !missing.is_empty() {
                    let list: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
                    bail!(InputError(format!(
                        "subset names disabled models: {}",
                        list.join(", ")
                    )));
                }
                wanted
            };
            info!("LR_subset uses {}", ids.join(", "));
            let stack = train_lr_all_table(&val_table.select(&ids)?, &cfg.params.lr)
                .context("fitting LR_subset")?;
            let pred = stack.predict_table(&test_table.select(&ids)?)?;
            rows.push(("LR_subset".into(), compute_metrics(&pred, &truth)?));
            write_predictions(settings, "LR_subset", &pred)?;
            subset = Some(ids);
        }
    }
    let metrics_path = write_report(settings, &rows)?;
    info!("run finished in {:.1?}", start.elapsed());
    Ok(RunReport {
        rows,
        metrics_path,
        subset,
    })
}

#[derive(Debug, Clone)]
pub struct CurveReport {
    pub series: Vec<(String, Vec<CurvePoint>)>,
    pub csv_paths: Vec<PathBuf>,
    pub svg_path: Option<PathBuf>,
}

/// Learning curves of the curve models over the configured sizes.
pub fn cmd_curve(settings: &Settings) -> anyhow::Result<CurveReport> {
    pool(settings)?.install(|| curve(settings))
}

fn curve(settings: &Settings) -> anyhow::Result<CurveReport> {
    let cfg = &settings.config;
    if cfg.sizes.is_empty() || cfg.repetitions == 0 {
        bail!(InputError(
            "curve needs at least one size and one repetition".into()
        ));
    }
    let reviews = load_reviews(settings)?;
    let docs = label_reviews(&reviews);
    let lexicons = read_lexicons(settings)?;
    let lexicon = merge_lexicons(
        &lexicons,
        &corpus_vocabulary(docs.iter().map(|d| d.tokens.as_slice())),
    );
    let embeddings = embeddings_for(settings, &reviews, &cfg.curve_models)?;
    let mut report = CurveReport {
        series: Vec::new(),
        csv_paths: Vec::new(),
        svg_path: None,
    };
    for &kind in &cfg.curve_models {
        let recipe = |train: &_, test: &_| {
            fit_and_predict(kind, train, test, &lexicon, &embeddings, &cfg.params)
        };
        let points = learning_curve(recipe, &docs, &cfg.sizes, cfg.repetitions, settings.seed)
            .map_err(|e| match e {
                senti_core::Error::UnreachableSize { .. } => anyhow!(InputError(e.to_string())),
                other => anyhow!(other).context(format!("learning curve for {kind}")),
            })?;
        for p in &points {
            info!(
                "{kind} size {}: best {:.4} worst {:.4} mean {:.4}{}",
                p.corpus_size,
                p.best,
                p.worst,
                p.mean,
                if stability_flag(p) { " (unstable)" } else { "" }
            );
        }
        let path = settings.out.join(format!("curve_{}.csv", kind.name()));
        let mut out = create(&path)?;
        writeln!(out, "{}", settings.stamp())?;
        write_curve_csv(&mut out, &points)?;
        out.flush()?;
        report.csv_paths.push(path);
        report.series.push((kind.name().to_string(), points));
    }
    if settings.plot {
        let path = settings.out.join("curve.svg");
        let svg = render_curve_svg(&report.series);
        let mut out = create(&path)?;
        writeln!(
            out,
            "<!-- config_hash={} seed={} -->",
            settings.config_hash, settings.seed
        )?;
        out.write_all(svg.as_bytes())?;
        out.flush()?;
        report.svg_path = Some(path);
    }
    Ok(report)
}
