//! The nine base classifiers behind one [`BaseClassifier`] interface.
//!
//! NB and ME read binary lexicon ∪ CHI features, LinearSVC reads sparse
//! n-grams, LR, SVC and the three tree ensembles read the hybrid vector, and
//! the CNN reads review matrices built from the small embedding.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cnn::{
    build_review_matrix, cnn_train, CnnArchitecture, CnnModel, CnnParams, ReviewMatrix,
};
use crate::corpus::{class_counts, DocSet, Polarity, Provenance};
use crate::embeddings::{hybrid_feature_vector, DenseVector, EmbeddingModel, HybridDims};
use crate::ensembles::{
    adaboost_train, gbt_train, rf_train, AdaBoostModel, AdaBoostParams, ForestModel, GbtModel,
    GbtParams, RfParams, TrainingSet,
};
use crate::error::{Error, Result};
use crate::features::{
    build_feature_space, ngram_vocabulary, select_top_chi, vectorize_binary, vectorize_ngrams,
    SparseVector, Vocabulary,
};
use crate::linear::{
    linear_predict, lr_train, maxent_train_iis, nb_train, svm_train, LinearModel, LrParams,
    MaxEntModel, NbModel, SvmParams,
};
use crate::stacking::BaseClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseKind {
    Nb,
    Me,
    LinearSvc,
    Lr,
    Svc,
    AdaBoost,
    Gbt,
    Rf,
    Cnn,
}

impl BaseKind {
    /// Report order.
    pub const ALL: [BaseKind; 9] = [
        BaseKind::Nb,
        BaseKind::Me,
        BaseKind::LinearSvc,
        BaseKind::Lr,
        BaseKind::Svc,
        BaseKind::AdaBoost,
        BaseKind::Gbt,
        BaseKind::Rf,
        BaseKind::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Nb => "NB",
            BaseKind::Me => "ME",
            BaseKind::LinearSvc => "LinearSVC",
            BaseKind::Lr => "LR",
            BaseKind::Svc => "SVC",
            BaseKind::AdaBoost => "Adaboost",
            BaseKind::Gbt => "GBT",
            BaseKind::Rf => "RF",
            BaseKind::Cnn => "CNN",
        }
    }

    fn uses_hybrid(self) -> bool {
        matches!(
            self,
            BaseKind::Lr | BaseKind::Svc | BaseKind::AdaBoost | BaseKind::Gbt | BaseKind::Rf
        )
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    /// Case-insensitive model name.
    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase();
        BaseKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == wanted)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

impl Serialize for BaseKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for BaseKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hyperparameters of every base; defaults follow the module defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseParams {
    pub chi_words: usize,
    pub ngram_min_df: usize,
    pub maxent_iterations: usize,
    pub lr: LrParams,
    pub linear_svc: SvmParams,
    pub svc: SvmParams,
    pub adaboost: AdaBoostParams,
    pub gbt: GbtParams,
    pub rf: RfParams,
    pub cnn: CnnParams,
    pub cnn_arch: CnnArchitecture,
}

impl Default for BaseParams {
    fn default() -> Self {
        Self {
            chi_words: 150,
            ngram_min_df: 2,
            maxent_iterations: 15,
            lr: LrParams::default(),
            linear_svc: SvmParams::default(),
            svc: SvmParams::default(),
            adaboost: AdaBoostParams::default(),
            gbt: GbtParams::default(),
            rf: RfParams::default(),
            cnn: CnnParams::default(),
            cnn_arch: CnnArchitecture::default(),
        }
    }
}

/// Vocabularies and embeddings shared by all bases of one split. Everything
/// supervised (CHI ranking, n-gram counts) is computed on the train part.
pub struct FeatureContext {
    pub chi: Vocabulary,
    /// Lexicon words first, then CHI words.
    pub binary_space: Vocabulary,
    pub ngram_space: Vocabulary,
    pub embeddings: Embeddings,
    pub cnn_rows: usize,
}

/// Trained word vectors; a missing model only matters to the bases that
/// read it.
#[derive(Clone, Default)]
pub struct Embeddings {
    /// Averaged into the hybrid vector.
    pub hybrid: Option<Arc<EmbeddingModel>>,
    /// Rows of the CNN review matrix.
    pub cnn: Option<Arc<EmbeddingModel>>,
}

impl FeatureContext {
    pub fn build(
        train: &DocSet,
        lexicon: &Vocabulary,
        embeddings: Embeddings,
        params: &BaseParams,
    ) -> Self {
        let vocab = crate::features::corpus_vocabulary(train.tokens());
        let chi = select_top_chi(&train.docs, &vocab, params.chi_words);
        let binary_space = build_feature_space(lexicon, &chi);
        let ngram_space = ngram_vocabulary(train.tokens(), params.ngram_min_df);
        Self {
            chi,
            binary_space,
            ngram_space,
            embeddings,
            cnn_rows: params.cnn_arch.input_rows,
        }
    }

    pub fn binary(&self, tokens: &[String]) -> SparseVector {
        vectorize_binary(tokens, &self.binary_space)
    }

    pub fn ngrams(&self, tokens: &[String]) -> SparseVector {
        vectorize_ngrams(tokens, &self.ngram_space)
    }

    pub fn hybrid(&self, tokens: &[String]) -> Result<DenseVector> {
        let emb = self
            .embeddings
            .hybrid
            .as_deref()
            .ok_or(Error::Empty("no embedding model for hybrid features"))?;
        let dims = HybridDims {
            embedding: emb.dim(),
            chi_words: self.chi.len(),
        };
        hybrid_feature_vector(tokens, emb, &self.chi, dims)
    }

    pub fn review_matrix(&self, tokens: &[String]) -> Result<ReviewMatrix> {
        let emb = self
            .embeddings
            .cnn
            .as_deref()
            .ok_or(Error::Empty("no embedding model for the CNN"))?;
        build_review_matrix(tokens, emb, self.cnn_rows)
    }
}

/// Feature rows of the train part, built once per representation.
pub struct TrainingData {
    pub provenance: Provenance,
    pub labels: Vec<Polarity>,
    pub majority: Polarity,
    binary: Vec<(SparseVector, Polarity)>,
    ngrams: Vec<SparseVector>,
    hybrid: Vec<DenseVector>,
    hybrid_set: Option<TrainingSet>,
    matrices: Vec<(ReviewMatrix, Polarity)>,
}

impl TrainingData {
    /// Builds only the representations needed by `kinds`.
    pub fn prepare(train: &DocSet, ctx: &FeatureContext, kinds: &[BaseKind]) -> Result<Self> {
        let labels = train.labels();
        let [neg, pos] = class_counts(&train.docs);
        let mut data = Self {
            provenance: train.provenance,
            labels,
            majority: Polarity::from_bit(pos >= neg),
            binary: Vec::new(),
            ngrams: Vec::new(),
            hybrid: Vec::new(),
            hybrid_set: None,
            matrices: Vec::new(),
        };
        let wants = |k: BaseKind| kinds.contains(&k);
        if wants(BaseKind::Nb) || wants(BaseKind::Me) {
            data.binary = train
                .docs
                .iter()
                .map(|d| (ctx.binary(&d.tokens), d.label))
                .collect();
        }
        if wants(BaseKind::LinearSvc) {
            data.ngrams = train.docs.iter().map(|d| ctx.ngrams(&d.tokens)).collect();
        }
        if kinds.iter().any(|k| k.uses_hybrid()) {
            data.hybrid = train
                .docs
                .iter()
                .map(|d| ctx.hybrid(&d.tokens))
                .collect::<Result<_>>()?;
            data.hybrid_set = Some(TrainingSet::new(&data.hybrid)?);
        }
        if wants(BaseKind::Cnn) {
            for d in &train.docs {
                match ctx.review_matrix(&d.tokens) {
                    Ok(m) => data.matrices.push((m, d.label)),
                    Err(Error::NoKnownTokens) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(data)
    }

    fn hybrid_set(&self) -> Result<&TrainingSet> {
        self.hybrid_set
            .as_ref()
            .ok_or(Error::Empty("hybrid features were not prepared"))
    }
}

#[derive(Debug, Clone)]
pub enum BaseModel {
    Nb(NbModel),
    Me(MaxEntModel),
    LinearSvc(LinearModel),
    Lr(LinearModel),
    Svc(LinearModel),
    AdaBoost(AdaBoostModel),
    Gbt(GbtModel),
    Rf(ForestModel),
    Cnn(CnnModel),
}

pub struct TrainedBase {
    pub kind: BaseKind,
    pub model: BaseModel,
    provenance: Provenance,
    /// Answer for documents the model cannot represent (a review with no
    /// embedded token for the CNN): the train majority class.
    fallback: Polarity,
    ctx: Arc<FeatureContext>,
}

/// Trains one base on prepared train rows.
pub fn train_base(
    kind: BaseKind,
    data: &TrainingData,
    ctx: Arc<FeatureContext>,
    params: &BaseParams,
) -> Result<TrainedBase> {
    let ys = &data.labels;
    let model = match kind {
        BaseKind::Nb => BaseModel::Nb(nb_train(&data.binary, ctx.binary_space.len())?),
        BaseKind::Me => BaseModel::Me(
            maxent_train_iis(
                &data.binary,
                ctx.binary_space.len(),
                params.maxent_iterations,
            )?
            .model,
        ),
        BaseKind::LinearSvc => BaseModel::LinearSvc(
            svm_train(&data.ngrams, ys, ctx.ngram_space.len(), &params.linear_svc)?.model,
        ),
        BaseKind::Lr => BaseModel::Lr(lr_train(&data.hybrid, ys, &params.lr)?),
        BaseKind::Svc => {
            let dim = data.hybrid.first().map_or(0, DenseVector::dim);
            BaseModel::Svc(svm_train(&data.hybrid, ys, dim, &params.svc)?.model)
        }
        BaseKind::AdaBoost => {
            BaseModel::AdaBoost(adaboost_train(data.hybrid_set()?, ys, &params.adaboost)?.model)
        }
        BaseKind::Gbt => BaseModel::Gbt(gbt_train(data.hybrid_set()?, ys, &params.gbt)?.model),
        BaseKind::Rf => BaseModel::Rf(rf_train(data.hybrid_set()?, ys, &params.rf)?),
        BaseKind::Cnn => {
            let init = CnnModel::new(params.cnn_arch.clone(), params.cnn.seed)?;
            BaseModel::Cnn(cnn_train(init, &data.matrices, &params.cnn)?.model)
        }
    };
    Ok(TrainedBase {
        kind,
        model,
        provenance: data.provenance,
        fallback: data.majority,
        ctx,
    })
}

/// Trains `kind` on `train` and predicts `test`: the recipe behind learning
/// curves.
pub fn fit_and_predict(
    kind: BaseKind,
    train: &DocSet,
    test: &DocSet,
    lexicon: &Vocabulary,
    embeddings: &Embeddings,
    params: &BaseParams,
) -> Result<Vec<Polarity>> {
    let ctx = Arc::new(FeatureContext::build(
        train,
        lexicon,
        embeddings.clone(),
        params,
    ));
    let data = TrainingData::prepare(train, &ctx, &[kind])?;
    train_base(kind, &data, ctx, params)?.predict_all(&test.tokens())
}

impl TrainedBase {
    fn predict_hybrid(
        &self,
        tokens: &[String],
        f: impl Fn(&[f64]) -> Result<Polarity>,
    ) -> Result<Polarity> {
        f(self.ctx.hybrid(tokens)?.as_slice())
    }
}

impl BaseClassifier for TrainedBase {
    fn id(&self) -> &str {
        self.kind.name()
    }

    fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn predict(&self, tokens: &[String]) -> Result<Polarity> {
        let ctx = &self.ctx;
        match &self.model {
            BaseModel::Nb(m) => Ok(m.predict(&ctx.binary(tokens)).label),
            BaseModel::Me(m) => Ok(m.predict(&ctx.binary(tokens)).label),
            BaseModel::LinearSvc(m) => linear_predict(m, &ctx.ngrams(tokens)),
            BaseModel::Lr(m) | BaseModel::Svc(m) => {
                self.predict_hybrid(tokens, |x| linear_predict(m, x))
            }
            BaseModel::AdaBoost(m) => self.predict_hybrid(tokens, |x| m.predict(x)),
            BaseModel::Gbt(m) => self.predict_hybrid(tokens, |x| m.predict(x)),
            BaseModel::Rf(m) => self.predict_hybrid(tokens, |x| m.predict(x)),
            BaseModel::Cnn(m) => match ctx.review_matrix(tokens) {
                Ok(x) => m.predict(&x),
                Err(Error::NoKnownTokens) => Ok(self.fallback),
                Err(e) => Err(e),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::ConvPoolSpec;
    use crate::corpus::{split, FoldScheme, Part};
    use crate::embeddings::{train_skipgram, SkipGramParams};
    use crate::eval::compute_metrics;
    use crate::synth::{generate, SynthParams};

    #[test]
    fn names_parse_back() {
        for k in BaseKind::ALL {
            assert_eq!(k.name().parse::<BaseKind>().unwrap(), k);
            assert_eq!(k.name().to_lowercase().parse::<BaseKind>().unwrap(), k);
        }
        assert!(matches!(
            "svm".parse::<BaseKind>(),
            Err(Error::UnknownModel(_))
        ));
    }

    fn small_params() -> BaseParams {
        let arch = CnnArchitecture {
            input_rows: 20,
            input_cols: 8,
            layers: vec![ConvPoolSpec {
                kernels: 6,
                kernel_rows: 3,
                kernel_cols: 3,
                pool_rows: 2,
                pool_cols: 1,
            }],
        };
        BaseParams {
            rf: RfParams {
                n_trees: 15,
                ..RfParams::default()
            },
            gbt: GbtParams {
                n_trees: 30,
                ..GbtParams::default()
            },
            adaboost: AdaBoostParams { rounds: 30 },
            cnn: CnnParams {
                epochs: 15,
                batch_size: 10,
                lr: 0.1,
                ..CnnParams::default()
            },
            cnn_arch: arch,
            ..BaseParams::default()
        }
    }

    #[test]
    fn every_base_learns_a_clean_corpus() {
        let corpus = generate(&SynthParams {
            n_docs: 600,
            vocab_size: 300,
            sentiment_words: 30,
            label_noise: 0.0,
            purity: 0.95,
            seed: 5,
            ..SynthParams::default()
        })
        .unwrap();
        let docs = corpus.labeled();
        let parts = split(&docs, FoldScheme::FourFold, 9).unwrap();
        let sg = SkipGramParams {
            min_count: 1,
            epochs: 5,
            ..SkipGramParams::default()
        };
        let all_tokens: Vec<&[String]> = docs.iter().map(|d| d.tokens.as_slice()).collect();
        let emb = train_skipgram(&all_tokens, 12, &sg).unwrap();
        let emb_small = train_skipgram(&all_tokens, 8, &sg).unwrap();
        let lexicon = Vocabulary::from_words(corpus.lexicon.iter().cloned());
        let params = small_params();
        let embeddings = Embeddings {
            hybrid: Some(Arc::new(emb)),
            cnn: Some(Arc::new(emb_small)),
        };
        let ctx = Arc::new(FeatureContext::build(
            &parts.train,
            &lexicon,
            embeddings,
            &params,
        ));
        let data = TrainingData::prepare(&parts.train, &ctx, &BaseKind::ALL).unwrap();
        let test = parts.test.tokens();
        for kind in BaseKind::ALL {
            let base = train_base(kind, &data, ctx.clone(), &params).unwrap();
            assert_eq!(base.provenance().part, Part::Train);
            let pred = base.predict_all(&test).unwrap();
            let f1 = compute_metrics(&pred, &parts.test.labels())
                .unwrap()
                .macro_f1;
            assert!(f1 > 0.75, "{kind}: {f1}");
        }
    }

    #[test]
    fn missing_embeddings_only_hurt_their_readers() {
        let corpus = generate(&SynthParams {
            n_docs: 200,
            seed: 2,
            ..SynthParams::default()
        })
        .unwrap();
        let docs = corpus.labeled();
        let parts = split(&docs, FoldScheme::ThreeFold, 1).unwrap();
        let lexicon = Vocabulary::from_words(corpus.lexicon.iter().cloned());
        let params = BaseParams::default();
        let none = Embeddings::default();
        let pred = fit_and_predict(
            BaseKind::Nb,
            &parts.train,
            &parts.test,
            &lexicon,
            &none,
            &params,
        )
        .unwrap();
        assert_eq!(pred.len(), parts.test.len());
        assert!(fit_and_predict(
            BaseKind::Lr,
            &parts.train,
            &parts.test,
            &lexicon,
            &none,
            &params
        )
        .is_err());
    }
}
