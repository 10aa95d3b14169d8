//! One training pass: featurize, fit the label model on the active rules
//! (reviewer labels fixed as anchors), mix user labels into the soft targets, select features and fit the
//! classifier. Also produces out-of-fold predictions for labeled records.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use crate::corpus::Corpus;
use crate::discriminative::{
    featurize, select_features, train, ClassifierModel, FeatureSpace, PotentialScore, SelectionResult,
    SparseVector,
};
use crate::label_model::{self, build_label_matrix, LabelMatrix, LabelModelParams};
use crate::ruleset::{MatchDoc, Ruleset};
use crate::types::{Label, Pmid};

/// Persisted as `iterations/<n>/model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub iteration: u32,
    pub rule_ids: Vec<u32>,
    pub feature_space: FeatureSpace,
    pub label_model: LabelModelParams,
    pub selection: SelectionResult,
    pub classifier: ClassifierModel,
}

impl PipelineModel {
    /// Restore derived indexes after deserialization.
    pub fn reindexed(mut self) -> Self {
        self.feature_space = self.feature_space.reindexed();
        self
    }

    pub fn predict_text(&self, text: &str) -> f64 {
        let v = self.feature_space.transform(text);
        self.classifier
            .predict(&v)
            .expect("feature space and classifier share a dimension")
    }
}

/// Feature vectors and weak labels for every trainable record: eligible
/// records first, then the negative set, each in PMID order.
pub struct TrainingData {
    pub pmids: Vec<Pmid>,
    pub eligible: Vec<bool>,
    pub vectors: Vec<SparseVector>,
    pub space: FeatureSpace,
    pub matrix: LabelMatrix,
    pub params: LabelModelParams,
    /// Label-model posterior for eligible rows, 0 for negative-set rows.
    pub weak: Vec<f64>,
}

impl TrainingData {
    pub fn index(&self) -> BTreeMap<&Pmid, usize> {
        self.pmids.iter().enumerate().map(|(i, p)| (p, i)).collect()
    }
}

pub fn prepare(
    corpus: &Corpus,
    ruleset: &Ruleset,
    rule_iteration: u32,
    labels: &BTreeMap<Pmid, Label>,
    cfg: &SessionConfig,
) -> Result<TrainingData, String> {
    let eligible: Vec<_> = corpus.eligible().collect();
    let negative: Vec<_> = corpus.negative_set().filter(|r| !r.is_eligible()).collect();
    if eligible.is_empty() {
        return Err("no eligible records to train on".into());
    }
    let texts: Vec<String> = eligible.iter().chain(&negative).map(|r| r.text()).collect();
    let (space, vectors) = featurize(&texts, cfg.min_df).map_err(|e| e.to_string())?;
    let docs: Vec<(Pmid, MatchDoc)> = eligible
        .iter()
        .map(|r| (r.pmid.clone(), MatchDoc::new(&r.title, &r.abstract_text)))
        .collect();
    let matrix = build_label_matrix(ruleset, rule_iteration, &docs).map_err(|e| e.to_string())?;
    let anchors: Vec<Option<Label>> = matrix.record_ids.iter().map(|p| labels.get(p).copied()).collect();
    let params = label_model::fit_anchored(&matrix, &anchors, &cfg.label_model).map_err(|e| e.to_string())?;
    let mut weak = label_model::posteriors(&params, &matrix).map_err(|e| e.to_string())?;
    weak.extend(std::iter::repeat_n(0.0, negative.len()));
    Ok(TrainingData {
        pmids: eligible.iter().chain(&negative).map(|r| r.pmid.clone()).collect(),
        eligible: eligible.iter().map(|_| true).chain(negative.iter().map(|_| false)).collect(),
        vectors,
        space,
        matrix,
        params,
        weak,
    })
}

/// Soft targets: user label where known (unless held out), weak label otherwise.
pub fn targets(data: &TrainingData, labels: &BTreeMap<Pmid, Label>, held_out: &BTreeSet<Pmid>) -> Vec<f64> {
    data.pmids
        .iter()
        .zip(&data.weak)
        .map(|(p, &w)| match labels.get(p) {
            Some(l) if !held_out.contains(p) => match l {
                Label::Include => 1.0,
                Label::Exclude => 0.0,
            },
            _ => w,
        })
        .collect()
}

pub fn fit(
    data: TrainingData,
    labels: &BTreeMap<Pmid, Label>,
    rule_iteration: u32,
    cfg: &SessionConfig,
) -> Result<(PipelineModel, TrainingData), String> {
    let y = targets(&data, labels, &BTreeSet::new());
    let selection = select_features(&data.vectors, &y, &cfg.selection).map_err(|e| e.to_string())?;
    let classifier = train(&data.vectors, &y, Some(&selection.features), &cfg.train).map_err(|e| e.to_string())?;
    let model = PipelineModel {
        iteration: rule_iteration,
        rule_ids: data.matrix.rule_ids.clone(),
        feature_space: data.space.clone(),
        label_model: data.params.clone(),
        selection,
        classifier,
    };
    Ok((model, data))
}

pub fn predict_rows(model: &PipelineModel, data: &TrainingData) -> Vec<f64> {
    data.vectors
        .par_iter()
        .map(|v| model.classifier.predict(v).expect("dimension checked at training"))
        .collect()
}

/// Predictions for labeled records from classifiers that did not see their
/// labels: labeled PMIDs are split into folds, and each fold is scored by a
/// classifier trained with that fold's targets reverted to the weak labels.
/// The feature subset chosen on the full data is reused for every fold.
pub fn out_of_fold(
    model: &PipelineModel,
    data: &TrainingData,
    labels: &BTreeMap<Pmid, Label>,
    cfg: &SessionConfig,
) -> Result<BTreeMap<Pmid, f64>, String> {
    let index = data.index();
    let mut labeled: Vec<Pmid> = labels.keys().filter(|p| index.contains_key(p)).cloned().collect();
    if labeled.is_empty() {
        return Ok(BTreeMap::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    labeled.shuffle(&mut rng);
    let k = cfg.cv_folds.min(labeled.len());
    let folds: Vec<BTreeSet<Pmid>> = (0..k)
        .map(|f| labeled.iter().skip(f).step_by(k).cloned().collect())
        .collect();
    let per_fold: Vec<Result<Vec<(Pmid, f64)>, String>> = folds
        .par_iter()
        .map(|held_out| {
            let y = targets(data, labels, held_out);
            let clf = train(&data.vectors, &y, Some(&model.selection.features), &cfg.train)
                .map_err(|e| e.to_string())?;
            Ok(held_out
                .iter()
                .map(|p| {
                    let v = &data.vectors[index[p]];
                    (p.clone(), clf.predict(v).expect("dimension checked at training"))
                })
                .collect())
        })
        .collect();
    let mut out = BTreeMap::new();
    for fold in per_fold {
        out.extend(fold?);
    }
    Ok(out)
}

/// Potential for every unlabeled eligible record, in PMID order.
pub fn potentials(
    data: &TrainingData,
    probabilities: &[f64],
    labels: &BTreeMap<Pmid, Label>,
    alpha: f64,
) -> Vec<(Pmid, f64, PotentialScore)> {
    let labeled: Vec<SparseVector> = data
        .pmids
        .iter()
        .zip(&data.vectors)
        .filter(|(p, _)| labels.contains_key(*p))
        .map(|(_, v)| v.clone())
        .collect();
    (0..data.pmids.len())
        .into_par_iter()
        .filter(|&i| data.eligible[i] && !labels.contains_key(&data.pmids[i]))
        .map(|i| {
            let p = probabilities[i];
            let score = crate::discriminative::potential(p, &data.vectors[i], &labeled, alpha);
            (data.pmids[i].clone(), p, score)
        })
        .collect()
}
