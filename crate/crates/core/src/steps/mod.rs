// Copyright 2026 The Pipeforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Pipeline algorithms: preprocessors and classifiers.
//!
//! Every algorithm is described by a [`StepSpec`] carrying its
//! hyperparameter space and default configuration. [`fit`] turns a spec and
//! a configuration into a [`FittedStep`], which either transforms datasets
//! (preprocessors) or produces class probabilities (classifiers).
//!
//! Fitting reports [`StepError::Inapplicable`] when a step cannot run on the
//! given data (missing values reaching a classifier, PCA asking for more
//! components than columns, ...). The search treats that as a cheap prune
//! signal rather than a failure.

pub mod classifiers;
pub mod preprocess;
pub mod space;
pub mod tree;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnKind, Dataset, Proba};
pub use space::{Config, Domain, HyperparameterSpace, Param, ParamValue};

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error("inapplicable step: {0}")]
    Inapplicable(String),
    #[error("schema mismatch on columns: {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),
    #[error("invalid configuration for `{step}`: {reason}")]
    InvalidConfig { step: String, reason: String },
    #[error("unknown step `{0}`")]
    UnknownStep(String),
    #[error("`{0}` is not a {1}")]
    WrongKind(String, &'static str),
    #[error("corrupt learned state: {0}")]
    CorruptState(String),
}

impl StepError {
    pub fn is_inapplicable(&self) -> bool {
        matches!(self, StepError::Inapplicable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Preprocessor,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub name: String,
    pub kind: StepKind,
    pub space: HyperparameterSpace,
    pub default: Config,
}

impl StepSpec {
    pub fn is_classifier(&self) -> bool {
        self.kind == StepKind::Classifier
    }
}

fn int(name: &str, lo: i64, hi: i64) -> Param {
    Param {
        name: name.into(),
        domain: Domain::IntUniform { lo, hi },
    }
}

fn real(name: &str, lo: f64, hi: f64) -> Param {
    Param {
        name: name.into(),
        domain: Domain::Uniform { lo, hi },
    }
}

fn log_real(name: &str, lo: f64, hi: f64) -> Param {
    Param {
        name: name.into(),
        domain: Domain::LogUniform { lo, hi },
    }
}

fn spec(name: &str, kind: StepKind, params: Vec<Param>, default: &[(&str, ParamValue)]) -> StepSpec {
    StepSpec {
        name: name.into(),
        kind,
        space: HyperparameterSpace::new(params),
        default: Config(default.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()),
    }
}

/// Ordered collection of step specs, looked up by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    specs: Vec<StepSpec>,
}

impl Registry {
    pub fn new(specs: Vec<StepSpec>) -> Self {
        Self { specs }
    }

    pub fn specs(&self) -> &[StepSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&StepSpec, StepError> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| StepError::UnknownStep(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.specs.iter().any(|s| s.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn is_classifier(&self, name: &str) -> bool {
        self.get(name).map(StepSpec::is_classifier).unwrap_or(false)
    }

    /// Sub-registry keeping only `names`, in registry order.
    pub fn restrict(&self, names: &[&str]) -> Result<Self, StepError> {
        for n in names {
            self.get(n)?;
        }
        Ok(Self {
            specs: self.specs.iter().filter(|s| names.contains(&s.name.as_str())).cloned().collect(),
        })
    }
}

/// The 13 built-in algorithms.
pub fn builtin_registry() -> Registry {
    use ParamValue::{Cat, Float, Int};
    use StepKind::{Classifier, Preprocessor};
    Registry::new(vec![
        spec("mean_mode_imputer", Preprocessor, vec![], &[]),
        spec("standard_scaler", Preprocessor, vec![], &[]),
        spec("minmax_scaler", Preprocessor, vec![], &[]),
        spec("pca", Preprocessor, vec![int("k", 1, 50)], &[("k", Int(2))]),
        spec(
            "variance_threshold",
            Preprocessor,
            vec![real("threshold", 0.0, 0.2)],
            &[("threshold", Float(0.0))],
        ),
        spec("select_k_best_mi", Preprocessor, vec![int("k", 1, 50)], &[("k", Int(10))]),
        spec("kbins_discretizer", Preprocessor, vec![int("bins", 2, 32)], &[("bins", Int(5))]),
        spec("one_hot_encoder", Preprocessor, vec![], &[]),
        spec(
            "decision_tree",
            Classifier,
            vec![int("max_depth", 1, 20), int("min_leaf", 1, 20)],
            &[("max_depth", Int(10)), ("min_leaf", Int(2))],
        ),
        spec(
            "random_forest",
            Classifier,
            vec![int("trees", 10, 100), int("max_depth", 2, 16)],
            &[("trees", Int(25)), ("max_depth", Int(8))],
        ),
        spec(
            "knn",
            Classifier,
            vec![
                int("k", 1, 25),
                Param {
                    name: "metric".into(),
                    domain: Domain::Categorical {
                        values: vec!["euclidean".into(), "manhattan".into()],
                    },
                },
            ],
            &[("k", Int(5)), ("metric", Cat("euclidean".into()))],
        ),
        spec(
            "logistic_regression",
            Classifier,
            vec![log_real("lr", 1e-4, 1.0), log_real("l2", 1e-6, 1.0), int("epochs", 10, 200)],
            &[("lr", Float(1e-2)), ("l2", Float(1e-4)), ("epochs", Int(50))],
        ),
        spec(
            "gaussian_nb",
            Classifier,
            vec![log_real("smoothing", 1e-12, 1e-6)],
            &[("smoothing", Float(1e-9))],
        ),
    ])
}

/// Column name and kind seen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSig {
    pub name: String,
    pub kind: ColumnKind,
}

fn column_sigs(d: &Dataset) -> Vec<ColumnSig> {
    d.columns()
        .iter()
        .map(|c| ColumnSig {
            name: c.name.clone(),
            kind: c.kind,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Learned {
    Imputer(preprocess::Imputer),
    StandardScaler(preprocess::Scaler),
    MinmaxScaler(preprocess::Scaler),
    Pca(preprocess::Pca),
    VarianceThreshold(preprocess::ColumnSubset),
    SelectKBest(preprocess::ColumnSubset),
    KBins(preprocess::KBins),
    OneHot(preprocess::OneHot),
    DecisionTree(tree::ClassTree),
    RandomForest(tree::ClassForest),
    Knn(classifiers::Knn),
    Logistic(classifiers::Logistic),
    GaussianNb(classifiers::GaussianNb),
}

/// A step after fitting: its configuration, the input layout it was
/// trained on, and the learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStep {
    pub name: String,
    pub kind: StepKind,
    pub config: Config,
    pub input: Vec<ColumnSig>,
    pub n_classes: usize,
    #[serde(rename = "state_blob", with = "blob")]
    pub state: Learned,
}

mod blob {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Learned;

    pub fn serialize<S: Serializer>(state: &Learned, s: S) -> Result<S::Ok, S::Error> {
        let bytes = serde_json::to_vec(state).map_err(serde::ser::Error::custom)?;
        base64::engine::general_purpose::STANDARD.encode(bytes).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Learned, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)?;
        serde_json::from_slice(&bytes).map_err(serde::de::Error::custom)
    }
}

impl FittedStep {
    fn check_schema(&self, d: &Dataset) -> Result<(), StepError> {
        let mut bad = Vec::new();
        let cols = d.columns();
        for (i, sig) in self.input.iter().enumerate() {
            match cols.get(i) {
                Some(c) if c.name == sig.name && c.kind == sig.kind => {}
                _ => bad.push(sig.name.clone()),
            }
        }
        for (i, c) in cols.iter().enumerate() {
            let expected = self.input.get(i).is_some_and(|s| s.name == c.name && s.kind == c.kind);
            if !expected && !bad.contains(&c.name) {
                bad.push(c.name.clone());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(StepError::SchemaMismatch(bad))
        }
    }

    /// Learned state as base64-encoded JSON.
    pub fn state_blob(&self) -> String {
        let bytes = serde_json::to_vec(&self.state).expect("learned state serializes");
        base64::engine::general_purpose::STANDARD.encode(bytes)
    }

    pub fn state_from_blob(blob: &str) -> Result<Learned, StepError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(blob)
            .map_err(|e| StepError::CorruptState(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| StepError::CorruptState(e.to_string()))
    }
}

pub fn fit(spec: &StepSpec, config: &Config, train: &Dataset, seed: u64) -> Result<FittedStep, StepError> {
    spec.space.validate(config).map_err(|reason| StepError::InvalidConfig {
        step: spec.name.clone(),
        reason,
    })?;
    if train.n_rows() == 0 {
        return Err(StepError::Inapplicable("empty training set".into()));
    }
    let state = match spec.name.as_str() {
        "mean_mode_imputer" => Learned::Imputer(preprocess::Imputer::fit(train)),
        "standard_scaler" => Learned::StandardScaler(preprocess::Scaler::fit_standard(train)),
        "minmax_scaler" => Learned::MinmaxScaler(preprocess::Scaler::fit_minmax(train)),
        "pca" => Learned::Pca(preprocess::Pca::fit(train, config.int("k") as usize)?),
        "variance_threshold" => Learned::VarianceThreshold(preprocess::ColumnSubset::fit_variance(
            train,
            config.float("threshold"),
        )?),
        "select_k_best_mi" => Learned::SelectKBest(preprocess::ColumnSubset::fit_k_best(
            train,
            config.int("k") as usize,
        )?),
        "kbins_discretizer" => Learned::KBins(preprocess::KBins::fit(train, config.int("bins") as usize)),
        "one_hot_encoder" => Learned::OneHot(preprocess::OneHot::fit(train)),
        "decision_tree" => {
            let x = classifiers::feature_matrix(train, &spec.name)?;
            Learned::DecisionTree(tree::ClassTree::fit(
                &x,
                train.target(),
                train.n_classes(),
                &tree::TreeParams {
                    max_depth: config.int("max_depth") as usize,
                    min_leaf: config.int("min_leaf") as usize,
                    max_features: None,
                },
                seed,
            ))
        }
        "random_forest" => {
            let x = classifiers::feature_matrix(train, &spec.name)?;
            Learned::RandomForest(tree::ClassForest::fit(
                &x,
                train.target(),
                train.n_classes(),
                config.int("trees") as usize,
                config.int("max_depth") as usize,
                seed,
            ))
        }
        "knn" => {
            classifiers::warn_categorical(train, &spec.name);
            let x = classifiers::feature_matrix(train, &spec.name)?;
            let metric = match config.cat("metric") {
                "manhattan" => classifiers::Distance::Manhattan,
                _ => classifiers::Distance::Euclidean,
            };
            Learned::Knn(classifiers::Knn::fit(x, train.target(), train.n_classes(), config.int("k") as usize, metric))
        }
        "logistic_regression" => {
            classifiers::warn_categorical(train, &spec.name);
            let x = classifiers::feature_matrix(train, &spec.name)?;
            Learned::Logistic(classifiers::Logistic::fit(
                &x,
                train.target(),
                train.n_classes(),
                config.float("lr"),
                config.float("l2"),
                config.int("epochs") as usize,
            )?)
        }
        "gaussian_nb" => {
            classifiers::warn_categorical(train, &spec.name);
            let x = classifiers::feature_matrix(train, &spec.name)?;
            Learned::GaussianNb(classifiers::GaussianNb::fit(
                &x,
                train.target(),
                train.n_classes(),
                config.float("smoothing"),
            ))
        }
        other => return Err(StepError::UnknownStep(other.to_string())),
    };
    Ok(FittedStep {
        name: spec.name.clone(),
        kind: spec.kind,
        config: config.clone(),
        input: column_sigs(train),
        n_classes: train.n_classes(),
        state,
    })
}

/// Applies a fitted preprocessor.
pub fn transform(f: &FittedStep, d: &Dataset) -> Result<Dataset, StepError> {
    f.check_schema(d)?;
    let out = match &f.state {
        Learned::Imputer(s) => s.apply(d),
        Learned::StandardScaler(s) | Learned::MinmaxScaler(s) => s.apply(d),
        Learned::Pca(s) => s.apply(d),
        Learned::VarianceThreshold(s) | Learned::SelectKBest(s) => s.apply(d),
        Learned::KBins(s) => s.apply(d),
        Learned::OneHot(s) => s.apply(d),
        _ => return Err(StepError::WrongKind(f.name.clone(), "preprocessor")),
    }?;
    if !out.all_finite() {
        return Err(StepError::Inapplicable(format!("`{}` produced non-finite values", f.name)));
    }
    Ok(out)
}

/// Class probabilities of a fitted classifier; rows sum to one.
pub fn predict_proba(f: &FittedStep, d: &Dataset) -> Result<Proba, StepError> {
    f.check_schema(d)?;
    let x = classifiers::feature_matrix(d, &f.name)?;
    let rows: Vec<Vec<f64>> = match &f.state {
        Learned::DecisionTree(t) => x.iter().map(|r| t.predict_row(r)).collect(),
        Learned::RandomForest(t) => x.iter().map(|r| t.predict_row(r)).collect(),
        Learned::Knn(m) => m.predict(&x),
        Learned::Logistic(m) => x.iter().map(|r| m.predict_row(r)).collect(),
        Learned::GaussianNb(m) => x.iter().map(|r| m.predict_row(r)).collect(),
        _ => return Err(StepError::WrongKind(f.name.clone(), "classifier")),
    };
    let mut data = Vec::with_capacity(rows.len() * f.n_classes);
    for r in &rows {
        debug_assert_eq!(r.len(), f.n_classes);
        data.extend_from_slice(r);
    }
    let p = Proba::new(f.n_classes, data).map_err(|e| StepError::Inapplicable(e.to_string()))?;
    if !p.all_finite() {
        return Err(StepError::Inapplicable(format!("`{}` produced non-finite probabilities", f.name)));
    }
    Ok(p)
}

/// Name not yet used by any column of `d`.
pub(crate) fn fresh_name(existing: &[Column], base: &str) -> String {
    if !existing.iter().any(|c| c.name == base) {
        return base.to_string();
    }
    (1..)
        .map(|i| format!("{base}_{i}"))
        .find(|n| !existing.iter().any(|c| &c.name == n))
        .expect("unbounded suffix search")
}

/// Input dataset with the classifier's prediction appended: the predicted
/// class code and, for binary targets, the probability of class 1.
pub fn classifier_as_feature(f: &FittedStep, d: &Dataset) -> Result<Dataset, StepError> {
    let p = predict_proba(f, d)?;
    let mut columns = d.columns().to_vec();
    let mut values: Vec<Vec<f64>> = (0..d.n_cols()).map(|j| d.col_values(j).to_vec()).collect();
    let mut missing: Vec<Vec<bool>> = (0..d.n_cols()).map(|j| d.col_missing(j).to_vec()).collect();
    let pred_name = fresh_name(&columns, &format!("pred_{}", f.name));
    columns.push(Column::numeric(pred_name));
    values.push(p.argmax().into_iter().map(|c| c as f64).collect());
    missing.push(vec![false; d.n_rows()]);
    if p.n_classes() == 2 {
        let proba_name = fresh_name(&columns, &format!("proba_{}", f.name));
        columns.push(Column::numeric(proba_name));
        values.push((0..p.n_rows()).map(|i| p.row(i)[1]).collect());
        missing.push(vec![false; d.n_rows()]);
    }
    d.with_features(columns, values, missing)
        .map_err(|e| StepError::Inapplicable(e.to_string()))
}

/// Preprocessor output, or the classifier-augmented dataset for classifiers.
pub fn forward(f: &FittedStep, d: &Dataset) -> Result<Dataset, StepError> {
    match f.kind {
        StepKind::Preprocessor => transform(f, d),
        StepKind::Classifier => classifier_as_feature(f, d),
    }
}
