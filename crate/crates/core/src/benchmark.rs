//! Classification benchmark: repeated seeded train/test splits, three
//! recognition strategies, per-class precision and recall.
//!
//! * `cnn_svm`: penultimate CNN features, one-vs-rest SVM.
//! * `raw_svm`: raw pixels, one-vs-rest SVM.
//! * `finetuned_cnn`: the network with a fresh head, fine-tuned on the
//!   trial's training chips and classified by its own softmax.

use std::fmt;

use rayon::prelude::*;

use crate::dataset::{LabeledChip, LabeledChipSet};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, PrecisionRecall};
use crate::network::{FineTuneConfig, Network, NetworkSpec};
use crate::rng::derive_seed;
use crate::svm::{FeatureSet, SvmConfig, SvmModel};
use crate::synthgen::{generate_backgrounds, generate_dataset, generate_dataset_with, DatasetParams};
use crate::weights_io::{Cell, ResultsTable};

/// Seed of the standard benchmark dataset.
pub const STANDARD_DATASET_SEED: u64 = 20_190_601;
pub const STANDARD_PER_CLASS: usize = 60;
/// Seed of the disjoint set the base network is pretrained on.
pub const STANDARD_PRETRAIN_SEED: u64 = 77_001;
pub const STANDARD_SCENE_SEED: u64 = 3;

pub const RESULTS_HEADER: [&str; 8] = ["method", "class", "precision", "recall", "trial", "tp", "fp", "fn"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    CnnSvm,
    RawSvm,
    FinetunedCnn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CnnSvm, Method::RawSvm, Method::FinetunedCnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CnnSvm => "cnn_svm",
            Method::RawSvm => "raw_svm",
            Method::FinetunedCnn => "finetuned_cnn",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == name)
            .ok_or_else(|| Error::arg(format!("unknown method {name:?} (cnn_svm, raw_svm, finetuned_cnn)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub trials: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    pub svm: SvmConfig,
    /// Used by the `finetuned_cnn` arm; its seed is replaced per trial.
    pub fine_tune: FineTuneConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            trials: 4,
            train_per_class: 20,
            test_per_class: 10,
            methods: Method::ALL.to_vec(),
            master_seed: 0,
            svm: SvmConfig::default(),
            fine_tune: FineTuneConfig {
                epochs: 15,
                ..FineTuneConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub class_names: Vec<String>,
    pub methods: Vec<Method>,
    pub trials: Vec<TrialResult>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl BenchmarkReport {
    fn results_for(&self, method: Method) -> impl Iterator<Item = (&TrialResult, PrecisionRecall)> {
        self.trials
            .iter()
            .filter(move |t| t.method == method)
            .map(|t| (t, t.confusion.precision_recall()))
    }

    /// Macro precision averaged over trials.
    pub fn mean_precision(&self, method: Method) -> Option<f64> {
        mean(self.results_for(method).map(|(_, pr)| pr.mean_precision))
    }

    pub fn mean_recall(&self, method: Method) -> Option<f64> {
        mean(self.results_for(method).map(|(_, pr)| pr.mean_recall))
    }

    /// True when some class of some trial had an undefined metric.
    pub fn has_undefined(&self) -> bool {
        self.trials.iter().any(|t| t.confusion.precision_recall().has_undefined())
    }

    /// One row per (method, trial, class) and per (method, trial) mean,
    /// followed by trial-averaged rows with `trial = "mean"`.
    pub fn to_table(&self) -> Result<ResultsTable> {
        let mut table = ResultsTable::new(&RESULTS_HEADER);
        for &method in &self.methods {
            let results: Vec<_> = self.results_for(method).collect();
            for (t, pr) in &results {
                for m in &pr.per_class {
                    table.push(vec![
                        method.as_str().into(),
                        m.class_name.as_str().into(),
                        m.precision.into(),
                        m.recall.into(),
                        (t.trial as u64).into(),
                        m.tp.into(),
                        m.fp.into(),
                        m.fn_.into(),
                    ])?;
                }
                let (tp, fp, fn_) = pr.per_class.iter().fold((0, 0, 0), |a, m| (a.0 + m.tp, a.1 + m.fp, a.2 + m.fn_));
                table.push(vec![
                    method.as_str().into(),
                    "mean".into(),
                    pr.mean_precision.into(),
                    pr.mean_recall.into(),
                    (t.trial as u64).into(),
                    tp.into(),
                    fp.into(),
                    fn_.into(),
                ])?;
            }
            for (k, name) in self.class_names.iter().enumerate() {
                table.push(vec![
                    method.as_str().into(),
                    name.as_str().into(),
                    mean(results.iter().map(|(_, pr)| pr.per_class[k].precision)).into(),
                    mean(results.iter().map(|(_, pr)| pr.per_class[k].recall)).into(),
                    "mean".into(),
                    Cell::Undefined,
                    Cell::Undefined,
                    Cell::Undefined,
                ])?;
            }
            table.push(vec![
                method.as_str().into(),
                "mean".into(),
                self.mean_precision(method).into(),
                self.mean_recall(method).into(),
                "mean".into(),
                Cell::Undefined,
                Cell::Undefined,
                Cell::Undefined,
            ])?;
        }
        Ok(table)
    }
}

/// Penultimate-layer features of every chip, in set order.
pub fn cnn_features(net: &Network, set: &LabeledChipSet) -> Result<FeatureSet> {
    let vectors = set
        .chips()
        .par_iter()
        .map(|c| net.extract_features(&c.image.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    FeatureSet::new(
        set.class_names().to_vec(),
        vectors,
        set.chips().iter().map(|c| c.label).collect(),
    )
}

/// Flattened pixels of every chip.
pub fn raw_features(set: &LabeledChipSet) -> Result<FeatureSet> {
    FeatureSet::new(
        set.class_names().to_vec(),
        set.chips().iter().map(|c| c.image.data().to_vec()).collect(),
        set.chips().iter().map(|c| c.label).collect(),
    )
}

fn svm_confusion(train: &FeatureSet, test: &FeatureSet, config: &SvmConfig) -> Result<ConfusionMatrix> {
    let model = SvmModel::train(train, config)?;
    let mut cm = ConfusionMatrix::new(train.class_names().to_vec());
    for (x, &label) in test.vectors().iter().zip(test.labels()) {
        cm.record(label, model.classify(x)?.class_index);
    }
    Ok(cm)
}

/// Runs every configured method on `config.trials` seeded splits of
/// `dataset`. Trial `t` uses split seed `derive_seed(master_seed, t)`.
pub fn benchmark(dataset: &LabeledChipSet, base: &Network, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if config.trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    if config.methods.is_empty() {
        return Err(Error::arg("no methods selected"));
    }
    let names = dataset.class_names().to_vec();
    let needs_cnn = config.methods.iter().any(|m| *m != Method::RawSvm);
    let cnn_all = if config.methods.contains(&Method::CnnSvm) {
        Some(cnn_features(base, dataset)?)
    } else {
        None
    };
    if needs_cnn && base.spec().input_shape[1..] != [dataset.chips()[0].image.height(), dataset.chips()[0].image.width()] {
        return Err(Error::dim("chip size does not match the network input"));
    }
    let raw_all = if config.methods.contains(&Method::RawSvm) {
        Some(raw_features(dataset)?)
    } else {
        None
    };

    let mut trials = Vec::new();
    for trial in 0..config.trials {
        let seed = derive_seed(config.master_seed, trial as u64);
        let split = dataset.split(config.train_per_class, config.test_per_class, seed)?;
        log::info!(
            "trial {trial}: seed {seed:#018x}, train {:?}, test {:?}",
            split.train,
            split.test
        );
        let svm_config = SvmConfig {
            seed,
            ..config.svm.clone()
        };
        for &method in &config.methods {
            let confusion = match method {
                Method::CnnSvm | Method::RawSvm => {
                    let all = if method == Method::CnnSvm { &cnn_all } else { &raw_all };
                    let all = all.as_ref().expect("features computed for selected method");
                    svm_confusion(&all.subset(&split.train), &all.subset(&split.test), &svm_config)?
                }
                Method::FinetunedCnn => {
                    let fresh = base.replace_head(&names, derive_seed(seed, 1))?;
                    let tuned = fresh
                        .fine_tune(
                            &dataset.subset(&split.train),
                            &FineTuneConfig {
                                seed: derive_seed(seed, 2),
                                ..config.fine_tune.clone()
                            },
                        )?
                        .network;
                    let test = dataset.subset(&split.test);
                    let preds = test
                        .chips()
                        .par_iter()
                        .map(|c| tuned.classify(&c.image.to_tensor()).map(|(k, _)| k))
                        .collect::<Result<Vec<_>>>()?;
                    let mut cm = ConfusionMatrix::new(names.clone());
                    for (c, p) in test.chips().iter().zip(preds) {
                        cm.record(c.label, p);
                    }
                    cm
                }
            };
            trials.push(TrialResult {
                trial,
                seed,
                method,
                train_indices: split.train.clone(),
                test_indices: split.test.clone(),
                confusion,
            });
        }
    }
    Ok(BenchmarkReport {
        class_names: names,
        methods: config.methods.clone(),
        trials,
    })
}

/// Label of the target-free class in the pretraining task.
pub const BACKGROUND_CLASS: &str = "background";

/// Source task for the base network: the four target classes plus a
/// target-free class, with a wider jitter and speckle range than the
/// benchmark data.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub per_class: usize,
    pub seed: u64,
    pub chips: DatasetParams,
    pub background_clutter: f64,
    pub fine_tune: FineTuneConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            per_class: 400,
            seed: STANDARD_PRETRAIN_SEED,
            chips: DatasetParams {
                jitter_px: 10.0,
                speckle_range: (0.15, 0.8),
                ..DatasetParams::default()
            },
            background_clutter: 3.0,
            fine_tune: FineTuneConfig {
                learning_rate: 0.003,
                epochs: 6,
                ..FineTuneConfig::default()
            },
        }
    }
}

/// The pretraining set: `per_class` chips of each target class followed by
/// `per_class` background chips.
pub fn pretrain_dataset(config: &PretrainConfig) -> Result<LabeledChipSet> {
    let targets = generate_dataset_with(config.per_class, derive_seed(config.seed, 1), &config.chips)?;
    let mut names = targets.class_names().to_vec();
    names.push(BACKGROUND_CLASS.to_string());
    let bg_label = names.len() - 1;
    let mut chips = targets.chips().to_vec();
    chips.extend(
        generate_backgrounds(
            config.per_class,
            config.chips.chip_size,
            config.chips.speckle_range,
            config.background_clutter,
            derive_seed(config.seed, 3),
        )
        .into_iter()
        .map(|image| LabeledChip { image, label: bg_label }),
    );
    LabeledChipSet::new(names, chips)
}

/// Trains the reference mini-CNN from a seeded initialization on
/// [`pretrain_dataset`], standing in for pretrained weights. Returns the
/// network and its per-epoch loss.
pub fn pretrain_base(config: &PretrainConfig) -> Result<(Network, Vec<f64>)> {
    let data = pretrain_dataset(config)?;
    let refs: Vec<&str> = data.class_names().iter().map(String::as_str).collect();
    let init = Network::init(NetworkSpec::mini_cnn(&refs), derive_seed(config.seed, 0))?;
    let out = init.fine_tune(
        &data,
        &FineTuneConfig {
            seed: derive_seed(config.seed, 2),
            ..config.fine_tune.clone()
        },
    )?;
    Ok((out.network, out.loss_history))
}

/// The standard 60-per-class benchmark dataset.
pub fn standard_dataset() -> Result<LabeledChipSet> {
    generate_dataset(STANDARD_PER_CLASS, STANDARD_DATASET_SEED)
}
