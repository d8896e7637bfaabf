//! Odd-sized ensembles of independently seeded classifiers with strict
//! majority voting, plus the accuracy evaluation harness.
//!
//! On disk an ensemble is a directory holding `member_<i>.ckpt` for every
//! member and an `ensemble.json` descriptor (see [`EnsembleManifest`]).

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{
    self, checkpoint, init_model_with, prepare_input, Architecture, ClassifierModel, Tensor, TrainConfig,
    TrainReport,
};
use crate::error::{Error, Result};
use crate::image::{load_gray, GrayImage};
use crate::intensity::{adjust_intensity, IntensityConfig};
use crate::manifest::{natural_cmp, Label, Manifest};

pub const DESCRIPTOR: &str = "ensemble.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Member count; must be odd.
    pub k: usize,
    pub base_seed: u64,
    /// Intensity-adjust every image before it reaches the members.
    pub preprocess: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k: 5,
            base_seed: 0,
            preprocess: true,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        check_k(self.k)
    }
}

fn check_k(k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("ensemble size must be odd, got {k}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub defective: usize,
    pub defect_free: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Label,
    pub votes: Vec<Label>,
    pub tally: Tally,
}

/// Defective iff strictly more than half the votes say so.
pub fn decide(votes: Vec<Label>) -> Verdict {
    let defective = votes.iter().filter(|&&v| v == Label::Defective).count();
    let tally = Tally {
        defective,
        defect_free: votes.len() - defective,
    };
    let decision = if 2 * defective > votes.len() {
        Label::Defective
    } else {
        Label::DefectFree
    };
    Verdict { decision, votes, tally }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<ClassifierModel>,
    pub base_seed: u64,
    pub preprocess: bool,
    pub intensity: IntensityConfig,
    pub train: TrainConfig,
}

impl Ensemble {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn input_side(&self) -> usize {
        self.members[0].arch.input_side
    }

    /// Applies the optional intensity adjustment and the resize that every
    /// member shares.
    pub fn prepare(&self, img: &GrayImage) -> Result<Tensor> {
        let img = if self.preprocess {
            adjust_intensity(img, &self.intensity)?
        } else {
            img.clone()
        };
        prepare_input(&img, self.input_side())
    }

    pub fn inspect(&self, img: &GrayImage) -> Result<Verdict> {
        let x = self.prepare(img)?;
        let votes = self
            .members
            .iter()
            .map(|m| m.predict_tensor(&x).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?;
        Ok(decide(votes))
    }

    /// SHA-256 over the canonical JSON of everything that shaped the members.
    pub fn config_digest(&self) -> String {
        let doc = serde_json::json!({
            "architecture": self.members[0].arch,
            "base_seed": self.base_seed,
            "intensity": self.intensity,
            "k": self.k(),
            "preprocess": self.preprocess,
            "train": self.train,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<EnsembleManifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut members = Vec::with_capacity(self.k());
        for (i, m) in self.members.iter().enumerate() {
            let file = member_file(i);
            let bytes = checkpoint::encode(m);
            let path = dir.join(&file);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            members.push(MemberEntry {
                file,
                seed: m.seed,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = EnsembleManifest {
            k: self.k(),
            base_seed: self.base_seed,
            members,
            config_digest: self.config_digest(),
            input_side: self.input_side(),
            preprocess: self.preprocess,
            intensity: self.intensity.clone(),
            train: self.train.clone(),
        };
        let path = dir.join(DESCRIPTOR);
        let text = serde_json::to_string_pretty(&manifest).expect("descriptor serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Loads and cross-checks an ensemble directory. Any disagreement between
    /// descriptor and member files is reported as a corrupt checkpoint.
    pub fn load(dir: impl AsRef<Path>) -> Result<Ensemble> {
        let dir = dir.as_ref();
        let path = dir.join(DESCRIPTOR);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let corrupt = |msg: String| Error::CorruptCheckpoint(format!("{}: {msg}", path.display()));
        let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if manifest.k == 0 || manifest.k.is_multiple_of(2) || manifest.members.len() != manifest.k {
            return Err(corrupt(format!(
                "k = {} with {} members",
                manifest.k,
                manifest.members.len()
            )));
        }
        let mut members = Vec::with_capacity(manifest.k);
        for (i, entry) in manifest.members.iter().enumerate() {
            let mpath = dir.join(&entry.file);
            let bytes = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
            if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
                return Err(corrupt(format!("{} does not match its recorded digest", entry.file)));
            }
            let model = checkpoint::decode(&bytes)
                .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", mpath.display())))?;
            let expected_seed = manifest.base_seed.wrapping_add(i as u64);
            if model.seed != expected_seed || entry.seed != expected_seed {
                return Err(corrupt(format!("member {i} has seed {}, expected {expected_seed}", model.seed)));
            }
            if model.arch.input_side != manifest.input_side {
                return Err(corrupt(format!("member {i} input side {}", model.arch.input_side)));
            }
            members.push(model);
        }
        if members.iter().any(|m| m.arch != members[0].arch) {
            return Err(corrupt("members disagree on architecture".into()));
        }
        let ensemble = Ensemble {
            members,
            base_seed: manifest.base_seed,
            preprocess: manifest.preprocess,
            intensity: manifest.intensity,
            train: manifest.train,
        };
        if ensemble.config_digest() != manifest.config_digest {
            return Err(corrupt("config digest mismatch".into()));
        }
        Ok(ensemble)
    }
}

pub fn member_file(i: usize) -> String {
    format!("member_{i}.ckpt")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    pub file: String,
    pub seed: u64,
    pub sha256: String,
}

/// Contents of `ensemble.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub k: usize,
    pub base_seed: u64,
    pub members: Vec<MemberEntry>,
    pub config_digest: String,
    pub input_side: usize,
    pub preprocess: bool,
    pub intensity: IntensityConfig,
    pub train: TrainConfig,
}

/// Loads every manifest sample, applies the optional intensity adjustment
/// and resizes to `input_side`.
pub fn load_dataset(
    manifest: &Manifest,
    preprocess: Option<&IntensityConfig>,
    input_side: usize,
) -> Result<Vec<(Tensor, Label)>> {
    manifest
        .rows
        .par_iter()
        .map(|s| {
            let img = load_gray(manifest.resolve(s))?;
            let img = match preprocess {
                Some(cfg) => adjust_intensity(&img, cfg)?,
                None => img,
            };
            Ok((prepare_input(&img, input_side)?, s.label))
        })
        .collect()
}

/// Trains `k` members on the same data. Member `i` takes seed
/// `base_seed + i` for both its initialization and its shuffle order;
/// `train.seed` is ignored. Members train concurrently, each strictly
/// serially, so the result does not depend on scheduling.
pub fn train_ensemble(
    dataset: &[(Tensor, Label)],
    train: &TrainConfig,
    arch: Architecture,
    cfg: &EnsembleConfig,
    intensity: &IntensityConfig,
) -> Result<(Ensemble, Vec<TrainReport>)> {
    check_k(cfg.k)?;
    train.validate()?;
    if arch.input_side != train.input_side {
        return Err(Error::Config(format!(
            "architecture input side {} differs from training input side {}",
            arch.input_side, train.input_side
        )));
    }
    let results: Vec<(ClassifierModel, TrainReport)> = (0..cfg.k)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed.wrapping_add(i as u64);
            let member_cfg = TrainConfig {
                seed,
                ..train.clone()
            };
            classifier::train(&init_model_with(arch, seed), dataset, &member_cfg)
        })
        .collect::<Result<_>>()?;
    let (members, reports) = results.into_iter().unzip();
    let ensemble = Ensemble {
        members,
        base_seed: cfg.base_seed,
        preprocess: cfg.preprocess,
        intensity: intensity.clone(),
        train: TrainConfig {
            seed: cfg.base_seed,
            ..train.clone()
        },
    };
    Ok((ensemble, reports))
}

/// Confusion counts with `defective` as the positive class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, decision: Label) {
        match (truth, decision) {
            (Label::Defective, Label::Defective) => self.true_positive += 1,
            (Label::DefectFree, Label::Defective) => self.false_positive += 1,
            (Label::DefectFree, Label::DefectFree) => self.true_negative += 1,
            (Label::Defective, Label::DefectFree) => self.false_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn correct(&self) -> usize {
        self.true_positive + self.true_negative
    }

    /// `None` when nothing was evaluated.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub fabric_type: String,
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub confusion: Confusion,
}

impl GroupAccuracy {
    fn new(fabric_type: String, confusion: Confusion) -> Self {
        Self {
            fabric_type,
            evaluated: confusion.total(),
            correct: confusion.correct(),
            accuracy: confusion.accuracy(),
            confusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub path: String,
    pub fabric_type: String,
    pub label: Label,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: GroupAccuracy,
    /// Natural type order; types without any evaluated sample are omitted.
    pub per_type: Vec<GroupAccuracy>,
    pub samples: Vec<SampleOutcome>,
    pub errors: Vec<SampleError>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn type_accuracy(&self, fabric_type: &str) -> Option<f64> {
        self.per_type
            .iter()
            .find(|g| g.fabric_type == fabric_type)
            .and_then(|g| g.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per fabric type followed by an `overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "fabric_type,evaluated,correct,accuracy,true_positive,false_positive,true_negative,false_negative\n",
        );
        for g in self.per_type.iter().chain(std::iter::once(&self.overall)) {
            let c = &g.confusion;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                g.fabric_type,
                g.evaluated,
                g.correct,
                g.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                c.true_positive,
                c.false_positive,
                c.true_negative,
                c.false_negative
            ));
        }
        out
    }
}

/// Builds the report from per-sample outcomes. Unreadable samples are listed
/// under `errors` and excluded from every count.
pub fn summarize(types: &[String], samples: Vec<SampleOutcome>, errors: Vec<SampleError>) -> EvaluationReport {
    let mut overall = Confusion::default();
    let mut by_type: BTreeMap<&str, Confusion> = BTreeMap::new();
    for s in &samples {
        overall.record(s.label, s.verdict.decision);
        by_type
            .entry(s.fabric_type.as_str())
            .or_default()
            .record(s.label, s.verdict.decision);
    }
    let mut warnings = Vec::new();
    let mut per_type = Vec::new();
    for t in types {
        match by_type.get(t.as_str()) {
            Some(c) => per_type.push(GroupAccuracy::new(t.clone(), c.clone())),
            None => warnings.push(format!("fabric type {t} has no evaluated samples and is omitted")),
        }
    }
    per_type.sort_by(|a, b| natural_cmp(&a.fabric_type, &b.fabric_type));
    EvaluationReport {
        overall: GroupAccuracy::new("overall".into(), overall),
        per_type,
        samples,
        errors,
        warnings,
    }
}

pub fn evaluate(ensemble: &Ensemble, manifest: &Manifest) -> Result<EvaluationReport> {
    if manifest.rows.is_empty() {
        return Err(Error::Manifest("manifest is empty".into()));
    }
    let results: Vec<std::result::Result<SampleOutcome, SampleError>> = manifest
        .rows
        .par_iter()
        .map(|s| {
            let verdict = load_gray(manifest.resolve(s)).and_then(|img| ensemble.inspect(&img));
            match verdict {
                Ok(verdict) => Ok(SampleOutcome {
                    path: s.path.clone(),
                    fabric_type: s.fabric_type.clone(),
                    label: s.label,
                    verdict,
                }),
                Err(e) => Err(SampleError {
                    path: s.path.clone(),
                    message: e.to_string(),
                }),
            }
        })
        .collect();
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => errors.push(e),
        }
    }
    Ok(summarize(&manifest.fabric_types(), samples, errors))
}
