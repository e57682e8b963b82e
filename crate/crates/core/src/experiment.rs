//! A/B comparison of two pipeline configurations over a labelled corpus.
//!
//! For each configuration: extract events from every file, score extraction
//! precision against the labels, then train an autoencoder on half of the
//! dry events and compute AUROC of the held-out dry half against every
//! non-dry event. AUROC is reported per post and, when the corpus has more
//! than one post, merged over posts in two ways: one model trained on every
//! post, and per-post models whose scores are pooled.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::load_wav;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{auroc, improvement, match_events, round3, PrecisionReport, RocReport};
use crate::events::extract;
use crate::labels::{GroundTruthLabel, SurfaceCondition};
use crate::ncae::{featurize, train, FeatureVector};
use crate::reduction::{apply_reduction, NotchBank};
use crate::spectral::stft;

/// All posts' events through one model trained on all posts' dry events.
pub const MERGE_GLOBAL: &str = "merge-global";
/// Each post scored by its own model, scores pooled before AUROC.
pub const MERGE_POOLED: &str = "merge-pooled";

fn is_merge(setting: &str) -> bool {
    setting == MERGE_GLOBAL || setting == MERGE_POOLED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Recording site; files without one share the post `"default"`.
    #[serde(default = "default_post")]
    pub post: String,
    /// WAV path, relative to the manifest's directory unless absolute.
    pub audio: PathBuf,
    /// Label sidecar path, same resolution rule.
    pub labels: PathBuf,
}

fn default_post() -> String {
    "default".to_owned()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub files: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Experiment(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Which pipeline variant a result belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::A => "A",
            Arm::B => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRow {
    pub post: String,
    pub arm: Arm,
    pub condition: SurfaceCondition,
    pub report: PrecisionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmAuroc {
    pub n_train: usize,
    pub final_loss: f64,
    /// Absent when the setting has no abnormal events.
    pub roc: Option<RocReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AurocRow {
    pub setting: String,
    pub a: ArmAuroc,
    pub b: ArmAuroc,
}

impl AurocRow {
    pub fn improvement_pct(&self) -> Option<f64> {
        let (a, b) = (self.a.roc?, self.b.roc?);
        improvement(a.auroc, b.auroc).ok()
    }
}

/// Envelope and spectrum traces kept for plotting.
#[derive(Debug, Clone)]
pub struct Trace {
    pub file_id: String,
    pub arm: Arm,
    pub envelope_csv: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub precision: Vec<PrecisionRow>,
    pub auroc: Vec<AurocRow>,
    /// Per-event scores for every per-post and globally trained model.
    pub scores: Vec<ScoreRecord>,
    pub traces: Vec<Trace>,
    /// `(file id, csv)` of raw vs reduced mean spectra.
    pub spectra: Vec<(String, String)>,
    pub config_hash_a: String,
    pub config_hash_b: String,
    /// `(path as listed, sha256)` for every input file.
    pub input_hashes: Vec<(String, String)>,
}

/// One extracted event with what the runner needs to know about it.
struct Scored {
    event_id: String,
    post: String,
    condition: SurfaceCondition,
    feature: FeatureVector,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The two arms may differ only in where reduction is applied.
fn check_comparable(a: &PipelineConfig, b: &PipelineConfig) -> Result<()> {
    let strip = |c: &PipelineConfig| PipelineConfig {
        reduce_before: false,
        reduce_events: false,
        ..c.clone()
    };
    if strip(a) != strip(b) {
        return Err(Error::Experiment(
            "configs A and B may differ only in reduce_before / reduce_events".into(),
        ));
    }
    Ok(())
}

/// Score of one evaluated event (held-out dry or any abnormal).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub setting: String,
    pub arm: Arm,
    pub event_id: String,
    pub post: String,
    pub condition: SurfaceCondition,
    pub score: f64,
}

/// Held-out normal and abnormal scores under one model.
struct ArmScores {
    n_train: usize,
    final_loss: f64,
    records: Vec<ScoreRecord>,
}

impl ArmScores {
    fn summarize(&self) -> Result<ArmAuroc> {
        let (normal, abnormal): (Vec<&ScoreRecord>, Vec<&ScoreRecord>) =
            self.records.iter().partition(|r| r.condition.is_normal());
        let roc = if abnormal.is_empty() {
            None
        } else {
            let n: Vec<f64> = normal.iter().map(|r| r.score).collect();
            let a: Vec<f64> = abnormal.iter().map(|r| r.score).collect();
            Some(auroc(&n, &a)?)
        };
        Ok(ArmAuroc {
            n_train: self.n_train,
            final_loss: self.final_loss,
            roc,
        })
    }

    fn pool(parts: &[ArmScores], setting: &str) -> ArmScores {
        ArmScores {
            n_train: parts.iter().map(|p| p.n_train).sum(),
            final_loss: parts.iter().map(|p| p.final_loss).sum::<f64>() / parts.len() as f64,
            records: parts
                .iter()
                .flat_map(|p| p.records.iter().cloned())
                .map(|r| ScoreRecord {
                    setting: setting.to_owned(),
                    ..r
                })
                .collect(),
        }
    }
}

fn score_arm(
    events: &[&Scored],
    config: &PipelineConfig,
    arm: Arm,
    setting: &str,
) -> Result<ArmScores> {
    let dry: Vec<&&Scored> = events.iter().filter(|e| e.condition.is_normal()).collect();
    let train_set: Vec<FeatureVector> =
        dry.iter().step_by(2).map(|e| e.feature.clone()).collect();
    if train_set.len() < 2 || dry.len() < 3 {
        return Err(Error::Experiment(format!(
            "{} dry events; need at least 3 to train and hold out",
            dry.len()
        )));
    }
    let model = train(&train_set, &config.model, config.features, config.seed)?.model;
    let held_out = dry.iter().skip(1).step_by(2).map(|e| **e);
    let abnormal = events.iter().filter(|e| !e.condition.is_normal()).copied();
    let records = held_out
        .chain(abnormal)
        .map(|e| {
            Ok(ScoreRecord {
                setting: setting.to_owned(),
                arm,
                event_id: e.event_id.clone(),
                post: e.post.clone(),
                condition: e.condition,
                score: model.score(&e.feature)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ArmScores {
        n_train: train_set.len(),
        final_loss: model.final_loss,
        records,
    })
}

/// Runs both arms over every file in the manifest.
///
/// Files are processed in id order. Traces are kept for the first file of
/// each (post, condition) pair.
pub fn run_experiment(
    manifest: &CorpusManifest,
    base_dir: &Path,
    config_a: &PipelineConfig,
    config_b: &PipelineConfig,
) -> Result<ExperimentReport> {
    config_a.validate()?;
    config_b.validate()?;
    check_comparable(config_a, config_b)?;
    if manifest.files.is_empty() {
        return Err(Error::Experiment("manifest lists no files".into()));
    }
    let mut entries: Vec<&ManifestEntry> = manifest.files.iter().collect();
    entries.sort_by(|x, y| x.id.cmp(&y.id));
    if entries.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Experiment("duplicate file ids in manifest".into()));
    }

    let mut input_hashes = Vec::new();
    let mut precision: BTreeMap<(String, Arm, SurfaceCondition), PrecisionReport> =
        BTreeMap::new();
    let mut scored: BTreeMap<Arm, Vec<Scored>> = BTreeMap::new();
    let mut traces = Vec::new();
    let mut spectra = Vec::new();
    let mut traced: Vec<(String, SurfaceCondition)> = Vec::new();
    let mut any_dry = false;

    for entry in entries {
        let audio_path = resolve(base_dir, &entry.audio);
        let label_path = resolve(base_dir, &entry.labels);
        input_hashes.push((entry.audio.display().to_string(), sha256_file(&audio_path)?));
        input_hashes.push((entry.labels.display().to_string(), sha256_file(&label_path)?));
        let audio = load_wav(&audio_path)?;
        let label = GroundTruthLabel::load(&label_path)?;
        label.validate(audio.duration_s())?;
        any_dry |= label.condition.is_normal();

        let keep_trace = !traced.contains(&(entry.post.clone(), label.condition));
        if keep_trace {
            traced.push((entry.post.clone(), label.condition));
        }

        for (arm, config) in [(Arm::A, config_a), (Arm::B, config_b)] {
            let out = extract(&audio, config, &entry.id)?;
            let peak_times: Vec<f64> = out.events.iter().map(|e| e.peak_time_s).collect();
            let rep = match_events(&peak_times, &label);
            let slot = precision
                .entry((entry.post.clone(), arm, label.condition))
                .or_insert(PrecisionReport {
                    n_extracted: 0,
                    n_true: 0,
                });
            *slot = slot.merge(rep);
            for ev in &out.events {
                scored.entry(arm).or_default().push(Scored {
                    event_id: ev.id(),
                    post: entry.post.clone(),
                    condition: label.condition,
                    feature: featurize(ev, &config.features, config.margin_s)?,
                });
            }
            if keep_trace {
                let mut csv = String::from("time_s,envelope,smoothed\n");
                for (i, (raw, sm)) in out.envelope.values.iter().zip(&out.smoothed.values).enumerate() {
                    writeln!(csv, "{},{},{}", out.envelope.time(i), raw, sm).unwrap();
                }
                traces.push(Trace {
                    file_id: entry.id.clone(),
                    arm,
                    envelope_csv: csv,
                });
            }
        }
        if keep_trace {
            spectra.push((entry.id.clone(), spectrum_csv(&audio, config_b)?));
        }
    }
    if !any_dry {
        return Err(Error::Experiment("manifest has no dry files to train on".into()));
    }

    let mut posts: Vec<String> = precision.keys().map(|k| k.0.clone()).collect();
    posts.dedup();
    let pick = |arm: Arm, post: Option<&str>| -> Vec<&Scored> {
        scored
            .get(&arm)
            .map(|v| {
                v.iter()
                    .filter(|e| post.is_none_or(|p| e.post == p))
                    .collect()
            })
            .unwrap_or_default()
    };
    let score = |arm: Arm, post: Option<&str>, name: &str| -> Result<ArmScores> {
        let config = if arm == Arm::A { config_a } else { config_b };
        score_arm(&pick(arm, post), config, arm, name).map_err(|e| {
            Error::Experiment(format!("setting {name}, config {}: {e}", arm.as_str()))
        })
    };
    let mut auroc_rows = Vec::new();
    let mut scores = Vec::new();
    let mut per_post: Vec<(ArmScores, ArmScores)> = Vec::new();
    for post in &posts {
        let a = score(Arm::A, Some(post), post)?;
        let b = score(Arm::B, Some(post), post)?;
        auroc_rows.push(AurocRow {
            setting: post.clone(),
            a: a.summarize()?,
            b: b.summarize()?,
        });
        scores.extend(a.records.iter().chain(&b.records).cloned());
        per_post.push((a, b));
    }
    if posts.len() > 1 {
        let a = score(Arm::A, None, MERGE_GLOBAL)?;
        let b = score(Arm::B, None, MERGE_GLOBAL)?;
        auroc_rows.push(AurocRow {
            setting: MERGE_GLOBAL.to_owned(),
            a: a.summarize()?,
            b: b.summarize()?,
        });
        scores.extend(a.records.into_iter().chain(b.records));
        let (a, b): (Vec<ArmScores>, Vec<ArmScores>) = per_post.into_iter().unzip();
        auroc_rows.push(AurocRow {
            setting: MERGE_POOLED.to_owned(),
            a: ArmScores::pool(&a, MERGE_POOLED).summarize()?,
            b: ArmScores::pool(&b, MERGE_POOLED).summarize()?,
        });
    }

    Ok(ExperimentReport {
        precision: precision
            .into_iter()
            .map(|((post, arm, condition), report)| PrecisionRow {
                post,
                arm,
                condition,
                report,
            })
            .collect(),
        auroc: auroc_rows,
        scores,
        traces,
        spectra,
        config_hash_a: config_a.hash(),
        config_hash_b: config_b.hash(),
        input_hashes,
    })
}

/// Mean STFT magnitude per bin before and after the notch bank.
fn spectrum_csv(audio: &crate::audio::AudioBuffer, config: &PipelineConfig) -> Result<String> {
    let bank = NotchBank::design(config.notch.spec(audio.sample_rate()))?;
    let reduced = apply_reduction(audio, &bank)?;
    let raw = stft(audio, config.stft.window, config.stft.hop)?;
    let red = stft(&reduced, config.stft.window, config.stft.hop)?;
    let mut csv = String::from("freq_hz,raw,reduced\n");
    for ((f, a), b) in raw
        .bin_freqs()
        .iter()
        .zip(raw.mean_spectrum())
        .zip(red.mean_spectrum())
    {
        writeln!(csv, "{f},{a},{b}").unwrap();
    }
    Ok(csv)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    pub fn row(&self, setting: &str) -> Option<&AurocRow> {
        self.auroc.iter().find(|r| r.setting == setting)
    }

    /// Precision pooled over posts for one arm and condition.
    pub fn condition_precision(&self, arm: Arm, condition: SurfaceCondition) -> PrecisionReport {
        self.precision
            .iter()
            .filter(|r| r.arm == arm && r.condition == condition)
            .map(|r| r.report)
            .sum()
    }

    pub fn precision_csv(&self) -> String {
        let mut out = String::from("post,config,condition,n_extracted,n_true,precision\n");
        for r in &self.precision {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.post,
                r.arm.as_str(),
                r.condition,
                r.report.n_extracted,
                r.report.n_true,
                fmt_opt(r.report.precision())
            )
            .unwrap();
        }
        out
    }

    pub fn auroc_csv(&self) -> String {
        let mut out = String::from(
            "setting,n_train_a,n_normal_a,n_abnormal_a,auroc_a,n_train_b,n_normal_b,n_abnormal_b,auroc_b,improvement_pct\n",
        );
        let cols = |a: &ArmAuroc| {
            format!(
                "{},{},{},{}",
                a.n_train,
                a.roc.map(|r| r.n_normal.to_string()).unwrap_or_default(),
                a.roc.map(|r| r.n_abnormal.to_string()).unwrap_or_default(),
                fmt_opt(a.roc.map(|r| r.auroc))
            )
        };
        for r in &self.auroc {
            writeln!(
                out,
                "{},{},{},{}",
                r.setting,
                cols(&r.a),
                cols(&r.b),
                fmt_opt(r.improvement_pct())
            )
            .unwrap();
        }
        out
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from("setting,config,event_id,post,condition,score\n");
        for r in &self.scores {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.setting,
                r.arm.as_str(),
                r.event_id,
                r.post,
                r.condition,
                r.score
            )
            .unwrap();
        }
        out
    }

    /// Human-readable tables, three decimals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let conditions = SurfaceCondition::ALL;
        writeln!(out, "Event extraction precision (true / extracted)").unwrap();
        write!(out, "{:<10} {:<9}", "post", "reduction").unwrap();
        for c in conditions {
            write!(out, " {:>20}", c.as_str()).unwrap();
        }
        writeln!(out, " {:>20}", "total").unwrap();
        let mut posts: Vec<&str> = self.precision.iter().map(|r| r.post.as_str()).collect();
        posts.dedup();
        let cell = |r: PrecisionReport| match r.precision() {
            Some(p) => format!("{}/{} ({:.3})", r.n_true, r.n_extracted, round3(p)),
            None => "-".to_owned(),
        };
        for post in posts {
            for arm in [Arm::A, Arm::B] {
                let flag = if arm == Arm::A { "config A" } else { "config B" };
                write!(out, "{post:<10} {flag:<9}").unwrap();
                let mut total: Vec<PrecisionReport> = Vec::new();
                for c in conditions {
                    let r = self
                        .precision
                        .iter()
                        .find(|r| r.post == post && r.arm == arm && r.condition == c)
                        .map(|r| r.report);
                    match r {
                        Some(r) => {
                            total.push(r);
                            write!(out, " {:>20}", cell(r)).unwrap();
                        }
                        None => write!(out, " {:>20}", "-").unwrap(),
                    }
                }
                writeln!(out, " {:>20}", cell(total.into_iter().sum())).unwrap();
            }
        }

        writeln!(out).unwrap();
        writeln!(out, "Anomaly detection AUROC (dry = normal)").unwrap();
        writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>12}",
            "setting", "config A", "config B", "improvement"
        )
        .unwrap();
        let num = |v: Option<f64>| v.map(|x| format!("{:.3}", round3(x))).unwrap_or("-".into());
        for r in &self.auroc {
            writeln!(
                out,
                "{:<10} {:>10} {:>10} {:>12}",
                r.setting,
                num(r.a.roc.map(|x| x.auroc)),
                num(r.b.roc.map(|x| x.auroc)),
                r.improvement_pct()
                    .map(|p| format!("{:.3}%", round3(p)))
                    .unwrap_or("-".into())
            )
            .unwrap();
        }
        let per_post: Vec<f64> = self
            .auroc
            .iter()
            .filter(|r| !is_merge(&r.setting))
            .filter_map(AurocRow::improvement_pct)
            .collect();
        if !per_post.is_empty() {
            let mean = per_post.iter().sum::<f64>() / per_post.len() as f64;
            writeln!(out, "mean per-post improvement: {:.3}%", round3(mean)).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "config A hash: {}", self.config_hash_a).unwrap();
        writeln!(out, "config B hash: {}", self.config_hash_b).unwrap();
        out
    }

    /// Mean of the per-post improvements, when all are defined.
    pub fn mean_per_post_improvement(&self) -> Option<f64> {
        let per: Vec<Option<f64>> = self
            .auroc
            .iter()
            .filter(|r| !is_merge(&r.setting))
            .map(AurocRow::improvement_pct)
            .collect();
        if per.is_empty() {
            return None;
        }
        let vals: Option<Vec<f64>> = per.into_iter().collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Writes every report file into `dir`, returning their relative paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        let mut put = |rel: String, body: &str| -> Result<()> {
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(rel);
            Ok(())
        };
        put("precision.csv".into(), &self.precision_csv())?;
        put("auroc.csv".into(), &self.auroc_csv())?;
        put("scores.csv".into(), &self.scores_csv())?;
        put("summary.txt".into(), &self.summary())?;
        for t in &self.traces {
            put(
                format!("envelopes/{}_{}.csv", t.file_id, t.arm.as_str()),
                &t.envelope_csv,
            )?;
        }
        for (id, csv) in &self.spectra {
            put(format!("spectra/{id}.csv"), csv)?;
        }
        Ok(written)
    }
}
