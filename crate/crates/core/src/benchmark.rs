//! The seeded three-post benchmark corpus.
//!
//! Posts share the event model and differ in their wind (gust rate and
//! strength, level and harmonic profile of the mount resonance) and in how
//! often each surface condition was recorded there. Every post has the same
//! number of dry recordings, so the per-post models see equal training sets;
//! the windier the post, the more non-dry recordings it contributes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::save_wav;
use crate::error::Result;
use crate::experiment::{CorpusManifest, ManifestEntry};
use crate::labels::SurfaceCondition;
use crate::synth::{synth_corpus, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPost {
    pub name: String,
    /// Base spec; condition and seed are overwritten per file.
    pub spec: SynthSpec,
    /// Files per condition, in `SurfaceCondition::ALL` order.
    pub files: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFile {
    pub id: String,
    pub post: String,
    pub spec: SynthSpec,
}

/// Wind settings and condition mix of the three benchmark posts; everything
/// else is default.
pub fn benchmark_posts() -> Vec<BenchmarkPost> {
    // (gusts per minute, gust peak / wind RMS, resonance / wind RMS, resonance slope, files)
    let posts = [
        ("A", 2.0, 37.5, 0.625, -1.0, [4, 1, 1, 1]),
        ("B", 3.0, 50.0, 2.5, 0.0, [4, 2, 2, 2]),
        ("C", 4.0, 62.5, 5.0, 0.5, [4, 3, 3, 3]),
    ];
    posts
        .into_iter()
        .map(|(name, rate, gust, res, slope, files)| BenchmarkPost {
            name: name.to_owned(),
            spec: SynthSpec {
                gust_rate_per_min: rate,
                gust_ratio: gust,
                resonance_ratio: res,
                resonance_slope: slope,
                noise_floor: 0.01,
                wind_level: 0.008,
                condition_tilt_db: 6.0,
                ..SynthSpec::default()
            },
            files,
        })
        .collect()
}

/// Expands posts into the full file list, filling in condition and seed.
pub fn corpus_from_posts(posts: &[BenchmarkPost]) -> Vec<BenchmarkFile> {
    let mut out = Vec::new();
    for (p, post) in posts.iter().enumerate() {
        for (c, (condition, n)) in SurfaceCondition::ALL.into_iter().zip(post.files).enumerate() {
            for f in 0..n {
                out.push(BenchmarkFile {
                    id: format!("{}_{condition}_{f}", post.name),
                    post: post.name.clone(),
                    spec: SynthSpec {
                        surface_condition: condition,
                        rng_seed: post.spec.rng_seed + (1000 * p + 100 * c + f) as u64,
                        ..post.spec.clone()
                    },
                });
            }
        }
    }
    out
}

/// Every file of the benchmark, in a fixed order.
pub fn benchmark_corpus() -> Vec<BenchmarkFile> {
    corpus_from_posts(&benchmark_posts())
}

/// Synthesizes `files` into `dir` as `<id>.wav` + `<id>.json` and writes
/// `manifest.json` next to them.
pub fn write_corpus(dir: &Path, files: &[BenchmarkFile]) -> Result<CorpusManifest> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut manifest = CorpusManifest::default();
    for f in files {
        let (audio, label) = synth_corpus(&f.spec)?;
        let wav = format!("{}.wav", f.id);
        let json = format!("{}.json", f.id);
        save_wav(&audio, dir.join(&wav))?;
        label.save(dir.join(&json))?;
        manifest.files.push(ManifestEntry {
            id: f.id.clone(),
            post: f.post.clone(),
            audio: wav.into(),
            labels: json.into(),
        });
    }
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
