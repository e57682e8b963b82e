//! `foi`: command-line front end for the noise-reduction / event-extraction /
//! anomaly-scoring pipeline.

mod manifest;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use foi_core::benchmark::{benchmark_corpus, write_corpus};
use foi_core::{
    apply_reduction, extract, featurize, load_wav, run_experiment, save_wav, synth_corpus, train,
    CorpusManifest, DrivingEvent, EventMeta, FeatureVector, GroundTruthLabel,
    NcaeModel, NotchBank, PipelineConfig, SurfaceCondition, SynthSpec,
};

use manifest::{sidecar, RunManifest};

#[derive(Parser)]
#[command(name = "foi", version, about = "FoI noise reduction and driving-event anomaly scoring")]
struct Cli {
    /// Pipeline config (TOML). Absent keys take defaults.
    #[arg(long, global = true, env = "FOI_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic recording, or the whole benchmark corpus.
    Synth(SynthArgs),
    /// Run the notch bank over a WAV file.
    Reduce(ReduceArgs),
    /// Detect driving events and write one WAV per event.
    Extract(ExtractArgs),
    /// Train the autoencoder on the dry events of an events directory.
    Train(TrainArgs),
    /// Score every event in an events directory.
    Score(ScoreArgs),
    /// Compare two configs over a labelled corpus.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output WAV (single file mode).
    #[arg(long, required_unless_present = "benchmark")]
    out: Option<PathBuf>,
    /// Label sidecar; defaults to the WAV path with a .json extension.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Synthesis parameters (TOML, all keys optional).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    condition: Option<SurfaceCondition>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    events: Option<usize>,
    /// Write the three-post benchmark corpus into this directory instead.
    #[arg(long, value_name = "DIR", conflicts_with = "out")]
    benchmark: Option<PathBuf>,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write the realized filter coefficients as CSV.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// First harmonic in Hz (overrides the config).
    #[arg(long)]
    base_hz: Option<f64>,
    #[arg(long)]
    harmonics: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Source id used in event ids; defaults to the input file stem.
    #[arg(long)]
    source: Option<String>,
    /// Detect on the raw signal and leave crops unfiltered.
    #[arg(long, conflicts_with = "reduce_events")]
    no_reduce: bool,
    /// Also run the notch bank on every crop.
    #[arg(long)]
    reduce_events: bool,
    /// Detection STFT window, samples.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    /// Envelope smoothing length, seconds.
    #[arg(long)]
    smooth_s: Option<f64>,
    /// Minimum peak separation, seconds.
    #[arg(long)]
    min_dist_s: Option<f64>,
    /// Absolute envelope threshold instead of the adaptive one.
    #[arg(long)]
    height: Option<f64>,
}

impl ExtractArgs {
    fn apply(&self, config: &PipelineConfig) -> Result<PipelineConfig> {
        let mut c = config.clone();
        if self.no_reduce {
            c.reduce_before = false;
            c.reduce_events = false;
        }
        if self.reduce_events {
            c.reduce_events = true;
        }
        if let Some(v) = self.window {
            c.stft.window = v;
        }
        if let Some(v) = self.hop {
            c.stft.hop = v;
        }
        if let Some(v) = self.smooth_s {
            c.peaks.smooth_s = v;
        }
        if let Some(v) = self.min_dist_s {
            c.peaks.min_dist_s = v;
        }
        if self.height.is_some() {
            c.peaks.height = self.height;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    events_dir: PathBuf,
    /// A label sidecar (every event shares its condition) or a JSON map
    /// from source id to condition.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    events_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to the base config with reduction switched off.
    #[arg(long)]
    config_a: Option<PathBuf>,
    /// Defaults to the base config with reduction before detection and on
    /// every event.
    #[arg(long)]
    config_b: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Index of an events directory.
#[derive(Debug, Default, Serialize, Deserialize)]
struct EventIndex {
    events: Vec<EventMeta>,
}

const EVENT_INDEX: &str = "events.json";

impl EventIndex {
    fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(EVENT_INDEX);
        let text =
            std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn load_or_default(dir: &Path) -> Result<Self> {
        if dir.join(EVENT_INDEX).exists() {
            Self::load(dir)
        } else {
            Ok(Self::default())
        }
    }

    fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(EVENT_INDEX);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn event_wav(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.wav"))
}

fn load_event(dir: &Path, meta: &EventMeta) -> Result<DrivingEvent> {
    Ok(DrivingEvent {
        audio: load_wav(event_wav(dir, &meta.id))?,
        source_id: meta.source.clone(),
        peak_time_s: meta.peak_time_s,
        start_s: meta.start_s,
        margin_s: meta.margin_s,
    })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_synth(args: &SynthArgs, config: &PipelineConfig) -> Result<()> {
    if let Some(dir) = &args.benchmark {
        let files = benchmark_corpus();
        let corpus = write_corpus(dir, &files)?;
        let mut m = RunManifest::new("synth --benchmark", config.hash());
        for f in &corpus.files {
            m.output(&dir.join(&f.audio))?;
            m.output(&dir.join(&f.labels))?;
        }
        m.output(&dir.join("manifest.json"))?;
        return m.write(&dir.join("run_manifest.json"));
    }

    let out = args.out.as_ref().expect("clap enforces --out");
    let mut spec = match &args.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.rng_seed = s;
    }
    if let Some(c) = args.condition {
        spec.surface_condition = c;
    }
    if let Some(d) = args.duration {
        spec.duration_s = d;
    }
    if let Some(n) = args.events {
        spec.n_events = n;
    }
    let (audio, label) = synth_corpus(&spec)?;
    let label_path = args
        .labels
        .clone()
        .unwrap_or_else(|| out.with_extension("json"));
    save_wav(&audio, out)?;
    label.save(&label_path)?;
    let mut m = RunManifest::new("synth", config.hash());
    m.output(out)?;
    m.output(&label_path)?;
    m.details = serde_json::to_value(&spec)?;
    m.write(&sidecar(out))
}

fn cmd_reduce(args: &ReduceArgs, config: &PipelineConfig) -> Result<()> {
    let mut config = config.clone();
    if let Some(v) = args.base_hz {
        config.notch.base_hz = v;
    }
    if let Some(v) = args.harmonics {
        config.notch.harmonics = v;
    }
    if let Some(v) = args.q {
        config.notch.q = v;
    }
    config.validate()?;
    let audio = load_wav(&args.input)?;
    let bank = NotchBank::design(config.notch.spec(audio.sample_rate()))?;
    let reduced = apply_reduction(&audio, &bank)?;
    save_wav(&reduced, &args.output)?;
    let mut m = RunManifest::new("reduce", config.hash());
    m.input(&args.input)?;
    m.output(&args.output)?;
    if let Some(path) = &args.coefficients {
        std::fs::write(path, bank.coefficients_csv())
            .with_context(|| format!("writing {}", path.display()))?;
        m.output(path)?;
    }
    m.write(&sidecar(&args.output))
}

fn cmd_extract(args: &ExtractArgs, config: &PipelineConfig) -> Result<()> {
    let config = &args.apply(config)?;
    let source = match &args.source {
        Some(s) => s.clone(),
        None => args
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .context("input path has no file name")?,
    };
    let audio = load_wav(&args.input)?;
    let out = extract(&audio, config, &source)?;
    create_dir(&args.out_dir)?;

    let mut m = RunManifest::new("extract", config.hash());
    m.input(&args.input)?;
    let mut index = EventIndex::load_or_default(&args.out_dir)?;
    index.events.retain(|e| e.source != source);
    for ev in &out.events {
        let path = event_wav(&args.out_dir, &ev.id());
        save_wav(&ev.audio, &path)?;
        m.output(&path)?;
        index.events.push(ev.meta());
    }
    index.events.sort_by(|a, b| a.id.cmp(&b.id));
    m.output(&index.save(&args.out_dir)?)?;

    let env_path = args.out_dir.join(format!("{source}_envelope.csv"));
    let mut csv = String::from("time_s,envelope,smoothed\n");
    for (i, (raw, sm)) in out.envelope.values.iter().zip(&out.smoothed.values).enumerate() {
        csv.push_str(&format!("{},{},{}\n", out.envelope.time(i), raw, sm));
    }
    std::fs::write(&env_path, csv).with_context(|| format!("writing {}", env_path.display()))?;
    m.output(&env_path)?;
    m.details = serde_json::json!({
        "source": source,
        "threshold": out.threshold,
        "n_events": out.events.len(),
    });
    m.write(&args.out_dir.join(format!("{source}_manifest.json")))
}

/// `--labels` accepts either a sidecar or a `{source: condition}` map.
#[derive(Deserialize)]
#[serde(untagged)]
enum LabelArg {
    Sidecar(GroundTruthLabel),
    Map(BTreeMap<String, SurfaceCondition>),
}

impl LabelArg {
    fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| {
            format!(
                "{}: expected a label sidecar or a map of source id to condition",
                path.display()
            )
        })
    }

    fn condition(&self, source: &str) -> Option<SurfaceCondition> {
        match self {
            LabelArg::Sidecar(l) => Some(l.condition),
            LabelArg::Map(m) => m.get(source).copied(),
        }
    }
}

fn features_for(
    dir: &Path,
    metas: &[&EventMeta],
    config: &PipelineConfig,
) -> Result<Vec<FeatureVector>> {
    metas
        .iter()
        .map(|meta| {
            let ev = load_event(dir, meta)?;
            featurize(&ev, &config.features, meta.margin_s)
                .with_context(|| format!("event {}", meta.id))
        })
        .collect()
}

fn cmd_train(args: &TrainArgs, config: &PipelineConfig) -> Result<()> {
    let index = EventIndex::load(&args.events_dir)?;
    let labels = LabelArg::load(&args.labels)?;
    let dry: Vec<&EventMeta> = index
        .events
        .iter()
        .filter(|e| labels.condition(&e.source).is_some_and(SurfaceCondition::is_normal))
        .collect();
    if dry.is_empty() {
        bail!("no dry events in {} to train on", args.events_dir.display());
    }
    let features = features_for(&args.events_dir, &dry, config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let report = train(&features, &config.model, config.features, seed)?;
    report.model.save(&args.model)?;

    let mut m = RunManifest::new("train", config.hash());
    m.input(&args.labels)?;
    for meta in &dry {
        m.input(&event_wav(&args.events_dir, &meta.id))?;
    }
    m.output(&args.model)?;
    m.details = serde_json::json!({
        "seed": seed,
        "n_train": features.len(),
        "final_loss": report.model.final_loss,
    });
    m.write(&sidecar(&args.model))
}

fn cmd_score(args: &ScoreArgs, config: &PipelineConfig) -> Result<()> {
    let model = NcaeModel::load(&args.model)?;
    let index = EventIndex::load(&args.events_dir)?;
    let metas: Vec<&EventMeta> = index.events.iter().collect();
    // Features must be computed the way the model was trained.
    let feature_config = PipelineConfig {
        features: model.features,
        ..config.clone()
    };
    let features = features_for(&args.events_dir, &metas, &feature_config)?;
    let mut csv = String::from("event_id,score\n");
    for (meta, f) in metas.iter().zip(&features) {
        csv.push_str(&format!("{},{}\n", meta.id, model.score(f)?));
    }
    std::fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;

    let mut m = RunManifest::new("score", config.hash());
    m.input(&args.model)?;
    for meta in &metas {
        m.input(&event_wav(&args.events_dir, &meta.id))?;
    }
    m.output(&args.out)?;
    m.write(&sidecar(&args.out))
}

fn cmd_evaluate(args: &EvaluateArgs, base: &PipelineConfig) -> Result<()> {
    let a = match &args.config_a {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig {
            reduce_before: false,
            reduce_events: false,
            ..base.clone()
        },
    };
    let b = match &args.config_b {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig {
            reduce_before: true,
            reduce_events: true,
            ..base.clone()
        },
    };
    let corpus = CorpusManifest::load(&args.manifest)?;
    let base_dir = args.manifest.parent().unwrap_or(Path::new("."));
    let report = run_experiment(&corpus, base_dir, &a, &b)?;
    create_dir(&args.out)?;
    let written = report.write(&args.out)?;

    let mut m = RunManifest::new("evaluate", format!("{}+{}", a.hash(), b.hash()));
    m.input(&args.manifest)?;
    for (path, sha256) in &report.input_hashes {
        m.inputs.push(manifest::FileHash {
            path: path.clone(),
            sha256: sha256.clone(),
        });
    }
    for rel in &written {
        m.output(&args.out.join(rel))?;
    }
    m.details = serde_json::json!({
        "config_a": report.config_hash_a,
        "config_b": report.config_hash_b,
    });
    m.write(&args.out.join("manifest.json"))?;
    print!("{}", report.summary());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &config),
        Command::Reduce(a) => cmd_reduce(a, &config),
        Command::Extract(a) => cmd_extract(a, &config),
        Command::Train(a) => cmd_train(a, &config),
        Command::Score(a) => cmd_score(a, &config),
        Command::Evaluate(a) => cmd_evaluate(a, &config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            let _ = writeln!(std::io::stderr(), "error: {msg}");
            ExitCode::FAILURE
        }
    }
}
