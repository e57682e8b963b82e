//! Non-compressed autoencoder (NCAE) anomaly scoring.
//!
//! Every hidden layer is as wide as the input, so the network has no
//! bottleneck; it is trained on normal events only and scores an event by
//! its mean squared reconstruction error in z-scored feature space.
//!
//! Features are the time-averaged STFT magnitude of an event, `log(1 + x)`
//! per bin.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::FeatureConfig;
use crate::error::{Error, Result};
use crate::events::DrivingEvent;
use crate::spectral::stft;

const MAGIC: &[u8; 8] = b"FOINCAE\0";
const FORMAT_VERSION: u32 = 1;
const STD_FLOOR: f64 = 1e-6;
const MIN_TRAINING_VECTORS: usize = 2;

/// Fixed-length log-magnitude spectrum of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Time-averaged `log1p` magnitude spectrum of an event.
///
/// The event must be exactly `2 * margin_s` seconds long.
pub fn featurize(
    event: &DrivingEvent,
    features: &FeatureConfig,
    margin_s: f64,
) -> Result<FeatureVector> {
    let audio = &event.audio;
    let expected = (2.0 * margin_s * audio.sample_rate() as f64).round() as usize;
    if audio.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: audio.len(),
        });
    }
    let spec = stft(audio, features.window, features.hop)?;
    Ok(FeatureVector(
        spec.mean_spectrum().into_iter().map(f64::ln_1p).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(Error::param("model.hidden_layers", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("model.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("model.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("model.learning_rate", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[in][out]`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Dense tanh network with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense>,
}

impl Network {
    /// `hidden_layers` tanh layers plus a linear output, all `width` wide.
    pub fn init(width: usize, hidden_layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / width as f64).sqrt()).expect("valid sigma");
        let layers = (0..=hidden_layers)
            .map(|_| Dense {
                weights: Array2::from_shape_simple_fn((width, width), || normal.sample(rng)),
                bias: Array1::zeros(width),
            })
            .collect();
        Self { layers }
    }

    pub fn width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weights) + &layer.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    /// Mean squared reconstruction error of `x` against itself.
    pub fn loss(&self, x: ArrayView2<f64>) -> f64 {
        let out = self.forward(x);
        (&out - &x).mapv(|e| e * e).mean().unwrap_or(0.0)
    }

    /// Loss and its gradient with respect to every weight and bias.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>) -> (f64, Vec<Dense>) {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        for layer in &self.layers[..last] {
            let z = acts.last().unwrap().dot(&layer.weights) + &layer.bias;
            acts.push(z.mapv(f64::tanh));
        }
        let out = acts[last].dot(&self.layers[last].weights) + &self.layers[last].bias;
        let diff = &out - &x;
        let n = diff.len() as f64;
        let loss = diff.mapv(|e| e * e).sum() / n;

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = diff * (2.0 / n);
        for l in (0..=last).rev() {
            if l < last {
                g *= &acts[l + 1].mapv(|a| 1.0 - a * a);
            }
            let gw = acts[l].t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            if l > 0 {
                g = g.dot(&self.layers[l].weights.t());
            }
            grads.push(Dense {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        (loss, grads)
    }
}

/// Adam moments for one parameter tensor.
struct Moments {
    m: Dense,
    v: Dense,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    state: Vec<Moments>,
}

impl Adam {
    fn new(net: &Network, lr: f64) -> Self {
        let zeros = |d: &Dense| Dense {
            weights: Array2::zeros(d.weights.raw_dim()),
            bias: Array1::zeros(d.bias.raw_dim()),
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: net
                .layers
                .iter()
                .map(|d| Moments {
                    m: zeros(d),
                    v: zeros(d),
                })
                .collect(),
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[Dense]) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for ((layer, st), g) in net.layers.iter_mut().zip(&mut self.state).zip(grads) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut st.m.weights)
                .and(&mut st.v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut st.m.bias)
                .and(&mut st.v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Trained autoencoder plus the normalisation fitted on its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct NcaeModel {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub network: Network,
    pub train: TrainConfig,
    pub seed: u64,
    pub features: FeatureConfig,
    /// Full-batch loss after the last epoch (normalised space).
    pub final_loss: f64,
}

/// Per-epoch mean mini-batch loss alongside the model.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: NcaeModel,
    pub epoch_losses: Vec<f64>,
}

fn stack(features: &[FeatureVector]) -> Result<Array2<f64>> {
    let dim = features[0].len();
    let mut data = Vec::with_capacity(features.len() * dim);
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if f.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("features", "contain non-finite values"));
        }
        data.extend_from_slice(&f.0);
    }
    Ok(Array2::from_shape_vec((features.len(), dim), data).expect("shape checked"))
}

/// Fits normalisation and trains an autoencoder on normal-class features.
pub fn train(
    features: &[FeatureVector],
    config: &TrainConfig,
    feature_config: FeatureConfig,
    seed: u64,
) -> Result<TrainReport> {
    config.validate()?;
    if features.len() < MIN_TRAINING_VECTORS {
        return Err(Error::param(
            "features",
            format!(
                "{} training vectors, need at least {MIN_TRAINING_VECTORS}",
                features.len()
            ),
        ));
    }
    let raw = stack(features)?;
    let dim = raw.ncols();
    if dim == 0 {
        return Err(Error::param("features", "zero-length feature vectors"));
    }
    let mean = raw.mean_axis(Axis(0)).expect("non-empty");
    let std = raw.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    let data = (&raw - &mean) / &std;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut network = Network::init(dim, config.hidden_layers, &mut rng);
    let mut adam = Adam::new(&network, config.learning_rate);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let (loss, grads) = network.loss_and_gradients(batch.view());
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            weighted += loss * chunk.len() as f64;
            adam.step(&mut network, &grads);
        }
        epoch_losses.push(weighted / data.nrows() as f64);
    }

    let final_loss = network.loss(data.view());
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainReport {
        model: NcaeModel {
            mean,
            std,
            network,
            train: *config,
            seed,
            features: feature_config,
            final_loss,
        },
        epoch_losses,
    })
}

/// Reconstruction error of one event, with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub event_id: String,
    pub value: f64,
}

impl NcaeModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn normalize(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.std
    }

    /// Mean squared reconstruction error in normalised space.
    pub fn score(&self, feature: &FeatureVector) -> Result<f64> {
        if feature.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: feature.len(),
            });
        }
        let z = self.normalize(ArrayView1::from(&feature.0[..]));
        let z = z.insert_axis(Axis(0));
        let out = self.network.forward(z.view());
        Ok((&out - &z).mapv(|e| e * e).mean().unwrap_or(0.0))
    }

    pub fn score_event(&self, event_id: &str, feature: &FeatureVector) -> Result<AnomalyScore> {
        Ok(AnomalyScore {
            event_id: event_id.to_owned(),
            value: self.score(feature)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(64 + 8 * (2 * d + self.network.layers.len() * (d * d + d)));
        out.extend_from_slice(MAGIC);
        let put_u32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, d as u32);
        put_u32(&mut out, self.network.layers.len() as u32);
        put_u32(&mut out, self.train.epochs as u32);
        put_u32(&mut out, self.train.batch_size as u32);
        put_u32(&mut out, self.features.window as u32);
        put_u32(&mut out, self.features.hop as u32);
        out.extend_from_slice(&self.seed.to_le_bytes());
        let mut put_f64s = |vals: &mut dyn Iterator<Item = f64>| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put_f64s(&mut [self.train.learning_rate, self.final_loss].into_iter());
        put_f64s(&mut self.mean.iter().copied());
        put_f64s(&mut self.std.iter().copied());
        for layer in &self.network.layers {
            put_f64s(&mut layer.weights.iter().copied());
            put_f64s(&mut layer.bias.iter().copied());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let d = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        if d == 0 || n_layers < 2 {
            return Err(Error::ModelFormat(format!("bad shape {d} x {n_layers} layers")));
        }
        let epochs = r.u32()? as usize;
        let batch_size = r.u32()? as usize;
        let window = r.u32()? as usize;
        let hop = r.u32()? as usize;
        let seed = r.u64()?;
        let learning_rate = r.f64()?;
        let final_loss = r.f64()?;
        let mean = Array1::from(r.f64s(d)?);
        let std = Array1::from(r.f64s(d)?);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let weights = Array2::from_shape_vec((d, d), r.f64s(d * d)?).expect("sized");
            let bias = Array1::from(r.f64s(d)?);
            layers.push(Dense { weights, bias });
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            mean,
            std,
            network: Network { layers },
            train: TrainConfig {
                hidden_layers: n_layers - 1,
                epochs,
                batch_size,
                learning_rate,
            },
            seed,
            features: FeatureConfig { window, hop },
            final_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::ModelFormat("size overflow".into())
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
