//! In-process simulation of fully connected agents that train locally,
//! broadcast their readout through a codec and average what they receive.
//!
//! Messages between agents are byte strings in the codec wire formats; no
//! other state crosses agent boundaries.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{
    decode_svd, deflate_bytes, encode_svd, inflate_bytes, svd_compress, svd_decompress, BaselineError, BytePayload,
};
use crate::dataset::{split_among_agents, AgentShard, Dataset, DatasetError};
use crate::hdc::{compress, decode_compressed, decompress, derive_keys_with, encode_compressed, HdcError, KeyKind};
use crate::hdc::compute_dimension;
use crate::model::{
    deserialize_classifier, serialize_classifier, train, ClassifierKind, ClassifierMatrix, Encoder, HiddenBatch,
    ModelError,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("agent {agent} has an empty shard")]
    EmptyShard { agent: usize },
    #[error("agent {agent}: {source}")]
    Hdc { agent: usize, source: HdcError },
    #[error("agent {agent}: {source}")]
    Baseline { agent: usize, source: BaselineError },
    #[error("cannot aggregate classifiers: {0}")]
    ShapeMismatch(String),
    #[error("invalid round configuration: {0}")]
    Config(String),
}

/// How an agent's readout is packed for transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Codec {
    None,
    Hdc { ratio: usize, keys: KeyKind },
    Svd { ratio: f64 },
    Deflate,
}

impl Codec {
    pub fn hdc(ratio: usize) -> Self {
        Codec::Hdc { ratio, keys: KeyKind::Unitary }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Codec::None => "none",
            Codec::Hdc { .. } => "hdc",
            Codec::Svd { .. } => "svd",
            Codec::Deflate => "deflate",
        }
    }

    /// Requested ratio for lossy codecs, 1 otherwise.
    pub fn ratio_param(&self) -> f64 {
        match *self {
            Codec::Hdc { ratio, .. } => ratio as f64,
            Codec::Svd { ratio } => ratio,
            Codec::None | Codec::Deflate => 1.0,
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self, Codec::None | Codec::Deflate)
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Codec::None | Codec::Deflate => f.write_str(self.name()),
            Codec::Hdc { ratio, keys: KeyKind::Unitary } => write!(f, "hdc({ratio})"),
            Codec::Hdc { ratio, keys: KeyKind::Gaussian } => write!(f, "hdc-gauss({ratio})"),
            Codec::Svd { ratio } => write!(f, "svd({ratio})"),
        }
    }
}

/// Codec family without a ratio, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecFamily {
    None,
    Hdc,
    Svd,
    Deflate,
}

impl CodecFamily {
    pub fn with_ratio(self, ratio: usize) -> Codec {
        match self {
            CodecFamily::None => Codec::None,
            CodecFamily::Hdc => Codec::hdc(ratio),
            CodecFamily::Svd => Codec::Svd { ratio: ratio as f64 },
            CodecFamily::Deflate => Codec::Deflate,
        }
    }

    pub fn is_lossy(self) -> bool {
        matches!(self, CodecFamily::Hdc | CodecFamily::Svd)
    }
}

impl FromStr for CodecFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(CodecFamily::None),
            "hdc" => Ok(CodecFamily::Hdc),
            "svd" => Ok(CodecFamily::Svd),
            "deflate" => Ok(CodecFamily::Deflate),
            other => Err(format!("unknown codec `{other}` (expected hdc, svd, deflate or none)")),
        }
    }
}

/// One simulated round. Every agent shares `hidden`, `kappa` and the encoder
/// derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub agents: usize,
    pub codec: Codec,
    pub kind: ClassifierKind,
    pub hidden: usize,
    pub kappa: i32,
    pub lambda: f64,
    pub seed: u64,
}

impl RoundConfig {
    pub fn encoder(&self, features: usize) -> Encoder {
        Encoder::new(features, self.hidden, self.kappa, derive_seed(self.seed, Purpose::FeatureKeys, &[]))
    }

    fn key_seed(&self) -> u64 {
        derive_seed(self.seed, Purpose::HdcKeys, &[])
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.agents == 0 {
            return Err(SimError::Config("at least one agent is required".into()));
        }
        if self.hidden == 0 {
            return Err(SimError::Config("hidden size must be positive".into()));
        }
        if self.kappa < 1 {
            return Err(SimError::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.lambda > 0.0) {
            return Err(SimError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Local view of one agent.
#[derive(Debug, Clone)]
pub struct AgentState<T> {
    pub agent_id: usize,
    pub shard: AgentShard,
    pub local_model: ClassifierMatrix<T>,
    /// Decoded peer classifiers, in sender order.
    pub received: Vec<Arc<ClassifierMatrix<T>>>,
    pub aggregated: Option<ClassifierMatrix<T>>,
}

/// Encodes and trains on the agent's own shard only.
pub fn train_local<T: Real>(
    shard: &AgentShard,
    ds: &Dataset<T>,
    encoder: &Encoder,
    kind: ClassifierKind,
    lambda: f64,
) -> Result<ClassifierMatrix<T>, SimError> {
    if shard.sample_indices.is_empty() {
        return Err(SimError::EmptyShard { agent: shard.agent_id });
    }
    let mut rows = shard.sample_indices.clone();
    rows.sort_unstable();
    let hidden = encoder.encode_rows(&ds.features, &rows)?;
    Ok(train(kind, &hidden, &ds.labels_of(&rows), ds.num_classes, T::of(lambda))?)
}

/// What one agent puts on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: usize,
    pub bytes: Vec<u8>,
    /// Scalar values carried; fractional for byte-oriented codecs.
    pub values: f64,
}

/// Shared, non-secret context receivers use to decode any sender's message.
#[derive(Debug, Clone, Copy)]
pub struct Channel {
    pub codec: Codec,
    pub kind: ClassifierKind,
    pub classes: usize,
    pub hidden: usize,
    pub key_seed: u64,
}

impl Channel {
    fn hdc_dim(&self, ratio: usize) -> usize {
        compute_dimension(self.hidden, self.classes, ratio)
    }

    fn raw_len(&self) -> usize {
        15 + 8 * self.classes * self.hidden
    }

    pub fn encode<T: Real>(&self, sender: usize, model: &ClassifierMatrix<T>) -> Result<Message, SimError> {
        let (bytes, values) = match self.codec {
            Codec::None => (serialize_classifier(model), (self.classes * self.hidden) as f64),
            Codec::Deflate => {
                let p = deflate_bytes(&serialize_classifier(model));
                let values = p.data.len() as f64 / 8.0;
                (p.data, values)
            }
            Codec::Hdc { ratio, keys } => {
                let cells = self.classes * self.hidden;
                if ratio == 0 || ratio > cells {
                    return Err(SimError::Hdc { agent: sender, source: HdcError::InvalidRatio { ratio, cells } });
                }
                let keyset = derive_keys_with::<T>(keys, self.key_seed, sender, ratio, self.hdc_dim(ratio));
                let c = compress(model, &keyset).map_err(|source| SimError::Hdc { agent: sender, source })?;
                (encode_compressed(&c), c.meta().dim as f64)
            }
            Codec::Svd { ratio } => {
                let p = svd_compress(model, ratio).map_err(|source| SimError::Baseline { agent: sender, source })?;
                (encode_svd(&p), p.value_count() as f64)
            }
        };
        Ok(Message { sender, bytes, values })
    }

    pub fn decode<T: Real>(&self, msg: &Message) -> Result<ClassifierMatrix<T>, SimError> {
        let agent = msg.sender;
        let model = match self.codec {
            Codec::None => deserialize_classifier(&msg.bytes)?,
            Codec::Deflate => {
                let p = BytePayload { data: msg.bytes.clone(), original_len: self.raw_len() };
                let raw = inflate_bytes(&p).map_err(|source| SimError::Baseline { agent, source })?;
                deserialize_classifier(&raw)?
            }
            Codec::Hdc { ratio, keys } => {
                let c = decode_compressed::<T>(&msg.bytes, self.kind).map_err(|source| SimError::Hdc { agent, source })?;
                let keyset = derive_keys_with::<T>(keys, self.key_seed, c.meta().agent_id, ratio, self.hdc_dim(ratio));
                decompress(&c, &keyset).map_err(|source| SimError::Hdc { agent, source })?
            }
            Codec::Svd { .. } => {
                let p = decode_svd::<T>(&msg.bytes, self.kind).map_err(|source| SimError::Baseline { agent, source })?;
                svd_decompress(&p).map_err(|source| SimError::Baseline { agent, source })?
            }
        };
        if model.kind() != self.kind || model.weights().shape() != (self.classes, self.hidden) {
            return Err(SimError::ShapeMismatch(format!(
                "agent {agent} sent a {} {:?} classifier, expected {} {:?}",
                model.kind(),
                model.weights().shape(),
                self.kind,
                (self.classes, self.hidden)
            )));
        }
        Ok(model)
    }
}

/// Per-agent communication cost of one broadcast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BroadcastStats {
    pub values_per_agent: f64,
    pub bytes_per_agent: f64,
    /// Uncompressed bytes over transmitted bytes.
    pub achieved_ratio: f64,
}

/// Every agent encodes its readout once; every other agent receives and
/// decodes it. Decoding is a pure function of the message, so each distinct
/// message is decoded once and the result shared by all receivers.
pub fn broadcast_round<T: Real>(agents: &mut [AgentState<T>], channel: &Channel) -> Result<BroadcastStats, SimError> {
    let messages: Vec<Message> = agents
        .par_iter()
        .map(|a| channel.encode(a.agent_id, &a.local_model))
        .collect::<Result<_, _>>()?;
    let decoded: Vec<Arc<ClassifierMatrix<T>>> = if agents.len() > 1 {
        messages.par_iter().map(|m| channel.decode(m).map(Arc::new)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    for agent in agents.iter_mut() {
        agent.received = decoded
            .iter()
            .zip(&messages)
            .filter(|(_, m)| m.sender != agent.agent_id)
            .map(|(d, _)| Arc::clone(d))
            .collect();
    }
    let n = messages.len() as f64;
    let bytes = messages.iter().map(|m| m.bytes.len() as f64).sum::<f64>() / n;
    let values = messages.iter().map(|m| m.values).sum::<f64>() / n;
    Ok(BroadcastStats { values_per_agent: values, bytes_per_agent: bytes, achieved_ratio: channel.raw_len() as f64 / bytes })
}

/// Entrywise mean of the agent's own classifier and everything it received.
pub fn aggregate<T: Real, M: AsRef<ClassifierMatrix<T>>>(
    own: &ClassifierMatrix<T>,
    received: &[M],
) -> Result<ClassifierMatrix<T>, SimError> {
    let mut sum = own.weights().clone();
    for r in received {
        let r = r.as_ref();
        if r.weights().shape() != sum.shape() || r.kind() != own.kind() {
            return Err(SimError::ShapeMismatch(format!(
                "{} {:?} vs {} {:?}",
                own.kind(),
                sum.shape(),
                r.kind(),
                r.weights().shape()
            )));
        }
        sum.add_assign(r.weights());
    }
    if received.is_empty() {
        return Ok(own.clone());
    }
    let count = T::of_usize(received.len() + 1);
    Ok(ClassifierMatrix::new(sum.map(|v| v / count), own.kind())?)
}

impl<T> AsRef<ClassifierMatrix<T>> for ClassifierMatrix<T> {
    fn as_ref(&self) -> &ClassifierMatrix<T> {
        self
    }
}

/// Accuracies and communication cost of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub per_agent_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub stats: BroadcastStats,
}

impl RoundResult {
    fn from_accuracies(per_agent_accuracy: Vec<f64>, stats: BroadcastStats) -> Self {
        let n = per_agent_accuracy.len() as f64;
        let mean_accuracy = per_agent_accuracy.iter().sum::<f64>() / n;
        let min_accuracy = per_agent_accuracy.iter().copied().fold(f64::INFINITY, f64::min);
        let max_accuracy = per_agent_accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        RoundResult { per_agent_accuracy, mean_accuracy, min_accuracy, max_accuracy, stats }
    }
}

/// Trained agents after a full round, for inspection.
#[derive(Debug, Clone)]
pub struct RoundTrace<T> {
    pub agents: Vec<AgentState<T>>,
    pub result: RoundResult,
}

/// Split, local training, broadcast, aggregation and evaluation of every
/// aggregated model on the full test split. `ds` must already be normalized.
pub fn run_round<T: Real>(ds: &Dataset<T>, cfg: &RoundConfig) -> Result<RoundResult, SimError> {
    Ok(run_round_traced(ds, cfg)?.result)
}

pub fn run_round_traced<T: Real>(ds: &Dataset<T>, cfg: &RoundConfig) -> Result<RoundTrace<T>, SimError> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Purpose::AgentSplit, &[cfg.agents as u64]);
    let shards = split_among_agents(ds, cfg.agents, &mut rng)?;
    run_with_shards(ds, cfg, shards)
}

/// Runs a round on caller-provided shards.
pub fn run_with_shards<T: Real>(
    ds: &Dataset<T>,
    cfg: &RoundConfig,
    shards: Vec<AgentShard>,
) -> Result<RoundTrace<T>, SimError> {
    cfg.validate()?;
    let encoder = cfg.encoder(ds.num_features());
    let mut agents: Vec<AgentState<T>> = shards
        .into_par_iter()
        .map(|shard| {
            let local_model = train_local(&shard, ds, &encoder, cfg.kind, cfg.lambda)?;
            Ok(AgentState { agent_id: shard.agent_id, shard, local_model, received: Vec::new(), aggregated: None })
        })
        .collect::<Result<_, SimError>>()?;

    let channel = Channel {
        codec: cfg.codec,
        kind: cfg.kind,
        classes: ds.num_classes,
        hidden: cfg.hidden,
        key_seed: cfg.key_seed(),
    };
    let stats = broadcast_round(&mut agents, &channel)?;

    agents.par_iter_mut().try_for_each(|a| -> Result<(), SimError> {
        a.aggregated = Some(aggregate(&a.local_model, &a.received)?);
        Ok(())
    })?;

    let test = encoder.encode_rows(&ds.features, &ds.test)?;
    let labels = ds.labels_of(&ds.test);
    let accuracies = agents
        .par_iter()
        .map(|a| Ok(a.aggregated.as_ref().expect("aggregated above").accuracy(&test, &labels)?))
        .collect::<Result<Vec<f64>, SimError>>()?;
    Ok(RoundTrace { agents, result: RoundResult::from_accuracies(accuracies, stats) })
}

/// Trains one model on the whole train split with the round's encoder.
pub fn train_centralized<T: Real>(ds: &Dataset<T>, cfg: &RoundConfig) -> Result<(Encoder, ClassifierMatrix<T>), SimError> {
    cfg.validate()?;
    let encoder = cfg.encoder(ds.num_features());
    let shard = AgentShard { agent_id: 0, sample_indices: ds.train.clone() };
    let model = train_local(&shard, ds, &encoder, cfg.kind, cfg.lambda)?;
    Ok((encoder, model))
}

/// Test accuracy of the centralized model.
pub fn centralized_accuracy<T: Real>(ds: &Dataset<T>, cfg: &RoundConfig) -> Result<f64, SimError> {
    let (encoder, model) = train_centralized(ds, cfg)?;
    let test: HiddenBatch = encoder.encode_rows(&ds.features, &ds.test)?;
    Ok(model.accuracy(&test, &ds.labels_of(&ds.test))?)
}

/// Hidden size whose uncompressed readout matches an HDC payload at ratio `R`.
pub fn small_hidden(hidden: usize, ratio: usize) -> usize {
    hidden.div_ceil(ratio.max(1)).max(1)
}

/// Uncompressed round with the hidden layer shrunk to [`small_hidden`].
pub fn small_model_baseline<T: Real>(ds: &Dataset<T>, cfg: &RoundConfig, ratio: usize) -> Result<RoundResult, SimError> {
    if ratio == 0 {
        return Err(SimError::Config("ratio must be at least 1".into()));
    }
    let small = RoundConfig { hidden: small_hidden(cfg.hidden, ratio), codec: Codec::None, ..cfg.clone() };
    run_round(ds, &small)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gaussian_blobs, normalize_features};
    use crate::matrix::Matrix;

    fn cm(v: Vec<f64>) -> ClassifierMatrix<f64> {
        let n = v.len();
        ClassifierMatrix::new(Matrix::from_vec(1, n, v), ClassifierKind::Rls).unwrap()
    }

    fn cfg(agents: usize, codec: Codec) -> RoundConfig {
        RoundConfig { agents, codec, kind: ClassifierKind::Rls, hidden: 60, kappa: 3, lambda: 1.0, seed: 17 }
    }

    #[test]
    fn aggregate_rules() {
        let own = cm(vec![0.0]);
        assert_eq!(aggregate::<f64, ClassifierMatrix<f64>>(&own, &[]).unwrap(), own);
        assert_eq!(aggregate(&own, &[cm(vec![2.0])]).unwrap(), cm(vec![1.0]));
        let x = cm(vec![0.3, -1.7]);
        assert_eq!(aggregate(&x, &[x.clone(), x.clone()]).unwrap().weights().as_slice(), &[0.3, -1.7]);
        assert!(matches!(aggregate(&own, &[cm(vec![1.0, 2.0])]), Err(SimError::ShapeMismatch(_))));
    }

    #[test]
    fn empty_shard_is_rejected() {
        let ds: Dataset<f64> = normalize_features(&gaussian_blobs(60, 2, 2, 2.0, 1));
        let enc = Encoder::new(2, 10, 1, 0);
        let shard = AgentShard { agent_id: 4, sample_indices: vec![] };
        assert!(matches!(train_local(&shard, &ds, &enc, ClassifierKind::Rls, 1.0), Err(SimError::EmptyShard { agent: 4 })));
    }

    #[test]
    fn identical_shards_identical_models() {
        let ds: Dataset<f64> = normalize_features(&gaussian_blobs(80, 3, 2, 2.0, 2));
        let enc = Encoder::new(3, 20, 3, 5);
        let a = AgentShard { agent_id: 0, sample_indices: ds.train[..10].to_vec() };
        let b = AgentShard { agent_id: 1, sample_indices: ds.train[..10].to_vec() };
        assert_eq!(
            train_local(&a, &ds, &enc, ClassifierKind::Rls, 0.5).unwrap(),
            train_local(&b, &ds, &enc, ClassifierKind::Rls, 0.5).unwrap()
        );
    }

    #[test]
    fn received_counts_and_exact_copies() {
        let ds: Dataset<f64> = normalize_features(&gaussian_blobs(200, 4, 3, 2.0, 3));
        let trace = run_round_traced(&ds, &cfg(5, Codec::None)).unwrap();
        for a in &trace.agents {
            assert_eq!(a.received.len(), 4);
            let peers: Vec<&ClassifierMatrix<f64>> =
                trace.agents.iter().filter(|p| p.agent_id != a.agent_id).map(|p| &p.local_model).collect();
            for (r, p) in a.received.iter().zip(peers) {
                assert_eq!(r.as_ref(), p);
            }
        }
        assert_eq!(trace.result.stats.values_per_agent, 3.0 * 60.0);
        assert_eq!(trace.result.stats.bytes_per_agent, 15.0 + 8.0 * 180.0);
    }

    #[test]
    fn hdc_unit_ratio_is_near_exact() {
        let ds: Dataset<f64> = normalize_features(&gaussian_blobs(200, 4, 3, 2.0, 3));
        let trace = run_round_traced(&ds, &cfg(4, Codec::hdc(1))).unwrap();
        for a in &trace.agents {
            let peers = trace.agents.iter().filter(|p| p.agent_id != a.agent_id);
            for (r, p) in a.received.iter().zip(peers) {
                let err = r.weights().sub(p.local_model.weights()).frobenius_norm();
                assert!(err <= 1e-10 * p.local_model.weights().frobenius_norm());
            }
        }
    }

    #[test]
    fn single_agent_has_no_peers() {
        let ds: Dataset<f64> = normalize_features(&gaussian_blobs(100, 3, 2, 2.0, 4));
        let trace = run_round_traced(&ds, &cfg(1, Codec::hdc(4))).unwrap();
        assert!(trace.agents[0].received.is_empty());
        assert_eq!(trace.agents[0].aggregated.as_ref().unwrap(), &trace.agents[0].local_model);
    }

    #[test]
    fn codec_errors_carry_agent() {
        let ds: Dataset<f64> = normalize_features(&gaussian_blobs(100, 3, 2, 2.0, 4));
        let err = run_round(&ds, &cfg(2, Codec::hdc(1000))).unwrap_err();
        assert!(matches!(err, SimError::Hdc { agent: 0, .. }), "{err}");
        let err = run_round(&ds, &cfg(2, Codec::Svd { ratio: 0.5 })).unwrap_err();
        assert!(matches!(err, SimError::Baseline { .. }));
    }

    #[test]
    fn small_hidden_rule() {
        assert_eq!(small_hidden(1500, 10), 150);
        assert_eq!(small_hidden(1500, 1), 1500);
        assert_eq!(small_hidden(10, 7), 2);
        assert_eq!(small_hidden(3, 100), 1);
    }

    #[test]
    fn codec_family_parsing() {
        assert_eq!("HDC".parse::<CodecFamily>().unwrap(), CodecFamily::Hdc);
        assert!("zip".parse::<CodecFamily>().is_err());
        assert_eq!(CodecFamily::Svd.with_ratio(4), Codec::Svd { ratio: 4.0 });
    }
}
