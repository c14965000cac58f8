//! Fixed communication topologies, the message wire format, and a lossy
//! synchronous channel.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::GaussianBelief;
use crate::models::{ModelHandle, RobotId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("{kind:?} topology needs at least {min} robots, got {n}")]
    BadSize { kind: TopologyKind, n: usize, min: usize },
    #[error("edge ({0}, {1}) is invalid for this network")]
    InvalidEdge(RobotId, RobotId),
    #[error("message from {sender} to {receiver} does not follow a topology edge")]
    NonEdgeMessage { sender: RobotId, receiver: RobotId },
    #[error("communication probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("no measurement components were offered")]
    EmptyStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Line,
    Star,
    Bridge,
    Chain,
    Full,
    Custom,
}

/// Symmetric, loop-free neighbor sets, fixed for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    neighbors: Vec<BTreeSet<RobotId>>,
}

impl Topology {
    pub fn from_edges(n: usize, edges: &[(RobotId, RobotId)]) -> Result<Self, NetworkError> {
        let mut neighbors = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(NetworkError::InvalidEdge(a, b));
            }
            neighbors[a].insert(b);
            neighbors[b].insert(a);
        }
        Ok(Self { neighbors })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, robot: RobotId) -> &BTreeSet<RobotId> {
        &self.neighbors[robot]
    }

    pub fn are_neighbors(&self, a: RobotId, b: RobotId) -> bool {
        self.neighbors.get(a).is_some_and(|s| s.contains(&b))
    }

    /// Undirected edges `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> Vec<(RobotId, RobotId)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, set)| set.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    /// Hop distances from `source` (unreachable robots get `None`).
    pub fn hops_from(&self, source: RobotId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[source] = Some(0);
        let mut frontier = vec![source];
        let mut depth = 0;
        while !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            for r in frontier {
                for &j in &self.neighbors[r] {
                    if dist[j].is_none() {
                        dist[j] = Some(depth);
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}

/// Builds one of the named topologies over `n` robots (zero-based ids).
///
/// * line / chain: `i <-> i+1`
/// * star: robot 0 is the hub
/// * bridge: complete halves of `ceil(n/2)` and `floor(n/2)` robots joined by
///   the edge between the last robot of the first half and the first robot of
///   the second
/// * full: complete graph
pub fn make_topology(kind: TopologyKind, n: usize) -> Result<Topology, NetworkError> {
    let min = match kind {
        TopologyKind::Bridge => 4,
        TopologyKind::Custom => 0,
        _ => 2,
    };
    if kind == TopologyKind::Custom || n < min {
        return Err(NetworkError::BadSize { kind, n, min });
    }
    let mut edges = Vec::new();
    match kind {
        TopologyKind::Line | TopologyKind::Chain => edges.extend((1..n).map(|i| (i - 1, i))),
        TopologyKind::Star => edges.extend((1..n).map(|i| (0, i))),
        TopologyKind::Full => {
            for a in 0..n {
                edges.extend(((a + 1)..n).map(|b| (a, b)));
            }
        }
        TopologyKind::Bridge => {
            let first = n.div_ceil(2);
            for (lo, hi) in [(0, first), (first, n)] {
                for a in lo..hi {
                    edges.extend(((a + 1)..hi).map(|b| (a, b)));
                }
            }
            edges.push((first - 1, first));
        }
        TopologyKind::Custom => unreachable!(),
    }
    Topology::from_edges(n, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Data,
    CiRequest,
    CiReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Explicit,
    Implicit,
}

/// One measurement component inside a DATA message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireComponent {
    pub handle: ModelHandle,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl WireComponent {
    pub fn explicit(handle: ModelHandle, value: f64) -> Self {
        Self {
            handle,
            verdict: Verdict::Explicit,
            value: Some(value),
        }
    }

    pub fn implicit(handle: ModelHandle) -> Self {
        Self {
            handle,
            verdict: Verdict::Implicit,
            value: None,
        }
    }
}

/// Mean plus row-major packed lower triangle of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiPayload {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl CiPayload {
    pub fn from_belief(belief: &GaussianBelief) -> Self {
        let n = belief.dim();
        let mut covariance = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                covariance.push(belief.cov[(i, j)]);
            }
        }
        Self {
            mean: belief.mean.as_slice().to_vec(),
            covariance,
        }
    }

    /// Unpacks into a belief at step `k`; `None` if the sizes disagree.
    pub fn to_belief(&self, k: usize) -> Option<GaussianBelief> {
        let n = self.mean.len();
        if self.covariance.len() != n * (n + 1) / 2 {
            return None;
        }
        let mut cov = DMatrix::zeros(n, n);
        let mut it = self.covariance.iter();
        for i in 0..n {
            for j in 0..=i {
                let v = *it.next()?;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Some(GaussianBelief {
            mean: DVector::from_column_slice(&self.mean),
            cov,
            k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub step: usize,
    pub sender: RobotId,
    pub receiver: RobotId,
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<WireComponent>,
    /// Sender's CI trigger rate, piggybacked on DATA messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<CiPayload>,
}

impl Message {
    pub fn ci(kind: MessageKind, step: usize, sender: RobotId, receiver: RobotId, belief: &GaussianBelief) -> Self {
        Self {
            step,
            sender,
            receiver,
            kind,
            components: Vec::new(),
            ci_rate: None,
            ci: Some(CiPayload::from_belief(belief)),
        }
    }

    pub fn explicit_count(&self) -> usize {
        self.components
            .iter()
            .filter(|c| c.verdict == Verdict::Explicit)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Probability that a message is delivered.
    pub cp: f64,
    /// Whether CI payloads are subject to loss as well.
    pub ci_lossy: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            cp: 1.0,
            ci_lossy: false,
        }
    }
}

/// Per-direction component counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub explicit_sent: u64,
    pub explicit_delivered: u64,
    pub implicit_count: u64,
    pub total_components: u64,
    pub messages_sent: u64,
    pub messages_lost: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommStats {
    pub explicit_sent: u64,
    pub explicit_delivered: u64,
    pub implicit_count: u64,
    pub total_components: u64,
    pub ci_exchanges: u64,
    pub per_edge: BTreeMap<(RobotId, RobotId), EdgeStats>,
}

impl CommStats {
    pub fn record_data(&mut self, message: &Message, delivered: bool) {
        let explicit = message.explicit_count() as u64;
        let total = message.components.len() as u64;
        let edge = self.per_edge.entry((message.sender, message.receiver)).or_default();
        edge.messages_sent += 1;
        edge.explicit_sent += explicit;
        edge.implicit_count += total - explicit;
        edge.total_components += total;
        self.explicit_sent += explicit;
        self.implicit_count += total - explicit;
        self.total_components += total;
        if delivered {
            edge.explicit_delivered += explicit;
            self.explicit_delivered += explicit;
        } else {
            edge.messages_lost += 1;
        }
    }

    /// Fraction of offered components that were sent explicitly.
    pub fn explicit_fraction(&self) -> Option<f64> {
        (self.total_components > 0).then(|| self.explicit_sent as f64 / self.total_components as f64)
    }
}

/// Dropped explicit components over all offered components: the share of
/// data a receiver misreads as censored.
pub fn confusion_ratio(stats: &CommStats) -> Result<f64, NetworkError> {
    if stats.total_components == 0 {
        return Err(NetworkError::EmptyStats);
    }
    Ok((stats.explicit_sent - stats.explicit_delivered) as f64 / stats.total_components as f64)
}

/// Messages that reached their receivers, grouped per receiver, and those
/// that were dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Delivery {
    pub inboxes: Vec<Vec<Message>>,
    pub lost: Vec<Message>,
}

/// Whole-message Bernoulli loss with one independent random stream per
/// (direction, message class), so loss realizations on an edge do not
/// depend on what else happens in the run.
#[derive(Debug, Clone)]
pub struct Channel {
    config: ChannelConfig,
    seed: u64,
    streams: BTreeMap<(bool, RobotId, RobotId), ChaCha8Rng>,
}

impl Channel {
    pub fn new(config: ChannelConfig, seed: u64) -> Result<Self, NetworkError> {
        if !(0.0..=1.0).contains(&config.cp) {
            return Err(NetworkError::InvalidProbability(config.cp));
        }
        Ok(Self {
            config,
            seed,
            streams: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> ChannelConfig {
        self.config
    }

    fn draw(&mut self, ci: bool, sender: RobotId, receiver: RobotId) -> bool {
        let seed = self.seed;
        let rng = self.streams.entry((ci, sender, receiver)).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((ci as u64) << 48) | ((sender as u64) << 24) | receiver as u64);
            rng
        });
        rng.random::<f64>() < self.config.cp
    }

    /// Routes `outbox` along `topology`. DATA messages are always subject to
    /// loss; CI messages only when the channel says so.
    pub fn deliver(
        &mut self,
        topology: &Topology,
        outbox: Vec<Message>,
        stats: &mut CommStats,
    ) -> Result<Delivery, NetworkError> {
        let mut delivery = Delivery {
            inboxes: vec![Vec::new(); topology.len()],
            lost: Vec::new(),
        };
        for message in outbox {
            if !topology.are_neighbors(message.sender, message.receiver) {
                return Err(NetworkError::NonEdgeMessage {
                    sender: message.sender,
                    receiver: message.receiver,
                });
            }
            let is_ci = message.kind != MessageKind::Data;
            let delivered = if is_ci && !self.config.ci_lossy {
                true
            } else {
                self.draw(is_ci, message.sender, message.receiver)
            };
            if !is_ci {
                stats.record_data(&message, delivered);
            }
            if delivered {
                delivery.inboxes[message.receiver].push(message);
            } else {
                delivery.lost.push(message);
            }
        }
        Ok(delivery)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MeasurementKind;

    fn ids(set: &BTreeSet<RobotId>) -> Vec<RobotId> {
        set.iter().copied().collect()
    }

    #[test]
    fn named_topologies() {
        let line = make_topology(TopologyKind::Line, 3).unwrap();
        assert_eq!(ids(line.neighbors(1)), vec![0, 2]);
        assert_eq!(ids(line.neighbors(0)), vec![1]);

        let star = make_topology(TopologyKind::Star, 6).unwrap();
        assert_eq!(ids(star.neighbors(0)), vec![1, 2, 3, 4, 5]);
        for k in 1..6 {
            assert_eq!(ids(star.neighbors(k)), vec![0]);
        }

        let bridge = make_topology(TopologyKind::Bridge, 6).unwrap();
        assert_eq!(
            bridge.edges(),
            vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)]
        );

        let odd = make_topology(TopologyKind::Bridge, 7).unwrap();
        assert!(odd.are_neighbors(3, 4));
        assert_eq!(odd.neighbors(0).len(), 3);

        let full = make_topology(TopologyKind::Full, 4).unwrap();
        assert_eq!(full.edges().len(), 6);
    }

    #[test]
    fn topologies_are_symmetric_and_loop_free() {
        for kind in [
            TopologyKind::Line,
            TopologyKind::Star,
            TopologyKind::Bridge,
            TopologyKind::Chain,
            TopologyKind::Full,
        ] {
            for n in 4..9 {
                let t = make_topology(kind, n).unwrap();
                for a in 0..n {
                    assert!(!t.are_neighbors(a, a));
                    for &b in t.neighbors(a) {
                        assert!(t.are_neighbors(b, a));
                    }
                }
            }
        }
    }

    #[test]
    fn bad_sizes() {
        assert!(matches!(
            make_topology(TopologyKind::Line, 1),
            Err(NetworkError::BadSize { .. })
        ));
        assert!(make_topology(TopologyKind::Bridge, 3).is_err());
        assert!(Topology::from_edges(3, &[(0, 0)]).is_err());
        assert!(Topology::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn hop_distances() {
        let chain = make_topology(TopologyKind::Chain, 6).unwrap();
        let hops = chain.hops_from(0);
        assert_eq!(hops[5], Some(5));
        let split = Topology::from_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(split.hops_from(0)[2], None);
    }

    fn data(sender: RobotId, receiver: RobotId, explicit: usize, implicit: usize) -> Message {
        let h = ModelHandle::absolute(MeasurementKind::LinearSelf, sender);
        let mut components = vec![WireComponent::explicit(h, 1.0); explicit];
        components.extend(vec![WireComponent::implicit(h); implicit]);
        Message {
            step: 1,
            sender,
            receiver,
            kind: MessageKind::Data,
            components,
            ci_rate: Some(0.0),
            ci: None,
        }
    }

    fn run_channel(cp: f64, messages: usize, seed: u64) -> (usize, CommStats) {
        let topology = make_topology(TopologyKind::Line, 2).unwrap();
        let mut channel = Channel::new(ChannelConfig { cp, ci_lossy: false }, seed).unwrap();
        let mut stats = CommStats::default();
        let mut delivered = 0;
        for _ in 0..messages {
            let d = channel.deliver(&topology, vec![data(0, 1, 1, 1)], &mut stats).unwrap();
            delivered += d.inboxes[1].len();
        }
        (delivered, stats)
    }

    #[test]
    fn extreme_probabilities() {
        assert_eq!(run_channel(1.0, 200, 1).0, 200);
        assert_eq!(run_channel(0.0, 200, 1).0, 0);
    }

    #[test]
    fn half_probability_within_binomial_band() {
        let n = 10_000;
        let (delivered, stats) = run_channel(0.5, n, 42);
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((delivered as f64 - 0.5 * n as f64).abs() < 3.0 * sigma);
        assert!(stats.explicit_delivered <= stats.explicit_sent);
    }

    #[test]
    fn channel_is_deterministic() {
        assert_eq!(run_channel(0.3, 500, 9).0, run_channel(0.3, 500, 9).0);
    }

    #[test]
    fn ci_messages_are_reliable_by_default() {
        let topology = make_topology(TopologyKind::Line, 2).unwrap();
        let mut channel = Channel::new(ChannelConfig { cp: 0.0, ci_lossy: false }, 1).unwrap();
        let belief = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2));
        let msg = Message::ci(MessageKind::CiRequest, 1, 0, 1, &belief);
        let d = channel
            .deliver(&topology, vec![msg], &mut CommStats::default())
            .unwrap();
        assert_eq!(d.inboxes[1].len(), 1);
    }

    #[test]
    fn non_edge_messages_are_rejected() {
        let topology = make_topology(TopologyKind::Line, 3).unwrap();
        let mut channel = Channel::new(ChannelConfig::default(), 1).unwrap();
        let err = channel
            .deliver(&topology, vec![data(0, 2, 1, 0)], &mut CommStats::default())
            .unwrap_err();
        assert_eq!(err, NetworkError::NonEdgeMessage { sender: 0, receiver: 2 });
    }

    #[test]
    fn invalid_probability() {
        assert!(Channel::new(ChannelConfig { cp: 1.5, ci_lossy: false }, 0).is_err());
    }

    #[test]
    fn confusion_ratio_cases() {
        assert_eq!(confusion_ratio(&CommStats::default()), Err(NetworkError::EmptyStats));
        let mut stats = CommStats::default();
        stats.record_data(&data(0, 1, 2, 2), true);
        assert_eq!(confusion_ratio(&stats).unwrap(), 0.0);
        stats.record_data(&data(0, 1, 2, 2), false);
        assert_eq!(confusion_ratio(&stats).unwrap(), 2.0 / 8.0);
        let edge = stats.per_edge[&(0, 1)];
        assert_eq!(edge.explicit_sent + edge.implicit_count, edge.total_components);
        // Nothing explicit, nothing to drop.
        let mut censored = CommStats::default();
        censored.record_data(&data(0, 1, 0, 5), false);
        assert_eq!(confusion_ratio(&censored).unwrap(), 0.0);
    }

    #[test]
    fn ci_payload_packing() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 2.0, 1.0, 5.0, 3.0, 2.0, 3.0, 6.0]);
        let belief = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), cov);
        let payload = CiPayload::from_belief(&belief);
        assert_eq!(payload.covariance, vec![4.0, 1.0, 5.0, 2.0, 3.0, 6.0]);
        assert_eq!(payload.to_belief(0).unwrap(), belief);
        let mut broken = payload;
        broken.covariance.pop();
        assert!(broken.to_belief(0).is_none());
    }

    #[test]
    fn message_wire_schema() {
        let h = ModelHandle::relative(MeasurementKind::Range, 0, 1);
        let msg = Message {
            step: 7,
            sender: 0,
            receiver: 1,
            kind: MessageKind::Data,
            components: vec![WireComponent::explicit(h, 2.5), WireComponent::implicit(h)],
            ci_rate: Some(0.25),
            ci: None,
        };
        let json = serde_json::to_value(&msg).unwrap();
        assert_eq!(json["kind"], "DATA");
        assert_eq!(json["components"][0]["verdict"], "explicit");
        assert_eq!(json["components"][0]["value"], 2.5);
        assert!(json["components"][1].get("value").is_none());
        assert_eq!(json["components"][0]["handle"]["kind"], "range");
        let back: Message = serde_json::from_value(json).unwrap();
        assert_eq!(back, msg);
    }
}
