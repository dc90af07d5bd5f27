//! One federated round: local counting, masked upload, aggregation, broadcast
//! of the federated matrix, local imputation.
//!
//! Each client runs as its own thread and talks to the coordinator only
//! through a [`Transport`]. Uploads and the broadcast travel in their JSON wire
//! form, so a socket transport could replace [`InProcessTransport`] without
//! touching the state machines.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imputer::{impute_dataset, ImputationSidecar};
use crate::secure_agg::{
    aggregate, digest_elements, mask_counts, ClientId, MaskedCountVector, RingConfig, SeedBook,
    UploadMessage,
};
use crate::transitions::{count_dataset, normalize, LagPolicy, TransitionCounts, TransitionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Init,
    Counted,
    MaskedSent,
    MatrixReceived,
    Imputed,
}

impl Phase {
    fn next(self) -> Option<Phase> {
        match self {
            Phase::Init => Some(Phase::Counted),
            Phase::Counted => Some(Phase::MaskedSent),
            Phase::MaskedSent => Some(Phase::MatrixReceived),
            Phase::MatrixReceived => Some(Phase::Imputed),
            Phase::Imputed => None,
        }
    }
}

/// A participant as configured by the experiment harness.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub id: ClientId,
    pub dataset: Dataset,
    pub interval_hours: u32,
}

#[derive(Debug)]
pub struct ClientState {
    pub id: ClientId,
    pub dataset: Dataset,
    pub interval_hours: u32,
    phase: Phase,
}

impl ClientState {
    pub fn new(config: ClientConfig) -> Result<Self> {
        if config.interval_hours == 0 {
            return Err(Error::Config(format!(
                "client {}: interval_hours must be at least 1",
                config.id
            )));
        }
        Ok(Self {
            id: config.id,
            dataset: config.dataset,
            interval_hours: config.interval_hours,
            phase: Phase::Init,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Moves exactly one step forward; anything else is a protocol violation.
    pub fn advance(&mut self, to: Phase) -> Result<()> {
        if self.phase.next() != Some(to) {
            return Err(Error::Protocol(format!(
                "client {}: illegal phase change {:?} -> {to:?}",
                self.id, self.phase
            )));
        }
        self.phase = to;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Coordinator,
    Client(ClientId),
}

impl Endpoint {
    fn label(&self) -> String {
        match self {
            Endpoint::Coordinator => "coordinator".into(),
            Endpoint::Client(id) => id.0.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Message {
    Register { phase: Phase },
    /// JSON-encoded [`UploadMessage`].
    MaskedUpload { phase: Phase, body: String },
    Failed { reason: String },
    /// JSON-encoded [`TransitionMatrix`].
    MatrixBroadcast { body: String },
    Abort { reason: String },
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub from: Endpoint,
    pub to: Endpoint,
    pub message: Message,
}

/// Reliable, per-sender ordered message delivery.
pub trait Transport: Sync {
    fn send(&self, envelope: Envelope) -> Result<()>;
    fn recv(&self, at: &Endpoint) -> Result<Envelope>;
}

/// Channel-backed transport for running all parties in one process.
pub struct InProcessTransport {
    inboxes: HashMap<Endpoint, (Sender<Envelope>, Mutex<Receiver<Envelope>>)>,
    timeout: Duration,
}

impl InProcessTransport {
    pub fn new(clients: &[ClientId], timeout: Duration) -> Self {
        let inboxes = std::iter::once(Endpoint::Coordinator)
            .chain(clients.iter().cloned().map(Endpoint::Client))
            .map(|e| {
                let (tx, rx) = mpsc::channel();
                (e, (tx, Mutex::new(rx)))
            })
            .collect();
        Self { inboxes, timeout }
    }

    fn inbox(&self, at: &Endpoint) -> Result<&(Sender<Envelope>, Mutex<Receiver<Envelope>>)> {
        self.inboxes
            .get(at)
            .ok_or_else(|| Error::Protocol(format!("unknown endpoint {}", at.label())))
    }
}

impl Transport for InProcessTransport {
    fn send(&self, envelope: Envelope) -> Result<()> {
        self.inbox(&envelope.to)?
            .0
            .send(envelope)
            .map_err(|e| Error::Protocol(format!("send failed: {e}")))
    }

    fn recv(&self, at: &Endpoint) -> Result<Envelope> {
        let rx = self
            .inbox(at)?
            .1
            .lock()
            .map_err(|_| Error::Protocol("inbox lock poisoned".into()))?;
        match rx.recv_timeout(self.timeout) {
            Ok(env) => Ok(env),
            Err(RecvTimeoutError::Timeout) => Err(Error::Protocol(format!(
                "{} timed out waiting for a message",
                at.label()
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol(format!("{} inbox disconnected", at.label())))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Register,
    MaskedUpload,
    AggregateDone,
    MatrixBroadcast,
}

/// One coordinator-visible protocol event. Payloads appear only as digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub kind: MessageKind,
    pub sender: String,
    pub recipient: String,
    pub digest: Option<String>,
    pub sender_phase: Option<Phase>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl RoundTranscript {
    /// Canonical order: by message kind, then by the client involved. Arrival
    /// order between concurrent clients is not reproducible, this order is.
    fn canonicalize(&mut self) {
        self.entries.sort_by(|a, b| {
            (a.kind, &a.sender, &a.recipient).cmp(&(b.kind, &b.sender, &b.recipient))
        });
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.seq = i;
        }
    }

    pub fn of_kind(&self, kind: MessageKind) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundParams {
    pub ring: RingConfig,
    pub smoothing: f64,
    pub lag: LagPolicy,
    pub round: u64,
    pub timeout: Duration,
}

impl Default for RoundParams {
    fn default() -> Self {
        Self {
            ring: RingConfig::default(),
            smoothing: 0.0,
            lag: LagPolicy::default(),
            round: 0,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub id: ClientId,
    pub interval_hours: u32,
    pub phase: Phase,
    pub imputed: Dataset,
    pub sidecar: ImputationSidecar,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    /// Sum of all clients' counts as recovered from the masked uploads.
    pub aggregate_counts: TransitionCounts,
    pub matrix: TransitionMatrix,
    pub clients: Vec<ClientOutcome>,
    pub transcript: RoundTranscript,
}

/// Runs a full round over an [`InProcessTransport`].
pub fn run_federation(
    configs: Vec<ClientConfig>,
    scheme: &BinningScheme,
    seeds: &SeedBook,
    params: RoundParams,
) -> Result<FederationOutcome> {
    let roster: Vec<ClientId> = configs.iter().map(|c| c.id.clone()).collect();
    let transport = InProcessTransport::new(&roster, params.timeout);
    run_federation_over(configs, scheme, seeds, params, &transport)
}

pub fn run_federation_over<T: Transport>(
    configs: Vec<ClientConfig>,
    scheme: &BinningScheme,
    seeds: &SeedBook,
    params: RoundParams,
    transport: &T,
) -> Result<FederationOutcome> {
    if configs.len() < 2 {
        return Err(Error::Protocol(format!(
            "a federation needs at least 2 clients, got {}",
            configs.len()
        )));
    }
    let roster: Vec<ClientId> = configs.iter().map(|c| c.id.clone()).collect();
    if roster.iter().collect::<BTreeSet<_>>().len() != roster.len() {
        return Err(Error::Protocol("client ids must be unique".into()));
    }
    let states = configs
        .into_iter()
        .map(ClientState::new)
        .collect::<Result<Vec<_>>>()?;

    std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .into_iter()
            .map(|state| {
                let client_seeds = SeedBook::from_seeds(seeds.seeds_for(&state.id));
                let roster = &roster;
                scope.spawn(move || {
                    run_client(state, scheme, roster, &client_seeds, params, transport)
                })
            })
            .collect();

        let coordinated = coordinate(&roster, scheme, params, transport);

        let mut clients = Vec::with_capacity(handles.len());
        let mut client_error = None;
        for h in handles {
            match h.join() {
                Ok(Ok(outcome)) => clients.push(outcome),
                Ok(Err(e)) => {
                    client_error.get_or_insert(e);
                }
                Err(_) => {
                    client_error.get_or_insert(Error::Protocol("client thread panicked".into()));
                }
            }
        }
        let (aggregate_counts, matrix, mut transcript) = coordinated?;
        if let Some(e) = client_error {
            return Err(e);
        }
        transcript.canonicalize();
        Ok(FederationOutcome {
            aggregate_counts,
            matrix,
            clients,
            transcript,
        })
    })
}

fn run_client<T: Transport>(
    mut state: ClientState,
    scheme: &BinningScheme,
    roster: &[ClientId],
    seeds: &SeedBook,
    params: RoundParams,
    transport: &T,
) -> Result<ClientOutcome> {
    let me = Endpoint::Client(state.id.clone());
    let send = |message: Message| {
        transport.send(Envelope {
            from: me.clone(),
            to: Endpoint::Coordinator,
            message,
        })
    };
    send(Message::Register {
        phase: state.phase(),
    })?;

    let prepared = (|| {
        let counts = count_dataset(&state.dataset, scheme, params.lag)?;
        state.advance(Phase::Counted)?;
        let masked = mask_counts(
            &counts,
            &state.id,
            roster,
            &seeds.seeds_for(&state.id),
            params.ring,
        )?;
        masked.to_message(params.round).to_json()
    })();
    let body = match prepared {
        Ok(body) => body,
        Err(e) => {
            send(Message::Failed {
                reason: e.to_string(),
            })?;
            return Err(e);
        }
    };
    send(Message::MaskedUpload {
        phase: state.phase(),
        body,
    })?;
    state.advance(Phase::MaskedSent)?;

    let matrix = match transport.recv(&me)?.message {
        Message::MatrixBroadcast { body } => TransitionMatrix::from_json(&body)?,
        Message::Abort { reason } => {
            return Err(Error::Protocol(format!(
                "client {}: round aborted: {reason}",
                state.id
            )))
        }
        other => {
            return Err(Error::Protocol(format!(
                "client {}: unexpected message {other:?}",
                state.id
            )))
        }
    };
    state.advance(Phase::MatrixReceived)?;
    let (imputed, sidecar) = impute_dataset(&state.dataset, &matrix, scheme)?;
    state.advance(Phase::Imputed)?;
    Ok(ClientOutcome {
        id: state.id,
        interval_hours: state.interval_hours,
        phase: state.phase,
        imputed,
        sidecar,
    })
}

fn coordinate<T: Transport>(
    roster: &[ClientId],
    scheme: &BinningScheme,
    params: RoundParams,
    transport: &T,
) -> Result<(TransitionCounts, TransitionMatrix, RoundTranscript)> {
    let abort_all = |reason: &str| {
        for id in roster {
            // Best effort; a client that already exited has nobody listening.
            let _ = transport.send(Envelope {
                from: Endpoint::Coordinator,
                to: Endpoint::Client(id.clone()),
                message: Message::Abort {
                    reason: reason.to_string(),
                },
            });
        }
    };

    match collect_uploads(roster, scheme, params, transport) {
        Ok((uploads, mut transcript)) => {
            let summed = aggregate(&uploads, roster, params.ring)
                .and_then(|counts| Ok((normalize(&counts, params.smoothing)?, counts)));
            let (matrix, counts) = match summed {
                Ok(v) => v,
                Err(e) => {
                    abort_all(&e.to_string());
                    return Err(e);
                }
            };
            let body = matrix.to_json()?;
            let body_digest = digest_bytes(body.as_bytes());
            transcript.entries.push(TranscriptEntry {
                seq: 0,
                kind: MessageKind::AggregateDone,
                sender: Endpoint::Coordinator.label(),
                recipient: Endpoint::Coordinator.label(),
                digest: Some(body_digest.clone()),
                sender_phase: None,
            });
            for id in roster {
                transport.send(Envelope {
                    from: Endpoint::Coordinator,
                    to: Endpoint::Client(id.clone()),
                    message: Message::MatrixBroadcast { body: body.clone() },
                })?;
                transcript.entries.push(TranscriptEntry {
                    seq: 0,
                    kind: MessageKind::MatrixBroadcast,
                    sender: Endpoint::Coordinator.label(),
                    recipient: id.0.clone(),
                    digest: Some(body_digest.clone()),
                    sender_phase: None,
                });
            }
            Ok((counts, matrix, transcript))
        }
        Err(e) => {
            abort_all(&e.to_string());
            Err(e)
        }
    }
}

fn collect_uploads<T: Transport>(
    roster: &[ClientId],
    scheme: &BinningScheme,
    params: RoundParams,
    transport: &T,
) -> Result<(Vec<MaskedCountVector>, RoundTranscript)> {
    let members: BTreeSet<&ClientId> = roster.iter().collect();
    let mut registered = BTreeSet::new();
    let mut uploads: Vec<MaskedCountVector> = Vec::with_capacity(roster.len());
    let mut transcript = RoundTranscript::default();
    let expected_bins = scheme.bin_counts();

    while uploads.len() < roster.len() {
        let env = transport.recv(&Endpoint::Coordinator)?;
        let sender = match &env.from {
            Endpoint::Client(id) if members.contains(id) => id.clone(),
            other => {
                return Err(Error::Protocol(format!(
                    "message from unexpected sender {}",
                    other.label()
                )))
            }
        };
        match env.message {
            Message::Register { phase } => {
                if !registered.insert(sender.clone()) {
                    return Err(Error::Protocol(format!("client {sender} registered twice")));
                }
                transcript.entries.push(TranscriptEntry {
                    seq: 0,
                    kind: MessageKind::Register,
                    sender: sender.0.clone(),
                    recipient: Endpoint::Coordinator.label(),
                    digest: None,
                    sender_phase: Some(phase),
                });
            }
            Message::MaskedUpload { phase, body } => {
                if !registered.contains(&sender) {
                    return Err(Error::Protocol(format!(
                        "client {sender} uploaded before registering"
                    )));
                }
                let msg = UploadMessage::from_json(&body)?;
                if msg.client_id != sender || msg.round != params.round {
                    return Err(Error::Protocol(format!(
                        "client {sender}: upload carries client {} round {}",
                        msg.client_id, msg.round
                    )));
                }
                let vector = msg.into_vector()?;
                if vector.dims.bins() != expected_bins.as_slice() {
                    return Err(Error::Protocol(format!(
                        "client {sender}: upload dims do not match the binning scheme"
                    )));
                }
                transcript.entries.push(TranscriptEntry {
                    seq: 0,
                    kind: MessageKind::MaskedUpload,
                    sender: sender.0.clone(),
                    recipient: Endpoint::Coordinator.label(),
                    digest: Some(vector.digest()),
                    sender_phase: Some(phase),
                });
                uploads.push(vector);
            }
            Message::Failed { reason } => {
                return Err(Error::Protocol(format!(
                    "client {sender} failed during the round: {reason}"
                )))
            }
            other => {
                return Err(Error::Protocol(format!(
                    "coordinator received unexpected message {other:?}"
                )))
            }
        }
    }
    Ok((uploads, transcript))
}

fn digest_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a plaintext count vector in the same encoding as upload digests.
pub fn plaintext_digest(counts: &TransitionCounts) -> String {
    digest_elements(&counts.flatten())
}

#[derive(Debug)]
pub enum LmiOutcome {
    /// The client lacks the grid resolution to estimate one-step transitions.
    Infeasible { reason: String },
    Imputed {
        matrix: TransitionMatrix,
        dataset: Dataset,
        sidecar: ImputationSidecar,
    },
}

impl LmiOutcome {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, LmiOutcome::Infeasible { .. })
    }
}

/// Local Markov imputation: the same imputer driven by the client's own matrix.
pub fn run_lmi(client: &ClientConfig, scheme: &BinningScheme, smoothing: f64) -> Result<LmiOutcome> {
    if client.interval_hours == 0 {
        return Err(Error::Config(format!(
            "client {}: interval_hours must be at least 1",
            client.id
        )));
    }
    if client.interval_hours > 1 {
        return Ok(LmiOutcome::Infeasible {
            reason: format!(
                "client {} samples every {}h and has no one-step transitions on the 1h grid",
                client.id, client.interval_hours
            ),
        });
    }
    let counts = count_dataset(&client.dataset, scheme, LagPolicy::default())?;
    let matrix = normalize(&counts, smoothing)?;
    let (dataset, sidecar) = impute_dataset(&client.dataset, &matrix, scheme)?;
    Ok(LmiOutcome::Imputed {
        matrix,
        dataset,
        sidecar,
    })
}

fn default_ring_modulus() -> u64 {
    RingConfig::default().modulus()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub id: ClientId,
    pub data_path: PathBuf,
    pub interval_hours: u32,
}

/// Federation config file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub clients: Vec<ClientEntry>,
    pub binning_path: PathBuf,
    #[serde(default = "default_ring_modulus")]
    pub ring_modulus: u64,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FederationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: FederationConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.binning_path = base.join(&cfg.binning_path);
        for c in &mut cfg.clients {
            c.data_path = base.join(&c.data_path);
        }
        Ok(cfg)
    }

    pub fn ring(&self) -> Result<RingConfig> {
        RingConfig::from_modulus(self.ring_modulus)
    }

    pub fn load_clients(&self) -> Result<Vec<ClientConfig>> {
        self.clients
            .iter()
            .map(|c| {
                Ok(ClientConfig {
                    id: c.id.clone(),
                    dataset: Dataset::load(&c.data_path)?,
                    interval_hours: c.interval_hours,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TimeSeriesRecord;

    fn scheme() -> BinningScheme {
        BinningScheme::uniform(&["x"], 0.0, 10.0, 2).unwrap()
    }

    fn dataset(rows: &[&[Option<f64>]]) -> Dataset {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, r)| TimeSeriesRecord::new(format!("s{i}"), vec![r.to_vec()]))
            .collect();
        Dataset::new(vec!["x".into()], rows[0].len(), records).unwrap()
    }

    fn client(id: &str, ds: Dataset, interval: u32) -> ClientConfig {
        ClientConfig {
            id: ClientId::from(id),
            dataset: ds,
            interval_hours: interval,
        }
    }

    #[test]
    fn phases_only_move_forward_one_step() {
        let mut s = ClientState::new(client("a", dataset(&[&[Some(1.0)]]), 1)).unwrap();
        assert!(s.advance(Phase::MaskedSent).is_err());
        s.advance(Phase::Counted).unwrap();
        assert!(s.advance(Phase::Init).is_err());
        assert!(s.advance(Phase::Counted).is_err());
        s.advance(Phase::MaskedSent).unwrap();
        s.advance(Phase::MatrixReceived).unwrap();
        s.advance(Phase::Imputed).unwrap();
        assert!(s.advance(Phase::Imputed).is_err());
    }

    #[test]
    fn identical_clients_match_single_client_matrix() {
        let ds = dataset(&[
            &[Some(1.0), Some(7.0), None, Some(1.0)],
            &[Some(6.0), Some(6.0), Some(2.0), None],
        ]);
        let configs = vec![client("a", ds.clone(), 1), client("b", ds.clone(), 1)];
        let roster: Vec<ClientId> = configs.iter().map(|c| c.id.clone()).collect();
        let seeds = SeedBook::provision(11, &roster).unwrap();
        let out = run_federation(configs, &scheme(), &seeds, RoundParams::default()).unwrap();

        let single = count_dataset(&ds, &scheme(), LagPolicy::default()).unwrap();
        let mut doubled = single.clone();
        doubled += &single;
        assert_eq!(out.aggregate_counts, doubled);
        assert_eq!(out.matrix, normalize(&single, 0.0).unwrap());
        assert!(out.clients.iter().all(|c| c.phase == Phase::Imputed));
        assert!(out.clients.iter().all(|c| c.imputed.missing_count() == 0));

        let kinds: Vec<MessageKind> = out.transcript.entries.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                MessageKind::Register,
                MessageKind::Register,
                MessageKind::MaskedUpload,
                MessageKind::MaskedUpload,
                MessageKind::AggregateDone,
                MessageKind::MatrixBroadcast,
                MessageKind::MatrixBroadcast,
            ]
        );
    }

    #[test]
    fn failing_client_aborts_round() {
        let good = dataset(&[&[Some(1.0), Some(7.0)]]);
        let bad = Dataset::new(
            vec!["y".into()],
            2,
            vec![TimeSeriesRecord::new("z", vec![vec![Some(1.0), None]])],
        )
        .unwrap();
        let configs = vec![client("a", good.clone(), 1), client("b", bad, 1), client("c", good, 1)];
        let roster: Vec<ClientId> = configs.iter().map(|c| c.id.clone()).collect();
        let seeds = SeedBook::provision(1, &roster).unwrap();
        let err = run_federation(configs, &scheme(), &seeds, RoundParams::default()).unwrap_err();
        assert_eq!(err.category(), crate::error::ErrorCategory::Protocol, "{err}");
    }

    #[test]
    fn missing_seed_aborts_round() {
        let ds = dataset(&[&[Some(1.0), Some(7.0)]]);
        let configs = vec![client("a", ds.clone(), 1), client("b", ds.clone(), 1), client("c", ds, 1)];
        let roster: Vec<ClientId> = configs.iter().map(|c| c.id.clone()).collect();
        let mut seeds = SeedBook::provision(1, &roster).unwrap();
        seeds.remove(&roster[0], &roster[1]);
        let err = run_federation(configs, &scheme(), &seeds, RoundParams::default()).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn needs_two_unique_clients() {
        let ds = dataset(&[&[Some(1.0)]]);
        let seeds = SeedBook::default();
        assert!(run_federation(vec![client("a", ds.clone(), 1)], &scheme(), &seeds, RoundParams::default()).is_err());
        assert!(run_federation(
            vec![client("a", ds.clone(), 1), client("a", ds, 1)],
            &scheme(),
            &seeds,
            RoundParams::default()
        )
        .is_err());
    }

    #[test]
    fn lmi_feasibility() {
        let ds = dataset(&[&[Some(1.0), None, Some(1.0)]]);
        for interval in [2, 3] {
            assert!(run_lmi(&client("a", ds.clone(), interval), &scheme(), 0.0)
                .unwrap()
                .is_infeasible());
        }
        match run_lmi(&client("a", ds, 1), &scheme(), 0.0).unwrap() {
            LmiOutcome::Imputed { dataset, .. } => assert_eq!(dataset.missing_count(), 0),
            LmiOutcome::Infeasible { .. } => panic!("1h client must be feasible"),
        }
    }

    #[test]
    fn config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fed.json");
        std::fs::write(
            &path,
            r#"{"clients":[{"id":"a","data_path":"a.csv","interval_hours":2}],"binning_path":"bins.json","seed":4}"#,
        )
        .unwrap();
        let cfg = FederationConfig::load(&path).unwrap();
        assert_eq!(cfg.binning_path, dir.path().join("bins.json"));
        assert_eq!(cfg.clients[0].data_path, dir.path().join("a.csv"));
        assert_eq!(cfg.ring().unwrap(), RingConfig::default());
        assert_eq!(cfg.smoothing, 0.0);
    }
}
