//! Pairwise additive masking over the ring Z/2^k.
//!
//! Each pair of clients `(a, b)` with `a < b` shares a seed. Client `a` adds the
//! seed's pseudorandom expansion to its flattened counts and client `b`
//! subtracts it, so the masks cancel in the coordinator's sum and only the
//! aggregate is revealed. Every registered client must upload; there is no
//! dropout recovery.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::transitions::TransitionCounts;

pub const DEFAULT_RING_BITS: u32 = 61;

/// Identifier of a federation participant. Ordering decides mask signs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub String);

impl ClientId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClientId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// The ring Z/2^bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingConfig {
    bits: u32,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            bits: DEFAULT_RING_BITS,
        }
    }
}

impl RingConfig {
    pub fn new(bits: u32) -> Result<Self> {
        if !(8..=63).contains(&bits) {
            return Err(Error::Config(format!(
                "ring width must be between 8 and 63 bits, got {bits}"
            )));
        }
        Ok(Self { bits })
    }

    pub fn from_modulus(modulus: u64) -> Result<Self> {
        if !modulus.is_power_of_two() {
            return Err(Error::Config(format!(
                "ring modulus must be a power of two, got {modulus}"
            )));
        }
        Self::new(modulus.trailing_zeros())
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn modulus(&self) -> u64 {
        1u64 << self.bits
    }

    fn mask(&self) -> u64 {
        self.modulus() - 1
    }

    pub fn reduce(&self, x: u64) -> u64 {
        x & self.mask()
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }
}

/// Seed shared by exactly one unordered pair of clients.
#[derive(Clone, PartialEq, Eq)]
pub struct PairwiseSeed {
    low: ClientId,
    high: ClientId,
    seed: [u8; 32],
}

impl fmt::Debug for PairwiseSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairwiseSeed")
            .field("low", &self.low)
            .field("high", &self.high)
            .finish_non_exhaustive()
    }
}

impl PairwiseSeed {
    pub fn new(a: ClientId, b: ClientId, seed: [u8; 32]) -> Result<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(Self {
                low: a,
                high: b,
                seed,
            }),
            std::cmp::Ordering::Greater => Ok(Self {
                low: b,
                high: a,
                seed,
            }),
            std::cmp::Ordering::Equal => Err(Error::Protocol(format!(
                "a pairwise seed needs two distinct clients, got {a} twice"
            ))),
        }
    }

    pub fn low(&self) -> &ClientId {
        &self.low
    }

    pub fn high(&self) -> &ClientId {
        &self.high
    }

    pub fn involves(&self, id: &ClientId) -> bool {
        &self.low == id || &self.high == id
    }

    pub fn seed_bytes(&self) -> &[u8; 32] {
        &self.seed
    }
}

/// Out-of-band seed provisioning: one seed per unordered client pair.
#[derive(Debug, Clone, Default)]
pub struct SeedBook {
    seeds: BTreeMap<(ClientId, ClientId), PairwiseSeed>,
}

impl SeedBook {
    /// Derives every pair's seed from a master seed with SHA-256.
    pub fn provision(master: u64, clients: &[ClientId]) -> Result<Self> {
        let mut book = SeedBook::default();
        for (i, a) in clients.iter().enumerate() {
            for b in &clients[i + 1..] {
                let (low, high) = if a < b { (a, b) } else { (b, a) };
                let mut h = Sha256::new();
                h.update(b"fedmarkov/pair-seed/v1");
                h.update(master.to_le_bytes());
                for id in [low, high] {
                    h.update((id.0.len() as u64).to_le_bytes());
                    h.update(id.0.as_bytes());
                }
                let mut seed = [0u8; 32];
                seed.copy_from_slice(&h.finalize());
                book.insert(PairwiseSeed::new(low.clone(), high.clone(), seed)?);
            }
        }
        Ok(book)
    }

    pub fn from_seeds(seeds: impl IntoIterator<Item = PairwiseSeed>) -> Self {
        let mut book = SeedBook::default();
        for s in seeds {
            book.insert(s);
        }
        book
    }

    pub fn insert(&mut self, seed: PairwiseSeed) {
        self.seeds
            .insert((seed.low.clone(), seed.high.clone()), seed);
    }

    pub fn remove(&mut self, a: &ClientId, b: &ClientId) -> Option<PairwiseSeed> {
        let key = if a < b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        self.seeds.remove(&key)
    }

    /// The seeds a single client is allowed to hold.
    pub fn seeds_for(&self, id: &ClientId) -> Vec<PairwiseSeed> {
        self.seeds
            .values()
            .filter(|s| s.involves(id))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Deterministic ChaCha20 expansion of a pairwise seed into ring elements.
pub fn derive_mask(seed: &PairwiseSeed, length: usize, ring: RingConfig) -> Result<Vec<u64>> {
    if length == 0 {
        return Err(Error::Protocol("mask length must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::from_seed(seed.seed);
    Ok((0..length).map(|_| ring.reduce(rng.next_u64())).collect())
}

/// Shape of a flattened count vector: feature count and per-feature bin count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims {
    bins: Vec<usize>,
}

impl Dims {
    pub fn new(bins: Vec<usize>) -> Self {
        Self { bins }
    }

    pub fn of(counts: &TransitionCounts) -> Self {
        Self::new(counts.bin_counts())
    }

    pub fn features(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn flat_len(&self) -> usize {
        self.bins.iter().map(|n| n * n).sum()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BinsField {
    Uniform(usize),
    PerFeature(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
struct DimsField {
    features: usize,
    n: BinsField,
}

impl Serialize for Dims {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = match self.bins.first() {
            Some(&first) if self.bins.iter().all(|&b| b == first) => BinsField::Uniform(first),
            _ => BinsField::PerFeature(self.bins.clone()),
        };
        DimsField {
            features: self.bins.len(),
            n,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dims {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let field = DimsField::deserialize(d)?;
        let bins = match field.n {
            BinsField::Uniform(n) => vec![n; field.features],
            BinsField::PerFeature(v) if v.len() == field.features => v,
            BinsField::PerFeature(v) => {
                return Err(serde::de::Error::custom(format!(
                    "dims list {} bin counts for {} features",
                    v.len(),
                    field.features
                )))
            }
        };
        Ok(Dims { bins })
    }
}

/// A client's flattened counts with its pairwise masks applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedCountVector {
    pub client_id: ClientId,
    pub dims: Dims,
    pub payload: Vec<u64>,
}

impl MaskedCountVector {
    pub fn digest(&self) -> String {
        digest_elements(&self.payload)
    }

    pub fn to_message(&self, round: u64) -> UploadMessage {
        UploadMessage {
            round,
            client_id: self.client_id.clone(),
            dims: self.dims.clone(),
            payload: self.payload.iter().map(u64::to_string).collect(),
        }
    }
}

/// Wire form of a masked upload. Ring elements travel as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadMessage {
    pub round: u64,
    pub client_id: ClientId,
    pub dims: Dims,
    pub payload: Vec<String>,
}

impl UploadMessage {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_vector(self) -> Result<MaskedCountVector> {
        let payload = self
            .payload
            .iter()
            .map(|s| {
                s.parse::<u64>().map_err(|_| {
                    Error::Protocol(format!(
                        "client {}: payload element {s:?} is not a ring element",
                        self.client_id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if payload.len() != self.dims.flat_len() {
            return Err(Error::Protocol(format!(
                "client {}: payload length {} does not match dims ({})",
                self.client_id,
                payload.len(),
                self.dims.flat_len()
            )));
        }
        Ok(MaskedCountVector {
            client_id: self.client_id,
            dims: self.dims,
            payload,
        })
    }
}

/// SHA-256 over the little-endian encoding of a ring vector, hex encoded.
pub fn digest_elements(elements: &[u64]) -> String {
    let mut h = Sha256::new();
    for e in elements {
        h.update(e.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn check_roster(all_clients: &[ClientId]) -> Result<BTreeSet<&ClientId>> {
    let roster: BTreeSet<&ClientId> = all_clients.iter().collect();
    if roster.len() != all_clients.len() {
        return Err(Error::Protocol("client roster contains duplicate ids".into()));
    }
    Ok(roster)
}

/// Lifts `counts` into the ring and adds `+mask` for every higher peer and
/// `-mask` for every lower peer.
pub fn mask_counts(
    counts: &TransitionCounts,
    self_id: &ClientId,
    all_clients: &[ClientId],
    seeds: &[PairwiseSeed],
    ring: RingConfig,
) -> Result<MaskedCountVector> {
    let roster = check_roster(all_clients)?;
    if !roster.contains(self_id) {
        return Err(Error::Protocol(format!(
            "client {self_id} is not in the federation roster"
        )));
    }
    let mut payload: Vec<u64> = counts.flatten().into_iter().map(|c| ring.reduce(c)).collect();
    if payload.is_empty() {
        return Err(Error::Protocol("cannot mask an empty count vector".into()));
    }
    for peer in roster.into_iter().filter(|p| *p != self_id) {
        let seed = seeds
            .iter()
            .find(|s| s.involves(self_id) && s.involves(peer))
            .ok_or_else(|| {
                Error::Protocol(format!("missing pairwise seed for clients {self_id} and {peer}"))
            })?;
        let mask = derive_mask(seed, payload.len(), ring)?;
        let add = self_id < peer;
        for (p, m) in payload.iter_mut().zip(&mask) {
            *p = if add { ring.add(*p, *m) } else { ring.sub(*p, *m) };
        }
    }
    Ok(MaskedCountVector {
        client_id: self_id.clone(),
        dims: Dims::of(counts),
        payload,
    })
}

/// Sums one masked vector per registered client and recovers the plaintext total.
pub fn aggregate(
    vectors: &[MaskedCountVector],
    expected_clients: &[ClientId],
    ring: RingConfig,
) -> Result<TransitionCounts> {
    let roster = check_roster(expected_clients)?;
    let mut seen = BTreeSet::new();
    for v in vectors {
        if !roster.contains(&v.client_id) {
            return Err(Error::Protocol(format!(
                "upload from unregistered client {}",
                v.client_id
            )));
        }
        if !seen.insert(&v.client_id) {
            return Err(Error::Protocol(format!(
                "duplicate upload from client {}",
                v.client_id
            )));
        }
    }
    if let Some(missing) = roster.iter().find(|id| !seen.contains(*id)) {
        return Err(Error::Protocol(format!(
            "no upload from client {missing}; aborting round"
        )));
    }
    let first = vectors
        .first()
        .ok_or_else(|| Error::Protocol("nothing to aggregate".into()))?;
    let dims = first.dims.clone();
    let len = dims.flat_len();
    let mut sum = vec![0u64; len];
    for v in vectors {
        if v.dims != dims || v.payload.len() != len {
            return Err(Error::Protocol(format!(
                "client {} uploaded a vector of mismatched shape",
                v.client_id
            )));
        }
        for (s, &x) in sum.iter_mut().zip(&v.payload) {
            if x >= ring.modulus() {
                return Err(Error::Protocol(format!(
                    "client {} uploaded an element outside the ring",
                    v.client_id
                )));
            }
            *s = ring.add(*s, x);
        }
    }
    let half = ring.modulus() / 2;
    if let Some((index, &value)) = sum.iter().enumerate().find(|(_, &x)| x >= half) {
        return Err(Error::Wraparound { index, value });
    }
    TransitionCounts::unflatten(dims.bins(), &sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transitions::CountMatrix;

    fn ids(k: usize) -> Vec<ClientId> {
        (0..k).map(|i| ClientId(format!("c{i}"))).collect()
    }

    fn counts(rows: Vec<Vec<u64>>) -> TransitionCounts {
        TransitionCounts::from_matrices(vec![CountMatrix::from_rows(rows).unwrap()])
    }

    #[test]
    fn ring_construction() {
        assert_eq!(RingConfig::default().modulus(), 1 << 61);
        assert_eq!(RingConfig::from_modulus(1 << 61).unwrap().bits(), 61);
        assert!(RingConfig::from_modulus(1000).is_err());
        assert!(RingConfig::new(64).is_err());
        assert!(RingConfig::new(4).is_err());
        let r = RingConfig::new(8).unwrap();
        assert_eq!(r.add(250, 10), 4);
        assert_eq!(r.sub(3, 5), 254);
    }

    #[test]
    fn mask_is_deterministic_and_seed_dependent() {
        let book = SeedBook::provision(7, &ids(3)).unwrap();
        let s01 = &book.seeds_for(&ClientId::from("c0"))[0];
        let ring = RingConfig::default();
        let a = derive_mask(s01, 16, ring).unwrap();
        assert_eq!(a, derive_mask(s01, 16, ring).unwrap());
        assert!(a.iter().all(|&x| x < ring.modulus()));
        let s12 = book
            .seeds_for(&ClientId::from("c2"))
            .into_iter()
            .find(|s| s.involves(&ClientId::from("c1")))
            .unwrap();
        assert_ne!(a, derive_mask(&s12, 16, ring).unwrap());
        assert!(derive_mask(s01, 0, ring).is_err());
    }

    #[test]
    fn provisioning_is_deterministic_and_complete() {
        let a = SeedBook::provision(1, &ids(5)).unwrap();
        let b = SeedBook::provision(1, &ids(5)).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.seeds_for(&ClientId::from("c3")).len(), 4);
        assert_eq!(
            a.seeds_for(&ClientId::from("c0")),
            b.seeds_for(&ClientId::from("c0"))
        );
        let c = SeedBook::provision(2, &ids(5)).unwrap();
        assert_ne!(
            a.seeds_for(&ClientId::from("c0"))[0].seed_bytes(),
            c.seeds_for(&ClientId::from("c0"))[0].seed_bytes()
        );
    }

    #[test]
    fn single_client_payload_is_plaintext() {
        let c = counts(vec![vec![1, 2], vec![3, 4]]);
        let id = ClientId::from("solo");
        let v = mask_counts(&c, &id, &[id.clone()], &[], RingConfig::default()).unwrap();
        assert_eq!(v.payload, vec![1, 2, 3, 4]);
    }

    #[test]
    fn two_clients_cancel() {
        let roster = ids(2);
        let book = SeedBook::provision(99, &roster).unwrap();
        let ring = RingConfig::default();
        let c1 = counts(vec![vec![5, 0], vec![1, 2]]);
        let c2 = counts(vec![vec![0, 7], vec![3, 3]]);
        let v1 = mask_counts(&c1, &roster[0], &roster, &book.seeds_for(&roster[0]), ring).unwrap();
        let v2 = mask_counts(&c2, &roster[1], &roster, &book.seeds_for(&roster[1]), ring).unwrap();
        assert_ne!(v1.payload, c1.flatten());
        let summed: Vec<u64> = v1
            .payload
            .iter()
            .zip(&v2.payload)
            .map(|(a, b)| ring.add(*a, *b))
            .collect();
        assert_eq!(summed, vec![5, 7, 4, 5]);
        let agg = aggregate(&[v2, v1], &roster, ring).unwrap();
        assert_eq!(agg.flatten(), vec![5, 7, 4, 5]);
    }

    #[test]
    fn sum_of_indicators() {
        let roster = ids(3);
        let book = SeedBook::provision(3, &roster).unwrap();
        let ring = RingConfig::default();
        let c = counts(vec![vec![0, 1], vec![0, 0]]);
        let vs: Vec<_> = roster
            .iter()
            .map(|id| mask_counts(&c, id, &roster, &book.seeds_for(id), ring).unwrap())
            .collect();
        let agg = aggregate(&vs, &roster, ring).unwrap();
        assert_eq!(agg.feature(0).get(0, 1), 3);
        assert_eq!(agg.total_transitions(), 3);

        let zero = TransitionCounts::zeros(&[2]);
        let vs: Vec<_> = roster
            .iter()
            .map(|id| mask_counts(&zero, id, &roster, &book.seeds_for(id), ring).unwrap())
            .collect();
        assert_eq!(aggregate(&vs, &roster, ring).unwrap(), zero);
    }

    #[test]
    fn protocol_errors() {
        let roster = ids(3);
        let mut book = SeedBook::provision(3, &roster).unwrap();
        let ring = RingConfig::default();
        let c = counts(vec![vec![1, 1], vec![1, 1]]);
        let vs: Vec<_> = roster
            .iter()
            .map(|id| mask_counts(&c, id, &roster, &book.seeds_for(id), ring).unwrap())
            .collect();

        // missing client
        assert!(matches!(aggregate(&vs[..2], &roster, ring), Err(Error::Protocol(_))));
        // duplicate
        let dup = vec![vs[0].clone(), vs[0].clone(), vs[1].clone()];
        assert!(matches!(aggregate(&dup, &roster, ring), Err(Error::Protocol(_))));
        // length mismatch
        let mut short = vs.clone();
        short[1].payload.pop();
        assert!(matches!(aggregate(&short, &roster, ring), Err(Error::Protocol(_))));
        // not in roster
        let stranger = ClientId::from("zz");
        assert!(matches!(
            mask_counts(&c, &stranger, &roster, &[], ring),
            Err(Error::Protocol(_))
        ));
        // missing seed
        book.remove(&roster[0], &roster[2]);
        assert!(matches!(
            mask_counts(&c, &roster[0], &roster, &book.seeds_for(&roster[0]), ring),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn wraparound_is_detected() {
        let ring = RingConfig::new(8).unwrap();
        let roster = ids(2);
        let c = counts(vec![vec![100, 0], vec![0, 0]]);
        let book = SeedBook::provision(0, &roster).unwrap();
        let vs: Vec<_> = roster
            .iter()
            .map(|id| mask_counts(&c, id, &roster, &book.seeds_for(id), ring).unwrap())
            .collect();
        // 200 >= 128
        assert!(matches!(
            aggregate(&vs, &roster, ring),
            Err(Error::Wraparound { index: 0, value: 200 })
        ));
    }

    #[test]
    fn wire_message_round_trip() {
        let roster = ids(2);
        let book = SeedBook::provision(5, &roster).unwrap();
        let c = TransitionCounts::zeros(&[3, 2]);
        let v = mask_counts(&c, &roster[0], &roster, &book.seeds_for(&roster[0]), RingConfig::default())
            .unwrap();
        let msg = v.to_message(1);
        let text = msg.to_json().unwrap();
        assert!(text.contains(r#""dims":{"features":2,"n":[3,2]}"#), "{text}");
        assert!(text.contains(r#""payload":[""#));
        let back = UploadMessage::from_json(&text).unwrap().into_vector().unwrap();
        assert_eq!(back, v);

        let uniform = TransitionCounts::zeros(&[4, 4]);
        let u = mask_counts(&uniform, &roster[1], &roster, &book.seeds_for(&roster[1]), RingConfig::default())
            .unwrap()
            .to_message(0)
            .to_json()
            .unwrap();
        assert!(u.contains(r#""dims":{"features":2,"n":4}"#), "{u}");

        let mut bad = msg.clone();
        bad.payload[0] = "-1".into();
        assert!(matches!(bad.into_vector(), Err(Error::Protocol(_))));
    }
}
