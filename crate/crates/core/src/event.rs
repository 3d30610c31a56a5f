//! Append-only, hash-chained event log.
//!
//! Every record commits to its predecessor:
//! `hash = SHA-256(prev_hash || canonical(seq, timestamp, kind, payload))`.
//! The canonical encoding is length-prefixed and big-endian, so it is
//! independent of the JSON export format. Record 0 chains from 32 zero bytes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::amount::{Amount, Bps};
use crate::ids::{AccountId, CampaignId, Timestamp};

pub type Hash = [u8; 32];

pub const ZERO_HASH: Hash = [0u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Genesis,
    Rule,
    Create,
    Mint,
    Transfer,
    Kyc,
    CreateCampaign,
    Contribute,
    Finalize,
    Refund,
    Approve,
    Disburse,
    DefineToken,
    Allocate,
    Order,
    Trade,
    Cancel,
    Reject,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Genesis => "GENESIS",
            EventKind::Rule => "RULE",
            EventKind::Create => "CREATE",
            EventKind::Mint => "MINT",
            EventKind::Transfer => "TRANSFER",
            EventKind::Kyc => "KYC",
            EventKind::CreateCampaign => "CREATE_CAMPAIGN",
            EventKind::Contribute => "CONTRIBUTE",
            EventKind::Finalize => "FINALIZE",
            EventKind::Refund => "REFUND",
            EventKind::Approve => "APPROVE",
            EventKind::Disburse => "DISBURSE",
            EventKind::DefineToken => "DEFINE_TOKEN",
            EventKind::Allocate => "ALLOCATE",
            EventKind::Order => "ORDER",
            EventKind::Trade => "TRADE",
            EventKind::Cancel => "CANCEL",
            EventKind::Reject => "REJECT",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A payload value. JSON numbers map to `Int`, strings to `Text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Bool(bool),
    Text(String),
    List(Vec<Value>),
}

impl Value {
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Value::Int(v) => {
                out.push(0x01);
                out.extend_from_slice(&v.to_be_bytes());
            }
            Value::Bool(b) => {
                out.push(0x02);
                out.push(u8::from(*b));
            }
            Value::Text(s) => {
                out.push(0x03);
                encode_str(s, out);
            }
            Value::List(items) => {
                out.push(0x04);
                out.extend_from_slice(&(items.len() as u32).to_be_bytes());
                for item in items {
                    item.encode(out);
                }
            }
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<Amount> for Value {
    fn from(v: Amount) -> Self {
        Value::Int(v.minor_units())
    }
}

impl From<Bps> for Value {
    fn from(v: Bps) -> Self {
        Value::Int(v.value())
    }
}

impl From<&AccountId> for Value {
    fn from(v: &AccountId) -> Self {
        Value::Text(v.as_str().to_string())
    }
}

impl From<&CampaignId> for Value {
    fn from(v: &CampaignId) -> Self {
        Value::Text(v.as_str().to_string())
    }
}

impl<T: Into<Value>> From<Vec<T>> for Value {
    fn from(v: Vec<T>) -> Self {
        Value::List(v.into_iter().map(Into::into).collect())
    }
}

/// Key-value event body. Keys are kept sorted, which makes both the
/// canonical encoding and the JSON export order deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Payload(BTreeMap<String, Value>);

impl Payload {
    pub fn new() -> Self {
        Payload(BTreeMap::new())
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(Value::as_u64)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.0.iter()
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u32).to_be_bytes());
        for (key, value) in &self.0 {
            encode_str(key, out);
            value.encode(out);
        }
    }
}

fn encode_str(s: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    pub payload: Payload,
    #[serde(with = "hex_hash")]
    pub prev_hash: Hash,
    #[serde(with = "hex_hash")]
    pub hash: Hash,
}

impl EventRecord {
    /// Length-prefixed big-endian encoding of the hashed fields.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(self.seq, self.timestamp, self.kind, &self.payload)
    }

    pub fn compute_hash(&self) -> Hash {
        chain_hash(&self.prev_hash, &self.canonical_bytes())
    }

    /// One JSON Lines row, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialize")
    }
}

fn canonical_bytes(seq: u64, timestamp: Timestamp, kind: EventKind, payload: &Payload) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend_from_slice(&timestamp.to_be_bytes());
    encode_str(kind.as_str(), &mut out);
    payload.encode(&mut out);
    out
}

fn chain_hash(prev: &Hash, body: &[u8]) -> Hash {
    let mut hasher = Sha256::new();
    hasher.update(prev);
    hasher.update(body);
    hasher.finalize().into()
}

mod hex_hash {
    use super::*;

    pub fn serialize<S: Serializer>(hash: &Hash, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(hash))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hash, D::Error> {
        let raw = String::deserialize(d)?;
        if raw.len() != 64 || !raw.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(serde::de::Error::custom("hash must be 64 lowercase hex digits"));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(&raw, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

/// Result of an integrity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ChainVerdict {
    Ok,
    BadAt { seq: u64 },
}

impl ChainVerdict {
    pub fn is_ok(self) -> bool {
        self == ChainVerdict::Ok
    }
}

/// Recomputes every link. Reports the first record whose seq, prev-hash,
/// hash or timestamp ordering does not verify.
pub fn verify_chain(records: &[EventRecord]) -> ChainVerdict {
    let mut prev_hash = ZERO_HASH;
    let mut prev_ts = 0;
    for (i, record) in records.iter().enumerate() {
        let i = i as u64;
        if record.seq != i
            || record.prev_hash != prev_hash
            || record.timestamp < prev_ts
            || record.compute_hash() != record.hash
        {
            return ChainVerdict::BadAt { seq: i };
        }
        prev_hash = record.hash;
        prev_ts = record.timestamp;
    }
    ChainVerdict::Ok
}

/// Checks an exported JSON Lines log. Each line must be UTF-8, parse,
/// re-serialize to exactly the same bytes, and chain correctly; the file
/// must end with a newline. Any single-byte mutation therefore fails at
/// the line it lands in.
pub fn check_log(bytes: &[u8]) -> ChainVerdict {
    if bytes.is_empty() {
        return ChainVerdict::Ok;
    }
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    // A well-formed export ends in '\n', leaving one empty tail element.
    let tail = lines.pop();
    let mut prev_hash = ZERO_HASH;
    let mut prev_ts = 0;
    for (i, line) in lines.iter().enumerate() {
        let bad = ChainVerdict::BadAt { seq: i as u64 };
        let Ok(line) = std::str::from_utf8(line) else {
            return bad;
        };
        let Ok(record) = serde_json::from_str::<EventRecord>(line) else {
            return bad;
        };
        if record.to_json_line() != line
            || record.seq != i as u64
            || record.prev_hash != prev_hash
            || record.timestamp < prev_ts
            || record.compute_hash() != record.hash
        {
            return bad;
        }
        prev_hash = record.hash;
        prev_ts = record.timestamp;
    }
    if tail != Some(&b""[..]) {
        return ChainVerdict::BadAt { seq: lines.len() as u64 };
    }
    ChainVerdict::Ok
}

/// The append-only log. Records can only be added through [`EventLog::append`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, timestamp: Timestamp, kind: EventKind, payload: Payload) -> &EventRecord {
        let seq = self.records.len() as u64;
        let prev_hash = self.head_hash();
        if let Some(last) = self.records.last() {
            assert!(timestamp >= last.timestamp, "event timestamps must not decrease");
        }
        let hash = chain_hash(&prev_hash, &canonical_bytes(seq, timestamp, kind, &payload));
        self.records.push(EventRecord {
            seq,
            timestamp,
            kind,
            payload,
            prev_hash,
            hash,
        });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head_hash(&self) -> Hash {
        self.records.last().map_or(ZERO_HASH, |r| r.hash)
    }

    pub fn verify(&self) -> ChainVerdict {
        verify_chain(&self.records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&record.to_json_line());
            out.push('\n');
        }
        out
    }

    /// Parses an export without verifying it; pair with [`verify_chain`].
    pub fn parse_jsonl(text: &str) -> Result<Vec<EventRecord>, serde_json::Error> {
        text.lines().map(serde_json::from_str).collect()
    }
}
