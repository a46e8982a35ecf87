//! Pairwise channels among the three servers with exact byte and round
//! accounting.
//!
//! Frames are length-prefixed: a little-endian u32 covering everything
//! after itself (message type byte, phase byte, payload). Two transports
//! implement the same blocking contract: in-process loopback channels for
//! tests and plain TCP for deployments. Channels are private and
//! authentic by model, so nothing is encrypted.
//!
//! Accounting rules used by the budget tests:
//! - Bytes are recorded at the sender, keyed by (from, to, phase, tag).
//!   `Tag::Gate` marks per-gate traffic; `Tag::Amortized` marks hashes,
//!   proofs, and anything whose cost vanishes over large batches.
//! - `round_barrier` counts schedule steps per phase and per role. All
//!   three servers run the same protocol code, so their counters must
//!   agree at session end.
//! - Deferred data (values queued during gate evaluation and flushed at
//!   verification time) is tagged with the phase it logically belongs
//!   to; the flush round is counted where the schedule places it.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::crypto::transcript_hash;
use crate::{Error, Result, Role};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const PROTOCOL_VERSION: u16 = 1;

/// Which protocol phase a message or round belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Prep = 0,
    Online = 1,
    Verify = 2,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Prep, Phase::Online, Phase::Verify];

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Phase::Prep),
            1 => Ok(Phase::Online),
            2 => Ok(Phase::Verify),
            _ => Err(Error::Serial(format!("bad phase byte {v}"))),
        }
    }
}

/// Separates per-gate traffic from amortizable traffic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Gate = 0,
    Amortized = 1,
}

/// Closed registry of frame types.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsgType {
    Hello = 0,
    Abort = 1,
    /// Vectors of ring elements (masked values, shares, openings of sums).
    RingVec = 2,
    /// 32-byte digests, possibly several.
    Digest = 3,
    /// Commitment digests.
    Commit = 4,
    /// Commitment openings.
    Open = 5,
    /// Distributed proof material: masked products, proof shares, queries.
    ZkMsg = 6,
    /// Garbled tables, decoding information, label commitments.
    GcMaterial = 7,
    /// Opened wire labels.
    GcLabels = 8,
    /// Outsourced-client traffic.
    Client = 9,
    /// Miscellaneous control (labelled digest lists on mismatch, etc.).
    Control = 10,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self> {
        use MsgType::*;
        Ok(match v {
            0 => Hello,
            1 => Abort,
            2 => RingVec,
            3 => Digest,
            4 => Commit,
            5 => Open,
            6 => ZkMsg,
            7 => GcMaterial,
            8 => GcLabels,
            9 => Client,
            10 => Control,
            _ => return Err(Error::Serial(format!("unknown message type {v}"))),
        })
    }
}

/// One decoded frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub phase: Phase,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut f = Vec::with_capacity(6 + self.payload.len());
        f.extend_from_slice(&((self.payload.len() + 2) as u32).to_le_bytes());
        f.push(self.msg_type as u8);
        f.push(self.phase as u8);
        f.extend_from_slice(&self.payload);
        f
    }

    /// Decodes a full frame (length prefix included).
    pub fn decode(frame: &[u8]) -> Result<Self> {
        if frame.len() < 6 {
            return Err(Error::Serial("frame shorter than header".into()));
        }
        let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
        if len < 2 || frame.len() != 4 + len {
            return Err(Error::Serial("frame length mismatch".into()));
        }
        Ok(WireMessage {
            msg_type: MsgType::from_u8(frame[4])?,
            phase: Phase::from_u8(frame[5])?,
            payload: frame[6..].to_vec(),
        })
    }
}

/// Immutable view of the counters.
#[derive(Clone, Debug, Default)]
pub struct Stats {
    /// Payload bytes keyed by (from, to, phase, tag).
    payload: BTreeMap<(u8, u8, u8, u8), u64>,
    /// Whole-frame bytes (header included) keyed by (from, to, phase).
    frames: BTreeMap<(u8, u8, u8), u64>,
    /// Message counts keyed by (from, to, phase).
    msgs: BTreeMap<(u8, u8, u8), u64>,
    /// Schedule steps per [phase][role].
    rounds: [[u64; 3]; 3],
}

impl Stats {
    pub fn payload_between(&self, from: Role, to: Role, phase: Phase, tag: Tag) -> u64 {
        *self
            .payload
            .get(&(from.index() as u8, to.index() as u8, phase as u8, tag as u8))
            .unwrap_or(&0)
    }

    /// Total payload bytes across all ordered pairs for (phase, tag).
    pub fn payload_total(&self, phase: Phase, tag: Tag) -> u64 {
        self.payload
            .iter()
            .filter(|((_, _, p, t), _)| *p == phase as u8 && *t == tag as u8)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn frame_bytes_total(&self) -> u64 {
        self.frames.values().sum()
    }

    pub fn messages_total(&self, phase: Phase) -> u64 {
        self.msgs
            .iter()
            .filter(|((_, _, p), _)| *p == phase as u8)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn rounds_of(&self, phase: Phase, role: Role) -> u64 {
        self.rounds[phase as usize][role.index()]
    }

    /// The common round count for a phase; errors if the servers disagree.
    pub fn rounds(&self, phase: Phase) -> Result<u64> {
        let r = self.rounds[phase as usize];
        if r[0] != r[1] || r[1] != r[2] {
            return Err(Error::Abort(format!(
                "round counters diverged in {phase:?}: {r:?}"
            )));
        }
        Ok(r[0])
    }

    /// Difference `self - earlier`, for measuring one protocol in
    /// isolation inside a longer session.
    pub fn since(&self, earlier: &Stats) -> Stats {
        let mut out = self.clone();
        for (k, v) in &earlier.payload {
            *out.payload.entry(*k).or_insert(0) -= v;
        }
        for (k, v) in &earlier.frames {
            *out.frames.entry(*k).or_insert(0) -= v;
        }
        for (k, v) in &earlier.msgs {
            *out.msgs.entry(*k).or_insert(0) -= v;
        }
        for p in 0..3 {
            for r in 0..3 {
                out.rounds[p][r] -= earlier.rounds[p][r];
            }
        }
        out
    }

    /// Flat key=value lines for report files.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for ((f, t, p, tag), v) in &self.payload {
            let tag = if *tag == 0 { "gate" } else { "amortized" };
            out.push_str(&format!(
                "payload_bytes.p{f}.p{t}.phase{p}.{tag}={v}\n"
            ));
        }
        for ((f, t, p), v) in &self.frames {
            out.push_str(&format!("frame_bytes.p{f}.p{t}.phase{p}={v}\n"));
        }
        for (p, phase) in Phase::ALL.iter().enumerate() {
            for r in 0..3 {
                out.push_str(&format!(
                    "rounds.{:?}.p{r}={}\n",
                    phase, self.rounds[p][r]
                ));
            }
        }
        out.to_lowercase()
    }
}

/// Thread-safe counter registry. One per process; the loopback mesh
/// shares one among all three servers so tests see global totals.
#[derive(Default)]
pub struct StatsRegistry {
    inner: Mutex<Stats>,
}

impl StatsRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(StatsRegistry::default())
    }

    fn record_send(&self, from: Role, to: Role, phase: Phase, tag: Tag, payload: usize, frame: usize) {
        let mut s = self.inner.lock().unwrap();
        *s.payload
            .entry((from.index() as u8, to.index() as u8, phase as u8, tag as u8))
            .or_insert(0) += payload as u64;
        *s.frames
            .entry((from.index() as u8, to.index() as u8, phase as u8))
            .or_insert(0) += frame as u64;
        *s.msgs
            .entry((from.index() as u8, to.index() as u8, phase as u8))
            .or_insert(0) += 1;
    }

    fn record_round(&self, phase: Phase, role: Role) {
        self.inner.lock().unwrap().rounds[phase as usize][role.index()] += 1;
    }

    pub fn snapshot(&self) -> Stats {
        self.inner.lock().unwrap().clone()
    }
}

enum Link {
    Loop {
        tx: Sender<Vec<u8>>,
        rx: Receiver<Vec<u8>>,
    },
    Tcp(TcpStream),
}

impl Link {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        match self {
            Link::Loop { tx, .. } => tx
                .send(frame.to_vec())
                .map_err(|_| Error::Abort("peer channel closed".into())),
            Link::Tcp(stream) => {
                stream.write_all(frame)?;
                Ok(())
            }
        }
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        match self {
            Link::Loop { rx, .. } => match rx.recv_timeout(timeout) {
                Ok(f) => Ok(f),
                Err(RecvTimeoutError::Timeout) => {
                    Err(Error::Abort("timeout waiting for peer".into()))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    Err(Error::Abort("peer channel closed".into()))
                }
            },
            Link::Tcp(stream) => {
                let mut len = [0u8; 4];
                read_exact_mapped(stream, &mut len)?;
                let n = u32::from_le_bytes(len) as usize;
                if n < 2 || n > 1 << 30 {
                    return Err(Error::Serial(format!("implausible frame length {n}")));
                }
                let mut rest = vec![0u8; n];
                read_exact_mapped(stream, &mut rest)?;
                let mut frame = len.to_vec();
                frame.extend_from_slice(&rest);
                Ok(frame)
            }
        }
    }
}

fn read_exact_mapped(stream: &mut TcpStream, buf: &mut [u8]) -> Result<()> {
    stream.read_exact(buf).map_err(|e| {
        if matches!(
            e.kind(),
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
        ) {
            Error::Abort("timeout waiting for peer".into())
        } else {
            Error::Abort(format!("connection lost: {e}"))
        }
    })
}

/// One direction-pair link to a single peer.
pub struct Channel {
    me: Role,
    peer: Role,
    link: Link,
    stats: Arc<StatsRegistry>,
    timeout: Duration,
}

impl Channel {
    fn send(&mut self, msg_type: MsgType, phase: Phase, tag: Tag, payload: &[u8]) -> Result<()> {
        let frame = WireMessage {
            msg_type,
            phase,
            payload: payload.to_vec(),
        }
        .encode();
        self.stats
            .record_send(self.me, self.peer, phase, tag, payload.len(), frame.len());
        self.link.send_frame(&frame)
    }

    fn recv_any(&mut self) -> Result<WireMessage> {
        WireMessage::decode(&self.link.recv_frame(self.timeout)?)
    }
}

/// A server's view of the full mesh: one channel to each peer.
pub struct Net {
    pub me: Role,
    chans: [Option<Channel>; 3],
    pub stats: Arc<StatsRegistry>,
    abort_sent: bool,
}

impl Net {
    fn chan(&mut self, peer: Role) -> &mut Channel {
        self.chans[peer.index()]
            .as_mut()
            .unwrap_or_else(|| panic!("{} has no channel to {}", self.me, peer))
    }

    pub fn send(
        &mut self,
        to: Role,
        msg_type: MsgType,
        phase: Phase,
        tag: Tag,
        payload: &[u8],
    ) -> Result<()> {
        self.chan(to).send(msg_type, phase, tag, payload)
    }

    /// Receives the next frame from `from`, which must carry the expected
    /// type and phase. An incoming abort notice or any desync is
    /// converted to an abort error after notifying the third server.
    pub fn recv(&mut self, from: Role, msg_type: MsgType, phase: Phase) -> Result<Vec<u8>> {
        let msg = self.chan(from).recv_any()?;
        if msg.msg_type == MsgType::Abort {
            let reason = String::from_utf8_lossy(&msg.payload).into_owned();
            self.broadcast_abort(&format!("peer {from} aborted: {reason}"));
            return Err(Error::Abort(format!("peer {from} aborted: {reason}")));
        }
        if msg.msg_type != msg_type || msg.phase != phase {
            let reason = format!(
                "desync with {from}: expected {msg_type:?}/{phase:?}, got {:?}/{:?}",
                msg.msg_type, msg.phase
            );
            self.broadcast_abort(&reason);
            return Err(Error::Abort(reason));
        }
        Ok(msg.payload)
    }

    /// Deadlock-free bidirectional swap: the lower role sends first.
    pub fn exchange(
        &mut self,
        with: Role,
        msg_type: MsgType,
        phase: Phase,
        tag: Tag,
        payload: &[u8],
    ) -> Result<Vec<u8>> {
        if self.me.index() < with.index() {
            self.send(with, msg_type, phase, tag, payload)?;
            self.recv(with, msg_type, phase)
        } else {
            let got = self.recv(with, msg_type, phase)?;
            self.send(with, msg_type, phase, tag, payload)?;
            Ok(got)
        }
    }

    /// Marks one synchronous schedule step in `phase`. Purely local: all
    /// servers execute the same schedule, so counters stay aligned.
    pub fn round_barrier(&self, phase: Phase) {
        self.stats.record_round(phase, self.me);
    }

    /// Best-effort abort notice to both peers. Idempotent.
    pub fn broadcast_abort(&mut self, reason: &str) {
        if self.abort_sent {
            return;
        }
        self.abort_sent = true;
        for peer in self.me.peers() {
            if self.chans[peer.index()].is_some() {
                let _ = self.chan(peer).send(
                    MsgType::Abort,
                    Phase::Verify,
                    Tag::Amortized,
                    reason.as_bytes(),
                );
            }
        }
    }

    /// Raises a local abort: notifies peers, then returns the error.
    pub fn abort(&mut self, reason: impl Into<String>) -> Error {
        let reason = reason.into();
        self.broadcast_abort(&reason);
        Error::Abort(reason)
    }
}

/// Session parameters pinned at connection time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HelloInfo {
    pub version: u16,
    pub ell: u8,
    pub frac_bits: u8,
    pub params_digest: [u8; 32],
}

impl HelloInfo {
    fn to_bytes(self) -> Vec<u8> {
        let mut out = self.version.to_le_bytes().to_vec();
        out.push(self.ell);
        out.push(self.frac_bits);
        out.extend_from_slice(&self.params_digest);
        out
    }
}

/// Exchanges Hello frames with both peers and rejects any divergence in
/// protocol version or session parameters.
pub fn handshake(net: &mut Net, info: HelloInfo) -> Result<()> {
    let mine = info.to_bytes();
    for peer in net.me.peers() {
        let theirs = net.exchange(peer, MsgType::Hello, Phase::Prep, Tag::Amortized, &mine)?;
        if theirs != mine {
            return Err(Error::Config(format!(
                "handshake mismatch with {peer}: session parameters differ"
            )));
        }
    }
    Ok(())
}

/// Builds an in-process mesh over mpsc channels. All three nets share
/// one stats registry, so a single snapshot holds global totals.
pub fn loopback_mesh(timeout: Duration) -> ([Net; 3], Arc<StatsRegistry>) {
    let stats = StatsRegistry::new();
    let mut slots: [[Option<Channel>; 3]; 3] = Default::default();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let (txa, rxb) = std::sync::mpsc::channel();
            let (txb, rxa) = std::sync::mpsc::channel();
            let (a, b) = (Role::from_index(i), Role::from_index(j));
            slots[i][j] = Some(Channel {
                me: a,
                peer: b,
                link: Link::Loop { tx: txa, rx: rxa },
                stats: stats.clone(),
                timeout,
            });
            slots[j][i] = Some(Channel {
                me: b,
                peer: a,
                link: Link::Loop { tx: txb, rx: rxb },
                stats: stats.clone(),
                timeout,
            });
        }
    }
    let nets = slots.map(|mut row| {
        let me = row
            .iter()
            .flatten()
            .next()
            .map(|c| c.me)
            .expect("mesh row has channels");
        Net {
            me,
            chans: [row[0].take(), row[1].take(), row[2].take()],
            stats: stats.clone(),
            abort_sent: false,
        }
    });
    (nets, stats)
}

/// Builds this server's TCP mesh. For each pair, the lower role listens
/// and the higher role dials; the dialer identifies itself with one role
/// byte before anything else. `listener` carries this server's bound
/// socket (P2 never accepts, so it may pass None).
pub fn tcp_mesh(
    me: Role,
    listener: Option<TcpListener>,
    addrs: &[String; 3],
    timeout: Duration,
) -> Result<Net> {
    let stats = StatsRegistry::new();
    let mut chans: [Option<Channel>; 3] = Default::default();
    let expect_inbound = match me {
        Role::P0 => vec![Role::P1, Role::P2],
        Role::P1 => vec![Role::P2],
        Role::P2 => vec![],
    };
    let dial_to: Vec<Role> = Role::ALL
        .into_iter()
        .filter(|p| p.index() < me.index())
        .collect();

    for peer in dial_to {
        let stream = dial_with_retry(&addrs[peer.index()], timeout)?;
        let mut stream = stream;
        stream.write_all(&[me.index() as u8])?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        chans[peer.index()] = Some(Channel {
            me,
            peer,
            link: Link::Tcp(stream),
            stats: stats.clone(),
            timeout,
        });
    }
    if !expect_inbound.is_empty() {
        let listener = listener.ok_or_else(|| {
            Error::Config(format!("{me} must listen on {}", addrs[me.index()]))
        })?;
        for _ in 0..expect_inbound.len() {
            let (mut stream, _) = listener.accept()?;
            let mut id = [0u8; 1];
            stream.read_exact(&mut id)?;
            let peer = Role::from_index(id[0] as usize);
            if !expect_inbound.contains(&peer) || chans[peer.index()].is_some() {
                return Err(Error::Config(format!("unexpected inbound peer {peer}")));
            }
            stream.set_read_timeout(Some(timeout))?;
            stream.set_nodelay(true)?;
            chans[peer.index()] = Some(Channel {
                me,
                peer,
                link: Link::Tcp(stream),
                stats: stats.clone(),
                timeout,
            });
        }
    }
    Ok(Net {
        me,
        chans,
        stats,
        abort_sent: false,
    })
}

fn dial_with_retry(addr: &str, timeout: Duration) -> Result<TcpStream> {
    let deadline = std::time::Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if std::time::Instant::now() >= deadline {
                    return Err(Error::Abort(format!("cannot reach {addr}: {e}")));
                }
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

/// Batched consistency checking: both ends enqueue what they sent or
/// expect under agreed labels, and one 32-byte digest per direction
/// settles the whole epoch. On mismatch the two sides exchange labelled
/// digests to name the failing items, then abort.
#[derive(Default)]
pub struct CheckQueue {
    items: BTreeMap<usize, Vec<(String, Vec<u8>)>>,
}

impl CheckQueue {
    pub fn new() -> Self {
        CheckQueue::default()
    }

    pub fn enqueue(&mut self, peer: Role, label: impl Into<String>, bytes: Vec<u8>) {
        self.items
            .entry(peer.index())
            .or_default()
            .push((label.into(), bytes));
    }

    pub fn is_empty(&self) -> bool {
        self.items.values().all(|v| v.is_empty())
    }

    /// Exchanges epoch digests with every peer that has queued items.
    /// The caller places the round barrier.
    pub fn flush(&mut self, net: &mut Net) -> Result<()> {
        let batches: Vec<(Role, Vec<(String, Vec<u8>)>)> = std::mem::take(&mut self.items)
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, v)| (Role::from_index(i), v))
            .collect();
        for (peer, items) in batches {
            let digest = transcript_hash(
                items
                    .iter()
                    .flat_map(|(l, b)| [l.as_bytes().to_vec(), b.clone()]),
            );
            let theirs = net.exchange(peer, MsgType::Digest, Phase::Verify, Tag::Amortized, &digest)?;
            if theirs == digest {
                continue;
            }
            // Identify the failing labels, then abort.
            let mut detail = Vec::new();
            for (label, bytes) in &items {
                detail.extend_from_slice(&(label.len() as u16).to_le_bytes());
                detail.extend_from_slice(label.as_bytes());
                detail.extend_from_slice(&transcript_hash([bytes]));
            }
            let their_detail =
                net.exchange(peer, MsgType::Control, Phase::Verify, Tag::Amortized, &detail)?;
            let mine = parse_labelled_digests(&detail)?;
            let theirs = parse_labelled_digests(&their_detail)?;
            let mut bad: Vec<String> = Vec::new();
            for (i, (label, d)) in mine.iter().enumerate() {
                match theirs.get(i) {
                    Some((l2, d2)) if l2 == label && d2 == d => {}
                    _ => bad.push(label.clone()),
                }
            }
            if theirs.len() != mine.len() {
                bad.push(format!("(item count {} vs {})", mine.len(), theirs.len()));
            }
            return Err(net.abort(format!(
                "consistency check with {peer} failed at: {}",
                bad.join(", ")
            )));
        }
        Ok(())
    }
}

fn parse_labelled_digests(bytes: &[u8]) -> Result<Vec<(String, [u8; 32])>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if i + 2 > bytes.len() {
            return Err(Error::Serial("truncated label length".into()));
        }
        let n = u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap()) as usize;
        i += 2;
        if i + n + 32 > bytes.len() {
            return Err(Error::Serial("truncated labelled digest".into()));
        }
        let label = String::from_utf8_lossy(&bytes[i..i + n]).into_owned();
        i += n;
        let digest: [u8; 32] = bytes[i..i + 32].try_into().unwrap();
        i += 32;
        out.push((label, digest));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::RingElem;

    fn short() -> Duration {
        Duration::from_secs(5)
    }

    #[test]
    fn frame_round_trip() {
        let m = WireMessage {
            msg_type: MsgType::RingVec,
            phase: Phase::Online,
            payload: vec![1, 2, 3],
        };
        let f = m.encode();
        assert_eq!(f.len(), 4 + 2 + 3);
        assert_eq!(u32::from_le_bytes(f[..4].try_into().unwrap()), 5);
        assert_eq!(WireMessage::decode(&f).unwrap(), m);
        assert!(WireMessage::decode(&f[..5]).is_err());
        let mut bad = f.clone();
        bad[4] = 99;
        assert!(WireMessage::decode(&bad).is_err());
    }

    #[test]
    fn loopback_send_counts_bytes() {
        let ([mut n0, mut n1, _n2], stats) = loopback_mesh(short());
        let payload: Vec<u8> = (0..3)
            .flat_map(|i| RingElem::new(i, 64).to_le_bytes())
            .collect();
        n0.send(Role::P1, MsgType::RingVec, Phase::Online, Tag::Gate, &payload)
            .unwrap();
        let got = n1.recv(Role::P0, MsgType::RingVec, Phase::Online).unwrap();
        assert_eq!(got, payload);
        let s = stats.snapshot();
        assert_eq!(s.payload_between(Role::P0, Role::P1, Phase::Online, Tag::Gate), 24);
        assert_eq!(s.frame_bytes_total(), 24 + 6);
        assert_eq!(s.messages_total(Phase::Online), 1);
    }

    #[test]
    fn recv_type_mismatch_aborts() {
        let ([mut n0, mut n1, mut n2], _) = loopback_mesh(short());
        n0.send(Role::P1, MsgType::Digest, Phase::Online, Tag::Gate, b"xx")
            .unwrap();
        let err = n1.recv(Role::P0, MsgType::RingVec, Phase::Online).unwrap_err();
        assert!(matches!(err, Error::Abort(_)));
        // The third server is notified.
        let err2 = n2.recv(Role::P1, MsgType::RingVec, Phase::Online).unwrap_err();
        assert!(matches!(err2, Error::Abort(_)), "got {err2:?}");
        // P0 also learns (P1 broadcast to both peers).
        let err0 = n0.recv(Role::P1, MsgType::RingVec, Phase::Online).unwrap_err();
        assert!(matches!(err0, Error::Abort(_)));
    }

    #[test]
    fn exchange_is_symmetric() {
        let ([n0, n1, n2], _) = loopback_mesh(short());
        let handles: Vec<_> = [n0, n1, n2]
            .into_iter()
            .map(|mut net| {
                std::thread::spawn(move || {
                    let mine = vec![net.me.index() as u8; 4];
                    let mut got = Vec::new();
                    for peer in net.me.peers() {
                        got.push(
                            net.exchange(peer, MsgType::RingVec, Phase::Online, Tag::Gate, &mine)
                                .unwrap(),
                        );
                    }
                    got
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(results[0], vec![vec![1u8; 4], vec![2u8; 4]]);
        assert_eq!(results[1], vec![vec![0u8; 4], vec![2u8; 4]]);
        assert_eq!(results[2], vec![vec![0u8; 4], vec![1u8; 4]]);
    }

    #[test]
    fn round_counters() {
        let ([n0, n1, n2], stats) = loopback_mesh(short());
        for n in [&n0, &n1, &n2] {
            n.round_barrier(Phase::Online);
            n.round_barrier(Phase::Verify);
            n.round_barrier(Phase::Verify);
        }
        let s = stats.snapshot();
        assert_eq!(s.rounds(Phase::Online).unwrap(), 1);
        assert_eq!(s.rounds(Phase::Verify).unwrap(), 2);
        assert_eq!(s.rounds(Phase::Prep).unwrap(), 0);
        n0.round_barrier(Phase::Online);
        assert!(stats.snapshot().rounds(Phase::Online).is_err());
    }

    #[test]
    fn check_queue_agreement_and_mismatch() {
        // Agreement: 1000 items cost 32 bytes per direction.
        let ([n1x, n2x], stats) = {
            let ([_, a, b], s) = loopback_mesh(short());
            ([a, b], s)
        };
        let t1 = std::thread::spawn(move || {
            let mut net = n1x;
            let mut q = CheckQueue::new();
            for i in 0..1000u32 {
                q.enqueue(Role::P2, format!("item.{i}"), i.to_le_bytes().to_vec());
            }
            q.flush(&mut net).unwrap();
            net
        });
        let t2 = std::thread::spawn(move || {
            let mut net = n2x;
            let mut q = CheckQueue::new();
            for i in 0..1000u32 {
                q.enqueue(Role::P1, format!("item.{i}"), i.to_le_bytes().to_vec());
            }
            q.flush(&mut net).unwrap();
            net
        });
        t1.join().unwrap();
        t2.join().unwrap();
        let s = stats.snapshot();
        assert_eq!(s.payload_between(Role::P1, Role::P2, Phase::Verify, Tag::Amortized), 32);
        assert_eq!(s.payload_between(Role::P2, Role::P1, Phase::Verify, Tag::Amortized), 32);

        // One flipped item: both sides abort and the label is named.
        let ([_, n1, n2], _) = loopback_mesh(short());
        let t1 = std::thread::spawn(move || {
            let mut net = n1;
            let mut q = CheckQueue::new();
            q.enqueue(Role::P2, "a", vec![1]);
            q.enqueue(Role::P2, "b", vec![2]);
            q.flush(&mut net).unwrap_err()
        });
        let t2 = std::thread::spawn(move || {
            let mut net = n2;
            let mut q = CheckQueue::new();
            q.enqueue(Role::P1, "a", vec![1]);
            q.enqueue(Role::P1, "b", vec![99]);
            q.flush(&mut net).unwrap_err()
        });
        let e1 = t1.join().unwrap();
        let e2 = t2.join().unwrap();
        for e in [e1, e2] {
            match e {
                Error::Abort(msg) => {
                    assert!(msg.contains('b') && !msg.contains("a,"), "{msg}");
                }
                other => panic!("expected abort, got {other:?}"),
            }
        }
    }

    #[test]
    fn timeout_aborts() {
        let ([_n0, mut n1, _n2], _) = loopback_mesh(Duration::from_millis(50));
        let err = n1.recv(Role::P0, MsgType::RingVec, Phase::Online).unwrap_err();
        assert!(matches!(err, Error::Abort(m) if m.contains("timeout")));
    }

    #[test]
    fn tcp_matches_loopback_payload_stats() {
        // Bind listeners first so dials cannot race the accept loop.
        let l0 = TcpListener::bind("127.0.0.1:0").unwrap();
        let l1 = TcpListener::bind("127.0.0.1:0").unwrap();
        let addrs = [
            l0.local_addr().unwrap().to_string(),
            l1.local_addr().unwrap().to_string(),
            "127.0.0.1:1".to_string(), // P2 never listens
        ];
        let digest = [7u8; 32];
        let info = HelloInfo {
            version: PROTOCOL_VERSION,
            ell: 64,
            frac_bits: 13,
            params_digest: digest,
        };
        let listeners = [Some(l0), Some(l1), None];
        let handles: Vec<_> = listeners
            .into_iter()
            .zip(Role::ALL)
            .map(|(listener, role)| {
                let addrs = addrs.clone();
                std::thread::spawn(move || {
                    let mut net = tcp_mesh(role, listener, &addrs, short()).unwrap();
                    handshake(&mut net, info).unwrap();
                    // Big exchange proves framing handles large payloads
                    // without deadlocking.
                    let mine = vec![role.index() as u8; 1 << 20];
                    for peer in role.peers() {
                        let got = net
                            .exchange(peer, MsgType::RingVec, Phase::Online, Tag::Gate, &mine)
                            .unwrap();
                        assert_eq!(got, vec![peer.index() as u8; 1 << 20]);
                    }
                    net.stats.snapshot()
                })
            })
            .collect();
        let tcp_stats: Vec<Stats> = handles.into_iter().map(|h| h.join().unwrap()).collect();

        // The same workload over loopback.
        let ([n0, n1, n2], loop_stats) = loopback_mesh(short());
        let handles: Vec<_> = [n0, n1, n2]
            .into_iter()
            .map(|mut net| {
                std::thread::spawn(move || {
                    handshake(&mut net, info).unwrap();
                    let mine = vec![net.me.index() as u8; 1 << 20];
                    for peer in net.me.peers() {
                        net.exchange(peer, MsgType::RingVec, Phase::Online, Tag::Gate, &mine)
                            .unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let ls = loop_stats.snapshot();
        for (role, ts) in Role::ALL.iter().zip(&tcp_stats) {
            for peer in role.peers() {
                for phase in Phase::ALL {
                    for tag in [Tag::Gate, Tag::Amortized] {
                        assert_eq!(
                            ts.payload_between(*role, peer, phase, tag),
                            ls.payload_between(*role, peer, phase, tag),
                            "stats diverge for {role}->{peer} {phase:?} {tag:?}"
                        );
                    }
                }
            }
        }

        // Handshake rejects mismatched parameters.
        let ([mut a, mut b, _], _) = loopback_mesh(short());
        let other = HelloInfo {
            ell: 32,
            ..info
        };
        let ta = std::thread::spawn(move || handshake(&mut a, info).unwrap_err());
        let tb = std::thread::spawn(move || {
            // P1 only talks to P0 here; drive just that exchange.
            let theirs = b
                .exchange(Role::P0, MsgType::Hello, Phase::Prep, Tag::Amortized, &other.to_bytes())
                .unwrap();
            assert_ne!(theirs, other.to_bytes());
        });
        let err = ta.join().unwrap();
        assert!(matches!(err, Error::Config(_)));
        tb.join().unwrap();
    }
}
