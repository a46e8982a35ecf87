//! Outsourced-party gateway: input sharing and output reconstruction
//! for a client that holds no session keys and talks to all three
//! servers over framed [`MsgType::Client`] messages.
//!
//! Input path: P1 and P2 send the client their mask halves and P0 sends
//! hashes of both, so a lying holder is exposed before the client
//! reveals anything. The client folds its values into masked form and
//! returns them to both evaluators; the usual sharing tail (pairwise
//! digest between the evaluators, deferred beta+gamma flush toward P0)
//! catches a client that equivocates.
//!
//! Output path: the servers run the fair-reconstruction commitment
//! steps among themselves, then each sends the three agreed
//! commitments plus its two openings to the client. With at most one
//! corrupt server, two of the three commitment copies per group agree
//! and at least one opening per group is honest, so the client either
//! reconstructs the exact values or aborts.

use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::crypto::{hash_bytes, Commitment, KeyId, SALT_BYTES};
use crate::protocols::{
    check_vec_opening, decode_elems, encode_elems, pi_frec_commit, Session, Wire, FR_A1, FR_A2,
    FR_BETA,
};
use crate::ring::{byte_len, RingElem};
use crate::sharing::RssShare;
use crate::transport::{MsgType, Phase, WireMessage};
use crate::{Error, Result, Role};

/// Duplex link between one server and the client, carrying framed
/// [`MsgType::Client`] messages. The trait hides whether the frames
/// travel over in-process channels or sockets.
pub trait ClientLink {
    fn send(&mut self, payload: &[u8]) -> Result<()>;
    fn recv(&mut self) -> Result<Vec<u8>>;
}

/// In-process link over a channel pair; frames are byte-identical to
/// the socket form.
pub struct LoopLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

impl LoopLink {
    /// Two connected endpoints.
    pub fn pair(timeout: Duration) -> (LoopLink, LoopLink) {
        let (txa, rxb) = std::sync::mpsc::channel();
        let (txb, rxa) = std::sync::mpsc::channel();
        (
            LoopLink { tx: txa, rx: rxa, timeout },
            LoopLink { tx: txb, rx: rxb, timeout },
        )
    }
}

impl ClientLink for LoopLink {
    fn send(&mut self, payload: &[u8]) -> Result<()> {
        let frame = WireMessage {
            msg_type: MsgType::Client,
            phase: Phase::Online,
            payload: payload.to_vec(),
        }
        .encode();
        self.tx
            .send(frame)
            .map_err(|_| Error::Abort("client link closed".into()))
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        let frame = match self.rx.recv_timeout(self.timeout) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Abort("timeout waiting on client link".into()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Abort("client link closed".into()))
            }
        };
        let msg = WireMessage::decode(&frame)?;
        if msg.msg_type != MsgType::Client {
            return Err(Error::Abort(format!(
                "client link got a {:?} frame",
                msg.msg_type
            )));
        }
        Ok(msg.payload)
    }
}

/// Server side of client input sharing: deal the mask toward the
/// client, receive the masked values at the evaluators, and build the
/// wires. Consistency of what the client told P1 and P2 settles at the
/// next epoch close, before anything depending on these wires opens.
pub fn client_share_server(
    sess: &mut Session,
    link: &mut impl ClientLink,
    width: u8,
    n: usize,
) -> Result<Vec<Wire>> {
    let bid = sess.ctr("cli");
    let me = sess.role;
    let wires: Vec<Wire> = match me {
        Role::P0 => {
            let a1 = sess.prf_elems(KeyId::K01, "cli.a1", bid, width, n)?;
            let a2 = sess.prf_elems(KeyId::K02, "cli.a2", bid, width, n)?;
            let mut msg = hash_bytes(&encode_elems(&a1)).to_vec();
            msg.extend_from_slice(&hash_bytes(&encode_elems(&a2)));
            sess.apply_fault_bytes("cli.hash", &mut msg);
            link.send(&msg).map_err(|e| sess.net.abort(e.to_string()))?;
            (0..n)
                .map(|i| {
                    let bg = sess.defer_bg(width, None, "cli.bg");
                    Wire {
                        sh: RssShare::p0(a1[i], a2[i], RingElem::zero(width)),
                        bg,
                    }
                })
                .collect()
        }
        Role::P1 | Role::P2 => {
            let (key, proto) = if me == Role::P1 {
                (KeyId::K01, "cli.a1")
            } else {
                (KeyId::K02, "cli.a2")
            };
            let a = sess.prf_elems(key, proto, bid, width, n)?;
            let g = sess.prf_elems(KeyId::K12, "cli.g", bid, width, n)?;
            let mut msg = encode_elems(&a);
            sess.apply_fault_bytes("cli.alpha", &mut msg);
            link.send(&msg).map_err(|e| sess.net.abort(e.to_string()))?;
            let payload = link.recv().map_err(|e| sess.net.abort(e.to_string()))?;
            let beta =
                decode_elems(&payload, width, n).map_err(|e| sess.net.abort(e.to_string()))?;
            sess.enqueue_check(
                me.online_peer(),
                format!("cli.{bid}.b"),
                encode_elems(&beta),
                "cli.beta.h",
            );
            (0..n)
                .map(|i| {
                    let (sh, slot) = if me == Role::P1 {
                        (RssShare::p1(a[i], beta[i], g[i]), "cli.bg")
                    } else {
                        (RssShare::p2(a[i], beta[i], g[i]), "cli.bg.h")
                    };
                    sess.defer_bg(width, Some(beta[i] + g[i]), slot);
                    Wire::from_share(sh)
                })
                .collect()
        }
    };
    sess.net.round_barrier(Phase::Online);
    Ok(wires)
}

/// Client side of input sharing: verifies the mask halves against P0's
/// hashes, folds the values in, and returns the masked-value payload to
/// send to both P1 and P2.
pub fn client_build_beta(
    vals: &[RingElem],
    from_p0: &[u8],
    from_p1: &[u8],
    from_p2: &[u8],
) -> Result<Vec<u8>> {
    debug_assert!(!vals.is_empty());
    let n = vals.len();
    let width = vals[0].width();
    if from_p0.len() != 64 {
        return Err(Error::Abort("client sharing: malformed hash message".into()));
    }
    if hash_bytes(from_p1).as_slice() != &from_p0[..32]
        || hash_bytes(from_p2).as_slice() != &from_p0[32..]
    {
        return Err(Error::Abort(
            "client sharing: mask shares do not match the hashes".into(),
        ));
    }
    let a1 = decode_elems(from_p1, width, n)?;
    let a2 = decode_elems(from_p2, width, n)?;
    let beta: Vec<RingElem> = (0..n).map(|i| vals[i] + a1[i] + a2[i]).collect();
    Ok(encode_elems(&beta))
}

/// Full client side of the input flow. `links[i]` talks to server i;
/// the mask material comes in, the masked values go out to the two
/// evaluators.
pub fn client_share<L: ClientLink>(links: &mut [L], vals: &[RingElem]) -> Result<()> {
    let h = links[0].recv()?;
    let a1 = links[1].recv()?;
    let a2 = links[2].recv()?;
    let beta = client_build_beta(vals, &h, &a1, &a2)?;
    links[1].send(&beta)?;
    links[2].send(&beta)?;
    Ok(())
}

/// Server side of client reconstruction: the fair-reconstruction
/// commitment steps run among the servers; then the agreed commitments
/// and this server's two openings go to the client, openings in
/// ascending group order.
pub fn client_reconstruct_server(
    sess: &mut Session,
    link: &mut impl ClientLink,
    wires: &[Wire],
) -> Result<()> {
    let st = pi_frec_commit(sess, wires)?;
    let mut coms = Vec::with_capacity(96);
    for c in &st.coms {
        coms.extend_from_slice(&c.0);
    }
    sess.apply_fault_bytes("cli.com", &mut coms);
    link.send(&coms).map_err(|e| sess.net.abort(e.to_string()))?;
    let mut opens = Vec::new();
    for g in st.held_groups() {
        opens.extend_from_slice(&st.opening_bytes(g));
    }
    sess.apply_fault_bytes("cli.open", &mut opens);
    link.send(&opens).map_err(|e| sess.net.abort(e.to_string()))?;
    sess.net.round_barrier(Phase::Online);
    Ok(())
}

/// Which servers hold each share group.
fn group_holders(group: usize) -> [Role; 2] {
    match group {
        FR_A1 => [Role::P0, Role::P1],
        FR_A2 => [Role::P0, Role::P2],
        _ => [Role::P1, Role::P2],
    }
}

/// Client side of reconstruction: majority-vote each commitment over
/// the three copies, then accept whichever opening matches. `coms[i]`
/// and `opens[i]` are the two payloads received from server i.
pub fn client_accept_output(
    width: u8,
    n: usize,
    coms: &[Vec<u8>; 3],
    opens: &[Vec<u8>; 3],
) -> Result<Vec<RingElem>> {
    let mut agreed: [Option<Commitment>; 3] = [None, None, None];
    for group in [FR_A1, FR_A2, FR_BETA] {
        let copy = |i: usize| -> Option<[u8; 32]> {
            coms[i].get(group * 32..(group + 1) * 32)?.try_into().ok()
        };
        let copies = [copy(0), copy(1), copy(2)];
        for a in 0..3 {
            for b in (a + 1)..3 {
                if copies[a].is_some() && copies[a] == copies[b] {
                    agreed[group] = copies[a].map(Commitment);
                }
            }
        }
        if agreed[group].is_none() {
            return Err(Error::Abort(
                "client reconstruction: no commitment majority".into(),
            ));
        }
    }
    // Each server's payload splits into its two openings at a fixed
    // length; try each against the agreed commitment of its group.
    let open_len = n * byte_len(width) + SALT_BYTES;
    let mut groups: [Option<Vec<RingElem>>; 3] = [None, None, None];
    for role in Role::ALL {
        let payload = &opens[role.index()];
        let held = [FR_A1, FR_A2, FR_BETA]
            .into_iter()
            .filter(|g| group_holders(*g).contains(&role));
        for (k, g) in held.enumerate() {
            let Some(bytes) = payload.get(k * open_len..(k + 1) * open_len) else {
                continue;
            };
            if groups[g].is_none() {
                groups[g] = check_vec_opening(&agreed[g].unwrap(), bytes, width, n);
            }
        }
    }
    match groups {
        [Some(a1), Some(a2), Some(beta)] => {
            Ok((0..n).map(|i| beta[i] - a1[i] - a2[i]).collect())
        }
        _ => Err(Error::Abort(
            "client reconstruction: no opening matched the agreed commitment".into(),
        )),
    }
}

/// Full client side of the output flow: two payloads arrive from each
/// server (commitments, then openings); majority-vote and open.
pub fn client_receive<L: ClientLink>(links: &mut [L], width: u8, n: usize) -> Result<Vec<RingElem>> {
    let coms = [links[0].recv()?, links[1].recv()?, links[2].recv()?];
    let opens = [links[0].recv()?, links[1].recv()?, links[2].recv()?];
    client_accept_output(width, n, &coms, &opens)
}
