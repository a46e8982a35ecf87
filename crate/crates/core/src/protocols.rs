//! Session layer: sharing, joint sharing, reconstruction, and the
//! deferred verification machinery that keeps the helper server silent
//! during the online phase.
//!
//! # Deferral model
//!
//! Several protocols end with "P1 sends a value to P0, P2 sends a hash
//! of the same". None of those messages gate further online progress,
//! so they are batched per epoch: P1 queues the values, P2 mirrors them
//! for hashing, and P0 records which wire slots the values will land
//! in. Closing an epoch costs two verification rounds: the flush round
//! (P1's queued vector travels to P0; its bytes count as online traffic
//! since they are per-gate messages) and the digest round (all pairwise
//! consistency digests, including P0's deferred check values, settle in
//! one 32-byte exchange per direction).
//!
//! An epoch closes before any reconstruction (verify-then-open), at a
//! gate-count threshold, and at session end.
//!
//! # Wires
//!
//! A [`Wire`] is a masked share plus, at P0 only, a symbolic expression
//! for its `beta+gamma` component over not-yet-delivered flush slots.
//! Linear wire operations compose those expressions; protocols that
//! need the concrete value evaluate them after the flush.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::crypto::{commit, hash_bytes, Commitment, Ctx, KeyId, SessionKeys, SALT_BYTES};
use crate::ring::{byte_len, RingElem};
use crate::sharing::{jsh_noninteractive_assign, linear_combine, RssShare, SharePair};
use crate::transport::{CheckQueue, MsgType, Net, Phase, Tag};
use crate::{Error, Result, Role};

/// Epoch auto-close threshold, in deferred gates.
pub const EPOCH_GATE_LIMIT: usize = 1 << 16;

/// Scripted message corruption for robustness tests. A plan is given to
/// one server's session; the named slot's payload is flipped on the
/// n-th occurrence. Slot names follow `protocol.message` (see the
/// `send` call sites).
#[derive(Clone, Debug, Default)]
pub struct FaultPlan {
    targets: HashMap<String, u64>,
    seen: HashMap<String, u64>,
}

impl FaultPlan {
    pub fn none() -> Self {
        FaultPlan::default()
    }

    /// Corrupt the first occurrence of `slot`.
    pub fn tamper(slot: &str) -> Self {
        FaultPlan::tamper_nth(slot, 0)
    }

    pub fn tamper_nth(slot: &str, n: u64) -> Self {
        let mut p = FaultPlan::default();
        p.targets.insert(slot.to_string(), n);
        p
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn fires(&mut self, slot: &str) -> bool {
        let Some(&n) = self.targets.get(slot) else {
            return false;
        };
        let c = self.seen.entry(slot.to_string()).or_insert(0);
        let hit = *c == n;
        *c += 1;
        hit
    }
}

/// P0's symbolic view of a wire's `beta+gamma` component: a constant
/// plus a linear combination of deferred flush slots.
#[derive(Clone, Debug)]
pub struct BgExpr {
    konst: RingElem,
    terms: Vec<(u64, RingElem)>,
}

impl BgExpr {
    pub fn konst(v: RingElem) -> Self {
        BgExpr {
            konst: v,
            terms: Vec::new(),
        }
    }

    fn slot(id: u64, width: u8) -> Self {
        BgExpr {
            konst: RingElem::zero(width),
            terms: vec![(id, RingElem::one(width))],
        }
    }

    pub fn width(&self) -> u8 {
        self.konst.width()
    }

    pub fn add(&self, other: &BgExpr) -> BgExpr {
        let mut out = self.clone();
        out.konst += other.konst;
        for &(id, c) in &other.terms {
            match out.terms.iter_mut().find(|(i, _)| *i == id) {
                Some((_, acc)) => *acc += c,
                None => out.terms.push((id, c)),
            }
        }
        out
    }

    pub fn scale(&self, c: RingElem) -> BgExpr {
        BgExpr {
            konst: self.konst * c,
            terms: self.terms.iter().map(|&(i, t)| (i, t * c)).collect(),
        }
    }

    pub fn add_const(&self, c: RingElem) -> BgExpr {
        let mut out = self.clone();
        out.konst += c;
        out
    }

    /// Concrete value once every referenced slot has been delivered.
    fn eval(&self, store: &[RingElem]) -> Result<RingElem> {
        let mut acc = self.konst;
        for &(id, c) in &self.terms {
            let v = store.get(id as usize).ok_or_else(|| {
                Error::Config(format!("bg slot {id} referenced before flush"))
            })?;
            acc += *v * c;
        }
        Ok(acc)
    }
}

/// A shared circuit wire.
#[derive(Clone, Debug)]
pub struct Wire {
    pub sh: RssShare,
    /// Authoritative `beta+gamma` at P0; unused elsewhere.
    pub bg: BgExpr,
}

impl Wire {
    pub fn from_share(sh: RssShare) -> Wire {
        let bg = if sh.role() == Role::P0 {
            BgExpr::konst(sh.beta_gamma())
        } else {
            BgExpr::konst(RingElem::zero(sh.width()))
        };
        Wire { sh, bg }
    }

    pub fn constant(role: Role, v: RingElem) -> Wire {
        Wire::from_share(RssShare::public_constant(role, v))
    }

    pub fn width(&self) -> u8 {
        self.sh.width()
    }

    pub fn role(&self) -> Role {
        self.sh.role()
    }
}

/// `c0 + sum_i c_i * w_i`, composing P0's deferred expressions.
pub fn wire_lincomb(c0: RingElem, terms: &[(RingElem, &Wire)]) -> Result<Wire> {
    let sh_terms: Vec<(RingElem, RssShare)> =
        terms.iter().map(|(c, w)| (*c, w.sh.clone())).collect();
    let sh = linear_combine(c0, &sh_terms)?;
    let bg = if sh.role() == Role::P0 {
        let mut acc = BgExpr::konst(c0);
        for (c, w) in terms {
            acc = acc.add(&w.bg.scale(*c));
        }
        acc
    } else {
        BgExpr::konst(RingElem::zero(c0.width()))
    };
    Ok(Wire { sh, bg })
}

/// P0's deferred check value for one multiplicative gate:
/// `value = pre - sum_t eval(expr_t) * coeff_t`.
#[derive(Clone, Debug)]
pub struct Recipe {
    pub pre: RingElem,
    pub terms: Vec<(BgExpr, RingElem)>,
}

impl Recipe {
    fn eval(&self, store: &[RingElem]) -> Result<RingElem> {
        let mut acc = self.pre;
        for (expr, c) in &self.terms {
            acc -= expr.eval(store)? * *c;
        }
        Ok(acc)
    }
}

pub fn encode_elems(vals: &[RingElem]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vals.iter().map(|v| byte_len(v.width())).sum());
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_elems(bytes: &[u8], width: u8, n: usize) -> Result<Vec<RingElem>> {
    let step = byte_len(width);
    if bytes.len() != step * n {
        return Err(Error::Serial(format!(
            "element vector length {} != {n} x {step}",
            bytes.len()
        )));
    }
    (0..n)
        .map(|i| RingElem::from_le_bytes(&bytes[i * step..(i + 1) * step], width))
        .collect()
}

fn decode_elems_mixed(bytes: &[u8], widths: &[u8]) -> Result<Vec<RingElem>> {
    let mut off = 0;
    let mut out = Vec::with_capacity(widths.len());
    for &w in widths {
        let step = byte_len(w);
        if off + step > bytes.len() {
            return Err(Error::Serial("mixed element vector truncated".into()));
        }
        out.push(RingElem::from_le_bytes(&bytes[off..off + step], w)?);
        off += step;
    }
    if off != bytes.len() {
        return Err(Error::Serial("mixed element vector has trailing bytes".into()));
    }
    Ok(out)
}

/// One server's protocol session: keys, transport, epoch state.
pub struct Session {
    pub role: Role,
    pub ell: u8,
    pub keys: SessionKeys,
    pub net: Net,
    pub queue: CheckQueue,
    pub epoch_gate_limit: usize,
    fault: FaultPlan,
    ctrs: BTreeMap<&'static str, u64>,
    epoch_no: u64,
    gates_in_epoch: usize,
    /// P1: values to flush to P0; P2: the same values, kept for hashing.
    bg_out: Vec<RingElem>,
    /// P0: widths of the slots awaiting this epoch's flush.
    bg_pending: Vec<u8>,
    /// P0: delivered flush values, indexed by global slot id.
    bg_store: Vec<RingElem>,
    /// P0: deferred check-value recipes; P1/P2: the expected values.
    recipes: Vec<Recipe>,
    bstar_expect: Vec<RingElem>,
}

impl Session {
    pub fn new(ell: u8, keys: SessionKeys, net: Net) -> Session {
        Session::with_fault(ell, keys, net, FaultPlan::none())
    }

    pub fn with_fault(ell: u8, keys: SessionKeys, net: Net, fault: FaultPlan) -> Session {
        let role = keys.role();
        assert_eq!(role, net.me);
        Session {
            role,
            ell,
            keys,
            net,
            queue: CheckQueue::new(),
            epoch_gate_limit: EPOCH_GATE_LIMIT,
            fault,
            ctrs: BTreeMap::new(),
            epoch_no: 0,
            gates_in_epoch: 0,
            bg_out: Vec::new(),
            bg_pending: Vec::new(),
            bg_store: Vec::new(),
            recipes: Vec::new(),
            bstar_expect: Vec::new(),
        }
    }

    /// Monotone per-purpose counter; advances in lockstep at all
    /// servers because every server executes the same protocol trace.
    pub fn ctr(&mut self, name: &'static str) -> u64 {
        let c = self.ctrs.entry(name).or_insert(0);
        let v = *c;
        *c += 1;
        v
    }

    /// Batch of shared-key PRF elements for instance `bid` of `proto`.
    pub fn prf_elems(
        &mut self,
        key: KeyId,
        proto: &str,
        bid: u64,
        width: u8,
        n: usize,
    ) -> Result<Vec<RingElem>> {
        let ctx = Ctx::new(proto).arg(bid);
        self.keys.elems(key, &ctx, width, n)
    }

    fn apply_fault_elems(&mut self, slot: &str, vals: &mut [RingElem]) {
        if self.fault.fires(slot) {
            if let Some(v) = vals.first_mut() {
                *v += RingElem::one(v.width());
            }
        }
    }

    pub(crate) fn apply_fault_bytes(&mut self, slot: &str, bytes: &mut [u8]) {
        if self.fault.fires(slot) {
            if let Some(b) = bytes.first_mut() {
                *b ^= 1;
            }
        }
    }

    /// Sends a ring-element vector, applying any scripted fault.
    pub fn send_elems(
        &mut self,
        to: Role,
        phase: Phase,
        tag: Tag,
        vals: &[RingElem],
        slot: &str,
    ) -> Result<()> {
        let mut vals = vals.to_vec();
        self.apply_fault_elems(slot, &mut vals);
        self.net
            .send(to, MsgType::RingVec, phase, tag, &encode_elems(&vals))
    }

    pub fn recv_elems(
        &mut self,
        from: Role,
        phase: Phase,
        width: u8,
        n: usize,
    ) -> Result<Vec<RingElem>> {
        let bytes = self.net.recv(from, MsgType::RingVec, phase)?;
        decode_elems(&bytes, width, n).map_err(|e| self.net.abort(e.to_string()))
    }

    /// Whether the scripted fault plan targets `slot` on this call.
    /// Protocol code uses this where a corruption must land on a value
    /// before it is folded into a larger structure (proof shares,
    /// query answers) rather than on the outgoing payload.
    pub fn fault_fires(&mut self, slot: &str) -> bool {
        self.fault.fires(slot)
    }

    /// Queues `bytes` for the pairwise digest comparison with `peer`.
    pub fn enqueue_check(&mut self, peer: Role, label: String, mut bytes: Vec<u8>, slot: &str) {
        self.apply_fault_bytes(slot, &mut bytes);
        self.queue.enqueue(peer, label, bytes);
    }

    /// Registers one deferred `beta+gamma` delivery. P1 passes the value
    /// to send, P2 the same value (kept for the hash comparison), P0
    /// `None` and receives the slot expression the value will land in.
    pub fn defer_bg(&mut self, width: u8, value: Option<RingElem>, slot: &str) -> BgExpr {
        match self.role {
            Role::P0 => {
                debug_assert!(value.is_none());
                let id = self.bg_store.len() as u64 + self.bg_pending.len() as u64;
                self.bg_pending.push(width);
                BgExpr::slot(id, width)
            }
            _ => {
                let mut v = [value.expect("P1/P2 must supply the deferred value")];
                self.apply_fault_elems(slot, &mut v);
                self.bg_out.push(v[0]);
                BgExpr::konst(RingElem::zero(width))
            }
        }
    }

    /// Registers one deferred check value: P0 the recipe, P1/P2 the
    /// expected result.
    pub fn defer_bstar(&mut self, recipe: Option<Recipe>, expect: Option<RingElem>, slot: &str) {
        match self.role {
            Role::P0 => self.recipes.push(recipe.expect("P0 supplies the recipe")),
            _ => {
                let mut v = [expect.expect("P1/P2 supply the expected value")];
                self.apply_fault_elems(slot, &mut v);
                self.bstar_expect.push(v[0]);
            }
        }
    }

    /// P0's concrete `beta+gamma` for a wire; valid once the epochs
    /// covering its slots have flushed.
    pub fn bg_value(&self, wire: &Wire) -> Result<RingElem> {
        debug_assert_eq!(self.role, Role::P0);
        wire.bg.eval(&self.bg_store)
    }

    /// Counts deferred gates and closes the epoch at the threshold.
    pub fn gate_tick(&mut self, n: usize) -> Result<()> {
        self.gates_in_epoch += n;
        if self.gates_in_epoch >= self.epoch_gate_limit {
            self.verify_epoch()?;
        }
        Ok(())
    }

    /// Closes the current epoch: flush round, then digest round. Always
    /// costs two verification rounds so schedules agree everywhere.
    pub fn verify_epoch(&mut self) -> Result<()> {
        let ep = self.epoch_no;
        // Flush round: P1's queued per-gate values travel to P0. Their
        // bytes are online traffic; the round itself is verification.
        self.net.round_barrier(Phase::Verify);
        match self.role {
            Role::P1 => {
                if !self.bg_out.is_empty() {
                    let vals = std::mem::take(&mut self.bg_out);
                    self.send_elems(Role::P0, Phase::Online, Tag::Gate, &vals, "epoch.bg.flush")?;
                }
            }
            Role::P2 => {
                if !self.bg_out.is_empty() {
                    let vals = std::mem::take(&mut self.bg_out);
                    self.queue
                        .enqueue(Role::P0, format!("ep{ep}.bg"), encode_elems(&vals));
                }
            }
            Role::P0 => {
                if !self.bg_pending.is_empty() {
                    let widths = std::mem::take(&mut self.bg_pending);
                    let bytes = self.net.recv(Role::P1, MsgType::RingVec, Phase::Online)?;
                    let vals = decode_elems_mixed(&bytes, &widths)
                        .map_err(|e| self.net.abort(e.to_string()))?;
                    self.queue.enqueue(Role::P2, format!("ep{ep}.bg"), bytes);
                    self.bg_store.extend(vals);
                }
            }
        }
        // Deferred check values, settled via the digest queue.
        match self.role {
            Role::P0 => {
                if !self.recipes.is_empty() {
                    let recipes = std::mem::take(&mut self.recipes);
                    let vals: Vec<RingElem> = recipes
                        .iter()
                        .map(|r| r.eval(&self.bg_store))
                        .collect::<Result<_>>()?;
                    let mut bytes = encode_elems(&vals);
                    self.apply_fault_bytes("epoch.bstar", &mut bytes);
                    self.queue
                        .enqueue(Role::P1, format!("ep{ep}.bs"), bytes.clone());
                    self.queue.enqueue(Role::P2, format!("ep{ep}.bs"), bytes);
                }
            }
            _ => {
                if !self.bstar_expect.is_empty() {
                    let vals = std::mem::take(&mut self.bstar_expect);
                    self.queue
                        .enqueue(Role::P0, format!("ep{ep}.bs"), encode_elems(&vals));
                }
            }
        }
        // Digest round.
        self.net.round_barrier(Phase::Verify);
        self.queue.flush(&mut self.net)?;
        self.epoch_no += 1;
        self.gates_in_epoch = 0;
        Ok(())
    }

    /// Final epoch close. Call once when the computation is done.
    pub fn finish(&mut self) -> Result<()> {
        self.verify_epoch()
    }
}

/// Masked sharing of `n` values by `dealer`, who passes `vals`; the
/// other servers pass `None`.
pub fn pi_sh_batch(
    sess: &mut Session,
    dealer: Role,
    vals: Option<&[RingElem]>,
    width: u8,
    n: usize,
) -> Result<Vec<Wire>> {
    sh_batch_in(sess, dealer, vals, width, n, Phase::Online)
}

/// As `pi_sh_batch`, recorded as preprocessing traffic. For values a
/// protocol deals ahead of its online phase (truncation pairs).
pub fn pi_sh_prep_batch(
    sess: &mut Session,
    dealer: Role,
    vals: Option<&[RingElem]>,
    width: u8,
    n: usize,
) -> Result<Vec<Wire>> {
    sh_batch_in(sess, dealer, vals, width, n, Phase::Prep)
}

fn sh_batch_in(
    sess: &mut Session,
    dealer: Role,
    vals: Option<&[RingElem]>,
    width: u8,
    n: usize,
    phase: Phase,
) -> Result<Vec<Wire>> {
    debug_assert_eq!(vals.is_some(), sess.role == dealer);
    if let Some(v) = vals {
        assert_eq!(v.len(), n);
    }
    let me = sess.role;
    let wires = match dealer {
        Role::P0 => {
            let bid = sess.ctr("sh0");
            // alpha halves with the dealer pairs, gamma with everyone.
            let g = sess.prf_elems(KeyId::KP, "sh0.g", bid, width, n)?;
            match me {
                Role::P0 => {
                    let a1 = sess.prf_elems(KeyId::K01, "sh0.a1", bid, width, n)?;
                    let a2 = sess.prf_elems(KeyId::K02, "sh0.a2", bid, width, n)?;
                    let beta: Vec<RingElem> = (0..n)
                        .map(|i| vals.unwrap()[i] + a1[i] + a2[i])
                        .collect();
                    sess.send_elems(Role::P1, phase, Tag::Gate, &beta, "sh.beta")?;
                    sess.send_elems(Role::P2, phase, Tag::Gate, &beta, "sh.beta")?;
                    (0..n)
                        .map(|i| {
                            Wire::from_share(RssShare::p0(a1[i], a2[i], beta[i] + g[i]))
                        })
                        .collect()
                }
                Role::P1 | Role::P2 => {
                    let (key, proto) = if me == Role::P1 {
                        (KeyId::K01, "sh0.a1")
                    } else {
                        (KeyId::K02, "sh0.a2")
                    };
                    let a = sess.prf_elems(key, proto, bid, width, n)?;
                    let beta = sess.recv_elems(Role::P0, phase, width, n)?;
                    let peer = me.online_peer();
                    sess.enqueue_check(
                        peer,
                        format!("sh0.{bid}.b"),
                        encode_elems(&beta),
                        "sh.beta.h",
                    );
                    (0..n)
                        .map(|i| {
                            let sh = if me == Role::P1 {
                                RssShare::p1(a[i], beta[i], g[i])
                            } else {
                                RssShare::p2(a[i], beta[i], g[i])
                            };
                            Wire::from_share(sh)
                        })
                        .collect()
                }
            }
        }
        Role::P1 | Role::P2 => {
            let (ctr_name, own_key, own_proto, other_proto, g_proto) = if dealer == Role::P1 {
                ("sh1", KeyId::K01, "sh1.a1", "sh1.a2", "sh1.g")
            } else {
                ("sh2", KeyId::K02, "sh2.a2", "sh2.a1", "sh2.g")
            };
            let bid = sess.ctr(ctr_name);
            // The dealer-side alpha half lives on the dealer's key with
            // P0; the other half is sampled from the shared key so the
            // dealer learns the full mask. Gamma excludes P0.
            match me {
                Role::P0 => {
                    let a_own = sess.prf_elems(own_key, own_proto, bid, width, n)?;
                    let a_oth = sess.prf_elems(KeyId::KP, other_proto, bid, width, n)?;
                    let mut out = Vec::with_capacity(n);
                    for i in 0..n {
                        let bg = sess.defer_bg(width, None, "sh.bg");
                        let (a1, a2) = if dealer == Role::P1 {
                            (a_own[i], a_oth[i])
                        } else {
                            (a_oth[i], a_own[i])
                        };
                        out.push(Wire {
                            sh: RssShare::p0(a1, a2, RingElem::zero(width)),
                            bg,
                        });
                    }
                    out
                }
                _ if me == dealer => {
                    let a_own = sess.prf_elems(own_key, own_proto, bid, width, n)?;
                    let a_oth = sess.prf_elems(KeyId::KP, other_proto, bid, width, n)?;
                    let g = sess.prf_elems(KeyId::K12, g_proto, bid, width, n)?;
                    let beta: Vec<RingElem> = (0..n)
                        .map(|i| vals.unwrap()[i] + a_own[i] + a_oth[i])
                        .collect();
                    sess.send_elems(me.online_peer(), phase, Tag::Gate, &beta, "sh.beta")?;
                    (0..n)
                        .map(|i| {
                            if me == Role::P1 {
                                sess.defer_bg(width, Some(beta[i] + g[i]), "sh.bg");
                                Wire::from_share(RssShare::p1(a_own[i], beta[i], g[i]))
                            } else {
                                sess.defer_bg(width, Some(beta[i] + g[i]), "sh.bg.h");
                                Wire::from_share(RssShare::p2(a_own[i], beta[i], g[i]))
                            }
                        })
                        .collect()
                }
                _ => {
                    // Online peer of the dealer.
                    let a_oth = sess.prf_elems(KeyId::KP, other_proto, bid, width, n)?;
                    let g = sess.prf_elems(KeyId::K12, g_proto, bid, width, n)?;
                    let beta = sess.recv_elems(dealer, phase, width, n)?;
                    (0..n)
                        .map(|i| {
                            if me == Role::P1 {
                                sess.defer_bg(width, Some(beta[i] + g[i]), "sh.bg");
                                Wire::from_share(RssShare::p1(a_oth[i], beta[i], g[i]))
                            } else {
                                sess.defer_bg(width, Some(beta[i] + g[i]), "sh.bg.h");
                                Wire::from_share(RssShare::p2(a_oth[i], beta[i], g[i]))
                            }
                        })
                        .collect()
                }
            }
        }
    };
    sess.net.round_barrier(phase);
    Ok(wires)
}

pub fn pi_sh(sess: &mut Session, dealer: Role, v: Option<RingElem>, width: u8) -> Result<Wire> {
    let vals = v.map(|x| vec![x]);
    Ok(pi_sh_batch(sess, dealer, vals.as_deref(), width, 1)?.remove(0))
}

/// Joint sharing of values known to both members of `pair` during the
/// online phase. Members pass `vals`; the outsider passes `None`.
pub fn pi_jsh_batch(
    sess: &mut Session,
    pair: SharePair,
    vals: Option<&[RingElem]>,
    width: u8,
    n: usize,
) -> Result<Vec<Wire>> {
    let me = sess.role;
    let member = pair.members().contains(&me);
    debug_assert_eq!(vals.is_some(), member);
    match pair {
        SharePair::P1P2 => {
            // No alpha mask and no online message: both holders set
            // beta = v locally; P0 learns v+gamma via the flush.
            let bid = sess.ctr("jsh12");
            let g = if me == Role::P0 {
                Vec::new()
            } else {
                sess.prf_elems(KeyId::K12, "jsh12.g", bid, width, n)?
            };
            let zero = RingElem::zero(width);
            let out = (0..n)
                .map(|i| match me {
                    Role::P0 => {
                        let bg = sess.defer_bg(width, None, "jsh.bg");
                        Wire {
                            sh: RssShare::p0(zero, zero, zero),
                            bg,
                        }
                    }
                    Role::P1 => {
                        let v = vals.unwrap()[i];
                        sess.defer_bg(width, Some(v + g[i]), "jsh.bg");
                        Wire::from_share(RssShare::p1(zero, v, g[i]))
                    }
                    Role::P2 => {
                        let v = vals.unwrap()[i];
                        sess.defer_bg(width, Some(v + g[i]), "jsh.bg.h");
                        Wire::from_share(RssShare::p2(zero, v, g[i]))
                    }
                })
                .collect();
            Ok(out)
        }
        SharePair::P1P0 | SharePair::P2P0 => {
            // The non-P0 member deals a full sharing; P0, who also
            // knows the values, cross-checks beta with the remaining
            // server.
            let dealer = pair.members()[0];
            let watcher = dealer.online_peer();
            let inner = if me == dealer { vals } else { None };
            let wires = pi_sh_batch(sess, dealer, inner, width, n)?;
            let label_head = if dealer == Role::P1 { "jsh10" } else { "jsh20" };
            let bid = sess.ctr(label_head);
            if me == Role::P0 {
                let beta: Vec<RingElem> = (0..n)
                    .map(|i| vals.unwrap()[i] + wires[i].sh.alpha1() + wires[i].sh.alpha2())
                    .collect();
                sess.enqueue_check(
                    watcher,
                    format!("{label_head}.{bid}.b"),
                    encode_elems(&beta),
                    "jsh.beta.h",
                );
            } else if me == watcher {
                let beta: Vec<RingElem> = wires.iter().map(|w| w.sh.beta()).collect();
                sess.enqueue_check(
                    Role::P0,
                    format!("{label_head}.{bid}.b"),
                    encode_elems(&beta),
                    "jsh.beta.h",
                );
            }
            Ok(wires)
        }
    }
}

pub fn pi_jsh(
    sess: &mut Session,
    pair: SharePair,
    v: Option<RingElem>,
    width: u8,
) -> Result<Wire> {
    let vals = v.map(|x| vec![x]);
    Ok(pi_jsh_batch(sess, pair, vals.as_deref(), width, 1)?.remove(0))
}

/// Non-interactive joint sharing for values both members already hold
/// in the preprocessing phase. No messages at all.
pub fn pi_jsh_prep_batch(
    sess: &mut Session,
    pair: SharePair,
    vals: Option<&[RingElem]>,
    width: u8,
    n: usize,
) -> Result<Vec<Wire>> {
    let me = sess.role;
    let member = pair.members().contains(&me);
    debug_assert_eq!(vals.is_some(), member);
    let bid = sess.ctr("jshp");
    let r = sess.prf_elems(KeyId::KP, "jshp.r", bid, width, n)?;
    let zero = RingElem::zero(width);
    Ok((0..n)
        .map(|i| {
            let sh = if member {
                jsh_noninteractive_assign(pair, vals.unwrap()[i], r[i])[me.index()].clone()
            } else {
                // The outsider's share is (0, 0, r) in every column.
                match me {
                    Role::P0 => RssShare::p0(zero, zero, r[i]),
                    Role::P1 => RssShare::p1(zero, zero, r[i]),
                    Role::P2 => RssShare::p2(zero, zero, r[i]),
                }
            };
            Wire::from_share(sh)
        })
        .collect())
}

pub fn pi_jsh_prep(
    sess: &mut Session,
    pair: SharePair,
    v: Option<RingElem>,
    width: u8,
) -> Result<Wire> {
    let vals = v.map(|x| vec![x]);
    Ok(pi_jsh_prep_batch(sess, pair, vals.as_deref(), width, 1)?.remove(0))
}

/// Public reconstruction. Closes the epoch first (verify-then-open),
/// then each server receives its missing component from one peer and a
/// hash of it from the other.
pub fn pi_rec(sess: &mut Session, wires: &[Wire]) -> Result<Vec<RingElem>> {
    sess.verify_epoch()?;
    let n = wires.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let width = wires[0].width();
    debug_assert!(wires.iter().all(|w| w.width() == width));
    let out = match sess.role {
        Role::P0 => {
            let a1: Vec<RingElem> = wires.iter().map(|w| w.sh.alpha1()).collect();
            let a2: Vec<RingElem> = wires.iter().map(|w| w.sh.alpha2()).collect();
            sess.send_elems(Role::P2, Phase::Online, Tag::Gate, &a1, "rec.alpha1")?;
            let mut h = hash_bytes(&encode_elems(&a2)).to_vec();
            sess.apply_fault_bytes("rec.alpha2.h", &mut h);
            sess.net
                .send(Role::P1, MsgType::Digest, Phase::Online, Tag::Amortized, &h)?;
            let beta = sess.recv_elems(Role::P1, Phase::Online, width, n)?;
            let bh = sess.net.recv(Role::P2, MsgType::Digest, Phase::Online)?;
            if bh != hash_bytes(&encode_elems(&beta)) {
                return Err(sess.net.abort("reconstruction: beta hash mismatch"));
            }
            (0..n).map(|i| beta[i] - a1[i] - a2[i]).collect()
        }
        Role::P1 => {
            let beta: Vec<RingElem> = wires.iter().map(|w| w.sh.beta()).collect();
            let a1: Vec<RingElem> = wires.iter().map(|w| w.sh.alpha1()).collect();
            sess.send_elems(Role::P0, Phase::Online, Tag::Gate, &beta, "rec.beta")?;
            let mut h = hash_bytes(&encode_elems(&a1)).to_vec();
            sess.apply_fault_bytes("rec.alpha1.h", &mut h);
            sess.net
                .send(Role::P2, MsgType::Digest, Phase::Online, Tag::Amortized, &h)?;
            let a2 = sess.recv_elems(Role::P2, Phase::Online, width, n)?;
            let ah = sess.net.recv(Role::P0, MsgType::Digest, Phase::Online)?;
            if ah != hash_bytes(&encode_elems(&a2)) {
                return Err(sess.net.abort("reconstruction: alpha2 hash mismatch"));
            }
            (0..n).map(|i| beta[i] - a1[i] - a2[i]).collect()
        }
        Role::P2 => {
            let beta: Vec<RingElem> = wires.iter().map(|w| w.sh.beta()).collect();
            let a2: Vec<RingElem> = wires.iter().map(|w| w.sh.alpha2()).collect();
            sess.send_elems(Role::P1, Phase::Online, Tag::Gate, &a2, "rec.alpha2")?;
            let mut h = hash_bytes(&encode_elems(&beta)).to_vec();
            sess.apply_fault_bytes("rec.beta.h", &mut h);
            sess.net
                .send(Role::P0, MsgType::Digest, Phase::Online, Tag::Amortized, &h)?;
            let a1 = sess.recv_elems(Role::P0, Phase::Online, width, n)?;
            let ah = sess.net.recv(Role::P1, MsgType::Digest, Phase::Online)?;
            if ah != hash_bytes(&encode_elems(&a1)) {
                return Err(sess.net.abort("reconstruction: alpha1 hash mismatch"));
            }
            (0..n).map(|i| beta[i] - a1[i] - a2[i]).collect()
        }
    };
    sess.net.round_barrier(Phase::Online);
    Ok(out)
}

pub fn pi_rec_single(sess: &mut Session, wire: &Wire) -> Result<RingElem> {
    Ok(pi_rec(sess, std::slice::from_ref(wire))?.remove(0))
}

/// Index of each share group in fair-reconstruction commitments.
pub const FR_A1: usize = 0;
pub const FR_A2: usize = 1;
pub const FR_BETA: usize = 2;

/// Fair reconstruction after the commitment and signalling steps: the
/// three vector commitments every server now agrees on, plus the two
/// share groups this server holds with their opening salts. Opening
/// toward the other servers ([`frec_open`]) or toward an outside
/// client finishes the reconstruction.
pub struct FrecAgreed {
    width: u8,
    n: usize,
    /// Agreed commitments, indexed alpha1 / alpha2 / beta.
    pub coms: [Commitment; 3],
    /// (group, values, salt) for the two groups this server holds.
    held: Vec<(usize, Vec<RingElem>, [u8; SALT_BYTES])>,
}

impl FrecAgreed {
    fn held_group(&self, group: usize) -> &(usize, Vec<RingElem>, [u8; SALT_BYTES]) {
        self.held.iter().find(|(g, _, _)| *g == group).expect("group not held")
    }

    /// The two groups this server holds, in ascending index order.
    pub fn held_groups(&self) -> [usize; 2] {
        let mut g = [self.held[0].0, self.held[1].0];
        g.sort_unstable();
        g
    }

    /// Serialized opening of one held group: values then salt.
    pub fn opening_bytes(&self, group: usize) -> Vec<u8> {
        let (_, vals, salt) = self.held_group(group);
        let mut out = encode_elems(vals);
        out.extend_from_slice(salt);
        out
    }
}

/// Checks a received `values || salt` opening against `com` and returns
/// the values on success.
pub(crate) fn check_vec_opening(
    com: &Commitment,
    bytes: &[u8],
    width: u8,
    n: usize,
) -> Option<Vec<RingElem>> {
    let split = bytes.len().checked_sub(SALT_BYTES)?;
    let salt: [u8; SALT_BYTES] = bytes[split..].try_into().ok()?;
    if commit(&bytes[..split], salt) != *com {
        return None;
    }
    decode_elems(&bytes[..split], width, n).ok()
}

/// Commitment and signalling steps of fair reconstruction.
///
/// Preprocessing: both holders of each alpha group commit to it (and to
/// a proof-of-origin nonce) toward the one server missing it, under a
/// pair-common salt, so the receiver cross-checks the two copies.
/// Online, P1 and P2 commit the beta vector toward P0 the same way;
/// on mismatch P0 replies with abort plus the nonce opening only the
/// accused pair shares, which the honest receiver relays as proof, so
/// either every honest server aborts here or none does. One nonce pair
/// covers the whole batch, and every message in these steps amortizes.
pub fn pi_frec_commit(sess: &mut Session, wires: &[Wire]) -> Result<FrecAgreed> {
    sess.verify_epoch()?;
    let n = wires.len();
    let width = wires[0].width();
    debug_assert!(wires.iter().all(|w| w.width() == width));
    let me = sess.role;
    let bid = sess.ctr("frec");

    // Pair-common nonces and salts. Each server can derive only the
    // material for the pairs it belongs to.
    let ctx = |label: &str| Ctx::new(label).arg(bid);
    let (r1, sr1, s1) = if me != Role::P2 {
        (
            Some(sess.keys.elem(KeyId::K01, &ctx("frec.r1"), width)?),
            Some(sess.keys.salt(KeyId::K01, &ctx("frec.sr1"))?),
            Some(sess.keys.salt(KeyId::K01, &ctx("frec.s1"))?),
        )
    } else {
        (None, None, None)
    };
    let (r2, sr2, s2) = if me != Role::P1 {
        (
            Some(sess.keys.elem(KeyId::K02, &ctx("frec.r2"), width)?),
            Some(sess.keys.salt(KeyId::K02, &ctx("frec.sr2"))?),
            Some(sess.keys.salt(KeyId::K02, &ctx("frec.s2"))?),
        )
    } else {
        (None, None, None)
    };
    let s12 = if me != Role::P0 {
        Some(sess.keys.salt(KeyId::K12, &ctx("frec.s12"))?)
    } else {
        None
    };

    let com_pair = |vals: &[RingElem], s: [u8; SALT_BYTES], r: RingElem, sr: [u8; SALT_BYTES]| {
        let cv = commit(&encode_elems(vals), s);
        let cr = commit(&r.to_le_bytes(), sr);
        let mut msg = cv.0.to_vec();
        msg.extend_from_slice(&cr.0);
        (cv, cr, msg)
    };

    // Preprocessing: cross-committed alpha groups.
    let mut held: Vec<(usize, Vec<RingElem>, [u8; SALT_BYTES])> = Vec::new();
    let mut coms: [Option<Commitment>; 3] = [None, None, None];
    let mut com_r_missing: Option<Commitment> = None;
    match me {
        Role::P0 => {
            let a1: Vec<RingElem> = wires.iter().map(|w| w.sh.alpha1()).collect();
            let a2: Vec<RingElem> = wires.iter().map(|w| w.sh.alpha2()).collect();
            let (cv1, _, mut m1) = com_pair(&a1, s1.unwrap(), r1.unwrap(), sr1.unwrap());
            let (cv2, _, mut m2) = com_pair(&a2, s2.unwrap(), r2.unwrap(), sr2.unwrap());
            sess.apply_fault_bytes("frec.com.a1", &mut m1);
            sess.apply_fault_bytes("frec.com.a2", &mut m2);
            sess.net.send(Role::P2, MsgType::Commit, Phase::Prep, Tag::Amortized, &m1)?;
            sess.net.send(Role::P1, MsgType::Commit, Phase::Prep, Tag::Amortized, &m2)?;
            coms[FR_A1] = Some(cv1);
            coms[FR_A2] = Some(cv2);
            held.push((FR_A1, a1, s1.unwrap()));
            held.push((FR_A2, a2, s2.unwrap()));
        }
        Role::P1 => {
            let a1: Vec<RingElem> = wires.iter().map(|w| w.sh.local_alpha()).collect();
            let (cv1, _, mut m1) = com_pair(&a1, s1.unwrap(), r1.unwrap(), sr1.unwrap());
            sess.apply_fault_bytes("frec.com.a1", &mut m1);
            sess.net.send(Role::P2, MsgType::Commit, Phase::Prep, Tag::Amortized, &m1)?;
            coms[FR_A1] = Some(cv1);
            held.push((FR_A1, a1, s1.unwrap()));
        }
        Role::P2 => {
            let a2: Vec<RingElem> = wires.iter().map(|w| w.sh.local_alpha()).collect();
            let (cv2, _, mut m2) = com_pair(&a2, s2.unwrap(), r2.unwrap(), sr2.unwrap());
            sess.apply_fault_bytes("frec.com.a2", &mut m2);
            sess.net.send(Role::P1, MsgType::Commit, Phase::Prep, Tag::Amortized, &m2)?;
            coms[FR_A2] = Some(cv2);
            held.push((FR_A2, a2, s2.unwrap()));
        }
    }
    if me != Role::P0 {
        // Receive the missing group's commitment from both holders.
        let (group, other) = match me {
            Role::P1 => (FR_A2, Role::P2),
            _ => (FR_A1, Role::P1),
        };
        let from_p0 = sess.net.recv(Role::P0, MsgType::Commit, Phase::Prep)?;
        let from_peer = sess.net.recv(other, MsgType::Commit, Phase::Prep)?;
        if from_p0.len() != 64 || from_p0 != from_peer {
            return Err(sess
                .net
                .abort("fair reconstruction: committed shares differ between holders"));
        }
        coms[group] = Some(Commitment(from_p0[..32].try_into().unwrap()));
        com_r_missing = Some(Commitment(from_p0[32..].try_into().unwrap()));
    }
    sess.net.round_barrier(Phase::Prep);

    // Online round 1: beta commitments toward P0.
    let mut p0_mismatch = false;
    match me {
        Role::P0 => {
            let c1 = sess.net.recv(Role::P1, MsgType::Commit, Phase::Online)?;
            let c2 = sess.net.recv(Role::P2, MsgType::Commit, Phase::Online)?;
            if c1.len() != 32 || c1 != c2 {
                p0_mismatch = true;
            } else {
                coms[FR_BETA] = Some(Commitment(c1.try_into().unwrap()));
            }
        }
        _ => {
            let beta: Vec<RingElem> = wires.iter().map(|w| w.sh.beta()).collect();
            let cb = commit(&encode_elems(&beta), s12.unwrap());
            let mut msg = cb.0.to_vec();
            sess.apply_fault_bytes("frec.com.beta", &mut msg);
            sess.net.send(Role::P0, MsgType::Commit, Phase::Online, Tag::Amortized, &msg)?;
            coms[FR_BETA] = Some(cb);
            held.push((FR_BETA, beta, s12.unwrap()));
        }
    }
    sess.net.round_barrier(Phase::Online);

    // Online round 2: continue, or abort with proof of origin.
    let opening = |r: RingElem, sr: [u8; SALT_BYTES]| {
        let mut o = vec![1u8];
        o.extend_from_slice(&r.to_le_bytes());
        o.extend_from_slice(&sr);
        o
    };
    let mut direct = Vec::new();
    match me {
        Role::P0 => {
            // A selective abort (the scripted attack) tells P1 to stop
            // while P2 keeps going; the relay round defeats it.
            let selective = sess.fault_fires("frec.abort");
            let (to1, to2) = if p0_mismatch {
                (opening(r2.unwrap(), sr2.unwrap()), opening(r1.unwrap(), sr1.unwrap()))
            } else if selective {
                (opening(r2.unwrap(), sr2.unwrap()), vec![0u8])
            } else {
                (vec![0u8], vec![0u8])
            };
            sess.net.send(Role::P1, MsgType::Control, Phase::Online, Tag::Amortized, &to1)?;
            sess.net.send(Role::P2, MsgType::Control, Phase::Online, Tag::Amortized, &to2)?;
        }
        _ => {
            direct = sess.net.recv(Role::P0, MsgType::Control, Phase::Online)?;
        }
    }
    sess.net.round_barrier(Phase::Online);

    // Online round 3: the evaluators exchange what P0 told them.
    let mut relayed = Vec::new();
    if me != Role::P0 {
        let mut fwd = direct.clone();
        sess.apply_fault_bytes("frec.relay", &mut fwd);
        relayed = sess.net.exchange(
            me.online_peer(),
            MsgType::Control,
            Phase::Online,
            Tag::Amortized,
            &fwd,
        )?;
    }
    sess.net.round_barrier(Phase::Online);

    if me == Role::P0 {
        if p0_mismatch {
            return Err(sess.net.abort("fair reconstruction: beta commitments differ"));
        }
    } else {
        // An abort claim counts only with a valid proof of origin:
        // direct aborts open the nonce of the pair this server is NOT
        // in; relayed aborts must open this server's own pair nonce,
        // which the relay could only have learned from P0.
        let parse = |msg: &[u8]| -> Option<(RingElem, [u8; SALT_BYTES])> {
            if msg.len() != 1 + byte_len(width) + SALT_BYTES || msg[0] != 1 {
                return None;
            }
            let r = RingElem::from_le_bytes(&msg[1..1 + byte_len(width)], width).ok()?;
            let salt = msg[1 + byte_len(width)..].try_into().ok();
            salt.map(|s| (r, s))
        };
        let direct_valid = parse(&direct).is_some_and(|(r, s)| {
            commit(&r.to_le_bytes(), s) == *com_r_missing.as_ref().unwrap()
        });
        let (own_r, own_sr) = match me {
            Role::P1 => (r1.unwrap(), sr1.unwrap()),
            _ => (r2.unwrap(), sr2.unwrap()),
        };
        let relay_valid = parse(&relayed).is_some_and(|(r, s)| r == own_r && s == own_sr);
        if direct_valid || relay_valid {
            return Err(sess.net.abort("fair reconstruction: verified abort signal"));
        }
    }

    Ok(FrecAgreed {
        width,
        n,
        coms: coms.map(|c| c.expect("all commitments agreed")),
        held,
    })
}

/// Opening step among the servers: each share group travels from both
/// of its holders to the server missing it, which accepts whichever
/// copy matches the agreed commitment. Exactly six elements per value
/// of per-gate traffic, in one round.
fn frec_open(sess: &mut Session, st: &FrecAgreed) -> Result<Vec<RingElem>> {
    let me = sess.role;
    let (width, n) = (st.width, st.n);
    let sends: [(usize, Role, &str); 2] = match me {
        Role::P0 => [
            (FR_A1, Role::P2, "frec.open.a1"),
            (FR_A2, Role::P1, "frec.open.a2"),
        ],
        Role::P1 => [
            (FR_A1, Role::P2, "frec.open.a1"),
            (FR_BETA, Role::P0, "frec.open.beta"),
        ],
        Role::P2 => [
            (FR_A2, Role::P1, "frec.open.a2"),
            (FR_BETA, Role::P0, "frec.open.beta"),
        ],
    };
    for (group, to, slot) in sends {
        let (_, vals, salt) = st.held_group(group);
        sess.send_elems(to, Phase::Online, Tag::Gate, vals, slot)?;
        sess.net
            .send(to, MsgType::Open, Phase::Online, Tag::Amortized, salt)?;
    }
    let (missing, senders) = match me {
        Role::P0 => (FR_BETA, [Role::P1, Role::P2]),
        Role::P1 => (FR_A2, [Role::P0, Role::P2]),
        Role::P2 => (FR_A1, [Role::P0, Role::P1]),
    };
    let mut accepted: Option<Vec<RingElem>> = None;
    for from in senders {
        let vals = sess.recv_elems(from, Phase::Online, width, n)?;
        let salt = sess.net.recv(from, MsgType::Open, Phase::Online)?;
        if accepted.is_none() {
            let mut bytes = encode_elems(&vals);
            bytes.extend_from_slice(&salt);
            accepted = check_vec_opening(&st.coms[missing], &bytes, width, n);
        }
    }
    sess.net.round_barrier(Phase::Online);
    let got = match accepted {
        Some(v) => v,
        None => return Err(sess.net.abort("fair reconstruction: no opening matched")),
    };
    let group_vals = |g: usize| -> &[RingElem] {
        if g == missing {
            &got
        } else {
            &st.held_group(g).1
        }
    };
    let (beta, a1, a2) = (group_vals(FR_BETA), group_vals(FR_A1), group_vals(FR_A2));
    Ok((0..n).map(|i| beta[i] - a1[i] - a2[i]).collect())
}

/// Fair reconstruction: either every honest server learns the values or
/// none does. Four online rounds; six elements per value plus
/// amortized commitments.
pub fn pi_frec_batch(sess: &mut Session, wires: &[Wire]) -> Result<Vec<RingElem>> {
    if wires.is_empty() {
        return Ok(Vec::new());
    }
    let st = pi_frec_commit(sess, wires)?;
    frec_open(sess, &st)
}

pub fn pi_frec(sess: &mut Session, wire: &Wire) -> Result<RingElem> {
    Ok(pi_frec_batch(sess, std::slice::from_ref(wire))?.remove(0))
}
