//! Verified multiplication and dot products.
//!
//! Preprocessing computes, for every product gate, the cross terms the
//! online phase needs, and proves in zero knowledge that each server
//! computed its contribution honestly. The proof system treats the
//! whole batch at once; its traffic amortizes away, leaving 3 ring
//! elements per gate of preprocessing and 3 per gate (dot products: per
//! inner product, independent of length) online.
//!
//! Relabeling: a product gate over wires x, y works on the masked pair
//! (d, e) with masks `lambda_d = alpha_x`, `lambda_e = alpha_y` and
//! public masked values `d+lambda_d = gamma_x`, `e+lambda_e = gamma_y`
//! (both known to P1 and P2 from the wires' preprocessing). Writing
//! `lde = alpha_x * alpha_y` and `f = d*e`, the servers derive
//!
//! ```text
//!   [f+lf]_j = (j-1).gx.gy - [ax]_j.gy - [ay]_j.gx + [lde]_j + [lf]_j
//!   psi      = (f + lf) - gx.gy            (P1, P2; lf = chi at P0)
//!   Gamma_j  = gx.[ay]_j + gy.[ax]_j + [psi]_j - [lf]_j
//! ```
//!
//! so that `Gamma_1 + Gamma_2 = alpha_x * alpha_y`. Each server's step
//! is an affine function of values the other two jointly hold plus a
//! handful of genuine products; those products are exactly what the
//! distributed proof covers:
//!
//!   P0 proves, per gate:  alpha_x * alpha_y   (1 slot)
//!   Pj proves, per gate:  [ax]_j * gy  and  [ay]_j * gx   (2 slots)
//!
//! The remaining term `gx.gy` is public to both of Pj's verifiers'
//! joint view and folds into the affine part of the linear check.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::crypto::{Ctx, KeyId};
use crate::protocols::{Recipe, Session, Wire};
use crate::ring::RingElem;
use crate::sharing::RssShare;
use crate::transport::{MsgType, Phase, Tag};
use crate::zkmult::{
    split_proof, zk_answer, zk_decide, zk_prove, GrCtx, VerifierSlice, ZkAnswer, ZkConfig,
    ZkParams, ZkProof,
};
use crate::{Result, Role};

/// Fixed global delivery order for rounds where every ordered pair of
/// servers exchanges one frame. Processing the list sequentially keeps
/// arbitrarily large frames deadlock-free on blocking transports.
const PAIR_ORDER: [(Role, Role); 6] = [
    (Role::P0, Role::P1),
    (Role::P0, Role::P2),
    (Role::P1, Role::P0),
    (Role::P1, Role::P2),
    (Role::P2, Role::P0),
    (Role::P2, Role::P1),
];

/// Proof-system instances for one ring width. P0 proves one product
/// per gate; P1 and P2 prove two, so their batches need an even slot
/// count (and occasionally one extra bit of extension degree).
pub struct ZkSetup {
    pub ell: u8,
    pub cfg: ZkConfig,
    p0: ZkParams,
    pj: ZkParams,
}

impl ZkSetup {
    pub fn new(ell: u8, cfg: ZkConfig) -> Result<Self> {
        let p0 = ZkParams::new(GrCtx::auto(ell, cfg.delta)?, cfg.m, cfg.rho)?;
        let mj = cfg.m.max(2);
        let mut dj = cfg.delta;
        while (1u64 << dj) < (2 * mj + 2) as u64 {
            dj += 1;
        }
        let pj = ZkParams::new(GrCtx::auto(ell, dj)?, mj, cfg.rho)?;
        Ok(ZkSetup { ell, cfg, p0, pj })
    }

    fn params(&self, prover: Role) -> &ZkParams {
        match prover {
            Role::P0 => &self.p0,
            _ => &self.pj,
        }
    }
}

/// Per-output-gate preprocessing. Fields are role-local: a server
/// holds only its own components, the rest stay zero.
#[derive(Clone, Copy, Debug)]
pub struct GatePrep {
    pub(crate) width: u8,
    /// Output-mask halves: P0 both, P1/P2 their own.
    pub(crate) az1: RingElem,
    pub(crate) az2: RingElem,
    /// P1/P2: fresh mask for the deferred beta+gamma delivery.
    pub(crate) gamma_z: RingElem,
    /// P1/P2: full `sum psi_t`, part of the consistency check value.
    pub(crate) psi: RingElem,
    /// P1/P2: `[Gamma]_j` summed over the gate's terms.
    pub(crate) cap_gamma: RingElem,
    /// P0: `alpha_z + 2.sum(lde) + sum(chi)`, the affine head of its
    /// deferred check recipe.
    pub(crate) pre: RingElem,
}

/// One inner-product gate: `z = sum_i xs[i]*ys[i]`. A plain product is
/// the n = 1 case.
pub struct DotGroup<'a> {
    pub xs: &'a [Wire],
    pub ys: &'a [Wire],
}

/// Gate-level aggregates common to the plain and truncating inner
/// products: everything preprocessing derives except the output mask.
pub(crate) struct CorePrep {
    pub(crate) width: u8,
    /// P1/P2: full `sum psi_t`.
    pub(crate) psi: RingElem,
    /// P1/P2: `[Gamma]_j` summed over the gate's terms.
    pub(crate) cap_gamma: RingElem,
    /// P0: `2.sum(lde) + sum(chi)` over the gate's terms.
    pub(crate) p0_sum: RingElem,
}

/// Everything term-indexed that preprocessing accumulates before the
/// proof phase. Vectors a role does not hold stay empty.
struct TermBank {
    lf1: Vec<RingElem>,
    lf2: Vec<RingElem>,
    lde1: Vec<RingElem>,
    lde2: Vec<RingElem>,
    lde_full: Vec<RingElem>,
    psir: Vec<RingElem>,
    /// Own share sent in round 2, and the peer's received one.
    fsh_own: Vec<RingElem>,
    fsh_other: Vec<RingElem>,
}

/// Preprocessing for a batch of inner-product gates: two rounds of
/// share derivation, then the batched distributed proof (two more
/// rounds). Returns one `GatePrep` per group.
pub fn dotp_prep_batch(
    sess: &mut Session,
    zk: &ZkSetup,
    groups: &[DotGroup],
) -> Result<Vec<GatePrep>> {
    let width = zk.ell;
    let cores = dotp_prep_core(sess, zk, groups)?;
    let me = sess.role;
    let z = RingElem::zero(width);
    let mut preps = Vec::with_capacity(cores.len());
    for core in cores {
        let gid = sess.ctr("mult");
        let az1 = match me {
            Role::P2 => z,
            _ => sess.prf_elems(KeyId::K01, "mult.az1", gid, width, 1)?[0],
        };
        let az2 = match me {
            Role::P1 => z,
            _ => sess.prf_elems(KeyId::K02, "mult.az2", gid, width, 1)?[0],
        };
        let gamma_z = match me {
            Role::P0 => z,
            _ => sess.prf_elems(KeyId::K12, "mult.gz", gid, width, 1)?[0],
        };
        let pre = match me {
            Role::P0 => az1 + az2 + core.p0_sum,
            _ => z,
        };
        preps.push(GatePrep {
            width,
            az1,
            az2,
            gamma_z,
            psi: core.psi,
            cap_gamma: core.cap_gamma,
            pre,
        });
    }
    Ok(preps)
}

/// The mask-independent bulk of `dotp_prep_batch`: correlated
/// randomness, the two derivation rounds, the distributed proof, and
/// the per-gate aggregation. Callers that mask the output differently
/// (the truncating dot product) build on this directly.
pub(crate) fn dotp_prep_core(
    sess: &mut Session,
    zk: &ZkSetup,
    groups: &[DotGroup],
) -> Result<Vec<CorePrep>> {
    // Boolean gadgets run width-1 products inside a wider session, so
    // the setup width only has to match the wires, not the session.
    let width = zk.ell;
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let mut terms: Vec<(&Wire, &Wire)> = Vec::new();
    for g in groups {
        assert!(!g.xs.is_empty() && g.xs.len() == g.ys.len());
        for (x, y) in g.xs.iter().zip(g.ys) {
            assert_eq!(x.width(), width);
            assert_eq!(y.width(), width);
            terms.push((x, y));
        }
    }
    let t = terms.len();
    let me = sess.role;
    let bid = sess.ctr("zkpc");

    // Key-derived correlated randomness, one element per term.
    let zero = vec![RingElem::zero(width); t];
    let lf1 = match me {
        Role::P2 => zero.clone(),
        _ => sess.prf_elems(KeyId::K01, "zk.lf1", bid, width, t)?,
    };
    let lf2 = match me {
        Role::P1 => zero.clone(),
        _ => sess.prf_elems(KeyId::K02, "zk.lf2", bid, width, t)?,
    };
    let lde1 = match me {
        Role::P2 => zero.clone(),
        _ => sess.prf_elems(KeyId::K01, "zk.lde1", bid, width, t)?,
    };
    let psir = match me {
        Role::P0 => zero.clone(),
        _ => sess.prf_elems(KeyId::K12, "zk.psir", bid, width, t)?,
    };

    // Round 1: P0 splits lde = alpha_x.alpha_y and sends P2 its half.
    let mut lde_full = Vec::new();
    let mut lde2 = Vec::new();
    match me {
        Role::P0 => {
            lde_full = terms
                .iter()
                .map(|(x, y)| {
                    (x.sh.alpha1() + x.sh.alpha2()) * (y.sh.alpha1() + y.sh.alpha2())
                })
                .collect();
            lde2 = lde_full
                .iter()
                .zip(&lde1)
                .map(|(&full, &h1)| full - h1)
                .collect();
            sess.send_elems(Role::P2, Phase::Prep, Tag::Gate, &lde2, "zkpc.lde")?;
        }
        Role::P1 => {}
        Role::P2 => {
            lde2 = sess.recv_elems(Role::P0, Phase::Prep, width, t)?;
        }
    }
    sess.net.round_barrier(Phase::Prep);

    // Round 2: P1 and P2 exchange their masked-product shares.
    let mut fsh_own = Vec::new();
    let mut fsh_other = Vec::new();
    if me != Role::P0 {
        fsh_own = terms
            .iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let (gx, gy) = (x.sh.gamma(), y.sh.gamma());
                let (ax, ay) = (x.sh.local_alpha(), y.sh.local_alpha());
                let head = match me {
                    Role::P1 => lde1[i] + lf1[i],
                    _ => gx * gy + lde2[i] + lf2[i],
                };
                head - ax * gy - ay * gx
            })
            .collect();
        let peer = me.online_peer();
        if me == Role::P1 {
            sess.send_elems(peer, Phase::Prep, Tag::Gate, &fsh_own, "zkpc.fshare")?;
            fsh_other = sess.recv_elems(peer, Phase::Prep, width, t)?;
        } else {
            fsh_other = sess.recv_elems(peer, Phase::Prep, width, t)?;
            sess.send_elems(peer, Phase::Prep, Tag::Gate, &fsh_own, "zkpc.fshare")?;
        }
    }
    sess.net.round_barrier(Phase::Prep);

    let bank = TermBank {
        lf1,
        lf2,
        lde1,
        lde2,
        lde_full,
        psir,
        fsh_own,
        fsh_other,
    };

    // Rounds 3 and 4: every server proves its per-term products.
    zkpc_prove_phase(sess, zk, bid, &terms, &bank)?;

    // Aggregate per output gate.
    let mut cores = Vec::with_capacity(groups.len());
    let z = RingElem::zero(width);
    let mut off = 0usize;
    for g in groups {
        let n = g.xs.len();
        let mut core = CorePrep {
            width,
            psi: z,
            cap_gamma: z,
            p0_sum: z,
        };
        match me {
            Role::P0 => {
                let mut acc = z;
                for i in off..off + n {
                    let lde = bank.lde_full[i];
                    acc += lde + lde + bank.lf1[i] + bank.lf2[i];
                }
                core.p0_sum = acc;
            }
            Role::P1 | Role::P2 => {
                let mut psi_sum = z;
                let mut gam_sum = z;
                for i in off..off + n {
                    let (x, y) = terms[i];
                    let (gx, gy) = (x.sh.gamma(), y.sh.gamma());
                    let f_plus_lf = bank.fsh_own[i] + bank.fsh_other[i];
                    let psi = f_plus_lf - gx * gy;
                    let (psi_j, lf_j) = match me {
                        Role::P1 => (bank.psir[i], bank.lf1[i]),
                        _ => (psi - bank.psir[i], bank.lf2[i]),
                    };
                    psi_sum += psi;
                    gam_sum +=
                        gx * y.sh.local_alpha() + gy * x.sh.local_alpha() + psi_j - lf_j;
                }
                core.psi = psi_sum;
                core.cap_gamma = gam_sum;
            }
        }
        cores.push(core);
        off += n;
    }
    Ok(cores)
}

/// Builds and checks the three batched proofs (one per proving server)
/// over all terms of the current preprocessing call.
fn zkpc_prove_phase(
    sess: &mut Session,
    zk: &ZkSetup,
    bid: u64,
    terms: &[(&Wire, &Wire)],
    bank: &TermBank,
) -> Result<()> {
    let me = sess.role;
    let t = terms.len();

    // Proof shares this server sends (indexed by destination) and the
    // shares it receives (indexed by prover).
    let mut out_bufs: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut mask_rng = sess
        .keys
        .private_stream(&Ctx::new("zk.mask").arg(bid));

    let params_me = zk.params(me);
    let spt = slots_per_term(me);
    let (verif_lo, verif_hi) = {
        let peers = me.peers();
        (peers[0], peers[1])
    };
    {
        let ctx = &params_me.ctx;
        let m = params_me.m;
        let nbatch = (t * spt + m - 1) / m;
        let mut a_slice = vec![ctx.zero(); m];
        let mut b_slice = vec![ctx.zero(); m];
        for bi in 0..nbatch {
            for s in 0..m {
                let slot = bi * m + s;
                let (a, b) = if slot < t * spt {
                    prover_slot(me, terms, slot)
                } else {
                    (RingElem::zero(zk.ell), RingElem::zero(zk.ell))
                };
                a_slice[s] = ctx.from_ring(a);
                b_slice[s] = ctx.from_ring(b);
            }
            for _rep in 0..params_me.rho {
                let z1 = ctx.sample(|| mask_rng.next_u64());
                let z2 = ctx.sample(|| mask_rng.next_u64());
                let mut proof = zk_prove(params_me, &a_slice, &b_slice, z1, z2);
                if sess.fault_fires("zkpc.proof") {
                    proof.c_h[0] = ctx.add(&proof.c_h[0], &ctx.one());
                }
                let (s_lo, s_hi) =
                    split_proof(ctx, &proof, || ctx.sample(|| mask_rng.next_u64()));
                out_bufs[verif_lo.index()].extend_from_slice(&s_lo.to_bytes(ctx));
                out_bufs[verif_hi.index()].extend_from_slice(&s_hi.to_bytes(ctx));
            }
        }
    }

    // Round 3: proof shares, one frame per ordered pair.
    let mut proof_from: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (src, dst) in PAIR_ORDER {
        if src == me {
            sess.net.send(
                dst,
                MsgType::ZkMsg,
                Phase::Prep,
                Tag::Amortized,
                &out_bufs[dst.index()],
            )?;
        } else if dst == me {
            proof_from[src.index()] = sess.net.recv(src, MsgType::ZkMsg, Phase::Prep)?;
        }
    }
    sess.net.round_barrier(Phase::Prep);

    // Verify both peers' proofs: compute answers, route them to each
    // proof's combiner, then the combiner decides.
    let mut ans_out: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut own_answers: Vec<ZkAnswer> = Vec::new();
    let mut combined_prover = None;
    for prover in Role::ALL {
        if prover == me {
            continue;
        }
        let combiner = Role::from_index((prover.index() + 1) % 3);
        let answers = verifier_answers(
            sess,
            zk,
            bid,
            prover,
            terms,
            bank,
            &proof_from[prover.index()],
            combiner != me,
        )?;
        if combiner == me {
            own_answers = answers;
            combined_prover = Some(prover);
        } else {
            let ctx = &zk.params(prover).ctx;
            let buf = &mut ans_out[combiner.index()];
            for a in &answers {
                buf.extend_from_slice(&a.to_bytes(ctx));
            }
        }
    }

    // Round 4: each non-combining verifier forwards its answers.
    let mut ans_in = Vec::new();
    for (src, dst) in PAIR_ORDER {
        if src == me && !ans_out[dst.index()].is_empty() {
            sess.net.send(
                dst,
                MsgType::ZkMsg,
                Phase::Prep,
                Tag::Amortized,
                &ans_out[dst.index()],
            )?;
        } else if dst == me && src == other_verifier(prover_of_combiner(me), me) {
            ans_in = sess.net.recv(src, MsgType::ZkMsg, Phase::Prep)?;
        }
    }
    sess.net.round_barrier(Phase::Prep);

    // Decide the proof this server combines, and queue the accept bits
    // for cross-checking.
    let prover = combined_prover.expect("every server combines one proof");
    let ctx = &zk.params(prover).ctx;
    let stride = 4 * ctx.elem_byte_len();
    if ans_in.len() != own_answers.len() * stride {
        return Err(sess.net.abort("query answer stream has wrong length"));
    }
    for (i, own) in own_answers.iter().enumerate() {
        let (theirs, _) = ZkAnswer::from_bytes(ctx, &ans_in[i * stride..])?;
        if !zk_decide(ctx, own, &theirs) {
            return Err(sess
                .net
                .abort(format!("distributed proof by {prover} rejected")));
        }
    }
    // Accept bits: for each proof, its combiner and its non-combining
    // verifier cross-check a "accepted" byte at the next epoch close.
    // Each server combines one proof and forwards answers for another,
    // so it queues exactly two accept bytes.
    let ov = other_verifier(prover, me);
    sess.enqueue_check(
        ov,
        format!("zk.{bid}.{}", prover.index()),
        vec![1u8],
        "zkpc.accept",
    );
    let forwarded = Role::from_index((me.index() + 1) % 3); // the prover whose answers I sent
    debug_assert_ne!(forwarded, me);
    let their_combiner = Role::from_index((forwarded.index() + 1) % 3);
    sess.enqueue_check(
        their_combiner,
        format!("zk.{bid}.{}", forwarded.index()),
        vec![1u8],
        "zkpc.accept",
    );
    Ok(())
}

/// The prover whose proof `combiner` decides.
fn prover_of_combiner(combiner: Role) -> Role {
    Role::from_index((combiner.index() + 2) % 3)
}

/// Of a prover's two verifiers, the one that is not the combiner.
fn other_verifier(prover: Role, combiner: Role) -> Role {
    for r in prover.peers() {
        if r != combiner {
            return r;
        }
    }
    unreachable!()
}

fn slots_per_term(prover: Role) -> usize {
    match prover {
        Role::P0 => 1,
        _ => 2,
    }
}

/// Full operand pair for one of this prover's proof slots.
fn prover_slot(me: Role, terms: &[(&Wire, &Wire)], slot: usize) -> (RingElem, RingElem) {
    match me {
        Role::P0 => {
            let (x, y) = terms[slot];
            (
                x.sh.alpha1() + x.sh.alpha2(),
                y.sh.alpha1() + y.sh.alpha2(),
            )
        }
        _ => {
            let (x, y) = terms[slot / 2];
            if slot % 2 == 0 {
                (x.sh.local_alpha(), y.sh.gamma())
            } else {
                (y.sh.local_alpha(), x.sh.gamma())
            }
        }
    }
}

/// This verifier's additive share of a prover slot's operands.
fn verifier_slot(
    me: Role,
    prover: Role,
    terms: &[(&Wire, &Wire)],
    slot: usize,
    width: u8,
) -> (RingElem, RingElem) {
    let z = RingElem::zero(width);
    match prover {
        Role::P0 => {
            let (x, y) = terms[slot];
            (x.sh.local_alpha(), y.sh.local_alpha())
        }
        _ => {
            let (x, y) = terms[slot / 2];
            match me {
                // P0 holds the prover's alpha half; the masked values
                // live with the other evaluator.
                Role::P0 => {
                    let pick = |w: &Wire| match prover {
                        Role::P1 => w.sh.alpha1(),
                        _ => w.sh.alpha2(),
                    };
                    if slot % 2 == 0 {
                        (pick(x), z)
                    } else {
                        (pick(y), z)
                    }
                }
                _ => {
                    if slot % 2 == 0 {
                        (z, y.sh.gamma())
                    } else {
                        (z, x.sh.gamma())
                    }
                }
            }
        }
    }
}

/// This verifier's share of the affine part of term `i`'s relation
/// under prover `prover` (entering the linear check with weight mu_i).
fn verifier_affine(
    me: Role,
    prover: Role,
    terms: &[(&Wire, &Wire)],
    bank: &TermBank,
    i: usize,
) -> RingElem {
    match (prover, me) {
        (Role::P0, _) => -match me {
            Role::P1 => bank.lde1[i],
            _ => bank.lde2[i],
        },
        (Role::P1, Role::P0) => -(bank.lde1[i] + bank.lf1[i]),
        (Role::P1, Role::P2) => bank.fsh_other[i],
        (Role::P2, Role::P0) => -(bank.lde2[i] + bank.lf2[i]),
        (Role::P2, Role::P1) => {
            let (x, y) = terms[i];
            bank.fsh_other[i] - x.sh.gamma() * y.sh.gamma()
        }
        _ => unreachable!("a server never verifies itself"),
    }
}

/// Parses one prover's proof-share stream and produces this verifier's
/// query answers, in (batch, repetition) order. `will_send` marks
/// answers headed to the combiner, where a scripted answer fault may
/// land.
#[allow(clippy::too_many_arguments)]
fn verifier_answers(
    sess: &mut Session,
    zk: &ZkSetup,
    bid: u64,
    prover: Role,
    terms: &[(&Wire, &Wire)],
    bank: &TermBank,
    proof_bytes: &[u8],
    will_send: bool,
) -> Result<Vec<ZkAnswer>> {
    let params = zk.params(prover);
    let ctx = &params.ctx;
    let m = params.m;
    let me = sess.role;
    let t = terms.len();
    let spt = slots_per_term(prover);
    let tpb = m / spt;
    let nbatch = (t * spt + m - 1) / m;

    let stride = proof_wire_len(params);
    if proof_bytes.len() != nbatch * params.rho * stride {
        return Err(sess.net.abort("proof share stream has wrong length"));
    }

    // Both verifiers derive the challenge stream from the pairwise key
    // the prover does not hold.
    let ch_key = match prover {
        Role::P0 => KeyId::K12,
        Role::P1 => KeyId::K02,
        Role::P2 => KeyId::K01,
    };
    let ch_ctx = Ctx::new("zk.ch").arg(prover.index() as u64).arg(bid);
    let seed_elems = sess.keys.elems(ch_key, &ch_ctx, 64, 4)?;
    let mut seed = [0u8; 32];
    for (i, e) in seed_elems.iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&e.raw().to_le_bytes());
    }
    let mut ch = ChaCha12Rng::from_seed(seed);

    let mut answers = Vec::with_capacity(nbatch * params.rho);
    let mut va = vec![ctx.zero(); m];
    let mut vb = vec![ctx.zero(); m];
    let mut lin_coeff = vec![ctx.zero(); m];
    for bi in 0..nbatch {
        for s in 0..m {
            let slot = bi * m + s;
            let (a, b) = if slot < t * spt {
                verifier_slot(me, prover, terms, slot, zk.ell)
            } else {
                (RingElem::zero(zk.ell), RingElem::zero(zk.ell))
            };
            va[s] = ctx.from_ring(a);
            vb[s] = ctx.from_ring(b);
        }
        for rep in 0..params.rho {
            let mut lin_const = ctx.zero();
            for ti in 0..tpb {
                let mu = ctx.sample(|| ch.next_u64());
                let term = bi * tpb + ti;
                for s in 0..spt {
                    lin_coeff[ti * spt + s] = mu;
                }
                if term < t {
                    let aff = verifier_affine(me, prover, terms, bank, term);
                    lin_const = ctx.add(&lin_const, &ctx.mul(&mu, &ctx.from_ring(aff)));
                }
            }
            let r = params.sample_challenge(|| ch.next_u64());
            let off = (bi * params.rho + rep) * stride;
            let proof = ZkProof::from_bytes(ctx, &proof_bytes[off..off + stride])?;
            let slice = VerifierSlice {
                a: &va,
                b: &vb,
                lin_coeff: &lin_coeff,
                lin_const,
                proof: &proof,
            };
            let mut ans = zk_answer(params, &slice, &r);
            if will_send && sess.fault_fires("zkpc.answer") {
                ans.lin = ctx.add(&ans.lin, &ctx.one());
            }
            answers.push(ans);
        }
    }
    Ok(answers)
}

/// Serialized size of one proof share under `params` (the witness
/// block is empty in this encoding; `c_h` always has 2m+1 entries).
fn proof_wire_len(params: &ZkParams) -> usize {
    4 + (2 * params.m + 3) * params.ctx.elem_byte_len()
}

/// Online phase for a batch of inner-product gates: P1 and P2 exchange
/// one masked share per gate, P0 stays silent and folds its check into
/// the epoch's deferred verification.
pub fn dotp_online_batch(
    sess: &mut Session,
    preps: &[GatePrep],
    groups: &[DotGroup],
) -> Result<Vec<Wire>> {
    dotp_online_in(sess, preps, groups, Phase::Online)
}

/// As `dotp_online_batch`, with the exchange recorded under `phase`.
/// Gadgets that multiply inside their own preprocessing (the boolean
/// adder behind bit extraction) pass `Phase::Prep` so their rounds and
/// bytes land where the work actually happens.
pub(crate) fn dotp_online_in(
    sess: &mut Session,
    preps: &[GatePrep],
    groups: &[DotGroup],
    phase: Phase,
) -> Result<Vec<Wire>> {
    assert_eq!(preps.len(), groups.len());
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let me = sess.role;
    let width = preps[0].width;
    let mut out = Vec::with_capacity(groups.len());
    match me {
        Role::P0 => {
            for (prep, g) in preps.iter().zip(groups) {
                let bg = sess.defer_bg(width, None, "");
                let mut recipe = Recipe {
                    pre: prep.pre,
                    terms: Vec::with_capacity(2 * g.xs.len()),
                };
                for (x, y) in g.xs.iter().zip(g.ys) {
                    let ax = x.sh.alpha1() + x.sh.alpha2();
                    let ay = y.sh.alpha1() + y.sh.alpha2();
                    recipe.terms.push((x.bg.clone(), ay));
                    recipe.terms.push((y.bg.clone(), ax));
                }
                sess.defer_bstar(Some(recipe), None, "");
                out.push(Wire {
                    sh: RssShare::p0(prep.az1, prep.az2, RingElem::zero(width)),
                    bg,
                });
            }
        }
        Role::P1 | Role::P2 => {
            let shares: Vec<RingElem> = preps
                .iter()
                .zip(groups)
                .map(|(prep, g)| {
                    let mut acc = prep.cap_gamma
                        + match me {
                            Role::P1 => prep.az1,
                            _ => prep.az2,
                        };
                    for (x, y) in g.xs.iter().zip(g.ys) {
                        let (bx, by) = (x.sh.beta(), y.sh.beta());
                        if me == Role::P2 {
                            acc += bx * by;
                        }
                        acc -= bx * y.sh.local_alpha() + by * x.sh.local_alpha();
                    }
                    acc
                })
                .collect();
            let peer = me.online_peer();
            let other = if me == Role::P1 {
                sess.send_elems(peer, phase, Tag::Gate, &shares, "mult.beta_share")?;
                sess.recv_elems(peer, phase, width, shares.len())?
            } else {
                let o = sess.recv_elems(peer, phase, width, shares.len())?;
                sess.send_elems(peer, phase, Tag::Gate, &shares, "mult.beta_share")?;
                o
            };
            for (i, (prep, g)) in preps.iter().zip(groups).enumerate() {
                let beta_z = shares[i] + other[i];
                let slot = if me == Role::P1 { "mult.bg" } else { "mult.bg.h" };
                sess.defer_bg(width, Some(beta_z + prep.gamma_z), slot);
                let mut check = beta_z + prep.psi;
                for (x, y) in g.xs.iter().zip(g.ys) {
                    check -= x.sh.beta() * y.sh.beta();
                }
                sess.defer_bstar(None, Some(check), "mult.bstar");
                let sh = match me {
                    Role::P1 => RssShare::p1(prep.az1, beta_z, prep.gamma_z),
                    _ => RssShare::p2(prep.az2, beta_z, prep.gamma_z),
                };
                out.push(Wire::from_share(sh));
            }
        }
    }
    sess.net.round_barrier(phase);
    sess.gate_tick(groups.len())?;
    Ok(out)
}

/// Preprocessing plus online phase for a batch of inner products.
pub fn pi_dotp_batch(
    sess: &mut Session,
    zk: &ZkSetup,
    groups: &[DotGroup],
) -> Result<Vec<Wire>> {
    let preps = dotp_prep_batch(sess, zk, groups)?;
    dotp_online_batch(sess, &preps, groups)
}

/// Single inner product.
pub fn pi_dotp(sess: &mut Session, zk: &ZkSetup, xs: &[Wire], ys: &[Wire]) -> Result<Wire> {
    let groups = [DotGroup { xs, ys }];
    Ok(pi_dotp_batch(sess, zk, &groups)?.pop().unwrap())
}

/// Batch of plain products `z_i = x_i * y_i`.
pub fn pi_mult_batch(
    sess: &mut Session,
    zk: &ZkSetup,
    xs: &[Wire],
    ys: &[Wire],
) -> Result<Vec<Wire>> {
    assert_eq!(xs.len(), ys.len());
    let groups: Vec<DotGroup> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| DotGroup {
            xs: std::slice::from_ref(x),
            ys: std::slice::from_ref(y),
        })
        .collect();
    pi_dotp_batch(sess, zk, &groups)
}

/// Single product.
pub fn pi_mult(sess: &mut Session, zk: &ZkSetup, x: &Wire, y: &Wire) -> Result<Wire> {
    Ok(pi_mult_batch(sess, zk, std::slice::from_ref(x), std::slice::from_ref(y))?
        .pop()
        .unwrap())
}

/// Product batch whose exchange round is recorded under `phase`.
pub(crate) fn mult_batch_in(
    sess: &mut Session,
    zk: &ZkSetup,
    xs: &[Wire],
    ys: &[Wire],
    phase: Phase,
) -> Result<Vec<Wire>> {
    assert_eq!(xs.len(), ys.len());
    let groups: Vec<DotGroup> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| DotGroup {
            xs: std::slice::from_ref(x),
            ys: std::slice::from_ref(y),
        })
        .collect();
    let preps = dotp_prep_batch(sess, zk, &groups)?;
    dotp_online_in(sess, &preps, &groups, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{pi_jsh_prep_batch, pi_rec, pi_sh_batch, FaultPlan};
    use crate::sharing::SharePair;
    use crate::sim::{sim, sim_with};
    use crate::Error;

    fn elems(vals: &[i64], width: u8) -> Vec<RingElem> {
        vals.iter().map(|&v| RingElem::from_i64(v, width)).collect()
    }

    #[test]
    fn mult_matches_plaintext() {
        let xs = [3i64, -7, (1 << 40) + 5, -1, 0];
        let ys = [5i64, 9, -17, 12345, -99];
        let (results, _) = sim(64, 11, move |sess| {
            let zk = ZkSetup::new(64, ZkConfig::single_rep())?;
            let xv = elems(&xs, 64);
            let yv = elems(&ys, 64);
            let xw = pi_sh_batch(
                sess,
                Role::P1,
                (sess.role == Role::P1).then_some(xv.as_slice()),
                64,
                xs.len(),
            )?;
            let yw = pi_sh_batch(
                sess,
                Role::P2,
                (sess.role == Role::P2).then_some(yv.as_slice()),
                64,
                ys.len(),
            )?;
            let zw = pi_mult_batch(sess, &zk, &xw, &yw)?;
            pi_rec(sess, &zw)
        });
        for r in results {
            let opened = r.unwrap();
            for ((&x, &y), z) in xs.iter().zip(&ys).zip(opened) {
                assert_eq!(z, RingElem::from_i64(x, 64) * RingElem::from_i64(y, 64));
            }
        }
    }

    #[test]
    fn boolean_and_exhaustive() {
        let pairs = [(0u64, 0u64), (0, 1), (1, 0), (1, 1)];
        let (results, _) = sim(1, 5, move |sess| {
            let zk = ZkSetup::new(1, ZkConfig::single_rep())?;
            let xv: Vec<RingElem> = pairs.iter().map(|p| RingElem::new(p.0, 1)).collect();
            let yv: Vec<RingElem> = pairs.iter().map(|p| RingElem::new(p.1, 1)).collect();
            let dealer = (sess.role == Role::P0).then_some(xv.as_slice());
            let xw = pi_sh_batch(sess, Role::P0, dealer, 1, 4)?;
            let dealer = (sess.role == Role::P0).then_some(yv.as_slice());
            let yw = pi_sh_batch(sess, Role::P0, dealer, 1, 4)?;
            let zw = pi_mult_batch(sess, &zk, &xw, &yw)?;
            pi_rec(sess, &zw)
        });
        for r in results {
            let opened = r.unwrap();
            for (&(x, y), z) in pairs.iter().zip(opened) {
                assert_eq!(z.raw(), x & y, "AND({x},{y})");
            }
        }
    }

    #[test]
    fn dotp_matches_plaintext() {
        for &n in &[1usize, 3, 10] {
            let xs: Vec<i64> = (0..n as i64).map(|i| 7 * i - 11).collect();
            let ys: Vec<i64> = (0..n as i64).map(|i| -3 * i + 5).collect();
            let expect: i64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
            let xs2 = xs.clone();
            let ys2 = ys.clone();
            let (results, _) = sim(16, 21 + n as u64, move |sess| {
                let zk = ZkSetup::new(16, ZkConfig::single_rep())?;
                let xv = elems(&xs2, 16);
                let yv = elems(&ys2, 16);
                let xw = pi_sh_batch(
                    sess,
                    Role::P1,
                    (sess.role == Role::P1).then_some(xv.as_slice()),
                    16,
                    n,
                )?;
                let yw = pi_sh_batch(
                    sess,
                    Role::P2,
                    (sess.role == Role::P2).then_some(yv.as_slice()),
                    16,
                    n,
                )?;
                let z = pi_dotp(sess, &zk, &xw, &yw)?;
                pi_rec(sess, &[z])
            });
            for r in results {
                assert_eq!(r.unwrap()[0], RingElem::from_i64(expect, 16), "n={n}");
            }
        }
    }

    /// Shares with zero online cost, so budget tests see only the
    /// multiplication traffic.
    fn silent_inputs(sess: &mut Session, n: usize) -> Result<(Vec<Wire>, Vec<Wire>)> {
        let member = sess.role != Role::P0;
        let xv: Vec<RingElem> = (0..n).map(|i| RingElem::new(3 * i as u64 + 1, 64)).collect();
        let yv: Vec<RingElem> = (0..n).map(|i| RingElem::new(i as u64 + 2, 64)).collect();
        let xw = pi_jsh_prep_batch(
            sess,
            SharePair::P1P2,
            member.then_some(xv.as_slice()),
            64,
            n,
        )?;
        let yw = pi_jsh_prep_batch(
            sess,
            SharePair::P1P2,
            member.then_some(yv.as_slice()),
            64,
            n,
        )?;
        Ok((xw, yw))
    }

    #[test]
    fn budgets_mult_three_elements_each_phase() {
        use crate::transport::{Phase, Tag};
        let n = 8usize;
        let (results, stats) = sim(64, 33, move |sess| {
            let zk = ZkSetup::new(64, ZkConfig::single_rep())?;
            let (xw, yw) = silent_inputs(sess, n)?;
            let zw = pi_mult_batch(sess, &zk, &xw, &yw)?;
            // Keep outputs shared; the run ends with the epoch flush.
            let _ = zw;
            Ok(())
        });
        for r in results {
            r.unwrap();
        }
        let el = 8 * n as u64;
        // Preprocessing, per gate: one lde half P0->P2, one masked
        // product share each way between P1 and P2.
        assert_eq!(stats.payload_between(Role::P0, Role::P2, Phase::Prep, Tag::Gate), el);
        assert_eq!(stats.payload_between(Role::P1, Role::P2, Phase::Prep, Tag::Gate), el);
        assert_eq!(stats.payload_between(Role::P2, Role::P1, Phase::Prep, Tag::Gate), el);
        assert_eq!(stats.payload_total(Phase::Prep, Tag::Gate), 3 * el);
        // Online, per gate: the two beta shares plus the deferred
        // beta+gamma flush to P0.
        assert_eq!(stats.payload_between(Role::P1, Role::P2, Phase::Online, Tag::Gate), el);
        assert_eq!(stats.payload_between(Role::P2, Role::P1, Phase::Online, Tag::Gate), el);
        assert_eq!(stats.payload_between(Role::P1, Role::P0, Phase::Online, Tag::Gate), el);
        assert_eq!(stats.payload_total(Phase::Online, Tag::Gate), 3 * el);
        // One online round, four preprocessing rounds, two verification
        // rounds for the closing epoch.
        assert_eq!(stats.rounds(Phase::Online).unwrap(), 1);
        assert_eq!(stats.rounds(Phase::Prep).unwrap(), 4);
        assert_eq!(stats.rounds(Phase::Verify).unwrap(), 2);
    }

    #[test]
    fn budgets_dotp_independent_of_length() {
        use crate::transport::{Phase, Tag};
        let (groups, n) = (3usize, 7usize);
        let (results, stats) = sim(64, 34, move |sess| {
            let zk = ZkSetup::new(64, ZkConfig::single_rep())?;
            let (xw, yw) = silent_inputs(sess, groups * n)?;
            let gs: Vec<DotGroup> = (0..groups)
                .map(|g| DotGroup {
                    xs: &xw[g * n..(g + 1) * n],
                    ys: &yw[g * n..(g + 1) * n],
                })
                .collect();
            let zw = pi_dotp_batch(sess, &zk, &gs)?;
            let _ = zw;
            Ok(())
        });
        for r in results {
            r.unwrap();
        }
        // Preprocessing scales with the term count, online with the
        // number of inner products only.
        assert_eq!(
            stats.payload_total(Phase::Prep, Tag::Gate),
            3 * 8 * (groups * n) as u64
        );
        assert_eq!(
            stats.payload_total(Phase::Online, Tag::Gate),
            3 * 8 * groups as u64
        );
        assert_eq!(stats.rounds(Phase::Online).unwrap(), 1);
    }

    #[test]
    fn light_and_padded_configs_stay_correct() {
        for cfg in [ZkConfig::light(), ZkConfig::single_rep()] {
            let (results, _) = sim(64, 40 + cfg.m as u64, move |sess| {
                let zk = ZkSetup::new(64, cfg)?;
                let (xw, yw) = silent_inputs(sess, 3)?;
                let zw = pi_mult_batch(sess, &zk, &xw, &yw)?;
                pi_rec(sess, &zw)
            });
            for r in results {
                let opened = r.unwrap();
                for (i, z) in opened.iter().enumerate() {
                    let expect = (3 * i as u64 + 1) * (i as u64 + 2);
                    assert_eq!(z.raw(), expect, "cfg m={}", cfg.m);
                }
            }
        }
    }

    #[test]
    fn fault_matrix_every_slot_aborts() {
        let cases: [(&str, Role); 9] = [
            ("zkpc.lde", Role::P0),
            ("zkpc.fshare", Role::P1),
            ("zkpc.proof", Role::P1),
            ("zkpc.answer", Role::P0),
            ("zkpc.accept", Role::P1),
            ("mult.beta_share", Role::P2),
            ("mult.bg", Role::P1),
            ("mult.bg.h", Role::P2),
            ("mult.bstar", Role::P2),
        ];
        for (slot, who) in cases {
            let mut faults = [FaultPlan::none(), FaultPlan::none(), FaultPlan::none()];
            faults[who.index()] = FaultPlan::tamper(slot);
            let (results, _) = sim_with(64, 55, faults, move |sess| {
                let zk = ZkSetup::new(64, ZkConfig::single_rep())?;
                let (xw, yw) = silent_inputs(sess, 2)?;
                let zw = pi_mult_batch(sess, &zk, &xw, &yw)?;
                pi_rec(sess, &zw)
            });
            for role in Role::ALL {
                if role == who {
                    continue;
                }
                match &results[role.index()] {
                    Err(Error::Abort(_)) => {}
                    other => panic!("slot {slot}: honest {role} ended with {other:?}"),
                }
            }
        }
    }
}
