//! Nonlinear gadgets: truncation pairs, the truncating dot product,
//! bit extraction, bit-to-arithmetic conversion, comparison, and the
//! activation functions built from them.
//!
//! Truncation follows the mask-and-open pattern: preprocessing deals a
//! random `r` together with a sharing of its arithmetic shift `r^d`,
//! the online phase opens `z - r` to the evaluators, and the result is
//! the truncated opening plus `r^d`. Two carries creep in, one from
//! the split of `r` across the evaluators' low bits and one from the
//! fractional parts of `z - r` and `r`; the dealt `r^d` absorbs the
//! first and a public `+1` recenters the pair, leaving an error of at
//! most one unit in the last place.
//!
//! Bit extraction computes `msb(v) = msb(beta + (-[alpha]_1) +
//! (-[alpha]_2))` and comes in two shapes: a prefix adder over shared
//! bits whose online cost is `1 + log2(ell)` rounds, and a two-garbler
//! circuit evaluation that needs exactly two online rounds. Both
//! return a boolean sharing of the sign bit.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::crypto::{commit, hash_bytes, Commitment, Ctx, KeyId, SALT_BYTES};
use crate::garble::{build_msb_circuit, eval, garble, GarbleOut, WireLabel, LABEL_BYTES};
use crate::layer1::{dotp_prep_core, mult_batch_in, pi_mult_batch, DotGroup, ZkSetup};
use crate::protocols::{
    encode_elems, pi_jsh_batch, pi_jsh_prep_batch, pi_sh_prep_batch, wire_lincomb, Recipe,
    Session, Wire,
};
use crate::ring::{arith_shift_trunc, logical_split, shl_pow2, RingElem};
use crate::sharing::SharePair;
use crate::transport::{MsgType, Phase, Tag};
use crate::zkmult::ZkConfig;
use crate::{Result, Role};

/// Which bit-extraction circuit the composite gadgets use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitExtMode {
    /// Interactive prefix adder: `1 + log2(ell)` online rounds.
    Ppa,
    /// Two-garbler circuit: 2 online rounds.
    Gc,
}

/// The pair of proof setups the nonlinear gadgets need: one at the
/// data width for arithmetic products, one at width 1 for the boolean
/// layer. Build once per session and share across calls.
pub struct Kit {
    pub ell: u8,
    pub mode: BitExtMode,
    pub arith: ZkSetup,
    pub boolean: ZkSetup,
}

impl Kit {
    pub fn new(ell: u8, cfg: ZkConfig) -> Result<Kit> {
        Ok(Kit {
            ell,
            mode: BitExtMode::Ppa,
            arith: ZkSetup::new(ell, cfg)?,
            boolean: ZkSetup::new(1, cfg)?,
        })
    }

    pub fn with_mode(mut self, mode: BitExtMode) -> Kit {
        self.mode = mode;
        self
    }
}

/// One truncation pair: an additive sharing of a random `r` between
/// the evaluators (P0 knows `r` itself) and a masked sharing of its
/// truncation.
pub struct TruncPair {
    /// P1/P2: `[r]_j`; P0: `r`.
    pub r_share: RingElem,
    /// Sharing of `r^d`.
    pub rd: Wire,
}

/// The value P0 deals as `r^d`: the arithmetic shift of `r`, minus the
/// carry the evaluators' low parts produce when split at bit `d`. The
/// correction makes `r = 2^d * r^d + [r_d]_1 + [r_d]_2` an identity,
/// which is exactly what the pairwise check below verifies.
fn trunc_mask(r1: RingElem, r2: RingElem, d: u8) -> RingElem {
    let r = r1 + r2;
    let lowmask = (1u64 << d) - 1;
    let carry = ((r1.raw() & lowmask) + (r2.raw() & lowmask)) >> d;
    arith_shift_trunc(r, d) - RingElem::new(carry, r.width())
}

/// Deals `n` truncation pairs for shift `d`. Preprocessing only: two
/// elements of traffic per pair (the `r^d` sharing), plus a deferred
/// pairwise consistency check that binds P0 to the correct value.
pub fn pi_truncpair_batch(
    sess: &mut Session,
    width: u8,
    d: u8,
    n: usize,
) -> Result<Vec<TruncPair>> {
    assert!(d > 0 && d < width, "shift must be inside the ring");
    if n == 0 {
        return Ok(Vec::new());
    }
    let me = sess.role;
    let bid = sess.ctr("trunc");
    let r1 = match me {
        Role::P2 => Vec::new(),
        _ => sess.prf_elems(KeyId::K01, "trunc.r1", bid, width, n)?,
    };
    let r2 = match me {
        Role::P1 => Vec::new(),
        _ => sess.prf_elems(KeyId::K02, "trunc.r2", bid, width, n)?,
    };
    let rd_vals = if me == Role::P0 {
        let mut vals: Vec<RingElem> = (0..n).map(|i| trunc_mask(r1[i], r2[i], d)).collect();
        if sess.fault_fires("trunc.rd") {
            vals[0] += RingElem::one(width);
        }
        Some(vals)
    } else {
        None
    };
    let rd = pi_sh_prep_batch(sess, Role::P0, rd_vals.as_deref(), width, n)?;

    // P1 forms u = [r]_1 - 2^d.[r^d]_1 - [r_d]_1 and P2 forms
    // v = 2^d.[r^d]_2 + [r_d]_2 - [r]_2; honest dealing makes u = v
    // identically, so the digest comparison at epoch close catches any
    // deviation in the dealt r^d.
    match me {
        Role::P1 => {
            let u: Vec<RingElem> = (0..n)
                .map(|i| {
                    let rd1 = rd[i].sh.beta() - rd[i].sh.local_alpha();
                    r1[i] - shl_pow2(rd1, d) - logical_split(r1[i], d).1
                })
                .collect();
            sess.enqueue_check(Role::P2, format!("trunc.{bid}.uv"), encode_elems(&u), "trunc.uv");
        }
        Role::P2 => {
            let v: Vec<RingElem> = (0..n)
                .map(|i| {
                    let rd2 = -rd[i].sh.local_alpha();
                    shl_pow2(rd2, d) + logical_split(r2[i], d).1 - r2[i]
                })
                .collect();
            sess.enqueue_check(Role::P1, format!("trunc.{bid}.uv"), encode_elems(&v), "trunc.uv");
        }
        Role::P0 => {}
    }

    let out = (0..n)
        .map(|i| {
            let r_share = match me {
                Role::P0 => r1[i] + r2[i],
                Role::P1 => r1[i],
                Role::P2 => r2[i],
            };
            TruncPair {
                r_share,
                rd: rd[i].clone(),
            }
        })
        .collect();
    Ok(out)
}

pub fn pi_truncpair(sess: &mut Session, width: u8, d: u8) -> Result<TruncPair> {
    Ok(pi_truncpair_batch(sess, width, d, 1)?.pop().unwrap())
}

/// Preprocessed state for one truncating inner-product gate.
pub struct TrPrep {
    width: u8,
    d: u8,
    /// P1/P2: full `sum psi_t`.
    psi: RingElem,
    /// P1/P2: `[Gamma]_j` summed over the gate's terms.
    cap_gamma: RingElem,
    /// P0: affine head of the deferred `(z-r)*` recipe.
    pre: RingElem,
    pair: TruncPair,
}

/// Preprocessing for truncating inner products: the verified product
/// derivation shared with the plain dot product, plus one truncation
/// pair per gate in place of the output mask.
pub fn dotp_tr_prep_batch(
    sess: &mut Session,
    zk: &ZkSetup,
    groups: &[DotGroup],
    d: u8,
) -> Result<Vec<TrPrep>> {
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let cores = dotp_prep_core(sess, zk, groups)?;
    let pairs = pi_truncpair_batch(sess, zk.ell, d, groups.len())?;
    let me = sess.role;
    Ok(cores
        .into_iter()
        .zip(pairs)
        .map(|(core, pair)| {
            let pre = match me {
                Role::P0 => core.p0_sum - pair.r_share,
                _ => RingElem::zero(core.width),
            };
            TrPrep {
                width: core.width,
                d,
                psi: core.psi,
                cap_gamma: core.cap_gamma,
                pre,
                pair,
            }
        })
        .collect())
}

/// Online phase of the truncating inner product. The evaluators open
/// `z - r` between themselves (P0's consistency check rides the epoch
/// verification), truncate the opening locally, and reshare it; the
/// result is that sharing plus `r^d` plus a public one.
pub fn dotp_tr_online_batch(
    sess: &mut Session,
    preps: &[TrPrep],
    groups: &[DotGroup],
) -> Result<Vec<Wire>> {
    assert_eq!(preps.len(), groups.len());
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let me = sess.role;
    let width = preps[0].width;
    let d = preps[0].d;
    debug_assert!(preps.iter().all(|p| p.width == width && p.d == d));
    let mut t_vals: Option<Vec<RingElem>> = None;
    match me {
        Role::P0 => {
            for (prep, g) in preps.iter().zip(groups) {
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
            }
        }
        Role::P1 | Role::P2 => {
            let shares: Vec<RingElem> = preps
                .iter()
                .zip(groups)
                .map(|(prep, g)| {
                    let mut acc = prep.cap_gamma - prep.pair.r_share;
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
                sess.send_elems(peer, Phase::Online, Tag::Gate, &shares, "dotptr.zr")?;
                sess.recv_elems(peer, Phase::Online, width, shares.len())?
            } else {
                let o = sess.recv_elems(peer, Phase::Online, width, shares.len())?;
                sess.send_elems(peer, Phase::Online, Tag::Gate, &shares, "dotptr.zr")?;
                o
            };
            let mut ts = Vec::with_capacity(shares.len());
            for (i, (prep, g)) in preps.iter().zip(groups).enumerate() {
                let zr = shares[i] + other[i];
                let mut check = zr + prep.psi;
                for (x, y) in g.xs.iter().zip(g.ys) {
                    check -= x.sh.beta() * y.sh.beta();
                }
                sess.defer_bstar(None, Some(check), "dotptr.bstar");
                ts.push(arith_shift_trunc(zr, d));
            }
            t_vals = Some(ts);
        }
    }
    let t_wires = pi_jsh_batch(sess, SharePair::P1P2, t_vals.as_deref(), width, groups.len())?;
    sess.net.round_barrier(Phase::Online);
    sess.gate_tick(groups.len())?;
    let one = RingElem::one(width);
    preps
        .iter()
        .zip(&t_wires)
        .map(|(prep, t)| wire_lincomb(one, &[(one, t), (one, &prep.pair.rd)]))
        .collect()
}

/// Truncating inner products, preprocessing plus online.
pub fn pi_dotp_tr_batch(
    sess: &mut Session,
    zk: &ZkSetup,
    groups: &[DotGroup],
    d: u8,
) -> Result<Vec<Wire>> {
    let preps = dotp_tr_prep_batch(sess, zk, groups, d)?;
    dotp_tr_online_batch(sess, &preps, groups)
}

/// Single truncating inner product: `trunc(sum_i xs[i]*ys[i], d)`.
pub fn pi_dotp_tr(
    sess: &mut Session,
    zk: &ZkSetup,
    xs: &[Wire],
    ys: &[Wire],
    d: u8,
) -> Result<Wire> {
    let groups = [DotGroup { xs, ys }];
    Ok(pi_dotp_tr_batch(sess, zk, &groups, d)?.pop().unwrap())
}

fn flat_bits(vals: impl Iterator<Item = RingElem>, ell: u8) -> Vec<RingElem> {
    let mut out = Vec::new();
    for v in vals {
        for i in 0..ell {
            out.push(RingElem::new(v.bit(i), 1));
        }
    }
    out
}

/// Boolean addition `E = B + C` over `ell`-bit values shared bitwise
/// (value-major). Carries come from a Sklansky prefix scan, so the
/// product depth is `log2(ell)` levels; all products are recorded as
/// preprocessing, which is the only place this runs.
fn add_bits_prep(sess: &mut Session, kit: &Kit, b: &[Wire], c: &[Wire], ell: u8) -> Result<Vec<Wire>> {
    let lw = ell as usize;
    let n = b.len() / lw;
    debug_assert_eq!(b.len(), n * lw);
    let zero = RingElem::zero(1);
    let one = RingElem::one(1);

    let mut g = mult_batch_in(sess, &kit.boolean, b, c, Phase::Prep)?;
    let mut p: Vec<Wire> = b
        .iter()
        .zip(c)
        .map(|(x, y)| wire_lincomb(zero, &[(one, x), (one, y)]))
        .collect::<Result<_>>()?;
    let orig_p = p.clone();

    let mut lvl = 0usize;
    while (1usize << lvl) < lw {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut idx = Vec::new();
        for v in 0..n {
            for i in 0..lw {
                if (i >> lvl) & 1 == 1 {
                    let j = ((i >> lvl) << lvl) - 1;
                    let (wi, wj) = (v * lw + i, v * lw + j);
                    xs.push(p[wi].clone());
                    ys.push(g[wj].clone());
                    xs.push(p[wi].clone());
                    ys.push(p[wj].clone());
                    idx.push(wi);
                }
            }
        }
        let prods = mult_batch_in(sess, &kit.boolean, &xs, &ys, Phase::Prep)?;
        for (k, &wi) in idx.iter().enumerate() {
            g[wi] = wire_lincomb(zero, &[(one, &g[wi]), (one, &prods[2 * k])])?;
            p[wi] = prods[2 * k + 1].clone();
        }
        lvl += 1;
    }

    // E_0 = p_0; E_i = p_i xor G_{i-1} (the carry into position i).
    let mut e = Vec::with_capacity(n * lw);
    for v in 0..n {
        e.push(orig_p[v * lw].clone());
        for i in 1..lw {
            e.push(wire_lincomb(
                zero,
                &[(one, &orig_p[v * lw + i]), (one, &g[v * lw + i - 1])],
            )?);
        }
    }
    Ok(e)
}

/// The sign bit of `A + E` per value, for bitwise-shared `A` and `E`
/// (value-major). One batched AND for the leaf generate bits, then a
/// log-depth carry tree: `1 + ceil(log2(ell-1))` online rounds.
fn msb_of_sum(sess: &mut Session, kit: &Kit, a: &[Wire], e: &[Wire], ell: u8) -> Result<Vec<Wire>> {
    let lw = ell as usize;
    let n = a.len() / lw;
    let zero = RingElem::zero(1);
    let one = RingElem::one(1);

    let mut gx = Vec::with_capacity(n * (lw - 1));
    let mut gy = Vec::with_capacity(n * (lw - 1));
    for v in 0..n {
        for i in 0..lw - 1 {
            gx.push(a[v * lw + i].clone());
            gy.push(e[v * lw + i].clone());
        }
    }
    let leaf_g = pi_mult_batch(sess, &kit.boolean, &gx, &gy)?;

    // One (generate, propagate) pair per position below the top bit.
    let mut blocks: Vec<Vec<(Wire, Wire)>> = Vec::with_capacity(n);
    for v in 0..n {
        let mut col = Vec::with_capacity(lw - 1);
        for i in 0..lw - 1 {
            let gi = leaf_g[v * (lw - 1) + i].clone();
            let pi = wire_lincomb(zero, &[(one, &a[v * lw + i]), (one, &e[v * lw + i])])?;
            col.push((gi, pi));
        }
        blocks.push(col);
    }

    while blocks[0].len() > 1 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for col in &blocks {
            for pair in col.chunks(2) {
                if let [lo, hi] = pair {
                    xs.push(hi.1.clone());
                    ys.push(lo.0.clone());
                    xs.push(hi.1.clone());
                    ys.push(lo.1.clone());
                }
            }
        }
        let prods = pi_mult_batch(sess, &kit.boolean, &xs, &ys)?;
        let mut k = 0usize;
        for col in blocks.iter_mut() {
            let mut next = Vec::with_capacity((col.len() + 1) / 2);
            let mut it = col.chunks(2);
            for pair in &mut it {
                if let [_lo, hi] = pair {
                    let g = wire_lincomb(zero, &[(one, &hi.0), (one, &prods[2 * k])])?;
                    let p = prods[2 * k + 1].clone();
                    next.push((g, p));
                    k += 1;
                } else {
                    next.push(pair[0].clone());
                }
            }
            *col = next;
        }
    }

    (0..n)
        .map(|v| {
            let carry = &blocks[v][0].0;
            wire_lincomb(
                zero,
                &[
                    (one, &a[v * lw + lw - 1]),
                    (one, &e[v * lw + lw - 1]),
                    (one, carry),
                ],
            )
        })
        .collect()
}

/// Bit extraction via the prefix adder: boolean sharing of `msb(v)`.
/// The two mask complements are added bitwise during preprocessing, so
/// the online phase is one boolean addition of the masked value:
/// `1 + log2(ell)` rounds.
pub fn pi_bitext_ppa_batch(sess: &mut Session, kit: &Kit, vs: &[Wire]) -> Result<Vec<Wire>> {
    let ell = kit.ell;
    let n = vs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    assert!(ell >= 4, "bit extraction needs a multi-bit ring");
    debug_assert!(vs.iter().all(|w| w.width() == ell));
    let me = sess.role;

    let b_vals = match me {
        Role::P0 => Some(flat_bits(vs.iter().map(|w| -w.sh.alpha1()), ell)),
        Role::P1 => Some(flat_bits(vs.iter().map(|w| -w.sh.local_alpha()), ell)),
        Role::P2 => None,
    };
    let b = pi_jsh_prep_batch(sess, SharePair::P1P0, b_vals.as_deref(), 1, n * ell as usize)?;
    let c_vals = match me {
        Role::P0 => Some(flat_bits(vs.iter().map(|w| -w.sh.alpha2()), ell)),
        Role::P2 => Some(flat_bits(vs.iter().map(|w| -w.sh.local_alpha()), ell)),
        Role::P1 => None,
    };
    let c = pi_jsh_prep_batch(sess, SharePair::P2P0, c_vals.as_deref(), 1, n * ell as usize)?;
    let e = add_bits_prep(sess, kit, &b, &c, ell)?;

    let a_vals = match me {
        Role::P0 => None,
        _ => Some(flat_bits(vs.iter().map(|w| w.sh.beta()), ell)),
    };
    let a = pi_jsh_batch(sess, SharePair::P1P2, a_vals.as_deref(), 1, n * ell as usize)?;
    msb_of_sum(sess, kit, &a, &e, ell)
}

/// Per-value garbler state: output labels for the final check and the
/// opening salts each garbler later reveals.
struct GcSecrets {
    out: GarbleOut,
    u1_salts: Vec<[[u8; SALT_BYTES]; 2]>,
    u3_salts: Vec<[[u8; SALT_BYTES]; 2]>,
    u5_salts: [[u8; SALT_BYTES]; 2],
}

/// Per-value material P2 keeps from the preprocessing blob.
struct GcParsed {
    gc: Vec<u8>,
    u2_labels: Vec<WireLabel>,
    u4_label: WireLabel,
    u1_coms: Vec<[Commitment; 2]>,
    u3_labels: Vec<WireLabel>,
    u5_label: WireLabel,
}

const OPENING_BYTES: usize = LABEL_BYTES + SALT_BYTES;

fn push_com_pair(blob: &mut Vec<u8>, labels: [WireLabel; 2], salts: [[u8; SALT_BYTES]; 2]) {
    for b in 0..2 {
        blob.extend_from_slice(&commit(&labels[b].0, salts[b]).0);
    }
}

fn read_label(buf: &[u8], off: &mut usize) -> WireLabel {
    let mut l = [0u8; LABEL_BYTES];
    l.copy_from_slice(&buf[*off..*off + LABEL_BYTES]);
    *off += LABEL_BYTES;
    WireLabel(l)
}

fn read_com(buf: &[u8], off: &mut usize) -> Commitment {
    let mut c = [0u8; 32];
    c.copy_from_slice(&buf[*off..*off + 32]);
    *off += 32;
    Commitment(c)
}

/// Checks one fixed-size opening against the commitment for `bit` and
/// returns the committed label.
fn check_opening(
    sess: &mut Session,
    coms: &[Commitment; 2],
    opening: &[u8],
    bit: u64,
    what: &str,
) -> Result<WireLabel> {
    let label = {
        let mut l = [0u8; LABEL_BYTES];
        l.copy_from_slice(&opening[..LABEL_BYTES]);
        WireLabel(l)
    };
    let mut salt = [0u8; SALT_BYTES];
    salt.copy_from_slice(&opening[LABEL_BYTES..OPENING_BYTES]);
    if commit(&label.0, salt) != coms[bit as usize] {
        return Err(sess.net.abort(format!("{what}: label opening rejected")));
    }
    Ok(label)
}

/// Bit extraction via a two-garbler circuit. P0 and P1 garble the msb
/// circuit from shared randomness; P2 checks P0's digest against P1's
/// material, so the circuit is correct unless both garblers cheat.
/// Input keys travel as committed openings checked against bits P2
/// already knows. Exactly two online rounds.
pub fn pi_bitext_gc_batch(sess: &mut Session, kit: &Kit, vs: &[Wire]) -> Result<Vec<Wire>> {
    let ell = kit.ell;
    let n = vs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    assert!(ell >= 4, "bit extraction needs a multi-bit ring");
    let lw = ell as usize;
    let me = sess.role;
    let bid = sess.ctr("gcx");
    let circ = build_msb_circuit(ell);

    // Output-side masks: r1 with the P1 side, r2 with the P2 side.
    let r1 = match me {
        Role::P2 => Vec::new(),
        _ => sess.prf_elems(KeyId::K01, "gcx.r1", bid, 1, n)?,
    };
    let r2 = match me {
        Role::P1 => Vec::new(),
        _ => sess.prf_elems(KeyId::K02, "gcx.r2", bid, 1, n)?,
    };
    let r1w = pi_jsh_prep_batch(
        sess,
        SharePair::P1P0,
        (me != Role::P2).then_some(r1.as_slice()),
        1,
        n,
    )?;
    let r2w = pi_jsh_prep_batch(
        sess,
        SharePair::P2P0,
        (me != Role::P1).then_some(r2.as_slice()),
        1,
        n,
    )?;

    let mut secrets: Vec<GcSecrets> = Vec::new();
    let mut parsed: Vec<GcParsed> = Vec::new();
    match me {
        Role::P0 | Role::P1 => {
            // Both garblers derive identical labels, salts, and hence
            // blobs from the garbler-shared key.
            let mut blob = Vec::new();
            for v in 0..n {
                let mut seed = [0u8; 32];
                let ctx = Ctx::new("gcx.gc").arg(bid).arg(v as u64);
                sess.keys.fill(KeyId::K01, &ctx, &mut seed)?;
                let mut rng = ChaCha12Rng::from_seed(seed);
                let out = garble(&circ, |buf| rng.fill_bytes(buf));
                let mut draw_salts = |count: usize| {
                    let mut s = Vec::with_capacity(count);
                    for _ in 0..count {
                        let mut one = [[0u8; SALT_BYTES]; 2];
                        rng.fill_bytes(&mut one[0]);
                        rng.fill_bytes(&mut one[1]);
                        s.push(one);
                    }
                    s
                };
                let u1_salts = draw_salts(lw);
                let u3_salts = draw_salts(lw);
                let u5_salts = draw_salts(1).pop().unwrap();

                blob.extend_from_slice(&out.gc.to_bytes());
                let alpha1 = match me {
                    Role::P0 => vs[v].sh.alpha1(),
                    _ => vs[v].sh.local_alpha(),
                };
                for i in 0..lw {
                    let w = circ.groups[1].start + i as u32;
                    blob.extend_from_slice(&out.active_label(w, alpha1.bit(i as u8) == 1).0);
                }
                blob.extend_from_slice(
                    &out.active_label(circ.groups[3].start, r1[v].raw() == 1).0,
                );
                for i in 0..lw {
                    let w = circ.groups[0].start + i as u32;
                    push_com_pair(&mut blob, out.label_pair(w), u1_salts[i]);
                }
                for i in 0..lw {
                    let w = circ.groups[2].start + i as u32;
                    push_com_pair(&mut blob, out.label_pair(w), u3_salts[i]);
                }
                push_com_pair(&mut blob, out.label_pair(circ.groups[4].start), u5_salts);
                secrets.push(GcSecrets {
                    out,
                    u1_salts,
                    u3_salts,
                    u5_salts,
                });
            }
            if me == Role::P1 {
                if sess.fault_fires("gcx.blob") {
                    blob[0] ^= 1;
                }
                sess.net
                    .send(Role::P2, MsgType::GcMaterial, Phase::Prep, Tag::Gate, &blob)?;
            } else {
                sess.net.send(
                    Role::P2,
                    MsgType::Digest,
                    Phase::Prep,
                    Tag::Amortized,
                    &hash_bytes(&blob),
                )?;
                // P0 opens the keys for the bits it shares with P2.
                let mut openings = Vec::with_capacity(n * (lw + 1) * OPENING_BYTES);
                for (v, sec) in secrets.iter().enumerate() {
                    let alpha2 = vs[v].sh.alpha2();
                    for i in 0..lw {
                        let bit = alpha2.bit(i as u8);
                        let w = circ.groups[2].start + i as u32;
                        openings.extend_from_slice(&sec.out.active_label(w, bit == 1).0);
                        openings.extend_from_slice(&sec.u3_salts[i][bit as usize]);
                    }
                    let bit = r2[v].raw();
                    openings
                        .extend_from_slice(&sec.out.active_label(circ.groups[4].start, bit == 1).0);
                    openings.extend_from_slice(&sec.u5_salts[bit as usize]);
                }
                if sess.fault_fires("gcx.open") {
                    openings[0] ^= 1;
                }
                sess.net
                    .send(Role::P2, MsgType::GcLabels, Phase::Prep, Tag::Gate, &openings)?;
            }
        }
        Role::P2 => {
            let blob = sess.net.recv(Role::P1, MsgType::GcMaterial, Phase::Prep)?;
            let digest = sess.net.recv(Role::P0, MsgType::Digest, Phase::Prep)?;
            if digest != hash_bytes(&blob) {
                return Err(sess.net.abort("garbled material differs between garblers"));
            }
            let openings = sess.net.recv(Role::P0, MsgType::GcLabels, Phase::Prep)?;
            let gc_len = 5 + 128 * circ.and_count();
            let per_value = gc_len + LABEL_BYTES * (lw + 1) + 64 * (2 * lw + 1);
            if blob.len() != n * per_value || openings.len() != n * (lw + 1) * OPENING_BYTES {
                return Err(sess.net.abort("garbled material has wrong shape"));
            }
            for v in 0..n {
                let buf = &blob[v * per_value..(v + 1) * per_value];
                let mut off = 0usize;
                let gc = buf[..gc_len].to_vec();
                off += gc_len;
                let u2_labels: Vec<WireLabel> =
                    (0..lw).map(|_| read_label(buf, &mut off)).collect();
                let u4_label = read_label(buf, &mut off);
                let u1_coms: Vec<[Commitment; 2]> = (0..lw)
                    .map(|_| [read_com(buf, &mut off), read_com(buf, &mut off)])
                    .collect();
                let u3_coms: Vec<[Commitment; 2]> = (0..lw)
                    .map(|_| [read_com(buf, &mut off), read_com(buf, &mut off)])
                    .collect();
                let u5_coms = [read_com(buf, &mut off), read_com(buf, &mut off)];
                debug_assert_eq!(off, per_value);

                let obase = v * (lw + 1) * OPENING_BYTES;
                let alpha2 = vs[v].sh.local_alpha();
                let mut u3_labels = Vec::with_capacity(lw);
                for i in 0..lw {
                    let op = &openings[obase + i * OPENING_BYTES..obase + (i + 1) * OPENING_BYTES];
                    u3_labels.push(check_opening(
                        sess,
                        &u3_coms[i],
                        op,
                        alpha2.bit(i as u8),
                        "mask key",
                    )?);
                }
                let op = &openings[obase + lw * OPENING_BYTES..obase + (lw + 1) * OPENING_BYTES];
                let u5_label = check_opening(sess, &u5_coms, op, r2[v].raw(), "mask key")?;
                parsed.push(GcParsed {
                    gc,
                    u2_labels,
                    u4_label,
                    u1_coms,
                    u3_labels,
                    u5_label,
                });
            }
        }
    }
    sess.net.round_barrier(Phase::Prep);

    // Online round 1: P1 opens the masked-value keys.
    let mut y_vals: Option<Vec<RingElem>> = None;
    match me {
        Role::P1 => {
            let mut buf = Vec::with_capacity(n * lw * OPENING_BYTES);
            for (v, sec) in secrets.iter().enumerate() {
                let beta = vs[v].sh.beta();
                for i in 0..lw {
                    let bit = beta.bit(i as u8);
                    let w = circ.groups[0].start + i as u32;
                    buf.extend_from_slice(&sec.out.active_label(w, bit == 1).0);
                    buf.extend_from_slice(&sec.u1_salts[i][bit as usize]);
                }
            }
            if sess.fault_fires("gcx.u1") {
                buf[0] ^= 1;
            }
            sess.net
                .send(Role::P2, MsgType::GcLabels, Phase::Online, Tag::Gate, &buf)?;
        }
        Role::P2 => {
            let buf = sess.net.recv(Role::P1, MsgType::GcLabels, Phase::Online)?;
            if buf.len() != n * lw * OPENING_BYTES {
                return Err(sess.net.abort("masked-value keys have wrong shape"));
            }
            let mut ys = Vec::with_capacity(n);
            let mut reply = Vec::with_capacity(n * 33);
            for (v, q) in parsed.iter().enumerate() {
                let beta = vs[v].sh.beta();
                let mut inputs: Vec<(u32, WireLabel)> = Vec::with_capacity(3 * lw + 2);
                for i in 0..lw {
                    let base = (v * lw + i) * OPENING_BYTES;
                    let label = check_opening(
                        sess,
                        &q.u1_coms[i],
                        &buf[base..base + OPENING_BYTES],
                        beta.bit(i as u8),
                        "masked-value key",
                    )?;
                    inputs.push((circ.groups[0].start + i as u32, label));
                }
                for i in 0..lw {
                    inputs.push((circ.groups[1].start + i as u32, q.u2_labels[i]));
                    inputs.push((circ.groups[2].start + i as u32, q.u3_labels[i]));
                }
                inputs.push((circ.groups[3].start, q.u4_label));
                inputs.push((circ.groups[4].start, q.u5_label));
                let gc = crate::garble::GarbledCircuit::from_bytes(&q.gc)
                    .map_err(|e| sess.net.abort(e.to_string()))?;
                let (y, out_label) =
                    eval(&circ, &gc, &inputs).map_err(|e| sess.net.abort(e.to_string()))?;
                ys.push(RingElem::new(y as u64, 1));
                reply.push(y as u8);
                reply.extend_from_slice(&hash_bytes(&out_label.0));
            }
            y_vals = Some(ys);
            if sess.fault_fires("gcx.v") {
                reply[0] ^= 1;
            }
            sess.net
                .send(Role::P1, MsgType::GcLabels, Phase::Online, Tag::Gate, &reply)?;
        }
        Role::P0 => {}
    }
    sess.net.round_barrier(Phase::Online);

    // Online round 2: P2 returns the output bit with the label hash
    // that proves it evaluated honestly; P1 checks it against its own
    // label pair.
    if me == Role::P1 {
        let reply = sess.net.recv(Role::P2, MsgType::GcLabels, Phase::Online)?;
        if reply.len() != n * 33 {
            return Err(sess.net.abort("evaluation reply has wrong shape"));
        }
        let mut ys = Vec::with_capacity(n);
        for (v, sec) in secrets.iter().enumerate() {
            let y = reply[v * 33] & 1;
            let want = sec.out.label_pair(circ.output)[y as usize];
            if reply[v * 33 + 1..(v + 1) * 33] != hash_bytes(&want.0) {
                return Err(sess.net.abort("evaluation reply rejected"));
            }
            ys.push(RingElem::new(y as u64, 1));
        }
        y_vals = Some(ys);
    }
    sess.net.round_barrier(Phase::Online);
    sess.gate_tick(n)?;

    let yw = pi_jsh_batch(sess, SharePair::P1P2, y_vals.as_deref(), 1, n)?;
    let zero = RingElem::zero(1);
    let one = RingElem::one(1);
    (0..n)
        .map(|v| wire_lincomb(zero, &[(one, &yw[v]), (one, &r1w[v]), (one, &r2w[v])]))
        .collect()
}

/// Boolean sharing of `msb(v)` for each input, using the kit's mode.
pub fn pi_bitext_batch(sess: &mut Session, kit: &Kit, vs: &[Wire]) -> Result<Vec<Wire>> {
    match kit.mode {
        BitExtMode::Ppa => pi_bitext_ppa_batch(sess, kit, vs),
        BitExtMode::Gc => pi_bitext_gc_batch(sess, kit, vs),
    }
}

pub fn pi_bitext(sess: &mut Session, kit: &Kit, v: &Wire) -> Result<Wire> {
    Ok(pi_bitext_batch(sess, kit, std::slice::from_ref(v))?
        .pop()
        .unwrap())
}

fn lift(b: RingElem, ell: u8) -> RingElem {
    RingElem::new(b.raw(), ell)
}

/// Converts boolean sharings to arithmetic sharings of the same bits.
/// `b = beta xor alpha` lifts to `beta_R + alpha_R - 2.beta_R.alpha_R`;
/// `alpha_R` itself takes one preprocessing product for the xor of the
/// two alpha halves.
pub fn pi_bit2a_batch(sess: &mut Session, kit: &Kit, bs: &[Wire]) -> Result<Vec<Wire>> {
    let ell = kit.ell;
    let n = bs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    debug_assert!(bs.iter().all(|w| w.width() == 1));
    let me = sess.role;
    let zero = RingElem::zero(ell);
    let one = RingElem::one(ell);
    let m2 = RingElem::from_i64(-2, ell);

    let a1_vals = match me {
        Role::P0 => Some(bs.iter().map(|w| lift(w.sh.alpha1(), ell)).collect::<Vec<_>>()),
        Role::P1 => Some(bs.iter().map(|w| lift(w.sh.local_alpha(), ell)).collect()),
        Role::P2 => None,
    };
    let a1 = pi_jsh_prep_batch(sess, SharePair::P1P0, a1_vals.as_deref(), ell, n)?;
    let a2_vals = match me {
        Role::P0 => Some(bs.iter().map(|w| lift(w.sh.alpha2(), ell)).collect::<Vec<_>>()),
        Role::P2 => Some(bs.iter().map(|w| lift(w.sh.local_alpha(), ell)).collect()),
        Role::P1 => None,
    };
    let a2 = pi_jsh_prep_batch(sess, SharePair::P2P0, a2_vals.as_deref(), ell, n)?;
    let u = mult_batch_in(sess, &kit.arith, &a1, &a2, Phase::Prep)?;
    let alpha_r: Vec<Wire> = (0..n)
        .map(|i| wire_lincomb(zero, &[(one, &a1[i]), (one, &a2[i]), (m2, &u[i])]))
        .collect::<Result<_>>()?;

    let b_vals = match me {
        Role::P0 => None,
        _ => Some(bs.iter().map(|w| lift(w.sh.beta(), ell)).collect::<Vec<_>>()),
    };
    let beta_r = pi_jsh_batch(sess, SharePair::P1P2, b_vals.as_deref(), ell, n)?;
    let v = pi_mult_batch(sess, &kit.arith, &beta_r, &alpha_r)?;
    (0..n)
        .map(|i| wire_lincomb(zero, &[(one, &beta_r[i]), (one, &alpha_r[i]), (m2, &v[i])]))
        .collect()
}

fn bool_not(w: &Wire) -> Result<Wire> {
    let one = RingElem::one(1);
    wire_lincomb(one, &[(one, w)])
}

/// Boolean sharing of `x < y` over signed values. Assumes the
/// difference does not wrap.
pub fn pi_compare(sess: &mut Session, kit: &Kit, x: &Wire, y: &Wire) -> Result<Wire> {
    let ell = kit.ell;
    let one = RingElem::one(ell);
    let diff = wire_lincomb(RingElem::zero(ell), &[(one, x), (RingElem::from_i64(-1, ell), y)])?;
    pi_bitext(sess, kit, &diff)
}

/// `relu(v) = v * (1 - msb(v))`, elementwise.
pub fn pi_relu_batch(sess: &mut Session, kit: &Kit, vs: &[Wire]) -> Result<Vec<Wire>> {
    if vs.is_empty() {
        return Ok(Vec::new());
    }
    let b = pi_bitext_batch(sess, kit, vs)?;
    let nb: Vec<Wire> = b.iter().map(bool_not).collect::<Result<_>>()?;
    let nbr = pi_bit2a_batch(sess, kit, &nb)?;
    pi_mult_batch(sess, &kit.arith, &nbr, vs)
}

pub fn pi_relu(sess: &mut Session, kit: &Kit, v: &Wire) -> Result<Wire> {
    Ok(pi_relu_batch(sess, kit, std::slice::from_ref(v))?
        .pop()
        .unwrap())
}

/// Piecewise sigmoid with `d` fraction bits: 0 below -1/2, `v + 1/2`
/// in between, 1 above. With `b1 = msb(v + 1/2)` and `b2 = msb(v -
/// 1/2)` this is `!b1.b2.(v + 1/2) + !b2`, and the two half constants
/// are public, so only the bit logic costs anything.
pub fn pi_sig_batch(sess: &mut Session, kit: &Kit, vs: &[Wire], d: u8) -> Result<Vec<Wire>> {
    let ell = kit.ell;
    let n = vs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    assert!(d >= 1 && d < ell - 1);
    let zero = RingElem::zero(ell);
    let one = RingElem::one(ell);
    let half = RingElem::new(1u64 << (d - 1), ell);
    let one_fp = RingElem::new(1u64 << d, ell);

    let vp: Vec<Wire> = vs
        .iter()
        .map(|v| wire_lincomb(half, &[(one, v)]))
        .collect::<Result<_>>()?;
    let vm: Vec<Wire> = vs
        .iter()
        .map(|v| wire_lincomb(-half, &[(one, v)]))
        .collect::<Result<_>>()?;
    let mut both = vp.clone();
    both.extend(vm.iter().cloned());
    let bits = pi_bitext_batch(sess, kit, &both)?;
    let (b1, b2) = bits.split_at(n);

    let nb1: Vec<Wire> = b1.iter().map(bool_not).collect::<Result<_>>()?;
    let t = pi_mult_batch(sess, &kit.boolean, &nb1, b2)?;
    let nb2: Vec<Wire> = b2.iter().map(bool_not).collect::<Result<_>>()?;
    let mut conv_in = t;
    conv_in.extend(nb2);
    let conv = pi_bit2a_batch(sess, kit, &conv_in)?;
    let (tr, nb2r) = conv.split_at(n);

    let m = pi_mult_batch(sess, &kit.arith, tr, &vp)?;
    (0..n)
        .map(|i| wire_lincomb(zero, &[(one, &m[i]), (one_fp, &nb2r[i])]))
        .collect()
}

pub fn pi_sig(sess: &mut Session, kit: &Kit, v: &Wire, d: u8) -> Result<Wire> {
    Ok(pi_sig_batch(sess, kit, std::slice::from_ref(v), d)?
        .pop()
        .unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{pi_rec, pi_sh_batch, FaultPlan};
    use crate::ring::FixedPoint;
    use crate::sim::{sim, sim_with};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn light_kit(ell: u8) -> Result<Kit> {
        Kit::new(ell, ZkConfig::light())
    }

    fn share_inputs(sess: &mut Session, vals: &[RingElem], width: u8) -> Result<Vec<Wire>> {
        let vals_owned = vals.to_vec();
        pi_sh_batch(
            sess,
            Role::P1,
            (sess.role == Role::P1).then_some(vals_owned.as_slice()),
            width,
            vals.len(),
        )
    }

    #[test]
    fn trunc_pair_matches_derived_oracle() {
        let d = 13u8;
        let n = 300usize;
        let (results, _) = sim(64, 31, move |sess| {
            let pairs = pi_truncpair_batch(sess, 64, d, n)?;
            let shares: Vec<RingElem> = pairs.iter().map(|p| p.r_share).collect();
            let rds: Vec<Wire> = pairs.into_iter().map(|p| p.rd).collect();
            let opened = pi_rec(sess, &rds)?;
            Ok((shares, opened))
        });
        let [r0, r1, r2] = results;
        let (r, rd0) = r0.unwrap();
        let (s1, rd1) = r1.unwrap();
        let (s2, rd2) = r2.unwrap();
        assert_eq!(rd0, rd1);
        assert_eq!(rd1, rd2);
        let lowmask = (1u64 << d) - 1;
        for i in 0..n {
            assert_eq!(s1[i] + s2[i], r[i], "r shares must sum to P0's r");
            let carry = ((s1[i].raw() & lowmask) + (s2[i].raw() & lowmask)) >> d;
            let want = arith_shift_trunc(r[i], d) - RingElem::new(carry, 64);
            assert_eq!(rd0[i], want, "pair {i}");
        }
    }

    #[test]
    fn trunc_pair_rejects_tampered_dealing() {
        let faults = [
            FaultPlan::tamper("trunc.rd"),
            FaultPlan::none(),
            FaultPlan::none(),
        ];
        let (results, _) = sim_with(64, 33, faults, |sess| {
            let pairs = pi_truncpair_batch(sess, 64, 13, 4)?;
            let rds: Vec<Wire> = pairs.into_iter().map(|p| p.rd).collect();
            pi_rec(sess, &rds)
        });
        let [_, r1, r2] = results;
        assert!(r1.is_err(), "P1 must reject a tampered truncation pair");
        assert!(r2.is_err(), "P2 must reject a tampered truncation pair");
    }

    #[test]
    fn dotp_tr_error_within_one_ulp() {
        let d = 13u8;
        let mut rng = StdRng::seed_from_u64(7);
        let xs: Vec<i64> = (0..40).map(|_| rng.gen_range(-(1 << d)..(1 << d))).collect();
        let ys: Vec<i64> = (0..40).map(|_| rng.gen_range(-(1 << d)..(1 << d))).collect();
        let xs2 = xs.clone();
        let ys2 = ys.clone();
        let (results, _) = sim(64, 35, move |sess| {
            let zk = ZkSetup::new(64, ZkConfig::light())?;
            let xv: Vec<RingElem> = xs2.iter().map(|&v| RingElem::from_i64(v, 64)).collect();
            let yv: Vec<RingElem> = ys2.iter().map(|&v| RingElem::from_i64(v, 64)).collect();
            let xw = share_inputs(sess, &xv, 64)?;
            let yw = share_inputs(sess, &yv, 64)?;
            // Ten singleton gates, then ten gates of length three.
            let mut groups = Vec::new();
            for i in 0..10 {
                groups.push(DotGroup {
                    xs: &xw[i..i + 1],
                    ys: &yw[i..i + 1],
                });
            }
            for i in 0..10 {
                groups.push(DotGroup {
                    xs: &xw[10 + 3 * i..13 + 3 * i],
                    ys: &yw[10 + 3 * i..13 + 3 * i],
                });
            }
            let out = pi_dotp_tr_batch(sess, &zk, &groups, d)?;
            pi_rec(sess, &out)
        });
        for r in results {
            let opened = r.unwrap();
            for (i, got) in opened.iter().enumerate() {
                let t = if i < 10 {
                    xs[i] * ys[i]
                } else {
                    let b = 10 + 3 * (i - 10);
                    (b..b + 3).map(|k| xs[k] * ys[k]).sum()
                };
                let want = t >> d;
                let got = got.to_signed();
                assert!(
                    (got - want).abs() <= 1,
                    "gate {i}: got {got}, want {want} +- 1"
                );
            }
        }
    }

    #[test]
    fn dotp_tr_squares_one_half() {
        let d = 13u8;
        let (results, _) = sim(64, 37, move |sess| {
            let zk = ZkSetup::new(64, ZkConfig::light())?;
            let h = FixedPoint::encode(0.5, d, 64).unwrap().raw;
            let xw = share_inputs(sess, &[h], 64)?;
            let z = pi_dotp_tr(sess, &zk, &xw, &xw, d)?;
            pi_rec(sess, std::slice::from_ref(&z))
        });
        for r in results {
            let opened = r.unwrap();
            let got = FixedPoint::from_raw(opened[0], d).decode();
            assert!(
                (got - 0.25).abs() <= 1.0 / (1 << d) as f64,
                "0.5^2 came out as {got}"
            );
        }
    }

    #[test]
    fn dotp_tr_budgets_and_rounds() {
        let d = 13u8;
        let n = 10usize;
        let (results, stats) = sim(64, 39, move |sess| {
            let zk = ZkSetup::new(64, ZkConfig::light())?;
            let member = sess.role != Role::P2;
            let vals: Vec<RingElem> = (0..2 * n as i64)
                .map(|i| RingElem::from_i64(i - 5, 64))
                .collect();
            let w = pi_jsh_prep_batch(
                sess,
                SharePair::P1P0,
                member.then_some(vals.as_slice()),
                64,
                2 * n,
            )?;
            let (xw, yw) = w.split_at(n);
            let groups = [DotGroup { xs: xw, ys: yw }];
            let out = pi_dotp_tr_batch(sess, &zk, &groups, d)?;
            Ok(out.len())
        });
        for r in results {
            assert_eq!(r.unwrap(), 1);
        }
        // Per gate: 3 elements per term plus 2 for the truncation pair
        // of preprocessing, 3 elements online, everything else
        // amortized. One exchange round online, 2 verification rounds.
        assert_eq!(stats.payload_total(Phase::Prep, Tag::Gate), (3 * n as u64 + 2) * 8);
        assert_eq!(stats.payload_total(Phase::Online, Tag::Gate), 3 * 8);
        assert_eq!(stats.rounds(Phase::Online).unwrap(), 1);
        assert_eq!(stats.rounds(Phase::Verify).unwrap(), 2);
    }

    #[test]
    fn dotp_tr_fault_matrix() {
        let cases: [(&str, usize); 4] = [
            ("trunc.rd", 0),
            ("dotptr.zr", 1),
            ("dotptr.zr", 2),
            ("dotptr.bstar", 1),
        ];
        for (slot, who) in cases {
            let mut faults = [FaultPlan::none(), FaultPlan::none(), FaultPlan::none()];
            faults[who] = FaultPlan::tamper(slot);
            let (results, _) = sim_with(64, 41, faults, |sess| {
                let zk = ZkSetup::new(64, ZkConfig::light())?;
                let vals: Vec<RingElem> = (1..=4).map(|i| RingElem::from_i64(i, 64)).collect();
                let xw = share_inputs(sess, &vals, 64)?;
                let z = pi_dotp_tr(sess, &zk, &xw, &xw, 13)?;
                pi_rec(sess, std::slice::from_ref(&z))
            });
            for (idx, r) in results.iter().enumerate() {
                if idx != who {
                    assert!(
                        r.is_err(),
                        "honest P{idx} accepted a run where P{who} tampered {slot}"
                    );
                }
            }
        }
    }

    fn msb_oracle(v: RingElem) -> u64 {
        v.msb()
    }

    #[test]
    fn bitext_exhaustive_small_ring() {
        let vals: Vec<RingElem> = (0..256).map(|v| RingElem::new(v, 8)).collect();
        let expect: Vec<u64> = vals.iter().map(|&v| msb_oracle(v)).collect();
        let vals2 = vals.clone();
        let (results, _) = sim(8, 43, move |sess| {
            let kit = light_kit(8)?;
            let vw = share_inputs(sess, &vals2, 8)?;
            let ppa = pi_bitext_ppa_batch(sess, &kit, &vw)?;
            let gc = pi_bitext_gc_batch(sess, &kit, &vw)?;
            let a = pi_rec(sess, &ppa)?;
            let b = pi_rec(sess, &gc)?;
            Ok((a, b))
        });
        for r in results {
            let (ppa, gc) = r.unwrap();
            for v in 0..256 {
                assert_eq!(ppa[v].raw(), expect[v], "ppa msb of {v}");
                assert_eq!(gc[v].raw(), expect[v], "gc msb of {v}");
            }
        }
    }

    #[test]
    fn bitext_wide_ring_agreement() {
        let mut rng = StdRng::seed_from_u64(45);
        let mut vals: Vec<RingElem> = vec![
            RingElem::new(0, 64),
            RingElem::from_i64(-1, 64),
            RingElem::new(u64::MAX >> 1, 64),     // largest positive
            RingElem::new(1u64 << 63, 64),        // smallest negative
            RingElem::new((1u64 << 63) - 1, 64),
            RingElem::new(1, 64),
        ];
        vals.extend((0..40).map(|_| RingElem::new(rng.gen::<u64>(), 64)));
        let expect: Vec<u64> = vals.iter().map(|&v| msb_oracle(v)).collect();
        let vals2 = vals.clone();
        let (results, _) = sim(64, 47, move |sess| {
            let kit = light_kit(64)?;
            let vw = share_inputs(sess, &vals2, 64)?;
            let ppa = pi_bitext_ppa_batch(sess, &kit, &vw)?;
            let gc = pi_bitext_gc_batch(sess, &kit, &vw)?;
            let a = pi_rec(sess, &ppa)?;
            let b = pi_rec(sess, &gc)?;
            Ok((a, b))
        });
        for r in results {
            let (ppa, gc) = r.unwrap();
            for i in 0..vals.len() {
                assert_eq!(ppa[i].raw(), expect[i], "ppa msb of value {i}");
                assert_eq!(gc[i].raw(), expect[i], "gc msb of value {i}");
            }
        }
    }

    #[test]
    fn bitext_online_round_budgets() {
        for (ell, want_ppa) in [(8u8, 4u64), (16, 5)] {
            let (results, stats) = sim(ell, 49, move |sess| {
                let kit = light_kit(ell)?;
                let member = sess.role != Role::P2;
                let vals: Vec<RingElem> =
                    (0..6).map(|i| RingElem::from_i64(i * 17 - 40, ell)).collect();
                let vw = pi_jsh_prep_batch(
                    sess,
                    SharePair::P1P0,
                    member.then_some(vals.as_slice()),
                    ell,
                    6,
                )?;
                pi_bitext_ppa_batch(sess, &kit, &vw).map(|w| w.len())
            });
            for r in results {
                assert_eq!(r.unwrap(), 6);
            }
            assert_eq!(
                stats.rounds(Phase::Online).unwrap(),
                want_ppa,
                "ppa rounds at ell={ell}"
            );
        }
        let (results, stats) = sim(64, 51, |sess| {
            let kit = light_kit(64)?;
            let member = sess.role != Role::P2;
            let vals: Vec<RingElem> = (0..4).map(|i| RingElem::from_i64(i - 2, 64)).collect();
            let vw = pi_jsh_prep_batch(
                sess,
                SharePair::P1P0,
                member.then_some(vals.as_slice()),
                64,
                4,
            )?;
            pi_bitext_gc_batch(sess, &kit, &vw).map(|w| w.len())
        });
        for r in results {
            assert_eq!(r.unwrap(), 4);
        }
        assert_eq!(stats.rounds(Phase::Online).unwrap(), 2, "gc online rounds");
    }

    #[test]
    fn bitext_gc_rejects_tampering() {
        let cases: [(&str, usize); 4] = [
            ("gcx.blob", 1),
            ("gcx.u1", 1),
            ("gcx.v", 2),
            ("gcx.open", 0),
        ];
        for (slot, who) in cases {
            let mut faults = [FaultPlan::none(), FaultPlan::none(), FaultPlan::none()];
            faults[who] = FaultPlan::tamper(slot);
            let (results, _) = sim_with(16, 53, faults, |sess| {
                let kit = light_kit(16)?;
                let vals: Vec<RingElem> = (0..3).map(|i| RingElem::from_i64(i - 1, 16)).collect();
                let vw = share_inputs(sess, &vals, 16)?;
                let b = pi_bitext_gc_batch(sess, &kit, &vw)?;
                pi_rec(sess, &b)
            });
            for (idx, r) in results.iter().enumerate() {
                if idx != who {
                    assert!(
                        r.is_err(),
                        "honest P{idx} accepted a run where P{who} tampered {slot}"
                    );
                }
            }
        }
    }

    #[test]
    fn bit2a_lifts_bits_from_every_dealer() {
        for (seed, dealer) in [(55, Role::P0), (57, Role::P1), (59, Role::P2), (61, Role::P1)] {
            let (results, _) = sim(64, seed, move |sess| {
                let kit = light_kit(64)?;
                let bits = vec![RingElem::new(0, 1), RingElem::new(1, 1), RingElem::new(1, 1)];
                let bw = pi_sh_batch(
                    sess,
                    dealer,
                    (sess.role == dealer).then_some(bits.as_slice()),
                    1,
                    3,
                )?;
                let aw = pi_bit2a_batch(sess, &kit, &bw)?;
                pi_rec(sess, &aw)
            });
            for r in results {
                let opened = r.unwrap();
                let got: Vec<u64> = opened.iter().map(|e| e.raw()).collect();
                assert_eq!(got, vec![0, 1, 1], "dealer {dealer:?}");
            }
        }
    }

    #[test]
    fn compare_orders_signed_values() {
        // Comparison is the sign of the difference wire, so sweeping
        // every in-range difference once brute-forces the whole
        // decision space at ell = 8. Pairs are centered to keep x - y
        // inside the non-wrapping precondition.
        let pairs: Vec<(i64, i64)> = (-128..128)
            .map(|d: i64| (d - (d >> 1), -(d >> 1)))
            .collect();
        for (x, y) in &pairs {
            assert_eq!(x - y, *x - *y);
            assert!((-128..128).contains(&(x - y)));
        }
        let pairs2 = pairs.clone();
        let (results, _) = sim(8, 63, move |sess| {
            let kit = light_kit(8)?;
            let xv: Vec<RingElem> = pairs2.iter().map(|p| RingElem::from_i64(p.0, 8)).collect();
            let yv: Vec<RingElem> = pairs2.iter().map(|p| RingElem::from_i64(p.1, 8)).collect();
            let xw = share_inputs(sess, &xv, 8)?;
            let yw = share_inputs(sess, &yv, 8)?;
            let diffs: Vec<Wire> = xw
                .iter()
                .zip(&yw)
                .map(|(x, y)| {
                    wire_lincomb(
                        RingElem::zero(8),
                        &[(RingElem::one(8), x), (RingElem::from_i64(-1, 8), y)],
                    )
                })
                .collect::<Result<_>>()?;
            let out = pi_bitext_batch(sess, &kit, &diffs)?;
            pi_rec(sess, &out)
        });
        for r in results {
            let opened = r.unwrap();
            for (i, (x, y)) in pairs.iter().enumerate() {
                assert_eq!(opened[i].raw(), (x < y) as u64, "compare({x}, {y})");
            }
        }
        // The public entry point wires the same thing up per pair.
        let (results, _) = sim(64, 64, |sess| {
            let kit = light_kit(64)?;
            let checks = [(1i64, 2i64), (2, 1), (-3, -3), (-100, 7)];
            let xv: Vec<RingElem> = checks.iter().map(|p| RingElem::from_i64(p.0, 64)).collect();
            let yv: Vec<RingElem> = checks.iter().map(|p| RingElem::from_i64(p.1, 64)).collect();
            let xw = share_inputs(sess, &xv, 64)?;
            let yw = share_inputs(sess, &yv, 64)?;
            let mut out = Vec::new();
            for (x, y) in xw.iter().zip(&yw) {
                out.push(pi_compare(sess, &kit, x, y)?);
            }
            pi_rec(sess, &out)
        });
        for r in results {
            let opened: Vec<u64> = r.unwrap().iter().map(|e| e.raw()).collect();
            assert_eq!(opened, vec![1, 0, 0, 1]);
        }
    }

    #[test]
    fn relu_matches_reference() {
        let mut rng = StdRng::seed_from_u64(65);
        let vals: Vec<i64> = (0..30).map(|_| rng.gen_range(-(1 << 20)..(1 << 20))).collect();
        let vals2 = vals.clone();
        let (results, _) = sim(64, 67, move |sess| {
            let kit = light_kit(64)?;
            // Both signs of every value, to check relu(v) + relu(-v) = |v|.
            let mut raw: Vec<RingElem> =
                vals2.iter().map(|&v| RingElem::from_i64(v, 64)).collect();
            raw.extend(vals2.iter().map(|&v| RingElem::from_i64(-v, 64)));
            let vw = share_inputs(sess, &raw, 64)?;
            let rw = pi_relu_batch(sess, &kit, &vw)?;
            pi_rec(sess, &rw)
        });
        for r in results {
            let opened = r.unwrap();
            for (i, &v) in vals.iter().enumerate() {
                let pos = opened[i].to_signed();
                let neg = opened[vals.len() + i].to_signed();
                assert_eq!(pos, v.max(0), "relu({v})");
                assert_eq!(neg, (-v).max(0), "relu({})", -v);
                assert_eq!(pos + neg, v.abs(), "relu(v) + relu(-v) = |v| for {v}");
            }
        }
    }

    #[test]
    fn sig_matches_piecewise_reference() {
        let d = 13u8;
        let half = 1i64 << (d - 1);
        let mut vals: Vec<i64> = vec![
            0,
            half,
            -half,
            half - 1,
            -half + 1,
            half + 1,
            -half - 1,
            1 << d,        // +1.0
            -(1i64 << d),  // -1.0
            3 << d,
            -(3i64 << d),
        ];
        let mut rng = StdRng::seed_from_u64(69);
        vals.extend((0..30).map(|_| rng.gen_range(-(1i64 << (d + 2))..(1i64 << (d + 2)))));
        let vals2 = vals.clone();
        let (results, _) = sim(64, 71, move |sess| {
            let kit = light_kit(64)?;
            let raw: Vec<RingElem> = vals2.iter().map(|&v| RingElem::from_i64(v, 64)).collect();
            let vw = share_inputs(sess, &raw, 64)?;
            let sw = pi_sig_batch(sess, &kit, &vw, d)?;
            pi_rec(sess, &sw)
        });
        for r in results {
            let opened = r.unwrap();
            let mut prev: Option<(i64, i64)> = None;
            let mut sorted: Vec<(i64, i64)> = vals
                .iter()
                .zip(&opened)
                .map(|(&v, o)| (v, o.to_signed()))
                .collect();
            sorted.sort();
            for (v, got) in sorted {
                let want = if v < -half {
                    0
                } else if v > half {
                    1 << d
                } else {
                    v + half
                };
                assert_eq!(got, want, "sig({v})");
                assert!((0..=(1 << d)).contains(&got), "sig({v}) out of range");
                if let Some((pv, pg)) = prev {
                    assert!(pg <= got, "sig not monotone between {pv} and {v}");
                }
                prev = Some((v, got));
            }
        }
    }
}
