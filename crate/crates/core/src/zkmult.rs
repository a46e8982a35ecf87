//! Distributed zero-knowledge verification of multiplication
//! preprocessing.
//!
//! Each server must prove that values it contributed to a batch of
//! multiplication preprocessings satisfy their defining product
//! relations. The proof is fully linear: the statement is additively
//! shared between the two verifiers, the proof is additively split, and
//! every verifier-side computation is a linear functional of (statement
//! share || proof share), so answers combine by addition.
//!
//! Interpolation needs many evaluation points with invertible pairwise
//! differences, which `Z_{2^l}` lacks. Proof arithmetic therefore runs in
//! the Galois ring `GR(2^l, delta) = Z_{2^l}[X]/(h(X))` with `h`
//! irreducible mod 2; statements stay over `Z_{2^l}`, embedded as
//! degree-zero elements. The exceptional points `e_i` are the bit-lifts
//! of the indices `i`, so any two differ by a unit. For `l = 1` the ring
//! is the field `GF(2^delta)` and multiplication uses log tables.
//!
//! Proof shape for a batch of `M` products `(a_k, b_k, a_k b_k)`:
//! `f` interpolates `(e_0 -> z1, e_k -> a_k)`, `g` likewise with `z2` and
//! `b_k`, and `h = f*g` (degree `2M`) is shipped as coefficients `c_h`.
//! Honest proofs satisfy `h(0) = z1 z2` and, because incomplete batches
//! pad with zero gates, a padded batch has `h(e_M) = 0` literally. Two
//! checks bind everything: `h(r) = f(r) g(r)` at a jointly sampled `r`
//! outside the interpolation grid, and an aggregated linear check that
//! ties each `h(e_k)` to the statement's claimed outputs through
//! verifier-sampled weights.

use crate::ring::{byte_len, width_mask, RingElem};
use crate::{Error, Result};

/// Ring-representation limbs; bounds `delta` for `l > 1`.
pub const MAX_RING_DELTA: usize = 8;
/// Field representation (`l = 1`) supports wider extensions.
pub const MAX_FIELD_DELTA: usize = 16;

/// Irreducible polynomials over GF(2), degree = index + 2. Bit `i` is
/// the coefficient of `X^i`.
const IRREDUCIBLE: [u32; 15] = [
    0x7,      // X^2+X+1
    0xB,      // X^3+X+1
    0x13,     // X^4+X+1
    0x25,     // X^5+X^2+1
    0x43,     // X^6+X+1
    0x83,     // X^7+X+1
    0x11B,    // X^8+X^4+X^3+X+1
    0x211,    // X^9+X^4+1
    0x409,    // X^10+X^3+1
    0x805,    // X^11+X^2+1
    0x1053,   // X^12+X^6+X^4+X+1
    0x201B,   // X^13+X^4+X^3+X+1
    0x4443,   // X^14+X^10+X^6+X+1
    0x8003,   // X^15+X+1
    0x1100B,  // X^16+X^12+X^3+X+1
];

/// One element of `GR(2^l, delta)`.
///
/// Ring representation: `c[0..delta]` are coefficients mod `2^l`, higher
/// limbs zero. Field representation (`l = 1`): `c[0]` holds the packed
/// `delta`-bit value, all other limbs zero.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct ExtElem {
    c: [u64; MAX_RING_DELTA],
}

impl std::fmt::Debug for ExtElem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ext{:?}", &self.c[..])
    }
}

impl ExtElem {
    const ZERO: ExtElem = ExtElem {
        c: [0; MAX_RING_DELTA],
    };
}

#[derive(Clone)]
struct FieldTables {
    log: Vec<u16>,
    alog: Vec<u16>,
}

/// Arithmetic context for one choice of `(l, delta)`.
#[derive(Clone)]
pub struct GrCtx {
    pub ell: u8,
    pub delta: u8,
    mask: u64,
    irred: u32,
    tables: Option<FieldTables>,
}

impl GrCtx {
    /// Ring representation; requires `delta <= 8`.
    pub fn new_ring(ell: u8, delta: u8) -> Result<Self> {
        if !(2..=MAX_RING_DELTA as u8).contains(&delta) {
            return Err(Error::Config(format!(
                "ring extension degree {delta} outside 2..=8"
            )));
        }
        Ok(GrCtx {
            ell,
            delta,
            mask: width_mask(ell),
            irred: IRREDUCIBLE[(delta - 2) as usize],
            tables: None,
        })
    }

    /// Field fast path for `l = 1`; requires `delta <= 16`.
    pub fn new_field(delta: u8) -> Result<Self> {
        if !(2..=MAX_FIELD_DELTA as u8).contains(&delta) {
            return Err(Error::Config(format!(
                "field extension degree {delta} outside 2..=16"
            )));
        }
        let irred = IRREDUCIBLE[(delta - 2) as usize];
        Ok(GrCtx {
            ell: 1,
            delta,
            mask: 1,
            irred,
            tables: Some(build_tables(delta, irred)?),
        })
    }

    /// Field path for width 1, ring path otherwise.
    pub fn auto(ell: u8, delta: u8) -> Result<Self> {
        if ell == 1 {
            GrCtx::new_field(delta)
        } else {
            GrCtx::new_ring(ell, delta)
        }
    }

    #[inline]
    pub fn zero(&self) -> ExtElem {
        ExtElem::ZERO
    }

    pub fn one(&self) -> ExtElem {
        let mut e = ExtElem::ZERO;
        e.c[0] = 1;
        e
    }

    /// Embeds a base-ring value as a degree-zero element.
    #[inline]
    pub fn from_ring(&self, v: RingElem) -> ExtElem {
        debug_assert_eq!(v.width(), self.ell);
        let mut e = ExtElem::ZERO;
        e.c[0] = v.raw();
        e
    }

    /// The `i`-th exceptional point: the bit-lift of `i`.
    pub fn exceptional(&self, i: u64) -> ExtElem {
        debug_assert!(i < 1u64 << self.delta);
        let mut e = ExtElem::ZERO;
        if self.tables.is_some() {
            e.c[0] = i;
        } else {
            for j in 0..self.delta as usize {
                e.c[j] = (i >> j) & 1;
            }
        }
        e
    }

    /// Size of the exceptional set.
    pub fn exceptional_count(&self) -> u64 {
        1u64 << self.delta
    }

    /// Uniform element from raw 64-bit draws.
    pub fn sample(&self, mut draw: impl FnMut() -> u64) -> ExtElem {
        let mut e = ExtElem::ZERO;
        if self.tables.is_some() {
            e.c[0] = draw() & ((1u64 << self.delta) - 1);
        } else {
            for j in 0..self.delta as usize {
                e.c[j] = draw() & self.mask;
            }
        }
        e
    }

    #[inline]
    pub fn add(&self, a: &ExtElem, b: &ExtElem) -> ExtElem {
        let mut out = ExtElem::ZERO;
        if self.tables.is_some() {
            out.c[0] = a.c[0] ^ b.c[0];
        } else {
            for j in 0..self.delta as usize {
                out.c[j] = a.c[j].wrapping_add(b.c[j]) & self.mask;
            }
        }
        out
    }

    #[inline]
    pub fn sub(&self, a: &ExtElem, b: &ExtElem) -> ExtElem {
        let mut out = ExtElem::ZERO;
        if self.tables.is_some() {
            out.c[0] = a.c[0] ^ b.c[0];
        } else {
            for j in 0..self.delta as usize {
                out.c[j] = a.c[j].wrapping_sub(b.c[j]) & self.mask;
            }
        }
        out
    }

    #[inline]
    pub fn neg(&self, a: &ExtElem) -> ExtElem {
        self.sub(&ExtElem::ZERO, a)
    }

    pub fn is_zero(&self, a: &ExtElem) -> bool {
        a.c.iter().all(|&x| x == 0)
    }

    #[inline]
    pub fn mul(&self, a: &ExtElem, b: &ExtElem) -> ExtElem {
        if let Some(t) = &self.tables {
            let mut out = ExtElem::ZERO;
            if a.c[0] != 0 && b.c[0] != 0 {
                let q1 = (1u32 << self.delta) - 1;
                let s = t.log[a.c[0] as usize] as u32 + t.log[b.c[0] as usize] as u32;
                let s = if s >= q1 { s - q1 } else { s };
                out.c[0] = t.alog[s as usize] as u64;
            }
            return out;
        }
        let d = self.delta as usize;
        let mut prod = [0u64; 2 * MAX_RING_DELTA - 1];
        for i in 0..d {
            let ai = a.c[i];
            if ai == 0 {
                continue;
            }
            for j in 0..d {
                prod[i + j] = prod[i + j].wrapping_add(ai.wrapping_mul(b.c[j]));
            }
        }
        // X^d = -(low part of h); fold high limbs down.
        let low = self.irred & !(1u32 << self.delta);
        for k in (d..2 * d - 1).rev() {
            let t = prod[k];
            if t == 0 {
                continue;
            }
            prod[k] = 0;
            let mut bits = low;
            while bits != 0 {
                let j = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                prod[k - d + j] = prod[k - d + j].wrapping_sub(t);
            }
        }
        let mut out = ExtElem::ZERO;
        for j in 0..d {
            out.c[j] = prod[j] & self.mask;
        }
        out
    }

    /// A unit iff nonzero after reduction mod 2.
    pub fn is_unit(&self, a: &ExtElem) -> bool {
        if self.tables.is_some() {
            return a.c[0] != 0;
        }
        a.c[..self.delta as usize].iter().any(|&x| x & 1 == 1)
    }

    /// Inverts a unit: inverse mod 2 over GF(2^delta), then lifted by
    /// Newton iteration. Precomputation-time helper, not a hot path.
    pub fn inv(&self, a: &ExtElem) -> Result<ExtElem> {
        if !self.is_unit(a) {
            return Err(Error::Range("inverting a non-unit".into()));
        }
        if let Some(t) = &self.tables {
            let q1 = (1u32 << self.delta) - 1;
            let mut out = ExtElem::ZERO;
            out.c[0] = t.alog[((q1 - t.log[a.c[0] as usize] as u32) % q1) as usize] as u64;
            return Ok(out);
        }
        // Pack the mod-2 reduction and invert in GF(2^delta).
        let mut packed = 0u32;
        for j in 0..self.delta as usize {
            packed |= ((a.c[j] & 1) as u32) << j;
        }
        let inv2 = gf2_inv(packed, self.irred, self.delta);
        let mut y = ExtElem::ZERO;
        for j in 0..self.delta as usize {
            y.c[j] = ((inv2 >> j) & 1) as u64;
        }
        // y <- y(2 - ay) doubles the precision each step.
        let two = {
            let mut e = ExtElem::ZERO;
            e.c[0] = 2 & self.mask;
            e
        };
        for _ in 0..7 {
            let ay = self.mul(a, &y);
            if ay == self.one() {
                break;
            }
            y = self.mul(&y, &self.sub(&two, &ay));
        }
        debug_assert_eq!(self.mul(a, &y), self.one());
        Ok(y)
    }

    /// Serialization: `delta` limbs, each `ceil(l/8)` bytes little-endian.
    pub fn elem_to_bytes(&self, a: &ExtElem, out: &mut Vec<u8>) {
        let n = byte_len(self.ell);
        for j in 0..self.delta as usize {
            let limb = if self.tables.is_some() {
                (a.c[0] >> j) & 1
            } else {
                a.c[j]
            };
            out.extend_from_slice(&limb.to_le_bytes()[..n]);
        }
    }

    pub fn elem_from_bytes(&self, bytes: &[u8]) -> Result<(ExtElem, usize)> {
        let n = byte_len(self.ell);
        let need = n * self.delta as usize;
        if bytes.len() < need {
            return Err(Error::Serial("extension element truncated".into()));
        }
        let mut e = ExtElem::ZERO;
        for j in 0..self.delta as usize {
            let mut buf = [0u8; 8];
            buf[..n].copy_from_slice(&bytes[j * n..(j + 1) * n]);
            let limb = u64::from_le_bytes(buf) & self.mask;
            if self.tables.is_some() {
                e.c[0] |= (limb & 1) << j;
            } else {
                e.c[j] = limb;
            }
        }
        Ok((e, need))
    }

    pub fn elem_byte_len(&self) -> usize {
        byte_len(self.ell) * self.delta as usize
    }
}

/// GF(2)[X] inversion of `a` modulo the degree-`d` irreducible `irred`,
/// by extended Euclid on bit-packed polynomials.
fn gf2_inv(a: u32, irred: u32, d: u8) -> u32 {
    fn deg(x: u32) -> i32 {
        31 - x.leading_zeros() as i32
    }
    fn pmod(mut x: u32, m: u32) -> u32 {
        while x != 0 && deg(x) >= deg(m) {
            x ^= m << (deg(x) - deg(m));
        }
        x
    }
    fn pmul(mut a: u32, mut b: u32) -> u32 {
        let mut r = 0;
        while b != 0 {
            if b & 1 == 1 {
                r ^= a;
            }
            a <<= 1;
            b >>= 1;
        }
        r
    }
    // Fermat route: a^(2^d - 2) in GF(2^d). d <= 16, so this is cheap.
    let mut result = 1u32;
    let mut base = pmod(a, irred);
    let mut exp = (1u64 << d) - 2;
    while exp != 0 {
        if exp & 1 == 1 {
            result = pmod(pmul(result, base), irred);
        }
        base = pmod(pmul(base, base), irred);
        exp >>= 1;
    }
    result
}

fn build_tables(delta: u8, irred: u32) -> Result<FieldTables> {
    let q = 1usize << delta;
    // Find a multiplicative generator by trial.
    let order = |g: u32| -> usize {
        let mut x = 1u32;
        for i in 1..q {
            x = {
                // multiply by g mod irred, bitwise
                let mut r = 0u32;
                let mut a = x;
                let mut b = g;
                while b != 0 {
                    if b & 1 == 1 {
                        r ^= a;
                    }
                    a <<= 1;
                    if a >> delta & 1 == 1 {
                        a ^= irred;
                    }
                    b >>= 1;
                }
                r
            };
            if x == 1 {
                return i;
            }
        }
        q
    };
    let g = (2..q as u32)
        .find(|&g| order(g) == q - 1)
        .ok_or_else(|| Error::Config("no generator found".into()))?;
    let mut log = vec![0u16; q];
    let mut alog = vec![0u16; q - 1];
    let mut x = 1u32;
    for i in 0..q - 1 {
        alog[i] = x as u16;
        log[x as usize] = i as u16;
        // x <- x * g
        let mut r = 0u32;
        let mut a = x;
        let mut b = g;
        while b != 0 {
            if b & 1 == 1 {
                r ^= a;
            }
            a <<= 1;
            if a >> delta & 1 == 1 {
                a ^= irred;
            }
            b >>= 1;
        }
        x = r;
    }
    Ok(FieldTables { log, alog })
}

/// Proof-system parameter tier. All tiers run identical code; they only
/// trade soundness against work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZkConfig {
    pub delta: u8,
    pub m: usize,
    pub rho: usize,
}

impl ZkConfig {
    /// Deployment default: per-repetition error
    /// `2M/(2^delta-(2M+1)) + 2^-delta ~ 2^-2.8`, amplified to ~2^-41.
    pub fn production() -> Self {
        ZkConfig {
            delta: 8,
            m: 16,
            rho: 15,
        }
    }

    /// Single-repetition tier used by the soundness measurement.
    pub fn single_rep() -> Self {
        ZkConfig {
            delta: 8,
            m: 4,
            rho: 1,
        }
    }

    /// Minimal structure-preserving tier for very large correctness
    /// workloads under test harnesses. Every proof message and check
    /// still runs, but the parameters carry no statistical weight; do
    /// not deploy.
    pub fn light() -> Self {
        ZkConfig {
            delta: 2,
            m: 1,
            rho: 1,
        }
    }

    pub fn digest_bytes(&self) -> [u8; 3] {
        [self.delta, self.m as u8, self.rho as u8]
    }
}

/// Precomputed interpolation machinery for batches of `m` products.
#[derive(Clone)]
pub struct ZkParams {
    pub ctx: GrCtx,
    pub m: usize,
    pub rho: usize,
    /// Grid `e_0..e_{2m}`.
    points: Vec<ExtElem>,
    /// Barycentric weights over the f-grid `e_0..e_m`.
    w_f: Vec<ExtElem>,
    /// Row `t` evaluates a value-form poly on the f-grid at `e_{m+1+t}`.
    lag_rows_fg: Vec<Vec<ExtElem>>,
    /// `c_h = sum_k h(e_k) * lag_coeff_h[k]`.
    lag_coeff_h: Vec<Vec<ExtElem>>,
    /// Powers of `e_k` (k = 1..=m) for evaluating `h(e_k)` from `c_h`.
    powers_at_e: Vec<Vec<ExtElem>>,
}

impl ZkParams {
    pub fn new(ctx: GrCtx, m: usize, rho: usize) -> Result<Self> {
        if m == 0 || !m.is_power_of_two() {
            return Err(Error::Config(format!("batch size {m} not a power of two")));
        }
        if rho == 0 {
            return Err(Error::Config("at least one repetition".into()));
        }
        let n = 2 * m + 1;
        if (n as u64) + 1 > ctx.exceptional_count() {
            return Err(Error::Config(format!(
                "degree {delta} extension cannot host {n} interpolation points plus a challenge",
                delta = ctx.delta
            )));
        }
        let points: Vec<ExtElem> = (0..n as u64).map(|i| ctx.exceptional(i)).collect();
        let w_f = bary_weights(&ctx, &points[..=m])?;
        let lag_rows_fg = (0..m)
            .map(|t| lagrange_row(&ctx, &points[..=m], &w_f, &points[m + 1 + t]))
            .collect();
        let lag_coeff_h = lagrange_coeff_vectors(&ctx, &points)?;
        let powers_at_e = (1..=m)
            .map(|k| power_row(&ctx, &points[k], n))
            .collect();
        Ok(ZkParams {
            ctx,
            m,
            rho,
            points,
            w_f,
            lag_rows_fg,
            lag_coeff_h,
            powers_at_e,
        })
    }

    pub fn for_config(ell: u8, cfg: &ZkConfig) -> Result<Self> {
        ZkParams::new(GrCtx::auto(ell, cfg.delta)?, cfg.m, cfg.rho)
    }

    /// Lagrange row over the f-grid at an arbitrary point.
    pub fn eval_row_f(&self, r: &ExtElem) -> Vec<ExtElem> {
        lagrange_row(&self.ctx, &self.points[..=self.m], &self.w_f, r)
    }

    /// `1, r, .., r^{2m}`.
    pub fn power_row(&self, r: &ExtElem) -> Vec<ExtElem> {
        power_row(&self.ctx, r, 2 * self.m + 1)
    }

    /// Challenge point: exceptional, outside the interpolation grid.
    pub fn sample_challenge(&self, mut draw: impl FnMut() -> u64) -> ExtElem {
        let grid = (2 * self.m + 1) as u64;
        let spare = self.ctx.exceptional_count() - grid;
        self.ctx.exceptional(grid + draw() % spare)
    }

    /// Evaluates `h(e_k)` (k in 1..=m) from a `c_h` share.
    pub fn h_at_gate(&self, c_h: &[ExtElem], k: usize) -> ExtElem {
        dot(&self.ctx, &self.powers_at_e[k - 1], c_h)
    }
}

fn dot(ctx: &GrCtx, a: &[ExtElem], b: &[ExtElem]) -> ExtElem {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = ctx.zero();
    for (x, y) in a.iter().zip(b) {
        acc = ctx.add(&acc, &ctx.mul(x, y));
    }
    acc
}

fn power_row(ctx: &GrCtx, r: &ExtElem, n: usize) -> Vec<ExtElem> {
    let mut row = Vec::with_capacity(n);
    let mut p = ctx.one();
    for _ in 0..n {
        row.push(p);
        p = ctx.mul(&p, r);
    }
    row
}

/// `w_k = prod_{j != k} (e_k - e_j)^{-1}` over the given grid.
fn bary_weights(ctx: &GrCtx, grid: &[ExtElem]) -> Result<Vec<ExtElem>> {
    grid.iter()
        .enumerate()
        .map(|(k, ek)| {
            let mut prod = ctx.one();
            for (j, ej) in grid.iter().enumerate() {
                if j != k {
                    prod = ctx.mul(&prod, &ctx.sub(ek, ej));
                }
            }
            ctx.inv(&prod)
        })
        .collect()
}

/// `L_k(r)` for all `k` over `grid`, via prefix/suffix products.
fn lagrange_row(ctx: &GrCtx, grid: &[ExtElem], weights: &[ExtElem], r: &ExtElem) -> Vec<ExtElem> {
    let n = grid.len();
    let mut prefix = vec![ctx.one(); n + 1];
    for k in 0..n {
        prefix[k + 1] = ctx.mul(&prefix[k], &ctx.sub(r, &grid[k]));
    }
    let mut suffix = vec![ctx.one(); n + 1];
    for k in (0..n).rev() {
        suffix[k] = ctx.mul(&suffix[k + 1], &ctx.sub(r, &grid[k]));
    }
    (0..n)
        .map(|k| {
            let rest = ctx.mul(&prefix[k], &suffix[k + 1]);
            ctx.mul(&rest, &weights[k])
        })
        .collect()
}

/// Coefficient vectors of the Lagrange basis polynomials over `grid`:
/// interpolation becomes `coeffs = sum_k value_k * vec_k`.
fn lagrange_coeff_vectors(ctx: &GrCtx, grid: &[ExtElem]) -> Result<Vec<Vec<ExtElem>>> {
    let n = grid.len();
    // N(X) = prod (X - e_k), degree n.
    let mut big_n = vec![ctx.zero(); n + 1];
    big_n[0] = ctx.one();
    let mut deg = 0;
    for e in grid {
        // multiply by (X - e)
        for j in (0..=deg).rev() {
            let c = big_n[j];
            big_n[j + 1] = ctx.add(&big_n[j + 1], &c);
            big_n[j] = ctx.mul(&c, &ctx.neg(e));
        }
        deg += 1;
    }
    let weights = bary_weights(ctx, grid)?;
    let mut out = Vec::with_capacity(n);
    for (k, e) in grid.iter().enumerate() {
        // Synthetic division: q(X) = N(X) / (X - e), degree n-1.
        let mut q = vec![ctx.zero(); n];
        let mut carry = big_n[n];
        for j in (0..n).rev() {
            q[j] = carry;
            carry = ctx.add(&big_n[j], &ctx.mul(&carry, e));
        }
        debug_assert!(ctx.is_zero(&carry), "grid point not a root");
        for c in &mut q {
            *c = ctx.mul(c, &weights[k]);
        }
        out.push(q);
    }
    Ok(out)
}

/// Horner evaluation of a coefficient-form polynomial.
pub fn eval_coeffs(ctx: &GrCtx, coeffs: &[ExtElem], x: &ExtElem) -> ExtElem {
    let mut acc = ctx.zero();
    for c in coeffs.iter().rev() {
        acc = ctx.add(&ctx.mul(&acc, x), c);
    }
    acc
}

/// One repetition of one family batch: masks and `h` coefficients, plus
/// an optional witness block for relations that need one (the product
/// families here are fully statement-determined, so it stays empty).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZkProof {
    pub w: Vec<ExtElem>,
    pub z1: ExtElem,
    pub z2: ExtElem,
    pub c_h: Vec<ExtElem>,
}

impl ZkProof {
    /// Wire form: degree header (u16 lengths), then elements.
    pub fn to_bytes(&self, ctx: &GrCtx) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + (self.w.len() + 2 + self.c_h.len()) * ctx.elem_byte_len());
        out.extend_from_slice(&(self.w.len() as u16).to_le_bytes());
        out.extend_from_slice(&(self.c_h.len() as u16).to_le_bytes());
        for e in self.w.iter().chain([&self.z1, &self.z2]).chain(&self.c_h) {
            ctx.elem_to_bytes(e, &mut out);
        }
        out
    }

    pub fn from_bytes(ctx: &GrCtx, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Serial("proof header truncated".into()));
        }
        let w_len = u16::from_le_bytes(bytes[..2].try_into().unwrap()) as usize;
        let h_len = u16::from_le_bytes(bytes[2..4].try_into().unwrap()) as usize;
        let mut off = 4;
        let mut next = || -> Result<ExtElem> {
            let (e, used) = ctx.elem_from_bytes(&bytes[off..])?;
            off += used;
            Ok(e)
        };
        let w = (0..w_len).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let z1 = next()?;
        let z2 = next()?;
        let c_h = (0..h_len).map(|_| next()).collect::<Result<Vec<_>>>()?;
        Ok(ZkProof { w, z1, z2, c_h })
    }
}

/// Builds the proof for one batch: `a`, `b` are the product operands
/// (length `m`, zero-padded by the caller), `z1`, `z2` fresh masks.
pub fn zk_prove(p: &ZkParams, a: &[ExtElem], b: &[ExtElem], z1: ExtElem, z2: ExtElem) -> ZkProof {
    assert_eq!(a.len(), p.m);
    assert_eq!(b.len(), p.m);
    let ctx = &p.ctx;
    let n = 2 * p.m + 1;
    let mut evals = vec![ctx.zero(); n];
    evals[0] = ctx.mul(&z1, &z2);
    for k in 1..=p.m {
        evals[k] = ctx.mul(&a[k - 1], &b[k - 1]);
    }
    for t in 0..p.m {
        let row = &p.lag_rows_fg[t];
        let mut f = ctx.mul(&row[0], &z1);
        let mut g = ctx.mul(&row[0], &z2);
        for k in 1..=p.m {
            f = ctx.add(&f, &ctx.mul(&row[k], &a[k - 1]));
            g = ctx.add(&g, &ctx.mul(&row[k], &b[k - 1]));
        }
        evals[p.m + 1 + t] = ctx.mul(&f, &g);
    }
    let mut c_h = vec![ctx.zero(); n];
    for k in 0..n {
        if ctx.is_zero(&evals[k]) {
            continue;
        }
        let basis = &p.lag_coeff_h[k];
        for j in 0..n {
            c_h[j] = ctx.add(&c_h[j], &ctx.mul(&evals[k], &basis[j]));
        }
    }
    ZkProof {
        w: Vec::new(),
        z1,
        z2,
        c_h,
    }
}

/// Splits a proof additively; the first share is sampled fresh.
pub fn split_proof(
    ctx: &GrCtx,
    proof: &ZkProof,
    mut sample: impl FnMut() -> ExtElem,
) -> (ZkProof, ZkProof) {
    let mut split = |x: &ExtElem| {
        let s1 = sample();
        let s2 = ctx.sub(x, &s1);
        (s1, s2)
    };
    let ws: Vec<(ExtElem, ExtElem)> = proof.w.iter().map(&mut split).collect();
    let (z1a, z1b) = split(&proof.z1);
    let (z2a, z2b) = split(&proof.z2);
    let hs: Vec<(ExtElem, ExtElem)> = proof.c_h.iter().map(&mut split).collect();
    (
        ZkProof {
            w: ws.iter().map(|p| p.0).collect(),
            z1: z1a,
            z2: z2a,
            c_h: hs.iter().map(|p| p.0).collect(),
        },
        ZkProof {
            w: ws.iter().map(|p| p.1).collect(),
            z1: z1b,
            z2: z2b,
            c_h: hs.iter().map(|p| p.1).collect(),
        },
    )
}

/// One verifier's additive view of a batch.
pub struct VerifierSlice<'a> {
    /// Shares of the left/right operands (length `m`).
    pub a: &'a [ExtElem],
    pub b: &'a [ExtElem],
    /// Coefficient applied to `h(e_k)` in the aggregated linear check
    /// (verifier-sampled weight times the relation's sign for that slot).
    pub lin_coeff: &'a [ExtElem],
    /// This verifier's share of the affine remainder of the linear check.
    pub lin_const: ExtElem,
    pub proof: &'a ZkProof,
}

/// Linear answers computed from one verifier's shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZkAnswer {
    pub f_r: ExtElem,
    pub g_r: ExtElem,
    pub h_r: ExtElem,
    pub lin: ExtElem,
}

impl ZkAnswer {
    pub fn to_bytes(&self, ctx: &GrCtx) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * ctx.elem_byte_len());
        for e in [&self.f_r, &self.g_r, &self.h_r, &self.lin] {
            ctx.elem_to_bytes(e, &mut out);
        }
        out
    }

    pub fn from_bytes(ctx: &GrCtx, bytes: &[u8]) -> Result<(Self, usize)> {
        let mut off = 0;
        let mut next = || -> Result<ExtElem> {
            let (e, used) = ctx.elem_from_bytes(&bytes[off..])?;
            off += used;
            Ok(e)
        };
        let ans = ZkAnswer {
            f_r: next()?,
            g_r: next()?,
            h_r: next()?,
            lin: next()?,
        };
        Ok((ans, off))
    }
}

/// Evaluates the query answers at challenge `r` over one verifier's
/// shares. Everything here is linear in (statement share || proof
/// share), so the two verifiers' answers add up to the true values.
pub fn zk_answer(p: &ZkParams, v: &VerifierSlice, r: &ExtElem) -> ZkAnswer {
    let ctx = &p.ctx;
    let row = p.eval_row_f(r);
    let mut f_r = ctx.mul(&row[0], &v.proof.z1);
    let mut g_r = ctx.mul(&row[0], &v.proof.z2);
    for k in 1..=p.m {
        f_r = ctx.add(&f_r, &ctx.mul(&row[k], &v.a[k - 1]));
        g_r = ctx.add(&g_r, &ctx.mul(&row[k], &v.b[k - 1]));
    }
    let powers = p.power_row(r);
    let h_r = dot(ctx, &powers, &v.proof.c_h);
    let mut lin = v.lin_const;
    for k in 1..=p.m {
        let hk = p.h_at_gate(&v.proof.c_h, k);
        lin = ctx.add(&lin, &ctx.mul(&v.lin_coeff[k - 1], &hk));
    }
    ZkAnswer { f_r, g_r, h_r, lin }
}

/// Combiner-side decision over the two verifiers' answers.
pub fn zk_decide(ctx: &GrCtx, a1: &ZkAnswer, a2: &ZkAnswer) -> bool {
    let f = ctx.add(&a1.f_r, &a2.f_r);
    let g = ctx.add(&a1.g_r, &a2.g_r);
    let h = ctx.add(&a1.h_r, &a2.h_r);
    let lin = ctx.add(&a1.lin, &a2.lin);
    ctx.mul(&f, &g) == h && ctx.is_zero(&lin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rctx() -> GrCtx {
        GrCtx::new_ring(8, 8).unwrap()
    }

    #[test]
    fn ring_axioms() {
        let ctx = rctx();
        let mut rng = StdRng::seed_from_u64(1);
        let mut draw = || rng.gen::<u64>();
        for _ in 0..200 {
            let (a, b, c) = (
                ctx.sample(&mut draw),
                ctx.sample(&mut draw),
                ctx.sample(&mut draw),
            );
            assert_eq!(ctx.add(&a, &b), ctx.add(&b, &a));
            assert_eq!(ctx.mul(&a, &b), ctx.mul(&b, &a));
            assert_eq!(
                ctx.mul(&a, &ctx.mul(&b, &c)),
                ctx.mul(&ctx.mul(&a, &b), &c)
            );
            assert_eq!(
                ctx.mul(&a, &ctx.add(&b, &c)),
                ctx.add(&ctx.mul(&a, &b), &ctx.mul(&a, &c))
            );
            assert_eq!(ctx.sub(&ctx.add(&a, &b), &b), a);
            assert_eq!(ctx.mul(&a, &ctx.one()), a);
        }
    }

    #[test]
    fn exceptional_differences_invertible() {
        for delta in [2u8, 3, 4] {
            let ctx = GrCtx::new_ring(16, delta).unwrap();
            let n = ctx.exceptional_count();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d = ctx.sub(&ctx.exceptional(i), &ctx.exceptional(j));
                    let inv = ctx.inv(&d).unwrap();
                    assert_eq!(ctx.mul(&d, &inv), ctx.one());
                }
            }
        }
        // Sampled pairs at delta=8.
        let ctx = GrCtx::new_ring(64, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let i = rng.gen_range(0..256u64);
            let j = rng.gen_range(0..256u64);
            if i == j {
                continue;
            }
            let d = ctx.sub(&ctx.exceptional(i), &ctx.exceptional(j));
            assert_eq!(ctx.mul(&d, &ctx.inv(&d).unwrap()), ctx.one());
        }
    }

    #[test]
    fn field_path_matches_ring_path() {
        // At l=1 both representations realize GF(2^4); compare fully.
        let f = GrCtx::new_field(4).unwrap();
        let r = GrCtx::new_ring(1, 4).unwrap();
        let unpack = |x: u64| {
            let mut e = ExtElem::ZERO;
            for j in 0..4 {
                e.c[j] = (x >> j) & 1;
            }
            e
        };
        let pack = |e: &ExtElem| -> u64 { (0..4).map(|j| (e.c[j] & 1) << j).sum() };
        for x in 0..16u64 {
            for y in 0..16u64 {
                let pf = ExtElem {
                    c: {
                        let mut c = [0; MAX_RING_DELTA];
                        c[0] = x;
                        c
                    },
                };
                let qf = ExtElem {
                    c: {
                        let mut c = [0; MAX_RING_DELTA];
                        c[0] = y;
                        c
                    },
                };
                let prod_field = f.mul(&pf, &qf).c[0];
                let prod_ring = pack(&r.mul(&unpack(x), &unpack(y)));
                assert_eq!(prod_field, prod_ring, "mul mismatch at {x},{y}");
            }
        }
    }

    #[test]
    fn inversion_and_units() {
        let ctx = GrCtx::new_ring(64, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut draw = || rng.gen::<u64>();
        let mut tried = 0;
        while tried < 50 {
            let x = ctx.sample(&mut draw);
            if !ctx.is_unit(&x) {
                continue;
            }
            tried += 1;
            assert_eq!(ctx.mul(&x, &ctx.inv(&x).unwrap()), ctx.one());
        }
        let two = ctx.add(&ctx.one(), &ctx.one());
        assert!(!ctx.is_unit(&two));
        assert!(ctx.inv(&two).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        for ctx in [GrCtx::new_ring(64, 8).unwrap(), GrCtx::new_field(8).unwrap()] {
            let mut rng = StdRng::seed_from_u64(4);
            let mut draw = || rng.gen::<u64>();
            for _ in 0..20 {
                let x = ctx.sample(&mut draw);
                let mut bytes = Vec::new();
                ctx.elem_to_bytes(&x, &mut bytes);
                assert_eq!(bytes.len(), ctx.elem_byte_len());
                let (back, used) = ctx.elem_from_bytes(&bytes).unwrap();
                assert_eq!(back, x);
                assert_eq!(used, bytes.len());
            }
        }
    }

    #[test]
    fn interpolation_machinery() {
        let p = ZkParams::new(rctx(), 4, 1).unwrap();
        let ctx = &p.ctx;
        let mut rng = StdRng::seed_from_u64(5);
        let mut draw = || rng.gen::<u64>();
        // Random coefficient poly of degree 2m: evals -> coeffs round trip.
        let coeffs: Vec<ExtElem> = (0..9).map(|_| ctx.sample(&mut draw)).collect();
        let evals: Vec<ExtElem> = p
            .points
            .iter()
            .map(|e| eval_coeffs(ctx, &coeffs, e))
            .collect();
        let mut rec = vec![ctx.zero(); 9];
        for k in 0..9 {
            for j in 0..9 {
                rec[j] = ctx.add(&rec[j], &ctx.mul(&evals[k], &p.lag_coeff_h[k][j]));
            }
        }
        assert_eq!(rec, coeffs);
        // Lagrange row evaluates value-form polys correctly.
        let r = p.sample_challenge(&mut draw);
        let row = p.eval_row_f(&r);
        let vals: Vec<ExtElem> = (0..5).map(|_| ctx.sample(&mut draw)).collect();
        // Interpolate the degree-4 poly through (points[k], vals[k]) and
        // compare with the row-based evaluation.
        let basis5 = lagrange_coeff_vectors(ctx, &p.points[..5]).unwrap();
        let mut cs = vec![ctx.zero(); 5];
        for k in 0..5 {
            for j in 0..5 {
                cs[j] = ctx.add(&cs[j], &ctx.mul(&vals[k], &basis5[k][j]));
            }
        }
        let direct = eval_coeffs(ctx, &cs, &r);
        let vrow = dot(ctx, &row, &vals);
        assert_eq!(direct, vrow);
    }

    /// Drives prove/split/answer/decide for one batch and returns
    /// whether the combiner accepts.
    fn run_once(
        p: &ZkParams,
        a: &[ExtElem],
        b: &[ExtElem],
        rng: &mut StdRng,
        tamper: Option<(usize, ExtElem)>,
    ) -> bool {
        let ctx = &p.ctx;
        let draw = |rng: &mut StdRng| rng.gen::<u64>();
        let z1 = ctx.sample(|| draw(rng));
        let z2 = ctx.sample(|| draw(rng));
        let proof = zk_prove(p, a, b, z1, z2);
        let (mut p1, p2) = split_proof(ctx, &proof, || ctx.sample(|| rng.gen()));
        // Statement split: verifier 1 holds the operands, verifier 2
        // holds zero shares plus the claimed outputs as its lin side.
        let zeros = vec![ctx.zero(); p.m];
        let mu: Vec<ExtElem> = (0..p.m).map(|_| ctx.sample(|| rng.gen())).collect();
        // Relation per gate: h(e_k) - a_k b_k = 0. Verifier 1 carries
        // the claimed product in its affine part.
        let mut lin1 = ctx.zero();
        for k in 0..p.m {
            lin1 = ctx.sub(&lin1, &ctx.mul(&mu[k], &ctx.mul(&a[k], &b[k])));
        }
        if let Some((slot, delta)) = tamper {
            // Additive error in verifier 1's c_h share.
            let idx = slot % p1.c_h.len();
            p1.c_h[idx] = ctx.add(&p1.c_h[idx], &delta);
        }
        let r = p.sample_challenge(|| rng.gen());
        let v1 = VerifierSlice {
            a,
            b,
            lin_coeff: &mu,
            lin_const: lin1,
            proof: &p1,
        };
        let v2 = VerifierSlice {
            a: &zeros,
            b: &zeros,
            lin_coeff: &mu,
            lin_const: ctx.zero(),
            proof: &p2,
        };
        let ans1 = zk_answer(p, &v1, &r);
        let ans2 = zk_answer(p, &v2, &r);
        zk_decide(ctx, &ans1, &ans2)
    }

    #[test]
    fn single_gate_identities() {
        let p = ZkParams::new(rctx(), 1, 1).unwrap();
        let ctx = &p.ctx;
        let mut rng = StdRng::seed_from_u64(7);
        let a = [ctx.sample(|| rng.gen())];
        let b = [ctx.sample(|| rng.gen())];
        let z1 = ctx.sample(|| rng.gen());
        let z2 = ctx.sample(|| rng.gen());
        let proof = zk_prove(&p, &a, &b, z1, z2);
        // h(e_0) = z1 z2 and h(e_1) = ab.
        assert_eq!(
            eval_coeffs(ctx, &proof.c_h, &p.points[0]),
            ctx.mul(&z1, &z2)
        );
        assert_eq!(
            eval_coeffs(ctx, &proof.c_h, &p.points[1]),
            ctx.mul(&a[0], &b[0])
        );
        // h(r) = f(r) g(r) at every off-grid exceptional point.
        for i in 3..ctx.exceptional_count() {
            let r = ctx.exceptional(i);
            let row = p.eval_row_f(&r);
            let f = ctx.add(&ctx.mul(&row[0], &z1), &ctx.mul(&row[1], &a[0]));
            let g = ctx.add(&ctx.mul(&row[0], &z2), &ctx.mul(&row[1], &b[0]));
            assert_eq!(eval_coeffs(ctx, &proof.c_h, &r), ctx.mul(&f, &g));
        }
    }

    #[test]
    fn padded_batch_vanishes_at_last_point() {
        let p = ZkParams::new(rctx(), 4, 1).unwrap();
        let ctx = &p.ctx;
        let mut rng = StdRng::seed_from_u64(8);
        // Three real gates, one pad.
        let mut a: Vec<ExtElem> = (0..3).map(|_| ctx.sample(|| rng.gen())).collect();
        let mut b: Vec<ExtElem> = (0..3).map(|_| ctx.sample(|| rng.gen())).collect();
        a.push(ctx.zero());
        b.push(ctx.zero());
        let proof = zk_prove(
            &p,
            &a,
            &b,
            ctx.sample(|| rng.gen()),
            ctx.sample(|| rng.gen()),
        );
        assert!(ctx.is_zero(&eval_coeffs(ctx, &proof.c_h, &p.points[4])));
    }

    #[test]
    fn honest_accepts_and_tampering_rejects() {
        let p = ZkParams::new(rctx(), 4, 1).unwrap();
        let ctx = GrCtx::new_ring(8, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let a: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
            let b: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
            assert!(run_once(&p, &a, &b, &mut rng, None));
        }
        // Tampered c_h constant term: h(0) = z1 z2 breaks and the shift
        // r^0 * delta != 0 always lands in h(r).
        let mut rejected = 0;
        for _ in 0..100 {
            let a: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
            let b: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
            let mut delta = ctx.sample(|| rng.gen());
            if ctx.is_zero(&delta) {
                delta = ctx.one();
            }
            if !run_once(&p, &a, &b, &mut rng, Some((0, delta)))
            {
                rejected += 1;
            }
        }
        assert_eq!(rejected, 100, "constant-term tampering must always reject");
    }

    #[test]
    fn soundness_smoke() {
        // Random additive errors in a random c_h slot; empirical
        // acceptance stays below the analytic bound with slack.
        let p = ZkParams::new(rctx(), 4, 1).unwrap();
        let ctx = GrCtx::new_ring(8, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(10);
        let trials = 500;
        let mut accepted = 0;
        for _ in 0..trials {
            let a: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
            let b: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
            let mut delta = ctx.sample(|| rng.gen());
            if ctx.is_zero(&delta) {
                delta = ctx.one();
            }
            let slot = rng.gen_range(1..9);
            if run_once(&p, &a, &b, &mut rng, Some((slot, delta))) {
                accepted += 1;
            }
        }
        let bound = 2.0 * (2.0 * 4.0 - 1.0) / (256.0 - 2.0);
        assert!(
            (accepted as f64) <= bound * trials as f64 * 1.5,
            "{accepted}/{trials} accepted, bound {bound}"
        );
    }

    #[test]
    fn field_proof_round_trip() {
        // Boolean statements at l=1 run through the same pipeline.
        let ctx = GrCtx::new_field(8).unwrap();
        let p = ZkParams::new(ctx, 4, 1).unwrap();
        let ctx = &p.ctx;
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<ExtElem> = (0..4)
                .map(|_| ctx.from_ring(RingElem::new(rng.gen::<u64>() & 1, 1)))
                .collect();
            let b: Vec<ExtElem> = (0..4)
                .map(|_| ctx.from_ring(RingElem::new(rng.gen::<u64>() & 1, 1)))
                .collect();
            assert!(run_once(&p, &a, &b, &mut rng, None));
        }
    }

    #[test]
    fn proof_serialization() {
        let p = ZkParams::new(rctx(), 4, 1).unwrap();
        let ctx = &p.ctx;
        let mut rng = StdRng::seed_from_u64(12);
        let a: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
        let b: Vec<ExtElem> = (0..4).map(|_| ctx.sample(|| rng.gen())).collect();
        let proof = zk_prove(&p, &a, &b, ctx.sample(|| rng.gen()), ctx.sample(|| rng.gen()));
        let bytes = proof.to_bytes(ctx);
        let back = ZkProof::from_bytes(ctx, &bytes).unwrap();
        assert_eq!(back, proof);
    }

    #[test]
    fn config_tiers_construct() {
        for cfg in [ZkConfig::production(), ZkConfig::single_rep(), ZkConfig::light()] {
            ZkParams::for_config(64, &cfg).unwrap();
            ZkParams::for_config(1, &cfg).unwrap();
        }
        // Too many points for the extension degree.
        assert!(ZkParams::new(GrCtx::new_ring(8, 2).unwrap(), 4, 1).is_err());
    }
}
