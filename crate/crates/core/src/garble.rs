//! Two-garbler garbling scheme and the sign-bit circuit.
//!
//! The constant-round bit extraction has P0 and P1 garble the same
//! circuit from shared randomness (so the evaluator can cross-check
//! both copies) and P2 evaluate it. The scheme is classic free-XOR
//! with point-and-permute: a wire's two labels differ by a global
//! offset whose low bit is set, so XOR gates cost nothing and an AND
//! gate is a four-row table indexed by the operand labels' low bits.
//!
//! The only circuit shipped computes `msb(u1 - u2 - u3) ^ u4 ^ u5`:
//! the subtraction becomes `u1 + !u2 + !u3 + 2`, a carry-save stage
//! turns the three operands into two, and a majority chain produces
//! the carry into the top bit. That keeps the AND count at `2l - 3`;
//! chain depth is irrelevant under garbling since evaluation is local.

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const LABEL_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WireLabel(pub [u8; LABEL_BYTES]);

impl WireLabel {
    pub fn xor(&self, other: &WireLabel) -> WireLabel {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.0) {
            *o ^= b;
        }
        WireLabel(out)
    }

    /// Point-and-permute bit.
    pub fn lsb(&self) -> bool {
        self.0[0] & 1 == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Xor(u32, u32),
    And(u32, u32),
    Not(u32),
}

/// Boolean circuit over five input groups with a single output bit.
/// Wires `0..n_inputs` are inputs; gate `i` drives wire `n_inputs+i`.
#[derive(Clone, Debug)]
pub struct BoolCircuit {
    pub n_inputs: u32,
    /// Input wire ranges for u1..u5.
    pub groups: [std::ops::Range<u32>; 5],
    pub gates: Vec<Gate>,
    pub output: u32,
}

impl BoolCircuit {
    pub fn n_wires(&self) -> usize {
        self.n_inputs as usize + self.gates.len()
    }

    pub fn and_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::And(..)))
            .count()
    }

    /// Reference evaluation; `inputs` is indexed by input wire id.
    pub fn eval_plain(&self, inputs: &[bool]) -> bool {
        assert_eq!(inputs.len(), self.n_inputs as usize);
        let mut vals = Vec::with_capacity(self.n_wires());
        vals.extend_from_slice(inputs);
        for g in &self.gates {
            let v = match *g {
                Gate::Xor(a, b) => vals[a as usize] ^ vals[b as usize],
                Gate::And(a, b) => vals[a as usize] & vals[b as usize],
                Gate::Not(a) => !vals[a as usize],
            };
            vals.push(v);
        }
        vals[self.output as usize]
    }
}

/// Incremental circuit builder.
struct Builder {
    n_inputs: u32,
    gates: Vec<Gate>,
}

impl Builder {
    fn push(&mut self, g: Gate) -> u32 {
        self.gates.push(g);
        self.n_inputs + self.gates.len() as u32 - 1
    }
    fn xor(&mut self, a: u32, b: u32) -> u32 {
        self.push(Gate::Xor(a, b))
    }
    fn and(&mut self, a: u32, b: u32) -> u32 {
        self.push(Gate::And(a, b))
    }
    fn not(&mut self, a: u32) -> u32 {
        self.push(Gate::Not(a))
    }
    /// One AND: maj(a,b,c) = ((a^c)&(b^c))^c.
    fn maj(&mut self, a: u32, b: u32, c: u32) -> u32 {
        let ac = self.xor(a, c);
        let bc = self.xor(b, c);
        let t = self.and(ac, bc);
        self.xor(t, c)
    }
    /// One AND: a|b = !(!a & !b).
    fn or(&mut self, a: u32, b: u32) -> u32 {
        let na = self.not(a);
        let nb = self.not(b);
        let t = self.and(na, nb);
        self.not(t)
    }
}

/// `msb(u1 - u2 - u3) ^ u4 ^ u5` over `ell`-bit operands; u4 and u5
/// are single bits. Uses `2*ell - 3` AND gates.
pub fn build_msb_circuit(ell: u8) -> BoolCircuit {
    let l = ell as u32;
    assert!(l >= 4, "sign extraction needs at least 4 bits");
    let n_inputs = 3 * l + 2;
    let u1 = 0..l;
    let u2 = l..2 * l;
    let u3 = 2 * l..3 * l;
    let u4 = 3 * l;
    let u5 = 3 * l + 1;
    let mut b = Builder {
        n_inputs,
        gates: Vec::new(),
    };

    // u1 - u2 - u3 = u1 + !u2 + !u3 + 2 (mod 2^l). Carry-save the
    // three operands into sum bits X and carry bits cs (shifted up by
    // one: Y_i = cs_{i-1}, Y_0 = 0).
    let nu2: Vec<u32> = (0..l).map(|i| b.not(u2.start + i)).collect();
    let nu3: Vec<u32> = (0..l).map(|i| b.not(u3.start + i)).collect();
    let x: Vec<u32> = (0..l as usize)
        .map(|i| {
            let t = b.xor(u1.start + i as u32, nu2[i]);
            b.xor(t, nu3[i])
        })
        .collect();
    let cs: Vec<u32> = (0..l as usize - 1)
        .map(|i| b.maj(u1.start + i as u32, nu2[i], nu3[i]))
        .collect();

    // X + Y + 2: bit 0 produces no carry (Y_0 = 0); the constant 2
    // acts as a forced carry into bit 1, so the carry out of bit 1 is
    // an OR; above that a plain majority chain up to the carry into
    // the top bit.
    let y = |i: usize| cs[i - 1];
    let mut carry = b.or(x[1], y(1));
    for i in 2..l as usize - 1 {
        carry = b.maj(x[i], y(i), carry);
    }
    let top = l as usize - 1;
    let t = b.xor(x[top], y(top));
    let t = b.xor(t, carry);
    let t = b.xor(t, u4);
    let output = b.xor(t, u5);

    BoolCircuit {
        n_inputs,
        groups: [u1, u2, u3, u4..u4 + 1, u5..u5 + 1],
        gates: b.gates,
        output,
    }
}

/// Four-row AND tables plus the output decode bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GarbledCircuit {
    tables: Vec<[[u8; 32]; 4]>,
    pub decode: bool,
}

impl GarbledCircuit {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.tables.len() * 128);
        out.extend_from_slice(&(self.tables.len() as u32).to_le_bytes());
        out.push(self.decode as u8);
        for t in &self.tables {
            for row in t {
                out.extend_from_slice(row);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Serial("garbled circuit truncated".into()));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let decode = bytes[4] != 0;
        if bytes.len() != 5 + n * 128 {
            return Err(Error::Serial("garbled circuit length mismatch".into()));
        }
        let mut tables = Vec::with_capacity(n);
        for i in 0..n {
            let mut t = [[0u8; 32]; 4];
            for (r, row) in t.iter_mut().enumerate() {
                let off = 5 + i * 128 + r * 32;
                row.copy_from_slice(&bytes[off..off + 32]);
            }
            tables.push(t);
        }
        Ok(GarbledCircuit { tables, decode })
    }
}

/// Garbler-side result: the global offset, the zero-label of every
/// wire, and the tables. Both garblers produce identical bytes when
/// fed the same randomness.
pub struct GarbleOut {
    pub delta: WireLabel,
    wire0: Vec<WireLabel>,
    pub gc: GarbledCircuit,
}

impl GarbleOut {
    /// The label carrying `bit` on `wire`.
    pub fn active_label(&self, wire: u32, bit: bool) -> WireLabel {
        let k0 = self.wire0[wire as usize];
        if bit {
            k0.xor(&self.delta)
        } else {
            k0
        }
    }

    /// Both labels of a wire, value order.
    pub fn label_pair(&self, wire: u32) -> [WireLabel; 2] {
        [self.active_label(wire, false), self.active_label(wire, true)]
    }
}

fn row_hash(la: &WireLabel, lb: &WireLabel, gate_idx: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(la.0);
    h.update(lb.0);
    h.update(gate_idx.to_le_bytes());
    h.finalize().into()
}

/// Garbles `circ` with labels drawn from `rand` (a shared-key stream
/// when two garblers must agree).
pub fn garble(circ: &BoolCircuit, mut rand: impl FnMut(&mut [u8])) -> GarbleOut {
    let mut fresh = || {
        let mut l = [0u8; LABEL_BYTES];
        rand(&mut l);
        WireLabel(l)
    };
    let mut delta = fresh();
    delta.0[0] |= 1;

    let mut wire0: Vec<WireLabel> = Vec::with_capacity(circ.n_wires());
    for _ in 0..circ.n_inputs {
        wire0.push(fresh());
    }
    let mut tables = Vec::with_capacity(circ.and_count());
    for (gi, g) in circ.gates.iter().enumerate() {
        let k0 = match *g {
            Gate::Xor(a, b) => wire0[a as usize].xor(&wire0[b as usize]),
            Gate::Not(a) => wire0[a as usize].xor(&delta),
            Gate::And(a, b) => {
                let c0 = fresh();
                let mut table = [[0u8; 32]; 4];
                for ra in 0..2usize {
                    for rb in 0..2usize {
                        // Row (ra, rb) is selected by labels whose
                        // permute bits are ra, rb.
                        let va = ra != (wire0[a as usize].lsb() as usize);
                        let vb = rb != (wire0[b as usize].lsb() as usize);
                        let la = if va {
                            wire0[a as usize].xor(&delta)
                        } else {
                            wire0[a as usize]
                        };
                        let lb = if vb {
                            wire0[b as usize].xor(&delta)
                        } else {
                            wire0[b as usize]
                        };
                        let lc = if va && vb { c0.xor(&delta) } else { c0 };
                        let h = row_hash(&la, &lb, gi as u32);
                        let row = &mut table[ra * 2 + rb];
                        row.copy_from_slice(&h);
                        for (o, b) in row[..LABEL_BYTES].iter_mut().zip(lc.0) {
                            *o ^= b;
                        }
                    }
                }
                tables.push(table);
                c0
            }
        };
        wire0.push(k0);
    }
    let decode = wire0[circ.output as usize].lsb();
    GarbleOut {
        delta,
        wire0,
        gc: GarbledCircuit { tables, decode },
    }
}

/// Evaluates with one active label per input wire. Returns the output
/// bit and its label (whose hash proves honest evaluation).
pub fn eval(
    circ: &BoolCircuit,
    gc: &GarbledCircuit,
    inputs: &[(u32, WireLabel)],
) -> Result<(bool, WireLabel)> {
    if gc.tables.len() != circ.and_count() {
        return Err(Error::Serial("garbled circuit shape mismatch".into()));
    }
    let mut labels: Vec<Option<WireLabel>> = vec![None; circ.n_wires()];
    for &(w, l) in inputs {
        labels[w as usize] = Some(l);
    }
    let missing = || Error::Abort("garbled evaluation hit an unset wire".into());
    let mut and_idx = 0usize;
    for (gi, g) in circ.gates.iter().enumerate() {
        let v = match *g {
            Gate::Xor(a, b) => labels[a as usize]
                .ok_or_else(missing)?
                .xor(&labels[b as usize].ok_or_else(missing)?),
            // The roles of the two labels swap; the bytes pass through.
            Gate::Not(a) => labels[a as usize].ok_or_else(missing)?,
            Gate::And(a, b) => {
                let la = labels[a as usize].ok_or_else(missing)?;
                let lb = labels[b as usize].ok_or_else(missing)?;
                let row = &gc.tables[and_idx][(la.lsb() as usize) * 2 + lb.lsb() as usize];
                and_idx += 1;
                let h = row_hash(&la, &lb, gi as u32);
                if row[LABEL_BYTES..] != h[LABEL_BYTES..] {
                    return Err(Error::Abort(
                        "garbled table decryption failed".into(),
                    ));
                }
                let mut lc = [0u8; LABEL_BYTES];
                for (o, (r, hb)) in lc.iter_mut().zip(row.iter().zip(h)) {
                    *o = r ^ hb;
                }
                WireLabel(lc)
            }
        };
        labels[circ.n_inputs as usize + gi] = Some(v);
    }
    let out = labels[circ.output as usize].ok_or_else(missing)?;
    Ok((out.lsb() ^ gc.decode, out))
}

/// Splits an `ell`-bit value into circuit input bits, LSB first.
pub fn value_bits(v: u64, ell: u8) -> Vec<bool> {
    (0..ell).map(|i| (v >> i) & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, RngCore, SeedableRng};

    fn msb_reference(ell: u8, u1: u64, u2: u64, u3: u64, u4: bool, u5: bool) -> bool {
        let mask = if ell == 64 { u64::MAX } else { (1 << ell) - 1 };
        let v = u1.wrapping_sub(u2).wrapping_sub(u3) & mask;
        ((v >> (ell - 1)) & 1 == 1) ^ u4 ^ u5
    }

    fn circuit_inputs(circ: &BoolCircuit, ell: u8, vals: [u64; 3], u4: bool, u5: bool) -> Vec<bool> {
        let mut inputs = vec![false; circ.n_inputs as usize];
        for (g, v) in vals.iter().enumerate() {
            for (i, bit) in value_bits(*v, ell).into_iter().enumerate() {
                inputs[circ.groups[g].start as usize + i] = bit;
            }
        }
        inputs[circ.groups[3].start as usize] = u4;
        inputs[circ.groups[4].start as usize] = u5;
        inputs
    }

    #[test]
    fn msb_circuit_matches_arithmetic() {
        let circ = build_msb_circuit(8);
        for u1 in 0..=255u64 {
            for u2 in 0..=255u64 {
                let u3 = (u1 * 73 + u2 * 31 + 9) & 0xff;
                let u4 = u1 & 1 == 1;
                let u5 = u2 & 1 == 1;
                let inputs = circuit_inputs(&circ, 8, [u1, u2, u3], u4, u5);
                assert_eq!(
                    circ.eval_plain(&inputs),
                    msb_reference(8, u1, u2, u3, u4, u5),
                    "u1={u1} u2={u2} u3={u3}"
                );
            }
        }
        // Wider widths, random sample.
        let mut rng = StdRng::seed_from_u64(3);
        for &ell in &[16u8, 32, 64] {
            let circ = build_msb_circuit(ell);
            let mask = if ell == 64 { u64::MAX } else { (1 << ell) - 1 };
            for _ in 0..200 {
                let v = [
                    rng.gen::<u64>() & mask,
                    rng.gen::<u64>() & mask,
                    rng.gen::<u64>() & mask,
                ];
                let inputs = circuit_inputs(&circ, ell, v, false, true);
                assert_eq!(
                    circ.eval_plain(&inputs),
                    msb_reference(ell, v[0], v[1], v[2], false, true)
                );
            }
        }
    }

    #[test]
    fn and_count_within_budget() {
        for &ell in &[8u8, 16, 32, 64] {
            let circ = build_msb_circuit(ell);
            assert_eq!(circ.and_count(), 2 * ell as usize - 3);
            assert!(circ.and_count() <= 2 * ell as usize);
        }
    }

    #[test]
    fn garble_eval_matches_plain() {
        let circ = build_msb_circuit(8);
        let mut rng = StdRng::seed_from_u64(17);
        let out = garble(&circ, |buf| rng.fill_bytes(buf));
        // Determinism: same stream, same bytes.
        let mut rng2 = StdRng::seed_from_u64(17);
        let out2 = garble(&circ, |buf| rng2.fill_bytes(buf));
        assert_eq!(out.gc.to_bytes(), out2.gc.to_bytes());

        let mut vrng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let vals = [vrng.gen::<u64>() & 0xff, vrng.gen::<u64>() & 0xff, vrng.gen::<u64>() & 0xff];
            let (u4, u5) = (vrng.gen(), vrng.gen());
            let inputs = circuit_inputs(&circ, 8, vals, u4, u5);
            let labels: Vec<(u32, WireLabel)> = (0..circ.n_inputs)
                .map(|w| (w, out.active_label(w, inputs[w as usize])))
                .collect();
            let (bit, _) = eval(&circ, &out.gc, &labels).unwrap();
            assert_eq!(bit, circ.eval_plain(&inputs));
        }
    }

    #[test]
    fn gc_round_trips_and_rejects_tampering() {
        let circ = build_msb_circuit(8);
        let mut rng = StdRng::seed_from_u64(23);
        let out = garble(&circ, |buf| rng.fill_bytes(buf));
        let bytes = out.gc.to_bytes();
        let parsed = GarbledCircuit::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, out.gc);
        assert!(GarbledCircuit::from_bytes(&bytes[..bytes.len() - 1]).is_err());

        // Corrupt every row's tag: evaluation must notice at the first
        // AND gate it touches.
        let mut bad = out.gc.clone();
        for t in &mut bad.tables {
            for row in t.iter_mut() {
                row[31] ^= 0x80;
            }
        }
        let inputs = circuit_inputs(&circ, 8, [5, 1, 1], false, false);
        let labels: Vec<(u32, WireLabel)> = (0..circ.n_inputs)
            .map(|w| (w, out.active_label(w, inputs[w as usize])))
            .collect();
        assert!(matches!(eval(&circ, &bad, &labels), Err(Error::Abort(_))));
    }

    #[test]
    fn output_label_identifies_value() {
        let circ = build_msb_circuit(8);
        let mut rng = StdRng::seed_from_u64(29);
        let out = garble(&circ, |buf| rng.fill_bytes(buf));
        let pair = out.label_pair(circ.output);
        for (vals, expect) in [([5u64, 1, 1], false), ([0u64, 1, 0], true)] {
            let inputs = circuit_inputs(&circ, 8, vals, false, false);
            let labels: Vec<(u32, WireLabel)> = (0..circ.n_inputs)
                .map(|w| (w, out.active_label(w, inputs[w as usize])))
                .collect();
            let (bit, label) = eval(&circ, &out.gc, &labels).unwrap();
            assert_eq!(bit, expect);
            assert_eq!(label, pair[bit as usize]);
        }
    }
}
