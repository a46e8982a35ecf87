//! Shared-key setup, PRF streams, hashing, and commitments.
//!
//! Setup places one 128-bit key between every pair of servers plus one
//! common to all three. Correlated randomness is drawn from per-context
//! ChaCha streams seeded by `SHA-256(key || context)`; two holders of a
//! key derive byte-identical streams as long as they issue the same
//! sequence of draws per context, which the protocol layer guarantees.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::ring::{width_mask, RingElem};
use crate::{Error, Result, Role};

pub const KEY_BYTES: usize = 16;
pub const SALT_BYTES: usize = 16;

/// Identifies one of the four session keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyId {
    /// Shared by P0 and P1.
    K01,
    /// Shared by P0 and P2.
    K02,
    /// Shared by P1 and P2.
    K12,
    /// Shared by all three servers.
    KP,
}

impl KeyId {
    pub const ALL: [KeyId; 4] = [KeyId::K01, KeyId::K02, KeyId::K12, KeyId::KP];

    fn slot(self) -> usize {
        match self {
            KeyId::K01 => 0,
            KeyId::K02 => 1,
            KeyId::K12 => 2,
            KeyId::KP => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            KeyId::K01 => "k01",
            KeyId::K02 => "k02",
            KeyId::K12 => "k12",
            KeyId::KP => "kp",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        KeyId::ALL.into_iter().find(|k| k.name() == s)
    }

    /// The pair key between two distinct servers.
    pub fn pair(a: Role, b: Role) -> KeyId {
        use Role::*;
        match (a.min(b), a.max(b)) {
            (P0, P1) => KeyId::K01,
            (P0, P2) => KeyId::K02,
            (P1, P2) => KeyId::K12,
            _ => panic!("pair key of a role with itself"),
        }
    }

    /// Which roles hold this key.
    pub fn holders(self) -> &'static [Role] {
        use Role::*;
        match self {
            KeyId::K01 => &[P0, P1],
            KeyId::K02 => &[P0, P2],
            KeyId::K12 => &[P1, P2],
            KeyId::KP => &[P0, P1, P2],
        }
    }
}

/// A structured PRF context: protocol tag plus numeric coordinates
/// (instance, gate index, part). Both holders of a key must build the
/// context identically for their streams to line up.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ctx {
    bytes: Vec<u8>,
}

impl Ctx {
    pub fn new(proto: &str) -> Self {
        debug_assert!(!proto.as_bytes().contains(&0));
        let mut bytes = proto.as_bytes().to_vec();
        bytes.push(0);
        Ctx { bytes }
    }

    /// Appends a numeric coordinate.
    pub fn arg(mut self, v: u64) -> Self {
        self.bytes.extend_from_slice(&v.to_le_bytes());
        self
    }

    fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// One server's view of the session keys, with cached PRF streams.
///
/// Not thread-safe by contract: a key set is confined to one session
/// thread, and stream positions advance on each draw.
pub struct SessionKeys {
    role: Role,
    keys: [Option<[u8; KEY_BYTES]>; 4],
    streams: HashMap<(KeyId, Ctx), ChaCha12Rng>,
}

impl SessionKeys {
    fn empty(role: Role) -> Self {
        SessionKeys {
            role,
            keys: [None; 4],
            streams: HashMap::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn has_key(&self, id: KeyId) -> bool {
        self.keys[id.slot()].is_some()
    }

    fn key(&self, id: KeyId) -> Result<&[u8; KEY_BYTES]> {
        self.keys[id.slot()]
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} does not hold {}", self.role, id.name())))
    }

    /// The ChaCha stream for `(key, context)`, created on first use.
    fn stream(&mut self, id: KeyId, ctx: &Ctx) -> Result<&mut ChaCha12Rng> {
        let key = *self.key(id)?;
        Ok(self
            .streams
            .entry((id, ctx.clone()))
            .or_insert_with(|| {
                let mut h = Sha256::new();
                h.update(key);
                h.update(ctx.as_bytes());
                ChaCha12Rng::from_seed(h.finalize().into())
            }))
    }

    /// Draws one ring element.
    pub fn elem(&mut self, id: KeyId, ctx: &Ctx, ell: u8) -> Result<RingElem> {
        let mask = width_mask(ell);
        let s = self.stream(id, ctx)?;
        Ok(RingElem::new(s.next_u64() & mask, ell))
    }

    /// Draws `n` ring elements in one pass.
    pub fn elems(&mut self, id: KeyId, ctx: &Ctx, ell: u8, n: usize) -> Result<Vec<RingElem>> {
        let mask = width_mask(ell);
        let s = self.stream(id, ctx)?;
        Ok((0..n)
            .map(|_| RingElem::new(s.next_u64() & mask, ell))
            .collect())
    }

    /// Fills `out` with stream bytes (salts, wire labels).
    pub fn fill(&mut self, id: KeyId, ctx: &Ctx, out: &mut [u8]) -> Result<()> {
        self.stream(id, ctx)?.fill_bytes(out);
        Ok(())
    }

    pub fn salt(&mut self, id: KeyId, ctx: &Ctx) -> Result<[u8; SALT_BYTES]> {
        let mut s = [0u8; SALT_BYTES];
        self.fill(id, ctx, &mut s)?;
        Ok(s)
    }

    /// Randomness known only to this server: each server holds a key
    /// set no other single server has in full, so hashing all held
    /// keys yields a stream the other two cannot reconstruct. Used for
    /// proof masks and share splits that must stay private.
    pub fn private_stream(&self, ctx: &Ctx) -> ChaCha12Rng {
        let mut h = Sha256::new();
        h.update([self.role.index() as u8]);
        for (slot, key) in self.keys.iter().enumerate() {
            if let Some(k) = key {
                h.update([slot as u8]);
                h.update(k);
            }
        }
        h.update(ctx.as_bytes());
        ChaCha12Rng::from_seed(h.finalize().into())
    }
}

/// Derives all four keys from a master seed and returns each server's view.
pub fn generate_keys(seed: [u8; 32]) -> [SessionKeys; 3] {
    let mut rng = ChaCha12Rng::from_seed(seed);
    let mut fresh = || {
        let mut k = [0u8; KEY_BYTES];
        rng.fill_bytes(&mut k);
        k
    };
    let all: [[u8; KEY_BYTES]; 4] = [fresh(), fresh(), fresh(), fresh()];
    let mut out = Role::ALL.map(SessionKeys::empty);
    for id in KeyId::ALL {
        for &r in id.holders() {
            out[r.index()].keys[id.slot()] = Some(all[id.slot()]);
        }
    }
    out
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Config("odd-length hex string".into()));
    }
    (0..s.len() / 2)
        .map(|i| {
            u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Config(format!("bad hex in key file: {s:?}")))
        })
        .collect()
}

/// Writes one key file per role into `dir`: role name on the first line,
/// then `<key-name> <hex>` per held key.
pub fn write_key_files(keys: &[SessionKeys; 3], dir: &Path) -> Result<()> {
    for ks in keys {
        let mut f = std::fs::File::create(dir.join(format!("{}.keys", ks.role)))?;
        writeln!(f, "{}", ks.role)?;
        for id in KeyId::ALL {
            if let Some(k) = ks.keys[id.slot()] {
                writeln!(f, "{} {}", id.name(), hex_encode(&k))?;
            }
        }
    }
    Ok(())
}

/// Loads one role's key file and checks it holds exactly the keys that
/// setup assigns to that role.
pub fn load_key_file(path: &Path) -> Result<SessionKeys> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let role = Role::from_name(lines.next().unwrap_or("").trim())?;
    let mut ks = SessionKeys::empty(role);
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, hexkey) = line
            .split_once(' ')
            .ok_or_else(|| Error::Config(format!("malformed key line {line:?}")))?;
        let id = KeyId::from_name(name)
            .ok_or_else(|| Error::Config(format!("unknown key name {name:?}")))?;
        if !id.holders().contains(&role) {
            return Err(Error::Config(format!("{role} must not hold {name}")));
        }
        if ks.keys[id.slot()].is_some() {
            return Err(Error::Config(format!("duplicate key {name} in file")));
        }
        let raw = hex_decode(hexkey)?;
        let raw: [u8; KEY_BYTES] = raw
            .try_into()
            .map_err(|_| Error::Config(format!("{name} is not {KEY_BYTES} bytes")))?;
        ks.keys[id.slot()] = Some(raw);
    }
    for id in KeyId::ALL {
        if id.holders().contains(&role) && !ks.has_key(id) {
            return Err(Error::Config(format!("{role} key file missing {}", id.name())));
        }
    }
    Ok(ks)
}

/// SHA-256 of `data`.
pub fn hash_bytes(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// SHA-256 over length-prefixed items: for each item, an 8-byte
/// little-endian length then the bytes. No items hashes the empty string.
pub fn transcript_hash<I, B>(items: I) -> [u8; 32]
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut h = Sha256::new();
    for item in items {
        let item = item.as_ref();
        h.update((item.len() as u64).to_le_bytes());
        h.update(item);
    }
    h.finalize().into()
}

/// Hash commitment to a byte string under a 128-bit salt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Commitment(pub [u8; 32]);

/// The message that opens a commitment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opening {
    pub value: Vec<u8>,
    pub salt: [u8; SALT_BYTES],
}

pub fn commit(value: &[u8], salt: [u8; SALT_BYTES]) -> Commitment {
    let mut h = Sha256::new();
    h.update((value.len() as u32).to_le_bytes());
    h.update(value);
    h.update(salt);
    Commitment(h.finalize().into())
}

impl Commitment {
    pub fn verify(&self, opening: &Opening) -> bool {
        commit(&opening.value, opening.salt) == *self
    }
}

impl Opening {
    /// Wire form: 4-byte little-endian length, value, salt.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.value.len() + SALT_BYTES);
        out.extend_from_slice(&(self.value.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.value);
        out.extend_from_slice(&self.salt);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + SALT_BYTES {
            return Err(Error::Serial("opening too short".into()));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + n + SALT_BYTES {
            return Err(Error::Serial("opening length mismatch".into()));
        }
        Ok(Opening {
            value: bytes[4..4 + n].to_vec(),
            salt: bytes[4 + n..].try_into().unwrap(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_distribution_matches_setup() {
        let keys = generate_keys([7u8; 32]);
        assert!(keys[0].has_key(KeyId::K01) && keys[0].has_key(KeyId::K02));
        assert!(keys[0].has_key(KeyId::KP) && !keys[0].has_key(KeyId::K12));
        assert!(keys[1].has_key(KeyId::K01) && keys[1].has_key(KeyId::K12));
        assert!(!keys[1].has_key(KeyId::K02));
        assert!(keys[2].has_key(KeyId::K02) && keys[2].has_key(KeyId::K12));
        assert!(!keys[2].has_key(KeyId::K01));
        for ks in &keys {
            assert!(ks.has_key(KeyId::KP));
        }
    }

    #[test]
    fn same_seed_same_keys() {
        let a = generate_keys([3u8; 32]);
        let b = generate_keys([3u8; 32]);
        let c = generate_keys([4u8; 32]);
        assert_eq!(a[0].keys, b[0].keys);
        assert_ne!(a[0].keys[0], c[0].keys[0]);
    }

    #[test]
    fn shared_stream_agreement() {
        let [_, mut p1, mut p2] = generate_keys([9u8; 32]);
        let ctx = Ctx::new("test.agree").arg(5);
        let a = p1.elems(KeyId::K12, &ctx, 64, 100).unwrap();
        let b = p2.elems(KeyId::K12, &ctx, 64, 100).unwrap();
        assert_eq!(a, b);
        // Continuation stays aligned and disjoint from the start.
        let a2 = p1.elems(KeyId::K12, &ctx, 64, 50).unwrap();
        let b2 = p2.elems(KeyId::K12, &ctx, 64, 50).unwrap();
        assert_eq!(a2, b2);
        assert_ne!(a[..50], a2[..]);
        // Different context, different stream.
        let other = Ctx::new("test.agree").arg(6);
        assert_ne!(p1.elems(KeyId::K12, &other, 64, 100).unwrap(), a);
    }

    #[test]
    fn consecutive_draws_match_bulk() {
        let [_, mut p1, mut p2] = generate_keys([11u8; 32]);
        let ctx = Ctx::new("test.bulk");
        let mut split = p1.elems(KeyId::KP, &ctx, 32, 3).unwrap();
        split.extend(p1.elems(KeyId::KP, &ctx, 32, 4).unwrap());
        let bulk = p2.elems(KeyId::KP, &ctx, 32, 7).unwrap();
        assert_eq!(split, bulk);
    }

    #[test]
    fn missing_key_errors() {
        let [_, mut p1, _] = generate_keys([1u8; 32]);
        let ctx = Ctx::new("test.miss");
        assert!(p1.elem(KeyId::K02, &ctx, 64).is_err());
    }

    #[test]
    fn transcript_hash_vectors() {
        // No items: the standard SHA-256 empty-string digest.
        let empty = transcript_hash(std::iter::empty::<&[u8]>());
        assert_eq!(
            hex_encode(&empty),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let ab = transcript_hash([b"a".as_slice(), b"b"]);
        let ba = transcript_hash([b"b".as_slice(), b"a"]);
        assert_ne!(ab, ba);
        // Length prefixing keeps item boundaries: ("ab","") vs ("a","b").
        assert_ne!(
            transcript_hash([b"ab".as_slice(), b""]),
            transcript_hash([b"a".as_slice(), b"b"])
        );
        assert_eq!(ab, transcript_hash([b"a".as_slice(), b"b"]));
    }

    #[test]
    fn commitment_round_trip() {
        let salt = [0x5au8; SALT_BYTES];
        let c = commit(b"hello", salt);
        let o = Opening {
            value: b"hello".to_vec(),
            salt,
        };
        assert!(c.verify(&o));
        let mut bad = o.clone();
        bad.value[0] ^= 1;
        assert!(!c.verify(&bad));
        let mut bad_salt = o.clone();
        bad_salt.salt[3] ^= 0x80;
        assert!(!c.verify(&bad_salt));
        let mut flipped = c;
        flipped.0[0] ^= 1;
        assert!(!flipped.verify(&o));
        let parsed = Opening::from_bytes(&o.to_bytes()).unwrap();
        assert_eq!(parsed, o);
    }

    #[test]
    fn private_streams_are_deterministic_and_distinct() {
        let keys = generate_keys([7u8; 32]);
        let again = generate_keys([7u8; 32]);
        let ctx = Ctx::new("mask").arg(3);
        let mut draws = Vec::new();
        for role in Role::ALL {
            let a = keys[role.index()].private_stream(&ctx).next_u64();
            let b = again[role.index()].private_stream(&ctx).next_u64();
            assert_eq!(a, b);
            draws.push(a);
        }
        assert_ne!(draws[0], draws[1]);
        assert_ne!(draws[1], draws[2]);
        let other = keys[0].private_stream(&Ctx::new("mask").arg(4)).next_u64();
        assert_ne!(draws[0], other);
    }

    #[test]
    fn key_files_round_trip() {
        let dir = std::env::temp_dir().join(format!("keys-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let keys = generate_keys([42u8; 32]);
        write_key_files(&keys, &dir).unwrap();
        for role in Role::ALL {
            let loaded = load_key_file(&dir.join(format!("{role}.keys"))).unwrap();
            assert_eq!(loaded.role(), role);
            assert_eq!(loaded.keys, keys[role.index()].keys);
        }
        // Tampered files are rejected.
        let p1 = dir.join("p1.keys");
        let text = std::fs::read_to_string(&p1).unwrap();
        std::fs::write(&p1, text.replace("k12", "k02")).unwrap();
        assert!(load_key_file(&p1).is_err());
        let missing = "p1\nk01 00000000000000000000000000000000\n";
        std::fs::write(&p1, missing).unwrap();
        assert!(load_key_file(&p1).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
