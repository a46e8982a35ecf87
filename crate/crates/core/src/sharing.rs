//! The three secret-sharing forms as pure local algebra.
//!
//! No networking here: shares are built from explicit randomness and
//! recombined from components, so every protocol invariant can be checked
//! directly in tests. Boolean sharing is the same structure instantiated
//! at width 1, where + and - both mean XOR.
//!
//! Component layout per role for the replicated masked form:
//!
//! | role | holds                          |
//! |------|--------------------------------|
//! | P0   | `[a]_1`, `[a]_2`, `b + g`      |
//! | P1   | `[a]_1`, `b`, `g`              |
//! | P2   | `[a]_2`, `b`, `g`              |
//!
//! with `b = v + [a]_1 + [a]_2` the masked value, `a` the mask known to
//! nobody alone, and `g` a tag that lets P0 audit the online phase.

use crate::ring::{byte_len, RingElem};
use crate::{Error, Result, Role};

/// Additive two-party share: `v = [v]_1 + [v]_2` held by P1 and P2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SqShare {
    pub holder: Role,
    pub part: RingElem,
}

impl SqShare {
    pub fn new(holder: Role, part: RingElem) -> Self {
        assert!(holder != Role::P0, "additive shares live at P1 and P2");
        SqShare { holder, part }
    }

    /// Splits `v` with `[v]_1 = r`.
    pub fn split(v: RingElem, r: RingElem) -> (SqShare, SqShare) {
        (
            SqShare::new(Role::P1, r),
            SqShare::new(Role::P2, v - r),
        )
    }
}

/// Masked share with an additively shared mask: P0 holds both mask
/// halves, P1 and P2 each hold one half plus the masked value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngleShare {
    P0 { l1: RingElem, l2: RingElem },
    P1 { l1: RingElem, masked: RingElem },
    P2 { l2: RingElem, masked: RingElem },
}

impl AngleShare {
    pub fn make(v: RingElem, l1: RingElem, l2: RingElem) -> [AngleShare; 3] {
        let masked = v + l1 + l2;
        [
            AngleShare::P0 { l1, l2 },
            AngleShare::P1 { l1, masked },
            AngleShare::P2 { l2, masked },
        ]
    }

    pub fn role(&self) -> Role {
        match self {
            AngleShare::P0 { .. } => Role::P0,
            AngleShare::P1 { .. } => Role::P1,
            AngleShare::P2 { .. } => Role::P2,
        }
    }

    /// The mask half this evaluator holds (P1 or P2).
    pub fn mask_part(&self) -> RingElem {
        match *self {
            AngleShare::P1 { l1, .. } => l1,
            AngleShare::P2 { l2, .. } => l2,
            AngleShare::P0 { .. } => panic!("P0 holds both mask halves"),
        }
    }

    pub fn masked(&self) -> RingElem {
        match *self {
            AngleShare::P1 { masked, .. } | AngleShare::P2 { masked, .. } => masked,
            AngleShare::P0 { .. } => panic!("P0 does not hold the masked value"),
        }
    }
}

/// The replicated masked share (Table above). Pure value type; the
/// protocol layer wraps it where P0's third component is only known
/// lazily.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RssShare {
    role: Role,
    c: [RingElem; 3],
}

/// Boolean sharing is the same structure over `Z_2`.
pub type BoolRssShare = RssShare;

impl RssShare {
    pub fn p0(a1: RingElem, a2: RingElem, bg: RingElem) -> Self {
        RssShare {
            role: Role::P0,
            c: [a1, a2, bg],
        }
    }

    pub fn p1(a1: RingElem, beta: RingElem, gamma: RingElem) -> Self {
        RssShare {
            role: Role::P1,
            c: [a1, beta, gamma],
        }
    }

    pub fn p2(a2: RingElem, beta: RingElem, gamma: RingElem) -> Self {
        RssShare {
            role: Role::P2,
            c: [a2, beta, gamma],
        }
    }

    /// A public constant as a degenerate share: zero masks, zero tag.
    pub fn public_constant(role: Role, v: RingElem) -> Self {
        let z = RingElem::zero(v.width());
        match role {
            Role::P0 => RssShare::p0(z, z, v),
            Role::P1 => RssShare::p1(z, v, z),
            Role::P2 => RssShare::p2(z, v, z),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn width(&self) -> u8 {
        self.c[0].width()
    }

    fn expect(&self, role: Role) {
        assert_eq!(self.role, role, "component not held by {}", self.role);
    }

    /// `[a]_1`, held by P0 and P1.
    pub fn alpha1(&self) -> RingElem {
        assert!(self.role != Role::P2, "P2 does not hold [a]_1");
        self.c[0]
    }

    /// `[a]_2`, held by P0 and P2.
    pub fn alpha2(&self) -> RingElem {
        match self.role {
            Role::P0 => self.c[1],
            Role::P2 => self.c[0],
            Role::P1 => panic!("P1 does not hold [a]_2"),
        }
    }

    /// The mask half an evaluator contributes: `[a]_j` at `Pj`.
    pub fn local_alpha(&self) -> RingElem {
        assert!(self.role != Role::P0);
        self.c[0]
    }

    /// Masked value `b`, held by P1 and P2.
    pub fn beta(&self) -> RingElem {
        assert!(self.role != Role::P0, "P0 does not hold b");
        self.c[1]
    }

    /// Audit tag `g`, held by P1 and P2.
    pub fn gamma(&self) -> RingElem {
        assert!(self.role != Role::P0, "P0 does not hold g");
        self.c[2]
    }

    /// `b + g`, P0's third component.
    pub fn beta_gamma(&self) -> RingElem {
        self.expect(Role::P0);
        self.c[2]
    }

    /// Raw components in serialization order.
    pub fn components(&self) -> [RingElem; 3] {
        self.c
    }

    /// Wire form: role byte, then the three components little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.role.index() as u8];
        for x in self.c {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], ell: u8) -> Result<Self> {
        let n = byte_len(ell);
        if bytes.len() != 1 + 3 * n {
            return Err(Error::Serial(format!(
                "share needs {} bytes, got {}",
                1 + 3 * n,
                bytes.len()
            )));
        }
        let role = match bytes[0] {
            0 => Role::P0,
            1 => Role::P1,
            2 => Role::P2,
            r => return Err(Error::Serial(format!("bad role byte {r}"))),
        };
        let mut c = [RingElem::zero(ell); 3];
        for (i, slot) in c.iter_mut().enumerate() {
            *slot = RingElem::from_le_bytes(&bytes[1 + i * n..1 + (i + 1) * n], ell)?;
        }
        Ok(RssShare { role, c })
    }
}

/// Builds all three shares of `v` from explicit randomness
/// `([a]_1, [a]_2, g)`. Test and dealer-side helper.
pub fn make_rss(v: RingElem, a1: RingElem, a2: RingElem, g: RingElem) -> [RssShare; 3] {
    let beta = v + a1 + a2;
    [
        RssShare::p0(a1, a2, beta + g),
        RssShare::p1(a1, beta, g),
        RssShare::p2(a2, beta, g),
    ]
}

/// Reconstruction from the three defining components.
pub fn open_from_components(beta: RingElem, a1: RingElem, a2: RingElem) -> RingElem {
    beta - a1 - a2
}

/// `c0 + sum(coeff_i * share_i)`, componentwise. The constant lands on
/// the masked-value slot (P1/P2) and on `b+g` (P0) so reconstruction
/// yields `c0 + sum(coeff_i * v_i)` while masks and tags stay linear.
pub fn linear_combine(c0: RingElem, terms: &[(RingElem, RssShare)]) -> Result<RssShare> {
    let role = terms.first().map(|(_, s)| s.role());
    let mut acc = match role {
        Some(r) => RssShare::public_constant(r, c0),
        None => return Ok(RssShare::public_constant(Role::P1, c0)),
    };
    for (coeff, s) in terms {
        if s.role() != acc.role {
            return Err(Error::Config(format!(
                "linear_combine mixes shares of {} and {}",
                acc.role,
                s.role()
            )));
        }
        for i in 0..3 {
            acc.c[i] += *coeff * s.c[i];
        }
    }
    Ok(acc)
}

/// Which pair jointly knows a value being shared without interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharePair {
    P1P2,
    P1P0,
    P2P0,
}

impl SharePair {
    pub fn members(self) -> [Role; 2] {
        match self {
            SharePair::P1P2 => [Role::P1, Role::P2],
            SharePair::P1P0 => [Role::P1, Role::P0],
            SharePair::P2P0 => [Role::P2, Role::P0],
        }
    }
}

/// Non-interactive joint sharing of a preprocessing-known `v`: every
/// component is either zero, `v`-derived at a holder that knows `v`, or
/// the jointly sampled `r`. P0's slot always carries `b + g = r`.
pub fn jsh_noninteractive_assign(
    pair: SharePair,
    v: RingElem,
    r: RingElem,
) -> [RssShare; 3] {
    let z = RingElem::zero(v.width());
    match pair {
        SharePair::P1P2 => [
            RssShare::p0(z, z, r),
            RssShare::p1(z, v, r - v),
            RssShare::p2(z, v, r - v),
        ],
        SharePair::P1P0 => [
            RssShare::p0(-v, z, r),
            RssShare::p1(-v, z, r),
            RssShare::p2(z, z, r),
        ],
        SharePair::P2P0 => [
            RssShare::p0(z, -v, r),
            RssShare::p1(z, z, r),
            RssShare::p2(-v, z, r),
        ],
    }
}

/// Asserts the full cross-party consistency of a share triple and
/// returns the reconstructed value. Test-side only.
pub fn check_triple(shares: &[RssShare; 3]) -> RingElem {
    let [s0, s1, s2] = shares;
    assert_eq!(s0.role(), Role::P0);
    assert_eq!(s1.role(), Role::P1);
    assert_eq!(s2.role(), Role::P2);
    assert_eq!(s0.alpha1(), s1.alpha1(), "[a]_1 differs between P0 and P1");
    assert_eq!(s0.alpha2(), s2.alpha2(), "[a]_2 differs between P0 and P2");
    assert_eq!(s1.beta(), s2.beta(), "b differs between P1 and P2");
    assert_eq!(s1.gamma(), s2.gamma(), "g differs between P1 and P2");
    assert_eq!(
        s0.beta_gamma(),
        s1.beta() + s1.gamma(),
        "P0's b+g is inconsistent"
    );
    open_from_components(s1.beta(), s0.alpha1(), s0.alpha2())
}
