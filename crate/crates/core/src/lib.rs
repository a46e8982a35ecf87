//! Three-server honest-majority MPC over `Z_{2^l}` with a preprocessing
//! phase whose multiplication triples are checked by distributed
//! zero-knowledge proofs, and an online phase where the input-independent
//! server stays silent until verification.
//!
//! Layer map:
//! - [`ring`], [`crypto`], [`sharing`]: local arithmetic, keys and hashes,
//!   replicated/masked share algebra.
//! - [`transport`]: framed channels (loopback and TCP) with byte and round
//!   accounting.
//! - [`protocols`]: sharing, joint sharing, reconstruction (plain and
//!   fair), session plumbing, deferred verification.
//! - [`gateway`]: input sharing and output reconstruction for an
//!   outsourced party outside the server mesh.
//! - [`zkmult`]: the proof system that certifies multiplication
//!   preprocessing, over a Galois ring extension.
//! - [`garble`]: garbled-circuit path for bit extraction.
//! - [`layer1`]: multiplication, dot products, bit extraction, bit to
//!   arithmetic conversion.
//! - [`layer2`]: truncation, comparison, activations.
//! - [`ml`]: linear/logistic regression training and neural network
//!   inference on fixed-point data.
//! - [`sim`]: in-process three-server test harness.

pub mod crypto;
pub mod garble;
pub mod gateway;
pub mod layer1;
pub mod layer2;
pub mod ml;
pub mod protocols;
pub mod sharing;
pub mod sim;
pub mod transport;
pub mod ring;
pub mod zkmult;

/// Server identity. P0 deals preprocessing randomness and goes silent
/// during the online phase; P1 and P2 carry the online evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    P0,
    P1,
    P2,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::P0, Role::P1, Role::P2];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Role::P0 => 0,
            Role::P1 => 1,
            Role::P2 => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Role::ALL[i]
    }

    /// The other two servers, in ascending order.
    pub fn peers(self) -> [Role; 2] {
        match self {
            Role::P0 => [Role::P1, Role::P2],
            Role::P1 => [Role::P0, Role::P2],
            Role::P2 => [Role::P0, Role::P1],
        }
    }

    /// For `self` in {P1, P2}: the other online evaluator.
    pub fn online_peer(self) -> Role {
        match self {
            Role::P1 => Role::P2,
            Role::P2 => Role::P1,
            Role::P0 => panic!("P0 has no online peer"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::P0 => "p0",
            Role::P1 => "p1",
            Role::P2 => "p2",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "p0" => Ok(Role::P0),
            "p1" => Ok(Role::P1),
            "p2" => Ok(Role::P2),
            _ => Err(Error::Config(format!("unknown role {s:?}"))),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors surfaced by the protocol stack.
///
/// `Abort` is the security-relevant variant: honest servers raise it on
/// any detected inconsistency and refuse further progress.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("abort: {0}")]
    Abort(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serial(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("value out of range: {0}")]
    Range(String),
}

pub type Result<T> = std::result::Result<T, Error>;
