//! In-process three-server harness: one thread per server over a
//! loopback mesh, shared byte and round accounting.

use std::thread;
use std::time::Duration;

use crate::crypto::generate_keys;
use crate::protocols::{FaultPlan, Session};
use crate::transport::{loopback_mesh, Stats};
use crate::{Error, Result};

/// Runs `f` as all three servers with fresh keys derived from `seed`.
/// Returns each server's result plus the combined traffic statistics.
pub fn sim<T, F>(ell: u8, seed: u64, f: F) -> ([Result<T>; 3], Stats)
where
    T: Send,
    F: Fn(&mut Session) -> Result<T> + Sync,
{
    sim_with(
        ell,
        seed,
        [FaultPlan::none(), FaultPlan::none(), FaultPlan::none()],
        f,
    )
}

/// As [`sim`], with a scripted fault plan per server.
pub fn sim_with<T, F>(ell: u8, seed: u64, faults: [FaultPlan; 3], f: F) -> ([Result<T>; 3], Stats)
where
    T: Send,
    F: Fn(&mut Session) -> Result<T> + Sync,
{
    let mut seed_bytes = [0u8; 32];
    seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
    let keys = generate_keys(seed_bytes);
    let (nets, registry) = loopback_mesh(Duration::from_secs(10));
    let fref = &f;
    let mut results: Vec<Result<T>> = Vec::with_capacity(3);
    thread::scope(|s| {
        let mut handles = Vec::new();
        for ((k, n), fp) in keys.into_iter().zip(nets).zip(faults) {
            handles.push(s.spawn(move || {
                let mut sess = Session::with_fault(ell, k, n, fp);
                match fref(&mut sess) {
                    Ok(v) => sess.finish().map(|_| v),
                    Err(e) => Err(e),
                }
            }));
        }
        for h in handles {
            results.push(h.join().unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| p.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Err(Error::Abort(format!("server thread panicked: {msg}")))
            }));
        }
    });
    let stats = registry.snapshot();
    let r2 = results.pop().unwrap();
    let r1 = results.pop().unwrap();
    let r0 = results.pop().unwrap();
    ([r0, r1, r2], stats)
}
