//! End-to-end smoke drive: shares fixed-point inputs, runs a product,
//! a truncating dot product, and a relu through all three simulated
//! servers, and reconstructs the results.

use trident::layer1::{pi_mult, ZkSetup};
use trident::layer2::{pi_dotp_tr, pi_relu_batch, Kit};
use trident::protocols::{pi_rec, pi_sh_batch};
use trident::ring::{FixedPoint, RingElem};
use trident::sim::sim;
use trident::zkmult::ZkConfig;
use trident::Role;

fn main() {
    const D: u8 = 13;
    let (results, stats) = sim(64, 1, |sess| {
        let zk = ZkSetup::new(64, ZkConfig::single_rep())?;
        let kit = Kit::new(64, ZkConfig::single_rep())?;

        let raw: Vec<RingElem> = [1.5, -2.25, 0.75, 4.0]
            .iter()
            .map(|&q| FixedPoint::encode(q, D, 64).unwrap().raw)
            .collect();
        let me_deals = (sess.role == Role::P1).then_some(raw.as_slice());
        let w = pi_sh_batch(sess, Role::P1, me_deals, 64, raw.len())?;

        let prod = pi_mult(sess, &zk, &w[0], &w[3])?;
        let dot = pi_dotp_tr(sess, &zk, &w[..2], &w[2..], D)?;
        let relus = pi_relu_batch(sess, &kit, &w[..2])?;

        let mut outs = vec![prod, dot];
        outs.extend(relus);
        pi_rec(sess, &outs)
    });

    for (i, r) in results.into_iter().enumerate() {
        let opened = r.unwrap_or_else(|e| panic!("P{i} failed: {e}"));
        if i == 0 {
            let dec: Vec<f64> = opened
                .iter()
                .map(|&e| FixedPoint::from_raw(e, D).decode())
                .collect();
            println!("1.5 * 4.0 (raw product, scale 2d) = {}", dec[0] * (1 << D) as f64);
            println!("1.5*0.75 + -2.25*4.0 (truncated)  = {}", dec[1]);
            println!("relu(1.5), relu(-2.25)            = {}, {}", dec[2], dec[3]);
        }
    }
    use trident::transport::{Phase, Tag};
    let phase_total = |p: Phase| {
        [Tag::Gate, Tag::Amortized]
            .iter()
            .map(|&t| stats.payload_total(p, t))
            .sum::<u64>()
    };
    println!(
        "online bytes {} / prep bytes {} / online rounds {}",
        phase_total(Phase::Online),
        phase_total(Phase::Prep),
        stats.rounds(Phase::Online).unwrap(),
    );
}
