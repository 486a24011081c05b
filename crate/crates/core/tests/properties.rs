mod common;

use common::*;
use proptest::prelude::*;
use wsnkm::crypto::MAC_SIZE;
use wsnkm::metrics::EnergyCosts;
use wsnkm::packet::{HEADER_LEN, MAX_FRAME};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_trace(n in 3usize..16, seed in any::<u64>()) {
        let mut a = random_lossless(n, seed);
        let mut b = random_lossless(n, seed);
        run_until(&mut a, SETTLED);
        run_until(&mut b, SETTLED);
        prop_assert_eq!(a.trace_text(), b.trace_text());
        prop_assert_eq!(a.keystore_dumps(), b.keystore_dumps());
    }

    #[test]
    fn installed_keys_agree(n in 2usize..20, seed in any::<u64>()) {
        let mut sim = random_lossless(n, seed);
        run_until(&mut sim, SETTLED);
        let kin = *sim.initial_key();
        for node in sim.nodes() {
            for (&peer, key) in node.store().pairwise_map() {
                prop_assert_eq!(sim.node(peer).unwrap().store().pairwise(node.id()), Some(key));
                prop_assert_eq!(key, &true_pairwise(&kin, node.id(), peer));
            }
        }
        prop_assert_eq!(sim.violations().erasure, 0);
        prop_assert_eq!(sim.violations().causality, 0);
    }

    #[test]
    fn ledger_is_conserved(n in 2usize..16, seed in any::<u64>()) {
        let mut sim = random_lossless(n, seed);
        run_until(&mut sim, SETTLED);
        let ledger = sim.ledger();
        let k = EnergyCosts::default();
        let mut total = 0.0;
        for (_, c) in ledger.nodes() {
            let min = (HEADER_LEN + MAC_SIZE) as u64;
            prop_assert!(c.tx_octets >= min * c.tx_frames && c.tx_octets <= MAX_FRAME as u64 * c.tx_frames);
            prop_assert!(c.rx_octets >= min * c.rx_frames && c.rx_octets <= MAX_FRAME as u64 * c.rx_frames);
            total += c.tx_octets as f64 * k.tx_per_octet
                + c.rx_octets as f64 * k.rx_per_octet
                + c.mac_ops as f64 * k.mac
                + c.prf_ops as f64 * k.prf
                + c.enc_ops as f64 * k.enc;
        }
        prop_assert!((total - ledger.total_energy()).abs() < 1e-6);
        prop_assert_eq!(ledger.ignored(), 0);
    }
}
