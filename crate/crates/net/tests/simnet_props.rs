use proptest::prelude::*;
use xsync_net::simnet::{LinkConfig, SimEvent, SimWorld, MAX_PAYLOAD_BYTES};

fn link() -> impl Strategy<Value = LinkConfig> {
    (
        0.0..50.0f64,
        0.0..20.0f64,
        0.0..0.5f64,
        0.0..0.3f64,
        any::<bool>(),
        prop::option::of(0.0..200.0f64),
    )
        .prop_map(|(delay, jitter, loss, dup, ordered, close)| LinkConfig {
            one_way_delay_ms: delay,
            jitter_ms: jitter,
            loss_rate: loss,
            duplicate_rate: dup,
            ordered,
            closures: close.into_iter().collect(),
            ..LinkConfig::default()
        })
}

proptest! {
    #[test]
    fn messages_are_conserved(cfg in link(), seed in any::<u64>(), sizes in prop::collection::vec(0usize..20_000, 1..80)) {
        let mut w = SimWorld::new(seed);
        let ch = w.connect("a", "b", cfg).unwrap();
        for (i, n) in sizes.iter().enumerate() {
            let from = if i % 3 == 0 { "b" } else { "a" };
            let r = w.send(ch, from, vec![0; *n]);
            prop_assert_eq!(r.is_err(), *n > MAX_PAYLOAD_BYTES);
            prop_assert!(w.stats(ch).unwrap().is_conserved());
            w.run_until(w.now() + 3.0, |_, _| {});
        }
        w.run_until(f64::MAX, |_, _| {});
        let s = w.stats(ch).unwrap();
        prop_assert_eq!(s.in_flight, 0);
        prop_assert!(s.is_conserved());
    }

    #[test]
    fn ordered_links_preserve_source_order(cfg in link(), seed in any::<u64>(), n in 1u32..100) {
        let cfg = LinkConfig { ordered: true, duplicate_rate: 0.0, ..cfg };
        let mut w = SimWorld::new(seed);
        let ch = w.connect("a", "b", cfg).unwrap();
        let mut got = Vec::new();
        let mut record = |_: &mut SimWorld, ev: SimEvent| {
            if let SimEvent::Delivery { payload, at_ms, sent_at_ms, .. } = ev {
                assert!(at_ms >= sent_at_ms);
                got.push(u32::from_be_bytes(payload[..4].try_into().unwrap()));
            }
        };
        for i in 0..n {
            w.send(ch, "a", i.to_be_bytes().to_vec()).unwrap();
            w.run_until(w.now() + 1.0, &mut record);
        }
        w.run_until(f64::MAX, &mut record);
        prop_assert!(got.windows(2).all(|p| p[0] < p[1]), "{:?}", got);
    }
}
