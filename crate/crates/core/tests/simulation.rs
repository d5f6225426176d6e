use std::collections::{BTreeMap, BTreeSet};

use qkdnet_core::scenario::Scenario;
use qkdnet_core::sim::{run, Metrics, Outcome, Simulator, TraceRecord};
use qkdnet_core::{CircuitId, SimTime};
use serde_json::{json, Value};

fn scenario(v: Value) -> Scenario {
    serde_json::from_value(v).expect("test scenario parses")
}

fn link(id: &str, a: &str, b: &str, r0: f64) -> Value {
    json!({"id": id, "a": a, "b": b, "length": 0.0, "r0": r0, "lambda_qkd": 15.0, "d_max": 120.0})
}

fn gr(ingress: &str, dest: &str, bits: u64) -> Value {
    json!({
        "time": 0.0, "ingress": ingress, "dest_node": dest, "dest_port": 7,
        "key_block_length": 8192,
        "service": {"type": "guaranteed_rate", "bits_per_period": bits, "period": 1.0}
    })
}

fn nodes(names: &[&str]) -> Value {
    Value::Array(names.iter().map(|n| json!({"id": n})).collect())
}

fn check_conservation(m: &Metrics) {
    for l in &m.links {
        assert_eq!(l.key_deposited - l.key_discarded - l.key_consumed, l.key_available, "link {}", l.id);
        assert_eq!(l.key_consumed, l.data_key_bits + l.control_key_bits, "link {}", l.id);
        assert_eq!(l.data_key_bits, l.otp_bits + 128 * l.data_frames, "link {}", l.id);
        assert_eq!(l.control_key_bits, 128 * l.control_frames, "link {}", l.id);
    }
    assert!(m.network.session_bit_hops <= m.network.otp_payload_bits);
    assert_eq!(m.network.causality_violations, 0);
    assert_eq!(m.network.reservation_violations, 0);
}

fn block_ids_unique(out: &Outcome) {
    let mut seen = BTreeSet::new();
    for r in &out.trace {
        if let TraceRecord::Frame { link, block_id, .. } = r {
            assert!(seen.insert((link.clone(), *block_id)), "block {block_id} reused on {link}");
        }
    }
}

#[test]
fn idle_network_fills_stores_to_capacity() {
    let s = scenario(json!({
        "duration": 2.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [
            {"id": "AB", "a": "A", "b": "B", "length": 0.0, "r0": 1e5, "lambda_qkd": 15.0,
             "d_max": 120.0, "capacity_bits": 50000}
        ]},
        "config": {"lsa_interval": 0.0}
    }));
    let m = run(&s).unwrap().metrics;
    assert!(m.circuits.is_empty());
    let l = &m.links[0];
    assert_eq!(l.key_available, 50_000);
    assert_eq!(l.key_consumed, 0);
    assert_eq!(l.key_generated, 200_000);
    assert_eq!(l.key_discarded, 150_000);
    check_conservation(&m);
}

#[test]
fn single_contract_delivers_its_rate() {
    let s = scenario(json!({
        "duration": 10.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 2e5)]},
        "demands": [gr("A", "B", 128_000)],
        "config": {"trace": "frame"}
    }));
    let out = run(&s).unwrap();
    let c = &out.metrics.circuits[0];
    assert!((c.delivered_bits as i64 - 1_280_000).abs() <= 8192, "{}", c.delivered_bits);
    assert_eq!(c.drops, 0);
    assert_eq!(c.fidelity_violations, 0);
    assert_eq!(c.establishment_latency, Some(0.002));
    assert_eq!(c.reserved_rate, 130_000.0);
    check_conservation(&out.metrics);
    block_ids_unique(&out);
}

#[test]
fn same_seed_same_bytes_other_seed_other_key() {
    let mut v = json!({
        "seed": 5,
        "duration": 3.0,
        "topology": {"nodes": nodes(&["A", "B", "C"]), "links": [link("AB", "A", "B", 2e5), link("BC", "B", "C", 2e5)]},
        "demands": [gr("A", "C", 64_000)]
    });
    let a = serde_json::to_string(&run(&scenario(v.clone())).unwrap().metrics).unwrap();
    let b = serde_json::to_string(&run(&scenario(v.clone())).unwrap().metrics).unwrap();
    assert_eq!(a, b);
    v["seed"] = json!(6);
    let m6 = run(&scenario(v)).unwrap().metrics;
    let m5: Metrics = serde_json::from_str(&a).unwrap();
    assert_ne!(m5.circuits[0].delivered_digest, m6.circuits[0].delivered_digest);
    for (x, y) in m5.links.iter().zip(&m6.links) {
        assert_eq!((x.key_deposited, x.key_consumed, x.key_available), (y.key_deposited, y.key_consumed, y.key_available));
    }
}

fn attack_scenario(qber: f64) -> Scenario {
    scenario(json!({
        "duration": 2.0,
        "topology": {"nodes": nodes(&["A", "B", "C"]), "links": [link("AB", "A", "B", 1e5), link("BC", "B", "C", 1e5)]},
        "attacks": [{"time": 1.0, "link": "AB", "action": {"type": "qber", "value": qber}}],
        "config": {"trace": "circuit", "lsa_interval": 0.0}
    }))
}

#[test]
fn qber_above_threshold_takes_link_down() {
    let mut sim = Simulator::from_scenario(&attack_scenario(0.15)).unwrap();
    let ab = sim.link_id("AB").unwrap();
    let (a, c) = (sim.node_id("A").unwrap(), sim.node_id("C").unwrap());
    assert!(!sim.routing().table(c).candidates(a).is_empty());
    sim.run_until(SimTime::from_secs_f64(1.0));
    assert_eq!(sim.link_load(ab).effective_rate, 0.0);
    // Far node still believes the link is up until the flood arrives.
    assert!(!sim.views_converged());
    assert!(!sim.routing().table(c).candidates(a).is_empty());
    sim.run_until(SimTime::from_secs_f64(1.05));
    assert!(sim.views_converged());
    assert!(sim.routing().table(c).candidates(a).is_empty());
    let before = sim.store(ab).available_bits();
    sim.run_until(SimTime::from_secs_f64(1.5));
    assert_eq!(sim.store(ab).available_bits(), before);

    let out = run(&attack_scenario(0.15)).unwrap();
    let downs: Vec<_> = out
        .trace
        .iter()
        .filter(|r| matches!(r, TraceRecord::Link { status, link, .. } if status == "down" && link == "AB"))
        .collect();
    assert_eq!(downs.len(), 1);
    assert!((out.metrics.links[0].downtime - 1.0).abs() < 1e-9);
    assert_eq!(out.metrics.network.lsa_floods, 1);
}

#[test]
fn qber_below_threshold_changes_nothing() {
    let out = run(&attack_scenario(0.05)).unwrap();
    let l = &out.metrics.links[0];
    assert_eq!(l.final_status, "up");
    assert_eq!(l.final_effective_rate, 1e5);
    assert_eq!(l.key_generated, 200_000);
    assert_eq!(out.metrics.network.lsa_floods, 0);
}

#[test]
fn restore_brings_link_back() {
    let s = scenario(json!({
        "duration": 3.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 1e5)]},
        "attacks": [
            {"time": 1.0, "link": "AB", "action": {"type": "qber", "value": 0.2}},
            {"time": 2.0, "link": "AB", "action": {"type": "restore"}}
        ],
        "config": {"trace": "circuit", "lsa_interval": 0.0}
    }));
    let out = run(&s).unwrap();
    let l = &out.metrics.links[0];
    assert_eq!(l.final_status, "up");
    assert_eq!(l.final_qber, 0.0);
    assert!((l.downtime - 1.0).abs() < 1e-9);
    assert_eq!(l.key_generated, 200_000);
    assert_eq!(out.metrics.network.lsa_floods, 2);
    check_conservation(&out.metrics);
}

#[test]
fn second_attack_on_down_link_is_silent() {
    let s = scenario(json!({
        "duration": 3.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 1e5)]},
        "attacks": [
            {"time": 1.0, "link": "AB", "action": {"type": "qber", "value": 0.2}},
            {"time": 2.0, "link": "AB", "action": {"type": "qber", "value": 0.3}}
        ],
        "config": {"lsa_interval": 0.0}
    }));
    assert_eq!(run(&s).unwrap().metrics.network.lsa_floods, 1);
}

fn ring() -> Value {
    json!({
        "duration": 8.0,
        "topology": {"nodes": nodes(&["A", "B", "C", "D", "E"]), "links": [
            link("AB", "A", "B", 2e5), link("BC", "B", "C", 2e5), link("CD", "C", "D", 2e5),
            link("DE", "D", "E", 2e5), link("EA", "E", "A", 2e5)
        ]},
        "demands": [gr("A", "C", 128_000)],
        "attacks": [{"time": 5.0, "link": "BC", "action": {"type": "qber", "value": 0.15}}],
        "config": {"trace": "frame"}
    })
}

#[test]
fn ring_circuit_survives_eavesdropper() {
    let out = run(&scenario(ring())).unwrap();
    let c = &out.metrics.circuits[0];
    assert_eq!(c.path, ["A", "E", "D", "C"]);
    assert_eq!(c.reroute_count, 1);
    let r = &c.reroutes[0];
    assert_eq!(r.failed_link, "BC");
    assert!(r.resumed_at.unwrap() - 5.0 < 1.0);
    assert_eq!(c.final_state, "active");
    assert_eq!(c.fidelity_violations, 0);
    assert_eq!(c.drops, 0);
    // Everything the application asked for except what is still in flight.
    assert_eq!(c.delivered_packets + c.in_flight_at_end, c.emitted_packets);
    check_conservation(&out.metrics);
    block_ids_unique(&out);
}

#[test]
fn frames_never_carry_session_plaintext() {
    let out = run(&scenario(ring())).unwrap();
    let delivered: BTreeSet<String> = out
        .trace
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Delivery { payload_digest, .. } => Some(payload_digest.clone()),
            _ => None,
        })
        .collect();
    assert!(!delivered.is_empty());
    let mut data_frames = 0;
    for r in &out.trace {
        if let TraceRecord::Frame { ciphertext_digest, encrypted, circuit, .. } = r {
            if circuit != "control" {
                data_frames += 1;
                assert!(*encrypted);
                assert!(!delivered.contains(ciphertext_digest));
            }
        }
    }
    assert!(data_frames > 0);
}

#[test]
fn chain_attack_tears_down_and_notifies() {
    let s = scenario(json!({
        "duration": 8.0,
        "topology": {"nodes": nodes(&["A", "B", "C"]), "links": [link("AB", "A", "B", 2e5), link("BC", "B", "C", 2e5)]},
        "demands": [gr("A", "C", 128_000)],
        "attacks": [{"time": 5.0, "link": "BC", "action": {"type": "qber", "value": 0.15}}]
    }));
    let m = run(&s).unwrap().metrics;
    let c = &m.circuits[0];
    assert_eq!(c.final_state, "closed");
    assert_eq!(c.teardown_reason.as_deref(), Some("no_path"));
    assert_eq!(c.notifications.len(), 2);
    assert!((c.closed_at.unwrap() - 5.05).abs() < 1e-9);
    assert_eq!(m.network.teardowns, 1);
    assert_eq!(m.links[0].final_reserved_rate, 0.0);
    check_conservation(&m);
}

#[test]
fn contract_too_large_is_rejected_with_offer() {
    let s = scenario(json!({
        "duration": 1.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [
            {"id": "AB", "a": "A", "b": "B", "length": 15.0, "r0": 1e5, "lambda_qkd": 15.0, "d_max": 120.0}
        ]},
        "demands": [gr("A", "B", 128_000)]
    }));
    let m = run(&s).unwrap().metrics;
    assert!(m.circuits.is_empty());
    assert_eq!(m.network.rejections["insufficient_capacity"], 1);
    assert_eq!(m.network.rejections["no_path"], 0);
    let offer = m.network.rejected[0].best_available.clone().unwrap();
    let qkdnet_core::forwarding::ServiceClass::GuaranteedRate { bits_per_period, .. } = offer else {
        panic!("counter-offer keeps the class")
    };
    assert!((bits_per_period as f64 - 32610.46153846154).abs() / 32610.46153846154 < 0.01);
}

#[test]
fn best_effort_is_policed() {
    // Ten requests at the same instant against a five-token bucket.
    let s = scenario(json!({
        "duration": 2.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 2e5)]},
        "demands": [{
            "time": 0.5, "ingress": "A", "dest_node": "B", "key_block_length": 256,
            "service": {"type": "best_effort", "lambda_k": 10.0, "sigma_k": 5.0},
            "pattern": {"type": "times", "times": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]}
        }]
    }));
    let c = &run(&s).unwrap().metrics.circuits[0];
    assert_eq!(c.policed_drops, 5);
    assert_eq!(c.delivered_packets, 5);
    assert_eq!(c.contracted_rate, 0.0);
}

#[test]
fn poisson_demand_is_reproducible() {
    let v = json!({
        "seed": 9,
        "duration": 5.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 2e5)]},
        "demands": [{
            "time": 0.0, "ingress": "A", "dest_node": "B", "key_block_length": 1024,
            "service": {"type": "best_effort", "lambda_k": 50.0, "sigma_k": 50.0},
            "pattern": {"type": "poisson", "rate": 20.0}
        }]
    });
    let a = run(&scenario(v.clone())).unwrap().metrics;
    let b = run(&scenario(v)).unwrap().metrics;
    assert_eq!(a, b);
    let n = a.circuits[0].emitted_packets;
    assert!((60..=140).contains(&n), "{n} arrivals for a mean of 100");
}

#[test]
fn lost_channels_push_newest_contract_away() {
    // Two contracts fit on AB with two channels; losing one channel leaves
    // room for only one, so the later one moves to the detour.
    let s = scenario(json!({
        "duration": 4.0,
        "topology": {"nodes": nodes(&["A", "B", "C"]), "links": [
            {"id": "AB", "a": "A", "b": "B", "length": 0.0, "r0": 1.5e5, "lambda_qkd": 15.0,
             "d_max": 120.0, "num_quantum_channels": 2},
            link("AC", "A", "C", 4e5), link("CB", "C", "B", 4e5)
        ]},
        "demands": [gr("A", "B", 100_000), {
            "time": 0.5, "ingress": "A", "dest_node": "B", "dest_port": 8, "key_block_length": 8192,
            "service": {"type": "guaranteed_rate", "bits_per_period": 100_000, "period": 1.0}
        }],
        "attacks": [{"time": 2.0, "link": "AB", "action": {"type": "channels", "value": 1}}]
    }));
    let m = run(&s).unwrap().metrics;
    assert_eq!(m.circuits[0].path, ["A", "B"]);
    assert_eq!(m.circuits[0].reroute_count, 0);
    assert_eq!(m.circuits[1].reroute_count, 1);
    assert_eq!(m.circuits[1].path, ["A", "C", "B"]);
    assert_eq!(m.circuits[1].final_state, "active");
    check_conservation(&m);
}

#[test]
fn stopped_circuit_releases_reservation() {
    let mut d = gr("A", "B", 64_000);
    d["stop"] = json!(1.0);
    let s = scenario(json!({
        "duration": 2.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 2e5)]},
        "demands": [d]
    }));
    let mut sim = Simulator::from_scenario(&s).unwrap();
    sim.run_until(SimTime::from_secs_f64(0.5));
    assert!(sim.link_load(qkdnet_core::LinkId(0)).reserved_rate > 0.0);
    sim.run_to_end();
    assert_eq!(sim.link_load(qkdnet_core::LinkId(0)).reserved_rate, 0.0);
    assert_eq!(sim.circuit(CircuitId(0)).unwrap().state, qkdnet_core::forwarding::CircuitState::Closed);
    let m = sim.finish().metrics;
    assert_eq!(m.circuits[0].teardown_reason.as_deref(), Some("completed"));
}

#[test]
fn local_demand_needs_no_links() {
    let s = scenario(json!({
        "duration": 1.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 2e5)]},
        "demands": [gr("A", "A", 81_920)]
    }));
    let m = run(&s).unwrap().metrics;
    assert_eq!(m.circuits[0].hops, 0);
    assert_eq!(m.circuits[0].delivered_packets, 10);
    assert_eq!(m.links[0].data_frames, 0);
}

#[test]
fn samples_follow_interval() {
    let s = scenario(json!({
        "duration": 1.0,
        "topology": {"nodes": nodes(&["A", "B"]), "links": [link("AB", "A", "B", 1e5)]},
        "config": {"sample_interval": 0.25, "lsa_interval": 0.0}
    }));
    let m = run(&s).unwrap().metrics;
    let times: Vec<f64> = m.samples.iter().map(|s| s.time).collect();
    assert_eq!(times, [0.0, 0.25, 0.5, 0.75, 1.0]);
    let avail: Vec<u64> = m.samples.iter().map(|s| s.available_bits[0]).collect();
    // Sample events were queued before the same-instant ticks.
    assert_eq!(avail, [0, 24_000, 49_000, 74_000, 99_000]);
}

#[test]
fn random_chains_deliver_exact_payloads() {
    // Random small topologies with a few flows each; every delivered payload
    // is compared against the ingress copy inside the engine.
    let mut state = 0x1234_5678u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut delivered = 0;
    for case in 0..12 {
        let n = 2 + (next() % 7) as usize;
        let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
        let mut links = Vec::new();
        let mut pairs = BTreeMap::new();
        for i in 1..n {
            let j = (next() % i as u64) as usize;
            pairs.insert((j, i), ());
        }
        for _ in 0..n {
            let (x, y) = ((next() % n as u64) as usize, (next() % n as u64) as usize);
            if x != y {
                pairs.insert((x.min(y), x.max(y)), ());
            }
        }
        for (i, (x, y)) in pairs.keys().enumerate() {
            links.push(json!({"id": format!("L{i}"), "a": names[*x], "b": names[*y], "length": 0.0,
                "r0": 5e5, "lambda_qkd": 15.0, "d_max": 120.0}));
        }
        let demands: Vec<Value> = (0..3)
            .map(|k| {
                let (s, d) = ((next() % n as u64) as usize, (next() % n as u64) as usize);
                let len = 1 + (next() % 300) as usize;
                json!({"time": 0.0, "ingress": names[s], "dest_node": names[d], "dest_port": k,
                    "key_block_length": len,
                    "service": {"type": "best_effort", "lambda_k": 30.0, "sigma_k": 30.0}})
            })
            .collect();
        let s = scenario(json!({
            "seed": case,
            "duration": 1.0,
            "topology": {"nodes": Value::Array(names.iter().map(|n| json!({"id": n})).collect()), "links": links},
            "demands": demands,
            "config": {"trace": "frame"}
        }));
        let out = run(&s).unwrap();
        for c in &out.metrics.circuits {
            assert_eq!(c.fidelity_violations, 0);
            delivered += c.delivered_packets;
        }
        check_conservation(&out.metrics);
        block_ids_unique(&out);
    }
    assert!(delivered > 500, "{delivered}");
}
