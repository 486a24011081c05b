//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use wsnkm::adversary::{closure, derivable_pairwise, exposure, AdversaryAction, ScheduledAction};
use wsnkm::harness::{self, Experiment, Overrides, SweepParams};
use wsnkm::metrics::{self, Format};
use wsnkm::netsim::{
    load_noise, load_topology, InputError, LinkGain, NoiseTrace, RunLimit, Topology,
    MEYER_HEAVY_EXCERPT,
};
use wsnkm::node::{NodePhase, ProtocolConfig};
use wsnkm::packet::PacketType;
use wsnkm::{KeyStore, NodeId, Simulation, StorageReport, TICKS_PER_SECOND};

use common::*;

/// Invariant counters accumulated over every simulation the suite runs.
#[derive(Default)]
struct Tally {
    runs: u64,
    erasure: u64,
    unverified: u64,
}

impl Tally {
    fn observe(&mut self, sim: &Simulation) {
        self.runs += 1;
        self.erasure += sim.violations().erasure;
        self.unverified += sim.installs_without_verify();
    }
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || {
        format!("took {took:?}, budget {budget:?}")
    })
}

// 1 ------------------------------------------------------------------------

fn storage_formula() -> Outcome {
    let start = Instant::now();
    let r = StorageReport::new(20, 20, 8);
    ensure(r.total_keys == 82 && r.total_octets == 656, || {
        format!(
            "formula gave {} keys / {} octets",
            r.total_keys, r.total_octets
        )
    })?;

    // a real node with exactly 20 neighbors and a 20-link chain
    let mut topo = Topology::new();
    for leaf in 2..=21 {
        topo.add_symmetric(NodeId(1), NodeId(leaf), -50.0);
    }
    let mut sim = lossless(21, 1, topo, ProtocolConfig::default());
    run_until(&mut sim, SETTLED + TICKS_PER_SECOND);
    let hub = sim.node(NodeId(1)).unwrap().store();
    let live = hub.storage_report(8);
    ensure(
        hub.pairwise_map().len() == 20 && hub.cluster_received().len() == 20,
        || "hub did not finish with 20 neighbors".into(),
    )?;
    ensure(live.total_keys == 82 && live.total_octets == 656, || {
        format!(
            "live report {} keys / {} octets",
            live.total_keys, live.total_octets
        )
    })?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("82 keys, 656 octets ({:?})", start.elapsed()))
}

// 2 ------------------------------------------------------------------------

fn full_connectivity(t: &mut Tally) -> Outcome {
    let start = Instant::now();
    let mut topologies = 0;
    let mut pairs = 0;
    for n in [10, 25, 50] {
        for seed in 0..10 {
            let mut sim = random_lossless(n, seed);
            run_until(&mut sim, SETTLED);
            t.observe(&sim);
            topologies += 1;
            let kin = *sim.initial_key();
            let ids = sim.deployed();
            for (a, b) in sim.topology().mutual_pairs(&ids) {
                let (na, nb) = (sim.node(a).unwrap(), sim.node(b).unwrap());
                let (ka, kb) = (na.store().pairwise(b), nb.store().pairwise(a));
                ensure(ka.is_some() && ka == kb, || {
                    format!("n={n} seed={seed}: pair ({a},{b}) not established")
                })?;
                ensure(ka == Some(&true_pairwise(&kin, a, b)), || {
                    format!("n={n} seed={seed}: pair ({a},{b}) holds a non-canonical key")
                })?;
                for (node, peer) in [(na, b), (nb, a)] {
                    let at = node.stats.pairwise_installed_at[&peer];
                    let deadline = node.boot_time().unwrap() + T_MIN;
                    ensure(at < deadline, || {
                        format!(
                            "n={n} seed={seed}: {} installed {peer} at {at}, after {deadline}",
                            node.id()
                        )
                    })?;
                }
                pairs += 1;
            }
            let rate = metrics::summarize(&sim).result.success_rate;
            ensure(rate == 1.0, || {
                format!("n={n} seed={seed}: success rate {rate}")
            })?;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!(
        "{topologies} topologies, {pairs} pairs, success rate 1.0 ({:?})",
        start.elapsed()
    ))
}

// 3 ------------------------------------------------------------------------

/// Steps a run one event at a time and scans every key-store dump.
fn stepwise_dump_scan(sim: &mut Simulation, until: u64) -> u64 {
    let kin = sim.initial_key().to_hex();
    let mut hits = 0;
    while sim.now() <= until && sim.pending_events() > 0 {
        let before = sim.events_processed();
        sim.run(RunLimit::Events(1));
        if sim.events_processed() == before {
            break;
        }
        for node in sim.nodes() {
            let Some(boot) = node.boot_time() else {
                continue;
            };
            if sim.now() > boot + node.config().t_min && node.store().dump().contains(&kin) {
                hits += 1;
            }
        }
    }
    hits
}

fn erasure_deadline(t: &mut Tally) -> Outcome {
    let mut scanned = 0;
    for seed in 0..3 {
        let mut sim = random_lossless(12, 100 + seed);
        sim.schedule_action(ScheduledAction {
            at: SETTLED + 200_000,
            kind: AdversaryAction::Compromise { node: NodeId(3) },
        })
        .unwrap();
        let hits = stepwise_dump_scan(&mut sim, SETTLED + 3 * TICKS_PER_SECOND);
        t.observe(&sim);
        ensure(hits == 0, || {
            format!("seed {seed}: {hits} dumps still held the initial key")
        })?;
        let erased = sim.nodes().all(|n| n.stats.erased_at.is_some());
        ensure(erased, || format!("seed {seed}: some node never erased"))?;
        ensure(sim.adversary().captures().len() == 1, || {
            format!(
                "seed {seed}: scan stopped at {} before the capture",
                sim.now()
            )
        })?;
        scanned += sim.events_processed();
    }
    ensure(t.erasure == 0, || {
        format!("{} erasure violations across {} runs", t.erasure, t.runs)
    })?;
    Ok(format!(
        "0 violations over {} runs; {scanned} events dump-scanned step by step",
        t.runs
    ))
}

// 4 ------------------------------------------------------------------------

fn compromise_localization(t: &mut Tally) -> Outcome {
    let mut checked = 0;
    for seed in 0..30u64 {
        let n = 10 + (seed as usize % 16);
        let mut sim = random_lossless(n, 400 + seed);
        let victim = NodeId(ChaCha8Rng::seed_from_u64(seed).gen_range(1..=n as u16));
        sim.schedule_action(ScheduledAction {
            at: SETTLED + 100_000,
            kind: AdversaryAction::Compromise { node: victim },
        })
        .unwrap();
        run_until(&mut sim, SETTLED + 200_000);
        t.observe(&sim);
        let cap = &sim.adversary().captures()[0];
        ensure(
            cap.store.initial_key().is_none() && cap.store.neighbor_masters().is_none(),
            || format!("seed {seed}: post-erasure snapshot still holds bootstrap keys"),
        )?;
        let ids = sim.deployed();
        let kin = *sim.initial_key();
        let brute = brute_force_pairs(&brute_force_knowledge(&[&cap.store], &ids), &kin, &ids);
        let oracle = derivable_pairwise([&cap.store], &ids);
        ensure(brute == oracle, || {
            format!("seed {seed}: closure oracle disagrees with brute force")
        })?;
        let neighbor_pairs = sim.topology().mutual_pairs(&ids);
        let own_links: BTreeSet<(NodeId, NodeId)> = sim
            .topology()
            .mutual_neighbors(victim)
            .into_iter()
            .map(|p| (victim.min(p), victim.max(p)))
            .collect();
        let exposed: BTreeSet<_> = brute.intersection(&neighbor_pairs).copied().collect();
        ensure(exposed == own_links, || {
            format!("seed {seed}: victim {victim} exposes {exposed:?}, links are {own_links:?}")
        })?;
        ensure(
            brute.iter().all(|(a, b)| *a == victim || *b == victim),
            || format!("seed {seed}: a pair without the victim is derivable"),
        )?;
        checked += 1;
    }
    Ok(format!(
        "{checked} seeds, derivable neighbor pairs == victim links"
    ))
}

// 5 ------------------------------------------------------------------------

/// Live keys an honest node uses for traffic.
fn traffic_keys(store: &KeyStore) -> Vec<wsnkm::KeyMaterial> {
    let mut keys: Vec<_> = store.pairwise_map().values().copied().collect();
    keys.extend(store.cluster_sent().copied());
    keys.extend(store.cluster_received().values().copied());
    keys.push(*store.global());
    keys
}

fn revocation(t: &mut Tally) -> Outcome {
    let t_p = ProtocolConfig::default().t_p;
    let mut worst_latency = 0;
    for seed in 0..30u64 {
        let mut sim = random_lossless(20, 500 + seed);
        let victim = NodeId(ChaCha8Rng::seed_from_u64(seed).gen_range(1..=20));
        let at = SETTLED + 300_000;
        sim.schedule_action(ScheduledAction {
            at,
            kind: AdversaryAction::Compromise { node: victim },
        })
        .unwrap();
        let rekey_delay = sim.config().bs.rekey_delay;
        run_until(&mut sim, at + t_p + rekey_delay + 3 * TICKS_PER_SECOND);
        t.observe(&sim);

        let node = sim.node(victim).unwrap();
        let help = node.stats.help_sent_at.first().copied();
        let latency = help.map(|h| h - at);
        ensure(latency.is_some_and(|l| l <= t_p), || {
            format!("seed {seed}: HELP latency {latency:?} exceeds T_p")
        })?;
        worst_latency = worst_latency.max(latency.unwrap());
        ensure(node.phase() == NodePhase::Revoked, || {
            format!("seed {seed}: victim not revoked")
        })?;
        let bs = sim.base_station();
        ensure(bs.epoch() >= 1 && bs.revoked().contains(&victim), || {
            format!("seed {seed}: no global rekey")
        })?;
        let honest: Vec<_> = sim.nodes().filter(|n| n.id() != victim).collect();
        ensure(
            honest.iter().all(|n| n.global_epoch() == bs.epoch()),
            || format!("seed {seed}: an honest node missed the rekey"),
        )?;
        ensure(
            honest
                .iter()
                .all(|n| n.store().blocklist().contains_key(&victim)),
            || format!("seed {seed}: an honest node did not block the victim"),
        )?;

        let ids = sim.deployed();
        let snapshot = &sim.adversary().captures()[0].store;
        let excluded = BTreeSet::from([victim]);
        let residual = exposure(&sim, &closure([snapshot], &ids, false), &excluded);
        ensure(residual.is_empty(), || {
            format!("seed {seed}: residual exposure {residual:?}")
        })?;
        let known = brute_force_knowledge(&[snapshot], &ids);
        let leaked = honest
            .iter()
            .flat_map(|n| traffic_keys(n.store()))
            .filter(|k| known.contains(k))
            .count();
        ensure(leaked == 0, || {
            format!("seed {seed}: {leaked} live keys derivable")
        })?;
    }
    Ok(format!(
        "30 seeds, worst HELP latency {worst_latency} us <= T_p, residual closure empty"
    ))
}

// 6 ------------------------------------------------------------------------

fn hello_flood(t: &mut Tally) -> Outcome {
    let fake = NodeId(900);
    let mut acks_in_discovery = 0;
    let mut rejected = 0;
    for seed in 0..10u64 {
        for (label, at) in [
            ("early", 600_000),
            ("discovery", 1_200_000),
            ("post", SETTLED + TICKS_PER_SECOND),
        ] {
            let mut sim = random_lossless(10, 600 + seed);
            sim.schedule_action(ScheduledAction {
                at,
                kind: AdversaryAction::HelloFlood {
                    fake_id: fake,
                    boost: true,
                },
            })
            .unwrap();
            run_until(&mut sim, SETTLED + 2 * TICKS_PER_SECOND);
            t.observe(&sim);
            let installs = sim
                .nodes()
                .filter(|n| n.store().pairwise(fake).is_some())
                .count();
            let traced = sim
                .trace()
                .iter()
                .filter(|l| {
                    l.contains("ev=pairwise_install") && l.contains(&format!("peer={fake}"))
                })
                .count();
            ensure(installs == 0 && traced == 0, || {
                format!("seed {seed} {label}: {installs} installs for the fake id")
            })?;
            let acks = sim
                .trace()
                .iter()
                .filter(|l| l.contains("ev=ack_sent") && l.contains(&format!("to={fake}")))
                .count();
            if label == "post" {
                ensure(acks == 0, || {
                    format!("seed {seed}: {acks} ACKs after T_min")
                })?;
            } else {
                acks_in_discovery += acks;
            }
            rejected += sim.nodes().map(|n| n.stats.bad_mac).sum::<u64>();
        }
    }
    Ok(format!(
        "0 installs in 30 floods; {acks_in_discovery} discovery ACKs, {rejected} forged ACKs rejected"
    ))
}

// 7 ------------------------------------------------------------------------

fn scalability() -> Outcome {
    let start = Instant::now();
    let rows = harness::run_sweep(Experiment::Scalability, &SweepParams::default())
        .map_err(|e| e.to_string())?;
    let mut by_n: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = by_n.entry(r.n).or_default();
        e.0 += r.max_msgs as f64;
        e.1 += r.energy_units;
        e.2 += 1;
    }
    let means: Vec<(usize, f64, f64)> = by_n
        .iter()
        .map(|(&n, &(m, e, c))| (n, m / c as f64, e / c as f64))
        .collect();
    ensure(means.len() == 10, || format!("{} grid points", means.len()))?;
    let grand = means.iter().map(|m| m.1).sum::<f64>() / means.len() as f64;
    let worst = means
        .iter()
        .map(|m| (m.1 - grand).abs() / grand)
        .fold(0.0, f64::max);
    ensure(worst <= 0.10, || {
        format!(
            "max_msgs deviates {:.1}% from its mean {grand:.2}",
            worst * 100.0
        )
    })?;
    ensure(means.windows(2).all(|w| w[1].2 > w[0].2), || {
        format!("energy not strictly increasing: {means:?}")
    })?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "max_msgs {grand:.1} +/- {:.1}%, energy {:.0} -> {:.0} ({:?})",
        worst * 100.0,
        means[0].2,
        means[9].2,
        start.elapsed()
    ))
}

// 8 ------------------------------------------------------------------------

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn write_scenario(dir: &Path) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let topo = harness::topogen::random_connected(15, 4, &mut rng);
    fs::write(dir.join("topo.txt"), topo.to_text()).unwrap();
    fs::write(dir.join("noise.txt"), NoiseTrace::meyer_excerpt().to_text()).unwrap();
    let nodes: String = (1..=15)
        .map(|i| format!("{i} boot={}\n", 100_000 * i + 1))
        .collect();
    let text = format!(
        "seed = 77\ntopology = topo.txt\nnoise = noise.txt\nuntil = 12000000\n\n[nodes]\n{nodes}\n\
         [adversary]\n\
         adversary: replay type=ACK src=2 target=3 at=9000000\n\
         adversary: alter src=1 dst=2 mask=0f at=0\n\
         adversary: hello_flood fake=999 at=1500000\n\
         adversary: compromise node=4 at=7500000\n"
    );
    let path = dir.join("scenario.txt");
    fs::write(&path, text).unwrap();
    path
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let mut hashes = Vec::new();
    for (i, format) in [Format::Csv, Format::Csv, Format::Json, Format::Json]
        .into_iter()
        .enumerate()
    {
        let out = dir.path().join(format!("out{i}"));
        let o = harness::cmd_run(&scenario, &Overrides::default(), &out, format, false)
            .map_err(|e| e.to_string())?;
        hashes.push((sha(&o.trace_path), sha(&o.results_path)));
    }
    ensure(hashes[0] == hashes[1] && hashes[2] == hashes[3], || {
        format!("hashes differ: {hashes:?}")
    })?;
    ensure(hashes[0].0 == hashes[2].0, || {
        "trace depends on the output format".into()
    })?;
    let small = SweepParams {
        reps: 2,
        sizes: vec![10, 20],
        ..SweepParams::default()
    };
    let a = harness::run_sweep(Experiment::Energy, &small).map_err(|e| e.to_string())?;
    let b = harness::run_sweep(Experiment::Energy, &small).map_err(|e| e.to_string())?;
    ensure(a == b, || "sweep rows differ between runs".into())?;
    Ok(format!(
        "trace sha256 {}..., results identical",
        &hashes[0].0[..12]
    ))
}

// 9 ------------------------------------------------------------------------

fn parser_golden() -> Outcome {
    let first = load_topology("1 2 -54,0").map_err(|e| e.to_string())?;
    ensure(
        first.links().collect::<Vec<_>>()
            == [LinkGain {
                src: NodeId(1),
                dst: NodeId(2),
                gain_dbm: -54.0,
            }],
        || "\"1 2 -54,0\" parsed wrong".into(),
    )?;
    let gain = load_topology("gain 2 1 -55.0").map_err(|e| e.to_string())?;
    ensure(gain.gain(NodeId(2), NodeId(1)) == Some(-55.0), || {
        "gain form parsed wrong".into()
    })?;

    let block = "1 2 -54,0\n2 1 -55,0\n1 3 -60.0\n3 1 -60.0\n2 3 -64,0\n";
    let topo = load_topology(block).map_err(|e| e.to_string())?;
    let expected = [
        ((1, 2), -54.0),
        ((1, 3), -60.0),
        ((2, 1), -55.0),
        ((2, 3), -64.0),
        ((3, 1), -60.0),
    ];
    let got: Vec<((u16, u16), f64)> = topo
        .links()
        .map(|l| ((l.src.0, l.dst.0), l.gain_dbm))
        .collect();
    ensure(got == expected, || {
        format!("topology block parsed to {got:?}")
    })?;
    // the printed listing carries a stray page number that a strict parser must reject
    let stray = load_topology("1 2 -54,0\n55\n");
    ensure(
        matches!(stray, Err(InputError::Parse { line: 2, .. })),
        || format!("stray line accepted: {stray:?}"),
    )?;

    let hundred: String = (0..100)
        .map(|i| format!("{}\n", MEYER_HEAVY_EXCERPT[i % 10]))
        .collect();
    let noise = load_noise(&hundred).map_err(|e| e.to_string())?;
    ensure(
        noise.len() == 100 && noise.samples()[..10] == MEYER_HEAVY_EXCERPT,
        || "noise trace parsed wrong".into(),
    )?;
    ensure(noise == NoiseTrace::meyer_excerpt(), || {
        "built-in excerpt differs".into()
    })?;
    let short: String = hundred.lines().take(99).map(|l| format!("{l}\n")).collect();
    let rejected = load_noise(&short);
    ensure(rejected == Err(InputError::TooShort { got: 99 }), || {
        format!("99-sample trace gave {rejected:?}")
    })?;
    Ok("topology forms, 100-sample trace, 99-sample rejection".into())
}

// 10 -----------------------------------------------------------------------

fn mac_gate(t: &mut Tally) -> Outcome {
    let mut altered = 0;
    let mut bad_macs = 0;
    let mut replays = 0;
    for seed in 0..10u64 {
        let mut sim = random_lossless(12, 1000 + seed);
        let (a, b) = *sim
            .topology()
            .mutual_pairs(&sim.deployed())
            .iter()
            .next()
            .unwrap();
        let actions = [
            (
                0,
                AdversaryAction::Alter {
                    src: a,
                    dst: b,
                    mask: vec![0x5a],
                },
            ),
            (
                0,
                AdversaryAction::Alter {
                    src: b,
                    dst: a,
                    mask: vec![0, 0, 0x01],
                },
            ),
            (
                SETTLED + 10,
                AdversaryAction::Replay {
                    ptype: PacketType::Ack,
                    src: b,
                    target: a,
                },
            ),
            (
                SETTLED + 20,
                AdversaryAction::Replay {
                    ptype: PacketType::Hello,
                    src: a,
                    target: b,
                },
            ),
            (
                SETTLED + 30,
                AdversaryAction::Replay {
                    ptype: PacketType::ClusterKey,
                    src: a,
                    target: b,
                },
            ),
            (
                SETTLED + 40,
                AdversaryAction::Replay {
                    ptype: PacketType::Report,
                    src: a,
                    target: a,
                },
            ),
        ];
        for (at, kind) in actions {
            sim.schedule_action(ScheduledAction { at, kind }).unwrap();
        }
        run_until(&mut sim, SETTLED + 2 * TICKS_PER_SECOND);
        t.observe(&sim);
        altered += sim.adversary().frames_altered;
        bad_macs += sim.bad_mac_drops();
        replays += sim
            .trace()
            .iter()
            .filter(|l| l.contains("ev=injected"))
            .count();
        let (na, nb) = (sim.node(a).unwrap(), sim.node(b).unwrap());
        ensure(
            na.store().pairwise(b).is_none() && nb.store().pairwise(a).is_none(),
            || format!("seed {seed}: altered link ({a},{b}) still established"),
        )?;
    }
    ensure(altered > 0 && bad_macs > 0 && replays > 0, || {
        format!("attacks had no effect: altered={altered} bad_macs={bad_macs} replays={replays}")
    })?;
    ensure(t.unverified == 0, || {
        format!(
            "{} installs without verify across {} runs",
            t.unverified, t.runs
        )
    })?;
    Ok(format!(
        "installs_without_verify = 0 over {} runs ({altered} altered frames, {bad_macs} MAC rejections, {replays} replays)",
        t.runs
    ))
}

fn main() {
    let mut tally = Tally::default();
    let mut results: BTreeMap<u32, (&str, Outcome)> = BTreeMap::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        results.insert(n, (name, outcome));
    };

    record(1, "storage formula", &mut storage_formula);
    record(2, "full connectivity", &mut || {
        full_connectivity(&mut tally)
    });
    record(4, "compromise localization", &mut || {
        compromise_localization(&mut tally)
    });
    record(5, "revocation", &mut || revocation(&mut tally));
    record(6, "hello-flood resistance", &mut || hello_flood(&mut tally));
    record(7, "scalability trend", &mut scalability);
    record(8, "determinism", &mut determinism);
    record(9, "parser golden tests", &mut parser_golden);
    record(10, "MAC gate", &mut || mac_gate(&mut tally));
    // last: it audits every simulation above as well as its own
    record(3, "erasure deadline", &mut || erasure_deadline(&mut tally));

    let mut failed = 0;
    for (n, (name, outcome)) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS - {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL - {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
