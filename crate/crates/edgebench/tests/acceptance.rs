//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines show up
//! in `cargo test` output whether or not everything passes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use edgebench::probe::{download, rtt_probe, upload, ProbeRig};
use edgebench::runner::{run_scenario, run_suite, Mode, ScenarioOutcome};
use edgebench_core::anonymizer::{
    predicted_packet_loss, pseudonymize, sample_gate, AnonymizationScheme, PseudonymMap, SampleGate,
    SamplerPolicy, SamplerState, SamplingRate, Verdict,
};
use edgebench_core::message::{CitsMessage, END_OF_RUN_PRODUCER};
use edgebench_core::metrics::{compute_packet_loss, BenchmarkReport};
use edgebench_core::netem::LinkProfile;
use edgebench_core::scenario::{Scenario, ScenarioId};
use edgebench_core::time::Nanos;
use edgebench_core::workload::{ReceivedRecord, SentRecord};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;
/// Points of loss allowed around a single-producer prediction.
const SINGLE_TOLERANCE: f64 = 2.0;
const RTT_TARGET_MS: f64 = 25.0;
const RTT_TOLERANCE_MS: f64 = 2.0;
const RTT_RANGE_MS: (f64, f64) = (15.0, 34.0);
const UPLINK_MBPS: f64 = 100.0;
const DOWNLINK_MBPS: f64 = 152.0;
const BANDWIDTH_TOLERANCE: f64 = 0.05;
const PROPERTY_CASES: u32 = 10_000;

struct Line {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: u8, title: &'static str, pass: bool, detail: String) -> Line {
    let l = Line { id, title, pass, detail };
    println!("{} {:>2} {}: {}", verdict(l.pass), l.id, l.title, l.detail);
    l
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn predicted_loss_table() -> Line {
    let t = Instant::now();
    let got = [
        predicted_packet_loss(SamplingRate::Bounded(0.2), 2.0),
        predicted_packet_loss(SamplingRate::Bounded(1.0), 2.0),
        predicted_packet_loss(SamplingRate::Unlimited, 2.0),
    ];
    let pass = got == [Ok(90.0), Ok(50.0), Ok(0.0)] && t.elapsed() < Duration::from_secs(1);
    line(1, "predicted loss for small/medium/large at 2 Hz", pass, format!("{got:?}, want 90/50/0 exactly"))
}

fn scenario(outcomes: &BTreeMap<ScenarioId, ScenarioOutcome>, id: ScenarioId) -> &BenchmarkReport {
    &outcomes[&id].aggregate
}

fn desk_loss(outcomes: &BTreeMap<ScenarioId, ScenarioOutcome>) -> Line {
    let r = scenario(outcomes, ScenarioId::I);
    let pass = (r.measured_loss_pct - 90.0).abs() <= SINGLE_TOLERANCE;
    line(
        2,
        "scenario I loss, 60 s x 3 real-time",
        pass,
        format!("measured {:.2} %, want 90 +/- {SINGLE_TOLERANCE}", r.measured_loss_pct),
    )
}

fn desk_loss_medium_large(outcomes: &BTreeMap<ScenarioId, ScenarioOutcome>) -> Line {
    let ii = scenario(outcomes, ScenarioId::II).measured_loss_pct;
    let iii = scenario(outcomes, ScenarioId::III).measured_loss_pct;
    let pass = (ii - 50.0).abs() <= SINGLE_TOLERANCE && iii <= SINGLE_TOLERANCE;
    line(
        3,
        "scenarios II and III loss, 60 s x 3 real-time",
        pass,
        format!("II {ii:.2} % (want 50 +/- {SINGLE_TOLERANCE}), III {iii:.2} % (want <= {SINGLE_TOLERANCE})"),
    )
}

fn multi_producer_excess(outcomes: &BTreeMap<ScenarioId, ScenarioOutcome>) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (id, single) in [(ScenarioId::V, 90.0), (ScenarioId::VI, 50.0), (ScenarioId::VII, 0.0)] {
        let m = scenario(outcomes, id).measured_loss_pct;
        pass &= m >= single;
        parts.push(format!("{id} {m:.2} % (excess {:+.2})", m - single));
    }
    line(4, "ten-producer loss at or above the single-producer prediction", pass, parts.join(", "))
}

fn latency_plumbing() -> Line {
    let mut pass = true;
    let mut shown = String::new();
    for id in ScenarioId::ALL {
        let mut s = Scenario::canonical(id, SEED);
        s.repetitions = 1;
        s.links = s.links.without_jitter();
        let d = s.links.one_way_delay_ms();
        let p = s.tuning.poll_interval_ms as f64;
        let out = run_scenario(&s, &Mode::Sim, &scratch(&format!("plumbing-{id}"))).unwrap();
        let mean = out.aggregate.mean_ms.unwrap_or(f64::NAN);
        let ok = mean >= d && mean <= d + p + 2.0;
        pass &= ok;
        if !ok || shown.is_empty() {
            shown = format!("{id}: mean {mean:.2} ms in [{d}, {}]", d + p + 2.0);
        }
    }
    line(5, "simulated mean latency between path delay and path delay + poll + 2 ms", pass, shown)
}

fn rtt_calibration() -> Line {
    let rig = ProbeRig::start(Some(LinkProfile::UPLINK_5G), Some(LinkProfile::DOWNLINK_5G)).unwrap();
    let r = rtt_probe(&rig, 100, 64, Duration::from_millis(10)).unwrap();
    let pass = (r.mean_ms - RTT_TARGET_MS).abs() <= RTT_TOLERANCE_MS
        && r.min_ms >= RTT_RANGE_MS.0
        && r.p95_ms <= RTT_RANGE_MS.1;
    line(
        6,
        "echo RTT through the 5G profiles",
        pass,
        format!(
            "mean {:.2} ms, min {:.2}, p95 {:.2}, max {:.2} over {} samples",
            r.mean_ms, r.min_ms, r.p95_ms, r.max_ms, r.samples
        ),
    )
}

fn bandwidth_calibration() -> Line {
    const CHUNK: u32 = 64 << 10;
    const COUNT: u32 = 256;
    let up = upload(&ProbeRig::start(Some(LinkProfile::UPLINK_5G), None).unwrap(), COUNT, CHUNK).unwrap();
    let down = download(&ProbeRig::start(None, Some(LinkProfile::DOWNLINK_5G)).unwrap(), COUNT, CHUNK).unwrap();
    let within = |m: f64, cap: f64| (m - cap).abs() <= cap * BANDWIDTH_TOLERANCE;
    let pass = within(up.mbps, UPLINK_MBPS) && within(down.mbps, DOWNLINK_MBPS);
    line(
        7,
        "bulk throughput through uplink and downlink",
        pass,
        format!(
            "uplink {:.2} Mbit/s (cap {UPLINK_MBPS}), downlink {:.2} Mbit/s (cap {DOWNLINK_MBPS}), +/- 5 %",
            up.mbps, down.mbps
        ),
    )
}

/// Nested-loop join over unique sent keys.
fn brute_force_loss(sent: &[SentRecord], received: &[ReceivedRecord]) -> (usize, usize) {
    let mut unique = 0;
    let mut matched = 0;
    for (i, s) in sent.iter().enumerate() {
        if sent[..i].iter().any(|p| (p.producer_id, p.sequence) == (s.producer_id, s.sequence)) {
            continue;
        }
        unique += 1;
        matched += received.iter().any(|r| (r.producer_id, r.sequence) == (s.producer_id, s.sequence)) as usize;
    }
    (unique, matched)
}

fn loss_oracle() -> Line {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut mismatches = 0;
    for _ in 0..100 {
        let producers = rng.gen_range(1..=10u32);
        let sent: Vec<SentRecord> = (0..500u64)
            .map(|k| SentRecord {
                producer_id: 1 + (k % producers as u64) as u32,
                sequence: k / producers as u64,
                origin_time_ms: 5_000 + k * 50,
            })
            .collect();
        let keep = rng.gen_range(0.0..=1.0);
        let mut received = Vec::new();
        for s in &sent {
            if rng.gen_bool(keep) {
                received.push(ReceivedRecord {
                    producer_id: s.producer_id,
                    sequence: s.sequence,
                    origin_time_ms: s.origin_time_ms,
                    receive_time_ms: s.origin_time_ms + rng.gen_range(0..700),
                });
            }
        }
        received.shuffle(&mut rng);
        let fast = compute_packet_loss(&sent, &received).unwrap();
        let (unique, matched) = brute_force_loss(&sent, &received);
        let oracle_pct = (unique - matched) as f64 / unique as f64 * 100.0;
        if (fast.sent, fast.matched) != (unique, matched) || fast.loss_pct != oracle_pct {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    line(
        8,
        "loss equals a nested-loop join on 100 random 500-message traces",
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("{mismatches} mismatches in {:.2} s", elapsed.as_secs_f64()),
    )
}

fn conservation(outcomes: &[&ScenarioOutcome]) -> Line {
    let mut checks = 0;
    let mut broken = Vec::new();
    for o in outcomes {
        for (k, rep) in o.repetitions.iter().enumerate() {
            for c in &rep.conservation {
                checks += 1;
                if !c.holds() {
                    broken.push(format!("{} rep{} {}", rep.scenario_id, k + 1, c.component));
                }
            }
        }
    }
    line(
        9,
        "input = delivered + rejected + in flight at every component",
        broken.is_empty() && checks > 0,
        if broken.is_empty() {
            format!("{checks} ledgers balanced")
        } else {
            format!("unbalanced: {}", broken.join(", "))
        },
    )
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> (Line, Vec<ScenarioOutcome>) {
    let scenarios: Vec<Scenario> = ScenarioId::ALL.iter().map(|&id| Scenario::canonical(id, SEED)).collect();
    let (a, b) = (scratch("determinism-a"), scratch("determinism-b"));
    let first = run_suite(&scenarios, &Mode::Sim, &a).unwrap();
    run_suite(&scenarios, &Mode::Sim, &b).unwrap();
    let (fa, fb) = (files_under(&a), files_under(&b));
    let reports = fa.keys().filter(|k| k.ends_with(".json")).count();
    let pass = fa == fb && reports > 0;
    let l = line(
        10,
        "two simulated suites with seed 42 are byte-identical",
        pass,
        format!("{} files compared, {reports} reports", fa.len()),
    );
    (l, first.scenarios)
}

fn msg(producer_id: u32, sequence: u64) -> CitsMessage {
    CitsMessage {
        producer_id,
        sequence,
        origin_time_ms: sequence,
        payload: Vec::new(),
        topic: "t".into(),
    }
}

fn anonymizer_properties() -> Line {
    let runner = || TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let mut failures = Vec::new();

    // window sampling: at most one forwarded per window, one per touched window
    let window = runner().run(
        &(prop_oneof![Just(0.2f64), Just(1.0), 0.05f64..10.0], prop::collection::vec(1u64..3_000, 1..300)),
        |(rate, gaps)| {
            let scheme = AnonymizationScheme { sampling: SamplingRate::Bounded(rate), ..AnonymizationScheme::SMALL };
            let width = scheme.sampling.window().unwrap().0;
            let mut st = SamplerState::default();
            let mut t = 0u64;
            let mut per_window = BTreeMap::<u64, u32>::new();
            for g in gaps {
                t += g * 1_000_000;
                if sample_gate(&scheme, Nanos(t), &mut st) == Verdict::Forward {
                    *per_window.entry(st.window_index).or_default() += 1;
                }
            }
            let span = t - st.anchor.unwrap().0;
            let bound = (span / width) as usize + 1;
            prop_assert!(per_window.values().all(|&n| n == 1));
            prop_assert!(per_window.len() <= bound);
            Ok(())
        },
    );
    if let Err(e) = window {
        failures.push(format!("window bound: {e}"));
    }

    let pseudonyms = runner().run(
        &(any::<u64>(), prop::collection::btree_set(any::<u32>(), 1..64)),
        |(salt, ids)| {
            let mut a = PseudonymMap::new(salt);
            let mut b = PseudonymMap::new(salt);
            let mut seen = BTreeSet::new();
            for &id in &ids {
                if id == END_OF_RUN_PRODUCER {
                    continue;
                }
                let p = a.pseudonym(id).unwrap();
                prop_assert!(seen.insert(p));
                prop_assert_ne!(p, id);
                prop_assert_eq!(a.pseudonym(id).unwrap(), p);
                prop_assert_eq!(b.pseudonym(id).unwrap(), p);
            }
            Ok(())
        },
    );
    if let Err(e) = pseudonyms {
        failures.push(format!("pseudonyms: {e}"));
    }

    let order = runner().run(
        &(any::<u64>(), prop::collection::vec((1u32..6, 1u64..1_500), 1..300), any::<bool>()),
        |(salt, steps, last)| {
            let policy = if last { SamplerPolicy::Last } else { SamplerPolicy::First };
            let mut gate = SampleGate::new(AnonymizationScheme::MEDIUM, policy);
            let mut map = PseudonymMap::new(salt);
            let mut seqs = BTreeMap::<u32, u64>::new();
            let mut now = 0;
            let mut out = Vec::new();
            for (p, gap) in steps {
                now += gap;
                let seq = seqs.entry(p).or_default();
                *seq += 1;
                if let Some(m) = gate.offer(msg(p, *seq), Nanos::from_millis(now)).forward {
                    out.push(pseudonymize(m, &mut map).unwrap());
                }
            }
            out.extend(gate.flush().into_iter().map(|m| pseudonymize(m, &mut map).unwrap()));
            let mut last_seq = BTreeMap::<u32, u64>::new();
            for m in out {
                let prev = last_seq.insert(m.producer_id, m.sequence);
                prop_assert!(prev.is_none_or(|p| p < m.sequence));
            }
            Ok(())
        },
    );
    if let Err(e) = order {
        failures.push(format!("ordering: {e}"));
    }

    line(
        11,
        "sampling bound, pseudonym stability and injectivity, per-producer order",
        failures.is_empty(),
        if failures.is_empty() {
            format!("3 properties x {PROPERTY_CASES} cases")
        } else {
            failures.join("; ")
        },
    )
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("edgebench-acceptance-{}", std::process::id())).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// The six hybrid desk scenarios, concurrently, in real time.
fn real_time_desk_runs() -> BTreeMap<ScenarioId, ScenarioOutcome> {
    let ids = [ScenarioId::I, ScenarioId::II, ScenarioId::III, ScenarioId::V, ScenarioId::VI, ScenarioId::VII];
    let handles: Vec<_> = ids
        .into_iter()
        .map(|id| {
            let dir = scratch(&format!("desk-{id}"));
            thread::spawn(move || {
                let s = Scenario::canonical(id, SEED);
                (id, run_scenario(&s, &Mode::RealTime { program: None }, &dir))
            })
        })
        .collect();
    handles
        .into_iter()
        .map(|h| {
            let (id, r) = h.join().expect("scenario thread");
            (id, r.unwrap_or_else(|e| panic!("scenario {id}: {e:#}")))
        })
        .collect()
}

fn main() {
    println!("acceptance: criteria 2-4 run six 60 s x 3 real-time scenarios, about three minutes");
    let mut lines = vec![predicted_loss_table(), loss_oracle(), anonymizer_properties(), latency_plumbing()];
    let (det, simulated) = determinism();
    lines.push(det);

    let desk = real_time_desk_runs();
    lines.push(desk_loss(&desk));
    lines.push(desk_loss_medium_large(&desk));
    lines.push(multi_producer_excess(&desk));
    let all: Vec<&ScenarioOutcome> = desk.values().chain(simulated.iter()).collect();
    lines.push(conservation(&all));

    lines.push(rtt_calibration());
    lines.push(bandwidth_calibration());

    lines.sort_by_key(|l| l.id);
    println!("\nacceptance summary");
    for l in &lines {
        println!("{} {:>2} {}", verdict(l.pass), l.id, l.title);
    }
    let _ = fs::remove_dir_all(std::env::temp_dir().join(format!("edgebench-acceptance-{}", std::process::id())));
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
