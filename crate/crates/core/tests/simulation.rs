use proptest::prelude::*;
use slim_abc::simnet::config::ByzantineEntry;
use slim_abc::simnet::sim_run_traced;
use slim_abc::simnet::trace::{replay, Trace};
use slim_abc::{sim_run, BehaviorSpec, Policy, SimConfig};

fn policies(n: usize) -> [Policy; 4] {
    [
        Policy::Fifo,
        Policy::Random,
        Policy::from_name("adversarial-delay", n).unwrap(),
        Policy::from_name("targeted-starve", n).unwrap(),
    ]
}

fn behaviors() -> [Option<BehaviorSpec>; 7] {
    [
        None,
        Some(BehaviorSpec::Crash { at_step: 0 }),
        Some(BehaviorSpec::Silent),
        Some(BehaviorSpec::EquivocatePpb),
        Some(BehaviorSpec::CorruptShares),
        Some(BehaviorSpec::WithholdSuggestions),
        Some(BehaviorSpec::RandomVotes),
    ]
}

fn scenario(n: usize, seed: u64, policy: Policy, b: Option<BehaviorSpec>) -> SimConfig {
    let mut c = SimConfig::honest(n, seed);
    c.instances = 2;
    c.policy = policy;
    if let Some(b) = b {
        c.byzantine = (0..c.f as u16)
            .map(|party| ByzantineEntry {
                party,
                behavior: b.clone(),
            })
            .collect();
    }
    c
}

#[test]
fn honest_four_parties_finalize_and_agree() {
    let r = sim_run(SimConfig::honest(4, 1)).unwrap();
    assert!(r.passed(), "{}", r.to_json());
}

#[test]
fn smoke_matrix() {
    let mut failures = Vec::new();
    for n in [4, 7] {
        for seed in 0..5 {
            for policy in policies(n) {
                for b in behaviors() {
                    let label = format!("n={n} seed={seed} {} {b:?}", policy.label());
                    let r = sim_run(scenario(n, seed, policy.clone(), b)).unwrap();
                    if !r.passed() {
                        failures.push(format!("{label}: {:?} {:?}", r.status, r.failed_assertions()));
                    }
                }
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn runs_are_deterministic() {
    let c = scenario(7, 11, Policy::Random, Some(BehaviorSpec::EquivocatePpb));
    let (a, ta) = sim_run_traced(c.clone()).unwrap();
    let (b, tb) = sim_run_traced(c).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_jsonl(), tb.to_jsonl());
}

#[test]
fn trace_replays_and_detects_edits() {
    let c = scenario(4, 2, Policy::Random, Some(BehaviorSpec::CorruptShares));
    let (_, trace) = sim_run_traced(c).unwrap();
    let text = trace.to_jsonl();
    let parsed = Trace::from_jsonl(&text).unwrap();
    let ok = replay(&parsed).unwrap();
    assert_eq!(ok.divergence, None);
    assert_eq!(ok.steps as usize, parsed.records.len());

    let mut edited = parsed.clone();
    let k = edited.records.len() / 3;
    let h = &mut edited.records[k].hash;
    let flipped = if h.starts_with('0') { '1' } else { '0' };
    h.replace_range(..1, &flipped.to_string());
    assert_eq!(replay(&edited).unwrap().divergence, Some(edited.records[k].step));

    let cut = &text[..text.len() / 2];
    assert!(Trace::from_jsonl(cut).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_property_holds(
        n in prop::sample::select(vec![4usize, 7, 10]),
        seed in any::<u64>(),
        p in 0usize..4,
        b in 0usize..7,
        overlap in 0.0f64..=1.0,
    ) {
        let mut c = scenario(n, seed, policies(n)[p].clone(), behaviors()[b].clone());
        c.scenario.overlap_ratio = overlap;
        let r = sim_run(c).unwrap();
        prop_assert!(r.passed(), "{:?} {:?}", r.status, r.failed_assertions());
        prop_assert!(r.bytes_honest >= r.messages_honest);
        prop_assert!(r.messages_all >= r.messages_honest);
        for i in &r.instances {
            prop_assert!(i.decided_slots >= 1 && i.decided_slots <= i.committee.len());
            prop_assert_eq!(i.committee.len(), r.config.f + 1);
            prop_assert!((0.0..1.0).contains(&i.duplicate_ratio));
        }
    }
}
