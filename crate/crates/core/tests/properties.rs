//! Invariants of whole simulated sessions over randomly shaped populations.

use std::collections::BTreeMap;

use proptest::prelude::*;
use turinghotel::agent::{ScriptLine, VerdictStrategy};
use turinghotel::roster::TruthKind;
use turinghotel::sim::{run, AgentSpec, Scenario, SimOptions, SimOutcome};
use turinghotel::store::parse_session;

fn population(seed: u64, humans: usize, ais: usize, rounds: u32, lines: usize) -> Scenario {
    let mut agents = Vec::new();
    for i in 0..humans + ais {
        let human = i < humans;
        let mut a = AgentSpec::new(
            if human { format!("h{i}") } else { format!("a{i}") },
            if human { TruthKind::Human } else { TruthKind::Ai },
        );
        if !human {
            a.model = Some(format!("m{}", i % 3));
        }
        a.join_at_s = (i % 5) as f64 * 7.0;
        a.verdict = match i % 4 {
            0 => VerdictStrategy::Random,
            1 => VerdictStrategy::All,
            2 => VerdictStrategy::None,
            _ => VerdictStrategy::Silent,
        };
        a.utterances = (0..lines)
            .map(|k| ScriptLine {
                at_s: 5.0 + (k * 23 + i * 3) as f64 % 170.0,
                text: format!("line {k} from seat {}", i % 4),
            })
            .collect();
        agents.push(a);
    }
    let mut s = Scenario::new("prop", seed, agents);
    s.rounds_per_agent = rounds;
    s
}

fn outcome(s: &Scenario) -> SimOutcome {
    run(s, &SimOptions::default()).expect("no deadlock")
}

fn shape() -> impl Strategy<Value = Scenario> {
    (any::<u64>(), 2usize..8, 2usize..8, 1u32..3, 0usize..5)
        .prop_map(|(seed, h, a, rounds, lines)| population(seed, h, a, rounds, lines))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rooms_stay_isolated(s in shape()) {
        let o = outcome(&s);
        prop_assert!(o.rounds_closed > 0);
        prop_assert_eq!(o.delivery.cross_room_deliveries, 0);
        prop_assert_eq!(o.delivery.identity_leaks, 0);
    }

    #[test]
    fn chats_are_conserved(s in shape()) {
        let o = outcome(&s);
        let logged: usize = o.rounds().iter().map(|r| r.transcript.len()).sum();
        prop_assert_eq!(logged as u64, o.hotel.chats_accepted);
        let fanout: u64 = o
            .rounds()
            .iter()
            .map(|r| (r.transcript.len() * (r.room_size() - 1)) as u64)
            .sum();
        prop_assert_eq!(o.hotel.relays, fanout);
        prop_assert_eq!(o.delivery.relays_delivered, fanout);
    }

    #[test]
    fn only_judges_are_recycled(s in shape()) {
        let o = outcome(&s);
        let mut judged: BTreeMap<&str, usize> = BTreeMap::new();
        for r in o.rounds() {
            for (agent, v) in &r.verdicts {
                if v.is_some() {
                    *judged.entry(agent).or_default() += 1;
                }
            }
        }
        let mut recycled: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &o.recycled {
            *recycled.entry(a).or_default() += 1;
        }
        prop_assert_eq!(recycled, judged);
    }

    #[test]
    fn log_replays_to_memory(s in shape()) {
        let o = outcome(&s);
        let reread = parse_session(o.log.as_slice()).unwrap();
        prop_assert!(reread.corrupt.is_empty());
        prop_assert_eq!(&reread.rounds, &o.held_rounds);
        prop_assert_eq!(o.rounds(), o.held_rounds.as_slice());
    }
}
