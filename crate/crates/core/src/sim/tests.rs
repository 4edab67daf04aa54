use std::collections::BTreeSet;

use super::*;
use crate::agent::{ScriptLine, VerdictStrategy};
use crate::roster::TruthKind;

fn cast(n: usize) -> Vec<AgentSpec> {
    (0..n)
        .map(|i| {
            let truth = if i % 2 == 0 { TruthKind::Human } else { TruthKind::Ai };
            let mut a = AgentSpec::new(format!("agent-{i:02}"), truth);
            if truth == TruthKind::Ai {
                a.model = Some("model-x".into());
            }
            a.utterances = vec![
                ScriptLine {
                    at_s: 5.0 + i as f64,
                    text: format!("hello from number {i}"),
                },
                ScriptLine {
                    at_s: 60.0,
                    text: "anyone there".into(),
                },
            ];
            a.verdict = VerdictStrategy::Random;
            a
        })
        .collect()
}

#[test]
fn four_agents_one_round() {
    let mut s = Scenario::new("four", 1, cast(4));
    s.expect.rounds_closed = Some(1);
    s.expect.verdicts_recorded = Some(4);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.event_kinds["RoundClosed"], 1);
    assert_eq!(o.rounds()[0].transcript.len(), 8);
    assert_eq!(o.recycled.len(), 4);
}

#[test]
fn eight_agents_two_isolated_rooms() {
    let mut s = Scenario::new("eight", 11, cast(8));
    s.expect.rounds_closed = Some(2);
    s.expect.max_concurrent_rooms = Some(2);
    let o = run_scenario(&s).unwrap();
    let seated: Vec<BTreeSet<&str>> = o
        .rounds()
        .iter()
        .map(|r| r.members.iter().map(String::as_str).collect())
        .collect();
    assert!(seated[0].is_disjoint(&seated[1]));
    assert_eq!(seated[0].len() + seated[1].len(), 8);
    for r in o.rounds() {
        assert_eq!(r.transcript.len(), 8);
        assert_eq!(r.verdicts.values().filter(|v| v.is_some()).count(), 4);
    }
    assert_eq!(o.delivery.cross_room_deliveries, 0);
    assert_eq!(o.delivery.identity_leaks, 0);
}

#[test]
fn three_agents_never_form_a_room() {
    let mut s = Scenario::new("three", 1, cast(3));
    s.expect.rounds_closed = Some(0);
    s.expect.rooms_formed = Some(0);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.ended_at, 0);
}

#[test]
fn same_seed_same_log_bytes() {
    let s = Scenario::new("repro", 99, cast(8));
    let a = run(&s, &SimOptions::default()).unwrap();
    let b = run(&s, &SimOptions::default()).unwrap();
    assert_eq!(mask_header(&a.log), mask_header(&b.log));
    let mut other = s.clone();
    other.seed = 100;
    let c = run(&other, &SimOptions::default()).unwrap();
    assert_ne!(mask_header(&a.log), mask_header(&c.log));
}

#[test]
fn several_rounds_per_agent() {
    let mut s = Scenario::new("multi", 3, cast(8));
    s.rounds_per_agent = 3;
    s.expect.rounds_closed = Some(6);
    s.expect.verdicts_recorded = Some(24);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.event_kinds["GuestLeft"], 8);
}

#[test]
fn silent_voter_times_out() {
    let mut agents = cast(4);
    agents[2].verdict = VerdictStrategy::Silent;
    let mut s = Scenario::new("silent", 5, agents);
    s.expect.verdicts_recorded = Some(3);
    s.expect.verdicts_absent = Some(1);
    s.expect.recycled = Some(3);
    let o = run_scenario(&s).unwrap();
    let r = &o.rounds()[0];
    assert_eq!(r.closed_at - r.deadline, 120_000);
}

#[test]
fn disconnect_mid_round_still_closes() {
    let mut s = Scenario::new("drop", 5, cast(4));
    s.faults.push(Fault {
        kind: FaultKind::Disconnect,
        agent: "agent-01".into(),
        at_s: 30.0,
    });
    s.expect.rounds_closed = Some(1);
    s.expect.verdicts_recorded = Some(3);
    s.expect.verdicts_absent = Some(1);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.rounds()[0].closed_at, 180_000);
}

#[test]
fn tampered_token_closes_the_connection() {
    let mut s = Scenario::new("tamper", 5, cast(4));
    s.faults.push(Fault {
        kind: FaultKind::TamperToken,
        agent: "agent-00".into(),
        at_s: 20.0,
    });
    s.expect.auth_failures = Some(1);
    s.expect.rounds_closed = Some(1);
    s.expect.verdicts_absent = Some(1);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.agent_errors["agent-00"], [ErrorCode::AuthFailed]);
}

#[test]
fn replayed_frame_is_dropped() {
    let mut s = Scenario::new("replay", 5, cast(4));
    s.faults.push(Fault {
        kind: FaultKind::Replay,
        agent: "agent-03".into(),
        at_s: 70.0,
    });
    s.expect.dropped_replays = Some(1);
    s.expect.verdicts_recorded = Some(4);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.rounds()[0].transcript.len(), 8);
}

#[test]
fn reconnect_reenters_at_greeting() {
    let mut s = Scenario::new("rejoin", 5, cast(4));
    s.faults.push(Fault {
        kind: FaultKind::Disconnect,
        agent: "agent-02".into(),
        at_s: 1.0,
    });
    s.faults.push(Fault {
        kind: FaultKind::Reconnect,
        agent: "agent-02".into(),
        at_s: 2.0,
    });
    s.expect.rounds_closed = Some(1);
    s.expect.verdicts_recorded = Some(3);
    s.expect.verdicts_absent = Some(1);
    let o = run_scenario(&s).unwrap();
    assert_eq!(o.event_kinds["GuestJoined"], 5);
    assert!(o.agent_errors["agent-02"].is_empty());
}

#[test]
fn virtual_time_limit_is_a_deadlock() {
    let mut s = Scenario::new("limit", 5, cast(4));
    s.max_virtual_time_s = 100.0;
    match run(&s, &SimOptions::default()) {
        Err(SimError::Deadlock { .. }) => {}
        other => panic!("expected deadlock, got {other:?}"),
    }
}

#[test]
fn failed_expectation_names_the_assertion() {
    let mut s = Scenario::new("wrong", 5, cast(4));
    s.expect.rounds_closed = Some(2);
    match run_scenario(&s) {
        Err(SimError::AssertionFailed { name, expected, actual }) => {
            assert_eq!((name.as_str(), expected.as_str(), actual.as_str()), ("rounds_closed", "2", "1"));
        }
        other => panic!("expected assertion failure, got {:?}", other.map(|o| o.rounds_closed)),
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut s = Scenario::new("bad", 5, cast(4));
    s.agents[0].utterances.push(ScriptLine {
        at_s: 200.0,
        text: "late".into(),
    });
    assert!(matches!(s.validate(), Err(ScenarioError::Invalid(_))));
    let mut s = Scenario::new("dup", 5, cast(2));
    s.agents[1].id = s.agents[0].id.clone();
    assert!(s.validate().is_err());
}

#[test]
fn scenario_toml_round_trip() {
    let text = r#"
name = "t"
seed = 4

[hotel]
round_duration_s = 30

[[agent]]
id = "h1"
truth = "human"
background = "medicine"
utterances = [{ at_s = 1, text = "hi" }]
verdict = "labels:A,B"

[[agent]]
id = "a1"
truth = "ai"
model = "m"

[[fault]]
kind = "replay"
agent = "h1"
at_s = 3

[expect]
rounds_closed = 0
"#;
    let s = Scenario::from_toml_str(text).unwrap();
    assert_eq!(s.agents.len(), 2);
    assert_eq!(s.hotel.round_duration_s, 30.0);
    assert_eq!(s.expect.identity_leaks, Some(0));
    let back = Scenario::from_toml_str(&toml::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn name_search_respects_token_boundaries() {
    assert!(contains_name(r#"{"x":"g1"}"#, "g1"));
    assert!(!contains_name("g10", "g1"));
    assert!(!contains_name("xg1", "g1"));
    assert!(contains_name("hi g1.", "g1"));
}
