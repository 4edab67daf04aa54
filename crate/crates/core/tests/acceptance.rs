//! Acceptance checks for the hotel, agents, store, metrics and simulator.
//! Prints one PASS or FAIL line per check and fails if any check fails.

#[path = "acceptance/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use turinghotel::agent::{DelayPolicy, ScriptLine, VerdictStrategy};
use turinghotel::fsa::{self, ActionRegistry, Runner};
use turinghotel::metrics::{
    compute_report, judgments, resolve_truth, strict_accuracy, MetricsReport, PositiveClass, ReportOptions,
    SpellChecker,
};
use turinghotel::protocol::{ProxyLabel, Verdict};
use turinghotel::rng::fork;
use turinghotel::roster::{Roster, Truth, TruthKind};
use turinghotel::sim::{run, AgentSpec, Fault, FaultKind, ProcessorKind, Scenario, SimOptions, SimOutcome};
use turinghotel::store::{load_session, parse_session, RoundRecord};

type Check = Result<String, String>;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn data_dir() -> PathBuf {
    manifest().join("../../data")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

type Named = (&'static str, fn() -> Check);

fn main() {
    let checks: [Named; 8] = [
        ("baseline law", baseline_law),
        ("metrics oracle equivalence", oracle_equivalence),
        ("engineered-value reproduction", engineered_values),
        ("end-to-end protocol", end_to_end),
        ("timing", timing),
        ("fsa semantics", fsa_semantics),
        ("fault paths", fault_paths),
        ("crash durability", crash_durability),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2} s): {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance checks failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- baseline

fn record(room: usize, members: &[(String, Truth)], verdicts: Vec<Option<Verdict>>) -> RoundRecord {
    let proxy_of: BTreeMap<String, ProxyLabel> = members
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), ProxyLabel::from_index(i).unwrap()))
        .collect();
    RoundRecord {
        room_id: format!("room-{room:06}"),
        members: members.iter().map(|(id, _)| id.clone()).collect(),
        identities: proxy_of.iter().map(|(a, l)| (*l, a.clone())).collect(),
        proxy_of,
        started_at: 0,
        deadline: 180_000,
        closed_at: 180_000,
        transcript: Vec::new(),
        verdicts: members.iter().map(|(id, _)| id.clone()).zip(verdicts).collect(),
        truth: members.iter().map(|(id, t)| (id.clone(), Some(t.clone()))).collect(),
        profiles: BTreeMap::new(),
    }
}

fn baseline_law() -> Check {
    let started = Instant::now();
    let mut rng = fork(2024, "acceptance/baseline");
    let rooms = 25_000;
    let mut rounds = Vec::with_capacity(rooms);
    for r in 0..rooms {
        let members: Vec<(String, Truth)> = (0..4)
            .map(|i| {
                let t = if rng.gen_bool(0.5) { Truth::Human } else { Truth::ai("m") };
                (format!("r{r}-{i}"), t)
            })
            .collect();
        let verdicts = (0..4)
            .map(|judge| {
                let picks = (0..4).filter(|&t| t != judge && rng.gen_bool(0.5));
                Some(Verdict::new(picks.map(|t| ProxyLabel::from_index(t).unwrap())))
            })
            .collect();
        rounds.push(record(r, &members, verdicts));
    }
    let truth = resolve_truth(&rounds, None).map_err(|e| e.to_string())?;
    let js = judgments(&rounds, &truth).map_err(|e| e.to_string())?;
    let n = js.len();
    let acc = strict_accuracy(&js).ok_or("no judgments")?;
    let sigma = (0.125f64 * 0.875 / n as f64).sqrt();
    let secs = started.elapsed().as_secs_f64();
    ensure(n >= 100_000, || format!("only {n} judgments"))?;
    ensure((acc - 0.125).abs() <= 0.01, || format!("accuracy {acc} outside 0.125 +- 0.01"))?;
    ensure((acc - 0.125).abs() <= 3.0 * sigma, || format!("accuracy {acc} outside 3 sigma ({sigma})"))?;
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{n} judgments, strict accuracy {acc:.4} (3 sigma = {:.4})", 3.0 * sigma))
}

// ---------------------------------------------------------- metrics oracle

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

struct Diff(Vec<String>);

impl Diff {
    fn num(&mut self, what: impl FnOnce() -> String, got: Option<f64>, want: Option<f64>) {
        if !same(got, want) {
            self.0.push(format!("{}: report {got:?}, oracle {want:?}", what()));
        }
    }

    fn count(&mut self, what: impl FnOnce() -> String, got: u64, want: usize) {
        if got != want as u64 {
            self.0.push(format!("{}: report {got}, oracle {want}", what()));
        }
    }
}

fn recount(name: &str, report: &MetricsReport, session: &Path, roster: &Path, words: &oracle::Words) -> Vec<String> {
    use oracle::*;
    let raw = read_session(session);
    let who = read_roster(roster);
    let all = answers(&raw.rooms, &who, report.room_size);
    let mut d = Diff(Vec::new());

    d.count(|| format!("{name} rounds"), report.rounds, raw.rooms.len());
    d.count(|| format!("{name} judgments"), report.judgments, all.len());
    let absent = raw.rooms.iter().flat_map(|r| r.verdicts.values()).filter(|v| v.is_none()).count();
    d.count(|| format!("{name} absent"), report.absent_verdicts, absent);

    for cohort in ["human", "ai", "all"] {
        let sel: Vec<&Answer> = all.iter().filter(|a| judge_in(cohort, &who[&a.judge])).collect();
        let Some(c) = report.cohort(cohort) else {
            d.0.push(format!("{name}: cohort {cohort} missing"));
            continue;
        };
        d.count(|| format!("{name} {cohort} n"), c.n_judgments, sel.len());
        d.num(
            || format!("{name} {cohort} strict"),
            c.strict_accuracy,
            frac(sel.iter().filter(|a| a.exact).count(), sel.len()),
        );
        for (pr, human_positive) in [(&c.human_positive, true), (&c.ai_positive, false)] {
            let [tp, fp, fn_, tn] = confusion(&sel, &who, human_positive);
            let tag = if human_positive { "human+" } else { "ai+" };
            d.count(|| format!("{name} {cohort} {tag} tp"), pr.confusion.tp, tp);
            d.count(|| format!("{name} {cohort} {tag} fp"), pr.confusion.fp, fp);
            d.count(|| format!("{name} {cohort} {tag} fn"), pr.confusion.fn_, fn_);
            d.count(|| format!("{name} {cohort} {tag} tn"), pr.confusion.tn, tn);
            d.num(|| format!("{name} {cohort} {tag} precision"), pr.precision, frac(tp, tp + fp));
            d.num(|| format!("{name} {cohort} {tag} recall"), pr.recall, frac(tp, tp + fn_));
        }

        let models: BTreeSet<&str> = who.values().filter_map(|w| w.model.as_deref()).collect();
        let got = report.accuracy_by_llm.get(cohort).cloned().unwrap_or_default();
        let mut seen = 0;
        for m in models {
            let targets: Vec<&Pair> = sel
                .iter()
                .flat_map(|a| &a.pairs)
                .filter(|p| who[&p.target].model.as_deref() == Some(m))
                .collect();
            let rooms: Vec<&&Answer> = sel
                .iter()
                .filter(|a| a.pairs.iter().any(|p| who[&p.target].model.as_deref() == Some(m)))
                .collect();
            if targets.is_empty() {
                continue;
            }
            seen += 1;
            let Some(g) = got.get(m) else {
                d.0.push(format!("{name} {cohort} model {m} missing"));
                continue;
            };
            d.count(|| format!("{name} {cohort} {m} targets"), g.n_targets, targets.len());
            d.num(
                || format!("{name} {cohort} {m} per-target"),
                Some(g.per_target),
                frac(targets.iter().filter(|p| !p.said_human).count(), targets.len()),
            );
            d.count(|| format!("{name} {cohort} {m} judgments"), g.n_judgments, rooms.len());
            d.num(
                || format!("{name} {cohort} {m} per-room"),
                Some(g.per_room_strict),
                frac(rooms.iter().filter(|a| a.exact).count(), rooms.len()),
            );
        }
        d.count(|| format!("{name} {cohort} model rows"), got.len() as u64, seen);
    }

    let mut groups: BTreeMap<&str, (BTreeSet<&str>, usize, usize)> = BTreeMap::new();
    for a in all.iter().filter(|a| who[&a.judge].human) {
        if let Some(bg) = raw.backgrounds.get(&a.judge) {
            let g = groups.entry(background_group(bg)).or_default();
            g.0.insert(&a.judge);
            g.1 += 1;
            g.2 += a.exact as usize;
        }
    }
    d.count(|| format!("{name} background rows"), report.accuracy_by_background.len() as u64, groups.len());
    for (g, (judges, n, ok)) in &groups {
        match report.accuracy_by_background.get(*g) {
            Some(b) => {
                d.count(|| format!("{name} {g} judges"), b.n, judges.len());
                d.count(|| format!("{name} {g} judgments"), b.n_judgments, *n);
                d.num(|| format!("{name} {g} accuracy"), Some(b.accuracy), frac(*ok, *n));
            }
            None => d.0.push(format!("{name} background {g} missing")),
        }
    }

    // words, spelling and message share, per author cohort
    let mut lengths: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut typos: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in &raw.rooms {
        let labels: Vec<String> = r.label_to_agent.keys().map(|l| l.to_lowercase()).collect();
        for (label, text) in &r.chats {
            let author = &who[&r.label_to_agent[label]];
            let n = text.split_whitespace().count();
            let bad = words.has_typo(text, &labels);
            for c in author_cohorts(author) {
                lengths.entry(c.clone()).or_default().push(n);
                let t = typos.entry(c).or_default();
                t.0 += 1;
                t.1 += bad as usize;
            }
        }
    }
    d.count(|| format!("{name} word cohorts"), report.words_per_message.len() as u64, lengths.len());
    for (c, ns) in &lengths {
        let Some(w) = report.words_per_message.get(c) else {
            d.0.push(format!("{name} words {c} missing"));
            continue;
        };
        let mean = ns.iter().sum::<usize>() as f64 / ns.len() as f64;
        let var = ns.iter().map(|&n| (n as f64 - mean) * (n as f64 - mean)).sum::<f64>() / ns.len() as f64;
        d.count(|| format!("{name} {c} messages"), w.messages, ns.len());
        d.num(|| format!("{name} {c} mean words"), Some(w.mean), Some(mean));
        d.num(|| format!("{name} {c} std words"), Some(w.std), Some(var.sqrt()));
        for (k, v) in &w.histogram {
            d.count(|| format!("{name} {c} histogram {k}"), *v, ns.iter().filter(|n| *n == k).count());
        }
        d.count(|| format!("{name} {c} histogram mass"), w.histogram.values().sum(), ns.len());
        let (n, bad) = typos[c];
        match report.spelling_error_rate.get(c) {
            Some(s) => {
                d.count(|| format!("{name} {c} spelling flagged"), s.flagged, bad);
                d.num(|| format!("{name} {c} spelling rate"), s.rate, frac(bad, n));
            }
            None => d.0.push(format!("{name} spelling {c} missing")),
        }
    }

    let mut seats: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut coarse: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &raw.rooms {
        if r.chats.is_empty() {
            continue;
        }
        for m in &r.members {
            let sent = r.chats.iter().filter(|(l, _)| &r.label_to_agent[l] == m).count();
            let w = &who[m];
            let fine = match &w.model {
                Some(model) if !w.human => format!("model:{model}"),
                _ => "human".into(),
            };
            let e = seats.entry(fine).or_default();
            e.0 += 1;
            e.1 += sent;
            let e = coarse.entry(if w.human { "human" } else { "ai" }).or_default();
            e.0 += 1;
            e.1 += sent;
        }
    }
    let share = &report.message_share;
    for (table, want) in [
        (&share.per_capita, coarse.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>()),
        (&share.per_model_per_capita, seats.clone()),
    ] {
        let total: f64 = want.values().map(|(m, n)| *n as f64 / *m as f64).sum();
        d.count(|| format!("{name} per-capita rows"), table.len() as u64, want.len());
        for (k, (members, msgs)) in &want {
            match table.get(k) {
                Some(p) => {
                    d.count(|| format!("{name} {k} seats"), p.members, *members);
                    d.count(|| format!("{name} {k} messages"), p.messages, *msgs);
                    d.num(|| format!("{name} {k} per capita"), p.per_capita, frac(*msgs, *members));
                    d.num(
                        || format!("{name} {k} share"),
                        p.share,
                        Some(*msgs as f64 / *members as f64 / total),
                    );
                }
                None => d.0.push(format!("{name} per-capita {k} missing")),
            }
        }
    }
    let rate = |k: &str| coarse.get(k).map(|(m, n)| *n as f64 / *m as f64);
    let ratio = match (rate("ai"), rate("human")) {
        (Some(a), Some(h)) if h > 0.0 => Some(a / h),
        _ => None,
    };
    d.num(|| format!("{name} ai/human ratio"), share.ai_to_human_ratio, ratio);
    for (row, r) in share.rooms.iter().zip(&raw.rooms) {
        let human_msgs = r.chats.iter().filter(|(l, _)| who[&r.label_to_agent[l]].human).count();
        d.count(|| format!("{name} {} human messages", r.id), row.human_messages, human_msgs);
        d.num(
            || format!("{name} {} human share", r.id),
            row.human_share,
            frac(human_msgs, r.chats.len()),
        );
    }
    d.0
}

fn oracle_equivalence() -> Check {
    let dir = manifest().join("tests/fixtures/sessions");
    let checker = SpellChecker::load_dir(data_dir()).map_err(|e| e.to_string())?;
    let words = oracle::Words::load(&data_dir());
    let mut figures = 0;
    let mut mismatches = Vec::new();
    for (name, room_size) in [("two-rounds", 4), ("five-seats", 5), ("three-rooms", 4)] {
        let session = dir.join(format!("{name}.jsonl"));
        let roster_path = dir.join(format!("{name}.roster.toml"));
        let s = load_session(&session).map_err(|e| e.to_string())?;
        let roster = Roster::load(&roster_path).map_err(|e| e.to_string())?;
        for positive_class in [PositiveClass::Human, PositiveClass::Ai] {
            let opts = ReportOptions {
                room_size,
                positive_class,
            };
            let report = compute_report(&s.rounds, Some(&roster), &checker, &opts).map_err(|e| e.to_string())?;
            ensure(report.judgments > 0, || format!("{name}: no judgments"))?;
            mismatches.extend(recount(name, &report, &session, &roster_path, &words));
            let default = report.cohort("all").unwrap();
            let oriented = if positive_class == PositiveClass::Human {
                &default.human_positive
            } else {
                &default.ai_positive
            };
            if !same(default.precision, oriented.precision) || !same(default.recall, oriented.recall) {
                mismatches.push(format!("{name}: default orientation is not {positive_class:?}"));
            }
            figures += serde_json::to_string(&report).unwrap().matches(':').count();
        }
    }
    if mismatches.is_empty() {
        Ok(format!("3 fixtures x 2 orientations, ~{figures} report fields recounted"))
    } else {
        Err(format!("{} mismatches, first: {}", mismatches.len(), mismatches[..mismatches.len().min(5)].join("; ")))
    }
}

// ------------------------------------------------------- engineered values

fn engineered_values() -> Check {
    let lab = |i: usize| ProxyLabel::from_index(i).unwrap();
    let ai = |i: usize| Truth::ai(["m-a", "m-b", "m-c"][i % 3]);
    let mut rounds = Vec::new();
    // Two humans (seats 0, 1) and two AIs per room: each human judge either
    // names the other human only, or names one AI and misses the human.
    for r in 0..250 {
        let members: Vec<(String, Truth)> = vec![
            (format!("h{r}a"), Truth::Human),
            (format!("h{r}b"), Truth::Human),
            (format!("a{r}a"), ai(r)),
            (format!("a{r}b"), ai(r + 1)),
        ];
        let pick = |judge: usize, n: usize| {
            let other = 1 - judge;
            if n < 329 {
                Verdict::new([lab(other)])
            } else {
                Verdict::new([lab(2 + n % 2)])
            }
        };
        let verdicts = vec![Some(pick(0, 2 * r)), Some(pick(1, 2 * r + 1)), None, None];
        rounds.push(record(r, &members, verdicts));
    }
    // One human (seat 0) with three AIs: 392 name nobody, 58 name one AI, 50 name two.
    for r in 0..500 {
        let members: Vec<(String, Truth)> = vec![
            (format!("s{r}"), Truth::Human),
            (format!("b{r}a"), ai(r)),
            (format!("b{r}b"), ai(r + 1)),
            (format!("b{r}c"), ai(r + 2)),
        ];
        let v = match r {
            0..=391 => Verdict::new([]),
            392..=449 => Verdict::new([lab(1 + r % 3)]),
            _ => Verdict::new([lab(1), lab(2 + r % 2)]),
        };
        rounds.push(record(250 + r, &members, vec![Some(v), None, None, None]));
    }
    let checker = SpellChecker::from_strs("hello\n", "", "").unwrap();
    let report = compute_report(&rounds, None, &checker, &ReportOptions::default()).map_err(|e| e.to_string())?;
    let h = report.cohort("human").ok_or("no human cohort")?;
    let (acc, p, rc) = (h.strict_accuracy, h.human_positive.precision, h.human_positive.recall);
    let close = |x: Option<f64>, want: f64| x.is_some_and(|x| (x - want).abs() < 1e-12);
    ensure(h.n_judgments == 1000, || format!("{} human judgments", h.n_judgments))?;
    ensure(close(acc, 0.721) && close(p, 0.5) && close(rc, 0.658), || {
        format!("measured accuracy {acc:?}, precision {p:?}, recall {rc:?}")
    })?;
    Ok(format!(
        "1000 human judgments: strict accuracy {:.3}, precision {:.3}, recall {:.3}",
        acc.unwrap(),
        p.unwrap(),
        rc.unwrap()
    ))
}

// ------------------------------------------------------------ end to end

fn eight_cast() -> Vec<AgentSpec> {
    let names = ["Alice", "Bruno", "Chiara", "Dario", "Elena", "Fabio", "Giulia", "Hugo"];
    let lines = [
        "hi everyone, how is it going",
        "i am at home with my cat",
        "what do you all do for work",
        "pizza or pasta, pick one",
        "this is a strange way to spend an afternoon",
    ];
    (0..8)
        .map(|i| {
            let truth = if i < 4 { TruthKind::Human } else { TruthKind::Ai };
            let mut a = AgentSpec::new(format!("agent-{}", i + 1), truth);
            a.display_name = Some(names[i].into());
            if truth == TruthKind::Ai {
                a.model = Some(["model-a", "model-b"][i % 2].into());
            }
            a.utterances = (0..3)
                .map(|k| ScriptLine {
                    at_s: 10.0 + 50.0 * k as f64 + i as f64,
                    text: lines[(i + k) % lines.len()].into(),
                })
                .collect();
            a.verdict = VerdictStrategy::Random;
            a
        })
        .collect()
}

fn end_to_end() -> Check {
    let started = Instant::now();
    let mut frames = 0;
    for seed in 0..100 {
        let s = Scenario::new("e2e", seed, eight_cast());
        let o = run(&s, &SimOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        let sizes: Vec<usize> = o.rounds().iter().map(|r| r.members.len()).collect();
        ensure(o.rooms_formed == 2 && sizes == [4, 4], || format!("seed {seed}: rooms {sizes:?}"))?;
        let seated: BTreeSet<&String> = o.rounds().iter().flat_map(|r| &r.members).collect();
        ensure(seated.len() == 8, || format!("seed {seed}: {} distinct members", seated.len()))?;
        ensure(o.delivery.cross_room_deliveries == 0, || {
            format!("seed {seed}: {} cross-room deliveries", o.delivery.cross_room_deliveries)
        })?;
        ensure(o.delivery.identity_leaks == 0, || {
            format!("seed {seed}: identity leaks {:?}", o.delivery.leak_samples)
        })?;
        ensure(o.verdicts_recorded == 8 && o.verdicts_absent == 0, || {
            format!("seed {seed}: {} verdicts, {} absent", o.verdicts_recorded, o.verdicts_absent)
        })?;
        let recycled: BTreeSet<&String> = o.recycled.iter().collect();
        ensure(o.recycled.len() == 8 && recycled.len() == 8, || {
            format!("seed {seed}: recycled {:?}", o.recycled)
        })?;
        frames += o.delivery.frames_to_agents;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("100 runs took {secs:.2} s"))?;
    Ok(format!("100 seeds, 2 rooms of 4 each, {frames} frames grepped, 0 leaks, 0 cross-room"))
}

// ----------------------------------------------------------------- timing

fn timing() -> Check {
    let mut prompts = 0;
    for seed in [1, 7, 42] {
        let o = run(&Scenario::new("timing", seed, eight_cast()), &SimOptions::default()).map_err(|e| e.to_string())?;
        let mut starts = BTreeMap::new();
        for line in o.log_text().lines().skip(1) {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let room = v["body"]["room_id"].as_str().unwrap_or_default().to_owned();
            match v["kind"].as_str() {
                Some("RoomFormed") => {
                    starts.insert(room, v["body"]["started_at"].as_u64().unwrap());
                }
                Some("SurveyPrompted") => {
                    let at = v["at"].as_u64().unwrap();
                    ensure(at - starts[&room] == 180_000, || {
                        format!("seed {seed}: survey at +{} ms in {room}", at - starts[&room])
                    })?;
                    prompts += 1;
                }
                _ => {}
            }
        }
    }
    ensure(prompts == 24, || format!("{prompts} survey prompts"))?;

    let mut rng = fork(5, "acceptance/delay");
    let mut spans = Vec::new();
    for (w, a) in [(0.0, 3.0), (2.0, 5.0), (1.5, 0.5), (4.0, 0.0)] {
        let p = DelayPolicy::new(w, a);
        let draws: Vec<u64> = (0..10_000).map(|_| p.sample(&mut rng)).collect();
        let (lo, hi) = (*draws.iter().min().unwrap(), *draws.iter().max().unwrap());
        let (wm, am) = ((w * 1000.0) as u64, ((w + a) * 1000.0) as u64);
        ensure(lo >= wm && hi <= am, || format!("({w}, {a}): draws span [{lo}, {hi}] ms"))?;
        ensure(lo - wm < 100 && am - hi < 100, || {
            format!("({w}, {a}): endpoints not reached, span [{lo}, {hi}] ms")
        })?;
        spans.push(format!("[{lo},{hi}]"));
    }
    Ok(format!("24 survey prompts at exactly +180 s; delay spans (ms) {}", spans.join(" ")))
}

// -------------------------------------------------------------------- fsa

#[derive(Default)]
struct Table {
    outcomes: BTreeMap<&'static str, Vec<bool>>,
    attempts: Vec<String>,
}

const PARTICIPANT_ACTIONS: [&str; 11] = [
    "join",
    "receive_welcome",
    "fill_profile",
    "enter_hall",
    "move_to_room",
    "leave",
    "do_gen",
    "ask_gen",
    "receive_survey",
    "answer_survey",
    "receive_result",
];

const GOLDEN: &str = "\
outside join false -> outside
outside join true -> joining
joining receive_welcome true -> greeting
greeting fill_profile false -> greeting
greeting fill_profile true -> profiled
profiled enter_hall true -> hall
hall leave false -> hall
hall move_to_room true -> chatting
chatting ask_gen false -> chatting
chatting do_gen true -> chatting
chatting ask_gen true -> chatting
chatting do_gen skip -> chatting
chatting receive_survey true -> surveying
surveying answer_survey false -> surveying
surveying answer_survey true -> voted
voted receive_result true -> hall
hall leave true -> left
";

fn fsa_semantics() -> Check {
    let behavior = fsa::participant_behavior();
    let mut reg: ActionRegistry<Table, String> = ActionRegistry::new();
    for name in PARTICIPANT_ACTIONS {
        reg.register(name, move |t: &mut Table, ev: Option<&String>| {
            // A triggered action only looks at the interaction named after it.
            if ev.is_some_and(|e| e != name) {
                t.attempts.push(format!("{name} skip"));
                return Ok(false);
            }
            let q = t.outcomes.get_mut(name).ok_or(format!("no outcome left for {name}"))?;
            let ok = if q.is_empty() { false } else { q.remove(0) };
            t.attempts.push(format!("{name} {ok}"));
            Ok(ok)
        });
    }
    reg.bind(&behavior).map_err(|e| e.to_string())?;
    let mut table = Table::default();
    for (name, outs) in [
        ("join", vec![false, true]),
        ("receive_welcome", vec![true]),
        ("fill_profile", vec![false, true]),
        ("enter_hall", vec![true]),
        ("move_to_room", vec![true]),
        ("leave", vec![false, true]),
        ("do_gen", vec![true]),
        ("ask_gen", vec![false, true]),
        ("receive_survey", vec![true]),
        ("answer_survey", vec![false, true]),
        ("receive_result", vec![true]),
    ] {
        table.outcomes.insert(name, outs);
    }
    enum Op {
        Step,
        Event(&'static str),
    }
    use Op::*;
    let script = [
        Step,
        Step,
        Event("receive_welcome"),
        Event("fill_profile"),
        Event("fill_profile"),
        Event("enter_hall"),
        Step,
        Event("move_to_room"),
        Step,
        Event("do_gen"),
        Step,
        Event("receive_survey"),
        Step,
        Step,
        Event("receive_result"),
        Step,
    ];
    let mut runner = Runner::new(behavior);
    let mut trace = String::new();
    let mut transitions_on_failure = 0;
    for op in script {
        let before = runner.state.clone();
        let mark = table.attempts.len();
        let moved = match op {
            Step => runner.step(&reg, &mut table),
            Event(e) => runner.handle(&reg, &mut table, &e.to_string()),
        }
        .map_err(|e| e.to_string())?;
        let tried = &table.attempts[mark..];
        if moved && tried.last().is_some_and(|a| !a.ends_with("true")) {
            transitions_on_failure += 1;
        }
        for (i, a) in tried.iter().enumerate() {
            let last = i + 1 == tried.len();
            let to = if last { runner.state.as_str() } else { before.as_str() };
            trace.push_str(&format!("{before} {a} -> {to}\n"));
        }
    }
    ensure(transitions_on_failure == 0, || "a transition followed a failed action".into())?;
    if trace != GOLDEN {
        let diff: Vec<String> = trace
            .lines()
            .zip(GOLDEN.lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("got {a:?} want {b:?}"))
            .collect();
        return Err(format!("trace differs: {}", diff.join("; ")));
    }
    let visited = runner.visited_states().join(">");
    Ok(format!("{} attempts match the golden trace; path {visited}", GOLDEN.lines().count()))
}

// ------------------------------------------------------------ fault paths

fn four(seed: u64) -> Scenario {
    let mut cast = eight_cast();
    cast.truncate(2);
    cast.extend(eight_cast().into_iter().skip(4).take(2));
    Scenario::new("fault", seed, cast)
}

/// Answers every request with a server error and counts them.
fn failing_endpoint() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let msg = r#"{"error":"model overloaded"}"#;
            let _ = write!(
                stream,
                "HTTP/1.1 503 Service Unavailable\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{msg}",
                msg.len()
            );
        }
    });
    (url, hits)
}

fn timed(s: &Scenario) -> Result<(SimOutcome, f64), String> {
    let t = Instant::now();
    let o = run(s, &SimOptions::default()).map_err(|e| format!("{}: {e}", s.name))?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 2.0, || format!("{}: took {secs:.2} s", s.name))?;
    Ok((o, secs))
}

fn fault_paths() -> Check {
    let mut report = Vec::new();

    let mut s = four(31);
    s.name = "survey-timeout".into();
    s.agents[1].verdict = VerdictStrategy::Silent;
    let (o, secs) = timed(&s)?;
    let r = &o.rounds()[0];
    ensure(o.verdicts_absent == 1 && o.verdicts_recorded == 3, || {
        format!("survey timeout: {} recorded, {} absent", o.verdicts_recorded, o.verdicts_absent)
    })?;
    ensure(r.closed_at - r.deadline == 120_000, || format!("closed {} ms after the deadline", r.closed_at - r.deadline))?;
    ensure(!o.recycled.contains(&s.agents[1].id) && o.recycled.len() == 3, || format!("recycled {:?}", o.recycled))?;
    report.push(format!("timeout {secs:.2}s"));

    let mut s = four(32);
    s.name = "disconnect".into();
    s.faults.push(Fault {
        kind: FaultKind::Disconnect,
        agent: s.agents[2].id.clone(),
        at_s: 45.0,
    });
    let (o, secs) = timed(&s)?;
    let r = &o.rounds()[0];
    ensure(o.rounds_closed == 1 && r.closed_at == r.deadline, || "disconnect: round did not close on time".into())?;
    ensure(r.verdicts.get(&s.agents[2].id) == Some(&None) && o.verdicts_recorded == 3, || {
        format!("disconnect: verdicts {:?}", r.verdicts)
    })?;
    ensure(r.members.len() == 4, || "disconnect: room was backfilled".into())?;
    report.push(format!("disconnect {secs:.2}s"));

    let (url, hits) = failing_endpoint();
    let mut s = four(33);
    s.name = "llm-outage".into();
    let llm = &mut s.agents[3];
    llm.processor = ProcessorKind::Llm;
    llm.endpoint = Some(url);
    llm.system_prompt = Some("You are chatting with strangers.".into());
    llm.wait_s = 1.0;
    llm.add_random_up_to = 2.0;
    let llm_id = llm.id.clone();
    let (o, secs) = timed(&s)?;
    let r = &o.rounds()[0];
    let label = r.proxy_of[&llm_id];
    let spoke = r.transcript.iter().filter(|e| e.from_proxy == label).count();
    ensure(o.llm_errors >= 2 && hits.load(Ordering::SeqCst) as u64 == o.llm_errors, || {
        format!("llm outage: {} errors, {} stub hits", o.llm_errors, hits.load(Ordering::SeqCst))
    })?;
    ensure(spoke == 0 && o.rounds_closed == 1, || format!("llm outage: agent sent {spoke} messages"))?;
    ensure(r.verdicts[&llm_id].as_ref().is_some_and(|v| v.judged_human.is_empty()), || {
        format!("llm outage: verdict {:?}", r.verdicts[&llm_id])
    })?;
    report.push(format!("llm-outage {secs:.2}s ({} stub errors)", o.llm_errors));

    let mut s = four(34);
    s.name = "tampered-token".into();
    s.faults.push(Fault {
        kind: FaultKind::TamperToken,
        agent: s.agents[0].id.clone(),
        at_s: 20.0,
    });
    let (o, secs) = timed(&s)?;
    ensure(o.hotel.auth_failures == 1, || format!("tampered: {} auth failures", o.hotel.auth_failures))?;
    ensure(
        o.agent_errors[&s.agents[0].id] == [turinghotel::protocol::ErrorCode::AuthFailed],
        || format!("tampered: agent saw {:?}", o.agent_errors[&s.agents[0].id]),
    )?;
    ensure(o.rounds()[0].verdicts[&s.agents[0].id].is_none(), || "tampered: connection stayed open".into())?;
    report.push(format!("tampered {secs:.2}s"));

    let mut s = four(35);
    s.name = "replay".into();
    s.faults.push(Fault {
        kind: FaultKind::Replay,
        agent: s.agents[1].id.clone(),
        at_s: 75.0,
    });
    let (o, secs) = timed(&s)?;
    let base = run(&four(35), &SimOptions::default()).map_err(|e| e.to_string())?;
    ensure(o.hotel.dropped_replays == 1, || format!("replay: {} dropped", o.hotel.dropped_replays))?;
    ensure(o.rounds()[0].transcript == base.rounds()[0].transcript, || "replay: transcript changed".into())?;
    ensure(o.verdicts_recorded == 4, || "replay: verdict lost".into())?;
    report.push(format!("replay {secs:.2}s"));

    Ok(report.join(", "))
}

// -------------------------------------------------------- crash durability

fn crash_run(scenario: &Path, n: usize, log: &Path) -> Result<(usize, RoundsCheck), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(["run", "--scenario"])
        .arg(scenario)
        .arg("--log")
        .arg(log)
        .args(["--abort-after-rounds", &n.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(!out.status.success(), || "process exited cleanly instead of dying".into())?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    let closed: usize = stderr
        .lines()
        .find_map(|l| l.strip_prefix("aborting with ")?.strip_suffix(" closed rounds")?.parse().ok())
        .ok_or_else(|| format!("no abort notice in {stderr:?}"))?;
    let session = load_session(log).map_err(|e| e.to_string())?;
    let sc = Scenario::load(scenario).map_err(|e| e.to_string())?;
    let full = run(&sc, &SimOptions::default()).map_err(|e| e.to_string())?;
    let prefix = &full.rounds()[..closed.min(full.rounds().len())];
    Ok((
        closed,
        RoundsCheck {
            reloaded: session.rounds.len(),
            corrupt: session.corrupt.len(),
            matches_prefix: session.rounds == prefix,
        },
    ))
}

struct RoundsCheck {
    reloaded: usize,
    corrupt: usize,
    matches_prefix: bool,
}

fn crash_durability() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = manifest().join("tests/fixtures/sessions");
    let shape = manifest().join("../../scenarios/full-cast.scn");
    let mut notes = Vec::new();
    for (scenario, n) in [(fixtures.join("two-rounds.scn"), 1), (shape.clone(), 5), (shape, 12)] {
        let log = dir.path().join(format!("crash-{n}.jsonl"));
        let (closed, c) = crash_run(&scenario, n, &log)?;
        ensure(closed >= n, || format!("aborted after {closed} < {n} rounds"))?;
        ensure(c.reloaded == closed && c.corrupt == 0, || {
            format!("killed after {closed} rounds, reloaded {} ({} corrupt lines)", c.reloaded, c.corrupt)
        })?;
        ensure(c.matches_prefix, || format!("reloaded rounds differ from the uninterrupted run (n = {closed})"))?;
        notes.push(closed.to_string());
    }
    let text = std::fs::read(dir.path().join("crash-1.jsonl")).map_err(|e| e.to_string())?;
    let again = parse_session(&text[..]).map_err(|e| e.to_string())?;
    ensure(again.partial.len() <= 1, || "more than one dangling round".into())?;
    Ok(format!("killed after {} closed rounds; every reload recovered exactly that many", notes.join(", ")))
}
