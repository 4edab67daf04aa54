//! Brute-force recount of session statistics straight from the raw log lines
//! and the roster file, sharing no code with the metrics module.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct Who {
    pub human: bool,
    pub model: Option<String>,
}

#[derive(Debug, Default, Clone)]
pub struct RawRoom {
    pub id: String,
    pub members: Vec<String>,
    pub label_to_agent: BTreeMap<String, String>,
    /// `None` for an absent verdict.
    pub verdicts: BTreeMap<String, Option<BTreeSet<String>>>,
    pub chats: Vec<(String, String)>,
    pub closed: bool,
}

impl RawRoom {
    fn label_of(&self, agent: &str) -> &str {
        self.label_to_agent
            .iter()
            .find(|(_, a)| *a == agent)
            .map(|(l, _)| l.as_str())
            .expect("every member has a label")
    }
}

pub struct RawSession {
    pub rooms: Vec<RawRoom>,
    pub backgrounds: BTreeMap<String, String>,
}

pub fn read_session(path: &Path) -> RawSession {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rooms: Vec<RawRoom> = Vec::new();
    let mut backgrounds = BTreeMap::new();
    let mut pending_labels: HashMap<String, BTreeMap<String, String>> = HashMap::new();
    for line in text.lines().skip(1) {
        let v: Value = serde_json::from_str(line).unwrap();
        let body = &v["body"];
        let s = |k: &str| body[k].as_str().unwrap_or_default().to_owned();
        let room = |rooms: &mut Vec<RawRoom>, id: &str| -> usize {
            rooms.iter().rposition(|r| r.id == id).expect("room formed first")
        };
        match v["kind"].as_str().unwrap() {
            "ProfileRecorded" => {
                backgrounds.insert(s("agent_id"), body["profile"]["background"].as_str().unwrap().to_owned());
            }
            "RoomFormed" => rooms.push(RawRoom {
                id: s("room_id"),
                members: body["members"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|m| m.as_str().unwrap().to_owned())
                    .collect(),
                ..Default::default()
            }),
            "ProxyAssigned" => {
                let labels = body["proxy_of"]
                    .as_object()
                    .unwrap()
                    .iter()
                    .map(|(a, l)| (l.as_str().unwrap().to_owned(), a.clone()))
                    .collect();
                pending_labels.insert(s("room_id"), labels);
            }
            "Chat" => {
                let i = room(&mut rooms, &s("room_id"));
                rooms[i].chats.push((s("from_proxy"), s("text")));
            }
            "VerdictRecorded" => {
                let i = room(&mut rooms, &s("room_id"));
                let picks = body["verdict"]["judged_human"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|l| l.as_str().unwrap().to_owned())
                    .collect();
                rooms[i].verdicts.insert(s("agent_id"), Some(picks));
            }
            "VerdictAbsent" => {
                let i = room(&mut rooms, &s("room_id"));
                rooms[i].verdicts.insert(s("agent_id"), None);
            }
            "RoundClosed" => {
                let i = room(&mut rooms, &s("room_id"));
                let r = &mut rooms[i];
                r.closed = true;
                r.label_to_agent = pending_labels.remove(&r.id).unwrap();
                for (l, a) in body["identities"].as_object().unwrap() {
                    assert_eq!(r.label_to_agent.get(l).map(String::as_str), a.as_str());
                }
            }
            _ => {}
        }
    }
    rooms.retain(|r| r.closed);
    RawSession { rooms, backgrounds }
}

pub fn read_roster(path: &Path) -> BTreeMap<String, Who> {
    let v: toml::Value = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["agent"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            let id = e["agent_id"].as_str().unwrap().to_owned();
            let human = e["truth"].as_str() == Some("human");
            let model = e.get("model_name").and_then(|m| m.as_str()).map(str::to_owned);
            (id, Who { human, model })
        })
        .collect()
}

/// One decision about one target.
#[derive(Debug, Clone)]
pub struct Pair {
    pub target: String,
    pub said_human: bool,
}

/// One judge's whole answer about one room.
#[derive(Debug, Clone)]
pub struct Answer {
    pub judge: String,
    pub pairs: Vec<Pair>,
    /// The set comparison: named labels equal the labels of the human peers.
    pub exact: bool,
}

pub fn answers(rooms: &[RawRoom], who: &BTreeMap<String, Who>, room_size: usize) -> Vec<Answer> {
    let mut out = Vec::new();
    for r in rooms.iter().filter(|r| r.members.len() == room_size) {
        for (judge, v) in &r.verdicts {
            let Some(named) = v else { continue };
            let human_peers: BTreeSet<String> = r
                .members
                .iter()
                .filter(|m| *m != judge && who[*m].human)
                .map(|m| r.label_of(m).to_owned())
                .collect();
            let pairs = r
                .members
                .iter()
                .filter(|m| *m != judge)
                .map(|m| Pair {
                    target: m.clone(),
                    said_human: named.contains(r.label_of(m)),
                })
                .collect();
            out.push(Answer {
                judge: judge.clone(),
                pairs,
                exact: *named == human_peers,
            });
        }
    }
    out
}

pub fn judge_in(cohort: &str, judge: &Who) -> bool {
    match cohort {
        "human" => judge.human,
        "ai" => !judge.human,
        _ => true,
    }
}

pub fn frac(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// `(tp, fp, fn, tn)` with humans (or AIs) as the positive class.
pub fn confusion(answers: &[&Answer], who: &BTreeMap<String, Who>, human_positive: bool) -> [usize; 4] {
    let mut c = [0; 4];
    for a in answers {
        for p in &a.pairs {
            let actual = who[&p.target].human == human_positive;
            let predicted = p.said_human == human_positive;
            let slot = match (predicted, actual) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            c[slot] += 1;
        }
    }
    c
}

pub fn background_group(wire: &str) -> &'static str {
    if wire.starts_with("other:") {
        return "Other";
    }
    match wire {
        "computing_and_digital" => "Computing & Digital Technologies",
        "humanities_and_social" => "Humanities & Social Sciences",
        "medicine" => "Medicine",
        "formal_and_physical" => "Formal & Physical Sciences",
        other => panic!("unknown background {other}"),
    }
}

pub fn author_cohorts(w: &Who) -> Vec<String> {
    if w.human {
        vec!["human".into()]
    } else {
        let mut v = vec!["ai".to_owned()];
        v.extend(w.model.iter().map(|m| format!("model:{m}")));
        v
    }
}

pub struct Words {
    pub dictionary: HashSet<String>,
    pub abbreviations: HashMap<String, String>,
    pub slang: HashSet<String>,
}

impl Words {
    pub fn load(dir: &Path) -> Self {
        let read = |n: &str| std::fs::read_to_string(dir.join(n)).unwrap();
        let content = |t: String| -> Vec<String> {
            t.lines()
                .map(|l| l.trim_end_matches('\r').to_owned())
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
                .collect()
        };
        let dictionary = content(read("dictionary.txt"))
            .into_iter()
            .map(|l| l.split_whitespace().next().unwrap().to_lowercase())
            .collect();
        let abbreviations = content(read("abbreviations.tsv"))
            .into_iter()
            .map(|l| {
                let mut parts = l.splitn(2, '\t');
                let k = parts.next().unwrap().trim().to_lowercase();
                (k, parts.next().unwrap().to_lowercase())
            })
            .collect();
        let slang = content(read("slang.txt")).into_iter().map(|l| l.trim().to_lowercase()).collect();
        Self {
            dictionary,
            abbreviations,
            slang,
        }
    }

    /// True when some checked word of `text` is missing from the dictionary.
    pub fn has_typo(&self, text: &str, labels: &[String]) -> bool {
        let mut words: Vec<String> = vec![String::new()];
        for ch in text.chars() {
            let ch = if ch == '\u{2018}' || ch == '\u{2019}' { '\'' } else { ch };
            if ch.is_alphanumeric() || ch == '\'' {
                words.last_mut().unwrap().extend(ch.to_lowercase());
            } else if !words.last().unwrap().is_empty() {
                words.push(String::new());
            }
        }
        for w in words {
            let w = w.trim_matches('\'');
            if w.is_empty() {
                continue;
            }
            let expanded: Vec<String> = match self.abbreviations.get(w) {
                Some(e) => e.split_whitespace().map(str::to_owned).collect(),
                None => vec![w.to_owned()],
            };
            for t in expanded {
                let skip = self.slang.contains(&t) || labels.contains(&t) || !t.chars().any(char::is_alphabetic);
                if !skip && !self.dictionary.contains(&t) {
                    return true;
                }
            }
        }
        false
    }
}
