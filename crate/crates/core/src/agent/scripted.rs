use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::processor::{ConversationHistory, Pacing, Processor};
use crate::clock::secs_to_millis;
use crate::protocol::{ProxyLabel, Verdict};
use crate::rng::fork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptLine {
    pub at_s: f64,
    pub text: String,
}

/// How a scripted participant fills in the survey.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VerdictStrategy {
    /// Judges everyone an AI.
    #[default]
    None,
    All,
    /// Each option independently with probability one half, seeded per room.
    Random,
    /// These labels, restricted to the offered options.
    Labels(Vec<ProxyLabel>),
    /// Never answers.
    Silent,
}

impl TryFrom<String> for VerdictStrategy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Ok(match s.as_str() {
            "none" => Self::None,
            "all" => Self::All,
            "random" => Self::Random,
            "silent" => Self::Silent,
            other => {
                let list = other
                    .strip_prefix("labels:")
                    .ok_or_else(|| format!("unknown verdict strategy {other:?}"))?;
                let labels = list
                    .split(',')
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(|l| ProxyLabel::parse(l).ok_or_else(|| format!("bad proxy label {l:?}")))
                    .collect::<Result<_, _>>()?;
                Self::Labels(labels)
            }
        })
    }
}

impl From<VerdictStrategy> for String {
    fn from(v: VerdictStrategy) -> String {
        match v {
            VerdictStrategy::None => "none".into(),
            VerdictStrategy::All => "all".into(),
            VerdictStrategy::Random => "random".into(),
            VerdictStrategy::Silent => "silent".into(),
            VerdictStrategy::Labels(ls) => {
                format!("labels:{}", ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Script {
    pub utterances: Vec<ScriptLine>,
    pub verdict: VerdictStrategy,
    pub typo_rate: f64,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("typo_rate must lie in [0, 1], got {0}")]
    TypoRate(f64),
}

impl Script {
    pub fn from_toml_str(text: &str) -> Result<Self, ScriptError> {
        let s: Script = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if !(0.0..=1.0).contains(&self.typo_rate) {
            return Err(ScriptError::TypoRate(self.typo_rate));
        }
        Ok(())
    }
}

/// Plays back a fixed list of utterances at fixed offsets into each round.
#[derive(Debug, Clone)]
pub struct ScriptedProcessor {
    lines: Vec<ScriptLine>,
    strategy: VerdictStrategy,
    typo_rate: f64,
    seed: u64,
}

impl ScriptedProcessor {
    pub fn new(script: Script, seed: u64) -> Self {
        let mut lines = script.utterances;
        lines.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        Self {
            lines,
            strategy: script.verdict,
            typo_rate: script.typo_rate,
            seed,
        }
    }

    /// The n-th line of the script, with a typo injected when the seeded draw
    /// for that index says so.
    pub fn utterance(&self, n: usize) -> Option<String> {
        let text = &self.lines.get(n)?.text;
        if self.typo_rate <= 0.0 {
            return Some(text.clone());
        }
        let mut rng = fork(self.seed, &format!("typo/{n}"));
        if !rng.gen_bool(self.typo_rate) {
            return Some(text.clone());
        }
        Some(inject_typo(text, &mut rng))
    }
}

/// Drops one interior letter of a randomly chosen word of 3+ letters.
pub fn inject_typo(text: &str, rng: &mut impl Rng) -> String {
    let mut ws: Vec<String> = text.split(' ').map(str::to_owned).collect();
    let eligible: Vec<usize> = (0..ws.len())
        .filter(|&i| ws[i].chars().filter(|c| c.is_alphabetic()).count() >= 3)
        .collect();
    let Some(&i) = eligible.choose(rng) else {
        return text.to_owned();
    };
    let letters: Vec<usize> = ws[i]
        .char_indices()
        .filter(|(_, c)| c.is_alphabetic())
        .map(|(b, _)| b)
        .collect();
    let at = letters[rng.gen_range(1..letters.len() - 1)];
    ws[i].remove(at);
    ws.join(" ")
}

impl Processor for ScriptedProcessor {
    fn generate(&mut self, history: &ConversationHistory) -> Option<String> {
        self.utterance(history.own_messages())
    }

    fn verdict(&mut self, history: &ConversationHistory, options: &[ProxyLabel]) -> Option<Verdict> {
        let chosen: Vec<ProxyLabel> = match &self.strategy {
            VerdictStrategy::Silent => return None,
            VerdictStrategy::None => vec![],
            VerdictStrategy::All => options.to_vec(),
            VerdictStrategy::Labels(ls) => ls.iter().filter(|l| options.contains(l)).copied().collect(),
            VerdictStrategy::Random => {
                let mut rng = fork(self.seed, &format!("verdict/{}", history.room_id));
                options.iter().filter(|_| rng.gen_bool(0.5)).copied().collect()
            }
        };
        Some(Verdict::new(chosen))
    }

    fn pacing(&self) -> Pacing {
        Pacing::Script(self.lines.iter().map(|l| secs_to_millis(l.at_s)).collect())
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> ProxyLabel {
        ProxyLabel::parse(s).unwrap()
    }

    fn script(typo_rate: f64) -> Script {
        Script {
            utterances: vec![
                ScriptLine {
                    at_s: 20.0,
                    text: "second".into(),
                },
                ScriptLine {
                    at_s: 5.0,
                    text: "hello there".into(),
                },
            ],
            verdict: VerdictStrategy::Labels(vec![l("B"), l("Z")]),
            typo_rate,
        }
    }

    fn history() -> ConversationHistory {
        ConversationHistory::new("room-0001".into(), l("A"), vec![l("B"), l("C")], 0, 1000)
    }

    #[test]
    fn lines_play_in_time_order() {
        let mut p = ScriptedProcessor::new(script(0.0), 1);
        let mut h = history();
        assert_eq!(p.pacing(), Pacing::Script(vec![5000, 20_000]));
        assert_eq!(p.generate(&h).as_deref(), Some("hello there"));
        h.push(l("A"), "hello there", 1);
        assert_eq!(p.generate(&h).as_deref(), Some("second"));
        h.push(l("A"), "second", 2);
        assert_eq!(p.generate(&h), None);
    }

    #[test]
    fn labels_are_restricted_to_options() {
        let mut p = ScriptedProcessor::new(script(0.0), 1);
        assert_eq!(p.verdict(&history(), &[l("B"), l("C")]), Some(Verdict::new([l("B")])));
    }

    #[test]
    fn typos_are_seeded_and_always_applied_at_rate_one() {
        let p = ScriptedProcessor::new(script(1.0), 3);
        let a = p.utterance(0).unwrap();
        assert_ne!(a, "hello there");
        assert_eq!(a.len(), "hello there".len() - 1);
        assert_eq!(ScriptedProcessor::new(script(1.0), 3).utterance(0).unwrap(), a);
    }

    #[test]
    fn strategy_strings_round_trip() {
        for s in ["none", "all", "random", "silent", "labels:A,C"] {
            let v = VerdictStrategy::try_from(s.to_string()).unwrap();
            assert_eq!(String::from(v), s);
        }
        assert!(VerdictStrategy::try_from("maybe".to_string()).is_err());
    }

    #[test]
    fn script_parses_from_toml() {
        let s = Script::from_toml_str(
            r#"
            verdict = "labels:B"
            typo_rate = 0.1
            [[utterances]]
            at_s = 3
            text = "hi"
            "#,
        )
        .unwrap();
        assert_eq!(s.utterances[0].text, "hi");
        assert!(Script::from_toml_str("typo_rate = 2.0").is_err());
    }
}
