//! Turns a free-text survey reply into a set of proxies judged human.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::protocol::{ProxyLabel, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("could not read a verdict from the reply")]
pub struct UnparseableReply;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Polarity {
    Human,
    Ai,
}

const HUMAN_WORDS: &[&str] = &["human", "humans", "person", "people", "real", "someone", "man", "woman"];
const AI_WORDS: &[&str] = &[
    "ai", "a.i", "ais", "bot", "bots", "robot", "robots", "machine", "machines", "artificial", "llm", "llms",
    "model", "models", "computer", "chatbot", "chatbots", "automated", "fake",
];
const NONE_WORDS: &[&str] = &["none", "nobody", "neither", "noone"];
const CONTRAST_WORDS: &[&str] = &["others", "other", "rest", "else", "remaining"];
const NEGATIONS: &[&str] = &["not", "isn't", "aren't", "wasn't", "weren't", "never", "no"];

fn words(clause: &str) -> Vec<String> {
    clause
        .split(|c: char| c.is_whitespace() || matches!(c, ',' | ':' | '!' | '?' | '(' | ')' | '"' | '*'))
        .map(|w| w.trim_matches(|c: char| c == '\'' || c == '.' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// A standalone proxy label: one letter, uppercase required for `A` and `I`
/// since those double as English words.
fn label_of(word: &str, options: &[ProxyLabel]) -> Option<ProxyLabel> {
    let mut chars = word.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    if matches!(c, 'a' | 'i') {
        return None;
    }
    let l = ProxyLabel::parse(&c.to_ascii_uppercase().to_string())?;
    options.contains(&l).then_some(l)
}

fn clause_polarity(ws: &[String]) -> Option<Polarity> {
    let lower: Vec<String> = ws.iter().map(|w| w.to_lowercase()).collect();
    let mut found = None;
    for (i, w) in lower.iter().enumerate() {
        let base = if HUMAN_WORDS.contains(&w.as_str()) {
            Polarity::Human
        } else if AI_WORDS.contains(&w.as_str()) {
            Polarity::Ai
        } else {
            continue;
        };
        let negated = lower[i.saturating_sub(3)..i].iter().any(|p| NEGATIONS.contains(&p.as_str()));
        let p = match (base, negated) {
            (p, false) => p,
            (Polarity::Human, true) => Polarity::Ai,
            (Polarity::Ai, true) => Polarity::Human,
        };
        match found {
            None => found = Some(p),
            Some(q) if q == p => {}
            Some(_) => return None,
        }
    }
    found
}

fn split_clauses(reply: &str) -> Vec<String> {
    let mut s = reply.replace(['\n', ';', ','], ". ");
    for sep in [" but ", " while ", " whereas ", " however ", " although "] {
        s = s.replace(sep, ". ");
        s = s.replace(&sep.to_uppercase(), ". ");
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = s.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if *c == '.' {
            let next_is_space = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
            if next_is_space {
                out.push(std::mem::take(&mut cur));
                continue;
            }
        }
        cur.push(*c);
    }
    out.push(cur);
    out.into_iter().filter(|c| !c.trim().is_empty()).collect()
}

/// Reads which of `options` the reply calls human.
///
/// Each clause is scanned for labels and for human/AI vocabulary (with
/// negation, so "not human" reads as AI). Clauses naming labels without
/// vocabulary take the polarity of the next clause that has one. A reply made
/// only of labels is a direct answer to "who was human". "None" and "all AI"
/// style replies yield the empty set; "all human" yields every option.
/// Contradictions and replies with nothing usable are unparseable.
pub fn parse_verdict(reply: &str, options: &[ProxyLabel]) -> Result<BTreeSet<ProxyLabel>, UnparseableReply> {
    let clauses: Vec<Vec<String>> = split_clauses(reply).iter().map(|c| words(c)).collect();
    let mut human = BTreeSet::new();
    let mut ai = BTreeSet::new();
    let mut pending: Vec<ProxyLabel> = Vec::new();
    let mut any_polarity = false;
    let mut any_label = false;
    let mut none_hint = false;
    let mut all_hint: Option<Polarity> = None;

    for ws in &clauses {
        let lower: Vec<String> = ws.iter().map(|w| w.to_lowercase()).collect();
        let polarity = clause_polarity(ws);
        any_polarity |= polarity.is_some();
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for (i, w) in ws.iter().enumerate() {
            if let Some(l) = label_of(w, options) {
                any_label = true;
                if i > 0 && lower[i - 1] == "not" {
                    negative.push(l);
                } else {
                    positive.push(l);
                }
            }
        }
        let has_none = lower.iter().any(|w| NONE_WORDS.contains(&w.as_str()))
            || lower.windows(2).any(|p| p[0] == "no" && p[1] == "one");
        let no_humans = lower.windows(2).any(|p| p[0] == "no" && (p[1] == "human" || p[1] == "humans"));
        if no_humans && positive.is_empty() {
            none_hint = true;
        } else if has_none && positive.is_empty() {
            match polarity {
                Some(Polarity::Ai) => all_hint = Some(Polarity::Human),
                _ => none_hint = true,
            }
        }
        if positive.is_empty() && negative.is_empty() && !has_none && !no_humans {
            let all = lower
                .iter()
                .any(|w| matches!(w.as_str(), "all" | "everyone" | "everybody" | "both" | "every"));
            if all {
                if let Some(p) = polarity {
                    all_hint = Some(p);
                }
            }
        }
        match polarity {
            Some(p) => {
                let contrast = lower.iter().any(|w| CONTRAST_WORDS.contains(&w.as_str()));
                let pending_p = if contrast { flip(p) } else { p };
                for l in pending.drain(..) {
                    place(pending_p, l, &mut human, &mut ai);
                }
                for l in positive {
                    place(p, l, &mut human, &mut ai);
                }
                for l in negative {
                    place(flip(p), l, &mut human, &mut ai);
                }
            }
            None => {
                pending.extend(positive);
                for l in negative {
                    ai.insert(l);
                }
            }
        }
    }

    if !pending.is_empty() {
        if any_polarity {
            // Trailing labels after the last verdict clause: ambiguous.
            return Err(UnparseableReply);
        }
        human.extend(pending);
    }
    if !human.is_disjoint(&ai) {
        return Err(UnparseableReply);
    }
    if !any_label {
        return match (none_hint, all_hint) {
            (true, None) => Ok(BTreeSet::new()),
            (false, Some(Polarity::Ai)) => Ok(BTreeSet::new()),
            (false, Some(Polarity::Human)) => Ok(options.iter().copied().collect()),
            _ => Err(UnparseableReply),
        };
    }
    if human.is_empty() && ai.is_empty() {
        return Err(UnparseableReply);
    }
    if let Some(Polarity::Ai) = all_hint {
        if !human.is_empty() && ai.is_empty() {
            // "all are bots except B" style is handled by labels; a bare
            // all-AI claim alongside human labels is contradictory.
            return Err(UnparseableReply);
        }
    }
    Ok(human)
}

fn flip(p: Polarity) -> Polarity {
    match p {
        Polarity::Human => Polarity::Ai,
        Polarity::Ai => Polarity::Human,
    }
}

fn place(p: Polarity, l: ProxyLabel, human: &mut BTreeSet<ProxyLabel>, ai: &mut BTreeSet<ProxyLabel>) {
    match p {
        Polarity::Human => human.insert(l),
        Polarity::Ai => ai.insert(l),
    };
}

/// Wraps [`parse_verdict`]: an unparseable reply becomes an empty verdict
/// carrying the raw text as its comment.
pub fn verdict_from_reply(reply: &str, options: &[ProxyLabel]) -> Verdict {
    match parse_verdict(reply, options) {
        Ok(set) => Verdict::new(set).with_comment(reply.trim()),
        Err(_) => Verdict::new([]).with_comment(format!("unparseable: {}", reply.trim())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(s: &str) -> Vec<ProxyLabel> {
        s.chars().map(|c| ProxyLabel::parse(&c.to_string()).unwrap()).collect()
    }

    fn set(s: &str) -> BTreeSet<ProxyLabel> {
        opts(s).into_iter().collect()
    }

    #[test]
    fn direct_answer() {
        assert_eq!(parse_verdict("I think A and C are human", &opts("ACD")), Ok(set("AC")));
        assert_eq!(parse_verdict("B", &opts("ABD")), Ok(set("B")));
    }

    #[test]
    fn none_of_them() {
        assert_eq!(parse_verdict("none of them", &opts("ABC")), Ok(set("")));
        assert_eq!(parse_verdict("They were all bots.", &opts("ABC")), Ok(set("")));
    }

    #[test]
    fn own_label_is_not_an_option() {
        assert_eq!(parse_verdict("B and D are human", &opts("BC")), Ok(set("B")));
    }

    #[test]
    fn lowercase_article_is_not_a_label() {
        assert_eq!(parse_verdict("c is a human", &opts("ABC")), Ok(set("C")));
    }

    #[test]
    fn contradiction_is_unparseable() {
        assert_eq!(parse_verdict("B is human. B is a bot.", &opts("ABC")), Err(UnparseableReply));
        assert_eq!(parse_verdict("hard to say", &opts("ABC")), Err(UnparseableReply));
    }

    #[test]
    fn unparseable_becomes_empty_with_comment() {
        let v = verdict_from_reply("hmm?", &opts("ABC"));
        assert!(v.judged_human.is_empty());
        assert!(v.comment.unwrap().contains("hmm?"));
    }
}
