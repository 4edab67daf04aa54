//! Statistics over closed rounds: identification accuracy, precision and
//! recall, breakdowns by model and by background, message length, message
//! share and spelling error rates.
//!
//! Everything here is a pure function of [`RoundRecord`]s and ground truth.
//! Numbers are kept at full precision; rounding happens in [`emit`].

mod emit;
mod spelling;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::protocol::ProfileForm;
use crate::roster::{Roster, Truth};
use crate::store::RoundRecord;

pub use emit::{emit_csv, emit_json, fmt_num, render_json, EmitError};
pub use spelling::{SpellChecker, SpellingError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground truth for agent {0:?}")]
    MissingTruth(String),
    #[error("artificial agent {0:?} has no model name")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PositiveClass {
    Human,
    Ai,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TargetDecision {
    pub target_id: String,
    pub target_truth: Truth,
    pub predicted_human: bool,
}

/// One judge's answer about the other members of one room.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Judgment {
    pub judge_id: String,
    pub judge_truth: Truth,
    pub room_id: String,
    pub decisions: Vec<TargetDecision>,
    pub strict_correct: bool,
}

fn truth_of(id: &str, record: &RoundRecord, roster: Option<&Roster>) -> Result<Truth, MetricsError> {
    let t = match roster {
        Some(r) => r.label(id).cloned(),
        None => record.truth.get(id).cloned().flatten(),
    };
    t.ok_or_else(|| MetricsError::MissingTruth(id.to_owned()))
}

/// Ground truth for every member of every round. With a roster, the roster
/// wins over labels stored in the records.
pub fn resolve_truth(rounds: &[RoundRecord], roster: Option<&Roster>) -> Result<BTreeMap<String, Truth>, MetricsError> {
    let mut out = BTreeMap::new();
    for r in rounds {
        for m in &r.members {
            out.insert(m.clone(), truth_of(m, r, roster)?);
        }
    }
    Ok(out)
}

/// Expands verdicts into judgments. Absent verdicts produce none. Listed
/// proxies are predicted human, everyone else predicted AI.
pub fn judgments(rounds: &[RoundRecord], truth: &BTreeMap<String, Truth>) -> Result<Vec<Judgment>, MetricsError> {
    let get = |id: &str| truth.get(id).cloned().ok_or_else(|| MetricsError::MissingTruth(id.to_owned()));
    let mut out = Vec::new();
    for r in rounds {
        for judge in &r.members {
            let Some(Some(verdict)) = r.verdicts.get(judge) else {
                continue;
            };
            let mut decisions = Vec::new();
            let mut strict = true;
            for target in r.members.iter().filter(|m| *m != judge) {
                let target_truth = get(target)?;
                let predicted_human = r
                    .proxy_of
                    .get(target)
                    .is_some_and(|l| verdict.judged_human.contains(l));
                strict &= predicted_human == target_truth.is_human();
                decisions.push(TargetDecision {
                    target_id: target.clone(),
                    target_truth,
                    predicted_human,
                });
            }
            out.push(Judgment {
                judge_id: judge.clone(),
                judge_truth: get(judge)?,
                room_id: r.room_id.clone(),
                decisions,
                strict_correct: strict,
            });
        }
    }
    Ok(out)
}

/// Chance of naming exactly the right set of humans by coin flips.
pub fn random_baseline(room_size: usize) -> f64 {
    0.5f64.powi(room_size.saturating_sub(1) as i32)
}

/// Fraction of judgments that named all and only the humans; `None` when empty.
pub fn strict_accuracy<'a>(judgments: impl IntoIterator<Item = &'a Judgment>) -> Option<f64> {
    let (mut n, mut ok) = (0u64, 0u64);
    for j in judgments {
        n += 1;
        ok += j.strict_correct as u64;
    }
    (n > 0).then(|| ok as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionRecall {
    pub positive_class: PositiveClass,
    pub precision: Option<f64>,
    /// `None` when the positive class never occurs among the targets.
    pub recall: Option<f64>,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-target precision and recall with the given class as positive.
pub fn precision_recall<'a>(judgments: impl IntoIterator<Item = &'a Judgment>, positive: PositiveClass) -> PrecisionRecall {
    let mut c = Confusion::default();
    for j in judgments {
        for d in &j.decisions {
            let actual = d.target_truth.is_human() == (positive == PositiveClass::Human);
            let predicted = d.predicted_human == (positive == PositiveClass::Human);
            match (predicted, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    PrecisionRecall {
        positive_class: positive,
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        confusion: c,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAccuracy {
    /// Targets backed by this model that judges called AI, over all such targets.
    pub per_target: f64,
    pub n_targets: u64,
    /// Strict accuracy over judgments whose room had at least one target of this model.
    pub per_room_strict: f64,
    pub n_judgments: u64,
}

/// Both readings of accuracy per model; models never judged are absent.
pub fn accuracy_by_llm<'a>(
    judgments: impl IntoIterator<Item = &'a Judgment>,
) -> Result<BTreeMap<String, ModelAccuracy>, MetricsError> {
    #[derive(Default)]
    struct Acc {
        targets: u64,
        correct: u64,
        judgments: u64,
        strict: u64,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for j in judgments {
        let mut models_here = BTreeSet::new();
        for d in &j.decisions {
            if let Truth::Ai { model } = &d.target_truth {
                let m = model.clone().ok_or_else(|| MetricsError::UnknownModel(d.target_id.clone()))?;
                let a = acc.entry(m.clone()).or_default();
                a.targets += 1;
                a.correct += !d.predicted_human as u64;
                models_here.insert(m);
            }
        }
        for m in models_here {
            let a = acc.get_mut(&m).expect("inserted above");
            a.judgments += 1;
            a.strict += j.strict_correct as u64;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(m, a)| {
            (
                m,
                ModelAccuracy {
                    per_target: a.correct as f64 / a.targets as f64,
                    n_targets: a.targets,
                    per_room_strict: a.strict as f64 / a.judgments as f64,
                    n_judgments: a.judgments,
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackgroundAccuracy {
    pub accuracy: f64,
    /// Distinct judges in the group.
    pub n: u64,
    pub n_judgments: u64,
}

/// Strict accuracy of human judges grouped by self-reported background,
/// pooled over their judgments. Judges without a profile are left out.
pub fn accuracy_by_background<'a>(
    judgments: impl IntoIterator<Item = &'a Judgment>,
    profiles: &BTreeMap<String, ProfileForm>,
) -> BTreeMap<String, BackgroundAccuracy> {
    let mut acc: BTreeMap<&'static str, (BTreeSet<String>, u64, u64)> = BTreeMap::new();
    for j in judgments.into_iter().filter(|j| j.judge_truth.is_human()) {
        let Some(p) = profiles.get(&j.judge_id) else {
            continue;
        };
        let e = acc.entry(p.background.group_name()).or_default();
        e.0.insert(j.judge_id.clone());
        e.1 += 1;
        e.2 += j.strict_correct as u64;
    }
    acc.into_iter()
        .map(|(g, (judges, n, ok))| {
            (
                g.to_owned(),
                BackgroundAccuracy {
                    accuracy: ok as f64 / n as f64,
                    n: judges.len() as u64,
                    n_judgments: n,
                },
            )
        })
        .collect()
}

/// Every profile recorded across the rounds, later rounds winning.
pub fn collect_profiles(rounds: &[RoundRecord]) -> BTreeMap<String, ProfileForm> {
    let mut out = BTreeMap::new();
    for r in rounds {
        out.extend(r.profiles.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    out
}

pub const HUMAN_COHORT: &str = "human";
pub const AI_COHORT: &str = "ai";

pub fn model_cohort(model: &str) -> String {
    format!("model:{model}")
}

/// Cohorts a message author belongs to: `human`, or `ai` plus its model cohort.
pub fn cohorts_of(truth: &Truth) -> Vec<String> {
    match truth {
        Truth::Human => vec![HUMAN_COHORT.into()],
        Truth::Ai { model } => {
            let mut v = vec![AI_COHORT.to_owned()];
            if let Some(m) = model {
                v.push(model_cohort(m));
            }
            v
        }
    }
}

/// A transcript line with its resolved author.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthoredMessage<'a> {
    pub room_id: &'a str,
    pub author: &'a str,
    pub truth: &'a Truth,
    pub text: &'a str,
    pub room_labels: Vec<String>,
}

pub fn authored_messages<'a>(
    rounds: &'a [RoundRecord],
    truth: &'a BTreeMap<String, Truth>,
) -> Result<Vec<AuthoredMessage<'a>>, MetricsError> {
    let mut out = Vec::new();
    for r in rounds {
        let labels: Vec<String> = r.proxy_of.values().map(|l| l.to_string().to_lowercase()).collect();
        for e in &r.transcript {
            let author = r
                .author_of(e.from_proxy)
                .ok_or_else(|| MetricsError::MissingTruth(format!("{}:{}", r.room_id, e.from_proxy)))?;
            let t = truth.get(author).ok_or_else(|| MetricsError::MissingTruth(author.to_owned()))?;
            out.push(AuthoredMessage {
                room_id: &r.room_id,
                author,
                truth: t,
                text: &e.text,
                room_labels: labels.clone(),
            });
        }
    }
    Ok(out)
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordStats {
    pub messages: u64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Word count to number of messages with that many words.
    pub histogram: BTreeMap<usize, u64>,
}

/// Words per message per cohort. Empty messages count as zero-word messages.
pub fn words_per_message(messages: &[AuthoredMessage<'_>]) -> BTreeMap<String, WordStats> {
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for m in messages {
        let n = word_count(m.text);
        for c in cohorts_of(m.truth) {
            counts.entry(c).or_default().push(n);
        }
    }
    counts
        .into_iter()
        .map(|(c, ns)| {
            let len = ns.len() as f64;
            let mean = ns.iter().sum::<usize>() as f64 / len;
            let var = ns.iter().map(|&n| (n as f64 - mean).powi(2)).sum::<f64>() / len;
            let mut histogram = BTreeMap::new();
            for n in &ns {
                *histogram.entry(*n).or_insert(0) += 1;
            }
            (
                c,
                WordStats {
                    messages: ns.len() as u64,
                    mean,
                    std: var.sqrt(),
                    histogram,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoomShare {
    pub room_id: String,
    pub human_members: u64,
    pub ai_members: u64,
    pub human_messages: u64,
    pub ai_messages: u64,
    /// Absent for rooms without messages.
    pub human_share: Option<f64>,
    pub ai_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerCapita {
    pub members: u64,
    pub messages: u64,
    pub per_capita: Option<f64>,
    /// Per-capita rate normalized so the cohorts in the table sum to one.
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageShare {
    pub rooms: Vec<RoomShare>,
    /// `human` and `ai`, over rooms with at least one message.
    pub per_capita: BTreeMap<String, PerCapita>,
    /// AI per-capita rate over human per-capita rate.
    pub ai_to_human_ratio: Option<f64>,
    /// `human` and each `model:<name>`.
    pub per_model_per_capita: BTreeMap<String, PerCapita>,
}

fn normalize_shares(table: &mut BTreeMap<String, PerCapita>) {
    let total: f64 = table.values().filter_map(|p| p.per_capita).sum();
    for p in table.values_mut() {
        p.share = p.per_capita.filter(|_| total > 0.0).map(|x| x / total);
    }
}

/// Message counts per room and per member. Member counts are room seats, so
/// an agent in three rooms counts three times.
pub fn message_share(rounds: &[RoundRecord], truth: &BTreeMap<String, Truth>) -> Result<MessageShare, MetricsError> {
    let get = |id: &str| truth.get(id).ok_or_else(|| MetricsError::MissingTruth(id.to_owned()));
    let mut rooms = Vec::new();
    let mut coarse: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut fine: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in rounds {
        let mut per_member: BTreeMap<&str, u64> = r.members.iter().map(|m| (m.as_str(), 0)).collect();
        for e in &r.transcript {
            let a = r
                .author_of(e.from_proxy)
                .ok_or_else(|| MetricsError::MissingTruth(format!("{}:{}", r.room_id, e.from_proxy)))?;
            *per_member.entry(a).or_insert(0) += 1;
        }
        let mut row = RoomShare {
            room_id: r.room_id.clone(),
            human_members: 0,
            ai_members: 0,
            human_messages: 0,
            ai_messages: 0,
            human_share: None,
            ai_share: None,
        };
        for (m, n) in &per_member {
            if get(m)?.is_human() {
                row.human_members += 1;
                row.human_messages += n;
            } else {
                row.ai_members += 1;
                row.ai_messages += n;
            }
        }
        let total = row.human_messages + row.ai_messages;
        if total > 0 {
            row.human_share = Some(row.human_messages as f64 / total as f64);
            row.ai_share = Some(row.ai_messages as f64 / total as f64);
            for (m, n) in &per_member {
                let t = get(m)?;
                let key = if t.is_human() { HUMAN_COHORT } else { AI_COHORT };
                let e = coarse.entry(key.to_owned()).or_default();
                e.0 += 1;
                e.1 += n;
                let fine_key = match t {
                    Truth::Human => HUMAN_COHORT.to_owned(),
                    Truth::Ai { model } => {
                        model_cohort(model.as_deref().ok_or_else(|| MetricsError::UnknownModel(m.to_string()))?)
                    }
                };
                let e = fine.entry(fine_key).or_default();
                e.0 += 1;
                e.1 += n;
            }
        }
        rooms.push(row);
    }
    let table = |src: BTreeMap<String, (u64, u64)>| {
        let mut t: BTreeMap<String, PerCapita> = src
            .into_iter()
            .map(|(k, (members, messages))| {
                (
                    k,
                    PerCapita {
                        members,
                        messages,
                        per_capita: ratio(messages, members),
                        share: None,
                    },
                )
            })
            .collect();
        normalize_shares(&mut t);
        t
    };
    let per_capita = table(coarse);
    let rate = |k: &str| per_capita.get(k).and_then(|p| p.per_capita);
    let ai_to_human_ratio = match (rate(AI_COHORT), rate(HUMAN_COHORT)) {
        (Some(a), Some(h)) if h > 0.0 => Some(a / h),
        _ => None,
    };
    Ok(MessageShare {
        rooms,
        per_capita,
        ai_to_human_ratio,
        per_model_per_capita: table(fine),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpellingRate {
    pub messages: u64,
    pub flagged: u64,
    pub rate: Option<f64>,
}

/// Fraction of messages with at least one word outside the dictionary, per cohort.
pub fn spelling_error_rate(messages: &[AuthoredMessage<'_>], checker: &SpellChecker) -> BTreeMap<String, SpellingRate> {
    let mut acc: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for m in messages {
        let flagged = checker.is_flagged(m.text, &m.room_labels) as u64;
        for c in cohorts_of(m.truth) {
            let e = acc.entry(c).or_default();
            e.0 += 1;
            e.1 += flagged;
        }
    }
    acc.into_iter()
        .map(|(c, (n, f))| {
            (
                c,
                SpellingRate {
                    messages: n,
                    flagged: f,
                    rate: ratio(f, n),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub judges: String,
    pub n_judgments: u64,
    pub strict_accuracy: Option<f64>,
    /// Precision and recall under the selected default orientation.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub human_positive: PrecisionRecall,
    pub ai_positive: PrecisionRecall,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub room_size: usize,
    pub rounds: u64,
    pub judgments: u64,
    /// Judgments left out because their room had a different size.
    pub skipped_judgments: u64,
    pub absent_verdicts: u64,
    pub random_baseline: f64,
    pub positive_class: PositiveClass,
    pub overall: Vec<CohortSummary>,
    /// Keyed by judge cohort (`human`, `ai`, `all`), then model.
    pub accuracy_by_llm: BTreeMap<String, BTreeMap<String, ModelAccuracy>>,
    pub accuracy_by_background: BTreeMap<String, BackgroundAccuracy>,
    pub words_per_message: BTreeMap<String, WordStats>,
    pub message_share: MessageShare,
    pub spelling_error_rate: BTreeMap<String, SpellingRate>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub room_size: usize,
    pub positive_class: PositiveClass,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            room_size: 4,
            positive_class: PositiveClass::Human,
        }
    }
}

pub const JUDGE_COHORTS: [&str; 3] = ["human", "ai", "all"];

fn in_cohort(j: &Judgment, cohort: &str) -> bool {
    match cohort {
        "human" => j.judge_truth.is_human(),
        "ai" => !j.judge_truth.is_human(),
        _ => true,
    }
}

/// The full report over `rounds`. Ground truth comes from `roster` when
/// given, otherwise from the labels stored in the records.
pub fn compute_report(
    rounds: &[RoundRecord],
    roster: Option<&Roster>,
    checker: &SpellChecker,
    opts: &ReportOptions,
) -> Result<MetricsReport, MetricsError> {
    let truth = resolve_truth(rounds, roster)?;
    let all = judgments(rounds, &truth)?;
    let expected_targets = opts.room_size.saturating_sub(1);
    let (js, skipped): (Vec<Judgment>, Vec<Judgment>) =
        all.into_iter().partition(|j| j.decisions.len() == expected_targets);
    let absent = rounds
        .iter()
        .map(|r| r.verdicts.values().filter(|v| v.is_none()).count() as u64)
        .sum();

    let mut overall = Vec::new();
    let mut by_llm = BTreeMap::new();
    for cohort in JUDGE_COHORTS {
        let sel: Vec<&Judgment> = js.iter().filter(|j| in_cohort(j, cohort)).collect();
        let hp = precision_recall(sel.iter().copied(), PositiveClass::Human);
        let ap = precision_recall(sel.iter().copied(), PositiveClass::Ai);
        let default = if opts.positive_class == PositiveClass::Human { hp } else { ap };
        overall.push(CohortSummary {
            judges: cohort.to_owned(),
            n_judgments: sel.len() as u64,
            strict_accuracy: strict_accuracy(sel.iter().copied()),
            precision: default.precision,
            recall: default.recall,
            human_positive: hp,
            ai_positive: ap,
        });
        by_llm.insert(cohort.to_owned(), accuracy_by_llm(sel.iter().copied())?);
    }
    let messages = authored_messages(rounds, &truth)?;
    Ok(MetricsReport {
        room_size: opts.room_size,
        rounds: rounds.len() as u64,
        judgments: js.len() as u64,
        skipped_judgments: skipped.len() as u64,
        absent_verdicts: absent,
        random_baseline: random_baseline(opts.room_size),
        positive_class: opts.positive_class,
        overall,
        accuracy_by_llm: by_llm,
        accuracy_by_background: accuracy_by_background(&js, &collect_profiles(rounds)),
        words_per_message: words_per_message(&messages),
        message_share: message_share(rounds, &truth)?,
        spelling_error_rate: spelling_error_rate(&messages, checker),
        notes: vec![
            "absent verdicts are excluded from accuracy denominators".into(),
            "empty messages count as zero-word messages".into(),
            "per_target accuracy: share of a model's targets called AI; per_room_strict: strict accuracy over rooms containing the model".into(),
            "background accuracy pools human judges' judgments; n counts distinct judges".into(),
        ],
    })
}

impl MetricsReport {
    pub fn cohort(&self, judges: &str) -> Option<&CohortSummary> {
        self.overall.iter().find(|c| c.judges == judges)
    }
}
