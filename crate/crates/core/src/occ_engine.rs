//! Event-branch OCC appraisal as a deterministic rule engine.
//!
//! Twelve rules cover well-being, prospect-based and fortunes-of-others
//! emotions. Rules are tried most-specific-first; the first rule whose
//! conditions all hold fires. The ordering is what keeps an anticipated,
//! confirmed bad outcome from being reported as plain distress.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordinal {
    Low,
    Medium,
    High,
}

impl Ordinal {
    pub const ALL: [Ordinal; 3] = [Ordinal::Low, Ordinal::Medium, Ordinal::High];

    pub fn level(self) -> u8 {
        match self {
            Ordinal::Low => 1,
            Ordinal::Medium => 2,
            Ordinal::High => 3,
        }
    }

    pub fn from_level(level: u8) -> Option<Ordinal> {
        match level {
            1 => Some(Ordinal::Low),
            2 => Some(Ordinal::Medium),
            3 => Some(Ordinal::High),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ordinal::Low => "low",
            Ordinal::Medium => "medium",
            Ordinal::High => "high",
        }
    }
}

impl fmt::Display for Ordinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subject {
    #[serde(rename = "self")]
    Own,
    #[serde(rename = "other")]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Liking {
    Liked,
    Disliked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Desirability {
    Desirable,
    Undesirable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temporal {
    Happened,
    Prospective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Confirmed,
    Disconfirmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnticipationRecord {
    pub anticipated_desirability: Desirability,
    pub outcome: Outcome,
}

/// Structured appraisal of one event from the perspective of one person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppraisalFrame {
    pub subject: Subject,
    #[serde(default)]
    pub liking: Option<Liking>,
    pub desirability: Desirability,
    pub desirability_magnitude: Ordinal,
    pub temporal: Temporal,
    #[serde(
        default,
        serialize_with = "ser_anticipation",
        deserialize_with = "de_anticipation"
    )]
    pub anticipation: Option<AnticipationRecord>,
    pub likelihood: Ordinal,
}

fn ser_anticipation<S: Serializer>(a: &Option<AnticipationRecord>, s: S) -> Result<S::Ok, S::Error> {
    match a {
        Some(rec) => rec.serialize(s),
        None => s.serialize_str("none"),
    }
}

fn de_anticipation<'de, D: Deserializer<'de>>(d: D) -> Result<Option<AnticipationRecord>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Tag(String),
        Record(AnticipationRecord),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Tag(t)) if t == "none" => Ok(None),
        Some(Raw::Tag(t)) => Err(serde::de::Error::custom(format!(
            "anticipation must be \"none\" or a record, got \"{t}\""
        ))),
        Some(Raw::Record(r)) => Ok(Some(r)),
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    #[error("liking is required when the subject is another person")]
    LikingRequired,
    #[error("liking only applies when the subject is another person")]
    LikingWithoutOther,
    #[error("a prospective event cannot carry an anticipation record")]
    AnticipationOnProspective,
    #[error("fortunes-of-others frames cannot carry an anticipation record")]
    AnticipationForOther,
}

impl AppraisalFrame {
    pub fn validate(&self) -> Result<(), FrameError> {
        match (self.subject, self.liking) {
            (Subject::Other, None) => return Err(FrameError::LikingRequired),
            (Subject::Own, Some(_)) => return Err(FrameError::LikingWithoutOther),
            _ => {}
        }
        if self.anticipation.is_some() {
            if self.temporal == Temporal::Prospective {
                return Err(FrameError::AnticipationOnProspective);
            }
            if self.subject == Subject::Other {
                return Err(FrameError::AnticipationForOther);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmotionLabel {
    Joy,
    Distress,
    HappyFor,
    Pity,
    Gloating,
    Resentment,
    Hope,
    Fear,
    Satisfaction,
    Despair,
    Relief,
    Disappointment,
}

impl EmotionLabel {
    /// Table order: well-being, fortunes-of-others, prospect, confirmation.
    pub const ALL: [EmotionLabel; 12] = [
        EmotionLabel::Joy,
        EmotionLabel::Distress,
        EmotionLabel::HappyFor,
        EmotionLabel::Pity,
        EmotionLabel::Gloating,
        EmotionLabel::Resentment,
        EmotionLabel::Hope,
        EmotionLabel::Fear,
        EmotionLabel::Satisfaction,
        EmotionLabel::Despair,
        EmotionLabel::Relief,
        EmotionLabel::Disappointment,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "Joy",
            EmotionLabel::Distress => "Distress",
            EmotionLabel::HappyFor => "Happy for",
            EmotionLabel::Pity => "Pity",
            EmotionLabel::Gloating => "Gloating",
            EmotionLabel::Resentment => "Resentment",
            EmotionLabel::Hope => "Hope",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Satisfaction => "Satisfaction",
            EmotionLabel::Despair => "Despair",
            EmotionLabel::Relief => "Relief",
            EmotionLabel::Disappointment => "Disappointment",
        }
    }

    pub fn variant_name(self) -> &'static str {
        match self {
            EmotionLabel::HappyFor => "HappyFor",
            other => other.display_name(),
        }
    }

    /// Whether the emotion is positively valenced for the appraising person.
    pub fn is_positive(self) -> bool {
        matches!(
            self,
            EmotionLabel::Joy
                | EmotionLabel::HappyFor
                | EmotionLabel::Gloating
                | EmotionLabel::Hope
                | EmotionLabel::Satisfaction
                | EmotionLabel::Relief
        )
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    /// Accepts variant names, display names and the abbreviations used in
    /// printed tables ("Satisfac.", "Disapp.", "Fears-confirmed").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .trim_end_matches('.')
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        let label = match key.as_str() {
            "joy" => EmotionLabel::Joy,
            "distress" => EmotionLabel::Distress,
            "happyfor" => EmotionLabel::HappyFor,
            "pity" => EmotionLabel::Pity,
            "gloating" => EmotionLabel::Gloating,
            "resentment" => EmotionLabel::Resentment,
            "hope" => EmotionLabel::Hope,
            "fear" => EmotionLabel::Fear,
            "satisfaction" | "satisfac" => EmotionLabel::Satisfaction,
            "despair" | "fearsconfirmed" => EmotionLabel::Despair,
            "relief" => EmotionLabel::Relief,
            "disappointment" | "disapp" => EmotionLabel::Disappointment,
            _ => return Err(format!("unknown emotion label `{s}`")),
        };
        Ok(label)
    }
}

/// A single test a rule makes against a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "field", content = "equals", rename_all = "snake_case")]
pub enum Condition {
    Subject(Subject),
    Liking(Liking),
    Desirability(Desirability),
    Temporal(Temporal),
    AnticipatedDesirability(Desirability),
    Outcome(Outcome),
}

impl Condition {
    pub fn holds(&self, f: &AppraisalFrame) -> bool {
        match *self {
            Condition::Subject(s) => f.subject == s,
            Condition::Liking(l) => f.liking == Some(l),
            Condition::Desirability(d) => f.desirability == d,
            Condition::Temporal(t) => f.temporal == t,
            Condition::AnticipatedDesirability(d) => {
                f.anticipation.is_some_and(|a| a.anticipated_desirability == d)
            }
            Condition::Outcome(o) => f.anticipation.is_some_and(|a| a.outcome == o),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // reuse the JSON spelling of each value
        let val = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
        let (field, value) = match self {
            Condition::Subject(s) => ("subject", val(serde_json::json!(s))),
            Condition::Liking(l) => ("liking", val(serde_json::json!(l))),
            Condition::Desirability(d) => ("desirability", val(serde_json::json!(d))),
            Condition::Temporal(t) => ("temporal", val(serde_json::json!(t))),
            Condition::AnticipatedDesirability(d) => {
                ("anticipation.anticipated_desirability", val(serde_json::json!(d)))
            }
            Condition::Outcome(o) => ("anticipation.outcome", val(serde_json::json!(o))),
        };
        write!(f, "{field} = {value}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rule {
    pub id: &'static str,
    pub label: EmotionLabel,
    /// Rule wording as given to the model in the prompt.
    pub text: &'static str,
    pub conditions: &'static [Condition],
}

impl Rule {
    pub fn matches(&self, f: &AppraisalFrame) -> bool {
        self.conditions.iter().all(|c| c.holds(f))
    }
}

use Condition as C;

static RULES: [Rule; 12] = [
    Rule {
        id: "satisfaction",
        label: EmotionLabel::Satisfaction,
        text: "An anticipated desirable event for Anne has indeed happened.",
        conditions: &[C::AnticipatedDesirability(Desirability::Desirable), C::Outcome(Outcome::Confirmed)],
    },
    Rule {
        id: "despair",
        label: EmotionLabel::Despair,
        text: "An anticipated undesirable event for Anne has indeed happened.",
        conditions: &[C::AnticipatedDesirability(Desirability::Undesirable), C::Outcome(Outcome::Confirmed)],
    },
    Rule {
        id: "relief",
        label: EmotionLabel::Relief,
        text: "An anticipated undesirable event for Anne did not happen.",
        conditions: &[C::AnticipatedDesirability(Desirability::Undesirable), C::Outcome(Outcome::Disconfirmed)],
    },
    Rule {
        id: "disappointment",
        label: EmotionLabel::Disappointment,
        text: "An anticipated desirable event for Anne did not happen.",
        conditions: &[C::AnticipatedDesirability(Desirability::Desirable), C::Outcome(Outcome::Disconfirmed)],
    },
    Rule {
        id: "happy_for",
        label: EmotionLabel::HappyFor,
        text: "a desirable event for a friend of Anne just happened",
        conditions: &[C::Subject(Subject::Other), C::Liking(Liking::Liked), C::Desirability(Desirability::Desirable)],
    },
    Rule {
        id: "pity",
        label: EmotionLabel::Pity,
        text: "an undesirable event for a friend of Anne just happened",
        conditions: &[C::Subject(Subject::Other), C::Liking(Liking::Liked), C::Desirability(Desirability::Undesirable)],
    },
    Rule {
        id: "gloating",
        label: EmotionLabel::Gloating,
        text: "an undesirable event for an enemy of Anne just happened",
        conditions: &[C::Subject(Subject::Other), C::Liking(Liking::Disliked), C::Desirability(Desirability::Undesirable)],
    },
    Rule {
        id: "resentment",
        label: EmotionLabel::Resentment,
        text: "a desirable event for an enemy of Anne just happened.",
        conditions: &[C::Subject(Subject::Other), C::Liking(Liking::Disliked), C::Desirability(Desirability::Desirable)],
    },
    Rule {
        id: "hope",
        label: EmotionLabel::Hope,
        text: "a desirable event for Anne might happen in the future.",
        conditions: &[C::Subject(Subject::Own), C::Temporal(Temporal::Prospective), C::Desirability(Desirability::Desirable)],
    },
    Rule {
        id: "fear",
        label: EmotionLabel::Fear,
        text: "an undesirable event for Anne might happen in the future.",
        conditions: &[C::Subject(Subject::Own), C::Temporal(Temporal::Prospective), C::Desirability(Desirability::Undesirable)],
    },
    Rule {
        id: "joy",
        label: EmotionLabel::Joy,
        text: "a desirable event for Anne just happened",
        conditions: &[C::Subject(Subject::Own), C::Temporal(Temporal::Happened), C::Desirability(Desirability::Desirable)],
    },
    Rule {
        id: "distress",
        label: EmotionLabel::Distress,
        text: "an undesirable event for Anne just happened",
        conditions: &[C::Subject(Subject::Own), C::Temporal(Temporal::Happened), C::Desirability(Desirability::Undesirable)],
    },
];

/// Rules in firing order, most specific first.
pub fn rule_set() -> &'static [Rule] {
    &RULES
}

pub fn rule_for(label: EmotionLabel) -> &'static Rule {
    RULES.iter().find(|r| r.label == label).expect("every label has a rule")
}

/// Rules in the order they are listed to the model (table order).
pub fn table_rules() -> Vec<&'static Rule> {
    EmotionLabel::ALL.iter().map(|&l| rule_for(l)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionPrediction {
    pub label: EmotionLabel,
    pub intensity: Ordinal,
    pub rule_id: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub rule_id: &'static str,
    pub label: EmotionLabel,
    pub checks: Vec<ConditionCheck>,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn fired(&self) -> Option<&TraceStep> {
        self.steps.last().filter(|s| s.fired)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntensityConfig {
    /// When set, a disconfirmed expectation (relief, disappointment) is at
    /// least as intense as the expectation was likely.
    pub scale_disconfirmation_by_expectation: bool,
}

/// Rule engine with an intensity configuration. The free functions in this
/// module use the default configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Appraiser {
    pub config: IntensityConfig,
}

impl Appraiser {
    pub fn new(config: IntensityConfig) -> Self {
        Appraiser { config }
    }

    pub fn intensity(&self, frame: &AppraisalFrame) -> Ordinal {
        let base = (frame.desirability_magnitude.level() + frame.likelihood.level()) / 2;
        let mut out = Ordinal::from_level(base).expect("mean of two levels is a level");
        if self.config.scale_disconfirmation_by_expectation
            && frame.anticipation.is_some_and(|a| a.outcome == Outcome::Disconfirmed)
        {
            out = out.max(frame.likelihood);
        }
        out
    }

    pub fn appraise(&self, frame: &AppraisalFrame) -> Result<EmotionPrediction, FrameError> {
        frame.validate()?;
        let rule = RULES
            .iter()
            .find(|r| r.matches(frame))
            .expect("rule set is exhaustive over valid frames");
        let intensity = self.intensity(frame);
        Ok(EmotionPrediction {
            label: rule.label,
            intensity,
            rule_id: rule.id.to_string(),
            rationale: format!(
                "{} rule matches: {}. Intensity {} from desirability {} and likelihood {}.",
                rule.label,
                rule.text.trim_end_matches('.'),
                intensity,
                frame.desirability_magnitude,
                frame.likelihood
            ),
        })
    }

    pub fn appraise_batch(
        &self,
        frames: &[AppraisalFrame],
        exec: Execution,
    ) -> Vec<Result<EmotionPrediction, FrameError>> {
        par::map(exec, frames, |f| self.appraise(f))
    }
}

pub fn appraise(frame: &AppraisalFrame) -> Result<EmotionPrediction, FrameError> {
    Appraiser::default().appraise(frame)
}

/// Floor of the mean of desirability magnitude and likelihood (low=1 .. high=3).
pub fn intensity(frame: &AppraisalFrame) -> Ordinal {
    Appraiser::default().intensity(frame)
}

/// Condition-by-condition evaluation of every rule up to and including the
/// one that fires.
pub fn explain(frame: &AppraisalFrame) -> Result<Trace, FrameError> {
    frame.validate()?;
    let mut steps = Vec::new();
    for rule in RULES.iter() {
        let checks: Vec<ConditionCheck> = rule
            .conditions
            .iter()
            .map(|c| ConditionCheck {
                condition: c.to_string(),
                holds: c.holds(frame),
            })
            .collect();
        let fired = checks.iter().all(|c| c.holds);
        steps.push(TraceStep {
            rule_id: rule.id,
            label: rule.label,
            checks,
            fired,
        });
        if fired {
            break;
        }
    }
    Ok(Trace { steps })
}

/// Every valid frame, in a fixed enumeration order.
pub fn enumerate_frames() -> Vec<AppraisalFrame> {
    let subjects = [
        (Subject::Own, None),
        (Subject::Other, Some(Liking::Liked)),
        (Subject::Other, Some(Liking::Disliked)),
    ];
    let mut anticipations = vec![None];
    for anticipated_desirability in [Desirability::Desirable, Desirability::Undesirable] {
        for outcome in [Outcome::Confirmed, Outcome::Disconfirmed] {
            anticipations.push(Some(AnticipationRecord {
                anticipated_desirability,
                outcome,
            }));
        }
    }
    let mut out = Vec::new();
    for &(subject, liking) in &subjects {
        for desirability in [Desirability::Desirable, Desirability::Undesirable] {
            for desirability_magnitude in Ordinal::ALL {
                for temporal in [Temporal::Happened, Temporal::Prospective] {
                    for &anticipation in &anticipations {
                        for likelihood in Ordinal::ALL {
                            let f = AppraisalFrame {
                                subject,
                                liking,
                                desirability,
                                desirability_magnitude,
                                temporal,
                                anticipation,
                                likelihood,
                            };
                            if f.validate().is_ok() {
                                out.push(f);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Structured encoding of the reference situation for each emotion.
pub fn canonical_frame(label: EmotionLabel) -> AppraisalFrame {
    use Desirability::*;
    let own = |desirability, temporal, anticipation| AppraisalFrame {
        subject: Subject::Own,
        liking: None,
        desirability,
        desirability_magnitude: Ordinal::High,
        temporal,
        anticipation,
        likelihood: Ordinal::High,
    };
    let other = |liking, desirability| AppraisalFrame {
        subject: Subject::Other,
        liking: Some(liking),
        desirability,
        desirability_magnitude: Ordinal::High,
        temporal: Temporal::Happened,
        anticipation: None,
        likelihood: Ordinal::High,
    };
    let anticipated = |anticipated_desirability, outcome, actual| {
        let mut f = own(
            actual,
            Temporal::Happened,
            Some(AnticipationRecord {
                anticipated_desirability,
                outcome,
            }),
        );
        f.desirability_magnitude = Ordinal::Medium;
        f
    };
    match label {
        EmotionLabel::Joy => own(Desirable, Temporal::Happened, None),
        EmotionLabel::Distress => own(Undesirable, Temporal::Happened, None),
        EmotionLabel::HappyFor => other(Liking::Liked, Desirable),
        EmotionLabel::Pity => other(Liking::Liked, Undesirable),
        EmotionLabel::Gloating => other(Liking::Disliked, Undesirable),
        EmotionLabel::Resentment => other(Liking::Disliked, Desirable),
        EmotionLabel::Hope => {
            let mut f = own(Desirable, Temporal::Prospective, None);
            f.likelihood = Ordinal::Medium;
            f
        }
        EmotionLabel::Fear => {
            let mut f = own(Undesirable, Temporal::Prospective, None);
            f.likelihood = Ordinal::Medium;
            f
        }
        EmotionLabel::Satisfaction => anticipated(Desirable, Outcome::Confirmed, Desirable),
        EmotionLabel::Despair => anticipated(Undesirable, Outcome::Confirmed, Undesirable),
        EmotionLabel::Relief => anticipated(Undesirable, Outcome::Disconfirmed, Desirable),
        EmotionLabel::Disappointment => anticipated(Desirable, Outcome::Disconfirmed, Undesirable),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(subject: Subject, desirability: Desirability, temporal: Temporal) -> AppraisalFrame {
        AppraisalFrame {
            subject,
            liking: None,
            desirability,
            desirability_magnitude: Ordinal::Medium,
            temporal,
            anticipation: None,
            likelihood: Ordinal::Medium,
        }
    }

    #[test]
    fn rule_set_shape_and_order() {
        let rules = rule_set();
        assert_eq!(rules.len(), 12);
        let order: Vec<_> = rules.iter().map(|r| r.label).collect();
        use EmotionLabel::*;
        assert_eq!(
            order,
            [Satisfaction, Despair, Relief, Disappointment, HappyFor, Pity, Gloating, Resentment, Hope, Fear, Joy, Distress]
        );
        let despair = rule_for(Despair);
        assert_eq!(
            despair.conditions,
            &[C::AnticipatedDesirability(Desirability::Undesirable), C::Outcome(Outcome::Confirmed)]
        );
        let gloat = rule_for(Gloating);
        assert_eq!(
            gloat.conditions,
            &[C::Subject(Subject::Other), C::Liking(Liking::Disliked), C::Desirability(Desirability::Undesirable)]
        );
        assert_eq!(rule_for(Joy).text, "a desirable event for Anne just happened");
    }

    #[test]
    fn appraise_examples() {
        let joy = frame(Subject::Own, Desirability::Desirable, Temporal::Happened);
        let p = appraise(&joy).unwrap();
        assert_eq!(p.label, EmotionLabel::Joy);
        assert_eq!(p.rule_id, "joy");
        assert!(p.rationale.contains("a desirable event for Anne just happened"));

        let mut despair = frame(Subject::Own, Desirability::Undesirable, Temporal::Happened);
        despair.anticipation = Some(AnticipationRecord {
            anticipated_desirability: Desirability::Undesirable,
            outcome: Outcome::Confirmed,
        });
        assert_eq!(appraise(&despair).unwrap().label, EmotionLabel::Despair);

        let mut happy_for = frame(Subject::Other, Desirability::Desirable, Temporal::Happened);
        happy_for.liking = Some(Liking::Liked);
        assert_eq!(appraise(&happy_for).unwrap().label, EmotionLabel::HappyFor);
    }

    #[test]
    fn validation_errors() {
        let mut f = frame(Subject::Own, Desirability::Desirable, Temporal::Prospective);
        f.anticipation = Some(AnticipationRecord {
            anticipated_desirability: Desirability::Desirable,
            outcome: Outcome::Confirmed,
        });
        assert_eq!(appraise(&f), Err(FrameError::AnticipationOnProspective));
        assert_eq!(explain(&f), Err(FrameError::AnticipationOnProspective));

        let other = frame(Subject::Other, Desirability::Desirable, Temporal::Happened);
        assert_eq!(appraise(&other), Err(FrameError::LikingRequired));

        let mut own = frame(Subject::Own, Desirability::Desirable, Temporal::Happened);
        own.liking = Some(Liking::Liked);
        assert_eq!(appraise(&own), Err(FrameError::LikingWithoutOther));

        let mut other = frame(Subject::Other, Desirability::Desirable, Temporal::Happened);
        other.liking = Some(Liking::Liked);
        other.anticipation = Some(AnticipationRecord {
            anticipated_desirability: Desirability::Desirable,
            outcome: Outcome::Confirmed,
        });
        assert_eq!(appraise(&other), Err(FrameError::AnticipationForOther));
    }

    #[test]
    fn intensity_table_matches_enumeration() {
        // oracle: integer floor of the mean over all nine pairs
        for m in Ordinal::ALL {
            for l in Ordinal::ALL {
                let mut f = frame(Subject::Own, Desirability::Desirable, Temporal::Happened);
                f.desirability_magnitude = m;
                f.likelihood = l;
                let expect = match m.level() as u32 + l.level() as u32 {
                    2 | 3 => Ordinal::Low,
                    4 | 5 => Ordinal::Medium,
                    6 => Ordinal::High,
                    _ => unreachable!(),
                };
                assert_eq!(intensity(&f), expect, "{m:?} {l:?}");
            }
        }
    }

    #[test]
    fn disconfirmation_switch() {
        let mut f = canonical_frame(EmotionLabel::Relief);
        f.desirability_magnitude = Ordinal::Low;
        f.likelihood = Ordinal::High;
        assert_eq!(intensity(&f), Ordinal::Medium);
        let scaled = Appraiser::new(IntensityConfig {
            scale_disconfirmation_by_expectation: true,
        });
        assert_eq!(scaled.intensity(&f), Ordinal::High);
        // confirmed outcomes are unaffected
        let mut s = canonical_frame(EmotionLabel::Satisfaction);
        s.desirability_magnitude = Ordinal::Low;
        s.likelihood = Ordinal::High;
        assert_eq!(scaled.intensity(&s), Ordinal::Medium);
    }

    #[test]
    fn explain_traces() {
        let t = explain(&canonical_frame(EmotionLabel::Joy)).unwrap();
        let last = t.fired().unwrap();
        assert_eq!(last.label, EmotionLabel::Joy);
        assert!(last.checks.iter().all(|c| c.holds));
        assert_eq!(t.steps.len(), 11);

        let t = explain(&canonical_frame(EmotionLabel::Despair)).unwrap();
        assert_eq!(t.fired().unwrap().label, EmotionLabel::Despair);
        assert_eq!(t.steps.len(), 2);
        assert!(!t.steps.iter().any(|s| s.label == EmotionLabel::Distress));
    }

    #[test]
    fn canonical_frames_fire_their_rule() {
        for label in EmotionLabel::ALL {
            assert_eq!(appraise(&canonical_frame(label)).unwrap().label, label);
        }
    }

    #[test]
    fn frame_json_field_names() {
        let f = canonical_frame(EmotionLabel::Relief);
        let v = serde_json::to_value(f).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in ["subject", "liking", "desirability", "desirability_magnitude", "temporal", "anticipation", "likelihood"] {
            assert!(keys.contains(&k.to_string()), "{k}");
        }
        assert_eq!(v["anticipation"]["outcome"], "disconfirmed");
        let back: AppraisalFrame = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);

        let joy: AppraisalFrame = serde_json::from_str(
            r#"{"subject":"self","desirability":"desirable","desirability_magnitude":"high",
                "temporal":"happened","anticipation":"none","likelihood":"high"}"#,
        )
        .unwrap();
        assert_eq!(appraise(&joy).unwrap().label, EmotionLabel::Joy);
        assert!(serde_json::from_str::<AppraisalFrame>(r#"{"subject":"self","anticipation":"maybe"}"#).is_err());
    }

    #[test]
    fn label_parsing() {
        assert_eq!("Satisfac.".parse::<EmotionLabel>().unwrap(), EmotionLabel::Satisfaction);
        assert_eq!("Disapp.".parse::<EmotionLabel>().unwrap(), EmotionLabel::Disappointment);
        assert_eq!("Happy for".parse::<EmotionLabel>().unwrap(), EmotionLabel::HappyFor);
        assert_eq!("Fears-confirmed".parse::<EmotionLabel>().unwrap(), EmotionLabel::Despair);
        assert!("Anger".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn batch_equals_single() {
        let frames = enumerate_frames();
        let batch = Appraiser::default().appraise_batch(&frames, Execution::Parallel);
        for (f, p) in frames.iter().zip(batch) {
            assert_eq!(p.unwrap(), appraise(f).unwrap());
        }
    }
}
