//! Surface realization of robot communicative acts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GenerationTemplate, TemplateKind};

/// Semantic content of a robot utterance before realization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemanticAct {
    /// Literal text (with optional slots and gesture markers).
    Say(String),
    /// Query for the value of a recipe parameter.
    AskParameterValue(String),
    /// Second attempt at directing the user's attention to an object.
    ReformulateLook(String),
    /// Notice that the robot is waiting for evidence of a user action.
    AwaitEvidence(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gesture {
    Glance(String),
    Point(String),
    Beat,
}

/// A gesture aligned to the number of words spoken before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedGesture {
    pub word: usize,
    pub gesture: Gesture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub gestures: Vec<TimedGesture>,
}

impl Utterance {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RealizeError {
    #[error("slot `{0}` is unbound")]
    UnboundSlot(String),
    #[error("malformed gesture marker `{0}`")]
    BadMarker(String),
}

/// Slot names (`{name}`) in a surface form, in order of appearance.
pub fn slots(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(after[..close].to_string());
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

fn fill_slots(text: &str, bindings: &BTreeMap<String, String>) -> Result<String, RealizeError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let name = &after[..close];
        let value = bindings
            .get(name)
            .ok_or_else(|| RealizeError::UnboundSlot(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Splits marked-up text into spoken words and word-aligned gestures.
pub fn parse_markup(text: &str) -> Result<Utterance, RealizeError> {
    let mut words: Vec<&str> = Vec::new();
    let mut gestures = Vec::new();
    let mut rest = text;
    loop {
        let (spoken, marker) = match rest.find('[') {
            Some(i) => (&rest[..i], Some(&rest[i + 1..])),
            None => (rest, None),
        };
        words.extend(spoken.split_whitespace());
        let Some(after) = marker else { break };
        let close = after
            .find(']')
            .ok_or_else(|| RealizeError::BadMarker(after.to_string()))?;
        let inner: Vec<&str> = after[..close].split_whitespace().collect();
        let gesture = match inner.as_slice() {
            ["glance", obj] => Gesture::Glance(obj.to_string()),
            ["point", obj] => Gesture::Point(obj.to_string()),
            ["beat"] => Gesture::Beat,
            _ => return Err(RealizeError::BadMarker(after[..close].to_string())),
        };
        gestures.push(TimedGesture {
            word: words.len(),
            gesture,
        });
        rest = &after[close + 1..];
    }
    Ok(Utterance {
        text: words.join(" "),
        gestures,
    })
}

fn template_for<'a>(kind: TemplateKind, arg: &str, templates: &'a [GenerationTemplate]) -> Option<&'a GenerationTemplate> {
    templates
        .iter()
        .find(|t| t.kind == kind && t.arg.as_deref().is_none_or(|a| a == arg))
}

/// Realizes an act with gesture markers resolved. The first matching
/// template wins; otherwise a type-specific default is used.
pub fn realize_marked(
    act: &SemanticAct,
    templates: &[GenerationTemplate],
    bindings: &BTreeMap<String, String>,
) -> Result<Utterance, RealizeError> {
    let (surface, arg_name, arg) = match act {
        SemanticAct::Say(text) => (text.clone(), "", String::new()),
        SemanticAct::AskParameterValue(p) => match template_for(TemplateKind::Ask, p, templates) {
            Some(t) => (t.surface.clone(), "param", p.clone()),
            None => (format!("what is the {}?", p.replace('_', " ")), "", String::new()),
        },
        SemanticAct::ReformulateLook(o) => match template_for(TemplateKind::Reformulate, o, templates) {
            Some(t) => (t.surface.clone(), "object", o.clone()),
            None => (format!("Please look at the [glance {o}] {o}."), "", String::new()),
        },
        SemanticAct::AwaitEvidence(a) => match template_for(TemplateKind::Await, a, templates) {
            Some(t) => (t.surface.clone(), "act", a.clone()),
            None => (format!("I'm waiting for you to {a}."), "", String::new()),
        },
    };
    let filled = if arg_name.is_empty() {
        fill_slots(&surface, bindings)?
    } else {
        let mut b = bindings.clone();
        b.insert(arg_name.to_string(), arg.replace('_', " "));
        fill_slots(&surface, &b)?
    };
    parse_markup(&filled)
}

/// Realizes an act to its spoken text.
pub fn realize(
    act: &SemanticAct,
    templates: &[GenerationTemplate],
    bindings: &BTreeMap<String, String>,
) -> Result<String, RealizeError> {
    realize_marked(act, templates, bindings).map(|u| u.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_bindings() -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    #[test]
    fn default_parameter_query() {
        let got = realize(&SemanticAct::AskParameterValue("user_name".into()), &[], &no_bindings()).unwrap();
        assert_eq!(got, "what is the user name?");
    }

    #[test]
    fn template_overrides_default() {
        let templates = vec![GenerationTemplate {
            kind: TemplateKind::Ask,
            arg: Some("user_name".into()),
            surface: "What's your name?".into(),
        }];
        let got = realize(&SemanticAct::AskParameterValue("user_name".into()), &templates, &no_bindings()).unwrap();
        assert_eq!(got, "What's your name?");
    }

    #[test]
    fn first_matching_template_wins() {
        let templates = vec![
            GenerationTemplate { kind: TemplateKind::Ask, arg: None, surface: "Tell me the {param}.".into() },
            GenerationTemplate { kind: TemplateKind::Ask, arg: Some("user_name".into()), surface: "Name?".into() },
        ];
        let got = realize(&SemanticAct::AskParameterValue("user_name".into()), &templates, &no_bindings()).unwrap();
        assert_eq!(got, "Tell me the user name.");
    }

    #[test]
    fn literal_passthrough() {
        let got = realize(&SemanticAct::Say("So long!".into()), &[], &no_bindings()).unwrap();
        assert_eq!(got, "So long!");
    }

    #[test]
    fn unbound_slot() {
        let err = realize(&SemanticAct::Say("Bye, {user_name}.".into()), &[], &no_bindings()).unwrap_err();
        assert_eq!(err, RealizeError::UnboundSlot("user_name".into()));
        let mut b = no_bindings();
        b.insert("user_name".into(), "Sam".into());
        assert_eq!(realize(&SemanticAct::Say("Bye, {user_name}.".into()), &[], &b).unwrap(), "Bye, Sam.");
    }

    #[test]
    fn markup_alignment() {
        let u = parse_markup("Sam, right there [glance cup] is the  IGlassware cup. [beat]").unwrap();
        assert_eq!(u.text, "Sam, right there is the IGlassware cup.");
        assert_eq!(
            u.gestures,
            vec![
                TimedGesture { word: 3, gesture: Gesture::Glance("cup".into()) },
                TimedGesture { word: 7, gesture: Gesture::Beat },
            ]
        );
        assert!(parse_markup("look [wave]").is_err());
        assert!(parse_markup("look [glance cup").is_err());
    }
}
