//! The classification prompt and its verdict schema.

use std::sync::OnceLock;

use unitarget_core::PersonaSpec;

pub const PERSONA_PLACEHOLDER: &str = "[PERSONA]";
pub const TEXT_PLACEHOLDER: &str = "[TEXT]";
pub const VERDICT_KEY: &str = "is_hate_speech";

/// User prompt with a `[PERSONA]` slot in the instructions, another in the
/// trailer, and one `[TEXT]` slot.
pub const TEMPLATE: &str = include_str!("../resources/prompt_template.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Persona,
    Text,
}

enum Segment {
    Literal(&'static str),
    Slot(Slot),
}

fn segments() -> &'static [Segment] {
    static SEGMENTS: OnceLock<Vec<Segment>> = OnceLock::new();
    SEGMENTS.get_or_init(|| {
        let mut out = Vec::new();
        let mut rest = TEMPLATE;
        loop {
            let next = [(PERSONA_PLACEHOLDER, Slot::Persona), (TEXT_PLACEHOLDER, Slot::Text)]
                .into_iter()
                .filter_map(|(p, slot)| rest.find(p).map(|i| (i, p.len(), slot)))
                .min_by_key(|&(i, _, _)| i);
            match next {
                Some((i, len, slot)) => {
                    out.push(Segment::Literal(&rest[..i]));
                    out.push(Segment::Slot(slot));
                    rest = &rest[i + len..];
                }
                None => {
                    out.push(Segment::Literal(rest));
                    return out;
                }
            }
        }
    })
}

/// Fills every placeholder of [`TEMPLATE`] in one pass. Substituted values
/// are inserted literally and never rescanned.
pub fn render_prompt(persona: &PersonaSpec, text: &str) -> String {
    let mut out = String::with_capacity(TEMPLATE.len() + 2 * persona.description.len() + text.len());
    for seg in segments() {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Slot(Slot::Persona) => out.push_str(&persona.description),
            Segment::Slot(Slot::Text) => out.push_str(text),
        }
    }
    out
}

/// Number of `(persona, text)` slots in the template.
pub fn slot_counts() -> (usize, usize) {
    let count = |slot| {
        segments()
            .iter()
            .filter(|s| matches!(s, Segment::Slot(x) if *x == slot))
            .count()
    };
    (count(Slot::Persona), count(Slot::Text))
}

/// `Some(verdict)` only for a JSON object whose single key is
/// `is_hate_speech` with the string value `"true"` or `"false"`.
pub fn validate_response(raw: &str) -> Option<bool> {
    let value: serde_json::Value = serde_json::from_str(raw.trim()).ok()?;
    let obj = value.as_object()?;
    if obj.len() != 1 {
        return None;
    }
    match obj.get(VERDICT_KEY)?.as_str()? {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use unitarget_core::Side;

    fn persona(description: &str) -> PersonaSpec {
        PersonaSpec {
            persona_id: "p".into(),
            description: description.into(),
            side: Side::Left,
        }
    }

    #[test]
    fn template_has_two_persona_slots_and_one_text_slot() {
        assert_eq!(slot_counts(), (2, 1));
    }

    #[test]
    fn render_fills_all_slots() {
        let out = render_prompt(&persona("a retired farmer"), "hello");
        assert_eq!(out.matches("a retired farmer").count(), 2);
        assert!(out.contains("Text: hello\n"));
        assert!(out.contains(r#"- is_hate_speech (string): Must be one of "true" or "false"."#));
        assert!(!out.contains(PERSONA_PLACEHOLDER) && !out.contains(TEXT_PLACEHOLDER));
    }

    #[test]
    fn render_length_arithmetic() {
        let (p, t) = ("someone", "");
        let out = render_prompt(&persona(p), t);
        let expected = TEMPLATE.len() - 2 * PERSONA_PLACEHOLDER.len() - TEXT_PLACEHOLDER.len() + 2 * p.len() + t.len();
        assert_eq!(out.len(), expected);
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let out = render_prompt(&persona("x"), "contains [PERSONA] literally");
        assert!(out.contains("Text: contains [PERSONA] literally"));
    }

    #[test]
    fn validation_examples() {
        assert_eq!(validate_response(r#"{"is_hate_speech": "true"}"#), Some(true));
        assert_eq!(validate_response("\n{\n    \"is_hate_speech\": \"false\"\n}\n  "), Some(false));
        assert_eq!(validate_response(r#"{"is_hate_speech": true}"#), None);
        assert_eq!(validate_response(r#"{"is_hate_speech": "True"}"#), None);
        assert_eq!(validate_response(r#"{"is_hate_speech": "true", "why": "x"}"#), None);
        assert_eq!(validate_response(r#"["true"]"#), None);
        assert_eq!(validate_response(r#"Sure! {"is_hate_speech": "true"}"#), None);
        assert_eq!(validate_response(""), None);
    }
}
