//! Versioned prompt templates with named `{placeholder}` slots.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub text: &'static str,
}

macro_rules! templates {
    ($($name:ident => $id:literal),* $(,)?) => {
        $(pub const $name: Template = Template {
            id: $id,
            text: include_str!(concat!("../templates/", $id, ".txt")),
        };)*
        pub const ALL: &[Template] = &[$($name),*];
    };
}

templates! {
    DECOMPOSE => "decompose.v1",
    EXTRACT_HIGH_LEVEL => "extract.high_level.v1",
    EXTRACT_MID_LEVEL => "extract.mid_level.v1",
    EXTRACT_LOW_LEVEL => "extract.low_level.v1",
    EXTRACT_COVARIATE => "extract.covariate.v1",
    REWRITE => "rewrite.v1",
    NAIVE => "naive.v1",
    REFINE => "refine.v1",
    CONDENSE => "condense.v1",
    FOLLOWUP => "followup.v1",
    JUDGE_STATEMENTS => "judge.statements.v1",
    JUDGE_CLAIMS => "judge.claims.v1",
    JUDGE_RELEVANCE => "judge.relevance.v1",
}

impl Template {
    /// Substitutes each `{name}` with its value. Braces that do not name a
    /// supplied variable are left alone, so JSON examples survive.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            let hit = tail.find('}').and_then(|close| {
                let key = &tail[1..close];
                vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
            });
            match hit {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &tail[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// Renders an empty section as `(none)`.
pub fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_known_placeholders_only() {
        let out = CONDENSE.render(&[("query", "Q?"), ("refined_answer", "A [1].")]);
        assert!(out.contains("Question: Q?"));
        assert!(out.contains("A [1]."));
        assert!(!out.contains("{query}"));
        let json = FOLLOWUP.render(&[("query", "q"), ("history", "h"), ("refined_answer", "a")]);
        assert!(json.contains("{\"questions\": [\"...\"]}"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let out = REWRITE.render(&[("query", "{graph_facts}"), ("graph_facts", "F")]);
        assert!(out.contains("Question: {graph_facts}"));
    }

    #[test]
    fn template_ids_are_unique() {
        let mut ids: Vec<_> = ALL.iter().map(|t| t.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), ALL.len());
    }
}
