//! Reply schemas for JSON-producing prompts.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const DECOMPOSITION: &str = "decomposition";
pub const EXTRACTION: &str = "extraction";
pub const FOLLOWUPS: &str = "followups";
pub const JUDGE_STATEMENTS: &str = "judge_statements";
pub const JUDGE_CLAIMS: &str = "judge_claims";
pub const JUDGE_RELEVANCE: &str = "judge_relevance";

pub const ALL: &[&str] = &[DECOMPOSITION, EXTRACTION, FOLLOWUPS, JUDGE_STATEMENTS, JUDGE_CLAIMS, JUDGE_RELEVANCE];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQueryReply {
    pub text: String,
    #[serde(default)]
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReply {
    pub sub_queries: Vec<SubQueryReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityReply {
    pub name: String,
    #[serde(default)]
    pub entity_type: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReply {
    pub head: String,
    pub tail: String,
    pub relation_type: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateReply {
    pub target: String,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionReply {
    #[serde(default)]
    pub entities: Vec<EntityReply>,
    #[serde(default)]
    pub relations: Vec<RelationReply>,
    #[serde(default)]
    pub covariates: Vec<CovariateReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupsReply {
    pub questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementVerdict {
    pub text: String,
    pub attributable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementsReply {
    pub statements: Vec<StatementVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub text: String,
    pub truthful: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimsReply {
    pub claims: Vec<ClaimVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReply {
    pub verdicts: Vec<u8>,
}

/// Strips an optional markdown code fence and surrounding prose, returning
/// the outermost JSON object.
pub fn extract_json(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

fn typed<T: DeserializeOwned>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| e.to_string())
}

/// Validates `reply` against `schema_id`, returning the bare JSON on success.
pub fn validate(schema_id: &str, reply: &str) -> Result<String, String> {
    let json = extract_json(reply).ok_or_else(|| "no JSON object found".to_string())?;
    match schema_id {
        DECOMPOSITION => {
            let r: DecompositionReply = typed(json)?;
            if r.sub_queries.is_empty() {
                return Err("sub_queries is empty".into());
            }
            if r.sub_queries.iter().any(|s| s.text.trim().is_empty()) {
                return Err("sub-query text is empty".into());
            }
        }
        EXTRACTION => {
            let r: ExtractionReply = typed(json)?;
            if r.entities.iter().any(|e| e.name.trim().is_empty()) {
                return Err("entity name is empty".into());
            }
            for rel in &r.relations {
                if rel.head.trim().is_empty() || rel.tail.trim().is_empty() || rel.relation_type.trim().is_empty() {
                    return Err("relation with empty head, tail or type".into());
                }
                if let Some(c) = rel.confidence {
                    if !(0.0..=1.0).contains(&c) {
                        return Err(format!("confidence {c} outside [0, 1]"));
                    }
                }
            }
            if r.covariates.iter().any(|c| c.target.trim().is_empty() || c.key.trim().is_empty()) {
                return Err("covariate with empty target or key".into());
            }
        }
        FOLLOWUPS => {
            typed::<FollowupsReply>(json)?;
        }
        JUDGE_STATEMENTS => {
            typed::<StatementsReply>(json)?;
        }
        JUDGE_CLAIMS => {
            typed::<ClaimsReply>(json)?;
        }
        JUDGE_RELEVANCE => {
            let r: RelevanceReply = typed(json)?;
            if r.verdicts.iter().any(|v| *v > 1) {
                return Err("verdicts must be 0 or 1".into());
            }
        }
        other => return Err(format!("unknown schema `{other}`")),
    }
    Ok(json.to_string())
}

/// Parses JSON that already passed [`validate`].
pub fn parse<T: DeserializeOwned>(json: &str) -> Result<T, String> {
    typed(json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_json_is_accepted() {
        let reply = "```json\n{\"sub_queries\":[{\"text\":\"a\",\"intent\":\"x\"}]}\n```";
        assert_eq!(validate(DECOMPOSITION, reply).unwrap(), "{\"sub_queries\":[{\"text\":\"a\",\"intent\":\"x\"}]}");
    }

    #[test]
    fn rejects_bad_records() {
        assert!(validate(DECOMPOSITION, "{\"sub_queries\":[]}").is_err());
        assert!(validate(
            EXTRACTION,
            "{\"relations\":[{\"head\":\"a\",\"tail\":\"b\",\"relation_type\":\"r\",\"confidence\":1.5}]}"
        )
        .is_err());
        assert!(validate(JUDGE_RELEVANCE, "{\"verdicts\":[1,2]}").is_err());
        assert!(validate("nope", "{}").is_err());
        assert!(validate(FOLLOWUPS, "no json here").is_err());
    }

    #[test]
    fn extraction_lists_default_empty() {
        let json = validate(EXTRACTION, "{}").unwrap();
        let r: ExtractionReply = parse(&json).unwrap();
        assert_eq!(r, ExtractionReply::default());
    }
}
