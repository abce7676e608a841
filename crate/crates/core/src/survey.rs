use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::experiment::{ResponseType, SurveyQuestion};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurveyError {
    #[error("missing response to required question `{0}`")]
    MissingResponse(String),
    #[error("question `{0}` is not part of this survey")]
    UnknownQuestion(String),
    #[error("invalid response to `{question_id}`: {reason}")]
    InvalidResponse {
        question_id: String,
        reason: &'static str,
    },
}

fn check_value(question: &SurveyQuestion, value: &Value) -> Result<(), &'static str> {
    match question.response_type {
        ResponseType::Likert7 => match value.as_i64() {
            Some(1..=7) => Ok(()),
            _ => Err("expected an integer from 1 to 7"),
        },
        ResponseType::Numeric => match value.as_f64() {
            Some(x) if x.is_finite() => Ok(()),
            _ => Err("expected a number"),
        },
        ResponseType::FreeText => match value {
            Value::String(_) => Ok(()),
            _ => Err("expected a string"),
        },
    }
}

/// Checks responses against the question list. `null` counts as no answer.
/// Returns the responses with nulls dropped.
pub fn validate_responses(
    questions: &[SurveyQuestion],
    responses: &BTreeMap<String, Value>,
) -> Result<BTreeMap<String, Value>, SurveyError> {
    if let Some(unknown) = responses
        .keys()
        .find(|k| !questions.iter().any(|q| &q.question_id == *k))
    {
        return Err(SurveyError::UnknownQuestion(unknown.clone()));
    }
    let mut clean = BTreeMap::new();
    for q in questions {
        match responses.get(&q.question_id) {
            None | Some(Value::Null) if q.required => {
                return Err(SurveyError::MissingResponse(q.question_id.clone()))
            }
            None | Some(Value::Null) => {}
            Some(v) => {
                check_value(q, v).map_err(|reason| SurveyError::InvalidResponse {
                    question_id: q.question_id.clone(),
                    reason,
                })?;
                clean.insert(q.question_id.clone(), v.clone());
            }
        }
    }
    Ok(clean)
}

/// Export representation: strings verbatim, everything else as JSON text.
pub fn response_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
