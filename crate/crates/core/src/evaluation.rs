//! Render, predict and parse one demonstration set against a query set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{predict_batch, Backend, BackendError};
use crate::metrics::{MetricsError, PredictionBatch};
use crate::prompt::{parse_answer, render, AbstainReason, ParsedAnswer, PromptTemplate, RenderedPrompt, TemplateError};
use crate::tabular::SampleRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One query's trace: enough to rebuild the metrics without the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: u64,
    pub y: u8,
    pub z: u8,
    pub prompt_hash: String,
    pub raw: Option<String>,
    pub error: Option<String>,
    pub parsed: ParsedAnswer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcomes: Vec<SampleOutcome>,
    pub batch: PredictionBatch,
}

pub fn render_all(
    template: &PromptTemplate,
    demos: &[SampleRecord],
    queries: &[SampleRecord],
) -> Result<Vec<RenderedPrompt>, TemplateError> {
    queries.iter().map(|q| render(template, demos, q)).collect()
}

/// Backend failures on single items count as abstentions.
pub fn evaluate_demonstrations<B: Backend + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    demos: &[SampleRecord],
    queries: &[SampleRecord],
    max_in_flight: usize,
) -> Result<Evaluation, EvalError> {
    let prompts = render_all(template, demos, queries)?;
    let responses = predict_batch(backend, &prompts, max_in_flight)?;
    let outcomes: Vec<SampleOutcome> = queries
        .iter()
        .zip(&prompts)
        .zip(responses)
        .map(|((q, p), r)| {
            let (raw, error, parsed) = match r {
                Ok(text) => {
                    let parsed = parse_answer(&text, template);
                    (Some(text), None, parsed)
                }
                Err(e) => (None, Some(e.to_string()), ParsedAnswer::Abstain(AbstainReason::NoMatch)),
            };
            SampleOutcome {
                id: q.id,
                y: q.y,
                z: q.z,
                prompt_hash: p.hash.clone(),
                raw,
                error,
                parsed,
            }
        })
        .collect();
    let batch = batch_from_outcomes(&outcomes)?;
    Ok(Evaluation { outcomes, batch })
}

pub fn batch_from_outcomes(outcomes: &[SampleOutcome]) -> Result<PredictionBatch, MetricsError> {
    PredictionBatch::new(
        outcomes.iter().map(|o| o.id).collect(),
        outcomes.iter().map(|o| o.parsed.label()).collect(),
        outcomes.iter().map(|o| o.y).collect(),
        outcomes.iter().map(|o| o.z).collect(),
    )
}
