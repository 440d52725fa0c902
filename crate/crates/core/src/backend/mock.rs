use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_length, Backend, BackendError, Capability};
use crate::encoding::{squared_distance, FeatureEncoder};
use crate::prompt::{PromptPayload, PromptTemplate, RenderedPrompt};
use crate::tabular::{FeatureValue, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockParams {
    pub model: String,
    /// Penalty on the score of minority queries, scaled by the share of
    /// majority records among the demonstrations.
    pub beta: f64,
    pub threshold: f64,
    /// Linear zero-shot weights keyed by numeric feature name or
    /// `feature=category`. Empty means weight 1 on every numeric feature.
    pub weights: BTreeMap<String, f64>,
    pub max_prompt_chars: usize,
}

impl Default for MockParams {
    fn default() -> Self {
        MockParams {
            model: "mock".into(),
            beta: 0.0,
            threshold: 0.5,
            weights: BTreeMap::new(),
            max_prompt_chars: 1_000_000,
        }
    }
}

/// Deterministic stand-in for a language model. Zero-shot it thresholds a
/// linear score; with demonstrations it takes an inverse-distance weighted
/// vote of their labels. Neither rule looks at the sensitive attribute except
/// through `beta`.
#[derive(Debug, Clone)]
pub struct MockModel {
    encoder: FeatureEncoder,
    weights: Vec<f64>,
    params: MockParams,
    options: [String; 2],
    /// Model name plus a fingerprint of the parameters and training data, so
    /// cached answers are never shared between different fits.
    model_id: String,
}

impl MockModel {
    pub fn fit(train: &[SampleRecord], template: &PromptTemplate, params: MockParams) -> Result<Self, BackendError> {
        if train.is_empty() {
            return Err(BackendError::Config("mock model needs training records".into()));
        }
        let encoder = FeatureEncoder::fit(train);
        let mut weights = vec![0.0; encoder.dim()];
        if params.weights.is_empty() {
            for name in encoder.feature_names() {
                if let Some(slot) = encoder.numeric_slot(name) {
                    weights[slot] = 1.0;
                }
            }
        } else {
            for (key, &w) in &params.weights {
                let slot = match key.split_once('=') {
                    Some((f, c)) => encoder.category_slot(f, c),
                    None => encoder.numeric_slot(key),
                };
                let slot = slot
                    .ok_or_else(|| BackendError::Config(format!("mock weight {key:?} matches no encoded feature")))?;
                weights[slot] = w;
            }
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&params).expect("params serialize"));
        h.update(serde_json::to_vec(train).expect("records serialize"));
        let model_id = format!("{}-{}", params.model, &hex::encode(h.finalize())[..12]);
        Ok(MockModel {
            encoder,
            weights,
            model_id,
            params,
            options: [template.option(0).to_string(), template.option(1).to_string()],
        })
    }

    pub fn params(&self) -> &MockParams {
        &self.params
    }

    pub fn zero_shot_score(&self, features: &[(String, FeatureValue)]) -> f64 {
        let x = self.encoder.encode(features);
        x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() - self.params.threshold
    }

    /// Weighted label vote in [-1, 1]; weights are `1 / (1e-6 + distance)`.
    pub fn vote(&self, demos: &[SampleRecord], features: &[(String, FeatureValue)]) -> f64 {
        let q = self.encoder.encode(features);
        let (mut num, mut den) = (0.0, 0.0);
        for d in demos {
            let w = 1.0 / (1e-6 + squared_distance(&q, &self.encoder.encode(&d.features)).sqrt());
            num += w * (2.0 * f64::from(d.y) - 1.0);
            den += w;
        }
        num / den
    }

    /// Decision score; the answer is positive iff it is above zero.
    pub fn score(&self, payload: &PromptPayload) -> f64 {
        let demos = &payload.demonstrations;
        let q = &payload.query;
        let (base, minority_share) = if demos.is_empty() {
            (self.zero_shot_score(&q.features), 0.0)
        } else {
            let share = demos.iter().filter(|d| d.z == 0).count() as f64 / demos.len() as f64;
            (self.vote(demos, &q.features), share)
        };
        let penalty = match q.z {
            Some(0) => self.params.beta * (1.0 - minority_share),
            _ => 0.0,
        };
        base - penalty
    }

    pub fn predict(&self, payload: &PromptPayload) -> u8 {
        u8::from(self.score(payload) > 0.0)
    }
}

impl Backend for MockModel {
    fn describe(&self) -> Capability {
        Capability {
            model: self.model_id.clone(),
            max_prompt_chars: self.params.max_prompt_chars,
        }
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        check_length(&self.describe(), prompt)?;
        Ok(self.options[self.predict(&prompt.payload) as usize].clone())
    }
}
