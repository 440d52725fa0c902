//! Prediction backends: a remote chat-completions client and a local mock
//! classifier behind one trait, plus caching, rate limiting and batching.

mod cache;
mod mock;
mod ratelimit;
mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RenderedPrompt;

pub use cache::{CacheStats, CachedBackend, ResponseCache};
pub use mock::{MockModel, MockParams};
pub use ratelimit::TokenBucket;
pub use remote::{RemoteBackend, RemoteConfig};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("prompt has {len} characters, backend accepts at most {max}")]
    TooLong { len: usize, max: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("empty prompt batch")]
    EmptyBatch,
    #[error("all {0} prompts in the batch failed")]
    AllFailed(usize),
}

impl BackendError {
    /// Worth another attempt: transport failures, throttling and server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub model: String,
    pub max_prompt_chars: usize,
}

pub trait Backend: Send + Sync {
    fn describe(&self) -> Capability;
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn describe(&self) -> Capability {
        (**self).describe()
    }
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn describe(&self) -> Capability {
        (**self).describe()
    }
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn describe(&self) -> Capability {
        (**self).describe()
    }
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

pub fn check_length(cap: &Capability, prompt: &RenderedPrompt) -> Result<(), BackendError> {
    let len = prompt.text.chars().count();
    if len > cap.max_prompt_chars {
        return Err(BackendError::TooLong {
            len,
            max: cap.max_prompt_chars,
        });
    }
    Ok(())
}

/// Complete every prompt with at most `max_in_flight` concurrent calls.
/// Results line up with `prompts`; a failed item does not stop the others.
pub fn predict_batch<B: Backend + ?Sized>(
    backend: &B,
    prompts: &[RenderedPrompt],
    max_in_flight: usize,
) -> Result<Vec<Result<String, BackendError>>, BackendError> {
    if prompts.is_empty() {
        return Err(BackendError::EmptyBatch);
    }
    let cap = backend.describe();
    let workers = max_in_flight.clamp(1, prompts.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<String, BackendError>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(prompt) = prompts.get(i) else { break };
                let out = check_length(&cap, prompt).and_then(|_| backend.complete(prompt));
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });

    let results: Vec<Result<String, BackendError>> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect();
    if results.iter().all(Result::is_err) {
        return Err(BackendError::AllFailed(results.len()));
    }
    Ok(results)
}
