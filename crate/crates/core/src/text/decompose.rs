use super::{
    build_prompt, cache_key, parse_decomposition, rule_fallback, CompletionClient,
    DecompositionCache, PartTexts, PromptSpec, TextSource,
};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecomposeOptions {
    /// Attempts against the service before falling back.
    pub retries: usize,
    /// Never touch the network; use the keyword fallback.
    pub offline: bool,
    /// Fail instead of falling back when the service cannot produce a
    /// parsable answer.
    pub strict: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            retries: 3,
            offline: false,
            strict: false,
        }
    }
}

/// Caption decomposition with cache, retries and offline fallback.
pub struct Decomposer {
    spec: PromptSpec,
    client: Option<Box<dyn CompletionClient>>,
    cache: Option<DecompositionCache>,
    options: DecomposeOptions,
}

impl Decomposer {
    pub fn new(
        spec: PromptSpec,
        client: Option<Box<dyn CompletionClient>>,
        cache: Option<DecompositionCache>,
        options: DecomposeOptions,
    ) -> Self {
        Self {
            spec,
            client,
            cache,
            options,
        }
    }

    /// Offline decomposer with the bundled prompt and no cache.
    pub fn offline() -> Self {
        Self::new(
            PromptSpec::bundled(),
            None,
            None,
            DecomposeOptions {
                offline: true,
                ..Default::default()
            },
        )
    }

    pub fn prompt_version(&self) -> &str {
        &self.spec.version
    }

    pub fn options(&self) -> DecomposeOptions {
        self.options
    }

    /// Cache hit, else service query (up to `retries` attempts), else the
    /// keyword fallback. Service answers and post-exhaustion fallbacks are
    /// cached; offline fallbacks are not, so a later online run still
    /// queries the service.
    pub fn decompose(&self, caption: &str) -> Result<PartTexts> {
        let key = cache_key(&self.spec.version, caption);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        let client = match (&self.client, self.options.offline) {
            (Some(c), false) => c,
            _ => {
                if self.options.strict && !self.options.offline {
                    return Err(Error::Client("no completion client configured".into()));
                }
                return Ok(rule_fallback(caption));
            }
        };
        let prompt = build_prompt(&self.spec, caption)?;
        let mut last_error = None;
        for attempt in 1..=self.options.retries {
            match client
                .complete(&prompt)
                .and_then(|raw| parse_decomposition(&raw).map_err(Error::from))
            {
                Ok(texts) => {
                    let texts = texts.with_source(TextSource::Llm);
                    self.store(&key, &texts)?;
                    return Ok(texts);
                }
                Err(e) => {
                    log::warn!("decomposition attempt {attempt} for {caption:?} failed: {e}");
                    last_error = Some(e);
                }
            }
        }
        if self.options.strict {
            return Err(Error::Client(format!(
                "no usable decomposition after {} attempts: {}",
                self.options.retries,
                last_error.map_or_else(|| "no attempts made".into(), |e| e.to_string())
            )));
        }
        let texts = rule_fallback(caption);
        self.store(&key, &texts)?;
        Ok(texts)
    }

    fn store(&self, key: &str, texts: &PartTexts) -> Result<()> {
        match &self.cache {
            Some(cache) => cache.put(key, texts),
            None => Ok(()),
        }
    }

    /// Decomposes many captions, possibly concurrently, in input order.
    pub fn decompose_all(&self, captions: &[String], exec: Execution) -> Result<Vec<PartTexts>> {
        exec.try_map(captions.len(), |i| self.decompose(&captions[i]))
    }
}
