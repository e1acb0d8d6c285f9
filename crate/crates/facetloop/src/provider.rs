//! Knowledge providers usable at serving time.

use std::sync::{mpsc, Arc};
use std::time::Duration;

use facetloop_core::context::{KnowledgeProvider, ProviderError};

/// Runs the inner lookup on a helper thread and gives up after `budget`.
/// A late answer is discarded.
pub struct DeadlineProvider {
    inner: Arc<dyn KnowledgeProvider>,
    budget: Duration,
}

impl DeadlineProvider {
    pub fn new(inner: Arc<dyn KnowledgeProvider>, budget: Duration) -> Self {
        Self { inner, budget }
    }
}

impl KnowledgeProvider for DeadlineProvider {
    fn lookup(&self, query: &str) -> Result<Vec<(String, f64)>, ProviderError> {
        let (tx, rx) = mpsc::sync_channel(1);
        let inner = Arc::clone(&self.inner);
        let query = query.to_string();
        std::thread::Builder::new()
            .name("trend-lookup".into())
            .spawn(move || {
                let _ = tx.send(inner.lookup(&query));
            })
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        match rx.recv_timeout(self.budget) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ProviderError::Timeout),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(ProviderError::Unavailable("lookup thread died".into())),
        }
    }
}
