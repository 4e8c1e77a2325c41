use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// Monotone counter of reward-function evaluations.
///
/// Only [`crate::envs::episodic_reward`] increments it. Rollouts running on
/// several threads share one ledger, so the count is atomic.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    calls: AtomicU64,
    events: Mutex<Vec<LedgerEvent>>,
}

/// Snapshot of the ledger total after a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEvent {
    pub step: u64,
    pub calls: u64,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub(crate) fn charge(&self, n: u64) {
        self.calls.fetch_add(n, Ordering::SeqCst);
    }

    /// Appends `(step, current total)` to the event log.
    pub fn mark(&self, step: u64) {
        let calls = self.calls();
        self.events
            .lock()
            .expect("ledger event log poisoned")
            .push(LedgerEvent { step, calls });
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.events.lock().expect("ledger event log poisoned").clone()
    }
}
