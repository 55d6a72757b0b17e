use super::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateOutcome {
    Triggered,
    NotTriggered,
}

/// Counts requests and decides when the orchestrator runs.
///
/// Once `epoch_ticks` requests have been seen, the strategy condition is
/// checked on every request until it holds; only then is the counter reset.
#[derive(Clone, Debug)]
pub struct EpochGate {
    epoch_ticks: u64,
    ticks: u64,
    triggers: u64,
}

impl EpochGate {
    pub fn new(epoch_ticks: u64) -> Self {
        assert!(epoch_ticks > 0, "epoch_ticks must be positive");
        EpochGate {
            epoch_ticks,
            ticks: 0,
            triggers: 0,
        }
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn triggers(&self) -> u64 {
        self.triggers
    }

    pub fn epoch_ticks(&self) -> u64 {
        self.epoch_ticks
    }

    /// Records one request. `condition` is only evaluated once the epoch has
    /// elapsed.
    pub fn on_request<F: FnOnce() -> bool>(&mut self, strategy: Strategy, condition: F) -> GateOutcome {
        self.ticks += 1;
        if strategy == Strategy::None || self.ticks < self.epoch_ticks {
            return GateOutcome::NotTriggered;
        }
        if strategy == Strategy::CpuWorkload || condition() {
            self.ticks = 0;
            self.triggers += 1;
            GateOutcome::Triggered
        } else {
            GateOutcome::NotTriggered
        }
    }
}
