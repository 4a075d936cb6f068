//! Virtual clock. Every store call made on behalf of a worker advances
//! that worker's lane by a fixed transaction overhead plus a per-row and
//! per-byte cost, which keeps timing results deterministic.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Cost of opening and committing one store transaction.
pub const TXN_OVERHEAD: u64 = 5;
/// Cost of reading or writing one row inside a transaction.
pub const ROW_COST: u64 = 1;
/// Bytes transferred per unit of cost.
pub const BYTES_PER_UNIT: u64 = 64 * 1024;

/// Cost of one transaction touching `rows` rows and `bytes` bytes.
pub fn txn_cost(rows: u64, bytes: u64) -> u64 {
    TXN_OVERHEAD + rows * ROW_COST + bytes / BYTES_PER_UNIT
}

#[derive(Clone, Debug, Default)]
pub struct Meter(Arc<AtomicU64>);

impl Meter {
    pub fn new() -> Self {
        Meter::default()
    }

    pub fn starting_at(t: u64) -> Self {
        Meter(Arc::new(AtomicU64::new(t)))
    }

    pub fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn advance(&self, units: u64) -> u64 {
        self.0.fetch_add(units, Ordering::SeqCst) + units
    }

    /// Moves the lane forward to `t` if it is behind.
    pub fn catch_up(&self, t: u64) -> u64 {
        self.0.fetch_max(t, Ordering::SeqCst).max(t)
    }

    /// Charges one transaction touching `rows` rows and `bytes` bytes.
    pub fn txn(&self, rows: u64, bytes: u64) -> u64 {
        self.advance(txn_cost(rows, bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn txn_cost_composition() {
        let m = Meter::new();
        assert_eq!(m.txn(2, 3 * BYTES_PER_UNIT), TXN_OVERHEAD + 2 + 3);
        assert_eq!(m.catch_up(100), 100);
        assert_eq!(m.catch_up(50), 100);
        let lane = m.clone();
        lane.advance(1);
        assert_eq!(m.now(), 101);
    }
}
