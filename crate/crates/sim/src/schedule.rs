//! Common-list ranging schedule.

use relnav::ranging::{all_transceivers, TransactionPlan, TransceiverId};

/// Cyclic list of unordered transceiver pairs on distinct robots, in
/// lexicographic order. Roles swap on every other cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub pairs: Vec<(TransceiverId, TransceiverId)>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Roles of the `index`-th transaction since the start.
    pub fn plan(&self, index: usize, dt21: f64, dt31: f64) -> TransactionPlan {
        let (a, b) = self.pairs[index % self.pairs.len()];
        let (initiator, target) = if (index / self.pairs.len()).is_multiple_of(2) { (a, b) } else { (b, a) };
        TransactionPlan {
            initiator,
            target,
            dt21,
            dt31,
        }
    }
}

pub fn build_schedule(robots: usize) -> Schedule {
    let ids = all_transceivers(robots);
    let mut pairs = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if a.robot != b.robot {
                pairs.push((*a, *b));
            }
        }
    }
    Schedule { pairs }
}
