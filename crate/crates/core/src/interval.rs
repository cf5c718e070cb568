//! Closed angular intervals and the measure of their union.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AngularInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Total length covered by the union of `intervals` (sort, then sweep).
/// The slice is reordered in place.
pub fn union_measure(intervals: &mut [AngularInterval]) -> f64 {
    if intervals.is_empty() {
        return 0.0;
    }
    intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
    let mut total = 0.0;
    let mut cur = intervals[0];
    for iv in &intervals[1..] {
        if iv.lo <= cur.hi {
            cur.hi = cur.hi.max(iv.hi);
        } else {
            total += cur.width();
            cur = *iv;
        }
    }
    total + cur.width()
}
