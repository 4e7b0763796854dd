//! Per-thread multiply-accumulate counters, used to measure how attention
//! cost scales with the bucket period.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacKind {
    /// Within-period (offset) attention logits and the mode-1 product.
    OffsetAttention,
    /// Across-period (aligned) attention logits and the mode-2 product.
    AlignedAttention,
    /// Every other dense contraction.
    Dense,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCounts {
    pub offset_attention: u64,
    pub aligned_attention: u64,
    pub dense: u64,
}

thread_local! {
    static COUNTS: Cell<MacCounts> = const { Cell::new(MacCounts { offset_attention: 0, aligned_attention: 0, dense: 0 }) };
}

pub fn record(kind: MacKind, n: u64) {
    COUNTS.with(|c| {
        let mut v = c.get();
        match kind {
            MacKind::OffsetAttention => v.offset_attention += n,
            MacKind::AlignedAttention => v.aligned_attention += n,
            MacKind::Dense => v.dense += n,
        }
        c.set(v);
    });
}

pub fn reset() {
    COUNTS.with(|c| c.set(MacCounts::default()));
}

pub fn snapshot() -> MacCounts {
    COUNTS.with(Cell::get)
}
