//! Bounded hand-off between the source and the inference worker.
//!
//! Skip markers travel through the same queue as frames so the worker can
//! emit everything in source order.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Instant;

use super::backend::FrameHandle;
use super::{OverflowPolicy, SkipReason};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Admitted {
    pub handle: FrameHandle,
    pub enqueued: Instant,
}

#[derive(Debug)]
enum Slot {
    Frame(Admitted),
    Skip(FrameHandle, SkipReason),
}

#[derive(Debug, Default)]
struct Inner {
    slots: VecDeque<Slot>,
    queued_frames: usize,
    processing: bool,
    closed: bool,
    peak_in_flight: usize,
    peak_slots: usize,
}

impl Inner {
    fn in_flight(&self) -> usize {
        self.queued_frames + usize::from(self.processing)
    }

    fn note_peaks(&mut self) {
        self.peak_in_flight = self.peak_in_flight.max(self.in_flight());
        self.peak_slots = self.peak_slots.max(self.slots.len());
    }
}

/// What the worker takes in one go: skips that precede the frame, then the frame.
#[derive(Debug, Default)]
pub(crate) struct Batch {
    pub skips: Vec<(FrameHandle, SkipReason)>,
    pub frame: Option<Admitted>,
    /// Frames in flight once this one is taken, itself included.
    pub in_flight: usize,
}

#[derive(Debug)]
pub(crate) struct FrameBuffer {
    inner: Mutex<Inner>,
    cv: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
}

impl FrameBuffer {
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            cv: Condvar::new(),
            capacity: capacity.max(1),
            policy,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Queues a frame. Returns `false` if the buffer was closed meanwhile.
    pub fn push_frame(&self, admitted: Admitted) -> bool {
        let mut g = self.lock();
        match self.policy {
            OverflowPolicy::Block => {
                while g.in_flight() >= self.capacity && !g.closed {
                    g = self.cv.wait(g).unwrap_or_else(|e| e.into_inner());
                }
                if g.closed {
                    return false;
                }
            }
            OverflowPolicy::DropOldest => {
                while g.in_flight() >= self.capacity {
                    let oldest = g.slots.iter_mut().find(|s| matches!(s, Slot::Frame(_)));
                    match oldest {
                        Some(slot) => {
                            let Slot::Frame(a) = *slot else { unreachable!() };
                            *slot = Slot::Skip(a.handle, SkipReason::Overflow);
                            g.queued_frames -= 1;
                        }
                        None => {
                            // Capacity is taken by the frame being processed.
                            g.slots.push_back(Slot::Skip(admitted.handle, SkipReason::Overflow));
                            g.note_peaks();
                            self.cv.notify_all();
                            return !g.closed;
                        }
                    }
                }
            }
        }
        g.slots.push_back(Slot::Frame(admitted));
        g.queued_frames += 1;
        g.note_peaks();
        self.cv.notify_all();
        true
    }

    pub fn push_skip(&self, handle: FrameHandle, reason: SkipReason) {
        let mut g = self.lock();
        g.slots.push_back(Slot::Skip(handle, reason));
        g.note_peaks();
        self.cv.notify_all();
    }

    /// Blocks until there is work; `None` once closed and drained.
    ///
    /// Under [`OverflowPolicy::DropOldest`] the newest queued frame wins and
    /// any older queued frames become overflow skips.
    pub fn take(&self) -> Option<Batch> {
        let mut g = self.lock();
        while g.slots.is_empty() {
            if g.closed {
                return None;
            }
            g = self.cv.wait(g).unwrap_or_else(|e| e.into_inner());
        }
        let latest_wins = self.policy == OverflowPolicy::DropOldest;
        let frame_pos = if latest_wins {
            g.slots.iter().rposition(|s| matches!(s, Slot::Frame(_)))
        } else {
            g.slots.iter().position(|s| matches!(s, Slot::Frame(_)))
        };
        let upto = frame_pos.map_or(g.slots.len(), |p| p + 1);

        let mut batch = Batch::default();
        let mut frames_taken = 0;
        for (i, slot) in g.slots.drain(..upto).enumerate() {
            match slot {
                Slot::Skip(h, r) => batch.skips.push((h, r)),
                Slot::Frame(a) if Some(i) == frame_pos => {
                    frames_taken += 1;
                    batch.frame = Some(a);
                }
                // Passed over on the way to the newest frame.
                Slot::Frame(a) => {
                    frames_taken += 1;
                    batch.skips.push((a.handle, SkipReason::Overflow));
                }
            }
        }
        g.queued_frames -= frames_taken;
        if batch.frame.is_some() {
            g.processing = true;
        }
        batch.in_flight = g.in_flight();
        self.cv.notify_all();
        Some(batch)
    }

    /// The frame taken last has left the worker.
    pub fn done(&self) {
        let mut g = self.lock();
        g.processing = false;
        self.cv.notify_all();
    }

    pub fn close(&self) {
        let mut g = self.lock();
        g.closed = true;
        self.cv.notify_all();
    }

    pub fn peaks(&self) -> (usize, usize) {
        let g = self.lock();
        (g.peak_in_flight, g.peak_slots)
    }
}
