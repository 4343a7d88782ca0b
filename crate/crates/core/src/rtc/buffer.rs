//! Single-producer single-consumer triple buffer.
//!
//! Three slots: the producer owns one, the consumer owns one, and the third is
//! the shared "back" slot. Publishing swaps the producer's slot into the back
//! position with a fresh flag; reading swaps the back slot into the consumer's
//! position when the flag is set. Both sides are single atomic swaps, so the
//! reader never waits and never sees a slot that is being written.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

const INDEX_MASK: u8 = 0b011;
const FRESH: u8 = 0b100;

struct Shared<T> {
    slots: [UnsafeCell<Option<T>>; 3],
    back: AtomicU8,
}

// Slots are only touched by the side that currently owns their index; ownership
// moves exclusively through the atomic swap on `back`.
unsafe impl<T: Send> Sync for Shared<T> {}
unsafe impl<T: Send> Send for Shared<T> {}

pub struct ChunkWriter<T> {
    shared: Arc<Shared<T>>,
    index: u8,
}

pub struct ChunkReader<T> {
    shared: Arc<Shared<T>>,
    index: u8,
}

/// Creates the two ends of an empty buffer.
pub fn chunk_buffer<T: Send>() -> (ChunkWriter<T>, ChunkReader<T>) {
    let shared = Arc::new(Shared { slots: [UnsafeCell::new(None), UnsafeCell::new(None), UnsafeCell::new(None)], back: AtomicU8::new(1) });
    (ChunkWriter { shared: shared.clone(), index: 0 }, ChunkReader { shared, index: 2 })
}

impl<T: Send> ChunkWriter<T> {
    /// Publishes `value` as a whole; a later publish replaces an unread one.
    pub fn publish(&mut self, value: T) {
        // SAFETY: `self.index` is owned by the writer until swapped out below.
        unsafe {
            *self.shared.slots[self.index as usize].get() = Some(value);
        }
        let old = self.shared.back.swap(self.index | FRESH, Ordering::AcqRel);
        self.index = old & INDEX_MASK;
    }
}

impl<T: Send> ChunkReader<T> {
    /// Takes the most recently published value if one arrived since the last call.
    /// Never blocks.
    pub fn take_fresh(&mut self) -> Option<T> {
        if self.shared.back.load(Ordering::Acquire) & FRESH == 0 {
            return None;
        }
        let old = self.shared.back.swap(self.index, Ordering::AcqRel);
        self.index = old & INDEX_MASK;
        // SAFETY: the swap transferred ownership of `self.index` to the reader.
        unsafe { (*self.shared.slots[self.index as usize].get()).take() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_then_latest_wins() {
        let (mut w, mut r) = chunk_buffer::<u32>();
        assert_eq!(r.take_fresh(), None);
        w.publish(1);
        w.publish(2);
        assert_eq!(r.take_fresh(), Some(2));
        assert_eq!(r.take_fresh(), None);
        w.publish(3);
        assert_eq!(r.take_fresh(), Some(3));
    }

    /// Every observed chunk must be internally consistent: its checksum row
    /// matches its payload, and sequence numbers never go backwards.
    #[test]
    fn stress_reader_never_sees_torn_chunks() {
        const N: u64 = 200_000;
        let (mut w, mut r) = chunk_buffer::<Vec<u64>>();
        let producer = std::thread::spawn(move || {
            for seq in 1..=N {
                let mut chunk: Vec<u64> = (0..16).map(|i| seq.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(i)).collect();
                let sum = chunk.iter().fold(0u64, |a, b| a.wrapping_add(*b));
                chunk.push(sum);
                chunk.push(seq);
                w.publish(chunk);
            }
        });
        let mut last = 0;
        let mut seen = 0u64;
        loop {
            if let Some(chunk) = r.take_fresh() {
                let seq = chunk[17];
                let sum = chunk[..16].iter().fold(0u64, |a, b| a.wrapping_add(*b));
                assert_eq!(sum, chunk[16], "torn chunk at seq {seq}");
                for (i, v) in chunk[..16].iter().enumerate() {
                    assert_eq!(*v, seq.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(i as u32));
                }
                assert!(seq > last);
                last = seq;
                seen += 1;
                if seq == N {
                    break;
                }
            } else {
                std::hint::spin_loop();
            }
        }
        producer.join().unwrap();
        assert!(seen >= 1);
    }
}
