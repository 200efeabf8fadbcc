use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pulses per activity block.
pub const BLOCK_PULSES: u64 = 1 << 16;

/// Counter-based variate source.
///
/// Every random number is a pure function of (seed, stream, position): event
/// variates of pulse `i` come from the ChaCha8 stream `i` under the event key,
/// activity gaps of block `b` from stream `b` under the gap key.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    event_key: [u8; 32],
    gap_key: [u8; 32],
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut event_key = [0u8; 32];
        let mut gap_key = [0u8; 32];
        master.fill_bytes(&mut event_key);
        master.fill_bytes(&mut gap_key);
        Self {
            seed,
            event_key,
            gap_key,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator positioned at the first variate of pulse `pulse`.
    pub fn pulse(&self, pulse: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.event_key);
        rng.set_stream(pulse);
        rng
    }

    /// The `j`-th 64-bit variate of pulse `pulse`.
    pub fn variate(&self, pulse: u64, j: u64) -> u64 {
        let mut rng = self.pulse(pulse);
        rng.set_word_pos(u128::from(j) * 2);
        rng.next_u64()
    }

    fn block(&self, block: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.gap_key);
        rng.set_stream(block);
        rng
    }

    /// Appends the active pulses of `block` (a Bernoulli(`p`) process) to `out`, in order.
    pub fn active_pulses(&self, block: u64, p: f64, out: &mut Vec<u64>) {
        if p <= 0.0 {
            return;
        }
        let start = block * BLOCK_PULSES;
        let end = start + BLOCK_PULSES;
        if p >= 1.0 {
            out.extend(start..end);
            return;
        }
        let mut rng = self.block(block);
        let ln_q = (-p).ln_1p();
        let mut next = start;
        loop {
            // Failures before the next success; u ∈ (0, 1].
            let u = 1.0 - rng.random::<f64>();
            let gap = (u.ln() / ln_q).floor();
            if gap >= (end - next) as f64 {
                return;
            }
            next += gap as u64;
            out.push(next);
            next += 1;
            if next >= end {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variates_are_counter_based() {
        let s = RandomStream::new(7);
        let mut rng = s.pulse(123);
        let seq: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        for (j, v) in seq.iter().enumerate() {
            assert_eq!(s.variate(123, j as u64), *v);
        }
        assert_eq!(RandomStream::new(7).variate(123, 3), seq[3]);
        assert_ne!(RandomStream::new(8).variate(123, 3), seq[3]);
        assert_ne!(s.variate(124, 3), seq[3]);
    }

    #[test]
    fn activity_rate_and_order() {
        let s = RandomStream::new(1);
        let p = 0.01;
        let mut v = Vec::new();
        for b in 0..40 {
            s.active_pulses(b, p, &mut v);
        }
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        let n = 40.0 * BLOCK_PULSES as f64;
        let expect = n * p;
        assert!((v.len() as f64 - expect).abs() < 4.0 * (expect * (1.0 - p)).sqrt());
        let mut all = Vec::new();
        s.active_pulses(3, 1.0, &mut all);
        assert_eq!(all.len() as u64, BLOCK_PULSES);
        let mut none = Vec::new();
        s.active_pulses(3, 0.0, &mut none);
        assert!(none.is_empty());
    }
}
