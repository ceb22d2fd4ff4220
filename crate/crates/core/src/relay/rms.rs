use std::collections::VecDeque;

use crate::grid::Measurement;

/// Sliding-window RMS front end for one measurement channel.
///
/// Voltage and current are reported as the root of the windowed mean
/// square, power as the windowed mean. The window is seeded with the first
/// sample, so a steady input reads back unchanged from the first call.
#[derive(Debug, Clone)]
pub struct SlidingRms {
    len: usize,
    buf: VecDeque<[f64; 3]>,
    sum: [f64; 3],
    since_resum: usize,
}

impl SlidingRms {
    /// `len` samples per window; a length of 0 or 1 passes samples through.
    pub fn new(len: usize) -> Self {
        Self {
            len: len.max(1),
            buf: VecDeque::with_capacity(len.max(1)),
            sum: [0.0; 3],
            since_resum: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    pub fn clear(&mut self) {
        self.buf.clear();
        self.sum = [0.0; 3];
        self.since_resum = 0;
    }

    pub fn push(&mut self, m: &Measurement) -> Measurement {
        let x = [m.v_rms * m.v_rms, m.i_rms * m.i_rms, m.p];
        if self.buf.is_empty() {
            self.buf.extend(std::iter::repeat_n(x, self.len));
            self.sum = x.map(|c| c * self.len as f64);
        } else {
            let old = self.buf.pop_front().expect("window is full");
            self.buf.push_back(x);
            for c in 0..3 {
                self.sum[c] += x[c] - old[c];
            }
            self.since_resum += 1;
            // Re-sum once per full window so rounding cannot accumulate.
            if self.since_resum >= self.len {
                self.since_resum = 0;
                self.sum = [0.0; 3];
                for s in &self.buf {
                    for c in 0..3 {
                        self.sum[c] += s[c];
                    }
                }
            }
        }
        let n = self.len as f64;
        Measurement {
            t: m.t,
            v_rms: (self.sum[0] / n).max(0.0).sqrt(),
            i_rms: (self.sum[1] / n).max(0.0).sqrt(),
            p: self.sum[2] / n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(v: f64, i: f64, p: f64) -> Measurement {
        Measurement { t: 0.0, v_rms: v, i_rms: i, p }
    }

    #[test]
    fn steady_input_reads_back_exactly() {
        let mut w = SlidingRms::new(64);
        for _ in 0..500 {
            let out = w.push(&m(239.6, 14.0, 9000.0));
            assert!((out.v_rms - 239.6).abs() < 1e-12);
            assert!((out.i_rms - 14.0).abs() < 1e-12);
            assert!((out.p - 9000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn step_ramps_in_over_one_window() {
        let mut w = SlidingRms::new(4);
        w.push(&m(0.0, 0.0, 0.0));
        let outs: Vec<f64> = (0..5).map(|_| w.push(&m(2.0, 0.0, 8.0)).p).collect();
        assert_eq!(outs, vec![2.0, 4.0, 6.0, 8.0, 8.0]);
        let mut w = SlidingRms::new(4);
        w.push(&m(0.0, 0.0, 0.0));
        w.push(&m(2.0, 0.0, 0.0));
        // sqrt(mean of {0, 0, 0, 4}) = 1
        assert!((w.push(&m(0.0, 0.0, 0.0)).v_rms - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_window_passes_through() {
        let mut w = SlidingRms::new(0);
        assert_eq!(w.window_len(), 1);
        assert_eq!(w.push(&m(3.0, 4.0, 5.0)), m(3.0, 4.0, 5.0));
        assert_eq!(w.push(&m(1.0, 2.0, -5.0)), m(1.0, 2.0, -5.0));
    }

    proptest! {
        #[test]
        fn running_sum_matches_direct_mean(
            len in 1usize..40,
            xs in prop::collection::vec((0.0f64..400.0, 0.0f64..100.0, -1e4f64..1e4), 1..200),
        ) {
            let mut w = SlidingRms::new(len);
            let mut hist: Vec<(f64, f64, f64)> = Vec::new();
            for &(v, i, p) in &xs {
                let out = w.push(&m(v, i, p));
                if hist.is_empty() {
                    hist.extend(std::iter::repeat_n((v, i, p), len));
                } else {
                    hist.remove(0);
                    hist.push((v, i, p));
                }
                let n = len as f64;
                let v_ref = (hist.iter().map(|s| s.0 * s.0).sum::<f64>() / n).sqrt();
                let p_ref = hist.iter().map(|s| s.2).sum::<f64>() / n;
                prop_assert!((out.v_rms - v_ref).abs() <= 1e-9 * (1.0 + v_ref));
                prop_assert!((out.p - p_ref).abs() <= 1e-8 * (1.0 + p_ref.abs()));
            }
        }
    }
}
