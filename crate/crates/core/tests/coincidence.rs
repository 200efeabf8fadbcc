use approx::assert_relative_eq;
use phononmem::coincidence::{
    analyze_peaks, classicality_z, count_pairs, count_triples, delay_histogram, g2_from_counts, write_histogram_csv,
    write_tally_csv, CoincidenceTally,
};
use phononmem::model::ExperimentConfig;
use phononmem::montecarlo::{simulate, Channel, SimOptions, Sink, TimeTag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn tag(channel: Channel, time_fs: u64) -> TimeTag {
    TimeTag {
        channel,
        pulse_index: time_fs / 12_500_000,
        time_fs,
        flags: 0,
    }
}

fn merge(mut parts: Vec<TimeTag>) -> Vec<TimeTag> {
    parts.sort_by_key(|t| (t.time_fs, t.channel));
    parts
}

/// Each `a` in order takes the earliest unused `b` in its window, by full scan.
fn brute_pairs(a: &[u64], b: &[u64], window_fs: i128, delay_fs: i128) -> u64 {
    let mut used = vec![false; b.len()];
    let mut n = 0;
    for &ta in a {
        let hit = (0..b.len()).find(|&j| !used[j] && (b[j] as i128 - ta as i128 - delay_fs).abs() * 2 <= window_fs);
        if let Some(j) = hit {
            used[j] = true;
            n += 1;
        }
    }
    n
}

fn sorted_times(rng: &mut ChaCha20Rng, n: usize, span: u64, min_gap: u64) -> Vec<u64> {
    let mut t = 0;
    (0..n)
        .map(|_| {
            t += min_gap + rng.random_range(0..span);
            t
        })
        .collect()
}

proptest! {
    #[test]
    fn two_pointer_matches_brute_force(
        seed in any::<u64>(),
        na in 0usize..500,
        nb in 0usize..500,
        window_ps in 1u64..50,
        delay_ps in -30i64..30,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = sorted_times(&mut rng, na, 40_000, 0);
        let b = sorted_times(&mut rng, nb, 40_000, 0);
        let stream = merge(
            a.iter().map(|&t| tag(Channel::Herald, t))
                .chain(b.iter().map(|&t| tag(Channel::Signal1, t)))
                .collect(),
        );
        let fast = count_pairs(&stream, Channel::Herald, Channel::Signal1, window_ps as f64, delay_ps as f64).unwrap();
        let slow = brute_pairs(&a, &b, i128::from(window_ps) * 1000, i128::from(delay_ps) * 1000);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn g2_is_scale_invariant(
        n_h in 1u64..1_000_000,
        n1 in 1u64..10_000,
        n2 in 1u64..10_000,
        n12 in 0u64..100,
        c in 1u64..50,
    ) {
        let t = |k: u64| CoincidenceTally { n_h: n_h * k, n_h1: n1 * k, n_h2: n2 * k, n_h12: n12 * k, ..Default::default() };
        let (v1, s1) = g2_from_counts(&t(1)).unwrap();
        let (vc, sc) = g2_from_counts(&t(c)).unwrap();
        prop_assert!((v1 - vc).abs() <= 1e-12 * v1.abs());
        prop_assert!((sc * (c as f64).sqrt() - s1).abs() <= 1e-9 * s1.abs().max(1e-300));
    }
}

#[test]
fn histogram_total_equals_pair_counts_over_bins() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let bin_fs = 200u64;
    let range_fs = 10_000u64;
    // Even herald times, odd signal times: no delay lands on a bin edge. Gaps
    // wider than a bin keep every bin window free of competing matches.
    let h: Vec<u64> = sorted_times(&mut rng, 300, 3_000, 2 * bin_fs)
        .iter()
        .map(|t| 2 * t)
        .collect();
    let s1: Vec<u64> = sorted_times(&mut rng, 300, 3_000, 2 * bin_fs)
        .iter()
        .map(|t| 2 * t + 1)
        .collect();
    let s2: Vec<u64> = sorted_times(&mut rng, 300, 3_000, 2 * bin_fs)
        .iter()
        .map(|t| 2 * t + 1)
        .collect();
    let stream = merge(
        h.iter()
            .map(|&t| tag(Channel::Herald, t))
            .chain(s1.iter().map(|&t| tag(Channel::Signal1, t)))
            .chain(s2.iter().map(|&t| tag(Channel::Signal2, t)))
            .collect(),
    );
    let hist = delay_histogram(&stream, bin_fs as f64 / 1e3, range_fs as f64 / 1e6).unwrap();
    assert_eq!(hist.counts.len(), 100);
    let mut by_bins = 0;
    for i in 0..hist.counts.len() {
        let centre = hist.bin_center_ps(i);
        for ch in [Channel::Signal1, Channel::Signal2] {
            by_bins += count_pairs(&stream, Channel::Herald, ch, bin_fs as f64 / 1e3, centre).unwrap();
        }
    }
    assert!(hist.total() > 100);
    assert_eq!(hist.total(), by_bins);
}

#[test]
fn accidental_rate_of_independent_streams() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let duration_fs = 2_000_000_000_000u64;
    let (r1, r2) = (2e-9, 3e-9);
    let poisson = |rng: &mut ChaCha20Rng, rate: f64| {
        let mut t = 0.0;
        let mut out = Vec::new();
        loop {
            t += -rng.random::<f64>().ln() / rate;
            if t >= duration_fs as f64 {
                return out;
            }
            out.push(t as u64);
        }
    };
    let a = poisson(&mut rng, r1);
    let b = poisson(&mut rng, r2);
    let stream = merge(
        a.iter()
            .map(|&t| tag(Channel::Herald, t))
            .chain(b.iter().map(|&t| tag(Channel::Signal1, t)))
            .collect(),
    );
    let window_fs = 1_000_000.0;
    let expected = r1 * r2 * window_fs * duration_fs as f64;
    let n = count_pairs(&stream, Channel::Herald, Channel::Signal1, window_fs / 1e3, 0.0).unwrap() as f64;
    assert!((n - expected).abs() <= 4.0 * expected.sqrt(), "{n} vs {expected}");
}

#[test]
fn unsorted_streams_are_rejected() {
    let stream = vec![tag(Channel::Herald, 10), tag(Channel::Herald, 5)];
    assert!(count_pairs(&stream, Channel::Herald, Channel::Signal1, 1.0, 0.0).is_err());
    assert!(count_triples(&stream, 1.0).is_err());
    assert!(delay_histogram(&stream, 1.0, 1.0).is_err());
}

#[test]
fn g2_065_with_error_007_is_five_sigma() {
    assert_relative_eq!(classicality_z(0.65, 0.07).unwrap(), 5.0, max_relative = 1e-12);
}

#[test]
fn noise_only_peaks_share_a_common_height() {
    let cfg = ExperimentConfig {
        input_blocked: true,
        ..ExperimentConfig::default()
    };
    let tags = simulate(&cfg, 1_000_000_000, 5, Sink::TimeTags, &SimOptions::default())
        .unwrap()
        .tags
        .unwrap();
    let hist = delay_histogram(&tags, 156.25, 100.0).unwrap();
    let peaks = analyze_peaks(&hist, 12.5).unwrap();
    assert_eq!(peaks.spacing_ns, 12.5);
    // Bins start at a multiple of T, so offset by half a period to centre each cell on a peak.
    let period_bins = 80;
    assert_eq!(hist.counts.len(), 16 * period_bins);
    let cells: Vec<f64> = (0..15)
        .map(|k| {
            let lo = k * period_bins + period_bins / 2;
            hist.counts[lo..lo + period_bins].iter().sum::<u64>() as f64
        })
        .collect();
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    assert!(mean > 50.0);
    for (k, c) in cells.iter().enumerate() {
        assert!((c - mean).abs() <= 4.0 * mean.sqrt(), "peak {k}: {c} vs {mean}");
    }
}

#[test]
fn csv_emitters() {
    let mut buf = Vec::new();
    let t = CoincidenceTally {
        n_h: 100,
        n_h1: 20,
        n_h2: 50,
        n_h12: 10,
        ..Default::default()
    };
    write_tally_csv(&t, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().lines().next(),
        Some("N_h,N_h1,N_h2,N_h12,g2,sigma")
    );
    let stream = vec![tag(Channel::Herald, 0), tag(Channel::Signal1, 100_000)];
    let hist = delay_histogram(&stream, 156.25, 1.0).unwrap();
    let mut buf = Vec::new();
    write_histogram_csv(&hist, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("delay_ns,counts"));
    assert!(text.contains("0.078125,1"));
}
