use std::collections::BTreeMap;

use phononmem::model::{ExperimentConfig, Stage};
use phononmem::montecarlo::{
    read_tag_stream, simulate, simulate_range, simulate_skipping, write_tag_stream, Channel, SimOptions, Sink,
    TallySet, TimeTag, TAG_HEADER_BYTES,
};
use phononmem::photostat::PulseModel;
use phononmem::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Geometric, Poisson};

/// Busy configuration: many multi-photon and dark events per pulse.
fn busy() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.source.mean_pairs_mu = 0.05;
    cfg.source.herald_click_prob_per_pair = 0.4;
    cfg.source.signal_heralding_eff = 0.5;
    cfg.laser.write_energy_nj = 12.5;
    cfg.laser.read_energy_nj = 40.0;
    cfg.detectors.signal1.efficiency = 0.5;
    cfg.detectors.signal2.efficiency = 0.3;
    cfg.noise.fwm_coinc_cps = 3e4;
    for d in [
        &mut cfg.detectors.herald,
        &mut cfg.detectors.signal1,
        &mut cfg.detectors.signal2,
    ] {
        d.dark_cps = 2e5;
    }
    cfg
}

fn opts(workers: usize, chunk: u64) -> SimOptions {
    SimOptions {
        workers,
        chunk_pulses: chunk,
    }
}

#[test]
fn nothing_to_detect_gives_empty_output() {
    let mut cfg = ExperimentConfig::default();
    cfg.source.mean_pairs_mu = 0.0;
    cfg.noise.thermal_enabled = false;
    cfg.noise.fwm_enabled = false;
    for d in [
        &mut cfg.detectors.herald,
        &mut cfg.detectors.signal1,
        &mut cfg.detectors.signal2,
    ] {
        d.dark_cps = 0.0;
    }
    let r = simulate(&cfg, 1_000_000, 3, Sink::TimeTags, &SimOptions::default()).unwrap();
    assert_eq!(r.p_any, 0.0);
    assert!(r.tags.unwrap().is_empty());
    assert_eq!(
        r.tallies,
        TallySet {
            pulses: 1_000_000,
            ..TallySet::default()
        }
    );
}

#[test]
fn zero_pulses_is_rejected() {
    let cfg = ExperimentConfig::default();
    assert!(simulate(&cfg, 0, 1, Sink::TalliesOnly, &SimOptions::default()).is_err());
}

#[test]
fn workers_and_chunks_do_not_change_results() {
    let cfg = busy();
    let base = simulate(&cfg, 3_000_000, 11, Sink::TimeTags, &opts(1, 1 << 26)).unwrap();
    for o in [opts(8, 1 << 18), opts(3, 777_777), opts(1, 65_536)] {
        let r = simulate(&cfg, 3_000_000, 11, Sink::TimeTags, &o).unwrap();
        assert_eq!(r.tallies, base.tallies);
        assert_eq!(r.tags, base.tags);
    }
}

#[test]
fn contiguous_ranges_merge_to_a_single_run() {
    let cfg = busy();
    let n = 2_000_000;
    let (whole, whole_tags) = simulate_range(&cfg, 5, 0, n, Sink::TimeTags).unwrap();
    let cuts = [0, 1, 99_999, 1_000_003, 1_500_000, n];
    let mut merged = TallySet::default();
    let mut tags = Vec::new();
    for w in cuts.windows(2) {
        let (t, s) = simulate_range(&cfg, 5, w[0], w[1], Sink::TimeTags).unwrap();
        merged.merge(&t);
        tags.extend(s.unwrap());
    }
    assert_eq!(merged, whole);
    assert_eq!(Some(tags), whole_tags);
}

#[test]
fn skipping_engine_is_bit_identical_to_naive() {
    for cfg in [ExperimentConfig::default(), busy()] {
        let naive = simulate(&cfg, 1_000_000, 42, Sink::TalliesOnly, &SimOptions::default()).unwrap();
        let skip = simulate_skipping(&cfg, 1_000_000, 42, &SimOptions::default()).unwrap();
        assert!(!skip.fell_back);
        assert_eq!(naive.tallies, skip.tallies);
    }
}

#[test]
fn skipping_falls_back_when_events_are_common() {
    let mut cfg = busy();
    cfg.detectors.herald.dark_cps = 5e7;
    let skip = simulate_skipping(&cfg, 200_000, 9, &SimOptions::default()).unwrap();
    assert!(skip.fell_back && skip.p_any > 0.1);
    let naive = simulate(&cfg, 200_000, 9, Sink::TalliesOnly, &SimOptions::default()).unwrap();
    assert_eq!(naive.tallies, skip.tallies);

    // Every pulse active.
    cfg.detectors.herald.dark_cps = 1e12;
    let skip = simulate_skipping(&cfg, 50_000, 9, &SimOptions::default()).unwrap();
    let naive = simulate(&cfg, 50_000, 9, Sink::TalliesOnly, &SimOptions::default()).unwrap();
    assert_eq!(skip.p_any, 1.0);
    assert_eq!(naive.tallies, skip.tallies);
}

#[test]
fn same_seed_same_output_and_different_seed_differs() {
    let cfg = busy();
    let a = simulate(&cfg, 500_000, 1, Sink::TimeTags, &SimOptions::default()).unwrap();
    let b = simulate(&cfg, 500_000, 1, Sink::TimeTags, &SimOptions::default()).unwrap();
    let c = simulate(&cfg, 500_000, 2, Sink::TimeTags, &SimOptions::default()).unwrap();
    assert_eq!(a.tags, b.tags);
    assert_ne!(a.tags, c.tags);
}

fn per_channel(tags: &[TimeTag]) -> BTreeMap<Channel, Vec<u64>> {
    let mut m: BTreeMap<Channel, Vec<u64>> = BTreeMap::new();
    for t in tags {
        m.entry(t.channel).or_default().push(t.time_fs);
    }
    m
}

#[test]
fn dead_time_and_ordering_hold_per_channel() {
    let mut cfg = busy();
    cfg.detectors.herald.dark_cps = 5e6;
    cfg.detectors.signal1.dead_time_ns = 23.0;
    let r = simulate(&cfg, 2_000_000, 4, Sink::TimeTags, &opts(1, 300_000)).unwrap();
    let tags = r.tags.unwrap();
    let period = cfg.laser.period_fs();
    for t in &tags {
        assert_eq!(t.time_fs / period, t.pulse_index);
    }
    for (ch, times) in per_channel(&tags) {
        let dead = match ch {
            Channel::Signal1 => 23_000_000,
            _ => 50_000_000,
        };
        assert!(times.windows(2).all(|w| w[1] - w[0] >= dead), "{ch:?}");
    }
    let singles: u64 = r.tallies.singles.iter().sum();
    assert_eq!(singles, tags.len() as u64);
}

#[test]
fn dead_time_zero_matches_exact_probabilities() {
    let mut cfg = busy();
    for d in [
        &mut cfg.detectors.herald,
        &mut cfg.detectors.signal1,
        &mut cfg.detectors.signal2,
    ] {
        d.dead_time_ns = 0.0;
    }
    let n = 4_000_000u64;
    let p = PulseModel::new(&cfg).unwrap().channel_probs();
    let t = simulate_skipping(&cfg, n, 21, &SimOptions::default()).unwrap().tallies;
    let check = |name: &str, count: u64, p: f64| {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let emp = count as f64 / n as f64;
        assert!((emp - p).abs() <= 4.0 * se, "{name}: {emp:e} vs {p:e} (se {se:e})");
    };
    check("herald", t.singles[0], p.p_herald);
    check("s1", t.singles[1], p.p_s1);
    check("s2", t.singles[2], p.p_s2);
    check("h1", t.n_h1, p.p_h1);
    check("h2", t.n_h2, p.p_h2);
    check("h12", t.n_h12, p.p_h12);
    check("12", t.n_12, p.p_12);
}

/// Click pattern of every pulse by literal per-photon sampling.
fn reference_patterns(cfg: &ExperimentConfig, n: u64, seed: u64) -> [u64; 8] {
    let m = PulseModel::new(cfg).unwrap();
    assert_eq!(m.pair_modes, 1.0);
    assert_eq!(m.noise_modes, 1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let thermal = |mean: f64| Geometric::new(1.0 / (1.0 + mean)).unwrap();
    let pairs = thermal(m.pair_mean);
    let noise = thermal(m.noise_mean);
    let darks: Vec<Poisson<f64>> = m.dark_mean.iter().map(|&d| Poisson::new(d).unwrap()).collect();
    let mut out = [0u64; 8];
    for _ in 0..n {
        let mut bits = 0u8;
        for _ in 0..pairs.sample(&mut rng) {
            if rng.random::<f64>() < m.herald_eff {
                bits |= 1;
            }
            if rng.random::<f64>() < m.signal_transfer {
                let arm = usize::from(rng.random::<bool>());
                if rng.random::<f64>() < m.arm_eff[arm] {
                    bits |= 2 << arm;
                }
            }
        }
        for _ in 0..noise.sample(&mut rng) {
            let arm = usize::from(rng.random::<bool>());
            if rng.random::<f64>() < m.arm_eff[arm] {
                bits |= 2 << arm;
            }
        }
        for (c, d) in darks.iter().enumerate() {
            if d.sample(&mut rng) > 0.0 {
                bits |= 1 << c;
            }
        }
        out[bits as usize] += 1;
    }
    out
}

#[test]
fn conditional_sampler_matches_literal_sampling() {
    let mut cfg = busy();
    for d in [
        &mut cfg.detectors.herald,
        &mut cfg.detectors.signal1,
        &mut cfg.detectors.signal2,
    ] {
        d.dead_time_ns = 0.0;
    }
    cfg.stage = Stage::MemoryOutput;
    let n = 2_000_000;
    let reference = reference_patterns(&cfg, n, 77);
    let tags = simulate(&cfg, n, 77, Sink::TimeTags, &SimOptions::default())
        .unwrap()
        .tags
        .unwrap();
    let mut by_pulse: BTreeMap<u64, u8> = BTreeMap::new();
    for t in &tags {
        *by_pulse.entry(t.pulse_index).or_default() |= 1 << t.channel.index();
    }
    let mut sim = [0u64; 8];
    sim[0] = n - by_pulse.len() as u64;
    for bits in by_pulse.values() {
        sim[*bits as usize] += 1;
    }
    for k in 1..8 {
        let (a, b) = (sim[k] as f64, reference[k] as f64);
        assert!(
            (a - b).abs() <= 5.0 * (a + b).sqrt().max(1.0),
            "pattern {k:03b}: {a} vs {b}"
        );
    }
}

#[test]
fn tag_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tags.bin");
    let cfg = busy();
    let tags = simulate(&cfg, 300_000, 8, Sink::TimeTags, &SimOptions::default())
        .unwrap()
        .tags
        .unwrap();
    assert!(!tags.is_empty());
    write_tag_stream(&tags, cfg.laser.period_fs(), &path).unwrap();
    let (back, period) = read_tag_stream(&path).unwrap();
    assert_eq!(back, tags);
    assert_eq!(period, cfg.laser.period_fs());

    write_tag_stream(&[], 12_500_000, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), TAG_HEADER_BYTES as u64);
    assert!(read_tag_stream(&path).unwrap().0.is_empty());
}

#[test]
fn corrupt_tag_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tags.bin");
    let tag = TimeTag {
        channel: Channel::Signal2,
        pulse_index: 3,
        time_fs: 3 * 12_500_000 + 17,
        flags: 2,
    };
    write_tag_stream(&[tag, tag], 12_500_000, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_tag_stream(&path), Err(Error::Format(_))));

    let mut bad = good.clone();
    bad[4] = 2;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_tag_stream(&path), Err(Error::Format(_))));

    std::fs::write(&path, &good[..good.len() - 5]).unwrap();
    assert!(matches!(
        read_tag_stream(&path),
        Err(Error::Truncated { expected: 2, found: 1 })
    ));
}

#[test]
fn timestamps_beyond_u64_are_an_overflow_error() {
    let cfg = ExperimentConfig::default();
    let start = u64::MAX / cfg.laser.period_fs() + 10;
    let err = simulate_range(&cfg, 1, start, start + 2_000_000, Sink::TimeTags).unwrap_err();
    assert!(matches!(err, Error::Overflow(_)));
    let (t, _) = simulate_range(&cfg, 1, start, start + 2_000_000, Sink::TalliesOnly).unwrap();
    assert!(t.n_h() > 0);
}
