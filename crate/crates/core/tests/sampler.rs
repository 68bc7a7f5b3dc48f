use speechunits::manifest::{Gender, Kind, Manifest, UtteranceRecord};
use speechunits::pipeline::schedule_text;
use speechunits::sampler::{
    compose_corpus, epoch_schedule, expected_natural_fraction, schedule_indices, MixSpec,
    SamplerError, WeightMode, WeightedSampler,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn pool(prefix: &str, n: usize, kind: Kind) -> Manifest {
    Manifest::new(
        (0..n)
            .map(|i| {
                UtteranceRecord::new(
                    format!("{prefix}{i}"),
                    format!("{prefix}{i}.wav"),
                    1.0 + (i % 5) as f64,
                    "s",
                    Gender::Female,
                    kind,
                )
            })
            .collect(),
    )
    .unwrap()
}

fn class_weights(n_nat: usize, n_syn: usize, r: f64) -> Vec<f64> {
    let mut w = vec![r; n_nat];
    w.extend(std::iter::repeat_n(1.0, n_syn));
    w
}

fn natural_fraction(n_nat: usize, n_syn: usize, r: f64, draws: usize, seed: u64) -> f64 {
    let s = WeightedSampler::new(&class_weights(n_nat, n_syn, r)).unwrap();
    let idx = schedule_indices(&s, draws, seed, 0);
    idx.iter().filter(|&&i| i < n_nat).count() as f64 / draws as f64
}

#[test]
fn uniform_case() {
    let f = natural_fraction(500, 500, 1.0, 100_000, 1);
    assert!((f - 0.5).abs() < 0.01, "{f}");
}

#[test]
fn closed_form_fraction() {
    assert_eq!(expected_natural_fraction(9.0, 100, 900), 0.5);
    let f = natural_fraction(100, 900, 9.0, 100_000, 2);
    assert!((f - 0.5).abs() < 0.01, "{f}");
}

#[test]
fn large_rate_large_pool() {
    let n_nat = 29_721;
    let n_syn = 110 * n_nat;
    let want = expected_natural_fraction(100.0, n_nat, n_syn);
    let f = natural_fraction(n_nat, n_syn, 100.0, 100_000, 3);
    assert!((f - want).abs() < 0.01, "{f} vs {want}");
}

#[test]
fn within_class_frequencies_are_uniform() {
    let (n_nat, n_syn) = (40, 160);
    let s = WeightedSampler::new(&class_weights(n_nat, n_syn, 4.0)).unwrap();
    let draws = 1_000_000;
    let mut counts = vec![0u64; n_nat + n_syn];
    for i in schedule_indices(&s, draws, 7, 0) {
        counts[i] += 1;
    }
    for range in [0..n_nat, n_nat..n_nat + n_syn] {
        let c = &counts[range.clone()];
        let total: u64 = c.iter().sum();
        let expected = total as f64 / c.len() as f64;
        let stat: f64 = c
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        let crit = ChiSquared::new((c.len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(stat < crit, "class {range:?}: chi2 {stat} >= {crit}");
    }
}

#[test]
fn compose_examples() {
    let nat = pool("n", 2, Kind::Natural);
    let syn = pool("s", 3, Kind::Synthetic);
    let spec = MixSpec {
        natural: &nat,
        synthetic: &syn,
        oversampling_rate: 1.0,
        epoch_size: 10,
        seed: 0,
        mode: WeightMode::Utterance,
    };
    let m = compose_corpus(&spec).unwrap();
    assert_eq!(m.len(), 5);
    assert!(m.records.iter().all(|r| r.weight == Some(1.0)));
    for r in [2.5, 9.0, 100.0] {
        let m = compose_corpus(&MixSpec {
            oversampling_rate: r,
            ..spec.clone()
        })
        .unwrap();
        let sum: f64 = m.records.iter().map(|x| x.weight.unwrap()).sum();
        assert_eq!(sum, r * 2.0 + 3.0);
    }
    let dup = pool("n", 1, Kind::Synthetic);
    let err = compose_corpus(&MixSpec {
        synthetic: &dup,
        ..spec
    })
    .unwrap_err();
    assert_eq!(err, SamplerError::IdCollision("n0".into()));
    assert!(err.to_string().contains("n0"));
}

#[test]
fn support_is_invariant_under_rate() {
    let nat = pool("n", 5, Kind::Natural);
    let syn = pool("s", 7, Kind::Synthetic);
    let mut supports = Vec::new();
    for r in [1.0, 3.0, 50.0] {
        let spec = MixSpec {
            natural: &nat,
            synthetic: &syn,
            oversampling_rate: r,
            epoch_size: 1,
            seed: 0,
            mode: WeightMode::Utterance,
        };
        let m = compose_corpus(&spec).unwrap();
        let s: Vec<String> = m
            .records
            .iter()
            .filter(|x| x.weight.unwrap() > 0.0)
            .map(|x| x.id.clone())
            .collect();
        supports.push(s);
        // even with a high rate every synthetic utterance still gets drawn
        let ids = epoch_schedule(
            &MixSpec {
                epoch_size: 200_000,
                ..spec
            },
            0,
        )
        .unwrap();
        for r in nat.records.iter().chain(&syn.records) {
            assert!(ids.contains(&r.id), "{} never drawn at rate {r:?}", r.id);
        }
    }
    assert!(supports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn duration_mode_weights() {
    let nat = pool("n", 5, Kind::Natural);
    let syn = pool("s", 5, Kind::Synthetic);
    let spec = MixSpec {
        natural: &nat,
        synthetic: &syn,
        oversampling_rate: 2.0,
        epoch_size: 1,
        seed: 0,
        mode: WeightMode::Duration,
    };
    let m = compose_corpus(&spec).unwrap();
    for r in &m.records {
        let scale = if r.kind == Kind::Natural { 2.0 } else { 1.0 };
        assert_eq!(r.weight, Some(scale * r.duration_sec));
    }
}

#[test]
fn schedules_are_identical_across_thread_counts() {
    let nat = pool("n", 30, Kind::Natural);
    let syn = pool("s", 70, Kind::Synthetic);
    let spec = MixSpec {
        natural: &nat,
        synthetic: &syn,
        oversampling_rate: 3.0,
        epoch_size: 1000,
        seed: 11,
        mode: WeightMode::Utterance,
    };
    let merged = compose_corpus(&spec).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| schedule_text(&merged, 1000, 6, 11).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one.lines().count(), 6000);
    let epoch3: Vec<String> = one
        .lines()
        .filter(|l| l.starts_with("3\t"))
        .map(|l| l[2..].to_string())
        .collect();
    assert_eq!(epoch3, epoch_schedule(&spec, 3).unwrap());
}

#[test]
fn sampler_errors() {
    assert_eq!(
        WeightedSampler::new(&[]).unwrap_err(),
        SamplerError::EmptyPool("weighted")
    );
    assert!(matches!(
        WeightedSampler::new(&[1.0, -1.0]),
        Err(SamplerError::BadWeight { index: 1, .. })
    ));
    assert!(matches!(
        WeightedSampler::new(&[f64::NAN]),
        Err(SamplerError::BadWeight { index: 0, .. })
    ));
    let nat = pool("n", 1, Kind::Natural);
    let syn = pool("s", 1, Kind::Synthetic);
    let spec = MixSpec {
        natural: &nat,
        synthetic: &syn,
        oversampling_rate: 2.0,
        epoch_size: 0,
        seed: 0,
        mode: WeightMode::Utterance,
    };
    assert_eq!(
        epoch_schedule(&spec, 0).unwrap_err(),
        SamplerError::ZeroEpoch
    );
    let spec = MixSpec {
        epoch_size: 1,
        oversampling_rate: f64::INFINITY,
        ..spec
    };
    assert!(matches!(
        compose_corpus(&spec),
        Err(SamplerError::BadRate(_))
    ));
}
