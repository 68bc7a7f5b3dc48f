use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechunits::pitch::PitchTrack;
use speechunits::targets::{
    group_units, prepare_predictor_targets, prepare_t2u_target, restore_durations, ungroup,
    TargetError, TargetRecord,
};
use speechunits::{dedup_runs, SessionEmbedding, UnitSequence};

const K: u32 = 100;

fn random_frames(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let u = rng.random_range(0..K);
        let run = rng.random_range(1..6).min(len - out.len());
        out.extend(std::iter::repeat_n(u, run));
    }
    out
}

fn pitch(frames: usize) -> PitchTrack {
    PitchTrack {
        log_f0: (0..frames)
            .map(|i| if i % 3 == 0 { 0.0 } else { 5.0 })
            .collect(),
        voiced: (0..frames).map(|i| i % 3 != 0).collect(),
        frame_rate_hz: 50.0,
    }
}

#[test]
fn grouping_examples() {
    assert_eq!(group_units(&[5, 6, 7], K), [[5, 6], [7, K]]);
    assert_eq!(group_units(&[5, 6], K), [[5, 6], [K, K]]);
    assert_eq!(group_units(&[], K), [[K, K]]);
    assert_eq!(ungroup(&[[5, 6], [7, K]], K), [5, 6, 7]);
}

#[test]
fn grouping_round_trips_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let frames = random_frames(&mut rng, n);
        let seq = dedup_runs(&UnitSequence::framewise(frames, 50.0));
        let t = prepare_t2u_target("u", &[1, 2, 3], 40, &seq, K).unwrap();
        assert_eq!(t.input_phonemes, [1, 2, 3, 40]);
        assert_eq!(t.output_groups.len(), seq.len() / 2 + 1);
        assert!(t.output_groups.last().unwrap().contains(&K));
        assert_eq!(t.ungroup(), seq.units);
    }
}

#[test]
fn predictor_counts_match_durations_and_restore() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let emb = SessionEmbedding {
        vector: vec![0.0; 4],
        utterance_id: "spk".into(),
    };
    for _ in 0..200 {
        let n = rng.random_range(1..300);
        let frames = random_frames(&mut rng, n);
        let seq = dedup_runs(&UnitSequence::framewise(frames.clone(), 50.0));
        let t = prepare_predictor_targets(&seq, &pitch(n), &emb).unwrap();
        assert_eq!(t.repetition_counts, seq.durations);
        assert_eq!(t.repetition_counts.iter().sum::<u32>() as usize, n);
        assert_eq!(t.log_f0.len(), n);
        assert_eq!(t.session_embedding_ref, "spk");
        let counts: Vec<i64> = t.repetition_counts.iter().map(|&c| c as i64).collect();
        assert_eq!(restore_durations(&t.dedup_units, &counts).unwrap(), frames);
    }
}

#[test]
fn target_errors() {
    let seq = dedup_runs(&UnitSequence::framewise(vec![1, 1, 2], 50.0));
    let emb = SessionEmbedding {
        vector: vec![],
        utterance_id: "e".into(),
    };
    assert_eq!(
        prepare_predictor_targets(&seq, &pitch(4), &emb),
        Err(TargetError::LengthMismatch { units: 3, pitch: 4 })
    );
    let raw = UnitSequence::framewise(vec![1, 1, 2], 50.0);
    assert!(matches!(
        prepare_t2u_target("u", &[1], 9, &raw, K),
        Err(TargetError::NotDeduplicated { pos: 1, .. })
    ));
    let empty = UnitSequence::framewise(vec![], 50.0);
    assert_eq!(
        prepare_t2u_target("u", &[1], 9, &empty, K),
        Err(TargetError::EmptyUnits)
    );
    assert_eq!(
        prepare_t2u_target("u", &[], 9, &seq, K),
        Err(TargetError::EmptyPhonemes)
    );
    let big = dedup_runs(&UnitSequence::framewise(vec![K], 50.0));
    assert_eq!(
        prepare_t2u_target("u", &[1], 9, &big, K),
        Err(TargetError::UnitOutOfRange { unit: K, eos: K })
    );
    assert_eq!(
        prepare_t2u_target("u", &[9], 9, &seq, K),
        Err(TargetError::PhonemeOutOfRange { phoneme: 9, eos: 9 })
    );
    assert_eq!(
        restore_durations(&[1, 2], &[1]),
        Err(TargetError::CountMismatch {
            units: 2,
            counts: 1
        })
    );
    assert_eq!(
        restore_durations(&[1, 2], &[2, 0]),
        Err(TargetError::BadCount { count: 0, pos: 1 })
    );
}

#[test]
fn target_record_json() {
    let r = TargetRecord {
        id: "u1".into(),
        phonemes: vec![3, 4, 40],
        groups: vec![[1, 2], [K, K]],
        counts: vec![2, 3],
        pitch_path: "pitch/u1.f0".into(),
        embedding_path: None,
    };
    let line = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<TargetRecord>(&line).unwrap(), r);
    assert!(
        serde_json::from_str::<TargetRecord>(&line.replace("\"id\"", "\"extra\":1,\"id\""))
            .is_err()
    );
}

proptest! {
    #[test]
    fn restore_inverts_dedup(frames in prop::collection::vec(0u32..5, 1..400)) {
        let seq = dedup_runs(&UnitSequence::framewise(frames.clone(), 50.0));
        let counts: Vec<i64> = seq.durations.iter().map(|&c| c as i64).collect();
        prop_assert_eq!(restore_durations(&seq.units, &counts).unwrap(), frames);
    }

    #[test]
    fn ungroup_inverts_group(units in prop::collection::vec(0u32..K, 0..100)) {
        let g = group_units(&units, K);
        prop_assert_eq!(g.len(), units.len() / 2 + 1);
        prop_assert_eq!(ungroup(&g, K), units);
    }
}
