use std::io::Cursor;

use proptest::prelude::*;
use speechunits::audio_io::{
    quantize_sample, read_alignment, read_embedding, read_features, read_wav, read_wav_from,
    write_embedding, write_features, write_wav, write_wav_to, FeatureMatrix, FormatError,
    PhoneAlignment, SessionEmbedding, Waveform, FMAT_HEADER_LEN,
};

fn wav_bytes(w: &Waveform) -> Vec<u8> {
    let mut cur = Cursor::new(Vec::new());
    write_wav_to(w, &mut cur).unwrap();
    cur.into_inner()
}

fn pcm(samples: &[i16]) -> Waveform {
    Waveform::new(
        samples.iter().map(|&s| s as f32 / 32768.0).collect(),
        16_000,
    )
}

#[test]
fn silence_round_trips() {
    let w = Waveform::new(vec![0.0; 16_000], 16_000);
    let back = read_wav_from(Cursor::new(wav_bytes(&w))).unwrap();
    assert_eq!(back, w);
    assert_eq!(back.duration_sec(), 1.0);
}

#[test]
fn square_wave_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sq.wav");
    let samples: Vec<i16> = (0..4000)
        .map(|i| if (i / 40) % 2 == 0 { 16384 } else { -16384 })
        .collect();
    let w = pcm(&samples);
    assert_eq!(write_wav(&w, &p).unwrap(), 0);
    let back = read_wav(&p).unwrap();
    assert_eq!(back, w);
    assert!((back.power() - 0.25).abs() < 1e-12);
}

#[test]
fn extremes_and_clipping() {
    assert_eq!(quantize_sample(1.0), 32767);
    assert_eq!(quantize_sample(-1.0), -32768);
    let w = Waveform::new(vec![1.5, -2.0, 0.5, -1.0, 1.0], 16_000);
    let mut cur = Cursor::new(Vec::new());
    assert_eq!(write_wav_to(&w, &mut cur).unwrap(), 2);
    let back = read_wav_from(Cursor::new(cur.into_inner())).unwrap();
    assert_eq!(back.samples[0], 32767.0 / 32768.0);
    assert_eq!(back.samples[1], -1.0);
    assert_eq!(back.samples[2], 0.5);
    let bad = Waveform::new(vec![0.0, f32::NAN], 16_000);
    assert!(write_wav_to(&bad, Cursor::new(Vec::new())).is_err());
}

#[test]
fn non_mono_wav_is_rejected() {
    let spec = hound_spec(2, 16);
    let mut cur = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cur, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
    }
    assert!(matches!(
        read_wav_from(Cursor::new(cur.into_inner())),
        Err(FormatError::UnsupportedWav(_))
    ));
    assert!(read_wav_from(Cursor::new(b"RIFFjunk".to_vec())).is_err());
}

fn hound_spec(channels: u16, bits: u16) -> hound::WavSpec {
    hound::WavSpec {
        channels,
        sample_rate: 16_000,
        bits_per_sample: bits,
        sample_format: hound::SampleFormat::Int,
    }
}

fn matrix(rows: usize, cols: usize) -> FeatureMatrix {
    let data = (0..rows * cols).map(|i| (i as f32).sin() * 3.0).collect();
    FeatureMatrix::new(data, rows, cols, 50.0, 6).unwrap()
}

#[test]
fn fmat_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = matrix(37, 11);
    let p = dir.path().join("a.fmat");
    write_features(&m, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes.len(), FMAT_HEADER_LEN + 37 * 11 * 4);
    assert_eq!(&bytes[..4], b"FMAT");
    let back = read_features(&p).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.frame_rate_hz, 50.0);
    assert_eq!(back.source_layer, 6);
    assert_eq!(back.row(3), m.row(3));
}

#[test]
fn fmat_corruption() {
    let bytes = matrix(4, 3).to_bytes();
    for i in 0..4 {
        let mut b = bytes.clone();
        b[i] ^= 0x20;
        assert!(
            matches!(
                FeatureMatrix::from_bytes(&b),
                Err(FormatError::BadMagic { .. })
            ),
            "byte {i}"
        );
    }
    let mut b = bytes.clone();
    b[4] = 2;
    assert!(matches!(
        FeatureMatrix::from_bytes(&b),
        Err(FormatError::UnsupportedVersion(2))
    ));
    for cut in [0, 3, 10, FMAT_HEADER_LEN, bytes.len() - 1] {
        assert!(
            FeatureMatrix::from_bytes(&bytes[..cut]).is_err(),
            "cut {cut}"
        );
    }
    assert!(matches!(
        FeatureMatrix::from_bytes(&bytes[..bytes.len() - 4]),
        Err(FormatError::Truncated { expected, actual }) if expected == bytes.len() && actual == bytes.len() - 4
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        FeatureMatrix::from_bytes(&long),
        Err(FormatError::TrailingBytes { .. })
    ));
    let mut nan = bytes.clone();
    let off = FMAT_HEADER_LEN + 5 * 4;
    nan[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        FeatureMatrix::from_bytes(&nan),
        Err(FormatError::NonFinite { row: 1, col: 2 })
    ));
    assert!(FeatureMatrix::new(vec![], 0, 3, 50.0, 0).is_err());
    assert!(FeatureMatrix::new(vec![1.0; 5], 2, 3, 50.0, 0).is_err());
}

#[test]
fn embedding_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.fmat");
    let e = SessionEmbedding {
        vector: vec![0.5, -1.0, 2.0],
        utterance_id: "u".into(),
    };
    write_embedding(&e, &p).unwrap();
    assert_eq!(read_embedding(&p, "u").unwrap(), e);
    write_features(&matrix(2, 3), &p).unwrap();
    assert!(read_embedding(&p, "u").is_err());
}

#[test]
fn alignment_parsing() {
    let text = "0 9 sil\n10 24 ah\n25 49 t\n";
    let a = PhoneAlignment::parse(text, 50).unwrap();
    assert_eq!(a.num_frames(), 50);
    let fw = a.framewise();
    assert_eq!(fw.len(), 50);
    assert_eq!((fw[9], fw[10], fw[49]), ("sil", "ah", "t"));
    assert_eq!(a.to_text(), text);

    let gap = "0 49 a\n51 99 b\n";
    assert!(matches!(
        PhoneAlignment::parse(gap, 100),
        Err(FormatError::AlignmentGap { frame: 50 })
    ));
    let overlap = "0 10 a\n10 19 b\n";
    assert!(matches!(
        PhoneAlignment::parse(overlap, 20),
        Err(FormatError::AlignmentOverlap { frame: 10 })
    ));
    assert!(matches!(
        PhoneAlignment::parse("0 9 a\n", 12),
        Err(FormatError::AlignmentShort { frame: 10, .. })
    ));
    assert!(matches!(
        PhoneAlignment::parse("0 12 a\n", 12),
        Err(FormatError::AlignmentLong { .. })
    ));
    assert!(matches!(
        PhoneAlignment::parse("0 x a\n", 1),
        Err(FormatError::AlignmentSyntax { line: 1, .. })
    ));
    assert!(matches!(
        PhoneAlignment::parse("0 0 a\n3 1 b\n", 4),
        Err(FormatError::AlignmentSyntax { line: 2, .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.txt");
    std::fs::write(&p, text).unwrap();
    assert_eq!(read_alignment(&p, 50).unwrap(), a);
    let err = read_alignment(dir.path().join("missing.txt"), 50).unwrap_err();
    assert!(err.to_string().contains("missing.txt"));
}

proptest! {
    #[test]
    fn pcm_round_trip_is_bit_identical(samples in prop::collection::vec(any::<i16>(), 0..2000)) {
        let w = pcm(&samples);
        let once = read_wav_from(Cursor::new(wav_bytes(&w))).unwrap();
        prop_assert_eq!(&once, &w);
        let twice = read_wav_from(Cursor::new(wav_bytes(&once))).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn fmat_bytes_round_trip(
        rows in 1usize..20,
        cols in 1usize..20,
        seed in any::<u32>(),
        rate in 1.0f32..200.0,
    ) {
        let data: Vec<f32> = (0..rows * cols).map(|i| ((i as u32).wrapping_mul(seed) as f32) * 1e-6).collect();
        let m = FeatureMatrix::new(data, rows, cols, rate, seed).unwrap();
        prop_assert_eq!(FeatureMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
