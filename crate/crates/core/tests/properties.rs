use proptest::prelude::*;
use spectrack::activation_io::{
    parse_meta_lines, read_stream, write_meta_lines, write_stream, ActivationFrame, Label,
    ScalarWidth, StreamHeader, StreamMeta, WindowBuffer,
};
use spectrack::eval::auroc;
use spectrack::linalg::Matrix;
use spectrack::pipeline::{read_features_csv, write_features_csv, FeatureStep};
use spectrack::spectral::{extract_features, slot, truncated_svd, MpSettings, FEATURE_COUNT};

fn header_and_frames() -> impl Strategy<Value = (StreamHeader, Vec<ActivationFrame>)> {
    (1usize..4, 1u32..6, any::<bool>(), 0usize..12).prop_flat_map(|(layers, dim, wide, n)| {
        let width = layers * dim as usize;
        let scalar = if wide {
            ScalarWidth::F64
        } else {
            ScalarWidth::F32
        };
        prop::collection::vec(prop::collection::vec(-1e6f64..1e6, width), n).prop_map(move |rows| {
            let header = StreamHeader::new((0..layers as u16).collect(), dim, scalar)
                .with_token_count(rows.len() as u64);
            let frames = rows
                .into_iter()
                .enumerate()
                .map(|(t, v)| {
                    let v = match scalar {
                        ScalarWidth::F32 => v.into_iter().map(|x| x as f32 as f64).collect(),
                        ScalarWidth::F64 => v,
                    };
                    ActivationFrame::new(t as u64, v)
                })
                .collect();
            (header, frames)
        })
    })
}

fn window(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |d| Matrix::from_row_major(rows, cols, d))
}

fn features_of(m: &Matrix) -> Vec<f64> {
    let spec = truncated_svd(m, m.cols().min(m.rows())).unwrap();
    extract_features(&spec, &MpSettings::default())
        .unwrap()
        .values
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dump_round_trips((header, frames) in header_and_frames()) {
        let mut buf = Vec::new();
        let n = write_stream(&header, &frames, &mut buf).unwrap();
        prop_assert_eq!(n as usize, buf.len());
        let reader = read_stream(&buf[..]).unwrap();
        prop_assert_eq!(reader.header(), &header);
        let back: Vec<ActivationFrame> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn truncated_dump_is_rejected((header, frames) in header_and_frames(), cut in 1usize..64) {
        prop_assume!(!frames.is_empty());
        let mut buf = Vec::new();
        write_stream(&header, &frames, &mut buf).unwrap();
        let keep = buf.len().saturating_sub(cut);
        let result = read_stream(&buf[..keep]).and_then(|r| r.collect::<Result<Vec<_>, _>>());
        prop_assert!(result.is_err());
    }

    #[test]
    fn window_holds_latest_frames(
        cap in 1usize..10,
        width in 1usize..5,
        pushes in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..30),
    ) {
        let mut w = WindowBuffer::new(cap, width);
        for p in &pushes {
            w.push(&p[..width]).unwrap();
        }
        let m = w.window_matrix().unwrap();
        let keep = pushes.len().min(cap);
        prop_assert_eq!(m.rows(), keep);
        for (i, p) in pushes[pushes.len() - keep..].iter().enumerate() {
            prop_assert_eq!(m.row(i), &p[..width]);
        }
    }

    #[test]
    fn scaling_scales_eigenvalues_and_keeps_shape_features(m in window(16, 6), s in 0.1f64..10.0) {
        let base = features_of(&m);
        let mut scaled_m = m.clone();
        scaled_m.scale(s);
        let scaled = features_of(&scaled_m);
        let s2 = s * s;
        for i in 0..8 {
            prop_assert!(close(scaled[i], base[i] * s2, 1e-9));
        }
        for i in [slot::CUMVAR_1, 9, 10, slot::CUMVAR_8, slot::GAP_1_2, slot::GAP_2_3, slot::GAP_4_5, slot::ENTROPY, slot::MP_KL] {
            prop_assert!(close(scaled[i], base[i], 1e-7), "slot {}: {} vs {}", i, scaled[i], base[i]);
        }
        for i in [slot::MEAN, slot::MEDIAN, slot::MAX, slot::SUM] {
            prop_assert!(close(scaled[i], base[i] * s2, 1e-9));
        }
    }

    #[test]
    fn features_ignore_row_and_column_order(m in window(12, 5), rot_r in 0usize..12, rot_c in 0usize..5) {
        let base = features_of(&m);
        let (r, c) = (m.rows(), m.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let src = m.row((i + rot_r) % r);
            data.extend((0..c).map(|j| src[(j + rot_c) % c]));
        }
        let permuted = features_of(&Matrix::from_row_major(r, c, data));
        for i in 0..FEATURE_COUNT {
            prop_assert!(close(permuted[i], base[i], 1e-8), "slot {}: {} vs {}", i, permuted[i], base[i]);
        }
    }

    #[test]
    fn auroc_ignores_monotone_transforms(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..60),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let base = auroc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| (s / 7.0).atan()).collect();
        prop_assert!((auroc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&flipped, &labels).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn feature_csv_round_trips_exactly(
        rows in prop::collection::vec((any::<u32>(), any::<bool>(), prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, FEATURE_COUNT)), 0..8)
    ) {
        let steps: Vec<FeatureStep> = rows
            .into_iter()
            .map(|(t, warm_up, features)| FeatureStep { t: u64::from(t), warm_up, features })
            .collect();
        let mut buf = Vec::new();
        write_features_csv(&steps, &mut buf).unwrap();
        let back = read_features_csv(&buf[..]).unwrap();
        prop_assert_eq!(back, steps);
    }

    #[test]
    fn meta_lines_round_trip(
        entries in prop::collection::vec(("[a-z0-9_-]{1,12}", prop::option::of(any::<bool>()), any::<u16>(), "[ -~]{0,16}"), 0..6)
    ) {
        let metas: Vec<StreamMeta> = entries
            .into_iter()
            .map(|(id, label, onset, source)| {
                let label = label.map(|l| if l { Label::Anomalous } else { Label::InDistribution });
                StreamMeta {
                    sequence_id: id,
                    onset_token: (label == Some(Label::Anomalous)).then_some(u64::from(onset)),
                    label,
                    source,
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_meta_lines(&metas, &mut buf).unwrap();
        let back = parse_meta_lines(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back, metas);
    }
}
