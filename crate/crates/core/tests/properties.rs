use mimtrack::harness::dataset::{decode_ppm, encode_ppm};
use mimtrack::harness::evaluate;
use mimtrack::head::{predict, predict_with_cells, BBox, HeadGeometry};
use mimtrack::memory::MemoryCorpus;
use mimtrack::numerics::Tensor;
use mimtrack::tokenizer::Frame;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (-20.0..60.0f64, -20.0..60.0f64, 0.5..40.0f64, 0.5..40.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

fn small_int_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3i32..=3, dim)
        .prop_filter("non-zero", |v| v.iter().any(|&x| x != 0))
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (a.iou(&b), b.iou(&a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_ignores_a_common_rescale(a in bbox(), b in bbox(), s in 0.1..10.0f64) {
        let sc = |r: &BBox| BBox::new(r.x * s, r.y * s, r.w * s, r.h * s);
        prop_assert!((sc(&a).iou(&sc(&b)) - a.iou(&b)).abs() < 1e-12);
    }

    #[test]
    fn curves_are_monotone(pairs in prop::collection::vec((bbox(), bbox()), 1..30)) {
        let (pred, gt): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = evaluate(&pred, &gt).unwrap();
        prop_assert!(r.success.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(r.precision.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((0.0..=1.0).contains(&r.success_auc));
        prop_assert!((0.0..=1.0).contains(&r.precision_auc));
    }

    #[test]
    fn top_k_matches_a_full_sort(
        entries in prop::collection::vec(small_int_vec(3), 1..30),
        query in small_int_vec(3),
        k in 1usize..40,
    ) {
        let mut corpus = MemoryCorpus::new(3, 2.0, 64).unwrap();
        for e in &entries {
            corpus.maybe_insert(e).unwrap();
        }
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&i, &j| cos(&query, &entries[j]).partial_cmp(&cos(&query, &entries[i])).unwrap().then(i.cmp(&j)));
        order.truncate(k);
        prop_assert_eq!(corpus.retrieve_top_k(&query, k).unwrap(), order);
    }

    #[test]
    fn corpus_replay_is_deterministic_and_diverse(
        stream in prop::collection::vec(small_int_vec(3), 1..60),
        tau in 0.3..0.99f64,
        cap in 1usize..12,
    ) {
        let run = || {
            let mut c = MemoryCorpus::new(3, tau, cap).unwrap();
            let admitted: Vec<bool> = stream.iter().map(|e| c.maybe_insert(e).unwrap()).collect();
            (c, admitted)
        };
        let (a, fa) = run();
        let (b, fb) = run();
        prop_assert_eq!(fa, fb);
        prop_assert!(a.entries().eq(b.entries()));
        prop_assert!(a.len() <= cap);
        // each survivor was checked against every older survivor on entry
        let kept: Vec<&[f64]> = a.entries().collect();
        for i in 0..kept.len() {
            for j in 0..i {
                prop_assert!(cos(kept[i], kept[j]) < tau);
            }
        }
    }

    #[test]
    fn ppm_round_trip_of_quantized_frames(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let data: Vec<f64> = (0..3 * h * w)
            .map(|i| f64::from(((seed >> (i % 56)) as u8).wrapping_add(i as u8)) / 255.0)
            .collect();
        let frame = Frame::new(h, w, data).unwrap();
        let back = decode_ppm(&encode_ppm(&frame)).unwrap();
        prop_assert_eq!(back.data(), frame.data());
    }

    #[test]
    fn prediction_follows_a_token_permutation(
        logits in prop::collection::hash_set(-1000i32..1000, 6),
        regs in prop::collection::vec(-3.0..3.0f64, 24),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let geom = HeadGeometry { rows: 2, cols: 3, patch: 4 };
        let logits: Vec<f64> = logits.into_iter().map(|l| f64::from(l) / 100.0).collect();
        let row = |i: usize| {
            let mut r = vec![logits[i]];
            r.extend_from_slice(&regs[4 * i..4 * i + 4]);
            r
        };
        let out = Tensor::from_rows(&(0..6).map(row).collect::<Vec<_>>()).unwrap();
        let shuffled = Tensor::from_rows(&perm.iter().map(|&i| row(i)).collect::<Vec<_>>()).unwrap();
        let cells: Vec<_> = perm.iter().map(|&i| geom.cell(i)).collect();
        prop_assert_eq!(predict(&out, &geom).unwrap(), predict_with_cells(&shuffled, &cells, &geom).unwrap());
    }
}
