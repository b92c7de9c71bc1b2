use lpca_core::metrics::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracles;
use oracles::metrics::*;

#[test]
fn max_f_matches_brute_force_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let pair = random_pair(&mut rng, 16);
        assert_eq!(max_f_measure(&pair).to_bits(), brute_max_f(&pair).to_bits());
    }
}

#[test]
fn max_e_matches_brute_force_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let pair = random_pair(&mut rng, 16);
        assert_eq!(max_e_measure(&pair).to_bits(), brute_max_e(&pair).to_bits());
    }
}

#[test]
fn closed_form_e_agrees_with_pointwise_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let pair = random_pair(&mut rng, 16);
        let mut best = 0.0f64;
        for k in 0..256 {
            let b: Vec<bool> = pair.pred.iter().map(|&p| p >= k as f64 / 255.0).collect();
            best = best.max(pointwise_e(&b, &pair.gt));
        }
        assert!((max_e_measure(&pair) - best).abs() < 1e-12);
    }
}

#[test]
fn e_measure_of_complement_is_low() {
    // Balanced 4×4: left half foreground, prediction is the right half.
    let gt: Vec<bool> = (0..16).map(|i| i % 4 < 2).collect();
    let b: Vec<bool> = gt.iter().map(|&g| !g).collect();
    let direct = pointwise_e(&b, &gt);
    assert!(direct < 0.25);
    let (tp, fp, fn_, tn) = (0, 8, 8, 0);
    assert!((e_measure(tp, fp, fn_, tn) - direct).abs() < 1e-15);
}

#[test]
fn degenerate_e_conventions() {
    assert_eq!(e_measure(0, 0, 0, 10), 1.0);
    assert_eq!(e_measure(0, 10, 0, 0), 0.0);
    assert_eq!(e_measure(10, 0, 0, 0), 1.0);
    assert_eq!(e_measure(0, 0, 10, 0), 0.0);
}

#[test]
fn f_measure_conventions() {
    let gt = vec![true, false, true, false];
    let pair = EvalPair::new(2, 2, gt.iter().map(|&g| g as u8 as f64).collect(), gt).unwrap();
    assert_eq!(max_f_measure(&pair), 1.0);
    let empty = EvalPair::new(2, 2, vec![0.3, 0.9, 0.1, 0.5], vec![false; 4]).unwrap();
    assert_eq!(max_f_measure(&empty), 0.0);
}

#[test]
fn iou_examples() {
    let n = 8;
    let left: Vec<f64> = (0..n * n).map(|i| ((i % n) < n / 2) as u8 as f64).collect();
    let top: Vec<bool> = (0..n * n).map(|i| (i / n) < n / 2).collect();
    let pair = EvalPair::new(n, n, left.clone(), top.clone()).unwrap();
    // Quarter overlap over three quarters union.
    assert!((iou(&pair, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    let right: Vec<bool> = (0..n * n).map(|i| (i % n) >= n / 2).collect();
    assert_eq!(iou(&EvalPair::new(n, n, left, right).unwrap(), 0.5), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let pair = random_pair(&mut rng, 12);
        let t = rng.gen::<f64>();
        let (tp, fp, fn_, _) = counts_at(&pair, t);
        let want = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
        assert_eq!(iou(&pair, t), want);
    }
}

#[test]
fn mae_complement_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let pair = random_pair(&mut rng, 12);
        let flipped = EvalPair::new(
            pair.height,
            pair.width,
            pair.pred.iter().map(|p| 1.0 - p).collect(),
            pair.gt.clone(),
        )
        .unwrap();
        assert!((mae(&pair) + mae(&flipped) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn self_comparison_is_maximal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(2..12), rng.gen_range(2..12));
        let mut gt: Vec<bool> = (0..h * w).map(|_| rng.gen::<f64>() < 0.4).collect();
        gt[0] = true;
        gt[1] = false;
        let pred = gt.iter().map(|&g| g as u8 as f64).collect();
        let pair = EvalPair::new(h, w, pred, gt).unwrap();
        let s = ImageScores::of(&pair);
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.iou, 1.0);
        assert_eq!(s.max_f, 1.0);
        // The 1e-8 stabilizer in the alignment term keeps a perfect match a
        // hair below 1.
        assert!((s.max_e - 1.0).abs() < 1e-6);
        assert!((s.s_measure - 1.0).abs() < 1e-9);
        assert_eq!(s.map, 1.0);
    }
}

#[test]
fn s_measure_fallbacks() {
    let zeros = EvalPair::new(3, 3, vec![0.0; 9], vec![false; 9]).unwrap();
    assert_eq!(s_measure(&zeros), 1.0);
    let ones = EvalPair::new(3, 3, vec![1.0; 9], vec![false; 9]).unwrap();
    assert_eq!(s_measure(&ones), 0.0);
    let full = EvalPair::new(3, 3, vec![0.25; 9], vec![true; 9]).unwrap();
    assert_eq!(s_measure(&full), 0.25);
}

#[test]
fn s_measure_matches_clean_room() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..60 {
        let side = if case == 0 { 8 } else { 16 };
        let pair = random_pair(&mut rng, side);
        let (h, w) = (pair.height, pair.width);
        let p: Vec<Vec<f64>> = (0..h).map(|r| pair.pred[r * w..(r + 1) * w].to_vec()).collect();
        let g: Vec<Vec<f64>> = (0..h)
            .map(|r| (0..w).map(|c| pair.gt[r * w + c] as u8 as f64).collect())
            .collect();
        let want = clean_room::s_alpha(&p, &g);
        assert!((s_measure(&pair) - want).abs() < 1e-9, "case {case}: {} vs {want}", s_measure(&pair));
    }
}

fn brute_pooled(pairs: &[EvalPair]) -> Vec<(f64, f64)> {
    // (recall, precision) from the highest threshold down.
    (0..256)
        .rev()
        .map(|k| {
            let (mut tp, mut fp, mut pos) = (0u64, 0u64, 0u64);
            for pair in pairs {
                let (a, b, c, _) = counts_at(pair, k as f64 / 255.0);
                tp += a;
                fp += b;
                pos += a + c;
            }
            let prec = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            (tp as f64 / pos as f64, prec)
        })
        .collect()
}

fn brute_ap(pairs: &[EvalPair]) -> f64 {
    let pts = brute_pooled(pairs);
    let mut area = 0.0;
    let mut prev_r = 0.0;
    for i in 0..pts.len() {
        let r = pts[i].0;
        if r > prev_r {
            let envelope = pts[i..].iter().map(|p| p.1).fold(0.0, f64::max);
            area += (r - prev_r) * envelope;
            prev_r = r;
        }
    }
    area
}

#[test]
fn map_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w) = (10, 10);
    let mut gt: Vec<bool> = (0..h * w).map(|_| rng.gen::<f64>() < 0.3).collect();
    gt[0] = true;
    let prior = gt.iter().filter(|&&g| g).count() as f64 / (h * w) as f64;
    let exact = EvalPair::new(h, w, gt.iter().map(|&g| g as u8 as f64).collect(), gt.clone()).unwrap();
    assert_eq!(mean_average_precision(&[exact]), 1.0);
    let scaled = EvalPair::new(h, w, gt.iter().map(|&g| 0.8 * g as u8 as f64).collect(), gt.clone()).unwrap();
    assert_eq!(mean_average_precision(&[scaled]), 1.0);
    let inverse = EvalPair::new(h, w, gt.iter().map(|&g| 1.0 - g as u8 as f64).collect(), gt).unwrap();
    let ap = mean_average_precision(std::slice::from_ref(&inverse));
    assert!((ap - prior).abs() < 1e-15);
    assert!((ap - brute_ap(&[inverse])).abs() < 1e-15);
}

#[test]
fn map_matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let pairs: Vec<EvalPair> = (0..rng.gen_range(1..4))
            .map(|_| {
                let mut p = random_pair(&mut rng, 10);
                p.gt[0] = true;
                p
            })
            .collect();
        assert!((mean_average_precision(&pairs) - brute_ap(&pairs)).abs() < 1e-12);
    }
}

#[test]
fn curves_behave() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<EvalPair> = (0..3)
        .map(|_| {
            let mut p = random_pair(&mut rng, 12);
            p.gt[0] = true;
            p
        })
        .collect();
    let mut c = Confusion::empty();
    for p in &pairs {
        c.merge(&Confusion::from_pair(p));
    }
    let roc = roc_curve(&c);
    assert_eq!(roc.len(), 256);
    for w in roc.windows(2) {
        assert!(w[1].x <= w[0].x && w[1].y <= w[0].y);
    }

    let gt: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
    let exact = EvalPair::new(8, 8, gt.iter().map(|&g| g as u8 as f64).collect(), gt).unwrap();
    let c = Confusion::from_pair(&exact);
    let pr = pr_curve(&c);
    for p in &pr[1..] {
        assert_eq!((p.x, p.y), (1.0, 1.0));
    }
    assert_eq!(roc_auc(&roc_curve(&c)), 1.0);
}

#[test]
fn pooled_measures_ignore_pixel_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pair = random_pair(&mut rng, 12);
    let mut order: Vec<usize> = (0..pair.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let shuffled = EvalPair::new(
        pair.height,
        pair.width,
        order.iter().map(|&i| pair.pred[i]).collect(),
        order.iter().map(|&i| pair.gt[i]).collect(),
    )
    .unwrap();
    assert!((mae(&pair) - mae(&shuffled)).abs() < 1e-12);
    assert_eq!(iou(&pair, 0.5), iou(&shuffled, 0.5));
    assert_eq!(max_f_measure(&pair), max_f_measure(&shuffled));
    assert_eq!(
        mean_average_precision(std::slice::from_ref(&pair)),
        mean_average_precision(&[shuffled])
    );
}

#[test]
fn rejects_bad_inputs() {
    assert!(EvalPair::new(2, 2, vec![0.0; 3], vec![false; 4]).is_err());
    assert!(EvalPair::new(1, 1, vec![1.5], vec![false]).is_err());
    assert!(EvalPair::from_values(1, 1, vec![0.5], &[0.5]).is_err());
    assert!(MetricReport::compute(&[]).is_err());
}

#[test]
fn report_summary_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let pairs: Vec<EvalPair> = (0..4).map(|_| random_pair(&mut rng, 10)).collect();
    let r = MetricReport::compute(&pairs).unwrap();
    let mean_mae = pairs.iter().map(mae).sum::<f64>() / 4.0;
    assert!((r.mae - mean_mae).abs() < 1e-12);
    assert_eq!(r.per_image.len(), 4);
    assert_eq!(r.pr_curve.len(), 256);
    assert_eq!(r.csv_row().split(',').count(), MetricReport::CSV_HEADER.split(',').count());
}
