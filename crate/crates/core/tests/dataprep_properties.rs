use celltrack::dataprep::{
    self, AugmentSpec, ClassWeights, DivisionEvent, LossInputs, Noise, Sample, DET_BACKGROUND, DET_MITOTIC,
    DET_NORMAL, SEG_BACKGROUND, SEG_BOUNDARY, SEG_INTERIOR,
};
use celltrack::imaging::{LabelMap, Point, Raster};
use proptest::prelude::*;

fn loss_inputs() -> impl Strategy<Value = LossInputs> {
    (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(-30.0f64..30.0, w * h * 3),
            prop::collection::vec(0u32..3, w * h),
            prop::collection::vec(0.0f64..2.0, w * h),
        )
            .prop_map(move |(l, g, wt)| LossInputs {
                logits: Raster::from_vec(w, h, 3, l).unwrap(),
                labels: Raster::from_vec(w, h, 1, g).unwrap(),
                weights: Raster::from_vec(w, h, 1, wt).unwrap(),
            })
    })
}

/// Direct softmax without the log-sum-exp shift; fine for |logit| <= 30.
fn ce_oracle(x: &LossInputs) -> f64 {
    let n = (x.logits.width() * x.logits.height()) as f64;
    let mut s = 0.0;
    for y in 0..x.logits.height() {
        for xx in 0..x.logits.width() {
            let h: Vec<f64> = (0..3).map(|c| x.logits.get_c(xx, y, c)).collect();
            let z: f64 = h.iter().map(|v| v.exp()).sum();
            let p = h[x.labels.get(xx, y) as usize].exp() / z;
            s -= x.weights.get(xx, y) * p.ln();
        }
    }
    s / n
}

fn instance_map() -> impl Strategy<Value = LabelMap> {
    (2usize..16, 2usize..16).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::sample::select(vec![0u32, 0, 1, 1, 2, 5]), w * h)
            .prop_map(move |d| Raster::from_vec(w, h, 1, d).unwrap())
    })
}

proptest! {
    #[test]
    fn cross_entropy_equals_direct_softmax(x in loss_inputs()) {
        let l = dataprep::weighted_cross_entropy(&x).unwrap();
        let o = ce_oracle(&x);
        prop_assert!((l - o).abs() <= 1e-9 * o.abs().max(1.0), "{} vs {}", l, o);
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn loss_is_invariant_to_logit_shift(x in loss_inputs(), k in -100.0f64..100.0) {
        let shifted = LossInputs { logits: x.logits.map(|v| v + k), ..x.clone() };
        let a = dataprep::weighted_cross_entropy(&x).unwrap();
        let b = dataprep::weighted_cross_entropy(&shifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn boundary_labels_follow_chebyshev_rule(m in instance_map(), bw in 1usize..3) {
        let out = dataprep::boundary_interior_labels(&m, bw).unwrap();
        let (w, h) = m.extent();
        let bw = bw as i64;
        for y in 0..h {
            for x in 0..w {
                let l = m.get(x, y);
                let want = if l == 0 {
                    SEG_BACKGROUND
                } else {
                    let differs = (-bw..=bw).any(|dy| (-bw..=bw).any(|dx| {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        !m.contains(nx, ny) || m.get(nx as usize, ny as usize) != l
                    }));
                    if differs { SEG_BOUNDARY } else { SEG_INTERIOR }
                };
                prop_assert_eq!(out.get(x, y), want);
            }
        }
    }

    #[test]
    fn crops_have_fixed_size_and_contain_centroid(
        w in 4usize..30, h in 4usize..30, s in 1usize..4,
        px in 0.0f64..1.0, py in 0.0f64..1.0,
    ) {
        let s = s.min(w).min(h);
        let img = Raster::from_vec(w, h, 1, (0..w * h).map(|i| i as u32).collect()).unwrap();
        let c = Point::new(px * (w - 1) as f64, py * (h - 1) as f64);
        let crops = dataprep::crop_samples(&img, &img, &[c], s).unwrap();
        let (a, b) = &crops[0];
        prop_assert_eq!(a.extent(), (s, s));
        prop_assert_eq!(a, b);
        // The window is a contiguous block of the source.
        let x0 = a.get(0, 0) as usize % w;
        let y0 = a.get(0, 0) as usize / w;
        prop_assert!(x0 + s <= w && y0 + s <= h);
        prop_assert_eq!(a.get(s - 1, s - 1) as usize, (y0 + s - 1) * w + x0 + s - 1);
    }

    #[test]
    fn flips_keep_sample_aligned(m in instance_map(), hflip in any::<bool>(), vflip in any::<bool>(), seed in any::<u64>()) {
        let image = m.map(|l| l as f32);
        let weights = dataprep::make_weight_map(&m.map(|l| l.min(2)), &ClassWeights::DETECTION).unwrap();
        let sample = Sample { image, labels: m.clone(), weights };
        let spec = AugmentSpec { hflip, vflip, noise: Noise::None };
        let out = dataprep::augment(&sample, &spec, seed).unwrap();
        prop_assert_eq!(out.image.map(|v| v as u32), out.labels.clone());
        let twice = dataprep::augment(&out, &spec, seed).unwrap();
        prop_assert_eq!(twice.labels, m);
    }

    #[test]
    fn salt_and_pepper_only_touches_image(m in instance_map(), seed in any::<u64>()) {
        let sample = Sample {
            image: m.map(|_| 0.5f32),
            labels: m.clone(),
            weights: m.map(|_| 1.0),
        };
        let spec = AugmentSpec { noise: Noise::SaltPepper { density: 0.3 }, ..AugmentSpec::default() };
        let out = dataprep::augment(&sample, &spec, seed).unwrap();
        prop_assert_eq!(&out.labels, &sample.labels);
        prop_assert_eq!(&out.weights, &sample.weights);
        prop_assert!(out.image.data().iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
        prop_assert_eq!(dataprep::augment(&sample, &spec, seed).unwrap().image, out.image);
    }
}

#[test]
fn relabel_marks_mother_and_daughters() {
    let frame = |labels: &[u32]| Raster::from_vec(labels.len(), 1, 1, labels.to_vec()).unwrap();
    let tra = vec![frame(&[1, 0, 0]), frame(&[1, 0, 0]), frame(&[0, 2, 3]), frame(&[0, 2, 3]), frame(&[0, 2, 3])];
    let ev = DivisionEvent { mother: 1, frame: 1, daughters: (2, 3) };
    let out = dataprep::relabel_mitotic(&tra, &[ev], 2).unwrap();
    assert_eq!(out[0].data(), &[DET_MITOTIC, DET_BACKGROUND, DET_BACKGROUND]);
    assert_eq!(out[1].data(), &[DET_MITOTIC, DET_BACKGROUND, DET_BACKGROUND]);
    assert_eq!(out[3].data(), &[DET_BACKGROUND, DET_MITOTIC, DET_MITOTIC]);
    assert_eq!(out[4].data(), &[DET_BACKGROUND, DET_NORMAL, DET_NORMAL]);
    let unknown = DivisionEvent { mother: 9, ..ev };
    assert!(dataprep::relabel_mitotic(&tra, &[unknown], 2).is_err());
}

#[test]
fn stacking_repeats_first_frame() {
    let seq: Vec<Raster<f32>> = (0..3).map(|t| Raster::new(2, 2, 1, t as f32)).collect();
    let s = dataprep::stack_frames(&seq, 1, 3).unwrap();
    let firsts: Vec<f32> = s.planes.iter().map(|p| p.get(0, 0)).collect();
    assert_eq!(firsts, vec![0.0, 0.0, 1.0]);
    assert_eq!(s.to_raster().channels(), 3);
    assert!(dataprep::stack_frames(&seq, 3, 2).is_err());
    assert_eq!(dataprep::crop_size_for(12.4), 62);
}
