use std::collections::BTreeMap;

use celltrack::detection::{self, CellClass, DetectionParams};
use celltrack::metrics;
use celltrack::synth::{self, Corruption, SynthConfig};
use proptest::prelude::*;

fn small(seed: u64, division_rate: f64) -> SynthConfig {
    SynthConfig {
        width: 96,
        height: 96,
        frames: 14,
        initial_cells: 6,
        cell_radius: 5.0,
        radius_jitter: 0.5,
        division_rate,
        mitotic_lead: 2,
        impurity_count: 2,
        seed,
        ..SynthConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ground_truth_is_consistent(seed in any::<u64>(), rate in prop::sample::select(vec![0.0, 0.05, 0.2])) {
        let cfg = small(seed, rate);
        let scene = synth::generate(&cfg).unwrap();
        prop_assert_eq!(scene.frame_count(), cfg.frames);
        let forest = scene.gt_forest();
        prop_assert!(forest.validate().is_ok());
        for t in 0..scene.frame_count() {
            let mask = scene.gt_mask(t);
            // Disjoint disks: each painted pixel is covered by exactly its owner.
            let mut area: BTreeMap<u32, usize> = BTreeMap::new();
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let owners: Vec<u32> =
                        scene.frames[t].iter().filter(|c| c.covers(x, y)).map(|c| c.id).collect();
                    prop_assert!(owners.len() <= 1);
                    prop_assert_eq!(mask.get(x, y), owners.first().copied().unwrap_or(0));
                    if let Some(&o) = owners.first() {
                        *area.entry(o).or_default() += 1;
                    }
                }
            }
            for c in scene.gt_cells(t) {
                prop_assert_eq!(Some(&c.area), area.get(&c.id));
                let truth = scene.frames[t].iter().find(|s| s.id == c.id).unwrap();
                prop_assert!(c.centroid.distance(truth.center) <= 0.5);
            }
            // Every cell's coverage stays within a one-pixel dilation of its mask.
            let cov = scene.cell_coverage(t);
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    if cov.get(x, y) > 0.0 {
                        let near = (-1i64..=1).any(|dy| (-1i64..=1).any(|dx| {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            mask.contains(nx, ny) && mask.get(nx as usize, ny as usize) != 0
                        }));
                        prop_assert!(near, "coverage at ({}, {}) frame {}", x, y, t);
                    }
                }
            }
        }
        for ev in &scene.divisions {
            let kids = forest.children(ev.mother);
            prop_assert_eq!(kids, vec![ev.daughters.0, ev.daughters.1]);
            let mother = forest.get(ev.mother).unwrap();
            prop_assert_eq!(mother.end(), ev.frame);
            let lead = cfg.mitotic_lead.min(mother.len());
            for r in &mother.rows[mother.len() - lead..] {
                prop_assert_eq!(r.status, CellClass::Mitotic);
            }
        }
    }

    #[test]
    fn clean_maps_detect_every_cell(seed in any::<u64>()) {
        let cfg = small(seed, 0.1);
        let scene = synth::generate(&cfg).unwrap();
        let maps = synth::render_probmaps(&scene, &Corruption::default(), seed).unwrap();
        for (t, pf) in maps.iter().enumerate() {
            let dets = detection::detect_cells(&pf.det, t, &DetectionParams::default()).unwrap();
            let gt: Vec<metrics::GtCell> = scene
                .gt_cells(t)
                .iter()
                .map(|c| metrics::GtCell { pos: c.centroid, class: c.class })
                .collect();
            let rep = metrics::match_detections(&dets, &gt, 1.0).unwrap();
            prop_assert_eq!(rep.overall.true_positives, gt.len());
            prop_assert_eq!(rep.overall.false_positives, 0);
            prop_assert_eq!(rep.mitotic.false_negatives + rep.normal.false_negatives, 0);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = small(42, 0.1);
    assert_eq!(synth::generate(&cfg).unwrap(), synth::generate(&cfg).unwrap());
    let c = Corruption { dropout_prob: 0.1, centroid_jitter_sigma: 1.0, false_positive_rate: 0.5 };
    let scene = synth::generate(&cfg).unwrap();
    let a = synth::render_probmaps(&scene, &c, 9).unwrap();
    let b = synth::render_probmaps(&scene, &c, 9).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.det == y.det && x.seg == y.seg));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(synth::generate(&SynthConfig { frames: 0, ..small(1, 0.0) }).is_err());
    assert!(synth::generate(&SynthConfig { cell_radius: -1.0, ..small(1, 0.0) }).is_err());
    assert!(synth::generate(&SynthConfig { initial_cells: 5000, ..small(1, 0.0) }).is_err());
    let bad = Corruption { dropout_prob: 1.5, ..Corruption::default() };
    assert!(bad.validate().is_err());
}
