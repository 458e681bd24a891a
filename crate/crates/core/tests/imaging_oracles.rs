use celltrack::imaging::{self, BinaryMask, Connectivity, LabelMap, ProbMap, Raster};
use proptest::prelude::*;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Union-find labelling of pixels whose value equals `fg`, with labels
/// numbered by first appearance in raster order.
fn uf_components(mask: &BinaryMask, conn: Connectivity, fg: bool) -> Vec<u32> {
    let (w, h) = mask.extent();
    let mut uf = UnionFind::new(w * h);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != fg {
                continue;
            }
            for &(dx, dy) in conn.offsets() {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if mask.contains(nx, ny) && mask.get(nx as usize, ny as usize) == fg {
                    uf.union(y * w + x, ny as usize * w + nx as usize);
                }
            }
        }
    }
    let mut root_label = std::collections::HashMap::new();
    let mut out = vec![0u32; w * h];
    for i in 0..w * h {
        if mask.data()[i] == fg {
            let r = uf.find(i);
            let next = root_label.len() as u32 + 1;
            out[i] = *root_label.entry(r).or_insert(next);
        }
    }
    out
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::bool::weighted(0.45), w * h)
            .prop_map(move |d| Raster::from_vec(w, h, 1, d).unwrap())
    })
}

proptest! {
    #[test]
    fn components_equal_union_find(mask in mask_strategy(), eight in any::<bool>()) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let (labels, stats) = imaging::connected_components(&mask, conn);
        prop_assert_eq!(labels.data(), &uf_components(&mask, conn, true)[..]);
        prop_assert_eq!(stats.len() as u32, labels.data().iter().copied().max().unwrap_or(0));
    }

    #[test]
    fn holes_are_background_cut_off_from_border(mask in mask_strategy()) {
        let filled = imaging::fill_holes(&mask);
        let (w, h) = mask.extent();
        let bg = uf_components(&mask, Connectivity::Four, false);
        let mut touches = std::collections::HashSet::new();
        for y in 0..h {
            for x in 0..w {
                if (x == 0 || y == 0 || x + 1 == w || y + 1 == h) && bg[y * w + x] != 0 {
                    touches.insert(bg[y * w + x]);
                }
            }
        }
        for i in 0..w * h {
            let want = mask.data()[i] || !touches.contains(&bg[i]);
            prop_assert_eq!(filled.data()[i], want);
        }
    }

    #[test]
    fn fill_is_idempotent_and_monotone(mask in mask_strategy()) {
        let once = imaging::fill_holes(&mask);
        prop_assert_eq!(&imaging::fill_holes(&once), &once);
        for (a, b) in mask.data().iter().zip(once.data()) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn stats_match_pixel_sums(mask in mask_strategy()) {
        let (labels, stats) = imaging::connected_components(&mask, Connectivity::Eight);
        for s in &stats {
            let px: Vec<(usize, usize)> = (0..labels.height())
                .flat_map(|y| (0..labels.width()).map(move |x| (x, y)))
                .filter(|&(x, y)| labels.get(x, y) == s.label)
                .collect();
            prop_assert_eq!(s.area, px.len());
            let cx = px.iter().map(|p| p.0 as f64).sum::<f64>() / px.len() as f64;
            let cy = px.iter().map(|p| p.1 as f64).sum::<f64>() / px.len() as f64;
            prop_assert!((s.centroid.x - cx).abs() < 1e-9 && (s.centroid.y - cy).abs() < 1e-9);
            prop_assert_eq!(s.bbox.xmin, px.iter().map(|p| p.0).min().unwrap());
            prop_assert_eq!(s.bbox.ymax, px.iter().map(|p| p.1).max().unwrap());
        }
        prop_assert_eq!(imaging::label_stats(&labels), stats);
    }
}

#[test]
fn threshold_is_inclusive() {
    let map: ProbMap = Raster::from_vec(3, 1, 2, vec![0.0, 0.49, 0.0, 0.5, 0.0, 0.51]).unwrap();
    let m = imaging::threshold(&map, 1, 0.5).unwrap();
    assert_eq!(m.data(), &[false, true, true]);
    assert!(imaging::threshold(&map, 2, 0.5).is_err());
}

#[test]
fn ring_encloses_hole() {
    let mut mask = Raster::new(5, 5, 1, false);
    for (x, y) in [(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3), (3, 3)] {
        mask.set(x, y, true);
    }
    let filled = imaging::fill_holes(&mask);
    assert!(filled.get(2, 2));
    assert!(!filled.get(0, 0));
    let labels: LabelMap = imaging::connected_components(&filled, Connectivity::Four).0;
    assert_eq!(imaging::label_stats(&labels)[0].area, 9);
}
