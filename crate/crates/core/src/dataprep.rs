//! Training-side arithmetic: the weighted softmax cross-entropy, class weight
//! maps, mitotic relabeling of tracking ground truth, multi-frame input
//! stacks, boundary/interior labels, centroid-centered crops and
//! augmentation.
//!
//! Class-index label maps produced here use the channel order of the
//! corresponding probability maps:
//!
//! | index | detection | segmentation |
//! |-------|-----------|--------------|
//! | 0     | mitotic   | boundary     |
//! | 1     | normal    | interior     |
//! | 2     | background| background   |

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imaging::{LabelMap, Point, Raster};
use crate::{Error, Result};

pub const DET_MITOTIC: u32 = 0;
pub const DET_NORMAL: u32 = 1;
pub const DET_BACKGROUND: u32 = 2;

pub const SEG_BOUNDARY: u32 = 0;
pub const SEG_INTERIOR: u32 = 1;
pub const SEG_BACKGROUND: u32 = 2;

/// Inputs of the pixel-averaged weighted cross-entropy.
#[derive(Debug, Clone)]
pub struct LossInputs {
    /// Pre-softmax scores, one channel per class.
    pub logits: Raster<f64>,
    /// True class index per pixel.
    pub labels: LabelMap,
    pub weights: Raster<f64>,
}

impl LossInputs {
    pub fn classes(&self) -> usize {
        self.logits.channels()
    }

    fn validate(&self) -> Result<()> {
        if !self.logits.same_extent(&self.labels) || !self.logits.same_extent(&self.weights) {
            return Err(Error::invalid("logits, labels and weights must share an extent"));
        }
        if self.labels.channels() != 1 || self.weights.channels() != 1 {
            return Err(Error::invalid("labels and weights must be single-channel"));
        }
        let c = self.classes() as u32;
        if let Some(l) = self.labels.data().iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {l} outside 0..{c}")));
        }
        if self.weights.data().iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        if self.logits.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(())
    }
}

/// `-(1/T) Σ_i w(i) log softmax(h(i, ·))[g(i)]`, evaluated with the
/// log-sum-exp shift so large logits do not overflow.
pub fn weighted_cross_entropy(input: &LossInputs) -> Result<f64> {
    input.validate()?;
    let c = input.classes();
    let total = (input.logits.width() * input.logits.height()) as f64;
    let mut sum = 0.0;
    for ((h, &g), &w) in input
        .logits
        .data()
        .chunks_exact(c)
        .zip(input.labels.data())
        .zip(input.weights.data())
    {
        let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + h.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += w * (lse - h[g as usize]);
    }
    Ok(sum / total)
}

/// Per-class loss weights, indexed by class index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights(pub [f64; 3]);

impl ClassWeights {
    /// Mitotic 0.5, normal 0.3, background 0.2.
    pub const DETECTION: ClassWeights = ClassWeights([0.5, 0.3, 0.2]);
    /// Boundary 0.5, interior 0.3, background 0.2.
    pub const SEGMENTATION: ClassWeights = ClassWeights([0.5, 0.3, 0.2]);
}

pub fn make_weight_map(labels: &LabelMap, weights: &ClassWeights) -> Result<Raster<f64>> {
    if weights.0.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("class weights must be non-negative"));
    }
    let data = labels
        .data()
        .iter()
        .map(|&l| {
            weights
                .0
                .get(l as usize)
                .copied()
                .ok_or_else(|| Error::invalid(format!("label {l} has no class weight")))
        })
        .collect::<Result<Vec<_>>>()?;
    Raster::from_vec(labels.width(), labels.height(), 1, data)
}

/// A division in tracking ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivisionEvent {
    pub mother: u32,
    /// Last frame in which the mother appears.
    pub frame: usize,
    pub daughters: (u32, u32),
}

/// Converts instance-labelled tracking ground truth into detection class maps.
///
/// A mother is mitotic in its last `n_mitosis` frames (`frame - n + 1 ..= frame`)
/// and each daughter in its first `n_mitosis` frames (`frame + 1 ..= frame + n`).
/// Every other labelled pixel is normal.
pub fn relabel_mitotic(
    tra_gt: &[LabelMap],
    lineage: &[DivisionEvent],
    n_mitosis: usize,
) -> Result<Vec<LabelMap>> {
    let present: BTreeSet<u32> =
        tra_gt.iter().flat_map(|m| m.data().iter().copied()).filter(|&l| l != 0).collect();
    // frame -> labels that are mitotic in that frame
    let mut mitotic: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    for ev in lineage {
        for label in [ev.mother, ev.daughters.0, ev.daughters.1] {
            if !present.contains(&label) {
                return Err(Error::invalid(format!("division event references unknown label {label}")));
            }
        }
        if ev.daughters.0 == ev.daughters.1 {
            return Err(Error::invalid(format!("division of {} has identical daughters", ev.mother)));
        }
        for k in 0..n_mitosis {
            if let Some(f) = ev.frame.checked_sub(k) {
                mitotic.entry(f).or_default().insert(ev.mother);
            }
            let f = ev.frame + 1 + k;
            let set = mitotic.entry(f).or_default();
            set.insert(ev.daughters.0);
            set.insert(ev.daughters.1);
        }
    }
    let empty = BTreeSet::new();
    Ok(tra_gt
        .iter()
        .enumerate()
        .map(|(f, map)| {
            let set = mitotic.get(&f).unwrap_or(&empty);
            map.map(|l| match l {
                0 => DET_BACKGROUND,
                l if set.contains(&l) => DET_MITOTIC,
                _ => DET_NORMAL,
            })
        })
        .collect())
}

/// `N_input` consecutive frames ending at frame `t`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub planes: Vec<Raster<f32>>,
}

impl FrameStack {
    /// Interleaves the planes into one `(H, W, N_input)` raster.
    pub fn to_raster(&self) -> Raster<f32> {
        let first = &self.planes[0];
        let n = self.planes.len();
        let mut out = Raster::new(first.width(), first.height(), n, 0.0);
        for (c, plane) in self.planes.iter().enumerate() {
            for (i, &v) in plane.data().iter().enumerate() {
                out.data_mut()[i * n + c] = v;
            }
        }
        out
    }
}

/// Stacks frames `t - n_input + 1 ..= t`. Frames before the start of the
/// sequence are replaced by frame 0.
pub fn stack_frames(seq: &[Raster<f32>], t: usize, n_input: usize) -> Result<FrameStack> {
    if seq.is_empty() {
        return Err(Error::invalid("cannot stack frames of an empty sequence"));
    }
    if t >= seq.len() {
        return Err(Error::invalid(format!("frame {t} beyond sequence of {} frames", seq.len())));
    }
    if n_input == 0 {
        return Err(Error::invalid("N_input must be at least 1"));
    }
    if seq.iter().any(|f| !f.same_extent(&seq[0]) || f.channels() != 1) {
        return Err(Error::invalid("stacked frames must be single-channel with a common extent"));
    }
    let planes = (0..n_input)
        .map(|k| {
            let back = n_input - 1 - k;
            seq[t.saturating_sub(back)].clone()
        })
        .collect();
    Ok(FrameStack { planes })
}

/// Three-class segmentation targets from instance ground truth. A cell
/// pixel is boundary if any pixel within Chebyshev distance
/// `boundary_width` carries a different label (background or another cell,
/// or lies outside the raster).
pub fn boundary_interior_labels(seg_gt: &LabelMap, boundary_width: usize) -> Result<LabelMap> {
    if boundary_width == 0 {
        return Err(Error::invalid("boundary width must be at least 1"));
    }
    let (w, h) = seg_gt.extent();
    let r = boundary_width as i64;
    let mut out = Raster::new(w, h, 1, SEG_BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            let l = seg_gt.get(x, y);
            if l == 0 {
                continue;
            }
            let mut boundary = false;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if !seg_gt.contains(nx, ny) || seg_gt.get(nx as usize, ny as usize) != l {
                        boundary = true;
                        break 'scan;
                    }
                }
            }
            out.set(x, y, if boundary { SEG_BOUNDARY } else { SEG_INTERIOR });
        }
    }
    Ok(out)
}

/// Top-left corner of an `s`-pixel window centered on `c`, shifted to lie
/// inside `[0, extent)`.
fn crop_origin(c: f64, s: usize, extent: usize) -> usize {
    let start = c.round() as i64 - (s as i64 - 1) / 2;
    start.clamp(0, (extent - s) as i64) as usize
}

fn crop<T: Copy>(r: &Raster<T>, x0: usize, y0: usize, s: usize) -> Raster<T> {
    let c = r.channels();
    let mut data = Vec::with_capacity(s * s * c);
    for y in y0..y0 + s {
        let start = r.index(x0, y, 0);
        data.extend_from_slice(&r.data()[start..start + s * c]);
    }
    Raster::from_vec(s, s, c, data).expect("crop inside raster")
}

/// One `s_crop × s_crop` window per centroid, for image and labels alike.
/// Windows near the border are shifted inward rather than padded.
pub fn crop_samples<T: Copy>(
    image: &Raster<T>,
    seg_gt: &LabelMap,
    centroids: &[Point],
    s_crop: usize,
) -> Result<Vec<(Raster<T>, LabelMap)>> {
    if s_crop == 0 {
        return Err(Error::invalid("crop size must be at least 1"));
    }
    if !image.same_extent(seg_gt) {
        return Err(Error::invalid("image and labels must share an extent"));
    }
    if s_crop > image.width() || s_crop > image.height() {
        return Err(Error::invalid(format!(
            "crop size {s_crop} exceeds raster {}x{}",
            image.width(),
            image.height()
        )));
    }
    Ok(centroids
        .iter()
        .map(|p| {
            let x0 = crop_origin(p.x, s_crop, image.width());
            let y0 = crop_origin(p.y, s_crop, image.height());
            (crop(image, x0, y0, s_crop), crop(seg_gt, x0, y0, s_crop))
        })
        .collect())
}

/// Crop edge for a population whose mean cell size (√area) is `mean_size`:
/// five times that size, rounded.
pub fn crop_size_for(mean_size: f64) -> usize {
    (5.0 * mean_size).round().max(1.0) as usize
}

/// Co-registered training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Raster<f32>,
    pub labels: LabelMap,
    pub weights: Raster<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Noise {
    #[default]
    None,
    Gaussian { sigma: f64 },
    /// Fraction of pixels forced to 0 or 1 with equal odds.
    SaltPepper { density: f64 },
    /// Picks one of the two noise kinds at random.
    Either { sigma: f64, density: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentSpec {
    pub hflip: bool,
    pub vflip: bool,
    pub noise: Noise,
}

fn flip<T: Copy>(r: &Raster<T>, horizontal: bool) -> Raster<T> {
    let (w, h) = r.extent();
    let c = r.channels();
    let mut out = r.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) };
            for k in 0..c {
                out.set_c(x, y, k, r.get_c(sx, sy, k));
            }
        }
    }
    out
}

/// Flips apply to image, labels and weights alike; noise touches only the image.
pub fn augment(sample: &Sample, spec: &AugmentSpec, seed: u64) -> Result<Sample> {
    if !sample.image.same_extent(&sample.labels) || !sample.image.same_extent(&sample.weights) {
        return Err(Error::invalid("sample rasters must share an extent"));
    }
    let mut out = sample.clone();
    if spec.hflip {
        out = Sample {
            image: flip(&out.image, true),
            labels: flip(&out.labels, true),
            weights: flip(&out.weights, true),
        };
    }
    if spec.vflip {
        out = Sample {
            image: flip(&out.image, false),
            labels: flip(&out.labels, false),
            weights: flip(&out.weights, false),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = match spec.noise {
        Noise::Either { sigma, density } => {
            if rng.random_bool(0.5) {
                Noise::Gaussian { sigma }
            } else {
                Noise::SaltPepper { density }
            }
        }
        n => n,
    };
    match noise {
        Noise::None | Noise::Either { .. } => {}
        Noise::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::invalid(format!("bad noise sigma {sigma}: {e}")))?;
            for v in out.image.data_mut() {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        Noise::SaltPepper { density } => {
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::invalid(format!("salt-and-pepper density {density} outside [0, 1]")));
            }
            for v in out.image.data_mut() {
                if rng.random_bool(density) {
                    *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel_inputs(logits: [f64; 3], label: u32, weight: f64) -> LossInputs {
        LossInputs {
            logits: Raster::from_vec(1, 1, 3, logits.to_vec()).unwrap(),
            labels: Raster::new(1, 1, 1, label),
            weights: Raster::new(1, 1, 1, weight),
        }
    }

    #[test]
    fn uniform_softmax_loss_is_ln3() {
        let l = weighted_cross_entropy(&single_pixel_inputs([0.0; 3], 1, 1.0)).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        assert!((l - 1.098612).abs() < 1e-6);
        let half = weighted_cross_entropy(&single_pixel_inputs([0.0; 3], 1, 0.5)).unwrap();
        assert!((half - 0.549306).abs() < 1e-6);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let l = weighted_cross_entropy(&single_pixel_inputs([1000.0, -1000.0, 999.0], 2, 1.0)).unwrap();
        assert!(l.is_finite());
        // Exact: lse = 1000 + ln(1 + e^-1 + e^-2000); loss = lse - 999.
        let expected = 1.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        let mut bad = single_pixel_inputs([f64::NAN, 0.0, 0.0], 0, 1.0);
        assert!(matches!(weighted_cross_entropy(&bad), Err(Error::InvalidArgument(_))));
        bad = single_pixel_inputs([0.0; 3], 3, 1.0);
        assert!(weighted_cross_entropy(&bad).is_err());
        bad = single_pixel_inputs([0.0; 3], 0, -1.0);
        assert!(weighted_cross_entropy(&bad).is_err());
    }

    #[test]
    fn weight_map_lookup() {
        let bg = Raster::new(3, 2, 1, DET_BACKGROUND);
        let w = make_weight_map(&bg, &ClassWeights::DETECTION).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.2));

        let mut one = bg.clone();
        one.set(1, 1, DET_MITOTIC);
        one.set(0, 0, DET_NORMAL);
        let w = make_weight_map(&one, &ClassWeights::DETECTION).unwrap();
        assert_eq!(w.get(1, 1), 0.5);
        assert_eq!(w.get(0, 0), 0.3);
        assert_eq!(w.get(2, 0), 0.2);

        let mut bad = bg;
        bad.set(0, 0, 3);
        assert!(make_weight_map(&bad, &ClassWeights::SEGMENTATION).is_err());
    }

    fn track_maps(frames: usize, alive: &[(u32, usize, usize)]) -> Vec<LabelMap> {
        (0..frames)
            .map(|f| {
                let mut m = Raster::new(alive.len() * 2, 1, 1, 0u32);
                for (i, &(label, b, e)) in alive.iter().enumerate() {
                    if b <= f && f <= e {
                        m.set(i * 2, 0, label);
                    }
                }
                m
            })
            .collect()
    }

    #[test]
    fn mitotic_window_around_division() {
        let maps = track_maps(15, &[(1, 0, 10), (2, 11, 14), (3, 11, 14), (4, 0, 14)]);
        let ev = DivisionEvent { mother: 1, frame: 10, daughters: (2, 3) };
        let out = relabel_mitotic(&maps, &[ev], 2).unwrap();
        let class_of = |f: usize, slot: usize| out[f].get(slot * 2, 0);
        for f in 0..15 {
            let mother = if (9..=10).contains(&f) { DET_MITOTIC } else if f <= 10 { DET_NORMAL } else { DET_BACKGROUND };
            assert_eq!(class_of(f, 0), mother, "mother frame {f}");
            for slot in [1, 2] {
                let d = if (11..=12).contains(&f) { DET_MITOTIC } else if f >= 11 { DET_NORMAL } else { DET_BACKGROUND };
                assert_eq!(class_of(f, slot), d, "daughter frame {f}");
            }
            assert_eq!(class_of(f, 3), DET_NORMAL);
        }

        let none = relabel_mitotic(&maps, &[ev], 0).unwrap();
        assert!(none.iter().all(|m| m.data().iter().all(|&c| c != DET_MITOTIC)));
        let no_div = relabel_mitotic(&maps, &[], 2).unwrap();
        assert!(no_div.iter().all(|m| m.data().iter().all(|&c| c != DET_MITOTIC)));
    }

    #[test]
    fn relabel_rejects_unknown_labels() {
        let maps = track_maps(3, &[(1, 0, 2)]);
        let ev = DivisionEvent { mother: 1, frame: 1, daughters: (7, 8) };
        assert!(relabel_mitotic(&maps, &[ev], 2).is_err());
    }

    fn frames(n: usize) -> Vec<Raster<f32>> {
        (0..n).map(|i| Raster::new(2, 2, 1, i as f32)).collect()
    }

    fn plane_ids(s: &FrameStack) -> Vec<f32> {
        s.planes.iter().map(|p| p.get(0, 0)).collect()
    }

    #[test]
    fn stacking_rules() {
        let seq = frames(8);
        assert_eq!(plane_ids(&stack_frames(&seq, 4, 1).unwrap()), vec![4.0]);
        assert_eq!(plane_ids(&stack_frames(&seq, 0, 3).unwrap()), vec![0.0, 0.0, 0.0]);
        assert_eq!(plane_ids(&stack_frames(&seq, 1, 3).unwrap()), vec![0.0, 0.0, 1.0]);
        assert_eq!(plane_ids(&stack_frames(&seq, 5, 3).unwrap()), vec![3.0, 4.0, 5.0]);
        assert!(stack_frames(&[], 0, 3).is_err());
        assert!(stack_frames(&seq, 8, 3).is_err());

        let r = stack_frames(&seq, 5, 3).unwrap().to_raster();
        assert_eq!(r.channels(), 3);
        assert_eq!(&r.data()[..3], &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn boundary_of_single_pixel_and_touching_cells() {
        let mut m = Raster::new(3, 3, 1, 0u32);
        m.set(1, 1, 5);
        let b = boundary_interior_labels(&m, 1).unwrap();
        assert_eq!(b.get(1, 1), SEG_BOUNDARY);
        assert_eq!(b.get(0, 0), SEG_BACKGROUND);

        // Two 3-wide cells sharing an edge inside a larger cell-free frame.
        let mut two = Raster::new(8, 5, 1, 0u32);
        for y in 0..5 {
            for x in 1..4 {
                two.set(x, y, 1);
            }
            for x in 4..7 {
                two.set(x, y, 2);
            }
        }
        let b = boundary_interior_labels(&two, 1).unwrap();
        for y in 0..5 {
            assert_eq!(b.get(3, y), SEG_BOUNDARY);
            assert_eq!(b.get(4, y), SEG_BOUNDARY);
        }
        assert!(boundary_interior_labels(&two, 0).is_err());
    }

    #[test]
    fn crops_are_centered_and_shifted() {
        let (w, h) = (11, 9);
        let image = Raster::from_vec(w, h, 1, (0..w * h).map(|i| i as f32).collect()).unwrap();
        let labels = image.map(|v| v as u32);
        let crops = crop_samples(&image, &labels, &[Point::new(5.0, 4.0)], 5).unwrap();
        assert_eq!(crops.len(), 1);
        let (ci, cl) = &crops[0];
        assert_eq!(ci.extent(), (5, 5));
        assert_eq!(ci.get(2, 2), image.get(5, 4));
        assert_eq!(cl.get(2, 2), labels.get(5, 4));

        let crops = crop_samples(&image, &labels, &[Point::new(0.0, 0.0), Point::new(10.0, 8.0), Point::new(3.3, 7.9)], 5).unwrap();
        assert_eq!(crops.len(), 3);
        assert_eq!(crops[0].0.get(0, 0), image.get(0, 0));
        assert_eq!(crops[1].0.get(4, 4), image.get(10, 8));
        assert!(crop_samples(&image, &labels, &[Point::default()], 10).is_err());
        assert_eq!(crop_size_for(7.2), 36);
    }

    fn sample() -> Sample {
        let image = Raster::from_vec(3, 2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let labels = Raster::from_vec(3, 2, 1, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let weights = make_weight_map(&labels, &ClassWeights::DETECTION).unwrap();
        Sample { image, labels, weights }
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample();
        let spec = AugmentSpec { hflip: true, ..Default::default() };
        let once = augment(&s, &spec, 1).unwrap();
        assert_ne!(once, s);
        assert_eq!(augment(&once, &spec, 1).unwrap(), s);
        let spec = AugmentSpec { vflip: true, ..Default::default() };
        assert_eq!(augment(&augment(&s, &spec, 0).unwrap(), &spec, 0).unwrap(), s);
    }

    #[test]
    fn flip_keeps_registration() {
        let s = sample();
        let out = augment(&s, &AugmentSpec { hflip: true, vflip: true, noise: Noise::None }, 3).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                let (sx, sy) = (2 - x, 1 - y);
                assert_eq!(out.image.get(x, y), s.image.get(sx, sy));
                assert_eq!(out.labels.get(x, y), s.labels.get(sx, sy));
                assert_eq!(out.weights.get(x, y), s.weights.get(sx, sy));
            }
        }
    }

    #[test]
    fn noise_is_seeded_and_image_only() {
        let s = sample();
        for noise in [Noise::Gaussian { sigma: 0.1 }, Noise::SaltPepper { density: 0.5 }, Noise::Either { sigma: 0.1, density: 0.5 }] {
            let spec = AugmentSpec { noise, ..Default::default() };
            let a = augment(&s, &spec, 42).unwrap();
            let b = augment(&s, &spec, 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.labels, s.labels);
            assert_eq!(a.weights, s.weights);
        }
        let g = AugmentSpec { noise: Noise::Gaussian { sigma: 0.1 }, ..Default::default() };
        assert_ne!(augment(&s, &g, 1).unwrap().image, augment(&s, &g, 2).unwrap().image);
    }
}
