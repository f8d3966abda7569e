//! Property tests over the core invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;

use toothbox_core::detect::{Detection2D, Label};
use toothbox_core::geom::Box2i;
use toothbox_core::reconstruct::{interpolate_volume, reconstruct, MatchConfig, ToothVolume};
use toothbox_core::slab::{sample_slices, select_tooth_slab, slice_step_voxels, AxialProfile};

fn arb_profile() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1000.0f64, 1..64)
}

proptest! {
    #[test]
    fn slab_window_is_maximal_and_above_threshold(values in arb_profile()) {
        let fraction = 0.9;
        let profile = AxialProfile::new(values.clone());
        let (lo, hi) = select_tooth_slab(&profile, fraction);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = min + (1.0 - fraction) * (max - min);

        for &v in &values[lo..=hi] {
            prop_assert!(v >= threshold);
        }
        // Maximality: one more slice on either side dips below threshold.
        if lo > 0 {
            prop_assert!(values[lo - 1] < threshold);
        }
        if hi + 1 < values.len() {
            prop_assert!(values[hi + 1] < threshold);
        }
        // The global maximum lies inside the window.
        let argmax = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let first_argmax = values.iter().position(|&v| v == values[argmax]).unwrap();
        prop_assert!((lo..=hi).contains(&first_argmax));
    }

    #[test]
    fn sampling_has_constant_stride_and_covers_teeth(
        z_lo in 0usize..40,
        span in 0usize..80,
        sz in prop::sample::select(vec![0.35f64, 0.5, 0.6, 0.7, 1.4]),
    ) {
        let interval = 1.4;
        let z_hi = z_lo + span;
        let slices = sample_slices(z_lo, z_hi, sz, interval);
        let step = slice_step_voxels(sz, interval);
        prop_assert_eq!(slices[0], z_lo);
        for w in slices.windows(2) {
            prop_assert_eq!(w[1] - w[0], step);
        }
        // With an effective step no coarser than the interval, any tooth of
        // vertical extent >= 4.2 mm lying inside the slab meets >= 3
        // samples.
        if step as f64 * sz <= interval {
            let tooth_rows = (4.2 / sz).ceil() as usize;
            for start in z_lo..=z_hi {
                if start + tooth_rows > z_hi + 1 {
                    break; // tooth would stick out of the slab
                }
                let hits = slices
                    .iter()
                    .filter(|&&s| s >= start && s < start + tooth_rows)
                    .count();
                prop_assert!(hits >= 3, "only {} samples in a 4.2 mm tooth", hits);
            }
        }
    }
}

fn arb_rect() -> impl Strategy<Value = Box2i> {
    (0i32..60, 0i32..60, 2i32..14, 2i32..14)
        .prop_map(|(x, y, w, h)| Box2i::new(x, y, x + w, y + h))
}

fn arb_stack() -> impl Strategy<Value = BTreeMap<usize, Vec<Detection2D>>> {
    let det = (0usize..12, arb_rect(), 1u8..=8).prop_map(|(slice, rect, class)| Detection2D {
        slice,
        rect,
        label: Label::new(class).unwrap(),
        confidence: 1.0,
    });
    prop::collection::vec(det, 0..40).prop_map(|dets| {
        let mut m: BTreeMap<usize, Vec<Detection2D>> = BTreeMap::new();
        for d in dets {
            m.entry(d.slice).or_default().push(d);
        }
        m
    })
}

fn count_consumed(vols: &[ToothVolume]) -> usize {
    vols.iter().map(|v| v.matches.len()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lifecycle_invariants_hold_on_random_stacks(stack in arb_stack()) {
        let sz = 1.0;
        let cfg = MatchConfig::for_step(sz);
        let slices: Vec<usize> = (0..12).collect();
        let vols = reconstruct(&stack, &slices, sz, &cfg);

        let total_dets: usize = stack.values().map(Vec::len).sum();
        prop_assert!(count_consumed(&vols) <= total_dets);

        for v in &vols {
            prop_assert!(v.matches.len() >= cfg.min_detections);
            prop_assert!(v.height_mm(sz) >= cfg.min_height_mm);
            prop_assert!(v.final_label.is_some());

            // At most one match per slice, and matched slices are distinct.
            let mut slices_seen: Vec<usize> = v.matches.iter().map(|m| m.slice).collect();
            slices_seen.sort_unstable();
            let len = slices_seen.len();
            slices_seen.dedup();
            prop_assert_eq!(len, slices_seen.len());

            // No matched pair bridges more than max_skipped_slices slices.
            for w in slices_seen.windows(2) {
                prop_assert!((w[1] - w[0]) as u32 <= cfg.max_skipped_slices);
            }

            let hist_total: u32 = v.label_histogram.iter().sum();
            prop_assert_eq!(hist_total as usize, v.matches.len());
        }

        // Partition: each detection consumed at most once.
        let mut consumed: Vec<(usize, Box2i, u8)> = vols
            .iter()
            .flat_map(|v| v.matches.iter().map(|m| (m.slice, m.rect, m.label.class())))
            .collect();
        let before = consumed.len();
        consumed.sort_unstable();
        let mut pool: Vec<(usize, Box2i, u8)> = stack
            .iter()
            .flat_map(|(z, list)| list.iter().map(move |d| (*z, d.rect, d.label.class())))
            .collect();
        pool.sort_unstable();
        // Every consumed detection exists in the pool with multiplicity.
        let mut pi = 0;
        for c in &consumed {
            while pi < pool.len() && pool[pi] < *c {
                pi += 1;
            }
            prop_assert!(pi < pool.len() && pool[pi] == *c, "match not in input pool");
            pi += 1;
        }
        prop_assert_eq!(before, consumed.len());
    }

    #[test]
    fn reconstruction_ignores_within_slice_order(stack in arb_stack(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let sz = 1.0;
        let cfg = MatchConfig::for_step(sz);
        let slices: Vec<usize> = (0..12).collect();
        let base = reconstruct(&stack, &slices, sz, &cfg);

        let mut shuffled = stack.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for v in shuffled.values_mut() {
            v.shuffle(&mut rng);
        }
        let permuted = reconstruct(&shuffled, &slices, sz, &cfg);
        prop_assert_eq!(base, permuted);
    }

    #[test]
    fn interpolation_is_monotone_and_anchored(
        slices in prop::collection::btree_set(0usize..30, 2..6),
        rects in prop::collection::vec(arb_rect(), 6),
    ) {
        let entries: Vec<(usize, Box2i)> =
            slices.iter().copied().zip(rects.iter().copied()).collect();
        let mut stack: BTreeMap<usize, Vec<Detection2D>> = BTreeMap::new();
        for &(z, rect) in &entries {
            stack.entry(z).or_default().push(Detection2D {
                slice: z,
                rect,
                label: Label::new(1).unwrap(),
                confidence: 1.0,
            });
        }
        // Build a track directly by running reconstruct with a permissive
        // config (single detection chain may split; use whatever comes out).
        let mut cfg = MatchConfig::for_step(1.0);
        cfg.max_skipped_slices = 100;
        cfg.min_detections = 1;
        cfg.min_height_mm = 0.0;
        cfg.beta = f64::INFINITY;
        cfg.w2 = 0.0; // any overlap accepted: one single track
        let axis: Vec<usize> = (0..30).collect();
        let vols = reconstruct(&stack, &axis, 1.0, &cfg);
        prop_assert_eq!(vols.len(), 1);
        let dense = interpolate_volume(&vols[0]);

        // Anchors kept verbatim.
        for &(z, rect) in &entries {
            let found = dense.iter().find(|(dz, _)| *dz == z).unwrap();
            prop_assert_eq!(found.1.x_min, f64::from(rect.x_min));
            prop_assert_eq!(found.1.y_max, f64::from(rect.y_max));
        }
        // Dense cover between first and last anchor.
        let zs: Vec<usize> = dense.iter().map(|(z, _)| *z).collect();
        let lo = *slices.iter().min().unwrap();
        let hi = *slices.iter().max().unwrap();
        prop_assert_eq!(zs, (lo..=hi).collect::<Vec<_>>());

        // Per-gap monotonicity of each coordinate.
        let anchor_zs: Vec<usize> = entries.iter().map(|e| e.0).collect();
        for w in anchor_zs.windows(2) {
            let seg: Vec<&(usize, toothbox_core::geom::Box2f)> = dense
                .iter()
                .filter(|(z, _)| *z >= w[0] && *z <= w[1])
                .collect();
            for pair in seg.windows(2) {
                let (a, b) = (&pair[0].1, &pair[1].1);
                let dir = |p: f64, q: f64, lo: f64, hi: f64| {
                    if hi >= lo { q >= p - 1e-9 } else { q <= p + 1e-9 }
                };
                let first = seg.first().unwrap().1;
                let last = seg.last().unwrap().1;
                prop_assert!(dir(a.x_min, b.x_min, first.x_min, last.x_min));
                prop_assert!(dir(a.y_min, b.y_min, first.y_min, last.y_min));
                prop_assert!(dir(a.x_max, b.x_max, first.x_max, last.x_max));
                prop_assert!(dir(a.y_max, b.y_max, first.y_max, last.y_max));
            }
        }
    }
}
