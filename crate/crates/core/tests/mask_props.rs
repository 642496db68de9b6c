mod common;

use masksplitter::{
    binarize_scores, connected_components, extract_instance, mask_union, BinaryMask, Connectivity,
    LabelMap, Plane, ScoreMapPair,
};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..2, w * h)
            .prop_map(move |d| BinaryMask::new(w, h, d).unwrap())
    })
}

fn conn_strategy() -> impl Strategy<Value = Connectivity> {
    prop_oneof![Just(Connectivity::Four), Just(Connectivity::Eight)]
}

fn neighbours(c: Connectivity) -> &'static [(isize, isize)] {
    match c {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    }
}

proptest! {
    #[test]
    fn union_of_components_is_the_mask(m in mask_strategy(), c in conn_strategy()) {
        let cc = connected_components(&m, c);
        prop_assert_eq!(mask_union(&cc), m.clone());
        prop_assert_eq!(cc.areas().iter().sum::<usize>(), m.area());
    }

    #[test]
    fn components_are_maximal_and_raster_ordered(m in mask_strategy(), c in conn_strategy()) {
        let cc = connected_components(&m, c);
        let (w, h) = m.dims();
        // adjacent foreground pixels share a label
        for y in 0..h {
            for x in 0..w {
                if !m.get(x, y) { continue; }
                for &(dx, dy) in neighbours(c) {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize { continue; }
                    if m.get(nx as usize, ny as usize) {
                        prop_assert_eq!(cc.get(x, y), cc.get(nx as usize, ny as usize));
                    }
                }
            }
        }
        // labels first appear in increasing order
        let mut next = 1;
        for &l in cc.labels() {
            if l == next { next += 1; }
            prop_assert!(l < next);
        }
        // every label is connected: flood from its first pixel reaches all
        for id in 1..=cc.count() {
            let inst = extract_instance(&cc, id).unwrap();
            let again = connected_components(&inst, c);
            prop_assert_eq!(again.count(), 1);
        }
    }

    #[test]
    fn eight_never_has_more_components_than_four(m in mask_strategy()) {
        let four = connected_components(&m, Connectivity::Four).count();
        let eight = connected_components(&m, Connectivity::Eight).count();
        prop_assert!(eight <= four);
    }

    #[test]
    fn extract_then_union_round_trips(m in mask_strategy()) {
        let cc = connected_components(&m, Connectivity::Eight);
        let mut acc = BinaryMask::zeros(m.width(), m.height());
        for inst in cc.instance_masks() {
            prop_assert_eq!(acc.intersection_count(&inst).unwrap(), 0);
            acc.union_with(&inst).unwrap();
        }
        prop_assert_eq!(acc, m);
    }

    #[test]
    fn binarize_ignores_a_common_shift(
        (w, h, obj, bg) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| (
            Just(w), Just(h),
            proptest::collection::vec(-50i32..50, w * h),
            proptest::collection::vec(-50i32..50, w * h),
        )),
        shift in -1000i32..1000,
    ) {
        // integer-valued scores keep the shift exact
        let mk = |v: &[i32], s: i32| Plane::new(w, h, v.iter().map(|&a| (a + s) as f64).collect()).unwrap();
        let a = binarize_scores(&ScoreMapPair::new(mk(&obj, 0), mk(&bg, 0)).unwrap());
        let b = binarize_scores(&ScoreMapPair::new(mk(&obj, shift), mk(&bg, shift)).unwrap());
        prop_assert_eq!(&a, &b);
        for i in 0..w * h {
            prop_assert_eq!(a.data()[i] != 0, obj[i] > bg[i]);
        }
    }

    #[test]
    fn components_commute_with_translation(m in mask_strategy(), dx in 0usize..4, dy in 0usize..4) {
        let (w, h) = m.dims();
        let big = BinaryMask::from_fn(w + dx, h + dy, |x, y| x >= dx && y >= dy && m.get(x - dx, y - dy));
        let a = connected_components(&m, Connectivity::Eight);
        let b = connected_components(&big, Connectivity::Eight);
        prop_assert_eq!(a.count(), b.count());
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(a.get(x, y), b.get(x + dx, y + dy));
            }
        }
    }

    #[test]
    fn compacted_labels_preserve_the_partition(
        (w, h, raw) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| (
            Just(w), Just(h), proptest::collection::vec(0u32..6, w * h),
        )),
    ) {
        let map = LabelMap::from_labels_compacted(w, h, raw.clone()).unwrap();
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                prop_assert_eq!(raw[i] == raw[j], map.labels()[i] == map.labels()[j]);
            }
            prop_assert_eq!(raw[i] == 0, map.labels()[i] == 0);
        }
        let distinct = common::histogram(&raw).keys().filter(|&&k| k != 0).count();
        prop_assert_eq!(map.count() as usize, distinct);
    }
}

#[test]
fn from_labels_rejects_gaps() {
    assert!(LabelMap::from_labels(2, 1, vec![0, 2]).is_err());
    assert!(LabelMap::from_labels(2, 1, vec![1, 2]).is_ok());
}
