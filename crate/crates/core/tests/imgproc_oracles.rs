mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsas_core::imgproc::{
    binarize, bounding_box, connected_components, dilate, minmax_normalize, resize_bilinear, ring,
};
use zsas_core::{BinaryMask, KernelShape, PointPrompt, Polarity, ScoreGrid, StructuringElement};

const SHAPES: [KernelShape; 3] = [KernelShape::Ellipse, KernelShape::Rectangle, KernelShape::Cross];

#[test]
fn dilation_and_ring_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..24 {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let mask = oracle::random_mask(&mut rng, h, w);
        for shape in SHAPES {
            for size in (1..=15).step_by(2) {
                let (kw, kh) = if rng.gen_bool(0.3) {
                    (size, rng.gen_range(0..8) * 2 + 1)
                } else {
                    (size, size)
                };
                if kw as usize > 2 * w || kh as usize > 2 * h {
                    continue;
                }
                let el = StructuringElement::new(shape, kw, kh).unwrap();
                assert_eq!(
                    dilate(&mask, &el).unwrap(),
                    oracle::dilate(&mask, shape, kw, kh),
                    "{shape:?} {kw}x{kh} on {h}x{w}"
                );
                assert_eq!(ring(&mask, &el).unwrap(), oracle::ring(&mask, shape, kw, kh));
            }
        }
    }
}

#[test]
fn element_footprints_match_the_definitions() {
    for shape in SHAPES {
        for w in (1..=31).step_by(2) {
            for h in [1, 3, w, 31] {
                let el = StructuringElement::new(shape, w, h).unwrap();
                let expected = oracle::footprint(shape, w, h);
                let (a, b) = (w as i64 / 2, h as i64 / 2);
                let mut got = Vec::new();
                for dy in -b..=b {
                    for dx in -a..=a {
                        if el.contains(dx, dy) {
                            got.push((dx, dy));
                        }
                    }
                }
                assert_eq!(got, expected, "{shape:?} {w}x{h}");
                assert!(got.contains(&(0, 0)));
            }
        }
    }
}

#[test]
fn components_match_flood_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..60 {
        let mask = oracle::random_mask(&mut rng, 48, 48);
        let got = connected_components(&mask);
        let (labels, areas) = oracle::flood_fill(&mask);
        assert_eq!(got.labels, labels);
        assert_eq!(got.component_count, areas.len());
        assert_eq!(got.component_areas, areas);
    }
}

#[test]
fn components_examples() {
    let mask = BinaryMask::from_fn(6, 6, |y, x| (y < 2 && x < 2) || (y >= 4 && x >= 4)).unwrap();
    let c = connected_components(&mask);
    assert_eq!(c.component_count, 2);
    assert_eq!(c.component_areas, vec![4, 4]);
    assert_eq!(connected_components(&BinaryMask::empty(3, 3).unwrap()).component_count, 0);
}

fn positive(x: usize, y: usize) -> PointPrompt {
    PointPrompt {
        x: x as u32,
        y: y as u32,
        polarity: Polarity::Positive,
        score: 1.0,
    }
}

#[test]
fn bounding_box_matches_anchor_filter_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let mask = oracle::random_mask(&mut rng, 32, 32);
        let anchors: Vec<(usize, usize)> = (0..rng.gen_range(0..4))
            .map(|_| (rng.gen_range(0..32), rng.gen_range(0..32)))
            .collect();
        let prompts: Vec<PointPrompt> = anchors.iter().map(|&(x, y)| positive(x, y)).collect();
        match oracle::anchored_box(&mask, &anchors) {
            None => assert!(bounding_box(&mask, &prompts).is_err()),
            Some((x0, y0, x1, y1)) => {
                let b = bounding_box(&mask, &prompts).unwrap();
                assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (x0, y0, x1, y1));
            }
        }
    }
}

#[test]
fn bounding_box_examples() {
    let block = BinaryMask::from_fn(20, 20, |y, x| (10..=12).contains(&y) && (10..=12).contains(&x))
        .unwrap();
    let b = bounding_box(&block, &[positive(11, 11)]).unwrap();
    assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (10, 10, 12, 12));

    let two = BinaryMask::from_fn(20, 20, |y, x| {
        (y < 8 && x < 8) || ((15..17).contains(&y) && (15..17).contains(&x))
    })
    .unwrap();
    let b = bounding_box(&two, &[positive(16, 16)]).unwrap();
    assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (15, 15, 16, 16));
}

#[test]
fn normalize_and_binarize_match_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let values: Vec<f32> = (0..256).map(|_| rng.gen_range(-3.0..7.0)).collect();
    let grid = ScoreGrid::new(16, 16, values.clone()).unwrap();
    let n = minmax_normalize(&grid).unwrap();
    let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| {
        (l.min(v as f64), h.max(v as f64))
    });
    for (got, &v) in n.values().iter().zip(&values) {
        let want = (v as f64 - lo) / (hi - lo);
        assert!((*got as f64 - want).abs() < 1e-6);
    }
    let b = binarize(&n, 0.73).unwrap();
    for (got, &v) in b.values().iter().zip(n.values()) {
        assert_eq!(*got, v as f64 >= 0.73);
    }
    assert!(binarize(&n, 0.0).unwrap().values().iter().all(|&v| v));

    let examples = ScoreGrid::new(1, 3, vec![0.0, 5.0, 10.0]).unwrap();
    assert_eq!(minmax_normalize(&examples).unwrap().values(), &[0.0, 0.5, 1.0]);
    let flat = ScoreGrid::new(1, 3, vec![7.0; 3]).unwrap();
    assert_eq!(minmax_normalize(&flat).unwrap().values(), &[0.0; 3]);
    let edge = ScoreGrid::normalized(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
    assert_eq!(binarize(&edge, 0.5).unwrap().values(), &[false, true, true]);
}

#[test]
fn resize_constant_and_identity() {
    let c = ScoreGrid::filled(5, 7, 0.3).unwrap();
    let r = resize_bilinear(&c, 13, 2).unwrap();
    assert!(r.values().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = ScoreGrid::new(6, 9, (0..54).map(|_| rng.gen()).collect()).unwrap();
    assert_eq!(resize_bilinear(&g, 6, 9).unwrap(), g);
}
