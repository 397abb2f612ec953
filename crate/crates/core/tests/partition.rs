use geoloc_core::geometry::{center_box, partition_masks, split_center_surround, RegionBox};
use geoloc_core::{Error, PartitionSpec, Tensor};

pub const RATIOS: [f64; 3] = [0.25, 0.5, 0.75];

#[test]
fn sixteen_by_sixteen_has_an_eight_by_eight_center() {
    let b = center_box(16, 16, PartitionSpec::new(0.5).unwrap()).unwrap();
    assert_eq!(
        b,
        RegionBox {
            row_start: 4,
            row_end: 12,
            col_start: 4,
            col_end: 12
        }
    );
    let (_, center, surround) = partition_masks(16, 16, PartitionSpec::new(0.5).unwrap()).unwrap();
    assert_eq!((center.count(), surround.count()), (64, 192));
}

/// Every cell belongs to exactly one of center and surround, the center is a
/// contiguous box, and grids too small to split fail with a named error.
#[test]
fn partition_is_complete_for_every_small_grid() {
    for ratio in RATIOS {
        let spec = PartitionSpec::new(ratio).unwrap();
        for h in 0..=33 {
            for w in 0..=33 {
                match partition_masks(h, w, spec) {
                    Ok((b, center, surround)) => {
                        assert!(b.row_end <= h && b.col_end <= w);
                        assert!(b.area() >= 1);
                        for y in 0..h {
                            for x in 0..w {
                                let i = y * w + x;
                                assert_ne!(center.cells()[i], surround.cells()[i], "{h}x{w} r={ratio} cell {y},{x}");
                                assert_eq!(center.cells()[i], b.contains(y, x));
                            }
                        }
                        assert_eq!(center.count() + surround.count(), h * w);
                        // centered up to one cell, with odd margins pushed bottom/right
                        let (top, bottom) = (b.row_start, h - b.row_end);
                        let (left, right) = (b.col_start, w - b.col_end);
                        assert!(top >= bottom && top - bottom <= 1, "{h}x{w} r={ratio}");
                        assert!(left >= right && left - right <= 1, "{h}x{w} r={ratio}");
                    }
                    Err(Error::GridTooSmall { .. }) => assert!(h < 2 || w < 2),
                    Err(Error::CenterTooSmall) => {
                        assert!((ratio * h as f64).round() < 1.0 || (ratio * w as f64).round() < 1.0)
                    }
                    Err(e) => panic!("{h}x{w} r={ratio}: {e}"),
                }
            }
        }
    }
}

#[test]
fn center_and_surround_sums_add_up() {
    let (h, w) = (7, 10);
    let data: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
    let fm = Tensor::from_vec([1, 2, h, w], data).unwrap();
    let spec = PartitionSpec::new(0.5).unwrap();
    let (center, surround) = split_center_surround(&fm, spec).unwrap();
    for ch in 0..2 {
        let plane = &fm.data()[ch * h * w..(ch + 1) * h * w];
        let whole: f64 = plane.iter().sum();
        let inner: f64 = center.data()[ch * center.plane()..(ch + 1) * center.plane()]
            .iter()
            .sum();
        let outer: f64 = surround.indices().iter().map(|&i| plane[i]).sum();
        assert!((inner + outer - whole).abs() < 1e-12);
    }
}

#[test]
fn larger_and_smallest_boxes() {
    let b = center_box(16, 16, PartitionSpec::new(0.75).unwrap()).unwrap();
    assert_eq!((b.row_start, b.row_end, b.col_start, b.col_end), (2, 14, 2, 14));
    // the odd leftover cell lands above/left, so the box sits bottom/right
    let b = center_box(2, 2, PartitionSpec::new(0.5).unwrap()).unwrap();
    assert_eq!((b.row_start, b.row_end, b.col_start, b.col_end), (1, 2, 1, 2));
    assert!(matches!(
        center_box(1, 5, PartitionSpec::new(0.5).unwrap()),
        Err(Error::GridTooSmall { .. })
    ));
    assert!(matches!(
        center_box(2, 2, PartitionSpec::new(0.2).unwrap()),
        Err(Error::CenterTooSmall)
    ));
}
