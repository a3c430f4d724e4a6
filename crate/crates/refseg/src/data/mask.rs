use ndarray::Array2;

use crate::error::{Error, Result};

/// Rasterizes polygons onto an `h`×`w` canvas with the even-odd fill rule.
/// A pixel `(x, y)` is tested at its integer coordinate; points lying on a
/// polygon edge are foreground (boundary-inclusive).
pub fn polygon_to_mask(polygons: &[Vec<[f64; 2]>], h: usize, w: usize) -> Result<Array2<u8>> {
    if polygons.is_empty() || polygons.iter().any(|p| p.len() < 3) {
        return Err(Error::Data(
            "polygon mask needs at least one ring with 3+ vertices".into(),
        ));
    }
    let mut mask = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if point_in_polygons(x as f64, y as f64, polygons) {
                mask[[y, x]] = 1;
            }
        }
    }
    Ok(mask)
}

fn point_in_polygons(px: f64, py: f64, polygons: &[Vec<[f64; 2]>]) -> bool {
    let mut inside = false;
    for ring in polygons {
        let n = ring.len();
        for i in 0..n {
            let [x1, y1] = ring[i];
            let [x2, y2] = ring[(i + 1) % n];
            if on_segment(px, py, x1, y1, x2, y2) {
                return true;
            }
            if (y1 > py) != (y2 > py) {
                let xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if px < xi {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

fn on_segment(px: f64, py: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
    if cross.abs() > 1e-9 {
        return false;
    }
    let dot = (px - x1) * (px - x2) + (py - y1) * (py - y2);
    dot <= 1e-9
}

/// COCO-style uncompressed RLE: run lengths in column-major pixel order,
/// alternating background/foreground and starting with background.
pub fn rle_encode(mask: &Array2<u8>) -> Vec<usize> {
    let (h, w) = mask.dim();
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0usize;
    for x in 0..w {
        for y in 0..h {
            let v = if mask[[y, x]] != 0 { 1 } else { 0 };
            if v == current {
                run += 1;
            } else {
                counts.push(run);
                current = v;
                run = 1;
            }
        }
    }
    counts.push(run);
    counts
}

/// Inverse of [`rle_encode`]; counts must sum to `h * w`.
pub fn rle_decode(counts: &[usize], h: usize, w: usize) -> Result<Array2<u8>> {
    let total: usize = counts.iter().sum();
    if total != h * w {
        return Err(Error::Data(format!(
            "RLE counts sum to {total}, expected {}",
            h * w
        )));
    }
    let mut mask = Array2::<u8>::zeros((h, w));
    let mut pos = 0usize;
    let mut value = 0u8;
    for &run in counts {
        if value == 1 {
            for p in pos..pos + run {
                mask[[p % h, p / h]] = 1;
            }
        }
        pos += run;
        value = 1 - value;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent even-odd crossing count, no boundary handling shared
    // with the implementation path above.
    fn oracle_inside(px: f64, py: f64, ring: &[[f64; 2]]) -> bool {
        let n = ring.len();
        let mut crossings = 0;
        for i in 0..n {
            let [x1, y1] = ring[i];
            let [x2, y2] = ring[(i + 1) % n];
            if (y1 <= py && y2 > py) || (y2 <= py && y1 > py) {
                let t = (py - y1) / (y2 - y1);
                if px < x1 + t * (x2 - x1) {
                    crossings += 1;
                }
            }
        }
        crossings % 2 == 1
    }

    #[test]
    fn square_polygon_is_boundary_inclusive() {
        let poly = vec![vec![[0.0, 0.0], [0.0, 4.0], [4.0, 4.0], [4.0, 0.0]]];
        let mask = polygon_to_mask(&poly, 8, 8).unwrap();
        let count = mask.iter().filter(|&&v| v > 0).count();
        assert_eq!(count, 25);
        // interior agrees with the independent crossing-count oracle
        for y in 0..8 {
            for x in 0..8 {
                let strict = oracle_inside(x as f64 + 0.5, y as f64 + 0.5, &poly[0]);
                if strict {
                    // every strictly interior pixel (shifted test point well
                    // inside) must be foreground
                    assert_eq!(mask[[y, x]], 1, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn empty_polygon_list_rejected() {
        assert!(polygon_to_mask(&[], 4, 4).is_err());
    }

    #[test]
    fn rle_known_case() {
        let mut mask = Array2::<u8>::zeros((2, 2));
        mask[[0, 0]] = 1; // column-major order: (0,0) (1,0) (0,1) (1,1)
        assert_eq!(rle_encode(&mask), vec![0, 1, 3]);
        let back = rle_decode(&[0, 1, 3], 2, 2).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn rle_bad_total_rejected() {
        assert!(rle_decode(&[3], 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trip(bits in proptest::collection::vec(0u8..2, 64)) {
            let mask = Array2::from_shape_vec((8, 8), bits).unwrap();
            let counts = rle_encode(&mask);
            let back = rle_decode(&counts, 8, 8).unwrap();
            prop_assert_eq!(&back, &mask);
            prop_assert_eq!(rle_encode(&back), counts);
        }
    }
}
