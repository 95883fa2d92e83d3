use expsel_core::DifferenceMatrix;

/// Binary greyscale PGM of a difference matrix: one pixel per entry, rows
/// are queries, the largest distance is white. A constant matrix is black.
pub fn render_pgm(dm: &DifferenceMatrix) -> Vec<u8> {
    let pixels = grey_levels(dm.values());
    let mut out = format!("P5\n{} {}\n255\n", dm.cols(), dm.rows()).into_bytes();
    out.extend_from_slice(&pixels);
    out
}

pub fn grey_levels(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use expsel_core::FrameRef;

    fn refs(e: &str, n: usize) -> Vec<FrameRef> {
        (0..n)
            .map(|i| FrameRef {
                experience_id: e.into(),
                frame_index: i,
            })
            .collect()
    }

    #[test]
    fn two_by_two() {
        let dm = DifferenceMatrix::new(refs("q", 2), refs("r", 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let img = render_pgm(&dm);
        assert_eq!(&img[..11], b"P5\n2 2\n255\n");
        assert_eq!(&img[11..], &[0, 255, 255, 0]);
    }

    #[test]
    fn constant_is_black() {
        assert_eq!(grey_levels(&[3.5; 6]), vec![0; 6]);
    }

    #[test]
    fn non_square_header_is_width_then_height() {
        let dm = DifferenceMatrix::new(refs("q", 2), refs("r", 3), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let img = render_pgm(&dm);
        assert!(img.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(img.len(), 11 + 6);
    }
}
