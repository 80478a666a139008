//! Binary greyscale (PGM, P5) renderings of representation matrices.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::IoError;

/// Series indices sorted by cluster label, stable within a cluster.
pub fn cluster_order(labels: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| labels[i]);
    order
}

/// 8-bit P5 image of `z[order[i], order[j]]`, scaled linearly from
/// `[0, max z]` to `[0, 255]`. An all-zero matrix renders black.
pub fn render_pgm(z: &DMatrix<f64>, order: &[usize]) -> Vec<u8> {
    let n = order.len();
    let max = order
        .iter()
        .flat_map(|&i| order.iter().map(move |&j| z[(i, j)]))
        .fold(0.0_f64, f64::max);
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.reserve(n * n);
    for &i in order {
        for &j in order {
            let v = if max > 0.0 {
                (z[(i, j)].max(0.0) / max * 255.0).round()
            } else {
                0.0
            };
            out.push(v as u8);
        }
    }
    out
}

pub fn write_heatmap(path: &Path, z: &DMatrix<f64>, labels: &[usize]) -> Result<(), IoError> {
    let bytes = render_pgm(z, &cluster_order(labels));
    std::fs::write(path, bytes).map_err(|e| IoError::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_groups_labels() {
        assert_eq!(cluster_order(&[1, 0, 1, 0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn pixels_follow_order_and_scale() {
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let img = render_pgm(&z, &[1, 0]);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(&img[header.len()..], &[0, 255, 255, 0]);
        let blank = render_pgm(&DMatrix::zeros(2, 2), &[0, 1]);
        assert!(blank[header.len()..].iter().all(|&b| b == 0));
    }
}
