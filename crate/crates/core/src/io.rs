//! Fixed-format CSV output shared by the path and ensemble writers.

use crate::scalar::Real;
use nalgebra::DMatrix;
use std::io::{self, Write};

/// Formats with 17 significant digits so written files are bit-reproducible.
pub fn fmt17<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

pub(crate) fn matrix_header(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

pub(crate) fn push_matrix<T: Real>(row: &mut Vec<String>, m: &DMatrix<T>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(fmt17(m[(i, j)]));
        }
    }
}

/// One row per node: `time, prefix_0_0, prefix_0_1, ...` (row-major).
pub fn write_matrix_rows<T: Real, W: Write>(
    w: &mut W,
    prefix: &str,
    times: &[T],
    mats: &[DMatrix<T>],
) -> io::Result<()> {
    let (r, c) = mats.first().map_or((0, 0), |m| m.shape());
    let mut header = vec!["time".to_string()];
    header.extend(matrix_header(prefix, r, c));
    writeln!(w, "{}", header.join(","))?;
    for (t, m) in times.iter().zip(mats) {
        let mut row = vec![fmt17(*t)];
        push_matrix(&mut row, m);
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt17(0.1f64), "1.0000000000000001e-1");
        assert_eq!(fmt17(-2.0f64), "-2.0000000000000000e0");
    }
}
