use super::BinaryMask;
use crate::error::{Error, Result};

/// Alternating run lengths over row-major cells, starting with a run of
/// unset cells (possibly zero long).
pub type RleMask = Vec<usize>;

pub fn encode_rle(mask: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &c in &mask.cells {
        if c == current {
            len += 1;
        } else {
            runs.push(len);
            current = c;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn decode_rle(rle: &[usize], height: usize, width: usize) -> Result<BinaryMask> {
    let total: usize = rle.iter().sum();
    if total != height * width {
        return Err(Error::Format(format!(
            "run lengths sum to {total}, expected {}",
            height * width
        )));
    }
    let mut cells = Vec::with_capacity(total);
    let mut value = false;
    for &run in rle {
        cells.extend(std::iter::repeat_n(value, run));
        value = !value;
    }
    BinaryMask::from_cells(height, width, cells)
}
