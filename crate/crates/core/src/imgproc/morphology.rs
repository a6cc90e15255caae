use crate::error::{Error, Result};
use crate::types::{BinaryMask, StructuringElement};

fn check_element(mask: &BinaryMask, element: &StructuringElement) -> Result<()> {
    if !element.is_normalized() {
        return Err(Error::config(
            "kernel.size",
            format!("element {:?} has even extents; normalize it first", element.size),
        ));
    }
    let (w, h) = element.size;
    if w as usize > 2 * mask.width() || h as usize > 2 * mask.height() {
        return Err(Error::config(
            "kernel.size",
            format!(
                "element {w}x{h} exceeds twice the {}x{} image",
                mask.width(),
                mask.height()
            ),
        ));
    }
    Ok(())
}

/// Binary dilation: a pixel is set when the footprint anchored on it overlaps
/// any foreground pixel. The footprint is clipped at the image border.
///
/// Every supported footprint is a stack of horizontal runs, so each output
/// pixel costs one prefix-sum lookup per footprint row.
pub fn dilate(mask: &BinaryMask, element: &StructuringElement) -> Result<BinaryMask> {
    check_element(mask, element)?;
    let (h, w) = mask.dims();
    if mask.is_all_background() {
        return Ok(mask.clone());
    }

    // prefix[y][x] = foreground count in row y over columns [0, x).
    let stride = w + 1;
    let mut prefix = vec![0u32; h * stride];
    for y in 0..h {
        let row = &mut prefix[y * stride..(y + 1) * stride];
        for x in 0..w {
            row[x + 1] = row[x] + mask.get(y, x) as u32;
        }
    }
    let rows = element.row_half_widths();

    let mut out = BinaryMask::empty(h, w)?;
    for y in 0..h {
        for x in 0..w {
            let hit = rows.iter().any(|&(dy, hw)| {
                let sy = y as i64 + dy;
                if sy < 0 || sy >= h as i64 {
                    return false;
                }
                let lo = (x as i64 - hw).max(0) as usize;
                let hi = ((x as i64 + hw).min(w as i64 - 1) + 1) as usize;
                let row = &prefix[sy as usize * stride..];
                row[hi] > row[lo]
            });
            if hit {
                out.set(y, x, true);
            }
        }
    }
    Ok(out)
}

/// The band added by dilation: `dilate(mask) AND NOT mask`.
pub fn ring(mask: &BinaryMask, element: &StructuringElement) -> Result<BinaryMask> {
    dilate(mask, element)?.and_not(mask)
}
