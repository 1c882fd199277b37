//! Bilinear resampling: positional-embedding grids for the
//! high-resolution adaptation stage, and whole images.

use crate::image::ImageBuf;

/// Map a destination index onto source coordinates, endpoints aligned.
fn src_coord(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    if dst_len == 1 {
        (src_len as f64 - 1.0) / 2.0
    } else {
        dst as f64 * (src_len as f64 - 1.0) / (dst_len as f64 - 1.0)
    }
}

/// Resample a `H x W x dim` positional grid (stored as `(H*W) x dim`
/// row-major) to a new grid. The identity resize returns the input
/// unchanged; constants are preserved.
pub fn interpolate_pos_embed(
    pos: &[f64],
    old_grid: (usize, usize),
    dim: usize,
    new_grid: (usize, usize),
) -> Vec<f64> {
    let (oh, ow) = old_grid;
    let (nh, nw) = new_grid;
    assert_eq!(pos.len(), oh * ow * dim, "positional grid size mismatch");
    if new_grid == old_grid {
        return pos.to_vec();
    }
    let mut out = Vec::with_capacity(nh * nw * dim);
    for y in 0..nh {
        let sy = src_coord(y, nh, oh);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(oh - 1);
        let fy = sy - y0 as f64;
        for x in 0..nw {
            let sx = src_coord(x, nw, ow);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(ow - 1);
            let fx = sx - x0 as f64;
            let at = |yy: usize, xx: usize, d: usize| pos[(yy * ow + xx) * dim + d];
            for d in 0..dim {
                let top = at(y0, x0, d) * (1.0 - fx) + at(y0, x1, d) * fx;
                let bot = at(y1, x0, d) * (1.0 - fx) + at(y1, x1, d) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Bilinear image resize (used to feed base-resolution scenes to the
/// high-resolution stage).
pub fn resize_bilinear(image: &ImageBuf, new_width: usize, new_height: usize) -> ImageBuf {
    if new_width == image.width && new_height == image.height {
        return image.clone();
    }
    let grid: Vec<f64> = image.pixels.iter().map(|&v| v as f64).collect();
    let data = interpolate_pos_embed(
        &grid,
        (image.height, image.width),
        3,
        (new_height, new_width),
    );
    ImageBuf {
        width: new_width,
        height: new_height,
        pixels: data.iter().map(|&v| v as f32).collect(),
    }
}
