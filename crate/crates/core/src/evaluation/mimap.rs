//! Pixel-distance maps from the trained stage-1 global statistics network.

use crate::autodiff::{Session, Tensor};
use crate::error::{Error, Result};
use crate::model::ModelBundle;

/// The `patch_h x patch_w` window of an `(h, w, c)` image centered at
/// `(row, col)`; pixels outside the image are zero.
pub fn extract_patch(
    image: &[f32],
    (h, w, c): (usize, usize, usize),
    (row, col): (usize, usize),
    (patch_h, patch_w): (usize, usize),
) -> Vec<f32> {
    let mut out = vec![0.0; patch_h * patch_w * c];
    let top = row as isize - (patch_h / 2) as isize;
    let left = col as isize - (patch_w / 2) as isize;
    for pr in 0..patch_h {
        let r = top + pr as isize;
        if r < 0 || r >= h as isize {
            continue;
        }
        for pc in 0..patch_w {
            let q = left + pc as isize;
            if q < 0 || q >= w as isize {
                continue;
            }
            let src = (r as usize * w + q as usize) * c;
            let dst = (pr * patch_w + pc) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    out
}

/// Scores every pixel `p` of an `(h, w)` image by `T(C(patch at reference),
/// S(patch at p))` using the domain-X shared encoder and global statistics
/// network, then rescales the map to `[0, 1]`. Row-major, `h * w` values.
pub fn mi_distance_map(
    bundle: &ModelBundle,
    image: &[f32],
    (h, w): (usize, usize),
    reference: (usize, usize),
) -> Result<Vec<f32>> {
    let d = &bundle.dims;
    let c = d.channels;
    if image.len() != h * w * c {
        return Err(Error::shape("mi_distance_map", &[image.len()], &[h, w, c]));
    }
    if reference.0 >= h || reference.1 >= w {
        return Err(Error::invalid(
            "mi_distance_map",
            format!("reference pixel {reference:?} outside a {h}x{w} image"),
        ));
    }
    let patch = (d.height, d.width);
    let shape = [d.height, d.width, c];
    let enc = &bundle.nets.sh_enc_x;
    let scorer = &bundle.nets.sh_glob_x;

    let summary = {
        let mut s = Session::inference(&bundle.params);
        let p = extract_patch(image, (h, w, c), reference, patch);
        let x = s.g.constant(Tensor::stack_rows(&[&p], &shape)?)?;
        let fm = enc.features(&mut s, x)?;
        let sm = scorer.summarize(&mut s, fm)?;
        s.g.value(sm).clone()
    };

    const CHUNK: usize = 256;
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |q| (r, q))).collect();
    let mut scores = Vec::with_capacity(pixels.len());
    for chunk in pixels.chunks(CHUNK) {
        let patches: Vec<Vec<f32>> = chunk.iter().map(|&p| extract_patch(image, (h, w, c), p, patch)).collect();
        let rows: Vec<&[f32]> = patches.iter().map(Vec::as_slice).collect();
        let mut s = Session::inference(&bundle.params);
        let x = s.g.constant(Tensor::stack_rows(&rows, &shape)?)?;
        let (_, z) = enc.encode(&mut s, x)?;
        let sm = s.g.constant(summary.clone())?;
        let sm = s.g.gather_rows(sm, &vec![0; chunk.len()])?;
        let t = scorer.score_summary(&mut s, sm, z)?;
        scores.extend_from_slice(s.g.value(t).data());
    }
    let lo = scores.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite { op: "mi_distance_map" });
    }
    let span = hi - lo;
    Ok(scores
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 1.0 })
        .collect())
}
