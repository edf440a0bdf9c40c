//! Low-level raster helpers shared across modules: separable Gaussian
//! filtering, resampling and binary morphology.

use rayon::prelude::*;

use crate::videocore::Plane;

/// Half-width of the truncated Gaussian kernel used everywhere in the crate.
pub fn gaussian_radius(sigma: f32) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

/// Normalized 1D Gaussian taps of length `2 * gaussian_radius(sigma) + 1`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = gaussian_radius(sigma) as isize;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / s2).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|&t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur with edge replication. `sigma <= 0` is the identity.
pub fn gaussian_blur(src: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 || src.is_empty() {
        return src.clone();
    }
    let kernel = gaussian_kernel(sigma);
    convolve_separable(src, &kernel)
}

/// Convolves rows then columns with a symmetric odd-length kernel.
pub fn convolve_separable(src: &Plane, kernel: &[f32]) -> Plane {
    let (w, h) = (src.width, src.height);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row_out)| {
        let row = &src.data[y * w..(y + 1) * w];
        for (x, out) in row_out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            let xi = x as isize;
            if xi >= r && xi + r < w as isize {
                let start = (xi - r) as usize;
                for (k, &t) in kernel.iter().enumerate() {
                    acc += t * row[start + k];
                }
            } else {
                for (k, &t) in kernel.iter().enumerate() {
                    let sx = (xi + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += t * row[sx];
                }
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row_out)| {
        for (k, &t) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[sy * w..(sy + 1) * w];
            for (o, &v) in row_out.iter_mut().zip(src_row) {
                *o += t * v;
            }
        }
    });
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

/// Bilinear resize with pixel-center alignment.
pub fn resize_bilinear(src: &Plane, width: usize, height: usize) -> Plane {
    if width == src.width && height == src.height {
        return src.clone();
    }
    let sx = src.width as f32 / width as f32;
    let sy = src.height as f32 / height as f32;
    let mut data = vec![0.0f32; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for (x, o) in row.iter_mut().enumerate() {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            *o = src.sample_bilinear(fx, fy);
        }
    });
    Plane {
        width,
        height,
        data,
    }
}

/// Anti-aliased downscale by `scale` in (0, 1].
pub fn downscale(src: &Plane, scale: f32) -> Plane {
    let w = ((src.width as f32 * scale).round() as usize).max(1);
    let h = ((src.height as f32 * scale).round() as usize).max(1);
    if scale >= 1.0 {
        return resize_bilinear(src, w, h);
    }
    let sigma = 0.5 / scale;
    resize_bilinear(&gaussian_blur(src, sigma), w, h)
}

/// Mean magnitude of the central-difference gradient over interior pixels,
/// restricted to `include` when given.
pub fn mean_gradient_magnitude(p: &Plane, include: Option<&[bool]>) -> f64 {
    let (w, h) = (p.width, p.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if include.is_some_and(|m| !m[y * w + x]) {
                continue;
            }
            let gx = (p.get(x + 1, y) as f64 - p.get(x - 1, y) as f64) * 0.5;
            let gy = (p.get(x, y + 1) as f64 - p.get(x, y - 1) as f64) * 0.5;
            acc += (gx * gx + gy * gy).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Binary dilation with a disk of `radius`; pixels outside the image count as unset.
pub fn dilate(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    // prefix[y][x] = number of set pixels in row y before column x
    let prefix: Vec<Vec<u32>> = (0..height)
        .map(|y| {
            let mut acc = 0u32;
            let mut v = Vec::with_capacity(width + 1);
            v.push(0);
            for x in 0..width {
                acc += mask[y * width + x] as u32;
                v.push(acc);
            }
            v
        })
        .collect();
    let r = radius as isize;
    let spans: Vec<(isize, isize)> = (-r..=r)
        .map(|dy| (dy, (((r * r - dy * dy) as f64).sqrt()).floor() as isize))
        .collect();
    let mut out = vec![false; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = spans.iter().any(|&(dy, hw)| {
                let yy = y as isize + dy;
                if yy < 0 || yy >= height as isize {
                    return false;
                }
                let lo = (x as isize - hw).max(0) as usize;
                let hi = ((x as isize + hw) as usize).min(width - 1);
                let pre = &prefix[yy as usize];
                pre[hi + 1] > pre[lo]
            });
        }
    });
    out
}

/// Binary erosion with a disk; only in-image neighbors are considered.
pub fn erode(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let inv: Vec<bool> = mask.iter().map(|&b| !b).collect();
    dilate(&inv, width, height, radius)
        .into_iter()
        .map(|b| !b)
        .collect()
}

/// Sets every unset region not 4-connected to the image border.
pub fn fill_holes(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut outside = vec![false; width * height];
    let mut stack = Vec::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, stack: &mut Vec<(usize, usize)>| {
        let i = y * width + x;
        if !mask[i] && !outside[i] {
            outside[i] = true;
            stack.push((x, y));
        }
    };
    for x in 0..width {
        seed(x, 0, &mut outside, &mut stack);
        seed(x, height - 1, &mut outside, &mut stack);
    }
    for y in 0..height {
        seed(0, y, &mut outside, &mut stack);
        seed(width - 1, y, &mut outside, &mut stack);
    }
    while let Some((x, y)) = stack.pop() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut stack);
        }
        if x + 1 < width {
            seed(x + 1, y, &mut outside, &mut stack);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut stack);
        }
        if y + 1 < height {
            seed(x, y + 1, &mut outside, &mut stack);
        }
    }
    outside.into_iter().map(|o| !o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for s in [0.3f32, 1.0, 2.5, 7.0] {
            let k = gaussian_kernel(s);
            assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            for i in 0..k.len() / 2 {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let p = Plane::filled(9, 7, 0.4);
        let b = gaussian_blur(&p, 2.0);
        assert!(b.data.iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn blur_matches_direct_2d_convolution() {
        let p = Plane::from_fn(13, 11, |x, y| ((x * 7 + y * 3) % 5) as f32 / 5.0);
        let sigma = 1.3;
        let b = gaussian_blur(&p, sigma);
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        for y in 0..11 {
            for x in 0..13 {
                let mut acc = 0.0f64;
                for dy in -r..=r {
                    for dx in -r..=r {
                        acc += (k[(dy + r) as usize] * k[(dx + r) as usize]) as f64
                            * p.get_clamped(x as isize + dx, y as isize + dy) as f64;
                    }
                }
                assert!((b.get(x, y) as f64 - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn dilate_single_pixel_is_disk() {
        let (w, h) = (11, 11);
        let mut m = vec![false; w * h];
        m[5 * w + 5] = true;
        let d = dilate(&m, w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let dx = x as i32 - 5;
                let dy = y as i32 - 5;
                assert_eq!(d[y * w + x], dx * dx + dy * dy <= 9, "({x},{y})");
            }
        }
    }

    #[test]
    fn erode_keeps_full_mask() {
        let m = vec![true; 20];
        assert!(erode(&m, 5, 4, 2).into_iter().all(|b| b));
    }

    #[test]
    fn fill_holes_closes_ring() {
        let (w, h) = (7, 7);
        let m: Vec<bool> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                (1..=5).contains(&x) && (1..=5).contains(&y) && !(x == 3 && y == 3)
            })
            .collect();
        let f = fill_holes(&m, w, h);
        assert!(f[3 * w + 3]);
        assert!(!f[0]);
    }
}
