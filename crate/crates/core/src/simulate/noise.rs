//! Seedable 3D simplex and Perlin gradient noise.
//!
//! Both generators use a 256-entry permutation shuffled by ChaCha8 from the
//! seed and evaluate in `f64` with only basic arithmetic, so output is
//! bit-reproducible across platforms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permutation(seed: u64) -> [u8; 512] {
    let mut base: Vec<u8> = (0..=255u8).collect();
    base.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut perm = [0u8; 512];
    for i in 0..512 {
        perm[i] = base[i & 255];
    }
    perm
}

pub trait Noise3: Sync {
    /// Noise value, roughly in `[-1, 1]`.
    fn sample(&self, x: f64, y: f64, z: f64) -> f64;
}

const GRAD3: [[f64; 3]; 12] = [
    [1.0, 1.0, 0.0],
    [-1.0, 1.0, 0.0],
    [1.0, -1.0, 0.0],
    [-1.0, -1.0, 0.0],
    [1.0, 0.0, 1.0],
    [-1.0, 0.0, 1.0],
    [1.0, 0.0, -1.0],
    [-1.0, 0.0, -1.0],
    [0.0, 1.0, 1.0],
    [0.0, -1.0, 1.0],
    [0.0, 1.0, -1.0],
    [0.0, -1.0, -1.0],
];

#[derive(Clone)]
pub struct Simplex3 {
    perm: [u8; 512],
    perm12: [u8; 512],
}

impl Simplex3 {
    pub fn new(seed: u64) -> Self {
        let perm = permutation(seed);
        let mut perm12 = [0u8; 512];
        for (m, &p) in perm12.iter_mut().zip(&perm) {
            *m = p % 12;
        }
        Self { perm, perm12 }
    }

    #[inline]
    fn hash(&self, i: usize, j: usize, k: usize) -> usize {
        let p = &self.perm;
        self.perm12[i + p[j + p[k] as usize] as usize] as usize
    }
}

#[inline]
fn corner(t: f64, g: usize, x: f64, y: f64, z: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        let gr = &GRAD3[g];
        let t2 = t * t;
        t2 * t2 * (gr[0] * x + gr[1] * y + gr[2] * z)
    }
}

impl Noise3 for Simplex3 {
    fn sample(&self, x: f64, y: f64, z: f64) -> f64 {
        const F3: f64 = 1.0 / 3.0;
        const G3: f64 = 1.0 / 6.0;
        let s = (x + y + z) * F3;
        let i = (x + s).floor();
        let j = (y + s).floor();
        let k = (z + s).floor();
        let t = (i + j + k) * G3;
        let x0 = x - (i - t);
        let y0 = y - (j - t);
        let z0 = z - (k - t);
        let (i1, j1, k1, i2, j2, k2) = if x0 >= y0 {
            if y0 >= z0 {
                (1, 0, 0, 1, 1, 0)
            } else if x0 >= z0 {
                (1, 0, 0, 1, 0, 1)
            } else {
                (0, 0, 1, 1, 0, 1)
            }
        } else if y0 < z0 {
            (0, 0, 1, 0, 1, 1)
        } else if x0 < z0 {
            (0, 1, 0, 0, 1, 1)
        } else {
            (0, 1, 0, 1, 1, 0)
        };
        let x1 = x0 - i1 as f64 + G3;
        let y1 = y0 - j1 as f64 + G3;
        let z1 = z0 - k1 as f64 + G3;
        let x2 = x0 - i2 as f64 + 2.0 * G3;
        let y2 = y0 - j2 as f64 + 2.0 * G3;
        let z2 = z0 - k2 as f64 + 2.0 * G3;
        let x3 = x0 - 1.0 + 3.0 * G3;
        let y3 = y0 - 1.0 + 3.0 * G3;
        let z3 = z0 - 1.0 + 3.0 * G3;
        let ii = (i as i64 & 255) as usize;
        let jj = (j as i64 & 255) as usize;
        let kk = (k as i64 & 255) as usize;
        let n0 = corner(
            0.6 - x0 * x0 - y0 * y0 - z0 * z0,
            self.hash(ii, jj, kk),
            x0,
            y0,
            z0,
        );
        let n1 = corner(
            0.6 - x1 * x1 - y1 * y1 - z1 * z1,
            self.hash(ii + i1, jj + j1, kk + k1),
            x1,
            y1,
            z1,
        );
        let n2 = corner(
            0.6 - x2 * x2 - y2 * y2 - z2 * z2,
            self.hash(ii + i2, jj + j2, kk + k2),
            x2,
            y2,
            z2,
        );
        let n3 = corner(
            0.6 - x3 * x3 - y3 * y3 - z3 * z3,
            self.hash(ii + 1, jj + 1, kk + 1),
            x3,
            y3,
            z3,
        );
        32.0 * (n0 + n1 + n2 + n3)
    }
}

#[derive(Clone)]
pub struct Perlin3 {
    perm: [u8; 512],
}

impl Perlin3 {
    pub fn new(seed: u64) -> Self {
        Self {
            perm: permutation(seed),
        }
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

#[inline]
fn grad(hash: u8, x: f64, y: f64, z: f64) -> f64 {
    let h = hash & 15;
    let u = if h < 8 { x } else { y };
    let v = if h < 4 {
        y
    } else if h == 12 || h == 14 {
        x
    } else {
        z
    };
    (if h & 1 == 0 { u } else { -u }) + (if h & 2 == 0 { v } else { -v })
}

impl Noise3 for Perlin3 {
    fn sample(&self, x: f64, y: f64, z: f64) -> f64 {
        let p = &self.perm;
        let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
        let xi = (fx as i64 & 255) as usize;
        let yi = (fy as i64 & 255) as usize;
        let zi = (fz as i64 & 255) as usize;
        let (x, y, z) = (x - fx, y - fy, z - fz);
        let (u, v, w) = (fade(x), fade(y), fade(z));
        let a = p[xi] as usize + yi;
        let aa = p[a] as usize + zi;
        let ab = p[a + 1] as usize + zi;
        let b = p[xi + 1] as usize + yi;
        let ba = p[b] as usize + zi;
        let bb = p[b + 1] as usize + zi;
        lerp(
            w,
            lerp(
                v,
                lerp(u, grad(p[aa], x, y, z), grad(p[ba], x - 1.0, y, z)),
                lerp(u, grad(p[ab], x, y - 1.0, z), grad(p[bb], x - 1.0, y - 1.0, z)),
            ),
            lerp(
                v,
                lerp(
                    u,
                    grad(p[aa + 1], x, y, z - 1.0),
                    grad(p[ba + 1], x - 1.0, y, z - 1.0),
                ),
                lerp(
                    u,
                    grad(p[ab + 1], x, y - 1.0, z - 1.0),
                    grad(p[bb + 1], x - 1.0, y - 1.0, z - 1.0),
                ),
            ),
        )
    }
}
