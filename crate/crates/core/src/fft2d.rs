//! Real-input 2D FFT built from `realfft` row transforms and `rustfft`
//! column transforms.
//!
//! Spectra are stored column-major: `spec[k * rows + r]` holds row-frequency
//! `r` of column-frequency `k`, for `k < cols / 2 + 1`.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest size `>= n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

pub struct RealFft2d {
    pub rows: usize,
    pub cols: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl RealFft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Self {
            rows,
            cols,
            r2c: rp.plan_fft_forward(cols),
            c2r: rp.plan_fft_inverse(cols),
            col_fwd: cp.plan_fft_forward(rows),
            col_inv: cp.plan_fft_inverse(rows),
        }
    }

    pub fn spectrum_cols(&self) -> usize {
        self.cols / 2 + 1
    }

    /// Forward transform of a `rows x cols` row-major real buffer.
    pub fn forward(&self, input: &[f64]) -> Vec<Complex64> {
        let (rows, cols) = (self.rows, self.cols);
        let sc = self.spectrum_cols();
        debug_assert_eq!(input.len(), rows * cols);
        let mut row_spec = vec![Complex64::default(); rows * sc];
        row_spec
            .par_chunks_mut(sc)
            .zip(input.par_chunks(cols))
            .for_each_init(
                || (self.r2c.make_input_vec(), self.r2c.make_scratch_vec()),
                |(buf, scratch), (out, row)| {
                    buf.copy_from_slice(row);
                    self.r2c
                        .process_with_scratch(buf, out, scratch)
                        .expect("buffer sizes match plan");
                },
            );
        let mut spec = transpose(&row_spec, rows, sc);
        spec.par_chunks_mut(rows).for_each_init(
            || vec![Complex64::default(); self.col_fwd.get_inplace_scratch_len()],
            |scratch, col| self.col_fwd.process_with_scratch(col, scratch),
        );
        spec
    }

    /// Inverse transform returning only the top-left `out_rows x out_cols`
    /// block of the real result, scaled by `1 / (rows * cols)`.
    pub fn inverse_block(
        &self,
        mut spec: Vec<Complex64>,
        out_rows: usize,
        out_cols: usize,
    ) -> Vec<f64> {
        let (rows, cols) = (self.rows, self.cols);
        let sc = self.spectrum_cols();
        spec.par_chunks_mut(rows).for_each_init(
            || vec![Complex64::default(); self.col_inv.get_inplace_scratch_len()],
            |scratch, col| self.col_inv.process_with_scratch(col, scratch),
        );
        let scale = 1.0 / (rows * cols) as f64;
        let mut out = vec![0.0f64; out_rows * out_cols];
        out.par_chunks_mut(out_cols).enumerate().for_each_init(
            || {
                (
                    self.c2r.make_input_vec(),
                    self.c2r.make_output_vec(),
                    self.c2r.make_scratch_vec(),
                )
            },
            |(inp, outp, scratch), (r, dst)| {
                for k in 0..sc {
                    inp[k] = spec[k * rows + r];
                }
                inp[0].im = 0.0;
                if cols % 2 == 0 {
                    inp[sc - 1].im = 0.0;
                }
                self.c2r
                    .process_with_scratch(inp, outp, scratch)
                    .expect("buffer sizes match plan");
                for (d, &v) in dst.iter_mut().zip(outp.iter()) {
                    *d = v * scale;
                }
            },
        );
        out
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::default(); rows * cols];
    const B: usize = 32;
    dst.par_chunks_mut(rows * B.min(cols).max(1))
        .enumerate()
        .for_each(|(blk, chunk)| {
            let c0 = blk * B;
            let ncols = chunk.len() / rows;
            for r0 in (0..rows).step_by(B) {
                for c in c0..c0 + ncols {
                    for r in r0..(r0 + B).min(rows) {
                        chunk[(c - c0) * rows + r] = src[r * cols + c];
                    }
                }
            }
        });
    dst
}
