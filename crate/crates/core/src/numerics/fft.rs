use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Unnormalized in-place 2-D FFT over every plane of `data`.
pub(crate) fn fft2_planes(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    if h == 0 || w == 0 {
        return;
    }
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut column = vec![Complex64::default(); h];
    for plane in data.chunks_exact_mut(h * w) {
        row.process(plane);
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }
}
