use crate::hsi::HsiCube;
use crate::tensor::Tensor;

/// Patch centers on a stride-`s` grid: `k·s + ⌊(s−1)/2⌋` along each axis, so
/// stride 1 visits every pixel.
pub fn patch_centers(height: usize, width: usize, stride: usize) -> Vec<(usize, usize)> {
    assert!(stride >= 1, "stride must be positive");
    let axis = |n: usize| -> Vec<usize> { (0..n).step_by(stride).map(|v| v + (stride - 1) / 2).filter(|&v| v < n).collect() };
    let cols = axis(width);
    axis(height).into_iter().flat_map(|r| cols.iter().map(move |&c| (r, c))).collect()
}

/// `[N, L, k, k]` batch of zero-padded patches around the given centers.
pub fn patch_batch(cube: &HsiCube, centers: &[(usize, usize)], size: usize) -> Tensor {
    let (h, w, l) = (cube.height() as isize, cube.width() as isize, cube.bands());
    let half = (size / 2) as isize;
    let mut data = vec![0.0; centers.len() * l * size * size];
    for (n, &(r, c)) in centers.iter().enumerate() {
        for u in 0..size {
            let rr = r as isize + u as isize - half;
            if rr < 0 || rr >= h {
                continue;
            }
            for v in 0..size {
                let cc = c as isize + v as isize - half;
                if cc < 0 || cc >= w {
                    continue;
                }
                let spectrum = cube.spectrum(rr as usize, cc as usize);
                for (b, &x) in spectrum.iter().enumerate() {
                    data[((n * l + b) * size + u) * size + v] = x;
                }
            }
        }
    }
    Tensor::new(&[centers.len(), l, size, size], data).expect("consistent patch shape")
}

/// All patches on a stride grid, with their centers.
pub fn extract_patches(cube: &HsiCube, size: usize, stride: usize) -> (Tensor, Vec<(usize, usize)>) {
    let centers = patch_centers(cube.height(), cube.width(), stride);
    (patch_batch(cube, &centers, size), centers)
}
