//! Straightforward reference metrics written independently of the library: 2-D windows
//! evaluated directly, no separable filtering, no shared helpers.

/// 8-bit levels of a `(1, 3, H, W)` float image, returned as `[channel][y][x]`.
pub fn to_u8(data: &[f32], h: usize, w: usize) -> Vec<Vec<Vec<u8>>> {
    (0..3)
        .map(|c| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            let v = data[c * h * w + y * w + x];
                            let v = if v < 0.0 { 0.0 } else if v > 1.0 { 1.0 } else { v as f64 };
                            (v * 255.0).round() as u8
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn luma(img: &[Vec<Vec<u8>>]) -> Vec<Vec<f64>> {
    let (h, w) = (img[0].len(), img[0][0].len());
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    0.299 * img[0][y][x] as f64 + 0.587 * img[1][y][x] as f64 + 0.114 * img[2][y][x] as f64
                })
                .collect()
        })
        .collect()
}

fn as_f64(plane: &[Vec<u8>]) -> Vec<Vec<f64>> {
    plane.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn planes(img: &[Vec<Vec<u8>>], y_only: bool) -> Vec<Vec<Vec<f64>>> {
    if y_only {
        vec![luma(img)]
    } else {
        img.iter().map(|p| as_f64(p)).collect()
    }
}

pub fn psnr(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        for (ra, rb) in pa.iter().zip(pb) {
            for (x, y) in ra.iter().zip(rb) {
                se += (x - y) * (x - y);
                n += 1.0;
            }
        }
    }
    let mse = se / n;
    let floor = 255.0 * 255.0 * 1e-8;
    10.0 * (255.0 * 255.0 / if mse < floor { floor } else { mse }).log10()
}

fn window() -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in &mut w {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

fn ssim_plane(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let win = window();
    let (h, w) = (a.len(), a[0].len());
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i][j] * a[y + i][x + j];
                    mb += win[i][j] * b[y + i][x + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (da, db) = (a[y + i][x + j] - ma, b[y + i][x + j] - mb);
                    va += win[i][j] * da * da;
                    vb += win[i][j] * db * db;
                    cov += win[i][j] * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

pub fn ssim(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ssim_plane(x, y)).sum::<f64>() / a.len() as f64
}
