use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Procedural clean image: a smooth colour gradient, a few flat-shaded discs and
/// rectangles, and a low-amplitude sinusoidal texture. Values lie in `[0, 1]`.
pub fn synthetic_clean(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut base = [[0.0f64; 3]; 3];
    for row in &mut base {
        for v in row.iter_mut() {
            *v = rng.random_range(0.05..0.95);
        }
    }
    // per channel: value = a + b * x + c * y over normalized coordinates
    let grad: Vec<[f64; 3]> = (0..3)
        .map(|c| [base[0][c], base[1][c] - base[0][c], base[2][c] - base[0][c]])
        .collect();

    enum Shape {
        Disc { cx: f64, cy: f64, r: f64 },
        Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    }
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.random_range(3..7))
        .map(|_| {
            let colour = [rng.random(), rng.random(), rng.random()];
            let shape = if rng.random_bool(0.5) {
                Shape::Disc {
                    cx: rng.random(),
                    cy: rng.random(),
                    r: rng.random_range(0.05..0.3),
                }
            } else {
                let (x0, y0) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.1..0.4),
                    y1: y0 + rng.random_range(0.1..0.4),
                }
            };
            (shape, colour)
        })
        .collect();
    let (fx, fy, phase) = (
        rng.random_range(2.0..12.0),
        rng.random_range(2.0..12.0),
        rng.random_range(0.0..TAU),
    );
    let amp = rng.random_range(0.02..0.08);

    let mut data = vec![0f32; 3 * h * w];
    for y in 0..h {
        let v = y as f64 / h as f64;
        for x in 0..w {
            let u = x as f64 / w as f64;
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = grad[c][0] + grad[c][1] * u + grad[c][2] * v;
            }
            for (shape, colour) in &shapes {
                let inside = match *shape {
                    Shape::Disc { cx, cy, r } => (u - cx).powi(2) + (v - cy).powi(2) < r * r,
                    Shape::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&u) && (y0..y1).contains(&v),
                };
                if inside {
                    px = *colour;
                }
            }
            let tex = amp * (TAU * (fx * u + fy * v) + phase).sin();
            for c in 0..3 {
                data[c * h * w + y * w + x] = (px[c] + tex).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::from_parts(vec![1, 3, h, w], data)
}
