//! Rasterized views of truss states.
//!
//! States render to a square RGB float image on a white background: members
//! are black lines whose width grows with thickness level, supports are
//! green discs, load nodes red, and added nodes blue. Images can be
//! box-downsampled and exported as binary PPM for inspection.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array3;

use super::{TrussEnv, TrussState};

pub const RENDER_SIZE: usize = 128;
const NODE_RADIUS: f64 = 2.5;

const BLACK: [f32; 3] = [0.0, 0.0, 0.0];
const GREEN: [f32; 3] = [0.0, 1.0, 0.0];
const RED: [f32; 3] = [1.0, 0.0, 0.0];
const BLUE: [f32; 3] = [0.0, 0.0, 1.0];

/// Renders `state` to a `size x size x 3` image in row-major HWC layout,
/// row 0 at the top of the domain.
pub fn render_truss(env: &TrussEnv, state: &TrussState, size: usize) -> Array3<f32> {
    let mut img = Array3::from_elem((size, size, 3), 1.0f32);
    let domain = env.domain();
    let scale = (size - 1) as f64;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (x / domain.width * scale, (1.0 - y / domain.height) * scale)
    };

    for member in &state.members {
        let a = &state.nodes[member.a as usize];
        let b = &state.nodes[member.b as usize];
        let pa = to_px(a.x, a.y);
        let pb = to_px(b.x, b.y);
        let half_width = 0.5 + 0.5 * member.thickness_level as f64;
        stroke_segment(&mut img, pa, pb, half_width, BLACK);
    }

    for (i, node) in state.nodes.iter().enumerate() {
        let color = if state.supports.contains(&(i as u32)) {
            GREEN
        } else if state.loads.iter().any(|l| l.node == i as u32) {
            RED
        } else {
            BLUE
        };
        fill_disc(&mut img, to_px(node.x, node.y), NODE_RADIUS, color);
    }
    img
}

fn paint(img: &mut Array3<f32>, row: usize, col: usize, color: [f32; 3]) {
    for (c, &v) in color.iter().enumerate() {
        img[(row, col, c)] = v;
    }
}

fn stroke_segment(
    img: &mut Array3<f32>,
    (ax, ay): (f64, f64),
    (bx, by): (f64, f64),
    half_width: f64,
    color: [f32; 3],
) {
    let size = img.shape()[0];
    let pad = half_width + 1.0;
    let col_lo = (ax.min(bx) - pad).floor().max(0.0) as usize;
    let col_hi = ((ax.max(bx) + pad).ceil() as usize).min(size - 1);
    let row_lo = (ay.min(by) - pad).floor().max(0.0) as usize;
    let row_hi = ((ay.max(by) + pad).ceil() as usize).min(size - 1);
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let (px, py) = (col as f64, row as f64);
            let t = if len_sq > 0.0 {
                (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (ax + t * dx, ay + t * dy);
            if (px - cx).powi(2) + (py - cy).powi(2) <= half_width * half_width {
                paint(img, row, col, color);
            }
        }
    }
}

fn fill_disc(img: &mut Array3<f32>, (cx, cy): (f64, f64), radius: f64, color: [f32; 3]) {
    let size = img.shape()[0];
    let col_lo = (cx - radius).floor().max(0.0) as usize;
    let col_hi = ((cx + radius).ceil() as usize).min(size - 1);
    let row_lo = (cy - radius).floor().max(0.0) as usize;
    let row_hi = ((cy + radius).ceil() as usize).min(size - 1);
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            if (col as f64 - cx).powi(2) + (row as f64 - cy).powi(2) <= radius * radius {
                paint(img, row, col, color);
            }
        }
    }
}

/// Averages `factor x factor` blocks per channel; the input size must be a
/// multiple of `factor`.
pub fn box_downsample(img: &Array3<f32>, factor: usize) -> Array3<f32> {
    let (h, w, c) = img.dim();
    assert!(factor > 0 && h % factor == 0 && w % factor == 0);
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = Array3::zeros((oh, ow, c));
    for row in 0..oh {
        for col in 0..ow {
            for ch in 0..c {
                let mut sum = 0.0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        sum += img[(row * factor + dr, col * factor + dc, ch)];
                    }
                }
                out[(row, col, ch)] = sum * norm;
            }
        }
    }
    out
}

/// Writes a binary (P6) PPM file.
pub fn write_ppm(img: &Array3<f32>, path: &Path) -> std::io::Result<()> {
    let (h, w, c) = img.dim();
    assert_eq!(c, 3);
    let mut out = Vec::with_capacity(h * w * 3 + 32);
    write!(out, "P6\n{w} {h}\n255\n")?;
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                out.push((img[(row, col, ch)].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, out)
}
