//! Raster scatter plots of 2-D embeddings, written as PNG with run
//! metadata embedded in a text chunk.
//!
//! Marker encodes the domain (circle = labeled source, asterisk =
//! unlabeled source, triangle = target); color encodes the class, gray for
//! records without labels.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use eegfuse::engine::SnapshotPoint;
use eegfuse::error::{Error, Result};

const WIDTH: usize = 900;
const HEIGHT: usize = 700;
const MARGIN: usize = 40;

const CLASS_COLORS: [[u8; 3]; 6] = [
    [211, 47, 47],   // red
    [123, 31, 162],  // purple
    [25, 118, 210],  // blue
    [56, 142, 60],   // green
    [255, 143, 0],   // orange
    [0, 121, 107],   // teal
];
const UNLABELED: [u8; 3] = [140, 140, 140];

struct Canvas {
    pixels: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas { pixels: vec![255u8; WIDTH * HEIGHT * 3] }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= WIDTH as i64 || y >= HEIGHT as i64 {
            return;
        }
        let idx = (y as usize * WIDTH + x as usize) * 3;
        self.pixels[idx..idx + 3].copy_from_slice(&color);
    }

    fn disc(&mut self, cx: i64, cy: i64, r: i64, color: [u8; 3]) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, color);
                }
            }
        }
    }

    fn asterisk(&mut self, cx: i64, cy: i64, r: i64, color: [u8; 3]) {
        for d in -r..=r {
            self.put(cx + d, cy, color);
            self.put(cx, cy + d, color);
            self.put(cx + d, cy + d, color);
            self.put(cx + d, cy - d, color);
        }
    }

    fn triangle(&mut self, cx: i64, cy: i64, r: i64, color: [u8; 3]) {
        // filled upward triangle
        for dy in -r..=r {
            let half = ((r - (dy + r) / 2) as f64 * 0.9) as i64;
            let row_half = half.max(0);
            if dy >= -r {
                for dx in -row_half..=row_half {
                    self.put(cx + dx, cy + dy, color);
                }
            }
        }
    }

    fn frame(&mut self) {
        let dark = [30u8, 30, 30];
        for x in MARGIN..WIDTH - MARGIN {
            self.put(x as i64, MARGIN as i64, dark);
            self.put(x as i64, (HEIGHT - MARGIN) as i64, dark);
        }
        for y in MARGIN..HEIGHT - MARGIN {
            self.put(MARGIN as i64, y as i64, dark);
            self.put((WIDTH - MARGIN) as i64, y as i64, dark);
        }
    }
}

/// Render snapshot points to `path` with `metadata` stored in a tEXt chunk.
pub fn write_scatter(points: &[SnapshotPoint], metadata: &str, path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Input("nothing to plot".into()));
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;

    let mut canvas = Canvas::new();
    canvas.frame();
    for p in points {
        let px = MARGIN as f64 + (p.x - min_x) / span_x * plot_w;
        // image y grows downward
        let py = MARGIN as f64 + (1.0 - (p.y - min_y) / span_y) * plot_h;
        let color = match p.label {
            Some(c) => CLASS_COLORS[c as usize % CLASS_COLORS.len()],
            None => UNLABELED,
        };
        match p.domain.as_str() {
            "S" => canvas.disc(px as i64, py as i64, 3, color),
            "U" => canvas.asterisk(px as i64, py as i64, 4, color),
            _ => canvas.triangle(px as i64, py as i64, 4, color),
        }
    }

    let file = File::create(path)?;
    let w = BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, WIDTH as u32, HEIGHT as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder
        .add_text_chunk("run_metadata".to_string(), metadata.to_string())
        .map_err(|e| Error::Input(format!("metadata chunk: {e}")))?;
    let mut writer =
        encoder.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(&canvas.pixels)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
