//! Diagnostic overlays: translucent prediction fill, target contour, and an
//! IoU caption rendered with a tiny built-in 3x5 glyph set.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::raster::{BinaryMask, ImageBuf};

const PRED_FILL: [f32; 3] = [0.95, 0.35, 0.20];
const TARGET_CONTOUR: [f32; 3] = [0.20, 0.95, 0.35];
const FILL_ALPHA: f32 = 0.45;

/// Caption text shown on the overlay.
pub fn caption_for(iou_value: f64) -> String {
    format!("IoU {iou_value:.3}")
}

/// Composites prediction and target onto the image and writes a PNG.
pub fn render_overlay(
    image: &ImageBuf,
    pred: &BinaryMask,
    target: &BinaryMask,
    out_path: &Path,
) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::input(format!(
            "prediction is {}x{} but target is {}x{}",
            pred.height, pred.width, target.height, target.width
        )));
    }
    let score = iou(pred, target)?.iou;
    let mut canvas = image.clone();
    let pred = pred.resized_nearest(canvas.height, canvas.width);
    let target = target.resized_nearest(canvas.height, canvas.width);

    for y in 0..canvas.height {
        for x in 0..canvas.width {
            if pred.get(y, x) == 1 {
                let base = canvas.pixel(y, x);
                let mut blended = [0.0f32; 3];
                for c in 0..3 {
                    blended[c] = (1.0 - FILL_ALPHA) * base[c] + FILL_ALPHA * PRED_FILL[c];
                }
                canvas.set_pixel(y, x, blended);
            }
            if target.get(y, x) == 1 && on_contour(&target, y, x) {
                canvas.set_pixel(y, x, TARGET_CONTOUR);
            }
        }
    }
    draw_text(&mut canvas, 2, 2, &caption_for(score));
    canvas.save_png(out_path)?;
    Ok(score)
}

/// A foreground pixel with any 4-neighbor outside the mask (or on the
/// image border) is contour.
fn on_contour(mask: &BinaryMask, y: usize, x: usize) -> bool {
    if y == 0 || x == 0 || y + 1 == mask.height || x + 1 == mask.width {
        return true;
    }
    mask.get(y - 1, x) == 0
        || mask.get(y + 1, x) == 0
        || mask.get(y, x - 1) == 0
        || mask.get(y, x + 1) == 0
}

/// 3x5 glyphs for the caption alphabet, rows top to bottom, 3 bits each.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'o' => [0b000, 0b000, 0b111, 0b101, 0b111],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        _ => [0b000; 5],
    }
}

fn draw_text(canvas: &mut ImageBuf, top: usize, left: usize, text: &str) {
    let mut x0 = left;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..3 {
                if bits & (0b100 >> dx) != 0 {
                    let (y, x) = (top + dy, x0 + dx);
                    if y < canvas.height && x < canvas.width {
                        canvas.set_pixel(y, x, [1.0, 1.0, 1.0]);
                    }
                }
            }
        }
        x0 += 4;
    }
}
