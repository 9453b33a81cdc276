use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

use super::Metrics;

const MARGIN_LEFT: u32 = 40;
const MARGIN_TOP: u32 = 40;
const MARGIN_RIGHT: u32 = 8;
const MARGIN_BOTTOM: u32 = 8;
const GLYPH_SCALE: u32 = 2;

/// Perceptually ordered ramp from dark purple (0) to yellow (1).
const RAMP: [[u8; 3]; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);

/// Ramp colour for a value in `[0, 1]`.
pub fn heat_color(value: f64) -> [u8; 3] {
    let x = value.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Side length in pixels of one matrix cell.
pub fn cell_size(num_classes: usize) -> u32 {
    (480 / num_classes.max(1) as u32).clamp(4, 48)
}

/// Image size for a `K`-class plot.
pub fn plot_dimensions(num_classes: usize) -> (u32, u32) {
    let side = cell_size(num_classes) * num_classes as u32;
    (MARGIN_LEFT + side + MARGIN_RIGHT, MARGIN_TOP + side + MARGIN_BOTTOM)
}

/// 3x5 bitmaps, row-major from the top, most significant bit left.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
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
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        _ => [0; 5],
    }
}

const GLYPH_W: u32 = 3 * GLYPH_SCALE;
const GLYPH_H: u32 = 5 * GLYPH_SCALE;
const GLYPH_ADVANCE: u32 = GLYPH_W + GLYPH_SCALE;

fn draw_char(img: &mut RgbImage, ch: char, x0: u32, y0: u32) {
    for (row, bits) in glyph(ch).iter().enumerate() {
        for col in 0..3u32 {
            if bits & (0b100 >> col) == 0 {
                continue;
            }
            for dy in 0..GLYPH_SCALE {
                for dx in 0..GLYPH_SCALE {
                    let (x, y) = (x0 + col * GLYPH_SCALE + dx, y0 + row as u32 * GLYPH_SCALE + dy);
                    if x < img.width() && y < img.height() {
                        img.put_pixel(x, y, INK);
                    }
                }
            }
        }
    }
}

fn draw_text(img: &mut RgbImage, text: &str, x0: u32, y0: u32) {
    for (i, ch) in text.chars().enumerate() {
        draw_char(img, ch, x0 + i as u32 * GLYPH_ADVANCE, y0);
    }
}

fn text_width(text: &str) -> u32 {
    (text.chars().count() as u32 * GLYPH_ADVANCE).saturating_sub(GLYPH_SCALE)
}

/// Render the row-normalized confusion matrix.
///
/// Columns are predicted classes (labelled `PRED` along the top), rows are
/// true classes (`TRUE` down the left side). Class indices are printed on
/// both axes, thinned out when cells are too small to hold them.
pub fn render_confusion(metrics: &Metrics) -> RgbImage {
    let k = metrics.num_classes();
    let cell = cell_size(k);
    let (w, h) = plot_dimensions(k);
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    let norm = metrics.row_normalized();
    for i in 0..k {
        for j in 0..k {
            let color = Rgb(heat_color(norm[[i, j]]));
            let (x0, y0) = (MARGIN_LEFT + j as u32 * cell, MARGIN_TOP + i as u32 * cell);
            for y in y0..y0 + cell {
                for x in x0..x0 + cell {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }

    let side = cell * k as u32;
    draw_text(&mut img, "PRED", MARGIN_LEFT + (side.saturating_sub(text_width("PRED"))) / 2, 2);
    let true_top = MARGIN_TOP + side.saturating_sub(4 * (GLYPH_H + GLYPH_SCALE)) / 2;
    for (i, ch) in "TRUE".chars().enumerate() {
        draw_char(&mut img, ch, 2, true_top + i as u32 * (GLYPH_H + GLYPH_SCALE));
    }

    let widest = text_width(&(k - 1).to_string());
    let every = (widest + GLYPH_SCALE).div_ceil(cell).max((GLYPH_H + 2).div_ceil(cell)) as usize;
    for c in (0..k).step_by(every.max(1)) {
        let label = c.to_string();
        let tw = text_width(&label);
        let center = c as u32 * cell + cell / 2;
        let x = (MARGIN_LEFT + center).saturating_sub(tw / 2);
        draw_text(&mut img, &label, x, MARGIN_TOP - GLYPH_H - 4);
        let y = (MARGIN_TOP + center).saturating_sub(GLYPH_H / 2);
        draw_text(&mut img, &label, MARGIN_LEFT - 4 - tw, y);
    }
    img
}

/// Write the confusion plot as a PNG.
pub fn plot_confusion(metrics: &Metrics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    render_confusion(metrics)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other)),
        })
}
