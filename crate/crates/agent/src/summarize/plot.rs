use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use sindy_core::fmt::sig;
use sindy_core::Trajectory;

use crate::llm::ImagePayload;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { width: 800, height: 480 }
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([220, 220, 220]);

/// 3x5 glyphs, one row per byte, bit 2 = leftmost column.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        'e' => [7, 5, 7, 4, 7],
        'x' => [0, 5, 2, 5, 0],
        't' => [2, 7, 2, 2, 3],
        _ => [0; 5],
    }
}

const SCALE: u32 = 2;

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn text(img: &mut RgbImage, s: &str, x: i64, y: i64, c: Rgb<u8>) {
    for (i, ch) in s.chars().enumerate() {
        let g = glyph(ch);
        let ox = x + i as i64 * 4 * SCALE as i64;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    for dy in 0..SCALE as i64 {
                        for dx in 0..SCALE as i64 {
                            put(img, ox + col * SCALE as i64 + dx, y + row as i64 * SCALE as i64 + dy, c);
                        }
                    }
                }
            }
        }
    }
}

fn text_width(s: &str) -> i64 {
    (s.chars().count() as i64 * 4 - 1) * SCALE as i64
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        put(img, x, y + 1, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (-1.0, 1.0)
    } else if hi - lo < 1e-12 * lo.abs().max(1.0) {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Line plot of every state dimension against time with a legend `x0..`,
/// encoded as PNG. The output is a pure function of the inputs.
pub fn render_plot(traj: &Trajectory, config: &PlotConfig) -> ImagePayload {
    render(traj, None, config)
}

/// As [`render_plot`] with `reference` drawn faded and `predicted` drawn on
/// top in full colour. The axes span `reference` only.
pub fn render_fit_plot(reference: &Trajectory, predicted: &Trajectory, config: &PlotConfig) -> ImagePayload {
    render(reference, Some(predicted), config)
}

fn faded(c: [u8; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| ((v as u16 + 2 * 255) / 3) as u8))
}

fn render(traj: &Trajectory, overlay: Option<&Trajectory>, config: &PlotConfig) -> ImagePayload {
    let (w, h) = (config.width.max(160), config.height.max(120));
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (left, right, top, bottom) = (70i64, w as i64 - 20, 20i64, h as i64 - 40);
    let times = traj.times();
    let (t0, t1) = finite_range(times.iter().copied());
    let (y0, y1) = finite_range(traj.states().iter().copied());
    let px = |t: f64| left + ((t - t0) / (t1 - t0) * (right - left) as f64).round().clamp(-1.0, w as f64) as i64;
    let py = |v: f64| bottom - ((v - y0) / (y1 - y0) * (bottom - top) as f64).round().clamp(-1e4, 1e4) as i64;

    for k in 0..=4 {
        let y = top + (bottom - top) * k / 4;
        line(&mut img, (left, y), (right, y), GREY);
    }
    line(&mut img, (left, top), (left, bottom), BLACK);
    line(&mut img, (left, bottom), (right, bottom), BLACK);

    let series = |img: &mut RgbImage, tr: &Trajectory, colour: &dyn Fn(usize) -> Rgb<u8>| {
        for j in 0..tr.dimension() {
            let c = colour(j);
            let col = tr.states().column(j);
            let mut prev: Option<(i64, i64)> = None;
            for (k, &t) in tr.times().iter().enumerate() {
                let v = col[k];
                if !v.is_finite() || !t.is_finite() {
                    prev = None;
                    continue;
                }
                let p = (px(t), py(v).clamp(top - 2, bottom + 2));
                match prev {
                    Some(q) if q == p => {}
                    Some(q) => line(img, q, p, c),
                    None => put(img, p.0, p.1, c),
                }
                prev = Some(p);
            }
        }
    };
    match overlay {
        None => series(&mut img, traj, &|j| Rgb(PALETTE[j % PALETTE.len()])),
        Some(pred) => {
            series(&mut img, traj, &|j| faded(PALETTE[j % PALETTE.len()]));
            series(&mut img, pred, &|j| Rgb(PALETTE[j % PALETTE.len()]));
        }
    }

    let label = |v: f64| sig(v, 3);
    text(&mut img, &label(y1), left - 8 - text_width(&label(y1)), top - 5, BLACK);
    text(&mut img, &label(y0), left - 8 - text_width(&label(y0)), bottom - 5, BLACK);
    text(&mut img, &label(t0), left, bottom + 8, BLACK);
    text(&mut img, &label(t1), right - text_width(&label(t1)), bottom + 8, BLACK);
    text(&mut img, "t", (left + right) / 2, bottom + 20, BLACK);

    let legend_w = 60;
    let lx = right - legend_w - 10;
    for j in 0..traj.dimension() {
        let c = Rgb(PALETTE[j % PALETTE.len()]);
        let ly = top + 10 + j as i64 * 16;
        line(&mut img, (lx, ly + 4), (lx + 20, ly + 4), c);
        text(&mut img, &format!("x{j}"), lx + 26, ly, BLACK);
    }

    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("png encoding into memory");
    ImagePayload::png(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sine(k: usize) -> Trajectory {
        let t: Vec<f64> = (0..k).map(|i| i as f64 * 0.01).collect();
        let x = DMatrix::from_fn(k, 2, |i, j| ((i as f64 * 0.01) + j as f64).sin());
        Trajectory::new(t, x).unwrap()
    }

    #[test]
    fn deterministic_png() {
        let a = render_plot(&sine(500), &PlotConfig::default());
        let b = render_plot(&sine(500), &PlotConfig::default());
        assert_eq!(a, b);
        assert_eq!(&a.data[..8], b"\x89PNG\r\n\x1a\n");
        let decoded = image::load_from_memory(&a.data).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (800, 480));
    }

    #[test]
    fn line_colours_and_legend_are_drawn() {
        let img = render_plot(&sine(500), &PlotConfig::default());
        let rgb = image::load_from_memory(&img.data).unwrap().to_rgb8();
        for c in &PALETTE[..2] {
            assert!(rgb.pixels().filter(|p| p.0 == *c).count() > 100);
        }
        assert!(!rgb.pixels().any(|p| p.0 == PALETTE[2]));
    }

    #[test]
    fn fit_overlay_handles_divergent_predictions() {
        let reference = sine(300);
        let x = DMatrix::from_fn(300, 2, |i, _| (i as f64).exp());
        let pred = Trajectory::new(reference.times().to_vec(), x).unwrap();
        let a = render_fit_plot(&reference, &pred, &PlotConfig::default());
        assert_eq!(a, render_fit_plot(&reference, &pred, &PlotConfig::default()));
        assert_ne!(a, render_plot(&reference, &PlotConfig::default()));
    }

    #[test]
    fn constant_trajectories_render() {
        let x = DMatrix::from_element(2, 1, 3.0);
        let t = Trajectory::new(vec![0.0, 1.0], x).unwrap();
        assert!(!render_plot(&t, &PlotConfig::default()).data.is_empty());
    }
}
