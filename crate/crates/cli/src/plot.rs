//! Mapping curves as a raster image: input level on x, output level on y.

use geoloc_core::style_align::{Channel, ColorMapping};
use geoloc_core::RgbImage;

const BACKGROUND: [u8; 3] = [255, 255, 255];
const GRID: [u8; 3] = [225, 225, 225];
const FRAME: [u8; 3] = [0, 0, 0];
pub const CURVE_COLORS: [[u8; 3]; 3] = [[220, 40, 40], [30, 150, 30], [40, 70, 220]];

/// Smallest canvas that leaves room for the plot area.
pub const MIN_SIZE: usize = 64;

struct Canvas {
    size: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.size && (y as usize) < self.size {
            let i = (y as usize * self.size + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

/// Pixel position of `(input, output)` levels; the margin is an eighth of the side.
pub fn to_pixel(size: usize, input: u8, output: u8) -> (i64, i64) {
    let m = (size / 8) as f64;
    let span = size as f64 - 1.0 - 2.0 * m;
    let x = m + input as f64 / 255.0 * span;
    let y = size as f64 - 1.0 - m - output as f64 / 255.0 * span;
    (x.round() as i64, y.round() as i64)
}

/// Renders the R, G and B curves (drawn in that order) on a `size` square.
pub fn render(mapping: &ColorMapping, size: usize) -> RgbImage {
    let size = size.max(MIN_SIZE);
    let mut c = Canvas {
        size,
        px: BACKGROUND.repeat(size * size),
    };
    for level in [64u8, 128, 192] {
        c.line(to_pixel(size, level, 0), to_pixel(size, level, 255), GRID);
        c.line(to_pixel(size, 0, level), to_pixel(size, 255, level), GRID);
    }
    let corners = [(0, 0), (255, 0), (255, 255), (0, 255), (0, 0)];
    for w in corners.windows(2) {
        c.line(to_pixel(size, w[0].0, w[0].1), to_pixel(size, w[1].0, w[1].1), FRAME);
    }
    for ch in Channel::ALL {
        let t = mapping.lut(ch).table();
        for x in 0..255u8 {
            c.line(
                to_pixel(size, x, t[x as usize]),
                to_pixel(size, x + 1, t[x as usize + 1]),
                CURVE_COLORS[ch.index()],
            );
        }
    }
    RgbImage::new(size, size, c.px).expect("square canvas")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_one_diagonal_in_the_last_color() {
        let img = render(&ColorMapping::identity(), 256);
        for level in [0u8, 100, 200, 255] {
            let (x, y) = to_pixel(256, level, level);
            assert_eq!(img.pixel(x as usize, y as usize), CURVE_COLORS[2]);
        }
        let count = |c: [u8; 3]| {
            (0..256)
                .flat_map(|y| (0..256).map(move |x| (x, y)))
                .filter(|&(x, y)| img.pixel(x, y) == c)
                .count()
        };
        assert_eq!(count(CURVE_COLORS[0]), 0);
        assert!(count(CURVE_COLORS[2]) > 150);
    }

    #[test]
    fn corners_map_inside_the_canvas() {
        for size in [MIN_SIZE, 300, 513] {
            for (i, o) in [(0, 0), (255, 255), (0, 255)] {
                let (x, y) = to_pixel(size, i, o);
                assert!(x > 0 && y > 0 && (x as usize) < size - 1 && (y as usize) < size - 1);
            }
        }
    }
}
