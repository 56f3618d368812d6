//! Static overlay renderings of recognition results.

use image::{Rgb, RgbImage};
use tabstruct::geometry::{Point, Quad, Raster};
use tabstruct::pipeline::CropTransform;

pub const TABLE_COLOR: Rgb<u8> = Rgb([220, 30, 30]);
pub const CELL_COLOR: Rgb<u8> = Rgb([30, 90, 220]);
pub const GRID_COLOR: Rgb<u8> = Rgb([20, 170, 60]);
const ROW_HEAT: [f32; 3] = [255.0, 140.0, 0.0];
const COL_HEAT: [f32; 3] = [170.0, 0.0, 255.0];

fn plot(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Straight segment sampled at sub-pixel steps.
pub fn draw_segment(img: &mut RgbImage, a: Point, b: Point, color: Rgb<u8>) {
    let n = (a.dist(&b) * 2.0).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        plot(img, (a.x + (b.x - a.x) * t).floor() as i64, (a.y + (b.y - a.y) * t).floor() as i64, color);
    }
}

pub fn draw_quad(img: &mut RgbImage, q: &Quad, color: Rgb<u8>) {
    for i in 0..4 {
        draw_segment(img, q.points[i], q.points[(i + 1) % 4], color);
    }
}

/// Blend a separator probability map, given in crop coordinates at
/// `1 / sx` by `1 / sy` crop pixels per mask element, into the page region
/// that the crop covers.
pub fn blend_heatmap(img: &mut RgbImage, mask: &Raster<f32>, cell_w: f64, cell_h: f64, t: &CropTransform, crop_w: f64, crop_h: f64, row: bool) {
    let tint = if row { ROW_HEAT } else { COL_HEAT };
    let tl = t.inverse(Point::new(0.0, 0.0));
    let br = t.inverse(Point::new(crop_w, crop_h));
    let (x0, y0) = (tl.x.max(0.0) as u32, tl.y.max(0.0) as u32);
    let (x1, y1) = ((br.x.ceil() as u32).min(img.width()), (br.y.ceil() as u32).min(img.height()));
    for y in y0..y1 {
        for x in x0..x1 {
            let c = t.forward(Point::new(x as f64 + 0.5, y as f64 + 0.5));
            let (mr, mc) = ((c.y / cell_h).floor(), (c.x / cell_w).floor());
            if mr < 0.0 || mc < 0.0 || mr as usize >= mask.height || mc as usize >= mask.width {
                continue;
            }
            let a = 0.5 * *mask.get(mr as usize, mc as usize);
            let p = img.get_pixel_mut(x, y);
            for k in 0..3 {
                p[k] = (p[k] as f32 * (1.0 - a) + tint[k] * a).round() as u8;
            }
        }
    }
}
