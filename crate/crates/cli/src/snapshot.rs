//! Flat y-z rendering of a scene, as seen from the sensor, for the review
//! page's snapshot image.

use image::{Rgb, RgbImage};
use star_core::scenario::SENSOR_VIEWPOINT;
use star_core::PointCloud;

const PIXELS_PER_METER: f64 = 200.0;
const MARGIN: u32 = 8;
const BACKGROUND: Rgb<u8> = Rgb([24, 24, 28]);
const UNCOLORED: Rgb<u8> = Rgb([180, 180, 180]);

pub fn render(cloud: &PointCloud) -> RgbImage {
    let points = cloud.points();
    if points.is_empty() {
        return RgbImage::from_pixel(2 * MARGIN, 2 * MARGIN, BACKGROUND);
    }
    let (mut y0, mut y1, mut z0, mut z1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
        z0 = z0.min(p.z);
        z1 = z1.max(p.z);
    }
    let w = ((y1 - y0) * PIXELS_PER_METER).ceil() as u32 + 1 + 2 * MARGIN;
    let h = ((z1 - z0) * PIXELS_PER_METER).ceil() as u32 + 1 + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);

    // farthest first so nearer surfaces overwrite them
    let mut order: Vec<usize> = (0..points.len()).collect();
    let dist = |i: usize| points[i].distance_squared(SENSOR_VIEWPOINT);
    order.sort_by(|&a, &b| dist(b).total_cmp(&dist(a)));

    for i in order {
        let p = points[i];
        // sensor looks along +x, so +y is to the left in the image
        let u = MARGIN + ((y1 - p.y) * PIXELS_PER_METER).round() as u32;
        let v = MARGIN + ((z1 - p.z) * PIXELS_PER_METER).round() as u32;
        let color = cloud
            .colors()
            .map_or(UNCOLORED, |c| Rgb([c[i].r, c[i].g, c[i].b]));
        // 2x2 splat so a 1 cm grid leaves no gaps
        for (du, dv) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            if u + du < w && v + dv < h {
                img.put_pixel(u + du, v + dv, color);
            }
        }
    }
    img
}
