//! Tiny software rasterizer for realm observations.
//!
//! Scenes are drawn as soft Gaussian splats and anti-aliased line strokes on
//! an H x W x C grid with all intensities clamped into [0,1]. World
//! coordinates live in [-1, 1]^2; an optional camera tilt rotates world
//! space before projection, which changes appearance without touching
//! dynamics.

/// Render target: row-major H x W x C buffer of [0,1] intensities.
pub struct Canvas {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Canvas {
    pub fn new(h: usize, w: usize, c: usize) -> Canvas {
        Canvas {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn fill_channel(&mut self, channel: usize, value: f32) {
        for y in 0..self.h {
            for x in 0..self.w {
                self.data[(y * self.w + x) * self.c + channel] = value;
            }
        }
    }

    #[inline]
    fn add(&mut self, y: usize, x: usize, channel: usize, value: f32) {
        let v = &mut self.data[(y * self.w + x) * self.c + channel];
        *v = (*v + value).clamp(0.0, 1.0);
    }

    /// Projects world coordinates in [-1,1] (after rotating by `tilt`) onto
    /// fractional pixel coordinates.
    pub fn project(&self, wx: f64, wy: f64, tilt: f64) -> (f64, f64) {
        let (s, c) = tilt.sin_cos();
        let rx = c * wx - s * wy;
        let ry = s * wx + c * wy;
        // World y grows upward; pixel rows grow downward.
        let px = (rx + 1.0) * 0.5 * (self.w as f64 - 1.0);
        let py = (1.0 - (ry + 1.0) * 0.5) * (self.h as f64 - 1.0);
        (px, py)
    }

    /// Soft disc of radius ~2 sigma centered at fractional pixel coords.
    pub fn splat(&mut self, px: f64, py: f64, sigma: f64, channel: usize, amplitude: f32) {
        let radius = (2.5 * sigma).ceil() as i64;
        let cx = px.round() as i64;
        let cy = py.round() as i64;
        for y in (cy - radius).max(0)..=(cy + radius).min(self.h as i64 - 1) {
            for x in (cx - radius).max(0)..=(cx + radius).min(self.w as i64 - 1) {
                let dx = x as f64 - px;
                let dy = y as f64 - py;
                let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                self.add(y as usize, x as usize, channel, amplitude * g as f32);
            }
        }
    }

    /// Anti-aliased stroke from `(x0,y0)` to `(x1,y1)` in pixel coords.
    pub fn stroke(
        &mut self,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        thickness: f64,
        channel: usize,
        amplitude: f32,
    ) {
        let steps = (((x1 - x0).abs().max((y1 - y0).abs())).ceil() as usize * 2).max(2);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.splat(
                x0 + t * (x1 - x0),
                y0 + t * (y1 - y0),
                thickness,
                channel,
                amplitude / 2.0,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splats_stay_in_unit_range_even_when_stacked() {
        let mut c = Canvas::new(8, 8, 3);
        for _ in 0..50 {
            c.splat(4.0, 4.0, 1.5, 0, 0.9);
        }
        assert!(c.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(c.data[(4 * 8 + 4) * 3] > 0.99);
    }

    #[test]
    fn projection_maps_corners_and_center() {
        let c = Canvas::new(16, 16, 1);
        let (px, py) = c.project(0.0, 0.0, 0.0);
        assert!((px - 7.5).abs() < 1e-9 && (py - 7.5).abs() < 1e-9);
        let (px, py) = c.project(-1.0, 1.0, 0.0);
        assert!((px - 0.0).abs() < 1e-9 && (py - 0.0).abs() < 1e-9, "top-left");
        let (px, py) = c.project(1.0, -1.0, 0.0);
        assert!((px - 15.0).abs() < 1e-9 && (py - 15.0).abs() < 1e-9, "bottom-right");
    }

    #[test]
    fn tilt_rotates_the_scene() {
        let c = Canvas::new(16, 16, 1);
        let straight = c.project(0.5, 0.0, 0.0);
        let tilted = c.project(0.5, 0.0, 0.25);
        assert!((straight.0 - tilted.0).abs() > 0.1 || (straight.1 - tilted.1).abs() > 0.1);
    }
}
