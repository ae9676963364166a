//! Grayscale rasterization of simulator states.
//!
//! White geometry on a black background. Renders are pure functions of the
//! pose, so repeated calls are bit-identical.

use crate::cartpole::{CartPoleParams, CartPoleState};
use crate::pendulum::PendulumState;

pub const PENDULUM_FRAME: usize = 48;
pub const CARTPOLE_FRAME: usize = 80;

/// Fraction of the frame height used for the pendulum rod.
const ROD_LENGTH_FRACTION: f64 = 0.4;
/// Cart body size in pixels.
const CART_W: usize = 12;
const CART_H: usize = 6;
/// Pole length in pixels.
const POLE_LEN: f64 = 24.0;
/// Horizontal scale for the cart position.
pub const PIXELS_PER_METER: f64 = 10.0;
/// Vertical center of the cart body.
const CART_Y: f64 = 60.0;

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn black(height: usize, width: usize) -> Self {
        Frame { height, width, pixels: vec![0.0; height * width] }
    }

    fn set(&mut self, x: isize, y: isize, value: f64) {
        if x >= 0 && (x as usize) < self.width && y >= 0 && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = value;
        }
    }

    /// 2-pixel-thick segment from (x0, y0) to (x1, y1), coordinates in
    /// pixel space with y growing downward.
    fn draw_segment(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let steps = (len * 2.0).ceil() as usize + 1;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let px = x0 + t * (x1 - x0);
            let py = y0 + t * (y1 - y0);
            let bx = px.floor() as isize;
            let by = py.floor() as isize;
            self.set(bx, by, 1.0);
            self.set(bx + 1, by, 1.0);
            self.set(bx, by + 1, 1.0);
            self.set(bx + 1, by + 1, 1.0);
        }
    }

    fn fill_rect(&mut self, cx: f64, cy: f64, w: usize, h: usize) {
        let x0 = (cx - w as f64 / 2.0).round() as isize;
        let y0 = (cy - h as f64 / 2.0).round() as isize;
        for dy in 0..h as isize {
            for dx in 0..w as isize {
                self.set(x0 + dx, y0 + dy, 1.0);
            }
        }
    }

    pub fn count_lit(&self) -> usize {
        self.pixels.iter().filter(|&&v| v > 0.0).count()
    }

    /// Number of pixel positions where the two frames differ.
    pub fn diff_count(&self, other: &Frame) -> usize {
        self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a != b).count()
    }

    /// Intensity-weighted centroid column of the lit pixels.
    pub fn centroid_x(&self) -> f64 {
        let mut mass = 0.0;
        let mut sum = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.pixels[y * self.width + x];
                mass += v;
                sum += v * x as f64;
            }
        }
        if mass > 0.0 {
            sum / mass
        } else {
            0.0
        }
    }
}

/// Two consecutive frames stacked as the 2-channel observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPair {
    pub frame_prev: Frame,
    pub frame_curr: Frame,
}

impl ObservationPair {
    pub fn new(frame_prev: Frame, frame_curr: Frame) -> Self {
        assert_eq!(frame_prev.height, frame_curr.height);
        assert_eq!(frame_prev.width, frame_curr.width);
        ObservationPair { frame_prev, frame_curr }
    }

    /// Observation of a motionless state: the frame duplicated.
    pub fn still(frame: Frame) -> Self {
        ObservationPair { frame_prev: frame.clone(), frame_curr: frame }
    }

    pub fn height(&self) -> usize {
        self.frame_curr.height
    }

    pub fn width(&self) -> usize {
        self.frame_curr.width
    }

    /// Channel-major flat pixel buffer \[2 * h * w\].
    pub fn to_channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.frame_prev.pixels.len());
        out.extend_from_slice(&self.frame_prev.pixels);
        out.extend_from_slice(&self.frame_curr.pixels);
        out
    }
}

/// 48x48 frame with the rod drawn from the image center at angle theta
/// (theta = 0 points down the image, matching the stable direction).
pub fn render_pendulum(s: &PendulumState) -> Frame {
    let mut frame = Frame::black(PENDULUM_FRAME, PENDULUM_FRAME);
    let c = PENDULUM_FRAME as f64 / 2.0;
    let len = ROD_LENGTH_FRACTION * PENDULUM_FRAME as f64;
    let tip_x = c + len * s.theta.sin();
    let tip_y = c + len * s.theta.cos();
    frame.draw_segment(c, c, tip_x, tip_y);
    frame
}

/// 80x80 frame: cart rectangle on a fixed row, pole from the cart top at
/// angle theta (theta = 0 points up). Returns the frame and whether the
/// cart position had to be clamped to stay in view.
pub fn render_cartpole_checked(s: &CartPoleState, params: &CartPoleParams) -> (Frame, bool) {
    let mut frame = Frame::black(CARTPOLE_FRAME, CARTPOLE_FRAME);
    let half_view =
        (CARTPOLE_FRAME as f64 / 2.0 - CART_W as f64 / 2.0 - 1.0) / PIXELS_PER_METER;
    let limit = half_view.min(params.track_half_length);
    let clamped = s.x.abs() > limit;
    let x = s.x.clamp(-limit, limit);
    let cx = CARTPOLE_FRAME as f64 / 2.0 + x * PIXELS_PER_METER;
    frame.fill_rect(cx, CART_Y, CART_W, CART_H);
    let top_y = CART_Y - CART_H as f64 / 2.0;
    let tip_x = cx + POLE_LEN * s.theta.sin();
    let tip_y = top_y - POLE_LEN * s.theta.cos();
    frame.draw_segment(cx, top_y, tip_x, tip_y);
    (frame, clamped)
}

pub fn render_cartpole(s: &CartPoleState, params: &CartPoleParams) -> Frame {
    render_cartpole_checked(s, params).0
}
