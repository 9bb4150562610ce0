//! Registration of a circular particle on a square pixel grid.
//!
//! A pixel is registered only when it lies entirely inside the particle, so the
//! recorded area `B` is an eroded version of the true area `A`. Containment of a
//! square in a disk is decided by its four corners (the disk is convex). Corners
//! that sit exactly on the circle count as inside, with an absolute slack of
//! [`CORNER_SLACK`] pixel sides to stabilize ties.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Absolute slack on corner distances, in units of the pixel side.
pub const CORNER_SLACK: f64 = 1e-12;

/// Smallest area ratio `A / px` at which some offset registers a pixel.
pub const MISS_THRESHOLD: f64 = PI / 2.0;

/// Area ratio `A / px` above which every offset registers at least one pixel.
///
/// The worst offset is a grid vertex: the disk must reach the far corner of one
/// of the four adjacent pixels, at distance `sqrt(2)` pixel sides.
pub const HIT_THRESHOLD: f64 = 2.0 * PI;

/// Square pixel grid with pixel area `px` in um^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pixel_area: f64,
    pixel_side: f64,
}

impl GridSpec {
    pub fn new(pixel_area: f64) -> Result<Self> {
        if !(pixel_area.is_finite() && pixel_area > 0.0) {
            return Err(Error::invalid(format!(
                "pixel area must be positive and finite, got {pixel_area}"
            )));
        }
        Ok(Self {
            pixel_area,
            pixel_side: pixel_area.sqrt(),
        })
    }

    /// Grid with unit pixel side.
    pub fn unit() -> Self {
        Self {
            pixel_area: 1.0,
            pixel_side: 1.0,
        }
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_area
    }

    pub fn pixel_side(&self) -> f64 {
        self.pixel_side
    }
}

/// Circular particle of true area `A` in um^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    area: f64,
    radius: f64,
}

impl Particle {
    pub fn new(area: f64) -> Result<Self> {
        if !(area.is_finite() && area > 0.0) {
            return Err(Error::invalid(format!(
                "particle area must be positive and finite, got {area}"
            )));
        }
        Ok(Self {
            area,
            radius: (area / PI).sqrt(),
        })
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Position of the particle center modulo one grid period, in um.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Offset {
    u: f64,
    v: f64,
}

impl Offset {
    /// Offset that must already lie in `[0, pixel_side)^2`.
    pub fn new(u: f64, v: f64, grid: &GridSpec) -> Result<Self> {
        let side = grid.pixel_side();
        let ok = |x: f64| x.is_finite() && (0.0..side).contains(&x);
        if !(ok(u) && ok(v)) {
            return Err(Error::invalid(format!(
                "offset ({u}, {v}) outside [0, {side})^2"
            )));
        }
        Ok(Self { u, v })
    }

    /// Reduces an arbitrary center position modulo one pixel period.
    pub fn wrapped(x: f64, y: f64, grid: &GridSpec) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::invalid("center position must be finite"));
        }
        let side = grid.pixel_side();
        let wrap = |t: f64| {
            let r = t.rem_euclid(side);
            // rem_euclid may round up to exactly `side`
            if r >= side {
                0.0
            } else {
                r
            }
        };
        Ok(Self {
            u: wrap(x),
            v: wrap(y),
        })
    }

    /// Offset at fractions `(fu, fv)` of the pixel side, each in `[0, 1)`.
    pub fn from_fractions(fu: f64, fv: f64, grid: &GridSpec) -> Result<Self> {
        Self::new(fu * grid.pixel_side(), fv * grid.pixel_side(), grid)
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }
}

/// Result of registering one particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Registration {
    pub covered_pixels: u64,
    /// `covered_pixels * pixel_area`, in um^2.
    pub area_b: f64,
}

/// Counts the pixels entirely contained in the closed disk.
pub fn register(particle: &Particle, grid: &GridSpec, offset: &Offset) -> Registration {
    let side = grid.pixel_side();
    let covered = covered_pixels_unit(
        particle.radius() / side,
        offset.u() / side,
        offset.v() / side,
    );
    Registration {
        covered_pixels: covered,
        area_b: covered as f64 * grid.pixel_area(),
    }
}

/// Registration on the unit grid for an area ratio `A / px`.
///
/// `fu`, `fv` are the center coordinates in pixel sides and may lie anywhere;
/// they are reduced modulo one.
pub fn register_dimensionless(area_ratio: f64, fu: f64, fv: f64) -> Result<u64> {
    let particle = Particle::new(area_ratio)?;
    let grid = GridSpec::unit();
    let offset = Offset::wrapped(fu, fv, &grid)?;
    Ok(register(&particle, &grid, &offset).covered_pixels)
}

/// Pixel count for a disk of radius `radius` centered at `(cu, cv)`, with
/// everything expressed in pixel sides.
pub(crate) fn covered_pixels_unit(radius: f64, cu: f64, cv: f64) -> u64 {
    let reach = radius + CORNER_SLACK;
    let reach2 = reach * reach;
    // column whose corners are closest to the center horizontally
    let best_col = (cu - 0.5).round() as i64;
    let far_x = |i: i64| {
        let x = i as f64;
        (x - cu).abs().max((x + 1.0 - cu).abs())
    };

    let j_first = (cv - reach).floor() as i64;
    let j_last = (cv + reach).ceil() as i64;
    let mut total = 0u64;
    for j in j_first..j_last {
        let y = j as f64;
        let dy = (y - cv).abs().max((y + 1.0 - cv).abs());
        let dy2 = dy * dy;
        let inside = |i: i64| {
            let dx = far_x(i);
            dx * dx + dy2 <= reach2
        };
        if !inside(best_col) {
            continue;
        }
        let half = (reach2 - dy2).max(0.0).sqrt();
        let mut lo = ((cu - half).ceil() as i64).min(best_col);
        let mut hi = (((cu + half).floor() as i64) - 1).max(best_col);
        while inside(lo - 1) {
            lo -= 1;
        }
        while !inside(lo) {
            lo += 1;
        }
        while inside(hi + 1) {
            hi += 1;
        }
        while !inside(hi) {
            hi -= 1;
        }
        total += (hi - lo + 1) as u64;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(radius: f64, cu: f64, cv: f64) -> u64 {
        let reach2 = (radius + CORNER_SLACK).powi(2);
        let corner_in = |x: f64, y: f64| (x - cu).powi(2) + (y - cv).powi(2) <= reach2;
        let lo = (cu.min(cv) - radius).floor() as i64 - 2;
        let hi = (cu.max(cv) + radius).ceil() as i64 + 2;
        let mut n = 0;
        for i in lo..hi {
            for j in lo..hi {
                let (x, y) = (i as f64, j as f64);
                if corner_in(x, y)
                    && corner_in(x + 1.0, y)
                    && corner_in(x, y + 1.0)
                    && corner_in(x + 1.0, y + 1.0)
                {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert!(GridSpec::new(0.0).is_err());
        assert!(GridSpec::new(-1.0).is_err());
        assert!(GridSpec::new(f64::NAN).is_err());
        assert!(Particle::new(0.0).is_err());
        assert!(Particle::new(-0.3).is_err());
        let g = GridSpec::new(0.16).unwrap();
        assert!(Offset::new(0.4, 0.0, &g).is_err());
        assert!(Offset::new(-0.01, 0.0, &g).is_err());
    }

    #[test]
    fn derived_fields_round_trip() {
        let g = GridSpec::new(0.16).unwrap();
        assert!((g.pixel_side().powi(2) - 0.16).abs() <= f64::EPSILON * 0.16);
        let p = Particle::new(2.5).unwrap();
        assert!((PI * p.radius().powi(2) - 2.5).abs() <= 2.0 * f64::EPSILON * 2.5);
    }

    #[test]
    fn half_pixel_particle_is_never_registered() {
        for &(fu, fv) in &[(0.0, 0.0), (0.5, 0.5), (0.13, 0.91)] {
            assert_eq!(register_dimensionless(0.5, fu, fv).unwrap(), 0);
        }
    }

    #[test]
    fn circumscribed_pixel_is_registered() {
        assert_eq!(register_dimensionless(PI / 2.0, 0.5, 0.5).unwrap(), 1);
        let g = GridSpec::new(0.16).unwrap();
        let p = Particle::new(PI / 2.0 * 0.16).unwrap();
        let o = Offset::from_fractions(0.5, 0.5, &g).unwrap();
        let r = register(&p, &g, &o);
        assert_eq!(r.covered_pixels, 1);
        assert_eq!(r.area_b, 0.16);
    }

    #[test]
    fn vertex_center_threshold() {
        // radius sqrt(2) at a vertex reaches the far corners of the four neighbours
        assert_eq!(register_dimensionless(2.0 * PI, 0.0, 0.0).unwrap(), 4);
        assert_eq!(register_dimensionless(2.0 * PI * (1.0 - 1e-9), 0.0, 0.0).unwrap(), 0);
    }

    #[test]
    fn large_particle_at_origin() {
        let r = (10000.0 / PI).sqrt();
        let n = covered_pixels_unit(r, 0.0, 0.0);
        assert_eq!(n, brute(r, 0.0, 0.0));
        assert_eq!(n, 9780);
        let band = 4.0 * (PI * 10000.0).sqrt();
        assert!(n as f64 >= 10000.0 - band && n <= 10000);
    }

    #[test]
    fn scale_invariance_example() {
        let g = GridSpec::new(0.04).unwrap();
        let p = Particle::new(0.28).unwrap();
        let o = Offset::new(0.0, 0.0, &g).unwrap();
        assert_eq!(
            register(&p, &g, &o).covered_pixels,
            register_dimensionless(7.0, 0.0, 0.0).unwrap()
        );
    }

    #[test]
    fn wrapped_offset_is_periodic() {
        let g = GridSpec::new(0.09).unwrap();
        let p = Particle::new(1.3).unwrap();
        let base = Offset::wrapped(0.07, 0.21, &g).unwrap();
        let shifted = Offset::wrapped(0.07 + 3.0 * 0.3, 0.21 - 2.0 * 0.3, &g).unwrap();
        assert_eq!(
            register(&p, &g, &base).covered_pixels,
            register(&p, &g, &shifted).covered_pixels
        );
    }

    #[test]
    fn agrees_with_brute_force_on_a_sweep() {
        for k in 0..400 {
            let radius = 0.3 + 0.037 * k as f64;
            let cu = (k as f64 * 0.618_033_988_7).fract();
            let cv = (k as f64 * 0.754_877_666_2).fract();
            assert_eq!(covered_pixels_unit(radius, cu, cv), brute(radius, cu, cv));
        }
    }
}
