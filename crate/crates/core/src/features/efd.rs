//! Elliptic Fourier descriptors of closed chain codes (Kuhl-Giardina).
//!
//! Coordinates are image coordinates: `x` is the column and `y` the row.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::chain::{ChainCode, STEPS};
use crate::error::{GaitError, Result};

/// Default harmonic count for per-frame pose features.
pub const DEFAULT_HARMONICS: usize = 12;

/// Traversal time of a link: 1 for even directions, √2 for odd ones.
pub fn link_time(a: u8) -> f64 {
    let parity = if a.is_multiple_of(2) { 1.0 } else { -1.0 };
    1.0 + ((SQRT_2 - 1.0) / 2.0) * (1.0 - parity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfdDescriptor {
    pub harmonics: usize,
    pub a0: f64,
    pub c0: f64,
    /// `(a_n, b_n, c_n, d_n)` for `n = 1..=harmonics`.
    pub coeffs: Vec<[f64; 4]>,
    pub period: f64,
}

impl EfdDescriptor {
    /// `[A0, C0, a1, b1, c1, d1, a2, ...]`, length `4N + 2`.
    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.harmonics + 2);
        out.push(self.a0);
        out.push(self.c0);
        for c in &self.coeffs {
            out.extend_from_slice(c);
        }
        out
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (mut x, mut y) = (self.a0, self.c0);
        for (i, [a, b, c, d]) in self.coeffs.iter().enumerate() {
            let (s, co) = (2.0 * (i + 1) as f64 * PI * t / self.period).sin_cos();
            x += a * co + b * s;
            y += c * co + d * s;
        }
        (x, y)
    }

    /// Rotation-, scale- and start-point-normalized copy; the DC terms are
    /// left untouched.
    pub fn normalized(&self) -> EfdDescriptor {
        let Some(&[a1, b1, c1, d1]) = self.coeffs.first() else {
            return self.clone();
        };
        let theta = 0.5 * (2.0 * (a1 * b1 + c1 * d1)).atan2(a1 * a1 + c1 * c1 - b1 * b1 - d1 * d1);
        let shifted: Vec<[f64; 4]> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &[a, b, c, d])| {
                let (s, co) = ((i + 1) as f64 * theta).sin_cos();
                [a * co + b * s, -a * s + b * co, c * co + d * s, -c * s + d * co]
            })
            .collect();
        let [a1s, _, c1s, _] = shifted[0];
        let psi = c1s.atan2(a1s);
        let scale = (a1s * a1s + c1s * c1s).sqrt();
        let (s, co) = psi.sin_cos();
        let coeffs = shifted
            .into_iter()
            .map(|[a, b, c, d]| {
                [
                    (co * a + s * c) / scale,
                    (co * b + s * d) / scale,
                    (-s * a + co * c) / scale,
                    (-s * b + co * d) / scale,
                ]
            })
            .collect();
        EfdDescriptor {
            coeffs,
            ..self.clone()
        }
    }
}

struct Link {
    dx: f64,
    dy: f64,
    dt: f64,
    t0: f64,
    t1: f64,
}

fn links(chain: &ChainCode) -> Vec<Link> {
    let mut t = 0.0;
    chain
        .links
        .iter()
        .map(|&a| {
            let (dx, dy) = STEPS[a as usize];
            let dt = link_time(a);
            let l = Link {
                dx: dx as f64,
                dy: dy as f64,
                dt,
                t0: t,
                t1: t + dt,
            };
            t += dt;
            l
        })
        .collect()
}

/// Closed-form coefficients for harmonics `1..=n` and the DC terms.
pub fn efd_coefficients(chain: &ChainCode, n: usize) -> Result<EfdDescriptor> {
    if !chain.is_closed() {
        return Err(GaitError::invalid("elliptic Fourier descriptors need a closed chain"));
    }
    if n == 0 {
        return Err(GaitError::invalid("at least one harmonic is required"));
    }
    let ls = links(chain);
    let period = ls.last().map(|l| l.t1).unwrap_or(0.0);

    let mut coeffs = Vec::with_capacity(n);
    for h in 1..=n {
        let w = 2.0 * h as f64 * PI / period;
        let k = period / (2.0 * (h * h) as f64 * PI * PI);
        let mut c = [0.0; 4];
        for l in &ls {
            let (s1, c1) = (w * l.t1).sin_cos();
            let (s0, c0) = (w * l.t0).sin_cos();
            let (rx, ry) = (l.dx / l.dt, l.dy / l.dt);
            c[0] += rx * (c1 - c0);
            c[1] += rx * (s1 - s0);
            c[2] += ry * (c1 - c0);
            c[3] += ry * (s1 - s0);
        }
        coeffs.push(c.map(|v| v * k));
    }

    let (mut sum_dx, mut sum_dy, mut sum_dt) = (0.0, 0.0, 0.0);
    let (mut a0, mut c0) = (0.0, 0.0);
    for l in &ls {
        let xi = sum_dx - l.dx / l.dt * sum_dt;
        let delta = sum_dy - l.dy / l.dt * sum_dt;
        let span = l.t1 * l.t1 - l.t0 * l.t0;
        a0 += l.dx / (2.0 * l.dt) * span + xi * l.dt;
        c0 += l.dy / (2.0 * l.dt) * span + delta * l.dt;
        sum_dx += l.dx;
        sum_dy += l.dy;
        sum_dt += l.dt;
    }

    Ok(EfdDescriptor {
        harmonics: n,
        a0: a0 / period + chain.start.0 as f64,
        c0: c0 / period + chain.start.1 as f64,
        coeffs,
        period,
    })
}

/// Contour points at `samples` uniformly spaced times in `[0, T)`.
pub fn efd_reconstruct(desc: &EfdDescriptor, samples: usize) -> Result<Vec<(f64, f64)>> {
    if samples < 3 {
        return Err(GaitError::invalid("reconstruction needs at least three samples"));
    }
    Ok((0..samples)
        .map(|k| desc.point_at(k as f64 * desc.period / samples as f64))
        .collect())
}

/// Position on the chain polygon at time `t`, by linear interpolation.
pub fn chain_point_at(chain: &ChainCode, t: f64) -> (f64, f64) {
    let ls = links(chain);
    let period = ls.last().map(|l| l.t1).unwrap_or(0.0);
    let t = if period > 0.0 { t.rem_euclid(period) } else { 0.0 };
    let (mut x, mut y) = (chain.start.0 as f64, chain.start.1 as f64);
    for l in &ls {
        if t < l.t1 {
            let f = (t - l.t0) / l.dt;
            return (x + f * l.dx, y + f * l.dy);
        }
        x += l.dx;
        y += l.dy;
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::chain::trace_contour;
    use crate::image::BinaryImage;

    fn disc(r: f64) -> ChainCode {
        let size = (2.0 * r + 8.0) as usize;
        let c = size as f64 / 2.0;
        trace_contour(&BinaryImage::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            dx * dx + dy * dy <= r * r
        }))
        .unwrap()
    }

    #[test]
    fn link_times() {
        assert_eq!(link_time(0), 1.0);
        assert!((link_time(3) - SQRT_2).abs() < 1e-15);
        let chain = ChainCode::new((0, 0), vec![0, 2, 4, 6]).unwrap();
        assert_eq!(efd_coefficients(&chain, 1).unwrap().period, 4.0);
    }

    #[test]
    fn square_dc_is_centroid() {
        let img = BinaryImage::from_fn(20, 20, |x, y| (4..12).contains(&x) && (6..14).contains(&y));
        let d = efd_coefficients(&trace_contour(&img).unwrap(), 1).unwrap();
        assert!((d.a0 - 7.5).abs() < 1e-12);
        assert!((d.c0 - 9.5).abs() < 1e-12);
    }

    #[test]
    fn open_chain_rejected() {
        let chain = ChainCode::new((0, 0), vec![0, 0, 2]).unwrap();
        assert!(efd_coefficients(&chain, 3).is_err());
    }

    #[test]
    fn feature_length() {
        let d = efd_coefficients(&disc(10.0), DEFAULT_HARMONICS).unwrap();
        assert_eq!(d.to_features().len(), 50);
    }

    #[test]
    fn zero_harmonics_reconstruct_to_dc() {
        let d = EfdDescriptor {
            harmonics: 2,
            a0: 3.0,
            c0: -4.0,
            coeffs: vec![[0.0; 4]; 2],
            period: 10.0,
        };
        assert!(efd_reconstruct(&d, 16).unwrap().iter().all(|&p| p == (3.0, -4.0)));
        assert!(efd_reconstruct(&d, 2).is_err());
    }

    #[test]
    fn translation_moves_only_dc() {
        let chain = disc(9.0);
        let a = efd_coefficients(&chain, 8).unwrap();
        let b = efd_coefficients(&chain.translated(13, -5), 8).unwrap();
        assert!((b.a0 - a.a0 - 13.0).abs() < 1e-9);
        assert!((b.c0 - a.c0 + 5.0).abs() < 1e-9);
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn start_point_does_not_change_the_curve() {
        let chain = disc(12.0);
        let a = efd_coefficients(&chain, 10).unwrap();
        for k in [3, 11, 40] {
            let r = chain.rotated(k);
            let b = efd_coefficients(&r, 10).unwrap();
            let shift: f64 = chain.links[..k].iter().map(|&l| link_time(l)).sum();
            assert!((a.a0 - b.a0).abs() < 1e-9 && (a.c0 - b.c0).abs() < 1e-9);
            for i in 0..50 {
                let t = i as f64 * b.period / 50.0;
                let (pa, pb) = (a.point_at(t + shift), b.point_at(t));
                assert!((pa.0 - pb.0).abs() < 1e-9 && (pa.1 - pb.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn circle_first_harmonic_is_nearly_round() {
        let d = efd_coefficients(&disc(25.0), 1).unwrap();
        let pts = efd_reconstruct(&d, 400).unwrap();
        let n = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for p in &pts {
            sxx += (p.0 - mx).powi(2) / n;
            syy += (p.1 - my).powi(2) / n;
            sxy += (p.0 - mx) * (p.1 - my) / n;
        }
        let tr = sxx + syy;
        let disc_ = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
        let (l1, l2) = ((tr + disc_) / 2.0, (tr - disc_) / 2.0);
        let ecc = (1.0 - l2 / l1).sqrt();
        assert!(ecc < 0.2, "eccentricity {ecc}");
    }

    #[test]
    fn normalization_removes_rotation_scale_and_phase() {
        let base = efd_coefficients(&trace_contour(&BinaryImage::from_fn(60, 60, |x, y| {
            let (dx, dy) = (x as f64 - 30.0, y as f64 - 30.0);
            dx * dx / 400.0 + dy * dy / 100.0 <= 1.0 || ((30..45).contains(&x) && (20..28).contains(&y))
        }))
        .unwrap(), 6)
        .unwrap();
        // Rotate by phi, scale by s and shift the start time by tau.
        let (phi, s, tau) = (0.7f64, 1.8, 3.3);
        let (sp, cp) = phi.sin_cos();
        let coeffs = base
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &[a, b, c, d])| {
                let (st, ct) = (2.0 * (i + 1) as f64 * PI * tau / base.period).sin_cos();
                let (a, b, c, d) = (a * ct + b * st, -a * st + b * ct, c * ct + d * st, -c * st + d * ct);
                [s * (cp * a - sp * c), s * (cp * b - sp * d), s * (sp * a + cp * c), s * (sp * b + cp * d)]
            })
            .collect();
        let moved = EfdDescriptor { coeffs, ..base.clone() };
        let (n1, n2) = (base.normalized(), moved.normalized());
        for (x, y) in n1.coeffs.iter().flatten().zip(n2.coeffs.iter().flatten()) {
            assert!((x - y).abs() < 1e-9 || (x + y).abs() < 1e-9, "{x} vs {y}");
        }
        assert!((n1.coeffs[0][0].abs() - 1.0).abs() < 1e-12);
    }
}
