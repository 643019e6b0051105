//! Area-uniform surface samplers.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const PRIMITIVES: [&str; 5] = ["sphere", "cube", "cylinder", "cone", "torus"];
pub const SPHERE_RADIUS: f64 = 1.0;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn jitter(p: [f64; 3], noise: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    if noise == 0.0 {
        return p;
    }
    [p[0] + noise * gauss(rng), p[1] + noise * gauss(rng), p[2] + noise * gauss(rng)]
}

/// Picks an index with probability proportional to `areas`.
fn pick(areas: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = areas.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, a) in areas.iter().enumerate() {
        if u < *a {
            return i;
        }
        u -= a;
    }
    areas.len() - 1
}

fn sphere(r: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [gauss(rng), gauss(rng), gauss(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [r * v[0] / n, r * v[1] / n, r * v[2] / n];
        }
    }
}

fn disk(r: f64, z: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let rho = r * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    [rho * t.cos(), rho * t.sin(), z]
}

fn tube(r: f64, z0: f64, z1: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let t = rng.random_range(0.0..TAU);
    [r * t.cos(), r * t.sin(), rng.random_range(z0..z1)]
}

/// Lateral surface of a cone with base radius `r` at `z0` and apex at `z0 + h`.
fn cone_side(r: f64, z0: f64, h: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    // fraction of the way from apex to base; density grows linearly
    let s = rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    [s * r * t.cos(), s * r * t.sin(), z0 + h * (1.0 - s)]
}

fn cube(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let face = rng.random_range(0..6);
    let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let s = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => [s, a, b],
        1 => [a, s, b],
        _ => [a, b, s],
    }
}

fn torus(big: f64, small: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let u = rng.random_range(0.0..TAU);
        let v = rng.random_range(0.0..TAU);
        // accept proportionally to the local area element
        if rng.random::<f64>() * (big + small) <= big + small * v.cos() {
            let ring = big + small * v.cos();
            return [ring * u.cos(), ring * u.sin(), small * v.sin()];
        }
    }
}

/// `n` noisy samples of primitive `class` (index into [`PRIMITIVES`]).
pub(super) fn primitive(class: usize, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let p = match class {
                0 => sphere(SPHERE_RADIUS, rng),
                1 => cube(rng),
                2 => {
                    let r = 0.8;
                    match pick(&[TAU * r * 2.0, PI * r * r, PI * r * r], rng) {
                        0 => tube(r, -1.0, 1.0, rng),
                        1 => disk(r, -1.0, rng),
                        _ => disk(r, 1.0, rng),
                    }
                }
                3 => {
                    let (r, h) = (1.0, 2.0);
                    match pick(&[PI * r * (r * r + h * h).sqrt(), PI * r * r], rng) {
                        0 => cone_side(r, -1.0, h, rng),
                        _ => disk(r, -1.0, rng),
                    }
                }
                _ => torus(0.7, 0.3, rng),
            };
            jitter(p, noise, rng)
        })
        .collect()
}

pub(super) struct Composite {
    pub positions: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
    /// Distance of each noise-free sample to the part interface.
    pub interface_distance: Vec<f64>,
}

/// A closed cylinder body (part 0) topped by a hemisphere or a cone (part 1).
/// Radius, interface height and cap kind vary per cloud.
pub(super) fn composite(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Composite {
    let r = rng.random_range(0.4..0.6);
    let h = rng.random_range(-0.2..0.4);
    let dome = rng.random_bool(0.5);
    let cone_h = rng.random_range(0.5..0.9);
    let cap_area = if dome {
        TAU * r * r
    } else {
        PI * r * (r * r + cone_h * cone_h).sqrt()
    };
    let areas = [TAU * r * (h + 1.0), PI * r * r, cap_area];
    let mut out = Composite {
        positions: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        interface_distance: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let (p, label) = match pick(&areas, rng) {
            0 => (tube(r, -1.0, h, rng), 0),
            1 => (disk(r, -1.0, rng), 0),
            _ if dome => {
                let s = sphere(r, rng);
                ([s[0], s[1], h + s[2].abs()], 1)
            }
            _ => (cone_side(r, h, cone_h, rng), 1),
        };
        let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
        out.interface_distance.push(((rho - r).powi(2) + (p[2] - h).powi(2)).sqrt());
        out.positions.push(jitter(p, noise, rng));
        out.labels.push(label);
    }
    out
}
