//! Small numeric helpers shared by the modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest supported state, control, disturbance or output dimension.
pub const MAXD: usize = 8;

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[inline]
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a salt with the bit patterns of a time and a state.
pub fn seed_from_point(salt: u64, t: f64, x: &[f64]) -> u64 {
    let mut h = splitmix(salt);
    h = splitmix(h ^ t.to_bits());
    for v in x {
        h = splitmix(h ^ v.to_bits());
    }
    h
}

pub fn seed_mix(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point on the unit sphere of R^n from a normal sample.
pub fn unit_vector<R: rand::Rng>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut s = 0.0;
        for o in out.iter_mut() {
            *o = gauss(rng);
            s += *o * *o;
        }
        if s > 1e-24 {
            let r = s.sqrt();
            for o in out.iter_mut() {
                *o /= r;
            }
            return;
        }
    }
}

pub fn gauss<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fixed direction set: signs for n = 1, equally spaced angles for n = 2,
/// seeded sphere points for n >= 3.
pub fn direction_set(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        0 => vec![],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(1))
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count.max(1) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(count.max(2 * n));
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                out.push(e.clone());
                e[i] = -1.0;
                out.push(e);
            }
            let mut rng = rng_from(0x5eed_d1c5 ^ n as u64);
            while out.len() < count {
                let mut v = vec![0.0; n];
                unit_vector(&mut rng, &mut v);
                out.push(v);
            }
            out
        }
    }
}
