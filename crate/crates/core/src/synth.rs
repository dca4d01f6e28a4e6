//! Seeded synthetic crowd scenes for tests, demos and smoke training.
//!
//! Heads are denser and smaller towards the top of the frame (a crude
//! perspective), with part of the crowd gathered in one cluster. Each head is
//! drawn as a soft dark blob over a shaded, slightly noisy background.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::density::Annotation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub heads: usize,
    /// Strength of the top-heavy density gradient (0 = uniform rows).
    pub gradient: f64,
    /// Fraction of heads placed in a single Gaussian cluster.
    pub cluster_fraction: f64,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, heads: usize) -> Self {
        SceneSpec {
            height,
            width,
            channels: 3,
            heads,
            gradient: 2.0,
            cluster_fraction: 0.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    /// `[1, C, H, W]` with values in `[0, 1]`.
    pub image: Tensor,
    pub annotation: Annotation,
}

pub fn generate_scene(spec: &SceneSpec, rng: &mut impl Rng) -> Result<Scene> {
    if spec.height == 0 || spec.width == 0 || spec.channels == 0 {
        return Err(Error::invalid("generate_scene", "scene dimensions must be positive"));
    }
    let (h, w) = (spec.height as f64, spec.width as f64);
    let mut heads = Vec::with_capacity(spec.heads);
    let clustered = (spec.heads as f64 * spec.cluster_fraction.clamp(0.0, 1.0)) as usize;
    let center = (rng.random_range(0.2..0.8) * w, rng.random_range(0.15..0.6) * h);
    let spread = Normal::new(0.0, 0.08 * h.min(w)).expect("positive spread");
    for i in 0..spec.heads {
        let (x, y) = if i < clustered {
            (center.0 + spread.sample(rng), center.1 + spread.sample(rng))
        } else {
            // inverse CDF of a density proportional to exp(-gradient * y / h)
            let u: f64 = rng.random();
            let t = if spec.gradient.abs() < 1e-9 {
                u
            } else {
                let g = spec.gradient;
                -libm::log(1.0 - u * (1.0 - libm::exp(-g))) / g
            };
            (rng.random::<f64>() * w, t * h)
        };
        heads.push((x.clamp(0.0, w - 1.0), y.clamp(0.0, h - 1.0)));
    }

    let mut img = Tensor::zeros(&[1, spec.channels, spec.height, spec.width]);
    let tint: Vec<f64> = (0..spec.channels).map(|_| rng.random_range(0.55..0.85)).collect();
    let noise = Normal::new(0.0, 0.02).expect("positive noise");
    let plane = spec.height * spec.width;
    {
        let data = img.data_mut();
        for c in 0..spec.channels {
            for r in 0..spec.height {
                let shade = tint[c] * (0.8 + 0.2 * r as f64 / h);
                for col in 0..spec.width {
                    data[c * plane + r * spec.width + col] = shade + noise.sample(rng);
                }
            }
        }
        for &(x, y) in &heads {
            let radius = 1.0 + 2.0 * y / h;
            let color: Vec<f64> = (0..spec.channels).map(|_| rng.random_range(0.05..0.3)).collect();
            let reach = libm::ceil(3.0 * radius) as isize;
            let (cr, cc) = (libm::round(y) as isize, libm::round(x) as isize);
            for r in (cr - reach).max(0)..(cr + reach + 1).min(spec.height as isize) {
                for col in (cc - reach).max(0)..(cc + reach + 1).min(spec.width as isize) {
                    let (dy, dx) = (r as f64 - y, col as f64 - x);
                    let d2 = dy * dy + dx * dx;
                    let a = libm::exp(-d2 / (2.0 * radius * radius));
                    for (c, &tint) in color.iter().enumerate().take(spec.channels) {
                        let idx = c * plane + r as usize * spec.width + col as usize;
                        data[idx] = data[idx] * (1.0 - a) + tint * a;
                    }
                }
            }
        }
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(Scene {
        image: img,
        annotation: Annotation::new(spec.height, spec.width, heads)?,
    })
}

/// `n` scenes whose head counts vary around `mean_heads` (±25%), fully determined by `seed`.
pub fn synthetic_set(
    n: usize,
    height: usize,
    width: usize,
    channels: usize,
    mean_heads: usize,
    seed: u64,
) -> Result<Vec<Scene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spread = mean_heads / 4;
            let heads = if n == 1 || spread == 0 {
                mean_heads
            } else {
                // symmetric offsets (division truncates toward zero) keep the mean exact
                let k = (n - 1) as isize;
                let offset = spread as isize * (2 * i as isize - k) / k;
                (mean_heads as isize + offset) as usize
            };
            let mut spec = SceneSpec::new(height, width, heads);
            spec.channels = channels;
            generate_scene(&spec, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_scenes_repeat() {
        let a = synthetic_set(3, 32, 40, 3, 12, 5).unwrap();
        let b = synthetic_set(3, 32, 40, 3, 12, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.annotation, y.annotation);
        }
        assert_eq!(a[0].image.shape(), &[1, 3, 32, 40]);
        assert!(a[0].image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn counts_average_to_mean() {
        let set = synthetic_set(5, 24, 24, 1, 20, 1).unwrap();
        let counts: Vec<usize> = set.iter().map(|s| s.annotation.count()).collect();
        assert_eq!(counts, [15, 18, 20, 22, 25]);
        assert!(set.iter().all(|s| s.annotation.validate().is_ok()));
    }
}
