use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::camera::Camera;
use super::project::project;
use super::raster::rasterize;
use crate::linalg::Vec3;
use crate::{Error, Real, Result};

/// Reported inference time of the reference GPU implementation, for context only.
pub const REFERENCE_SECONDS_PER_FRAME: f64 = 0.018;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub points: usize,
    pub resolution: usize,
    pub threads: usize,
    pub frames: usize,
    pub ms_per_frame: f64,
}

/// Hand-sized cloud: points near a 10 cm sphere shell seen from 40 cm, with
/// a splat radius close to the mean point spacing.
pub fn bench_scene<T: Real>(points: usize, resolution: usize, seed: u64) -> Result<(Vec<Vec3<T>>, Vec<Vec3<T>>, T, Camera<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec3<T>> = (0..points)
        .map(|_| {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            let r = 0.1 * rng.gen_range(0.9..1.0);
            d.map(|v| T::lit(v * r))
        })
        .collect();
    let colors = (0..points).map(|_| [T::lit(rng.gen()), T::lit(rng.gen()), T::lit(rng.gen())]).collect();
    let spacing = (4.0 * std::f64::consts::PI * 0.01 / points.max(1) as f64).sqrt();
    let focal = T::lit(resolution as f64 * 1.2);
    let cam = Camera::look_at([T::zero(), T::zero(), T::lit(-0.4)], [T::zero(); 3], [T::zero(), T::one(), T::zero()], focal, resolution, resolution)?;
    Ok((pts, colors, T::lit(spacing), cam))
}

/// Mean forward render time (projection plus rasterization) on a pool of `threads` workers.
pub fn bench_render<T: Real>(points: usize, resolution: usize, threads: usize, frames: usize, seed: u64) -> Result<BenchResult> {
    let (pts, colors, radius, cam) = bench_scene::<T>(points, resolution, seed)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| Error::Config(e.to_string()))?;
    let frames = frames.max(1);
    pool.install(|| -> Result<BenchResult> {
        let warm = project(&pts, radius, &cam);
        rasterize(&warm, &colors, resolution, resolution)?;
        let start = Instant::now();
        for _ in 0..frames {
            let s = project(&pts, radius, &cam);
            let t = rasterize(&s, &colors, resolution, resolution)?;
            std::hint::black_box(&t);
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / frames as f64;
        Ok(BenchResult { points, resolution, threads: threads.max(1), frames, ms_per_frame: ms })
    })
}
