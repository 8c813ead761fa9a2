//! Differentiable point splatting: pinhole projection, tiled rasterization
//! into bounded per-pixel fragment lists, front-to-back compositing and the
//! exact backward pass.

mod bench;
mod camera;
mod image_io;
mod project;
mod raster;
mod visibility;

pub use bench::{bench_render, bench_scene, BenchResult, REFERENCE_SECONDS_PER_FRAME};
pub use camera::{Camera, CameraFile};
pub use image_io::{load_gray_png, load_rgb_png, read_npy, save_gray_png, save_npy, save_rgb_png, write_npy};
pub use project::{project, project_var, screen_from_tensor, ScreenPoint, NEAR_PLANE};
pub use raster::{
    composite, exhaustive_fragments, rasterize, rasterize_tiled, rasterize_var, reference_composite, render_backward, RenderTarget,
    RenderVars, SplatFragment, N_Z, TILE,
};
pub use visibility::{dilate, mark_visibility, silhouette, DILATION_PX};
