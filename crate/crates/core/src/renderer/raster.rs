use std::sync::Arc;

use rayon::prelude::*;

use super::project::{screen_from_tensor, ScreenPoint};
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::linalg::Vec3;
use crate::{Error, Real, Result};

/// Maximum number of fragments kept per pixel.
pub const N_Z: usize = 8;
/// Default tile edge in pixels.
pub const TILE: usize = 16;

/// One splat overlapping one pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatFragment<T> {
    pub point_index: u32,
    pub depth: T,
    /// Center-to-center distance in pixels.
    pub distance: T,
    pub radius: T,
    pub alpha: T,
}

impl<T: Real> SplatFragment<T> {
    /// Fragment of `s` at pixel `(px, py)`, or `None` unless `d < r`.
    pub fn at(index: usize, s: &ScreenPoint<T>, px: usize, py: usize) -> Option<Self> {
        let dx = T::lit(px as f64) - s.x;
        let dy = T::lit(py as f64) - s.y;
        let d2 = dx * dx + dy * dy;
        let r2 = s.r * s.r;
        (d2 < r2).then(|| Self { point_index: index as u32, depth: s.z, distance: d2.sqrt(), radius: s.r, alpha: T::one() - d2 / r2 })
    }

    fn before(&self, other: &Self) -> bool {
        self.depth < other.depth || (self.depth == other.depth && self.point_index < other.point_index)
    }
}

/// Point indices binned by tile, CSR layout.
#[derive(Clone, Debug)]
struct Bins {
    tile: usize,
    tiles_x: usize,
    tiles_y: usize,
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl Bins {
    fn tile_items(&self, t: usize) -> &[u32] {
        &self.items[self.offsets[t]..self.offsets[t + 1]]
    }
}

/// Inclusive pixel range with `|p − c| < r`, clipped to `[0, n)`.
fn pixel_span<T: Real>(c: T, r: T, n: usize) -> Option<(usize, usize)> {
    let lo = ((c - r).floor() + T::one()).max(T::zero());
    let hi = ((c + r).ceil() - T::one()).min(T::lit(n as f64 - 1.0));
    if lo > hi {
        return None;
    }
    Some((lo.to_usize()?, hi.to_usize()?))
}

fn splat_box<T: Real>(s: &ScreenPoint<T>, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    if !s.is_visible() {
        return None;
    }
    let (x0, x1) = pixel_span(s.x, s.r, width)?;
    let (y0, y1) = pixel_span(s.y, s.r, height)?;
    Some((x0, x1, y0, y1))
}

fn bin_points<T: Real>(screen: &[ScreenPoint<T>], width: usize, height: usize, tile: usize) -> Bins {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let boxes: Vec<_> = screen.iter().map(|s| splat_box(s, width, height)).collect();
    let mut counts = vec![0usize; tiles_x * tiles_y + 1];
    for b in boxes.iter().flatten() {
        for ty in b.2 / tile..=b.3 / tile {
            for tx in b.0 / tile..=b.1 / tile {
                counts[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let offsets = counts.clone();
    let mut items = vec![0u32; *counts.last().unwrap_or(&0)];
    for (i, b) in boxes.iter().enumerate() {
        let Some(b) = b else { continue };
        for ty in b.2 / tile..=b.3 / tile {
            for tx in b.0 / tile..=b.1 / tile {
                let t = ty * tiles_x + tx;
                items[counts[t]] = i as u32;
                counts[t] += 1;
            }
        }
    }
    Bins { tile, tiles_x, tiles_y, offsets, items }
}

/// Rendered image, silhouette and the retained per-pixel fragment lists.
#[derive(Clone, Debug)]
pub struct RenderTarget<T> {
    pub width: usize,
    pub height: usize,
    /// Row-major `H·W` colors.
    pub rgb: Vec<Vec3<T>>,
    /// Accumulated alpha `1 − Π(1 − a_i)`, the rendered silhouette.
    pub alpha: Vec<T>,
    counts: Vec<u8>,
    fragments: Vec<SplatFragment<T>>,
    bins: Bins,
}

impl<T: Real> RenderTarget<T> {
    /// Depth-sorted fragments of pixel `(x, y)`.
    pub fn fragments(&self, x: usize, y: usize) -> &[SplatFragment<T>] {
        let p = y * self.width + x;
        &self.fragments[p * N_Z..p * N_Z + self.counts[p] as usize]
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb_tensor(&self) -> Tensor<T> {
        Tensor::from_vec3s(&self.rgb)
    }
}

struct TileOut<T> {
    counts: Vec<u8>,
    fragments: Vec<SplatFragment<T>>,
    rgb: Vec<Vec3<T>>,
    alpha: Vec<T>,
}

fn insert<T: Real>(list: &mut [SplatFragment<T>], count: &mut u8, f: SplatFragment<T>) {
    let n = *count as usize;
    let pos = list[..n].iter().position(|e| f.before(e)).unwrap_or(n);
    if pos == N_Z {
        return;
    }
    let end = (n + 1).min(N_Z);
    list.copy_within(pos..end - 1, pos + 1);
    list[pos] = f;
    *count = end as u8;
}

/// Front-to-back composite of a depth-sorted list: `(Σ c_i a_i Π_{j<i}(1 − a_j), 1 − Π(1 − a_i))`.
pub fn composite<T: Real>(fragments: &[SplatFragment<T>], colors: &[Vec3<T>]) -> (Vec3<T>, T) {
    let mut c = [T::zero(); 3];
    let mut trans = T::one();
    for f in fragments {
        let w = f.alpha * trans;
        let col = colors[f.point_index as usize];
        for k in 0..3 {
            c[k] += col[k] * w;
        }
        trans *= T::one() - f.alpha;
    }
    (c, T::one() - trans)
}

fn tile_bounds(bins: &Bins, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = t % bins.tiles_x;
    let ty = t / bins.tiles_x;
    let x0 = tx * bins.tile;
    let y0 = ty * bins.tile;
    (x0, (x0 + bins.tile).min(width), y0, (y0 + bins.tile).min(height))
}

fn render_tile<T: Real>(bins: &Bins, t: usize, screen: &[ScreenPoint<T>], colors: &[Vec3<T>], width: usize, height: usize) -> TileOut<T> {
    let (x0, x1, y0, y1) = tile_bounds(bins, t, width, height);
    let tw = x1 - x0;
    let npx = tw * (y1 - y0);
    let mut counts = vec![0u8; npx];
    let mut fragments = vec![SplatFragment::default(); npx * N_Z];
    for &i in bins.tile_items(t) {
        let s = &screen[i as usize];
        let Some((bx0, bx1, by0, by1)) = splat_box(s, width, height) else { continue };
        for py in by0.max(y0)..=by1.min(y1 - 1) {
            for px in bx0.max(x0)..=bx1.min(x1 - 1) {
                if let Some(f) = SplatFragment::at(i as usize, s, px, py) {
                    let l = (py - y0) * tw + (px - x0);
                    insert(&mut fragments[l * N_Z..(l + 1) * N_Z], &mut counts[l], f);
                }
            }
        }
    }
    let mut rgb = Vec::with_capacity(npx);
    let mut alpha = Vec::with_capacity(npx);
    for l in 0..npx {
        let (c, a) = composite(&fragments[l * N_Z..l * N_Z + counts[l] as usize], colors);
        rgb.push(c);
        alpha.push(a);
    }
    TileOut { counts, fragments, rgb, alpha }
}

/// Tiled splat rasterization with per-pixel lists of the `N_Z` nearest
/// fragments, ordered by depth then point index. Black, transparent background.
pub fn rasterize<T: Real>(screen: &[ScreenPoint<T>], colors: &[Vec3<T>], width: usize, height: usize) -> Result<RenderTarget<T>> {
    rasterize_tiled(screen, colors, width, height, TILE)
}

/// [`rasterize`] with an explicit tile edge; the image does not depend on it.
pub fn rasterize_tiled<T: Real>(
    screen: &[ScreenPoint<T>],
    colors: &[Vec3<T>],
    width: usize,
    height: usize,
    tile: usize,
) -> Result<RenderTarget<T>> {
    if screen.len() != colors.len() {
        return Err(Error::ShapeMismatch { op: "rasterize", lhs: vec![screen.len(), 4], rhs: vec![colors.len(), 3] });
    }
    if tile == 0 || width == 0 || height == 0 {
        return Err(Error::InvalidShape { op: "rasterize", shape: vec![height, width, tile], reason: "empty image or tile".into() });
    }
    let bins = bin_points(screen, width, height, tile);
    let tiles: Vec<TileOut<T>> =
        (0..bins.tiles_x * bins.tiles_y).into_par_iter().map(|t| render_tile(&bins, t, screen, colors, width, height)).collect();

    let n = width * height;
    let mut target = RenderTarget {
        width,
        height,
        rgb: vec![[T::zero(); 3]; n],
        alpha: vec![T::zero(); n],
        counts: vec![0; n],
        fragments: vec![SplatFragment::default(); n * N_Z],
        bins,
    };
    for (t, out) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tile_bounds(&target.bins, t, width, height);
        let tw = x1 - x0;
        for y in y0..y1 {
            let g = y * width + x0;
            let l = (y - y0) * tw;
            target.rgb[g..g + tw].copy_from_slice(&out.rgb[l..l + tw]);
            target.alpha[g..g + tw].copy_from_slice(&out.alpha[l..l + tw]);
            target.counts[g..g + tw].copy_from_slice(&out.counts[l..l + tw]);
            target.fragments[g * N_Z..(g + tw) * N_Z].copy_from_slice(&out.fragments[l * N_Z..(l + tw) * N_Z]);
        }
    }
    Ok(target)
}

/// Every fragment of pixel `(px, py)`, unbounded and unsorted.
pub fn exhaustive_fragments<T: Real>(screen: &[ScreenPoint<T>], px: usize, py: usize) -> Vec<SplatFragment<T>> {
    screen
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_visible())
        .filter_map(|(i, s)| SplatFragment::at(i, s, px, py))
        .collect()
}

/// Naive composite of an unbounded fragment list: sorts by depth and point
/// index, then composites every fragment. Correctness oracle for [`rasterize`].
pub fn reference_composite<T: Real>(fragments: &[SplatFragment<T>], colors: &[Vec3<T>]) -> (Vec3<T>, T) {
    let mut sorted = fragments.to_vec();
    sorted.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap_or(std::cmp::Ordering::Equal).then(a.point_index.cmp(&b.point_index)));
    composite(&sorted, colors)
}

/// Per-point gradients: screen rows `[x, y, z, r]` (no depth gradient) and colors.
struct PointGrads<T> {
    screen: Vec<T>,
    colors: Option<Vec<T>>,
}

fn backward_pass<T: Real>(
    target: &RenderTarget<T>,
    screen: &[ScreenPoint<T>],
    colors: &[Vec3<T>],
    grad_rgb: Option<&Tensor<T>>,
    grad_alpha: Option<&Tensor<T>>,
) -> PointGrads<T> {
    let bins = &target.bins;
    let (w, h) = (target.width, target.height);
    let want_colors = grad_rgb.is_some();
    let per_tile: Vec<(Vec<[T; 3]>, Vec<Vec3<T>>)> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|t| {
            let items = bins.tile_items(t);
            let mut gs = vec![[T::zero(); 3]; items.len()];
            let mut gc = vec![[T::zero(); 3]; if want_colors { items.len() } else { 0 }];
            let (x0, x1, y0, y1) = tile_bounds(bins, t, w, h);
            let mut trans = [T::zero(); N_Z];
            for py in y0..y1 {
                for px in x0..x1 {
                    let frags = target.fragments(px, py);
                    if frags.is_empty() {
                        continue;
                    }
                    let p = py * w + px;
                    let g_c: Vec3<T> = grad_rgb.map_or([T::zero(); 3], |g| [g.at(p, 0), g.at(p, 1), g.at(p, 2)]);
                    let g_a = grad_alpha.map_or(T::zero(), |g| g.at(p, 0));
                    if g_c.iter().all(|v| v.is_zero()) && g_a.is_zero() {
                        continue;
                    }
                    let mut tr = T::one();
                    for (k, f) in frags.iter().enumerate() {
                        trans[k] = tr;
                        tr *= T::one() - f.alpha;
                    }
                    // Back-to-front: `rest` is the color composited behind fragment k,
                    // `behind` the transmittance of everything behind it.
                    let mut rest = [T::zero(); 3];
                    let mut behind = T::one();
                    for (k, f) in frags.iter().enumerate().rev() {
                        let i = f.point_index;
                        let local = items.binary_search(&i).expect("fragment point is binned in its tile");
                        let mut d_alpha = g_a * trans[k] * behind;
                        if want_colors {
                            let c = colors[i as usize];
                            let wk = f.alpha * trans[k];
                            for ch in 0..3 {
                                gc[local][ch] += g_c[ch] * wk;
                                d_alpha += g_c[ch] * trans[k] * (c[ch] - rest[ch]);
                            }
                            for ch in 0..3 {
                                rest[ch] = c[ch] * f.alpha + (T::one() - f.alpha) * rest[ch];
                            }
                        }
                        behind *= T::one() - f.alpha;

                        let s = &screen[i as usize];
                        let dx = T::lit(px as f64) - s.x;
                        let dy = T::lit(py as f64) - s.y;
                        let r2 = s.r * s.r;
                        let two = T::lit(2.0);
                        gs[local][0] += d_alpha * two * dx / r2;
                        gs[local][1] += d_alpha * two * dy / r2;
                        gs[local][2] += d_alpha * two * (dx * dx + dy * dy) / (r2 * s.r);
                    }
                }
            }
            (gs, gc)
        })
        .collect();

    let n = screen.len();
    let mut gscreen = vec![T::zero(); n * 4];
    let mut gcol = if want_colors { Some(vec![T::zero(); n * 3]) } else { None };
    for (t, (gs, gc)) in per_tile.into_iter().enumerate() {
        for (local, &i) in bins.tile_items(t).iter().enumerate() {
            let i = i as usize;
            gscreen[i * 4] += gs[local][0];
            gscreen[i * 4 + 1] += gs[local][1];
            gscreen[i * 4 + 3] += gs[local][2];
            if let Some(gcol) = gcol.as_mut() {
                for ch in 0..3 {
                    gcol[i * 3 + ch] += gc[local][ch];
                }
            }
        }
    }
    PointGrads { screen: gscreen, colors: gcol }
}

/// Gradients of `Σ grad_rgb·C + Σ grad_alpha·M` with respect to per-point
/// screen rows `[x, y, z, r]` and colors.
pub fn render_backward<T: Real>(
    target: &RenderTarget<T>,
    screen: &[ScreenPoint<T>],
    colors: &[Vec3<T>],
    grad_rgb: &Tensor<T>,
    grad_alpha: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = target.num_pixels();
    if grad_rgb.len() != n * 3 || grad_alpha.len() != n {
        return Err(Error::ShapeMismatch { op: "render_backward", lhs: vec![n, 4], rhs: vec![grad_rgb.len(), grad_alpha.len()] });
    }
    let g = backward_pass(target, screen, colors, Some(&grad_rgb.reshaped(&[n, 3])?), Some(&grad_alpha.reshaped(&[n, 1])?));
    Ok((Tensor::from_rows(screen.len(), 4, g.screen), Tensor::from_rows(colors.len(), 3, g.colors.unwrap_or_default())))
}

struct RgbOp<T> {
    target: Arc<RenderTarget<T>>,
}

impl<T: Real> CustomOp<T> for RgbOp<T> {
    fn name(&self) -> &str {
        "rasterize_rgb"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let screen = screen_from_tensor(inputs[0])?;
        let colors = inputs[1].to_vec3s();
        let pg = backward_pass(&self.target, &screen, &colors, Some(g), None);
        Ok(vec![
            Some(Tensor::from_rows(screen.len(), 4, pg.screen)),
            Some(Tensor::from_rows(colors.len(), 3, pg.colors.unwrap_or_default())),
        ])
    }
}

struct AlphaOp<T> {
    target: Arc<RenderTarget<T>>,
}

impl<T: Real> CustomOp<T> for AlphaOp<T> {
    fn name(&self) -> &str {
        "rasterize_alpha"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let screen = screen_from_tensor(inputs[0])?;
        let pg = backward_pass(&self.target, &screen, &[], None, Some(g));
        Ok(vec![Some(Tensor::from_rows(screen.len(), 4, pg.screen))])
    }
}

/// Tape nodes of one rendered image.
#[derive(Clone, Debug)]
pub struct RenderVars<T> {
    /// `H·W × 3` colors.
    pub rgb: Var,
    /// `H·W × 1` accumulated alpha.
    pub alpha: Var,
    pub target: Arc<RenderTarget<T>>,
}

/// Differentiable [`rasterize`] of `N×4` screen rows and `N×3` colors.
pub fn rasterize_var<T: Real>(tape: &mut Tape<T>, screen: Var, colors: Var, width: usize, height: usize) -> Result<RenderVars<T>> {
    let s = screen_from_tensor(tape.value(screen))?;
    let c = tape.value(colors);
    if c.shape().len() != 2 || c.cols() != 3 {
        return Err(Error::InvalidShape { op: "rasterize", shape: c.shape().to_vec(), reason: "colors must be N×3".into() });
    }
    let target = Arc::new(rasterize(&s, &c.to_vec3s(), width, height)?);
    let n = width * height;
    let rgb = tape.custom(&[screen, colors], target.rgb_tensor(), Box::new(RgbOp { target: target.clone() }))?;
    let alpha = tape.custom(&[screen], Tensor::from_rows(n, 1, target.alpha.clone()), Box::new(AlphaOp { target: target.clone() }))?;
    Ok(RenderVars { rgb, alpha, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check_multi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(x: f64, y: f64, z: f64, r: f64) -> ScreenPoint<f64> {
        ScreenPoint { x, y, z, r }
    }

    #[test]
    fn single_centered_splat_is_opaque() {
        let t = rasterize(&[sp(3.0, 2.0, 1.0, 1.5)], &[[0.2, 0.4, 0.6]], 8, 8).unwrap();
        let p = 2 * 8 + 3;
        assert_eq!(t.rgb[p], [0.2, 0.4, 0.6]);
        assert_eq!(t.alpha[p], 1.0);
        assert_eq!(t.alpha[0], 0.0);
        assert_eq!(t.rgb[0], [0.0; 3]);
    }

    #[test]
    fn two_fragment_example() {
        let frags = [
            SplatFragment { point_index: 1, depth: 2.0, distance: 0.0, radius: 1.0, alpha: 0.8 },
            SplatFragment { point_index: 0, depth: 1.0, distance: 0.0, radius: 1.0, alpha: 0.5 },
        ];
        let (c, a) = reference_composite::<f64>(&frags, &[[1.0; 3], [0.0; 3]]);
        assert_eq!(c, [0.5; 3]);
        assert!((a - 0.9).abs() < 1e-15);
    }

    #[test]
    fn edge_of_circle_contributes_nothing() {
        let s = sp(2.0, 2.0, 1.0, 1.0);
        assert!(SplatFragment::at(0, &s, 3, 2).is_none());
        let t = rasterize(&[s], &[[1.0; 3]], 5, 5).unwrap();
        assert_eq!(t.alpha[2 * 5 + 3], 0.0);
    }

    #[test]
    fn empty_and_culled_scenes_render_background() {
        let t = rasterize::<f64>(&[], &[], 4, 4).unwrap();
        assert!(t.alpha.iter().all(|&a| a == 0.0));
        let t = rasterize(&[sp(1.0, 1.0, -1.0, 2.0)], &[[1.0; 3]], 4, 4).unwrap();
        assert!(t.alpha.iter().all(|&a| a == 0.0));
        let (c, a) = reference_composite::<f64>(&[], &[]);
        assert_eq!((c, a), ([0.0; 3], 0.0));
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize, rmax: f64) -> (Vec<ScreenPoint<f64>>, Vec<Vec3<f64>>) {
        let s = (0..n)
            .map(|_| sp(rng.gen_range(-2.0..w as f64 + 1.0), rng.gen_range(-2.0..h as f64 + 1.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..rmax)))
            .collect();
        let c = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        (s, c)
    }

    #[test]
    fn matches_reference_and_keeps_sorted_bounded_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (s, c) = random_scene(&mut rng, 40, 20, 13, 5.0);
            let t = rasterize(&s, &c, 20, 13).unwrap();
            for y in 0..13 {
                for x in 0..20 {
                    let mut all = exhaustive_fragments(&s, x, y);
                    let kept = t.fragments(x, y);
                    assert_eq!(kept.len(), all.len().min(N_Z));
                    assert!(kept.windows(2).all(|w| w[0].before(&w[1])));
                    all.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.point_index.cmp(&b.point_index)));
                    all.truncate(N_Z);
                    let (rc, ra) = reference_composite(&all, &c);
                    let p = y * 20 + x;
                    for k in 0..3 {
                        assert!((rc[k] - t.rgb[p][k]).abs() < 1e-12);
                    }
                    assert!((ra - t.alpha[p]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn image_is_independent_of_tile_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (s, c) = random_scene(&mut rng, 300, 37, 29, 6.0);
        let a = rasterize_tiled(&s, &c, 37, 29, 16).unwrap();
        for tile in [1, 5, 8, 64] {
            let b = rasterize_tiled(&s, &c, 37, 29, tile).unwrap();
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.alpha, b.alpha);
        }
    }

    #[test]
    fn single_opaque_fragment_gradients() {
        let s = [sp(1.0, 1.0, 1.0, 1.5)];
        let c = [[0.3, 0.6, 0.9]];
        let t = rasterize(&s, &c, 3, 3).unwrap();
        let p = 4;
        let mut g = Tensor::zeros(&[9, 3]);
        g.data_mut()[p * 3] = 1.0;
        let (gs, gc) = render_backward(&t, &s, &c, &g, &Tensor::zeros(&[9, 1])).unwrap();
        // ∂c_pix/∂c₁ = a₁ = 1 at the center pixel.
        assert_eq!(gc.row(0), &[1.0, 0.0, 0.0]);
        // d = 0 at the center: no positional gradient from that pixel.
        assert_eq!(gs.row(0), &[0.0; 4]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (s, c) = random_scene(&mut rng, 30, 8, 8, 4.0);
        let t = rasterize(&s, &c, 8, 8).unwrap();
        let (gs, gc) = render_backward(&t, &s, &c, &Tensor::zeros(&[64, 3]), &Tensor::zeros(&[64, 1])).unwrap();
        assert!(gs.data().iter().chain(gc.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (s, c) = random_scene(&mut rng, 20, 8, 8, 4.0);
        let screen = crate::renderer::project::screen_to_tensor(&s);
        let colors = Tensor::from_vec3s(&c);
        let wr = Tensor::from_rows(64, 3, (0..192).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect());
        let wa = Tensor::from_rows(64, 1, (0..64).map(|i| ((i * 5 % 7) as f64 - 3.0) / 3.0).collect());
        let report = finite_difference_check_multi(
            |tape, v| {
                let out = rasterize_var(tape, v[0], v[1], 8, 8)?;
                let a = tape.constant(wr.clone())?;
                let b = tape.constant(wa.clone())?;
                let x = tape.mul(out.rgb, a)?;
                let y = tape.mul(out.alpha, b)?;
                let x = tape.sum(x)?;
                let y = tape.sum(y)?;
                tape.add(x, y)
            },
            &[screen, colors],
            1e-6,
        )
        .unwrap();
        assert!(report.max_error() < 1e-4, "{:?}", report.per_input);
    }

    #[test]
    fn color_energy_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (s, c) = random_scene(&mut rng, 60, 16, 16, 5.0);
            let t = rasterize(&s, &c, 16, 16).unwrap();
            let cmax = c.iter().flatten().copied().fold(0.0, f64::max);
            for (rgb, a) in t.rgb.iter().zip(&t.alpha) {
                assert!((0.0..=1.0).contains(a));
                assert!(rgb.iter().all(|&v| v <= cmax + 1e-12 && v >= 0.0));
            }
        }
    }
}
