use crate::error::{Error, Result};
use crate::image::Image;
use crate::relu_field::FeatureGrid;
use crate::renderer::{march_ray, march_ray_vjp, pixel_ray, RenderConfig};
use crate::scene_io::Camera;

/// Renders the full image seen by `camera`. Pixel `(u, v)` uses jitter stream
/// `v * width + u`, so any crop of this image equals the matching patch
/// render.
pub fn render_image(grid: &FeatureGrid, camera: &Camera, cfg: &RenderConfig) -> Image {
    let (w, h) = (camera.width as usize, camera.height as usize);
    render_window(grid, camera, cfg, [0, 0], [w, h])
}

/// Renders only the rays of the `size = (w, h)` window at `corner = (u, v)`.
pub fn render_patch_2d(
    grid: &FeatureGrid,
    camera: &Camera,
    cfg: &RenderConfig,
    corner: [usize; 2],
    size: [usize; 2],
) -> Result<Image> {
    check_window(camera, corner, size)?;
    Ok(render_window(grid, camera, cfg, corner, size))
}

fn render_window(
    grid: &FeatureGrid,
    camera: &Camera,
    cfg: &RenderConfig,
    corner: [usize; 2],
    size: [usize; 2],
) -> Image {
    let width = camera.width as usize;
    let aabb = *grid.aabb();
    let render_row = |row: usize, out: &mut [f32]| {
        let v = corner[1] + row;
        for col in 0..size[0] {
            let u = corner[0] + col;
            let ray = pixel_ray(camera, u, v, &aabb);
            let rgb = march_ray(grid, &ray, cfg, (v * width + u) as u64);
            for c in 0..3 {
                out[col * 3 + c] = rgb[c] as f32;
            }
        }
    };
    let mut data = vec![0f32; size[0] * size[1] * 3];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(size[0] * 3)
            .enumerate()
            .for_each(|(row, out)| render_row(row, out));
    }
    #[cfg(not(feature = "parallel"))]
    for (row, out) in data.chunks_mut(size[0] * 3).enumerate() {
        render_row(row, out);
    }
    Image::from_vec(size[0], size[1], data).expect("window buffer sized above")
}

/// Renders a patch and back-propagates `d_patch = ∂L/∂patch` into `grad`
/// (layout of `grid.data()`). Returns the rendered patch.
pub fn render_patch_vjp(
    grid: &FeatureGrid,
    camera: &Camera,
    cfg: &RenderConfig,
    corner: [usize; 2],
    d_patch: &Image,
    grad: &mut [f64],
) -> Result<Image> {
    let size = [d_patch.width(), d_patch.height()];
    check_window(camera, corner, size)?;
    if grad.len() != grid.data().len() {
        return Err(Error::ShapeMismatch("gradient buffer does not match grid".into()));
    }
    let width = camera.width as usize;
    let aabb = *grid.aabb();
    let mut out = Image::new(size[0], size[1]);
    // sequential accumulation keeps the reduction order fixed
    for row in 0..size[1] {
        for col in 0..size[0] {
            let (u, v) = (corner[0] + col, corner[1] + row);
            let ray = pixel_ray(camera, u, v, &aabb);
            let up = d_patch.pixel(col, row);
            let rgb = march_ray_vjp(
                grid,
                &ray,
                cfg,
                (v * width + u) as u64,
                |_| [up[0] as f64, up[1] as f64, up[2] as f64],
                grad,
            );
            out.set_pixel(col, row, rgb.map(|x| x as f32));
        }
    }
    Ok(out)
}

fn check_window(camera: &Camera, corner: [usize; 2], size: [usize; 2]) -> Result<()> {
    if size[0] == 0
        || size[1] == 0
        || corner[0] + size[0] > camera.width as usize
        || corner[1] + size[1] > camera.height as usize
    {
        return Err(Error::OutOfBounds(format!(
            "patch at {corner:?} of size {size:?} exceeds the {}x{} image",
            camera.width, camera.height
        )));
    }
    Ok(())
}
