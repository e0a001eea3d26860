//! Grayscale image grid composition for reconstruction sheets and traversal
//! strips.

/// Gap in pixels below and right of every cell.
pub const GRID_GAP: usize = 2;

/// Lay `images` out row-major into a grid. Every cell is `height + gap` by
/// `width + gap` with the image in its top-left corner and black gap pixels;
/// the result is exactly `rows * (height + gap)` by `cols * (width + gap)`.
/// Missing trailing cells stay black. Pixel values are clamped to [0, 1].
pub fn compose_grid(
    images: &[&[f64]],
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
    gap: usize,
) -> (usize, usize, Vec<f64>) {
    let cell_h = height + gap;
    let cell_w = width + gap;
    let grid_h = rows * cell_h;
    let grid_w = cols * cell_w;
    let mut out = vec![0.0; grid_h * grid_w];
    for (i, image) in images.iter().enumerate().take(rows * cols) {
        let r0 = (i / cols) * cell_h;
        let c0 = (i % cols) * cell_w;
        for y in 0..height {
            for x in 0..width {
                out[(r0 + y) * grid_w + (c0 + x)] = image[y * width + x].clamp(0.0, 1.0);
            }
        }
    }
    (grid_h, grid_w, out)
}
