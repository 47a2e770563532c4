//! Grid geometry over the visual field: cells, bounding boxes, and
//! box-to-cell overlap resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid cell coordinate, `x` along columns and `y` along rows.
///
/// Ordering is row-major: `(y, x)` lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((x, y): (usize, usize)) -> Self {
        Self { x, y }
    }
}

impl From<Cell> for (usize, usize) {
    fn from(c: Cell) -> Self {
        (c.x, c.y)
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

/// Partition of an image into a fixed grid of cells.
///
/// Cell dimensions are real-valued (`image size / grid size`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub image_width: f64,
    pub image_height: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

impl GridGeometry {
    pub fn new(image_width: f64, image_height: f64, grid_cols: usize, grid_rows: usize) -> Result<Self> {
        if !(image_width > 0.0 && image_height > 0.0)
            || !image_width.is_finite()
            || !image_height.is_finite()
        {
            return Err(Error::input("image dimensions must be positive and finite"));
        }
        if grid_cols == 0 || grid_rows == 0 {
            return Err(Error::input("grid dimensions must be at least 1x1"));
        }
        Ok(Self {
            image_width,
            image_height,
            grid_cols,
            grid_rows,
        })
    }

    pub fn cell_width(&self) -> f64 {
        self.image_width / self.grid_cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.image_height / self.grid_rows as f64
    }

    pub fn num_cells(&self) -> usize {
        self.grid_cols * self.grid_rows
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.grid_cols && cell.y < self.grid_rows
    }

    /// Row-major index of a cell.
    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell));
        cell.y * self.grid_cols + cell.x
    }

    pub fn cell_at_index(&self, index: usize) -> Cell {
        debug_assert!(index < self.num_cells());
        Cell::new(index % self.grid_cols, index / self.grid_cols)
    }

    /// Iterates cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(|i| self.cell_at_index(i))
    }

    /// Pixel coordinates of the center of a cell.
    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.x as f64 + 0.5) * self.cell_width(),
            (cell.y as f64 + 0.5) * self.cell_height(),
        )
    }

    /// Rectangle `(left, top, width, height)` of a cell in pixels.
    pub fn cell_rect(&self, cell: Cell) -> (f64, f64, f64, f64) {
        (
            cell.x as f64 * self.cell_width(),
            cell.y as f64 * self.cell_height(),
            self.cell_width(),
            self.cell_height(),
        )
    }

    /// Half of the image diagonal; the normalization scale for focal
    /// distances.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.image_width * self.image_width + self.image_height * self.image_height).sqrt()
    }
}

/// An axis-aligned rectangle in pixel coordinates.
///
/// Serialized as `[left, top, width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        if ![left, top, width, height].iter().all(|v| v.is_finite()) {
            return Err(Error::input("bounding box fields must be finite"));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::input("bounding box must have positive extent"));
        }
        Ok(Self {
            left,
            top,
            width,
            height,
        })
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + 0.5 * self.width, self.top + 0.5 * self.height)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Intersection with the image rectangle; `None` when empty.
    pub fn clipped(&self, image_width: f64, image_height: f64) -> Option<BoundingBox> {
        let left = self.left.max(0.0);
        let top = self.top.max(0.0);
        let right = self.right().min(image_width);
        let bottom = self.bottom().min(image_height);
        if right > left && bottom > top {
            Some(BoundingBox {
                left,
                top,
                width: right - left,
                height: bottom - top,
            })
        } else {
            None
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.left, b.top, b.width, b.height]
    }
}

/// Cells whose rectangle has a positive-area intersection with `bbox`,
/// in row-major order. The box is clipped to the image first.
pub fn cells_overlapped(bbox: &BoundingBox, geometry: &GridGeometry) -> Vec<Cell> {
    cells_overlapped_with_threshold(bbox, geometry, 0.0)
}

/// Like [`cells_overlapped`], keeping only cells whose intersection area
/// exceeds `min_fraction` of the cell area. `min_fraction = 0` keeps every
/// cell with strictly positive overlap.
pub fn cells_overlapped_with_threshold(
    bbox: &BoundingBox,
    geometry: &GridGeometry,
    min_fraction: f64,
) -> Vec<Cell> {
    let Some(b) = bbox.clipped(geometry.image_width, geometry.image_height) else {
        return Vec::new();
    };
    let cw = geometry.cell_width();
    let ch = geometry.cell_height();
    let min_area = min_fraction * cw * ch;

    let x0 = ((b.left / cw).floor() as usize).min(geometry.grid_cols - 1);
    let x1 = (((b.right() / cw).ceil() as usize).max(1) - 1).min(geometry.grid_cols - 1);
    let y0 = ((b.top / ch).floor() as usize).min(geometry.grid_rows - 1);
    let y1 = (((b.bottom() / ch).ceil() as usize).max(1) - 1).min(geometry.grid_rows - 1);

    let mut cells = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let cell = Cell::new(x, y);
            let (cl, ct, _, _) = geometry.cell_rect(cell);
            let w = (b.right().min(cl + cw) - b.left.max(cl)).max(0.0);
            let h = (b.bottom().min(ct + ch) - b.top.max(ct)).max(0.0);
            let area = w * h;
            if area > min_area {
                cells.push(cell);
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom_10x10() -> GridGeometry {
        GridGeometry::new(640.0, 480.0, 10, 10).unwrap()
    }

    #[test]
    fn geometry_validation() {
        assert!(GridGeometry::new(640.0, 480.0, 0, 10).is_err());
        assert!(GridGeometry::new(0.0, 480.0, 10, 10).is_err());
        assert!(GridGeometry::new(640.0, 480.0, 1, 1).is_ok());
    }

    #[test]
    fn cell_centers_inside_image() {
        let g = geom_10x10();
        for cell in g.cells() {
            let (cx, cy) = g.cell_center(cell);
            assert!(cx > 0.0 && cx < g.image_width);
            assert!(cy > 0.0 && cy < g.image_height);
        }
    }

    #[test]
    fn row_major_indexing_round_trips() {
        let g = geom_10x10();
        for (i, cell) in g.cells().enumerate() {
            assert_eq!(g.index(cell), i);
            assert_eq!(g.cell_at_index(i), cell);
        }
    }

    #[test]
    fn cell_ordering_is_row_major() {
        assert!(Cell::new(9, 0) < Cell::new(0, 1));
        assert!(Cell::new(1, 2) < Cell::new(2, 2));
    }

    #[test]
    fn bbox_validation() {
        assert!(BoundingBox::new(0.0, 0.0, 10.0, 5.0).is_ok());
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 10.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn overlap_single_cell() {
        let g = geom_10x10();
        // Strictly inside cell (2, 3): x in [128, 192), y in [144, 192).
        let b = BoundingBox::new(130.0, 150.0, 20.0, 20.0).unwrap();
        assert_eq!(cells_overlapped(&b, &g), vec![Cell::new(2, 3)]);
    }

    #[test]
    fn overlap_full_image() {
        let g = geom_10x10();
        let b = BoundingBox::new(0.0, 0.0, 640.0, 480.0).unwrap();
        assert_eq!(cells_overlapped(&b, &g).len(), 100);
    }

    #[test]
    fn overlap_straddles_boundary_by_one_pixel() {
        let g = geom_10x10();
        // Vertical boundary between columns 4 and 5 is at x = 320.
        let b = BoundingBox::new(300.0, 150.0, 21.0, 10.0).unwrap();
        let cells = cells_overlapped(&b, &g);
        // Rectangle-intersection oracle over every cell of the grid.
        let expected: Vec<Cell> = g
            .cells()
            .filter(|&c| {
                let (cl, ct, cw, ch) = g.cell_rect(c);
                let w = (b.right().min(cl + cw) - b.left.max(cl)).max(0.0);
                let h = (b.bottom().min(ct + ch) - b.top.max(ct)).max(0.0);
                w * h > 0.0
            })
            .collect();
        assert_eq!(cells, expected);
        assert!(cells.contains(&Cell::new(4, 3)));
        assert!(cells.contains(&Cell::new(5, 3)));
    }

    #[test]
    fn overlap_excludes_zero_area_touch() {
        let g = geom_10x10();
        // Box ends exactly on the x = 320 boundary: column 5 touches with
        // zero area and must be excluded.
        let b = BoundingBox::new(280.0, 150.0, 40.0, 10.0).unwrap();
        let cells = cells_overlapped(&b, &g);
        assert!(cells.contains(&Cell::new(4, 3)));
        assert!(!cells.contains(&Cell::new(5, 3)));
    }

    #[test]
    fn overlap_threshold_filters_slivers() {
        let g = geom_10x10();
        // 1 px into column 5 is far below half a cell.
        let b = BoundingBox::new(300.0, 150.0, 21.0, 10.0).unwrap();
        let cells = cells_overlapped_with_threshold(&b, &g, 0.5);
        assert!(cells.is_empty());
    }

    #[test]
    fn overlap_outside_image_is_empty() {
        let g = geom_10x10();
        let b = BoundingBox::new(700.0, 500.0, 10.0, 10.0).unwrap();
        assert!(cells_overlapped(&b, &g).is_empty());
    }

    #[test]
    fn clipped_box() {
        let b = BoundingBox::new(-10.0, -10.0, 30.0, 30.0).unwrap();
        let c = b.clipped(640.0, 480.0).unwrap();
        assert_eq!((c.left, c.top, c.width, c.height), (0.0, 0.0, 20.0, 20.0));
        assert!(BoundingBox::new(-50.0, 0.0, 10.0, 10.0)
            .unwrap()
            .clipped(640.0, 480.0)
            .is_none());
    }
}
