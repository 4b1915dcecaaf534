//! Geometry of the 24-2 test pattern.
//!
//! The grid has 54 stimulus locations arranged in eight rows
//! (4, 6, 8, 9, 9, 8, 6, 4 points, top to bottom). Locations are
//! indexed 1..=54 in row-major order. Two locations fall on the
//! physiologic blind spot and are excluded from analysis, leaving
//! the 52 locations every other module works with.

/// 1-based grid indices of the two blind-spot locations.
pub const BLIND_SPOT_INDICES: [usize; 2] = [26, 35];

/// Number of locations in the full pattern.
pub const GRID_SIZE: usize = 54;

/// Number of analyzed locations after removing the blind spot.
pub const FIELD_SIZE: usize = 52;

/// Points per row, top to bottom.
pub const ROW_SIZES: [usize; 8] = [4, 6, 8, 9, 9, 8, 6, 4];

/// The 24-2 stimulus grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid24_2 {
    points: Vec<(i32, i32)>,
}

impl Grid24_2 {
    /// Build the canonical grid. Coordinates are degrees of visual angle,
    /// x positive temporal (right-eye convention), y positive superior.
    pub fn build() -> Self {
        let row_y = [21, 15, 9, 3, -3, -9, -15, -21];
        let mut points = Vec::with_capacity(GRID_SIZE);
        for (row, &y) in row_y.iter().enumerate() {
            let half_width = match ROW_SIZES[row] {
                4 => 9,
                6 => 15,
                8 => 21,
                9 => 27,
                _ => unreachable!(),
            };
            let mut x = -half_width;
            // The 9-point rows span -27..=21; all others are symmetric.
            let count = ROW_SIZES[row];
            for _ in 0..count {
                points.push((x, y));
                x += 6;
            }
        }
        debug_assert_eq!(points.len(), GRID_SIZE);
        Self { points }
    }

    /// Coordinate of a 1-based grid index.
    pub fn point(&self, index1: usize) -> (i32, i32) {
        self.points[index1 - 1]
    }

    /// All 54 coordinates in index order.
    pub fn points(&self) -> &[(i32, i32)] {
        &self.points
    }

    pub fn blind_spot_indices(&self) -> [usize; 2] {
        BLIND_SPOT_INDICES
    }

    /// The 52 analyzed grid indices (1-based), in order.
    pub fn field_indices(&self) -> Vec<usize> {
        (1..=GRID_SIZE)
            .filter(|i| !BLIND_SPOT_INDICES.contains(i))
            .collect()
    }

    /// Coordinates of the 52 analyzed locations, in field order.
    pub fn field_points(&self) -> Vec<(i32, i32)> {
        self.field_indices()
            .into_iter()
            .map(|i| self.point(i))
            .collect()
    }
}

/// Map a 1-based grid index to its 0-based position in the 52-value field
/// vector. Returns `None` for the blind-spot indices.
pub fn grid_to_field(index1: usize) -> Option<usize> {
    if BLIND_SPOT_INDICES.contains(&index1) || index1 == 0 || index1 > GRID_SIZE {
        return None;
    }
    let mut pos = index1 - 1;
    for &b in &BLIND_SPOT_INDICES {
        if index1 > b {
            pos -= 1;
        }
    }
    Some(pos)
}

/// Inverse of [`grid_to_field`]: 0-based field position to 1-based grid index.
pub fn field_to_grid(pos: usize) -> usize {
    let mut index1 = pos + 1;
    for &b in &BLIND_SPOT_INDICES {
        if index1 >= b {
            index1 += 1;
        }
    }
    index1
}
