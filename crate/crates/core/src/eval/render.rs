//! Pen-trace rasterization and the Dice-overlap letter score.

use std::fs;
use std::path::Path;

use crate::dataset::{LetterGeometry, PaperPoint};
use crate::error::{Error, Result};

/// Square occupancy grid over the paper, one cell per millimetre.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub size: usize,
    cells: Vec<bool>,
}

impl Grid {
    pub fn empty(size: usize) -> Self {
        Grid { size, cells: vec![false; size * size] }
    }

    /// Cell at column `i` (u) and row `j` (v).
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.size + i]
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.cells[j * self.size + i] = true;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Mark every cell whose centre lies within `radius` mm of `p`.
    pub fn stamp(&mut self, p: PaperPoint, radius: f64) {
        let size = self.size;
        let lo = |x: f64| ((x - radius - 0.5).floor().max(0.0)) as usize;
        let hi = |x: f64| ((x + radius + 0.5).ceil().max(0.0) as usize).min(size);
        for j in lo(p.1)..hi(p.1) {
            for i in lo(p.0)..hi(p.0) {
                let (cx, cy) = (i as f64 + 0.5, j as f64 + 0.5);
                if (cx - p.0).powi(2) + (cy - p.1).powi(2) <= radius * radius {
                    self.set(i, j);
                }
            }
        }
    }

    /// Stamp a straight segment densely enough that it stays connected.
    pub fn stamp_segment(&mut self, a: PaperPoint, b: PaperPoint, radius: f64) {
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / 0.25).ceil().max(1.0) as usize;
        for k in 0..=n {
            let s = k as f64 / n as f64;
            self.stamp((a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s), radius);
        }
    }

    /// Copy translated by `(dx, dy)` cells; cells pushed off the edge are lost.
    pub fn shifted(&self, dx: i32, dy: i32) -> Grid {
        let mut out = Grid::empty(self.size);
        let n = self.size as i32;
        for j in 0..n {
            for i in 0..n {
                if self.get(i as usize, j as usize) {
                    let (x, y) = (i + dx, j + dy);
                    if (0..n).contains(&x) && (0..n).contains(&y) {
                        out.set(x as usize, y as usize);
                    }
                }
            }
        }
        out
    }

    /// Binary PGM, ink black on white, `v` increasing upward.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        for j in (0..self.size).rev() {
            for i in 0..self.size {
                out.push(if self.get(i, j) { 0 } else { 255 });
            }
        }
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Rasterize contact points (paper mm), joining consecutive points of one stroke.
///
/// `points` holds `None` wherever the pen was lifted.
pub fn render_points(points: &[Option<PaperPoint>], size: usize, stroke_mm: f64) -> Grid {
    let mut g = Grid::empty(size);
    let r = stroke_mm / 2.0;
    let mut prev: Option<PaperPoint> = None;
    for p in points {
        match (*p, prev) {
            (Some(a), Some(b)) => g.stamp_segment(b, a, r),
            (Some(a), None) => g.stamp(a, r),
            _ => {}
        }
        prev = *p;
    }
    g
}

/// The ideal letter with the given stroke thickness.
pub fn letter_template(geometry: &LetterGeometry, size: usize, stroke_mm: f64) -> Grid {
    let mut g = Grid::empty(size);
    for (a, b) in geometry.strokes() {
        g.stamp_segment(a, b, stroke_mm / 2.0);
    }
    g
}

/// Dice overlap `2|G n T| / (|G| + |T|)` maximized over integer shifts of `grid`.
pub fn letter_score(grid: &Grid, template: &Grid, max_shift: i32) -> Result<f64> {
    if grid.size != template.size {
        return Err(Error::Shape {
            expected: format!("{0}x{0} grid", template.size),
            got: format!("{0}x{0}", grid.size),
        });
    }
    let nt = template.count();
    if nt == 0 {
        return Err(Error::InvalidArgument("empty letter template".into()));
    }
    let ng = grid.count();
    if ng == 0 {
        return Ok(0.0);
    }
    let gc: Vec<(i32, i32)> = (0..grid.size)
        .flat_map(|j| (0..grid.size).map(move |i| (i, j)))
        .filter(|&(i, j)| grid.get(i, j))
        .map(|(i, j)| (i as i32, j as i32))
        .collect();
    let n = grid.size as i32;
    let mut best = 0usize;
    for dy in -max_shift..=max_shift {
        for dx in -max_shift..=max_shift {
            let hit = gc
                .iter()
                .filter(|&&(i, j)| {
                    let (x, y) = (i + dx, j + dy);
                    (0..n).contains(&x) && (0..n).contains(&y) && template.get(x as usize, y as usize)
                })
                .count();
            best = best.max(hit);
        }
    }
    Ok(2.0 * best as f64 / (ng + nt) as f64)
}
