//! Fast Marching solver for `F |∇T| = 1` on a uniform grid, Sobel gradients of the
//! arrival-time field, and gradient-descent headings toward the source.
//!
//! Cells are indexed `(i, j)` with `i` along x and `j` along y; cell `(i, j)` covers
//! `[i h, (i+1) h) × [j h, (j+1) h)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FmmParams {
    pub cell: f64,
    /// Descent step length (m).
    pub alpha: f64,
    /// Clearance added around every obstacle before marking cells blocked (m).
    pub inflation: f64,
    /// Cells within this distance of the source and visible from it start with their
    /// exact Euclidean distance (m).
    pub exact_init_radius: f64,
}

impl Default for FmmParams {
    fn default() -> Self {
        Self { cell: 1.0, alpha: 1.0, inflation: 1.0, exact_init_radius: 4.0 }
    }
}

/// Binary speed field: 0 on blocked cells, 1 on free ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub speed: Vec<f64>,
}

impl SpeedGrid {
    pub fn free(nx: usize, ny: usize, cell: f64) -> Self {
        Self { nx, ny, cell, speed: vec![1.0; nx * ny] }
    }

    /// Rasterizes an environment; a cell is blocked when it intersects any obstacle
    /// grown by `inflation`.
    pub fn from_environment(env: &Environment, cell: f64, inflation: f64) -> Self {
        let nx = (env.width / cell).ceil() as usize;
        let ny = (env.height / cell).ceil() as usize;
        let mut grid = Self::free(nx, ny, cell);
        for j in 0..ny {
            for i in 0..nx {
                let (x0, y0) = (i as f64 * cell, j as f64 * cell);
                let blocked = env.obstacles.iter().any(|o| {
                    let qx = o.center.x.clamp(x0, x0 + cell);
                    let qy = o.center.y.clamp(y0, y0 + cell);
                    o.center.dist(Vec2::new(qx, qy)) < o.radius + inflation
                });
                if blocked {
                    grid.speed[j * nx + i] = 0.0;
                }
            }
        }
        grid
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.speed[self.index(i, j)] > 0.0
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.cell, (j as f64 + 0.5) * self.cell)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let (fi, fj) = ((p.x / self.cell).floor(), (p.y / self.cell).floor());
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        // Points on the far boundary belong to the last cell.
        let i = if i == self.nx && p.x <= self.nx as f64 * self.cell { i - 1 } else { i };
        let j = if j == self.ny && p.y <= self.ny as f64 * self.cell { j - 1 } else { j };
        (i < self.nx && j < self.ny).then_some((i, j))
    }

    /// True when every sample along the segment between two cell centers is free.
    fn line_of_sight(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        let (pa, pb) = (self.center(a.0, a.1), self.center(b.0, b.1));
        let samples = ((pa.dist(pb) / (0.25 * self.cell)).ceil() as usize).max(1);
        (0..=samples).all(|s| {
            let p = pa + (pb - pa) * (s as f64 / samples as f64);
            self.cell_of(p).is_some_and(|(i, j)| self.is_free(i, j))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub source: (usize, usize),
    pub times: Vec<f64>,
    /// Unit gradient of `times` per cell; zero where the Sobel response vanishes or the
    /// cell is unreachable.
    pub gradient: Vec<Vec2>,
    /// Narrow-band pops were non-decreasing in arrival time.
    pub monotone_front: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Trial {
    t: f64,
    idx: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    // Min-heap on time, ties on lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First-order upwind solution of the local quadratic, using the smaller accepted
/// neighbor on each axis.
fn sethian_update(a: f64, b: f64, h_over_f: f64) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if b.is_infinite() || b - a >= h_over_f {
        a + h_over_f
    } else {
        0.5 * (a + b + (2.0 * h_over_f * h_over_f - (a - b) * (a - b)).sqrt())
    }
}

/// Solves the Eikonal equation from `source` with a narrow-band Fast Marching front.
pub fn solve_eikonal(grid: &SpeedGrid, source: (usize, usize), exact_init_radius: f64) -> Result<TravelTimeGrid> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.cell);
    if source.0 >= nx || source.1 >= ny || !grid.is_free(source.0, source.1) {
        return Err(Error::SourceBlocked(source.0, source.1));
    }
    let n = nx * ny;
    let mut times = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut heap = BinaryHeap::new();

    let src_center = grid.center(source.0, source.1);
    let reach = (exact_init_radius / h).floor() as isize;
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let (i, j) = (source.0 as isize + di, source.1 as isize + dj);
            if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                continue;
            }
            let (i, j) = (i as usize, j as usize);
            let d = grid.center(i, j).dist(src_center);
            if d <= exact_init_radius + 1e-9 && grid.is_free(i, j) && grid.line_of_sight(source, (i, j)) {
                let idx = grid.index(i, j);
                times[idx] = d;
                accepted[idx] = true;
            }
        }
    }
    let src_idx = grid.index(source.0, source.1);
    times[src_idx] = 0.0;
    accepted[src_idx] = true;

    let neighbors4 = |idx: usize| {
        let (i, j) = (idx % nx, idx / nx);
        let mut out = [None; 4];
        if i > 0 {
            out[0] = Some(idx - 1);
        }
        if i + 1 < nx {
            out[1] = Some(idx + 1);
        }
        if j > 0 {
            out[2] = Some(idx - nx);
        }
        if j + 1 < ny {
            out[3] = Some(idx + nx);
        }
        out
    };

    let relax = |idx: usize, times: &mut Vec<f64>, accepted: &Vec<bool>, heap: &mut BinaryHeap<Trial>| {
        if accepted[idx] || grid.speed[idx] <= 0.0 {
            return;
        }
        let nb = neighbors4(idx);
        let val = |k: Option<usize>| k.filter(|&k| accepted[k]).map_or(f64::INFINITY, |k| times[k]);
        let a = val(nb[0]).min(val(nb[1]));
        let b = val(nb[2]).min(val(nb[3]));
        let t = sethian_update(a, b, h / grid.speed[idx]);
        if t < times[idx] {
            times[idx] = t;
            heap.push(Trial { t, idx });
        }
    };

    for idx in 0..n {
        if accepted[idx] {
            for k in neighbors4(idx).into_iter().flatten() {
                relax(k, &mut times, &accepted, &mut heap);
            }
        }
    }

    let mut monotone = true;
    let mut last = f64::NEG_INFINITY;
    while let Some(Trial { t, idx }) = heap.pop() {
        if accepted[idx] || t > times[idx] {
            continue;
        }
        if t + 1e-12 < last {
            monotone = false;
        }
        last = last.max(t);
        accepted[idx] = true;
        for k in neighbors4(idx).into_iter().flatten() {
            relax(k, &mut times, &accepted, &mut heap);
        }
    }
    debug_assert!(monotone, "fast marching front popped out of order");

    let mut out =
        TravelTimeGrid { nx, ny, cell: h, source, times, gradient: vec![Vec2::default(); n], monotone_front: monotone };
    out.gradient = sobel_gradient(&out);
    Ok(out)
}

/// Builds the speed grid for an environment and solves from its vehicle goal.
pub fn solve_environment(env: &Environment, params: &FmmParams) -> Result<TravelTimeGrid> {
    let grid = SpeedGrid::from_environment(env, params.cell, params.inflation);
    let source = grid.cell_of(env.vehicle_goal).ok_or(Error::Environment("vehicle goal outside the grid".into()))?;
    solve_eikonal(&grid, source, params.exact_init_radius)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Normalized 3×3 Sobel gradient of the arrival times. Unreachable or out-of-grid
/// neighbors take the center value.
pub fn sobel_gradient(t: &TravelTimeGrid) -> Vec<Vec2> {
    let (nx, ny) = (t.nx, t.ny);
    let mut out = vec![Vec2::default(); nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let center = t.times[j * nx + i];
            if !center.is_finite() {
                continue;
            }
            let (mut gx, mut gy) = (0.0, 0.0);
            for (r, dj) in (-1isize..=1).enumerate() {
                for (c, di) in (-1isize..=1).enumerate() {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    let v = if ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny {
                        let v = t.times[jj as usize * nx + ii as usize];
                        if v.is_finite() {
                            v
                        } else {
                            center
                        }
                    } else {
                        center
                    };
                    gx += SOBEL_X[r][c] * v;
                    gy += SOBEL_X[c][r] * v;
                }
            }
            let g = Vec2::new(gx, gy);
            let norm = g.norm();
            if norm > 1e-12 {
                out[j * nx + i] = g * (1.0 / norm);
            }
        }
    }
    out
}

impl TravelTimeGrid {
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.cell, (j as f64 + 0.5) * self.cell)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        SpeedGrid { nx: self.nx, ny: self.ny, cell: self.cell, speed: Vec::new() }.cell_of(p)
    }

    pub fn time_at(&self, p: Vec2) -> f64 {
        self.cell_of(p).map_or(f64::INFINITY, |(i, j)| self.times[self.index(i, j)])
    }

    pub fn source_center(&self) -> Vec2 {
        self.center(self.source.0, self.source.1)
    }

    /// Lowest-time 8-neighbor, without cutting blocked corners.
    fn steepest_neighbor(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        let finite = |ii: isize, jj: isize| {
            ii >= 0
                && jj >= 0
                && (ii as usize) < self.nx
                && (jj as usize) < self.ny
                && self.times[self.index(ii as usize, jj as usize)].is_finite()
        };
        let mut best: Option<(f64, usize, (usize, usize))> = None;
        for dj in -1isize..=1 {
            for di in -1isize..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if !finite(ii, jj) {
                    continue;
                }
                if di != 0 && dj != 0 && !(finite(i as isize + di, j as isize) && finite(i as isize, j as isize + dj)) {
                    continue;
                }
                let (ii, jj) = (ii as usize, jj as usize);
                let idx = self.index(ii, jj);
                let cand = (self.times[idx], idx, (ii, jj));
                if best.is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                    best = Some(cand);
                }
            }
        }
        best.map(|b| b.2)
    }

    /// Direction of steepest descent at `p`, as a heading in radians. `Ok(None)` when `p`
    /// is in the source cell.
    pub fn next_heading(&self, p: Vec2, alpha: f64) -> Result<Option<f64>> {
        let unreachable = || Error::Unreachable { x: p.x, y: p.y };
        let (i, j) = self.cell_of(p).ok_or_else(unreachable)?;
        let here = self.times[self.index(i, j)];
        if !here.is_finite() {
            return Err(unreachable());
        }
        if (i, j) == self.source {
            return Ok(None);
        }
        let g = self.gradient[self.index(i, j)];
        if g.norm() > 0.0 {
            let dir = g * -1.0;
            let q = p + dir * alpha;
            let accept = match self.cell_of(q) {
                Some(c) if c == (i, j) => true,
                Some((qi, qj)) => self.times[self.index(qi, qj)] <= here,
                None => false,
            };
            if accept {
                return Ok(Some(dir.heading()));
            }
        }
        match self.steepest_neighbor(i, j) {
            Some((ni, nj)) => Ok(Some(p.heading_to(self.center(ni, nj)))),
            None => Err(unreachable()),
        }
    }

    /// Follows descent headings from `start` until within one cell of the source.
    /// Returns the visited points, or `None` when descent fails within `max_steps`.
    pub fn descend(&self, start: Vec2, alpha: f64, max_steps: usize) -> Option<Vec<Vec2>> {
        let target = self.source_center();
        let mut p = start;
        let mut path = vec![p];
        for _ in 0..=max_steps {
            if p.dist(target) <= self.cell {
                return Some(path);
            }
            match self.next_heading(p, alpha) {
                Ok(None) => return Some(path),
                Ok(Some(h)) => {
                    let step = alpha.min(p.dist(target));
                    p = p + Vec2::from_heading(h) * step;
                    path.push(p);
                }
                Err(_) => return None,
            }
        }
        None
    }

    /// Long-format CSV: `i,j,x,y,t,gx,gy` (unreachable times written as `inf`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "x", "y", "t", "gx", "gy"])?;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let idx = self.index(i, j);
                let c = self.center(i, j);
                let g = self.gradient[idx];
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    c.x.to_string(),
                    c.y.to_string(),
                    self.times[idx].to_string(),
                    g.x.to_string(),
                    g.y.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
