//! Discrete Laplace (harmonic) extension on the pixel grid.
//!
//! Unknown pixels are solved so that the 4-neighbour Laplacian vanishes.
//! Known pixels act as Dirichlet values and absent pixels are simply not
//! neighbours, which gives a zero-flux boundary there. The linear system is
//! solved with matrix-free Jacobi-preconditioned conjugate gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Unknown,
    Known,
    Absent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HarmonicReport {
    /// Unknown pixels whose connected component touches no known pixel.
    /// They receive the caller's fallback value.
    pub unanchored: Vec<(usize, usize)>,
    pub iterations: usize,
    /// Largest relative CG residual over channels at exit.
    pub residual: f64,
}

const NEIGHBOURS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

struct Grid<'a> {
    width: usize,
    height: usize,
    cells: &'a [Cell],
}

impl Grid<'_> {
    #[inline]
    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
        NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
                return None;
            }
            let j = ny as usize * self.width + nx as usize;
            (self.cells[j] != Cell::Absent).then_some(j)
        })
    }
}

/// Fills every unknown pixel of each channel with the harmonic extension of
/// the known pixels. `fallback[c]` is used for unanchored components.
pub fn solve_harmonic(
    width: usize,
    height: usize,
    cells: &[Cell],
    channels: &mut [&mut [f64]],
    fallback: &[f64],
) -> Result<HarmonicReport> {
    let n = width * height;
    if cells.len() != n {
        return Err(Error::Dimension { what: "harmonic cells", expected: n, got: cells.len() });
    }
    if fallback.len() != channels.len() {
        return Err(Error::Dimension { what: "harmonic fallback", expected: channels.len(), got: fallback.len() });
    }
    for ch in channels.iter() {
        if ch.len() != n {
            return Err(Error::Dimension { what: "harmonic channel", expected: n, got: ch.len() });
        }
    }
    let grid = Grid { width, height, cells };

    // Label unknown components and find the anchored ones.
    let mut anchored = vec![false; n];
    let mut seen = vec![false; n];
    let mut report = HarmonicReport::default();
    for start in 0..n {
        if cells[start] != Cell::Unknown || seen[start] {
            continue;
        }
        let mut component = Vec::new();
        let mut has_known = false;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            component.push(i);
            for j in grid.neighbours(i) {
                match cells[j] {
                    Cell::Known => has_known = true,
                    Cell::Unknown if !seen[j] => {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                    _ => {}
                }
            }
        }
        if has_known {
            for i in component {
                anchored[i] = true;
            }
        } else {
            component.sort_unstable();
            for i in component {
                report.unanchored.push((i % width, i / width));
                for (ch, &f) in channels.iter_mut().zip(fallback) {
                    ch[i] = f;
                }
            }
        }
    }

    let unknowns: Vec<usize> = (0..n).filter(|&i| anchored[i]).collect();
    if unknowns.is_empty() {
        return Ok(report);
    }
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in unknowns.iter().enumerate() {
        slot[i] = k;
    }
    let diag: Vec<f64> = unknowns.iter().map(|&i| grid.neighbours(i).count() as f64).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (k, &i) in unknowns.iter().enumerate() {
            let mut acc = diag[k] * x[k];
            for j in grid.neighbours(i) {
                if slot[j] != usize::MAX {
                    acc -= x[slot[j]];
                }
            }
            out[k] = acc;
        }
    };

    for ch in channels.iter_mut() {
        let b: Vec<f64> = unknowns
            .iter()
            .map(|&i| grid.neighbours(i).filter(|&j| cells[j] == Cell::Known).map(|j| ch[j]).sum())
            .collect();
        // Warm start from the current values when they are usable.
        let mut x: Vec<f64> = unknowns.iter().map(|&i| if ch[i].is_finite() { ch[i] } else { 0.0 }).collect();
        let (iters, residual) = conjugate_gradient(&apply, &diag, &b, &mut x);
        report.iterations = report.iterations.max(iters);
        report.residual = report.residual.max(residual);
        for (k, &i) in unknowns.iter().enumerate() {
            ch[i] = x[k];
        }
    }
    Ok(report)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(apply: &impl Fn(&[f64], &mut [f64]), diag: &[f64], b: &[f64], x: &mut [f64]) -> (usize, f64) {
    let m = b.len();
    let b_norm = dot(b, b).sqrt().max(1e-300);
    let mut r = vec![0.0; m];
    apply(x, &mut r);
    for k in 0..m {
        r[k] = b[k] - r[k];
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; m];
    let max_iter = 20 * m + 100;
    let mut iter = 0;
    while iter < max_iter {
        let res = dot(&r, &r).sqrt() / b_norm;
        if res < 1e-12 {
            return (iter, res);
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..m {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..m {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..m {
            p[k] = z[k] + beta * p[k];
        }
        iter += 1;
    }
    (iter, dot(&r, &r).sqrt() / b_norm)
}

/// Largest absolute Laplacian stencil residual over unknown pixels whose
/// four neighbours are all present.
pub fn interior_residual(width: usize, height: usize, cells: &[Cell], values: &[f64]) -> f64 {
    let grid = Grid { width, height, cells };
    let mut worst: f64 = 0.0;
    for i in 0..width * height {
        if cells[i] != Cell::Unknown {
            continue;
        }
        let nb: Vec<usize> = grid.neighbours(i).collect();
        if nb.len() < 4 {
            continue;
        }
        let lap: f64 = nb.iter().map(|&j| values[j]).sum::<f64>() - 4.0 * values[i];
        worst = worst.max(lap.abs());
    }
    worst
}
