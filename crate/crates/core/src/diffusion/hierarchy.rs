//! Locally adaptive hierarchical-basis preconditioner.
//!
//! The grid graph (conductance form: per-node excess diagonal `d ≥ 0` plus
//! positive edge conductances) is coarsened by alternating two elimination
//! half-steps per level:
//!
//! 1. red: on an axis-aligned lattice of stride `h`, eliminate nodes with odd
//!    `i + j`. The remaining nodes form a diagonal lattice.
//! 2. quincunx: on that diagonal lattice, eliminate nodes with odd `i` and
//!    `j`. The remainder is an axis lattice of stride `2h`.
//!
//! Each eliminated node is independent of the others in its half-step, so
//! elimination is exact except for fill-in between nodes that are not
//! neighbours on the coarser lattice. Such a connection is redistributed
//! onto the two-edge paths through the shared lattice neighbours, which
//! preserves its effective conductance and keeps every coarse matrix an SPD
//! M-matrix. The coarsest lattice is factored densely.

use super::DiffusionSystem;

const COARSE_NODES: usize = 64;

#[derive(Debug, Clone)]
struct Elimination {
    node: usize,
    pivot: f64,
    neighbours: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct HierarchicalBasis {
    stages: Vec<Vec<Elimination>>,
    coarse_nodes: Vec<usize>,
    /// Row-major lower Cholesky factor of the coarsest matrix.
    coarse_factor: Vec<f64>,
}

/// Axis-aligned lattice of stride `stride` in fine-grid coordinates.
struct AxisLevel {
    stride: usize,
    nx: usize,
    ny: usize,
    d: Vec<f64>,
    /// Edge (i, j)–(i+1, j).
    e: Vec<f64>,
    /// Edge (i, j)–(i, j+1).
    s: Vec<f64>,
}

/// Diagonal lattice holding nodes with even `i + j`.
struct DiagLevel {
    stride: usize,
    nx: usize,
    ny: usize,
    d: Vec<f64>,
    /// Edge (i, j)–(i+1, j+1).
    dr: Vec<f64>,
    /// Edge (i, j)–(i−1, j+1).
    dl: Vec<f64>,
}

impl DiagLevel {
    fn add(&mut self, a: (usize, usize), b: (usize, usize), w: f64) {
        let (top, bottom) = if a.1 < b.1 { (a, b) } else { (b, a) };
        let k = top.0 + top.1 * self.nx;
        if bottom.0 > top.0 {
            self.dr[k] += w;
        } else {
            self.dl[k] += w;
        }
    }
}

impl AxisLevel {
    fn add(&mut self, a: (usize, usize), b: (usize, usize), w: f64) {
        let (lo, hi) = if (a.1, a.0) < (b.1, b.0) { (a, b) } else { (b, a) };
        let k = lo.0 + lo.1 * self.nx;
        if hi.1 == lo.1 {
            self.e[k] += w;
        } else {
            self.s[k] += w;
        }
    }

    fn eliminate_red(self, fine_width: usize) -> (DiagLevel, Vec<Elimination>) {
        let (nx, ny) = (self.nx, self.ny);
        let idx = |i: usize, j: usize| i + j * nx;
        let fine = |i: usize, j: usize| i * self.stride + j * self.stride * fine_width;
        let mut out = DiagLevel {
            stride: self.stride,
            nx,
            ny,
            d: self.d.clone(),
            dr: vec![0.0; nx * ny],
            dl: vec![0.0; nx * ny],
        };
        let mut elims = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if (i + j) % 2 == 0 {
                    continue;
                }
                // Left, right, up, down.
                let nb: [Option<((usize, usize), f64)>; 4] = [
                    (i > 0).then(|| ((i - 1, j), self.e[idx(i - 1, j)])),
                    (i + 1 < nx).then(|| ((i + 1, j), self.e[idx(i, j)])),
                    (j > 0).then(|| ((i, j - 1), self.s[idx(i, j - 1)])),
                    (j + 1 < ny).then(|| ((i, j + 1), self.s[idx(i, j)])),
                ];
                let df = self.d[idx(i, j)];
                let pivot = pivot(df, nb.iter().flatten().map(|n| n.1));
                for &((ci, cj), w) in nb.iter().flatten() {
                    out.d[idx(ci, cj)] += w * df / pivot;
                }
                for a in 0..4 {
                    for b in a + 1..4 {
                        let (Some((pa, wa)), Some((pb, wb))) = (nb[a], nb[b]) else {
                            continue;
                        };
                        let fill = wa * wb / pivot;
                        if fill == 0.0 {
                            continue;
                        }
                        let opposite = (a, b) == (0, 1) || (a, b) == (2, 3);
                        if !opposite {
                            out.add(pa, pb, fill);
                            continue;
                        }
                        // Route through the remaining two neighbours.
                        let mids: Vec<(usize, usize)> = if a == 0 {
                            [nb[2], nb[3]].iter().flatten().map(|n| n.0).collect()
                        } else {
                            [nb[0], nb[1]].iter().flatten().map(|n| n.0).collect()
                        };
                        if mids.is_empty() {
                            out.d[idx(pa.0, pa.1)] += fill;
                            out.d[idx(pb.0, pb.1)] += fill;
                            continue;
                        }
                        let share = 2.0 * fill / mids.len() as f64;
                        for m in mids {
                            out.add(pa, m, share);
                            out.add(m, pb, share);
                        }
                    }
                }
                elims.push(Elimination {
                    node: fine(i, j),
                    pivot,
                    neighbours: nb
                        .iter()
                        .flatten()
                        .filter(|n| n.1 != 0.0)
                        .map(|&((ci, cj), w)| (fine(ci, cj), w))
                        .collect(),
                });
            }
        }
        (out, elims)
    }
}

impl DiagLevel {
    fn eliminate_odd(self, fine_width: usize) -> (AxisLevel, Vec<Elimination>) {
        let (nx, ny) = (self.nx, self.ny);
        let idx = |i: usize, j: usize| i + j * nx;
        let fine = |i: usize, j: usize| i * self.stride + j * self.stride * fine_width;
        let (cx, cy) = (nx.div_ceil(2), ny.div_ceil(2));
        let mut out = AxisLevel {
            stride: self.stride * 2,
            nx: cx,
            ny: cy,
            d: vec![0.0; cx * cy],
            e: vec![0.0; cx * cy],
            s: vec![0.0; cx * cy],
        };
        for cj in 0..cy {
            for ci in 0..cx {
                out.d[ci + cj * cx] = self.d[idx(2 * ci, 2 * cj)];
            }
        }
        let mut elims = Vec::new();
        for j in (1..ny).step_by(2) {
            for i in (1..nx).step_by(2) {
                let (a, b) = ((i - 1) / 2, (j - 1) / 2);
                // Up-left, up-right, down-left, down-right, in coarse coords.
                let nb: [Option<((usize, usize), f64)>; 4] = [
                    Some(((a, b), self.dr[idx(i - 1, j - 1)])),
                    (i + 1 < nx).then(|| ((a + 1, b), self.dl[idx(i + 1, j - 1)])),
                    (j + 1 < ny).then(|| ((a, b + 1), self.dl[idx(i, j)])),
                    (i + 1 < nx && j + 1 < ny).then(|| ((a + 1, b + 1), self.dr[idx(i, j)])),
                ];
                let df = self.d[idx(i, j)];
                let pivot = pivot(df, nb.iter().flatten().map(|n| n.1));
                for &((ci, cj), w) in nb.iter().flatten() {
                    out.d[ci + cj * cx] += w * df / pivot;
                }
                for p in 0..4 {
                    for q in p + 1..4 {
                        let (Some((pa, wa)), Some((pb, wb))) = (nb[p], nb[q]) else {
                            continue;
                        };
                        let fill = wa * wb / pivot;
                        if fill == 0.0 {
                            continue;
                        }
                        let diagonal = (p, q) == (0, 3) || (p, q) == (1, 2);
                        if !diagonal {
                            out.add(pa, pb, fill);
                            continue;
                        }
                        let corners: Vec<(usize, usize)> = if p == 0 {
                            [nb[1], nb[2]].iter().flatten().map(|n| n.0).collect()
                        } else {
                            [nb[0], nb[3]].iter().flatten().map(|n| n.0).collect()
                        };
                        let share = 2.0 * fill / corners.len() as f64;
                        for m in corners {
                            out.add(pa, m, share);
                            out.add(m, pb, share);
                        }
                    }
                }
                elims.push(Elimination {
                    node: fine(i, j),
                    pivot,
                    neighbours: nb
                        .iter()
                        .flatten()
                        .filter(|n| n.1 != 0.0)
                        .map(|&((ci, cj), w)| (fine(2 * ci, 2 * cj), w))
                        .collect(),
                });
            }
        }
        (out, elims)
    }
}

fn pivot(d: f64, weights: impl Iterator<Item = f64>) -> f64 {
    let a = d + weights.sum::<f64>();
    if a > 0.0 {
        a
    } else {
        1.0
    }
}

impl HierarchicalBasis {
    pub fn new(sys: &DiffusionSystem) -> Self {
        let fine_width = sys.width();
        let mut level = AxisLevel {
            stride: 1,
            nx: sys.width(),
            ny: sys.height(),
            d: sys.lambda().to_vec(),
            e: sys.east().to_vec(),
            s: sys.south().to_vec(),
        };
        let mut stages = Vec::new();
        while level.nx * level.ny > COARSE_NODES {
            let (diag, red) = level.eliminate_red(fine_width);
            let (next, odd) = diag.eliminate_odd(fine_width);
            stages.push(red);
            stages.push(odd);
            level = next;
        }

        let (nx, ny) = (level.nx, level.ny);
        let m = nx * ny;
        let mut a = vec![0.0; m * m];
        for j in 0..ny {
            for i in 0..nx {
                let k = i + j * nx;
                a[k * m + k] += level.d[k];
                for (w, other) in [
                    (level.e[k], (i + 1 < nx).then(|| k + 1)),
                    (level.s[k], (j + 1 < ny).then(|| k + nx)),
                ] {
                    if let Some(o) = other {
                        a[k * m + k] += w;
                        a[o * m + o] += w;
                        a[k * m + o] -= w;
                        a[o * m + k] -= w;
                    }
                }
            }
        }
        let coarse_factor = cholesky(a, m);
        let coarse_nodes = (0..m)
            .map(|k| (k % nx) * level.stride + (k / nx) * level.stride * fine_width)
            .collect();
        HierarchicalBasis {
            stages,
            coarse_nodes,
            coarse_factor,
        }
    }

    /// `z = M⁻¹ r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        for stage in &self.stages {
            for e in stage {
                let rf = z[e.node] / e.pivot;
                for &(c, w) in &e.neighbours {
                    z[c] += w * rf;
                }
            }
        }
        let m = self.coarse_nodes.len();
        let l = &self.coarse_factor;
        let mut y: Vec<f64> = self.coarse_nodes.iter().map(|&k| z[k]).collect();
        for i in 0..m {
            let mut v = y[i];
            for k in 0..i {
                v -= l[i * m + k] * y[k];
            }
            y[i] = v / l[i * m + i];
        }
        for i in (0..m).rev() {
            let mut v = y[i];
            for k in i + 1..m {
                v -= l[k * m + i] * y[k];
            }
            y[i] = v / l[i * m + i];
        }
        for (&k, v) in self.coarse_nodes.iter().zip(y) {
            z[k] = v;
        }
        for stage in self.stages.iter().rev() {
            for e in stage {
                let mut v = z[e.node];
                for &(c, w) in &e.neighbours {
                    v += w * z[c];
                }
                z[e.node] = v / e.pivot;
            }
        }
    }

    /// Number of elimination half-steps before the dense solve.
    pub fn depth(&self) -> usize {
        self.stages.len()
    }
}

/// Dense Cholesky of an SPD `m`×`m` matrix; a tiny ridge is added if
/// rounding makes a pivot non-positive.
fn cholesky(a: Vec<f64>, m: usize) -> Vec<f64> {
    let scale = (0..m).map(|i| a[i * m + i]).fold(0.0f64, f64::max).max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut l = vec![0.0; m * m];
        let mut ok = true;
        'outer: for i in 0..m {
            for j in 0..=i {
                let mut v = a[i * m + j];
                if i == j {
                    v += ridge;
                }
                for k in 0..j {
                    v -= l[i * m + k] * l[j * m + k];
                }
                if i == j {
                    if !(v > 0.0) {
                        ok = false;
                        break 'outer;
                    }
                    l[i * m + i] = v.sqrt();
                } else {
                    l[i * m + j] = v / l[j * m + j];
                }
            }
        }
        if ok {
            return l;
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 10.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Preconditioner, SmoothnessField, SolverConfig};
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(w: usize, h: usize, density: f64, seed: u64) -> DiffusionSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Grid::from_fn(w, h, |_, _| rng.gen_range(0.0..10.0));
        let l = Grid::from_fn(w, h, |_, _| if rng.gen_bool(density) { rng.gen_range(0.1..1.0) } else { 0.0 });
        let q = Grid::from_fn(w, h, |_, _| rng.gen_range(-2.0..2.0));
        DiffusionSystem::new(&s, &l, &SmoothnessField::new(q)).unwrap()
    }

    #[test]
    fn small_grid_is_solved_exactly() {
        let sys = system(7, 8, 0.3, 1);
        let hb = HierarchicalBasis::new(&sys);
        assert_eq!(hb.depth(), 0);
        let mut z = vec![0.0; sys.len()];
        hb.apply(sys.rhs(), &mut z);
        let mut az = vec![0.0; sys.len()];
        sys.apply(&z, &mut az);
        for (a, b) in az.iter().zip(sys.rhs()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn preconditioner_is_symmetric_positive() {
        for (w, h) in [(33, 20), (1, 200), (17, 2)] {
            let sys = system(w, h, 0.1, 2);
            let hb = HierarchicalBasis::new(&sys);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let n = sys.len();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (mut mx, mut my) = (vec![0.0; n], vec![0.0; n]);
            hb.apply(&x, &mut mx);
            hb.apply(&y, &mut my);
            let a = crate::reduce::dot(&y, &mx);
            let b = crate::reduce::dot(&x, &my);
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{w}x{h}: {a} {b}");
            assert!(crate::reduce::dot(&x, &mx) > 0.0);
        }
    }

    #[test]
    fn beats_jacobi_on_sparse_data() {
        let sys = system(128, 128, 0.02, 4);
        let iters = |p| {
            let cfg = SolverConfig {
                preconditioner: p,
                ..SolverConfig::default()
            };
            sys.solve_rhs(sys.rhs(), &cfg).unwrap().1.iterations
        };
        let hb = iters(Preconditioner::HierarchicalBasis);
        let jac = iters(Preconditioner::Jacobi);
        assert!(hb < jac, "hb {hb} jacobi {jac}");
    }
}
