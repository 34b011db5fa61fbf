//! Cell decomposition of SU(2) and nearest-neighbour search over a net.
//!
//! SU(2) elements are handled as unit quaternions `q` with the
//! [`su2_from_quaternion`](crate::matcore::su2_from_quaternion) convention,
//! under which the operator-norm distance is the Euclidean distance of
//! quaternions.

use std::collections::HashMap;
use std::f64::consts::PI;

pub type Quat = [f64; 4];

pub fn quat_distance(a: &Quat, b: &Quat) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2) + (a[3] - b[3]).powi(2)).sqrt()
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Quaternion product matching the matrix product of the SU(2) images.
pub fn quat_mul(p: &Quat, q: &Quat) -> Quat {
    // a = q0 + i q1 and b = q2 + i q3 with U = [[a, -conj b], [b, conj a]];
    // the product's first column is (a_p a_q - conj(b_p) b_q, b_p a_q + conj(a_p) b_q).
    let (ap_re, ap_im, bp_re, bp_im) = (p[0], p[1], p[2], p[3]);
    let (aq_re, aq_im, bq_re, bq_im) = (q[0], q[1], q[2], q[3]);
    let a_re = ap_re * aq_re - ap_im * aq_im - (bp_re * bq_re + bp_im * bq_im);
    let a_im = ap_re * aq_im + ap_im * aq_re - (bp_re * bq_im - bp_im * bq_re);
    let b_re = bp_re * aq_re - bp_im * aq_im + (ap_re * bq_re + ap_im * bq_im);
    let b_im = bp_re * aq_im + bp_im * aq_re + (ap_re * bq_im - ap_im * bq_re);
    [a_re, a_im, b_re, b_im]
}

/// Inverse (adjoint) of a unit quaternion.
pub fn quat_inv(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

#[derive(Clone, Debug)]
struct Band {
    first_cell: usize,
    azimuth_bins: usize,
}

#[derive(Clone, Debug)]
struct Shell {
    polar_width: f64,
    bands: Vec<Band>,
}

/// Axis-angle grid on SU(2).
///
/// Writing `q = (cos phi, sin phi * u)` with `u` on the 2-sphere, `phi` is cut
/// into bins of width at most `spacing` and, in each `phi` shell, `u` into
/// latitude/longitude bins whose angular width is at most
/// `spacing / max sin phi`. Every cell then has operator-norm diameter at
/// most `3 * spacing` ([`CellGrid::diameter_bound`]).
#[derive(Clone, Debug)]
pub struct CellGrid {
    spacing: f64,
    shell_width: f64,
    shells: Vec<Shell>,
    n_cells: usize,
}

impl CellGrid {
    pub fn new(spacing: f64) -> Self {
        assert!(spacing > 0.0 && spacing.is_finite(), "cell spacing must be positive");
        let n_shells = (PI / spacing).ceil() as usize;
        let shell_width = PI / n_shells as f64;
        let mut shells = Vec::with_capacity(n_shells);
        let mut next = 0usize;
        for k in 0..n_shells {
            let lo = k as f64 * shell_width;
            let hi = lo + shell_width;
            let s_max = max_sin(lo, hi);
            let beta = if s_max > 0.0 { spacing / s_max } else { PI };
            let n_bands = (PI / beta).ceil().max(1.0) as usize;
            let polar_width = PI / n_bands as f64;
            let mut bands = Vec::with_capacity(n_bands);
            for m in 0..n_bands {
                let t_lo = m as f64 * polar_width;
                let sin_max = max_sin(t_lo, t_lo + polar_width);
                let az = ((2.0 * PI * sin_max / polar_width).ceil() as usize).max(1);
                bands.push(Band {
                    first_cell: next,
                    azimuth_bins: az,
                });
                next += az;
            }
            shells.push(Shell { polar_width, bands });
        }
        Self {
            spacing,
            shell_width,
            shells,
            n_cells: next,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        self.n_cells == 0
    }

    /// Upper bound on the operator-norm diameter of any cell.
    pub fn diameter_bound(&self) -> f64 {
        3.0 * self.spacing
    }

    fn coords(q: &Quat) -> (f64, f64, f64) {
        let phi = q[0].clamp(-1.0, 1.0).acos();
        let s = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if s < 1e-300 {
            return (phi, 0.0, 0.0);
        }
        let theta = (q[3] / s).clamp(-1.0, 1.0).acos();
        let mut psi = q[2].atan2(q[1]);
        if psi < 0.0 {
            psi += 2.0 * PI;
        }
        (phi, theta, psi)
    }

    fn from_coords(phi: f64, theta: f64, psi: f64) -> Quat {
        let (s, c) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        [c, s * st * psi.cos(), s * st * psi.sin(), s * ct]
    }

    pub fn cell_of(&self, q: &Quat) -> usize {
        let (phi, theta, psi) = Self::coords(q);
        let k = ((phi / self.shell_width) as usize).min(self.shells.len() - 1);
        let shell = &self.shells[k];
        let m = ((theta / shell.polar_width) as usize).min(shell.bands.len() - 1);
        let band = &shell.bands[m];
        let az_width = 2.0 * PI / band.azimuth_bins as f64;
        let n = ((psi / az_width) as usize).min(band.azimuth_bins - 1);
        band.first_cell + n
    }

    /// Centre of a cell in axis-angle coordinates.
    pub fn center(&self, cell: usize) -> Quat {
        assert!(cell < self.n_cells, "cell index out of range");
        let k = self
            .shells
            .partition_point(|s| s.bands[0].first_cell <= cell)
            .saturating_sub(1);
        let shell = &self.shells[k];
        let m = shell.bands.partition_point(|b| b.first_cell <= cell).saturating_sub(1);
        let band = &shell.bands[m];
        let n = cell - band.first_cell;
        let az_width = 2.0 * PI / band.azimuth_bins as f64;
        Self::from_coords(
            (k as f64 + 0.5) * self.shell_width,
            (m as f64 + 0.5) * shell.polar_width,
            (n as f64 + 0.5) * az_width,
        )
    }
}

fn max_sin(lo: f64, hi: f64) -> f64 {
    if lo <= PI / 2.0 && hi >= PI / 2.0 {
        1.0
    } else {
        lo.sin().max(hi.sin()).max(0.0)
    }
}

/// Hash grid over quaternion coordinates with exact nearest-neighbour search.
#[derive(Clone, Debug)]
pub struct NetIndex {
    cell_size: f64,
    points: Vec<Quat>,
    buckets: HashMap<[i32; 4], Vec<u32>>,
}

impl NetIndex {
    pub fn new(points: Vec<Quat>, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let mut buckets: HashMap<[i32; 4], Vec<u32>> = HashMap::new();
        for (k, q) in points.iter().enumerate() {
            buckets.entry(key(q, cell_size)).or_default().push(k as u32);
        }
        Self {
            cell_size,
            points,
            buckets,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &Quat {
        &self.points[k]
    }

    pub fn points(&self) -> &[Quat] {
        &self.points
    }

    /// Index and distance of the stored point closest to `q`.
    pub fn nearest(&self, q: &Quat) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let center = key(q, self.cell_size);
        let mut best: Option<(usize, f64)> = None;
        // Anything in ring r + 1 or beyond is at least r * cell_size away.
        let max_ring = (2.0 / self.cell_size).ceil() as i32 + 2;
        for r in 0..=max_ring {
            self.scan_ring(&center, r, q, &mut best);
            if let Some((_, dist)) = best {
                if dist <= r as f64 * self.cell_size {
                    break;
                }
            }
        }
        best
    }

    fn scan_ring(&self, c: &[i32; 4], r: i32, q: &Quat, best: &mut Option<(usize, f64)>) {
        for a in -r..=r {
            for b in -r..=r {
                for e in -r..=r {
                    for f in -r..=r {
                        if a.abs().max(b.abs()).max(e.abs()).max(f.abs()) != r {
                            continue;
                        }
                        let k = [c[0] + a, c[1] + b, c[2] + e, c[3] + f];
                        let Some(ids) = self.buckets.get(&k) else { continue };
                        for &id in ids {
                            let dist = quat_distance(&self.points[id as usize], q);
                            if best.map_or(true, |(_, bd)| dist < bd) {
                                *best = Some((id as usize, dist));
                            }
                        }
                    }
                }
            }
        }
    }
}

fn key(q: &Quat, h: f64) -> [i32; 4] {
    [
        (q[0] / h).floor() as i32,
        (q[1] / h).floor() as i32,
        (q[2] / h).floor() as i32,
        (q[3] / h).floor() as i32,
    ]
}
