//! Smooth compactly supported test functions on (0,1) x R^2 of product form
//! psi(t, x) = a T(t) S(|x|), and their cube averages on the diffusively
//! scaled lattice: time averaged over ((n-1)/N, n/N], space integrated over
//! the unit cell of z against S(|x|/sqrt(N)).
//!
//! The product form makes the cube average factor exactly, so the per-slice
//! table is one time vector and one spatial field shared by all slices.

use crate::grid::RotGrid;
use crate::quad::{adaptive_simpson, gauss_legendre};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// C-infinity bump on (-1,1), zero outside, max exp(-1) at 0.
#[inline]
pub fn std_bump(r: f64) -> f64 {
    let r2 = r * r;
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunction {
    pub time_center: f64,
    pub time_halfwidth: f64,
    /// Spatial support radius in diffusive units.
    pub space_radius: f64,
    pub amplitude: f64,
}

impl TestFunction {
    pub fn new(
        time_center: f64,
        time_halfwidth: f64,
        space_radius: f64,
        amplitude: f64,
    ) -> Result<Self> {
        if !(time_halfwidth > 0.0 && space_radius > 0.0 && amplitude != 0.0) {
            return Err(Error::Parameter(
                "test function needs positive widths and nonzero amplitude".into(),
            ));
        }
        if time_center - time_halfwidth < 0.0 || time_center + time_halfwidth > 1.0 {
            return Err(Error::Parameter(format!(
                "time support [{}, {}] must sit inside [0,1]",
                time_center - time_halfwidth,
                time_center + time_halfwidth
            )));
        }
        Ok(TestFunction {
            time_center,
            time_halfwidth,
            space_radius,
            amplitude,
        })
    }

    /// Reference choice used by the acceptance runs: centered bump over the
    /// middle 80% of the time interval, spatial radius one half.
    pub fn default_bump() -> Self {
        TestFunction::new(0.5, 0.4, 0.5, 1.0).unwrap()
    }

    #[inline]
    pub fn time_factor(&self, t: f64) -> f64 {
        std_bump((t - self.time_center) / self.time_halfwidth)
    }

    /// Radial spatial factor at diffusive radius r.
    #[inline]
    pub fn space_factor(&self, r: f64) -> f64 {
        std_bump(r / self.space_radius)
    }

    #[inline]
    pub fn eval(&self, t: f64, x: (f64, f64)) -> f64 {
        self.amplitude * self.time_factor(t) * self.space_factor(x.0.hypot(x.1))
    }

    /// integral of T^2 over (0,1).
    pub fn time_l2_sq(&self) -> f64 {
        let (a, b) = (
            self.time_center - self.time_halfwidth,
            self.time_center + self.time_halfwidth,
        );
        adaptive_simpson(&|t| self.time_factor(t).powi(2), a, b, 1e-12)
    }

    /// integral of S(|x|)^2 over R^2.
    pub fn space_l2_sq(&self) -> f64 {
        let rho = self.space_radius;
        2.0 * std::f64::consts::PI
            * adaptive_simpson(&|r| self.space_factor(r).powi(2) * r, 0.0, rho, 1e-12)
    }

    /// Squared L2 norm of psi on (0,1) x R^2.
    pub fn l2_sq(&self) -> f64 {
        self.amplitude * self.amplitude * self.time_l2_sq() * self.space_l2_sq()
    }

    /// integral of S over R^2 (used by mass cross-checks).
    pub fn space_mass(&self) -> f64 {
        let rho = self.space_radius;
        2.0 * std::f64::consts::PI
            * adaptive_simpson(&|r| self.space_factor(r) * r, 0.0, rho, 1e-12)
    }
}

/// Cube-averaged test function on a lattice of horizon N: psi_bar(n, z) =
/// t_bar[n] * s_bar[z], with s_bar stored packed per sublattice and the
/// nonzero cells also kept as sparse lists for cheap pairing sweeps.
pub struct PsiBarTable {
    pub horizon: u32,
    pub grid: RotGrid,
    pub amplitude: f64,
    t_bar: Vec<f64>,
    s_bar: [Vec<f64>; 2],
    nonzero: [Vec<(usize, f64)>; 2],
    /// Sum of s_bar over all cells of both sublattices.
    pub s_sum: f64,
    /// Sum of s_bar^2 over all cells of both sublattices.
    pub s_sq_sum: f64,
}

impl PsiBarTable {
    pub fn build(psi: &TestFunction, horizon: u32, grid: RotGrid) -> Self {
        let n = horizon as usize;
        let sqrt_n = (horizon as f64).sqrt();
        let (gx, gw) = gauss_legendre(8);
        // time averages: N * integral of T over ((k-1)/N, k/N]
        let mut t_bar = Vec::with_capacity(n);
        for k in 1..=n {
            let (a, b) = ((k - 1) as f64 / n as f64, k as f64 / n as f64);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let avg: f64 = gx
                .iter()
                .zip(&gw)
                .map(|(&x, &w)| w * psi.time_factor(mid + half * x))
                .sum::<f64>()
                * half
                * n as f64;
            t_bar.push(avg);
        }
        // spatial cell integrals of S(|x|/sqrt(N)) by 4x4 Gauss per unit cell
        let (g4x, g4w) = gauss_legendre(4);
        let cutoff_sq = {
            // support radius in lattice units, plus the cell diagonal
            let r = psi.space_radius * sqrt_n + std::f64::consts::SQRT_2;
            r * r
        };
        let mut s_bar = [
            vec![0.0; grid.sites(0)],
            vec![0.0; grid.sites(1)],
        ];
        let mut nonzero = [Vec::new(), Vec::new()];
        let mut s_sum = 0.0;
        let mut s_sq_sum = 0.0;
        for p in [0u8, 1] {
            let w = grid.width(p);
            for iu in 0..w {
                for iv in 0..w {
                    let (z1, z2) = grid.site_xy(p, iu, iv);
                    let d2 = (z1 as f64).powi(2) + (z2 as f64).powi(2);
                    if d2 > cutoff_sq {
                        continue;
                    }
                    let mut cell = 0.0;
                    for (&xu, &wu) in g4x.iter().zip(&g4w) {
                        for (&xv, &wv) in g4x.iter().zip(&g4w) {
                            let x1 = z1 as f64 + 0.5 * xu;
                            let x2 = z2 as f64 + 0.5 * xv;
                            cell += wu * wv * psi.space_factor(x1.hypot(x2) / sqrt_n);
                        }
                    }
                    cell *= 0.25; // jacobian of the unit cell
                    if cell != 0.0 {
                        let idx = iu * w + iv;
                        s_bar[p as usize][idx] = cell;
                        nonzero[p as usize].push((idx, cell));
                        s_sum += cell;
                        s_sq_sum += cell * cell;
                    }
                }
            }
        }
        PsiBarTable {
            horizon,
            grid,
            amplitude: psi.amplitude,
            t_bar,
            s_bar,
            nonzero,
            s_sum,
            s_sq_sum,
        }
    }

    /// Time factor of the cube average, n in 1..=horizon.
    #[inline]
    pub fn t_bar(&self, n: u32) -> f64 {
        self.amplitude * self.t_bar[(n - 1) as usize]
    }

    /// Raw (amplitude-free) time factor.
    #[inline]
    pub fn t_bar_raw(&self, n: u32) -> f64 {
        self.t_bar[(n - 1) as usize]
    }

    #[inline]
    pub fn s_bar_at(&self, p: u8, idx: usize) -> f64 {
        self.s_bar[p as usize][idx]
    }

    /// Sparse nonzero spatial cells of one sublattice, packed index + value.
    #[inline]
    pub fn nonzero(&self, p: u8) -> &[(usize, f64)] {
        &self.nonzero[p as usize]
    }

    /// Cube average at (n, z); zero outside the support or the grid.
    pub fn psi_bar(&self, n: u32, z: (i32, i32)) -> f64 {
        match self.grid.locate(z) {
            None => 0.0,
            Some((p, iu, iv)) => {
                let w = self.grid.width(p);
                self.t_bar(n) * self.s_bar[p as usize][iu * w + iv]
            }
        }
    }

    /// Sum of psi_bar^2 over the whole space-time lattice, divided by N^2:
    /// the exact variance of the white-noise pairing.
    pub fn pair_variance(&self) -> f64 {
        let a2 = self.amplitude * self.amplitude;
        let t_sq: f64 = self.t_bar.iter().map(|t| t * t).sum();
        a2 * t_sq * self.s_sq_sum / (self.horizon as f64).powi(2)
    }
}
