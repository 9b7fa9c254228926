//! Staggered phase-space mesh and the discrete Maxwellian.
//!
//! Space is the periodic interval `[0, x_star)` split into `nx` primal cells
//! with centers `(i + 1/2) dx`; dual cells are shifted by half a cell, so the
//! dual center `i` sits at `(i + 1) dx`, between primal cells `i` and `i + 1`
//! (indices modulo `nx`). Velocity is `[-v_star, v_star]` split into `nv = 2L`
//! cells of equal width, symmetric around zero: velocity cell `k` mirrors
//! cell `nv - 1 - k`.
//!
//! All indices are zero based. Cell `k` here corresponds to the conventional
//! label `j = k - L + 1`, so `j` runs over `-L+1 ..= L`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Smallest primal mesh accepted: the 7-point remainder stencil must not
/// wrap onto itself.
pub const MIN_NX: usize = 8;

/// Geometry parameters of a [`PhaseMesh`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub nx: usize,
    pub nv: usize,
    pub x_star: f64,
    pub v_star: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            nx: 100,
            nv: 256,
            x_star: std::f64::consts::PI,
            v_star: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMesh {
    pub nx: usize,
    pub nv: usize,
    pub x_star: f64,
    pub v_star: f64,
    pub dx: f64,
    pub dv: f64,
    /// Primal centers `x_i`.
    pub x_centers: Vec<f64>,
    /// Dual centers `x_{i+1/2}`.
    pub x_duals: Vec<f64>,
    /// Velocity midpoints, `nv` entries.
    pub v_centers: Vec<f64>,
    /// Velocity interfaces, `nv + 1` entries from `-v_star` to `v_star`.
    pub v_interfaces: Vec<f64>,
    /// `max(v_k, 0)`.
    pub v_plus: Vec<f64>,
    /// `min(v_k, 0)`.
    pub v_minus: Vec<f64>,
}

impl PhaseMesh {
    pub fn new(params: MeshParams) -> Result<Self> {
        build_mesh(params.nx, params.nv, params.x_star, params.v_star)
    }

    pub fn params(&self) -> MeshParams {
        MeshParams {
            nx: self.nx,
            nv: self.nv,
            x_star: self.x_star,
            v_star: self.v_star,
        }
    }

    /// Half the number of velocity cells.
    pub fn half_nv(&self) -> usize {
        self.nv / 2
    }

    /// Periodic wrap of a signed primal or dual index.
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        let n = self.nx as isize;
        // neighbour offsets are the common case, skip the division for them
        if (0..n).contains(&i) {
            i as usize
        } else if (-n..0).contains(&i) {
            (i + n) as usize
        } else if (n..2 * n).contains(&i) {
            (i - n) as usize
        } else {
            i.rem_euclid(n) as usize
        }
    }

    /// Index of the velocity cell mirrored through `v = 0`.
    #[inline]
    pub fn mirror(&self, k: usize) -> usize {
        self.nv - 1 - k
    }

    /// Number of phase-space cells, `nx * nv`.
    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the staggered periodic space mesh and the symmetric velocity mesh.
pub fn build_mesh(nx: usize, nv: usize, x_star: f64, v_star: f64) -> Result<PhaseMesh> {
    if nx < MIN_NX {
        return Err(config_err(format!(
            "nx = {nx} is too small: the 7-point stencil needs at least {MIN_NX} cells"
        )));
    }
    if nv % 2 != 0 || nv < 4 {
        return Err(config_err(format!("nv = {nv} must be even and at least 4")));
    }
    if !(x_star.is_finite() && x_star > 0.0) {
        return Err(config_err(format!("x_star = {x_star} must be positive")));
    }
    if !(v_star.is_finite() && v_star > 0.0) {
        return Err(config_err(format!("v_star = {v_star} must be positive")));
    }

    let dx = x_star / nx as f64;
    let dv = 2.0 * v_star / nv as f64;
    let half = (nv / 2) as f64;

    let x_centers = (0..nx).map(|i| (i as f64 + 0.5) * dx).collect();
    let x_duals = (0..nx).map(|i| (i + 1) as f64 * dx).collect();

    // Offsets from zero are half-integers (centers) or integers (interfaces)
    // times dv, so mirrored entries are exact negations of each other.
    let v_centers: Vec<f64> = (0..nv).map(|k| (k as f64 - half + 0.5) * dv).collect();
    let mut v_interfaces: Vec<f64> = (0..=nv).map(|k| (k as f64 - half) * dv).collect();
    v_interfaces[0] = -v_star;
    v_interfaces[nv] = v_star;

    let v_plus = v_centers.iter().map(|&v| v.max(0.0)).collect();
    let v_minus = v_centers.iter().map(|&v| v.min(0.0)).collect();

    Ok(PhaseMesh {
        nx,
        nv,
        x_star,
        v_star,
        dx,
        dv,
        x_centers,
        x_duals,
        v_centers,
        v_interfaces,
        v_plus,
        v_minus,
    })
}

/// Normalized Gaussian sampled at the velocity midpoints, with its moments.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMaxwellian {
    pub values: Vec<f64>,
    /// `1 / M_k`, used by the weighted perturbation norm.
    pub inv_values: Vec<f64>,
    /// Normalization constant applied to the sampled Gaussian.
    pub scale: f64,
    pub m0: f64,
    pub m2: f64,
    pub m4: f64,
    /// Discrete first moment of the Maxwellian derivative.
    pub m1p: f64,
}

impl DiscreteMaxwellian {
    pub fn new(mesh: &PhaseMesh) -> Self {
        build_maxwellian(mesh)
    }
}

/// Continuous centered Gaussian `exp(-v^2/2) / sqrt(2 pi)`.
#[inline]
pub fn gaussian(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn build_maxwellian(mesh: &PhaseMesh) -> DiscreteMaxwellian {
    let raw: Vec<f64> = mesh.v_centers.iter().map(|&v| gaussian(v)).collect();
    let scale = 1.0 / bracket(&raw, mesh);
    let values: Vec<f64> = raw.iter().map(|&m| scale * m).collect();
    let inv_values = values.iter().map(|&m| 1.0 / m).collect();

    let moment = |p: i32| -> f64 {
        mesh.v_centers
            .iter()
            .zip(&values)
            .map(|(&v, &m)| v.powi(p) * m * mesh.dv)
            .sum()
    };
    let m0 = moment(0);
    let m2 = moment(2);
    let m4 = moment(4);

    // Ghost cells M_{L+1} = M_L and M_{-L} = M_{-L+1}: zero flux at the
    // velocity boundary.
    let nv = mesh.nv;
    let at = |k: isize| values[k.clamp(0, nv as isize - 1) as usize];
    let m1p = (0..nv)
        .map(|k| {
            let k = k as isize;
            mesh.v_centers[k as usize] * (at(k + 1) - at(k - 1)) / (2.0 * mesh.dv) * mesh.dv
        })
        .sum();

    DiscreteMaxwellian {
        values,
        inv_values,
        scale,
        m0,
        m2,
        m4,
        m1p,
    }
}

/// Discrete velocity integral `sum_k f_k dv`.
///
/// Panics if `values` does not hold exactly one entry per velocity cell.
#[inline]
pub fn bracket(values: &[f64], mesh: &PhaseMesh) -> f64 {
    assert_eq!(
        values.len(),
        mesh.nv,
        "bracket expects one value per velocity cell"
    );
    values.iter().sum::<f64>() * mesh.dv
}

/// `sum_k v_k^p M_k dv`.
pub fn discrete_moment(p: u32, maxw: &DiscreteMaxwellian, mesh: &PhaseMesh) -> f64 {
    mesh.v_centers
        .iter()
        .zip(&maxw.values)
        .map(|(&v, &m)| v.powi(p as i32) * m * mesh.dv)
        .sum()
}
