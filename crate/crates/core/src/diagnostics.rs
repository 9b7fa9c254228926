//! Post-processing: reconstruction of `f`, the global equilibrium, weighted
//! norms, mass and exponential decay rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::KineticState;
use crate::mesh::{DiscreteMaxwellian, PhaseMesh};

/// Global equilibrium `F = M0 phi(x) M(v)` sampled on primal x velocity cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReference {
    pub f_grid: Vec<f64>,
    pub inv_f_grid: Vec<f64>,
    pub m0: f64,
    pub phi: Vec<f64>,
    /// `<F>` on each primal cell, the equilibrium density.
    pub rho: Vec<f64>,
}

impl EquilibriumReference {
    /// `phi = exp(-V) / sum(exp(-V) dx)` on primal centers.
    pub fn new(
        mesh: &PhaseMesh,
        maxw: &DiscreteMaxwellian,
        potential: impl Fn(f64) -> f64,
        m0: f64,
    ) -> Self {
        let weights: Vec<f64> = mesh
            .x_centers
            .iter()
            .map(|&x| (-potential(x)).exp())
            .collect();
        let norm: f64 = weights.iter().sum::<f64>() * mesh.dx;
        let phi: Vec<f64> = weights.iter().map(|w| w / norm).collect();
        let mut f_grid = Vec::with_capacity(mesh.len());
        for &p in &phi {
            f_grid.extend(maxw.values.iter().map(|m| m0 * p * m));
        }
        let inv_f_grid = f_grid.iter().map(|f| 1.0 / f).collect();
        let rho = phi.iter().map(|p| m0 * p).collect();
        Self {
            f_grid,
            inv_f_grid,
            m0,
            phi,
            rho,
        }
    }
}

/// `f_ij = rho_i M_j + (g_{i-1/2,j} + g_{i+1/2,j}) / 2`.
pub fn reconstruct_f(
    state: &KineticState,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
) -> Vec<f64> {
    let nv = mesh.nv;
    let mut f = vec![0.0; mesh.len()];
    for i in 0..mesh.nx {
        let gl = state.g_row(mesh.wrap(i as isize - 1), nv);
        let gr = state.g_row(i, nv);
        let row = &mut f[i * nv..(i + 1) * nv];
        for j in 0..nv {
            row[j] = state.rho[i] * maxw.values[j] + 0.5 * (gl[j] + gr[j]);
        }
    }
    f
}

/// `sqrt(sum f_ij^2 dx dv / F_ij)`.
pub fn norm_weighted(values: &[f64], eq: &EquilibriumReference, mesh: &PhaseMesh) -> f64 {
    assert_eq!(values.len(), eq.f_grid.len(), "one value per phase cell");
    let s: f64 = values
        .iter()
        .zip(&eq.inv_f_grid)
        .map(|(f, w)| f * f * w)
        .sum();
    (s * mesh.dx * mesh.dv).sqrt()
}

/// `sqrt(sum v_i^2 dx)`.
pub fn norm_l2_space(values: &[f64], mesh: &PhaseMesh) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() * mesh.dx).sqrt()
}

/// `sum rho_i dx`.
pub fn total_mass(rho: &[f64], mesh: &PhaseMesh) -> f64 {
    rho.iter().sum::<f64>() * mesh.dx
}

/// Least-squares slope of `ln(norm)` against `t` over samples with `t` in
/// the closed `window`.
pub fn decay_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if pts.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "decay window [{}, {}] holds {} samples, need at least 10",
            window.0,
            window.1,
            pts.len()
        )));
    }
    if let Some((t, n)) = pts.iter().find(|(_, n)| !(*n > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "non-positive norm {n} at t = {t}"
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, v) in &pts {
        sxy += (t - tm) * (v.ln() - lm);
        sxx += (t - tm) * (t - tm);
    }
    Ok(sxy / sxx)
}

/// Shrinks `window` so it ends before the series first drops below
/// `floor`, where round-off would flatten the slope.
pub fn truncate_window(series: &[(f64, f64)], window: (f64, f64), floor: f64) -> (f64, f64) {
    let end = series
        .iter()
        .find(|(t, n)| *t >= window.0 && *n < floor)
        .map(|(t, _)| t.min(window.1))
        .unwrap_or(window.1);
    (window.0, end)
}

/// Default fit window for the decay of `||f - F||` at a given `eps`.
pub fn default_decay_window(eps: f64) -> (f64, f64) {
    if eps >= 0.5 {
        (0.5, 5.0)
    } else {
        (0.1, 2.0)
    }
}

/// One row of the diagnostics series, recorded every `diag_every` steps and
/// at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub step: u64,
    pub t: f64,
    pub mass: f64,
    pub delta_m: f64,
    #[serde(with = "nan_as_null")]
    pub norm_f_minus_f: f64,
    #[serde(with = "nan_as_null")]
    pub norm_g: f64,
    #[serde(with = "nan_as_null")]
    pub norm_rho_minus_rho_f: f64,
    pub n_kinetic_cells: usize,
}

/// JSON has no NaN; a NaN norm travels as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl DiagnosticsRow {
    pub const HEADER: [&'static str; 8] = [
        "step",
        "t",
        "mass",
        "delta_m",
        "norm_f_minus_F",
        "norm_g",
        "norm_rho_minus_rhoF",
        "n_kinetic_cells",
    ];
}

/// Norms of one state against the equilibrium, computed without building
/// the full reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateNorms {
    pub f_minus_f: f64,
    pub g: f64,
    pub rho_minus_rho_f: f64,
}

pub fn state_norms(
    state: &KineticState,
    eq: &EquilibriumReference,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
) -> StateNorms {
    let nv = mesh.nv;
    let (mut sf, mut sg, mut sr) = (0.0, 0.0, 0.0);
    for i in 0..mesh.nx {
        let gl = state.g_row(mesh.wrap(i as isize - 1), nv);
        let gr = state.g_row(i, nv);
        let w = &eq.inv_f_grid[i * nv..(i + 1) * nv];
        let fe = &eq.f_grid[i * nv..(i + 1) * nv];
        let r = state.rho[i];
        for j in 0..nv {
            let g = 0.5 * (gl[j] + gr[j]);
            let d = r * maxw.values[j] + g - fe[j];
            sf += d * d * w[j];
            sg += g * g * w[j];
        }
        let dr = r - eq.rho[i];
        sr += dr * dr;
    }
    let cell = mesh.dx * mesh.dv;
    StateNorms {
        f_minus_f: (sf * cell).sqrt(),
        g: (sg * cell).sqrt(),
        rho_minus_rho_f: (sr * mesh.dx).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use std::f64::consts::PI;

    fn setup() -> (PhaseMesh, DiscreteMaxwellian) {
        let mesh = build_mesh(16, 32, PI, 8.0).unwrap();
        let maxw = DiscreteMaxwellian::new(&mesh);
        (mesh, maxw)
    }

    #[test]
    fn reconstruction_of_equilibrium_state() {
        let (mesh, maxw) = setup();
        let state = KineticState::new(vec![1.0; 16], vec![0.0; mesh.len()], &mesh).unwrap();
        let f = reconstruct_f(&state, &mesh, &maxw);
        for i in 0..16 {
            assert_eq!(&f[i * 32..(i + 1) * 32], &maxw.values[..]);
        }
    }

    #[test]
    fn reconstruction_with_space_constant_g() {
        let (mesh, maxw) = setup();
        let column: Vec<f64> = (0..32).map(|j| (j as f64).sin()).collect();
        let g: Vec<f64> = (0..16).flat_map(|_| column.clone()).collect();
        let rho: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
        let state = KineticState::new(rho.clone(), g, &mesh).unwrap();
        let f = reconstruct_f(&state, &mesh, &maxw);
        for i in 0..16 {
            for j in 0..32 {
                let expected = rho[i] * maxw.values[j] + column[j];
                assert!((f[i * 32 + j] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn equilibrium_without_potential_is_flat() {
        let (mesh, maxw) = setup();
        let eq = EquilibriumReference::new(&mesh, &maxw, |_| 0.0, 2.0);
        for p in &eq.phi {
            assert!((p - 1.0 / PI).abs() < 1e-15);
        }
        let mass: f64 = eq.f_grid.iter().sum::<f64>() * mesh.dx * mesh.dv;
        assert!((mass - 2.0).abs() < 1e-13);
        assert!(eq.f_grid.iter().all(|&f| f > 0.0));
    }

    #[test]
    fn weighted_norm_examples() {
        let (mesh, maxw) = setup();
        let eq = EquilibriumReference::new(&mesh, &maxw, |x| -(2.0 * x).sin() / 4.0, 3.0);
        assert_eq!(norm_weighted(&vec![0.0; mesh.len()], &eq, &mesh), 0.0);
        let n = norm_weighted(&eq.f_grid, &eq, &mesh);
        assert!((n - 3f64.sqrt()).abs() < 1e-13);
        let scaled: Vec<f64> = eq.f_grid.iter().map(|f| -2.5 * f).collect();
        assert!((norm_weighted(&scaled, &eq, &mesh) - 2.5 * n).abs() < 1e-13);
    }

    #[test]
    fn space_norm_examples() {
        let mesh = build_mesh(100, 4, PI, 8.0).unwrap();
        assert_eq!(norm_l2_space(&[0.0; 100], &mesh), 0.0);
        assert!((norm_l2_space(&[-2.0; 100], &mesh) - 2.0 * PI.sqrt()).abs() < 1e-13);
        let c: Vec<f64> = mesh.x_centers.iter().map(|x| (2.0 * x).cos()).collect();
        assert!((norm_l2_space(&c, &mesh) - (PI / 2.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn mass_examples() {
        let mesh = build_mesh(100, 4, PI, 8.0).unwrap();
        assert!((total_mass(&[1.0; 100], &mesh) - PI).abs() < 1e-13);
        assert_eq!(total_mass(&[0.0; 100], &mesh), 0.0);
        let case1: Vec<f64> = mesh
            .x_centers
            .iter()
            .map(|x| 1.0 + (2.0 * x).cos())
            .collect();
        assert!((total_mass(&case1, &mesh) - PI).abs() < 1e-13);
    }

    #[test]
    fn decay_rate_of_exact_exponentials() {
        let series: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let t = k as f64 * 0.1;
                (t, (-2.0 * t).exp())
            })
            .collect();
        assert!((decay_rate(&series, (0.0, 10.0)).unwrap() + 2.0).abs() < 1e-12);
        let series: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let t = k as f64 * 0.01;
                (t, 5.0 * (-7.65 * t).exp())
            })
            .collect();
        assert!((decay_rate(&series, (0.0, 1.0)).unwrap() + 7.65).abs() < 1e-11);
    }

    #[test]
    fn decay_rate_rejects_bad_windows() {
        let series: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 1.0)).collect();
        assert!(decay_rate(&series, (0.0, 5.0)).is_err());
        let mut with_zero = series.clone();
        with_zero[3].1 = 0.0;
        assert!(decay_rate(&with_zero, (0.0, 19.0)).is_err());
    }

    #[test]
    fn window_truncation_at_round_off_floor() {
        let series: Vec<(f64, f64)> = (0..50)
            .map(|k| (k as f64, (-(k as f64)).exp().max(1e-15)))
            .collect();
        let w = truncate_window(&series, (1.0, 40.0), 1e-12);
        assert_eq!(w, (1.0, 28.0));
        assert_eq!(truncate_window(&series, (1.0, 10.0), 1e-12), (1.0, 10.0));
    }

    #[test]
    fn streaming_norms_match_reconstruction() {
        let (mesh, maxw) = setup();
        let eq = EquilibriumReference::new(&mesh, &maxw, |x| -(2.0 * x).sin() / 4.0, 3.0);
        let rho: Vec<f64> = mesh.x_centers.iter().map(|x| 2.0 + x.cos()).collect();
        let g: Vec<f64> = (0..mesh.len()).map(|k| 1e-3 * (k as f64).cos()).collect();
        let state = KineticState::new(rho, g, &mesh).unwrap();
        let f = reconstruct_f(&state, &mesh, &maxw);
        let diff: Vec<f64> = f.iter().zip(&eq.f_grid).map(|(a, b)| a - b).collect();
        let n = state_norms(&state, &eq, &mesh, &maxw);
        assert!((n.f_minus_f - norm_weighted(&diff, &eq, &mesh)).abs() < 1e-12);
        let dr: Vec<f64> = state.rho.iter().zip(&eq.rho).map(|(a, b)| a - b).collect();
        assert!((n.rho_minus_rho_f - norm_l2_space(&dr, &mesh)).abs() < 1e-12);
    }
}
