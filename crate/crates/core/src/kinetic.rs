//! Micro-macro finite-volume scheme and its drift-diffusion limit.
//!
//! The density `rho` lives on primal cells and the perturbation `g` on dual
//! cells times velocity cells. One kinetic step first advances `g` with the
//! exponential relaxation update, then advances `rho` with the macroscopic
//! flux built from the new `g`, so the whole step is explicit.
//!
//! The pointwise functions (`flux_position`, `flux_velocity`, `transport`,
//! `split_p`, `split_q`, ...) evaluate single entries straight from the
//! formulas. The solvers use a fused row kernel that computes the same
//! quantities for whole dual columns at once.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::mesh::{DiscreteMaxwellian, PhaseMesh};

/// Time level `n` of the micro-macro unknowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    /// Density on primal cells, `nx` entries.
    pub rho: Vec<f64>,
    /// Perturbation on dual x velocity cells, row-major by dual index.
    pub g: Vec<f64>,
    pub time: f64,
    pub step: u64,
}

impl KineticState {
    pub fn new(rho: Vec<f64>, g: Vec<f64>, mesh: &PhaseMesh) -> Result<Self> {
        if rho.len() != mesh.nx {
            return Err(config_err(format!(
                "rho has {} entries, mesh has {} cells",
                rho.len(),
                mesh.nx
            )));
        }
        if g.len() != mesh.len() {
            return Err(config_err(format!(
                "g has {} entries, expected {}",
                g.len(),
                mesh.len()
            )));
        }
        Ok(Self {
            rho,
            g,
            time: 0.0,
            step: 0,
        })
    }

    /// Decomposes a distribution given pointwise: `rho_i = <f0(x_i, .)>`
    /// on primal cells and `g = f0(x_{i+1/2}, v) - <f0(x_{i+1/2}, .)> M` on
    /// dual cells, so every dual column of `g` is mean free.
    pub fn from_distribution(
        f0: impl Fn(f64, f64) -> f64,
        mesh: &PhaseMesh,
        maxw: &DiscreteMaxwellian,
    ) -> Self {
        let nv = mesh.nv;
        let mut column = vec![0.0; nv];
        let sample = |x: f64, column: &mut [f64]| -> f64 {
            for (c, &v) in column.iter_mut().zip(&mesh.v_centers) {
                *c = f0(x, v);
            }
            crate::mesh::bracket(column, mesh)
        };

        let rho = mesh
            .x_centers
            .iter()
            .map(|&x| sample(x, &mut column))
            .collect();

        let mut g = vec![0.0; mesh.len()];
        for (d, &x) in mesh.x_duals.iter().enumerate() {
            let rho_half = sample(x, &mut column);
            let row = &mut g[d * nv..(d + 1) * nv];
            for ((gk, &fk), &mk) in row.iter_mut().zip(&column).zip(&maxw.values) {
                *gk = fk - rho_half * mk;
            }
        }

        Self {
            rho,
            g,
            time: 0.0,
            step: 0,
        }
    }

    #[inline]
    pub fn g_row(&self, dual: usize, nv: usize) -> &[f64] {
        &self.g[dual * nv..(dual + 1) * nv]
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(&self.g).all(|v| v.is_finite())
    }
}

/// Field, Knudsen number and time step, all sampled on dual cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub e_dual: Vec<f64>,
    pub eps_dual: Vec<f64>,
    pub dt: f64,
}

impl FieldConfig {
    pub fn new(e_dual: Vec<f64>, eps_dual: Vec<f64>, dt: f64, mesh: &PhaseMesh) -> Result<Self> {
        if e_dual.len() != mesh.nx || eps_dual.len() != mesh.nx {
            return Err(config_err("field and epsilon need one value per dual cell"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(config_err(format!("dt = {dt} must be positive")));
        }
        if let Some(e) = eps_dual.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(config_err(format!("epsilon = {e} must be positive")));
        }
        if e_dual.iter().any(|e| !e.is_finite()) {
            return Err(config_err("electric field must be finite"));
        }
        Ok(Self {
            e_dual,
            eps_dual,
            dt,
        })
    }

    /// Homogeneous Knudsen number and zero field.
    pub fn uniform(eps: f64, dt: f64, mesh: &PhaseMesh) -> Result<Self> {
        Self::new(vec![0.0; mesh.nx], vec![eps; mesh.nx], dt, mesh)
    }

    /// Largest time step for which the explicit limit scheme is accepted.
    pub fn parabolic_dt_bound(mesh: &PhaseMesh, maxw: &DiscreteMaxwellian) -> f64 {
        0.25 * mesh.dx * mesh.dx / maxw.m2
    }
}

/// `(max(r, 0), min(r, 0))`.
#[inline]
pub fn upwind_split(r: f64) -> (f64, f64) {
    (0.5 * (r + r.abs()), 0.5 * (r - r.abs()))
}

/// Space flux `F_{i,k}` at the primal center `x_i`, which separates dual
/// cells `i - 1` (left) and `i` (right).
pub fn flux_position(
    state: &KineticState,
    i: usize,
    k: usize,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
) -> f64 {
    let nv = mesh.nv;
    let left = state.g_row(mesh.wrap(i as isize - 1), nv);
    let right = state.g_row(i, nv);
    let upwinded: f64 = left
        .iter()
        .zip(right)
        .enumerate()
        .map(|(q, (&gl, &gr))| mesh.v_plus[q] * gl + mesh.v_minus[q] * gr)
        .sum::<f64>()
        * mesh.dv;
    let (vp, vm) = (mesh.v_plus[k], mesh.v_minus[k]);
    let m = maxw.values[k];
    (vp * left[k] + vm * right[k]) * mesh.dv - m * upwinded * mesh.dv
        + mesh.v_centers[k] * m * state.rho[i] * mesh.dv
}

/// Velocity flux `G` on dual cell `dual` across velocity interface `h`
/// (`h = 0 ..= nv`, interface `h` separating cells `h - 1` and `h`).
/// The two boundary interfaces carry no flux.
pub fn flux_velocity(
    state: &KineticState,
    dual: usize,
    h: usize,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> f64 {
    assert!(h <= mesh.nv, "velocity interface out of range");
    if h == 0 || h == mesh.nv {
        return 0.0;
    }
    let nv = mesh.nv;
    let row = state.g_row(dual, nv);
    let e = fields.e_dual[dual];
    let (ep, em) = upwind_split(e);
    let rho_half = 0.5 * (state.rho[dual] + state.rho[mesh.wrap(dual as isize + 1)]);
    (ep * row[h - 1] + em * row[h]) * mesh.dx
        + e * rho_half * (maxw.values[h] + maxw.values[h - 1]) / 2.0 * mesh.dx
}

/// Transport term `T` on dual cell `dual`, velocity cell `k`.
pub fn transport(
    state: &KineticState,
    dual: usize,
    k: usize,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> f64 {
    let right = mesh.wrap(dual as isize + 1);
    flux_position(state, right, k, mesh, maxw) - flux_position(state, dual, k, mesh, maxw)
        + flux_velocity(state, dual, k + 1, mesh, maxw, fields)
        - flux_velocity(state, dual, k, mesh, maxw, fields)
}

/// Part of the transport term that depends only on `rho` and the field.
///
/// The velocity contribution is the difference of the centered Maxwellian
/// interface values, with zero at the two boundary interfaces.
pub fn split_p(
    state: &KineticState,
    dual: usize,
    k: usize,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> f64 {
    let nv = mesh.nv;
    let m = &maxw.values;
    let rho_l = state.rho[dual];
    let rho_r = state.rho[mesh.wrap(dual as isize + 1)];
    let rho_half = 0.5 * (rho_l + rho_r);
    let centered_diff = if k == 0 {
        (m[1] + m[0]) / 2.0
    } else if k == nv - 1 {
        -(m[k] + m[k - 1]) / 2.0
    } else {
        (m[k + 1] - m[k - 1]) / 2.0
    };
    mesh.v_centers[k] * m[k] * (rho_r - rho_l) * mesh.dv
        + fields.e_dual[dual] * rho_half * centered_diff * mesh.dx
}

/// Part of the transport term that depends only on `g`.
pub fn split_q(
    state: &KineticState,
    dual: usize,
    k: usize,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> f64 {
    let nv = mesh.nv;
    let prev = state.g_row(mesh.wrap(dual as isize - 1), nv);
    let here = state.g_row(dual, nv);
    let next = state.g_row(mesh.wrap(dual as isize + 1), nv);

    let upwind_jump =
        |q: usize| mesh.v_plus[q] * (here[q] - prev[q]) + mesh.v_minus[q] * (next[q] - here[q]);
    let mean_jump: f64 = (0..nv).map(upwind_jump).sum::<f64>() * mesh.dv;
    let space = upwind_jump(k) * mesh.dv - maxw.values[k] * mean_jump * mesh.dv;

    let (ep, em) = upwind_split(fields.e_dual[dual]);
    let velocity = if nv == 1 {
        0.0
    } else if k == 0 {
        ep * here[0] + em * here[1]
    } else if k == nv - 1 {
        -(ep * here[k - 1] + em * here[k])
    } else {
        ep * (here[k] - here[k - 1]) + em * (here[k + 1] - here[k])
    };
    space + velocity * mesh.dx
}

/// Macroscopic flux `-(1/eps) <v g>` of one dual column.
#[inline]
pub fn macro_flux(g_column: &[f64], eps: f64, mesh: &PhaseMesh) -> f64 {
    let moment: f64 = g_column
        .iter()
        .zip(&mesh.v_centers)
        .map(|(&g, &v)| v * g)
        .sum();
    -(moment * mesh.dv) / eps
}

/// Drift-diffusion flux on dual cell `dual`.
#[inline]
pub fn limit_flux(
    rho: &[f64],
    dual: usize,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> f64 {
    let rho_l = rho[dual];
    let rho_r = rho[mesh.wrap(dual as isize + 1)];
    let rho_half = 0.5 * (rho_l + rho_r);
    maxw.m2 / mesh.dx * (rho_r - rho_l) + maxw.m1p * fields.e_dual[dual] * rho_half
}

/// [`limit_flux`] on every dual cell, without per-index wrapping.
pub(crate) fn limit_fluxes_into(
    rho: &[f64],
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
    out: &mut [f64],
) {
    let nx = mesh.nx;
    let diffusion = maxw.m2 / mesh.dx;
    let flux = |l: f64, r: f64, e: f64| diffusion * (r - l) + maxw.m1p * e * (0.5 * (l + r));
    for d in 0..nx - 1 {
        out[d] = flux(rho[d], rho[d + 1], fields.e_dual[d]);
    }
    out[nx - 1] = flux(rho[nx - 1], rho[0], fields.e_dual[nx - 1]);
}

/// Conservative update of one primal cell from the fluxes on its two sides.
#[inline]
pub(crate) fn conservative_update(rho: f64, right: f64, left: f64, ratio: f64) -> f64 {
    rho + ratio * (right - left)
}

/// Advances `g` by one relaxed micro step. Returns `g^{n+1}`.
pub fn step_micro(
    state: &KineticState,
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> Vec<f64> {
    let relax = Relaxation::new(mesh, fields);
    let mut ws = Workspace::new(mesh, maxw);
    let active = vec![true; mesh.nx];
    let mut g = state.g.clone();
    advance_micro(
        mesh, maxw, fields, &relax, &state.rho, &mut g, &active, &mut ws,
    );
    g
}

/// Density update from a state whose `g` already holds `g^{n+1}`.
pub fn step_macro(state: &KineticState, mesh: &PhaseMesh, fields: &FieldConfig) -> Vec<f64> {
    let nv = mesh.nv;
    let fluxes: Vec<f64> = (0..mesh.nx)
        .map(|d| macro_flux(state.g_row(d, nv), fields.eps_dual[d], mesh))
        .collect();
    let ratio = fields.dt / mesh.dx;
    (0..mesh.nx)
        .map(|i| {
            conservative_update(
                state.rho[i],
                fluxes[i],
                fluxes[mesh.wrap(i as isize - 1)],
                ratio,
            )
        })
        .collect()
}

/// One step of the explicit drift-diffusion scheme.
pub fn step_limit(
    rho: &[f64],
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
) -> Vec<f64> {
    let mut out = vec![0.0; mesh.nx];
    let mut fluxes = vec![0.0; mesh.nx];
    advance_limit(mesh, maxw, fields, rho, &mut fluxes, &mut out);
    out
}

pub(crate) fn advance_limit(
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
    rho: &[f64],
    fluxes: &mut [f64],
    out: &mut [f64],
) {
    let nx = mesh.nx;
    limit_fluxes_into(rho, mesh, maxw, fields, fluxes);
    let ratio = fields.dt / mesh.dx;
    out[0] = conservative_update(rho[0], fluxes[0], fluxes[nx - 1], ratio);
    for i in 1..nx {
        out[i] = conservative_update(rho[i], fluxes[i], fluxes[i - 1], ratio);
    }
}

/// Per-dual relaxation factors of the exponential update, evaluated once
/// since the Knudsen number does not change in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    /// `exp(-dt / eps^2)`.
    pub decay: Vec<f64>,
    /// `eps (1 - exp(-dt / eps^2)) / (dx dv)`.
    pub gain: Vec<f64>,
}

impl Relaxation {
    pub fn new(mesh: &PhaseMesh, fields: &FieldConfig) -> Self {
        let mut decay = Vec::with_capacity(mesh.nx);
        let mut gain = Vec::with_capacity(mesh.nx);
        // Homogeneous eps is the common case: reuse the last exponential.
        let mut cached: Option<(f64, f64)> = None;
        for &eps in &fields.eps_dual {
            let e = match cached {
                Some((ce, val)) if ce == eps => val,
                _ => {
                    let val = (-fields.dt / (eps * eps)).exp();
                    cached = Some((eps, val));
                    val
                }
            };
            decay.push(e);
            gain.push(eps * (1.0 - e) / (mesh.dx * mesh.dv));
        }
        Self { decay, gain }
    }
}

/// Scratch buffers for the fused transport kernel.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    brackets: Vec<f64>,
    transport: Vec<f64>,
    flux_lo: Vec<f64>,
    flux_hi: Vec<f64>,
    flux_first: Vec<f64>,
    vflux: Vec<f64>,
    zeros: Vec<f64>,
    /// Centered Maxwellian at velocity interfaces, zero at both ends.
    m_interface: Vec<f64>,
    /// `v_j M_j`.
    vm: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(mesh: &PhaseMesh, maxw: &DiscreteMaxwellian) -> Self {
        let nv = mesh.nv;
        let mut m_interface = vec![0.0; nv + 1];
        for h in 1..nv {
            m_interface[h] = (maxw.values[h] + maxw.values[h - 1]) / 2.0;
        }
        let vm = mesh
            .v_centers
            .iter()
            .zip(&maxw.values)
            .map(|(v, m)| v * m)
            .collect();
        Self {
            brackets: vec![0.0; mesh.nx],
            transport: vec![0.0; nv],
            flux_lo: vec![0.0; nv],
            flux_hi: vec![0.0; nv],
            flux_first: vec![0.0; nv],
            vflux: vec![0.0; nv + 1],
            zeros: vec![0.0; nv],
            m_interface,
            vm,
        }
    }
}

/// Relaxed micro update on every dual cell flagged in `active`. Rows of
/// inactive dual cells are read as zero and left untouched in storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advance_micro(
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
    relax: &Relaxation,
    rho: &[f64],
    g: &mut [f64],
    active: &[bool],
    ws: &mut Workspace,
) {
    sweep(mesh, maxw, fields, rho, g, active, ws, |d, t, row| {
        let (e, c) = (relax.decay[d], relax.gain[d]);
        for (gk, &tk) in row.iter_mut().zip(t) {
            *gk = *gk * e - c * tk;
        }
    });
}

/// Visits every active dual cell in order with its transport row `T`
/// (computed from the time-`n` data) and its mutable `g` row. `apply` may
/// overwrite the row: every later row of `T` only reads values that are
/// still at time `n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep(
    mesh: &PhaseMesh,
    maxw: &DiscreteMaxwellian,
    fields: &FieldConfig,
    rho: &[f64],
    g: &mut [f64],
    active: &[bool],
    ws: &mut Workspace,
    mut apply: impl FnMut(usize, &[f64], &mut [f64]),
) {
    let (nx, nv) = (mesh.nx, mesh.nv);
    let (dv, dx) = (mesh.dv, mesh.dx);
    let Workspace {
        brackets,
        transport,
        flux_lo,
        flux_hi,
        flux_first,
        vflux,
        zeros,
        m_interface,
        vm,
    } = ws;
    let zeros: &[f64] = zeros;
    let left_of = |i: usize| if i == 0 { nx - 1 } else { i - 1 };
    let right_of = |i: usize| if i + 1 == nx { 0 } else { i + 1 };
    let (vp, vmin, m) = (&mesh.v_plus[..nv], &mesh.v_minus[..nv], &maxw.values[..nv]);
    let vm = &vm[..nv];
    let transport = &mut transport[..nv];

    // Upwinded mean flux <v+ g_{i-1/2} + v- g_{i+1/2}> at each primal center
    // adjacent to an active dual cell.
    {
        let row = |d: usize| -> &[f64] {
            if active[d] {
                &g[d * nv..(d + 1) * nv]
            } else {
                zeros
            }
        };
        for i in 0..nx {
            let l = left_of(i);
            if !(active[l] || active[i]) {
                continue;
            }
            let (gl, gr) = (row(l), row(i));
            let acc: f64 = gl
                .iter()
                .zip(gr)
                .zip(vp.iter().zip(vmin))
                .map(|((a, b), (p, n))| p * a + n * b)
                .sum();
            brackets[i] = acc * dv;
        }
    }

    // Space flux row at primal center i from the current contents of g.
    let flux_row = |g: &[f64], i: usize, out: &mut [f64]| {
        let l = left_of(i);
        let gl = if active[l] {
            &g[l * nv..(l + 1) * nv]
        } else {
            zeros
        };
        let gr = if active[i] {
            &g[i * nv..(i + 1) * nv]
        } else {
            zeros
        };
        let (b, r) = (brackets[i], rho[i]);
        let out = &mut out[..nv];
        let (gl, gr) = (&gl[..nv], &gr[..nv]);
        for q in 0..nv {
            out[q] = (vp[q] * gl[q] + vmin[q] * gr[q]) * dv - m[q] * b * dv + vm[q] * r * dv;
        }
    };

    // The last dual cell needs the flux at x_0 before row 0 is overwritten.
    if active[nx - 1] {
        flux_row(g, 0, flux_first);
    }

    let mut lo_valid_for: Option<usize> = None;
    for d in 0..nx {
        if !active[d] {
            continue;
        }
        if lo_valid_for != Some(d) {
            flux_row(g, d, flux_lo);
        }
        let r = right_of(d);
        let hi: &[f64] = if r == 0 {
            flux_first
        } else {
            flux_row(g, r, flux_hi);
            flux_hi
        };

        let e = fields.e_dual[d];
        if e == 0.0 {
            for ((t, h), l) in transport.iter_mut().zip(hi).zip(flux_lo.iter()) {
                *t = h - l;
            }
        } else {
            let (ep, em) = upwind_split(e);
            let gd = &g[d * nv..(d + 1) * nv];
            let rho_half = 0.5 * (rho[d] + rho[r]);
            vflux[0] = 0.0;
            vflux[nv] = 0.0;
            for h in 1..nv {
                vflux[h] = (ep * gd[h - 1] + em * gd[h]) * dx + e * rho_half * m_interface[h] * dx;
            }
            for q in 0..nv {
                transport[q] = hi[q] - flux_lo[q] + vflux[q + 1] - vflux[q];
            }
        }
        apply(d, transport, &mut g[d * nv..(d + 1) * nv]);
        if r != 0 {
            std::mem::swap(flux_lo, flux_hi);
            lo_valid_for = Some(r);
        }
    }
}

/// Common immutable inputs of every solver.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: PhaseMesh,
    pub maxw: DiscreteMaxwellian,
    pub fields: FieldConfig,
    pub relax: Relaxation,
}

impl Discretization {
    pub fn new(mesh: PhaseMesh, fields: FieldConfig) -> Self {
        let maxw = DiscreteMaxwellian::new(&mesh);
        let relax = Relaxation::new(&mesh, &fields);
        Self {
            mesh,
            maxw,
            fields,
            relax,
        }
    }

    /// `dt / dx`.
    pub fn ratio(&self) -> f64 {
        self.fields.dt / self.mesh.dx
    }
}

/// Full micro-macro solver.
#[derive(Debug, Clone)]
pub struct KineticSolver {
    disc: Discretization,
    ws: Workspace,
    active: Vec<bool>,
    fluxes: Vec<f64>,
    rho_next: Vec<f64>,
}

impl KineticSolver {
    pub fn new(disc: Discretization) -> Self {
        let ws = Workspace::new(&disc.mesh, &disc.maxw);
        let nx = disc.mesh.nx;
        Self {
            disc,
            ws,
            active: vec![true; nx],
            fluxes: vec![0.0; nx],
            rho_next: vec![0.0; nx],
        }
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// Advances `state` by one time step: `g` first, then `rho` from the
    /// macroscopic flux of the new `g`.
    pub fn step(&mut self, state: &mut KineticState) {
        let Discretization {
            mesh,
            maxw,
            fields,
            relax,
        } = &self.disc;
        advance_micro(
            mesh,
            maxw,
            fields,
            relax,
            &state.rho,
            &mut state.g,
            &self.active,
            &mut self.ws,
        );
        let nv = mesh.nv;
        for (d, j) in self.fluxes.iter_mut().enumerate() {
            *j = macro_flux(&state.g[d * nv..(d + 1) * nv], fields.eps_dual[d], mesh);
        }
        let ratio = self.disc.ratio();
        let nx = mesh.nx;
        for i in 0..nx {
            let left = if i == 0 { nx - 1 } else { i - 1 };
            self.rho_next[i] =
                conservative_update(state.rho[i], self.fluxes[i], self.fluxes[left], ratio);
        }
        std::mem::swap(&mut state.rho, &mut self.rho_next);
        state.step += 1;
        state.time = state.step as f64 * fields.dt;
    }

    pub fn try_step(&mut self, state: &mut KineticState) -> Result<()> {
        self.step(state);
        ensure_finite(state)
    }
}

/// Explicit drift-diffusion solver on the density alone.
#[derive(Debug, Clone)]
pub struct LimitSolver {
    disc: Discretization,
    fluxes: Vec<f64>,
    rho_next: Vec<f64>,
}

impl LimitSolver {
    pub fn new(disc: Discretization) -> Self {
        let nx = disc.mesh.nx;
        Self {
            disc,
            fluxes: vec![0.0; nx],
            rho_next: vec![0.0; nx],
        }
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// Advances only `state.rho`; `state.g` is not read.
    pub fn step(&mut self, state: &mut KineticState) {
        let d = &self.disc;
        advance_limit(
            &d.mesh,
            &d.maxw,
            &d.fields,
            &state.rho,
            &mut self.fluxes,
            &mut self.rho_next,
        );
        std::mem::swap(&mut state.rho, &mut self.rho_next);
        state.step += 1;
        state.time = state.step as f64 * d.fields.dt;
    }

    pub fn try_step(&mut self, state: &mut KineticState) -> Result<()> {
        self.step(state);
        ensure_finite(state)
    }
}

pub(crate) fn ensure_finite(state: &KineticState) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step: state.step,
            time: state.time,
        })
    }
}
