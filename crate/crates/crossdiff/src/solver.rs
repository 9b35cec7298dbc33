//! Implicit time integration: backward Euler with a Newton inner solver for the
//! (regularized) forward system u_t = div grad(P(u)) + f(u), and the backward
//! linear dual system with segment-averaged coefficients. Linear solves are a
//! block-tridiagonal direct factorization in 1D and diagonally preconditioned
//! CGLS on the normal equations in 2D.

use crate::error::{CrossDiffError, Result};
use crate::grid::{self, laplacian, BoundaryTag, Grid, GridField};
use crate::linalg::{self, mat_t_vec, mat_vec, BlockTridiag};
use crate::model::{DiffusionModel, ReactionModel};
use serde::Serialize;

/// Relative tolerance of the inner linear solves (normal-equation CG).
const LIN_REL_TOL: f64 = 1e-11;

/// 5-node Gauss-Legendre rule mapped to [0, 1], used for the s-integrals of
/// the dual coefficients along the segment s u_a + (1-s) u_b.
const GL5: [(f64, f64); 5] = [
    (0.046910077030668074, 0.11846344252809454),
    (0.23076534494715845, 0.23931433524968324),
    (0.5, 0.28444444444444444),
    (0.7692346550528415, 0.23931433524968324),
    (0.9530899229693319, 0.11846344252809454),
];

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverControls {
    /// Nominal time step; the run uses T / round(T / dt) exactly.
    pub dt: f64,
    pub t_final: f64,
    /// Newton stopping: residual L2 norm <= atol + rtol * initial residual.
    pub newton_atol: f64,
    pub newton_rtol: f64,
    pub newton_max_iter: usize,
    /// Admissible step-halving doublings when a step fails.
    pub halving_limit: usize,
    /// Snapshots every `snapshot_stride` accepted steps (plus t = 0 and t = T).
    pub snapshot_stride: usize,
}

impl SolverControls {
    pub fn new(dt: f64, t_final: f64) -> Self {
        SolverControls {
            dt,
            t_final,
            newton_atol: 1e-12,
            newton_rtol: 1e-12,
            newton_max_iter: 30,
            halving_limit: 8,
            snapshot_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(CrossDiffError::invalid("dt", "must be positive"));
        }
        if !(self.t_final > 0.0) {
            return Err(CrossDiffError::invalid("t_final", "must be positive"));
        }
        if !(self.newton_atol > 0.0 && self.newton_rtol >= 0.0) {
            return Err(CrossDiffError::invalid("newton_tol", "must be positive"));
        }
        if self.snapshot_stride == 0 {
            return Err(CrossDiffError::invalid("snapshot_stride", "must be >= 1"));
        }
        Ok(())
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub dt_used: f64,
    pub substeps: usize,
}

/// Time-ordered snapshots of a forward run plus per-step solver diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<(f64, GridField)>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub model: DiffusionModel,
    pub reaction: ReactionModel,
    pub controls: SolverControls,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|(t, _)| *t).collect()
    }

    pub fn final_state(&self) -> &GridField {
        &self.snapshots.last().expect("trajectory has snapshots").1
    }

    pub fn grid(&self) -> Grid {
        self.snapshots[0].1.grid
    }

    /// Synthetic trajectory from given snapshots; used by tests and the
    /// frozen-coefficient duality instruments.
    pub fn from_snapshots(
        snapshots: Vec<(f64, GridField)>,
        model: DiffusionModel,
        reaction: ReactionModel,
        controls: SolverControls,
    ) -> Self {
        Trajectory {
            snapshots,
            diagnostics: Vec::new(),
            model,
            reaction,
            controls,
        }
    }

    pub fn same_mesh(&self, other: &Trajectory) -> bool {
        if self.snapshots.len() != other.snapshots.len() {
            return false;
        }
        if self.grid() != other.grid() {
            return false;
        }
        self.snapshots
            .iter()
            .zip(&other.snapshots)
            .all(|((ta, _), (tb, _))| (ta - tb).abs() <= 1e-12 * (1.0 + ta.abs()))
    }
}

/// Backward dual snapshots ordered from T down to 0; the terminal snapshot is
/// the datum psi bit-for-bit.
#[derive(Debug, Clone)]
pub struct DualTrajectory {
    /// (t, Psi(t)) with strictly decreasing t.
    pub snapshots: Vec<(f64, GridField)>,
    pub terminal: GridField,
    pub lambda_floor_a: f64,
    pub lambda_floor_b: f64,
    pub coefficient_sources: (String, String),
}

impl DualTrajectory {
    /// Psi at the forward snapshot index j (0 = initial time).
    pub fn at_forward_index(&self, j: usize) -> &GridField {
        let last = self.snapshots.len() - 1;
        &self.snapshots[last - j].1
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Stencil helpers on cell-major data (linear-solver layout)
// ---------------------------------------------------------------------------

/// Diagonal weight of the discrete Laplacian at cell (ix, iy), including the
/// ghost reflection contributions.
fn lap_diag_weight(g: &Grid, bc: BoundaryTag, ix: usize, iy: usize) -> f64 {
    let ghost = match bc {
        BoundaryTag::DirichletZero => -1.0,
        BoundaryTag::NeumannZero => 1.0,
    };
    let (nx, ny) = (g.extent[0], g.extent[1]);
    let ihx2 = 1.0 / (g.h[0] * g.h[0]);
    let mut w = -2.0 * ihx2;
    if ix == 0 {
        w += ghost * ihx2;
    }
    if ix == nx - 1 {
        w += ghost * ihx2;
    }
    if g.dim == 2 {
        let ihy2 = 1.0 / (g.h[1] * g.h[1]);
        w += -2.0 * ihy2;
        if iy == 0 {
            w += ghost * ihy2;
        }
        if iy == ny - 1 {
            w += ghost * ihy2;
        }
    }
    w
}

/// Discrete Laplacian acting on cell-major data (m components per cell).
fn lap_cell_major(g: &Grid, bc: BoundaryTag, m: usize, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.extent[0], g.extent[1]);
    let ihx2 = 1.0 / (g.h[0] * g.h[0]);
    let ihy2 = 1.0 / (g.h[1] * g.h[1]);
    for iy in 0..ny {
        for ix in 0..nx {
            let cell = iy * nx + ix;
            let (il, sl) = grid::reflect_index(ix as isize - 1, nx, bc);
            let (ir, sr) = grid::reflect_index(ix as isize + 1, nx, bc);
            let left = (iy * nx + il) * m;
            let right = (iy * nx + ir) * m;
            let here = cell * m;
            for c in 0..m {
                dst[here + c] =
                    (sl * src[left + c] - 2.0 * src[here + c] + sr * src[right + c]) * ihx2;
            }
            if g.dim == 2 {
                let (jd, sd) = grid::reflect_index(iy as isize - 1, ny, bc);
                let (ju, su) = grid::reflect_index(iy as isize + 1, ny, bc);
                let down = (jd * nx + ix) * m;
                let up = (ju * nx + ix) * m;
                for c in 0..m {
                    dst[here + c] +=
                        (sd * src[down + c] - 2.0 * src[here + c] + su * src[up + c]) * ihy2;
                }
            }
        }
    }
}

fn field_to_cell_major(f: &GridField) -> Vec<f64> {
    let cells = f.grid.cells();
    let mut out = vec![0.0; f.m * cells];
    for cell in 0..cells {
        for c in 0..f.m {
            out[cell * f.m + c] = f.data[c * cells + cell];
        }
    }
    out
}

fn cell_major_to_field(grid: Grid, m: usize, bc: BoundaryTag, data: &[f64]) -> GridField {
    let cells = grid.cells();
    let mut f = GridField::zeros(grid, m, bc);
    for cell in 0..cells {
        for c in 0..m {
            f.data[c * cells + cell] = data[cell * m + c];
        }
    }
    f
}

/// Inverse-square spacings of the in-domain stencil neighbors of a cell.
fn neighbor_weights(g: &Grid, ix: usize, iy: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(4);
    let ihx2 = 1.0 / (g.h[0] * g.h[0]);
    if ix > 0 {
        out.push(ihx2);
    }
    if ix + 1 < g.extent[0] {
        out.push(ihx2);
    }
    if g.dim == 2 {
        let ihy2 = 1.0 / (g.h[1] * g.h[1]);
        if iy > 0 {
            out.push(ihy2);
        }
        if iy + 1 < g.extent[1] {
            out.push(ihy2);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Forward implicit step
// ---------------------------------------------------------------------------

/// Residual F(v) = v - dt lap(P(v)) - dt f(v) - u.
fn forward_residual(
    v: &GridField,
    u: &GridField,
    dt: f64,
    model: &DiffusionModel,
    reaction: &ReactionModel,
) -> GridField {
    let m = v.m;
    let pv = v.map_pointwise(m, |cell, out| model.p(cell, out));
    let lap_pv = laplacian(&pv);
    let mut res = v.clone();
    res.axpy(-dt, &lap_pv);
    if !reaction.is_zero() {
        let fv = v.map_pointwise(m, |cell, out| reaction.f(cell, out));
        res.axpy(-dt, &fv);
    }
    res.axpy(-1.0, u);
    res
}

/// Per-cell Jacobians of P and f at the current Newton iterate (cell-major blocks).
struct CellCoefficients {
    a: Vec<f64>,
    fu: Vec<f64>,
    m: usize,
}

impl CellCoefficients {
    fn at_state(v: &GridField, model: &DiffusionModel, reaction: &ReactionModel) -> Self {
        let m = v.m;
        let cells = v.grid.cells();
        let mut a = vec![0.0; cells * m * m];
        let mut fu = vec![0.0; cells * m * m];
        let mut uvec = vec![0.0; m];
        let zero_reaction = reaction.is_zero();
        for cell in 0..cells {
            v.at(cell, &mut uvec);
            model.jacobian(&uvec, &mut a[cell * m * m..(cell + 1) * m * m]);
            if !zero_reaction {
                reaction.f_jac(&uvec, &mut fu[cell * m * m..(cell + 1) * m * m]);
            }
        }
        CellCoefficients { a, fu, m }
    }

    fn block_a(&self, cell: usize) -> &[f64] {
        &self.a[cell * self.m * self.m..(cell + 1) * self.m * self.m]
    }

    fn block_fu(&self, cell: usize) -> &[f64] {
        &self.fu[cell * self.m * self.m..(cell + 1) * self.m * self.m]
    }
}

/// Newton linear system J delta = -F with J = I - dt lap(A(v) .) - dt f_u(v).
/// Direct block-tridiagonal solve in 1D; CGLS on the normal equations in 2D.
fn newton_solve(
    v: &GridField,
    coeffs: &CellCoefficients,
    dt: f64,
    rhs_cell_major: &[f64],
) -> Result<Vec<f64>> {
    let g = v.grid;
    let m = v.m;
    let bc = v.bc;
    if g.dim == 1 {
        let n = g.extent[0];
        let mut sys = BlockTridiag::zeros(m, n);
        let ihx2 = 1.0 / (g.h[0] * g.h[0]);
        for i in 0..n {
            let w_ii = lap_diag_weight(&g, bc, i, 0);
            let a_i = coeffs.block_a(i);
            let fu_i = coeffs.block_fu(i);
            let diag = BlockTridiag::block_mut(&mut sys.diag, m, i);
            for r in 0..m {
                for c in 0..m {
                    let mut val = -dt * w_ii * a_i[r * m + c] - dt * fu_i[r * m + c];
                    if r == c {
                        val += 1.0;
                    }
                    diag[r * m + c] = val;
                }
            }
            if i > 0 {
                let a_prev = coeffs.block_a(i - 1).to_vec();
                let lower = BlockTridiag::block_mut(&mut sys.lower, m, i);
                for k in 0..m * m {
                    lower[k] = -dt * ihx2 * a_prev[k];
                }
            }
            if i + 1 < n {
                let a_next = coeffs.block_a(i + 1).to_vec();
                let upper = BlockTridiag::block_mut(&mut sys.upper, m, i);
                for k in 0..m * m {
                    upper[k] = -dt * ihx2 * a_next[k];
                }
            }
        }
        return sys.solve(rhs_cell_major);
    }

    // 2D: matrix-free J and J^T with exact column scaling of J^T J.
    let cells = g.cells();
    let size = cells * m;
    let mut scale = vec![0.0; size];
    for iy in 0..g.extent[1] {
        for ix in 0..g.extent[0] {
            let cell = iy * g.extent[0] + ix;
            let w_ii = lap_diag_weight(&g, bc, ix, iy);
            let nbrs = neighbor_weights(&g, ix, iy);
            let a_i = coeffs.block_a(cell);
            let fu_i = coeffs.block_fu(cell);
            for c in 0..m {
                let mut acc = 0.0;
                for d in 0..m {
                    let mut entry = -dt * w_ii * a_i[d * m + c] - dt * fu_i[d * m + c];
                    if d == c {
                        entry += 1.0;
                    }
                    acc += entry * entry;
                }
                let col_a: f64 = (0..m).map(|d| a_i[d * m + c] * a_i[d * m + c]).sum();
                for &wn in &nbrs {
                    acc += dt * dt * wn * wn * col_a;
                }
                scale[cell * m + c] = 1.0 / acc.sqrt().max(1e-300);
            }
        }
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut ax = vec![0.0; size];
        for cell in 0..cells {
            mat_vec(
                m,
                coeffs.block_a(cell),
                &x[cell * m..(cell + 1) * m],
                &mut ax[cell * m..(cell + 1) * m],
            );
        }
        let mut lap = vec![0.0; size];
        lap_cell_major(&g, bc, m, &ax, &mut lap);
        let mut fux = vec![0.0; m];
        for cell in 0..cells {
            mat_vec(m, coeffs.block_fu(cell), &x[cell * m..(cell + 1) * m], &mut fux);
            for c in 0..m {
                y[cell * m + c] = x[cell * m + c] - dt * lap[cell * m + c] - dt * fux[c];
            }
        }
    };
    let apply_t = |x: &[f64], y: &mut [f64]| {
        let mut lap = vec![0.0; size];
        lap_cell_major(&g, bc, m, x, &mut lap);
        let mut at = vec![0.0; m];
        let mut fut = vec![0.0; m];
        for cell in 0..cells {
            mat_t_vec(m, coeffs.block_a(cell), &lap[cell * m..(cell + 1) * m], &mut at);
            mat_t_vec(m, coeffs.block_fu(cell), &x[cell * m..(cell + 1) * m], &mut fut);
            for c in 0..m {
                y[cell * m + c] = x[cell * m + c] - dt * at[c] - dt * fut[c];
            }
        }
    };
    let x0 = vec![0.0; size];
    let (sol, _iters) = linalg::cgls(
        size,
        apply,
        apply_t,
        &scale,
        rhs_cell_major,
        &x0,
        LIN_REL_TOL,
        40 * size,
    )?;
    Ok(sol)
}

/// One backward-Euler step: returns (v, newton_iterations, final_residual)
/// with v - dt lap(P(v)) - dt f(v) = u to Newton tolerance.
pub fn step_implicit(
    u: &GridField,
    dt: f64,
    model: &DiffusionModel,
    reaction: &ReactionModel,
    controls: &SolverControls,
) -> Result<(GridField, usize, f64)> {
    if !u.is_finite() {
        return Err(CrossDiffError::NonFiniteState { t: f64::NAN });
    }
    let mut v = u.clone();
    let mut res = forward_residual(&v, u, dt, model, reaction);
    let r0 = grid::l2_norm(&res);
    let tol = controls.newton_atol + controls.newton_rtol * r0;
    let mut rnorm = r0;
    for iter in 0..controls.newton_max_iter {
        if rnorm <= tol {
            return Ok((v, iter, rnorm));
        }
        let coeffs = CellCoefficients::at_state(&v, model, reaction);
        let mut rhs = field_to_cell_major(&res);
        for x in &mut rhs {
            *x = -*x;
        }
        let delta = match newton_solve(&v, &coeffs, dt, &rhs) {
            Ok(d) => d,
            Err(CrossDiffError::LinearSolveFailed(_)) => {
                return Err(CrossDiffError::NewtonDiverged {
                    residual: rnorm,
                    iterations: iter,
                })
            }
            Err(e) => return Err(e),
        };
        let delta_field = cell_major_to_field(v.grid, v.m, v.bc, &delta);
        v.axpy(1.0, &delta_field);
        if !v.is_finite() {
            return Err(CrossDiffError::NonFiniteState { t: f64::NAN });
        }
        res = forward_residual(&v, u, dt, model, reaction);
        rnorm = grid::l2_norm(&res);
    }
    if rnorm <= tol {
        Ok((v, controls.newton_max_iter, rnorm))
    } else {
        Err(CrossDiffError::NewtonDiverged {
            residual: rnorm,
            iterations: controls.newton_max_iter,
        })
    }
}

/// Integrates to T with backward Euler; a failing step is retried with halved
/// substeps up to the halving limit. Snapshots land on the stride mesh plus
/// the initial and final times.
pub fn run_forward(
    model: &DiffusionModel,
    reaction: &ReactionModel,
    u0: &GridField,
    controls: &SolverControls,
) -> Result<Trajectory> {
    controls.validate()?;
    if !u0.is_finite() {
        return Err(CrossDiffError::NonFiniteState { t: 0.0 });
    }
    let n_steps = ((controls.t_final / controls.dt).round() as usize).max(1);
    let dt = controls.t_final / n_steps as f64;
    let mut snapshots = vec![(0.0, u0.clone())];
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut current = u0.clone();
    for step in 0..n_steps {
        let t_next = (step + 1) as f64 * dt;
        let mut accepted: Option<(GridField, usize, f64, usize, f64)> = None;
        let mut last_err = None;
        for halving in 0..=controls.halving_limit {
            let substeps = 1usize << halving;
            let sub_dt = dt / substeps as f64;
            let mut state = current.clone();
            let mut iters = 0usize;
            let mut final_res = 0.0;
            let mut ok = true;
            for _ in 0..substeps {
                match step_implicit(&state, sub_dt, model, reaction, controls) {
                    Ok((next, it, res)) => {
                        state = next;
                        iters += it;
                        final_res = res;
                    }
                    Err(e) => {
                        last_err = Some(e);
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                accepted = Some((state, iters, final_res, substeps, sub_dt));
                break;
            }
        }
        match accepted {
            Some((state, iters, final_res, substeps, sub_dt)) => {
                current = state;
                diagnostics.push(StepDiagnostics {
                    t: t_next,
                    newton_iterations: iters,
                    final_residual: final_res,
                    dt_used: sub_dt,
                    substeps,
                });
            }
            None => {
                return Err(last_err.unwrap_or(CrossDiffError::NewtonDiverged {
                    residual: f64::NAN,
                    iterations: 0,
                }))
            }
        }
        if (step + 1) % controls.snapshot_stride == 0 || step + 1 == n_steps {
            snapshots.push((t_next, current.clone()));
        }
    }
    Ok(Trajectory {
        snapshots,
        diagnostics,
        model: model.clone(),
        reaction: reaction.clone(),
        controls: *controls,
    })
}

// ---------------------------------------------------------------------------
// Dual backward system
// ---------------------------------------------------------------------------

/// Segment-averaged coefficients at one time level: Abar = (A1 + A2)/2 with
/// A_i = int_0^1 d/du P_i(s u_a + (1-s) u_b) ds, and B = Gbar + K with
/// Gbar = int_0^1 g_u(s u_a + (1-s) u_b) ds. Cell-major m x m blocks.
pub(crate) struct DualCoefficients {
    pub abar: Vec<f64>,
    pub b: Vec<f64>,
}

pub(crate) fn dual_coefficients(
    ua: &GridField,
    ub: &GridField,
    model_a: &DiffusionModel,
    model_b: &DiffusionModel,
    reaction: &ReactionModel,
) -> DualCoefficients {
    let m = ua.m;
    let cells = ua.grid.cells();
    let mm = m * m;
    let mut abar = vec![0.0; cells * mm];
    let mut b = vec![0.0; cells * mm];
    let mut va = vec![0.0; m];
    let mut vb = vec![0.0; m];
    let mut seg = vec![0.0; m];
    let mut block = vec![0.0; mm];
    for cell in 0..cells {
        ua.at(cell, &mut va);
        ub.at(cell, &mut vb);
        for &(s, w) in GL5.iter() {
            for c in 0..m {
                seg[c] = s * va[c] + (1.0 - s) * vb[c];
            }
            model_a.jacobian(&seg, &mut block);
            for k in 0..mm {
                abar[cell * mm + k] += 0.5 * w * block[k];
            }
            model_b.jacobian(&seg, &mut block);
            for k in 0..mm {
                abar[cell * mm + k] += 0.5 * w * block[k];
            }
            reaction.g_jac(&seg, &mut block);
            for k in 0..mm {
                b[cell * mm + k] += w * block[k];
            }
        }
        for k in 0..mm {
            b[cell * mm + k] += reaction.linear_part[k];
        }
    }
    DualCoefficients { abar, b }
}

/// One backward dual step: solves S Psi_j = Psi_{j+1} with
/// S = I - dt (Abar^T lap + B^T), coefficients frozen at the target level.
fn dual_step(psi_next: &GridField, coeffs: &DualCoefficients, dt: f64) -> Result<GridField> {
    let g = psi_next.grid;
    let m = psi_next.m;
    let bc = psi_next.bc;
    let mm = m * m;
    let rhs = field_to_cell_major(psi_next);
    if g.dim == 1 {
        let n = g.extent[0];
        let ihx2 = 1.0 / (g.h[0] * g.h[0]);
        let mut sys = BlockTridiag::zeros(m, n);
        for i in 0..n {
            let w_ii = lap_diag_weight(&g, bc, i, 0);
            let a_i = coeffs.abar[i * mm..(i + 1) * mm].to_vec();
            let b_i = coeffs.b[i * mm..(i + 1) * mm].to_vec();
            let diag = BlockTridiag::block_mut(&mut sys.diag, m, i);
            for r in 0..m {
                for c in 0..m {
                    // A^T entry (r, c) = A entry (c, r).
                    let mut val = -dt * w_ii * a_i[c * m + r] - dt * b_i[c * m + r];
                    if r == c {
                        val += 1.0;
                    }
                    diag[r * m + c] = val;
                }
            }
            // Off-diagonal blocks carry the row's own A^T.
            if i > 0 {
                let lower = BlockTridiag::block_mut(&mut sys.lower, m, i);
                for r in 0..m {
                    for c in 0..m {
                        lower[r * m + c] = -dt * ihx2 * a_i[c * m + r];
                    }
                }
            }
            if i + 1 < n {
                let upper = BlockTridiag::block_mut(&mut sys.upper, m, i);
                for r in 0..m {
                    for c in 0..m {
                        upper[r * m + c] = -dt * ihx2 * a_i[c * m + r];
                    }
                }
            }
        }
        let sol = sys.solve(&rhs)?;
        return Ok(cell_major_to_field(g, m, bc, &sol));
    }
    let cells = g.cells();
    let size = cells * m;
    // Column scaling of S: column (i, c) touches the rows of cell i and its
    // neighbors, the neighbor rows carrying their own A^T blocks.
    let mut scale = vec![0.0; size];
    let nx = g.extent[0];
    for iy in 0..g.extent[1] {
        for ix in 0..nx {
            let cell = iy * nx + ix;
            let w_ii = lap_diag_weight(&g, bc, ix, iy);
            let a_i = &coeffs.abar[cell * mm..(cell + 1) * mm];
            let b_i = &coeffs.b[cell * mm..(cell + 1) * mm];
            let mut neighbor_cells: Vec<(usize, f64)> = Vec::with_capacity(4);
            let ihx2 = 1.0 / (g.h[0] * g.h[0]);
            let ihy2 = 1.0 / (g.h[1] * g.h[1]);
            if ix > 0 {
                neighbor_cells.push((cell - 1, ihx2));
            }
            if ix + 1 < nx {
                neighbor_cells.push((cell + 1, ihx2));
            }
            if g.dim == 2 {
                if iy > 0 {
                    neighbor_cells.push((cell - nx, ihy2));
                }
                if iy + 1 < g.extent[1] {
                    neighbor_cells.push((cell + nx, ihy2));
                }
            }
            for c in 0..m {
                let mut acc = 0.0;
                for d in 0..m {
                    let mut entry = -dt * w_ii * a_i[c * m + d] - dt * b_i[c * m + d];
                    if d == c {
                        entry += 1.0;
                    }
                    acc += entry * entry;
                }
                for &(ncell, wn) in &neighbor_cells {
                    let a_n = &coeffs.abar[ncell * mm..(ncell + 1) * mm];
                    for d in 0..m {
                        let entry = -dt * wn * a_n[c * m + d];
                        acc += entry * entry;
                    }
                }
                scale[cell * m + c] = 1.0 / acc.sqrt().max(1e-300);
            }
        }
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut lap = vec![0.0; size];
        lap_cell_major(&g, bc, m, x, &mut lap);
        let mut at = vec![0.0; m];
        let mut bt = vec![0.0; m];
        for cell in 0..cells {
            mat_t_vec(
                m,
                &coeffs.abar[cell * mm..(cell + 1) * mm],
                &lap[cell * m..(cell + 1) * m],
                &mut at,
            );
            mat_t_vec(
                m,
                &coeffs.b[cell * mm..(cell + 1) * mm],
                &x[cell * m..(cell + 1) * m],
                &mut bt,
            );
            for c in 0..m {
                y[cell * m + c] = x[cell * m + c] - dt * at[c] - dt * bt[c];
            }
        }
    };
    let apply_t = |x: &[f64], y: &mut [f64]| {
        let mut ax = vec![0.0; size];
        for cell in 0..cells {
            mat_vec(
                m,
                &coeffs.abar[cell * mm..(cell + 1) * mm],
                &x[cell * m..(cell + 1) * m],
                &mut ax[cell * m..(cell + 1) * m],
            );
        }
        let mut lap = vec![0.0; size];
        lap_cell_major(&g, bc, m, &ax, &mut lap);
        let mut bx = vec![0.0; m];
        for cell in 0..cells {
            mat_vec(
                m,
                &coeffs.b[cell * mm..(cell + 1) * mm],
                &x[cell * m..(cell + 1) * m],
                &mut bx,
            );
            for c in 0..m {
                y[cell * m + c] = x[cell * m + c] - dt * lap[cell * m + c] - dt * bx[c];
            }
        }
    };
    let x0 = rhs.clone();
    let (sol, _) = linalg::cgls(size, apply, apply_t, &scale, &rhs, &x0, LIN_REL_TOL, 40 * size)?;
    Ok(cell_major_to_field(g, m, bc, &sol))
}

fn check_dual_inputs(traj_a: &Trajectory, traj_b: &Trajectory, psi: &GridField) -> Result<()> {
    if !traj_a.same_mesh(traj_b) {
        return Err(CrossDiffError::MeshMismatch(
            "dual solve needs trajectories on a shared grid and time mesh".into(),
        ));
    }
    if psi.grid != traj_a.grid() || psi.m != traj_a.snapshots[0].1.m {
        return Err(CrossDiffError::MeshMismatch(
            "terminal datum does not match the trajectory grid".into(),
        ));
    }
    if psi.bc != BoundaryTag::DirichletZero {
        return Err(CrossDiffError::invalid(
            "psi",
            "terminal datum must be Dirichlet-zero compatible",
        ));
    }
    Ok(())
}

/// Backward solve of the dual system Psi_t + Abar^T lap(Psi) + Gbar^T Psi +
/// K^T Psi = 0 from Psi(T) = psi, by implicit Euler in reversed time on the
/// snapshot mesh of the two trajectories.
pub fn solve_dual(
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    reaction: &ReactionModel,
    psi: &GridField,
    _controls: &SolverControls,
) -> Result<DualTrajectory> {
    check_dual_inputs(traj_a, traj_b, psi)?;
    let times = traj_a.times();
    let levels = times.len();
    let mut snapshots: Vec<(f64, GridField)> = Vec::with_capacity(levels);
    snapshots.push((times[levels - 1], psi.clone()));
    let mut psi_cur = psi.clone();
    for j in (0..levels - 1).rev() {
        let dt = times[j + 1] - times[j];
        let coeffs = dual_coefficients(
            &traj_a.snapshots[j].1,
            &traj_b.snapshots[j].1,
            &traj_a.model,
            &traj_b.model,
            reaction,
        );
        psi_cur = dual_step(&psi_cur, &coeffs, dt)?;
        snapshots.push((times[j], psi_cur.clone()));
    }
    Ok(DualTrajectory {
        snapshots,
        terminal: psi.clone(),
        lambda_floor_a: traj_a.model.lambda_floor,
        lambda_floor_b: traj_b.model.lambda_floor,
        coefficient_sources: (traj_a.model.name.clone(), traj_b.model.name.clone()),
    })
}

/// Forward linearized companion of the dual solve: advances w on the snapshot
/// mesh by S_j^T w_{j+1} = w_j + (dt/2) lap(Pbar_j) plus the explicit
/// (dt/2) lap(Pbar_{j+1}) increment, where Pbar = ((lam_a - lam_b)/2)(u_a + u_b).
/// This splitting makes the discrete duality identity exact against the
/// trapezoid-rule coupling integral, up to linear-solver tolerance.
pub fn linearized_forward(
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    reaction: &ReactionModel,
    w0: &GridField,
) -> Result<Vec<GridField>> {
    if !traj_a.same_mesh(traj_b) {
        return Err(CrossDiffError::MeshMismatch(
            "linearized forward needs trajectories on a shared mesh".into(),
        ));
    }
    let times = traj_a.times();
    let levels = times.len();
    let gap = 0.5 * (traj_a.model.lambda_floor - traj_b.model.lambda_floor);
    let lap_pbar = |j: usize| -> GridField {
        let mut pbar = traj_a.snapshots[j].1.clone();
        pbar.axpy(1.0, &traj_b.snapshots[j].1);
        pbar.scale(gap);
        laplacian(&pbar)
    };
    let mut w = vec![w0.clone()];
    for j in 0..levels - 1 {
        let dt = times[j + 1] - times[j];
        let coeffs = dual_coefficients(
            &traj_a.snapshots[j].1,
            &traj_b.snapshots[j].1,
            &traj_a.model,
            &traj_b.model,
            reaction,
        );
        let mut rhs = w[j].clone();
        rhs.axpy(0.5 * dt, &lap_pbar(j));
        let mut next = dual_step_transpose(&rhs, &coeffs, dt)?;
        next.axpy(0.5 * dt, &lap_pbar(j + 1));
        w.push(next);
    }
    Ok(w)
}

/// Solves S^T x = rhs with S from `dual_step` (same coefficients, transposed action).
fn dual_step_transpose(
    rhs_field: &GridField,
    coeffs: &DualCoefficients,
    dt: f64,
) -> Result<GridField> {
    let g = rhs_field.grid;
    let m = rhs_field.m;
    let bc = rhs_field.bc;
    let mm = m * m;
    let rhs = field_to_cell_major(rhs_field);
    if g.dim == 1 {
        let n = g.extent[0];
        let ihx2 = 1.0 / (g.h[0] * g.h[0]);
        let mut sys = BlockTridiag::zeros(m, n);
        for i in 0..n {
            let w_ii = lap_diag_weight(&g, bc, i, 0);
            let a_i = coeffs.abar[i * mm..(i + 1) * mm].to_vec();
            let b_i = coeffs.b[i * mm..(i + 1) * mm].to_vec();
            let diag = BlockTridiag::block_mut(&mut sys.diag, m, i);
            for r in 0..m {
                for c in 0..m {
                    let mut val = -dt * w_ii * a_i[r * m + c] - dt * b_i[r * m + c];
                    if r == c {
                        val += 1.0;
                    }
                    diag[r * m + c] = val;
                }
            }
            if i > 0 {
                let a_prev = coeffs.abar[(i - 1) * mm..i * mm].to_vec();
                let lower = BlockTridiag::block_mut(&mut sys.lower, m, i);
                for k in 0..mm {
                    lower[k] = -dt * ihx2 * a_prev[k];
                }
            }
            if i + 1 < n {
                let a_next = coeffs.abar[(i + 1) * mm..(i + 2) * mm].to_vec();
                let upper = BlockTridiag::block_mut(&mut sys.upper, m, i);
                for k in 0..mm {
                    upper[k] = -dt * ihx2 * a_next[k];
                }
            }
        }
        let sol = sys.solve(&rhs)?;
        return Ok(cell_major_to_field(g, m, bc, &sol));
    }
    let cells = g.cells();
    let size = cells * m;
    let mut scale = vec![0.0; size];
    for iy in 0..g.extent[1] {
        for ix in 0..g.extent[0] {
            let cell = iy * g.extent[0] + ix;
            let w_ii = lap_diag_weight(&g, bc, ix, iy);
            let nbrs = neighbor_weights(&g, ix, iy);
            let a_i = &coeffs.abar[cell * mm..(cell + 1) * mm];
            let b_i = &coeffs.b[cell * mm..(cell + 1) * mm];
            for c in 0..m {
                let mut acc = 0.0;
                for d in 0..m {
                    let mut entry = -dt * w_ii * a_i[d * m + c] - dt * b_i[d * m + c];
                    if d == c {
                        entry += 1.0;
                    }
                    acc += entry * entry;
                }
                let col_a: f64 = (0..m).map(|d| a_i[d * m + c] * a_i[d * m + c]).sum();
                for &wn in &nbrs {
                    acc += dt * dt * wn * wn * col_a;
                }
                scale[cell * m + c] = 1.0 / acc.sqrt().max(1e-300);
            }
        }
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut ax = vec![0.0; size];
        for cell in 0..cells {
            mat_vec(
                m,
                &coeffs.abar[cell * mm..(cell + 1) * mm],
                &x[cell * m..(cell + 1) * m],
                &mut ax[cell * m..(cell + 1) * m],
            );
        }
        let mut lap = vec![0.0; size];
        lap_cell_major(&g, bc, m, &ax, &mut lap);
        let mut bx = vec![0.0; m];
        for cell in 0..cells {
            mat_vec(
                m,
                &coeffs.b[cell * mm..(cell + 1) * mm],
                &x[cell * m..(cell + 1) * m],
                &mut bx,
            );
            for c in 0..m {
                y[cell * m + c] = x[cell * m + c] - dt * lap[cell * m + c] - dt * bx[c];
            }
        }
    };
    let apply_t = |x: &[f64], y: &mut [f64]| {
        let mut lap = vec![0.0; size];
        lap_cell_major(&g, bc, m, x, &mut lap);
        let mut at = vec![0.0; m];
        let mut bt = vec![0.0; m];
        for cell in 0..cells {
            mat_t_vec(
                m,
                &coeffs.abar[cell * mm..(cell + 1) * mm],
                &lap[cell * m..(cell + 1) * m],
                &mut at,
            );
            mat_t_vec(
                m,
                &coeffs.b[cell * mm..(cell + 1) * mm],
                &x[cell * m..(cell + 1) * m],
                &mut bt,
            );
            for c in 0..m {
                y[cell * m + c] = x[cell * m + c] - dt * at[c] - dt * bt[c];
            }
        }
    };
    let x0 = rhs.clone();
    let (sol, _) = linalg::cgls(size, apply, apply_t, &scale, &rhs, &x0, LIN_REL_TOL, 40 * size)?;
    Ok(cell_major_to_field(g, m, bc, &sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, integrate, l2_norm, lp_norm};
    use crate::model::{make_heat, make_lotka_volterra, make_porous_media, regularize, ReactionModel};
    use std::f64::consts::PI;

    fn heat_controls(dt: f64, t: f64) -> SolverControls {
        SolverControls::new(dt, t)
    }

    #[test]
    fn heat_step_matches_discrete_eigenvalue() {
        // One backward-Euler step on u_t = lap(u) from sin(pi x): the discrete
        // eigenvalue mu_h = (2/h^2)(1 - cos(pi h)) gives v = u0 / (1 + dt mu_h).
        let g = Grid::new_1d(64, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| vec![(PI * x).sin()]);
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let dt = 1e-3;
        let controls = heat_controls(dt, 1.0);
        let (v, _, _) = step_implicit(&u0, dt, &model, &reaction, &controls).unwrap();
        let h = g.h[0];
        let mu = (2.0 / (h * h)) * (1.0 - (PI * h).cos());
        let factor = 1.0 / (1.0 + dt * mu);
        for i in 0..g.extent[0] {
            assert!((v.comp(0)[i] - factor * u0.comp(0)[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_state_is_fixed_point_neumann() {
        let g = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let u0 = GridField::constant(g, &[1.5, -0.75], BoundaryTag::NeumannZero);
        let model = regularize(&make_porous_media(2, 1.0).unwrap(), 0.3).unwrap();
        let reaction = ReactionModel::zero(2);
        let controls = heat_controls(0.05, 1.0);
        let (v, iters, _) = step_implicit(&u0, 0.05, &model, &reaction, &controls).unwrap();
        assert!(v.sub(&u0).max_abs() < 1e-12);
        assert!(iters <= 1);
    }

    #[test]
    fn pme_step_preserves_nonnegativity_and_mass_vs_explicit_reference() {
        // Scalar porous medium u_t = lap(u |u|) from a Barenblatt profile.
        let g = Grid::new_1d(128, -2.0, 4.0).unwrap();
        let t0: f64 = 1.0;
        let cbar = 1.0 / 12.0;
        let u0 = GridField::from_fn(g, 1, BoundaryTag::NeumannZero, |x, _| {
            let v: f64 = cbar - x * x / (12.0 * t0.powf(2.0 / 3.0));
            vec![v.max(0.0) * t0.powf(-1.0 / 3.0)]
        });
        let model = make_porous_media(1, 1.0).unwrap();
        let reaction = ReactionModel::zero(1);
        let dt = 1e-3;
        let controls = heat_controls(dt, 1.0);
        let (v, _, _) = step_implicit(&u0, dt, &model, &reaction, &controls).unwrap();
        let min = v.data.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "min {min}");
        let m0 = integrate(&u0)[0];
        let m1 = integrate(&v)[0];
        assert!((m1 - m0).abs() < 1e-10 * m0);
        // Fine-step explicit reference for the same advance.
        let sub = 200usize;
        let dte = dt / sub as f64;
        let mut ref_state = u0.clone();
        for _ in 0..sub {
            let pf = ref_state.map_pointwise(1, |u, out| model.p(u, out));
            let lap = laplacian(&pf);
            ref_state.axpy(dte, &lap);
        }
        let diff = v.sub(&ref_state).max_abs();
        assert!(diff < 2e-4, "implicit vs explicit reference diff {diff}");
    }

    #[test]
    fn heat_run_matches_analytic_solution() {
        let g = Grid::new_1d(64, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| vec![(PI * x).sin()]);
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let t_final = 0.1;
        let controls = heat_controls(1e-4, t_final).with_stride(100);
        let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
        let exact = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| {
            vec![(-PI * PI * t_final).exp() * (PI * x).sin()]
        });
        let err = l2_norm(&traj.final_state().sub(&exact));
        assert!(err <= 5e-3, "heat L2 error {err}");
        // Backward Euler is unconditionally dissipative on the Dirichlet heat run.
        let norms: Vec<f64> = traj.snapshots.iter().map(|(_, f)| l2_norm(f)).collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn neumann_mass_conserved_through_run() {
        let g = Grid::new_1d(48, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 2, BoundaryTag::NeumannZero, |x, _| {
            vec![0.4 + 0.3 * (2.0 * PI * x).cos(), 0.6 + 0.2 * (PI * x).sin()]
        });
        let model = regularize(&make_porous_media(2, 1.0).unwrap(), 0.25).unwrap();
        let reaction = ReactionModel::zero(2);
        let controls = heat_controls(2e-3, 0.2).with_stride(10);
        let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
        let m0 = integrate(&u0);
        let mt = integrate(traj.final_state());
        let steps = traj.diagnostics.len() as f64;
        let budget = (10.0 * steps * controls.newton_atol).max(1e-9);
        for c in 0..2 {
            assert!((mt[c] - m0[c]).abs() <= budget, "component {c}");
        }
    }

    #[test]
    fn newton_contracts_quadratically() {
        // One large implicit step on the porous-media model; residual norms
        // recorded through the same path step_implicit takes.
        let g = Grid::new_1d(64, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| {
            vec![1.0 + 0.8 * (PI * x).sin()]
        });
        let model = regularize(&make_porous_media(1, 1.0).unwrap(), 0.1).unwrap();
        let reaction = ReactionModel::zero(1);
        let dt = 0.05;
        let mut v = u0.clone();
        let mut norms = Vec::new();
        for _ in 0..8 {
            let res = forward_residual(&v, &u0, dt, &model, &reaction);
            let rn = l2_norm(&res);
            norms.push(rn);
            if rn < 1e-14 {
                break;
            }
            let coeffs = CellCoefficients::at_state(&v, &model, &reaction);
            let mut rhs = field_to_cell_major(&res);
            rhs.iter_mut().for_each(|x| *x = -*x);
            let delta = newton_solve(&v, &coeffs, dt, &rhs).unwrap();
            v.axpy(1.0, &cell_major_to_field(g, 1, BoundaryTag::DirichletZero, &delta));
        }
        // Quadratic contraction once inside the basin and above the FP floor.
        let mut checked = 0;
        for w in norms.windows(2) {
            if w[0] < 1e-2 && w[0] > 1e-8 {
                assert!(w[1] <= 50.0 * w[0] * w[0], "norms {norms:?}");
                checked += 1;
            }
        }
        assert!(checked >= 1, "norms {norms:?}");
    }

    #[test]
    fn run_forward_grid_refinement_order() {
        // L2 error at T behaves as O(h^2) + O(dt); the Richardson triple
        // cancels the shared dt term, leaving slope 2 in h.
        let t_final = 0.1;
        let mut errs = Vec::new();
        for n in [32usize, 64, 128] {
            let g = Grid::new_1d(n, 0.0, 1.0).unwrap();
            let u0 =
                GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| vec![(PI * x).sin()]);
            let model = make_heat(1);
            let reaction = ReactionModel::zero(1);
            let controls = heat_controls(1e-4, t_final).with_stride(1000);
            let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
            let exact = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| {
                vec![(-PI * PI * t_final).exp() * (PI * x).sin()]
            });
            errs.push(l2_norm(&traj.final_state().sub(&exact)));
        }
        let slope = ((errs[0] - errs[1]) / (errs[1] - errs[2])).log2();
        assert!((slope - 2.0).abs() < 0.15, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn dual_zero_terminal_gives_zero() {
        let g = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let zero = GridField::zeros(g, 1, BoundaryTag::DirichletZero);
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let controls = heat_controls(0.01, 0.1);
        let snaps: Vec<(f64, GridField)> =
            (0..=10).map(|j| (j as f64 * 0.01, zero.clone())).collect();
        let ta =
            Trajectory::from_snapshots(snaps.clone(), model.clone(), reaction.clone(), controls);
        let tb = Trajectory::from_snapshots(snaps, model, reaction.clone(), controls);
        let dual = solve_dual(&ta, &tb, &reaction, &zero, &controls).unwrap();
        for (_, psi) in &dual.snapshots {
            assert!(psi.max_abs() < 1e-14);
        }
    }

    #[test]
    fn dual_heat_is_time_reversed_forward_heat() {
        // With A = I and no reaction the backward dual solve equals the forward
        // heat solve applied to psi over the same mesh.
        let g = Grid::new_1d(48, 0.0, 1.0).unwrap();
        let zero = GridField::zeros(g, 1, BoundaryTag::DirichletZero);
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let dt = 5e-3;
        let controls = heat_controls(dt, 0.1);
        let levels: Vec<(f64, GridField)> =
            (0..=20).map(|j| (j as f64 * dt, zero.clone())).collect();
        let ta =
            Trajectory::from_snapshots(levels.clone(), model.clone(), reaction.clone(), controls);
        let tb = Trajectory::from_snapshots(levels, model.clone(), reaction.clone(), controls);
        let psi = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| {
            vec![(PI * x).sin() + 0.5 * (3.0 * PI * x).sin()]
        });
        let dual = solve_dual(&ta, &tb, &reaction, &psi, &controls).unwrap();
        // Terminal condition is exact, bitwise.
        assert_eq!(dual.snapshots[0].1.data, psi.data);
        let forward = run_forward(&model, &reaction, &psi, &controls).unwrap();
        let diff = dual.at_forward_index(0).sub(forward.final_state()).max_abs();
        assert!(diff < 1e-11, "time reversal mismatch {diff}");
    }

    #[test]
    fn frozen_coefficient_duality_identity() {
        // Constant-in-time coefficient fields from two porous-media regularizations;
        // the linearized forward w satisfies the trapezoid duality identity to
        // solver tolerance at every s.
        let g = Grid::new_1d(40, 0.0, 1.0).unwrap();
        let base = make_porous_media(2, 1.0).unwrap();
        let ma = regularize(&base, 0.5).unwrap();
        let mb = regularize(&base, 0.25).unwrap();
        let reaction = make_lotka_volterra([0.3, 0.2], [-0.4, -0.1], [-0.2, -0.5]);
        let dt = 5e-3;
        let controls = heat_controls(dt, 0.05);
        let ua = GridField::from_fn(g, 2, BoundaryTag::DirichletZero, |x, _| {
            vec![(PI * x).sin(), 0.5 * (2.0 * PI * x).sin().abs()]
        });
        let ub = GridField::from_fn(g, 2, BoundaryTag::DirichletZero, |x, _| {
            vec![0.7 * (PI * x).sin(), 0.4 * (PI * x).sin()]
        });
        let snaps_a: Vec<(f64, GridField)> =
            (0..=10).map(|j| (j as f64 * dt, ua.clone())).collect();
        let snaps_b: Vec<(f64, GridField)> =
            (0..=10).map(|j| (j as f64 * dt, ub.clone())).collect();
        let ta = Trajectory::from_snapshots(snaps_a, ma, reaction.clone(), controls);
        let tb = Trajectory::from_snapshots(snaps_b, mb, reaction.clone(), controls);
        let psi = GridField::from_fn(g, 2, BoundaryTag::DirichletZero, |x, _| {
            vec![x * (1.0 - x), (PI * x).sin()]
        });
        let dual = solve_dual(&ta, &tb, &reaction, &psi, &controls).unwrap();
        let w0 = ua.sub(&ub);
        let w = linearized_forward(&ta, &tb, &reaction, &w0).unwrap();
        let times = ta.times();
        let gap = 0.5 * (0.5 - 0.25);
        let mut coupling = 0.0;
        let mut nontrivial = false;
        for j in 1..times.len() {
            let dtj = times[j] - times[j - 1];
            let term = |idx: usize| -> f64 {
                let mut pbar = ta.snapshots[idx].1.clone();
                pbar.axpy(1.0, &tb.snapshots[idx].1);
                pbar.scale(gap);
                inner(&pbar, &laplacian(dual.at_forward_index(idx)))
            };
            coupling += 0.5 * dtj * (term(j - 1) + term(j));
            let lhs =
                inner(&w[j], dual.at_forward_index(j)) - inner(&w[0], dual.at_forward_index(0));
            let scale = 1.0 + lhs.abs();
            assert!(
                (lhs - coupling).abs() <= 1e-9 * scale,
                "j={j}: lhs {lhs} vs coupling {coupling}"
            );
            if lhs.abs() > 1e-12 {
                nontrivial = true;
            }
        }
        assert!(nontrivial, "identity should be exercised by nonzero terms");
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let g1 = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let g2 = Grid::new_1d(48, 0.0, 1.0).unwrap();
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let controls = heat_controls(0.01, 0.02);
        let mk = |g: Grid| {
            let z = GridField::zeros(g, 1, BoundaryTag::DirichletZero);
            Trajectory::from_snapshots(
                vec![(0.0, z.clone()), (0.01, z.clone()), (0.02, z)],
                model.clone(),
                reaction.clone(),
                controls,
            )
        };
        let ta = mk(g1);
        let tb = mk(g2);
        let psi = GridField::zeros(g1, 1, BoundaryTag::DirichletZero);
        assert!(matches!(
            solve_dual(&ta, &tb, &reaction, &psi, &controls),
            Err(CrossDiffError::MeshMismatch(_))
        ));
        // Neumann terminal datum is rejected.
        let tb2 = mk(g1);
        let psi_neu = GridField::zeros(g1, 1, BoundaryTag::NeumannZero);
        assert!(solve_dual(&ta, &tb2, &reaction, &psi_neu, &controls).is_err());
    }

    #[test]
    fn degenerate_model_is_accepted_by_run_forward() {
        let g = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::NeumannZero, |x, _| {
            vec![0.5 + 0.4 * (PI * x).sin()]
        });
        let model = make_porous_media(1, 1.0).unwrap();
        assert!(!model.is_regular());
        let reaction = ReactionModel::zero(1);
        let controls = heat_controls(1e-3, 0.02).with_stride(5);
        let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
        assert!(traj.final_state().is_finite());
        assert!(lp_norm(traj.final_state(), f64::INFINITY).unwrap() <= 0.91);
    }
}
