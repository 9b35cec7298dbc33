//! Discrete analogs of the a priori functionals controlled along a run:
//! L2 mass, weighted gradient energies, cumulative time-derivative energy,
//! reaction integrability, the energy-identity residual, Gronwall envelopes,
//! uniformity across a regularization sequence, and oscillation (VMO) decay.

use crate::error::{CrossDiffError, Result};
use crate::grid::{
    self, gradient, l2_norm, lp_norm, mean_oscillation_p, GridField, OscillationProfile,
};
use crate::model::DiffusionModel;
use crate::solver::Trajectory;
use serde::Serialize;

/// Time series of the monitored functionals:
/// E1 = ||u||_L2, E2 = int (lam0^2 + lam^2(u)) |Du|^2,
/// E3 = cumulative int lam_A(u) |u_t|^2 (accumulated from the first step, so
/// it measures the integral over [dt, T]), E4 = ||f(u)||_Lq1,
/// E5 = int |A(u) Du|^2. lam is the ellipticity of the underlying degenerate
/// map (floor subtracted), lam_A the full regularized one.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateLedger {
    pub times: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub e3: Vec<f64>,
    pub e4: Vec<f64>,
    pub e5: Vec<f64>,
    pub q1: f64,
    pub lambda0: f64,
}

impl EstimateLedger {
    pub fn sup(&self, which: usize) -> f64 {
        self.series(which).iter().fold(0.0f64, |acc, v| acc.max(*v))
    }

    pub fn series(&self, which: usize) -> &[f64] {
        match which {
            1 => &self.e1,
            2 => &self.e2,
            3 => &self.e3,
            4 => &self.e4,
            5 => &self.e5,
            _ => panic!("functional index must be 1..=5"),
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("t,E1,E2,E3,E4,E5\n");
        for j in 0..self.times.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.times[j], self.e1[j], self.e2[j], self.e3[j], self.e4[j], self.e5[j]
            ));
        }
        out
    }
}

/// Weighted gradient energies of one state: (E2, E5).
fn gradient_energies(u: &GridField, model: &DiffusionModel) -> (f64, f64) {
    let grads = gradient(u);
    let m = u.m;
    let cells = u.grid.cells();
    let vol = u.grid.cell_volume();
    let lam0 = model.lambda_floor;
    let mut uvec = vec![0.0; m];
    let mut dvec = vec![0.0; m];
    let mut avec = vec![0.0; m];
    let mut amat = vec![0.0; m * m];
    let mut e2 = 0.0;
    let mut e5 = 0.0;
    for cell in 0..cells {
        u.at(cell, &mut uvec);
        let lam_base = model.lambda_base(&uvec);
        model.jacobian(&uvec, &mut amat);
        let weight = lam0 * lam0 + lam_base * lam_base;
        for g in &grads {
            g.at(cell, &mut dvec);
            let d2: f64 = dvec.iter().map(|v| v * v).sum();
            e2 += weight * d2;
            crate::linalg::mat_vec(m, &amat, &dvec, &mut avec);
            e5 += avec.iter().map(|v| v * v).sum::<f64>();
        }
    }
    (e2 * vol, e5 * vol)
}

/// Evaluates E1..E5 at every snapshot; Du by centered differences with the
/// field's boundary extension, u_t by backward differences between snapshots.
pub fn build_ledger(traj: &Trajectory, q1: f64) -> Result<EstimateLedger> {
    if traj.snapshots.len() < 2 {
        return Err(CrossDiffError::MeshMismatch(
            "ledger needs at least 2 snapshots".into(),
        ));
    }
    if !(q1 > 1.0) {
        return Err(CrossDiffError::invalid("q1", "exponent must exceed 1"));
    }
    let model = &traj.model;
    let reaction = &traj.reaction;
    let m = traj.snapshots[0].1.m;
    let mut ledger = EstimateLedger {
        times: traj.times(),
        e1: Vec::new(),
        e2: Vec::new(),
        e3: Vec::new(),
        e4: Vec::new(),
        e5: Vec::new(),
        q1,
        lambda0: model.lambda_floor,
    };
    let mut e3_acc = 0.0;
    for j in 0..traj.snapshots.len() {
        let (t, u) = &traj.snapshots[j];
        let _ = t;
        ledger.e1.push(l2_norm(u));
        let (e2, e5) = gradient_energies(u, model);
        ledger.e2.push(e2);
        ledger.e5.push(e5);
        if j > 0 {
            let (t_prev, u_prev) = &traj.snapshots[j - 1];
            let dtau = ledger.times[j] - t_prev;
            let mut ut = u.sub(u_prev);
            ut.scale(1.0 / dtau);
            let cells = u.grid.cells();
            let vol = u.grid.cell_volume();
            let mut uvec = vec![0.0; m];
            let mut utvec = vec![0.0; m];
            let mut acc = 0.0;
            for cell in 0..cells {
                u.at(cell, &mut uvec);
                ut.at(cell, &mut utvec);
                acc += model.lambda_a(&uvec) * utvec.iter().map(|v| v * v).sum::<f64>();
            }
            e3_acc += acc * vol * dtau;
        }
        ledger.e3.push(e3_acc);
        if reaction.is_zero() {
            ledger.e4.push(0.0);
        } else {
            let fu = u.map_pointwise(m, |cell, out| reaction.f(cell, out));
            ledger.e4.push(lp_norm(&fu, q1)?);
        }
    }
    Ok(ledger)
}

/// One functional's uniformity across a lambda sequence.
#[derive(Debug, Clone, Serialize)]
pub struct UniformBoundsRow {
    pub functional: String,
    pub sups: Vec<f64>,
    pub max_sup: f64,
    /// sup at the smallest lambda over the median sup.
    pub ratio_last_to_median: f64,
    pub pass: bool,
}

/// Uniform-in-n verdict over ledgers from runs differing only in lambda_0.
#[derive(Debug, Clone, Serialize)]
pub struct UniformBoundsReport {
    pub lambdas: Vec<f64>,
    pub rows: Vec<UniformBoundsRow>,
    pub factor: f64,
    /// Pass iff E1..E4 stay below factor * median; E5 is reported alongside.
    pub verdict: bool,
}

pub fn check_uniform_bounds(
    ledgers: &[EstimateLedger],
    factor: f64,
) -> Result<UniformBoundsReport> {
    if ledgers.len() < 3 {
        return Err(CrossDiffError::invalid(
            "ledgers",
            "uniformity check needs at least 3 cascade members",
        ));
    }
    let lambdas: Vec<f64> = ledgers.iter().map(|l| l.lambda0).collect();
    let mut rows = Vec::new();
    for which in 1..=5 {
        let sups: Vec<f64> = ledgers.iter().map(|l| l.sup(which)).collect();
        let mut sorted = sups.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let last = *sups.last().unwrap();
        let ratio = if median > 0.0 {
            last / median
        } else if last > 0.0 {
            f64::MAX
        } else {
            1.0
        };
        rows.push(UniformBoundsRow {
            functional: format!("E{which}"),
            max_sup: sups.iter().fold(0.0f64, |a, b| a.max(*b)),
            sups,
            ratio_last_to_median: ratio,
            pass: ratio < factor,
        });
    }
    let verdict = rows[..4].iter().all(|r| r.pass);
    Ok(UniformBoundsReport {
        lambdas,
        rows,
        factor,
        verdict,
    })
}

/// Gronwall envelope verdict: y(t) <= (y(0) + K/C) e^{Ct} - K/C.
#[derive(Debug, Clone, Serialize)]
pub struct GronwallReport {
    pub c: f64,
    pub k: f64,
    /// max over the series of y(t) - envelope(t).
    pub max_violation: f64,
    pub tol: f64,
    pub pass: bool,
}

fn gronwall_envelope(y0: f64, c: f64, k: f64, t: f64) -> f64 {
    (y0 + k / c) * (c * t).exp() - k / c
}

/// Pointwise check of the discrete Gronwall envelope.
pub fn gronwall_check(times: &[f64], y: &[f64], c: f64, k: f64, tol: f64) -> Result<GronwallReport> {
    if !(c > 0.0) || k < 0.0 {
        return Err(CrossDiffError::invalid("c", "need C > 0 and K >= 0"));
    }
    if times.len() != y.len() || y.is_empty() {
        return Err(CrossDiffError::invalid("y", "series and mesh must align"));
    }
    let y0 = y[0];
    let mut max_violation = f64::NEG_INFINITY;
    for (t, yi) in times.iter().zip(y) {
        let env = gronwall_envelope(y0, c, k, t - times[0]);
        max_violation = max_violation.max(yi - env);
    }
    Ok(GronwallReport {
        c,
        k,
        max_violation,
        tol,
        pass: max_violation <= tol,
    })
}

/// Fit mode: over a log grid of C, take the smallest K that passes at the
/// tolerance, then keep the (C, K) whose envelope hugs the series tightest
/// from above (minimal overshoot).
pub fn gronwall_fit(times: &[f64], y: &[f64], tol: f64) -> Result<GronwallReport> {
    if times.len() != y.len() || y.len() < 2 {
        return Err(CrossDiffError::invalid("y", "fit needs an aligned series"));
    }
    let y0 = y[0];
    let mut best: Option<GronwallReport> = None;
    let mut best_overshoot = f64::INFINITY;
    for i in 0..=60 {
        let c = 1e-4 * (50.0f64 / 1e-4).powf(i as f64 / 60.0);
        let mut k_min: f64 = 0.0;
        for (t, yi) in times.iter().zip(y).skip(1) {
            let dt = t - times[0];
            let phi = ((c * dt).exp() - 1.0) / c;
            if phi > 0.0 {
                k_min = k_min.max((yi - tol - y0 * (c * dt).exp()) / phi);
            }
        }
        let k = k_min.max(0.0);
        let report = gronwall_check(times, y, c, k, tol)?;
        if !report.pass {
            continue;
        }
        let overshoot = times
            .iter()
            .zip(y)
            .map(|(t, yi)| gronwall_envelope(y0, c, k, t - times[0]) - yi)
            .fold(f64::NEG_INFINITY, f64::max);
        if overshoot < best_overshoot {
            best_overshoot = overshoot;
            best = Some(report);
        }
    }
    best.ok_or_else(|| CrossDiffError::invalid("y", "no passing Gronwall envelope in the fit grid"))
}

/// Oscillation profiles of u and of U = P(u) at one snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct VmoEntry {
    pub time_index: usize,
    pub t: f64,
    pub profile_u: OscillationProfile,
    pub profile_p: OscillationProfile,
    /// Profile value at the smallest radius over the value at the largest.
    pub decay_ratio_u: f64,
}

/// Mean-oscillation profiles of u and of its image under the given map
/// (the degenerate P for cascade limits) at the requested snapshot indices.
pub fn vmo_profile(
    traj: &Trajectory,
    p_map: &DiffusionModel,
    radii: &[f64],
    time_indices: &[usize],
) -> Result<Vec<VmoEntry>> {
    let mut out = Vec::with_capacity(time_indices.len());
    for &j in time_indices {
        let (t, u) = traj
            .snapshots
            .get(j)
            .ok_or_else(|| CrossDiffError::invalid("times", "snapshot index out of range"))?;
        let pu = u.map_pointwise(u.m, |cell, buf| p_map.p(cell, buf));
        let mut profile_u = grid::mean_oscillation(u, radii)?;
        let mut profile_p = grid::mean_oscillation(&pu, radii)?;
        profile_u.time_index = j;
        profile_p.time_index = j;
        let first = profile_u.entries.first().map(|e| e.1).unwrap_or(0.0);
        let last = profile_u.entries.last().map(|e| e.1).unwrap_or(0.0);
        let decay_ratio_u = if first > 0.0 { last / first } else { 0.0 };
        out.push(VmoEntry {
            time_index: j,
            t: *t,
            profile_u,
            profile_p,
            decay_ratio_u,
        });
    }
    Ok(out)
}

/// q-mean oscillation profile of a single field; exposed for the
/// Holder-transfer diagnostics between u and P(u).
pub fn oscillation_q(field: &GridField, radii: &[f64], q: f64) -> Result<OscillationProfile> {
    mean_oscillation_p(field, radii, q)
}

/// Per-step residual of the discrete energy identity:
/// r_j = (E3_j - E3_{j-1}) + (E5_j - E5_{j-1}) - C q_j with
/// q_j = dt int lam_A(u_j) |f(u_j)|^2 and C fitted by least squares, clipped
/// at zero. Reports the residual series and the max positive entry.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyResidualReport {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted_c: f64,
    pub max_positive: f64,
    pub e5_initial: f64,
}

pub fn energy_identity_residual(traj: &Trajectory, q1: f64) -> Result<EnergyResidualReport> {
    if traj.snapshots.len() < 3 {
        return Err(CrossDiffError::MeshMismatch(
            "energy residual needs at least 3 snapshots".into(),
        ));
    }
    let ledger = build_ledger(traj, q1)?;
    let model = &traj.model;
    let reaction = &traj.reaction;
    let m = traj.snapshots[0].1.m;
    let steps = ledger.times.len() - 1;
    let mut lhs = Vec::with_capacity(steps);
    let mut q = Vec::with_capacity(steps);
    for j in 1..=steps {
        lhs.push(ledger.e3[j] - ledger.e3[j - 1] + ledger.e5[j] - ledger.e5[j - 1]);
        let dtau = ledger.times[j] - ledger.times[j - 1];
        if reaction.is_zero() {
            q.push(0.0);
        } else {
            let u = &traj.snapshots[j].1;
            let cells = u.grid.cells();
            let vol = u.grid.cell_volume();
            let mut uvec = vec![0.0; m];
            let mut fvec = vec![0.0; m];
            let mut acc = 0.0;
            for cell in 0..cells {
                u.at(cell, &mut uvec);
                reaction.f(&uvec, &mut fvec);
                acc += model.lambda_a(&uvec) * fvec.iter().map(|v| v * v).sum::<f64>();
            }
            q.push(acc * vol * dtau);
        }
    }
    let qq: f64 = q.iter().map(|v| v * v).sum();
    let fitted_c = if qq > 0.0 {
        (q.iter().zip(&lhs).map(|(a, b)| a * b).sum::<f64>() / qq).max(0.0)
    } else {
        0.0
    };
    let residuals: Vec<f64> = lhs.iter().zip(&q).map(|(l, qi)| l - fitted_c * qi).collect();
    let max_positive = residuals.iter().fold(0.0f64, |a, r| a.max(*r));
    Ok(EnergyResidualReport {
        times: ledger.times[1..].to_vec(),
        residuals,
        fitted_c,
        max_positive,
        e5_initial: ledger.e5[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryTag, Grid};
    use crate::model::{make_heat, make_porous_media, regularize, ReactionModel};
    use crate::solver::{run_forward, SolverControls, Trajectory};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn heat_traj(n: usize, dt: f64, t: f64, stride: usize) -> Trajectory {
        let g = Grid::new_1d(n, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| vec![(PI * x).sin()]);
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let controls = SolverControls::new(dt, t).with_stride(stride);
        run_forward(&model, &reaction, &u0, &controls).unwrap()
    }

    #[test]
    fn zero_trajectory_has_zero_ledger() {
        let g = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let zero = GridField::zeros(g, 1, BoundaryTag::DirichletZero);
        let model = make_heat(1);
        let reaction = ReactionModel::zero(1);
        let controls = SolverControls::new(0.01, 0.03);
        let snaps: Vec<(f64, GridField)> =
            (0..4).map(|j| (j as f64 * 0.01, zero.clone())).collect();
        let traj = Trajectory::from_snapshots(snaps, model, reaction, controls);
        let ledger = build_ledger(&traj, 1.5).unwrap();
        for which in 1..=5 {
            assert!(ledger.sup(which) == 0.0, "E{which}");
        }
    }

    #[test]
    fn stationary_trajectory_has_zero_e3() {
        let g = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let state = GridField::from_fn(g, 1, BoundaryTag::NeumannZero, |x, _| vec![1.0 + x]);
        let model = regularize(&make_porous_media(1, 1.0).unwrap(), 0.5).unwrap();
        let reaction = ReactionModel::zero(1);
        let controls = SolverControls::new(0.01, 0.03);
        let snaps: Vec<(f64, GridField)> =
            (0..4).map(|j| (j as f64 * 0.01, state.clone())).collect();
        let traj = Trajectory::from_snapshots(snaps, model, reaction, controls);
        let ledger = build_ledger(&traj, 1.5).unwrap();
        assert!(ledger.e3.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ledger_monotone_and_nonnegative_on_heat_run() {
        let traj = heat_traj(64, 1e-3, 0.05, 1);
        let ledger = build_ledger(&traj, 1.5).unwrap();
        for which in 1..=5 {
            assert!(ledger.series(which).iter().all(|&v| v >= 0.0));
        }
        for w in ledger.e3.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn heat_dissipation_bounds_cumulative_energy() {
        // With f = 0 the identity becomes exact dissipation:
        // E3(T) + E5(T) <= E5(0) up to solver tolerance.
        let traj = heat_traj(64, 1e-3, 0.05, 1);
        let ledger = build_ledger(&traj, 1.5).unwrap();
        let last = ledger.times.len() - 1;
        let lhs = ledger.e3[last] + ledger.e5[last];
        assert!(lhs <= ledger.e5[0] * (1.0 + 1e-9));
    }

    #[test]
    fn gradient_equivalence_of_e2_and_e5() {
        // lam_A|Du| and |A(u)Du| are equivalent:
        // E2 / C_*^2 <= E5 <= 2 C_*^2 E2, the 2 from lam_A^2 <= 2(lam0^2 + lam^2).
        let g = Grid::new_1d(64, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 2, BoundaryTag::DirichletZero, |x, _| {
            vec![(PI * x).sin(), 0.3 * (2.0 * PI * x).sin()]
        });
        let model = regularize(&make_porous_media(2, 1.0).unwrap(), 0.25).unwrap();
        let reaction = ReactionModel::zero(2);
        let controls = SolverControls::new(1e-3, 0.02).with_stride(4);
        let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
        let ledger = build_ledger(&traj, 1.5).unwrap();
        let cs2 = model.c_star * model.c_star;
        for j in 0..ledger.times.len() {
            let (e2, e5) = (ledger.e2[j], ledger.e5[j]);
            let tol = 1e-9 * (1.0 + e2 + e5);
            assert!(e2 / cs2 <= e5 + tol, "j={j}: lower");
            assert!(e5 <= 2.0 * cs2 * e2 + tol, "j={j}: upper");
        }
    }

    #[test]
    fn uniform_bounds_heat_family_ratios_near_one() {
        let base = make_heat(1);
        let g = Grid::new_1d(48, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| vec![(PI * x).sin()]);
        let reaction = ReactionModel::zero(1);
        let mut ledgers = Vec::new();
        for lam in [1.0, 0.5, 0.25] {
            let model = regularize(&base, lam).unwrap();
            let controls = SolverControls::new(1e-3, 0.02).with_stride(2);
            let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
            ledgers.push(build_ledger(&traj, 1.5).unwrap());
        }
        let report = check_uniform_bounds(&ledgers, 3.0).unwrap();
        assert!(report.verdict, "{report:?}");
        for row in &report.rows[..4] {
            if row.max_sup > 0.0 {
                assert!((row.ratio_last_to_median - 1.0).abs() < 0.5, "{row:?}");
            }
        }
        assert!(check_uniform_bounds(&ledgers[..2], 3.0).is_err());
    }

    #[test]
    fn gronwall_exact_exponential_passes_with_zero_violation() {
        let c = 1.3;
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let y: Vec<f64> = times.iter().map(|t| 2.0 * (c * t).exp()).collect();
        let report = gronwall_check(&times, &y, c, 0.0, 1e-9).unwrap();
        assert!(report.pass);
        assert!(report.max_violation.abs() < 1e-9);
        // Doubling the growth rate against the same envelope fails at t = T.
        let y2: Vec<f64> = times.iter().map(|t| 2.0 * (2.0 * c * t).exp()).collect();
        let report2 = gronwall_check(&times, &y2, c, 0.0, 1e-9).unwrap();
        assert!(!report2.pass);
        assert!(report2.max_violation > 0.0);
        let t_last = times.last().unwrap();
        let expect = 2.0 * ((2.0 * c * t_last).exp() - (c * t_last).exp());
        assert!((report2.max_violation - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn gronwall_fit_bounds_decaying_series() {
        let traj = heat_traj(48, 1e-3, 0.05, 1);
        let ledger = build_ledger(&traj, 1.5).unwrap();
        let y: Vec<f64> = ledger.e1.iter().map(|v| v * v).collect();
        let report = gronwall_fit(&ledger.times, &y, 1e-9 * (1.0 + y[0])).unwrap();
        assert!(report.pass);
        assert!(report.k == 0.0);
        assert!(report.c <= 0.01, "decaying series admits tiny C, got {}", report.c);
    }

    #[test]
    fn energy_residual_zero_reaction_heat() {
        let traj = heat_traj(64, 1e-3, 0.05, 1);
        let report = energy_identity_residual(&traj, 1.5).unwrap();
        assert_eq!(report.fitted_c, 0.0);
        assert!(
            report.max_positive <= 1e-6 * report.e5_initial,
            "max positive {} vs budget {}",
            report.max_positive,
            1e-6 * report.e5_initial
        );
    }

    #[test]
    fn energy_residual_stationary_is_zero() {
        let g = Grid::new_1d(32, 0.0, 1.0).unwrap();
        let state = GridField::from_fn(g, 1, BoundaryTag::NeumannZero, |x, _| vec![x]);
        let model = regularize(&make_porous_media(1, 1.0).unwrap(), 0.5).unwrap();
        let reaction = ReactionModel::zero(1);
        let controls = SolverControls::new(0.01, 0.03);
        let snaps: Vec<(f64, GridField)> =
            (0..4).map(|j| (j as f64 * 0.01, state.clone())).collect();
        let traj = Trajectory::from_snapshots(snaps, model, reaction, controls);
        let report = energy_identity_residual(&traj, 1.5).unwrap();
        assert!(report.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn vmo_profile_decays_on_smooth_heat_state() {
        let traj = heat_traj(64, 1e-3, 0.05, 10);
        let model = make_heat(1);
        let radii = [0.25, 0.125, 0.0625];
        let last = traj.snapshots.len() - 1;
        let entries = vmo_profile(&traj, &model, &radii, &[last]).unwrap();
        let prof = &entries[0].profile_u.entries;
        // Oscillation of the smooth decayed sine shrinks with the radius.
        assert!(prof[0].1 > prof[1].1 && prof[1].1 > prof[2].1, "{prof:?}");
        assert!(entries[0].decay_ratio_u < 1.0);
        // Constant trajectory gives all-zero profiles.
        let g = Grid::new_1d(64, 0.0, 1.0).unwrap();
        let state = GridField::constant(g, &[2.0], BoundaryTag::DirichletZero);
        let controls = SolverControls::new(0.01, 0.02);
        let snaps: Vec<(f64, GridField)> =
            (0..3).map(|j| (j as f64 * 0.01, state.clone())).collect();
        let traj_c =
            Trajectory::from_snapshots(snaps, make_heat(1), ReactionModel::zero(1), controls);
        let entries_c = vmo_profile(&traj_c, &make_heat(1), &radii, &[0, 2]).unwrap();
        for e in entries_c {
            assert!(e.profile_u.entries.iter().all(|(_, v)| *v == 0.0));
        }
    }

    #[test]
    fn holder_transfer_ratio_is_stable_across_balls() {
        // osc_q(u) <= const * osc_2(P(u))^alpha with q = 2/alpha; the fitted
        // per-ball ratio stays within a small spread on a smooth state.
        let g = Grid::new_1d(64, 0.0, 1.0).unwrap();
        let u0 = GridField::from_fn(g, 1, BoundaryTag::DirichletZero, |x, _| {
            vec![0.8 * (PI * x).sin() + 0.2]
        });
        let base = make_porous_media(1, 1.0).unwrap();
        let model = regularize(&base, 0.25).unwrap();
        let reaction = ReactionModel::zero(1);
        let controls = SolverControls::new(1e-3, 0.03).with_stride(10);
        let traj = run_forward(&model, &reaction, &u0, &controls).unwrap();
        let (alpha, _) = base.holder.unwrap();
        let q = 2.0 / alpha;
        let radii = [0.25, 0.125, 0.0625];
        let u = traj.final_state();
        let pu = u.map_pointwise(1, |cell, out| base.p(cell, out));
        let osc_u = oscillation_q(u, &radii, q).unwrap();
        let osc_p = oscillation_q(&pu, &radii, 2.0).unwrap();
        let ratios: Vec<f64> = osc_u
            .entries
            .iter()
            .zip(&osc_p.entries)
            .filter(|(_, (_, d))| *d > 1e-12)
            .map(|((_, n), (_, d))| n / d.powf(alpha))
            .collect();
        assert!(ratios.len() >= 2);
        let max = ratios.iter().fold(f64::MIN, |a, b| a.max(*b));
        let min = ratios.iter().fold(f64::MAX, |a, b| a.min(*b));
        assert!(max / min < 3.0, "transfer ratios spread too far: {ratios:?}");
    }

    proptest! {
        #[test]
        fn gronwall_monotone_in_c(c1 in 0.1f64..2.0, bump in 1.01f64..3.0) {
            let times: Vec<f64> = (0..30).map(|i| i as f64 * 0.05).collect();
            let y: Vec<f64> = times.iter().map(|t| 1.5 * (c1 * t).exp()).collect();
            let r1 = gronwall_check(&times, &y, c1, 0.0, 1e-9).unwrap();
            prop_assert!(r1.pass);
            let r2 = gronwall_check(&times, &y, c1 * bump, 0.0, 1e-9).unwrap();
            prop_assert!(r2.pass);
            prop_assert!(r2.max_violation <= r1.max_violation + 1e-12);
        }
    }
}
