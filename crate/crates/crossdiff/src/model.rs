//! Diffusion/reaction model instances and sampled verification of their
//! structural hypotheses: ellipticity of the Jacobian, reaction growth and
//! sign conditions, and Holder continuity of the inverse map.

use crate::error::{CrossDiffError, Result};
use crate::linalg::{mat_vec, operator_norm, sym_eigen};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::sync::Arc;

type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The triple (P, A = P_u, lambda) plus structural metadata. Evaluators are
/// pure and reentrant; instances are cheap to clone and safe to share.
#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    pub m: usize,
    p: VecFn,
    /// Row-major m x m Jacobian of P.
    jac: VecFn,
    lambda: ScalarFn,
    /// Growth exponent k of lambda(u) ~ |u|^k; 0 means constant lambda.
    pub growth_k: f64,
    /// Ellipticity floor: lambda(u) >= lambda_floor; > 0 exactly when regular (PR).
    pub lambda_floor: f64,
    /// Structural constant in |A(u)| <= C_* lambda(u).
    pub c_star: f64,
    /// Holder data of the inverse map, when declared: (alpha_P, [P]_{alpha_P}).
    pub holder: Option<(f64, f64)>,
}

impl std::fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("growth_k", &self.growth_k)
            .field("lambda_floor", &self.lambda_floor)
            .field("c_star", &self.c_star)
            .field("holder", &self.holder)
            .finish()
    }
}

impl DiffusionModel {
    pub fn p(&self, u: &[f64], out: &mut [f64]) {
        (self.p)(u, out);
    }

    pub fn jacobian(&self, u: &[f64], out: &mut [f64]) {
        (self.jac)(u, out);
    }

    pub fn lambda(&self, u: &[f64]) -> f64 {
        (self.lambda)(u)
    }

    /// Full ellipticity function of the (possibly regularized) Jacobian.
    /// `lambda()` already includes the floor, so lambda_A coincides with it.
    pub fn lambda_a(&self, u: &[f64]) -> f64 {
        self.lambda(u)
    }

    /// Ellipticity of the underlying degenerate map: lambda(u) minus the floor.
    pub fn lambda_base(&self, u: &[f64]) -> f64 {
        self.lambda(u) - self.lambda_floor
    }

    pub fn is_regular(&self) -> bool {
        self.lambda_floor > 0.0
    }
}

/// Reaction term f with Jacobian, growth constant of |f(u)| <= C|u|(1+lambda(u)),
/// an optional sign-condition class, and the optional decomposition f = Ku + g.
#[derive(Clone)]
pub struct ReactionModel {
    pub name: String,
    pub m: usize,
    f: VecFn,
    f_jac: VecFn,
    pub growth_c: f64,
    pub sign: SignCondition,
    /// Constant linear part K (row-major m x m); zero matrix when absent.
    pub linear_part: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SignCondition {
    None,
    /// <f(u), u> <= c |u|^2 on the nonnegative quadrant.
    Competitive { c: f64 },
    /// <f(u), u> <= c0 |u|^2 + c0_cubic |u|^3 everywhere.
    Cooperative { c0: f64, c0_cubic: f64 },
}

impl std::fmt::Debug for ReactionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReactionModel")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("growth_c", &self.growth_c)
            .field("sign", &self.sign)
            .finish()
    }
}

impl ReactionModel {
    pub fn f(&self, u: &[f64], out: &mut [f64]) {
        (self.f)(u, out);
    }

    pub fn f_jac(&self, u: &[f64], out: &mut [f64]) {
        (self.f_jac)(u, out);
    }

    /// Jacobian of the remainder g = f - Ku.
    pub fn g_jac(&self, u: &[f64], out: &mut [f64]) {
        (self.f_jac)(u, out);
        for k in 0..self.m * self.m {
            out[k] -= self.linear_part[k];
        }
    }

    pub fn is_zero(&self) -> bool {
        self.name == "zero"
    }

    pub fn zero(m: usize) -> Self {
        ReactionModel {
            name: "zero".into(),
            m,
            f: Arc::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
            f_jac: Arc::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
            growth_c: 0.0,
            sign: SignCondition::Competitive { c: 0.0 },
            linear_part: vec![0.0; m * m],
        }
    }

    /// f(u) = K u, so g = 0. Growth constant is the operator norm of K.
    pub fn linear(m: usize, k_matrix: Vec<f64>) -> Self {
        assert_eq!(k_matrix.len(), m * m);
        let kc = k_matrix.clone();
        let kj = k_matrix.clone();
        let norm = operator_norm(m, &k_matrix);
        // <Ku, u> <= ||sym K|| |u|^2 everywhere.
        let mut symk = k_matrix.clone();
        for i in 0..m {
            for j in 0..m {
                symk[i * m + j] = 0.5 * (k_matrix[i * m + j] + k_matrix[j * m + i]);
            }
        }
        let (eigs, _) = sym_eigen(m, &symk);
        let top = *eigs.last().unwrap();
        ReactionModel {
            name: "linear".into(),
            m,
            f: Arc::new(move |u, out| mat_vec(u.len(), &kc, u, out)),
            f_jac: Arc::new(move |_, out| out.copy_from_slice(&kj)),
            growth_c: norm,
            sign: SignCondition::Competitive { c: top },
            linear_part: k_matrix,
        }
    }
}

/// SKT parameter set: self-diffusion d_i, cross-diffusion alpha_ij, and
/// Lotka-Volterra reaction coefficients f_i(u) = u_i (a_i + b_i u_1 + c_i u_2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SktParams {
    pub d1: f64,
    pub d2: f64,
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
}

impl SktParams {
    /// Strict admissibility: a21^2 < 8 a11 a12 and a12^2 < 8 a22 a21.
    pub fn is_admissible(&self) -> bool {
        self.a21 * self.a21 < 8.0 * self.a11 * self.a12
            && self.a12 * self.a12 < 8.0 * self.a22 * self.a21
    }

    /// Per-inequality admissibility report with signed margins.
    pub fn check_admissibility(&self) -> StructureReport {
        let m1 = 8.0 * self.a11 * self.a12 - self.a21 * self.a21;
        let m2 = 8.0 * self.a22 * self.a21 - self.a12 * self.a12;
        let cond = |name: &str, margin: f64, wit: Vec<f64>| ConditionReport {
            condition: name.to_string(),
            verdict: margin > 0.0,
            witness_u: wit,
            witness_zeta: None,
            margin,
            samples: 1,
            fitted: None,
        };
        StructureReport {
            domain: "skt admissibility (1.6)".into(),
            conditions: vec![
                cond("skt_admissible_a21", m1, vec![self.a21, self.a11, self.a12]),
                cond("skt_admissible_a12", m2, vec![self.a12, self.a22, self.a21]),
            ],
        }
    }
}

/// Vectorial porous-media model P(u) = |u|^k u with
/// A(u) = |u|^k I + k |u|^{k-2} u u^T (zero at u = 0) and lambda(u) = |u|^k.
pub fn make_porous_media(m: usize, k: f64) -> Result<DiffusionModel> {
    if m < 1 {
        return Err(CrossDiffError::invalid("m", "component count must be >= 1"));
    }
    if k <= 0.0 {
        return Err(CrossDiffError::invalid("k", "porous-media exponent must be > 0"));
    }
    let p: VecFn = Arc::new(move |u, out| {
        let r = norm(u);
        let s = if r == 0.0 { 0.0 } else { r.powf(k) };
        for (o, &ui) in out.iter_mut().zip(u) {
            *o = s * ui;
        }
    });
    let jac: VecFn = Arc::new(move |u, out| {
        let mm = u.len();
        let r = norm(u);
        if r == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let rk = r.powf(k);
        let rk2 = k * r.powf(k - 2.0);
        for i in 0..mm {
            for j in 0..mm {
                out[i * mm + j] = rk2 * u[i] * u[j] + if i == j { rk } else { 0.0 };
            }
        }
    });
    let lambda: ScalarFn = Arc::new(move |u| norm(u).powf(k));
    let alpha = 1.0 / (k + 1.0);
    let holder_const = fit_porous_holder_constant(m, k);
    Ok(DiffusionModel {
        name: format!("porous_media(m={m},k={k})"),
        m,
        p,
        jac,
        lambda,
        growth_k: k,
        lambda_floor: 0.0,
        c_star: 1.0 + k,
        holder: Some((alpha, holder_const)),
    })
}

/// Empirical Holder constant for the porous-media inverse. The ratio
/// |u-v| / |P(u)-P(v)|^{1/(k+1)} is scale-invariant, so sampling pairs at unit
/// scale covers all of R^m; the max is inflated by 0.1% sampling slack.
fn fit_porous_holder_constant(m: usize, k: f64) -> f64 {
    let alpha = 1.0 / (k + 1.0);
    let mut best: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x504d45);
    let mut pu = vec![0.0; m];
    let mut pv = vec![0.0; m];
    let pmap = |u: &[f64], out: &mut [f64]| {
        let r = norm(u);
        let s = if r == 0.0 { 0.0 } else { r.powf(k) };
        for (o, &ui) in out.iter_mut().zip(u) {
            *o = s * ui;
        }
    };
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    // Antipodal and axis pairs are the binding candidates.
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        let ne: Vec<f64> = e.iter().map(|v| -v).collect();
        pairs.push((e.clone(), ne));
        pairs.push((e.clone(), vec![0.0; m]));
        for t in [-0.75, -0.25, 0.25, 0.75] {
            pairs.push((e.clone(), e.iter().map(|v| v * t).collect()));
        }
    }
    for _ in 0..800 {
        let u = sphere_sample(m, &mut rng);
        let scale: f64 = rng.gen_range(0.0..1.0);
        let v: Vec<f64> = sphere_sample(m, &mut rng).iter().map(|x| x * scale).collect();
        pairs.push((u, v));
    }
    for (u, v) in &pairs {
        pmap(u, &mut pu);
        pmap(v, &mut pv);
        let num = dist(u, v);
        let den = dist(&pu, &pv);
        if den > 0.0 {
            best = best.max(num / den.powf(alpha));
        }
    }
    best * 1.001
}

/// SKT cross-diffusion model (1.5)/(1.7) with Lotka-Volterra reactions.
/// lambda(u) = min(d1, d2) + c_alpha |u| on the nonnegative quadrant, with
/// c_alpha fitted by minimizing the symmetric-part Rayleigh quotient.
pub fn make_skt(params: SktParams) -> Result<(DiffusionModel, ReactionModel)> {
    for (name, v) in [
        ("alpha_11", params.a11),
        ("alpha_12", params.a12),
        ("alpha_21", params.a21),
        ("alpha_22", params.a22),
    ] {
        if v <= 0.0 {
            return Err(CrossDiffError::invalid(name, "cross-diffusion coefficients must be > 0"));
        }
    }
    if params.d1 < 0.0 || params.d2 < 0.0 {
        return Err(CrossDiffError::invalid("d", "self-diffusion must be >= 0"));
    }
    let pr = params;
    let p: VecFn = Arc::new(move |u, out| {
        out[0] = pr.d1 * u[0] + pr.a11 * u[0] * u[0] + pr.a12 * u[0] * u[1];
        out[1] = pr.d2 * u[1] + pr.a21 * u[0] * u[1] + pr.a22 * u[1] * u[1];
    });
    let jac: VecFn = Arc::new(move |u, out| {
        out[0] = pr.d1 + 2.0 * pr.a11 * u[0] + pr.a12 * u[1];
        out[1] = pr.a12 * u[0];
        out[2] = pr.a21 * u[1];
        out[3] = pr.d2 + pr.a21 * u[0] + 2.0 * pr.a22 * u[1];
    });

    // Rayleigh-quotient fit of c_alpha over the quadrant sphere (the cross part
    // is 1-homogeneous, so angles suffice); shrunk by 0.1% sampling slack.
    let (c_alpha_raw, cross_norm) = fit_skt_constants(&params);
    let c_alpha = (c_alpha_raw * 0.999).max(0.0);
    let dmin = params.d1.min(params.d2);
    let dmax = params.d1.max(params.d2);
    let lambda: ScalarFn = Arc::new(move |u| dmin + c_alpha * norm(u));
    let mut c_star = (cross_norm * 1.001 / c_alpha.max(1e-12)).max(1.0);
    if dmin > 0.0 {
        c_star = c_star.max(dmax / dmin);
    }
    let model = DiffusionModel {
        name: "skt".into(),
        m: 2,
        p,
        jac,
        lambda,
        growth_k: 1.0,
        lambda_floor: dmin,
        c_star,
        holder: Some((0.5, fit_skt_holder_constant(&params))),
    };

    let reaction = make_lotka_volterra(params.a, params.b, params.c);
    Ok((model, reaction))
}

fn fit_skt_constants(p: &SktParams) -> (f64, f64) {
    let mut min_ratio = f64::INFINITY;
    let mut max_norm: f64 = 0.0;
    let nodes = 2048;
    for i in 0..=nodes {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / nodes as f64;
        let u = [theta.cos(), theta.sin()];
        // d = 0 part of the Jacobian.
        let a = [
            2.0 * p.a11 * u[0] + p.a12 * u[1],
            p.a12 * u[0],
            p.a21 * u[1],
            p.a21 * u[0] + 2.0 * p.a22 * u[1],
        ];
        let sym = [a[0], 0.5 * (a[1] + a[2]), 0.5 * (a[1] + a[2]), a[3]];
        let (eigs, _) = sym_eigen(2, &sym);
        min_ratio = min_ratio.min(eigs[0]);
        max_norm = max_norm.max(operator_norm(2, &a));
    }
    (min_ratio, max_norm)
}

fn fit_skt_holder_constant(p: &SktParams) -> f64 {
    let alpha = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(0x534b54);
    let mut best: f64 = 0.0;
    let eval = |u: &[f64]| -> [f64; 2] {
        [
            p.d1 * u[0] + p.a11 * u[0] * u[0] + p.a12 * u[0] * u[1],
            p.d2 * u[1] + p.a21 * u[0] * u[1] + p.a22 * u[1] * u[1],
        ]
    };
    let mut pairs: Vec<([f64; 2], [f64; 2])> = vec![
        ([1.0, 0.0], [0.0, 1.0]),
        ([1.0, 0.0], [0.0, 0.0]),
        ([0.0, 1.0], [0.0, 0.0]),
        ([1.0, 1.0], [0.0, 0.0]),
    ];
    for _ in 0..1200 {
        let u = [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)];
        let v = [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)];
        pairs.push((u, v));
    }
    for (u, v) in &pairs {
        let pu = eval(u);
        let pv = eval(v);
        let num = dist(u, v);
        let den = dist(&pu, &pv);
        if den > 0.0 {
            best = best.max(num / den.powf(alpha));
        }
    }
    best * 1.001
}

/// Lotka-Volterra reaction f_i(u) = u_i (a_i + b_i u_1 + c_i u_2) with the
/// linear part K = diag(a) split off for the uniqueness machinery.
pub fn make_lotka_volterra(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ReactionModel {
    let f: VecFn = Arc::new(move |u, out| {
        out[0] = u[0] * (a[0] + b[0] * u[0] + c[0] * u[1]);
        out[1] = u[1] * (a[1] + b[1] * u[0] + c[1] * u[1]);
    });
    let f_jac: VecFn = Arc::new(move |u, out| {
        out[0] = a[0] + 2.0 * b[0] * u[0] + c[0] * u[1];
        out[1] = c[0] * u[0];
        out[2] = b[1] * u[1];
        out[3] = a[1] + b[1] * u[0] + 2.0 * c[1] * u[1];
    });
    let competitive = b.iter().chain(c.iter()).all(|&v| v <= 0.0);
    let sign = if competitive {
        SignCondition::Competitive { c: a[0].max(a[1]) }
    } else {
        SignCondition::Cooperative {
            c0: a[0].max(a[1]),
            c0_cubic: (b[0].abs() + c[0].abs()).max(b[1].abs() + c[1].abs()),
        }
    };
    // |f(u)| <= |u| (max|a_i| + maxrow(|b|,|c|) |u|); the quadratic part is
    // dominated by lambda(u) ~ |u| up to the fitted constant.
    let amax = a[0].abs().max(a[1].abs());
    let qmax = (b[0].abs() + c[0].abs()).max(b[1].abs() + c[1].abs());
    ReactionModel {
        name: "lotka_volterra".into(),
        m: 2,
        f,
        f_jac,
        growth_c: amax.max(qmax) * 2.0,
        sign,
        linear_part: vec![a[0], 0.0, 0.0, a[1]],
    }
}

/// Linear model P(u) = u: the heat fixture. lambda = 1, A = I; regular with
/// floor 1 and exact Holder data (alpha = 1, constant 1).
pub fn make_heat(m: usize) -> DiffusionModel {
    DiffusionModel {
        name: format!("heat(m={m})"),
        m,
        p: Arc::new(|u, out| out.copy_from_slice(u)),
        jac: Arc::new(|u, out| {
            let mm = u.len();
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..mm {
                out[i * mm + i] = 1.0;
            }
        }),
        lambda: Arc::new(|_| 1.0),
        growth_k: 0.0,
        lambda_floor: 1.0,
        c_star: 1.0,
        holder: Some((1.0, 1.0)),
    }
}

/// Broken fixture: P identically zero with a declared lambda of 1. Every
/// ellipticity sample is a counterexample; used as a negative control.
pub fn make_zero_map_fixture(m: usize) -> DiffusionModel {
    DiffusionModel {
        name: format!("zero_map(m={m})"),
        m,
        p: Arc::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
        jac: Arc::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
        lambda: Arc::new(|_| 1.0),
        growth_k: 0.0,
        lambda_floor: 1.0,
        c_star: 1.0,
        holder: None,
    }
}

/// Custom reaction from closures, for fixtures and tests.
pub fn make_custom_reaction(
    name: &str,
    m: usize,
    f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    f_jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    growth_c: f64,
    sign: SignCondition,
) -> ReactionModel {
    ReactionModel {
        name: name.into(),
        m,
        f: Arc::new(f),
        f_jac: Arc::new(f_jac),
        growth_c,
        sign,
        linear_part: vec![0.0; m * m],
    }
}

/// P_new(u) = lambda0 u + P(u): the regularization of (4.4). The original
/// model is untouched; the returned floor records the regularization parameter.
pub fn regularize(model: &DiffusionModel, lambda0: f64) -> Result<DiffusionModel> {
    if lambda0 <= 0.0 {
        return Err(CrossDiffError::invalid("lambda0", "regularization must be > 0"));
    }
    let base_p = model.p.clone();
    let base_jac = model.jac.clone();
    let base_lambda = model.lambda.clone();
    Ok(DiffusionModel {
        name: format!("{}+{:.6e}I", model.name, lambda0),
        m: model.m,
        p: Arc::new(move |u, out| {
            base_p(u, out);
            for (o, &ui) in out.iter_mut().zip(u) {
                *o += lambda0 * ui;
            }
        }),
        jac: Arc::new(move |u, out| {
            base_jac(u, out);
            let mm = u.len();
            for i in 0..mm {
                out[i * mm + i] += lambda0;
            }
        }),
        lambda: Arc::new(move |u| lambda0 + base_lambda(u)),
        growth_k: model.growth_k,
        lambda_floor: lambda0,
        c_star: model.c_star.max(1.0),
        holder: model.holder,
    })
}

// ---------------------------------------------------------------------------
// Sampled structural checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub enum SampleDomain {
    /// Axis-aligned box given by per-component bounds.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Nonnegative quadrant truncated at the given radius per component.
    NonnegQuadrant { radius: f64 },
}

impl SampleDomain {
    pub fn symmetric_box(m: usize, half_width: f64) -> Self {
        SampleDomain::Box {
            lo: vec![-half_width; m],
            hi: vec![half_width; m],
        }
    }

    fn describe(&self) -> String {
        match self {
            SampleDomain::Box { lo, hi } => format!("box {lo:?}..{hi:?}"),
            SampleDomain::NonnegQuadrant { radius } => format!("nonnegative quadrant, radius {radius}"),
        }
    }
}

/// Sampling plan for structural checks. The seed fixes every draw.
#[derive(Debug, Clone, Serialize)]
pub struct SampleSpec {
    pub domain: SampleDomain,
    pub count: usize,
    pub zeta_count: usize,
    pub seed: u64,
    /// Relative tolerance guard: violations below tol*(1 + scale) are ignored.
    pub tol: f64,
}

impl SampleSpec {
    pub fn new(domain: SampleDomain, count: usize, seed: u64) -> Self {
        SampleSpec {
            domain,
            count,
            zeta_count: 16,
            seed,
            tol: 1e-9,
        }
    }

    /// Deterministic candidates (origin-adjacent, axes, diagonal) followed by
    /// seeded uniform fill, `count` points in total.
    pub fn points(&self, m: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(self.count);
        match &self.domain {
            SampleDomain::Box { lo, hi } => {
                pts.push((0..m).map(|i| 0.5 * (lo[i] + hi[i])).collect());
                for i in 0..m {
                    let mut p: Vec<f64> = (0..m).map(|j| 0.5 * (lo[j] + hi[j])).collect();
                    p[i] = hi[i];
                    pts.push(p.clone());
                    p[i] = lo[i];
                    pts.push(p);
                }
                while pts.len() < self.count {
                    pts.push((0..m).map(|i| rng.gen_range(lo[i]..hi[i])).collect());
                }
            }
            SampleDomain::NonnegQuadrant { radius } => {
                pts.push(vec![0.0; m]);
                for i in 0..m {
                    let mut p = vec![0.0; m];
                    p[i] = *radius;
                    pts.push(p);
                }
                pts.push(vec![radius / (m as f64).sqrt(); m]);
                while pts.len() < self.count {
                    pts.push((0..m).map(|_| rng.gen_range(0.0..*radius)).collect());
                }
            }
        }
        pts.truncate(self.count.max(1));
        pts
    }
}

/// One verified condition with its worst sample.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: bool,
    pub witness_u: Vec<f64>,
    pub witness_zeta: Option<Vec<f64>>,
    /// Signed worst-case margin (negative means the inequality was violated).
    pub margin: f64,
    pub samples: usize,
    /// Smallest constant making the inequality hold over the sample, when meaningful.
    pub fitted: Option<f64>,
}

/// Per-condition verdicts over a sampled domain.
#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub domain: String,
    pub conditions: Vec<ConditionReport>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.condition == name)
    }
}

struct WorstTracker {
    margin: f64,
    witness_u: Vec<f64>,
    witness_zeta: Option<Vec<f64>>,
    violated: bool,
}

impl WorstTracker {
    fn new() -> Self {
        WorstTracker {
            margin: f64::INFINITY,
            witness_u: Vec::new(),
            witness_zeta: None,
            violated: false,
        }
    }

    fn observe(&mut self, margin: f64, tol: f64, u: &[f64], zeta: Option<&[f64]>) {
        if margin < self.margin {
            self.margin = margin;
            self.witness_u = u.to_vec();
            self.witness_zeta = zeta.map(|z| z.to_vec());
        }
        if margin < -tol {
            self.violated = true;
        }
    }

    fn into_report(self, condition: &str, samples: usize, fitted: Option<f64>) -> ConditionReport {
        ConditionReport {
            condition: condition.to_string(),
            verdict: !self.violated,
            witness_u: self.witness_u,
            witness_zeta: self.witness_zeta,
            margin: if self.margin.is_finite() { self.margin } else { 0.0 },
            samples,
            fitted,
        }
    }
}

/// Verifies both inequalities of (1.2) at sampled (u, zeta):
/// lambda(u)|zeta|^2 <= <A(u) zeta, zeta> and |A(u)| <= C_* lambda(u).
/// Zeta candidates are the coordinate axes, eigenvectors of the symmetric part,
/// and seeded uniform sphere points.
pub fn check_ellipticity(model: &DiffusionModel, sampler: &SampleSpec) -> StructureReport {
    let m = model.m;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed ^ 0x5a5a);
    let mut lower = WorstTracker::new();
    let mut upper = WorstTracker::new();
    let mut a = vec![0.0; m * m];
    let mut sym = vec![0.0; m * m];
    let mut az = vec![0.0; m];
    let points = sampler.points(m);
    for u in &points {
        model.jacobian(u, &mut a);
        let lam = model.lambda(u);
        for i in 0..m {
            for j in 0..m {
                sym[i * m + j] = 0.5 * (a[i * m + j] + a[j * m + i]);
            }
        }
        let (_, eigvecs) = sym_eigen(m, &sym);
        let mut zetas: Vec<Vec<f64>> = Vec::with_capacity(2 * m + m + sampler.zeta_count);
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            zetas.push(e.clone());
            e[i] = -1.0;
            zetas.push(e);
            zetas.push(eigvecs[i * m..(i + 1) * m].to_vec());
        }
        for _ in 0..sampler.zeta_count {
            zetas.push(sphere_sample(m, &mut rng));
        }
        for z in &zetas {
            mat_vec(m, &a, z, &mut az);
            let quad = crate::linalg::dot(&az, z);
            let z2 = crate::linalg::dot(z, z);
            let lhs = lam * z2;
            let tol = sampler.tol * (1.0 + lhs.abs() + quad.abs());
            lower.observe(quad - lhs, tol, u, Some(z));
        }
        let anorm = operator_norm(m, &a);
        let bound = model.c_star * lam;
        let tol = sampler.tol * (1.0 + anorm + bound.abs());
        upper.observe(bound - anorm, tol, u, None);
    }
    let n = points.len();
    StructureReport {
        domain: sampler.domain.describe(),
        conditions: vec![
            lower.into_report("ellipticity_lower", n, None),
            upper.into_report("ellipticity_upper", n, None),
        ],
    }
}

/// Verifies the growth conditions (1.3)/(1.4) against the declared constant and
/// the declared sign condition (1.8)/(1.9); also fits the smallest constants
/// that hold over the sample.
pub fn check_reaction_growth(
    reaction: &ReactionModel,
    model: &DiffusionModel,
    sampler: &SampleSpec,
) -> StructureReport {
    let m = reaction.m;
    let mut fval = vec![0.0; m];
    let mut fjac = vec![0.0; m * m];
    let mut growth_f = WorstTracker::new();
    let mut growth_fu = WorstTracker::new();
    let mut sign_w = WorstTracker::new();
    let (mut fit_f, mut fit_fu, mut fit_sign): (f64, f64, f64) = (0.0, 0.0, f64::NEG_INFINITY);
    let points = sampler.points(m);
    let mut sign_samples = 0usize;
    for u in &points {
        let lam = model.lambda(u);
        let r = norm(u);
        reaction.f(u, &mut fval);
        reaction.f_jac(u, &mut fjac);
        let fn_ = norm(&fval);
        let envelope = r * (1.0 + lam);
        let tol = sampler.tol * (1.0 + fn_ + reaction.growth_c * envelope);
        growth_f.observe(reaction.growth_c * envelope - fn_, tol, u, None);
        if envelope > 0.0 {
            fit_f = fit_f.max(fn_ / envelope);
        }
        let jn = operator_norm(m, &fjac);
        let envelope_u = 1.0 + lam;
        let tol = sampler.tol * (1.0 + jn + reaction.growth_c * envelope_u);
        growth_fu.observe(reaction.growth_c * envelope_u - jn, tol, u, None);
        fit_fu = fit_fu.max(jn / envelope_u);
        match reaction.sign {
            SignCondition::None => {}
            SignCondition::Competitive { c } => {
                // (1.8) is a quadrant condition.
                if u.iter().all(|&v| v >= 0.0) {
                    let fu = crate::linalg::dot(&fval, u);
                    let bound = c * r * r;
                    let tol = sampler.tol * (1.0 + fu.abs() + bound.abs());
                    sign_w.observe(bound - fu, tol, u, None);
                    sign_samples += 1;
                    if r > 0.0 {
                        fit_sign = fit_sign.max(fu / (r * r));
                    }
                }
            }
            SignCondition::Cooperative { c0, c0_cubic } => {
                let fu = crate::linalg::dot(&fval, u);
                let bound = c0 * r * r + c0_cubic * r * r * r;
                let tol = sampler.tol * (1.0 + fu.abs() + bound.abs());
                sign_w.observe(bound - fu, tol, u, None);
                sign_samples += 1;
            }
        }
    }
    let n = points.len();
    let mut conditions = vec![
        growth_f.into_report("reaction_growth_f", n, Some(fit_f)),
        growth_fu.into_report("reaction_growth_fu", n, Some(fit_fu)),
    ];
    match reaction.sign {
        SignCondition::None => {}
        SignCondition::Competitive { .. } => {
            let fitted = if fit_sign.is_finite() { Some(fit_sign) } else { None };
            conditions.push(sign_w.into_report("reaction_sign_competitive", sign_samples, fitted));
        }
        SignCondition::Cooperative { .. } => {
            conditions.push(sign_w.into_report("reaction_sign_cooperative", sign_samples, None));
        }
    }
    StructureReport {
        domain: sampler.domain.describe(),
        conditions,
    }
}

/// Verifies the inverse-Holder property (4.2), |u-v| <= [P] |P(u)-P(v)|^alpha,
/// on sampled pairs. Reports the empirical smallest [P] over the sample.
pub fn check_holder_inverse(model: &DiffusionModel, sampler: &SampleSpec) -> StructureReport {
    let m = model.m;
    let Some((alpha, cst)) = model.holder else {
        return StructureReport {
            domain: sampler.domain.describe(),
            conditions: vec![ConditionReport {
                condition: "holder_inverse".into(),
                verdict: false,
                witness_u: vec![],
                witness_zeta: None,
                margin: 0.0,
                samples: 0,
                fitted: None,
            }],
        };
    };
    let points = sampler.points(m);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed ^ 0x484f);
    let mut tracker = WorstTracker::new();
    let mut fitted: f64 = 0.0;
    let mut pu = vec![0.0; m];
    let mut pv = vec![0.0; m];
    let npairs = points.len();
    for _ in 0..npairs {
        let u = &points[rng.gen_range(0..points.len())];
        let v = &points[rng.gen_range(0..points.len())];
        model.p(u, &mut pu);
        model.p(v, &mut pv);
        let lhs = dist(u, v);
        let dp = dist(&pu, &pv);
        let rhs = cst * dp.powf(alpha);
        let tol = sampler.tol * (1.0 + lhs + rhs);
        tracker.observe(rhs - lhs, tol, u, Some(v));
        if dp > 0.0 {
            fitted = fitted.max(lhs / dp.powf(alpha));
        } else if lhs > tol {
            // P not injective at this pair: direct violation.
            tracker.observe(-lhs, tol, u, Some(v));
        }
    }
    StructureReport {
        domain: sampler.domain.describe(),
        conditions: vec![tracker.into_report("holder_inverse", npairs, Some(fitted))],
    }
}

/// Oracle check: the analytic Jacobian A(u) against central differences of P
/// with step h = 1e-6, within 1e-6 (1 + max|A|) per entry.
pub fn check_jacobian(model: &DiffusionModel, sampler: &SampleSpec) -> StructureReport {
    let m = model.m;
    let points = sampler.points(m);
    let mut tracker = WorstTracker::new();
    let mut a = vec![0.0; m * m];
    for u in &points {
        model.jacobian(u, &mut a);
        let fd = fd_jacobian(|x, out| model.p(x, out), u, 1e-6);
        let amax = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = 1e-6 * (1.0 + amax);
        let mut worst = 0.0f64;
        for k in 0..m * m {
            worst = worst.max((a[k] - fd[k]).abs());
        }
        tracker.observe(tol - worst, 0.0, u, None);
    }
    StructureReport {
        domain: sampler.domain.describe(),
        conditions: vec![tracker.into_report("jacobian_fd_oracle", points.len(), None)],
    }
}

/// Central-difference Jacobian of an R^m -> R^m map.
pub fn fd_jacobian<F>(f: F, u: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = u.len();
    let mut out = vec![0.0; m * m];
    let mut up = u.to_vec();
    let mut um = u.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..m {
        up[j] = u[j] + h;
        um[j] = u[j] - h;
        f(&up, &mut fp);
        f(&um, &mut fm);
        for i in 0..m {
            out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
        up[j] = u[j];
        um[j] = u[j];
    }
    out
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn sphere_sample(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&v);
        if r > 1e-8 {
            return v.iter().map(|x| x / r).collect();
        }
    }
}
