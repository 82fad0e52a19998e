//! Receding-horizon SRB wrench planner.
//!
//! The horizon dynamics use one `A_d` frozen at the current state and a
//! per-step `B_d[k]` that follows the contact schedule. States are eliminated
//! (condensed), leaving the stacked wrenches `U` as the QP variables.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DMatrixView, DVector, Vector3};

use crate::discretize::zoh_series;
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus, NO_BOUND};
use crate::srb::{
    build_continuous_dynamics, idx, rotation_z, ContactSet, InputMatrix, InputWrench, RobotParams, Site, SrbState,
    StateMatrix, StateVector, INPUT_DIM, STATE_DIM,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal state weights.
    pub q: [f64; STATE_DIM],
    /// Optional replacement weights while the hand braces a wall.
    pub q_braced: Option<[f64; STATE_DIM]>,
    /// Diagonal input weights for one wrench; repeated over the horizon.
    pub r: [f64; INPUT_DIM],
    pub control_rate: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let f = 1e-4;
        let mf = 2e-3;
        Self {
            horizon: 10,
            dt: 0.025,
            q: [
                20000.0, 20000.0, 200.0, // θ
                0.0, 0.0, 20000.0, // p
                2000.0, 2000.0, 4.0, // ω
                100.0, 5.0, 200.0, // ṗ
                0.0,
            ],
            q_braced: Some([
                20000.0, 20000.0, 200.0, //
                0.0, 0.0, 20000.0, //
                2000.0, 2000.0, 4.0, //
                100.0, 400.0, 200.0, //
                0.0,
            ]),
            r: [f, f, f, f, f, f, f, f, f, mf, mf, mf, mf, mf, mf, mf, mf, mf],
            control_rate: 250.0,
            qp: QpSettings { tolerance: 1e-9, max_iter: 500 },
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive"));
        }
        let q_ok = |q: &[f64; STATE_DIM]| q.iter().all(|v| *v >= 0.0 && v.is_finite());
        if !q_ok(&self.q) || !self.q_braced.as_ref().is_none_or(q_ok) {
            return Err(Error::InvalidParameter("state weights must be non-negative"));
        }
        if !self.r.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter("input weights must be positive"));
        }
        if !(self.control_rate >= 250.0) {
            return Err(Error::InvalidParameter("control rate must be at least 250 Hz"));
        }
        Ok(())
    }
}

/// Commanded planar velocity in the heading frame and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceLimits {
    pub f_foot_max: f64,
    pub f_hand_min: f64,
    pub f_hand_max: f64,
}

impl ForceLimits {
    pub fn from_params(params: &RobotParams) -> Self {
        Self { f_foot_max: params.f_foot_max, f_hand_min: params.f_hand_min, f_hand_max: params.f_hand_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledContact {
    pub contacts: ContactSet,
    pub limits: ForceLimits,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactSchedule {
    pub steps: Vec<ScheduledContact>,
}

impl ContactSchedule {
    pub fn constant(contacts: ContactSet, limits: ForceLimits, horizon: usize) -> Self {
        Self { steps: vec![ScheduledContact { contacts, limits }; horizon] }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Reference states `x_ref[1..=N]`.
pub fn build_reference(x0: &SrbState, command: &Command, config: &MpcConfig, params: &RobotParams) -> Vec<StateVector> {
    let mut out = Vec::with_capacity(config.horizon);
    let (mut px, mut py) = (x0.position.x, x0.position.y);
    for k in 1..=config.horizon {
        let yaw = x0.theta.z + command.yaw_rate * config.dt * k as f64;
        let v = rotation_z(yaw) * Vector3::new(command.vx, command.vy, 0.0);
        px += v.x * config.dt;
        py += v.y * config.dt;
        let mut x = StateVector::zeros();
        x[idx::THETA + 2] = yaw;
        x[idx::POS] = px;
        x[idx::POS + 1] = py;
        x[idx::POS + 2] = params.z0;
        x[idx::OMEGA + 2] = command.yaw_rate;
        x[idx::VEL] = v.x;
        x[idx::VEL + 1] = v.y;
        x[idx::GRAVITY] = -params.gravity_magnitude();
        out.push(x);
    }
    out
}

/// Horizon dynamics: frozen `A_d` and one `B_d` per step.
#[derive(Debug, Clone)]
pub struct HorizonModel {
    pub a_d: StateMatrix,
    pub b_d: Vec<InputMatrix>,
}

/// Discretize at `x0` for every scheduled contact set. Lever arms for step
/// `k` are taken from the reference CoM position at that step (the current
/// CoM for `k = 0`).
pub fn horizon_model(
    x0: &SrbState,
    reference: &[StateVector],
    schedule: &ContactSchedule,
    config: &MpcConfig,
    params: &RobotParams,
) -> Result<HorizonModel> {
    if schedule.len() != config.horizon || reference.len() != config.horizon {
        return Err(Error::DimensionMismatch("schedule and reference must span the horizon"));
    }
    let mut b_d = Vec::with_capacity(config.horizon);
    let mut a_d = StateMatrix::identity();
    let mut gamma = StateMatrix::zeros();
    for (k, step) in schedule.steps.iter().enumerate() {
        let mut at = *x0;
        if k > 0 {
            let r = &reference[k - 1];
            at.position = Vector3::new(r[idx::POS], r[idx::POS + 1], r[idx::POS + 2]);
        }
        let (a, b) = build_continuous_dynamics(&at, &step.contacts, params)?;
        if k == 0 {
            (a_d, gamma) = zoh_series(&a, config.dt)?;
        }
        b_d.push(gamma * b);
    }
    Ok(HorizonModel { a_d, b_d })
}

/// Dense condensed problem with the stacked transition matrices.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub problem: QpProblem,
    pub a_qp: DMatrix<f64>,
    pub b_qp: DMatrix<f64>,
}

/// Condense over all `18 N` inputs, with the constraint block left empty.
pub fn condense(
    model: &HorizonModel,
    x0: &StateVector,
    reference: &[StateVector],
    q: &[f64; STATE_DIM],
    r: &[f64; INPUT_DIM],
) -> Result<Condensed> {
    let n_h = model.b_d.len();
    if reference.len() != n_h || n_h == 0 {
        return Err(Error::DimensionMismatch("reference length must equal the horizon"));
    }
    let vars: Vec<Var> = (0..n_h).flat_map(|j| (0..INPUT_DIM).map(move |i| Var { step: j, input: i })).collect();
    let (h, m) = condense_vars(model, x0, reference, q, r, &vars);

    let mut a_qp = DMatrix::zeros(STATE_DIM * n_h, STATE_DIM);
    let mut b_qp = DMatrix::zeros(STATE_DIM * n_h, INPUT_DIM * n_h);
    let mut power = StateMatrix::identity();
    for k in 0..n_h {
        power = model.a_d * power;
        a_qp.view_mut((STATE_DIM * k, 0), (STATE_DIM, STATE_DIM)).copy_from(&power);
        // Block (k, j) = A^(k−j) B_j for j ≤ k.
        let mut block_power = StateMatrix::identity();
        for j in (0..=k).rev() {
            let block = block_power * model.b_d[j];
            b_qp.view_mut((STATE_DIM * k, INPUT_DIM * j), (STATE_DIM, INPUT_DIM)).copy_from(&block);
            block_power = model.a_d * block_power;
        }
    }
    let n = INPUT_DIM * n_h;
    let problem = QpProblem::new(h, m, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))?;
    Ok(Condensed { problem, a_qp, b_qp })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Var {
    step: usize,
    input: usize,
}

/// `H = 2(Bᵀ Q̄ B + R)` and `m = 2 Bᵀ Q̄ (A x0 − x_ref)` restricted to `vars`,
/// using that input `j` only reaches states `k > j`.
fn condense_vars(
    model: &HorizonModel,
    x0: &StateVector,
    reference: &[StateVector],
    q: &[f64; STATE_DIM],
    r: &[f64; INPUT_DIM],
    vars: &[Var],
) -> (DMatrix<f64>, DVector<f64>) {
    let n_h = model.b_d.len();
    let nv = vars.len();
    let sq: StateVector = StateVector::from_iterator(q.iter().map(|v| libm::sqrt(*v)));

    // Weighted free-response error, one 13-vector per predicted state.
    let mut err = Vec::with_capacity(n_h);
    let mut x = *x0;
    for rk in reference {
        x = model.a_d * x;
        err.push((x - rk).component_mul(&sq));
    }

    // w[v][k - step - 1] = sqrt(Q) A^(k−step−1) b_v for the states k it reaches.
    let mut w: Vec<Vec<StateVector>> = Vec::with_capacity(nv);
    for v in vars {
        let mut g: StateVector = model.b_d[v.step].column(v.input).into_owned();
        let mut col = Vec::with_capacity(n_h - v.step);
        for _ in v.step..n_h {
            col.push(g.component_mul(&sq));
            g = model.a_d * g;
        }
        w.push(col);
    }

    let mut h = DMatrix::zeros(nv, nv);
    let mut m = DVector::zeros(nv);
    for a in 0..nv {
        let sa = vars[a].step;
        let wa = &w[a];
        let mut acc = 0.0;
        for (t, wk) in wa.iter().enumerate() {
            acc += wk.dot(&err[sa + t]);
        }
        m[a] = 2.0 * acc;
        for b in a..nv {
            let sb = vars[b].step;
            let wb = &w[b];
            let start = sa.max(sb);
            let mut acc = 0.0;
            for k in start..n_h {
                acc += wa[k - sa].dot(&wb[k - sb]);
            }
            let mut val = 2.0 * acc;
            if a == b {
                val += 2.0 * r[vars[a].input];
            }
            h[(a, b)] = val;
            h[(b, a)] = val;
        }
    }
    (h, m)
}

/// A constraint row over the stacked inputs, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

/// Contact rows for one horizon step, with column offsets for that step.
fn step_rows(step: usize, sc: &ScheduledContact, mu: f64, rows: &mut Vec<SparseRow>) {
    let base = step * INPUT_DIM;
    let lim = &sc.limits;
    let pin = |rows: &mut Vec<SparseRow>, col: usize| {
        rows.push(SparseRow { coeffs: vec![(base + col, 1.0)], lower: 0.0, upper: 0.0 });
    };
    for site in [Site::Left, Site::Right] {
        let f = base + 3 * site.index();
        if sc.contacts.is_active(site) {
            for axis in 0..2 {
                rows.push(SparseRow { coeffs: vec![(f + axis, 1.0), (f + 2, -mu)], lower: -NO_BOUND, upper: 0.0 });
                rows.push(SparseRow { coeffs: vec![(f + axis, 1.0), (f + 2, mu)], lower: 0.0, upper: NO_BOUND });
            }
            rows.push(SparseRow { coeffs: vec![(f + 2, 1.0)], lower: 0.0, upper: lim.f_foot_max });
        } else {
            for c in 0..3 {
                pin(rows, 3 * site.index() + c);
                pin(rows, idx::M_HAND + 3 * site.index() + c);
            }
        }
    }
    if sc.contacts.hand_in_contact {
        let n = sc.contacts.hand_normal;
        let n = Vector3::new(n.x, n.y, 0.0).normalize();
        let z = Vector3::z();
        let t = n.cross(&z);
        let f = base + idx::F_HAND;
        let row = |a: Vector3<f64>| (0..3).map(|i| (f + i, a[i])).filter(|(_, c)| *c != 0.0).collect::<Vec<_>>();
        for dir in [t, z] {
            rows.push(SparseRow { coeffs: row(dir - n * mu), lower: -NO_BOUND, upper: 0.0 });
            rows.push(SparseRow { coeffs: row(dir + n * mu), lower: 0.0, upper: NO_BOUND });
        }
        rows.push(SparseRow { coeffs: row(n), lower: lim.f_hand_min, upper: lim.f_hand_max });
    } else {
        for c in 0..3 {
            pin(rows, idx::F_HAND + c);
            pin(rows, idx::M_HAND + c);
        }
    }
}

pub fn contact_rows(schedule: &ContactSchedule, params: &RobotParams) -> Vec<SparseRow> {
    let mut rows = Vec::new();
    for (k, sc) in schedule.steps.iter().enumerate() {
        step_rows(k, sc, params.mu, &mut rows);
    }
    rows
}

/// Dense `(C, c_min, c_max)` over all `18 N` inputs.
pub fn build_contact_constraints(schedule: &ContactSchedule, params: &RobotParams) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let rows = contact_rows(schedule, params);
    let n = INPUT_DIM * schedule.len();
    let mut c = DMatrix::zeros(rows.len(), n);
    let mut lo = DVector::zeros(rows.len());
    let mut hi = DVector::zeros(rows.len());
    for (r, row) in rows.iter().enumerate() {
        for &(col, v) in &row.coeffs {
            c[(r, col)] = v;
        }
        lo[r] = row.lower;
        hi[r] = row.upper;
    }
    (c, lo, hi)
}

/// Weight shared equally by the stance feet; zero elsewhere.
pub fn nominal_wrench(contacts: &ContactSet, params: &RobotParams) -> InputWrench {
    let mut w = InputWrench::default();
    let feet: Vec<Site> = [Site::Left, Site::Right].into_iter().filter(|s| contacts.is_active(*s)).collect();
    for s in &feet {
        w.forces[s.index()].z = params.weight() / feet.len() as f64;
    }
    w
}

/// Largest violation of the contact rows of step 0 by `u`.
pub fn first_step_violation(u: &InputWrench, contacts: &ScheduledContact, params: &RobotParams) -> f64 {
    let mut rows = Vec::new();
    step_rows(0, contacts, params.mu, &mut rows);
    let v = u.to_vector();
    rows.iter()
        .map(|row| {
            let s: f64 = row.coeffs.iter().map(|&(c, a)| a * v[c]).sum();
            let mut viol: f64 = 0.0;
            if row.lower > -1e18 {
                viol = viol.max(row.lower - s);
            }
            if row.upper < 1e18 {
                viol = viol.max(s - row.upper);
            }
            viol
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub wrench: InputWrench,
    /// Predicted states `x[1..=N]`.
    pub predicted: Vec<StateVector>,
    pub reference: Vec<StateVector>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    /// The previous wrench was reused because the solve failed.
    pub fallback: bool,
    pub solve_time: f64,
    pub n_vars: usize,
    pub n_rows: usize,
}

/// One receding-horizon solve. `previous` is reused (masked to the current
/// contacts) when the QP does not return an optimal point.
pub fn solve_mpc(
    x0: &SrbState,
    command: &Command,
    schedule: &ContactSchedule,
    config: &MpcConfig,
    params: &RobotParams,
    solver: &mut QpSolver,
    previous: &InputWrench,
) -> Result<MpcOutput> {
    config.validate()?;
    let reference = build_reference(x0, command, config, params);
    let model = horizon_model(x0, &reference, schedule, config, params)?;
    let x0v = x0.to_vector();
    let braced = schedule.steps.first().is_some_and(|s| s.contacts.hand_in_contact);
    let q = match (&config.q_braced, braced) {
        (Some(qb), true) => qb,
        _ => &config.q,
    };

    // Inputs whose column in B_d is zero cannot move the state; at the
    // optimum they sit at zero, so only the others become QP variables.
    let mut vars = Vec::new();
    let mut var_of = vec![usize::MAX; INPUT_DIM * config.horizon];
    for (j, b) in model.b_d.iter().enumerate() {
        for i in 0..INPUT_DIM {
            if b.column(i).iter().any(|v| *v != 0.0) {
                var_of[j * INPUT_DIM + i] = vars.len();
                vars.push(Var { step: j, input: i });
            }
        }
    }
    let (h, mut m) = condense_vars(&model, &x0v, &reference, q, &config.r, &vars);
    // Regularize about the static support wrench rather than zero.
    for (v, var) in vars.iter().enumerate() {
        let nominal = nominal_wrench(&schedule.steps[var.step].contacts, params).to_vector();
        m[v] -= 2.0 * config.r[var.input] * nominal[var.input];
    }

    let rows = contact_rows(schedule, params);
    let mut kept = Vec::with_capacity(rows.len());
    for row in &rows {
        let coeffs: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .filter(|(c, _)| var_of[*c] != usize::MAX)
            .map(|&(c, a)| (var_of[c], a))
            .collect();
        if coeffs.is_empty() {
            continue;
        }
        kept.push((coeffs, row.lower, row.upper));
    }
    let nv = vars.len();
    let mut c = DMatrix::zeros(kept.len(), nv);
    let mut lo = DVector::zeros(kept.len());
    let mut hi = DVector::zeros(kept.len());
    for (r, (coeffs, l, u)) in kept.iter().enumerate() {
        for &(col, a) in coeffs {
            c[(r, col)] = a;
        }
        lo[r] = *l;
        hi[r] = *u;
    }
    let problem = QpProblem::new(h, m, c, lo, hi)?;
    solver.settings = config.qp;
    let sol = solver.solve(&problem);

    let (status, iterations, objective, solve_time, u_full) = match &sol {
        Ok(s) if s.status == QpStatus::Optimal => {
            let mut u = DVector::zeros(INPUT_DIM * config.horizon);
            for (v, var) in vars.iter().enumerate() {
                u[var.step * INPUT_DIM + var.input] = s.u[v];
            }
            (s.status, s.iterations, s.objective, s.solve_time, Some(u))
        }
        Ok(s) => (s.status, s.iterations, f64::NAN, s.solve_time, None),
        Err(_) => (QpStatus::Infeasible, 0, f64::NAN, 0.0, None),
    };
    if sol.is_ok() && u_full.is_none() {
        solver.reset_warm_start();
    }

    let fallback = u_full.is_none();
    let u_full = u_full.unwrap_or_else(|| {
        let held = schedule.steps.iter().flat_map(|s| {
            let w = previous.masked(&s.contacts).to_vector();
            w.iter().copied().collect::<Vec<_>>()
        });
        DVector::from_iterator(INPUT_DIM * config.horizon, held)
    });
    let wrench = InputWrench::from_slice(&u_full.as_slice()[..INPUT_DIM]);
    let predicted = rollout(&model, &x0v, u_full.rows(0, INPUT_DIM * config.horizon).as_view());

    Ok(MpcOutput {
        wrench,
        predicted,
        reference,
        status,
        iterations,
        objective,
        fallback,
        solve_time,
        n_vars: nv,
        n_rows: kept.len(),
    })
}

/// Step the discrete model through the stacked inputs.
pub fn rollout(model: &HorizonModel, x0: &StateVector, u: DMatrixView<f64>) -> Vec<StateVector> {
    let mut x = *x0;
    let mut out = Vec::with_capacity(model.b_d.len());
    for (k, b) in model.b_d.iter().enumerate() {
        let uk = u.rows(k * INPUT_DIM, INPUT_DIM);
        let mut bu = StateVector::zeros();
        for i in 0..INPUT_DIM {
            let ui = uk[i];
            if ui != 0.0 {
                bu += b.column(i) * ui;
            }
        }
        x = model.a_d * x + bu;
        out.push(x);
    }
    out
}

/// Single-owner MPC instance with warm-start memory.
#[derive(Debug, Clone)]
pub struct SrbMpc {
    pub config: MpcConfig,
    solver: QpSolver,
    previous: InputWrench,
}

impl SrbMpc {
    pub fn new(config: MpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { solver: QpSolver::new(config.qp), config, previous: InputWrench::default() })
    }

    pub fn solve(
        &mut self,
        x0: &SrbState,
        command: &Command,
        schedule: &ContactSchedule,
        params: &RobotParams,
    ) -> Result<MpcOutput> {
        let out = solve_mpc(x0, command, schedule, &self.config, params, &mut self.solver, &self.previous)?;
        self.previous = out.wrench;
        Ok(out)
    }
}

/// Joint torques for one site: `τ = J_pᵀ T F + J_oᵀ L M`, i.e. the transpose
/// of the stacked Jacobian `[T J_p; L J_o]` applied to the site wrench.
pub fn wrench_to_torques(
    j_p: &DMatrix<f64>,
    j_o: &DMatrix<f64>,
    t_sel: &nalgebra::Matrix3<f64>,
    l_sel: &nalgebra::Matrix3<f64>,
    u_site: &[f64; 6],
) -> Result<DVector<f64>> {
    if j_p.nrows() != 3 || j_o.nrows() != 3 || j_p.ncols() != j_o.ncols() {
        return Err(Error::DimensionMismatch("Jacobians must be 3×n with equal n"));
    }
    let f = t_sel * Vector3::new(u_site[0], u_site[1], u_site[2]);
    let m = l_sel * Vector3::new(u_site[3], u_site[4], u_site[5]);
    let f = DVector::from_column_slice(f.as_slice());
    let m = DVector::from_column_slice(m.as_slice());
    Ok(j_p.transpose() * f + j_o.transpose() * m)
}
