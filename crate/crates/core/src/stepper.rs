//! Outer simulation loop: per time step, Newton iterations rebuild the fine
//! system, re-coarsen by strain increment, solve coarse + post-coarsen,
//! filter the step against contact planes, backtrack on energy, and terminate
//! on the displacement criterion.

use crate::assemble::{build_coarse_system, reduce_triplets, AffineBasis};
use crate::coarsen::{active_ratio, build_map, classify_dof, tag_edges, EdgeTags};
use crate::energy::{
    element_strains, strain_increment_norms, BarrierParams, GreenStrain, IpContext, MaterialParams,
};
use crate::error::{Error, Result};
use crate::math::{inf_norm_vec3, Vec3};
use crate::mesh::{order_and_group, Mesh, NodeOrdering};
use crate::solve::{
    block_jacobi_preconditioner, pcg, post_coarsen, prolongate, BlockMatrix, PcgConfig,
};

/// How edge tags are produced each Newton iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarsenMode {
    /// Green-strain-increment criterion.
    Adaptive,
    /// Every edge protected: identity map, the reference solver.
    FullSpace,
    /// Every edge collapsible regardless of strain.
    AllCollapse,
}

#[derive(Clone, Copy, Debug)]
pub struct StepConfig {
    pub dt: f64,
    /// Newton tolerance factor; the threshold is `factor * bbox diagonal`
    /// applied to `|d|_inf / dt`.
    pub newton_tol_factor: f64,
    pub max_newton_iters: usize,
    /// Strain-increment threshold for edge protection.
    pub coarsen_threshold: f64,
    pub gravity: Vec3,
    /// Fraction of the distance to contact the filtered step may consume.
    pub ccd_slack: f64,
    /// Aggregates larger than this get 12 affine DoF.
    pub affine_threshold: usize,
    pub group_size: usize,
    pub mode: CoarsenMode,
    pub pcg: PcgConfig,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            dt: 0.01,
            newton_tol_factor: 1e-3,
            max_newton_iters: 200,
            coarsen_threshold: 5e-5,
            gravity: Vec3::zeros(),
            ccd_slack: 0.9,
            affine_threshold: 32,
            group_size: 32,
            mode: CoarsenMode::Adaptive,
            pcg: PcgConfig::default(),
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.newton_tol_factor <= 0.0 {
            return Err(Error::Config("newton_tol_factor must be positive".into()));
        }
        if !(self.ccd_slack > 0.0 && self.ccd_slack < 1.0) {
            return Err(Error::Config("ccd_slack must lie in (0, 1)".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::Config("max_newton_iters must be >= 1".into()));
        }
        self.pcg.validate()
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub x: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub t: f64,
    /// Green strains at the previous Newton iterate (the time-step start
    /// state before the first iteration).
    pub prev_strains: Vec<GreenStrain>,
    pub pinned: Vec<bool>,
}

/// One stats row per Newton iteration, mirroring the CSV columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub step: usize,
    pub iter: usize,
    pub n3: usize,
    pub n12: usize,
    pub coarse_dof: usize,
    pub active_ratio: f64,
    pub pcg_iters: usize,
    pub post_iters: usize,
    /// Incremental potential at the iterate the iteration started from.
    pub energy: f64,
    pub d_inf: f64,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub newton_iters: usize,
    pub records: Vec<IterationRecord>,
    /// Per-iteration linear-solve details (coarse residual history etc.).
    pub solves: Vec<crate::solve::SolveStats>,
}

/// Predicted positions `xhat = x + dt v + dt^2 g`; pinned vertices keep
/// `xhat = x`.
pub fn predict(state: &SimState, config: &StepConfig, _mesh: &Mesh) -> Vec<Vec3> {
    state
        .x
        .iter()
        .zip(&state.v)
        .zip(&state.pinned)
        .map(|((x, v), &pin)| {
            if pin {
                *x
            } else {
                x + config.dt * v + config.dt * config.dt * config.gravity
            }
        })
        .collect()
}

/// Largest step fraction alpha <= 1 keeping every vertex strictly on the
/// feasible side of every plane, with the conservative slack applied to the
/// current clearance.
pub fn max_feasible_step(x: &[Vec3], d: &[Vec3], barrier: &BarrierParams, slack: f64) -> f64 {
    let mut alpha = 1.0_f64;
    for (xv, dv) in x.iter().zip(d) {
        for plane in &barrier.planes {
            let towards = plane.normal_vec().dot(dv);
            if towards < 0.0 {
                let dist = plane.distance(xv);
                alpha = alpha.min(slack * dist / -towards);
            }
        }
    }
    alpha
}

/// Backtracking line search: halve alpha until the incremental potential
/// strictly decreases. The initial alpha comes from [`max_feasible_step`], so
/// every trial state is strictly feasible.
pub fn line_search(
    ctx: &IpContext,
    x_prev: &[Vec3],
    d: &[Vec3],
    alpha0: f64,
    e_prev: f64,
    xhat: &[Vec3],
) -> Result<(Vec<Vec3>, f64)> {
    let mut alpha = alpha0;
    loop {
        let trial: Vec<Vec3> = x_prev.iter().zip(d).map(|(x, dv)| x + alpha * dv).collect();
        let breakdown = ctx.energy_breakdown(&trial, xhat)?;
        let e = breakdown.total();
        if e < e_prev {
            return Ok((trial, alpha));
        }
        alpha *= 0.5;
        if alpha < 1e-12 {
            return Err(Error::LineSearchFailure {
                e_prev,
                e_trial: e,
                inertia: breakdown.inertia,
                elastic: breakdown.elastic,
                barrier: breakdown.barrier,
            });
        }
    }
}

/// Diagonal length of the axis-aligned bounding box.
pub fn bbox_diagonal(positions: &[Vec3]) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let mut lo = positions[0];
    let mut hi = positions[0];
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

pub struct Simulation {
    pub mesh: Mesh,
    pub material: MaterialParams,
    pub barrier: BarrierParams,
    pub config: StepConfig,
    pub state: SimState,
    pub ordering: NodeOrdering,
    pub affine: AffineBasis,
    /// Newton tolerance in m/s: `newton_tol_factor * scene bbox diagonal`.
    pub epsilon_d: f64,
    records: Vec<IterationRecord>,
    step_index: usize,
}

impl Simulation {
    pub fn new(
        mesh: Mesh,
        material: MaterialParams,
        barrier: BarrierParams,
        config: StepConfig,
        initial_positions: Option<Vec<Vec3>>,
        initial_velocity: Vec<Vec3>,
        pinned: Vec<bool>,
    ) -> Result<Self> {
        config.validate()?;
        material.validate()?;
        barrier.validate()?;
        let x = initial_positions.unwrap_or_else(|| mesh.rest_positions.clone());
        if x.len() != mesh.vertex_count()
            || initial_velocity.len() != mesh.vertex_count()
            || pinned.len() != mesh.vertex_count()
        {
            return Err(Error::Dimension(
                "state arrays must match the vertex count".into(),
            ));
        }
        let diag = bbox_diagonal(&x);
        let epsilon_d = config.newton_tol_factor * if diag > 0.0 { diag } else { 1.0 };
        let ordering = order_and_group(&mesh, config.group_size)?;
        let affine = AffineBasis::new(&mesh.rest_positions);
        let prev_strains = element_strains(&mesh, &x);
        let state = SimState {
            x,
            v: initial_velocity,
            t: 0.0,
            prev_strains,
            pinned,
        };
        let sim = Simulation {
            mesh,
            material,
            barrier,
            config,
            state,
            ordering,
            affine,
            epsilon_d,
            records: Vec::new(),
            step_index: 0,
        };
        // The initial state must satisfy the feasibility invariant.
        sim.context()
            .incremental_potential(&sim.state.x, &sim.state.x)?;
        Ok(sim)
    }

    pub fn context(&self) -> IpContext<'_> {
        IpContext {
            mesh: &self.mesh,
            material: &self.material,
            barrier: &self.barrier,
            dt: self.config.dt,
            pinned: &self.state.pinned,
        }
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    /// Edge tags for one Newton iteration under the configured mode. Edges
    /// incident to pinned vertices are always protected so constraints never
    /// merge into aggregates.
    fn iteration_tags(&self, iter: usize, curr_strains: &[GreenStrain]) -> EdgeTags {
        let ne = self.mesh.edges.len();
        let mut tags = match self.config.mode {
            CoarsenMode::FullSpace => EdgeTags::all_protected(ne),
            CoarsenMode::AllCollapse => EdgeTags::all_collapsible(ne),
            CoarsenMode::Adaptive => {
                if self.step_index == 0 && iter == 1 {
                    // No increment history exists before the very first solve.
                    EdgeTags::all_protected(ne)
                } else {
                    let increments = strain_increment_norms(&self.state.prev_strains, curr_strains);
                    tag_edges(&increments, self.config.coarsen_threshold, &self.mesh)
                }
            }
        };
        if self.config.mode != CoarsenMode::FullSpace {
            for (v, &pin) in self.state.pinned.iter().enumerate() {
                if pin {
                    for &e in &self.mesh.vertex_to_edges[v] {
                        tags.tags[e] = 0;
                    }
                }
            }
        }
        tags
    }

    fn solve_coarse(
        &self,
        sys: &crate::assemble::CoarseSystem,
    ) -> Result<crate::solve::PcgOutcome> {
        let nodes = sys.expanded_node_count();
        let matrix = BlockMatrix::from_reduced(sys.hessian.clone(), nodes);
        let pre = block_jacobi_preconditioner(matrix.triplets(), nodes)?;
        let rhs: Vec<f64> = sys.gradient.iter().map(|g| -g).collect();
        pcg(
            &matrix,
            &rhs,
            &pre,
            self.config.pcg.rel_tol,
            self.config.pcg.max_iters,
            None,
        )
    }

    /// Advance one time step with the full Newton loop.
    pub fn step(&mut self) -> Result<StepReport> {
        let dt = self.config.dt;
        let xt = self.state.x.clone();
        let xhat = predict(&self.state, &self.config, &self.mesh);
        self.state.prev_strains = element_strains(&self.mesh, &xt);

        let mut x = xt.clone();
        let mut step_records = Vec::new();
        let mut step_solves = Vec::new();
        let mut converged = false;
        let step_no = self.step_index + 1;

        for iter in 1..=self.config.max_newton_iters {
            let ctx = IpContext {
                mesh: &self.mesh,
                material: &self.material,
                barrier: &self.barrier,
                dt,
                pinned: &self.state.pinned,
            };
            let e_prev = ctx.incremental_potential(&x, &xhat)?;
            let gradient = ctx.ip_gradient(&x, &xhat)?;
            let hessian = reduce_triplets(&ctx.ip_hessian(&x, &xhat)?);

            let curr_strains = element_strains(&self.mesh, &x);
            let tags = self.iteration_tags(iter, &curr_strains);
            let raw_map = build_map(&tags, &self.ordering, &self.mesh);
            let (mut map, mut class) = classify_dof(&raw_map, self.config.affine_threshold);
            let mut sys = build_coarse_system(&hessian, &gradient, &map, &class, &self.affine);

            let coarse_out = match self.solve_coarse(&sys) {
                Ok(out) => out,
                Err(Error::IllConditionedSystem { .. }) | Err(Error::IndefiniteMatrix { .. })
                    if class.n12 > 0 =>
                {
                    // Degenerate affine aggregate (e.g. coplanar rest
                    // children): retry this iteration with all-3-DoF nodes.
                    let (map3, class3) = classify_dof(&raw_map, usize::MAX);
                    map = map3;
                    class = class3;
                    sys = build_coarse_system(&hessian, &gradient, &map, &class, &self.affine);
                    self.solve_coarse(&sys)?
                }
                Err(e) => return Err(e),
            };

            let d0 = prolongate(&coarse_out.x, &map, &class, &self.affine);
            let fine_matrix = BlockMatrix::from_reduced(hessian, self.mesh.vertex_count());
            let fine_pre =
                block_jacobi_preconditioner(fine_matrix.triplets(), self.mesh.vertex_count())?;
            let (mut d, post_out) =
                post_coarsen(&d0, &fine_matrix, &gradient, &fine_pre, &self.config.pcg)?;
            for (v, &pin) in self.state.pinned.iter().enumerate() {
                if pin {
                    d[v] = Vec3::zeros();
                }
            }

            let d_inf = inf_norm_vec3(&d);
            step_solves.push(crate::solve::SolveStats {
                coarse_iters: coarse_out.iters,
                post_iters: post_out.iters,
                coarse_dof: class.coarse_dof(),
                residual_history: coarse_out.residual_history.clone(),
            });
            step_records.push(IterationRecord {
                step: step_no,
                iter,
                n3: class.n3,
                n12: class.n12,
                coarse_dof: class.coarse_dof(),
                active_ratio: active_ratio(&class, self.mesh.vertex_count()),
                pcg_iters: coarse_out.iters,
                post_iters: post_out.iters,
                energy: e_prev,
                d_inf,
            });

            if d_inf / dt <= self.epsilon_d {
                converged = true;
                break;
            }

            // Every direction that reaches the line search must descend.
            debug_assert!(
                crate::math::pairwise_dot(
                    &crate::math::flatten_vec3(&d),
                    &crate::math::flatten_vec3(&gradient),
                ) < 0.0,
                "non-descent direction at step {step_no} iteration {iter}"
            );

            let alpha0 = max_feasible_step(&x, &d, &self.barrier, self.config.ccd_slack);
            let (x_next, _alpha) = line_search(&ctx, &x, &d, alpha0, e_prev, &xhat)?;
            x = x_next;
            self.state.prev_strains = curr_strains;
        }

        if !converged {
            let last = step_records.last();
            return Err(Error::NonConvergence {
                max_iters: self.config.max_newton_iters,
                residual: last.map(|r| r.d_inf / dt).unwrap_or(f64::NAN),
                tol: self.epsilon_d,
            });
        }

        self.state.v = x.iter().zip(&xt).map(|(xn, xo)| (xn - xo) / dt).collect();
        self.state.x = x;
        self.state.t += dt;
        self.step_index += 1;
        let report = StepReport {
            newton_iters: step_records.len(),
            records: step_records.clone(),
            solves: step_solves,
        };
        self.records.extend(step_records);
        Ok(report)
    }
}
