//! Incremental potential: inertia + scaled StVK elasticity + contact barrier,
//! with analytic gradient and an SPD-projected block Hessian in triplet form.
//!
//! External forces enter only through the predicted positions `xhat`; the
//! barrier acts per vertex against analytic half-spaces. Per-element Green
//! strains feed the coarsening criterion.

use nalgebra::{DMatrix, Matrix2, Matrix3x2};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::math::{psd_project, BlockTriplet, Mat3, Vec3};
use crate::mesh::{Element, ElementRest, Mesh};

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Young's modulus (Pa).
    pub youngs_modulus: f64,
    /// Poisson ratio, in (0, 0.5).
    pub poisson_ratio: f64,
    /// Density: kg/m^3 for tets, kg/m^2 for shells, kg/m for edge nets.
    pub density: f64,
}

impl MaterialParams {
    pub fn mu(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn lambda(&self) -> f64 {
        self.youngs_modulus * self.poisson_ratio
            / ((1.0 + self.poisson_ratio) * (1.0 - 2.0 * self.poisson_ratio))
    }

    pub fn validate(&self) -> Result<()> {
        if self.youngs_modulus <= 0.0 || self.density <= 0.0 {
            return Err(Error::Config(
                "youngs_modulus and density must be positive".into(),
            ));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::Config("poisson_ratio must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Half-space `{ x : normal . x >= offset }`; distance is `normal . x - offset`.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl HalfSpace {
    pub fn normal_vec(&self) -> Vec3 {
        Vec3::new(self.normal[0], self.normal[1], self.normal[2])
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        self.normal_vec().dot(x) - self.offset
    }
}

#[derive(Clone, Debug)]
pub struct BarrierParams {
    /// Activation distance (m).
    pub dhat: f64,
    /// Barrier stiffness.
    pub kappa: f64,
    pub planes: Vec<HalfSpace>,
}

impl BarrierParams {
    /// No contact at all; useful for free-flight tests.
    pub fn none() -> Self {
        BarrierParams {
            dhat: 1e-3,
            kappa: 1.0,
            planes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dhat <= 0.0 || self.kappa <= 0.0 {
            return Err(Error::Config("dhat and kappa must be positive".into()));
        }
        for (i, p) in self.planes.iter().enumerate() {
            if (p.normal_vec().norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "plane {i} normal is not unit length"
                )));
            }
        }
        Ok(())
    }
}

/// Barrier value b(d) = -kappa (d - dhat)^2 ln(d / dhat) on (0, dhat), zero
/// at and beyond dhat. C2 at the support boundary.
pub fn barrier_value(d: f64, dhat: f64, kappa: f64) -> f64 {
    if d >= dhat {
        return 0.0;
    }
    let t = d - dhat;
    -kappa * t * t * (d / dhat).ln()
}

pub fn barrier_first_derivative(d: f64, dhat: f64, kappa: f64) -> f64 {
    if d >= dhat {
        return 0.0;
    }
    let t = d - dhat;
    -kappa * (2.0 * t * (d / dhat).ln() + t * t / d)
}

pub fn barrier_second_derivative(d: f64, dhat: f64, kappa: f64) -> f64 {
    if d >= dhat {
        return 0.0;
    }
    let t = d - dhat;
    -kappa * (2.0 * (d / dhat).ln() + 4.0 * t / d - (t / d) * (t / d))
}

/// Element deformation gradient; shape depends on element kind.
#[derive(Clone, Debug, PartialEq)]
pub enum DeformationGradient {
    Edge(f64),
    Triangle(Matrix3x2<f64>),
    Tetrahedron(Mat3),
}

/// Green strain G = (F^T F - I) / 2; scalar for edges.
#[derive(Clone, Debug, PartialEq)]
pub enum GreenStrain {
    Scalar(f64),
    Mat2(Matrix2<f64>),
    Mat3(Mat3),
}

impl GreenStrain {
    pub fn frobenius_norm(&self) -> f64 {
        match self {
            GreenStrain::Scalar(g) => g.abs(),
            GreenStrain::Mat2(g) => g.norm(),
            GreenStrain::Mat3(g) => g.norm(),
        }
    }

    /// Frobenius norm of `self - prev`, the per-element strain increment that
    /// drives edge tagging. Panics if element kinds differ.
    pub fn increment_norm(&self, prev: &GreenStrain) -> f64 {
        match (self, prev) {
            (GreenStrain::Scalar(a), GreenStrain::Scalar(b)) => (a - b).abs(),
            (GreenStrain::Mat2(a), GreenStrain::Mat2(b)) => (a - b).norm(),
            (GreenStrain::Mat3(a), GreenStrain::Mat3(b)) => (a - b).norm(),
            _ => panic!("mismatched strain kinds"),
        }
    }
}

/// Deformation gradient of element `ei` at positions `x`.
pub fn deformation_gradient(mesh: &Mesh, ei: usize, x: &[Vec3]) -> DeformationGradient {
    let elem = &mesh.elements[ei];
    match (&mesh.rest[ei], elem) {
        (ElementRest::Edge { length }, Element::Edge([a, b])) => {
            DeformationGradient::Edge((x[*b] - x[*a]).norm() / length)
        }
        (ElementRest::Triangle { inv_dm, .. }, Element::Triangle([a, b, c])) => {
            let ds = Matrix3x2::from_columns(&[x[*b] - x[*a], x[*c] - x[*a]]);
            DeformationGradient::Triangle(ds * inv_dm)
        }
        (ElementRest::Tetrahedron { inv_dm, .. }, Element::Tetrahedron([a, b, c, d])) => {
            let ds = Mat3::from_columns(&[x[*b] - x[*a], x[*c] - x[*a], x[*d] - x[*a]]);
            DeformationGradient::Tetrahedron(ds * inv_dm)
        }
        _ => unreachable!("rest data kind matches element kind"),
    }
}

pub fn green_strain(f: &DeformationGradient) -> GreenStrain {
    match f {
        DeformationGradient::Edge(s) => GreenStrain::Scalar(0.5 * (s * s - 1.0)),
        DeformationGradient::Triangle(f) => {
            GreenStrain::Mat2((f.transpose() * f - Matrix2::identity()) * 0.5)
        }
        DeformationGradient::Tetrahedron(f) => {
            GreenStrain::Mat3((f.transpose() * f - Mat3::identity()) * 0.5)
        }
    }
}

/// Green strain of every element at positions `x` (parallel, element order).
pub fn element_strains(mesh: &Mesh, x: &[Vec3]) -> Vec<GreenStrain> {
    (0..mesh.elements.len())
        .into_par_iter()
        .map(|ei| green_strain(&deformation_gradient(mesh, ei, x)))
        .collect()
}

/// Per-element ||G_curr - G_prev||_F.
pub fn strain_increment_norms(prev: &[GreenStrain], curr: &[GreenStrain]) -> Vec<f64> {
    debug_assert_eq!(prev.len(), curr.len());
    curr.iter()
        .zip(prev)
        .map(|(c, p)| c.increment_norm(p))
        .collect()
}

/// Everything needed to evaluate the incremental potential at a state.
pub struct IpContext<'a> {
    pub mesh: &'a Mesh,
    pub material: &'a MaterialParams,
    pub barrier: &'a BarrierParams,
    pub dt: f64,
    /// Per-vertex constraint flags; pinned rows are zeroed in the gradient and
    /// decoupled (identity diagonal) in the Hessian.
    pub pinned: &'a [bool],
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyBreakdown {
    pub inertia: f64,
    pub elastic: f64,
    pub barrier: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.inertia + self.elastic + self.barrier
    }
}

impl IpContext<'_> {
    fn feasibility_check(&self, x: &[Vec3]) -> Result<()> {
        for (v, p) in x.iter().enumerate() {
            for (pi, plane) in self.barrier.planes.iter().enumerate() {
                let d = plane.distance(p);
                if d <= 0.0 {
                    return Err(Error::InfeasibleState {
                        vertex: v,
                        plane: pi,
                        distance: d,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn energy_breakdown(&self, x: &[Vec3], xhat: &[Vec3]) -> Result<EnergyBreakdown> {
        self.feasibility_check(x)?;
        let inertia_terms: Vec<f64> = x
            .iter()
            .zip(xhat)
            .zip(&self.mesh.vertex_mass)
            .map(|((xi, hi), m)| 0.5 * m * (xi - hi).norm_squared())
            .collect();
        let elastic_terms: Vec<f64> = (0..self.mesh.elements.len())
            .into_par_iter()
            .map(|ei| element_energy(self.mesh, self.material, ei, x))
            .collect();
        let barrier_terms: Vec<f64> = x
            .iter()
            .map(|p| {
                self.barrier
                    .planes
                    .iter()
                    .map(|plane| {
                        barrier_value(plane.distance(p), self.barrier.dhat, self.barrier.kappa)
                    })
                    .sum::<f64>()
            })
            .collect();
        Ok(EnergyBreakdown {
            inertia: crate::math::pairwise_sum(&inertia_terms),
            elastic: self.dt * self.dt * crate::math::pairwise_sum(&elastic_terms),
            barrier: crate::math::pairwise_sum(&barrier_terms),
        })
    }

    /// The incremental potential E(x).
    pub fn incremental_potential(&self, x: &[Vec3], xhat: &[Vec3]) -> Result<f64> {
        Ok(self.energy_breakdown(x, xhat)?.total())
    }

    /// Analytic gradient of [`Self::incremental_potential`]; pinned rows zeroed.
    pub fn ip_gradient(&self, x: &[Vec3], xhat: &[Vec3]) -> Result<Vec<Vec3>> {
        self.feasibility_check(x)?;
        let mut grad: Vec<Vec3> = x
            .iter()
            .zip(xhat)
            .zip(&self.mesh.vertex_mass)
            .map(|((xi, hi), m)| (xi - hi) * *m)
            .collect();

        let dt2 = self.dt * self.dt;
        let per_element: Vec<Vec<(usize, Vec3)>> = (0..self.mesh.elements.len())
            .into_par_iter()
            .map(|ei| element_gradient(self.mesh, self.material, ei, x))
            .collect();
        for parts in &per_element {
            for (v, g) in parts {
                grad[*v] += dt2 * g;
            }
        }

        for (v, p) in x.iter().enumerate() {
            for plane in &self.barrier.planes {
                let d = plane.distance(p);
                if d < self.barrier.dhat {
                    grad[v] += barrier_first_derivative(d, self.barrier.dhat, self.barrier.kappa)
                        * plane.normal_vec();
                }
            }
        }

        for (v, g) in grad.iter_mut().enumerate() {
            if self.pinned.get(v).copied().unwrap_or(false) {
                *g = Vec3::zeros();
            }
        }
        Ok(grad)
    }

    /// SPD-proxy Hessian as unreduced block triplets (full storage, both
    /// triangles). Triplets touching pinned vertices are dropped except for an
    /// identity diagonal block per pinned vertex, so the matrix stays SPD and
    /// pinned DoF decouple. Emission order is element order, then mass, then
    /// barrier, then pinned diagonals; downstream reduction is deterministic.
    pub fn ip_hessian(&self, x: &[Vec3], xhat: &[Vec3]) -> Result<Vec<BlockTriplet>> {
        let _ = xhat;
        self.feasibility_check(x)?;
        let dt2 = self.dt * self.dt;
        let pinned = |v: usize| self.pinned.get(v).copied().unwrap_or(false);

        let per_element: Vec<Vec<BlockTriplet>> = (0..self.mesh.elements.len())
            .into_par_iter()
            .map(|ei| {
                let verts = self.mesh.elements[ei].vertices();
                let dense = element_hessian(self.mesh, self.material, ei, x);
                let projected = psd_project(&dense);
                let k = verts.len();
                let mut out = Vec::with_capacity(k * k);
                for a in 0..k {
                    for b in 0..k {
                        if pinned(verts[a]) || pinned(verts[b]) {
                            continue;
                        }
                        let block = Mat3::from_fn(|r, c| dt2 * projected[(3 * a + r, 3 * b + c)]);
                        out.push(BlockTriplet::new(verts[a], verts[b], block));
                    }
                }
                out
            })
            .collect();

        let mut triplets: Vec<BlockTriplet> = per_element.into_iter().flatten().collect();

        for (v, m) in self.mesh.vertex_mass.iter().enumerate() {
            if !pinned(v) {
                triplets.push(BlockTriplet::new(v, v, Mat3::identity() * *m));
            }
        }

        for (v, p) in x.iter().enumerate() {
            if pinned(v) {
                continue;
            }
            for plane in &self.barrier.planes {
                let d = plane.distance(p);
                if d < self.barrier.dhat {
                    let h = barrier_second_derivative(d, self.barrier.dhat, self.barrier.kappa)
                        .max(0.0);
                    let n = plane.normal_vec();
                    triplets.push(BlockTriplet::new(v, v, h * n * n.transpose()));
                }
            }
        }

        for v in 0..x.len() {
            if pinned(v) {
                triplets.push(BlockTriplet::new(v, v, Mat3::identity()));
            }
        }
        Ok(triplets)
    }
}

/// StVK energy density contracted with the element measure.
fn element_energy(mesh: &Mesh, material: &MaterialParams, ei: usize, x: &[Vec3]) -> f64 {
    let (mu, lambda) = (material.mu(), material.lambda());
    let measure = mesh.rest[ei].measure();
    match green_strain(&deformation_gradient(mesh, ei, x)) {
        GreenStrain::Scalar(g) => measure * (mu + 0.5 * lambda) * g * g,
        GreenStrain::Mat2(g) => {
            let tr = g.trace();
            measure * (mu * g.norm_squared() + 0.5 * lambda * tr * tr)
        }
        GreenStrain::Mat3(g) => {
            let tr = g.trace();
            measure * (mu * g.norm_squared() + 0.5 * lambda * tr * tr)
        }
    }
}

/// Per-vertex contributions of the elastic gradient of one element.
fn element_gradient(
    mesh: &Mesh,
    material: &MaterialParams,
    ei: usize,
    x: &[Vec3],
) -> Vec<(usize, Vec3)> {
    let (mu, lambda) = (material.mu(), material.lambda());
    let elem = &mesh.elements[ei];
    match (&mesh.rest[ei], elem) {
        (ElementRest::Edge { length }, Element::Edge([a, b])) => {
            let dx = x[*b] - x[*a];
            let len = dx.norm();
            let u = dx / len;
            let f = len / length;
            let g = 0.5 * (f * f - 1.0);
            let scale = length * (2.0 * mu + lambda) * g * f / length;
            vec![(*a, -scale * u), (*b, scale * u)]
        }
        (ElementRest::Triangle { inv_dm, area }, Element::Triangle([a, b, c])) => {
            let ds = Matrix3x2::from_columns(&[x[*b] - x[*a], x[*c] - x[*a]]);
            let f = ds * inv_dm;
            let g = (f.transpose() * f - Matrix2::identity()) * 0.5;
            let s = 2.0 * mu * g + lambda * g.trace() * Matrix2::identity();
            let p = f * s;
            let grad_ds = *area * p * inv_dm.transpose();
            let g1 = grad_ds.column(0).into_owned();
            let g2 = grad_ds.column(1).into_owned();
            vec![(*a, -(g1 + g2)), (*b, g1), (*c, g2)]
        }
        (ElementRest::Tetrahedron { inv_dm, volume }, Element::Tetrahedron([a, b, c, d])) => {
            let ds = Mat3::from_columns(&[x[*b] - x[*a], x[*c] - x[*a], x[*d] - x[*a]]);
            let f = ds * inv_dm;
            let g = (f.transpose() * f - Mat3::identity()) * 0.5;
            let s = 2.0 * mu * g + lambda * g.trace() * Mat3::identity();
            let p = f * s;
            let grad_ds = *volume * p * inv_dm.transpose();
            let g1 = grad_ds.column(0).into_owned();
            let g2 = grad_ds.column(1).into_owned();
            let g3 = grad_ds.column(2).into_owned();
            vec![(*a, -(g1 + g2 + g3)), (*b, g1), (*c, g2), (*d, g3)]
        }
        _ => unreachable!(),
    }
}

/// Dense element Hessian (3k x 3k, vertex-major DoF order), exact analytic
/// derivative of the elastic gradient. Callers project it to PSD.
fn element_hessian(mesh: &Mesh, material: &MaterialParams, ei: usize, x: &[Vec3]) -> DMatrix<f64> {
    let (mu, lambda) = (material.mu(), material.lambda());
    let elem = &mesh.elements[ei];
    match (&mesh.rest[ei], elem) {
        (ElementRest::Edge { length }, Element::Edge([a, b])) => {
            let dx = x[*b] - x[*a];
            let len = dx.norm();
            let u = dx / len;
            let f = len / length;
            let g = 0.5 * (f * f - 1.0);
            let stiff = 2.0 * mu + lambda;
            // k(len) = measure * stiff * G * F / length, measure = length.
            let k = stiff * g * f;
            let dk = stiff * (f * f + g) / length;
            let uut = u * u.transpose();
            let h11 = dk * uut + (k / len) * (Mat3::identity() - uut);
            let mut h = DMatrix::zeros(6, 6);
            for r in 0..3 {
                for c in 0..3 {
                    h[(r, c)] = h11[(r, c)];
                    h[(r + 3, c + 3)] = h11[(r, c)];
                    h[(r, c + 3)] = -h11[(r, c)];
                    h[(r + 3, c)] = -h11[(r, c)];
                }
            }
            h
        }
        (ElementRest::Triangle { inv_dm, area }, Element::Triangle(_)) => {
            let verts = elem.vertices();
            let ds =
                Matrix3x2::from_columns(&[x[verts[1]] - x[verts[0]], x[verts[2]] - x[verts[0]]]);
            let f = ds * inv_dm;
            let g = (f.transpose() * f - Matrix2::identity()) * 0.5;
            let s = 2.0 * mu * g + lambda * g.trace() * Matrix2::identity();
            let mut h = DMatrix::zeros(9, 9);
            for a in 0..3 {
                for i in 0..3 {
                    let mut d_ds = Matrix3x2::zeros();
                    if a == 0 {
                        d_ds[(i, 0)] = -1.0;
                        d_ds[(i, 1)] = -1.0;
                    } else {
                        d_ds[(i, a - 1)] = 1.0;
                    }
                    let df = d_ds * inv_dm;
                    let dg = (df.transpose() * f + f.transpose() * df) * 0.5;
                    let dsig = 2.0 * mu * dg + lambda * dg.trace() * Matrix2::identity();
                    let dp = df * s + f * dsig;
                    let dgrad = *area * dp * inv_dm.transpose();
                    let c1 = dgrad.column(0).into_owned();
                    let c2 = dgrad.column(1).into_owned();
                    let cols = [-(c1 + c2), c1, c2];
                    for (bv, col) in cols.iter().enumerate() {
                        for r in 0..3 {
                            h[(3 * bv + r, 3 * a + i)] = col[r];
                        }
                    }
                }
            }
            h
        }
        (ElementRest::Tetrahedron { inv_dm, volume }, Element::Tetrahedron(_)) => {
            let verts = elem.vertices();
            let ds = Mat3::from_columns(&[
                x[verts[1]] - x[verts[0]],
                x[verts[2]] - x[verts[0]],
                x[verts[3]] - x[verts[0]],
            ]);
            let f = ds * inv_dm;
            let g = (f.transpose() * f - Mat3::identity()) * 0.5;
            let s = 2.0 * mu * g + lambda * g.trace() * Mat3::identity();
            let mut h = DMatrix::zeros(12, 12);
            for a in 0..4 {
                for i in 0..3 {
                    let mut d_ds = Mat3::zeros();
                    if a == 0 {
                        d_ds[(i, 0)] = -1.0;
                        d_ds[(i, 1)] = -1.0;
                        d_ds[(i, 2)] = -1.0;
                    } else {
                        d_ds[(i, a - 1)] = 1.0;
                    }
                    let df = d_ds * inv_dm;
                    let dg = (df.transpose() * f + f.transpose() * df) * 0.5;
                    let dsig = 2.0 * mu * dg + lambda * dg.trace() * Mat3::identity();
                    let dp = df * s + f * dsig;
                    let dgrad = *volume * dp * inv_dm.transpose();
                    let c1 = dgrad.column(0).into_owned();
                    let c2 = dgrad.column(1).into_owned();
                    let c3 = dgrad.column(2).into_owned();
                    let cols = [-(c1 + c2 + c3), c1, c2, c3];
                    for (bv, col) in cols.iter().enumerate() {
                        for r in 0..3 {
                            h[(3 * bv + r, 3 * a + i)] = col[r];
                        }
                    }
                }
            }
            h
        }
        _ => unreachable!(),
    }
}
