//! Scene configuration (versioned TOML) and the simulation run driver.
//!
//! A scene holds one or more mesh objects (all of the same element kind and
//! material), optional contact half-spaces, coarsening knobs, and solver
//! tolerances. `dhat` may be given absolutely or relative to the initial
//! scene bounding-box diagonal.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::energy::{BarrierParams, HalfSpace, MaterialParams};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{load_mesh, Element, Mesh};
use crate::output;
use crate::solve::PcgConfig;
use crate::stepper::{bbox_diagonal, CoarsenMode, Simulation, StepConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeConfig {
    #[default]
    Adaptive,
    FullSpace,
    AllCollapse,
}

impl From<ModeConfig> for CoarsenMode {
    fn from(m: ModeConfig) -> CoarsenMode {
        match m {
            ModeConfig::Adaptive => CoarsenMode::Adaptive,
            ModeConfig::FullSpace => CoarsenMode::FullSpace,
            ModeConfig::AllCollapse => CoarsenMode::AllCollapse,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub dt: f64,
    pub frames: usize,
    #[serde(default)]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub mode: ModeConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub mesh: PathBuf,
    pub material: MaterialParams,
    #[serde(default)]
    pub translate: [f64; 3],
    #[serde(default)]
    pub initial_velocity: [f64; 3],
    #[serde(default)]
    pub pinned: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    /// Absolute activation distance; exclusive with `dhat_rel`.
    pub dhat: Option<f64>,
    /// Activation distance as a fraction of the initial bbox diagonal.
    pub dhat_rel: Option<f64>,
    pub kappa: f64,
    #[serde(default)]
    pub planes: Vec<HalfSpace>,
}

fn default_coarsen_threshold() -> f64 {
    5e-5
}
fn default_affine_threshold() -> usize {
    32
}
fn default_group_size() -> usize {
    32
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseningConfig {
    #[serde(default = "default_coarsen_threshold")]
    pub threshold: f64,
    #[serde(default = "default_affine_threshold")]
    pub affine_threshold: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
}

impl Default for CoarseningConfig {
    fn default() -> Self {
        CoarseningConfig {
            threshold: default_coarsen_threshold(),
            affine_threshold: default_affine_threshold(),
            group_size: default_group_size(),
        }
    }
}

fn default_rel_tol() -> f64 {
    1e-3
}
fn default_max_iters() -> usize {
    2000
}
fn default_post_iters() -> usize {
    10
}
fn default_newton_tol_factor() -> f64 {
    1e-3
}
fn default_max_newton_iters() -> usize {
    200
}
fn default_ccd_slack() -> f64 {
    0.9
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_post_iters")]
    pub post_coarsen_max_iters: usize,
    #[serde(default = "default_newton_tol_factor")]
    pub newton_tol_factor: f64,
    #[serde(default = "default_max_newton_iters")]
    pub max_newton_iters: usize,
    #[serde(default = "default_ccd_slack")]
    pub ccd_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: default_rel_tol(),
            max_iters: default_max_iters(),
            post_coarsen_max_iters: default_post_iters(),
            newton_tol_factor: default_newton_tol_factor(),
            max_newton_iters: default_max_newton_iters(),
            ccd_slack: default_ccd_slack(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub version: u32,
    pub scene: SceneSection,
    #[serde(default)]
    pub objects: Vec<ObjectConfig>,
    pub contact: Option<ContactConfig>,
    #[serde(default)]
    pub coarsening: CoarseningConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

pub fn parse_config(text: &str) -> Result<SceneConfig> {
    let cfg: SceneConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
    if cfg.version != CONFIG_VERSION {
        return Err(Error::Config(format!(
            "config version {} unsupported (expected {CONFIG_VERSION})",
            cfg.version
        )));
    }
    if cfg.objects.is_empty() {
        return Err(Error::Config("scene needs at least one object".into()));
    }
    if let Some(contact) = &cfg.contact {
        match (contact.dhat, contact.dhat_rel) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give dhat or dhat_rel, not both".into()))
            }
            (None, None) => {
                return Err(Error::Config(
                    "contact section needs dhat or dhat_rel".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn materials_equal(a: &MaterialParams, b: &MaterialParams) -> bool {
    a.youngs_modulus == b.youngs_modulus
        && a.poisson_ratio == b.poisson_ratio
        && a.density == b.density
}

/// Build the runnable simulation from a parsed config. Mesh paths resolve
/// relative to `base_dir` (normally the config file's directory).
pub fn build_simulation(
    cfg: &SceneConfig,
    base_dir: &Path,
    mode_override: Option<CoarsenMode>,
) -> Result<Simulation> {
    let material = cfg.objects[0].material;
    for (i, obj) in cfg.objects.iter().enumerate() {
        if !materials_equal(&obj.material, &material) {
            return Err(Error::Config(format!(
                "object {i} has a different material; scenes share one material"
            )));
        }
    }
    material.validate()?;

    let mut positions: Vec<Vec3> = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut velocities: Vec<Vec3> = Vec::new();
    let mut pinned: Vec<bool> = Vec::new();
    for obj in &cfg.objects {
        let path = if obj.mesh.is_absolute() {
            obj.mesh.clone()
        } else {
            base_dir.join(&obj.mesh)
        };
        let mesh = load_mesh(&path, &material)?;
        let offset = positions.len();
        let shift = Vec3::new(obj.translate[0], obj.translate[1], obj.translate[2]);
        positions.extend(mesh.rest_positions.iter().map(|p| p + shift));
        elements.extend(mesh.elements.iter().map(|e| match e {
            Element::Edge([a, b]) => Element::Edge([a + offset, b + offset]),
            Element::Triangle([a, b, c]) => Element::Triangle([a + offset, b + offset, c + offset]),
            Element::Tetrahedron([a, b, c, d]) => {
                Element::Tetrahedron([a + offset, b + offset, c + offset, d + offset])
            }
        }));
        let v = Vec3::new(
            obj.initial_velocity[0],
            obj.initial_velocity[1],
            obj.initial_velocity[2],
        );
        velocities.extend(std::iter::repeat_n(v, mesh.vertex_count()));
        let mut flags = vec![false; mesh.vertex_count()];
        for &p in &obj.pinned {
            if p >= mesh.vertex_count() {
                return Err(Error::Config(format!(
                    "pinned index {p} out of range for `{}`",
                    obj.mesh.display()
                )));
            }
            flags[p] = true;
        }
        pinned.extend(flags);
    }

    let mesh = Mesh::build(positions, elements, &material)?;
    let diag = bbox_diagonal(&mesh.rest_positions).max(f64::MIN_POSITIVE);
    let barrier = match &cfg.contact {
        Some(c) => {
            let dhat = match (c.dhat, c.dhat_rel) {
                (Some(d), None) => d,
                (None, Some(rel)) => rel * diag,
                _ => unreachable!("validated in parse_config"),
            };
            BarrierParams {
                dhat,
                kappa: c.kappa,
                planes: c.planes.clone(),
            }
        }
        None => BarrierParams {
            planes: Vec::new(),
            ..BarrierParams::none()
        },
    };

    let config = StepConfig {
        dt: cfg.scene.dt,
        newton_tol_factor: cfg.solver.newton_tol_factor,
        max_newton_iters: cfg.solver.max_newton_iters,
        coarsen_threshold: cfg.coarsening.threshold,
        gravity: Vec3::new(
            cfg.scene.gravity[0],
            cfg.scene.gravity[1],
            cfg.scene.gravity[2],
        ),
        ccd_slack: cfg.solver.ccd_slack,
        affine_threshold: cfg.coarsening.affine_threshold,
        group_size: cfg.coarsening.group_size,
        mode: mode_override.unwrap_or_else(|| cfg.scene.mode.into()),
        pcg: PcgConfig {
            rel_tol: cfg.solver.rel_tol,
            max_iters: cfg.solver.max_iters,
            post_coarsen_max_iters: cfg.solver.post_coarsen_max_iters,
        },
    };

    Simulation::new(mesh, material, barrier, config, None, velocities, pinned)
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub frames: usize,
    pub summary: output::StatsSummary,
    pub stats_path: PathBuf,
}

/// Simulate `frames` steps, writing `frame_NNNN.obj`, `stats.csv`, and
/// `summary.txt` into `out_dir`.
pub fn run_scene(sim: &mut Simulation, frames: usize, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let surface = sim.mesh.surface_triangles();
    let write_frame = |idx: usize, positions: &[Vec3], mesh: &Mesh| -> Result<()> {
        let path = out_dir.join(format!("frame_{idx:04}.obj"));
        let mut buf = Vec::new();
        output::write_frame_obj(&mut buf, positions, &surface, mesh).map_err(|source| {
            Error::Io {
                path: path.clone(),
                source,
            }
        })?;
        output::write_text_file(&path, &String::from_utf8_lossy(&buf))
    };

    write_frame(0, &sim.state.x, &sim.mesh)?;
    for frame in 1..=frames {
        sim.step()?;
        write_frame(frame, &sim.state.x, &sim.mesh)?;
    }

    let csv = output::stats_csv_string(sim.records());
    let stats_path = out_dir.join("stats.csv");
    output::write_text_file(&stats_path, &csv)?;
    let summary = output::summarize(sim.records());
    output::write_text_file(&out_dir.join("summary.txt"), &summary.to_string())?;
    Ok(RunSummary {
        frames,
        summary,
        stats_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[scene]
dt = 0.01
frames = 2
gravity = [0.0, -9.8, 0.0]

[[objects]]
mesh = "cube.tet"
[objects.material]
youngs_modulus = 1e5
poisson_ratio = 0.3
density = 1000.0

[contact]
dhat_rel = 3e-4
kappa = 1e4
[[contact.planes]]
normal = [0.0, 1.0, 0.0]
offset = 0.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.version, 1);
        assert_eq!(cfg.scene.frames, 2);
        assert_eq!(cfg.coarsening.threshold, 5e-5);
        assert_eq!(cfg.coarsening.affine_threshold, 32);
        assert_eq!(cfg.solver.post_coarsen_max_iters, 10);
        assert_eq!(cfg.scene.mode, ModeConfig::Adaptive);
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = MINIMAL.replace("version = 1", "version = 7");
        assert!(matches!(parse_config(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[coarsening]\nbogus_knob = 3\n");
        assert!(matches!(parse_config(&text), Err(Error::Config(_))));
    }

    #[test]
    fn dhat_exclusivity_enforced() {
        let both = MINIMAL.replace("dhat_rel = 3e-4", "dhat_rel = 3e-4\ndhat = 0.01");
        assert!(matches!(parse_config(&both), Err(Error::Config(_))));
        let neither = MINIMAL.replace("dhat_rel = 3e-4\n", "");
        assert!(matches!(parse_config(&neither), Err(Error::Config(_))));
    }

    #[test]
    fn mode_strings_parse() {
        for (s, m) in [
            ("adaptive", ModeConfig::Adaptive),
            ("full-space", ModeConfig::FullSpace),
            ("all-collapse", ModeConfig::AllCollapse),
        ] {
            let text = MINIMAL.replace(
                "gravity = [0.0, -9.8, 0.0]",
                &format!("gravity = [0.0, -9.8, 0.0]\nmode = \"{s}\""),
            );
            assert_eq!(parse_config(&text).unwrap().scene.mode, m);
        }
    }

    #[test]
    fn build_and_run_tiny_scene() {
        let dir = std::env::temp_dir().join("coarsim_scene_test");
        std::fs::create_dir_all(&dir).unwrap();
        // Small tet block hovering above the ground.
        let (pos, elems) = crate::mesh::gen::tet_grid(2, 2, 2, 0.2);
        let mut text = String::new();
        for p in crate::mesh::gen::translated(pos, Vec3::new(0.0, 0.3, 0.0)) {
            text.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
        for e in &elems {
            if let Element::Tetrahedron([a, b, c, d]) = e {
                text.push_str(&format!("t {a} {b} {c} {d}\n"));
            }
        }
        std::fs::write(dir.join("cube.tet"), text).unwrap();
        let cfg = parse_config(MINIMAL).unwrap();
        let mut sim = build_simulation(&cfg, &dir, None).unwrap();
        let out = dir.join("out");
        let summary = run_scene(&mut sim, cfg.scene.frames, &out).unwrap();
        assert_eq!(summary.frames, 2);
        assert!(out.join("frame_0000.obj").exists());
        assert!(out.join("frame_0002.obj").exists());
        assert!(out.join("stats.csv").exists());
        let text = std::fs::read_to_string(out.join("stats.csv")).unwrap();
        let records = output::parse_stats_csv(&text).unwrap();
        assert_eq!(records.len(), summary.summary.total_newton_iters);
    }

    #[test]
    fn zero_frame_scene_writes_initial_frame_only() {
        let dir = std::env::temp_dir().join("coarsim_scene_zero");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("rod.obj"),
            "v 0 1 0\nv 0.5 1 0\nv 1 1 0\nl 1 2 3\n",
        )
        .unwrap();
        let text = MINIMAL
            .replace("cube.tet", "rod.obj")
            .replace("frames = 2", "frames = 0");
        let cfg = parse_config(&text).unwrap();
        let mut sim = build_simulation(&cfg, &dir, None).unwrap();
        let out = dir.join("out");
        run_scene(&mut sim, 0, &out).unwrap();
        assert!(out.join("frame_0000.obj").exists());
        assert!(!out.join("frame_0001.obj").exists());
        let csv = std::fs::read_to_string(out.join("stats.csv")).unwrap();
        assert_eq!(output::parse_stats_csv(&csv).unwrap().len(), 0);
    }
}
