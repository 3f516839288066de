use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use coarsim::coarsen::{build_map, classify_dof, write_map_csv, EdgeTags};
use coarsim::mesh::order_and_group;
use coarsim::output;
use coarsim::scene;
use coarsim::stepper::CoarsenMode;

#[derive(Parser)]
#[command(
    name = "coarsim",
    about = "Implicit elastodynamics with barrier contact and adaptive in-solve algebraic coarsening"
)]
struct Cli {
    /// Worker thread cap (1 forces fully sequential execution). Results are
    /// identical for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Adaptive,
    FullSpace,
    AllCollapse,
}

impl From<ModeArg> for CoarsenMode {
    fn from(m: ModeArg) -> CoarsenMode {
        match m {
            ModeArg::Adaptive => CoarsenMode::Adaptive,
            ModeArg::FullSpace => CoarsenMode::FullSpace,
            ModeArg::AllCollapse => CoarsenMode::AllCollapse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene: frame geometry, a per-iteration stats CSV, and a
    /// summary land in the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the coarsening mode from the config.
        #[arg(long)]
        mode: Option<ModeArg>,
    },
    /// Run the oracle-backed property suite on built-in meshes.
    Verify {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a stats CSV produced by `run`.
    Stats { csv: PathBuf },
    /// Dump the per-vertex coarse index map (vertex_id, coarse_id, dof) for a
    /// scene's default coarsening structure.
    DumpMap {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<ModeArg>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::FAILURE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: failed to configure worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, out, mode } => {
            let cfg = scene::load_config(&config)?;
            let base = config.parent().unwrap_or(std::path::Path::new("."));
            let out_dir = out.unwrap_or_else(|| base.join("out"));
            let mut sim = scene::build_simulation(&cfg, base, mode.map(Into::into))?;
            let summary = scene::run_scene(&mut sim, cfg.scene.frames, &out_dir)
                .with_context(|| format!("running scene `{}`", config.display()))?;
            println!("{}", summary.summary);
            println!("stats: {}", summary.stats_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed } => {
            if coarsim::verify::run_and_print(seed) {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Stats { csv } => {
            let text = std::fs::read_to_string(&csv)
                .with_context(|| format!("reading `{}`", csv.display()))?;
            let records = output::parse_stats_csv(&text)?;
            print!("{}", output::summarize(&records));
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpMap { config, out, mode } => {
            let cfg = scene::load_config(&config)?;
            let base = config.parent().unwrap_or(std::path::Path::new("."));
            let sim = scene::build_simulation(&cfg, base, mode.map(Into::into))?;
            let ne = sim.mesh.edges.len();
            // The structural (no-strain-history) map: everything collapsible
            // unless the mode protects it; pinned edges always protected.
            let mut tags = match sim.config.mode {
                CoarsenMode::FullSpace => EdgeTags::all_protected(ne),
                _ => EdgeTags::all_collapsible(ne),
            };
            for (v, &pin) in sim.state.pinned.iter().enumerate() {
                if pin {
                    for &e in &sim.mesh.vertex_to_edges[v] {
                        tags.tags[e] = 0;
                    }
                }
            }
            let ordering = order_and_group(&sim.mesh, sim.config.group_size)?;
            let raw = build_map(&tags, &ordering, &sim.mesh);
            let (map, class) = classify_dof(&raw, sim.config.affine_threshold);
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_map_csv(&mut buf, &map, &class)?;
                    std::fs::write(&path, buf)
                        .with_context(|| format!("writing `{}`", path.display()))?;
                }
                None => write_map_csv(std::io::stdout().lock(), &map, &class)?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
