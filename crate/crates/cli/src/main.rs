use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hfmm::complexity::{predict_costs, ComplexityParams};
use hfmm::kernel::{
    generate_geometry, read_particles, self_potential, write_particles, GeometryKind, GeometrySpec, IntensityRule,
    Particle, Wavenumber,
};
use hfmm::report::{build_report, load_cells, run_study, save_cells, write_report, StudySpec};
use hfmm::spmd::Scheduler;
use hfmm::traversal::{build_setup, evaluate_potential, RunConfig};
use hfmm::tree::AlignmentPolicy;

#[derive(Parser)]
#[command(name = "hfmm", version, about = "Distributed Helmholtz FMM evaluation and scaling studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a particle file.
    Gen {
        /// kind:extent[:spacing] with kind one of grid, sphere, volume (λ units)
        #[arg(long)]
        geometry: String,
        #[arg(long, default_value_t = 1.0)]
        wavelength: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Unit intensities instead of seeded random ones
        #[arg(long)]
        unit: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare the fast evaluation with the direct sum.
    Verify {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Run the O(N²) check above the size guard
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 50_000)]
        max_particles: usize,
    },
    /// Evaluate potentials and write the ledger.
    Eval {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Potentials as `re im` lines in input order
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a scaling study and write its tables.
    Scale {
        /// Study JSON; flags override its fields
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long = "geometry")]
        geometries: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        #[arg(long)]
        digits: Option<f64>,
        #[arg(long)]
        buffer_bytes: Option<u64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_alignment)]
        alignment: Option<Vec<AlignmentPolicy>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_scheduler)]
        scheduler: Option<Scheduler>,
        #[arg(long)]
        parallel_cells: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rebuild the tables of a finished study from its stored ledgers.
    Report { dir: PathBuf },
    /// Evaluate the cost model.
    Predict {
        #[arg(long)]
        n_s: f64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 2)]
        d: u32,
        #[arg(long, default_value_t = 1.0)]
        c_k: f64,
        #[arg(long, default_value_t = 1e6)]
        buffer_bytes: f64,
        #[arg(long)]
        levels: u32,
    },
    /// Print the partition and plural-node slicing as JSON.
    TreeDump {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    #[arg(long, default_value_t = 3.0)]
    digits: f64,
    #[arg(long)]
    buffer_bytes: Option<u64>,
    #[arg(long, default_value = "aligned", value_parser = parse_alignment)]
    alignment: AlignmentPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "deterministic", value_parser = parse_scheduler)]
    scheduler: Scheduler,
    #[arg(long, default_value_t = 1.0)]
    wavelength: f64,
    /// Leaf box side in wavelengths
    #[arg(long, default_value_t = 0.25)]
    leaf_diameter: f64,
    #[arg(long)]
    one_particle_per_leaf: bool,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            wavelength: self.wavelength,
            digits: self.digits,
            leaf_diameter: self.leaf_diameter,
            n_ranks: self.ranks,
            buffer_bytes: self.buffer_bytes.unwrap_or(u64::MAX),
            alignment: self.alignment,
            one_particle_per_leaf: self.one_particle_per_leaf,
            seed: self.seed,
            scheduler: self.scheduler,
            ..Default::default()
        }
    }
}

fn parse_alignment(s: &str) -> Result<AlignmentPolicy, String> {
    match s {
        "aligned" => Ok(AlignmentPolicy::Aligned),
        "rank-ordered" => Ok(AlignmentPolicy::RankOrdered),
        _ => Err(format!("unknown alignment {s:?} (aligned, rank-ordered)")),
    }
}

fn parse_scheduler(s: &str) -> Result<Scheduler, String> {
    match s.split_once(':') {
        None if s == "deterministic" => Ok(Scheduler::Deterministic),
        None if s == "threaded" => Ok(Scheduler::Threaded),
        None if s == "adversarial" => Ok(Scheduler::Adversarial { seed: 0 }),
        Some(("adversarial", seed)) => seed
            .parse()
            .map(|seed| Scheduler::Adversarial { seed })
            .map_err(|e| format!("bad seed {seed:?}: {e}")),
        _ => Err(format!("unknown scheduler {s:?} (deterministic, threaded, adversarial[:seed])")),
    }
}

fn parse_geometry(s: &str) -> Result<GeometrySpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let kind = match parts[0] {
        "grid" => GeometryKind::PlanarGrid,
        "sphere" => GeometryKind::SphereSurface,
        "volume" => GeometryKind::CubicVolume,
        other => bail!("unknown geometry kind {other:?} (grid, sphere, volume)"),
    };
    let extent: f64 = parts.get(1).context("geometry needs an extent, e.g. grid:8")?.parse()?;
    let spacing: f64 = match parts.get(2) {
        Some(v) => v.parse()?,
        None => 0.25,
    };
    if parts.len() > 3 {
        bail!("geometry {s:?} has too many fields");
    }
    Ok(GeometrySpec::new(kind, extent, spacing)?)
}

fn load(path: &Path) -> Result<Vec<Particle>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_particles(BufReader::new(file))?)
}

fn cmd_gen(geometry: &str, wavelength: f64, seed: u64, unit: bool, output: &Path) -> Result<()> {
    let spec = parse_geometry(geometry)?;
    let rule = if unit { IntensityRule::Unit } else { IntensityRule::Random { seed } };
    let particles = generate_geometry(&spec, wavelength, rule)?;
    let header = vec![
        format!("geometry {geometry} wavelength {wavelength} seed {seed}"),
        format!("count {}", particles.len()),
    ];
    write_particles(BufWriter::new(File::create(output)?), &particles, &header)?;
    println!("wrote {} particles to {}", particles.len(), output.display());
    Ok(())
}

fn cmd_verify(input: &Path, run: &RunArgs, force: bool, max_particles: usize) -> Result<()> {
    let particles = load(input)?;
    if particles.len() > max_particles && !force {
        bail!(
            "{} particles exceed the direct-sum guard of {max_particles}; pass --force to run anyway",
            particles.len()
        );
    }
    let out = evaluate_potential(&particles, &run.config())?;
    let exact = self_potential(&particles, Wavenumber::from_wavelength(run.wavelength)?)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut max = 0.0f64;
    for (a, b) in out.potentials.iter().zip(&exact) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
        max = max.max((a - b).norm());
    }
    let rms = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let rel_max = if scale > 0.0 { max / scale } else { max };
    println!("particles {}", particles.len());
    println!("levels {}", out.setup.num_levels());
    println!("relative rms error {rms:.3e}");
    println!("max error {rel_max:.3e} (relative to max |phi|)");
    Ok(())
}

fn cmd_eval(input: &Path, run: &RunArgs, output: Option<&Path>, ledger: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    let particles = load(input)?;
    let out = evaluate_potential(&particles, &run.config())?;
    if let Some(path) = output {
        let mut w = BufWriter::new(File::create(path)?);
        for v in &out.potentials {
            writeln!(w, "{} {}", v.re, v.im)?;
        }
    }
    if let Some(path) = ledger {
        std::fs::write(path, out.ledger.to_json()?)?;
    }
    let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match csv {
        Some(path) => out.ledger.write_csv(File::create(path)?, &id)?,
        None => out.ledger.write_csv(std::io::stdout(), &id)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_scale(
    study: Option<&Path>,
    geometries: &[String],
    ranks: Option<Vec<usize>>,
    digits: Option<f64>,
    buffer_bytes: Option<u64>,
    alignment: Option<Vec<AlignmentPolicy>>,
    seed: Option<u64>,
    scheduler: Option<Scheduler>,
    parallel_cells: bool,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut spec = match study {
        Some(path) => StudySpec::from_json(&std::fs::read_to_string(path)?)?,
        None => StudySpec::default(),
    };
    if !geometries.is_empty() {
        spec.geometries = geometries.iter().map(|g| parse_geometry(g)).collect::<Result<_>>()?;
    }
    if let Some(v) = ranks {
        spec.ranks = v;
    }
    if let Some(v) = digits {
        spec.digits = v;
    }
    if let Some(v) = buffer_bytes {
        spec.buffer_bytes = v;
    }
    if let Some(v) = alignment {
        spec.alignments = v;
    }
    if let Some(v) = seed {
        spec.seed = v;
    }
    if let Some(v) = scheduler {
        spec.scheduler = v;
    }
    spec.parallel_cells |= parallel_cells;
    if let Some(v) = output {
        spec.output_dir = v;
    }
    spec.validate()?;
    let cells = run_study(&spec)?;
    save_cells(&spec.output_dir, &cells)?;
    std::fs::write(spec.output_dir.join("study.json"), serde_json::to_string_pretty(&spec)?)?;
    let report = build_report(&cells);
    write_report(&spec.output_dir, &cells, &report)?;
    for row in &report.scaling {
        println!(
            "{:<14} {:<12} N_p {:>3}  {:>10.4e} s  speedup {:>6.2}  eff {:.2}",
            row.geometry, row.alignment, row.n_p, row.seconds, row.speedup, row.efficiency
        );
    }
    for (id, e) in &report.failures {
        eprintln!("cell {id} failed: {e}");
    }
    println!("tables written to {}", spec.output_dir.display());
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<()> {
    let cells = load_cells(dir)?;
    let report = build_report(&cells);
    write_report(dir, &cells, &report)?;
    println!("regenerated {} cells in {}", cells.len(), dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            geometry,
            wavelength,
            seed,
            unit,
            output,
        } => cmd_gen(&geometry, wavelength, seed, unit, &output),
        Command::Verify {
            input,
            run,
            force,
            max_particles,
        } => cmd_verify(&input, &run, force, max_particles),
        Command::Eval {
            input,
            run,
            output,
            ledger,
            csv,
        } => cmd_eval(&input, &run, output.as_deref(), ledger.as_deref(), csv.as_deref()),
        Command::Scale {
            study,
            geometries,
            ranks,
            digits,
            buffer_bytes,
            alignment,
            seed,
            scheduler,
            parallel_cells,
            output,
        } => cmd_scale(
            study.as_deref(),
            &geometries,
            ranks,
            digits,
            buffer_bytes,
            alignment,
            seed,
            scheduler,
            parallel_cells,
            output,
        ),
        Command::Report { dir } => cmd_report(&dir),
        Command::Predict {
            n_s,
            p,
            d,
            c_k,
            buffer_bytes,
            levels,
        } => {
            let params = ComplexityParams::new(n_s, p, d, c_k, buffer_bytes)?;
            println!("{}", predict_costs(&params, levels)?.to_json()?);
            Ok(())
        }
        Command::TreeDump { input, run } => {
            let setup = build_setup(&load(&input)?, &run.config())?;
            println!("{}", serde_json::to_string_pretty(&setup.tree_dump())?);
            Ok(())
        }
    }
}
