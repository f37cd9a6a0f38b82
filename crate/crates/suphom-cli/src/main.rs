//! `suphom`: homogenized supremal energies from the command line.
//!
//! Subcommands: eval, sweep, p-curve, effective-set, oracle, verify.
//! Exit codes: 0 ok, 1 malformed config or arguments, 2 degraded result
//! (conservative/undecided estimate or failed verify checks), 3 solver
//! hard failure.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use suphom_core::config::RunConfig;
use suphom_core::constraint_hom::{
    cross_check_sublevel, directions_with_count, effective_set, ConstraintMap,
};
use suphom_core::error::Error;
use suphom_core::lp_hom::p_sweep;
use suphom_core::matrix::Matrix;
use suphom_core::oracle::{sup_hom_laminate_2d, Oracle1D, OracleForm};
use suphom_core::sup_hom::solve_sup_cell;
use suphom_core::verify::run_battery;

#[derive(Parser)]
#[command(
    name = "suphom",
    version,
    about = "Homogenized supremal energy densities"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for sampled checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 means sequential.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Direct solve of the supremal cell problem at one Z (JSON record).
    Eval {
        /// Row-major Z entries, comma separated.
        #[arg(long = "Z", allow_hyphen_values = true)]
        z: String,
        #[arg(long)]
        j: Option<usize>,
        #[arg(long = "N")]
        res: Option<usize>,
        /// Dump the corrector node field as CSV (index, components).
        #[arg(long)]
        dump_corrector: Option<PathBuf>,
    },
    /// Tabulate the effective density over a rectangular grid of Z (CSV).
    Sweep {
        /// Per-component ranges "lo:hi:step", joined by 'x'.
        #[arg(long = "grid-of-Z", allow_hyphen_values = true)]
        grid_of_z: String,
        #[arg(long)]
        j: Option<usize>,
        #[arg(long = "N")]
        res: Option<usize>,
    },
    /// Lp cell values along the exponent sweep (CSV).
    #[command(name = "p-curve")]
    PCurve {
        #[arg(long = "Z", allow_hyphen_values = true)]
        z: String,
        /// Override the config exponent list.
        #[arg(long, value_delimiter = ',')]
        ps: Option<Vec<f64>>,
        #[arg(long)]
        j: Option<usize>,
        #[arg(long = "N")]
        res: Option<usize>,
    },
    /// Directional radii of the homogenized constraint set (CSV).
    #[command(name = "effective-set")]
    EffectiveSet {
        /// Constraint level M* defining C(x) as a sublevel set.
        #[arg(long)]
        level: f64,
        /// Number of directions (default per dimension).
        #[arg(long)]
        dirs: Option<usize>,
        /// Also emit convex hull vertices (kind=hull rows).
        #[arg(long)]
        hull: bool,
        /// Cross-check the radii against the direct level-set route.
        #[arg(long)]
        cross_check: bool,
        #[arg(long)]
        j: Option<usize>,
        #[arg(long = "N")]
        res: Option<usize>,
    },
    /// Exact reference values (no config needed).
    Oracle {
        /// harmonic1d | laminate2d
        #[arg(long)]
        case: String,
        /// Scalar z (harmonic1d) or "z0,z1" (laminate2d).
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        /// Lp exponent: report the closed-form Lp value instead.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Run the cross-module invariant battery.
    Verify,
}

fn parse_z(text: &str, d: usize, n: usize) -> Result<Matrix, Error> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let parts = parts.map_err(|e| Error::InvalidArgument(format!("bad Z '{text}': {e}")))?;
    Matrix::from_vec(d, n, parts)
}

fn parse_axis_range(spec: &str) -> Result<Vec<f64>, Error> {
    let nums: Result<Vec<f64>, _> = spec.split(':').map(|s| s.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|e| Error::InvalidArgument(format!("bad range '{spec}': {e}")))?;
    if nums.len() != 3 || nums[2] <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "range must be lo:hi:step with positive step, got '{spec}'"
        )));
    }
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if hi < lo {
        return Ok(Vec::new());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + step * k as f64).collect())
}

/// Cartesian product of per-component ranges, row-major over components.
fn parse_z_grid(spec: &str, dn: usize) -> Result<Vec<Vec<f64>>, Error> {
    let axes: Result<Vec<Vec<f64>>, Error> = spec.split('x').map(parse_axis_range).collect();
    let axes = axes?;
    if axes.len() != dn {
        return Err(Error::InvalidArgument(format!(
            "grid-of-Z has {} components, density needs {}",
            axes.len(),
            dn
        )));
    }
    if axes.iter().any(|a| a.is_empty()) {
        return Ok(Vec::new());
    }
    let mut rows = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(rows.len() * axis.len());
        for row in &rows {
            for v in axis {
                let mut r = row.clone();
                r.push(*v);
                next.push(r);
            }
        }
        rows = next;
    }
    Ok(rows)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => Ok(std::fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// CLI --out wins; otherwise the config's output path, else stdout.
fn resolve_out(cli: &Cli, cfg: &RunConfig) -> Option<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required for this command".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Json(_) | Error::Io(_) => 1,
        _ => 3,
    }
}

fn run(cli: &Cli) -> Result<i32, Error> {
    match &cli.command {
        Command::Eval {
            z,
            j,
            res,
            dump_corrector,
        } => {
            let cfg = load_config(cli)?;
            let density = cfg.build_density()?;
            let grid = cfg.build_grid(*j, *res)?;
            let z = parse_z(z, cfg.density.d, cfg.density.n)?;
            let out_path = resolve_out(cli, &cfg);
            let est = solve_sup_cell(&density, &grid, &z, &cfg.sup_options())?;
            if let Some(path) = dump_corrector {
                let d = est.corrector.d;
                let mut csv = String::from("index");
                for i in 0..d {
                    csv.push_str(&format!(",u{i}"));
                }
                csv.push('\n');
                for idx in 0..est.corrector.data.len() / d {
                    csv.push_str(&format!("{idx}"));
                    for i in 0..d {
                        csv.push_str(&format!(",{}", est.corrector.data[idx * d + i]));
                    }
                    csv.push('\n');
                }
                std::fs::write(path, csv)?;
            }
            let conservative = est.conservative;
            let json = serde_json::to_string_pretty(&est)?;
            write_output(&out_path, &format!("{json}\n"))?;
            Ok(if conservative { 2 } else { 0 })
        }
        Command::Sweep { grid_of_z, j, res } => {
            let cfg = load_config(cli)?;
            let density = cfg.build_density()?;
            let grid = cfg.build_grid(*j, *res)?;
            let dn = cfg.density.d * cfg.density.n;
            let zs = parse_z_grid(grid_of_z, dn)?;
            let opts = cfg.sup_options();

            let mut csv = String::new();
            for k in 0..dn {
                csv.push_str(&format!("z{k},"));
            }
            csv.push_str("value,m_lo,m_hi,width\n");

            let solve_row = |zdata: &Vec<f64>| -> Result<String, Error> {
                let z = Matrix::from_vec(cfg.density.d, cfg.density.n, zdata.clone())?;
                let est = solve_sup_cell(&density, &grid, &z, &opts)?;
                let mut line = String::new();
                for v in zdata {
                    line.push_str(&format!("{v},"));
                }
                line.push_str(&format!(
                    "{},{},{},{}\n",
                    est.value,
                    est.bracket.0,
                    est.bracket.1,
                    est.bracket.1 - est.bracket.0
                ));
                Ok(line)
            };

            #[cfg(feature = "parallel")]
            let rows: Vec<Result<String, Error>> = {
                use rayon::prelude::*;
                zs.par_iter().map(solve_row).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let rows: Vec<Result<String, Error>> = zs.iter().map(solve_row).collect();

            for row in rows {
                csv.push_str(&row?);
            }
            write_output(&resolve_out(cli, &cfg), &csv)?;
            Ok(0)
        }
        Command::PCurve { z, ps, j, res } => {
            let cfg = load_config(cli)?;
            let density = cfg.build_density()?;
            let grid = cfg.build_grid(*j, *res)?;
            let z = parse_z(z, cfg.density.d, cfg.density.n)?;
            let ps = ps.clone().unwrap_or_else(|| cfg.solver.ps.clone());
            let sweep = p_sweep(&density, &grid, &z, &ps, &cfg.lp_options())?;
            let mut csv = String::from("p,energy,value_root,converged\n");
            for e in &sweep {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    e.p, e.energy, e.value_root, e.converged
                ));
            }
            write_output(&resolve_out(cli, &cfg), &csv)?;
            Ok(if sweep.iter().all(|e| e.converged) {
                0
            } else {
                2
            })
        }
        Command::EffectiveSet {
            level,
            dirs,
            hull,
            cross_check,
            j,
            res,
        } => {
            let cfg = load_config(cli)?;
            let density = Arc::new(cfg.build_density()?);
            let grid = cfg.build_grid(*j, *res)?;
            let (d, n) = (cfg.density.d, cfg.density.n);
            let directions = match dirs {
                Some(k) => directions_with_count(d, n, *k),
                None => suphom_core::constraint_hom::default_directions(d, n),
            };
            let eff_opts = cfg.effective_set_options();

            let mut csv = String::from("kind,");
            for k in 0..d * n {
                csv.push_str(&format!("c{k},"));
            }
            csv.push_str("t_star\n");

            if *cross_check {
                let report = cross_check_sublevel(
                    &density,
                    &grid,
                    *level,
                    &directions,
                    &eff_opts,
                    &cfg.sup_options(),
                )?;
                let mut out = String::from("kind,");
                for k in 0..d * n {
                    out.push_str(&format!("c{k},"));
                }
                out.push_str("t_indicator,t_level_set\n");
                for row in &report.rows {
                    out.push_str("dir,");
                    for v in row.direction.data() {
                        out.push_str(&format!("{v},"));
                    }
                    out.push_str(&format!(
                        "{},{}\n",
                        row.radius_indicator, row.radius_level_set
                    ));
                }
                write_output(&resolve_out(cli, &cfg), &out)?;
                return Ok(0);
            }

            let cmap = ConstraintMap::Sublevel {
                density: Arc::clone(&density),
                level: *level,
            };
            let set = effective_set(&cmap, &grid, &directions, &eff_opts)?;
            for (e, t) in set.directions.iter().zip(&set.radii) {
                csv.push_str("dir,");
                for v in e.data() {
                    csv.push_str(&format!("{v},"));
                }
                csv.push_str(&format!("{t}\n"));
            }
            if *hull {
                if let Some(hull_pts) = set.hull_2d() {
                    for (x, y) in hull_pts {
                        csv.push_str(&format!("hull,{x},{y},\n"));
                    }
                }
            }
            write_output(&resolve_out(cli, &cfg), &csv)?;
            Ok(if set.conservative.iter().any(|c| *c) {
                2
            } else {
                0
            })
        }
        Command::Oracle { case, z, p } => {
            let text = match case.as_str() {
                "harmonic1d" => {
                    let oracle = Oracle1D::harmonic_halves(OracleForm::CoeffNorm);
                    let zv: f64 = z
                        .trim()
                        .parse()
                        .map_err(|e| Error::InvalidArgument(format!("bad z '{z}': {e}")))?;
                    let value = match p {
                        Some(p) => oracle.lp_hom_1d_closed_form(zv, *p)?,
                        None => oracle.sup_hom_1d(zv)?,
                    };
                    format!("{value}\n")
                }
                "laminate2d" => {
                    let parts: Vec<&str> = z.split(',').collect();
                    if parts.len() != 2 {
                        return Err(Error::InvalidArgument("laminate2d needs z0,z1".into()));
                    }
                    let z0: f64 = parts[0]
                        .trim()
                        .parse()
                        .map_err(|e| Error::InvalidArgument(format!("bad z '{z}': {e}")))?;
                    let z1: f64 = parts[1]
                        .trim()
                        .parse()
                        .map_err(|e| Error::InvalidArgument(format!("bad z '{z}': {e}")))?;
                    if p.is_some() {
                        return Err(Error::InvalidArgument(
                            "no closed-form Lp value for the laminate".into(),
                        ));
                    }
                    let profile = Oracle1D::harmonic_halves(OracleForm::CoeffNorm);
                    let value = sup_hom_laminate_2d(&profile, [z0, z1], OracleForm::CoeffNorm)?;
                    format!("{value}\n")
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown oracle case '{other}' (harmonic1d | laminate2d)"
                    )))
                }
            };
            write_output(&cli.out, &text)?;
            Ok(0)
        }
        Command::Verify => {
            let cfg = load_config(cli)?;
            let report = run_battery(&cfg, cli.seed)?;
            write_output(&resolve_out(cli, &cfg), &report.render())?;
            Ok(if report.all_passed() { 0 } else { 2 })
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SUPHOM_LOG", "error"))
        .init();
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        // 0 means sequential: a single-thread pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(threads) = cli.threads {
        if threads > 1 {
            log::warn!("built without the parallel feature; --threads ignored");
        }
    }

    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code_for(&err));
        }
    }
}
