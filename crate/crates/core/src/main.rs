use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cohesive_gamma::envelopes::{convex_envelope_grid, lamination_table, AxisSpec, EnvelopeTable, LaminationOptions};
use cohesive_gamma::gamma_harness::{gamma_sweep, persist_results, SweepConfig};
use cohesive_gamma::material_laws::{BuiltinPsi, LawSpec};
use cohesive_gamma::phasefield::RunConfig;
use cohesive_gamma::surface_density::{gscal_curve, SurfaceDensityCurve};
use cohesive_gamma::MatrixArg;

#[derive(Parser)]
#[command(
    name = "cohesive-gamma",
    version,
    about = "Phase-field cohesive fracture energies and their limits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spot-check a material law.
    Law {
        #[command(subcommand)]
        action: LawAction,
    },
    /// Build or query relaxed volume densities.
    Envelope {
        #[command(subcommand)]
        action: EnvelopeAction,
    },
    /// Compute the scalar surface density curve.
    Gscal {
        #[arg(long, default_value_t = 1.0)]
        ell: f64,
        /// Comma list, or `lin:a:b:n` / `log:a:b:n`.
        #[arg(long)]
        amplitudes: String,
        /// Increasing comma list of cell half-widths.
        #[arg(long = "T", default_value = "16,32,64")]
        t_ladder: String,
        #[arg(long, default_value_t = 128)]
        nodes_per_unit: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one alternating minimization.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare discrete minima with the limit problem over an eps ladder.
    GammaSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LawAction {
    Eval {
        #[arg(long, default_value = "euclidean_squared")]
        psi: String,
        #[arg(long, default_value_t = 1.0)]
        ell: f64,
        /// Row-major entries, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        xi: String,
        /// `MxN`; square when omitted and the entry count allows it.
        #[arg(long)]
        shape: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Convex,
    Lamination,
}

#[derive(Subcommand)]
enum EnvelopeAction {
    Build {
        #[arg(long, default_value = "euclidean_squared")]
        law: String,
        #[arg(long, default_value_t = 1.0)]
        ell: f64,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 512)]
        budget: usize,
        /// `min:max:count` per axis, comma separated; one entry is used for
        /// every axis.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value = "1x1")]
        shape: String,
        #[arg(long)]
        out: PathBuf,
    },
    Query {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        at: String,
    },
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad number '{x}'")))
        .collect()
}

fn parse_amplitudes(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [mode @ ("lin" | "log"), a, b, n] => {
            let (a, b): (f64, f64) = (a.parse()?, b.parse()?);
            let n: usize = n.parse()?;
            if n < 2 {
                bail!("a range needs at least two points");
            }
            Ok((0..n)
                .map(|k| {
                    let s = k as f64 / (n - 1) as f64;
                    if *mode == "lin" {
                        a + s * (b - a)
                    } else {
                        a * (b / a).powf(s)
                    }
                })
                .collect())
        }
        _ => parse_list(s),
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (m, n) = s.split_once('x').context("shape must look like MxN")?;
    Ok((m.trim().parse()?, n.trim().parse()?))
}

fn law_spec(psi: &str, ell: f64, m: usize, n: usize) -> Result<LawSpec> {
    Ok(LawSpec {
        psi: psi.parse::<BuiltinPsi>()?,
        ell,
        m,
        n,
    })
}

fn law_eval(psi: &str, ell: f64, xi: &str, shape: Option<&str>) -> Result<()> {
    let entries = parse_list(xi)?;
    let (m, n) = match shape {
        Some(s) => parse_shape(s)?,
        None => {
            let r = (entries.len() as f64).sqrt().round() as usize;
            if r * r == entries.len() {
                (r, r)
            } else {
                (1, entries.len())
            }
        }
    };
    let law = law_spec(psi, ell, m, n)?.build()?;
    let xi = MatrixArg::new(m, n, &entries)?;
    let out = serde_json::json!({
        "psi": law.psi_eval(&xi)?,
        "psi_infty": law.psi_infty_eval(&xi)?,
        "h": law.h_eval(&xi)?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn envelope_build(
    law: &str,
    ell: f64,
    kind: Kind,
    depth: usize,
    budget: usize,
    grid: &str,
    shape: &str,
    out: &Path,
) -> Result<()> {
    let (m, n) = parse_shape(shape)?;
    let law = law_spec(law, ell, m, n)?.build()?;
    let mut axes = Vec::new();
    for spec in grid.split(',') {
        let p: Vec<&str> = spec.split(':').collect();
        let [a, b, c] = p.as_slice() else {
            bail!("axis '{spec}' must be min:max:count");
        };
        axes.push(AxisSpec::new(a.parse()?, b.parse()?, c.parse()?)?);
    }
    if axes.len() == 1 {
        axes = vec![axes[0]; law.dim()];
    }
    let table = match kind {
        Kind::Convex => convex_envelope_grid(&law, &axes)?,
        Kind::Lamination => lamination_table(&law, &axes, depth, budget, &LaminationOptions::default())?,
    };
    table.save(out)?;
    println!("wrote {} values to {}", table.values.len(), out.display());
    Ok(())
}

fn gscal(ell: f64, amplitudes: &str, ladder: &str, cpu: usize, out: &Path) -> Result<()> {
    let amps = parse_amplitudes(amplitudes)?;
    let ladder = parse_list(ladder)?;
    let curve = gscal_curve(ell, &amps, &ladder, cpu)?;
    for p in &curve.extrapolation_meta {
        let g = p.g_by_t.last().map_or(0.0, |x| x.1);
        let flag = if p.converged { "" } else { "  (T ladder not settled)" };
        println!(
            "t = {:<10.5} g = {:<10.6} rel change {:.2e}{flag}",
            p.t, g, p.rel_change
        );
    }
    curve.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Replaces `{"type": "file", "path": ...}` fidelity data by the nodal
/// values stored in that JSON file.
fn inline_fidelity_file(cfg: &mut serde_json::Value, base: &Path) -> Result<()> {
    let Some(w) = cfg.pointer_mut("/solve/fidelity_w") else {
        return Ok(());
    };
    if w.get("type").and_then(|t| t.as_str()) != Some("file") {
        return Ok(());
    }
    let rel = w
        .get("path")
        .and_then(|p| p.as_str())
        .context("fidelity file needs a path")?;
    let path = base.join(rel);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let values: Vec<f64> = serde_json::from_str(&text).context("fidelity file must hold a JSON array")?;
    *w = serde_json::json!({ "type": "nodal", "values": values });
    Ok(())
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut raw: serde_json::Value = serde_json::from_str(&text)?;
    inline_fidelity_file(&mut raw, config.parent().unwrap_or(Path::new(".")))?;
    let cfg: RunConfig = serde_json::from_value(raw)?;
    let (state, report) = cfg.run()?;
    cfg.write_outputs(&state, &report, out)?;
    let p = state.energy_parts;
    println!(
        "energy {:.8} (elastic {:.6}, damage {:.6} + {:.6}, regularization {:.3e}, fidelity {:.6})",
        p.total(),
        p.elastic,
        p.damage_local,
        p.damage_gradient,
        p.regularization,
        p.fidelity
    );
    println!("rounds {}, converged {}", report.rounds, report.converged);
    Ok(())
}

fn sweep(config: &Path, curve: &Path, out: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: SweepConfig = serde_json::from_str(&text)?;
    let curve = SurfaceDensityCurve::load(curve)?;
    let r = gamma_sweep(&cfg, &curve)?;
    println!("limit {:.6} (jump {:.4})", r.limit_value, r.limit.jump);
    for (i, rec) in r.records.iter().enumerate() {
        println!(
            "eps {:<8} nodes {:<7} min {:.6} rel {:.4} seed {:<14} rounds {}{}",
            rec.eps,
            rec.nodes,
            r.discrete_min[i],
            r.rel_errors[i],
            rec.seed,
            rec.rounds,
            if rec.under_resolved { "  under-resolved" } else { "" }
        );
    }
    let path = persist_results(&r, &cfg, out)?;
    println!("wrote {}", path.display());
    if r.flagged {
        println!("sweep flagged");
    }
    for g in &r.gate_failures {
        println!("gate failed: {g}");
    }
    Ok(r.gate_failures.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Law {
            action: LawAction::Eval { psi, ell, xi, shape },
        } => law_eval(&psi, ell, &xi, shape.as_deref())?,
        Command::Envelope { action } => match action {
            EnvelopeAction::Build {
                law,
                ell,
                kind,
                depth,
                budget,
                grid,
                shape,
                out,
            } => envelope_build(&law, ell, kind, depth, budget, &grid, &shape, &out)?,
            EnvelopeAction::Query { table, at } => {
                let t = EnvelopeTable::load(&table)?;
                println!("{}", t.query(&parse_list(&at)?)?);
            }
        },
        Command::Gscal {
            ell,
            amplitudes,
            t_ladder,
            nodes_per_unit,
            out,
        } => gscal(ell, &amplitudes, &t_ladder, nodes_per_unit, &out)?,
        Command::Simulate { config, out } => simulate(&config, &out)?,
        Command::GammaSweep { config, curve, out } => return sweep(&config, &curve, &out),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
