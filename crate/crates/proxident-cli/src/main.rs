//! Command-line front end for the identification library.
//!
//! One binary, eight subcommands, one shared model format. Every command
//! reads and writes JSON (plus CSV where a table is the natural shape),
//! records the seeds that influenced it, and produces byte-identical
//! output when rerun with the same flags. Exit codes separate failures of
//! an identification method on a well-posed input (1) from malformed
//! input (2).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use ndarray::Array3;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use proxident::bridge::{identify_bridge, BridgeSolution};
use proxident::compare::{comparison_csv, run_comparison, search_nonnested, ComparisonReport};
use proxident::models::{
    generate, observed_margin, ConstraintFlags, Degeneracy, ModelSpec, Structure,
};
use proxident::oracle::{adjust, CounterfactualLaw};
use proxident::prob::{CategoricalDomain, FullLaw};
use proxident::sem::{GaussianSem, MonteCarloCheck};
use proxident::tensor::eigen::{
    identify_array, identify_mediator_array, ArrayIdentification, ArrayMode,
};
use proxident::tensor::{check_kruskal, k_rank, KruskalReport, ThreeWayArray};
use proxident::Tolerances;

#[derive(Parser)]
#[command(
    name = "proxident",
    version,
    about = "Proxy-variable causal identification on discrete latent-variable models"
)]
struct Cli {
    /// Identification tolerance; overrides the PROXIDENT_TOL environment
    /// variable, which overrides the built-in default.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output file (or directory for `search`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the comparison harness; default lets the pool
    /// decide. Results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic model for one of the known structures.
    Generate {
        /// One of: confounder-strict, confounder-permissive, triple-proxy,
        /// front-door, mediator-proxies.
        #[arg(long)]
        structure: String,
        /// Comma-separated cardinalities, e.g. U=2,Z=2,W=2,A=2,Y=2.
        #[arg(long)]
        cards: String,
        #[arg(long)]
        seed: u64,
        /// Drop the structure's optional edges.
        #[arg(long)]
        no_dotted_edges: bool,
        /// Reject draws whose proxy-given-latent matrices are close to
        /// singular.
        #[arg(long)]
        force_invertible: bool,
        /// Reject draws without a well-separated outcome row.
        #[arg(long)]
        force_distinct_rows: bool,
        /// Reject draws whose bridge residual exceeds the audit threshold.
        #[arg(long)]
        force_bridge_solvable: bool,
        /// Reject draws failing the three-way decomposition condition.
        #[arg(long)]
        force_kruskal: bool,
        /// Inject a deliberate assumption violation.
        #[arg(long, value_enum)]
        degeneracy: Option<DegeneracyArg>,
    },
    /// Brute-force counterfactual from the full law, latents visible.
    Oracle {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run one identifier on the observed margin of a model.
    Identify {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        model: PathBuf,
        /// Latent cardinality for the cp method; defaults to the model
        /// spec's.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Kruskal rank of a matrix.
    Krank {
        /// JSON file holding a 2D row-major array of numbers.
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Decompose a three-way array into rank-one terms.
    Cp {
        /// JSON file holding a 3D nested array of numbers.
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit assumptions, classify, run all identifiers, score them.
    Compare {
        #[arg(long)]
        model: PathBuf,
        /// Seed for decomposition restarts; defaults to the model spec's.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Find witness models for the four assumption-overlap cells.
    Search {
        /// Maximum number of candidate models to examine.
        #[arg(long, default_value_t = 5000)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Linear-Gaussian model: closed-form counterfactual mean against
    /// Monte Carlo simulation.
    Sem {
        /// JSON coefficient file; a model is sampled from the seed when
        /// omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Treatment level to intervene at.
        #[arg(long, default_value_t = 1.0)]
        level: f64,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bridge,
    Eigen,
    Cp,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DegeneracyArg {
    /// Outcome conditionals identical across latent states.
    OutcomeDetachedFromLatent,
}

impl From<DegeneracyArg> for Degeneracy {
    fn from(arg: DegeneracyArg) -> Degeneracy {
        match arg {
            DegeneracyArg::OutcomeDetachedFromLatent => Degeneracy::OutcomeDetachedFromLatent,
        }
    }
}

#[derive(Debug)]
enum CliError {
    /// Malformed or inapplicable input: exit 2.
    Input(String),
    /// An identification method failed on well-formed input: exit 1.
    Identification(String),
}

impl From<proxident::Error> for CliError {
    fn from(e: proxident::Error) -> CliError {
        if e.is_identification_failure() {
            CliError::Identification(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

fn input_err(context: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {detail}"))
}

/// The on-disk model format shared by every subcommand: the reproducible
/// spec next to the full law it generated.
#[derive(Serialize, Deserialize)]
struct ModelBundle {
    spec: ModelSpec,
    law: FullLaw,
}

#[derive(Serialize)]
struct OracleResult {
    structure: Structure,
    seed: u64,
    treatment: String,
    outcome: String,
    adjustment_set: Vec<String>,
    counterfactual: CounterfactualLaw,
}

#[derive(Serialize)]
struct IdentifyResult {
    method: String,
    structure: Structure,
    seed: u64,
    counterfactual: CounterfactualLaw,
    #[serde(skip_serializing_if = "Option::is_none")]
    bridge: Option<BridgeSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    array: Option<ArrayIdentification>,
}

#[derive(Serialize)]
struct KrankResult {
    nrows: usize,
    ncols: usize,
    k_rank: usize,
}

#[derive(Serialize)]
struct CpResult {
    dims: [usize; 3],
    rank: usize,
    restarts: usize,
    seed: u64,
    fit: f64,
    restart: usize,
    sweeps: usize,
    converged: bool,
    factors: CpFactorsOut,
    /// Uniqueness condition evaluated on the recovered factors; reported,
    /// not enforced.
    kruskal: KruskalReport,
}

#[derive(Serialize)]
struct CpFactorsOut {
    row: Vec<Vec<f64>>,
    col: Vec<Vec<f64>>,
    outcome: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SemResult {
    seed: u64,
    simulation_seed: u64,
    treatment_level: f64,
    draws: usize,
    params: GaussianSem,
    ace: f64,
    check: MonteCarloCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
        if let Err(e) = pool {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Identification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Default tolerances, then PROXIDENT_TOL, then the --tol flag.
fn tolerances(flag: Option<f64>) -> Result<Tolerances, CliError> {
    let mut tol = Tolerances::default();
    if let Ok(text) = std::env::var("PROXIDENT_TOL") {
        let value: f64 = text
            .parse()
            .map_err(|e| input_err("PROXIDENT_TOL", format!("`{text}` is not a number ({e})")))?;
        tol = tol.with_identification(value);
    }
    if let Some(value) = flag {
        tol = tol.with_identification(value);
    }
    if !(tol.identification.is_finite() && tol.identification > 0.0) {
        return Err(CliError::Input(
            "tolerance must be a positive finite number".into(),
        ));
    }
    Ok(tol)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| input_err(&format!("writing {}", path.display()), e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| input_err("writing stdout", e)),
    }
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| input_err("serializing output", e))?;
    text.push('\n');
    Ok(text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_err(&format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| {
        // serde_json already reports line and column.
        input_err(&format!("{what} {}", path.display()), e)
    })
}

/// Parses `U=2,Z=2,...` into a cardinality map.
fn parse_cards(text: &str) -> Result<BTreeMap<String, usize>, CliError> {
    let mut cards = BTreeMap::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let (name, value) = piece
            .split_once('=')
            .ok_or_else(|| input_err("--cards", format!("`{piece}` is not NAME=COUNT")))?;
        let count: usize = value
            .trim()
            .parse()
            .map_err(|e| input_err("--cards", format!("`{piece}`: {e}")))?;
        if cards.insert(name.trim().to_string(), count).is_some() {
            return Err(input_err("--cards", format!("`{}` given twice", name.trim())));
        }
    }
    if cards.is_empty() {
        return Err(CliError::Input("--cards is empty".into()));
    }
    Ok(cards)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let tol = tolerances(cli.tol)?;
    match &cli.command {
        Command::Generate {
            structure,
            cards,
            seed,
            no_dotted_edges,
            force_invertible,
            force_distinct_rows,
            force_bridge_solvable,
            force_kruskal,
            degeneracy,
        } => {
            let spec = ModelSpec {
                structure: Structure::parse(structure)?,
                cardinalities: parse_cards(cards)?,
                seed: *seed,
                dotted_edges: !no_dotted_edges,
                constraints: ConstraintFlags {
                    force_invertible: *force_invertible,
                    force_distinct_rows: *force_distinct_rows,
                    force_bridge_solvable: *force_bridge_solvable,
                    force_kruskal: *force_kruskal,
                },
                degeneracy: degeneracy.map(Degeneracy::from),
            };
            let law = generate(&spec, &tol)?;
            emit(&cli.out, &to_pretty(&ModelBundle { spec, law })?)
        }
        Command::Oracle { model } => {
            let bundle: ModelBundle = read_json(model, "model")?;
            let structure = bundle.spec.structure;
            let treatment = structure.treatment().ok_or_else(|| {
                input_err(
                    "oracle",
                    format!("structure `{}` has no treatment variable", structure.name()),
                )
            })?;
            let counterfactual = adjust(
                &bundle.law,
                treatment,
                structure.outcome(),
                structure.adjustment_set(),
            )?;
            let result = OracleResult {
                structure,
                seed: bundle.spec.seed,
                treatment: treatment.to_string(),
                outcome: structure.outcome().to_string(),
                adjustment_set: structure
                    .adjustment_set()
                    .iter()
                    .map(|v| v.to_string())
                    .collect(),
                counterfactual,
            };
            emit(&cli.out, &to_pretty(&result)?)
        }
        Command::Identify {
            method,
            model,
            rank,
            restarts,
            seed,
        } => {
            let bundle: ModelBundle = read_json(model, "model")?;
            let structure = bundle.spec.structure;
            let roles = structure.proxy_roles().ok_or_else(|| {
                input_err(
                    "identify",
                    format!(
                        "identification needs treatment and proxy roles, which \
                         structure `{}` does not define",
                        structure.name()
                    ),
                )
            })?;
            // The identifier sees the observed margin only.
            let margin = observed_margin(&bundle.law, structure)?;
            let result = match method {
                Method::Bridge => {
                    if !matches!(
                        structure,
                        Structure::ConfounderStrict | Structure::ConfounderPermissive
                    ) {
                        return Err(input_err(
                            "identify",
                            format!(
                                "the bridge method covers the confounder structures, \
                                 not `{}`",
                                structure.name()
                            ),
                        ));
                    }
                    let solution = identify_bridge(&margin, &roles, &tol)?;
                    IdentifyResult {
                        method: "bridge".into(),
                        structure,
                        seed: *seed,
                        counterfactual: solution.counterfactual.clone(),
                        bridge: Some(solution),
                        array: None,
                    }
                }
                Method::Eigen | Method::Cp => {
                    let latent = structure.latent_role().expect("proxy structure");
                    let (mode, rank) = match method {
                        Method::Eigen => (ArrayMode::Eigen, *rank),
                        Method::Cp => (
                            ArrayMode::Cp,
                            Some(match rank {
                                Some(r) => *r,
                                None => bundle.law.cardinality(latent)?,
                            }),
                        ),
                        Method::Bridge => unreachable!(),
                    };
                    let run = if structure == Structure::MediatorProxies {
                        identify_mediator_array(&margin, &roles, mode, rank, *restarts, *seed, &tol)
                    } else {
                        identify_array(&margin, &roles, mode, rank, *restarts, *seed, &tol)
                    }?;
                    IdentifyResult {
                        method: mode.name().into(),
                        structure,
                        seed: *seed,
                        counterfactual: run.counterfactual.clone(),
                        bridge: None,
                        array: Some(run),
                    }
                }
            };
            emit(&cli.out, &to_pretty(&result)?)
        }
        Command::Krank { matrix } => {
            let rows: Vec<Vec<f64>> = read_json(matrix, "matrix")?;
            let nrows = rows.len();
            let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
            if nrows == 0 || ncols == 0 {
                return Err(CliError::Input("matrix must be nonempty".into()));
            }
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(CliError::Input("matrix rows have unequal lengths".into()));
            }
            let m = DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]);
            let result = KrankResult {
                nrows,
                ncols,
                k_rank: k_rank(&m, &tol),
            };
            emit(&cli.out, &to_pretty(&result)?)
        }
        Command::Cp {
            tensor,
            rank,
            restarts,
            seed,
        } => {
            let cells: Vec<Vec<Vec<f64>>> = read_json(tensor, "tensor")?;
            let dims = tensor_dims(&cells)?;
            let mut entries = Array3::zeros(dims);
            for (i, slab) in cells.iter().enumerate() {
                for (j, row) in slab.iter().enumerate() {
                    for (k, &v) in row.iter().enumerate() {
                        entries[(i, j, k)] = v;
                    }
                }
            }
            let axes = [
                CategoricalDomain::indexed("row", dims.0)?,
                CategoricalDomain::indexed("col", dims.1)?,
                CategoricalDomain::indexed("outcome", dims.2)?,
            ];
            let array = ThreeWayArray::new(axes, entries)?;
            let recovery = proxident::tensor::als::recover_cp(&array, *rank, *restarts, *seed, &tol)?;
            let kruskal = check_kruskal(
                &recovery.factors.row,
                &recovery.factors.col,
                &recovery.factors.outcome,
                &tol,
            )?;
            let result = CpResult {
                dims: [dims.0, dims.1, dims.2],
                rank: *rank,
                restarts: *restarts,
                seed: *seed,
                fit: recovery.fit,
                restart: recovery.restart,
                sweeps: recovery.sweeps,
                converged: recovery.converged,
                factors: CpFactorsOut {
                    row: matrix_rows(&recovery.factors.row),
                    col: matrix_rows(&recovery.factors.col),
                    outcome: matrix_rows(&recovery.factors.outcome),
                },
                kruskal,
            };
            emit(&cli.out, &to_pretty(&result)?)
        }
        Command::Compare {
            model,
            seed,
            format,
        } => {
            let bundle: ModelBundle = read_json(model, "model")?;
            let seed = seed.unwrap_or(bundle.spec.seed);
            let report = run_comparison(&bundle.law, bundle.spec.structure, seed, &tol)?;
            match format {
                Format::Json => emit(&cli.out, &to_pretty(&report)?),
                Format::Csv => emit(&cli.out, &comparison_csv(std::slice::from_ref(&report))),
            }
        }
        Command::Search { budget, seed } => {
            let report = search_nonnested(*budget, *seed, &tol)?;
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir)
                        .map_err(|e| input_err(&format!("creating {}", dir.display()), e))?;
                    fs::write(dir.join("search.json"), to_pretty(&report)?)
                        .map_err(|e| input_err("writing search.json", e))?;
                    let rows: Vec<ComparisonReport> =
                        report.witnesses.iter().map(|w| w.report.clone()).collect();
                    fs::write(dir.join("witnesses.csv"), comparison_csv(&rows))
                        .map_err(|e| input_err("writing witnesses.csv", e))?;
                    for witness in &report.witnesses {
                        let name = format!("witness-{}.json", witness.cell.name());
                        fs::write(dir.join(&name), to_pretty(witness)?)
                            .map_err(|e| input_err(&format!("writing {name}"), e))?;
                    }
                    if !report.complete {
                        eprintln!(
                            "warning: budget {} exhausted with cells still missing: {}",
                            report.budget,
                            report
                                .missing
                                .iter()
                                .map(|c| c.name())
                                .collect::<Vec<_>>()
                                .join(", ")
                        );
                    }
                    Ok(())
                }
                None => emit(&cli.out, &to_pretty(&report)?),
            }
        }
        Command::Sem {
            params,
            seed,
            level,
            draws,
        } => {
            let sem = match params {
                Some(path) => {
                    let sem: GaussianSem = read_json(path, "coefficients")?;
                    sem.validate()?;
                    sem
                }
                None => GaussianSem::random(&mut ChaCha8Rng::seed_from_u64(*seed)),
            };
            // Keep the simulation stream distinct from the coefficient
            // draw, which consumed the seed itself.
            let simulation_seed = seed.wrapping_add(1);
            let check = sem.monte_carlo_check(*level, *draws, simulation_seed)?;
            let result = SemResult {
                seed: *seed,
                simulation_seed,
                treatment_level: *level,
                draws: *draws,
                ace: sem.ace(),
                params: sem,
                check,
            };
            emit(&cli.out, &to_pretty(&result)?)
        }
    }
}

fn tensor_dims(cells: &[Vec<Vec<f64>>]) -> Result<(usize, usize, usize), CliError> {
    let i = cells.len();
    let j = cells.first().map(|s| s.len()).unwrap_or(0);
    let k = cells
        .first()
        .and_then(|s| s.first())
        .map(|r| r.len())
        .unwrap_or(0);
    if i == 0 || j == 0 || k == 0 {
        return Err(CliError::Input("tensor must be nonempty".into()));
    }
    let ragged = cells
        .iter()
        .any(|s| s.len() != j || s.iter().any(|r| r.len() != k));
    if ragged {
        return Err(CliError::Input("tensor slabs have unequal shapes".into()));
    }
    Ok((i, j, k))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cards_parse_names_and_counts() {
        let cards = parse_cards("U=2, Z=3 ,W=2,A=2,Y=2").unwrap();
        assert_eq!(cards.len(), 5);
        assert_eq!(cards["Z"], 3);
        assert!(parse_cards("U=2,U=3").is_err());
        assert!(parse_cards("U2").is_err());
        assert!(parse_cards("").is_err());
    }

    #[test]
    fn tensor_shape_validation_rejects_ragged_input() {
        let good = vec![vec![vec![1.0, 2.0], vec![3.0, 4.0]]];
        assert_eq!(tensor_dims(&good).unwrap(), (1, 2, 2));
        let ragged = vec![vec![vec![1.0, 2.0], vec![3.0]]];
        assert!(tensor_dims(&ragged).is_err());
        assert!(tensor_dims(&[]).is_err());
    }
}
