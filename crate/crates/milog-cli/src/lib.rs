//! Command implementations for the `milog` binary.
//!
//! Every invocation prints one JSON document on standard output:
//! `{"status": "ok"|"error", "payload": ..., "diagnostics": [...]}` and
//! exits 0 on success, 1 on validation/evaluation errors, 2 on usage
//! errors. Rationals are printed as `p/q` strings.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use milog::continuity::{classify_fragment, lipschitz_bounds};
use milog::eval::{EvalResult, EvalSession, DEFAULT_BUDGET};
use milog::files;
use milog::formula::Formula;
use milog::rational::format_rat;
use milog::scott::{
    check_elementary_equivalence, define_invariant_predicate, define_with_parameters,
    scott_sentence, BackAndForthTables, DefinabilityRequest,
};
use milog::structure::{brute_force_isomorphic, FiniteStructure, PointId};
use milog::syntax::{parse_baire_desc, parse_formula, print_formula};
use milog::transform::{
    approx_negation, borel_compile, exact_disjunction, exact_exists, exact_negation,
    rho_eliminate, Family,
};

pub struct CommandResult {
    pub status: &'static str,
    pub payload: Value,
    pub diagnostics: Vec<String>,
    pub exit_code: u8,
}

impl CommandResult {
    fn ok(payload: Value) -> Self {
        CommandResult {
            status: "ok",
            payload,
            diagnostics: Vec::new(),
            exit_code: 0,
        }
    }

    fn error(message: String, exit_code: u8) -> Self {
        CommandResult {
            status: "error",
            payload: Value::Null,
            diagnostics: vec![message],
            exit_code,
        }
    }

    pub fn to_json(&self) -> String {
        json!({
            "status": self.status,
            "payload": self.payload,
            "diagnostics": self.diagnostics,
        })
        .to_string()
    }
}

#[derive(Parser)]
#[command(name = "milog", version, about = "Infinitary [0,1]-valued logic on finite metric structures", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct FormulaInput {
    /// Formula as an S-expression.
    #[arg(long, conflicts_with = "formula_file")]
    formula: Option<String>,
    /// File containing one formula.
    #[arg(long)]
    formula_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check every structure invariant; violations are reported, not fatal.
    Validate {
        #[arg(long)]
        structure: PathBuf,
    },
    /// Evaluate a formula at an assignment.
    Eval {
        #[arg(long)]
        structure: PathBuf,
        #[command(flatten)]
        formula: FormulaInput,
        /// Variable assignment, e.g. -a x=a (repeatable).
        #[arg(long = "assign", short = 'a')]
        assign: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u32,
    },
    /// Test whether the formula's value is exactly 0.
    Satisfies {
        #[arg(long)]
        structure: PathBuf,
        #[command(flatten)]
        formula: FormulaInput,
        #[arg(long = "assign", short = 'a')]
        assign: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u32,
    },
    /// Apply a formula transformation pass.
    Transform {
        /// One of rho, neg, nneg, or, exists, borel.
        #[arg(long)]
        pass: String,
        #[arg(long)]
        structure: Option<PathBuf>,
        /// Input formula(s); `or` and `borel` accept several.
        #[arg(long)]
        formula: Vec<String>,
        /// Variables for `exists` (comma-separated), or parameter names.
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
        /// Baire description for `borel`.
        #[arg(long)]
        desc: Option<String>,
    },
    /// Fragment classification and per-variable Lipschitz bounds.
    Classify {
        #[arg(long)]
        structure: PathBuf,
        #[command(flatten)]
        formula: FormulaInput,
    },
    /// Orbit of a tuple under the automorphism group.
    Orbits {
        #[arg(long)]
        structure: PathBuf,
        /// Tuple of point names, comma-separated.
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
    },
    /// Orbit-indicator formula for a tuple.
    Theta {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
        /// Arity cap for the underlying tables (default: structure size).
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Scott sentence of the structure.
    Scott {
        #[arg(long)]
        structure: PathBuf,
    },
    /// Mutual Scott-sentence satisfaction of two structures.
    Equiv {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        structure2: PathBuf,
    },
    /// Brute-force isomorphism test.
    Isomorphic {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        structure2: PathBuf,
    },
    /// Synthesize a defining formula for an invariant predicate table.
    Define {
        #[arg(long)]
        structure: PathBuf,
        /// JSON table mapping tuple keys to p/q values.
        #[arg(long)]
        predicate: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: u32,
        /// Parameter points fixed by the automorphisms (comma-separated).
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
    },
}

fn eval_result_json(r: &EvalResult) -> Value {
    match r {
        EvalResult::Exact(v) => json!({ "exact": format_rat(v) }),
        EvalResult::Bounds { lo, hi, budget } => json!({
            "lo": format_rat(lo),
            "hi": format_rat(hi),
            "budget": budget,
        }),
    }
}

struct Failure {
    message: String,
    exit_code: u8,
}

fn fail(message: impl Into<String>) -> Failure {
    Failure {
        message: message.into(),
        exit_code: 1,
    }
}

fn load(path: &PathBuf) -> Result<FiniteStructure, Failure> {
    files::load_structure(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn formula_text(input: &FormulaInput) -> Result<String, Failure> {
    match (&input.formula, &input.formula_file) {
        (Some(s), _) => Ok(s.clone()),
        (None, Some(p)) => {
            std::fs::read_to_string(p).map_err(|e| fail(format!("{}: {e}", p.display())))
        }
        (None, None) => Err(Failure {
            message: "a formula is required (--formula or --formula-file)".into(),
            exit_code: 2,
        }),
    }
}

fn parse_on(m: &FiniteStructure, text: &str) -> Result<Formula, Failure> {
    parse_formula(text, m.signature()).map_err(|e| fail(e.to_string()))
}

fn assignment(m: &FiniteStructure, pairs: &[String]) -> Result<milog::eval::Assignment, Failure> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let (var, point) = pair
            .split_once('=')
            .ok_or_else(|| fail(format!("bad assignment `{pair}`; expected var=point")))?;
        let id = m
            .point_id(point)
            .ok_or_else(|| fail(format!("unknown point `{point}`")))?;
        out.insert(var.to_string(), id);
    }
    Ok(out)
}

fn tuple_ids(m: &FiniteStructure, names: &[String]) -> Result<Vec<PointId>, Failure> {
    names
        .iter()
        .map(|n| {
            m.point_id(n)
                .ok_or_else(|| fail(format!("unknown point `{n}`")))
        })
        .collect()
}

fn run_command(cmd: Command) -> Result<Value, Failure> {
    match cmd {
        Command::Validate { structure } => {
            let text = std::fs::read_to_string(&structure)
                .map_err(|e| fail(format!("{}: {e}", structure.display())))?;
            match files::parse_structure_json(&text) {
                Ok(_) => Ok(json!({ "valid": true, "violations": [] })),
                Err(files::LoadError::Invalid(msg)) => {
                    let violations: Vec<&str> = msg.split("; ").collect();
                    Ok(json!({ "valid": false, "violations": violations }))
                }
                Err(e) => Err(fail(e.to_string())),
            }
        }
        Command::Eval {
            structure,
            formula,
            assign,
            budget,
        } => {
            let m = load(&structure)?;
            let f = parse_on(&m, &formula_text(&formula)?)?;
            let env = assignment(&m, &assign)?;
            let session = EvalSession::new(&m, budget).map_err(|e| fail(e.to_string()))?;
            let r = session.evaluate(&f, &env).map_err(|e| fail(e.to_string()))?;
            Ok(eval_result_json(&r))
        }
        Command::Satisfies {
            structure,
            formula,
            assign,
            budget,
        } => {
            let m = load(&structure)?;
            let f = parse_on(&m, &formula_text(&formula)?)?;
            let env = assignment(&m, &assign)?;
            let session = EvalSession::new(&m, budget).map_err(|e| fail(e.to_string()))?;
            match session.evaluate(&f, &env).map_err(|e| fail(e.to_string()))? {
                EvalResult::Exact(v) => Ok(json!({ "satisfies": v == milog::rational::int(0) })),
                EvalResult::Bounds { .. } => {
                    Err(fail("result is not exact; raise --budget or stay in the exact fragment"))
                }
            }
        }
        Command::Transform {
            pass,
            structure,
            formula,
            params,
            desc,
        } => {
            let sig = match &structure {
                Some(p) => load(p)?.signature().clone(),
                None => milog::signature::Signature::default(),
            };
            let parse = |text: &String| {
                parse_formula(text, &sig).map_err(|e| fail(e.to_string()))
            };
            let one = || -> Result<Formula, Failure> {
                match formula.as_slice() {
                    [f] => parse(f),
                    _ => Err(Failure {
                        message: format!("pass `{pass}` takes exactly one --formula"),
                        exit_code: 2,
                    }),
                }
            };
            let out = match pass.as_str() {
                "rho" => rho_eliminate(&one()?),
                "neg" => exact_negation(&one()?),
                "nneg" => approx_negation(&one()?),
                "or" => {
                    let items = formula
                        .iter()
                        .map(parse)
                        .collect::<Result<Vec<_>, _>>()?;
                    exact_disjunction(&Family::List(items))
                }
                "exists" => {
                    if params.is_empty() {
                        return Err(Failure {
                            message: "pass `exists` needs --params with the variables".into(),
                            exit_code: 2,
                        });
                    }
                    exact_exists(&one()?, &params)
                }
                "borel" => {
                    let d = desc.as_deref().ok_or_else(|| Failure {
                        message: "pass `borel` needs --desc".into(),
                        exit_code: 2,
                    })?;
                    let parsed = parse_baire_desc(d).map_err(|e| fail(e.to_string()))?;
                    let inputs = formula
                        .iter()
                        .map(parse)
                        .collect::<Result<Vec<_>, _>>()?;
                    borel_compile(&parsed, &inputs).map_err(|e| fail(e.to_string()))?
                }
                other => {
                    return Err(Failure {
                        message: format!(
                            "unknown pass `{other}`; expected rho|neg|nneg|or|exists|borel"
                        ),
                        exit_code: 2,
                    })
                }
            };
            Ok(json!({ "formula": print_formula(&out) }))
        }
        Command::Classify { structure, formula } => {
            let m = load(&structure)?;
            let f = parse_on(&m, &formula_text(&formula)?)?;
            let class = classify_fragment(m.signature(), &f);
            let report = lipschitz_bounds(m.signature(), &f);
            let mut bounds = Map::new();
            for (var, bound) in &report.0 {
                bounds.insert(var.clone(), Value::String(bound.to_string()));
            }
            Ok(json!({ "class": class.to_string(), "bounds": bounds }))
        }
        Command::Orbits { structure, params } => {
            let m = load(&structure)?;
            let tuple = tuple_ids(&m, &params)?;
            let orbit: Vec<Vec<String>> = m
                .orbit(&tuple)
                .into_iter()
                .map(|t| t.into_iter().map(|p| m.point_name(p).to_string()).collect())
                .collect();
            Ok(json!({ "orbit": orbit }))
        }
        Command::Theta {
            structure,
            params,
            cap,
        } => {
            let m = load(&structure)?;
            let tuple = tuple_ids(&m, &params)?;
            let cap = cap.unwrap_or_else(|| m.point_count().max(tuple.len()));
            let tables = BackAndForthTables::compute(&m, cap).map_err(|e| fail(e.to_string()))?;
            let theta = tables.theta(&tuple).map_err(|e| fail(e.to_string()))?;
            Ok(json!({
                "formula": print_formula(&theta),
                "stable_stage": tables.stable_stage(),
            }))
        }
        Command::Scott { structure } => {
            let m = load(&structure)?;
            let sigma = scott_sentence(&m).map_err(|e| fail(e.to_string()))?;
            Ok(json!({ "formula": print_formula(&sigma) }))
        }
        Command::Equiv {
            structure,
            structure2,
        } => {
            let m = load(&structure)?;
            let n = load(&structure2)?;
            let eq = check_elementary_equivalence(&m, &n).map_err(|e| fail(e.to_string()))?;
            Ok(json!({ "equivalent": eq }))
        }
        Command::Isomorphic {
            structure,
            structure2,
        } => {
            let m = load(&structure)?;
            let n = load(&structure2)?;
            Ok(json!({ "isomorphic": brute_force_isomorphic(&m, &n) }))
        }
        Command::Define {
            structure,
            predicate,
            grid,
            params,
        } => {
            let m = load(&structure)?;
            let table =
                files::load_predicate_table(&predicate, &m).map_err(|e| fail(e.to_string()))?;
            if params.is_empty() {
                let req = DefinabilityRequest {
                    structure: &m,
                    table: &table,
                    grid,
                };
                let phi = define_invariant_predicate(&req).map_err(|e| fail(e.to_string()))?;
                Ok(json!({ "formula": print_formula(&phi), "parameters": [] }))
            } else {
                let points = tuple_ids(&m, &params)?;
                let (phi, extended) = define_with_parameters(&m, &table, &points, grid)
                    .map_err(|e| fail(e.to_string()))?;
                let added: Vec<String> = extended
                    .signature()
                    .constants
                    .iter()
                    .filter(|c| !m.signature().constants.contains(c))
                    .cloned()
                    .collect();
                Ok(json!({ "formula": print_formula(&phi), "parameters": added }))
            }
        }
    }
}

/// Parses and runs one invocation. Never panics on user input; every
/// outcome is a JSON-serializable [`CommandResult`].
pub fn run(args: &[String]) -> CommandResult {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return CommandResult::error(e.to_string(), 2);
        }
    };
    match run_command(cli.command) {
        Ok(payload) => CommandResult::ok(payload),
        Err(f) => CommandResult::error(f.message, f.exit_code),
    }
}
