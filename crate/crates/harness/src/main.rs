use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dagmig_core::engine::{migrate, recover, FaultPoint, MigrationReport};
use dagmig_core::error::EngineError;
use dagmig_core::model::{MigrationType, NodeId};
use dagmig_core::psm::coverage;
use dagmig_core::store::Outcome;
use dagmig_harness::experiments::{continuity_report, cost_runs, rates_of, scaling_of};
use dagmig_harness::{audit, HarnessError, Lab};
use dagmig_synth::{Fixtures, GenConfig, DIASPORA};
use serde::Serialize;

/// Dependency-aware migration between the mini social applications.
#[derive(Parser)]
#[command(name = "dagmig", version)]
struct Cli {
    /// Lab state file shared by gen, migrate, audit and bags.
    #[arg(long, global = true, default_value = "dagmig-state.json")]
    state: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset into one application.
    Gen {
        #[arg(long, default_value = DIASPORA)]
        app: String,
        /// Generator config (JSON); missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start from an empty lab even if the state file exists.
        #[arg(long)]
        fresh: bool,
    },
    /// Application spec documents.
    Specs {
        #[command(subcommand)]
        cmd: SpecsCmd,
    },
    /// Schema mappings.
    Map {
        #[command(subcommand)]
        cmd: MapCmd,
    },
    /// Migrate one user or all users of an application.
    Migrate {
        #[arg(long = "type", default_value = "deletion")]
        mtype: MigrationType,
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
        /// Key of the user's root in the source application.
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        user: Option<i64>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Crash at a write-ahead log point (wal:N or wal-after:N), then recover.
        #[arg(long = "fault-inject")]
        fault: Option<FaultPoint>,
        #[arg(long)]
        json: bool,
    },
    /// Scan every application for anomalies.
    Audit {
        /// Exit with status 1 when anything is found.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a measurement workload and print its summary.
    Report {
        kind: ReportKind,
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Data bags of one user.
    Bags {
        #[command(subcommand)]
        cmd: BagsCmd,
    },
}

#[derive(Subcommand)]
enum SpecsCmd {
    /// Load and validate every spec document.
    Check {
        /// Directory of spec documents instead of the built-in fixtures.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MapCmd {
    /// Derive a route for every reachable application pair.
    Derive {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BagsCmd {
    List {
        #[arg(long)]
        app: String,
        #[arg(long)]
        user: i64,
    },
    /// Remove one entry and print it.
    Take {
        #[arg(long)]
        app: String,
        #[arg(long)]
        user: i64,
        /// Identity the data had when bagged, as app/type/key.
        #[arg(long)]
        origin: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Continuity,
    Scaling,
    Rates,
}

fn fixtures(dir: Option<&Path>) -> Result<Fixtures, HarnessError> {
    Ok(match dir {
        Some(d) => Fixtures::load_dir(d)?,
        None => Fixtures::builtin()?,
    })
}

fn open(state: &Path) -> Result<Lab, HarnessError> {
    if !state.exists() {
        return Err(HarnessError::Usage(format!(
            "no lab at {}; run `dagmig gen` first",
            state.display()
        )));
    }
    Lab::load(state, Fixtures::builtin()?)
}

fn print_json<T: Serialize>(v: &T) -> Result<(), HarnessError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| HarnessError::State(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn root_of(lab: &Lab, app: &str, key: i64) -> Result<NodeId, HarnessError> {
    let store = lab.store(app)?;
    Ok(NodeId::new(app, store.dag().root_type(), key))
}

fn parse_node(s: &str) -> Result<NodeId, HarnessError> {
    let mut parts = s.splitn(3, '/');
    let (Some(app), Some(ty), Some(key)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(HarnessError::Usage(format!("{s:?} is not app/type/key")));
    };
    let key = key
        .parse()
        .map_err(|_| HarnessError::Usage(format!("bad key in {s:?}")))?;
    Ok(NodeId::new(app, ty, key))
}

#[derive(Serialize)]
struct MigrationLine {
    user: NodeId,
    outcome: Outcome,
    migrated: u64,
    bagged: u64,
    displayed: u64,
    from_bags: u64,
    cost: u64,
    error: Option<String>,
}

impl From<&MigrationReport> for MigrationLine {
    fn from(r: &MigrationReport) -> Self {
        let c = &r.counts;
        MigrationLine {
            user: r.user.clone(),
            outcome: r.outcome,
            migrated: c.migrated,
            bagged: c.bagged_no_mapping + c.bagged_dangling_source + c.bagged_failed_validation,
            displayed: c.displayed,
            from_bags: c.from_bags,
            cost: r.costs.end,
            error: r.error.clone(),
        }
    }
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.cmd {
        Cmd::Gen {
            app,
            config,
            users,
            seed,
            fresh,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let body = std::fs::read(p).map_err(|e| HarnessError::Io(p.clone(), e))?;
                    serde_json::from_slice::<GenConfig>(&body)
                        .map_err(|e| HarnessError::Usage(format!("{}: {e}", p.display())))?
                }
                None => GenConfig::default(),
            };
            if let Some(u) = users {
                cfg.users = u;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut lab = if cli.state.exists() && !fresh {
                open(&cli.state)?
            } else {
                Lab::new()?
            };
            if lab.store(&app)?.count() > 0 {
                return Err(HarnessError::Usage(format!(
                    "{app} already holds data; use --fresh"
                )));
            }
            let ds = lab.populate(&app, &cfg)?;
            lab.save(&cli.state)?;
            println!("{app}: {} users, {} nodes", ds.users.len(), ds.total());
            for (ty, n) in &ds.counts {
                println!("  {ty:<14} {n}");
            }
            Ok(0)
        }
        Cmd::Specs {
            cmd: SpecsCmd::Check { dir },
        } => {
            let f = fixtures(dir.as_deref())?;
            for (app, dag) in &f.dags {
                println!(
                    "{app}: {} node types, root {}",
                    dag.node_types().len(),
                    dag.root_type()
                );
            }
            for m in &f.direct {
                println!(
                    "mapping {} -> {}: {} node maps",
                    m.from_app,
                    m.to_app,
                    m.node_maps.len()
                );
            }
            Ok(0)
        }
        Cmd::Map {
            cmd: MapCmd::Derive { dir },
        } => {
            let f = fixtures(dir.as_deref())?;
            for m in f.derived() {
                let path: Vec<String> = m.path().iter().map(ToString::to_string).collect();
                let cov = f.dags.get(&m.from_app).map(|d| coverage(&m, d).aggregate);
                println!(
                    "{} -> {}: {} (coverage {})",
                    m.from_app,
                    m.to_app,
                    path.join(" > "),
                    cov.map_or("n/a".to_owned(), |c| format!("{c:.3}"))
                );
            }
            Ok(0)
        }
        Cmd::Migrate {
            mtype,
            src,
            dst,
            user,
            all,
            workers,
            seed,
            fault,
            json,
        } => {
            let lab = open(&cli.state)?;
            let users = match user {
                Some(k) => vec![root_of(&lab, &src, k)?],
                None if all => lab.users(&src)?,
                None => return Err(HarnessError::Usage("give --user or --all".into())),
            };
            let mut lines = Vec::new();
            for u in users {
                let ctx = lab
                    .context(&u, &dst, mtype)?
                    .with_workers(workers)
                    .with_seed(seed)
                    .with_fault(fault);
                let line = match migrate(&lab.world, &ctx) {
                    Ok(r) => MigrationLine::from(&r),
                    Err(EngineError::Crash { seq }) => {
                        recover(&lab.world)?;
                        MigrationLine {
                            user: u.clone(),
                            outcome: Outcome::RolledBack,
                            migrated: 0,
                            bagged: 0,
                            displayed: 0,
                            from_bags: 0,
                            cost: 0,
                            error: Some(format!("crashed at write-ahead record {seq}, recovered")),
                        }
                    }
                    Err(e) => return Err(e.into()),
                };
                if !json {
                    let outcome = match line.outcome {
                        Outcome::Committed => "committed",
                        Outcome::RolledBack => "rolled_back",
                    };
                    println!(
                        "{} {outcome} migrated={} bagged={} displayed={} from_bags={} cost={}{}",
                        line.user,
                        line.migrated,
                        line.bagged,
                        line.displayed,
                        line.from_bags,
                        line.cost,
                        line.error
                            .as_ref()
                            .map(|e| format!(" ({e})"))
                            .unwrap_or_default()
                    );
                }
                lines.push(line);
            }
            if json {
                print_json(&lines)?;
            }
            lab.save(&cli.state)?;
            Ok(0)
        }
        Cmd::Audit { strict, json } => {
            let lab = open(&cli.state)?;
            let a = audit(&lab.world, &lab.baseline);
            if json {
                print_json(&a)?;
            } else {
                println!(
                    "{:<14} {:>8} {:>9} {:>9} {:>10} {:>10} {:>8}",
                    "app", "objects", "dangling", "data-loss", "ownership", "premature", "dangl%"
                );
                for x in &a.apps {
                    use dagmig_harness::Category::*;
                    println!(
                        "{:<14} {:>8} {:>9} {:>9} {:>10} {:>10} {:>8.2}",
                        x.app.to_string(),
                        x.total,
                        x.count(Dangling),
                        x.count(DataLoss),
                        x.count(OwnershipViolation),
                        x.count(PrematureDisplay),
                        x.dangling_pct()
                    );
                }
                for f in a.apps.iter().flat_map(|x| &x.findings).take(20) {
                    println!("  {} {}: {}", f.category, f.node, f.detail);
                }
            }
            Ok(if strict && !a.is_clean() { 1 } else { 0 })
        }
        Cmd::Report {
            kind,
            users,
            seed,
            json,
        } => {
            match kind {
                ReportKind::Continuity => {
                    let c = continuity_report(users, seed)?;
                    if json {
                        print_json(&c)?;
                    } else {
                        println!("{:>8} {:>10} {:>10}", "fraction", "aware", "naive+");
                        for i in 0..=10 {
                            let x = i as f64 / 10.0;
                            println!(
                                "{x:>8.1} {:>10.3} {:>10.3}",
                                c.aware.at(x),
                                c.naive_plus.at(x)
                            );
                        }
                        println!(
                            "median {:.3} vs {:.3}; dominates {}; tail {}",
                            c.aware_median, c.naive_plus_median, c.dominates, c.tail
                        );
                    }
                }
                ReportKind::Scaling => {
                    let s = scaling_of(&cost_runs(users, seed)?);
                    if json {
                        print_json(&s)?;
                    } else {
                        println!(
                            "{:<12} {:>4} {:>10} {:>12} {:>7} {:>10}",
                            "algorithm", "n", "slope", "intercept", "R2", "size span"
                        );
                        for r in &s {
                            match r.fit {
                                Some(f) => println!(
                                    "{:<12} {:>4} {:>10.3} {:>12.1} {:>7.4} {:>9.0}x",
                                    r.algorithm,
                                    f.n,
                                    f.slope,
                                    f.intercept,
                                    f.r2,
                                    r.span()
                                ),
                                None => println!("{:<12} no fit", r.algorithm),
                            }
                        }
                    }
                }
                ReportKind::Rates => {
                    let r = rates_of(&cost_runs(users, seed)?);
                    if json {
                        print_json(&r)?;
                    } else {
                        println!("deletion     {:>12} units", r.deletion_cost);
                        println!("independent  {:>12} units", r.independent_cost);
                        println!("validated    {:>12} units", r.validated_cost);
                        println!(
                            "ratio {:.2}, validation overhead {:.2}%",
                            r.ratio,
                            100.0 * r.overhead
                        );
                    }
                }
            }
            Ok(0)
        }
        Cmd::Bags { cmd } => match cmd {
            BagsCmd::List { app, user } => {
                let lab = open(&cli.state)?;
                let meta = lab.world.meta();
                let owner = meta.earliest(&root_of(&lab, &app, user)?);
                print_json(&meta.bag_list(&owner))?;
                Ok(0)
            }
            BagsCmd::Take { app, user, origin } => {
                let lab = open(&cli.state)?;
                let meta = lab.world.meta();
                let owner = meta.earliest(&root_of(&lab, &app, user)?);
                let entry = meta
                    .bag_take(&owner, &parse_node(&origin)?)
                    .map_err(|e| HarnessError::Usage(e.to_string()))?;
                print_json(&entry)?;
                lab.save(&cli.state)?;
                Ok(0)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("dagmig: {e}");
            ExitCode::from(match e {
                HarnessError::Usage(_) => 2,
                _ => 1,
            })
        }
    }
}
