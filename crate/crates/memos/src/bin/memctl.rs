//! Admin CLI over a local vault.
//!
//! Exit status: 0 success, 1 domain error, 2 usage or configuration error.

use std::collections::BTreeSet;
use std::io::{Read as _, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use memos::config::{Keys, ServiceConfig};
use memos::kernel::{GovernanceSpec, Kernel, KernelError, NewCube, RecallQuery, Session, UpdatePatch};
use memos::service::{AuditQuery, ErrorBody};
use memos::store::Visibility;
use memos::workload::{run_workload, WorkloadSpec};
use memos_core::{canon, AclEntry, AclSubject, Action, CubeId, PrincipalId, SemanticType, Sensitivity};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SensitivityArg {
    Public,
    Internal,
    Confidential,
    Restricted,
}

impl From<SensitivityArg> for Sensitivity {
    fn from(s: SensitivityArg) -> Self {
        match s {
            SensitivityArg::Public => Sensitivity::Public,
            SensitivityArg::Internal => Sensitivity::Internal,
            SensitivityArg::Confidential => Sensitivity::Confidential,
            SensitivityArg::Restricted => Sensitivity::Restricted,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "memctl", version, about = "Administer a MemOS vault")]
struct Cli {
    /// Vault directory (overrides the config file).
    #[arg(long, env = "MEMOS_VAULT", global = true)]
    vault: Option<PathBuf>,
    /// Service config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Acting principal.
    #[arg(long, env = "MEMOS_PRINCIPAL", default_value = "local", global = true)]
    principal: String,
    /// `canonical` prints canonical JSON, errors included.
    #[arg(long, value_enum, default_value = "text", global = true)]
    output: Output,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Create a plaintext cube.
    Create {
        text: String,
        #[arg(long = "type", default_value = "other")]
        semantic_type: String,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        partition: Option<String>,
        /// Let anyone read and schedule the cube.
        #[arg(long)]
        share: bool,
        #[arg(long, value_enum)]
        sensitivity: Option<SensitivityArg>,
        #[arg(long)]
        ttl_s: Option<u64>,
    },
    /// Show a cube, optionally at an older version.
    Get {
        id: CubeId,
        #[arg(long)]
        version: Option<u64>,
    },
    /// Rank readable cubes against a query.
    Recall {
        query: String,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(short, long)]
        k: Option<usize>,
        /// Tag expression over labels.
        #[arg(long)]
        expr: Option<String>,
        #[arg(long, default_value = "")]
        scope: String,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Write a new version of a cube.
    Update {
        id: CubeId,
        #[arg(long)]
        text: Option<String>,
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[arg(long = "type")]
        semantic_type: Option<String>,
    },
    /// Freeze (or --unfreeze) a cube against writes.
    Freeze {
        id: CubeId,
        #[arg(long)]
        unfreeze: bool,
    },
    /// Restore an earlier version as the new head.
    Rollback {
        id: CubeId,
        #[arg(long)]
        to: u64,
    },
    /// Move a cube to the archived state.
    Archive {
        id: CubeId,
    },
    /// Activate an imported cube.
    Activate {
        id: CubeId,
    },
    /// Apply the first matching transformation rule.
    Transform {
        id: CubeId,
    },
    /// Provenance chain of a cube.
    History {
        id: CubeId,
    },
    /// Write an archive of the given cubes (stdout unless --out).
    Dump {
        #[arg(required = true)]
        ids: Vec<CubeId>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Import an archive (stdin unless a file is given).
    Load {
        file: Option<PathBuf>,
        #[arg(long)]
        partition: Option<String>,
    },
    /// Publish a cube to a topic.
    Publish {
        id: CubeId,
        #[arg(long)]
        topic: String,
        #[arg(long)]
        public: bool,
    },
    /// Read a topic from an offset.
    Subscribe {
        #[arg(long)]
        topic: String,
        #[arg(long, default_value_t = 0)]
        since: u64,
    },
    /// Verify the audit chain.
    AuditVerify,
    /// Query the audit log.
    Audit {
        #[arg(long = "who")]
        who: Option<String>,
        #[arg(long)]
        action: Option<String>,
        #[arg(long)]
        since: Option<u64>,
        #[arg(long)]
        until: Option<u64>,
    },
    /// Run a request in the command grammar.
    Request {
        text: String,
    },
    /// Run a seeded workload against a fresh in-memory kernel.
    Workload {
        /// Spec file (TOML); flags override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cubes: Option<usize>,
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

enum Failure {
    Usage(String),
    Domain(KernelError),
    Other(String),
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        Failure::Domain(e)
    }
}

fn emit<T: Serialize>(out: Output, v: &T) {
    let text = match out {
        Output::Canonical => canon::encode_string(v),
        Output::Text => serde_json::to_string_pretty(v).expect("serializable"),
    };
    println!("{text}");
}

fn labels(ls: Vec<String>) -> BTreeSet<String> {
    ls.into_iter().filter(|l| !l.is_empty()).collect()
}

fn semantic(s: &str) -> Result<SemanticType, Failure> {
    s.parse().map_err(Failure::Usage)
}

fn config(cli: &Cli) -> Result<ServiceConfig, Failure> {
    let mut c = match &cli.config {
        Some(p) => ServiceConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = &cli.vault {
        c.vault.path = v.clone();
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = cli.output;
    let principal = PrincipalId::new(&cli.principal).map_err(|e| Failure::Usage(e.to_string()))?;
    let s = Session::new(principal);

    if let Cmd::Workload { spec, seed, cubes, requests, threads } = &cli.cmd {
        let mut w = match spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                toml::from_str::<WorkloadSpec>(&text).map_err(|e| Failure::Usage(e.to_string()))?
            }
            None => WorkloadSpec::default(),
        };
        w.seed = seed.unwrap_or(w.seed);
        w.num_cubes = cubes.unwrap_or(w.num_cubes);
        w.num_requests = requests.unwrap_or(w.num_requests);
        w.threads = threads.unwrap_or(w.threads);
        w.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        let kernel = Kernel::in_memory(w.kernel_config());
        let report = run_workload(&w, &kernel).map_err(|e| Failure::Usage(e.to_string()))?;
        emit(out, &report);
        return if report.invariants.all_hold() { Ok(()) } else { Err(Failure::Other("invariant violated".into())) };
    }

    let cfg = config(&cli)?;
    let kernel = cfg.open_kernel(&Keys::from_env()).map_err(|e| match e {
        memos::config::ConfigError::Kernel(k) => Failure::Domain(k),
        other => Failure::Usage(other.to_string()),
    })?;
    let k = &kernel;

    match cli.cmd {
        Cmd::Create { text, semantic_type, labels: ls, partition, share, sensitivity, ttl_s } => {
            let mut new = NewCube::text(text).typed(semantic(&semantic_type)?).labels(labels(ls));
            new.partition = partition;
            new.governance = GovernanceSpec {
                acl: if share { vec![AclEntry::new(AclSubject::Anyone, [Action::Read, Action::Schedule])] } else { vec![] },
                sensitivity: sensitivity.map(Into::into),
                ttl_s,
                ..GovernanceSpec::default()
            };
            let w = k.create(&s, &new)?;
            match out {
                Output::Text => println!("{}", w.id),
                Output::Canonical => emit(out, &w),
            }
        }
        Cmd::Get { id, version } => emit(out, &k.get(&s, id, version)?),
        Cmd::Recall { query, labels: ls, k: n, expr, scope, budget } => {
            let q = RecallQuery { text: query, labels: labels(ls), k: n, structural: expr, scope, budget };
            emit(out, &k.recall(&s, &q)?)
        }
        Cmd::Update { id, text, labels: ls, semantic_type } => {
            let patch = UpdatePatch {
                text,
                labels: ls.map(labels),
                semantic_type: semantic_type.as_deref().map(semantic).transpose()?,
            };
            emit(out, &k.update(&s, id, &patch)?)
        }
        Cmd::Freeze { id, unfreeze } => emit(out, &k.freeze(&s, id, unfreeze)?),
        Cmd::Rollback { id, to } => emit(out, &k.rollback(&s, id, to)?),
        Cmd::Archive { id } => emit(out, &k.archive(&s, id)?),
        Cmd::Activate { id } => emit(out, &k.activate(&s, id)?),
        Cmd::Transform { id } => emit(out, &k.transform(&s, id)?),
        Cmd::History { id } => emit(out, &k.provenance(&s, id)?),
        Cmd::Dump { ids, out: file } => {
            let bytes = k.dump(&s, &ids)?;
            match file {
                Some(p) => std::fs::write(&p, &bytes).map_err(|e| Failure::Other(e.to_string()))?,
                None => std::io::stdout().write_all(&bytes).map_err(|e| Failure::Other(e.to_string()))?,
            }
        }
        Cmd::Load { file, partition } => {
            let bytes = match file {
                Some(p) => std::fs::read(&p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
                None => {
                    let mut b = Vec::new();
                    std::io::stdin().read_to_end(&mut b).map_err(|e| Failure::Other(e.to_string()))?;
                    b
                }
            };
            emit(out, &k.load_archive(&s, &bytes, partition.as_deref())?)
        }
        Cmd::Publish { id, topic, public } => {
            let vis = if public { Visibility::Public } else { Visibility::Internal };
            emit(out, &k.publish(&s, id, &topic, vis)?)
        }
        Cmd::Subscribe { topic, since } => emit(out, &k.subscribe(&s, &topic, since)?),
        Cmd::AuditVerify => {
            let v = k.verify_audit();
            match out {
                Output::Text if v.ok => println!("OK ({} records)", v.records),
                Output::Text => println!("BROKEN at seq {}", v.first_bad.unwrap_or(0)),
                Output::Canonical => emit(out, &v),
            }
            if !v.ok {
                return Err(Failure::Domain(KernelError::AuditBroken(v.first_bad.unwrap_or(0))));
            }
        }
        Cmd::Audit { who, action, since, until } => {
            let q = AuditQuery { principal: who, action, since, until };
            let f = q.filter().map_err(Failure::Usage)?;
            emit(out, &k.logquery(&s, &f)?)
        }
        Cmd::Request { text } => emit(out, &k.request(&s, &text)?),
        Cmd::Serve { listen } => {
            let addr = listen.unwrap_or_else(|| cfg.listen.clone());
            let state = memos::service::AppState::from_config(kernel, &cfg);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("memctl: listening on {}", listener.local_addr()?);
                let stop = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                memos::service::serve(listener, state, stop).await
            })
            .map_err(|e| Failure::Other(e.to_string()))?;
        }
        Cmd::Workload { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.output;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("memctl: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            if out == Output::Canonical {
                println!("{}", canon::encode_string(&ErrorBody::of(&e)));
            }
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(1)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
