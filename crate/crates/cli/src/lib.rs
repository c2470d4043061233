//! Command-line driver. Each mutating subcommand loads a document file,
//! applies one edit, writes the file back atomically and prints a one-line
//! summary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use valtree_core::report::score_section;
use valtree_core::suggest::{suggest_subattributes, DEFAULT_SUGGESTION_COUNT, DEFAULT_TOKEN_ENV};
use valtree_core::{
    apply_edit, build_report, export_table_csv, load, lock_document, new_decision,
    reflection_prompt, save, write_atomic, CellUpdate, CellValue, DecisionDocument, Direction,
    Edit, EditOutcome, ImportanceLevel, LeafScale, NodeId, ProviderConfig, Redaction,
};

#[derive(Debug, Parser)]
#[command(
    name = "valtree",
    version,
    about = "Build, score and export value-tree decisions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a new decision document.
    Init(InitArgs),
    /// Inspect and edit the value tree.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Exclude or re-include alternatives.
    #[command(subcommand)]
    Alt(AltCommand),
    /// Write grid cells.
    #[command(subcommand)]
    Cell(CellCommand),
    /// Reconcile managed tables with the value tree.
    Sync(FileArg),
    /// Print the ranking.
    Score(ReportArgs),
    /// Print the full decision report.
    Report(ReportArgs),
    /// Suggest sub-attributes for a node.
    Suggest(SuggestArgs),
    /// Write managed tables as CSV.
    Export(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct FileArg {
    file: PathBuf,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long)]
    goal: String,
    #[arg(long = "alt", required = true, num_args = 1..)]
    alternatives: Vec<String>,
    #[arg(long = "attr", required = true, num_args = 1..)]
    attributes: Vec<String>,
    #[arg(long)]
    scoring_goal: String,
    /// Replace an existing file.
    #[arg(long)]
    force: bool,
    file: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TreeCommand {
    /// Print the tree outline.
    Show(FileArg),
    /// Add a leaf under a node.
    Add {
        file: PathBuf,
        #[arg(long)]
        parent: String,
        #[arg(long)]
        name: String,
    },
    /// Remove a node and its subtree.
    Rm {
        file: PathBuf,
        #[arg(long)]
        node: String,
    },
    /// Restore a removed subtree by tombstone index.
    Restore {
        file: PathBuf,
        #[arg(long)]
        tombstone: usize,
    },
    /// Rename a node; its table header follows on the next sync
    Rename {
        file: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long)]
        name: String,
    },
    /// Set importance to x1, x2, x4 or x10, or step to the next level.
    Importance {
        file: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long, conflicts_with = "cycle", required_unless_present = "cycle")]
        level: Option<String>,
        #[arg(long)]
        cycle: bool,
    },
    /// Set a node's note, or print its reflection prompt and note.
    Note {
        file: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long)]
        text: Option<String>,
    },
    /// Set or clear the measurement scale of a leaf.
    Scale {
        file: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long, requires = "max", allow_negative_numbers = true)]
        min: Option<f64>,
        #[arg(long, requires = "min", allow_negative_numbers = true)]
        max: Option<f64>,
        #[arg(long, default_value = "higher_is_better")]
        direction: String,
        #[arg(long, conflicts_with_all = ["min", "max"])]
        clear: bool,
    },
}

#[derive(Debug, Subcommand)]
enum AltCommand {
    Exclude {
        file: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        rationale: String,
    },
    Include {
        file: PathBuf,
        #[arg(long)]
        label: String,
    },
}

#[derive(Debug, Subcommand)]
enum CellCommand {
    /// Set one cell to a number, text, X marks, or empty.
    ///
    /// Address it by grid position (--row, --col) or by table, alternative
    /// and child (--table, --alt, --child).
    Set {
        file: PathBuf,
        #[arg(long, requires = "col", required_unless_present = "table")]
        row: Option<u32>,
        #[arg(long, requires = "row")]
        col: Option<u32>,
        /// Path of the node owning the table
        #[arg(long, requires_all = ["alt", "child"], conflicts_with_all = ["row", "col"])]
        table: Option<String>,
        #[arg(long)]
        alt: Option<String>,
        /// Name of the table's child column
        #[arg(long)]
        child: Option<String>,
        #[arg(long, allow_hyphen_values = true, required_unless_present_any = ["mark", "clear"])]
        value: Option<String>,
        #[arg(long, conflicts_with_all = ["value", "clear"])]
        mark: Option<u32>,
        #[arg(long, conflicts_with = "value")]
        clear: bool,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    file: PathBuf,
    /// full, bands or ranks
    #[arg(long, default_value = "bands")]
    redaction: String,
    /// Write to this file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// Keyword corpus file for the static provider.
    #[arg(long, conflicts_with = "endpoint")]
    corpus: Option<PathBuf>,
    /// Completion endpoint URL for the remote provider.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the endpoint's bearer token.
    #[arg(long, default_value = DEFAULT_TOKEN_ENV)]
    token_env: String,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
}

impl ProviderArgs {
    fn config(&self) -> ProviderConfig {
        match &self.endpoint {
            Some(endpoint) => ProviderConfig::RemoteCompletion {
                endpoint: endpoint.clone(),
                token_env: Some(self.token_env.clone()),
                timeout_ms: self.timeout_ms,
            },
            None => ProviderConfig::StaticCorpus {
                path: self.corpus.clone(),
            },
        }
    }
}

#[derive(Debug, Args)]
struct SuggestArgs {
    file: PathBuf,
    #[arg(long)]
    node: String,
    #[arg(short, long, default_value_t = DEFAULT_SUGGESTION_COUNT)]
    k: usize,
    /// Add this suggestion as a child instead of listing.
    #[arg(long)]
    accept: Option<String>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    file: PathBuf,
    /// Table to print; all tables go to --out-dir when omitted.
    #[arg(long, conflicts_with = "out_dir")]
    node: Option<String>,
    /// Directory receiving one CSV per managed table.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    #[arg(long)]
    storage: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code: 0 on success, 1 on a failed operation,
/// 2 on malformed arguments.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn read_doc(path: &Path) -> Result<DecisionDocument> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    load(&bytes).with_context(|| format!("cannot load {}", path.display()))
}

/// Loads, edits and saves `path` under its sidecar lock.
fn mutate<F>(path: &Path, f: F) -> Result<(DecisionDocument, EditOutcome)>
where
    F: FnOnce(&DecisionDocument) -> Result<Edit>,
{
    let _lock = lock_document(path)?;
    let mut doc = read_doc(path)?;
    let edit = f(&doc)?;
    let outcome = apply_edit(&mut doc, &edit)?;
    write_atomic(path, &save(&doc)).with_context(|| format!("cannot write {}", path.display()))?;
    Ok((doc, outcome))
}

fn node_at(doc: &DecisionDocument, path: &str) -> Result<NodeId> {
    Ok(doc.tree.resolve_path(path)?)
}

fn table_cell(doc: &DecisionDocument, table: &str, alt: &str, child: &str) -> Result<(u32, u32)> {
    let node = node_at(doc, table)?;
    let managed = doc
        .table_for(node)
        .ok_or_else(|| anyhow!("{table:?} has no table; run sync first"))?;
    let index = doc
        .alternatives
        .iter()
        .position(|a| a.label == alt)
        .ok_or_else(|| anyhow!("unknown alternative {alt:?}"))?;
    let col = doc
        .tree
        .child_named(node, child)
        .and_then(|c| managed.column_of(c))
        .ok_or_else(|| anyhow!("{table:?} has no column {child:?}; run sync after adding it"))?;
    Ok((managed.row_of(index), col))
}

fn name_of(doc: &DecisionDocument, node: NodeId) -> String {
    doc.tree
        .get(node)
        .map(|n| n.name.clone())
        .unwrap_or_default()
}

fn parse_redaction(raw: &str) -> Result<Redaction> {
    Ok(raw.parse()?)
}

fn cell_value(value: Option<String>, mark: Option<u32>) -> CellValue {
    match (value, mark) {
        (_, Some(k)) => CellValue::Mark(k),
        (Some(v), None) if !v.is_empty() && v.chars().all(|c| c == 'X' || c == 'x') => {
            CellValue::Mark(v.chars().count() as u32)
        }
        (Some(v), None) => CellValue::parse_input(&v),
        (None, None) => CellValue::Empty,
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Init(a) => init(a, out),
        Command::Tree(t) => tree(t, out),
        Command::Alt(AltCommand::Exclude {
            file,
            label,
            rationale,
        }) => {
            let (_, o) = mutate(&file, |_| {
                Ok(Edit::ExcludeAlternative {
                    label: label.clone(),
                    rationale: rationale.clone(),
                })
            })?;
            writeln!(out, "excluded {label:?} (version {})", o.version)?;
            Ok(())
        }
        Command::Alt(AltCommand::Include { file, label }) => {
            let (_, o) = mutate(&file, |_| {
                Ok(Edit::IncludeAlternative {
                    label: label.clone(),
                })
            })?;
            writeln!(out, "included {label:?} (version {})", o.version)?;
            Ok(())
        }
        Command::Cell(CellCommand::Set {
            file,
            row,
            col,
            table,
            alt,
            child,
            value,
            mark,
            clear: _,
        }) => {
            let value = cell_value(value, mark);
            let shown = value.display_text();
            let (mut row, mut col) = (row.unwrap_or(0), col.unwrap_or(0));
            let (_, o) = mutate(&file, |doc| {
                if let (Some(table), Some(alt), Some(child)) = (&table, &alt, &child) {
                    (row, col) = table_cell(doc, table, alt, child)?;
                }
                Ok(Edit::SetCells {
                    cells: vec![CellUpdate { row, col, value }],
                })
            })?;
            writeln!(
                out,
                "set ({row}, {col}) to {shown:?} (version {})",
                o.version
            )?;
            Ok(())
        }
        Command::Sync(FileArg { file }) => {
            let (_, o) = mutate(&file, |_| Ok(Edit::Sync))?;
            let report = o.sync_report.unwrap_or_default();
            writeln!(out, "synced (version {}): {report}", o.version)?;
            Ok(())
        }
        Command::Score(a) => {
            let doc = read_doc(&a.file)?;
            let report = build_report(&doc, parse_redaction(&a.redaction)?)?;
            emit(score_section(&report.text), a.output.as_deref(), out)
        }
        Command::Report(a) => {
            let doc = read_doc(&a.file)?;
            let report = build_report(&doc, parse_redaction(&a.redaction)?)?;
            emit(&report.text, a.output.as_deref(), out)
        }
        Command::Suggest(a) => suggest(a, out),
        Command::Export(a) => export(a, out),
        Command::Serve(a) => serve(a, out),
    }
}

fn emit(text: &str, output: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match output {
        Some(path) => {
            write_atomic(path, text.as_bytes())
                .with_context(|| format!("cannot write {}", path.display()))?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn init(a: InitArgs, out: &mut dyn Write) -> Result<()> {
    if a.file.exists() && !a.force {
        bail!(
            "{} already exists (use --force to replace it)",
            a.file.display()
        );
    }
    let doc = new_decision(&a.goal, &a.alternatives, &a.attributes, &a.scoring_goal)?;
    let _lock = lock_document(&a.file)?;
    write_atomic(&a.file, &save(&doc))
        .with_context(|| format!("cannot write {}", a.file.display()))?;
    writeln!(
        out,
        "created {}: {} alternatives, {} attributes (version {})",
        a.file.display(),
        doc.alternatives.len(),
        a.attributes.len(),
        doc.version
    )?;
    Ok(())
}

fn tree(t: TreeCommand, out: &mut dyn Write) -> Result<()> {
    match t {
        TreeCommand::Show(FileArg { file }) => {
            let doc = read_doc(&file)?;
            out.write_all(doc.tree.outline().as_bytes())?;
        }
        TreeCommand::Add { file, parent, name } => {
            let mut parent_id = None;
            let (doc, o) = mutate(&file, |doc| {
                let p = node_at(doc, &parent)?;
                parent_id = Some(p);
                Ok(Edit::AddChild {
                    parent: p,
                    name: name.clone(),
                })
            })?;
            let parent_name = parent_id.map(|p| name_of(&doc, p)).unwrap_or_default();
            writeln!(
                out,
                "added {name:?} under {parent_name:?} (version {})",
                o.version
            )?;
        }
        TreeCommand::Rm { file, node } => {
            let mut removed = String::new();
            let (_, o) = mutate(&file, |doc| {
                let n = node_at(doc, &node)?;
                removed = name_of(doc, n);
                Ok(Edit::RemoveNode { node: n })
            })?;
            let index = o.tombstone.unwrap_or_default();
            writeln!(
                out,
                "removed {removed:?} as tombstone {index} (version {})",
                o.version
            )?;
        }
        TreeCommand::Restore { file, tombstone } => {
            let (doc, o) = mutate(&file, |_| Ok(Edit::RestoreTombstone { index: tombstone }))?;
            let name = o.node.map(|n| name_of(&doc, n)).unwrap_or_default();
            writeln!(out, "restored {name:?} (version {})", o.version)?;
        }
        TreeCommand::Rename { file, node, name } => {
            let mut old = String::new();
            let (_, o) = mutate(&file, |doc| {
                let n = node_at(doc, &node)?;
                old = name_of(doc, n);
                Ok(Edit::RenameNode {
                    node: n,
                    name: name.clone(),
                })
            })?;
            writeln!(out, "renamed {old:?} to {name:?} (version {})", o.version)?;
        }
        TreeCommand::Importance {
            file,
            node,
            level,
            cycle,
        } => {
            let mut chosen = ImportanceLevel::X1;
            let (doc, o) = mutate(&file, |doc| {
                let n = node_at(doc, &node)?;
                chosen = match &level {
                    Some(l) => l.parse()?,
                    None if cycle => doc.tree.node(n)?.importance.cycle(),
                    None => bail!("--level or --cycle is required"),
                };
                Ok(Edit::SetImportance {
                    node: n,
                    level: chosen,
                })
            })?;
            let name = doc
                .tree
                .resolve_path(&node)
                .map(|n| name_of(&doc, n))
                .unwrap_or(node);
            writeln!(
                out,
                "set importance of {name:?} to {chosen} (version {})",
                o.version
            )?;
        }
        TreeCommand::Note {
            file,
            node,
            text: None,
        } => {
            let doc = read_doc(&file)?;
            let n = node_at(&doc, &node)?;
            writeln!(out, "{}", reflection_prompt(&doc.tree, n)?)?;
            let note = &doc.tree.node(n)?.note;
            if !note.is_empty() {
                writeln!(out)?;
                writeln!(out, "{note}")?;
            }
        }
        TreeCommand::Note {
            file,
            node,
            text: Some(text),
        } => {
            let mut name = String::new();
            let (_, o) = mutate(&file, |doc| {
                let n = node_at(doc, &node)?;
                name = name_of(doc, n);
                Ok(Edit::SetNote {
                    node: n,
                    text: text.clone(),
                })
            })?;
            writeln!(out, "updated note of {name:?} (version {})", o.version)?;
        }
        TreeCommand::Scale {
            file,
            node,
            min,
            max,
            direction,
            clear,
        } => {
            let scale = match (min, max, clear) {
                (Some(min), Some(max), false) => {
                    Some(LeafScale::new(min, max, direction.parse::<Direction>()?)?)
                }
                (None, None, true) => None,
                _ => bail!("give --min and --max, or --clear"),
            };
            let mut name = String::new();
            let (_, o) = mutate(&file, |doc| {
                let n = node_at(doc, &node)?;
                name = name_of(doc, n);
                Ok(Edit::SetLeafScale { node: n, scale })
            })?;
            match scale {
                Some(s) => writeln!(
                    out,
                    "scale of {name:?} is now [{}, {}] (version {})",
                    s.min, s.max, o.version
                )?,
                None => writeln!(
                    out,
                    "scale of {name:?} reset to default (version {})",
                    o.version
                )?,
            }
        }
    }
    Ok(())
}

fn suggest(a: SuggestArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(name) = a.accept {
        let mut parent = String::new();
        let (_, o) = mutate(&a.file, |doc| {
            let n = node_at(doc, &a.node)?;
            parent = name_of(doc, n);
            Ok(Edit::AcceptSuggestion {
                node: n,
                name: name.clone(),
            })
        })?;
        writeln!(
            out,
            "added {name:?} under {parent:?} (version {})",
            o.version
        )?;
        return Ok(());
    }
    let doc = read_doc(&a.file)?;
    let node = node_at(&doc, &a.node)?;
    let provider = a.provider.config().build()?;
    let candidates = suggest_subattributes(provider.as_ref(), &doc, node, a.k)?;
    if candidates.is_empty() {
        writeln!(out, "no suggestions")?;
    }
    for c in candidates {
        writeln!(out, "{c}")?;
    }
    Ok(())
}

fn export(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let doc = read_doc(&a.file)?;
    match a.out_dir {
        None => {
            let node = match &a.node {
                Some(p) => node_at(&doc, p)?,
                None => doc.tree.root_id,
            };
            out.write_all(export_table_csv(&doc, node)?.as_bytes())?;
        }
        Some(dir) => {
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
            let tables = valtree_core::export_tables_csv(&doc)?;
            for (node, csv) in &tables {
                let path = dir.join(format!("{}.csv", csv_file_stem(&doc, *node)));
                write_atomic(&path, csv.as_bytes())
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            writeln!(out, "wrote {} table(s) to {}", tables.len(), dir.display())?;
        }
    }
    Ok(())
}

/// `<id>-<name>` with anything but ASCII alphanumerics folded to `-`.
fn csv_file_stem(doc: &DecisionDocument, node: NodeId) -> String {
    let name: String = name_of(doc, node)
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    let name = name
        .split('-')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-");
    format!("{}-{name}", node.0)
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let config = valtree_service::ServiceConfig {
            bind: a.bind,
            storage_dir: a.storage,
            provider: a.provider.config(),
        };
        let running = valtree_service::serve(config).await?;
        writeln!(out, "listening on {}", running.url())?;
        out.flush()?;
        running.wait().await?;
        Ok(())
    })
}
