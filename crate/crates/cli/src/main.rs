use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use orion_core::fuzz::{
    evaluate_case, find_generated, fingerprint, run_configured, CampaignConfig, CampaignReport,
};
use orion_core::kb::{
    load_annotations, parse_reports, provenance_table, triage, ExclusionPolicy, KeywordTaxonomy, RootCauseMap,
};
use orion_core::rules::{catalog, Category, RuleId};
use orion_core::sim::SimCatalog;
use orion_core::store::{parse_records, SeedStore};
use orion_core::value::Source;

/// History-driven fuzzer for tensor-library APIs.
#[derive(Debug, Parser)]
#[command(name = "orion", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Add seed records (JSONL) to a seed store.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "seeds")]
        store: PathBuf,
        /// Tag every record with this source, replacing the one in the file.
        #[arg(long)]
        source: Option<Source>,
    },
    /// Run a fuzzing campaign and write its report.
    Fuzz {
        /// Campaign config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set num_iter=50` or `--set backend.runner=python3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated rule ids to enable.
        #[arg(long, value_delimiter = ',')]
        rules: Option<Vec<RuleId>>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
    },
    /// Print the rule catalog as JSON.
    Rules {
        #[arg(long)]
        category: Option<CategoryArg>,
    },
    /// Re-execute one case from a campaign report.
    Replay {
        case_id: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Classify and filter vulnerability reports (JSONL).
    ClassifyReports {
        reports: PathBuf,
        /// Keyword taxonomy JSON; the built-in one otherwise.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Exclusion policy JSON; the built-in one otherwise.
        #[arg(long)]
        exclusions: Option<PathBuf>,
        /// Root-cause annotations (`{"report id": "root-cause"}`); enables the provenance table.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Root cause to rule mapping JSON; the built-in one otherwise.
        #[arg(long)]
        rule_map: Option<PathBuf>,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate developer APIs of a Python source tree (needs the pyhooks package).
    EnumerateApis {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "ORION_PYTHON", default_value = "python3")]
        python: String,
    },
    /// Write the simulated target's seed records as JSONL.
    SimSeeds {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CategoryArg {
    Guided,
    Corner,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Ingest { paths, store, source } => ingest(&paths, &store, source),
        Cmd::Fuzz { config, overrides, rules, store, report } => {
            let mut cfg = campaign_config(config.as_deref(), &overrides)?;
            if let Some(rules) = rules {
                cfg.rules = rules.into_iter().collect();
            }
            if let Some(store) = store {
                cfg.store = store;
            }
            fuzz(&cfg, &report)
        }
        Cmd::Rules { category } => {
            let want = category.map(|c| match c {
                CategoryArg::Guided => Category::Guided,
                CategoryArg::Corner => Category::CornerCase,
            });
            let rows: Vec<_> = catalog().into_iter().filter(|r| want.is_none_or(|c| r.category == c)).collect();
            print_json(&rows)?;
            Ok(0)
        }
        Cmd::Replay { case_id, report } => replay(&case_id, &report),
        Cmd::ClassifyReports { reports, taxonomy, exclusions, annotations, rule_map, out } => {
            classify_reports(&reports, taxonomy, exclusions, annotations, rule_map, out)
        }
        Cmd::EnumerateApis { root, out, python } => enumerate_apis(&python, &root, &out),
        Cmd::SimSeeds { out } => {
            let mut buf = Vec::new();
            for r in SimCatalog::default().seed_catalog() {
                serde_json::to_writer(&mut buf, &r)?;
                buf.push(b'\n');
            }
            match out {
                Some(p) => fs::write(&p, buf).with_context(|| p.display().to_string())?,
                None => io::stdout().write_all(&buf)?,
            }
            Ok(0)
        }
    }
}

/// File, then `ORION_WORKDIR`, then `--set` overrides.
fn campaign_config(path: Option<&Path>, overrides: &[String]) -> Result<CampaignConfig> {
    let mut cfg = match path {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    if let Some(dir) = std::env::var_os("ORION_WORKDIR") {
        cfg.workdir = PathBuf::from(dir);
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not KEY=VALUE"))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ingest(paths: &[PathBuf], store: &Path, source: Option<Source>) -> Result<u8> {
    // Parse everything first so a bad line leaves the store untouched.
    let mut records = Vec::new();
    for p in paths {
        let f = File::open(p).with_context(|| p.display().to_string())?;
        let mut recs = parse_records(BufReader::new(f)).with_context(|| p.display().to_string())?;
        if let Some(s) = source {
            for r in &mut recs {
                r.source = s;
            }
        }
        records.extend(recs);
    }
    let mut store = SeedStore::open_or_create(store)?;
    let summary = store.ingest(records)?;
    println!("added {} records, skipped {} duplicates, {} apis in store", summary.added, summary.skipped, summary.apis);
    Ok(0)
}

fn fuzz(cfg: &CampaignConfig, report_path: &Path) -> Result<u8> {
    let report = run_configured(cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(report_path, json).with_context(|| report_path.display().to_string())?;
    print!("{}", report.summary_table());
    println!("report written to {}", report_path.display());
    Ok(report.exit_code() as u8)
}

#[derive(Serialize)]
struct ReplayResult<'a> {
    case_id: &'a str,
    api_name: &'a str,
    verdict: &'a orion_core::exec::Verdict,
    fingerprint: Option<String>,
    reproduced: Option<bool>,
}

fn replay(case_id: &str, report_path: &Path) -> Result<u8> {
    let text = fs::read_to_string(report_path).with_context(|| report_path.display().to_string())?;
    let report: CampaignReport =
        serde_json::from_str(&text).with_context(|| format!("{}: not a campaign report", report_path.display()))?;
    let mut cfg = report.config.clone();
    if let Some(dir) = std::env::var_os("ORION_WORKDIR") {
        cfg.workdir = PathBuf::from(dir);
    }
    let recorded = report.find_case(case_id);
    let case = match recorded {
        Some(f) => f.representative.clone(),
        None => {
            let store = SeedStore::open(&cfg.store)?;
            find_generated(&cfg, &store, case_id)?
                .ok_or_else(|| anyhow!("unknown case `{case_id}` in {}", report_path.display()))?
        }
    };
    let profile = cfg.resolve_profile()?;
    let backend = cfg.build_backend()?;
    let res = evaluate_case(&case, backend.as_ref(), &profile, &cfg.devices, cfg.tolerance);
    let fp = res.verdict.is_finding().then(|| fingerprint(&case.api_name, &res.verdict, res.top_frame.as_deref()));
    let reproduced = recorded.map(|f| Some(&f.fingerprint) == fp.as_ref());
    print_json(&ReplayResult {
        case_id,
        api_name: &case.api_name,
        verdict: &res.verdict,
        fingerprint: fp,
        reproduced,
    })?;
    if reproduced == Some(false) {
        bail!("verdict for `{case_id}` was not reproduced");
    }
    Ok(if res.verdict.is_finding() { 2 } else { 0 })
}

#[derive(Serialize)]
struct KbOutput {
    reports: Vec<orion_core::kb::TriagedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<std::collections::BTreeMap<String, Vec<String>>>,
}

fn classify_reports(
    reports: &Path,
    taxonomy: Option<PathBuf>,
    exclusions: Option<PathBuf>,
    annotations: Option<PathBuf>,
    rule_map: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<u8> {
    let f = File::open(reports).with_context(|| reports.display().to_string())?;
    let records = parse_reports(BufReader::new(f)).with_context(|| reports.display().to_string())?;
    let taxonomy = match taxonomy {
        Some(p) => KeywordTaxonomy::load(&p)?,
        None => KeywordTaxonomy::default(),
    };
    let policy: ExclusionPolicy = match exclusions {
        Some(p) => read_json(&p)?,
        None => ExclusionPolicy::default(),
    };
    let triaged = triage(&records, &taxonomy, &policy);
    let provenance = match annotations {
        Some(p) => {
            let ann = load_annotations(&p)?;
            let map: RootCauseMap = match rule_map {
                Some(m) => read_json(&m)?,
                None => RootCauseMap::default(),
            };
            let kept: BTreeSet<&str> =
                triaged.iter().filter(|t| t.dropped.is_none()).map(|t| t.id.as_str()).collect();
            let kept: Vec<_> = records.iter().filter(|r| kept.contains(r.id.as_str())).cloned().collect();
            Some(provenance_table(&kept, &ann, &map))
        }
        None => None,
    };
    let kept = triaged.iter().filter(|t| t.dropped.is_none()).count();
    let result = KbOutput { reports: triaged, provenance };
    match out {
        Some(p) => {
            fs::write(&p, serde_json::to_string_pretty(&result)?).with_context(|| p.display().to_string())?;
            println!("{} reports, {} kept; written to {}", records.len(), kept, p.display());
        }
        None => print_json(&result)?,
    }
    Ok(0)
}

fn enumerate_apis(python: &str, root: &Path, out: &Path) -> Result<u8> {
    let probe = Command::new(python).args(["-c", "import pyhooks"]).output();
    match probe {
        Ok(o) if o.status.success() => {}
        Ok(_) => bail!("the pyhooks package is not importable by `{python}`; install it to enumerate developer APIs"),
        Err(e) => bail!("cannot run `{python}`: {e}"),
    }
    let status = Command::new(python)
        .args(["-m", "pyhooks", "enumerate-apis", "--root"])
        .arg(root)
        .arg("--out")
        .arg(out)
        .status()
        .with_context(|| format!("running {python} -m pyhooks"))?;
    if !status.success() {
        bail!("pyhooks enumerate-apis failed ({status})");
    }
    Ok(0)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}
