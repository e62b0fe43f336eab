//! Command-line front end: synthetic scenario generation plus the staged
//! analysis pipeline (filter, users, histories, stats, surfaces, homes,
//! hotspots, temporal, flows, comparisons).
//!
//! Exit codes: 0 ok, 2 config/input error, 3 data error, 4 resource limit.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eventflow::error::{Error, Result};
use eventflow::geo::Projection;
use eventflow::inference::{agreement_rate, match_profiles, write_profile_matches_csv, Gazetteer};
use eventflow::ingest::{filter_event_records, history_stats, select_event_users};
use eventflow::pipeline::{
    analysis_grid, compute_estimates, event_filter_spec, fetch_all_histories, load_inputs,
    run_pipeline, write_user_surfaces, Inputs, PipelineConfig,
};
use eventflow::stats::{count_by_zone, gi_star, temporal_histogram, Adjacency};
use eventflow::synth::{generate, ScenarioSpec};

#[derive(Parser)]
#[command(
    name = "eventflow",
    version,
    about = "Movement dynamics around large-scale events from georeferenced records"
)]
struct Cli {
    /// Pipeline config file (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker thread cap; 0 = all cores. Outputs are identical either way.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed recorded in manifests and used by synth.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic record store plus ground truth from a scenario
    /// spec file.
    Synth {
        /// Scenario spec file (key=value lines).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Write the event-filtered records (filtered.ndjson).
    Filter,
    /// Write the corridor user list (users.csv).
    Users,
    /// Write capped per-user histories (histories.ndjson).
    Histories,
    /// Write per-user history statistics with aggregates
    /// (history_stats.csv).
    Stats,
    /// Write fixed- and variable-bandwidth rasters for one user.
    Surface {
        /// User id present in the record store.
        #[arg(long)]
        user: String,
    },
    /// Write home estimates (homes.csv).
    InferHome,
    /// Write raw and population-normalized hotspot tables.
    Hotspot,
    /// Write the local-time histogram (temporal.csv).
    Temporal,
    /// Write per-destination flow tables (flows_<dest>.csv).
    Flows,
    /// Run the full pipeline including the baseline comparison
    /// (comparison_<dest>.csv); requires baseline_store and
    /// baseline_window_* in the config.
    CompareFlows,
    /// Match profile locations against home estimates
    /// (profile_matches.csv, agreement.txt); requires gazetteer and
    /// profiles in the config.
    ValidateProfiles,
    /// Execute every stage and write the run manifest.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this subcommand".into()))?;
    let mut config = PipelineConfig::from_file(path)?;
    if let Some(out_dir) = &cli.out_dir {
        config.out_dir = out_dir.clone();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn ensure_out_dir(config: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec } => {
            let mut scenario = ScenarioSpec::from_file(spec)?;
            if let Some(seed) = cli.seed {
                scenario.seed = seed;
            }
            let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("synth_out"));
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let threads = cli.threads.unwrap_or(1);
            let (store, truth) = in_pool(threads, || generate(&scenario))?;
            let store_path = out_dir.join("store.ndjson");
            store.write_ndjson(&store_path)?;
            let truth_path = out_dir.join("ground_truth.csv");
            let file = std::fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
            truth.write_csv(file)?;
            println!(
                "wrote {} records for {} users to {}",
                store.len(),
                truth.users.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Run => {
            let config = load_config(&cli)?;
            let summary = run_pipeline(&config)?;
            println!(
                "run complete: {} event records, {} users, {} homes determined ({})",
                summary.filtered_records,
                summary.event_users,
                summary.homes_determined,
                config.out_dir.display()
            );
            Ok(())
        }
        Command::CompareFlows => {
            let config = load_config(&cli)?;
            if config.baseline_store.is_none() || config.baseline_window.is_none() {
                return Err(Error::Config(
                    "compare-flows requires baseline_store, baseline_window_start, and baseline_window_end".into(),
                ));
            }
            if config.destinations.is_empty() {
                return Err(Error::Config("compare-flows requires destinations".into()));
            }
            let summary = run_pipeline(&config)?;
            println!(
                "comparisons written for {} destinations ({})",
                summary.flows.len(),
                config.out_dir.display()
            );
            Ok(())
        }
        Command::Filter => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let spec = event_filter_spec(&config)?;
            let filtered: Vec<_> = filter_event_records(&inputs.store, &spec).collect();
            let mut out = String::new();
            for rec in &filtered {
                out.push_str(&eventflow::ingest::record_to_json_line(rec));
                out.push('\n');
            }
            let path = config.out_dir.join("filtered.ndjson");
            std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
            println!(
                "filtered {} of {} records ({} malformed lines skipped)",
                filtered.len(),
                inputs.store.len(),
                inputs.store.malformed_lines()
            );
            Ok(())
        }
        Command::Users => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let users = select_users(&config, &inputs)?;
            let mut out = String::from("user_id\n");
            for u in &users {
                out.push_str(u);
                out.push('\n');
            }
            let path = config.out_dir.join("users.csv");
            std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
            println!("{} event users inside the corridor", users.len());
            Ok(())
        }
        Command::Histories => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let users = select_users(&config, &inputs)?;
            let histories = fetch_all_histories(&inputs.store, &users, config.history_cap)?;
            let mut out = String::new();
            for records in histories.values() {
                for rec in records {
                    out.push_str(&eventflow::ingest::record_to_json_line(rec));
                    out.push('\n');
                }
            }
            let path = config.out_dir.join("histories.ndjson");
            std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
            let total: usize = histories.values().map(|h| h.len()).sum();
            println!("fetched {} history records for {} users", total, histories.len());
            Ok(())
        }
        Command::Stats => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let users = select_users(&config, &inputs)?;
            let histories = fetch_all_histories(&inputs.store, &users, config.history_cap)?;
            let (per_user, aggregate) = history_stats(&histories);
            let path = config.out_dir.join("history_stats.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            eventflow::ingest::write_history_stats_csv(&per_user, aggregate.as_ref(), file)?;
            println!("history stats written for {} users", per_user.len());
            Ok(())
        }
        Command::Surface { user } => {
            let config = load_config(&cli)?;
            let inputs = load_inputs(&config)?;
            let threads = config.threads;
            let user = user.clone();
            let (fixed, vb) =
                in_pool(threads, move || write_user_surfaces(&config, &inputs, &user))?;
            println!("wrote {} and {}", fixed.display(), vb.display());
            Ok(())
        }
        Command::InferHome => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let estimates = in_pool(config.threads, || compute_home_estimates(&config, &inputs))?;
            let path = config.out_dir.join("homes.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            eventflow::inference::write_home_estimates_csv(&estimates, file)?;
            let determined = estimates.iter().filter(|e| e.region_id.is_some()).count();
            println!("{} of {} homes determined", determined, estimates.len());
            Ok(())
        }
        Command::Hotspot => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let spec = event_filter_spec(&config)?;
            let filtered: Vec<_> = filter_event_records(&inputs.store, &spec).collect();
            let counts = count_by_zone(
                filtered.iter().copied(),
                &inputs.regions,
                config.hotspot_max_scale,
            );
            let adjacency = Adjacency::from_regions(
                &inputs.regions,
                eventflow::pipeline::CONTIGUITY_SNAP_DEG,
            );
            for (use_rate, name) in [(false, "hotspots_raw.csv"), (true, "hotspots_rate.csv")] {
                let result = gi_star(&counts, &adjacency, use_rate)?;
                let path = config.out_dir.join(name);
                let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                eventflow::stats::write_hotspots_csv(&result, file)?;
            }
            println!(
                "hotspots written for {} zones ({} residual, {} excluded as coarse)",
                counts.zones.len(),
                counts.residual,
                counts.excluded_coarse
            );
            Ok(())
        }
        Command::Temporal => {
            let config = load_config(&cli)?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let spec = event_filter_spec(&config)?;
            let filtered: Vec<_> = filter_event_records(&inputs.store, &spec).collect();
            let hist = temporal_histogram(
                filtered.iter().copied(),
                &inputs.corridor,
                &inputs.regions,
                config.temporal_day_range(),
            );
            let path = config.out_dir.join("temporal.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            eventflow::stats::write_temporal_csv(&hist, file)?;
            println!(
                "{} records binned ({} longitude-rule fallbacks)",
                hist.total_binned, hist.offset_fallbacks
            );
            Ok(())
        }
        Command::Flows => {
            let config = load_config(&cli)?;
            if config.destinations.is_empty() {
                return Err(Error::Config("flows requires destinations in the config".into()));
            }
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let estimates = in_pool(config.threads, || compute_home_estimates(&config, &inputs))?;
            let by_user: BTreeMap<&str, &eventflow::inference::HomeEstimate> =
                estimates.iter().map(|e| (e.user_id.as_str(), e)).collect();
            let spec = event_filter_spec(&config)?;
            let filtered: Vec<_> = filter_event_records(&inputs.store, &spec).collect();
            let users = select_event_users(filtered.iter().copied(), &inputs.corridor);
            for dest_id in &config.destinations {
                let dest = eventflow::geo::region_by_id(&inputs.regions, dest_id)
                    .ok_or_else(|| Error::Config(format!("unknown destination region {dest_id:?}")))?;
                let observed: std::collections::BTreeSet<&str> = filtered
                    .iter()
                    .filter(|r| {
                        users.contains(&r.user_id)
                            && dest.contains_latlon(r.georef.representative())
                    })
                    .map(|r| r.user_id.as_str())
                    .collect();
                let dest_estimates: Vec<eventflow::inference::HomeEstimate> = observed
                    .iter()
                    .filter_map(|u| by_user.get(u).copied().cloned())
                    .collect();
                let table =
                    eventflow::flows::build_flow_table(&dest_estimates, dest_id, &inputs.regions)?;
                let path = config.out_dir.join(format!("flows_{dest_id}.csv"));
                let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                eventflow::flows::write_flow_csv(&table, file)?;
                println!(
                    "{dest_id}: {} origins from {} users",
                    table.rows.len(),
                    table.total_users
                );
            }
            Ok(())
        }
        Command::ValidateProfiles => {
            let config = load_config(&cli)?;
            let gazetteer_path = config.gazetteer.clone().ok_or_else(|| {
                Error::Config("validate-profiles requires gazetteer in the config".into())
            })?;
            let profiles_path = config.profiles.clone().ok_or_else(|| {
                Error::Config("validate-profiles requires profiles in the config".into())
            })?;
            ensure_out_dir(&config)?;
            let inputs = load_inputs(&config)?;
            let gazetteer = Gazetteer::from_csv_path(&gazetteer_path)?;
            let profiles = load_profiles(&profiles_path)?;
            let estimates = in_pool(config.threads, || compute_home_estimates(&config, &inputs))?;
            let matches = match_profiles(&profiles, &estimates, &gazetteer);
            let path = config.out_dir.join("profile_matches.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_profile_matches_csv(&matches, file)?;
            let rate = agreement_rate(&estimates, &matches);
            let text = match rate {
                Some(r) => format!("agreement_rate = {r}\n"),
                None => "agreement_rate = no-data\n".to_string(),
            };
            let path = config.out_dir.join("agreement.txt");
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn select_users(
    config: &PipelineConfig,
    inputs: &Inputs,
) -> Result<std::collections::BTreeSet<String>> {
    let spec = event_filter_spec(config)?;
    let filtered: Vec<_> = filter_event_records(&inputs.store, &spec).collect();
    let users = select_event_users(filtered.iter().copied(), &inputs.corridor);
    if users.is_empty() {
        return Err(Error::Data("no event users inside the corridor".into()));
    }
    Ok(users)
}

fn compute_home_estimates(
    config: &PipelineConfig,
    inputs: &Inputs,
) -> Result<Vec<eventflow::inference::HomeEstimate>> {
    let spec = event_filter_spec(config)?;
    let filtered: Vec<_> = filter_event_records(&inputs.store, &spec).collect();
    let users = select_event_users(filtered.iter().copied(), &inputs.corridor);
    if users.is_empty() {
        return Err(Error::Data("no event users inside the corridor".into()));
    }
    let histories = fetch_all_histories(&inputs.store, &users, config.history_cap)?;
    let proj = Projection::centered_on_records(filtered.iter().copied())?;
    let (grid, mask) = analysis_grid(&inputs.regions, &proj, config.grid_max_dim)?;
    let (estimates, _) = compute_estimates(
        &histories,
        &proj,
        grid,
        &mask,
        config.alpha,
        config.min_evidence,
    )?;
    Ok(estimates)
}

fn load_profiles(path: &std::path::Path) -> Result<BTreeMap<String, String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Config(format!("profiles: {e}")))?;
        if row.len() < 2 {
            return Err(Error::Config(
                "profile rows need two columns: user_id, profile_text".into(),
            ));
        }
        out.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(out)
}
