//! Command-line driver: track generation, dataset/pretraining, end-to-end
//! training phases, and baseline comparison. Every command is fully
//! determined by (config, seed) and writes CSV artifacts plus a manifest.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mindstack_core::checkpoint::Checkpoint;
use mindstack_core::config::ScenarioConfig;
use mindstack_core::control::{FtgConfig, StanleyGains};
use mindstack_core::localization::{
    generate_dataset, load_dataset_cache, mean_position_error, pretrain, save_dataset_cache,
    DatasetCacheMeta, LocArch, LocNetParams, LocSample,
};
use mindstack_core::rng::{derive_rng, label};
use mindstack_core::sim::{
    run_lap, FtgPolicy, LapConfig, LapLog, LapOutcome, PfController, PfPolicy, Policy, World,
};
use mindstack_core::training::{
    run_combined_comparison, run_phase, E2EConfig, LapSummary, MindStack, Phase, PhaseReport,
};
use mindstack_core::vehicle::Pose;
use mindstack_core::{Error, Result};

const EXIT_MISSING_CHECKPOINT: u8 = 2;
const EXIT_CRASH_ONLY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mindstack",
    version,
    about = "Differentiable localization-and-control stack in a raytraced 2D simulator"
)]
struct Cli {
    /// Scenario: a built-in preset name or a path to a TOML config file.
    #[arg(long, global = true, default_value = "oval")]
    config: String,

    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for all artifacts (per-scenario subdirectory is created).
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Override lap counts (training and evaluation).
    #[arg(long, global = true)]
    laps: Option<usize>,

    /// Evaluation-lap parallelism: 1 = sequential, 0 = all cores, N = N
    /// threads. (Training laps are always sequential.)
    #[arg(long, global = true, default_value_t = 1)]
    parallel_laps: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a track: occupancy-grid PGM, metadata, and waypoint CSV.
    GenTrack {
        /// Track kind override (oval, hairpin, chicane).
        #[arg(long)]
        kind: Option<String>,
        /// Track scale override.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Generate the localization training set and write the sample cache.
    Dataset,
    /// Train the localizer on the cached (or freshly generated) dataset.
    Pretrain,
    /// Run the experiment phases (before / train / after).
    Run {
        #[arg(long, value_enum, default_value_t = PhaseArg::All)]
        phase: PhaseArg,
    },
    /// Evaluate the baseline controllers against the stack (comparison table).
    Compare,
    /// Train localization and controller gains in the four-way combination.
    Combined,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Before,
    Train,
    After,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(laps) = cli.laps {
        cfg.e2e.laps = laps;
    }
    cfg.validate()?;
    let dir = cli.out_dir.join(&cfg.name);
    std::fs::create_dir_all(&dir)?;

    match &cli.cmd {
        Cmd::GenTrack { kind, scale } => cmd_gen_track(&cfg, &dir, kind.as_deref(), *scale),
        Cmd::Dataset => cmd_dataset(&cfg, &dir),
        Cmd::Pretrain => cmd_pretrain(&cfg, &dir),
        Cmd::Run { phase } => cmd_run(&cfg, &dir, *phase, cli.parallel_laps),
        Cmd::Compare => cmd_compare(&cfg, &dir, cli.parallel_laps),
        Cmd::Combined => cmd_combined(&cfg, &dir, cli.parallel_laps),
    }
}

fn load_config(spec: &str) -> Result<ScenarioConfig> {
    if let Some(preset) = ScenarioConfig::preset(spec) {
        return Ok(preset);
    }
    let path = Path::new(spec);
    if path.exists() {
        return ScenarioConfig::load(path);
    }
    Err(Error::Config(format!(
        "'{spec}' is neither a preset ({}) nor an existing config file",
        ScenarioConfig::preset_names().join(", ")
    )))
}

fn parallel(parallel_laps: usize) -> bool {
    parallel_laps != 1
}

/// Run `f` inside a rayon pool sized by --parallel-laps (0 = default size).
fn with_pool<T: Send>(parallel_laps: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if parallel_laps <= 1 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel_laps)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(f)
}

// ---- artifact path helpers -----------------------------------------------------

fn dataset_path(dir: &Path) -> PathBuf {
    dir.join("dataset.bin")
}

fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("pretrained.ckpt")
}

fn trained_path(dir: &Path) -> PathBuf {
    dir.join("trained.ckpt")
}

// ---- commands -----------------------------------------------------------------

fn cmd_gen_track(
    cfg: &ScenarioConfig,
    dir: &Path,
    kind: Option<&str>,
    scale: Option<f64>,
) -> Result<u8> {
    let mut cfg = cfg.clone();
    if let Some(kind) = kind {
        cfg.map.kind = Some(kind.to_string());
        cfg.map.pgm = None;
        cfg.map.metadata = None;
        cfg.map.waypoints = None;
    }
    if let Some(scale) = scale {
        cfg.map.scale = scale;
    }
    cfg.validate()?;
    let world = cfg.build_world()?;
    let pgm = dir.join("map.pgm");
    let meta = dir.join("map.meta");
    let wps = dir.join("waypoints.csv");
    world.grid.write_pgm(&pgm)?;
    world.grid.write_metadata(&meta, 128)?;
    world.traj.save_csv(&wps)?;
    manifest::write(dir, &cfg, "gen-track", &[&pgm, &meta, &wps])?;
    println!(
        "wrote {} ({}x{} cells), {}, {} ({} waypoints)",
        pgm.display(),
        world.grid.width(),
        world.grid.height(),
        meta.display(),
        wps.display(),
        world.traj.len()
    );
    Ok(0)
}

fn cmd_dataset(cfg: &ScenarioConfig, dir: &Path) -> Result<u8> {
    let world = cfg.build_world()?;
    let samples = generate_dataset(
        &world.grid,
        &world.sensor,
        &cfg.dataset_config(),
        cfg.seed,
    )?;
    let path = dataset_path(dir);
    save_dataset_cache(&path, &cache_meta(cfg), &samples)?;
    manifest::write(dir, cfg, "dataset", &[&path])?;
    println!("wrote {} ({} samples)", path.display(), samples.len());
    Ok(0)
}

fn cache_meta(cfg: &ScenarioConfig) -> DatasetCacheMeta {
    let d = cfg.dataset_config();
    let s = cfg.sensor_config();
    DatasetCacheMeta {
        seed: cfg.seed,
        n_beams: s.n_beams as u32,
        fov: s.fov,
        max_range: s.max_range,
        sigma: d.sigma,
        augment: d.augment as u32,
        prev_sigma_xy: d.prev_sigma_xy,
        prev_sigma_theta: d.prev_sigma_theta,
    }
}

/// Load the cached dataset when it matches the scenario, else regenerate
/// (and refresh the cache).
fn load_or_generate_dataset(cfg: &ScenarioConfig, dir: &Path, world: &World) -> Result<Vec<LocSample>> {
    let path = dataset_path(dir);
    let want = cache_meta(cfg);
    if path.exists() {
        match load_dataset_cache(&path) {
            Ok((meta, samples)) if meta == want => {
                println!("using cached dataset {} ({} samples)", path.display(), samples.len());
                return Ok(samples);
            }
            Ok(_) => println!("cache {} is for different settings; regenerating", path.display()),
            Err(e) => println!("cache {} unreadable ({e}); regenerating", path.display()),
        }
    }
    let samples = generate_dataset(&world.grid, &world.sensor, &cfg.dataset_config(), cfg.seed)?;
    save_dataset_cache(&path, &want, &samples)?;
    Ok(samples)
}

fn cmd_pretrain(cfg: &ScenarioConfig, dir: &Path) -> Result<u8> {
    let world = cfg.build_world()?;
    let enc = cfg.encoding_config(&world.grid);
    let arch = LocArch::new(world.sensor.n_beams, enc.encoding_len())?;
    let samples = load_or_generate_dataset(cfg, dir, &world)?;

    let mut params = LocNetParams::init(&arch, &mut derive_rng(cfg.seed, &[label::PARAM_INIT]));
    let curve = pretrain(&mut params, &arch, &enc, &samples, &cfg.pretrain_config())?;

    let ckpt = checkpoint_path(dir);
    params.to_checkpoint().save(&ckpt)?;
    let curve_path = dir.join("pretrain_curve.csv");
    let mut w = csv::Writer::from_path(&curve_path)?;
    w.write_record(["epoch", "mean_loss"])?;
    for (i, loss) in curve.iter().enumerate() {
        w.serialize((i, loss))?;
    }
    w.flush()?;

    let err = mean_position_error(&params, &arch, &enc, &samples)?;
    manifest::write(dir, cfg, "pretrain", &[&dataset_path(dir), &ckpt, &curve_path])?;
    println!(
        "wrote {} and {} (final loss {:.5}, mean position error {err:.3} m)",
        ckpt.display(),
        curve_path.display(),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(0)
}

/// Everything the training/eval commands need, loaded once.
struct Stack {
    world: World,
    enc: mindstack_core::localization::PoseEncodingConfig,
    arch: LocArch,
    pretrained: LocNetParams,
    e2e: E2EConfig,
    lap_cfg: LapConfig,
}

fn load_stack(cfg: &ScenarioConfig, dir: &Path) -> Result<std::result::Result<Stack, u8>> {
    let ckpt_path = checkpoint_path(dir);
    if !ckpt_path.exists() {
        eprintln!(
            "missing checkpoint {} — run `mindstack pretrain` first",
            ckpt_path.display()
        );
        return Ok(Err(EXIT_MISSING_CHECKPOINT));
    }
    let world = cfg.build_world()?;
    let enc = cfg.encoding_config(&world.grid);
    let arch = LocArch::new(world.sensor.n_beams, enc.encoding_len())?;
    let pretrained = LocNetParams::from_checkpoint(&Checkpoint::load(&ckpt_path)?, &arch)?;
    Ok(Ok(Stack {
        world,
        enc,
        arch,
        pretrained,
        e2e: cfg.e2e_config(),
        lap_cfg: cfg.lap_config(),
    }))
}

fn save_report(report: &PhaseReport, dir: &Path, stem: &str) -> Result<()> {
    report.save_csv(&dir.join(format!("phase_{stem}.csv")))?;
    report.save_aggregate_csv(&dir.join(format!("phase_{stem}_summary.csv")))?;
    Ok(())
}

fn crash_only(laps: &[LapSummary]) -> bool {
    !laps.is_empty() && laps.iter().all(|l| l.outcome == LapOutcome::Crashed)
}

fn cmd_run(cfg: &ScenarioConfig, dir: &Path, phase: PhaseArg, parallel_laps: usize) -> Result<u8> {
    let stack = match load_stack(cfg, dir)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let phases: &[Phase] = match phase {
        PhaseArg::Before => &[Phase::Before],
        PhaseArg::Train => &[Phase::Train],
        PhaseArg::After => &[Phase::After],
        PhaseArg::All => &[Phase::Before, Phase::Train, Phase::After],
    };

    // Standalone `after` evaluates a previously trained checkpoint if one
    // exists; otherwise phases operate on the pretrained parameters.
    let mut trained = stack.pretrained.clone();
    if phase == PhaseArg::After {
        let tp = trained_path(dir);
        if tp.exists() {
            trained = LocNetParams::from_checkpoint(&Checkpoint::load(&tp)?, &stack.arch)?;
            println!("evaluating trained checkpoint {}", tp.display());
        }
    }
    let mut gains = StanleyGains {
        k_e: cfg.controller.k_e,
        k_h: cfg.controller.k_h,
    };

    let n_laps = cfg.e2e.laps;
    let mut all_laps: Vec<LapSummary> = Vec::new();
    let reports = with_pool(parallel_laps, || {
        let mut reports = Vec::new();
        for &ph in phases {
            let report = run_phase(
                &stack.world,
                ph,
                &mut trained,
                &stack.pretrained,
                &mut gains,
                &stack.arch,
                &stack.enc,
                &stack.e2e,
                &stack.lap_cfg,
                n_laps,
                parallel(parallel_laps),
            )?;
            reports.push((ph, report));
        }
        Ok(reports)
    })?;

    let mut inputs = vec![checkpoint_path(dir)];
    for (ph, report) in &reports {
        save_report(report, dir, ph.name())?;
        let (ml, _) = report.training_loss_stats();
        let (mc, _) = report.abs_cte_stats();
        println!(
            "{}: {} laps, mean training loss {:.5} (x100: {:.3}), mean |CTE| {:.4} m, {} completed / {} crashed / {} timeout",
            ph.name(),
            report.laps.len(),
            ml,
            ml * 100.0,
            mc,
            report.outcome_count(LapOutcome::Completed),
            report.outcome_count(LapOutcome::Crashed),
            report.outcome_count(LapOutcome::Timeout),
        );
        all_laps.extend(report.laps.iter().copied());
        inputs.push(dir.join(format!("phase_{}.csv", ph.name())));
    }

    if phases.contains(&Phase::Train) {
        trained.to_checkpoint().save(&trained_path(dir))?;
        std::fs::write(
            dir.join("gains.txt"),
            format!("k_e={}\nk_h={}\n", gains.k_e, gains.k_h),
        )?;
        inputs.push(trained_path(dir));
    }

    // One representative full lap trace per boundary phase.
    write_trace(&stack, &stack.pretrained, dir, "trace_before.csv")?;
    write_trace(&stack, &trained, dir, "trace_after.csv")?;

    let input_refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    manifest::write(dir, cfg, "run", &input_refs)?;

    if crash_only(&all_laps) {
        eprintln!("all laps crashed");
        return Ok(EXIT_CRASH_ONLY);
    }
    Ok(0)
}

/// Run one evaluation lap with the given parameters and save the full
/// per-timestep log.
fn write_trace(stack: &Stack, params: &LocNetParams, dir: &Path, name: &str) -> Result<()> {
    let eval = E2EConfig {
        lr: 0.0,
        train_stanley: false,
        ..stack.e2e
    };
    let mut policy = MindStack::new(
        params.clone(),
        stack.pretrained.clone(),
        stack.arch.clone(),
        stack.enc,
        StanleyGains::default(),
        eval,
    );
    let start = start_pose(&stack.world);
    let mut rng = derive_rng(stack.e2e.seed, &[label::COMPARE, u64::MAX]);
    let log = run_lap(&stack.world, &mut policy, &start, &stack.lap_cfg, &mut rng)?;
    log.save_csv(&dir.join(name))?;
    Ok(())
}

fn start_pose(world: &World) -> Pose {
    let w = world.traj.waypoint(0);
    Pose::new(w.x, w.y, w.heading)
}

// ---- compare ---------------------------------------------------------------------

struct CompareRow {
    controller: &'static str,
    laps: Vec<LapLog>,
}

impl CompareRow {
    fn stats(&self, f: impl Fn(&LapLog) -> f64) -> (f64, f64) {
        let n = self.laps.len().max(1) as f64;
        let mean = self.laps.iter().map(&f).sum::<f64>() / n;
        let var = self.laps.iter().map(|l| (f(l) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

fn cmd_compare(cfg: &ScenarioConfig, dir: &Path, parallel_laps: usize) -> Result<u8> {
    let stack = match load_stack(cfg, dir)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let n_laps = cfg.e2e.laps;
    let start = start_pose(&stack.world);

    // Train a copy for the "after" row.
    let mut trained = stack.pretrained.clone();
    let mut gains = StanleyGains {
        k_e: cfg.controller.k_e,
        k_h: cfg.controller.k_h,
    };
    run_phase(
        &stack.world,
        Phase::Train,
        &mut trained,
        &stack.pretrained,
        &mut gains,
        &stack.arch,
        &stack.enc,
        &stack.e2e,
        &stack.lap_cfg,
        n_laps,
        false,
    )?;

    let pf_cfg = cfg.pf_config();
    type Factory<'a> = Box<dyn Fn(u64) -> Box<dyn Policy> + Sync + 'a>;
    let rows: Vec<(&'static str, Factory)> = vec![
        (
            "follow_the_gap",
            Box::new({
                let delta_max = stack.world.vehicle.delta_max;
                let c = cfg.controller;
                move |_lap| {
                    Box::new(FtgPolicy {
                        cfg: FtgConfig {
                            bubble_radius: c.ftg_bubble_radius,
                            safe_threshold: c.ftg_threshold,
                            delta_max,
                        },
                    })
                }
            }),
        ),
        (
            "pf_pure_pursuit",
            Box::new({
                let pf = pf_cfg.clone();
                let c = cfg.controller;
                let seed = cfg.seed;
                move |lap| {
                    let mut p = PfPolicy::new(
                        pf.clone(),
                        PfController::PurePursuit {
                            lookahead: c.pp_lookahead,
                        },
                        mindstack_core::control::pf_rng(seed, lap),
                    );
                    p.update_every = c.pf_update_every;
                    Box::new(p)
                }
            }),
        ),
        (
            "pf_stanley",
            Box::new({
                let pf = pf_cfg.clone();
                let c = cfg.controller;
                let seed = cfg.seed;
                move |lap| {
                    let mut p = PfPolicy::new(
                        pf.clone(),
                        PfController::Stanley(StanleyGains { k_e: c.k_e, k_h: c.k_h }),
                        mindstack_core::control::pf_rng(seed, lap ^ 0x5054), // distinct stream from pf_pure_pursuit
                    );
                    p.update_every = c.pf_update_every;
                    Box::new(p)
                }
            }),
        ),
        (
            "mind_stack_before",
            Box::new({
                let s = mind_factory(&stack, stack.pretrained.clone(), cfg);
                move |_lap| s()
            }),
        ),
        (
            "mind_stack_after",
            Box::new({
                let s = mind_factory(&stack, trained.clone(), cfg);
                move |_lap| s()
            }),
        ),
    ];

    let results = with_pool(parallel_laps, || {
        let mut results: Vec<CompareRow> = Vec::new();
        for (row_idx, (name, factory)) in rows.iter().enumerate() {
            let run_one = |lap: usize| -> Result<LapLog> {
                let mut policy = factory(lap as u64);
                let mut rng =
                    derive_rng(cfg.seed, &[label::COMPARE, row_idx as u64, lap as u64]);
                run_lap(&stack.world, policy.as_mut(), &start, &stack.lap_cfg, &mut rng)
            };
            let laps: Vec<LapLog> = if parallel(parallel_laps) {
                use rayon::prelude::*;
                (0..n_laps)
                    .into_par_iter()
                    .map(run_one)
                    .collect::<Result<_>>()?
            } else {
                (0..n_laps).map(run_one).collect::<Result<_>>()?
            };
            results.push(CompareRow {
                controller: name,
                laps,
            });
        }
        Ok(results)
    })?;

    let path = dir.join("compare.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "controller",
        "mean_abs_cte_cm",
        "std_abs_cte_cm",
        "mean_lap_time_s",
        "std_lap_time_s",
        "completed",
        "crashed",
        "timeout",
    ])?;
    let mut any_noncrash = false;
    for row in &results {
        let (cte_m, cte_s) = row.stats(|l| l.mean_abs_cte());
        let (t_m, t_s) = row.stats(|l| l.lap_time_s);
        let count = |o: LapOutcome| row.laps.iter().filter(|l| l.outcome == o).count();
        any_noncrash |= row.laps.iter().any(|l| l.outcome != LapOutcome::Crashed);
        w.serialize((
            row.controller,
            cte_m * 100.0,
            cte_s * 100.0,
            t_m,
            t_s,
            count(LapOutcome::Completed),
            count(LapOutcome::Crashed),
            count(LapOutcome::Timeout),
        ))?;
        println!(
            "{}: mean |CTE| {:.2} cm (±{:.2}), lap time {:.2} s (±{:.2}), {}/{} completed",
            row.controller,
            cte_m * 100.0,
            cte_s * 100.0,
            t_m,
            t_s,
            count(LapOutcome::Completed),
            row.laps.len()
        );
    }
    w.flush()?;
    manifest::write(dir, cfg, "compare", &[&checkpoint_path(dir), &path])?;

    if !any_noncrash {
        eprintln!("all laps crashed");
        return Ok(EXIT_CRASH_ONLY);
    }
    Ok(0)
}

/// Factory for evaluation-mode stack policies sharing the frozen reference.
fn mind_factory<'a>(
    stack: &'a Stack,
    params: LocNetParams,
    cfg: &ScenarioConfig,
) -> impl Fn() -> Box<dyn Policy> + 'a {
    let eval = E2EConfig {
        lr: 0.0,
        train_stanley: false,
        ..stack.e2e
    };
    let gains = StanleyGains {
        k_e: cfg.controller.k_e,
        k_h: cfg.controller.k_h,
    };
    move || {
        Box::new(MindStack::new(
            params.clone(),
            stack.pretrained.clone(),
            stack.arch.clone(),
            stack.enc,
            gains,
            eval,
        ))
    }
}

fn cmd_combined(cfg: &ScenarioConfig, dir: &Path, parallel_laps: usize) -> Result<u8> {
    let stack = match load_stack(cfg, dir)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let n_laps = cfg.e2e.laps;
    let results = with_pool(parallel_laps, || {
        run_combined_comparison(
            &stack.world,
            &stack.pretrained,
            &stack.arch,
            &stack.enc,
            &stack.e2e,
            &stack.lap_cfg,
            n_laps,
            n_laps,
            parallel(parallel_laps),
        )
    })?;

    let path = dir.join("combined.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "setting",
        "mean_training_loss",
        "std_training_loss",
        "mean_training_loss_x100",
        "mean_abs_cte_m",
        "std_abs_cte_m",
        "completed",
        "crashed",
        "timeout",
    ])?;
    let mut all: Vec<LapSummary> = Vec::new();
    for (name, report) in &results {
        report.save_csv(&dir.join(format!("combined_{name}.csv")))?;
        let (ml, sl) = report.training_loss_stats();
        let (mc, sc) = report.abs_cte_stats();
        w.serialize((
            name,
            ml,
            sl,
            ml * 100.0,
            mc,
            sc,
            report.outcome_count(LapOutcome::Completed),
            report.outcome_count(LapOutcome::Crashed),
            report.outcome_count(LapOutcome::Timeout),
        ))?;
        println!(
            "{name}: mean training loss {ml:.5} (x100: {:.3}), mean |CTE| {mc:.4} m",
            ml * 100.0
        );
        all.extend(report.laps.iter().copied());
    }
    w.flush()?;
    manifest::write(dir, cfg, "combined", &[&checkpoint_path(dir), &path])?;

    if crash_only(&all) {
        eprintln!("all laps crashed");
        return Ok(EXIT_CRASH_ONLY);
    }
    Ok(0)
}
