//! The four pipeline stages. Each reads files under the output directory
//! written by the previous stage and is a pure function of its inputs and
//! the run configuration.
//!
//! Layout under `<out>`:
//!
//! ```text
//! prices/<T>.csv  announcements.csv  truth/<T>.csv          simulate
//! measures/<T>/{measures,raw,profile,diagnostics,overnight}.csv
//! measures/<T>/ingest.json                                  measures
//! fits/<T>/{fit.json,state.csv}  fits/coefficients.csv       estimate
//! classify/{classification,counts,skipped,tickers}.csv
//! classify/agreement_{kappa,surprise}.csv                   classify
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::Timelike;
use jumpvol_core::ajm::{self, AjmParams, Burst, ModelData, SimulationConfig};
use jumpvol_core::classify::{
    adjusted_rand_index, agreement_matrix, classify_announcements, ClassificationTable, Series, TickerAgreement,
    TickerSeries,
};
use jumpvol_core::diurnal::{apply_profile, bin_diagnostics, estimate_profile, MeasureKind, MIN_DIAGNOSTIC_DAYS};
use jumpvol_core::fit::{fit_nested, AjmFit, Spec};
use jumpvol_core::grid::SessionGrid;
use jumpvol_core::measures::{build_bin_measures, jump_threshold};
use jumpvol_core::panel::{compute_returns, AnnouncementEvent};
use jumpvol_core::synth::{business_days, gen_paths, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_time, RunConfig};
use crate::formats::{self, FitReport, FitSummary};
use crate::ingest::{self, IngestConfig};

/// A failed stage, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Missing or malformed input, unreadable config, unwritable output.
    Input(anyhow::Error),
    /// The data were read but a computation failed or did not converge.
    Compute(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Compute(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Compute(e) => e,
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn input(self) -> Outcome<T>;
    fn compute(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Outcome<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn compute(self) -> Outcome<T> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

/// Settings shared by every stage.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunContext {
    /// `seed` overrides the config seed when given.
    pub fn new(config: RunConfig, out: PathBuf, seed: Option<u64>) -> Self {
        let seed = seed.unwrap_or(config.seed);
        Self { config, out, seed }
    }

    fn grid(&self) -> Outcome<SessionGrid> {
        self.config.grid().input()
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn announcements_path(&self) -> PathBuf {
        self.config
            .announcements
            .clone()
            .unwrap_or_else(|| self.out.join("announcements.csv"))
    }
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .input()?;
    }
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .input()
}

fn open(path: &Path) -> Outcome<File> {
    File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .input()
}

fn write_with<F, E>(path: &Path, f: F) -> Outcome<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), E>,
    E: Into<anyhow::Error>,
{
    let mut w = create(path)?;
    f(&mut w)
        .map_err(Into::into)
        .and_then(|()| w.flush().map_err(Into::into))
        .with_context(|| format!("cannot write {}", path.display()))
        .input()
}

/// Sorted entries of `dir` selected by `keep`, as (ticker, path).
fn list_tickers(dir: &Path, keep: impl Fn(&Path) -> Option<String>) -> Outcome<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))
        .input()?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.input()?.path();
        if let Some(t) = keep(&path) {
            found.push((t, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Failure::Input(anyhow!("no inputs found in {}", dir.display())));
    }
    Ok(found)
}

fn stem(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_owned)
}

/// Runs `f` on every item on its own thread; results keep input order.
fn fan_out<I: Sync, T: Send>(items: &[I], f: impl Fn(&I) -> T + Sync) -> Vec<T> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|item| s.spawn(|| f(item))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

// ---------------------------------------------------------------- simulate

/// Zero-based bin whose interval contains `time`.
fn bin_containing(grid: &SessionGrid, time: chrono::NaiveTime) -> Option<usize> {
    let minutes = |t: chrono::NaiveTime| i64::from(t.num_seconds_from_midnight() / 60);
    let offset = minutes(time) - minutes(grid.open());
    if offset < 0 || time >= grid.close() {
        return None;
    }
    Some(offset as usize / grid.bin_minutes() as usize)
}

/// Each ticker's bin volatility follows the model with common bursts on
/// announcement days. Prices are then drawn with diffusion volatility
/// proportional to the simulated continuous part and a single jump return
/// per jump bin sized so that √(C² + jump²) equals the simulated RV.
pub fn simulate(ctx: &RunContext) -> Outcome<()> {
    let sim = &ctx.config.simulate;
    let grid = ctx.grid()?;
    if sim.days < sim.announcements + 10 {
        return Err(Failure::Input(anyhow!(
            "simulate.days = {} leaves no room for {} announcements",
            sim.days,
            sim.announcements
        )));
    }
    if sim.tickers.is_empty() {
        return Err(Failure::Input(anyhow!("simulate.tickers is empty")));
    }
    let release = parse_time(&sim.announcement_time).input()?;
    let burst_bin = bin_containing(&grid, release)
        .ok_or_else(|| Failure::Input(anyhow!("announcement time {release} is outside the session")))?;
    let mut params = sim.params;
    params.restricted = false;
    params.validate().input()?;

    let dates = business_days(sim.first_day, sim.days);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut event_days: Vec<usize> = Vec::with_capacity(sim.announcements);
    while event_days.len() < sim.announcements {
        let d = rng.random_range(5..sim.days - 5);
        if !event_days.contains(&d) {
            event_days.push(d);
        }
    }
    event_days.sort_unstable();
    let common: Vec<f64> = event_days
        .iter()
        .map(|_| {
            if rng.random_bool(sim.burst_share) {
                -sim.burst_scale * (1.0 - rng.random::<f64>()).ln()
            } else {
                0.0
            }
        })
        .collect();
    let events: Vec<AnnouncementEvent> = event_days
        .iter()
        .map(|&d| AnnouncementEvent {
            date: dates[d],
            time: release,
            forward_guidance: rng.random_bool(sim.forward_guidance_share),
            note: String::new(),
        })
        .collect();
    let ticker_seeds: Vec<(u64, Vec<Burst>)> = sim
        .tickers
        .iter()
        .map(|_| {
            let bursts = event_days
                .iter()
                .zip(&common)
                .filter(|(_, c)| **c > 0.0)
                .map(|(&day, &c)| Burst {
                    day,
                    bin: burst_bin,
                    size: c * (1.0 + sim.burst_noise * (2.0 * rng.random::<f64>() - 1.0)),
                })
                .collect();
            (rng.random(), bursts)
        })
        .collect();

    write_with(&ctx.out.join("announcements.csv"), |w| {
        ingest::write_announcements(&events, w)
    })?;
    let jobs: Vec<(&String, &(u64, Vec<Burst>))> = sim.tickers.iter().zip(&ticker_seeds).collect();
    let results = fan_out(&jobs, |(ticker, (seed, bursts))| {
        simulate_ticker(ctx, &grid, &params, ticker, *seed, bursts.clone())
    });
    for r in results {
        r?;
    }
    Ok(())
}

fn simulate_ticker(
    ctx: &RunContext,
    grid: &SessionGrid,
    params: &AjmParams,
    ticker: &str,
    seed: u64,
    bursts: Vec<Burst>,
) -> Outcome<()> {
    let sim = &ctx.config.simulate;
    let n = grid.bins_per_day();
    let model = ajm::simulate(
        params,
        &SimulationConfig {
            days: sim.days,
            bins_per_day: n,
            seed,
            jump_intensity: sim.jump_intensity,
            jump_scale: sim.jump_scale,
            bursts,
            ..Default::default()
        },
    )
    .with_context(|| format!("{ticker}: model simulation failed"))
    .compute()?;
    let data = &model.data;
    let scale = data.mean_c();
    let mut sized_jumps = Vec::new();
    for (k, (rv, c)) in data.rv.iter().zip(&data.c).enumerate() {
        if rv > c {
            sized_jumps.push((k / n, k % n, (rv * rv - c * c).sqrt() / scale));
        }
    }
    let spec = SynthSpec {
        ticker: ticker.into(),
        days: sim.days,
        first_day: sim.first_day,
        sigma: sim.sigma,
        overnight_sigma: sim.overnight_sigma,
        diurnal: sim.diurnal.clone(),
        volatility_path: Some(data.c.iter().map(|c| c / scale).collect()),
        sized_jumps,
        seed: seed.wrapping_add(1),
        ..Default::default()
    };
    let out = gen_paths(&spec, grid)
        .with_context(|| format!("{ticker}: invalid simulation settings"))
        .input()?;
    write_with(&ctx.dir("prices").join(format!("{ticker}.csv")), |w| {
        ingest::write_price_csv(&out.panel, grid, w)
    })?;
    write_with(&ctx.dir("truth").join(format!("{ticker}.csv")), |w| {
        formats::write_state(out.panel.days(), n, &model.truth, w)
    })
}

// ---------------------------------------------------------------- measures

/// Ingests each price file, computes bin measures at level `q`, estimates
/// and applies the time-of-day profile, and writes the results.
pub fn measures(ctx: &RunContext, q: Option<f64>) -> Outcome<()> {
    let grid = ctx.grid()?;
    let q = q.unwrap_or(ctx.config.q);
    if !(q > 0.0 && q < 1.0) {
        return Err(Failure::Input(anyhow!("q = {q} is outside (0, 1)")));
    }
    let inputs = if ctx.config.prices.is_empty() {
        list_tickers(&ctx.dir("prices"), |p| {
            (p.extension().is_some_and(|e| e == "csv")).then(|| stem(p)).flatten()
        })?
    } else {
        let mut v = Vec::new();
        for p in &ctx.config.prices {
            let t = stem(p).ok_or_else(|| Failure::Input(anyhow!("bad price path {}", p.display())))?;
            v.push((t, p.clone()));
        }
        v
    };
    let ingest_cfg = IngestConfig {
        grid,
        max_missing_frac: ctx.config.max_missing_frac,
    };
    for r in fan_out(&inputs, |(ticker, path)| measure_ticker(ctx, &ingest_cfg, q, ticker, path)) {
        r?;
    }
    Ok(())
}

fn measure_ticker(ctx: &RunContext, cfg: &IngestConfig, q: f64, ticker: &str, path: &Path) -> Outcome<()> {
    let (panel, report) = ingest::load_price_panel(path, ticker, cfg)
        .with_context(|| ticker.to_string())
        .input()?;
    for r in &report.rejected {
        warn(format_args!("{ticker}: dropped {} ({} missing prices)", r.date, r.missing));
    }
    let returns = compute_returns(&panel);
    let threshold = jump_threshold(q).input()?;
    let raw = build_bin_measures(&returns, cfg.grid.per_bin(), threshold)
        .with_context(|| format!("{ticker}: bin measures"))
        .compute()?;
    let profile = estimate_profile(&raw, ctx.config.profile_source)
        .with_context(|| format!("{ticker}: time-of-day profile"))
        .compute()?;
    let adjusted = apply_profile(&raw, &profile).compute()?;

    let dir = ctx.dir("measures").join(ticker);
    write_with(&dir.join("raw.csv"), |w| formats::write_measures(&raw, w))?;
    write_with(&dir.join("measures.csv"), |w| formats::write_measures(&adjusted, w))?;
    write_with(&dir.join("profile.csv"), |w| formats::write_profile(&profile, w))?;
    write_with(&dir.join("overnight.csv"), |w| {
        formats::write_overnight(&returns.days, &returns.overnight, w)
    })?;
    if raw.n_days() >= MIN_DIAGNOSTIC_DAYS {
        let d_raw = bin_diagnostics(&raw, MeasureKind::Rv).compute()?;
        let d_adj = bin_diagnostics(&adjusted, MeasureKind::Rv).compute()?;
        write_with(&dir.join("diagnostics.csv"), |w| formats::write_diagnostics(&d_raw, &d_adj, w))?;
    } else {
        warn(format_args!(
            "{ticker}: {} days, diagnostics need {MIN_DIAGNOSTIC_DAYS}",
            raw.n_days()
        ));
    }
    write_with(&dir.join("ingest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        w.write_all(b"\n")?;
        anyhow::Ok(())
    })
}

// ---------------------------------------------------------------- estimate

fn measure_dirs(ctx: &RunContext) -> Outcome<Vec<(String, PathBuf)>> {
    list_tickers(&ctx.dir("measures"), |p| {
        p.join("measures.csv").is_file().then(|| stem(p)).flatten()
    })
}

fn load_model_data(ticker: &str, dir: &Path, units: f64) -> Outcome<(Vec<chrono::NaiveDate>, ModelData)> {
    let panel = formats::read_measures(open(&dir.join("measures.csv"))?)
        .with_context(|| format!("{ticker}: measures.csv"))
        .input()?;
    let (days, overnight) = formats::read_overnight(open(&dir.join("overnight.csv"))?)
        .with_context(|| format!("{ticker}: overnight.csv"))
        .input()?;
    if days != panel.days {
        return Err(Failure::Input(anyhow!("{ticker}: overnight.csv and measures.csv disagree on days")));
    }
    let data = ModelData::from_panel(&panel, &overnight).input()?.scaled(units);
    Ok((panel.days, data))
}

/// Fits both specs per ticker and exports the filtered state of `spec`,
/// converted back to the units of the measures files.
/// Outputs are written before a non-convergence is reported.
pub fn estimate(ctx: &RunContext, spec: Option<Spec>) -> Outcome<()> {
    let spec = spec.unwrap_or(ctx.config.estimate.spec);
    let opts = ctx.config.fit_options(ctx.seed);
    let tickers = measure_dirs(ctx)?;
    let results = fan_out(&tickers, |(ticker, dir)| -> Outcome<(FitReport, bool)> {
        let units = ctx.config.estimate.units;
        let (days, data) = load_model_data(ticker, dir, units)?;
        let (restricted, unrestricted) = fit_nested(&data, &opts)
            .with_context(|| format!("{ticker}: estimation failed"))
            .compute()?;
        let chosen: &AjmFit = if spec.is_restricted() { &restricted } else { &unrestricted };
        let mut state = chosen.state.clone();
        for v in [&mut state.mu, &mut state.varsigma, &mut state.kappa] {
            v.iter_mut().for_each(|x| *x /= units);
        }
        let out = ctx.dir("fits").join(ticker);
        write_with(&out.join("state.csv"), |w| formats::write_state(&days, data.bins_per_day, &state, w))?;
        let report = FitReport {
            ticker: ticker.clone(),
            options: opts.clone(),
            fits: vec![FitSummary::from_fit(&restricted), FitSummary::from_fit(&unrestricted)],
        };
        write_with(&out.join("fit.json"), |w| formats::write_fit_report(&report, w))?;
        Ok((report, restricted.converged && unrestricted.converged))
    });
    let mut reports = Vec::new();
    let mut unconverged = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok((report, ok)) => {
                if !ok {
                    unconverged.push(report.ticker.clone());
                }
                reports.push(report);
            }
            Err(e) => {
                eprintln!("error: {:#}", e.error());
                first_error.get_or_insert(e);
            }
        }
    }
    if !reports.is_empty() {
        write_with(&ctx.dir("fits").join("coefficients.csv"), |w| formats::write_coefficient_table(&reports, w))?;
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    if !unconverged.is_empty() {
        return Err(Failure::Compute(anyhow!(
            "optimizer did not converge for {}",
            unconverged.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- classify

/// κ-vs-surprise and κ-vs-SJ agreement over a ticker's own classified
/// announcements; NaN with fewer than two.
pub fn ticker_agreement(table: &ClassificationTable) -> TickerAgreement {
    let kappa = table.labels(Series::Kappa);
    let ari = |s: Series| adjusted_rand_index(&kappa, &table.labels(s)).unwrap_or(f64::NAN);
    TickerAgreement {
        ticker: table.ticker.clone(),
        kappa_surprise: ari(Series::Surprise),
        kappa_sj: ari(Series::Sj),
    }
}

/// Labels every announcement per ticker from the exported state and the
/// adjusted SJ series, then compares labelings across tickers.
pub fn classify(ctx: &RunContext) -> Outcome<()> {
    let grid = ctx.grid()?;
    let events = ingest::load_announcements(&ctx.announcements_path()).input()?;
    let fits = list_tickers(&ctx.dir("fits"), |p| {
        p.join("state.csv").is_file().then(|| stem(p)).flatten()
    })?;
    let mut tables = Vec::new();
    for (ticker, dir) in &fits {
        let state = formats::read_state(open(&dir.join("state.csv"))?)
            .with_context(|| format!("{ticker}: state.csv"))
            .input()?;
        let measures_dir = ctx.dir("measures").join(ticker);
        let panel = formats::read_measures(open(&measures_dir.join("measures.csv"))?)
            .with_context(|| format!("{ticker}: measures.csv"))
            .input()?;
        if panel.days != state.days {
            return Err(Failure::Input(anyhow!("{ticker}: state and measures disagree on days")));
        }
        let sj: Vec<f64> = panel.bins.iter().map(|b| b.sj).collect();
        let series = TickerSeries {
            days: &panel.days,
            bins_per_day: panel.bins_per_day,
            kappa: &state.state.kappa,
            sj: &sj,
        };
        let table = classify_announcements(ticker, &series, &events, &grid)
            .with_context(|| format!("{ticker}: classification"))
            .compute()?;
        if table.events.is_empty() {
            warn(format_args!("{ticker}: no announcement matched a bin"));
        }
        tables.push(table);
    }

    let out = ctx.dir("classify");
    let dates: Vec<_> = events.iter().map(|e| e.date).collect();
    write_with(&out.join("classification.csv"), |w| formats::write_classification(&tables, w))?;
    write_with(&out.join("counts.csv"), |w| formats::write_label_counts(&tables, w))?;
    write_with(&out.join("skipped.csv"), |w| formats::write_skipped(&tables, &dates, w))?;
    let per_ticker: Vec<TickerAgreement> = tables.iter().map(ticker_agreement).collect();
    write_with(&out.join("tickers.csv"), |w| formats::write_ticker_agreement(&per_ticker, w))?;
    if tables.len() < 2 {
        return Ok(());
    }
    for series in [Series::Kappa, Series::Surprise] {
        let path = out.join(format!("agreement_{}.csv", series.as_str()));
        match agreement_matrix(&tables, series) {
            Ok(m) => write_with(&path, |w| formats::write_agreement(&m, w))?,
            Err(e) => warn(format_args!("{} agreement skipped: {e}", series.as_str())),
        }
    }
    Ok(())
}
