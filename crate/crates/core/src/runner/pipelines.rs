//! One function per experiment kind. Each writes its artifacts through the
//! shared [`Artifacts`] sink and tags errors with the stage that raised them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind, LaserBlock, OutputFormat};
use super::Artifacts;
use crate::circular::Angle;
use crate::error::{Error, Result};
use crate::io::{finite_or_null, fmt_f64};
use crate::laser::{extract_pulses, integrate, PulseTrain};
use crate::optics::{InputIntensity, NetworkConfig};
use crate::phase_model::{default_warmup, generate_sequence, CorrelationModel, PhaseSequence};
use crate::q_engine::{q_first_order, q_general, QResult};
use crate::visibility::{calibrate, replay, sigma_from_visibility, v_statistic_streamed, CalibrationResult, VisibilityEstimate};

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub(super) fn synth_phases(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let seq = stage("synth-phases", sequence(cfg))?;
    write_sequence(cfg, out, "synth-phases", "phases", &seq)
}

fn write_sequence(cfg: &ExperimentConfig, out: &mut Artifacts, st: &str, name: &str, seq: &PhaseSequence) -> Result<()> {
    if cfg.wants(OutputFormat::Csv) {
        out.write(st, &format!("{name}.csv"), seq.to_csv_string().as_bytes())?;
    }
    if cfg.wants(OutputFormat::Json) {
        out.json(st, &format!("{name}.json"), seq)?;
    }
    Ok(())
}

/// Phase input for the interferometer kinds: an external CSV when given,
/// otherwise a sequence synthesised from the model.
fn sequence(cfg: &ExperimentConfig) -> Result<PhaseSequence> {
    let block = cfg.sequence.clone().unwrap_or_default();
    if let Some(path) = &block.input {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return PhaseSequence::from_csv_str(&text);
    }
    let model = cfg.model.as_ref().ok_or_else(|| Error::config("model", "missing"))?.to_model()?;
    let mut rng = crate::rng::seeded(cfg.seed);
    let warmup = block.warmup.unwrap_or_else(|| default_warmup(&model));
    let mut seq = generate_sequence(&model, block.rounds, &mut rng, warmup)?;
    seq.seed = Some(cfg.seed);
    Ok(seq)
}

#[derive(Serialize)]
struct LaserSummary<'a> {
    laser: &'a LaserBlock,
    threshold_current_ma: f64,
    steps: u64,
    clamped_steps: u64,
    periods: usize,
    lasing_pulses: usize,
    dark_periods: &'a [usize],
    mean_intensity: f64,
}

fn run_laser(block: &LaserBlock, seed: u64) -> Result<(crate::laser::FieldTrajectory, PulseTrain)> {
    let drive = block.drive()?;
    let opts = block.options()?;
    let duration = (block.pulses + block.startup_pulses) as f64 / drive.nu;
    let traj = integrate(&block.params, &drive, duration, &opts, seed)?;
    let train = extract_pulses(&traj, &drive)?;
    Ok((traj, train))
}

pub(super) fn simulate_laser(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let block = cfg.laser.as_ref().expect("resolved config has a laser block");
    let (traj, train) = stage("laser", run_laser(block, cfg.seed))?;
    let summary = LaserSummary {
        laser: block,
        threshold_current_ma: block.params.threshold_current() * 1e3,
        steps: traj.steps,
        clamped_steps: traj.clamped_steps,
        periods: traj.pulses.len(),
        lasing_pulses: train.intensities.len(),
        dark_periods: &train.dark_periods,
        mean_intensity: mean(&train.intensities),
    };
    if cfg.wants(OutputFormat::Json) {
        out.json("laser", "laser.json", &summary)?;
        out.json("laser", "pulses.json", &traj.pulses)?;
    }
    if cfg.wants(OutputFormat::Csv) {
        out.write("laser", "pulses.csv", train.phases.to_csv_string().as_bytes())?;
        let mut s = String::from("round_index,intensity\n");
        for (i, v) in train.intensities.iter().enumerate() {
            s.push_str(&format!("{i},{}\n", fmt_f64(*v)));
        }
        out.write("laser", "pulses.intensity.csv", s.as_bytes())?;
        if block.decimate > 0 {
            out.write("laser", "trajectory.csv", traj.to_csv_string().as_bytes())?;
        }
    }
    if block.decimate > 0 {
        let path = out.path("trajectory.bin");
        stage("laser", traj.write_binary(&path, &block.params))?;
        out.record("laser", "trajectory.bin");
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Serialize)]
struct VisibilityReport {
    network: NetworkConfig,
    rounds: usize,
    estimate: VisibilityEstimate,
    #[serde(with = "finite_or_null")]
    sigma_hat: f64,
}

pub(super) fn visibility(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let seq = stage("sequence", sequence(cfg))?;
    let net = cfg.network.as_ref().expect("resolved").to_network()?;
    let estimate = stage("interferometer", v_statistic_streamed(&net, &seq))?;
    let report = VisibilityReport {
        network: net,
        rounds: seq.len(),
        sigma_hat: stage("interferometer", sigma_from_visibility(estimate.value))?,
        estimate,
    };
    if cfg.wants(OutputFormat::Json) {
        out.json("interferometer", "visibility.json", &report)?;
    }
    if cfg.wants(OutputFormat::Csv) {
        let e = &report.estimate;
        let s = format!(
            "v,standard_error,n_rounds,n_skipped,sigma_hat\n{},{},{},{},{}\n",
            fmt_f64(e.value),
            fmt_f64(e.standard_error),
            e.n_rounds,
            e.n_skipped,
            fmt_f64(report.sigma_hat)
        );
        out.write("interferometer", "visibility.csv", s.as_bytes())?;
    }
    Ok(())
}

pub(super) fn calibrate_kind(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let seq = stage("sequence", sequence(cfg))?;
    let base = cfg.network.as_ref().expect("resolved").to_network()?;
    let grid = cfg.sweep.as_ref().expect("resolved").grid(base.attenuators.len())?;
    let cal = stage("calibrate", calibrate(&base, &grid, replay(&seq)))?;
    if cfg.wants(OutputFormat::Json) {
        out.json("calibrate", "calibration.json", &cal)?;
    }
    if cfg.wants(OutputFormat::Csv) {
        out.write("calibrate", "sweep.csv", cal.sweep_csv().as_bytes())?;
    }
    Ok(())
}

/// `q` for a model of any correlation length; first order uses the closed form.
pub fn estimate_q(m: &CorrelationModel, cfg: &ExperimentConfig) -> Result<QResult> {
    let solver = cfg.solver.clone().unwrap_or_default();
    let quad = solver.quadrature()?;
    if m.ell_c == 1 {
        q_first_order(m.sigma, Angle::new(m.delta_phi_bar), &quad)
    } else {
        q_general(m, &quad, &solver.search()?)
    }
}

#[derive(Serialize)]
struct QReport {
    model: CorrelationModel,
    result: QResult,
}

pub(super) fn estimate_q_kind(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let model = cfg.model.as_ref().expect("resolved").to_model()?;
    let result = stage("estimate-q", estimate_q(&model, cfg))?;
    if cfg.wants(OutputFormat::Csv) {
        let s = format!("q,raw_q,exactness\n{},{},{:?}\n", fmt_f64(result.q), fmt_f64(result.raw_q), result.exactness);
        out.write("estimate-q", "q.csv", s.to_lowercase().as_bytes())?;
    }
    if cfg.wants(OutputFormat::Json) {
        out.json("estimate-q", "q.json", &QReport { model, result })?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Point {
    pub sigma: f64,
    pub r2: f64,
    pub q: f64,
    pub raw_q: f64,
}

pub(super) fn fig3(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let f = cfg.fig3.as_ref().expect("resolved");
    let cells: Vec<(f64, f64)> = f.sigmas.iter().flat_map(|&s| f.r2s.iter().map(move |&r| (s, r))).collect();
    let points = cells
        .par_iter()
        .map(|&(sigma, r2)| {
            let m = CorrelationModel::second_order(r2, sigma, f.delta_phi_bar)?;
            let q = estimate_q(&m, cfg)?;
            Ok(Fig3Point { sigma, r2, q: q.q, raw_q: q.raw_q })
        })
        .collect::<Result<Vec<_>>>();
    let points = stage("estimate-q", points)?;
    if cfg.wants(OutputFormat::Csv) {
        let mut s = String::from("sigma,r2,q,raw_q\n");
        for p in &points {
            s.push_str(&format!("{},{},{},{}\n", fmt_f64(p.sigma), fmt_f64(p.r2), fmt_f64(p.q), fmt_f64(p.raw_q)));
        }
        out.write("estimate-q", "fig3.csv", s.as_bytes())?;
    }
    if cfg.wants(OutputFormat::Json) {
        out.json("estimate-q", "fig3.json", &points)?;
    }
    Ok(())
}

/// One laser operating point of a table or surface sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub nu_ghz: f64,
    pub i_off_ma: f64,
    pub ell_c: usize,
    pub seed: u64,
    pub dt_ps: f64,
    pub pulses_requested: usize,
    /// Pulse count below the table's standard budget.
    pub reduced: bool,
    /// Integration step coarser than the laser block's.
    pub coarse_step: bool,
    pub outcome: CellOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutcome {
    Ok(Box<CellEstimate>),
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub pulses_used: usize,
    pub dark_periods: usize,
    pub v_max: VisibilityEstimate,
    #[serde(with = "finite_or_null")]
    pub sigma_hat: f64,
    #[serde(with = "finite_or_null")]
    pub sigma_standard_error: f64,
    pub r_hat: Vec<f64>,
    pub delta_phi_bar_hat: Angle,
    pub fully_randomized: bool,
    /// Absent for surface-only sweeps.
    pub q: Option<f64>,
    pub q_standard_error: Option<f64>,
    #[serde(skip)]
    pub calibration: Option<CalibrationResult>,
}

impl CellResult {
    pub fn estimate(&self) -> Option<&CellEstimate> {
        match &self.outcome {
            CellOutcome::Ok(e) => Some(e),
            CellOutcome::Failed { .. } => None,
        }
    }

    fn stem(&self, prefix: &str) -> String {
        format!("{prefix}_nu{}ghz_ioff{}ma", self.nu_ghz, self.i_off_ma)
    }
}

fn table_ell_c(kind: ExperimentKind) -> usize {
    match kind {
        ExperimentKind::Table2 => 1,
        _ => 2,
    }
}

/// Laser, interferometer, calibration and (for the tables) `q` at one
/// operating point.
pub fn run_cell(cfg: &ExperimentConfig, nu_ghz: f64, i_off_ma: f64, seed: u64) -> CellResult {
    let tables = cfg.tables.clone().unwrap_or_default();
    let slow = nu_ghz < 1.0;
    let pulses = if slow { tables.slow_pulses.unwrap_or(tables.pulses) } else { tables.pulses };
    let base_dt = cfg.laser.as_ref().map_or(LaserBlock::default().dt_ps, |l| l.dt_ps);
    let mut laser = cfg.laser.clone().unwrap_or_default();
    laser.nu_ghz = nu_ghz;
    laser.i_off_ma = i_off_ma;
    laser.pulses = pulses;
    laser.decimate = 0;
    if slow {
        if let Some(dt) = tables.slow_dt_ps {
            laser.dt_ps = dt;
        }
    }
    let ell_c = table_ell_c(cfg.kind);
    let outcome = match cell_estimate(cfg, &laser, ell_c, seed) {
        Ok(e) => CellOutcome::Ok(Box::new(e)),
        Err(e) => CellOutcome::Failed { error: e.to_string() },
    };
    CellResult {
        nu_ghz,
        i_off_ma,
        ell_c,
        seed,
        dt_ps: laser.dt_ps,
        pulses_requested: pulses,
        reduced: pulses < tables.pulses,
        coarse_step: laser.dt_ps > base_dt,
        outcome,
    }
}

fn cell_estimate(cfg: &ExperimentConfig, laser: &LaserBlock, ell_c: usize, seed: u64) -> Result<CellEstimate> {
    laser.validate().map_err(|e| e.in_stage("laser"))?;
    let (_, train) = stage("laser", run_laser(laser, seed))?;
    let mean_mu = mean(&train.intensities);
    if !(mean_mu > 0.0) {
        return Err(Error::DegenerateData("pulses carry no intensity".into()).in_stage("interferometer"));
    }
    let mu = InputIntensity::PerRound(train.intensities.iter().map(|x| x / mean_mu).collect());
    let mut base = if ell_c == 1 {
        NetworkConfig::mzi(Angle::new(0.0), 1.0)
    } else {
        NetworkConfig::cascade(ell_c, Angle::new(0.0), vec![1.0; ell_c - 1], 1.0)
    };
    base.input_intensities = mu;
    let mut grid = cfg.sweep.clone().unwrap_or_default().grid(ell_c - 1)?;
    if cfg.kind == ExperimentKind::Fig4 {
        grid.refine = false;
    }
    let cal = stage("calibrate", calibrate(&base, &grid, replay(&train.phases)))?;
    let v = cal.v_max;
    let sigma_se = if cal.sigma_hat.is_finite() && cal.sigma_hat > 0.0 {
        v.standard_error / (cal.sigma_hat * v.value)
    } else {
        f64::INFINITY
    };
    let (q, q_se) = if cfg.kind == ExperimentKind::Fig4 {
        (None, None)
    } else {
        let (q, q_se) = stage("estimate-q", cell_q(cfg, &cal, sigma_se))?;
        (Some(q), q_se)
    };
    Ok(CellEstimate {
        pulses_used: train.intensities.len(),
        dark_periods: train.dark_periods.len(),
        v_max: v,
        sigma_hat: cal.sigma_hat,
        sigma_standard_error: sigma_se,
        r_hat: cal.r_hat.clone(),
        delta_phi_bar_hat: cal.delta_phi_bar_hat,
        fully_randomized: cal.fully_randomized,
        q,
        q_standard_error: q_se,
        calibration: Some(cal),
    })
}

/// `q` at the calibrated model, with the error propagated from `σ̂` by a
/// one-sided difference. A fully randomised cell has `q = 1`.
fn cell_q(cfg: &ExperimentConfig, cal: &CalibrationResult, sigma_se: f64) -> Result<(f64, Option<f64>)> {
    if !cal.sigma_hat.is_finite() {
        return Ok((1.0, None));
    }
    let model = |sigma: f64| CorrelationModel::new(cal.r_hat.clone(), -cal.delta_phi_bar_hat.value(), sigma);
    let q = estimate_q(&model(cal.sigma_hat)?, cfg)?.q;
    let se = if sigma_se.is_finite() && sigma_se > 0.0 {
        let shifted = estimate_q(&model(cal.sigma_hat + sigma_se)?, cfg)?.q;
        Some((shifted - q).abs())
    } else {
        None
    };
    Ok((q, se))
}

/// Status of a table or surface sweep.
pub struct SweepSummary {
    pub cells: Vec<CellResult>,
}

impl SweepSummary {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.estimate().is_none()).count()
    }
}

/// Runs every `(ν, I_off)` cell, up to `tables.parallelism` at a time. A
/// failing cell is recorded and the rest still run. Cell `k` uses seed
/// `seed + k`.
pub fn sweep_cells(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<SweepSummary> {
    let tables = cfg.tables.clone().unwrap_or_default();
    let points: Vec<(f64, f64)> = tables
        .nus_ghz
        .iter()
        .flat_map(|&nu| tables.i_offs_ma.iter().map(move |&i| (nu, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(tables.parallelism)
        .build()
        .map_err(|e| Error::Numerical(e.to_string()).in_stage("sweep"))?;
    let prefix = cfg.kind.name();
    let dir = out.dir().to_path_buf();
    let cells: Vec<Result<CellResult>> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(k, &(nu, i_off))| {
                let cell = run_cell(cfg, nu, i_off, cfg.seed.wrapping_add(k as u64));
                write_cell(&dir, prefix, &cell)?;
                Ok(cell)
            })
            .collect()
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    for c in &cells {
        out.record("sweep", &format!("cells/{}.json", c.stem(prefix)));
    }
    Ok(SweepSummary { cells })
}

fn write_cell(dir: &Path, prefix: &str, cell: &CellResult) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(cell)?;
    buf.push(b'\n');
    let path = dir.join("cells").join(format!("{}.json", cell.stem(prefix)));
    crate::io::write_atomic(&path, &buf).map_err(|e| e.in_stage("sweep"))
}

pub(super) fn tables(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<SweepSummary> {
    let summary = sweep_cells(cfg, out)?;
    let name = cfg.kind.name();
    if cfg.wants(OutputFormat::Csv) {
        let mut s = String::from(
            "nu_ghz,i_off_ma,ell_c,pulses_requested,pulses_used,reduced,dt_ps,v_max,v_standard_error,sigma_hat,sigma_standard_error,r2_hat,q,q_standard_error,status\n",
        );
        for c in &summary.cells {
            s.push_str(&format!("{},{},{},{},", fmt_f64(c.nu_ghz), fmt_f64(c.i_off_ma), c.ell_c, c.pulses_requested));
            match c.estimate() {
                Some(e) => {
                    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},ok\n",
                        e.pulses_used,
                        c.reduced,
                        fmt_f64(c.dt_ps),
                        fmt_f64(e.v_max.value),
                        fmt_f64(e.v_max.standard_error),
                        fmt_f64(e.sigma_hat),
                        fmt_f64(e.sigma_standard_error),
                        opt(e.r_hat.get(1).copied()),
                        opt(e.q),
                        opt(e.q_standard_error)
                    ));
                }
                None => s.push_str(&format!(",{},{},,,,,,,,failed\n", c.reduced, fmt_f64(c.dt_ps))),
            }
        }
        out.write("sweep", &format!("{name}.csv"), s.as_bytes())?;
    }
    if cfg.wants(OutputFormat::Json) {
        out.json("sweep", &format!("{name}.json"), &summary.cells)?;
    }
    Ok(summary)
}

/// One surface file per panel, on the coarse grid.
pub(super) fn fig4(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<SweepSummary> {
    let summary = sweep_cells(cfg, out)?;
    for c in &summary.cells {
        let Some(cal) = c.estimate().and_then(|e| e.calibration.as_ref()) else {
            continue;
        };
        if cfg.wants(OutputFormat::Csv) {
            out.write("sweep", &format!("{}.csv", c.stem("fig4")), cal.sweep_csv().as_bytes())?;
        }
    }
    if cfg.wants(OutputFormat::Json) {
        out.json("sweep", "fig4.json", &summary.cells)?;
    }
    Ok(summary)
}
