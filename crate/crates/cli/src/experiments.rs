//! One runner per mode. Runners return the files to write; nothing touches
//! the filesystem here except reading model and trace inputs.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use lstmhra_core::analytic::{expected_total, AnalyticReport};
use lstmhra_core::geometry::CellConfig;
use lstmhra_core::montecarlo::{
    analytic_mmtc, compare_analytic, config_label, derive_seed, run_outcomes, Comparison, Summary,
    TrialStats, UrllcLoad,
};
use lstmhra_core::predictor::{
    evaluate, read_network, train, write_network, Evaluation, PredictorNetwork,
};
use lstmhra_core::protocol::{Scheme, SlotConfig, SlotOutcome};
use lstmhra_core::traffic::{generate_trace, TrafficTrace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Mode};

/// A file to be written, relative to the output directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub path: PathBuf,
    pub contents: String,
}

impl Artifact {
    fn new(path: impl Into<PathBuf>, contents: String) -> Self {
        Self {
            path: path.into(),
            contents,
        }
    }
}

const SCHEMES: [Scheme; 2] = [Scheme::LstmhRa, Scheme::Random];

pub const FIG6_HEADER: &str = "radius_m,preambles,scheme,sim_mean,ci_lo,ci_hi,analytic";
pub const FIG7_HEADER: &str = "radius_m,power_levels,scheme,sim_mean,ci_lo,ci_hi,analytic";
pub const FIG8_HEADER: &str =
    "radius_m,active,n_mmtc,n_urllc,scheme,sim_mean,ci_lo,ci_hi,analytic,sim_mmtc_mean,urllc_success_rate";
pub const FIG4_HEADER: &str =
    "lambda,p_lstm,p_lstm_peak,rms_error,rms_error_actual,final_loss,test_slots";
pub const EVAL_HEADER: &str = "samples,p_lstm,p_lstm_peak,rms_error,rms_error_actual";

pub fn run(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    log::info!(
        "running {} with master seed {}",
        config.mode.name(),
        config.master_seed
    );
    match config.mode {
        Mode::Simulate => simulate(config),
        Mode::Analytic => analytic(config),
        Mode::Compare => compare(config),
        Mode::TrainPredictor => train_predictor(config),
        Mode::EvalPredictor => eval_predictor(config),
        Mode::Fig4 => fig4(config),
        Mode::Fig6 => fig6(config),
        Mode::Fig7 => fig7(config),
        Mode::Fig8 => fig8(config),
    }
}

fn slot_config(
    config: &ExperimentConfig,
    radius_m: f64,
    preambles: usize,
    power_levels: usize,
    n_mmtc: usize,
    scheme: Scheme,
) -> Result<SlotConfig> {
    config
        .slot_config(radius_m, preambles, power_levels, n_mmtc, scheme)
        .map_err(anyhow::Error::msg)
}

fn base_slot_config(config: &ExperimentConfig) -> Result<SlotConfig> {
    let s = &config.system;
    slot_config(
        config,
        s.radius_m,
        s.preambles,
        s.power_levels,
        s.n_mmtc,
        s.scheme,
    )
}

fn urllc_load(config: &ExperimentConfig) -> UrllcLoad {
    UrllcLoad::UnderPrediction {
        count: config.system.n_urllc as u32,
        p_lstm: config.system.p_lstm,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn interval(s: &Summary) -> String {
    format!("{:.6},{:.6},{:.6}", s.mean, s.ci_low, s.ci_high)
}

fn simulate(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let slot = base_slot_config(config)?;
    let outcomes = run_outcomes(
        &slot,
        &urllc_load(config),
        config.trials,
        config.master_seed,
    )?;
    let mut slots = format!("{}\n", SlotOutcome::CSV_HEADER);
    for (i, o) in outcomes.iter().enumerate() {
        slots.push_str(&o.csv_row(i as u64));
        slots.push('\n');
    }
    let stats = TrialStats::from_outcomes(config_label(&slot), &outcomes);
    let mut summary = String::from(
        "scheme,trials,decoded_mean,std_error,ci_lo,ci_hi,urllc_success_rate,total_mean\n",
    );
    let d = &stats.decoded_mmtc;
    let _ = writeln!(
        summary,
        "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
        slot.scheme.label(),
        stats.sample_count,
        d.mean,
        opt(d.std_error),
        d.ci_low,
        d.ci_high,
        stats.urllc_success_rate,
        stats.total_success.mean,
    );
    Ok(vec![
        Artifact::new("simulate.csv", slots),
        Artifact::new("summary.csv", summary),
    ])
}

fn analytic(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let s = &config.system;
    let cell = CellConfig::new(s.radius_m, s.ta_unit_m)?;
    let report = expected_total(
        s.n_mmtc,
        s.n_urllc,
        s.p_lstm,
        s.preambles,
        s.power_levels,
        &cell,
    )?;
    let mut terms = String::from("u,t,p_occupancy,p_allocation,expected_success\n");
    for t in &report.terms {
        let _ = writeln!(
            terms,
            "{},{},{:e},{:e},{:.6}",
            t.u, t.t, t.p_occupancy, t.p_allocation, t.expected_success
        );
    }
    Ok(vec![
        Artifact::new(
            "analytic.csv",
            format!("{}\n{}\n", AnalyticReport::CSV_HEADER, report.csv_row()),
        ),
        Artifact::new("analytic_terms.csv", terms),
    ])
}

fn compare(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let slot = base_slot_config(config)?;
    let c = compare_analytic(&slot, config.trials, config.master_seed)?;
    Ok(vec![Artifact::new(
        "compare.csv",
        format!("{}\n{}\n", Comparison::CSV_HEADER, c.csv_row(&slot)),
    )])
}

/// Simulated decoded-mMTC interval and, for the scheme the model covers,
/// the closed-form expectation.
fn mmtc_point(slot: &SlotConfig, trials: usize, seed: u64) -> Result<(Summary, Option<f64>)> {
    let outcomes = run_outcomes(slot, &UrllcLoad::default(), trials, seed)?;
    let stats = TrialStats::from_outcomes("", &outcomes);
    Ok((stats.decoded_mmtc, analytic_mmtc(slot)?))
}

fn fig6(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let s = &config.system;
    let mut csv = format!("{FIG6_HEADER}\n");
    let mut point = 0u64;
    for &r in &config.sweep.radius_m {
        for &tau in &config.sweep.preambles {
            // both schemes see the same arrivals
            let seed = derive_seed(config.master_seed, point);
            point += 1;
            for scheme in SCHEMES {
                let slot = slot_config(config, r, tau, s.power_levels, s.n_mmtc, scheme)?;
                let (sim, model) = mmtc_point(&slot, config.trials, seed)?;
                log::info!("fig6 R={r} tau_p={tau} {}: {:.3}", scheme.label(), sim.mean);
                let _ = writeln!(
                    csv,
                    "{r},{tau},{},{},{}",
                    scheme.label(),
                    interval(&sim),
                    opt(model)
                );
            }
        }
    }
    Ok(vec![Artifact::new("fig6.csv", csv)])
}

fn fig7(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let s = &config.system;
    let mut csv = format!("{FIG7_HEADER}\n");
    let mut point = 0u64;
    for &r in &config.sweep.radius_m {
        for &levels in &config.sweep.power_levels {
            let seed = derive_seed(config.master_seed, point);
            point += 1;
            for scheme in SCHEMES {
                let slot = slot_config(config, r, s.preambles, levels, s.n_mmtc, scheme)?;
                let (sim, model) = mmtc_point(&slot, config.trials, seed)?;
                log::info!("fig7 R={r} L={levels} {}: {:.3}", scheme.label(), sim.mean);
                let _ = writeln!(
                    csv,
                    "{r},{levels},{},{},{}",
                    scheme.label(),
                    interval(&sim),
                    opt(model)
                );
            }
        }
    }
    Ok(vec![Artifact::new("fig7.csv", csv)])
}

fn fig8(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let s = &config.system;
    let mut csv = format!("{FIG8_HEADER}\n");
    let mut point = 0u64;
    for &r in &config.sweep.radius_m {
        let cell = CellConfig::new(r, s.ta_unit_m)?;
        for &active in &config.sweep.active {
            let n_mmtc = active - s.n_urllc;
            let seed = derive_seed(config.master_seed, point);
            point += 1;
            for scheme in SCHEMES {
                let slot = slot_config(config, r, s.preambles, s.power_levels, n_mmtc, scheme)?;
                let outcomes = run_outcomes(&slot, &urllc_load(config), config.trials, seed)?;
                let stats = TrialStats::from_outcomes("", &outcomes);
                let model = match analytic_mmtc(&slot)? {
                    Some(_) => Some(
                        expected_total(
                            n_mmtc,
                            s.n_urllc,
                            s.p_lstm,
                            s.preambles,
                            s.power_levels,
                            &cell,
                        )?
                        .expected_total,
                    ),
                    None => None,
                };
                log::info!(
                    "fig8 R={r} N_a={active} {}: {:.3}",
                    scheme.label(),
                    stats.total_success.mean
                );
                let _ = writeln!(
                    csv,
                    "{r},{active},{n_mmtc},{},{},{},{},{:.6},{:.6}",
                    s.n_urllc,
                    scheme.label(),
                    interval(&stats.total_success),
                    opt(model),
                    stats.decoded_mmtc.mean,
                    stats.urllc_success_rate,
                );
            }
        }
    }
    Ok(vec![Artifact::new("fig8.csv", csv)])
}

fn load_trace(path: &PathBuf) -> Result<TrafficTrace> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading trace {}", path.display()))?;
    TrafficTrace::from_text(&text).with_context(|| format!("parsing trace {}", path.display()))
}

/// Trains a fresh network on `trace`; the initialization and shuffling
/// stream is derived from `seed`.
fn train_on(
    config: &ExperimentConfig,
    trace: &TrafficTrace,
    seed: u64,
) -> Result<(PredictorNetwork, Vec<f64>)> {
    let p = &config.predictor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PredictorNetwork::random(p.shape(), &mut rng)?;
    let history = train(&mut net, trace, &p.training(), &mut rng)?;
    Ok((net, history))
}

fn eval_row(e: &Evaluation) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6}",
        e.samples, e.p_lstm, e.p_lstm_peak, e.rms_error, e.rms_error_actual
    )
}

fn train_predictor(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let p = &config.predictor;
    let trace = match &p.trace {
        Some(path) => load_trace(path)?,
        None => generate_trace(
            p.lambda,
            p.train_slots,
            &mut ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, 0)),
        )?,
    };
    let (net, history) = train_on(config, &trace, derive_seed(config.master_seed, 1))?;
    let mut loss = String::from("epoch,rms_loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(loss, "{},{l:.6}", i + 1);
    }
    Ok(vec![
        Artifact::new(p.model.clone(), write_network(&net)),
        Artifact::new("training_loss.csv", loss),
    ])
}

fn eval_predictor(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let p = &config.predictor;
    let model_path = config.output_dir.join(&p.model);
    let text = std::fs::read_to_string(&model_path)
        .with_context(|| format!("reading model {}", model_path.display()))?;
    let net =
        read_network(&text).with_context(|| format!("parsing model {}", model_path.display()))?;
    let trace = match &p.trace {
        Some(path) => load_trace(path)?,
        None => generate_trace(
            p.lambda,
            p.test_slots,
            &mut ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, 2)),
        )?,
    };
    let e = evaluate(&net, &trace, p.horizon)?;
    Ok(vec![Artifact::new(
        "evaluation.csv",
        format!("{EVAL_HEADER}\n{}\n", eval_row(&e)),
    )])
}

fn fig4(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let p = &config.predictor;
    let mut csv = format!("{FIG4_HEADER}\n");
    for (i, &lambda) in config.sweep.lambda.iter().enumerate() {
        let base = 3 * i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, base));
        let train_trace = generate_trace(lambda, p.train_slots, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, base + 1));
        let test_trace = generate_trace(lambda, p.test_slots, &mut rng)?;
        let (net, history) = train_on(
            config,
            &train_trace,
            derive_seed(config.master_seed, base + 2),
        )?;
        let e = evaluate(&net, &test_trace, p.horizon)?;
        log::info!("fig4 lambda={lambda}: P_LSTM {:.4}", e.p_lstm);
        let _ = writeln!(
            csv,
            "{lambda},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            e.p_lstm,
            e.p_lstm_peak,
            e.rms_error,
            e.rms_error_actual,
            history.last().copied().unwrap_or(f64::NAN),
            p.test_slots
        );
    }
    Ok(vec![Artifact::new("fig4.csv", csv)])
}
