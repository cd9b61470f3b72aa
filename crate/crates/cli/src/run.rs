//! The `run` verb: train an agent or iterate a value flow, writing metrics,
//! checkpoints and a resolved-config snapshot into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ctflow::agents::{
    martingale_orthogonality_train, state_grid, Approximator, Checkpoint, Env, MetricsLog, MetricsRow, ReplayBuffer,
    SacAgent, Td3Agent,
};
use ctflow::dynamics::DiffusionModel;
use ctflow::field::{TabularField, ValueField};
use ctflow::q_estimation::{discretized_picard_iterate, QEstimatorConfig};
use ctflow::value_flow::{holding_atoms, picard_iterate, random_time_picard_iterate, ConvergenceTrace, FlowConfig};

use crate::config::{Algo, ExperimentConfig, VERSION};
use crate::oracle_cmd::dp_oracle;

pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_FILE: &str = "config.resolved.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const VALUE_FILE: &str = "value.json";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
}

/// First line of every output file.
pub fn provenance(cfg: &ExperimentConfig, hash: &str) -> String {
    format!("ctflow {VERSION} config_hash={hash} algo={} seed={}", cfg.algo.name(), cfg.seed)
}

pub fn build_env(cfg: &ExperimentConfig, model: DiffusionModel) -> anyhow::Result<Env> {
    let start = cfg.episode.start.clone().context("episode start must be resolved before building the env")?;
    Ok(Env::new(model, cfg.holding.spec()?, start, cfg.episode.horizon)?
        .with_substep(cfg.episode.substep)
        .with_midpoint(cfg.agent.richardson))
}

/// Execute `cfg` (already resolved) into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<RunSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let hash = cfg.hash();
    let header = provenance(cfg, &hash);
    fs::write(out.join(RESOLVED_FILE), format!("# {header}\n{}", cfg.to_toml()?))?;
    let mut log = MetricsLog::to_file(&out.join(METRICS_FILE), std::slice::from_ref(&header), cfg.output.wall_time)?;
    let model = cfg.env.build()?;
    log::info!("{header}: {} on {}", cfg.algo.name(), model.name());
    let mut rng = ctflow::rng::stream(cfg.seed, 0);
    let checkpoint = match cfg.algo {
        Algo::CtSac => {
            let env = build_env(cfg, model)?;
            let mut agent = SacAgent::new(&env, cfg.agent.clone(), &mut rng)?;
            let mut buffer = ReplayBuffer::new(cfg.agent.buffer_capacity)?;
            agent.train(&env, &mut buffer, cfg.steps, &mut rng, &mut log)?;
            Some(agent.checkpoint(&hash, cfg.steps as u64))
        }
        Algo::CtTd3 => {
            let env = build_env(cfg, model)?;
            let mut agent = Td3Agent::new(&env, cfg.agent.clone(), &mut rng)?;
            let mut buffer = ReplayBuffer::new(cfg.agent.buffer_capacity)?;
            agent.train(&env, &mut buffer, cfg.steps, &mut rng, &mut log)?;
            Some(agent.checkpoint(&hash, cfg.steps as u64))
        }
        Algo::QOrthBaseline => {
            let env = build_env(cfg, model)?;
            let mut buffer = ReplayBuffer::new(cfg.agent.buffer_capacity)?;
            let (v, q) =
                martingale_orthogonality_train(&env, &cfg.agent, cfg.baseline_nodes, &mut buffer, cfg.steps, &mut rng, &mut log)?;
            write_value(out, &header, &v)?;
            Some(Checkpoint::new(cfg.algo.name(), &hash, cfg.steps as u64).with("q", Approximator::Tabular(q)))
        }
        Algo::Picard | Algo::DiscretizedPicard | Algo::RandomTimePicard => {
            let (v, trace) = run_flow(cfg, &model, out)?;
            for r in &trace.rows {
                log.push(MetricsRow {
                    wall_ms: Some(r.wall_ms),
                    sup_err_vs_oracle: r.sup_err_vs_oracle,
                    q_err: r.q_err,
                    loss: Some(r.sup_diff).filter(|d| d.is_finite()),
                    ..MetricsRow::at(r.iter as u64)
                })?;
            }
            if !trace.converged {
                log::warn!("flow did not reach stop_tol within {} iterations", cfg.flow.max_iters);
            }
            write_value(out, &header, &v)?;
            None
        }
    };
    if let Some(ck) = checkpoint.filter(|_| cfg.output.checkpoint) {
        ck.save(&out.join(CHECKPOINT_FILE))?;
    }
    Ok(RunSummary { out_dir: out.to_path_buf(), config_hash: hash, rows: log.rows().to_vec() })
}

fn write_value(out: &Path, header: &str, v: &TabularField) -> anyhow::Result<()> {
    let doc = serde_json::json!({ "provenance": header, "field": v });
    fs::write(out.join(VALUE_FILE), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn run_flow(cfg: &ExperimentConfig, model: &DiffusionModel, out: &Path) -> anyhow::Result<(TabularField, ConvergenceTrace)> {
    let f = &cfg.flow;
    let grid = state_grid(model, f.grid_nodes)?;
    let oracle: Option<ValueField> = if cfg.oracle.enabled {
        let (sol, _) = dp_oracle(cfg, Some(out))?;
        Some(sol.field.into())
    } else {
        None
    };
    let flow = FlowConfig::new(f.tau, f.alpha).with_stop_tol(f.stop_tol).with_max_iters(f.max_iters);
    let v0 = TabularField::constant(grid, 0.0);
    let qcfg = QEstimatorConfig::quadrature(f.u).with_richardson(f.richardson);
    let result = match cfg.algo {
        Algo::Picard => picard_iterate(&v0, model, &flow, oracle.as_ref())?,
        Algo::DiscretizedPicard => discretized_picard_iterate(&v0, model, &flow, &qcfg, oracle.as_ref(), None, cfg.seed)?,
        Algo::RandomTimePicard => {
            let atoms = if f.atoms.is_empty() {
                holding_atoms(&cfg.holding.spec()?, f.atoms_per_bucket)
            } else {
                let w = 1.0 / f.atoms.len() as f64;
                f.atoms.iter().map(|&u| (u, w)).collect()
            };
            random_time_picard_iterate(&v0, model, &flow, &atoms, &qcfg, oracle.as_ref())?
        }
        _ => unreachable!("agents are not flows"),
    };
    Ok(result)
}
