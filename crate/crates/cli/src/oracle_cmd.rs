//! The `oracle` verb: grid dynamic-programming (and, for the scalar LQ
//! problem, Riccati) reference values, cached on disk by content hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ctflow::agents::state_grid;
use ctflow::oracle::{grid_dp_solve, lq_riccati, DpSolution};
use serde::{Deserialize, Serialize};

use crate::config::{hash_of, EnvSpec, ExperimentConfig, VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct CacheStatus {
    pub key: String,
    pub hit: bool,
    pub path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    version: String,
    key: String,
    solution: DpSolution,
}

/// Everything the DP fixed point depends on.
#[derive(Serialize)]
struct OracleKey<'a> {
    env: &'a EnvSpec,
    grid_nodes: usize,
    refine: usize,
    tau: f64,
    alpha: f64,
    tol: f64,
}

pub fn oracle_key(cfg: &ExperimentConfig) -> String {
    hash_of(&OracleKey {
        env: &cfg.env,
        grid_nodes: cfg.flow.grid_nodes,
        refine: cfg.oracle.refine,
        tau: cfg.oracle.tau.unwrap_or(cfg.flow.tau),
        alpha: cfg.flow.alpha,
        tol: cfg.oracle.tol,
    })
}

/// Grid-DP fixed point on the flow grid refined by `oracle.refine`, read from
/// `<cache_dir>/oracle-<key>.json` when present and written there otherwise.
pub fn dp_oracle(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> anyhow::Result<(DpSolution, CacheStatus)> {
    let key = oracle_key(cfg);
    let path = cache_dir.map(|d| d.join(format!("oracle-{}.json", &key[..16])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) if e.key == key => return Ok((e.solution, CacheStatus { key, hit: true, path })),
            _ => log::warn!("ignoring stale oracle cache {}", p.display()),
        }
    }
    let model = cfg.env.build()?;
    let grid = state_grid(&model, cfg.flow.grid_nodes)?.refine(cfg.oracle.refine)?;
    let tau = cfg.oracle.tau.unwrap_or(cfg.flow.tau);
    let solution = grid_dp_solve(&model, &grid, tau, cfg.flow.alpha, cfg.oracle.tol, cfg.oracle.max_iters)?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        let entry = CacheEntry { version: VERSION.into(), key: key.clone(), solution };
        fs::write(p, serde_json::to_string(&entry)?)?;
        return Ok((entry.solution, CacheStatus { key, hit: false, path }));
    }
    Ok((solution, CacheStatus { key, hit: false, path }))
}

/// Compute (or load) the oracle for `cfg` and print a summary to `w`.
pub fn oracle_cmd<W: Write>(cfg: &ExperimentConfig, cache_dir: &Path, mut w: W) -> anyhow::Result<CacheStatus> {
    if let EnvSpec::Lq1d(p) = &cfg.env {
        let (pp, k) = lq_riccati(p.beta, p.sigma)?;
        writeln!(w, "riccati: p = {pp:.6}, k = {k:.6}, V*(1) = {:.6}", -pp - k)?;
    }
    let (sol, status) = dp_oracle(cfg, Some(cache_dir))?;
    let g = sol.field.grid();
    writeln!(
        w,
        "grid-dp: nodes = {}, tau = {}, alpha = {}, iters = {}, residual = {:.3e} (tol {:.1e})",
        g.len(),
        cfg.oracle.tau.unwrap_or(cfg.flow.tau),
        cfg.flow.alpha,
        sol.iters,
        sol.residual,
        cfg.oracle.tol
    )?;
    let x1: Vec<f64> = g.axes().iter().map(|a| 1.0f64.clamp(a.lo, a.hi)).collect();
    writeln!(w, "grid-dp: V({x1:?}) = {:.6}", sol.field.eval(&x1))?;
    let path = status.path.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
    writeln!(w, "cache {}: key = {} ({path})", if status.hit { "hit" } else { "miss" }, status.key)?;
    Ok(status)
}
