//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line; the test fails if any criterion does.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use ctflow::agents::{
    actor_slope, ct_sac_train, ct_td3_train, evaluate_policy_seeded, Activation, AgentConfig, ApproxSpec, Env,
    ReplayBuffer,
};
use ctflow::dynamics::{drift_chain, lq1d, ChainParams, FnPolicy, HoldingTimeSpec, LqParams, StartState};
use ctflow::field::TabularField;
use ctflow::grid::Grid;
use ctflow::oracle::{greedy_actions, grid_dp_solve, lq_riccati};
use ctflow::value_flow::fit_geometric_rate;
use ctflow::verify::run_suite;
use ctflow_cli::run::VALUE_FILE;
use ctflow_cli::{run, ExperimentConfig, RunSummary};

struct Outcome {
    pass: bool,
    detail: String,
}

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, limit: Duration, f: impl FnOnce() -> anyhow::Result<Outcome>) {
        let start = Instant::now();
        let out = f().unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e:#}") });
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = out.pass && in_time;
        let verdict = if pass { "PASS" } else { "FAIL" };
        let timing = if in_time { String::new() } else { format!(" [over the {limit:?} limit]") };
        println!("{verdict} {id:>2} {name}: {} ({took:.2?}){timing}", out.detail);
        if !pass {
            self.failures.push(format!("{id} {name}"));
        }
    }
}

fn suite(name: &str) -> anyhow::Result<Outcome> {
    let rows = run_suite(name)?;
    let detail = rows
        .iter()
        .map(|r| format!("{} = {:.4e} {}", r.property, r.measured, r.bound_text()))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Outcome { pass: rows.iter().all(|r| r.pass), detail })
}

fn config(src: &str) -> ExperimentConfig {
    ExperimentConfig::parse(src).unwrap().resolve().unwrap()
}

fn final_sup_err(s: &RunSummary) -> f64 {
    s.rows.last().and_then(|r| r.sup_err_vs_oracle).expect("flow run records oracle errors")
}

fn value_field(dir: &Path) -> TabularField {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(VALUE_FILE)).unwrap()).unwrap();
    serde_json::from_value(doc["field"].clone()).unwrap()
}

fn copy_oracle_cache(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap().flatten() {
        let name = e.file_name();
        if name.to_string_lossy().starts_with("oracle-") {
            fs::copy(e.path(), to.join(name)).unwrap();
        }
    }
}

fn picard_convergence(tmp: &Path) -> anyhow::Result<Outcome> {
    let mut errs = Vec::new();
    let mut rates = Vec::new();
    let mut pass = true;
    for tau in [0.04_f64, 0.01] {
        let cfg = config(&format!(
            "schema_version = 1\nalgo = \"picard\"\n[env]\nname = \"drift-chain\"\n\
             [flow]\ntau = {tau}\ngrid_nodes = 33\nstop_tol = 1e-9\n[oracle]\nrefine = 16\ntol = 1e-10\n"
        ));
        let s = run(&cfg, &tmp.join(format!("picard-{tau}")))?;
        let trace: Vec<f64> = s.rows.iter().filter_map(|r| r.sup_err_vs_oracle).collect();
        let rho = fit_geometric_rate(&trace).unwrap_or(f64::INFINITY);
        pass &= rho <= (-tau).exp() + 0.05;
        errs.push(final_sup_err(&s));
        rates.push(rho);
    }
    let ratio = errs[1] / errs[0];
    Ok(Outcome {
        pass: pass && ratio <= 0.7,
        detail: format!(
            "err(0.04) = {:.4e}, err(0.01) = {:.4e}, ratio = {ratio:.3} <= 0.7; rate(0.04) = {:.5} <= {:.5}, rate(0.01) = {:.5} <= {:.5}",
            errs[0],
            errs[1],
            rates[0],
            (-0.04f64).exp() + 0.05,
            rates[1],
            (-0.01f64).exp() + 0.05
        ),
    })
}

fn lq_value(tmp: &Path) -> anyhow::Result<Outcome> {
    let cfg = config(
        "schema_version = 1\nalgo = \"picard\"\n[env]\nname = \"lq1d\"\n\
         [flow]\ntau = 0.005\nalpha = 0.0\ngrid_nodes = 61\nstop_tol = 1e-8\n[oracle]\nenabled = false\n",
    );
    let dir = tmp.join("lq");
    run(&cfg, &dir)?;
    let v1 = value_field(&dir).eval(&[1.0]);
    let (p, k) = lq_riccati(1.0, 1.0)?;
    let target = -p - k;
    let rel = (v1 - target).abs() / target.abs();
    Ok(Outcome { pass: rel <= 0.05, detail: format!("V(1) = {v1:.5}, -p-k = {target:.5}, relative error {rel:.4} <= 0.05") })
}

fn random_time(tmp: &Path) -> anyhow::Result<Outcome> {
    let base = "schema_version = 1\n[env]\nname = \"drift-chain\"\n[oracle]\nrefine = 2\ntau = 0.005\ntol = 1e-10\n";
    let flow = "tau = 0.05\nalpha = 0.0\ngrid_nodes = 321\nstop_tol = 1e-9\nu = 0.1\n";
    let fixed_cfg = config(&format!("algo = \"discretized-picard\"\n{base}[flow]\n{flow}"));
    let mix_cfg = config(&format!("algo = \"random-time-picard\"\n{base}[flow]\n{flow}atoms = [0.05, 0.1]\n"));
    let degenerate_cfg = config(&format!(
        "algo = \"random-time-picard\"\n{base}[holding]\nu_min = 0.1\nu_max = 0.1\n[flow]\n{flow}"
    ));
    let fixed_dir = tmp.join("rt-fixed");
    let fixed = run(&fixed_cfg, &fixed_dir)?;
    copy_oracle_cache(&fixed_dir, &tmp.join("rt-mix"));
    copy_oracle_cache(&fixed_dir, &tmp.join("rt-degenerate"));
    let mix = run(&mix_cfg, &tmp.join("rt-mix"))?;
    let degenerate = run(&degenerate_cfg, &tmp.join("rt-degenerate"))?;
    let (e_fixed, e_mix) = (final_sup_err(&fixed), final_sup_err(&mix));
    let bitwise = value_field(&fixed_dir).values() == value_field(&tmp.join("rt-degenerate")).values()
        && fixed.rows.len() == degenerate.rows.len()
        && fixed.rows.iter().zip(&degenerate.rows).all(|(a, b)| {
            a.sup_err_vs_oracle.map(f64::to_bits) == b.sup_err_vs_oracle.map(f64::to_bits)
                && a.loss.map(f64::to_bits) == b.loss.map(f64::to_bits)
        });
    Ok(Outcome {
        pass: e_mix <= e_fixed && bitwise && mix.rows.len() < mix_cfg.flow.max_iters,
        detail: format!(
            "mixture error {e_mix:.4e} <= fixed u=0.1 error {e_fixed:.4e}; degenerate law bitwise equal to fixed u: {bitwise}"
        ),
    })
}

fn holding() -> HoldingTimeSpec {
    HoldingTimeSpec::mixture(0.05, 0.25, [0.4, 0.4, 0.2]).unwrap()
}

fn end_to_end() -> anyhow::Result<Outcome> {
    // CT-SAC, tabular critic, on the drift chain with irregular holding times.
    let limit = Duration::from_secs(300);
    let start = Instant::now();
    let model = drift_chain(&ChainParams::default())?;
    let env = Env::new(model.clone(), holding(), StartState::Uniform { lo: vec![-2.0], hi: vec![2.0] }, 5.0)?;
    let grid = Grid::uniform_1d(-2.0, 2.0, 129)?;
    let sol = grid_dp_solve(&model, &grid, 0.01, 0.0, 1e-9, 1_000_000)?;
    let greedy = greedy_actions(&model, &sol, 0.01)?;
    let acts = model.actions().clone();
    let oracle_policy = FnPolicy(move |x: &[f64]| {
        let mut st = Vec::new();
        grid.stencil(x, &mut st);
        let node = st.iter().max_by(|a, b| a.1.total_cmp(&b.1)).expect("stencil is never empty").0;
        acts.indexed(greedy[node])
    });
    let oracle = evaluate_policy_seeded(&env, &oracle_policy, 100, &env.holding, 99)?.mean;
    let mut pass = true;
    let mut sac = Vec::new();
    for seed in 0..3 {
        let cfg = AgentConfig {
            tau: 0.05,
            alpha: 0.02,
            lr_critic: 0.1,
            batch_size: 32,
            critic: ApproxSpec::Tabular { nodes: 33 },
            warmup_steps: 2000,
            eval_every: 5000,
            ..Default::default()
        };
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
        let out = ct_sac_train(&env, &cfg, &mut buffer, 20_000, &mut ctflow::rng::stream(seed, 0))?;
        let ret = evaluate_policy_seeded(&env, &out.policy, 100, &env.holding, 99)?.mean;
        let rel = (ret - oracle).abs() / oracle.abs();
        pass &= rel <= 0.10;
        sac.push(format!("{ret:.4} ({:.1}%)", 100.0 * rel));
    }

    let sac_time = start.elapsed();

    // CT-TD3 on the scalar LQ problem.
    let start = Instant::now();
    let lq = lq1d(&LqParams::default())?;
    let env = Env::new(lq, holding(), StartState::Uniform { lo: vec![-2.0], hi: vec![2.0] }, 3.0)?;
    let xs: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.1).collect();
    let mut slopes = Vec::new();
    for seed in 0..3 {
        let net = ApproxSpec::Mlp { hidden: vec![32, 32], activation: Activation::Tanh };
        let cfg = AgentConfig {
            tau: 0.1,
            alpha: 0.0,
            batch_size: 32,
            critic: net.clone(),
            actor: net,
            warmup_steps: 1000,
            eval_every: 2000,
            ..Default::default()
        };
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
        let out = ct_td3_train(&env, &cfg, &mut buffer, 10_000, &mut ctflow::rng::stream(seed, 0))?;
        let slope = actor_slope(&out.actor, &xs);
        pass &= slope < 0.0;
        slopes.push(format!("{slope:.3}"));
    }
    let td3_time = start.elapsed();
    Ok(Outcome {
        pass: pass && sac_time <= limit && td3_time <= limit,
        detail: format!(
            "CT-SAC greedy returns [{}] vs oracle policy {oracle:.4} (within 10%, {sac_time:.1?}); \
             CT-TD3 actor slopes [{}] < 0 ({td3_time:.1?})",
            sac.join(", "),
            slopes.join(", ")
        ),
    })
}

fn determinism(tmp: &Path) -> anyhow::Result<Outcome> {
    let configs = [
        (
            "ct-sac",
            "schema_version = 1\nalgo = \"ct-sac\"\nseed = 4\nsteps = 3000\n[env]\nname = \"drift-chain\"\n\
             [agent]\nwarmup_steps = 500\neval_every = 1000\nlr_critic = 0.1\ncritic = { kind = \"tabular\", nodes = 17 }\n",
        ),
        (
            "ct-td3",
            "schema_version = 1\nalgo = \"ct-td3\"\nsteps = 1500\n[env]\nname = \"lq1d\"\naction_points = 21\n\
             [agent]\nwarmup_steps = 500\neval_every = 500\ncritic = { kind = \"mlp\", hidden = [16, 16] }\n\
             actor = { kind = \"mlp\", hidden = [16, 16] }\n",
        ),
        (
            "q-orth-baseline",
            "schema_version = 1\nalgo = \"q-orth-baseline\"\nsteps = 3000\n[env]\nname = \"drift-chain\"\n\
             [agent]\nwarmup_steps = 500\neval_every = 1000\nlr_critic = 0.1\nlr_actor = 0.1\n",
        ),
        (
            "discretized-picard",
            "schema_version = 1\nalgo = \"discretized-picard\"\n[env]\nname = \"drift-chain\"\n\
             [flow]\ntau = 0.02\nstop_tol = 1e-6\n",
        ),
    ];
    let bin = env!("CARGO_BIN_EXE_ctflow");
    let mut same = Vec::new();
    for (name, src) in configs {
        let path = tmp.join(format!("{name}.toml"));
        fs::write(&path, src)?;
        let mut bytes = Vec::new();
        for rep in 0..2 {
            let out = tmp.join(format!("det-{name}-{rep}"));
            let status = Command::new(bin)
                .args(["run", "--config"])
                .arg(&path)
                .args(["--seed", "7", "--out"])
                .arg(&out)
                .stdout(Stdio::null())
                .status()?;
            anyhow::ensure!(status.success(), "{name} run {rep} exited with {status}");
            bytes.push(fs::read(out.join("metrics.csv"))?);
        }
        same.push((name, bytes[0] == bytes[1] && bytes[0].len() > 200));
    }
    Ok(Outcome {
        pass: same.iter().all(|s| s.1),
        detail: same.iter().map(|(n, s)| format!("{n}: {}", if *s { "identical" } else { "differs" })).collect::<Vec<_>>().join(", "),
    })
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let secs = Duration::from_secs;
    let mut r = Report { failures: Vec::new() };
    r.check(1, "Richardson bias order", secs(10), || suite("richardson-slope"));
    r.check(2, "semigroup contraction", secs(30), || suite("contraction"));
    r.check(3, "single-critic equivalence", secs(10), || suite("decomposition"));
    r.check(4, "Picard convergence", secs(60), || picard_convergence(t));
    r.check(5, "LQ value accuracy", secs(60), || lq_value(t));
    r.check(6, "Euler-Maruyama strong order", secs(60), || suite("em-order"));
    r.check(7, "Lipschitz-in-V constants", secs(10), || suite("lipschitz-q"));
    r.check(8, "KL variational identity", secs(10), || suite("kl-identity"));
    r.check(9, "random-time Picard", secs(60), || random_time(t));
    r.check(10, "end-to-end learning", secs(600), end_to_end);
    r.check(11, "determinism", secs(300), || determinism(t));
    assert!(r.failures.is_empty(), "failed criteria: {:?}", r.failures);
}
