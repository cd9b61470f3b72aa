//! Behavioural checks of the learning agents and their plumbing.

use ctflow::agents::{
    ct_sac_train, evaluate_policy_seeded, Activation, AgentConfig, ApproxSpec, Checkpoint, CriticModel, Env,
    ReplayBuffer, SacAgent, Td3Agent,
};
use ctflow::dynamics::{
    drift_chain, em_step, lq1d, Action, ChainParams, HoldingTimeSpec, LqParams, StartState, Transition,
};
use ctflow::hamiltonian::entropy;
use ctflow::rng::stream;

fn chain_env() -> Env {
    let m = drift_chain(&ChainParams::default()).unwrap();
    let spec = HoldingTimeSpec::mixture(0.05, 0.25, [0.4, 0.4, 0.2]).unwrap();
    Env::new(m, spec, StartState::Uniform { lo: vec![-2.0], hi: vec![2.0] }, 2.0).unwrap()
}

fn lq_env() -> Env {
    let m = lq1d(&LqParams { action_points: 21, ..Default::default() }).unwrap();
    let spec = HoldingTimeSpec::mixture(0.05, 0.25, [0.4, 0.4, 0.2]).unwrap();
    Env::new(m, spec, StartState::Uniform { lo: vec![-2.0], hi: vec![2.0] }, 1.0).unwrap()
}

fn tabular_sac(alpha: f64) -> AgentConfig {
    AgentConfig {
        alpha,
        lr_critic: 0.1,
        batch_size: 16,
        critic: ApproxSpec::Tabular { nodes: 17 },
        warmup_steps: 200,
        eval_every: 500,
        eval_episodes: 5,
        ..Default::default()
    }
}

fn filled_buffer(env: &Env, n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = stream(seed, 1);
    let mut buf = ReplayBuffer::new(n).unwrap();
    let acts = env.model.actions();
    let mut x = env.reset(&mut rng);
    for i in 0..n {
        let a = acts.indexed(i % acts.len());
        let t = env.step(&x, &a, &mut rng).unwrap();
        x.clone_from(&t.x_next);
        buf.push(t);
    }
    buf
}

#[test]
fn replay_sampling_is_reproducible_and_fifo() {
    let env = chain_env();
    let a = filled_buffer(&env, 300, 3);
    let b = filled_buffer(&env, 300, 3);
    assert!(a.iter().eq(b.iter()));
    let ia = a.sample_indices(64, &mut stream(9, 0));
    let ib = b.sample_indices(64, &mut stream(9, 0));
    assert_eq!(ia, ib);
    assert!(ia.iter().all(|&i| i < 300));

    let mut small = ReplayBuffer::new(3).unwrap();
    for t in a.iter().take(5) {
        small.push(t.clone());
    }
    let kept: Vec<&Transition> = small.iter().collect();
    let expect: Vec<&Transition> = a.iter().skip(2).take(3).collect();
    assert_eq!(kept, expect);
}

#[test]
fn training_is_reproducible_per_seed() {
    let env = chain_env();
    let run = |seed| {
        let mut buf = ReplayBuffer::new(10_000).unwrap();
        ct_sac_train(&env, &tabular_sac(0.05), &mut buf, 1500, &mut stream(seed, 0)).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.critic.params(), b.critic.params());
    assert_eq!(a.log.rows(), b.log.rows());
    assert_ne!(a.critic.params(), c.critic.params());
}

#[test]
fn mirrored_twin_critics_stay_identical_without_noise() {
    let env = lq_env();
    let net = ApproxSpec::Mlp { hidden: vec![8, 8], activation: Activation::Tanh };
    let cfg = AgentConfig {
        expl_std: 0.0,
        target_noise_std: 0.0,
        actor_delay: 1,
        batch_size: 16,
        critic: net.clone(),
        actor: net,
        ..Default::default()
    };
    let mut agent = Td3Agent::new(&env, cfg, &mut stream(5, 0)).unwrap();
    agent.mirror_critics();
    let mut rng = stream(5, 1);
    let mut buf = ReplayBuffer::new(1000).unwrap();
    let mut x = env.reset(&mut rng);
    for step in 1..=200 {
        let a = Action::continuous(agent.actor().act_values(&x));
        let t = env.step(&x, &a, &mut rng).unwrap();
        x.clone_from(&t.x_next);
        buf.push(t);
        if buf.len() >= 16 {
            agent.update(&buf, step, &mut rng).unwrap();
        }
    }
    let [c1, c2] = agent.critics();
    assert_eq!(c1.net().params(), c2.net().params());
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let env = chain_env();
    let mut rng = stream(8, 0);
    let mut agent = SacAgent::new(&env, tabular_sac(0.05), &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(10_000).unwrap();
    agent.train(&env, &mut buf, 1000, &mut rng, &mut Default::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    agent.checkpoint("abc", 1000).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config_hash, "abc");

    let mut fresh = SacAgent::new(&env, tabular_sac(0.05), &mut stream(99, 0)).unwrap();
    fresh.restore(&loaded).unwrap();
    let before = evaluate_policy_seeded(&env, &agent.greedy_policy(), 10, &env.holding, 4).unwrap();
    let after = evaluate_policy_seeded(&env, &fresh.greedy_policy(), 10, &env.holding, 4).unwrap();
    assert_eq!(before.mean.to_bits(), after.mean.to_bits());
    assert_eq!(before.std.to_bits(), after.std.to_bits());
}

#[test]
fn checkpoint_rejects_other_formats() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    std::fs::write(&path, r#"{"format":"other/9","algo":"x","config_hash":"","step":0,"parts":{}}"#).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn large_temperature_gives_near_uniform_policy() {
    let env = chain_env();
    let mut buf = ReplayBuffer::new(10_000).unwrap();
    let out = ct_sac_train(&env, &tabular_sac(100.0), &mut buf, 1000, &mut stream(2, 0)).unwrap();
    let agent_policy = out.policy;
    let uniform = (env.model.actions().len() as f64).ln();
    for i in 0..=20 {
        let x = [-2.0 + 0.2 * i as f64];
        let p = agent_policy.probs(&x);
        assert!(entropy(&p) >= 0.95 * uniform, "entropy {} at {x:?}", entropy(&p));
    }
}

#[test]
fn critic_loss_does_not_increase_on_a_frozen_batch() {
    let env = chain_env();
    let buf = filled_buffer(&env, 256, 4);
    let batch: Vec<(&Transition, f64)> = buf.iter().map(|t| (t, t.r + 0.5 * t.x[0])).collect();
    let model = &env.model;

    let spec = ApproxSpec::Mlp { hidden: vec![16, 16], activation: Activation::Tanh };
    let mut critic = CriticModel::build(&spec, model, &mut stream(4, 0)).unwrap();
    let mut grad = vec![0.0; critic.n_params()];
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let loss = critic.loss_gradient(&batch, &mut grad);
        assert!(loss <= prev + 1e-12, "loss rose from {prev} to {loss}");
        prev = loss;
        let CriticModel::Mlp(c) = &mut critic else { unreachable!() };
        for (p, g) in c.net_mut().params_mut().iter_mut().zip(&grad) {
            *p -= 0.01 * g;
        }
    }

    let mut table = CriticModel::build(&ApproxSpec::Tabular { nodes: 17 }, model, &mut stream(4, 0)).unwrap();
    let mut grad = vec![0.0; table.n_params()];
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let loss = table.loss_gradient(&batch, &mut grad);
        assert!(loss <= prev + 1e-12, "loss rose from {prev} to {loss}");
        prev = loss;
        let CriticModel::Tabular(c) = &mut table else { unreachable!() };
        for (p, g) in c.values_mut().iter_mut().zip(&grad) {
            *p -= 0.5 * g;
        }
    }
}

#[test]
fn orthogonality_residual_mean_shrinks_with_holding_time() {
    use ctflow::agents::orthogonality_residual;
    use ctflow::field::ValueField;
    use ctflow::hamiltonian::exact_q;
    use ctflow::oracle::{lq_riccati, riccati_field};

    // On the LQ problem with the Riccati value, one exact Euler-Maruyama step
    // gives E[delta] = -p a^2 u^2, so the mean residual per unit time is -p a^2 u.
    let model = lq1d(&LqParams::default()).unwrap();
    let (p, k) = lq_riccati(1.0, 1.0).unwrap();
    let v: ValueField = riccati_field(p, k).into();
    let (x, a) = ([0.5], [1.0]);
    let q = exact_q(&model, &v, &x, &a).unwrap();
    let r = model.reward(&x, &a);
    let n = 200_000;
    let mut last = f64::INFINITY;
    for u in [0.2, 0.1, 0.05] {
        let mut rng = stream(12, 0);
        let deltas: Vec<f64> = (0..n)
            .map(|_| {
                let y = em_step(&model, &x, &a, u, &mut rng).unwrap();
                orthogonality_residual(v.eval(&x), v.eval(&y), q, r, u, 1.0) / u
            })
            .collect();
        let mean = deltas.iter().sum::<f64>() / n as f64;
        let se = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        let expect = -p * a[0] * a[0] * u;
        assert!((mean - expect).abs() <= 4.0 * se, "u={u}: mean {mean}, expected {expect} (se {se})");
        assert!(mean.abs() < last, "u={u}: |mean| {} did not shrink from {last}", mean.abs());
        last = mean.abs();
    }
}
