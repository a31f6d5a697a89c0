#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use susd::density::{DensityConfig, GaussianCondModel};
use susd::envs::{Factor, FactorSpec};
use susd::sac::{SacAgent, SacConfig};
use susd::skills::{factor_batch_stats, lambda_objective, phi_objective, EmbeddingBank, PairBatch, SkillMode};
use susd::tensor::{Activation, Gradients, Mlp, ParamSet, Tape, Tensor};

/// Adds `delta` to entry `idx` of parameter `name`; false when absent.
pub fn bump(ps: &mut ParamSet<f64>, name: &str, idx: usize, delta: f64) -> bool {
    match ps.get_mut(name) {
        Some(t) => {
            t.data_mut()[idx] += delta;
            true
        }
        None => false,
    }
}

/// Norm-wise relative error `|g - g_fd| / max(|g|, |g_fd|)` between the
/// tape gradient and central differences, over the concatenation of
/// every gradient `loss` reports.
///
/// `perturb(obj, name, idx, delta)` shifts one parameter entry in place.
pub fn max_grad_error<T>(
    obj: &mut T,
    loss: impl Fn(&T) -> (f64, Gradients<f64>),
    perturb: impl Fn(&mut T, &str, usize, f64),
    h: f64,
) -> (f64, usize) {
    let (_, grads) = loss(obj);
    let names: Vec<String> = grads.names().cloned().collect();
    assert!(!names.is_empty(), "objective has no trainable parameters");
    let mut checked = 0;
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for name in names {
        let g: Tensor<f64> = grads.get(&name).unwrap().clone();
        for (idx, &analytic) in g.data().iter().enumerate() {
            perturb(obj, &name, idx, h);
            let up = loss(obj).0;
            perturb(obj, &name, idx, -2.0 * h);
            let down = loss(obj).0;
            perturb(obj, &name, idx, h);
            let numeric = (up - down) / (2.0 * h);
            diff += (analytic - numeric).powi(2);
            na += analytic * analytic;
            nn += numeric * numeric;
            checked += 1;
        }
    }
    let scale = f64::max(na, nn).sqrt();
    let err = if scale > 0.0 { diff.sqrt() / scale } else { 0.0 };
    (err, checked)
}

/// Replaces every bias with a draw from `±0.1` so no unit sits exactly
/// on a ReLU kink.
pub fn jitter_biases(ps: &mut ParamSet<f64>, rng: &mut impl Rng) {
    for (name, t) in ps.iter_mut() {
        if name.rsplit('.').next().is_some_and(|last| last.starts_with('b')) {
            for v in t.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
}

pub const FD_STEP: f64 = 1e-6;

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn toy_spec() -> FactorSpec {
    FactorSpec::new(vec![Factor::new("a", 0..2, true), Factor::new("b", 2..5, false)], 5).unwrap()
}

/// Two-factor bank with tanh nets; `gain` scales the output layer so the
/// displacement norm can sit on either side of the unit constraint.
fn toy_bank(gain: f64, rng: &mut ChaCha8Rng) -> EmbeddingBank<f64> {
    let spec = toy_spec();
    let nets = spec
        .factors()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut net = Mlp::new(&format!("phi{i}"), &[f.dim(), 8, 8, 2], Activation::Tanh, rng).unwrap();
            for v in net.weight_mut(2).data_mut() {
                *v *= gain;
            }
            net
        })
        .collect();
    EmbeddingBank::from_nets(nets, vec![3000.0, 3000.0], 1e-6).unwrap()
}

fn toy_pairs(b: usize, mode: SkillMode, rng: &mut ChaCha8Rng) -> PairBatch<f64> {
    let z = match mode {
        SkillMode::Continuous => random_matrix(b, 4, 1.5, rng),
        SkillMode::Discrete => {
            let mut data = vec![0.0; b * 4];
            for r in 0..b {
                for f in 0..2 {
                    data[r * 4 + f * 2 + rng.random_range(0..2)] = 1.0;
                }
            }
            Tensor::matrix(b, 4, data).unwrap()
        }
    };
    PairBatch {
        s: random_matrix(b, 5, 1.0, rng),
        s_next: random_matrix(b, 5, 1.0, rng),
        z,
    }
}

/// Every row's displacement norm stays clear of the penalty kink.
fn clear_of_kink(bank: &EmbeddingBank<f64>, batch: &PairBatch<f64>, mode: SkillMode) -> bool {
    let st = factor_batch_stats(bank, &toy_spec(), batch, mode).unwrap();
    st.norms
        .data()
        .iter()
        .all(|n| (n - (1.0 - bank.epsilon())).abs() > 1e-3)
}

fn value_and_grads(tape: &Tape<f64>, v: susd::tensor::Var) -> (f64, Gradients<f64>) {
    (tape.value(v).item(), tape.backward(v).unwrap())
}

/// `(case name, worst relative error, entries checked)` for every
/// trainable objective on 64-bit toy nets.
pub fn gradient_suite() -> Vec<(String, f64, usize)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = toy_spec();

    for (gain, regime) in [(0.2, "slack"), (6.0, "violated")] {
        for mode in [SkillMode::Continuous, SkillMode::Discrete] {
            let mut bank = toy_bank(gain, &mut rng);
            let batch = toy_pairs(16, mode, &mut rng);
            assert!(clear_of_kink(&bank, &batch, mode), "toy batch sits on the penalty kink");
            for i in 0..2 {
                let (e, n) = max_grad_error(
                    &mut bank,
                    |b| {
                        let mut t = Tape::new();
                        let v = phi_objective(&mut t, b, &spec, &batch, mode, i).unwrap();
                        value_and_grads(&t, v)
                    },
                    |b, name, idx, d| {
                        assert!(bump(b.net_mut(i).params_mut(), name, idx, d));
                    },
                    FD_STEP,
                );
                out.push((format!("phi objective {regime} {mode:?} factor {i}"), e, n));
                let (e, n) = max_grad_error(
                    &mut bank,
                    |b| {
                        let mut t = Tape::new();
                        let v = lambda_objective(&mut t, b, &spec, &batch, i).unwrap();
                        value_and_grads(&t, v)
                    },
                    |b, _, _, d| {
                        let l = b.lambdas()[i];
                        b.set_lambda(i, l + d);
                    },
                    FD_STEP,
                );
                out.push((format!("lambda objective {regime} {mode:?} factor {i}"), e, n));
            }
        }
    }

    let cfg = DensityConfig {
        hidden: 8,
        ..Default::default()
    };
    let mut model = GaussianCondModel::<f64>::new(5, &cfg, &mut rng).unwrap();
    jitter_biases(model.net_mut().params_mut(), &mut rng);
    let (s, s2) = (random_matrix(16, 5, 1.0, &mut rng), random_matrix(16, 5, 1.0, &mut rng));
    let (e, n) = max_grad_error(
        &mut model,
        |m| {
            let mut t = Tape::new();
            let v = m.record_nll(&mut t, &s, &s2).unwrap();
            value_and_grads(&t, v)
        },
        |m, name, idx, d| {
            assert!(bump(m.net_mut().params_mut(), name, idx, d));
        },
        FD_STEP,
    );
    out.push(("density nll".into(), e, n));

    let sac_cfg = SacConfig {
        hidden: 8,
        ..Default::default()
    };
    let mut agent = SacAgent::<f64>::new(6, 2, &sac_cfg, &mut rng).unwrap();
    jitter_biases(agent.actor_mut().params_mut(), &mut rng);
    for j in 0..2 {
        jitter_biases(agent.critic_mut(j).params_mut(), &mut rng);
        jitter_biases(agent.target_mut(j).params_mut(), &mut rng);
    }
    let inputs = random_matrix(16, 6, 1.0, &mut rng);
    let next_inputs = random_matrix(16, 6, 1.0, &mut rng);
    let actions = random_matrix(16, 2, 0.9, &mut rng);
    let noise = random_matrix(16, 2, 1.5, &mut rng);
    let reward: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let done: Vec<f64> = (0..16).map(|r| if r % 5 == 0 { 1.0 } else { 0.0 }).collect();
    let target = agent.critic_target(&next_inputs, &reward, &done, &noise).unwrap();

    let (e, n) = max_grad_error(
        &mut agent,
        |a| {
            let mut t = Tape::new();
            let v = a.critic_loss(&mut t, &inputs, &actions, &target).unwrap();
            value_and_grads(&t, v)
        },
        |a, name, idx, d| {
            let j = if name.starts_with("critic0") { 0 } else { 1 };
            assert!(bump(a.critic_mut(j).params_mut(), name, idx, d));
        },
        FD_STEP,
    );
    out.push(("critic loss".into(), e, n));

    let (e, n) = max_grad_error(
        &mut agent,
        |a| {
            let mut t = Tape::new();
            let v = a.actor_loss(&mut t, &inputs, &noise).unwrap().0;
            value_and_grads(&t, v)
        },
        |a, name, idx, d| {
            assert!(bump(a.actor_mut().params_mut(), name, idx, d));
        },
        FD_STEP,
    );
    out.push(("actor loss".into(), e, n));

    let logp = {
        let mut t = Tape::new();
        agent.actor_loss(&mut t, &inputs, &noise).unwrap().1
    };
    let (e, n) = max_grad_error(
        &mut agent,
        |a| {
            let mut t = Tape::new();
            let v = a.alpha_loss(&mut t, &logp).unwrap();
            value_and_grads(&t, v)
        },
        |a, _, _, d| {
            let la = a.log_alpha();
            a.set_log_alpha(la + d);
        },
        FD_STEP,
    );
    out.push(("alpha loss".into(), e, n));
    out
}
