//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line to stderr (outside the test harness capture) and then asserts.
//! Tests share a lock so the timed criteria are not measured under load.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairppo::agents::{partition, AgentProfile};
use fairppo::algorithm::{Algorithm, AlgorithmKind};
use fairppo::benchmarks::{macro_switch_violations, soto_team_probability, Fen, FenConfig, Soto, SotoConfig, TEAM_HEAD};
use fairppo::env::ah::{AhAction, AhConfig, OBS_DIM};
use fairppo::env::hs::{classify, sample_patient, ward_weight, HsConfig, Illness, Impairment, Priority, Routing, Ward};
use fairppo::fairness::{
    cf_penalty, conditional_statistical_disparity, counterfactual_disparity, csp_penalty, demographic_disparity,
    dp_penalty, gini, jfi, nnsw, FairnessMetric, PenaltySpec,
};
use fairppo::fairppo::FairPpo;
use fairppo::harness::output::{summary_header, write_episodes_csv, write_summary_csv};
use fairppo::harness::{sweep, train, EnvKind, ExperimentConfig, RunRecord, Scale};
use fairppo::policy::{
    gradient, policy_forward, Architecture, FairPpoObjective, LambdaMode, Member, Objective, ParameterSet, PpoConfig,
    ProspectiveTerm, Sample,
};
use fairppo::rollout::{ActContext, ActMode, Actor, EnvSpec, World};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---- criterion 1 ----

fn brute_mean(xs: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut s = 0.0;
    let mut n = 0usize;
    for (i, x) in xs.iter().enumerate() {
        if keep(i) {
            s += x;
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}

fn brute_shift(xs: &[f64], strict: bool) -> Vec<f64> {
    let mut m = f64::INFINITY;
    for x in xs {
        if *x < m {
            m = *x;
        }
    }
    let shift = if strict { m < 0.0 } else { m <= 0.0 };
    if shift {
        xs.iter().map(|x| x - m + 1e-9).collect()
    } else {
        xs.to_vec()
    }
}

fn brute_gini(xs: &[f64]) -> f64 {
    let xs = brute_shift(xs, true);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let mut pairs = 0.0;
    for a in &xs {
        for b in &xs {
            pairs += (a - b).abs();
        }
    }
    pairs / (2.0 * n * n * mean)
}

fn brute_jfi(xs: &[f64]) -> f64 {
    let xs = brute_shift(xs, true);
    let s: f64 = xs.iter().sum();
    let q: f64 = xs.iter().map(|x| x * x).sum();
    if q == 0.0 {
        1.0
    } else {
        s * s / (xs.len() as f64 * q)
    }
}

fn brute_nnsw(xs: &[f64]) -> f64 {
    let xs = brute_shift(xs, false);
    let n = xs.len() as f64;
    let prod_root: f64 = xs.iter().map(|x| x.powf(1.0 / n)).product();
    prod_root / (xs.iter().sum::<f64>() / n)
}

#[test]
fn criterion_01_metric_oracles() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut failures = Vec::new();
    let mut check = |what: &str, got: f64, want: f64, worst: &mut f64| {
        let e = rel_err(got, want);
        *worst = worst.max(e);
        if !(e <= 1e-12) {
            failures.push(format!("{what}: {got} vs {want}"));
        }
    };
    for _ in 0..1000 {
        let n = rng.gen_range(2..=12);
        let profiles: Vec<AgentProfile> = (0..n)
            .map(|id| AgentProfile { id, z: rng.gen_bool(0.5), lf: rng.gen_range(0..3), action_count: 2 })
            .collect();
        let ret: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let cf: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let val: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let cf_val: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (alpha, beta) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        let part = partition(&profiles).unwrap();
        let z = |i: usize| profiles[i].z;

        check("gini", gini(&ret).unwrap(), brute_gini(&ret), &mut worst);
        check("jfi", jfi(&ret).unwrap(), brute_jfi(&ret), &mut worst);
        check("nnsw", nnsw(&ret).unwrap(), brute_nnsw(&ret), &mut worst);
        let pos: Vec<f64> = ret.iter().map(|x| x.abs() + 0.1).collect();
        check("gini+", gini(&pos).unwrap(), brute_gini(&pos), &mut worst);
        check("jfi+", jfi(&pos).unwrap(), brute_jfi(&pos), &mut worst);

        let cf_want: f64 = ret.iter().zip(&cf).map(|(a, b)| (a - b).abs()).sum();
        check("cf", counterfactual_disparity(&ret, &cf).unwrap(), cf_want, &mut worst);
        let mut dv = 0.0;
        for i in 0..n {
            dv += (val[i] - cf_val[i]).abs();
        }
        let fpairs: Vec<(f64, f64)> = ret.iter().copied().zip(val.iter().copied()).collect();
        let cpairs: Vec<(f64, f64)> = cf.iter().copied().zip(cf_val.iter().copied()).collect();
        let spec = PenaltySpec::new(FairnessMetric::Cf, alpha, beta);
        check("cf penalty", cf_penalty(&fpairs, &cpairs, &spec).unwrap(), alpha * cf_want + beta * dv, &mut worst);

        let g1 = brute_mean(&ret, |i| z(i));
        let g0 = brute_mean(&ret, |i| !z(i));
        if let (Some(g1), Some(g0)) = (g1, g0) {
            let want = (g1 - g0).abs();
            check("dp", demographic_disparity(&ret, &part).unwrap(), want, &mut worst);
            let v1 = brute_mean(&val, |i| z(i)).unwrap();
            let v0 = brute_mean(&val, |i| !z(i)).unwrap();
            let spec = PenaltySpec::new(FairnessMetric::Dp, alpha, beta);
            check(
                "dp penalty",
                dp_penalty((g1, g0), (v1, v0), &spec).unwrap(),
                alpha * want + beta * (v1 - v0).abs(),
                &mut worst,
            );
        } else {
            assert!(demographic_disparity(&ret, &part).is_err());
        }

        let mut total = 0.0;
        let mut any = false;
        let mut gmap = BTreeMap::new();
        let mut vmap = BTreeMap::new();
        let mut dvs = 0.0;
        for lf in 0..3 {
            let a = brute_mean(&ret, |i| z(i) && profiles[i].lf == lf);
            let b = brute_mean(&ret, |i| !z(i) && profiles[i].lf == lf);
            if let (Some(a), Some(b)) = (a, b) {
                total += (a - b).abs();
                any = true;
                let va = brute_mean(&val, |i| z(i) && profiles[i].lf == lf).unwrap();
                let vb = brute_mean(&val, |i| !z(i) && profiles[i].lf == lf).unwrap();
                dvs += (va - vb).abs();
                gmap.insert(lf, (a, b));
                vmap.insert(lf, (va, vb));
            }
        }
        match conditional_statistical_disparity(&ret, &part) {
            Ok(r) => {
                assert!(any);
                check("csp", r.total, total, &mut worst);
                let spec = PenaltySpec::new(FairnessMetric::Csp, alpha, beta).with_lf_domain(vec![0, 1, 2]);
                check("csp penalty", csp_penalty(&gmap, &vmap, &spec).unwrap(), alpha * total + beta * dvs, &mut worst);
            }
            Err(_) => assert!(!any),
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 5.0;
    report(1, pass, format!("{checked} populations, max rel err {worst:.2e} (tol 1e-12), {secs:.2}s (limit 5s)"));
    assert!(failures.is_empty(), "{:?}", &failures[..failures.len().min(5)]);
    assert!(secs < 5.0);
}

// ---- criterion 2 ----

#[test]
fn criterion_02_fair_ppo_gradients() {
    let _g = serial();
    let start = Instant::now();
    let cfg = PpoConfig::default();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut skipped = 0usize;
    for net in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + net);
        let (obs_dim, actions) = (6, 4);
        let arch = Architecture::new(obs_dim, vec![16, 16], actions);
        let params = ParameterSet::init(arch, &mut rng);
        let obs = |rng: &mut ChaCha8Rng| (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let mut samples = Vec::new();
        while samples.len() < 12 {
            let observation = obs(&mut rng);
            let action = rng.gen_range(0..actions);
            let p = policy_forward(&params, &observation).unwrap()[action];
            // old policy a random perturbation of the current one
            let old_log_prob = p.ln() + rng.gen_range(-0.4..0.4);
            let ratio = (p.ln() - old_log_prob).exp();
            let eps = cfg.clip_epsilon;
            if (ratio - (1.0 - eps)).abs() < 1e-6 || (ratio - (1.0 + eps)).abs() < 1e-6 {
                skipped += 1;
                continue;
            }
            samples.push(Sample {
                observation,
                action,
                old_log_prob,
                advantage: rng.gen_range(-2.0..2.0),
                target: rng.gen_range(-1.0..1.0),
                weight: rng.gen_range(0.5..1.5),
            });
        }
        let term = ProspectiveTerm {
            coefficient: rng.gen_range(0.1..1.0),
            probes: (0..6).map(|_| obs(&mut rng)).collect(),
            members: vec![
                Member { own: vec![0, 1], frozen: vec![] },
                Member { own: vec![2, 3], frozen: vec![rng.gen_range(-1.0..1.0)] },
                Member { own: vec![4], frozen: vec![] },
                Member { own: vec![5], frozen: vec![] },
            ],
            pairs: vec![(vec![0, 1], vec![2, 3]), (vec![0], vec![3])],
        };
        let obj = FairPpoObjective {
            samples: &samples,
            cfg: &cfg,
            lambda: rng.gen_range(0.1..LAMBDA),
            retrospective: rng.gen_range(0.0..1.0),
            prospective: Some(&term),
        };
        let g = gradient(&obj, &params).unwrap();
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let num = (obj.evaluate(&plus).unwrap() - obj.evaluate(&minus).unwrap()) / (2.0 * h);
            let a = g.as_slice()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 60.0;
    report(
        2,
        pass,
        format!("20 networks 6-16-16-4, max rel err {worst:.2e} (tol 1e-4), {skipped} kink samples redrawn, {secs:.1}s (limit 60s)"),
    );
    assert!(worst <= 1e-4);
    assert!(secs < 60.0);
}

const LAMBDA: f64 = 10.0;

// ---- criterion 3 ----

#[test]
fn criterion_03_ppo_recovery() {
    let _g = serial();
    let mut identical = true;
    let mut updates = 0;
    for env in [
        EnvSpec::Ah(AhConfig { episode_length_ts: 40, ..AhConfig::desk() }),
        EnvSpec::Hs(HsConfig::desk()),
    ] {
        let cfg = PpoConfig { minibatch_size: 32, ..PpoConfig::default() };
        let mut ppo = FairPpo::plain(env.clone(), cfg.clone(), &[16, 16], 11).unwrap();
        for metric in [FairnessMetric::Dp, FairnessMetric::Csp, FairnessMetric::Cf] {
            let spec = PenaltySpec::new(metric, 0.0, 0.0).with_lf_domain(env.lf_domain());
            let mut fair = FairPpo::new(env.clone(), cfg.clone(), &[16, 16], Some(spec), LambdaMode::Dynamic, 11).unwrap();
            let mut reference = ppo.clone();
            for ep in 0..10 {
                reference.train_episode(500 + ep, ep as f64 / 10.0).unwrap();
                fair.train_episode(500 + ep, ep as f64 / 10.0).unwrap();
                updates += 1;
                for (a, b) in reference.learners.iter().zip(&fair.learners) {
                    let same = a.params.as_slice().iter().zip(b.params.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
                    identical &= same;
                }
            }
        }
        ppo.train_episode(0, 0.0).unwrap();
    }
    report(3, identical, format!("{updates} paired updates (10 per metric per env), parameters bit-identical: {identical}"));
    assert!(identical);
}

// ---- criterion 4 ----

/// Zeroes the `z` and cooldown input columns of both networks and, when
/// `frozen`, makes every movement action unreachable.
fn z_blind(mut p: ParameterSet, frozen: bool) -> ParameterSet {
    let arch = p.architecture().clone();
    let layout = arch.layout();
    for name in ["policy.0.weight", "value.0.weight"] {
        let t = layout.iter().find(|t| t.name == name).unwrap();
        let (rows, cols) = (t.shape[0], t.shape[1]);
        assert_eq!(cols, OBS_DIM);
        for r in 0..rows {
            for c in [OBS_DIM - 4, OBS_DIM - 3] {
                p.as_mut_slice()[t.offset + r * cols + c] = 0.0;
            }
        }
    }
    if frozen {
        let last = format!("policy.{}.bias", arch.hidden.len());
        let t = layout.iter().find(|t| t.name == last).unwrap();
        for a in [AhAction::Up, AhAction::Down, AhAction::Left, AhAction::Right] {
            p.as_mut_slice()[t.offset + a.index()] = -1e3;
        }
    }
    p
}

#[test]
fn criterion_04_counterfactual_zero() {
    let _g = serial();
    let env = EnvSpec::Ah(AhConfig::desk());
    let spec = PenaltySpec::new(FairnessMetric::Cf, 1.0, 1.0);
    let cfg = PpoConfig::default();
    let measure = |frozen: bool| {
        let mut algo = FairPpo::new(env.clone(), cfg.clone(), &[32, 32], Some(spec.clone()), LambdaMode::Dynamic, 4).unwrap();
        let shared = z_blind(algo.learners[0].params.clone(), frozen);
        for l in &mut algo.learners {
            l.params = shared.clone();
        }
        let mut worst: f64 = 0.0;
        for ep in 0..50 {
            let (retro, pro) = algo.measure_penalty(&spec, 9000 + ep, ActMode::Sample).unwrap();
            worst = worst.max(retro.abs() + pro.abs());
        }
        worst
    };
    let blind = measure(true);
    let mobile = measure(false);
    let pass = blind == 0.0;
    report(
        4,
        pass,
        format!(
            "z-blind stationary policy: max CF penalty over 50 paired episodes = {blind}; \
             z-blind policy with movement (diagnostic): {mobile:.4}"
        ),
    );
    assert_eq!(blind, 0.0);
    // the impairment slows movement, so moving policies see a real gap
    assert!(mobile > 0.0);
}

// ---- criterion 5 ----

fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(c, p)| {
            let e = n as f64 * p;
            (*c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn criterion_05_patient_distribution() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pri = [0usize; 3];
    let mut ill = [0usize; 6];
    let mut imp = [0usize; 3];
    for _ in 0..10_000 {
        let p = sample_patient(&mut rng);
        pri[p.priority.index()] += 1;
        ill[Illness::ALL.iter().position(|i| *i == p.illness).unwrap()] += 1;
        imp[match p.impairment {
            Impairment::None => 0,
            Impairment::Low => 1,
            Impairment::High => 2,
        }] += 1;
    }
    let p_pri = chi_square_p(&pri, &[1.0 / 3.0; 3]);
    let p_ill = chi_square_p(&ill, &[1.0 / 6.0; 6]);
    let p_imp = chi_square_p(&imp, &[0.60, 0.25, 0.15]);

    use Ward::*;
    let table: [(Illness, &[(Ward, f64)]); 6] = [
        (Illness::Pediatric, &[(Pediatrics, 1.0), (PromptCare, 0.6)]),
        (Illness::General, &[(PromptCare, 1.0), (AcuteCare, 0.5)]),
        (Illness::Cardio, &[(AcuteCare, 1.0), (Resuscitation, 0.7), (PromptCare, 0.4)]),
        (Illness::Xray, &[(Imaging, 1.0), (PromptCare, 0.5)]),
        (Illness::Psychiatric, &[(Psychiatry, 1.0), (PromptCare, 0.2)]),
        (Illness::Emergency, &[(Resuscitation, 1.0)]),
    ];
    let mut routing_ok = true;
    for (illness, wards) in table {
        routing_ok &= illness.wards() == wards;
        for w in Ward::ALL {
            let want = wards.iter().find(|(x, _)| *x == w).map_or(0.0, |(_, v)| *v);
            routing_ok &= ward_weight(illness, w) == want;
            let class = if want == 1.0 {
                Routing::Perfect
            } else if want > 0.0 {
                Routing::Backup
            } else {
                Routing::Incorrect
            };
            routing_ok &= classify(illness, w) == class;
        }
    }
    let _ = Priority::ALL;
    let pass = p_pri > 0.01 && p_ill > 0.01 && p_imp > 0.01 && routing_ok;
    report(
        5,
        pass,
        format!("chi-square p: priority {p_pri:.3}, illness {p_ill:.3}, impairment {p_imp:.3} (need > 0.01); routing table exact: {routing_ok}"),
    );
    assert!(pass);
}

// ---- criteria 6 and 7 ----

fn median_dp(records: &[RunRecord], keep: impl Fn(&RunRecord) -> bool) -> f64 {
    median(&records.iter().filter(|r| keep(r)).map(|r| r.summary.dp).collect::<Vec<_>>())
}

#[test]
fn criterion_06_harvest_direction() {
    let _g = serial();
    let start = Instant::now();
    let mut base = ExperimentConfig::preset(EnvKind::Ah, Scale::Desk);
    base.hidden = vec![32, 32];
    base.eval_episodes = 10;
    let mut configs = vec![ExperimentConfig { algorithm: AlgorithmKind::Ppo, ..base.clone() }];
    for (a, b) in [(0.5, 0.25), (0.25, 0.75), (0.75, 0.75), (0.0, 1.0)] {
        configs.push(ExperimentConfig { alpha: a, beta: b, ..base.clone() });
    }
    let mut records = Vec::new();
    for c in &configs {
        for seed in &base.seeds {
            records.push(train(c, *seed).unwrap());
        }
    }
    let ppo = median_dp(&records, |r| r.algorithm == AlgorithmKind::Ppo);
    let mut best = (f64::INFINITY, String::new());
    let mut lines = Vec::new();
    for c in &configs[1..] {
        let m = median_dp(&records, |r| r.config_hash == c.hash());
        lines.push(format!("{}={m:.4}", c.label()));
        if m < best.0 {
            best = (m, c.label());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = best.0 < ppo && secs < 1800.0;
    report(
        6,
        pass,
        format!("median dp: ppo={ppo:.4}; {}; best {} ({secs:.0}s, budget 1800s)", lines.join(", "), best.1),
    );
    assert!(best.0 < ppo, "no Fair-PPO configuration beat PPO's median dp {ppo}");
}

#[test]
fn criterion_07_hospital_direction() {
    let _g = serial();
    let start = Instant::now();
    let mut base = ExperimentConfig::preset(EnvKind::Hs, Scale::Desk);
    base.sweep.algorithms = vec![AlgorithmKind::FairPpo, AlgorithmKind::Ppo];
    let out = sweep(&base).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let ppo = median_dp(&out.records, |r| r.algorithm == AlgorithmKind::Ppo);
    let mut by_config: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in out.records.iter().filter(|r| r.algorithm == AlgorithmKind::FairPpo && (r.alpha, r.beta) != (0.0, 0.0)) {
        by_config.entry(r.label.clone()).or_default().push(r.summary.dp);
    }
    let (label, best) = by_config
        .iter()
        .map(|(l, v)| (l.clone(), median(v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = best <= ppo && secs < 1800.0;
    report(
        7,
        pass,
        format!(
            "median patient-reward dp: ppo={ppo:.4}, best Fair-PPO {label}={best:.4} over {} configurations ({secs:.0}s, budget 1800s)",
            by_config.len()
        ),
    );
    assert!(best <= ppo);
}

// ---- criterion 8 ----

struct Random {
    env: EnvSpec,
    rng: ChaCha8Rng,
}

impl Actor for Random {
    fn act(&mut self, stream: usize, _obs: &[f64], _ctx: &ActContext<'_>) -> fairppo::Result<usize> {
        Ok(self.rng.gen_range(0..self.env.action_count(self.env.role_of(stream))))
    }

    fn reward(&mut self, _stream: usize, _index: usize, _amount: f64) {}
}

#[test]
fn criterion_08_simulation_invariants() {
    let _g = serial();
    let mut counts = Vec::new();
    let mut examples = Vec::new();
    for env in [EnvSpec::Hs(HsConfig::desk()), EnvSpec::Ah(AhConfig::desk())] {
        let mut violations = 0usize;
        for ep in 0..200u64 {
            let mut actor = Random { env: env.clone(), rng: ChaCha8Rng::seed_from_u64(ep) };
            let world = if ep % 2 == 0 { World::Factual } else { World::Counterfactual };
            let out = env.reset(7000 + ep, world).unwrap().run(&mut actor, true).unwrap();
            violations += out.violations.len();
            examples.extend(out.violations.into_iter().take(3));
        }
        counts.push((env.name(), violations));
    }
    let total: usize = counts.iter().map(|c| c.1).sum();
    report(8, total == 0, format!("violations over 200 random episodes each: {counts:?}"));
    assert_eq!(total, 0, "{examples:?}");
}

// ---- criterion 9 ----

fn csv_bytes(records: &[RunRecord]) -> (Vec<u8>, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let (e, s) = (dir.path().join("e.csv"), dir.path().join("s.csv"));
    write_episodes_csv(&e, records).unwrap();
    write_summary_csv(&s, records).unwrap();
    (std::fs::read(e).unwrap(), std::fs::read(s).unwrap())
}

fn short_desk(env: EnvKind, kind: AlgorithmKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(env, Scale::Desk);
    c.algorithm = kind;
    if env == EnvKind::Ah {
        c.train_episodes = 4;
        c.eval_episodes = 2;
    }
    c
}

#[test]
fn criterion_09_reproducibility() {
    let _g = serial();
    let mut results = Vec::new();
    for env in [EnvKind::Ah, EnvKind::Hs] {
        for kind in AlgorithmKind::ALL {
            let c = short_desk(env, kind);
            let a = csv_bytes(&[train(&c, 3).unwrap()]);
            let b = csv_bytes(&[train(&c, 3).unwrap()]);
            results.push((format!("{}/{}", format!("{env:?}"), kind.label()), a == b && !a.0.is_empty()));
        }
    }
    let pass = results.iter().all(|r| r.1);
    report(9, pass, format!("byte-identical episode and summary CSVs: {results:?}"));
    assert!(pass);
}

// ---- criterion 10 ----

#[test]
fn criterion_10_benchmarks() {
    let _g = serial();
    let mut notes = Vec::new();
    let mut ok = true;
    for env in [EnvKind::Ah, EnvKind::Hs] {
        let mut reference = ExperimentConfig::preset(env, Scale::Desk);
        reference.train_episodes = 1;
        reference.eval_episodes = 1;
        let reference = csv_bytes(&[train(&reference, 0).unwrap()]).1;
        let header = |bytes: &[u8]| String::from_utf8_lossy(bytes).lines().next().unwrap_or_default().to_string();
        for kind in [AlgorithmKind::Fen, AlgorithmKind::Soto] {
            let c = ExperimentConfig { algorithm: kind, ..ExperimentConfig::preset(env, Scale::Desk) };
            let rec = train(&c, 0).unwrap();
            let summary = csv_bytes(&[rec.clone()]).1;
            let schema = header(&summary) == header(&reference) && header(&summary) == summary_header(env).join(",");
            let finite = rec.summary.dp.is_finite() && rec.summary.mean_reward.is_finite();
            ok &= schema && finite && rec.eval_rows().count() == c.eval_episodes;
            notes.push(format!("{}/{} schema={schema} dp={:.4}", format!("{env:?}"), kind.label(), rec.summary.dp));
        }
    }

    // traces from short episodes over the desk layouts
    let envs = [
        EnvSpec::Ah(AhConfig { episode_length_ts: 60, ..AhConfig::desk() }),
        EnvSpec::Hs(HsConfig::desk()),
    ];
    let mut switch_violations = 0;
    let mut windows = 0;
    for env in &envs {
        let mut fen = Fen::new(env.clone(), FenConfig::for_env(env), &[16], 2).unwrap();
        for ep in 0..4 {
            fen.train_episode(300 + ep, ep as f64 / 4.0).unwrap();
            switch_violations += macro_switch_violations(&fen.last_trace, fen.cfg.t_macro).len();
            windows += fen.last_trace.iter().map(|t| t.len().div_ceil(fen.cfg.t_macro)).sum::<usize>();
        }
    }
    ok &= switch_violations == 0 && windows > 0;
    notes.push(format!("fen macro-switch violations {switch_violations} over {windows} windows"));

    let (mut team, mut expected, mut var, mut draws) = (0.0, 0.0, 0.0, 0usize);
    for env in &envs {
        let cfg = SotoConfig::for_env(env);
        let mut soto = Soto::new(env.clone(), cfg.clone(), &[16], 2).unwrap();
        let episodes = if matches!(env, EnvSpec::Ah(_)) { 40 } else { 30 };
        for ep in 0..episodes {
            let progress = ep as f64 / episodes as f64;
            soto.train_episode(400 + ep as u64, progress).unwrap();
            for (p, head) in &soto.last_heads {
                let q = soto_team_probability(*p, &cfg);
                expected += q;
                var += q * (1.0 - q);
                team += f64::from(u8::from(*head == TEAM_HEAD));
                draws += 1;
            }
        }
    }
    let z = (team - expected) / var.sqrt().max(1e-12);
    ok &= z.abs() <= 3.0;
    notes.push(format!("soto team-head draws {team}/{draws}, expected {expected:.1}, z={z:.2} (|z| <= 3)"));

    report(10, ok, notes.join("; "));
    assert!(ok);
}

#[test]
fn acceptance_helpers() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    let s: BTreeSet<usize> = [1, 2].into();
    assert_eq!(brute_mean(&[5.0, 1.0, 3.0], |i| s.contains(&i)), Some(2.0));
}
