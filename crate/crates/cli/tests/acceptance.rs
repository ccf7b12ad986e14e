//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdnn_cli::synthetic::{business_days, synthetic_csv, SyntheticTicker};
use rdnn_core::env::{run_episode, EnvConfig, PortfolioWeights, UtilityKind};
use rdnn_core::market_data::{build_features, IndicatorConfig, PriceHistory};
use rdnn_core::policy::{forward_raw, init_params, sample_masks, HeadMode, PolicyConfig, PolicyParameters, WeightActivation};
use rdnn_core::selection::{top_k_mask, turnover_constrained_basket};
use rdnn_core::training::{bptt_gradient, finite_diff_gradient, rollout, Episode, MarketSeries, Optimizer, TrainConfig};

type Check = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    if elapsed > limit {
        Err(format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    } else {
        Ok(())
    }
}

struct Scenario {
    cfg: EnvConfig,
    prices: Vec<Vec<f64>>,
    weights: Vec<PortfolioWeights>,
    gross: Vec<Vec<f64>>,
}

fn random_weights(rng: &mut ChaCha8Rng, m: usize) -> PortfolioWeights {
    let raw: Vec<f64> = (0..=m)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return PortfolioWeights::all_bond(m);
    }
    PortfolioWeights::new(raw.into_iter().map(|v| v / total).collect()).unwrap()
}

fn scenario(rng: &mut ChaCha8Rng, commission_rate: f64) -> Scenario {
    let m = rng.gen_range(1..=5);
    let t = rng.gen_range(1..=30);
    let rf = rng.gen_range(0.0..1e-4);
    let mut prices = vec![(0..m).map(|_| rng.gen_range(10.0..500.0)).collect::<Vec<f64>>()];
    for _ in 0..t {
        let last = prices.last().unwrap();
        prices.push(last.iter().map(|p| p * rng.gen_range(0.9..1.1)).collect());
    }
    let gross = (0..t)
        .map(|d| {
            std::iter::once(1.0 + rf)
                .chain((0..m).map(|i| prices[d + 1][i] / prices[d][i]))
                .collect()
        })
        .collect();
    let weights = (0..t).map(|_| random_weights(rng, m)).collect();
    Scenario {
        cfg: EnvConfig {
            initial_wealth: rng.gen_range(1e3..1e6),
            commission_rate,
            risk_free_rate: rf,
            num_stocks: m,
        },
        prices,
        weights,
        gross,
    }
}

/// Holds share counts and cash. Each day the whole position is valued, the
/// commission on the traded notional is charged, and what is left is split
/// into shares and cash according to the target.
fn cash_ledger(s: &Scenario) -> f64 {
    let m = s.cfg.num_stocks;
    let mut cash = s.cfg.initial_wealth;
    let mut shares = vec![0.0; m];
    for (t, w) in s.weights.iter().enumerate() {
        let p = &s.prices[t];
        let value = cash + (0..m).map(|i| shares[i] * p[i]).sum::<f64>();
        let traded: f64 = (0..m).map(|i| (w.values()[i + 1] * value - shares[i] * p[i]).abs()).sum();
        let net = value - s.cfg.commission_rate * traded;
        for i in 0..m {
            shares[i] = w.values()[i + 1] * net / p[i];
        }
        cash = w.values()[0] * net * (1.0 + s.cfg.risk_free_rate);
    }
    let last = s.prices.last().unwrap();
    cash + (0..m).map(|i| shares[i] * last[i]).sum::<f64>()
}

fn ledger_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for n in 0..100 {
        let delta = [0.0, 1e-4, 1e-2][n % 3];
        let s = scenario(&mut rng, delta);
        let env = run_episode(&s.cfg, &s.weights, &s.gross).map_err(|e| e.to_string())?;
        worst = worst.max(rel(env.final_wealth, cash_ledger(&s)));
    }
    within(Duration::from_secs(5), start.elapsed())?;
    if worst < 1e-10 {
        Ok(format!("100 scenarios, worst relative gap {worst:.2e}"))
    } else {
        Err(format!("worst relative gap {worst:.2e}"))
    }
}

fn frictionless_product() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = scenario(&mut rng, 0.0);
        let env = run_episode(&s.cfg, &s.weights, &s.gross).map_err(|e| e.to_string())?;
        let product = s.weights.iter().zip(&s.gross).fold(s.cfg.initial_wealth, |w, (wt, g)| {
            let r: f64 = wt.values().iter().zip(g).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            w * (1.0 + r)
        });
        worst = worst.max(rel(env.final_wealth, product));
    }
    if worst < 1e-12 {
        Ok(format!("100 scenarios, worst relative gap {worst:.2e}"))
    } else {
        Err(format!("worst relative gap {worst:.2e}"))
    }
}

fn small_instance(seed: u64, mode: HeadMode) -> (PolicyConfig, PolicyParameters, Episode) {
    let (m, len, dim) = (2, 6, 3);
    let cfg = PolicyConfig {
        mode,
        dropout_rate: 0.0,
        hidden_sizes: vec![4, 4, 4],
        seed,
        ..PolicyConfig::default()
    };
    let mut params = init_params(&cfg, dim, m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919));
    for b in std::iter::once(&mut params.recurrent.bias)
        .chain(params.hidden.iter_mut().map(|l| &mut l.bias))
        .chain(std::iter::once(&mut params.output.bias))
    {
        b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let episode = Episode {
        features: (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        gross: (0..len)
            .map(|_| std::iter::once(1.0001).chain((0..m).map(|_| rng.gen_range(0.97..1.03))).collect())
            .collect(),
        prices: (0..len).map(|_| (0..m).map(|_| rng.gen_range(200.0..600.0)).collect()).collect(),
        slots: None,
    };
    (cfg, params, episode)
}

/// Central-difference step.
const FD_STEP: f64 = 1e-5;

fn gradient_check() -> Check {
    let start = Instant::now();
    let env = EnvConfig {
        commission_rate: 1e-3,
        ..EnvConfig::new(2)
    };
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    let mut compared = 0;
    for seed in 0..25u64 {
        for mode in [HeadMode::WeightHead, HeadMode::ShareHead] {
            for kind in [UtilityKind::CumulativeLogReturn, UtilityKind::SharpeRatio] {
                let (cfg, params, ep) = small_instance(seed, mode);
                let exact = bptt_gradient(&ep, &params, &cfg, &env, kind, ep.len(), None).map_err(|e| e.to_string())?;
                let fd = finite_diff_gradient(&ep, &params, &cfg, &env, kind, FD_STEP).map_err(|e| e.to_string())?;
                for (a, b) in exact.gradient.0.blocks().iter().zip(fd.0.blocks()) {
                    for (u, v) in a.iter().zip(b.iter()) {
                        if u.abs().max(v.abs()) > 1e-8 {
                            worst = worst.max(rel(*u, *v));
                            compared += 1;
                        }
                    }
                }
                instances += 1;
            }
        }
    }
    within(Duration::from_secs(60), start.elapsed())?;
    if worst < 1e-4 {
        Ok(format!("{instances} instances, {compared} elements, worst relative error {worst:.2e}"))
    } else {
        Err(format!("{instances} instances, worst relative error {worst:.2e}"))
    }
}

fn history(closes: Vec<Vec<f64>>, names: &[&str]) -> PriceHistory {
    let n = closes[0].len();
    let calendar = business_days(NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), n);
    let volume = vec![vec![1e5; n]; closes.len()];
    PriceHistory::from_closes(calendar, names.iter().map(|s| s.to_string()).collect(), closes, volume).unwrap()
}

fn series(h: &PriceHistory) -> MarketSeries {
    let features = build_features(h, &IndicatorConfig::default(), &[]).unwrap();
    MarketSeries::align(&features, h, 0.0).unwrap()
}

fn log_return(returns: &[f64]) -> f64 {
    returns.iter().map(|r| r.ln_1p()).sum()
}

fn drift_learnability() -> Check {
    let start = Instant::now();
    let days = 400;
    let closes = vec![
        (0..days).map(|d| 50.0 * 1.002f64.powi(d)).collect(),
        (0..days).map(|d| 50.0 * 0.998f64.powi(d)).collect(),
    ];
    let s = series(&history(closes, &["UP", "DOWN"]));
    let split = 260;
    let (train_s, test_s) = (s.slice(0, split), s.slice(split, s.len()));
    let env = EnvConfig {
        commission_rate: 0.0,
        ..EnvConfig::new(2)
    };
    let policy = PolicyConfig {
        dropout_rate: 0.0,
        hidden_sizes: vec![16, 16],
        seed: 4,
        ..PolicyConfig::default()
    };
    let train_cfg = TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        epochs: 200,
        truncation_depth: 5,
        episode_length: 60,
        seed: 5,
        optimizer: Optimizer::adam(),
        ..TrainConfig::default()
    };
    let (params, report) =
        rdnn_core::training::train(&train_s, None, &policy, &train_cfg, &env, None).map_err(|e| e.to_string())?;
    let ep = test_s.episode(0, test_s.len(), None);
    let played = rollout(&ep, &params, &policy, &env, None).map_err(|e| e.to_string())?;
    let lowest = played.weights.iter().map(|w| w.values()[1]).fold(f64::INFINITY, f64::min);
    let equal = vec![PortfolioWeights::new(vec![0.0, 0.5, 0.5]).unwrap(); ep.len()];
    let baseline = run_episode(&env, &equal, &ep.gross).map_err(|e| e.to_string())?;
    let (ours, theirs) = (log_return(&played.outcome.returns), log_return(&baseline.returns));
    within(Duration::from_secs(120), start.elapsed())?;
    let detail = format!(
        "{} epochs, lowest test allocation {lowest:.4}, test log return {ours:.4} vs equal weight {theirs:.4}",
        report.epoch.len()
    );
    if lowest > 0.9 && ours > theirs {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn constraint_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (m, dim) = (3, 6);
    let setups = [
        (HeadMode::WeightHead, WeightActivation::SigmoidNormalized),
        (HeadMode::WeightHead, WeightActivation::Softmax),
        (HeadMode::ShareHead, WeightActivation::SigmoidNormalized),
        (HeadMode::ShareHead, WeightActivation::Softmax),
    ];
    let mut passes = 0usize;
    let mut worst_sum: f64 = 0.0;
    for (n, (mode, act)) in setups.iter().enumerate() {
        for block in 0..250 {
            let cfg = PolicyConfig {
                mode: *mode,
                weight_activation: *act,
                dropout_rate: 0.2,
                hidden_sizes: vec![8, 8],
                max_shares: 100.0,
                seed: (n * 1000 + block) as u64,
            };
            let mut params = init_params(&cfg, dim, m).map_err(|e| e.to_string())?;
            let scale = [0.1, 1.0, 10.0, 100.0][block % 4];
            params.scale(scale);
            let action_dim = cfg.action_dim(m);
            for _ in 0..1000 {
                let features: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let feedback: Vec<f64> = (0..action_dim).map(|_| rng.gen::<f64>()).collect();
                let masks = rng.gen_bool(0.5).then(|| sample_masks(&cfg, &mut rng));
                let out = forward_raw(&features, &feedback, &params, masks.as_ref(), &cfg)
                    .map_err(|e| e.to_string())?
                    .output;
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(format!("non-finite output {out:?}"));
                }
                match mode {
                    HeadMode::WeightHead => {
                        let sum: f64 = out.iter().sum();
                        worst_sum = worst_sum.max((sum - 1.0).abs());
                        if out.iter().any(|w| *w < -1e-9 || *w > 1.0 + 1e-9) || (sum - 1.0).abs() > 1e-9 {
                            return Err(format!("weights {out:?} off the simplex"));
                        }
                    }
                    HeadMode::ShareHead => {
                        if out.iter().any(|s| !(0.0..=100.0).contains(s)) {
                            return Err(format!("share counts {out:?} outside [0, 100]"));
                        }
                    }
                }
                passes += 1;
            }
        }
    }
    Ok(format!("{passes} passes, worst weight-sum gap {worst_sum:.2e}"))
}

fn selection_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for case in 0..1000 {
        let n = rng.gen_range(1..=200);
        let k = rng.gen_range(0..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 4.0).collect();
        let basket = top_k_mask(&scores, k).map_err(|e| e.to_string())?;
        // stock i is in iff fewer than k stocks beat it
        let beaten_by = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
        for i in 0..n {
            if basket.contains(i) != (beaten_by(i) < k) {
                return Err(format!("case {case}: stock {i} misclassified"));
            }
        }
        let mut by_rank: Vec<usize> = (0..n).filter(|&i| beaten_by(i) < k).collect();
        by_rank.sort_by_key(|&i| beaten_by(i));
        if basket.selected != by_rank {
            return Err(format!("case {case}: selection order differs"));
        }
    }

    let (pool, k) = (100, 20);
    let draw = |rng: &mut ChaCha8Rng| (0..pool).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>();
    let mut basket = top_k_mask(&draw(&mut rng), k).map_err(|e| e.to_string())?;
    let mut most = 0;
    for day in 0..500 {
        let next = turnover_constrained_basket(&draw(&mut rng), &basket, k).map_err(|e| e.to_string())?;
        let changed = next.selected.iter().filter(|&&i| !basket.contains(i)).count();
        if changed > k / 2 || next.selected.len() != k {
            return Err(format!("day {day}: {changed} names replaced"));
        }
        most = most.max(changed);
        basket = next;
    }
    Ok(format!("1000 top-k cases agree; at most {most} of {k} names replaced per day over 500 days"))
}

fn regime_market(seed: u64) -> MarketSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bull, crash) = (300, 300);
    let closes = (0..3)
        .map(|_| {
            let mut p = rng.gen_range(40.0..60.0);
            (0..bull + crash)
                .map(|d| {
                    let mu = if d < bull { 0.0015 } else { -0.003 };
                    let z: f64 = rng.gen_range(-1.0..1.0) * 3f64.sqrt();
                    p *= (mu + 0.01 * z).exp();
                    p
                })
                .collect()
        })
        .collect();
    series(&history(closes, &["A", "B", "C"]))
}

fn regime_switch() -> Check {
    let env = EnvConfig::new(3);
    let mut agree = 0;
    let mut rows = Vec::new();
    for seed in 0..10u64 {
        let s = regime_market(1000 + seed);
        // features start after the indicator warm-up, so the bull segment is a bit shorter
        let switch = s.len() - 300;
        let bull = s.slice(0, switch);
        let crash = s.slice(switch, switch + 180);
        let held_out = s.slice(switch + 180, s.len());
        let policy = PolicyConfig {
            dropout_rate: 0.0,
            hidden_sizes: vec![16, 16],
            seed,
            ..PolicyConfig::default()
        };
        let train_cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 60,
            episode_length: 30,
            seed,
            optimizer: Optimizer::adam(),
            ..TrainConfig::default()
        };
        let ep = held_out.episode(0, held_out.len(), None);
        let mut leverage = Vec::new();
        for segment in [&bull, &crash] {
            let (params, _) =
                rdnn_core::training::train(segment, None, &policy, &train_cfg, &env, None).map_err(|e| e.to_string())?;
            let played = rollout(&ep, &params, &policy, &env, None).map_err(|e| e.to_string())?;
            let lev = &played.outcome.leverage;
            leverage.push(lev.iter().sum::<f64>() / lev.len() as f64);
        }
        if leverage[1] < leverage[0] {
            agree += 1;
        }
        rows.push(format!("{:.2}/{:.2}", leverage[0], leverage[1]));
    }
    let detail = format!("{agree}/10 seeds, bull/crash-trained leverage {}", rows.join(" "));
    if agree >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline_determinism() -> Check {
    let tickers: Vec<SyntheticTicker> = (0..12)
        .map(|i| SyntheticTicker {
            name: format!("S{i:02}"),
            start_price: 20.0 + 5.0 * i as f64,
            drift: 0.0008 - 0.0001 * i as f64,
            drift_after: Some(-0.001),
            volatility: 0.012,
        })
        .collect();
    let csv = synthetic_csv(&tickers, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(), 300, 200, 9);
    let cfg = "seed = 17\n\
        data.prices = prices.csv\n\
        output.dir = out\n\
        policy.hidden = 16, 8\n\
        train.epochs = 4\n\
        train.batch_size = 4\n\
        train.to = 2018-09-28\n\
        test.from = 2018-10-01\n\
        selection.enabled = true\n\
        selection.basket_size = 6\n\
        selection.mode = turnover\n\
        selection.hidden = 8\n\
        selection.perturbations = 2\n";
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        fs::write(dir.path().join("prices.csv"), &csv).map_err(|e| e.to_string())?;
        let cfg_path = dir.path().join("run.cfg");
        fs::write(&cfg_path, cfg).map_err(|e| e.to_string())?;
        for cmd in ["ingest", "train", "backtest", "report"] {
            let out = Command::new(env!("CARGO_BIN_EXE_rdnn"))
                .args([cmd, "--config", cfg_path.to_str().unwrap()])
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        runs.push(snapshot(&dir.path().join("out")));
    }
    if runs[0] == runs[1] {
        Ok(format!("{} artifacts identical across two runs", runs[0].len()))
    } else {
        let differing: Vec<&String> = runs[0].keys().filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
        Err(format!("differing artifacts: {differing:?}"))
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("ledger-oracle equivalence", ledger_equivalence),
        ("frictionless product formula", frictionless_product),
        ("gradient matches finite differences", gradient_check),
        ("drift market learnability", drift_learnability),
        ("forward-pass constraints", constraint_suite),
        ("top-k and turnover selection", selection_suite),
        ("regime-switch leverage", regime_switch),
        ("pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail} ({secs:.1}s)", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} ({secs:.1}s)", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
