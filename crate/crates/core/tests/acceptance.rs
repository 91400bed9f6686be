//! Acceptance criteria, one PASS/FAIL line each. Oracles here are written
//! independently of the library code they check.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use neurotrade::backtest::{self, PricePoint, TradingConfig};
use neurotrade::config::RunConfig;
use neurotrade::dataset::{self, Label, LabeledSample, LabelerConfig};
use neurotrade::indicators::{self, IndicatorConfig};
use neurotrade::market_data::{self, AdjustedBar};
use neurotrade::metrics::{self, ConfusionMatrix};
use neurotrade::neuralnet::{self, MlpConfig, MlpModel};
use neurotrade::pipeline::{self, StageOptions};
use neurotrade::{synthetic, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn day(i: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).unwrap() + chrono::Days::new(i as u64)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || (a - b).abs() <= 1e-12
}

// ---------------------------------------------------------------------------

fn class_score_reproduction() -> Check {
    let m = ConfusionMatrix {
        counts: [[889, 429, 868], [41, 110, 4], [21, 0, 139]],
    };
    let s = metrics::scores(&m);
    let got = |v: [f64; 3]| v.map(round2);
    ensure!(
        got(s.precision) == [0.93, 0.20, 0.14],
        "precision {:?}",
        s.precision
    );
    ensure!(got(s.recall) == [0.41, 0.71, 0.87], "recall {:?}", s.recall);
    ensure!(got(s.f1) == [0.57, 0.32, 0.24], "f1 {:?}", s.f1);
    ensure!(m.total() == 2501, "total {}", m.total());
    ensure!(
        (s.accuracy - 1138.0 / 2501.0).abs() < 1e-12,
        "accuracy {}",
        s.accuracy
    );
    Ok(format!(
        "precision/recall/F1 match at 2 decimals; accuracy {:.3}",
        s.accuracy
    ))
}

fn random_bars(rng: &mut ChaCha8Rng, n: usize) -> Vec<AdjustedBar> {
    let mut close: f64 = rng.gen_range(5.0..500.0);
    (0..n)
        .map(|i| {
            let open = close;
            close = (close * (1.0 + rng.gen_range(-0.08..0.08))).max(0.01);
            if rng.gen_bool(0.05) {
                close = open;
            }
            AdjustedBar {
                date: day(i),
                open,
                high: open.max(close) * (1.0 + rng.gen_range(0.0..0.03)),
                low: open.min(close) * (1.0 - rng.gen_range(0.0..0.03)),
                close,
                volume: 1,
            }
        })
        .collect()
}

fn indicator_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let n = rng.gen_range(30..=500);
        let bars = random_bars(&mut rng, n);
        let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
        for v in indicators::rsi(&closes, 14).unwrap().into_iter().flatten() {
            ensure!((0.0..=100.0).contains(&v), "RSI {v} out of range");
            checked += 1;
        }
        for v in indicators::williams_r(&bars, 14)
            .unwrap()
            .into_iter()
            .flatten()
        {
            ensure!((-100.0..=0.0).contains(&v), "%R {v} out of range");
            checked += 1;
        }
        let c = closes[0];
        let flat = vec![c; n];
        for v in indicators::macd(&flat, &IndicatorConfig::default())
            .unwrap()
            .into_iter()
            .flatten()
        {
            ensure!(v.abs() <= 1e-9, "MACD {v} on constant {c}");
        }
    }
    Ok(format!(
        "{checked} RSI/%R values in range over 1000 series; flat MACD = 0"
    ))
}

/// Fixed 40-point series with a rally, a sell-off, a flat stretch and chop.
fn fixed_series() -> Vec<AdjustedBar> {
    let closes = [
        44.34, 44.09, 44.15, 43.61, 44.33, 44.83, 45.10, 45.42, 45.84, 46.08, 45.89, 46.03, 45.61,
        46.28, 46.28, 46.00, 46.03, 46.41, 46.22, 45.64, 46.21, 46.25, 45.71, 46.45, 45.78, 45.35,
        44.03, 44.18, 44.22, 44.57, 43.42, 42.66, 43.13, 43.13, 43.13, 43.50, 44.02, 44.90, 45.60,
        45.12,
    ];
    closes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let prev = if i == 0 { c } else { closes[i - 1] };
            let spread = 0.15 + 0.05 * (i % 4) as f64;
            AdjustedBar {
                date: day(i),
                open: prev,
                high: prev.max(c) + spread,
                low: prev.min(c) - spread * 0.8,
                close: c,
                volume: 1000,
            }
        })
        .collect()
}

fn oracle_ema(x: &[f64], n: usize) -> Vec<Option<f64>> {
    let a = 2.0 / (n as f64 + 1.0);
    let mut out = vec![None; x.len()];
    let mut prev = x[..n].iter().sum::<f64>() / n as f64;
    out[n - 1] = Some(prev);
    for t in n..x.len() {
        prev = a * x[t] + (1.0 - a) * prev;
        out[t] = Some(prev);
    }
    out
}

fn oracle_rsi(x: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; x.len()];
    let (mut g, mut l) = (0.0, 0.0);
    for t in 1..=n {
        let d = x[t] - x[t - 1];
        if d > 0.0 {
            g += d;
        } else {
            l -= d;
        }
    }
    g /= n as f64;
    l /= n as f64;
    let value = |g: f64, l: f64| {
        if g == 0.0 && l == 0.0 {
            50.0
        } else if l == 0.0 {
            100.0
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        }
    };
    out[n] = Some(value(g, l));
    for t in n + 1..x.len() {
        let d = x[t] - x[t - 1];
        g = (g * (n as f64 - 1.0) + d.max(0.0)) / n as f64;
        l = (l * (n as f64 - 1.0) + (-d).max(0.0)) / n as f64;
        out[t] = Some(value(g, l));
    }
    out
}

fn oracle_wr(bars: &[AdjustedBar], n: usize) -> Vec<Option<f64>> {
    (0..bars.len())
        .map(|t| {
            if t + 1 < n {
                return None;
            }
            let w = &bars[t + 1 - n..=t];
            let hh = w.iter().map(|b| b.high).fold(f64::MIN, f64::max);
            let ll = w.iter().map(|b| b.low).fold(f64::MAX, f64::min);
            Some(if hh == ll {
                -50.0
            } else {
                (hh - bars[t].close) / (hh - ll) * -100.0
            })
        })
        .collect()
}

fn compare(name: &str, got: &[Option<f64>], want: &[Option<f64>]) -> Result<usize, String> {
    ensure!(
        got.len() == want.len(),
        "{name}: length {} vs {}",
        got.len(),
        want.len()
    );
    let mut n = 0;
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        match (g, w) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                ensure!(rel_close(*g, *w, 1e-9), "{name}[{i}] = {g}, oracle {w}");
                n += 1;
            }
            _ => return Err(format!("{name}[{i}]: defined {:?} vs oracle {:?}", g, w)),
        }
    }
    Ok(n)
}

fn indicator_oracles() -> Check {
    let bars = fixed_series();
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let cfg = IndicatorConfig::default();
    let mut n = 0;
    for p in [3, 12, 26] {
        n += compare(
            &format!("ema{p}"),
            &indicators::ema(&closes, p).unwrap(),
            &oracle_ema(&closes, p),
        )?;
    }
    n += compare(
        "rsi",
        &indicators::rsi(&closes, 14).unwrap(),
        &oracle_rsi(&closes, 14),
    )?;
    let (fast, slow) = (oracle_ema(&closes, 12), oracle_ema(&closes, 26));
    let macd: Vec<Option<f64>> = fast
        .iter()
        .zip(&slow)
        .map(|(f, s)| Some((*f)? - (*s)?))
        .collect();
    n += compare("macd", &indicators::macd(&closes, &cfg).unwrap(), &macd)?;
    n += compare(
        "wr",
        &indicators::williams_r(&bars, 14).unwrap(),
        &oracle_wr(&bars, 14),
    )?;
    Ok(format!("{n} values agree to 1e-9 relative"))
}

fn random_sample(rng: &mut ChaCha8Rng) -> LabeledSample {
    LabeledSample {
        date: day(0),
        features: [0; 4].map(|_| rng.gen_range(-1.0..2.0)),
        label: Label::ALL[rng.gen_range(0..3)],
        raw_close: 1.0,
    }
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut mutant_best = f64::INFINITY;
    for i in 0..50 {
        let model = MlpModel::init(&MlpConfig {
            seed: 1000 + i,
            ..Default::default()
        })
        .unwrap();
        let sample = random_sample(&mut rng);
        worst = worst.max(neuralnet::gradient_check(&model, &sample, 1e-5).unwrap());

        let mut mutant = model.backprop(&sample.features, sample.label).unwrap();
        for layer in &mut mutant.layers {
            layer.weights.iter_mut().for_each(|w| *w = -*w);
            layer.biases.iter_mut().for_each(|b| *b = -*b);
        }
        let d = neuralnet::gradient_check_against(&model, &sample, 1e-5, &mutant);
        mutant_best = mutant_best.min(d);
    }
    ensure!(worst < 1e-4, "backprop discrepancy {worst:e}");
    ensure!(
        mutant_best > 1e-2,
        "sign-flipped mutant slipped through ({mutant_best:e})"
    );
    Ok(format!(
        "max discrepancy {worst:.1e}; mutant caught on all 50 (min {mutant_best:.2})"
    ))
}

fn blobs(seed: u64) -> Vec<LabeledSample> {
    let centers = [
        [0.2, 0.2, 0.2, 0.2],
        [0.8, 0.2, 0.8, 0.2],
        [0.2, 0.8, 0.2, 0.8],
    ];
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..300)
        .map(|i| LabeledSample {
            date: day(i),
            features: [0, 1, 2, 3].map(|k| centers[i % 3][k] + noise.sample(&mut rng)),
            label: Label::ALL[i % 3],
            raw_close: 1.0,
        })
        .collect()
}

fn nearest_centroid_accuracy(data: &[LabeledSample]) -> f64 {
    let mut centroids = [[0.0; 4]; 3];
    let mut counts = [0.0; 3];
    for s in data {
        let c = s.label.index();
        counts[c] += 1.0;
        for (acc, x) in centroids[c].iter_mut().zip(&s.features) {
            *acc += x;
        }
    }
    for c in 0..3 {
        centroids[c].iter_mut().for_each(|v| *v /= counts[c]);
    }
    let correct = data
        .iter()
        .filter(|s| {
            let dist = |c: &[f64; 4]| {
                c.iter()
                    .zip(&s.features)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            };
            let best = (0..3)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == s.label.index()
        })
        .count();
    correct as f64 / data.len() as f64
}

fn learnability() -> Check {
    let data = blobs(9);
    let bayes = nearest_centroid_accuracy(&data);
    ensure!(
        bayes > 0.99,
        "blobs not separable: nearest centroid {bayes}"
    );
    let start = Instant::now();
    let model = MlpModel::init(&MlpConfig::default()).unwrap();
    let (a, trace) = model.train(&data).unwrap();
    let elapsed = start.elapsed();
    let (b, _) = model.train(&data).unwrap();
    ensure!(a.to_bytes() == b.to_bytes(), "training not deterministic");
    let acc = *trace.accuracy.last().unwrap();
    ensure!(trace.len() == 200, "{} epochs", trace.len());
    ensure!(acc >= 0.95, "training accuracy {acc}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "accuracy {acc:.3} after 200 epochs (nearest centroid {bayes:.3}) in {elapsed:.2?}"
    ))
}

fn prices(closes: &[f64]) -> Vec<PricePoint> {
    closes
        .iter()
        .enumerate()
        .map(|(i, &close)| PricePoint {
            date: day(i),
            close,
        })
        .collect()
}

/// Collapse every non-Hold label equal to the previous non-Hold label.
fn dedup(labels: &[Label]) -> Vec<Label> {
    let mut last = None;
    labels
        .iter()
        .map(|&l| match l {
            Label::Hold => l,
            _ if Some(l) == last => Label::Hold,
            _ => {
                last = Some(l);
                l
            }
        })
        .collect()
}

/// Collapse only runs of identical adjacent labels.
fn dedup_runs(labels: &[Label]) -> Vec<Label> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if i > 0 && l != Label::Hold && labels[i - 1] == l {
                Label::Hold
            } else {
                l
            }
        })
        .collect()
}

fn ledger_oracle() -> Check {
    use Label::{Buy, Hold, Sell};
    let cfg = TradingConfig::default();
    let a = backtest::simulate(&prices(&[100.0, 110.0]), &[Buy, Sell], &cfg).unwrap();
    let want_a = (10_000.0 - 1.0) / 100.0 * 110.0 - 1.0;
    ensure!(
        (a.final_capital - 10_997.90).abs() < 1e-2 && (a.final_capital - want_a).abs() < 1e-9,
        "scenario 1: {}",
        a.final_capital
    );
    let b = backtest::simulate(&prices(&[100.0, 94.0, 120.0]), &[Buy, Hold, Sell], &cfg).unwrap();
    ensure!(
        (b.final_capital - 9_398.06).abs() < 1e-2,
        "scenario 2: {}",
        b.final_capital
    );
    ensure!(
        b.trades.len() == 1 && b.trades[0].exit_reason == backtest::ExitReason::StopLoss,
        "scenario 2 trades {:?}",
        b.trades
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut trades = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..200);
        let mut p = 50.0;
        let closes: Vec<f64> = (0..n)
            .map(|_| {
                p *= 1.0 + rng.gen_range(-0.06..0.06);
                p
            })
            .collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0..=1 => Buy,
                2..=3 => Sell,
                _ => Hold,
            })
            .collect();
        let cfg = TradingConfig {
            commission_per_side: rng.gen_range(0.0..5.0),
            stop_loss_fraction: rng.gen_range(0.01..0.2),
            ..Default::default()
        };
        let px = prices(&closes);
        let full = backtest::simulate(&px, &labels, &cfg).unwrap();
        ensure!(
            full == backtest::simulate(&px, &dedup(&labels), &cfg).unwrap(),
            "dedup changed ledger: {labels:?}"
        );
        ensure!(
            full == backtest::simulate(&px, &dedup_runs(&labels), &cfg).unwrap(),
            "run collapse changed ledger"
        );
        trades += full.trades.len();
    }
    Ok(format!(
        "10997.90 and 9398.06 reproduced; dedup-equivalent on 1000 runs ({trades} trades)"
    ))
}

fn zero_commission_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = TradingConfig {
        commission_per_side: 0.0,
        stop_loss_fraction: 1.0 - 1e-9,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..300);
        let closes: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..200.0)).collect();
        let labels: Vec<Label> = (0..n).map(|_| Label::ALL[rng.gen_range(0..3)]).collect();
        let ledger = backtest::simulate(&prices(&closes), &labels, &cfg).unwrap();
        let product: f64 = ledger
            .trades
            .iter()
            .map(|t| closes[t.exit_index] / closes[t.entry_index])
            .product();
        let want = cfg.starting_capital * product;
        let rel = (ledger.final_capital - want).abs() / want;
        ensure!(rel <= 1e-9, "final {} vs {want}", ledger.final_capital);
        worst = worst.max(rel);
    }
    Ok(format!("max relative error {worst:.1e} over 1000 runs"))
}

fn write_ticker_csv(dir: &Path, ticker: &str, bars: &[market_data::OhlcvBar]) {
    fs::create_dir_all(dir).unwrap();
    market_data::write_csv(
        bars,
        fs::File::create(dir.join(format!("{ticker}.csv"))).unwrap(),
    )
    .unwrap();
}

fn e2e_config(data: &Path, out: &Path, parallelism: usize) -> RunConfig {
    let text = format!(
        r#"
        data_dir = "{}"
        output_dir = "{}"
        parallelism = {parallelism}
        tickers = ["AAA", "BBB"]
        [split]
        train_start = 2001-01-01
        train_end = 2004-12-31
        test_start = 2005-01-01
        test_end = 2007-01-01
        "#,
        data.display(),
        out.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn end_to_end_determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let dates = synthetic::business_days(
        NaiveDate::from_ymd_opt(2000, 6, 1).unwrap(),
        NaiveDate::from_ymd_opt(2007, 1, 31).unwrap(),
    );
    write_ticker_csv(
        &data,
        "AAA",
        &synthetic::random_walk_bars(11, &dates, 30.0, 0.015),
    );
    write_ticker_csv(
        &data,
        "BBB",
        &synthetic::random_walk_bars(12, &dates, 60.0, 0.02),
    );

    let mut trees = Vec::new();
    for (run, par) in [(0, 1), (1, 8), (2, 1), (3, 8)] {
        let out = tmp.path().join(format!("out{run}"));
        let summary =
            pipeline::run_pipeline(&e2e_config(&data, &out, par), &StageOptions::default())
                .map_err(|e| e.to_string())?;
        ensure!(
            summary.failures.is_empty(),
            "failures {:?}",
            summary.failures
        );
        trees.push(tree(&out));
    }
    for t in &trees[1..] {
        ensure!(t.len() == trees[0].len(), "file sets differ");
        for ((pa, a), (pb, b)) in trees[0].iter().zip(t) {
            ensure!(pa == pb && a == b, "{} differs", pa.display());
        }
    }
    Ok(format!(
        "{} files byte-identical across 4 runs at parallelism 1 and 8",
        trees[0].len()
    ))
}

fn sine_sanity() -> Check {
    let (base, amp, period, phase) = (100.0, 5.0, 100.0, 0.37);
    let dates = synthetic::business_days(
        NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
        NaiveDate::from_ymd_opt(2007, 12, 31).unwrap(),
    );
    let raw = synthetic::sine_bars(&dates, base, amp, period, phase);
    let closes: Vec<f64> = raw.iter().map(|b| b.close).collect();

    // crests where (t + phase) / period = k + 1/4, troughs at k + 3/4
    let labeler = LabelerConfig::default();
    let half = labeler.window / 2;
    let labels = dataset::label_closes(&closes, &labeler).unwrap();
    let mut extrema = 0;
    for (quarter, want) in [(0.25, Label::Sell), (0.75, Label::Buy)] {
        let mut k = 0.0;
        loop {
            let t = ((k + quarter) * period - phase).round() as isize;
            k += 1.0;
            if t < half as isize {
                continue;
            }
            let t = t as usize;
            if t + half >= closes.len() {
                break;
            }
            ensure!(
                labels[t] == want,
                "bar {t} labeled {:?}, expected {want:?}",
                labels[t]
            );
            extrema += 1;
        }
    }
    let non_hold = labels.iter().filter(|l| **l != Label::Hold).count();
    ensure!(
        non_hold == extrema,
        "{non_hold} signals but {extrema} extrema"
    );

    let bars = market_data::adjust_bars(&raw).unwrap();
    let mid = dates[dates.len() / 2];
    let mut cfg = RunConfig::from_toml("tickers = [\"SINE\"]").unwrap();
    cfg.split.train_start = dates[0];
    cfg.split.train_end = mid;
    cfg.split.test_start = mid.succ_opt().unwrap();
    cfg.split.test_end = *dates.last().unwrap();
    let prepared = pipeline::prepare_samples(&bars, &cfg).map_err(|e| e.to_string())?;
    let (model, _) = MlpModel::init(&cfg.mlp)
        .unwrap()
        .train(&prepared.train_resampled)
        .unwrap();
    let predicted: Vec<Label> = prepared
        .test
        .iter()
        .map(|s| model.predict(&s.features).unwrap())
        .collect();
    let px = pipeline::price_points(&prepared.test);
    let ours = backtest::simulate(&px, &predicted, &cfg.trading).unwrap();
    let bah = backtest::buy_and_hold(&px, &cfg.trading).unwrap();
    ensure!(
        ours.final_capital > bah.final_capital,
        "model {:.2} vs buy and hold {:.2}",
        ours.final_capital,
        bah.final_capital
    );
    Ok(format!(
        "{extrema} extrema labeled; model {:.2} vs buy and hold {:.2} over {} trades",
        ours.final_capital,
        bah.final_capital,
        ours.trades.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("class score reproduction", class_score_reproduction),
        ("indicator bounds", indicator_bounds),
        ("indicator oracles", indicator_oracles),
        ("gradient check", gradient_check),
        ("learnability", learnability),
        ("backtest ledger oracle", ledger_oracle),
        ("zero-commission identity", zero_commission_identity),
        ("end-to-end determinism", end_to_end_determinism),
        ("sine-wave sanity", sine_sanity),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name:<26} {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<26} {why} [{secs:.2}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
